//! Subcommand implementations. Each returns the closing status line.

use std::fs;
use std::io::Write;
use std::sync::Arc;

use diffgame::feedback::{
    evaluate_cost, nash_deviation_test, pointwise_bellman_check, simulate_dde, tau_ladder_costs,
    CostReport, CuttingFunction, DelayTrajectory, DelayedFeedback, GradientSource, NashOptions,
    PlayerControl, SignMode, SimulationOptions,
};
use diffgame::game_model::{CostSign, CubicDrift, Drift, GameSpec, PolynomialDrift, RunningCost, SignConvention};
use diffgame::gradient_field::{
    check_admissible, hamiltonian_min_on_grid, integrate_p_field, reconstruct_u, reconstruct_values,
    GradientPair, PFieldOptions, PFieldSolution, Player, RhsKind,
};
use diffgame::linear_reduction::{
    fundamental_matrix, linear_game_closed_forms, reduce, uniform_grid, verify_reduction, LinearGameSpec,
    MatrixFn,
};
use diffgame::master::{solve_lambda_root, RootOptions};
use diffgame::stochastic::{ldp_check, NoiseConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{
    self, Convention, CostKind, CostSection, FieldKind, GradientKind, LawKind, LinearMode, LoadedScenario,
    McDrift, Mode, Scenario, Sign,
};
use crate::output::{svg_plot, write_csv, write_text_csv, OutputDir, RunRecord, Series, Status, Verdict};
use crate::{scenarios, CliError, Command, Common};

type Out<'a> = &'a mut dyn Write;

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {{
        let _ = writeln!($out, $($arg)*);
    }};
}

/// Relative tail bound above which a truncated cost counts as unconverged.
const TAIL_TOLERANCE: f64 = 1e-6;
/// Largest relative deviation from a published cost that counts as a match.
const TARGET_TOLERANCE: f64 = 0.15;
const SEMIGROUP_TOLERANCE: f64 = 1e-7;
const BELLMAN_TOLERANCE: f64 = 1e-6;

pub fn dispatch(command: Command, out: Out) -> Result<Status, CliError> {
    match command {
        Command::SolvePfield(c) => solve_pfield(&c, out),
        Command::Simulate(c) => simulate(&c, out),
        Command::Cost(c) => cost(&c, out),
        Command::Reproduce { id, common } => reproduce(id.as_deref(), &common, out),
        Command::NashCheck(c) => nash_check(&c, out),
        Command::LdpCheck(c) => ldp(&c, out),
        Command::ReduceLinear(c) => reduce_linear(&c, out),
        Command::AdmissibilityCheck(c) => admissibility(&c, out),
        Command::ListScenarios => {
            for (name, _) in scenarios::BUILTIN {
                say!(out, "{name}");
            }
            Ok(Status::new(Verdict::Pass).with("scenarios", scenarios::BUILTIN.len()))
        }
        Command::ShowScenario { name } => {
            let text = scenarios::find(&name).ok_or_else(|| CliError::Config(format!("no built-in scenario `{name}`")))?;
            let _ = out.write_all(text.as_bytes());
            Ok(Status::new(Verdict::Pass).with("scenario", name))
        }
    }
}

struct Context {
    scenario: Scenario,
    out: OutputDir,
    record: RunRecord,
}

fn prepare(command: &str, common: &Common, fallback: Option<&str>, out: Out) -> Result<Context, CliError> {
    let text = match (&common.config, &common.scenario) {
        (Some(path), _) => fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?,
        (None, Some(name)) => scenarios::find(name)
            .ok_or_else(|| CliError::Config(format!("no built-in scenario `{name}`")))?
            .to_string(),
        (None, None) => fallback
            .ok_or_else(|| CliError::Config("need --config <path> or --scenario <name>".into()))?
            .to_string(),
    };
    let LoadedScenario { mut scenario, effective } = config::load(&text, &common.set)?;
    let hash = LoadedScenario {
        scenario: scenario.clone(),
        effective,
    }
    .hash();
    // The output location is not part of the scenario identity.
    if let Some(dir) = &common.out {
        scenario.output.dir = dir.display().to_string();
    }
    let out_dir = OutputDir::create(std::path::Path::new(&scenario.output.dir))?;
    let record = RunRecord::new(command, &scenario.name, &hash);
    say!(out, "{command}: scenario {} ({})", scenario.name, &hash[..12]);
    Ok(Context {
        scenario,
        out: out_dir,
        record,
    })
}

fn convention(c: Convention) -> SignConvention {
    match c {
        Convention::Literal => SignConvention::Literal,
        Convention::Stabilized => SignConvention::Stabilized,
    }
}

fn sign_mode(m: Mode) -> SignMode {
    match m {
        Mode::PaperLiteral => SignMode::PaperLiteral,
        Mode::GradientDescent => SignMode::GradientDescent,
    }
}

fn mode_of(m: SignMode) -> Mode {
    match m {
        SignMode::PaperLiteral => Mode::PaperLiteral,
        SignMode::GradientDescent => Mode::GradientDescent,
    }
}

fn convention_of(c: SignConvention) -> Convention {
    match c {
        SignConvention::Literal => Convention::Literal,
        SignConvention::Stabilized => Convention::Stabilized,
    }
}

fn drift(s: &Scenario) -> Result<CubicDrift<f64>, CliError> {
    Ok(CubicDrift::new(s.game.gamma, s.game.kappa, convention(s.game.convention))?)
}

fn running_cost(c: &CostSection) -> Result<RunningCost<f64>, CliError> {
    Ok(match c.kind {
        CostKind::Zero => RunningCost::Zero,
        CostKind::Linear => RunningCost::Linear { k: c.k },
        CostKind::Power => {
            let sign = match c.sign {
                Sign::Plus => CostSign::Plus,
                Sign::Minus => CostSign::Minus,
            };
            RunningCost::power(c.a, c.exponent, sign)?
        }
    })
}

fn costs(s: &Scenario) -> Result<[RunningCost<f64>; 2], CliError> {
    Ok([running_cost(&s.cost1)?, running_cost(&s.cost2)?])
}

fn game(s: &Scenario) -> Result<GameSpec<f64>, CliError> {
    Ok(GameSpec::new(drift(s)?, costs(s)?, s.game.control_bound, s.game.y)?)
}

fn solve_field(s: &Scenario) -> Result<PFieldSolution<f64>, CliError> {
    let [c1, c2] = costs(s)?;
    let opts = PFieldOptions {
        step: s.pfield.step,
        kind: match s.pfield.kind {
            FieldKind::Reduced => RhsKind::Reduced,
            FieldKind::Full => RhsKind::Full,
        },
        p_max: s.pfield.p_max,
        delta_min: diffgame::gradient_field::DEFAULT_DELTA_MIN,
        jumps_at: s.pfield.jumps_at.clone(),
    };
    Ok(integrate_p_field(
        move |x| c1.derivative(x),
        move |x| c2.derivative(x),
        s.pfield.x0,
        GradientPair::new(s.pfield.p1, s.pfield.p2),
        (s.pfield.x_min, s.pfield.x_max),
        &opts,
    )?)
}

fn needs_field(s: &Scenario) -> bool {
    s.feedback.gradient1 == GradientKind::Field || s.feedback.gradient2 == GradientKind::Field
}

/// `(stored, value)` gradients of one player.
type GradientPairSources = (GradientSource<f64>, GradientSource<f64>);

/// `None` for a passive player.
fn gradients(
    s: &Scenario,
    player: Player,
    field: Option<&Arc<PFieldSolution<f64>>>,
) -> Result<Option<GradientPairSources>, CliError> {
    let fb = &s.feedback;
    let (kind, slope, intercept) = match player {
        Player::First => (fb.gradient1, fb.slope1, fb.intercept1),
        Player::Second => (fb.gradient2, fb.slope2, fb.intercept2),
    };
    Ok(match kind {
        GradientKind::Zero => None,
        GradientKind::Affine => {
            let g = GradientSource::Affine { slope, intercept };
            Some((g.clone(), g))
        }
        GradientKind::Quadratic => Some((
            GradientSource::Affine { slope: 1.0, intercept: 0.0 },
            GradientSource::Affine { slope: -1.0, intercept: 0.0 },
        )),
        GradientKind::Field => {
            let field = field.ok_or_else(|| CliError::Config("gradient field requested but not solved".into()))?;
            let g = GradientSource::Field {
                field: Arc::clone(field),
                player,
            };
            Some((g.clone(), g))
        }
    })
}

/// The gradient a player's law actually uses.
fn active_gradient(s: &Scenario, player: Player, field: Option<&Arc<PFieldSolution<f64>>>) -> Result<GradientSource<f64>, CliError> {
    Ok(match gradients(s, player, field)? {
        None => GradientSource::Zero,
        Some((stored, value)) => match s.feedback.sign_mode {
            Mode::PaperLiteral => stored,
            Mode::GradientDescent => value,
        },
    })
}

fn controls(s: &Scenario, field: Option<&Arc<PFieldSolution<f64>>>) -> Result<[PlayerControl<f64>; 2], CliError> {
    let d = drift(s)?;
    let build = |player| -> Result<PlayerControl<f64>, CliError> {
        let Some((stored, value)) = gradients(s, player, field)? else {
            return Ok(PlayerControl::Zero);
        };
        Ok(match s.feedback.law {
            LawKind::Delayed => PlayerControl::Delayed(DelayedFeedback {
                player,
                stored_gradient: stored,
                value_gradient: value,
                drift: d,
                cut: CuttingFunction::new(s.feedback.tau)?,
                sign_mode: sign_mode(s.feedback.sign_mode),
            }),
            LawKind::Instantaneous => PlayerControl::Instantaneous(match s.feedback.sign_mode {
                Mode::PaperLiteral => stored,
                Mode::GradientDescent => value,
            }),
        })
    };
    Ok([build(Player::First)?, build(Player::Second)?])
}

fn field_if_needed(s: &Scenario) -> Result<Option<Arc<PFieldSolution<f64>>>, CliError> {
    Ok(if needs_field(s) { Some(Arc::new(solve_field(s)?)) } else { None })
}

fn run_dde(s: &Scenario, controls: &[PlayerControl<f64>; 2], horizon: f64) -> Result<DelayTrajectory<f64>, CliError> {
    let opts = SimulationOptions {
        horizon,
        dt: s.solver.dt,
        record_every: s.solver.record_every,
    };
    Ok(simulate_dde(&game(s)?, [&controls[0], &controls[1]], &opts)?)
}

const TRAJECTORY_HEADER: [&str; 8] = [
    "t [time]",
    "x [state]",
    "x_delayed [state]",
    "alpha1 [control]",
    "alpha2 [control]",
    "theta [time]",
    "cost1 [discounted, cumulative]",
    "cost2 [discounted, cumulative]",
];

fn write_trajectory(out: &mut OutputDir, name: &str, traj: &DelayTrajectory<f64>) -> Result<(), CliError> {
    let path = out.file(name);
    write_csv(
        &path,
        &TRAJECTORY_HEADER,
        traj.samples.iter().map(|s| {
            vec![
                s.t,
                s.x,
                s.x_delayed,
                s.alpha[0],
                s.alpha[1],
                s.theta,
                s.cumulative_cost[0],
                s.cumulative_cost[1],
            ]
        }),
    )
}

fn plot_trajectory(out: &mut OutputDir, s: &Scenario, traj: &DelayTrajectory<f64>) -> Result<(), CliError> {
    if !s.output.svg {
        return Ok(());
    }
    let t: Vec<f64> = traj.samples.iter().map(|p| p.t).collect();
    let x: Vec<f64> = traj.samples.iter().map(|p| p.x).collect();
    let a1: Vec<f64> = traj.samples.iter().map(|p| p.alpha[0]).collect();
    let a2: Vec<f64> = traj.samples.iter().map(|p| p.alpha[1]).collect();
    out.write_text(
        "trajectory.svg",
        &svg_plot(&format!("{}: x(t)", s.name), "t", &[Series { label: "x", x: &t, y: &x }]),
    )?;
    out.write_text(
        "controls.svg",
        &svg_plot(
            &format!("{}: controls", s.name),
            "t",
            &[Series { label: "alpha1", x: &t, y: &a1 }, Series { label: "alpha2", x: &t, y: &a2 }],
        ),
    )?;
    if let Some(tau) = traj.tau {
        let cut = CuttingFunction::new(tau)?;
        let n = 1000;
        let ts: Vec<f64> = (0..=n).map(|k| 5.0 * tau * k as f64 / n as f64).collect();
        let th: Vec<f64> = ts.iter().map(|&t| cut.theta(t)).collect();
        out.write_text(
            "cutting.svg",
            &svg_plot(&format!("cutting function, tau = {tau}"), "t", &[Series { label: "theta", x: &ts, y: &th }]),
        )?;
    }
    Ok(())
}

fn solve_pfield(common: &Common, out: Out) -> Result<Status, CliError> {
    let mut ctx = prepare("solve-pfield", common, None, out)?;
    let s = &ctx.scenario;
    let c = costs(s)?;
    let field = solve_field(s)?;
    let values = reconstruct_values(&field, &c);
    let path = ctx.out.file("pfield.csv");
    write_csv(
        &path,
        &["x [state]", "p1 [du1/dx]", "p2 [du2/dx]", "u1 [value]", "u2 [value]"],
        field
            .x_grid
            .iter()
            .zip(&field.p_values)
            .zip(values.u1.iter().zip(&values.u2))
            .map(|((&x, p), (&u1, &u2))| vec![x, p.p1, p.p2, u1, u2]),
    )?;
    if s.output.svg {
        let x = &field.x_grid;
        let p1: Vec<f64> = field.p_values.iter().map(|p| p.p1).collect();
        let p2: Vec<f64> = field.p_values.iter().map(|p| p.p2).collect();
        ctx.out.write_text(
            "pfield.svg",
            &svg_plot(
                &format!("{}: value gradients", s.name),
                "x",
                &[Series { label: "p1", x, y: &p1 }, Series { label: "p2", x, y: &p2 }],
            ),
        )?;
        ctx.out.write_text(
            "values.svg",
            &svg_plot(
                &format!("{}: values", s.name),
                "x",
                &[Series { label: "u1", x, y: &values.u1 }, Series { label: "u2", x, y: &values.u2 }],
            ),
        )?;
    }
    let p0 = GradientPair::new(s.pfield.p1, s.pfield.p2);
    let max_dev = field
        .p_values
        .iter()
        .fold(0.0_f64, |m, p| m.max((p.p1 - p0.p1).abs()).max((p.p2 - p0.p2).abs()));
    let jumps = field.jump_points.len() + field.detect_discontinuities().len();
    let (lo, hi) = (field.x_grid[0], field.x_grid[field.x_grid.len() - 1]);
    let (first, last) = (field.p_values[0], field.p_values[field.p_values.len() - 1]);
    say!(out, "nodes {} on [{lo}, {hi}], step {}", field.x_grid.len(), field.step);
    say!(out, "p({lo}) = ({}, {}), p({hi}) = ({}, {})", first.p1, first.p2, last.p1, last.p2);
    say!(out, "largest departure from the initial pair: {max_dev:e}");
    if let Some(x) = field.truncated_below {
        say!(out, "field blew up below x = {x}");
    }
    if let Some(x) = field.truncated_above {
        say!(out, "field blew up above x = {x}");
    }
    say!(out, "jumps: {jumps}");
    ctx.record.push("nodes", field.x_grid.len());
    ctx.record.push("max_deviation_from_p0", max_dev);
    ctx.record.push("truncated", field.is_truncated());
    ctx.record.write(&mut ctx.out)?;
    let verdict = if field.is_truncated() { Verdict::Warn } else { Verdict::Pass };
    Ok(Status::new(verdict)
        .with("nodes", field.x_grid.len())
        .with("x_lo", lo)
        .with("x_hi", hi)
        .with("truncated", field.is_truncated())
        .with("jumps", jumps)
        .with("max_dev", format!("{max_dev:e}")))
}

fn simulate(common: &Common, out: Out) -> Result<Status, CliError> {
    let mut ctx = prepare("simulate", common, None, out)?;
    let s = ctx.scenario.clone();
    let field = field_if_needed(&s)?;
    let ctl = controls(&s, field.as_ref())?;
    let traj = run_dde(&s, &ctl, s.solver.horizon)?;
    write_trajectory(&mut ctx.out, "trajectory.csv", &traj)?;
    plot_trajectory(&mut ctx.out, &s, &traj)?;
    let last = *traj.samples.last().expect("trajectory has its initial node");
    let (xmin, xmax) = traj.samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.x), b.max(p.x)));
    say!(out, "convention {:?}, sign mode {}", s.game.convention, sign_mode(s.feedback.sign_mode).label());
    say!(out, "t = {}: x = {}, x range [{xmin}, {xmax}]", last.t, last.x);
    say!(out, "discounted cost over [0, {}]: u1 = {}, u2 = {}", last.t, last.cumulative_cost[0], last.cumulative_cost[1]);
    if traj.clamp_events > 0 {
        say!(out, "control bound active at {} nodes", traj.clamp_events);
    }
    ctx.record.push("final_t", last.t);
    ctx.record.push("final_x", last.x);
    ctx.record.push("u1", last.cumulative_cost[0]);
    ctx.record.push("u2", last.cumulative_cost[1]);
    ctx.record.push("exploded", traj.exploded);
    ctx.record.write(&mut ctx.out)?;
    let verdict = if traj.exploded {
        say!(out, "state left |x| <= 1e8 at t = {}; partial trajectory kept", last.t);
        Verdict::Fail
    } else {
        Verdict::Pass
    };
    Ok(Status::new(verdict)
        .with("final_t", last.t)
        .with("final_x", last.x)
        .with("u1", last.cumulative_cost[0])
        .with("u2", last.cumulative_cost[1])
        .with("clamp_events", traj.clamp_events)
        .with("exploded", traj.exploded))
}

fn tail_converged(r: &CostReport<f64>) -> bool {
    (0..2).all(|i| r.tail_bound[i] <= TAIL_TOLERANCE * (1.0 + r.costs[i].abs()))
}

/// Costs of a run, truncated where the trajectory ends if it exploded.
fn run_cost(s: &Scenario, ctl: &[PlayerControl<f64>; 2]) -> Result<(DelayTrajectory<f64>, CostReport<f64>), CliError> {
    let traj = run_dde(s, ctl, s.solver.t_max)?;
    let report = evaluate_cost(&traj, s.solver.t_max)?;
    Ok((traj, report))
}

fn cost(common: &Common, out: Out) -> Result<Status, CliError> {
    let mut ctx = prepare("cost", common, None, out)?;
    let s = ctx.scenario.clone();
    let field = field_if_needed(&s)?;
    let ctl = controls(&s, field.as_ref())?;
    let (traj, report) = run_cost(&s, &ctl)?;
    write_trajectory(&mut ctx.out, "trajectory.csv", &traj)?;
    plot_trajectory(&mut ctx.out, &s, &traj)?;
    let path = ctx.out.file("cost.csv");
    write_csv(
        &path,
        &["player", "cost [discounted]", "tail_bound [discounted]", "t_max [time]", "divergent"],
        (0..2).map(|i| {
            vec![
                (i + 1) as f64,
                report.costs[i],
                report.tail_bound[i],
                report.t_max,
                f64::from(u8::from(report.divergent)),
            ]
        }),
    )?;
    say!(out, "T_max = {}: u1 = {}, u2 = {}", report.t_max, report.costs[0], report.costs[1]);
    say!(out, "tail bounds: {:e}, {:e}", report.tail_bound[0], report.tail_bound[1]);
    let mut status = Status::new(Verdict::Pass);
    if report.divergent {
        say!(out, "trajectory exploded; the costs are partial");
        status.verdict = Verdict::Fail;
    } else if !tail_converged(&report) {
        say!(out, "tail bound is not small against the cost: truncation has not converged");
        status.verdict = Verdict::Warn;
    }

    if let Some(closed) = linear_closed_form(&s)? {
        let gap = (0..2).fold(0.0_f64, |m, i| m.max((report.costs[i] - closed.discounted_costs[i]).abs()));
        say!(
            out,
            "linear closed form: discounted ({}, {}), values ({}, {}), sign variant ({}, {}), gap {gap:e}",
            closed.discounted_costs[0],
            closed.discounted_costs[1],
            closed.values[0],
            closed.values[1],
            closed.values_sign_variant[0],
            closed.values_sign_variant[1]
        );
        status.push("analytic_gap", format!("{gap:e}"));
        ctx.record.push("analytic_gap", gap);
    }

    if !s.solver.tau_ladder.is_empty() {
        if s.feedback.law != LawKind::Delayed {
            return Err(CliError::Config("solver.tau_ladder needs feedback.law = \"delayed\"".into()));
        }
        let g = game(&s)?;
        let reports = tau_ladder_costs(
            &g,
            |tau| {
                let mut t = s.clone();
                t.feedback.tau = tau;
                controls(&t, field.as_ref()).map_err(|e| match e {
                    CliError::Core(c) => c,
                    other => diffgame::Error::InvalidParameter(other.to_string()),
                })
            },
            &s.solver.tau_ladder,
            s.solver.steps_per_tau,
            s.solver.t_max,
        )?;
        let path = ctx.out.file("ladder.csv");
        write_csv(
            &path,
            &["tau [time]", "u1 [discounted]", "u2 [discounted]", "divergent"],
            reports
                .iter()
                .zip(&s.solver.tau_ladder)
                .map(|(r, &tau)| vec![tau, r.costs[0], r.costs[1], f64::from(u8::from(r.divergent))]),
        )?;
        for (r, tau) in reports.iter().zip(&s.solver.tau_ladder) {
            say!(out, "tau = {tau:e}: u1 = {}, u2 = {}", r.costs[0], r.costs[1]);
        }
        let diffs: Vec<f64> = reports.windows(2).map(|w| (w[1].costs[0] - w[0].costs[0]).abs()).collect();
        let contracts = diffs.windows(2).all(|d| d[1] < d[0]) && reports.iter().all(|r| !r.divergent);
        say!(out, "ladder differences {diffs:?}: contracting = {contracts}");
        status.push("ladder_contracts", contracts);
        ctx.record.push("ladder_contracts", contracts);
        if !contracts && status.verdict == Verdict::Pass {
            status.verdict = Verdict::Warn;
        }
    }

    ctx.record.push("u1", report.costs[0]);
    ctx.record.push("u2", report.costs[1]);
    ctx.record.push("divergent", report.divergent);
    ctx.record.write(&mut ctx.out)?;
    let mut head = Status::new(status.verdict)
        .with("u1", report.costs[0])
        .with("u2", report.costs[1])
        .with("tail1", format!("{:e}", report.tail_bound[0]))
        .with("tail2", format!("{:e}", report.tail_bound[1]))
        .with("divergent", report.divergent);
    head.fields.extend(status.fields);
    Ok(head)
}

/// Closed forms apply to linear costs under constant instantaneous controls.
fn linear_closed_form(s: &Scenario) -> Result<Option<diffgame::linear_reduction::LinearClosedForms<f64>>, CliError> {
    let fb = &s.feedback;
    let constant = |g: GradientKind, slope: f64| g == GradientKind::Affine && slope == 0.0;
    let applies = s.cost1.kind == CostKind::Linear
        && s.cost2.kind == CostKind::Linear
        && fb.law == LawKind::Instantaneous
        && constant(fb.gradient1, fb.slope1)
        && constant(fb.gradient2, fb.slope2)
        && fb.intercept1 == s.cost1.k
        && fb.intercept2 == s.cost2.k
        && s.game.gamma == 0.0
        && s.game.kappa == 0.0;
    if !applies {
        return Ok(None);
    }
    Ok(Some(linear_game_closed_forms(s.cost1.k, s.cost2.k, s.game.y)?))
}

struct ComboRow {
    convention: Convention,
    mode: Mode,
    report: CostReport<f64>,
    final_t: f64,
    final_x: f64,
    shape: String,
    deviation: Option<f64>,
    /// Share of nodes whose delayed state lies outside the solved field.
    outside_field: Option<f64>,
}

fn describe_shape(traj: &DelayTrajectory<f64>) -> String {
    let xs: Vec<f64> = traj.samples.iter().map(|p| p.x).collect();
    let last = *traj.samples.last().expect("trajectory has its initial node");
    if traj.exploded {
        return format!("explodes-near-t={:.3}", last.t);
    }
    let rising = xs.windows(2).all(|w| w[1] >= w[0]);
    let falling = xs.windows(2).all(|w| w[1] <= w[0]);
    let trend = match (rising, falling) {
        (true, true) => "constant",
        (true, false) => "increasing",
        (false, true) => "decreasing",
        _ => "non-monotone",
    };
    // Settled if the last unit of time moves the state by less than 1e-6.
    let window = traj.samples.iter().rev().take_while(|p| p.t >= last.t - 1.0);
    let spread = window.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.x), b.max(p.x)));
    if spread.1 - spread.0 < 1e-6 {
        format!("{trend},settles-at-x={:.6}", last.x)
    } else {
        format!("{trend},still-moving")
    }
}

fn outside_share(field: &PFieldSolution<f64>, traj: &DelayTrajectory<f64>) -> f64 {
    let (lo, hi) = (field.x_grid[0], field.x_grid[field.x_grid.len() - 1]);
    let n = traj.samples.iter().filter(|p| !(lo..=hi).contains(&p.x_delayed)).count();
    n as f64 / traj.samples.len() as f64
}

fn reproduce(id: Option<&str>, common: &Common, out: Out) -> Result<Status, CliError> {
    let fallback = match id {
        Some(id) => Some(scenarios::example(id).ok_or_else(|| {
            CliError::Config(format!("unknown example `{id}`; known: {}", scenarios::EXAMPLE_IDS.join(", ")))
        })?),
        None => None,
    };
    let mut ctx = prepare("reproduce", common, fallback, out)?;
    let base = ctx.scenario.clone();
    let target = base.target_u1;
    let u2_identity = base.cost2.kind == CostKind::Zero && base.feedback.gradient2 == GradientKind::Zero;
    let field = field_if_needed(&base)?;
    if let Some(f) = &field {
        say!(out, "gradient field on [{}, {}], truncated = {}", f.x_grid[0], f.x_grid[f.x_grid.len() - 1], f.is_truncated());
    }

    let mut rows = Vec::new();
    let mut plotted: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for conv in SignConvention::ALL {
        for mode in SignMode::ALL {
            let mut s = base.clone();
            s.game.convention = convention_of(conv);
            s.feedback.sign_mode = mode_of(mode);
            let ctl = controls(&s, field.as_ref())?;
            let (traj, report) = run_cost(&s, &ctl)?;
            let tag = format!("{}_{}", conv.label(), mode.label());
            write_trajectory(&mut ctx.out, &format!("trajectory_{tag}.csv"), &traj)?;
            let last = *traj.samples.last().expect("trajectory has its initial node");
            let deviation = match target {
                Some(t) if !report.divergent => Some((report.costs[0] - t).abs() / t.abs()),
                _ => None,
            };
            plotted.push((
                tag,
                traj.samples.iter().map(|p| p.t).collect(),
                traj.samples.iter().map(|p| p.x).collect(),
            ));
            rows.push(ComboRow {
                convention: s.game.convention,
                mode: s.feedback.sign_mode,
                report,
                final_t: last.t,
                final_x: last.x,
                shape: describe_shape(&traj),
                outside_field: field.as_ref().map(|f| outside_share(f, &traj)),
                deviation,
            });
        }
    }

    let best = rows
        .iter()
        .enumerate()
        .filter_map(|(k, r)| r.deviation.map(|d| (k, d)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    let label = |r: &ComboRow| format!("{}:{}", convention(r.convention).label(), sign_mode(r.mode).label());

    say!(out, "{:<36} {:>24} {:>24} {:>10} {:>12}  shape", "combination", "u1", "u2", "divergent", "deviation");
    for (k, r) in rows.iter().enumerate() {
        let dev = r.deviation.map_or("-".to_string(), |d| format!("{:.2}%", 100.0 * d));
        let flag = if best.map(|b| b.0) == Some(k) { "  <- closest" } else { "" };
        say!(
            out,
            "{:<36} {:>24} {:>24} {:>10} {:>12}  {}{flag}",
            label(r),
            r.report.costs[0],
            r.report.costs[1],
            r.report.divergent,
            dev,
            r.shape
        );
    }
    match target {
        Some(t) => say!(out, "published u1 = {t}"),
        None => say!(out, "no published cost for this example; shapes only"),
    }
    let u2_zero = rows.iter().all(|r| r.report.costs[1] == 0.0);
    if u2_identity {
        say!(out, "u2 = 0 exactly in every combination: {u2_zero}");
    }
    if field.is_some() {
        say!(out, "stored and value gradients are the same field, so both sign modes coincide");
        for r in rows.iter().filter(|r| !r.report.divergent) {
            if let Some(f) = r.outside_field.filter(|&f| f > 0.0) {
                say!(
                    out,
                    "{}: delayed state outside the solved field at {:.1}% of nodes (field held constant there)",
                    label(r),
                    100.0 * f
                );
            }
        }
    }

    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                convention(r.convention).label().to_string(),
                sign_mode(r.mode).label().to_string(),
                format!("{:.16e}", r.report.costs[0]),
                format!("{:.16e}", r.report.costs[1]),
                r.report.divergent.to_string(),
                format!("{:.16e}", r.report.tail_bound[0]),
                format!("{:.16e}", r.final_t),
                format!("{:.16e}", r.final_x),
                r.deviation.map_or(String::new(), |d| format!("{d:.16e}")),
                r.shape.clone(),
                r.outside_field.map_or(String::new(), |f| format!("{f:.16e}")),
            ]
        })
        .collect();
    let path = ctx.out.file("reproduce.csv");
    write_text_csv(
        &path,
        &[
            "convention",
            "sign_mode",
            "u1 [discounted]",
            "u2 [discounted]",
            "divergent",
            "tail_bound1 [discounted]",
            "final_t [time]",
            "final_x [state]",
            "relative_deviation",
            "shape",
            "outside_field_share",
        ],
        &table,
    )?;
    if base.output.svg {
        let series: Vec<Series> = plotted
            .iter()
            .map(|(tag, t, x)| Series { label: tag, x: t, y: x })
            .collect();
        ctx.out.write_text("reproduce.svg", &svg_plot(&format!("{}: x(t) per reading", base.name), "t", &series))?;
    }

    let finite = rows.iter().filter(|r| !r.report.divergent).count();
    let outside = rows
        .iter()
        .filter(|r| !r.report.divergent)
        .filter_map(|r| r.outside_field)
        .fold(0.0_f64, f64::max);
    let mut status = Status::new(Verdict::Pass)
        .with("example", &base.name)
        .with("finite_combinations", finite);
    if finite == 0 {
        say!(out, "every combination exploded; reported as a documented failure");
        status.verdict = Verdict::Warn;
        status.push("all_exploded", true);
    }
    if field.is_some() {
        status.push("outside_field", format!("{outside:.4}"));
        if outside > 0.0 {
            status.verdict = Verdict::Warn;
        }
    }
    if let Some(t) = target {
        status.push("target_u1", t);
        match best {
            Some((k, d)) => {
                status.push("closest", label(&rows[k]));
                status.push("closest_u1", rows[k].report.costs[0]);
                status.push("deviation", format!("{d:.6}"));
                if d > TARGET_TOLERANCE {
                    say!(out, "no combination within {}% of the published value; discrepancy documented above", 100.0 * TARGET_TOLERANCE);
                    status.verdict = Verdict::Warn;
                }
            }
            None => status.verdict = Verdict::Warn,
        }
    }
    if u2_identity {
        status.push("u2_zero", u2_zero);
        if !u2_zero {
            status.verdict = Verdict::Fail;
        }
    }
    for r in &rows {
        ctx.record.push(&format!("u1_{}", label(r)), r.report.costs[0]);
        ctx.record.push(&format!("u2_{}", label(r)), r.report.costs[1]);
    }
    ctx.record.write(&mut ctx.out)?;
    Ok(status)
}

fn nash_check(common: &Common, out: Out) -> Result<Status, CliError> {
    let mut ctx = prepare("nash-check", common, None, out)?;
    let s = ctx.scenario.clone();
    let field = field_if_needed(&s)?;
    let ctl = controls(&s, field.as_ref())?;
    let g = game(&s)?;
    let n = &s.nash;
    let opts = NashOptions {
        dt: n.dt,
        t_max: n.t_max,
        n_perturbations: n.n_perturbations,
        seed: n.seed,
        perturbation_horizon: n.perturbation_horizon,
        knots: n.knots,
        scales: n.scales.clone(),
        tolerance: n.tolerance,
    };
    let v = nash_deviation_test(&g, [&ctl[0], &ctl[1]], &opts)?;
    let sim = SimulationOptions {
        horizon: n.t_max,
        dt: n.dt,
        record_every: 1,
    };
    let traj = simulate_dde(&g, [&ctl[0], &ctl[1]], &sim)?;
    let g1 = active_gradient(&s, Player::First, field.as_ref())?;
    let g2 = active_gradient(&s, Player::Second, field.as_ref())?;
    let bellman = pointwise_bellman_check(&traj, [&g1, &g2], &g.costs, n.bellman_times, n.bellman_alphas, n.seed)?;

    let path = ctx.out.file("nash.csv");
    write_csv(
        &path,
        &["player", "equilibrium_cost [discounted]", "worst_improvement [discounted]", "exploded_runs", "runs"],
        (0..2).map(|i| {
            vec![
                (i + 1) as f64,
                v.equilibrium_costs[i],
                v.worst_improvement[i],
                v.exploded_runs[i] as f64,
                v.runs as f64,
            ]
        }),
    )?;
    for i in 0..2 {
        say!(
            out,
            "player {}: equilibrium cost {}, worst change under deviation {:e} ({} runs, {} exploded)",
            i + 1,
            v.equilibrium_costs[i],
            v.worst_improvement[i],
            v.runs,
            v.exploded_runs[i]
        );
    }
    say!(out, "Hamiltonian minimality: {} checks, smallest margin {:e}", bellman.checks, bellman.min_margin);
    let bellman_ok = bellman.min_margin >= -BELLMAN_TOLERANCE;
    ctx.record.push("worst_improvement1", v.worst_improvement[0]);
    ctx.record.push("worst_improvement2", v.worst_improvement[1]);
    ctx.record.push("bellman_margin", bellman.min_margin);
    ctx.record.push("seed", n.seed);
    ctx.record.write(&mut ctx.out)?;
    let verdict = if v.passed && bellman_ok { Verdict::Pass } else { Verdict::Fail };
    Ok(Status::new(verdict)
        .with("u1", v.equilibrium_costs[0])
        .with("u2", v.equilibrium_costs[1])
        .with("worst1", format!("{:e}", v.worst_improvement[0]))
        .with("worst2", format!("{:e}", v.worst_improvement[1]))
        .with("runs", v.runs)
        .with("bellman_margin", format!("{:e}", bellman.min_margin)))
}

fn ldp(common: &Common, out: Out) -> Result<Status, CliError> {
    let ctx = prepare("ldp-check", common, None, out)?;
    let s = ctx.scenario.clone();
    match s.mc.drift {
        McDrift::Zero => ldp_with(ctx, &PolynomialDrift::zero(1)?, out),
        McDrift::Polynomial => {
            if s.mc.coefficients.is_empty() {
                return Err(CliError::Config("mc.coefficients is empty".into()));
            }
            ldp_with(ctx, &PolynomialDrift::univariate(&s.mc.coefficients)?, out)
        }
        McDrift::Game => ldp_with(ctx, &drift(&s)?, out),
    }
}

fn ldp_with<D: Drift<f64>>(mut ctx: Context, d: &D, out: Out) -> Result<Status, CliError> {
    let mc = ctx.scenario.mc.clone();
    let (lambda, source) = match mc.lambda {
        Some(l) => (l, "given"),
        None => {
            let root = solve_lambda_root(d, &[mc.x0], mc.t, &[mc.x0], 1e-12, &RootOptions::default())?;
            say!(out, "master root lambda = {} ({} iterations, residual {:e})", root.lambda[0], root.iterations, root.residual);
            (root.lambda[0], "root")
        }
    };
    let template = NoiseConfig {
        epsilon: mc.epsilons.first().copied().unwrap_or(0.0),
        dt: mc.dt,
        n_paths: mc.n_paths,
        seed: mc.seed,
        record_every: 1,
    };
    let v = ldp_check(d, &[mc.x0], mc.t, &[lambda], &mc.epsilons, &template)?;
    say!(out, "|U(t, lambda)|^2 = {:e} at t = {}, lambda = {lambda} ({source})", v.u_norm_sq, mc.t);
    say!(out, "{:>12} {:>24} {:>24} {:>14} {:>9}", "epsilon", "mean_sq", "std_err", "mean_sq/eps", "exploded");
    for ((m, &eps), &x) in v.moments.iter().zip(&v.epsilons).zip(&v.exploded) {
        say!(out, "{eps:>12e} {:>24} {:>24} {:>14.6} {x:>9}", m.mean_sq, m.std_err, m.mean_sq / eps);
    }
    let path = ctx.out.file("ldp.csv");
    write_csv(
        &path,
        &["epsilon", "mean_sq [state^2]", "std_err [state^2]", "paths", "exploded"],
        v.moments
            .iter()
            .zip(&v.epsilons)
            .zip(&v.exploded)
            .map(|((m, &eps), &x)| vec![eps, m.mean_sq, m.std_err, m.n_paths as f64, x as f64]),
    )?;
    let root_case = v.root_case_vanishes.map_or("n/a".to_string(), |b| b.to_string());
    say!(out, "monotone trend: {}, vanishing at the root: {root_case}", v.monotone_trend);
    ctx.record.push("lambda", lambda);
    ctx.record.push("u_norm_sq", v.u_norm_sq);
    ctx.record.push("seed", mc.seed);
    ctx.record.push("monotone_trend", v.monotone_trend);
    ctx.record.push("root_case_vanishes", &root_case);
    ctx.record.write(&mut ctx.out)?;
    let verdict = if v.root_case_vanishes == Some(false) {
        Verdict::Fail
    } else if !v.monotone_trend {
        Verdict::Warn
    } else {
        Verdict::Pass
    };
    Ok(Status::new(verdict)
        .with("lambda", lambda)
        .with("u_norm_sq", format!("{:e}", v.u_norm_sq))
        .with("monotone", v.monotone_trend)
        .with("root_case", root_case)
        .with("fitted_slope", v.fitted_slope))
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CliError> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(CliError::Config(format!("linear.{name} must be a non-empty rectangular array")));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn linear_games(s: &Scenario) -> Result<Vec<LinearGameSpec<f64>>, CliError> {
    let l = &s.linear;
    match l.mode {
        LinearMode::Explicit => {
            let a = matrix("a", &l.a)?;
            let game = LinearGameSpec::new(
                MatrixFn::Constant(a),
                MatrixFn::Constant(matrix("b", &l.b)?),
                MatrixFn::Constant(matrix("c", &l.c)?),
                matrix("m", &l.m)?,
                DVector::from_vec(l.x0.clone()),
                0.0,
                l.t_final,
            )?;
            Ok(vec![game])
        }
        LinearMode::Random => {
            if l.dim == 0 || l.controls_u == 0 || l.controls_v == 0 || l.games == 0 {
                return Err(CliError::Config("linear.dim, controls and games must be positive".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(l.seed);
            let mut entries = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
            (0..l.games)
                .map(|_| {
                    let a = entries(l.dim, l.dim);
                    let b = entries(l.dim, l.controls_u);
                    let c = entries(l.dim, l.controls_v);
                    let x0 = entries(l.dim, 1).column(0).into_owned();
                    Ok(LinearGameSpec::new(
                        MatrixFn::Constant(a),
                        MatrixFn::Constant(b),
                        MatrixFn::Constant(c),
                        DMatrix::identity(l.dim, l.dim),
                        x0,
                        0.0,
                        l.t_final,
                    )?)
                })
                .collect()
        }
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

fn reduce_linear(common: &Common, out: Out) -> Result<Status, CliError> {
    let mut ctx = prepare("reduce-linear", common, None, out)?;
    let s = ctx.scenario.clone();
    let l = &s.linear;
    let n_steps = (l.t_final / l.dt).round().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(l.seed ^ 0x5E41);
    let mut rows = Vec::new();
    let mut warnings = 0;
    for (k, game) in linear_games(&s)?.iter().enumerate() {
        let grid = uniform_grid(0.0, l.t_final, 2 * n_steps);
        let reduced = reduce(game, &grid)?;
        let (mu, mv) = (game.b.shape().1, game.c.shape().1);
        let report = verify_reduction(
            game,
            &reduced,
            |t| DVector::from_fn(mu, |i, _| ((i + 1) as f64 * t).sin()),
            |t| DVector::from_fn(mv, |i, _| ((i + 1) as f64 * t).cos()),
            l.dt,
        )?;
        let mut semigroup = 0.0_f64;
        for _ in 0..3 {
            let i = rng.random_range(0..grid.len() - 1);
            let j = rng.random_range(i + 1..grid.len());
            let hop = fundamental_matrix(&game.a, grid[i], grid[j], l.dt)?;
            semigroup = semigroup.max(max_abs(&(&reduced.cauchy.phi[j] * hop - &reduced.cauchy.phi[i])));
        }
        if let Some(w) = &reduced.cauchy.warning {
            say!(out, "game {k}: {w}");
            warnings += 1;
        }
        rows.push(vec![
            k as f64,
            report.terminal_gap,
            report.path_gap,
            semigroup,
            reduced.cauchy.spot_check_error,
            reduced.cauchy.max_condition,
        ]);
    }
    let path = ctx.out.file("reduction.csv");
    write_csv(
        &path,
        &["game", "terminal_gap", "path_gap", "semigroup_error", "spot_check_error", "condition_estimate"],
        rows.clone(),
    )?;
    let worst = |c: usize| rows.iter().fold(0.0_f64, |m, r| m.max(r[c]));
    let (terminal, path_gap, semigroup) = (worst(1), worst(2), worst(3));
    say!(out, "{} game(s), dt = {}, T = {}", rows.len(), l.dt, l.t_final);
    say!(out, "worst terminal gap {terminal:e}, path gap {path_gap:e}, semigroup error {semigroup:e}");
    ctx.record.push("games", rows.len());
    ctx.record.push("terminal_gap", terminal);
    ctx.record.push("path_gap", path_gap);
    ctx.record.push("semigroup_error", semigroup);
    ctx.record.push("seed", l.seed);
    ctx.record.write(&mut ctx.out)?;
    let verdict = if terminal > l.tolerance || path_gap > l.tolerance || semigroup > SEMIGROUP_TOLERANCE {
        Verdict::Fail
    } else if warnings > 0 {
        Verdict::Warn
    } else {
        Verdict::Pass
    };
    Ok(Status::new(verdict)
        .with("games", rows.len())
        .with("terminal_gap", format!("{terminal:e}"))
        .with("path_gap", format!("{path_gap:e}"))
        .with("semigroup", format!("{semigroup:e}"))
        .with("warnings", warnings))
}

/// Widest Hamiltonian search window; wider gradients search around `-p`.
const ALPHA_WINDOW: f64 = 100.0;

fn admissibility(common: &Common, out: Out) -> Result<Status, CliError> {
    let mut ctx = prepare("admissibility-check", common, None, out)?;
    let s = ctx.scenario.clone();
    let c = costs(&s)?;
    let field = solve_field(&s)?;
    let values = reconstruct_values(&field, &c);
    let report = check_admissible(&values, &field, &c)?;

    let a = &s.admissibility;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (lo, hi) = (field.x_grid[0], field.x_grid[field.x_grid.len() - 1]);
    let mut hamiltonian_gap = 0.0_f64;
    for _ in 0..a.states {
        let x = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let p = field.interpolate(x);
        let (h1, h2) = (c[0].value(x), c[1].value(x));
        let (u1, u2) = reconstruct_u(p, h1, h2);
        for (pi, pj, hi_, ui) in [(p.p1, p.p2, h1, u1), (p.p2, p.p1, h2, u2)] {
            let r = pi.abs() + 1.0;
            let range = if r <= ALPHA_WINDOW { (-r, r) } else { (-pi - ALPHA_WINDOW, -pi + ALPHA_WINDOW) };
            let (m, _) = hamiltonian_min_on_grid(pi, pj, hi_, range, a.alpha_step);
            hamiltonian_gap = hamiltonian_gap.max((m - ui).abs());
        }
    }

    // Centred differences of the values against the field: small only when
    // the field is the exact derivative of the stationary system.
    let x = &values.x_grid;
    let gradient_gap = (1..x.len().saturating_sub(1)).fold(0.0_f64, |m, k| {
        let h = x[k + 1] - x[k - 1];
        let p = field.p_values[k];
        let d1 = (values.u1[k + 1] - values.u1[k - 1]) / h;
        let d2 = (values.u2[k + 1] - values.u2[k - 1]) / h;
        m.max((d1 - p.p1).abs() / (1.0 + p.p1.abs())).max((d2 - p.p2).abs() / (1.0 + p.p2.abs()))
    });

    let path = ctx.out.file("values.csv");
    write_csv(
        &path,
        &["x [state]", "p1 [du1/dx]", "p2 [du2/dx]", "u1 [value]", "u2 [value]"],
        x.iter()
            .zip(&field.p_values)
            .zip(values.u1.iter().zip(&values.u2))
            .map(|((&x, p), (&u1, &u2))| vec![x, p.p1, p.p2, u1, u2]),
    )?;
    say!(out, "grid [{lo}, {hi}], {} nodes, truncated = {}", x.len(), field.is_truncated());
    say!(
        out,
        "growth: C = {}, inner ratio {}, outer ratio {}, sublinear = {}",
        report.growth_constant,
        report.inner_ratio,
        report.outer_ratio,
        report.sublinear
    );
    say!(out, "pointwise residual {:e}", report.residual_max);
    say!(out, "jumps checked {}, one-sided conditions hold = {}", report.jumps_checked, report.jump_ok);
    say!(out, "Hamiltonian grid minimum vs values at {} states: {hamiltonian_gap:e}", a.states);
    say!(out, "difference quotient of u against p (informational): {gradient_gap:e}");
    ctx.record.push("growth_constant", report.growth_constant);
    ctx.record.push("residual", report.residual_max);
    ctx.record.push("hamiltonian_gap", hamiltonian_gap);
    ctx.record.push("seed", a.seed);
    ctx.record.write(&mut ctx.out)?;
    let ok = report.sublinear
        && report.jump_ok
        && report.residual_max <= a.residual_tolerance
        && hamiltonian_gap <= a.hamiltonian_tolerance;
    Ok(Status::new(if ok { Verdict::Pass } else { Verdict::Fail })
        .with("sublinear", report.sublinear)
        .with("growth_constant", report.growth_constant)
        .with("jump_ok", report.jump_ok)
        .with("residual", format!("{:e}", report.residual_max))
        .with("hamiltonian_gap", format!("{hamiltonian_gap:e}"))
        .with("gradient_gap", format!("{gradient_gap:e}")))
}
