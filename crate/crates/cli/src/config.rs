//! Scenario files: TOML sections of `key = value` pairs.

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Published cost of the first player, when the source tabulates one.
    pub target_u1: Option<f64>,
    pub game: GameSection,
    pub cost1: CostSection,
    pub cost2: CostSection,
    pub feedback: FeedbackSection,
    pub pfield: PFieldSection,
    pub solver: SolverSection,
    pub output: OutputSection,
    pub mc: McSection,
    pub nash: NashSection,
    pub linear: LinearSection,
    pub admissibility: AdmissibilitySection,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            target_u1: None,
            game: GameSection::default(),
            cost1: CostSection::default(),
            cost2: CostSection::default(),
            feedback: FeedbackSection::default(),
            pfield: PFieldSection::default(),
            solver: SolverSection::default(),
            output: OutputSection::default(),
            mc: McSection::default(),
            nash: NashSection::default(),
            linear: LinearSection::default(),
            admissibility: AdmissibilitySection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Convention {
    #[default]
    Literal,
    Stabilized,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GameSection {
    pub gamma: f64,
    pub kappa: f64,
    pub convention: Convention,
    pub y: f64,
    pub control_bound: Option<f64>,
}

impl Default for GameSection {
    fn default() -> Self {
        Self {
            gamma: 0.0,
            kappa: 0.0,
            convention: Convention::Literal,
            y: 0.0,
            control_bound: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CostKind {
    #[default]
    Zero,
    Linear,
    Power,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Sign {
    #[default]
    Plus,
    Minus,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    pub kind: CostKind,
    pub k: f64,
    pub a: f64,
    pub exponent: u32,
    pub sign: Sign,
}

impl Default for CostSection {
    fn default() -> Self {
        Self {
            kind: CostKind::Zero,
            k: 0.0,
            a: 0.0,
            exponent: 2,
            sign: Sign::Plus,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LawKind {
    #[default]
    Delayed,
    Instantaneous,
}

/// Where a player's gradient comes from.
#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GradientKind {
    #[default]
    Zero,
    /// `slope x + intercept`
    Affine,
    /// Stored gradient `x`, value gradient `-x`: the quadratic-cost game.
    Quadratic,
    /// Interpolant of the solved gradient field.
    Field,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    PaperLiteral,
    GradientDescent,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackSection {
    pub tau: f64,
    pub law: LawKind,
    pub sign_mode: Mode,
    pub gradient1: GradientKind,
    pub gradient2: GradientKind,
    pub slope1: f64,
    pub intercept1: f64,
    pub slope2: f64,
    pub intercept2: f64,
}

impl Default for FeedbackSection {
    fn default() -> Self {
        Self {
            tau: 0.01,
            law: LawKind::Delayed,
            sign_mode: Mode::PaperLiteral,
            gradient1: GradientKind::Zero,
            gradient2: GradientKind::Zero,
            slope1: 0.0,
            intercept1: 0.0,
            slope2: 0.0,
            intercept2: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    #[default]
    Reduced,
    Full,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PFieldSection {
    pub x0: f64,
    pub p1: f64,
    pub p2: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub step: f64,
    pub kind: FieldKind,
    pub p_max: f64,
    pub jumps_at: Vec<f64>,
}

impl Default for PFieldSection {
    fn default() -> Self {
        Self {
            x0: 0.0,
            p1: 0.0,
            p2: 0.0,
            x_min: -1.0,
            x_max: 1.0,
            step: 1e-3,
            kind: FieldKind::Reduced,
            p_max: 1e8,
            jumps_at: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub dt: f64,
    /// Simulation length for `simulate`.
    pub horizon: f64,
    /// Truncation point of the discounted cost.
    pub t_max: f64,
    /// Rows kept in trajectory CSVs: every `record_every`-th node.
    pub record_every: usize,
    /// Optional delay ladder evaluated by `cost`.
    pub tau_ladder: Vec<f64>,
    pub steps_per_tau: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 10.0,
            t_max: 30.0,
            record_every: 1,
            tau_ladder: Vec::new(),
            steps_per_tau: 1,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    pub svg: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            svg: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum McDrift {
    /// `b = 0`
    #[default]
    Zero,
    /// Univariate polynomial with `coefficients[k] x^k`.
    Polynomial,
    /// The cubic drift of `[game]`.
    Game,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    pub drift: McDrift,
    pub coefficients: Vec<f64>,
    pub x0: f64,
    pub t: f64,
    /// Reference point; `None` solves the master equation for its root.
    pub lambda: Option<f64>,
    pub epsilons: Vec<f64>,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            drift: McDrift::Zero,
            coefficients: Vec::new(),
            x0: 0.0,
            t: 1.0,
            lambda: None,
            epsilons: vec![1e-2, 1e-3, 1e-4],
            n_paths: 10_000,
            dt: 1e-2,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct NashSection {
    pub n_perturbations: usize,
    pub seed: u64,
    pub dt: f64,
    pub t_max: f64,
    pub perturbation_horizon: f64,
    pub knots: usize,
    pub scales: Vec<f64>,
    pub tolerance: f64,
    pub bellman_times: usize,
    pub bellman_alphas: usize,
}

impl Default for NashSection {
    fn default() -> Self {
        Self {
            n_perturbations: 50,
            seed: 1,
            dt: 1e-3,
            t_max: 30.0,
            perturbation_horizon: 10.0,
            knots: 20,
            scales: vec![0.01, 0.1, 1.0],
            tolerance: 1e-3,
            bellman_times: 100,
            bellman_alphas: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LinearMode {
    /// `games` random constant-coefficient systems.
    #[default]
    Random,
    /// Matrices given in the section.
    Explicit,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LinearSection {
    pub mode: LinearMode,
    pub dim: usize,
    pub controls_u: usize,
    pub controls_v: usize,
    pub games: usize,
    pub seed: u64,
    pub t_final: f64,
    pub dt: f64,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub m: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    pub tolerance: f64,
}

impl Default for LinearSection {
    fn default() -> Self {
        Self {
            mode: LinearMode::Random,
            dim: 3,
            controls_u: 3,
            controls_v: 3,
            games: 20,
            seed: 1,
            t_final: 1.0,
            dt: 1e-3,
            a: Vec::new(),
            b: Vec::new(),
            c: Vec::new(),
            m: Vec::new(),
            x0: Vec::new(),
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AdmissibilitySection {
    pub states: usize,
    pub seed: u64,
    pub alpha_step: f64,
    pub residual_tolerance: f64,
    pub hamiltonian_tolerance: f64,
}

impl Default for AdmissibilitySection {
    fn default() -> Self {
        Self {
            states: 200,
            seed: 1,
            alpha_step: 1e-3,
            residual_tolerance: 1e-6,
            hamiltonian_tolerance: 1e-5,
        }
    }
}

/// Parsed scenario plus the text it was built from.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    /// Effective configuration after overrides, used for hashing.
    pub effective: String,
}

impl LoadedScenario {
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.effective.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses `text`, applies `section.key=value` overrides and validates.
pub fn load(text: &str, overrides: &[String]) -> Result<LoadedScenario, CliError> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let effective = toml::to_string(&table).map_err(|e| CliError::Config(e.to_string()))?;
    let scenario: Scenario = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    validate(&scenario)?;
    Ok(LoadedScenario { scenario, effective })
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not key=value")))?;
    let raw = raw.trim();
    // Bare words are taken as strings so `--set feedback.sign_mode=gradient-descent` works.
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.trim().split('.').collect();
    let leaf = parts.pop().filter(|l| !l.is_empty()).ok_or_else(|| {
        CliError::Config(format!("override `{spec}` has an empty key"))
    })?;
    let mut cursor = table;
    for part in parts {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{part}` is not a section")))?;
    }
    cursor.insert(leaf.to_string(), value);
    Ok(())
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be positive, got {v}")))
    }
}

fn validate(s: &Scenario) -> Result<(), CliError> {
    let finite = [
        ("game.gamma", s.game.gamma),
        ("game.kappa", s.game.kappa),
        ("game.y", s.game.y),
        ("pfield.x0", s.pfield.x0),
        ("pfield.p1", s.pfield.p1),
        ("pfield.p2", s.pfield.p2),
    ];
    for (name, v) in finite {
        if !v.is_finite() {
            return Err(CliError::Config(format!("{name} must be finite")));
        }
    }
    positive("feedback.tau", s.feedback.tau)?;
    positive("solver.dt", s.solver.dt)?;
    positive("solver.horizon", s.solver.horizon)?;
    positive("solver.t_max", s.solver.t_max)?;
    positive("pfield.step", s.pfield.step)?;
    positive("mc.dt", s.mc.dt)?;
    positive("mc.t", s.mc.t)?;
    positive("nash.dt", s.nash.dt)?;
    positive("linear.dt", s.linear.dt)?;
    positive("linear.t_final", s.linear.t_final)?;
    positive("admissibility.alpha_step", s.admissibility.alpha_step)?;
    if s.solver.record_every == 0 || s.solver.steps_per_tau == 0 {
        return Err(CliError::Config("solver.record_every and solver.steps_per_tau must be at least 1".into()));
    }
    if !(s.pfield.x_min <= s.pfield.x0 && s.pfield.x0 <= s.pfield.x_max) {
        return Err(CliError::Config("pfield.x0 must lie in [x_min, x_max]".into()));
    }
    if let Some(b) = s.game.control_bound {
        positive("game.control_bound", b)?;
    }
    for (name, c) in [("cost1", &s.cost1), ("cost2", &s.cost2)] {
        if c.kind == CostKind::Power && c.exponent < 2 {
            return Err(CliError::Config(format!("{name}.exponent must be at least 2")));
        }
    }
    if s.feedback.law == LawKind::Delayed {
        let m = (s.feedback.tau / s.solver.dt).round();
        if m < 1.0 || (m * s.solver.dt - s.feedback.tau).abs() > 1e-9 * s.feedback.tau {
            return Err(CliError::Config(format!(
                "solver.dt = {} must divide feedback.tau = {}",
                s.solver.dt, s.feedback.tau
            )));
        }
    }
    Ok(())
}
