//! CSV tables, SVG line plots, run records and the closing status line.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use crate::CliError;

/// Seventeen significant digits, enough to round-trip an `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a header row and numeric rows.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row.iter().map(|&v| fmt_f64(v))).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

/// Writes rows whose cells are already formatted.
pub fn write_text_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

pub struct Series<'a> {
    pub label: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

const COLORS: [&str; 4] = ["#c0392b", "#2471a3", "#229954", "#7d3c98"];
const MAX_POINTS: usize = 4000;

/// Self-contained line plot; long series are thinned to at most 4000 points.
pub fn svg_plot(title: &str, x_label: &str, series: &[Series]) -> String {
    let (w, h, ml, mr, mt, mb) = (720.0, 420.0, 80.0, 20.0, 40.0, 50.0);
    let finite = |v: &&f64| v.is_finite();
    let xs = series.iter().flat_map(|s| s.x.iter().filter(finite));
    let ys = series.iter().flat_map(|s| s.y.iter().filter(finite));
    let (x0, x1) = bounds(xs);
    let (y0, y1) = bounds(ys);
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let sy = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<rect x="{ml}" y="{mt}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - ml - mr,
        h - mt - mb
    );
    for (v, y) in [(y0, h - mb), (y1, mt)] {
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, ml - 6.0, y + 4.0, tick(v));
    }
    for (v, x) in [(x0, ml), (x1, w - mr)] {
        let _ = writeln!(out, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, h - mb + 16.0, tick(v));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 10.0, escape(x_label));
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let stride = (s.x.len() / MAX_POINTS).max(1);
        let mut points = String::new();
        for (i, (&x, &y)) in s.x.iter().zip(s.y).enumerate() {
            if (i % stride == 0 || i + 1 == s.x.len()) && x.is_finite() && y.is_finite() {
                let _ = write!(points, "{:.2},{:.2} ", sx(x), sy(y));
            }
        }
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, points.trim_end());
        let ly = mt + 16.0 + 16.0 * k as f64;
        let _ = writeln!(out, r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#, ml + 8.0, escape(s.label));
    }
    out.push_str("</svg>\n");
    out
}

fn bounds<'a>(vals: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= 1e-12 * (1.0 + lo.abs()) {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e5) {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Output directory plus the list of files written into it.
pub struct OutputDir {
    pub dir: PathBuf,
    pub files: Vec<String>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Path for `name`, recorded as produced.
    pub fn file(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.file(name);
        fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Warn,
    Fail,
    Error,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Warn => "WARN",
            Verdict::Fail => "FAIL",
            Verdict::Error => "ERROR",
        })
    }
}

/// The machine-readable last line of every command.
#[derive(Debug, Clone, PartialEq)]
pub struct Status {
    pub verdict: Verdict,
    pub fields: Vec<(String, String)>,
    /// Exit code for `Verdict::Error`.
    pub error_code: i32,
}

impl Status {
    pub fn new(verdict: Verdict) -> Self {
        Self {
            verdict,
            fields: Vec::new(),
            error_code: 1,
        }
    }

    pub fn with(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.push(key, value);
        self
    }

    pub fn push(&mut self, key: &str, value: impl fmt::Display) {
        // Values are single tokens so the line splits on whitespace.
        let v = value.to_string().split_whitespace().collect::<Vec<_>>().join("_");
        self.fields.push((key.to_string(), v));
    }

    pub fn exit_code(&self) -> i32 {
        match self.verdict {
            Verdict::Pass | Verdict::Warn => 0,
            Verdict::Fail => 2,
            Verdict::Error => self.error_code,
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "STATUS status={}", self.verdict)?;
        for (k, v) in &self.fields {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

/// Parses a `STATUS key=value...` line back into pairs.
pub fn parse_status(line: &str) -> Option<Vec<(String, String)>> {
    let rest = line.strip_prefix("STATUS ")?;
    rest.split_whitespace()
        .map(|kv| kv.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect()
}

/// Flat `key=value` summary of a run.
pub struct RunRecord {
    pub entries: Vec<(String, String)>,
}

impl RunRecord {
    pub fn new(command: &str, scenario: &str, hash: &str) -> Self {
        let mut r = Self { entries: Vec::new() };
        r.push("tool", env!("CARGO_PKG_NAME"));
        r.push("tool_version", env!("CARGO_PKG_VERSION"));
        r.push("command", command);
        r.push("scenario", scenario);
        r.push("scenario_hash", hash);
        r
    }

    pub fn push(&mut self, key: &str, value: impl fmt::Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn render(&self, files: &[String]) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        let _ = writeln!(out, "files={}", files.join(","));
        out
    }

    /// Writes `run_record.txt` listing every file produced so far.
    pub fn write(&self, out: &mut OutputDir) -> Result<(), CliError> {
        let mut files = out.files.clone();
        files.push("run_record.txt".into());
        let text = self.render(&files);
        out.write_text("run_record.txt", &text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, -2.64, 1e-300, 55.027, std::f64::consts::PI] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn status_line_round_trips() {
        let s = Status::new(Verdict::Warn).with("u1", 2.5).with("note", "two words");
        let line = s.to_string();
        assert_eq!(line, "STATUS status=WARN u1=2.5 note=two_words");
        let kv = parse_status(&line).unwrap();
        assert_eq!(kv[0], ("status".into(), "WARN".into()));
        assert_eq!(s.exit_code(), 0);
        assert_eq!(Status::new(Verdict::Fail).exit_code(), 2);
        assert!(parse_status("STATUS broken").is_none());
    }

    #[test]
    fn svg_is_well_formed_for_degenerate_data() {
        let x = [0.0, 1.0, 2.0];
        let y = [3.0, 3.0, f64::NAN];
        let svg = svg_plot("a < b", "t", &[Series { label: "x", x: &x, y: &y }]);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("a &lt; b"));
        assert!(!svg.contains("NaN"));
    }
}
