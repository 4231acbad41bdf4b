use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use drma_core::sim::{ErrorLaw, SigmaKind, Study};
use drma_core::TestMethod;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "drma",
    version,
    about = "Dimension-reduction model-adaptive lack-of-fit tests"
)]
pub struct Cli {
    /// Worker threads (default: available parallelism). Results do not
    /// depend on this value.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Test a linear null model on a CSV file.
    Test(TestArgs),
    /// Run a Monte Carlo study and write a CSV table.
    Simulate(SimulateArgs),
    /// Auto-MPG analysis with DEE and MAVE plus residual diagnostics.
    Realdata(RealdataArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Test(_) => "test",
            Command::Simulate(_) => "simulate",
            Command::Realdata(_) => "realdata",
            Command::Replay(_) => "replay",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Command::Test(a) => Some(a.seed),
            Command::Simulate(a) => Some(a.seed),
            Command::Realdata(a) => Some(a.seed),
            Command::Replay(_) => None,
        }
    }

    /// Moves every output file (and the manifest) into `dir`, keeping file names.
    pub fn redirect(&mut self, dir: &Path) {
        let move_into = |p: &mut PathBuf| {
            if let Some(name) = p.file_name() {
                *p = dir.join(name);
            }
        };
        match self {
            Command::Test(a) => {
                a.output.as_mut().map(move_into);
                a.manifest = Some(dir.join(a.manifest_path().file_name().unwrap_or_default()));
            }
            Command::Simulate(a) => {
                let manifest = a.manifest_path();
                move_into(&mut a.out);
                a.manifest = Some(dir.join(manifest.file_name().unwrap_or_default()));
            }
            Command::Realdata(a) => {
                move_into(&mut a.diagnostics);
                a.output.as_mut().map(move_into);
                a.manifest = Some(dir.join(a.manifest_path().file_name().unwrap_or_default()));
            }
            Command::Replay(_) => {}
        }
    }

    pub fn manifest_path(&self) -> Option<PathBuf> {
        match self {
            Command::Test(a) => Some(a.manifest_path()),
            Command::Simulate(a) => Some(a.manifest_path()),
            Command::Realdata(a) => Some(a.manifest_path()),
            Command::Replay(_) => None,
        }
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TestArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Response column (header name). Not needed with --autompg.
    #[arg(long, required_unless_present = "autompg")]
    pub response: Option<String>,
    #[arg(long, default_value = "dee-sir", value_parser = parse_method)]
    pub method: TestMethod,
    /// Wild-bootstrap replicates; 0 uses the asymptotic χ²₁ p-value.
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    /// Reuse the observed B̂ in every bootstrap replicate.
    #[arg(long)]
    pub fixed_directions: bool,
    #[arg(long, env = "DRMA_SEED", default_value_t = 0)]
    pub seed: u64,
    /// c in h = c·n^(-1/(4+q)).
    #[arg(long, default_value_t = 1.5, value_parser = parse_positive)]
    pub bandwidth_scale: f64,
    #[arg(long, default_value_t = 0.05, value_parser = parse_alpha)]
    pub alpha: f64,
    /// Fit the null model without an intercept.
    #[arg(long)]
    pub no_intercept: bool,
    /// Columns to leave out of the predictors (repeatable).
    #[arg(long, value_name = "COLUMN")]
    pub exclude: Vec<String>,
    /// Treat --data as the raw Auto-MPG file and build its eight-predictor
    /// design.
    #[arg(long)]
    pub autompg: bool,
    /// Also write the JSON report to this file.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Manifest path (default: <output>.manifest.json, else
    /// drma-test.manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

impl TestArgs {
    pub fn manifest_path(&self) -> PathBuf {
        match (&self.manifest, &self.output) {
            (Some(m), _) => m.clone(),
            (None, Some(out)) => sidecar(out),
            (None, None) => PathBuf::from("drma-test.manifest.json"),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// H11, H12, H13, study2 or study3.
    #[arg(long, value_parser = parse_study)]
    pub study: Study,
    /// Predictor covariance: 1 (identity) or 2 (0.5^|j-l|).
    #[arg(long, default_value = "1", value_parser = parse_sigma)]
    pub sigma: SigmaKind,
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "100")]
    pub n: Vec<usize>,
    /// Predictor dimension (default 8, or 3 for study2).
    #[arg(long)]
    pub p: Option<usize>,
    /// Departure magnitudes, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub a: Vec<f64>,
    /// normal or de (double exponential).
    #[arg(long = "error", default_value = "normal", value_parser = parse_error_law)]
    pub error_law: ErrorLaw,
    /// Methods, comma separated: dee-sir, dee-save, mave, zheng; a -boot
    /// suffix calibrates with the wild bootstrap.
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "dee-sir", value_parser = parse_mc_method)]
    pub method: Vec<String>,
    #[arg(long, default_value_t = 250, value_parser = clap::value_parser!(u64).range(1..))]
    pub bootstrap_reps: u64,
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    pub reps: u64,
    #[arg(long, env = "DRMA_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05, value_parser = parse_alpha)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.5, value_parser = parse_positive)]
    pub bandwidth_scale: f64,
    /// Sweep the bandwidth multiplier instead of using --bandwidth-scale.
    /// Without values the grid 0.25, 0.5, ..., 2.25 is used.
    #[arg(long, value_delimiter = ',', num_args = 0.., value_parser = parse_positive)]
    pub sweep: Option<Vec<f64>>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path (default: <out>.manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

impl SimulateArgs {
    pub fn manifest_path(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| sidecar(&self.out))
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RealdataArgs {
    /// Raw Auto-MPG file (UCI auto-mpg.data-original layout, or CSV).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.05, value_parser = parse_alpha)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    #[arg(long, env = "DRMA_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.5, value_parser = parse_positive)]
    pub bandwidth_scale: f64,
    /// Residual-versus-index diagnostics CSV.
    #[arg(long, default_value = "autompg-diagnostics.csv")]
    pub diagnostics: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Manifest path (default: <diagnostics>.manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

impl RealdataArgs {
    pub fn manifest_path(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| sidecar(&self.diagnostics))
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded paths.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Check every output against the recorded digests; exit 1 on mismatch.
    #[arg(long)]
    pub verify: bool,
}

fn parse_method(s: &str) -> Result<TestMethod, String> {
    s.parse().map_err(|e: drma_core::DrmaError| e.to_string())
}

fn parse_mc_method(s: &str) -> Result<String, String> {
    let base = s.strip_suffix("-boot").unwrap_or(s);
    parse_method(base)?;
    Ok(s.to_ascii_lowercase())
}

fn parse_study(s: &str) -> Result<Study, String> {
    s.parse().map_err(|e: drma_core::DrmaError| e.to_string())
}

fn parse_sigma(s: &str) -> Result<SigmaKind, String> {
    match s {
        "1" => Ok(SigmaKind::Identity),
        "2" => Ok(SigmaKind::Ar),
        _ => Err(format!("sigma must be 1 or 2, got {s:?}")),
    }
}

fn parse_error_law(s: &str) -> Result<ErrorLaw, String> {
    match s.to_ascii_lowercase().as_str() {
        "normal" => Ok(ErrorLaw::Normal),
        "de" | "laplace" | "double-exponential" => Ok(ErrorLaw::DoubleExponential),
        _ => Err(format!("unknown error law {s:?}")),
    }
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let alpha: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(alpha)
    } else {
        Err(format!("alpha must lie in (0, 1], got {alpha}"))
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("must be positive, got {v}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Command {
        let mut argv = vec!["drma"];
        argv.extend_from_slice(args);
        Cli::try_parse_from(argv).unwrap().command
    }

    #[test]
    fn alpha_bounds() {
        assert_eq!(parse_alpha("1"), Ok(1.0));
        assert_eq!(parse_alpha("0.05"), Ok(0.05));
        for bad in ["0", "-0.1", "1.5", "NaN", "x"] {
            assert!(parse_alpha(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn method_lists_accept_boot_suffix() {
        assert_eq!(parse_mc_method("MAVE-boot").unwrap(), "mave-boot");
        assert!(parse_mc_method("sliced-boot").is_err());
        let Command::Simulate(sim) = parse(&["simulate", "--study", "h13", "--a", "0,0.2", "--out", "t.csv"]) else {
            panic!()
        };
        assert_eq!(sim.study, Study::H13);
        assert_eq!(sim.a, vec![0.0, 0.2]);
        assert_eq!(sim.method, vec!["dee-sir"]);
        assert!(sim.sweep.is_none());
    }

    #[test]
    fn default_manifest_paths() {
        let cmd = parse(&["simulate", "--study", "H11", "--a", "0", "--out", "runs/t.csv"]);
        assert_eq!(cmd.manifest_path(), Some(PathBuf::from("runs/t.csv.manifest.json")));
        let cmd = parse(&["test", "--data", "d.csv", "--response", "y"]);
        assert_eq!(cmd.manifest_path(), Some(PathBuf::from("drma-test.manifest.json")));
        let cmd = parse(&["test", "--data", "d.csv", "--response", "y", "--output", "r.json"]);
        assert_eq!(cmd.manifest_path(), Some(PathBuf::from("r.json.manifest.json")));
        let cmd = parse(&["realdata", "--data", "a.data", "--manifest", "m.json"]);
        assert_eq!(cmd.manifest_path(), Some(PathBuf::from("m.json")));
    }

    #[test]
    fn redirect_keeps_file_names_and_inputs() {
        let mut cmd = parse(&[
            "realdata",
            "--data",
            "in/a.data",
            "--diagnostics",
            "x/d.csv",
            "--output",
            "r.json",
        ]);
        cmd.redirect(Path::new("out"));
        let Command::Realdata(a) = &cmd else { panic!() };
        assert_eq!(a.data, PathBuf::from("in/a.data"));
        assert_eq!(a.diagnostics, PathBuf::from("out/d.csv"));
        assert_eq!(a.output, Some(PathBuf::from("out/r.json")));
        assert_eq!(cmd.manifest_path(), Some(PathBuf::from("out/d.csv.manifest.json")));
    }

    #[test]
    fn invocation_round_trips_through_json() {
        let cmd = parse(&[
            "simulate", "--study", "study3", "--sigma", "2", "--error", "de", "--a", "0.4", "--out", "s.csv",
        ]);
        let json = serde_json::to_string(&cmd).unwrap();
        let back: Command = serde_json::from_str(&json).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
        assert!(json.starts_with(r#"{"command":"simulate""#));
    }

    #[test]
    fn empty_grid_is_rejected() {
        assert!(Cli::try_parse_from(["drma", "simulate", "--study", "H11", "--a", "", "--out", "s.csv"]).is_err());
        assert!(Cli::try_parse_from(["drma", "simulate", "--study", "H11", "--out", "s.csv"]).is_err());
    }
}
