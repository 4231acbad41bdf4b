use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use drma_core::data::{load_csv_excluding, preprocess_autompg, ColumnRef, Table};
use drma_core::sim::{bandwidth_sweep, default_bandwidth_grid, run_grid, McMethod, MonteCarloResult, StudySpec};
use drma_core::statistic::nw_residual_smoother;
use drma_core::{
    bandwidth_rule, drma_analyze, wild_bootstrap, BootstrapConfig, Dataset, DrmaConfig, DrmaOutcome, Execution,
    LinearLink, TestMethod,
};

use crate::args::{RealdataArgs, SimulateArgs, TestArgs};
use crate::error::CliError;
use crate::report::{AnalysisReport, RealdataReport, TestReport};

/// What a command produced: its stdout document and the files it wrote.
#[derive(Debug, Default)]
pub struct RunOutput {
    pub stdout: Option<String>,
    pub files: Vec<(String, PathBuf)>,
}

fn execution() -> Execution {
    Execution::Parallel
}

fn analyze(
    data: &Dataset,
    link: &LinearLink,
    config: &DrmaConfig,
    bootstrap: usize,
    refit_sdr: bool,
    seed: u64,
    alpha: f64,
) -> Result<(AnalysisReport, DrmaOutcome), CliError> {
    let outcome = drma_analyze(data, link, config)?;
    let boot = if bootstrap > 0 {
        let boot = BootstrapConfig {
            replications: bootstrap,
            refit_sdr,
            seed,
            execution: execution(),
        };
        Some(wild_bootstrap(data, link, config, &outcome, &boot)?)
    } else {
        None
    };
    Ok((
        AnalysisReport::new(config.method.label(), &outcome, boot, alpha),
        outcome,
    ))
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn write_text(path: &PathBuf, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn run_test(args: &TestArgs) -> Result<RunOutput, CliError> {
    let (data, dropped, response) = if args.autompg {
        let table = Table::from_autompg_file(&args.data)?;
        let prepared = preprocess_autompg(&table)?;
        (prepared.data, prepared.dropped_rows, "mpg".to_string())
    } else {
        let response = args.response.clone().unwrap_or_default();
        let exclude: Vec<ColumnRef> = args.exclude.iter().map(|c| ColumnRef::Name(c.clone())).collect();
        let loaded = load_csv_excluding(&args.data, ColumnRef::Name(response), &exclude)?;
        (loaded.data, loaded.dropped_rows, loaded.response_name)
    };
    let intercept = !args.no_intercept;
    let config = DrmaConfig {
        bandwidth_scale: args.bandwidth_scale,
        ..DrmaConfig::with_method(args.method)
    }
    .with_execution(execution());
    let link = LinearLink { intercept };
    let (analysis, _) = analyze(
        &data,
        &link,
        &config,
        args.bootstrap,
        !args.fixed_directions,
        args.seed,
        args.alpha,
    )?;
    let report = TestReport {
        command: "test",
        response,
        predictors: data.column_names.clone().unwrap_or_default(),
        n: data.n(),
        p: data.p(),
        dropped_rows: dropped,
        intercept,
        alpha: args.alpha,
        seed: args.seed,
        analysis,
    };
    let text = to_json(&report)?;
    let mut files = Vec::new();
    if let Some(path) = &args.output {
        write_text(path, &text)?;
        files.push(("report".to_string(), path.clone()));
    }
    Ok(RunOutput {
        stdout: Some(text),
        files,
    })
}

pub fn run_simulate(args: &SimulateArgs) -> Result<RunOutput, CliError> {
    let mut specs = Vec::with_capacity(args.n.len() * args.a.len());
    for &n in &args.n {
        for &a in &args.a {
            let mut spec = StudySpec::new(args.study, n, a);
            spec.p = args.p.unwrap_or(spec.p);
            spec.sigma = args.sigma;
            spec.error_law = args.error_law;
            spec.replications = args.reps as usize;
            spec.seed = args.seed;
            spec.alpha = args.alpha;
            spec.validate()?;
            specs.push(spec);
        }
    }
    let methods: Vec<McMethod> = args
        .method
        .iter()
        .map(|m| -> Result<McMethod, CliError> {
            Ok(match m.strip_suffix("-boot") {
                Some(base) => McMethod::bootstrapped(parse_method(base)?, args.bootstrap_reps as usize),
                None => McMethod::asymptotic(parse_method(m)?),
            })
        })
        .collect::<Result<_, _>>()?;
    let base = DrmaConfig {
        bandwidth_scale: args.bandwidth_scale,
        ..DrmaConfig::default()
    };
    let result = match &args.sweep {
        None => run_grid(&specs, &methods, &base, execution())?,
        Some(grid) => {
            let grid = if grid.is_empty() {
                default_bandwidth_grid()
            } else {
                grid.clone()
            };
            let mut cells = Vec::new();
            for spec in &specs {
                for method in &methods {
                    cells.extend(bandwidth_sweep(spec, method, &base, &grid, execution())?.cells);
                }
            }
            MonteCarloResult { cells }
        }
    };
    let file = File::create(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    result.write_csv(BufWriter::new(file), args.sweep.is_some())?;
    for cell in &result.cells {
        eprintln!(
            "{} n={} a={} {}: frequency {:.4} (se {:.4}), mean q-hat {:.3}",
            cell.study, cell.n, cell.a, cell.method, cell.frequency, cell.stderr, cell.mean_q_hat
        );
    }
    Ok(RunOutput {
        stdout: None,
        files: vec![("table".to_string(), args.out.clone())],
    })
}

fn parse_method(s: &str) -> Result<TestMethod, CliError> {
    s.parse().map_err(CliError::from)
}

pub fn run_realdata(args: &RealdataArgs) -> Result<RunOutput, CliError> {
    let table = Table::from_autompg_file(&args.data)?;
    let prepared = preprocess_autompg(&table)?;
    let data = &prepared.data;
    let link = LinearLink { intercept: true };
    let config_for = |method| {
        DrmaConfig {
            bandwidth_scale: args.bandwidth_scale,
            ..DrmaConfig::with_method(method)
        }
        .with_execution(execution())
    };
    let dee_config = config_for(TestMethod::DeeSir);
    let (dee, dee_outcome) = analyze(data, &link, &dee_config, args.bootstrap, true, args.seed, args.alpha)?;
    let (mave, _) = analyze(
        data,
        &link,
        &config_for(TestMethod::Mave),
        args.bootstrap,
        true,
        args.seed,
        args.alpha,
    )?;

    // Residuals against the leading DEE index.
    let index = dee_outcome.projected.columns(0, 1).into_owned();
    let h = bandwidth_rule(data.n(), 1, args.bandwidth_scale)?;
    let smoothed = nw_residual_smoother(&dee_outcome.fit.residuals, &index, h)?;
    let file = File::create(&args.diagnostics).map_err(|e| CliError::io(&args.diagnostics, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["index", "residual", "smoothed", "density"])
        .map_err(|e| CliError::csv(&args.diagnostics, e))?;
    for s in &smoothed {
        w.write_record([
            s.index.to_string(),
            s.residual.to_string(),
            s.smoothed.map(|v| v.to_string()).unwrap_or_default(),
            s.density.to_string(),
        ])
        .map_err(|e| CliError::csv(&args.diagnostics, e))?;
    }
    w.flush().map_err(|e| CliError::io(&args.diagnostics, e))?;

    let report = RealdataReport {
        command: "realdata",
        predictors: data.column_names.clone().unwrap_or_default(),
        n: data.n(),
        p: data.p(),
        dropped_rows: prepared.dropped_rows,
        alpha: args.alpha,
        seed: args.seed,
        dee,
        mave,
        diagnostic_rows: smoothed.len(),
    };
    let text = to_json(&report)?;
    let mut files = vec![("diagnostics".to_string(), args.diagnostics.clone())];
    if let Some(path) = &args.output {
        write_text(path, &text)?;
        files.push(("report".to_string(), path.clone()));
    }
    Ok(RunOutput {
        stdout: Some(text),
        files,
    })
}
