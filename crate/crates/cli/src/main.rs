//! `tqa` command-line front end.
//!
//! Exit codes: 0 on success, 1 on invalid input (bad flags, malformed files,
//! failed checks), 2 on internal or I/O failures.

mod args;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;
use serde::Serialize;
use serde_json::json;

use tqa_core::eval::experiment::{format_summary, run_repeated, Experiment};
use tqa_core::eval::verify::{verify, VerifyParams};
use tqa_core::eval::{
    coverage_by_step, evaluate, format_table, tail_coverage_curve, EvalOptions, MetricsReport,
};
use tqa_core::io::{self, Manifest};
use tqa_core::synth::{fit_linear_forecaster, generate_panel};
use tqa_core::{pipeline, ForecastPanel, IntervalPanel};

use args::{Cli, Command, EvaluateArgs, GenerateArgs, MetricArgs, PredictArgs, ReportArgs, SynthArgs, VerifyArgs};

/// A check ran but did not pass.
#[derive(Debug)]
struct CheckFailed;

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("check did not pass")
    }
}

impl std::error::Error for CheckFailed {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<CheckFailed>().is_some() {
        return 1;
    }
    match e.downcast_ref::<tqa_core::Error>() {
        Some(err) if err.is_validation() => 1,
        Some(_) => 2,
        None if e.downcast_ref::<std::io::Error>().is_some() => 2,
        None => 1,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate(a) => generate(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Verify(a) => verify_cmd(a),
        Command::Report(a) => report(a),
    }
}

fn manifest_path(out: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        let mut name = out.as_os_str().to_owned();
        name.push(".manifest.json");
        PathBuf::from(name)
    })
}

fn write_manifest<T: Serialize>(command: &str, args: &T, outputs: &[&Path], path: &Path) -> Result<()> {
    let manifest = Manifest::new(
        command,
        serde_json::to_value(args)?,
        outputs.iter().map(|p| p.display().to_string()).collect(),
    );
    io::write_json(path, &manifest).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn synthetic_panel(synth: &SynthArgs, seed: u64) -> tqa_core::Result<ForecastPanel> {
    let panel = generate_panel(&synth.spec(seed))?;
    match synth.fit_order {
        Some(p) => fit_linear_forecaster(&panel, p),
        None => Ok(panel),
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let panel = synthetic_panel(&a.synth, a.seed)?;
    io::write_panel_file(&a.out, &panel).with_context(|| format!("writing {}", a.out.display()))?;
    let manifest = manifest_path(&a.out, &a.manifest);
    write_manifest("generate", &a, &[&a.out], &manifest)?;
    println!(
        "wrote {} series x {} steps to {}",
        panel.n_series(),
        panel.horizon(),
        a.out.display()
    );
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let panel = io::read_panel_file(&a.panel)?;
    let config = a.method_args.config(a.method, a.seed);
    let intervals = pipeline::run_method(&panel, &config)?;
    io::write_intervals_file(&a.out, &intervals).with_context(|| format!("writing {}", a.out.display()))?;
    let manifest = manifest_path(&a.out, &a.manifest);
    write_manifest("predict", &a, &[&a.out], &manifest)?;
    println!(
        "{}: intervals for {} test series x {} steps written to {}",
        a.method,
        intervals.n_series(),
        intervals.horizon(),
        a.out.display()
    );
    Ok(())
}

fn eval_options(m: &MetricArgs) -> EvalOptions {
    EvalOptions {
        window: m.window,
        tail_fraction: m.tail_fraction,
        tail_window: m.tail_window.into(),
    }
}

fn label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn load_intervals(paths: &[PathBuf]) -> Result<Vec<(String, IntervalPanel)>> {
    paths
        .iter()
        .map(|p| Ok((label(p), io::read_intervals_file(p)?)))
        .collect()
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let opts = eval_options(&a.metrics);
    if !a.intervals.is_empty() {
        let reports = load_intervals(&a.intervals)?
            .into_iter()
            .map(|(name, iv)| Ok(evaluate(&iv, &opts)?.with_method(name)))
            .collect::<Result<Vec<MetricsReport>>>()?;
        print!("{}", format_table(&reports));
        let body = if reports.len() == 1 {
            serde_json::to_value(&reports[0])?
        } else {
            json!({ "reports": reports })
        };
        io::write_json(&a.out, &body)?;
    } else {
        if a.repeats == 0 {
            bail!(tqa_core::Error::InvalidConfig("repeats must be at least 1".into()));
        }
        if a.methods.is_empty() {
            bail!(tqa_core::Error::InvalidConfig("no methods given".into()));
        }
        let methods: Vec<_> = a
            .methods
            .iter()
            .map(|m| (m.to_string(), a.method_args.config(*m, a.seed)))
            .collect();
        let experiment: Experiment = if let Some(path) = &a.panel {
            let panel = io::read_panel_file(path)?;
            run_repeated(|_| Ok(panel.clone()), &methods, a.repeats, a.seed, &opts)?
        } else if a.synthetic {
            run_repeated(|seed| synthetic_panel(&a.synth, seed), &methods, a.repeats, a.seed, &opts)?
        } else {
            bail!(tqa_core::Error::InvalidConfig(
                "give --intervals, --panel or --synthetic".into()
            ));
        };
        if a.repeats == 1 {
            let reports: Vec<MetricsReport> = experiment.runs.iter().map(|r| r[0].clone()).collect();
            print!("{}", format_table(&reports));
        } else {
            print!("{}", format_summary(&experiment.summaries));
        }
        io::write_json(&a.out, &experiment)?;
    }
    let manifest = manifest_path(&a.out, &a.manifest);
    write_manifest("evaluate", &a, &[&a.out], &manifest)?;
    Ok(())
}

fn verify_cmd(a: VerifyArgs) -> Result<()> {
    let params = VerifyParams {
        alpha: a.alpha,
        n_cal: a.n,
        n_test: a.n_test,
        horizon: a.horizon,
        replications: a.replications,
        gamma: a.gamma,
        steps: a.steps,
        noise: a.noise,
        error_variant: a.error_variant,
        seed: a.seed,
    };
    let report = verify(a.theorem, &params)?;
    let se = report.stderr.map(|s| format!(" ± {}", short(s))).unwrap_or_default();
    println!(
        "{} {}: statistic {}{se}, bound {}; {}",
        if report.pass { "PASS" } else { "FAIL" },
        a.theorem,
        short(report.statistic),
        short(report.bound),
        report.detail
    );
    if let Some(out) = &a.out {
        io::write_json(out, &json!({ "settings": &a, "report": &report }))?;
    }
    if !report.pass {
        return Err(CheckFailed.into());
    }
    Ok(())
}

fn short(x: f64) -> String {
    if x != 0.0 && x.abs() < 1e-3 {
        format!("{x:.3e}")
    } else {
        format!("{x:.6}")
    }
}

fn report(a: ReportArgs) -> Result<()> {
    let opts = eval_options(&a.metrics);
    let loaded = load_intervals(&a.intervals)?;
    let reports = loaded
        .iter()
        .map(|(name, iv)| Ok(evaluate(iv, &opts)?.with_method(name.clone())))
        .collect::<Result<Vec<_>>>()?;
    print!("{}", format_table(&reports));
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let metrics_path = a.out_dir.join("metrics.json");
    io::write_json(&metrics_path, &json!({ "reports": reports }))?;
    let mut outputs = vec![metrics_path];
    if a.curves {
        let window = pipeline::evaluation_window(
            loaded.first().map(|(_, iv)| iv.horizon()).unwrap_or(0),
            a.metrics.window,
        )?;
        let tails = loaded
            .iter()
            .map(|(name, iv)| Ok((name.clone(), tail_coverage_curve(iv, window.clone())?)))
            .collect::<Result<Vec<_>>>()?;
        let steps: Vec<_> = loaded.iter().map(|(name, iv)| (name.clone(), coverage_by_step(iv))).collect();
        let tail_path = a.out_dir.join("tail_curves.csv");
        let step_path = a.out_dir.join("step_coverage.csv");
        io::write_tail_curves(std::fs::File::create(&tail_path)?, &tails)?;
        io::write_step_curves(std::fs::File::create(&step_path)?, &steps)?;
        outputs.push(tail_path);
        outputs.push(step_path);
    }
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    write_manifest("report", &a, &refs, &a.out_dir.join("report.manifest.json"))?;
    Ok(())
}
