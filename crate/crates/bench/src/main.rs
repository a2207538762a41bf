use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use wonder_bench::exchange::{CombineOptions, Combined, SplitOptions, WorkerOptions};
use wonder_bench::fit::{self, FitOptions, FitOutput};
use wonder_bench::options::{resolve, Common, CommonArgs, VERSION};
use wonder_bench::simulate::{self, EfficiencyOptions};
use wonder_bench::sweep::{self, SweepOptions};
use wonder_bench::table::{write_csv, write_json};
use wonder_bench::theory::{self, TheoryOptions};

#[derive(Parser, Debug)]
#[command(name = "wonder", version = VERSION, about = "One-shot weighted distributed ridge regression")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Limiting risk, efficiency and weight curves as a CSV table
    Theory(TheoryOptions),
    /// Realized vs. limiting relative efficiency on synthetic data
    SimulateEfficiency(EfficiencyOptions),
    /// Exact distributed risk over a grid of penalties
    LambdaSweep(SweepOptions),
    /// Fit a distributed ridge model to CSV data
    Wonder(FitOptions),
    /// Normalize a CSV and write one file per shard
    Split(SplitOptions),
    /// Run one worker's side of a round
    Worker(WorkerOptions),
    /// Run the combiner's side of a round
    Combine(CombineOptions),
}

/// What the run was asked to do, without where the output goes.
fn echo<T: Serialize>(common: &Common, opts: &T) -> Result<Value> {
    let mut value = serde_json::to_value(opts)?;
    if let Value::Object(map) = &mut value {
        for key in ["coef-out", "timing"] {
            map.remove(key);
        }
        map.insert("seed".into(), json!(common.seed()));
    }
    Ok(value)
}

/// Tables carry no header space for provenance, so it goes next to them.
fn write_meta(out: Option<&Path>, command: &str, common: &Common, config: Value) -> Result<()> {
    if let Some(out) = out {
        let meta = json!({
            "version": VERSION,
            "command": command,
            "seed": common.seed(),
            "config": config,
        });
        write_json(Some(&out.with_extension("meta.json")), &meta)?;
    }
    Ok(())
}

fn write_fit(output: &FitOutput, out: Option<&Path>, coef: Option<&Path>) -> Result<()> {
    write_json(out, &output.report)?;
    if let Some(coef) = coef {
        write_csv(Some(coef), &output.coefficients)?;
    }
    Ok(())
}

/// Returns the self-check failures.
fn run(cli: Cli) -> Result<Vec<String>> {
    macro_rules! resolved {
        ($opts:expr) => {{
            let (common, opts) = resolve(&cli.common, $opts)?;
            if let Some(n) = common.threads {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .context("starting the thread pool")?;
            }
            (common, opts)
        }};
    }
    let mut failures = Vec::new();
    match &cli.command {
        Command::Theory(flags) => {
            let (common, opts) = resolved!(flags);
            let rows = theory::theory_table(&opts.grid()?)?;
            write_csv(common.out.as_deref(), &rows)?;
            write_meta(common.out.as_deref(), "theory", &common, echo(&common, &opts)?)?;
            if common.self_check {
                failures = theory::self_check(&rows);
            }
        }
        Command::SimulateEfficiency(flags) => {
            let (common, opts) = resolved!(flags);
            let runs = simulate::efficiency_runs(&opts.spec(common.seed())?)?;
            let summaries = simulate::summarize(&runs);
            write_csv(common.out.as_deref(), &simulate::records(&runs, &summaries))?;
            write_meta(common.out.as_deref(), "simulate-efficiency", &common, echo(&common, &opts)?)?;
            if common.self_check {
                failures = simulate::self_check(&runs);
            }
        }
        Command::LambdaSweep(flags) => {
            let (common, opts) = resolved!(flags);
            let result = sweep::lambda_sweep(&opts.spec(common.seed())?)?;
            write_csv(common.out.as_deref(), &result.rows)?;
            write_meta(common.out.as_deref(), "lambda-sweep", &common, echo(&common, &opts)?)?;
            if common.self_check {
                failures = sweep::self_check(&result);
            }
        }
        Command::Wonder(flags) => {
            let (common, opts) = resolved!(flags);
            let output = opts.run(&common, echo(&common, &opts)?)?;
            let coef = opts.coef_path(common.out.as_deref());
            write_fit(&output, common.out.as_deref(), coef.as_deref())?;
            if common.self_check {
                failures = fit::self_check(&output.report);
            }
        }
        Command::Split(flags) => {
            let (common, opts) = resolved!(flags);
            let manifest = opts.run(&common)?;
            if common.out.is_some() {
                write_json(common.out.as_deref(), &manifest)?;
            }
        }
        Command::Worker(flags) => {
            let (_common, opts) = resolved!(flags);
            let path = opts.run()?;
            eprintln!("wrote {}", path.display());
        }
        Command::Combine(flags) => {
            let (common, opts) = resolved!(flags);
            match opts.run(&common, echo(&common, &opts)?)? {
                Combined::Broadcast(b) => {
                    if common.out.is_some() {
                        write_json(common.out.as_deref(), &b)?;
                    }
                }
                Combined::Fit(output) => {
                    let coef = opts
                        .coef_out
                        .clone()
                        .or_else(|| common.out.as_ref().map(|o| o.with_extension("coef.csv")));
                    write_fit(&output, common.out.as_deref(), coef.as_deref())?;
                    if common.self_check {
                        failures = fit::self_check(&output.report);
                    }
                }
            }
        }
    }
    Ok(failures)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(failures) if failures.is_empty() => ExitCode::SUCCESS,
        Ok(failures) => {
            for f in &failures {
                eprintln!("self-check failed: {f}");
            }
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
