//! `finitepop`: batch front end.
//!
//! Exit codes: 0 success, 1 an oracle verdict failed, 2 malformed config or
//! input (no report written), 3 a method precondition failed.

mod config;
mod failure;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Mode, RunConfig};
use failure::Failure;
use finitepop::simulate::generate;
use finitepop::sweep::{sweep, SweepMethod};

#[derive(Parser, Debug)]
#[command(
    name = "finitepop",
    version,
    about = "Finite-population causal inference toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Config file (TOML). For `simulate`, a scenario spec.
    #[arg(long, env = "FINITEPOP_CONFIG")]
    config: PathBuf,
    /// Seed override (master seed for sweeps).
    #[arg(long, env = "FINITEPOP_SEED")]
    seed: Option<u64>,
    /// Output path: report file, or directory for `simulate`. Stdout if unset.
    #[arg(long, env = "FINITEPOP_OUT")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the configured estimators, bounds and audits.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, env = "FINITEPOP_MODE", value_enum)]
        mode: Option<Mode>,
    },
    /// Run only the audits (a default set when the config lists none).
    Audit {
        #[command(flatten)]
        common: Common,
        #[arg(long, env = "FINITEPOP_MODE", value_enum)]
        mode: Option<Mode>,
    },
    /// Replicate scenario draws and summarise oracle verdicts.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, env = "FINITEPOP_REPLICATIONS")]
        replications: Option<usize>,
    },
    /// Generate one scenario and write its CSV files and truth sidecar.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
}

const DEFAULT_REPLICATIONS: usize = 100;

fn write_output(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Failure::Output(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_or_audit(common: &Common, mode: Option<Mode>, audit_only: bool) -> Result<bool, Failure> {
    let config = RunConfig::load(&common.config)?;
    let inputs = run::load_inputs(&config, mode, common.seed)?;
    let methods = if audit_only {
        let listed: Vec<_> = config
            .methods
            .iter()
            .filter(|m| m.kind.starts_with("audit_"))
            .cloned()
            .collect();
        if listed.is_empty() {
            run::default_audits(&inputs)
        } else {
            listed
        }
    } else {
        config.methods.clone()
    };
    let report = run::run(&config, &inputs, &methods)?;
    let out = common
        .out
        .clone()
        .or_else(|| config.out.as_ref().map(|p| config.resolve(p)));
    write_output(out.as_deref(), &report.to_json())?;
    Ok(report.pass)
}

fn run_sweep(common: &Common, replications: Option<usize>) -> Result<bool, Failure> {
    let config = RunConfig::load(&common.config)?;
    let spec_path = config
        .data
        .scenario
        .as_ref()
        .ok_or_else(|| Failure::Schema("sweep needs [data] scenario".into()))?;
    let spec = run::load_spec(&config.resolve(spec_path), None)?;
    let section = config.sweep.clone().unwrap_or_default();
    if section.methods.is_empty() {
        return Err(Failure::Schema("sweep needs [sweep] methods".into()));
    }
    let methods = section
        .methods
        .iter()
        .map(|m| SweepMethod::parse(m).map_err(|e| Failure::Schema(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let replications = replications
        .or(section.replications)
        .unwrap_or(DEFAULT_REPLICATIONS);
    let master = common.seed.or(config.seed).unwrap_or(spec.seed);
    let summary = sweep(&spec, replications, &methods, master)
        .map_err(|e| Failure::precondition("sweep", e))?;
    let report = serde_json::json!({
        "schema": config::SCHEMA_VERSION,
        "spec": spec,
        "summary": summary,
    });
    let out = common
        .out
        .clone()
        .or_else(|| config.out.as_ref().map(|p| config.resolve(p)));
    write_output(
        out.as_deref(),
        &(serde_json::to_string_pretty(&report).expect("serializable") + "\n"),
    )?;
    // Pass rates are reported, not asserted.
    Ok(true)
}

fn run_simulate(common: &Common) -> Result<bool, Failure> {
    let spec = run::load_spec(&common.config, common.seed)?;
    let scenario = generate(&spec).map_err(|e| Failure::input("scenario", e))?;
    match &common.out {
        Some(dir) => scenario
            .write_files(dir)
            .map_err(|e| Failure::Output(format!("{}: {e}", dir.display())))?,
        None => write_output(None, &(scenario.to_json() + "\n"))?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { common, mode } => run_or_audit(common, *mode, false),
        Command::Audit { common, mode } => run_or_audit(common, *mode, true),
        Command::Sweep {
            common,
            replications,
        } => run_sweep(common, *replications),
        Command::Simulate { common } => run_simulate(common),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more oracle verdicts failed");
            ExitCode::from(1)
        }
        Err(failure) => {
            eprintln!("finitepop: {failure}");
            ExitCode::from(failure.exit_code() as u8)
        }
    }
}
