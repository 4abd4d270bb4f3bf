//! `vshp`: run closed-loop scenarios and validate configuration files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use vshp_core::config::Config;
use vshp_core::sim::{builtin_scenario, run_scenario, ScenarioSpec, BUILTIN_SCENARIOS};
use vshp_core::summary::RunSummary;
use vshp_core::VshpError;

const EXIT_USAGE: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_RUN: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "vshp", version, about = "Variable-speed hydropower closed-loop simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a built-in scenario or a scenario JSON file.
    Run {
        /// One of scenario1, scenario2, scenario3, generator-loss-mpc,
        /// generator-loss-pid, or a path to a scenario JSON file.
        scenario: String,
        /// Configuration JSON; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for the trace CSV and summary JSON.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Override a configuration value, e.g. `--set vsg.k_vsg_p=25`.
        #[arg(long = "set", value_name = "GROUP.FIELD=VALUE")]
        set: Vec<String>,
    },
    /// Check every configuration group and print pass/fail per group.
    Validate { config: PathBuf },
}

/// Error carrying the process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code,
            error: error.into(),
        }
    }

    fn from_core(err: VshpError) -> Self {
        let code = match err {
            VshpError::Config(_) | VshpError::Infeasible(_) => EXIT_CONFIG,
            _ => EXIT_RUN,
        };
        Failure::new(code, err)
    }
}

fn load_config(path: Option<&Path>, sets: &[String]) -> Result<Config, Failure> {
    let mut config = match path {
        Some(p) => Config::load(p).map_err(Failure::from_core)?,
        None => Config::default(),
    };
    for item in sets {
        let (key, value) = item.split_once('=').ok_or_else(|| {
            Failure::new(
                EXIT_USAGE,
                anyhow::anyhow!("--set expects GROUP.FIELD=VALUE, got `{item}`"),
            )
        })?;
        config.set(key.trim(), value.trim()).map_err(Failure::from_core)?;
    }
    Ok(config)
}

fn resolve_scenario(name: &str, config: &Config) -> Result<ScenarioSpec, Failure> {
    if let Some(spec) = builtin_scenario(name, config) {
        return Ok(spec);
    }
    let path = Path::new(name);
    if path.extension().is_some_and(|e| e == "json") && path.exists() {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading scenario {}", path.display()))
            .map_err(|e| Failure::new(EXIT_RUN, e))?;
        return ScenarioSpec::from_json_str(&text).map_err(Failure::from_core);
    }
    Err(Failure::new(
        EXIT_USAGE,
        anyhow::anyhow!(
            "unknown scenario `{name}`; expected one of {} or a scenario .json file",
            BUILTIN_SCENARIOS.join(", ")
        ),
    ))
}

fn run(scenario: &str, config: Option<&Path>, out: &Path, sets: &[String]) -> Result<(), Failure> {
    let config = load_config(config, sets)?;
    config.check().map_err(Failure::from_core)?;
    let spec = resolve_scenario(scenario, &config)?;
    let trace = run_scenario(&spec, &config).map_err(Failure::from_core)?;

    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(|e| Failure::new(EXIT_RUN, e))?;
    let csv_path = out.join(format!("{}.csv", spec.name));
    let file = fs::File::create(&csv_path)
        .with_context(|| format!("creating {}", csv_path.display()))
        .map_err(|e| Failure::new(EXIT_RUN, e))?;
    trace
        .write_csv(std::io::BufWriter::new(file))
        .map_err(Failure::from_core)?;

    let summary = RunSummary::from_trace(&trace);
    let summary_path = out.join(format!("{}.summary.json", spec.name));
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&summary_path, json + "\n")
        .with_context(|| format!("writing {}", summary_path.display()))
        .map_err(|e| Failure::new(EXIT_RUN, e))?;

    println!(
        "{}: peak |df| {:.5} pu, final |df| {:.5} pu, peak |w - w*| {:.5} pu, h_st [{:.4}, {:.4}], {} QP solves, max KKT {:.2e}, {:.2} s",
        spec.name,
        summary.peak_abs_delta_f,
        summary.steady_state_abs_delta_f,
        summary.peak_abs_omega_error,
        summary.min_h_st,
        summary.max_h_st,
        summary.qp_solves,
        summary.max_kkt_residual,
        summary.wall_clock_s
    );
    if let Some(reason) = trace.abort {
        return Err(Failure::new(EXIT_RUN, anyhow::anyhow!("simulation aborted: {reason}")));
    }
    Ok(())
}

fn validate(path: &Path) -> Result<(), Failure> {
    let config = Config::load(path).map_err(Failure::from_core)?;
    let reports = config.validate();
    let mut ok = true;
    for report in &reports {
        if report.passed() {
            println!("{:<10} pass", report.group);
        } else {
            ok = false;
            println!("{:<10} FAIL", report.group);
            for err in &report.errors {
                println!("    {err}");
            }
        }
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::new(EXIT_CONFIG, anyhow::anyhow!("configuration is invalid")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            scenario,
            config,
            out,
            set,
        } => run(scenario, config.as_deref(), out, set),
        Command::Validate { config } => validate(config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
