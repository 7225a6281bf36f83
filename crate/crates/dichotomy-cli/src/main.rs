mod config;
mod run;
mod scenarios;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

use config::{ConfigError, Scenario};
use run::{RunError, RunOutput};

/// Detect exponential dichotomies of linear cocycles and certify their constants.
#[derive(Parser)]
#[command(name = "dichotomy", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a built-in scenario by name.
    Run {
        /// Path to a TOML scenario or the name of a built-in one.
        scenario: String,
        /// Output directory [default: out/<scenario name>].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for the parallel parts.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// List the built-in scenarios.
    List,
}

fn load(arg: &str) -> Result<Scenario, ConfigError> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: arg.into(),
            source,
        })?;
        return config::parse_in(&text, path.parent().unwrap_or(Path::new(".")));
    }
    match scenarios::find(arg) {
        Some(text) => config::parse(text),
        None => Err(ConfigError::UnknownScenario(arg.into())),
    }
}

fn write_outputs(dir: &Path, report: &serde_json::Value, out: &RunOutput) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, body) in &out.tables {
        std::fs::write(dir.join(name), body)?;
    }
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    std::fs::write(dir.join("report.json"), text)
}

fn run_command(arg: &str, out: Option<PathBuf>, seed: Option<u64>, threads: Option<usize>) -> ExitCode {
    let scenario = match load(arg) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(k) = threads {
        if k == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: cannot start the thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let seed = seed.unwrap_or(scenario.seed);
    let dir = out.unwrap_or_else(|| PathBuf::from("out").join(&scenario.name));
    let start = Instant::now();
    let result = run::run(&scenario, seed);
    let wall = start.elapsed().as_secs_f64();
    let mut report = json!({
        "tool": "dichotomy",
        "version": env!("CARGO_PKG_VERSION"),
        "scenario": scenario,
        "seed": seed,
        "wall_time_s": wall,
    });
    let (output, code) = match result {
        Ok(o) => {
            let pass = o.pass();
            report["status"] = json!(if pass { "pass" } else { "fail" });
            report["checks"] = json!(o.checks);
            report["results"] = serde_json::Value::Object(o.results.clone());
            for c in o.checks.iter().filter(|c| !c.pass) {
                eprintln!("check failed: {} = {} (limit {} {})", c.name, c.value, c.relation, c.limit);
            }
            (o, if pass { 0 } else { 2 })
        }
        Err(e) => {
            let code = e.exit_code();
            eprintln!("error: {e}");
            if let RunError::Config(_) = e {
                return ExitCode::from(code);
            }
            report["status"] = json!("error");
            report["error"] = json!(e.to_string());
            (RunOutput::default(), code)
        }
    };
    if let Err(e) = write_outputs(&dir, &report, &output) {
        eprintln!("error: cannot write to {}: {e}", dir.display());
        return ExitCode::from(1);
    }
    println!("{}: {} ({:.2} s) -> {}", scenario.name, report["status"].as_str().unwrap_or("?"), wall, dir.display());
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            threads,
        } => run_command(&scenario, out, seed, threads),
        Command::List => {
            for (name, text) in scenarios::BUILTIN {
                let description = config::parse(text).map(|s| s.description).unwrap_or_default();
                println!("{name}\t{description}");
            }
            ExitCode::SUCCESS
        }
    }
}
