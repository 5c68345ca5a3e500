use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use milo::cli::{cmd_diagnose, cmd_generate, cmd_report, cmd_run, exit_code, out_dir, ExperimentConfig, Method};
use milo::Error;

#[derive(Parser)]
#[command(name = "milo", version, about = "Offline imitation learning with pessimistic learned models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Replace the configured seed list with this single seed.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Output directory; defaults to the config's out_dir or runs/<name>.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build expert and behavior policies and write datasets plus a manifest.
    Generate(Common),
    /// Run methods on every seed; writes learning curves and summary.json.
    Run {
        #[command(flatten)]
        common: Common,
        /// Method to run (repeatable); defaults to the config's list.
        #[arg(long = "method")]
        methods: Vec<String>,
    },
    /// Write coverage diagnostics for each seed's data.
    Diagnose(Common),
    /// Aggregate every summary.json under DIR into Markdown and CSV tables.
    Report {
        dir: PathBuf,
        /// Where to write the tables; defaults to DIR.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), Error> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed_override {
        cfg.seeds = vec![seed];
    }
    let out = out_dir(&cfg, common.out.as_deref());
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate(c) => {
            let (cfg, out) = load(&c)?;
            let m = cmd_generate(&cfg, &out)?;
            println!("wrote {} files to {} (behavior score {:.3})", m.files.len(), out.display(), m.behavior_score);
        }
        Command::Run { common, methods } => {
            let (cfg, out) = load(&common)?;
            let methods = if methods.is_empty() {
                cfg.methods.clone()
            } else {
                methods.iter().map(|m| m.parse()).collect::<Result<Vec<Method>, _>>()?
            };
            let s = cmd_run(&cfg, &out, &methods)?;
            for m in &s.methods {
                println!("{:<12} score {:.3} ± {:.3} (median {:.3})", m.method, m.mean_score, m.std_score, m.median_score);
            }
        }
        Command::Diagnose(c) => {
            let (cfg, out) = load(&c)?;
            let reports = cmd_diagnose(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&reports)?);
        }
        Command::Report { dir, out } => {
            let out = out.unwrap_or_else(|| dir.clone());
            let (scores, tiers) = cmd_report(&dir, &out)?;
            print!("{}\n{}", scores.to_markdown(), tiers.to_markdown());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
