use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rewarm::experiment::{
    arm_result, default_out_dir, grok_step_summary, preset, read_csv_log, run_experiment, warmstart_report,
    Experiment, RunConfig, RunResult, CSV_FILE, PRESETS,
};
use rewarm::Error;

#[derive(Parser)]
#[command(name = "rewarm", version, about = "Effective-learning-rate re-warming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train according to a config file (or `preset:<name>`).
    Run(RunArgs),
    /// Compare the Monte-Carlo estimates against the closed forms.
    ValidateTheory(RunArgs),
    /// Memorization and grok steps plus the final row of a run's log.
    Summarize { log_dir: PathBuf },
    /// Gap table for three warm-start runs: fresh, warm+constant, warm+re-warm.
    ReportWarmstart {
        #[arg(num_args = 3, required = true)]
        log_dirs: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.01)]
        tolerance: f64,
    },
    /// Print a shipped preset, or list them.
    Preset { name: Option<String> },
}

#[derive(Args)]
struct RunArgs {
    config: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=value`, applied after the file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn load(&self) -> rewarm::Result<(RunConfig, PathBuf)> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        let cfg = match self.config.strip_prefix("preset:") {
            Some(name) => {
                let text = preset(name).ok_or_else(|| Error::Config(format!("no preset named `{name}`")))?;
                RunConfig::from_toml_str(text, &overrides)?
            }
            None => RunConfig::from_file(Path::new(&self.config), &overrides)?,
        };
        let out = self
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| default_out_dir(&cfg));
        Ok((cfg, out))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::NonFinite { .. } => 3,
        Error::Io { .. } | Error::Log { .. } | Error::Format { .. } | Error::CorruptRecord { .. } => 4,
        _ => 1,
    }
}

fn run(args: &RunArgs, theory_only: bool) -> rewarm::Result<()> {
    let (cfg, out) = args.load()?;
    if theory_only && cfg.experiment != Experiment::Theory {
        return Err(Error::Config("validate-theory needs experiment = \"theory\"".into()));
    }
    eprintln!("writing to {}", out.display());
    match run_experiment(&cfg, &out)? {
        RunResult::Train {
            outcome,
            final_record,
            grok,
        } => {
            println!("steps {}", outcome.steps);
            if let Some(r) = final_record {
                println!(
                    "final train_acc {:.4} test_acc {:.4} train_loss {:.6} test_loss {:.6}",
                    r.train_acc, r.test_acc, r.train_loss, r.test_loss
                );
            }
            if !outcome.resets.is_empty() {
                println!("resets at {:?}", outcome.resets);
            }
            if cfg.experiment == Experiment::Grok {
                println!("{grok}");
            }
        }
        RunResult::Theory(rows) => {
            println!("quantity         lr     sigma  alpha  closed      mc          se          pass");
            for r in &rows {
                println!(
                    "{:<16} {:<6} {:<6} {:<6} {:<11.6} {:<11.6} {:<11.2e} {}",
                    format!("{:?}", r.quantity),
                    r.lr,
                    r.sigma_g,
                    r.alpha,
                    r.closed_form,
                    r.mc_mean,
                    r.mc_se,
                    r.pass
                );
            }
            let failed = rows.iter().filter(|r| !r.pass).count();
            println!("{} of {} points agree", rows.len() - failed, rows.len());
        }
    }
    Ok(())
}

fn summarize(dir: &Path) -> rewarm::Result<()> {
    let (_, records) = read_csv_log(&dir.join(CSV_FILE))?;
    println!("{}", grok_step_summary(&records)?);
    match records.last() {
        Some(r) => println!(
            "last step {} train_acc {:.4} test_acc {:.4} lr {:e} resets {}",
            r.step,
            r.train_acc,
            r.test_acc,
            r.lr,
            records.iter().filter(|r| r.rewarm).count()
        ),
        None => println!("log is empty"),
    }
    Ok(())
}

fn report(dirs: &[PathBuf], tolerance: f64) -> rewarm::Result<()> {
    let arms: Vec<_> = dirs.iter().map(|d| arm_result(d)).collect::<rewarm::Result<_>>()?;
    let r = warmstart_report(&arms[0], &arms[1], &arms[2], tolerance)?;
    println!("{r}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a, false),
        Command::ValidateTheory(a) => run(a, true),
        Command::Summarize { log_dir } => summarize(log_dir),
        Command::ReportWarmstart { log_dirs, tolerance } => report(log_dirs, *tolerance),
        Command::Preset { name: None } => {
            for (n, _) in PRESETS {
                println!("{n}");
            }
            Ok(())
        }
        Command::Preset { name: Some(n) } => match preset(n) {
            Some(text) => {
                print!("{text}");
                Ok(())
            }
            None => Err(Error::Config(format!("no preset named `{n}`"))),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
