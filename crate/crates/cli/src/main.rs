use std::path::PathBuf;
use std::process::ExitCode;

use apac_cli::{commands, CliError, Context};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "apac", version, about = "Augmented-pattern classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write checkpoint and report files.
    Train(Common),
    /// Evaluate every configured decision rule on the test set.
    Eval(Common),
    /// Error rates as a function of the number of virtual samples.
    SweepM(Common),
    /// Export randomly chosen first-layer weight maps as PGM/PPM images.
    ExportWeightMaps {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 16)]
        count: usize,
    },
    /// Print the effective configuration and its digest.
    InspectConfig(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn context(&self) -> Result<Context, CliError> {
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
        }
        Context::new(&self.config, self.seed, self.out_dir.clone())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(c) => {
            let ctx = c.context()?;
            let out = commands::cmd_train(&ctx)?;
            let last = out.report.epochs.last();
            println!(
                "trained {} epochs ({} iterations), final loss {}, checkpoint {} sha256 {}",
                out.report.epochs.len(),
                out.report.iterations,
                last.map_or("n/a".into(), |r| format!("{:.6}", r.loss)),
                out.checkpoint.display(),
                out.checkpoint_digest
            );
        }
        Command::Eval(c) => {
            let ctx = c.context()?;
            for r in commands::cmd_eval(&ctx, c.checkpoint.as_deref())? {
                println!("{:<14} M={:<6} top1 {:.4}  top2 {:.4}", r.rule.to_string(), r.m, r.top1, r.top2);
            }
        }
        Command::SweepM(c) => {
            let ctx = c.context()?;
            for r in commands::cmd_sweep_m(&ctx, c.checkpoint.as_deref())? {
                println!("{:<14} M={:<6} top1 {:.4}  top2 {:.4}", r.rule.to_string(), r.m, r.top1, r.top2);
            }
        }
        Command::ExportWeightMaps { common, count } => {
            let ctx = common.context()?;
            for p in commands::cmd_export_weight_maps(&ctx, common.checkpoint.as_deref(), count)? {
                println!("{}", p.display());
            }
        }
        Command::InspectConfig(c) => print!("{}", commands::cmd_inspect_config(&c.context()?)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
