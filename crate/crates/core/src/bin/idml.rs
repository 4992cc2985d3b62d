use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use idml::commands::{self, EXIT_GRADCHECK, EXIT_INPUT, EXIT_OK, EXIT_SWEEP_PARTIAL};
use idml::config::RunConfig;
use idml::Error;

#[derive(Parser)]
#[command(name = "idml", version, about = "Uncertainty-aware metric learning at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Config override, `dotted.key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train an encoder and write checkpoint.bin and train_log.jsonl.
    Train(Common),
    /// Evaluate a checkpoint on the test split and write metrics.txt.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to <out>/checkpoint.bin.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate over the sweep.gammas x sweep.taus grid.
    Sweep(Common),
    /// Finite-difference check of every analytic gradient.
    Gradcheck(Common),
    /// Write the configured dataset as CSV plus a metadata sidecar.
    GenData(Common),
    /// Summarize train_log.jsonl under --out as uncertainty_curve.csv.
    Report(Common),
}

fn resolve(c: &Common) -> Result<RunConfig, Error> {
    RunConfig::resolve(c.config.as_deref(), &c.set, c.seed)
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Train(c) => {
            let s = commands::cmd_train(&resolve(&c)?, &c.out)?;
            if let Some(last) = s.log.last() {
                println!(
                    "epoch {} loss {:.6} |u| original {:.4} mixed {:.4}",
                    last.epoch, last.loss_mean, last.u_norm_original, last.u_norm_mixed
                );
            }
            println!("checkpoint written to {}", s.checkpoint.display());
            Ok(EXIT_OK)
        }
        Command::Eval { common, checkpoint } => {
            let ck = checkpoint.unwrap_or_else(|| common.out.join(commands::CHECKPOINT_FILE));
            let r = commands::cmd_eval(&resolve(&common)?, &ck, &common.out)?;
            print!("{}", r.to_text());
            Ok(EXIT_OK)
        }
        Command::Sweep(c) => {
            let s = commands::cmd_sweep(&resolve(&c)?, &c.out)?;
            print!("{}", s.to_csv());
            for cell in s.cells.iter().filter(|c| c.error.is_some()) {
                eprintln!(
                    "cell gamma={} tau={} failed: {}",
                    cell.gamma,
                    cell.tau,
                    cell.error.as_deref().unwrap_or_default()
                );
            }
            Ok(if s.failed() > 0 { EXIT_SWEEP_PARTIAL } else { EXIT_OK })
        }
        Command::Gradcheck(c) => {
            let r = commands::cmd_gradcheck(&resolve(&c)?, &c.out)?;
            print!("{}", r.to_text());
            if r.passed() {
                Ok(EXIT_OK)
            } else {
                if let Some(w) = r.worst() {
                    eprintln!(
                        "worst: {} case {} relative error {:e} (tolerance {:e})",
                        w.name, w.worst_case, w.max_rel_error, r.tolerance
                    );
                }
                Ok(EXIT_GRADCHECK)
            }
        }
        Command::GenData(c) => {
            let meta = commands::cmd_gen_data(&resolve(&c)?, &c.out)?;
            println!(
                "{} samples, {} mixed, sha256 {}",
                meta.n_samples, meta.n_mixed, meta.csv_sha256
            );
            Ok(EXIT_OK)
        }
        Command::Report(c) => {
            let records = commands::cmd_report(&c.out)?;
            for r in &records {
                println!(
                    "{:>4} {:>12.6} {:>8.4} {:>8.4}",
                    r.epoch, r.loss_mean, r.u_norm_original, r.u_norm_mixed
                );
            }
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT as u8 } else { 0 });
        }
    };
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            commands::exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
