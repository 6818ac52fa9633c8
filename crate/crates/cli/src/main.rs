//! `natpn` command-line tool.
//!
//! Exit status: 0 on success, 2 for invalid manifests or inputs, 3 when
//! training or evaluation fails numerically.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use natpn::experiment::{self, Experiment};
use natpn::Exec;

/// Environment variable that sizes the worker pool.
const WORKERS_ENV: &str = "NATPN_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "natpn", version, about = "Train and evaluate natural posterior networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment manifest (TOML).
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory; defaults to the manifest's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run sequentially instead of on the worker pool.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model per seed and write checkpoints and run records.
    Train {
        #[command(flatten)]
        common: Common,
        /// Train only this seed instead of the manifest's list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate checkpoints on the test split and the manifest's OOD sets.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoints to evaluate; defaults to those written by `train`.
        #[arg(long = "checkpoint", alias = "checkpoints", num_args = 1..)]
        checkpoints: Vec<PathBuf>,
        /// Combine the checkpoints into one ensemble.
        #[arg(long)]
        ensemble: bool,
    },
    /// Grid search over the manifest's sweep space.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Uncertainty maps for 1-D or 2-D inputs.
    Plot {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to plot; defaults to the first seed's.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// OOD detection scores and confidence decay under input shift.
    OodReport {
        #[command(flatten)]
        common: Common,
        /// Checkpoints to report on; defaults to those written by `train`.
        #[arg(long = "checkpoint", alias = "checkpoints", num_args = 1..)]
        checkpoints: Vec<PathBuf>,
    },
}

fn init_pool() -> Result<(), natpn::Error> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| natpn::Error::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?;
        if !natpn::exec::init_workers(n) {
            log::warn!("{WORKERS_ENV}={n} ignored: worker pool unavailable");
        }
    }
    Ok(())
}

fn open(common: &Common) -> Result<(Experiment, PathBuf, Exec), natpn::Error> {
    let exp = Experiment::load(&common.manifest)?;
    let out = common.out.clone().unwrap_or_else(|| exp.out.clone());
    let exec = if common.sequential { Exec::Sequential } else { Exec::Parallel };
    Ok((exp, out, exec))
}

fn or_default(given: Vec<PathBuf>, exp: &Experiment, out: &Path) -> Vec<PathBuf> {
    if given.is_empty() {
        experiment::default_checkpoints(exp, out)
    } else {
        given
    }
}

fn run(cli: Cli) -> Result<(), natpn::Error> {
    init_pool()?;
    match cli.command {
        Command::Train { common, seed } => {
            let (exp, out, exec) = open(&common)?;
            let seeds = seed.map_or_else(|| exp.manifest.seeds.clone(), |s| vec![s]);
            for t in experiment::train(&exp, &seeds, &out, exec)? {
                println!(
                    "seed {}: best epoch {}, val loss {:.6} -> {}",
                    t.seed,
                    t.record.best_epoch,
                    t.record.final_val_loss,
                    t.checkpoint.display()
                );
            }
        }
        Command::Eval { common, checkpoints, ensemble } => {
            let (exp, out, exec) = open(&common)?;
            let cps = or_default(checkpoints, &exp, &out);
            let res = experiment::eval(&exp, &cps, ensemble, &out, exec)?;
            for (k, v) in &res.aggregate.metrics {
                println!("{k}: {:.4} ± {:.4} (n={})", v.mean, v.sem, v.n);
            }
        }
        Command::Sweep { common } => {
            let (exp, out, exec) = open(&common)?;
            let res = experiment::sweep(&exp, &out, exec)?;
            let failed = res.outcomes.iter().filter(|o| o.result.is_err()).count();
            if let Some(b) = res.best {
                let c = &res.outcomes[b].cell;
                println!(
                    "best of {} cells ({failed} failed): H={} flow={} lambda={} lr={} budget={}",
                    res.outcomes.len(),
                    c.latent_dim,
                    c.flow,
                    c.entropy_weight,
                    c.lr,
                    c.budget.name()
                );
            }
        }
        Command::Plot { common, checkpoint } => {
            let (exp, out, exec) = open(&common)?;
            let cp = checkpoint.unwrap_or_else(|| experiment::default_checkpoints(&exp, &out).remove(0));
            for f in experiment::plot(&exp, &cp, &out, exec)?.files {
                println!("{}", f.display());
            }
        }
        Command::OodReport { common, checkpoints } => {
            let (exp, out, exec) = open(&common)?;
            let cps = or_default(checkpoints, &exp, &out);
            for r in experiment::ood_report(&exp, &cps, &out, exec)? {
                for (name, s) in &r.eval.ood {
                    println!(
                        "{} {name}: epistemic AUC-PR {:.2}, aleatoric AUC-PR {:.2}",
                        r.model, s.epist_aucpr, s.alea_aucpr
                    );
                }
                for (sigma, ratio) in &r.confidence_decay {
                    println!("{} shift σ={sigma}: confidence ratio {ratio:.4}", r.model);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
