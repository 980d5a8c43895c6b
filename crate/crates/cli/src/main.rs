use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use miagrid::attacks::Strategy;
use miagrid::store::Store;
use miagrid_cli::{cmd_attack, cmd_compare_hpo, cmd_eval, cmd_gc, cmd_grid, exit_code, open_store, ExperimentConfig};

/// Membership-inference auditing over MIA-Grids.
#[derive(Parser)]
#[command(name = "miagrid", version)]
struct Cli {
    /// Overrides the configuration's root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build pools, masks, target HPO and diagonal models.
    Grid {
        config: PathBuf,
    },
    /// Run attack campaigns and write per-sample scores.
    Attack {
        config: PathBuf,
        /// Strategies to run (repeatable); defaults to the configured ones.
        #[arg(long = "strategy")]
        strategies: Vec<String>,
    },
    /// ROC curves, TPR at the FPR grid and the DP bound.
    Eval {
        config: PathBuf,
    },
    /// Paired TD-HPO vs ED-HPO tests with BY adjustment.
    CompareHpo {
        config: PathBuf,
    },
    /// List store objects not referenced by any manifest.
    Gc {
        /// Configuration whose store to inspect; `$MIAGRID_STORE` otherwise.
        config: Option<PathBuf>,
    },
}

fn load(path: &PathBuf, seed: Option<u64>) -> miagrid::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> miagrid::Result<()> {
    match cli.command {
        Command::Grid { config } => {
            for r in cmd_grid(&load(&config, cli.seed)?)? {
                println!("grid rep {}: {} models trained", r.rep, r.models_trained);
            }
        }
        Command::Attack { config, strategies } => {
            let cfg = load(&config, cli.seed)?;
            let strategies: Vec<Strategy> = strategies.iter().map(|s| s.parse()).collect::<miagrid::Result<_>>()?;
            for (m, _) in cmd_attack(&cfg, &strategies)? {
                let total: usize = m.budgets.iter().sum();
                println!("{} rep {}: {total} models trained {:?}", m.strategy, m.rep, m.budgets);
            }
        }
        Command::Eval { config } => {
            let report = cmd_eval(&load(&config, cli.seed)?)?;
            for s in &report.strategies {
                for p in &s.points {
                    let bound = p.dp_bound.map(|b| format!(" DP(UB) {b:.4}")).unwrap_or_default();
                    println!(
                        "{} FPR {}: TPR {:.4} [{:.4}, {:.4}]{bound}",
                        s.strategy, p.fpr, p.tpr, p.cp_lo, p.cp_hi
                    );
                }
            }
        }
        Command::CompareHpo { config } => {
            let report = cmd_compare_hpo(&load(&config, cli.seed)?)?;
            print!("{}", report.t.to_csv());
            print!("{}", report.permutation.to_csv());
        }
        Command::Gc { config } => {
            let store = match config {
                Some(path) => open_store(&load(&path, cli.seed)?)?,
                None => Store::from_env_or(".miagrid-store")?,
            };
            let mut out = std::io::stdout().lock();
            for object in cmd_gc(&store)? {
                // A closed pipe (e.g. `| head`) just ends the listing.
                if writeln!(out, "{object}").is_err() {
                    break;
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
