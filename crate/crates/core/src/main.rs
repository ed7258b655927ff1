use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use deat_core::engine::{checkpoint, gradcheck};
use deat_core::harness::{self, run::evaluate_params, sweep, RunConfig};
use deat_core::scheduler::{self, Baseline};
use deat_core::{Error, Result};

#[derive(Parser)]
#[command(name = "deat", version, about = "Desk-scale adversarial training lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunFlags {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "DEAT_OUT_DIR")]
    out: Option<PathBuf>,
    /// Overrides the strategy named in the config, e.g. `pgd-7` or `mdeat`.
    #[arg(long)]
    strategy: Option<String>,
}

impl RunFlags {
    fn load(&self) -> Result<RunConfig> {
        harness::load_config(&self.config)?.with_overrides(self.seed, self.out.clone(), self.strategy.clone())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train, select the most robust checkpoint and write artifacts.
    Train(RunFlags),
    /// Evaluate a saved checkpoint on the configured test split.
    Evaluate {
        #[command(flatten)]
        flags: RunFlags,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run a config over several seeds and an optional alpha/gamma grid.
    Sweep {
        #[command(flatten)]
        flags: RunFlags,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',')]
        alpha: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        gamma: Vec<f64>,
    },
    /// Compare analytic and finite-difference gradients on random MLPs.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        models: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print closed-form backprop counts.
    Cost {
        #[arg(long, default_value_t = 10)]
        epochs: u64,
        #[arg(long, default_value_t = 1)]
        batches: u64,
        #[arg(long, default_value_t = 3)]
        d: u64,
        #[arg(long, default_value_t = 7)]
        steps: u64,
        #[arg(long, default_value_t = 8)]
        replays: u64,
    },
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(flags) => {
            let cfg = flags.load()?;
            let art = harness::run(&cfg)?;
            println!("{}", art.summary.csv_header());
            println!("{}", art.summary.csv_line());
            eprintln!("artifacts written to {}", art.out_dir.display());
        }
        Command::Evaluate { flags, checkpoint: path } => {
            let cfg = flags.load()?;
            let splits = cfg.dataset.load(cfg.seed)?;
            let params = checkpoint::load(&path)?;
            let (natural, robust) = evaluate_params(&cfg, &params, &splits)?;
            let names: Vec<&str> = robust.iter().map(|r| r.adversary.as_str()).collect();
            println!("Natural,{}", names.join(","));
            let accs: Vec<String> = robust.iter().map(|r| format!("{:.4}", r.accuracy)).collect();
            println!("{natural:.4},{}", accs.join(","));
        }
        Command::Sweep { flags, seeds, alpha, gamma } => {
            let base = flags.load()?;
            let points = if alpha.is_empty() && gamma.is_empty() {
                vec![sweep::SweepPoint {
                    label: base.strategy.name.clone(),
                    config: base.clone(),
                }]
            } else {
                let alphas = if alpha.is_empty() { vec![base.strategy_config()?.attack.alpha] } else { alpha };
                let gammas = if gamma.is_empty() { vec![base.strategy.gamma.unwrap_or(1.0)] } else { gamma };
                sweep::alpha_gamma_grid(&base, &alphas, &gammas)
            };
            let table = sweep::sweep(&points, &seeds)?;
            sweep::write_table(&base.out_dir.join("sweep.csv"), &table)?;
            print!("{}", table.to_csv());
        }
        Command::Gradcheck { models, seed } => {
            let mut worst: f64 = 0.0;
            for s in seed..seed + models {
                worst = worst.max(gradcheck::random_mlp_check(s)?);
            }
            println!("models={models} max_relative_error={worst:.3e}");
            if worst >= 1e-4 {
                return Err(Error::Numeric {
                    layer: format!("gradient check (error {worst:.3e})"),
                });
            }
        }
        Command::Cost { epochs: t, batches: m, d, steps, replays } => {
            if d == 0 {
                return Err(Error::Range("d must be at least 1".into()));
            }
            println!("strategy,backprops");
            for (name, b) in [
                ("standard".to_string(), Baseline::Standard),
                ("u-fgsm".into(), Baseline::Ufgsm),
                (format!("pgd-{steps}"), Baseline::PgdAt(steps)),
                (format!("free-{replays}"), Baseline::Free(replays)),
            ] {
                println!("{name},{}", scheduler::baseline_backprops(b, t, m));
            }
            println!("deat-{d},{}", scheduler::expected_backprops(t, d, m));
            println!("deat-{d} (per-epoch sum),{}", scheduler::interval_backprops(t, d, m));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", harness::run::error_category(&e));
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
