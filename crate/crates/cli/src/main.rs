use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fender::harness::{self, parse_models, parse_omegas, ModelKind, Overrides, RunConfig, SEED_ENV};

#[derive(Parser)]
#[command(name = "fender", version, about = "Frequency-aware deconfounded next-basket recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and its ground-truth sidecar.
    Gen(Common),
    /// Repeat-purchase share per basket: data vs one model.
    Pilot(Common),
    /// Train the listed models and write checkpoints.
    Train(Common),
    /// Evaluate checkpoints on each user's last basket.
    Eval(Common),
    /// Insert an unrelated item, retrain and report its average rank.
    Robust(Common),
    /// Top-10 lists for one user over consecutive baskets.
    Casestudy {
        #[command(flatten)]
        common: Common,
        /// Dense user id.
        #[arg(long)]
        user: Option<usize>,
        /// Number of predicted baskets.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Simulate the recommend-then-purchase feedback loop.
    Loop {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rounds: Option<usize>,
        /// Logit boost for exposed items.
        #[arg(long)]
        boost: Option<f64>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metric cutoff.
    #[arg(long)]
    k: Option<usize>,
    /// Inference omega: a number, `trained`, or a comma list.
    #[arg(long)]
    omega: Option<String>,
    /// Comma list of pif, bprmf, ipsmf, fender.
    #[arg(long)]
    models: Option<String>,
}

impl Common {
    fn resolve(&self) -> fender::Result<RunConfig> {
        if let Some(o) = &self.omega {
            parse_omegas(o)?;
        }
        let models: Option<Vec<ModelKind>> = self.models.as_deref().map(parse_models).transpose()?;
        let overrides = Overrides {
            seed: self.seed,
            out: self.out.clone(),
            k: self.k,
            omega: self.omega.clone(),
            models,
        };
        let env = std::env::var(SEED_ENV).ok();
        RunConfig::resolve(self.config.as_deref(), overrides, env.as_deref())
    }
}

fn run(cli: Cli) -> fender::Result<String> {
    match cli.command {
        Command::Gen(c) => {
            let cfg = c.resolve()?;
            let ds = harness::cmd_gen(&cfg)?;
            let m = ds.meta();
            Ok(format!(
                "wrote {} users, {} items, {} baskets to {}",
                m.n_users,
                m.n_items,
                m.n_baskets,
                cfg.out.display()
            ))
        }
        Command::Pilot(c) => {
            let cfg = c.resolve()?;
            let rows = harness::cmd_pilot(&cfg)?;
            Ok(format!("wrote {} rows to {}", rows.len(), cfg.out.join("pilot.csv").display()))
        }
        Command::Train(c) => {
            let cfg = c.resolve()?;
            let cks = harness::cmd_train(&cfg)?;
            let names: Vec<&str> = cks.iter().map(|c| c.model.as_str()).collect();
            Ok(format!("trained {} into {}", names.join(","), cfg.out.display()))
        }
        Command::Eval(c) => {
            let cfg = c.resolve()?;
            let report = harness::cmd_eval(&cfg)?;
            Ok(report.to_csv().trim_end().to_string())
        }
        Command::Robust(c) => {
            let cfg = c.resolve()?;
            let rows = harness::cmd_robust(&cfg)?;
            let parts: Vec<String> = rows.iter().map(|r| format!("{}={}", r.model, r.avg_inserted_rank)).collect();
            Ok(format!("average inserted rank: {}", parts.join(" ")))
        }
        Command::Casestudy { common, user, horizon } => {
            let mut cfg = common.resolve()?;
            if let Some(u) = user {
                cfg.casestudy.user = u;
            }
            if let Some(h) = horizon {
                cfg.casestudy.horizon = h;
            }
            let cs = harness::cmd_casestudy(&cfg)?;
            let parts: Vec<String> = cs
                .lists
                .iter()
                .map(|(m, _)| format!("{m}={}", cs.distinct(m).unwrap_or(0)))
                .collect();
            Ok(format!("distinct items for user {}: {}", cs.user, parts.join(" ")))
        }
        Command::Loop { common, rounds, boost } => {
            let mut cfg = common.resolve()?;
            if let Some(r) = rounds {
                cfg.feedback.rounds = r;
            }
            if let Some(b) = boost {
                cfg.feedback.exposure_boost = b;
            }
            let curve = harness::cmd_loop(&cfg)?;
            Ok(format!("wrote {} rounds to {}", curve.len(), cfg.out.join("loop.csv").display()))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
