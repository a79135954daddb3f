use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pathrl_core::checkpoint::Checkpoint;
use pathrl_core::config::ExperimentConfig;
use pathrl_core::mining::{mine, synthetic_sequences, write_demonstrations, MiningOptions};
use pathrl_core::oracle::ToyInstance;
use pathrl_core::rewards::RewardWeights;
use pathrl_core::theory::{default_grid, verify_grid, DEFAULT_HORIZON, DEFAULT_STEP};
use pathrl_core::trainer::{
    collapse_demo, evaluate, pretrain, rollout_at_k, run_hash, write_collapse_csv, write_metrics_csv,
    write_profile_csv, Decoding, Environment, Trainer,
};
use pathrl_core::Error;
use serde_json::json;

const ORACLE_CONFIGS: u64 = 20;
const ORACLE_TOLERANCE: f64 = 1e-6;
const FD_STEP: f64 = 1e-5;

#[derive(Parser)]
#[command(name = "pathrl", version, about = "Target-guided path generation with reinforcement learning")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML config file; omitted sections use defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted override such as `train.lr=0.5`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out", global = true)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Supervised pretraining on mined demonstrations.
    Pretrain,
    /// Pretraining plus one warm-up epoch of reward statistics.
    Warmup,
    /// Full RL loop; writes metrics.csv, summary.json and checkpoints.
    Train {
        /// Continue from a checkpoint written by the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluates a checkpointed policy on held-out inputs.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Use the prior stored in the checkpoint instead of the policy.
        #[arg(long)]
        prior: bool,
        #[arg(long)]
        greedy: bool,
    },
    /// Single-reward runs with the standard estimator, raw and normalized.
    CollapseDemo,
    /// Integrates the stop-only flow on the default grid and checks the bound.
    TheoryVerify,
    /// Compares exact gradients with finite differences on toy instances.
    OracleCheck,
    /// Mines demonstrations from synthetic user sequences.
    Mine,
    /// Best IoI/IoR over K samples per held-out input.
    RolloutAtK {
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
        k: Vec<usize>,
        /// Checkpoint to sample from; defaults to a freshly pretrained prior.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

enum Failure {
    Core(Error),
    Acceptance(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(e.into())
    }
}

type CliResult = Result<(), Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::NonFinite(_) | Error::Integration { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Acceptance(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(4)
        }
    }
}

fn load_config(g: &Global) -> Result<ExperimentConfig, Error> {
    let base = match &g.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::default(),
    };
    let mut cfg = base.with_overrides(&g.overrides)?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Error> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> CliResult {
    fs::write(dir.join(name), serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn run(cli: Cli) -> CliResult {
    let g = &cli.global;
    let cfg = load_config(g)?;
    let out = &g.out;
    fs::create_dir_all(out)?;
    match cli.command {
        Command::Pretrain => {
            let env = Environment::build(&cfg)?;
            let (prior, report) = pretrain(&cfg, &env)?;
            let ck = Checkpoint {
                config_hash: run_hash(&cfg),
                seed: cfg.seed,
                next_epoch: 0,
                policy: prior.params().clone(),
                prior: prior.params().clone(),
                stats: None,
                critic: None,
            };
            ck.save(&out.join("pretrain.ckpt"))?;
            write_json(
                out,
                "pretrain.json",
                &json!({
                    "demonstrations": env.demonstrations.len(),
                    "steps": report.steps,
                    "log_likelihood": report.log_likelihood,
                }),
            )?;
            println!(
                "pretrained on {} demonstrations; final log-likelihood {:.4}",
                env.demonstrations.len(),
                report.log_likelihood.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Warmup => {
            let trainer = Trainer::new(&cfg)?;
            trainer.checkpoint().save(&out.join("warmup.ckpt"))?;
            let stats = trainer.stats().map(|s| {
                json!({
                    "count": s.count,
                    "mean": s.mean,
                    "std": s.std(),
                    "frozen": s.frozen,
                })
            });
            write_json(out, "warmup.json", &json!({ "stats": stats }))?;
            println!("warm-up statistics written to {}", out.join("warmup.json").display());
        }
        Command::Train { resume } => {
            let mut trainer = match resume {
                Some(path) => Trainer::from_checkpoint(&cfg, Checkpoint::load(&path)?)?,
                None => Trainer::new(&cfg)?,
            };
            let remaining = (cfg.train.epochs as u64).saturating_sub(trainer.next_epoch()) as usize;
            let start = trainer.next_epoch();
            let mut metrics = Vec::with_capacity(remaining);
            for _ in 0..remaining {
                let m = trainer.step()?;
                println!(
                    "epoch {:>4}  length {:.3}  diversity {:.3}  reward {:.4}  eval ioi {:.4}",
                    m.epoch, m.mean_length, m.diversity, m.mean_reward, m.eval_ioi
                );
                metrics.push(m);
            }
            write_metrics_csv(&metrics, create(out, "metrics.csv")?)?;
            let ck = trainer.checkpoint();
            ck.save(&out.join("final.ckpt"))?;
            write_json(
                out,
                "summary.json",
                &json!({
                    "config_hash": hex(&cfg.hash()),
                    "seed": cfg.seed,
                    "start_epoch": start,
                    "next_epoch": trainer.next_epoch(),
                    "final": metrics.last(),
                }),
            )?;
        }
        Command::Eval {
            checkpoint,
            prior,
            greedy,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            if ck.config_hash != run_hash(&cfg) {
                return Err(Error::Config("checkpoint was written under a different config".into()).into());
            }
            let env = Environment::build(&cfg)?;
            let params = if prior { &ck.prior } else { &ck.policy };
            let decoding = if greedy {
                Decoding::Greedy
            } else {
                Decoding::Sampled { seed: cfg.seed }
            };
            let report = evaluate(params, &env.sim, &env.eval_tasks, cfg.policy.l_max, decoding)?;
            let value = serde_json::to_value(report)?;
            write_json(out, "eval.json", &value)?;
            println!("{}", serde_json::to_string_pretty(&value)?);
        }
        Command::CollapseDemo => {
            let runs = collapse_demo(&cfg)?;
            write_collapse_csv(&runs, create(out, "collapse.csv")?)?;
            write_profile_csv(&runs, create(out, "profile.csv")?)?;
            for r in &runs {
                println!(
                    "{:<4} {:<10} final length {:.3}  diversity {:.3}  pooled E[r_t] {:.4}",
                    r.component,
                    format!("{:?}", r.centering).to_lowercase(),
                    r.length.last().copied().unwrap_or(0.0),
                    r.diversity.last().copied().unwrap_or(0.0),
                    r.pooled_mean
                );
            }
        }
        Command::TheoryVerify => {
            let results = verify_grid(&default_grid(), DEFAULT_STEP, DEFAULT_HORIZON)?;
            let dir = out.join("theory");
            fs::create_dir_all(&dir)?;
            let mut failed = 0;
            for (k, (outcome, trace)) in results.iter().enumerate() {
                let p = outcome.point;
                trace.write_csv(create(&dir, &format!("trace_{k:02}.csv"))?, p.mu_min)?;
                let ok = outcome.passed();
                failed += usize::from(!ok);
                println!(
                    "{} mu_min={} l_max={} theta0={} final p={:.3e} max violation {:.3e}",
                    if ok { "PASS" } else { "FAIL" },
                    p.mu_min,
                    p.l_max,
                    p.theta0,
                    outcome.final_p,
                    outcome.bound.max_violation
                );
            }
            let outcomes: Vec<_> = results.iter().map(|(o, _)| o).collect();
            write_json(out, "theory.json", &serde_json::to_value(&outcomes)?)?;
            if failed > 0 {
                return Err(Failure::Acceptance(format!("{failed} grid points failed")));
            }
        }
        Command::OracleCheck => {
            let weights = RewardWeights::default();
            let mut worst: f64 = 0.0;
            let mut rows = Vec::new();
            for seed in 0..ORACLE_CONFIGS {
                let toy = ToyInstance::generate(cfg.seed.wrapping_add(seed))?;
                let err = toy.gradient_check(&weights, FD_STEP)?;
                worst = worst.max(err);
                println!(
                    "config {seed:>2}: items {} l_max {} relative error {err:.3e}",
                    toy.sim.catalog().len(),
                    toy.l_max
                );
                rows.push(json!({ "seed": seed, "relative_error": err }));
            }
            write_json(out, "oracle.json", &json!({ "worst": worst, "configs": rows }))?;
            if worst.is_nan() || worst >= ORACLE_TOLERANCE {
                return Err(Failure::Acceptance(format!("worst relative error {worst:.3e}")));
            }
        }
        Command::Mine => {
            let env = Environment::build(&cfg)?;
            let d = &cfg.data;
            let users = synthetic_sequences(env.sim.catalog(), d.n_users, d.sequence_length, d.walk_bias, cfg.seed);
            let opts = MiningOptions {
                archive_trailing: d.archive_trailing,
            };
            let mut demos = Vec::new();
            let mut calls = 0;
            for s in &users {
                let o = mine(s, d.history_length, &env.oracle, env.sim.catalog(), opts)?;
                calls += o.oracle_calls;
                demos.extend(o.demonstrations);
            }
            fs::write(out.join("demonstrations.txt"), write_demonstrations(&demos))?;
            println!("{} demonstrations from {} users, {calls} oracle calls", demos.len(), users.len());
        }
        Command::RolloutAtK { k, checkpoint } => {
            let env = Environment::build(&cfg)?;
            let params = match checkpoint {
                Some(path) => Checkpoint::load(&path)?.policy,
                None => pretrain(&cfg, &env)?.0.params().clone(),
            };
            let mut rows = Vec::new();
            for &kk in &k {
                let r = rollout_at_k(&params, &env.sim, &env.eval_tasks, cfg.policy.l_max, kk, cfg.seed)?;
                println!("K={:<4} max-IoI {:.4}  max-IoR {:.4}", kk, r.mean_max_ioi, r.mean_max_ior);
                rows.push(json!({ "k": kk, "mean_max_ioi": r.mean_max_ioi, "mean_max_ior": r.mean_max_ior }));
            }
            write_json(out, "rollout_at_k.json", &serde_json::Value::Array(rows))?;
        }
    }
    Ok(())
}
