use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dogfight_harness::checkpoint::load_checkpoint;
use dogfight_harness::training::train_seed;
use dogfight_harness::{export_trajectory, HarnessError, Result, RunConfig, Trainer};

#[derive(Parser)]
#[command(name = "dogfight", about = "Train, evaluate and inspect multi-agent air-combat policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed (or one resumed seed).
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory (one sub-directory per algorithm and seed).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Total environment steps per seed.
        #[arg(long)]
        timesteps: Option<u64>,
        /// Continue from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Accept a checkpoint whose version or configuration digest differs.
        #[arg(long)]
        force: bool,
    },
    /// Greedy evaluation of a checkpoint.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        /// Seed of the evaluation episodes.
        #[arg(long, default_value_t = 0)]
        eval_seed: u64,
        #[arg(long)]
        force: bool,
    },
    /// Write one greedy episode as a per-inner-step table.
    Export {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Destination CSV file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        eval_seed: u64,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Key-value configuration file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    algo: Option<String>,
    /// Training seed (replaces the configured seed list).
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let flags = [("task", &self.task), ("protocol", &self.protocol), ("algorithm", &self.algo)];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| HarnessError::Config(format!("expected KEY=VALUE, got '{kv}'")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

/// Trainer holding the checkpoint's state, for the checkpoint's own seed.
fn restore(cfg: &RunConfig, path: &PathBuf, force: bool) -> Result<Trainer> {
    let seed = cfg.seeds[0];
    let ckpt = load_checkpoint(path, Some(&cfg.digest(seed)), force)?;
    Trainer::from_checkpoint(cfg, seed, &ckpt)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, out, timesteps, checkpoint, force } => {
            let mut cfg = common.load()?;
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if let Some(t) = timesteps {
                cfg.total_timesteps = t;
            }
            cfg.validate()?;
            if checkpoint.is_some() && cfg.seeds.len() != 1 {
                return Err(HarnessError::Config("resuming needs exactly one seed".into()));
            }
            for &seed in &cfg.seeds {
                let s = train_seed(&cfg, seed, checkpoint.as_deref(), force)?;
                println!(
                    "seed {seed}: {} steps, {} metrics rows, eval average {:.6} max {:.6} -> {}",
                    s.timestep,
                    s.metrics_rows,
                    s.final_eval.average,
                    s.final_eval.max,
                    s.dir.display()
                );
            }
        }
        Command::Eval { common, checkpoint, episodes, eval_seed, force } => {
            let cfg = common.load()?;
            cfg.validate()?;
            let trainer = restore(&cfg, &checkpoint, force)?;
            let res = trainer.evaluate(episodes.unwrap_or(cfg.eval_episodes), eval_seed)?;
            println!("average_episode_reward = {}", res.average);
            println!("max_episode_reward = {}", res.max);
        }
        Command::Export { common, checkpoint, out, eval_seed, force } => {
            let cfg = common.load()?;
            cfg.validate()?;
            let trainer = restore(&cfg, &checkpoint, force)?;
            let s = export_trajectory(&trainer.pilots(), &cfg, eval_seed, &out)?;
            println!("{} rows over {} decisions, episode reward {}", s.rows, s.decision_steps, s.episode_reward);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
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
