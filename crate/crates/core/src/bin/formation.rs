use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use formation_marl::checkpoint::Checkpoint;
use formation_marl::config::TrainConfig;
use formation_marl::harness::{evaluate, read_records, run_baseline, train, write_eval_dir, write_trace_csv, RunDir};

#[derive(Parser)]
#[command(name = "formation", about = "Train and evaluate multi-agent formation control policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a JSON or TOML config; missing fields take defaults.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use the small desk-scale preset instead of the full defaults.
        #[arg(long, conflicts_with = "config")]
        smoke: bool,
        #[arg(long)]
        out: PathBuf,
        /// Override the seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of episodes from the config.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Greedy rollouts of a checkpoint's actors.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rollouts of the scripted proportional controller.
    Baseline {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the CSV trace of one stored episode of a run or eval directory.
    ExportTraces {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        episode: usize,
        /// Defaults to `<run>/traces/episode_NNNNNN.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&PathBuf>) -> anyhow::Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(TrainConfig::default()),
    }
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Train {
            config,
            smoke,
            out,
            seed,
            episodes,
        } => {
            let mut cfg = if smoke { TrainConfig::smoke(0) } else { load_config(config.as_ref())? };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(e) = episodes {
                cfg.episodes = e;
            }
            cfg.validate()?;
            let start = Instant::now();
            let report_every = (cfg.episodes / 20).max(1);
            let outcome = train(&cfg, Some(&out), |m| {
                if (m.episode + 1) % report_every == 0 {
                    eprintln!(
                        "episode {:>6}  reward {:>9.2}  trailing mean {:>9.2}  {}  {:.0}s",
                        m.episode + 1,
                        m.total_reward,
                        m.trailing_mean_reward,
                        m.outcome,
                        start.elapsed().as_secs_f64()
                    );
                }
            })?;
            println!(
                "trained {} episodes ({} updates) into {}",
                outcome.metrics.len(),
                outcome.learner.train_steps(),
                out.display()
            );
        }
        Command::Eval {
            checkpoint,
            episodes,
            out,
            seed,
        } => {
            let ck = Checkpoint::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let (summary, records) = evaluate(&ck.learner, &ck.config, episodes, seed)?;
            write_eval_dir(&out, &summary, &records)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Baseline {
            config,
            episodes,
            out,
            seed,
        } => {
            let cfg = load_config(config.as_ref())?;
            let (summary, records) = run_baseline(&cfg, episodes, seed)?;
            write_eval_dir(&out, &summary, &records)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::ExportTraces { run, episode, out } => {
            let dir = RunDir::new(&run);
            let records = read_records(&dir.records())?;
            let Some(record) = records.iter().find(|r| r.episode == episode) else {
                bail!("episode {episode} has no stored trace in {}", dir.records().display());
            };
            let path = out.unwrap_or_else(|| dir.trace_csv(episode));
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            let mut w = BufWriter::new(File::create(&path)?);
            write_trace_csv(record, &mut w)?;
            w.flush()?;
            println!("{}", path.display());
        }
    }
    Ok(())
}
