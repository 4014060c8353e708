use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use semtlc_cli::commands::CHECKPOINT_FILE;
use semtlc_cli::config::{parse_seeds, parse_steps};
use semtlc_cli::{cmd_compare, cmd_eval, cmd_explain, cmd_render, cmd_train, ExplainOptions, RunConfig};
use semtlc_core::xai::TileGrid;
use semtlc_core::ObsMode;

#[derive(Parser)]
#[command(name = "semtlc", version, about = "Signal control with image or semantic observations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; omitted sections take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured number of training episodes.
    #[arg(long)]
    episodes: Option<usize>,
    /// Overrides the configured fixed-time green split, in steps.
    #[arg(long)]
    static_split: Option<u32>,
}

impl Common {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut config = RunConfig::load(self.config.as_deref())?;
        if let Some(e) = self.episodes {
            config.train.episodes = e;
        }
        if let Some(s) = self.static_split {
            config.static_split_steps = s;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a controller and save its checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "semantic")]
        obs_mode: ObsMode,
    },
    /// Evaluate a checkpoint, or the fixed-time plan without one.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Shapley saliency of an image-mode checkpoint.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Image-mode checkpoint to explain.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Tile columns by rows.
        #[arg(long, default_value = "8x8")]
        grid: TileGrid,
        /// Sampled permutations per frame.
        #[arg(long, default_value_t = 2000)]
        perms: usize,
        /// `A..B` or `t1,t2,...`; defaults to the frames before the first learned switch.
        #[arg(long)]
        steps: Option<String>,
    },
    /// Fixed-time, image-mode and semantic-mode controllers over several seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "0,1,2,3,4")]
        seeds: String,
    },
    /// Write PPM frames of an episode.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `A..B` or `t1,t2,...`.
        #[arg(long, default_value = "0..60")]
        steps: String,
        /// Drive the episode with this checkpoint instead of the fixed-time plan.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { common, seed, obs_mode } => {
            let config = common.load()?;
            let (_, report) = cmd_train(&config, obs_mode, seed, &common.out)?;
            let m = report.evaluation.metrics;
            println!(
                "{obs_mode}: {} episodes in {:.1} s; eval travel {:.2} s, delay {:.2} s; checkpoint {}",
                report.episode_returns.len(),
                report.wall_time_seconds,
                m.avg_travel_time,
                m.avg_delay,
                common.out.join(CHECKPOINT_FILE).display()
            );
        }
        Command::Eval { common, seed, checkpoint } => {
            let config = common.load()?;
            let m = cmd_eval(&config, checkpoint.as_deref(), seed, &common.out)?;
            println!(
                "travel {:.2} s, delay {:.2} s over {} vehicles",
                m.avg_travel_time, m.avg_delay, m.vehicles_completed
            );
        }
        Command::Explain {
            common,
            seed,
            checkpoint,
            grid,
            perms,
            steps,
        } => {
            let config = common.load()?;
            let options = ExplainOptions {
                grid,
                permutations: perms,
                steps: steps.as_deref().map(parse_steps).transpose()?,
                ..ExplainOptions::default()
            };
            for e in cmd_explain(&config, &checkpoint, seed, &options, &common.out)? {
                let top = e.report.top().map_or("inconclusive".to_string(), |a| a.to_string());
                println!("step {:>5}  phase {}  top {top}", e.step, e.phase.index());
            }
        }
        Command::Compare { common, seeds } => {
            let config = common.load()?;
            let table = cmd_compare(&config, &parse_seeds(&seeds)?, &common.out)?;
            print!("{}", table.render_text());
        }
        Command::Render {
            common,
            seed,
            steps,
            checkpoint,
        } => {
            let config = common.load()?;
            let paths = cmd_render(&config, checkpoint.as_deref(), seed, &parse_steps(&steps)?, &common.out)?;
            println!("wrote {} frames to {}", paths.len(), common.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
