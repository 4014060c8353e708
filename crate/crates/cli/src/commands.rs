use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Serialize;

use semtlc_core::agent::{
    checkpoint, derive_seed, dqn_train, eval_seed, greedy_action, mode_of, observe, ActionMask, MlpParams,
    TrainingReport,
};
use semtlc_core::perception::render_frame;
use semtlc_core::semcom::{comm_report, write_comm_csv};
use semtlc_core::sim::{fixed_time_action, write_log_csv};
use semtlc_core::xai::{explain_frame, export_saliency, rank_and_select, tile_regions, write_saliency_csv};
use semtlc_core::xai::{FeatureReport, SaliencyMap, TileGrid};
use semtlc_core::{Action, EpisodeMetrics, Image, ObsMode, Phase, SimConfig, StepOutcome, World};

use crate::config::RunConfig;
use crate::manifest::Manifest;

const STREAM_SALIENCY: u64 = 4;

pub const CHECKPOINT_FILE: &str = "model.smtc";

pub fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn create_file(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn csv_writer(path: &Path) -> anyhow::Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(create_file(path)?))
}

/// Decides one action per step.
pub enum Controller {
    FixedTime { green_split_steps: u32 },
    Greedy(MlpParams),
}

impl Controller {
    pub fn act(&self, world: &World) -> anyhow::Result<Action> {
        Ok(match self {
            Controller::FixedTime { green_split_steps } => fixed_time_action(world, *green_split_steps),
            Controller::Greedy(params) => {
                let q = params.forward(&observe(world, mode_of(params)?))?;
                greedy_action(&q, ActionMask::of(world))
            }
        })
    }

    pub fn obs_mode(&self) -> Option<ObsMode> {
        match self {
            Controller::FixedTime { .. } => None,
            Controller::Greedy(params) => mode_of(params).ok(),
        }
    }
}

/// One decision of a recorded episode.
#[derive(Clone, Debug)]
pub struct Decision {
    pub time: u64,
    /// Phase shown when the decision was taken.
    pub phase: Phase,
    pub action: Action,
    pub outcome: StepOutcome,
}

/// Runs `controller` from `seed` for at most `steps` decisions.
pub fn run_controller(controller: &Controller, sim: &SimConfig, seed: u64, steps: u64) -> anyhow::Result<(World, Vec<Decision>)> {
    let mut world = World::new(sim.clone(), seed)?;
    let mut decisions = Vec::new();
    while !world.is_finished() && world.time() < steps {
        let time = world.time();
        let phase = world.phase();
        let action = controller.act(&world)?;
        let outcome = world.step(action)?;
        decisions.push(Decision {
            time,
            phase,
            action,
            outcome,
        });
    }
    Ok((world, decisions))
}

#[derive(Clone, Debug, Serialize)]
struct EvaluationRow<'a> {
    method: &'a str,
    seed: u64,
    avg_travel_time_s: f64,
    avg_delay_s: f64,
    vehicles_completed: u64,
    total_steps: u64,
    total_reward: f64,
    switches: u64,
}

fn write_evaluation(path: &Path, method: &str, seed: u64, metrics: &EpisodeMetrics, reward: f64, switches: u64) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.serialize(EvaluationRow {
        method,
        seed,
        avg_travel_time_s: metrics.avg_travel_time,
        avg_delay_s: metrics.avg_delay,
        vehicles_completed: metrics.vehicles_completed,
        total_steps: metrics.total_steps,
        total_reward: reward,
        switches,
    })?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Timing {
    wall_time_seconds: f64,
    gradient_steps: u64,
    env_steps: u64,
}

/// Trains one agent and writes `model.smtc`, `training.csv`,
/// `evaluation.csv`, `comm.csv`, `manifest.json` and `timing.json` into
/// `out`. `timing.json` is the only file that differs between reruns.
pub fn cmd_train(config: &RunConfig, mode: ObsMode, seed: u64, out: &Path) -> anyhow::Result<(MlpParams, TrainingReport)> {
    ensure_dir(out)?;
    let mut config = config.clone();
    config.train.obs_mode = mode;
    config.validate()?;
    let (params, report) = dqn_train(&config.sim, &config.train, seed)?;

    checkpoint::save(&params, out.join(CHECKPOINT_FILE))?;
    report.write_csv(create_file(&out.join("training.csv"))?)?;
    let eval = &report.evaluation;
    write_evaluation(
        &out.join("evaluation.csv"),
        mode.name(),
        seed,
        &eval.metrics,
        eval.total_reward,
        eval.switches,
    )?;
    write_comm_csv(&[comm_report(eval.metrics.total_steps, mode)], create_file(&out.join("comm.csv"))?)?;
    Manifest::new("train", &config, &[seed], Some(mode)).write(out)?;
    let timing = Timing {
        wall_time_seconds: report.wall_time_seconds,
        gradient_steps: report.gradient_steps,
        env_steps: report.env_steps,
    };
    std::fs::write(out.join("timing.json"), serde_json::to_string_pretty(&timing)? + "\n")?;
    Ok((params, report))
}

pub fn load_checkpoint(path: &Path) -> anyhow::Result<MlpParams> {
    checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Evaluates a checkpoint, or the fixed-time plan when none is given, on the
/// held-out episode of `seed`.
pub fn cmd_eval(config: &RunConfig, checkpoint: Option<&Path>, seed: u64, out: &Path) -> anyhow::Result<EpisodeMetrics> {
    ensure_dir(out)?;
    config.validate()?;
    let controller = match checkpoint {
        Some(p) => Controller::Greedy(load_checkpoint(p)?),
        None => Controller::FixedTime {
            green_split_steps: config.static_split_steps,
        },
    };
    let (world, decisions) = run_controller(&controller, &config.sim, eval_seed(seed), u64::MAX)?;
    let metrics = world.metrics();
    let reward = decisions.iter().fold(0.0, |acc, d| acc + d.outcome.reward);
    let switches = decisions.iter().filter(|d| d.outcome.switch_initiated).count() as u64;
    let method = controller.obs_mode().map_or("static", |m| m.name());
    write_evaluation(&out.join("evaluation.csv"), method, seed, &metrics, reward, switches)?;
    write_log_csv(world.log(), create_file(&out.join("steps.csv"))?)?;
    if let Some(mode) = controller.obs_mode() {
        write_comm_csv(&[comm_report(metrics.total_steps, mode)], create_file(&out.join("comm.csv"))?)?;
    }
    Manifest::new("eval", config, &[seed], controller.obs_mode()).write(out)?;
    Ok(metrics)
}

/// The `count` decision frames ending with the first switch the policy
/// initiates out of EW green (falling back to its first switch of any kind).
pub fn frames_before_switch(decisions: &[Decision], count: usize) -> Option<Vec<u64>> {
    let switches = || decisions.iter().filter(|d| d.outcome.switch_initiated && d.time + 1 >= count as u64);
    let pick = switches()
        .find(|d| d.phase == Phase::EwGreen)
        .or_else(|| switches().next())?;
    Some((pick.time + 1 - count as u64..=pick.time).collect())
}

/// Frames and phases seen by `controller` at the given decision times.
pub fn capture_frames(controller: &Controller, sim: &SimConfig, seed: u64, steps: &[u64]) -> anyhow::Result<Vec<(u64, Image, Phase)>> {
    let wanted: BTreeSet<u64> = steps.iter().copied().collect();
    let Some(&last) = wanted.last() else {
        return Ok(Vec::new());
    };
    if last > sim.horizon_steps {
        bail!("step {last} lies beyond the horizon of {} steps", sim.horizon_steps);
    }
    let mut world = World::new(sim.clone(), seed)?;
    let mut frames = Vec::with_capacity(wanted.len());
    loop {
        if wanted.contains(&world.time()) {
            frames.push((world.time(), render_frame(&world), world.phase()));
        }
        if world.time() >= last {
            break;
        }
        let action = controller.act(&world)?;
        world.step(action)?;
    }
    Ok(frames)
}

pub struct ExplainedFrame {
    pub step: u64,
    pub phase: Phase,
    pub map: SaliencyMap,
    pub report: FeatureReport,
}

pub struct ExplainOptions {
    pub grid: TileGrid,
    pub permutations: usize,
    /// Decision times to explain; `None` picks the frames before a switch.
    pub steps: Option<Vec<u64>>,
    pub frames_before_switch: usize,
    /// Approaches flagged as selected in each ranking.
    pub top_k: usize,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self {
            grid: TileGrid::default(),
            permutations: 2_000,
            steps: None,
            frames_before_switch: 10,
            top_k: 2,
        }
    }
}

/// Saliency of an image-mode checkpoint on the held-out episode of `seed`.
/// Per step writes `frame_TTTTT.ppm`, `saliency_TTTTT.csv` and
/// `heatmap_TTTTT.ppm`; across steps `ranking.csv`.
pub fn cmd_explain(
    config: &RunConfig,
    checkpoint: &Path,
    seed: u64,
    options: &ExplainOptions,
    out: &Path,
) -> anyhow::Result<Vec<ExplainedFrame>> {
    config.validate()?;
    let params = load_checkpoint(checkpoint)?;
    let mode = mode_of(&params)?;
    if mode != ObsMode::Image {
        return Err(semtlc_core::Error::UnsupportedMode(format!("saliency needs an image checkpoint, got {mode}")).into());
    }
    ensure_dir(out)?;
    let world_seed = eval_seed(seed);
    let controller = Controller::Greedy(params);
    let steps = match &options.steps {
        Some(s) => s.clone(),
        None => {
            let (_, decisions) = run_controller(&controller, &config.sim, world_seed, u64::MAX)?;
            frames_before_switch(&decisions, options.frames_before_switch)
                .context("the policy never switches; pass explicit steps")?
        }
    };
    let Controller::Greedy(params) = &controller else { unreachable!() };
    let regions = tile_regions(&options.grid, config.sim.approach_length_cells);

    let mut explained = Vec::new();
    for (step, frame, phase) in capture_frames(&controller, &config.sim, world_seed, &steps)? {
        let map = explain_frame(
            params,
            &frame,
            phase,
            options.grid,
            options.permutations,
            derive_seed(seed, STREAM_SALIENCY, step),
            step,
        )?;
        let report = rank_and_select(&map, &regions, options.top_k)?;
        frame.write_ppm(out.join(format!("frame_{step:05}.ppm")))?;
        export_saliency(&map, &frame, out.join(format!("heatmap_{step:05}.ppm")))?;
        write_saliency_csv(&map, &regions, create_file(&out.join(format!("saliency_{step:05}.csv")))?)?;
        explained.push(ExplainedFrame {
            step,
            phase,
            map,
            report,
        });
    }

    let mut w = csv_writer(&out.join("ranking.csv"))?;
    w.write_record(["step", "phase", "greedy", "rank", "approach", "score", "selected", "peak_tile", "inconclusive"])?;
    for e in &explained {
        for (rank, s) in e.report.ranked.iter().enumerate() {
            w.write_record([
                e.step.to_string(),
                e.phase.index().to_string(),
                format!("{:?}", e.map.reference.greedy).to_lowercase(),
                (rank + 1).to_string(),
                s.approach.to_string(),
                s.score.to_string(),
                s.selected.to_string(),
                s.peak_tile.map(|t| t.to_string()).unwrap_or_default(),
                e.report.inconclusive.to_string(),
            ])?;
        }
    }
    w.flush()?;
    let mut manifest = Manifest::new("explain", config, &[seed], Some(mode));
    manifest.command = format!(
        "explain grid={}x{} perms={} steps={:?}",
        options.grid.columns(),
        options.grid.rows(),
        options.permutations,
        steps
    );
    manifest.write(out)?;
    Ok(explained)
}

/// Writes `frame_TTTTT.ppm` for each requested decision time of the held-out
/// episode of `seed`, driven by the checkpoint or the fixed-time plan.
pub fn cmd_render(config: &RunConfig, checkpoint: Option<&Path>, seed: u64, steps: &[u64], out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    config.validate()?;
    ensure_dir(out)?;
    let controller = match checkpoint {
        Some(p) => Controller::Greedy(load_checkpoint(p)?),
        None => Controller::FixedTime {
            green_split_steps: config.static_split_steps,
        },
    };
    let mut paths = Vec::new();
    for (step, frame, _) in capture_frames(&controller, &config.sim, eval_seed(seed), steps)? {
        let path = out.join(format!("frame_{step:05}.ppm"));
        frame.write_ppm(&path)?;
        paths.push(path);
    }
    Ok(paths)
}
