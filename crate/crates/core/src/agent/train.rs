use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{greedy_action, layer_sizes, mlp_gradients, mode_of, observe, select_action, sgd_step};
use super::{adam_step, ActionMask, AdamState, MlpParams, ReplayBuffer, Transition};
use crate::error::{Error, Result};
use crate::semcom::ObsMode;
use crate::sim::{Action, EpisodeMetrics, SimConfig, World};

const STREAM_AGENT: u64 = 1;
const STREAM_TRAIN_EPISODE: u64 = 2;
const STREAM_EVAL: u64 = 3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed for the `index`-th draw of a named stream.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ splitmix64(stream)) ^ index)
}

/// Seed of the held-out evaluation episode paired with a training seed.
pub fn eval_seed(seed: u64) -> u64 {
    derive_seed(seed, STREAM_EVAL, 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub obs_mode: ObsMode,
    pub learning_rate: f64,
    pub discount: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub target_sync_interval: u64,
    pub episodes: usize,
    /// Environment steps per gradient step.
    pub train_interval: u64,
    /// Transitions collected before the first gradient step.
    pub warmup_steps: usize,
    pub grad_clip_norm: f64,
    /// Multiplier applied to simulator rewards before they enter the replay buffer.
    pub reward_scale: f64,
    pub optimizer: Optimizer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            obs_mode: ObsMode::Semantic,
            learning_rate: 1e-3,
            discount: 0.97,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 20_000,
            buffer_capacity: 50_000,
            batch_size: 64,
            target_sync_interval: 500,
            episodes: 200,
            train_interval: 1,
            warmup_steps: 1_000,
            grad_clip_norm: 10.0,
            reward_scale: 0.01,
            optimizer: Optimizer::Adam,
        }
    }
}

impl TrainConfig {
    pub fn with_mode(obs_mode: ObsMode) -> Self {
        Self {
            obs_mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn bad(field: &'static str, reason: &str) -> Result<()> {
            Err(Error::Config {
                field,
                reason: reason.to_string(),
            })
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        if !(0.0..1.0).contains(&self.discount) {
            return bad("discount", "must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon_start", "epsilon bounds must be probabilities");
        }
        if self.epsilon_end > self.epsilon_start {
            return bad("epsilon_end", "must not exceed epsilon_start");
        }
        if self.buffer_capacity == 0 {
            return bad("buffer_capacity", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.target_sync_interval == 0 {
            return bad("target_sync_interval", "must be positive");
        }
        if self.train_interval == 0 {
            return bad("train_interval", "must be positive");
        }
        if !(self.grad_clip_norm.is_finite() && self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm", "must be positive");
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return bad("reward_scale", "must be positive");
        }
        Ok(())
    }

    /// Linear decay from start to end over `epsilon_decay_steps`.
    pub fn epsilon_at(&self, step: u64) -> f64 {
        if self.epsilon_decay_steps == 0 || step >= self.epsilon_decay_steps {
            return self.epsilon_end;
        }
        let frac = step as f64 / self.epsilon_decay_steps as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Greedy-policy episode result.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: EpisodeMetrics,
    pub total_reward: f64,
    pub switches: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub obs_mode: ObsMode,
    /// Monotonic time spent in the training loop, evaluation excluded.
    pub wall_time_seconds: f64,
    pub episode_returns: Vec<f64>,
    pub gradient_steps: u64,
    pub env_steps: u64,
    pub evaluation: Evaluation,
}

impl TrainingReport {
    /// Writes `episode,return` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        writer.write_record(["episode", "return"])?;
        for (i, r) in self.episode_returns.iter().enumerate() {
            writer.write_record([i.to_string(), r.to_string()])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// One decision made during training, as seen by an observer.
pub struct TrainStep<'a> {
    pub episode: usize,
    pub time: u64,
    pub obs: &'a [f64],
    pub action: Action,
    pub reward: f64,
}

pub fn dqn_train(sim: &SimConfig, train: &TrainConfig, seed: u64) -> Result<(MlpParams, TrainingReport)> {
    dqn_train_observed(sim, train, seed, |_| {})
}

pub fn dqn_train_observed<F>(
    sim: &SimConfig,
    train: &TrainConfig,
    seed: u64,
    mut observer: F,
) -> Result<(MlpParams, TrainingReport)>
where
    F: FnMut(&TrainStep<'_>),
{
    sim.validate()?;
    train.validate()?;
    let mode = train.obs_mode;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_AGENT, 0));
    let mut online = MlpParams::init(&layer_sizes(mode), &mut rng)?;
    let mut target = online.clone();
    let mut buffer = ReplayBuffer::new(train.buffer_capacity);
    let mut adam = AdamState::new(&online);
    let mut episode_returns = Vec::with_capacity(train.episodes);
    let mut global_step = 0u64;
    let mut gradient_steps = 0u64;

    let started = Instant::now();
    for episode in 0..train.episodes {
        let mut world = World::new(sim.clone(), derive_seed(seed, STREAM_TRAIN_EPISODE, episode as u64))?;
        let mut obs: Arc<[f64]> = observe(&world, mode).into();
        let mut episode_return = 0.0;
        while !world.is_finished() {
            let mask = ActionMask::of(&world);
            let q = online.forward(&obs)?;
            if !q.iter().all(|v| v.is_finite()) {
                return Err(Error::Divergence(format!(
                    "non-finite Q-values at episode {episode}, step {}",
                    world.time()
                )));
            }
            let action = select_action(&q, mask, train.epsilon_at(global_step), &mut rng);
            let outcome = world.step(action)?;
            observer(&TrainStep {
                episode,
                time: outcome.time,
                obs: &obs,
                action,
                reward: outcome.reward,
            });
            episode_return += outcome.reward;

            let next_obs: Arc<[f64]> = observe(&world, mode).into();
            buffer.push(Transition {
                obs,
                action,
                reward: outcome.reward * train.reward_scale,
                next_obs: next_obs.clone(),
                terminal: world.is_finished(),
                next_mask: ActionMask::of(&world),
            });
            obs = next_obs;
            global_step += 1;

            if buffer.len() >= train.warmup_steps.max(train.batch_size)
                && global_step % train.train_interval == 0
            {
                let batch = buffer.sample(train.batch_size, &mut rng);
                let (mut grads, loss) = mlp_gradients(&online, &batch, &target, train.discount)?;
                match train.optimizer {
                    Optimizer::Sgd => {
                        sgd_step(&mut online, &mut grads, train.learning_rate, train.grad_clip_norm);
                    }
                    Optimizer::Adam => {
                        adam_step(&mut online, &mut grads, &mut adam, train.learning_rate, train.grad_clip_norm);
                    }
                }
                gradient_steps += 1;
                if !loss.is_finite() || !online.is_finite() {
                    return Err(Error::Divergence(format!(
                        "non-finite loss or parameters after gradient step {gradient_steps}"
                    )));
                }
            }
            if global_step % train.target_sync_interval == 0 {
                target = online.clone();
            }
        }
        episode_returns.push(episode_return);
    }
    let wall_time_seconds = started.elapsed().as_secs_f64();

    let evaluation = evaluate_policy(&online, sim, eval_seed(seed))?;
    Ok((
        online,
        TrainingReport {
            obs_mode: mode,
            wall_time_seconds,
            episode_returns,
            gradient_steps,
            env_steps: global_step,
            evaluation,
        },
    ))
}

/// Runs one full greedy episode with the network's observation mode.
pub fn evaluate_policy(params: &MlpParams, sim: &SimConfig, seed: u64) -> Result<Evaluation> {
    let mode = mode_of(params)?;
    let mut world = World::new(sim.clone(), seed)?;
    let mut total_reward = 0.0;
    let mut switches = 0;
    while !world.is_finished() {
        let q = params.forward(&observe(&world, mode))?;
        let outcome = world.step(greedy_action(&q, ActionMask::of(&world)))?;
        total_reward += outcome.reward;
        switches += u64::from(outcome.switch_initiated);
    }
    Ok(Evaluation {
        metrics: world.metrics(),
        total_reward,
        switches,
    })
}
