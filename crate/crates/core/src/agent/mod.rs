//! Deep Q-learning signal controller with image or semantic observations.

pub mod checkpoint;
pub mod mlp;
pub mod replay;
mod train;

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::perception::{extract_semantic, render_frame, Image, HEIGHT, WIDTH};
use crate::semcom::ObsMode;
use crate::sim::{Action, Phase, World};

pub use mlp::{Activations, Dense, MlpParams, N_ACTIONS};
pub use replay::ReplayBuffer;
pub use train::{Optimizer, 
    derive_seed, dqn_train, dqn_train_observed, evaluate_policy, eval_seed, Evaluation, TrainConfig,
    TrainStep, TrainingReport,
};

pub const POOL: usize = 4;
pub const POOLED_WIDTH: usize = WIDTH / POOL;
pub const POOLED_HEIGHT: usize = HEIGHT / POOL;
pub const POOLED_LEN: usize = POOLED_WIDTH * POOLED_HEIGHT;
pub const IMAGE_OBS_LEN: usize = POOLED_LEN + 4;
pub const SEMANTIC_OBS_LEN: usize = 5;

pub fn layer_sizes(mode: ObsMode) -> Vec<usize> {
    match mode {
        ObsMode::Image => vec![IMAGE_OBS_LEN, 64, 64, N_ACTIONS],
        ObsMode::Semantic => vec![SEMANTIC_OBS_LEN, 32, 32, N_ACTIONS],
    }
}

/// Observation mode implied by a network's input width.
pub fn mode_of(params: &MlpParams) -> Result<ObsMode> {
    match params.input_len() {
        IMAGE_OBS_LEN => Ok(ObsMode::Image),
        SEMANTIC_OBS_LEN => Ok(ObsMode::Semantic),
        n => Err(Error::UnsupportedMode(format!("network with {n} inputs"))),
    }
}

/// Channel-mean grayscale, 4×4 average pool to 32×16 scaled to [0, 1],
/// followed by a one-hot phase.
pub fn preprocess_image(image: &Image, phase: Phase) -> Vec<f64> {
    let mut sums = [0u32; POOLED_LEN];
    let bytes = image.as_bytes();
    for y in 0..HEIGHT {
        let row = &bytes[y * WIDTH * 3..(y + 1) * WIDTH * 3];
        let pooled_row = &mut sums[(y / POOL) * POOLED_WIDTH..(y / POOL + 1) * POOLED_WIDTH];
        for (x, px) in row.chunks_exact(3).enumerate() {
            pooled_row[x / POOL] += px[0] as u32 + px[1] as u32 + px[2] as u32;
        }
    }
    let scale = (3 * POOL * POOL * 255) as f64;
    let mut out: Vec<f64> = sums.iter().map(|&s| s as f64 / scale).collect();
    let mut one_hot = [0.0; 4];
    one_hot[phase.index() as usize] = 1.0;
    out.extend_from_slice(&one_hot);
    out
}

pub fn observe(world: &World, mode: ObsMode) -> Vec<f64> {
    match mode {
        ObsMode::Image => preprocess_image(&render_frame(world), world.phase()),
        ObsMode::Semantic => {
            let config = world.config();
            extract_semantic(world, config.gap_threshold_cells)
                .features(config.approach_length_cells)
                .to_vec()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActionMask {
    pub switch_allowed: bool,
}

impl ActionMask {
    pub fn of(world: &World) -> Self {
        Self {
            switch_allowed: world.switch_allowed(),
        }
    }

    pub fn allows(self, action: Action) -> bool {
        action == Action::Extend || self.switch_allowed
    }
}

/// Highest-valued allowed action; ties go to Extend.
pub fn greedy_action(q: &[f64; N_ACTIONS], mask: ActionMask) -> Action {
    if mask.switch_allowed && q[1] > q[0] {
        Action::Switch
    } else {
        Action::Extend
    }
}

pub fn max_allowed(q: &[f64; N_ACTIONS], mask: ActionMask) -> f64 {
    if mask.switch_allowed {
        q[0].max(q[1])
    } else {
        q[0]
    }
}

/// Epsilon-greedy over the allowed actions.
pub fn select_action<R: Rng + ?Sized>(q: &[f64; N_ACTIONS], mask: ActionMask, epsilon: f64, rng: &mut R) -> Action {
    let explore = rng.gen::<f64>() < epsilon;
    if !explore {
        return greedy_action(q, mask);
    }
    if mask.switch_allowed && rng.gen_bool(0.5) {
        Action::Switch
    } else {
        Action::Extend
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Arc<[f64]>,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Arc<[f64]>,
    pub terminal: bool,
    /// Mask for the bootstrap maximum over the next state.
    pub next_mask: ActionMask,
}

/// Mean squared TD error against the target network and its exact gradient
/// with respect to the online parameters.
pub fn mlp_gradients(
    params: &MlpParams,
    batch: &[Transition],
    target: &MlpParams,
    discount: f64,
) -> Result<(MlpParams, f64)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let n = batch.len() as f64;
    let mut grads = params.zeros_like();
    let mut acts = Activations::default();
    let mut loss = 0.0;
    for t in batch {
        let bootstrap = if t.terminal {
            0.0
        } else {
            max_allowed(&target.forward(&t.next_obs)?, t.next_mask)
        };
        let y = t.reward + discount * bootstrap;
        params.forward_cached(&t.obs, &mut acts)?;
        let a = t.action.index();
        let delta = acts.output()[a] - y;
        loss += delta * delta;
        let mut out_grad = [0.0; N_ACTIONS];
        out_grad[a] = 2.0 * delta / n;
        params.backward(&acts, &out_grad, &mut grads);
    }
    Ok((grads, loss / n))
}

/// First and second moment estimates for Adam, shaped like the parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: MlpParams,
    v: MlpParams,
    t: i32,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam step on the clipped gradient. Returns the pre-clip gradient norm.
pub fn adam_step(
    params: &mut MlpParams,
    grads: &mut MlpParams,
    state: &mut AdamState,
    learning_rate: f64,
    clip_norm: f64,
) -> f64 {
    let norm = grads.l2_norm();
    if norm > clip_norm {
        grads.scale(clip_norm / norm);
    }
    state.t += 1;
    let c1 = 1.0 - ADAM_BETA1.powi(state.t);
    let c2 = 1.0 - ADAM_BETA2.powi(state.t);
    params.zip_update(grads, &mut state.m, &mut state.v, |p, g, m, v| {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        *p -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
    });
    norm
}

/// Plain SGD step after rescaling the gradient to at most `clip_norm`.
/// Returns the pre-clip gradient norm.
pub fn sgd_step(params: &mut MlpParams, grads: &mut MlpParams, learning_rate: f64, clip_norm: f64) -> f64 {
    let norm = grads.l2_norm();
    if norm > clip_norm {
        grads.scale(clip_norm / norm);
    }
    params.add_scaled(grads, -learning_rate);
    norm
}
