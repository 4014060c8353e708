//! Discrete-time cellular model of a single four-way signalized intersection.
//!
//! Each approach is one lane of `approach_length_cells` cells. Cell 0 is the
//! stop line; cells grow upstream. A vehicle advances one cell per step when
//! the cell ahead is free and leaves the network from cell 0 when its approach
//! shows green. Arrivals are Bernoulli per approach per step.
//!
//! A step runs in a fixed order: action gating and signal update, vehicle
//! motion (front to back, so a discharging queue moves as a block), arrivals,
//! then the reward. Everything that is random is drawn from a ChaCha stream
//! seeded at construction, so `(config, seed, actions)` pins the trajectory.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest approach length the fixed 128×64 frame layout can draw.
pub const MAX_APPROACH_CELLS: usize = 28;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Approach {
    N,
    E,
    S,
    W,
}

impl Approach {
    pub const ALL: [Approach; 4] = [Approach::N, Approach::E, Approach::S, Approach::W];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn is_north_south(self) -> bool {
        matches!(self, Approach::N | Approach::S)
    }

    pub fn name(self) -> &'static str {
        match self {
            Approach::N => "N",
            Approach::E => "E",
            Approach::S => "S",
            Approach::W => "W",
        }
    }
}

impl std::fmt::Display for Approach {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Phase {
    NsGreen = 0,
    NsYellow = 1,
    EwGreen = 2,
    EwYellow = 3,
}

impl Phase {
    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(index: u8) -> Option<Self> {
        match index {
            0 => Some(Phase::NsGreen),
            1 => Some(Phase::NsYellow),
            2 => Some(Phase::EwGreen),
            3 => Some(Phase::EwYellow),
            _ => None,
        }
    }

    pub fn is_green(self) -> bool {
        matches!(self, Phase::NsGreen | Phase::EwGreen)
    }

    pub fn is_yellow(self) -> bool {
        !self.is_green()
    }

    /// Phase entered when a switch is initiated from this green.
    fn yellow(self) -> Phase {
        match self {
            Phase::NsGreen | Phase::NsYellow => Phase::NsYellow,
            Phase::EwGreen | Phase::EwYellow => Phase::EwYellow,
        }
    }

    /// Opposing green reached after this phase's yellow.
    fn next_green(self) -> Phase {
        match self {
            Phase::NsGreen | Phase::NsYellow => Phase::EwGreen,
            Phase::EwGreen | Phase::EwYellow => Phase::NsGreen,
        }
    }

    /// Whether vehicles on `approach` may discharge under this phase.
    pub fn serves(self, approach: Approach) -> bool {
        match self {
            Phase::NsGreen => approach.is_north_south(),
            Phase::EwGreen => !approach.is_north_south(),
            Phase::NsYellow | Phase::EwYellow => false,
        }
    }

    /// Whether this phase is the yellow of `approach`'s own movement.
    pub fn is_yellow_for(self, approach: Approach) -> bool {
        match self {
            Phase::NsYellow => approach.is_north_south(),
            Phase::EwYellow => !approach.is_north_south(),
            _ => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Extend,
    Switch,
}

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Extend => 0,
            Action::Switch => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        match index {
            0 => Some(Action::Extend),
            1 => Some(Action::Switch),
            _ => None,
        }
    }

    pub fn other(self) -> Action {
        match self {
            Action::Extend => Action::Switch,
            Action::Switch => Action::Extend,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub queue: f64,
    pub wait: f64,
    pub switch: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            queue: 0.5,
            wait: 0.5,
            switch: 2.0,
        }
    }
}

/// Scenario parameters. Serialized as the JSON scenario file; missing fields
/// take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub approach_length_cells: usize,
    /// Per-step spawn probability, ordered N, E, S, W.
    pub arrival_prob: [f64; 4],
    pub yellow_steps: u32,
    pub min_green_steps: u32,
    pub horizon_steps: u64,
    pub step_seconds: f64,
    pub reward_weights: RewardWeights,
    pub gap_threshold_cells: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            approach_length_cells: 25,
            arrival_prob: [0.15, 0.05, 0.15, 0.05],
            yellow_steps: 3,
            min_green_steps: 10,
            horizon_steps: 1800,
            step_seconds: 1.0,
            reward_weights: RewardWeights::default(),
            gap_threshold_cells: 2,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        fn bad(field: &'static str, reason: impl Into<String>) -> Result<()> {
            Err(Error::Config {
                field,
                reason: reason.into(),
            })
        }

        if self.approach_length_cells == 0 {
            return bad("approach_length_cells", "must be positive");
        }
        if self.approach_length_cells > MAX_APPROACH_CELLS {
            return bad(
                "approach_length_cells",
                format!("frame layout holds at most {MAX_APPROACH_CELLS} cells"),
            );
        }
        for p in self.arrival_prob {
            if !(0.0..=1.0).contains(&p) {
                return bad("arrival_prob", format!("{p} is not a probability"));
            }
        }
        if self.min_green_steps == 0 {
            return bad("min_green_steps", "must be positive");
        }
        if self.min_green_steps <= self.yellow_steps {
            return bad("min_green_steps", "must exceed yellow_steps");
        }
        if self.horizon_steps == 0 {
            return bad("horizon_steps", "must be positive");
        }
        if !(self.step_seconds.is_finite() && self.step_seconds > 0.0) {
            return bad("step_seconds", "must be a positive real");
        }
        let w = self.reward_weights;
        for v in [w.queue, w.wait, w.switch] {
            if !(v.is_finite() && v >= 0.0) {
                return bad("reward_weights", "weights must be nonnegative reals");
            }
        }
        if self.gap_threshold_cells == 0 {
            return bad("gap_threshold_cells", "must be positive");
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let config: SimConfig = serde_json::from_str(s)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Unobstructed traversal time, in seconds.
    pub fn free_flow_seconds(&self) -> f64 {
        self.approach_length_cells as f64 * self.step_seconds
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: u64,
    pub approach: Approach,
    pub cell: usize,
    /// First step the vehicle takes part in.
    pub spawn_step: u64,
    /// Cell it entered at.
    pub entry_cell: usize,
    pub wait_steps: u64,
    /// Did not move during the most recent step.
    pub halted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalState {
    pub phase: Phase,
    pub phase_elapsed: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exit {
    pub id: u64,
    /// Steps from entry through the exit step.
    pub travel_steps: u64,
    /// Travel time of the same trip with no stops.
    pub free_flow_steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    /// Step index this outcome belongs to.
    pub time: u64,
    /// Phase in force during the step's motion.
    pub phase: Phase,
    pub queue_total: u64,
    pub wait_increment: u64,
    pub switch_initiated: bool,
    pub reward: f64,
    pub exited: Vec<Exit>,
}

/// Reward of a step from its counts. `queue_total` and `wait_increment`
/// coincide under unit-speed motion; both are weighted as configured.
pub fn step_reward(
    weights: &RewardWeights,
    queue_total: u64,
    wait_increment: u64,
    switch_initiated: bool,
) -> f64 {
    let switch = if switch_initiated { 1.0 } else { 0.0 };
    // Subtracting from +0.0 keeps an idle step's reward at +0.0 rather than -0.0.
    0.0 - (weights.queue * queue_total as f64 + weights.wait * wait_increment as f64 + weights.switch * switch)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Seconds, over completed vehicles.
    pub avg_travel_time: f64,
    /// Seconds above free-flow, over completed vehicles.
    pub avg_delay: f64,
    pub vehicles_completed: u64,
    pub total_steps: u64,
}

impl EpisodeMetrics {
    /// No vehicle completed; averages are reported as zero.
    pub fn is_empty(&self) -> bool {
        self.vehicles_completed == 0
    }
}

/// Aggregates travel time and delay over all vehicles that left the network.
pub fn episode_metrics(log: &[StepOutcome], config: &SimConfig) -> EpisodeMetrics {
    let mut completed = 0u64;
    let mut travel_sum = 0u64;
    let mut free_flow_sum = 0u64;
    for exit in log.iter().flat_map(|o| o.exited.iter()) {
        completed += 1;
        travel_sum += exit.travel_steps;
        free_flow_sum += exit.free_flow_steps;
    }
    let total_steps = log.len() as u64;
    if completed == 0 {
        return EpisodeMetrics {
            avg_travel_time: 0.0,
            avg_delay: 0.0,
            vehicles_completed: 0,
            total_steps,
        };
    }
    let n = completed as f64;
    EpisodeMetrics {
        avg_travel_time: travel_sum as f64 * config.step_seconds / n,
        avg_delay: (travel_sum - free_flow_sum) as f64 * config.step_seconds / n,
        vehicles_completed: completed,
        total_steps,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    config: SimConfig,
    time: u64,
    lanes: [Vec<Option<Vehicle>>; 4],
    signal: SignalState,
    rng: ChaCha8Rng,
    next_id: u64,
    spawned: u64,
    exited: u64,
    log: Vec<StepOutcome>,
}

impl World {
    pub fn new(config: SimConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let lane = vec![None; config.approach_length_cells];
        Ok(Self {
            lanes: [lane.clone(), lane.clone(), lane.clone(), lane],
            config,
            time: 0,
            signal: SignalState {
                phase: Phase::NsGreen,
                phase_elapsed: 0,
            },
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_id: 0,
            spawned: 0,
            exited: 0,
            log: Vec::new(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn signal(&self) -> SignalState {
        self.signal
    }

    pub fn phase(&self) -> Phase {
        self.signal.phase
    }

    pub fn log(&self) -> &[StepOutcome] {
        &self.log
    }

    pub fn is_finished(&self) -> bool {
        self.time >= self.config.horizon_steps
    }

    /// Whether a Switch request would take effect this step.
    pub fn switch_allowed(&self) -> bool {
        self.signal.phase.is_green() && self.signal.phase_elapsed >= self.config.min_green_steps
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &Vehicle> {
        self.lanes.iter().flat_map(|lane| lane.iter().flatten())
    }

    /// Cells of `approach`, indexed from the stop line.
    pub fn lane(&self, approach: Approach) -> &[Option<Vehicle>] {
        &self.lanes[approach.index()]
    }

    pub fn occupied_cells(&self, approach: Approach) -> Vec<usize> {
        self.lane(approach)
            .iter()
            .enumerate()
            .filter_map(|(cell, v)| v.as_ref().map(|_| cell))
            .collect()
    }

    pub fn vehicles_spawned(&self) -> u64 {
        self.spawned
    }

    pub fn vehicles_exited(&self) -> u64 {
        self.exited
    }

    /// Inserts a vehicle at `cell` with the current step as its spawn time.
    /// Used to build hand-made scenarios; it counts as a spawn.
    pub fn place_vehicle(&mut self, approach: Approach, cell: usize) -> Result<u64> {
        let length = self.config.approach_length_cells;
        if cell >= length {
            return Err(Error::InvalidArgument(format!(
                "cell {cell} outside approach of {length} cells"
            )));
        }
        let slot = &mut self.lanes[approach.index()][cell];
        if slot.is_some() {
            return Err(Error::InvalidArgument(format!(
                "cell {cell} on approach {approach} is occupied"
            )));
        }
        let id = self.next_id;
        *slot = Some(Vehicle {
            id,
            approach,
            cell,
            spawn_step: self.time,
            entry_cell: cell,
            wait_steps: 0,
            halted: false,
        });
        self.next_id += 1;
        self.spawned += 1;
        Ok(id)
    }

    /// Forces the signal state. Used to build hand-made scenarios.
    pub fn set_signal(&mut self, signal: SignalState) {
        self.signal = signal;
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.is_finished() {
            return Err(Error::EpisodeFinished {
                horizon: self.config.horizon_steps,
            });
        }
        let now = self.time;

        let switch_initiated = action == Action::Switch && self.switch_allowed();
        if switch_initiated {
            let phase = self.signal.phase;
            self.signal.phase = if self.config.yellow_steps == 0 {
                phase.next_green()
            } else {
                phase.yellow()
            };
            self.signal.phase_elapsed = 0;
        } else if self.signal.phase.is_yellow()
            && self.signal.phase_elapsed >= self.config.yellow_steps
        {
            self.signal.phase = self.signal.phase.next_green();
            self.signal.phase_elapsed = 0;
        }
        let phase = self.signal.phase;

        let mut halted = 0u64;
        let mut exited = Vec::new();
        for approach in Approach::ALL {
            let green = phase.serves(approach);
            let lane = &mut self.lanes[approach.index()];
            for cell in 0..lane.len() {
                let Some(mut vehicle) = lane[cell].take() else {
                    continue;
                };
                if cell == 0 && green {
                    exited.push(Exit {
                        id: vehicle.id,
                        travel_steps: now + 1 - vehicle.spawn_step,
                        free_flow_steps: vehicle.entry_cell as u64 + 1,
                    });
                    continue;
                }
                if cell > 0 && lane[cell - 1].is_none() {
                    vehicle.cell = cell - 1;
                    vehicle.halted = false;
                    lane[cell - 1] = Some(vehicle);
                } else {
                    vehicle.wait_steps += 1;
                    vehicle.halted = true;
                    halted += 1;
                    lane[cell] = Some(vehicle);
                }
            }
        }
        self.exited += exited.len() as u64;

        let entry = self.config.approach_length_cells - 1;
        for approach in Approach::ALL {
            let draw: f64 = self.rng.gen();
            if draw < self.config.arrival_prob[approach.index()]
                && self.lanes[approach.index()][entry].is_none()
            {
                self.lanes[approach.index()][entry] = Some(Vehicle {
                    id: self.next_id,
                    approach,
                    cell: entry,
                    spawn_step: now + 1,
                    entry_cell: entry,
                    wait_steps: 0,
                    halted: false,
                });
                self.next_id += 1;
                self.spawned += 1;
            }
        }

        self.signal.phase_elapsed += 1;
        self.time += 1;

        let outcome = StepOutcome {
            time: now,
            phase,
            queue_total: halted,
            wait_increment: halted,
            switch_initiated,
            reward: step_reward(&self.config.reward_weights, halted, halted, switch_initiated),
            exited,
        };
        self.log.push(outcome.clone());
        Ok(outcome)
    }

    pub fn metrics(&self) -> EpisodeMetrics {
        episode_metrics(&self.log, &self.config)
    }
}

/// Runs a full episode under a fixed cycle: each green holds for
/// `green_split_steps`, then yellow, then the opposing green.
pub fn run_fixed_time(config: &SimConfig, green_split_steps: u32, seed: u64) -> Result<EpisodeMetrics> {
    config.validate()?;
    if green_split_steps < config.min_green_steps {
        return Err(Error::InvalidArgument(format!(
            "green split {green_split_steps} is shorter than min_green_steps {}",
            config.min_green_steps
        )));
    }
    let mut world = World::new(config.clone(), seed)?;
    while !world.is_finished() {
        world.step(fixed_time_action(&world, green_split_steps))?;
    }
    Ok(world.metrics())
}

pub fn fixed_time_action(world: &World, green_split_steps: u32) -> Action {
    let signal = world.signal();
    if signal.phase.is_green() && signal.phase_elapsed >= green_split_steps {
        Action::Switch
    } else {
        Action::Extend
    }
}

/// Writes the per-step log as CSV:
/// `time,phase,queue_total,wait_increment,switch,reward`.
pub fn write_log_csv<W: Write>(log: &[StepOutcome], out: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    writer.write_record(["time", "phase", "queue_total", "wait_increment", "switch", "reward"])?;
    for o in log {
        writer.write_record([
            o.time.to_string(),
            o.phase.index().to_string(),
            o.queue_total.to_string(),
            o.wait_increment.to_string(),
            u8::from(o.switch_initiated).to_string(),
            o.reward.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
