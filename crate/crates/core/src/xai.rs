//! Occlusion Shapley saliency over rectangular frame tiles.
//!
//! A tile is a player; a coalition keeps its tiles and paints every other
//! tile with the baseline color. The game value is the Q-network's margin
//! between the action it picks on the full frame and the other action.
//! Exact values enumerate all coalitions (up to 12 tiles); larger grids use
//! Monte Carlo over random tile orderings.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{mode_of, preprocess_image, MlpParams, IMAGE_OBS_LEN};
use crate::error::{Error, Result};
use crate::perception::{vehicle_block_origin, Image, Rgb, BACKGROUND, EW_ROAD_ROWS, HEIGHT, NS_ROAD_COLS, WIDTH};
use crate::semcom::ObsMode;
use crate::sim::{Action, Approach, Phase};

pub const EXACT_MAX_PLAYERS: usize = 12;
pub const DEFAULT_BASELINE: Rgb = BACKGROUND;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileGrid {
    pub tile_width: usize,
    pub tile_height: usize,
}

impl Default for TileGrid {
    fn default() -> Self {
        Self {
            tile_width: 16,
            tile_height: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl TileRect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x..self.x + self.width).contains(&x) && (self.y..self.y + self.height).contains(&y)
    }
}

impl TileGrid {
    pub fn new(tile_width: usize, tile_height: usize) -> Result<Self> {
        if tile_width == 0 || tile_height == 0 || WIDTH % tile_width != 0 || HEIGHT % tile_height != 0 {
            return Err(Error::InvalidArgument(format!(
                "tile {tile_width}x{tile_height} does not divide the {WIDTH}x{HEIGHT} frame"
            )));
        }
        Ok(Self {
            tile_width,
            tile_height,
        })
    }

    pub fn with_counts(columns: usize, rows: usize) -> Result<Self> {
        if columns == 0 || rows == 0 || WIDTH % columns != 0 || HEIGHT % rows != 0 {
            return Err(Error::InvalidArgument(format!(
                "{columns}x{rows} tiles do not divide the {WIDTH}x{HEIGHT} frame"
            )));
        }
        Self::new(WIDTH / columns, HEIGHT / rows)
    }

    pub fn columns(&self) -> usize {
        WIDTH / self.tile_width
    }

    pub fn rows(&self) -> usize {
        HEIGHT / self.tile_height
    }

    pub fn n_tiles(&self) -> usize {
        self.columns() * self.rows()
    }

    /// Row-major tile index to (row, column).
    pub fn position(&self, tile: usize) -> (usize, usize) {
        (tile / self.columns(), tile % self.columns())
    }

    pub fn rect(&self, tile: usize) -> TileRect {
        let (row, col) = self.position(tile);
        TileRect {
            x: col * self.tile_width,
            y: row * self.tile_height,
            width: self.tile_width,
            height: self.tile_height,
        }
    }

    pub fn tile_at(&self, x: usize, y: usize) -> usize {
        (y / self.tile_height) * self.columns() + x / self.tile_width
    }
}

impl std::str::FromStr for TileGrid {
    type Err = Error;

    /// Parses `CxR`, columns by rows.
    fn from_str(s: &str) -> Result<Self> {
        let (c, r) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::InvalidArgument(format!("grid `{s}` is not of the form CxR")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("grid `{s}` is not of the form CxR")))
        };
        Self::with_counts(parse(c)?, parse(r)?)
    }
}

fn occlude_mask(image: &Image, grid: &TileGrid, present: &[bool], baseline: Rgb) -> Image {
    let mut out = image.clone();
    for (tile, &keep) in present.iter().enumerate() {
        if !keep {
            let r = grid.rect(tile);
            out.fill_rect(r.x, r.y, r.width, r.height, baseline);
        }
    }
    out
}

fn mask_from_indices(grid: &TileGrid, present: &[usize]) -> Result<Vec<bool>> {
    let n = grid.n_tiles();
    let mut mask = vec![false; n];
    for &i in present {
        if i >= n {
            return Err(Error::InvalidArgument(format!("tile {i} out of range for {n} tiles")));
        }
        mask[i] = true;
    }
    Ok(mask)
}

/// Paints every tile not in `present` with `baseline`.
pub fn occlude(image: &Image, grid: &TileGrid, present: &[usize], baseline: Rgb) -> Result<Image> {
    Ok(occlude_mask(image, grid, &mask_from_indices(grid, present)?, baseline))
}

/// A cooperative game over `players()` players.
pub trait CoalitionGame {
    fn players(&self) -> usize;

    fn value(&self, coalition: &[bool]) -> f64;

    /// `out[k]` is the value of the first `k` players of `order`, for
    /// `k = 0..=n`.
    fn prefix_values(&self, order: &[usize], out: &mut Vec<f64>) {
        let mut coalition = vec![false; self.players()];
        out.clear();
        out.push(self.value(&coalition));
        for &p in order {
            coalition[p] = true;
            out.push(self.value(&coalition));
        }
    }
}

/// Wraps a closure as a game.
pub struct FnGame<F> {
    players: usize,
    f: F,
}

impl<F: Fn(&[bool]) -> f64> FnGame<F> {
    pub fn new(players: usize, f: F) -> Self {
        Self { players, f }
    }
}

impl<F: Fn(&[bool]) -> f64> CoalitionGame for FnGame<F> {
    fn players(&self) -> usize {
        self.players
    }

    fn value(&self, coalition: &[bool]) -> f64 {
        (self.f)(coalition)
    }
}

fn margin(q: [f64; 2], greedy: Action) -> f64 {
    q[greedy.index()] - q[greedy.other().index()]
}

/// Unmasked argmax, ties to Extend.
pub fn greedy_unmasked(q: [f64; 2]) -> Action {
    if q[1] > q[0] {
        Action::Switch
    } else {
        Action::Extend
    }
}

fn require_image_model(model: &MlpParams) -> Result<()> {
    match mode_of(model)? {
        ObsMode::Image => Ok(()),
        other => Err(Error::UnsupportedMode(format!("saliency needs an image model, got {other}"))),
    }
}

/// Greedy margin of `model` on the frame with only `present` tiles visible.
pub fn coalition_value(model: &MlpParams, frame: &Image, phase: Phase, grid: &TileGrid, present: &[usize]) -> Result<f64> {
    require_image_model(model)?;
    let greedy = greedy_unmasked(model.forward(&preprocess_image(frame, phase))?);
    let occluded = occlude(frame, grid, present, DEFAULT_BASELINE)?;
    Ok(margin(model.forward(&preprocess_image(&occluded, phase))?, greedy))
}

/// Occlusion game for one frame.
///
/// Pooling is linear in pixel values and tiles are disjoint, so the first
/// layer's pre-activation is the all-occluded value plus one fixed vector
/// per visible tile. Permutation walks use that to add one tile at a time.
pub struct OcclusionGame<'a> {
    model: &'a MlpParams,
    frame: &'a Image,
    phase: Phase,
    grid: TileGrid,
    baseline: Rgb,
    greedy: Action,
    empty_preactivation: Vec<f64>,
    tile_contributions: Vec<Vec<f64>>,
}

impl<'a> OcclusionGame<'a> {
    pub fn new(model: &'a MlpParams, frame: &'a Image, phase: Phase, grid: TileGrid) -> Result<Self> {
        Self::with_baseline(model, frame, phase, grid, DEFAULT_BASELINE)
    }

    pub fn with_baseline(model: &'a MlpParams, frame: &'a Image, phase: Phase, grid: TileGrid, baseline: Rgb) -> Result<Self> {
        require_image_model(model)?;
        let greedy = greedy_unmasked(model.forward(&preprocess_image(frame, phase))?);
        let first = &model.layers()[0];
        let n = grid.n_tiles();
        let empty_input = preprocess_image(&occlude_mask(frame, &grid, &vec![false; n], baseline), phase);
        debug_assert_eq!(empty_input.len(), IMAGE_OBS_LEN);
        let mut empty_preactivation = first.linear(&empty_input);
        for (z, b) in empty_preactivation.iter_mut().zip(&first.biases) {
            *z += b;
        }
        let tile_contributions = (0..n)
            .map(|tile| {
                let mut only = vec![false; n];
                only[tile] = true;
                let with_tile = preprocess_image(&occlude_mask(frame, &grid, &only, baseline), phase);
                let delta: Vec<f64> = with_tile.iter().zip(&empty_input).map(|(a, b)| a - b).collect();
                first.linear(&delta)
            })
            .collect();
        Ok(Self {
            model,
            frame,
            phase,
            grid,
            baseline,
            greedy,
            empty_preactivation,
            tile_contributions,
        })
    }

    /// Action whose margin is explained.
    pub fn greedy(&self) -> Action {
        self.greedy
    }

    /// Value by the direct route: occlude, preprocess, full forward pass.
    pub fn direct_value(&self, coalition: &[bool]) -> f64 {
        let occluded = occlude_mask(self.frame, &self.grid, coalition, self.baseline);
        let q = self
            .model
            .forward(&preprocess_image(&occluded, self.phase))
            .expect("image model checked at construction");
        margin(q, self.greedy)
    }
}

impl CoalitionGame for OcclusionGame<'_> {
    fn players(&self) -> usize {
        self.grid.n_tiles()
    }

    fn value(&self, coalition: &[bool]) -> f64 {
        self.direct_value(coalition)
    }

    fn prefix_values(&self, order: &[usize], out: &mut Vec<f64>) {
        let mut z = self.empty_preactivation.clone();
        out.clear();
        out.push(margin(self.model.forward_from_first(&z), self.greedy));
        for &tile in order {
            for (zi, ci) in z.iter_mut().zip(&self.tile_contributions[tile]) {
                *zi += ci;
            }
            out.push(margin(self.model.forward_from_first(&z), self.greedy));
        }
    }
}

/// Shapley values by enumerating all `2^n` coalitions.
pub fn shapley_exact<G: CoalitionGame + ?Sized>(game: &G) -> Result<Vec<f64>> {
    let n = game.players();
    if n > EXACT_MAX_PLAYERS {
        return Err(Error::Capacity {
            players: n,
            max: EXACT_MAX_PLAYERS,
        });
    }
    let mut coalition = vec![false; n];
    let values: Vec<f64> = (0..1usize << n)
        .map(|mask| {
            for (i, c) in coalition.iter_mut().enumerate() {
                *c = mask >> i & 1 == 1;
            }
            game.value(&coalition)
        })
        .collect();

    // weight[s] = s! (n - s - 1)! / n!
    let mut weight = vec![0.0; n.max(1)];
    for (s, w) in weight.iter_mut().enumerate().take(n) {
        let mut x = 1.0 / n as f64;
        for k in 1..=s {
            x *= k as f64 / (n - k) as f64;
        }
        *w = x;
    }

    let mut phi = vec![0.0; n];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        for mask in (0..1usize << n).filter(|m| m & bit == 0) {
            *p += weight[mask.count_ones() as usize] * (values[mask | bit] - values[mask]);
        }
    }
    Ok(phi)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledShapley {
    pub values: Vec<f64>,
    /// Standard error of each mean marginal contribution.
    pub stderr: Vec<f64>,
}

/// Mean marginal contribution over `permutations` uniformly random
/// orderings. Accumulation follows permutation order, so the result is a
/// function of `(game, permutations, seed)` only.
pub fn shapley_sampled<G: CoalitionGame + ?Sized>(game: &G, permutations: usize, seed: u64) -> Result<SampledShapley> {
    if permutations == 0 {
        return Err(Error::InvalidArgument("need at least one permutation".into()));
    }
    let n = game.players();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut prefix = Vec::with_capacity(n + 1);
    let mut mean = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    for m in 0..permutations {
        order.shuffle(&mut rng);
        game.prefix_values(&order, &mut prefix);
        let count = (m + 1) as f64;
        for (k, &player) in order.iter().enumerate() {
            let x = prefix[k + 1] - prefix[k];
            let d = x - mean[player];
            mean[player] += d / count;
            m2[player] += d * (x - mean[player]);
        }
    }
    let stderr = if permutations > 1 {
        let m = permutations as f64;
        m2.iter().map(|s| (s / (m - 1.0) / m).sqrt()).collect()
    } else {
        vec![0.0; n]
    };
    Ok(SampledShapley { values: mean, stderr })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyReference {
    /// Simulation step of the explained frame.
    pub step: u64,
    pub greedy: Action,
    pub alternative: Action,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub grid: TileGrid,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub reference: SaliencyReference,
}

impl SaliencyMap {
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Sampled saliency of one frame.
pub fn explain_frame(
    model: &MlpParams,
    frame: &Image,
    phase: Phase,
    grid: TileGrid,
    permutations: usize,
    seed: u64,
    step: u64,
) -> Result<SaliencyMap> {
    let game = OcclusionGame::new(model, frame, phase, grid)?;
    let sampled = shapley_sampled(&game, permutations, seed)?;
    Ok(SaliencyMap {
        grid,
        values: sampled.values,
        stderr: sampled.stderr,
        reference: SaliencyReference {
            step,
            greedy: game.greedy(),
            alternative: game.greedy().other(),
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Approach(Approach),
    Center,
    Background,
}

impl Region {
    pub fn label(&self) -> &'static str {
        match self {
            Region::Approach(a) => a.name(),
            Region::Center => "center",
            Region::Background => "background",
        }
    }
}

/// Assigns each tile to the approach owning most of its cell slots, or to
/// the intersection box, or to background.
pub fn tile_regions(grid: &TileGrid, approach_length: usize) -> Vec<Region> {
    let n = grid.n_tiles();
    let mut counts = vec![[0usize; 4]; n];
    for approach in Approach::ALL {
        for cell in 0..approach_length {
            if let Some((x, y)) = vehicle_block_origin(approach, cell) {
                counts[grid.tile_at(x, y)][approach.index()] += 1;
            }
        }
    }
    let center = TileRect {
        x: NS_ROAD_COLS.0,
        y: EW_ROAD_ROWS.0,
        width: NS_ROAD_COLS.1 - NS_ROAD_COLS.0 + 1,
        height: EW_ROAD_ROWS.1 - EW_ROAD_ROWS.0 + 1,
    };
    (0..n)
        .map(|tile| {
            let c = counts[tile];
            let best = (0..4).fold(0, |b, i| if c[i] > c[b] { i } else { b });
            if c[best] > 0 {
                return Region::Approach(Approach::ALL[best]);
            }
            let r = grid.rect(tile);
            let overlaps = r.x <= center.x + center.width - 1
                && center.x <= r.x + r.width - 1
                && r.y <= center.y + center.height - 1
                && center.y <= r.y + r.height - 1;
            if overlaps {
                Region::Center
            } else {
                Region::Background
            }
        })
        .collect()
}

/// Semantic features a transmitter may carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticFeature {
    PlatoonTail,
    QueueLength,
    Occupancy,
    PhaseIndex,
}

/// Features pinned for the semantic encoder after review of the rankings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub features: Vec<SemanticFeature>,
}

impl Default for FeatureSelection {
    fn default() -> Self {
        Self {
            features: vec![SemanticFeature::PlatoonTail, SemanticFeature::PhaseIndex],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproachScore {
    pub approach: Approach,
    /// Sum of |value| over the approach's tiles.
    pub score: f64,
    pub selected: bool,
    /// Tile with the largest |value| on the approach.
    pub peak_tile: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    pub ranked: Vec<ApproachScore>,
    pub center_score: f64,
    /// Every approach scored zero; nothing is selected.
    pub inconclusive: bool,
}

impl FeatureReport {
    pub fn top(&self) -> Option<Approach> {
        if self.inconclusive {
            None
        } else {
            self.ranked.first().map(|s| s.approach)
        }
    }
}

pub fn rank_and_select(map: &SaliencyMap, regions: &[Region], k: usize) -> Result<FeatureReport> {
    if regions.len() != map.values.len() {
        return Err(Error::Shape {
            expected: map.values.len(),
            actual: regions.len(),
        });
    }
    let mut scores: Vec<ApproachScore> = Approach::ALL
        .iter()
        .map(|&approach| ApproachScore {
            approach,
            score: 0.0,
            selected: false,
            peak_tile: None,
        })
        .collect();
    let mut center_score = 0.0;
    for (tile, (&value, region)) in map.values.iter().zip(regions).enumerate() {
        match region {
            Region::Approach(a) => {
                let s = &mut scores[a.index()];
                s.score += value.abs();
                let better = s.peak_tile.map_or(true, |p| value.abs() > map.values[p].abs());
                if better {
                    s.peak_tile = Some(tile);
                }
            }
            Region::Center => center_score += value.abs(),
            Region::Background => {}
        }
    }
    let inconclusive = scores.iter().all(|s| s.score == 0.0);
    // Stable: equal scores keep N, E, S, W order.
    scores.sort_by(|a, b| b.score.total_cmp(&a.score));
    if !inconclusive {
        for s in scores.iter_mut().take(k) {
            s.selected = true;
        }
    }
    Ok(FeatureReport {
        ranked: scores,
        center_score,
        inconclusive,
    })
}

/// Frame dimmed to half intensity with each tile's red channel raised in
/// proportion to where its |value| falls between the map's min and max.
pub fn saliency_overlay(map: &SaliencyMap, frame: &Image) -> Image {
    let mags: Vec<f64> = map.values.iter().map(|v| v.abs()).collect();
    let lo = mags.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mags.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = frame.clone();
    for y in 0..HEIGHT {
        for x in 0..WIDTH {
            let [r, g, b] = frame.pixel(x, y);
            let (r, g, b) = (r / 2, g / 2, b / 2);
            let t = if hi > lo {
                (mags[map.grid.tile_at(x, y)] - lo) / (hi - lo)
            } else {
                0.0
            };
            let red = r as f64 + t * (255 - r) as f64;
            out.set_pixel(x, y, [red.round() as u8, g, b]);
        }
    }
    out
}

pub fn export_saliency(map: &SaliencyMap, frame: &Image, path: impl AsRef<Path>) -> Result<()> {
    saliency_overlay(map, frame).write_ppm(path)
}

/// `tile_index,row,col,value,stderr,approach`
pub fn write_saliency_csv<W: Write>(map: &SaliencyMap, regions: &[Region], out: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    writer.write_record(["tile_index", "row", "col", "value", "stderr", "approach"])?;
    for tile in 0..map.values.len() {
        let (row, col) = map.grid.position(tile);
        writer.write_record([
            tile.to_string(),
            row.to_string(),
            col.to_string(),
            map.values[tile].to_string(),
            map.stderr[tile].to_string(),
            regions.get(tile).map_or("background", Region::label).to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
