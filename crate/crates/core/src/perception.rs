//! Synthetic camera frame and ground-truth semantic features.
//!
//! Frame layout (128×64 RGB, origin top-left):
//!
//! * background black; the E–W road fills rows 28–35 and the N–S road
//!   columns 60–67, both mid gray;
//! * E approach (westbound) runs along rows 28–29 east of the box,
//!   cell `c` at x = 68 + 2c;
//! * W approach (eastbound) runs along rows 34–35 west of the box,
//!   cell `c` at x = 58 − 2c;
//! * N approach (southbound) uses columns 60–63 north of the box. Cells
//!   0–13 sit in column 60 at y = 26 − 2c, cells 14–27 fold into column 62
//!   at y = 26 − 2(c − 14);
//! * S approach (northbound) mirrors N in columns 64–67: cells 0–13 at
//!   x = 66, y = 36 + 2c, cells 14–27 at x = 64, y = 36 + 2(c − 14);
//! * each vehicle is a white 2×2 block, each signal a 2×2 block in the
//!   corner of the box nearest its approach's stop line.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{Approach, Phase, World};

pub const WIDTH: usize = 128;
pub const HEIGHT: usize = 64;
pub const CHANNELS: usize = 3;
pub const IMAGE_BYTES: usize = WIDTH * HEIGHT * CHANNELS;

pub const EW_ROAD_ROWS: (usize, usize) = (28, 35);
pub const NS_ROAD_COLS: (usize, usize) = (60, 67);

pub type Rgb = [u8; 3];

pub const BACKGROUND: Rgb = [0, 0, 0];
pub const ROAD: Rgb = [64, 64, 64];
pub const VEHICLE: Rgb = [255, 255, 255];
pub const SIGNAL_GREEN: Rgb = [0, 255, 0];
pub const SIGNAL_AMBER: Rgb = [255, 191, 0];
pub const SIGNAL_RED: Rgb = [255, 0, 0];

/// Cells per column on the folded N/S approaches.
const NS_FOLD: usize = 14;

#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    pixels: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Image({WIDTH}x{HEIGHT})")
    }
}

impl Default for Image {
    fn default() -> Self {
        Self::filled(BACKGROUND)
    }
}

impl Image {
    pub fn filled(color: Rgb) -> Self {
        let mut pixels = Vec::with_capacity(IMAGE_BYTES);
        for _ in 0..WIDTH * HEIGHT {
            pixels.extend_from_slice(&color);
        }
        Self { pixels }
    }

    pub fn from_bytes(pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != IMAGE_BYTES {
            return Err(Error::Shape {
                expected: IMAGE_BYTES,
                actual: pixels.len(),
            });
        }
        Ok(Self { pixels })
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        let i = (y * WIDTH + x) * CHANNELS;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, color: Rgb) {
        let i = (y * WIDTH + x) * CHANNELS;
        self.pixels[i..i + CHANNELS].copy_from_slice(&color);
    }

    /// Fills the rectangle clipped to the frame.
    pub fn fill_rect(&mut self, x: usize, y: usize, w: usize, h: usize, color: Rgb) {
        for yy in y..(y + h).min(HEIGHT) {
            for xx in x..(x + w).min(WIDTH) {
                self.set_pixel(xx, yy, color);
            }
        }
    }

    /// Binary PPM (P6) encoding.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{WIDTH} {HEIGHT}\n255\n").into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let header = format!("P6\n{WIDTH} {HEIGHT}\n255\n");
        let body = bytes
            .strip_prefix(header.as_bytes())
            .ok_or_else(|| Error::InvalidArgument("not a 128x64 P6 image".into()))?;
        Self::from_bytes(body.to_vec())
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(&self.to_ppm())?;
        file.flush()?;
        Ok(())
    }
}

/// Top-left pixel of the 2×2 block for `cell`, or `None` past the drawable
/// length of the approach.
pub fn vehicle_block_origin(approach: Approach, cell: usize) -> Option<(usize, usize)> {
    match approach {
        Approach::E if cell < 30 => Some((68 + 2 * cell, 28)),
        Approach::W if cell < 30 => Some((58 - 2 * cell, 34)),
        Approach::N if cell < NS_FOLD => Some((60, 26 - 2 * cell)),
        Approach::N if cell < 2 * NS_FOLD => Some((62, 26 - 2 * (cell - NS_FOLD))),
        Approach::S if cell < NS_FOLD => Some((66, 36 + 2 * cell)),
        Approach::S if cell < 2 * NS_FOLD => Some((64, 36 + 2 * (cell - NS_FOLD))),
        _ => None,
    }
}

pub fn signal_block_origin(approach: Approach) -> (usize, usize) {
    match approach {
        Approach::N => (60, 28),
        Approach::E => (66, 28),
        Approach::S => (66, 34),
        Approach::W => (60, 34),
    }
}

pub fn signal_color(phase: Phase, approach: Approach) -> Rgb {
    if phase.serves(approach) {
        SIGNAL_GREEN
    } else if phase.is_yellow_for(approach) {
        SIGNAL_AMBER
    } else {
        SIGNAL_RED
    }
}

pub fn render_frame(world: &World) -> Image {
    let mut image = Image::default();
    let (r0, r1) = EW_ROAD_ROWS;
    let (c0, c1) = NS_ROAD_COLS;
    image.fill_rect(0, r0, WIDTH, r1 - r0 + 1, ROAD);
    image.fill_rect(c0, 0, c1 - c0 + 1, HEIGHT, ROAD);
    for approach in Approach::ALL {
        let (x, y) = signal_block_origin(approach);
        image.fill_rect(x, y, 2, 2, signal_color(world.phase(), approach));
    }
    for vehicle in world.vehicles() {
        // Config validation caps the approach length to the drawable range.
        if let Some((x, y)) = vehicle_block_origin(vehicle.approach, vehicle.cell) {
            image.fill_rect(x, y, 2, 2, VEHICLE);
        }
    }
    image
}

/// Largest cell of the platoon nearest the stop line. Consecutive members
/// may be separated by at most `gap_threshold` empty cells.
pub fn first_platoon_tail(occupied: &[usize], gap_threshold: usize) -> Option<usize> {
    let mut cells = occupied.to_vec();
    cells.sort_unstable();
    cells.dedup();
    let (&head, rest) = cells.split_first()?;
    let mut tail = head;
    for &cell in rest {
        if cell - tail - 1 > gap_threshold {
            break;
        }
        tail = cell;
    }
    Some(tail)
}

/// Four platoon-tail cell indices (N, E, S, W; −1 when empty) and the
/// numeric signal phase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticVector {
    pub positions: [f32; 4],
    pub phase_index: f32,
}

pub const EMPTY_APPROACH: f32 = -1.0;

impl SemanticVector {
    pub fn as_array(&self) -> [f32; 5] {
        let p = self.positions;
        [p[0], p[1], p[2], p[3], self.phase_index]
    }

    /// Network input: positions divided by the approach length (the empty
    /// sentinel becomes −1/L) and the phase index divided by 3.
    pub fn features(&self, approach_length: usize) -> [f64; 5] {
        let l = approach_length as f64;
        let p = self.positions;
        [
            p[0] as f64 / l,
            p[1] as f64 / l,
            p[2] as f64 / l,
            p[3] as f64 / l,
            self.phase_index as f64 / 3.0,
        ]
    }
}

pub fn extract_semantic(world: &World, gap_threshold: usize) -> SemanticVector {
    let mut positions = [EMPTY_APPROACH; 4];
    for approach in Approach::ALL {
        if let Some(tail) = first_platoon_tail(&world.occupied_cells(approach), gap_threshold) {
            positions[approach.index()] = tail as f32;
        }
    }
    SemanticVector {
        positions,
        phase_index: world.phase().index() as f32,
    }
}

/// Fraction of the approach's cells holding a vehicle.
pub fn occupancy(world: &World, approach: Approach) -> f64 {
    let lane = world.lane(approach);
    lane.iter().filter(|v| v.is_some()).count() as f64 / lane.len() as f64
}

/// Vehicles on the approach that did not move during the last step.
pub fn queue_length(world: &World, approach: Approach) -> usize {
    world.lane(approach).iter().flatten().filter(|v| v.halted).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Action, SignalState, SimConfig};

    fn quiet() -> SimConfig {
        SimConfig {
            arrival_prob: [0.0; 4],
            ..SimConfig::default()
        }
    }

    fn count_vehicle_blocks(image: &Image) -> usize {
        let mut n = 0;
        for y in 0..HEIGHT {
            for x in 0..WIDTH {
                if image.pixel(x, y) == VEHICLE {
                    n += 1;
                }
            }
        }
        n / 4
    }

    #[test]
    fn empty_frame() {
        let w = World::new(quiet(), 0).unwrap();
        let img = render_frame(&w);
        assert_eq!(img.as_bytes().len(), 24_576);
        assert_eq!(count_vehicle_blocks(&img), 0);
        assert_eq!(img.pixel(0, 0), BACKGROUND);
        assert_eq!(img.pixel(0, 30), ROAD);
        assert_eq!(img.pixel(62, 5), ROAD);
        assert_eq!(img.pixel(60, 28), SIGNAL_GREEN);
        assert_eq!(img.pixel(66, 28), SIGNAL_RED);
    }

    #[test]
    fn south_cell_four_block() {
        let mut w = World::new(quiet(), 0).unwrap();
        w.place_vehicle(Approach::S, 4).unwrap();
        let img = render_frame(&w);
        // x = 66, y = 36 + 2*4 = 44
        for y in 0..HEIGHT {
            for x in 0..WIDTH {
                let inside = (66..68).contains(&x) && (44..46).contains(&y);
                assert_eq!(img.pixel(x, y) == VEHICLE, inside, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn layout_blocks_are_disjoint_and_in_frame() {
        let mut seen = std::collections::HashSet::new();
        for a in Approach::ALL {
            for c in 0..crate::sim::MAX_APPROACH_CELLS {
                let (x, y) = vehicle_block_origin(a, c).unwrap();
                assert!(x + 1 < WIDTH && y + 1 < HEIGHT);
                assert!(x % 2 == 0 && y % 2 == 0);
                assert!(seen.insert((x, y)), "{a} cell {c} overlaps");
            }
            seen.insert(signal_block_origin(a));
        }
    }

    #[test]
    fn platoon_tail_examples() {
        assert_eq!(first_platoon_tail(&[], 2), None);
        assert_eq!(first_platoon_tail(&[0], 2), Some(0));
        assert_eq!(first_platoon_tail(&[0, 1, 2, 7, 8], 2), Some(2));
        assert_eq!(first_platoon_tail(&[8, 2, 0, 1, 7], 2), Some(2));
        assert_eq!(first_platoon_tail(&[0, 3, 6, 10], 2), Some(6));
        assert_eq!(first_platoon_tail(&[5, 9], 3), Some(9));
    }

    #[test]
    fn semantic_examples() {
        let mut w = World::new(quiet(), 0).unwrap();
        assert_eq!(extract_semantic(&w, 2).as_array(), [-1.0, -1.0, -1.0, -1.0, 0.0]);
        w.place_vehicle(Approach::S, 4).unwrap();
        w.set_signal(SignalState { phase: Phase::EwGreen, phase_elapsed: 0 });
        assert_eq!(extract_semantic(&w, 2).as_array(), [-1.0, -1.0, 4.0, -1.0, 2.0]);
    }

    #[test]
    fn occupancy_and_queue() {
        let mut w = World::new(quiet(), 0).unwrap();
        assert_eq!(occupancy(&w, Approach::E), 0.0);
        assert_eq!(queue_length(&w, Approach::E), 0);
        for c in [0, 1, 2, 10, 20] {
            w.place_vehicle(Approach::E, c).unwrap();
        }
        w.step(Action::Extend).unwrap();
        assert_eq!(occupancy(&w, Approach::E), 0.2);
        assert_eq!(queue_length(&w, Approach::E), 3);
        for c in 0..25 {
            w.place_vehicle(Approach::W, c).unwrap();
        }
        assert_eq!(occupancy(&w, Approach::W), 1.0);
    }

    #[test]
    fn ppm_round_trip() {
        let mut w = World::new(quiet(), 0).unwrap();
        w.place_vehicle(Approach::N, 20).unwrap();
        let img = render_frame(&w);
        let ppm = img.to_ppm();
        assert!(ppm.starts_with(b"P6\n128 64\n255\n"));
        assert_eq!(ppm.len(), 14 + 24_576);
        assert_eq!(Image::from_ppm(&ppm).unwrap(), img);
    }
}
