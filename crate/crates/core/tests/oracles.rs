use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semtlc_core::perception::{first_platoon_tail, Image, IMAGE_BYTES};
use semtlc_core::semcom::{decode_raw, decode_semantic, encode_raw, encode_semantic};
use semtlc_core::sim::run_fixed_time;
use semtlc_core::{Action, Approach, Phase, SemanticVector, SimConfig, World};

/// Walks every cell from the stop line and ends the platoon at the first
/// run of empty cells longer than the gap threshold.
fn naive_tail(occupied: &[bool], gap: usize) -> Option<usize> {
    let first = occupied.iter().position(|&o| o)?;
    let mut tail = first;
    let mut empty_run = 0;
    for (cell, &o) in occupied.iter().enumerate().skip(first + 1) {
        if o {
            tail = cell;
            empty_run = 0;
        } else {
            empty_run += 1;
            if empty_run > gap {
                break;
            }
        }
    }
    Some(tail)
}

#[test]
fn platoon_tail_matches_naive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..10_000 {
        let length = rng.gen_range(1..40);
        let density = rng.gen_range(0.0..1.0);
        let occupied: Vec<bool> = (0..length).map(|_| rng.gen_bool(density)).collect();
        let gap = rng.gen_range(0..5);
        let cells: Vec<usize> = occupied.iter().enumerate().filter(|(_, &o)| o).map(|(c, _)| c).collect();
        assert_eq!(first_platoon_tail(&cells, gap), naive_tail(&occupied, gap), "{occupied:?} gap {gap}");
    }
}

#[test]
fn platoon_examples() {
    assert_eq!(first_platoon_tail(&[], 2), None);
    assert_eq!(first_platoon_tail(&[0, 1, 2, 6], 2), Some(2));
    assert_eq!(first_platoon_tail(&[0, 1, 2, 5], 2), Some(5));
    assert_eq!(first_platoon_tail(&[4], 2), Some(4));
}

/// Recomputes travel time from vehicle sightings alone: a vehicle spawned
/// during step k is first seen after it, and one that left during step j is
/// last seen before it.
fn event_log_metrics(config: &SimConfig, seed: u64, policy: impl Fn(&World) -> Action) -> (f64, f64, u64) {
    let mut world = World::new(config.clone(), seed).unwrap();
    let mut first_seen: HashMap<u64, u64> = HashMap::new();
    let mut travel = Vec::new();
    while !world.is_finished() {
        let k = world.time();
        let before: Vec<u64> = world.vehicles().map(|v| v.id).collect();
        world.step(policy(&world)).unwrap();
        let after: HashMap<u64, ()> = world.vehicles().map(|v| (v.id, ())).collect();
        for id in &before {
            if !after.contains_key(id) {
                travel.push(k - first_seen[id]);
            }
        }
        for id in after.keys() {
            first_seen.entry(*id).or_insert(k);
        }
    }
    let n = travel.len() as f64;
    if travel.is_empty() {
        return (0.0, 0.0, 0);
    }
    let avg: f64 = travel.iter().sum::<u64>() as f64 / n * config.step_seconds;
    let free = config.approach_length_cells as f64 * config.step_seconds;
    (avg, avg - free, travel.len() as u64)
}

#[test]
fn episode_metrics_match_event_log() {
    let configs = [
        SimConfig::default(),
        SimConfig {
            arrival_prob: [0.3, 0.1, 0.4, 0.05],
            step_seconds: 0.5,
            horizon_steps: 900,
            ..SimConfig::default()
        },
        SimConfig {
            approach_length_cells: 12,
            yellow_steps: 0,
            min_green_steps: 4,
            ..SimConfig::default()
        },
    ];
    for (i, config) in configs.iter().enumerate() {
        for seed in 0..3 {
            let split = 10 + 7 * seed as u32;
            let policy = |w: &World| semtlc_core::sim::fixed_time_action(w, split);
            let (travel, delay, n) = event_log_metrics(config, seed, policy);
            let m = run_fixed_time(config, split, seed).unwrap();
            assert_eq!(m.vehicles_completed, n, "config {i} seed {seed}");
            assert!((m.avg_travel_time - travel).abs() < 1e-9, "config {i} seed {seed}");
            assert!((m.avg_delay - delay).abs() < 1e-9, "config {i} seed {seed}");
            assert!(m.avg_delay >= 0.0);
        }
    }
}

#[test]
fn unobstructed_vehicle_has_zero_delay() {
    let config = SimConfig {
        arrival_prob: [0.0; 4],
        ..SimConfig::default()
    };
    let mut world = World::new(config, 0).unwrap();
    world.place_vehicle(Approach::N, 24).unwrap();
    for _ in 0..30 {
        world.step(Action::Extend).unwrap();
    }
    let m = world.metrics();
    assert_eq!(m.vehicles_completed, 1);
    assert_eq!(m.avg_travel_time, 25.0);
    assert_eq!(m.avg_delay, 0.0);
}

#[test]
fn payload_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let image = Image::from_bytes((0..IMAGE_BYTES).map(|_| rng.gen()).collect()).unwrap();
        let phase = Phase::from_index(rng.gen_range(0..4)).unwrap();
        let raw = encode_raw(&image, phase);
        assert_eq!(raw.as_bytes().len(), 24_577);
        assert_eq!(decode_raw(raw.as_bytes()).unwrap(), (image, phase));

        let mut positions = [0.0f32; 4];
        for p in &mut positions {
            *p = if rng.gen_bool(0.2) { -1.0 } else { rng.gen_range(0..25) as f32 };
        }
        let v = SemanticVector {
            positions,
            phase_index: rng.gen_range(0..4) as f32,
        };
        let payload = encode_semantic(&v);
        assert_eq!(payload.as_bytes().len(), 20);
        let back = decode_semantic(payload.as_bytes()).unwrap();
        assert_eq!(back.as_array().map(f32::to_bits), v.as_array().map(f32::to_bits));
    }
}
