//! Fixtures shared by the criterion benches.

use semtlc_core::{Action, SimConfig, World};

/// Default scenario advanced `steps` steps under Extend, so queues exist.
pub fn loaded_world(seed: u64, steps: u64) -> World {
    let mut world = World::new(SimConfig::default(), seed).expect("default config is valid");
    for _ in 0..steps {
        world.step(Action::Extend).expect("within horizon");
    }
    world
}
