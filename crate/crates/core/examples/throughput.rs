//! Mean step time for a seeded ecosystem at a few grid sizes.
//!
//! `cargo run --release -p reef-core --example throughput -- [steps] [workers]`

use std::time::Instant;

use reef_core::hypernet::HyperParams;
use reef_core::neuroevo::EvolutionRates;
use reef_core::physics::PhysicsParams;
use reef_core::SimState;

fn main() {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(100);
    let workers: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(0);
    for side in [256usize, 512] {
        let mut s = SimState::new(side, side, 1, PhysicsParams::default(), EvolutionRates::default(), HyperParams::default())
            .expect("state");
        if workers > 0 {
            s.set_workers(workers).expect("workers");
        }
        s.seed_initial_population(64).expect("seed");
        s.run(steps, &mut [], None).expect("warmup");
        let t0 = Instant::now();
        s.run(steps, &mut [], None).expect("run");
        let dt = t0.elapsed().as_secs_f64() / steps as f64;
        let occupied = s.substrate.front().genome.iter().filter(|&&g| g >= 0).count();
        println!(
            "{side}x{side}: {:.2} ms/step ({:.1} steps/s), occupied {occupied}, live genomes {}",
            dt * 1e3,
            1.0 / dt,
            s.pool.live_count()
        );
    }
}
