use proptest::prelude::*;
use reef_core::config::{ExperimentConfig, GridConfig};
use reef_core::neuroevo::EvolutionRates;
use reef_core::physics::PhysicsParams;
use reef_core::snapshot::{decode, encode};
use reef_core::substrate::{COMMUNICATION, ENERGY, INFRASTRUCTURE};
use reef_core::{Brush, BrushTool, SimState};

fn state(width: usize, height: usize, population: usize, seed: u64, physics: PhysicsParams, evolution: EvolutionRates) -> SimState {
    ExperimentConfig {
        grid: GridConfig { width, height },
        initial_population: population,
        seed,
        physics,
        evolution,
        ..Default::default()
    }
    .build()
    .unwrap()
}

fn assert_valid(s: &SimState) {
    let front = s.substrate.front();
    for &g in &front.genome {
        assert!(g == -1 || s.pool.is_live(g as usize), "cell on dead slot {g}");
    }
    assert!(front.rotation.iter().all(|&r| r < 8));
    for name in [ENERGY, INFRASTRUCTURE] {
        let p = s.substrate.plane(name, 0).unwrap();
        assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0), "{name} negative or non-finite");
    }
    for sub in 0..3 {
        let p = s.substrate.plane(COMMUNICATION, sub).unwrap();
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)), "communication out of bounds");
    }
    assert!(s.pool.live_count() <= s.pool.capacity());
    for rec in s.pool.phylogeny() {
        assert!(rec.parent_lineage_ids.len() <= 2);
        if let Some(d) = rec.death_step {
            assert!(d >= rec.birth_step);
        }
    }
}

fn physics_strategy() -> impl Strategy<Value = PhysicsParams> {
    (0.0f64..0.5, 2.0f64..300.0, 0.0f64..1.0, 0.0f64..1.0, 0.05f64..1.0, 0.0f64..0.1, 0.0f64..1.0).prop_map(
        |(amp, period, eff, drain, explore, upkeep, starve)| PhysicsParams {
            cycle_amplitude: amp,
            cycle_period: period,
            invest_efficiency: eff,
            liquidate_efficiency: eff,
            drain_fraction: drain,
            explore_fraction: explore,
            upkeep,
            starvation_decay: starve,
            ..Default::default()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn state_stays_valid(
        seed in any::<u64>(),
        w in 4usize..24,
        h in 4usize..24,
        physics in physics_strategy(),
        p_radiation in 0.0f64..1.0,
        p_merge in 0.0f64..1.0,
    ) {
        let evolution = EvolutionRates { p_radiation, p_merge, ..Default::default() };
        let mut s = state(w, h, (w * h / 8).max(1), seed, physics, evolution);
        assert_valid(&s);
        for _ in 0..30 {
            s.step().unwrap();
            assert_valid(&s);
        }
    }

    #[test]
    fn snapshot_round_trip_continues_identically(seed in any::<u64>(), steps in 0u64..15, w in 4usize..20) {
        let mut a = state(w, w + 3, 4, seed, PhysicsParams::default(), EvolutionRates { p_radiation: 0.3, ..Default::default() });
        a.run(steps, &mut [], None).unwrap();
        let mut b = decode(&encode(&a).unwrap()).unwrap();
        prop_assert_eq!(a.digest(), b.digest());
        a.run(10, &mut [], None).unwrap();
        b.run(10, &mut [], None).unwrap();
        prop_assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn brushes_keep_state_valid(
        seed in any::<u64>(),
        x in 0usize..16,
        y in 0usize..16,
        radius in 0usize..6,
        amount in 0.01f64..3.0,
        tool in prop_oneof![Just(BrushTool::Energy), Just(BrushTool::Kill), Just(BrushTool::SeedOrganism)],
    ) {
        let mut s = state(16, 16, 6, seed, PhysicsParams::default(), EvolutionRates::default());
        s.run(5, &mut [], None).unwrap();
        s.apply_brush(&Brush { tool, x, y, radius, amount }).unwrap();
        s.run(5, &mut [], None).unwrap();
        assert_valid(&s);
    }
}

#[test]
fn same_seed_same_trajectory() {
    let run = || {
        let mut s = state(64, 64, 16, 42, PhysicsParams::default(), EvolutionRates::default());
        s.run(100, &mut [], None).unwrap();
        (s.digest(), s.pool.phylogeny().to_vec())
    };
    assert_eq!(run(), run());
    let mut other = state(64, 64, 16, 43, PhysicsParams::default(), EvolutionRates::default());
    other.run(100, &mut [], None).unwrap();
    assert_ne!(other.digest(), run().0);
}

#[test]
fn energy_brush_adds_amount_per_disc_cell() {
    let mut s = state(32, 32, 4, 1, PhysicsParams::default(), EvolutionRates::default());
    let total = |s: &SimState| s.substrate.plane(ENERGY, 0).unwrap().iter().map(|&v| v as f64).sum::<f64>();
    let before = total(&s);
    // Near a corner, so the disc wraps.
    let n = s.apply_brush(&Brush { tool: BrushTool::Energy, x: 1, y: 30, radius: 3, amount: 1.0 }).unwrap();
    let disc = (-3i32..=3).flat_map(|a| (-3i32..=3).map(move |b| a * a + b * b)).filter(|&d| d <= 9).count();
    assert_eq!(n, disc);
    assert!((total(&s) - before - disc as f64).abs() < 1e-4);
}
