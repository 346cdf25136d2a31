//! Discrete-time update: sense, evaluate networks grouped by genome, apply
//! physics, evolve, publish.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hypernet::{forward_batched, HyperParams, ACTUATORS, SENSORS, SENSOR_CHANNELS};
use crate::neuroevo::{CppnGenome, EvolutionRates, GenomePool, POOL_CAPACITY};
use crate::physics::{
    self, rotation_permutation, ActionField, CellActions, EcoChannels, PhysicsParams,
    RadiationSummary, KERNEL_OFFSETS,
};
use crate::rng::{Purpose, RngStream};
use crate::substrate::{ChannelSpec, Planes, Substrate};

/// Cells evaluated per batched network call.
const BATCH: usize = 256;

/// Everything needed to advance the simulation deterministically.
#[derive(Clone, Debug)]
pub struct SimState {
    pub substrate: Substrate,
    pub pool: GenomePool,
    pub physics: PhysicsParams,
    pub evolution: EvolutionRates,
    pub seed: u64,
    channels: EcoChannels,
    workers: Option<Arc<rayon::ThreadPool>>,
    last: StepReport,
    brush_count: u64,
}

/// What happened during the most recent step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct StepReport {
    pub step: u64,
    pub occupied: usize,
    pub adoptions: usize,
    pub merged: usize,
    pub mutated: usize,
    pub rejected: usize,
    pub extinctions: usize,
}

impl SimState {
    pub fn new(
        width: usize,
        height: usize,
        seed: u64,
        physics: PhysicsParams,
        evolution: EvolutionRates,
        hyper: HyperParams,
    ) -> Result<Self> {
        let substrate = Substrate::new(width, height, ChannelSpec::ecosystem())?;
        Self::from_parts(substrate, GenomePool::new(POOL_CAPACITY, hyper), physics, evolution, seed)
    }

    pub fn from_parts(
        substrate: Substrate,
        pool: GenomePool,
        physics: PhysicsParams,
        evolution: EvolutionRates,
        seed: u64,
    ) -> Result<Self> {
        physics.validate(substrate.cells())?;
        evolution.validate()?;
        pool.hyper().validate()?;
        let channels = EcoChannels::resolve(substrate.layout())?;
        Ok(Self {
            substrate,
            pool,
            physics,
            evolution,
            seed,
            channels,
            workers: None,
            last: StepReport::default(),
            brush_count: 0,
        })
    }

    /// Run the parallel phases on a dedicated pool of `n` threads. Results
    /// do not depend on `n`.
    pub fn set_workers(&mut self, n: usize) -> Result<()> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::CorruptState(format!("cannot build worker pool: {e}")))?;
        self.workers = Some(Arc::new(pool));
        Ok(())
    }

    pub fn with_workers(mut self, n: usize) -> Result<Self> {
        self.set_workers(n)?;
        Ok(self)
    }

    pub fn step_counter(&self) -> u64 {
        self.substrate.step_counter()
    }

    pub fn channels(&self) -> &EcoChannels {
        &self.channels
    }

    pub fn last_report(&self) -> &StepReport {
        &self.last
    }

    pub(crate) fn brush_count(&self) -> u64 {
        self.brush_count
    }

    pub(crate) fn set_brush_count(&mut self, n: u64) {
        self.brush_count = n;
    }

    pub fn digest(&self) -> u64 {
        self.substrate.digest()
    }

    fn in_workers<R: Send>(&mut self, f: impl FnOnce(&mut Self) -> R + Send) -> R {
        match self.workers.clone() {
            Some(pool) => pool.install(|| f(self)),
            None => f(self),
        }
    }

    /// Admit `count` random genomes and place each at a distinct empty cell
    /// with one unit of energy and infrastructure and a random heading.
    pub fn seed_initial_population(&mut self, count: usize) -> Result<()> {
        if count > self.pool.capacity() {
            return Err(Error::CapacityExceeded {
                requested: count,
                capacity: self.pool.capacity(),
            });
        }
        let t = self.step_counter();
        let cells = self.substrate.front();
        let free = cells.genome.iter().filter(|&&g| g < 0).count();
        if count > free {
            return Err(Error::CapacityExceeded {
                requested: count,
                capacity: free,
            });
        }
        let n = cells.cells() as u64;
        let mut placer = RngStream::derive(self.seed, t, Purpose::Placement, 0);
        let mut taken = BTreeSet::new();
        let mut sites = Vec::with_capacity(count);
        while sites.len() < count {
            let idx = placer.below(n) as usize;
            if cells.genome[idx] < 0 && taken.insert(idx) {
                sites.push((idx, placer.below(8) as u8));
            }
        }
        for (i, (idx, heading)) in sites.into_iter().enumerate() {
            let mut rng = RngStream::derive(self.seed, t, Purpose::InitGenome, i as u64);
            let genome = CppnGenome::init(&mut rng, self.pool.innovations_mut());
            let slot = self.pool.admit(genome, Vec::new(), t)?;
            let ch = self.channels;
            let cells = self.substrate.front_mut();
            cells.genome[idx] = slot as i32;
            cells.rotation[idx] = heading;
            cells.data[ch.energy][idx] = 1.0;
            cells.data[ch.infrastructure][idx] = 1.0;
        }
        Ok(())
    }

    /// Sensor-to-actuator pass over every occupied cell, batched per genome.
    pub fn compute_actions(&self) -> Result<ActionField> {
        let cells = self.substrate.front();
        let n = cells.cells();
        let capacity = self.pool.capacity();

        let mut counts = vec![0usize; capacity + 1];
        for &g in &cells.genome {
            if g >= 0 {
                let slot = self.pool.live_slot(g).ok_or_else(|| {
                    Error::CorruptState(format!("cell references dead genome slot {g}"))
                })?;
                counts[slot + 1] += 1;
            }
        }
        for s in 0..capacity {
            counts[s + 1] += counts[s];
        }
        let mut order = vec![0usize; counts[capacity]];
        let mut cursor = counts.clone();
        for (idx, &g) in cells.genome.iter().enumerate() {
            if g >= 0 {
                order[cursor[g as usize]] = idx;
                cursor[g as usize] += 1;
            }
        }

        let mut tasks = Vec::new();
        for slot in 0..capacity {
            let (start, end) = (counts[slot], counts[slot + 1]);
            let mut lo = start;
            while lo < end {
                let hi = (lo + BATCH).min(end);
                tasks.push((slot, lo, hi));
                lo = hi;
            }
        }

        let ch = &self.channels;
        let outputs: Vec<Vec<f32>> = tasks
            .par_iter()
            .map(|&(slot, lo, hi)| {
                let params = self.pool.params(slot).expect("live slot has parameters");
                let mut rows = vec![0.0f32; (hi - lo) * SENSORS];
                for (row, &idx) in rows.chunks_exact_mut(SENSORS).zip(&order[lo..hi]) {
                    gather_sensors_into(cells, ch, idx, row);
                }
                forward_batched(params, &rows)
            })
            .collect();

        let mut field = ActionField::empty(cells.width, cells.height);
        debug_assert_eq!(field.cells.len(), n);
        for (&(_, lo, hi), out) in tasks.iter().zip(&outputs) {
            for (&idx, o) in order[lo..hi].iter().zip(out.chunks_exact(ACTUATORS)) {
                field.set(idx, CellActions::from_outputs(o));
            }
        }
        Ok(field)
    }

    /// Advance one step.
    pub fn step(&mut self) -> Result<StepReport> {
        self.in_workers(|s| s.step_inner())
    }

    fn step_inner(&mut self) -> Result<StepReport> {
        let t = self.step_counter();
        let actions = self.compute_actions()?;
        let occupied = actions.cells.iter().filter(|a| a.is_some()).count();
        let ch = self.channels;

        self.substrate.prepare_back();
        let bounds = self.substrate.layout().plane_bounds();
        let back = self.substrate.back_mut();
        physics::energy_cycle(back, &ch, t, &self.physics);
        physics::apply_invest_liquidate(back, &ch, &actions, &self.physics);
        physics::write_communication(back, &ch, &actions);
        let events = physics::resolve_exploration(back, &ch, &actions, &self.physics);
        let RadiationSummary {
            merged,
            mutated,
            rejected,
        } = physics::apply_radiation(&events, back, &mut self.pool, &self.evolution, self.seed, t);
        clamp_bounded(back, &bounds);
        let extinctions = physics::census_deaths(back, &mut self.pool, t + 1)?;
        self.substrate.swap_buffers();

        self.last = StepReport {
            step: t + 1,
            occupied,
            adoptions: events.len(),
            merged,
            mutated,
            rejected,
            extinctions,
        };
        Ok(self.last)
    }

    /// Step `n` times, invoking hooks on their cadence after each step.
    /// Hook failures are collected; they never abort the run. If `stop` is
    /// raised the run ends at the next step boundary.
    pub fn run(
        &mut self,
        n: u64,
        hooks: &mut [&mut dyn Hook],
        stop: Option<&AtomicBool>,
    ) -> Result<RunReport> {
        let mut report = RunReport::default();
        for _ in 0..n {
            if stop.is_some_and(|s| s.load(Ordering::Relaxed)) {
                report.interrupted = true;
                break;
            }
            self.step()?;
            report.steps += 1;
            let t = self.step_counter();
            for hook in hooks.iter_mut() {
                let every = hook.every();
                if every > 0 && t % every == 0 {
                    if let Err(msg) = hook.on_step(self) {
                        report.hook_errors.push((t, msg));
                    }
                }
            }
        }
        Ok(report)
    }

    /// Apply a painting intervention to the visible state.
    pub fn apply_brush(&mut self, brush: &Brush) -> Result<usize> {
        if !brush.amount.is_finite() {
            return Err(Error::config("brush.amount", "must be finite"));
        }
        let cells_in_disc = disc(self.substrate.front(), brush.x, brush.y, brush.radius);
        let ch = self.channels;
        match brush.tool {
            BrushTool::Energy => {
                let plane = &mut self.substrate.front_mut().data[ch.energy];
                for &i in &cells_in_disc {
                    plane[i] = (plane[i] + brush.amount as f32).max(0.0);
                }
            }
            BrushTool::Kill => {
                let cells = self.substrate.front_mut();
                for &i in &cells_in_disc {
                    cells.genome[i] = -1;
                    cells.data[ch.infrastructure][i] = 0.0;
                }
            }
            BrushTool::SeedOrganism => {
                if !(brush.amount as f32 >= self.physics.death_threshold as f32) {
                    return Err(Error::config(
                        "brush.amount",
                        "seeded infrastructure must reach the death threshold",
                    ));
                }
                let t = self.step_counter();
                let mut rng = RngStream::derive(self.seed, t, Purpose::Brush, self.brush_count);
                self.brush_count += 1;
                let genome = CppnGenome::init(&mut rng, self.pool.innovations_mut());
                let slot = self.pool.admit(genome, Vec::new(), t)?;
                let cells = self.substrate.front_mut();
                for &i in &cells_in_disc {
                    cells.genome[i] = slot as i32;
                    cells.data[ch.infrastructure][i] = brush.amount as f32;
                }
            }
        }
        Ok(cells_in_disc.len())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BrushTool {
    Energy,
    Kill,
    SeedOrganism,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Deserialize, Serialize)]
pub struct Brush {
    pub tool: BrushTool,
    pub x: usize,
    pub y: usize,
    pub radius: usize,
    pub amount: f64,
}

/// Distinct cells within Euclidean distance `r` of `(x, y)` on the torus.
pub fn disc(cells: &Planes, x: usize, y: usize, r: usize) -> Vec<usize> {
    let r = r as i64;
    let mut out = BTreeSet::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                let (nx, ny) = crate::substrate::wrap(
                    x as i64 + dx,
                    y as i64 + dy,
                    cells.width,
                    cells.height,
                );
                out.insert(cells.index(nx, ny));
            }
        }
    }
    out.into_iter().collect()
}

fn clamp_bounded(cells: &mut Planes, bounds: &[Option<(f32, f32)>]) {
    for (plane, b) in cells.data.iter_mut().zip(bounds) {
        if let Some((lo, hi)) = *b {
            plane
                .par_chunks_mut(physics::CHUNK)
                .for_each(|c| c.iter_mut().for_each(|v| *v = v.clamp(lo, hi)));
        }
    }
}

/// Sensor vector of cell `idx`: the center, then the 8 neighbors in the
/// cell's rotation order; per slot energy, infrastructure, comm0..2.
pub fn gather_sensors(cells: &Planes, ch: &EcoChannels, idx: usize) -> [f32; SENSORS] {
    let mut out = [0.0; SENSORS];
    gather_sensors_into(cells, ch, idx, &mut out);
    out
}

fn gather_sensors_into(cells: &Planes, ch: &EcoChannels, idx: usize, out: &mut [f32]) {
    let planes = ch.sensed().map(|p| cells.data[p].as_slice());
    let perm = rotation_permutation(cells.rotation[idx]);
    let (w, h) = (cells.width, cells.height);
    let (x, y) = cells.coords(idx);
    let xs = [if x == 0 { w - 1 } else { x - 1 }, x, if x + 1 == w { 0 } else { x + 1 }];
    let ys = [if y == 0 { h - 1 } else { y - 1 }, y, if y + 1 == h { 0 } else { y + 1 }];
    let mut write = |slot: usize, cell: usize| {
        for (c, plane) in planes.iter().enumerate() {
            out[slot * SENSOR_CHANNELS + c] = plane[cell];
        }
    };
    write(0, idx);
    for (k, &j) in perm.iter().enumerate() {
        let (dx, dy) = KERNEL_OFFSETS[j as usize];
        write(k + 1, ys[(dy + 1) as usize] * w + xs[(dx + 1) as usize]);
    }
}

/// Called by [`SimState::run`] every `every()` steps.
pub trait Hook {
    fn every(&self) -> u64;
    fn on_step(&mut self, state: &SimState) -> std::result::Result<(), String>;
}

/// Closure-backed hook.
pub struct FnHook<F> {
    pub every: u64,
    pub f: F,
}

impl<F> Hook for FnHook<F>
where
    F: FnMut(&SimState) -> std::result::Result<(), String>,
{
    fn every(&self) -> u64 {
        self.every
    }

    fn on_step(&mut self, state: &SimState) -> std::result::Result<(), String> {
        (self.f)(state)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    pub steps: u64,
    pub interrupted: bool,
    pub hook_errors: Vec<(u64, String)>,
}
