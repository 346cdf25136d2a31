//! Physics: turns per-cell actuator outputs into substrate changes.
//!
//! Phases run in a fixed order on the buffer being written:
//! energy cycle → invest/liquidate → communication → exploration →
//! radiation → death census. Per-cell phases are data-parallel; the
//! exploration phase is a per-target gather with fixed tie-breaking, so no
//! phase depends on worker count or scheduling.

mod exploration;
mod radiation;

pub use exploration::{plan_shipment, resolve_exploration, AdoptionEvent, Shipment};
pub use radiation::{apply_radiation, census_deaths, RadiationSummary};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypernet::ACTUATORS;
use crate::substrate::{ChannelLayout, Planes, COMMUNICATION, ENERGY, INFRASTRUCTURE};

/// Cells per parallel work unit.
pub(crate) const CHUNK: usize = 4096;

/// Decay applied to the communication of unoccupied cells each step.
pub const COMM_DECAY: f32 = 0.9;

/// Moore offsets `(dx, dy)`, x right and y up; offset `j` points at `j·45°`.
pub const KERNEL_OFFSETS: [(i32, i32); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

/// Offset indices ordered by angular distance to heading `r`, ties going
/// counterclockwise first.
pub fn rotation_permutation(r: u8) -> [u8; 8] {
    let r = r % 8;
    let mut out = [0u8; 8];
    out[0] = r;
    for k in 1..4u8 {
        out[(2 * k - 1) as usize] = (r + k) % 8;
        out[(2 * k) as usize] = (r + 8 - k) % 8;
    }
    out[7] = (r + 4) % 8;
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsParams {
    /// Peak energy injected per cell per step at midday.
    pub cycle_amplitude: f64,
    /// Day/night period in steps.
    pub cycle_period: f64,
    /// Per-cell weights on daytime injection; `None` means uniform 1.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy_source_map: Option<Vec<f32>>,
    /// Night drain per unit of |cycle|.
    pub drain_fraction: f64,
    pub invest_rate: f64,
    pub liquidate_rate: f64,
    pub invest_efficiency: f64,
    pub liquidate_efficiency: f64,
    pub explore_fraction: f64,
    /// Energy consumed per unit of infrastructure per step.
    pub upkeep: f64,
    pub starvation_decay: f64,
    pub death_threshold: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            cycle_amplitude: 0.1,
            cycle_period: 100.0,
            energy_source_map: None,
            drain_fraction: 0.05,
            invest_rate: 0.1,
            liquidate_rate: 0.1,
            invest_efficiency: 0.9,
            liquidate_efficiency: 0.9,
            explore_fraction: 0.5,
            upkeep: 0.02,
            starvation_decay: 0.1,
            death_threshold: 1e-3,
        }
    }
}

impl PhysicsParams {
    pub fn validate(&self, cells: usize) -> Result<()> {
        let non_negative = [
            ("cycle_amplitude", self.cycle_amplitude),
            ("invest_rate", self.invest_rate),
            ("liquidate_rate", self.liquidate_rate),
            ("upkeep", self.upkeep),
            ("death_threshold", self.death_threshold),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("physics.{name}"), "must be >= 0"));
            }
        }
        let unit = [
            ("drain_fraction", self.drain_fraction),
            ("invest_efficiency", self.invest_efficiency),
            ("liquidate_efficiency", self.liquidate_efficiency),
            ("starvation_decay", self.starvation_decay),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("physics.{name}"), "must be in [0, 1]"));
            }
        }
        if !(self.explore_fraction > 0.0 && self.explore_fraction <= 1.0) {
            return Err(Error::config("physics.explore_fraction", "must be in (0, 1]"));
        }
        if !(self.cycle_period >= 2.0) || !self.cycle_period.is_finite() {
            return Err(Error::config("physics.cycle_period", "must be >= 2"));
        }
        if let Some(map) = &self.energy_source_map {
            if map.len() != cells {
                return Err(Error::config(
                    "physics.energy_source_map",
                    format!("has {} entries, grid has {cells} cells", map.len()),
                ));
            }
            if map.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::config("physics.energy_source_map", "weights must be >= 0"));
            }
        }
        Ok(())
    }

    /// Signed global cycle value at step `t`.
    pub fn cycle(&self, t: u64) -> f64 {
        self.cycle_amplitude * (std::f64::consts::TAU * t as f64 / self.cycle_period).sin()
    }
}

/// Plane indices of the channels physics acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EcoChannels {
    pub energy: usize,
    pub infrastructure: usize,
    pub comm: [usize; 3],
}

impl EcoChannels {
    pub fn resolve(layout: &ChannelLayout) -> Result<Self> {
        let get = |name: &str, sub| {
            layout
                .plane(name, sub)
                .ok_or_else(|| Error::MissingChannel(format!("{name}[{sub}]")))
        };
        Ok(Self {
            energy: get(ENERGY, 0)?,
            infrastructure: get(INFRASTRUCTURE, 0)?,
            comm: [get(COMMUNICATION, 0)?, get(COMMUNICATION, 1)?, get(COMMUNICATION, 2)?],
        })
    }

    /// Sensed sub-planes in sensor order.
    pub fn sensed(&self) -> [usize; 5] {
        [
            self.energy,
            self.infrastructure,
            self.comm[0],
            self.comm[1],
            self.comm[2],
        ]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CellActions {
    pub invest: f32,
    pub liquidate: f32,
    pub comm: [f32; 3],
    /// Indexed by rotation-ordered kernel slot.
    pub explore: [f32; 8],
}

impl CellActions {
    /// Unpack network outputs: invest, liquidate, comm0..2, explore0..7.
    pub fn from_outputs(o: &[f32]) -> Self {
        debug_assert_eq!(o.len(), ACTUATORS);
        let mut a = CellActions {
            invest: o[0],
            liquidate: o[1],
            ..Default::default()
        };
        a.comm.copy_from_slice(&o[2..5]);
        a.explore.copy_from_slice(&o[5..13]);
        a
    }

    /// Explore slot with the largest output; ties go to the lowest slot.
    pub fn explore_slot(&self) -> usize {
        let mut best = 0;
        for k in 1..8 {
            if self.explore[k] > self.explore[best] {
                best = k;
            }
        }
        best
    }
}

/// Actuator values for every occupied cell of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionField {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<Option<CellActions>>,
}

impl ActionField {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            cells: vec![None; width * height],
        }
    }

    #[inline]
    pub fn get(&self, idx: usize) -> Option<&CellActions> {
        self.cells[idx].as_ref()
    }

    pub fn set(&mut self, idx: usize, a: CellActions) {
        self.cells[idx] = Some(a);
    }
}

/// Two distinct planes, mutably.
pub(crate) fn planes_mut(data: &mut [Vec<f32>], a: usize, b: usize) -> (&mut [f32], &mut [f32]) {
    assert_ne!(a, b);
    if a < b {
        let (lo, hi) = data.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = data.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

/// Global day/night cycle: daytime injection weighted by the source map,
/// multiplicative drain at night.
pub fn energy_cycle(cells: &mut Planes, ch: &EcoChannels, t: u64, params: &PhysicsParams) {
    let rho = params.cycle(t);
    let energy = &mut cells.data[ch.energy];
    if rho > 0.0 {
        let gain = rho as f32;
        match &params.energy_source_map {
            Some(map) => energy
                .par_chunks_mut(CHUNK)
                .zip(map.par_chunks(CHUNK))
                .for_each(|(e, m)| e.iter_mut().zip(m).for_each(|(e, m)| *e += gain * m)),
            None => energy
                .par_chunks_mut(CHUNK)
                .for_each(|e| e.iter_mut().for_each(|e| *e += gain)),
        }
    } else if rho < 0.0 {
        let drain = (params.drain_fraction * rho.abs()) as f32;
        energy.par_chunks_mut(CHUNK).for_each(|e| {
            e.iter_mut().for_each(|e| *e = (*e - drain * *e).max(0.0))
        });
    }
}

/// Invest/liquidate conversion, infrastructure upkeep, starvation and death.
pub fn apply_invest_liquidate(
    cells: &mut Planes,
    ch: &EcoChannels,
    actions: &ActionField,
    params: &PhysicsParams,
) {
    let kinv = params.invest_rate as f32;
    let kliq = params.liquidate_rate as f32;
    let einv = params.invest_efficiency as f32;
    let eliq = params.liquidate_efficiency as f32;
    let upkeep = params.upkeep as f32;
    let keep = 1.0 - params.starvation_decay as f32;
    let i_min = params.death_threshold as f32;

    let (energy, infra) = planes_mut(&mut cells.data, ch.energy, ch.infrastructure);
    energy
        .par_chunks_mut(CHUNK)
        .zip(infra.par_chunks_mut(CHUNK))
        .zip(cells.genome.par_chunks_mut(CHUNK))
        .enumerate()
        .for_each(|(c, ((es, is), gs))| {
            for k in 0..es.len() {
                let (mut e, mut i) = (es[k], is[k]);
                if let Some(a) = actions.get(c * CHUNK + k) {
                    let de = a.invest * e.min(kinv);
                    e -= de;
                    i += einv * de;
                    let di = a.liquidate * i.min(kliq);
                    i -= di;
                    e += eliq * di;
                }
                let cost = upkeep * i;
                if e >= cost {
                    e -= cost;
                } else {
                    e = 0.0;
                    i *= keep;
                }
                es[k] = e.max(0.0);
                is[k] = i.max(0.0);
                if gs[k] >= 0 && is[k] < i_min {
                    gs[k] = -1;
                }
            }
        });
}

/// Occupied cells publish their communication outputs; the rest decay.
pub fn write_communication(cells: &mut Planes, ch: &EcoChannels, actions: &ActionField) {
    let genome = &cells.genome;
    for (sub, &plane) in ch.comm.iter().enumerate() {
        cells.data[plane]
            .par_chunks_mut(CHUNK)
            .zip(genome.par_chunks(CHUNK))
            .enumerate()
            .for_each(|(c, (vals, gs))| {
                for k in 0..vals.len() {
                    let idx = c * CHUNK + k;
                    vals[k] = match actions.get(idx) {
                        Some(a) if gs[k] >= 0 => a.comm[sub],
                        _ => vals[k] * COMM_DECAY,
                    }
                    .clamp(0.0, 1.0);
                }
            });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::substrate::{ChannelSpec, Substrate};

    fn setup(w: usize, h: usize) -> (Substrate, EcoChannels) {
        let s = Substrate::new(w, h, ChannelSpec::ecosystem()).unwrap();
        let ch = EcoChannels::resolve(s.layout()).unwrap();
        (s, ch)
    }

    #[test]
    fn permutation_examples() {
        assert_eq!(rotation_permutation(0), [0, 1, 7, 2, 6, 3, 5, 4]);
        assert_eq!(rotation_permutation(2), [2, 3, 1, 4, 0, 5, 7, 6]);
        for r in 0..8 {
            let mut p = rotation_permutation(r).to_vec();
            p.sort();
            assert_eq!(p, (0..8).collect::<Vec<u8>>());
        }
    }

    #[test]
    fn permutation_matches_angular_sort() {
        // Independent route: sort offsets by angular distance from the
        // heading, breaking ties by the counterclockwise side.
        for r in 0..8u8 {
            let heading = r as f64 * 45.0;
            let mut idx: Vec<u8> = (0..8).collect();
            idx.sort_by(|&a, &b| {
                let key = |j: u8| {
                    let (dx, dy) = KERNEL_OFFSETS[j as usize];
                    let ang = (dy as f64).atan2(dx as f64).to_degrees();
                    let mut d = (ang - heading).rem_euclid(360.0);
                    let ccw = d <= 180.0;
                    if d > 180.0 {
                        d = 360.0 - d;
                    }
                    ((d * 1000.0).round() as i64, !ccw)
                };
                key(a).cmp(&key(b))
            });
            assert_eq!(rotation_permutation(r).to_vec(), idx, "r = {r}");
        }
    }

    #[test]
    fn offsets_are_at_multiples_of_45_degrees() {
        for (j, &(dx, dy)) in KERNEL_OFFSETS.iter().enumerate() {
            let ang = (dy as f64).atan2(dx as f64).to_degrees().rem_euclid(360.0);
            assert!((ang - 45.0 * j as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn energy_cycle_examples() {
        let (mut s, ch) = setup(8, 8);
        let p = PhysicsParams { cycle_amplitude: 0.1, cycle_period: 100.0, drain_fraction: 1.0, ..Default::default() };
        s.front_mut().data[ch.energy].iter_mut().for_each(|e| *e = 2.0);
        let before = s.front().clone();
        energy_cycle(s.front_mut(), &ch, 0, &p);
        assert_eq!(s.front(), &before);

        energy_cycle(s.front_mut(), &ch, 25, &p);
        assert!(s.front().data[ch.energy].iter().all(|&e| (e - 2.1).abs() < 1e-6));

        s.front_mut().data[ch.energy].iter_mut().for_each(|e| *e = 2.0);
        energy_cycle(s.front_mut(), &ch, 75, &p);
        assert!(s.front().data[ch.energy].iter().all(|&e| (e - 1.8).abs() < 1e-6));
    }

    #[test]
    fn energy_cycle_source_map_weights_injection() {
        let (mut s, ch) = setup(4, 4);
        let mut map = vec![1.0; 16];
        map[3] = 0.0;
        map[5] = 2.0;
        let p = PhysicsParams { energy_source_map: Some(map), ..Default::default() };
        energy_cycle(s.front_mut(), &ch, 25, &p);
        let e = &s.front().data[ch.energy];
        assert_eq!(e[3], 0.0);
        assert!((e[5] - 0.2).abs() < 1e-6 && (e[0] - 0.1).abs() < 1e-6);
    }

    fn one_cell_actions(w: usize, h: usize, idx: usize, a: CellActions) -> ActionField {
        let mut f = ActionField::empty(w, h);
        f.set(idx, a);
        f
    }

    #[test]
    fn invest_example() {
        let (mut s, ch) = setup(4, 4);
        let cells = s.front_mut();
        cells.data[ch.energy][0] = 2.0;
        cells.data[ch.infrastructure][0] = 1.0;
        cells.genome[0] = 0;
        let a = one_cell_actions(4, 4, 0, CellActions { invest: 0.5, ..Default::default() });
        let p = PhysicsParams { invest_rate: 1.0, invest_efficiency: 1.0, upkeep: 0.0, ..Default::default() };
        apply_invest_liquidate(cells, &ch, &a, &p);
        assert_eq!(cells.data[ch.energy][0], 1.5);
        assert_eq!(cells.data[ch.infrastructure][0], 1.5);
    }

    #[test]
    fn idle_cell_unchanged() {
        let (mut s, ch) = setup(4, 4);
        let cells = s.front_mut();
        cells.data[ch.energy][1] = 0.7;
        cells.data[ch.infrastructure][1] = 0.3;
        cells.genome[1] = 2;
        let before = cells.clone();
        let a = one_cell_actions(4, 4, 1, CellActions::default());
        let p = PhysicsParams { upkeep: 0.0, ..Default::default() };
        apply_invest_liquidate(cells, &ch, &a, &p);
        assert_eq!(*cells, before);
    }

    #[test]
    fn lossless_conversion_conserves_mass() {
        let mut rng = crate::rng::RngStream::from_seed(4);
        let (mut s, ch) = setup(16, 16);
        let cells = s.front_mut();
        let mut actions = ActionField::empty(16, 16);
        for i in 0..256 {
            cells.data[ch.energy][i] = rng.uniform(0.0, 3.0) as f32;
            cells.data[ch.infrastructure][i] = rng.uniform(0.0, 3.0) as f32;
            cells.genome[i] = 0;
            actions.set(i, CellActions {
                invest: rng.next_f64() as f32,
                liquidate: rng.next_f64() as f32,
                ..Default::default()
            });
        }
        let p = PhysicsParams {
            invest_efficiency: 1.0,
            liquidate_efficiency: 1.0,
            upkeep: 0.0,
            starvation_decay: 0.0,
            ..Default::default()
        };
        let before: Vec<f32> = (0..256).map(|i| cells.data[ch.energy][i] + cells.data[ch.infrastructure][i]).collect();
        apply_invest_liquidate(cells, &ch, &actions, &p);
        for i in 0..256 {
            let after = cells.data[ch.energy][i] + cells.data[ch.infrastructure][i];
            assert!((after - before[i]).abs() <= 1e-5 * before[i].max(1.0), "cell {i}");
        }
    }

    #[test]
    fn upkeep_starvation_and_death() {
        let (mut s, ch) = setup(4, 4);
        let cells = s.front_mut();
        // cell 0 pays upkeep; cell 1 starves; cell 2 dies
        cells.data[ch.energy][0] = 1.0;
        cells.data[ch.infrastructure][0] = 10.0;
        cells.data[ch.energy][1] = 0.01;
        cells.data[ch.infrastructure][1] = 10.0;
        cells.data[ch.energy][2] = 0.5;
        cells.data[ch.infrastructure][2] = 0.0005;
        cells.data[ch.comm[0]][2] = 0.4;
        cells.genome[..3].copy_from_slice(&[0, 0, 0]);
        let actions = ActionField::empty(4, 4);
        let p = PhysicsParams::default();
        apply_invest_liquidate(cells, &ch, &actions, &p);
        assert!((cells.data[ch.energy][0] - 0.8).abs() < 1e-6);
        assert_eq!(cells.data[ch.energy][1], 0.0);
        assert!((cells.data[ch.infrastructure][1] - 9.0).abs() < 1e-5);
        assert_eq!(cells.genome[..3], [0, 0, -1]);
        assert!(cells.data[ch.energy][2] > 0.49);
        assert_eq!(cells.data[ch.comm[0]][2], 0.4);
    }

    #[test]
    fn communication_rules() {
        let (mut s, ch) = setup(4, 4);
        let cells = s.front_mut();
        cells.genome[0] = 1;
        for &p in &ch.comm {
            cells.data[p][1] = 1.0;
        }
        let a = one_cell_actions(4, 4, 0, CellActions { comm: [0.5, 0.5, 0.5], ..Default::default() });
        write_communication(cells, &ch, &a);
        for &p in &ch.comm {
            assert_eq!(cells.data[p][0], 0.5);
            assert_eq!(cells.data[p][1], 0.9);
        }
        assert!(ch.comm.iter().all(|&p| cells.data[p].iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn explore_slot_ties_go_low() {
        let mut a = CellActions::default();
        assert_eq!(a.explore_slot(), 0);
        a.explore = [0.1, 0.9, 0.2, 0.9, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(a.explore_slot(), 1);
    }

    #[test]
    fn params_validation() {
        PhysicsParams::default().validate(16).unwrap();
        let bad = PhysicsParams { cycle_period: 1.0, ..Default::default() };
        assert!(bad.validate(16).unwrap_err().to_string().contains("physics.cycle_period"));
        let bad = PhysicsParams { energy_source_map: Some(vec![1.0; 3]), ..Default::default() };
        assert!(bad.validate(16).is_err());
        let bad = PhysicsParams { explore_fraction: 0.0, ..Default::default() };
        assert!(bad.validate(16).is_err());
    }
}
