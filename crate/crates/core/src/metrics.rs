//! Observables: multi-scale structural complexity, genetic diversity and
//! population census.
//!
//! Every reduction here sums its terms in sorted order, so results depend
//! only on the multiset of values and not on traversal order. This makes
//! MSC exactly invariant under grid rotation and transposition, and the
//! diversity report independent of pool enumeration order.

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::SimState;
use crate::error::{Error, Result};
use crate::neuroevo::{compatibility_distance, GenomePool};
use crate::substrate::Substrate;

/// Order-independent sum: sort, then add pairwise. Equal terms in
/// power-of-two counts sum exactly.
fn sorted_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    pairwise(&v)
}

fn pairwise(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise(&v[..n / 2]) + pairwise(&v[n / 2..]),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MscReport {
    pub channel: String,
    pub scales: usize,
    /// `C_k` for k = 0..scales.
    pub per_scale: Vec<f64>,
    pub total: f64,
    /// `(x0, y0, side)` of the analyzed square when the plane was cropped.
    pub crop: Option<(usize, usize, usize)>,
}

/// 2×2 block means of a square field.
fn coarse_grain(field: &[f64], side: usize) -> Vec<f64> {
    let half = side / 2;
    let mut out = vec![0.0; half * half];
    for y in 0..half {
        for x in 0..half {
            let mut q = [
                field[2 * y * side + 2 * x],
                field[2 * y * side + 2 * x + 1],
                field[(2 * y + 1) * side + 2 * x],
                field[(2 * y + 1) * side + 2 * x + 1],
            ];
            q.sort_by(f64::total_cmp);
            out[y * half + x] = ((q[0] + q[1]) + (q[2] + q[3])) / 4.0;
        }
    }
    out
}

/// Mean over the original grid of upsampled `fine`·`coarse`, where `coarse`
/// is `fine` coarse-grained `2^gap` times. Every fine cell stands for the
/// same number of original cells, so the mean can be taken at fine level.
fn overlap(fine: &[f64], fine_side: usize, coarse: &[f64], gap: u32) -> f64 {
    let coarse_side = fine_side >> gap;
    let terms = (0..fine.len())
        .map(|i| {
            let (x, y) = (i % fine_side, i / fine_side);
            fine[i] * coarse[(y >> gap) * coarse_side + (x >> gap)]
        })
        .collect();
    sorted_sum(terms) / fine.len() as f64
}

/// Multi-scale structural complexity of a square field whose side is a
/// power of two.
///
/// `F_0` is the field and `F_{k+1}` the 2×2 block mean of `F_k`;
/// `C_k = |O(k, k+1) − ½(O(k, k) + O(k+1, k+1))|` with `O` the mean product
/// of two levels at full resolution.
pub fn msc(field: &[f64], side: usize, n_scales: usize) -> Result<MscReport> {
    if side == 0 || !side.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(side));
    }
    if field.len() != side * side {
        return Err(Error::CorruptState(format!(
            "field has {} values, expected {}",
            field.len(),
            side * side
        )));
    }
    let depth = side.trailing_zeros() as usize;
    if n_scales > depth {
        return Err(Error::config(
            "msc.n_scales",
            format!("{n_scales} exceeds log2(side) = {depth}"),
        ));
    }
    let mut levels = vec![field.to_vec()];
    for k in 0..n_scales {
        let next = coarse_grain(&levels[k], side >> k);
        levels.push(next);
    }
    let self_overlap: Vec<f64> = levels
        .iter()
        .enumerate()
        .map(|(k, f)| overlap(f, side >> k, f, 0))
        .collect();
    let per_scale: Vec<f64> = (0..n_scales)
        .map(|k| {
            let cross = overlap(&levels[k], side >> k, &levels[k + 1], 1);
            (cross - 0.5 * (self_overlap[k] + self_overlap[k + 1])).abs()
        })
        .collect();
    let total = per_scale.iter().sum();
    Ok(MscReport {
        channel: String::new(),
        scales: n_scales,
        per_scale,
        total,
        crop: None,
    })
}

/// MSC of a substrate channel over all available scales. Non-square or
/// non-power-of-two grids are center-cropped to the largest power-of-two
/// square.
pub fn msc_of_channel(substrate: &Substrate, channel: &str, sub: usize) -> Result<MscReport> {
    let plane = substrate
        .plane(channel, sub)
        .ok_or_else(|| Error::MissingChannel(channel.to_string()))?;
    let (w, h) = (substrate.width(), substrate.height());
    let side = 1usize << (usize::BITS - 1 - w.min(h).leading_zeros());
    let (x0, y0) = ((w - side) / 2, (h - side) / 2);
    let field: Vec<f64> = (0..side)
        .flat_map(|y| (0..side).map(move |x| (x, y)))
        .map(|(x, y)| plane[(y0 + y) * w + x0 + x] as f64)
        .collect();
    let mut report = msc(&field, side, side.trailing_zeros() as usize)?;
    report.channel = channel.to_string();
    if side != w || side != h {
        report.crop = Some((x0, y0, side));
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiversityReport {
    pub live_genomes: usize,
    pub mean_distance: f64,
    /// Bin edges; `counts.len() + 1` entries, empty when there are no pairs.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

pub const DIVERSITY_BINS: usize = 10;

/// Mean pairwise compatibility distance over live genomes.
pub fn diversity(pool: &GenomePool, c1: f64, c2: f64, c3: f64) -> DiversityReport {
    let live: Vec<_> = pool.live_slots().map(|s| pool.genome(s).unwrap().clone()).collect();
    let n = live.len();
    if n < 2 {
        return DiversityReport {
            live_genomes: n,
            mean_distance: 0.0,
            edges: Vec::new(),
            counts: Vec::new(),
        };
    }
    let mut distances: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let live = &live;
            (i + 1..n).map(move |j| compatibility_distance(&live[i], &live[j], c1, c2, c3))
        })
        .collect();
    distances.sort_by(f64::total_cmp);
    let pairs = distances.len();
    let max = *distances.last().unwrap();
    let mean = pairwise(&distances) / pairs as f64;
    let width = if max > 0.0 { max / DIVERSITY_BINS as f64 } else { 1.0 };
    let edges = (0..=DIVERSITY_BINS).map(|b| b as f64 * width).collect();
    let mut counts = vec![0u64; DIVERSITY_BINS];
    for d in distances {
        let b = ((d / width) as usize).min(DIVERSITY_BINS - 1);
        counts[b] += 1;
    }
    DiversityReport {
        live_genomes: n,
        mean_distance: mean,
        edges,
        counts,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CensusRow {
    pub step: u64,
    /// Cells per pool slot.
    pub counts: Vec<u64>,
    pub unoccupied: u64,
    pub total_energy: f64,
    pub total_infrastructure: f64,
    /// Lineages whose death was recorded at `step`.
    pub extinctions: usize,
}

fn plane_total(substrate: &Substrate, name: &str) -> f64 {
    substrate
        .plane(name, 0)
        .map(|p| p.iter().map(|&v| v as f64).sum())
        .unwrap_or(0.0)
}

pub fn census(substrate: &Substrate, pool: &GenomePool, step: u64) -> CensusRow {
    let mut counts = vec![0u64; pool.capacity()];
    let mut unoccupied = 0;
    for &g in &substrate.front().genome {
        match usize::try_from(g) {
            Ok(s) if s < counts.len() => counts[s] += 1,
            _ => unoccupied += 1,
        }
    }
    CensusRow {
        step,
        counts,
        unoccupied,
        total_energy: plane_total(substrate, crate::substrate::ENERGY),
        total_infrastructure: plane_total(substrate, crate::substrate::INFRASTRUCTURE),
        extinctions: extinctions_between(pool, step.saturating_sub(1), step),
    }
}

/// Lineages that died in `(after, upto]`.
pub fn extinctions_between(pool: &GenomePool, after: u64, upto: u64) -> usize {
    pool.phylogeny()
        .iter()
        .filter(|r| r.death_step.is_some_and(|d| d > after && d <= upto))
        .count()
}

/// One row of the metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsSample {
    pub step: u64,
    pub total_energy: f64,
    pub total_infrastructure: f64,
    pub live_genomes: usize,
    pub mean_distance: f64,
    pub msc_total: f64,
    pub msc_per_scale: Vec<f64>,
    /// Extinctions since the previous sample.
    pub extinctions: usize,
}

pub const CSV_HEADER: &str = "step,total_energy,total_infrastructure,live_genomes,mean_distance,msc_total,msc_per_scale,extinctions";

impl MetricsSample {
    /// Sample `state`, counting extinctions after step `since`.
    pub fn take(state: &SimState, msc_channel: &str, since: u64) -> Result<Self> {
        let step = state.step_counter();
        let r = &state.evolution;
        let div = diversity(&state.pool, r.c1, r.c2, r.c3);
        let m = msc_of_channel(&state.substrate, msc_channel, 0)?;
        Ok(Self {
            step,
            total_energy: plane_total(&state.substrate, crate::substrate::ENERGY),
            total_infrastructure: plane_total(&state.substrate, crate::substrate::INFRASTRUCTURE),
            live_genomes: div.live_genomes,
            mean_distance: div.mean_distance,
            msc_total: m.total,
            msc_per_scale: m.per_scale,
            extinctions: extinctions_between(&state.pool, since, step),
        })
    }

    pub fn csv_row(&self) -> String {
        let scales: Vec<String> = self.msc_per_scale.iter().map(|c| c.to_string()).collect();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.total_energy,
            self.total_infrastructure,
            self.live_genomes,
            self.mean_distance,
            self.msc_total,
            scales.join(";"),
            self.extinctions
        )
    }
}
