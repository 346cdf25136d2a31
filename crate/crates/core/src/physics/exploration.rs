use rayon::prelude::*;

use super::{
    planes_mut, rotation_permutation, ActionField, EcoChannels, PhysicsParams, CHUNK,
    KERNEL_OFFSETS,
};
use crate::substrate::Planes;

/// Infrastructure sent by one cell toward one neighbor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shipment {
    pub amount: f32,
    /// Geometric offset index of the shipment direction.
    pub direction: u8,
    pub genome: i32,
}

/// A target cell switched to the genome of the winning explorer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdoptionEvent {
    pub source: usize,
    pub target: usize,
    pub winner_genome: i32,
    /// Genome the target held before adoption (`-1` if unoccupied).
    pub defender_genome: i32,
    pub direction: u8,
}

/// The shipment an occupied cell sends this step, if any: the explore slot
/// with the largest output is mapped through the cell's heading to a
/// geometric direction, and a fraction of its infrastructure leaves.
pub fn plan_shipment(
    cells: &Planes,
    ch: &EcoChannels,
    actions: &ActionField,
    params: &PhysicsParams,
    idx: usize,
) -> Option<Shipment> {
    let genome = cells.genome[idx];
    if genome < 0 {
        return None;
    }
    let a = actions.get(idx)?;
    let slot = a.explore_slot();
    let direction = rotation_permutation(cells.rotation[idx])[slot];
    let amount = params.explore_fraction as f32 * a.explore[slot] * cells.data[ch.infrastructure][idx];
    (amount > 0.0).then_some(Shipment {
        amount,
        direction,
        genome,
    })
}

/// Ship infrastructure, resolve conflicts per target and apply adoptions.
///
/// Every shipment is added to its target. Among shipments into one target
/// the largest wins (ties: lowest source index); if it exceeds what the
/// target holds after its own outgoing shipment, the target adopts the
/// winner's genome and takes the shipment direction as its heading.
/// Arrivals are summed in ascending order of amount, so the result does not
/// depend on the order in which shipments are visited.
///
/// Returns the adoption events sorted by target index.
pub fn resolve_exploration(
    cells: &mut Planes,
    ch: &EcoChannels,
    actions: &ActionField,
    params: &PhysicsParams,
) -> Vec<AdoptionEvent> {
    let n = cells.cells();
    let shipments: Vec<Option<Shipment>> = (0..n)
        .into_par_iter()
        .with_min_len(CHUNK)
        .map(|i| plan_shipment(cells, ch, actions, params, i))
        .collect();

    // Sources of each direction, looked up from the target side.
    let width = cells.width;
    let height = cells.height;
    let source_of = |t: usize, j: usize| {
        let (dx, dy) = KERNEL_OFFSETS[j];
        let (x, y) = (t % width, t / width);
        let (sx, sy) = crate::substrate::wrap(
            x as i64 - dx as i64,
            y as i64 - dy as i64,
            width,
            height,
        );
        sy * width + sx
    };

    let (_, infra) = planes_mut(&mut cells.data, ch.energy, ch.infrastructure);
    let chunk_events: Vec<Vec<AdoptionEvent>> = infra
        .par_chunks_mut(CHUNK)
        .zip(cells.genome.par_chunks_mut(CHUNK))
        .zip(cells.rotation.par_chunks_mut(CHUNK))
        .enumerate()
        .map(|(c, ((is, gs), rs))| {
            let mut events = Vec::new();
            let mut incoming: Vec<(f32, usize, u8, i32)> = Vec::with_capacity(8);
            for k in 0..is.len() {
                let t = c * CHUNK + k;
                incoming.clear();
                for j in 0..8 {
                    let s = source_of(t, j);
                    if let Some(sh) = shipments[s] {
                        if sh.direction as usize == j {
                            incoming.push((sh.amount, s, sh.direction, sh.genome));
                        }
                    }
                }
                let standing = match shipments[t] {
                    Some(own) => is[k] - own.amount,
                    None => is[k],
                };
                if incoming.is_empty() {
                    is[k] = standing;
                    continue;
                }
                let winner = *incoming
                    .iter()
                    .reduce(|best, cand| {
                        if cand.0 > best.0 || (cand.0 == best.0 && cand.1 < best.1) {
                            cand
                        } else {
                            best
                        }
                    })
                    .unwrap();
                incoming.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut total = standing;
                for &(q, ..) in &incoming {
                    total += q;
                }
                is[k] = total;
                if winner.0 > standing {
                    events.push(AdoptionEvent {
                        source: winner.1,
                        target: t,
                        winner_genome: winner.3,
                        defender_genome: gs[k],
                        direction: winner.2,
                    });
                    gs[k] = winner.3;
                    rs[k] = winner.2;
                }
            }
            events
        })
        .collect();
    chunk_events.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::CellActions;
    use crate::substrate::{ChannelSpec, Substrate};

    fn setup() -> (Substrate, EcoChannels, ActionField) {
        let s = Substrate::new(16, 16, ChannelSpec::ecosystem()).unwrap();
        let ch = EcoChannels::resolve(s.layout()).unwrap();
        (s, ch, ActionField::empty(16, 16))
    }

    /// Occupied cell whose network pushes `explore_out` through slot 0
    /// (straight ahead, i.e. along its heading).
    fn explorer(s: &mut Substrate, ch: &EcoChannels, a: &mut ActionField, x: usize, y: usize, heading: u8, infra: f32, genome: i32, explore_out: f32) {
        let cells = s.front_mut();
        let i = cells.index(x, y);
        cells.genome[i] = genome;
        cells.rotation[i] = heading;
        cells.data[ch.infrastructure][i] = infra;
        let mut act = CellActions::default();
        act.explore[0] = explore_out;
        a.set(i, act);
    }

    fn alpha_one() -> PhysicsParams {
        PhysicsParams { explore_fraction: 1.0, ..Default::default() }
    }

    #[test]
    fn single_source_into_empty_target_adopts() {
        let (mut s, ch, mut a) = setup();
        // heading 2 = +y; 0.5 = 1.0 · 0.5 · 1.0
        explorer(&mut s, &ch, &mut a, 5, 5, 2, 1.0, 3, 0.5);
        let ev = resolve_exploration(s.front_mut(), &ch, &a, &alpha_one());
        let f = s.front();
        let t = f.index(5, 6);
        assert_eq!(ev, vec![AdoptionEvent { source: f.index(5, 5), target: t, winner_genome: 3, defender_genome: -1, direction: 2 }]);
        assert_eq!(f.data[ch.infrastructure][t], 0.5);
        assert_eq!(f.genome[t], 3);
        assert_eq!(f.rotation[t], 2);
        assert_eq!(f.data[ch.infrastructure][f.index(5, 5)], 0.5);
    }

    #[test]
    fn weaker_explorer_only_feeds_the_target() {
        let (mut s, ch, mut a) = setup();
        explorer(&mut s, &ch, &mut a, 5, 5, 0, 1.0, 3, 0.3);
        let t = s.front().index(6, 5);
        s.front_mut().data[ch.infrastructure][t] = 1.0;
        s.front_mut().genome[t] = 7;
        s.front_mut().rotation[t] = 5;
        let ev = resolve_exploration(s.front_mut(), &ch, &a, &alpha_one());
        assert!(ev.is_empty());
        let f = s.front();
        assert!((f.data[ch.infrastructure][t] - 1.3).abs() < 1e-6);
        assert_eq!((f.genome[t], f.rotation[t]), (7, 5));
    }

    #[test]
    fn strongest_of_two_wins_and_all_arrivals_count() {
        let (mut s, ch, mut a) = setup();
        // Both aim at (6, 6): one from the left heading +x, one from below heading +y.
        explorer(&mut s, &ch, &mut a, 5, 6, 0, 1.0, 1, 0.4);
        explorer(&mut s, &ch, &mut a, 6, 5, 2, 1.0, 2, 0.9);
        let t = s.front().index(6, 6);
        s.front_mut().data[ch.infrastructure][t] = 0.5;
        let ev = resolve_exploration(s.front_mut(), &ch, &a, &alpha_one());
        let f = s.front();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].winner_genome, 2);
        assert_eq!(ev[0].source, f.index(6, 5));
        assert!((f.data[ch.infrastructure][t] - 1.8).abs() < 1e-6);
        assert_eq!((f.genome[t], f.rotation[t]), (2, 2));
    }

    #[test]
    fn equal_shipments_go_to_lowest_source_index() {
        let (mut s, ch, mut a) = setup();
        explorer(&mut s, &ch, &mut a, 5, 6, 0, 1.0, 1, 0.5);
        explorer(&mut s, &ch, &mut a, 6, 5, 2, 1.0, 2, 0.5);
        let ev = resolve_exploration(s.front_mut(), &ch, &a, &alpha_one());
        assert_eq!(ev[0].source, s.front().index(6, 5));
    }

    #[test]
    fn heading_rotates_the_explore_slots() {
        let (mut s, ch, mut a) = setup();
        // slot 1 under heading 0 is offset 1 = (+1, +1)
        explorer(&mut s, &ch, &mut a, 5, 5, 0, 1.0, 4, 0.0);
        let i = s.front().index(5, 5);
        a.cells[i].as_mut().unwrap().explore[1] = 0.8;
        resolve_exploration(s.front_mut(), &ch, &a, &alpha_one());
        assert_eq!(s.front().genome[s.front().index(6, 6)], 4);
    }

    #[test]
    fn wraps_around_the_torus() {
        let (mut s, ch, mut a) = setup();
        explorer(&mut s, &ch, &mut a, 15, 0, 7, 1.0, 4, 0.5);
        resolve_exploration(s.front_mut(), &ch, &a, &alpha_one());
        // heading 7 = (+1, -1) → (0, 15)
        assert_eq!(s.front().genome[s.front().index(0, 15)], 4);
    }

    #[test]
    fn argmax_invariant_under_monotone_maps() {
        let mut rng = crate::rng::RngStream::from_seed(77);
        for _ in 0..200 {
            let mut act = CellActions::default();
            for v in act.explore.iter_mut() {
                *v = rng.next_f64() as f32;
            }
            let k = act.explore_slot();
            let mut mapped = act;
            for v in mapped.explore.iter_mut() {
                *v = (3.0 * *v + 1.0).powi(3);
            }
            assert_eq!(mapped.explore_slot(), k);
        }
    }
}
