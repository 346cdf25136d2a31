use super::AdoptionEvent;
use crate::error::{Error, Result};
use crate::neuroevo::{crossover, mutate, EvolutionRates, GenomePool};
use crate::rng::{Purpose, RngStream};
use crate::substrate::Planes;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RadiationSummary {
    pub merged: usize,
    pub mutated: usize,
    /// Offspring dropped because every pool slot was live.
    pub rejected: usize,
}

/// Turn adoption events into offspring.
///
/// Events are committed in target order. Each draws from its own stream
/// keyed by `(seed, step, target)`: a merge with a live, different defender
/// first, otherwise a mutation of the winner. Offspring are born at
/// `step + 1`; a rejected admission leaves the target on the winner's slot.
pub fn apply_radiation(
    events: &[AdoptionEvent],
    cells: &mut Planes,
    pool: &mut GenomePool,
    rates: &EvolutionRates,
    seed: u64,
    step: u64,
) -> RadiationSummary {
    let mut summary = RadiationSummary::default();
    let birth = step + 1;
    let mut ordered: Vec<&AdoptionEvent> = events.iter().collect();
    ordered.sort_by_key(|e| e.target);
    for ev in ordered {
        let Some(winner) = pool.live_slot(ev.winner_genome) else {
            continue;
        };
        let mut rng = RngStream::derive(seed, step, Purpose::Radiation, ev.target as u64);
        let defender = pool
            .live_slot(ev.defender_genome)
            .filter(|&d| d != winner);
        let winner_genome = pool.genome(winner).unwrap().clone();
        let winner_lineage = pool.entry(winner).unwrap().lineage;

        let offspring = match defender {
            Some(d) if rng.chance(rates.p_merge) => {
                let other = pool.genome(d).unwrap().clone();
                let child = crossover(&winner_genome, &other, &mut rng);
                let parents = vec![winner_lineage, pool.entry(d).unwrap().lineage];
                Some((child, parents, true))
            }
            _ if rng.chance(rates.p_radiation) => {
                let child = mutate(&winner_genome, rates, &mut rng, pool.innovations_mut());
                Some((child, vec![winner_lineage], false))
            }
            _ => None,
        };
        if let Some((child, parents, merged)) = offspring {
            match pool.admit(child, parents, birth) {
                Ok(slot) => {
                    cells.genome[ev.target] = slot as i32;
                    if merged {
                        summary.merged += 1;
                    } else {
                        summary.mutated += 1;
                    }
                }
                Err(_) => summary.rejected += 1,
            }
        }
    }
    summary
}

/// Count cells per slot; retire live slots nobody references (death at
/// `step`) and update peak populations. Returns the number of extinctions.
pub fn census_deaths(cells: &Planes, pool: &mut GenomePool, step: u64) -> Result<usize> {
    let mut counts = vec![0u64; pool.capacity()];
    for &g in &cells.genome {
        if g < 0 {
            continue;
        }
        let slot = g as usize;
        if !pool.is_live(slot) {
            return Err(Error::CorruptState(format!(
                "cell references genome slot {g}, which is not live"
            )));
        }
        counts[slot] += 1;
    }
    let mut extinctions = 0;
    for (slot, &n) in counts.iter().enumerate() {
        if !pool.is_live(slot) {
            continue;
        }
        if n == 0 {
            pool.retire(slot, step);
            extinctions += 1;
        } else {
            pool.note_population(slot, n);
        }
    }
    Ok(extinctions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypernet::HyperParams;
    use crate::neuroevo::CppnGenome;
    use crate::substrate::{ChannelSpec, Substrate};

    fn pool_with(n: usize, capacity: usize) -> GenomePool {
        let mut pool = GenomePool::new(capacity, HyperParams::default());
        for i in 0..n {
            let g = CppnGenome::init(&mut RngStream::from_seed(i as u64), pool.innovations_mut());
            pool.admit(g, vec![], 0).unwrap();
        }
        pool
    }

    fn event(target: usize, winner: i32, defender: i32) -> AdoptionEvent {
        AdoptionEvent { source: 0, target, winner_genome: winner, defender_genome: defender, direction: 0 }
    }

    fn grid() -> Substrate {
        Substrate::new(8, 8, ChannelSpec::ecosystem()).unwrap()
    }

    #[test]
    fn zero_probabilities_leave_pool_alone() {
        let mut pool = pool_with(2, 8);
        let mut s = grid();
        s.front_mut().genome[9] = 0;
        let ev = [event(9, 0, 1)];
        let sum = apply_radiation(&ev, s.front_mut(), &mut pool, &EvolutionRates::none(), 1, 0);
        assert_eq!(sum, RadiationSummary::default());
        assert_eq!(pool.phylogeny().len(), 2);
        assert_eq!(s.front().genome[9], 0);
    }

    #[test]
    fn certain_radiation_mutates_the_winner() {
        let mut pool = pool_with(1, 8);
        let mut s = grid();
        s.front_mut().genome[9] = 0;
        let rates = EvolutionRates { p_radiation: 1.0, p_merge: 0.0, ..Default::default() };
        let sum = apply_radiation(&[event(9, 0, -1)], s.front_mut(), &mut pool, &rates, 1, 4);
        assert_eq!(sum.mutated, 1);
        assert_eq!(pool.live_count(), 2);
        let slot = s.front().genome[9] as usize;
        assert_eq!(slot, 1);
        let rec = pool.record_of_slot(slot).unwrap();
        assert_eq!(rec.parent_lineage_ids, vec![pool.entry(0).unwrap().lineage]);
        assert_eq!(rec.birth_step, 5);
    }

    #[test]
    fn certain_merge_over_live_defender() {
        let mut pool = pool_with(2, 8);
        let mut s = grid();
        s.front_mut().genome[9] = 0;
        let rates = EvolutionRates { p_merge: 1.0, p_radiation: 0.0, ..Default::default() };
        let sum = apply_radiation(&[event(9, 0, 1)], s.front_mut(), &mut pool, &rates, 1, 0);
        assert_eq!(sum.merged, 1);
        let rec = pool.record_of_slot(s.front().genome[9] as usize).unwrap();
        assert_eq!(rec.parent_lineage_ids, vec![0, 1]);
    }

    #[test]
    fn no_merge_with_self_or_dead_defender() {
        let mut pool = pool_with(2, 8);
        pool.retire(1, 0);
        let mut s = grid();
        let rates = EvolutionRates { p_merge: 1.0, p_radiation: 0.0, ..Default::default() };
        let ev = [event(9, 0, 0), event(10, 0, 1), event(11, 0, -1)];
        let sum = apply_radiation(&ev, s.front_mut(), &mut pool, &rates, 1, 0);
        assert_eq!(sum, RadiationSummary::default());
    }

    #[test]
    fn full_pool_keeps_the_winner() {
        let mut pool = pool_with(2, 2);
        let mut s = grid();
        s.front_mut().genome[9] = 0;
        let rates = EvolutionRates { p_radiation: 1.0, ..EvolutionRates::none() };
        let sum = apply_radiation(&[event(9, 0, -1)], s.front_mut(), &mut pool, &rates, 1, 0);
        assert_eq!(sum.rejected, 1);
        assert_eq!(s.front().genome[9], 0);
        assert_eq!(pool.live_count(), 2);
    }

    #[test]
    fn census_retires_empty_slots_and_tracks_peaks() {
        let mut pool = pool_with(2, 8);
        let mut s = grid();
        s.front_mut().genome[..3].copy_from_slice(&[1, 1, 1]);
        pool.note_population(1, 2);
        let ext = census_deaths(s.front(), &mut pool, 6).unwrap();
        assert_eq!(ext, 1);
        assert!(!pool.is_live(0));
        assert_eq!(pool.record_of_slot(0).unwrap().death_step, Some(6));
        assert_eq!(pool.record_of_slot(1).unwrap().peak_population, 3);
        // dead stays dead
        s.front_mut().genome[..3].copy_from_slice(&[-1, -1, 1]);
        assert_eq!(census_deaths(s.front(), &mut pool, 7).unwrap(), 0);
        assert!(!pool.is_live(0));
        assert_eq!(pool.record_of_slot(0).unwrap().death_step, Some(6));
        // a cell on a dead slot is corrupt state
        s.front_mut().genome[5] = 0;
        assert!(census_deaths(s.front(), &mut pool, 8).is_err());
    }
}
