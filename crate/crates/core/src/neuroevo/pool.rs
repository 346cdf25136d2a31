use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::genome::{CppnGenome, InnovationCounter};
use crate::error::{Error, Result};
use crate::hypernet::{generate_network, DenseParams, HyperParams, NeuronLayout};

pub const POOL_CAPACITY: usize = 512;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhylogenyRecord {
    pub genome_slot: usize,
    pub lineage_id: u64,
    pub parent_lineage_ids: Vec<u64>,
    pub birth_step: u64,
    pub death_step: Option<u64>,
    pub peak_population: u64,
}

#[derive(Clone, Debug)]
pub struct PoolEntry {
    pub genome: Arc<CppnGenome>,
    pub params: Arc<DenseParams>,
    pub live: bool,
    pub lineage: u64,
}

/// Bounded registry of genomes referenced by substrate cells.
///
/// Lineage ids are dense: `phylogeny()[id]` is the record of lineage `id`.
#[derive(Clone, Debug)]
pub struct GenomePool {
    capacity: usize,
    slots: Vec<Option<PoolEntry>>,
    innovations: InnovationCounter,
    phylogeny: Vec<PhylogenyRecord>,
    layout: NeuronLayout,
    hyper: HyperParams,
}

impl GenomePool {
    pub fn new(capacity: usize, hyper: HyperParams) -> Self {
        Self {
            capacity,
            slots: vec![None; capacity],
            innovations: InnovationCounter::new(),
            phylogeny: Vec::new(),
            layout: NeuronLayout::new(hyper.hidden_size),
            hyper,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    pub fn layout(&self) -> &NeuronLayout {
        &self.layout
    }

    pub fn innovations(&self) -> &InnovationCounter {
        &self.innovations
    }

    pub fn innovations_mut(&mut self) -> &mut InnovationCounter {
        &mut self.innovations
    }

    pub fn entry(&self, slot: usize) -> Option<&PoolEntry> {
        self.slots.get(slot).and_then(Option::as_ref)
    }

    pub fn is_live(&self, slot: usize) -> bool {
        self.entry(slot).is_some_and(|e| e.live)
    }

    /// Slot of a cell's genome index if it names a live entry.
    pub fn live_slot(&self, genome_index: i32) -> Option<usize> {
        usize::try_from(genome_index).ok().filter(|&s| self.is_live(s))
    }

    pub fn genome(&self, slot: usize) -> Option<&Arc<CppnGenome>> {
        self.entry(slot).map(|e| &e.genome)
    }

    pub fn params(&self, slot: usize) -> Option<&Arc<DenseParams>> {
        self.entry(slot).map(|e| &e.params)
    }

    pub fn live_slots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.capacity).filter(|&s| self.is_live(s))
    }

    pub fn live_count(&self) -> usize {
        self.live_slots().count()
    }

    pub fn phylogeny(&self) -> &[PhylogenyRecord] {
        &self.phylogeny
    }

    pub fn record(&self, lineage: u64) -> Option<&PhylogenyRecord> {
        self.phylogeny.get(lineage as usize)
    }

    pub fn record_of_slot(&self, slot: usize) -> Option<&PhylogenyRecord> {
        self.entry(slot).and_then(|e| self.record(e.lineage))
    }

    fn choose_slot(&self) -> Option<usize> {
        if let Some(free) = self.slots.iter().position(Option::is_none) {
            return Some(free);
        }
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, e)| {
                let e = e.as_ref()?;
                if e.live {
                    return None;
                }
                let died = self.phylogeny[e.lineage as usize].death_step.unwrap_or(0);
                Some((died, i))
            })
            .min()
            .map(|(_, i)| i)
    }

    /// Place `genome` in a free slot, or recycle the longest-dead one.
    /// Generates its dense parameters and opens a phylogeny record.
    pub fn admit(&mut self, genome: CppnGenome, parents: Vec<u64>, birth_step: u64) -> Result<usize> {
        let slot = self.choose_slot().ok_or(Error::PoolFull(self.capacity))?;
        let params = generate_network(&genome, &self.layout, &self.hyper);
        let lineage = self.phylogeny.len() as u64;
        self.phylogeny.push(PhylogenyRecord {
            genome_slot: slot,
            lineage_id: lineage,
            parent_lineage_ids: parents,
            birth_step,
            death_step: None,
            peak_population: 0,
        });
        self.slots[slot] = Some(PoolEntry {
            genome: Arc::new(genome),
            params: Arc::new(params),
            live: true,
            lineage,
        });
        Ok(slot)
    }

    /// Mark `slot` dead at `step`. No-op for free or already-dead slots.
    pub fn retire(&mut self, slot: usize, step: u64) {
        if let Some(e) = self.slots.get_mut(slot).and_then(Option::as_mut) {
            if e.live {
                e.live = false;
                self.phylogeny[e.lineage as usize].death_step = Some(step);
            }
        }
    }

    pub fn note_population(&mut self, slot: usize, cells: u64) {
        if let Some(lineage) = self.entry(slot).map(|e| e.lineage) {
            let rec = &mut self.phylogeny[lineage as usize];
            rec.peak_population = rec.peak_population.max(cells);
        }
    }

    /// Rebuild a pool from persisted parts. Parameters are taken as stored.
    pub(crate) fn from_parts(
        capacity: usize,
        hyper: HyperParams,
        innovations: InnovationCounter,
        slots: Vec<Option<PoolEntry>>,
        phylogeny: Vec<PhylogenyRecord>,
    ) -> Result<Self> {
        if slots.len() != capacity {
            return Err(Error::Snapshot("slot table length differs from capacity".into()));
        }
        for (i, rec) in phylogeny.iter().enumerate() {
            if rec.lineage_id != i as u64 {
                return Err(Error::Snapshot("phylogeny lineage ids are not dense".into()));
            }
        }
        for e in slots.iter().flatten() {
            if e.lineage as usize >= phylogeny.len() {
                return Err(Error::Snapshot("slot references unknown lineage".into()));
            }
        }
        Ok(Self {
            capacity,
            slots,
            innovations,
            phylogeny,
            layout: NeuronLayout::new(hyper.hidden_size),
            hyper,
        })
    }

    pub(crate) fn slots(&self) -> &[Option<PoolEntry>] {
        &self.slots
    }
}
