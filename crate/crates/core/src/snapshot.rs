//! Binary snapshot container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CRLS" | version u32 | width u32 | height u32
//! channel count u32 | per channel: name len u16, UTF-8 name, arity u16
//! f32 planes in table order | i32 genome plane | u8 rotation plane
//! JSON length u32 | UTF-8 JSON (parameters, pool, phylogeny)
//! ```

use std::path::Path;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::engine::SimState;
use crate::error::{Error, Result};
use crate::hypernet::{DenseParams, HyperParams};
use crate::neuroevo::{CppnGenome, EvolutionRates, GenomePool, InnovationCounter, PhylogenyRecord, PoolEntry};
use crate::physics::PhysicsParams;
use crate::substrate::{ChannelSpec, Planes, Substrate};

pub const MAGIC: &[u8; 4] = b"CRLS";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SlotRecord {
    slot: usize,
    live: bool,
    #[serde(flatten)]
    genome: CppnGenome,
    lineage: u64,
    parents: Vec<u64>,
    birth: u64,
    /// Dense network parameters as base64 little-endian f32.
    params: String,
}

#[derive(Serialize, Deserialize)]
struct StateBlock {
    step: u64,
    seed: u64,
    channels: Vec<ChannelSpec>,
    physics: PhysicsParams,
    evolution: EvolutionRates,
    hypernet: HyperParams,
    capacity: usize,
    innovation_next: u64,
    brush_count: u64,
    slots: Vec<SlotRecord>,
    phylogeny: Vec<PhylogenyRecord>,
}

fn put_u16(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u16::try_from(v).map_err(|_| Error::Snapshot(format!("{what} does not fit in u16")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Snapshot(format!("{what} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(state: &SimState) -> Result<Vec<u8>> {
    let s = &state.substrate;
    let front = s.front();
    let specs = s.layout().specs();
    let mut out = Vec::with_capacity(s.cells() * (4 * front.data.len() + 5) + 4096);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, s.width(), "width")?;
    put_u32(&mut out, s.height(), "height")?;
    put_u32(&mut out, specs.len(), "channel count")?;
    for spec in specs {
        put_u16(&mut out, spec.name.len(), "channel name length")?;
        out.extend_from_slice(spec.name.as_bytes());
        put_u16(&mut out, spec.arity, "channel arity")?;
    }
    for plane in &front.data {
        out.extend(plane.iter().flat_map(|v| v.to_le_bytes()));
    }
    out.extend(front.genome.iter().flat_map(|v| v.to_le_bytes()));
    out.extend_from_slice(&front.rotation);

    let pool = &state.pool;
    let slots = pool
        .slots()
        .iter()
        .enumerate()
        .filter_map(|(slot, e)| {
            let e = e.as_ref()?;
            let rec = pool.record(e.lineage)?;
            Some(SlotRecord {
                slot,
                live: e.live,
                genome: (*e.genome).clone(),
                lineage: e.lineage,
                parents: rec.parent_lineage_ids.clone(),
                birth: rec.birth_step,
                params: BASE64.encode(e.params.to_bytes()),
            })
        })
        .collect();
    let block = StateBlock {
        step: s.step_counter(),
        seed: state.seed,
        channels: specs.to_vec(),
        physics: state.physics.clone(),
        evolution: state.evolution.clone(),
        hypernet: pool.hyper().clone(),
        capacity: pool.capacity(),
        innovation_next: pool.innovations().peek(),
        brush_count: state.brush_count(),
        slots,
        phylogeny: pool.phylogeny().to_vec(),
    };
    let json = serde_json::to_vec(&block)?;
    put_u32(&mut out, json.len(), "state block")?;
    out.extend_from_slice(&json);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Snapshot(format!("truncated while reading {what}")))?;
        let bytes = &self.buf[self.pos..end];
        self.pos = end;
        Ok(bytes)
    }

    fn u16(&mut self, what: &str) -> Result<usize> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]) as usize)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<SimState> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Snapshot("bad magic, not a snapshot file".into()));
    }
    let version = r.u32("version")? as u32;
    if version != VERSION {
        return Err(Error::Snapshot(format!("unsupported version {version}")));
    }
    let width = r.u32("width")?;
    let height = r.u32("height")?;
    let count = r.u32("channel count")?;
    let mut table = Vec::new();
    for _ in 0..count {
        let len = r.u16("channel name")?;
        let name = std::str::from_utf8(r.take(len, "channel name")?)
            .map_err(|_| Error::Snapshot("channel name is not UTF-8".into()))?
            .to_string();
        let arity = r.u16("channel arity")?;
        table.push((name, arity));
    }
    let planes: usize = table.iter().map(|(_, a)| a).sum();
    let cells = width
        .checked_mul(height)
        .ok_or_else(|| Error::Snapshot("grid size overflows".into()))?;
    let plane_bytes = cells
        .checked_mul(4)
        .and_then(|b| b.checked_mul(planes))
        .ok_or_else(|| Error::Snapshot("plane size overflows".into()))?;
    let mut data = Vec::with_capacity(planes);
    for chunk in r.take(plane_bytes, "channel planes")?.chunks_exact(cells * 4) {
        data.push(
            chunk
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect::<Vec<f32>>(),
        );
    }
    data.resize(planes, Vec::new());
    let genome: Vec<i32> = r
        .take(cells * 4, "genome plane")?
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let rotation = r.take(cells, "rotation plane")?.to_vec();
    let json_len = r.u32("state block length")?;
    let block: StateBlock = serde_json::from_slice(r.take(json_len, "state block")?)
        .map_err(|e| Error::Snapshot(format!("state block: {e}")))?;
    if r.pos != bytes.len() {
        return Err(Error::Snapshot(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let matches_table = block.channels.len() == table.len()
        && block.channels.iter().zip(&table).all(|(c, (n, a))| &c.name == n && c.arity == *a);
    if !matches_table {
        return Err(Error::Snapshot("channel table disagrees with state block".into()));
    }
    if rotation.iter().any(|&r| r > 7) {
        return Err(Error::Snapshot("rotation out of range".into()));
    }
    let mut substrate = Substrate::new(width, height, block.channels)?;
    substrate.replace_front(Planes {
        width,
        height,
        data,
        genome,
        rotation,
    })?;
    substrate.set_step_counter(block.step);

    let hidden = block.hypernet.hidden_size;
    let mut slots = vec![None; block.capacity];
    for rec in block.slots {
        let dst = slots
            .get_mut(rec.slot)
            .ok_or_else(|| Error::Snapshot(format!("slot {} beyond capacity", rec.slot)))?;
        rec.genome
            .validate()
            .map_err(|e| Error::Snapshot(format!("genome in slot {}: {e}", rec.slot)))?;
        let raw = BASE64
            .decode(rec.params.as_bytes())
            .map_err(|e| Error::Snapshot(format!("params in slot {}: {e}", rec.slot)))?;
        *dst = Some(PoolEntry {
            genome: Arc::new(rec.genome),
            params: Arc::new(DenseParams::from_bytes(hidden, &raw)?),
            live: rec.live,
            lineage: rec.lineage,
        });
    }
    let pool = GenomePool::from_parts(
        block.capacity,
        block.hypernet,
        InnovationCounter::starting_at(block.innovation_next),
        slots,
        block.phylogeny,
    )?;
    for &g in &substrate.front().genome {
        if g >= 0 && !pool.is_live(g as usize) {
            return Err(Error::Snapshot(format!("cell references non-live slot {g}")));
        }
    }
    let mut state = SimState::from_parts(substrate, pool, block.physics, block.evolution, block.seed)?;
    state.set_brush_count(block.brush_count);
    Ok(state)
}

pub fn save_snapshot(state: &SimState, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(state)?)?;
    Ok(())
}

pub fn load_snapshot(path: impl AsRef<Path>) -> Result<SimState> {
    decode(&std::fs::read(path)?)
}
