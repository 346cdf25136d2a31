//! Grid state: named float channels, genome-index and rotation planes,
//! double buffering and RGB rendering.

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ENERGY: &str = "energy";
pub const INFRASTRUCTURE: &str = "infrastructure";
pub const COMMUNICATION: &str = "communication";

/// Fractional part of the golden ratio, used to spread genome hues.
const GOLDEN_FRACTION: f64 = 0.618_033_988_749_894_9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: String,
    pub arity: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<(f32, f32)>,
}

impl ChannelSpec {
    pub fn new(name: impl Into<String>, arity: usize) -> Self {
        Self {
            name: name.into(),
            arity,
            bounds: None,
        }
    }

    pub fn bounded(name: impl Into<String>, arity: usize, lo: f32, hi: f32) -> Self {
        Self {
            name: name.into(),
            arity,
            bounds: Some((lo, hi)),
        }
    }

    /// The channel set every ecosystem experiment uses.
    pub fn ecosystem() -> Vec<ChannelSpec> {
        vec![
            ChannelSpec::new(ENERGY, 1),
            ChannelSpec::new(INFRASTRUCTURE, 1),
            ChannelSpec::bounded(COMMUNICATION, 3, 0.0, 1.0),
        ]
    }
}

/// Validated channel table with the sub-plane offset of every channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelLayout {
    specs: Vec<ChannelSpec>,
    offsets: Vec<usize>,
    planes: usize,
}

impl ChannelLayout {
    pub fn new(specs: Vec<ChannelSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidChannel {
                name: String::new(),
                reason: "channel list is empty".into(),
            });
        }
        let mut seen = HashSet::new();
        let mut offsets = Vec::with_capacity(specs.len());
        let mut planes = 0;
        for s in &specs {
            if !seen.insert(s.name.as_str()) {
                return Err(Error::DuplicateChannel(s.name.clone()));
            }
            if s.arity == 0 {
                return Err(Error::InvalidChannel {
                    name: s.name.clone(),
                    reason: "arity must be >= 1".into(),
                });
            }
            if let Some((lo, hi)) = s.bounds {
                if !(lo < hi) {
                    return Err(Error::InvalidChannel {
                        name: s.name.clone(),
                        reason: format!("bounds [{lo}, {hi}] are not increasing"),
                    });
                }
            }
            offsets.push(planes);
            planes += s.arity;
        }
        Ok(Self {
            specs,
            offsets,
            planes,
        })
    }

    pub fn specs(&self) -> &[ChannelSpec] {
        &self.specs
    }

    /// Total number of float sub-planes.
    pub fn plane_count(&self) -> usize {
        self.planes
    }

    pub fn channel(&self, name: &str) -> Option<(usize, &ChannelSpec)> {
        self.specs
            .iter()
            .position(|s| s.name == name)
            .map(|i| (self.offsets[i], &self.specs[i]))
    }

    /// Plane index of sub-channel `sub` of channel `name`.
    pub fn plane(&self, name: &str, sub: usize) -> Option<usize> {
        self.channel(name)
            .and_then(|(off, spec)| (sub < spec.arity).then_some(off + sub))
    }

    /// Per-plane bounds, expanded over sub-channels.
    pub fn plane_bounds(&self) -> Vec<Option<(f32, f32)>> {
        self.specs
            .iter()
            .flat_map(|s| std::iter::repeat(s.bounds).take(s.arity))
            .collect()
    }
}

/// One full buffer of cell state.
#[derive(Clone, Debug, PartialEq)]
pub struct Planes {
    pub width: usize,
    pub height: usize,
    /// One plane per sub-channel, row-major.
    pub data: Vec<Vec<f32>>,
    /// `-1` marks an unoccupied cell.
    pub genome: Vec<i32>,
    /// Heading in units of 45 degrees, `0..8`.
    pub rotation: Vec<u8>,
}

impl Planes {
    fn zeroed(width: usize, height: usize, planes: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            data: vec![vec![0.0; n]; planes],
            genome: vec![-1; n],
            rotation: vec![0; n],
        }
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.width, idx / self.width)
    }

    /// Linear index of `(x + dx, y + dy)` on the torus.
    #[inline]
    pub fn neighbor(&self, idx: usize, dx: i32, dy: i32) -> usize {
        let (x, y) = self.coords(idx);
        let (nx, ny) = wrap(
            x as i64 + dx as i64,
            y as i64 + dy as i64,
            self.width,
            self.height,
        );
        self.index(nx, ny)
    }

    pub fn copy_from(&mut self, other: &Planes) {
        for (dst, src) in self.data.iter_mut().zip(&other.data) {
            dst.copy_from_slice(src);
        }
        self.genome.copy_from_slice(&other.genome);
        self.rotation.copy_from_slice(&other.rotation);
    }

    /// Rotate the grid 90 degrees counterclockwise (y up) and advance every
    /// heading by two steps. Only defined for square grids.
    pub fn rotated_ccw(&self) -> Planes {
        assert_eq!(self.width, self.height, "rotation needs a square grid");
        let n = self.width;
        let mut out = Planes::zeroed(n, n, self.data.len());
        for y in 0..n {
            for x in 0..n {
                let src = y * n + x;
                let dst = x * n + (n - 1 - y);
                for (p, plane) in self.data.iter().enumerate() {
                    out.data[p][dst] = plane[src];
                }
                out.genome[dst] = self.genome[src];
                out.rotation[dst] = (self.rotation[src] + 2) % 8;
            }
        }
        out
    }
}

/// Toroidal wrap of possibly out-of-range coordinates.
#[inline]
pub fn wrap(x: i64, y: i64, width: usize, height: usize) -> (usize, usize) {
    (
        x.rem_euclid(width as i64) as usize,
        y.rem_euclid(height as i64) as usize,
    )
}

/// Double-buffered grid. Reads go to the front buffer, a step writes the
/// back buffer, and [`Substrate::swap_buffers`] publishes it.
#[derive(Clone, Debug)]
pub struct Substrate {
    layout: Arc<ChannelLayout>,
    front: Planes,
    back: Planes,
    step: u64,
}

impl Substrate {
    pub fn new(width: usize, height: usize, specs: Vec<ChannelSpec>) -> Result<Self> {
        if width < 4 || height < 4 {
            return Err(Error::InvalidDimensions { width, height });
        }
        let layout = ChannelLayout::new(specs)?;
        let front = Planes::zeroed(width, height, layout.plane_count());
        let back = front.clone();
        Ok(Self {
            layout: Arc::new(layout),
            front,
            back,
            step: 0,
        })
    }

    pub fn width(&self) -> usize {
        self.front.width
    }

    pub fn height(&self) -> usize {
        self.front.height
    }

    pub fn cells(&self) -> usize {
        self.front.cells()
    }

    pub fn layout(&self) -> &ChannelLayout {
        &self.layout
    }

    pub fn step_counter(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step_counter(&mut self, step: u64) {
        self.step = step;
    }

    pub fn front(&self) -> &Planes {
        &self.front
    }

    /// Direct access to the visible state, for seeding and interventions
    /// between steps.
    pub fn front_mut(&mut self) -> &mut Planes {
        &mut self.front
    }

    pub fn back(&self) -> &Planes {
        &self.back
    }

    pub fn back_mut(&mut self) -> &mut Planes {
        &mut self.back
    }

    /// Start a step: the back buffer becomes a copy of the front.
    pub fn prepare_back(&mut self) {
        self.back.copy_from(&self.front);
    }

    pub fn swap_buffers(&mut self) {
        std::mem::swap(&mut self.front, &mut self.back);
        self.step += 1;
    }

    /// Front-buffer plane of a named sub-channel.
    pub fn plane(&self, name: &str, sub: usize) -> Option<&[f32]> {
        self.layout.plane(name, sub).map(|p| self.front.data[p].as_slice())
    }

    pub fn plane_mut(&mut self, name: &str, sub: usize) -> Option<&mut [f32]> {
        let p = self.layout.plane(name, sub)?;
        Some(self.front.data[p].as_mut_slice())
    }

    /// Replace the front buffer wholesale (snapshot loading, tests).
    pub fn replace_front(&mut self, planes: Planes) -> Result<()> {
        if planes.width != self.width()
            || planes.height != self.height()
            || planes.data.len() != self.layout.plane_count()
            || planes.data.iter().any(|p| p.len() != self.cells())
            || planes.genome.len() != self.cells()
            || planes.rotation.len() != self.cells()
        {
            return Err(Error::CorruptState("plane size mismatch".into()));
        }
        self.front = planes;
        Ok(())
    }

    /// Substrate rotated 90 degrees counterclockwise; see [`Planes::rotated_ccw`].
    pub fn rotated_ccw(&self) -> Substrate {
        let front = self.front.rotated_ccw();
        Substrate {
            layout: self.layout.clone(),
            back: front.clone(),
            front,
            step: self.step,
        }
    }

    /// 64-bit FNV-1a over every front-buffer plane in channel-table order,
    /// followed by the genome-index and rotation planes.
    pub fn digest(&self) -> u64 {
        let mut h = Fnv1a::new();
        for plane in &self.front.data {
            for v in plane {
                h.write(&v.to_le_bytes());
            }
        }
        for g in &self.front.genome {
            h.write(&g.to_le_bytes());
        }
        h.write(&self.front.rotation);
        h.finish()
    }

    pub fn render_rgb(&self, norm: &DisplayNorm) -> RgbFrame {
        let f = &self.front;
        let energy = self.layout.plane(ENERGY, 0).map(|p| &f.data[p]);
        let infra = self.layout.plane(INFRASTRUCTURE, 0).map(|p| &f.data[p]);
        let mut pixels = Vec::with_capacity(f.cells() * 4);
        for i in 0..f.cells() {
            let r = energy.map_or(0, |e| unit_to_byte(e[i] / norm.energy));
            let g = infra.map_or(0, |p| unit_to_byte(p[i] / norm.infrastructure));
            pixels.extend_from_slice(&[r, g, genome_hue(f.genome[i]), 255]);
        }
        RgbFrame {
            width: f.width,
            height: f.height,
            pixels,
        }
    }
}

/// Display maxima mapped to full intensity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisplayNorm {
    pub energy: f32,
    pub infrastructure: f32,
}

impl Default for DisplayNorm {
    fn default() -> Self {
        Self {
            energy: 1.0,
            infrastructure: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbFrame {
    pub width: usize,
    pub height: usize,
    /// RGBA, row-major.
    pub pixels: Vec<u8>,
}

impl RgbFrame {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 4] {
        let i = (y * self.width + x) * 4;
        [
            self.pixels[i],
            self.pixels[i + 1],
            self.pixels[i + 2],
            self.pixels[i + 3],
        ]
    }
}

#[inline]
fn unit_to_byte(v: f32) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0).round() as u8
}

/// Stable blue value for a genome slot; 0 for unoccupied cells.
pub fn genome_hue(genome: i32) -> u8 {
    if genome < 0 {
        return 0;
    }
    let frac = (genome as f64 * GOLDEN_FRACTION).fract();
    (frac * 255.0).round() as u8
}

pub(crate) struct Fnv1a(u64);

impl Fnv1a {
    pub(crate) fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}
