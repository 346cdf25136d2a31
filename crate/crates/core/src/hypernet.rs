//! HyperNEAT: query a CPPN over neuron coordinates to produce the dense
//! sensor→actuator network of a genome, and evaluate that network.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuroevo::genome::{CppnGenome, CPPN_INPUTS};

/// Kernel slots sensed per cell: center plus 8 neighbors.
pub const SENSOR_SLOTS: usize = 9;
/// Sub-channels sensed per slot: energy, infrastructure, comm0..2.
pub const SENSOR_CHANNELS: usize = 5;
pub const SENSORS: usize = SENSOR_SLOTS * SENSOR_CHANNELS;
/// invest, liquidate, comm0..2, explore0..7.
pub const ACTUATORS: usize = 13;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    pub hidden_size: usize,
    /// Expression threshold on the CPPN weight signal.
    pub tau: f64,
    pub w_max: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            hidden_size: 16,
            tau: 0.2,
            w_max: 3.0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.hidden_size > 256 {
            return Err(Error::config("hypernet.hidden_size", "must be in 1..=256"));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::config("hypernet.tau", "must be in [0, 1)"));
        }
        if !(self.w_max > 0.0) || !self.w_max.is_finite() {
            return Err(Error::config("hypernet.w_max", "must be > 0"));
        }
        Ok(())
    }
}

/// Neuron coordinates of the generated network.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronLayout {
    pub inputs: Vec<(f64, f64)>,
    pub hidden: Vec<(f64, f64)>,
    pub outputs: Vec<(f64, f64)>,
}

/// Position `i` of `n` evenly spaced points on [-1, 1].
fn spread(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }
}

impl NeuronLayout {
    pub fn new(hidden_size: usize) -> Self {
        let inputs = (0..SENSOR_SLOTS)
            .flat_map(|s| {
                (0..SENSOR_CHANNELS)
                    .map(move |c| (spread(s, SENSOR_SLOTS), spread(c, SENSOR_CHANNELS)))
            })
            .collect();
        let hidden = (0..hidden_size).map(|i| (spread(i, hidden_size), 0.0)).collect();
        let outputs = (0..ACTUATORS).map(|i| (spread(i, ACTUATORS), 0.0)).collect();
        Self {
            inputs,
            hidden,
            outputs,
        }
    }
}

/// Dense two-layer network: `h = tanh(W1·s + b1)`, `a = sigmoid(W2·h + b2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    pub hidden: usize,
    /// hidden × SENSORS, row-major.
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    /// ACTUATORS × hidden, row-major.
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
}

impl DenseParams {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            hidden,
            w1: vec![0.0; hidden * SENSORS],
            b1: vec![0.0; hidden],
            w2: vec![0.0; ACTUATORS * hidden],
            b2: vec![0.0; ACTUATORS],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f32> + '_ {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .copied()
    }

    /// Flat little-endian float32 encoding: w1, b1, w2, b2.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.iter().flat_map(f32::to_le_bytes).collect()
    }

    pub fn from_bytes(hidden: usize, bytes: &[u8]) -> Result<Self> {
        let mut p = Self::zeros(hidden);
        let expected = p.iter().count() * 4;
        if bytes.len() != expected {
            return Err(Error::Snapshot(format!(
                "dense parameter block has {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let mut vals = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        for dst in [&mut p.w1, &mut p.b1, &mut p.w2, &mut p.b2] {
            for v in dst.iter_mut() {
                *v = vals.next().unwrap();
            }
        }
        Ok(p)
    }
}

struct CompiledNode {
    activation: crate::neuroevo::genome::Activation,
    incoming: Vec<(usize, f64)>,
}

/// A genome flattened into evaluation order. Only enabled edges survive.
pub struct CompiledCppn {
    inputs: Vec<usize>,
    order: Vec<(usize, CompiledNode)>,
    outputs: [usize; 2],
    slots: usize,
}

impl CompiledCppn {
    pub fn new(genome: &CppnGenome) -> Self {
        let order_idx = genome
            .topological_order()
            .expect("CPPN genome must be acyclic");
        let index: HashMap<u64, usize> = genome
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id, i))
            .collect();
        let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); genome.nodes.len()];
        for c in genome.connections.iter().filter(|c| c.enabled) {
            incoming[index[&c.to]].push((index[&c.from], c.weight));
        }
        let inputs = (0..CPPN_INPUTS as u64).map(|id| index[&id]).collect();
        let order = order_idx
            .into_iter()
            .filter(|&i| genome.nodes[i].role != crate::neuroevo::genome::NodeRole::Input)
            .map(|i| {
                (
                    i,
                    CompiledNode {
                        activation: genome.nodes[i].activation,
                        incoming: std::mem::take(&mut incoming[i]),
                    },
                )
            })
            .collect();
        let [o0, o1] = CppnGenome::output_ids();
        Self {
            inputs,
            order,
            outputs: [index[&o0], index[&o1]],
            slots: genome.nodes.len(),
        }
    }

    pub fn evaluate(&self, inputs: [f64; CPPN_INPUTS], scratch: &mut Vec<f64>) -> [f64; 2] {
        scratch.clear();
        scratch.resize(self.slots, 0.0);
        for (&slot, v) in self.inputs.iter().zip(inputs) {
            scratch[slot] = v;
        }
        for (slot, node) in &self.order {
            let sum: f64 = node.incoming.iter().map(|&(src, w)| scratch[src] * w).sum();
            scratch[*slot] = node.activation.apply(sum);
        }
        [scratch[self.outputs[0]], scratch[self.outputs[1]]]
    }
}

/// Evaluate a CPPN on `(x1, y1, x2, y2, bias)`; returns (weight, bias) signals.
pub fn evaluate_cppn(genome: &CppnGenome, inputs: [f64; CPPN_INPUTS]) -> [f64; 2] {
    CompiledCppn::new(genome).evaluate(inputs, &mut Vec::new())
}

/// Threshold-and-rescale a CPPN signal into a network parameter. Signals are
/// saturated at magnitude 1 so results stay within `w_max`.
pub fn express(signal: f64, tau: f64, w_max: f64) -> f32 {
    if signal.is_nan() {
        return 0.0;
    }
    let mag = signal.abs().min(1.0);
    if mag <= tau {
        return 0.0;
    }
    (signal.signum() * (mag - tau) / (1.0 - tau) * w_max) as f32
}

pub fn generate_network(genome: &CppnGenome, layout: &NeuronLayout, hp: &HyperParams) -> DenseParams {
    let cppn = CompiledCppn::new(genome);
    let mut scratch = Vec::new();
    let hidden = layout.hidden.len();
    let mut p = DenseParams::zeros(hidden);
    let mut query = |src: (f64, f64), dst: (f64, f64)| {
        cppn.evaluate([src.0, src.1, dst.0, dst.1, 1.0], &mut scratch)
    };

    for (j, &h) in layout.hidden.iter().enumerate() {
        for (i, &s) in layout.inputs.iter().enumerate() {
            p.w1[j * SENSORS + i] = express(query(s, h)[0], hp.tau, hp.w_max);
        }
        p.b1[j] = express(query((0.0, 0.0), h)[1], hp.tau, hp.w_max);
    }
    for (k, &o) in layout.outputs.iter().enumerate() {
        for (j, &h) in layout.hidden.iter().enumerate() {
            p.w2[k * hidden + j] = express(query(h, o)[0], hp.tau, hp.w_max);
        }
        p.b2[k] = express(query((0.0, 0.0), o)[1], hp.tau, hp.w_max);
    }
    p
}

/// Largest f32 below one.
const BELOW_ONE: f32 = 1.0 - f32::EPSILON / 2.0;

/// Logistic function kept strictly inside (0, 1) even when f32 saturates.
#[inline(always)]
fn sigmoid(x: f32) -> f32 {
    (1.0 / (1.0 + (-x).exp())).clamp(f32::MIN_POSITIVE, BELOW_ONE)
}

/// Hyperbolic tangent via one `exp`; much cheaper than libm `tanh`.
#[inline(always)]
fn tanh_fast(x: f64) -> f32 {
    let a = x.abs();
    let t = if a < 1e-4 {
        a - a * a * a / 3.0
    } else {
        let e = (-2.0 * a).exp();
        (1.0 - e) / (1.0 + e)
    };
    t.copysign(x) as f32
}

/// Hidden width with an unrolled fast path.
const WIDE: usize = 16;

/// Input-major f64 copy of the weights, so every unit of a layer accumulates in parallel.
struct Kernel {
    hidden: usize,
    /// SENSORS × hidden.
    w1: Vec<f64>,
    b1: Vec<f64>,
    /// hidden × ACTUATORS.
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl Kernel {
    fn new(p: &DenseParams) -> Self {
        let h = p.hidden;
        let mut w1 = vec![0.0; SENSORS * h];
        for j in 0..h {
            for i in 0..SENSORS {
                w1[i * h + j] = p.w1[j * SENSORS + i] as f64;
            }
        }
        let mut w2 = vec![0.0; h * ACTUATORS];
        for k in 0..ACTUATORS {
            for j in 0..h {
                w2[j * ACTUATORS + k] = p.w2[k * h + j] as f64;
            }
        }
        let widen = |v: &[f32]| v.iter().map(|&x| x as f64).collect();
        Self { hidden: h, w1, b1: widen(&p.b1), w2, b2: widen(&p.b2) }
    }

    #[inline(always)]
    fn eval(&self, sensors: &[f32], acc: &mut [f64], hidden: &mut [f32], out: &mut [f32]) {
        debug_assert_eq!(sensors.len(), SENSORS);
        if self.hidden == WIDE {
            let mut a = [0.0f64; WIDE];
            a.copy_from_slice(&self.b1);
            for (&s, w) in sensors.iter().zip(self.w1.chunks_exact(WIDE)) {
                let s = s as f64;
                for l in 0..WIDE {
                    a[l] += w[l] * s;
                }
            }
            acc.copy_from_slice(&a);
        } else {
            acc.copy_from_slice(&self.b1);
            for (&s, w) in sensors.iter().zip(self.w1.chunks_exact(self.hidden)) {
                let s = s as f64;
                for (a, &w) in acc.iter_mut().zip(w) {
                    *a += w * s;
                }
            }
        }
        for (o, &a) in hidden.iter_mut().zip(acc.iter()) {
            *o = tanh_fast(a);
        }
        let mut z = [0.0f64; ACTUATORS];
        z.copy_from_slice(&self.b2);
        for (&x, w) in hidden.iter().zip(self.w2.chunks_exact(ACTUATORS)) {
            let x = x as f64;
            for (a, &w) in z.iter_mut().zip(w) {
                *a += w * x;
            }
        }
        for (o, &a) in out.iter_mut().zip(&z) {
            *o = sigmoid(a as f32);
        }
    }
}

pub fn forward(p: &DenseParams, sensors: &[f32]) -> [f32; ACTUATORS] {
    let mut out = [0.0; ACTUATORS];
    out.copy_from_slice(&forward_batched(p, sensors));
    out
}

/// Row-wise forward over an `N × SENSORS` matrix; returns `N × ACTUATORS`.
pub fn forward_batched(p: &DenseParams, rows: &[f32]) -> Vec<f32> {
    let n = rows.len() / SENSORS;
    let mut out = vec![0.0; n * ACTUATORS];
    if n == 0 {
        return out;
    }
    let kernel = Kernel::new(p);
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2.
        unsafe { eval_rows_avx2(&kernel, rows, &mut out) };
        return out;
    }
    eval_rows(&kernel, rows, &mut out);
    out
}

#[inline(always)]
fn eval_rows(kernel: &Kernel, rows: &[f32], out: &mut [f32]) {
    let mut acc = vec![0.0; kernel.hidden];
    let mut hidden = vec![0.0; kernel.hidden];
    for (row, dst) in rows.chunks_exact(SENSORS).zip(out.chunks_exact_mut(ACTUATORS)) {
        kernel.eval(row, &mut acc, &mut hidden, dst);
    }
}

/// Same arithmetic as [`eval_rows`] with wider vectors; no fused multiply-add, so results are identical.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn eval_rows_avx2(kernel: &Kernel, rows: &[f32], out: &mut [f32]) {
    eval_rows(kernel, rows, out)
}
