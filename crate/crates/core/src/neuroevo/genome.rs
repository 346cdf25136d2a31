use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::rng::RngStream;

/// CPPN inputs: source (x, y), target (x, y), bias.
pub const CPPN_INPUTS: usize = 5;
/// CPPN outputs: weight signal, bias signal.
pub const CPPN_OUTPUTS: usize = 2;
/// Index of the bias input node.
pub const BIAS_INPUT: u64 = 4;
/// Node ids below this are the fixed input/output nodes shared by every genome.
pub const FIRST_DYNAMIC_ID: u64 = (CPPN_INPUTS + CPPN_OUTPUTS) as u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Input,
    Hidden,
    Output,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sine,
    Gaussian,
    Sigmoid,
    Tanh,
    Identity,
    Abs,
}

impl Activation {
    pub const ALL: [Activation; 6] = [
        Activation::Sine,
        Activation::Gaussian,
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Identity,
        Activation::Abs,
    ];

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sine => x.sin(),
            Activation::Gaussian => (-x * x).exp(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
            Activation::Abs => x.abs(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeGene {
    pub id: u64,
    pub role: NodeRole,
    #[serde(rename = "act")]
    pub activation: Activation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnGene {
    #[serde(rename = "innov")]
    pub innovation: u64,
    pub from: u64,
    pub to: u64,
    #[serde(rename = "w")]
    pub weight: f64,
    #[serde(rename = "on")]
    pub enabled: bool,
}

/// Global source of innovation numbers and hidden-node ids. Never hands out
/// the same number twice.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InnovationCounter {
    next: u64,
}

impl Default for InnovationCounter {
    fn default() -> Self {
        Self {
            next: FIRST_DYNAMIC_ID,
        }
    }
}

impl InnovationCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_id(&mut self) -> u64 {
        let id = self.next;
        self.next += 1;
        id
    }

    pub fn peek(&self) -> u64 {
        self.next
    }

    pub(crate) fn starting_at(next: u64) -> Self {
        Self { next }
    }
}

/// Innovation-numbered CPPN graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CppnGenome {
    pub nodes: Vec<NodeGene>,
    #[serde(rename = "conns")]
    pub connections: Vec<ConnGene>,
}

impl CppnGenome {
    /// The fixed input and output nodes with tanh outputs.
    pub fn io_nodes() -> Vec<NodeGene> {
        let inputs = (0..CPPN_INPUTS as u64).map(|id| NodeGene {
            id,
            role: NodeRole::Input,
            activation: Activation::Identity,
        });
        let outputs = (CPPN_INPUTS as u64..FIRST_DYNAMIC_ID).map(|id| NodeGene {
            id,
            role: NodeRole::Output,
            activation: Activation::Tanh,
        });
        inputs.chain(outputs).collect()
    }

    pub fn output_ids() -> [u64; CPPN_OUTPUTS] {
        [CPPN_INPUTS as u64, CPPN_INPUTS as u64 + 1]
    }

    /// Fully connected input→output CPPN, weights uniform in [-1, 1].
    pub fn init(rng: &mut RngStream, innovations: &mut InnovationCounter) -> Self {
        let mut connections = Vec::with_capacity(CPPN_INPUTS * CPPN_OUTPUTS);
        for from in 0..CPPN_INPUTS as u64 {
            for to in Self::output_ids() {
                connections.push(ConnGene {
                    innovation: innovations.next_id(),
                    from,
                    to,
                    weight: rng.uniform(-1.0, 1.0),
                    enabled: true,
                });
            }
        }
        Self {
            nodes: Self::io_nodes(),
            connections,
        }
    }

    pub fn node(&self, id: u64) -> Option<&NodeGene> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn innovations(&self) -> impl Iterator<Item = u64> + '_ {
        self.connections.iter().map(|c| c.innovation)
    }

    /// Node indices in feed-forward order over all edges, enabled or not.
    /// `None` when the graph has a cycle or dangling references.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let index: HashMap<u64, usize> =
            self.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let mut indegree = vec![0usize; self.nodes.len()];
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for c in &self.connections {
            let (&f, &t) = (index.get(&c.from)?, index.get(&c.to)?);
            out[f].push(t);
            indegree[t] += 1;
        }
        let mut ready: Vec<usize> = (0..self.nodes.len()).filter(|&i| indegree[i] == 0).collect();
        ready.reverse();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(n) = ready.pop() {
            order.push(n);
            for &m in &out[n] {
                indegree[m] -= 1;
                if indegree[m] == 0 {
                    ready.push(m);
                }
            }
        }
        (order.len() == self.nodes.len()).then_some(order)
    }

    /// Whether `to` can reach `from` through existing edges, i.e. whether
    /// adding `from → to` would close a cycle.
    pub fn would_cycle(&self, from: u64, to: u64) -> bool {
        if from == to {
            return true;
        }
        let mut stack = vec![to];
        let mut seen = std::collections::HashSet::new();
        while let Some(n) = stack.pop() {
            if n == from {
                return true;
            }
            if !seen.insert(n) {
                continue;
            }
            stack.extend(self.connections.iter().filter(|c| c.from == n).map(|c| c.to));
        }
        false
    }

    /// Check every structural invariant; returns a description of the first
    /// violation.
    pub fn validate(&self) -> Result<(), String> {
        let mut ids = std::collections::HashSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id) {
                return Err(format!("duplicate node id {}", n.id));
            }
        }
        for id in 0..FIRST_DYNAMIC_ID {
            if !ids.contains(&id) {
                return Err(format!("missing fixed node {id}"));
            }
        }
        let mut pairs = std::collections::HashSet::new();
        for w in self.connections.windows(2) {
            if w[0].innovation >= w[1].innovation {
                return Err("innovation ids not strictly increasing".into());
            }
        }
        for c in &self.connections {
            if !ids.contains(&c.from) || !ids.contains(&c.to) {
                return Err(format!("connection {} references a missing node", c.innovation));
            }
            if !pairs.insert((c.from, c.to)) {
                return Err(format!("duplicate edge {} -> {}", c.from, c.to));
            }
            if !c.weight.is_finite() {
                return Err(format!("connection {} has non-finite weight", c.innovation));
            }
            match (self.node(c.from).map(|n| n.role), self.node(c.to).map(|n| n.role)) {
                (Some(NodeRole::Output), _) | (_, Some(NodeRole::Input)) => {
                    return Err(format!("connection {} runs against the feed-forward roles", c.innovation))
                }
                _ => {}
            }
        }
        if self.topological_order().is_none() {
            return Err("graph has a cycle".into());
        }
        Ok(())
    }
}
