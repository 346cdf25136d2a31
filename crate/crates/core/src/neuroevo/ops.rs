//! NEAT genetic operators: mutation, crossover and compatibility distance.

use serde::{Deserialize, Serialize};

use super::genome::{Activation, ConnGene, CppnGenome, InnovationCounter, NodeGene, NodeRole};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Probability that a gene disabled in either parent stays disabled.
pub const INHERIT_DISABLED_PROB: f64 = 0.75;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolutionRates {
    pub weight_perturb_prob: f64,
    pub weight_perturb_sigma: f64,
    pub weight_reset_prob: f64,
    pub add_connection_prob: f64,
    pub add_node_prob: f64,
    pub toggle_enable_prob: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub p_radiation: f64,
    pub p_merge: f64,
}

impl Default for EvolutionRates {
    fn default() -> Self {
        Self {
            weight_perturb_prob: 0.8,
            weight_perturb_sigma: 0.5,
            weight_reset_prob: 0.05,
            add_connection_prob: 0.05,
            add_node_prob: 0.03,
            toggle_enable_prob: 0.01,
            c1: 1.0,
            c2: 1.0,
            c3: 0.4,
            p_radiation: 0.02,
            p_merge: 0.2,
        }
    }
}

impl EvolutionRates {
    /// All probabilities zero: mutation becomes the identity.
    pub fn none() -> Self {
        Self {
            weight_perturb_prob: 0.0,
            weight_reset_prob: 0.0,
            add_connection_prob: 0.0,
            add_node_prob: 0.0,
            toggle_enable_prob: 0.0,
            p_radiation: 0.0,
            p_merge: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("weight_perturb_prob", self.weight_perturb_prob),
            ("weight_reset_prob", self.weight_reset_prob),
            ("add_connection_prob", self.add_connection_prob),
            ("add_node_prob", self.add_node_prob),
            ("toggle_enable_prob", self.toggle_enable_prob),
            ("p_radiation", self.p_radiation),
            ("p_merge", self.p_merge),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("evolution.{name}"), "must be in [0, 1]"));
            }
        }
        if !(self.weight_perturb_sigma > 0.0) || !self.weight_perturb_sigma.is_finite() {
            return Err(Error::config("evolution.weight_perturb_sigma", "must be > 0"));
        }
        for (name, c) in [("c1", self.c1), ("c2", self.c2), ("c3", self.c3)] {
            if !(c >= 0.0) || !c.is_finite() {
                return Err(Error::config(format!("evolution.{name}"), "must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Apply NEAT mutation to a copy of `genome`. Structural changes draw fresh
/// ids from `innovations`; an impossible structural mutation is skipped.
pub fn mutate(
    genome: &CppnGenome,
    rates: &EvolutionRates,
    rng: &mut RngStream,
    innovations: &mut InnovationCounter,
) -> CppnGenome {
    let mut g = genome.clone();

    for c in &mut g.connections {
        if rng.chance(rates.weight_reset_prob) {
            c.weight = rng.uniform(-1.0, 1.0);
        } else if rng.chance(rates.weight_perturb_prob) {
            c.weight += rates.weight_perturb_sigma * rng.gaussian();
        }
    }

    if rng.chance(rates.toggle_enable_prob) && !g.connections.is_empty() {
        let i = rng.below(g.connections.len() as u64) as usize;
        g.connections[i].enabled = !g.connections[i].enabled;
    }

    if rng.chance(rates.add_connection_prob) {
        add_connection(&mut g, rng, innovations);
    }

    if rng.chance(rates.add_node_prob) {
        add_node(&mut g, rng, innovations);
    }

    g
}

fn add_connection(g: &mut CppnGenome, rng: &mut RngStream, innovations: &mut InnovationCounter) {
    let mut candidates = Vec::new();
    for src in g.nodes.iter().filter(|n| n.role != NodeRole::Output) {
        for dst in g.nodes.iter().filter(|n| n.role != NodeRole::Input) {
            let taken = g.connections.iter().any(|c| c.from == src.id && c.to == dst.id);
            if !taken && !g.would_cycle(src.id, dst.id) {
                candidates.push((src.id, dst.id));
            }
        }
    }
    if candidates.is_empty() {
        return;
    }
    let (from, to) = candidates[rng.below(candidates.len() as u64) as usize];
    g.connections.push(ConnGene {
        innovation: innovations.next_id(),
        from,
        to,
        weight: rng.uniform(-1.0, 1.0),
        enabled: true,
    });
}

fn add_node(g: &mut CppnGenome, rng: &mut RngStream, innovations: &mut InnovationCounter) {
    let enabled: Vec<usize> = (0..g.connections.len())
        .filter(|&i| g.connections[i].enabled)
        .collect();
    if enabled.is_empty() {
        return;
    }
    let split = enabled[rng.below(enabled.len() as u64) as usize];
    g.connections[split].enabled = false;
    let old = g.connections[split];
    let activation = Activation::ALL[rng.below(Activation::ALL.len() as u64) as usize];
    let node = innovations.next_id();
    g.nodes.push(NodeGene {
        id: node,
        role: NodeRole::Hidden,
        activation,
    });
    g.connections.push(ConnGene {
        innovation: innovations.next_id(),
        from: old.from,
        to: node,
        weight: 1.0,
        enabled: true,
    });
    g.connections.push(ConnGene {
        innovation: innovations.next_id(),
        from: node,
        to: old.to,
        weight: old.weight,
        enabled: true,
    });
}

/// NEAT crossover. The child has the fitter parent's topology; matching genes
/// take either parent's weight with equal probability.
pub fn crossover(fitter: &CppnGenome, other: &CppnGenome, rng: &mut RngStream) -> CppnGenome {
    let connections = fitter
        .connections
        .iter()
        .map(|f| {
            let matching = other
                .connections
                .binary_search_by_key(&f.innovation, |c| c.innovation)
                .ok()
                .map(|i| &other.connections[i]);
            let mut child = *f;
            let mut disabled_somewhere = !f.enabled;
            if let Some(o) = matching {
                if rng.chance(0.5) {
                    child.weight = o.weight;
                }
                disabled_somewhere |= !o.enabled;
            }
            if disabled_somewhere {
                child.enabled = !rng.chance(INHERIT_DISABLED_PROB);
            }
            child
        })
        .collect();
    CppnGenome {
        nodes: fitter.nodes.clone(),
        connections,
    }
}

/// Gene alignment summary between two genomes.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Alignment {
    pub matching: usize,
    pub disjoint: usize,
    pub excess: usize,
    pub mean_weight_diff: f64,
}

pub fn align(a: &CppnGenome, b: &CppnGenome) -> Alignment {
    let (ga, gb) = (&a.connections, &b.connections);
    let (mut i, mut j) = (0, 0);
    let mut out = Alignment::default();
    let mut weight_diff = 0.0;
    while i < ga.len() && j < gb.len() {
        let (x, y) = (&ga[i], &gb[j]);
        match x.innovation.cmp(&y.innovation) {
            std::cmp::Ordering::Equal => {
                out.matching += 1;
                weight_diff += (x.weight - y.weight).abs();
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => {
                out.disjoint += 1;
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.disjoint += 1;
                j += 1;
            }
        }
    }
    out.excess = (ga.len() - i) + (gb.len() - j);
    if out.matching > 0 {
        out.mean_weight_diff = weight_diff / out.matching as f64;
    }
    out
}

/// δ = c1·E/N + c2·D/N + c3·W̄, with N = 1 when both genomes have fewer
/// than 20 genes.
pub fn compatibility_distance(a: &CppnGenome, b: &CppnGenome, c1: f64, c2: f64, c3: f64) -> f64 {
    let al = align(a, b);
    let (na, nb) = (a.connections.len(), b.connections.len());
    let n = if na < 20 && nb < 20 { 1.0 } else { na.max(nb) as f64 };
    c1 * al.excess as f64 / n + c2 * al.disjoint as f64 / n + c3 * al.mean_weight_diff
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuroevo::genome::{BIAS_INPUT, FIRST_DYNAMIC_ID};

    fn fresh(seed: u64, ids: &mut InnovationCounter) -> CppnGenome {
        CppnGenome::init(&mut RngStream::from_seed(seed), ids)
    }

    fn gene(innovation: u64, from: u64, to: u64, weight: f64) -> ConnGene {
        ConnGene { innovation, from, to, weight, enabled: true }
    }

    /// Genome whose connections are exactly `genes`, with hidden nodes
    /// created for any id not among the fixed ones.
    fn genome_with(genes: Vec<ConnGene>) -> CppnGenome {
        let mut nodes = CppnGenome::io_nodes();
        for c in &genes {
            for id in [c.from, c.to] {
                if !nodes.iter().any(|n| n.id == id) {
                    nodes.push(NodeGene { id, role: NodeRole::Hidden, activation: Activation::Identity });
                }
            }
        }
        CppnGenome { nodes, connections: genes }
    }

    #[test]
    fn zero_rates_is_identity() {
        let mut ids = InnovationCounter::new();
        let g = fresh(3, &mut ids);
        let before = ids.clone();
        let m = mutate(&g, &EvolutionRates::none(), &mut RngStream::from_seed(4), &mut ids);
        assert_eq!(m, g);
        assert_eq!(ids, before);
    }

    #[test]
    fn add_node_on_single_connection() {
        let mut ids = InnovationCounter::new();
        let first = ids.next_id();
        let g = genome_with(vec![gene(first, BIAS_INPUT, 5, 0.7)]);
        let rates = EvolutionRates { add_node_prob: 1.0, ..EvolutionRates::none() };
        let m = mutate(&g, &rates, &mut RngStream::from_seed(5), &mut ids);
        assert_eq!(m.nodes.len(), g.nodes.len() + 1);
        assert_eq!(m.connections.len(), 3);
        assert!(!m.connections[0].enabled);
        let hidden = m.nodes.last().unwrap();
        assert_eq!(hidden.role, NodeRole::Hidden);
        let (a, b) = (m.connections[1], m.connections[2]);
        assert_eq!((a.from, a.to, a.weight), (BIAS_INPUT, hidden.id, 1.0));
        assert_eq!((b.from, b.to, b.weight), (hidden.id, 5, 0.7));
        assert!(a.innovation > first && b.innovation > a.innovation);
        m.validate().unwrap();
    }

    #[test]
    fn weight_perturbation_touches_every_weight_only() {
        let mut ids = InnovationCounter::new();
        let g = fresh(1, &mut ids);
        let rates = EvolutionRates {
            weight_perturb_prob: 1.0,
            weight_perturb_sigma: 0.5,
            ..EvolutionRates::none()
        };
        let m = mutate(&g, &rates, &mut RngStream::from_seed(2), &mut ids);
        assert_eq!(m.nodes, g.nodes);
        for (a, b) in g.connections.iter().zip(&m.connections) {
            assert_eq!((a.innovation, a.from, a.to, a.enabled), (b.innovation, b.from, b.to, b.enabled));
            assert_ne!(a.weight, b.weight);
        }
    }

    #[test]
    fn add_connection_skipped_when_saturated() {
        // Fresh genomes are already fully connected input→output.
        let mut ids = InnovationCounter::new();
        let g = fresh(1, &mut ids);
        let rates = EvolutionRates { add_connection_prob: 1.0, ..EvolutionRates::none() };
        let m = mutate(&g, &rates, &mut RngStream::from_seed(2), &mut ids);
        assert_eq!(m, g);
    }

    #[test]
    fn add_connection_uses_fresh_innovation() {
        let mut ids = InnovationCounter::new();
        let g = genome_with(vec![gene(ids.next_id(), 0, 5, 0.5)]);
        let rates = EvolutionRates { add_connection_prob: 1.0, ..EvolutionRates::none() };
        let m = mutate(&g, &rates, &mut RngStream::from_seed(8), &mut ids);
        assert_eq!(m.connections.len(), 2);
        assert_eq!(m.connections[1].innovation, FIRST_DYNAMIC_ID + 1);
        m.validate().unwrap();
    }

    #[test]
    fn mutation_preserves_acyclicity() {
        let rates = EvolutionRates {
            add_connection_prob: 0.6,
            add_node_prob: 0.5,
            toggle_enable_prob: 0.3,
            ..EvolutionRates::default()
        };
        let mut ids = InnovationCounter::new();
        let mut g = fresh(11, &mut ids);
        for i in 0..1000 {
            let mut rng = RngStream::from_seed(1000 + i);
            let m = mutate(&g, &rates, &mut rng, &mut ids);
            assert!(m.topological_order().is_some(), "cycle after mutation {i}");
            m.validate().unwrap();
            // restart every 50 generations to keep genomes from growing unboundedly
            g = if i % 50 == 49 { fresh(i, &mut ids) } else { m };
        }
    }

    #[test]
    fn self_crossover_keeps_structure() {
        let mut ids = InnovationCounter::new();
        let g = fresh(1, &mut ids);
        let c = crossover(&g, &g, &mut RngStream::from_seed(2));
        assert_eq!(c, g);
    }

    #[test]
    fn disjoint_and_excess_follow_fitter() {
        let fitter = genome_with(vec![gene(1, 0, 5, 0.1), gene(2, 1, 5, 0.2), gene(3, 2, 5, 0.3)]);
        let other = genome_with(vec![gene(1, 0, 5, 0.9), gene(2, 1, 5, 0.8), gene(4, 3, 5, 0.4)]);
        for seed in 0..20 {
            let c = crossover(&fitter, &other, &mut RngStream::from_seed(seed));
            assert_eq!(c.innovations().collect::<Vec<_>>(), vec![1, 2, 3]);
            assert!(c.connections[0].weight == 0.1 || c.connections[0].weight == 0.9);
            assert_eq!(c.connections[2].weight, 0.3);
        }
    }

    #[test]
    fn matching_weights_come_from_both_parents() {
        let fitter = genome_with(vec![gene(1, 0, 5, 0.1)]);
        let other = genome_with(vec![gene(1, 0, 5, 0.9)]);
        let picks: Vec<f64> = (0..200)
            .map(|s| crossover(&fitter, &other, &mut RngStream::from_seed(s)).connections[0].weight)
            .collect();
        assert!(picks.iter().all(|&w| w == 0.1 || w == 0.9));
        let high = picks.iter().filter(|&&w| w == 0.9).count();
        assert!((60..140).contains(&high), "{high}");
    }

    #[test]
    fn disabled_genes_mostly_stay_disabled() {
        let mut off = gene(1, 0, 5, 0.1);
        off.enabled = false;
        let fitter = genome_with(vec![off]);
        let other = genome_with(vec![gene(1, 0, 5, 0.2)]);
        let n = 4000;
        let disabled = (0..n)
            .filter(|&s| !crossover(&fitter, &other, &mut RngStream::from_seed(s)).connections[0].enabled)
            .count();
        let frac = disabled as f64 / n as f64;
        assert!((frac - 0.75).abs() < 0.03, "{frac}");
    }

    #[test]
    fn distance_hand_example() {
        // matching 1,2,3 with |Δw| = 0.25, 0.5, 0.75 → mean 0.5;
        // disjoint 4 (a) and 5 (b); excess 6 (a).
        let a = genome_with(vec![
            gene(1, 0, 5, 0.0),
            gene(2, 1, 5, 0.0),
            gene(3, 2, 5, 0.0),
            gene(4, 3, 5, 0.0),
            gene(6, 0, 6, 0.0),
        ]);
        let b = genome_with(vec![
            gene(1, 0, 5, 0.25),
            gene(2, 1, 5, -0.5),
            gene(3, 2, 5, 0.75),
            gene(5, 4, 5, 0.0),
        ]);
        let al = align(&a, &b);
        assert_eq!((al.matching, al.disjoint, al.excess), (3, 2, 1));
        assert_eq!(al.mean_weight_diff, 0.5);
        assert_eq!(compatibility_distance(&a, &b, 1.0, 1.0, 0.4), 3.2);
        assert_eq!(compatibility_distance(&b, &a, 1.0, 1.0, 0.4), 3.2);
        assert_eq!(compatibility_distance(&a, &a, 1.0, 1.0, 0.4), 0.0);
    }

    #[test]
    fn distance_normalizes_large_genomes() {
        let big: Vec<ConnGene> = (0..20).map(|i| gene(i + 1, 0, 100 + i, 0.0)).collect();
        let mut small = big.clone();
        small.truncate(10);
        let d = compatibility_distance(&genome_with(big), &genome_with(small), 1.0, 1.0, 0.4);
        assert_eq!(d, 10.0 / 20.0);
    }

    #[test]
    fn rates_validation() {
        EvolutionRates::default().validate().unwrap();
        let bad = EvolutionRates { p_merge: 1.5, ..Default::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("evolution.p_merge"));
        let bad = EvolutionRates { weight_perturb_sigma: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
