//! CPPN genomes, NEAT operators, and the bounded genome pool.

pub mod genome;
pub mod ops;
pub mod pool;

pub use genome::{Activation, ConnGene, CppnGenome, InnovationCounter, NodeGene, NodeRole, BIAS_INPUT};
pub use ops::{compatibility_distance, crossover, mutate, EvolutionRates};
pub use pool::{GenomePool, PhylogenyRecord, PoolEntry, POOL_CAPACITY};
