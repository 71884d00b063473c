//! Differentiable hierarchical architecture search: supernet with
//! softmax-mixed edges, bi-level optimization, and discrete genotype
//! extraction.

mod genotype;

pub use genotype::{Genotype, OpKind, BASE_RATE};
