//! Search space and architecture parameters.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::genotype::{OpKind, BASE_RATE};
use crate::tensor::{Elem, Param, Tensor};

/// Trellis and cell search space. Levels hold cumulative downsample rates
/// `BASE_RATE * 2^level`; resolution may halve, keep, or double between
/// consecutive layers.
#[derive(Debug, Clone)]
pub struct SearchSpace {
    pub candidate_ops: Vec<OpKind>,
    pub nodes_per_cell: usize,
    pub layers: usize,
    pub levels: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            candidate_ops: vec![OpKind::Skip, OpKind::Conv3, OpKind::Conv5],
            nodes_per_cell: 3,
            layers: 6,
            levels: 4,
        }
    }
}

impl SearchSpace {
    pub fn rate(&self, level: usize) -> u32 {
        BASE_RATE << level
    }

    /// Highest level reachable at layer `l` (one descent per layer).
    pub fn max_level_at(&self, layer: usize) -> usize {
        (layer + 1).min(self.levels - 1)
    }

    /// Valid transitions out of `src` at layer `l`: `(dst, slot)` pairs
    /// where slot indexes the 3-way logits {up, keep, down}.
    pub fn transitions_from(&self, layer: usize, src: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        if src > 0 {
            out.push((src - 1, 0));
        }
        out.push((src, 1));
        if src + 1 <= self.max_level_at(layer) {
            out.push((src + 1, 2));
        }
        out
    }
}

/// Trainable architecture parameters: per-edge op mixing weights (shared
/// across levels within a layer) and per-layer level-transition logits.
pub struct AlphaParams {
    /// `edges[layer][node][tap]`: logits over the candidate ops.
    pub edges: Vec<Vec<Vec<Param>>>,
    /// `transitions[layer][src_level]`: logits over {up, keep, down}.
    pub transitions: Vec<Vec<Param>>,
}

impl AlphaParams {
    /// Near-uniform initialization with small seeded noise.
    pub fn init(space: &SearchSpace, rng: &mut ChaCha8Rng) -> Self {
        let k = space.candidate_ops.len();
        let noise = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Elem> {
            (0..n).map(|_| rng.gen_range(-1e-3..1e-3)).collect()
        };
        let edges = (0..space.layers)
            .map(|l| {
                (0..space.nodes_per_cell)
                    .map(|n| {
                        (0..2)
                            .map(|t| {
                                Param::new(
                                    format!("alpha.l{l}.n{n}.t{t}"),
                                    Tensor::from_vec(&[k], noise(rng, k)).unwrap(),
                                )
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let transitions = (0..space.layers)
            .map(|l| {
                let src_levels = if l == 0 { 1 } else { space.max_level_at(l - 1) + 1 };
                (0..src_levels)
                    .map(|v| {
                        Param::new(
                            format!("beta.l{l}.v{v}"),
                            Tensor::from_vec(&[3], noise(rng, 3)).unwrap(),
                        )
                    })
                    .collect()
            })
            .collect();
        AlphaParams { edges, transitions }
    }

    pub fn all_params(&self) -> Vec<Param> {
        let mut out = Vec::new();
        for layer in &self.edges {
            for node in layer {
                for tap in node {
                    out.push(tap.clone());
                }
            }
        }
        for layer in &self.transitions {
            for p in layer {
                out.push(p.clone());
            }
        }
        out
    }
}
