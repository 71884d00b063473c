//! Genotype-instantiated encoder cells.
//!
//! A cell holds three spiking nodes. Each node receives one edge from each
//! of the two input taps (previous layer and the layer before that); the
//! node's output is the spiking activation of the summed edge currents and
//! the cell output is the concatenation of its node outputs.

use rand_chacha::ChaCha8Rng;

use super::layers::{ConvBn, Domain, ForwardCtx, SpikeUnit, StateBundle};
use crate::error::Result;
use crate::search::OpKind;
use crate::tensor::{add, concat_channels, upsample_nearest, Tensor};

/// Adapts one input tap to the cell's resolution and node width:
/// 1x1 conv (strided for downsampling, after nearest upsampling when the
/// tap is coarser) + BN + spike, so taps stay binary.
pub struct Preprocess {
    pub conv: ConvBn,
    pub spike: SpikeUnit,
    /// Nearest-upsample factor applied before the conv (1 = none).
    pub up_factor: usize,
}

impl Preprocess {
    /// `src_rate`/`dst_rate` are cumulative downsample rates (1 = full
    /// resolution input).
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        name: &str,
        c_in: usize,
        c_out: usize,
        src_rate: u32,
        dst_rate: u32,
        spike: SpikeUnit,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let (stride, up_factor) = if dst_rate >= src_rate {
            ((dst_rate / src_rate) as usize, 1)
        } else {
            (1, (src_rate / dst_rate) as usize)
        };
        let conv =
            ConvBn::new(format!("{name}.conv"), c_in, c_out, 1, stride, 1, 0, Domain::Binary, rng);
        Preprocess { conv, spike, up_factor }
    }

    pub fn forward(
        &self,
        x: &Tensor,
        states: &mut StateBundle,
        ctx: &mut ForwardCtx,
    ) -> Result<Tensor> {
        let x = if self.up_factor > 1 { upsample_nearest(x, self.up_factor) } else { x.clone() };
        let z = self.conv.forward(&x, ctx)?;
        self.spike.forward(&z, states, ctx)
    }
}

/// One edge of a node: skip passes the preprocessed binary tap through,
/// conv edges are same-size Conv-BN bodies.
pub enum EdgeOp {
    Skip,
    Conv(ConvBn),
}

impl EdgeOp {
    pub fn build(name: &str, kind: OpKind, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        match kind {
            OpKind::Skip => EdgeOp::Skip,
            OpKind::Conv3 => {
                EdgeOp::Conv(ConvBn::same(name, channels, channels, 3, 1, Domain::Binary, rng))
            }
            OpKind::Conv5 => {
                EdgeOp::Conv(ConvBn::same(name, channels, channels, 5, 1, Domain::Binary, rng))
            }
        }
    }

    pub fn forward(&self, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        match self {
            EdgeOp::Skip => Ok(x.clone()),
            EdgeOp::Conv(c) => c.forward(x, ctx),
        }
    }
}

pub struct CellNode {
    pub edges: [EdgeOp; 2],
    pub spike: SpikeUnit,
}

pub struct Cell {
    pub pre: [Preprocess; 2],
    pub nodes: Vec<CellNode>,
}

impl Cell {
    /// `taps` are (previous layer output, output of the layer before
    /// that), already at their own resolutions; preprocessing aligns them.
    pub fn forward(
        &self,
        taps: (&Tensor, &Tensor),
        states: &mut StateBundle,
        ctx: &mut ForwardCtx,
    ) -> Result<Tensor> {
        let t0 = self.pre[0].forward(taps.0, states, ctx)?;
        let t1 = self.pre[1].forward(taps.1, states, ctx)?;
        let mut outs = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let e0 = node.edges[0].forward(&t0, ctx)?;
            let e1 = node.edges[1].forward(&t1, ctx)?;
            let current = add(&e0, &e1);
            outs.push(node.spike.forward(&current, states, ctx)?);
        }
        let refs: Vec<&Tensor> = outs.iter().collect();
        concat_channels(&refs)
    }

    pub fn conv_units(&self) -> Vec<&ConvBn> {
        let mut v = vec![&self.pre[0].conv, &self.pre[1].conv];
        for n in &self.nodes {
            for e in &n.edges {
                if let EdgeOp::Conv(c) = e {
                    v.push(c);
                }
            }
        }
        v
    }

    pub fn spike_units(&self) -> Vec<&SpikeUnit> {
        let mut v = vec![&self.pre[0].spike, &self.pre[1].spike];
        v.extend(self.nodes.iter().map(|n| &n.spike));
        v
    }
}
