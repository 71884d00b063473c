//! Spiking atrous spatial pyramid pooling.

use rand_chacha::ChaCha8Rng;

use super::layers::{tile_to, ConvBn, Domain, ForwardCtx, PooledConvBn, SpikeUnit, StateBundle};
use crate::error::Result;
use crate::tensor::{concat_channels, Tensor};

/// Five branches: a 1x1 conv, three 3x3 convs at dilations (6, 12, 18),
/// and a global-pool branch (pool, 1x1 conv, spike, nearest upsample back),
/// each conv+BN+spike; branch outputs concatenate.
pub struct SpikingAspp {
    branches: Vec<(ConvBn, SpikeUnit)>,
    pool: PooledConvBn,
    pool_spike: SpikeUnit,
    out_channels: usize,
}

pub struct AsppSpikes {
    pub branch: [SpikeUnit; 4],
    pub pool: SpikeUnit,
}

impl SpikingAspp {
    pub fn build(
        c_in: usize,
        branch_channels: usize,
        spikes: AsppSpikes,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut branches = Vec::with_capacity(4);
        let mut units = spikes.branch.into_iter();
        branches.push((
            ConvBn::new("aspp.b0", c_in, branch_channels, 1, 1, 1, 0, Domain::Binary, rng),
            units.next().unwrap(),
        ));
        for (i, d) in [6usize, 12, 18].iter().enumerate() {
            branches.push((
                ConvBn::same(
                    format!("aspp.b{}", i + 1),
                    c_in,
                    branch_channels,
                    3,
                    *d,
                    Domain::Binary,
                    rng,
                ),
                units.next().unwrap(),
            ));
        }
        let pool = PooledConvBn {
            inner: ConvBn::new("aspp.pool", c_in, branch_channels, 1, 1, 1, 0, Domain::Binary, rng),
        };
        SpikingAspp {
            branches,
            pool,
            pool_spike: spikes.pool,
            out_channels: branch_channels * 5,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn forward(
        &self,
        x: &Tensor,
        states: &mut StateBundle,
        ctx: &mut ForwardCtx,
    ) -> Result<Tensor> {
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let mut outs = Vec::with_capacity(5);
        for (conv, spike) in &self.branches {
            let z = conv.forward(x, ctx)?;
            outs.push(spike.forward(&z, states, ctx)?);
        }
        let pooled = self.pool.forward(x, ctx)?;
        let s = self.pool_spike.forward(&pooled, states, ctx)?;
        outs.push(tile_to(&s, h, w)?);
        let refs: Vec<&Tensor> = outs.iter().collect();
        concat_channels(&refs)
    }

    pub fn conv_units(&self) -> Vec<&ConvBn> {
        let mut v: Vec<&ConvBn> = self.branches.iter().map(|(c, _)| c).collect();
        v.push(&self.pool.inner);
        v
    }

    pub fn spike_units(&self) -> Vec<&SpikeUnit> {
        let mut v: Vec<&SpikeUnit> = self.branches.iter().map(|(_, s)| s).collect();
        v.push(&self.pool_spike);
        v
    }
}
