//! Decoder: three spiking conv+BN layers and a final averaging upsample
//! that turns binary class spikes into smooth floating-point score maps.

use rand_chacha::ChaCha8Rng;

use super::layers::{ConvBn, Domain, ForwardCtx, SpikeUnit, StateBundle};
use crate::error::Result;
use crate::tensor::{upsample_average, Tensor};

pub struct Decoder {
    convs: Vec<(ConvBn, SpikeUnit)>,
    pub upsample_factor: usize,
}

impl Decoder {
    pub fn build(
        c_in: usize,
        hidden: usize,
        classes: usize,
        upsample_factor: usize,
        spikes: [SpikeUnit; 3],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let widths = [(c_in, hidden), (hidden, hidden), (hidden, classes)];
        let convs = widths
            .iter()
            .zip(spikes)
            .enumerate()
            .map(|(i, (&(ci, co), spike))| {
                (ConvBn::same(format!("dec.c{i}"), ci, co, 3, 1, Domain::Binary, rng), spike)
            })
            .collect();
        Decoder { convs, upsample_factor }
    }

    /// Returns real-valued class scores at `upsample_factor` times the
    /// input resolution; everything before the upsample stays binary.
    pub fn forward(
        &self,
        x: &Tensor,
        states: &mut StateBundle,
        ctx: &mut ForwardCtx,
    ) -> Result<Tensor> {
        let mut h = x.clone();
        for (conv, spike) in &self.convs {
            let z = conv.forward(&h, ctx)?;
            h = spike.forward(&z, states, ctx)?;
        }
        let out = upsample_average(&h, self.upsample_factor);
        if let Some(rec) = ctx.recorder.as_deref_mut() {
            rec.upsample = Some((out.shape()[1], out.shape()[2], out.shape()[3], 4));
        }
        Ok(out)
    }

    pub fn conv_units(&self) -> Vec<&ConvBn> {
        self.convs.iter().map(|(c, _)| c).collect()
    }

    pub fn spike_units(&self) -> Vec<&SpikeUnit> {
        self.convs.iter().map(|(_, s)| s).collect()
    }
}
