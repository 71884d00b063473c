//! Spiking Spatially-Adaptive Modulation: a dual-path stem replacement.
//!
//! The lower path normalizes the conv-extracted event feature; the upper
//! path turns the augmented input (image or coarse event frame) into an
//! additive modulation map. Fusion is normalize-then-add followed by a
//! spiking activation, keeping the module multiplication-free. The
//! multiplicative variant adds a learned per-element gamma product and is
//! deliberately not MFI-compatible.

use rand_chacha::ChaCha8Rng;

use super::layers::{ConvBn, Domain, ForwardCtx, SpikeUnit, StateBundle};
use crate::error::{Error, Result};
use crate::tensor::{add, concat_channels, mul, Tensor};

/// Upper-path body variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpperVariant {
    /// Single convolution.
    S1,
    /// Parallel dilated convs, spike, then another convolution.
    S2,
    /// Convolution + BN, spike, then parallel dilated convs (default).
    S3,
}

impl UpperVariant {
    pub fn name(&self) -> &'static str {
        match self {
            UpperVariant::S1 => "s1",
            UpperVariant::S2 => "s2",
            UpperVariant::S3 => "s3",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "s1" => Ok(UpperVariant::S1),
            "s2" => Ok(UpperVariant::S2),
            "s3" => Ok(UpperVariant::S3),
            other => Err(Error::Config(format!("unknown SSAM upper-path variant '{other}'"))),
        }
    }
}

/// Parallel dilated 3x3 convolutions (rates 1,2,3,4) with concatenated
/// outputs; each branch produces `out/4` channels.
pub struct ParallelConv {
    pub branches: Vec<ConvBn>,
}

impl ParallelConv {
    fn build(
        name: &str,
        c_in: usize,
        c_out: usize,
        input_domain: Domain,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert_eq!(c_out % 4, 0, "parallel conv output channels must split into 4 branches");
        let branches = (1..=4)
            .map(|d| {
                ConvBn::same(format!("{name}.d{d}"), c_in, c_out / 4, 3, d, input_domain, rng)
                    .without_bn()
            })
            .collect();
        ParallelConv { branches }
    }

    fn forward(&self, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let outs: Vec<Tensor> =
            self.branches.iter().map(|b| b.forward(x, ctx)).collect::<Result<_>>()?;
        let refs: Vec<&Tensor> = outs.iter().collect();
        concat_channels(&refs)
    }
}

enum UpperPath {
    S1 { conv: ConvBn },
    S2 { parallel: ParallelConv, spike: SpikeUnit, conv: ConvBn },
    S3 { conv: ConvBn, spike: SpikeUnit, parallel: ParallelConv },
}

pub struct SsamModule {
    lower: ConvBn,
    upper: UpperPath,
    /// Multiplicative variant: learned gamma from the upper spikes.
    gamma_conv: Option<ConvBn>,
    pub fuse_spike: SpikeUnit,
    channels: usize,
}

pub struct SsamBuildSpec {
    pub event_channels: usize,
    pub out_channels: usize,
    pub variant: UpperVariant,
    pub multiplicative: bool,
}

impl SsamModule {
    pub fn build(
        spec: &SsamBuildSpec,
        fuse_spike: SpikeUnit,
        upper_spike: Option<SpikeUnit>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let ch = spec.out_channels;
        let lower =
            ConvBn::new("ssam.lower", spec.event_channels, ch, 1, 1, 1, 0, Domain::Real, rng);
        let upper = match spec.variant {
            UpperVariant::S1 => UpperPath::S1 {
                conv: ConvBn::same("ssam.upper.conv", 1, ch, 3, 1, Domain::Real, rng)
                    .without_bn(),
            },
            UpperVariant::S2 => UpperPath::S2 {
                parallel: ParallelConv::build("ssam.upper.par", 1, ch, Domain::Real, rng),
                spike: upper_spike.expect("S2 upper path needs a spike unit"),
                conv: ConvBn::same("ssam.upper.conv", ch, ch, 3, 1, Domain::Binary, rng)
                    .without_bn(),
            },
            UpperVariant::S3 => UpperPath::S3 {
                conv: ConvBn::same("ssam.upper.conv", 1, ch, 3, 1, Domain::Real, rng),
                spike: upper_spike.expect("S3 upper path needs a spike unit"),
                parallel: ParallelConv::build("ssam.upper.par", ch, ch, Domain::Binary, rng),
            },
        };
        let gamma_conv = if spec.multiplicative {
            if spec.variant != UpperVariant::S3 {
                return Err(Error::Config(
                    "multiplicative SSAM requires the S3 upper path (gamma taps its spikes)"
                        .into(),
                ));
            }
            Some(
                ConvBn::same("ssam.gamma.conv", ch, ch, 3, 1, Domain::Binary, rng).without_bn(),
            )
        } else {
            None
        };
        Ok(SsamModule { lower, upper, gamma_conv, fuse_spike, channels: ch })
    }

    pub fn out_channels(&self) -> usize {
        self.channels
    }

    /// `events` is the n-channel stack, `aug` the 1-channel augmented
    /// input. Output is a binary feature map at the input resolution.
    pub fn forward(
        &self,
        events: &Tensor,
        aug: &Tensor,
        states: &mut StateBundle,
        ctx: &mut ForwardCtx,
    ) -> Result<Tensor> {
        let normalized = self.lower.forward(events, ctx)?;
        let (modulation, upper_spikes) = match &self.upper {
            UpperPath::S1 { conv } => (conv.forward(aug, ctx)?, None),
            UpperPath::S2 { parallel, spike, conv } => {
                let z = parallel.forward(aug, ctx)?;
                let s = spike.forward(&z, states, ctx)?;
                (conv.forward(&s, ctx)?, Some(s))
            }
            UpperPath::S3 { conv, spike, parallel } => {
                let z = conv.forward(aug, ctx)?;
                let s = spike.forward(&z, states, ctx)?;
                (parallel.forward(&s, ctx)?, Some(s))
            }
        };
        let fused = match &self.gamma_conv {
            None => add(&normalized, &modulation),
            Some(gc) => {
                let spikes = upper_spikes.as_ref().expect("gamma requires upper spikes");
                let gamma = gc.forward(spikes, ctx)?;
                if let Some(rec) = ctx.recorder.as_deref_mut() {
                    rec.mult_sites.insert("ssam.gamma_mul".into(), gamma.len());
                }
                add(&mul(&gamma, &normalized), &modulation)
            }
        };
        self.fuse_spike.forward(&fused, states, ctx)
    }

    pub fn conv_units(&self) -> Vec<&ConvBn> {
        let mut v = vec![&self.lower];
        match &self.upper {
            UpperPath::S1 { conv } => v.push(conv),
            UpperPath::S2 { parallel, conv, .. } => {
                v.extend(parallel.branches.iter());
                v.push(conv);
            }
            UpperPath::S3 { conv, parallel, .. } => {
                v.push(conv);
                v.extend(parallel.branches.iter());
            }
        }
        if let Some(g) = &self.gamma_conv {
            v.push(g);
        }
        v
    }

    pub fn spike_units(&self) -> Vec<&SpikeUnit> {
        let mut v = Vec::new();
        match &self.upper {
            UpperPath::S1 { .. } => {}
            UpperPath::S2 { spike, .. } | UpperPath::S3 { spike, .. } => v.push(spike),
        }
        v.push(&self.fuse_spike);
        v
    }
}
