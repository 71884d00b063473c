//! Shared building blocks: spiking conv+BN units, neuron layers, forward
//! context with recording hooks, and per-stream neuron state bundles.

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::neuron::{lif_step, NeuronConfig, NeuronState};
use crate::tensor::{
    batch_norm, channel_bias, conv2d, fold_bn_into_conv, global_avg_pool, upsample_nearest2,
    BatchNorm, BnMode, Elem, Param, Tensor,
};

/// Value domain of a layer's input, used by the MFI accounting: binary
/// spike traffic drives additions only, real-valued inputs (raw events,
/// images) genuinely multiply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Binary,
    Real,
}

/// Accumulated per-conv-layer observations across recorded steps.
#[derive(Debug, Clone)]
pub struct ConvAccum {
    pub k: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h_out: usize,
    pub w_out: usize,
    /// For the pooled ASPP branch: presynaptic spatial extent of the pool.
    pub pool_hw: usize,
    pub input_real: bool,
    pub folded: bool,
    pub rate_sum: Elem,
    pub samples: usize,
}

impl ConvAccum {
    pub fn mean_rate(&self) -> Elem {
        if self.input_real {
            1.0
        } else if self.samples == 0 {
            0.0
        } else {
            self.rate_sum / self.samples as Elem
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SpikeAccum {
    pub rate_sum: Elem,
    pub samples: usize,
}

impl SpikeAccum {
    pub fn mean_rate(&self) -> Elem {
        if self.samples == 0 {
            0.0
        } else {
            self.rate_sum / self.samples as Elem
        }
    }
}

/// Collects layer geometry, firing rates, and (optionally) per-neuron spike
/// counts over a run.
#[derive(Debug, Default)]
pub struct RunRecorder {
    pub conv_order: Vec<String>,
    pub convs: BTreeMap<String, ConvAccum>,
    pub spike_order: Vec<String>,
    pub spikes: BTreeMap<String, SpikeAccum>,
    /// Final averaging upsample: (channels, h_out, w_out, taps) per step.
    pub upsample: Option<(usize, usize, usize, usize)>,
    /// Per-element multiplication sites outside convs (name, count/step),
    /// e.g. the learned gamma product of the multiplicative SSAM.
    pub mult_sites: BTreeMap<String, usize>,
    pub steps: usize,
    /// When set, accumulates per-neuron spike sums for histograms.
    pub per_neuron: Option<BTreeMap<String, Vec<Elem>>>,
}

impl RunRecorder {
    pub fn new() -> Self {
        RunRecorder::default()
    }

    pub fn with_per_neuron() -> Self {
        RunRecorder { per_neuron: Some(BTreeMap::new()), ..RunRecorder::default() }
    }

    fn record_conv(&mut self, name: &str, sample: ConvAccum) {
        match self.convs.get_mut(name) {
            Some(acc) => {
                acc.rate_sum += sample.rate_sum;
                acc.samples += 1;
                acc.folded = sample.folded;
            }
            None => {
                self.conv_order.push(name.to_string());
                self.convs.insert(name.to_string(), ConvAccum { samples: 1, ..sample });
            }
        }
    }

    fn record_spike(&mut self, name: &str, y: &Tensor) {
        let rate = y.mean_value();
        match self.spikes.get_mut(name) {
            Some(acc) => {
                acc.rate_sum += rate;
                acc.samples += 1;
            }
            None => {
                self.spike_order.push(name.to_string());
                self.spikes.insert(name.to_string(), SpikeAccum { rate_sum: rate, samples: 1 });
            }
        }
        if let Some(per) = self.per_neuron.as_mut() {
            let sums = per.entry(name.to_string()).or_insert_with(|| vec![0.0; y.len()]);
            if sums.len() == y.len() {
                for (s, v) in sums.iter_mut().zip(y.data()) {
                    *s += v;
                }
            }
        }
    }
}

/// Per-step forward context: BN mode, activation relaxation, audit and
/// recording hooks.
pub struct ForwardCtx<'a> {
    pub mode: BnMode,
    /// Smooth activations for finite-difference checks.
    pub relaxed: bool,
    /// Verify that declared-binary layer inputs are exactly {0,1}.
    pub audit_binary: bool,
    pub recorder: Option<&'a mut RunRecorder>,
}

impl<'a> ForwardCtx<'a> {
    pub fn train() -> Self {
        ForwardCtx { mode: BnMode::Train, relaxed: false, audit_binary: false, recorder: None }
    }

    pub fn infer() -> Self {
        ForwardCtx { mode: BnMode::Infer, relaxed: false, audit_binary: false, recorder: None }
    }

    pub fn recording(recorder: &'a mut RunRecorder) -> Self {
        ForwardCtx {
            mode: BnMode::Infer,
            relaxed: false,
            audit_binary: false,
            recorder: Some(recorder),
        }
    }
}

fn assert_binary(name: &str, x: &Tensor) -> Result<()> {
    for v in x.data() {
        if *v != 0.0 && *v != 1.0 {
            return Err(Error::State(format!(
                "binary-traffic audit: input of '{name}' contains {v}, expected {{0,1}}"
            )));
        }
    }
    Ok(())
}

/// Convolution with optional batch norm. Binary-input units are the MFI
/// workhorses; after folding, the BN disappears into the conv weights and a
/// per-channel bias.
pub struct ConvBn {
    pub name: String,
    pub weight: Param,
    pub bn: Option<BatchNorm>,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub input_domain: Domain,
    folded: Cell<bool>,
    folded_params: RefCell<Option<(Tensor, Tensor)>>,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        dilation: usize,
        padding: usize,
        input_domain: Domain,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let name = name.into();
        let fan_in = (c_in * k * k) as Elem;
        let bound = 1.0 / fan_in.sqrt();
        let data: Vec<Elem> =
            (0..c_out * c_in * k * k).map(|_| rng.gen_range(-bound..bound)).collect();
        let weight = Param::new(
            format!("{name}.weight"),
            Tensor::from_vec(&[c_out, c_in, k, k], data).unwrap(),
        );
        let bn = Some(BatchNorm::new(&format!("{name}.bn"), c_out));
        ConvBn {
            name,
            weight,
            bn,
            stride,
            dilation,
            padding,
            input_domain,
            folded: Cell::new(false),
            folded_params: RefCell::new(None),
        }
    }

    /// Bare convolution without normalization (SSAM upper-path bodies).
    pub fn without_bn(mut self) -> Self {
        self.bn = None;
        self
    }

    /// Same-size 3x3/5x5 unit: padding = dilation * (k-1) / 2.
    pub fn same(
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        k: usize,
        dilation: usize,
        input_domain: Domain,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        ConvBn::new(name, c_in, c_out, k, 1, dilation, dilation * (k - 1) / 2, input_domain, rng)
    }

    pub fn kernel(&self) -> usize {
        self.weight.value().shape()[3]
    }

    pub fn c_in(&self) -> usize {
        self.weight.value().shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.weight.value().shape()[0]
    }

    pub fn is_folded(&self) -> bool {
        // BN-less convs are MFI-ready as built
        self.bn.is_none() || self.folded.get()
    }

    pub fn fold(&self) -> Result<()> {
        if let Some(bn) = &self.bn {
            let (w, b) = fold_bn_into_conv(&self.weight.value(), None, bn)?;
            *self.folded_params.borrow_mut() = Some((w, b));
            self.folded.set(true);
        }
        Ok(())
    }

    pub fn unfold(&self) {
        self.folded.set(false);
        *self.folded_params.borrow_mut() = None;
    }

    pub fn forward(&self, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        if ctx.audit_binary && self.input_domain == Domain::Binary {
            assert_binary(&self.name, x)?;
        }
        let folded = self.folded.get();
        let out = if folded {
            let guard = self.folded_params.borrow();
            let (w, b) = guard.as_ref().expect("folded params present");
            channel_bias(&conv2d(x, w, self.stride, self.dilation, self.padding)?, b)
        } else {
            let z = conv2d(x, &self.weight.value(), self.stride, self.dilation, self.padding)?;
            match &self.bn {
                Some(bn) => batch_norm(&z, bn, ctx.mode)?,
                None => z,
            }
        };
        if let Some(rec) = ctx.recorder.as_deref_mut() {
            let rate = match self.input_domain {
                Domain::Binary => x.mean_value(),
                Domain::Real => 1.0,
            };
            rec.record_conv(
                &self.name,
                ConvAccum {
                    k: self.kernel(),
                    c_in: self.c_in(),
                    c_out: self.c_out(),
                    h_out: out.shape()[2],
                    w_out: out.shape()[3],
                    pool_hw: 0,
                    input_real: self.input_domain == Domain::Real,
                    folded: self.is_folded(),
                    rate_sum: rate,
                    samples: 0,
                },
            );
        }
        Ok(out)
    }

    pub fn params(&self, out: &mut Vec<Param>) {
        out.push(self.weight.clone());
        if let Some(bn) = &self.bn {
            out.push(bn.gamma.clone());
            out.push(bn.beta.clone());
        }
    }
}

/// Global-average-pool followed by a 1x1 conv+BN (the fifth ASPP branch).
/// In event-driven form each presynaptic spike adds a constant scaled
/// weight, so the composite stays addition-only on binary inputs; the
/// ledger books it with the pool extent folded into the add count.
pub struct PooledConvBn {
    pub inner: ConvBn,
}

impl PooledConvBn {
    pub fn forward(&self, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        if ctx.audit_binary {
            assert_binary(&self.inner.name, x)?;
        }
        let pool_hw = x.shape()[2] * x.shape()[3];
        let rate = x.mean_value();
        let pooled = global_avg_pool(x);
        // record with the pre-pool rate and pool extent
        let mut sub = ForwardCtx {
            mode: ctx.mode,
            relaxed: ctx.relaxed,
            audit_binary: false,
            recorder: None,
        };
        let out = self.inner.forward(&pooled, &mut sub)?;
        if let Some(rec) = ctx.recorder.as_deref_mut() {
            rec.record_conv(
                &self.inner.name,
                ConvAccum {
                    k: 1,
                    c_in: self.inner.c_in(),
                    c_out: self.inner.c_out(),
                    h_out: 1,
                    w_out: 1,
                    pool_hw,
                    input_real: false,
                    folded: self.inner.is_folded(),
                    rate_sum: rate,
                    samples: 0,
                },
            );
        }
        Ok(out)
    }
}

/// Nearest-neighbour upsample of a binary map back to a target spatial
/// size (used by the pooled ASPP branch, whose input is 1x1).
pub fn tile_to(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (ih, iw) = (x.shape()[2], x.shape()[3]);
    if h % ih != 0 || w % iw != 0 {
        return Err(Error::Shape(format!(
            "tile_to: cannot nearest-upsample {ih}x{iw} to {h}x{w}"
        )));
    }
    Ok(upsample_nearest2(x, h / ih, w / iw))
}

/// One spiking neuron layer: owns its configuration and (when adaptive) a
/// trainable adaptation decay. State lives in the per-stream bundle.
pub struct SpikeUnit {
    pub name: String,
    pub state_ix: usize,
    pub cfg: NeuronConfig,
    pub tau_a: Option<Param>,
}

impl SpikeUnit {
    pub fn new(name: impl Into<String>, state_ix: usize, cfg: NeuronConfig) -> Self {
        let name = name.into();
        let tau_a = cfg.is_adaptive().then(|| {
            Param::new(format!("{name}.tau_a"), Tensor::from_vec(&[1], vec![cfg.tau_a]).unwrap())
        });
        SpikeUnit { name, state_ix, cfg, tau_a }
    }

    pub fn forward(
        &self,
        current: &Tensor,
        states: &mut StateBundle,
        ctx: &mut ForwardCtx,
    ) -> Result<Tensor> {
        let state = states.get_or_rest(self.state_ix, current.shape());
        let (y, next) = lif_step(&state, current, &self.cfg, self.tau_a.as_ref(), ctx.relaxed)
            .map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} (layer '{}')", self.name)),
                other => other,
            })?;
        states.set(self.state_ix, next);
        if let Some(rec) = ctx.recorder.as_deref_mut() {
            rec.record_spike(&self.name, &y);
        }
        Ok(y)
    }

    pub fn params(&self, out: &mut Vec<Param>) {
        if let Some(t) = &self.tau_a {
            out.push(t.clone());
        }
    }

    /// Clamp constraint for the trainable adaptation decay.
    pub fn constraint(&self) -> Option<(Param, Elem, Elem)> {
        self.tau_a
            .as_ref()
            .map(|p| (p.clone(), self.cfg.tau_a_clamp.0, self.cfg.tau_a_clamp.1))
    }
}

/// All neuron states of one stream, indexed by the unit's state slot.
pub struct StateBundle {
    states: Vec<Option<NeuronState>>,
}

impl StateBundle {
    pub fn new(slots: usize) -> Self {
        StateBundle { states: (0..slots).map(|_| None).collect() }
    }

    pub fn get_or_rest(&mut self, ix: usize, shape: &[usize]) -> NeuronState {
        self.states[ix].get_or_insert_with(|| NeuronState::rest(shape)).clone()
    }

    pub fn set(&mut self, ix: usize, s: NeuronState) {
        self.states[ix] = Some(s);
    }

    /// Detached copy for hand-off between sessions or sequence boundaries.
    pub fn snapshot(&self) -> StateBundle {
        StateBundle {
            states: self.states.iter().map(|s| s.as_ref().map(|x| x.snapshot())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}
