//! The SpikingEDN topology: stems (or SSAM), genotype-instantiated encoder
//! cells over the resolution trellis, spiking ASPP, and decoder, assembled
//! into a time-stepped forward map with per-stream neuron state.

mod aspp;
mod cell;
mod decoder;
pub mod layers;
mod ssam;

pub use aspp::{AsppSpikes, SpikingAspp};
pub use cell::{Cell, CellNode, EdgeOp, Preprocess};
pub use layers::{ConvBn, Domain, ForwardCtx, PooledConvBn, RunRecorder, SpikeUnit, StateBundle};
pub use ssam::{SsamBuildSpec, SsamModule, UpperVariant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::events::StackSequence;
use crate::io::{Checkpoint, NamedTensor};
use crate::neuron::{NeuronConfig, Placement};
use crate::search::{Genotype, BASE_RATE};
use crate::tensor::{concat_channels, Elem, Param, Tensor};

/// How augmented input reaches the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugMode {
    /// Events only through the plain stems.
    None,
    /// Intensity image appended as an extra input channel (no SSAM).
    ImageChannel,
    /// SSAM stem with the image on the upper path.
    SsamImage,
    /// SSAM stem with the collapsed event stack on the upper path.
    SsamEvents,
}

impl AugMode {
    pub fn name(&self) -> &'static str {
        match self {
            AugMode::None => "none",
            AugMode::ImageChannel => "image-channel",
            AugMode::SsamImage => "ssam-image",
            AugMode::SsamEvents => "ssam-events",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AugMode::None),
            "image-channel" => Ok(AugMode::ImageChannel),
            "ssam-image" => Ok(AugMode::SsamImage),
            "ssam-events" => Ok(AugMode::SsamEvents),
            other => Err(Error::Config(format!("unknown aug mode '{other}'"))),
        }
    }

    pub fn uses_ssam(&self) -> bool {
        matches!(self, AugMode::SsamImage | AugMode::SsamEvents)
    }

    pub fn needs_image(&self) -> bool {
        matches!(self, AugMode::ImageChannel | AugMode::SsamImage)
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    /// SBT frames per stack (event input channels).
    pub event_channels: usize,
    pub classes: usize,
    pub stem_channels: usize,
    /// Width of one cell node at the base trellis level; doubles per level.
    pub node_channels: usize,
    pub aspp_channels: usize,
    pub decoder_channels: usize,
    pub placement: Placement,
    /// Base neuron parameters; adaptive units keep `beta`, plain LIF units
    /// run with `beta = 0`.
    pub neuron: NeuronConfig,
    pub aug: AugMode,
    pub ssam_variant: UpperVariant,
    pub ssam_multiplicative: bool,
    /// When set, the genotype must have exactly this many layers.
    pub expected_layers: Option<usize>,
    /// Weight-initialization seed.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            event_channels: 5,
            classes: 3,
            stem_channels: 64,
            node_channels: 16,
            aspp_channels: 24,
            decoder_channels: 24,
            placement: Placement::FirstLayerAiLif,
            neuron: NeuronConfig { beta: 0.07, ..NeuronConfig::default() },
            aug: AugMode::None,
            ssam_variant: UpperVariant::S3,
            ssam_multiplicative: false,
            expected_layers: None,
            seed: 0,
        }
    }
}

struct Builder {
    placement: Placement,
    neuron: NeuronConfig,
    state_slots: usize,
}

impl Builder {
    fn spike(&mut self, name: &str, first_candidate: bool) -> SpikeUnit {
        let adaptive = match self.placement {
            Placement::AllAiLif => true,
            Placement::AllLif => false,
            Placement::FirstLayerAiLif => first_candidate,
        };
        let cfg = if adaptive && self.neuron.beta != 0.0 {
            self.neuron.clone()
        } else {
            NeuronConfig { beta: 0.0, ..self.neuron.clone() }
        };
        let ix = self.state_slots;
        self.state_slots += 1;
        SpikeUnit::new(name, ix, cfg)
    }
}

/// The assembled network. Parameters are shared handles; neuron state lives
/// in per-stream [`StateBundle`]s so one model can serve many streams.
pub struct SpikingEdn {
    pub cfg: ModelConfig,
    pub genotype: Genotype,
    stem1: Option<(ConvBn, SpikeUnit)>,
    ssam: Option<SsamModule>,
    stem2: (ConvBn, SpikeUnit),
    cells: Vec<Cell>,
    aspp: SpikingAspp,
    decoder: Decoder,
    state_slots: usize,
}

use decoder::Decoder;

/// Node width at a trellis rate: the base width doubled per level.
fn node_width(base: usize, rate: u32) -> usize {
    base * (rate / BASE_RATE) as usize
}

/// Builds a deterministic module graph from a validated genotype.
pub fn build_from_genotype(genotype: &Genotype, cfg: &ModelConfig) -> Result<SpikingEdn> {
    genotype.validate()?;
    if let Some(expect) = cfg.expected_layers {
        if genotype.layers() != expect {
            return Err(Error::Config(format!(
                "genotype has {} layers but the model expects {expect}",
                genotype.layers()
            )));
        }
    }
    if cfg.ssam_multiplicative && !cfg.aug.uses_ssam() {
        return Err(Error::Config("multiplicative SSAM requires an SSAM aug mode".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut b = Builder {
        placement: cfg.placement,
        neuron: cfg.neuron.clone(),
        state_slots: 0,
    };

    let in_channels = cfg.event_channels
        + if cfg.aug == AugMode::ImageChannel { 1 } else { 0 };
    let (stem1, ssam) = if cfg.aug.uses_ssam() {
        let upper_spike = match cfg.ssam_variant {
            UpperVariant::S1 => None,
            _ => Some(b.spike("ssam.upper.spike", false)),
        };
        // the adaptive neuron sits on the SSAM's final spiking layer
        let fuse = b.spike("ssam.spike", true);
        let module = SsamModule::build(
            &SsamBuildSpec {
                event_channels: cfg.event_channels,
                out_channels: cfg.stem_channels,
                variant: cfg.ssam_variant,
                multiplicative: cfg.ssam_multiplicative,
            },
            fuse,
            upper_spike,
            &mut rng,
        )?;
        (None, Some(module))
    } else {
        let conv = ConvBn::new(
            "stem1.conv",
            in_channels,
            cfg.stem_channels,
            5,
            1,
            1,
            2,
            Domain::Real,
            &mut rng,
        );
        let spike = b.spike("stem1.spike", true);
        (Some((conv, spike)), None)
    };

    let stem2 = (
        ConvBn::new(
            "stem2.conv",
            cfg.stem_channels,
            cfg.stem_channels,
            5,
            4,
            1,
            2,
            Domain::Binary,
            &mut rng,
        ),
        b.spike("stem2.spike", false),
    );

    // tap history: (cumulative rate, channels); stem1 is full resolution
    let mut history: Vec<(u32, usize)> = vec![(1, cfg.stem_channels), (BASE_RATE, cfg.stem_channels)];
    let mut cells = Vec::with_capacity(genotype.layers());
    for (l, cell_edges) in genotype.edges.iter().enumerate() {
        let rate = genotype.path[l];
        let width = node_width(cfg.node_channels, rate);
        let (r_prev, c_prev) = history[history.len() - 1];
        let (r_pp, c_pp) = history[history.len() - 2];
        let pre0 = Preprocess::build(
            &format!("enc.l{l}.pre0"),
            c_prev,
            width,
            r_prev,
            rate,
            b.spike(&format!("enc.l{l}.pre0.spike"), false),
            &mut rng,
        );
        let pre1 = Preprocess::build(
            &format!("enc.l{l}.pre1"),
            c_pp,
            width,
            r_pp,
            rate,
            b.spike(&format!("enc.l{l}.pre1.spike"), false),
            &mut rng,
        );
        let nodes = cell_edges
            .iter()
            .enumerate()
            .map(|(n, taps)| CellNode {
                edges: [
                    EdgeOp::build(&format!("enc.l{l}.n{n}.e0"), taps[0], width, &mut rng),
                    EdgeOp::build(&format!("enc.l{l}.n{n}.e1"), taps[1], width, &mut rng),
                ],
                spike: b.spike(&format!("enc.l{l}.n{n}.spike"), false),
            })
            .collect();
        cells.push(Cell { pre: [pre0, pre1], nodes });
        history.push((rate, 3 * width));
    }

    let (final_rate, enc_channels) = *history.last().expect("at least one layer");
    let aspp = SpikingAspp::build(
        enc_channels,
        cfg.aspp_channels,
        AsppSpikes {
            branch: [
                b.spike("aspp.b0.spike", false),
                b.spike("aspp.b1.spike", false),
                b.spike("aspp.b2.spike", false),
                b.spike("aspp.b3.spike", false),
            ],
            pool: b.spike("aspp.pool.spike", false),
        },
        &mut rng,
    );
    let decoder = Decoder::build(
        aspp.out_channels(),
        cfg.decoder_channels,
        cfg.classes,
        final_rate as usize,
        [
            b.spike("dec.c0.spike", false),
            b.spike("dec.c1.spike", false),
            b.spike("dec.c2.spike", false),
        ],
        &mut rng,
    );

    Ok(SpikingEdn {
        cfg: cfg.clone(),
        genotype: genotype.clone(),
        stem1,
        ssam,
        stem2,
        cells,
        aspp,
        decoder,
        state_slots: b.state_slots,
    })
}

impl SpikingEdn {
    /// Fresh per-stream neuron state.
    pub fn new_states(&self) -> StateBundle {
        StateBundle::new(self.state_slots)
    }

    /// Sums the event channels into the 1-channel coarse frame used as the
    /// event-augmented SSAM upper input.
    fn collapse_channels(x: &Tensor) -> Tensor {
        let s = x.shape();
        let (bsz, c, h, w) = (s[0], s[1], s[2], s[3]);
        let plane = h * w;
        let mut data = vec![0.0; bsz * plane];
        for b in 0..bsz {
            for ch in 0..c {
                let src = (b * c + ch) * plane;
                for i in 0..plane {
                    data[b * plane + i] += x.data()[src + i];
                }
            }
        }
        Tensor::from_vec(&[bsz, 1, h, w], data).expect("collapse shape")
    }

    /// One segmentation step: stack input `[B, n, H, W]`, optional
    /// augmented input `[B, 1, H, W]`, carried neuron states. Returns class
    /// scores `[B, classes, H, W]`; all inter-layer traffic is binary
    /// except the declared first-layer inputs and the final output.
    pub fn forward_step(
        &self,
        stack: &Tensor,
        aug: Option<&Tensor>,
        states: &mut StateBundle,
        ctx: &mut ForwardCtx,
    ) -> Result<Tensor> {
        let s = stack.shape();
        if s.len() != 4 || s[1] != self.cfg.event_channels {
            return Err(Error::Shape(format!(
                "forward_step: expected [B,{},H,W] stack, got {:?}",
                self.cfg.event_channels, s
            )));
        }
        let (h, w) = (s[2], s[3]);
        let final_rate = *self.genotype.path.last().unwrap() as usize;
        if h % final_rate != 0 || w % final_rate != 0 {
            return Err(Error::Shape(format!(
                "forward_step: {h}x{w} input not divisible by downsample rate {final_rate}"
            )));
        }
        if let Some(a) = aug {
            let a_s = a.shape();
            if a_s != [s[0], 1, h, w] {
                return Err(Error::Shape(format!(
                    "forward_step: aug input {:?} does not match [B,1,{h},{w}]",
                    a_s
                )));
            }
        }
        match self.cfg.aug {
            AugMode::None | AugMode::SsamEvents => {
                if aug.is_some() {
                    return Err(Error::Config(format!(
                        "aug mode '{}' does not take an aug input",
                        self.cfg.aug.name()
                    )));
                }
            }
            AugMode::ImageChannel | AugMode::SsamImage => {
                if aug.is_none() {
                    return Err(Error::Config(format!(
                        "aug mode '{}' requires an aug input",
                        self.cfg.aug.name()
                    )));
                }
            }
        }

        let s1 = match (&self.stem1, &self.ssam) {
            (Some((conv, spike)), None) => {
                let x = match self.cfg.aug {
                    AugMode::ImageChannel => concat_channels(&[stack, aug.unwrap()])?,
                    _ => stack.clone(),
                };
                let z = conv.forward(&x, ctx)?;
                spike.forward(&z, states, ctx)?
            }
            (None, Some(ssam)) => {
                let upper = match self.cfg.aug {
                    AugMode::SsamImage => aug.unwrap().clone(),
                    AugMode::SsamEvents => Self::collapse_channels(stack),
                    _ => unreachable!("ssam present only in ssam aug modes"),
                };
                ssam.forward(stack, &upper, states, ctx)?
            }
            _ => unreachable!("exactly one of stem1/ssam is built"),
        };

        let z2 = self.stem2.0.forward(&s1, ctx)?;
        let s2 = self.stem2.1.forward(&z2, states, ctx)?;

        let mut prev_prev = s1;
        let mut prev = s2;
        for cell in &self.cells {
            let out = cell.forward((&prev, &prev_prev), states, ctx)?;
            prev_prev = prev;
            prev = out;
        }

        let pyramid = self.aspp.forward(&prev, states, ctx)?;
        let scores = self.decoder.forward(&pyramid, states, ctx)?;
        debug_assert_eq!(&scores.shape()[2..], &[h, w]);
        if let Some(rec) = ctx.recorder.as_deref_mut() {
            rec.steps += 1;
        }
        Ok(scores)
    }

    pub fn conv_units(&self) -> Vec<&ConvBn> {
        let mut v = Vec::new();
        if let Some((c, _)) = &self.stem1 {
            v.push(c);
        }
        if let Some(ssam) = &self.ssam {
            v.extend(ssam.conv_units());
        }
        v.push(&self.stem2.0);
        for cell in &self.cells {
            v.extend(cell.conv_units());
        }
        v.extend(self.aspp.conv_units());
        v.extend(self.decoder.conv_units());
        v
    }

    pub fn spike_units(&self) -> Vec<&SpikeUnit> {
        let mut v = Vec::new();
        if let Some((_, s)) = &self.stem1 {
            v.push(s);
        }
        if let Some(ssam) = &self.ssam {
            v.extend(ssam.spike_units());
        }
        v.push(&self.stem2.1);
        for cell in &self.cells {
            v.extend(cell.spike_units());
        }
        v.extend(self.aspp.spike_units());
        v.extend(self.decoder.spike_units());
        v
    }

    /// The spiking unit carrying the adaptive neuron when placement is
    /// first-layer (the stem1 spike, or the SSAM fusion spike).
    pub fn first_spike(&self) -> &SpikeUnit {
        match (&self.stem1, &self.ssam) {
            (Some((_, s)), None) => s,
            (None, Some(ssam)) => &ssam.fuse_spike,
            _ => unreachable!(),
        }
    }

    /// Trainable parameters in deterministic order.
    pub fn parameters(&self) -> Vec<Param> {
        let mut out = Vec::new();
        for c in self.conv_units() {
            c.params(&mut out);
        }
        for s in self.spike_units() {
            s.params(&mut out);
        }
        out
    }

    /// Post-step clamp constraints (trainable adaptation decays).
    pub fn constraints(&self) -> Vec<(Param, Elem, Elem)> {
        self.spike_units().iter().filter_map(|s| s.constraint()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|p| p.value().len()).sum()
    }

    /// Switches every batch norm to inference statistics.
    pub fn finalize_bn(&self) {
        use crate::tensor::BnMode;
        for c in self.conv_units() {
            if let Some(bn) = &c.bn {
                bn.set_mode(BnMode::Infer);
            }
        }
    }

    /// Folds all batch norms into their convolutions (inference only).
    pub fn fold(&self) -> Result<()> {
        self.finalize_bn();
        for c in self.conv_units() {
            c.fold()?;
        }
        Ok(())
    }

    pub fn unfold(&self) {
        for c in self.conv_units() {
            c.unfold();
        }
    }

    pub fn is_folded(&self) -> bool {
        self.conv_units().iter().all(|c| c.is_folded())
    }

    /// All persistent tensors (parameters plus batch-norm running stats).
    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        let mut out: Vec<NamedTensor> = self
            .parameters()
            .iter()
            .map(|p| {
                let v = p.value();
                NamedTensor {
                    name: p.name().to_string(),
                    shape: v.shape().to_vec(),
                    data: v.data().to_vec(),
                }
            })
            .collect();
        for c in self.conv_units() {
            if let Some(bn) = &c.bn {
                out.push(NamedTensor {
                    name: format!("{}.bn.running_mean", c.name),
                    shape: vec![bn.channels()],
                    data: bn.running_mean(),
                });
                out.push(NamedTensor {
                    name: format!("{}.bn.running_var", c.name),
                    shape: vec![bn.channels()],
                    data: bn.running_var(),
                });
            }
        }
        out
    }

    /// Restores every parameter and running stat from a checkpoint;
    /// requires an exact name/shape match in both directions.
    pub fn load_state(&self, ckpt: &Checkpoint) -> Result<()> {
        let mine = self.named_tensors();
        if mine.len() != ckpt.tensors.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors, model needs {}",
                ckpt.tensors.len(),
                mine.len()
            )));
        }
        for want in &mine {
            let got = ckpt.tensor(&want.name).ok_or_else(|| {
                Error::Config(format!("checkpoint missing tensor '{}'", want.name))
            })?;
            if got.shape != want.shape {
                return Err(Error::Config(format!(
                    "tensor '{}': checkpoint shape {:?} vs model {:?}",
                    want.name, got.shape, want.shape
                )));
            }
        }
        for p in self.parameters() {
            let got = ckpt.tensor(p.name()).expect("verified above");
            p.set_data(got.data.clone());
        }
        for c in self.conv_units() {
            if let Some(bn) = &c.bn {
                let rm = ckpt.tensor(&format!("{}.bn.running_mean", c.name)).expect("verified");
                let rv = ckpt.tensor(&format!("{}.bn.running_var", c.name)).expect("verified");
                bn.set_running_stats(rm.data.clone(), rv.data.clone());
            }
        }
        Ok(())
    }
}

/// Assembles the step-`t` batched input tensors from a set of sequences.
/// Sequences must share shapes; `aug` is produced according to the model's
/// aug mode (images for image modes, nothing for events-only modes).
pub fn batch_step_inputs(
    seqs: &[&StackSequence],
    t: usize,
    aug: AugMode,
) -> Result<(Tensor, Option<Tensor>)> {
    if seqs.is_empty() {
        return Err(Error::Data("batch_step_inputs: no sequences".into()));
    }
    let first = &seqs[0].stacks[t];
    let (n, h, w) = (first.n, first.height, first.width);
    let mut data = Vec::with_capacity(seqs.len() * n * h * w);
    for s in seqs {
        let st = &s.stacks[t];
        if st.n != n || st.height != h || st.width != w {
            return Err(Error::Shape("batch_step_inputs: mixed stack shapes".into()));
        }
        data.extend(st.to_elems());
    }
    let stack = Tensor::from_vec(&[seqs.len(), n, h, w], data)?;
    let aug_tensor = if aug.needs_image() {
        let mut adata = Vec::with_capacity(seqs.len() * h * w);
        for s in seqs {
            let imgs = s.aug.as_ref().ok_or_else(|| {
                Error::Config(format!(
                    "aug mode '{}' requires image channels but the sequence has none",
                    aug.name()
                ))
            })?;
            adata.extend(imgs[t].to_elems());
        }
        Some(Tensor::from_vec(&[seqs.len(), 1, h, w], adata)?)
    } else {
        None
    };
    Ok((stack, aug_tensor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::OpKind;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            stem_channels: 8,
            node_channels: 4,
            aspp_channels: 4,
            decoder_channels: 6,
            classes: 3,
            seed: 9,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn minimal_genotype_builds_and_runs() {
        let g = Genotype::uniform(2, 3, OpKind::Conv3);
        let model = build_from_genotype(&g, &tiny_cfg()).unwrap();
        assert!(model.param_count() > 0);
        let mut states = model.new_states();
        let x = Tensor::zeros(&[1, 5, 32, 32]);
        let mut ctx = ForwardCtx::train();
        let y = model.forward_step(&x, None, &mut states, &mut ctx).unwrap();
        assert_eq!(y.shape(), &[1, 3, 32, 32]);
    }

    #[test]
    fn output_shape_for_64x64_six_classes() {
        let g = Genotype::uniform(2, 3, OpKind::Conv3);
        let cfg = ModelConfig { classes: 6, ..tiny_cfg() };
        let model = build_from_genotype(&g, &cfg).unwrap();
        let mut states = model.new_states();
        let x = Tensor::zeros(&[2, 5, 64, 64]);
        let y = model.forward_step(&x, None, &mut states, &mut ForwardCtx::train()).unwrap();
        assert_eq!(y.shape(), &[2, 6, 64, 64]);
    }

    #[test]
    fn deterministic_build() {
        let g = Genotype::uniform(3, 3, OpKind::Conv5);
        let m1 = build_from_genotype(&g, &tiny_cfg()).unwrap();
        let m2 = build_from_genotype(&g, &tiny_cfg()).unwrap();
        assert_eq!(m1.param_count(), m2.param_count());
        for (a, b) in m1.parameters().iter().zip(m2.parameters().iter()) {
            assert_eq!(a.name(), b.name());
            assert_eq!(a.value().data(), b.value().data());
        }
    }

    #[test]
    fn layer_count_mismatch_rejected() {
        let g = Genotype::uniform(2, 3, OpKind::Conv3);
        let cfg = ModelConfig { expected_layers: Some(6), ..tiny_cfg() };
        assert!(build_from_genotype(&g, &cfg).is_err());
    }

    #[test]
    fn paper_shaped_genotype_parameter_tally() {
        // 6 layers descending the trellis: rates 4,8,8,16,16,32
        let mut g = Genotype::uniform(6, 3, OpKind::Conv3);
        g.path = vec![4, 8, 8, 16, 16, 32];
        let cfg = tiny_cfg();
        let model = build_from_genotype(&g, &cfg).unwrap();

        // hand tally of one known piece: stem1 is 5x5x5 -> 8 plus BN(8)
        let stem1 = 5 * 5 * 5 * 8 + 2 * 8;
        let params = model.param_count();
        assert!(params > stem1);
        // analytic full tally must be within 20% of the reported count
        let mut hand: usize = 0;
        hand += stem1;
        hand += 5 * 5 * 8 * 8 + 2 * 8; // stem2
        let mut widths = vec![(1u32, 8usize), (4u32, 8usize)];
        for l in 0..6 {
            let rate = g.path[l];
            let w = cfg.node_channels * (rate / 4) as usize;
            let (_, c_prev) = widths[widths.len() - 1];
            let (_, c_pp) = widths[widths.len() - 2];
            hand += c_prev * w + 2 * w; // pre0 1x1 + bn
            hand += c_pp * w + 2 * w; // pre1
            hand += 3 * 2 * (3 * 3 * w * w + 2 * w); // six conv3 edges + bn
            widths.push((rate, 3 * w));
        }
        let enc_c = widths.last().unwrap().1;
        hand += enc_c * 4 + 2 * 4; // aspp 1x1
        hand += 3 * (3 * 3 * enc_c * 4 + 2 * 4); // dilated branches
        hand += enc_c * 4 + 2 * 4; // pool branch
        hand += 3 * 3 * 20 * 6 + 2 * 6; // dec.c0 from 5*4=20 channels
        hand += 3 * 3 * 6 * 6 + 2 * 6; // dec.c1
        hand += 3 * 3 * 6 * 3 + 2 * 3; // dec.c2 -> classes
        hand += 1; // first-layer tau_a
        let ratio = params as f64 / hand as f64;
        assert!((0.8..1.2).contains(&ratio), "params {params} vs hand {hand}");
    }

    #[test]
    fn zero_input_zero_state_spikes_silent() {
        // bias-free build: all-zero input keeps every spiking layer silent,
        // logits equal the decoder's response to an all-zero spike map
        let g = Genotype::uniform(2, 3, OpKind::Conv3);
        let model = build_from_genotype(&g, &tiny_cfg()).unwrap();
        let mut states = model.new_states();
        let x = Tensor::zeros(&[1, 5, 32, 32]);
        let mut rec = RunRecorder::new();
        let mut ctx = ForwardCtx {
            mode: crate::tensor::BnMode::Infer,
            relaxed: false,
            audit_binary: true,
            recorder: Some(&mut rec),
        };
        model.forward_step(&x, None, &mut states, &mut ctx).unwrap();
        for (_, acc) in rec.spikes.iter() {
            assert_eq!(acc.mean_rate(), 0.0);
        }
    }

    #[test]
    fn binary_traffic_audit_passes_on_random_input() {
        use rand::Rng;
        let g = Genotype::uniform(2, 3, OpKind::Conv3);
        let model = build_from_genotype(&g, &tiny_cfg()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<Elem> = (0..5 * 32 * 32).map(|_| rng.gen_range(-3..4) as Elem).collect();
        let x = Tensor::from_vec(&[1, 5, 32, 32], data).unwrap();
        let mut states = model.new_states();
        let mut ctx = ForwardCtx::train();
        ctx.audit_binary = true;
        // two steps: state carry must preserve binarity too
        model.forward_step(&x, None, &mut states, &mut ctx).unwrap();
        model.forward_step(&x, None, &mut states, &mut ctx).unwrap();
    }

    #[test]
    fn aug_mode_contract_enforced() {
        let g = Genotype::uniform(2, 3, OpKind::Conv3);
        let cfg = ModelConfig { aug: AugMode::SsamImage, ..tiny_cfg() };
        let model = build_from_genotype(&g, &cfg).unwrap();
        let mut states = model.new_states();
        let x = Tensor::zeros(&[1, 5, 32, 32]);
        // missing aug input is a config error
        let err = model.forward_step(&x, None, &mut states, &mut ForwardCtx::train());
        assert!(matches!(err, Err(Error::Config(_))));
        let aug = Tensor::zeros(&[1, 1, 32, 32]);
        model
            .forward_step(&x, Some(&aug), &mut states, &mut ForwardCtx::train())
            .unwrap();
    }

    #[test]
    fn ssam_event_augmented_mode_runs() {
        let g = Genotype::uniform(2, 3, OpKind::Conv3);
        let cfg = ModelConfig { aug: AugMode::SsamEvents, ..tiny_cfg() };
        let model = build_from_genotype(&g, &cfg).unwrap();
        let mut states = model.new_states();
        let x = Tensor::full(&[1, 5, 32, 32], 1.0);
        let y = model.forward_step(&x, None, &mut states, &mut ForwardCtx::train()).unwrap();
        assert_eq!(y.shape(), &[1, 3, 32, 32]);
        // first spike is the SSAM fusion unit and is adaptive by default
        assert!(model.first_spike().cfg.is_adaptive());
        assert!(model.first_spike().name.contains("ssam"));
    }
}
