//! Supervised training over continuous stack sequences: warm-up steps run
//! unsupervised, losses accumulate over the supervised steps, and
//! backpropagation-through-time spans the whole sequence. Gradients detach
//! at sequence boundaries (fresh rest state per sequence).

mod adam;
mod loss;

pub use adam::{poly_lr, Adam};
pub use loss::cross_entropy_loss;

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::{argmax_predictions, miou, ConfusionAccumulator};
use crate::events::{LabelGrid, StackSequence};
use crate::io::Checkpoint;
use crate::network::{batch_step_inputs, ForwardCtx, RunRecorder, SpikingEdn};
use crate::tensor::{backward, mean_of_scalars, Elem, NoGradGuard};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: Elem,
    pub adam_betas: (Elem, Elem),
    pub poly_power: Elem,
    pub seed: u64,
    /// Stacks per sequence; sequences passed to `train` must match.
    pub seq_len: usize,
    /// Unsupervised warm-up steps per sequence.
    pub warmup: usize,
    /// Optional global-norm gradient clip (diagnostics escape hatch).
    pub grad_clip: Option<Elem>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 2,
            lr: 1e-3,
            adam_betas: (0.9, 0.999),
            poly_power: 0.9,
            seed: 0,
            seq_len: 4,
            warmup: 1,
            grad_clip: None,
        }
    }
}

/// One newline-delimited metrics record.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: Option<Elem>,
    pub miou: Option<Elem>,
    pub mean_fr: Option<Elem>,
    pub lr: Elem,
}

impl fmt::Display for MetricsRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn opt(v: Option<Elem>) -> String {
            v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into())
        }
        write!(
            f,
            "epoch={} split={} loss={} miou={} mean_fr={} lr={:.6}",
            self.epoch,
            self.split,
            opt(self.loss),
            opt(self.miou),
            opt(self.mean_fr),
            self.lr
        )
    }
}

/// FNV-1a of the genotype text, recorded in checkpoints.
pub fn fnv1a64(text: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Metadata snapshot sufficient to resume bit-compatible training.
#[derive(Debug, Clone)]
pub struct CheckpointMeta {
    pub genotype_hash: u64,
    pub epoch: usize,
    pub seed: u64,
    pub val_miou: Option<Elem>,
}

impl CheckpointMeta {
    pub fn to_map(&self, model: &SpikingEdn) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("genotype_hash".into(), format!("{:016x}", self.genotype_hash));
        m.insert("epoch".into(), self.epoch.to_string());
        m.insert("seed".into(), self.seed.to_string());
        if let Some(v) = self.val_miou {
            m.insert("val_miou".into(), format!("{v:.6}"));
        }
        let n = &model.cfg.neuron;
        m.insert("neuron.u_th".into(), n.u_th.to_string());
        m.insert("neuron.tau".into(), n.tau.to_string());
        m.insert("neuron.beta".into(), n.beta.to_string());
        m.insert("neuron.tau_a".into(), n.tau_a.to_string());
        m.insert(
            "neuron.tau_a_clamp".into(),
            format!("{},{}", n.tau_a_clamp.0, n.tau_a_clamp.1),
        );
        m.insert("neuron.placement".into(), model.cfg.placement.name().into());
        m.insert("surrogate.family".into(), n.surrogate.family_name().into());
        m.insert("surrogate.temperature".into(), n.surrogate.temperature.to_string());
        m.insert("aug".into(), model.cfg.aug.name().into());
        m
    }
}

/// Assembles a checkpoint from the model's current state.
pub fn make_checkpoint(model: &SpikingEdn, meta: &CheckpointMeta) -> Checkpoint {
    Checkpoint {
        genotype: model.genotype.render(),
        meta: meta.to_map(model),
        tensors: model.named_tensors(),
    }
}

#[derive(Debug, Default)]
pub struct TrainReport {
    pub records: Vec<MetricsRecord>,
    pub history: Vec<CheckpointMeta>,
    pub best_miou: Elem,
}

impl TrainReport {
    pub fn render_log(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&r.to_string());
            s.push('\n');
        }
        s
    }
}

/// Inference over held-out sequences: fresh rest state per sequence,
/// predictions scored on the supervised steps only.
pub fn evaluate(
    model: &SpikingEdn,
    seqs: &[StackSequence],
    batch_size: usize,
) -> Result<(Elem, Vec<Elem>, ConfusionAccumulator)> {
    let _nograd = NoGradGuard::new();
    let mut acc = ConfusionAccumulator::new(model.cfg.classes);
    for chunk in seqs.chunks(batch_size.max(1)) {
        let refs: Vec<&StackSequence> = chunk.iter().collect();
        let mut states = model.new_states();
        let warmup = refs[0].warmup;
        for t in 0..refs[0].stacks.len() {
            let (stack, aug) = batch_step_inputs(&refs, t, model.cfg.aug)?;
            let mut ctx = ForwardCtx::infer();
            let scores = model.forward_step(&stack, aug.as_ref(), &mut states, &mut ctx)?;
            if t >= warmup {
                let preds = argmax_predictions(&scores);
                for (s, p) in refs.iter().zip(&preds) {
                    acc.update(&s.labels[t - warmup], p)?;
                }
            }
        }
    }
    let (mean, per_class) = miou(&acc)?;
    Ok((mean, per_class, acc))
}

fn check_sequences(seqs: &[StackSequence], cfg: &TrainConfig) -> Result<()> {
    if seqs.is_empty() {
        return Err(Error::Data("train: no sequences".into()));
    }
    for (i, s) in seqs.iter().enumerate() {
        if s.stacks.len() != cfg.seq_len || s.warmup != cfg.warmup {
            return Err(Error::Config(format!(
                "sequence {i}: {} stacks / warmup {} do not match config {} / {}",
                s.stacks.len(),
                s.warmup,
                cfg.seq_len,
                cfg.warmup
            )));
        }
        if s.supervised_steps() != s.labels.len() {
            return Err(Error::Config(format!("sequence {i}: label count mismatch")));
        }
    }
    Ok(())
}

/// Trains in place. Per sequence batch: warm-up forward passes, loss
/// accumulation over supervised steps, one BPTT backward across the whole
/// sequence, Adam step, adaptation-decay projection, poly LR update.
pub fn train(
    model: &SpikingEdn,
    train_seqs: &[StackSequence],
    val_seqs: &[StackSequence],
    cfg: &TrainConfig,
    mut on_epoch: Option<&mut dyn FnMut(&SpikingEdn, &CheckpointMeta) -> Result<()>>,
) -> Result<TrainReport> {
    check_sequences(train_seqs, cfg)?;
    let mut opt = Adam::new(model.parameters(), cfg.lr, cfg.adam_betas);
    let constraints = model.constraints();
    let genotype_hash = fnv1a64(&model.genotype.render());
    let batches_per_epoch = train_seqs.len().div_ceil(cfg.batch_size.max(1));
    let total_steps = (cfg.epochs * batches_per_epoch) as u64;
    let mut global_step = 0u64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_seqs.len()).collect();
        order.shuffle(&mut rng);
        let mut recorder = RunRecorder::new();
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;

        for batch_ix in order.chunks(cfg.batch_size.max(1)) {
            let refs: Vec<&StackSequence> = batch_ix.iter().map(|i| &train_seqs[*i]).collect();
            let mut states = model.new_states();
            let mut losses = Vec::new();
            for t in 0..cfg.seq_len {
                let (stack, aug) = batch_step_inputs(&refs, t, model.cfg.aug)?;
                let mut ctx = ForwardCtx::train();
                ctx.recorder = Some(&mut recorder);
                let scores = model.forward_step(&stack, aug.as_ref(), &mut states, &mut ctx)?;
                if t >= cfg.warmup {
                    let labels: Vec<&LabelGrid> =
                        refs.iter().map(|s| &s.labels[t - cfg.warmup]).collect();
                    losses.push(cross_entropy_loss(&scores, &labels)?);
                }
            }
            let loss = mean_of_scalars(&losses);
            let loss_v = loss.item();
            if !loss_v.is_finite() {
                let mut diag = String::from("non-finite training loss; firing rates:");
                for name in &recorder.spike_order {
                    diag.push_str(&format!(
                        " {}={:.4}",
                        name,
                        recorder.spikes[name].mean_rate()
                    ));
                }
                diag.push_str(&format!("; grad_norm={:.4e}", opt.grad_norm()));
                return Err(Error::NonFinite(diag));
            }
            opt.lr = poly_lr(cfg.lr, global_step, total_steps, cfg.poly_power);
            opt.zero_grad();
            backward(&loss);
            if let Some(max_norm) = cfg.grad_clip {
                opt.clip_grads(max_norm);
            }
            opt.step();
            for (p, lo, hi) in &constraints {
                p.clamp(*lo, *hi);
            }
            global_step += 1;
            loss_sum += loss_v;
            loss_count += 1;
        }

        let mean_fr = {
            let rates: Vec<Elem> =
                recorder.spike_order.iter().map(|n| recorder.spikes[n].mean_rate()).collect();
            if rates.is_empty() {
                0.0
            } else {
                rates.iter().sum::<Elem>() / rates.len() as Elem
            }
        };
        report.records.push(MetricsRecord {
            epoch,
            split: "train",
            loss: Some(loss_sum / loss_count.max(1) as Elem),
            miou: None,
            mean_fr: Some(mean_fr),
            lr: opt.lr,
        });

        let val_miou = if val_seqs.is_empty() {
            None
        } else {
            let (m, _, _) = evaluate(model, val_seqs, cfg.batch_size)?;
            report.records.push(MetricsRecord {
                epoch,
                split: "val",
                loss: None,
                miou: Some(m),
                mean_fr: None,
                lr: opt.lr,
            });
            report.best_miou = report.best_miou.max(m);
            Some(m)
        };

        let meta =
            CheckpointMeta { genotype_hash, epoch, seed: cfg.seed, val_miou };
        if let Some(cb) = on_epoch.as_deref_mut() {
            cb(model, &meta)?;
        }
        report.history.push(meta);
    }
    Ok(report)
}
