//! Operation counting and the energy model.
//!
//! Additions of a spiking conv layer follow `s * T * A`: measured mean
//! presynaptic firing rate, executed steps, and the ANN-equivalent
//! accumulate count `A = k^2 * H_out * W_out * C_in * C_out`. Real-valued
//! inputs (first layer, final averaging upsample) genuinely multiply and
//! are booked at `T * A` multiplications.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::events::StackSequence;
use crate::network::{batch_step_inputs, ForwardCtx, RunRecorder, SpikingEdn};
use crate::tensor::{Elem, NoGradGuard};

/// 45 nm CMOS estimates: one addition, one multiply-accumulate.
#[derive(Debug, Clone, Copy)]
pub struct EnergyModel {
    pub add_pj: Elem,
    pub mac_pj: Elem,
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel { add_pj: 0.9, mac_pj: 4.6 }
    }
}

#[derive(Debug, Clone)]
pub struct LedgerRow {
    pub name: String,
    /// ANN-equivalent accumulates per step (Eq.-style `A`).
    pub ann_ops_per_step: u64,
    /// Measured mean presynaptic firing rate (1.0 for real-valued inputs).
    pub firing_rate: Elem,
    /// Steps executed (`T`).
    pub steps: u64,
    /// `s * T * A`.
    pub additions: Elem,
    /// `T * A` where the input is real-valued, else 0.
    pub multiplications: u64,
}

#[derive(Debug, Clone)]
pub struct OpLedger {
    pub rows: Vec<LedgerRow>,
    pub energy: EnergyModel,
}

impl OpLedger {
    pub fn total_additions(&self) -> Elem {
        self.rows.iter().map(|r| r.additions).sum()
    }

    pub fn total_multiplications(&self) -> u64 {
        self.rows.iter().map(|r| r.multiplications).sum()
    }

    /// MAC count of the dense ANN with the same architecture over the same
    /// steps.
    pub fn ann_equivalent_macs(&self) -> Elem {
        self.rows.iter().map(|r| (r.ann_ops_per_step * r.steps) as Elem).sum()
    }

    /// `A`-weighted mean firing rate of the whole model (real-input layers
    /// count as rate 1), so `total_additions = rate * ann_macs` exactly.
    pub fn weighted_firing_rate(&self) -> Elem {
        let total = self.ann_equivalent_macs();
        if total == 0.0 {
            0.0
        } else {
            self.total_additions() / total
        }
    }

    /// `adds * 0.9 pJ + mults * 4.6 pJ`.
    pub fn total_energy_pj(&self) -> Elem {
        self.total_additions() * self.energy.add_pj
            + self.total_multiplications() as Elem * self.energy.mac_pj
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<22} {:>14} {:>8} {:>8} {:>16} {:>14}",
            "layer", "A/step", "rate", "steps", "additions", "mults"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<22} {:>14} {:>8.4} {:>8} {:>16.0} {:>14}",
                r.name, r.ann_ops_per_step, r.firing_rate, r.steps, r.additions,
                r.multiplications
            );
        }
        let _ = writeln!(
            out,
            "total: additions={:.0} multiplications={} energy={:.3}uJ mean_fr={:.4}",
            self.total_additions(),
            self.total_multiplications(),
            self.total_energy_pj() * 1e-6,
            self.weighted_firing_rate()
        );
        out
    }
}

/// Builds the operation ledger from recorded layer geometry and rates.
pub fn ledger_from_recorder(rec: &RunRecorder, energy: EnergyModel) -> OpLedger {
    let steps = rec.steps as u64;
    let mut rows = Vec::new();
    for name in &rec.conv_order {
        let acc = &rec.convs[name];
        let ann: u64 = if acc.pool_hw > 0 {
            // pooled branch: spike-gated pooling adds plus the 1x1 conv body
            (acc.pool_hw * acc.c_in + acc.c_in * acc.c_out) as u64
        } else {
            (acc.k * acc.k * acc.h_out * acc.w_out * acc.c_in * acc.c_out) as u64
        };
        let rate = acc.mean_rate();
        rows.push(LedgerRow {
            name: name.clone(),
            ann_ops_per_step: ann,
            firing_rate: rate,
            steps,
            additions: rate * steps as Elem * ann as Elem,
            multiplications: if acc.input_real { steps * ann } else { 0 },
        });
    }
    if let Some((c, h, w, taps)) = rec.upsample {
        // real-valued interpolation: taps MACs per output element
        let ann = (taps * c * h * w) as u64;
        rows.push(LedgerRow {
            name: "dec.upsample".into(),
            ann_ops_per_step: ann,
            firing_rate: 1.0,
            steps,
            additions: (steps * ann) as Elem,
            multiplications: steps * ann,
        });
    }
    for (name, per_step) in &rec.mult_sites {
        rows.push(LedgerRow {
            name: name.clone(),
            ann_ops_per_step: *per_step as u64,
            firing_rate: 1.0,
            steps,
            additions: 0.0,
            multiplications: steps * *per_step as u64,
        });
    }
    OpLedger { rows, energy }
}

/// Runs folded inference over the sequences, measuring per-layer firing
/// rates, and returns the ledger. Refuses unfolded models (they would
/// miscount batch-norm scaling as free).
pub fn count_ops(
    model: &SpikingEdn,
    sequences: &[StackSequence],
    energy: EnergyModel,
) -> Result<(OpLedger, RunRecorder)> {
    if !model.is_folded() {
        return Err(Error::State(
            "count_ops: model has unfolded batch norms; fold before counting".into(),
        ));
    }
    let mut rec = RunRecorder::new();
    let _nograd = NoGradGuard::new();
    for seq in sequences {
        let mut states = model.new_states();
        for t in 0..seq.stacks.len() {
            let (stack, aug) = batch_step_inputs(&[seq], t, model.cfg.aug)?;
            let mut ctx = ForwardCtx::recording(&mut rec);
            model.forward_step(&stack, aug.as_ref(), &mut states, &mut ctx)?;
        }
    }
    Ok((ledger_from_recorder(&rec, energy), rec))
}

/// Multiplication-free-inference audit: after folding, every binary-input
/// layer must be multiplication-free; only declared first-layer convs
/// (real inputs) and the final averaging upsample may multiply.
pub fn audit_mfi(model: &SpikingEdn, rec: &RunRecorder) -> Result<()> {
    for name in &rec.conv_order {
        let acc = &rec.convs[name];
        if !acc.input_real && !acc.folded {
            return Err(Error::State(format!(
                "mfi audit: spiking layer '{name}' ran with unfolded batch norm"
            )));
        }
        if acc.input_real && !(name.starts_with("stem1.") || name.starts_with("ssam.")) {
            return Err(Error::State(format!(
                "mfi audit: unexpected real-valued input at non-first layer '{name}'"
            )));
        }
    }
    if let Some((site, _)) = rec.mult_sites.iter().next() {
        return Err(Error::State(format!(
            "mfi audit: per-element multiplication site '{site}' present"
        )));
    }
    let _ = model;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::conv2d_counted;

    #[test]
    fn conv_formula_matches_instrumented_counter() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(55);
        for _ in 0..50 {
            let k = [1usize, 3, 5][rng.gen_range(0..3)];
            let stride = rng.gen_range(1..3usize);
            let dil = rng.gen_range(1..3usize);
            let (ci, co) = (rng.gen_range(1..4usize), rng.gen_range(1..5usize));
            let h = rng.gen_range(k * dil..k * dil + 9);
            let w = rng.gen_range(k * dil..k * dil + 9);
            let pad = rng.gen_range(0..=dil * (k - 1));
            let x = vec![0.0; ci * h * w];
            let wt = vec![0.0; co * ci * k * k];
            let ((_, (h_out, w_out)), counted) =
                conv2d_counted(&x, (1, ci, h, w), &wt, (co, ci, k), stride, dil, pad);
            let formula = (k * k * h_out * w_out * ci * co) as u64;
            assert_eq!(counted, formula, "k={k} s={stride} d={dil} {h}x{w} pad={pad}");
        }
    }

    #[test]
    fn hand_checked_a_conv() {
        // k=3, H_out=W_out=4, C_in=2, C_out=3 -> 9*16*2*3 = 864
        let x = vec![0.0; 2 * 4 * 4];
        let w = vec![0.0; 3 * 2 * 3 * 3];
        let ((_, (h_out, w_out)), counted) =
            conv2d_counted(&x, (1, 2, 4, 4), &w, (3, 2, 3), 1, 1, 1);
        assert_eq!((h_out, w_out), (4, 4));
        assert_eq!(counted, 864);
    }

    #[test]
    fn energy_identity_and_monotonicity() {
        let mk = |rates: [Elem; 2]| {
            let rows = vec![
                LedgerRow {
                    name: "a".into(),
                    ann_ops_per_step: 1000,
                    firing_rate: rates[0],
                    steps: 3,
                    additions: rates[0] * 3.0 * 1000.0,
                    multiplications: 0,
                },
                LedgerRow {
                    name: "b".into(),
                    ann_ops_per_step: 500,
                    firing_rate: rates[1],
                    steps: 3,
                    additions: rates[1] * 3.0 * 500.0,
                    multiplications: 3 * 500,
                },
            ];
            OpLedger { rows, energy: EnergyModel::default() }
        };
        let ledger = mk([0.2, 1.0]);
        let expect =
            ledger.total_additions() * 0.9 + ledger.total_multiplications() as Elem * 4.6;
        assert_eq!(ledger.total_energy_pj(), expect);
        // lowering a rate never increases energy
        let lower = mk([0.1, 1.0]);
        assert!(lower.total_energy_pj() <= ledger.total_energy_pj());
        // s*T*A identity: adds = weighted_rate * ann_macs
        let lhs = ledger.total_additions();
        let rhs = ledger.weighted_firing_rate() * ledger.ann_equivalent_macs();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn silent_layer_contributes_nothing() {
        let row = LedgerRow {
            name: "quiet".into(),
            ann_ops_per_step: 864,
            firing_rate: 0.0,
            steps: 10,
            additions: 0.0,
            multiplications: 0,
        };
        let ledger = OpLedger { rows: vec![row], energy: EnergyModel::default() };
        assert_eq!(ledger.total_additions(), 0.0);
        assert_eq!(ledger.total_energy_pj(), 0.0);
    }
}
