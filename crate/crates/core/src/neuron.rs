//! Iterative LIF and AiLIF spiking cells with hard reset, adaptive
//! threshold, and surrogate-gradient firing.
//!
//! One step of the recurrence, per neuron:
//!
//! ```text
//! u' = tau * u * (1 - y_prev) + I        (hard reset via multiplicative gate)
//! a' = tau_a * a + y_prev                (adaptation accumulator)
//! A  = u_th + beta * a'                  (effective threshold)
//! y  = H(u' - A)                         (Heaviside; surrogate in backward)
//! ```
//!
//! `beta = 0` reduces the cell exactly to a plain iterative LIF.

use crate::error::{Error, Result};
use crate::tensor::{
    add, affine_const, mul, scale, spike, sub, Elem, Param, Tensor,
};

/// Named surrogate family for the Heaviside derivative. The triangular hat
/// has unit mass, is symmetric about `u - A = 0`, and its antiderivative is
/// the relaxed forward used by gradient checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateSpec {
    pub family: SurrogateFamily,
    pub temperature: Elem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurrogateFamily {
    Triangular,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        SurrogateSpec { family: SurrogateFamily::Triangular, temperature: 1.0 }
    }
}

impl SurrogateSpec {
    pub fn family_name(&self) -> &'static str {
        match self.family {
            SurrogateFamily::Triangular => "triangular",
        }
    }

    pub fn parse(name: &str, temperature: Elem) -> Result<Self> {
        match name {
            "triangular" => Ok(SurrogateSpec { family: SurrogateFamily::Triangular, temperature }),
            other => Err(Error::Config(format!("unknown surrogate family '{other}'"))),
        }
    }
}

/// Where the adaptive neuron is placed in a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    FirstLayerAiLif,
    AllAiLif,
    AllLif,
}

impl Placement {
    pub fn name(&self) -> &'static str {
        match self {
            Placement::FirstLayerAiLif => "first-layer-ailif",
            Placement::AllAiLif => "all-ailif",
            Placement::AllLif => "all-lif",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "first-layer-ailif" => Ok(Placement::FirstLayerAiLif),
            "all-ailif" => Ok(Placement::AllAiLif),
            "all-lif" => Ok(Placement::AllLif),
            other => Err(Error::Config(format!("unknown neuron placement '{other}'"))),
        }
    }
}

/// Configuration of one spiking cell (shared across a layer).
#[derive(Debug, Clone)]
pub struct NeuronConfig {
    /// Base threshold.
    pub u_th: Elem,
    /// Membrane decay, in (0,1).
    pub tau: Elem,
    /// Threshold scale; 0 disables adaptation (plain LIF).
    pub beta: Elem,
    /// Adaptation decay, in (0,1). Trainable when attached as a parameter.
    pub tau_a: Elem,
    /// Clamp range applied to `tau_a` after every optimizer step.
    pub tau_a_clamp: (Elem, Elem),
    pub surrogate: SurrogateSpec,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        NeuronConfig {
            u_th: 0.5,
            tau: 0.2,
            beta: 0.0,
            tau_a: 0.3,
            tau_a_clamp: (0.2, 0.4),
            surrogate: SurrogateSpec::default(),
        }
    }
}

impl NeuronConfig {
    pub fn ailif(u_th: Elem, beta: Elem) -> Self {
        NeuronConfig { u_th, beta, ..NeuronConfig::default() }
    }

    pub fn lif(u_th: Elem) -> Self {
        NeuronConfig { u_th, beta: 0.0, ..NeuronConfig::default() }
    }

    pub fn is_adaptive(&self) -> bool {
        self.beta != 0.0
    }
}

/// Closed range of the effective threshold `A = u_th + beta * a`, given
/// `a^0 = 0`: partial sums of the continuous-firing geometric series never
/// exceed `1/(1 - tau_a)`.
pub fn adaptation_bound(cfg: &NeuronConfig) -> Result<(Elem, Elem)> {
    if !(cfg.tau_a > 0.0 && cfg.tau_a < 1.0) {
        return Err(Error::Domain(format!(
            "adaptation decay tau_a must lie in (0,1), got {}",
            cfg.tau_a
        )));
    }
    Ok((cfg.u_th, cfg.u_th + cfg.beta / (1.0 - cfg.tau_a)))
}

/// Per-layer carried state: membrane potential, adaptation accumulator, and
/// the previous binary output.
#[derive(Clone)]
pub struct NeuronState {
    pub u: Tensor,
    pub a: Tensor,
    pub y_prev: Tensor,
}

impl NeuronState {
    /// Rest state (all zeros) of the given feature shape.
    pub fn rest(shape: &[usize]) -> Self {
        NeuronState {
            u: Tensor::zeros(shape),
            a: Tensor::zeros(shape),
            y_prev: Tensor::zeros(shape),
        }
    }

    /// Detached copy for hand-off between sessions.
    pub fn snapshot(&self) -> Self {
        NeuronState { u: self.u.detach(), a: self.a.detach(), y_prev: self.y_prev.detach() }
    }
}

/// One recurrence step. `tau_a_param`, when supplied, replaces the constant
/// `cfg.tau_a` with a trainable scalar so gradients reach the adaptation
/// decay. `relaxed` swaps the Heaviside forward for the surrogate's
/// antiderivative (gradient-check mode).
pub fn lif_step(
    state: &NeuronState,
    input_current: &Tensor,
    cfg: &NeuronConfig,
    tau_a_param: Option<&Param>,
    relaxed: bool,
) -> Result<(Tensor, NeuronState)> {
    if state.u.shape() != input_current.shape() {
        return Err(Error::Shape(format!(
            "lif_step: state shape {:?} vs input {:?}",
            state.u.shape(),
            input_current.shape()
        )));
    }
    if !input_current.all_finite() {
        return Err(Error::NonFinite("lif_step received a non-finite input current".into()));
    }
    let keep = affine_const(&state.y_prev, -1.0, 1.0); // 1 - y_prev
    let decayed = affine_const(&mul(&state.u, &keep), cfg.tau, 0.0);
    let u_new = add(&decayed, input_current);

    let temp = cfg.surrogate.temperature;
    let (spikes, a_new) = if cfg.is_adaptive() {
        let a_scaled = match tau_a_param {
            Some(p) => scale(&state.a, &p.value()),
            None => affine_const(&state.a, cfg.tau_a, 0.0),
        };
        let a_new = add(&a_scaled, &state.y_prev);
        let threshold = affine_const(&a_new, cfg.beta, cfg.u_th);
        let drive = sub(&u_new, &threshold);
        (spike(&drive, temp, relaxed), a_new)
    } else {
        let drive = affine_const(&u_new, 1.0, -cfg.u_th);
        (spike(&drive, temp, relaxed), state.a.clone())
    };

    let next = NeuronState { u: u_new, a: a_new, y_prev: spikes.clone() };
    Ok((spikes, next))
}

/// Firing statistics of one sequence run.
#[derive(Debug, Clone, Default)]
pub struct SequenceStats {
    /// Mean output spike rate per step.
    pub step_rates: Vec<Elem>,
}

impl SequenceStats {
    pub fn mean_rate(&self) -> Elem {
        if self.step_rates.is_empty() {
            0.0
        } else {
            self.step_rates.iter().sum::<Elem>() / self.step_rates.len() as Elem
        }
    }
}

/// Iterates [`lif_step`] over a time-major input sequence from rest state,
/// recording per-step firing rates.
pub fn run_sequence(
    layer_inputs: &[Tensor],
    cfg: &NeuronConfig,
    tau_a_param: Option<&Param>,
) -> Result<(Vec<Tensor>, SequenceStats)> {
    if layer_inputs.is_empty() {
        return Err(Error::Data("run_sequence: empty input sequence".into()));
    }
    let mut state = NeuronState::rest(layer_inputs[0].shape());
    let mut outputs = Vec::with_capacity(layer_inputs.len());
    let mut stats = SequenceStats::default();
    for input in layer_inputs {
        let (spikes, next) = lif_step(&state, input, cfg, tau_a_param, false)?;
        stats.step_rates.push(spikes.mean_value());
        outputs.push(spikes.clone());
        state = next;
    }
    Ok((outputs, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drive(v: Elem) -> Tensor {
        Tensor::from_vec(&[1], vec![v]).unwrap()
    }

    #[test]
    fn hand_evaluated_recurrence_supra_threshold() {
        // rest state, I = 0.6, tau = 0.2, u_th = 0.5, beta = 0
        let cfg = NeuronConfig::lif(0.5);
        let state = NeuronState::rest(&[1]);
        let (y, next) = lif_step(&state, &drive(0.6), &cfg, None, false).unwrap();
        assert_eq!(next.u.data()[0], 0.6);
        assert_eq!(y.data()[0], 1.0);
    }

    #[test]
    fn hand_evaluated_recurrence_sub_threshold() {
        let cfg = NeuronConfig::lif(0.5);
        let state = NeuronState::rest(&[1]);
        let (y, next) = lif_step(&state, &drive(0.4), &cfg, None, false).unwrap();
        assert_eq!(next.u.data()[0], 0.4);
        assert_eq!(y.data()[0], 0.0);
        // no spike, so next step decays the membrane: u = 0.2*0.4 + I
        let (_, after) = lif_step(&next, &drive(0.1), &cfg, None, false).unwrap();
        assert!((after.u.data()[0] - (0.2 * 0.4 + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn silent_without_input() {
        let cfg = NeuronConfig::lif(0.5);
        let inputs: Vec<Tensor> = (0..4).map(|_| Tensor::zeros(&[3])).collect();
        let (outs, stats) = run_sequence(&inputs, &cfg, None).unwrap();
        for o in &outs {
            assert!(o.data().iter().all(|v| *v == 0.0));
        }
        assert_eq!(stats.mean_rate(), 0.0);
    }

    #[test]
    fn hard_reset_zeroes_decayed_membrane() {
        let cfg = NeuronConfig::lif(0.5);
        let state = NeuronState::rest(&[1]);
        let (y, next) = lif_step(&state, &drive(0.9), &cfg, None, false).unwrap();
        assert_eq!(y.data()[0], 1.0);
        // after a spike the decayed contribution is exactly zero
        let (_, after) = lif_step(&next, &drive(0.3), &cfg, None, false).unwrap();
        assert_eq!(after.u.data()[0], 0.3);
    }

    #[test]
    fn adaptation_bound_numbers() {
        let cfg = NeuronConfig { u_th: 0.5, beta: 0.07, tau_a: 0.3, ..NeuronConfig::default() };
        let (lo, hi) = adaptation_bound(&cfg).unwrap();
        assert_eq!(lo, 0.5);
        assert!((hi - lo - 0.1).abs() < 1e-12, "maximal increment 0.1");

        let degenerate = NeuronConfig { beta: 0.0, tau_a: 0.3, ..NeuronConfig::default() };
        let (lo2, hi2) = adaptation_bound(&degenerate).unwrap();
        assert_eq!(lo2, hi2);

        let bad = NeuronConfig { tau_a: 1.0, ..NeuronConfig::default() };
        assert!(adaptation_bound(&bad).is_err());
    }

    #[test]
    fn geometric_partial_sums_respect_bound() {
        // tau_a = 0.5, beta = 1, continuous firing: a = 1, 1.5, 1.75 -> bound 2
        let cfg = NeuronConfig {
            u_th: 0.0,
            beta: 1.0,
            tau_a: 0.5,
            tau: 0.2,
            ..NeuronConfig::default()
        };
        let mut state = NeuronState::rest(&[1]);
        let mut a_seen = Vec::new();
        for _ in 0..8 {
            // strong drive keeps the neuron firing
            let (y, next) = lif_step(&state, &drive(10.0), &cfg, None, false).unwrap();
            assert_eq!(y.data()[0], 1.0);
            a_seen.push(next.a.data()[0]);
            state = next;
        }
        assert_eq!(a_seen[0], 0.0); // first step: no spike history yet
        assert_eq!(a_seen[1], 1.0);
        assert_eq!(a_seen[2], 1.5);
        assert_eq!(a_seen[3], 1.75);
        let bound = 1.0 / (1.0 - cfg.tau_a);
        assert!(a_seen.iter().all(|a| *a < bound));
    }

    #[test]
    fn beta_zero_reduces_to_lif_bit_identical() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let inputs: Vec<Tensor> = (0..12)
            .map(|_| {
                Tensor::from_vec(&[8], (0..8).map(|_| rng.gen_range(-0.5..1.2)).collect()).unwrap()
            })
            .collect();
        let lif = NeuronConfig::lif(0.5);
        let ailif_zero = NeuronConfig { beta: 0.0, ..NeuronConfig::ailif(0.5, 0.07) };
        let (a, _) = run_sequence(&inputs, &lif, None).unwrap();
        let (b, _) = run_sequence(&inputs, &ailif_zero, None).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn adaptation_lowers_rate_under_constant_drive() {
        let inputs: Vec<Tensor> = (0..40).map(|_| drive(0.8)).collect();
        let lif = NeuronConfig::lif(0.5);
        let ailif = NeuronConfig::ailif(0.5, 0.07);
        let (_, s_lif) = run_sequence(&inputs, &lif, None).unwrap();
        let (_, s_ailif) = run_sequence(&inputs, &ailif, None).unwrap();
        assert!(s_ailif.mean_rate() <= s_lif.mean_rate());
    }

    #[test]
    fn scripted_trajectory_matches_hand_stepped_recurrence() {
        // single AiLIF neuron, scripted inputs, against a direct scalar
        // evaluation of the recurrence
        let cfg = NeuronConfig { u_th: 0.5, beta: 0.2, tau: 0.2, tau_a: 0.5, ..Default::default() };
        let script = [0.7, 0.2, 0.9, 0.9, 0.1, 0.6, 0.55, 0.0, 0.8];
        let mut state = NeuronState::rest(&[1]);
        let (mut u, mut a, mut y) = (0.0, 0.0, 0.0);
        for i in script {
            let (spikes, next) = lif_step(&state, &drive(i), &cfg, None, false).unwrap();
            // hand-stepped oracle
            u = 0.2 * u * (1.0 - y) + i;
            a = 0.5 * a + y;
            let th = 0.5 + 0.2 * a;
            y = if u - th >= 0.0 { 1.0 } else { 0.0 };
            assert!((next.u.data()[0] - u).abs() < 1e-12);
            assert!((next.a.data()[0] - a).abs() < 1e-12);
            assert_eq!(spikes.data()[0], y);
            state = next;
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let cfg = NeuronConfig::lif(0.5);
        let state = NeuronState::rest(&[1]);
        let bad = Tensor::from_vec(&[1], vec![Elem::NAN]).unwrap();
        assert!(matches!(
            lif_step(&state, &bad, &cfg, None, false),
            Err(crate::error::Error::NonFinite(_))
        ));
    }

    #[test]
    fn empty_sequence_rejected() {
        let cfg = NeuronConfig::lif(0.5);
        assert!(run_sequence(&[], &cfg, None).is_err());
    }

    #[test]
    fn outputs_exactly_binary() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let inputs: Vec<Tensor> = (0..20)
            .map(|_| {
                Tensor::from_vec(&[16], (0..16).map(|_| rng.gen_range(-1.0..1.5)).collect())
                    .unwrap()
            })
            .collect();
        let cfg = NeuronConfig::ailif(0.5, 0.07);
        let (outs, _) = run_sequence(&inputs, &cfg, None).unwrap();
        for o in outs {
            assert!(o.data().iter().all(|v| *v == 0.0 || *v == 1.0));
        }
    }
}
