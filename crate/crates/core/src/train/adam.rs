//! Adam optimizer over parameter slots, plus the poly learning-rate decay.

use crate::tensor::{Elem, Param};

pub struct Adam {
    params: Vec<Param>,
    pub lr: Elem,
    pub betas: (Elem, Elem),
    pub eps: Elem,
    m: Vec<Vec<Elem>>,
    v: Vec<Vec<Elem>>,
    t: u64,
}

impl Adam {
    pub fn new(params: Vec<Param>, lr: Elem, betas: (Elem, Elem)) -> Self {
        let m = params.iter().map(|p| vec![0.0; p.value().len()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.value().len()]).collect();
        Adam { params, lr, betas, eps: 1e-8, m, v, t: 0 }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    /// Applies one update from the accumulated gradients; parameters with
    /// no gradient are left untouched.
    pub fn step(&mut self) {
        self.t += 1;
        let (b1, b2) = self.betas;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (i, p) in self.params.iter().enumerate() {
            let Some(grad) = p.grad() else { continue };
            let mut data = p.value().data().to_vec();
            for (j, g) in grad.iter().enumerate() {
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                data[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            p.set_data(data);
        }
    }

    /// Global L2 norm of all accumulated gradients.
    pub fn grad_norm(&self) -> Elem {
        let mut sq = 0.0;
        for p in &self.params {
            if let Some(g) = p.grad() {
                sq += g.iter().map(|x| x * x).sum::<Elem>();
            }
        }
        sq.sqrt()
    }

    /// Scales gradients down to `max_norm` when they exceed it.
    pub fn clip_grads(&self, max_norm: Elem) {
        let norm = self.grad_norm();
        if norm <= max_norm || norm == 0.0 {
            return;
        }
        let scale = max_norm / norm;
        for p in &self.params {
            if let Some(g) = p.grad() {
                p.replace_grad(g.iter().map(|x| x * scale).collect());
            }
        }
    }
}

/// Poly decay: `lr0 * (1 - t / t_max)^power`, monotone nonincreasing.
pub fn poly_lr(lr0: Elem, step: u64, total_steps: u64, power: Elem) -> Elem {
    if total_steps == 0 {
        return lr0;
    }
    let frac = (step.min(total_steps)) as Elem / total_steps as Elem;
    lr0 * (1.0 - frac).max(0.0).powf(power)
}
