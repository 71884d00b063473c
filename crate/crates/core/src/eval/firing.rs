//! Firing-rate statistics: per-layer means and log-bucketed per-neuron
//! histograms, exported as CSV for plotting.

use std::fmt::Write as _;

use crate::network::RunRecorder;
use crate::tensor::Elem;

/// Histogram bucket upper edges for per-neuron rates; a dedicated bucket
/// holds exactly-silent neurons.
pub const RATE_BUCKETS: [Elem; 6] = [1e-3, 1e-2, 0.1, 0.25, 0.5, 1.0];

#[derive(Debug, Clone)]
pub struct LayerFiring {
    pub name: String,
    pub mean_rate: Elem,
    /// `[silent, then one count per RATE_BUCKETS edge]`; empty when the run
    /// was not recorded per neuron.
    pub histogram: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct FiringReport {
    pub layers: Vec<LayerFiring>,
    pub steps: usize,
}

impl FiringReport {
    pub fn mean_rate(&self) -> Elem {
        if self.layers.is_empty() {
            0.0
        } else {
            self.layers.iter().map(|l| l.mean_rate).sum::<Elem>() / self.layers.len() as Elem
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,mean_rate,silent");
        for edge in RATE_BUCKETS {
            let _ = write!(out, ",le_{edge}");
        }
        out.push('\n');
        for l in &self.layers {
            let _ = write!(out, "{},{:.6}", l.name, l.mean_rate);
            if l.histogram.is_empty() {
                for _ in 0..=RATE_BUCKETS.len() {
                    out.push_str(",");
                }
            } else {
                for c in &l.histogram {
                    let _ = write!(out, ",{c}");
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Summarizes a recorded run. Per-neuron histograms are present when the
/// recorder was created with per-neuron accumulation.
pub fn firing_rate_report(rec: &RunRecorder) -> FiringReport {
    let steps = rec.steps.max(1);
    let layers = rec
        .spike_order
        .iter()
        .map(|name| {
            let acc = &rec.spikes[name];
            let histogram = match rec.per_neuron.as_ref().and_then(|m| m.get(name)) {
                None => Vec::new(),
                Some(sums) => {
                    let mut hist = vec![0u64; RATE_BUCKETS.len() + 1];
                    for s in sums {
                        let rate = s / steps as Elem;
                        if rate == 0.0 {
                            hist[0] += 1;
                        } else {
                            let mut placed = false;
                            for (i, edge) in RATE_BUCKETS.iter().enumerate() {
                                if rate <= *edge {
                                    hist[i + 1] += 1;
                                    placed = true;
                                    break;
                                }
                            }
                            if !placed {
                                *hist.last_mut().unwrap() += 1;
                            }
                        }
                    }
                    hist
                }
            };
            LayerFiring { name: name.clone(), mean_rate: acc.mean_rate(), histogram }
        })
        .collect();
    FiringReport { layers, steps: rec.steps }
}
