//! Continuous inference over unbounded stack streams with carried neuron
//! state, optional periodic state reset, and a rolling confusion matrix.

use super::{argmax_predictions, ConfusionAccumulator};
use crate::error::{Error, Result};
use crate::events::{ImageGrid, LabelGrid, SbtStack};
use crate::network::{AugMode, ForwardCtx, SpikingEdn, StateBundle};
use crate::tensor::{NoGradGuard, Tensor};

/// One live inference session over a single stream. State persists across
/// steps until reset; sessions are single-owner.
pub struct StreamSession<'m> {
    model: &'m SpikingEdn,
    states: StateBundle,
    steps: usize,
    /// Reset the carried state every `n` steps (emulates bounded-sequence
    /// inference). `None` never resets.
    reset_period: Option<usize>,
    pub confusion: ConfusionAccumulator,
    resolution: Option<(usize, usize)>,
}

impl<'m> StreamSession<'m> {
    pub fn new(model: &'m SpikingEdn, reset_period: Option<usize>) -> Self {
        StreamSession {
            states: model.new_states(),
            model,
            steps: 0,
            reset_period,
            confusion: ConfusionAccumulator::new(model.cfg.classes),
            resolution: None,
        }
    }

    /// Resumes from a handed-off state snapshot (step counter continues
    /// from `steps`).
    pub fn with_states(
        model: &'m SpikingEdn,
        states: StateBundle,
        steps: usize,
        reset_period: Option<usize>,
    ) -> Self {
        StreamSession {
            model,
            states,
            steps,
            reset_period,
            confusion: ConfusionAccumulator::new(model.cfg.classes),
            resolution: None,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Detached copy of the carried neuron state, for session hand-off.
    pub fn snapshot_states(&self) -> StateBundle {
        self.states.snapshot()
    }

    /// Advances one stack through the model. Returns the prediction grid;
    /// when a label is supplied the rolling confusion matrix is updated.
    pub fn step(
        &mut self,
        stack: &SbtStack,
        image: Option<&ImageGrid>,
        label: Option<&LabelGrid>,
    ) -> Result<LabelGrid> {
        match self.resolution {
            None => self.resolution = Some((stack.height, stack.width)),
            Some((h, w)) => {
                if (stack.height, stack.width) != (h, w) {
                    return Err(Error::Data(format!(
                        "stream resolution changed mid-stream: {}x{} after {}x{}",
                        stack.height, stack.width, h, w
                    )));
                }
            }
        }
        if let Some(period) = self.reset_period {
            if self.steps > 0 && self.steps % period == 0 {
                self.states = self.model.new_states();
            }
        }
        let _nograd = NoGradGuard::new();
        let input =
            Tensor::from_vec(&[1, stack.n, stack.height, stack.width], stack.to_elems())?;
        let aug = match self.model.cfg.aug {
            AugMode::ImageChannel | AugMode::SsamImage => {
                let img = image.ok_or_else(|| {
                    Error::Config("stream step: model expects an image channel".into())
                })?;
                Some(Tensor::from_vec(&[1, 1, stack.height, stack.width], img.to_elems())?)
            }
            _ => None,
        };
        let mut ctx = ForwardCtx::infer();
        let scores =
            self.model.forward_step(&input, aug.as_ref(), &mut self.states, &mut ctx)?;
        self.steps += 1;
        let pred = argmax_predictions(&scores).remove(0);
        if let Some(truth) = label {
            self.confusion.update(truth, &pred)?;
        }
        Ok(pred)
    }
}
