//! Event ingestion, SBT stacking, label alignment, and synthetic scenes.

mod sbt;
mod synth;

pub use sbt::{fuse_image_channel, make_sequences, stack_events};
pub use synth::{
    moving_shapes_dataset, synthesize_scene, SceneSpec, ShapeKind, ShapeSpec, SynthOutput,
};

use crate::error::{Error, Result};
use crate::tensor::Elem;

/// Ignore value for unlabeled pixels in label grids.
pub const IGNORE_LABEL: u8 = 255;

/// One sensor event: pixel coordinates, microsecond timestamp, polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventRecord {
    pub x: u16,
    pub y: u16,
    pub t_us: u32,
    /// +1 or -1.
    pub p: i8,
}

/// A time-ordered run of events from one sensor.
#[derive(Debug, Clone)]
pub struct EventStream {
    pub width: u16,
    pub height: u16,
    /// Covered duration; windows are laid out over `[0, duration_us)`.
    pub duration_us: u64,
    pub events: Vec<EventRecord>,
}

impl EventStream {
    /// Validates ordering, bounds, and polarity.
    pub fn new(width: u16, height: u16, duration_us: u64, events: Vec<EventRecord>) -> Result<Self> {
        let mut prev = 0u32;
        for (i, e) in events.iter().enumerate() {
            if e.t_us < prev {
                return Err(Error::Data(format!(
                    "event stream unsorted at index {i}: t={} after t={}",
                    e.t_us, prev
                )));
            }
            prev = e.t_us;
            if e.x >= width || e.y >= height {
                return Err(Error::Data(format!(
                    "event {i} at ({}, {}) outside {}x{} sensor",
                    e.x, e.y, width, height
                )));
            }
            if e.p != 1 && e.p != -1 {
                return Err(Error::Data(format!("event {i} has polarity {}, expected +1/-1", e.p)));
            }
        }
        Ok(EventStream { width, height, duration_us, events })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// One SBT stack: `n` signed accumulation frames over a `[start, end)`
/// window. Each pixel of frame `i` is the polarity sum of the events in the
/// frame's sub-window.
#[derive(Debug, Clone)]
pub struct SbtStack {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    /// `n * height * width` signed sums, frame-major.
    pub frames: Vec<i32>,
    /// `[start_us, end_us)` of the whole stack.
    pub window: (u64, u64),
}

impl SbtStack {
    pub fn zeros(n: usize, height: usize, width: usize, window: (u64, u64)) -> Self {
        SbtStack { n, height, width, frames: vec![0; n * height * width], window }
    }

    pub fn frame(&self, i: usize) -> &[i32] {
        &self.frames[i * self.height * self.width..(i + 1) * self.height * self.width]
    }

    /// Total signed events accumulated (sum of absolute pixel sums).
    pub fn abs_sum(&self) -> u64 {
        self.frames.iter().map(|v| v.unsigned_abs() as u64).sum()
    }

    /// Frames as floating input channels `[n, H, W]`.
    pub fn to_elems(&self) -> Vec<Elem> {
        self.frames.iter().map(|v| *v as Elem).collect()
    }

    /// Whole-window accumulation collapsed to one channel (the coarse event
    /// frame used as SSAM augmented input in event-augmented mode).
    pub fn collapsed(&self) -> Vec<Elem> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane];
        for f in 0..self.n {
            for (o, v) in out.iter_mut().zip(self.frame(f)) {
                *o += *v as Elem;
            }
        }
        out
    }
}

/// Per-pixel class indices with an ignore value for unlabeled pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGrid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl LabelGrid {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "label grid data length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(LabelGrid { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        LabelGrid { width, height, data: vec![value; width * height] }
    }
}

/// Intensity image aligned with a stack (extra input channel).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "image data length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(ImageGrid { width, height, data })
    }

    pub fn to_elems(&self) -> Vec<Elem> {
        self.data.iter().map(|v| *v as Elem).collect()
    }
}

/// A run of continuous stacks with labels for all but the warm-up prefix.
/// The unit of training and of windowed streaming inference.
#[derive(Debug, Clone)]
pub struct StackSequence {
    pub stacks: Vec<SbtStack>,
    /// One label per supervised step: `stacks.len() - warmup` grids.
    pub labels: Vec<LabelGrid>,
    /// Optional per-stack intensity channel (one image per stack).
    pub aug: Option<Vec<ImageGrid>>,
    pub warmup: usize,
}

impl StackSequence {
    pub fn supervised_steps(&self) -> usize {
        self.stacks.len() - self.warmup
    }
}
