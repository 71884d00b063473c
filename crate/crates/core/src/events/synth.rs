//! Synthetic moving-shape scenes: a desk-scale event-camera simulator.
//!
//! Intensity is piecewise constant (background plus opaque shapes), so
//! per-pixel log intensity takes one of a few known values. Events are
//! emitted whenever the log-intensity change since the per-pixel reference
//! level crosses the contrast threshold, reference moving by one threshold
//! per event (standard event-camera model). Deterministic per seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EventRecord, EventStream, ImageGrid, LabelGrid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum ShapeKind {
    /// Axis-aligned rectangle with full width and height in pixels.
    Rect { w: f64, h: f64 },
    Circle { r: f64 },
}

#[derive(Debug, Clone)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    /// Class index rendered into label grids (> 0; 0 is background).
    pub class: u8,
    /// Surface intensity in (0, 1].
    pub intensity: f64,
    /// Initial centre position, pixels.
    pub pos: (f64, f64),
    /// Velocity, pixels per second. Shapes bounce off sensor walls.
    pub velocity: (f64, f64),
}

impl ShapeSpec {
    fn half_extent(&self) -> (f64, f64) {
        match self.kind {
            ShapeKind::Rect { w, h } => (w / 2.0, h / 2.0),
            ShapeKind::Circle { r } => (r, r),
        }
    }

    fn covers(&self, px: f64, py: f64, pos: (f64, f64)) -> bool {
        match self.kind {
            ShapeKind::Rect { w, h } => {
                (px - pos.0).abs() <= w / 2.0 && (py - pos.1).abs() <= h / 2.0
            }
            ShapeKind::Circle { r } => {
                let dx = px - pos.0;
                let dy = py - pos.1;
                dx * dx + dy * dy <= r * r
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub width: u16,
    pub height: u16,
    pub duration_us: u64,
    /// Stack window; labels and images are rendered at each window midpoint.
    pub delta_t_us: u64,
    /// Log-intensity contrast threshold of the simulated sensor.
    pub contrast_threshold: f64,
    /// Simulation micro-step.
    pub micro_dt_us: u64,
    pub background: f64,
    pub shapes: Vec<ShapeSpec>,
    /// Uniform noise events per pixel per second (0 disables).
    pub noise_rate: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 64,
            height: 64,
            duration_us: 800_000,
            delta_t_us: 50_000,
            contrast_threshold: 0.15,
            micro_dt_us: 1_000,
            background: 0.2,
            shapes: Vec::new(),
            noise_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub stream: EventStream,
    /// One label grid per stack window (rendered at the window midpoint).
    pub labels: Vec<LabelGrid>,
    /// One intensity image per stack window.
    pub images: Vec<ImageGrid>,
}

struct ShapeState {
    spec: ShapeSpec,
    pos: (f64, f64),
    vel: (f64, f64),
}

impl ShapeState {
    fn advance(&mut self, dt_s: f64, width: f64, height: f64) {
        let (hx, hy) = self.spec.half_extent();
        self.pos.0 += self.vel.0 * dt_s;
        self.pos.1 += self.vel.1 * dt_s;
        if self.pos.0 - hx < 0.0 {
            self.pos.0 = 2.0 * hx - self.pos.0;
            self.vel.0 = -self.vel.0;
        } else if self.pos.0 + hx > width {
            self.pos.0 = 2.0 * (width - hx) - self.pos.0;
            self.vel.0 = -self.vel.0;
        }
        if self.pos.1 - hy < 0.0 {
            self.pos.1 = 2.0 * hy - self.pos.1;
            self.vel.1 = -self.vel.1;
        } else if self.pos.1 + hy > height {
            self.pos.1 = 2.0 * (height - hy) - self.pos.1;
            self.vel.1 = -self.vel.1;
        }
    }
}

/// Renders the owner index per pixel: 0 = background, i+1 = shapes[i]
/// (later shapes on top).
fn render_owners(shapes: &[ShapeState], width: usize, height: usize, out: &mut [u8]) {
    out.fill(0);
    for (i, s) in shapes.iter().enumerate() {
        let (hx, hy) = s.spec.half_extent();
        let x0 = ((s.pos.0 - hx - 1.0).floor().max(0.0)) as usize;
        let x1 = ((s.pos.0 + hx + 1.0).ceil().min(width as f64)) as usize;
        let y0 = ((s.pos.1 - hy - 1.0).floor().max(0.0)) as usize;
        let y1 = ((s.pos.1 + hy + 1.0).ceil().min(height as f64)) as usize;
        for y in y0..y1 {
            for x in x0..x1 {
                if s.spec.covers(x as f64 + 0.5, y as f64 + 0.5, s.pos) {
                    out[y * width + x] = (i + 1) as u8;
                }
            }
        }
    }
}

/// Simulates the scene and returns the event stream together with label
/// grids and intensity images, one per stack window.
pub fn synthesize_scene(spec: &SceneSpec, seed: u64) -> Result<SynthOutput> {
    if spec.duration_us == 0 {
        return Err(Error::Config("synthesize_scene: zero duration".into()));
    }
    if spec.shapes.is_empty() {
        return Err(Error::Config("synthesize_scene: no shapes in scene".into()));
    }
    if spec.micro_dt_us == 0 || spec.delta_t_us == 0 {
        return Err(Error::Config("synthesize_scene: zero time step".into()));
    }
    for s in &spec.shapes {
        if s.class == 0 || s.class == super::IGNORE_LABEL {
            return Err(Error::Config(format!("shape class {} reserved", s.class)));
        }
        if s.intensity <= 0.0 || s.intensity > 1.0 || spec.background <= 0.0 {
            return Err(Error::Config("intensities must lie in (0, 1]".into()));
        }
    }

    let (w, h) = (spec.width as usize, spec.height as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shapes: Vec<ShapeState> = spec
        .shapes
        .iter()
        .map(|s| ShapeState { spec: s.clone(), pos: s.pos, vel: s.velocity })
        .collect();

    // log-intensity lookup per owner index
    let mut log_table = vec![spec.background.ln()];
    log_table.extend(spec.shapes.iter().map(|s| s.intensity.ln()));
    let intensity_table: Vec<f32> = std::iter::once(spec.background as f32)
        .chain(spec.shapes.iter().map(|s| s.intensity as f32))
        .collect();

    let mut owners = vec![0u8; w * h];
    render_owners(&shapes, w, h, &mut owners);
    let mut reference: Vec<f64> = owners.iter().map(|o| log_table[*o as usize]).collect();

    let num_stacks = spec.duration_us.div_ceil(spec.delta_t_us) as usize;
    let mut next_snapshot: Vec<u64> =
        (0..num_stacks).map(|k| k as u64 * spec.delta_t_us + spec.delta_t_us / 2).collect();
    next_snapshot.reverse(); // pop from the back in time order

    let mut events: Vec<EventRecord> = Vec::new();
    let mut labels = Vec::with_capacity(num_stacks);
    let mut images = Vec::with_capacity(num_stacks);
    let theta = spec.contrast_threshold;
    let dt_s = spec.micro_dt_us as f64 * 1e-6;
    let noise_per_step = spec.noise_rate * dt_s * (w * h) as f64;

    let mut t = 0u64;
    while t < spec.duration_us {
        t += spec.micro_dt_us;
        for s in shapes.iter_mut() {
            s.advance(dt_s, w as f64, h as f64);
        }
        render_owners(&shapes, w, h, &mut owners);
        let stamp = (t.min(spec.duration_us - 1)) as u32;
        for (i, o) in owners.iter().enumerate() {
            let li = log_table[*o as usize];
            let mut diff = li - reference[i];
            while diff.abs() >= theta {
                let p: i8 = if diff > 0.0 { 1 } else { -1 };
                reference[i] += theta * p as f64;
                diff = li - reference[i];
                events.push(EventRecord {
                    x: (i % w) as u16,
                    y: (i / w) as u16,
                    t_us: stamp,
                    p,
                });
            }
        }
        if noise_per_step > 0.0 {
            let mut count = noise_per_step.floor() as usize;
            if rng.gen_bool(noise_per_step.fract().clamp(0.0, 1.0)) {
                count += 1;
            }
            for _ in 0..count {
                events.push(EventRecord {
                    x: rng.gen_range(0..spec.width),
                    y: rng.gen_range(0..spec.height),
                    t_us: stamp,
                    p: if rng.gen_bool(0.5) { 1 } else { -1 },
                });
            }
        }
        while next_snapshot.last().is_some_and(|m| *m <= t) {
            next_snapshot.pop();
            let mut label = vec![0u8; w * h];
            let mut image = vec![0f32; w * h];
            for (i, o) in owners.iter().enumerate() {
                label[i] = if *o == 0 { 0 } else { shapes[*o as usize - 1].spec.class };
                image[i] = intensity_table[*o as usize];
            }
            labels.push(LabelGrid::new(w, h, label)?);
            images.push(ImageGrid::new(w, h, image)?);
        }
    }

    let stream = EventStream::new(spec.width, spec.height, spec.duration_us, events)?;
    Ok(SynthOutput { stream, labels, images })
}

/// Builds a seeded multi-scene moving-shapes dataset: each scene holds one
/// rectangle (class 1) and one circle (class 2) with randomized geometry
/// and velocity over a 64x64 sensor.
pub fn moving_shapes_dataset(
    seed: u64,
    num_scenes: usize,
    stacks_per_scene: usize,
) -> Result<Vec<SynthOutput>> {
    let mut outputs = Vec::with_capacity(num_scenes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for scene in 0..num_scenes {
        let mut spec = SceneSpec {
            duration_us: stacks_per_scene as u64 * 50_000,
            ..SceneSpec::default()
        };
        let place = |half: f64, rng: &mut ChaCha8Rng| -> (f64, f64) {
            (
                rng.gen_range(half + 1.0..spec.width as f64 - half - 1.0),
                rng.gen_range(half + 1.0..spec.height as f64 - half - 1.0),
            )
        };
        let velocity = |rng: &mut ChaCha8Rng| -> (f64, f64) {
            let speed = rng.gen_range(25.0..80.0);
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            (speed * angle.cos(), speed * angle.sin())
        };
        let rw: f64 = rng.gen_range(18.0..30.0);
        let rh: f64 = rng.gen_range(18.0..30.0);
        let pos_r = place(rw.max(rh) / 2.0, &mut rng);
        let vel_r = velocity(&mut rng);
        let radius: f64 = rng.gen_range(9.0..14.0);
        let pos_c = place(radius, &mut rng);
        let vel_c = velocity(&mut rng);
        spec.shapes = vec![
            ShapeSpec {
                kind: ShapeKind::Rect { w: rw, h: rh },
                class: 1,
                intensity: 0.55,
                pos: pos_r,
                velocity: vel_r,
            },
            ShapeSpec {
                kind: ShapeKind::Circle { r: radius },
                class: 2,
                intensity: 0.9,
                pos: pos_c,
                velocity: vel_c,
            },
        ];
        outputs.push(synthesize_scene(&spec, seed.wrapping_add(scene as u64 + 1))?);
    }
    Ok(outputs)
}
