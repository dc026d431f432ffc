//! Latent storage, seeded noise, the flow-matching interpolant and timestep
//! schedules.
//!
//! Every value is an `f64`. Frames are stored channel-major
//! (`[channel][row][col]`), stacks are an ordered list of equally shaped frames.

use std::cmp::Ordering;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Channel count and spatial size of a single latent frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FrameShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::input(format!(
                "frame dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
        })
    }

    pub fn spatial_len(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One `C x h x w` latent slice.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFrame {
    shape: FrameShape,
    values: Vec<f64>,
}

impl LatentFrame {
    pub fn new(shape: FrameShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::dimension(format!(
                "expected {} values for shape {:?}, got {}",
                shape.len(),
                shape,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "non-finite latent value at index {bad}"
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn filled(shape: FrameShape, value: f64) -> Self {
        Self {
            shape,
            values: vec![value; shape.len()],
        }
    }

    pub fn zeros(shape: FrameShape) -> Self {
        Self::filled(shape, 0.0)
    }

    /// Builds a frame from `f(channel, row, col)`.
    pub fn from_fn(shape: FrameShape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    values.push(f(c, y, x));
                }
            }
        }
        Self { shape, values }
    }

    pub fn shape(&self) -> FrameShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.values[self.index(channel, row, col)]
    }

    pub fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        (channel * self.shape.height + row) * self.shape.width + col
    }

    /// Elementwise `f(a, b)` over two equally shaped frames.
    pub fn zip_map(&self, other: &LatentFrame, f: impl Fn(f64, f64) -> f64) -> Result<LatentFrame> {
        self.check_same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(LatentFrame {
            shape: self.shape,
            values,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> LatentFrame {
        LatentFrame {
            shape: self.shape,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn check_same_shape(&self, other: &LatentFrame) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dimension(format!(
                "frame shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `||self - other|| / max(||other||, tiny)`.
    pub fn relative_l2_error(&self, other: &LatentFrame) -> Result<f64> {
        let diff = self.zip_map(other, |a, b| a - b)?;
        Ok(diff.l2_norm() / other.l2_norm().max(f64::MIN_POSITIVE))
    }
}

/// An ordered list of `F >= 1` frames sharing one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStack {
    frames: Vec<LatentFrame>,
}

impl LatentStack {
    pub fn new(frames: Vec<LatentFrame>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::input("latent stack needs at least one frame"));
        };
        let shape = first.shape();
        if let Some(i) = frames.iter().position(|f| f.shape() != shape) {
            return Err(Error::dimension(format!(
                "frame {i} has shape {:?}, expected {:?}",
                frames[i].shape(),
                shape
            )));
        }
        Ok(Self { frames })
    }

    /// `head` followed by every frame of `tail`.
    pub fn concat(head: LatentFrame, tail: &LatentStack) -> Result<Self> {
        let mut frames = Vec::with_capacity(tail.len() + 1);
        frames.push(head);
        frames.extend(tail.frames.iter().cloned());
        Self::new(frames)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn shape(&self) -> FrameShape {
        self.frames[0].shape()
    }

    pub fn frames(&self) -> &[LatentFrame] {
        &self.frames
    }

    pub fn frame(&self, index: usize) -> &LatentFrame {
        &self.frames[index]
    }

    pub fn last(&self) -> &LatentFrame {
        self.frames.last().expect("stack is never empty")
    }

    pub fn into_frames(self) -> Vec<LatentFrame> {
        self.frames
    }

    /// Replaces frame `index`; the new frame must have the stack's shape.
    pub fn set_frame(&mut self, index: usize, frame: LatentFrame) -> Result<()> {
        if index >= self.frames.len() {
            return Err(Error::Index(format!(
                "frame {index} of a {}-frame stack",
                self.frames.len()
            )));
        }
        self.frames[0].check_same_shape(&frame)?;
        self.frames[index] = frame;
        Ok(())
    }

    pub fn check_same_layout(&self, other: &LatentStack) -> Result<()> {
        if self.len() != other.len() || self.shape() != other.shape() {
            return Err(Error::dimension(format!(
                "stacks differ: {}x{:?} vs {}x{:?}",
                self.len(),
                self.shape(),
                other.len(),
                other.shape()
            )));
        }
        Ok(())
    }
}

/// Strictly decreasing integration times `t_max = t_0 > ... > t_N = t_min`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSchedule {
    steps: Vec<f64>,
}

impl TimeSchedule {
    /// Wraps an explicit list of times, checking the ordering invariants.
    pub fn from_steps(steps: Vec<f64>) -> Result<Self> {
        if steps.len() < 2 {
            return Err(Error::config("a schedule needs at least two time points"));
        }
        let (first, last) = (steps[0], steps[steps.len() - 1]);
        if !(first > 0.0 && first <= 1.0) {
            return Err(Error::config(format!(
                "t_max must lie in (0, 1], got {first}"
            )));
        }
        if !(last >= 0.0 && last < first) {
            return Err(Error::config(format!(
                "t_min must lie in [0, t_max), got {last}"
            )));
        }
        if let Some(i) = steps
            .windows(2)
            .position(|w| w[1].partial_cmp(&w[0]) != Some(Ordering::Less))
        {
            return Err(Error::Schedule(format!(
                "times must strictly decrease, violated at index {}",
                i + 1
            )));
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    /// Number of integration intervals `N`.
    pub fn num_steps(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn t_max(&self) -> f64 {
        self.steps[0]
    }

    pub fn t_min(&self) -> f64 {
        self.steps[self.steps.len() - 1]
    }
}

/// `N + 1` uniformly spaced times from `t_max` down to `t_min`.
pub fn make_schedule(num_steps: usize, t_max: f64, t_min: f64) -> Result<TimeSchedule> {
    if num_steps == 0 {
        return Err(Error::config("schedule needs at least one step"));
    }
    if !(t_min >= 0.0 && t_min < t_max && t_max <= 1.0) {
        return Err(Error::config(format!(
            "schedule bounds must satisfy 0 <= t_min < t_max <= 1, got t_max={t_max}, t_min={t_min}"
        )));
    }
    let n = num_steps as f64;
    let mut steps: Vec<f64> = (0..=num_steps)
        .map(|i| {
            let i = i as f64;
            ((n - i) * t_max + i * t_min) / n
        })
        .collect();
    steps[0] = t_max;
    steps[num_steps] = t_min;
    TimeSchedule::from_steps(steps)
}

/// `(1 - t) * z0 + t * eps`, elementwise.
pub fn interpolate_latent(z0: &LatentFrame, eps: &LatentFrame, t: f64) -> Result<LatentFrame> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::input(format!(
            "interpolation time {t} outside [0, 1]"
        )));
    }
    z0.zip_map(eps, |a, b| (1.0 - t) * a + t * b)
}

const WEYL_INCREMENT: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based Gaussian noise generator.
///
/// Draw `i` (zero based) is `mix64(key + (i + 1) * 0x9E3779B97F4A7C15)` with
/// wrapping arithmetic, i.e. the SplitMix64 output function evaluated on a
/// Weyl sequence. Uniforms take the top 53 bits as `(x >> 11) + 0.5` scaled by
/// `2^-53`, so they lie strictly inside `(0, 1)`. Normals come in Box-Muller
/// pairs `sqrt(-2 ln u1) * (cos 2πu2, sin 2πu2)` and consume two draws per
/// pair. The transcendental functions come from `libm`, which gives the same
/// bits on every platform.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseSource {
    seed: u64,
    key: u64,
    position: u64,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            key: seed,
            position: 0,
        }
    }

    /// An independent stream keyed by `(seed, stream)`. Stream 0 is the same
    /// sequence as [`NoiseSource::new`].
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let key = if stream == 0 {
            seed
        } else {
            mix64(seed ^ mix64(stream.wrapping_mul(WEYL_INCREMENT)))
        };
        Self {
            seed,
            key,
            position: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 64-bit draws consumed so far.
    pub fn position(&self) -> u64 {
        self.position
    }

    pub fn next_u64(&mut self) -> u64 {
        self.position += 1;
        mix64(
            self.key
                .wrapping_add(self.position.wrapping_mul(WEYL_INCREMENT)),
        )
    }

    /// Uniform in the open interval `(0, 1)`.
    pub fn next_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        let radius = libm::sqrt(-2.0 * libm::log(u1));
        let angle = 2.0 * PI * u2;
        (radius * libm::cos(angle), radius * libm::sin(angle))
    }

    /// Fills `out` with standard normals. An odd length discards the sine half
    /// of the last pair.
    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for chunk in out.chunks_mut(2) {
            let (a, b) = self.next_normal_pair();
            chunk[0] = a;
            if let Some(slot) = chunk.get_mut(1) {
                *slot = b;
            }
        }
    }

    pub fn normal_frame(&mut self, shape: FrameShape) -> LatentFrame {
        let mut values = vec![0.0; shape.len()];
        self.fill_normal(&mut values);
        LatentFrame { shape, values }
    }

    /// A `frames x C x h x w` stack of standard normals. Frames are filled in
    /// order, each starting on a fresh Box-Muller pair.
    pub fn sample_noise(&mut self, frames: usize, shape: FrameShape) -> Result<LatentStack> {
        if frames == 0 {
            return Err(Error::input("noise stack needs at least one frame"));
        }
        let frames = (0..frames).map(|_| self.normal_frame(shape)).collect();
        LatentStack::new(frames)
    }
}
