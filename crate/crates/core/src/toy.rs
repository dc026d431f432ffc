//! Synthetic edit scenarios and a closed-form oracle backbone.
//!
//! A scenario fixes a reference latent and an edited latent that differs
//! from it inside a ground-truth region (or everywhere, for a global shift).
//! For a stack of `F` frames the per-frame targets are the linear blends
//! `reference + (j / (F - 1)) * (edited - reference)`.
//!
//! The oracle returns the exact conditional velocity `(z - target) / t`,
//! i.e. `eps - target` for any point `z = (1 - t) * target + t * eps` on the
//! linear interpolant. One Euler step from such a point lands on the same
//! interpolant at the new time, so integrating to `t = 0` recovers the targets
//! up to rounding.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::card::ComplexityLevel;
use crate::error::{Error, Result};
use crate::latent::{FrameShape, LatentFrame, LatentStack, NoiseSource};
use crate::sampler::{Backbone, VelocityStack};
use crate::srm::AttentionMaps;

const REFERENCE_STREAM: u64 = 3;
const ATTENTION_STREAM: u64 = 4;
const PERTURBATION_STREAM: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditKind {
    RegionRecolor,
    RegionReplace,
    GlobalShift,
}

impl EditKind {
    pub fn is_regional(self) -> bool {
        !matches!(self, EditKind::GlobalShift)
    }
}

/// Axis-aligned region in cell coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.top
            && row < self.top + self.height
            && col >= self.left
            && col < self.left + self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub shape: FrameShape,
    pub kind: EditKind,
    /// Required for regional kinds, ignored for a global shift.
    pub region: Option<Rect>,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    reference: LatentFrame,
    edited: LatentFrame,
    gt_region: Vec<bool>,
    instruction: String,
    expected_complexity: ComplexityLevel,
    kind: EditKind,
}

impl Scenario {
    pub fn reference(&self) -> &LatentFrame {
        &self.reference
    }

    /// Final-frame target.
    pub fn edited(&self) -> &LatentFrame {
        &self.edited
    }

    /// Row-major `h x w` indicator of the edited cells.
    pub fn gt_region(&self) -> &[bool] {
        &self.gt_region
    }

    pub fn instruction(&self) -> &str {
        &self.instruction
    }

    pub fn expected_complexity(&self) -> ComplexityLevel {
        self.expected_complexity
    }

    pub fn kind(&self) -> EditKind {
        self.kind
    }

    pub fn shape(&self) -> FrameShape {
        self.reference.shape()
    }

    /// Per-frame targets for a stack of `frames` frames.
    pub fn targets(&self, frames: usize) -> Result<LatentStack> {
        if frames == 0 {
            return Err(Error::input("target stack needs at least one frame"));
        }
        let delta = self.edited.zip_map(&self.reference, |e, r| e - r)?;
        let last = (frames - 1).max(1) as f64;
        let stack = (0..frames)
            .map(|j| {
                if j == 0 {
                    return Ok(self.reference.clone());
                }
                let s = j as f64 / last;
                self.reference.zip_map(&delta, |r, d| r + s * d)
            })
            .collect::<Result<Vec<_>>>()?;
        LatentStack::new(stack)
    }
}

/// Builds a deterministic scenario. The reference is standard normal noise
/// drawn from `seed`; the edit adds `magnitude` inside the region (or
/// everywhere for a global shift).
pub fn make_scenario(
    spec: &ScenarioSpec,
    instruction: impl Into<String>,
    expected_complexity: ComplexityLevel,
    seed: u64,
) -> Result<Scenario> {
    let shape = spec.shape;
    if !spec.magnitude.is_finite() {
        return Err(Error::input("edit magnitude must be finite"));
    }
    let gt_region: Vec<bool> = match (spec.kind.is_regional(), spec.region) {
        (true, Some(rect)) => {
            if rect.height == 0
                || rect.width == 0
                || rect.top + rect.height > shape.height
                || rect.left + rect.width > shape.width
            {
                return Err(Error::input(format!(
                    "region {rect:?} does not fit a {}x{} grid",
                    shape.height, shape.width
                )));
            }
            (0..shape.height)
                .flat_map(|y| (0..shape.width).map(move |x| rect.contains(y, x)))
                .collect()
        }
        (true, None) => return Err(Error::input("regional edits need a region")),
        (false, _) => vec![true; shape.spatial_len()],
    };
    let reference = NoiseSource::with_stream(seed, REFERENCE_STREAM).normal_frame(shape);
    let plane = shape.spatial_len();
    let edited = LatentFrame::new(
        shape,
        reference
            .values()
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                if gt_region[i % plane] {
                    r + spec.magnitude
                } else {
                    r
                }
            })
            .collect(),
    )?;
    Ok(Scenario {
        reference,
        edited,
        gt_region,
        instruction: instruction.into(),
        expected_complexity,
        kind: spec.kind,
    })
}

/// `(z_f - target_f) / t` per frame; zero at `t = 0`.
pub fn oracle_velocity(z: &LatentStack, t: f64, targets: &LatentStack) -> Result<VelocityStack> {
    z.check_same_layout(targets)?;
    let frames = z
        .frames()
        .iter()
        .zip(targets.frames())
        .map(|(zf, tf)| {
            if t == 0.0 {
                Ok(LatentFrame::zeros(zf.shape()))
            } else {
                zf.zip_map(tf, |a, b| (a - b) / t)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    LatentStack::new(frames)
}

/// Synthetic attention levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionParams {
    /// Weight added inside the edit region.
    pub signal: f64,
    /// Upper bound of the uniform background noise.
    pub noise_level: f64,
    pub tokens: usize,
    pub heads: usize,
    pub seed: u64,
}

impl Default for AttentionParams {
    fn default() -> Self {
        Self {
            signal: 1.0,
            noise_level: 0.05,
            tokens: 4,
            heads: 2,
            seed: 0,
        }
    }
}

impl AttentionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.signal >= 0.0 && self.signal.is_finite()) {
            return Err(Error::config("attention signal must be non-negative"));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::config("attention noise level must be non-negative"));
        }
        if self.tokens == 0 || self.heads == 0 {
            return Err(Error::config(
                "attention needs at least one token and one head",
            ));
        }
        Ok(())
    }
}

/// Per `(token, head, frame)` map `signal * [cell in region] + U(0, noise_level)`.
/// A global shift yields the constant `signal` everywhere.
pub fn synth_attention(
    scenario: &Scenario,
    params: &AttentionParams,
    frames: usize,
    layer: usize,
) -> Result<AttentionMaps> {
    params.validate()?;
    let shape = scenario.shape();
    let plane = shape.spatial_len();
    let slices = params.tokens * params.heads * frames;
    let mut noise = NoiseSource::with_stream(params.seed, ATTENTION_STREAM);
    let mut weights = Vec::with_capacity(slices * plane);
    for _ in 0..slices {
        if scenario.kind.is_regional() {
            for &inside in &scenario.gt_region {
                let base = if inside { params.signal } else { 0.0 };
                let jitter = if params.noise_level > 0.0 {
                    params.noise_level * noise.next_uniform()
                } else {
                    0.0
                };
                weights.push(base + jitter);
            }
        } else {
            weights.extend(std::iter::repeat_n(params.signal, plane));
        }
    }
    AttentionMaps::new(
        params.tokens,
        params.heads,
        frames,
        shape.height,
        shape.width,
        layer,
        weights,
    )
}

/// Exact velocity for one scenario plus synthetic attention.
#[derive(Debug, Clone)]
pub struct OracleBackbone {
    scenario: Arc<Scenario>,
    attention: AttentionParams,
}

impl OracleBackbone {
    pub fn new(scenario: Arc<Scenario>, attention: AttentionParams) -> Self {
        Self {
            scenario,
            attention,
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }
}

impl Backbone for OracleBackbone {
    fn velocity(&self, z: &LatentStack, t: f64, _: &str, _: &LatentFrame) -> Result<VelocityStack> {
        let targets = self.scenario.targets(z.len())?;
        oracle_velocity(z, t, &targets)
    }

    fn supports_attention(&self) -> bool {
        true
    }

    fn velocity_with_attention(
        &self,
        z: &LatentStack,
        t: f64,
        instruction: &str,
        reference: &LatentFrame,
        layer: usize,
    ) -> Result<(VelocityStack, AttentionMaps)> {
        let v = self.velocity(z, t, instruction, reference)?;
        let maps = synth_attention(&self.scenario, &self.attention, z.len(), layer)?;
        Ok((v, maps))
    }
}

/// Adds a fixed pseudo-random field `amplitude * g_f` to every frame's
/// velocity, `g_f` standard normal and keyed by frame position.
#[derive(Debug, Clone)]
pub struct PerturbedBackbone<B> {
    inner: B,
    amplitude: f64,
    seed: u64,
}

impl<B: Backbone> PerturbedBackbone<B> {
    pub fn new(inner: B, amplitude: f64, seed: u64) -> Self {
        Self {
            inner,
            amplitude,
            seed,
        }
    }

    fn perturb(&self, v: VelocityStack) -> Result<VelocityStack> {
        let shape = v.shape();
        let frames = v
            .into_frames()
            .into_iter()
            .enumerate()
            .map(|(f, frame)| {
                let g = NoiseSource::with_stream(self.seed, PERTURBATION_STREAM + f as u64)
                    .normal_frame(shape);
                frame.zip_map(&g, |a, b| a + self.amplitude * b)
            })
            .collect::<Result<Vec<_>>>()?;
        LatentStack::new(frames)
    }
}

impl<B: Backbone> Backbone for PerturbedBackbone<B> {
    fn velocity(
        &self,
        z: &LatentStack,
        t: f64,
        instruction: &str,
        reference: &LatentFrame,
    ) -> Result<VelocityStack> {
        self.perturb(self.inner.velocity(z, t, instruction, reference)?)
    }

    fn supports_attention(&self) -> bool {
        self.inner.supports_attention()
    }

    fn velocity_with_attention(
        &self,
        z: &LatentStack,
        t: f64,
        instruction: &str,
        reference: &LatentFrame,
        layer: usize,
    ) -> Result<(VelocityStack, AttentionMaps)> {
        let (v, maps) = self
            .inner
            .velocity_with_attention(z, t, instruction, reference, layer)?;
        Ok((self.perturb(v)?, maps))
    }
}
