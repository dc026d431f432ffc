//! Noise-matched reference injection outside the reasoning mask.
//!
//! During the reasoning stage every non-conditioning frame is blended toward
//! the reference latent noised to the current time with the same noise the
//! sampler started from: `z' = m * z + (1 - m) * ((1 - t) * z_c + t * eps)`.
//! The mask is relaxed per step with `alpha_n = min(1, beta * n / N_r)`,
//! `m_n = alpha_n * m + (1 - alpha_n)`.
//!
//! With that formula `m_0` is all ones, so injection is weakest at the first
//! reasoning step and reaches full strength at `n >= N_r / beta`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{interpolate_latent, LatentFrame, LatentStack};
use crate::srm::SpatialMask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RpfiParams {
    pub enabled: bool,
    pub beta: f64,
}

impl Default for RpfiParams {
    fn default() -> Self {
        Self {
            enabled: false,
            beta: 1.5,
        }
    }
}

impl RpfiParams {
    pub fn enabled(beta: f64) -> Self {
        Self {
            enabled: true,
            beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enabled && !(self.beta > 1.0 && self.beta.is_finite()) {
            return Err(Error::config(format!(
                "relaxation factor must exceed 1, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Clean reference plus the initialization noise, frame `j` of `noise`
/// pairing with stack frame `j + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceNoiseCache {
    clean: LatentFrame,
    noise: LatentStack,
}

impl ReferenceNoiseCache {
    pub fn new(clean: LatentFrame, noise: LatentStack) -> Result<Self> {
        clean.check_same_shape(noise.frame(0))?;
        Ok(Self { clean, noise })
    }

    pub fn clean(&self) -> &LatentFrame {
        &self.clean
    }

    pub fn noise(&self) -> &LatentStack {
        &self.noise
    }
}

/// `(1 - t) * z_c + t * eps`.
pub fn noised_reference(clean: &LatentFrame, eps: &LatentFrame, t: f64) -> Result<LatentFrame> {
    interpolate_latent(clean, eps, t)
}

/// `alpha_n = min(1, beta * n / N_r)`.
pub fn relaxation_weight(step: usize, reasoning_steps: usize, beta: f64) -> f64 {
    (step as f64 / reasoning_steps as f64 * beta).min(1.0)
}

/// `alpha_n * mask + (1 - alpha_n)`.
pub fn relaxed_mask(
    mask: &SpatialMask,
    step: usize,
    reasoning_steps: usize,
    beta: f64,
) -> Result<SpatialMask> {
    if step >= reasoning_steps {
        return Err(Error::Index(format!(
            "relaxation step {step} outside the {reasoning_steps}-step reasoning stage"
        )));
    }
    if !(beta > 1.0 && beta.is_finite()) {
        return Err(Error::config(format!(
            "relaxation factor must exceed 1, got {beta}"
        )));
    }
    let alpha = relaxation_weight(step, reasoning_steps, beta);
    let values = mask
        .values()
        .iter()
        .map(|&m| (alpha * m + (1.0 - alpha)).clamp(0.0, 1.0))
        .collect();
    SpatialMask::new(mask.height(), mask.width(), values)
}

/// Blends every frame except frame 0 toward the reference noised to `t`.
pub fn inject(
    stack: &LatentStack,
    cache: &ReferenceNoiseCache,
    mask: &SpatialMask,
    t: f64,
) -> Result<LatentStack> {
    let shape = stack.shape();
    if shape != cache.clean.shape() {
        return Err(Error::dimension(format!(
            "stack frames are {:?}, reference is {:?}",
            shape,
            cache.clean.shape()
        )));
    }
    if mask.height() != shape.height || mask.width() != shape.width {
        return Err(Error::dimension(format!(
            "mask is {}x{}, latent grid is {}x{}",
            mask.height(),
            mask.width(),
            shape.height,
            shape.width
        )));
    }
    if cache.noise.len() + 1 < stack.len() {
        return Err(Error::dimension(format!(
            "{} noise frames cannot cover a {}-frame stack",
            cache.noise.len(),
            stack.len()
        )));
    }
    let plane = shape.spatial_len();
    let mut frames = Vec::with_capacity(stack.len());
    frames.push(stack.frame(0).clone());
    for (f, frame) in stack.frames().iter().enumerate().skip(1) {
        let reference = noised_reference(&cache.clean, cache.noise.frame(f - 1), t)?;
        let values = frame
            .values()
            .iter()
            .zip(reference.values())
            .enumerate()
            .map(|(i, (&z, &r))| {
                let m = mask.values()[i % plane];
                m * z + (1.0 - m) * r
            })
            .collect();
        frames.push(LatentFrame::new(shape, values)?);
    }
    LatentStack::new(frames)
}
