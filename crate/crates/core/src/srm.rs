//! Spatial reasoning masks from instruction cross-attention.
//!
//! Pipeline: mean over tokens, heads and frames → `sigmoid((m - mean) / tau)`
//! → separable Gaussian blur with replicate borders.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{interpolate_latent, LatentFrame, LatentStack, NoiseSource};
use crate::sampler::Backbone;

/// Non-negative attention weights indexed `[token][head][frame][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaps {
    pub tokens: usize,
    pub heads: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Backbone layer the maps were read from.
    pub layer: usize,
    weights: Vec<f64>,
}

impl AttentionMaps {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        tokens: usize,
        heads: usize,
        frames: usize,
        height: usize,
        width: usize,
        layer: usize,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if tokens == 0 || heads == 0 || frames == 0 || height == 0 || width == 0 {
            return Err(Error::input("attention maps must have positive dimensions"));
        }
        let expected = tokens * heads * frames * height * width;
        if weights.len() != expected {
            return Err(Error::dimension(format!(
                "expected {expected} attention weights, got {}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::input(
                "attention weights must be finite and non-negative",
            ));
        }
        Ok(Self {
            tokens,
            heads,
            frames,
            height,
            width,
            layer,
            weights,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The `height x width` slice for one `(token, head, frame)`.
    pub fn slice(&self, token: usize, head: usize, frame: usize) -> &[f64] {
        let plane = self.height * self.width;
        let start = ((token * self.heads + head) * self.frames + frame) * plane;
        &self.weights[start..start + plane]
    }
}

/// Aggregated `h x w` attention before thresholding.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl RawMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::dimension(format!(
                "raw map {height}x{width} with {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("raw map values must be finite"));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }
}

/// An `h x w` map with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpatialMask {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SpatialMask {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::dimension(format!(
                "mask {height}x{width} with {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::input("mask values must lie in [0, 1]"));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self::filled(height, width, 1.0).expect("ones mask")
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0).expect("zeros mask")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// Mask hyperparameters. Defaults: `tau = 0.1`, `kernel = 5`, layer 12.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SrmParams {
    pub tau: f64,
    pub kernel: usize,
    pub layer: usize,
}

impl Default for SrmParams {
    fn default() -> Self {
        Self {
            tau: 0.1,
            kernel: 5,
            layer: 12,
        }
    }
}

impl SrmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::config(format!(
                "blur kernel must be odd and >= 1, got {}",
                self.kernel
            )));
        }
        Ok(())
    }
}

/// Mean over tokens, heads and frames at each spatial cell.
pub fn aggregate_attention(maps: &AttentionMaps) -> Result<RawMap> {
    let plane = maps.height * maps.width;
    if plane == 0 || maps.weights.is_empty() {
        return Err(Error::input("empty attention map"));
    }
    let mut acc = vec![0.0; plane];
    for slice in maps.weights.chunks_exact(plane) {
        for (a, &w) in acc.iter_mut().zip(slice) {
            *a += w;
        }
    }
    let count = (maps.tokens * maps.heads * maps.frames) as f64;
    for a in &mut acc {
        *a /= count;
    }
    RawMap::new(maps.height, maps.width, acc)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `sigmoid((m - mean(m)) / tau)` elementwise.
pub fn threshold_mask(raw: &RawMap, tau: f64) -> Result<SpatialMask> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::config(format!("tau must be positive, got {tau}")));
    }
    // offset by the first value so a constant map has an exact mean
    let pivot = raw.values[0];
    let mean = pivot + raw.values.iter().map(|v| v - pivot).sum::<f64>() / raw.values.len() as f64;
    let values = raw
        .values
        .iter()
        .map(|&v| sigmoid((v - mean) / tau))
        .collect();
    SpatialMask::new(raw.height, raw.width, values)
}

/// Normalized 1D Gaussian taps of width `k`, with `sigma = (k - 1) / 4`.
pub fn gaussian_kernel(k: usize) -> Result<Vec<f64>> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::config(format!(
            "blur kernel must be odd and >= 1, got {k}"
        )));
    }
    if k == 1 {
        return Ok(vec![1.0]);
    }
    let sigma = (k - 1) as f64 / 4.0;
    let radius = (k / 2) as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|w| w / total).collect())
}

/// Separable Gaussian blur with replicate padding.
pub fn blur_mask(mask: &SpatialMask, k: usize) -> Result<SpatialMask> {
    let taps = gaussian_kernel(k)?;
    if k == 1 {
        return Ok(mask.clone());
    }
    let (h, w) = (mask.height, mask.width);
    let radius = (k / 2) as isize;
    // dividing by the summed taps keeps constant masks exactly constant
    let norm: f64 = taps.iter().sum();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;

    let mut horizontal = vec![0.0; h * w];
    for y in 0..h {
        let row = &mask.values[y * w..(y + 1) * w];
        for x in 0..w {
            horizontal[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(i, &t)| t * row[clamp(x as isize + i as isize - radius, w)])
                .sum::<f64>()
                / norm;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let v: f64 = taps
                .iter()
                .enumerate()
                .map(|(i, &t)| t * horizontal[clamp(y as isize + i as isize - radius, h) * w + x])
                .sum::<f64>()
                / norm;
            // rounding can nudge a convex combination just outside [0, 1]
            out[y * w + x] = v.clamp(0.0, 1.0);
        }
    }
    SpatialMask::new(h, w, out)
}

/// Mean mask value, the fraction of the frame marked for reasoning.
pub fn mask_coverage(mask: &SpatialMask) -> f64 {
    mask.values.iter().sum::<f64>() / mask.values.len() as f64
}

/// Mask plus the frame-steps spent on the pilot pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SrmOutput {
    pub mask: SpatialMask,
    pub raw: RawMap,
    pub pilot_frame_steps: usize,
}

/// One backbone evaluation at `t_max` on `[reference, noised reference]`,
/// then aggregate → threshold → blur.
///
/// The pilot noise frame is drawn from `noise`.
pub fn compute_srm(
    backbone: &dyn Backbone,
    instruction: &str,
    reference: &LatentFrame,
    t_max: f64,
    params: &SrmParams,
    noise: &mut NoiseSource,
) -> Result<SrmOutput> {
    params.validate()?;
    if !backbone.supports_attention() {
        return Err(Error::Capability("attention extraction"));
    }
    let eps = noise.normal_frame(reference.shape());
    let noisy = interpolate_latent(reference, &eps, t_max)?;
    let pilot = LatentStack::new(vec![reference.clone(), noisy])?;
    let (_, maps) =
        backbone.velocity_with_attention(&pilot, t_max, instruction, reference, params.layer)?;
    let shape = reference.shape();
    if maps.height != shape.height || maps.width != shape.width {
        return Err(Error::dimension(format!(
            "attention is {}x{}, latent grid is {}x{}",
            maps.height, maps.width, shape.height, shape.width
        )));
    }
    let raw = aggregate_attention(&maps)?;
    let sharp = threshold_mask(&raw, params.tau)?;
    let mask = blur_mask(&sharp, params.kernel)?;
    Ok(SrmOutput {
        mask,
        raw,
        pilot_frame_steps: pilot.len(),
    })
}
