//! Region-level quality proxies for toy edits.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sampler::EditResult;
use crate::srm::SpatialMask;
use crate::toy::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    /// MSE against the edit target inside the ground-truth region.
    pub edit_mse: f64,
    /// MSE against the reference outside the region.
    pub preserve_mse: f64,
    /// IoU of `{mask > 0.5}` with the region.
    pub mask_iou: f64,
    pub frame_steps: usize,
}

/// Intersection over union; two empty sets give 1.
pub fn region_iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn mask_iou(mask: &SpatialMask, region: &[bool]) -> f64 {
    let above: Vec<bool> = mask.values().iter().map(|&v| v > 0.5).collect();
    region_iou(&above, region)
}

pub fn evaluate_edit(result: &EditResult, scenario: &Scenario) -> Result<Metrics> {
    let out = &result.final_frame;
    out.check_same_shape(scenario.reference())?;
    let region = scenario.gt_region();
    if result.mask.values().len() != region.len() {
        return Err(Error::dimension("mask and region sizes differ"));
    }
    let plane = region.len();
    let (mut edit_sum, mut edit_n) = (0.0, 0usize);
    let (mut keep_sum, mut keep_n) = (0.0, 0usize);
    for (i, &v) in out.values().iter().enumerate() {
        if region[i % plane] {
            edit_sum += (v - scenario.edited().values()[i]).powi(2);
            edit_n += 1;
        } else {
            keep_sum += (v - scenario.reference().values()[i]).powi(2);
            keep_n += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(Metrics {
        edit_mse: mean(edit_sum, edit_n),
        preserve_mse: mean(keep_sum, keep_n),
        mask_iou: mask_iou(&result.mask, region),
        frame_steps: result.cost.total(),
    })
}
