//! Browser bindings: instruction classification, soft allocation and the
//! spatial mask for a synthetic attention pattern.
//!
//! Each export has a plain Rust counterpart (the `*_json` / `mask_values`
//! functions) so the logic is testable off the browser.

use std::sync::Arc;

use serde_json::json;
use wasm_bindgen::prelude::*;

use editsched::card::{
    allocate, classify_instruction, Allocation, ComplexityDistribution, ComplexityLevel,
    ComplexityLevels, Lexicon,
};
use editsched::latent::{FrameShape, NoiseSource};
use editsched::sampler::CostLedger;
use editsched::srm::{compute_srm, SrmParams};
use editsched::toy::{
    make_scenario, AttentionParams, EditKind, OracleBackbone, Rect, ScenarioSpec,
};
use editsched::Result;

const BASELINE: Allocation = Allocation::new(10, 8);

fn budget_json(dist: &ComplexityDistribution, steps: usize) -> Result<serde_json::Value> {
    let levels = ComplexityLevels::default();
    levels.validate(steps)?;
    let allocation = allocate(dist, &levels);
    let cost = CostLedger::planned(allocation, steps, true).total();
    let baseline = CostLedger::planned(BASELINE, steps, false).total();
    Ok(json!({
        "distribution": dist.probs(),
        "level": dist.most_likely(),
        "reasoning_steps": allocation.reasoning_steps.min(steps),
        "reasoning_frames": allocation.reasoning_frames,
        "frame_steps": cost,
        "baseline_frame_steps": baseline,
        "speedup": baseline as f64 / cost as f64,
    }))
}

/// Keyword classification of `instruction` with the built-in lexicon.
pub fn classify_json(instruction: &str, steps: usize) -> Result<String> {
    let dist = classify_instruction(instruction, &Lexicon::builtin())?;
    let mut doc = budget_json(&dist, steps)?;
    doc["instruction"] = json!(instruction);
    Ok(doc.to_string())
}

/// Allocation for an arbitrary `(low, medium, high)` distribution. The
/// weights are normalized first so sliders need not sum to one.
pub fn allocate_json(low: f64, medium: f64, high: f64, steps: usize) -> Result<String> {
    let total = low + medium + high;
    let dist = if total > 0.0 {
        ComplexityDistribution::new(low / total, medium / total, high / total)?
    } else {
        ComplexityDistribution::one_hot(ComplexityLevel::Medium)
    };
    Ok(budget_json(&dist, steps)?.to_string())
}

/// Row-major mask for a single rectangular edit region on a `height x width`
/// grid with synthetic attention of the given background noise.
#[allow(clippy::too_many_arguments)]
pub fn mask_values(
    height: usize,
    width: usize,
    top: usize,
    left: usize,
    region_height: usize,
    region_width: usize,
    noise_level: f64,
    tau: f64,
    kernel: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let spec = ScenarioSpec {
        shape: FrameShape::new(1, height, width)?,
        kind: EditKind::RegionReplace,
        region: Some(Rect {
            top,
            left,
            height: region_height,
            width: region_width,
        }),
        magnitude: 1.0,
    };
    let scenario = Arc::new(make_scenario(&spec, "demo", ComplexityLevel::Medium, seed)?);
    let backbone = OracleBackbone::new(
        Arc::clone(&scenario),
        AttentionParams {
            noise_level,
            seed,
            ..AttentionParams::default()
        },
    );
    let params = SrmParams {
        tau,
        kernel,
        ..SrmParams::default()
    };
    let out = compute_srm(
        &backbone,
        "demo",
        scenario.reference(),
        1.0,
        &params,
        &mut NoiseSource::new(seed),
    )?;
    Ok(out.mask.values().to_vec())
}

fn js(e: editsched::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// JSON string: level, distribution, allocation, frame-steps and speedup.
#[wasm_bindgen]
pub fn classify(instruction: &str, steps: usize) -> std::result::Result<String, JsError> {
    classify_json(instruction, steps).map_err(js)
}

/// JSON string, same fields as `classify`.
#[wasm_bindgen(js_name = allocateSoft)]
pub fn allocate_soft(
    low: f64,
    medium: f64,
    high: f64,
    steps: usize,
) -> std::result::Result<String, JsError> {
    allocate_json(low, medium, high, steps).map_err(js)
}

/// Mask values in row-major order.
#[wasm_bindgen(js_name = spatialMask)]
#[allow(clippy::too_many_arguments)]
pub fn spatial_mask(
    height: usize,
    width: usize,
    top: usize,
    left: usize,
    region_height: usize,
    region_width: usize,
    noise_level: f64,
    tau: f64,
    kernel: usize,
    seed: u64,
) -> std::result::Result<Vec<f64>, JsError> {
    mask_values(
        height,
        width,
        top,
        left,
        region_height,
        region_width,
        noise_level,
        tau,
        kernel,
        seed,
    )
    .map_err(js)
}
