#![allow(dead_code)]

use std::sync::Arc;

use editsched::card::ComplexityLevel;
use editsched::latent::{FrameShape, NoiseSource};
use editsched::toy::{
    make_scenario, AttentionParams, EditKind, OracleBackbone, Rect, Scenario, ScenarioSpec,
};

pub const INSTRUCTIONS: [(&str, ComplexityLevel); 6] = [
    ("change the hat to a red cap", ComplexityLevel::Low),
    ("apply a watercolor style", ComplexityLevel::Low),
    ("add a fedora hat", ComplexityLevel::Medium),
    ("replace the dog with a cat", ComplexityLevel::Medium),
    ("the robot picks up the cup", ComplexityLevel::High),
    ("the woman lifts the box", ComplexityLevel::High),
];

fn below(rng: &mut NoiseSource, n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}

/// Draws a scenario with `channels <= 4`, grid sides in `[2, 16]`.
pub fn random_scenario(rng: &mut NoiseSource) -> Scenario {
    let shape = FrameShape::new(1 + below(rng, 4), 2 + below(rng, 15), 2 + below(rng, 15)).unwrap();
    let kind = [
        EditKind::RegionRecolor,
        EditKind::RegionReplace,
        EditKind::GlobalShift,
    ][below(rng, 3)];
    let height = 1 + below(rng, shape.height);
    let width = 1 + below(rng, shape.width);
    let region = Rect {
        top: below(rng, shape.height - height + 1),
        left: below(rng, shape.width - width + 1),
        height,
        width,
    };
    let magnitude = 4.0 * rng.next_uniform() - 2.0;
    let (instruction, level) = INSTRUCTIONS[below(rng, INSTRUCTIONS.len())];
    let spec = ScenarioSpec {
        shape,
        kind,
        region: kind.is_regional().then_some(region),
        magnitude,
    };
    make_scenario(&spec, instruction, level, rng.next_u64()).unwrap()
}

pub fn region_scenario(
    shape: FrameShape,
    region: Rect,
    magnitude: f64,
    instruction: &str,
    seed: u64,
) -> Scenario {
    let spec = ScenarioSpec {
        shape,
        kind: EditKind::RegionReplace,
        region: Some(region),
        magnitude,
    };
    make_scenario(&spec, instruction, ComplexityLevel::Medium, seed).unwrap()
}

pub fn oracle(s: &Scenario) -> OracleBackbone {
    OracleBackbone::new(Arc::new(s.clone()), AttentionParams::default())
}

pub fn oracle_quiet(s: &Scenario) -> OracleBackbone {
    OracleBackbone::new(
        Arc::new(s.clone()),
        AttentionParams {
            noise_level: 0.0,
            ..AttentionParams::default()
        },
    )
}

pub fn fixture_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/pilot.toml")
}
