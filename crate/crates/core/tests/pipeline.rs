mod common;

use std::sync::Mutex;

use common::{oracle, random_scenario, region_scenario};
use editsched::card::{Allocation, Lexicon};
use editsched::latent::{FrameShape, LatentFrame, LatentStack, NoiseSource};
use editsched::rpfi::RpfiParams;
use editsched::sampler::{
    run_baseline, run_edit, Backbone, BaselineOptions, EditOptions, VelocityStack,
};
use editsched::toy::{OracleBackbone, Rect};
use editsched::Error;
use proptest::prelude::*;

/// Oracle that remembers every stack it was asked about.
struct Recording {
    inner: OracleBackbone,
    seen: Mutex<Vec<LatentStack>>,
}

impl Backbone for Recording {
    fn velocity(
        &self,
        z: &LatentStack,
        t: f64,
        instruction: &str,
        reference: &LatentFrame,
    ) -> editsched::Result<VelocityStack> {
        self.seen.lock().unwrap().push(z.clone());
        self.inner.velocity(z, t, instruction, reference)
    }
}

struct Failing;

impl Backbone for Failing {
    fn velocity(
        &self,
        _: &LatentStack,
        _: f64,
        _: &str,
        _: &LatentFrame,
    ) -> editsched::Result<VelocityStack> {
        Err(Error::Backbone("out of memory".into()))
    }
}

/// Returns one frame fewer than it was given.
struct Truncating;

impl Backbone for Truncating {
    fn velocity(
        &self,
        z: &LatentStack,
        _: f64,
        _: &str,
        _: &LatentFrame,
    ) -> editsched::Result<VelocityStack> {
        let mut frames = z.frames().to_vec();
        frames.pop();
        if frames.is_empty() {
            frames.push(z.frame(0).clone());
            frames.push(z.frame(0).clone());
        }
        LatentStack::new(frames)
    }
}

fn shape() -> FrameShape {
    FrameShape::new(2, 8, 8).unwrap()
}

fn rect() -> Rect {
    Rect {
        top: 2,
        left: 1,
        height: 4,
        width: 5,
    }
}

fn no_mask() -> EditOptions {
    EditOptions {
        srm: None,
        ..EditOptions::default()
    }
}

#[test]
fn hat_instruction_cost_ledger() {
    let s = region_scenario(shape(), rect(), 1.0, "change the hat to a red cap", 1);
    let r = run_edit(
        &oracle(&s),
        s.reference(),
        s.instruction(),
        &Lexicon::builtin(),
        &EditOptions::default(),
    )
    .unwrap();
    assert_eq!(
        (r.config.reasoning_steps, r.config.reasoning_frames),
        (3, 2)
    );
    assert_eq!(r.cost.stage1_frame_steps, 12);
    assert_eq!(r.cost.stage2_frame_steps, 54);
    assert_eq!(r.cost.pilot_frame_steps, 2);
    assert_eq!(r.cost.total(), 68);
    assert_eq!(r.cost.stage1_frame_steps_excluding_conditioning(), 9);
}

#[test]
fn baseline_costs() {
    let s = region_scenario(shape(), rect(), 1.0, "add a hat", 2);
    let b = oracle(&s);
    let full = run_baseline(
        &b,
        s.reference(),
        s.instruction(),
        &BaselineOptions::default(),
    )
    .unwrap();
    assert_eq!(full.cost.total(), 140);
    assert_eq!(full.cost.pilot_frame_steps, 0);
    let plain = BaselineOptions {
        reasoning_steps: 0,
        ..BaselineOptions::default()
    };
    let r = run_baseline(&b, s.reference(), s.instruction(), &plain).unwrap();
    assert_eq!(r.cost.total(), 60);
    assert!(r.final_frame.relative_l2_error(s.edited()).unwrap() < 1e-9);
}

#[test]
fn stack_lengths_follow_the_two_stages() {
    let s = region_scenario(shape(), rect(), 0.7, "add a fedora hat", 3);
    let rec = Recording {
        inner: oracle(&s),
        seen: Mutex::new(Vec::new()),
    };
    let options = EditOptions {
        keep_trace: true,
        ..no_mask()
    };
    let r = run_edit(
        &rec,
        s.reference(),
        s.instruction(),
        &Lexicon::builtin(),
        &options,
    )
    .unwrap();
    let (nr, frames) = (r.config.reasoning_steps, r.config.reasoning_frames);
    assert_eq!((nr, frames), (8, 4));

    let trace = r.trace.unwrap();
    let seen = rec.seen.into_inner().unwrap();
    assert_eq!(trace.len(), 30);
    assert_eq!(seen.len(), 30);
    for (n, (after, before)) in trace.iter().zip(&seen).enumerate() {
        let expected = if n < nr { frames + 2 } else { 2 };
        assert_eq!(after.len(), expected, "step {n}");
        assert_eq!(before.len(), expected, "step {n}");
        assert_eq!(
            after.frame(0),
            s.reference(),
            "conditioning frame at step {n}"
        );
        assert_eq!(before.frame(0), s.reference());
    }
    // entering stage 2 keeps only the last stage-1 frame
    assert_eq!(seen[nr].frame(1), trace[nr - 1].last());
    assert_eq!(&r.final_frame, trace[29].last());
}

#[test]
fn oracle_exactness_across_configurations() {
    let mut rng = NoiseSource::new(77);
    let lexicon = Lexicon::builtin();
    for case in 0..12 {
        let s = random_scenario(&mut rng);
        let b = oracle(&s);
        for rpfi in [false, true] {
            let options = EditOptions {
                rpfi: RpfiParams {
                    enabled: rpfi,
                    beta: 1.5,
                },
                seed: case,
                ..EditOptions::default()
            };
            let r = run_edit(&b, s.reference(), s.instruction(), &lexicon, &options).unwrap();
            let err = r.final_frame.relative_l2_error(s.edited()).unwrap();
            assert!(err < 1e-9, "case {case} rpfi {rpfi}: {err}");
        }
    }
}

#[test]
fn no_edit_scenario_is_neutral_with_injection() {
    let s = region_scenario(shape(), rect(), 0.0, "the robot picks up the cup", 4);
    let options = EditOptions {
        rpfi: RpfiParams::enabled(2.0),
        keep_trace: true,
        ..EditOptions::default()
    };
    let r = run_edit(
        &oracle(&s),
        s.reference(),
        s.instruction(),
        &Lexicon::builtin(),
        &options,
    )
    .unwrap();
    let diff: f64 = r
        .final_frame
        .values()
        .iter()
        .zip(s.reference().values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-12, "{diff}");
}

#[test]
fn output_changes_only_inside_region() {
    let s = region_scenario(shape(), rect(), 1.3, "replace the dog with a cat", 5);
    let r = run_edit(
        &oracle(&s),
        s.reference(),
        s.instruction(),
        &Lexicon::builtin(),
        &EditOptions::default(),
    )
    .unwrap();
    let plane = shape().spatial_len();
    for (i, (out, reference)) in r
        .final_frame
        .values()
        .iter()
        .zip(s.reference().values())
        .enumerate()
    {
        let moved = (out - reference).abs();
        if s.gt_region()[i % plane] {
            assert!((moved - 1.3).abs() < 1e-9);
        } else {
            assert!(moved < 1e-9);
        }
    }
}

#[test]
fn initial_noise_is_the_seeded_draw() {
    let s = region_scenario(shape(), rect(), 1.0, "the robot picks up the cup", 6);
    let b = oracle(&s);
    let lexicon = Lexicon::builtin();
    let mut runs = Vec::new();
    for (srm, rpfi) in [(false, false), (true, false), (true, true)] {
        let options = EditOptions {
            srm: srm.then(Default::default),
            rpfi: RpfiParams {
                enabled: rpfi,
                beta: 1.5,
            },
            seed: 123,
            ..EditOptions::default()
        };
        runs.push(run_edit(&b, s.reference(), s.instruction(), &lexicon, &options).unwrap());
    }
    let expected = NoiseSource::new(123).sample_noise(9, shape()).unwrap();
    for r in &runs {
        assert_eq!(r.init_noise, expected);
    }
}

#[test]
fn same_inputs_same_result() {
    let s = region_scenario(shape(), rect(), 0.9, "the woman lifts the box", 7);
    let options = EditOptions {
        rpfi: RpfiParams::enabled(1.5),
        keep_trace: true,
        seed: 5,
        ..EditOptions::default()
    };
    let run = || {
        run_edit(
            &oracle(&s),
            s.reference(),
            s.instruction(),
            &Lexicon::builtin(),
            &options,
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.final_frame, b.final_frame);
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.mask, b.mask);
    assert_eq!(a.cost, b.cost);
}

#[test]
fn forced_baseline_allocation_matches_baseline() {
    let s = region_scenario(shape(), rect(), 1.1, "add a hat", 8);
    let b = oracle(&s);
    for seed in [0, 1, 99] {
        let edit = EditOptions {
            allocation: Some(Allocation::new(10, 8)),
            seed,
            keep_trace: true,
            ..no_mask()
        };
        let base = BaselineOptions {
            seed,
            keep_trace: true,
            ..BaselineOptions::default()
        };
        let x = run_edit(
            &b,
            s.reference(),
            s.instruction(),
            &Lexicon::builtin(),
            &edit,
        )
        .unwrap();
        let y = run_baseline(&b, s.reference(), s.instruction(), &base).unwrap();
        assert_eq!(x.final_frame, y.final_frame);
        assert_eq!(x.trace, y.trace);
        assert_eq!(x.cost, y.cost);
    }
}

#[test]
fn oversized_allocation_is_clamped_with_warning() {
    let s = region_scenario(shape(), rect(), 1.0, "add a hat", 9);
    let options = EditOptions {
        allocation: Some(Allocation::new(45, 2)),
        ..no_mask()
    };
    let r = run_edit(
        &oracle(&s),
        s.reference(),
        s.instruction(),
        &Lexicon::builtin(),
        &options,
    )
    .unwrap();
    assert_eq!(r.config.reasoning_steps, 30);
    assert_eq!(r.cost.total(), 30 * 4);
    assert_eq!(r.warnings.len(), 1);
    assert!(r.final_frame.relative_l2_error(s.edited()).unwrap() < 1e-9);
}

#[test]
fn backbone_errors_propagate() {
    let s = region_scenario(shape(), rect(), 1.0, "add a hat", 10);
    let lex = Lexicon::builtin();
    let err = run_edit(&Failing, s.reference(), s.instruction(), &lex, &no_mask()).unwrap_err();
    assert!(matches!(err, Error::Backbone(m) if m == "out of memory"));
    let err = run_edit(
        &Truncating,
        s.reference(),
        s.instruction(),
        &lex,
        &no_mask(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Backbone(_)));
    // masks need attention maps
    let err = run_edit(
        &Failing,
        s.reference(),
        s.instruction(),
        &lex,
        &EditOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Capability(_)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn oracle_exact_for_any_step_count(steps in 1usize..40, seed in any::<u64>(), mag in -3.0f64..3.0) {
        let s = region_scenario(FrameShape::new(1, 5, 4).unwrap(), Rect { top: 1, left: 0, height: 3, width: 2 }, mag, "add a hat", seed);
        let options = EditOptions { steps, seed, ..EditOptions::default() };
        let r = run_edit(&oracle(&s), s.reference(), s.instruction(), &Lexicon::builtin(), &options).unwrap();
        prop_assert!(r.final_frame.relative_l2_error(s.edited()).unwrap() < 1e-9);
        let nr = r.config.reasoning_steps;
        prop_assert_eq!(r.cost.stage1_frame_steps, nr * (r.config.reasoning_frames + 2));
        prop_assert_eq!(r.cost.stage2_frame_steps, (steps - nr) * 2);
        prop_assert_eq!(r.cost.pilot_frame_steps, 2);
    }
}
