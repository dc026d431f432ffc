//! Two-stage Euler sampler with adaptive reasoning frames.
//!
//! Stage 0 picks `(N_r*, r*)` from the instruction and builds the spatial
//! mask. Stage 1 integrates `[z_c, r* reasoning frames, output frame]`
//! jointly for `N_r*` steps, optionally injecting the noised reference after
//! each step. At step `N_r*` the reasoning frames are dropped and stage 2
//! integrates `[z_c, output frame]` for the remaining steps. The conditioning
//! frame is reset to the clean reference after every step.
//!
//! Compute is counted in frame-steps: one frame through one backbone call.

use std::cmp::Ordering;

use serde::Serialize;

use crate::card::{
    allocate, Allocation, ComplexityDistribution, ComplexityLevels, ComplexityPredictor,
    ReasoningConfig,
};
use crate::error::{Error, Result};
use crate::latent::{make_schedule, LatentFrame, LatentStack, NoiseSource};
use crate::rpfi::{inject, relaxed_mask, ReferenceNoiseCache, RpfiParams};
use crate::srm::{compute_srm, AttentionMaps, SpatialMask, SrmParams};

/// Noise stream used by the mask pilot pass. Stream 0 (the run seed itself)
/// is reserved for the initialization noise so the pilot never shifts it.
pub const PILOT_NOISE_STREAM: u64 = 1;

pub type VelocityStack = LatentStack;

/// A velocity predictor for a stack of latent frames.
///
/// Implementations must be usable from several threads at once.
pub trait Backbone: Send + Sync {
    fn velocity(
        &self,
        z: &LatentStack,
        t: f64,
        instruction: &str,
        reference: &LatentFrame,
    ) -> Result<VelocityStack>;

    fn supports_attention(&self) -> bool {
        false
    }

    /// Velocity plus the instruction cross-attention read at `layer`.
    fn velocity_with_attention(
        &self,
        _z: &LatentStack,
        _t: f64,
        _instruction: &str,
        _reference: &LatentFrame,
        _layer: usize,
    ) -> Result<(VelocityStack, AttentionMaps)> {
        Err(Error::Capability("attention extraction"))
    }
}

/// Frame-step accounting for one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CostLedger {
    pub pilot_frame_steps: usize,
    pub stage1_frame_steps: usize,
    pub stage2_frame_steps: usize,
    /// Stack length during stage 1, `r* + 2` (conditioning + reasoning + output).
    pub reasoning_stack_len: usize,
    pub reasoning_steps: usize,
}

impl CostLedger {
    /// Ledger a run with this allocation will produce, without running it.
    /// `with_mask` adds the two-frame pilot pass.
    pub fn planned(allocation: Allocation, total_steps: usize, with_mask: bool) -> Self {
        let reasoning_steps = allocation.reasoning_steps.min(total_steps);
        let stack = allocation.reasoning_frames + 2;
        Self {
            pilot_frame_steps: if with_mask { 2 } else { 0 },
            stage1_frame_steps: reasoning_steps * stack,
            stage2_frame_steps: (total_steps - reasoning_steps) * 2,
            reasoning_stack_len: stack,
            reasoning_steps,
        }
    }

    pub fn total(&self) -> usize {
        self.pilot_frame_steps + self.stage1_frame_steps + self.stage2_frame_steps
    }

    /// Stage 1 cost counting `r* + 1` frames per step, i.e. without the
    /// conditioning frame.
    pub fn stage1_frame_steps_excluding_conditioning(&self) -> usize {
        self.reasoning_steps * self.reasoning_stack_len.saturating_sub(1)
    }
}

#[derive(Debug, Clone)]
pub struct EditResult {
    pub final_frame: LatentFrame,
    /// Stack after every step, when requested.
    pub trace: Option<Vec<LatentStack>>,
    pub cost: CostLedger,
    pub config: ReasoningConfig,
    pub mask: SpatialMask,
    /// Predicted complexity; `None` when the allocation was fixed.
    pub distribution: Option<ComplexityDistribution>,
    /// Initialization noise, `r* + 1` frames.
    pub init_noise: LatentStack,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditOptions {
    pub levels: ComplexityLevels,
    pub steps: usize,
    pub t_max: f64,
    pub t_min: f64,
    /// `None` disables the mask (all ones, no pilot pass).
    pub srm: Option<SrmParams>,
    pub rpfi: RpfiParams,
    pub seed: u64,
    /// Skips prediction and uses this allocation.
    pub allocation: Option<Allocation>,
    pub keep_trace: bool,
}

impl Default for EditOptions {
    fn default() -> Self {
        Self {
            levels: ComplexityLevels::default(),
            steps: 30,
            t_max: 1.0,
            t_min: 0.0,
            srm: Some(SrmParams::default()),
            rpfi: RpfiParams::default(),
            seed: 0,
            allocation: None,
            keep_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOptions {
    pub steps: usize,
    pub t_max: f64,
    pub t_min: f64,
    pub reasoning_steps: usize,
    pub reasoning_frames: usize,
    pub seed: u64,
    pub keep_trace: bool,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        Self {
            steps: 30,
            t_max: 1.0,
            t_min: 0.0,
            reasoning_steps: 10,
            reasoning_frames: 8,
            seed: 0,
            keep_trace: false,
        }
    }
}

/// Forward Euler along decreasing time: `z + (t_next - t) * v`.
pub fn euler_step(z: &LatentStack, v: &VelocityStack, t: f64, t_next: f64) -> Result<LatentStack> {
    if t_next.partial_cmp(&t) != Some(Ordering::Less) {
        return Err(Error::Schedule(format!(
            "Euler step must decrease time, got {t} -> {t_next}"
        )));
    }
    z.check_same_layout(v)?;
    let dt = t_next - t;
    let frames = z
        .frames()
        .iter()
        .zip(v.frames())
        .map(|(zf, vf)| zf.zip_map(vf, |a, b| a + dt * b))
        .collect::<Result<Vec<_>>>()?;
    LatentStack::new(frames)
}

/// Adaptive edit: predicted allocation, optional mask and injection.
pub fn run_edit(
    backbone: &dyn Backbone,
    reference: &LatentFrame,
    instruction: &str,
    predictor: &dyn ComplexityPredictor,
    options: &EditOptions,
) -> Result<EditResult> {
    options.rpfi.validate()?;
    let schedule = make_schedule(options.steps, options.t_max, options.t_min)?;
    let mut warnings = Vec::new();

    let (mut allocation, distribution) = match options.allocation {
        Some(fixed) => (fixed, None),
        None => {
            let dist = predictor.predict(instruction, reference)?;
            (allocate(&dist, &options.levels), Some(dist))
        }
    };
    if allocation.reasoning_steps > options.steps {
        warnings.push(format!(
            "allocated {} reasoning steps, clamped to the {} scheduled steps",
            allocation.reasoning_steps, options.steps
        ));
        allocation.reasoning_steps = options.steps;
    }
    let config = ReasoningConfig::new(allocation, schedule)?;

    let shape = reference.shape();
    let (mask, pilot_frame_steps) = match &options.srm {
        Some(params) => {
            let mut pilot_noise = NoiseSource::with_stream(options.seed, PILOT_NOISE_STREAM);
            let out = compute_srm(
                backbone,
                instruction,
                reference,
                options.t_max,
                params,
                &mut pilot_noise,
            )?;
            (out.mask, out.pilot_frame_steps)
        }
        None => (SpatialMask::ones(shape.height, shape.width), 0),
    };

    let rpfi = options.rpfi.enabled.then_some(options.rpfi);
    let mut result = integrate(
        backbone,
        reference,
        instruction,
        config,
        mask,
        rpfi,
        options.seed,
        options.keep_trace,
    )?;
    result.cost.pilot_frame_steps = pilot_frame_steps;
    result.distribution = distribution;
    result.warnings.extend(warnings);
    Ok(result)
}

/// Fixed `(N_r, r)` schedule with no mask and no injection.
pub fn run_baseline(
    backbone: &dyn Backbone,
    reference: &LatentFrame,
    instruction: &str,
    options: &BaselineOptions,
) -> Result<EditResult> {
    let schedule = make_schedule(options.steps, options.t_max, options.t_min)?;
    let config = ReasoningConfig::new(
        Allocation::new(options.reasoning_steps, options.reasoning_frames),
        schedule,
    )?;
    let shape = reference.shape();
    integrate(
        backbone,
        reference,
        instruction,
        config,
        SpatialMask::ones(shape.height, shape.width),
        None,
        options.seed,
        options.keep_trace,
    )
}

#[allow(clippy::too_many_arguments)]
fn integrate(
    backbone: &dyn Backbone,
    reference: &LatentFrame,
    instruction: &str,
    config: ReasoningConfig,
    mask: SpatialMask,
    rpfi: Option<RpfiParams>,
    seed: u64,
    keep_trace: bool,
) -> Result<EditResult> {
    let shape = reference.shape();
    if mask.height() != shape.height || mask.width() != shape.width {
        return Err(Error::dimension(format!(
            "mask is {}x{}, latent grid is {}x{}",
            mask.height(),
            mask.width(),
            shape.height,
            shape.width
        )));
    }
    let reasoning_steps = config.reasoning_steps;
    let times = config.schedule.steps().to_vec();

    let init_noise = NoiseSource::new(seed).sample_noise(config.reasoning_frames + 1, shape)?;
    let cache = match rpfi {
        Some(_) => Some(ReferenceNoiseCache::new(
            reference.clone(),
            init_noise.clone(),
        )?),
        None => None,
    };

    let mut z = LatentStack::concat(reference.clone(), &init_noise)?;
    let mut ledger = CostLedger {
        reasoning_stack_len: z.len(),
        reasoning_steps,
        ..CostLedger::default()
    };
    let mut trace = keep_trace.then(Vec::new);

    for n in 0..config.total_steps {
        let (t, t_next) = (times[n], times[n + 1]);
        if n == reasoning_steps {
            z = LatentStack::new(vec![reference.clone(), z.last().clone()])?;
        }
        let v = backbone.velocity(&z, t, instruction, reference)?;
        if let Err(e) = z.check_same_layout(&v) {
            return Err(Error::Backbone(format!(
                "velocity has the wrong layout: {e}"
            )));
        }
        z = euler_step(&z, &v, t, t_next)?;
        z.set_frame(0, reference.clone())?;

        if n < reasoning_steps {
            ledger.stage1_frame_steps += z.len();
            if let (Some(params), Some(cache)) = (rpfi, cache.as_ref()) {
                let mask_n = relaxed_mask(&mask, n, reasoning_steps, params.beta)?;
                z = inject(&z, cache, &mask_n, t_next)?;
            }
        } else {
            ledger.stage2_frame_steps += z.len();
        }
        if let Some(trace) = trace.as_mut() {
            trace.push(z.clone());
        }
    }

    Ok(EditResult {
        final_frame: z.last().clone(),
        trace,
        cost: ledger,
        config,
        mask,
        distribution: None,
        init_noise,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::FrameShape;

    fn shape() -> FrameShape {
        FrameShape::new(2, 3, 3).unwrap()
    }

    fn stack(values: &[f64]) -> LatentStack {
        LatentStack::new(
            values
                .iter()
                .map(|&v| LatentFrame::filled(shape(), v))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn euler_zero_velocity() {
        let z = stack(&[1.0, 2.0]);
        let v = stack(&[0.0, 0.0]);
        assert_eq!(euler_step(&z, &v, 0.7, 0.3).unwrap(), z);
    }

    #[test]
    fn euler_exact_linear_path() {
        let mut src = NoiseSource::new(3);
        let z0 = src.normal_frame(shape());
        let eps = src.normal_frame(shape());
        let z = LatentStack::new(vec![eps.clone()]).unwrap();
        let v = LatentStack::new(vec![eps.zip_map(&z0, |e, a| e - a).unwrap()]).unwrap();
        let out = euler_step(&z, &v, 1.0, 0.0).unwrap();
        for (a, b) in out.frame(0).values().iter().zip(z0.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn euler_half_steps_compose() {
        let z = stack(&[1.0, -2.0]);
        let v = stack(&[0.5, 3.0]);
        let full = euler_step(&z, &v, 1.0, 0.0).unwrap();
        let half = euler_step(&euler_step(&z, &v, 1.0, 0.5).unwrap(), &v, 0.5, 0.0).unwrap();
        for (a, b) in full.frames().iter().zip(half.frames()) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn euler_rejects_non_decreasing_time() {
        let z = stack(&[1.0]);
        assert!(matches!(
            euler_step(&z, &z, 0.5, 0.5),
            Err(Error::Schedule(_))
        ));
        assert!(matches!(
            euler_step(&z, &z, 0.2, 0.5),
            Err(Error::Schedule(_))
        ));
    }

    #[test]
    fn ledger_totals() {
        let l = CostLedger {
            pilot_frame_steps: 2,
            stage1_frame_steps: 12,
            stage2_frame_steps: 54,
            reasoning_stack_len: 4,
            reasoning_steps: 3,
        };
        assert_eq!(l.total(), 68);
        assert_eq!(l.stage1_frame_steps_excluding_conditioning(), 9);
    }

    struct Zero;

    impl Backbone for Zero {
        fn velocity(
            &self,
            z: &LatentStack,
            _: f64,
            _: &str,
            _: &LatentFrame,
        ) -> Result<VelocityStack> {
            LatentStack::new(
                z.frames()
                    .iter()
                    .map(|f| LatentFrame::zeros(f.shape()))
                    .collect(),
            )
        }
    }

    struct Broken;

    impl Backbone for Broken {
        fn velocity(
            &self,
            _: &LatentStack,
            _: f64,
            _: &str,
            _: &LatentFrame,
        ) -> Result<VelocityStack> {
            Err(Error::Backbone("out of memory".into()))
        }
    }

    #[test]
    fn srm_requires_attention_capability() {
        let reference = LatentFrame::zeros(shape());
        let err = run_edit(
            &Zero,
            &reference,
            "add a hat",
            &crate::card::Lexicon::builtin(),
            &EditOptions::default(),
        );
        assert!(matches!(err, Err(Error::Capability(_))));
    }

    #[test]
    fn backbone_failure_propagates() {
        let reference = LatentFrame::zeros(shape());
        let err = run_baseline(
            &Broken,
            &reference,
            "add a hat",
            &BaselineOptions::default(),
        );
        assert!(matches!(err, Err(Error::Backbone(_))));
    }

    #[test]
    fn over_allocation_is_clamped_with_warning() {
        let reference = LatentFrame::zeros(shape());
        let opts = EditOptions {
            steps: 5,
            srm: None,
            allocation: Some(Allocation::new(15, 8)),
            ..EditOptions::default()
        };
        let r = run_edit(
            &Zero,
            &reference,
            "x",
            &crate::card::Lexicon::builtin(),
            &opts,
        )
        .unwrap();
        assert_eq!(r.config.reasoning_steps, 5);
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.cost.stage1_frame_steps, 5 * 10);
        assert_eq!(r.cost.stage2_frame_steps, 0);
    }

    #[test]
    fn no_reasoning_stage() {
        let reference = LatentFrame::zeros(shape());
        let opts = BaselineOptions {
            reasoning_steps: 0,
            ..BaselineOptions::default()
        };
        let r = run_baseline(&Zero, &reference, "x", &opts).unwrap();
        assert_eq!(r.cost.total(), 60);
        assert_eq!(r.cost.stage1_frame_steps, 0);
    }

    #[test]
    fn planned_costs() {
        // hand-computed: 2 + 3*4 + 27*2, 2 + 8*6 + 22*2, 2 + 15*10 + 15*2
        let totals: Vec<usize> = [(3, 2), (8, 4), (15, 8)]
            .iter()
            .map(|&(s, f)| CostLedger::planned(Allocation::new(s, f), 30, true).total())
            .collect();
        assert_eq!(totals, [68, 94, 182]);
        assert_eq!(
            CostLedger::planned(Allocation::new(10, 8), 30, false).total(),
            140
        );
        assert_eq!(
            CostLedger::planned(Allocation::new(40, 1), 30, false).total(),
            90
        );
    }
}
