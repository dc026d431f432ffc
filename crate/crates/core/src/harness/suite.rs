//! Runs every (scenario, configuration) pair and aggregates the results.

use std::sync::Arc;

use rayon::prelude::*;

use crate::card::classify_instruction;
use crate::error::{Error, Result};
use crate::harness::config::{RunConfiguration, RunMode, ScenarioEntry, SuiteConfig};
use crate::harness::metrics::evaluate_edit;
use crate::harness::report::{BucketSummary, Confusion, Report, Row, WeightedSummary};
use crate::rpfi::RpfiParams;
use crate::sampler::{run_baseline, run_edit, Backbone, BaselineOptions, EditOptions, EditResult};
use crate::toy::{make_scenario, OracleBackbone, PerturbedBackbone, Scenario};

/// Seed for one scenario's sampler noise.
pub fn run_seed(global_seed: u64, scenario_seed: u64) -> u64 {
    global_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(scenario_seed)
}

pub fn build_scenario(entry: &ScenarioEntry) -> Result<Scenario> {
    make_scenario(
        &entry.spec,
        entry.instruction.clone(),
        entry.expected_complexity,
        entry.seed,
    )
}

/// The oracle for `scenario`, perturbed when the suite asks for it.
pub fn build_backbone(
    config: &SuiteConfig,
    entry: &ScenarioEntry,
    scenario: Arc<Scenario>,
) -> Box<dyn Backbone> {
    let oracle = OracleBackbone::new(scenario, entry.attention);
    if config.global.perturbation > 0.0 {
        Box::new(PerturbedBackbone::new(
            oracle,
            config.global.perturbation,
            run_seed(config.global.seed, entry.seed),
        ))
    } else {
        Box::new(oracle)
    }
}

/// Executes one configuration on one scenario.
pub fn run_configuration(
    config: &SuiteConfig,
    entry: &ScenarioEntry,
    scenario: Arc<Scenario>,
    run: &RunConfiguration,
) -> Result<EditResult> {
    let g = &config.global;
    let backbone = build_backbone(config, entry, Arc::clone(&scenario));
    let seed = run_seed(g.seed, entry.seed);
    match run.mode {
        RunMode::Baseline {
            reasoning_steps,
            reasoning_frames,
        } => run_baseline(
            backbone.as_ref(),
            scenario.reference(),
            scenario.instruction(),
            &BaselineOptions {
                steps: g.steps,
                t_max: g.t_max,
                t_min: g.t_min,
                reasoning_steps,
                reasoning_frames,
                seed,
                keep_trace: false,
            },
        ),
        RunMode::Adaptive { srm, rpfi } => run_edit(
            backbone.as_ref(),
            scenario.reference(),
            scenario.instruction(),
            &config.lexicon,
            &EditOptions {
                levels: config.levels,
                steps: g.steps,
                t_max: g.t_max,
                t_min: g.t_min,
                srm: srm.then(|| g.srm_params()),
                rpfi: RpfiParams {
                    enabled: rpfi,
                    beta: g.beta,
                },
                seed,
                allocation: None,
                keep_trace: false,
            },
        ),
    }
}

fn execute(
    config: &SuiteConfig,
    entry: &ScenarioEntry,
    scenario: &Result<Arc<Scenario>, String>,
    run: &RunConfiguration,
) -> Row {
    let mut row = Row {
        scenario: entry.name.clone(),
        bucket: entry.bucket.clone(),
        config: run.name.clone(),
        metrics: None,
        reasoning_steps: None,
        reasoning_frames: None,
        predicted: None,
        error: None,
        warnings: Vec::new(),
    };
    let outcome = scenario.as_ref().map_err(|e| e.clone()).and_then(|s| {
        let result =
            run_configuration(config, entry, Arc::clone(s), run).map_err(|e| e.to_string())?;
        let metrics = evaluate_edit(&result, s).map_err(|e| e.to_string())?;
        Ok((result, metrics))
    });
    match outcome {
        Ok((result, metrics)) => {
            row.metrics = Some(metrics);
            row.reasoning_steps = Some(result.config.reasoning_steps);
            row.reasoning_frames = Some(result.config.reasoning_frames);
            row.predicted = result.distribution.map(|d| d.most_likely());
            row.warnings = result.warnings;
        }
        Err(e) => row.error = Some(e),
    }
    row
}

/// Runs the whole suite. Individual failures are recorded on their rows.
pub fn run_suite(config: &SuiteConfig) -> Result<Report> {
    config.validate()?;
    let scenarios: Vec<Result<Arc<Scenario>, String>> = config
        .scenarios
        .iter()
        .map(|e| {
            build_scenario(e)
                .map(Arc::new)
                .map_err(|err| err.to_string())
        })
        .collect();

    let tasks: Vec<(usize, usize)> = (0..config.scenarios.len())
        .flat_map(|s| (0..config.configurations.len()).map(move |c| (s, c)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.global.jobs)
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    // collect() on an indexed parallel iterator keeps declaration order
    let rows: Vec<Row> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(s, c)| {
                execute(
                    config,
                    &config.scenarios[s],
                    &scenarios[s],
                    &config.configurations[c],
                )
            })
            .collect()
    });

    let mut confusion = Confusion::default();
    for entry in &config.scenarios {
        match classify_instruction(&entry.instruction, &config.lexicon) {
            Ok(d) => confusion.record(entry.expected_complexity, d.most_likely()),
            Err(_) => confusion.failures += 1,
        }
    }

    let baseline = config
        .configurations
        .iter()
        .find(|c| matches!(c.mode, RunMode::Baseline { .. }))
        .map(|c| c.name.clone());

    let mut buckets_seen: Vec<&str> = Vec::new();
    for e in &config.scenarios {
        if !buckets_seen.contains(&e.bucket.as_str()) {
            buckets_seen.push(&e.bucket);
        }
    }

    let summarize = |cfg: &str, bucket: &str| -> BucketSummary {
        let rows_in: Vec<&Row> = rows
            .iter()
            .filter(|r| r.config == cfg && r.bucket == bucket)
            .collect();
        let ok: Vec<_> = rows_in.iter().filter_map(|r| r.metrics).collect();
        let n = ok.len();
        let mean = |f: &dyn Fn(&crate::harness::metrics::Metrics) -> f64| {
            if n == 0 {
                0.0
            } else {
                ok.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let total: usize = ok.iter().map(|m| m.frame_steps).sum();
        BucketSummary {
            config: cfg.to_owned(),
            bucket: bucket.to_owned(),
            runs: n,
            failures: rows_in.len() - n,
            mean_edit_mse: mean(&|m| m.edit_mse),
            mean_preserve_mse: mean(&|m| m.preserve_mse),
            mean_mask_iou: mean(&|m| m.mask_iou),
            total_frame_steps: total,
            mean_frame_steps: if n == 0 { 0.0 } else { total as f64 / n as f64 },
            speedup: None,
        }
    };

    let mut buckets = Vec::new();
    for run in &config.configurations {
        for bucket in &buckets_seen {
            buckets.push(summarize(&run.name, bucket));
        }
    }
    if let Some(base) = &baseline {
        let base_rows: Vec<BucketSummary> = buckets
            .iter()
            .filter(|b| &b.config == base)
            .cloned()
            .collect();
        for b in &mut buckets {
            let reference = base_rows.iter().find(|r| r.bucket == b.bucket);
            b.speedup = reference
                .and_then(|r| speedup(r.total_frame_steps, r.runs, b.total_frame_steps, b.runs));
        }
    }

    let weighted_mean = |cfg: &str| -> f64 {
        let (mut acc, mut wsum) = (0.0, 0.0);
        for b in buckets.iter().filter(|b| b.config == cfg && b.runs > 0) {
            let w = config.bucket_weight(&b.bucket);
            acc += w * b.mean_frame_steps;
            wsum += w;
        }
        if wsum > 0.0 {
            acc / wsum
        } else {
            0.0
        }
    };
    let base_weighted = baseline.as_deref().map(weighted_mean);
    let weighted = config
        .configurations
        .iter()
        .map(|run| {
            let mean = weighted_mean(&run.name);
            WeightedSummary {
                config: run.name.clone(),
                weighted_mean_frame_steps: mean,
                speedup: base_weighted.filter(|_| mean > 0.0).map(|b| b / mean),
            }
        })
        .collect();

    Ok(Report {
        baseline,
        rows,
        buckets,
        weighted,
        confusion,
    })
}

/// `(base_total / base_runs) / (total / runs)` as a single integer ratio.
fn speedup(base_total: usize, base_runs: usize, total: usize, runs: usize) -> Option<f64> {
    if base_runs == 0 || runs == 0 || total == 0 {
        return None;
    }
    let num = base_total as u128 * runs as u128;
    let den = total as u128 * base_runs as u128;
    Some(num as f64 / den as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speedup_is_ratio_of_totals() {
        assert_eq!(speedup(1400, 10, 680, 10), Some(1400.0 / 680.0));
        assert_eq!(speedup(140, 1, 0, 1), None);
        assert_eq!(speedup(280, 2, 68, 1), Some(140.0 / 68.0));
    }

    #[test]
    fn run_seed_depends_on_both_inputs() {
        assert_ne!(run_seed(1, 2), run_seed(2, 1));
        assert_eq!(run_seed(0, 7), 7);
    }
}
