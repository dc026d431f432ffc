//! Suite configuration file.
//!
//! The file is TOML. Unknown keys anywhere are rejected. Layout:
//!
//! ```toml
//! [global]                 # every key optional
//! steps = 30
//! t_max = 1.0
//! t_min = 0.0
//! tau = 0.1
//! blur_kernel = 5
//! attention_layer = 12
//! beta = 1.5
//! seed = 0
//! jobs = 1
//! perturbation = 0.0       # amplitude of a fixed velocity perturbation
//! lexicon = "lexicon.tsv"  # relative to the config file; built-in if absent
//!
//! [levels]                 # optional, defaults (3,2) (8,4) (15,8)
//! low = { steps = 3, frames = 2 }
//! medium = { steps = 8, frames = 4 }
//! high = { steps = 15, frames = 8 }
//!
//! [bucket_weights]         # optional, equal weights if absent
//! low = 0.26
//! medium = 0.69
//! high = 0.05
//!
//! [[configurations]]
//! name = "baseline"
//! kind = "baseline"        # or "adaptive"
//! reasoning_steps = 10     # baseline only, default 10
//! reasoning_frames = 8     # baseline only, default 8
//!
//! [[configurations]]
//! name = "card+srm"
//! kind = "adaptive"
//! srm = true               # adaptive only, default true
//! rpfi = false             # adaptive only, default false
//!
//! [[scenarios]]
//! name = "low-01"
//! instruction = "make the shirt bright blue"
//! expected_complexity = "low"
//! bucket = "low"           # defaults to expected_complexity
//! kind = "region-recolor"  # region-recolor | region-replace | global-shift
//! grid = { channels = 4, height = 16, width = 16 }
//! region = { top = 4, left = 0, height = 8, width = 8 }
//! magnitude = 1.5
//! seed = 11                # defaults to the scenario index
//! attention = { signal = 1.0, noise_level = 0.05, tokens = 4, heads = 2 }
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::card::{ComplexityLevel, ComplexityLevels, Lexicon};
use crate::error::{Error, Result};
use crate::latent::{make_schedule, FrameShape};
use crate::srm::SrmParams;
use crate::toy::{AttentionParams, EditKind, Rect, ScenarioSpec};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlobalParams {
    pub steps: usize,
    pub t_max: f64,
    pub t_min: f64,
    pub tau: f64,
    pub blur_kernel: usize,
    pub attention_layer: usize,
    pub beta: f64,
    pub seed: u64,
    pub jobs: usize,
    pub perturbation: f64,
    pub lexicon: Option<PathBuf>,
}

impl Default for GlobalParams {
    fn default() -> Self {
        Self {
            steps: 30,
            t_max: 1.0,
            t_min: 0.0,
            tau: 0.1,
            blur_kernel: 5,
            attention_layer: 12,
            beta: 1.5,
            seed: 0,
            jobs: 1,
            perturbation: 0.0,
            lexicon: None,
        }
    }
}

impl GlobalParams {
    pub fn srm_params(&self) -> SrmParams {
        SrmParams {
            tau: self.tau,
            kernel: self.blur_kernel,
            layer: self.attention_layer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Baseline {
        reasoning_steps: usize,
        reasoning_frames: usize,
    },
    Adaptive {
        srm: bool,
        rpfi: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfiguration {
    pub name: String,
    pub mode: RunMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioEntry {
    pub name: String,
    pub instruction: String,
    pub expected_complexity: ComplexityLevel,
    pub bucket: String,
    pub spec: ScenarioSpec,
    pub seed: u64,
    pub attention: AttentionParams,
}

/// A validated suite.
#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub global: GlobalParams,
    pub levels: ComplexityLevels,
    /// Empty means equal weights.
    pub bucket_weights: BTreeMap<String, f64>,
    pub configurations: Vec<RunConfiguration>,
    pub scenarios: Vec<ScenarioEntry>,
    pub lexicon: Lexicon,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    global: GlobalParams,
    levels: Option<ComplexityLevels>,
    #[serde(default)]
    bucket_weights: BTreeMap<String, f64>,
    #[serde(default)]
    configurations: Vec<RawConfiguration>,
    #[serde(default)]
    scenarios: Vec<RawScenario>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawKind {
    Baseline,
    Adaptive,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfiguration {
    name: String,
    kind: RawKind,
    reasoning_steps: Option<usize>,
    reasoning_frames: Option<usize>,
    srm: Option<bool>,
    rpfi: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    instruction: String,
    expected_complexity: ComplexityLevel,
    bucket: Option<String>,
    kind: EditKind,
    grid: GridDims,
    region: Option<Rect>,
    magnitude: f64,
    seed: Option<u64>,
    #[serde(default)]
    attention: AttentionParams,
}

impl RawConfiguration {
    fn resolve(self) -> Result<RunConfiguration> {
        let mode = match self.kind {
            RawKind::Baseline => {
                if self.srm.is_some() || self.rpfi.is_some() {
                    return Err(Error::config(format!(
                        "configuration `{}`: baseline runs take no srm/rpfi switches",
                        self.name
                    )));
                }
                RunMode::Baseline {
                    reasoning_steps: self.reasoning_steps.unwrap_or(10),
                    reasoning_frames: self.reasoning_frames.unwrap_or(8),
                }
            }
            RawKind::Adaptive => {
                if self.reasoning_steps.is_some() || self.reasoning_frames.is_some() {
                    return Err(Error::config(format!(
                        "configuration `{}`: adaptive runs allocate their own reasoning budget",
                        self.name
                    )));
                }
                RunMode::Adaptive {
                    srm: self.srm.unwrap_or(true),
                    rpfi: self.rpfi.unwrap_or(false),
                }
            }
        };
        Ok(RunConfiguration {
            name: self.name,
            mode,
        })
    }
}

impl RawScenario {
    fn resolve(self, index: usize) -> Result<ScenarioEntry> {
        let shape = FrameShape::new(self.grid.channels, self.grid.height, self.grid.width)
            .map_err(|e| Error::config(format!("scenario `{}`: {e}", self.name)))?;
        self.attention
            .validate()
            .map_err(|e| Error::config(format!("scenario `{}`: {e}", self.name)))?;
        if self.kind.is_regional() && self.region.is_none() {
            return Err(Error::config(format!(
                "scenario `{}`: {:?} needs a region",
                self.name, self.kind
            )));
        }
        Ok(ScenarioEntry {
            bucket: self
                .bucket
                .unwrap_or_else(|| self.expected_complexity.to_string()),
            spec: ScenarioSpec {
                shape,
                kind: self.kind,
                region: self.region,
                magnitude: self.magnitude,
            },
            seed: self.seed.unwrap_or(index as u64),
            name: self.name,
            instruction: self.instruction,
            expected_complexity: self.expected_complexity,
            attention: self.attention,
        })
    }
}

/// Reads and validates a suite file. Relative lexicon paths resolve against
/// the file's directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<SuiteConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text, path.parent()).map_err(|e| match e {
        Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Parses a suite from text; `base_dir` anchors a relative lexicon path.
pub fn parse_config(text: &str, base_dir: Option<&Path>) -> Result<SuiteConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;

    let mut global = raw.global;
    if let (Some(lex), Some(dir)) = (global.lexicon.as_ref(), base_dir) {
        if lex.is_relative() {
            global.lexicon = Some(dir.join(lex));
        }
    }
    let lexicon = match &global.lexicon {
        Some(p) => Lexicon::from_path(p)?,
        None => Lexicon::builtin(),
    };

    let configurations = raw
        .configurations
        .into_iter()
        .map(RawConfiguration::resolve)
        .collect::<Result<Vec<_>>>()?;
    let scenarios = raw
        .scenarios
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.resolve(i))
        .collect::<Result<Vec<_>>>()?;

    let config = SuiteConfig {
        global,
        levels: raw.levels.unwrap_or_default(),
        bucket_weights: raw.bucket_weights,
        configurations,
        scenarios,
        lexicon,
    };
    config.validate()?;
    Ok(config)
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        let g = &self.global;
        make_schedule(g.steps, g.t_max, g.t_min)?;
        g.srm_params().validate()?;
        if !(g.beta > 1.0 && g.beta.is_finite()) {
            return Err(Error::config(format!("beta must exceed 1, got {}", g.beta)));
        }
        if !(g.perturbation >= 0.0 && g.perturbation.is_finite()) {
            return Err(Error::config("perturbation must be non-negative"));
        }
        if g.jobs == 0 {
            return Err(Error::config("jobs must be at least 1"));
        }
        self.levels.validate(g.steps)?;
        if self.scenarios.is_empty() {
            return Err(Error::config("at least one scenario is required"));
        }
        if self.configurations.is_empty() {
            return Err(Error::config("at least one configuration is required"));
        }
        unique(self.scenarios.iter().map(|s| s.name.as_str()), "scenario")?;
        unique(
            self.configurations.iter().map(|c| c.name.as_str()),
            "configuration",
        )?;
        for c in &self.configurations {
            if let RunMode::Baseline {
                reasoning_steps,
                reasoning_frames,
            } = c.mode
            {
                if reasoning_steps > g.steps {
                    return Err(Error::config(format!(
                        "configuration `{}`: {reasoning_steps} reasoning steps exceed {} total",
                        c.name, g.steps
                    )));
                }
                if reasoning_frames == 0 {
                    return Err(Error::config(format!(
                        "configuration `{}`: at least one reasoning frame is required",
                        c.name
                    )));
                }
            }
        }
        for (bucket, &w) in &self.bucket_weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::config(format!(
                    "bucket weight for `{bucket}` must be non-negative, got {w}"
                )));
            }
        }
        if !self.bucket_weights.is_empty() {
            if let Some(s) = self
                .scenarios
                .iter()
                .find(|s| !self.bucket_weights.contains_key(&s.bucket))
            {
                return Err(Error::config(format!(
                    "scenario `{}` is in bucket `{}`, which has no weight",
                    s.name, s.bucket
                )));
            }
            if self.bucket_weights.values().sum::<f64>() <= 0.0 {
                return Err(Error::config("bucket weights sum to zero"));
            }
        }
        Ok(())
    }

    /// Weight of `bucket`; 1 when no weights were given.
    pub fn bucket_weight(&self, bucket: &str) -> f64 {
        if self.bucket_weights.is_empty() {
            1.0
        } else {
            self.bucket_weights.get(bucket).copied().unwrap_or(0.0)
        }
    }

    pub fn scenario(&self, name: &str) -> Option<&ScenarioEntry> {
        self.scenarios.iter().find(|s| s.name == name)
    }
}

/// Command-line adjustments applied on top of a loaded suite.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    /// Turns injection on for every adaptive configuration.
    pub rpfi: bool,
    pub rpfi_beta: Option<f64>,
    pub baseline_steps: Option<usize>,
    pub baseline_frames: Option<usize>,
    pub lexicon: Option<PathBuf>,
    /// Keeps only this scenario.
    pub scenario: Option<String>,
}

impl SuiteConfig {
    /// Applies `o` and re-validates.
    pub fn apply_overrides(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.global.seed = seed;
        }
        if let Some(jobs) = o.jobs {
            self.global.jobs = jobs;
        }
        if let Some(beta) = o.rpfi_beta {
            self.global.beta = beta;
        }
        if let Some(path) = &o.lexicon {
            self.lexicon = Lexicon::from_path(path)?;
            self.global.lexicon = Some(path.clone());
        }
        for run in &mut self.configurations {
            match &mut run.mode {
                RunMode::Baseline {
                    reasoning_steps,
                    reasoning_frames,
                } => {
                    *reasoning_steps = o.baseline_steps.unwrap_or(*reasoning_steps);
                    *reasoning_frames = o.baseline_frames.unwrap_or(*reasoning_frames);
                }
                RunMode::Adaptive { rpfi, .. } => *rpfi |= o.rpfi,
            }
        }
        if let Some(name) = &o.scenario {
            self.scenarios.retain(|s| &s.name == name);
            if self.scenarios.is_empty() {
                return Err(Error::config(format!("no scenario named `{name}`")));
            }
        }
        self.validate()
    }
}

fn unique<'a>(names: impl Iterator<Item = &'a str>, what: &str) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(Error::config(format!("duplicate {what} name `{n}`")));
        }
    }
    Ok(())
}
