//! Instruction complexity prediction and reasoning-budget allocation.
//!
//! A predictor maps an instruction (and, in principle, the reference latent)
//! to a probability triple over the three complexity levels. The allocation
//! step turns that triple into an integer `(reasoning steps, reasoning
//! frames)` pair by probability-weighted interpolation of the per-level
//! budgets followed by rounding half away from zero.
//!
//! The shipped predictor is a keyword rule over a [`Lexicon`]; it always
//! returns a one-hot distribution.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{LatentFrame, TimeSchedule};

/// The default lexicon, embedded at build time.
pub const DEFAULT_LEXICON: &str = include_str!("../data/lexicon.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComplexityLevel {
    Low,
    Medium,
    High,
}

impl ComplexityLevel {
    pub const ALL: [ComplexityLevel; 3] = [Self::Low, Self::Medium, Self::High];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Low => "low",
            Self::Medium => "medium",
            Self::High => "high",
        }
    }
}

impl fmt::Display for ComplexityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ComplexityLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(Self::Low),
            "medium" => Ok(Self::Medium),
            "high" => Ok(Self::High),
            other => Err(Error::input(format!("unknown complexity level `{other}`"))),
        }
    }
}

/// Probabilities over `low`, `medium`, `high`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplexityDistribution {
    probs: [f64; 3],
}

impl ComplexityDistribution {
    pub fn new(low: f64, medium: f64, high: f64) -> Result<Self> {
        let probs = [low, medium, high];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::input(format!(
                "probabilities must lie in [0, 1], got {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::input(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self { probs })
    }

    pub fn one_hot(level: ComplexityLevel) -> Self {
        let mut probs = [0.0; 3];
        probs[level.index()] = 1.0;
        Self { probs }
    }

    pub fn prob(&self, level: ComplexityLevel) -> f64 {
        self.probs[level.index()]
    }

    pub fn probs(&self) -> [f64; 3] {
        self.probs
    }

    /// Most likely level; ties resolve toward the higher level.
    pub fn most_likely(&self) -> ComplexityLevel {
        let mut best = ComplexityLevel::Low;
        for level in ComplexityLevel::ALL {
            if self.prob(level) >= self.prob(best) {
                best = level;
            }
        }
        best
    }
}

/// Reasoning budget for one complexity level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelBudget {
    /// Number of joint denoising steps with reasoning frames.
    pub steps: usize,
    /// Number of intermediate reasoning frames.
    pub frames: usize,
}

impl LevelBudget {
    pub const fn new(steps: usize, frames: usize) -> Self {
        Self { steps, frames }
    }
}

/// Per-level budgets. The default is `(3, 2)`, `(8, 4)`, `(15, 8)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexityLevels {
    pub low: LevelBudget,
    pub medium: LevelBudget,
    pub high: LevelBudget,
}

impl Default for ComplexityLevels {
    fn default() -> Self {
        Self {
            low: LevelBudget::new(3, 2),
            medium: LevelBudget::new(8, 4),
            high: LevelBudget::new(15, 8),
        }
    }
}

impl ComplexityLevels {
    pub fn get(&self, level: ComplexityLevel) -> LevelBudget {
        match level {
            ComplexityLevel::Low => self.low,
            ComplexityLevel::Medium => self.medium,
            ComplexityLevel::High => self.high,
        }
    }

    pub fn validate(&self, total_steps: usize) -> Result<()> {
        for level in ComplexityLevel::ALL {
            let b = self.get(level);
            if b.steps == 0 || b.frames == 0 {
                return Err(Error::config(format!(
                    "{level} budget must be positive, got ({}, {})",
                    b.steps, b.frames
                )));
            }
            if b.steps > total_steps {
                return Err(Error::config(format!(
                    "{level} budget uses {} reasoning steps but only {total_steps} steps are scheduled",
                    b.steps
                )));
            }
        }
        Ok(())
    }
}

/// Allocated `(N_r*, r*)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub reasoning_steps: usize,
    pub reasoning_frames: usize,
}

impl Allocation {
    pub const fn new(reasoning_steps: usize, reasoning_frames: usize) -> Self {
        Self {
            reasoning_steps,
            reasoning_frames,
        }
    }
}

/// The allocation actually used by a run, together with its schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ReasoningConfig {
    pub reasoning_steps: usize,
    pub reasoning_frames: usize,
    pub total_steps: usize,
    pub schedule: TimeSchedule,
}

impl ReasoningConfig {
    pub fn new(allocation: Allocation, schedule: TimeSchedule) -> Result<Self> {
        let total_steps = schedule.num_steps();
        if allocation.reasoning_steps > total_steps {
            return Err(Error::config(format!(
                "{} reasoning steps exceed the {total_steps} scheduled steps",
                allocation.reasoning_steps
            )));
        }
        if allocation.reasoning_frames == 0 {
            return Err(Error::config("at least one reasoning frame is required"));
        }
        Ok(Self {
            reasoning_steps: allocation.reasoning_steps,
            reasoning_frames: allocation.reasoning_frames,
            total_steps,
            schedule,
        })
    }

    pub fn allocation(&self) -> Allocation {
        Allocation::new(self.reasoning_steps, self.reasoning_frames)
    }
}

/// Soft interpolation of the level budgets, rounded half away from zero.
pub fn allocate(dist: &ComplexityDistribution, levels: &ComplexityLevels) -> Allocation {
    let mut steps = 0.0;
    let mut frames = 0.0;
    for level in ComplexityLevel::ALL {
        let p = dist.prob(level);
        let budget = levels.get(level);
        steps += p * budget.steps as f64;
        frames += p * budget.frames as f64;
    }
    // f64::round rounds half away from zero
    Allocation::new(steps.round() as usize, frames.round() as usize)
}

/// Something that predicts a complexity distribution for an edit.
pub trait ComplexityPredictor: Send + Sync {
    fn predict(&self, instruction: &str, reference: &LatentFrame)
        -> Result<ComplexityDistribution>;
}

/// Three disjoint keyword sets matched case-insensitively on whole words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    // indexed by ComplexityLevel::index; each keyword is a word sequence
    sets: [BTreeSet<Vec<String>>; 3],
}

impl Lexicon {
    /// Parses the `class<TAB>keyword` format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut sets: [BTreeSet<Vec<String>>; 3] = Default::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((class, keyword)) = line.split_once('\t') else {
                return Err(Error::config(format!(
                    "lexicon line {}: expected `class<TAB>keyword`",
                    lineno + 1
                )));
            };
            let level: ComplexityLevel = class.parse().map_err(|_| {
                Error::config(format!(
                    "lexicon line {}: unknown class `{}`",
                    lineno + 1,
                    class.trim()
                ))
            })?;
            let words = tokenize(keyword);
            if words.is_empty() {
                return Err(Error::config(format!(
                    "lexicon line {}: empty keyword",
                    lineno + 1
                )));
            }
            sets[level.index()].insert(words);
        }
        let lex = Self { sets };
        lex.validate()?;
        Ok(lex)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read lexicon {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn builtin() -> Self {
        Self::parse(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }

    fn validate(&self) -> Result<()> {
        for level in ComplexityLevel::ALL {
            if self.sets[level.index()].is_empty() {
                return Err(Error::config(format!("lexicon has no `{level}` keywords")));
            }
        }
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            if let Some(dup) = self.sets[a].intersection(&self.sets[b]).next() {
                return Err(Error::config(format!(
                    "keyword `{}` appears in both `{}` and `{}`",
                    dup.join(" "),
                    ComplexityLevel::ALL[a],
                    ComplexityLevel::ALL[b]
                )));
            }
        }
        Ok(())
    }

    pub fn keywords(&self, level: ComplexityLevel) -> impl Iterator<Item = String> + '_ {
        self.sets[level.index()].iter().map(|w| w.join(" "))
    }

    /// Whether any keyword of `level` occurs in the tokenized instruction.
    pub fn matches(&self, level: ComplexityLevel, tokens: &[String]) -> bool {
        self.sets[level.index()].iter().any(|kw| {
            tokens
                .windows(kw.len())
                .any(|window| window == kw.as_slice())
        })
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::builtin()
    }
}

impl ComplexityPredictor for Lexicon {
    fn predict(
        &self,
        instruction: &str,
        _reference: &LatentFrame,
    ) -> Result<ComplexityDistribution> {
        classify_instruction(instruction, self)
    }
}

/// Lower-cased alphanumeric words.
fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Keyword rule: one-hot on the highest matched level (high > medium > low),
/// one-hot medium when nothing matches.
pub fn classify_instruction(
    instruction: &str,
    lexicon: &Lexicon,
) -> Result<ComplexityDistribution> {
    let tokens = tokenize(instruction);
    if tokens.is_empty() {
        return Err(Error::input("instruction is empty"));
    }
    let level = [
        ComplexityLevel::High,
        ComplexityLevel::Medium,
        ComplexityLevel::Low,
    ]
    .into_iter()
    .find(|&level| lexicon.matches(level, &tokens))
    .unwrap_or(ComplexityLevel::Medium);
    Ok(ComplexityDistribution::one_hot(level))
}
