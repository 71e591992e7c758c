use serde::{Deserialize, Serialize};

use crate::error::{OvqError, Result};

/// Ablations of the default learning procedure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Ablation {
    #[default]
    None,
    /// New centroids are a seeded uniform sample of the chunk.
    RandomAssign,
    /// Every chunk adds the same number of centroids. Needs the expected
    /// sequence length to split the budget.
    LinearGrowth { expected_len: usize },
    /// Fixed learning rate instead of `1 / count`.
    ConstantLr { rate: f64 },
}

/// How a chunk's merge deltas are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// Counts are scatter-added first, every token's step uses the
    /// post-update count and the centroid as it was before the chunk.
    #[default]
    MiniBatch,
    /// Tokens are applied one after another in chunk order, each with rate
    /// `1 / (count before chunk + tokens of this chunk on that centroid)`
    /// against the centroid as already moved by earlier tokens.
    Sequential,
}

/// Similarity used for nearest-centroid assignment and novelty scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    /// Key dot product only.
    #[default]
    KeyDot,
    /// Negative squared distance in the concatenated key/value space.
    Joint,
}

/// Deliberate defects, used to check that the verification suite notices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// The first merged token of every chunk is not counted.
    CountSkip,
    /// Chunk row `i` can see chunk column `i + 1`.
    MaskOffByOne,
    /// One extra centroid per chunk.
    GrowthOverAllocation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvqConfig {
    pub n_max: usize,
    pub chunk_len: usize,
    pub beta: f64,
    #[serde(default)]
    pub normalize_centroids: bool,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default)]
    pub update_rule: UpdateRule,
    #[serde(default)]
    pub similarity: Similarity,
    /// Only used by the random-assignment ablation.
    #[serde(default)]
    pub seed: u64,
    #[serde(skip)]
    pub fault: Option<Fault>,
}

impl Default for OvqConfig {
    fn default() -> Self {
        Self {
            n_max: 2048,
            chunk_len: 128,
            beta: 8.0,
            normalize_centroids: false,
            ablation: Ablation::None,
            update_rule: UpdateRule::MiniBatch,
            similarity: Similarity::KeyDot,
            seed: 0,
            fault: None,
        }
    }
}

impl OvqConfig {
    pub fn new(n_max: usize, chunk_len: usize, beta: f64) -> Self {
        Self {
            n_max,
            chunk_len,
            beta,
            ..Self::default()
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    pub fn with_update_rule(mut self, rule: UpdateRule) -> Self {
        self.update_rule = rule;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_max == 0 {
            return Err(OvqError::config("n_max must be at least 1"));
        }
        if self.chunk_len == 0 {
            return Err(OvqError::config("chunk_len must be at least 1"));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(OvqError::config(format!(
                "beta must be finite and positive, got {}",
                self.beta
            )));
        }
        match self.ablation {
            Ablation::ConstantLr { rate } if !(rate > 0.0 && rate <= 1.0) => Err(OvqError::config(format!(
                "constant learning rate must be in (0, 1], got {rate}"
            ))),
            Ablation::LinearGrowth { expected_len: 0 } => Err(OvqError::config(
                "linear growth needs a positive expected sequence length",
            )),
            _ => Ok(()),
        }
    }
}
