//! JSON run report.
//!
//! ```text
//! {
//!   "format": "ttf-report/1",
//!   "config": { fusion settings, seed, source, attention_source, text_tokens, heads },
//!   "grid": { "rows", "cols", "patch_count" },
//!   "steps": [ { "t", "is_keyframe", "pixel_count", "attention_count",
//!                "fusion_count", "fusion_rate", "pixel_threshold",
//!                "fusion_mask", "ledger": { "reused_rows", "recomputed_rows",
//!                "saved_multiplications", "max_error_q", "max_error_k",
//!                "max_error_v" } } ],
//!   "aggregates": { "step_count", "keyframe_count", "mean_fusion_rate_all",
//!                   "mean_fusion_rate_non_keyframe", "total_saved_multiplications",
//!                   "max_error_q", "max_error_k", "max_error_v" }
//! }
//! ```
//!
//! `fusion_mask` is lower-case hex, four patches per digit, patch 0 in the
//! high bit of the first digit, 1 = recompute. Counts are numbers of set
//! bits. `saved_multiplications` sums over Q, K and V.

use serde::{Deserialize, Serialize};

use super::config::{AttentionSource, FrameSource, RunConfig};
use super::HarnessError;
use crate::detection::PatchMask;
use crate::fusion::{mean_fusion_rates, FusionConfig, SequenceRun};
use crate::imagio::PatchGrid;
use crate::kqv::StepVerification;

pub const REPORT_FORMAT: &str = "ttf-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    #[serde(flatten)]
    pub fusion: FusionConfig,
    pub seed: u64,
    pub source: FrameSource,
    pub attention_source: AttentionSource,
    pub text_tokens: usize,
    pub heads: usize,
}

impl From<&RunConfig> for ConfigEcho {
    fn from(cfg: &RunConfig) -> Self {
        Self {
            fusion: cfg.fusion.clone(),
            seed: cfg.seed,
            source: cfg.source.clone(),
            attention_source: cfg.attention_source,
            text_tokens: cfg.text_tokens,
            heads: cfg.heads,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridInfo {
    pub rows: usize,
    pub cols: usize,
    pub patch_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub reused_rows: usize,
    pub recomputed_rows: usize,
    pub saved_multiplications: u64,
    pub max_error_q: f64,
    pub max_error_k: f64,
    pub max_error_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub is_keyframe: bool,
    pub pixel_count: usize,
    pub attention_count: usize,
    pub fusion_count: usize,
    pub fusion_rate: f64,
    pub pixel_threshold: Option<f64>,
    pub fusion_mask: String,
    pub ledger: LedgerSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub step_count: usize,
    pub keyframe_count: usize,
    pub mean_fusion_rate_all: f64,
    pub mean_fusion_rate_non_keyframe: f64,
    pub total_saved_multiplications: u64,
    pub max_error_q: f64,
    pub max_error_k: f64,
    pub max_error_v: f64,
}

impl Aggregates {
    pub fn from_steps(steps: &[StepRecord]) -> Self {
        let (mean_all, mean_non) = mean_fusion_rates(steps.iter().map(|s| (s.fusion_rate, s.is_keyframe)));
        let max = |f: fn(&LedgerSummary) -> f64| steps.iter().map(|s| f(&s.ledger)).fold(0.0, f64::max);
        Self {
            step_count: steps.len(),
            keyframe_count: steps.iter().filter(|s| s.is_keyframe).count(),
            mean_fusion_rate_all: mean_all,
            mean_fusion_rate_non_keyframe: mean_non,
            total_saved_multiplications: steps.iter().map(|s| s.ledger.saved_multiplications).sum(),
            max_error_q: max(|l| l.max_error_q),
            max_error_k: max(|l| l.max_error_k),
            max_error_v: max(|l| l.max_error_v),
        }
    }

    pub fn max_error(&self) -> f64 {
        self.max_error_q.max(self.max_error_k).max(self.max_error_v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub format: String,
    pub config: ConfigEcho,
    pub grid: GridInfo,
    pub steps: Vec<StepRecord>,
    pub aggregates: Aggregates,
}

impl SequenceReport {
    pub fn build(cfg: &RunConfig, run: &SequenceRun, verification: &[StepVerification]) -> Self {
        assert_eq!(run.steps.len(), verification.len());
        let grid = cfg.fusion.grid();
        let steps: Vec<StepRecord> = run
            .steps
            .iter()
            .zip(verification)
            .map(|(s, v)| StepRecord {
                t: s.timestep,
                is_keyframe: s.is_keyframe,
                pixel_count: s.pixel_mask.count_ones(),
                attention_count: s.attention_mask.count_ones(),
                fusion_count: s.fusion_mask.count_ones(),
                fusion_rate: s.fusion_rate,
                pixel_threshold: s.pixel_threshold,
                fusion_mask: s.fusion_mask.to_hex(),
                ledger: LedgerSummary {
                    reused_rows: v.reused_rows,
                    recomputed_rows: v.recomputed_rows,
                    saved_multiplications: v.saved_multiplications,
                    max_error_q: v.max_error_q,
                    max_error_k: v.max_error_k,
                    max_error_v: v.max_error_v,
                },
            })
            .collect();
        let aggregates = Aggregates::from_steps(&steps);
        Self {
            format: REPORT_FORMAT.to_string(),
            config: ConfigEcho::from(cfg),
            grid: grid_info(&grid),
            steps,
            aggregates,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Parse and check that the stored aggregates and per-step counts agree
    /// with the step records.
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let report: SequenceReport = serde_json::from_str(text)
            .map_err(|e| HarnessError::Invariant(format!("report does not parse: {e}")))?;
        report.check_consistency()?;
        Ok(report)
    }

    pub fn check_consistency(&self) -> Result<(), HarnessError> {
        if self.format != REPORT_FORMAT {
            return Err(HarnessError::Invariant(format!("unknown report format {:?}", self.format)));
        }
        let n = self.grid.patch_count;
        for s in &self.steps {
            let mask = self.fusion_mask(s)?;
            let zeros = mask.count_zeros();
            if mask.count_ones() != s.fusion_count
                || s.fusion_rate != zeros as f64 / n as f64
                || s.ledger.reused_rows != zeros
                || s.ledger.reused_rows + s.ledger.recomputed_rows != n
            {
                return Err(HarnessError::Invariant(format!("step {} is inconsistent", s.t)));
            }
        }
        if Aggregates::from_steps(&self.steps) != self.aggregates {
            return Err(HarnessError::Invariant(
                "aggregates do not match step records".into(),
            ));
        }
        Ok(())
    }

    pub fn fusion_mask(&self, step: &StepRecord) -> Result<PatchMask, HarnessError> {
        PatchMask::from_hex(&step.fusion_mask, self.grid.patch_count)
            .ok_or_else(|| HarnessError::Invariant(format!("step {}: malformed fusion mask", step.t)))
    }
}

pub fn grid_info(grid: &PatchGrid) -> GridInfo {
    GridInfo {
        rows: grid.rows(),
        cols: grid.cols(),
        patch_count: grid.patch_count(),
    }
}
