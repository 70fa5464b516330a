//! Per-patch change detection along two dimensions: mean absolute luminance
//! difference between consecutive frames, and task relevance aggregated from
//! the previous step's attention rows.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagio::{GrayscaleImage, PatchGrid, PATCH_AREA, PATCH_SIDE};

/// Slack allowed when checking that an attention row sums to at most one;
/// covers rows narrowed to `f32` in tensor files.
const ROW_SUM_SLACK: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum DetectionError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("attention slice has no text rows")]
    EmptyTextRows,
    #[error("attention slice has no action row")]
    MissingActionRow,
    #[error("invalid attention slice: {0}")]
    InvalidAttention(String),
}

/// Per-patch binary decision; `true` means "use the current token".
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatchMask(Vec<bool>);

impl PatchMask {
    pub fn zeros(n: usize) -> Self {
        Self(vec![false; n])
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![true; n])
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn from_indices(n: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut bits = vec![false; n];
        for i in indices {
            bits[i] = true;
        }
        Self(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn count_zeros(&self) -> usize {
        self.len() - self.count_ones()
    }

    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn or(&self, other: &PatchMask) -> Result<PatchMask, DetectionError> {
        if self.len() != other.len() {
            return Err(DetectionError::DimensionMismatch(format!(
                "mask lengths {} and {}",
                self.len(),
                other.len()
            )));
        }
        Ok(PatchMask(
            self.0.iter().zip(&other.0).map(|(a, b)| *a || *b).collect(),
        ))
    }

    /// Lower-case hex, four patches per digit, patch 0 in the high bit of the
    /// first digit. Trailing bits of the last digit are zero.
    pub fn to_hex(&self) -> String {
        self.0
            .chunks(4)
            .map(|chunk| {
                let nibble = chunk
                    .iter()
                    .enumerate()
                    .fold(0u32, |acc, (k, &b)| acc | (u32::from(b) << (3 - k)));
                char::from_digit(nibble, 16).unwrap()
            })
            .collect()
    }

    pub fn from_hex(hex: &str, n: usize) -> Option<PatchMask> {
        if hex.len() != n.div_ceil(4) {
            return None;
        }
        let mut bits = Vec::with_capacity(n);
        for c in hex.chars() {
            let nibble = c.to_digit(16)?;
            for k in 0..4 {
                bits.push(nibble & (1 << (3 - k)) != 0);
            }
        }
        if bits[n..].iter().any(|&b| b) {
            return None;
        }
        bits.truncate(n);
        Some(PatchMask(bits))
    }
}

impl fmt::Debug for PatchMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PatchMask({}/{}: ", self.count_ones(), self.len())?;
        for &b in self.0.iter().take(64) {
            f.write_str(if b { "1" } else { "0" })?;
        }
        if self.len() > 64 {
            f.write_str("…")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelDiffResult {
    /// Mean absolute luminance difference per patch, in `[0, 1]`.
    pub diffs: Vec<f64>,
    /// `diffs[i] > threshold`.
    pub mask: PatchMask,
    pub threshold: f64,
}

/// Mean absolute luminance difference of every patch.
pub fn patch_diffs(
    gray_t: &GrayscaleImage,
    gray_prev: &GrayscaleImage,
    grid: &PatchGrid,
) -> Result<Vec<f64>, DetectionError> {
    let (w, h) = (grid.width(), grid.height());
    for (name, g) in [("current", gray_t), ("previous", gray_prev)] {
        if g.width() != w || g.height() != h {
            return Err(DetectionError::DimensionMismatch(format!(
                "{name} image is {}x{}, grid expects {w}x{h}",
                g.width(),
                g.height()
            )));
        }
    }
    let (cur, prev) = (gray_t.values(), gray_prev.values());
    let diffs = (0..grid.patch_count())
        .map(|i| {
            let (r, c) = grid.cell(i);
            let mut sum = 0.0;
            for row in r * PATCH_SIDE..(r + 1) * PATCH_SIDE {
                let base = row * w + c * PATCH_SIDE;
                for o in base..base + PATCH_SIDE {
                    sum += (cur[o] - prev[o]).abs();
                }
            }
            sum / PATCH_AREA as f64
        })
        .collect();
    Ok(diffs)
}

pub fn threshold_mask(diffs: &[f64], threshold: f64) -> PatchMask {
    PatchMask(diffs.iter().map(|&d| d > threshold).collect())
}

pub fn pixel_diff(
    gray_t: &GrayscaleImage,
    gray_prev: &GrayscaleImage,
    grid: &PatchGrid,
    threshold: f64,
) -> Result<PixelDiffResult, DetectionError> {
    let diffs = patch_diffs(gray_t, gray_prev, grid)?;
    let mask = threshold_mask(&diffs, threshold);
    Ok(PixelDiffResult {
        diffs,
        mask,
        threshold,
    })
}

/// Scene-statistics threshold: mean plus one population standard deviation
/// of the diffs of this frame pair.
pub fn auto_threshold(diffs: &[f64]) -> f64 {
    if diffs.is_empty() {
        return 0.0;
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    mean + var.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    TextToVision,
    ActionToVision,
}

impl AttentionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttentionMode::TextToVision => "text_to_vision",
            AttentionMode::ActionToVision => "action_to_vision",
        }
    }
}

impl std::str::FromStr for AttentionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text_to_vision" => Ok(Self::TextToVision),
            "action_to_vision" => Ok(Self::ActionToVision),
            other => Err(format!("unknown attention mode {other:?}")),
        }
    }
}

/// Attention from text tokens and the first action token to the vision
/// patches, for every head of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSlice {
    head_count: usize,
    text_count: usize,
    patch_count: usize,
    /// `[head][text token][patch]`
    text: Vec<f64>,
    /// `[head][patch]`
    action: Option<Vec<f64>>,
    source_timestep: u64,
}

impl AttentionSlice {
    pub fn new(
        head_count: usize,
        text_count: usize,
        patch_count: usize,
        text: Vec<f64>,
        action: Option<Vec<f64>>,
        source_timestep: u64,
    ) -> Result<Self, DetectionError> {
        if head_count == 0 || patch_count == 0 {
            return Err(DetectionError::InvalidAttention(
                "head and patch counts must be positive".into(),
            ));
        }
        if text.len() != head_count * text_count * patch_count {
            return Err(DetectionError::InvalidAttention(format!(
                "text weights: expected {}, found {}",
                head_count * text_count * patch_count,
                text.len()
            )));
        }
        if let Some(a) = &action {
            if a.len() != head_count * patch_count {
                return Err(DetectionError::InvalidAttention(format!(
                    "action weights: expected {}, found {}",
                    head_count * patch_count,
                    a.len()
                )));
            }
        }
        let rows = text
            .chunks_exact(patch_count)
            .chain(action.iter().flat_map(|a| a.chunks_exact(patch_count)));
        for row in rows {
            if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(DetectionError::InvalidAttention(
                    "weights must be finite and non-negative".into(),
                ));
            }
            let s: f64 = row.iter().sum();
            if s > 1.0 + ROW_SUM_SLACK {
                return Err(DetectionError::InvalidAttention(format!(
                    "row sums to {s} > 1"
                )));
            }
        }
        Ok(Self {
            head_count,
            text_count,
            patch_count,
            text,
            action,
            source_timestep,
        })
    }

    pub fn head_count(&self) -> usize {
        self.head_count
    }

    pub fn text_count(&self) -> usize {
        self.text_count
    }

    pub fn patch_count(&self) -> usize {
        self.patch_count
    }

    pub fn source_timestep(&self) -> u64 {
        self.source_timestep
    }

    pub fn has_action_row(&self) -> bool {
        self.action.is_some()
    }

    pub fn text_row(&self, head: usize, token: usize) -> &[f64] {
        let o = (head * self.text_count + token) * self.patch_count;
        &self.text[o..o + self.patch_count]
    }

    pub fn action_row(&self, head: usize) -> Option<&[f64]> {
        self.action
            .as_ref()
            .map(|a| &a[head * self.patch_count..(head + 1) * self.patch_count])
    }
}

/// Mean over heads of the mean over text tokens of the text-to-patch weights.
pub fn text_to_vision_scores(slice: &AttentionSlice) -> Result<Vec<f64>, DetectionError> {
    if slice.text_count == 0 {
        return Err(DetectionError::EmptyTextRows);
    }
    let n = slice.patch_count;
    let mut scores = vec![0.0; n];
    for h in 0..slice.head_count {
        let mut per_head = vec![0.0; n];
        for j in 0..slice.text_count {
            for (acc, w) in per_head.iter_mut().zip(slice.text_row(h, j)) {
                *acc += w;
            }
        }
        for (s, v) in scores.iter_mut().zip(&per_head) {
            *s += v / slice.text_count as f64;
        }
    }
    for s in &mut scores {
        *s /= slice.head_count as f64;
    }
    Ok(scores)
}

/// Mean over heads of the first action token's weights on every patch.
pub fn action_to_vision_scores(slice: &AttentionSlice) -> Result<Vec<f64>, DetectionError> {
    let n = slice.patch_count;
    let mut scores = vec![0.0; n];
    for h in 0..slice.head_count {
        let row = slice.action_row(h).ok_or(DetectionError::MissingActionRow)?;
        for (s, w) in scores.iter_mut().zip(row) {
            *s += w;
        }
    }
    for s in &mut scores {
        *s /= slice.head_count as f64;
    }
    Ok(scores)
}

pub fn task_scores(slice: &AttentionSlice, mode: AttentionMode) -> Result<Vec<f64>, DetectionError> {
    match mode {
        AttentionMode::TextToVision => text_to_vision_scores(slice),
        AttentionMode::ActionToVision => action_to_vision_scores(slice),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceScores {
    pub scores: Vec<f64>,
    pub mode: Option<AttentionMode>,
    pub mask: PatchMask,
    /// Number of patches selected.
    pub k: usize,
}

/// Patch indices ordered by descending score, ascending index among ties.
pub fn rank_patches(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Select the `k` highest-scoring patches; `k` larger than the patch count
/// selects every patch.
pub fn top_k_mask(scores: &[f64], k: usize) -> RelevanceScores {
    let n = scores.len();
    let k = k.min(n);
    let mut mask = vec![false; n];
    if k == n {
        mask.fill(true);
    } else if k > 0 {
        let mut order: Vec<usize> = (0..n).collect();
        let cmp = |&a: &usize, &b: &usize| scores[b].total_cmp(&scores[a]).then(a.cmp(&b));
        order.select_nth_unstable_by(k - 1, cmp);
        for &i in &order[..k] {
            mask[i] = true;
        }
    }
    RelevanceScores {
        scores: scores.to_vec(),
        mode: None,
        mask: PatchMask(mask),
        k,
    }
}

/// Number of patches kept important so that the reused share of `n` equals
/// `target_reuse_rate` up to rounding toward recomputation.
pub fn rate_target_budget(n: usize, target_reuse_rate: f64) -> usize {
    let rate = target_reuse_rate.clamp(0.0, 1.0);
    let exact = (1.0 - rate) * n as f64;
    // absorb representation error such as (1 - 0.3) * 10 = 7.000000000000001
    let k = (exact - 1e-9).ceil().max(0.0) as usize;
    k.min(n)
}

pub fn rate_target_mask(scores: &[f64], target_reuse_rate: f64) -> RelevanceScores {
    debug_assert!((0.0..=1.0).contains(&target_reuse_rate));
    top_k_mask(scores, rate_target_budget(scores.len(), target_reuse_rate))
}

/// How many patches the attention dimension keeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    TopK(usize),
    RateTarget(f64),
}

pub fn attention_relevance(
    slice: &AttentionSlice,
    mode: AttentionMode,
    selection: Selection,
) -> Result<RelevanceScores, DetectionError> {
    let scores = task_scores(slice, mode)?;
    let mut out = match selection {
        Selection::TopK(k) => top_k_mask(&scores, k),
        Selection::RateTarget(r) => rate_target_mask(&scores, r),
    };
    out.mode = Some(mode);
    Ok(out)
}
