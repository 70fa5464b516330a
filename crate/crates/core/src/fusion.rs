//! The per-timestep fusion engine: keyframe schedule, OR-combination of the
//! pixel and attention masks, hard row selection between the current tokens
//! and the fused history, and the rolling state that carries it all forward.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{
    attention_relevance, auto_threshold, patch_diffs, threshold_mask, AttentionMode,
    AttentionSlice, DetectionError, PatchMask, Selection,
};
use crate::imagio::{to_grayscale, FrameObservation, GrayscaleImage, PatchGrid};
use crate::matrix::{ShapeError, TokenMatrix};

#[derive(Debug, Error, PartialEq, Eq, Clone)]
#[error("encoder: {0}")]
pub struct EncoderError(pub String);

#[derive(Debug, Error)]
pub enum FusionError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("frame timestep {found} does not match state timestep {expected}")]
    TimestepMismatch { expected: u64, found: u64 },
    #[error("frame is {found:?}, config expects {expected:?}")]
    FrameSize {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("empty sequence: first frame missing")]
    EmptySequence,
}

/// Output of one encoder pass: patch tokens and, when available, the
/// attention slice captured during the same pass.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub tokens: TokenMatrix,
    pub attention: Option<AttentionSlice>,
}

pub trait Encoder {
    fn encode(&self, frame: &FrameObservation) -> Result<Encoded, EncoderError>;
}

impl<E: Encoder + ?Sized> Encoder for &E {
    fn encode(&self, frame: &FrameObservation) -> Result<Encoded, EncoderError> {
        (**self).encode(frame)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    TopK,
    RateTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    Fixed,
    /// mean + one standard deviation of the frame pair's diffs
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub keyframe_interval: u64,
    pub pixel_threshold: f64,
    pub threshold_mode: ThresholdMode,
    pub top_k: usize,
    pub attention_mode: AttentionMode,
    pub selection_mode: SelectionMode,
    pub target_reuse_rate: f64,
    pub width: usize,
    pub height: usize,
    pub token_dim: usize,
    pub enable_pixel: bool,
    pub enable_attention: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            keyframe_interval: 3,
            pixel_threshold: 0.03,
            threshold_mode: ThresholdMode::Fixed,
            top_k: 70,
            attention_mode: AttentionMode::TextToVision,
            selection_mode: SelectionMode::TopK,
            target_reuse_rate: 0.3,
            width: 224,
            height: 224,
            token_dim: 64,
            enable_pixel: true,
            enable_attention: true,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        if self.keyframe_interval == 0 {
            return Err(FusionError::Config("keyframe_interval must be >= 1".into()));
        }
        if !(self.pixel_threshold.is_finite() && self.pixel_threshold >= 0.0) {
            return Err(FusionError::Config("pixel_threshold must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.target_reuse_rate) {
            return Err(FusionError::Config("target_reuse_rate must lie in [0, 1]".into()));
        }
        if self.token_dim == 0 {
            return Err(FusionError::Config("token_dim must be positive".into()));
        }
        PatchGrid::for_dims(self.width, self.height)
            .map_err(|e| FusionError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn grid(&self) -> PatchGrid {
        PatchGrid::for_dims(self.width, self.height).expect("validated config")
    }

    pub fn selection(&self) -> Selection {
        match self.selection_mode {
            SelectionMode::TopK => Selection::TopK(self.top_k),
            SelectionMode::RateTarget => Selection::RateTarget(self.target_reuse_rate),
        }
    }
}

/// Rolling memory read by each step. Holds the fused tokens just emitted,
/// so reuse chains always draw from the fused history.
#[derive(Debug, Clone, Default)]
pub struct FusionState {
    pub prev_frame: Option<FrameObservation>,
    pub prev_gray: Option<GrayscaleImage>,
    pub prev_tokens: Option<TokenMatrix>,
    pub prev_attention: Option<AttentionSlice>,
    pub timestep: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepTimings {
    pub encode: Duration,
    /// Grayscale conversion, pixel diff, attention scoring and selection.
    pub detection: Duration,
    pub fuse: Duration,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub timestep: u64,
    pub fused_tokens: TokenMatrix,
    pub is_keyframe: bool,
    pub pixel_mask: PatchMask,
    pub attention_mask: PatchMask,
    pub fusion_mask: PatchMask,
    /// Share of patches that reused the previous fused token.
    pub fusion_rate: f64,
    /// Per-patch mean absolute luminance difference; absent on keyframes and
    /// when the pixel dimension is disabled.
    pub diffs: Option<Vec<f64>>,
    pub pixel_threshold: Option<f64>,
    pub timings: StepTimings,
}

pub fn is_keyframe(t: u64, state: &FusionState, keyframe_interval: u64) -> bool {
    t % keyframe_interval == 0 || state.prev_tokens.is_none()
}

/// OR of the enabled detection dimensions; a disabled dimension contributes
/// nothing.
pub fn combine_masks(
    pixel_mask: &PatchMask,
    attention_mask: &PatchMask,
    config: &FusionConfig,
) -> Result<PatchMask, FusionError> {
    if pixel_mask.len() != attention_mask.len() {
        return Err(DetectionError::DimensionMismatch(format!(
            "pixel mask {} vs attention mask {}",
            pixel_mask.len(),
            attention_mask.len()
        ))
        .into());
    }
    let n = pixel_mask.len();
    let zeros = PatchMask::zeros(n);
    let p = if config.enable_pixel { pixel_mask } else { &zeros };
    let a = if config.enable_attention { attention_mask } else { &zeros };
    Ok(p.or(a)?)
}

/// Row `i` comes from `current` where the mask is set and from `previous`
/// otherwise. Rows are copied, never blended.
pub fn fuse_tokens(
    current: &TokenMatrix,
    previous: &TokenMatrix,
    mask: &PatchMask,
) -> Result<TokenMatrix, FusionError> {
    previous.expect_shape("previous tokens", current.shape())?;
    if mask.len() != current.rows() {
        return Err(ShapeError::Length {
            what: "fusion mask",
            expected: current.rows(),
            found: mask.len(),
        }
        .into());
    }
    let mut out = current.clone();
    for i in (0..mask.len()).filter(|&i| !mask.get(i)) {
        out.row_mut(i).copy_from_slice(previous.row(i));
    }
    Ok(out)
}

impl FusionState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Advance by one frame. On error the state is left untouched.
    pub fn step<E: Encoder + ?Sized>(
        &mut self,
        frame: &FrameObservation,
        encoder: &E,
        config: &FusionConfig,
    ) -> Result<StepResult, FusionError> {
        config.validate()?;
        if frame.timestep() != self.timestep {
            return Err(FusionError::TimestepMismatch {
                expected: self.timestep,
                found: frame.timestep(),
            });
        }
        if (frame.width(), frame.height()) != (config.width, config.height) {
            return Err(FusionError::FrameSize {
                expected: (config.width, config.height),
                found: (frame.width(), frame.height()),
            });
        }
        let grid = config.grid();
        let n = grid.patch_count();
        let t = self.timestep;
        let mut timings = StepTimings::default();

        let clock = Instant::now();
        let encoded = encoder.encode(frame)?;
        timings.encode = clock.elapsed();
        encoded
            .tokens
            .expect_shape("encoder tokens", (n, config.token_dim))?;
        if let Some(a) = &encoded.attention {
            if a.patch_count() != n {
                return Err(ShapeError::Length {
                    what: "attention patches",
                    expected: n,
                    found: a.patch_count(),
                }
                .into());
            }
        }

        let clock = Instant::now();
        let gray = to_grayscale(frame);
        let keyframe = is_keyframe(t, self, config.keyframe_interval);

        let result = if keyframe {
            timings.detection = clock.elapsed();
            StepResult {
                timestep: t,
                fused_tokens: encoded.tokens,
                is_keyframe: true,
                pixel_mask: PatchMask::ones(n),
                attention_mask: PatchMask::ones(n),
                fusion_mask: PatchMask::ones(n),
                fusion_rate: 0.0,
                diffs: None,
                pixel_threshold: None,
                timings,
            }
        } else {
            let prev_gray = self.prev_gray.as_ref().expect("history present off keyframes");
            let prev_tokens = self.prev_tokens.as_ref().expect("history present off keyframes");

            let (pixel_mask, diffs, threshold) = if config.enable_pixel {
                let diffs = patch_diffs(&gray, prev_gray, &grid)?;
                let threshold = match config.threshold_mode {
                    ThresholdMode::Fixed => config.pixel_threshold,
                    ThresholdMode::Auto => auto_threshold(&diffs),
                };
                (threshold_mask(&diffs, threshold), Some(diffs), Some(threshold))
            } else {
                (PatchMask::zeros(n), None, None)
            };

            let attention_mask = match (&self.prev_attention, config.enable_attention) {
                (_, false) => PatchMask::zeros(n),
                // no attention from the prior step: recompute everything
                (None, true) => PatchMask::ones(n),
                (Some(prev), true) => {
                    attention_relevance(prev, config.attention_mode, config.selection())?.mask
                }
            };
            let fusion_mask = combine_masks(&pixel_mask, &attention_mask, config)?;
            timings.detection = clock.elapsed();

            let clock = Instant::now();
            let fused_tokens = fuse_tokens(&encoded.tokens, prev_tokens, &fusion_mask)?;
            timings.fuse = clock.elapsed();
            let fusion_rate = fusion_mask.count_zeros() as f64 / n as f64;
            StepResult {
                timestep: t,
                fused_tokens,
                is_keyframe: false,
                pixel_mask,
                attention_mask,
                fusion_mask,
                fusion_rate,
                diffs,
                pixel_threshold: threshold,
                timings,
            }
        };

        self.prev_frame = Some(frame.clone());
        self.prev_gray = Some(gray);
        self.prev_tokens = Some(result.fused_tokens.clone());
        self.prev_attention = encoded.attention;
        self.timestep += 1;
        Ok(result)
    }
}

#[derive(Debug, Clone)]
pub struct SequenceRun {
    pub steps: Vec<StepResult>,
    /// Mean fusion rate over every step, keyframes counted as 0.
    pub mean_fusion_rate_all: f64,
    /// Mean over non-keyframe steps only; 0 when there are none.
    pub mean_fusion_rate_non_keyframe: f64,
}

pub fn mean_fusion_rates(rates_and_keys: impl IntoIterator<Item = (f64, bool)>) -> (f64, f64) {
    let (mut all, mut n_all, mut non, mut n_non) = (0.0, 0usize, 0.0, 0usize);
    for (rate, key) in rates_and_keys {
        all += rate;
        n_all += 1;
        if !key {
            non += rate;
            n_non += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    (mean(all, n_all), mean(non, n_non))
}

/// Drive the fusion loop over an episode whose frames are numbered 0, 1, …
pub fn run_sequence<E: Encoder + ?Sized>(
    frames: &[FrameObservation],
    encoder: &E,
    config: &FusionConfig,
) -> Result<SequenceRun, FusionError> {
    if frames.is_empty() {
        return Err(FusionError::EmptySequence);
    }
    let mut state = FusionState::new();
    let mut steps = Vec::with_capacity(frames.len());
    for frame in frames {
        steps.push(state.step(frame, encoder, config)?);
    }
    let (mean_fusion_rate_all, mean_fusion_rate_non_keyframe) =
        mean_fusion_rates(steps.iter().map(|s| (s.fusion_rate, s.is_keyframe)));
    Ok(SequenceRun {
        steps,
        mean_fusion_rate_all,
        mean_fusion_rate_non_keyframe,
    })
}
