//! Flat `key = value` run configuration.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Keys prefixed `synth.` describe a generated sequence; `frames_dir` points
//! at a directory of `frame_NNNNNN.ppm` files instead. Exactly one of the two
//! must be given. Relative paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::synth::SynthSpec;
use super::HarnessError;
use crate::detection::AttentionMode;
use crate::fusion::{FusionConfig, SelectionMode, ThresholdMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameSource {
    FramesDir(PathBuf),
    Synth(SynthSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionSource {
    Toy,
    TensorFiles,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub fusion: FusionConfig,
    pub source: FrameSource,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub attention_source: AttentionSource,
    /// Directory of `attn_NNNNNN.ttft` files when `attention_source` is
    /// `tensor_files`.
    pub attention_dir: Option<PathBuf>,
    pub emit_masks: bool,
    pub emit_tokens: bool,
    pub text_tokens: usize,
    pub heads: usize,
}

impl RunConfig {
    /// Defaults with a synthetic source.
    pub fn synthetic(spec: SynthSpec) -> Self {
        let fusion = FusionConfig {
            width: spec.width,
            height: spec.height,
            ..FusionConfig::default()
        };
        Self {
            fusion,
            seed: spec.seed,
            source: FrameSource::Synth(spec),
            output_dir: None,
            attention_source: AttentionSource::Toy,
            attention_dir: None,
            emit_masks: false,
            emit_tokens: false,
            text_tokens: 8,
            heads: 4,
        }
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(HarnessError::Config(format!(
                    "line {}: duplicate key {key:?}",
                    lineno + 1
                )));
            }
        }
        let mut kv = Entries(entries);

        let mut fusion = FusionConfig::default();
        kv.take_into("keyframe_interval", &mut fusion.keyframe_interval)?;
        kv.take_into("pixel_threshold", &mut fusion.pixel_threshold)?;
        kv.take_with("threshold_mode", &mut fusion.threshold_mode, |s| match s {
            "fixed" => Ok(ThresholdMode::Fixed),
            "auto" => Ok(ThresholdMode::Auto),
            _ => Err(format!("unknown threshold mode {s:?}")),
        })?;
        kv.take_into("top_k", &mut fusion.top_k)?;
        kv.take_with("attention_mode", &mut fusion.attention_mode, AttentionMode::from_str)?;
        kv.take_with("selection_mode", &mut fusion.selection_mode, |s| match s {
            "top_k" => Ok(SelectionMode::TopK),
            "rate_target" => Ok(SelectionMode::RateTarget),
            _ => Err(format!("unknown selection mode {s:?}")),
        })?;
        kv.take_into("target_reuse_rate", &mut fusion.target_reuse_rate)?;
        kv.take_into("width", &mut fusion.width)?;
        kv.take_into("height", &mut fusion.height)?;
        kv.take_into("token_dim", &mut fusion.token_dim)?;
        kv.take_into("enable_pixel", &mut fusion.enable_pixel)?;
        kv.take_into("enable_attention", &mut fusion.enable_attention)?;

        let mut seed = 0u64;
        kv.take_into("seed", &mut seed)?;

        let frames_dir = kv.take("frames_dir").map(|p| base_dir.join(p));
        let has_synth = kv.0.keys().any(|k| k.starts_with("synth."));
        let source = match (frames_dir, has_synth) {
            (Some(_), true) => {
                return Err(HarnessError::Config(
                    "give either frames_dir or synth.* keys, not both".into(),
                ))
            }
            (None, false) => {
                return Err(HarnessError::Config(
                    "no frame source: set frames_dir or synth.* keys".into(),
                ))
            }
            (Some(dir), false) => FrameSource::FramesDir(dir),
            (None, true) => {
                let mut spec = SynthSpec {
                    width: fusion.width,
                    height: fusion.height,
                    seed,
                    ..SynthSpec::default()
                };
                kv.take_into("synth.frame_count", &mut spec.frame_count)?;
                kv.take_into("synth.change_fraction", &mut spec.change_fraction)?;
                kv.take_into("synth.walker", &mut spec.walker)?;
                kv.take_into("synth.noise_amplitude", &mut spec.noise_amplitude)?;
                kv.take_into("synth.seed", &mut spec.seed)?;
                FrameSource::Synth(spec)
            }
        };

        let mut attention_source = AttentionSource::Toy;
        kv.take_with("attention_source", &mut attention_source, |s| match s {
            "toy" => Ok(AttentionSource::Toy),
            "tensor_files" => Ok(AttentionSource::TensorFiles),
            _ => Err(format!("unknown attention source {s:?}")),
        })?;
        let attention_dir = kv.take("attention_dir").map(|p| base_dir.join(p));
        let output_dir = kv.take("output_dir").map(|p| base_dir.join(p));

        let mut cfg = Self {
            fusion,
            source,
            seed,
            output_dir,
            attention_source,
            attention_dir,
            emit_masks: false,
            emit_tokens: false,
            text_tokens: 8,
            heads: 4,
        };
        kv.take_into("emit_masks", &mut cfg.emit_masks)?;
        kv.take_into("emit_tokens", &mut cfg.emit_tokens)?;
        kv.take_into("text_tokens", &mut cfg.text_tokens)?;
        kv.take_into("heads", &mut cfg.heads)?;

        if let Some(unknown) = kv.0.keys().next() {
            return Err(HarnessError::Config(format!("unknown key {unknown:?}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.fusion
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.heads == 0 || self.text_tokens == 0 {
            return Err(HarnessError::Config("heads and text_tokens must be positive".into()));
        }
        if self.attention_source == AttentionSource::TensorFiles && self.attention_dir.is_none() {
            return Err(HarnessError::Config(
                "attention_source = tensor_files requires attention_dir".into(),
            ));
        }
        if let FrameSource::Synth(spec) = &self.source {
            spec.validate()?;
            if (spec.width, spec.height) != (self.fusion.width, self.fusion.height) {
                return Err(HarnessError::Config("synth size must match width/height".into()));
            }
        }
        Ok(())
    }

    /// Replace the seed, carrying it into a synthetic source as well.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        if let FrameSource::Synth(spec) = &mut self.source {
            spec.seed = seed;
        }
        self
    }
}

struct Entries(BTreeMap<String, String>);

impl Entries {
    fn take(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    fn take_with<T, E: std::fmt::Display>(
        &mut self,
        key: &str,
        slot: &mut T,
        parse: impl FnOnce(&str) -> Result<T, E>,
    ) -> Result<(), HarnessError> {
        if let Some(v) = self.take(key) {
            *slot = parse(&v).map_err(|e| HarnessError::Config(format!("{key}: {e}")))?;
        }
        Ok(())
    }

    fn take_into<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<(), HarnessError>
    where
        T::Err: std::fmt::Display,
    {
        self.take_with(key, slot, |s| s.parse::<T>())
    }
}
