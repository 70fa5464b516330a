//! Experiment front-end: configuration, frame sources, full runs with
//! projection-reuse verification, parameter sweeps and report replay.

pub mod config;
pub mod report;
pub mod synth;
pub mod tensor;

use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{AttentionSlice, PatchMask};
use crate::fusion::{run_sequence, Encoded, Encoder, EncoderError, FusionError, SequenceRun};
use crate::imagio::{load_sequence, save_pgm, FrameObservation, ImageError};
use crate::kqv::{verify_equivalence, KqvError, ProjectionSet, ReplayStep, StepVerification};
use crate::matrix::Matrix;
use crate::toyenc::{EncoderSpec, ToyEncoder};

pub use config::{AttentionSource, FrameSource, RunConfig};
pub use report::SequenceReport;
pub use synth::{synthesize, walker_patch, write_synth, SynthSpec};
pub use tensor::{read_tensor, write_tensor, Tensor, TensorError};

pub const REPORT_FILE: &str = "report.json";
pub const TOKENS_FILE: &str = "tokens.ttft";
pub const QREUSE_FILE: &str = "qreuse.json";
pub const MASK_DIR: &str = "masks";

/// Offset between the encoder seed and the Q/K/V projection seed.
const PROJECTION_SEED_OFFSET: u64 = 0x5151_5151;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("invariant violation: {0}")]
    Invariant(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Io { .. } => 3,
            HarnessError::Invariant(_) => 4,
        }
    }

    pub(crate) fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }
}

impl From<ImageError> for HarnessError {
    fn from(e: ImageError) -> Self {
        match e {
            ImageError::Io { path, source } => HarnessError::io(&path, source),
            other => HarnessError::Io {
                path: PathBuf::new(),
                message: other.to_string(),
            },
        }
    }
}

impl From<FusionError> for HarnessError {
    fn from(e: FusionError) -> Self {
        match e {
            FusionError::Config(m) => HarnessError::Config(m),
            FusionError::Encoder(EncoderError(m)) => HarnessError::Io {
                path: PathBuf::new(),
                message: m,
            },
            other => HarnessError::Invariant(other.to_string()),
        }
    }
}

impl From<KqvError> for HarnessError {
    fn from(e: KqvError) -> Self {
        HarnessError::Invariant(e.to_string())
    }
}

/// Toy tokens with attention read from `attn_NNNNNN.ttft` files.
///
/// Each file holds a `[heads, text_tokens + 1, patches]` tensor; the last
/// row of every head is the first action token.
pub struct TensorAttentionEncoder {
    toy: ToyEncoder,
    dir: PathBuf,
}

impl TensorAttentionEncoder {
    pub fn new(toy: ToyEncoder, dir: PathBuf) -> Self {
        Self { toy, dir }
    }

    pub fn file_name(t: u64) -> String {
        format!("attn_{t:06}.ttft")
    }

    pub fn to_tensor(slice: &AttentionSlice) -> Tensor {
        let (h, j, n) = (slice.head_count(), slice.text_count(), slice.patch_count());
        let mut values = Vec::with_capacity(h * (j + 1) * n);
        for head in 0..h {
            for tok in 0..j {
                values.extend_from_slice(slice.text_row(head, tok));
            }
            match slice.action_row(head) {
                Some(row) => values.extend_from_slice(row),
                None => values.extend(std::iter::repeat_n(0.0, n)),
            }
        }
        Tensor {
            dims: vec![h, j + 1, n],
            values,
        }
    }

    pub fn slice_from_tensor(t: &Tensor, timestep: u64) -> Result<AttentionSlice, EncoderError> {
        let [h, rows, n] = t.dims[..] else {
            return Err(EncoderError(format!("attention tensor must be 3-D, got {:?}", t.dims)));
        };
        if rows < 2 {
            return Err(EncoderError("attention tensor needs text rows and an action row".into()));
        }
        let mut text = Vec::with_capacity(h * (rows - 1) * n);
        let mut action = Vec::with_capacity(h * n);
        for (i, row) in t.values.chunks_exact(n).enumerate() {
            if i % rows == rows - 1 {
                action.extend_from_slice(row);
            } else {
                text.extend_from_slice(row);
            }
        }
        AttentionSlice::new(h, rows - 1, n, text, Some(action), timestep)
            .map_err(|e| EncoderError(e.to_string()))
    }
}

impl Encoder for TensorAttentionEncoder {
    fn encode(&self, frame: &FrameObservation) -> Result<Encoded, EncoderError> {
        let tokens = self.toy.encode(frame)?;
        let path = self.dir.join(Self::file_name(frame.timestep()));
        let tensor = read_tensor(&path).map_err(|e| EncoderError(e.to_string()))?;
        let attention = Self::slice_from_tensor(&tensor, frame.timestep())?;
        Ok(Encoded {
            tokens,
            attention: Some(attention),
        })
    }
}

pub fn encoder_spec(cfg: &RunConfig) -> EncoderSpec {
    EncoderSpec {
        width: cfg.fusion.width,
        height: cfg.fusion.height,
        token_dim: cfg.fusion.token_dim,
        seed: cfg.seed,
        text_token_count: cfg.text_tokens,
        head_count: cfg.heads,
    }
}

pub fn projections_for(seed: u64, token_dim: usize) -> ProjectionSet {
    ProjectionSet::generate(token_dim, seed.wrapping_add(PROJECTION_SEED_OFFSET))
}

pub fn build_encoder(cfg: &RunConfig) -> Result<Box<dyn Encoder + Sync>, HarnessError> {
    let toy = ToyEncoder::new(encoder_spec(cfg)).map_err(|e| HarnessError::Config(e.0))?;
    Ok(match cfg.attention_source {
        AttentionSource::Toy => Box::new(toy),
        AttentionSource::TensorFiles => {
            let dir = cfg
                .attention_dir
                .clone()
                .ok_or_else(|| HarnessError::Config("attention_dir missing".into()))?;
            if !dir.is_dir() {
                return Err(HarnessError::io(&dir, "attention directory not found"));
            }
            Box::new(TensorAttentionEncoder::new(toy, dir))
        }
    })
}

pub fn load_frames(cfg: &RunConfig) -> Result<Vec<FrameObservation>, HarnessError> {
    match &cfg.source {
        FrameSource::Synth(spec) => synthesize(spec),
        FrameSource::FramesDir(dir) => {
            if !dir.is_dir() {
                return Err(HarnessError::io(dir, "frames directory not found"));
            }
            let frames = load_sequence(dir)?;
            if frames.is_empty() {
                return Err(HarnessError::io(dir, "no frame_NNNNNN.ppm files"));
            }
            Ok(frames)
        }
    }
}

/// Result of one fusion run plus its projection-reuse replay.
#[derive(Debug)]
pub struct RunOutcome {
    pub run: SequenceRun,
    pub verification: Vec<StepVerification>,
    pub report: SequenceReport,
}

pub fn verify_run(run: &SequenceRun, projections: &ProjectionSet) -> Result<Vec<StepVerification>, HarnessError> {
    let steps: Vec<ReplayStep<'_>> = run
        .steps
        .iter()
        .map(|s| ReplayStep {
            fused_tokens: &s.fused_tokens,
            fusion_mask: &s.fusion_mask,
        })
        .collect();
    Ok(verify_equivalence(&steps, projections)?)
}

/// Run the fusion loop over `frames` and replay it through selective Q/K/V
/// projection. Nothing is written.
pub fn evaluate(
    cfg: &RunConfig,
    frames: &[FrameObservation],
    encoder: &(dyn Encoder + Sync),
) -> Result<RunOutcome, HarnessError> {
    let run = run_sequence(frames, encoder, &cfg.fusion)?;
    let verification = verify_run(&run, &projections_for(cfg.seed, cfg.fusion.token_dim))?;
    let report = SequenceReport::build(cfg, &run, &verification);
    debug!(
        "evaluated {} steps, mean fusion rate {:.4}",
        report.aggregates.step_count, report.aggregates.mean_fusion_rate_all
    );
    Ok(RunOutcome {
        run,
        verification,
        report,
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))
}

pub fn mask_file_name(t: u64) -> String {
    format!("mask_{t:06}.pgm")
}

/// Write the outputs of an evaluated run into `out`.
pub fn write_outputs(cfg: &RunConfig, outcome: &RunOutcome, out: &Path) -> Result<(), HarnessError> {
    create_dir(out)?;
    write_file(&out.join(REPORT_FILE), outcome.report.to_json().as_bytes())?;
    if cfg.emit_masks {
        let grid = cfg.fusion.grid();
        let dir = out.join(MASK_DIR);
        create_dir(&dir)?;
        for s in outcome.run.steps.iter().filter(|s| !s.is_keyframe) {
            let pixels: Vec<u8> = s.fusion_mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
            save_pgm(&dir.join(mask_file_name(s.timestep)), grid.cols(), grid.rows(), &pixels)?;
        }
    }
    if cfg.emit_tokens {
        let (n, d) = (cfg.fusion.grid().patch_count(), cfg.fusion.token_dim);
        let mut values = Vec::with_capacity(outcome.run.steps.len() * n * d);
        for s in &outcome.run.steps {
            values.extend_from_slice(s.fused_tokens.as_slice());
        }
        let path = out.join(TOKENS_FILE);
        write_tensor(&path, &[outcome.run.steps.len(), n, d], &values)
            .map_err(|e| HarnessError::io(&path, e))?;
    }
    Ok(())
}

fn check_exact(report: &SequenceReport) -> Result<(), HarnessError> {
    let worst = report
        .steps
        .iter()
        .find(|s| s.ledger.max_error_q.max(s.ledger.max_error_k).max(s.ledger.max_error_v) != 0.0);
    match worst {
        Some(s) => Err(HarnessError::Invariant(format!(
            "nonzero projection reuse error at step {}",
            s.t
        ))),
        None => Ok(()),
    }
}

/// `run` subcommand: load frames, fuse, verify, write outputs.
pub fn execute_run(cfg: &RunConfig, out: &Path) -> Result<RunOutcome, HarnessError> {
    cfg.validate()?;
    let frames = load_frames(cfg)?;
    let encoder = build_encoder(cfg)?;
    info!("running {} frames into {}", frames.len(), out.display());
    let outcome = evaluate(cfg, &frames, encoder.as_ref())?;
    write_outputs(cfg, &outcome, out)?;
    check_exact(&outcome.report)?;
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    KeyframeInterval,
    PixelThreshold,
    TopK,
}

impl std::str::FromStr for SweepParam {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "K" | "keyframe_interval" => Ok(Self::KeyframeInterval),
            "tau" | "tau_pixel" | "pixel_threshold" => Ok(Self::PixelThreshold),
            "k" | "top_k" => Ok(Self::TopK),
            other => Err(HarnessError::Config(format!("unknown sweep parameter {other:?}"))),
        }
    }
}

impl SweepParam {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParam::KeyframeInterval => "keyframe_interval",
            SweepParam::PixelThreshold => "pixel_threshold",
            SweepParam::TopK => "top_k",
        }
    }

    pub fn apply(&self, cfg: &RunConfig, value: f64) -> Result<RunConfig, HarnessError> {
        let mut cfg = cfg.clone();
        let as_count = |v: f64| {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as u64)
            } else {
                Err(HarnessError::Config(format!("{} needs a non-negative integer, got {v}", self.as_str())))
            }
        };
        match self {
            SweepParam::KeyframeInterval => cfg.fusion.keyframe_interval = as_count(value)?,
            SweepParam::PixelThreshold => cfg.fusion.pixel_threshold = value,
            SweepParam::TopK => cfg.fusion.top_k = as_count(value)? as usize,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn parse_values(csv: &str) -> Result<Vec<f64>, HarnessError> {
    let values = csv
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| HarnessError::Config(format!("bad sweep value {s:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(HarnessError::Config("empty values list".into()));
    }
    Ok(values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub mean_fusion_rate_all: f64,
    pub mean_fusion_rate_non_keyframe: f64,
    pub total_saved_multiplications: u64,
    pub report_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub parameter: SweepParam,
    pub rows: Vec<SweepRow>,
}

impl SweepSummary {
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "{},mean_fusion_rate_all,mean_fusion_rate_non_keyframe,total_saved_multiplications\n",
            self.parameter.as_str()
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.value, r.mean_fusion_rate_all, r.mean_fusion_rate_non_keyframe, r.total_saved_multiplications
            ));
        }
        s
    }
}

/// Evaluate every value of `param` on the same frames, in parallel. Returns
/// one report per value in input order.
pub fn sweep_reports(
    cfg: &RunConfig,
    frames: &[FrameObservation],
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<SequenceReport>, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::Config("empty values list".into()));
    }
    let configs = values
        .iter()
        .map(|&v| param.apply(cfg, v))
        .collect::<Result<Vec<_>, _>>()?;
    let encoder = build_encoder(cfg)?;
    configs
        .par_iter()
        .map(|c| {
            let outcome = evaluate(c, frames, encoder.as_ref())?;
            check_exact(&outcome.report)?;
            Ok(outcome.report)
        })
        .collect()
}

/// `sweep` subcommand.
pub fn execute_sweep(
    cfg: &RunConfig,
    param: SweepParam,
    values: &[f64],
    out: &Path,
) -> Result<SweepSummary, HarnessError> {
    cfg.validate()?;
    let frames = load_frames(cfg)?;
    let reports = sweep_reports(cfg, &frames, param, values)?;
    let runs = out.join("runs");
    create_dir(&runs)?;
    let mut rows = Vec::with_capacity(values.len());
    for (i, (value, report)) in values.iter().zip(&reports).enumerate() {
        let name = format!("{i:03}_{}_{value}.json", param.as_str());
        write_file(&runs.join(&name), report.to_json().as_bytes())?;
        rows.push(SweepRow {
            value: *value,
            mean_fusion_rate_all: report.aggregates.mean_fusion_rate_all,
            mean_fusion_rate_non_keyframe: report.aggregates.mean_fusion_rate_non_keyframe,
            total_saved_multiplications: report.aggregates.total_saved_multiplications,
            report_file: format!("runs/{name}"),
        });
    }
    let summary = SweepSummary { parameter: param, rows };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    write_file(&out.join("sweep.json"), json.as_bytes())?;
    write_file(&out.join("sweep.csv"), summary.to_csv().as_bytes())?;
    Ok(summary)
}

/// `verify-qreuse` subcommand: replay a run directory written with
/// `emit_tokens = true` through selective Q/K/V projection and compare the
/// result with the report's ledger.
pub fn verify_report_dir(dir: &Path) -> Result<Vec<StepVerification>, HarnessError> {
    let report_path = dir.join(REPORT_FILE);
    let text = fs::read_to_string(&report_path).map_err(|e| HarnessError::io(&report_path, e))?;
    let report = SequenceReport::from_json(&text)?;
    let tokens_path = dir.join(TOKENS_FILE);
    if !tokens_path.is_file() {
        return Err(HarnessError::io(&tokens_path, "missing; rerun with emit_tokens = true"));
    }
    let tensor = read_tensor(&tokens_path).map_err(|e| HarnessError::io(&tokens_path, e))?;
    let (n, d) = (report.grid.patch_count, report.config.fusion.token_dim);
    if tensor.dims != [report.steps.len(), n, d] {
        return Err(HarnessError::Invariant(format!(
            "token tensor dims {:?} do not match report ({} steps, {n} patches, dim {d})",
            tensor.dims,
            report.steps.len()
        )));
    }
    let matrices = tensor
        .values
        .chunks_exact(n * d)
        .map(|c| Matrix::from_vec(n, d, c.to_vec()).expect("chunk size"))
        .collect::<Vec<_>>();
    let masks = report
        .steps
        .iter()
        .map(|s| report.fusion_mask(s))
        .collect::<Result<Vec<PatchMask>, _>>()?;
    let steps: Vec<ReplayStep<'_>> = matrices
        .iter()
        .zip(&masks)
        .map(|(t, m)| ReplayStep {
            fused_tokens: t,
            fusion_mask: m,
        })
        .collect();
    let verification = verify_equivalence(&steps, &projections_for(report.config.seed, d))?;
    let json = serde_json::to_string_pretty(&verification).expect("serializes") + "\n";
    write_file(&dir.join(QREUSE_FILE), json.as_bytes())?;

    for (v, s) in verification.iter().zip(&report.steps) {
        if let Some((which, row)) = v.fault {
            return Err(HarnessError::Invariant(format!(
                "step {}: {which:?} row {row} differs from full recompute",
                s.t
            )));
        }
        if v.saved_multiplications != s.ledger.saved_multiplications {
            return Err(HarnessError::Invariant(format!(
                "step {}: saved multiplications {} vs report {}",
                s.t, v.saved_multiplications, s.ledger.saved_multiplications
            )));
        }
    }
    Ok(verification)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> RunConfig {
        let spec = SynthSpec {
            frame_count: 8,
            width: 56,
            height: 56,
            walker: true,
            noise_amplitude: 0.02,
            seed: 3,
            ..SynthSpec::default()
        };
        let mut cfg = RunConfig::synthetic(spec);
        cfg.fusion.token_dim = 8;
        cfg.fusion.top_k = 4;
        cfg
    }

    #[test]
    fn run_writes_report_masks_and_tokens() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg();
        cfg.emit_masks = true;
        cfg.emit_tokens = true;
        let outcome = execute_run(&cfg, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap();
        let parsed = SequenceReport::from_json(&text).unwrap();
        assert_eq!(parsed, outcome.report);
        let masks: Vec<_> = fs::read_dir(dir.path().join(MASK_DIR)).unwrap().collect();
        let non_key = outcome.run.steps.iter().filter(|s| !s.is_keyframe).count();
        assert_eq!(masks.len(), non_key);
        let pgm = fs::read(dir.path().join(MASK_DIR).join(mask_file_name(1))).unwrap();
        assert!(pgm.starts_with(b"P5\n4 4\n255\n"));
        assert_eq!(pgm.len(), 11 + 16);

        let verification = verify_report_dir(dir.path()).unwrap();
        assert!(verification.iter().all(StepVerification::is_exact));
        assert!(dir.path().join(QREUSE_FILE).is_file());
    }

    #[test]
    fn tampered_report_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let outcome = execute_run(&small_cfg(), dir.path()).unwrap();
        let mut report = outcome.report.clone();
        report.aggregates.mean_fusion_rate_all += 1e-9;
        assert!(matches!(
            SequenceReport::from_json(&report.to_json()),
            Err(HarnessError::Invariant(_))
        ));
        let mut report = outcome.report;
        report.steps[1].fusion_count += 1;
        assert!(SequenceReport::from_json(&report.to_json()).is_err());
    }

    #[test]
    fn corrupted_tokens_fail_verification() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg();
        cfg.emit_tokens = true;
        cfg.fusion.keyframe_interval = 100;
        let outcome = execute_run(&cfg, dir.path()).unwrap();
        let step = outcome.run.steps.iter().position(|s| s.fusion_rate > 0.0).unwrap();
        let row = (0..16).find(|&i| !outcome.run.steps[step].fusion_mask.get(i)).unwrap();
        let path = dir.path().join(TOKENS_FILE);
        let mut t = read_tensor(&path).unwrap();
        t.values[(step * 16 + row) * 8] += 0.5;
        write_tensor(&path, &t.dims, &t.values).unwrap();
        let err = verify_report_dir(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        assert!(err.to_string().contains(&format!("row {row}")), "{err}");
    }

    #[test]
    fn verify_without_tokens_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        execute_run(&small_cfg(), dir.path()).unwrap();
        assert_eq!(verify_report_dir(dir.path()).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn missing_frames_dir_is_io_error() {
        let mut cfg = small_cfg();
        cfg.source = FrameSource::FramesDir(PathBuf::from("/nonexistent/frames"));
        let err = execute_run(&cfg, Path::new("/tmp/unused")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("/nonexistent/frames"));
    }

    #[test]
    fn frames_dir_source_matches_synthetic_source() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let FrameSource::Synth(spec) = &cfg.source else { panic!() };
        write_synth(spec, &dir.path().join("frames")).unwrap();
        let mut from_disk = cfg.clone();
        from_disk.source = FrameSource::FramesDir(dir.path().join("frames"));
        let a = evaluate(&cfg, &load_frames(&cfg).unwrap(), build_encoder(&cfg).unwrap().as_ref()).unwrap();
        let b = evaluate(&from_disk, &load_frames(&from_disk).unwrap(), build_encoder(&from_disk).unwrap().as_ref()).unwrap();
        assert_eq!(a.report.steps, b.report.steps);
    }

    #[test]
    fn tensor_attention_matches_toy_attention() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let frames = load_frames(&cfg).unwrap();
        let toy = ToyEncoder::new(encoder_spec(&cfg)).unwrap();
        for f in &frames {
            let slice = toy.synth_attention(f).unwrap();
            let t = TensorAttentionEncoder::to_tensor(&slice);
            write_tensor(&dir.path().join(TensorAttentionEncoder::file_name(f.timestep())), &t.dims, &t.values).unwrap();
        }
        let mut tcfg = cfg.clone();
        tcfg.attention_source = AttentionSource::TensorFiles;
        tcfg.attention_dir = Some(dir.path().to_path_buf());
        let a = evaluate(&cfg, &frames, build_encoder(&cfg).unwrap().as_ref()).unwrap();
        let b = evaluate(&tcfg, &frames, build_encoder(&tcfg).unwrap().as_ref()).unwrap();
        // f32 narrowing can reorder near-ties, so compare selection sizes
        for (x, y) in a.report.steps.iter().zip(&b.report.steps) {
            assert_eq!(x.attention_count, y.attention_count);
        }

        fs::remove_file(dir.path().join(TensorAttentionEncoder::file_name(3))).unwrap();
        let enc = build_encoder(&tcfg).unwrap();
        let err: HarnessError = evaluate(&tcfg, &frames, enc.as_ref()).err().unwrap();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn sweep_params_and_values() {
        assert_eq!("K".parse::<SweepParam>().unwrap(), SweepParam::KeyframeInterval);
        assert_eq!("tau".parse::<SweepParam>().unwrap(), SweepParam::PixelThreshold);
        assert_eq!("k".parse::<SweepParam>().unwrap(), SweepParam::TopK);
        assert!("x".parse::<SweepParam>().is_err());
        assert_eq!(parse_values("2, 3,5").unwrap(), vec![2.0, 3.0, 5.0]);
        assert_eq!(parse_values(" ").unwrap_err().exit_code(), 2);
        assert!(SweepParam::KeyframeInterval.apply(&small_cfg(), 2.5).is_err());
        assert!(SweepParam::KeyframeInterval.apply(&small_cfg(), 0.0).is_err());
    }

    #[test]
    fn sweep_writes_summary() {
        let dir = tempfile::tempdir().unwrap();
        let summary = execute_sweep(&small_cfg(), SweepParam::TopK, &[0.0, 16.0], dir.path()).unwrap();
        assert_eq!(summary.rows.len(), 2);
        assert!(summary.rows[1].mean_fusion_rate_all == 0.0);
        let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert!(csv.starts_with("top_k,"));
        assert_eq!(csv.lines().count(), 3);
        assert!(dir.path().join(&summary.rows[0].report_file).is_file());
    }
}
