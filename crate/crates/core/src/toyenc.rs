//! Deterministic stand-in for a vision encoder and one transformer layer's
//! attention, so the fusion loop and the projection-reuse study run without a
//! learned backbone.
//!
//! Tokens are a fixed linear map of each patch's 196 luminance values plus
//! two positional features. The projection is drawn from a splitmix64 stream
//! in row-major order, so any implementation seeded identically produces the
//! same matrix bit-for-bit.

use crate::detection::AttentionSlice;
use crate::fusion::{Encoded, Encoder, EncoderError};
use crate::imagio::{to_grayscale, FrameObservation, GrayscaleImage, PatchGrid, PATCH_AREA, PATCH_SIDE};
use crate::matrix::{Matrix, TokenMatrix};

/// Feature width fed to the projection: pooled patch pixels plus (row, col).
pub const FEATURE_DIM: usize = PATCH_AREA + 2;

/// splitmix64 generator.
#[derive(Debug, Clone, Copy)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Top 53 bits scaled to `[0, 1)`.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform integer in `[0, bound)`; `bound` must be positive.
    #[inline]
    pub fn below(&mut self, bound: u64) -> u64 {
        ((u128::from(self.next_u64()) * u128::from(bound)) >> 64) as u64
    }
}

/// Infinite stream of `[0, 1)` reals from a splitmix64 generator.
pub fn prng_stream(seed: u64) -> impl Iterator<Item = f64> {
    let mut rng = SplitMix64::new(seed);
    std::iter::repeat_with(move || rng.next_f64())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSpec {
    pub width: usize,
    pub height: usize,
    pub token_dim: usize,
    pub seed: u64,
    pub text_token_count: usize,
    pub head_count: usize,
}

impl EncoderSpec {
    /// `FEATURE_DIM × token_dim` projection with entries uniform in `[-1, 1)`,
    /// drawn row-major.
    pub fn projection(&self) -> Matrix {
        let data = prng_stream(self.seed)
            .take(FEATURE_DIM * self.token_dim)
            .map(|u| 2.0 * u - 1.0)
            .collect();
        Matrix::from_vec(FEATURE_DIM, self.token_dim, data).expect("length matches")
    }
}

#[derive(Debug, Clone)]
pub struct ToyEncoder {
    spec: EncoderSpec,
    grid: PatchGrid,
    projection: Matrix,
}

impl ToyEncoder {
    pub fn new(spec: EncoderSpec) -> Result<Self, EncoderError> {
        let grid = PatchGrid::for_dims(spec.width, spec.height)
            .map_err(|e| EncoderError(e.to_string()))?;
        if spec.token_dim == 0 || spec.head_count == 0 {
            return Err(EncoderError("token_dim and head_count must be positive".into()));
        }
        let projection = spec.projection();
        Ok(Self {
            spec,
            grid,
            projection,
        })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn projection(&self) -> &Matrix {
        &self.projection
    }

    fn check_frame(&self, frame: &FrameObservation) -> Result<(), EncoderError> {
        if frame.width() != self.spec.width || frame.height() != self.spec.height {
            return Err(EncoderError(format!(
                "frame is {}x{}, encoder expects {}x{}",
                frame.width(),
                frame.height(),
                self.spec.width,
                self.spec.height
            )));
        }
        Ok(())
    }

    /// Feature vector of patch `i`.
    pub fn features(&self, gray: &GrayscaleImage, i: usize) -> [f64; FEATURE_DIM] {
        let mut f = [0.0; FEATURE_DIM];
        let (r, c) = self.grid.cell(i);
        let w = gray.width();
        let values = gray.values();
        for pr in 0..PATCH_SIDE {
            let base = (r * PATCH_SIDE + pr) * w + c * PATCH_SIDE;
            f[pr * PATCH_SIDE..(pr + 1) * PATCH_SIDE].copy_from_slice(&values[base..base + PATCH_SIDE]);
        }
        f[PATCH_AREA] = (r as f64 + 0.5) / self.grid.rows() as f64;
        f[PATCH_AREA + 1] = (c as f64 + 0.5) / self.grid.cols() as f64;
        f
    }

    pub fn encode_gray(&self, gray: &GrayscaleImage) -> TokenMatrix {
        let d = self.spec.token_dim;
        let n = self.grid.patch_count();
        let mut out = Matrix::zeros(n, d);
        for i in 0..n {
            let feat = self.features(gray, i);
            let row = out.row_mut(i);
            for (k, &x) in feat.iter().enumerate() {
                for (acc, &p) in row.iter_mut().zip(self.projection.row(k)) {
                    *acc += x * p;
                }
            }
        }
        out
    }

    pub fn encode(&self, frame: &FrameObservation) -> Result<TokenMatrix, EncoderError> {
        self.check_frame(frame)?;
        Ok(self.encode_gray(&to_grayscale(frame)))
    }

    pub fn attention_gray(&self, gray: &GrayscaleImage, timestep: u64) -> AttentionSlice {
        let n = self.grid.patch_count();
        let heads = self.spec.head_count;
        let texts = self.spec.text_token_count;
        let mut mean_lum = Vec::with_capacity(n);
        let mut contrast = Vec::with_capacity(n);
        for i in 0..n {
            let (r, c) = self.grid.cell(i);
            let (mut sum, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
            for pr in 0..PATCH_SIDE {
                for pc in 0..PATCH_SIDE {
                    let v = gray.get(r * PATCH_SIDE + pr, c * PATCH_SIDE + pc);
                    sum += v;
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            mean_lum.push(sum / PATCH_AREA as f64);
            contrast.push(hi - lo);
        }

        let mut text = Vec::with_capacity(heads * texts * n);
        for h in 0..heads {
            let gain = 1.0 + 0.1 * h as f64;
            for j in 0..texts {
                let bias = 0.05 * j as f64;
                let logits: Vec<f64> = mean_lum.iter().map(|m| m * gain + bias).collect();
                text.extend(softmax(&logits));
            }
        }
        let action_row = softmax(&contrast);
        let action = action_row.repeat(heads);
        AttentionSlice::new(heads, texts, n, text, Some(action), timestep)
            .expect("softmax rows are valid distributions")
    }

    pub fn synth_attention(&self, frame: &FrameObservation) -> Result<AttentionSlice, EncoderError> {
        self.check_frame(frame)?;
        Ok(self.attention_gray(&to_grayscale(frame), frame.timestep()))
    }
}

impl Encoder for ToyEncoder {
    fn encode(&self, frame: &FrameObservation) -> Result<Encoded, EncoderError> {
        self.check_frame(frame)?;
        let gray = to_grayscale(frame);
        Ok(Encoded {
            tokens: self.encode_gray(&gray),
            attention: Some(self.attention_gray(&gray, frame.timestep())),
        })
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(width: usize, height: usize) -> EncoderSpec {
        EncoderSpec {
            width,
            height,
            token_dim: 8,
            seed: 42,
            text_token_count: 3,
            head_count: 2,
        }
    }

    fn noisy_frame(width: usize, height: usize, seed: u64) -> FrameObservation {
        let mut rng = SplitMix64::new(seed);
        let px = (0..width * height * 3).map(|_| (rng.next_u64() >> 56) as u8).collect();
        FrameObservation::new(width, height, px, 0).unwrap()
    }

    #[test]
    fn splitmix_reference_output() {
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        // further reference values of the canonical splitmix64 sequence
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(rng.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn streams_are_reproducible_and_seed_dependent() {
        let a: Vec<f64> = prng_stream(7).take(16).collect();
        let b: Vec<f64> = prng_stream(7).take(16).collect();
        assert_eq!(a, b);
        assert_ne!(SplitMix64::new(1).next_u64(), SplitMix64::new(2).next_u64());
        assert!(a.iter().all(|u| (0.0..1.0).contains(u)));
        let first = SplitMix64::new(0).next_u64();
        assert_eq!(prng_stream(0).next().unwrap(), (first >> 11) as f64 / 9007199254740992.0);
    }

    #[test]
    fn projection_is_seed_deterministic() {
        assert_eq!(spec(28, 28).projection(), spec(28, 28).projection());
        let mut other = spec(28, 28);
        other.seed = 43;
        assert_ne!(spec(28, 28).projection(), other.projection());
        let p = spec(28, 28).projection();
        let first = 2.0 * prng_stream(42).next().unwrap() - 1.0;
        assert_eq!(p.get(0, 0), first);
    }

    #[test]
    fn encode_is_deterministic() {
        let enc = ToyEncoder::new(spec(42, 28)).unwrap();
        let f = noisy_frame(42, 28, 1);
        assert_eq!(enc.encode(&f).unwrap(), enc.encode(&f).unwrap());
    }

    #[test]
    fn encode_is_patch_local() {
        let enc = ToyEncoder::new(spec(56, 28)).unwrap();
        let a = noisy_frame(56, 28, 3);
        let mut b = a.clone();
        let region = a.grid().patch_region(5).unwrap();
        b.set_pixel(region.row0 + 2, region.col0 + 9, [255, 0, 255]);
        b.set_pixel(region.row1, region.col1, [0, 0, 0]);
        let (ta, tb) = (enc.encode(&a).unwrap(), enc.encode(&b).unwrap());
        for i in 0..8 {
            assert_eq!(ta.row(i) == tb.row(i), i != 5, "row {i}");
        }
    }

    #[test]
    fn black_frame_tokens_are_positional_only() {
        let enc = ToyEncoder::new(spec(28, 28)).unwrap();
        let t = enc.encode(&FrameObservation::filled(28, 28, [0, 0, 0], 0).unwrap()).unwrap();
        let p = enc.projection();
        for i in 0..4 {
            let (r, c) = (i / 2, i % 2);
            let (pr, pc) = ((r as f64 + 0.5) / 2.0, (c as f64 + 0.5) / 2.0);
            for j in 0..8 {
                let expected = pr * p.get(PATCH_AREA, j) + pc * p.get(PATCH_AREA + 1, j);
                assert!((t.get(i, j) - expected).abs() < 1e-12);
            }
        }
        assert_ne!(t.row(0), t.row(3));
    }

    #[test]
    fn wrong_frame_size_rejected() {
        let enc = ToyEncoder::new(spec(28, 28)).unwrap();
        assert!(enc.encode(&noisy_frame(42, 28, 0)).is_err());
    }

    #[test]
    fn uniform_frame_gives_uniform_attention() {
        let enc = ToyEncoder::new(spec(56, 56)).unwrap();
        let s = enc.synth_attention(&FrameObservation::filled(56, 56, [90, 90, 90], 0).unwrap()).unwrap();
        for h in 0..2 {
            for j in 0..3 {
                for &w in s.text_row(h, j) {
                    assert!((w - 1.0 / 16.0).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn bright_patch_gets_max_text_attention() {
        let enc = ToyEncoder::new(spec(56, 56)).unwrap();
        let mut f = FrameObservation::filled(56, 56, [20, 20, 20], 0).unwrap();
        let r = f.grid().patch_region(9).unwrap();
        for row in r.row0..=r.row1 {
            for col in r.col0..=r.col1 {
                f.set_pixel(row, col, [250, 250, 250]);
            }
        }
        let s = enc.synth_attention(&f).unwrap();
        let row = s.text_row(1, 2);
        let argmax = (0..16).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert_eq!(argmax, 9);
    }

    #[test]
    fn four_patch_softmax_reference() {
        let mut s = spec(28, 28);
        s.head_count = 1;
        s.text_token_count = 1;
        let enc = ToyEncoder::new(s).unwrap();
        let mut f = FrameObservation::filled(28, 28, [0, 0, 0], 0).unwrap();
        for row in 14..28 {
            for col in 14..28 {
                f.set_pixel(row, col, [255, 255, 255]);
            }
        }
        let a = enc.synth_attention(&f).unwrap();
        // e / (3 + e) and 1 / (3 + e)
        let e = std::f64::consts::E;
        let expected = [1.0 / (3.0 + e), 1.0 / (3.0 + e), 1.0 / (3.0 + e), e / (3.0 + e)];
        for (w, x) in a.text_row(0, 0).iter().zip(expected) {
            assert!((w - x).abs() < 1e-12);
        }
        assert!((expected[3] - 0.4754).abs() < 1e-4 && (expected[0] - 0.1749).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn attention_rows_are_distributions(seed: u64) {
            let enc = ToyEncoder::new(spec(42, 42)).unwrap();
            let s = enc.synth_attention(&noisy_frame(42, 42, seed)).unwrap();
            let rows = (0..2).flat_map(|h| (0..3).map(move |j| (h, j)));
            for (h, j) in rows {
                let r = s.text_row(h, j);
                prop_assert!(r.iter().all(|&w| w >= 0.0));
                prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            for h in 0..2 {
                let r = s.action_row(h).unwrap();
                prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn attention_ratios_outside_changed_patch_unchanged(seed: u64, row in 0usize..14, col in 0usize..14) {
            let enc = ToyEncoder::new(spec(42, 28)).unwrap();
            let a = noisy_frame(42, 28, seed);
            let mut b = a.clone();
            b.set_pixel(14 + row, 14 + col, [255, 255, 255]);
            let (sa, sb) = (enc.synth_attention(&a).unwrap(), enc.synth_attention(&b).unwrap());
            // patch 4 changed; relative weights among the others are preserved
            let (ra, rb) = (sa.text_row(1, 0), sb.text_row(1, 0));
            prop_assert!((ra[0] / ra[1] - rb[0] / rb[1]).abs() < 1e-9);
            let (aa, ab) = (sa.action_row(0).unwrap(), sb.action_row(0).unwrap());
            prop_assert!((aa[2] / aa[5] - ab[2] / ab[5]).abs() < 1e-9);
        }

        #[test]
        fn one_step_perturbation_is_bounded(seed: u64, row in 0usize..28, col in 0usize..28) {
            let enc = ToyEncoder::new(spec(28, 28)).unwrap();
            let a = noisy_frame(28, 28, seed);
            let mut b = a.clone();
            let px = a.pixel(row, col);
            let bumped = px.map(|v| if v < 255 { v + 1 } else { v - 1 });
            b.set_pixel(row, col, bumped);
            let (ta, tb) = (enc.encode(&a).unwrap(), enc.encode(&b).unwrap());
            let bound = enc.projection().max_abs() / 255.0 + 1e-12;
            let i = a.grid().patch_of(row, col);
            let gap = ta.row(i).iter().zip(tb.row(i)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            prop_assert!(gap <= bound, "gap {gap} bound {bound}");
        }
    }
}
