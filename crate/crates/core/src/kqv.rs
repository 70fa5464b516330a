//! Row-selective Q/K/V projection.
//!
//! With the row-vector convention `out[i] = tokens[i] · W`, a token row that
//! was carried over unchanged from the previous fused frame yields a
//! projected row equal to the previous step's projected row. Copying those
//! rows instead of recomputing them is exact, provided every projection sums
//! in the same fixed order (ascending inner index), which `project_full`
//! guarantees.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::PatchMask;
use crate::matrix::{Matrix, ShapeError, TokenMatrix};
use crate::toyenc::prng_stream;

#[derive(Debug, Error, PartialEq)]
pub enum KqvError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("step has {reused} reused rows but no previous projection")]
    MissingPrevProjection { reused: usize },
    #[error("replay step {step}: token dim {found} does not match projection dim {expected}")]
    Dim {
        step: usize,
        expected: usize,
        found: usize,
    },
}

/// Which projection a value refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Projection {
    Q,
    K,
    V,
}

impl Projection {
    pub const ALL: [Projection; 3] = [Projection::Q, Projection::K, Projection::V];
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
}

impl ProjectionSet {
    /// Three d×d matrices drawn in order Q, K, V, each row-major, entries
    /// uniform in `[-1, 1)` scaled by `1/sqrt(d)`.
    pub fn generate(dim: usize, seed: u64) -> Self {
        let scale = 1.0 / (dim as f64).sqrt();
        let mut stream = prng_stream(seed);
        let mut next = || {
            let data = stream
                .by_ref()
                .take(dim * dim)
                .map(|u| (2.0 * u - 1.0) * scale)
                .collect();
            Matrix::from_vec(dim, dim, data).expect("length matches")
        };
        let w_q = next();
        let w_k = next();
        let w_v = next();
        Self { w_q, w_k, w_v }
    }

    pub fn dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn get(&self, which: Projection) -> &Matrix {
        match which {
            Projection::Q => &self.w_q,
            Projection::K => &self.w_k,
            Projection::V => &self.w_v,
        }
    }
}

fn project_row(token: &[f64], w: &Matrix, out: &mut [f64]) {
    out.fill(0.0);
    for (k, &x) in token.iter().enumerate() {
        for (acc, &wk) in out.iter_mut().zip(w.row(k)) {
            *acc += x * wk;
        }
    }
}

/// `out[i][j] = Σ_k tokens[i][k] · w[k][j]`, summed for ascending `k`.
pub fn project_full(tokens: &TokenMatrix, w: &Matrix) -> Result<Matrix, KqvError> {
    check_weights(tokens, w)?;
    let mut out = Matrix::zeros(tokens.rows(), w.cols());
    for i in 0..tokens.rows() {
        project_row(tokens.row(i), w, out.row_mut(i));
    }
    Ok(out)
}

fn check_weights(tokens: &TokenMatrix, w: &Matrix) -> Result<(), KqvError> {
    if w.rows() != tokens.cols() {
        return Err(ShapeError::Mismatch {
            what: "projection weights",
            expected: (tokens.cols(), w.cols()),
            found: w.shape(),
        }
        .into());
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReuseLedger {
    pub reused_rows: usize,
    pub recomputed_rows: usize,
    /// Multiplications skipped for this one projection.
    pub saved_multiplications: u64,
    /// Max-norm gap between the selective result and a full recompute.
    pub max_row_error: f64,
    /// Row at which `max_row_error` occurs, when nonzero.
    pub worst_row: Option<usize>,
}

/// Recompute only rows whose mask bit is set; copy the rest from
/// `prev_projection`. The ledger compares the result against
/// `project_full(tokens_fused, w)`.
pub fn project_selective(
    tokens_fused: &TokenMatrix,
    prev_projection: Option<&Matrix>,
    mask: &PatchMask,
    w: &Matrix,
) -> Result<(Matrix, ReuseLedger), KqvError> {
    check_weights(tokens_fused, w)?;
    let n = tokens_fused.rows();
    if mask.len() != n {
        return Err(ShapeError::Length {
            what: "fusion mask",
            expected: n,
            found: mask.len(),
        }
        .into());
    }
    let reused = mask.count_zeros();
    let mut out = match prev_projection {
        Some(prev) => {
            prev.expect_shape("previous projection", (n, w.cols()))?;
            prev.clone()
        }
        None if reused > 0 => return Err(KqvError::MissingPrevProjection { reused }),
        None => Matrix::zeros(n, w.cols()),
    };
    for i in mask.selected() {
        project_row(tokens_fused.row(i), w, out.row_mut(i));
    }

    let full = project_full(tokens_fused, w)?;
    let (max_row_error, worst_row) = max_row_gap(&out, &full);
    let d_in = tokens_fused.cols() as u64;
    let ledger = ReuseLedger {
        reused_rows: reused,
        recomputed_rows: n - reused,
        saved_multiplications: reused as u64 * d_in * w.cols() as u64,
        max_row_error,
        worst_row,
    };
    Ok((out, ledger))
}

fn max_row_gap(a: &Matrix, b: &Matrix) -> (f64, Option<usize>) {
    let mut worst = (0.0, None);
    for i in 0..a.rows() {
        for (x, y) in a.row(i).iter().zip(b.row(i)) {
            let gap = (x - y).abs();
            // NaN gaps count as errors too
            if gap > worst.0 || (gap.is_nan() && !worst.0.is_nan()) {
                worst = (gap, Some(i));
            }
        }
    }
    worst
}

/// One recorded step of a fused sequence.
#[derive(Debug, Clone, Copy)]
pub struct ReplayStep<'a> {
    pub fused_tokens: &'a TokenMatrix,
    pub fusion_mask: &'a PatchMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepVerification {
    pub step: usize,
    pub reused_rows: usize,
    pub recomputed_rows: usize,
    /// Summed over Q, K and V.
    pub saved_multiplications: u64,
    pub max_error_q: f64,
    pub max_error_k: f64,
    pub max_error_v: f64,
    /// First (projection, row) with a nonzero error, if any.
    pub fault: Option<(Projection, usize)>,
}

impl StepVerification {
    pub fn max_error(&self) -> f64 {
        self.max_error_q.max(self.max_error_k).max(self.max_error_v)
    }

    pub fn is_exact(&self) -> bool {
        self.fault.is_none()
    }
}

/// Replay a fused sequence through selective Q/K/V projection, carrying each
/// step's selective result forward as the next step's previous projection.
pub fn verify_equivalence(
    steps: &[ReplayStep<'_>],
    projections: &ProjectionSet,
) -> Result<Vec<StepVerification>, KqvError> {
    verify_with(steps, projections, |_, _, _| {})
}

/// Like [`verify_equivalence`], with a hook that may alter each previous
/// projection before it is reused (fault injection).
pub fn verify_with(
    steps: &[ReplayStep<'_>],
    projections: &ProjectionSet,
    mut tamper: impl FnMut(usize, Projection, &mut Matrix),
) -> Result<Vec<StepVerification>, KqvError> {
    let d = projections.dim();
    let mut prev: [Option<Matrix>; 3] = [None, None, None];
    let mut out = Vec::with_capacity(steps.len());
    for (step, rs) in steps.iter().enumerate() {
        if rs.fused_tokens.cols() != d {
            return Err(KqvError::Dim {
                step,
                expected: d,
                found: rs.fused_tokens.cols(),
            });
        }
        let mut v = StepVerification {
            step,
            reused_rows: 0,
            recomputed_rows: 0,
            saved_multiplications: 0,
            max_error_q: 0.0,
            max_error_k: 0.0,
            max_error_v: 0.0,
            fault: None,
        };
        for (slot, which) in Projection::ALL.into_iter().enumerate() {
            if let Some(p) = prev[slot].as_mut() {
                tamper(step, which, p);
            }
            let (proj, ledger) = project_selective(
                rs.fused_tokens,
                prev[slot].as_ref(),
                rs.fusion_mask,
                projections.get(which),
            )?;
            v.reused_rows = ledger.reused_rows;
            v.recomputed_rows = ledger.recomputed_rows;
            v.saved_multiplications += ledger.saved_multiplications;
            match which {
                Projection::Q => v.max_error_q = ledger.max_row_error,
                Projection::K => v.max_error_k = ledger.max_row_error,
                Projection::V => v.max_error_v = ledger.max_row_error,
            }
            if v.fault.is_none() {
                if let Some(row) = ledger.worst_row {
                    v.fault = Some((which, row));
                }
            }
            prev[slot] = Some(proj);
        }
        out.push(v);
    }
    Ok(out)
}
