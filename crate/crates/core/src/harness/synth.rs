//! Synthetic manipulation-like episodes with known ground truth.
//!
//! Generation consumes a single splitmix64 stream in this order:
//!
//! 1. background: one draw per pixel, row-major; gray level
//!    `g = 40 + below(141)`, stored as RGB `(g + 10, g, g - 10)`;
//! 2. per frame `t >= 1`, when `change_fraction > 0`: `round(change_fraction · N)`
//!    distinct patches chosen by a partial Fisher–Yates shuffle, each
//!    refilled persistently with a new level drawn like the background;
//! 3. the walker (if on) paints patch `walker_patch(t)` white for that frame only;
//! 4. per frame, when `noise_amplitude > 0`: one draw per pixel, row-major,
//!    `round(u · noise_amplitude · 255)` added to all three channels with
//!    saturation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::imagio::{save_sequence, FrameObservation, PatchGrid};
use crate::toyenc::SplitMix64;

pub const WALKER_RGB: [u8; 3] = [255, 255, 255];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub frame_count: usize,
    pub width: usize,
    pub height: usize,
    /// Fraction of patches changed at every step after the first.
    pub change_fraction: f64,
    pub walker: bool,
    /// Per-pixel additive noise upper bound, in luminance units `[0, 1]`.
    pub noise_amplitude: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            frame_count: 100,
            width: 224,
            height: 224,
            change_fraction: 0.0,
            walker: false,
            noise_amplitude: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        PatchGrid::for_dims(self.width, self.height)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.frame_count == 0 {
            return Err(HarnessError::Config("synth.frame_count must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.change_fraction) {
            return Err(HarnessError::Config("synth.change_fraction must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_amplitude) {
            return Err(HarnessError::Config("synth.noise_amplitude must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> PatchGrid {
        PatchGrid::for_dims(self.width, self.height).expect("validated spec")
    }
}

/// Patch occupied by the walker at frame `t`: a boustrophedon sweep of the
/// grid, one patch per frame, restarting at patch 0 after the last cell.
pub fn walker_patch(grid: &PatchGrid, t: usize) -> usize {
    let k = t % grid.patch_count();
    let (row, offset) = (k / grid.cols(), k % grid.cols());
    let col = if row % 2 == 0 { offset } else { grid.cols() - 1 - offset };
    row * grid.cols() + col
}

fn background_rgb(level: u8) -> [u8; 3] {
    [level + 10, level, level - 10]
}

fn draw_level(rng: &mut SplitMix64) -> u8 {
    40 + rng.below(141) as u8
}

fn fill_patch(frame: &mut FrameObservation, grid: &PatchGrid, i: usize, rgb: [u8; 3]) {
    let r = grid.patch_region(i).expect("patch index in range");
    for row in r.row0..=r.row1 {
        for col in r.col0..=r.col1 {
            frame.set_pixel(row, col, rgb);
        }
    }
}

pub fn synthesize(spec: &SynthSpec) -> Result<Vec<FrameObservation>, HarnessError> {
    spec.validate()?;
    let grid = spec.grid();
    let n = grid.patch_count();
    let mut rng = SplitMix64::new(spec.seed);

    let pixels = (0..spec.width * spec.height)
        .flat_map(|_| background_rgb(draw_level(&mut rng)))
        .collect();
    let mut scene = FrameObservation::new(spec.width, spec.height, pixels, 0)
        .map_err(|e| HarnessError::Config(e.to_string()))?;

    let changes = (spec.change_fraction * n as f64).round() as usize;
    let noise_scale = spec.noise_amplitude * 255.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut frames = Vec::with_capacity(spec.frame_count);
    for t in 0..spec.frame_count {
        if t > 0 && changes > 0 {
            for k in 0..changes {
                let j = k + rng.below((n - k) as u64) as usize;
                order.swap(k, j);
                let level = draw_level(&mut rng);
                fill_patch(&mut scene, &grid, order[k], background_rgb(level));
            }
        }
        let mut frame = scene.clone().with_timestep(t as u64);
        if spec.walker {
            fill_patch(&mut frame, &grid, walker_patch(&grid, t), WALKER_RGB);
        }
        if noise_scale > 0.0 {
            for row in 0..spec.height {
                for col in 0..spec.width {
                    let v = (rng.next_f64() * noise_scale).round() as u8;
                    let px = frame.pixel(row, col).map(|c| c.saturating_add(v));
                    frame.set_pixel(row, col, px);
                }
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

pub fn write_synth(spec: &SynthSpec, dir: &Path) -> Result<Vec<FrameObservation>, HarnessError> {
    let frames = synthesize(spec)?;
    save_sequence(dir, &frames)?;
    Ok(frames)
}
