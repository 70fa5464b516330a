//! Frame ingestion: binary PPM frames, luminance conversion and the fixed
//! 14×14 patch grid that indexes every per-patch mask and token row.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Side length of a square patch, in pixels.
pub const PATCH_SIDE: usize = 14;
/// Pixels per patch.
pub const PATCH_AREA: usize = PATCH_SIDE * PATCH_SIDE;

const LUMA_R: f64 = 0.299;
const LUMA_G: f64 = 0.587;
const LUMA_B: f64 = 0.114;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("dimension not multiple of 14: {width}x{height}")]
    DimensionNotMultiple { width: usize, height: usize },
    #[error("truncated pixel data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("pixel buffer length {found} does not match {width}x{height}x3")]
    BufferLength {
        width: usize,
        height: usize,
        found: usize,
    },
    #[error("patch index {index} out of range for grid of {count} patches")]
    PatchOutOfRange { index: usize, count: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ImageError {
    /// Stable numeric code per error kind.
    pub fn code(&self) -> u32 {
        match self {
            ImageError::MalformedHeader(_) => 1,
            ImageError::DimensionNotMultiple { .. } => 2,
            ImageError::Truncated { .. } => 3,
            ImageError::BufferLength { .. } => 4,
            ImageError::PatchOutOfRange { .. } => 5,
            ImageError::Io { .. } => 6,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        ImageError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One RGB frame of a sequence.
#[derive(Clone, PartialEq, Eq)]
pub struct FrameObservation {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    timestep: u64,
}

impl fmt::Debug for FrameObservation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FrameObservation")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("timestep", &self.timestep)
            .finish_non_exhaustive()
    }
}

impl FrameObservation {
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<u8>,
        timestep: u64,
    ) -> Result<Self, ImageError> {
        check_dims(width, height)?;
        if pixels.len() != width * height * 3 {
            return Err(ImageError::BufferLength {
                width,
                height,
                found: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
            timestep,
        })
    }

    /// A frame filled with one colour.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3], timestep: u64) -> Result<Self, ImageError> {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, pixels, timestep)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn timestep(&self) -> u64 {
        self.timestep
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let o = (row * self.width + col) * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let o = (row * self.width + col) * 3;
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn with_timestep(mut self, timestep: u64) -> Self {
        self.timestep = timestep;
        self
    }

    pub fn grid(&self) -> PatchGrid {
        PatchGrid::for_dims(self.width, self.height).expect("frame dims validated on construction")
    }

    /// Serialize as binary PPM (P6, maxval 255).
    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Parse a binary PPM. Header comments are skipped.
    pub fn from_ppm_bytes(bytes: &[u8], timestep: u64) -> Result<Self, ImageError> {
        let mut cursor = HeaderCursor::new(bytes);
        let magic = cursor.token()?;
        if magic != "P6" {
            return Err(ImageError::MalformedHeader(format!("expected P6, found {magic:?}")));
        }
        let width = cursor.number("width")?;
        let height = cursor.number("height")?;
        let maxval = cursor.number("maxval")?;
        if maxval != 255 {
            return Err(ImageError::MalformedHeader(format!("maxval must be 255, found {maxval}")));
        }
        // exactly one whitespace byte separates maxval from the raster
        match bytes.get(cursor.pos) {
            Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
            _ => return Err(ImageError::MalformedHeader("missing raster separator".into())),
        }
        if width == 0 || height == 0 {
            return Err(ImageError::MalformedHeader("zero dimension".into()));
        }
        check_dims(width, height)?;
        let expected = width * height * 3;
        let raster = &bytes[cursor.pos..];
        if raster.len() < expected {
            return Err(ImageError::Truncated {
                expected,
                found: raster.len(),
            });
        }
        Self::new(width, height, raster[..expected].to_vec(), timestep)
    }
}

fn check_dims(width: usize, height: usize) -> Result<(), ImageError> {
    if width == 0 || height == 0 || width % PATCH_SIDE != 0 || height % PATCH_SIDE != 0 {
        return Err(ImageError::DimensionNotMultiple { width, height });
    }
    Ok(())
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a str, ImageError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImageError::MalformedHeader("unexpected end of header".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| ImageError::MalformedHeader("non-ASCII header token".into()))
    }

    fn number(&mut self, what: &str) -> Result<usize, ImageError> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| ImageError::MalformedHeader(format!("bad {what}: {tok:?}")))
    }
}

pub fn load_frame(path: &Path, timestep: u64) -> Result<FrameObservation, ImageError> {
    let bytes = fs::read(path).map_err(|e| ImageError::io(path, e))?;
    FrameObservation::from_ppm_bytes(&bytes, timestep)
}

pub fn save_frame(path: &Path, frame: &FrameObservation) -> Result<(), ImageError> {
    fs::write(path, frame.to_ppm_bytes()).map_err(|e| ImageError::io(path, e))
}

/// Canonical file name of frame `index` inside a sequence directory.
pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.ppm")
}

/// Load every `frame_NNNNNN.ppm` in `dir`, ordered by index. The indices
/// must be contiguous from 0; timestep `t` is assigned to index `t`.
pub fn load_sequence(dir: &Path) -> Result<Vec<FrameObservation>, ImageError> {
    let entries = fs::read_dir(dir).map_err(|e| ImageError::io(dir, e))?;
    let mut indexed = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| ImageError::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(index) = name
            .strip_prefix("frame_")
            .and_then(|s| s.strip_suffix(".ppm"))
            .filter(|s| s.len() == 6)
            .and_then(|s| s.parse::<usize>().ok())
        else {
            continue;
        };
        indexed.push((index, entry.path()));
    }
    indexed.sort();
    indexed
        .into_iter()
        .enumerate()
        .map(|(t, (index, path))| {
            if index != t {
                return Err(ImageError::io(
                    &path,
                    std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        format!("sequence gap: expected {}", frame_file_name(t)),
                    ),
                ));
            }
            load_frame(&path, t as u64)
        })
        .collect()
}

pub fn save_sequence(dir: &Path, frames: &[FrameObservation]) -> Result<(), ImageError> {
    fs::create_dir_all(dir).map_err(|e| ImageError::io(dir, e))?;
    for (i, frame) in frames.iter().enumerate() {
        save_frame(&dir.join(frame_file_name(i)), frame)?;
    }
    Ok(())
}

/// Write an 8-bit binary PGM (P5, maxval 255).
pub fn save_pgm(path: &Path, width: usize, height: usize, values: &[u8]) -> Result<(), ImageError> {
    debug_assert_eq!(values.len(), width * height);
    let write = || -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        write!(f, "P5\n{width} {height}\n255\n")?;
        f.write_all(values)?;
        f.flush()
    };
    write().map_err(|e| ImageError::io(path, e))
}

/// Row-major luminance image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayscaleImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl GrayscaleImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), width * height);
        Self {
            width,
            height,
            values,
        }
    }
}

/// Luminance of one 8-bit RGB sample, normalized to `[0, 1]`.
#[inline]
pub fn luminance(rgb: [u8; 3]) -> f64 {
    let y = LUMA_R * f64::from(rgb[0]) + LUMA_G * f64::from(rgb[1]) + LUMA_B * f64::from(rgb[2]);
    (y / 255.0).min(1.0)
}

pub fn to_grayscale(frame: &FrameObservation) -> GrayscaleImage {
    let values = frame
        .pixels
        .chunks_exact(3)
        .map(|p| luminance([p[0], p[1], p[2]]))
        .collect();
    GrayscaleImage {
        width: frame.width,
        height: frame.height,
        values,
    }
}

/// Inclusive pixel bounds of one patch: rows `row0..=row1`, columns
/// `col0..=col1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchRegion {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl PatchRegion {
    pub fn as_tuple(&self) -> (usize, usize, usize, usize) {
        (self.row0, self.col0, self.row1, self.col1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    rows: usize,
    cols: usize,
}

impl PatchGrid {
    pub fn for_dims(width: usize, height: usize) -> Result<Self, ImageError> {
        check_dims(width, height)?;
        Ok(Self {
            rows: height / PATCH_SIDE,
            cols: width / PATCH_SIDE,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn patch_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn width(&self) -> usize {
        self.cols * PATCH_SIDE
    }

    pub fn height(&self) -> usize {
        self.rows * PATCH_SIDE
    }

    /// (grid row, grid column) of patch `i`.
    pub fn cell(&self, i: usize) -> (usize, usize) {
        (i / self.cols, i % self.cols)
    }

    pub fn patch_region(&self, i: usize) -> Result<PatchRegion, ImageError> {
        if i >= self.patch_count() {
            return Err(ImageError::PatchOutOfRange {
                index: i,
                count: self.patch_count(),
            });
        }
        let (r, c) = self.cell(i);
        let row0 = r * PATCH_SIDE;
        let col0 = c * PATCH_SIDE;
        Ok(PatchRegion {
            row0,
            col0,
            row1: row0 + PATCH_SIDE - 1,
            col1: col0 + PATCH_SIDE - 1,
        })
    }

    /// Patch index containing pixel (row, col).
    pub fn patch_of(&self, row: usize, col: usize) -> usize {
        (row / PATCH_SIDE) * self.cols + col / PATCH_SIDE
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ppm(width: usize, height: usize, fill: u8) -> Vec<u8> {
        let mut b = format!("P6\n{width} {height}\n255\n").into_bytes();
        b.extend(std::iter::repeat_n(fill, width * height * 3));
        b
    }

    #[test]
    fn loads_224_frame() {
        let f = FrameObservation::from_ppm_bytes(&ppm(224, 224, 7), 0).unwrap();
        assert_eq!((f.width(), f.height(), f.timestep()), (224, 224, 0));
        assert_eq!(f.grid().patch_count(), 256);
    }

    #[test]
    fn rejects_non_multiple_of_14() {
        let err = FrameObservation::from_ppm_bytes(&ppm(225, 224, 0), 0).unwrap_err();
        assert!(matches!(err, ImageError::DimensionNotMultiple { .. }));
        assert!(err.to_string().contains("dimension not multiple of 14"));
    }

    #[test]
    fn black_28x28_has_four_patches() {
        let f = FrameObservation::from_ppm_bytes(&ppm(28, 28, 0), 3).unwrap();
        assert_eq!(f.grid().patch_count(), 4);
        assert!(f.pixels().iter().all(|&p| p == 0));
        assert_eq!(f.timestep(), 3);
    }

    #[test]
    fn error_codes_are_distinct() {
        let malformed = FrameObservation::from_ppm_bytes(b"P3\n14 14\n255\n", 0).unwrap_err();
        let dims = FrameObservation::from_ppm_bytes(&ppm(15, 14, 0), 0).unwrap_err();
        let mut short = ppm(14, 14, 0);
        short.truncate(short.len() - 1);
        let truncated = FrameObservation::from_ppm_bytes(&short, 0).unwrap_err();
        assert!(matches!(truncated, ImageError::Truncated { .. }));
        let codes = [malformed.code(), dims.code(), truncated.code()];
        assert_eq!(codes, [1, 2, 3]);
    }

    #[test]
    fn header_comments_tolerated() {
        let mut b = b"P6\n# made by hand\n14 # width\n14\n255\n".to_vec();
        b.extend(std::iter::repeat_n(9u8, 14 * 14 * 3));
        let f = FrameObservation::from_ppm_bytes(&b, 0).unwrap();
        assert_eq!(f.pixel(13, 13), [9, 9, 9]);
    }

    #[test]
    fn rejects_other_maxval() {
        let mut b = b"P6\n14 14\n65535\n".to_vec();
        b.extend(std::iter::repeat_n(0u8, 14 * 14 * 6));
        assert!(matches!(
            FrameObservation::from_ppm_bytes(&b, 0),
            Err(ImageError::MalformedHeader(_))
        ));
    }

    #[test]
    fn ppm_roundtrip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = FrameObservation::filled(28, 14, [1, 2, 3], 0).unwrap();
        f.set_pixel(5, 20, [200, 100, 50]);
        let path = dir.path().join(frame_file_name(0));
        save_frame(&path, &f).unwrap();
        assert_eq!(load_frame(&path, 0).unwrap(), f);
    }

    #[test]
    fn sequence_loads_in_index_order_and_detects_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<_> = (0..3u8)
            .map(|i| FrameObservation::filled(14, 14, [i, i, i], u64::from(i)).unwrap())
            .collect();
        save_sequence(dir.path(), &frames).unwrap();
        let loaded = load_sequence(dir.path()).unwrap();
        assert_eq!(loaded, frames);

        fs::remove_file(dir.path().join(frame_file_name(1))).unwrap();
        assert!(load_sequence(dir.path()).is_err());
    }

    #[test]
    fn luminance_reference_values() {
        assert_eq!(luminance([255, 255, 255]), 1.0);
        assert!((luminance([255, 0, 0]) - 0.299).abs() < 1e-15);
        assert_eq!(luminance([0, 0, 0]), 0.0);
    }

    #[test]
    fn patch_regions() {
        let grid = PatchGrid::for_dims(224, 224).unwrap();
        assert_eq!(grid.cols(), 16);
        assert_eq!(grid.patch_region(0).unwrap().as_tuple(), (0, 0, 13, 13));
        assert_eq!(grid.patch_region(16).unwrap().as_tuple(), (14, 0, 27, 13));
        assert_eq!(grid.patch_region(255).unwrap().as_tuple(), (210, 210, 223, 223));
        assert!(matches!(
            grid.patch_region(256),
            Err(ImageError::PatchOutOfRange { index: 256, count: 256 })
        ));
    }

    #[test]
    fn patch_regions_partition_the_frame() {
        let grid = PatchGrid::for_dims(70, 42).unwrap();
        let mut cover = vec![0u32; 70 * 42];
        for i in 0..grid.patch_count() {
            let r = grid.patch_region(i).unwrap();
            for row in r.row0..=r.row1 {
                for col in r.col0..=r.col1 {
                    cover[row * 70 + col] += 1;
                    assert_eq!(grid.patch_of(row, col), i);
                }
            }
        }
        assert!(cover.iter().all(|&c| c == 1));
    }

    proptest! {
        #[test]
        fn luminance_bounded_and_monotone(r: u8, g: u8, b: u8) {
            let y = luminance([r, g, b]);
            prop_assert!((0.0..=1.0).contains(&y));
            if r < 255 { prop_assert!(luminance([r + 1, g, b]) >= y); }
            if g < 255 { prop_assert!(luminance([r, g + 1, b]) >= y); }
            if b < 255 { prop_assert!(luminance([r, g, b + 1]) >= y); }
        }

        #[test]
        fn grayscale_is_patch_local(pixels in proptest::collection::vec(any::<u8>(), 28 * 42 * 3)) {
            let frame = FrameObservation::new(28, 42, pixels, 0).unwrap();
            let whole = to_grayscale(&frame);
            let grid = frame.grid();
            let mut reassembled = vec![f64::NAN; 28 * 42];
            for i in 0..grid.patch_count() {
                let r = grid.patch_region(i).unwrap();
                let mut patch = FrameObservation::filled(14, 14, [0, 0, 0], 0).unwrap();
                for row in 0..PATCH_SIDE {
                    for col in 0..PATCH_SIDE {
                        patch.set_pixel(row, col, frame.pixel(r.row0 + row, r.col0 + col));
                    }
                }
                let g = to_grayscale(&patch);
                for row in 0..PATCH_SIDE {
                    for col in 0..PATCH_SIDE {
                        reassembled[(r.row0 + row) * 28 + r.col0 + col] = g.get(row, col);
                    }
                }
            }
            prop_assert_eq!(whole.values(), &reassembled[..]);
        }
    }
}
