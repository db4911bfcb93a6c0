//! Look-ahead augmentation: horizon segments of a first-stage forecast are
//! appended to the original input window.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{write_atomic, Reader};
use crate::error::{ForecastError, Result};
use crate::linear::{Examples, LinearForecaster};
use crate::matrix::Matrix;
use crate::series::WindowPair;

/// Half-open range `[start, end)` of horizon offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentSpec {
    /// 1-based position in the enumeration.
    pub index: usize,
    pub start: usize,
    pub end: usize,
}

impl SegmentSpec {
    pub fn width(&self) -> usize {
        self.end - self.start
    }
}

/// One third of the horizon, at least one step.
pub fn default_segment_width(horizon: usize) -> usize {
    (horizon / 3).max(1)
}

/// Segments of width `width` starting at multiples of each stride, pooled over
/// strides, deduplicated and sorted by `(start, end)`.
pub fn enumerate_segments(horizon: usize, width: usize, strides: &[usize]) -> Result<Vec<SegmentSpec>> {
    if width == 0 || width > horizon {
        return Err(ForecastError::param(format!(
            "segment width must lie in [1, H={horizon}], got {width}"
        )));
    }
    if strides.is_empty() {
        return Err(ForecastError::param("at least one stride is required"));
    }
    if let Some(bad) = strides.iter().find(|s| **s == 0) {
        return Err(ForecastError::param(format!("strides must be >= 1, got {bad}")));
    }
    let starts: BTreeSet<usize> = strides
        .iter()
        .flat_map(|&s| (0..=horizon - width).step_by(s))
        .collect();
    Ok(starts
        .into_iter()
        .enumerate()
        .map(|(i, start)| SegmentSpec {
            index: i + 1,
            start,
            end: start + width,
        })
        .collect())
}

/// First-stage forecast for every window, row-aligned with `windows`.
pub fn first_stage_forecasts(model: &LinearForecaster, windows: &[WindowPair]) -> Result<Matrix> {
    let mut out = Matrix::zeros(windows.len(), model.horizon());
    for (j, w) in windows.iter().enumerate() {
        out.row_mut(j).copy_from_slice(&model.forward(&w.input)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedWindow<'a> {
    pub base: &'a WindowPair,
    pub segment: SegmentSpec,
    pub input_aug: Vec<f64>,
}

fn check_alignment(windows: &[WindowPair], forecasts: &Matrix, segment: &SegmentSpec) -> Result<()> {
    if forecasts.rows() != windows.len() {
        return Err(ForecastError::Shape {
            context: "forecast rows vs windows",
            expected: windows.len(),
            got: forecasts.rows(),
        });
    }
    if segment.start >= segment.end || segment.end > forecasts.cols() {
        return Err(ForecastError::param(format!(
            "segment [{}, {}) lies outside the horizon of {}",
            segment.start,
            segment.end,
            forecasts.cols()
        )));
    }
    Ok(())
}

/// `input_aug = [input ; forecast[start..end)]` for each window, targets untouched.
pub fn build_augmented<'a>(
    windows: &'a [WindowPair],
    forecasts: &Matrix,
    segment: &SegmentSpec,
) -> Result<Vec<AugmentedWindow<'a>>> {
    check_alignment(windows, forecasts, segment)?;
    Ok(windows
        .iter()
        .enumerate()
        .map(|(j, w)| {
            let mut input_aug = Vec::with_capacity(w.input.len() + segment.width());
            input_aug.extend_from_slice(&w.input);
            input_aug.extend_from_slice(&forecasts.row(j)[segment.start..segment.end]);
            AugmentedWindow {
                base: w,
                segment: *segment,
                input_aug,
            }
        })
        .collect())
}

/// Augmented inputs and original targets as training matrices.
pub fn augmented_examples(
    windows: &[WindowPair],
    forecasts: &Matrix,
    segment: &SegmentSpec,
) -> Result<Examples> {
    let aug = build_augmented(windows, forecasts, segment)?;
    let l = windows.first().map_or(0, |w| w.input.len()) + segment.width();
    let h = windows.first().map_or(0, |w| w.target.len());
    Examples::new(
        Matrix::from_rows(l, aug.iter().map(|a| &a.input_aug))?,
        Matrix::from_rows(h, windows.iter().map(|w| &w.target))?,
    )
}

/// First-stage forecasts for one split, keyed by the producing model's hash.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastCache {
    pub model_hash: String,
    pub split: String,
    pub forecasts: Matrix,
}

impl ForecastCache {
    const MAGIC: &'static [u8; 4] = b"BTFC";
    pub const FORMAT_VERSION: u32 = 1;

    pub fn file_name(model_hash: &str, split: &str) -> String {
        let short = &model_hash[..model_hash.len().min(16)];
        format!("forecast-{short}-{split}.bin")
    }

    pub fn path_in(dir: &Path, model_hash: &str, split: &str) -> PathBuf {
        dir.join(Self::file_name(model_hash, split))
    }

    /// Magic, version, length-prefixed hash and split name, `num_windows`, `H`,
    /// then row-major little-endian doubles.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(Self::MAGIC);
        out.extend_from_slice(&Self::FORMAT_VERSION.to_le_bytes());
        for s in [&self.model_hash, &self.split] {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        out.extend_from_slice(&(self.forecasts.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(self.forecasts.cols() as u64).to_le_bytes());
        for v in self.forecasts.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |detail: &str| ForecastError::Format {
            path: path.to_path_buf(),
            detail: detail.into(),
        };
        let mut r = Reader::new(bytes);
        if r.take(4) != Some(Self::MAGIC.as_slice()) {
            return Err(bad("bad magic"));
        }
        match r.u32() {
            Some(Self::FORMAT_VERSION) => {}
            Some(v) => return Err(bad(&format!("unsupported version {v}"))),
            None => return Err(bad("truncated")),
        }
        let mut text = || -> Result<String> {
            let n = r.u32().ok_or_else(|| bad("truncated"))? as usize;
            let raw = r.take(n).ok_or_else(|| bad("truncated"))?;
            String::from_utf8(raw.to_vec()).map_err(|_| bad("key is not utf-8"))
        };
        let model_hash = text()?;
        let split = text()?;
        let rows = r.u64().ok_or_else(|| bad("truncated"))? as usize;
        let cols = r.u64().ok_or_else(|| bad("truncated"))? as usize;
        let data = (0..rows * cols)
            .map(|_| r.f64().ok_or_else(|| bad("truncated data")))
            .collect::<Result<Vec<_>>>()?;
        if !r.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            model_hash,
            split,
            forecasts: Matrix::from_vec(rows, cols, data)?,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = Self::path_in(dir, &self.model_hash, &self.split);
        write_atomic(&path, &self.to_bytes())?;
        Ok(path)
    }

    /// Loads the cache for `(model_hash, split)` if present and matching.
    pub fn load(dir: &Path, model_hash: &str, split: &str) -> Result<Option<Self>> {
        let path = Self::path_in(dir, model_hash, split);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(ForecastError::io(&path, e)),
        };
        let cache = Self::from_bytes(&bytes, &path)?;
        Ok((cache.model_hash == model_hash && cache.split == split).then_some(cache))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::{init_model, ModelKind};

    fn brute_segments(h: usize, w: usize, strides: &[usize]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for s in 0..h {
            for e in s + 1..=h {
                if e - s == w && strides.iter().any(|st| s % st == 0) {
                    out.push((s, e));
                }
            }
        }
        out
    }

    #[test]
    fn enumeration_matches_brute_force() {
        for (h, w, strides) in [
            (24, 8, vec![1]),
            (24, 8, vec![8]),
            (3, 3, vec![1, 2, 4, 8]),
            (96, 32, vec![1, 2, 4, 8]),
            (10, 4, vec![3, 2]),
        ] {
            let got: Vec<_> = enumerate_segments(h, w, &strides)
                .unwrap()
                .iter()
                .map(|s| (s.start, s.end))
                .collect();
            assert_eq!(got, brute_segments(h, w, &strides), "H={h} W={w}");
        }
        assert_eq!(enumerate_segments(24, 8, &[1]).unwrap().len(), 17);
        let starts: Vec<_> = enumerate_segments(24, 8, &[8]).unwrap().iter().map(|s| s.start).collect();
        assert_eq!(starts, vec![0, 8, 16]);
        assert_eq!(
            enumerate_segments(3, 3, &[4]).unwrap(),
            vec![SegmentSpec { index: 1, start: 0, end: 3 }]
        );
    }

    #[test]
    fn enumeration_errors() {
        assert!(enumerate_segments(4, 5, &[1]).is_err());
        assert!(enumerate_segments(4, 0, &[1]).is_err());
        assert!(enumerate_segments(4, 2, &[0]).is_err());
    }

    #[test]
    fn stride_one_covers_horizon() {
        for h in 1..30 {
            let w = default_segment_width(h);
            let segs = enumerate_segments(h, w, &[1]).unwrap();
            assert_eq!(segs.len(), h - w + 1);
            let mut covered = vec![false; h];
            for s in &segs {
                assert_eq!(s.width(), w);
                covered[s.start..s.end].iter_mut().for_each(|c| *c = true);
            }
            assert!(covered.into_iter().all(|c| c));
        }
    }

    fn window(input: Vec<f64>, target: Vec<f64>) -> WindowPair {
        WindowPair {
            input,
            target,
            anchor: 0,
        }
    }

    #[test]
    fn augmentation_concatenates_segment() {
        let ws = vec![window(vec![1.0, 2.0, 3.0], vec![0.5, 0.6, 0.7])];
        let fc = Matrix::from_rows(3, [[9.0, 8.0, 7.0]]).unwrap();
        let first = build_augmented(&ws, &fc, &SegmentSpec { index: 1, start: 0, end: 1 }).unwrap();
        assert_eq!(first[0].input_aug, vec![1.0, 2.0, 3.0, 9.0]);
        let last = build_augmented(&ws, &fc, &SegmentSpec { index: 3, start: 2, end: 3 }).unwrap();
        assert_eq!(last[0].input_aug, vec![1.0, 2.0, 3.0, 7.0]);
        assert_eq!(last[0].base.target, vec![0.5, 0.6, 0.7]);
        assert!(build_augmented(&ws, &fc, &SegmentSpec { index: 1, start: 2, end: 4 }).is_err());
    }

    #[test]
    fn first_stage_rows_match_forward() {
        let m = init_model(ModelKind::Dlinear, 4, 3, 3, 11).unwrap();
        let ws: Vec<_> = (0..5)
            .map(|i| window((0..4).map(|j| ((i * 4 + j) as f64).sin()).collect(), vec![0.0; 3]))
            .collect();
        let fc = first_stage_forecasts(&m, &ws).unwrap();
        assert_eq!(fc.shape(), (5, 3));
        for (j, w) in ws.iter().enumerate() {
            let direct = m.forward(&w.input).unwrap();
            for k in 0..3 {
                assert!((fc.get(j, k) - direct[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ForecastCache {
            model_hash: "abcdef0123456789ffff".into(),
            split: "test".into(),
            forecasts: Matrix::from_rows(2, [[1.0, -0.0], [f64::MIN_POSITIVE, 3.5]]).unwrap(),
        };
        let path = cache.save(dir.path()).unwrap();
        assert!(path.ends_with("forecast-abcdef0123456789-test.bin"));
        let back = ForecastCache::load(dir.path(), &cache.model_hash, "test").unwrap().unwrap();
        assert_eq!(back.to_bytes(), cache.to_bytes());
        assert!(ForecastCache::load(dir.path(), &cache.model_hash, "val").unwrap().is_none());
    }
}
