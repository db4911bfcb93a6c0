//! Parallel self-refinement: one second-stage forecaster per horizon segment,
//! each trained on its own augmented dataset and ranked by validation MSE.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augmented_examples, SegmentSpec};
use crate::codec::write_atomic;
use crate::error::{ForecastError, Result};
use crate::linear::{dataset_mse, init_model, train, Examples, LinearForecaster, ModelKind, TrainConfig};
use crate::matrix::Matrix;
use crate::series::WindowPair;

/// Augmented train/val data for one segment.
#[derive(Debug, Clone)]
pub struct SegmentData {
    pub segment: SegmentSpec,
    pub train: Examples,
    pub val: Examples,
}

impl SegmentData {
    pub fn build(
        segment: SegmentSpec,
        train_windows: &[WindowPair],
        train_forecasts: &Matrix,
        val_windows: &[WindowPair],
        val_forecasts: &Matrix,
    ) -> Result<Self> {
        Ok(Self {
            segment,
            train: augmented_examples(train_windows, train_forecasts, &segment)?,
            val: augmented_examples(val_windows, val_forecasts, &segment)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub segment: SegmentSpec,
    pub model: LinearForecaster,
    pub val_mse: f64,
    /// 1 is the best validation MSE.
    pub rank: usize,
}

/// Second-stage models in segment order, each carrying its rank.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementPool {
    pub entries: Vec<PoolEntry>,
    pub base_seed: u64,
}

/// Ranks by ascending val MSE; ties go to the smaller segment start, then index.
pub fn assign_ranks(val_mse: &[f64], segments: &[SegmentSpec]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..val_mse.len()).collect();
    order.sort_by(|&a, &b| {
        val_mse[a]
            .total_cmp(&val_mse[b])
            .then(segments[a].start.cmp(&segments[b].start))
            .then(segments[a].index.cmp(&segments[b].index))
    });
    let mut ranks = vec![0; val_mse.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}

/// Settings shared by every pool member.
#[derive(Debug, Clone, Copy)]
pub struct PoolSettings {
    pub kind: ModelKind,
    pub kernel: usize,
    pub train: TrainConfig,
    pub base_seed: u64,
}

fn train_member(data: &SegmentData, settings: &PoolSettings) -> Result<(LinearForecaster, f64)> {
    let seed = settings.base_seed.wrapping_add(data.segment.index as u64);
    let wrap = |e: ForecastError| ForecastError::PoolMember {
        segment: data.segment.index,
        source: Box::new(e),
    };
    let model = init_model(
        settings.kind,
        data.train.inputs.cols(),
        data.train.targets.cols(),
        settings.kernel,
        seed,
    )
    .map_err(wrap)?;
    let cfg = TrainConfig {
        seed,
        ..settings.train
    };
    let (model, _) = train(model, &data.train, Some(&data.val), &cfg).map_err(wrap)?;
    let val_mse = dataset_mse(&model, &data.val).map_err(wrap)?;
    Ok((model, val_mse))
}

/// Trains one model per segment dataset. Member `i` uses seed `base_seed + i`
/// (1-based segment index). `workers <= 1` trains sequentially; otherwise a
/// dedicated pool of `workers` threads is used. Results are identical either way.
pub fn train_pool(datasets: &[SegmentData], settings: &PoolSettings, workers: usize) -> Result<RefinementPool> {
    if datasets.is_empty() {
        return Err(ForecastError::param("pool requires at least one segment dataset"));
    }
    let results: Vec<Result<(LinearForecaster, f64)>> = if workers <= 1 {
        datasets.iter().map(|d| train_member(d, settings)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| ForecastError::param(format!("cannot start worker pool: {e}")))?;
        pool.install(|| datasets.par_iter().map(|d| train_member(d, settings)).collect())
    };

    let mut trained = Vec::with_capacity(results.len());
    for r in results {
        trained.push(r?);
    }
    let segments: Vec<SegmentSpec> = datasets.iter().map(|d| d.segment).collect();
    let val: Vec<f64> = trained.iter().map(|(_, v)| *v).collect();
    let ranks = assign_ranks(&val, &segments);
    let entries = trained
        .into_iter()
        .zip(segments)
        .zip(ranks)
        .map(|(((model, val_mse), segment), rank)| PoolEntry {
            segment,
            model,
            val_mse,
            rank,
        })
        .collect();
    Ok(RefinementPool {
        entries,
        base_seed: settings.base_seed,
    })
}

impl RefinementPool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries ordered by rank (best first).
    pub fn ranked(&self) -> Vec<&PoolEntry> {
        let mut v: Vec<&PoolEntry> = self.entries.iter().collect();
        v.sort_by_key(|e| e.rank);
        v
    }

    /// Re-derives ranks from the current `val_mse` values.
    pub fn rerank(&mut self) {
        let val: Vec<f64> = self.entries.iter().map(|e| e.val_mse).collect();
        let segs: Vec<SegmentSpec> = self.entries.iter().map(|e| e.segment).collect();
        for (e, r) in self.entries.iter_mut().zip(assign_ranks(&val, &segs)) {
            e.rank = r;
        }
    }

    /// Canonical byte form: base seed, then per member (segment order) the
    /// segment, val MSE, rank and the model record.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.base_seed.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            for v in [e.segment.index, e.segment.start, e.segment.end, e.rank] {
                out.extend_from_slice(&(v as u64).to_le_bytes());
            }
            out.extend_from_slice(&e.val_mse.to_le_bytes());
            let m = e.model.to_bytes();
            out.extend_from_slice(&(m.len() as u64).to_le_bytes());
            out.extend_from_slice(&m);
        }
        out
    }

    /// Writes one model file per member plus `pool.json`; returns the manifest path.
    pub fn save(&self, dir: &Path, first_stage_hash: &str) -> Result<PathBuf> {
        let mut members = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let file = format!("member-{:03}.bin", e.segment.index);
            e.model.save(&dir.join(&file))?;
            members.push(ManifestEntry {
                index: e.segment.index,
                start: e.segment.start,
                end: e.segment.end,
                model_path: file,
                val_mse: e.val_mse,
                rank: e.rank,
            });
        }
        let manifest = PoolManifest {
            version: PoolManifest::VERSION,
            base_seed: self.base_seed,
            first_stage_hash: first_stage_hash.to_string(),
            members,
        };
        let path = dir.join("pool.json");
        write_atomic(&path, &serde_json::to_vec_pretty(&manifest)?)?;
        Ok(path)
    }

    /// Loads a pool from its manifest; model paths resolve relative to it.
    pub fn load(manifest_path: &Path) -> Result<(Self, PoolManifest)> {
        let manifest = PoolManifest::load(manifest_path)?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let entries = manifest
            .members
            .iter()
            .map(|m| {
                Ok(PoolEntry {
                    segment: SegmentSpec {
                        index: m.index,
                        start: m.start,
                        end: m.end,
                    },
                    model: LinearForecaster::load(&dir.join(&m.model_path))?,
                    val_mse: m.val_mse,
                    rank: m.rank,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((
            Self {
                entries,
                base_seed: manifest.base_seed,
            },
            manifest,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub model_path: String,
    pub val_mse: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolManifest {
    pub version: u32,
    pub base_seed: u64,
    pub first_stage_hash: String,
    pub members: Vec<ManifestEntry>,
}

impl PoolManifest {
    pub const VERSION: u32 = 1;

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ForecastError::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| ForecastError::Format {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        if m.version != Self::VERSION {
            return Err(ForecastError::Format {
                path: path.to_path_buf(),
                detail: format!("unsupported manifest version {}", m.version),
            });
        }
        Ok(m)
    }

    /// Plain-text table of members in rank order.
    pub fn render(&self) -> String {
        let mut rows: Vec<&ManifestEntry> = self.members.iter().collect();
        rows.sort_by_key(|m| m.rank);
        let mut out = format!(
            "pool: {} members, base_seed {}, first stage {}\n{:>4}  {:>5}  {:>9}  {:>14}  model\n",
            self.members.len(),
            self.base_seed,
            self.first_stage_hash,
            "rank",
            "index",
            "segment",
            "val_mse"
        );
        for m in rows {
            out.push_str(&format!(
                "{:>4}  {:>5}  {:>9}  {:>14.8}  {}\n",
                m.rank,
                m.index,
                format!("[{},{})", m.start, m.end),
                m.val_mse,
                m.model_path
            ));
        }
        out
    }
}

/// Predictions of every member on its own augmented inputs, one
/// `num_windows × H` slice per member, ordered by rank.
pub fn pool_predict(pool: &RefinementPool, windows: &[WindowPair], forecasts: &Matrix) -> Result<Vec<Matrix>> {
    pool.ranked()
        .into_iter()
        .map(|e| {
            let data = augmented_examples(windows, forecasts, &e.segment)?;
            if data.inputs.cols() != e.model.input_len() {
                return Err(ForecastError::param(format!(
                    "segment {} width does not match its model input ({} vs {})",
                    e.segment.index,
                    data.inputs.cols(),
                    e.model.input_len()
                )));
            }
            e.model.predict(&data.inputs)
        })
        .collect()
}

/// Element-wise `second_stage − first_stage`.
pub fn refinement_delta(second_stage: &[f64], first_stage: &[f64]) -> Result<Vec<f64>> {
    if second_stage.len() != first_stage.len() {
        return Err(ForecastError::Shape {
            context: "refinement delta",
            expected: first_stage.len(),
            got: second_stage.len(),
        });
    }
    Ok(second_stage.iter().zip(first_stage).map(|(a, b)| a - b).collect())
}

/// Mean absolute refinement delta per member (rank order), over all cells.
pub fn mean_abs_delta(ranked_preds: &[Matrix], first_stage: &Matrix) -> Result<Vec<f64>> {
    ranked_preds
        .iter()
        .map(|p| {
            let d = refinement_delta(p.as_slice(), first_stage.as_slice())?;
            Ok(d.iter().map(|v| v.abs()).sum::<f64>() / d.len().max(1) as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::enumerate_segments;
    use crate::linear::Strategy;

    fn seg(index: usize, start: usize) -> SegmentSpec {
        SegmentSpec {
            index,
            start,
            end: start + 1,
        }
    }

    #[test]
    fn ranks_follow_val_mse() {
        let segs = [seg(1, 0), seg(2, 1), seg(3, 2)];
        assert_eq!(assign_ranks(&[0.5, 0.2, 0.9], &segs), vec![2, 1, 3]);
        assert_eq!(assign_ranks(&[0.3, 0.3, 0.1], &segs), vec![2, 3, 1]);
        assert_eq!(assign_ranks(&[0.4], &segs[..1]), vec![1]);
    }

    #[test]
    fn delta_arithmetic() {
        assert_eq!(refinement_delta(&[2.0, 2.0], &[1.0, 3.0]).unwrap(), vec![1.0, -1.0]);
        assert_eq!(refinement_delta(&[1.5, 0.0], &[1.5, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert!(refinement_delta(&[1.0], &[1.0, 2.0]).is_err());
    }

    fn toy_windows(n: usize, l: usize, h: usize) -> Vec<WindowPair> {
        let series: Vec<f64> = (0..n + l + h).map(|i| (i as f64 * 0.3).sin()).collect();
        (0..n)
            .map(|i| WindowPair {
                input: series[i..i + l].to_vec(),
                target: series[i + l..i + l + h].to_vec(),
                anchor: i + l - 1,
            })
            .collect()
    }

    fn toy_pool(workers: usize, base_seed: u64) -> (RefinementPool, Vec<WindowPair>, Matrix) {
        let (l, h) = (6, 6);
        let windows = toy_windows(40, l, h);
        let stage1 = init_model(ModelKind::Plain, l, h, 1, 3).unwrap();
        let fc = crate::augment::first_stage_forecasts(&stage1, &windows).unwrap();
        let segs = enumerate_segments(h, 2, &[1]).unwrap();
        let data: Vec<_> = segs
            .iter()
            .map(|s| SegmentData::build(*s, &windows[..30], &fc_rows(&fc, 0, 30), &windows[30..], &fc_rows(&fc, 30, 40)).unwrap())
            .collect();
        let settings = PoolSettings {
            kind: ModelKind::Plain,
            kernel: 1,
            train: TrainConfig {
                strategy: Strategy::EarlyStopping,
                max_epochs: 4,
                batch_size: 8,
                ..TrainConfig::default()
            },
            base_seed,
        };
        (train_pool(&data, &settings, workers).unwrap(), windows, fc)
    }

    fn fc_rows(m: &Matrix, from: usize, to: usize) -> Matrix {
        Matrix::from_rows(m.cols(), (from..to).map(|i| m.row(i))).unwrap()
    }

    #[test]
    fn parallel_and_sequential_pools_are_identical() {
        let (a, _, _) = toy_pool(1, 10);
        let (b, _, _) = toy_pool(2, 10);
        let (c, _, _) = toy_pool(a.len(), 10);
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a.to_bytes(), c.to_bytes());
        let ranks: std::collections::BTreeSet<_> = a.entries.iter().map(|e| e.rank).collect();
        assert_eq!(ranks, (1..=a.len()).collect());
    }

    #[test]
    fn base_seed_changes_parameters_only() {
        let (a, _, _) = toy_pool(1, 10);
        let (b, _, _) = toy_pool(1, 11);
        assert_ne!(a.entries[0].model.params(), b.entries[0].model.params());
        assert_eq!(a.entries[0].segment, b.entries[0].segment);
    }

    #[test]
    fn predictions_follow_rank_order() {
        let (mut pool, windows, fc) = toy_pool(1, 10);
        let preds = pool_predict(&pool, &windows[..2], &fc_rows(&fc, 0, 2)).unwrap();
        assert_eq!(preds.len(), pool.len());
        for (slice, entry) in preds.iter().zip(pool.ranked()) {
            let aug = augmented_examples(&windows[..2], &fc_rows(&fc, 0, 2), &entry.segment).unwrap();
            for r in 0..2 {
                let direct = entry.model.forward(aug.inputs.row(r)).unwrap();
                assert_eq!(slice.row(r), direct.as_slice());
            }
        }

        // Swapping the val MSE of the top two swaps their slices.
        let first = pool.ranked()[0].segment.index;
        let second = pool.ranked()[1].segment.index;
        let (i, j) = (
            pool.entries.iter().position(|e| e.segment.index == first).unwrap(),
            pool.entries.iter().position(|e| e.segment.index == second).unwrap(),
        );
        let tmp = pool.entries[i].val_mse;
        pool.entries[i].val_mse = pool.entries[j].val_mse;
        pool.entries[j].val_mse = tmp;
        pool.rerank();
        let swapped = pool_predict(&pool, &windows[..2], &fc_rows(&fc, 0, 2)).unwrap();
        assert_eq!(swapped[0], preds[1]);
        assert_eq!(swapped[1], preds[0]);
    }

    #[test]
    fn manifest_round_trip() {
        let (pool, _, _) = toy_pool(1, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = pool.save(dir.path(), "cafe").unwrap();
        let (back, manifest) = RefinementPool::load(&path).unwrap();
        assert_eq!(back.to_bytes(), pool.to_bytes());
        assert_eq!(manifest.first_stage_hash, "cafe");
        let text = manifest.render();
        assert!(text.lines().nth(2).unwrap().trim_start().starts_with('1'));
    }

    #[test]
    fn member_failure_names_segment() {
        let windows = toy_windows(10, 3, 3);
        let fc = Matrix::zeros(10, 3);
        let segs = enumerate_segments(3, 1, &[1]).unwrap();
        let data: Vec<_> = segs
            .iter()
            .map(|s| SegmentData::build(*s, &windows, &fc, &[], &Matrix::zeros(0, 3)).unwrap())
            .collect();
        let settings = PoolSettings {
            kind: ModelKind::Plain,
            kernel: 1,
            train: TrainConfig::default(),
            base_seed: 0,
        };
        match train_pool(&data, &settings, 1) {
            Err(ForecastError::PoolMember { segment, .. }) => assert_eq!(segment, 1),
            other => panic!("{other:?}"),
        }
    }
}
