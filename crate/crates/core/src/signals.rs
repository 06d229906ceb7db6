//! Excitation signals, normalization, and dataset plumbing.

use crate::error::{Error, Result};
use crate::fsutil;
use crate::seeds::{SeedStream, MPRS_STREAM};
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Multilevel pseudo-random signal parameters.
///
/// The signal is piecewise constant: every `switching_period_s` it jumps to
/// one of `levels` equally spaced values spanning `[level_lo, level_hi]`,
/// drawn uniformly at random.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MprsConfig {
    pub switching_period_s: f64,
    pub level_lo: f64,
    pub level_hi: f64,
    pub levels: usize,
    pub duration_s: f64,
    pub sample_period_s: f64,
    pub seed: u64,
}

impl MprsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::Config("MPRS needs at least 2 levels".into()));
        }
        if !(self.level_hi >= self.level_lo) {
            return Err(Error::Config("MPRS level interval is inverted".into()));
        }
        if !(self.sample_period_s > 0.0) {
            return Err(Error::Config("sample period must be positive".into()));
        }
        if self.switching_period_s < self.sample_period_s {
            return Err(Error::Config(
                "switching period must be at least one sample period".into(),
            ));
        }
        let per_hold = self.switching_period_s / self.sample_period_s;
        if (per_hold - per_hold.round()).abs() > 1e-9 {
            return Err(Error::Config(
                "switching period must be an integer multiple of the sample period".into(),
            ));
        }
        if self.duration_s < self.switching_period_s {
            return Err(Error::Config(
                "duration must cover at least one switching period".into(),
            ));
        }
        Ok(())
    }

    pub fn samples_per_hold(&self) -> usize {
        (self.switching_period_s / self.sample_period_s).round() as usize
    }

    pub fn total_samples(&self) -> usize {
        (self.duration_s / self.sample_period_s).floor() as usize
    }
}

/// Generate the excitation sequence described by `cfg`, sampled at its
/// sample period. Deterministic per seed.
pub fn generate_mprs(cfg: &MprsConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut stream = SeedStream::new(cfg.seed, MPRS_STREAM);
    let per_hold = cfg.samples_per_hold();
    let total = cfg.total_samples();
    let holds = total.div_ceil(per_hold);
    let span = cfg.level_hi - cfg.level_lo;
    let step = span / (cfg.levels - 1) as f64;
    let mut out = Vec::with_capacity(total);
    for _ in 0..holds {
        let idx = stream.random_range(0..cfg.levels);
        let level = cfg.level_lo + idx as f64 * step;
        for _ in 0..per_hold {
            if out.len() == total {
                break;
            }
            out.push(level);
        }
    }
    Ok(out)
}

/// Per-channel affine map taking an observed physical range onto [-1, 1].
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AffineScaler {
    pub gains: Vec<f64>,
    pub offsets: Vec<f64>,
}

impl AffineScaler {
    pub fn identity(channels: usize) -> Self {
        Self {
            gains: vec![1.0; channels],
            offsets: vec![0.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gains.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.gains.len() != self.offsets.len() {
            return Err(Error::Dimension("scaler gain/offset length mismatch".into()));
        }
        for (c, g) in self.gains.iter().enumerate() {
            if *g == 0.0 || !g.is_finite() {
                return Err(Error::ConstantChannel(c));
            }
        }
        Ok(())
    }

    /// Columns are channels; maps each column through `gain * x + offset`.
    pub fn apply(&self, seq: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(seq.ncols(), self.channels(), "scaler channel mismatch");
        DMatrix::from_fn(seq.nrows(), seq.ncols(), |i, j| {
            self.gains[j] * seq[(i, j)] + self.offsets[j]
        })
    }

    pub fn invert(&self, seq: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(seq.ncols(), self.channels(), "scaler channel mismatch");
        DMatrix::from_fn(seq.nrows(), seq.ncols(), |i, j| {
            (seq[(i, j)] - self.offsets[j]) / self.gains[j]
        })
    }

    pub fn apply_sample(&self, sample: &[f64]) -> Vec<f64> {
        assert_eq!(sample.len(), self.channels(), "scaler channel mismatch");
        sample
            .iter()
            .zip(self.gains.iter().zip(&self.offsets))
            .map(|(x, (g, o))| g * x + o)
            .collect()
    }

    pub fn invert_sample(&self, sample: &[f64]) -> Vec<f64> {
        assert_eq!(sample.len(), self.channels(), "scaler channel mismatch");
        sample
            .iter()
            .zip(self.gains.iter().zip(&self.offsets))
            .map(|(s, (g, o))| (s - o) / g)
            .collect()
    }

    /// The physical value each channel maps to normalized zero.
    pub fn midpoints(&self) -> Vec<f64> {
        self.gains
            .iter()
            .zip(&self.offsets)
            .map(|(g, o)| -o / g)
            .collect()
    }
}

/// Fit a per-channel min/max scaler: observed min maps to -1, max to +1.
pub fn fit_scaler(seq: &DMatrix<f64>) -> Result<AffineScaler> {
    if seq.nrows() == 0 {
        return Err(Error::Empty);
    }
    let mut gains = Vec::with_capacity(seq.ncols());
    let mut offsets = Vec::with_capacity(seq.ncols());
    for j in 0..seq.ncols() {
        let col = seq.column(j);
        let lo = col.min();
        let hi = col.max();
        if hi <= lo {
            return Err(Error::ConstantChannel(j));
        }
        let gain = 2.0 / (hi - lo);
        gains.push(gain);
        offsets.push(-gain * (hi + lo) / 2.0);
    }
    Ok(AffineScaler { gains, offsets })
}

/// Provenance sidecar written next to every dataset file.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub version: u32,
    pub sample_period_s: f64,
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mprs: Option<MprsConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<crate::plant::SimulationConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plant: Option<crate::plant::PlantParams>,
    /// Seed lineage, oldest first.
    pub lineage: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

pub const DATASET_MANIFEST_VERSION: u32 = 1;

/// Time-aligned input/output records with sampling period and provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub sample_period_s: f64,
    /// K x n_u inputs.
    pub u: DMatrix<f64>,
    /// K x n_y outputs.
    pub y: DMatrix<f64>,
    /// Measured disturbance trace, when the data came from the plant.
    pub disturbance: Option<DMatrix<f64>>,
    /// Noise-free output trace, kept for diagnostics.
    pub y_noisefree: Option<DMatrix<f64>>,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.u.nrows() == 0 {
            return Err(Error::Empty);
        }
        if self.u.nrows() != self.y.nrows() {
            return Err(Error::Dimension(format!(
                "input rows {} != output rows {}",
                self.u.nrows(),
                self.y.nrows()
            )));
        }
        for extra in [&self.disturbance, &self.y_noisefree].into_iter().flatten() {
            if extra.nrows() != self.u.nrows() {
                return Err(Error::Dimension("auxiliary trace length mismatch".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.u.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> usize {
        self.u.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.y.ncols()
    }

    fn slice_rows(&self, start: usize, len: usize, note: &str) -> Dataset {
        let take = |m: &DMatrix<f64>| m.rows(start, len).into_owned();
        let mut manifest = self.manifest.clone();
        manifest.samples = len;
        manifest.lineage.push(note.to_string());
        Dataset {
            sample_period_s: self.sample_period_s,
            u: take(&self.u),
            y: take(&self.y),
            disturbance: self.disturbance.as_ref().map(take),
            y_noisefree: self.y_noisefree.as_ref().map(take),
            manifest,
        }
    }

    /// Write the dataset as CSV at `path` and its manifest next to it
    /// (`<stem>.manifest.json`). Only single-input single-output data has a
    /// file representation.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.validate()?;
        if self.inputs() != 1 || self.outputs() != 1 {
            return Err(Error::Config(
                "CSV dataset format is single-input single-output".into(),
            ));
        }
        let (d, y_nf) = match (&self.disturbance, &self.y_noisefree) {
            (Some(d), Some(y_nf)) => (d, y_nf),
            _ => {
                return Err(Error::Config(
                    "CSV dataset format requires disturbance and noise-free traces".into(),
                ))
            }
        };
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let map_csv = |e: csv::Error| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        wtr.write_record(["time_s", "u_mL_per_s", "d_mL_per_s", "y_pH", "y_pH_noisefree"])
            .map_err(map_csv)?;
        for k in 0..self.len() {
            let t = k as f64 * self.sample_period_s;
            wtr.write_record([
                format_float(t),
                format_float(self.u[(k, 0)]),
                format_float(d[(k, 0)]),
                format_float(self.y[(k, 0)]),
                format_float(y_nf[(k, 0)]),
            ])
            .map_err(map_csv)?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        fsutil::write_atomic(path, &bytes)?;
        fsutil::write_json(&manifest_path(path), &self.manifest)
    }

    /// Load a dataset written by [`Dataset::write_csv`].
    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let map_csv = |e: csv::Error| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut rdr = csv::Reader::from_path(path).map_err(map_csv)?;
        let mut u = Vec::new();
        let mut d = Vec::new();
        let mut y = Vec::new();
        let mut y_nf = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(map_csv)?;
            if record.len() != 5 {
                return Err(Error::Csv {
                    path: path.to_path_buf(),
                    message: format!("expected 5 columns, got {}", record.len()),
                });
            }
            let parse = |i: usize| -> Result<f64> {
                record[i].parse::<f64>().map_err(|e| Error::Csv {
                    path: path.to_path_buf(),
                    message: format!("bad float {:?}: {e}", &record[i]),
                })
            };
            u.push(parse(1)?);
            d.push(parse(2)?);
            y.push(parse(3)?);
            y_nf.push(parse(4)?);
        }
        let manifest: DatasetManifest = fsutil::read_json(&manifest_path(path))?;
        let k = u.len();
        let dataset = Dataset {
            sample_period_s: manifest.sample_period_s,
            u: DMatrix::from_column_slice(k, 1, &u),
            y: DMatrix::from_column_slice(k, 1, &y),
            disturbance: Some(DMatrix::from_column_slice(k, 1, &d)),
            y_noisefree: Some(DMatrix::from_column_slice(k, 1, &y_nf)),
            manifest,
        };
        dataset.validate()?;
        Ok(dataset)
    }
}

/// Manifest path convention: `train.csv` -> `train.manifest.json`.
pub fn manifest_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("manifest.json")
}

fn format_float(v: f64) -> String {
    // Shortest representation that parses back to the same f64.
    format!("{v}")
}

/// Split a dataset into a contiguous prefix/suffix pair.
///
/// `fraction` is the prefix share. The cut lands on a hold boundary whenever
/// the manifest records the generating MPRS. Either part shorter than
/// `min_len` (washout plus the regression minimum of the consumer) is an
/// error.
pub fn split(dataset: &Dataset, fraction: f64, min_len: usize) -> Result<(Dataset, Dataset)> {
    dataset.validate()?;
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    let k = dataset.len();
    let mut cut = (k as f64 * fraction).floor() as usize;
    if let Some(mprs) = &dataset.manifest.mprs {
        let hold = mprs.samples_per_hold();
        if hold > 0 && k >= 2 * hold {
            let rounded = ((cut as f64 / hold as f64).round() as usize) * hold;
            cut = rounded.clamp(hold, k - hold);
        }
    }
    if cut < min_len || k - cut < min_len {
        return Err(Error::ShortDataset(format!(
            "split {cut}/{} leaves a part below the required minimum of {min_len} samples",
            k - cut
        )));
    }
    let train = dataset.slice_rows(0, cut, &format!("split:prefix[0..{cut})"));
    let validation = dataset.slice_rows(cut, k - cut, &format!("split:suffix[{cut}..{k})"));
    Ok((train, validation))
}
