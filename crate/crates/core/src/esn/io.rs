//! Versioned JSON serialization of trained models.
//!
//! One self-describing file per model: dimensions, the five weight matrices
//! in row-major nested arrays, scaler parameters, sampling provenance, and
//! washout. JSON floats use the shortest round-trip representation, so a
//! load reproduces the model's predictions exactly.

use super::{Activation, EsnDynamics, EsnModel, ModelProvenance, Readout};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::signals::AffineScaler;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub order: usize,
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub internal_weights: Vec<Vec<f64>>,
    pub input_weights: Vec<Vec<f64>>,
    pub feedback_weights: Vec<Vec<f64>>,
    pub readout_state_weights: Vec<Vec<f64>>,
    pub readout_input_weights: Vec<Vec<f64>>,
    pub input_scaler: AffineScaler,
    pub output_scaler: AffineScaler,
    pub washout: usize,
    pub provenance: ModelProvenance,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    let mut flat = Vec::with_capacity(rows.len() * ncols);
    for row in rows {
        if row.len() != ncols {
            return Err(Error::Dimension(format!(
                "{what}: ragged row of length {} (expected {ncols})",
                row.len()
            )));
        }
        flat.extend_from_slice(row);
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

impl ModelFile {
    pub fn from_model(model: &EsnModel) -> Self {
        Self {
            version: MODEL_FILE_VERSION,
            order: model.dynamics.order(),
            inputs: model.dynamics.inputs(),
            outputs: model.dynamics.outputs(),
            activation: model.dynamics.activation(),
            internal_weights: to_rows(model.dynamics.internal_weights()),
            input_weights: to_rows(model.dynamics.input_weights()),
            feedback_weights: to_rows(model.dynamics.feedback_weights()),
            readout_state_weights: to_rows(&model.readout.state_weights),
            readout_input_weights: to_rows(&model.readout.input_weights),
            input_scaler: model.input_scaler.clone(),
            output_scaler: model.output_scaler.clone(),
            washout: model.washout,
            provenance: model.provenance.clone(),
        }
    }

    pub fn into_model(self) -> Result<EsnModel> {
        if self.version != MODEL_FILE_VERSION {
            return Err(Error::Config(format!(
                "unsupported model file version {}",
                self.version
            )));
        }
        let dynamics = EsnDynamics::new(
            from_rows(&self.internal_weights, self.order, "internal weights")?,
            from_rows(&self.input_weights, self.inputs, "input weights")?,
            from_rows(&self.feedback_weights, self.outputs, "feedback weights")?,
            self.activation,
        )?;
        let readout = Readout {
            state_weights: from_rows(&self.readout_state_weights, self.order, "readout state")?,
            input_weights: from_rows(&self.readout_input_weights, self.inputs, "readout input")?,
        };
        let model = EsnModel {
            dynamics,
            readout,
            input_scaler: self.input_scaler,
            output_scaler: self.output_scaler,
            washout: self.washout,
            provenance: self.provenance,
        };
        model.validate()?;
        Ok(model)
    }
}

pub fn save_model(model: &EsnModel, path: &Path) -> Result<()> {
    fsutil::write_json(path, &ModelFile::from_model(model))
}

pub fn load_model(path: &Path) -> Result<EsnModel> {
    let file: ModelFile = fsutil::read_json(path)?;
    file.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::esn::{free_run, train_esn, ReservoirConfig};
    use crate::seeds::SeedStream;
    use crate::signals::{Dataset, DatasetManifest};
    use nalgebra::DMatrix;

    fn training_data() -> Dataset {
        // a simple stable filter driven by a step-ish input
        let k = 300;
        let u: Vec<f64> = (0..k)
            .map(|i| if (i / 25) % 2 == 0 { 0.8 } else { -0.4 })
            .collect();
        let mut y = vec![0.0f64; k];
        for i in 1..k {
            y[i] = 0.85 * y[i - 1] + 0.3 * u[i - 1] + 0.05 * (0.2 * i as f64).sin();
        }
        Dataset {
            sample_period_s: 1.0,
            u: DMatrix::from_column_slice(k, 1, &u),
            y: DMatrix::from_column_slice(k, 1, &y),
            disturbance: None,
            y_noisefree: None,
            manifest: DatasetManifest::default(),
        }
    }

    #[test]
    fn model_round_trip_reproduces_predictions_exactly() {
        let data = training_data();
        let cfg = ReservoirConfig {
            washout: 20,
            ..ReservoirConfig::siso(12)
        };
        let mut stream = SeedStream::new(31, 4);
        let trained = train_esn(&cfg, &mut stream, &data, 0.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&trained.model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        let before = free_run(&trained.model, &data.u, None, None).unwrap();
        let after = free_run(&loaded, &data.u, None, None).unwrap();
        let max_diff = (&before - &after).abs().max();
        assert!(max_diff <= 1e-12, "round-trip prediction drift {max_diff}");
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let data = training_data();
        let cfg = ReservoirConfig {
            washout: 10,
            ..ReservoirConfig::siso(5)
        };
        let mut stream = SeedStream::new(1, 0);
        let trained = train_esn(&cfg, &mut stream, &data, 0.0).unwrap();
        let mut file = ModelFile::from_model(&trained.model);
        file.version = 99;
        assert!(file.into_model().is_err());
    }
}
