//! The end-to-end training pipeline for one random instance.

use super::{
    collect_states, fit_readout_ridge, generate_reservoir, EsnModel, ModelProvenance,
    ReservoirConfig,
};
use crate::error::{Error, Result};
use crate::seeds::SeedStream;
use crate::signals::{fit_scaler, Dataset};
use nalgebra::DVector;

/// A trained instance plus its fit diagnostics.
#[derive(Clone, Debug)]
pub struct TrainedEsn {
    pub model: EsnModel,
    pub rank_deficient: bool,
}

/// Train one ESN on `train` (physical units): fit min/max scalers on the
/// training data, sample the reservoir from `stream`, run the teacher-forced
/// state collection from the zero state, and solve the readout least squares.
/// `ridge = 0` gives the plain unregularized fit.
pub fn train_esn(
    cfg: &ReservoirConfig,
    stream: &mut SeedStream,
    train: &Dataset,
    ridge: f64,
) -> Result<TrainedEsn> {
    cfg.validate()?;
    train.validate()?;
    if train.inputs() != cfg.inputs || train.outputs() != cfg.outputs {
        return Err(Error::Dimension(format!(
            "dataset channels ({}, {}) do not match the reservoir config ({}, {})",
            train.inputs(),
            train.outputs(),
            cfg.inputs,
            cfg.outputs
        )));
    }
    let input_scaler = fit_scaler(&train.u)?;
    let output_scaler = fit_scaler(&train.y)?;
    let mut manifest = train.manifest.clone();
    manifest.lineage.push("normalized".into());
    let normalized = Dataset {
        sample_period_s: train.sample_period_s,
        u: input_scaler.apply(&train.u),
        y: output_scaler.apply(&train.y),
        disturbance: None,
        y_noisefree: None,
        manifest,
    };
    let dynamics = generate_reservoir(cfg, stream)?;
    let x0 = DVector::zeros(cfg.order);
    let record = collect_states(&dynamics, &normalized, &x0, cfg.washout)?;
    let fit = fit_readout_ridge(&record, ridge)?;
    let model = EsnModel {
        dynamics,
        readout: fit.readout,
        input_scaler,
        output_scaler,
        washout: cfg.washout,
        provenance: ModelProvenance {
            target_norm: cfg.target_norm,
            density: cfg.density,
            base_seed: stream.base_seed(),
            stream_id: stream.stream_id(),
        },
    };
    Ok(TrainedEsn {
        model,
        rank_deficient: fit.rank_deficient,
    })
}
