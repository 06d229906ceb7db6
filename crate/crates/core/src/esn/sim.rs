//! Validation-time simulation of a trained model.

use super::{state_update, EsnModel};
use crate::error::{Error, Result};
use crate::esn::metrics::{fit_index, rmse};
use crate::signals::Dataset;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// How the output-feedback term is driven during validation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    /// The model feeds back its own predictions.
    #[default]
    FreeRun,
    /// The feedback term receives the measured outputs.
    TeacherForced,
}

/// Simulate the model over `inputs` (physical units) feeding its own
/// predictions back into the state equation; returns the predicted outputs in
/// physical units, one row per input row.
///
/// `x0` defaults to the zero state. The feedback for the very first step is
/// the normalized `y0` when given (the first measured output), otherwise the
/// model's own first prediction; with the default zero state that prediction
/// is the scaler midpoint. Contraction washes the choice out of every later
/// sample either way.
pub fn free_run(
    model: &EsnModel,
    inputs: &DMatrix<f64>,
    x0: Option<&DVector<f64>>,
    y0: Option<&DVector<f64>>,
) -> Result<DMatrix<f64>> {
    model.validate()?;
    let n = model.dynamics.order();
    if inputs.ncols() != model.dynamics.inputs() {
        return Err(Error::Dimension(format!(
            "input channels {} do not match the model's {}",
            inputs.ncols(),
            model.dynamics.inputs()
        )));
    }
    let k_total = inputs.nrows();
    let n_u = model.dynamics.inputs();
    let n_y = model.dynamics.outputs();
    let normalized_inputs = model.input_scaler.apply(inputs);
    let mut x = match x0 {
        Some(v) => {
            if v.len() != n {
                return Err(Error::Dimension("initial state length mismatch".into()));
            }
            v.clone()
        }
        None => DVector::zeros(n),
    };
    let y0_normalized = match y0 {
        Some(v) => {
            if v.len() != n_y {
                return Err(Error::Dimension("initial output length mismatch".into()));
            }
            Some(DVector::from_vec(
                model.output_scaler.apply_sample(v.as_slice()),
            ))
        }
        None => None,
    };

    let mut predictions = DMatrix::zeros(k_total, n_y);
    let mut previous_input = DVector::zeros(n_u);
    for k in 0..k_total {
        if k > 0 {
            previous_input.set_column(0, &normalized_inputs.row(k - 1).transpose());
        }
        let predicted = model.readout.apply(&x, &previous_input);
        predictions.row_mut(k).copy_from(&predicted.transpose());
        let feedback = match (&y0_normalized, k) {
            (Some(y0n), 0) => y0n.clone(),
            _ => predicted,
        };
        let u_k = normalized_inputs.row(k).transpose();
        x = state_update(&model.dynamics, &x, &u_k, &feedback);
    }
    Ok(model.output_scaler.invert(&predictions))
}

/// Simulate the model with the feedback term driven by the measured outputs.
/// Inputs and outputs are physical; predictions come back in physical units.
pub fn teacher_forced_run(
    model: &EsnModel,
    inputs: &DMatrix<f64>,
    measured_outputs: &DMatrix<f64>,
    x0: Option<&DVector<f64>>,
) -> Result<DMatrix<f64>> {
    model.validate()?;
    let n = model.dynamics.order();
    if inputs.ncols() != model.dynamics.inputs()
        || measured_outputs.ncols() != model.dynamics.outputs()
        || inputs.nrows() != measured_outputs.nrows()
    {
        return Err(Error::Dimension(
            "teacher-forced run needs matching input/output sequences".into(),
        ));
    }
    let k_total = inputs.nrows();
    let n_u = model.dynamics.inputs();
    let n_y = model.dynamics.outputs();
    let normalized_inputs = model.input_scaler.apply(inputs);
    let normalized_outputs = model.output_scaler.apply(measured_outputs);
    let mut x = match x0 {
        Some(v) => v.clone(),
        None => DVector::zeros(n),
    };
    let mut predictions = DMatrix::zeros(k_total, n_y);
    let mut previous_input = DVector::zeros(n_u);
    for k in 0..k_total {
        if k > 0 {
            previous_input.set_column(0, &normalized_inputs.row(k - 1).transpose());
        }
        let predicted = model.readout.apply(&x, &previous_input);
        predictions.row_mut(k).copy_from(&predicted.transpose());
        let u_k = normalized_inputs.row(k).transpose();
        let y_k = normalized_outputs.row(k).transpose();
        x = state_update(&model.dynamics, &x, &u_k, &y_k);
    }
    Ok(model.output_scaler.invert(&predictions))
}

/// Validation metrics, computed on physical-unit signals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub fit: f64,
    pub rmse: f64,
}

/// Simulate the model over `data` in the requested mode and score it against
/// the measured outputs, discarding the model's washout from the metric
/// window so the arbitrary validation initial state does not bias the score.
pub fn validate_model(model: &EsnModel, data: &Dataset, mode: SimMode) -> Result<ModelMetrics> {
    data.validate()?;
    let predictions = match mode {
        SimMode::FreeRun => free_run(model, &data.u, None, None)?,
        SimMode::TeacherForced => teacher_forced_run(model, &data.u, &data.y, None)?,
    };
    let washout = model.washout;
    if data.len() <= washout + 1 {
        return Err(Error::ShortDataset(format!(
            "{} validation samples do not outlast the washout of {washout}",
            data.len()
        )));
    }
    let rows = data.len() - washout;
    let reference = data.y.rows(washout, rows).into_owned();
    let predicted = predictions.rows(washout, rows).into_owned();
    Ok(ModelMetrics {
        fit: fit_index(&reference, &predicted)?,
        rmse: rmse(&reference, &predicted)?,
    })
}
