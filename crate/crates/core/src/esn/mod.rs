//! Echo state network model, randomized construction, and readout training.
//!
//! The model is
//!
//! ```text
//! x(k+1) = zeta(W_x x(k) + W_u u(k) + W_y y(k))
//! phi(k+1) = u(k)
//! y(k) = W_out1 x(k) + W_out2 phi(k)
//! ```
//!
//! with `W_x, W_u, W_y` sampled at random and only the readout fitted by
//! least squares. Keeping the induced 2-norm of `W_x` strictly below one
//! makes the state contraction explicit: trajectories from different initial
//! states converge under identical inputs, which is what justifies the
//! washout-then-regress training scheme.

mod io;
mod metrics;
mod sim;
mod train;

pub use io::{load_model, save_model, ModelFile, MODEL_FILE_VERSION};
pub use metrics::{fit_index, rmse};
pub use sim::{free_run, teacher_forced_run, validate_model, ModelMetrics, SimMode};
pub use train::{train_esn, TrainedEsn};

use crate::error::{Error, Result};
use crate::seeds::SeedStream;
use crate::signals::{AffineScaler, Dataset};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Elementwise sigmoid used in the state equation. Must be 1-Lipschitz and
/// map the reals into (-1, 1).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
        }
    }
}

/// The randomly sampled recurrent part of an ESN; immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct EsnDynamics {
    /// n x n, induced 2-norm strictly below one.
    internal_weights: DMatrix<f64>,
    /// n x n_u.
    input_weights: DMatrix<f64>,
    /// n x n_y.
    feedback_weights: DMatrix<f64>,
    activation: Activation,
}

impl EsnDynamics {
    pub fn new(
        internal_weights: DMatrix<f64>,
        input_weights: DMatrix<f64>,
        feedback_weights: DMatrix<f64>,
        activation: Activation,
    ) -> Result<Self> {
        let n = internal_weights.nrows();
        if internal_weights.ncols() != n {
            return Err(Error::Dimension("internal weight matrix must be square".into()));
        }
        if input_weights.nrows() != n || feedback_weights.nrows() != n {
            return Err(Error::Dimension(
                "input/feedback weight rows must match the model order".into(),
            ));
        }
        for m in [&internal_weights, &input_weights, &feedback_weights] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("weight matrices must be finite".into()));
            }
        }
        let norm = spectral_norm(&internal_weights);
        if !(norm < 1.0) {
            return Err(Error::Config(format!(
                "internal weight norm {norm} is not below one; the state map would not contract"
            )));
        }
        Ok(Self {
            internal_weights,
            input_weights,
            feedback_weights,
            activation,
        })
    }

    pub fn order(&self) -> usize {
        self.internal_weights.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.input_weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.feedback_weights.ncols()
    }

    pub fn internal_weights(&self) -> &DMatrix<f64> {
        &self.internal_weights
    }

    pub fn input_weights(&self) -> &DMatrix<f64> {
        &self.input_weights
    }

    pub fn feedback_weights(&self) -> &DMatrix<f64> {
        &self.feedback_weights
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

/// Induced 2-norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// One step of the state equation: `zeta(W_x x + W_u u + W_y y)`.
///
/// Dimension mismatches are contract violations and panic.
pub fn state_update(
    dynamics: &EsnDynamics,
    x: &DVector<f64>,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> DVector<f64> {
    assert_eq!(x.len(), dynamics.order(), "state dimension mismatch");
    assert_eq!(u.len(), dynamics.inputs(), "input dimension mismatch");
    assert_eq!(y.len(), dynamics.outputs(), "output dimension mismatch");
    let mut pre = &dynamics.internal_weights * x;
    pre += &dynamics.input_weights * u;
    pre += &dynamics.feedback_weights * y;
    pre.apply(|v| *v = dynamics.activation.apply(*v));
    pre
}

/// Sampling recipe for [`generate_reservoir`].
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ReservoirConfig {
    pub order: usize,
    pub inputs: usize,
    pub outputs: usize,
    /// Fraction of internal entries that are nonzero.
    pub density: f64,
    /// Induced 2-norm the internal matrix is rescaled to; must stay below one.
    pub target_norm: f64,
    /// Input weights are uniform on [-input_range, input_range].
    pub input_range: f64,
    /// Feedback weights are uniform on [-feedback_range, feedback_range].
    pub feedback_range: f64,
    /// Samples discarded before the regression (`K_0`).
    pub washout: usize,
}

impl ReservoirConfig {
    /// Single-input single-output reservoir with the default sampling
    /// heuristics: 10% density, norm 0.95, unit weight ranges, washout 100.
    pub fn siso(order: usize) -> Self {
        Self {
            order,
            inputs: 1,
            outputs: 1,
            density: 0.1,
            target_norm: 0.95,
            input_range: 1.0,
            feedback_range: 1.0,
            washout: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 || self.inputs == 0 || self.outputs == 0 {
            return Err(Error::Config("reservoir dimensions must be positive".into()));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::Config(format!(
                "density must be in (0, 1], got {}",
                self.density
            )));
        }
        if !(self.target_norm > 0.0 && self.target_norm < 1.0) {
            return Err(Error::Config(format!(
                "target norm must be in (0, 1), got {}",
                self.target_norm
            )));
        }
        if !(self.input_range > 0.0) || !(self.feedback_range > 0.0) {
            return Err(Error::Config("weight ranges must be positive".into()));
        }
        if self.washout == 0 {
            return Err(Error::Config(
                "washout must be at least 1 so each regressor row has a previous input".into(),
            ));
        }
        Ok(())
    }
}

/// Sample a reservoir from `cfg` using the given stream.
///
/// The internal matrix draws each entry from U[-1, 1] with probability
/// `density` (zero otherwise, row-major draw order) and is then rescaled so
/// its induced 2-norm equals `target_norm` exactly. Input and feedback
/// matrices are dense uniform draws. A draw that leaves the internal matrix
/// identically zero is retried once; a second zero draw is an error.
pub fn generate_reservoir(cfg: &ReservoirConfig, stream: &mut SeedStream) -> Result<EsnDynamics> {
    cfg.validate()?;
    let n = cfg.order;
    let mut internal = None;
    for _attempt in 0..2 {
        let mut data = Vec::with_capacity(n * n);
        let mut any_nonzero = false;
        for _ in 0..n * n {
            let gate: f64 = stream.random();
            let v = if gate < cfg.density {
                stream.random_range(-1.0..=1.0)
            } else {
                0.0
            };
            any_nonzero |= v != 0.0;
            data.push(v);
        }
        if any_nonzero {
            internal = Some(DMatrix::from_row_slice(n, n, &data));
            break;
        }
    }
    let mut internal = internal.ok_or(Error::DegenerateReservoir)?;
    let norm = spectral_norm(&internal);
    internal *= cfg.target_norm / norm;

    let mut dense = |rows: usize, cols: usize, range: f64| {
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| stream.random_range(-range..=range))
            .collect();
        DMatrix::from_row_slice(rows, cols, &data)
    };
    let input = dense(n, cfg.inputs, cfg.input_range);
    let feedback = dense(n, cfg.outputs, cfg.feedback_range);
    EsnDynamics::new(internal, input, feedback, Activation::Tanh)
}

/// Regressors and targets assembled from a teacher-forced run.
#[derive(Clone, Debug, PartialEq)]
pub struct StateRecord {
    /// K̄ x (n + n_u); row k is `(x(k), u(k-1))`.
    pub regressors: DMatrix<f64>,
    /// K̄ x n_y; row k is `y(k)`.
    pub targets: DMatrix<f64>,
    /// How many leading regressor columns are state components (`n`).
    pub state_count: usize,
}

impl StateRecord {
    pub fn new(
        regressors: DMatrix<f64>,
        targets: DMatrix<f64>,
        state_count: usize,
    ) -> Result<Self> {
        if regressors.nrows() != targets.nrows() {
            return Err(Error::Dimension(format!(
                "regressor rows {} != target rows {}",
                regressors.nrows(),
                targets.nrows()
            )));
        }
        if state_count > regressors.ncols() {
            return Err(Error::Dimension(
                "state column count exceeds regressor width".into(),
            ));
        }
        if regressors.nrows() <= regressors.ncols() {
            return Err(Error::ShortDataset(format!(
                "{} regression rows for {} unknowns; the fit must be overdetermined",
                regressors.nrows(),
                regressors.ncols()
            )));
        }
        Ok(Self {
            regressors,
            targets,
            state_count,
        })
    }

    pub fn rows(&self) -> usize {
        self.regressors.nrows()
    }
}

/// Run the state equation teacher-forced by the measured sequences in `data`
/// (already normalized by the caller), discard the first `washout` samples,
/// and pair each state with the previous input.
pub fn collect_states(
    dynamics: &EsnDynamics,
    data: &Dataset,
    x0: &DVector<f64>,
    washout: usize,
) -> Result<StateRecord> {
    data.validate()?;
    if data.inputs() != dynamics.inputs() || data.outputs() != dynamics.outputs() {
        return Err(Error::Dimension(format!(
            "dataset channels ({}, {}) do not match the model ({}, {})",
            data.inputs(),
            data.outputs(),
            dynamics.inputs(),
            dynamics.outputs()
        )));
    }
    if x0.len() != dynamics.order() {
        return Err(Error::Dimension("initial state length mismatch".into()));
    }
    if washout == 0 {
        return Err(Error::Config(
            "washout must be at least 1 so each regressor row has a previous input".into(),
        ));
    }
    let k_total = data.len();
    if k_total <= washout {
        return Err(Error::ShortDataset(format!(
            "{k_total} samples do not outlast the washout of {washout}"
        )));
    }
    let n = dynamics.order();
    let n_u = dynamics.inputs();
    let n_y = dynamics.outputs();
    let rows = k_total - washout;
    let mut phi = DMatrix::zeros(rows, n + n_u);
    let mut targets = DMatrix::zeros(rows, n_y);
    let mut x = x0.clone();
    for k in 0..k_total {
        if k >= washout {
            let r = k - washout;
            for i in 0..n {
                phi[(r, i)] = x[i];
            }
            for j in 0..n_u {
                phi[(r, n + j)] = data.u[(k - 1, j)];
            }
            for j in 0..n_y {
                targets[(r, j)] = data.y[(k, j)];
            }
        }
        if k + 1 < k_total {
            let u_k = data.u.row(k).transpose();
            let y_k = data.y.row(k).transpose();
            x = state_update(dynamics, &x, &u_k, &y_k);
        }
    }
    StateRecord::new(phi, targets, n)
}

/// The fitted linear output map.
#[derive(Clone, Debug, PartialEq)]
pub struct Readout {
    /// n_y x n.
    pub state_weights: DMatrix<f64>,
    /// n_y x n_u.
    pub input_weights: DMatrix<f64>,
}

impl Readout {
    /// Column-stacked form matching the regressor layout: (n + n_u) x n_y.
    pub fn stacked(&self) -> DMatrix<f64> {
        let n = self.state_weights.ncols();
        let n_u = self.input_weights.ncols();
        let n_y = self.state_weights.nrows();
        let mut w = DMatrix::zeros(n + n_u, n_y);
        w.rows_mut(0, n).copy_from(&self.state_weights.transpose());
        w.rows_mut(n, n_u).copy_from(&self.input_weights.transpose());
        w
    }

    pub fn apply(&self, x: &DVector<f64>, previous_input: &DVector<f64>) -> DVector<f64> {
        &self.state_weights * x + &self.input_weights * previous_input
    }
}

/// Sampling provenance carried by every trained model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelProvenance {
    pub target_norm: f64,
    pub density: f64,
    pub base_seed: u64,
    pub stream_id: u64,
}

/// A complete trained model: dynamics, readout, and the scalers the training
/// data were normalized with.
#[derive(Clone, Debug, PartialEq)]
pub struct EsnModel {
    pub dynamics: EsnDynamics,
    pub readout: Readout,
    pub input_scaler: AffineScaler,
    pub output_scaler: AffineScaler,
    /// Washout used at fit time; validation discards the same prefix.
    pub washout: usize,
    pub provenance: ModelProvenance,
}

impl EsnModel {
    pub fn validate(&self) -> Result<()> {
        let n = self.dynamics.order();
        let n_u = self.dynamics.inputs();
        let n_y = self.dynamics.outputs();
        if self.readout.state_weights.shape() != (n_y, n) {
            return Err(Error::Dimension(format!(
                "readout state block {:?}, expected ({n_y}, {n})",
                self.readout.state_weights.shape()
            )));
        }
        if self.readout.input_weights.shape() != (n_y, n_u) {
            return Err(Error::Dimension(format!(
                "readout input block {:?}, expected ({n_y}, {n_u})",
                self.readout.input_weights.shape()
            )));
        }
        if self.input_scaler.channels() != n_u || self.output_scaler.channels() != n_y {
            return Err(Error::Dimension("scaler channel mismatch".into()));
        }
        self.input_scaler.validate()?;
        self.output_scaler.validate()?;
        if self
            .readout
            .state_weights
            .iter()
            .chain(self.readout.input_weights.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Config("readout weights must be finite".into()));
        }
        Ok(())
    }
}

/// Outcome of a readout fit.
#[derive(Clone, Debug)]
pub struct ReadoutFit {
    pub readout: Readout,
    /// Set when the regressors were rank deficient and the minimum-norm
    /// solution was returned; usually a sign of an overly large reservoir.
    pub rank_deficient: bool,
    pub rank: usize,
}

/// Least-squares readout fit, solved through the singular value
/// decomposition of the regressors (never the normal equations). A
/// rank-deficient system yields the minimum-norm solution and a warning flag.
pub fn fit_readout(record: &StateRecord) -> Result<ReadoutFit> {
    fit_readout_ridge(record, 0.0)
}

/// Readout fit with optional Tikhonov damping; `ridge = 0` is the plain
/// least-squares problem.
pub fn fit_readout_ridge(record: &StateRecord, ridge: f64) -> Result<ReadoutFit> {
    if !(ridge >= 0.0) {
        return Err(Error::Config(format!("ridge must be nonnegative, got {ridge}")));
    }
    let phi = &record.regressors;
    let cols = phi.ncols();
    let svd = phi.clone().svd(true, true);
    let u = svd.u.as_ref().ok_or_else(|| Error::Solve("SVD did not return U".into()))?;
    let v_t = svd
        .v_t
        .as_ref()
        .ok_or_else(|| Error::Solve("SVD did not return V^T".into()))?;
    let sigma_max = svd.singular_values.max();
    let tol = f64::EPSILON * phi.nrows().max(cols) as f64 * sigma_max;
    let rank = svd.singular_values.iter().filter(|s| **s > tol).count();

    // W = V diag(s_i / (s_i^2 + ridge)) U^T Y, dropping directions below tol;
    // with ridge = 0 this is the pseudoinverse (minimum-norm least squares).
    let mut projected = u.transpose() * &record.targets;
    for (i, s) in svd.singular_values.iter().enumerate() {
        let factor = if *s > tol { s / (s * s + ridge) } else { 0.0 };
        for j in 0..projected.ncols() {
            projected[(i, j)] *= factor;
        }
    }
    let stacked = v_t.transpose() * projected;
    if stacked.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solve("readout weights are not finite".into()));
    }
    let n = record.state_count;
    let n_u = cols - n;
    let readout = Readout {
        state_weights: stacked.rows(0, n).transpose(),
        input_weights: stacked.rows(n, n_u).transpose(),
    };
    Ok(ReadoutFit {
        readout,
        rank_deficient: rank < cols,
        rank,
    })
}

/// Largest entry of `Phi^T (Y - Phi W)`: zero at the least-squares optimum,
/// up to floating-point noise. Used to check fit optimality.
pub fn normal_equations_residual(record: &StateRecord, readout: &Readout) -> f64 {
    let residual = &record.targets - &record.regressors * readout.stacked();
    (record.regressors.transpose() * residual).abs().max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::DatasetManifest;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn stream(seed: u64) -> SeedStream {
        SeedStream::new(seed, 0)
    }

    /// Power-iteration estimate of the largest singular value, independent of
    /// the SVD the implementation uses.
    fn power_iteration_norm(m: &DMatrix<f64>) -> f64 {
        let gram = m.transpose() * m;
        let n = gram.nrows();
        let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
        let mut lambda = 0.0;
        for _ in 0..2000 {
            let w = &gram * &v;
            let norm = w.norm();
            if norm == 0.0 {
                return 0.0;
            }
            v = w / norm;
            lambda = norm;
        }
        lambda.sqrt()
    }

    fn normalized_dataset(u: Vec<f64>, y: Vec<f64>) -> Dataset {
        let k = u.len();
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
    fn state_update_scalar_matches_tanh() {
        let dynamics = EsnDynamics::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 0.0),
            Activation::Tanh,
        )
        .unwrap();
        let next = state_update(
            &dynamics,
            &DVector::from_element(1, 0.0),
            &DVector::from_element(1, 1.0),
            &DVector::from_element(1, 0.0),
        );
        assert_relative_eq!(next[0], 0.7615941559557649, epsilon = 1e-15);
    }

    #[test]
    fn state_update_zero_weights_is_zero() {
        let dynamics = EsnDynamics::new(
            DMatrix::zeros(3, 3),
            DMatrix::zeros(3, 2),
            DMatrix::zeros(3, 1),
            Activation::Tanh,
        )
        .unwrap();
        let next = state_update(
            &dynamics,
            &DVector::from_vec(vec![5.0, -2.0, 0.3]),
            &DVector::from_vec(vec![100.0, -7.0]),
            &DVector::from_element(1, 3.0),
        );
        assert!(next.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn state_update_stays_strictly_inside_unit_box() {
        let mut s = stream(3);
        let cfg = ReservoirConfig::siso(8);
        let dynamics = generate_reservoir(&cfg, &mut s).unwrap();
        let next = state_update(
            &dynamics,
            &DVector::from_element(8, 1e9),
            &DVector::from_element(1, -1e12),
            &DVector::from_element(1, 1e12),
        );
        assert!(next.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn scalar_reservoir_rescale_is_forced() {
        let cfg = ReservoirConfig {
            density: 1.0,
            ..ReservoirConfig::siso(1)
        };
        for seed in 0..5 {
            let dynamics = generate_reservoir(&cfg, &mut stream(seed)).unwrap();
            assert_relative_eq!(
                dynamics.internal_weights()[(0, 0)].abs(),
                0.95,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn reservoir_norm_hits_target_against_power_iteration_oracle() {
        let cfg = ReservoirConfig::siso(50);
        let dynamics = generate_reservoir(&cfg, &mut stream(7)).unwrap();
        let norm = power_iteration_norm(dynamics.internal_weights());
        assert!((norm - 0.95).abs() < 1e-10, "norm = {norm}");
    }

    #[test]
    fn reservoir_density_is_respected() {
        let cfg = ReservoirConfig::siso(50);
        let dynamics = generate_reservoir(&cfg, &mut stream(7)).unwrap();
        let nonzero = dynamics
            .internal_weights()
            .iter()
            .filter(|v| **v != 0.0)
            .count();
        let frac = nonzero as f64 / 2500.0;
        assert!((0.05..0.18).contains(&frac), "density fraction {frac}");
    }

    #[test]
    fn reservoir_generation_is_deterministic() {
        let cfg = ReservoirConfig::siso(20);
        let a = generate_reservoir(&cfg, &mut stream(99)).unwrap();
        let b = generate_reservoir(&cfg, &mut stream(99)).unwrap();
        assert_eq!(a.internal_weights(), b.internal_weights());
        assert_eq!(a.input_weights(), b.input_weights());
        assert_eq!(a.feedback_weights(), b.feedback_weights());
    }

    #[test]
    fn collect_states_boundary_washout_gives_minimum_rows() {
        let cfg = ReservoirConfig::siso(4);
        let dynamics = generate_reservoir(&cfg, &mut stream(1)).unwrap();
        let k = 40;
        let washout = k - (4 + 1) - 1;
        let data = normalized_dataset(
            (0..k).map(|i| (i as f64 * 0.37).sin()).collect(),
            (0..k).map(|i| (i as f64 * 0.11).cos()).collect(),
        );
        let record = collect_states(&dynamics, &data, &DVector::zeros(4), washout).unwrap();
        assert_eq!(record.rows(), 4 + 1 + 1);
    }

    #[test]
    fn collect_states_zero_everything_keeps_states_at_origin() {
        let cfg = ReservoirConfig::siso(5);
        let dynamics = generate_reservoir(&cfg, &mut stream(2)).unwrap();
        let data = normalized_dataset(vec![0.0; 50], vec![0.0; 50]);
        let record = collect_states(&dynamics, &data, &DVector::zeros(5), 10).unwrap();
        for r in 0..record.rows() {
            for i in 0..5 {
                assert_eq!(record.regressors[(r, i)], 0.0);
            }
        }
    }

    #[test]
    fn collect_states_rejects_short_data() {
        let cfg = ReservoirConfig::siso(4);
        let dynamics = generate_reservoir(&cfg, &mut stream(1)).unwrap();
        let data = normalized_dataset(vec![0.1; 10], vec![0.2; 10]);
        assert!(matches!(
            collect_states(&dynamics, &data, &DVector::zeros(4), 10),
            Err(Error::ShortDataset(_))
        ));
    }

    #[test]
    fn collect_states_initial_condition_contracts_away() {
        let cfg = ReservoirConfig::siso(6);
        let dynamics = generate_reservoir(&cfg, &mut stream(5)).unwrap();
        let data = normalized_dataset(
            (0..80).map(|i| (i as f64 * 0.21).sin()).collect(),
            (0..80).map(|i| (i as f64 * 0.13).cos()).collect(),
        );
        let washout = 20;
        let x0a = DVector::from_fn(6, |i, _| 0.3 + 0.1 * i as f64);
        let x0b = DVector::from_fn(6, |i, _| -0.2 - 0.05 * i as f64);
        let rec_a = collect_states(&dynamics, &data, &x0a, washout).unwrap();
        let rec_b = collect_states(&dynamics, &data, &x0b, washout).unwrap();
        let rho: f64 = 0.95;
        let d0 = (&x0a - &x0b).norm();
        for r in 0..rec_a.rows() {
            let k = washout + r;
            let mut diff = 0.0;
            for i in 0..6 {
                let d = rec_a.regressors[(r, i)] - rec_b.regressors[(r, i)];
                diff += d * d;
            }
            let bound = rho.powi(k as i32) * d0;
            assert!(
                diff.sqrt() <= bound * (1.0 + 1e-12) + 1e-300,
                "contraction violated at k={k}: {} > {bound}",
                diff.sqrt()
            );
        }
    }

    #[test]
    fn fit_recovers_exact_linear_map() {
        let mut rng = stream(11);
        let phi = DMatrix::from_fn(50, 5, |_, _| rng.random_range(-1.0..=1.0));
        let w_true = DMatrix::from_fn(5, 2, |i, j| 0.3 * (i as f64 + 1.0) - 0.2 * j as f64);
        let targets = &phi * &w_true;
        let record = StateRecord::new(phi, targets, 3).unwrap();
        let fit = fit_readout(&record).unwrap();
        assert!(!fit.rank_deficient);
        let stacked = fit.readout.stacked();
        for i in 0..5 {
            for j in 0..2 {
                assert_relative_eq!(stacked[(i, j)], w_true[(i, j)], epsilon = 1e-10);
            }
        }
        assert!(normal_equations_residual(&record, &fit.readout) < 1e-10);
    }

    #[test]
    fn fit_matches_hand_solved_normal_equations() {
        let phi = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let targets = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let record = StateRecord::new(phi, targets, 1).unwrap();
        let fit = fit_readout(&record).unwrap();
        assert_relative_eq!(fit.readout.state_weights[(0, 0)], 1.0, epsilon = 1e-10);
        assert_relative_eq!(fit.readout.input_weights[(0, 0)], 2.0, epsilon = 1e-10);
        let residual = &record.targets - &record.regressors * fit.readout.stacked();
        assert!(residual.norm() < 1e-10);
    }

    #[test]
    fn fit_scalar_average_leaves_residual() {
        let phi = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let targets = DMatrix::from_column_slice(2, 1, &[0.0, 2.0]);
        let record = StateRecord::new(phi, targets, 1).unwrap();
        let fit = fit_readout(&record).unwrap();
        assert_relative_eq!(fit.readout.state_weights[(0, 0)], 1.0, epsilon = 1e-12);
        let residual = &record.targets - &record.regressors * fit.readout.stacked();
        assert_relative_eq!(residual.norm(), 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn rank_deficient_fit_returns_flagged_minimum_norm_solution() {
        let phi = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let targets = DMatrix::from_column_slice(3, 1, &[2.0, 2.0, 2.0]);
        let record = StateRecord::new(phi, targets, 1).unwrap();
        let fit = fit_readout(&record).unwrap();
        assert!(fit.rank_deficient);
        assert_eq!(fit.rank, 1);
        // any w1 + w2 = 2 fits; the minimum-norm solution is (1, 1)
        assert_relative_eq!(fit.readout.state_weights[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(fit.readout.input_weights[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ridge_damps_the_solution() {
        let phi = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 1.0]);
        let targets = DMatrix::from_column_slice(3, 1, &[3.0, 3.0, 3.0]);
        let record = StateRecord::new(phi, targets, 1).unwrap();
        let plain = fit_readout(&record).unwrap();
        assert_relative_eq!(plain.readout.state_weights[(0, 0)], 3.0, epsilon = 1e-12);
        let damped = fit_readout_ridge(&record, 3.0).unwrap();
        // sigma^2 = 3, factor sigma/(sigma^2 + 3) halves the solution
        assert_relative_eq!(damped.readout.state_weights[(0, 0)], 1.5, epsilon = 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn contraction_holds_for_random_reservoirs(seed in 0u64..5000) {
            let order = 3 + (seed % 7) as usize;
            let cfg = ReservoirConfig { washout: 1, ..ReservoirConfig::siso(order) };
            let mut s = stream(seed);
            let dynamics = generate_reservoir(&cfg, &mut s).unwrap();
            let mut xa = DVector::from_fn(order, |i, _| ((seed + i as u64) % 13) as f64 / 13.0 - 0.5);
            let mut xb = DVector::zeros(order);
            let d0 = (&xa - &xb).norm();
            prop_assume!(d0 > 0.0);
            let rho: f64 = 0.95;
            for k in 1..=60usize {
                let u = DVector::from_element(1, ((k as f64) * 0.7).sin());
                let y = DVector::from_element(1, ((k as f64) * 0.3).cos());
                xa = state_update(&dynamics, &xa, &u, &y);
                xb = state_update(&dynamics, &xb, &u, &y);
                let bound = rho.powi(k as i32) * d0 * (1.0 + 1e-12);
                prop_assert!((&xa - &xb).norm() <= bound);
            }
        }
    }
}
