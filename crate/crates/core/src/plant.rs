//! Simulated pH neutralization benchmark plant.
//!
//! Three-state model of a stirred reactor fed by an acid stream `q1`, a
//! buffer disturbance `d = q2`, and a manipulated alkaline stream `u = q3`.
//! States are the acid and buffer ion invariants of the outlet and the tank
//! level; the measured output is the outlet pH, defined implicitly by a
//! charge balance.

use crate::error::{Error, Result};
use crate::seeds::{SeedStream, NOISE_STREAM};
use crate::signals::{Dataset, DatasetManifest, DATASET_MANIFEST_VERSION};
use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Physical constants and nominal operating conditions.
///
/// Concentrations are mol/L, flows mL/s, lengths cm, areas cm².
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PlantParams {
    pub z_cm: f64,
    pub c_v4: f64,
    pub valve_exponent: f64,
    pub pk1: f64,
    pub pk2: f64,
    pub area_cm2: f64,
    pub w_a1: f64,
    pub w_b1: f64,
    pub w_a2: f64,
    pub w_b2: f64,
    pub w_a3: f64,
    pub w_b3: f64,
    pub q1_ml_s: f64,
    pub q2_nominal_ml_s: f64,
    pub q3_nominal_ml_s: f64,
    pub q4_nominal_ml_s: f64,
    pub h1_nominal_cm: f64,
    pub w_a4_nominal: f64,
    pub w_b4_nominal: f64,
    pub ph_nominal: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            z_cm: 11.5,
            c_v4: 4.59,
            valve_exponent: 0.607,
            pk1: 6.35,
            pk2: 10.25,
            area_cm2: 207.0,
            w_a1: 3.00e-3,
            w_b1: 0.0,
            w_a2: -0.03,
            w_b2: 0.03,
            // Acid-equivalent concentration of the alkaline stream: negative by
            // definition of the ion invariant (NaOH dominates); the nominal
            // outlet triple below only balances with this sign.
            w_a3: -3.05e-3,
            w_b3: 5.00e-5,
            q1_ml_s: 16.6,
            q2_nominal_ml_s: 0.55,
            q3_nominal_ml_s: 15.6,
            q4_nominal_ml_s: 32.8,
            h1_nominal_cm: 14.0,
            w_a4_nominal: -4.32e-4,
            w_b4_nominal: 5.28e-4,
            ph_nominal: 7.0,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.area_cm2 > 0.0) {
            return Err(Error::Config("tank area must be positive".into()));
        }
        if !(self.q1_ml_s > 0.0) {
            return Err(Error::Config("acid stream flow must be positive".into()));
        }
        if !(self.c_v4 > 0.0) {
            return Err(Error::Config("valve coefficient must be positive".into()));
        }
        if !(self.pk1 < self.pk2) {
            return Err(Error::Config("dissociation constants must satisfy pK1 < pK2".into()));
        }
        Ok(())
    }

    pub fn nominal_state(&self) -> PlantState {
        PlantState {
            w_a4: self.w_a4_nominal,
            w_b4: self.w_b4_nominal,
            level_cm: self.h1_nominal_cm,
        }
    }

    /// Closed-form equilibrium for constant flows `(u, d)`: perfect mixing
    /// makes the outlet invariants flow-weighted averages of the inlet ones,
    /// and the level settles where the valve matches the total inflow.
    pub fn equilibrium(&self, u: f64, d: f64) -> PlantState {
        let total = self.q1_ml_s + u + d;
        PlantState {
            w_a4: (self.q1_ml_s * self.w_a1 + u * self.w_a3 + d * self.w_a2) / total,
            w_b4: (self.q1_ml_s * self.w_b1 + u * self.w_b3 + d * self.w_b2) / total,
            level_cm: (total / self.c_v4).powf(1.0 / self.valve_exponent) - self.z_cm,
        }
    }
}

/// Plant state: outlet acid invariant, buffer invariant, tank level.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct PlantState {
    pub w_a4: f64,
    pub w_b4: f64,
    pub level_cm: f64,
}

impl PlantState {
    pub fn validate(&self) -> Result<()> {
        if !(self.level_cm > 0.0) {
            return Err(Error::SingularState(self.level_cm));
        }
        if ![self.w_a4, self.w_b4, self.level_cm]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Config("plant state has non-finite components".into()));
        }
        Ok(())
    }
}

/// Autonomous drift term of the state equation.
pub fn drift_term(x: &PlantState, p: &PlantParams) -> [f64; 3] {
    let vol = p.area_cm2 * x.level_cm;
    [
        p.q1_ml_s * (p.w_a1 - x.w_a4) / vol,
        p.q1_ml_s * (p.w_b1 - x.w_b4) / vol,
        (p.q1_ml_s - p.c_v4 * (x.level_cm + p.z_cm).powf(p.valve_exponent)) / p.area_cm2,
    ]
}

/// Gain of the manipulated alkaline flow `u`.
pub fn input_gain(x: &PlantState, p: &PlantParams) -> [f64; 3] {
    let vol = p.area_cm2 * x.level_cm;
    [
        (p.w_a3 - x.w_a4) / vol,
        (p.w_b3 - x.w_b4) / vol,
        1.0 / p.area_cm2,
    ]
}

/// Gain of the buffer disturbance flow `d`.
pub fn disturbance_gain(x: &PlantState, p: &PlantParams) -> [f64; 3] {
    let vol = p.area_cm2 * x.level_cm;
    [
        (p.w_a2 - x.w_a4) / vol,
        (p.w_b2 - x.w_b4) / vol,
        1.0 / p.area_cm2,
    ]
}

/// State derivative `f1(x) + f2(x) u + f3(x) d`.
pub fn dynamics_rhs(x: &PlantState, u: f64, d: f64, p: &PlantParams) -> Result<[f64; 3]> {
    if !(x.level_cm > 0.0) {
        return Err(Error::SingularState(x.level_cm));
    }
    let f1 = drift_term(x, p);
    let f2 = input_gain(x, p);
    let f3 = disturbance_gain(x, p);
    Ok([
        f1[0] + f2[0] * u + f3[0] * d,
        f1[1] + f2[1] * u + f3[1] * d,
        f1[2] + f2[2] * u + f3[2] * d,
    ])
}

/// Charge balance whose root in `y` is the outlet pH.
///
/// `c(x, y) = x1 + 10^(y-14) - 10^(-y) + x2 (1 + 2·10^(y-pK2)) / (1 + 10^(pK1-y) + 10^(y-pK2))`
///
/// The hydronium term enters with a minus sign: that is the form that is
/// strictly increasing in `y` (unique bracketed root) and consistent with the
/// strong-acid limit, and it reproduces the nominal outlet triple.
pub fn charge_balance(w_a4: f64, w_b4: f64, y: f64, p: &PlantParams) -> f64 {
    let buffer = (1.0 + 2.0 * 10f64.powf(y - p.pk2))
        / (1.0 + 10f64.powf(p.pk1 - y) + 10f64.powf(y - p.pk2));
    w_a4 + 10f64.powf(y - 14.0) - 10f64.powf(-y) + w_b4 * buffer
}

/// Solve the charge balance for pH by bisection on [0, 14].
pub fn ph_from_state(w_a4: f64, w_b4: f64, p: &PlantParams) -> Result<f64> {
    let mut lo = 0.0f64;
    let mut hi = 14.0f64;
    let mut c_lo = charge_balance(w_a4, w_b4, lo, p);
    let c_hi = charge_balance(w_a4, w_b4, hi, p);
    if c_lo == 0.0 {
        return Ok(lo);
    }
    if c_hi == 0.0 {
        return Ok(hi);
    }
    if c_lo.signum() == c_hi.signum() {
        return Err(Error::PhOutOfRange { x1: w_a4, x2: w_b4 });
    }
    // 64 halvings shrink the bracket to ~8e-19, well under the 1e-10 target.
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        let c_mid = charge_balance(w_a4, w_b4, mid, p);
        if c_mid == 0.0 {
            return Ok(mid);
        }
        if c_mid.signum() == c_lo.signum() {
            lo = mid;
            c_lo = c_mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Classical fourth-order Runge-Kutta integration of the plant dynamics over
/// `duration_s` with fixed step `step_s` and both flows held constant.
/// A zero-length horizon returns the state unchanged.
pub fn integrate_for(
    x: &PlantState,
    u: f64,
    d: f64,
    duration_s: f64,
    step_s: f64,
    p: &PlantParams,
) -> Result<PlantState> {
    if duration_s == 0.0 {
        return Ok(*x);
    }
    if !(step_s > 0.0) || !(duration_s > 0.0) {
        return Err(Error::Config("integration step and horizon must be positive".into()));
    }
    let steps = (duration_s / step_s).round() as usize;
    if steps == 0 || ((steps as f64 * step_s) - duration_s).abs() > 1e-9 * duration_s.max(1.0) {
        return Err(Error::Config(
            "integration horizon must be an integer number of steps".into(),
        ));
    }
    let add = |a: &PlantState, k: &[f64; 3], h: f64| PlantState {
        w_a4: a.w_a4 + h * k[0],
        w_b4: a.w_b4 + h * k[1],
        level_cm: a.level_cm + h * k[2],
    };
    let mut state = *x;
    for _ in 0..steps {
        let k1 = dynamics_rhs(&state, u, d, p)?;
        let k2 = dynamics_rhs(&add(&state, &k1, 0.5 * step_s), u, d, p)?;
        let k3 = dynamics_rhs(&add(&state, &k2, 0.5 * step_s), u, d, p)?;
        let k4 = dynamics_rhs(&add(&state, &k3, step_s), u, d, p)?;
        state = PlantState {
            w_a4: state.w_a4 + step_s / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            w_b4: state.w_b4 + step_s / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
            level_cm: state.level_cm + step_s / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        };
    }
    Ok(state)
}

/// Sampled-data simulation settings.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SimulationConfig {
    /// Sampling period `T_s` in seconds.
    pub sample_period_s: f64,
    /// Integrator substeps per sampling period; the step is `T_s / substeps`.
    pub substeps: u32,
    /// Standard deviation of the additive output measurement noise, pH units.
    pub noise_std_ph: f64,
    pub noise_seed: u64,
    pub initial_state: PlantState,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            sample_period_s: 10.0,
            substeps: 10,
            noise_std_ph: 0.01,
            noise_seed: 0,
            initial_state: PlantParams::default().nominal_state(),
        }
    }
}

impl SimulationConfig {
    pub fn step_s(&self) -> f64 {
        self.sample_period_s / self.substeps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_period_s > 0.0) {
            return Err(Error::Config("sampling period must be positive".into()));
        }
        if self.substeps == 0 {
            return Err(Error::Config("need at least one integrator substep".into()));
        }
        if !(self.noise_std_ph >= 0.0) {
            return Err(Error::Config("noise standard deviation must be nonnegative".into()));
        }
        self.initial_state.validate()
    }
}

/// Advance the plant by one sampling period under zero-order-hold inputs.
pub fn integrate_step(
    x: &PlantState,
    u: f64,
    d: f64,
    cfg: &SimulationConfig,
    p: &PlantParams,
) -> Result<PlantState> {
    integrate_for(x, u, d, cfg.sample_period_s, cfg.step_s(), p)
}

/// Zero-order-hold simulation of the plant over the given input and
/// disturbance sequences. The output is the sampled pH plus seeded Gaussian
/// measurement noise; the noise-free trace is retained for diagnostics.
pub fn simulate(
    u_seq: &[f64],
    d_seq: &[f64],
    cfg: &SimulationConfig,
    p: &PlantParams,
) -> Result<Dataset> {
    cfg.validate()?;
    p.validate()?;
    if u_seq.len() != d_seq.len() {
        return Err(Error::Dimension(format!(
            "input length {} != disturbance length {}",
            u_seq.len(),
            d_seq.len()
        )));
    }
    if u_seq.is_empty() {
        return Err(Error::Empty);
    }
    let k_total = u_seq.len();
    let mut noise_stream = SeedStream::new(cfg.noise_seed, NOISE_STREAM);
    let noise = Normal::new(0.0, cfg.noise_std_ph)
        .map_err(|e| Error::Config(format!("bad noise distribution: {e}")))?;

    let mut y = Vec::with_capacity(k_total);
    let mut y_nf = Vec::with_capacity(k_total);
    let mut state = cfg.initial_state;
    for k in 0..k_total {
        let ph = ph_from_state(state.w_a4, state.w_b4, p)?;
        y_nf.push(ph);
        y.push(ph + noise.sample(&mut noise_stream));
        state = integrate_step(&state, u_seq[k], d_seq[k], cfg, p)?;
    }

    let manifest = DatasetManifest {
        version: DATASET_MANIFEST_VERSION,
        sample_period_s: cfg.sample_period_s,
        samples: k_total,
        simulation: Some(cfg.clone()),
        plant: Some(p.clone()),
        lineage: vec![format!("simulated: noise seed {}", cfg.noise_seed)],
        ..Default::default()
    };
    Ok(Dataset {
        sample_period_s: cfg.sample_period_s,
        u: DMatrix::from_column_slice(k_total, 1, u_seq),
        y: DMatrix::from_column_slice(k_total, 1, &y),
        disturbance: Some(DMatrix::from_column_slice(k_total, 1, d_seq)),
        y_noisefree: Some(DMatrix::from_column_slice(k_total, 1, &y_nf)),
        manifest,
    })
}
