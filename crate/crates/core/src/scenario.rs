//! Scenario-optimization layer: sample-size bounds, the randomized training
//! campaign, extremal selection, and the empirical violation test.
//!
//! Training an ESN fixes the recurrent weights by sampling, so "train many
//! and keep the best" is a scenario program with one optimization variable:
//! the achieved performance level. Sampling enough instances certifies that
//! a freshly sampled network beats the selected level only with probability
//! at most epsilon, with confidence 1 - beta.

use crate::error::{Error, Result};
use crate::esn::{train_esn, validate_model, EsnModel, ModelMetrics, ReservoirConfig, SimMode};
use crate::fsutil;
use crate::seeds::{SeedStream, CAMPAIGN_STREAM_BASE, TEST_STREAM_BASE};
use crate::signals::Dataset;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Fraction of failed instances above which a campaign aborts instead of
/// silently shrinking the certified sample count.
const FAILURE_LIMIT: f64 = 0.01;

fn check_probability(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::Config(format!("{name} must be in (0, 1), got {v}")));
    }
    Ok(())
}

/// Explicit sample-size bound: the smallest integer `N` with
/// `N >= (2 / epsilon) (ln(1 / beta) + d - 1)`.
pub fn required_scenarios(epsilon: f64, beta: f64, d: u32) -> Result<u64> {
    check_probability("epsilon", epsilon)?;
    check_probability("beta", beta)?;
    if d == 0 {
        return Err(Error::Config("d must be at least 1".into()));
    }
    let rhs = (2.0 / epsilon) * ((1.0 / beta).ln() + f64::from(d) - 1.0);
    // absolute guard so an exactly-integer bound is not pushed up by the
    // last-bit error of the float evaluation
    Ok(((rhs - 1e-9).ceil() as u64).max(1))
}

/// Tight implicit bound for the one-variable program, where the scenario
/// solution is the sample extremum: the smallest `N` with
/// `(1 - epsilon)^N <= beta`, computed by numerical inversion.
pub fn tight_required_scenarios(epsilon: f64, beta: f64) -> Result<u64> {
    check_probability("epsilon", epsilon)?;
    check_probability("beta", beta)?;
    let mut n = ((beta.ln() / (1.0 - epsilon).ln()) - 1e-9).ceil() as i64;
    n = n.max(1);
    if n < i64::from(i32::MAX) {
        let holds = |k: i64| (1.0 - epsilon).powi(k as i32) <= beta;
        while !holds(n) {
            n += 1;
        }
        while n > 1 && holds(n - 1) {
            n -= 1;
        }
    }
    Ok(n as u64)
}

/// Campaign sizing and the seed schedule guaranteeing independent instances.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ScenarioPlan {
    pub epsilon: f64,
    pub beta: f64,
    /// Scenario optimization variables; 1 for the performance-level program.
    pub d: u32,
    pub n_delta: u64,
    pub base_seed: u64,
    /// Whether `n_delta` meets the sample-size bound for `(epsilon, beta, d)`.
    pub certified: bool,
}

impl ScenarioPlan {
    /// Certified plan sized by the explicit bound.
    pub fn explicit_bound(epsilon: f64, beta: f64, d: u32, base_seed: u64) -> Result<Self> {
        let n_delta = required_scenarios(epsilon, beta, d)?;
        Ok(Self {
            epsilon,
            beta,
            d,
            n_delta,
            base_seed,
            certified: true,
        })
    }

    /// Certified plan sized by the tight bound (d = 1).
    pub fn tight_bound(epsilon: f64, beta: f64, base_seed: u64) -> Result<Self> {
        let n_delta = tight_required_scenarios(epsilon, beta)?;
        Ok(Self {
            epsilon,
            beta,
            d: 1,
            n_delta,
            base_seed,
            certified: true,
        })
    }

    /// Plan with a caller-chosen instance count, explicitly uncertified.
    pub fn exploratory(epsilon: f64, beta: f64, n_delta: u64, base_seed: u64) -> Result<Self> {
        check_probability("epsilon", epsilon)?;
        check_probability("beta", beta)?;
        if n_delta == 0 {
            return Err(Error::Config("campaign needs at least one instance".into()));
        }
        Ok(Self {
            epsilon,
            beta,
            d: 1,
            n_delta,
            base_seed,
            certified: false,
        })
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("epsilon", self.epsilon)?;
        check_probability("beta", self.beta)?;
        if self.d == 0 {
            return Err(Error::Config("d must be at least 1".into()));
        }
        if self.n_delta == 0 {
            return Err(Error::Config("campaign needs at least one instance".into()));
        }
        if self.certified {
            // For d = 1 the tight inversion is the exact requirement; the
            // explicit formula applies beyond that.
            let needed = if self.d == 1 {
                tight_required_scenarios(self.epsilon, self.beta)?
            } else {
                required_scenarios(self.epsilon, self.beta, self.d)?
            };
            if self.n_delta < needed {
                return Err(Error::Config(format!(
                    "certified plan needs at least {needed} instances, got {}",
                    self.n_delta
                )));
            }
        }
        Ok(())
    }

    /// The dedicated stream of campaign instance `j`.
    pub fn instance_stream(&self, j: u64) -> SeedStream {
        SeedStream::new(self.base_seed, CAMPAIGN_STREAM_BASE + j)
    }
}

/// Everything a training instance needs besides its seed stream.
#[derive(Clone, Copy)]
pub struct CampaignContext<'a> {
    pub train: &'a Dataset,
    pub validation: &'a Dataset,
    pub reservoir: &'a ReservoirConfig,
    pub mode: SimMode,
    pub ridge: f64,
}

fn evaluate_instance(
    base_seed: u64,
    stream_id: u64,
    ctx: &CampaignContext<'_>,
) -> Result<(EsnModel, ModelMetrics, bool)> {
    let mut stream = SeedStream::new(base_seed, stream_id);
    let trained = train_esn(ctx.reservoir, &mut stream, ctx.train, ctx.ridge)?;
    let metrics = validate_model(&trained.model, ctx.validation, ctx.mode)?;
    if !metrics.fit.is_finite() || !metrics.rmse.is_finite() {
        return Err(Error::Solve("non-finite validation metrics".into()));
    }
    Ok((trained.model, metrics, trained.rank_deficient))
}

/// One successfully trained campaign instance.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct InstanceRecord {
    pub index: u64,
    pub stream_id: u64,
    pub fit: f64,
    pub rmse: f64,
    pub rank_deficient: bool,
    /// Set once the model has been serialized by the caller.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_path: Option<String>,
}

/// An instance whose training pipeline errored; excluded from the records.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FailedInstance {
    pub index: u64,
    pub stream_id: u64,
    pub error: String,
}

/// Outcome of a full campaign. `models` is parallel to `records`.
#[derive(Clone, Debug)]
pub struct CampaignResult {
    pub plan: ScenarioPlan,
    pub reservoir: ReservoirConfig,
    pub mode: SimMode,
    pub ridge: f64,
    pub records: Vec<InstanceRecord>,
    pub models: Vec<EsnModel>,
    pub failures: Vec<FailedInstance>,
    /// Positions into `records` of the extremal instances.
    pub best_fit_pos: usize,
    pub worst_fit_pos: usize,
    pub best_rmse_pos: usize,
    pub worst_rmse_pos: usize,
    /// Best-case FIT certificate: the maximum FIT over the instances.
    pub fit_bound: f64,
    /// Worst-case RMSE certificate: the maximum RMSE over the instances.
    pub rmse_bound: f64,
}

fn extremal_positions(records: &[InstanceRecord]) -> (usize, usize, usize, usize) {
    let mut best_fit = 0;
    let mut worst_fit = 0;
    let mut best_rmse = 0;
    let mut worst_rmse = 0;
    for (i, r) in records.iter().enumerate() {
        // strict comparisons keep the lowest index on ties
        if r.fit > records[best_fit].fit {
            best_fit = i;
        }
        if r.fit < records[worst_fit].fit {
            worst_fit = i;
        }
        if r.rmse < records[best_rmse].rmse {
            best_rmse = i;
        }
        if r.rmse > records[worst_rmse].rmse {
            worst_rmse = i;
        }
    }
    (best_fit, worst_fit, best_rmse, worst_rmse)
}

/// Train `plan.n_delta` independent instances and reduce them to the
/// campaign certificates. Instances run in parallel; every reported value is
/// independent of the execution order because each instance is a pure
/// function of its dedicated stream and the reduction is an argmax gathered
/// by instance index.
///
/// Callers are expected to hand in disjoint training and validation sets.
pub fn run_campaign(plan: &ScenarioPlan, ctx: &CampaignContext<'_>) -> Result<CampaignResult> {
    plan.validate()?;
    ctx.reservoir.validate()?;
    let outcomes: Vec<(u64, Result<(EsnModel, ModelMetrics, bool)>)> = (0..plan.n_delta)
        .into_par_iter()
        .map(|j| {
            let stream_id = CAMPAIGN_STREAM_BASE + j;
            (j, evaluate_instance(plan.base_seed, stream_id, ctx))
        })
        .collect();

    let mut records = Vec::with_capacity(outcomes.len());
    let mut models = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for (j, outcome) in outcomes {
        let stream_id = CAMPAIGN_STREAM_BASE + j;
        match outcome {
            Ok((model, metrics, rank_deficient)) => {
                records.push(InstanceRecord {
                    index: j,
                    stream_id,
                    fit: metrics.fit,
                    rmse: metrics.rmse,
                    rank_deficient,
                    model_path: None,
                });
                models.push(model);
            }
            Err(e) => failures.push(FailedInstance {
                index: j,
                stream_id,
                error: e.to_string(),
            }),
        }
    }
    let total = plan.n_delta as usize;
    if failures.len() as f64 > FAILURE_LIMIT * total as f64 {
        return Err(Error::CampaignAborted {
            failed: failures.len(),
            total,
            limit_percent: FAILURE_LIMIT * 100.0,
        });
    }
    if records.is_empty() {
        return Err(Error::Empty);
    }
    let (best_fit_pos, worst_fit_pos, best_rmse_pos, worst_rmse_pos) =
        extremal_positions(&records);
    let fit_bound = records[best_fit_pos].fit;
    let rmse_bound = records[worst_rmse_pos].rmse;
    Ok(CampaignResult {
        plan: plan.clone(),
        reservoir: ctx.reservoir.clone(),
        mode: ctx.mode,
        ridge: ctx.ridge,
        records,
        models,
        failures,
        best_fit_pos,
        worst_fit_pos,
        best_rmse_pos,
        worst_rmse_pos,
        fit_bound,
        rmse_bound,
    })
}

/// Which extremal instance to pick out of a campaign.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionCriterion {
    BestFit,
    WorstFit,
    BestRmse,
    WorstRmse,
}

impl CampaignResult {
    /// The trained model behind a record, when still in memory.
    pub fn model_for(&self, record: &InstanceRecord) -> Option<&EsnModel> {
        self.records
            .iter()
            .position(|r| r.index == record.index)
            .and_then(|pos| self.models.get(pos))
    }
}

/// Return the extremal instance for `criterion`; ties resolve to the lowest
/// instance index.
pub fn select<'a>(
    result: &'a CampaignResult,
    criterion: SelectionCriterion,
) -> Result<&'a InstanceRecord> {
    if result.records.is_empty() {
        return Err(Error::Empty);
    }
    let pos = match criterion {
        SelectionCriterion::BestFit => result.best_fit_pos,
        SelectionCriterion::WorstFit => result.worst_fit_pos,
        SelectionCriterion::BestRmse => result.best_rmse_pos,
        SelectionCriterion::WorstRmse => result.worst_rmse_pos,
    };
    result.records.get(pos).ok_or(Error::Empty)
}

/// Which direction the RMSE certificate is tested in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmseDirection {
    /// Violation: a fresh instance scores RMSE strictly above the worst-case
    /// bound.
    #[default]
    AboveWorstCase,
    /// Violation: a fresh instance scores RMSE strictly below the best
    /// campaign RMSE (it outperforms the best-case selection).
    BelowBestCase,
}

/// A fresh instance scored against the campaign bounds.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TestInstance {
    pub index: u64,
    pub stream_id: u64,
    pub fit: f64,
    pub rmse: f64,
    pub violates_fit: bool,
    pub violates_rmse: bool,
}

/// Result of the empirical violation test.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ViolationReport {
    pub tested: usize,
    pub fit_bound: f64,
    pub rmse_bound: f64,
    pub rmse_direction: RmseDirection,
    pub fit_violations: usize,
    pub rmse_violations: usize,
    /// `None` when no instances were tested (rates undefined).
    pub fit_rate: Option<f64>,
    pub rmse_rate: Option<f64>,
    pub instances: Vec<TestInstance>,
    pub failures: Vec<FailedInstance>,
}

/// Train `m` fresh instances on streams disjoint from the campaign and count
/// how many beat the campaign certificates. Equality with a bound is not a
/// violation.
pub fn empirical_violation_test(
    result: &CampaignResult,
    m: usize,
    plan_seed: u64,
    ctx: &CampaignContext<'_>,
    direction: RmseDirection,
) -> Result<ViolationReport> {
    let campaign_range = (CAMPAIGN_STREAM_BASE, CAMPAIGN_STREAM_BASE + result.plan.n_delta);
    let test_range = (TEST_STREAM_BASE, TEST_STREAM_BASE + m as u64);
    let overlap = plan_seed == result.plan.base_seed
        && campaign_range.0 < test_range.1
        && test_range.0 < campaign_range.1;
    if overlap {
        return Err(Error::SeedOverlap {
            base_seed: plan_seed,
        });
    }
    let fit_bound = result.fit_bound;
    let rmse_threshold = match direction {
        RmseDirection::AboveWorstCase => result.rmse_bound,
        RmseDirection::BelowBestCase => result.records[result.best_rmse_pos].rmse,
    };

    let outcomes: Vec<(u64, Result<(EsnModel, ModelMetrics, bool)>)> = (0..m as u64)
        .into_par_iter()
        .map(|i| {
            let stream_id = TEST_STREAM_BASE + i;
            (i, evaluate_instance(plan_seed, stream_id, ctx))
        })
        .collect();

    let mut instances = Vec::with_capacity(m);
    let mut failures = Vec::new();
    for (i, outcome) in outcomes {
        let stream_id = TEST_STREAM_BASE + i;
        match outcome {
            Ok((_, metrics, _)) => {
                let violates_rmse = match direction {
                    RmseDirection::AboveWorstCase => metrics.rmse > rmse_threshold,
                    RmseDirection::BelowBestCase => metrics.rmse < rmse_threshold,
                };
                instances.push(TestInstance {
                    index: i,
                    stream_id,
                    fit: metrics.fit,
                    rmse: metrics.rmse,
                    violates_fit: metrics.fit > fit_bound,
                    violates_rmse,
                });
            }
            Err(e) => failures.push(FailedInstance {
                index: i,
                stream_id,
                error: e.to_string(),
            }),
        }
    }
    if m > 0 && failures.len() as f64 > FAILURE_LIMIT * m as f64 {
        return Err(Error::CampaignAborted {
            failed: failures.len(),
            total: m,
            limit_percent: FAILURE_LIMIT * 100.0,
        });
    }
    let fit_violations = instances.iter().filter(|t| t.violates_fit).count();
    let rmse_violations = instances.iter().filter(|t| t.violates_rmse).count();
    let tested = instances.len();
    let rate = |count: usize| {
        if tested == 0 {
            None
        } else {
            Some(count as f64 / tested as f64)
        }
    };
    Ok(ViolationReport {
        tested,
        fit_bound,
        rmse_bound: rmse_threshold,
        rmse_direction: direction,
        fit_violations,
        rmse_violations,
        fit_rate: rate(fit_violations),
        rmse_rate: rate(rmse_violations),
        instances,
        failures,
    })
}

pub const CAMPAIGN_MANIFEST_VERSION: u32 = 1;

/// On-disk form of a campaign: plan, per-instance metrics and seeds, bounds,
/// and file references.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CampaignManifest {
    pub version: u32,
    pub plan: ScenarioPlan,
    pub mode: SimMode,
    pub ridge: f64,
    pub reservoir: ReservoirConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_data: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_data: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub best_fit_instance: u64,
    pub worst_fit_instance: u64,
    pub best_rmse_instance: u64,
    pub worst_rmse_instance: u64,
    pub fit_bound: f64,
    pub rmse_bound: f64,
    pub best_rmse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_model_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_rmse_model_path: Option<String>,
    pub failures: Vec<FailedInstance>,
    pub instances: Vec<InstanceRecord>,
}

impl CampaignManifest {
    pub fn from_result(result: &CampaignResult) -> Self {
        Self {
            version: CAMPAIGN_MANIFEST_VERSION,
            plan: result.plan.clone(),
            mode: result.mode,
            ridge: result.ridge,
            reservoir: result.reservoir.clone(),
            train_data: None,
            validation_data: None,
            config_hash: None,
            best_fit_instance: result.records[result.best_fit_pos].index,
            worst_fit_instance: result.records[result.worst_fit_pos].index,
            best_rmse_instance: result.records[result.best_rmse_pos].index,
            worst_rmse_instance: result.records[result.worst_rmse_pos].index,
            fit_bound: result.fit_bound,
            rmse_bound: result.rmse_bound,
            best_rmse: result.records[result.best_rmse_pos].rmse,
            best_model_path: None,
            worst_rmse_model_path: None,
            failures: result.failures.clone(),
            instances: result.records.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let manifest: CampaignManifest = fsutil::read_json(path)?;
        if manifest.version != CAMPAIGN_MANIFEST_VERSION {
            return Err(Error::Config(format!(
                "unsupported campaign manifest version {}",
                manifest.version
            )));
        }
        Ok(manifest)
    }
}

/// Per-instance CSV export for scatter plots of the sampling phase.
pub fn write_instances_csv(records: &[InstanceRecord], path: &Path) -> Result<()> {
    let map_csv = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["instance", "stream_id", "fit", "rmse", "rank_deficient"])
        .map_err(map_csv)?;
    for r in records {
        wtr.write_record([
            r.index.to_string(),
            r.stream_id.to_string(),
            format!("{}", r.fit),
            format!("{}", r.rmse),
            r.rank_deficient.to_string(),
        ])
        .map_err(map_csv)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    fsutil::write_atomic(path, &bytes)
}

/// Per-instance CSV export of the testing phase, with the certificate
/// thresholds repeated per row so a plot can draw them directly.
pub fn write_test_instances_csv(report: &ViolationReport, path: &Path) -> Result<()> {
    let map_csv = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record([
        "instance",
        "stream_id",
        "fit",
        "rmse",
        "violates_fit",
        "violates_rmse",
        "fit_bound",
        "rmse_bound",
    ])
    .map_err(map_csv)?;
    for t in &report.instances {
        wtr.write_record([
            t.index.to_string(),
            t.stream_id.to_string(),
            format!("{}", t.fit),
            format!("{}", t.rmse),
            t.violates_fit.to_string(),
            t.violates_rmse.to_string(),
            format!("{}", report.fit_bound),
            format!("{}", report.rmse_bound),
        ])
        .map_err(map_csv)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    fsutil::write_atomic(path, &bytes)
}
