//! Seeded experiment records: configs, sweep rows, audits and estimate reports.
//!
//! Everything here is deterministic in the config; wall-clock time is only
//! written when `timing` is switched on.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{self, AdversarySpec, ContaminatedSample, EstimationErrors, GaussianModel};
use crate::error::{Error, Result};
use crate::estimator::{self, EstimationReport, EstimatorConfig, Stage};
use crate::linalg::{self, DEFAULT_EIGEN_FLOOR};
use crate::resilience::{self, Normalization, Statistic};
use crate::sdp::SolveStatus;

pub const RESULTS_SCHEMA: &str = "robust-sos-results/1";
pub const AUDIT_SCHEMA: &str = "robust-sos-audit/1";
pub const REPORT_SCHEMA: &str = "robust-sos-report/1";

fn default_repeats() -> usize {
    1
}

fn default_degree() -> usize {
    4
}

fn default_tol() -> f64 {
    1e-6
}

fn default_max_iters() -> usize {
    5_000
}

fn default_stage() -> Stage {
    Stage::Two
}

fn default_delta() -> f64 {
    0.05
}

fn default_probes() -> usize {
    100
}

fn default_margin() -> f64 {
    0.5
}

/// One experiment: data model, corruption grid, relaxation and solver knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: usize,
    pub n: usize,
    pub eps: Vec<f64>,
    pub adversaries: Vec<String>,
    /// First seed; rows use `seed, seed + 1, …` for `repeats` seeds.
    pub seed: u64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_degree")]
    pub degree: usize,
    /// Fourth-moment slack; absent selects the default schedule.
    #[serde(default)]
    pub slack: Option<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_stage")]
    pub stage: Stage,
    /// Target failure probability. Only a label: runs fix seeds instead.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Random unit probes per audit statistic.
    #[serde(default = "default_probes")]
    pub probes: usize,
    /// Margin of the certifiable-subgaussianity check in audits.
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// Record a solver trace row every 10 iterations.
    #[serde(default)]
    pub trace: bool,
    /// Fill the `seconds` column. Off by default so outputs are byte-stable.
    #[serde(default)]
    pub timing: bool,
    #[serde(default)]
    pub out_dir: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            d: 2,
            n: 40,
            eps: vec![0.1],
            adversaries: vec!["far-cluster".into()],
            seed: 0,
            repeats: default_repeats(),
            degree: default_degree(),
            slack: None,
            tol: default_tol(),
            max_iters: default_max_iters(),
            stage: default_stage(),
            delta: default_delta(),
            probes: default_probes(),
            margin: default_margin(),
            trace: false,
            timing: false,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.d == 0 {
            return bad("d must be positive".into());
        }
        if self.n < 4 {
            return bad(format!("n must be at least 4, got {}", self.n));
        }
        if self.eps.is_empty() {
            return bad("eps list is empty".into());
        }
        for &e in &self.eps {
            data::check_eps(e)?;
        }
        if self.adversaries.is_empty() {
            return bad("adversary list is empty".into());
        }
        for a in &self.adversaries {
            AdversarySpec::with_defaults(a, self.d)?;
        }
        if self.repeats == 0 {
            return bad("repeats must be positive".into());
        }
        if self.degree != 4 && self.degree != 6 {
            return bad(format!("degree must be 4 or 6, got {}", self.degree));
        }
        if self.slack.is_some_and(|c| !(c >= 0.0) || !c.is_finite()) {
            return bad("slack must be finite and non-negative".into());
        }
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return bad("solver tolerance and iteration budget must be positive".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.margin >= 0.0) {
            return bad("margin must be non-negative".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.repeats as u64).map(move |k| self.seed + k)
    }

    pub fn estimator_config(&self, seed: u64) -> EstimatorConfig {
        EstimatorConfig {
            degree: self.degree,
            slack: self.slack,
            tol: self.tol,
            max_iters: self.max_iters,
            seed,
            trace_every: if self.trace { 10 } else { 0 },
            ..EstimatorConfig::default()
        }
    }

    /// Standard Gaussian sample of size `n`, then `⌊εn⌋` points replaced.
    pub fn sample(&self, eps: f64, adversary: &str, seed: u64) -> Result<ContaminatedSample> {
        let model = GaussianModel::standard(self.d);
        let clean = data::sample_gaussian(&model, self.n, seed)?;
        let spec = AdversarySpec::with_defaults(adversary, self.d)?;
        data::contaminate(&clean, eps, &spec, seed)
    }
}

/// Errors of the non-robust baselines on the same observed sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub sample_mean_err: f64,
    pub sample_cov_frob_err: f64,
    pub median_mean_err: f64,
}

pub fn baseline(model: &GaussianModel, observed: &[Vec<f64>]) -> Result<Baseline> {
    let m = data::empirical_moments(observed)?;
    let plain = data::error_report(model, &m.mu0, &m.sigma0)?;
    let median = data::coordinatewise_median(observed);
    let diff: Vec<f64> = median.iter().zip(&model.mu).map(|(a, b)| a - b).collect();
    Ok(Baseline {
        sample_mean_err: plain.mean_err,
        sample_cov_frob_err: plain.frob_err,
        median_mean_err: linalg::mahalanobis(&diff, &model.sigma, DEFAULT_EIGEN_FLOOR)?,
    })
}

pub fn run_estimator(y: &[Vec<f64>], eps: f64, stage: Stage, config: &EstimatorConfig) -> Result<EstimationReport> {
    match stage {
        Stage::One => estimator::estimate_one_stage(y, eps, config),
        Stage::Two => estimator::estimate_two_stage(y, eps, config),
    }
}

pub fn status_name(status: SolveStatus) -> &'static str {
    match status {
        SolveStatus::Solved => "solved",
        SolveStatus::MaxIters => "max-iters",
        SolveStatus::InfeasibleHeuristic => "infeasible-heuristic",
    }
}

/// One line of a results table. Metrics are absent when the row failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub adversary: String,
    pub seed: u64,
    pub errors: Option<EstimationErrors>,
    pub baseline: Option<Baseline>,
    /// Solver status name, or `error` when the row could not be computed.
    pub status: String,
    pub iters: Option<usize>,
    pub seconds: Option<f64>,
    pub message: Option<String>,
}

/// Everything `estimate` produces for one sample.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimateOutcome {
    pub schema: String,
    pub config: ExperimentConfig,
    pub eps: f64,
    pub adversary: String,
    pub seed: u64,
    pub corrupted: usize,
    pub report: EstimationReport,
    pub errors: EstimationErrors,
    pub baseline: Baseline,
    pub status: String,
}

/// Runs one `(eps, adversary, seed)` cell end to end.
pub fn estimate_cell(config: &ExperimentConfig, eps: f64, adversary: &str, seed: u64) -> Result<EstimateOutcome> {
    let sample = config.sample(eps, adversary, seed)?;
    estimate_sample(config, &sample, adversary, seed)
}

/// Estimates on a given sample; errors are measured against the standard
/// Gaussian every generated sample is drawn from.
pub fn estimate_sample(
    config: &ExperimentConfig,
    sample: &ContaminatedSample,
    adversary: &str,
    seed: u64,
) -> Result<EstimateOutcome> {
    let eps = sample.eps;
    let model = GaussianModel::standard(sample.dim());
    let base = baseline(&model, &sample.observed)?;
    let report = run_estimator(&sample.observed, eps, config.stage, &config.estimator_config(seed))?;
    let errors = data::error_report(&model, &report.mu_hat, &report.sigma_hat)?;
    Ok(EstimateOutcome {
        schema: REPORT_SCHEMA.into(),
        config: config.clone(),
        eps,
        adversary: adversary.into(),
        seed,
        corrupted: sample.num_corrupted(),
        status: status_name(report.status()).into(),
        report,
        errors,
        baseline: base,
    })
}

impl SweepRow {
    pub fn from_outcome(o: &EstimateOutcome, seconds: Option<f64>) -> Self {
        SweepRow {
            eps: o.eps,
            adversary: o.adversary.clone(),
            seed: o.seed,
            errors: Some(o.errors),
            baseline: Some(o.baseline),
            status: o.status.clone(),
            iters: Some(o.report.iterations()),
            seconds,
            message: None,
        }
    }
}

/// One row per `(eps, adversary, seed)` in config order. A failing cell is
/// recorded with status `error` and the sweep moves on.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let mut rows = Vec::new();
    for &eps in &config.eps {
        for adversary in &config.adversaries {
            for seed in config.seeds() {
                let start = Instant::now();
                let cell = estimate_cell(config, eps, adversary, seed);
                let seconds = config.timing.then(|| start.elapsed().as_secs_f64());
                rows.push(match cell {
                    Ok(o) => SweepRow::from_outcome(&o, seconds),
                    Err(e) => SweepRow {
                        eps,
                        adversary: adversary.clone(),
                        seed,
                        errors: None,
                        baseline: None,
                        status: "error".into(),
                        iters: None,
                        seconds,
                        message: Some(e.to_string()),
                    },
                });
            }
        }
    }
    Ok(rows)
}

pub const RESULTS_COLUMNS: [&str; 14] = [
    "eps",
    "adversary",
    "seed",
    "mean_err",
    "spec_err",
    "frob_err",
    "tv_surrogate",
    "base_mean_err",
    "base_frob_err",
    "status",
    "iters",
    "seconds",
    "base_median_err",
    "message",
];

fn num(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

pub fn write_results_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "# schema={RESULTS_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_COLUMNS)?;
    for r in rows {
        let e = r.errors.as_ref();
        let b = r.baseline.as_ref();
        w.write_record([
            r.eps.to_string(),
            r.adversary.clone(),
            r.seed.to_string(),
            num(e.map(|e| e.mean_err)),
            num(e.map(|e| e.spec_err)),
            num(e.map(|e| e.frob_err)),
            num(e.map(|e| e.tv_surrogate)),
            num(b.map(|b| b.sample_mean_err)),
            num(b.map(|b| b.sample_cov_frob_err)),
            r.status.clone(),
            r.iters.map_or_else(String::new, |i| i.to_string()),
            num(r.seconds),
            num(b.map(|b| b.median_mean_err)),
            r.message.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the numeric part of a results table back (used by tests and scripts).
pub fn read_results_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(l) if l == format!("# schema={RESULTS_SCHEMA}") => {}
        other => return Err(Error::InvalidInput(format!("unexpected schema line {other:?}"))),
    }
    let body: String = lines.map(|l| format!("{l}\n")).collect();
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let parse = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            return Ok(None);
        }
        s.parse().map(Some).map_err(|e| Error::InvalidInput(format!("bad number {s:?}: {e}")))
    };
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() != RESULTS_COLUMNS.len() {
            return Err(Error::InvalidInput(format!("results row has {} fields", rec.len())));
        }
        let f = |k: usize| parse(&rec[k]);
        let errors = match (f(3)?, f(4)?, f(5)?, f(6)?) {
            (Some(mean_err), Some(spec_err), Some(frob_err), Some(tv_surrogate)) => Some(EstimationErrors {
                mean_err,
                spec_err,
                frob_err,
                tv_surrogate,
            }),
            _ => None,
        };
        let baseline = match (f(7)?, f(8)?, f(12)?) {
            (Some(a), Some(b), Some(c)) => Some(Baseline {
                sample_mean_err: a,
                sample_cov_frob_err: b,
                median_mean_err: c,
            }),
            _ => None,
        };
        rows.push(SweepRow {
            eps: f(0)?.ok_or_else(|| Error::InvalidInput("row without eps".into()))?,
            adversary: rec[1].to_string(),
            seed: rec[2].parse().map_err(|e| Error::InvalidInput(format!("bad seed: {e}")))?,
            errors,
            baseline,
            status: rec[9].to_string(),
            iters: f(10)?.map(|v| v as usize),
            seconds: f(11)?,
            message: (!rec[13].is_empty()).then(|| rec[13].to_string()),
        });
    }
    Ok(rows)
}

/// One audit measurement against its reference envelope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub statistic: String,
    pub eps: Option<f64>,
    pub probe: Option<usize>,
    pub value: String,
    pub envelope: Option<f64>,
    pub within: Option<bool>,
}

/// `3ε√ln(1/ε)`, the reference size of first-moment resilience.
pub fn linear_envelope(eps: f64) -> f64 {
    if eps <= 0.0 {
        0.0
    } else {
        3.0 * eps * (1.0 / eps).ln().sqrt()
    }
}

/// `5ε ln(1/ε)`, the reference size of second-moment resilience.
pub fn second_moment_envelope(eps: f64) -> f64 {
    if eps <= 0.0 {
        0.0
    } else {
        5.0 * eps * (1.0 / eps).ln()
    }
}

pub fn random_unit_probes(d: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-3 {
                break v.iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

/// Resilience of a clean seeded sample along random probes, plus the
/// certifiable-subgaussianity check. Envelope violations are reported, not errors.
pub fn run_audit(config: &ExperimentConfig) -> Result<Vec<AuditRow>> {
    config.validate()?;
    let model = GaussianModel::standard(config.d);
    let clean = data::sample_gaussian(&model, config.n, config.seed)?;
    let probes = random_unit_probes(config.d, config.probes, config.seed);
    let mut rows = Vec::new();
    for &eps in &config.eps {
        for (k, v) in probes.iter().enumerate() {
            for (stat, env) in [
                (Statistic::FirstMoment(v.clone()), linear_envelope(eps)),
                (Statistic::SecondMomentDev(v.clone()), second_moment_envelope(eps)),
            ] {
                let value = resilience::worst_subset_quadratic(&clean, eps, &stat, &Normalization::Frobenius)?;
                rows.push(AuditRow {
                    statistic: stat.name().into(),
                    eps: Some(eps),
                    probe: Some(k),
                    value: value.to_string(),
                    envelope: Some(env),
                    within: Some(value <= env),
                });
            }
        }
    }
    let moments = data::empirical_moments(&clean)?;
    let centered: Vec<Vec<f64>> = clean
        .iter()
        .map(|p| p.iter().zip(&moments.mu0).map(|(a, b)| a - b).collect())
        .collect();
    let cert = estimator::certify_subgaussianity(&centered, config.margin)?;
    rows.push(AuditRow {
        statistic: "certificate".into(),
        eps: None,
        probe: None,
        value: if cert.is_some() { "yes" } else { "no" }.into(),
        envelope: None,
        within: None,
    });
    Ok(rows)
}

pub fn write_audit_csv<W: Write>(rows: &[AuditRow], mut out: W) -> Result<()> {
    writeln!(out, "# schema={AUDIT_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["statistic", "eps", "probe", "value", "envelope", "within"])?;
    for r in rows {
        w.write_record([
            r.statistic.clone(),
            num(r.eps),
            r.probe.map_or_else(String::new, |p| p.to_string()),
            r.value.clone(),
            num(r.envelope),
            r.within.map_or_else(String::new, |b| b.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}
