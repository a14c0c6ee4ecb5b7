//! Browser bindings: a small robust estimate, the worst-subset oracle on typed-in
//! numbers, and the subgaussianity certificate. Results cross the boundary as JSON.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use robust_sos::data::EstimationErrors;
use robust_sos::estimator::{self, Stage};
use robust_sos::experiment::{self, Baseline, ExperimentConfig};
use robust_sos::resilience::{self, Normalization, Statistic};

/// Largest sample the page will solve; the solver runs on the main thread.
pub const MAX_DEMO_POINTS: usize = 40;

#[derive(Serialize)]
struct EstimateView {
    observed: Vec<Vec<f64>>,
    mask: Vec<bool>,
    mu_hat: Vec<f64>,
    sigma_hat: Vec<Vec<f64>>,
    sample_mean: Vec<f64>,
    status: String,
    iterations: usize,
    errors: EstimationErrors,
    baseline: Baseline,
}

pub fn estimate_json(n: usize, d: usize, eps: f64, seed: u64, adversary: &str) -> Result<String, String> {
    if n > MAX_DEMO_POINTS || !(1..=2).contains(&d) {
        return Err(format!("the demo solves at most {MAX_DEMO_POINTS} points in 1 or 2 dimensions"));
    }
    let config = ExperimentConfig {
        d,
        n,
        eps: vec![eps],
        adversaries: vec![adversary.to_string()],
        seed,
        max_iters: 1500,
        stage: Stage::One,
        ..ExperimentConfig::default()
    };
    config.validate().map_err(|e| e.to_string())?;
    let sample = config.sample(eps, adversary, seed).map_err(|e| e.to_string())?;
    let out = experiment::estimate_sample(&config, &sample, adversary, seed).map_err(|e| e.to_string())?;
    let view = EstimateView {
        sample_mean: robust_sos::data::mean_of(&sample.observed),
        observed: sample.observed,
        mask: sample.mask,
        mu_hat: out.report.mu_hat.clone(),
        sigma_hat: out.report.sigma_hat.rows(),
        status: out.status,
        iterations: out.report.iterations(),
        errors: out.errors,
        baseline: out.baseline,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

/// Numbers separated by commas, spaces or newlines, one 1-D point each.
pub fn parse_points(text: &str) -> Result<Vec<Vec<f64>>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map(|v| vec![v]).map_err(|_| format!("not a number: {t:?}")))
        .collect()
}

#[derive(Serialize)]
struct ResilienceView {
    first_moment: f64,
    second_moment: f64,
    linear_envelope: f64,
}

pub fn resilience_json(points: &str, eps: f64) -> Result<String, String> {
    let pts = parse_points(points)?;
    if pts.len() < 2 {
        return Err("enter at least two numbers".into());
    }
    let first = resilience::worst_subset_linear(&pts, eps, &[1.0]).map_err(|e| e.to_string())?;
    let second = resilience::worst_subset_quadratic(&pts, eps, &Statistic::SecondMomentDev(vec![1.0]), &Normalization::Frobenius)
        .map_err(|e| e.to_string())?;
    serde_json::to_string(&ResilienceView {
        first_moment: first,
        second_moment: second,
        linear_envelope: experiment::linear_envelope(eps),
    })
    .map_err(|e| e.to_string())
}

/// Whether `(3 + margin)(E x²)² − E x⁴ ≥ 0` has an SoS certificate, moments taken about zero.
pub fn certify_points(points: &str, margin: f64) -> Result<bool, String> {
    let pts = parse_points(points)?;
    if pts.len() < 2 {
        return Err("enter at least two numbers".into());
    }
    estimator::certify_subgaussianity(&pts, margin)
        .map(|c| c.is_some())
        .map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn estimate(n: usize, d: usize, eps: f64, seed: u32, adversary: &str) -> Result<String, JsError> {
    estimate_json(n, d, eps, seed.into(), adversary).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn worst_subset(points: &str, eps: f64) -> Result<String, JsError> {
    resilience_json(points, eps).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn certify(points: &str, margin: f64) -> Result<bool, JsError> {
    certify_points(points, margin).map_err(|e| JsError::new(&e))
}
