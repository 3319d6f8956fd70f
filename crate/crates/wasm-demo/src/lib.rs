//! wasm-bindgen exports for the static page in `www/`. Every export returns a
//! JSON string; failures come back as `{"error": "..."}`.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use cyl_levy::experiments::decay_series_oracle;
use cyl_levy::integral::gaussian_counterexample;
use cyl_levy::mc::McConfig;
use cyl_levy::psumming::{composition_decay, semigroup_defect, CodomainNorm, DomainNorm, FiniteRankOperator, LowerSearch};
use cyl_levy::spde::{heat_problem, picard_solve, PicardInit, PicardOptions, SemigroupSpec};

fn to_json<T: Serialize>(r: cyl_levy::Result<T>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| format!("{{\"error\":\"{e}\"}}")),
        Err(e) => serde_json::json!({ "error": e.to_string() }).to_string(),
    }
}

#[derive(Serialize)]
struct DecayCurve {
    eps: Vec<f64>,
    pi2: Vec<f64>,
    oracle: Vec<f64>,
}

fn decay(k: usize, n_eps: usize) -> cyl_levy::Result<DecayCurve> {
    let n_eps = n_eps.max(2);
    let eps: Vec<f64> = (0..n_eps).map(|j| 10f64.powf(-8.0 * j as f64 / (n_eps - 1) as f64)).collect();
    let eigs = SemigroupSpec::heat(k).eigenvalues().to_vec();
    let psi = FiniteRankOperator::diagonal(&(1..=k).map(|j| 1.0 / j as f64).collect::<Vec<_>>(), DomainNorm::L2, CodomainNorm::L2)?;
    let family = eps
        .iter()
        .map(|e| Ok((*e, semigroup_defect(&eigs, *e)?)))
        .collect::<cyl_levy::Result<Vec<_>>>()?;
    let table = composition_decay(&psi, &family, 2.0, 1e-3, &LowerSearch::default())?;
    Ok(DecayCurve {
        oracle: eps.iter().map(|e| decay_series_oracle(k, *e)).collect(),
        pi2: table.rows.iter().map(|r| r.value).collect(),
        eps,
    })
}

/// `π₂((Id - S(ε))·diag(1/k))` for the heat semigroup on `k` modes, for
/// `n_eps` values of ε from 1 down to 1e-8.
#[wasm_bindgen]
pub fn decay_curve(k: usize, n_eps: usize) -> String {
    to_json(decay(k.max(1), n_eps))
}

#[derive(Serialize)]
struct Slope {
    n: Vec<u64>,
    ratio: Vec<f64>,
    slope: Option<f64>,
    expected: f64,
}

fn slope(p: f64, n_max: u64, paths: usize, seed: u64) -> cyl_levy::Result<Slope> {
    let ns: Vec<u64> = std::iter::successors(Some(1u64), |n| n.checked_mul(2)).take_while(|n| *n <= n_max.max(2)).collect();
    let r = gaussian_counterexample(p, &ns, &McConfig::new(seed, paths.max(10)))?;
    Ok(Slope {
        n: r.rows.iter().map(|row| row.n).collect(),
        ratio: r.rows.iter().map(|row| row.ratio).collect(),
        slope: r.fit.map(|f| f.slope),
        expected: r.expected_slope,
    })
}

/// Moment ratio `E|W(1/n)|^p / (1/n)` for dyadic `n ≤ n_max` and its log-log slope.
#[wasm_bindgen]
pub fn counterexample_slope(p: f64, n_max: u32, paths: u32, seed: u32) -> String {
    to_json(slope(p, u64::from(n_max), paths as usize, u64::from(seed)))
}

#[derive(Serialize)]
struct PicardTrace {
    distances: Vec<f64>,
    predicted_ratio: f64,
    measured_ratio: f64,
    times: Vec<f64>,
    second_moment: Vec<f64>,
}

fn picard(k: usize, paths: usize, steps: usize, seed: u64) -> cyl_levy::Result<PicardTrace> {
    let mut problem = heat_problem(k.max(1));
    problem.grid_steps = steps.max(2);
    let r = picard_solve(
        &problem,
        &PicardInit::FreeEvolution,
        &McConfig::new(seed, paths.max(2)),
        &PicardOptions { max_iter: 60, tol: 1e-6 },
    )?;
    Ok(PicardTrace {
        distances: r.distances.iter().map(|d| d.value).collect(),
        predicted_ratio: r.contraction.predicted_ratio,
        measured_ratio: r.measured_ratio,
        second_moment: r.ensemble.moments(2.0)?.iter().map(|m| m.value).collect(),
        times: r.ensemble.grid,
    })
}

/// Picard iterate distances and `E‖X(t)‖²` for the heat demo on `k` modes.
#[wasm_bindgen]
pub fn picard_demo(k: u32, paths: u32, steps: u32, seed: u32) -> String {
    to_json(picard(k as usize, paths as usize, steps as usize, u64::from(seed)))
}
