//! Mild solutions of `dX = (AX + B(X))dt + G(X)dL` with a diagonal generator
//! `A = diag(-λ_k)`, by Picard iteration of the variation-of-constants map
//!
//! `K(X)(t) = S(t)X₀ + ∫₀ᵗ S(t-s)B(X(s))ds + ∫₀ᵗ S(t-s)G(X(s))dL(s)`
//!
//! on a time grid with left-endpoint sums, plus an exponential-Euler scheme
//! used as an independent reference.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integral::{drift_martingale_split, martingale_type_constant};
use crate::levy::{check_weak_p_condition, cyl_rp_norm, CylLevySpec};
use crate::mc::{map_paths, McConfig, MomentAccumulator, MomentEstimate, RngStream};
use crate::psumming::{composition_decay, pi_p_certified, semigroup_defect, CodomainNorm, DomainNorm, FiniteRankOperator, LowerSearch};
use crate::quadrature::integrate;

/// `S(t) = diag(e^{-λ_k t})`, with `‖S(t)‖ ≤ m e^{ωt}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SemigroupFile", into = "SemigroupFile")]
pub struct SemigroupSpec {
    eigenvalues: Vec<f64>,
    pub m: f64,
    pub omega: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum SemigroupFile {
    /// `λ_k = k²π²`, `k = 1..=k`.
    Heat { k: usize },
    Explicit { eigenvalues: Vec<f64> },
}

impl TryFrom<SemigroupFile> for SemigroupSpec {
    type Error = Error;

    fn try_from(f: SemigroupFile) -> Result<Self> {
        match f {
            SemigroupFile::Heat { k } => Ok(SemigroupSpec::heat(k)),
            SemigroupFile::Explicit { eigenvalues } => SemigroupSpec::new(eigenvalues),
        }
    }
}

impl From<SemigroupSpec> for SemigroupFile {
    fn from(s: SemigroupSpec) -> Self {
        SemigroupFile::Explicit {
            eigenvalues: s.eigenvalues,
        }
    }
}

impl SemigroupSpec {
    /// Requires `λ_k ≥ 0`, so the semigroup is contractive (`m = 1`, `ω = 0`).
    pub fn new(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::Config("semigroup needs at least one eigenvalue".into()));
        }
        if eigenvalues.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::Config("eigenvalues must be finite and nonnegative".into()));
        }
        Ok(Self {
            eigenvalues,
            m: 1.0,
            omega: 0.0,
        })
    }

    /// Dirichlet Laplacian on (0, 1) truncated to `k` modes.
    pub fn heat(k: usize) -> Self {
        Self {
            eigenvalues: (1..=k).map(|j| (j as f64 * std::f64::consts::PI).powi(2)).collect(),
            m: 1.0,
            omega: 0.0,
        }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Diagonal of `S(t)`.
    pub fn factors(&self, t: f64) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| (-l * t).exp()).collect()
    }
}

pub fn semigroup_apply(semi: &SemigroupSpec, t: f64, v: &[f64]) -> Result<DVector<f64>> {
    if !(t >= 0.0) {
        return Err(Error::Precondition(format!("semigroup time must be nonnegative, got {t}")));
    }
    if v.len() != semi.dim() {
        return Err(Error::DimensionMismatch {
            expected: semi.dim(),
            got: v.len(),
        });
    }
    Ok(DVector::from_iterator(v.len(), semi.factors(t).iter().zip(v).map(|(e, x)| e * x)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DriftMap {
    Zero,
    /// `B(x)_k = c_k x_k`.
    Linear { coeffs: Vec<f64> },
    /// `B(x)_k = c_k sin(x_k)`.
    SineDiag { coeffs: Vec<f64> },
    /// `B(x) = v`.
    Constant { value: Vec<f64> },
}

impl DriftMap {
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            DriftMap::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            DriftMap::Linear { coeffs } => {
                for ((o, c), v) in out.iter_mut().zip(coeffs).zip(x) {
                    *o = c * v;
                }
            }
            DriftMap::SineDiag { coeffs } => {
                for ((o, c), v) in out.iter_mut().zip(coeffs).zip(x) {
                    *o = c * v.sin();
                }
            }
            DriftMap::Constant { value } => out.copy_from_slice(value),
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            DriftMap::Zero => None,
            DriftMap::Linear { coeffs } | DriftMap::SineDiag { coeffs } => Some(coeffs.len()),
            DriftMap::Constant { value } => Some(value.len()),
        }
    }

    /// Dominating function for which both drift inequalities hold.
    pub fn natural_bound(&self) -> BoundFn {
        match self {
            DriftMap::Zero => BoundFn::Zero,
            DriftMap::Linear { coeffs } | DriftMap::SineDiag { coeffs } => BoundFn::Diag {
                weights: coeffs.clone(),
                norm: WeightNorm::Max,
                scale: 1.0,
            },
            DriftMap::Constant { value } => BoundFn::Diag {
                weights: value.clone(),
                norm: WeightNorm::L2,
                scale: 1.0,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalarFactor {
    /// `1 + sin‖x‖`, with values in `[0, 2]` and Lipschitz constant 1.
    OnePlusSinNorm,
}

impl ScalarFactor {
    fn eval(self, x: &[f64]) -> f64 {
        match self {
            ScalarFactor::OnePlusSinNorm => 1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt().sin(),
        }
    }

    fn sup(self) -> f64 {
        2.0
    }
}

/// Diffusion coefficient; every kind yields a diagonal operator on ℓ².
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DiffusionMap {
    Zero,
    /// `G(x) = diag(q)`.
    ConstantDiag { q: Vec<f64> },
    /// `G(x) = f(x)·diag(q)`.
    ScalarFactorDiag { factor: ScalarFactor, q: Vec<f64> },
    /// `G(x) = diag(q_k x_k)`.
    LinearDiag { q: Vec<f64> },
}

impl DiffusionMap {
    /// Diagonal of `G(x)`.
    pub fn eval_diag(&self, x: &[f64], out: &mut [f64]) {
        match self {
            DiffusionMap::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            DiffusionMap::ConstantDiag { q } => out.copy_from_slice(q),
            DiffusionMap::ScalarFactorDiag { factor, q } => {
                let f = factor.eval(x);
                for (o, qk) in out.iter_mut().zip(q) {
                    *o = f * qk;
                }
            }
            DiffusionMap::LinearDiag { q } => {
                for ((o, qk), v) in out.iter_mut().zip(q).zip(x) {
                    *o = qk * v;
                }
            }
        }
    }

    pub fn operator(&self, x: &[f64]) -> Result<FiniteRankOperator> {
        let mut d = vec![0.0; x.len()];
        self.eval_diag(x, &mut d);
        FiniteRankOperator::diagonal(&d, DomainNorm::L2, CodomainNorm::L2)
    }

    fn dim(&self) -> Option<usize> {
        match self {
            DiffusionMap::Zero => None,
            DiffusionMap::ConstantDiag { q } | DiffusionMap::ScalarFactorDiag { q, .. } | DiffusionMap::LinearDiag { q } => {
                Some(q.len())
            }
        }
    }

    /// Dominating function for which both diffusion inequalities hold.
    pub fn natural_bound(&self, p: f64) -> BoundFn {
        let pi_norm = if p == 2.0 { WeightNorm::L2 } else { WeightNorm::L1 };
        match self {
            DiffusionMap::Zero => BoundFn::Zero,
            DiffusionMap::ConstantDiag { q } => BoundFn::Diag {
                weights: q.clone(),
                norm: pi_norm,
                scale: 1.0,
            },
            DiffusionMap::ScalarFactorDiag { factor, q } => BoundFn::Diag {
                weights: q.clone(),
                norm: pi_norm,
                scale: factor.sup().max(1.0),
            },
            DiffusionMap::LinearDiag { q } => BoundFn::Diag {
                weights: q.clone(),
                // Σ|e^{-λt} q_k x_k| ≤ ‖e^{-λt} q‖₂‖x‖₂ below p = 2
                norm: if p == 2.0 { WeightNorm::Max } else { WeightNorm::L2 },
                scale: 1.0,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightNorm {
    L1,
    L2,
    Max,
}

/// Dominating function of time for the coefficient inequalities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BoundFn {
    /// Derived from the coefficient kind.
    Auto,
    Zero,
    Constant { value: f64 },
    /// `scale·‖(e^{-λ_k t} w_k)_k‖`.
    Diag { weights: Vec<f64>, norm: WeightNorm, scale: f64 },
}

impl BoundFn {
    pub fn eval(&self, semi: &SemigroupSpec, t: f64) -> f64 {
        match self {
            BoundFn::Auto => panic!("automatic bounds are resolved when the problem is built"),
            BoundFn::Zero => 0.0,
            BoundFn::Constant { value } => *value,
            BoundFn::Diag { weights, norm, scale } => {
                let it = semi.eigenvalues.iter().zip(weights).map(|(l, w)| ((-l * t).exp() * w).abs());
                scale
                    * match norm {
                        WeightNorm::L1 => it.sum(),
                        WeightNorm::L2 => it.map(|v| v * v).sum::<f64>().sqrt(),
                        WeightNorm::Max => it.fold(0.0, f64::max),
                    }
            }
        }
    }
}

/// Law of `X₀`, coordinatewise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialLaw {
    Deterministic { x: Vec<f64> },
    Gaussian { mean: Vec<f64>, sd: Vec<f64> },
    /// `x_k = mean_k ± a_k` with independent fair signs.
    TwoPoint { mean: Vec<f64>, a: Vec<f64> },
}

impl InitialLaw {
    fn dim(&self) -> usize {
        match self {
            InitialLaw::Deterministic { x } => x.len(),
            InitialLaw::Gaussian { mean, .. } | InitialLaw::TwoPoint { mean, .. } => mean.len(),
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> Vec<f64> {
        match self {
            InitialLaw::Deterministic { x } => x.clone(),
            InitialLaw::Gaussian { mean, sd } => mean
                .iter()
                .zip(sd)
                .map(|(m, s)| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + s * z
                })
                .collect(),
            InitialLaw::TwoPoint { mean, a } => mean
                .iter()
                .zip(a)
                .map(|(m, a)| if rng.random::<bool>() { m + a } else { m - a })
                .collect(),
        }
    }
}

/// Weight parameter of the Picard norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum BetaPolicy {
    /// Twice the smallest β with `2^{p-1}(C(β) + C'(β)) < 1`, searched up to `cap`.
    Auto { cap: f64 },
    Fixed { value: f64 },
}

impl Default for BetaPolicy {
    fn default() -> Self {
        BetaPolicy::Auto { cap: 1e6 }
    }
}

fn default_steps() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MildProblem {
    pub semigroup: SemigroupSpec,
    pub drift: DriftMap,
    pub diffusion: DiffusionMap,
    #[serde(default = "auto_bound")]
    pub b: BoundFn,
    #[serde(default = "auto_bound")]
    pub g: BoundFn,
    pub x0: InitialLaw,
    pub noise: CylLevySpec,
    pub horizon: f64,
    pub p: f64,
    #[serde(default = "default_steps")]
    pub grid_steps: usize,
    #[serde(default)]
    pub beta: BetaPolicy,
}

fn auto_bound() -> BoundFn {
    BoundFn::Auto
}

impl MildProblem {
    /// Checks dimensions and resolves automatic bounds.
    pub fn validated(mut self) -> Result<Self> {
        let k = self.semigroup.dim();
        let dims = [
            self.drift.dim(),
            self.diffusion.dim(),
            Some(self.x0.dim()),
            Some(self.noise.dim()),
        ];
        if let Some(bad) = dims.iter().flatten().find(|d| **d != k) {
            return Err(Error::DimensionMismatch { expected: k, got: *bad });
        }
        if !(1.0..=2.0).contains(&self.p) {
            return Err(Error::Config(format!("p must lie in [1, 2], got {}", self.p)));
        }
        if !(self.horizon > 0.0) || self.grid_steps == 0 {
            return Err(Error::Config("horizon and grid size must be positive".into()));
        }
        self.noise.validate()?;
        if self.b == BoundFn::Auto {
            self.b = self.drift.natural_bound();
        }
        if self.g == BoundFn::Auto {
            self.g = self.diffusion.natural_bound(self.p);
        }
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.semigroup.dim()
    }

    pub fn grid(&self) -> Vec<f64> {
        uniform_grid(self.horizon, self.grid_steps)
    }

    /// The same problem on a grid with `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            grid_steps: self.grid_steps * factor,
            ..self.clone()
        }
    }
}

pub fn uniform_grid(horizon: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|j| horizon * j as f64 / steps as f64).collect()
}

/// Stochastic heat equation on (0, 1) with 32 modes: sine drift, diffusion
/// `(1 + sin‖x‖)·diag(1/k)` and compound Poisson modes of rate 2 with ±1 jumps.
pub fn heat_demo() -> MildProblem {
    heat_problem(32)
}

/// The demo problem truncated to `k` modes.
pub fn heat_problem(k: usize) -> MildProblem {
    MildProblem {
        semigroup: SemigroupSpec::heat(k),
        drift: DriftMap::SineDiag { coeffs: vec![-1.0; k] },
        diffusion: DiffusionMap::ScalarFactorDiag {
            factor: ScalarFactor::OnePlusSinNorm,
            q: (1..=k).map(|j| 1.0 / j as f64).collect(),
        },
        b: BoundFn::Auto,
        g: BoundFn::Auto,
        x0: InitialLaw::Deterministic {
            x: (1..=k).map(|j| 1.0 / j as f64).collect(),
        },
        noise: CylLevySpec::diagonal(
            (0..k)
                .map(|_| crate::levy::OneDimLevySpec::CompoundPoisson {
                    rate: 2.0,
                    jumps: crate::levy::JumpLaw::TwoPoint { a: 1.0 },
                })
                .collect(),
        ),
        horizon: 1.0,
        p: 2.0,
        grid_steps: 64,
        beta: BetaPolicy::default(),
    }
    .validated()
    .expect("demo problem is well formed")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckReport {
    pub drift_growth: f64,
    pub drift_lipschitz: f64,
    pub diffusion_growth: f64,
    pub diffusion_lipschitz: f64,
    pub max_ratio: f64,
    pub samples: usize,
}

const BOUND_TOL: f64 = 1e-9;

/// Samples the four coefficient inequalities
/// `‖S(t)B(x)‖ ≤ b(t)(1+‖x‖)`, `‖S(t)(B(x)-B(y))‖ ≤ b(t)‖x-y‖`,
/// `π_p(S(t)G(x)) ≤ g(t)(1+‖x‖)`, `π_p(S(t)(G(x)-G(y))) ≤ g(t)‖x-y‖`.
pub fn bound_functions_check(problem: &MildProblem, n_samples: usize, t_grid: &[f64], stream: &mut RngStream) -> Result<BoundCheckReport> {
    let k = problem.dim();
    let p = problem.p;
    let ratio = |lhs: f64, rhs: f64| -> f64 {
        if lhs <= 0.0 {
            0.0
        } else if rhs <= 0.0 {
            f64::INFINITY
        } else {
            lhs / rhs
        }
    };
    let mut r = BoundCheckReport {
        drift_growth: 0.0,
        drift_lipschitz: 0.0,
        diffusion_growth: 0.0,
        diffusion_lipschitz: 0.0,
        max_ratio: 0.0,
        samples: 0,
    };
    let radii = [0.0, 0.1, 1.0, 10.0];
    let draw = |rng: &mut RngStream, radius: f64| -> Vec<f64> {
        (0..k)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                radius * z / (k as f64).sqrt()
            })
            .collect()
    };
    let mut bx = vec![0.0; k];
    let mut by = vec![0.0; k];
    for i in 0..n_samples {
        let radius = radii[i % radii.len()];
        let x = draw(stream, radius);
        let y = draw(stream, radius.max(0.1));
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dxy = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        problem.drift.eval(&x, &mut bx);
        problem.drift.eval(&y, &mut by);
        let gx = problem.diffusion.operator(&x)?;
        let gy = problem.diffusion.operator(&y)?;
        let gdiff = gx.add(&gy.scale(-1.0))?;
        for &t in t_grid {
            let s = problem.semigroup.factors(t);
            let b_t = problem.b.eval(&problem.semigroup, t);
            let g_t = problem.g.eval(&problem.semigroup, t);
            let sb: f64 = s.iter().zip(&bx).map(|(e, v)| (e * v).powi(2)).sum::<f64>().sqrt();
            let sdb: f64 = s.iter().zip(bx.iter().zip(&by)).map(|(e, (a, b))| (e * (a - b)).powi(2)).sum::<f64>().sqrt();
            let st = FiniteRankOperator::diagonal(&s, DomainNorm::L2, CodomainNorm::L2)?;
            let sg = pi_p_certified(&crate::psumming::compose(&st, &gx)?, p)?;
            let sdg = pi_p_certified(&crate::psumming::compose(&st, &gdiff)?, p)?;
            r.drift_growth = r.drift_growth.max(ratio(sb, b_t * (1.0 + nx)));
            r.drift_lipschitz = r.drift_lipschitz.max(ratio(sdb, b_t * dxy));
            r.diffusion_growth = r.diffusion_growth.max(ratio(sg, g_t * (1.0 + nx)));
            r.diffusion_lipschitz = r.diffusion_lipschitz.max(ratio(sdg, g_t * dxy));
            r.samples += 1;
        }
    }
    let named = [
        ("‖S(t)B(x)‖ ≤ b(t)(1+‖x‖)", r.drift_growth),
        ("‖S(t)(B(x)-B(y))‖ ≤ b(t)‖x-y‖", r.drift_lipschitz),
        ("π_p(S(t)G(x)) ≤ g(t)(1+‖x‖)", r.diffusion_growth),
        ("π_p(S(t)(G(x)-G(y))) ≤ g(t)‖x-y‖", r.diffusion_lipschitz),
    ];
    r.max_ratio = named.iter().map(|n| n.1).fold(0.0, f64::max);
    if let Some((name, ratio)) = named.iter().find(|n| n.1 > 1.0 + BOUND_TOL) {
        return Err(Error::AssumptionFailure {
            inequality: (*name).into(),
            ratio: *ratio,
        });
    }
    Ok(r)
}

/// Constant `c` of `E‖∫Φ dL‖^p ≤ c·E∫π_p(Φ)^p ds` for the problem's noise:
/// `C_p‖M‖_{R_p}^p` for centered noise, `2^{p-1}(T^{p-1}‖b‖^p + C_p‖M‖_{R_p}^p)` otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConstant {
    pub c: f64,
    pub empirical: bool,
}

pub fn noise_constant(problem: &MildProblem, mc: &McConfig) -> Result<NoiseConstant> {
    let p = problem.p;
    let report = check_weak_p_condition(&problem.noise, p)?;
    if !report.admits_integration() {
        return Err(Error::Precondition("noise fails the weak moment condition".into()));
    }
    let split = drift_martingale_split(&problem.noise)?;
    let c_p = martingale_type_constant(p, CodomainNorm::L2)?;
    let rp = cyl_rp_norm(&split.martingale, p, problem.horizon, crate::levy::DualBall::L2, mc)?;
    let mart = c_p * rp.value.powf(p);
    let b = split.drift.iter().map(|v| v * v).sum::<f64>().sqrt();
    let c = if b == 0.0 {
        mart
    } else {
        2f64.powf(p - 1.0) * (problem.horizon.powf(p - 1.0) * b.powf(p) + mart)
    };
    Ok(NoiseConstant { c, empirical: rp.empirical })
}

/// `(C(β), C'(β))` with `C(β) = (∫₀ᵀ b)^{p-1} ∫₀ᵀ b(s)e^{-βs}ds` and
/// `C'(β) = c ∫₀ᵀ e^{-βs} g(s)^p ds`.
pub fn contraction_constants(problem: &MildProblem, beta: f64, c: f64) -> Result<(f64, f64)> {
    if !(beta >= 0.0) {
        return Err(Error::Precondition(format!("β must be nonnegative, got {beta}")));
    }
    if matches!(problem.b, BoundFn::Auto) || matches!(problem.g, BoundFn::Auto) {
        return Err(Error::Precondition("resolve bounds with MildProblem::validated first".into()));
    }
    let semi = &problem.semigroup;
    let t = problem.horizon;
    let p = problem.p;
    let rel = 1e-8;
    let b_int = integrate(|s| problem.b.eval(semi, s), 0.0, t, rel, 0.0);
    let b_weighted = integrate(|s| problem.b.eval(semi, s) * (-beta * s).exp(), 0.0, t, rel, 0.0);
    let g_weighted = integrate(|s| (-beta * s).exp() * problem.g.eval(semi, s).powf(p), 0.0, t, rel, 0.0);
    Ok((b_int.powf(p - 1.0) * b_weighted, c * g_weighted))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contraction {
    pub beta: f64,
    /// Smallest β on the search resolution with `value < 1`.
    pub beta_min: f64,
    pub c: f64,
    pub c_empirical: bool,
    pub big_c: f64,
    pub big_c_prime: f64,
    /// `2^{p-1}(C(β) + C'(β))`.
    pub value: f64,
    /// `value^{1/p}`, the predicted contraction factor of distances.
    pub predicted_ratio: f64,
}

/// Resolves β and the contraction constants for a problem.
pub fn contraction_setup(problem: &MildProblem, c: NoiseConstant) -> Result<Contraction> {
    let p = problem.p;
    let scale = 2f64.powf(p - 1.0);
    let value = |beta: f64| -> Result<(f64, f64, f64)> {
        let (a, b) = contraction_constants(problem, beta, c.c)?;
        Ok((scale * (a + b), a, b))
    };
    let (beta_min, beta) = match problem.beta {
        BetaPolicy::Fixed { value } => (value, value),
        BetaPolicy::Auto { cap } => {
            let v0 = value(0.0)?.0;
            if v0 < 1.0 {
                (0.0, 0.0)
            } else {
                let vcap = value(cap)?.0;
                if vcap >= 1.0 {
                    return Err(Error::NoContraction { cap, value: vcap });
                }
                let (mut lo, mut hi) = (0.0, cap);
                while hi - lo > 1e-6 * hi.max(1.0) {
                    let mid = 0.5 * (lo + hi);
                    if value(mid)?.0 < 1.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                (hi, 2.0 * hi)
            }
        }
    };
    let (v, a, b) = value(beta)?;
    Ok(Contraction {
        beta,
        beta_min,
        c: c.c,
        c_empirical: c.empirical,
        big_c: a,
        big_c_prime: b,
        value: v,
        predicted_ratio: v.powf(1.0 / p),
    })
}

/// Sampled trajectories on a common grid, path-major with `K` entries per time.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub grid: Vec<f64>,
    pub dim: usize,
    pub seed: u64,
    pub paths: Vec<Vec<f64>>,
}

impl Ensemble {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn state(&self, path: usize, j: usize) -> &[f64] {
        &self.paths[path][j * self.dim..(j + 1) * self.dim]
    }

    /// `E‖X(t_j)‖^p` for every grid time.
    pub fn moments(&self, p: f64) -> Result<Vec<MomentEstimate>> {
        (0..self.grid.len())
            .map(|j| {
                self.paths
                    .iter()
                    .enumerate()
                    .map(|(i, _)| norm2(self.state(i, j)).powf(p))
                    .collect::<MomentAccumulator>()
                    .finish(p)
            })
            .collect()
    }

    /// `E[X_k(t_j)]` and its standard error.
    pub fn coordinate_mean(&self, j: usize, k: usize) -> (f64, f64) {
        let n = self.n_paths() as f64;
        let xs: Vec<f64> = (0..self.n_paths()).map(|i| self.state(i, j)[k]).collect();
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        (m, (v / n).sqrt())
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            paths: self.paths.iter().map(|p| p.iter().map(|v| v * alpha).collect()).collect(),
            ..self.clone()
        }
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖A - B‖_{T,β} = (sup_t e^{-βt} E‖A(t) - B(t)‖^p)^{1/p}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedNorm {
    pub value: f64,
    pub standard_error: f64,
    pub argmax_t: f64,
}

pub fn weighted_norm(a: &Ensemble, b: Option<&Ensemble>, beta: f64, p: f64) -> Result<WeightedNorm> {
    if let Some(b) = b {
        if a.grid != b.grid || a.dim != b.dim || a.n_paths() != b.n_paths() {
            return Err(Error::Precondition("ensembles must share grid, dimension and path count".into()));
        }
    }
    if a.n_paths() == 0 {
        return Err(Error::EmptyInput);
    }
    let mut best: Option<(f64, MomentEstimate, f64)> = None;
    for (j, &t) in a.grid.iter().enumerate() {
        let m = (0..a.n_paths())
            .map(|i| {
                let x = a.state(i, j);
                match b {
                    Some(b) => x.iter().zip(b.state(i, j)).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt(),
                    None => norm2(x),
                }
                .powf(p)
            })
            .collect::<MomentAccumulator>()
            .finish(p)?;
        let w = (-beta * t).exp();
        if best.as_ref().is_none_or(|b| w * m.value > b.0) {
            best = Some((w * m.value, m.scaled(w), t));
        }
    }
    let (_, m, t) = best.expect("grid nonempty");
    let (value, standard_error) = m.root();
    Ok(WeightedNorm {
        value,
        standard_error,
        argmax_t: t,
    })
}

/// Increments `ΔL_j` over the grid cells, drawn in order from `stream`.
pub fn draw_increments(noise: &CylLevySpec, grid: &[f64], stream: &mut RngStream) -> Vec<f64> {
    let k = noise.dim();
    let mut out = vec![0.0; (grid.len() - 1) * k];
    for (j, w) in grid.windows(2).enumerate() {
        noise.add_increment(w[1] - w[0], stream, &mut out[j * k..(j + 1) * k]);
    }
    out
}

/// `e^{-λ_k (t_j - t_i)}` for `i < j`, row-major in `(j, i, k)`.
struct DecayTable {
    n: usize,
    k: usize,
    data: Vec<f64>,
}

impl DecayTable {
    fn new(semi: &SemigroupSpec, grid: &[f64]) -> Self {
        let n = grid.len();
        let k = semi.dim();
        let mut data = vec![0.0; n * n * k];
        for j in 0..n {
            for i in 0..=j {
                let f = semi.factors(grid[j] - grid[i]);
                data[(j * n + i) * k..(j * n + i + 1) * k].copy_from_slice(&f);
            }
        }
        Self { n, k, data }
    }

    fn get(&self, j: usize, i: usize) -> &[f64] {
        &self.data[(j * self.n + i) * self.k..(j * self.n + i + 1) * self.k]
    }
}

/// `K₁(X)` and `K₂(X)` along one path: left-endpoint sums
/// `Σ_{s_i < t} S(t - s_i)B(X(s_i))Δs_i` and `Σ_{s_i < t} S(t - s_i)G(X(s_i))ΔL_i`.
pub fn stochastic_convolution(problem: &MildProblem, x_path: &[f64], grid: &[f64], increments: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = problem.dim();
    if x_path.len() != grid.len() * k || increments.len() != (grid.len() - 1) * k {
        return Err(Error::Precondition("path, grid and increments do not match".into()));
    }
    let table = DecayTable::new(&problem.semigroup, grid);
    Ok(convolutions(problem, x_path, grid, increments, &table))
}

fn convolutions(problem: &MildProblem, x: &[f64], grid: &[f64], dl: &[f64], table: &DecayTable) -> (Vec<f64>, Vec<f64>) {
    let k = problem.dim();
    let n = grid.len();
    let mut drift_terms = vec![0.0; (n - 1) * k];
    let mut noise_terms = vec![0.0; (n - 1) * k];
    let mut gd = vec![0.0; k];
    for i in 0..n - 1 {
        let xi = &x[i * k..(i + 1) * k];
        let dt = grid[i + 1] - grid[i];
        let d = &mut drift_terms[i * k..(i + 1) * k];
        problem.drift.eval(xi, d);
        d.iter_mut().for_each(|v| *v *= dt);
        problem.diffusion.eval_diag(xi, &mut gd);
        for ((o, g), l) in noise_terms[i * k..(i + 1) * k].iter_mut().zip(&gd).zip(&dl[i * k..(i + 1) * k]) {
            *o = g * l;
        }
    }
    let mut k1 = vec![0.0; n * k];
    let mut k2 = vec![0.0; n * k];
    for j in 1..n {
        for i in 0..j {
            let e = table.get(j, i);
            for c in 0..k {
                k1[j * k + c] += e[c] * drift_terms[i * k + c];
                k2[j * k + c] += e[c] * noise_terms[i * k + c];
            }
        }
    }
    (k1, k2)
}

/// Starting iterate of the Picard scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PicardInit {
    /// `X⁰(t) = S(t)X₀`.
    FreeEvolution,
    Zero,
    Constant { x: Vec<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardOptions {
    pub max_iter: usize,
    /// Target distance to the fixed point; iteration stops once
    /// `d_n·r/(1-r) ≤ tol` with `r` the predicted contraction factor.
    pub tol: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { max_iter: 40, tol: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PicardResult {
    pub ensemble: Ensemble,
    /// `d_n = ‖X^{n+1} - X^n‖_{T,β}`.
    pub distances: Vec<WeightedNorm>,
    /// `d_{n+1}/d_n` while `d_{n+1} > tol`.
    pub ratios: Vec<f64>,
    pub measured_ratio: f64,
    pub contraction: Contraction,
    pub converged: bool,
    pub iterations: usize,
    /// Each `d_{n+1} ≤ r·d_n + 3·SE` with `r` the predicted ratio.
    pub geometric_decay_holds: bool,
}

const X0_SALT: u64 = 0x0005_eed0;

fn initial_states(problem: &MildProblem, mc: &McConfig) -> Vec<Vec<f64>> {
    let sub = mc.derive(X0_SALT);
    (0..mc.n_paths).map(|i| problem.x0.sample(&mut sub.stream(i))).collect()
}

fn picard_map(problem: &MildProblem, x: &[f64], x0: &[f64], grid: &[f64], dl: &[f64], table: &DecayTable) -> Vec<f64> {
    let k = problem.dim();
    let (k1, k2) = convolutions(problem, x, grid, dl, table);
    let mut out = vec![0.0; grid.len() * k];
    for (j, &t) in grid.iter().enumerate() {
        let s = problem.semigroup.factors(t);
        for c in 0..k {
            out[j * k + c] = s[c] * x0[c] + k1[j * k + c] + k2[j * k + c];
        }
    }
    out
}

/// Picard iteration `X^{n+1} = K(X^n)` with the same noise increments in every iteration.
pub fn picard_solve(problem: &MildProblem, init: &PicardInit, mc: &McConfig, options: &PicardOptions) -> Result<PicardResult> {
    let c = noise_constant(problem, &mc.derive(0xc0))?;
    let contraction = contraction_setup(problem, c)?;
    picard_solve_with(problem, init, mc, options, contraction)
}

pub fn picard_solve_with(
    problem: &MildProblem,
    init: &PicardInit,
    mc: &McConfig,
    options: &PicardOptions,
    contraction: Contraction,
) -> Result<PicardResult> {
    if mc.n_paths == 0 {
        return Err(Error::EmptyInput);
    }
    let k = problem.dim();
    let grid = problem.grid();
    let table = DecayTable::new(&problem.semigroup, &grid);
    let x0s = initial_states(problem, mc);
    let start: Vec<Vec<f64>> = x0s
        .iter()
        .map(|x0| {
            grid.iter()
                .flat_map(|&t| match init {
                    PicardInit::FreeEvolution => problem.semigroup.factors(t).iter().zip(x0).map(|(e, v)| e * v).collect::<Vec<_>>(),
                    PicardInit::Zero => vec![0.0; k],
                    PicardInit::Constant { x } => x.clone(),
                })
                .collect()
        })
        .collect();
    let mut current = Ensemble {
        grid: grid.clone(),
        dim: k,
        seed: mc.seed,
        paths: start,
    };
    let beta = contraction.beta;
    let p = problem.p;
    let mut distances: Vec<WeightedNorm> = Vec::new();
    let mut converged = false;
    let mut increases = 0;
    for _ in 0..options.max_iter {
        let paths = map_paths(mc.n_paths, |i| {
            let dl = draw_increments(&problem.noise, &grid, &mut mc.stream(i));
            picard_map(problem, &current.paths[i], &x0s[i], &grid, &dl, &table)
        });
        let next = Ensemble {
            paths,
            ..current.clone()
        };
        let d = weighted_norm(&next, Some(&current), beta, p)?;
        if let Some(prev) = distances.last() {
            if d.value > prev.value {
                increases += 1;
                if increases >= 3 {
                    return Err(Error::Divergence {
                        ratio: d.value / prev.value,
                    });
                }
            } else {
                increases = 0;
            }
        }
        distances.push(d);
        current = next;
        let r = contraction.predicted_ratio;
        let remaining = if r < 1.0 { d.value * r / (1.0 - r) } else { d.value };
        if d.value == 0.0 || remaining <= options.tol {
            converged = true;
            break;
        }
    }
    let ratios: Vec<f64> = distances
        .windows(2)
        .filter(|w| w[1].value > options.tol && w[0].value > 0.0)
        .map(|w| w[1].value / w[0].value)
        .collect();
    let measured_ratio = ratios.iter().copied().fold(0.0, f64::max);
    let geometric_decay_holds = distances.windows(2).all(|w| {
        w[1].value <= contraction.predicted_ratio * w[0].value + 3.0 * w[1].standard_error.hypot(w[0].standard_error)
    });
    Ok(PicardResult {
        iterations: distances.len(),
        ensemble: current,
        distances,
        ratios,
        measured_ratio,
        contraction,
        converged,
        geometric_decay_holds,
    })
}

/// One more application of the Picard map to a converged ensemble.
pub fn apply_picard_map(problem: &MildProblem, ensemble: &Ensemble, mc: &McConfig) -> Ensemble {
    let grid = &ensemble.grid;
    let table = DecayTable::new(&problem.semigroup, grid);
    let x0s = initial_states(problem, mc);
    let paths = map_paths(ensemble.n_paths(), |i| {
        let dl = draw_increments(&problem.noise, grid, &mut mc.stream(i));
        picard_map(problem, &ensemble.paths[i], &x0s[i], grid, &dl, &table)
    });
    Ensemble {
        paths,
        ..ensemble.clone()
    }
}

/// `X_{j+1} = S(Δ)(X_j + B(X_j)Δ + G(X_j)ΔL_j)` along one path.
pub fn exp_euler_path(problem: &MildProblem, x0: &[f64], grid: &[f64], stream: &mut RngStream) -> Vec<f64> {
    let k = problem.dim();
    let mut out = Vec::with_capacity(grid.len() * k);
    out.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let mut b = vec![0.0; k];
    let mut g = vec![0.0; k];
    let mut dl = vec![0.0; k];
    for w in grid.windows(2) {
        let dt = w[1] - w[0];
        problem.drift.eval(&x, &mut b);
        problem.diffusion.eval_diag(&x, &mut g);
        dl.iter_mut().for_each(|v| *v = 0.0);
        problem.noise.add_increment(dt, stream, &mut dl);
        let s = problem.semigroup.factors(dt);
        for c in 0..k {
            x[c] = s[c] * (x[c] + b[c] * dt + g[c] * dl[c]);
        }
        out.extend_from_slice(&x);
    }
    out
}

/// Ensemble of exponential-Euler paths.
pub fn exp_euler_solve(problem: &MildProblem, mc: &McConfig) -> Ensemble {
    let grid = problem.grid();
    let x0s = initial_states(problem, mc);
    let paths = map_paths(mc.n_paths, |i| exp_euler_path(problem, &x0s[i], &grid, &mut mc.stream(i)));
    Ensemble {
        grid,
        dim: problem.dim(),
        seed: mc.seed,
        paths,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuityRow {
    pub eps: f64,
    /// `E‖X(t+ε) - X(t)‖^p`.
    pub moment: MomentEstimate,
    /// `c·E Σ_{s_i<t} π_p((Id - S(ε))S(t - s_i)G(X(s_i)))^p Δs_i` over sampled paths.
    pub semigroup_term: f64,
}

/// Increments of the solution over `ε = steps·Δ` after grid time `t_j`.
pub fn stochastic_continuity_probe(
    problem: &MildProblem,
    ensemble: &Ensemble,
    j: usize,
    eps_steps: &[usize],
    c: f64,
    operator_paths: usize,
) -> Result<Vec<ContinuityRow>> {
    let n = ensemble.grid.len();
    if j >= n || eps_steps.iter().any(|s| j + s >= n) {
        return Err(Error::Precondition("probe window leaves the grid".into()));
    }
    let p = problem.p;
    let t = ensemble.grid[j];
    let eps_list: Vec<f64> = eps_steps.iter().map(|s| ensemble.grid[j + s] - t).collect();
    let family: Vec<(f64, FiniteRankOperator)> = eps_list
        .iter()
        .map(|e| Ok((*e, semigroup_defect(problem.semigroup.eigenvalues(), *e)?)))
        .collect::<Result<_>>()?;
    let search = LowerSearch {
        random_families: 0,
        ..LowerSearch::default()
    };
    let m = operator_paths.min(ensemble.n_paths());
    let mut term = vec![0.0; eps_list.len()];
    for path in 0..m {
        for i in 0..j {
            let s = problem.semigroup.factors(t - ensemble.grid[i]);
            let mut g = vec![0.0; problem.dim()];
            problem.diffusion.eval_diag(ensemble.state(path, i), &mut g);
            let d: Vec<f64> = s.iter().zip(&g).map(|(a, b)| a * b).collect();
            let psi = FiniteRankOperator::diagonal(&d, DomainNorm::L2, CodomainNorm::L2)?;
            let table = composition_decay(&psi, &family, p, 1.0, &search)?;
            let ds = ensemble.grid[i + 1] - ensemble.grid[i];
            for (acc, row) in term.iter_mut().zip(&table.rows) {
                *acc += c * ds * row.value.powf(p) / m as f64;
            }
        }
    }
    eps_steps
        .iter()
        .zip(eps_list)
        .zip(term)
        .map(|((s, eps), semigroup_term)| {
            let moment = (0..ensemble.n_paths())
                .map(|i| {
                    ensemble
                        .state(i, j + s)
                        .iter()
                        .zip(ensemble.state(i, j))
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt()
                        .powf(p)
                })
                .collect::<MomentAccumulator>()
                .finish(p)?;
            Ok(ContinuityRow {
                eps,
                moment,
                semigroup_term,
            })
        })
        .collect()
}

/// `E X(t)²` for `dX = -λX dt + σ dℓ` with `X₀ = x0` and `Var ℓ(1) = v`.
pub fn ou_second_moment(lambda: f64, sigma: f64, v: f64, x0: f64, t: f64) -> f64 {
    (-2.0 * lambda * t).exp() * x0 * x0 + sigma * sigma * v * (-(-2.0 * lambda * t).exp_m1()) / (2.0 * lambda)
}

/// Dense `S(t)` as a matrix, for callers that need an explicit operator.
pub fn semigroup_matrix(semi: &SemigroupSpec, t: f64) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_vec(semi.factors(t)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::{JumpLaw, OneDimLevySpec};
    use proptest::prelude::*;

    fn cp(rate: f64) -> OneDimLevySpec {
        OneDimLevySpec::CompoundPoisson {
            rate,
            jumps: JumpLaw::TwoPoint { a: 1.0 },
        }
    }

    fn problem(eigs: Vec<f64>, drift: DriftMap, diffusion: DiffusionMap, x0: Vec<f64>, rate: f64) -> MildProblem {
        let k = eigs.len();
        MildProblem {
            semigroup: SemigroupSpec::new(eigs).unwrap(),
            drift,
            diffusion,
            b: BoundFn::Auto,
            g: BoundFn::Auto,
            x0: InitialLaw::Deterministic { x: x0 },
            noise: CylLevySpec::diagonal(vec![cp(rate); k]),
            horizon: 1.0,
            p: 2.0,
            grid_steps: 32,
            beta: BetaPolicy::default(),
        }
        .validated()
        .unwrap()
    }

    #[test]
    fn semigroup_examples() {
        let s = SemigroupSpec::new(vec![1.0, 4.0]).unwrap();
        assert_eq!(semigroup_apply(&s, 0.0, &[3.0, -2.0]).unwrap().as_slice(), &[3.0, -2.0]);
        let v = semigroup_apply(&s, std::f64::consts::LN_2, &[1.0, 1.0]).unwrap();
        assert!((v[0] - 0.5).abs() < 1e-15 && (v[1] - 1.0 / 16.0).abs() < 1e-15);
        assert!(semigroup_apply(&s, -1.0, &[1.0, 1.0]).is_err());
        assert!(SemigroupSpec::new(vec![-1.0]).is_err());
    }

    proptest! {
        #[test]
        fn semigroup_law(t in 0.0f64..2.0, s in 0.0f64..2.0, v in proptest::collection::vec(-5.0f64..5.0, 6)) {
            let semi = SemigroupSpec::new(vec![0.0, 0.5, 1.0, 3.0, 9.0, 20.0]).unwrap();
            let a = semigroup_apply(&semi, t, semigroup_apply(&semi, s, &v).unwrap().as_slice()).unwrap();
            let b = semigroup_apply(&semi, t + s, &v).unwrap();
            prop_assert!((a - &b).amax() <= 1e-12);
            prop_assert!(b.norm() <= DVector::from_vec(v.clone()).norm() * (1.0 + 1e-15));
        }
    }

    #[test]
    fn constant_diffusion_bound_is_attained() {
        let k = 8;
        let p = problem(
            SemigroupSpec::heat(k).eigenvalues().to_vec(),
            DriftMap::Zero,
            DiffusionMap::ConstantDiag {
                q: (1..=k).map(|j| 1.0 / j as f64).collect(),
            },
            vec![0.0; k],
            1.0,
        );
        let r = bound_functions_check(&p, 40, &[0.0, 0.01, 0.1, 1.0], &mut RngStream::new(0, 0)).unwrap();
        assert!((r.diffusion_growth - 1.0).abs() < 1e-12);
        assert_eq!(r.drift_growth, 0.0);
    }

    #[test]
    fn scalar_factor_diffusion_passes() {
        let p = heat_demo();
        let r = bound_functions_check(&p, 60, &[0.0, 0.001, 0.05, 0.5], &mut RngStream::new(1, 0)).unwrap();
        assert!(r.max_ratio <= 1.0 + 1e-9);
    }

    #[test]
    fn undersized_bound_is_reported() {
        let mut p = heat_demo();
        if let BoundFn::Diag { scale, .. } = &mut p.g {
            *scale = 0.5;
        }
        let e = bound_functions_check(&p, 20, &[0.0, 0.1], &mut RngStream::new(2, 0)).unwrap_err();
        assert!(matches!(e, Error::AssumptionFailure { .. }));
    }

    #[test]
    fn drift_constant_closed_form() {
        let mut p = problem(vec![0.0], DriftMap::Zero, DiffusionMap::Zero, vec![0.0], 1.0);
        p.b = BoundFn::Constant { value: 1.0 };
        let (c0, g0) = contraction_constants(&p, 0.0, 1.0).unwrap();
        assert!((c0 - 1.0).abs() < 1e-12);
        assert_eq!(g0, 0.0);
        let beta = 100f64.ln();
        let (c1, _) = contraction_constants(&p, beta, 1.0).unwrap();
        assert!((c1 - 0.99 / beta).abs() < 1e-10);
    }

    #[test]
    fn constants_decrease_in_beta() {
        let p = heat_demo();
        let mut prev = (f64::INFINITY, f64::INFINITY);
        for beta in [0.0, 1.0, 10.0, 100.0, 1000.0, 1e5] {
            let (a, b) = contraction_constants(&p, beta, 2.0).unwrap();
            assert!(a < prev.0 && b < prev.1);
            prev = (a, b);
        }
        assert!(prev.0 < 1e-4 && prev.1 < 1e-2);
    }

    #[test]
    fn heat_demo_contracts_at_zero_beta() {
        let p = heat_demo();
        let c = noise_constant(&p, &McConfig::new(0, 10)).unwrap();
        assert!((c.c - 2.0).abs() < 1e-12 && !c.empirical);
        let ctr = contraction_setup(&p, c).unwrap();
        assert_eq!(ctr.beta, 0.0);
        assert!(ctr.value < 1.0 && ctr.value > 0.8, "{ctr:?}");
    }

    #[test]
    fn beta_search_finds_threshold() {
        let mut p = problem(vec![0.0; 2], DriftMap::Zero, DiffusionMap::ConstantDiag { q: vec![2.0, 2.0] }, vec![0.0; 2], 1.0);
        p.horizon = 2.0;
        let ctr = contraction_setup(&p, NoiseConstant { c: 1.0, empirical: false }).unwrap();
        assert!(ctr.beta_min > 0.0);
        assert_eq!(ctr.beta, 2.0 * ctr.beta_min);
        let (a, b) = contraction_constants(&p, ctr.beta_min, 1.0).unwrap();
        assert!(2.0 * (a + b) < 1.0);
        let (a, b) = contraction_constants(&p, ctr.beta_min * 0.99, 1.0).unwrap();
        assert!(2.0 * (a + b) >= 1.0 - 1e-3);
    }

    #[test]
    fn convolution_trivial_cases() {
        let p = problem(vec![0.0; 2], DriftMap::Zero, DiffusionMap::Zero, vec![0.0; 2], 1.0);
        let grid = uniform_grid(1.0, 4);
        let dl = draw_increments(&p.noise, &grid, &mut RngStream::new(0, 0));
        let x = vec![0.3; grid.len() * 2];
        let (_, k2) = stochastic_convolution(&p, &x, &grid, &dl).unwrap();
        assert!(k2.iter().all(|v| *v == 0.0));
        let id = problem(vec![0.0; 2], DriftMap::Zero, DiffusionMap::ConstantDiag { q: vec![1.0; 2] }, vec![0.0; 2], 1.0);
        let grid = vec![0.0, 1.0];
        let dl = draw_increments(&id.noise, &grid, &mut RngStream::new(0, 1));
        let (_, k2) = stochastic_convolution(&id, &[0.0; 4], &grid, &dl).unwrap();
        assert_eq!(&k2[2..], &dl[..]);
    }

    #[test]
    fn convolution_second_moment_matches_weights() {
        let eigs = vec![1.0, 4.0, 9.0];
        let q = vec![1.0, 0.5, 2.0];
        let rates = [1.0, 2.0, 0.5];
        let mut p = problem(eigs.clone(), DriftMap::Zero, DiffusionMap::ConstantDiag { q: q.clone() }, vec![0.0; 3], 1.0);
        p.noise = CylLevySpec::diagonal(rates.iter().map(|r| cp(*r)).collect());
        let grid = uniform_grid(1.0, 16);
        let x = vec![0.0; grid.len() * 3];
        let n = 40_000;
        let j = 16;
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let dl = draw_increments(&p.noise, &grid, &mut RngStream::new(9, i));
                let (_, k2) = stochastic_convolution(&p, &x, &grid, &dl).unwrap();
                k2[j * 3..(j + 1) * 3].iter().map(|v| v * v).sum::<f64>()
            })
            .collect();
        let m = crate::mc::estimate_p_moment(&vals, 1.0).unwrap();
        let mut exact = 0.0;
        for i in 0..j {
            for c in 0..3 {
                exact += (-2.0 * eigs[c] * (grid[j] - grid[i])).exp() * q[c] * q[c] * rates[c] * (grid[i + 1] - grid[i]);
            }
        }
        assert!((m.value - exact).abs() < 3.0 * m.standard_error, "{} vs {exact}", m.value);
    }

    #[test]
    fn deterministic_problem_is_free_evolution() {
        let x0 = vec![1.0, -2.0, 0.5];
        let p = problem(vec![1.0, 2.0, 3.0], DriftMap::Zero, DiffusionMap::Zero, x0.clone(), 1.0);
        let r = picard_solve(&p, &PicardInit::FreeEvolution, &McConfig::new(0, 4), &PicardOptions::default()).unwrap();
        assert_eq!(r.distances[0].value, 0.0);
        let e = exp_euler_solve(&p, &McConfig::new(1, 4));
        for (j, &t) in p.grid().iter().enumerate() {
            let exact = semigroup_apply(&p.semigroup, t, &x0).unwrap();
            for c in 0..3 {
                assert!((r.ensemble.state(0, j)[c] - exact[c]).abs() < 1e-14);
                assert!((e.state(2, j)[c] - exact[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn picard_fixed_point_is_the_euler_path_on_common_noise() {
        let p = heat_demo();
        let mc = McConfig::new(5, 16);
        let r = picard_solve(&p, &PicardInit::FreeEvolution, &mc, &PicardOptions { max_iter: 80, tol: 1e-13 }).unwrap();
        assert!(r.converged);
        let e = exp_euler_solve(&p, &mc);
        let d = weighted_norm(&r.ensemble, Some(&e), 0.0, 2.0).unwrap();
        assert!(d.value < 1e-10, "{d:?}");
    }

    #[test]
    fn weighted_norm_examples() {
        let grid = uniform_grid(1.0, 4);
        let c = Ensemble {
            grid: grid.clone(),
            dim: 2,
            seed: 0,
            paths: vec![vec![3.0, 4.0].repeat(5); 3],
        };
        for beta in [0.0, 2.0, 50.0] {
            let w = weighted_norm(&c, None, beta, 1.5).unwrap();
            assert!((w.value - 5.0).abs() < 1e-12);
            assert_eq!(w.argmax_t, 0.0);
        }
        let w = weighted_norm(&c.scaled(-2.0), None, 1.0, 2.0).unwrap();
        assert!((w.value - 10.0).abs() < 1e-12);
    }

    #[test]
    fn ou_grid_moment_is_within_grid_error() {
        let sigma = 0.8;
        let mut p = problem(vec![1.0], DriftMap::Zero, DiffusionMap::ConstantDiag { q: vec![sigma] }, vec![1.5], 2.0);
        p.grid_steps = 50;
        let r = picard_solve(&p, &PicardInit::FreeEvolution, &McConfig::new(6, 20_000), &PicardOptions { max_iter: 5, tol: 1e-12 }).unwrap();
        let moments = r.ensemble.moments(2.0).unwrap();
        let dt = 1.0 / 50.0;
        for (j, &t) in r.ensemble.grid.iter().enumerate() {
            let exact = ou_second_moment(1.0, sigma, 2.0, 1.5, t);
            let grid_err = dt * (-(-2.0 * t).exp_m1()) * sigma * sigma * 2.0;
            assert!((moments[j].value - exact).abs() <= grid_err + 3.0 * moments[j].standard_error + 1e-12, "t={t}");
        }
    }

    #[test]
    fn continuity_probe_deterministic() {
        let x0 = vec![1.0, 1.0];
        let p = problem(vec![1.0, 5.0], DriftMap::Zero, DiffusionMap::Zero, x0.clone(), 1.0);
        let r = picard_solve(&p, &PicardInit::FreeEvolution, &McConfig::new(0, 3), &PicardOptions::default()).unwrap();
        let j = 8;
        let rows = stochastic_continuity_probe(&p, &r.ensemble, j, &[0, 1, 2, 4], 1.0, 2).unwrap();
        assert_eq!(rows[0].moment.value, 0.0);
        let t = p.grid()[j];
        for row in &rows {
            let a = semigroup_apply(&p.semigroup, t + row.eps, &x0).unwrap();
            let b = semigroup_apply(&p.semigroup, t, &x0).unwrap();
            assert!((row.moment.value - (a - b).norm_squared()).abs() < 1e-12);
            assert_eq!(row.semigroup_term, 0.0);
        }
        assert!(rows.windows(2).all(|w| w[0].moment.value <= w[1].moment.value));
    }

    #[test]
    fn problem_file_round_trip() {
        let json = r#"{
            "semigroup": {"rule": "heat", "k": 3},
            "drift": {"kind": "sine-diag", "coeffs": [-1, -1, -1]},
            "diffusion": {"kind": "scalar-factor-diag", "factor": "one-plus-sin-norm", "q": [1, 0.5, 0.25]},
            "x0": {"kind": "deterministic", "x": [0, 0, 0]},
            "noise": {"kind": "diagonal", "modes": [
                {"family": "compound-poisson", "rate": 2, "jumps": {"law": "two-point", "a": 1}},
                {"family": "compound-poisson", "rate": 2, "jumps": {"law": "two-point", "a": 1}},
                {"family": "compound-poisson", "rate": 2, "jumps": {"law": "two-point", "a": 1}}]},
            "horizon": 1.0, "p": 2.0
        }"#;
        let p: MildProblem = serde_json::from_str(json).unwrap();
        let p = p.validated().unwrap();
        assert_eq!(p.grid_steps, 64);
        assert!(matches!(p.g, BoundFn::Diag { scale, .. } if scale == 2.0));
    }
}
