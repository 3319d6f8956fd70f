//! Finite-rank operators between finite-dimensional ℓ^q spaces and bounds on
//! their p-summing norms.
//!
//! `π_p` is bracketed from below by the ratio in the p-summing inequality over
//! explicit test families, and from above by `Σ ‖x*_k‖·‖y_k‖` over a rank-one
//! decomposition. In the Hilbert case at `p = 2` both collapse to the
//! Hilbert–Schmidt norm.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy::{ball_support_point, default_starts, maximize_convex_on_ball, CylLevySpec, DualBall};
use crate::mc::{map_paths, BoundVerdict, McConfig, MomentAccumulator, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainNorm {
    L1,
    L2,
    LInf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodomainNorm {
    L1,
    L2,
}

impl DomainNorm {
    /// Unit ball of the domain itself.
    pub fn ball(self) -> DualBall {
        match self {
            DomainNorm::L1 => DualBall::L1,
            DomainNorm::L2 => DualBall::L2,
            DomainNorm::LInf => DualBall::LInf,
        }
    }

    /// Unit ball of the dual space.
    pub fn dual_ball(self) -> DualBall {
        match self {
            DomainNorm::L1 => DualBall::LInf,
            DomainNorm::L2 => DualBall::L2,
            DomainNorm::LInf => DualBall::L1,
        }
    }

    pub fn norm(self, x: &[f64]) -> f64 {
        ball_norm(self.ball(), x)
    }

    pub fn dual_norm(self, x: &[f64]) -> f64 {
        ball_norm(self.dual_ball(), x)
    }
}

impl CodomainNorm {
    pub fn norm(self, y: &[f64]) -> f64 {
        match self {
            CodomainNorm::L1 => y.iter().map(|v| v.abs()).sum(),
            CodomainNorm::L2 => y.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }

    fn as_domain(self) -> DomainNorm {
        match self {
            CodomainNorm::L1 => DomainNorm::L1,
            CodomainNorm::L2 => DomainNorm::L2,
        }
    }
}

/// Norm whose unit ball is `ball`.
pub fn ball_norm(ball: DualBall, x: &[f64]) -> f64 {
    match ball {
        DualBall::L1 => x.iter().map(|v| v.abs()).sum(),
        DualBall::L2 => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
        DualBall::LInf => x.iter().fold(0.0, |m, v| m.max(v.abs())),
    }
}

/// The rank-one operator `x ↦ ⟨functional, x⟩·vector`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankOne {
    pub functional: Vec<f64>,
    pub vector: Vec<f64>,
}

/// On-disk layout of an operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorFile {
    pub rows: Vec<Vec<f64>>,
    pub domain_norm: DomainNorm,
    pub codomain_norm: CodomainNorm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<Vec<RankOne>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OperatorFile", into = "OperatorFile")]
pub struct FiniteRankOperator {
    matrix: DMatrix<f64>,
    domain: DomainNorm,
    codomain: CodomainNorm,
    decomposition: Option<Vec<RankOne>>,
}

impl TryFrom<OperatorFile> for FiniteRankOperator {
    type Error = Error;

    fn try_from(f: OperatorFile) -> Result<Self> {
        let n_out = f.rows.len();
        let n_in = f.rows.first().map_or(0, Vec::len);
        if n_out == 0 || n_in == 0 {
            return Err(Error::Config("operator matrix must be nonempty".into()));
        }
        if let Some(bad) = f.rows.iter().find(|r| r.len() != n_in) {
            return Err(Error::DimensionMismatch {
                expected: n_in,
                got: bad.len(),
            });
        }
        let matrix = DMatrix::from_fn(n_out, n_in, |i, j| f.rows[i][j]);
        let op = FiniteRankOperator::new(matrix, f.domain_norm, f.codomain_norm)?;
        match f.decomposition {
            Some(d) => op.with_decomposition(d),
            None => Ok(op),
        }
    }
}

impl From<FiniteRankOperator> for OperatorFile {
    fn from(op: FiniteRankOperator) -> Self {
        OperatorFile {
            rows: op.matrix.row_iter().map(|r| r.iter().copied().collect()).collect(),
            domain_norm: op.domain,
            codomain_norm: op.codomain,
            decomposition: op.decomposition,
        }
    }
}

const RECONSTRUCTION_TOL: f64 = 1e-12;

impl FiniteRankOperator {
    pub fn new(matrix: DMatrix<f64>, domain: DomainNorm, codomain: CodomainNorm) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("operator entries must be finite".into()));
        }
        Ok(Self {
            matrix,
            domain,
            codomain,
            decomposition: None,
        })
    }

    /// Hilbert-space operator given by `matrix`.
    pub fn hilbert(matrix: DMatrix<f64>) -> Result<Self> {
        Self::new(matrix, DomainNorm::L2, CodomainNorm::L2)
    }

    pub fn diagonal(d: &[f64], domain: DomainNorm, codomain: CodomainNorm) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(d)), domain, codomain)
    }

    pub fn identity(k: usize, domain: DomainNorm, codomain: CodomainNorm) -> Result<Self> {
        Self::diagonal(&vec![1.0; k], domain, codomain)
    }

    pub fn rank_one(functional: &[f64], vector: &[f64], domain: DomainNorm, codomain: CodomainNorm) -> Result<Self> {
        let m = DVector::from_column_slice(vector) * DVector::from_column_slice(functional).transpose();
        Self::new(m, domain, codomain)?.with_decomposition(vec![RankOne {
            functional: functional.to_vec(),
            vector: vector.to_vec(),
        }])
    }

    /// Attaches a rank-one decomposition after checking that it reconstructs the matrix.
    pub fn with_decomposition(mut self, terms: Vec<RankOne>) -> Result<Self> {
        let (r, c) = self.matrix.shape();
        let mut sum = DMatrix::zeros(r, c);
        for t in &terms {
            if t.functional.len() != c {
                return Err(Error::DimensionMismatch {
                    expected: c,
                    got: t.functional.len(),
                });
            }
            if t.vector.len() != r {
                return Err(Error::DimensionMismatch {
                    expected: r,
                    got: t.vector.len(),
                });
            }
            sum += DVector::from_column_slice(&t.vector) * DVector::from_column_slice(&t.functional).transpose();
        }
        let scale = self.matrix.amax().max(1.0);
        let err = (&sum - &self.matrix).amax();
        if err > RECONSTRUCTION_TOL * scale {
            return Err(Error::Config(format!("decomposition misses the matrix by {err:e}")));
        }
        self.decomposition = Some(terms);
        Ok(self)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn domain(&self) -> DomainNorm {
        self.domain
    }

    pub fn codomain(&self) -> CodomainNorm {
        self.codomain
    }

    pub fn dim_in(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn dim_out(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn stored_decomposition(&self) -> Option<&[RankOne]> {
        self.decomposition.as_deref()
    }

    pub fn is_hilbert(&self) -> bool {
        self.domain == DomainNorm::L2 && self.codomain == CodomainNorm::L2
    }

    pub fn is_diagonal(&self) -> bool {
        self.matrix
            .iter()
            .enumerate()
            .all(|(idx, v)| *v == 0.0 || idx % self.matrix.nrows() == idx / self.matrix.nrows())
    }

    pub fn apply(&self, x: &[f64]) -> DVector<f64> {
        &self.matrix * DVector::from_column_slice(x)
    }

    /// The stored decomposition, else coordinates for diagonal matrices, else
    /// the singular-value factorization in the Hilbert case.
    pub fn decomposition(&self) -> Result<Vec<RankOne>> {
        if let Some(d) = &self.decomposition {
            return Ok(d.clone());
        }
        let (r, c) = self.matrix.shape();
        if self.is_diagonal() {
            return Ok((0..r.min(c))
                .filter(|&k| self.matrix[(k, k)] != 0.0)
                .map(|k| {
                    let mut f = vec![0.0; c];
                    f[k] = self.matrix[(k, k)];
                    let mut y = vec![0.0; r];
                    y[k] = 1.0;
                    RankOne {
                        functional: f,
                        vector: y,
                    }
                })
                .collect());
        }
        if self.is_hilbert() {
            let svd = self.matrix.clone().svd(true, true);
            let u = svd.u.expect("requested");
            let vt = svd.v_t.expect("requested");
            return Ok(svd
                .singular_values
                .iter()
                .enumerate()
                .filter(|(_, s)| **s > 0.0)
                .map(|(i, s)| RankOne {
                    functional: vt.row(i).iter().map(|v| v * s).collect(),
                    vector: u.column(i).iter().copied().collect(),
                })
                .collect());
        }
        Err(Error::MissingDecomposition(format!(
            "{}x{} operator with {:?} domain and {:?} codomain",
            r, c, self.domain, self.codomain
        )))
    }

    /// `α·self`, scaling the decomposition functionals.
    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            matrix: &self.matrix * alpha,
            domain: self.domain,
            codomain: self.codomain,
            decomposition: self.decomposition.as_ref().map(|d| {
                d.iter()
                    .map(|t| RankOne {
                        functional: t.functional.iter().map(|v| v * alpha).collect(),
                        vector: t.vector.clone(),
                    })
                    .collect()
            }),
        }
    }

    /// `self + other` with the two decompositions concatenated.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.matrix.shape() != other.matrix.shape() {
            return Err(Error::DimensionMismatch {
                expected: self.dim_in(),
                got: other.dim_in(),
            });
        }
        if self.domain != other.domain || self.codomain != other.codomain {
            return Err(Error::Config("sum of operators with different norms".into()));
        }
        let mut terms = self.decomposition()?;
        terms.extend(other.decomposition()?);
        Self::new(&self.matrix + &other.matrix, self.domain, self.codomain)?.with_decomposition(terms)
    }
}

pub fn hs_norm(op: &FiniteRankOperator) -> Result<f64> {
    if !op.is_hilbert() {
        return Err(Error::Precondition("Hilbert–Schmidt norm needs ℓ² domain and codomain".into()));
    }
    Ok(op.matrix.norm())
}

/// Operator norm; exact except for ℓ^∞ domains above 16 dimensions and the
/// ℓ² → ℓ¹ case, which use restarted ascent.
pub fn operator_norm(op: &FiniteRankOperator) -> f64 {
    operator_norm_with_argmax(op).0
}

fn operator_norm_with_argmax(op: &FiniteRankOperator) -> (f64, DVector<f64>) {
    let k = op.dim_in();
    let value = |x: &DVector<f64>| op.codomain.norm((&op.matrix * x).as_slice());
    match (op.domain, op.codomain) {
        (DomainNorm::L2, CodomainNorm::L2) => {
            let svd = op.matrix.clone().svd(false, true);
            let vt = svd.v_t.expect("requested");
            let (i, _) = svd
                .singular_values
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .expect("nonempty");
            let x: DVector<f64> = vt.row(i).transpose();
            (value(&x), x)
        }
        (DomainNorm::L1, _) => (0..k)
            .map(|j| {
                let mut e = DVector::zeros(k);
                e[j] = 1.0;
                (value(&e), e)
            })
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .expect("nonempty"),
        (DomainNorm::LInf, _) if k <= 16 => sign_vectors(k)
            .map(|s| (value(&s), s))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .expect("nonempty"),
        _ => {
            let objective = |x: &DVector<f64>| {
                let y = &op.matrix * x;
                let v = op.codomain.norm(y.as_slice());
                let g = match op.codomain {
                    CodomainNorm::L1 => op.matrix.transpose() * y.map(f64::signum),
                    CodomainNorm::L2 => {
                        let n = y.norm();
                        if n > 0.0 {
                            op.matrix.transpose() * (y / n)
                        } else {
                            DVector::zeros(k)
                        }
                    }
                };
                (v, g)
            };
            let starts = default_starts(k, op.domain.ball(), 32, 0x0b0b);
            let (v, x) = maximize_convex_on_ball(&objective, op.domain.ball(), &starts, 1e-12, 500);
            (v, x)
        }
    }
}

/// Sign vectors with a fixed leading `+1`.
fn sign_vectors(k: usize) -> impl Iterator<Item = DVector<f64>> {
    let n = 1u64 << (k.max(1) - 1);
    (0..n).map(move |mask| {
        DVector::from_iterator(
            k,
            (0..k).map(|j| {
                if j == 0 || mask & (1 << (j - 1)) == 0 {
                    1.0
                } else {
                    -1.0
                }
            }),
        )
    })
}

/// `Σ ‖x*_k‖_{dual}·‖y_k‖` over the stored or derived decomposition.
pub fn pi_p_upper(op: &FiniteRankOperator, p: f64) -> Result<f64> {
    check_p(p)?;
    Ok(op
        .decomposition()?
        .iter()
        .map(|t| op.domain.dual_norm(&t.functional) * op.codomain.norm(&t.vector))
        .sum())
}

/// Best available upper bound on `π_p`: the Hilbert–Schmidt norm when it is
/// exact (Hilbert case, `p = 2`), otherwise `pi_p_upper`.
pub fn pi_p_certified(op: &FiniteRankOperator, p: f64) -> Result<f64> {
    check_p(p)?;
    if p == 2.0 && op.is_hilbert() {
        return hs_norm(op);
    }
    pi_p_upper(op, p)
}

fn check_p(p: f64) -> Result<()> {
    if (1.0..=2.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Precondition(format!("p must lie in [1, 2], got {p}")))
    }
}

/// Search settings for `pi_p_lower`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerSearch {
    pub random_families: usize,
    pub family_size: usize,
    pub restarts: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for LowerSearch {
    fn default() -> Self {
        Self {
            random_families: 16,
            family_size: 4,
            restarts: 32,
            tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub value: f64,
    /// Name of the family achieving the bound.
    pub family: String,
    /// Maximizing functional of the inner supremum for that family.
    pub functional: Vec<f64>,
}

const SIGN_ENUMERATION_MAX: usize = 14;

/// `sup_{x* ∈ B*} (Σ_k |x*(x_k)|^p)^{1/p}` and its maximizer; `None` when no
/// reliable value is available.
fn weak_family_norm(family: &[DVector<f64>], p: f64, ball: DualBall, search: &LowerSearch) -> Option<(f64, DVector<f64>)> {
    let dim = family[0].len();
    let objective = |x: &DVector<f64>| -> (f64, DVector<f64>) {
        let mut v = 0.0;
        let mut g = DVector::zeros(dim);
        for f in family {
            let s = x.dot(f);
            if s != 0.0 {
                v += s.abs().powf(p);
                g += f * (p * s.abs().powf(p - 1.0) * s.signum());
            }
        }
        (v, g)
    };
    if family.len() == 1 {
        let x = &family[0];
        let support = ball_support_point(x, ball);
        return Some((support.dot(x).abs(), support));
    }
    match ball {
        DualBall::L1 => (0..dim)
            .map(|j| {
                let mut e = DVector::zeros(dim);
                e[j] = 1.0;
                (objective(&e).0.powf(1.0 / p), e)
            })
            .max_by(|a, b| a.0.total_cmp(&b.0)),
        DualBall::L2 => {
            if p == 2.0 {
                let m = DMatrix::from_columns(family);
                let gram = &m * m.transpose();
                let eig = gram.symmetric_eigen();
                let (i, l) = eig.eigenvalues.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
                return Some((l.max(0.0).sqrt(), eig.eigenvectors.column(i).into_owned()));
            }
            if is_orthonormal(family) {
                // Σ|c_k|^p under Σc_k² ≤ 1 peaks at equal weights
                let n = family.len() as f64;
                let x = family.iter().fold(DVector::zeros(dim), |acc, f| acc + f) / n.sqrt();
                return Some((n.powf(1.0 / p - 0.5), x));
            }
            let mut starts = family.iter().map(|f| ball_support_point(f, ball)).collect::<Vec<_>>();
            starts.extend(default_starts(dim, ball, search.restarts, search.seed ^ 0xface));
            let (v, x) = maximize_convex_on_ball(&objective, ball, &starts, search.tol, 500);
            Some((v.powf(1.0 / p), x))
        }
        DualBall::LInf => {
            if is_canonical(family) {
                let x = family.iter().fold(DVector::zeros(dim), |acc, f| acc + f);
                return Some(((family.len() as f64).powf(1.0 / p), x));
            }
            if dim > SIGN_ENUMERATION_MAX {
                return None;
            }
            sign_vectors(dim)
                .map(|s| (objective(&s).0.powf(1.0 / p), s))
                .max_by(|a, b| a.0.total_cmp(&b.0))
        }
    }
}

fn is_orthonormal(family: &[DVector<f64>]) -> bool {
    family.iter().enumerate().all(|(i, a)| {
        family
            .iter()
            .enumerate()
            .all(|(j, b)| (a.dot(b) - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12)
    })
}

fn is_canonical(family: &[DVector<f64>]) -> bool {
    let mut seen = vec![false; family[0].len()];
    family.iter().all(|f| {
        let nz: Vec<usize> = f.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect();
        if nz.len() == 1 && f[nz[0]] == 1.0 && !seen[nz[0]] {
            seen[nz[0]] = true;
            true
        } else {
            false
        }
    })
}

/// Ratio of the p-summing inequality for one family, `None` when degenerate.
fn family_ratio(op: &FiniteRankOperator, family: &[DVector<f64>], p: f64, search: &LowerSearch) -> Option<(f64, DVector<f64>)> {
    if family.is_empty() || family.iter().all(|f| f.iter().all(|v| *v == 0.0)) {
        return None;
    }
    let (den, x) = weak_family_norm(family, p, op.domain.dual_ball(), search)?;
    if !(den > 0.0) {
        return None;
    }
    let num = family
        .iter()
        .map(|f| op.codomain.norm((&op.matrix * f).as_slice()).powf(p))
        .sum::<f64>()
        .powf(1.0 / p);
    Some((num / den, x))
}

/// Largest ratio `(Σ‖u x_k‖^p)^{1/p} / sup_{x*}(Σ|x*(x_k)|^p)^{1/p}` over the
/// canonical basis, single basis vectors, right singular vectors, the
/// operator-norm maximizer, random Gaussian families and `extra` families.
pub fn pi_p_lower_with(op: &FiniteRankOperator, p: f64, extra: &[Vec<DVector<f64>>], search: &LowerSearch) -> Result<LowerBound> {
    check_p(p)?;
    let k = op.dim_in();
    let mut families: Vec<(String, Vec<DVector<f64>>)> = Vec::new();
    let basis: Vec<DVector<f64>> = (0..k)
        .map(|j| {
            let mut e = DVector::zeros(k);
            e[j] = 1.0;
            e
        })
        .collect();
    families.push(("canonical basis".into(), basis.clone()));
    for (j, e) in basis.into_iter().enumerate() {
        families.push((format!("e_{}", j + 1), vec![e]));
    }
    let vt = op.matrix.clone().svd(false, true).v_t.expect("requested");
    families.push(("right singular vectors".into(), vt.row_iter().map(|r| r.transpose()).collect()));
    families.push(("operator-norm maximizer".into(), vec![operator_norm_with_argmax(op).1]));
    let mut rng = RngStream::new(search.seed, 0x10_0000);
    for i in 0..search.random_families {
        let fam = (0..search.family_size.max(1))
            .map(|_| DVector::from_iterator(k, (0..k).map(|_| StandardNormal.sample(&mut rng))))
            .collect();
        families.push((format!("random family {i}"), fam));
    }
    for (i, fam) in extra.iter().enumerate() {
        if fam.iter().any(|f| f.len() != k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: fam.iter().map(|f| f.len()).find(|l| *l != k).unwrap_or(0),
            });
        }
        families.push((format!("supplied family {i}"), fam.clone()));
    }
    let mut best = LowerBound {
        value: 0.0,
        family: "none".into(),
        functional: vec![0.0; k],
    };
    for (name, fam) in &families {
        if let Some((r, x)) = family_ratio(op, fam, p, search) {
            if r > best.value {
                best = LowerBound {
                    value: r,
                    family: name.clone(),
                    functional: x.iter().copied().collect(),
                };
            }
        }
    }
    Ok(best)
}

pub fn pi_p_lower(op: &FiniteRankOperator, p: f64, search: &LowerSearch) -> Result<LowerBound> {
    pi_p_lower_with(op, p, &[], search)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiPBounds {
    pub lower: f64,
    pub upper: f64,
    pub p: f64,
    pub notes: String,
}

impl PiPBounds {
    pub fn gap(&self) -> f64 {
        self.upper - self.lower
    }
}

pub fn pi_p_bounds(op: &FiniteRankOperator, p: f64, search: &LowerSearch) -> Result<PiPBounds> {
    check_p(p)?;
    if p == 2.0 && op.is_hilbert() {
        let hs = hs_norm(op)?;
        return Ok(PiPBounds {
            lower: hs,
            upper: hs,
            p,
            notes: "Hilbert–Schmidt norm (exact)".into(),
        });
    }
    let lower = pi_p_lower(op, p, search)?;
    let upper = pi_p_upper(op, p)?;
    Ok(PiPBounds {
        lower: lower.value,
        upper,
        p,
        notes: format!("lower from {}; upper from rank-one decomposition", lower.family),
    })
}

/// `φ∘ψ`, carrying ψ's decomposition through as `Σ x*_k ⊗ φ(y_k)`.
pub fn compose(phi: &FiniteRankOperator, psi: &FiniteRankOperator) -> Result<FiniteRankOperator> {
    if phi.dim_in() != psi.dim_out() {
        return Err(Error::DimensionMismatch {
            expected: psi.dim_out(),
            got: phi.dim_in(),
        });
    }
    if phi.domain != psi.codomain.as_domain() {
        return Err(Error::Config("inner codomain and outer domain carry different norms".into()));
    }
    let out = FiniteRankOperator::new(&phi.matrix * &psi.matrix, psi.domain, phi.codomain)?;
    match psi.decomposition() {
        Ok(terms) => {
            let mapped = terms
                .into_iter()
                .filter_map(|t| {
                    let y = phi.apply(&t.vector);
                    (y.iter().any(|v| *v != 0.0)).then(|| RankOne {
                        functional: t.functional,
                        vector: y.iter().copied().collect(),
                    })
                })
                .collect();
            out.with_decomposition(mapped)
        }
        Err(_) => Ok(out),
    }
}

/// `I - diag(exp(-ε λ_k))` on ℓ².
pub fn semigroup_defect(eigenvalues: &[f64], eps: f64) -> Result<FiniteRankOperator> {
    let d: Vec<f64> = eigenvalues.iter().map(|l| -(-eps * l).exp_m1()).collect();
    FiniteRankOperator::diagonal(&d, DomainNorm::L2, CodomainNorm::L2)
}

/// Orthogonal projection `e_n ⊗ e_n` on `ℓ²(K)` (`n` is 1-based).
pub fn coordinate_projection(k: usize, n: usize) -> Result<FiniteRankOperator> {
    if n == 0 || n > k {
        return Err(Error::Precondition(format!("coordinate {n} outside 1..={k}")));
    }
    let mut e = vec![0.0; k];
    e[n - 1] = 1.0;
    FiniteRankOperator::rank_one(&e, &e, DomainNorm::L2, CodomainNorm::L2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub param: f64,
    /// Certified upper bound on `π_p(φψ)`.
    pub value: f64,
    pub upper: f64,
    pub lower: f64,
    pub hs: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayTable {
    pub p: f64,
    pub rows: Vec<DecayRow>,
    /// Values never increase along the family (relative slack 1e-12).
    pub monotone: bool,
    /// Last value is below `threshold` times the first.
    pub converged: bool,
    pub threshold: f64,
}

/// `π_p(φ_j ψ)` along a family `φ_j`, given in the order in which it should
/// converge strongly to zero.
pub fn composition_decay(
    psi: &FiniteRankOperator,
    family: &[(f64, FiniteRankOperator)],
    p: f64,
    threshold: f64,
    search: &LowerSearch,
) -> Result<DecayTable> {
    check_p(p)?;
    if family.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut rows = Vec::with_capacity(family.len());
    for (param, phi) in family {
        let u = compose(phi, psi)?;
        let bounds = pi_p_bounds(&u, p, search)?;
        let hs = hs_norm(&u).ok();
        rows.push(DecayRow {
            param: *param,
            value: pi_p_certified(&u, p)?,
            upper: bounds.upper,
            lower: bounds.lower,
            hs,
        });
    }
    let monotone = rows.windows(2).all(|w| w[1].value <= w[0].value * (1.0 + 1e-12));
    let first = rows[0].value;
    let last = rows[rows.len() - 1].value;
    Ok(DecayTable {
        p,
        converged: last <= threshold * first,
        monotone,
        threshold,
        rows,
    })
}

/// Monte Carlo check of `(E‖ψ ΔL‖^p)^{1/p} ≤ π_p(ψ)·‖ΔL‖_p^*` in moment units.
///
/// Both sides are evaluated on the same sample of increments; the empirical
/// measure is itself a cylindrical measure, so the comparison is sharp.
pub fn schwartz_bound_check(psi: &FiniteRankOperator, spec: &CylLevySpec, dt: f64, p: f64, mc: &McConfig) -> Result<BoundVerdict> {
    check_p(p)?;
    spec.validate()?;
    if psi.dim_in() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            got: psi.dim_in(),
        });
    }
    let report = crate::levy::check_weak_p_condition(spec, p)?;
    if !report.pass {
        return Err(match report.failing_mode() {
            Some(mode) => Error::InfiniteMoment { mode, p },
            None => Error::Precondition("weak moment condition fails beyond the truncation".into()),
        });
    }
    if !(dt > 0.0) || mc.n_paths == 0 {
        return Err(Error::Precondition("need a positive time step and at least one path".into()));
    }
    let k = spec.dim();
    let samples: Vec<f64> = map_paths(mc.n_paths, |i| {
        let mut s = mc.stream(i);
        let mut v = vec![0.0; k];
        spec.add_increment(dt, &mut s, &mut v);
        v
    })
    .concat();
    let lhs = samples
        .chunks_exact(k)
        .map(|row| psi.codomain.norm(psi.apply(row).as_slice()).powf(p))
        .collect::<MomentAccumulator>()
        .finish(p)?;
    let pi = pi_p_certified(psi, p)?;
    let ball = psi.domain.dual_ball();
    let weak = if p == 2.0 && ball == DualBall::L2 {
        // exact supremum of the empirical quadratic form
        let mut q = DMatrix::<f64>::zeros(k, k);
        for row in samples.chunks_exact(k) {
            let v = DVector::from_column_slice(row);
            q += &v * v.transpose();
        }
        q /= mc.n_paths as f64;
        let eig = q.symmetric_eigen();
        let (i, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty");
        let x = eig.eigenvectors.column(i).into_owned();
        samples
            .chunks_exact(k)
            .map(|row| DVector::from_column_slice(row).dot(&x).powi(2))
            .collect::<MomentAccumulator>()
            .finish(2.0)?
    } else {
        crate::levy::empirical_weak_moment_sup(&samples, k, p, ball, 8, mc.seed).0
    };
    let factor = pi.powf(p);
    Ok(BoundVerdict::new(lhs, factor * weak.value, factor * weak.standard_error))
}
