//! Monte Carlo plumbing: replayable random streams, exactly mergeable moment
//! accumulators, bound verdicts and log-log slope fits.
//!
//! Every path of every experiment draws from its own stream
//! `(master_seed, stream_index = path index)`. Per-path results are folded with
//! an exact summation, so estimates do not depend on how paths are split
//! across workers.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counter-based random stream. Streams with distinct `(master_seed, stream_index)`
/// use disjoint ChaCha keystreams; the word counter makes replay bit-exact.
#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    stream_index: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_index);
        Self {
            master_seed,
            stream_index,
            rng,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Rewind or advance to an absolute word position.
    pub fn seek(&mut self, counter: u128) {
        self.rng.set_word_pos(counter);
    }

    /// Uniform draw on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Derived stream for a sub-task of this stream, e.g. one time slice of a path.
    pub fn fork(&self, salt: u64) -> RngStream {
        let seed = self
            .master_seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .rotate_left(17)
            ^ salt.wrapping_mul(0xD1B5_4A32_D192_ED03);
        RngStream::new(seed, self.stream_index)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

pub fn make_streams(master_seed: u64, n: usize) -> Vec<RngStream> {
    (0..n as u64).map(|i| RngStream::new(master_seed, i)).collect()
}

/// Seed and path count shared by every Monte Carlo estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub seed: u64,
    pub n_paths: usize,
}

impl McConfig {
    pub fn new(seed: u64, n_paths: usize) -> Self {
        Self { seed, n_paths }
    }

    /// Independent configuration for a sub-experiment.
    pub fn derive(&self, salt: u64) -> Self {
        Self {
            seed: self
                .seed
                .wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
                .rotate_left(23),
            n_paths: self.n_paths,
        }
    }

    pub fn with_paths(&self, n_paths: usize) -> Self {
        Self { n_paths, ..*self }
    }

    pub fn stream(&self, path: usize) -> RngStream {
        RngStream::new(self.seed, path as u64)
    }
}

/// Evaluate `f` on every path index; output order is the path order regardless
/// of scheduling.
pub fn map_paths<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Exact floating-point sum (Shewchuk's non-overlapping partials). The
/// rounded value is independent of insertion order and of how partial sums
/// are merged.
#[derive(Clone, Debug, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
    nonfinite: f64,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        if !value.is_finite() {
            self.nonfinite += value;
            return;
        }
        let mut x = value;
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
        self.nonfinite += other.nonfinite;
    }

    /// Correctly rounded value of the sum.
    pub fn value(&self) -> f64 {
        if self.nonfinite != 0.0 || self.nonfinite.is_nan() {
            return self.nonfinite;
        }
        let p = &self.partials;
        let mut n = p.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }
}

/// Streaming accumulator of already-transformed samples (e.g. `‖X‖^p`).
#[derive(Clone, Debug, Default)]
pub struct MomentAccumulator {
    n: usize,
    sum: ExactSum,
    sum_sq: ExactSum,
}

impl MomentAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, value: f64) {
        self.n += 1;
        self.sum.add(value);
        self.sum_sq.add(value * value);
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        self.n += other.n;
        self.sum.merge(&other.sum);
        self.sum_sq.merge(&other.sum_sq);
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn finish(&self, p: f64) -> Result<MomentEstimate> {
        if self.n == 0 {
            return Err(Error::EmptyInput);
        }
        let n = self.n as f64;
        let mean = self.sum.value() / n;
        let se = if self.n > 1 {
            let var = ((self.sum_sq.value() - n * mean * mean) / (n - 1.0)).max(0.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Ok(MomentEstimate {
            value: mean,
            standard_error: se,
            n_samples: self.n,
            p,
        })
    }
}

impl FromIterator<f64> for MomentAccumulator {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = MomentAccumulator::new();
        for v in iter {
            acc.push(v);
        }
        acc
    }
}

/// Sample mean of `|x|^p` with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub value: f64,
    pub standard_error: f64,
    pub n_samples: usize,
    pub p: f64,
}

impl MomentEstimate {
    /// A known value with no sampling error.
    pub fn exact(value: f64, p: f64) -> Self {
        Self {
            value,
            standard_error: 0.0,
            n_samples: 0,
            p,
        }
    }

    /// `value^(1/p)` with a delta-method standard error.
    pub fn root(&self) -> (f64, f64) {
        let r = self.value.max(0.0).powf(1.0 / self.p);
        let se = if self.value > 0.0 {
            self.standard_error * r / (self.p * self.value)
        } else {
            0.0
        };
        (r, se)
    }

    /// Multiply the estimated quantity by a constant.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            value: self.value * factor,
            standard_error: self.standard_error * factor.abs(),
            ..*self
        }
    }
}

/// Mean of `|x|^p` over scalar samples (pass norms for vector samples).
pub fn estimate_p_moment(samples: &[f64], p: f64) -> Result<MomentEstimate> {
    if !(p > 0.0) {
        return Err(Error::Precondition(format!("moment order must be positive, got {p}")));
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    samples
        .iter()
        .map(|x| x.abs().powf(p))
        .collect::<MomentAccumulator>()
        .finish(p)
}

/// Mean of `‖x‖₂^p` over vector samples.
pub fn estimate_p_moment_vectors(samples: &[nalgebra::DVector<f64>], p: f64) -> Result<MomentEstimate> {
    let norms: Vec<f64> = samples.iter().map(|v| v.norm()).collect();
    estimate_p_moment(&norms, p)
}

/// Outcome of comparing a Monte Carlo moment against a bound in moment units.
///
/// Policy: pass iff `estimate ≤ bound + 3·SE`, where SE combines the estimate's
/// standard error with the bound's own (when the bound is itself estimated).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundVerdict {
    pub estimate: MomentEstimate,
    pub bound: f64,
    pub bound_se: f64,
    pub pass: bool,
}

pub const SLACK_SE: f64 = 3.0;

impl BoundVerdict {
    pub fn new(estimate: MomentEstimate, bound: f64, bound_se: f64) -> Self {
        let slack = SLACK_SE * estimate.standard_error.hypot(bound_se);
        let pass = estimate.value <= bound + slack;
        Self {
            estimate,
            bound,
            bound_se,
            pass,
        }
    }

    pub fn combined_se(&self) -> f64 {
        self.estimate.standard_error.hypot(self.bound_se)
    }

    /// `estimate / bound`, or 0 when both vanish.
    pub fn ratio(&self) -> f64 {
        if self.bound == 0.0 {
            if self.estimate.value == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.estimate.value / self.bound
        }
    }
}

/// `|a - b| ≤ 3·√(se_a² + se_b²) + abs_tol`.
pub fn agree_within_se(a: &MomentEstimate, b: &MomentEstimate, abs_tol: f64) -> bool {
    (a.value - b.value).abs() <= SLACK_SE * a.standard_error.hypot(b.standard_error) + abs_tol
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub max_residual: f64,
}

/// Least-squares line through `(ln n, ln value)`.
pub fn fit_loglog_slope(pairs: &[(f64, f64)]) -> Result<LogLogFit> {
    if pairs.len() < 3 {
        return Err(Error::Precondition(format!(
            "slope fit needs at least 3 points, got {}",
            pairs.len()
        )));
    }
    if pairs.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::Precondition("abscissae must be strictly increasing".into()));
    }
    if let Some(&(n, v)) = pairs.iter().find(|(n, v)| !(*n > 0.0) || !(*v > 0.0)) {
        return Err(Error::Precondition(format!("nonpositive pair ({n}, {v})")));
    }
    let xs: Vec<f64> = pairs.iter().map(|(n, _)| n.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|(_, v)| v.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_residual = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).abs())
        .fold(0.0, f64::max);
    Ok(LogLogFit {
        slope,
        intercept,
        max_residual,
    })
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic critical value of the two-sample KS statistic at level `alpha`.
pub fn ks_critical(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// True when the KS test does not reject equality of laws at level `alpha`.
pub fn ks_same_law(a: &[f64], b: &[f64], alpha: f64) -> bool {
    ks_statistic(a, b) <= ks_critical(a.len(), b.len(), alpha)
}
