//! Stochastic integration of simple operator-valued integrands against a
//! cylindrical Lévy process.
//!
//! A path is simulated interval by interval. On `(t_k, t_{k+1}]` the integrand
//! picks one of finitely many operators through a decision rule that may only
//! look at the noise history up to `t_k`; the history accessor enforces this.
//! A fresh increment is then drawn and pushed through the chosen operator.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy::{
    check_weak_p_condition, cyl_rp_norm, weak_p_norm, CylLevySpec, DualBall, JumpVectorLaw, OneDimLevySpec,
    WeakNormEstimator,
};
use crate::mc::{fit_loglog_slope, map_paths, BoundVerdict, LogLogFit, McConfig, MomentAccumulator, MomentEstimate, RngStream};
use crate::psumming::{pi_p_certified, CodomainNorm, FiniteRankOperator};
use crate::quadrature::gaussian_abs_moment;

const TIME_EPS: f64 = 1e-12;

/// Values `L(t_i)` of the simulated noise at the times reached so far.
#[derive(Clone, Debug, PartialEq)]
pub struct History {
    times: Vec<f64>,
    values: Vec<DVector<f64>>,
}

impl History {
    /// History of a path started at `L(0) = 0`.
    pub fn new(dim: usize) -> Self {
        Self {
            times: vec![0.0],
            values: vec![DVector::zeros(dim)],
        }
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("history starts at 0")
    }

    pub fn last_value(&self) -> &DVector<f64> {
        self.values.last().expect("history starts at 0")
    }

    /// Appends `L(t) = L(last) + increment`.
    pub fn push_increment(&mut self, t: f64, increment: &DVector<f64>) {
        debug_assert!(t > self.last_time());
        let next = self.last_value() + increment;
        self.times.push(t);
        self.values.push(next);
    }

    /// Read access limited to times up to `anchor`.
    pub fn view(&self, anchor: f64) -> HistoryView<'_> {
        HistoryView { history: self, anchor }
    }
}

/// Read-only window on a history that refuses reads after its anchor.
#[derive(Clone, Copy, Debug)]
pub struct HistoryView<'a> {
    history: &'a History,
    anchor: f64,
}

impl<'a> HistoryView<'a> {
    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    /// `L(t)` for the latest recorded time not after `t`.
    pub fn value_at(&self, t: f64) -> Result<&'a DVector<f64>> {
        if t > self.anchor + TIME_EPS {
            return Err(Error::Measurability {
                requested: t,
                anchor: self.anchor,
            });
        }
        let i = self.history.times.partition_point(|s| *s <= t + TIME_EPS);
        Ok(&self.history.values[i.max(1) - 1])
    }

    /// `L(anchor)`.
    pub fn current(&self) -> &'a DVector<f64> {
        self.value_at(self.anchor).expect("anchor is readable")
    }
}

/// Chooses which operator value a simple random variable takes, from the
/// history up to its anchor.
pub trait DecisionRule: Send + Sync + fmt::Debug {
    fn select(&self, history: &HistoryView<'_>) -> Result<usize>;

    /// The index chosen on every history, if the rule ignores the history.
    fn constant_index(&self) -> Option<usize> {
        None
    }
}

/// Decision rules that can be written in integrand files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RuleKind {
    Constant { index: usize },
    /// `⌊Σ_k |L_k(s)| / unit⌋ mod modulus`.
    HistoryParity { unit: f64, modulus: usize },
    /// 0 while `‖L(s)‖₂ ≤ level`, else 1.
    Threshold { level: f64 },
}

impl DecisionRule for RuleKind {
    fn select(&self, h: &HistoryView<'_>) -> Result<usize> {
        Ok(match *self {
            RuleKind::Constant { index } => index,
            RuleKind::HistoryParity { unit, modulus } => {
                let s: f64 = h.current().iter().map(|v| v.abs()).sum();
                ((s / unit).floor() as u64 % modulus.max(1) as u64) as usize
            }
            RuleKind::Threshold { level } => usize::from(h.current().norm() > level),
        })
    }

    fn constant_index(&self) -> Option<usize> {
        match *self {
            RuleKind::Constant { index } => Some(index),
            _ => None,
        }
    }
}

/// Scalar factor `f(t, history)` of a process `f·ψ₀`.
pub type Factor = Arc<dyn Fn(f64, &HistoryView<'_>) -> Result<f64> + Send + Sync>;

/// Rounds `factor(anchor, history)` to a grid of the given pitch.
#[derive(Clone)]
struct QuantizedRule {
    factor: Factor,
    pitch: f64,
    levels: usize,
}

impl fmt::Debug for QuantizedRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QuantizedRule")
            .field("pitch", &self.pitch)
            .field("levels", &self.levels)
            .finish()
    }
}

impl DecisionRule for QuantizedRule {
    fn select(&self, h: &HistoryView<'_>) -> Result<usize> {
        let v = (self.factor)(h.anchor(), h)?;
        let j = (v / self.pitch).round().clamp(-(self.levels as f64), self.levels as f64);
        Ok((j as i64 + self.levels as i64) as usize)
    }
}

/// The finitely many values of a simple random variable.
#[derive(Clone, Debug, PartialEq)]
pub enum OperatorSet {
    Listed(Vec<FiniteRankOperator>),
    /// Index `j` stands for `(j - levels)·pitch·base`.
    Grid {
        base: FiniteRankOperator,
        pitch: f64,
        levels: usize,
    },
}

impl OperatorSet {
    pub fn len(&self) -> usize {
        match self {
            OperatorSet::Listed(v) => v.len(),
            OperatorSet::Grid { levels, .. } => 2 * levels + 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn first(&self) -> &FiniteRankOperator {
        match self {
            OperatorSet::Listed(v) => &v[0],
            OperatorSet::Grid { base, .. } => base,
        }
    }

    fn grid_scale(pitch: f64, levels: usize, j: usize) -> f64 {
        (j as f64 - levels as f64) * pitch
    }

    fn apply(&self, j: usize, x: &DVector<f64>) -> DVector<f64> {
        match self {
            OperatorSet::Listed(v) => v[j].matrix() * x,
            OperatorSet::Grid { base, pitch, levels } => base.matrix() * x * Self::grid_scale(*pitch, *levels, j),
        }
    }

    /// `π_p` of every value, through the certified upper bound.
    fn pi_table(&self, p: f64) -> Result<PiTable> {
        Ok(match self {
            OperatorSet::Listed(v) => PiTable::Listed(v.iter().map(|op| pi_p_certified(op, p)).collect::<Result<_>>()?),
            OperatorSet::Grid { base, pitch, levels } => PiTable::Grid {
                base: pi_p_certified(base, p)?,
                pitch: *pitch,
                levels: *levels,
            },
        })
    }
}

enum PiTable {
    Listed(Vec<f64>),
    Grid { base: f64, pitch: f64, levels: usize },
}

impl PiTable {
    fn get(&self, j: usize) -> f64 {
        match self {
            PiTable::Listed(v) => v[j],
            PiTable::Grid { base, pitch, levels } => OperatorSet::grid_scale(*pitch, *levels, j).abs() * base,
        }
    }
}

/// `Ψ = Σ_k 1_{A_k} ψ_k` with `A_k = {rule selects k}`.
#[derive(Clone, Debug)]
pub struct SimpleOperatorRV {
    pub rule: Arc<dyn DecisionRule>,
    pub operators: OperatorSet,
}

impl SimpleOperatorRV {
    pub fn new(rule: Arc<dyn DecisionRule>, operators: Vec<FiniteRankOperator>) -> Result<Self> {
        let rv = Self {
            rule,
            operators: OperatorSet::Listed(operators),
        };
        rv.validate()?;
        Ok(rv)
    }

    pub fn deterministic(op: FiniteRankOperator) -> Self {
        Self {
            rule: Arc::new(RuleKind::Constant { index: 0 }),
            operators: OperatorSet::Listed(vec![op]),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.operators.is_empty() {
            return Err(Error::Config("a simple random variable needs at least one value".into()));
        }
        if let OperatorSet::Listed(v) = &self.operators {
            let f = &v[0];
            if v.iter().any(|o| o.dim_in() != f.dim_in() || o.dim_out() != f.dim_out()) {
                return Err(Error::Config("operator values must share their dimensions".into()));
            }
            if v.iter().any(|o| o.domain() != f.domain() || o.codomain() != f.codomain()) {
                return Err(Error::Config("operator values must share their norms".into()));
            }
        }
        Ok(())
    }

    pub fn dim_in(&self) -> usize {
        self.operators.first().dim_in()
    }

    pub fn dim_out(&self) -> usize {
        self.operators.first().dim_out()
    }

    fn select(&self, h: &HistoryView<'_>) -> Result<usize> {
        let j = self.rule.select(h)?;
        if j >= self.operators.len() {
            return Err(Error::Config(format!(
                "decision rule chose value {j} of {}",
                self.operators.len()
            )));
        }
        Ok(j)
    }

    /// The single value when the rule is a constant.
    pub fn as_deterministic(&self) -> Option<&FiniteRankOperator> {
        match &self.operators {
            OperatorSet::Listed(v) => v.get(self.rule.constant_index()?),
            OperatorSet::Grid { .. } => None,
        }
    }
}

/// `Ψ(t) = Ψ₀ 1_{{0}}(t) + Σ_k Ψ_k 1_{(t_k, t_{k+1}]}(t)`.
#[derive(Clone, Debug)]
pub struct SimpleIntegrand {
    partition: Vec<f64>,
    pieces: Vec<SimpleOperatorRV>,
    initial: Option<FiniteRankOperator>,
}

impl SimpleIntegrand {
    pub fn new(partition: Vec<f64>, pieces: Vec<SimpleOperatorRV>) -> Result<Self> {
        if partition.len() < 2 || partition[0] != 0.0 {
            return Err(Error::Config("partition must start at 0 and contain an interval".into()));
        }
        if partition.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("partition must be strictly increasing".into()));
        }
        if pieces.len() + 1 != partition.len() {
            return Err(Error::DimensionMismatch {
                expected: partition.len() - 1,
                got: pieces.len(),
            });
        }
        let (k_in, k_out) = (pieces[0].dim_in(), pieces[0].dim_out());
        if pieces.iter().any(|p| p.dim_in() != k_in || p.dim_out() != k_out) {
            return Err(Error::Config("all pieces must share their dimensions".into()));
        }
        Ok(Self {
            partition,
            pieces,
            initial: None,
        })
    }

    /// The same deterministic operator on every interval.
    pub fn constant(op: FiniteRankOperator, partition: Vec<f64>) -> Result<Self> {
        let pieces = vec![SimpleOperatorRV::deterministic(op); partition.len().saturating_sub(1)];
        Self::new(partition, pieces)
    }

    pub fn with_initial(mut self, op: FiniteRankOperator) -> Self {
        self.initial = Some(op);
        self
    }

    pub fn partition(&self) -> &[f64] {
        &self.partition
    }

    pub fn pieces(&self) -> &[SimpleOperatorRV] {
        &self.pieces
    }

    pub fn horizon(&self) -> f64 {
        *self.partition.last().expect("nonempty")
    }

    pub fn dim_in(&self) -> usize {
        self.pieces[0].dim_in()
    }

    pub fn codomain(&self) -> CodomainNorm {
        self.pieces[0].operators.first().codomain()
    }

    pub fn dual_ball(&self) -> DualBall {
        self.pieces[0].operators.first().domain().dual_ball()
    }

    /// Per-interval operators when every piece is deterministic.
    pub fn deterministic_operators(&self) -> Option<Vec<&FiniteRankOperator>> {
        self.pieces.iter().map(SimpleOperatorRV::as_deterministic).collect()
    }

    /// `α·Ψ`.
    pub fn scale(&self, alpha: f64) -> Self {
        let pieces = self
            .pieces
            .iter()
            .map(|p| SimpleOperatorRV {
                rule: p.rule.clone(),
                operators: match &p.operators {
                    OperatorSet::Listed(v) => OperatorSet::Listed(v.iter().map(|o| o.scale(alpha)).collect()),
                    OperatorSet::Grid { base, pitch, levels } => OperatorSet::Grid {
                        base: base.scale(alpha),
                        pitch: *pitch,
                        levels: *levels,
                    },
                },
            })
            .collect();
        Self {
            partition: self.partition.clone(),
            pieces,
            initial: self.initial.as_ref().map(|o| o.scale(alpha)),
        }
    }
}

/// On-disk layout of an integrand: named operators referenced by each piece.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrandFile {
    pub operators: BTreeMap<String, FiniteRankOperator>,
    pub partition: Vec<f64>,
    pub pieces: Vec<PieceFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PieceFile {
    pub rule: RuleKind,
    pub operators: Vec<String>,
}

impl TryFrom<IntegrandFile> for SimpleIntegrand {
    type Error = Error;

    fn try_from(f: IntegrandFile) -> Result<Self> {
        let pieces = f
            .pieces
            .iter()
            .map(|piece| {
                let ops = piece
                    .operators
                    .iter()
                    .map(|name| {
                        f.operators
                            .get(name)
                            .cloned()
                            .ok_or_else(|| Error::Config(format!("unknown operator `{name}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                SimpleOperatorRV::new(Arc::new(piece.rule.clone()), ops)
            })
            .collect::<Result<Vec<_>>>()?;
        SimpleIntegrand::new(f.partition, pieces)
    }
}

fn check_history(history: &History, s: f64, dim: usize) -> Result<()> {
    if (history.last_time() - s).abs() > TIME_EPS {
        return Err(Error::Precondition(format!(
            "history ends at {} but the interval starts at {s}",
            history.last_time()
        )));
    }
    if history.last_value().len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: history.last_value().len(),
        });
    }
    Ok(())
}

/// `J_{s,t}(Ψ)`: selects `ψ_j` from the history up to `s`, draws a fresh
/// increment of `L` over `(s, t]`, appends it to the history and returns `ψ_j ΔL`.
pub fn radonify(
    psi: &SimpleOperatorRV,
    s: f64,
    t: f64,
    history: &mut History,
    spec: &CylLevySpec,
    stream: &mut RngStream,
) -> Result<DVector<f64>> {
    Ok(radonify_indexed(psi, s, t, history, spec, stream)?.0)
}

fn radonify_indexed(
    psi: &SimpleOperatorRV,
    s: f64,
    t: f64,
    history: &mut History,
    spec: &CylLevySpec,
    stream: &mut RngStream,
) -> Result<(DVector<f64>, usize)> {
    if !(t > s) {
        return Err(Error::Precondition(format!("need s < t, got s = {s}, t = {t}")));
    }
    if psi.dim_in() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            got: psi.dim_in(),
        });
    }
    check_history(history, s, spec.dim())?;
    let j = psi.select(&history.view(s))?;
    let mut dl = DVector::zeros(spec.dim());
    spec.add_increment(t - s, stream, dl.as_mut_slice());
    history.push_increment(t, &dl);
    Ok((psi.operators.apply(j, &dl), j))
}

/// One simulated path of `I(Ψ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathIntegral {
    pub value: DVector<f64>,
    /// Contribution of each interval.
    pub contributions: Vec<DVector<f64>>,
    /// Operator index chosen on each interval.
    pub selected: Vec<usize>,
}

pub fn integrate_simple_path(psi: &SimpleIntegrand, spec: &CylLevySpec, stream: &mut RngStream) -> Result<PathIntegral> {
    let mut history = History::new(spec.dim());
    let n = psi.pieces.len();
    let mut out = PathIntegral {
        value: DVector::zeros(psi.pieces[0].dim_out()),
        contributions: Vec::with_capacity(n),
        selected: Vec::with_capacity(n),
    };
    for (k, piece) in psi.pieces.iter().enumerate() {
        let (c, j) = radonify_indexed(piece, psi.partition[k], psi.partition[k + 1], &mut history, spec, stream)?;
        out.value += &c;
        out.contributions.push(c);
        out.selected.push(j);
    }
    Ok(out)
}

/// `I(Ψ) = Σ_k J_{t_k, t_{k+1}}(Ψ_k)` along one path.
pub fn integrate_simple(psi: &SimpleIntegrand, spec: &CylLevySpec, stream: &mut RngStream) -> Result<DVector<f64>> {
    Ok(integrate_simple_path(psi, spec, stream)?.value)
}

/// `E‖I(Ψ)‖^p` in the codomain norm.
pub fn integral_moment(psi: &SimpleIntegrand, spec: &CylLevySpec, p: f64, mc: &McConfig) -> Result<MomentEstimate> {
    let norm = psi.codomain();
    let values = map_paths(mc.n_paths, |i| {
        integrate_simple(psi, spec, &mut mc.stream(i)).map(|v| norm.norm(v.as_slice()).powf(p))
    });
    accumulate(values)?.finish(p)
}

fn accumulate(values: Vec<Result<f64>>) -> Result<MomentAccumulator> {
    let mut acc = MomentAccumulator::new();
    for v in values {
        acc.push(v?);
    }
    Ok(acc)
}

/// `‖Ψ‖_Λ^p = E ∫₀^T π_p(Ψ(s))^p ds`, estimated over simulated histories.
/// The returned estimate has order `p`, so `root()` gives `‖Ψ‖_Λ`.
pub fn lambda_norm(psi: &SimpleIntegrand, spec: &CylLevySpec, p: f64, mc: &McConfig) -> Result<MomentEstimate> {
    if !(1.0..=2.0).contains(&p) {
        return Err(Error::Precondition(format!("p must lie in [1, 2], got {p}")));
    }
    let tables = psi.pieces.iter().map(|pc| pc.operators.pi_table(p)).collect::<Result<Vec<_>>>()?;
    let dts: Vec<f64> = psi.partition.windows(2).map(|w| w[1] - w[0]).collect();
    let weigh = |selected: &[usize]| -> f64 {
        selected
            .iter()
            .zip(&tables)
            .zip(&dts)
            .map(|((j, tab), dt)| dt * tab.get(*j).powf(p))
            .sum()
    };
    let constant: Option<Vec<usize>> = psi.pieces.iter().map(|pc| pc.rule.constant_index()).collect();
    if let Some(idx) = constant {
        if idx.iter().zip(&psi.pieces).any(|(j, pc)| *j >= pc.operators.len()) {
            return Err(Error::Config("constant rule points past its operator list".into()));
        }
        return Ok(MomentEstimate::exact(weigh(&idx), p));
    }
    let values = map_paths(mc.n_paths, |i| {
        integrate_simple_path(psi, spec, &mut mc.stream(i)).map(|path| weigh(&path.selected))
    });
    accumulate(values)?.finish(p)
}

/// `L = B + M` with `B(t) = t·b` and `M` centered.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftMartingaleSplit {
    pub drift: Vec<f64>,
    pub martingale: CylLevySpec,
}

pub fn drift_martingale_split(spec: &CylLevySpec) -> Result<DriftMartingaleSplit> {
    spec.validate()?;
    match spec {
        CylLevySpec::Diagonal { modes } => {
            let mut drift = Vec::with_capacity(modes.len());
            let mut centered = Vec::with_capacity(modes.len());
            for (mode, m) in modes.iter().enumerate() {
                drift.push(m.mean().ok_or(Error::NoMean { mode })?);
                centered.push(m.centered().ok_or(Error::NoMean { mode })?);
            }
            Ok(DriftMartingaleSplit {
                drift,
                martingale: CylLevySpec::Diagonal { modes: centered },
            })
        }
        CylLevySpec::CompoundPoissonCyl { rate, jumps, .. } => {
            let b = spec.mean_vector().expect("compound Poisson has a mean");
            let compensator: Vec<f64> = match jumps {
                JumpVectorLaw::Coordinatewise { .. } => Vec::new(),
                JumpVectorLaw::Atoms { .. } => {
                    let jm = CylLevySpec::CompoundPoissonCyl {
                        rate: *rate,
                        jumps: jumps.clone(),
                        drift: Vec::new(),
                    }
                    .mean_vector()
                    .expect("finite");
                    jm.iter().map(|v| -v).collect()
                }
            };
            Ok(DriftMartingaleSplit {
                drift: b.iter().copied().collect(),
                martingale: CylLevySpec::CompoundPoissonCyl {
                    rate: *rate,
                    jumps: jumps.clone(),
                    drift: compensator,
                },
            })
        }
    }
}

/// Martingale-type constant used for the martingale part: `C_p = 2^{2-p}` in
/// Hilbert space, which gives `C_2 = 1`; `C_1 = 1` by the triangle inequality.
pub fn martingale_type_constant(p: f64, codomain: CodomainNorm) -> Result<f64> {
    if p == 1.0 {
        return Ok(1.0);
    }
    match codomain {
        CodomainNorm::L2 => Ok(2f64.powf(2.0 - p)),
        CodomainNorm::L1 => Err(Error::Precondition("ℓ¹ has martingale type 1 only; use p = 1".into())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadonificationReport {
    pub verdict: BoundVerdict,
    /// `E[π_p(Ψ)^p]`.
    pub pi_moment: MomentEstimate,
    /// `‖L(t - s)‖_p^*`.
    pub weak_norm: f64,
}

/// Compares `E‖J_{s,t}(Ψ)‖^p` with `E[π_p(Ψ)^p]·‖L(t-s)‖_p^{*p}`.
///
/// The history up to `s` is simulated on `history_steps` equal steps.
pub fn verify_radonification_bound(
    psi: &SimpleOperatorRV,
    s: f64,
    t: f64,
    p: f64,
    spec: &CylLevySpec,
    history_steps: usize,
    mc: &McConfig,
) -> Result<RadonificationReport> {
    let report = check_weak_p_condition(spec, p)?;
    if !report.pass {
        return Err(Error::Precondition("weak moment condition fails for the noise".into()));
    }
    if !(t > s) || s < 0.0 {
        return Err(Error::Precondition(format!("need 0 ≤ s < t, got s = {s}, t = {t}")));
    }
    let pis = psi.operators.pi_table(p)?;
    let norm = psi.operators.first().codomain();
    let steps = if s > 0.0 { history_steps.max(1) } else { 0 };
    let samples = map_paths(mc.n_paths, |i| -> Result<(f64, f64)> {
        let mut stream = mc.stream(i);
        let mut history = History::new(spec.dim());
        for k in 0..steps {
            let (a, b) = (s * k as f64 / steps as f64, s * (k + 1) as f64 / steps as f64);
            let mut dl = DVector::zeros(spec.dim());
            spec.add_increment(b - a, &mut stream, dl.as_mut_slice());
            history.push_increment(if k + 1 == steps { s } else { b }, &dl);
        }
        let (j_val, j) = radonify_indexed(psi, s, t, &mut history, spec, &mut stream)?;
        Ok((norm.norm(j_val.as_slice()).powf(p), pis.get(j).powf(p)))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let lhs = samples.iter().map(|x| x.0).collect::<MomentAccumulator>().finish(p)?;
    let pi_moment = samples.iter().map(|x| x.1).collect::<MomentAccumulator>().finish(p)?;
    let ball = psi.operators.first().domain().dual_ball();
    let weak = if p == 2.0 && ball == DualBall::L2 {
        weak_p_norm(spec, t - s, p, &WeakNormEstimator::ClosedFormP2, ball)?
    } else {
        weak_p_norm(
            spec,
            t - s,
            p,
            &WeakNormEstimator::SphereSearch {
                directions: 8,
                mc: mc.derive(0x0077),
            },
            ball,
        )?
    };
    let w_p = weak.value.powf(p);
    let w_p_se = if weak.value > 0.0 { p * weak.value.powf(p - 1.0) * weak.standard_error } else { 0.0 };
    let bound = pi_moment.value * w_p;
    let bound_se = (pi_moment.standard_error * w_p).hypot(pi_moment.value * w_p_se);
    Ok(RadonificationReport {
        verdict: BoundVerdict::new(lhs, bound, bound_se),
        pi_moment,
        weak_norm: weak.value,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub p: f64,
    pub lhs: MomentEstimate,
    /// `T^{p-1}‖B(1)‖^p ‖Ψ‖_Λ^p`.
    pub drift_bound: f64,
    /// `C_p ‖M‖_{R_p}^p ‖Ψ‖_Λ^p`.
    pub martingale_bound: f64,
    /// `2^{p-1}(drift_bound + martingale_bound)`.
    pub rhs: f64,
    pub rhs_se: f64,
    pub lambda: MomentEstimate,
    pub drift_norm: f64,
    pub rp_norm: f64,
    /// True when `‖M‖_{R_p}` came from Monte Carlo.
    pub rp_empirical: bool,
    pub c_p: f64,
    pub verdict: BoundVerdict,
}

/// Monte Carlo check of `E‖I(Ψ)‖^p ≤ 2^{p-1}(T^{p-1}‖B(1)‖^p + C_p‖M‖_{R_p}^p)‖Ψ‖_Λ^p`.
pub fn verify_integral_continuity(
    psi: &SimpleIntegrand,
    spec: &CylLevySpec,
    p: f64,
    c_p: Option<f64>,
    mc: &McConfig,
) -> Result<ContinuityReport> {
    let report = check_weak_p_condition(spec, p)?;
    if !report.pass {
        return Err(Error::Precondition("weak moment condition fails for the noise".into()));
    }
    if !report.admits_integration() {
        return Err(Error::Precondition(format!(
            "modes {:?} have a Gaussian part, which needs p = 2",
            report.gaussian_modes
        )));
    }
    if psi.dim_in() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            got: psi.dim_in(),
        });
    }
    let c_p = match c_p {
        Some(c) => c,
        None => martingale_type_constant(p, psi.codomain())?,
    };
    let split = drift_martingale_split(spec)?;
    let horizon = psi.horizon();
    let lambda = lambda_norm(psi, spec, p, &mc.derive(1))?;
    let domain = psi.pieces[0].operators.first().domain();
    let drift_norm = domain.norm(&split.drift);
    let rp = cyl_rp_norm(&split.martingale, p, horizon, psi.dual_ball(), &mc.derive(2))?;
    let lhs = integral_moment(psi, spec, p, mc)?;
    let drift_factor = horizon.powf(p - 1.0) * drift_norm.powf(p);
    let mart_factor = c_p * rp.value.powf(p);
    let mart_factor_se = if rp.value > 0.0 { c_p * p * rp.value.powf(p - 1.0) * rp.standard_error } else { 0.0 };
    let drift_bound = drift_factor * lambda.value;
    let martingale_bound = mart_factor * lambda.value;
    let scale = 2f64.powf(p - 1.0);
    let rhs = scale * (drift_bound + martingale_bound);
    let rhs_se = scale * ((drift_factor + mart_factor) * lambda.standard_error).hypot(mart_factor_se * lambda.value);
    Ok(ContinuityReport {
        p,
        verdict: BoundVerdict::new(lhs, rhs, rhs_se),
        lhs,
        drift_bound,
        martingale_bound,
        rhs,
        rhs_se,
        lambda,
        drift_norm,
        rp_norm: rp.value,
        rp_empirical: rp.empirical,
        c_p,
    })
}

/// `E‖I(Ψ)‖² = Σ_k (t_{k+1} - t_k) tr(ψ_k Q ψ_kᵀ)` for deterministic Ψ and
/// centered noise with `E[L(1)L(1)ᵀ] = Q`.
pub fn isometry_value(psi: &SimpleIntegrand, spec: &CylLevySpec) -> Result<f64> {
    let ops = psi
        .deterministic_operators()
        .ok_or_else(|| Error::Precondition("isometry needs a deterministic integrand".into()))?;
    if !spec.is_centered() {
        return Err(Error::Precondition("isometry needs centered noise".into()));
    }
    let q = spec
        .second_moment_matrix(1.0)
        .ok_or(Error::InfiniteMoment { mode: 0, p: 2.0 })?;
    Ok(ops
        .iter()
        .zip(psi.partition.windows(2))
        .map(|(op, w)| (w[1] - w[0]) * (op.matrix() * &q * op.matrix().transpose()).trace())
        .sum())
}

/// A process `Ψ(t) = f(t, history)·ψ₀` with `|f| ≤ bound`.
#[derive(Clone)]
pub struct ScalarProcess {
    pub base: FiniteRankOperator,
    pub factor: Factor,
    pub bound: f64,
}

impl fmt::Debug for ScalarProcess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarProcess")
            .field("base", &self.base)
            .field("bound", &self.bound)
            .finish()
    }
}

#[derive(Clone, Debug)]
pub struct Approximation {
    pub integrand: SimpleIntegrand,
    /// `‖Ψ - Ψ_simple‖_Λ`, integrated on `fine` sub-steps per interval.
    pub distance: f64,
    pub distance_se: f64,
}

/// Left-endpoint simple approximation of `process` on `partition`, with the
/// factor rounded to multiples of `pitch`.
pub fn approximate_by_simple(
    process: &ScalarProcess,
    partition: &[f64],
    pitch: f64,
    spec: &CylLevySpec,
    p: f64,
    fine: usize,
    mc: &McConfig,
) -> Result<Approximation> {
    if !(pitch > 0.0) || !(process.bound >= 0.0) {
        return Err(Error::Config("quantization pitch must be positive".into()));
    }
    let levels = (process.bound / pitch).ceil() as usize;
    let rule = QuantizedRule {
        factor: process.factor.clone(),
        pitch,
        levels,
    };
    let rv = SimpleOperatorRV {
        rule: Arc::new(rule.clone()),
        operators: OperatorSet::Grid {
            base: process.base.clone(),
            pitch,
            levels,
        },
    };
    let integrand = SimpleIntegrand::new(partition.to_vec(), vec![rv; partition.len().saturating_sub(1)])?;
    let pi0 = pi_p_certified(&process.base, p)?;
    let fine = fine.max(1);
    let dist = map_paths(mc.n_paths, |i| -> Result<f64> {
        let mut stream = mc.stream(i);
        let mut history = History::new(spec.dim());
        let mut acc = 0.0;
        for w in partition.windows(2) {
            let q_index = rule.select(&history.view(w[0]))?;
            let q = OperatorSet::grid_scale(pitch, levels, q_index);
            let h = (w[1] - w[0]) / fine as f64;
            for m in 0..fine {
                let u = w[0] + m as f64 * h;
                let f = (process.factor)(u, &history.view(u))?;
                acc += h * ((f - q).abs() * pi0).powf(p);
                let mut dl = DVector::zeros(spec.dim());
                spec.add_increment(h, &mut stream, dl.as_mut_slice());
                history.push_increment(if m + 1 == fine { w[1] } else { u + h }, &dl);
            }
        }
        Ok(acc)
    });
    let dist = accumulate(dist)?.finish(p)?;
    let (distance, distance_se) = dist.root();
    Ok(Approximation {
        integrand,
        distance,
        distance_se,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub n: u64,
    /// `E|∫Ψ_n dL|^p / E∫|Ψ_n|^p dt`.
    pub ratio: f64,
    pub ratio_se: f64,
    pub moment: MomentEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeReport {
    pub p: f64,
    pub rows: Vec<RatioRow>,
    pub fit: Option<LogLogFit>,
    pub expected_slope: f64,
    pub pass: bool,
    /// Per-n agreement of the simulated moment with its closed form (3 SE).
    pub closed_form_agrees: Vec<bool>,
    /// Set when `E|L(1)|^p` is infinite.
    pub lhs_infinite: bool,
}

pub const SLOPE_TOL: f64 = 0.05;

fn ratio_rows(spec: &OneDimLevySpec, p: f64, n_list: &[u64], mc: &McConfig) -> Result<Vec<RatioRow>> {
    n_list
        .iter()
        .map(|&n| {
            if n == 0 {
                return Err(Error::Precondition("n must be positive".into()));
            }
            let sub = mc.derive(n);
            let dt = 1.0 / n as f64;
            let moment = map_paths(sub.n_paths, |i| spec.sample(dt, &mut sub.stream(i)).abs().powf(p))
                .into_iter()
                .collect::<MomentAccumulator>()
                .finish(p)?;
            Ok(RatioRow {
                n,
                ratio: moment.value * n as f64,
                ratio_se: moment.standard_error * n as f64,
                moment,
            })
        })
        .collect()
}

fn fit_rows(rows: &[RatioRow]) -> Result<LogLogFit> {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, r.ratio)).collect();
    fit_loglog_slope(&pts)
}

/// Ratio `E|W(1/n)|^p / (1/n)` for `Ψ_n = 1_{[0, 1/n]}` and Brownian `W`,
/// whose log-log slope is `1 - p/2`.
pub fn gaussian_counterexample(p: f64, n_list: &[u64], mc: &McConfig) -> Result<SlopeReport> {
    if !(1.0..=2.0).contains(&p) {
        return Err(Error::Precondition(format!("p must lie in [1, 2], got {p}")));
    }
    let spec = OneDimLevySpec::BrownianMotion { sigma: 1.0 };
    let rows = ratio_rows(&spec, p, n_list, mc)?;
    let fit = fit_rows(&rows)?;
    let expected = 1.0 - p / 2.0;
    let closed_form_agrees = rows
        .iter()
        .map(|r| {
            let exact = (1.0 / r.n as f64).powf(p / 2.0) * gaussian_abs_moment(p);
            (r.moment.value - exact).abs() <= 3.0 * r.moment.standard_error
        })
        .collect();
    Ok(SlopeReport {
        p,
        pass: (fit.slope - expected).abs() <= SLOPE_TOL,
        fit: Some(fit),
        expected_slope: expected,
        rows,
        closed_form_agrees,
        lhs_infinite: false,
    })
}

/// Same ratio for a symmetric α-stable process, slope `(α - p)/α`. The
/// closed-form check is the self-similarity `E|L(1/n)|^p = n^{-p/α} E|L(1)|^p`
/// against an independent estimate at `n = 1`.
pub fn stable_counterexample(alpha: f64, p: f64, n_list: &[u64], mc: &McConfig) -> Result<SlopeReport> {
    if !(1.0..=2.0).contains(&p) {
        return Err(Error::Precondition(format!("p must lie in [1, 2], got {p}")));
    }
    let spec = OneDimLevySpec::SymmetricAlphaStable { alpha, scale: 1.0 };
    spec.validate()?;
    let expected = (alpha - p) / alpha;
    if p >= alpha {
        return Ok(SlopeReport {
            p,
            rows: Vec::new(),
            fit: None,
            expected_slope: expected,
            pass: true,
            closed_form_agrees: Vec::new(),
            lhs_infinite: true,
        });
    }
    let rows = ratio_rows(&spec, p, n_list, mc)?;
    let fit = fit_rows(&rows)?;
    let base = ratio_rows(&spec, p, &[1], &mc.derive(0xba5e))?.remove(0).moment;
    let closed_form_agrees = rows
        .iter()
        .map(|r| {
            let s = (r.n as f64).powf(-p / alpha);
            let se = r.moment.standard_error.hypot(s * base.standard_error);
            (r.moment.value - s * base.value).abs() <= 3.0 * se
        })
        .collect();
    Ok(SlopeReport {
        p,
        pass: (fit.slope - expected).abs() <= SLOPE_TOL,
        fit: Some(fit),
        expected_slope: expected,
        rows,
        closed_form_agrees,
        lhs_infinite: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::JumpLaw;
    use crate::mc::ks_same_law;
    use crate::psumming::DomainNorm;

    fn cp(rate: f64, a: f64) -> OneDimLevySpec {
        OneDimLevySpec::CompoundPoisson {
            rate,
            jumps: JumpLaw::TwoPoint { a },
        }
    }

    fn diag(d: &[f64]) -> FiniteRankOperator {
        FiniteRankOperator::diagonal(d, DomainNorm::L2, CodomainNorm::L2).unwrap()
    }

    fn inv_k(k: usize, scale: f64) -> FiniteRankOperator {
        diag(&(1..=k).map(|j| scale / j as f64).collect::<Vec<_>>())
    }

    #[derive(Debug)]
    struct Peek;

    impl DecisionRule for Peek {
        fn select(&self, h: &HistoryView<'_>) -> Result<usize> {
            h.value_at(h.anchor() + 0.25)?;
            Ok(0)
        }
    }

    #[test]
    fn identity_returns_the_increment() {
        let spec = CylLevySpec::diagonal(vec![cp(2.0, 1.0); 3]);
        let psi = SimpleOperatorRV::deterministic(diag(&[1.0; 3]));
        let mut h = History::new(3);
        let v = radonify(&psi, 0.0, 0.5, &mut h, &spec, &mut RngStream::new(1, 0)).unwrap();
        let mut direct = DVector::zeros(3);
        spec.add_increment(0.5, &mut RngStream::new(1, 0), direct.as_mut_slice());
        assert_eq!(v, direct);
        assert_eq!(h.last_value(), &direct);
    }

    #[test]
    fn zero_operator_gives_zero() {
        let spec = CylLevySpec::diagonal(vec![cp(2.0, 1.0); 2]);
        let psi = SimpleOperatorRV::deterministic(diag(&[0.0; 2]));
        for i in 0..50 {
            let v = radonify(&psi, 0.0, 1.0, &mut History::new(2), &spec, &mut RngStream::new(3, i)).unwrap();
            assert!(v.iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn lookahead_rule_is_rejected() {
        let spec = CylLevySpec::diagonal(vec![cp(1.0, 1.0); 2]);
        let psi = SimpleOperatorRV::new(Arc::new(Peek), vec![diag(&[1.0; 2])]).unwrap();
        let err = radonify(&psi, 0.0, 1.0, &mut History::new(2), &spec, &mut RngStream::new(0, 0)).unwrap_err();
        assert!(matches!(err, Error::Measurability { .. }));
        let integrand = SimpleIntegrand::new(vec![0.0, 0.5, 1.0], vec![psi.clone(), psi]).unwrap();
        assert!(matches!(
            integrate_simple(&integrand, &spec, &mut RngStream::new(0, 0)),
            Err(Error::Measurability { .. })
        ));
    }

    #[test]
    fn radonify_needs_matching_history() {
        let spec = CylLevySpec::diagonal(vec![cp(1.0, 1.0); 2]);
        let psi = SimpleOperatorRV::deterministic(diag(&[1.0; 2]));
        assert!(radonify(&psi, 0.5, 1.0, &mut History::new(2), &spec, &mut RngStream::new(0, 0)).is_err());
        assert!(radonify(&psi, 1.0, 1.0, &mut History::new(2), &spec, &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn deterministic_diagonal_second_moment() {
        let k = 4;
        let rates = [1.0, 2.0, 0.5, 3.0];
        let spec = CylLevySpec::diagonal(rates.iter().map(|r| cp(*r, 1.0)).collect());
        let d = [1.0, 0.5, 2.0, 0.25];
        let psi = SimpleIntegrand::constant(diag(&d), vec![0.0, 0.7]).unwrap();
        let m = integral_moment(&psi, &spec, 2.0, &McConfig::new(5, 100_000)).unwrap();
        let exact: f64 = (0..k).map(|j| d[j] * d[j] * rates[j] * 0.7).sum();
        assert!((m.value - exact).abs() < 3.0 * m.standard_error);
        assert!((isometry_value(&psi, &spec).unwrap() - exact).abs() < 1e-12);
    }

    #[test]
    fn piecewise_isometry() {
        let spec = CylLevySpec::diagonal(vec![cp(1.0, 1.0), cp(2.0, 0.5), OneDimLevySpec::BrownianMotion { sigma: 0.7 }]);
        let pieces = vec![
            SimpleOperatorRV::deterministic(diag(&[1.0, 2.0, 3.0])),
            SimpleOperatorRV::deterministic(diag(&[-1.0, 0.0, 0.5])),
            SimpleOperatorRV::deterministic(diag(&[0.2, 0.2, 0.2])),
        ];
        let psi = SimpleIntegrand::new(vec![0.0, 0.3, 0.5, 1.2], pieces).unwrap();
        let exact = isometry_value(&psi, &spec).unwrap();
        let by_hand = 0.3 * (1.0 + 4.0 * 0.5 + 9.0 * 0.49) + 0.2 * (1.0 + 0.25 * 0.49) + 0.7 * 0.04 * (1.0 + 0.5 + 0.49);
        assert!((exact - by_hand).abs() < 1e-12);
        let m = integral_moment(&psi, &spec, 2.0, &McConfig::new(6, 100_000)).unwrap();
        assert!((m.value - exact).abs() < 3.0 * m.standard_error);
    }

    #[test]
    fn refinement_keeps_the_law() {
        let spec = CylLevySpec::diagonal(vec![cp(2.0, 1.0), OneDimLevySpec::BrownianMotion { sigma: 1.0 }]);
        let op = diag(&[1.0, 0.5]);
        let coarse = SimpleIntegrand::constant(op.clone(), vec![0.0, 1.0]).unwrap();
        let fine = SimpleIntegrand::constant(op, vec![0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
        let n = 50_000;
        let a: Vec<f64> = (0..n)
            .map(|i| integrate_simple(&coarse, &spec, &mut RngStream::new(10, i)).unwrap()[0])
            .collect();
        let b: Vec<f64> = (0..n)
            .map(|i| integrate_simple(&fine, &spec, &mut RngStream::new(11, i)).unwrap()[0])
            .collect();
        assert!(ks_same_law(&a, &b, 1e-3));
    }

    #[test]
    fn integral_is_linear_on_common_noise() {
        let spec = CylLevySpec::diagonal(vec![cp(1.0, 1.0); 3]);
        let part = vec![0.0, 0.4, 1.0];
        let a = [diag(&[1.0, 2.0, 3.0]), diag(&[0.5, 0.5, 0.5])];
        let b = [diag(&[-1.0, 0.0, 1.0]), diag(&[2.0, 1.0, 0.0])];
        let build = |ops: Vec<FiniteRankOperator>| {
            SimpleIntegrand::new(part.clone(), ops.into_iter().map(SimpleOperatorRV::deterministic).collect()).unwrap()
        };
        let ia = build(a.to_vec());
        let ib = build(b.to_vec());
        let sum = build(a.iter().zip(&b).map(|(x, y)| x.add(y).unwrap()).collect());
        for i in 0..100 {
            let x = integrate_simple(&ia, &spec, &mut RngStream::new(2, i)).unwrap();
            let y = integrate_simple(&ib, &spec, &mut RngStream::new(2, i)).unwrap();
            let z = integrate_simple(&sum, &spec, &mut RngStream::new(2, i)).unwrap();
            assert!((x + y - z).amax() < 1e-12);
        }
    }

    #[test]
    fn disjoint_intervals_are_uncorrelated() {
        let spec = CylLevySpec::diagonal(vec![cp(1.0, 1.0)]);
        let rule: Arc<dyn DecisionRule> = Arc::new(RuleKind::Threshold { level: 0.5 });
        let piece = SimpleOperatorRV::new(rule, vec![diag(&[1.0]), diag(&[2.0])]).unwrap();
        let psi = SimpleIntegrand::new(vec![0.0, 1.0, 2.0], vec![piece.clone(), piece]).unwrap();
        let n = 50_000;
        let prods: Vec<f64> = (0..n)
            .map(|i| {
                let path = integrate_simple_path(&psi, &spec, &mut RngStream::new(8, i)).unwrap();
                path.contributions[0][0] * path.contributions[1][0]
            })
            .collect();
        let mean = prods.iter().sum::<f64>() / n as f64;
        let sd = (prods.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!(mean.abs() < 3.0 * sd / (n as f64).sqrt(), "covariance {mean}");
    }

    #[test]
    fn lambda_norm_examples() {
        let spec = CylLevySpec::diagonal(vec![cp(1.0, 1.0); 3]);
        let op = diag(&[1.0, 2.0, 2.0]);
        let psi = SimpleIntegrand::constant(op.clone(), vec![0.0, 0.5, 2.0]).unwrap();
        for p in [1.0, 1.5, 2.0] {
            let l = lambda_norm(&psi, &spec, p, &McConfig::new(0, 10)).unwrap();
            let (r, se) = l.root();
            assert!((r - 2f64.powf(1.0 / p) * pi_p_certified(&op, p).unwrap()).abs() < 1e-12);
            assert_eq!(se, 0.0);
            let scaled = lambda_norm(&psi.scale(-3.0), &spec, p, &McConfig::new(0, 10)).unwrap();
            assert!((scaled.root().0 - 3.0 * r).abs() < 1e-12);
        }
        let zero = SimpleIntegrand::constant(diag(&[0.0; 3]), vec![0.0, 1.0]).unwrap();
        assert_eq!(lambda_norm(&zero, &spec, 1.5, &McConfig::new(0, 10)).unwrap().value, 0.0);
    }

    #[test]
    fn split_examples() {
        let spec = CylLevySpec::diagonal(vec![
            cp(1.0, 1.0),
            OneDimLevySpec::DriftedCompoundPoisson {
                drift: 1.0,
                rate: 2.0,
                jumps: JumpLaw::TwoPoint { a: 0.5 },
            },
        ]);
        let s = drift_martingale_split(&spec).unwrap();
        assert_eq!(s.drift, vec![0.0, 1.0]);
        assert!(s.martingale.is_centered());
        let stable = CylLevySpec::diagonal(vec![cp(1.0, 1.0), OneDimLevySpec::SymmetricAlphaStable { alpha: 0.9, scale: 1.0 }]);
        assert_eq!(drift_martingale_split(&stable).unwrap_err(), Error::NoMean { mode: 1 });
    }

    #[test]
    fn split_recombines_in_law() {
        let mode = OneDimLevySpec::DriftedCompoundPoisson {
            drift: 1.0,
            rate: 2.0,
            jumps: JumpLaw::SymmetricExponential { theta: 0.5 },
        };
        let spec = CylLevySpec::diagonal(vec![mode.clone()]);
        let s = drift_martingale_split(&spec).unwrap();
        let n = 100_000;
        let t = 0.8;
        let mut a_stream = RngStream::new(31, 0);
        let a: Vec<f64> = (0..n).map(|_| mode.sample(t, &mut a_stream)).collect();
        let mut b_stream = RngStream::new(31, 1);
        let b: Vec<f64> = (0..n)
            .map(|_| {
                let mut v = [0.0];
                s.martingale.add_increment(t, &mut b_stream, &mut v);
                s.drift[0] * t + v[0]
            })
            .collect();
        assert!(ks_same_law(&a, &b, 1e-3));
    }

    #[test]
    fn atom_jumps_are_compensated() {
        let spec = CylLevySpec::CompoundPoissonCyl {
            rate: 2.0,
            jumps: JumpVectorLaw::Atoms {
                points: vec![vec![1.0, 0.0], vec![0.0, 2.0]],
                weights: vec![0.5, 0.5],
            },
            drift: vec![0.5, 0.0],
        };
        let s = drift_martingale_split(&spec).unwrap();
        assert_eq!(s.drift, vec![1.5, 2.0]);
        assert!(s.martingale.is_centered());
    }

    #[test]
    fn radonification_bound_two_valued_rule() {
        let k = 8;
        // unequal rates keep the weak norm from being attained by ψ
        let spec = CylLevySpec::diagonal((0..k).map(|j| cp(1.0 + 0.5 * j as f64, 1.0)).collect());
        let rule: Arc<dyn DecisionRule> = Arc::new(RuleKind::HistoryParity { unit: 1.0, modulus: 2 });
        let psi = SimpleOperatorRV::new(rule, vec![inv_k(k, 1.0), inv_k(k, 2.0)]).unwrap();
        let mc = McConfig::new(12, 20_000);
        let r = verify_radonification_bound(&psi, 0.5, 0.8, 2.0, &spec, 4, &mc).unwrap();
        assert!(r.verdict.pass);
        assert!(r.verdict.ratio() < 1.0);
        // stationary increments: same bound at (0, h) and (τ, τ + h)
        let r0 = verify_radonification_bound(&psi, 0.0, 0.3, 2.0, &spec, 4, &mc.derive(1)).unwrap();
        assert!((r0.weak_norm - r.weak_norm).abs() < 1e-12);
        let zero = SimpleOperatorRV::deterministic(diag(&[0.0; 8]));
        let rz = verify_radonification_bound(&zero, 0.0, 1.0, 1.5, &spec, 1, &McConfig::new(0, 1000)).unwrap();
        assert!(rz.verdict.pass && rz.verdict.estimate.value == 0.0 && rz.verdict.bound == 0.0);
    }

    #[test]
    fn continuity_drift_only_is_exact() {
        let modes = [1.0, -0.5, 2.0]
            .iter()
            .map(|b| OneDimLevySpec::DriftedCompoundPoisson {
                drift: *b,
                rate: 0.0,
                jumps: JumpLaw::TwoPoint { a: 1.0 },
            })
            .collect();
        let spec = CylLevySpec::diagonal(modes);
        let pieces = vec![
            SimpleOperatorRV::deterministic(diag(&[1.0, 2.0, 0.5])),
            SimpleOperatorRV::deterministic(diag(&[0.5, -1.0, 1.0])),
        ];
        let psi = SimpleIntegrand::new(vec![0.0, 0.5, 1.5], pieces).unwrap();
        for p in [1.0, 1.5, 2.0] {
            let r = verify_integral_continuity(&psi, &spec, p, None, &McConfig::new(1, 16)).unwrap();
            let i = DVector::<f64>::from_vec(vec![0.5 * 1.0 + 0.5, 0.5 * -1.0 + 0.5, 0.5 * 1.0 + 2.0]);
            assert!((r.lhs.value - i.norm().powf(p)).abs() < 1e-12);
            assert_eq!(r.lhs.standard_error, 0.0);
            assert_eq!(r.martingale_bound, 0.0);
            assert!(r.lhs.value <= r.drift_bound);
        }
    }

    #[test]
    fn continuity_martingale_only_p2() {
        let spec = CylLevySpec::diagonal(vec![cp(1.0, 1.0), cp(3.0, 0.5), cp(0.5, 2.0)]);
        let psi = SimpleIntegrand::constant(diag(&[1.0, 0.5, 0.25]), vec![0.0, 0.5, 1.0]).unwrap();
        let r = verify_integral_continuity(&psi, &spec, 2.0, None, &McConfig::new(2, 20_000)).unwrap();
        assert_eq!(r.drift_bound, 0.0);
        assert!(r.verdict.pass);
        assert!(isometry_value(&psi, &spec).unwrap() <= r.rhs);
    }

    #[test]
    fn continuity_rejects_gaussian_below_two() {
        let spec = CylLevySpec::diagonal(vec![OneDimLevySpec::BrownianMotion { sigma: 1.0 }]);
        let psi = SimpleIntegrand::constant(diag(&[1.0]), vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            verify_integral_continuity(&psi, &spec, 1.5, None, &McConfig::new(0, 10)),
            Err(Error::Precondition(_))
        ));
    }

    fn deterministic_process(f: impl Fn(f64) -> f64 + Send + Sync + 'static, bound: f64) -> ScalarProcess {
        ScalarProcess {
            base: diag(&[1.0]),
            factor: Arc::new(move |t, _| Ok(f(t))),
            bound,
        }
    }

    #[test]
    fn approximation_of_simple_process_is_exact() {
        let spec = CylLevySpec::diagonal(vec![cp(1.0, 1.0)]);
        let proc_ = deterministic_process(|t| if t < 0.5 { 0.25 } else { 0.75 }, 1.0);
        let a = approximate_by_simple(&proc_, &[0.0, 0.5, 1.0], 0.25, &spec, 1.5, 8, &McConfig::new(0, 4)).unwrap();
        assert_eq!(a.distance, 0.0);
    }

    #[test]
    fn approximation_error_halves_with_the_mesh() {
        let spec = CylLevySpec::diagonal(vec![cp(1.0, 1.0)]);
        let proc_ = deterministic_process(|t| 1.0 + t, 2.0);
        let mut prev = f64::INFINITY;
        for level in 1..=5 {
            let n = 1usize << level;
            let part: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
            let a = approximate_by_simple(&proc_, &part, 1e-9, &spec, 2.0, 64, &McConfig::new(0, 4)).unwrap();
            if prev.is_finite() {
                let r = a.distance / prev;
                assert!((r - 0.5).abs() < 0.02, "ratio {r}");
            }
            prev = a.distance;
        }
    }

    #[test]
    fn quantization_error_is_bounded_by_the_pitch() {
        let spec = CylLevySpec::diagonal(vec![cp(1.0, 1.0)]);
        let proc_ = deterministic_process(|_| 0.337, 1.0);
        let pitch = 0.1;
        let a = approximate_by_simple(&proc_, &[0.0, 2.0], pitch, &spec, 1.0, 4, &McConfig::new(0, 4)).unwrap();
        assert!(a.distance <= pitch * 2.0);
        assert!((a.distance - 0.037 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_ratio_slopes() {
        let ns: Vec<u64> = (0..=10).map(|k| 1 << k).collect();
        for (p, slope) in [(1.0, 0.5), (1.5, 0.25), (2.0, 0.0)] {
            let r = gaussian_counterexample(p, &ns, &McConfig::new(40, 20_000)).unwrap();
            assert!((r.fit.unwrap().slope - slope).abs() < SLOPE_TOL, "p={p}: {:?}", r.fit);
        }
    }

    #[test]
    fn stable_ratio_slope_and_infinite_case() {
        let ns: Vec<u64> = (0..=10).map(|k| 1 << k).collect();
        let r = stable_counterexample(1.5, 1.0, &ns, &McConfig::new(41, 20_000)).unwrap();
        assert!(r.pass, "{:?}", r.fit);
        let inf = stable_counterexample(1.2, 1.5, &ns, &McConfig::new(0, 10)).unwrap();
        assert!(inf.lhs_infinite);
    }

    #[test]
    fn integrand_file_resolves_names() {
        let json = r#"{
            "operators": {"a": {"rows": [[1.0, 0.0], [0.0, 0.5]], "domain_norm": "l2", "codomain_norm": "l2"},
                          "b": {"rows": [[2.0, 0.0], [0.0, 1.0]], "domain_norm": "l2", "codomain_norm": "l2"}},
            "partition": [0.0, 0.5, 1.0],
            "pieces": [{"rule": {"kind": "constant", "index": 0}, "operators": ["a"]},
                       {"rule": {"kind": "history-parity", "unit": 0.5, "modulus": 2}, "operators": ["a", "b"]}]
        }"#;
        let f: IntegrandFile = serde_json::from_str(json).unwrap();
        let psi = SimpleIntegrand::try_from(f.clone()).unwrap();
        assert_eq!(psi.pieces().len(), 2);
        let mut bad = f;
        bad.pieces[0].operators = vec!["c".into()];
        assert!(SimpleIntegrand::try_from(bad).is_err());
    }
}
