//! Gaussian orthant probabilities `Pr(Z_0 > a_0, …, Z_{n−1} > a_{n−1})`.
//!
//! For a stationary OU chain sampled on a regular grid the joint tail factors
//! into a product of one-step conditional tails,
//!
//! ```text
//! Pr(∩ Z_i > a_i) = Φ̄(a_0) · ∏_{i≥1} Pr(Z_i > a_i | Z_0 > a_0, …, Z_{i−1} > a_{i−1}),
//! ```
//!
//! and the conditional density of `Z_i` given the past events is propagated
//! one step at a time through the transition kernel `N(ρu, 1 − ρ²)`. Each step
//! costs one density integral and one tail integral over a truncated grid.
//!
//! Degenerate limits (`ρ = 0`, `ρ = 1`) have closed forms, and a seeded
//! Monte-Carlo estimator handles arbitrary covariances for validation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{composite_rule, std_normal_cdf, std_normal_pdf, QuadRule, GL_PANEL};
use crate::par::Exec;

pub use crate::numeric::std_normal_tail;

/// Discretization of the conditional-density recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// nodes per stage
    pub m: usize,
    /// truncation half-width in standard units
    #[serde(rename = "L", alias = "l")]
    pub l: f64,
    #[serde(default)]
    pub rule: QuadRule,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            m: 400,
            l: 8.0,
            rule: QuadRule::GaussLegendre,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m < 16 {
            return Err(Error::invalid(format!("quadrature needs m >= 16, got {}", self.m)));
        }
        if !(self.l.is_finite() && self.l >= 4.0) {
            return Err(Error::invalid(format!("quadrature needs L >= 4, got {}", self.l)));
        }
        Ok(())
    }
}

/// Kernel widths below this many panel widths switch the GL rule to refinement.
const PANEL_PER_KERNEL: f64 = 2.0;
/// Largest refined node count before falling back to product integration.
const MAX_RULE_NODES: usize = 2000;
const MIN_LINEAR_NODES: usize = 4000;
const MAX_LINEAR_NODES: usize = 16000;
/// Standardized distance beyond which Gaussian factors are treated as 0 or 1.
const NEGLIGIBLE_Z: f64 = 12.0;

/// `∏ Φ̄(a_i)`: independent components.
pub fn orthant_iid(a: &[f64]) -> f64 {
    a.iter().map(|&x| std_normal_tail(x)).product()
}

/// `Φ̄(max a_i)`: one shared component.
pub fn orthant_frozen(a: &[f64]) -> f64 {
    std_normal_tail(a.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Prefix products for the independent case: entry `j` is `∏_{i≤j} Φ̄(a_i)`.
pub fn iid_prefixes(a: &[f64]) -> Vec<f64> {
    a.iter()
        .scan(1.0, |acc, &x| {
            *acc *= std_normal_tail(x);
            Some(*acc)
        })
        .collect()
}

/// Prefix maxima for the frozen case: entry `j` is `Φ̄(max_{i≤j} a_i)`.
pub fn frozen_prefixes(a: &[f64]) -> Vec<f64> {
    a.iter()
        .scan(f64::NEG_INFINITY, |acc, &x| {
            *acc = acc.max(x);
            Some(std_normal_tail(*acc))
        })
        .collect()
}

/// What to do with a threshold above the truncation bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Overflow {
    Fail,
    /// The joint tail is below `Φ̄(L)`; report it as zero.
    Vanish,
}

/// Conditional density of the current chain state on a node set, together
/// with the one-step transition it will be pushed through.
struct ChainState {
    rho: f64,
    sigma: f64,
    repr: Repr,
    /// total mass of `q` under the representation's own rule
    mass: f64,
}

enum Repr {
    /// quadrature nodes/weights with density values
    Rule { nodes: Vec<f64>, weights: Vec<f64>, q: Vec<f64> },
    /// equispaced nodes, density linear in between; integrals against the
    /// Gaussian kernel are evaluated in closed form per segment
    Linear { lo: f64, h: f64, q: Vec<f64> },
}

/// Layout of one stage's node set on `[lo, hi]`.
#[derive(Debug, Clone, Copy)]
enum Layout {
    Rule { rule: QuadRule, m: usize },
    Linear { m: usize },
}

fn choose_layout(spec: &QuadratureSpec, rho: f64, sigma: f64, width: f64) -> Layout {
    let base = spec.m;
    let kernel = sigma / rho;
    let needed = match spec.rule {
        QuadRule::GaussLegendre => {
            let panels = (width / (PANEL_PER_KERNEL * kernel)).ceil() as usize;
            (panels * GL_PANEL).max(base)
        }
        // second-order rule: keep several nodes per kernel width
        QuadRule::Trapezoid => ((width / (0.1 * kernel)).ceil() as usize).max(base),
    };
    if needed <= MAX_RULE_NODES.max(base) {
        Layout::Rule { rule: spec.rule, m: needed }
    } else {
        let m = ((4.0 * width / kernel).ceil() as usize).clamp(MIN_LINEAR_NODES, MAX_LINEAR_NODES);
        Layout::Linear { m: m.max(base) }
    }
}

impl Repr {
    fn build(layout: Layout, lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> Repr {
        match layout {
            Layout::Rule { rule, m } => {
                let (nodes, weights) = composite_rule(rule, lo, hi, m);
                let q = nodes.iter().map(|&u| f(u)).collect();
                Repr::Rule { nodes, weights, q }
            }
            Layout::Linear { m } => {
                let h = (hi - lo) / (m - 1) as f64;
                let q = (0..m).map(|i| f(lo + i as f64 * h)).collect();
                Repr::Linear { lo, h, q }
            }
        }
    }

    fn mass(&self) -> f64 {
        match self {
            Repr::Rule { weights, q, .. } => weights.iter().zip(q).map(|(w, q)| w * q).sum(),
            Repr::Linear { h, q, .. } => {
                let inner: f64 = q.iter().sum();
                h * (inner - 0.5 * (q[0] + q[q.len() - 1]))
            }
        }
    }
}

impl ChainState {
    fn new(rho: f64, repr: Repr) -> Self {
        let mass = repr.mass();
        Self {
            rho,
            sigma: (1.0 - rho * rho).sqrt(),
            repr,
            mass,
        }
    }

    /// Unnormalized density of the next state at `y`: `∫ K(u, y) q(u) du`.
    fn next_density(&self, y: f64) -> f64 {
        let (rho, sigma) = (self.rho, self.sigma);
        match &self.repr {
            Repr::Rule { nodes, weights, q } => {
                // nodes ascend; only a band around y/ρ carries weight
                let reach = NEGLIGIBLE_Z * sigma / rho;
                let first = nodes.partition_point(|&u| u < y / rho - reach);
                let last = nodes.partition_point(|&u| u <= y / rho + reach);
                let mut acc = 0.0;
                for i in first..last {
                    acc += weights[i] * q[i] * std_normal_pdf((y - rho * nodes[i]) / sigma);
                }
                acc / sigma
            }
            Repr::Linear { lo, h, q } => {
                // as a function of u the kernel is N(y/ρ, (σ/ρ)²)/ρ
                let centre = y / rho;
                let s = sigma / rho;
                let span = NEGLIGIBLE_Z * s;
                let n = q.len();
                let first = (((centre - span - lo) / h).floor().max(0.0) as usize).min(n - 1);
                let last = (((centre + span - lo) / h).ceil().max(0.0) as usize).min(n - 1);
                let mut acc = 0.0;
                for i in first..last {
                    let u0 = lo + i as f64 * h;
                    let (z0, z1) = ((u0 - centre) / s, (u0 + h - centre) / s);
                    let mass = std_normal_cdf(z1) - std_normal_cdf(z0);
                    // ∫ (u − u0) N(u) du over the segment
                    let first_moment = (centre - u0) * mass - s * (std_normal_pdf(z1) - std_normal_pdf(z0));
                    let slope = (q[i + 1] - q[i]) / h;
                    acc += q[i] * mass + slope * first_moment;
                }
                acc / rho
            }
        }
    }

    /// Unnormalized `Pr(next state > c)`: `∫ Φ̄((c − ρu)/σ) q(u) du`.
    fn next_tail(&self, c: f64) -> f64 {
        if c == f64::NEG_INFINITY {
            return self.mass;
        }
        let (rho, sigma) = (self.rho, self.sigma);
        match &self.repr {
            Repr::Rule { nodes, weights, q } => nodes
                .iter()
                .zip(weights)
                .zip(q)
                .map(|((&u, &w), &qu)| w * qu * std_normal_tail((c - rho * u) / sigma))
                .sum(),
            Repr::Linear { lo, h, q } => {
                // with s(u) = (ρu − c)/σ the factor is Φ(s), s linear in u
                let beta = rho / sigma;
                let mut acc = 0.0;
                for i in 0..q.len() - 1 {
                    let u0 = lo + i as f64 * h;
                    let (s0, s1) = (beta * u0 - c / sigma, beta * (u0 + h) - c / sigma);
                    if s1 < -NEGLIGIBLE_Z {
                        continue;
                    }
                    if s0 > NEGLIGIBLE_Z {
                        acc += 0.5 * h * (q[i] + q[i + 1]);
                        continue;
                    }
                    // ∫Φ(s)ds = sΦ + φ,  ∫sΦ(s)ds = ((s² − 1)Φ + sφ)/2
                    let prim0 = |s: f64| s * std_normal_cdf(s) + std_normal_pdf(s);
                    let prim1 = |s: f64| 0.5 * ((s * s - 1.0) * std_normal_cdf(s) + s * std_normal_pdf(s));
                    let i0 = (prim0(s1) - prim0(s0)) / beta;
                    // ∫ (u − u0) Φ du = ∫ (s − s0)/β Φ(s) ds/β
                    let i1 = ((prim1(s1) - prim1(s0)) - s0 * (prim0(s1) - prim0(s0))) / (beta * beta);
                    let slope = (q[i + 1] - q[i]) / h;
                    acc += q[i] * i0 + slope * i1;
                }
                acc
            }
        }
    }
}

fn validate_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "OU step correlation must lie in (0, 1), got {rho}"
        )))
    }
}

fn validate_thresholds(a: &[f64]) -> Result<()> {
    if a.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::invalid("thresholds must be real or -inf"));
    }
    Ok(())
}

/// Joint tail probabilities of every prefix of `a` for the stationary OU chain
/// with step correlation `rho`: entry `j` is `Pr(Z_0 > a_0, …, Z_j > a_j)`.
pub(crate) fn ou_prefixes(
    a: &[f64],
    rho: f64,
    spec: &QuadratureSpec,
    overflow: Overflow,
) -> Result<Vec<f64>> {
    ou_prefixes_until(a, rho, spec, overflow, 0.0)
}

/// [`ou_prefixes`] that stops once the joint tail drops below `floor`; the
/// remaining entries are reported as zero.
pub(crate) fn ou_prefixes_until(
    a: &[f64],
    rho: f64,
    spec: &QuadratureSpec,
    overflow: Overflow,
    floor: f64,
) -> Result<Vec<f64>> {
    validate_thresholds(a)?;
    let mut chain = OuChain::new(rho, spec, overflow)?;
    let mut out = Vec::with_capacity(a.len());
    for &c in a {
        let joint = chain.push(c)?;
        out.push(joint);
        if joint == 0.0 || joint < floor {
            break;
        }
    }
    out.resize(a.len(), 0.0);
    Ok(out)
}

/// Incremental form of the recursion: each [`OuChain::push`] appends one
/// threshold and returns the joint tail of all thresholds so far.
pub(crate) struct OuChain {
    rho: f64,
    sigma: f64,
    spec: QuadratureSpec,
    overflow: Overflow,
    state: Option<ChainState>,
    /// threshold of the last stage, not yet folded into `state`
    pending: Option<(f64, f64)>,
    joint: f64,
    len: usize,
}

impl OuChain {
    pub(crate) fn new(rho: f64, spec: &QuadratureSpec, overflow: Overflow) -> Result<Self> {
        validate_rho(rho)?;
        spec.validate()?;
        Ok(Self {
            rho,
            sigma: (1.0 - rho * rho).sqrt(),
            spec: *spec,
            overflow,
            state: None,
            pending: None,
            joint: 1.0,
            len: 0,
        })
    }

    pub(crate) fn push(&mut self, c: f64) -> Result<f64> {
        if c.is_nan() || c == f64::INFINITY {
            return Err(Error::invalid("thresholds must be real or -inf"));
        }
        let i = self.len;
        self.len += 1;
        if self.joint == 0.0 {
            return Ok(0.0);
        }
        let l = self.spec.l;
        if c >= l {
            if self.overflow == Overflow::Fail {
                return Err(Error::Quadrature(format!(
                    "threshold a[{i}] = {c} exceeds the truncation bound L = {l}; enlarge L"
                )));
            }
            self.joint = 0.0;
            return Ok(0.0);
        }
        let Some(prev) = self.state.take() else {
            let p0 = std_normal_tail(c);
            let lo = c.max(-l);
            let layout = choose_layout(&self.spec, self.rho, self.sigma, l - lo);
            self.state = Some(ChainState::new(self.rho, Repr::build(layout, lo, l, |u| std_normal_pdf(u) / p0)));
            self.joint = p0;
            return Ok(p0);
        };
        let state = match self.pending.take() {
            Some((lo, norm)) => {
                let layout = choose_layout(&self.spec, self.rho, self.sigma, l - lo);
                ChainState::new(self.rho, Repr::build(layout, lo, l, |y| prev.next_density(y) / norm))
            }
            None => prev,
        };
        if !(state.mass > 0.0) {
            self.joint = 0.0;
            return Ok(0.0);
        }
        let factor = (state.next_tail(c) / state.mass).clamp(0.0, 1.0);
        self.joint *= factor;
        if factor > 0.0 {
            self.pending = Some((c.max(-l), state.mass * factor));
        }
        self.state = Some(state);
        Ok(self.joint)
    }
}

/// `Pr(∩ Z_i > a_i)` for the stationary OU chain with step correlation `rho`.
///
/// `-∞` thresholds impose nothing. A finite threshold at or above `spec.l`
/// is a quadrature failure.
pub fn ou_orthant(a: &[f64], rho: f64, spec: &QuadratureSpec) -> Result<f64> {
    Ok(ou_prefixes(a, rho, spec, Overflow::Fail)?.last().copied().unwrap_or(1.0))
}

/// All prefix probabilities of [`ou_orthant`] from a single recursion.
pub fn ou_orthant_prefixes(a: &[f64], rho: f64, spec: &QuadratureSpec) -> Result<Vec<f64>> {
    ou_prefixes(a, rho, spec, Overflow::Fail)
}

/// Conditional law of `Z_n` given `Z_0 > a_0, …, Z_{n−1} > a_{n−1}` on an
/// equispaced grid over `[−L, L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalTail {
    pub nodes: Vec<f64>,
    /// density `ψ_n` at the nodes
    pub density: Vec<f64>,
    /// tail `Ψ̄_n(y) = Pr(Z_n > y | past)` at the nodes
    pub tail: Vec<f64>,
}

/// Builds [`ConditionalTail`] for the conditioning thresholds `past`, sampled
/// at `grid_points` equispaced nodes.
pub fn conditional_tail(
    past: &[f64],
    rho: f64,
    spec: &QuadratureSpec,
    grid_points: usize,
) -> Result<ConditionalTail> {
    validate_rho(rho)?;
    spec.validate()?;
    validate_thresholds(past)?;
    let l = spec.l;
    let nodes: Vec<f64> = (0..grid_points.max(2))
        .map(|i| -l + 2.0 * l * i as f64 / (grid_points.max(2) - 1) as f64)
        .collect();
    let Some((&a0, rest)) = past.split_first() else {
        return Ok(ConditionalTail {
            density: nodes.iter().map(|&y| std_normal_pdf(y)).collect(),
            tail: nodes.iter().map(|&y| std_normal_tail(y)).collect(),
            nodes,
        });
    };
    let sigma = (1.0 - rho * rho).sqrt();
    let layout = |lo: f64| choose_layout(spec, rho, sigma, l - lo);
    if a0 >= l || rest.iter().any(|&c| c >= l) {
        return Err(Error::Quadrature(format!("conditioning threshold beyond L = {l}")));
    }
    let p0 = std_normal_tail(a0);
    let lo = a0.max(-l);
    let mut state = ChainState::new(rho, Repr::build(layout(lo), lo, l, |u| std_normal_pdf(u) / p0));
    for &c in rest {
        let factor = state.next_tail(c) / state.mass;
        if !(factor > 0.0) {
            return Err(Error::Quadrature("conditioning event has zero probability".into()));
        }
        let norm = state.mass * factor;
        let lo = c.max(-l);
        let repr = Repr::build(layout(lo), lo, l, |y| state.next_density(y) / norm);
        state = ChainState::new(rho, repr);
    }
    let density = nodes.iter().map(|&y| state.next_density(y) / state.mass).collect();
    let tail = nodes.iter().map(|&y| state.next_tail(y) / state.mass).collect();
    Ok(ConditionalTail { nodes, density, tail })
}

/// Covariance of a Gaussian vector sampled at `times` from a stationary
/// process with autocovariance `σ̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpec {
    pub times: Vec<f64>,
    matrix: Vec<Vec<f64>>,
}

impl CovarianceSpec {
    pub fn from_autocov(times: Vec<f64>, autocov: impl Fn(f64) -> f64) -> Result<Self> {
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("sample times must be strictly increasing"));
        }
        let matrix = times
            .iter()
            .map(|&ti| times.iter().map(|&tj| autocov((ti - tj).abs())).collect())
            .collect();
        Ok(Self { times, matrix })
    }

    /// `n` samples one step apart from a chain with step correlation `rho`.
    pub fn ou_chain(n: usize, rho: f64) -> Result<Self> {
        Self::from_autocov((0..n).map(|i| i as f64).collect(), |lag| rho.powf(lag))
    }

    pub fn dim(&self) -> usize {
        self.times.len()
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.matrix
    }

    /// Lower-triangular factor `L` with `L Lᵀ = Σ`; columns with a vanishing
    /// pivot are zeroed so semi-definite matrices are accepted.
    pub fn cholesky(&self) -> Result<Vec<Vec<f64>>> {
        let n = self.dim();
        let scale = (0..n).map(|i| self.matrix[i][i].abs()).fold(0.0, f64::max).max(1e-300);
        let tol = 1e-10 * scale;
        let mut lower = vec![vec![0.0; n]; n];
        for j in 0..n {
            let d = self.matrix[j][j] - (0..j).map(|k| lower[j][k] * lower[j][k]).sum::<f64>();
            if d < -tol {
                return Err(Error::Factorization(format!(
                    "negative pivot {d} at column {j}; covariance is not positive semi-definite"
                )));
            }
            if d <= tol {
                for i in j + 1..n {
                    let off = self.matrix[i][j] - (0..j).map(|k| lower[i][k] * lower[j][k]).sum::<f64>();
                    if off.abs() > 1e-8 * scale.sqrt() {
                        return Err(Error::Factorization(format!(
                            "inconsistent dependent column {j}; covariance is not positive semi-definite"
                        )));
                    }
                }
                continue;
            }
            let pivot = d.sqrt();
            lower[j][j] = pivot;
            for i in j + 1..n {
                let off = self.matrix[i][j] - (0..j).map(|k| lower[i][k] * lower[j][k]).sum::<f64>();
                lower[i][j] = off / pivot;
            }
        }
        Ok(lower)
    }
}

const MC_CHUNK: usize = 1 << 14;

/// Monte-Carlo estimate of `Pr(Y > a componentwise)` for `Y ~ N(0, Σ)` with
/// its binomial standard error. Chunk `c` draws from stream `c` of a ChaCha8
/// generator keyed by `seed`, so the result does not depend on threading.
pub fn mvn_orthant_mc(
    cov: &CovarianceSpec,
    a: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    mvn_orthant_mc_with(cov, a, n_samples, seed, Exec::default())
}

pub fn mvn_orthant_mc_with(
    cov: &CovarianceSpec,
    a: &[f64],
    n_samples: usize,
    seed: u64,
    exec: Exec,
) -> Result<(f64, f64)> {
    if n_samples == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    if a.len() != cov.dim() {
        return Err(Error::invalid(format!(
            "{} thresholds for a {}-dimensional covariance",
            a.len(),
            cov.dim()
        )));
    }
    validate_thresholds(a)?;
    let lower = cov.cholesky()?;
    let n = cov.dim();
    let chunks = n_samples.div_ceil(MC_CHUNK);
    let hits: u64 = exec
        .map_range(chunks, |c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = MC_CHUNK.min(n_samples - c * MC_CHUNK);
            let mut xi = vec![0.0; n];
            let mut hits = 0u64;
            for _ in 0..count {
                for v in xi.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                let inside = (0..n).all(|i| {
                    let y: f64 = (0..=i).map(|k| lower[i][k] * xi[k]).sum();
                    y > a[i]
                });
                hits += inside as u64;
            }
            hits
        })
        .into_iter()
        .sum();
    let p = hits as f64 / n_samples as f64;
    Ok((p, (p * (1.0 - p) / n_samples as f64).sqrt()))
}
