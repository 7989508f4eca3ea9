//! Delay models driven by a stationary standard Gaussian process `Z`.
//!
//! A packet generated at `n·τ` sees the delay `g(Z_{nτ})` for a monotone link
//! `g`. This module holds the two supported links, their marginal and lag
//! moments, moment-matching calibration and the Ornstein–Uhlenbeck kernel.

use std::f64::consts::E;

use roots::{find_root_brent, SimpleConvergency};
use serde::{Deserialize, Serialize};

use crate::aoi::{delay_thresholds, GenerationSchedule, TimeDecomposition};
use crate::error::{Error, Result};
use crate::numeric::{integrate, std_normal_cdf, std_normal_pdf, std_normal_tail};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkKind {
    /// `g(z) = x_min + exp(μ̂ + ŝ z)`
    ShiftedLognormal,
    /// `g(z) = max(x_min, μ̂ + ŝ z)`
    CensoredNormal,
}

impl LinkKind {
    pub fn name(&self) -> &'static str {
        match self {
            LinkKind::ShiftedLognormal => "shifted-lognormal",
            LinkKind::CensoredNormal => "censored-normal",
        }
    }
}

impl std::fmt::Display for LinkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LinkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shifted-lognormal" | "lognormal" => Ok(LinkKind::ShiftedLognormal),
            "censored-normal" | "censored" => Ok(LinkKind::CensoredNormal),
            other => Err(Error::invalid(format!("unknown link kind `{other}`"))),
        }
    }
}

/// Monotone map from a standard Gaussian state to a delay in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkFunction {
    pub kind: LinkKind,
    pub x_min: f64,
    pub mu_hat: f64,
    pub s_hat: f64,
}

impl LinkFunction {
    pub fn new(kind: LinkKind, x_min: f64, mu_hat: f64, s_hat: f64) -> Result<Self> {
        if !(x_min.is_finite() && x_min >= 0.0) {
            return Err(Error::invalid(format!("x_min must be non-negative, got {x_min}")));
        }
        if !mu_hat.is_finite() {
            return Err(Error::invalid(format!("mu_hat must be finite, got {mu_hat}")));
        }
        if !(s_hat.is_finite() && s_hat > 0.0) {
            return Err(Error::invalid(format!("s_hat must be positive, got {s_hat}")));
        }
        Ok(Self {
            kind,
            x_min,
            mu_hat,
            s_hat,
        })
    }

    pub fn shifted_lognormal(x_min: f64, mu_hat: f64, s_hat: f64) -> Result<Self> {
        Self::new(LinkKind::ShiftedLognormal, x_min, mu_hat, s_hat)
    }

    pub fn censored_normal(x_min: f64, mu_hat: f64, s_hat: f64) -> Result<Self> {
        Self::new(LinkKind::CensoredNormal, x_min, mu_hat, s_hat)
    }

    /// `g(z)`, saturating at `f64::MAX`.
    #[inline]
    pub fn apply(&self, z: f64) -> f64 {
        let v = match self.kind {
            LinkKind::ShiftedLognormal => self.x_min + (self.mu_hat + self.s_hat * z).exp(),
            LinkKind::CensoredNormal => self.x_min.max(self.mu_hat + self.s_hat * z),
        };
        v.min(f64::MAX)
    }

    /// `g(z)`, failing when the delay would exceed `max_delay`.
    pub fn try_apply(&self, z: f64, max_delay: f64) -> Result<f64> {
        if !z.is_finite() {
            return Err(Error::invalid(format!("link argument must be finite, got {z}")));
        }
        let v = self.apply(z);
        if v > max_delay {
            return Err(Error::Evaluation(format!(
                "delay {v} exceeds the configured maximum {max_delay}"
            )));
        }
        Ok(v)
    }

    /// `g⁻¹(y) = inf{z : g(z) > y}`, so that `{g(Z) > y} = {Z > g⁻¹(y)}`.
    /// Returns `-∞` when every state maps above `y`.
    #[inline]
    pub fn inverse(&self, y: f64) -> f64 {
        match self.kind {
            LinkKind::ShiftedLognormal => {
                if y <= self.x_min {
                    f64::NEG_INFINITY
                } else {
                    ((y - self.x_min).ln() - self.mu_hat) / self.s_hat
                }
            }
            LinkKind::CensoredNormal => {
                if y < self.x_min {
                    f64::NEG_INFINITY
                } else {
                    (y - self.mu_hat) / self.s_hat
                }
            }
        }
    }

    /// `Pr(g(Z) > y)` for a standard normal `Z`.
    pub fn survival(&self, y: f64) -> f64 {
        std_normal_tail(self.inverse(y))
    }

    /// Censoring point in standard units, `(x_min − μ̂)/ŝ`.
    fn alpha(&self) -> f64 {
        (self.x_min - self.mu_hat) / self.s_hat
    }

    /// Mean and standard deviation of `g(Z)`.
    pub fn marginal_moments(&self) -> (f64, f64) {
        match self.kind {
            LinkKind::ShiftedLognormal => {
                let s2 = self.s_hat * self.s_hat;
                let mean = self.x_min + (self.mu_hat + 0.5 * s2).exp();
                let var = s2.exp_m1() * (2.0 * self.mu_hat + s2).exp();
                (mean, var.sqrt())
            }
            LinkKind::CensoredNormal => {
                let (m, sd) = excess_moments(self.alpha());
                (self.x_min + self.s_hat * m, self.s_hat * sd)
            }
        }
    }

    /// `Cov[g(Z_0), g(Z_1)]` for standard normals with correlation `rho`.
    pub fn lag_covariance(&self, rho: f64) -> Result<f64> {
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::invalid(format!("correlation must lie in [-1, 1], got {rho}")));
        }
        if rho == 0.0 {
            return Ok(0.0);
        }
        match self.kind {
            LinkKind::ShiftedLognormal => {
                let s2 = self.s_hat * self.s_hat;
                Ok((2.0 * self.mu_hat + s2).exp() * (s2 * rho).exp_m1())
            }
            LinkKind::CensoredNormal => {
                let alpha = self.alpha();
                let (m, _) = excess_moments(alpha);
                let cross = excess_cross_moment(alpha, rho);
                if !cross.is_finite() {
                    return Err(Error::Quadrature(format!(
                        "censored lag moment not finite at rho={rho}"
                    )));
                }
                Ok(self.s_hat * self.s_hat * (cross - m * m))
            }
        }
    }

    /// `Cov[g(Z_0), g(Z_1)] / Var[g(Z_0)]` as a function of the Gaussian correlation.
    pub fn covariance_ratio(&self, rho: f64) -> Result<f64> {
        Ok(self.lag_covariance(rho)? / self.lag_covariance(1.0)?)
    }
}

/// Mean and standard deviation of `W = max(0, Z − α)`.
fn excess_moments(alpha: f64) -> (f64, f64) {
    let pdf = std_normal_pdf(alpha);
    let tail = std_normal_tail(alpha);
    if alpha < 0.0 {
        // W = max(α, Z) − α; moments of max(α, Z) avoid cancellation here
        let cdf = std_normal_cdf(alpha);
        let m1 = alpha * cdf + pdf;
        let m2 = alpha * alpha * cdf + tail + alpha * pdf;
        let var = (m2 - m1 * m1).max(0.0);
        (m1 - alpha, var.sqrt())
    } else {
        let m1 = pdf - alpha * tail;
        let m2 = (1.0 + alpha * alpha) * tail - alpha * pdf;
        let var = (m2 - m1 * m1).max(0.0);
        (m1, var.sqrt())
    }
}

/// `E[W_0 W_1]` with `W_i = max(0, Z_i − α)` and `corr(Z_0, Z_1) = rho`,
/// integrating the conditional expectation of `W_1` given `Z_0 = z`.
fn excess_cross_moment(alpha: f64, rho: f64) -> f64 {
    let sd = (1.0 - rho * rho).max(0.0).sqrt();
    let cond = move |z: f64| {
        let m = rho * z - alpha;
        if sd == 0.0 {
            m.max(0.0)
        } else {
            let u = m / sd;
            m * std_normal_cdf(u) + sd * std_normal_pdf(u)
        }
    };
    let integrand = |z: f64| (z - alpha) * cond(z) * std_normal_pdf(z);
    let lo = alpha.max(-14.0);
    let hi = 14.0_f64.max(alpha + 14.0);
    if lo >= hi {
        return 0.0;
    }
    // split at the point where the conditional mean crosses the censoring level
    let kink = if rho > 0.0 { alpha / rho } else { f64::NAN };
    if kink > lo && kink < hi {
        integrate(integrand, lo, kink, 150) + integrate(integrand, kink, hi, 150)
    } else {
        integrate(integrand, lo, hi, 300)
    }
}

/// Targets for moment-matching calibration of a link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    /// mean of the delay
    pub mu: f64,
    /// standard deviation of the delay
    pub s: f64,
    pub x_min: f64,
    /// time constant, `σ(c)/σ(0) = e⁻¹`
    pub c: Option<f64>,
}

/// Finds `(μ̂, ŝ)` so that `g(Z)` has mean `mu` and standard deviation `s`.
pub fn calibrate_marginal(target: &CalibrationTarget, kind: LinkKind) -> Result<(f64, f64)> {
    let CalibrationTarget { mu, s, x_min, .. } = *target;
    if !(x_min.is_finite() && x_min >= 0.0) {
        return Err(Error::Calibration(format!("x_min must be non-negative, got {x_min}")));
    }
    if !(mu.is_finite() && mu > x_min) {
        return Err(Error::Calibration(format!(
            "target mean {mu} must exceed the lower bound {x_min}"
        )));
    }
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::Calibration(format!(
            "target standard deviation must be positive for a stochastic link, got {s}"
        )));
    }
    let excess = mu - x_min;
    match kind {
        LinkKind::ShiftedLognormal => {
            let s2 = (s * s / (excess * excess)).ln_1p();
            Ok((excess.ln() - 0.5 * s2, s2.sqrt()))
        }
        LinkKind::CensoredNormal => {
            // X = x_min + ŝ·max(0, Z − α): the ratio sd/(mean − x_min) fixes α alone
            let target_ratio = s / excess;
            let ratio = |alpha: f64| {
                let (m, sd) = excess_moments(alpha);
                sd / m - target_ratio
            };
            let (lo, hi) = (-1e6, 25.0);
            if ratio(lo) > 0.0 || ratio(hi) < 0.0 {
                return Err(Error::Calibration(format!(
                    "censored-normal cannot reach sd/(mean - x_min) = {target_ratio}"
                )));
            }
            let mut conv = SimpleConvergency {
                eps: 1e-15,
                max_iter: 500,
            };
            let alpha = find_root_brent(lo, hi, &ratio, &mut conv)
                .map_err(|e| Error::Calibration(format!("censored-normal root search: {e}")))?;
            let (m, _) = excess_moments(alpha);
            let s_hat = excess / m;
            let mu_hat = x_min - s_hat * alpha;
            if !(s_hat.is_finite() && mu_hat.is_finite() && s_hat > 0.0) {
                return Err(Error::Calibration("censored-normal calibration diverged".into()));
            }
            Ok((mu_hat, s_hat))
        }
    }
}

/// Gaussian lag correlation at which the delay autocovariance falls to `e⁻¹`
/// of the variance.
pub fn decorrelation_level(link: &LinkFunction) -> Result<f64> {
    let var = link.lag_covariance(1.0)?;
    if !(var > 0.0) {
        return Err(Error::Calibration("link has zero variance".into()));
    }
    let target = (-1.0f64).exp();
    let f = |rho: f64| link.lag_covariance(rho).map_or(f64::NAN, |c| c / var - target);
    let mut conv = SimpleConvergency {
        eps: 1e-15,
        max_iter: 500,
    };
    let rho = find_root_brent(0.0, 1.0, &f, &mut conv)
        .map_err(|e| Error::Calibration(format!("covariance-ratio root search: {e}")))?;
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Calibration(format!("decorrelation level {rho} outside (0, 1)")));
    }
    Ok(rho)
}

/// OU rate `κ` giving the delay process the time constant `c`.
pub fn calibrate_kappa(link: &LinkFunction, c: f64) -> Result<f64> {
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::Calibration(format!("time constant must be positive, got {c}")));
    }
    Ok(-decorrelation_level(link)?.ln() / c)
}

/// Time constant implied by an OU rate `κ`; inverse of [`calibrate_kappa`].
pub fn time_constant(link: &LinkFunction, kappa: f64) -> Result<f64> {
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::invalid(format!("kappa must be positive, got {kappa}")));
    }
    Ok(-decorrelation_level(link)?.ln() / kappa)
}

/// Conditional mean and variance of `Z_{s+dt}` given `Z_s = z` for the
/// stationary OU process with rate `kappa`.
pub fn ou_transition(z: f64, dt: f64, kappa: f64) -> (f64, f64) {
    let decay = (-kappa * dt).exp();
    (z * decay, -(-2.0 * kappa * dt).exp_m1())
}

/// Correlation structure of the Gaussian driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum CorrelationMode {
    /// stationary OU with autocovariance `e^{−κt}`
    Ou {
        kappa: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c: Option<f64>,
    },
    /// independent states (`c = 0`)
    Iid,
    /// one shared state (`c = ∞`)
    Frozen,
}

impl CorrelationMode {
    pub fn ou(kappa: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::invalid(format!("kappa must be positive, got {kappa}")));
        }
        Ok(CorrelationMode::Ou { kappa, c: None })
    }
}

/// Full generative description of the delays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    pub link: LinkFunction,
    pub correlation: CorrelationMode,
    pub schedule: GenerationSchedule,
}

impl DelayModel {
    pub fn new(link: LinkFunction, correlation: CorrelationMode, schedule: GenerationSchedule) -> Self {
        Self {
            link,
            correlation,
            schedule,
        }
    }

    pub fn tau(&self) -> f64 {
        self.schedule.tau()
    }

    /// Correlation between consecutive generation-grid states.
    pub fn step_correlation(&self) -> f64 {
        match self.correlation {
            CorrelationMode::Ou { kappa, .. } => (-kappa * self.tau()).exp(),
            CorrelationMode::Iid => 0.0,
            CorrelationMode::Frozen => 1.0,
        }
    }

    /// Time constant of the delay process (`0` for iid, `∞` for frozen).
    pub fn time_constant(&self) -> Result<f64> {
        match self.correlation {
            CorrelationMode::Ou { c: Some(c), .. } => Ok(c),
            CorrelationMode::Ou { kappa, c: None } => time_constant(&self.link, kappa),
            CorrelationMode::Iid => Ok(0.0),
            CorrelationMode::Frozen => Ok(f64::INFINITY),
        }
    }
}

/// Gaussian thresholds `a_i = g⁻¹((k − i)·τ + φ)` for `i = θ_t(x)..=k_t`.
///
/// Requires `x ≥ φ_t`. Entries are non-increasing in `i`.
pub fn thresholds(
    t: f64,
    x: f64,
    schedule: &GenerationSchedule,
    link: &LinkFunction,
) -> Result<Vec<f64>> {
    let d: TimeDecomposition = schedule.decompose(t)?;
    if !(x >= d.phi) {
        return Err(Error::invalid(format!(
            "thresholds need x >= phi_t ({x} < {})",
            d.phi
        )));
    }
    let first = crate::aoi::theta(t, x, schedule.tau())?;
    Ok(delay_thresholds(&d, first, schedule.tau())
        .into_iter()
        .map(|b| link.inverse(b))
        .collect())
}

/// `e⁻¹`, the decorrelation ratio defining the time constant.
pub const DECORRELATION_RATIO: f64 = 1.0 / E;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn ex1() -> LinkFunction {
        LinkFunction::shifted_lognormal(0.5, 0.452, 1.312).unwrap()
    }

    fn ex2() -> LinkFunction {
        LinkFunction::censored_normal(0.5, -1.282, 1.085).unwrap()
    }

    #[test]
    fn apply_examples() {
        assert_relative_eq!(ex1().apply(0.0), 0.5 + 0.452f64.exp(), max_relative = 1e-15);
        assert!((ex1().apply(0.0) - 2.0714).abs() < 1e-4);
        assert_eq!(ex2().apply(0.0), 0.5);
        assert_relative_eq!(ex2().apply(2.0), 0.888, max_relative = 1e-12);
    }

    #[test]
    fn apply_saturates_and_checks() {
        assert_eq!(ex1().apply(1e6), f64::MAX);
        assert!(ex1().try_apply(1e6, 1e9).is_err());
        assert!(ex1().try_apply(0.0, 1e9).is_ok());
        assert!(ex1().try_apply(f64::NAN, 1e9).is_err());
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(ex1().inverse(0.5), f64::NEG_INFINITY);
        assert!(ex1().inverse(0.5 + 0.452f64.exp()).abs() < 1e-12);
        assert!(ex1().inverse(2.0714).abs() < 1e-4);
        assert_relative_eq!(ex2().inverse(0.5), 1.782 / 1.085, max_relative = 1e-12);
        assert!((ex2().inverse(0.5) - 1.6424).abs() < 1e-4);
        assert_eq!(ex2().inverse(0.4999), f64::NEG_INFINITY);
    }

    #[test]
    fn rejects_invalid_links() {
        assert!(LinkFunction::shifted_lognormal(-0.1, 0.0, 1.0).is_err());
        assert!(LinkFunction::shifted_lognormal(0.0, 0.0, 0.0).is_err());
        assert!(LinkFunction::censored_normal(0.0, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn moments_limits() {
        let (m, s) = LinkFunction::shifted_lognormal(0.0, 0.0, 1e-9).unwrap().marginal_moments();
        assert!((m - 1.0).abs() < 1e-12 && s < 1e-8);
        // α = -20: censoring has no numerical effect
        let (m, s) = LinkFunction::censored_normal(0.0, 40.0, 2.0).unwrap().marginal_moments();
        assert_relative_eq!(m, 40.0, max_relative = 1e-14);
        assert_relative_eq!(s, 2.0, max_relative = 1e-12);
    }

    /// Monte-Carlo oracle for the moments of `g(Z)`.
    fn mc_moments(link: &LinkFunction, n: usize, seed: u64) -> (f64, f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let x = link.apply(z);
            s1 += x;
            s2 += x * x;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        (mean, var.sqrt(), (var / n as f64).sqrt())
    }

    #[test]
    fn lognormal_mean_matches_sampling() {
        let (mean, _) = ex1().marginal_moments();
        assert!((mean - 4.216).abs() < 1e-3, "{mean}");
        let (mc_mean, _, se) = mc_moments(&ex1(), 10_000_000, 11);
        assert!((mc_mean - mean).abs() < 4.0 * se, "{mc_mean} vs {mean} (se {se})");
    }

    #[test]
    fn censored_moments_match_sampling() {
        let link = ex2();
        let (mean, sd) = link.marginal_moments();
        let (mc_mean, mc_sd, se) = mc_moments(&link, 2_000_000, 5);
        assert!((mc_mean - mean).abs() < 4.0 * se);
        assert!((mc_sd - sd).abs() < 1e-3);
    }

    #[test]
    fn calibrate_lognormal_closed_form() {
        let target = CalibrationTarget { mu: 1.0, s: 0.75, x_min: 0.5, c: None };
        let (mu_hat, s_hat) = calibrate_marginal(&target, LinkKind::ShiftedLognormal).unwrap();
        assert_relative_eq!(s_hat, 3.25f64.ln().sqrt(), max_relative = 1e-14);
        assert!((s_hat - 1.0857).abs() < 1e-4);
        assert!((mu_hat - (0.5f64.ln() - 0.5 * 3.25f64.ln())).abs() < 1e-14);
        assert!((mu_hat + 1.2824).abs() < 1e-4);
        let (m, s) = LinkFunction::shifted_lognormal(0.5, mu_hat, s_hat).unwrap().marginal_moments();
        assert_relative_eq!(m, 1.0, max_relative = 1e-12);
        assert_relative_eq!(s, 0.75, max_relative = 1e-12);
    }

    #[test]
    fn calibrate_lognormal_deterministic_limit() {
        let target = CalibrationTarget { mu: 1.5, s: 1e-9, x_min: 0.5, c: None };
        let (mu_hat, s_hat) = calibrate_marginal(&target, LinkKind::ShiftedLognormal).unwrap();
        assert!(mu_hat.abs() < 1e-15 && s_hat < 1e-8);
    }

    #[test]
    fn calibrate_censored_round_trip_and_sampling() {
        let target = CalibrationTarget { mu: 1.0, s: 0.75, x_min: 0.5, c: None };
        let (mu_hat, s_hat) = calibrate_marginal(&target, LinkKind::CensoredNormal).unwrap();
        let link = LinkFunction::censored_normal(0.5, mu_hat, s_hat).unwrap();
        let (m, s) = link.marginal_moments();
        assert!((m - 1.0).abs() < 1e-8 && (s - 0.75).abs() < 1e-8, "{m} {s}");
        let (mc_mean, mc_sd, se) = mc_moments(&link, 10_000_000, 3);
        assert!((mc_mean - 1.0).abs() < 4.0 * se);
        assert!((mc_sd - 0.75).abs() < 1e-3);
    }

    #[test]
    fn calibrate_rejects_infeasible_targets() {
        for kind in [LinkKind::ShiftedLognormal, LinkKind::CensoredNormal] {
            let zero_sd = CalibrationTarget { mu: 1.0, s: 0.0, x_min: 0.5, c: None };
            assert!(matches!(calibrate_marginal(&zero_sd, kind), Err(Error::Calibration(_))));
            let low_mean = CalibrationTarget { mu: 0.4, s: 0.5, x_min: 0.5, c: None };
            assert!(matches!(calibrate_marginal(&low_mean, kind), Err(Error::Calibration(_))));
        }
    }

    #[test]
    fn lag_covariance_endpoints() {
        for link in [ex1(), ex2()] {
            assert_eq!(link.lag_covariance(0.0).unwrap(), 0.0);
            let (_, sd) = link.marginal_moments();
            assert_relative_eq!(link.lag_covariance(1.0).unwrap(), sd * sd, max_relative = 1e-9);
        }
        let l = ex1();
        let s2 = l.s_hat * l.s_hat;
        assert_relative_eq!(
            l.lag_covariance(1.0).unwrap(),
            s2.exp_m1() * (2.0 * l.mu_hat + s2).exp(),
            max_relative = 1e-14
        );
        assert!(l.lag_covariance(1.5).is_err());
    }

    #[test]
    fn censored_lag_covariance_matches_bivariate_sampling() {
        let link = ex2();
        let rho = 0.5;
        let exact = link.lag_covariance(rho).unwrap();
        let n = 10_000_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let c = (1.0 - rho * rho).sqrt();
        let (mut sx, mut sy, mut sxy, mut sxy2) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let z0: f64 = StandardNormal.sample(&mut rng);
            let e: f64 = StandardNormal.sample(&mut rng);
            let (x, y) = (link.apply(z0), link.apply(rho * z0 + c * e));
            sx += x;
            sy += y;
            sxy += x * y;
            sxy2 += (x * y) * (x * y);
        }
        let nf = n as f64;
        let cov = sxy / nf - (sx / nf) * (sy / nf);
        let se = ((sxy2 / nf - (sxy / nf).powi(2)) / nf).sqrt();
        assert!((cov - exact).abs() < 3.0 * se, "{cov} vs {exact} (se {se})");
    }

    #[test]
    fn kappa_for_linear_link_is_inverse_time_constant() {
        // α = -40: the censored link is linear on the whole numerical support
        let link = LinkFunction::censored_normal(0.0, 40.0, 1.0).unwrap();
        assert_relative_eq!(calibrate_kappa(&link, 10.0).unwrap(), 0.1, max_relative = 1e-10);
    }

    #[test]
    fn kappa_lognormal_solves_ratio_equation() {
        let l = ex1();
        let kappa = calibrate_kappa(&l, 10.0).unwrap();
        let s2 = l.s_hat * l.s_hat;
        let r = (-10.0 * kappa).exp();
        let ratio = (s2 * r).exp_m1() / s2.exp_m1();
        assert_relative_eq!(ratio, DECORRELATION_RATIO, max_relative = 1e-10);
        // closed-form inversion of the same equation
        let rho = (DECORRELATION_RATIO * s2.exp_m1()).ln_1p() / s2;
        assert_relative_eq!(kappa, -rho.ln() / 10.0, max_relative = 1e-10);
        assert_relative_eq!(time_constant(&l, kappa).unwrap(), 10.0, max_relative = 1e-10);
    }

    #[test]
    fn kappa_vanishes_for_huge_time_constants() {
        assert!(calibrate_kappa(&ex1(), 1e12).unwrap() < 1e-11);
        assert!(calibrate_kappa(&ex1(), 0.0).is_err());
    }

    #[test]
    fn ou_transition_examples() {
        assert_eq!(ou_transition(1.0, 0.0, 0.3), (1.0, 0.0));
        let (m, v) = ou_transition(1.0, 1e6, 0.3);
        assert!(m.abs() < 1e-300 && (v - 1.0).abs() < 1e-15);
        let (m, v) = ou_transition(2.0, 2f64.ln() / 0.7, 0.7);
        assert_relative_eq!(m, 1.0, max_relative = 1e-14);
        assert_relative_eq!(v, 0.75, max_relative = 1e-14);
    }

    #[test]
    fn threshold_examples() {
        let s = GenerationSchedule::new(2.0).unwrap();
        let linear = LinkFunction::censored_normal(0.0, 0.0, 1.0).unwrap();
        assert_eq!(thresholds(5.0, 5.0, &s, &linear).unwrap(), vec![5.0, 3.0, 1.0]);
        let a = thresholds(5.0, 5.0, &s, &ex1()).unwrap();
        assert_eq!(a.len(), 3);
        assert!(a.windows(2).all(|w| w[0] >= w[1]));
        // argument 1.0 > x_min = 0.5 is finite; arguments at or below x_min give -inf
        let low = LinkFunction::shifted_lognormal(1.0, 0.0, 1.0).unwrap();
        assert_eq!(thresholds(5.0, 5.0, &s, &low).unwrap()[2], f64::NEG_INFINITY);
        let t = GenerationSchedule::new(1.0).unwrap();
        let a = thresholds(0.5, 0.5, &t, &ex2()).unwrap();
        assert_eq!(a, vec![ex2().inverse(0.5)]);
        let a = thresholds(2.5, 2.5, &GenerationSchedule::new(2.0).unwrap(), &ex2()).unwrap();
        assert!((a[1] - 1.6424).abs() < 1e-4);
        assert!(thresholds(5.0, 0.5, &s, &ex1()).is_err());
    }

    proptest! {
        #[test]
        fn link_is_monotone(z1 in -8.0f64..8.0, z2 in -8.0f64..8.0, censored in any::<bool>()) {
            let l = if censored { ex2() } else { ex1() };
            let (lo, hi) = if z1 <= z2 { (z1, z2) } else { (z2, z1) };
            prop_assert!(l.apply(lo) <= l.apply(hi));
            prop_assert!(l.apply(lo) >= l.x_min);
        }

        #[test]
        fn inverse_round_trip(y in 0.0f64..20.0, z in -6.0f64..6.0, censored in any::<bool>()) {
            let l = if censored { ex2() } else { ex1() };
            if y > l.x_min {
                let back = l.apply(l.inverse(y));
                prop_assert!((back - y).abs() <= 1e-10 * y);
            }
            prop_assert_eq!(l.apply(z) > y, z > l.inverse(y));
        }

        #[test]
        fn calibration_round_trip(mu_excess in 0.05f64..5.0, s in 0.05f64..3.0, x_min in 0.0f64..2.0, censored in any::<bool>()) {
            let kind = if censored { LinkKind::CensoredNormal } else { LinkKind::ShiftedLognormal };
            let target = CalibrationTarget { mu: x_min + mu_excess, s, x_min, c: None };
            let (mu_hat, s_hat) = calibrate_marginal(&target, kind).unwrap();
            let (m, sd) = LinkFunction::new(kind, x_min, mu_hat, s_hat).unwrap().marginal_moments();
            prop_assert!((m - target.mu).abs() <= 1e-8 * target.mu);
            prop_assert!((sd - s).abs() <= 1e-8 * s);
        }

        #[test]
        fn ou_transition_variance_bounded(z in -5.0f64..5.0, dt1 in 0.0f64..10.0, dt2 in 0.0f64..10.0, kappa in 0.01f64..3.0) {
            let (lo, hi) = if dt1 <= dt2 { (dt1, dt2) } else { (dt2, dt1) };
            let (m1, v1) = ou_transition(z, lo, kappa);
            let (m2, v2) = ou_transition(z, hi, kappa);
            prop_assert!((0.0..=1.0).contains(&v1) && (0.0..=1.0).contains(&v2));
            prop_assert!(m2.abs() <= m1.abs() + 1e-15);
            prop_assert!(v2 >= v1 - 1e-15);
        }
    }

    #[test]
    fn lag_covariance_monotone_in_rho() {
        for link in [ex1(), ex2()] {
            let mut prev = link.lag_covariance(0.0).unwrap();
            for i in 1..=100 {
                let c = link.lag_covariance(i as f64 / 100.0).unwrap();
                assert!(c >= prev - 1e-12, "{:?} at {i}", link.kind);
                prev = c;
            }
        }
    }
}
