//! Model-agnostic AoI machinery: time decomposition on the generation grid,
//! the CCDF of the age as a joint delay-tail probability, the atom support of
//! that CCDF, and sample-path reconstruction from a delay sequence.
//!
//! Packet `n` is generated at `n·τ` and delivered at `n·τ + D_n`. At time `t`
//! with `t = k·τ + φ`, the event `A_t > x` says that every packet in
//! `θ_t(x)..=k` is still in flight, i.e. `D_i > (k − i)·τ + φ` for all of them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used to snap phases and step counts onto the grid.
const GRID_SNAP: f64 = 1e-12;

/// Constant-interval packet generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationSchedule {
    tau: f64,
}

impl GenerationSchedule {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::invalid(format!("generation period must be positive, got {tau}")));
        }
        Ok(Self { tau })
    }

    #[inline]
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Generation time of packet `n`.
    #[inline]
    pub fn generation_time(&self, n: usize) -> f64 {
        n as f64 * self.tau
    }

    pub fn decompose(&self, t: f64) -> Result<TimeDecomposition> {
        decompose_time(t, self.tau)
    }
}

/// `t = k·τ + φ` with `0 ≤ φ < τ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeDecomposition {
    pub t: f64,
    pub k: usize,
    pub phi: f64,
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite and non-negative, got {v}")))
    }
}

fn check_tau(tau: f64) -> Result<()> {
    GenerationSchedule::new(tau).map(|_| ())
}

/// Splits `t` into the index of the latest generated packet and the phase
/// since its generation. Phases within `1e-12` (relative) of `τ` snap to the
/// next grid point.
pub fn decompose_time(t: f64, tau: f64) -> Result<TimeDecomposition> {
    check_nonneg("t", t)?;
    check_tau(tau)?;
    let mut k = (t / tau).floor();
    let mut phi = t - k * tau;
    let tol = GRID_SNAP * t.max(tau);
    if phi < 0.0 {
        if phi > -tol {
            phi = 0.0;
        } else {
            k -= 1.0;
            phi += tau;
        }
    }
    if phi >= tau - tol {
        k += 1.0;
        phi = 0.0;
    }
    Ok(TimeDecomposition {
        t,
        k: k as usize,
        phi: phi.clamp(0.0, tau),
    })
}

/// `floor(q)` that treats `q` within `1e-12` of an integer as that integer.
fn snapped_floor(q: f64) -> f64 {
    let r = q.round();
    if (q - r).abs() <= GRID_SNAP * q.abs().max(1.0) {
        r
    } else {
        q.floor()
    }
}

/// Number of whole periods between the phase and the age threshold:
/// `floor((x − φ)/τ)` for `x ≥ φ`.
pub(crate) fn periods_back(x: f64, phi: f64, tau: f64) -> usize {
    debug_assert!(x >= phi);
    snapped_floor((x - phi) / tau).max(0.0) as usize
}

fn theta_of(d: &TimeDecomposition, x: f64, tau: f64) -> usize {
    if x < d.phi {
        d.k + 1
    } else {
        d.k.saturating_sub(periods_back(x, d.phi, tau))
    }
}

/// Index of the oldest packet whose non-arrival is required for `A_t > x`:
/// `max(0, ceil((t − x)/τ))`.
pub fn theta(t: f64, x: f64, tau: f64) -> Result<usize> {
    check_nonneg("x", x)?;
    let d = decompose_time(t, tau)?;
    Ok(theta_of(&d, x, tau))
}

/// Delay thresholds `(k − i)·τ + φ` for `i` in `first..=k`.
pub fn delay_thresholds(d: &TimeDecomposition, first: usize, tau: f64) -> Vec<f64> {
    (first..=d.k).map(|i| (d.k - i) as f64 * tau + d.phi).collect()
}

/// Joint survival of consecutive delays.
///
/// `joint_tail(first, b)` returns `Pr(D_first > b[0], …, D_{first+n−1} > b[n−1])`.
/// An empty threshold list yields 1. Implementations must be reentrant.
pub trait JointTailOracle: Sync {
    fn joint_tail(&self, first: usize, thresholds: &[f64]) -> Result<f64>;
}

impl<T: JointTailOracle + ?Sized> JointTailOracle for &T {
    fn joint_tail(&self, first: usize, thresholds: &[f64]) -> Result<f64> {
        (**self).joint_tail(first, thresholds)
    }
}

/// `Pr(A_t > x)`.
pub fn aoi_ccdf<O: JointTailOracle>(
    t: f64,
    x: f64,
    schedule: &GenerationSchedule,
    oracle: &O,
) -> Result<f64> {
    check_nonneg("x", x)?;
    let d = schedule.decompose(t)?;
    if x < d.phi {
        return Ok(1.0);
    }
    let first = theta_of(&d, x, schedule.tau());
    let b = delay_thresholds(&d, first, schedule.tau());
    let p = oracle.joint_tail(first, &b)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Evaluation(format!(
            "oracle returned {p} outside [0, 1] at t={t}, x={x}"
        )));
    }
    Ok(p)
}

/// Age at an observation time; `Infinite` before the first delivery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Age {
    Finite(f64),
    Infinite,
}

impl Age {
    pub fn is_finite(&self) -> bool {
        matches!(self, Age::Finite(_))
    }

    /// `A > x`; an infinite age exceeds every finite threshold.
    pub fn exceeds(&self, x: f64) -> bool {
        match *self {
            Age::Finite(a) => a > x,
            Age::Infinite => true,
        }
    }

    pub fn as_f64(&self) -> f64 {
        match *self {
            Age::Finite(a) => a,
            Age::Infinite => f64::INFINITY,
        }
    }
}

/// One candidate age value and its probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Atom {
    pub age: f64,
    pub mass: f64,
}

/// Finite support of `A_t`: atoms `n·τ + φ_t` for `n = j_star..=k_t`, plus the
/// mass at infinity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AoiSupport {
    pub t: f64,
    pub j_star: usize,
    pub atoms: Vec<Atom>,
    pub p_infinity: f64,
}

impl AoiSupport {
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum::<f64>() + self.p_infinity
    }
}

/// Atom structure of the age distribution at `t`.
///
/// `d_min[i]` is the left endpoint of the support of `D_i`.
pub fn aoi_support<O: JointTailOracle>(
    t: f64,
    schedule: &GenerationSchedule,
    d_min: &[f64],
    oracle: &O,
) -> Result<AoiSupport> {
    let tau = schedule.tau();
    let d = schedule.decompose(t)?;
    if d_min.len() < d.k + 1 {
        return Err(Error::invalid(format!(
            "need {} delay lower bounds, got {}",
            d.k + 1,
            d_min.len()
        )));
    }
    // A tie D_i = threshold means delivery exactly at t, which counts as arrived.
    let j_star = (0..=d.k)
        .find(|&j| d_min[d.k - j] <= j as f64 * tau + d.phi)
        .unwrap_or(d.k + 1);

    // survival[n] = Pr(A_t > n·τ + φ) = Pr(D_i > (k−i)τ + φ, i = k−n..=k)
    let mut survival = Vec::with_capacity(d.k + 1);
    for n in 0..=d.k {
        let first = d.k - n;
        let b = delay_thresholds(&d, first, tau);
        survival.push(oracle.joint_tail(first, &b)?);
    }
    let atoms = (j_star..=d.k)
        .map(|n| {
            let before = if n == 0 { 1.0 } else { survival[n - 1] };
            Atom {
                age: n as f64 * tau + d.phi,
                mass: before - survival[n],
            }
        })
        .collect();
    Ok(AoiSupport {
        t,
        j_star,
        atoms,
        p_infinity: survival[d.k],
    })
}

/// Per-packet delays `D_0, D_1, …` in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct DelaySequence(Vec<f64>);

impl DelaySequence {
    pub fn new(delays: Vec<f64>) -> Result<Self> {
        if let Some(bad) = delays.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(Error::invalid(format!("delays must be finite and non-negative, got {bad}")));
        }
        Ok(Self(delays))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A fixed delay sequence is a point-mass joint law.
impl JointTailOracle for DelaySequence {
    fn joint_tail(&self, first: usize, thresholds: &[f64]) -> Result<f64> {
        let end = first + thresholds.len();
        if end > self.0.len() {
            return Err(Error::Evaluation(format!(
                "delay sequence has {} packets, oracle asked for index {}",
                self.0.len(),
                end - 1
            )));
        }
        let all = self.0[first..end].iter().zip(thresholds).all(|(d, b)| d > b);
        Ok(if all { 1.0 } else { 0.0 })
    }
}

/// Mutually independent delays sharing the survival function `survival(b) = Pr(D > b)`.
pub struct IndependentDelays<F> {
    survival: F,
}

impl<F: Fn(f64) -> f64 + Sync> IndependentDelays<F> {
    pub fn new(survival: F) -> Self {
        Self { survival }
    }
}

impl<F: Fn(f64) -> f64 + Sync> JointTailOracle for IndependentDelays<F> {
    fn joint_tail(&self, _first: usize, thresholds: &[f64]) -> Result<f64> {
        Ok(thresholds.iter().map(|&b| (self.survival)(b)).product())
    }
}

/// Ages `A_t = t − J_t·τ` on a sorted time grid, `J_t` being the newest
/// packet delivered by `t`.
pub fn aoi_path(
    delays: &DelaySequence,
    schedule: &GenerationSchedule,
    t_grid: &[f64],
) -> Result<Vec<Age>> {
    if t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("time grid must be sorted ascending"));
    }
    let d = delays.as_slice();
    t_grid
        .iter()
        .map(|&t| {
            let dec = schedule.decompose(t)?;
            if dec.k >= d.len() {
                return Err(Error::invalid(format!(
                    "delays cover {} packets but t={t} needs {}",
                    d.len(),
                    dec.k + 1
                )));
            }
            Ok(latest_delivered(d, schedule.tau(), dec.k, t)
                .map_or(Age::Infinite, |n| Age::Finite(t - schedule.generation_time(n))))
        })
        .collect()
}

/// Newest `n ≤ k` with `n·τ + D_n ≤ t`.
#[inline]
pub(crate) fn latest_delivered(delays: &[f64], tau: f64, k: usize, t: f64) -> Option<usize> {
    (0..=k).rev().find(|&n| n as f64 * tau + delays[n] <= t)
}
