use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{DelayModel, LinkKind};
use crate::grid::CcdfGrid;
use crate::orthant::QuadratureSpec;
use crate::par::Exec;
use crate::simulator::EmpiricalCcdf;

use super::exact::PhaseTable;

/// Probability mass of `A_t` in `(x, x + δ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub t_values: Vec<f64>,
    pub x_values: Vec<f64>,
    pub mass: Vec<Vec<f64>>,
    pub delta: f64,
}

/// `Pr(A_t > x) − Pr(A_t > x + δ)` for every grid age `x` whose shift `x + δ`
/// is also on the grid. `δ` must be a whole number of uniform x steps.
pub fn heatmap(grid: &CcdfGrid, delta: f64) -> Result<HeatmapGrid> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::invalid(format!("delta must be positive, got {delta}")));
    }
    let x = &grid.x_values;
    if x.len() < 2 {
        return Err(Error::invalid("heatmap needs at least two x values"));
    }
    let h = (x[x.len() - 1] - x[0]) / (x.len() - 1) as f64;
    let tol = 1e-9 * h.max(delta);
    if x.windows(2).enumerate().any(|(i, w)| ((x[0] + (i + 1) as f64 * h) - w[1]).abs() > tol) {
        return Err(Error::invalid("heatmap needs a uniformly spaced x grid"));
    }
    let shift = (delta / h).round() as usize;
    if shift == 0 || (shift as f64 * h - delta).abs() > tol {
        return Err(Error::invalid(format!("delta {delta} is not a multiple of the x step {h}")));
    }
    if shift >= x.len() {
        return Err(Error::invalid(format!("x + delta leaves the grid for every x (delta {delta})")));
    }
    let n = x.len() - shift;
    let mass = grid
        .p
        .iter()
        .map(|row| (0..n).map(|i| (row[i] - row[i + shift]).max(0.0)).collect())
        .collect();
    Ok(HeatmapGrid {
        t_values: grid.t_values.clone(),
        x_values: x[..n].to_vec(),
        mass,
        delta,
    })
}

pub const STANDARD_LEVELS: [f64; 5] = [0.10, 0.25, 0.50, 0.75, 0.90];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentileOptions {
    pub phase_nodes: usize,
    /// search ceiling; defaults to `50τ + 20·E[D]`
    pub ceiling: Option<f64>,
    /// bisection tolerance as a fraction of τ
    pub tolerance: f64,
}

impl Default for PercentileOptions {
    fn default() -> Self {
        Self {
            phase_nodes: 64,
            ceiling: None,
            tolerance: 1e-4,
        }
    }
}

/// Percentiles of the time-averaged age distribution for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileRow {
    pub link: LinkKind,
    /// time constant of the delay process
    pub c: f64,
    pub tau: f64,
    /// marginal standard deviation of the delay
    pub s: f64,
    pub levels: Vec<f64>,
    /// `+∞` where the level is not reached below the ceiling
    pub values: Vec<f64>,
    pub ceiling_exceeded: Vec<bool>,
}

pub type PercentileTable = Vec<PercentileRow>;

/// `inf{x ≥ 0 : F̄_avg(x) ≤ 1 − p}` for each level `p`.
pub fn percentiles(
    model: &DelayModel,
    levels: &[f64],
    spec: &QuadratureSpec,
    options: &PercentileOptions,
    exec: Exec,
) -> Result<PercentileRow> {
    if levels.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(Error::invalid("percentile levels must lie in (0, 1)"));
    }
    let tau = model.tau();
    let (mean, s) = model.link.marginal_moments();
    let ceiling = options.ceiling.unwrap_or(50.0 * tau + 20.0 * mean);
    if !(ceiling.is_finite() && ceiling > 0.0) {
        return Err(Error::invalid(format!("percentile ceiling must be positive, got {ceiling}")));
    }
    // tails this small cannot move any level in (0, 1) by more than rounding
    let mut table = PhaseTable::new(model, spec, options.phase_nodes, 1e-13, exec)?;
    let tol = options.tolerance * tau;

    // grow the tables until the highest level is bracketed or the ceiling is hit
    let lowest_target = levels.iter().map(|p| 1.0 - p).fold(1.0, f64::min);
    let mut hi = tau.min(ceiling);
    table.resolve(hi)?;
    while table.value(hi) > lowest_target && hi < ceiling {
        hi = (2.0 * hi + tau).min(ceiling);
        table.resolve(hi)?;
    }

    let mut values = Vec::with_capacity(levels.len());
    let mut exceeded = Vec::with_capacity(levels.len());
    for &p in levels {
        let target = 1.0 - p;
        if table.value(hi) > target {
            values.push(f64::INFINITY);
            exceeded.push(true);
            continue;
        }
        exceeded.push(false);
        if table.value(0.0) <= target {
            values.push(0.0);
            continue;
        }
        let (mut lo, mut up) = (0.0, hi);
        while up - lo > tol {
            let mid = 0.5 * (lo + up);
            if table.value(mid) <= target {
                up = mid;
            } else {
                lo = mid;
            }
        }
        // the average is a step function; land exactly on the jump when the
        // final bracket contains one
        let jump = table.jump_in(lo, up).filter(|&x| table.value(x) <= target);
        values.push(jump.unwrap_or(up));
    }
    Ok(PercentileRow {
        link: model.link.kind,
        c: model.time_constant()?,
        tau,
        s,
        levels: levels.to_vec(),
        values,
        ceiling_exceeded: exceeded,
    })
}

/// Outcome of a pointwise `low ≤ high + tol` comparison of two CCDF grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub holds: bool,
    /// `max(low − high)` over all cells, possibly negative
    pub max_violation: f64,
    /// `(t, x)` of the largest violation
    pub location: (f64, f64),
    pub tolerance: f64,
}

/// Checks `low(t, x) ≤ high(t, x) + tol` for every cell.
pub fn dominance_check(low: &CcdfGrid, high: &CcdfGrid, tol: f64) -> Result<DominanceReport> {
    if !low.same_axes(high) {
        return Err(Error::GridMismatch("dominance check needs grids on identical (t, x) axes".into()));
    }
    if low.meta.model.link != high.meta.model.link {
        return Err(Error::GridMismatch("dominance check needs grids with the same marginal".into()));
    }
    let mut worst = (f64::NEG_INFINITY, (f64::NAN, f64::NAN));
    for ((t, x, a), (_, _, b)) in low.cells().zip(high.cells()) {
        if a - b > worst.0 {
            worst = (a - b, (t, x));
        }
    }
    Ok(DominanceReport {
        holds: worst.0 <= tol,
        max_violation: worst.0,
        location: worst.1,
        tolerance: tol,
    })
}

/// Cell-wise z-scores of an empirical grid against the exact one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub cells: usize,
    pub max_z: f64,
    /// `(t, x)` of the largest z-score
    pub location: (f64, f64),
    /// fraction of cells with `z ≤ z_limit`
    pub fraction_within: f64,
    pub z_limit: f64,
}

impl AgreementReport {
    pub fn passes(&self, min_fraction: f64) -> bool {
        self.fraction_within >= min_fraction
    }
}

/// `|exact − empirical| / se` per cell, where `se = sqrt(p(1 − p)/n)` uses
/// the exact `p`. Cells where both agree exactly score 0.
pub fn agreement(exact: &CcdfGrid, empirical: &EmpiricalCcdf, z_limit: f64) -> Result<AgreementReport> {
    if !exact.same_axes(&empirical.grid) {
        return Err(Error::GridMismatch("exact and empirical grids have different axes".into()));
    }
    let n = empirical.n_paths as f64;
    let mut worst = (0.0, (exact.t_values[0], exact.x_values[0]));
    let mut within = 0usize;
    let mut cells = 0usize;
    for ((t, x, p), (_, _, q)) in exact.cells().zip(empirical.grid.cells()) {
        let diff = (p - q).abs();
        let se = (p * (1.0 - p) / n).max(0.0).sqrt();
        let z = if diff == 0.0 { 0.0 } else if se > 0.0 { diff / se } else { f64::INFINITY };
        cells += 1;
        if z <= z_limit {
            within += 1;
        }
        if z > worst.0 {
            worst = (z, (t, x));
        }
    }
    Ok(AgreementReport {
        cells,
        max_z: worst.0,
        location: worst.1,
        fraction_within: within as f64 / cells as f64,
        z_limit,
    })
}
