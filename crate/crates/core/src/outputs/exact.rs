use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::aoi::{periods_back, JointTailOracle};
use crate::error::{Error, Result};
use crate::gauss::{CorrelationMode, DelayModel};
use crate::grid::{check_sorted, CcdfGrid, GridKind, GridMeta};
use crate::numeric::std_normal_tail;
use crate::orthant::{frozen_prefixes, iid_prefixes, ou_prefixes_until, OuChain, Overflow, QuadratureSpec};
use crate::par::Exec;

/// `Pr(D_k > φ, D_{k−1} > τ + φ, …, D_{k−j} > jτ + φ)` for `j = 0..depth`.
///
/// This is the CCDF at any `t = kτ + φ` and `x ∈ [jτ + φ, (j+1)τ + φ)` with
/// `j ≤ k`. Stationarity and time reversibility of the driver make it
/// independent of `k`, so one recursion serves every such cell.
pub fn tail_prefixes(model: &DelayModel, phi: f64, depth: usize, spec: &QuadratureSpec) -> Result<Vec<f64>> {
    prefixes_until(model, phi, depth, spec, 0.0)
}

fn prefixes_until(
    model: &DelayModel,
    phi: f64,
    depth: usize,
    spec: &QuadratureSpec,
    floor: f64,
) -> Result<Vec<f64>> {
    let tau = model.tau();
    let b: Vec<f64> = (0..depth).map(|j| model.link.inverse(j as f64 * tau + phi)).collect();
    gaussian_prefixes(model, &b, spec, floor)
}

fn gaussian_prefixes(model: &DelayModel, b: &[f64], spec: &QuadratureSpec, floor: f64) -> Result<Vec<f64>> {
    match model.correlation {
        CorrelationMode::Iid => Ok(iid_prefixes(b)),
        CorrelationMode::Frozen => Ok(frozen_prefixes(b)),
        CorrelationMode::Ou { .. } => {
            ou_prefixes_until(b, model.step_correlation(), spec, Overflow::Vanish, floor)
        }
    }
}

/// Joint delay tails of the Gaussian model, for use with the generic CCDF code.
#[derive(Debug, Clone, Copy)]
pub struct GaussianOracle {
    pub model: DelayModel,
    pub spec: QuadratureSpec,
}

impl JointTailOracle for GaussianOracle {
    fn joint_tail(&self, _first: usize, thresholds: &[f64]) -> Result<f64> {
        let b: Vec<f64> = thresholds.iter().map(|&y| self.model.link.inverse(y)).collect();
        Ok(gaussian_prefixes(&self.model, &b, &self.spec, 0.0)?
            .last()
            .copied()
            .unwrap_or(1.0))
    }
}

fn phase_key(phi: f64, tau: f64) -> u64 {
    (phi / tau * 1e12).round() as u64
}

/// Exact `Pr(A_t > x)` over a grid.
pub fn exact_ccdf_grid(
    model: &DelayModel,
    t_grid: &[f64],
    x_grid: &[f64],
    spec: &QuadratureSpec,
) -> Result<CcdfGrid> {
    exact_ccdf_grid_with(model, t_grid, x_grid, spec, Exec::default())
}

/// [`exact_ccdf_grid`] with an explicit execution mode.
///
/// Observation times are grouped by phase; each phase class runs one prefix
/// recursion deep enough for its largest `t` and `x`, and all its cells are
/// read off that table.
pub fn exact_ccdf_grid_with(
    model: &DelayModel,
    t_grid: &[f64],
    x_grid: &[f64],
    spec: &QuadratureSpec,
    exec: Exec,
) -> Result<CcdfGrid> {
    check_sorted("t", t_grid)?;
    check_sorted("x", x_grid)?;
    spec.validate()?;
    let tau = model.tau();
    let x_max = *x_grid.last().unwrap();

    struct Class {
        phi: f64,
        depth: usize,
    }
    let mut classes: BTreeMap<u64, Class> = BTreeMap::new();
    let mut rows = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let d = model.schedule.decompose(t)?;
        let key = phase_key(d.phi, tau);
        let class = classes.entry(key).or_insert(Class { phi: d.phi, depth: 0 });
        let reach = if x_max < class.phi { 0 } else { periods_back(x_max, class.phi, tau).min(d.k) + 1 };
        class.depth = class.depth.max(reach);
        rows.push((t, d.k, key));
    }

    let classes: Vec<(u64, Class)> = classes.into_iter().collect();
    let tables = exec
        .map(&classes, |(_, c)| tail_prefixes(model, c.phi, c.depth, spec))
        .into_iter()
        .zip(&classes)
        .map(|(table, (key, c))| {
            table
                .map(|p| (*key, (c.phi, p)))
                .map_err(|e| Error::Evaluation(format!("phase {} (t ≡ {} mod {tau}): {e}", c.phi, c.phi)))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;

    let p = rows
        .iter()
        .map(|&(_, k, key)| {
            let (phi, table) = &tables[&key];
            x_grid
                .iter()
                .map(|&x| {
                    if x < *phi {
                        1.0
                    } else {
                        table[periods_back(x, *phi, tau).min(k)]
                    }
                })
                .collect()
        })
        .collect();

    Ok(CcdfGrid {
        t_values: t_grid.to_vec(),
        x_values: x_grid.to_vec(),
        p,
        kind: GridKind::Exact,
        meta: GridMeta { model: *model, seed: None },
    })
}

enum Recursion {
    Ou(OuChain),
    Iid,
    Frozen { max: f64 },
}

/// Prefix table of one phase that can be extended on demand.
struct PhaseChain {
    phi: f64,
    recursion: Recursion,
    prefixes: Vec<f64>,
    /// the joint tail fell below the floor; later entries count as zero
    done: bool,
}

impl PhaseChain {
    fn new(model: &DelayModel, phi: f64, spec: &QuadratureSpec) -> Result<Self> {
        let recursion = match model.correlation {
            CorrelationMode::Iid => Recursion::Iid,
            CorrelationMode::Frozen => Recursion::Frozen { max: f64::NEG_INFINITY },
            CorrelationMode::Ou { .. } => {
                Recursion::Ou(OuChain::new(model.step_correlation(), spec, Overflow::Vanish)?)
            }
        };
        Ok(Self {
            phi,
            recursion,
            prefixes: Vec::new(),
            done: false,
        })
    }

    fn extend(&mut self, model: &DelayModel, depth: usize, floor: f64) -> Result<()> {
        let tau = model.tau();
        while !self.done && self.prefixes.len() < depth {
            let j = self.prefixes.len();
            let b = model.link.inverse(j as f64 * tau + self.phi);
            let last = self.prefixes.last().copied().unwrap_or(1.0);
            let joint = match &mut self.recursion {
                Recursion::Ou(chain) => chain.push(b)?,
                Recursion::Iid => last * std_normal_tail(b),
                Recursion::Frozen { max } => {
                    *max = max.max(b);
                    std_normal_tail(*max)
                }
            };
            self.prefixes.push(joint);
            self.done = joint == 0.0 || joint < floor;
        }
        Ok(())
    }

    fn covers(&self, depth: usize) -> bool {
        self.done || self.prefixes.len() >= depth
    }
}

fn depth_for(x: f64, phi: f64, tau: f64) -> usize {
    if x < phi {
        0
    } else {
        periods_back(x, phi, tau) + 1
    }
}

/// Prefix tables at midpoint phases `(q + ½)τ/n`, the building block of the
/// time-averaged CCDF. Tables grow on demand as larger ages are requested.
pub struct PhaseTable {
    model: DelayModel,
    floor: f64,
    chains: Vec<PhaseChain>,
    exec: Exec,
}

impl PhaseTable {
    /// Empty tables. Recursions stop once the joint tail falls below `floor`.
    pub fn new(
        model: &DelayModel,
        spec: &QuadratureSpec,
        n_phase_nodes: usize,
        floor: f64,
        exec: Exec,
    ) -> Result<Self> {
        if n_phase_nodes < 8 {
            return Err(Error::invalid(format!(
                "at least 8 phase nodes are required, got {n_phase_nodes}"
            )));
        }
        spec.validate()?;
        let tau = model.tau();
        let chains = (0..n_phase_nodes)
            .map(|q| PhaseChain::new(model, (q as f64 + 0.5) * tau / n_phase_nodes as f64, spec))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model: *model,
            floor,
            chains,
            exec,
        })
    }

    /// Extends every table far enough to evaluate ages up to `x_max`.
    pub fn resolve(&mut self, x_max: f64) -> Result<()> {
        if !(x_max.is_finite() && x_max >= 0.0) {
            return Err(Error::invalid(format!("x must be finite and non-negative, got {x_max}")));
        }
        let (model, floor, tau) = (self.model, self.floor, self.model.tau());
        self.exec
            .map_mut(&mut self.chains, |c| c.extend(&model, depth_for(x_max, c.phi, tau), floor))
            .into_iter()
            .collect()
    }

    pub fn phase_nodes(&self) -> usize {
        self.chains.len()
    }

    /// Smallest jump point `φ_q + jτ` of [`PhaseTable::value`] in `(lo, hi]`.
    pub fn jump_in(&self, lo: f64, hi: f64) -> Option<f64> {
        let tau = self.model.tau();
        self.chains
            .iter()
            .filter_map(|c| {
                let j = ((lo - c.phi) / tau).floor().max(0.0);
                [j, j + 1.0]
                    .into_iter()
                    .map(|j| c.phi + j * tau)
                    .find(|&x| x > lo && x <= hi)
            })
            .min_by(f64::total_cmp)
    }

    /// Average over the phase nodes of `Pr(A_t > x)` at `t ≡ φ_q`, `t ≥ x`.
    ///
    /// `x` must have been resolved.
    pub fn value(&self, x: f64) -> f64 {
        let tau = self.model.tau();
        let sum: f64 = self
            .chains
            .iter()
            .map(|c| {
                let depth = depth_for(x, c.phi, tau);
                debug_assert!(c.covers(depth), "age {x} not resolved");
                match depth {
                    0 => 1.0,
                    d => c.prefixes.get(d - 1).copied().unwrap_or(0.0),
                }
            })
            .sum();
        (sum / self.chains.len() as f64).clamp(0.0, 1.0)
    }
}

/// `(1/τ)∫_x^{x+τ} Pr(A_t > x) dt` over a grid of ages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeAveragedCcdf {
    pub x_values: Vec<f64>,
    pub values: Vec<f64>,
    pub phase_nodes: usize,
}

/// `(1/τ)∫_x^{x+τ} Pr(A_t > x) dt` by the composite midpoint rule.
///
/// Every `t` in the window satisfies `t ≥ x`, where the CCDF depends on `t`
/// only through its phase, so the window average equals the average over one
/// period and is evaluated at fixed phase nodes.
pub fn time_averaged_ccdf(
    model: &DelayModel,
    x: f64,
    spec: &QuadratureSpec,
    n_phase_nodes: usize,
) -> Result<f64> {
    let mut table = PhaseTable::new(model, spec, n_phase_nodes, 0.0, Exec::default())?;
    table.resolve(x)?;
    Ok(table.value(x))
}

pub fn time_averaged_grid(
    model: &DelayModel,
    x_values: &[f64],
    spec: &QuadratureSpec,
    n_phase_nodes: usize,
    exec: Exec,
) -> Result<TimeAveragedCcdf> {
    check_sorted("x", x_values)?;
    let mut table = PhaseTable::new(model, spec, n_phase_nodes, 0.0, exec)?;
    table.resolve(*x_values.last().unwrap())?;
    Ok(TimeAveragedCcdf {
        x_values: x_values.to_vec(),
        values: x_values.iter().map(|&x| table.value(x)).collect(),
        phase_nodes: n_phase_nodes,
    })
}
