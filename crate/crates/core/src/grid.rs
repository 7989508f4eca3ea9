use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::DelayModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Exact,
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub model: DelayModel,
    /// simulation seed, empirical grids only
    pub seed: Option<u64>,
}

/// `Pr(A_t > x)` over a `(t, x)` grid; `p[i][j]` belongs to `(t_values[i], x_values[j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcdfGrid {
    pub t_values: Vec<f64>,
    pub x_values: Vec<f64>,
    pub p: Vec<Vec<f64>>,
    pub kind: GridKind,
    pub meta: GridMeta,
}

impl CcdfGrid {
    pub fn get(&self, ti: usize, xi: usize) -> f64 {
        self.p[ti][xi]
    }

    pub fn cells(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.t_values.iter().zip(&self.p).flat_map(move |(&t, row)| {
            self.x_values.iter().zip(row).map(move |(&x, &p)| (t, x, p))
        })
    }

    pub fn same_axes(&self, other: &CcdfGrid) -> bool {
        self.t_values == other.t_values && self.x_values == other.x_values
    }
}

/// Points `start, start + step, …` up to `stop`, inclusive within half a step.
pub fn uniform_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(start.is_finite() && stop.is_finite() && step.is_finite()) || step <= 0.0 {
        return Err(Error::invalid(format!(
            "grid ({start}, {stop}, {step}) needs finite bounds and a positive step"
        )));
    }
    if stop < start {
        return Err(Error::invalid(format!("grid stop {stop} is below start {start}")));
    }
    let n = ((stop - start) / step + 0.5).floor() as usize + 1;
    Ok((0..n).map(|i| start + i as f64 * step).collect())
}

pub(crate) fn check_sorted(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::invalid(format!("{name} grid is empty")));
    }
    if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::invalid(format!("{name} grid must be finite and non-negative")));
    }
    if v.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid(format!("{name} grid must be sorted ascending")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_includes_stop_within_half_step() {
        assert_eq!(uniform_grid(0.0, 1.0, 0.25).unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(uniform_grid(0.0, 0.99, 0.25).unwrap().len(), 5);
        assert_eq!(uniform_grid(0.0, 0.86, 0.25).unwrap().len(), 4);
        assert_eq!(uniform_grid(0.0, 40.0, 0.1).unwrap().len(), 401);
        assert!(uniform_grid(0.0, 1.0, 0.0).is_err());
        assert!(uniform_grid(1.0, 0.0, 0.1).is_err());
    }
}
