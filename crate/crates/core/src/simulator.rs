//! Monte-Carlo sample paths of the delay and age processes.
//!
//! The Gaussian driver is sampled exactly on the generation grid (AR(1) with
//! the OU step correlation), so there is no discretization error. Path `i`
//! draws from stream `i` of a ChaCha8 generator keyed by the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::aoi::{latest_delivered, periods_back, Age, DelaySequence, TimeDecomposition};
use crate::error::{Error, Result};
use crate::gauss::{CorrelationMode, DelayModel};
use crate::grid::{check_sorted, CcdfGrid, GridKind, GridMeta};
use crate::par::Exec;

const PATHS_PER_TASK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: DelayModel,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub t_grid: Vec<f64>,
    pub x_grid: Vec<f64>,
    #[serde(skip, default)]
    pub exec: Exec,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        check_sorted("t", &self.t_grid)?;
        check_sorted("x", &self.x_grid)?;
        if self.n_paths == 0 {
            return Err(Error::invalid("n_paths must be at least 1"));
        }
        let t_max = *self.t_grid.last().unwrap();
        if !(self.horizon.is_finite() && self.horizon >= t_max) {
            return Err(Error::invalid(format!(
                "horizon {} must cover the last observation time {t_max}",
                self.horizon
            )));
        }
        Ok(())
    }

    /// Packets generated at or before the horizon.
    pub fn packet_count(&self) -> usize {
        self.model.schedule.decompose(self.horizon).map_or(1, |d| d.k + 1)
    }
}

/// Empirical CCDF with per-cell standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCcdf {
    pub grid: CcdfGrid,
    pub stderr: Vec<Vec<f64>>,
    /// paths with no delivery yet, per observation time
    pub infinite: Vec<u64>,
    pub n_paths: usize,
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Stationary Gaussian states on the generation grid for any correlation mode.
pub fn sample_states<R: Rng + ?Sized>(
    correlation: &CorrelationMode,
    tau: f64,
    n: usize,
    rng: &mut R,
) -> Vec<f64> {
    let mut z = Vec::with_capacity(n);
    if n == 0 {
        return z;
    }
    let first: f64 = rng.sample(StandardNormal);
    z.push(first);
    match *correlation {
        CorrelationMode::Frozen => z.resize(n, first),
        CorrelationMode::Iid => z.extend((1..n).map(|_| rng.sample::<f64, _>(StandardNormal))),
        CorrelationMode::Ou { kappa, .. } => {
            let rho = (-kappa * tau).exp();
            let innov = (-(-2.0 * kappa * tau).exp_m1()).sqrt();
            let mut prev = first;
            for _ in 1..n {
                let xi: f64 = rng.sample(StandardNormal);
                prev = rho * prev + innov * xi;
                z.push(prev);
            }
        }
    }
    z
}

/// `n` states of the stationary OU process with rate `kappa` sampled every `tau`.
pub fn sample_ou_on_grid(kappa: f64, tau: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    let mode = CorrelationMode::ou(kappa)?;
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    Ok(sample_states(&mode, tau, n, &mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Delay sequence of path `path`.
pub fn sample_delays(config: &SimConfig, path: usize) -> DelaySequence {
    let mut rng = path_rng(config.seed, path);
    let n = config.packet_count();
    let z = sample_states(&config.model.correlation, config.model.tau(), n, &mut rng);
    let link = &config.model.link;
    DelaySequence::new(z.into_iter().map(|z| link.apply(z)).collect())
        .expect("link output is finite and non-negative")
}

struct Tally {
    /// `cut[ti][j]`: paths whose age exceeds exactly the first `j` grid ages
    cut: Vec<Vec<u64>>,
    infinite: Vec<u64>,
}

impl Tally {
    fn new(nt: usize, nx: usize) -> Self {
        Self {
            cut: vec![vec![0; nx + 1]; nt],
            infinite: vec![0; nt],
        }
    }

    fn merge(mut self, other: Tally) -> Self {
        for (a, b) in self.cut.iter_mut().zip(other.cut) {
            a.iter_mut().zip(b).for_each(|(a, b)| *a += b);
        }
        self.infinite.iter_mut().zip(other.infinite).for_each(|(a, b)| *a += b);
        self
    }
}

fn tally_paths(config: &SimConfig, paths: std::ops::Range<usize>, times: &[TimeDecomposition]) -> Tally {
    let nx = config.x_grid.len();
    let tau = config.model.tau();
    let mut tally = Tally::new(config.t_grid.len(), nx);
    for path in paths {
        let delays = sample_delays(config, path);
        let d = delays.as_slice();
        for (ti, dec) in times.iter().enumerate() {
            match latest_delivered(d, tau, dec.k, dec.t) {
                Some(n) => {
                    // A_t = (k − n)τ + φ exceeds x, compared in whole periods so
                    // that ties resolve as in the exact engine
                    let back = dec.k - n;
                    let j = config
                        .x_grid
                        .partition_point(|&x| x < dec.phi || periods_back(x, dec.phi, tau) < back);
                    tally.cut[ti][j] += 1;
                }
                None => {
                    tally.cut[ti][nx] += 1;
                    tally.infinite[ti] += 1;
                }
            }
        }
    }
    tally
}

/// Empirical `Pr(A_t > x)` over `n_paths` independent sample paths.
pub fn simulate_empirical_ccdf(config: &SimConfig) -> Result<EmpiricalCcdf> {
    config.validate()?;
    let schedule = config.model.schedule;
    let times = config
        .t_grid
        .iter()
        .map(|&t| schedule.decompose(t))
        .collect::<Result<Vec<_>>>()?;
    let tasks = config.n_paths.div_ceil(PATHS_PER_TASK);
    let tally = config
        .exec
        .map_range(tasks, |task| {
            let start = task * PATHS_PER_TASK;
            let end = (start + PATHS_PER_TASK).min(config.n_paths);
            tally_paths(config, start..end, &times)
        })
        .into_iter()
        .reduce(Tally::merge)
        .expect("at least one task");

    let n = config.n_paths as f64;
    let nx = config.x_grid.len();
    let mut p = Vec::with_capacity(times.len());
    let mut stderr = Vec::with_capacity(times.len());
    for cut in &tally.cut {
        // ages above x_j are those cut at an index > j
        let mut above = vec![0u64; nx];
        let mut acc = cut[nx];
        for j in (0..nx).rev() {
            above[j] = acc;
            acc += cut[j];
        }
        let row: Vec<f64> = above.iter().map(|&c| c as f64 / n).collect();
        stderr.push(row.iter().map(|&q| (q * (1.0 - q) / n).sqrt()).collect());
        p.push(row);
    }
    Ok(EmpiricalCcdf {
        grid: CcdfGrid {
            t_values: config.t_grid.clone(),
            x_values: config.x_grid.clone(),
            p,
            kind: GridKind::Empirical,
            meta: GridMeta {
                model: config.model,
                seed: Some(config.seed),
            },
        },
        stderr,
        infinite: tally.infinite,
        n_paths: config.n_paths,
    })
}

/// Age trajectories of the first `count` paths, identical to the paths used by
/// [`simulate_empirical_ccdf`] with the same configuration.
pub fn simulate_paths(config: &SimConfig, count: usize) -> Result<Vec<Vec<Age>>> {
    config.validate()?;
    let count = count.min(config.n_paths);
    config
        .exec
        .map_range(count, |path| {
            crate::aoi::aoi_path(&sample_delays(config, path), &config.model.schedule, &config.t_grid)
        })
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aoi::GenerationSchedule;
    use crate::gauss::LinkFunction;
    use crate::numeric::std_normal_tail;

    fn lag1_correlation(z: &[f64]) -> f64 {
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let cov = z.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / (n - 1.0);
        cov / var
    }

    #[test]
    fn frozen_states_repeat() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = sample_states(&CorrelationMode::Frozen, 1.0, 10, &mut rng);
        assert!(z.iter().all(|&v| v == z[0]));
    }

    #[test]
    fn iid_states_are_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = sample_states(&CorrelationMode::Iid, 1.0, 1_000_000, &mut rng);
        assert!(lag1_correlation(&z).abs() < 3.0 / 1000.0);
    }

    #[test]
    fn ou_lag_one_correlation() {
        let z = sample_ou_on_grid(0.081, 2.0, 1_000_000, 3).unwrap();
        let rho = (-0.162f64).exp();
        // AR(1) sample autocorrelation has standard error ≈ sqrt((1 − ρ²)/n)
        let se = ((1.0 - rho * rho) / 1e6).sqrt();
        assert!((lag1_correlation(&z) - rho).abs() < 3.0 * se, "{}", lag1_correlation(&z));
        let var = z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64;
        assert!((var - 1.0).abs() < 0.02);
        assert!(sample_ou_on_grid(0.0, 2.0, 5, 1).is_err());
    }

    fn config(model: DelayModel, t: Vec<f64>, x: Vec<f64>, n: usize, seed: u64) -> SimConfig {
        SimConfig {
            model,
            horizon: *t.last().unwrap(),
            n_paths: n,
            seed,
            t_grid: t,
            x_grid: x,
            exec: Exec::default(),
        }
    }

    #[test]
    fn nearly_deterministic_link_gives_zero_one_ccdf() {
        let link = LinkFunction::censored_normal(0.0, 1.5, 1e-12).unwrap();
        let model = DelayModel::new(link, CorrelationMode::Iid, GenerationSchedule::new(2.0).unwrap());
        let cfg = config(model, vec![5.0], vec![0.5, 1.5, 2.9, 3.1], 200, 4);
        let emp = simulate_empirical_ccdf(&cfg).unwrap();
        // age at t = 5 is 3 on every path
        assert_eq!(emp.grid.p[0], vec![1.0, 1.0, 1.0, 0.0]);
        assert!(emp.stderr[0].iter().all(|&s| s == 0.0));
    }

    #[test]
    fn never_arrived_fraction_matches_marginal() {
        let link = LinkFunction::shifted_lognormal(0.5, -1.2824, 1.0857).unwrap();
        let model = DelayModel::new(link, CorrelationMode::Iid, GenerationSchedule::new(2.0).unwrap());
        let t = 0.9;
        let cfg = config(model, vec![t], vec![0.0, 10.0], 200_000, 5);
        let emp = simulate_empirical_ccdf(&cfg).unwrap();
        let p_inf = std_normal_tail(link.inverse(t));
        let est = emp.infinite[0] as f64 / 200_000.0;
        let se = (p_inf * (1.0 - p_inf) / 200_000.0).sqrt();
        assert!((est - p_inf).abs() < 3.0 * se, "{est} vs {p_inf}");
        // an infinite age exceeds every finite x
        assert_eq!(emp.grid.p[0][1], est);
    }

    #[test]
    fn paths_lie_on_atom_grid_and_rows_decrease() {
        let link = LinkFunction::shifted_lognormal(0.5, 0.452, 1.312).unwrap();
        let model = DelayModel::new(
            link,
            CorrelationMode::Ou { kappa: 0.081, c: None },
            GenerationSchedule::new(2.0).unwrap(),
        );
        let t: Vec<f64> = (0..40).map(|i| 0.37 + i as f64 * 0.5).collect();
        let x: Vec<f64> = (0..60).map(|i| i as f64 * 0.4).collect();
        let cfg = config(model, t.clone(), x, 500, 6);
        for path in simulate_paths(&cfg, 500).unwrap() {
            for (&ti, age) in t.iter().zip(path) {
                if let Age::Finite(a) = age {
                    let d = model.schedule.decompose(ti).unwrap();
                    let n = (a - d.phi) / 2.0;
                    assert!((n - n.round()).abs() < 1e-9 && n.round() <= d.k as f64);
                }
            }
        }
        let emp = simulate_empirical_ccdf(&cfg).unwrap();
        for row in &emp.grid.p {
            assert!(row.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn reproducible_across_execution_modes() {
        let link = LinkFunction::censored_normal(0.5, -1.282, 1.085).unwrap();
        let model = DelayModel::new(
            link,
            CorrelationMode::Ou { kappa: 0.066, c: None },
            GenerationSchedule::new(1.0).unwrap(),
        );
        let mut cfg = config(model, vec![1.0, 3.5, 7.2], vec![0.0, 0.5, 1.0, 2.0], 3000, 8);
        cfg.exec = Exec::Sequential;
        let a = simulate_empirical_ccdf(&cfg).unwrap();
        cfg.exec = Exec::Parallel;
        let b = simulate_empirical_ccdf(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_configs() {
        let link = LinkFunction::censored_normal(0.5, -1.282, 1.085).unwrap();
        let model = DelayModel::new(link, CorrelationMode::Iid, GenerationSchedule::new(1.0).unwrap());
        let mut cfg = config(model, vec![1.0, 2.0], vec![0.0], 10, 1);
        cfg.horizon = 1.5;
        assert!(simulate_empirical_ccdf(&cfg).is_err());
        let cfg = config(model, vec![2.0, 1.0], vec![0.0], 10, 1);
        assert!(simulate_empirical_ccdf(&cfg).is_err());
        let cfg = config(model, vec![1.0], vec![0.0], 0, 1);
        assert!(simulate_empirical_ccdf(&cfg).is_err());
    }
}
