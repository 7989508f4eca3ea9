//! The five subcommands. Each writes its files under an output directory and
//! returns a JSON-serializable summary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use aoi_lab_core::gauss::{CorrelationMode, DelayModel, DECORRELATION_RATIO};
use aoi_lab_core::grid::CcdfGrid;
use aoi_lab_core::orthant::QuadratureSpec;
use aoi_lab_core::outputs::{
    agreement, dominance_check, exact_ccdf_grid_with, heatmap, percentiles, time_averaged_grid, write_ccdf_csv,
    write_empirical_csv, write_heatmap_csv, write_json, write_paths_csv, write_percentiles_csv,
    write_timeavg_csv, AgreementReport, DominanceReport, PercentileOptions, PercentileRow, STANDARD_LEVELS,
};
use aoi_lab_core::par::Exec;
use aoi_lab_core::simulator::{simulate_empirical_ccdf, simulate_paths, SimConfig};
use serde::Serialize;

use crate::config::{RunConfig, TimeConstant};
use crate::CliError;

pub struct Context {
    pub out: PathBuf,
    pub exec: Exec,
    pub threads: usize,
}

impl Context {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            out: out.into(),
            exec: Exec::default(),
            threads: rayon::current_num_threads(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn prepare(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out)
            .map_err(|e| CliError::Evaluation(format!("cannot create {}: {e}", self.out.display())))
    }
}

#[derive(Debug, Serialize)]
struct Meta<'a> {
    command: &'a str,
    engine_version: &'a str,
    seed: u64,
    quadrature: QuadratureSpec,
    threads: usize,
    wall_time_s: f64,
    model: DelayModel,
    config: &'a RunConfig,
}

fn write_meta(ctx: &Context, command: &str, cfg: &RunConfig, model: DelayModel, start: Instant) -> Result<(), CliError> {
    let meta = Meta {
        command,
        engine_version: env!("CARGO_PKG_VERSION"),
        seed: cfg.simulation.seed,
        quadrature: cfg.quadrature,
        threads: ctx.threads,
        wall_time_s: start.elapsed().as_secs_f64(),
        model,
        config: cfg,
    };
    Ok(write_json(&ctx.path("meta.json"), &meta)?)
}

#[derive(Debug, Serialize)]
pub struct CalibrationReport {
    pub kind: String,
    pub x_min: f64,
    pub mu_hat: f64,
    pub s_hat: f64,
    pub kappa: Option<f64>,
    /// achieved delay mean and standard deviation
    pub mean: f64,
    pub sd: f64,
    /// achieved `σ(c)/σ(0)` at the configured time constant
    pub ratio: Option<f64>,
    pub residuals: Residuals,
}

#[derive(Debug, Serialize)]
pub struct Residuals {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub ratio: Option<f64>,
}

pub fn cmd_calibrate(cfg: &RunConfig, ctx: Option<&Context>) -> Result<CalibrationReport, CliError> {
    let cal = cfg.calibrate(None, None)?;
    let (mean, sd) = cal.link.marginal_moments();
    let c = cfg.correlation.c.map(|c| c.0).filter(|c| *c > 0.0 && c.is_finite());
    let ratio = match (cal.kappa, c) {
        (Some(kappa), Some(c)) => Some(cal.link.covariance_ratio((-kappa * c).exp())?),
        _ => None,
    };
    let report = CalibrationReport {
        kind: cal.link.kind.name().to_string(),
        x_min: cal.link.x_min,
        mu_hat: cal.link.mu_hat,
        s_hat: cal.link.s_hat,
        kappa: cal.kappa,
        mean,
        sd,
        ratio,
        residuals: Residuals {
            mean: cfg.link.mu.map(|m| mean - m),
            sd: cfg.link.s.map(|s| sd - s),
            ratio: ratio.map(|r| r - DECORRELATION_RATIO),
        },
    };
    if let Some(ctx) = ctx {
        ctx.prepare()?;
        write_json(&ctx.path("calibration.json"), &report)?;
    }
    Ok(report)
}

fn percentile_options(cfg: &RunConfig) -> PercentileOptions {
    PercentileOptions {
        phase_nodes: cfg.phase_nodes,
        ..Default::default()
    }
}

#[derive(Debug, Serialize)]
pub struct ExactSummary {
    pub cells: usize,
    pub percentiles: PercentileRow,
}

pub fn cmd_exact(cfg: &RunConfig, ctx: &Context) -> Result<ExactSummary, CliError> {
    let start = Instant::now();
    let model = cfg.model()?;
    let t = cfg.t_grid.points()?;
    let x = cfg.x_grid.points()?;
    let grid = exact_ccdf_grid_with(&model, &t, &x, &cfg.quadrature, ctx.exec)?;
    let heat = heatmap(&grid, cfg.delta)?;
    let avg = time_averaged_grid(&model, &x, &cfg.quadrature, cfg.phase_nodes, ctx.exec)?;
    let row = percentiles(&model, &STANDARD_LEVELS, &cfg.quadrature, &percentile_options(cfg), ctx.exec)?;

    ctx.prepare()?;
    write_ccdf_csv(&ctx.path("ccdf.csv"), &grid)?;
    write_heatmap_csv(&ctx.path("heatmap.csv"), &heat)?;
    write_timeavg_csv(&ctx.path("timeavg.csv"), &avg)?;
    write_percentiles_csv(&ctx.path("percentiles.csv"), std::slice::from_ref(&row))?;
    write_meta(ctx, "exact", cfg, model, start)?;
    Ok(ExactSummary {
        cells: t.len() * x.len(),
        percentiles: row,
    })
}

fn sim_config(cfg: &RunConfig, model: DelayModel, t: Vec<f64>, x: Vec<f64>, exec: Exec) -> SimConfig {
    SimConfig {
        model,
        horizon: t.last().copied().unwrap_or(0.0),
        n_paths: cfg.simulation.n_paths,
        seed: cfg.simulation.seed,
        t_grid: t,
        x_grid: x,
        exec,
    }
}

#[derive(Debug, Serialize)]
pub struct SimulateSummary {
    pub n_paths: usize,
    pub exported_paths: usize,
}

pub fn cmd_simulate(cfg: &RunConfig, ctx: &Context) -> Result<SimulateSummary, CliError> {
    let start = Instant::now();
    let model = cfg.model()?;
    let sim = sim_config(cfg, model, cfg.t_grid.points()?, cfg.x_grid.points()?, ctx.exec);
    let emp = simulate_empirical_ccdf(&sim)?;
    let paths = simulate_paths(&sim, cfg.simulation.export_paths)?;

    ctx.prepare()?;
    write_empirical_csv(&ctx.path("ccdf_empirical.csv"), &emp)?;
    write_paths_csv(&ctx.path("paths.csv"), &sim.t_grid, &paths)?;
    write_meta(ctx, "simulate", cfg, model, start)?;
    Ok(SimulateSummary {
        n_paths: emp.n_paths,
        exported_paths: paths.len(),
    })
}

#[derive(Debug, Serialize)]
pub struct LadderStep {
    pub low: String,
    pub high: String,
    pub report: DominanceReport,
}

#[derive(Debug, Serialize)]
pub struct CompareReport {
    pub agreement: AgreementReport,
    pub min_fraction: f64,
    pub ladder: Vec<LadderStep>,
    pub passed: bool,
}

fn label(mode: &CorrelationMode) -> String {
    match mode {
        CorrelationMode::Iid => "iid".into(),
        CorrelationMode::Frozen => "frozen".into(),
        CorrelationMode::Ou { kappa, .. } => format!("ou(kappa={kappa})"),
    }
}

/// Correlation ladder from weakest to strongest dependence.
pub fn ladder(kappas: &[f64]) -> Result<Vec<CorrelationMode>, CliError> {
    let mut sorted = kappas.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut modes = vec![CorrelationMode::Iid];
    for k in sorted {
        modes.push(CorrelationMode::ou(k)?);
    }
    modes.push(CorrelationMode::Frozen);
    Ok(modes)
}

pub fn cmd_compare(cfg: &RunConfig, ctx: &Context) -> Result<CompareReport, CliError> {
    let start = Instant::now();
    let model = cfg.model()?;
    let t = cfg.t_grid.points()?;
    let x = cfg.x_grid.points()?;
    let exact = exact_ccdf_grid_with(&model, &t, &x, &cfg.quadrature, ctx.exec)?;
    let emp = simulate_empirical_ccdf(&sim_config(cfg, model, t.clone(), x.clone(), ctx.exec))?;
    let agree = agreement(&exact, &emp, cfg.compare.z_limit)?;

    let grids: Vec<(String, CcdfGrid)> = ladder(&cfg.compare.kappas)?
        .into_iter()
        .map(|mode| {
            let m = DelayModel::new(model.link, mode, model.schedule);
            Ok((label(&mode), exact_ccdf_grid_with(&m, &t, &x, &cfg.quadrature, ctx.exec)?))
        })
        .collect::<Result<_, CliError>>()?;
    let steps = grids
        .windows(2)
        .map(|w| {
            Ok(LadderStep {
                low: w[0].0.clone(),
                high: w[1].0.clone(),
                report: dominance_check(&w[0].1, &w[1].1, cfg.compare.dominance_tol)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let passed = agree.passes(cfg.compare.min_fraction) && steps.iter().all(|s| s.report.holds);
    let report = CompareReport {
        agreement: agree,
        min_fraction: cfg.compare.min_fraction,
        ladder: steps,
        passed,
    };
    ctx.prepare()?;
    write_json(&ctx.path("compare.json"), &report)?;
    write_meta(ctx, "compare", cfg, model, start)?;
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct SweepFailure {
    pub c: TimeConstant,
    pub tau: f64,
    pub s: Option<f64>,
    pub error: String,
}

#[derive(Debug, Serialize)]
pub struct SweepSummary {
    pub rows: Vec<PercentileRow>,
    pub failures: Vec<SweepFailure>,
}

/// Every `(c, τ, s)` combination of the sweep lists, in nested list order.
pub fn sweep_points(cfg: &RunConfig) -> Vec<(Option<TimeConstant>, f64, Option<f64>)> {
    let cs: Vec<Option<TimeConstant>> = if cfg.sweep.c.is_empty() {
        vec![None]
    } else {
        cfg.sweep.c.iter().copied().map(Some).collect()
    };
    let taus = if cfg.sweep.tau.is_empty() { vec![cfg.tau] } else { cfg.sweep.tau.clone() };
    let ss: Vec<Option<f64>> = if cfg.sweep.s.is_empty() {
        vec![None]
    } else {
        cfg.sweep.s.iter().copied().map(Some).collect()
    };
    let mut points = Vec::new();
    for &s in &ss {
        for &tau in &taus {
            for &c in &cs {
                points.push((c, tau, s));
            }
        }
    }
    points
}

pub fn sweep_row(
    cfg: &RunConfig,
    c: Option<TimeConstant>,
    tau: f64,
    s: Option<f64>,
    exec: Exec,
) -> Result<PercentileRow, CliError> {
    let model = cfg.model_with(c, Some(tau), s)?;
    Ok(percentiles(&model, &STANDARD_LEVELS, &cfg.quadrature, &percentile_options(cfg), exec)?)
}

pub fn cmd_sweep(cfg: &RunConfig, ctx: &Context) -> Result<SweepSummary, CliError> {
    let start = Instant::now();
    let base = cfg.model()?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (c, tau, s) in sweep_points(cfg) {
        match sweep_row(cfg, c, tau, s, ctx.exec) {
            Ok(row) => rows.push(row),
            Err(e) => failures.push(SweepFailure {
                c: c.or(cfg.correlation.c).unwrap_or(TimeConstant(f64::NAN)),
                tau,
                s,
                error: e.to_string(),
            }),
        }
    }
    ctx.prepare()?;
    write_percentiles_csv(&ctx.path("percentiles.csv"), &rows)?;
    write_meta(ctx, "sweep", cfg, base, start)?;
    let summary = SweepSummary { rows, failures };
    if !summary.failures.is_empty() {
        write_json(&ctx.path("sweep_failures.json"), &summary.failures)?;
    }
    Ok(summary)
}

/// Output directory default.
pub fn default_out() -> &'static Path {
    Path::new("aoi-out")
}
