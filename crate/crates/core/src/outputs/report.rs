use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::aoi::Age;
use crate::error::{Error, Result};
use crate::grid::CcdfGrid;
use crate::simulator::EmpiricalCcdf;

use super::exact::TimeAveragedCcdf;
use super::summary::{HeatmapGrid, PercentileRow, STANDARD_LEVELS};

/// Decimal rendering with 12 significant digits, `%g` style; `±∞` as `inf`.
pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let mode = std::fs::Permissions::from_mode(0o644);
        tmp.as_file().set_permissions(mode).map_err(|e| Error::io(path, e))?;
    }
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn row(out: &mut String, fields: &[&str]) {
    out.push_str(&fields.join(","));
    out.push('\n');
}

pub fn write_ccdf_csv(path: &Path, grid: &CcdfGrid) -> Result<()> {
    let mut out = String::from("t,x,ccdf\n");
    for (t, x, p) in grid.cells() {
        row(&mut out, &[&format_number(t), &format_number(x), &format_number(p)]);
    }
    write_atomic(path, out.as_bytes())
}

/// Empirical grid with its standard errors: `t,x,ccdf,stderr`.
pub fn write_empirical_csv(path: &Path, emp: &EmpiricalCcdf) -> Result<()> {
    let mut out = String::from("t,x,ccdf,stderr\n");
    let se = emp.stderr.iter().flatten();
    for ((t, x, p), s) in emp.grid.cells().zip(se) {
        row(
            &mut out,
            &[&format_number(t), &format_number(x), &format_number(p), &format_number(*s)],
        );
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_heatmap_csv(path: &Path, heat: &HeatmapGrid) -> Result<()> {
    let mut out = String::from("t,x,pmf\n");
    for (&t, masses) in heat.t_values.iter().zip(&heat.mass) {
        for (&x, &m) in heat.x_values.iter().zip(masses) {
            row(&mut out, &[&format_number(t), &format_number(x), &format_number(m)]);
        }
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_timeavg_csv(path: &Path, avg: &TimeAveragedCcdf) -> Result<()> {
    let mut out = String::from("x,ccdf_avg\n");
    for (&x, &v) in avg.x_values.iter().zip(&avg.values) {
        row(&mut out, &[&format_number(x), &format_number(v)]);
    }
    write_atomic(path, out.as_bytes())
}

/// Rows must be evaluated at the standard levels 10/25/50/75/90 %.
pub fn write_percentiles_csv(path: &Path, rows: &[PercentileRow]) -> Result<()> {
    let mut out = String::from("link,c,tau,s,p10,p25,p50,p75,p90\n");
    for r in rows {
        if r.levels != STANDARD_LEVELS {
            return Err(Error::invalid("percentiles.csv expects the levels 0.1, 0.25, 0.5, 0.75, 0.9"));
        }
        let mut fields = vec![
            r.link.name().to_string(),
            format_number(r.c),
            format_number(r.tau),
            format_number(r.s),
        ];
        fields.extend(r.values.iter().map(|&v| format_number(v)));
        let refs: Vec<&str> = fields.iter().map(String::as_str).collect();
        row(&mut out, &refs);
    }
    write_atomic(path, out.as_bytes())
}

/// Sample paths in long form: `path,t,age`.
pub fn write_paths_csv(path: &Path, t_values: &[f64], paths: &[Vec<Age>]) -> Result<()> {
    let mut out = String::from("path,t,age\n");
    for (i, ages) in paths.iter().enumerate() {
        for (&t, age) in t_values.iter().zip(ages) {
            let _ = writeln!(out, "{i},{},{}", format_number(t), format_number(age.as_f64()));
        }
    }
    write_atomic(path, out.as_bytes())
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::invalid(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
