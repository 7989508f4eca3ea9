//! Standard-normal special functions and composite quadrature rules.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Upper tail `Pr(Z > x)` for a standard normal `Z`, accepting `±∞`.
#[inline]
pub fn std_normal_tail(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        1.0
    } else if x == f64::INFINITY {
        0.0
    } else {
        0.5 * libm::erfc(x * FRAC_1_SQRT_2)
    }
}

/// Lower tail `Pr(Z <= x)`.
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    std_normal_tail(-x)
}

/// Nodes per Gauss–Legendre panel in the composite rule.
pub const GL_PANEL: usize = 10;

fn gl_reference() -> &'static ([f64; GL_PANEL], [f64; GL_PANEL]) {
    static CELL: OnceLock<([f64; GL_PANEL], [f64; GL_PANEL])> = OnceLock::new();
    CELL.get_or_init(gauss_legendre_nodes::<GL_PANEL>)
}

/// Gauss–Legendre nodes and weights on [-1, 1] via Newton iteration on P_n.
fn gauss_legendre_nodes<const N: usize>() -> ([f64; N], [f64; N]) {
    let mut x = [0.0; N];
    let mut w = [0.0; N];
    let n = N as f64;
    for i in 0..N.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=N {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[N - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[N - 1 - i] = wi;
    }
    (x, w)
}

/// Rule used for the one-dimensional integrals of the orthant recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum QuadRule {
    Trapezoid,
    #[default]
    GaussLegendre,
}

/// Nodes and weights of a composite rule with roughly `m` nodes on `[lo, hi]`.
///
/// Gauss–Legendre uses `ceil(m / GL_PANEL)` equal panels; trapezoid uses `m`
/// equispaced nodes.
pub fn composite_rule(rule: QuadRule, lo: f64, hi: f64, m: usize) -> (Vec<f64>, Vec<f64>) {
    match rule {
        QuadRule::GaussLegendre => {
            let (rx, rw) = gl_reference();
            let panels = m.div_ceil(GL_PANEL).max(1);
            let width = (hi - lo) / panels as f64;
            let mut nodes = Vec::with_capacity(panels * GL_PANEL);
            let mut weights = Vec::with_capacity(panels * GL_PANEL);
            for p in 0..panels {
                let a = lo + p as f64 * width;
                let half = 0.5 * width;
                let mid = a + half;
                for k in 0..GL_PANEL {
                    nodes.push(mid + half * rx[k]);
                    weights.push(half * rw[k]);
                }
            }
            (nodes, weights)
        }
        QuadRule::Trapezoid => {
            let m = m.max(2);
            let h = (hi - lo) / (m - 1) as f64;
            let nodes = (0..m).map(|i| lo + i as f64 * h).collect();
            let mut weights = vec![h; m];
            weights[0] = 0.5 * h;
            weights[m - 1] = 0.5 * h;
            (nodes, weights)
        }
    }
}

/// Integral of `f` over `[lo, hi]` with `panels` Gauss–Legendre panels.
pub fn integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, panels: usize) -> f64 {
    let (nodes, weights) = composite_rule(QuadRule::GaussLegendre, lo, hi, panels * GL_PANEL);
    nodes.iter().zip(&weights).map(|(&x, &w)| w * f(x)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_reference_values() {
        assert_eq!(std_normal_tail(0.0), 0.5);
        assert_eq!(std_normal_tail(f64::NEG_INFINITY), 1.0);
        assert_eq!(std_normal_tail(f64::INFINITY), 0.0);
        // 0.5*erfc(1.96/sqrt 2) from a 30-digit mpmath evaluation
        assert!((std_normal_tail(1.96) - 0.024_997_895_148_220_435).abs() < 1e-15);
        assert!((std_normal_tail(2.0) - 0.022_750_131_948_179_21).abs() < 1e-15);
        // deep tail keeps relative accuracy
        let t8 = std_normal_tail(8.0);
        assert!((t8 / 6.220_960_574_271_785e-16 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // degree 19 is exact for a 10-point panel
        let v = integrate(|x| x.powi(19) + x.powi(4), -1.0, 2.0, 1);
        let exact = (2f64.powi(20) - 1.0) / 20.0 + (32.0 + 1.0) / 5.0;
        assert!((v - exact).abs() < 1e-9 * exact);
    }

    #[test]
    fn composite_rules_agree_on_gaussian_mass() {
        for rule in [QuadRule::GaussLegendre, QuadRule::Trapezoid] {
            let (x, w) = composite_rule(rule, -8.0, 8.0, 400);
            let mass: f64 = x.iter().zip(&w).map(|(&x, &w)| w * std_normal_pdf(x)).sum();
            assert!((mass - 1.0).abs() < 1e-12, "{rule:?}: {mass}");
        }
    }
}
