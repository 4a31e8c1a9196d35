//! Closed-form large-N predictions for the smallest eigenvalue at β = 1/2, and
//! the weighted log-log regression that recovers the leading exponent 2/π.

use std::f64::consts::{E, PI};

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// `4π e^{−1−π/2}`, the constant inside the logarithm of the saddle-point forms.
fn saddle_constant() -> f64 {
    4.0 * PI * (-1.0 - PI / 2.0).exp()
}

/// Asymptotic predictions at one matrix order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub n: usize,
    pub lambda1_leading: f64,
    pub lambda1_nlo: f64,
    pub lambda1_saddle: f64,
    /// The older conjectured form with `log(4πNe)` under the root.
    pub lambda1_conjecture_old: f64,
    pub sum_k_leading: f64,
    pub sum_k_nlo: f64,
    /// `2π / sum_k_leading`.
    pub lower_bound: f64,
}

pub fn predict(n: usize) -> Result<Prediction> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("predictions need N >= 2, got {n}")));
    }
    let nf = n as f64;
    let ln_n = nf.ln();
    let p = 2.0 / PI;
    let scale = (4.0 * PI * nf * E).powf(p);
    let c = saddle_constant();

    let lambda1_leading = 8.0 * PI * ln_n.sqrt() / scale;
    let lambda1_nlo = lambda1_leading * (1.0 + (8.0 * c.ln() - PI) / (16.0 * ln_n));
    let lambda1_saddle = 8.0 * PI * (c * nf).ln().sqrt() / ((4.0 * PI * E).powf(p) * nf.powf(p));
    let lambda1_conjecture_old = 8.0 * PI * (4.0 * PI * nf * E).ln().sqrt() / scale;
    let sum_k_leading = scale / (4.0 * ln_n.sqrt());
    let sum_k_nlo = scale / (4.0 * (c * nf).ln().sqrt()) * (1.0 + PI / (16.0 * ln_n));
    Ok(Prediction {
        n,
        lambda1_leading,
        lambda1_nlo,
        lambda1_saddle,
        lambda1_conjecture_old,
        sum_k_leading,
        sum_k_nlo,
        lower_bound: 2.0 * PI / sum_k_leading,
    })
}

/// Regression coordinates: `x = log(4πNe)`, `y = log((8π/λ₁)·√log N)`.
pub fn fit_coordinates(n: usize, lambda1: f64) -> (f64, f64) {
    let nf = n as f64;
    ((4.0 * PI * nf * E).ln(), (8.0 * PI / lambda1 * nf.ln().sqrt()).ln())
}

/// Weighted least-squares line `y = intercept + gradient · x`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitResult {
    pub gradient: f64,
    pub intercept: f64,
    pub gradient_ci_low: f64,
    pub gradient_ci_high: f64,
    pub r_squared: f64,
    pub r_squared_adjusted: f64,
    /// `y − (intercept + gradient · x)`, in input order.
    pub residuals: Vec<f64>,
}

/// Fits `ys ≈ a + b·xs` with weights `ws`; the slope interval uses the
/// Student t quantile at `n − 2` degrees of freedom.
pub fn weighted_line_fit(xs: &[f64], ys: &[f64], ws: &[f64]) -> Result<FitResult> {
    let n = xs.len();
    if ys.len() != n || ws.len() != n {
        return Err(Error::InvalidInput("x, y and weight lengths differ".into()));
    }
    if n < 3 {
        return Err(Error::InvalidInput(format!("a fit needs at least 3 points, got {n}")));
    }
    if ws.iter().any(|w| !(w.is_finite() && *w > 0.0)) || xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("fit inputs must be finite with positive weights".into()));
    }
    let sw: f64 = ws.iter().sum();
    let xbar = xs.iter().zip(ws).map(|(x, w)| w * x).sum::<f64>() / sw;
    let ybar = ys.iter().zip(ws).map(|(y, w)| w * y).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = xs[i] - xbar;
        let dy = ys[i] - ybar;
        sxx += ws[i] * dx * dx;
        sxy += ws[i] * dx * dy;
        syy += ws[i] * dy * dy;
    }
    let spread = xs.iter().map(|x| (x - xbar).abs()).fold(0.0, f64::max);
    if spread <= f64::EPSILON * xbar.abs().max(1.0) || sxx == 0.0 {
        return Err(Error::DegenerateFit("all x values are equal".into()));
    }
    let gradient = sxy / sxx;
    let intercept = ybar - gradient * xbar;
    let residuals: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| y - (intercept + gradient * x)).collect();
    let sse: f64 = residuals.iter().zip(ws).map(|(r, w)| w * r * r).sum();
    let dof = (n - 2) as f64;
    let se = (sse / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom").inverse_cdf(0.975);
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    let r_squared_adjusted = 1.0 - (1.0 - r_squared) * (n - 1) as f64 / dof;
    Ok(FitResult {
        gradient,
        intercept,
        gradient_ci_low: gradient - t * se,
        gradient_ci_high: gradient + t * se,
        r_squared,
        r_squared_adjusted,
        residuals,
    })
}

/// Fits the leading exponent from `(N, λ₁)` pairs, weighting each point by `N²`.
pub fn fit_leading_exponent(points: &[(usize, f64)]) -> Result<FitResult> {
    for &(n, l) in points {
        if n < 2 || !(l > 0.0 && l.is_finite()) {
            return Err(Error::InvalidInput(format!("fit point (N = {n}, lambda1 = {l}) is out of range")));
        }
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().map(|&(n, l)| fit_coordinates(n, l)).unzip();
    let ws: Vec<f64> = points.iter().map(|&(n, _)| (n as f64).powi(2)).collect();
    weighted_line_fit(&xs, &ys, &ws)
}

/// Two-column whitespace-separated `x y` text, one point per line.
pub fn plot_table(points: &[(usize, f64)]) -> String {
    let mut out = String::from("# x=log(4*pi*N*e) y=log((8*pi/lambda1)*sqrt(log N))\n");
    for &(n, l) in points {
        let (x, y) = fit_coordinates(n, l);
        out.push_str(&format!("{x:.17e} {y:.17e}\n"));
    }
    out
}
