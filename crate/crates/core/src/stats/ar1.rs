use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{p_from_cdf, t_cdf, Alternative, PhaseSeries, TestResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimation {
    #[default]
    Reml,
    Ml,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ar1Options {
    pub estimation: Estimation,
    /// Open search interval for the autocorrelation.
    pub rho_bounds: (f64, f64),
    pub grid_points: usize,
}

impl Default for Ar1Options {
    fn default() -> Self {
        Ar1Options {
            estimation: Estimation::Reml,
            rho_bounds: (-0.999, 0.999),
            grid_points: 200,
        }
    }
}

/// Generalised least-squares fit at one autocorrelation value.
#[derive(Debug, Clone, PartialEq)]
pub struct GlsFit {
    /// Intercept, intervention, then covariates.
    pub beta: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub sigma2: f64,
    pub rho: f64,
    /// Profiled (restricted) log-likelihood, up to a constant.
    pub log_likelihood: f64,
    pub df_resid: usize,
}

/// `[1, I, covariates...]`, one row per observation.
fn design_matrix(series: &PhaseSeries, covariates: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
    let n = series.len();
    let q = covariates.map_or(0, |c| c.ncols());
    if let Some(c) = covariates {
        if c.nrows() != n {
            return Err(Error::shape(
                "lm_ar1",
                format!("{} covariate rows for {n} observations", c.nrows()),
            ));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("covariates contain non-finite values".into()));
        }
    }
    Ok(DMatrix::from_fn(n, 2 + q, |i, j| match j {
        0 => 1.0,
        1 => f64::from(u8::from(series.intervention[i])),
        _ => covariates.expect("q > 0")[(i, j - 2)],
    }))
}

/// Applies the inverse Cholesky factor of the AR(1) correlation matrix.
///
/// For observations `g` steps apart the lag coefficient is `rho^g`, so gaps
/// in the series are handled by the same recursion.
fn whiten(m: &DMatrix<f64>, timestamps: &[usize], rho: f64) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 1..m.nrows() {
        let phi = rho.powi((timestamps[i] - timestamps[i - 1]) as i32);
        let scale = (1.0 - phi * phi).sqrt();
        for j in 0..m.ncols() {
            out[(i, j)] = (m[(i, j)] - phi * m[(i - 1, j)]) / scale;
        }
    }
    out
}

fn log_det_correlation(timestamps: &[usize], rho: f64) -> f64 {
    timestamps
        .windows(2)
        .map(|w| {
            let phi = rho.powi((w[1] - w[0]) as i32);
            (1.0 - phi * phi).ln()
        })
        .sum()
}

fn fit_at(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    timestamps: &[usize],
    rho: f64,
    estimation: Estimation,
) -> Result<GlsFit> {
    let (n, p) = x.shape();
    let xw = whiten(x, timestamps, rho);
    let yw = whiten(&DMatrix::from_column_slice(n, 1, y.as_slice()), timestamps, rho).column(0).into_owned();
    let xtx = xw.transpose() * &xw;
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numeric("lm_ar1", "whitened design matrix is singular"))?;
    let beta = chol.solve(&(xw.transpose() * &yw));
    let resid = &yw - &xw * &beta;
    let rss = resid.norm_squared();
    let ln_r = log_det_correlation(timestamps, rho);
    let two_pi_e = (2.0 * std::f64::consts::PI).ln() + 1.0;
    let (sigma2, log_likelihood) = match estimation {
        Estimation::Ml => {
            let s2 = rss / n as f64;
            (s2, -0.5 * (n as f64 * (two_pi_e + s2.ln()) + ln_r))
        }
        Estimation::Reml => {
            let m = (n - p) as f64;
            let s2 = rss / m;
            let ln_xtx = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            (s2, -0.5 * (m * (two_pi_e + s2.ln()) + ln_r + ln_xtx))
        }
    };
    let inv = chol.inverse();
    let std_errors = (0..p).map(|j| (sigma2 * inv[(j, j)]).sqrt()).collect();
    Ok(GlsFit {
        beta: beta.iter().copied().collect(),
        std_errors,
        sigma2,
        rho,
        log_likelihood,
        df_resid: n - p,
    })
}

fn prepare(
    series: &PhaseSeries,
    covariates: Option<&DMatrix<f64>>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let x = design_matrix(series, covariates)?;
    let (n, p) = x.shape();
    if n < 4 || n <= p {
        return Err(Error::Usage(format!(
            "AR(1) model with {p} coefficients needs more than max(3, {p}) observations, got {n}"
        )));
    }
    let sv = x.clone().singular_values();
    let (lo, hi) = sv.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    if !(lo > 1e-10 * hi) {
        return Err(Error::Validation(
            "design matrix is rank deficient (constant intervention or collinear covariates)".into(),
        ));
    }
    Ok((x, DVector::from_column_slice(&series.values)))
}

/// GLS fit with the autocorrelation held fixed.
pub fn gls_fixed_rho(
    series: &PhaseSeries,
    covariates: Option<&DMatrix<f64>>,
    rho: f64,
    estimation: Estimation,
) -> Result<GlsFit> {
    if !(rho.abs() < 1.0) {
        return Err(Error::Usage(format!("rho must lie in (-1, 1), got {rho}")));
    }
    let (x, y) = prepare(series, covariates)?;
    fit_at(&x, &y, &series.timestamps, rho, estimation)
}

/// Maximises `f` on `[a, b]` by golden-section search.
fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

/// Linear model `y = b0 + b1 I (+ covariates)` with AR(1) errors and a Wald
/// t-test on the intervention coefficient.
///
/// The autocorrelation is profiled out: a grid over the search interval
/// locates the maximum of the (restricted) likelihood, and a golden-section
/// search refines it within the neighbouring grid cells.
pub fn lm_ar1(
    series: &PhaseSeries,
    covariates: Option<&DMatrix<f64>>,
    alternative: Alternative,
    options: &Ar1Options,
) -> Result<TestResult> {
    let (lo, hi) = options.rho_bounds;
    if !(-1.0 < lo && lo < hi && hi < 1.0) || options.grid_points < 3 {
        return Err(Error::Config(format!(
            "rho bounds ({lo}, {hi}) must lie inside (-1, 1) with at least 3 grid points"
        )));
    }
    let (x, y) = prepare(series, covariates)?;
    let t = &series.timestamps;
    let objective = |rho: f64| {
        fit_at(&x, &y, t, rho, options.estimation)
            .map(|f| f.log_likelihood)
            .ok()
            .filter(|l| l.is_finite())
            .unwrap_or(f64::NEG_INFINITY)
    };

    let k = options.grid_points;
    let grid: Vec<f64> = (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&r| objective(r)).collect();
    let best = (0..k).fold(0, |b, i| if values[i] > values[b] { i } else { b });

    let mut notes = Vec::new();
    let rho = if values[best] == f64::NEG_INFINITY {
        notes.push("likelihood not finite anywhere on the rho grid; fell back to rho = 0".into());
        0.0
    } else {
        let a = grid[best.saturating_sub(1)];
        let b = grid[(best + 1).min(k - 1)];
        let r = golden_max(objective, a, b, 1e-10);
        if objective(r) >= values[best] {
            r
        } else {
            grid[best]
        }
    };
    if (rho - lo).abs() < 1e-6 || (hi - rho).abs() < 1e-6 {
        notes.push(format!("rho estimate {rho:.4} is on the search boundary"));
    }
    for n in &notes {
        log::warn!("lm_ar1: {n}");
    }

    let fit = fit_at(&x, &y, t, rho, options.estimation)?;
    let (b1, se) = (fit.beta[1], fit.std_errors[1]);
    if !(se > 0.0) {
        return Err(Error::numeric("lm_ar1", "zero standard error for the intervention effect"));
    }
    let stat = b1 / se;
    let df = fit.df_resid as f64;
    let p = if df >= 1.0 {
        p_from_cdf(t_cdf(stat, df)?, t_cdf(-stat, df)?, alternative)
    } else {
        return Err(Error::Usage("no residual degrees of freedom".into()));
    };
    let mut r = TestResult::new("lm_ar1", stat, p, alternative);
    r.df = Some(df);
    r.estimate = Some(b1);
    r.std_error = Some(se);
    r.rho = Some(rho);
    r.notes = notes;
    Ok(r)
}
