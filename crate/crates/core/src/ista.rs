//! Classical ISTA, the non-learned baseline.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Power-method iterations used when deriving the default step size.
pub const POWER_ITERS: usize = 100;
/// Default step is `STEP_FRACTION / sigma_max(A)^2`.
pub const STEP_FRACTION: f64 = 0.9;
/// Default sparsity weight is `LAMBDA_FRACTION * ||A^T y||_inf`.
pub const LAMBDA_FRACTION: f64 = 0.1;

#[inline]
pub(crate) fn shrink(v: f64, theta: f64) -> f64 {
    // Branch-free form; gives v - theta, v + theta or exactly 0.
    v - v.max(-theta).min(theta)
}

/// Elementwise `sign(v) * max(|v| - theta, 0)`.
pub fn soft_threshold(v: ArrayView1<'_, f64>, theta: f64) -> Result<Array1<f64>> {
    if !(theta >= 0.0) {
        return Err(Error::param("theta", format!("{theta} is negative")));
    }
    Ok(v.mapv(|x| shrink(x, theta)))
}

/// Largest singular value of `a`, estimated by power iteration on `A^T A`
/// from a fixed all-ones start.
pub fn largest_singular_value(a: ArrayView2<'_, f64>, iters: usize) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut sigma = 0.0;
    for _ in 0..iters {
        let w = a.t().dot(&a.dot(&v));
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        sigma = norm.sqrt();
        v = w / norm;
    }
    sigma
}

/// Step size `0.9 / sigma_max^2`.
pub fn default_step(a: ArrayView2<'_, f64>) -> f64 {
    let sigma = largest_singular_value(a, POWER_ITERS);
    STEP_FRACTION / (sigma * sigma)
}

/// Sparsity weight `0.1 * ||A^T y||_inf`.
pub fn default_lambda(a: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    LAMBDA_FRACTION * a.t().dot(&y).fold(0.0_f64, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IstaConfig {
    pub lambda: f64,
    pub step: f64,
    pub iters: usize,
}

impl IstaConfig {
    /// Per-instance defaults; either value may be overridden.
    pub fn auto(
        a: ArrayView2<'_, f64>,
        y: ArrayView1<'_, f64>,
        iters: usize,
        lambda: Option<f64>,
        step: Option<f64>,
    ) -> Self {
        IstaConfig {
            lambda: lambda.unwrap_or_else(|| default_lambda(a, y)),
            step: step.unwrap_or_else(|| default_step(a)),
            iters,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::param("lambda", format!("{} is not a non-negative number", self.lambda)));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::param("step", format!("{} is not positive", self.step)));
        }
        if self.iters == 0 {
            return Err(Error::param("iters", "must be positive"));
        }
        Ok(())
    }
}

fn check_dims(a: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, x: ArrayView1<'_, f64>) -> Result<()> {
    let (m, n) = a.dim();
    if y.len() != m {
        return Err(Error::mismatch(format!("measurement of length {m}"), y.len()));
    }
    if x.len() != n {
        return Err(Error::mismatch(format!("estimate of length {n}"), x.len()));
    }
    Ok(())
}

/// One proximal-gradient step `soft(x + t A^T (y - A x), lambda * t)`.
pub fn ista_step(
    a: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    x: ArrayView1<'_, f64>,
    lambda: f64,
    step: f64,
) -> Result<Array1<f64>> {
    check_dims(a, y, x)?;
    let residual = &y - &a.dot(&x);
    let z = &x + &(a.t().dot(&residual) * step);
    soft_threshold(z.view(), lambda * step)
}

/// Runs `cfg.iters` steps from zero. Returns the final estimate and every
/// intermediate one (`trace[i]` is the estimate after `i + 1` steps).
pub fn ista_solve(
    a: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    cfg: &IstaConfig,
) -> Result<(Array1<f64>, Vec<Array1<f64>>)> {
    cfg.validate()?;
    let mut x = Array1::zeros(a.ncols());
    check_dims(a, y, x.view())?;
    let mut trace = Vec::with_capacity(cfg.iters);
    for _ in 0..cfg.iters {
        x = ista_step(a, y, x.view(), cfg.lambda, cfg.step)?;
        trace.push(x.clone());
    }
    Ok((x, trace))
}

/// `0.5 ||y - A x||^2 + lambda ||x||_1`, the objective ISTA with threshold
/// `lambda * t` descends.
pub fn lasso_objective(
    a: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    x: ArrayView1<'_, f64>,
    lambda: f64,
) -> f64 {
    let r = &y - &a.dot(&x);
    0.5 * r.dot(&r) + lambda * x.iter().map(|v| v.abs()).sum::<f64>()
}

/// Runs ISTA on every column of `y` (M x S) with per-instance defaults and
/// returns the per-iteration estimates stacked as N x S matrices.
pub fn ista_batch(
    a: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    iters: usize,
    lambda: Option<f64>,
    step: Option<f64>,
) -> Result<Vec<Array2<f64>>> {
    let step = step.unwrap_or_else(|| default_step(a));
    let mut out = vec![Array2::zeros((a.ncols(), y.ncols())); iters];
    for (s, col) in y.columns().into_iter().enumerate() {
        let cfg = IstaConfig::auto(a, col, iters, lambda, Some(step));
        let (_, trace) = ista_solve(a, col, &cfg)?;
        for (layer, est) in trace.into_iter().enumerate() {
            out[layer].column_mut(s).assign(&est);
        }
    }
    Ok(out)
}
