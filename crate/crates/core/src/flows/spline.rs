//! Monotone rational-quadratic splines on an interval or on the circle.

use std::f64::consts::TAU;

use crate::diffgraph::Real;
use crate::error::{Error, Result};

/// Smallest bin width / height as a fraction of the interval.
pub const MIN_BIN_FRACTION: f64 = 1e-3;
pub const MIN_DERIVATIVE: f64 = 1e-3;

/// Shift so that zero raw derivative parameters give knot slope exactly 1
/// (up to rounding).
fn derivative_shift() -> f64 {
    ((1.0 - MIN_DERIVATIVE).exp() - 1.0).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplineDomain {
    /// `[-1, 1]`, endpoints fixed, boundary slopes free.
    Interval,
    /// `[0, 2pi)`, `0` fixed, slope at `0` and `2pi` tied.
    Circle,
}

impl SplineDomain {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            SplineDomain::Interval => (-1.0, 1.0),
            SplineDomain::Circle => (0.0, TAU),
        }
    }

    /// Raw parameters per spline: widths, heights, knot slopes.
    pub fn raw_len(self, bins: usize) -> usize {
        match self {
            SplineDomain::Interval => 3 * bins + 1,
            SplineDomain::Circle => 3 * bins,
        }
    }
}

/// Knots of a rational-quadratic spline.
#[derive(Debug, Clone)]
pub struct RqSpline<R> {
    xs: Vec<R>,
    ys: Vec<R>,
    ds: Vec<R>,
    left: f64,
    right: f64,
}

fn softmax<R: Real>(raw: &[R]) -> Vec<R> {
    let max = raw.iter().map(|v| v.value()).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<R> = raw.iter().map(|v| (*v - max).exp()).collect();
    let total = R::sum(&e);
    e.into_iter().map(|v| v / total).collect()
}

fn knot_positions<R: Real>(raw: &[R], left: f64, right: f64) -> Vec<R> {
    let bins = raw.len();
    let span = right - left;
    let scale = (1.0 - MIN_BIN_FRACTION * bins as f64) * span;
    let mut knots = Vec::with_capacity(bins + 1);
    knots.push(R::cst(left));
    let mut acc = R::cst(left);
    for (i, p) in softmax(raw).into_iter().enumerate() {
        if i + 1 == bins {
            knots.push(R::cst(right));
        } else {
            acc = acc + (p * scale + MIN_BIN_FRACTION * span);
            knots.push(acc);
        }
    }
    knots
}

impl<R: Real> RqSpline<R> {
    /// Builds the knots from unconstrained parameters
    /// `[widths (K), heights (K), slopes (K+1 or K)]`.
    pub fn from_raw(raw: &[R], bins: usize, domain: SplineDomain) -> Result<Self> {
        if raw.len() != domain.raw_len(bins) {
            return Err(Error::DimensionMismatch { expected: domain.raw_len(bins), got: raw.len() });
        }
        let (left, right) = domain.bounds();
        let xs = knot_positions(&raw[..bins], left, right);
        let ys = knot_positions(&raw[bins..2 * bins], left, right);
        let shift = derivative_shift();
        let mut ds: Vec<R> = raw[2 * bins..].iter().map(|v| (*v + shift).softplus() + MIN_DERIVATIVE).collect();
        if domain == SplineDomain::Circle {
            ds.push(ds[0]);
        }
        Ok(Self { xs, ys, ds, left, right })
    }

    pub fn bins(&self) -> usize {
        self.xs.len() - 1
    }

    fn locate(knots: &[R], v: f64) -> usize {
        let bins = knots.len() - 1;
        // last knot index with value <= v, clamped to a valid bin
        let k = knots.partition_point(|x| x.value() <= v);
        k.saturating_sub(1).min(bins - 1)
    }

    fn check_domain(&self, v: f64) -> Result<()> {
        let tol = 1e-12 * (self.right - self.left);
        if !(v >= self.left - tol && v <= self.right + tol) {
            return Err(Error::OutOfDomain { value: v, left: self.left, right: self.right });
        }
        Ok(())
    }

    /// Returns `(y, log dy/dx)`.
    pub fn forward(&self, x: R) -> Result<(R, R)> {
        self.check_domain(x.value())?;
        let k = Self::locate(&self.xs, x.value());
        let (x0, x1) = (self.xs[k], self.xs[k + 1]);
        let (y0, y1) = (self.ys[k], self.ys[k + 1]);
        let (d0, d1) = (self.ds[k], self.ds[k + 1]);
        let w = x1 - x0;
        let h = y1 - y0;
        let s = h / w;
        let xi = (x - x0) / w;
        let xi = if xi.value() < 0.0 {
            R::cst(0.0)
        } else if xi.value() > 1.0 {
            R::cst(1.0)
        } else {
            xi
        };
        let one_minus = R::cst(1.0) - xi;
        let t = xi * one_minus;
        let den = s + (d1 + d0 - s * 2.0) * t;
        let y = y0 + h * (s * xi * xi + d0 * t) / den;
        let slope_num = d1 * xi * xi + s * t * 2.0 + d0 * one_minus * one_minus;
        let log_deriv = s.ln() * 2.0 + slope_num.ln() - den.ln() * 2.0;
        Ok((y, log_deriv))
    }
}

impl RqSpline<f64> {
    /// Returns `(x, log dy/dx at x)` for `y = forward(x)`.
    pub fn inverse(&self, y: f64) -> Result<(f64, f64)> {
        self.check_domain(y)?;
        let k = Self::locate(&self.ys, y);
        let (x0, x1) = (self.xs[k], self.xs[k + 1]);
        let (y0, y1) = (self.ys[k], self.ys[k + 1]);
        let (d0, d1) = (self.ds[k], self.ds[k + 1]);
        let w = x1 - x0;
        let h = y1 - y0;
        let s = h / w;
        let dy = (y - y0).clamp(0.0, h);
        let curv = d1 + d0 - 2.0 * s;
        let a = h * (s - d0) + dy * curv;
        let b = h * d0 - dy * curv;
        let c = -s * dy;
        let disc = (b * b - 4.0 * a * c).max(0.0);
        let xi = if dy == 0.0 { 0.0 } else { (2.0 * c) / (-b - disc.sqrt()) };
        let xi = xi.clamp(0.0, 1.0);
        let x = if k + 1 == self.bins() && xi == 1.0 { x1 } else { x0 + xi * w };
        let (_, log_deriv) = self.forward(x)?;
        Ok((x, log_deriv))
    }
}
