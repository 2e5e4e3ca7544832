//! Geometry of the unit sphere `S^{n-1}`: uniform sampling, the recursive
//! cylinder chart `(theta, z_2, ..., z_{n-1})`, its surface-measure factor,
//! and grid quadrature for `n <= 3`.
//!
//! The chart peels coordinates off from the last one inwards: `z_k` is the
//! `k`-th (0-based) coordinate of the unit vector obtained by dropping all
//! coordinates after `k` and renormalizing, and `theta` is the angle of the
//! remaining 2-vector. The surface measure factorizes as
//! `dtheta * prod_k (1 - z_k^2)^{(k-2)/2} dz_k`, so for `S^2` it is exactly
//! `dtheta dz`.

use std::f64::consts::{PI, TAU};

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffgraph::Real;
use crate::error::{Error, Result};

/// Intermediate norms below this are treated as chart poles.
pub const POLE_TOLERANCE: f64 = 1e-12;

/// Floor applied to `1 - z^2` inside logarithms.
pub const MEASURE_FLOOR: f64 = 1e-12;

/// A unit vector in `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpherePoint(Vec<f64>);

impl SpherePoint {
    /// Normalizes `v`; fails for the zero vector or non-finite entries.
    pub fn new(mut v: Vec<f64>) -> Result<Self> {
        if v.len() < 2 {
            return Err(Error::Invalid(format!("sphere dimension must be >= 2, got {}", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("sphere point".into()));
        }
        let norm = stable_norm(&v);
        if norm == 0.0 {
            return Err(Error::Invalid("cannot normalize the zero vector".into()));
        }
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(Self(v))
    }

    /// Wraps a vector already known to be unit length.
    pub(crate) fn from_unit(v: Vec<f64>) -> Self {
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Chart coordinates: `theta` in `[0, 2pi)` and `z[k-2] = z_k` in `(-1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CylinderCoords {
    pub theta: f64,
    pub z: Vec<f64>,
}

impl CylinderCoords {
    pub fn new(theta: f64, z: Vec<f64>) -> Result<Self> {
        if let Some(bad) = z.iter().find(|v| !(v.abs() < 1.0)) {
            return Err(Error::Invalid(format!("cylinder coordinate {bad} not in (-1, 1)")));
        }
        if !theta.is_finite() {
            return Err(Error::NonFinite("theta".into()));
        }
        Ok(Self { theta: wrap_angle(theta), z })
    }

    /// Sphere dimension `n` (ambient), i.e. `z.len() + 2`.
    pub fn dim(&self) -> usize {
        self.z.len() + 2
    }
}

/// Euclidean norm, scaled by the largest magnitude first.
pub fn stable_norm(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    scale * v.iter().map(|x| (x / scale).powi(2)).sum::<f64>().sqrt()
}

pub fn wrap_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// Normalized standard-normal draw.
pub fn sample_uniform<G: Rng + ?Sized>(n: usize, rng: &mut G) -> Result<SpherePoint> {
    if n < 2 {
        return Err(Error::Invalid(format!("sphere dimension must be >= 2, got {n}")));
    }
    let mut v = vec![0.0; n];
    loop {
        fill_uniform(&mut v, rng);
        if v.iter().any(|x| *x != 0.0) {
            return Ok(SpherePoint(v));
        }
    }
}

/// Fills `out` with a uniform unit vector (no validation of `out.len()`).
pub(crate) fn fill_uniform<G: Rng + ?Sized>(out: &mut [f64], rng: &mut G) {
    for x in out.iter_mut() {
        *x = rng.sample(StandardNormal);
    }
    let norm = stable_norm(out);
    if norm > 0.0 {
        out.iter_mut().for_each(|x| *x /= norm);
    }
}

/// `count` uniform points as rows.
pub fn sample_uniform_batch<G: Rng + ?Sized>(n: usize, count: usize, rng: &mut G) -> Result<Array2<f64>> {
    if n < 2 {
        return Err(Error::Invalid(format!("sphere dimension must be >= 2, got {n}")));
    }
    let mut out = Array2::zeros((count, n));
    for mut row in out.rows_mut() {
        let row = row.as_slice_mut().expect("standard layout");
        loop {
            fill_uniform(row, rng);
            if row.iter().any(|x| *x != 0.0) {
                break;
            }
        }
    }
    Ok(out)
}

/// `-log |S^{n-1}| = -log(2 pi^{n/2} / Gamma(n/2))`.
pub fn log_uniform_density(n: usize) -> f64 {
    let half = n as f64 / 2.0;
    -(2.0f64.ln() + half * PI.ln() - statrs::function::gamma::ln_gamma(half))
}

pub fn to_cylinder(p: &SpherePoint) -> Result<CylinderCoords> {
    let (theta, z) = cylinder_of(p.as_slice())?;
    Ok(CylinderCoords { theta, z })
}

pub fn from_cylinder(c: &CylinderCoords, n: usize) -> Result<SpherePoint> {
    if c.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: c.dim() });
    }
    Ok(SpherePoint(sphere_of(c.theta, &c.z)))
}

/// `sum_k ((k-2)/2) log(1 - z_k^2)`.
pub fn log_cylinder_measure_factor(c: &CylinderCoords) -> f64 {
    log_measure(&c.z)
}

/// Chart map over any [`Real`]. `z_k = v_k / r_k` with `r_k` the norm of
/// `v_0..=v_k`, which equals the peel-and-renormalize recursion.
pub(crate) fn cylinder_of<R: Real>(v: &[R]) -> Result<(R, Vec<R>)> {
    let n = v.len();
    if n < 2 {
        return Err(Error::Invalid(format!("sphere dimension must be >= 2, got {n}")));
    }
    let mut sq = v[0] * v[0] + v[1] * v[1];
    let mut norms = Vec::with_capacity(n - 1);
    norms.push(sq.sqrt());
    for x in &v[2..] {
        sq = sq + *x * *x;
        norms.push(sq.sqrt());
    }
    let total = norms[n - 2].value();
    for (k, r) in norms.iter().enumerate() {
        if r.value() < POLE_TOLERANCE * total {
            return Err(Error::Pole(format!("intermediate norm {} at chart level {}", r.value(), k + 1)));
        }
    }
    let z = (2..n).map(|k| v[k] / norms[k - 1]).collect();
    let raw = v[1].atan2(v[0]);
    let theta = if raw.value() < 0.0 { raw + TAU } else { raw };
    let theta = if theta.value() >= TAU { theta - TAU } else { theta };
    Ok((theta, z))
}

/// Inverse chart over any [`Real`].
pub(crate) fn sphere_of<R: Real>(theta: R, z: &[R]) -> Vec<R> {
    let n = z.len() + 2;
    // suffix[k] = prod_{j >= k} sqrt(1 - z_j^2), indexed by chart level k
    let mut suffix = vec![R::cst(1.0); n + 1];
    for k in (2..n).rev() {
        let zk = z[k - 2];
        let c = ((R::cst(1.0) - zk) * (zk + 1.0)).max_c(0.0).sqrt();
        suffix[k] = if k == n - 1 { c } else { c * suffix[k + 1] };
    }
    let outer = if n > 2 { suffix[2] } else { R::cst(1.0) };
    let mut v = Vec::with_capacity(n);
    v.push(theta.cos() * outer);
    v.push(theta.sin() * outer);
    for k in 2..n {
        v.push(if k + 1 < n { z[k - 2] * suffix[k + 1] } else { z[k - 2] });
    }
    v
}

/// Log surface-measure factor over any [`Real`], with the `1 - z^2` floor.
pub(crate) fn log_measure<R: Real>(z: &[R]) -> R {
    let mut acc = R::cst(0.0);
    for (i, zk) in z.iter().enumerate().skip(1) {
        let k = i + 2;
        let one_minus = ((R::cst(1.0) - *zk) * (*zk + 1.0)).max_c(MEASURE_FLOOR);
        acc = acc + one_minus.ln() * ((k as f64 - 2.0) / 2.0);
    }
    acc
}

/// Expectation of `integrand` under the uniform law on `S^1` or `S^2`.
///
/// `n = 2` uses the periodic trapezoid rule on `resolution` angles; `n = 3`
/// uses a `resolution x resolution` grid over `(theta, z)` with midpoints
/// in `z` (the measure is flat there).
pub fn quadrature_expectation<F>(n: usize, integrand: F, resolution: usize) -> Result<f64>
where
    F: Fn(&SpherePoint) -> f64,
{
    if resolution == 0 {
        return Err(Error::Invalid("resolution must be positive".into()));
    }
    let m = resolution as f64;
    match n {
        2 => {
            let sum: f64 = (0..resolution)
                .map(|j| {
                    let t = TAU * j as f64 / m;
                    integrand(&SpherePoint(vec![t.cos(), t.sin()]))
                })
                .sum();
            Ok(sum / m)
        }
        3 => {
            let mut total = 0.0;
            for iz in 0..resolution {
                let z = -1.0 + (2.0 * iz as f64 + 1.0) / m;
                let ring: f64 = (0..resolution)
                    .map(|j| {
                        let t = TAU * j as f64 / m;
                        integrand(&SpherePoint(sphere_of(t, &[z])))
                    })
                    .sum();
                total += ring / m;
            }
            Ok(total / m)
        }
        _ => Err(Error::Invalid(format!("quadrature supports n in {{2, 3}}, got {n}"))),
    }
}
