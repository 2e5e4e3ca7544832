//! Circle diffeomorphisms: convex combinations of anchored Möbius maps and
//! circular splines, each followed by a rotation.

use std::f64::consts::{PI, TAU};

use super::spline::{RqSpline, SplineDomain};
use crate::diffgraph::Real;
use crate::error::{Error, Result};

/// Upper bound on the magnitude of every Möbius center.
pub const MAX_CENTER_RADIUS: f64 = 0.99;

/// Squashes an unconstrained `(a, b)` into the disk of radius
/// [`MAX_CENTER_RADIUS`] along its own direction: `w = 0.99 tanh(|u|) u / |u|`.
fn squash_center<R: Real>(a: R, b: R) -> (R, R) {
    let r2 = a * a + b * b;
    let g = if r2.value() < 1e-8 {
        // tanh(r)/r = 1 - r^2/3 + 2 r^4 / 15 - ...
        R::cst(1.0) - r2 / 3.0 + r2 * r2 * (2.0 / 15.0)
    } else {
        let r = r2.sqrt();
        r.tanh() / r
    };
    let g = g * MAX_CENTER_RADIUS;
    (a * g, b * g)
}

/// Shifts `v` by a constant multiple of `2pi` into `[0, 2pi)`.
fn wrap<R: Real>(v: R) -> R {
    let turns = (v.value() / TAU).floor();
    let w = if turns != 0.0 { v - turns * TAU } else { v };
    if w.value() >= TAU {
        w - TAU
    } else if w.value() < 0.0 {
        w + TAU
    } else {
        w
    }
}

#[derive(Debug, Clone)]
pub struct MoebiusCircle<R> {
    centers: Vec<(R, R)>,
    weights: Vec<R>,
    rotation: R,
}

impl<R: Real> MoebiusCircle<R> {
    pub fn raw_len(n_centers: usize) -> usize {
        3 * n_centers + 1
    }

    /// Raw layout: `[a_1, b_1, ..., a_C, b_C, logit_1..logit_C, rotation]`.
    pub fn from_raw(raw: &[R], n_centers: usize) -> Result<Self> {
        if raw.len() != Self::raw_len(n_centers) {
            return Err(Error::DimensionMismatch { expected: Self::raw_len(n_centers), got: raw.len() });
        }
        let centers = raw[..2 * n_centers].chunks(2).map(|c| squash_center(c[0], c[1])).collect();
        let logits = &raw[2 * n_centers..3 * n_centers];
        let max = logits.iter().map(|v| v.value()).fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<R> = logits.iter().map(|v| (*v - max).exp()).collect();
        let total = R::sum(&e);
        let weights = e.into_iter().map(|v| v / total).collect();
        Ok(Self { centers, weights, rotation: raw[3 * n_centers] })
    }

    /// Build directly from centers, weights and rotation.
    pub fn from_parts(centers: Vec<(R, R)>, weights: Vec<R>, rotation: R) -> Result<Self> {
        if centers.len() != weights.len() || centers.is_empty() {
            return Err(Error::Invalid("need one weight per center".into()));
        }
        if centers.iter().any(|(a, b)| a.value().hypot(b.value()) >= 1.0) {
            return Err(Error::Invalid("Möbius centers must lie inside the unit disk".into()));
        }
        Ok(Self { centers, weights, rotation })
    }

    pub fn centers(&self) -> &[(R, R)] {
        &self.centers
    }

    /// Anchored lift `H(theta) = sum_j rho_j h_j(theta)` in `[0, 2pi]` and
    /// `log H'(theta)`, before rotation.
    fn lift(&self, theta: R) -> (R, R) {
        let (c, s) = (theta.cos(), theta.sin());
        let tv = theta.value();
        let mut h = R::cst(0.0);
        let mut dh = R::cst(0.0);
        for ((a, b), rho) in self.centers.iter().zip(&self.weights) {
            let (dx, dy) = (c - *a, s - *b);
            // arg of (z - w) / (1 - conj(w) z) equals 2 arg(z - w) - theta on the circle
            let anchor = (-*b).atan2(R::cst(1.0) - *a) * 2.0;
            let raw = dy.atan2(dx) * 2.0 - theta - anchor;
            let mut hj = wrap(raw);
            if tv <= PI && hj.value() > TAU - 0.01 {
                hj = hj - TAU;
            } else if tv > PI && hj.value() < 0.01 {
                hj = hj + TAU;
            }
            let dist2 = dx * dx + dy * dy;
            let deriv = (R::cst(1.0) - (*a * *a + *b * *b)) / dist2;
            h = h + *rho * hj;
            dh = dh + *rho * deriv;
        }
        (h, dh.ln())
    }

    /// Returns `(theta_out, log dtheta_out/dtheta)`.
    pub fn forward(&self, theta: R) -> (R, R) {
        let (h, log_deriv) = self.lift(theta);
        (wrap(h + self.rotation), log_deriv)
    }
}

/// Bracketed Newton solve of `f(x) = target` for increasing `f` on `[0, 2pi]`.
fn solve_monotone(target: f64, f: impl Fn(f64) -> (f64, f64)) -> f64 {
    let (mut lo, mut hi) = (0.0, TAU);
    let mut x = target;
    for _ in 0..200 {
        let (fx, dfx) = f(x);
        let err = fx - target;
        if err == 0.0 {
            return x;
        }
        if err > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        if hi - lo < 1e-15 {
            break;
        }
        let newton = x - err / dfx;
        x = if newton > lo && newton < hi && dfx.is_finite() { newton } else { 0.5 * (lo + hi) };
    }
    x
}

impl MoebiusCircle<f64> {
    /// Returns `(theta, log dtheta_out/dtheta at theta)`.
    pub fn inverse(&self, theta_out: f64) -> (f64, f64) {
        let target = wrap(theta_out - self.rotation);
        let x = solve_monotone(target, |t| {
            let (h, ld) = self.lift(t);
            (h, ld.exp())
        });
        let x = crate::sphere::wrap_angle(x);
        (x, self.lift(x).1)
    }
}

/// The transform applied to `theta`.
#[derive(Debug, Clone)]
pub enum CircleTransform<R> {
    Moebius(MoebiusCircle<R>),
    Spline { spline: RqSpline<R>, rotation: R },
}

impl<R: Real> CircleTransform<R> {
    pub fn forward(&self, theta: R) -> Result<(R, R)> {
        match self {
            CircleTransform::Moebius(m) => Ok(m.forward(theta)),
            CircleTransform::Spline { spline, rotation } => {
                let (y, ld) = spline.forward(theta)?;
                Ok((wrap(y + *rotation), ld))
            }
        }
    }

    pub fn from_raw_spline(raw: &[R], bins: usize) -> Result<Self> {
        let len = SplineDomain::Circle.raw_len(bins);
        if raw.len() != len + 1 {
            return Err(Error::DimensionMismatch { expected: len + 1, got: raw.len() });
        }
        Ok(CircleTransform::Spline {
            spline: RqSpline::from_raw(&raw[..len], bins, SplineDomain::Circle)?,
            rotation: raw[len],
        })
    }
}

impl CircleTransform<f64> {
    pub fn inverse(&self, theta_out: f64) -> Result<(f64, f64)> {
        match self {
            CircleTransform::Moebius(m) => Ok(m.inverse(theta_out)),
            CircleTransform::Spline { spline, rotation } => {
                let target = wrap(theta_out - rotation);
                let (x, ld) = spline.inverse(target)?;
                Ok((crate::sphere::wrap_angle(x), ld))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffgraph::{Tape, Var};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_raw(rng: &mut ChaCha8Rng, centers: usize, scale: f64) -> Vec<f64> {
        (0..MoebiusCircle::<f64>::raw_len(centers)).map(|_| rng.gen_range(-scale..scale)).collect()
    }

    #[test]
    fn zero_center_is_identity() {
        let m = MoebiusCircle::from_raw(&vec![0.0; 37], 12).unwrap();
        for i in 0..100 {
            let t = TAU * i as f64 / 100.0;
            let (out, ld) = m.forward(t);
            assert!((out - t).abs() < 1e-12 && ld.abs() < 1e-12);
        }
    }

    #[test]
    fn single_real_center_closed_form() {
        let m = MoebiusCircle::from_parts(vec![(0.5, 0.0)], vec![1.0], 0.0).unwrap();
        let (out, ld) = m.forward(0.0);
        assert_eq!(out, 0.0);
        assert!((ld - 3.0f64.ln()).abs() < 1e-14);
        // unanchored value of the map at theta = pi/2: arg((i - 0.5)/(1 - 0.5 i))
        let t = PI / 2.0;
        let w = num_complex_arg(t, 0.5);
        let (out, _) = m.forward(t);
        assert!((out - crate::sphere::wrap_angle(w)).abs() < 1e-12);
    }

    fn num_complex_arg(theta: f64, w: f64) -> f64 {
        let (c, s) = (theta.cos(), theta.sin());
        let (nr, ni) = (c - w, s);
        let (dr, di) = (1.0 - w * c, -w * s);
        let (qr, qi) = (nr * dr + ni * di, ni * dr - nr * di);
        qi.atan2(qr)
    }

    #[test]
    fn derivative_integrates_to_two_pi() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let m = MoebiusCircle::from_raw(&random_raw(&mut rng, 12, 2.0), 12).unwrap();
            let grid = 20_000;
            let total: f64 = (0..grid).map(|i| m.forward(TAU * i as f64 / grid as f64).1.exp()).sum::<f64>() * TAU / grid as f64;
            assert!((total - TAU).abs() < 1e-6, "{total}");
        }
    }

    #[test]
    fn lift_is_monotone_with_positive_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let m = MoebiusCircle::from_raw(&random_raw(&mut rng, 12, 4.0), 12).unwrap();
            let mut prev = -1.0;
            for i in 0..=5000 {
                let t = (TAU * i as f64 / 5000.0).min(TAU - 1e-12);
                let (h, ld) = m.lift(t);
                assert!(h >= prev && ld.is_finite(), "step {i}");
                prev = h;
            }
            assert!((m.lift(TAU - 1e-12).0 - TAU).abs() < 1e-9);
        }
    }

    #[test]
    fn log_derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = MoebiusCircle::from_raw(&random_raw(&mut rng, 12, 1.5), 12).unwrap();
        for _ in 0..50 {
            let t = rng.gen_range(0.1..TAU - 0.1);
            let h = 1e-6;
            let fd = (m.lift(t + h).0 - m.lift(t - h).0) / (2.0 * h);
            assert!((m.lift(t).1.exp() - fd).abs() < 1e-6 * fd.max(1.0));
        }
    }

    #[test]
    fn inverse_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..10 {
            let m = MoebiusCircle::from_raw(&random_raw(&mut rng, 12, 3.0), 12).unwrap();
            for _ in 0..100 {
                let t = rng.gen_range(0.0..TAU);
                let (out, ld) = m.forward(t);
                let (back, ld_back) = m.inverse(out);
                let d = (back - t).abs();
                assert!(d.min(TAU - d) < 1e-9, "{t} vs {back}");
                assert!((ld - ld_back).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn circular_spline_transform_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let raw: Vec<f64> = (0..3 * 8 + 1).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let t = CircleTransform::from_raw_spline(&raw, 8).unwrap();
        for _ in 0..100 {
            let x = rng.gen_range(0.0..TAU);
            let (y, ld) = t.forward(x).unwrap();
            assert!((0.0..TAU).contains(&y));
            let (back, ld2) = t.inverse(y).unwrap();
            let d = (back - x).abs();
            assert!(d.min(TAU - d) < 1e-9);
            assert!((ld - ld2).abs() < 1e-7);
        }
    }

    #[test]
    fn centers_stay_inside_cap() {
        let raw = vec![50.0, -80.0, 0.0, 0.0];
        let m = MoebiusCircle::from_raw(&[raw.clone(), vec![0.0; 3]].concat(), 2).unwrap();
        let (a, b) = m.centers()[0];
        assert!(a.hypot(b) <= MAX_CENTER_RADIUS + 1e-15);
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let raw = random_raw(&mut rng, 3, 1.0);
        let theta = 2.3;
        let eval = |r: &[f64]| {
            let (y, ld) = MoebiusCircle::from_raw(r, 3).unwrap().forward(theta);
            y + 0.7 * ld
        };
        let tape = Tape::new();
        let rv = tape.vars(&raw);
        let (y, ld) = MoebiusCircle::from_raw(&rv, 3).unwrap().forward(Var::cst(theta));
        let adj = tape.gradient(y + ld * 0.7);
        for i in 0..raw.len() {
            let mut hi = raw.clone();
            let mut lo = raw.clone();
            hi[i] += 1e-5;
            lo[i] -= 1e-5;
            let fd = (eval(&hi) - eval(&lo)) / 2e-5;
            assert!((adj.wrt(rv[i]) - fd).abs() < 1e-6 * fd.abs().max(1e-2), "param {i}: {} vs {fd}", adj.wrt(rv[i]));
        }
    }

    #[test]
    fn gradient_at_zero_centers_is_finite() {
        let tape = Tape::new();
        let rv = tape.vars(&[0.0; 7]);
        let (y, ld) = MoebiusCircle::from_raw(&rv, 2).unwrap().forward(Var::cst(1.0));
        let adj = tape.gradient(y + ld);
        assert!(tape.fault().is_none());
        assert!(rv.iter().all(|v| adj.wrt(*v).is_finite()));
        assert!(adj.wrt(rv[0]).abs() > 0.0);
    }
}
