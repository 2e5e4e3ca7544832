//! One flow layer: a fixed rotation into the layer's frame, the cylinder
//! chart, coordinate-wise transforms whose parameters come from
//! conditioners, and the way back.
//!
//! Coordinates are indexed `0 = theta`, `j >= 1 -> z_{j+1}`.

use std::ops::Range;

use super::moebius::{CircleTransform, MoebiusCircle};
use super::spline::{RqSpline, SplineDomain};
use super::{CircleKind, FlowSpec};
use crate::diffgraph::{Conditioner, Layout, Real};
use crate::error::{Error, Result};
use crate::sphere::{self, MEASURE_FLOOR};

/// Transforms `targets` with parameters computed from the layer-input
/// values of `cond`.
#[derive(Debug, Clone)]
pub(crate) struct Step {
    pub targets: Vec<usize>,
    pub cond: Vec<usize>,
    pub conditioner: Conditioner,
    pub slices: Vec<Range<usize>>,
}

impl Step {
    pub fn feature_dim(cond: &[usize]) -> usize {
        cond.iter().map(|c| if *c == 0 { 2 } else { 1 }).sum()
    }

    /// `(cos theta, sin theta)` for the angle, the raw value for each `z`.
    pub fn features<R: Real>(&self, coords: &[R]) -> Vec<R> {
        let mut out = Vec::with_capacity(self.conditioner.in_dim());
        for c in &self.cond {
            if *c == 0 {
                out.push(coords[0].cos());
                out.push(coords[0].sin());
            } else {
                out.push(coords[*c]);
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub(crate) struct FlowLayer {
    pub steps: Vec<Step>,
    /// Row-major orthogonal `n x n` matrix taking points into the layer frame.
    pub rotation: Option<Vec<f64>>,
    n: usize,
    circle: CircleKind,
    n_centers: usize,
    n_bins: usize,
}

fn raw_len_for(coord: usize, spec: &FlowSpec) -> usize {
    if coord == 0 {
        match spec.circle {
            CircleKind::Moebius => MoebiusCircle::<f64>::raw_len(spec.n_centers),
            CircleKind::Spline => SplineDomain::Circle.raw_len(spec.n_bins) + 1,
        }
    } else {
        SplineDomain::Interval.raw_len(spec.n_bins)
    }
}

impl FlowLayer {
    pub fn new(
        spec: &FlowSpec,
        plan: Vec<(Vec<usize>, Vec<usize>)>,
        rotation: Option<Vec<f64>>,
        layout: &mut Layout,
        prefix: &str,
    ) -> Self {
        let steps = plan
            .into_iter()
            .enumerate()
            .map(|(j, (targets, cond))| {
                let mut slices = Vec::with_capacity(targets.len());
                let mut off = 0;
                for t in &targets {
                    let len = raw_len_for(*t, spec);
                    slices.push(off..off + len);
                    off += len;
                }
                let conditioner = Conditioner::register(
                    layout,
                    &format!("{prefix}.step{j}"),
                    Step::feature_dim(&cond),
                    &spec.conditioner.hidden,
                    off,
                );
                Step { targets, cond, conditioner, slices }
            })
            .collect();
        Self { steps, rotation, n: spec.n, circle: spec.circle, n_centers: spec.n_centers, n_bins: spec.n_bins }
    }

    pub fn is_identity(&self, params: &[f64]) -> bool {
        self.steps.iter().all(|s| s.conditioner.has_zero_head(params))
    }

    pub fn rotate<R: Real>(&self, s: &[R], transpose: bool) -> Vec<R> {
        match &self.rotation {
            None => s.to_vec(),
            Some(m) => {
                let n = self.n;
                (0..n)
                    .map(|i| {
                        let terms: Vec<R> = (0..n)
                            .map(|j| s[j] * if transpose { m[j * n + i] } else { m[i * n + j] })
                            .collect();
                        R::sum(&terms)
                    })
                    .collect()
            }
        }
    }

    /// Chart coordinates of `s` in this layer's frame.
    pub fn coords<R: Real>(&self, s: &[R]) -> Result<Vec<R>> {
        let u = self.rotate(s, false);
        let (theta, z) = sphere::cylinder_of(&u)?;
        let mut c = Vec::with_capacity(self.n - 1);
        c.push(theta);
        c.extend(z);
        Ok(c)
    }

    /// Back from chart coordinates to a point in the ambient frame.
    pub fn point<R: Real>(&self, coords: &[R]) -> Vec<R> {
        let v = sphere::sphere_of(coords[0], &coords[1..]);
        self.rotate(&v, true)
    }

    fn transform_forward<R: Real>(&self, coord: usize, raw: &[R], x: R) -> Result<(R, R)> {
        if coord == 0 {
            let t = match self.circle {
                CircleKind::Moebius => CircleTransform::Moebius(MoebiusCircle::from_raw(raw, self.n_centers)?),
                CircleKind::Spline => CircleTransform::from_raw_spline(raw, self.n_bins)?,
            };
            t.forward(x)
        } else {
            RqSpline::from_raw(raw, self.n_bins, SplineDomain::Interval)?.forward(x)
        }
    }

    fn transform_inverse(&self, coord: usize, raw: &[f64], y: f64) -> Result<(f64, f64)> {
        if coord == 0 {
            let t = match self.circle {
                CircleKind::Moebius => CircleTransform::Moebius(MoebiusCircle::from_raw(raw, self.n_centers)?),
                CircleKind::Spline => CircleTransform::from_raw_spline(raw, self.n_bins)?,
            };
            t.inverse(y)
        } else {
            RqSpline::from_raw(raw, self.n_bins, SplineDomain::Interval)?.inverse(y)
        }
    }

    /// Applies every step given the raw conditioner outputs (one slice per
    /// step). Returns the output point and the log-density change with
    /// respect to surface measure.
    pub fn apply<R: Real>(&self, coords_in: &[R], raws: &[&[R]]) -> Result<(Vec<R>, R)> {
        let (v, logdet) = self.apply_frame(coords_in, raws)?;
        Ok((self.rotate(&v, true), logdet))
    }

    /// As [`FlowLayer::apply`], but the output point stays in the layer frame.
    pub fn apply_frame<R: Real>(&self, coords_in: &[R], raws: &[&[R]]) -> Result<(Vec<R>, R)> {
        let mut out = coords_in.to_vec();
        let mut logdet = R::cst(0.0);
        for (step, raw) in self.steps.iter().zip(raws) {
            for (t, range) in step.targets.iter().zip(&step.slices) {
                let (y, ld) = self.transform_forward(*t, &raw[range.clone()], coords_in[*t])?;
                out[*t] = y;
                logdet = logdet + ld;
            }
        }
        check_measure_floor(&out)?;
        let logdet = logdet + sphere::log_measure(&out[1..]) - sphere::log_measure(&coords_in[1..]);
        Ok((sphere::sphere_of(out[0], &out[1..]), logdet))
    }

    /// Inverts step `index` in place on `coords` (which hold layer-output
    /// values for this step's targets), returning the forward log-derivative
    /// sum at the recovered inputs.
    pub fn invert_step(&self, index: usize, coords: &mut [f64], raw: &[f64]) -> Result<f64> {
        let step = &self.steps[index];
        let mut ld = 0.0;
        for (t, range) in step.targets.iter().zip(&step.slices) {
            let (x, l) = self.transform_inverse(*t, &raw[range.clone()], coords[*t])?;
            coords[*t] = x;
            ld += l;
        }
        Ok(ld)
    }
}

pub(crate) fn check_measure_floor<R: Real>(coords: &[R]) -> Result<()> {
    for z in &coords[1..] {
        let v = z.value();
        if (1.0 - v) * (1.0 + v) < MEASURE_FLOOR {
            return Err(Error::Pole(format!("z = {v} hits the measure floor")));
        }
    }
    Ok(())
}

/// Coordinate plans: `(targets, conditioning)` per step.
pub(crate) fn coupling_plan(n: usize, layer: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let m = n - 2;
    if m == 0 {
        return vec![(vec![0], vec![])];
    }
    // ceil(m/2) z's join theta, but at least one z is left to transform
    let half = m.div_ceil(2).min(m - 1);
    let first: Vec<usize> = (0..=half).collect();
    let second: Vec<usize> = (half + 1..=m).collect();
    if layer % 2 == 0 {
        vec![(second, first)]
    } else {
        vec![(first, second)]
    }
}

pub(crate) fn autoregressive_plan(n: usize, layer: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut order: Vec<usize> = (0..n - 1).collect();
    if layer % 2 == 1 {
        order.reverse();
    }
    (0..order.len()).map(|i| (vec![order[i]], order[..i].to_vec())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coupling_groups() {
        assert_eq!(coupling_plan(3, 0), vec![(vec![1], vec![0])]);
        assert_eq!(coupling_plan(3, 1), vec![(vec![0], vec![1])]);
        assert_eq!(coupling_plan(10, 0), vec![(vec![5, 6, 7, 8], vec![0, 1, 2, 3, 4])]);
        assert_eq!(coupling_plan(10, 1), vec![(vec![0, 1, 2, 3, 4], vec![5, 6, 7, 8])]);
        assert_eq!(coupling_plan(2, 4), vec![(vec![0], vec![])]);
        assert_eq!(coupling_plan(7, 0), vec![(vec![4, 5], vec![0, 1, 2, 3])]);
    }

    #[test]
    fn autoregressive_orders() {
        assert_eq!(autoregressive_plan(3, 0), vec![(vec![0], vec![]), (vec![1], vec![0])]);
        assert_eq!(autoregressive_plan(3, 1), vec![(vec![1], vec![]), (vec![0], vec![1])]);
        let p = autoregressive_plan(5, 0);
        assert_eq!(p[3], (vec![3], vec![0, 1, 2]));
    }
}
