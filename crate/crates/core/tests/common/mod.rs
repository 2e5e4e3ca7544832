//! Checks shared by the flow tests and the acceptance runner. Each returns
//! the measured error so callers can assert or report it.
#![allow(dead_code)]

use detflow::flows::{FlowSpec, SphericalFlow};
use detflow::operators::{exact_logabsdet, load_fixture, DenseOperator};
use detflow::sphere::{
    from_cylinder, log_uniform_density, quadrature_expectation, sample_uniform, sample_uniform_batch, to_cylinder,
    CylinderCoords, SpherePoint,
};
use detflow::train::{objective_and_grad, objective_batch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_flow(spec: &FlowSpec, seed: u64, scale: f64) -> SphericalFlow {
    let mut flow = SphericalFlow::with_seed(spec, seed).unwrap();
    flow.randomize(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xabc), scale);
    flow
}

/// Largest point or log-det error of `inverse(forward(s))` over `count` draws.
pub fn inverse_error(flow: &SphericalFlow, count: usize, seed: u64) -> f64 {
    let n = flow.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let s0 = sample_uniform(n, &mut rng).unwrap();
        let Ok((s, ld)) = flow.flow_forward(&s0) else { continue };
        let (back, ld_back) = flow.flow_inverse(&s).unwrap();
        for (a, b) in s0.as_slice().iter().zip(back.as_slice()) {
            worst = worst.max((a - b).abs());
        }
        worst = worst.max((ld - ld_back).abs());
    }
    worst
}

fn pack(c: &CylinderCoords) -> Vec<f64> {
    let mut v = vec![c.theta];
    v.extend(&c.z);
    v
}

/// Log-determinant from central differences in the global chart plus the
/// surface measure factors on each side.
pub fn fd_logdet(flow: &SphericalFlow, s0: &SpherePoint) -> f64 {
    let n = s0.dim();
    let eval = |x: &[f64]| -> Vec<f64> {
        let p = from_cylinder(&CylinderCoords::new(x[0], x[1..].to_vec()).unwrap(), n).unwrap();
        pack(&to_cylinder(&flow.flow_forward(&p).unwrap().0).unwrap())
    };
    let x0 = pack(&to_cylinder(s0).unwrap());
    let y0 = eval(&x0);
    let m = n - 1;
    let h = 1e-6;
    let mut jac = vec![0.0; m * m];
    for j in 0..m {
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[j] += h;
        xm[j] -= h;
        let (yp, ym) = (eval(&xp), eval(&xm));
        for i in 0..m {
            let mut d = yp[i] - ym[i];
            if i == 0 {
                d = (d + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
            }
            jac[i * m + j] = d / (2.0 * h);
        }
    }
    let measure = |c: &[f64]| -> f64 { c[1..].iter().enumerate().map(|(i, z)| (i as f64 / 2.0) * (1.0 - z * z).ln()).sum() };
    let ld = exact_logabsdet(&DenseOperator::from_row_major(m, jac).unwrap()).logabs;
    ld + measure(&y0) - measure(&x0)
}

/// Largest |analytic - FD| log-det gap over `points` draws away from the chart seams.
pub fn fd_logdet_error(flow: &SphericalFlow, points: usize, seed: u64) -> f64 {
    let n = flow.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < points {
        let s0 = sample_uniform(n, &mut rng).unwrap();
        let c = to_cylinder(&s0).unwrap();
        if c.z.iter().any(|z| z.abs() > 0.95) || c.theta < 1e-3 || c.theta > std::f64::consts::TAU - 1e-3 {
            continue;
        }
        let (_, ld) = flow.flow_forward(&s0).unwrap();
        worst = worst.max((ld - fd_logdet(flow, &s0)).abs());
        checked += 1;
    }
    worst
}

/// Quadrature mass of the pushforward density on `S^2`, with the spread
/// of its log density relative to uniform.
pub fn pushforward_mass(flow: &SphericalFlow, resolution: usize) -> (f64, f64) {
    let lu = log_uniform_density(3);
    let spread = std::cell::Cell::new((f64::INFINITY, f64::NEG_INFINITY));
    let mass = quadrature_expectation(
        3,
        |s| {
            let lq = flow.flow_log_density(s).unwrap() - lu;
            let (lo, hi) = spread.get();
            spread.set((lo.min(lq), hi.max(lq)));
            lq.exp()
        },
        resolution,
    )
    .unwrap();
    let (lo, hi) = spread.get();
    (mass, hi - lo)
}

/// Relative gap between the analytic directional derivative of the
/// training objective and a central difference along a random direction.
pub fn gradient_rel_error(fixture: &str, spec: &FlowSpec, seed: u64) -> f64 {
    let op = load_fixture(fixture).unwrap();
    let mut flow = random_flow(spec, seed, 0.2);
    let s0 = sample_uniform_batch(spec.n, 64, &mut ChaCha8Rng::seed_from_u64(seed + 1)).unwrap();
    let (_, g) = objective_and_grad(&op, &flow, s0.view()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let dir: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let analytic: f64 = g.as_slice().iter().zip(&dir).map(|(a, b)| a * b).sum();
    let base = flow.params().values().to_vec();
    let h = 1e-6;
    let mut at = |t: f64| {
        for (p, (b, d)) in flow.params_mut().values_mut().iter_mut().zip(base.iter().zip(&dir)) {
            *p = b + t * d;
        }
        objective_batch(&op, &flow, s0.view()).unwrap()
    };
    let fd = (at(h) - at(-h)) / (2.0 * h);
    (analytic - fd).abs() / analytic.abs().max(1e-3)
}
