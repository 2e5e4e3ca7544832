use detflow::sphere::{
    from_cylinder, log_cylinder_measure_factor, log_uniform_density, quadrature_expectation, sample_uniform,
    to_cylinder, SpherePoint,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pearson chi-square p-value for counts against equal expected mass.
fn uniform_p_value(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|c| (*c as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn s2_samples_are_uniform_by_chi_square() {
    // on S^2, theta and z are independent and uniform
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let bins = 8;
    let mut counts = vec![0usize; bins * bins];
    for _ in 0..64_000 {
        let c = to_cylinder(&sample_uniform(3, &mut rng).unwrap()).unwrap();
        let i = ((c.theta / std::f64::consts::TAU) * bins as f64) as usize;
        let j = (((c.z[0] + 1.0) / 2.0) * bins as f64) as usize;
        counts[i.min(bins - 1) * bins + j.min(bins - 1)] += 1;
    }
    assert!(uniform_p_value(&counts) > 1e-3);
}

#[test]
fn higher_dimensional_angles_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut counts = vec![0usize; 16];
    for _ in 0..32_000 {
        let c = to_cylinder(&sample_uniform(10, &mut rng).unwrap()).unwrap();
        counts[((c.theta / std::f64::consts::TAU) * 16.0) as usize % 16] += 1;
    }
    assert!(uniform_p_value(&counts) > 1e-3);
}

#[test]
fn uniform_density_normalizes() {
    let ones = quadrature_expectation(3, |_| 1.0, 64).unwrap();
    assert!((ones - 1.0).abs() < 1e-12);
    assert!((log_uniform_density(3) + (4.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    assert!((log_uniform_density(2) + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
}

proptest! {
    #[test]
    fn chart_roundtrip(v in prop::collection::vec(-1.0f64..1.0, 3..17)) {
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-3 && v[0].hypot(v[1]) > 1e-3 * norm);
        let p = SpherePoint::new(v.clone()).unwrap();
        let c = to_cylinder(&p).unwrap();
        prop_assert!(c.theta >= 0.0 && c.theta < std::f64::consts::TAU);
        prop_assert!(c.z.iter().all(|z| z.abs() <= 1.0));
        prop_assert!(log_cylinder_measure_factor(&c) <= 1e-12);
        let back = from_cylinder(&c, v.len()).unwrap();
        for (a, b) in p.as_slice().iter().zip(back.as_slice()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
