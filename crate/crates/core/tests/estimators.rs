use detflow::estimators::{kl_bound_estimate, mc_estimate, mean_std, oracle_logabsdet, vde_estimate, Method};
use detflow::flows::{FlowSpec, SphericalFlow};
use detflow::operators::{load_fixture, DenseOperator, LinearOperator, OperatorHandle};
use detflow::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_flow(spec: &FlowSpec, seed: u64, scale: f64) -> SphericalFlow {
    let mut flow = SphericalFlow::with_seed(spec, seed).unwrap();
    flow.randomize(&mut ChaCha8Rng::seed_from_u64(seed), scale);
    flow
}

#[test]
fn mc_reciprocal_is_unbiased() {
    let op = load_fixture("cover3x3").unwrap();
    let truth = oracle_logabsdet(&op).logabs;
    let vals: Vec<f64> = (0..100).map(|s| mc_estimate(&op, 10_000, s).unwrap().inv_det_estimate).collect();
    let (mean, std) = mean_std(&vals);
    let se = std / 10.0;
    assert!((mean - (-truth).exp()).abs() < 4.0 * se, "{mean} vs {} (se {se})", (-truth).exp());
}

#[test]
fn vde_reciprocal_is_unbiased_for_an_untrained_flow() {
    let op = load_fixture("cover3x3").unwrap();
    let truth = (-oracle_logabsdet(&op).logabs).exp();
    let flow = random_flow(&FlowSpec::autoregressive_cover(), 3, 0.1);
    let vals: Vec<f64> = (0..40).map(|s| vde_estimate(&op, &flow, 10_000, s).unwrap().inv_det_estimate).collect();
    let (mean, std) = mean_std(&vals);
    assert!((mean - truth).abs() < 4.0 * std / (40f64).sqrt(), "{mean} vs {truth}");
    // a single run sits within 3 of its own standard errors
    let r = vde_estimate(&op, &flow, 10_000, 99).unwrap();
    assert!((r.inv_det_estimate - truth).abs() < 3.0 * r.inv_det_std_error());
}

#[test]
fn log_estimate_is_biased_upward() {
    let op = load_fixture("A1").unwrap();
    let truth = oracle_logabsdet(&op).logabs;
    let vals: Vec<f64> = (0..200).map(|s| mc_estimate(&op, 100, s).unwrap().log_det_estimate).collect();
    let (mean, _) = mean_std(&vals);
    assert!(mean > truth, "{mean} <= {truth}");
}

#[test]
fn scaling_shifts_log_estimate_by_n_log_c() {
    for name in ["A2", "conv16", "cover3x3"] {
        let op = load_fixture(name).unwrap();
        let n = op.dim() as f64;
        for c in [0.5, 3.0] {
            let scaled = op.scaled(c);
            let a = mc_estimate(&op, 2000, 4).unwrap().log_det_estimate;
            let b = mc_estimate(&scaled, 2000, 4).unwrap().log_det_estimate;
            let expected = a + n * f64::ln(c);
            assert!((b - expected).abs() <= 1e-12 * expected.abs().max(1.0), "{name}: {b} vs {expected}");
        }
    }
}

#[test]
fn kl_bound_sits_above_the_truth() {
    let op = load_fixture("cover3x3").unwrap();
    let truth = oracle_logabsdet(&op).logabs;
    let flow = random_flow(&FlowSpec::autoregressive_cover(), 5, 0.1);
    let kl = kl_bound_estimate(&op, &flow, 20_000, 1).unwrap();
    assert!(kl.value > truth - 3.0 * kl.std_error);
    let r = vde_estimate(&op, &flow, 20_000, 1).unwrap();
    assert_eq!(r.method, Method::Vde);
    assert!((r.kl_bound.unwrap() - kl.value).abs() < 1e-12);
}

#[test]
fn singular_operators_are_rejected() {
    let op: OperatorHandle = DenseOperator::from_rows(&[[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]]).unwrap().into();
    assert!(matches!(mc_estimate(&op, 10, 0), Err(Error::Singular)));
}

#[test]
fn identity_flow_reproduces_mc_bit_for_bit() {
    let op = load_fixture("A4").unwrap();
    let flow = SphericalFlow::with_seed(&FlowSpec::coupling(10), 1).unwrap();
    let mc = mc_estimate(&op, 3000, 8).unwrap();
    let vde = vde_estimate(&op, &flow, 3000, 8).unwrap();
    assert_eq!(mc.log_det_estimate.to_bits(), vde.log_det_estimate.to_bits());
}
