//! A spherical flow with random weights: sampling, density and inversion.

use detflow::flows::{FlowSpec, SphericalFlow};
use detflow::sphere::{log_uniform_density, quadrature_expectation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> detflow::Result<()> {
    let spec = FlowSpec::coupling(3);
    let mut flow = SphericalFlow::with_seed(&spec, 0)?;
    println!("{} parameters, identity at init: {}", flow.params().len(), flow.is_identity());
    flow.randomize(&mut ChaCha8Rng::seed_from_u64(5), 0.1);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..3 {
        let (s, log_q) = flow.flow_sample(&mut rng)?;
        let (s0, logdet) = flow.flow_inverse(&s)?;
        println!(
            "s = {:>7.4?}  log q = {log_q:+.4}  base point {:>7.4?}  log|J| = {logdet:+.4}",
            s.as_slice(),
            s0.as_slice()
        );
    }

    let lu = log_uniform_density(3);
    let mass = quadrature_expectation(3, |s| (flow.flow_log_density(s).unwrap() - lu).exp(), 200)?;
    println!("total mass of q on S^2: {mass:.6}");
    println!("spec: {}", serde_json::to_string(&spec).unwrap());
    Ok(())
}
