//! Log-determinant of the 16x16 convolution matrix. Training is slow; pass
//! an iteration count to go beyond the short default.
//!
//!     cargo run --release --example conv_layer -- 10000

use detflow::estimators::{kl_bound_estimate, mc_estimate, oracle_logabsdet, vde_estimate};
use detflow::operators::{load_fixture, LinearOperator};
use detflow::train::{default_flow_spec, train, Profile, TrainConfig};

fn main() -> detflow::Result<()> {
    let iterations: usize = std::env::args().nth(1).map(|s| s.parse().expect("iteration count")).unwrap_or(1000);
    let a = load_fixture("conv16")?;
    let exact = oracle_logabsdet(&a);
    let mut cfg = TrainConfig::for_profile(Profile::Desk, "conv16", default_flow_spec(a.dim()), 0);
    cfg.iterations = iterations;
    cfg.checkpoint_every = 0;
    let flow = train(&cfg, &a, None)?.flow;
    let kl = kl_bound_estimate(&a, &flow, 10_000, 9)?;
    println!("true log|det| {:.4}   KL bound {:.4} ± {:.4}", exact.logabs, kl.value, kl.std_error);
    println!("{:>7} {:>10} {:>10}", "N", "VDE", "MC");
    for n in [100, 1_000, 10_000, 100_000] {
        let v = vde_estimate(&a, &flow, n, 0)?;
        let m = mc_estimate(&a, n, 0)?;
        println!("{n:>7} {:>10.4} {:>10.4}", v.log_det_estimate, m.log_det_estimate);
    }
    Ok(())
}
