//! The 10x10 dense experiment at desk scale: train a coupling Möbius flow
//! on one matrix and compare relative errors over a sample grid.
//!
//!     cargo run --release --example dense_vde -- A2 2000

use detflow::estimators::{mc_estimate, mean_std, oracle_logabsdet, vde_estimate};
use detflow::operators::load_fixture;
use detflow::train::{default_flow_spec, train, Profile, TrainConfig};
use detflow::operators::LinearOperator;

fn main() -> detflow::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "A1".into());
    let iterations: usize = args.next().map(|s| s.parse().expect("iteration count")).unwrap_or(500);

    let a = load_fixture(&name)?;
    let truth = oracle_logabsdet(&a).abs_det();
    let mut cfg = TrainConfig::for_profile(Profile::Desk, &name, default_flow_spec(a.dim()), 0);
    cfg.iterations = iterations;
    cfg.checkpoint_every = 0;
    let t = std::time::Instant::now();
    let flow = train(&cfg, &a, None)?.flow;
    println!("{name}: trained {iterations} iterations in {:.0}s, |det| = {truth:.2}", t.elapsed().as_secs_f64());

    for n in [100, 1_000, 10_000] {
        let mut vde = Vec::new();
        let mut mc = Vec::new();
        for seed in 0..5 {
            vde.push(100.0 * vde_estimate(&a, &flow, n, seed)?.with_truth(truth)?.rel_abs_diff.unwrap());
            mc.push(100.0 * mc_estimate(&a, n, seed)?.with_truth(truth)?.rel_abs_diff.unwrap());
        }
        let (vm, vs) = mean_std(&vde);
        let (mm, ms) = mean_std(&mc);
        println!("N = {n:>5}   VDE {vm:>5.1} ± {vs:<5.1}%   MC {mm:>6.1} ± {ms:.1}%");
    }
    Ok(())
}
