//! Plain Monte Carlo estimate of |det A| next to the LU answer.
//!
//!     cargo run --release --example quickstart

use detflow::estimators::{mc_estimate, oracle_logabsdet};
use detflow::operators::load_fixture;

fn main() -> detflow::Result<()> {
    let a = load_fixture("A1")?;
    let exact = oracle_logabsdet(&a);
    println!("LU: |det A1| = {:.2}  (log {:.4})", exact.abs_det(), exact.logabs);

    for n in [100, 1_000, 10_000, 100_000] {
        let r = mc_estimate(&a, n, 0)?.with_truth(exact.abs_det())?;
        println!(
            "N = {n:>6}  det ~ {:>9.2}  log det ~ {:.4}  rel diff {:>6.1}%  ESS {:.1}",
            r.det_estimate,
            r.log_det_estimate,
            100.0 * r.rel_abs_diff.unwrap(),
            r.ess
        );
    }
    Ok(())
}
