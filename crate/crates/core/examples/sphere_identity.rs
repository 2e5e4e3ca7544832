//! The sphere side: uniform sampling, the cylinder chart and the identity
//! 1/|det A| = E ||A s||^{-n} checked by quadrature on S^2.

use detflow::operators::{exact_logabsdet, load_fixture, LinearOperator, OperatorHandle};
use detflow::sphere::{from_cylinder, quadrature_expectation, sample_uniform, stable_norm, to_cylinder};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> detflow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = sample_uniform(5, &mut rng)?;
    let c = to_cylinder(&s)?;
    println!("s = {:?}", s.as_slice());
    println!("theta = {:.4}, z = {:?}", c.theta, c.z);
    println!("back = {:?}", from_cylinder(&c, 5)?.as_slice());

    let OperatorHandle::Dense(a) = load_fixture("cover3x3")? else { unreachable!() };
    let exact = (-exact_logabsdet(&a).logabs).exp();
    for res in [50, 200, 800] {
        let q = quadrature_expectation(
            3,
            |s| {
                let mut out = [0.0; 3];
                a.apply(s.as_slice(), &mut out);
                stable_norm(&out).powi(-3)
            },
            res,
        )?;
        println!("grid {res:>3}: E||As||^-3 = {q:.8}   1/|det A| = {exact:.8}");
    }
    Ok(())
}
