//! The two one-dimensional building blocks: the Möbius mixture on the
//! circle and the rational-quadratic spline on [-1, 1].

use detflow::flows::{MoebiusCircle, RqSpline, SplineDomain};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> detflow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let raw: Vec<f64> = (0..MoebiusCircle::<f64>::raw_len(12)).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let m = MoebiusCircle::from_raw(&raw, 12)?;
    for theta in [0.0, 1.0, 2.0, 4.0, 6.0] {
        let (out, ld) = m.forward(theta);
        let (back, _) = m.inverse(out);
        println!("moebius: {theta:.2} -> {out:.4} (log deriv {ld:+.4}), inverse {back:.6}");
    }
    let k = 4096;
    let h = std::f64::consts::TAU / k as f64;
    let total: f64 = (0..k).map(|i| m.forward(i as f64 * h).1.exp() * h).sum();
    println!("integral of the derivative over the circle: {total:.9}");

    let raw: Vec<f64> = (0..SplineDomain::Interval.raw_len(16)).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let s = RqSpline::from_raw(&raw, 16, SplineDomain::Interval)?;
    for x in [-0.9, -0.3, 0.0, 0.5, 0.99] {
        let (y, ld) = s.forward(x)?;
        let (back, _) = s.inverse(y)?;
        println!("spline: {x:+.2} -> {y:+.4} (log deriv {ld:+.4}), inverse {back:+.6}");
    }
    Ok(())
}
