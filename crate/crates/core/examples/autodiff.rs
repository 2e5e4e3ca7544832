//! The reverse-mode tape on its own.

use detflow::diffgraph::{Real, Tape};

fn main() {
    let tape = Tape::new();
    let x = tape.var(0.7);
    let y = tape.var(-1.3);
    // f = log(1 + exp(x y)) + sin(x) / y
    let f = (x * y).softplus() + x.sin() / y;
    let g = tape.gradient(f);
    println!("f = {:.6}", f.value());
    println!("df/dx = {:.6}  df/dy = {:.6}", g.wrt(x), g.wrt(y));

    let h = 1e-6;
    let fx = |x: f64, y: f64| (1.0 + (x * y).exp()).ln() + x.sin() / y;
    println!(
        "central differences: {:.6} {:.6}",
        (fx(0.7 + h, -1.3) - fx(0.7 - h, -1.3)) / (2.0 * h),
        (fx(0.7, -1.3 + h) - fx(0.7, -1.3 - h)) / (2.0 * h)
    );
}
