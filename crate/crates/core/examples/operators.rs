//! Dense and convolution operators, the JSON operator file and the LU oracle.

use detflow::operators::{
    exact_logabsdet, load_fixture, ConvOperator, DenseOperator, LinearOperator, OperatorHandle, Orientation,
};

fn main() -> detflow::Result<()> {
    let filter = [[0.1, 0.2, 0.0], [0.3, 1.0, -0.2], [0.0, 0.4, 0.1]];
    let conv = ConvOperator::new(filter, 4, Orientation::Correlation)?;
    let x: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
    let mut y = vec![0.0; 16];
    conv.apply(&x, &mut y);
    println!("conv(x)[..4] = {:?}", &y[..4]);

    // the matrix-free product agrees with the materialized matrix
    let dense = conv.materialize();
    let z = dense.matvec(&x)?;
    let gap = y.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max |conv - matrix| = {gap:.1e}");

    // flipping the filter transposes the zero-padded matrix
    let flipped = conv.with_orientation(Orientation::Convolution);
    println!(
        "log|det| correlation {:.4}, convolution {:.4}",
        exact_logabsdet(&dense).logabs,
        exact_logabsdet(&flipped.materialize()).logabs
    );

    let handle: OperatorHandle = DenseOperator::from_rows(&[[2.0, 1.0], [0.5, 3.0]])?.into();
    let json = handle.to_json_string()?;
    println!("operator file: {json}");
    let back = OperatorHandle::from_json_str(&json)?;
    println!("|det| from file = {:.3}", exact_logabsdet(&back.materialize()).abs_det());

    let conv16 = load_fixture("conv16")?;
    println!("conv16: n = {}, |det| = {:.4}", conv16.dim(), exact_logabsdet(&conv16.materialize()).abs_det());
    Ok(())
}
