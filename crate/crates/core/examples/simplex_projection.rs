//! Projects random vectors onto the probability simplex and shrinks
//! gradient columns with the ℓ2,1 proximal operator.
//!
//! Usage: `cargo run --example simplex_projection`

use mbfuse::prox::{project_simplex, project_simplex_columns, prox_l21, ProxThreshold};
use ndarray::{array, Array1};

fn main() -> mbfuse::Result<()> {
    for v in [array![0.2, 0.3, 0.5], array![1.5, -0.2, 0.4], array![-1.0, -2.0, -3.0], array![10.0, 0.0, 0.0]] {
        let p = project_simplex(v.view());
        println!("{:?} -> {:.4} (sum {:.3})", v.to_vec(), p, p.sum());
    }

    let w = array![[0.7, -0.1, 0.4], [0.6, 0.2, 0.4], [-0.2, 0.5, 0.4]];
    let p = project_simplex_columns(&w);
    println!("column sums after projection: {}", p.sum_axis(ndarray::Axis(0)));

    let z = array![[3.0, 0.3, 0.0], [4.0, 0.4, 1.0]];
    let v = prox_l21(&z, ProxThreshold::new(1.0)?);
    let norms: Array1<f64> = v.columns().into_iter().map(|c| c.dot(&c).sqrt()).collect();
    println!("l21 prox with tau 1: column norms {norms} (from 5, 0.5, 1)");
    Ok(())
}
