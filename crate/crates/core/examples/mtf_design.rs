//! Designs Gaussian blurs whose MTF at the coarse Nyquist frequency is ¼
//! and prints the measured values.
//!
//! Usage: `cargo run --example mtf_design`

use mbfuse::observation::{gaussian_kernel, mtf_at_nyquist};

fn main() -> mbfuse::Result<()> {
    for ratio in [2usize, 4, 8] {
        // a continuous Gaussian has MTF exp(−2π²σ²f²); solve for ¼ at f = 1/(2·ratio)
        let sigma = ratio as f64 * (2.0 * 4f64.ln()).sqrt() / std::f64::consts::PI;
        let size = 2 * (3.0 * sigma).ceil() as usize + 1;
        let k = gaussian_kernel(size, sigma)?;
        let (h, v) = mtf_at_nyquist(&k, ratio)?;
        println!("ratio {ratio}: {size}×{size} kernel, sigma {sigma:.3}, MTF ({h:.4}, {v:.4})");
    }
    Ok(())
}
