//! Wald-protocol fusion of a panchromatic, a multispectral and a
//! hyperspectral image of a synthetic 64×64 scene.
//!
//! Usage: `cargo run --release --example fuse_three_sensors [alpha] [iterations]`

use std::time::Instant;

use mbfuse::cli::fuse_products;
use mbfuse::metrics::{ergas, sam};
use mbfuse::observation::{degrade_wald, DegradationSpec};
use mbfuse::scene::{generate, SceneConfig};
use mbfuse::unmixing::UnmixConfig;
use mbfuse::{mix, SolverConfig};

fn main() -> mbfuse::Result<()> {
    let mut args = std::env::args().skip(1);
    let alpha: f64 = args.next().map(|a| a.parse().expect("alpha")).unwrap_or(SolverConfig::default().alpha);
    let iters: usize = args.next().map(|a| a.parse().expect("iterations")).unwrap_or(200);

    let scene = generate(&SceneConfig::new(64, 64, 30, 4, 2024))?;
    let products = degrade_wald(&scene.image, &DegradationSpec::three_sensor(7))?;
    for p in &products {
        println!("{:>3}: {} bands on {}", p.name, p.image.bands(), p.image.grid());
    }

    let solver = SolverConfig {
        alpha,
        max_iter: iters,
        ..SolverConfig::default()
    };
    let t = Instant::now();
    let fused = fuse_products(&products, 2, None, &UnmixConfig::new(4), &solver)?;
    let elapsed = t.elapsed();

    let init = mix(&fused.endmembers, &fused.init)?;
    let out = &fused.result;
    let last = out.diagnostics.last().expect("at least one iteration");
    println!("alpha {alpha}, {} iterations in {elapsed:.2?}", out.diagnostics.iterations);
    println!(
        "relative primal residuals: U {:.2e}  V {:.2e}  W {:.2e}",
        last.residuals.u_rel, last.residuals.v_rel, last.residuals.w_rel
    );
    println!("constraint violation {:.2e}", out.diagnostics.violation.max());
    println!(
        "initialization: ERGAS {:.4}  SAM {:.4}°",
        ergas(&scene.image, &init, 4.0)?,
        sam(&scene.image, &init)?.degrees
    );
    println!(
        "fused:          ERGAS {:.4}  SAM {:.4}°",
        ergas(&scene.image, &out.fused, 4.0)?,
        sam(&scene.image, &out.fused)?.degrees
    );
    Ok(())
}
