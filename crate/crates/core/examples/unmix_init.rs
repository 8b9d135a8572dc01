//! Endmember extraction, simplex-constrained unmixing of a coarse
//! hyperspectral image and bicubic upscaling into the initial abundances.
//!
//! Usage: `cargo run --release --example unmix_init`

use mbfuse::metrics::sam;
use mbfuse::observation::{degrade_wald, DegradationSpec};
use mbfuse::scene::{generate, SceneConfig};
use mbfuse::unmixing::{extract_endmembers, init_abundances, unmix, UnmixConfig};
use mbfuse::mix;

fn main() -> mbfuse::Result<()> {
    let scene = generate(&SceneConfig::new(64, 64, 30, 4, 3))?;
    let hs = degrade_wald(&scene.image, &DegradationSpec::three_sensor(3))?.remove(2);
    let cfg = UnmixConfig::new(4);

    let e = extract_endmembers(&hs.image, 4)?;
    let coarse = unmix(&hs.image, &e, &cfg)?;
    println!(
        "unmixed {} coarse pixels, {} hit the iteration cap",
        hs.image.grid().pixels(),
        coarse.unconverged_pixels
    );
    for (k, col) in e.matrix().columns().into_iter().enumerate() {
        let best = scene
            .endmembers
            .matrix()
            .columns()
            .into_iter()
            .map(|t| (t.dot(&col) / (t.dot(&t) * col.dot(&col)).sqrt()).clamp(-1.0, 1.0).acos().to_degrees())
            .fold(f64::INFINITY, f64::min);
        println!("extracted endmember {k}: {best:.2}° from the nearest true spectrum");
    }

    let a0 = init_abundances(&hs.image, &e, hs.model.ratio(), &cfg)?;
    let x0 = mix(&e, &a0)?;
    println!("initial abundances on {}, feasible: {}", a0.grid(), a0.is_feasible(1e-9));
    println!("SAM of E·A0 against the reference: {:.3}°", sam(&scene.image, &x0)?.degrees);
    Ok(())
}
