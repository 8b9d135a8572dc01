//! Fisher-information rank and Cramér–Rao bound for a few sensor sets on a
//! small crop: a panchromatic image alone cannot separate three endmembers,
//! a full-resolution multispectral image can.
//!
//! Usage: `cargo run --example fisher_identifiability`

use mbfuse::fisher::{compute_fim, crlb_trace, sufficient_condition, DEFAULT_SIZE_LIMIT};
use mbfuse::observation::{degrade_wald, DegradationSpec, Snr};
use mbfuse::scene::{generate, SceneConfig};

fn main() -> mbfuse::Result<()> {
    let scene = generate(&SceneConfig::new(8, 8, 12, 3, 5))?;
    let grid = scene.image.grid();
    let mut spec = DegradationSpec::three_sensor(5);
    spec.outputs[1].blur = None;
    spec.outputs[2].blur = None;
    for o in &mut spec.outputs {
        o.snr_db = Snr::db(30.0)?;
    }
    let products = degrade_wald(&scene.image, &spec)?;
    let models: Vec<_> = products.iter().map(|p| p.model.clone()).collect();

    let mut ms_full = models[1].clone();
    ms_full.down = mbfuse::DownsamplePlan::identity();
    let sets = [
        ("pan", vec![models[0].clone()]),
        ("pan + ms + hs", models.clone()),
        ("full-res ms + hs", vec![ms_full, models[2].clone()]),
    ];
    for (name, set) in &sets {
        let rep = compute_fim(set, &scene.endmembers, grid, DEFAULT_SIZE_LIMIT)?;
        let bound = match crlb_trace(&rep) {
            Ok(t) => format!("CRLB trace {t:.3e}"),
            Err(_) => "CRLB unbounded".into(),
        };
        println!(
            "{name:>16}: rank {:>3} of {}, sufficient condition {}, {bound}",
            rep.numerical_rank,
            rep.dimension(),
            if sufficient_condition(set, &scene.endmembers, grid) { "holds" } else { "fails" }
        );
    }
    Ok(())
}
