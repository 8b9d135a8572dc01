//! Scores a deliberately perturbed copy of a scene with ERGAS, SAM, Q-avg
//! and sorted per-pixel NRMSE, on all bands and on a band subset.
//!
//! Usage: `cargo run --example metrics_report`

use mbfuse::metrics::{evaluate, select_bands, MetricsParams};
use mbfuse::observation::{add_noise, window_response, BandWindow, Snr, WindowShape};
use mbfuse::scene::{generate, SceneConfig};

fn main() -> mbfuse::Result<()> {
    let scene = generate(&SceneConfig::new(64, 64, 30, 4, 11))?;
    let reference = &scene.image;
    let params = MetricsParams { ergas_ratio: 4.0, q_window: 32 };
    let pan = window_response(
        &[BandWindow {
            center: 0.35,
            width: 0.6,
            shape: WindowShape::Rect,
        }],
        reference.bands(),
    )?;
    for db in [20.0, 30.0, 40.0] {
        let estimate = add_noise(reference, &vec![Snr::db(db)?; reference.bands()], 1)?;
        let all = evaluate(reference, &estimate, &params, "all")?;
        let sub = evaluate(&select_bands(reference, &pan, 0.1)?, &select_bands(&estimate, &pan, 0.1)?, &params, "pan")?;
        let median = all.nrmse_sorted[all.nrmse_sorted.len() / 2];
        println!(
            "{db} dB: ERGAS {:.3}  SAM {:.3}°  Q {:.4}  median NRMSE {median:.4} | pan bands: ERGAS {:.3}  SAM {:.3}°",
            all.ergas, all.sam_degrees, all.q_avg, sub.ergas, sub.sam_degrees
        );
    }
    println!("\n{}", evaluate(reference, &add_noise(reference, &vec![Snr::db(30.0)?; 30], 2)?, &params, "all")?.to_csv());
    Ok(())
}
