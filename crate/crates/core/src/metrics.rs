//! Reference-based quality metrics: ERGAS, SAM, band-averaged UIQI and
//! sorted per-pixel NRMSE.

use ndarray::{Array1, ArrayView1, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::image::{MultibandImage, SpectralResponse};

/// Label used wherever the windowed quality index is reported.
pub const Q_AVG_LABEL: &str = "Q-avg (UIQI), not Q2ⁿ";

fn same_shape(a: &MultibandImage, b: &MultibandImage) -> Result<()> {
    ensure!(
        a.grid() == b.grid() && a.bands() == b.bands(),
        Dimension,
        "shape mismatch: {} bands on {} vs {} bands on {}",
        a.bands(),
        a.grid(),
        b.bands(),
        b.grid()
    );
    Ok(())
}

/// `(100/ratio)·sqrt(mean_l (RMSE_l/mean_l)²)`, normalized by the reference means.
pub fn ergas(reference: &MultibandImage, estimate: &MultibandImage, ratio: f64) -> Result<f64> {
    same_shape(reference, estimate)?;
    ensure!(ratio > 0.0, InvalidArgument, "ERGAS ratio must be > 0");
    let n = reference.pixels() as f64;
    let mut acc = 0.0;
    for (l, (r, e)) in reference
        .data()
        .axis_iter(Axis(0))
        .zip(estimate.data().axis_iter(Axis(0)))
        .enumerate()
    {
        let mean = r.sum() / n;
        ensure!(mean != 0.0, InvalidArgument, "band {l} of the reference has zero mean");
        let mse = Zip::from(&r).and(&e).fold(0.0, |s, a, b| s + (a - b) * (a - b)) / n;
        acc += mse / (mean * mean);
    }
    Ok(100.0 / ratio * (acc / reference.bands() as f64).sqrt())
}

/// Mean spectral angle and the number of zero-norm pixels left out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamResult {
    pub degrees: f64,
    pub excluded: usize,
}

pub fn sam(reference: &MultibandImage, estimate: &MultibandImage) -> Result<SamResult> {
    same_shape(reference, estimate)?;
    let mut total = 0.0;
    let mut used = 0usize;
    for (x, y) in reference
        .data()
        .axis_iter(Axis(1))
        .zip(estimate.data().axis_iter(Axis(1)))
    {
        let (nx, ny) = (x.dot(&x).sqrt(), y.dot(&y).sqrt());
        if nx == 0.0 || ny == 0.0 {
            continue;
        }
        let c = (x.dot(&y) / (nx * ny)).clamp(-1.0, 1.0);
        total += c.acos();
        used += 1;
    }
    ensure!(used > 0, InvalidArgument, "every pixel has a zero-norm spectrum");
    Ok(SamResult {
        degrees: (total / used as f64).to_degrees(),
        excluded: reference.pixels() - used,
    })
}

/// UIQI of two equally sized blocks, with the zero-variance conventions:
/// both denominators zero gives 1, a single zero denominator drops the
/// corresponding factor.
pub fn uiqi_block(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
        cxy += (a - mx) * (b - my);
    }
    // the variance normalization cancels in every branch
    let den1 = vx + vy;
    let den2 = mx * mx + my * my;
    match (den1 == 0.0, den2 == 0.0) {
        (true, true) => 1.0,
        (true, false) => 2.0 * mx * my / den2,
        (false, true) => 2.0 * cxy / den1,
        (false, false) => 4.0 * cxy * mx * my / (den1 * den2),
    }
}

/// Mean over bands of the per-band UIQI, itself the mean over
/// non-overlapping `window × window` blocks (partial edge blocks dropped).
pub fn q_avg(reference: &MultibandImage, estimate: &MultibandImage, window: usize) -> Result<f64> {
    same_shape(reference, estimate)?;
    let g = reference.grid();
    ensure!(
        window >= 1 && window <= g.height.min(g.width),
        InvalidArgument,
        "window {window} must be between 1 and min(height, width) = {}",
        g.height.min(g.width)
    );
    let (bh, bw) = (g.height / window, g.width / window);
    let per_band: Vec<f64> = (0..reference.bands())
        .map(|l| {
            let r = reference.data().row(l);
            let e = estimate.data().row(l);
            let mut sum = 0.0;
            let mut xs = Vec::with_capacity(window * window);
            let mut ys = Vec::with_capacity(window * window);
            for bi in 0..bh {
                for bj in 0..bw {
                    xs.clear();
                    ys.clear();
                    for i in bi * window..(bi + 1) * window {
                        for j in bj * window..(bj + 1) * window {
                            xs.push(r[i * g.width + j]);
                            ys.push(e[i * g.width + j]);
                        }
                    }
                    sum += uiqi_block(&xs, &ys);
                }
            }
            sum / (bh * bw) as f64
        })
        .collect();
    Ok(per_band.iter().sum::<f64>() / per_band.len() as f64)
}

/// Per-pixel `‖x_j − x̂_j‖/‖x_j‖` sorted ascending, plus the count of
/// zero-norm reference pixels left out.
pub fn nrmse_sorted(reference: &MultibandImage, estimate: &MultibandImage) -> Result<(Vec<f64>, usize)> {
    same_shape(reference, estimate)?;
    let mut v: Vec<f64> = reference
        .data()
        .axis_iter(Axis(1))
        .zip(estimate.data().axis_iter(Axis(1)))
        .filter_map(|(x, y)| pixel_nrmse(x, y))
        .collect();
    let excluded = reference.pixels() - v.len();
    v.sort_by(f64::total_cmp);
    Ok((v, excluded))
}

fn pixel_nrmse(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Option<f64> {
    let nx = x.dot(&x).sqrt();
    if nx == 0.0 {
        return None;
    }
    let d: Array1<f64> = &x - &y;
    Some(d.dot(&d).sqrt() / nx)
}

/// Indices of bands whose single-row response exceeds `threshold` times
/// the row maximum.
pub fn selected_band_indices(response: &SpectralResponse, threshold: f64) -> Result<Vec<usize>> {
    ensure!(
        response.output_bands() == 1,
        InvalidArgument,
        "band selection needs a single-row response, got {} rows",
        response.output_bands()
    );
    let row = response.matrix().row(0);
    let max = row.iter().cloned().fold(0.0, f64::max);
    let idx: Vec<usize> = (0..row.len()).filter(|&l| row[l] > threshold * max && row[l] > 0.0).collect();
    ensure!(!idx.is_empty(), InvalidArgument, "band selection is empty at threshold {threshold}");
    Ok(idx)
}

pub fn select_bands(image: &MultibandImage, response: &SpectralResponse, threshold: f64) -> Result<MultibandImage> {
    ensure!(
        response.input_bands() == image.bands(),
        Dimension,
        "response covers {} bands, image has {}",
        response.input_bands(),
        image.bands()
    );
    image.select_bands(&selected_band_indices(response, threshold)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsParams {
    pub ergas_ratio: f64,
    pub q_window: usize,
}

impl Default for MetricsParams {
    fn default() -> Self {
        Self {
            ergas_ratio: 4.0,
            q_window: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub ergas: f64,
    pub sam_degrees: f64,
    pub sam_excluded: usize,
    pub q_avg: f64,
    pub nrmse_sorted: Vec<f64>,
    pub nrmse_excluded: usize,
    /// Human-readable name of the evaluated bands ("all" or a subset tag).
    pub band_subset: String,
}

impl MetricsReport {
    /// `metric,name,value` rows in the fixed order ergas, sam_degrees, q_avg.
    /// Names are quoted since the Q-avg label contains a comma.
    pub fn to_csv(&self) -> String {
        format!(
            "metric,name,value\nergas,\"ERGAS\",{:e}\nsam_degrees,\"SAM (degrees)\",{:e}\nq_avg,\"{}\",{:e}\n",
            self.ergas, self.sam_degrees, Q_AVG_LABEL, self.q_avg
        )
    }

    pub fn nrmse_csv(&self) -> String {
        let mut s = String::from("nrmse\n");
        for v in &self.nrmse_sorted {
            s.push_str(&format!("{v:e}\n"));
        }
        s
    }
}

/// Computes every metric on the given pair.
pub fn evaluate(
    reference: &MultibandImage,
    estimate: &MultibandImage,
    params: &MetricsParams,
    band_subset: &str,
) -> Result<MetricsReport> {
    let s = sam(reference, estimate)?;
    let (nrmse, nrmse_excluded) = nrmse_sorted(reference, estimate)?;
    Ok(MetricsReport {
        ergas: ergas(reference, estimate, params.ergas_ratio)?,
        sam_degrees: s.degrees,
        sam_excluded: s.excluded,
        q_avg: q_avg(reference, estimate, params.q_window)?,
        nrmse_sorted: nrmse,
        nrmse_excluded,
        band_subset: band_subset.to_string(),
    })
}
