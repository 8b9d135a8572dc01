//! Forward observation model `Y_k = R_k·X·B_k·S_k + P_k`, blur design,
//! noise injection and Wald-protocol degradation of a reference scene.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::image::{
    BlurKernel, DownsamplePlan, Grid, MultibandImage, ObservationModel, SpectralResponse,
};
use crate::spectral::CyclicConvolution;

/// `R_k·X·B_k·S_k` as a reusable operator on `L × N` matrices.
#[derive(Debug, Clone)]
pub struct ForwardOperator {
    grid: Grid,
    coarse: Grid,
    response: Array2<f64>,
    blur: CyclicConvolution,
    samples: Vec<usize>,
}

impl ForwardOperator {
    pub fn new(model: &ObservationModel, grid: Grid) -> Result<Self> {
        let coarse = grid.coarsen(model.down.ratio)?;
        Ok(Self {
            grid,
            coarse,
            response: model.response.matrix().clone(),
            blur: CyclicConvolution::new(&model.blur, grid)?,
            samples: model.down.sample_indices(grid)?,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn coarse_grid(&self) -> Grid {
        self.coarse
    }

    /// Fine-grid pixel index of each coarse sample.
    pub fn samples(&self) -> &[usize] {
        &self.samples
    }

    pub fn blur(&self) -> &CyclicConvolution {
        &self.blur
    }

    /// Blur and decimate the rows of an arbitrary `bands × N` matrix.
    pub fn blur_and_sample(&self, rows: &Array2<f64>) -> Array2<f64> {
        self.blur.apply(rows).select(Axis(1), &self.samples)
    }

    /// Applies the full operator to an `L × N` matrix.
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        // R acts on bands and B·S on pixels, so the order is free; mixing
        // first keeps the number of FFTs at L_k.
        self.blur_and_sample(&self.response.dot(x))
    }
}

/// Noise-free forward model of one sensor.
pub fn apply_forward(x: &MultibandImage, model: &ObservationModel) -> Result<MultibandImage> {
    ensure!(
        x.bands() == model.response.input_bands(),
        Dimension,
        "image has {} bands, response expects {}",
        x.bands(),
        model.response.input_bands()
    );
    let op = ForwardOperator::new(model, x.grid())?;
    MultibandImage::new(op.coarse_grid(), op.apply(x.data()))
}

/// Signal-to-noise ratio in dB; `+∞` means noise-free.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SnrRepr", into = "SnrRepr")]
pub struct Snr(f64);

impl Snr {
    pub const INFINITE: Snr = Snr(f64::INFINITY);

    pub fn db(value: f64) -> Result<Self> {
        ensure!(
            value > 0.0 && !value.is_nan(),
            InvalidArgument,
            "SNR must be positive or infinite, got {value}"
        );
        Ok(Snr(value))
    }

    pub fn value(&self) -> f64 {
        self.0
    }

    pub fn is_infinite(&self) -> bool {
        self.0.is_infinite()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SnrRepr {
    Number(f64),
    Text(String),
}

impl TryFrom<SnrRepr> for Snr {
    type Error = String;
    fn try_from(r: SnrRepr) -> std::result::Result<Self, String> {
        match r {
            SnrRepr::Number(v) => Snr::db(v).map_err(|e| e.to_string()),
            SnrRepr::Text(s) if matches!(s.as_str(), "inf" | "infinite" | "Infinity") => {
                Ok(Snr::INFINITE)
            }
            SnrRepr::Text(s) => Err(format!("SNR must be a number or \"inf\", got {s:?}")),
        }
    }
}

impl From<Snr> for SnrRepr {
    fn from(s: Snr) -> Self {
        if s.is_infinite() {
            SnrRepr::Text("inf".into())
        } else {
            SnrRepr::Number(s.0)
        }
    }
}

/// Per-band noise variance that yields the target SNR, calibrated to each
/// band's mean-square signal. Infinite SNR gives zero variance.
pub fn noise_variances(y: &MultibandImage, snr: &[Snr]) -> Result<Vec<f64>> {
    ensure!(
        snr.len() == y.bands() || snr.len() == 1,
        Dimension,
        "{} SNR values for {} bands",
        snr.len(),
        y.bands()
    );
    Ok(y.data()
        .rows()
        .into_iter()
        .enumerate()
        .map(|(b, row)| {
            let s = if snr.len() == 1 { snr[0] } else { snr[b] };
            if s.is_infinite() {
                0.0
            } else {
                let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
                ms / 10f64.powf(s.value() / 10.0)
            }
        })
        .collect())
}

/// Adds zero-mean white Gaussian noise at the given per-band SNR (one value
/// broadcasts to all bands). Deterministic for a given seed.
pub fn add_noise(y: &MultibandImage, snr: &[Snr], seed: u64) -> Result<MultibandImage> {
    let var = noise_variances(y, snr)?;
    add_noise_with_variance(y, &var, seed)
}

fn add_noise_with_variance(y: &MultibandImage, var: &[f64], seed: u64) -> Result<MultibandImage> {
    if var.iter().all(|v| *v == 0.0) {
        return Ok(y.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = y.data().clone();
    for (mut row, &v) in data.rows_mut().into_iter().zip(var) {
        let sd = v.sqrt();
        for x in row.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *x += sd * z;
        }
    }
    let out = MultibandImage::new(y.grid(), data)?;
    match y.band_labels() {
        Some(l) => out.with_band_labels(l.to_vec()),
        None => Ok(out),
    }
}

/// Sampled, rotationally symmetric Gaussian kernel normalized to unit sum.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<BlurKernel> {
    ensure!(
        size % 2 == 1,
        InvalidArgument,
        "Gaussian kernel size must be odd, got {size}"
    );
    ensure!(
        sigma > 0.0 && sigma.is_finite(),
        InvalidArgument,
        "Gaussian sigma must be positive, got {sigma}"
    );
    let c = (size / 2) as f64;
    let k = Array2::from_shape_fn((size, size), |(a, b)| {
        let (da, db) = (a as f64 - c, b as f64 - c);
        (-(da * da + db * db) / (2.0 * sigma * sigma)).exp()
    });
    BlurKernel::normalized(k)
}

/// Normalized kernel MTF at the Nyquist frequency of a grid decimated by
/// `ratio`, i.e. at `1/(2·ratio)` cycles per pixel. Returns
/// `(horizontal, vertical)`.
pub fn mtf_at_nyquist(kernel: &BlurKernel, ratio: usize) -> Result<(f64, f64)> {
    ensure!(ratio >= 1, InvalidArgument, "ratio must be ≥ 1");
    let f = 1.0 / (2.0 * ratio as f64);
    let c = kernel.radius() as f64;
    let mut dc = 0.0;
    let (mut h_re, mut h_im, mut v_re, mut v_im) = (0.0, 0.0, 0.0, 0.0);
    for ((a, b), &k) in kernel.coefficients().indexed_iter() {
        dc += k;
        let ph = -2.0 * PI * f * (b as f64 - c);
        let pv = -2.0 * PI * f * (a as f64 - c);
        h_re += k * ph.cos();
        h_im += k * ph.sin();
        v_re += k * pv.cos();
        v_im += k * pv.sin();
    }
    let dc = dc.abs();
    Ok((h_re.hypot(h_im) / dc, v_re.hypot(v_im) / dc))
}

/// `ξ_k`: the common diagonal value of `Sᵀ·Bᵀ·B·S`, i.e. the kernel's
/// squared ℓ2 norm.
pub fn xi_estimate(kernel: &BlurKernel) -> f64 {
    kernel.coefficients().iter().map(|v| v * v).sum()
}

/// `Λ_k = Σ_k + ξ_k·R_k·Σ·R_kᵀ` and its inverse principal square root.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateNoise {
    pub lambda: Array2<f64>,
    pub inv_sqrt: Array2<f64>,
}

impl AggregateNoise {
    /// `Λ_k⁻¹ = inv_sqrt·inv_sqrt`.
    pub fn inverse(&self) -> Array2<f64> {
        self.inv_sqrt.dot(&self.inv_sqrt)
    }
}

pub fn aggregate_noise(model: &ObservationModel) -> Result<AggregateNoise> {
    model.validate()?;
    let r = model.response.matrix();
    let lk = r.nrows();
    let mut lambda = Array2::from_diag(&ndarray::Array1::from(model.noise.sensor_var.clone()));
    if model.noise.mixture_var.iter().any(|v| *v != 0.0) {
        let mut rs = r.clone();
        for (mut col, &v) in rs.columns_mut().into_iter().zip(&model.noise.mixture_var) {
            col *= v;
        }
        lambda = lambda + model.noise.xi * rs.dot(&r.t());
    }
    let dense = DMatrix::from_fn(lk, lk, |i, j| 0.5 * (lambda[[i, j]] + lambda[[j, i]]));
    let eig = SymmetricEigen::new(dense);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min < 1e-14 * max {
        return Err(Error::Singular(format!(
            "aggregate noise covariance has eigenvalues in [{min:e}, {max:e}]"
        )));
    }
    let d = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
    let q = &eig.eigenvectors;
    let is = q * DMatrix::from_diagonal(&d) * q.transpose();
    let inv_sqrt = Array2::from_shape_fn((lk, lk), |(i, j)| 0.5 * (is[(i, j)] + is[(j, i)]));
    Ok(AggregateNoise { lambda, inv_sqrt })
}

/// Shape of a synthetic spectral band window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowShape {
    Rect,
    Gaussian,
}

/// A band window over normalized wavelength `[0, 1]`. For Gaussian windows
/// `width` is the full width at half maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandWindow {
    pub center: f64,
    pub width: f64,
    pub shape: WindowShape,
}

/// Normalized wavelength of band `l` out of `bands`.
pub fn band_wavelength(l: usize, bands: usize) -> f64 {
    if bands <= 1 {
        0.5
    } else {
        l as f64 / (bands - 1) as f64
    }
}

/// Builds an `L_k × L` response from band windows; each row sums to 1.
pub fn window_response(windows: &[BandWindow], bands: usize) -> Result<SpectralResponse> {
    ensure!(!windows.is_empty(), InvalidArgument, "no band windows given");
    let mut m = Array2::zeros((windows.len(), bands));
    for (r, w) in windows.iter().enumerate() {
        ensure!(
            w.width > 0.0 && w.width.is_finite() && w.center.is_finite(),
            InvalidArgument,
            "band window {r} needs a positive width"
        );
        for l in 0..bands {
            let d = band_wavelength(l, bands) - w.center;
            m[[r, l]] = match w.shape {
                WindowShape::Rect => {
                    if d.abs() <= 0.5 * w.width + 1e-12 {
                        1.0
                    } else {
                        0.0
                    }
                }
                WindowShape::Gaussian => {
                    let s = w.width / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
                    (-d * d / (2.0 * s * s)).exp()
                }
            };
        }
        let sum: f64 = m.row(r).sum();
        ensure!(
            sum > 0.0,
            InvalidArgument,
            "band window {r} (center {}, width {}) covers no band",
            w.center,
            w.width
        );
        m.row_mut(r).mapv_inplace(|v| v / sum);
    }
    SpectralResponse::new(m)
}

/// Where an output's spectral response comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseSource {
    Identity,
    Matrix(Vec<Vec<f64>>),
    Windows(Vec<BandWindow>),
}

impl ResponseSource {
    pub fn build(&self, bands: usize) -> Result<SpectralResponse> {
        match self {
            ResponseSource::Identity => Ok(SpectralResponse::identity(bands)),
            ResponseSource::Matrix(rows) => {
                let r = SpectralResponse::new(crate::image::rows_to_array(rows)?)?;
                ensure!(
                    r.input_bands() == bands,
                    Dimension,
                    "supplied response has {} columns, scene has {bands} bands",
                    r.input_bands()
                );
                Ok(r)
            }
            ResponseSource::Windows(w) => window_response(w, bands),
        }
    }
}

/// Gaussian blur settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlurSpec {
    pub size: usize,
    pub sigma: f64,
}

/// One degraded product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub name: String,
    pub response: ResponseSource,
    /// `None` disables blurring (delta kernel).
    #[serde(default)]
    pub blur: Option<BlurSpec>,
    pub ratio: usize,
    pub snr_db: Snr,
}

fn default_nominal_snr() -> f64 {
    40.0
}

/// Wald-protocol degradation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationSpec {
    pub seed: u64,
    pub outputs: Vec<OutputSpec>,
    /// Diagonal of the mixture-mismatch covariance `Σ`; zero when absent.
    #[serde(default)]
    pub mixture_var: Option<Vec<f64>>,
    /// SNR used to set the recorded noise variance of noise-free outputs,
    /// so that the solver still has a positive-definite `Λ_k`.
    #[serde(default = "default_nominal_snr")]
    pub nominal_snr_db: f64,
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.outputs.is_empty(), InvalidArgument, "no outputs configured");
        ensure!(
            self.nominal_snr_db > 0.0 && self.nominal_snr_db.is_finite(),
            InvalidArgument,
            "nominal_snr_db must be positive and finite"
        );
        for o in &self.outputs {
            ensure!(o.ratio >= 1, InvalidArgument, "output {}: ratio must be ≥ 1", o.name);
            if let Some(b) = o.blur {
                ensure!(
                    b.sigma > 0.0 && b.size % 2 == 1,
                    InvalidArgument,
                    "output {}: blur needs odd size and positive sigma",
                    o.name
                );
            }
        }
        Ok(())
    }
}

impl DegradationSpec {
    /// The usual three-sensor setup: a panchromatic image at full
    /// resolution (one wide rectangular band, no blur, 40 dB), a 4-band
    /// multispectral image (Gaussian blur 7/1.06, ratio 2, 30 dB) and the
    /// full-band hyperspectral image (Gaussian blur 13/2.12, ratio 4, 30 dB).
    pub fn three_sensor(seed: u64) -> Self {
        let rect = |center, width| BandWindow {
            center,
            width,
            shape: WindowShape::Rect,
        };
        Self {
            seed,
            outputs: vec![
                OutputSpec {
                    name: "pan".into(),
                    response: ResponseSource::Windows(vec![rect(0.35, 0.6)]),
                    blur: None,
                    ratio: 1,
                    snr_db: Snr(40.0),
                },
                OutputSpec {
                    name: "ms".into(),
                    response: ResponseSource::Windows(vec![
                        rect(0.1, 0.2),
                        rect(0.35, 0.2),
                        rect(0.6, 0.2),
                        rect(0.85, 0.2),
                    ]),
                    blur: Some(BlurSpec { size: 7, sigma: 1.06 }),
                    ratio: 2,
                    snr_db: Snr(30.0),
                },
                OutputSpec {
                    name: "hs".into(),
                    response: ResponseSource::Identity,
                    blur: Some(BlurSpec { size: 13, sigma: 2.12 }),
                    ratio: 4,
                    snr_db: Snr(30.0),
                },
            ],
            mixture_var: None,
            nominal_snr_db: default_nominal_snr(),
        }
    }
}

/// A degraded image and the exact model that generated it.
#[derive(Debug, Clone)]
pub struct DegradedProduct {
    pub name: String,
    pub image: MultibandImage,
    pub model: ObservationModel,
}

/// Generates the configured low-resolution products from a reference
/// image: spectral response, blur, decimation, then noise. Output `k` draws
/// its noise from stream `k` of the seeded generator.
pub fn degrade_wald(reference: &MultibandImage, spec: &DegradationSpec) -> Result<Vec<DegradedProduct>> {
    spec.validate()?;
    let bands = reference.bands();
    let mixture_var = spec.mixture_var.clone().unwrap_or_default();
    let mut out = Vec::with_capacity(spec.outputs.len());
    for (k, o) in spec.outputs.iter().enumerate() {
        let response = o.response.build(bands)?;
        let blur = match o.blur {
            Some(b) => gaussian_kernel(b.size, b.sigma)?,
            None => BlurKernel::delta(),
        };
        let down = DownsamplePlan::new(o.ratio)?;
        // The generating model is finalized below once the noise level is
        // known; a placeholder variance is enough for the forward pass.
        let provisional = ObservationModel::new(
            response.clone(),
            blur.clone(),
            down,
            vec![1.0; response.output_bands()],
            mixture_var.clone(),
        )?;
        let clean = apply_forward(reference, &provisional)?;
        let var = noise_variances(&clean, &[o.snr_db])?;
        let nominal = Snr::db(spec.nominal_snr_db)?;
        let nominal_var = noise_variances(&clean, &[nominal])?;
        let recorded: Vec<f64> = var
            .iter()
            .zip(&nominal_var)
            .map(|(&v, &n)| if v > 0.0 { v } else { n }.max(1e-30))
            .collect();
        let mut rng_seed = ChaCha8Rng::seed_from_u64(spec.seed);
        rng_seed.set_stream(k as u64);
        let image = add_noise_with_variance(&clean, &var, rng_seed.random())?;
        let model = ObservationModel::new(response, blur, down, recorded, mixture_var.clone())?;
        out.push(DegradedProduct {
            name: o.name.clone(),
            image,
            model,
        });
    }
    Ok(out)
}
