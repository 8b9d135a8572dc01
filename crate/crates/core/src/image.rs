//! Core value types shared by every stage of the pipeline.
//!
//! Pixels are always stored in row-major raster order: pixel `(i, j)` of a
//! `height × width` grid is column `i * width + j` of a `bands × pixels`
//! matrix. Gradient, blur and decimation operators all assume this layout.

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::observation::xi_estimate;

/// Default tolerance for abundance feasibility checks.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Spatial grid of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Grid after decimation by `ratio` in both directions.
    pub fn coarsen(&self, ratio: usize) -> Result<Grid> {
        ensure!(ratio >= 1, InvalidArgument, "downsampling ratio must be ≥ 1");
        ensure!(
            self.height % ratio == 0 && self.width % ratio == 0,
            Dimension,
            "{}×{} grid is not divisible by ratio {}",
            self.height,
            self.width,
            ratio
        );
        Ok(Grid::new(self.height / ratio, self.width / ratio))
    }

    pub fn refine(&self, ratio: usize) -> Grid {
        Grid::new(self.height * ratio, self.width * ratio)
    }
}

impl std::fmt::Display for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}×{}", self.height, self.width)
    }
}

/// A `bands × (height·width)` spectral datacube.
#[derive(Debug, Clone, PartialEq)]
pub struct MultibandImage {
    grid: Grid,
    data: Array2<f64>,
    band_labels: Option<Vec<String>>,
}

impl MultibandImage {
    pub fn new(grid: Grid, data: Array2<f64>) -> Result<Self> {
        ensure!(
            data.nrows() >= 1 && grid.pixels() >= 1,
            Dimension,
            "image must have at least one band and one pixel"
        );
        ensure!(
            data.ncols() == grid.pixels(),
            Dimension,
            "image data has {} columns but the {} grid has {} pixels",
            data.ncols(),
            grid,
            grid.pixels()
        );
        ensure!(
            data.iter().all(|v| v.is_finite()),
            InvalidArgument,
            "image contains non-finite values"
        );
        Ok(Self {
            grid,
            data,
            band_labels: None,
        })
    }

    pub fn with_band_labels(mut self, labels: Vec<String>) -> Result<Self> {
        ensure!(
            labels.len() == self.bands(),
            Dimension,
            "{} band labels for {} bands",
            labels.len(),
            self.bands()
        );
        self.band_labels = Some(labels);
        Ok(self)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn bands(&self) -> usize {
        self.data.nrows()
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn pixels(&self) -> usize {
        self.grid.pixels()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn band_labels(&self) -> Option<&[String]> {
        self.band_labels.as_deref()
    }

    /// Spectrum of the pixel at raster index `pixel`.
    pub fn pixel(&self, pixel: usize) -> ArrayView1<'_, f64> {
        self.data.column(pixel)
    }

    /// Band `band` reshaped as a `height × width` field.
    pub fn band_field(&self, band: usize) -> Array2<f64> {
        self.data
            .row(band)
            .to_owned()
            .into_shape_with_order((self.grid.height, self.grid.width))
            .expect("row length equals pixel count")
    }

    /// Keeps the listed bands, in the given order.
    pub fn select_bands(&self, bands: &[usize]) -> Result<MultibandImage> {
        ensure!(!bands.is_empty(), InvalidArgument, "empty band selection");
        ensure!(
            bands.iter().all(|&b| b < self.bands()),
            Dimension,
            "band index out of range"
        );
        let data = self.data.select(Axis(0), bands);
        let mut out = MultibandImage::new(self.grid, data)?;
        if let Some(labels) = &self.band_labels {
            out.band_labels = Some(bands.iter().map(|&b| labels[b].clone()).collect());
        }
        Ok(out)
    }
}

/// Nonnegative `L_k × L` spectral response of a sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRows", into = "MatrixRows")]
pub struct SpectralResponse {
    matrix: Array2<f64>,
}

impl SpectralResponse {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        ensure!(
            matrix.nrows() >= 1 && matrix.ncols() >= 1,
            Dimension,
            "spectral response must be non-empty"
        );
        ensure!(
            matrix.iter().all(|v| v.is_finite() && *v >= 0.0),
            InvalidArgument,
            "spectral response entries must be finite and nonnegative"
        );
        for (r, row) in matrix.rows().into_iter().enumerate() {
            ensure!(
                row.iter().any(|v| *v > 0.0),
                InvalidArgument,
                "spectral response row {r} has no positive entry"
            );
        }
        Ok(Self { matrix })
    }

    pub fn identity(bands: usize) -> Self {
        Self {
            matrix: Array2::eye(bands),
        }
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    /// Number of output bands `L_k`.
    pub fn output_bands(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of input bands `L`.
    pub fn input_bands(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Odd-sized, unit-sum 2D kernel applied as a cyclic convolution. The
/// center element corresponds to spatial lag `(0, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRows", into = "MatrixRows")]
pub struct BlurKernel {
    coefficients: Array2<f64>,
}

impl BlurKernel {
    pub fn new(coefficients: Array2<f64>) -> Result<Self> {
        let (r, c) = coefficients.dim();
        ensure!(
            r == c && r % 2 == 1,
            InvalidArgument,
            "blur kernel must be square with odd size, got {r}×{c}"
        );
        ensure!(
            coefficients.iter().all(|v| v.is_finite()),
            InvalidArgument,
            "blur kernel has non-finite coefficients"
        );
        let sum = coefficients.sum();
        ensure!(
            (sum - 1.0).abs() <= 1e-12,
            InvalidArgument,
            "blur kernel coefficients sum to {sum}, expected 1"
        );
        Ok(Self { coefficients })
    }

    /// Scales `coefficients` to unit sum.
    pub fn normalized(coefficients: Array2<f64>) -> Result<Self> {
        let sum = coefficients.sum();
        ensure!(
            sum.is_finite() && sum.abs() > f64::EPSILON,
            InvalidArgument,
            "cannot normalize a kernel with sum {sum}"
        );
        Self::new(coefficients / sum)
    }

    /// The 1×1 identity kernel.
    pub fn delta() -> Self {
        Self {
            coefficients: Array2::ones((1, 1)),
        }
    }

    pub fn size(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn radius(&self) -> usize {
        self.size() / 2
    }

    pub fn coefficients(&self) -> &Array2<f64> {
        &self.coefficients
    }

    /// Kernel rotated by 180°; convolving with it applies the adjoint.
    pub fn rot180(&self) -> Self {
        let n = self.size();
        let coefficients = Array2::from_shape_fn((n, n), |(a, b)| {
            self.coefficients[[n - 1 - a, n - 1 - b]]
        });
        Self { coefficients }
    }

    pub fn is_delta(&self) -> bool {
        let c = self.radius();
        self.coefficients
            .indexed_iter()
            .all(|((a, b), v)| if a == c && b == c { *v == 1.0 } else { *v == 0.0 })
    }
}

/// Uniform decimation by `ratio` starting at `(offset_row, offset_col)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownsamplePlan {
    pub ratio: usize,
    #[serde(default)]
    pub offset_row: usize,
    #[serde(default)]
    pub offset_col: usize,
}

impl DownsamplePlan {
    pub fn new(ratio: usize) -> Result<Self> {
        Self::with_offset(ratio, 0, 0)
    }

    pub fn with_offset(ratio: usize, offset_row: usize, offset_col: usize) -> Result<Self> {
        let plan = Self {
            ratio,
            offset_row,
            offset_col,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn identity() -> Self {
        Self {
            ratio: 1,
            offset_row: 0,
            offset_col: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.ratio >= 1, InvalidArgument, "downsampling ratio must be ≥ 1");
        ensure!(
            self.offset_row < self.ratio && self.offset_col < self.ratio,
            InvalidArgument,
            "downsampling offsets must lie in [0, {})",
            self.ratio
        );
        Ok(())
    }

    /// Fine-grid raster index of every retained sample, in coarse raster
    /// order. The complement of this set is the off-grid part of the mask
    /// `S·Sᵀ`.
    pub fn sample_indices(&self, grid: Grid) -> Result<Vec<usize>> {
        let coarse = grid.coarsen(self.ratio)?;
        let mut idx = Vec::with_capacity(coarse.pixels());
        for i in 0..coarse.height {
            for j in 0..coarse.width {
                let r = self.offset_row + i * self.ratio;
                let c = self.offset_col + j * self.ratio;
                idx.push(r * grid.width + c);
            }
        }
        Ok(idx)
    }
}

/// Noise description of one observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// Diagonal of the sensor noise covariance `Σ_k` (length `L_k`).
    pub sensor_var: Vec<f64>,
    /// Diagonal of the mixture-mismatch covariance `Σ` (length `L`).
    pub mixture_var: Vec<f64>,
    /// `ξ_k`, the common diagonal of `Sᵀ Bᵀ B S`.
    pub xi: f64,
}

/// Generating operators `(R_k, B_k, S_k, Σ_k)` of one observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationModel {
    pub response: SpectralResponse,
    pub blur: BlurKernel,
    pub down: DownsamplePlan,
    pub noise: NoiseModel,
}

impl ObservationModel {
    /// Builds a model, deriving `ξ_k` from the kernel. An empty
    /// `mixture_var` means `Σ = 0`.
    pub fn new(
        response: SpectralResponse,
        blur: BlurKernel,
        down: DownsamplePlan,
        sensor_var: Vec<f64>,
        mixture_var: Vec<f64>,
    ) -> Result<Self> {
        let mixture_var = if mixture_var.is_empty() {
            vec![0.0; response.input_bands()]
        } else {
            mixture_var
        };
        let xi = xi_estimate(&blur);
        let model = Self {
            response,
            blur,
            down,
            noise: NoiseModel {
                sensor_var,
                mixture_var,
                xi,
            },
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.down.validate()?;
        let lk = self.response.output_bands();
        let l = self.response.input_bands();
        ensure!(
            self.noise.sensor_var.len() == lk,
            Dimension,
            "response has {lk} rows but sensor_var has {} entries",
            self.noise.sensor_var.len()
        );
        ensure!(
            self.noise.mixture_var.len() == l,
            Dimension,
            "response has {l} columns but mixture_var has {} entries",
            self.noise.mixture_var.len()
        );
        ensure!(
            self.noise.sensor_var.iter().all(|v| v.is_finite() && *v > 0.0),
            InvalidArgument,
            "sensor noise variances must be finite and strictly positive"
        );
        ensure!(
            self.noise.mixture_var.iter().all(|v| v.is_finite() && *v >= 0.0),
            InvalidArgument,
            "mixture noise variances must be finite and nonnegative"
        );
        ensure!(
            self.noise.xi.is_finite() && self.noise.xi > 0.0,
            InvalidArgument,
            "xi must be positive"
        );
        Ok(())
    }

    pub fn output_bands(&self) -> usize {
        self.response.output_bands()
    }

    pub fn ratio(&self) -> usize {
        self.down.ratio
    }
}

/// `L × M` matrix whose columns are endmember spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberMatrix {
    matrix: Array2<f64>,
}

impl EndmemberMatrix {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        ensure!(
            matrix.nrows() >= 1 && matrix.ncols() >= 1,
            Dimension,
            "endmember matrix needs at least one band and one endmember"
        );
        ensure!(
            matrix.iter().all(|v| v.is_finite() && *v >= 0.0),
            InvalidArgument,
            "endmember spectra must be finite and nonnegative"
        );
        let m = matrix.ncols();
        for a in 0..m {
            for b in a + 1..m {
                ensure!(
                    matrix.column(a) != matrix.column(b),
                    InvalidArgument,
                    "endmembers {a} and {b} are identical"
                );
            }
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn bands(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn endmembers(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Worst-case simplex constraint violation of an abundance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintViolation {
    /// Magnitude of the most negative entry (0 when all entries are ≥ 0).
    pub max_negative: f64,
    /// Largest `|1ᵀa_j − 1|` over columns.
    pub max_sum_deviation: f64,
}

impl ConstraintViolation {
    pub fn max(&self) -> f64 {
        self.max_negative.max(self.max_sum_deviation)
    }
}

/// `M × N` abundance matrix on a grid. Columns are not forced onto the
/// simplex; use [`AbundanceMap::is_feasible`] to check.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceMap {
    grid: Grid,
    data: Array2<f64>,
}

impl AbundanceMap {
    pub fn new(grid: Grid, data: Array2<f64>) -> Result<Self> {
        ensure!(data.nrows() >= 1, Dimension, "abundance map needs M ≥ 1");
        ensure!(
            data.ncols() == grid.pixels(),
            Dimension,
            "abundance data has {} columns, grid {} has {} pixels",
            data.ncols(),
            grid,
            grid.pixels()
        );
        ensure!(
            data.iter().all(|v| v.is_finite()),
            InvalidArgument,
            "abundances contain non-finite values"
        );
        Ok(Self { grid, data })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn endmembers(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn violation(&self) -> ConstraintViolation {
        let max_negative = self.data.iter().fold(0.0f64, |acc, &v| acc.max(-v));
        let max_sum_deviation = self
            .data
            .sum_axis(Axis(0))
            .iter()
            .fold(0.0f64, |acc, &s| acc.max((s - 1.0).abs()));
        ConstraintViolation {
            max_negative,
            max_sum_deviation,
        }
    }

    pub fn is_feasible(&self, eps: f64) -> bool {
        self.violation().max() <= eps
    }
}

/// Mixes endmembers into an image: `X = E·A`.
pub fn mix(endmembers: &EndmemberMatrix, abundances: &AbundanceMap) -> Result<MultibandImage> {
    ensure!(
        endmembers.endmembers() == abundances.endmembers(),
        Dimension,
        "E has {} endmembers, A has {}",
        endmembers.endmembers(),
        abundances.endmembers()
    );
    MultibandImage::new(abundances.grid, endmembers.matrix.dot(&abundances.data))
}

/// Per-image summary reported by [`validate_problem`].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSummary {
    pub bands: usize,
    pub pixels: usize,
    pub ratio: usize,
}

/// Outcome of [`validate_problem`]. Problems are collected, never raised.
#[derive(Debug, Clone, Default)]
pub struct ProblemDiagnostics {
    pub images: Vec<ImageSummary>,
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
    /// Whether the sufficient identifiability condition holds.
    pub identifiable: bool,
}

impl ProblemDiagnostics {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

pub const ILL_POSED_WARNING: &str =
    "ML problem potentially ill-posed: no image has full spatial resolution with at least M bands";

/// Checks a set of observation models against an endmember matrix and a
/// target grid.
pub fn validate_problem(
    models: &[ObservationModel],
    endmembers: &EndmemberMatrix,
    grid: Grid,
) -> ProblemDiagnostics {
    let mut diag = ProblemDiagnostics::default();
    if models.is_empty() {
        diag.errors.push("at least one observation model is required".into());
        return diag;
    }
    let mut consistent = true;
    for (k, model) in models.iter().enumerate() {
        let ratio = model.down.ratio.max(1);
        let pixels = if grid.height % ratio == 0 && grid.width % ratio == 0 {
            grid.pixels() / (ratio * ratio)
        } else {
            0
        };
        diag.images.push(ImageSummary {
            bands: model.output_bands(),
            pixels,
            ratio: model.down.ratio,
        });
        let mut push = |e: Error| {
            consistent = false;
            diag.errors.push(format!("image {k}: {e}"));
        };
        if let Err(e) = model.validate() {
            push(e);
        }
        if let Err(e) = grid.coarsen(ratio) {
            push(e);
        }
        if model.response.input_bands() != endmembers.bands() {
            push(Error::Dimension(format!(
                "response expects {} bands, endmembers have {}",
                model.response.input_bands(),
                endmembers.bands()
            )));
        }
        if model.blur.size() > grid.height.min(grid.width) {
            push(Error::Dimension(format!(
                "{0}×{0} kernel exceeds the {grid} grid",
                model.blur.size()
            )));
        }
    }
    if consistent {
        diag.identifiable = crate::fisher::sufficient_condition(models, endmembers, grid);
        if !diag.identifiable {
            diag.warnings.push(ILL_POSED_WARNING.into());
        }
    }
    diag
}

/// Row-list form used to (de)serialize small matrices as nested JSON arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub(crate) struct MatrixRows(pub Vec<Vec<f64>>);

pub(crate) fn rows_to_array(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let r = rows.len();
    ensure!(r >= 1, Dimension, "matrix has no rows");
    let c = rows[0].len();
    ensure!(
        rows.iter().all(|row| row.len() == c),
        Dimension,
        "matrix rows have unequal lengths"
    );
    Ok(Array2::from_shape_fn((r, c), |(i, j)| rows[i][j]))
}

fn array_to_rows(a: &Array2<f64>) -> MatrixRows {
    MatrixRows(a.rows().into_iter().map(|r| r.to_vec()).collect())
}

impl TryFrom<MatrixRows> for SpectralResponse {
    type Error = Error;
    fn try_from(rows: MatrixRows) -> Result<Self> {
        Self::new(rows_to_array(&rows.0)?)
    }
}

impl From<SpectralResponse> for MatrixRows {
    fn from(r: SpectralResponse) -> Self {
        array_to_rows(&r.matrix)
    }
}

impl TryFrom<MatrixRows> for BlurKernel {
    type Error = Error;
    fn try_from(rows: MatrixRows) -> Result<Self> {
        Self::new(rows_to_array(&rows.0)?)
    }
}

impl From<BlurKernel> for MatrixRows {
    fn from(k: BlurKernel) -> Self {
        array_to_rows(&k.coefficients)
    }
}
