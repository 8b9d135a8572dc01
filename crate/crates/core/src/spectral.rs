//! FFT-diagonalized operators on periodic 2D grids.
//!
//! Every operator here is block-circulant: cyclic convolution with a blur
//! kernel, the periodic backward differences `D_h`/`D_v`, and inverses of
//! sums of such operators. Multi-band inputs are `bands × pixels` matrices
//! in row-major raster order; each band is processed independently.
//!
//! Kernels are anchored at their center element: a kernel of size `s`
//! contributes coefficient `k[a][b]` at spatial lag `(a - s/2, b - s/2)`,
//! so the 1×1 kernel `[[1]]` is exactly the identity.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, ArrayViewMut1, Axis, Zip};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{ensure, Result};
use crate::image::{BlurKernel, Grid};

/// Planned forward/inverse 2D FFTs for one grid.
pub struct Fft2 {
    grid: Grid,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("grid", &self.grid).finish()
    }
}

impl Fft2 {
    pub fn new(grid: Grid) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            grid,
            row_fwd: planner.plan_fft_forward(grid.width),
            row_inv: planner.plan_fft_inverse(grid.width),
            col_fwd: planner.plan_fft_forward(grid.height),
            col_inv: planner.plan_fft_inverse(grid.height),
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    fn transform(&self, buf: &mut [Complex64], rows: &dyn Fft<f64>, cols: &dyn Fft<f64>) {
        let (h, w) = (self.grid.height, self.grid.width);
        debug_assert_eq!(buf.len(), h * w);
        rows.process(buf);
        let mut t = vec![Complex64::new(0.0, 0.0); h * w];
        for i in 0..h {
            for j in 0..w {
                t[j * h + i] = buf[i * w + j];
            }
        }
        cols.process(&mut t);
        for i in 0..h {
            for j in 0..w {
                buf[i * w + j] = t[j * h + i];
            }
        }
    }

    /// Unnormalized forward DFT of a real raster-ordered field.
    pub fn forward(&self, field: ArrayView1<'_, f64>) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, &*self.row_fwd, &*self.col_fwd);
        buf
    }

    /// Inverse DFT (scaled by `1/N`), returning the real part.
    pub fn inverse_into(&self, mut spectrum: Vec<Complex64>, mut out: ArrayViewMut1<'_, f64>) {
        self.transform(&mut spectrum, &*self.row_inv, &*self.col_inv);
        let scale = 1.0 / self.grid.pixels() as f64;
        for (o, s) in out.iter_mut().zip(spectrum) {
            *o = s.re * scale;
        }
    }
}

/// 2D DFT of a center-anchored kernel embedded in a periodic grid.
#[derive(Debug, Clone)]
pub struct FrequencyKernel {
    grid: Grid,
    spectrum: Vec<Complex64>,
}

impl FrequencyKernel {
    pub fn from_kernel(kernel: &BlurKernel, grid: Grid) -> Result<Self> {
        check_kernel_fits(kernel, grid)?;
        let fft = Fft2::new(grid);
        Ok(Self::from_kernel_with(kernel, &fft))
    }

    fn from_kernel_with(kernel: &BlurKernel, fft: &Fft2) -> Self {
        let grid = fft.grid();
        let (h, w) = (grid.height as isize, grid.width as isize);
        let c = kernel.radius() as isize;
        let mut embedded = ndarray::Array1::<f64>::zeros(grid.pixels());
        for ((a, b), &v) in kernel.coefficients().indexed_iter() {
            let r = (a as isize - c).rem_euclid(h) as usize;
            let s = (b as isize - c).rem_euclid(w) as usize;
            embedded[r * grid.width + s] += v;
        }
        Self {
            grid,
            spectrum: fft.forward(embedded.view()),
        }
    }

    /// Spectrum of the horizontal backward difference `x(i,j) − x(i,j−1)`.
    pub fn horizontal_difference(grid: Grid) -> Self {
        let w = grid.width as f64;
        let spectrum = (0..grid.pixels())
            .map(|p| {
                let v = (p % grid.width) as f64;
                Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, -2.0 * PI * v / w)
            })
            .collect();
        Self { grid, spectrum }
    }

    /// Spectrum of the vertical backward difference `x(i,j) − x(i−1,j)`.
    pub fn vertical_difference(grid: Grid) -> Self {
        let h = grid.height as f64;
        let spectrum = (0..grid.pixels())
            .map(|p| {
                let u = (p / grid.width) as f64;
                Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, -2.0 * PI * u / h)
            })
            .collect();
        Self { grid, spectrum }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Coefficient at frequency `(u, v)`.
    pub fn at(&self, u: usize, v: usize) -> Complex64 {
        self.spectrum[u * self.grid.width + v]
    }

    pub fn spectrum(&self) -> &[Complex64] {
        &self.spectrum
    }

    /// `|k̂(u,v)|²` at every frequency, raster order.
    pub fn power(&self) -> Vec<f64> {
        self.spectrum.iter().map(|c| c.norm_sqr()).collect()
    }
}

fn check_kernel_fits(kernel: &BlurKernel, grid: Grid) -> Result<()> {
    ensure!(
        kernel.size() <= grid.height.min(grid.width),
        Dimension,
        "{0}×{0} kernel is larger than the {grid} grid",
        kernel.size()
    );
    Ok(())
}

/// Cyclic convolution by a fixed kernel on a fixed grid (the operator `B`),
/// together with its adjoint `Bᵀ`.
#[derive(Debug, Clone)]
pub struct CyclicConvolution {
    fft: Arc<Fft2>,
    kernel: FrequencyKernel,
    identity: bool,
}

impl CyclicConvolution {
    pub fn new(kernel: &BlurKernel, grid: Grid) -> Result<Self> {
        Self::with_plan(kernel, Arc::new(Fft2::new(grid)))
    }

    pub fn with_plan(kernel: &BlurKernel, fft: Arc<Fft2>) -> Result<Self> {
        check_kernel_fits(kernel, fft.grid())?;
        let spectrum = FrequencyKernel::from_kernel_with(kernel, &fft);
        Ok(Self {
            fft,
            kernel: spectrum,
            identity: kernel.is_delta(),
        })
    }

    pub fn grid(&self) -> Grid {
        self.fft.grid()
    }

    pub fn kernel_spectrum(&self) -> &FrequencyKernel {
        &self.kernel
    }

    /// `X·B`: convolves every row of a `bands × pixels` matrix.
    pub fn apply(&self, rows: &Array2<f64>) -> Array2<f64> {
        self.filter(rows, false)
    }

    /// `X·Bᵀ`: convolves every row with the 180°-rotated kernel.
    pub fn apply_adjoint(&self, rows: &Array2<f64>) -> Array2<f64> {
        self.filter(rows, true)
    }

    fn filter(&self, rows: &Array2<f64>, adjoint: bool) -> Array2<f64> {
        assert_eq!(rows.ncols(), self.grid().pixels(), "row length must match grid");
        if self.identity {
            return rows.clone();
        }
        let mut out = Array2::zeros(rows.raw_dim());
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(rows.axis_iter(Axis(0)).into_par_iter())
            .for_each(|(o, r)| {
                let mut s = self.fft.forward(r);
                for (x, k) in s.iter_mut().zip(&self.kernel.spectrum) {
                    *x *= if adjoint { k.conj() } else { *k };
                }
                self.fft.inverse_into(s, o);
            });
        out
    }
}

/// Cyclic 2D convolution of a single `height × width` field.
pub fn circ_conv(field: &Array2<f64>, kernel: &BlurKernel) -> Result<Array2<f64>> {
    let (h, w) = field.dim();
    let grid = Grid::new(h, w);
    let op = CyclicConvolution::new(kernel, grid)?;
    let row = field
        .to_owned()
        .into_shape_with_order((1, grid.pixels()))
        .expect("contiguous field");
    Ok(op
        .apply(&row)
        .into_shape_with_order((h, w))
        .expect("same pixel count"))
}

/// Horizontal and vertical periodic backward differences of an `M × N`
/// matrix, stacked as a `2M × N` matrix (horizontal block on top).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPair {
    stacked: Array2<f64>,
}

impl GradientPair {
    pub fn from_stacked(stacked: Array2<f64>) -> Self {
        assert!(stacked.nrows() % 2 == 0, "stacked gradient needs an even row count");
        Self { stacked }
    }

    pub fn from_parts(horizontal: Array2<f64>, vertical: Array2<f64>) -> Self {
        assert_eq!(horizontal.dim(), vertical.dim());
        let stacked = ndarray::concatenate![Axis(0), horizontal, vertical];
        Self { stacked }
    }

    pub fn zeros(bands: usize, pixels: usize) -> Self {
        Self {
            stacked: Array2::zeros((2 * bands, pixels)),
        }
    }

    pub fn bands(&self) -> usize {
        self.stacked.nrows() / 2
    }

    pub fn horizontal(&self) -> ndarray::ArrayView2<'_, f64> {
        self.stacked.slice(ndarray::s![..self.bands(), ..])
    }

    pub fn vertical(&self) -> ndarray::ArrayView2<'_, f64> {
        self.stacked.slice(ndarray::s![self.bands().., ..])
    }

    pub fn stacked(&self) -> &Array2<f64> {
        &self.stacked
    }

    pub fn stacked_mut(&mut self) -> &mut Array2<f64> {
        &mut self.stacked
    }

    pub fn into_stacked(self) -> Array2<f64> {
        self.stacked
    }
}

/// `∇A = [A·D_h; A·D_v]` with periodic wrap.
pub fn grad(a: &Array2<f64>, grid: Grid) -> GradientPair {
    assert_eq!(a.ncols(), grid.pixels(), "row length must match grid");
    let (h, w) = (grid.height, grid.width);
    let m = a.nrows();
    let mut stacked = Array2::zeros((2 * m, grid.pixels()));
    for b in 0..m {
        let src = a.row(b);
        for i in 0..h {
            let up = (i + h - 1) % h;
            for j in 0..w {
                let left = (j + w - 1) % w;
                let p = i * w + j;
                stacked[[b, p]] = src[p] - src[i * w + left];
                stacked[[m + b, p]] = src[p] - src[up * w + j];
            }
        }
    }
    GradientPair { stacked }
}

/// `Q₁·D_hᵀ + Q₂·D_vᵀ`, the adjoint of [`grad`].
pub fn grad_adjoint(pair: &GradientPair, grid: Grid) -> Array2<f64> {
    assert_eq!(pair.stacked.ncols(), grid.pixels(), "row length must match grid");
    let (h, w) = (grid.height, grid.width);
    let m = pair.bands();
    let mut out = Array2::zeros((m, grid.pixels()));
    for b in 0..m {
        let qh = pair.stacked.row(b);
        let qv = pair.stacked.row(m + b);
        for i in 0..h {
            let down = (i + 1) % h;
            for j in 0..w {
                let right = (j + 1) % w;
                let p = i * w + j;
                out[[b, p]] = qh[p] - qh[i * w + right] + qv[p] - qv[down * w + j];
            }
        }
    }
    out
}

/// The operator `Σ_k B_k·B_kᵀ + D_h·D_hᵀ + D_v·D_vᵀ + I`, diagonalized by
/// the 2D DFT.
#[derive(Debug, Clone)]
pub struct CirculantSystem {
    fft: Arc<Fft2>,
    denominator: Vec<f64>,
}

impl CirculantSystem {
    pub fn new(kernels: &[BlurKernel], grid: Grid) -> Result<Self> {
        Self::with_plan(kernels, Arc::new(Fft2::new(grid)))
    }

    pub fn with_plan(kernels: &[BlurKernel], fft: Arc<Fft2>) -> Result<Self> {
        ensure!(!kernels.is_empty(), InvalidArgument, "at least one blur kernel is required");
        let grid = fft.grid();
        let dh = FrequencyKernel::horizontal_difference(grid).power();
        let dv = FrequencyKernel::vertical_difference(grid).power();
        let mut denominator: Vec<f64> = dh.iter().zip(&dv).map(|(a, b)| a + b + 1.0).collect();
        for k in kernels {
            check_kernel_fits(k, grid)?;
            let spec = FrequencyKernel::from_kernel_with(k, &fft);
            for (d, c) in denominator.iter_mut().zip(&spec.spectrum) {
                *d += c.norm_sqr();
            }
        }
        Ok(Self { fft, denominator })
    }

    pub fn grid(&self) -> Grid {
        self.fft.grid()
    }

    /// Denominator spectrum, raster order over frequencies. Every entry is ≥ 1.
    pub fn denominator(&self) -> &[f64] {
        &self.denominator
    }

    /// Solves `X·(Σ B_kB_kᵀ + D_hD_hᵀ + D_vD_vᵀ + I) = rhs` row by row.
    pub fn solve(&self, rhs: &Array2<f64>) -> Array2<f64> {
        self.map_rows(rhs, |s, d| s / d)
    }

    /// Forward application of the same operator.
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        self.map_rows(x, |s, d| s * d)
    }

    fn map_rows(&self, input: &Array2<f64>, f: impl Fn(Complex64, f64) -> Complex64 + Sync) -> Array2<f64> {
        assert_eq!(input.ncols(), self.grid().pixels(), "row length must match grid");
        let mut out = Array2::zeros(input.raw_dim());
        Zip::from(out.rows_mut())
            .and(input.rows())
            .par_for_each(|o, r| {
                let mut s = self.fft.forward(r);
                for (x, &d) in s.iter_mut().zip(&self.denominator) {
                    *x = f(*x, d);
                }
                self.fft.inverse_into(s, o);
            });
        out
    }
}

/// One-shot circulant solve; see [`CirculantSystem::solve`].
pub fn circulant_solve(rhs: &Array2<f64>, kernels: &[BlurKernel], grid: Grid) -> Result<Array2<f64>> {
    Ok(CirculantSystem::new(kernels, grid)?.solve(rhs))
}
