//! Shared helpers and independent dense oracles for the integration tests.
#![allow(dead_code)]

pub mod fusion;

use mbfuse::image::{BlurKernel, DownsamplePlan, Grid, MultibandImage, ObservationModel, SpectralResponse};
use mbfuse::EndmemberMatrix;
use nalgebra::DMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

pub fn positive_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(0.05..1.0))
}

pub fn random_kernel(rng: &mut impl Rng, size: usize) -> BlurKernel {
    BlurKernel::normalized(positive_matrix(rng, size, size)).unwrap()
}

pub fn random_response(rng: &mut impl Rng, rows: usize, cols: usize) -> SpectralResponse {
    let mut r = positive_matrix(rng, rows, cols);
    for mut row in r.rows_mut() {
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    SpectralResponse::new(r).unwrap()
}

pub fn random_endmembers(rng: &mut impl Rng, bands: usize, m: usize) -> EndmemberMatrix {
    EndmemberMatrix::new(positive_matrix(rng, bands, m)).unwrap()
}

pub fn random_simplex(rng: &mut impl Rng, m: usize, n: usize) -> Array2<f64> {
    let mut a = positive_matrix(rng, m, n);
    for mut c in a.columns_mut() {
        let s = c.sum();
        c.mapv_inplace(|v| v / s);
    }
    a
}

pub fn image(grid: Grid, data: Array2<f64>) -> MultibandImage {
    MultibandImage::new(grid, data).unwrap()
}

pub fn model(
    response: SpectralResponse,
    blur: BlurKernel,
    ratio: usize,
    sensor_var: Vec<f64>,
) -> ObservationModel {
    ObservationModel::new(response, blur, DownsamplePlan::new(ratio).unwrap(), sensor_var, vec![]).unwrap()
}

pub fn to_dense(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn from_dense(d: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((d.nrows(), d.ncols()), |(i, j)| d[(i, j)])
}

pub fn frob(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    frob(&(a - b)) / frob(b).max(1e-300)
}

pub fn dense_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn inner(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a * b).sum()
}

/// Direct cyclic convolution of one raster-ordered band, by the definition
/// `out(i,j) = Σ k[a][b] · x(i − (a−c), j − (b−c))`.
pub fn naive_conv(x: &[f64], grid: Grid, kernel: &BlurKernel) -> Vec<f64> {
    let (h, w) = (grid.height as isize, grid.width as isize);
    let c = kernel.radius() as isize;
    let k = kernel.coefficients();
    let mut out = vec![0.0; grid.pixels()];
    for i in 0..h {
        for j in 0..w {
            let mut s = 0.0;
            for a in 0..k.nrows() as isize {
                for b in 0..k.ncols() as isize {
                    let si = (i - (a - c)).rem_euclid(h);
                    let sj = (j - (b - c)).rem_euclid(w);
                    s += k[[a as usize, b as usize]] * x[(si * w + sj) as usize];
                }
            }
            out[(i * w + j) as usize] = s;
        }
    }
    out
}

/// Dense `N × N` matrix `B` of `x ↦ x·B`, built column by column from
/// convolutions of unit impulses.
pub fn dense_b(kernel: &BlurKernel, grid: Grid) -> DMatrix<f64> {
    let n = grid.pixels();
    let mut b = DMatrix::zeros(n, n);
    for p in 0..n {
        let mut e = vec![0.0; n];
        e[p] = 1.0;
        let row = naive_conv(&e, grid, kernel);
        for q in 0..n {
            b[(p, q)] = row[q];
        }
    }
    b
}

/// Dense `N × N_k` selection matrix keeping pixels `(iD, jD)`.
pub fn dense_s(grid: Grid, ratio: usize) -> DMatrix<f64> {
    let (hc, wc) = (grid.height / ratio, grid.width / ratio);
    let mut s = DMatrix::zeros(grid.pixels(), hc * wc);
    for i in 0..hc {
        for j in 0..wc {
            s[((i * ratio) * grid.width + j * ratio, i * wc + j)] = 1.0;
        }
    }
    s
}

/// Dense periodic backward-difference matrices `(D_h, D_v)` acting as `x·D`.
pub fn dense_d(grid: Grid) -> (DMatrix<f64>, DMatrix<f64>) {
    let (h, w) = (grid.height, grid.width);
    let n = grid.pixels();
    let mut dh = DMatrix::zeros(n, n);
    let mut dv = DMatrix::zeros(n, n);
    for i in 0..h {
        for j in 0..w {
            let q = i * w + j;
            dh[(q, q)] += 1.0;
            dh[(i * w + (j + w - 1) % w, q)] -= 1.0;
            dv[(q, q)] += 1.0;
            dv[(((i + h - 1) % h) * w + j, q)] -= 1.0;
        }
    }
    (dh, dv)
}

/// `Λ⁻¹` of a model with zero mixture noise.
pub fn lambda_inv(m: &ObservationModel) -> DMatrix<f64> {
    DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        m.noise.sensor_var.len(),
        m.noise.sensor_var.iter().map(|v| 1.0 / v),
    ))
}

/// Simplex projection by bisection on the KKT threshold.
pub fn bisection_projection(v: &[f64]) -> Vec<f64> {
    let (mut lo, mut hi) = (
        v.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0,
        v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let s: f64 = v.iter().map(|x| (x - mid).max(0.0)).sum();
        if s > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    v.iter().map(|x| (x - t).max(0.0)).collect()
}
