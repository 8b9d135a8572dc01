//! Fisher information, Cramér–Rao bounds and the closed-form ML estimate of
//! the abundances for small problems.
//!
//! Everything here builds the operators densely: `B_k` as an `N × N`
//! circulant matrix, `S_k` as an `N × N_k` selection matrix, and the FIM as
//! the `MN × MN` sum of Kronecker products
//! `Σ_k (B_k·S_k·S_kᵀ·B_kᵀ) ⊗ (Eᵀ·R_kᵀ·Λ_k⁻¹·R_k·E)`. The abundance vector
//! is `a = vec(A)` (columns of `A` stacked), so entry `(m, p)` of `A` sits at
//! index `p·M + m`.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use ndarray::Array2;

use crate::error::{ensure, Error, Result};
use crate::image::{AbundanceMap, BlurKernel, DownsamplePlan, EndmemberMatrix, Grid, MultibandImage, ObservationModel};
use crate::observation::{aggregate_noise, ForwardOperator};
use crate::spectral::FrequencyKernel;

/// Largest `M·N` accepted by the dense routines unless overridden.
pub const DEFAULT_SIZE_LIMIT: usize = 4096;

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct FisherReport {
    pub fim: DMatrix<f64>,
    pub numerical_rank: usize,
    /// The sufficient identifiability condition (see [`sufficient_condition`]).
    pub identifiable: bool,
    /// Diagonal of `F⁻¹` when `F` has full rank.
    pub crlb_diag: Option<Vec<f64>>,
    pub endmembers: usize,
    pub grid: Grid,
}

impl FisherReport {
    pub fn dimension(&self) -> usize {
        self.fim.nrows()
    }

    pub fn is_full_rank(&self) -> bool {
        self.numerical_rank == self.dimension()
    }
}

/// Dense `N × N` matrix of `X ↦ X·B` (cyclic convolution on the row vector).
pub fn dense_blur(kernel: &BlurKernel, grid: Grid) -> DMatrix<f64> {
    let n = grid.pixels();
    let (h, w) = (grid.height as isize, grid.width as isize);
    let c = kernel.radius() as isize;
    let mut b = DMatrix::zeros(n, n);
    for i in 0..h {
        for j in 0..w {
            let q = (i * w + j) as usize;
            for ((a, bb), &k) in kernel.coefficients().indexed_iter() {
                let si = (i - (a as isize - c)).rem_euclid(h);
                let sj = (j - (bb as isize - c)).rem_euclid(w);
                b[((si * w + sj) as usize, q)] += k;
            }
        }
    }
    b
}

/// Dense `N × N_k` decimation matrix.
pub fn dense_selection(plan: &DownsamplePlan, grid: Grid) -> Result<DMatrix<f64>> {
    let idx = plan.sample_indices(grid)?;
    let mut s = DMatrix::zeros(grid.pixels(), idx.len());
    for (q, &p) in idx.iter().enumerate() {
        s[(p, q)] = 1.0;
    }
    Ok(s)
}

fn to_dense(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

struct ImageTerms {
    /// `B·S`, `N × N_k`
    blur_select: DMatrix<f64>,
    /// `Eᵀ·Rᵀ·Λ⁻¹`, `M × L_k`
    projector: DMatrix<f64>,
    /// `Eᵀ·Rᵀ·Λ⁻¹·R·E`, `M × M`
    gram: DMatrix<f64>,
}

fn image_terms(model: &ObservationModel, e: &EndmemberMatrix, grid: Grid) -> Result<ImageTerms> {
    ensure!(
        model.response.input_bands() == e.bands(),
        Dimension,
        "response expects {} bands, endmembers have {}",
        model.response.input_bands(),
        e.bands()
    );
    let noise = aggregate_noise(model)?;
    let lambda_inv = to_dense(&noise.inverse());
    let re = to_dense(&model.response.matrix().dot(e.matrix()));
    let projector = re.transpose() * &lambda_inv;
    let gram = &projector * &re;
    let blur_select = dense_blur(&model.blur, grid) * dense_selection(&model.down, grid)?;
    Ok(ImageTerms {
        blur_select,
        projector,
        gram,
    })
}

fn check_size(m: usize, grid: Grid, limit: usize) -> Result<()> {
    let size = m * grid.pixels();
    if size > limit {
        return Err(Error::SizeLimit { size, limit });
    }
    Ok(())
}

/// Sufficient condition for identifiability: some image has
/// full spatial resolution (`D_k = 1`) and its term
/// `(B_k·B_kᵀ) ⊗ (Eᵀ·R_kᵀ·Λ_k⁻¹·R_k·E)` is numerically full rank, which
/// needs `L_k ≥ M`, `R_k·E` of full column rank and a blur with no
/// (numerical) spectral zeros on the grid.
pub fn sufficient_condition(models: &[ObservationModel], e: &EndmemberMatrix, grid: Grid) -> bool {
    let m = e.endmembers();
    models.iter().any(|model| {
        if model.down.ratio != 1 || model.output_bands() < m {
            return false;
        }
        let Ok(noise) = aggregate_noise(model) else {
            return false;
        };
        if model.response.input_bands() != e.bands() {
            return false;
        }
        let re = model.response.matrix().dot(e.matrix());
        let gram = to_dense(&re.t().dot(&noise.inverse()).dot(&re));
        let eig = SymmetricEigen::new(gram).eigenvalues;
        let (gmin, gmax) = (eig.min(), eig.max());
        let Ok(spec) = FrequencyKernel::from_kernel(&model.blur, grid) else {
            return false;
        };
        let power = spec.power();
        let bmin = power.iter().cloned().fold(f64::INFINITY, f64::min);
        let bmax = power.iter().cloned().fold(0.0, f64::max);
        gmax > 0.0 && bmax > 0.0 && (gmin * bmin) / (gmax * bmax) > 1e2 * RANK_TOL
    })
}

/// Builds the Fisher information matrix and its rank/CRLB summary.
pub fn compute_fim(
    models: &[ObservationModel],
    e: &EndmemberMatrix,
    grid: Grid,
    size_limit: usize,
) -> Result<FisherReport> {
    ensure!(!models.is_empty(), InvalidArgument, "at least one model is required");
    let m = e.endmembers();
    check_size(m, grid, size_limit)?;
    let dim = m * grid.pixels();
    let mut fim = DMatrix::zeros(dim, dim);
    for model in models {
        let t = image_terms(model, e, grid)?;
        let spatial = &t.blur_select * t.blur_select.transpose();
        fim += spatial.kronecker(&t.gram);
    }
    let fim = (&fim + fim.transpose()) * 0.5;
    let eig = SymmetricEigen::new(fim.clone()).eigenvalues;
    let largest = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let numerical_rank = eig.iter().filter(|v| v.abs() > RANK_TOL * largest).count();
    let crlb_diag = if numerical_rank == dim {
        Cholesky::new(fim.clone()).map(|c| c.inverse().diagonal().iter().cloned().collect())
    } else {
        None
    };
    Ok(FisherReport {
        fim,
        numerical_rank,
        identifiable: sufficient_condition(models, e, grid),
        crlb_diag,
        endmembers: m,
        grid,
    })
}

/// `tr(F⁻¹)`, the total Cramér–Rao bound over all abundance entries.
pub fn crlb_trace(report: &FisherReport) -> Result<f64> {
    match &report.crlb_diag {
        Some(d) => Ok(d.iter().sum()),
        None => Err(Error::Singular(format!(
            "FIM has rank {} of {}",
            report.numerical_rank,
            report.dimension()
        ))),
    }
}

/// Fine grid implied by a set of observations and their decimation ratios.
pub fn target_grid(observations: &[MultibandImage], models: &[ObservationModel]) -> Result<Grid> {
    ensure!(
        !observations.is_empty() && observations.len() == models.len(),
        Dimension,
        "{} observations for {} models",
        observations.len(),
        models.len()
    );
    let grid = observations[0].grid().refine(models[0].down.ratio);
    for (k, (y, m)) in observations.iter().zip(models).enumerate() {
        ensure!(
            y.grid().refine(m.down.ratio) == grid,
            Dimension,
            "image {k} ({} at ratio {}) does not match the {grid} target grid",
            y.grid(),
            m.down.ratio
        );
        ensure!(
            y.bands() == m.output_bands(),
            Dimension,
            "image {k} has {} bands, its model produces {}",
            y.bands(),
            m.output_bands()
        );
    }
    Ok(grid)
}

/// Unconstrained maximum-likelihood abundances
/// `â = F⁻¹ · Σ_k (B_k·S_k ⊗ Eᵀ·R_kᵀ·Λ_k⁻¹) y_k`.
pub fn ml_closed_form(
    observations: &[MultibandImage],
    models: &[ObservationModel],
    e: &EndmemberMatrix,
) -> Result<AbundanceMap> {
    ml_closed_form_with_limit(observations, models, e, DEFAULT_SIZE_LIMIT)
}

pub fn ml_closed_form_with_limit(
    observations: &[MultibandImage],
    models: &[ObservationModel],
    e: &EndmemberMatrix,
    size_limit: usize,
) -> Result<AbundanceMap> {
    let grid = target_grid(observations, models)?;
    let report = compute_fim(models, e, grid, size_limit)?;
    if !report.is_full_rank() {
        return Err(Error::Singular(format!(
            "FIM has rank {} of {}; the ML problem has no unique solution",
            report.numerical_rank,
            report.dimension()
        )));
    }
    let m = e.endmembers();
    let n = grid.pixels();
    let mut rhs = DMatrix::zeros(m, n);
    for (y, model) in observations.iter().zip(models) {
        let t = image_terms(model, e, grid)?;
        rhs += &t.projector * to_dense(y.data()) * t.blur_select.transpose();
    }
    // column-major storage of an M × N matrix is exactly vec(·)
    let rhs = nalgebra::DVector::from_column_slice(rhs.as_slice());
    let chol = Cholesky::new(report.fim)
        .ok_or_else(|| Error::Singular("FIM is not positive definite".into()))?;
    let a = chol.solve(&rhs);
    AbundanceMap::new(grid, Array2::from_shape_fn((m, n), |(i, p)| a[p * m + i]))
}

/// Gaussian log-likelihood of abundances `a` given the observations,
/// evaluated through the forward operators.
pub fn log_likelihood(
    observations: &[MultibandImage],
    models: &[ObservationModel],
    e: &EndmemberMatrix,
    a: &AbundanceMap,
) -> Result<f64> {
    let grid = target_grid(observations, models)?;
    ensure!(a.grid() == grid, Dimension, "abundance grid differs from target grid");
    let x = e.matrix().dot(a.data());
    let mut ll = 0.0;
    for (y, model) in observations.iter().zip(models) {
        let op = ForwardOperator::new(model, grid)?;
        let noise = aggregate_noise(model)?;
        let resid = y.data() - &op.apply(&x);
        let white = noise.inv_sqrt.dot(&resid);
        let chol = Cholesky::new(to_dense(&noise.lambda))
            .ok_or_else(|| Error::Singular("Λ is not positive definite".into()))?;
        let ln_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let lk = model.output_bands() as f64;
        let nk = y.pixels() as f64;
        ll -= 0.5 * nk * (lk * (2.0 * std::f64::consts::PI).ln() + ln_det);
        ll -= 0.5 * white.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(ll)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::SpectralResponse;
    use ndarray::array;

    fn e3() -> EndmemberMatrix {
        EndmemberMatrix::new(array![
            [0.9, 0.1, 0.3],
            [0.2, 0.8, 0.3],
            [0.1, 0.3, 0.9],
            [0.5, 0.5, 0.2]
        ])
        .unwrap()
    }

    fn model(resp: Array2<f64>, blur: BlurKernel, ratio: usize, var: f64) -> ObservationModel {
        let lk = resp.nrows();
        ObservationModel::new(
            SpectralResponse::new(resp).unwrap(),
            blur,
            DownsamplePlan::new(ratio).unwrap(),
            vec![var; lk],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn full_resolution_identity_blur_gives_block_diagonal_fim() {
        let e = e3();
        let grid = Grid::new(2, 3);
        let m = model(Array2::eye(4), BlurKernel::delta(), 1, 1.0);
        let rep = compute_fim(&[m], &e, grid, DEFAULT_SIZE_LIMIT).unwrap();
        let g = to_dense(&e.matrix().t().dot(e.matrix()));
        let expect = DMatrix::<f64>::identity(6, 6).kronecker(&g);
        assert!((&rep.fim - expect).abs().max() < 1e-14);
        assert!(rep.identifiable && rep.is_full_rank());
        assert!(crlb_trace(&rep).is_ok());
    }

    #[test]
    fn coarse_and_band_poor_images_are_rank_deficient() {
        let e = e3();
        let grid = Grid::new(4, 4);
        let pan = model(Array2::from_elem((1, 4), 0.25), BlurKernel::delta(), 2, 1.0);
        let ms = model(
            array![[0.5, 0.5, 0.0, 0.0], [0.0, 0.0, 0.5, 0.5]],
            crate::observation::gaussian_kernel(3, 0.8).unwrap(),
            2,
            1.0,
        );
        let rep = compute_fim(&[pan, ms], &e, grid, DEFAULT_SIZE_LIMIT).unwrap();
        assert!(!rep.identifiable);
        assert!(rep.numerical_rank < rep.dimension());
        assert!(crlb_trace(&rep).is_err());
    }

    #[test]
    fn size_limit_is_enforced() {
        let e = e3();
        let m = model(Array2::eye(4), BlurKernel::delta(), 1, 1.0);
        let err = compute_fim(&[m], &e, Grid::new(8, 8), 100).unwrap_err();
        assert!(matches!(err, Error::SizeLimit { size: 192, limit: 100 }));
    }

    #[test]
    fn identity_estimator() {
        let e = EndmemberMatrix::new(Array2::eye(2)).unwrap();
        let grid = Grid::new(2, 2);
        let m = model(Array2::eye(2), BlurKernel::delta(), 1, 1.0);
        let y = MultibandImage::new(grid, array![[0.1, 0.7, -0.3, 2.0], [1.5, 0.0, 0.4, 0.9]])
            .unwrap();
        let a = ml_closed_form(&[y.clone()], &[m], &e).unwrap();
        assert!((a.data() - y.data()).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn dense_blur_of_delta_is_identity() {
        let b = dense_blur(&BlurKernel::delta(), Grid::new(3, 4));
        assert_eq!(b, DMatrix::identity(12, 12));
    }
}
