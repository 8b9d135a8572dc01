//! Small fusion problems and dense oracles for the ADMM sub-problems.

use mbfuse::admm::{AdmmState, Precomputed};
use mbfuse::image::{BlurKernel, EndmemberMatrix, Grid, MultibandImage, ObservationModel, SpectralResponse};
use mbfuse::observation::apply_forward;
use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::*;

pub struct Problem {
    pub obs: Vec<MultibandImage>,
    pub models: Vec<ObservationModel>,
    pub e: EndmemberMatrix,
    pub truth: Array2<f64>,
}

/// Unblurred full-resolution multiband image plus a blurred, decimated
/// image with every band, observed from random simplex abundances.
pub fn problem(seed: u64, grid: Grid, m: usize, noise: f64) -> Problem {
    problem_with_variance(seed, grid, m, noise, 1e-4)
}

/// Like [`problem`] with the full-resolution noise variance set to `var`.
pub fn problem_with_variance(seed: u64, grid: Grid, m: usize, noise: f64, var: f64) -> Problem {
    let mut r = rng(seed);
    let l = 6;
    let e = distinct_endmembers(&mut r, l, m);
    let models = vec![
        model(band_response(&mut r, m + 1, l), BlurKernel::delta(), 1, vec![var; m + 1]),
        model(SpectralResponse::identity(l), random_kernel(&mut r, 3), 2, vec![2e-4; l]),
    ];
    let truth = random_simplex(&mut r, m, grid.pixels());
    let x = image(grid, e.matrix().dot(&truth));
    let obs = models
        .iter()
        .map(|md| {
            let clean = apply_forward(&x, md).unwrap();
            let g = clean.grid();
            let mut y = clean.into_data();
            for (mut row, v) in y.rows_mut().into_iter().zip(&md.noise.sensor_var) {
                row.mapv_inplace(|t| t + noise * v.sqrt() * r.sample::<f64, _>(StandardNormal));
            }
            image(g, y)
        })
        .collect();
    Problem { obs, models, e, truth }
}

/// Well-separated spectra: endmember `k` peaks on bands `l ≡ k (mod m)`.
pub fn distinct_endmembers(r: &mut impl Rng, l: usize, m: usize) -> EndmemberMatrix {
    EndmemberMatrix::new(Array2::from_shape_fn((l, m), |(b, k)| {
        0.1 + if b % m == k { 0.6 } else { 0.0 } + 0.2 * r.random::<f64>()
    }))
    .unwrap()
}

/// Broad-band response whose row `i` mostly averages bands `l ≡ i (mod rows)`.
pub fn band_response(r: &mut impl Rng, rows: usize, l: usize) -> SpectralResponse {
    let mut m = Array2::from_shape_fn((rows, l), |(i, b)| if b % rows == i { 1.0 } else { 0.1 * r.random::<f64>() });
    for mut row in m.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    SpectralResponse::new(m).unwrap()
}

/// State with every block random.
pub fn random_state(pre: &Precomputed, m: usize, r: &mut impl Rng) -> AdmmState {
    let n = pre.grid().pixels();
    let k = pre.images().len();
    AdmmState::from_parts(
        pre,
        random_matrix(r, m, n),
        (0..k).map(|_| random_matrix(r, m, n)).collect(),
        random_matrix(r, 2 * m, n),
        random_matrix(r, m, n),
        (0..k).map(|_| random_matrix(r, m, n)).collect(),
        random_matrix(r, 2 * m, n),
        random_matrix(r, m, n),
    )
    .unwrap()
}

/// Dense solve of the A-subproblem normal equations at the current state.
pub fn dense_update_a(p: &Problem, st: &AdmmState) -> DMatrix<f64> {
    let grid = p.obs[0].grid();
    let (n, m) = (grid.pixels(), p.e.endmembers());
    let (dh, dv) = dense_d(grid);
    let mut rhs = to_dense(&(st.w() + st.h()));
    let mut sys = DMatrix::<f64>::identity(n, n) + &dh * dh.transpose() + &dv * dv.transpose();
    for (k, md) in p.models.iter().enumerate() {
        let b = dense_b(&md.blur, grid);
        rhs += to_dense(&(&st.u()[k] + &st.f()[k])) * b.transpose();
        sys += &b * b.transpose();
    }
    let q = st.v() + st.g();
    rhs += to_dense(&q.slice(s![0..m, ..]).to_owned()) * dh.transpose();
    rhs += to_dense(&q.slice(s![m..2 * m, ..]).to_owned()) * dv.transpose();
    sys.transpose().lu().solve(&rhs.transpose()).unwrap().transpose()
}

/// Dense per-pixel solve of the U-subproblem of image `k` given `A` and `F_k`.
pub fn dense_update_u(p: &Problem, k: usize, mu: f64, a: &Array2<f64>, f: &Array2<f64>) -> DMatrix<f64> {
    let grid = p.obs[0].grid();
    let md = &p.models[k];
    let m = p.e.endmembers();
    let re = to_dense(md.response.matrix()) * to_dense(p.e.matrix());
    let li = lambda_inv(md);
    let sys = re.transpose() * &li * &re + DMatrix::identity(m, m) * mu;
    let target = to_dense(a) * dense_b(&md.blur, grid) - to_dense(f);
    let sel = dense_s(grid, md.ratio());
    let y = to_dense(p.obs[k].data());
    let mut expected = target.clone();
    for q in 0..sel.ncols() {
        let pix = (0..grid.pixels()).find(|&i| sel[(i, q)] == 1.0).unwrap();
        let rhs: DVector<f64> = re.transpose() * &li * y.column(q) + target.column(pix) * mu;
        expected.set_column(pix, &sys.clone().lu().solve(&rhs).unwrap());
    }
    expected
}
