mod common;

use common::*;
use mbfuse::image::{BlurKernel, Grid, ObservationModel, SpectralResponse};
use mbfuse::observation::{apply_forward, ForwardOperator};
use mbfuse::spectral::{
    circ_conv, circulant_solve, grad, grad_adjoint, CirculantSystem, CyclicConvolution, Fft2, FrequencyKernel,
    GradientPair,
};
use ndarray::{array, Array1, Array2};
use rustfft::num_complex::Complex64;

#[test]
fn convolution_matches_dense_circulant() {
    let mut r = rng(1);
    let grid = Grid::new(5, 5);
    let x = random_matrix(&mut r, 1, 25);
    let k = random_kernel(&mut r, 3);
    let fast = CyclicConvolution::new(&k, grid).unwrap().apply(&x);
    let dense = to_dense(&x) * dense_b(&k, grid);
    assert!(dense_rel_err(&to_dense(&fast), &dense) < 1e-12);
}

#[test]
fn convolution_of_constant_is_constant() {
    let mut r = rng(2);
    let k = random_kernel(&mut r, 5);
    let f = Array2::from_elem((6, 7), 0.37);
    let out = circ_conv(&f, &k).unwrap();
    assert!(out.iter().all(|v| (v - 0.37).abs() < 1e-14));
}

#[test]
fn kernel_larger_than_grid_rejected() {
    let k = BlurKernel::normalized(Array2::ones((5, 5))).unwrap();
    assert!(circ_conv(&Array2::zeros((4, 8)), &k).is_err());
}

#[test]
fn convolution_adjoint_is_rotated_kernel() {
    let mut r = rng(3);
    let grid = Grid::new(6, 4);
    let k = random_kernel(&mut r, 3);
    let op = CyclicConvolution::new(&k, grid).unwrap();
    let rot = CyclicConvolution::new(&k.rot180(), grid).unwrap();
    let x = random_matrix(&mut r, 2, 24);
    assert!(rel_err(&op.apply_adjoint(&x), &rot.apply(&x)) < 1e-12);
    let dense = to_dense(&x) * dense_b(&k, grid).transpose();
    assert!(dense_rel_err(&to_dense(&op.apply_adjoint(&x)), &dense) < 1e-12);
}

#[test]
fn kernel_spectrum_is_hermitian_with_unit_dc() {
    let mut r = rng(4);
    let grid = Grid::new(6, 8);
    let k = random_kernel(&mut r, 5);
    let f = FrequencyKernel::from_kernel(&k, grid).unwrap();
    assert!((f.at(0, 0) - Complex64::new(1.0, 0.0)).norm() < 1e-12);
    for u in 0..6 {
        for v in 0..8 {
            let a = f.at(u, v);
            let b = f.at((6 - u) % 6, (8 - v) % 8).conj();
            assert!((a - b).norm() < 1e-12);
        }
    }
}

#[test]
fn gradient_hand_example() {
    let a = array![[1.0, 2.0, 3.0, 4.0]];
    let g = grad(&a, Grid::new(1, 4));
    assert_eq!(g.horizontal().row(0).to_vec(), vec![-3.0, 1.0, 1.0, 1.0]);
    assert!(g.vertical().iter().all(|v| *v == 0.0));
}

#[test]
fn gradient_of_constant_vanishes() {
    let g = grad(&Array2::from_elem((3, 20), 0.4), Grid::new(4, 5));
    assert!(g.stacked().iter().all(|v| *v == 0.0));
    assert_eq!(g.stacked().nrows(), 6);
}

#[test]
fn gradient_matches_dense_operators() {
    let mut r = rng(5);
    let grid = Grid::new(3, 3);
    let (dh, dv) = dense_d(grid);
    let a = random_matrix(&mut r, 2, 9);
    let g = grad(&a, grid);
    assert!(dense_rel_err(&to_dense(&g.horizontal().to_owned()), &(to_dense(&a) * &dh)) < 1e-14);
    assert!(dense_rel_err(&to_dense(&g.vertical().to_owned()), &(to_dense(&a) * &dv)) < 1e-14);
    let q = GradientPair::from_parts(random_matrix(&mut r, 2, 9), random_matrix(&mut r, 2, 9));
    let adj = grad_adjoint(&q, grid);
    let dense = to_dense(&q.horizontal().to_owned()) * dh.transpose() + to_dense(&q.vertical().to_owned()) * dv.transpose();
    assert!(dense_rel_err(&to_dense(&adj), &dense) < 1e-14);
    let zero = grad_adjoint(&GradientPair::zeros(2, 9), grid);
    assert!(zero.iter().all(|v| *v == 0.0));
}

#[test]
fn gradient_normal_operator_spectrum() {
    let mut r = rng(6);
    let grid = Grid::new(4, 6);
    let a = random_matrix(&mut r, 1, 24);
    let out = grad_adjoint(&grad(&a, grid), grid);
    let fft = Fft2::new(grid);
    let ah = fft.forward(a.row(0));
    let oh = fft.forward(out.row(0));
    for u in 0..4 {
        for v in 0..6 {
            let wh = 2.0 * std::f64::consts::PI * v as f64 / 6.0;
            let wv = 2.0 * std::f64::consts::PI * u as f64 / 4.0;
            let gain = (2.0 - 2.0 * wh.cos()) + (2.0 - 2.0 * wv.cos());
            let p = u * 6 + v;
            assert!((oh[p] - ah[p] * gain).norm() < 1e-10);
        }
    }
}

#[test]
fn circulant_solve_matches_dense_system() {
    let mut r = rng(7);
    let grid = Grid::new(4, 4);
    let k1 = random_kernel(&mut r, 3);
    let k2 = random_kernel(&mut r, 3);
    let rhs = random_matrix(&mut r, 2, 16);
    let fast = circulant_solve(&rhs, &[k1.clone(), k2.clone()], grid).unwrap();
    let (dh, dv) = dense_d(grid);
    let b1 = dense_b(&k1, grid);
    let b2 = dense_b(&k2, grid);
    let sys = &b1 * b1.transpose() + &b2 * b2.transpose() + &dh * dh.transpose() + &dv * dv.transpose()
        + nalgebra::DMatrix::identity(16, 16);
    // x·sys = rhs  ⇔  sysᵀ·xᵀ = rhsᵀ
    let xt = sys.transpose().lu().solve(&to_dense(&rhs).transpose()).unwrap();
    assert!(dense_rel_err(&to_dense(&fast), &xt.transpose()) < 1e-10);
}

#[test]
fn circulant_denominator_at_dc_and_roundtrip() {
    let mut r = rng(8);
    let grid = Grid::new(8, 8);
    let kernels = vec![random_kernel(&mut r, 3), random_kernel(&mut r, 5), BlurKernel::delta()];
    let sys = CirculantSystem::new(&kernels, grid).unwrap();
    assert!((sys.denominator()[0] - 4.0).abs() < 1e-12);
    assert!(sys.denominator().iter().all(|d| *d >= 1.0 - 1e-12));
    let rhs = random_matrix(&mut r, 3, 64);
    assert!(rel_err(&sys.apply(&sys.solve(&rhs)), &rhs) < 1e-9);
    assert!(sys.solve(&Array2::zeros((2, 64))).iter().all(|v| *v == 0.0));
}

#[test]
fn operators_act_bandwise() {
    let mut r = rng(9);
    let grid = Grid::new(4, 5);
    let k = random_kernel(&mut r, 3);
    let op = CyclicConvolution::new(&k, grid).unwrap();
    let x = random_matrix(&mut r, 3, 20);
    let all = op.apply(&x);
    for b in 0..3 {
        let one = op.apply(&x.row(b).to_owned().insert_axis(ndarray::Axis(0)));
        assert_eq!(all.row(b), one.row(0));
    }
}

#[test]
fn forward_matches_dense_model() {
    let mut r = rng(10);
    let grid = Grid::new(4, 4);
    let x = random_matrix(&mut r, 3, 16);
    let resp = random_response(&mut r, 2, 3);
    let k = random_kernel(&mut r, 3);
    let m = model(resp.clone(), k.clone(), 2, vec![1.0; 2]);
    let y = apply_forward(&image(grid, x.clone()), &m).unwrap();
    let dense = to_dense(resp.matrix()) * to_dense(&x) * dense_b(&k, grid) * dense_s(grid, 2);
    assert!(dense_rel_err(&to_dense(y.data()), &dense) < 1e-12);
}

#[test]
fn forward_is_linear() {
    let mut r = rng(11);
    let grid = Grid::new(8, 8);
    let m = model(random_response(&mut r, 2, 4), random_kernel(&mut r, 5), 2, vec![1.0; 2]);
    let op = ForwardOperator::new(&m, grid).unwrap();
    let (x1, x2) = (random_matrix(&mut r, 4, 64), random_matrix(&mut r, 4, 64));
    let lhs = op.apply(&(&x1 * 2.0 - &x2 * 0.5));
    let rhs = op.apply(&x1) * 2.0 - op.apply(&x2) * 0.5;
    assert!(rel_err(&lhs, &rhs) < 1e-12);
}

#[test]
fn forward_rejects_indivisible_grid() {
    let m = ObservationModel::new(
        SpectralResponse::identity(1),
        BlurKernel::delta(),
        mbfuse::DownsamplePlan::new(3).unwrap(),
        vec![1.0],
        vec![],
    )
    .unwrap();
    assert!(apply_forward(&image(Grid::new(4, 4), Array2::zeros((1, 16))), &m).is_err());
}

#[test]
fn parseval_holds() {
    let mut r = rng(12);
    let grid = Grid::new(6, 10);
    let fft = Fft2::new(grid);
    let a: Array1<f64> = random_matrix(&mut r, 1, 60).row(0).to_owned();
    let b: Array1<f64> = random_matrix(&mut r, 1, 60).row(0).to_owned();
    let (fa, fb) = (fft.forward(a.view()), fft.forward(b.view()));
    let freq: f64 = fa.iter().zip(&fb).map(|(x, y)| (x * y.conj()).re).sum::<f64>() / 60.0;
    assert!((freq - a.dot(&b)).abs() < 1e-10 * a.dot(&a).sqrt() * b.dot(&b).sqrt());
}

#[test]
fn adjoint_identities_on_random_instances() {
    use rand::Rng;
    let mut r = rng(13);
    for _ in 0..100 {
        let grid = Grid::new(r.random_range(3..9), r.random_range(3..9));
        let size = [1, 3][r.random_range(0..2)];
        let k = random_kernel(&mut r, size);
        let op = CyclicConvolution::new(&k, grid).unwrap();
        let (x, y) = (random_matrix(&mut r, 2, grid.pixels()), random_matrix(&mut r, 2, grid.pixels()));
        let lhs = inner(&op.apply(&x), &y);
        assert!((lhs - inner(&x, &op.apply_adjoint(&y))).abs() < 1e-10 * frob(&x) * frob(&y));

        let q = GradientPair::from_stacked(random_matrix(&mut r, 4, grid.pixels()));
        let lhs = inner(grad(&x, grid).stacked(), q.stacked());
        assert!((lhs - inner(&x, &grad_adjoint(&q, grid))).abs() < 1e-10 * frob(&x) * frob(q.stacked()));
    }
}

#[test]
fn naive_oracle_agrees_with_fft_on_nonsquare_grid() {
    let mut r = rng(14);
    let grid = Grid::new(5, 7);
    let k = random_kernel(&mut r, 5);
    let x = random_matrix(&mut r, 1, 35);
    let fast = CyclicConvolution::new(&k, grid).unwrap().apply(&x);
    let slow = naive_conv(x.row(0).as_slice().unwrap(), grid, &k);
    for (a, b) in fast.iter().zip(&slow) {
        assert!((a - b).abs() < 1e-12);
    }
}
