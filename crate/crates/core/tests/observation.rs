mod common;

use common::*;
use mbfuse::image::{BlurKernel, DownsamplePlan, Grid, ObservationModel, SpectralResponse};
use mbfuse::observation::{
    add_noise, aggregate_noise, apply_forward, degrade_wald, gaussian_kernel, mtf_at_nyquist, noise_variances,
    xi_estimate, DegradationSpec, Snr,
};
use mbfuse::scene::{generate, SceneConfig};
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

#[test]
fn added_noise_hits_target_snr() {
    let mut r = rng(30);
    let grid = Grid::new(128, 128);
    let y = image(grid, positive_matrix(&mut r, 3, grid.pixels()));
    for db in [10.0, 25.0, 40.0] {
        let noisy = add_noise(&y, &[Snr::db(db).unwrap()], 5).unwrap();
        for b in 0..3 {
            let sig = y.data().row(b).mapv(|v| v * v).sum();
            let err = (&noisy.data().row(b) - &y.data().row(b)).mapv(|v| v * v).sum();
            let measured = 10.0 * (sig / err).log10();
            assert!((measured - db).abs() < 0.5, "{db} dB target, measured {measured}");
        }
    }
}

#[test]
fn infinite_snr_adds_nothing() {
    let mut r = rng(31);
    let y = image(Grid::new(4, 4), positive_matrix(&mut r, 2, 16));
    assert_eq!(noise_variances(&y, &[Snr::INFINITE]).unwrap(), vec![0.0, 0.0]);
    assert_eq!(add_noise(&y, &[Snr::INFINITE], 1).unwrap().data(), y.data());
}

#[test]
fn noise_is_seeded() {
    let mut r = rng(32);
    let y = image(Grid::new(8, 8), positive_matrix(&mut r, 2, 64));
    let s = [Snr::db(20.0).unwrap()];
    assert_eq!(add_noise(&y, &s, 9).unwrap().data(), add_noise(&y, &s, 9).unwrap().data());
    assert_ne!(add_noise(&y, &s, 9).unwrap().data(), add_noise(&y, &s, 10).unwrap().data());
}

#[test]
fn xi_is_the_diagonal_of_the_normal_blur_selection() {
    let mut r = rng(33);
    let grid = Grid::new(12, 12);
    let k = random_kernel(&mut r, 5);
    let bs = dense_b(&k, grid) * dense_s(grid, 4);
    let g = bs.transpose() * &bs;
    let xi = xi_estimate(&k);
    for i in 0..g.nrows() {
        assert!((g[(i, i)] - xi).abs() < 1e-14);
    }
    let uniform = BlurKernel::normalized(Array2::ones((3, 3))).unwrap();
    assert!((xi_estimate(&uniform) - 1.0 / 9.0).abs() < 1e-15);
    assert_eq!(xi_estimate(&BlurKernel::delta()), 1.0);
}

#[test]
fn mtf_of_designed_kernels() {
    assert_eq!(mtf_at_nyquist(&BlurKernel::delta(), 4).unwrap(), (1.0, 1.0));
    for ratio in [2usize, 4] {
        // Gaussian whose continuous MTF equals ¼ at 1/(2·ratio) cycles/pixel
        let sigma = ratio as f64 * (2.0 * 4f64.ln()).sqrt() / std::f64::consts::PI;
        let k = gaussian_kernel(4 * ratio + 1, sigma).unwrap();
        let (h, v) = mtf_at_nyquist(&k, ratio).unwrap();
        assert!((h - 0.25).abs() < 0.01 && (v - 0.25).abs() < 0.01, "{h} {v}");
    }
    // analytic Gaussian transfer function for a well-sampled kernel
    let sigma = 1.5;
    let k = gaussian_kernel(15, sigma).unwrap();
    let f: f64 = 1.0 / 6.0;
    let expected = (-2.0 * (std::f64::consts::PI * sigma * f).powi(2)).exp();
    let (h, _) = mtf_at_nyquist(&k, 3).unwrap();
    assert!((h - expected).abs() < 0.02);
}

#[test]
fn gaussian_kernel_properties() {
    let k = gaussian_kernel(7, 1.3).unwrap();
    let c = k.coefficients();
    assert!((c.sum() - 1.0).abs() < 1e-14);
    for a in 0..7 {
        for b in 0..7 {
            assert!((c[[a, b]] - c[[b, a]]).abs() < 1e-16);
            assert!((c[[a, b]] - c[[6 - a, b]]).abs() < 1e-16);
        }
    }
    assert!(c.iter().all(|v| *v <= c[[3, 3]]));
    assert!(gaussian_kernel(4, 1.0).is_err());
    assert!(gaussian_kernel(5, 0.0).is_err());
}

#[test]
fn aggregate_noise_reconstructs_lambda() {
    let mut r = rng(34);
    let resp = random_response(&mut r, 3, 6);
    let k = random_kernel(&mut r, 3);
    let sigma: Vec<f64> = (0..6).map(|i| 0.01 * (i + 1) as f64).collect();
    let m = ObservationModel::new(resp.clone(), k.clone(), DownsamplePlan::new(2).unwrap(), vec![0.1, 0.2, 0.3], sigma.clone())
        .unwrap();
    let agg = aggregate_noise(&m).unwrap();
    let rm = to_dense(resp.matrix());
    let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![0.1, 0.2, 0.3]))
        + &rm * DMatrix::from_diagonal(&DVector::from_vec(sigma)) * rm.transpose() * xi_estimate(&k);
    assert!(dense_rel_err(&to_dense(&agg.lambda), &expected) < 1e-14);
    let w = to_dense(&agg.inv_sqrt);
    let id = &w * &expected * &w;
    assert!((id - DMatrix::<f64>::identity(3, 3)).norm() < 1e-12);
    assert!(dense_rel_err(&to_dense(&agg.inverse()), &expected.try_inverse().unwrap()) < 1e-12);
}

#[test]
fn zero_mixture_noise_gives_diagonal_lambda() {
    let m = ObservationModel::new(
        SpectralResponse::identity(2),
        BlurKernel::delta(),
        DownsamplePlan::identity(),
        vec![4.0, 0.25],
        vec![],
    )
    .unwrap();
    let agg = aggregate_noise(&m).unwrap();
    assert_eq!(agg.lambda, ndarray::array![[4.0, 0.0], [0.0, 0.25]]);
    assert!((agg.inv_sqrt[[0, 0]] - 0.5).abs() < 1e-15 && (agg.inv_sqrt[[1, 1]] - 2.0).abs() < 1e-15);
}

#[test]
fn degradation_shapes_and_determinism() {
    let scene = generate(&SceneConfig::new(32, 32, 20, 3, 4)).unwrap();
    let spec = DegradationSpec::three_sensor(11);
    let a = degrade_wald(&scene.image, &spec).unwrap();
    let b = degrade_wald(&scene.image, &spec).unwrap();
    let shapes: Vec<(usize, usize, usize)> = a.iter().map(|p| (p.image.bands(), p.image.height(), p.image.width())).collect();
    assert_eq!(shapes, vec![(1, 32, 32), (4, 16, 16), (20, 8, 8)]);
    for (p, q) in a.iter().zip(&b) {
        assert_eq!(p.image.data(), q.image.data());
        assert_eq!(p.model, q.model);
    }
}

#[test]
fn noiseless_degradation_equals_forward_model() {
    let scene = generate(&SceneConfig::new(16, 16, 8, 2, 5)).unwrap();
    let mut spec = DegradationSpec::three_sensor(1);
    for o in &mut spec.outputs {
        o.snr_db = Snr::INFINITE;
    }
    for p in degrade_wald(&scene.image, &spec).unwrap() {
        let clean = apply_forward(&scene.image, &p.model).unwrap();
        assert_eq!(p.image.data(), clean.data());
        // recorded variance comes from the nominal SNR and stays positive
        assert!(p.model.noise.sensor_var.iter().all(|v| *v > 0.0));
    }
}

#[test]
fn snr_rejects_nan() {
    assert!(Snr::db(f64::NAN).is_err());
}
