mod common;

use common::*;
use mbfuse::prox::{project_simplex, project_simplex_columns, prox_l21, ProxThreshold};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn simplex_projection_matches_bisection_oracle() {
    let mut r = rng(20);
    for _ in 0..1000 {
        let m = r.random_range(1..=10);
        let v: Vec<f64> = (0..m).map(|_| r.random_range(-3.0..3.0)).collect();
        let p = project_simplex(Array1::from(v.clone()).view());
        let o = bisection_projection(&v);
        for (a, b) in p.iter().zip(&o) {
            assert!((a - b).abs() < 1e-10, "{v:?}: {p} vs {o:?}");
        }
    }
}

#[test]
fn l21_shrinkage_identity_on_random_columns() {
    let mut r = rng(21);
    let z = random_matrix(&mut r, 6, 1000) * 2.0;
    let tau = ProxThreshold::new(0.7).unwrap();
    let v = prox_l21(&z, tau);
    for (zc, vc) in z.columns().into_iter().zip(v.columns()) {
        let nz = zc.dot(&zc).sqrt();
        let nv = vc.dot(&vc).sqrt();
        assert!((nv - (nz - 0.7).max(0.0)).abs() < 1e-12);
        if nv > 0.0 {
            // same direction
            assert!((zc.dot(&vc) - nz * nv).abs() < 1e-12 * nz * nv.max(1.0));
        }
    }
}

#[test]
fn l21_matches_one_dimensional_line_search() {
    // minimize τ‖x‖ + ½‖x − z‖² along the ray x = s·z/‖z‖, s ≥ 0
    let z = [3.0, 4.0];
    let tau = 1.0;
    // bisection on the derivative τ + (s − 5) of τ·s + ½(s − 5)²
    let df = |s: f64| tau + (s - 5.0);
    let (mut lo, mut hi) = (0.0, 5.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if df(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let s = 0.5 * (lo + hi);
    let v = prox_l21(&Array2::from_shape_vec((2, 1), z.to_vec()).unwrap(), ProxThreshold::new(tau).unwrap());
    assert!((v[[0, 0]] - s * 0.6).abs() < 1e-8 && (v[[1, 0]] - s * 0.8).abs() < 1e-8, "{v} {s}");
}

#[test]
fn column_projection_is_idempotent_and_fixes_feasible() {
    let mut r = rng(22);
    let w = random_matrix(&mut r, 5, 200) * 3.0;
    let p = project_simplex_columns(&w);
    assert!(rel_err(&project_simplex_columns(&p), &p) < 1e-15);
    let feasible = random_simplex(&mut r, 4, 50);
    assert!(rel_err(&project_simplex_columns(&feasible), &feasible) < 1e-15);
}

fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, 1..12)
}

proptest! {
    #[test]
    fn projection_is_feasible(v in vec_strategy()) {
        let p = project_simplex(Array1::from(v).view());
        prop_assert!(p.iter().all(|x| *x >= 0.0));
        prop_assert!((p.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_is_optimal(v in vec_strategy(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let va = Array1::from(v.clone());
        let p = project_simplex(va.view());
        let d = (&va - &p).mapv(|x| x * x).sum();
        for _ in 0..1000 {
            let a = random_simplex(&mut r, v.len(), 1).column(0).to_owned();
            prop_assert!(d <= (&va - &a).mapv(|x| x * x).sum() + 1e-12);
        }
    }

    #[test]
    fn projection_commutes_with_permutation(v in vec_strategy(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut perm: Vec<usize> = (0..v.len()).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let pv: Vec<f64> = perm.iter().map(|&i| v[i]).collect();
        let a = project_simplex(Array1::from(v).view());
        let b = project_simplex(Array1::from(pv).view());
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((b[k] - a[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn l21_is_nonexpansive(seed in any::<u64>(), tau in 0.0f64..2.0) {
        let mut r = rng(seed);
        let (z1, z2) = (random_matrix(&mut r, 4, 30), random_matrix(&mut r, 4, 30));
        let t = ProxThreshold::new(tau).unwrap();
        prop_assert!(frob(&(prox_l21(&z1, t) - prox_l21(&z2, t))) <= frob(&(&z1 - &z2)) + 1e-12);
    }
}
