//! Proximal maps used by the ADMM splitting.

use ndarray::{Array1, Array2, ArrayView1, Axis, ShapeBuilder, Zip};

use crate::error::{ensure, Result};

/// Nonnegative shrinkage threshold (`α/μ` in the TV step).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxThreshold(f64);

impl ProxThreshold {
    pub fn new(tau: f64) -> Result<Self> {
        ensure!(
            tau >= 0.0 && tau.is_finite(),
            InvalidArgument,
            "threshold must be finite and ≥ 0, got {tau}"
        );
        Ok(Self(tau))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// Column-wise vector soft-thresholding, the prox of `tau·‖·‖₂,₁`:
/// each column `z` becomes `max(‖z‖ − tau, 0)/‖z‖ · z` (zero when `z = 0`).
pub fn prox_l21(z: &Array2<f64>, tau: ProxThreshold) -> Array2<f64> {
    let mut out = z.clone();
    prox_l21_inplace(&mut out, tau);
    out
}

pub fn prox_l21_inplace(z: &mut Array2<f64>, tau: ProxThreshold) {
    let tau = tau.value();
    if tau == 0.0 {
        return;
    }
    Zip::from(z.columns_mut()).par_for_each(|mut col| {
        let norm = col.dot(&col).sqrt();
        if norm <= tau {
            col.fill(0.0);
        } else {
            col *= (norm - tau) / norm;
        }
    });
}

/// Euclidean projection onto the unit simplex `{a ≥ 0, 1ᵀa = 1}`.
///
/// Sort-based threshold search; entries at or below the threshold map to
/// zero and the survivors are rescaled so the result sums to one.
pub fn project_simplex(v: ArrayView1<'_, f64>) -> Array1<f64> {
    let mut out = Array1::zeros(v.len());
    project_simplex_into(v, out.view_mut().into_slice().expect("contiguous"));
    out
}

fn project_simplex_into(v: ArrayView1<'_, f64>, out: &mut [f64]) {
    let n = v.len();
    debug_assert_eq!(out.len(), n);
    if n == 0 {
        return;
    }
    let mut u: Vec<f64> = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(v.iter()) {
        *o = if x > tau { x - tau } else { 0.0 };
        sum += *o;
    }
    if sum > 0.0 {
        if sum != 1.0 {
            out.iter_mut().for_each(|o| *o /= sum);
        }
    } else {
        // only reachable through rounding when all entries tie at the top
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ties: Vec<usize> = (0..n).filter(|&i| v[i] == max).collect();
        for &i in &ties {
            out[i] = 1.0 / ties.len() as f64;
        }
    }
}

/// Projects every column of an `M × N` matrix onto the simplex.
pub fn project_simplex_columns(w: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(w.raw_dim().f());
    Zip::from(out.axis_iter_mut(Axis(1)))
        .and(w.axis_iter(Axis(1)))
        .par_for_each(|mut o, col| {
            let p = project_simplex(col);
            o.assign(&p);
        });
    out.as_standard_layout().into_owned()
}
