//! Endmember extraction, simplex-constrained unmixing and the initial
//! abundance estimate fed to the fusion solver.

use ndarray::{Array1, Array2, ArrayView1, Axis, ShapeBuilder, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::image::{AbundanceMap, EndmemberMatrix, MultibandImage};
use crate::prox::{project_simplex, project_simplex_columns};

/// Interpolation used to bring coarse abundances to the target grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Bicubic,
}

fn default_tolerance() -> f64 {
    1e-10
}

fn default_max_iter() -> usize {
    5000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnmixConfig {
    pub endmembers: usize,
    /// Stop when the projected-gradient step at the iterate is shorter than this.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub interpolation: Interpolation,
}

impl UnmixConfig {
    pub fn new(endmembers: usize) -> Self {
        Self {
            endmembers,
            tolerance: default_tolerance(),
            max_iter: default_max_iter(),
            interpolation: Interpolation::Bicubic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.endmembers >= 1, InvalidArgument, "endmember count must be ≥ 1");
        ensure!(
            self.tolerance > 0.0,
            InvalidArgument,
            "unmixing tolerance must be positive"
        );
        ensure!(self.max_iter >= 1, InvalidArgument, "max_iter must be ≥ 1");
        Ok(())
    }
}

/// Picks `m` pixel spectra by successive projection: the largest-norm
/// pixel first, then repeatedly the pixel with the largest residual after
/// projecting out the span of those already chosen. Negative entries of the
/// chosen spectra are clipped to zero.
pub fn extract_endmembers(y: &MultibandImage, m: usize) -> Result<EndmemberMatrix> {
    Ok(extract_endmembers_indexed(y, m)?.0)
}

/// Like [`extract_endmembers`], also returning the chosen pixel indices.
pub fn extract_endmembers_indexed(y: &MultibandImage, m: usize) -> Result<(EndmemberMatrix, Vec<usize>)> {
    ensure!(m >= 1, InvalidArgument, "endmember count must be ≥ 1");
    ensure!(
        y.bands() >= m && y.pixels() >= m,
        Dimension,
        "cannot extract {m} endmembers from {} bands × {} pixels",
        y.bands(),
        y.pixels()
    );
    let mut resid = y.data().clone();
    let norms = |r: &Array2<f64>| -> Vec<f64> {
        r.axis_iter(Axis(1)).map(|c| c.dot(&c)).collect()
    };
    let first = norms(&resid);
    let scale = first.iter().cloned().fold(0.0, f64::max);
    ensure!(scale > 0.0, RankDeficient, "image has no nonzero pixel");
    let mut chosen = Vec::with_capacity(m);
    let mut energy = first;
    for step in 0..m {
        let (best, &val) = energy
            .iter()
            .enumerate()
            .fold((0, &f64::NEG_INFINITY), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
        if val <= 1e-24 * scale {
            return Err(Error::RankDeficient(format!(
                "pixel cloud spans only {step} dimension(s), {m} endmembers requested"
            )));
        }
        chosen.push(best);
        let q = resid.column(best).to_owned() / val.sqrt();
        let coef = q.dot(&resid);
        for (mut col, c) in resid.axis_iter_mut(Axis(1)).zip(coef.iter()) {
            col.scaled_add(-c, &q);
        }
        energy = norms(&resid);
    }
    let spectra = y.data().select(Axis(1), &chosen).mapv(|v| v.max(0.0));
    Ok((EndmemberMatrix::new(spectra)?, chosen))
}

/// Per-pixel solver for `min ‖y − E·a‖²` over the unit simplex, using
/// monotone FISTA with step `1/λ_max(EᵀE)`.
#[derive(Debug, Clone)]
pub struct SimplexLeastSquares {
    endmembers: Array2<f64>,
    gram: Array2<f64>,
    step: f64,
    tolerance: f64,
    max_iter: usize,
}

/// Solution for one pixel.
#[derive(Debug, Clone)]
pub struct PixelSolution {
    pub abundance: Array1<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl SimplexLeastSquares {
    pub fn new(e: &EndmemberMatrix, tolerance: f64, max_iter: usize) -> Self {
        let gram = e.matrix().t().dot(e.matrix());
        let lmax = power_iteration(&gram, 50, 1e-10);
        Self {
            endmembers: e.matrix().clone(),
            step: if lmax > 0.0 { 1.0 / lmax } else { 1.0 },
            gram,
            tolerance,
            max_iter,
        }
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// `½‖y − E·a‖² − ½‖y‖²`, the objective up to a constant.
    fn objective(&self, a: &Array1<f64>, ety: &Array1<f64>) -> f64 {
        0.5 * a.dot(&self.gram.dot(a)) - ety.dot(a)
    }

    fn pg_step(&self, a: &Array1<f64>, ety: &Array1<f64>) -> Array1<f64> {
        let g = self.gram.dot(a) - ety;
        project_simplex((a - &(g * self.step)).view())
    }

    pub fn solve(&self, y: ArrayView1<'_, f64>) -> PixelSolution {
        self.solve_traced(y, None)
    }

    /// Solves one pixel, optionally recording the objective of every iterate.
    pub fn solve_traced(&self, y: ArrayView1<'_, f64>, mut trace: Option<&mut Vec<f64>>) -> PixelSolution {
        let m = self.gram.nrows();
        if m == 1 {
            return PixelSolution {
                abundance: Array1::ones(1),
                iterations: 0,
                converged: true,
            };
        }
        let ety = self.endmembers.t().dot(&y);
        let mut x = Array1::from_elem(m, 1.0 / m as f64);
        let mut fx = self.objective(&x, &ety);
        let mut yk = x.clone();
        let mut t = 1.0f64;
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(fx);
        }
        for it in 1..=self.max_iter {
            let z = self.pg_step(&yk, &ety);
            let fz = self.objective(&z, &ety);
            let x_prev = x.clone();
            if fz <= fx {
                x = z.clone();
                fx = fz;
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            yk = &x + &((&z - &x) * (t / t_next)) + &((&x - &x_prev) * ((t - 1.0) / t_next));
            t = t_next;
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(fx);
            }
            let probe = self.pg_step(&x, &ety);
            let gap = (&probe - &x).dot(&(&probe - &x)).sqrt();
            if gap <= self.tolerance {
                return PixelSolution {
                    abundance: x,
                    iterations: it,
                    converged: true,
                };
            }
        }
        PixelSolution {
            abundance: x,
            iterations: self.max_iter,
            converged: false,
        }
    }
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
pub fn power_iteration(a: &Array2<f64>, iterations: usize, tol: f64) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let w = a.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = w.dot(&v);
        v = w / norm;
        if (next - lambda).abs() <= tol * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.max(a.dot(&v).dot(&v))
}

/// Abundances from [`unmix`], with a count of pixels that hit `max_iter`.
#[derive(Debug, Clone)]
pub struct UnmixResult {
    pub abundances: AbundanceMap,
    pub unconverged_pixels: usize,
}

/// Simplex-constrained least-squares unmixing of every pixel.
pub fn unmix(y: &MultibandImage, e: &EndmemberMatrix, cfg: &UnmixConfig) -> Result<UnmixResult> {
    cfg.validate()?;
    ensure!(
        y.bands() == e.bands(),
        Dimension,
        "image has {} bands, endmembers have {}",
        y.bands(),
        e.bands()
    );
    let solver = SimplexLeastSquares::new(e, cfg.tolerance, cfg.max_iter);
    let m = e.endmembers();
    let mut a = Array2::zeros((m, y.pixels()).f());
    let mut ok = Array1::from_elem(y.pixels(), true);
    Zip::from(a.axis_iter_mut(Axis(1)))
        .and(y.data().axis_iter(Axis(1)))
        .and(&mut ok)
        .par_for_each(|mut col, pix, ok| {
            let sol = solver.solve(pix);
            col.assign(&sol.abundance);
            *ok = sol.converged;
        });
    let unconverged_pixels = ok.iter().filter(|c| !**c).count();
    Ok(UnmixResult {
        abundances: AbundanceMap::new(y.grid(), a.as_standard_layout().into_owned())?,
        unconverged_pixels,
    })
}

fn keys_weights(t: f64) -> [f64; 4] {
    const A: f64 = -0.5;
    let w = |s: f64| {
        let s = s.abs();
        if s <= 1.0 {
            (A + 2.0) * s * s * s - (A + 3.0) * s * s + 1.0
        } else if s < 2.0 {
            A * s * s * s - 5.0 * A * s * s + 8.0 * A * s - 4.0 * A
        } else {
            0.0
        }
    };
    [w(1.0 + t), w(t), w(1.0 - t), w(2.0 - t)]
}

fn upscale_axis(src: &Array2<f64>, ratio: usize, axis: Axis) -> Array2<f64> {
    let n = src.len_of(axis);
    let mut shape = [src.nrows(), src.ncols()];
    shape[axis.index()] = n * ratio;
    let mut out = Array2::zeros(shape);
    for i in 0..n * ratio {
        let x = i as f64 / ratio as f64;
        let i0 = x.floor() as isize;
        let w = keys_weights(x - i0 as f64);
        let mut lane = out.index_axis_mut(axis, i);
        for (o, &wt) in (-1..=2).zip(&w) {
            if wt == 0.0 {
                continue;
            }
            let idx = (i0 + o).clamp(0, n as isize - 1) as usize;
            lane.scaled_add(wt, &src.index_axis(axis, idx));
        }
    }
    out
}

/// Bicubic (Keys, `a = −½`) upscaling of one `height × width` field by an
/// integer factor. Coarse sample `(i, j)` lands on fine pixel
/// `(i·ratio, j·ratio)`; samples beyond the border are replicated.
pub fn bicubic_upscale(field: &Array2<f64>, ratio: usize) -> Array2<f64> {
    if ratio == 1 {
        return field.clone();
    }
    let rows = upscale_axis(field, ratio, Axis(0));
    upscale_axis(&rows, ratio, Axis(1))
}

/// Initial abundances on the target grid: unmix the coarse image, upscale
/// every abundance band by `ratio`, then project each pixel onto the simplex.
pub fn init_abundances(
    y: &MultibandImage,
    e: &EndmemberMatrix,
    ratio: usize,
    cfg: &UnmixConfig,
) -> Result<AbundanceMap> {
    ensure!(ratio >= 1, InvalidArgument, "upscaling ratio must be ≥ 1");
    let coarse = unmix(y, e, cfg)?.abundances;
    if ratio == 1 {
        return Ok(coarse);
    }
    let cg = coarse.grid();
    let fine = cg.refine(ratio);
    let m = coarse.endmembers();
    let mut up = Array2::zeros((m, fine.pixels()));
    for b in 0..m {
        let field = coarse
            .data()
            .row(b)
            .to_owned()
            .into_shape_with_order((cg.height, cg.width))
            .expect("row is a full band");
        let big = bicubic_upscale(&field, ratio);
        up.row_mut(b)
            .assign(&big.into_shape_with_order(fine.pixels()).expect("fine band"));
    }
    AbundanceMap::new(fine, project_simplex_columns(&up))
}
