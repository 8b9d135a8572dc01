//! Synthetic ground-truth scenes: smooth random endmember spectra mixed by
//! spatially structured abundances.
//!
//! Spectra are softplus-transformed random low-order polynomials in
//! normalized wavelength, rescaled into a reflectance-like range. Abundance
//! fields come from periodic Gaussian blobs, each carrying a Dirichlet(1)
//! weight over the endmembers, pushed through a tempered softmax so that
//! small `softness` values give nearly pure regions with sharp borders.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::image::{mix, AbundanceMap, EndmemberMatrix, Grid, MultibandImage};
use crate::observation::band_wavelength;

fn default_degree() -> usize {
    3
}
fn default_blobs() -> usize {
    6
}
fn default_radius() -> f64 {
    0.12
}
fn default_softness() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub endmembers: usize,
    /// Polynomial degree of the spectra (smoothness).
    #[serde(default = "default_degree")]
    pub degree: usize,
    /// Blobs per endmember.
    #[serde(default = "default_blobs")]
    pub blobs: usize,
    /// Blob standard deviation as a fraction of the shorter image side.
    #[serde(default = "default_radius")]
    pub blob_radius: f64,
    /// Softmax temperature; smaller values give purer regions.
    #[serde(default = "default_softness")]
    pub softness: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SceneConfig {
    pub fn new(height: usize, width: usize, bands: usize, endmembers: usize, seed: u64) -> Self {
        Self {
            height,
            width,
            bands,
            endmembers,
            degree: default_degree(),
            blobs: default_blobs(),
            blob_radius: default_radius(),
            softness: default_softness(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.height >= 1 && self.width >= 1,
            InvalidArgument,
            "scene grid must be non-empty"
        );
        ensure!(self.bands >= 1, InvalidArgument, "scene needs at least one band");
        ensure!(
            self.endmembers >= 1,
            InvalidArgument,
            "scene needs at least one endmember"
        );
        ensure!(self.blobs >= 1, InvalidArgument, "scene needs at least one blob per endmember");
        ensure!(
            self.blob_radius > 0.0 && self.softness > 0.0,
            InvalidArgument,
            "blob_radius and softness must be positive"
        );
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub endmembers: EndmemberMatrix,
    pub abundances: AbundanceMap,
    /// `E·A`
    pub image: MultibandImage,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `bands × m` spectra with values in `[0.05, 0.95]`.
pub fn random_spectra(bands: usize, m: usize, degree: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mut e = Array2::zeros((bands, m));
    for j in 0..m {
        let coef: Vec<f64> = (0..=degree)
            .map(|d| {
                let z: f64 = StandardNormal.sample(rng);
                2.0 * z / (d as f64 + 1.0)
            })
            .collect();
        let raw: Array1<f64> = (0..bands)
            .map(|l| {
                // centered wavelength keeps the polynomial well-conditioned
                let t = 2.0 * band_wavelength(l, bands) - 1.0;
                softplus(coef.iter().rev().fold(0.0, |acc, c| acc * t + c))
            })
            .collect();
        let (lo, hi) = raw
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let top = rng.random_range(0.5..0.95);
        let bottom = rng.random_range(0.05..0.3);
        let span = (hi - lo).max(1e-12);
        for l in 0..bands {
            e[[l, j]] = if hi > lo {
                bottom + (top - bottom) * (raw[l] - lo) / span
            } else {
                top
            };
        }
    }
    e
}

/// Abundance fields on `grid`, one simplex column per pixel.
pub fn random_abundances(grid: Grid, cfg: &SceneConfig, rng: &mut impl Rng) -> Array2<f64> {
    let m = cfg.endmembers;
    let sigma = cfg.blob_radius * grid.height.min(grid.width) as f64;
    let total = cfg.blobs * m;
    let mut centers = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    for b in 0..total {
        centers.push((
            rng.random_range(0.0..grid.height as f64),
            rng.random_range(0.0..grid.width as f64),
        ));
        let mut w: Vec<f64> = (0..m).map(|_| Exp1.sample(rng)).collect();
        // every endmember owns some blobs outright
        w[b % m] += 2.0;
        let s: f64 = w.iter().sum();
        weights.push(w.into_iter().map(|x| x / s).collect::<Vec<_>>());
    }
    let wrap = |d: f64, n: usize| {
        let n = n as f64;
        let d = d.rem_euclid(n);
        d.min(n - d)
    };
    let mut a = Array2::zeros((m, grid.pixels()));
    let mut field = vec![0.0; m];
    for i in 0..grid.height {
        for j in 0..grid.width {
            field.iter_mut().for_each(|f| *f = 0.0);
            for (c, w) in centers.iter().zip(&weights) {
                let di = wrap(i as f64 - c.0, grid.height);
                let dj = wrap(j as f64 - c.1, grid.width);
                let g = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
                for (f, wk) in field.iter_mut().zip(w) {
                    *f += g * wk;
                }
            }
            let top = field.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = field.iter().map(|f| ((f - top) / cfg.softness).exp()).collect();
            let s: f64 = ex.iter().sum();
            let p = i * grid.width + j;
            for k in 0..m {
                a[[k, p]] = ex[k] / s;
            }
        }
    }
    a
}

/// Draws a complete scene from `cfg`.
pub fn generate(cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let grid = Grid::new(cfg.height, cfg.width);
    let e = EndmemberMatrix::new(random_spectra(cfg.bands, cfg.endmembers, cfg.degree, &mut rng))?;
    let a = AbundanceMap::new(grid, random_abundances(grid, cfg, &mut rng))?;
    let image = mix(&e, &a)?;
    Ok(Scene {
        endmembers: e,
        abundances: a,
        image,
    })
}
