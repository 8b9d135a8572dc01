//! ADMM solver for the regularized fusion problem
//!
//! ```text
//! min_A  ½ Σ_k ‖Λ_k^{-1/2} (Y_k − R_k·E·A·B_k·S_k)‖²_F + α ‖∇A‖₂,₁
//! s.t.   A ≥ 0,  1ᵀA = 1ᵀ
//! ```
//!
//! The problem is split with `U_k = A·B_k`, `V = ∇A` and `W = A`; each
//! iteration solves for `A` with one circulant (FFT) solve, updates every
//! `U_k` in closed form (an `M × M` solve on the sampled pixels, a copy
//! elsewhere), shrinks `V` column-wise, projects `W` onto the simplex and
//! finally updates the scaled multipliers `F_k`, `G`, `H`.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::fisher::target_grid;
use crate::image::{
    mix, AbundanceMap, ConstraintViolation, EndmemberMatrix, Grid, MultibandImage, ObservationModel,
};
use crate::observation::{aggregate_noise, ForwardOperator};
use crate::prox::{project_simplex_columns, prox_l21_inplace, ProxThreshold};
use crate::spectral::{grad, grad_adjoint, CirculantSystem, Fft2, GradientPair};

fn default_alpha() -> f64 {
    20.0
}
fn default_mu() -> f64 {
    1.5e3
}
fn default_max_iter() -> usize {
    200
}
fn default_rel_tol() -> f64 {
    1e-6
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// TV weight `α ≥ 0`.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Penalty `μ > 0`.
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Stop once all three relative primal residuals fall below this; 0
    /// runs exactly `max_iter` iterations.
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    /// When false the simplex projection is replaced by the identity.
    #[serde(default = "yes")]
    pub constraints_enabled: bool,
    /// Return the (exactly feasible) `W` iterate instead of `A`.
    #[serde(default)]
    pub return_feasible: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            mu: default_mu(),
            max_iter: default_max_iter(),
            rel_tol: default_rel_tol(),
            constraints_enabled: true,
            return_feasible: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.alpha >= 0.0 && self.alpha.is_finite(),
            InvalidArgument,
            "alpha must be finite and ≥ 0"
        );
        ensure!(
            self.mu > 0.0 && self.mu.is_finite(),
            InvalidArgument,
            "mu must be finite and > 0"
        );
        ensure!(self.max_iter >= 1, InvalidArgument, "max_iter must be ≥ 1");
        ensure!(
            self.rel_tol >= 0.0,
            InvalidArgument,
            "rel_tol must be ≥ 0"
        );
        Ok(())
    }
}

/// Iteration-invariant quantities for one observation.
#[derive(Debug, Clone)]
pub struct ImageFactors {
    forward: ForwardOperator,
    /// `C_k = (Eᵀ·R_kᵀ·Λ_k⁻¹·R_k·E + μ·I_M)⁻¹`
    gain: Array2<f64>,
    /// `C_k·Eᵀ·R_kᵀ·Λ_k⁻¹·Y_k`, one column per sample.
    data_term: Array2<f64>,
    /// `Λ_k^{-1/2}·R_k·E`
    whitened_re: Array2<f64>,
    /// `Λ_k^{-1/2}·Y_k`
    whitened_y: Array2<f64>,
}

impl ImageFactors {
    pub fn gain(&self) -> &Array2<f64> {
        &self.gain
    }

    pub fn samples(&self) -> &[usize] {
        self.forward.samples()
    }
}

/// Everything [`AdmmState`] needs that does not change across iterations.
#[derive(Debug, Clone)]
pub struct Precomputed {
    grid: Grid,
    mu: f64,
    endmembers: usize,
    images: Vec<ImageFactors>,
    system: CirculantSystem,
}

impl Precomputed {
    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn images(&self) -> &[ImageFactors] {
        &self.images
    }

    pub fn system(&self) -> &CirculantSystem {
        &self.system
    }

    /// Data-fit term `½ Σ_k ‖Λ_k^{-1/2}(Y_k − R_k·E·X·B_k·S_k)‖²` at abundances `x`.
    pub fn data_fit(&self, x: &Array2<f64>) -> f64 {
        self.images
            .iter()
            .map(|im| {
                let sampled = im.forward.blur_and_sample(x);
                let r = im.whitened_re.dot(&sampled) - &im.whitened_y;
                0.5 * r.iter().map(|v| v * v).sum::<f64>()
            })
            .sum()
    }

    /// Full objective `data_fit(x) + α‖∇x‖₂,₁`.
    pub fn objective(&self, x: &Array2<f64>, alpha: f64) -> f64 {
        let mut f = self.data_fit(x);
        if alpha > 0.0 {
            f += alpha * l21_norm(grad(x, self.grid).stacked());
        }
        f
    }
}

fn l21_norm(z: &Array2<f64>) -> f64 {
    z.axis_iter(Axis(1)).map(|c| c.dot(&c).sqrt()).sum()
}

fn to_dense(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Builds the per-image gains and data terms and the circulant system.
pub fn precompute(
    observations: &[MultibandImage],
    models: &[ObservationModel],
    e: &EndmemberMatrix,
    mu: f64,
) -> Result<Precomputed> {
    ensure!(mu > 0.0 && mu.is_finite(), InvalidArgument, "mu must be > 0");
    let grid = target_grid(observations, models)?;
    let m = e.endmembers();
    let fft = Arc::new(Fft2::new(grid));
    let mut images = Vec::with_capacity(models.len());
    for (k, (y, model)) in observations.iter().zip(models).enumerate() {
        ensure!(
            model.response.input_bands() == e.bands(),
            Dimension,
            "image {k}: response expects {} bands, endmembers have {}",
            model.response.input_bands(),
            e.bands()
        );
        let noise = aggregate_noise(model)?;
        let re = model.response.matrix().dot(e.matrix());
        let projector = re.t().dot(&noise.inverse());
        let mut system = to_dense(&projector.dot(&re));
        system = (&system + system.transpose()) * 0.5;
        for i in 0..m {
            system[(i, i)] += mu;
        }
        let chol = Cholesky::new(system)
            .ok_or_else(|| Error::Singular(format!("image {k}: U-update system is not SPD")))?;
        let inv = chol.inverse();
        let gain = Array2::from_shape_fn((m, m), |(i, j)| inv[(i, j)]);
        let data_term = gain.dot(&projector.dot(y.data()));
        images.push(ImageFactors {
            forward: ForwardOperator::new(model, grid)?,
            gain,
            data_term,
            whitened_re: noise.inv_sqrt.dot(&re),
            whitened_y: noise.inv_sqrt.dot(y.data()),
        });
    }
    let kernels: Vec<_> = models.iter().map(|m| m.blur.clone()).collect();
    let system = CirculantSystem::with_plan(&kernels, fft)?;
    Ok(Precomputed {
        grid,
        mu,
        endmembers: m,
        images,
        system,
    })
}

/// Split variables, scaled multipliers and per-iteration caches.
#[derive(Debug, Clone)]
pub struct AdmmState {
    a: Array2<f64>,
    u: Vec<Array2<f64>>,
    v: GradientPair,
    w: Array2<f64>,
    f: Vec<Array2<f64>>,
    g: GradientPair,
    h: Array2<f64>,
    iter: usize,
    // A·B_k and ∇A for the current A
    ab: Vec<Array2<f64>>,
    grad_a: GradientPair,
}

/// Primal residual norms after one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub u_abs: f64,
    pub v_abs: f64,
    pub w_abs: f64,
    pub u_rel: f64,
    pub v_rel: f64,
    pub w_rel: f64,
    pub dual: f64,
}

impl Residuals {
    pub fn max_rel(&self) -> f64 {
        self.u_rel.max(self.v_rel).max(self.w_rel)
    }

    pub fn max_abs(&self) -> f64 {
        self.u_abs.max(self.v_abs).max(self.w_abs)
    }
}

fn sq(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

fn relative(num2: f64, lhs2: f64, rhs2: f64, numel: usize) -> f64 {
    let floor = 1e-8 * (numel as f64).sqrt();
    num2.sqrt() / lhs2.sqrt().max(rhs2.sqrt()).max(floor)
}

impl AdmmState {
    /// Starts from `A⁽⁰⁾` with every split consistent: `U_k = A⁽⁰⁾·B_k`,
    /// `V = ∇A⁽⁰⁾`, `W = A⁽⁰⁾` and zero multipliers.
    pub fn new(pre: &Precomputed, a0: &Array2<f64>) -> Self {
        let m = a0.nrows();
        let n = pre.grid.pixels();
        let ab: Vec<_> = pre.images.iter().map(|im| im.forward.blur().apply(a0)).collect();
        let grad_a = grad(a0, pre.grid);
        Self {
            a: a0.clone(),
            u: ab.clone(),
            v: grad_a.clone(),
            w: a0.clone(),
            f: vec![Array2::zeros((m, n)); pre.images.len()],
            g: GradientPair::zeros(m, n),
            h: Array2::zeros((m, n)),
            iter: 0,
            ab,
            grad_a,
        }
    }

    /// Builds a state from explicit blocks (all `M × N`, `V`/`G` stacked `2M × N`).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        pre: &Precomputed,
        a: Array2<f64>,
        u: Vec<Array2<f64>>,
        v: Array2<f64>,
        w: Array2<f64>,
        f: Vec<Array2<f64>>,
        g: Array2<f64>,
        h: Array2<f64>,
    ) -> Result<Self> {
        let dim = (pre.endmembers, pre.grid.pixels());
        let k = pre.images.len();
        ensure!(
            a.dim() == dim && w.dim() == dim && h.dim() == dim,
            Dimension,
            "A, W and H must be {}×{}",
            dim.0,
            dim.1
        );
        ensure!(
            u.len() == k && f.len() == k && u.iter().chain(&f).all(|x| x.dim() == dim),
            Dimension,
            "need {k} U and F blocks of size {}×{}",
            dim.0,
            dim.1
        );
        ensure!(
            v.dim() == (2 * dim.0, dim.1) && g.dim() == v.dim(),
            Dimension,
            "V and G must be {}×{}",
            2 * dim.0,
            dim.1
        );
        let mut s = Self {
            ab: Vec::new(),
            grad_a: GradientPair::zeros(dim.0, dim.1),
            a,
            u,
            v: GradientPair::from_stacked(v),
            w,
            f,
            g: GradientPair::from_stacked(g),
            h,
            iter: 0,
        };
        s.refresh(pre);
        Ok(s)
    }

    fn refresh(&mut self, pre: &Precomputed) {
        self.ab = pre.images.iter().map(|im| im.forward.blur().apply(&self.a)).collect();
        self.grad_a = grad(&self.a, pre.grid);
    }

    pub fn a(&self) -> &Array2<f64> {
        &self.a
    }
    pub fn u(&self) -> &[Array2<f64>] {
        &self.u
    }
    pub fn v(&self) -> &Array2<f64> {
        self.v.stacked()
    }
    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }
    pub fn f(&self) -> &[Array2<f64>] {
        &self.f
    }
    pub fn g(&self) -> &Array2<f64> {
        self.g.stacked()
    }
    pub fn h(&self) -> &Array2<f64> {
        &self.h
    }
    pub fn iteration(&self) -> usize {
        self.iter
    }

    /// `A ← [Σ_k (U_k+F_k)·B_kᵀ + Q₁·D_hᵀ + Q₂·D_vᵀ + W + H] · (Σ_k B_k·B_kᵀ + D_h·D_hᵀ + D_v·D_vᵀ + I)⁻¹`
    /// with `[Q₁; Q₂] = V + G`.
    pub fn update_a(&mut self, pre: &Precomputed) {
        let mut rhs = &self.w + &self.h;
        for ((im, u), f) in pre.images.iter().zip(&self.u).zip(&self.f) {
            rhs += &im.forward.blur().apply_adjoint(&(u + f));
        }
        let q = GradientPair::from_stacked(self.v.stacked() + self.g.stacked());
        rhs += &grad_adjoint(&q, pre.grid);
        self.a = pre.system.solve(&rhs);
        self.refresh(pre);
    }

    /// Closed-form `U_k` update: on sampled pixels
    /// `U_k = C_k·[Eᵀ·R_kᵀ·Λ_k⁻¹·Y_k + μ·(A·B_k − F_k)]`, elsewhere
    /// `U_k = A·B_k − F_k`.
    pub fn update_u(&mut self, pre: &Precomputed) {
        let mu = pre.mu;
        for (k, im) in pre.images.iter().enumerate() {
            let mut u = &self.ab[k] - &self.f[k];
            let samples = im.forward.samples();
            let on = u.select(Axis(1), samples);
            let upd = &im.data_term + &(im.gain.dot(&on) * mu);
            for (q, &p) in samples.iter().enumerate() {
                u.column_mut(p).assign(&upd.column(q));
            }
            self.u[k] = u;
        }
    }

    /// `V ← prox_{(α/μ)‖·‖₂,₁}(∇A − G)`.
    pub fn update_v(&mut self, alpha: f64, mu: f64) -> Result<()> {
        let tau = ProxThreshold::new(alpha / mu)?;
        let mut z = self.grad_a.stacked() - self.g.stacked();
        prox_l21_inplace(&mut z, tau);
        self.v = GradientPair::from_stacked(z);
        Ok(())
    }

    /// `W ← Π_S(A − H)`, or `A − H` with constraints disabled.
    pub fn update_w(&mut self, constraints_enabled: bool) {
        let target = &self.a - &self.h;
        self.w = if constraints_enabled {
            project_simplex_columns(&target)
        } else {
            target
        };
    }

    /// `F_k −= A·B_k − U_k`, `G −= ∇A − V`, `H −= A − W`, returning the
    /// primal residuals that drove the update.
    pub fn update_multipliers(&mut self) -> Residuals {
        let (mut u_num, mut u_l, mut u_r) = (0.0, 0.0, 0.0);
        for k in 0..self.f.len() {
            let r = &self.ab[k] - &self.u[k];
            u_num += sq(&r);
            u_l += sq(&self.ab[k]);
            u_r += sq(&self.u[k]);
            self.f[k] -= &r;
        }
        let rv = self.grad_a.stacked() - self.v.stacked();
        *self.g.stacked_mut() -= &rv;
        let rw = &self.a - &self.w;
        self.h -= &rw;
        self.iter += 1;
        let (v_num, w_num) = (sq(&rv), sq(&rw));
        let numel = self.a.len();
        Residuals {
            u_abs: u_num.sqrt(),
            v_abs: v_num.sqrt(),
            w_abs: w_num.sqrt(),
            u_rel: relative(u_num, u_l, u_r, numel * self.f.len().max(1)),
            v_rel: relative(v_num, sq(self.grad_a.stacked()), sq(self.v.stacked()), 2 * numel),
            w_rel: relative(w_num, sq(&self.a), sq(&self.w), numel),
            dual: 0.0,
        }
    }

    /// One full iteration in the order A, U, V, W, multipliers.
    pub fn step(&mut self, pre: &Precomputed, cfg: &SolverConfig) -> Result<Residuals> {
        let (u_prev, v_prev, w_prev) = (self.u.clone(), self.v.stacked().clone(), self.w.clone());
        self.update_a(pre);
        self.update_u(pre);
        self.update_v(cfg.alpha, cfg.mu)?;
        self.update_w(cfg.constraints_enabled);
        let mut r = self.update_multipliers();
        let du: f64 = self.u.iter().zip(&u_prev).map(|(a, b)| sq(&(a - b))).sum();
        let dv = sq(&(self.v.stacked() - &v_prev));
        let dw = sq(&(&self.w - &w_prev));
        r.dual = cfg.mu * (du + dv + dw).sqrt();
        Ok(r)
    }
}

/// One row of the per-iteration log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub residuals: Residuals,
    /// Objective evaluated at `A⁽ⁿ⁾`.
    pub objective_a: f64,
    /// Objective evaluated at `W⁽ⁿ⁾`.
    pub objective_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub history: Vec<IterationRecord>,
    pub iterations: usize,
    pub converged: bool,
    /// Simplex violation of the returned abundances.
    pub violation: ConstraintViolation,
}

impl SolveDiagnostics {
    pub fn last(&self) -> Option<&IterationRecord> {
        self.history.last()
    }

    /// CSV rows `iteration,primal_u,primal_v,primal_w,dual,objective_a,objective_w`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,primal_u,primal_v,primal_w,dual,objective_a,objective_w\n");
        for r in &self.history {
            s.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                r.iteration,
                r.residuals.u_rel,
                r.residuals.v_rel,
                r.residuals.w_rel,
                r.residuals.dual,
                r.objective_a,
                r.objective_w
            ));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct FusionResult {
    pub abundances: AbundanceMap,
    /// `E·A` for the returned abundances.
    pub fused: MultibandImage,
    pub diagnostics: SolveDiagnostics,
}

const DIVERGENCE_FACTOR: f64 = 1e6;

/// Runs the ADMM iterations from `a_init` until every relative primal
/// residual is below `cfg.rel_tol` or `cfg.max_iter` is reached.
pub fn solve(
    observations: &[MultibandImage],
    models: &[ObservationModel],
    e: &EndmemberMatrix,
    a_init: &AbundanceMap,
    cfg: &SolverConfig,
) -> Result<FusionResult> {
    cfg.validate()?;
    let pre = precompute(observations, models, e, cfg.mu)?;
    solve_precomputed(&pre, e, a_init, cfg)
}

pub fn solve_precomputed(
    pre: &Precomputed,
    e: &EndmemberMatrix,
    a_init: &AbundanceMap,
    cfg: &SolverConfig,
) -> Result<FusionResult> {
    cfg.validate()?;
    ensure!(
        a_init.grid() == pre.grid && a_init.endmembers() == e.endmembers(),
        Dimension,
        "initial abundances are {}×{} on {}, expected {}×{} on {}",
        a_init.endmembers(),
        a_init.grid().pixels(),
        a_init.grid(),
        e.endmembers(),
        pre.grid.pixels(),
        pre.grid
    );
    if cfg.constraints_enabled {
        let v = a_init.violation();
        ensure!(
            v.max() <= 1e-6,
            InvalidArgument,
            "initial abundances violate the simplex constraints by {:e}",
            v.max()
        );
    }
    let mut state = AdmmState::new(pre, a_init.data());
    let mut history = Vec::with_capacity(cfg.max_iter);
    let mut reference = 0.0;
    let mut converged = false;
    for n in 1..=cfg.max_iter {
        let r = state.step(pre, cfg)?;
        let record = IterationRecord {
            iteration: n,
            residuals: r,
            objective_a: pre.objective(state.a(), cfg.alpha),
            objective_w: pre.objective(state.w(), cfg.alpha),
        };
        history.push(record);
        if n == 1 {
            reference = r.max_abs().max(sq(state.a()).sqrt());
        }
        let finite = state.a().iter().all(|v| v.is_finite()) && r.max_abs().is_finite();
        if !finite || r.max_abs() > DIVERGENCE_FACTOR * reference {
            let violation = AbundanceMap::new(pre.grid, state.a().mapv(|v| if v.is_finite() { v } else { 0.0 }))
                .map(|a| a.violation())
                .unwrap_or(ConstraintViolation {
                    max_negative: f64::INFINITY,
                    max_sum_deviation: f64::INFINITY,
                });
            return Err(Error::Diverged {
                iteration: n,
                reason: if finite {
                    format!("primal residual {:e} exceeds {DIVERGENCE_FACTOR:e} × {:e}", r.max_abs(), reference)
                } else {
                    "non-finite iterate".into()
                },
                diagnostics: Box::new(SolveDiagnostics {
                    history,
                    iterations: n,
                    converged: false,
                    violation,
                }),
            });
        }
        if cfg.rel_tol > 0.0 && r.max_rel() < cfg.rel_tol {
            converged = true;
            break;
        }
    }
    let out = if cfg.return_feasible { state.w } else { state.a };
    let abundances = AbundanceMap::new(pre.grid, out)?;
    let fused = mix(e, &abundances)?;
    Ok(FusionResult {
        diagnostics: SolveDiagnostics {
            iterations: history.len(),
            history,
            converged,
            violation: abundances.violation(),
        },
        abundances,
        fused,
    })
}
