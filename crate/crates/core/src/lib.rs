//! Simultaneous fusion of an arbitrary number of co-registered multiband
//! images (panchromatic, multispectral, hyperspectral) into a single image
//! with the spatial resolution of the sharpest input and the spectral
//! resolution of the richest one.
//!
//! The target image is modelled as `X = E·A`, a linear mixture of a few
//! endmember spectra `E` weighted by per-pixel abundances `A`. Each
//! observation is `Y_k = R_k·X·B_k·S_k + noise` (spectral response, cyclic
//! blur, decimation). The abundances are estimated by an ADMM solver for a
//! whitened least-squares fit with an isotropic vector total-variation
//! penalty and per-pixel simplex constraints.
//!
//! Module map:
//!
//! - [`image`]: shared value types (images, sensor models, endmembers, abundances)
//! - [`spectral`]: FFT-based cyclic convolution, periodic gradients, circulant solves
//! - [`observation`]: forward model, Gaussian blur design, noise, Wald degradation
//! - [`unmixing`]: endmember extraction, simplex-constrained unmixing, initialization
//! - [`prox`]: ℓ2,1 shrinkage and simplex projection
//! - [`fisher`]: dense Fisher information, CRLB and closed-form ML (small problems)
//! - [`admm`]: the fusion solver
//! - [`metrics`]: ERGAS, SAM, Q-avg (UIQI) and per-pixel NRMSE
//! - [`io`], [`scene`], [`cli`]: raster files, synthetic scenes, command drivers

pub mod admm;
pub mod cli;
pub mod error;
pub mod fisher;
pub mod image;
pub mod io;
pub mod metrics;
pub mod observation;
pub mod prox;
pub mod scene;
pub mod spectral;
pub mod unmixing;

pub use admm::{solve, FusionResult, SolveDiagnostics, SolverConfig};
pub use error::{Error, Result};
pub use image::{
    mix, AbundanceMap, BlurKernel, DownsamplePlan, EndmemberMatrix, Grid, MultibandImage,
    NoiseModel, ObservationModel, SpectralResponse,
};
