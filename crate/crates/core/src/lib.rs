//! Pseudo-true variance components for misspecified Gaussian mixed models.
//!
//! When the covariance of a trait contains structure the fitted
//! variance-component model cannot express — an interaction kernel, a
//! replicate-level effect — maximum likelihood does not estimate the
//! generative weights. It converges instead to the *pseudo-true* point:
//! the member of the fitted family closest to the true distribution in
//! Kullback–Leibler divergence (the classical Huber–White limit). This
//! crate computes that point exactly on a weight grid, fits the
//! misspecified models to simulated data to demonstrate the
//! convergence, and measures how panel structure moves the answer.
//!
//! The pipeline, end to end:
//!
//! 1. [`simulate_unrelated`] / [`simulate_structured`] draw a marker
//!    panel; [`standardize_markers`] and [`compute_gsm`] turn it into a
//!    genetic similarity matrix with unit mean diagonal, centered rows,
//!    and no negative eigenvalues.
//! 2. [`build_truth`] assembles a generative covariance that mixes the
//!    kernel, its entrywise square or a replicate-block term, and white
//!    noise; [`build_model`] assembles the (smaller) fitted family.
//! 3. [`minimize_kl`] scans a simplex grid of mixing weights and
//!    returns the KL-minimizing point with exact integer ticks.
//! 4. [`fit_ml`] maximizes the likelihood of observed or simulated
//!    trait vectors over the same family; [`mc_study`] repeats that
//!    over many simulated traits and reports the gap between the mean
//!    estimate and the scanned pseudo-true point.
//! 5. [`fisher_information`] and [`fisher_standard_errors`] quantify
//!    how sharply a design identifies each variance component.
//!
//! ```rust
//! use pseudotrue::{
//!     build_model, build_truth, compute_gsm, minimize_kl, simulate_unrelated,
//!     standardize_markers, ModelId, PopulationConfig, ReplicateDesign, Scenario, SimplexGrid,
//! };
//!
//! // A small panel of unrelated samples and its similarity kernel.
//! let raw = simulate_unrelated(&PopulationConfig::unrelated(40, 300, 7))?;
//! let kernel = compute_gsm(&standardize_markers(&raw)?)?;
//!
//! // The generative covariance also carries the squared kernel; the
//! // fitted family only has the kernel and white noise.
//! let design = ReplicateDesign::new(40, 1)?;
//! let truth = build_truth(Scenario::A, &kernel, &design)?;
//! let model = build_model(ModelId::M1, &kernel, &design)?;
//!
//! // The weights maximum likelihood converges to, at resolution 0.01.
//! let result = minimize_kl(&truth, &model, &SimplexGrid::with_step(0.01, 2)?)?;
//! assert_eq!(result.theta_tilde.len(), 2);
//! assert!((result.theta_tilde.iter().sum::<f64>() - 1.0).abs() < 1e-12);
//! # Ok::<(), pseudotrue::Error>(())
//! ```
//!
//! # RNG contract
//!
//! Every random quantity in this crate flows through a counter-based
//! generator (ChaCha8) seeded explicitly by the caller; there is no
//! global or time-derived state anywhere.
//!
//! - The same seed produces the same panel, phenotypes, or draws on
//!   every platform, build, and thread count.
//! - Independent replicates use independent streams derived from
//!   `(seed, replicate index)`, so parallel scheduling can never change
//!   a sampled value, only the order in which values are produced.
//! - Distinct seeds produce unrelated streams; incrementing a seed is a
//!   sound way to derive per-panel seeds from a master seed.
//!
//! # Guide
//!
//! The `book/` directory at the workspace root is an mdBook walking
//! through the same material chapter by chapter; every Rust block in it
//! compiles and runs as a doc-test of this crate.

pub mod error;
pub mod gaussian;
pub mod io;
pub mod kernel;
mod linalg;
pub mod mlfit;
mod optimize;
pub mod scan;
pub mod scenarios;
pub mod simulate;
mod spectral;

pub use error::{Error, Result};
pub use gaussian::{
    chol_logdet, kl_balanced, kl_divergence, loglik, sample_mvn, BalancedPart, Covariance,
};
pub use io::{
    read_kernel_tsv, read_marker_csv, read_phenotype_tsv, write_kernel_tsv, write_marker_csv,
    write_phenotype_tsv,
};
pub use kernel::{
    compute_gsm, expand_replicates, hadamard_square, standardize_markers, Kernel, KernelKind,
    MarkerMatrix, ReplicateDesign, StandardizedMarkers,
};
pub use mlfit::{
    fisher_information, fisher_standard_errors, fit_ml, mc_study, Constraint, FitResult,
    McStudyResult,
};
pub use scan::{
    enumerate_grid, minimize_kl, minimize_kl_with, refine_local, KlScanResult, ScanOptions,
    SimplexGrid,
};
pub use scenarios::{
    build_model, build_truth, build_truth_with_weights, CovarianceSpec, ModelId, Scenario,
    ScenarioId, DEFAULT_TRUTH_WEIGHTS,
};
pub use simulate::{
    simulate_phenotypes, simulate_structured, simulate_unrelated, PopulationConfig,
    PopulationStructure,
};

/// Runs every Rust block in the README and the guide as a doc-test, so
/// neither can drift from the API it documents.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/gaussians.md")]
    mod gaussians {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/scan.md")]
    mod scan {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
