//! Pseudo-true weight scans: exhaustive KL-divergence minimization over
//! the discrete weight simplex, with optional sub-grid refinement.
//!
//! Given a truth covariance `Q` and a model family `Σ(θ) = Σⱼ θⱼ Vⱼ`
//! constrained to the simplex `θⱼ ≥ 0, Σθⱼ = 1`, the scan evaluates
//! `KL(Q ‖ Σ(θ))` at every grid point and reports the minimizer — the
//! pseudo-true weights that maximum likelihood converges to when the
//! model is misspecified. Families with replicate structure are
//! evaluated in spectral coordinates (one eigendecomposition, then
//! O(n·k) per grid point); anything else falls back to a dense Cholesky
//! per point.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::Covariance;
use crate::linalg;
use crate::optimize;
use crate::scenarios::CovarianceSpec;
use crate::spectral::{SpectralFamily, SpectralKl};

/// Discrete weight vectors `(a₁/s, …, a_k/s)` with nonnegative integer
/// ticks `aᵢ` summing to the resolution `s`.
///
/// Points are represented by their integer ticks, so the sum constraint
/// is exact — no floating-point accumulation can push a point off the
/// simplex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimplexGrid {
    s: u32,
    k: usize,
}

impl SimplexGrid {
    /// Grid with `s + 1` ticks per axis (step `1/s`) on `k ∈ {2, 3}`
    /// components.
    pub fn with_resolution(s: u32, k: usize) -> Result<Self> {
        if s == 0 {
            return Err(Error::InvalidInput(
                "grid resolution must be at least 1".into(),
            ));
        }
        if !(k == 2 || k == 3) {
            return Err(Error::InvalidInput(format!(
                "grid supports two or three components, got {k}"
            )));
        }
        Ok(Self { s, k })
    }

    /// The standard scan grid: step 0.01 (`s = 100`).
    pub fn standard(k: usize) -> Result<Self> {
        Self::with_resolution(100, k)
    }

    /// Grid from a fractional step, which must be the reciprocal of a
    /// positive integer (e.g. `0.01` → resolution 100).
    pub fn with_step(step: f64, k: usize) -> Result<Self> {
        if !step.is_finite() || step <= 0.0 || step > 1.0 {
            return Err(Error::InvalidInput(format!(
                "grid step must lie in (0, 1], got {step}"
            )));
        }
        let s = (1.0 / step).round();
        if s < 1.0 || (step * s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "grid step must be the reciprocal of a positive integer, got {step}"
            )));
        }
        Self::with_resolution(s as u32, k)
    }

    /// Number of ticks the weights sum to (`1/step`).
    pub fn resolution(&self) -> u32 {
        self.s
    }

    /// Fractional step between adjacent ticks.
    pub fn step(&self) -> f64 {
        1.0 / self.s as f64
    }

    /// Number of weight components.
    pub fn n_components(&self) -> usize {
        self.k
    }

    /// Number of grid points: `C(s + k − 1, k − 1)`.
    pub fn n_points(&self) -> usize {
        let s = self.s as u64;
        let count = match self.k {
            2 => s + 1,
            _ => (s + 1) * (s + 2) / 2,
        };
        count as usize
    }

    /// All tick vectors, in descending lexicographic order.
    pub fn tick_vectors(&self) -> Vec<Vec<u32>> {
        let s = self.s;
        let mut out = Vec::with_capacity(self.n_points());
        match self.k {
            2 => {
                for a in (0..=s).rev() {
                    out.push(vec![a, s - a]);
                }
            }
            _ => {
                for a in (0..=s).rev() {
                    for b in (0..=(s - a)).rev() {
                        out.push(vec![a, b, s - a - b]);
                    }
                }
            }
        }
        out
    }

    /// Convert a tick vector to weights `aᵢ/s`.
    pub fn weights_of(&self, ticks: &[u32]) -> Vec<f64> {
        ticks.iter().map(|&a| a as f64 / self.s as f64).collect()
    }
}

/// All grid points as weight vectors, in the grid's canonical
/// (descending-lexicographic tick) order.
pub fn enumerate_grid(grid: &SimplexGrid) -> Vec<Vec<f64>> {
    grid.tick_vectors().iter().map(|t| grid.weights_of(t)).collect()
}

/// Options for [`minimize_kl_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ScanOptions {
    /// Retain the full grid-to-KL curve (evaluated points only). Off by
    /// default: a three-component scan at step 0.01 has 5151 points.
    pub keep_curve: bool,
}

/// Result of a grid scan.
#[derive(Debug, Clone)]
pub struct KlScanResult {
    /// The pseudo-true weights: the KL-minimizing grid point.
    pub theta_tilde: Vec<f64>,
    /// The same point as exact integer ticks.
    pub theta_ticks: Vec<u32>,
    /// KL divergence at `theta_tilde` (clamped to zero when rounding
    /// noise produces a tiny negative value at an exact optimum).
    pub kl_min: f64,
    /// Every grid point whose KL is within `1e-10` of the minimum,
    /// including the winner, in grid order.
    pub ties: Vec<Vec<f64>>,
    /// Evaluated `(weights, KL)` pairs in grid order, if requested.
    pub curve: Option<Vec<(Vec<f64>, f64)>>,
    /// Grid points where `Σ(θ)` was not positive definite.
    pub skipped_points: usize,
    /// Grid points that yielded a finite KL.
    pub evaluated_points: usize,
}

/// KL evaluator picked once per scan: spectral when the family reduces,
/// dense otherwise.
enum KlEval<'a> {
    Spectral(SpectralKl),
    Dense {
        basis: &'a [DMatrix<f64>],
        truth: &'a DMatrix<f64>,
        logdet_q: f64,
    },
}

impl KlEval<'_> {
    /// `KL(truth ‖ Σ(θ))`, or `None` when `Σ(θ)` is not positive definite.
    fn eval(&self, theta: &[f64]) -> Option<f64> {
        match self {
            KlEval::Spectral(problem) => problem.eval(theta),
            KlEval::Dense { basis, truth, logdet_q } => {
                let d = truth.nrows();
                let mut sigma = DMatrix::zeros(d, d);
                for (w, v) in theta.iter().zip(basis.iter()) {
                    sigma
                        .as_mut_slice()
                        .iter_mut()
                        .zip(v.as_slice())
                        .for_each(|(s, x)| *s += w * x);
                }
                let chol = linalg::cholesky(&sigma).ok()?;
                let trace = chol.solve_mat(truth).trace();
                let kl = 0.5 * (trace - d as f64 + chol.logdet() - logdet_q);
                kl.is_finite().then_some(kl)
            }
        }
    }
}

fn build_kl_eval<'a>(
    truth: &'a Covariance,
    model: &'a CovarianceSpec,
) -> Result<KlEval<'a>> {
    if truth.dim() != model.dim() {
        return Err(Error::InvalidInput(format!(
            "truth dimension {} does not match model dimension {}",
            truth.dim(),
            model.dim()
        )));
    }
    if let Some(family) = SpectralFamily::for_spec(model)? {
        if let Some(problem) = SpectralKl::new(&family, truth)? {
            return Ok(KlEval::Spectral(problem));
        }
    }
    let logdet_q = linalg::cholesky(truth.matrix())?.logdet();
    Ok(KlEval::Dense { basis: model.basis(), truth: truth.matrix(), logdet_q })
}

/// Ascending lexicographic comparison of tick vectors (tie-break order
/// shared by the scan and the grid-seeded likelihood fit).
pub(crate) fn lex_less(a: &[u32], b: &[u32]) -> bool {
    a.iter().lt(b.iter())
}

/// Scan the grid for the pseudo-true weights with default options.
pub fn minimize_kl(
    truth: &Covariance,
    model: &CovarianceSpec,
    grid: &SimplexGrid,
) -> Result<KlScanResult> {
    minimize_kl_with(truth, model, grid, &ScanOptions::default())
}

/// Scan the grid for the pseudo-true weights.
///
/// Evaluates `KL(truth ‖ Σ(θ))` at every grid point. Points where `Σ(θ)`
/// is not positive definite (boundary mixes with singular components)
/// are skipped and counted, not fatal. Exact ties are broken toward the
/// smallest first tick, then the smallest second tick, so the result is
/// independent of evaluation order and parallelism; co-minimal points
/// are reported in `ties` regardless.
pub fn minimize_kl_with(
    truth: &Covariance,
    model: &CovarianceSpec,
    grid: &SimplexGrid,
    options: &ScanOptions,
) -> Result<KlScanResult> {
    if model.n_components() != grid.n_components() {
        return Err(Error::InvalidInput(format!(
            "model has {} components but the grid has {}",
            model.n_components(),
            grid.n_components()
        )));
    }
    let evaluator = build_kl_eval(truth, model)?;

    let ticks = grid.tick_vectors();
    let values: Vec<Option<f64>> = ticks
        .par_iter()
        .map(|t| evaluator.eval(&grid.weights_of(t)))
        .collect();

    let mut skipped = 0usize;
    let mut best: Option<(f64, usize)> = None;
    for (i, value) in values.iter().enumerate() {
        match value {
            None => skipped += 1,
            Some(kl) => {
                let better = match best {
                    None => true,
                    Some((b, bi)) => *kl < b || (*kl == b && lex_less(&ticks[i], &ticks[bi])),
                };
                if better {
                    best = Some((*kl, i));
                }
            }
        }
    }
    let Some((raw_min, best_idx)) = best else {
        return Err(Error::DegenerateGrid);
    };

    let ties: Vec<Vec<f64>> = ticks
        .iter()
        .zip(&values)
        .filter(|(_, v)| matches!(v, Some(kl) if kl - raw_min <= 1e-10))
        .map(|(t, _)| grid.weights_of(t))
        .collect();
    let curve = options.keep_curve.then(|| {
        ticks
            .iter()
            .zip(&values)
            .filter_map(|(t, v)| v.map(|kl| (grid.weights_of(t), kl)))
            .collect()
    });

    // KL is nonnegative; only rounding noise at an exact optimum can
    // produce a hair below zero.
    let kl_min = if raw_min >= -1e-12 { raw_min.max(0.0) } else { raw_min };
    Ok(KlScanResult {
        theta_tilde: grid.weights_of(&ticks[best_idx]),
        theta_ticks: ticks[best_idx].clone(),
        kl_min,
        ties,
        curve,
        skipped_points: skipped,
        evaluated_points: values.len() - skipped,
    })
}

/// Refine a feasible weight vector below grid resolution by
/// derivative-free descent confined to the constraint simplex.
///
/// Starting from `start` (nonnegative, summing to one, with `Σ(start)`
/// positive definite), runs Nelder–Mead over the simplex affine hull
/// until the search simplex has diameter below `1e-6`. The returned
/// point never has higher KL than `start`; if no improvement is found,
/// `start` itself is returned.
pub fn refine_local(
    truth: &Covariance,
    model: &CovarianceSpec,
    start: &[f64],
) -> Result<Vec<f64>> {
    let k = model.n_components();
    if start.len() != k {
        return Err(Error::InvalidInput(format!(
            "start has {} weights but the model has {k} components",
            start.len()
        )));
    }
    if start.iter().any(|x| !x.is_finite() || *x < -1e-12) {
        return Err(Error::InvalidInput(
            "start weights must be finite and nonnegative".into(),
        ));
    }
    let sum: f64 = start.iter().sum();
    if (sum - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidInput(format!(
            "start weights must sum to one, got {sum}"
        )));
    }

    let evaluator = build_kl_eval(truth, model)?;
    let objective = |theta: &[f64]| -> f64 {
        if theta.iter().any(|x| *x < 0.0) {
            return f64::INFINITY;
        }
        evaluator.eval(theta).unwrap_or(f64::INFINITY)
    };
    let f_start = objective(start);
    if !f_start.is_finite() {
        return Err(Error::InvalidInput(
            "start point must yield a positive definite model covariance".into(),
        ));
    }

    let mut f = |theta: &[f64]| objective(theta);
    let minimum =
        optimize::nelder_mead(&mut f, optimize::simplex_around(start, 0.02), 1e-6, 500);

    // Snap exactly back onto the simplex (descent drifts the sum by at
    // most a few ulps) and keep the result only if it genuinely helps.
    let mut point: Vec<f64> = minimum.point.iter().map(|x| x.max(0.0)).collect();
    let total: f64 = point.iter().sum();
    if total > 0.0 {
        for x in &mut point {
            *x /= total;
        }
    }
    if objective(&point) <= f_start {
        Ok(point)
    } else {
        Ok(start.to_vec())
    }
}
