//! Maximum-likelihood variance-component estimation, Fisher-information
//! standard errors, and the Monte-Carlo study connecting ML estimates to
//! the pseudo-true weights.
//!
//! Fits are performed directly on the weight simplex. Two-component
//! families reduce to a one-dimensional golden-section search over the
//! mixing proportion; the three-component family is scanned on the
//! standard 0.01 grid and then polished by simplex descent. Under the
//! `Free` constraint an overall scale is profiled out analytically — the
//! likelihood-maximizing scale for fixed mixing proportions is the mean
//! squared whitened residual — so the search space never grows beyond
//! the simplex.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::sample_mvn_stream;
use crate::kernel::{Kernel, ReplicateDesign};
use crate::linalg;
use crate::optimize;
use crate::scan::{lex_less, minimize_kl, SimplexGrid};
use crate::scenarios::{build_model, build_truth, CovarianceSpec, ScenarioId};
use crate::spectral::{SpectralFamily, SpectralLik};

/// How the total variance is treated during fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Constraint {
    /// Weights constrained to the simplex: nonnegative, summing to one.
    #[default]
    SumToOne,
    /// Weights nonnegative with a free overall scale (profiled out
    /// analytically given the mixing proportions).
    Free,
}

/// Outcome of a maximum-likelihood fit.
///
/// The reported `loglik` is the largest log-likelihood over every
/// candidate evaluated during the search, and `theta_hat` is the point
/// achieving it.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Estimated component weights, in the model's component order.
    pub theta_hat: Vec<f64>,
    /// Log-likelihood at `theta_hat`.
    pub loglik: f64,
    /// Per-component asymptotic standard errors `sqrt(diag(F⁻¹))` from
    /// the unconstrained Fisher information at `theta_hat`; absent when
    /// the information matrix is singular there (aliased components,
    /// boundary estimates).
    pub standard_errors: Option<Vec<f64>>,
    /// Whether the search terminated by meeting its tolerance and the
    /// model was identifiable. `false` flags results that need scrutiny.
    pub converged: bool,
    /// Number of likelihood evaluations performed.
    pub n_evaluations: usize,
    /// Whether any estimated weight sits on the nonnegativity boundary
    /// (≤ 1e-6 of the total).
    pub boundary: bool,
    /// Human-readable caveat (e.g. which components are aliased).
    pub note: Option<String>,
}

/// Result of a Monte-Carlo misspecification study.
#[derive(Debug, Clone)]
pub struct McStudyResult {
    /// Fitted weights, one row per successful replicate.
    pub estimates: DMatrix<f64>,
    /// Column means of `estimates`.
    pub mean_estimate: Vec<f64>,
    /// Pseudo-true weights of the same truth/model pair, from the grid
    /// scan.
    pub theta_tilde: Vec<f64>,
    /// `mean_estimate − theta_tilde`, the empirical convergence gap.
    pub bias: Vec<f64>,
    /// Replicates dropped because their fit errored.
    pub failed_replicates: usize,
}

/// Everything reusable across fits of the same model: the spectral
/// reduction (one eigendecomposition) and the aliasing diagnosis.
pub(crate) struct FitEngine<'m> {
    model: &'m CovarianceSpec,
    family: Option<SpectralFamily>,
    aliased: Option<(usize, usize)>,
}

/// Per-data-vector likelihood evaluator.
enum Objective<'a> {
    Spectral(SpectralLik),
    Dense { basis: &'a [DMatrix<f64>], y: &'a DVector<f64> },
}

/// Quadratic form and log-determinant of `Σ(θ)` against `y`, dense path.
fn dense_parts(basis: &[DMatrix<f64>], y: &DVector<f64>, theta: &[f64]) -> Option<(f64, f64)> {
    let d = y.nrows();
    let mut sigma = DMatrix::zeros(d, d);
    for (w, v) in theta.iter().zip(basis.iter()) {
        sigma
            .as_mut_slice()
            .iter_mut()
            .zip(v.as_slice())
            .for_each(|(s, x)| *s += w * x);
    }
    let chol = linalg::cholesky(&sigma).ok()?;
    let quad = y.dot(&chol.solve_vec(y));
    Some((quad, chol.logdet()))
}

impl Objective<'_> {
    /// `−ln L(θ)`; `+∞` when `Σ(θ)` is not positive definite.
    fn neg_loglik(&self, theta: &[f64]) -> f64 {
        match self {
            Objective::Spectral(lik) => lik.neg_loglik(theta),
            Objective::Dense { basis, y } => match dense_parts(basis, y, theta) {
                Some((quad, logdet)) => {
                    let n = y.nrows() as f64;
                    0.5 * (n * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
                }
                None => f64::INFINITY,
            },
        }
    }

    /// `(ŝ, −ln L(ŝ·θ))` with the overall scale profiled out.
    fn profiled(&self, theta: &[f64]) -> (f64, f64) {
        match self {
            Objective::Spectral(lik) => lik.profiled_scale(theta),
            Objective::Dense { basis, y } => match dense_parts(basis, y, theta) {
                Some((quad, logdet)) if quad > 0.0 => {
                    let n = y.nrows() as f64;
                    let scale = quad / n;
                    let nll = 0.5
                        * (n * (2.0 * std::f64::consts::PI).ln()
                            + n
                            + n * scale.ln()
                            + logdet);
                    (scale, nll)
                }
                _ => (0.0, f64::INFINITY),
            },
        }
    }
}

/// Two basis matrices that are entrywise equal (within `1e-12` of the
/// overall scale) make their weights jointly unidentifiable.
fn dense_aliased_pair(basis: &[DMatrix<f64>]) -> Option<(usize, usize)> {
    let scale = basis
        .iter()
        .flat_map(|v| v.iter())
        .fold(0.0f64, |a, x| a.max(x.abs()))
        .max(1.0);
    for i in 0..basis.len() {
        for j in (i + 1)..basis.len() {
            let equal = basis[i]
                .iter()
                .zip(basis[j].iter())
                .all(|(a, b)| (a - b).abs() <= 1e-12 * scale);
            if equal {
                return Some((i, j));
            }
        }
    }
    None
}

impl<'m> FitEngine<'m> {
    pub(crate) fn new(model: &'m CovarianceSpec) -> Result<Self> {
        let k = model.n_components();
        if k > 3 {
            return Err(Error::InvalidInput(format!(
                "fitting supports at most three components, got {k}"
            )));
        }
        if model.identity_index().is_none() {
            return Err(Error::InvalidInput(
                "the model basis must include an identity matrix \
                 (independent-noise component) for the likelihood to have \
                 a positive definite interior"
                    .into(),
            ));
        }
        let family = SpectralFamily::for_spec(model)?;
        let aliased = match &family {
            Some(f) => f.groups.aliased_pair(),
            None => dense_aliased_pair(model.basis()),
        };
        Ok(Self { model, family, aliased })
    }

    fn objective_for<'a>(&'a self, y: &'a DVector<f64>) -> Result<Objective<'a>> {
        match &self.family {
            Some(family) => Ok(Objective::Spectral(SpectralLik::new(family, y)?)),
            None => Ok(Objective::Dense { basis: self.model.basis(), y }),
        }
    }

    /// Standard errors from the unconstrained Fisher information at
    /// `theta`, when it is invertible.
    fn standard_errors_at(&self, theta: &[f64]) -> Option<Vec<f64>> {
        let fisher = match &self.family {
            Some(family) => family.groups.fisher(theta)?,
            None => dense_fisher(self.model.basis(), theta).ok()?,
        };
        invert_to_standard_errors(&fisher)
    }

    pub(crate) fn fit(&self, y: &DVector<f64>, constraint: Constraint) -> Result<FitResult> {
        if y.nrows() != self.model.dim() {
            return Err(Error::InvalidInput(format!(
                "observation length {} does not match model dimension {}",
                y.nrows(),
                self.model.dim()
            )));
        }
        if y.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(
                "observations contain non-finite values".into(),
            ));
        }
        if y.norm_squared() == 0.0 {
            return Err(Error::DegenerateData("zero data vector".into()));
        }
        let objective = self.objective_for(y)?;
        let k = self.model.n_components();
        let n_evaluations = Cell::new(0usize);
        let value_of = |mix: &[f64]| -> f64 {
            n_evaluations.set(n_evaluations.get() + 1);
            match constraint {
                Constraint::SumToOne => objective.neg_loglik(mix),
                Constraint::Free => objective.profiled(mix).1,
            }
        };

        // Best mixing proportions and their (possibly profiled) negative
        // log-likelihood, plus whether the search met its tolerance.
        let (mix, nll, search_converged) = match k {
            1 => {
                let mix = vec![1.0];
                let nll = value_of(&mix);
                (mix, nll, true)
            }
            2 => {
                let identity = self.model.identity_index().expect("checked in new");
                let other = 1 - identity;
                let mix_of = |h: f64| {
                    let mut mix = [0.0; 2];
                    mix[other] = h;
                    mix[identity] = 1.0 - h;
                    mix.to_vec()
                };
                let g = |h: f64| value_of(&mix_of(h));

                // Golden-section search on h ∈ [0, 1] to width 1e-8,
                // keeping the best probe ever seen.
                let phi = (5.0f64.sqrt() - 1.0) / 2.0;
                let (mut a, mut b) = (0.0f64, 1.0f64);
                let mut x1 = b - phi * (b - a);
                let mut x2 = a + phi * (b - a);
                let mut f1 = g(x1);
                let mut f2 = g(x2);
                let (mut best_h, mut best_f) =
                    if f1 <= f2 { (x1, f1) } else { (x2, f2) };
                while b - a > 1e-8 {
                    if f1 <= f2 {
                        b = x2;
                        x2 = x1;
                        f2 = f1;
                        x1 = b - phi * (b - a);
                        f1 = g(x1);
                        if f1 < best_f {
                            best_f = f1;
                            best_h = x1;
                        }
                    } else {
                        a = x1;
                        x1 = x2;
                        f1 = f2;
                        x2 = a + phi * (b - a);
                        f2 = g(x2);
                        if f2 < best_f {
                            best_f = f2;
                            best_h = x2;
                        }
                    }
                }
                (mix_of(best_h), best_f, true)
            }
            3 => {
                let grid = SimplexGrid::standard(3).expect("three components");
                let ticks = grid.tick_vectors();
                // The grid pass is read-only and embarrassingly parallel;
                // its evaluations are counted in bulk below.
                let values: Vec<f64> = ticks
                    .par_iter()
                    .map(|t| {
                        let mix = grid.weights_of(t);
                        match constraint {
                            Constraint::SumToOne => objective.neg_loglik(&mix),
                            Constraint::Free => objective.profiled(&mix).1,
                        }
                    })
                    .collect();
                n_evaluations.set(n_evaluations.get() + ticks.len());
                let mut best: Option<(f64, usize)> = None;
                for (i, v) in values.iter().enumerate() {
                    if !v.is_finite() {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some((b, bi)) => {
                            *v < b || (*v == b && lex_less(&ticks[i], &ticks[bi]))
                        }
                    };
                    if better {
                        best = Some((*v, i));
                    }
                }
                let Some((grid_value, grid_idx)) = best else {
                    return Err(Error::DegenerateGrid);
                };
                let start = grid.weights_of(&ticks[grid_idx]);

                let mut f = |mix: &[f64]| -> f64 {
                    if mix.iter().any(|x| *x < 0.0) {
                        return f64::INFINITY;
                    }
                    value_of(mix)
                };
                let minimum = optimize::nelder_mead(
                    &mut f,
                    optimize::simplex_around(&start, 0.02),
                    1e-6,
                    500,
                );
                // Snap the descent result exactly back onto the simplex
                // and keep it only if it still beats the grid point.
                let mut point: Vec<f64> =
                    minimum.point.iter().map(|x| x.max(0.0)).collect();
                let total: f64 = point.iter().sum();
                if total > 0.0 {
                    for x in &mut point {
                        *x /= total;
                    }
                }
                let snapped = f(&point);
                if snapped <= grid_value {
                    (point, snapped, minimum.converged)
                } else {
                    (start, grid_value, minimum.converged)
                }
            }
            _ => unreachable!("component count validated in FitEngine::new"),
        };

        if !nll.is_finite() {
            return Err(Error::DegenerateGrid);
        }

        let boundary = mix.iter().any(|x| *x <= 1e-6);
        let theta_hat = match constraint {
            Constraint::SumToOne => mix,
            Constraint::Free => {
                let (scale, _) = objective.profiled(&mix);
                mix.iter().map(|x| x * scale).collect()
            }
        };
        let note = self.aliased.map(|(i, j)| {
            format!(
                "components '{}' and '{}' act identically on this family; \
                 their weights are not separately identifiable",
                self.model.names()[i],
                self.model.names()[j]
            )
        });
        Ok(FitResult {
            standard_errors: self.standard_errors_at(&theta_hat),
            theta_hat,
            loglik: -nll,
            converged: search_converged && self.aliased.is_none(),
            n_evaluations: n_evaluations.get(),
            boundary,
            note,
        })
    }
}

/// Maximum-likelihood weights for `y` under the model family.
///
/// The model basis must contain an identity element (independent noise),
/// which guarantees the feasible region has a positive definite
/// interior. Two-component families are solved by golden-section search
/// on the mixing proportion (tolerance `1e-8`) after one
/// eigendecomposition; three-component families by a 0.01-step simplex
/// grid pass followed by local descent. With [`Constraint::Free`] the
/// overall scale is profiled out analytically.
pub fn fit_ml(
    y: &DVector<f64>,
    model: &CovarianceSpec,
    constraint: Constraint,
) -> Result<FitResult> {
    FitEngine::new(model)?.fit(y, constraint)
}

/// Fisher information of the covariance family at `theta`:
/// `F[i,j] = ½·tr(Σ⁻¹ Vᵢ Σ⁻¹ Vⱼ)`.
///
/// The asymptotic covariance of the unconstrained ML estimator is `F⁻¹`,
/// so per-component standard errors are `sqrt(diag(F⁻¹))` (see
/// [`fisher_standard_errors`]). Fails when `Σ(theta)` is singular.
pub fn fisher_information(model: &CovarianceSpec, theta: &[f64]) -> Result<DMatrix<f64>> {
    if theta.len() != model.n_components() {
        return Err(Error::InvalidInput(format!(
            "theta has {} entries but the model has {} components",
            theta.len(),
            model.n_components()
        )));
    }
    if theta.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("theta contains non-finite values".into()));
    }
    if let Some(family) = SpectralFamily::for_spec(model)? {
        if let Some(group) = family.groups.first_nonpositive(theta) {
            return Err(Error::NotPositiveDefinite { index: group });
        }
        Ok(family.groups.fisher(theta).expect("positivity checked above"))
    } else {
        dense_fisher(model.basis(), theta)
    }
}

fn dense_fisher(basis: &[DMatrix<f64>], theta: &[f64]) -> Result<DMatrix<f64>> {
    let d = basis[0].nrows();
    let k = basis.len();
    let mut sigma = DMatrix::zeros(d, d);
    for (w, v) in theta.iter().zip(basis.iter()) {
        sigma
            .as_mut_slice()
            .iter_mut()
            .zip(v.as_slice())
            .for_each(|(s, x)| *s += w * x);
    }
    let chol = linalg::cholesky(&sigma)?;
    let whitened: Vec<DMatrix<f64>> = basis.iter().map(|v| chol.solve_mat(v)).collect();
    let mut fisher = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..=i {
            // tr(Wᵢ Wⱼ) without forming the product.
            let mut trace = 0.0;
            for a in 0..d {
                for b in 0..d {
                    trace += whitened[i][(a, b)] * whitened[j][(b, a)];
                }
            }
            fisher[(i, j)] = 0.5 * trace;
            fisher[(j, i)] = fisher[(i, j)];
        }
    }
    Ok(fisher)
}

/// `sqrt(diag(F⁻¹))`, or `None` when the information matrix is singular
/// or yields a non-positive variance for some component.
pub fn fisher_standard_errors(fisher: &DMatrix<f64>) -> Option<Vec<f64>> {
    invert_to_standard_errors(fisher)
}

fn invert_to_standard_errors(fisher: &DMatrix<f64>) -> Option<Vec<f64>> {
    let inverse = fisher.clone().try_inverse()?;
    let ses: Vec<f64> = (0..fisher.nrows()).map(|i| inverse[(i, i)].sqrt()).collect();
    ses.iter().all(|s| s.is_finite() && *s > 0.0).then_some(ses)
}

/// Monte-Carlo study of where maximum likelihood converges under
/// misspecification: simulate `n_reps` phenotype vectors from the
/// scenario truth, fit the scenario's model to each (sum-to-one), and
/// compare the mean estimate to the pseudo-true weights from the grid
/// scan.
///
/// Replicate `i` draws from substream `(seed, i)`, so the study is
/// deterministic for a given seed regardless of scheduling, and any
/// single replicate can be reproduced in isolation. Replicates whose fit
/// errors are dropped and counted; more than 10% failures aborts.
pub fn mc_study(
    scenario: ScenarioId,
    kernel: &Kernel,
    design: &ReplicateDesign,
    n_reps: usize,
    seed: u64,
) -> Result<McStudyResult> {
    if n_reps == 0 {
        return Err(Error::InvalidInput("n_reps must be at least 1".into()));
    }
    let truth = build_truth(scenario.tag, kernel, design)?;
    let model = build_model(scenario.model, kernel, design)?;
    let k = model.n_components();
    let grid = SimplexGrid::standard(k)?;
    let scan = minimize_kl(&truth, &model, &grid)?;
    let engine = FitEngine::new(&model)?;

    let fits: Vec<Result<Vec<f64>>> = (0..n_reps)
        .into_par_iter()
        .map(|rep| {
            let draws = sample_mvn_stream(&truth, 1, seed, rep as u64)?;
            let y = draws.row(0).transpose();
            Ok(engine.fit(&y, Constraint::SumToOne)?.theta_hat)
        })
        .collect();

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n_reps);
    let mut failed = 0usize;
    for fit in fits {
        match fit {
            Ok(theta) => rows.push(theta),
            Err(_) => failed += 1,
        }
    }
    if failed * 10 > n_reps {
        return Err(Error::NoConvergence(format!(
            "{failed} of {n_reps} replicates failed to fit"
        )));
    }

    let estimates =
        DMatrix::from_row_iterator(rows.len(), k, rows.iter().flatten().copied());
    let mean_estimate: Vec<f64> =
        (0..k).map(|j| estimates.column(j).sum() / rows.len() as f64).collect();
    let bias: Vec<f64> = mean_estimate
        .iter()
        .zip(&scan.theta_tilde)
        .map(|(m, t)| m - t)
        .collect();
    Ok(McStudyResult {
        estimates,
        mean_estimate,
        theta_tilde: scan.theta_tilde,
        bias,
        failed_replicates: failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{loglik, sample_mvn, Covariance};
    use crate::kernel::{compute_gsm, hadamard_square, standardize_markers, KernelKind};
    use crate::scenarios::{ModelId, Scenario};
    use crate::simulate::{simulate_structured, simulate_unrelated, PopulationConfig};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn unrelated_kernel(n: usize, m: usize, seed: u64) -> Kernel {
        let panel = simulate_unrelated(&PopulationConfig::unrelated(n, m, seed)).unwrap();
        compute_gsm(&standardize_markers(&panel).unwrap()).unwrap()
    }

    fn structured_kernel(n: usize, m: usize, fst: f64, seed: u64) -> Kernel {
        let config = PopulationConfig::balding_nichols(n, m, 3, fst, seed);
        let panel = simulate_structured(&config).unwrap();
        compute_gsm(&standardize_markers(&panel).unwrap()).unwrap()
    }

    #[test]
    fn recovers_weights_within_the_model() {
        // Data generated inside the fitted family: the estimate must land
        // near the generating weights.
        let k = structured_kernel(800, 2000, 0.3, 101);
        let design = ReplicateDesign::new(800, 1).unwrap();
        let model = build_model(ModelId::M1, &k, &design).unwrap();
        let truth =
            Covariance::new(model.covariance_at(&[0.4, 0.6]).unwrap(), "0.4K + 0.6I")
                .unwrap();
        let y = sample_mvn(&truth, 1, 7).unwrap().row(0).transpose();
        let fit = fit_ml(&y, &model, Constraint::SumToOne).unwrap();
        assert!(
            (fit.theta_hat[0] - 0.4).abs() <= 0.08,
            "theta_hat = {:?}",
            fit.theta_hat
        );
        assert!(fit.converged);
        assert!(!fit.boundary);
        assert!(fit.note.is_none());
        assert!(fit.n_evaluations >= 40);
        // The reported log-likelihood is the actual log-density there.
        let direct = loglik(&truth, &y);
        assert!(fit.loglik >= direct.unwrap() - 1e-9, "fit beats the truth point");
        let refit = Covariance::new(
            model.covariance_at(&fit.theta_hat).unwrap(),
            "at theta_hat",
        )
        .unwrap();
        assert_relative_eq!(
            fit.loglik,
            loglik(&refit, &y).unwrap(),
            epsilon = 1e-8,
            max_relative = 1e-10
        );
    }

    #[test]
    fn aliased_components_flagged_not_fatal() {
        let ids: Vec<String> = (1..=20).map(|i| format!("g{i}")).collect();
        let k =
            Kernel::new(DMatrix::identity(20, 20), ids, KernelKind::Custom).unwrap();
        let design = ReplicateDesign::new(20, 1).unwrap();
        let model = build_model(ModelId::M1, &k, &design).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = DVector::from_fn(20, |_, _| rng.random::<f64>() - 0.5);
        let fit = fit_ml(&y, &model, Constraint::SumToOne).unwrap();
        assert!(!fit.converged);
        let note = fit.note.expect("aliasing note");
        assert!(note.contains("not separately identifiable"), "{note}");
        assert!(fit.standard_errors.is_none(), "Fisher is singular here");
    }

    #[test]
    fn zero_data_is_degenerate() {
        let k = unrelated_kernel(10, 200, 103);
        let design = ReplicateDesign::new(10, 1).unwrap();
        let model = build_model(ModelId::M1, &k, &design).unwrap();
        let y = DVector::zeros(10);
        match fit_ml(&y, &model, Constraint::SumToOne) {
            Err(e @ Error::DegenerateData(_)) => {
                assert!(e.to_string().contains("degenerate data"));
                assert!(e.to_string().contains("zero data vector"));
            }
            other => panic!("expected degenerate data, got {other:?}"),
        }
    }

    #[test]
    fn invalid_observations_rejected() {
        let k = unrelated_kernel(10, 200, 107);
        let design = ReplicateDesign::new(10, 1).unwrap();
        let model = build_model(ModelId::M1, &k, &design).unwrap();
        let mut y = DVector::from_element(10, 1.0);
        y[3] = f64::NAN;
        assert!(matches!(
            fit_ml(&y, &model, Constraint::SumToOne),
            Err(Error::InvalidInput(_))
        ));
        let short = DVector::from_element(9, 1.0);
        assert!(matches!(
            fit_ml(&short, &model, Constraint::SumToOne),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn model_without_noise_component_rejected() {
        let k = unrelated_kernel(6, 150, 109);
        let kk = hadamard_square(&k);
        let spec = CovarianceSpec::new(
            vec!["sigma_A2".into(), "sigma_AA2".into()],
            vec![k.matrix().clone(), kk.matrix().clone()],
            true,
        )
        .unwrap();
        let y = DVector::from_element(6, 1.0);
        match fit_ml(&y, &spec, Constraint::SumToOne) {
            Err(Error::InvalidInput(msg)) => assert!(msg.contains("identity"), "{msg}"),
            other => panic!("expected invalid input, got {other:?}"),
        }
    }

    #[test]
    fn free_scale_recovers_total_variance() {
        let k = unrelated_kernel(400, 1200, 113);
        let design = ReplicateDesign::new(400, 1).unwrap();
        let model = build_model(ModelId::M1, &k, &design).unwrap();
        let base = model.covariance_at(&[0.4, 0.6]).unwrap();
        let truth = Covariance::new(base * 2.5, "2.5·(0.4K + 0.6I)").unwrap();
        let y = sample_mvn(&truth, 1, 11).unwrap().row(0).transpose();

        let free = fit_ml(&y, &model, Constraint::Free).unwrap();
        let total: f64 = free.theta_hat.iter().sum();
        assert!((2.0..=3.0).contains(&total), "total variance {total}");
        assert!(
            (free.theta_hat[0] / total - 0.4).abs() < 0.12,
            "mixing proportion {:?}",
            free.theta_hat
        );

        // The free fit's maximum cannot fall below the constrained one.
        let constrained = fit_ml(&y, &model, Constraint::SumToOne).unwrap();
        assert!(free.loglik >= constrained.loglik - 1e-9);
    }

    #[test]
    fn two_and_three_component_fits_agree_when_the_block_weight_is_zero() {
        // Data generated with no genotype-block variance: the
        // three-component fit must agree with the two-component fit on
        // the kernel weight.
        let k = unrelated_kernel(150, 1000, 127);
        let design = ReplicateDesign::new(150, 2).unwrap();
        let model2 = build_model(ModelId::M2, &k, &design).unwrap();
        let model3 = build_model(ModelId::M3, &k, &design).unwrap();
        let truth =
            Covariance::new(model2.covariance_at(&[0.5, 0.5]).unwrap(), "0.5·ZKZᵀ + 0.5·I")
                .unwrap();
        let y = sample_mvn(&truth, 1, 13).unwrap().row(0).transpose();

        let fit2 = fit_ml(&y, &model2, Constraint::SumToOne).unwrap();
        let fit3 = fit_ml(&y, &model3, Constraint::SumToOne).unwrap();
        assert!(
            (fit2.theta_hat[0] - fit3.theta_hat[0]).abs() <= 0.01,
            "kernel weights diverge: {:?} vs {:?}",
            fit2.theta_hat,
            fit3.theta_hat
        );
        // Adding a component can only raise the maximum.
        assert!(fit3.loglik >= fit2.loglik - 1e-9);
    }

    #[test]
    fn anti_kernel_data_lands_on_the_boundary() {
        // The GSM is centered (zero row sums), so the constant vector is
        // an eigenvector of K with eigenvalue zero, and the GSM's unit
        // diagonal mean makes tr(K) = n. For y = 1 the log-likelihood in
        // the kernel weight h then has derivative ½·‖y‖² > 0 at h = 0
        // and stays increasing, so the ML estimate is exactly the
        // boundary — for any panel, no sampling involved.
        let k = unrelated_kernel(100, 800, 131);
        let design = ReplicateDesign::new(100, 1).unwrap();
        let model = build_model(ModelId::M1, &k, &design).unwrap();
        let y = DVector::from_element(100, 1.0);
        let fit = fit_ml(&y, &model, Constraint::SumToOne).unwrap();
        assert!(fit.theta_hat[0] <= 1e-6, "theta_hat = {:?}", fit.theta_hat);
        assert!(fit.boundary);
    }

    #[test]
    fn fisher_of_pure_identity_is_the_scalar_formula() {
        let spec = CovarianceSpec::new(
            vec!["sigma_E2".into()],
            vec![DMatrix::identity(100, 100)],
            false,
        )
        .unwrap();
        let fisher = fisher_information(&spec, &[1.0]).unwrap();
        assert_relative_eq!(fisher[(0, 0)], 50.0, epsilon = 1e-10);
        let ses = fisher_standard_errors(&fisher).unwrap();
        assert_relative_eq!(ses[0], (2.0f64 / 100.0).sqrt(), epsilon = 1e-12);
        assert!((ses[0] - 0.1414).abs() < 1e-4);
    }

    #[test]
    fn fisher_matches_a_finite_difference_hessian() {
        // The expected log-likelihood under the model at θ₀ is
        //   ℓ̄(θ) = −½ [ d ln 2π + ln det Σ(θ) + tr(Σ(θ)⁻¹ Σ(θ₀)) ],
        // whose negative Hessian at θ = θ₀ is exactly the Fisher
        // information.
        let k = unrelated_kernel(5, 150, 137);
        let design = ReplicateDesign::new(5, 1).unwrap();
        let model = build_model(ModelId::M1, &k, &design).unwrap();
        let theta = [0.4, 0.6];
        let sigma0 = model.covariance_at(&theta).unwrap();

        // Assemble Σ(t) from the basis directly: finite-difference
        // probes leave the simplex, which is exactly the point — the
        // Fisher matrix is the unconstrained curvature.
        let expected_loglik = |t: &[f64]| -> f64 {
            let sigma = &model.basis()[0] * t[0] + &model.basis()[1] * t[1];
            let chol = crate::linalg::cholesky(&sigma).unwrap();
            let trace = chol.solve_mat(&sigma0).trace();
            -0.5 * (5.0 * (2.0 * std::f64::consts::PI).ln() + chol.logdet() + trace)
        };

        let h = 1e-4;
        let mut fd = DMatrix::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                let mut tpp = theta;
                let mut tpm = theta;
                let mut tmp = theta;
                let mut tmm = theta;
                tpp[i] += h;
                tpp[j] += h;
                tpm[i] += h;
                tpm[j] -= h;
                tmp[i] -= h;
                tmp[j] += h;
                tmm[i] -= h;
                tmm[j] -= h;
                let second = (expected_loglik(&tpp) - expected_loglik(&tpm)
                    - expected_loglik(&tmp)
                    + expected_loglik(&tmm))
                    / (4.0 * h * h);
                fd[(i, j)] = -second;
            }
        }

        let fisher = fisher_information(&model, &theta).unwrap();
        let scale = fisher.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (fisher[(i, j)] - fd[(i, j)]).abs() <= 1e-4 * scale,
                    "F[{i},{j}] = {} vs FD {}",
                    fisher[(i, j)],
                    fd[(i, j)]
                );
            }
        }
    }

    #[test]
    fn epistatic_weight_better_determined_under_structure() {
        // In an unrelated panel K∘K is nearly the identity, aliasing the
        // interaction component with the noise; population structure
        // separates them, shrinking the epistatic standard error.
        let n = 80;
        let spec_for = |k: &Kernel| {
            let kk = hadamard_square(k);
            CovarianceSpec::new(
                vec!["sigma_A2".into(), "sigma_AA2".into(), "sigma_E2".into()],
                vec![
                    k.matrix().clone(),
                    kk.matrix().clone(),
                    DMatrix::identity(n, n),
                ],
                true,
            )
            .unwrap()
        };
        let theta = [0.4, 0.2, 0.4];
        let unrelated = unrelated_kernel(n, 1500, 139);
        let structured = structured_kernel(n, 1500, 0.3, 139);
        let se_unrelated = fisher_standard_errors(
            &fisher_information(&spec_for(&unrelated), &theta).unwrap(),
        )
        .unwrap();
        let se_structured = fisher_standard_errors(
            &fisher_information(&spec_for(&structured), &theta).unwrap(),
        )
        .unwrap();
        assert!(
            se_structured[1] < se_unrelated[1],
            "epistatic SE: structured {} vs unrelated {}",
            se_structured[1],
            se_unrelated[1]
        );
    }

    #[test]
    fn fisher_is_symmetric_and_positive_semidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(149);
        for _ in 0..20 {
            let d = rng.random_range(3..7);
            let a = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
            let v = &a * a.transpose() + DMatrix::identity(d, d) * 0.1;
            let spec = CovarianceSpec::new(
                vec!["v".into(), "noise".into()],
                vec![v, DMatrix::identity(d, d)],
                true,
            )
            .unwrap();
            let theta = [0.1 + 0.8 * rng.random::<f64>(), 0.1 + 0.8 * rng.random::<f64>()];
            let fisher = fisher_information(&spec, &theta).unwrap();
            assert_relative_eq!(
                fisher.clone(),
                fisher.transpose(),
                epsilon = 1e-10 * fisher.amax()
            );
            let eigs = fisher.symmetric_eigenvalues();
            let max = eigs.amax();
            assert!(
                eigs.iter().all(|e| *e >= -1e-9 * max),
                "negative eigenvalue in {eigs:?}"
            );
        }
    }

    #[test]
    fn fisher_rejects_singular_mixes() {
        let k = unrelated_kernel(4, 100, 151);
        let design = ReplicateDesign::new(4, 2).unwrap();
        let model = build_model(ModelId::M2, &k, &design).unwrap();
        assert!(matches!(
            fisher_information(&model, &[1.0, 0.0]),
            Err(Error::NotPositiveDefinite { .. })
        ));
        assert!(fisher_information(&model, &[0.5, 0.5]).is_ok());
    }

    #[test]
    fn mc_study_is_deterministic() {
        let k = unrelated_kernel(12, 200, 157);
        let design = ReplicateDesign::new(12, 2).unwrap();
        let scenario = ScenarioId::paired(Scenario::B);
        let a = mc_study(scenario, &k, &design, 3, 42).unwrap();
        let b = mc_study(scenario, &k, &design, 3, 42).unwrap();
        assert_eq!(a.estimates, b.estimates);
        assert_eq!(a.theta_tilde, b.theta_tilde);
        assert_eq!(a.bias, b.bias);
        let c = mc_study(scenario, &k, &design, 3, 43).unwrap();
        assert_ne!(a.estimates, c.estimates);
    }

    #[test]
    fn mc_study_rows_lie_on_the_simplex() {
        let k = unrelated_kernel(15, 300, 163);
        let design = ReplicateDesign::new(15, 2).unwrap();
        let result = mc_study(ScenarioId::paired(Scenario::B), &k, &design, 5, 7).unwrap();
        assert_eq!(result.estimates.nrows(), 5);
        assert_eq!(result.estimates.ncols(), 2);
        assert_eq!(result.failed_replicates, 0);
        for row in result.estimates.row_iter() {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-8, "row sum {sum}");
            assert!(row.iter().all(|x| *x >= 0.0));
        }
        for j in 0..2 {
            assert_relative_eq!(
                result.bias[j],
                result.mean_estimate[j] - result.theta_tilde[j],
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn mean_estimate_tracks_the_pseudo_true_point() {
        // Small-scale version of the convergence check: the mean ML
        // estimate over replicates approaches the scan's minimizer. A
        // structured panel keeps per-replicate estimates tight enough
        // for 20 replicates to be conclusive.
        let k = structured_kernel(60, 1500, 0.3, 167);
        let design = ReplicateDesign::new(60, 1).unwrap();
        let result =
            mc_study(ScenarioId::paired(Scenario::A), &k, &design, 20, 23).unwrap();
        assert!(
            result.bias[0].abs() <= 0.06,
            "bias {:?} (mean {:?}, pseudo-true {:?})",
            result.bias,
            result.mean_estimate,
            result.theta_tilde
        );
    }

    #[test]
    fn mc_study_validates_inputs() {
        let k = unrelated_kernel(6, 100, 173);
        let design = ReplicateDesign::new(6, 1).unwrap();
        assert!(matches!(
            mc_study(ScenarioId::paired(Scenario::A), &k, &design, 0, 1),
            Err(Error::InvalidInput(_))
        ));
        // Scenario C is replicated-only: the unreplicated design must be
        // rejected by the truth builder.
        assert!(mc_study(ScenarioId::paired(Scenario::C), &k, &design, 2, 1).is_err());
    }
}
