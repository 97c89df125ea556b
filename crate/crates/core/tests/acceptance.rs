//! The project's acceptance gate. Eight evidence criteria are scored
//! in order and each prints exactly one `[PASS]`/`[FAIL]` line; the
//! test fails if any criterion fails, but the whole scorecard is
//! always evaluated and printed first.
//!
//! The criteria pin the headline behavior end to end: the null result
//! on unrelated panels, exact residual recovery under the three-
//! component model, inflation of the kernel weight under structure,
//! convergence of ML estimates to the scan's minimizer, agreement of
//! the closed-form divergence with Monte-Carlo and dense oracles, the
//! identifiability advantage structure gives the epistatic component,
//! and the randomized invariant suite.

use std::panic;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestError, TestRunner};
use pseudotrue::{
    build_model, build_truth, compute_gsm, fisher_information, fisher_standard_errors,
    hadamard_square, kl_balanced, kl_divergence, loglik, mc_study, minimize_kl, sample_mvn,
    simulate_structured, simulate_unrelated, standardize_markers, Covariance, CovarianceSpec,
    Kernel, ModelId, PopulationConfig, ReplicateDesign, Scenario, ScenarioId, SimplexGrid,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRID_STEP: f64 = 0.01;

// ---- panel builders ----

fn unrelated_kernel(n: usize, m: usize, seed: u64) -> Kernel {
    let raw = simulate_unrelated(&PopulationConfig::unrelated(n, m, seed)).unwrap();
    compute_gsm(&standardize_markers(&raw).unwrap()).unwrap()
}

fn bn_kernel(n: usize, m: usize, subpops: usize, fst: f64, seed: u64) -> Kernel {
    let config = PopulationConfig::balding_nichols(n, m, subpops, fst, seed);
    let raw = simulate_structured(&config).unwrap();
    compute_gsm(&standardize_markers(&raw).unwrap()).unwrap()
}

/// Scan a scenario/model pair on one kernel and return the result.
fn scan(
    scenario: Scenario,
    model: ModelId,
    kernel: &Kernel,
    replicates: usize,
) -> pseudotrue::KlScanResult {
    let design = ReplicateDesign::new(kernel.n(), replicates).unwrap();
    let truth = build_truth(scenario, kernel, &design).unwrap();
    let spec = build_model(model, kernel, &design).unwrap();
    let grid = SimplexGrid::with_step(GRID_STEP, spec.n_components()).unwrap();
    minimize_kl(&truth, &spec, &grid).unwrap()
}

fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &m * m.transpose() / d as f64 + DMatrix::identity(d, d) * 0.5
}

// ---- criterion 1: unrelated-panel null result ----

fn criterion_1() -> Result<String, String> {
    let t0 = Instant::now();
    let kernel = unrelated_kernel(3000, 20000, 41);
    let result = scan(Scenario::A, ModelId::M1, &kernel, 1);
    let elapsed = t0.elapsed();
    if result.theta_ticks != vec![40, 60] {
        return Err(format!(
            "expected theta ticks (40, 60), got {:?} with kl_min {:.3e}",
            result.theta_ticks, result.kl_min
        ));
    }
    if elapsed > Duration::from_secs(300) {
        return Err(format!("correct minimizer but took {elapsed:.0?} (budget 300 s)"));
    }
    Ok(format!(
        "theta_tilde = ({:.2}, {:.2}) on n=3000, m=20000 in {elapsed:.0?}",
        result.theta_tilde[0], result.theta_tilde[1]
    ))
}

// ---- criterion 2: residual weight recovered exactly under model 3 ----

fn criterion_2() -> Result<String, String> {
    let mut values = Vec::new();
    for (i, fst) in [0.1, 0.2, 0.3].into_iter().enumerate() {
        let kernel = bn_kernel(300, 10000, 3, fst, 101 + i as u64);
        let result = scan(Scenario::C, ModelId::M3, &kernel, 2);
        let sigma_e = result.theta_tilde[2];
        if (sigma_e - 0.40).abs() > 0.01 + 1e-12 {
            return Err(format!("fst={fst}: sigma_E2 = {sigma_e:.2}, expected 0.40 ± 0.01"));
        }
        values.push(format!("{sigma_e:.2}"));
    }
    Ok(format!("sigma_E2 = [{}] across fst 0.1/0.2/0.3 (n=300, r=2)", values.join(", ")))
}

// ---- criterion 3: kernel-weight inflation grows with structure ----

fn criterion_3() -> Result<String, String> {
    // Panels with many moderate subpopulations: inflation comes from
    // the alignment of the squared kernel with the kernel itself, and
    // these panels isolate that mechanism. A handful of very large
    // blocks instead piles the squared kernel's Frobenius mass onto
    // the kernel's null direction, where only the residual component
    // can absorb it, and the net effect flips sign.
    let mut ticks = Vec::new();
    for fst in [0.01, 0.1, 0.3] {
        let kernel = bn_kernel(300, 10000, 30, fst, 11);
        let result = scan(Scenario::A, ModelId::M1, &kernel, 1);
        ticks.push(result.theta_ticks[0]);
    }
    if !(ticks[0] <= ticks[1] && ticks[1] <= ticks[2]) {
        return Err(format!("theta_A ticks {ticks:?} are not non-decreasing in fst"));
    }
    if ticks[2] <= 40 {
        return Err(format!("theta_A = {:.2} at fst=0.3, expected > 0.40", ticks[2] as f64 / 100.0));
    }
    let shown: Vec<String> = ticks.iter().map(|t| format!("{:.2}", *t as f64 / 100.0)).collect();
    Ok(format!("theta_A = [{}] across fst 0.01/0.1/0.3 (n=300, 30 subpops)", shown.join(", ")))
}

// ---- criterion 4: block structure inflates the kernel weight ----

fn criterion_4() -> Result<String, String> {
    let kernel = unrelated_kernel(300, 10000, 21);
    let result = scan(Scenario::B, ModelId::M2, &kernel, 2);
    let ticks = result.theta_ticks[0];
    if ticks < 43 {
        return Err(format!(
            "theta_A = {:.2}, expected at least 0.43 (3 grid steps above 0.40)",
            ticks as f64 / 100.0
        ));
    }
    Ok(format!("theta_A = {:.2} on an unrelated panel (n=300, r=2)", ticks as f64 / 100.0))
}

// ---- criterion 5: ML estimates converge to the scan minimizer ----

fn criterion_5() -> Result<String, String> {
    let t0 = Instant::now();
    let kernel = bn_kernel(300, 10000, 30, 0.3, 11);
    let design = ReplicateDesign::new(300, 1).unwrap();
    let study = mc_study(ScenarioId::paired(Scenario::A), &kernel, &design, 100, 42)
        .map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();
    if study.failed_replicates > 0 {
        return Err(format!("{} replicates failed to fit", study.failed_replicates));
    }
    let gap = study.bias[0].abs();
    if gap > 0.02 {
        return Err(format!(
            "mean theta_A = {:.4} vs pseudo-true {:.2}: gap {gap:.4} exceeds 0.02",
            study.mean_estimate[0], study.theta_tilde[0]
        ));
    }
    if elapsed > Duration::from_secs(600) {
        return Err(format!("converged but took {elapsed:.0?} (budget 600 s)"));
    }
    Ok(format!(
        "mean theta_A over 100 fits = {:.4}, pseudo-true {:.2}, gap {gap:.4} in {elapsed:.0?}",
        study.mean_estimate[0], study.theta_tilde[0]
    ))
}

// ---- criterion 6: divergence agrees with its oracles ----

fn criterion_6() -> Result<String, String> {
    // Closed form vs the Monte-Carlo estimate of E_Q[log q - log p].
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_z = 0.0f64;
    for pair in 0..20 {
        let d = 2 + (pair % 9);
        let q = Covariance::new(random_spd(d, &mut rng), "q").map_err(|e| e.to_string())?;
        let p = Covariance::new(random_spd(d, &mut rng), "p").map_err(|e| e.to_string())?;
        let closed = kl_divergence(&q, &p).map_err(|e| e.to_string())?;

        let n_draws = 100_000;
        let draws = sample_mvn(&q, n_draws, 1000 + pair as u64).map_err(|e| e.to_string())?;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for i in 0..n_draws {
            let y: DVector<f64> = draws.row(i).transpose();
            let ratio = loglik(&q, &y).map_err(|e| e.to_string())?
                - loglik(&p, &y).map_err(|e| e.to_string())?;
            sum += ratio;
            sum_sq += ratio * ratio;
        }
        let mean = sum / n_draws as f64;
        let var = (sum_sq - sum * sum / n_draws as f64) / (n_draws as f64 - 1.0);
        let se = (var / n_draws as f64).sqrt();
        let z = (closed - mean).abs() / se;
        if z > 3.0 {
            return Err(format!(
                "pair {pair} (d={d}): closed form {closed:.5} vs Monte Carlo {mean:.5} ± {se:.5} (z = {z:.1})"
            ));
        }
        worst_z = worst_z.max(z);
    }

    // Replicate-structured shortcut vs assembling the full matrices.
    let mut worst_gap = 0.0f64;
    for n in 1..=6 {
        for r in 1..=3 {
            for instance in 0..2 {
                let mq = random_spd(n, &mut rng);
                let mp = random_spd(n, &mut rng);
                let cq = rng.random_range(0.2..1.5);
                let cp = rng.random_range(0.2..1.5);
                let fast = kl_balanced(&mq, cq, &mp, cp, r).map_err(|e| e.to_string())?;
                let dense_q = Covariance::new(expand_balanced(&mq, cq, r), "dense q")
                    .map_err(|e| e.to_string())?;
                let dense_p = Covariance::new(expand_balanced(&mp, cp, r), "dense p")
                    .map_err(|e| e.to_string())?;
                let dense = kl_divergence(&dense_q, &dense_p).map_err(|e| e.to_string())?;
                let gap = (fast - dense).abs();
                if gap > 1e-8 {
                    return Err(format!(
                        "n={n}, r={r}, instance {instance}: balanced {fast:.12} vs dense {dense:.12}"
                    ));
                }
                worst_gap = worst_gap.max(gap);
            }
        }
    }
    Ok(format!(
        "Monte Carlo worst |z| = {worst_z:.2} over 20 pairs; balanced-vs-dense worst gap = {worst_gap:.1e}"
    ))
}

/// Dense covariance with genotype-level matrix `m`, replicate count
/// `r`, and white noise `c`: observations are genotype-major.
fn expand_balanced(m: &DMatrix<f64>, c: f64, r: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let big = n * r;
    DMatrix::from_fn(big, big, |row, col| {
        let base = m[(row / r, col / r)];
        if row == col {
            base + c
        } else {
            base
        }
    })
}

// ---- criterion 7: structure sharpens the epistatic component ----

fn criterion_7() -> Result<String, String> {
    let theta = [0.4, 0.2, 0.4];
    let mut ses = Vec::new();
    for (label, kernel) in [
        ("structured", bn_kernel(300, 10000, 3, 0.3, 31)),
        ("unrelated", unrelated_kernel(300, 10000, 32)),
    ] {
        let n = kernel.n();
        let basis = vec![
            kernel.matrix().clone(),
            hadamard_square(&kernel).into_matrix(),
            DMatrix::identity(n, n),
        ];
        let names = vec!["sigma_A2".into(), "sigma_AA2".into(), "sigma_E2".into()];
        let spec = CovarianceSpec::new(names, basis, false).map_err(|e| e.to_string())?;
        let info = fisher_information(&spec, &theta).map_err(|e| e.to_string())?;

        // Independent check of the information matrix: second central
        // differences of theta -> (log det Sigma(theta)
        // + tr(Sigma(theta)^{-1} Sigma(theta0))) / 2, whose Hessian at
        // theta0 is exactly the information matrix.
        let fd = fd_information(&spec, &theta).map_err(|e| e.to_string())?;
        let scale = info.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let gap = (&info - &fd).iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if gap > 1e-4 * scale {
            return Err(format!(
                "{label}: finite-difference oracle disagrees: max gap {gap:.3e} vs scale {scale:.3e}"
            ));
        }

        let se = fisher_standard_errors(&info)
            .ok_or_else(|| format!("{label}: information matrix is singular"))?;
        ses.push((label, se[1]));
    }
    let (structured, unrelated) = (ses[0].1, ses[1].1);
    if structured >= unrelated {
        return Err(format!(
            "SE(sigma_AA2) structured {structured:.4} is not below unrelated {unrelated:.4}"
        ));
    }
    Ok(format!(
        "SE(sigma_AA2) structured {structured:.4} < unrelated {unrelated:.4} (n=300, theta=(0.4,0.2,0.4))"
    ))
}

/// Finite-difference Hessian of the expected negative log-likelihood
/// at its own minimum, which equals the Fisher information there.
fn fd_information(spec: &CovarianceSpec, theta: &[f64]) -> pseudotrue::Result<DMatrix<f64>> {
    let k = theta.len();
    let sigma0 = assemble(spec, theta);
    let g = |point: &[f64]| -> pseudotrue::Result<f64> {
        let sigma = Covariance::new(assemble(spec, point), "probe")?;
        let (chol, logdet) = pseudotrue::chol_logdet(&sigma)?;
        // tr(Sigma^{-1} Sigma0) via two triangular solves.
        let solved = chol.solve_lower_triangular(&sigma0).expect("factor is nonsingular");
        let solved = chol.transpose().solve_upper_triangular(&solved).expect("factor is nonsingular");
        Ok(0.5 * (logdet + solved.trace()))
    };
    let h = 1e-3;
    let mut fd = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let probe = |si: f64, sj: f64| -> pseudotrue::Result<f64> {
                let mut point = theta.to_vec();
                point[i] += si * h;
                point[j] += sj * h;
                g(&point)
            };
            fd[(i, j)] = (probe(1.0, 1.0)? - probe(1.0, -1.0)? - probe(-1.0, 1.0)?
                + probe(-1.0, -1.0)?)
                / (4.0 * h * h);
        }
    }
    Ok(fd)
}

fn assemble(spec: &CovarianceSpec, theta: &[f64]) -> DMatrix<f64> {
    let mut sigma = DMatrix::zeros(spec.dim(), spec.dim());
    for (w, basis) in theta.iter().zip(spec.basis()) {
        sigma += basis * *w;
    }
    sigma
}

// ---- criterion 8: randomized invariant suite ----

fn criterion_8() -> Result<String, String> {
    let cases = 100;
    let config = PropConfig { cases, ..PropConfig::default() };

    // Kernel invariants: unit mean diagonal, centered rows, PSD.
    run_property(
        "kernel invariants",
        config.clone(),
        (10usize..40, 60usize..200, any::<u64>(), proptest::bool::ANY),
        |(n, m, seed, structured)| {
            let kernel = if structured {
                bn_kernel(n, m, 3, 0.25, seed)
            } else {
                unrelated_kernel(n, m, seed)
            };
            let k = kernel.matrix();
            let mean_diag = k.diagonal().sum() / n as f64;
            prop_assert!((mean_diag - 1.0).abs() < 1e-9, "mean diagonal {mean_diag}");
            for i in 0..n {
                let row_sum: f64 = k.row(i).sum();
                prop_assert!(row_sum.abs() < 1e-8 * n as f64, "row {i} sums to {row_sum}");
            }
            let min_eig = k
                .clone_owned()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .fold(f64::INFINITY, |a, &x| a.min(x));
            prop_assert!(min_eig > -1e-8, "minimum eigenvalue {min_eig}");
            Ok(())
        },
    )?;

    // KL nonnegativity, and zero against itself.
    run_property(
        "KL nonnegativity",
        config.clone(),
        (2usize..8, any::<u64>()),
        |(d, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = Covariance::new(random_spd(d, &mut rng), "q").unwrap();
            let p = Covariance::new(random_spd(d, &mut rng), "p").unwrap();
            let kl = kl_divergence(&q, &p).unwrap();
            prop_assert!(kl >= 0.0, "KL(q, p) = {kl}");
            let self_kl = kl_divergence(&q, &q).unwrap();
            prop_assert!(self_kl.abs() < 1e-10, "KL(q, q) = {self_kl}");
            Ok(())
        },
    )?;

    // Grid enumeration: binomial count, exact integer ticks, no
    // duplicates.
    run_property(
        "grid enumeration",
        config.clone(),
        (1u32..60, 2usize..4),
        |(s, k)| {
            let grid = SimplexGrid::with_resolution(s, k).unwrap();
            let ticks = grid.tick_vectors();
            prop_assert_eq!(ticks.len() as u128, binomial(s as u128 + k as u128 - 1, k as u128 - 1));
            prop_assert_eq!(ticks.len(), grid.n_points());
            let mut seen = ticks.clone();
            seen.sort();
            seen.dedup();
            prop_assert_eq!(seen.len(), ticks.len(), "duplicate grid points");
            for t in &ticks {
                prop_assert_eq!(t.iter().sum::<u32>(), s);
                let weights = grid.weights_of(t);
                let total: f64 = weights.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12, "weights sum to {total}");
            }
            Ok(())
        },
    )?;

    // Scan determinism: the minimizer must not depend on how the grid
    // is scheduled across threads.
    run_property(
        "scan determinism",
        config.clone(),
        (6usize..14, any::<u64>()),
        |(n, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = Covariance::new(random_spd(n, &mut rng), "truth").unwrap();
            let spec = CovarianceSpec::new(
                vec!["structured".into(), "white".into()],
                vec![random_spd(n, &mut rng), DMatrix::identity(n, n)],
                true,
            )
            .unwrap();
            let grid = SimplexGrid::with_resolution(20, 2).unwrap();
            let mut outcomes = Vec::new();
            for threads in [1usize, 2] {
                let pool =
                    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
                let result = pool.install(|| minimize_kl(&truth, &spec, &grid)).unwrap();
                outcomes.push((result.theta_ticks.clone(), result.kl_min.to_bits()));
            }
            prop_assert_eq!(&outcomes[0], &outcomes[1], "scheduling changed the result");
            Ok(())
        },
    )?;

    // Scaling invariance: measuring the data in different units moves
    // every divergence by the same amount, so the minimizer stays put.
    run_property(
        "argmin scale invariance",
        config,
        (4usize..10, any::<u64>(), 0.1f64..10.0),
        |(n, seed, scale)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth_m = random_spd(n, &mut rng);
            let basis_m = random_spd(n, &mut rng);
            let names = vec!["structured".to_string(), "white".to_string()];
            let base = |c: f64| {
                let truth = Covariance::new(&truth_m * c, "truth").unwrap();
                let spec = CovarianceSpec::new(
                    names.clone(),
                    vec![&basis_m * c, DMatrix::identity(n, n) * c],
                    true,
                )
                .unwrap();
                let grid = SimplexGrid::with_resolution(25, 2).unwrap();
                minimize_kl(&truth, &spec, &grid).unwrap()
            };
            let plain = base(1.0);
            let scaled = base(scale);
            prop_assert_eq!(&plain.theta_ticks, &scaled.theta_ticks);
            prop_assert!(
                (plain.kl_min - scaled.kl_min).abs() < 1e-8 * (1.0 + plain.kl_min),
                "kl_min moved from {} to {}",
                plain.kl_min,
                scaled.kl_min
            );
            Ok(())
        },
    )?;

    Ok(format!("5 properties × {cases} random cases"))
}

fn run_property<S: Strategy>(
    name: &str,
    config: PropConfig,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(config);
    runner.run(&strategy, test).map_err(|e| match e {
        TestError::Fail(reason, _) => format!("{name}: {reason}"),
        TestError::Abort(reason) => format!("{name} aborted: {reason}"),
    })
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut result = 1u128;
    for i in 0..k {
        result = result * (n - i) / (i + 1);
    }
    result
}

// ---- the gate ----

#[test]
fn acceptance_criteria() {
    let criteria: &[(&str, fn() -> Result<String, String>)] = &[
        ("unrelated-panel null result", criterion_1),
        ("residual weight exact under three components", criterion_2),
        ("kernel-weight inflation grows with structure", criterion_3),
        ("replicate blocks inflate the kernel weight", criterion_4),
        ("ML estimates converge to the scan minimizer", criterion_5),
        ("divergence matches Monte-Carlo and dense oracles", criterion_6),
        ("structure sharpens the epistatic component", criterion_7),
        ("randomized invariant suite", criterion_8),
    ];
    let mut failures = Vec::new();
    for (index, (name, criterion)) in criteria.iter().enumerate() {
        let number = index + 1;
        let started = Instant::now();
        let outcome = panic::catch_unwind(criterion)
            .unwrap_or_else(|payload| Err(panic_message(payload.as_ref())));
        let elapsed = started.elapsed();
        match outcome {
            Ok(detail) => println!("criterion {number} ({name}): [PASS] {detail} [{elapsed:.1?}]"),
            Err(reason) => {
                println!("criterion {number} ({name}): [FAIL] {reason} [{elapsed:.1?}]");
                failures.push(number);
            }
        }
    }
    assert!(failures.is_empty(), "acceptance criteria failed: {failures:?}");
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        format!("panicked: {s}")
    } else if let Some(s) = payload.downcast_ref::<String>() {
        format!("panicked: {s}")
    } else {
        "panicked".to_string()
    }
}
