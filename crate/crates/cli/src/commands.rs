//! One function per subcommand, plus the shared emit helpers.

use std::fs;
use std::path::Path;

use serde_json::json;

use pseudotrue::{
    build_model, build_truth_with_weights, compute_gsm, fisher_information,
    fisher_standard_errors, fit_ml, mc_study, minimize_kl_with, read_kernel_tsv, read_marker_csv,
    read_phenotype_tsv, simulate_phenotypes, simulate_structured, simulate_unrelated,
    standardize_markers, write_kernel_tsv, write_marker_csv, write_phenotype_tsv, Constraint,
    Covariance, Error, Kernel, PopulationConfig, ReplicateDesign, Result, ScanOptions,
    ScenarioId, SimplexGrid, DEFAULT_TRUTH_WEIGHTS,
};

use crate::{
    Command, FisherArgs, FitArgs, GsmArgs, KlScanArgs, McStudyArgs, SimulateMarkersArgs,
    SimulatePhenoArgs, StructureArg, ThetaList,
};

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Gsm(args) => gsm(args),
        Command::SimulateMarkers(args) => simulate_markers(args),
        Command::SimulatePheno(args) => simulate_pheno(args),
        Command::KlScan(args) => kl_scan(args),
        Command::Fit(args) => fit(args),
        Command::Fisher(args) => fisher(args),
        Command::McStudy(args) => mc_study_cmd(args),
        Command::Experiment(args) => crate::experiment::run(args),
    }
}

/// 12 significant digits, matching the kernel/phenotype writers.
pub(crate) fn sig12(x: f64) -> String {
    format!("{x:.11e}")
}

fn emit_json(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).expect("plain JSON values always serialize");
    match out {
        Some(path) => fs::write(path, text + "\n")?,
        None => {
            use std::io::Write as _;
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{text}") {
                // The consumer hung up (e.g. piped into `head`); that is
                // their call, not a failure of ours.
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                other => other?,
            }
        }
    }
    Ok(())
}

fn gsm(args: GsmArgs) -> Result<()> {
    let panel = read_marker_csv(&args.markers)?;
    let std = standardize_markers(&panel)?;
    if !std.dropped.is_empty() {
        eprintln!(
            "dropped {} monomorphic marker(s): {}",
            std.dropped.len(),
            std.dropped.join(", ")
        );
    }
    if std.imputed_entries > 0 {
        eprintln!("mean-imputed {} missing entries", std.imputed_entries);
    }
    let kernel = compute_gsm(&std)?;
    write_kernel_tsv(&kernel, &args.out)?;
    eprintln!(
        "wrote {n} x {n} kernel from {m} markers to {}",
        args.out.display(),
        n = kernel.n(),
        m = std.matrix.ncols()
    );
    Ok(())
}

fn simulate_markers(args: SimulateMarkersArgs) -> Result<()> {
    let panel = match args.structure {
        StructureArg::Unrelated => {
            simulate_unrelated(&PopulationConfig::unrelated(args.n, args.m, args.seed))?
        }
        StructureArg::Bn => {
            let subpops = args.subpops.expect("clap enforces --subpops for bn");
            let fst = args.fst.expect("clap enforces --fst for bn");
            simulate_structured(&PopulationConfig::balding_nichols(
                args.n, args.m, subpops, fst, args.seed,
            ))?
        }
    };
    write_marker_csv(&panel, &args.out)?;
    eprintln!(
        "wrote {} samples x {} markers to {}",
        panel.n_samples(),
        panel.n_markers(),
        args.out.display()
    );
    Ok(())
}

fn simulate_pheno(args: SimulatePhenoArgs) -> Result<()> {
    let kernel = read_kernel_tsv(&args.kernel)?;
    let design = ReplicateDesign::new(kernel.n(), args.replicates)?;
    let weights = args.weights.unwrap_or(DEFAULT_TRUTH_WEIGHTS);
    let truth = build_truth_with_weights(args.scenario, &kernel, &design, weights)?;
    let draws = simulate_phenotypes(&truth, args.reps, args.seed)?;
    let genotype_ids = kernel.sample_ids().to_vec();
    write_phenotype_tsv(&draws, &genotype_ids, &design, &args.out)?;
    eprintln!(
        "wrote {} trait replicate(s) x {} observations to {}",
        draws.nrows(),
        draws.ncols(),
        args.out.display()
    );
    Ok(())
}

/// `--truth-cov` takes either a scenario letter or a covariance TSV path.
fn load_truth(
    spec: &str,
    kernel: &Kernel,
    design: &ReplicateDesign,
    weights: Option<[f64; 3]>,
) -> Result<Covariance> {
    if let Ok(scenario) = crate::parse_scenario(spec) {
        let weights = weights.unwrap_or(DEFAULT_TRUTH_WEIGHTS);
        return build_truth_with_weights(scenario, kernel, design, weights);
    }
    if weights.is_some() {
        return Err(Error::InvalidInput(
            "--weights only applies when --truth-cov names a scenario".into(),
        ));
    }
    let table = read_kernel_tsv(Path::new(spec))?;
    Covariance::new(table.into_matrix(), format!("covariance from {spec}"))
}

fn kl_scan(args: KlScanArgs) -> Result<()> {
    let kernel = read_kernel_tsv(&args.kernel)?;
    let design = ReplicateDesign::new(kernel.n(), args.replicates)?;
    let model = build_model(args.model, &kernel, &design)?;
    let truth = load_truth(&args.truth_cov, &kernel, &design, args.weights)?;
    let grid = SimplexGrid::with_step(args.step, model.n_components())?;
    let options = ScanOptions { keep_curve: args.curve.is_some() };
    let result = minimize_kl_with(&truth, &model, &grid, &options)?;
    if let Some(path) = &args.curve {
        write_curve_tsv(model.names(), result.curve.as_deref().unwrap_or(&[]), path)?;
    }
    emit_json(
        &json!({
            "components": model.names(),
            "theta_tilde": result.theta_tilde,
            "theta_ticks": result.theta_ticks,
            "kl_min": result.kl_min,
            "ties": result.ties,
            "skipped_points": result.skipped_points,
            "evaluated_points": result.evaluated_points,
            "grid_resolution": grid.resolution(),
        }),
        args.out.as_deref(),
    )
}

fn write_curve_tsv(names: &[String], curve: &[(Vec<f64>, f64)], path: &Path) -> Result<()> {
    let mut lines = Vec::with_capacity(curve.len() + 1);
    lines.push(format!("{}\tkl", names.join("\t")));
    for (theta, kl) in curve {
        let mut cols: Vec<String> = theta.iter().copied().map(sig12).collect();
        cols.push(sig12(*kl));
        lines.push(cols.join("\t"));
    }
    fs::write(path, lines.join("\n") + "\n")?;
    Ok(())
}

fn fit(args: FitArgs) -> Result<()> {
    let kernel = read_kernel_tsv(&args.kernel)?;
    let design = ReplicateDesign::new(kernel.n(), args.replicates)?;
    let model = build_model(args.model, &kernel, &design)?;
    let (pheno, _labels) = read_phenotype_tsv(&args.pheno)?;
    let constraint = if args.free_scale { Constraint::Free } else { Constraint::SumToOne };
    let mut fits = Vec::with_capacity(pheno.nrows());
    for i in 0..pheno.nrows() {
        let y = pheno.row(i).transpose();
        let fit = fit_ml(&y, &model, constraint)?;
        fits.push(json!({
            "trait": i,
            "theta_hat": fit.theta_hat,
            "loglik": fit.loglik,
            "standard_errors": fit.standard_errors,
            "converged": fit.converged,
            "boundary": fit.boundary,
            "note": fit.note,
            "n_evaluations": fit.n_evaluations,
        }));
    }
    emit_json(
        &json!({
            "components": model.names(),
            "constraint": if args.free_scale { "free-scale" } else { "sum-to-one" },
            "fits": fits,
        }),
        args.out.as_deref(),
    )
}

fn fisher(args: FisherArgs) -> Result<()> {
    let kernel = read_kernel_tsv(&args.kernel)?;
    let design = ReplicateDesign::new(kernel.n(), args.replicates)?;
    let model = build_model(args.model, &kernel, &design)?;
    let ThetaList(theta) = args.theta;
    let info = fisher_information(&model, &theta)?;
    let standard_errors = fisher_standard_errors(&info);
    let rows: Vec<Vec<f64>> = (0..info.nrows())
        .map(|i| (0..info.ncols()).map(|j| info[(i, j)]).collect())
        .collect();
    emit_json(
        &json!({
            "components": model.names(),
            "theta": theta,
            "information": rows,
            "standard_errors": standard_errors,
        }),
        args.out.as_deref(),
    )
}

fn mc_study_cmd(args: McStudyArgs) -> Result<()> {
    let kernel = read_kernel_tsv(&args.kernel)?;
    let design = ReplicateDesign::new(kernel.n(), args.replicates)?;
    let id = match args.model {
        Some(model) => ScenarioId::unpaired(args.scenario, model),
        None => ScenarioId::paired(args.scenario),
    };
    let result = mc_study(id, &kernel, &design, args.reps, args.seed)?;
    let names = id.model.component_names();
    if let Some(path) = &args.estimates_out {
        let mut lines = Vec::with_capacity(result.estimates.nrows() + 1);
        lines.push(format!("replicate\t{}", names.join("\t")));
        for i in 0..result.estimates.nrows() {
            let cols: Vec<String> =
                (0..result.estimates.ncols()).map(|j| sig12(result.estimates[(i, j)])).collect();
            lines.push(format!("{i}\t{}", cols.join("\t")));
        }
        fs::write(path, lines.join("\n") + "\n")?;
    }
    emit_json(
        &json!({
            "scenario": args.scenario.to_string(),
            "model": id.model.number(),
            "components": names,
            "theta_tilde": result.theta_tilde,
            "mean_estimate": result.mean_estimate,
            "bias": result.bias,
            "n_requested": args.reps,
            "failed_replicates": result.failed_replicates,
        }),
        args.out.as_deref(),
    )
}
