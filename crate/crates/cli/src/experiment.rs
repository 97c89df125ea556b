//! The `experiment` subcommand: read a flat key-value config describing
//! marker panels and truth scenarios, scan every panel × scenario cell
//! for its pseudo-true weights, and write a TSV report plus a JSON
//! metadata sidecar.
//!
//! The report is deterministic: identical config and seeds reproduce it
//! byte for byte. Everything run-dependent (timestamps, runtimes) lives
//! in the sidecar.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde_json::json;

use pseudotrue::{
    build_model, build_truth_with_weights, compute_gsm, minimize_kl, read_marker_csv,
    simulate_structured, simulate_unrelated, standardize_markers, Error, Kernel, ModelId,
    PopulationConfig, ReplicateDesign, Result, Scenario, SimplexGrid, DEFAULT_TRUTH_WEIGHTS,
};

use crate::ExperimentArgs;

struct ExperimentConfig {
    step: f64,
    replicates: usize,
    seed: u64,
    weights: [f64; 3],
    scenarios: Vec<Scenario>,
    out: Option<PathBuf>,
    panels: Vec<PanelSpec>,
}

struct PanelSpec {
    label: String,
    source: PanelSource,
    /// Explicit per-panel seed; defaults to the master seed plus the
    /// panel's position.
    seed: Option<u64>,
}

enum PanelSource {
    /// Marker CSV on disk.
    Markers(PathBuf),
    /// Panel simulated on the fly.
    Simulated { structure: PanelStructure, n: usize, m: usize },
}

enum PanelStructure {
    Unrelated,
    BaldingNichols { subpops: usize, fst: f64 },
}

fn config_error(lineno: usize, message: impl std::fmt::Display) -> Error {
    Error::Parse(format!("config line {lineno}: {message}"))
}

fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut step = None;
    let mut replicates = None;
    let mut seed = None;
    let mut weights = None;
    let mut scenarios: Option<Vec<Scenario>> = None;
    let mut out = None;
    let mut panels = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        let lineno = index + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| config_error(lineno, format!("expected `key = value`, got {raw:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "step" => {
                step = Some(value.parse::<f64>().map_err(|_| {
                    config_error(lineno, format!("cannot parse step {value:?}"))
                })?);
            }
            "replicates" => {
                replicates = Some(value.parse::<usize>().map_err(|_| {
                    config_error(lineno, format!("cannot parse replicates {value:?}"))
                })?);
            }
            "seed" => {
                seed = Some(value.parse::<u64>().map_err(|_| {
                    config_error(lineno, format!("cannot parse seed {value:?}"))
                })?);
            }
            "weights" => {
                weights = Some(
                    crate::parse_weights(value).map_err(|e| config_error(lineno, e))?,
                );
            }
            "scenarios" => {
                let mut list = Vec::new();
                for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                    let scenario =
                        crate::parse_scenario(part).map_err(|e| config_error(lineno, e))?;
                    if list.contains(&scenario) {
                        return Err(config_error(lineno, format!("duplicate scenario {part}")));
                    }
                    list.push(scenario);
                }
                scenarios = Some(list);
            }
            "out" => out = Some(PathBuf::from(value)),
            "panel" => panels.push(parse_panel(value, lineno)?),
            _ => return Err(config_error(lineno, format!("unknown key {key:?}"))),
        }
    }
    Ok(ExperimentConfig {
        step: step.unwrap_or(0.01),
        replicates: replicates.unwrap_or(2),
        seed: seed.unwrap_or(1),
        weights: weights.unwrap_or(DEFAULT_TRUTH_WEIGHTS),
        scenarios: scenarios.unwrap_or_default(),
        out,
        panels,
    })
}

/// `panel = <label> key=value ...` with keys `file` (marker CSV) or
/// `structure`/`n`/`m` (+ `subpops`/`fst` for `bn`), plus optional `seed`.
fn parse_panel(value: &str, lineno: usize) -> Result<PanelSpec> {
    let mut tokens = value.split_whitespace();
    let label = tokens
        .next()
        .filter(|t| !t.contains('='))
        .ok_or_else(|| config_error(lineno, "panel needs a label before its key=value fields"))?
        .to_owned();
    let mut file = None;
    let mut structure = None;
    let mut n = None;
    let mut m = None;
    let mut subpops = None;
    let mut fst = None;
    let mut seed = None;
    for token in tokens {
        let (key, value) = token.split_once('=').ok_or_else(|| {
            config_error(lineno, format!("panel field {token:?} is not key=value"))
        })?;
        let bad = |what: &str| config_error(lineno, format!("cannot parse {what} {value:?}"));
        match key {
            "file" => file = Some(PathBuf::from(value)),
            "structure" => match value {
                "unrelated" | "bn" => structure = Some(value.to_owned()),
                _ => {
                    return Err(config_error(
                        lineno,
                        format!("unknown structure {value:?} (expected unrelated or bn)"),
                    ))
                }
            },
            "n" => n = Some(value.parse::<usize>().map_err(|_| bad("n"))?),
            "m" => m = Some(value.parse::<usize>().map_err(|_| bad("m"))?),
            "subpops" => subpops = Some(value.parse::<usize>().map_err(|_| bad("subpops"))?),
            "fst" => fst = Some(value.parse::<f64>().map_err(|_| bad("fst"))?),
            "seed" => seed = Some(value.parse::<u64>().map_err(|_| bad("seed"))?),
            _ => return Err(config_error(lineno, format!("unknown panel field {key:?}"))),
        }
    }
    let source = match (file, structure) {
        (Some(_), Some(_)) => {
            return Err(config_error(
                lineno,
                "panel takes either file=... or structure=..., not both",
            ))
        }
        (Some(path), None) => {
            if n.is_some() || m.is_some() || subpops.is_some() || fst.is_some() {
                return Err(config_error(
                    lineno,
                    "file panels take their size from the file; drop n/m/subpops/fst",
                ));
            }
            PanelSource::Markers(path)
        }
        (None, Some(structure)) => {
            let n = n.ok_or_else(|| config_error(lineno, "simulated panel needs n=..."))?;
            let m = m.ok_or_else(|| config_error(lineno, "simulated panel needs m=..."))?;
            let structure = if structure == "bn" {
                let subpops = subpops
                    .ok_or_else(|| config_error(lineno, "bn panel needs subpops=..."))?;
                let fst = fst.ok_or_else(|| config_error(lineno, "bn panel needs fst=..."))?;
                PanelStructure::BaldingNichols { subpops, fst }
            } else {
                if subpops.is_some() || fst.is_some() {
                    return Err(config_error(
                        lineno,
                        "subpops/fst only apply to structure=bn",
                    ));
                }
                PanelStructure::Unrelated
            };
            PanelSource::Simulated { structure, n, m }
        }
        (None, None) => {
            return Err(config_error(
                lineno,
                "panel needs file=... or structure=... n=... m=...",
            ))
        }
    };
    Ok(PanelSpec { label, source, seed })
}

struct BuiltPanel {
    label: String,
    kernel: Kernel,
    meta: serde_json::Value,
}

fn build_panel(spec: &PanelSpec, index: usize, master_seed: u64) -> Result<BuiltPanel> {
    let (raw, source_meta) = match &spec.source {
        PanelSource::Markers(path) => {
            let raw = read_marker_csv(path)?;
            let meta = json!({ "kind": "markers", "file": path.display().to_string() });
            (raw, meta)
        }
        PanelSource::Simulated { structure, n, m } => {
            let seed = spec.seed.unwrap_or(master_seed.wrapping_add(index as u64));
            let (raw, meta) = match structure {
                PanelStructure::Unrelated => (
                    simulate_unrelated(&PopulationConfig::unrelated(*n, *m, seed))?,
                    json!({ "kind": "simulated", "structure": "unrelated",
                            "n": n, "m": m, "seed": seed }),
                ),
                PanelStructure::BaldingNichols { subpops, fst } => (
                    simulate_structured(&PopulationConfig::balding_nichols(
                        *n, *m, *subpops, *fst, seed,
                    ))?,
                    json!({ "kind": "simulated", "structure": "balding_nichols",
                            "n": n, "m": m, "subpops": subpops, "fst": fst, "seed": seed }),
                ),
            };
            (raw, meta)
        }
    };
    let std = standardize_markers(&raw)?;
    let kernel = compute_gsm(&std)?;
    let mut meta = source_meta;
    meta["label"] = json!(spec.label);
    meta["n"] = json!(kernel.n());
    meta["markers_used"] = json!(std.matrix.ncols());
    meta["dropped_markers"] = json!(std.dropped.len());
    Ok(BuiltPanel { label: spec.label.clone(), kernel, meta })
}

struct CellOk {
    model: ModelId,
    design_replicates: usize,
    theta_tilde: Vec<f64>,
    theta_ticks: Vec<u32>,
    kl_min: f64,
    skipped_points: usize,
    evaluated_points: usize,
}

struct Cell {
    panel: usize,
    scenario: Scenario,
    outcome: std::result::Result<CellOk, String>,
    runtime_s: f64,
}

fn run_cell(
    kernel: &Kernel,
    scenario: Scenario,
    step: f64,
    replicates: usize,
    weights: [f64; 3],
) -> Result<CellOk> {
    // Scenario A lives on unreplicated individuals; B and C use the
    // configured replicate count.
    let r = if scenario == Scenario::A { 1 } else { replicates };
    let design = ReplicateDesign::new(kernel.n(), r)?;
    let model_id = scenario.paired_model();
    let model = build_model(model_id, kernel, &design)?;
    let truth = build_truth_with_weights(scenario, kernel, &design, weights)?;
    let grid = SimplexGrid::with_step(step, model.n_components())?;
    let scan = minimize_kl(&truth, &model, &grid)?;
    Ok(CellOk {
        model: model_id,
        design_replicates: r,
        theta_tilde: scan.theta_tilde,
        theta_ticks: scan.theta_ticks,
        kl_min: scan.kl_min,
        skipped_points: scan.skipped_points,
        evaluated_points: scan.evaluated_points,
    })
}

pub fn run(args: ExperimentArgs) -> Result<()> {
    let total_start = Instant::now();
    let text = std::fs::read_to_string(&args.config)?;
    let mut config = parse_config(&text)?;
    // Command-line flags override config values.
    if let Some(step) = args.step {
        config.step = step;
    }
    if let Some(replicates) = args.replicates {
        config.replicates = replicates;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(weights) = args.weights {
        config.weights = weights;
    }
    let out = args
        .out
        .or(config.out.take())
        .ok_or_else(|| {
            Error::InvalidInput("no output path: set `out` in the config or pass --out".into())
        })?;
    if config.scenarios.is_empty() {
        return Err(Error::InvalidInput(
            "nothing to run: configure at least one scenario".into(),
        ));
    }
    if config.panels.is_empty() {
        return Err(Error::InvalidInput(
            "nothing to run: configure at least one panel".into(),
        ));
    }
    {
        let mut labels: Vec<&str> = config.panels.iter().map(|p| p.label.as_str()).collect();
        labels.sort_unstable();
        if let Some(dup) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput(format!("duplicate panel label {:?}", dup[0])));
        }
    }
    // Validate the step before any panel work.
    let grid_resolution = SimplexGrid::with_step(config.step, 2)?.resolution();

    let panels = config
        .panels
        .iter()
        .enumerate()
        .map(|(i, spec)| build_panel(spec, i, config.seed))
        .collect::<Result<Vec<_>>>()?;

    // Cells are independent; evaluate them in parallel and reassemble in
    // the fixed panel-major order.
    let pairs: Vec<(usize, Scenario)> = (0..panels.len())
        .flat_map(|pi| config.scenarios.iter().map(move |&s| (pi, s)))
        .collect();
    let cells: Vec<Cell> = pairs
        .into_par_iter()
        .map(|(pi, scenario)| {
            let start = Instant::now();
            let outcome =
                run_cell(&panels[pi].kernel, scenario, config.step, config.replicates, config.weights)
                    .map_err(|e| e.to_string());
            Cell { panel: pi, scenario, outcome, runtime_s: start.elapsed().as_secs_f64() }
        })
        .collect();
    for cell in cells.iter().filter(|c| c.outcome.is_err()) {
        if let Err(message) = &cell.outcome {
            eprintln!(
                "cell {} x scenario {} failed: {message}",
                panels[cell.panel].label, cell.scenario
            );
        }
    }

    // Report: one row per panel, pseudo-true weights at 2 decimals to
    // match the grid step, `NA` for failed cells.
    let mut header: Vec<String> = vec!["panel".into(), "n".into(), "r".into()];
    for &scenario in &config.scenarios {
        for name in scenario.paired_model().component_names() {
            header.push(format!("{scenario}_{name}"));
        }
    }
    header.push("skipped_points".into());
    let n_scenarios = config.scenarios.len();
    let mut lines = vec![header.join("\t")];
    for (pi, panel) in panels.iter().enumerate() {
        let mut cols = vec![
            panel.label.clone(),
            panel.kernel.n().to_string(),
            config.replicates.to_string(),
        ];
        let mut skipped_total = 0usize;
        for (si, &scenario) in config.scenarios.iter().enumerate() {
            let cell = &cells[pi * n_scenarios + si];
            debug_assert!(cell.panel == pi && cell.scenario == scenario);
            match &cell.outcome {
                Ok(ok) => {
                    cols.extend(ok.theta_tilde.iter().map(|w| format!("{w:.2}")));
                    skipped_total += ok.skipped_points;
                }
                Err(_) => {
                    let k = scenario.paired_model().component_names().len();
                    cols.extend(std::iter::repeat("NA".to_owned()).take(k));
                }
            }
        }
        cols.push(skipped_total.to_string());
        lines.push(cols.join("\t"));
    }
    std::fs::write(&out, lines.join("\n") + "\n")?;

    // Sidecar: everything needed to reproduce the run bit-exactly, plus
    // the run-dependent diagnostics kept out of the report.
    let cell_meta: Vec<serde_json::Value> = cells
        .iter()
        .map(|cell| {
            let mut value = json!({
                "panel": panels[cell.panel].label,
                "scenario": cell.scenario.to_string(),
                "runtime_s": cell.runtime_s,
            });
            match &cell.outcome {
                Ok(ok) => {
                    value["ok"] = json!(true);
                    value["model"] = json!(ok.model.number());
                    value["design_replicates"] = json!(ok.design_replicates);
                    value["components"] = json!(ok.model.component_names());
                    value["theta_tilde"] = json!(ok.theta_tilde);
                    value["theta_ticks"] = json!(ok.theta_ticks);
                    value["kl_min"] = json!(ok.kl_min);
                    value["skipped_points"] = json!(ok.skipped_points);
                    value["evaluated_points"] = json!(ok.evaluated_points);
                }
                Err(message) => {
                    value["ok"] = json!(false);
                    value["error"] = json!(message);
                }
            }
            value
        })
        .collect();
    let timestamp_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let sidecar = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "timestamp_unix": timestamp_unix,
        "grid_step": config.step,
        "grid_resolution": grid_resolution,
        "replicates": config.replicates,
        "seed": config.seed,
        "truth_weights": config.weights,
        "scenarios": config.scenarios.iter().map(Scenario::to_string).collect::<Vec<_>>(),
        "panels": panels.iter().map(|p| p.meta.clone()).collect::<Vec<_>>(),
        "cells": cell_meta,
        "report": out.display().to_string(),
        "total_runtime_s": total_start.elapsed().as_secs_f64(),
    });
    let sidecar_path = sidecar_path_for(&out);
    std::fs::write(
        &sidecar_path,
        serde_json::to_string_pretty(&sidecar).expect("plain JSON values always serialize")
            + "\n",
    )?;
    eprintln!(
        "wrote report to {} and metadata to {}",
        out.display(),
        sidecar_path.display()
    );
    Ok(())
}

/// `report.tsv` → `report.meta.json`; extensionless paths just append.
fn sidecar_path_for(out: &Path) -> PathBuf {
    out.with_extension("meta.json")
}
