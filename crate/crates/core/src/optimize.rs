//! Derivative-free simplex descent (Nelder–Mead), shared by the sub-grid
//! KL refinement and the three-component maximum-likelihood fitter.
//!
//! Every candidate the algorithm generates — centroids, reflections,
//! expansions, contractions, shrinks — is an affine combination of the
//! initial vertices, so a linear constraint satisfied by all of them
//! (such as weights summing to one) is preserved throughout, up to
//! floating-point drift. Feasibility is the caller's business: the
//! objective must return `+∞` outside its feasible region, and `NaN`s are
//! treated as `+∞`.

/// Outcome of a descent: the best point ever evaluated (never worse than
/// the best initial vertex) and whether the simplex collapsed below
/// tolerance (as opposed to the iteration cap firing first).
pub(crate) struct Minimum {
    pub point: Vec<f64>,
    pub converged: bool,
}

fn combine(a: &[f64], wa: f64, b: &[f64], wb: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| wa * x + wb * y).collect()
}

/// Initial simplex for sum-constrained descent around `start`: one vertex
/// at `start` itself, plus one per other coordinate obtained by moving
/// `h` of mass to it from the largest coordinate (the one guaranteed to
/// have room). Every vertex keeps the coordinate sum of `start` exactly.
pub(crate) fn simplex_around(start: &[f64], h: f64) -> Vec<Vec<f64>> {
    let k = start.len();
    let donor = (0..k)
        .max_by(|&i, &j| start[i].partial_cmp(&start[j]).unwrap_or(std::cmp::Ordering::Equal))
        .unwrap_or(0);
    let h = h.min(start[donor] / 2.0).max(1e-4);
    let mut simplex = vec![start.to_vec()];
    for i in 0..k {
        if i == donor {
            continue;
        }
        let mut vertex = start.to_vec();
        vertex[i] += h;
        vertex[donor] -= h;
        simplex.push(vertex);
    }
    simplex
}

/// Minimize `f` over the affine hull of `initial`, stopping when the
/// simplex diameter (max ∞-norm distance from the best vertex) drops
/// below `tol` or after `max_iter` iterations.
pub(crate) fn nelder_mead(
    f: &mut dyn FnMut(&[f64]) -> f64,
    initial: Vec<Vec<f64>>,
    tol: f64,
    max_iter: usize,
) -> Minimum {
    assert!(initial.len() >= 2, "simplex needs at least two vertices");
    let m = initial.len();
    let mut best_point: Option<Vec<f64>> = None;
    let mut best_value = f64::INFINITY;

    let mut verts: Vec<(Vec<f64>, f64)> = Vec::with_capacity(m);
    for p in initial {
        let mut v = f(&p);
        if v.is_nan() {
            v = f64::INFINITY;
        }
        if v < best_value {
            best_value = v;
            best_point = Some(p.clone());
        }
        verts.push((p, v));
    }
    // Fall back to the first vertex if everything is infeasible.
    let mut best_point = best_point.unwrap_or_else(|| verts[0].0.clone());
    let mut converged = false;

    for _ in 0..max_iter {
        verts.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let diameter = verts[1..]
            .iter()
            .map(|(p, _)| {
                p.iter()
                    .zip(&verts[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max)
            })
            .fold(0.0f64, f64::max);
        if diameter < tol {
            converged = true;
            break;
        }

        // Centroid of all vertices but the worst.
        let dim = verts[0].0.len();
        let mut centroid = vec![0.0; dim];
        for (p, _) in &verts[..m - 1] {
            for (c, x) in centroid.iter_mut().zip(p) {
                *c += x;
            }
        }
        for c in &mut centroid {
            *c /= (m - 1) as f64;
        }

        let mut try_point = |point: Vec<f64>,
                             best_value: &mut f64,
                             best_point: &mut Vec<f64>| {
            let mut v = f(&point);
            if v.is_nan() {
                v = f64::INFINITY;
            }
            if v < *best_value {
                *best_value = v;
                *best_point = point.clone();
            }
            (point, v)
        };

        let worst = verts[m - 1].clone();
        let (reflected, f_r) = try_point(
            combine(&centroid, 2.0, &worst.0, -1.0),
            &mut best_value,
            &mut best_point,
        );

        if f_r < verts[0].1 {
            // Greedy expansion.
            let (expanded, f_e) = try_point(
                combine(&centroid, 3.0, &worst.0, -2.0),
                &mut best_value,
                &mut best_point,
            );
            verts[m - 1] = if f_e < f_r { (expanded, f_e) } else { (reflected, f_r) };
            continue;
        }
        if f_r < verts[m - 2].1 {
            verts[m - 1] = (reflected, f_r);
            continue;
        }

        let accepted = if f_r < worst.1 {
            // Outside contraction, halfway between centroid and reflection.
            let (oc, f_oc) = try_point(
                combine(&centroid, 0.5, &reflected, 0.5),
                &mut best_value,
                &mut best_point,
            );
            (f_oc <= f_r).then_some((oc, f_oc))
        } else {
            // Inside contraction, halfway between centroid and the worst.
            let (ic, f_ic) = try_point(
                combine(&centroid, 0.5, &worst.0, 0.5),
                &mut best_value,
                &mut best_point,
            );
            (f_ic < worst.1).then_some((ic, f_ic))
        };

        match accepted {
            Some(vertex) => verts[m - 1] = vertex,
            None => {
                // Shrink every non-best vertex toward the best.
                for i in 1..m {
                    let shrunk = combine(&verts[0].0, 0.5, &verts[i].0, 0.5);
                    verts[i] = try_point(shrunk, &mut best_value, &mut best_point);
                }
            }
        }
    }

    Minimum { point: best_point, converged }
}
