//! Marker panels and the similarity kernels built from them.
//!
//! The pipeline is: raw dosage matrix → [`standardize_markers`] (impute,
//! drop monomorphic columns, center/scale) → [`compute_gsm`] (cross-product
//! kernel) → optionally [`hadamard_square`] (entrywise square, the kernel of
//! pairwise marker-interaction effects) and [`expand_replicates`] (lift a
//! genotype-level matrix to replicated observations).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;

/// How a kernel was produced. Purely informational; no operation branches
/// on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// Cross-product of standardized markers (additive relationships).
    Additive,
    /// Entrywise square of an additive kernel (interaction relationships).
    Epistatic,
    /// Anything else, e.g. a kernel read from a file.
    Custom,
}

/// A dosage-like marker panel: `n` samples by `m` markers, with an optional
/// missingness mask.
///
/// Entries are typically allele counts in `{0, 1, 2}` but any finite real
/// coding works; standardization is invariant to affine recodings of a
/// column. Entries flagged missing may hold any payload (including NaN) and
/// are never read as data.
#[derive(Debug, Clone)]
pub struct MarkerMatrix {
    values: DMatrix<f64>,
    missing: DMatrix<bool>,
    sample_ids: Vec<String>,
    marker_ids: Vec<String>,
}

fn check_ids(ids: &[String], what: &str, expected: usize) -> Result<()> {
    if ids.len() != expected {
        return Err(Error::InvalidInput(format!(
            "{what} count {} does not match matrix dimension {expected}",
            ids.len()
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        if id.is_empty() {
            return Err(Error::InvalidInput(format!("empty {what}")));
        }
        if id.chars().any(|c| c.is_control()) {
            return Err(Error::InvalidInput(format!("{what} {id:?} contains control characters")));
        }
        if !seen.insert(id) {
            return Err(Error::InvalidInput(format!("duplicate {what} {id:?}")));
        }
    }
    Ok(())
}

impl MarkerMatrix {
    /// Build a panel with no missing entries. Every value must be finite.
    pub fn new(
        values: DMatrix<f64>,
        sample_ids: Vec<String>,
        marker_ids: Vec<String>,
    ) -> Result<Self> {
        let missing = DMatrix::from_element(values.nrows(), values.ncols(), false);
        Self::with_missing(values, missing, sample_ids, marker_ids)
    }

    /// Build a panel with an explicit missingness mask (same shape as
    /// `values`). Non-missing entries must be finite.
    pub fn with_missing(
        values: DMatrix<f64>,
        missing: DMatrix<bool>,
        sample_ids: Vec<String>,
        marker_ids: Vec<String>,
    ) -> Result<Self> {
        if missing.shape() != values.shape() {
            return Err(Error::InvalidInput(format!(
                "missing mask shape {:?} does not match values shape {:?}",
                missing.shape(),
                values.shape()
            )));
        }
        check_ids(&sample_ids, "sample id", values.nrows())?;
        check_ids(&marker_ids, "marker id", values.ncols())?;
        for j in 0..values.ncols() {
            for i in 0..values.nrows() {
                if !missing[(i, j)] && !values[(i, j)].is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "non-finite value {} at sample {:?}, marker {:?} outside the missing mask",
                        values[(i, j)],
                        sample_ids[i],
                        marker_ids[j]
                    )));
                }
            }
        }
        Ok(Self { values, missing, sample_ids, marker_ids })
    }

    /// Number of samples (rows).
    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    /// Number of markers (columns).
    pub fn n_markers(&self) -> usize {
        self.values.ncols()
    }

    /// Raw values; entries under the mask are meaningless.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Missingness mask (`true` = missing).
    pub fn missing(&self) -> &DMatrix<bool> {
        &self.missing
    }

    /// Sample identifiers, row order.
    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    /// Marker identifiers, column order.
    pub fn marker_ids(&self) -> &[String] {
        &self.marker_ids
    }
}

/// Output of [`standardize_markers`]: the retained, centered, scaled panel
/// plus a report of what was imputed and dropped.
#[derive(Debug, Clone)]
pub struct StandardizedMarkers {
    /// `n × m'` matrix; every column has mean 0 and population variance 1.
    pub matrix: DMatrix<f64>,
    /// Sample identifiers, row order (unchanged from the input).
    pub sample_ids: Vec<String>,
    /// Identifiers of the retained columns, in input order.
    pub marker_ids: Vec<String>,
    /// Identifiers of columns dropped as monomorphic (or entirely missing).
    pub dropped: Vec<String>,
    /// Number of individual entries that were mean-imputed.
    pub imputed_entries: usize,
}

/// Center and scale each marker column to mean 0, variance 1 (population
/// variance, divisor `n`), mean-imputing missing entries first.
///
/// Monomorphic columns — all observed values identical, which includes
/// all-missing columns — carry no information after centering and are
/// dropped; their identifiers are reported in
/// [`StandardizedMarkers::dropped`]. Errors with
/// [`Error::NoInformativeMarkers`] when nothing survives.
pub fn standardize_markers(raw: &MarkerMatrix) -> Result<StandardizedMarkers> {
    let n = raw.n_samples();
    let m = raw.n_markers();
    if n == 0 || m == 0 {
        return Err(Error::InvalidInput("marker matrix must be non-empty".into()));
    }

    let mut columns: Vec<f64> = Vec::new();
    let mut retained_ids = Vec::new();
    let mut dropped = Vec::new();
    let mut imputed_entries = 0usize;

    for j in 0..m {
        // Observed (non-missing) entries of this column.
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut first_observed = None;
        let mut polymorphic = false;
        for i in 0..n {
            if raw.missing[(i, j)] {
                continue;
            }
            let v = raw.values[(i, j)];
            sum += v;
            count += 1;
            match first_observed {
                None => first_observed = Some(v),
                // Bitwise comparison on purpose: "monomorphic" means a single
                // distinct observed value, and float summation noise must not
                // resurrect a constant column.
                Some(f) if v != f => polymorphic = true,
                Some(_) => {}
            }
        }
        if count == 0 || !polymorphic {
            dropped.push(raw.marker_ids[j].clone());
            continue;
        }

        let mean = sum / count as f64;
        // Imputed entries equal the mean exactly, so only observed entries
        // contribute to the variance sum; the divisor is n regardless.
        let mut ss = 0.0;
        for i in 0..n {
            if !raw.missing[(i, j)] {
                let d = raw.values[(i, j)] - mean;
                ss += d * d;
            }
        }
        let var = ss / n as f64;
        if var <= 0.0 || !var.is_finite() {
            // Defensive: distinct observed values whose squared deviations
            // underflow. Treat as uninformative.
            dropped.push(raw.marker_ids[j].clone());
            continue;
        }
        let sd = var.sqrt();
        for i in 0..n {
            if raw.missing[(i, j)] {
                columns.push(0.0); // (mean - mean) / sd
                imputed_entries += 1;
            } else {
                columns.push((raw.values[(i, j)] - mean) / sd);
            }
        }
        retained_ids.push(raw.marker_ids[j].clone());
    }

    if retained_ids.is_empty() {
        return Err(Error::NoInformativeMarkers);
    }
    let matrix = DMatrix::from_vec(n, retained_ids.len(), columns);
    Ok(StandardizedMarkers {
        matrix,
        sample_ids: raw.sample_ids.to_vec(),
        marker_ids: retained_ids,
        dropped,
        imputed_entries,
    })
}

/// A symmetric `n × n` similarity kernel over named samples.
#[derive(Debug, Clone)]
pub struct Kernel {
    matrix: DMatrix<f64>,
    sample_ids: Vec<String>,
    kind: KernelKind,
}

impl Kernel {
    /// Wrap an existing symmetric matrix as a kernel.
    pub fn new(matrix: DMatrix<f64>, sample_ids: Vec<String>, kind: KernelKind) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::InvalidInput(format!(
                "kernel must be square, got {}×{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        check_ids(&sample_ids, "sample id", matrix.nrows())?;
        let scale = matrix.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !scale.is_finite() {
            return Err(Error::InvalidInput("kernel contains non-finite entries".into()));
        }
        let max_asym = (0..matrix.nrows())
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .fold(0.0f64, |a, (i, j)| a.max((matrix[(i, j)] - matrix[(j, i)]).abs()));
        if max_asym > 1e-12 * scale.max(1.0) {
            return Err(Error::InvalidInput(format!(
                "kernel is not symmetric (max asymmetry {max_asym:.3e})"
            )));
        }
        Ok(Self { matrix, sample_ids, kind })
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// The kernel matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Consume the kernel, yielding its matrix.
    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// Sample identifiers, aligned with rows/columns.
    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    /// Provenance tag.
    pub fn kind(&self) -> KernelKind {
        self.kind
    }
}

/// Genomic similarity matrix `K = X Xᵀ / m'` from standardized markers
/// (`m'` = retained marker count).
///
/// The result is exactly symmetric (the cross-product is symmetrized to
/// remove floating-point drift), its diagonal averages 1 and its rows sum
/// to ~0 because the columns of `X` are centered and scaled. `K` is
/// positive semidefinite with at least one ~zero eigenvalue (the constant
/// vector), so it is a valid similarity kernel but not positive definite.
pub fn compute_gsm(std: &StandardizedMarkers) -> Result<Kernel> {
    let x = &std.matrix;
    let m = x.ncols();
    if m == 0 {
        return Err(Error::NoInformativeMarkers);
    }
    let mut k = linalg::mul_abt(x, x);
    let n = k.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (k[(i, j)] + k[(j, i)]) / m as f64;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] /= m as f64;
    }
    Kernel::new(k, std.sample_ids.clone(), KernelKind::Additive)
}

/// Entrywise (Hadamard) square `K ∘ K`, the similarity kernel of pairwise
/// marker-interaction effects.
///
/// By the Schur product theorem the result is positive semidefinite
/// whenever `K` is.
pub fn hadamard_square(k: &Kernel) -> Kernel {
    let matrix = k.matrix.map(|v| v * v);
    Kernel {
        matrix,
        sample_ids: k.sample_ids.clone(),
        kind: KernelKind::Epistatic,
    }
}

/// A balanced replicate layout: `n_genotypes` genotypes, each observed
/// `n_replicates` times.
///
/// Observations are ordered genotype-major: all replicates of the first
/// genotype, then all replicates of the second, and so on. Every function
/// in this crate that maps genotypes to observations uses this convention
/// (see [`ReplicateDesign::ORDERING`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplicateDesign {
    n_genotypes: usize,
    n_replicates: usize,
}

impl ReplicateDesign {
    /// Name of the observation-ordering convention.
    pub const ORDERING: &'static str = "genotype-major";

    /// Build a design; both counts must be at least 1.
    pub fn new(n_genotypes: usize, n_replicates: usize) -> Result<Self> {
        if n_genotypes == 0 || n_replicates == 0 {
            return Err(Error::InvalidInput(
                "replicate design needs at least one genotype and one replicate".into(),
            ));
        }
        Ok(Self { n_genotypes, n_replicates })
    }

    /// Number of distinct genotypes `n`.
    pub fn n_genotypes(&self) -> usize {
        self.n_genotypes
    }

    /// Replicates per genotype `r`.
    pub fn n_replicates(&self) -> usize {
        self.n_replicates
    }

    /// Total observations `N = n·r`.
    pub fn n_observations(&self) -> usize {
        self.n_genotypes * self.n_replicates
    }

    /// Materialize the `N × n` incidence matrix `Z` mapping genotypes to
    /// observations (`Z[o, g] = 1` iff observation `o` belongs to genotype
    /// `g`). Mostly useful for testing against the definition; the rest of
    /// the crate exploits the block structure instead.
    pub fn incidence_matrix(&self) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.n_observations(), self.n_genotypes);
        for g in 0..self.n_genotypes {
            for a in 0..self.n_replicates {
                z[(g * self.n_replicates + a, g)] = 1.0;
            }
        }
        z
    }
}

/// Lift a genotype-level `n × n` matrix to the observation level:
/// `Z M Zᵀ`, an `N × N` matrix constant within each `r × r` genotype block.
///
/// The eigenvalues of the result are `r·λᵢ(M)` together with `n(r−1)`
/// zeros, which is what makes replicated models cheap to analyze.
pub fn expand_replicates(m: &DMatrix<f64>, design: &ReplicateDesign) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidInput(format!(
            "matrix to expand must be square, got {}×{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() != design.n_genotypes() {
        return Err(Error::InvalidInput(format!(
            "matrix dimension {} does not match design with {} genotypes",
            m.nrows(),
            design.n_genotypes()
        )));
    }
    let r = design.n_replicates();
    let big = design.n_observations();
    let mut out = DMatrix::zeros(big, big);
    for g in 0..design.n_genotypes() {
        for h in 0..design.n_genotypes() {
            let v = m[(g, h)];
            for a in 0..r {
                for b in 0..r {
                    out[(g * r + a, h * r + b)] = v;
                }
            }
        }
    }
    Ok(out)
}
