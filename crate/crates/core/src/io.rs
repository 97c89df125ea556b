//! Plain-text readers and writers for marker panels, kernels, and
//! simulated phenotypes.
//!
//! Three formats, all line-oriented and diff-friendly:
//!
//! - **Marker panel** — CSV with header `id,<marker id>,...`, one row per
//!   sample, dosages as decimal numbers, `NA` for missing entries.
//! - **Kernel** — TSV whose first row and first column hold the sample
//!   identifiers (the corner cell is a placeholder the reader ignores).
//!   Entries carry 12 significant digits, so a written kernel reads back
//!   with entrywise error well below 1e-10.
//! - **Phenotypes** — TSV with one row per simulated trait replicate and
//!   one column per observation, labelled `<genotype id>_<replicate>`
//!   with 1-based replicate indices and the replicates of each genotype
//!   adjacent (the same observation ordering every covariance here uses).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernel::{Kernel, KernelKind, MarkerMatrix, ReplicateDesign};

/// 12 significant digits; enough that writing and re-reading a kernel
/// perturbs entries by less than 1e-10.
fn sig12(x: f64) -> String {
    format!("{x:.11e}")
}

/// Keep OS-level failures distinguishable from malformed content.
fn csv_error(e: csv::Error) -> Error {
    let message = e.to_string();
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        _ => Error::Parse(message),
    }
}

/// Write a marker panel as CSV (`id,<marker id>,...`; `NA` marks missing
/// entries).
///
/// Non-missing values use the shortest decimal representation that parses
/// back to the identical float, so a round trip through
/// [`read_marker_csv`] is exact.
pub fn write_marker_csv(panel: &MarkerMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = Vec::with_capacity(panel.n_markers() + 1);
    header.push("id");
    header.extend(panel.marker_ids().iter().map(String::as_str));
    writer.write_record(&header).map_err(csv_error)?;
    for i in 0..panel.n_samples() {
        let mut record = Vec::with_capacity(panel.n_markers() + 1);
        record.push(panel.sample_ids()[i].clone());
        for j in 0..panel.n_markers() {
            if panel.missing()[(i, j)] {
                record.push("NA".to_owned());
            } else {
                record.push(format!("{}", panel.values()[(i, j)]));
            }
        }
        writer.write_record(&record).map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

/// Read a marker panel written by [`write_marker_csv`] (or by hand in the
/// same shape). `NA` entries become masked; their payload is never read.
pub fn read_marker_csv(path: impl AsRef<Path>) -> Result<MarkerMatrix> {
    let mut reader = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let headers = reader.headers().map_err(csv_error)?.clone();
    if headers.get(0) != Some("id") {
        return Err(Error::Parse(format!(
            "marker file header must start with `id`, found {:?}",
            headers.get(0).unwrap_or("")
        )));
    }
    let marker_ids: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    if marker_ids.is_empty() {
        return Err(Error::Parse("marker file has no marker columns".into()));
    }
    let mut sample_ids = Vec::new();
    let mut values = Vec::new();
    let mut missing = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let sample = record[0].to_owned();
        for (j, field) in record.iter().skip(1).enumerate() {
            if field == "NA" {
                values.push(f64::NAN);
                missing.push(true);
            } else {
                let v = field.parse::<f64>().map_err(|_| {
                    Error::Parse(format!(
                        "sample {sample:?}, marker {:?}: cannot parse {field:?} as a number",
                        marker_ids[j]
                    ))
                })?;
                values.push(v);
                missing.push(false);
            }
        }
        sample_ids.push(sample);
    }
    let n = sample_ids.len();
    if n == 0 {
        return Err(Error::Parse("marker file has no sample rows".into()));
    }
    let m = marker_ids.len();
    MarkerMatrix::with_missing(
        DMatrix::from_row_iterator(n, m, values),
        DMatrix::from_row_iterator(n, m, missing),
        sample_ids,
        marker_ids,
    )
}

/// Write a kernel as TSV with identifiers along the first row and column
/// and entries at 12 significant digits.
pub fn write_kernel_tsv(kernel: &Kernel, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_writer(BufWriter::new(File::create(path)?));
    let mut header = Vec::with_capacity(kernel.n() + 1);
    header.push("id");
    header.extend(kernel.sample_ids().iter().map(String::as_str));
    writer.write_record(&header).map_err(csv_error)?;
    for i in 0..kernel.n() {
        let mut record = Vec::with_capacity(kernel.n() + 1);
        record.push(kernel.sample_ids()[i].clone());
        for j in 0..kernel.n() {
            record.push(sig12(kernel.matrix()[(i, j)]));
        }
        writer.write_record(&record).map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

/// Read a kernel written by [`write_kernel_tsv`].
///
/// Row identifiers must repeat the column identifiers in the same order;
/// symmetry and positive semidefiniteness are validated on construction.
/// The result is tagged [`KernelKind::Custom`] regardless of how the
/// original was built — provenance does not survive serialization.
pub fn read_kernel_tsv(path: impl AsRef<Path>) -> Result<Kernel> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_reader(BufReader::new(File::open(path)?));
    let headers = reader.headers().map_err(csv_error)?.clone();
    let sample_ids: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    let n = sample_ids.len();
    if n == 0 {
        return Err(Error::Parse("kernel file has no sample columns".into()));
    }
    let mut entries = Vec::with_capacity(n * n);
    let mut n_rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        if n_rows == n {
            return Err(Error::Parse(format!(
                "kernel is not square: more than {n} rows for {n} columns"
            )));
        }
        if &record[0] != sample_ids[n_rows].as_str() {
            return Err(Error::Parse(format!(
                "row {} is labelled {:?} but column {} is {:?}; row and column \
                 identifiers must match in order",
                n_rows + 1,
                &record[0],
                n_rows + 1,
                sample_ids[n_rows]
            )));
        }
        for field in record.iter().skip(1) {
            let v = field.parse::<f64>().map_err(|_| {
                Error::Parse(format!(
                    "kernel row {:?}: cannot parse {field:?} as a number",
                    sample_ids[n_rows]
                ))
            })?;
            entries.push(v);
        }
        n_rows += 1;
    }
    if n_rows != n {
        return Err(Error::Parse(format!(
            "kernel is not square: {n_rows} rows for {n} columns"
        )));
    }
    Kernel::new(
        DMatrix::from_row_iterator(n, n, entries),
        sample_ids,
        KernelKind::Custom,
    )
}

/// Write simulated phenotypes as TSV: one row per trait replicate, one
/// column per observation, labelled `<genotype id>_<replicate>` with
/// replicates of each genotype adjacent.
pub fn write_phenotype_tsv(
    values: &DMatrix<f64>,
    genotype_ids: &[String],
    design: &ReplicateDesign,
    path: impl AsRef<Path>,
) -> Result<()> {
    if genotype_ids.len() != design.n_genotypes() {
        return Err(Error::InvalidInput(format!(
            "{} genotype ids for a design with {} genotypes",
            genotype_ids.len(),
            design.n_genotypes()
        )));
    }
    if values.ncols() != design.n_observations() {
        return Err(Error::InvalidInput(format!(
            "phenotype matrix has {} columns but the design implies {} observations",
            values.ncols(),
            design.n_observations()
        )));
    }
    let mut writer = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_writer(BufWriter::new(File::create(path)?));
    let r = design.n_replicates();
    let header: Vec<String> = genotype_ids
        .iter()
        .flat_map(|id| (1..=r).map(move |rep| format!("{id}_{rep}")))
        .collect();
    writer.write_record(&header).map_err(csv_error)?;
    for i in 0..values.nrows() {
        let record: Vec<String> = (0..values.ncols()).map(|j| sig12(values[(i, j)])).collect();
        writer.write_record(&record).map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

/// Read phenotypes written by [`write_phenotype_tsv`]: the replicate ×
/// observation matrix plus the observation labels from the header.
pub fn read_phenotype_tsv(path: impl AsRef<Path>) -> Result<(DMatrix<f64>, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_reader(BufReader::new(File::open(path)?));
    let observation_ids: Vec<String> =
        reader.headers().map_err(csv_error)?.iter().map(str::to_owned).collect();
    if observation_ids.is_empty() {
        return Err(Error::Parse("phenotype file has no observation columns".into()));
    }
    let mut entries = Vec::new();
    let mut n_rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        for (j, field) in record.iter().enumerate() {
            let v = field.parse::<f64>().map_err(|_| {
                Error::Parse(format!(
                    "trait row {}, observation {:?}: cannot parse {field:?} as a number",
                    n_rows + 1,
                    observation_ids[j]
                ))
            })?;
            entries.push(v);
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(Error::Parse("phenotype file has no trait rows".into()));
    }
    Ok((
        DMatrix::from_row_iterator(n_rows, observation_ids.len(), entries),
        observation_ids,
    ))
}
