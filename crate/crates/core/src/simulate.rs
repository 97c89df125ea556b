//! Marker-panel and phenotype simulators.
//!
//! Two population models are provided: `unrelated` (independent dosages, so
//! the resulting similarity kernel concentrates around the identity) and a
//! Balding–Nichols model with `S` subpopulations at a chosen fixation index
//! `F_ST` (so the kernel acquires block structure). Phenotypes are drawn
//! directly from a truth covariance.
//!
//! All simulators are bit-reproducible: each marker column is generated
//! from its own derived substream `(seed, column index)`, so results do not
//! depend on generation order.

use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::gaussian::{sample_mvn, Covariance};
use crate::kernel::MarkerMatrix;

/// Population structure of a simulated panel.
#[derive(Debug, Clone, PartialEq)]
pub enum PopulationStructure {
    /// Independent individuals: one allele frequency per marker, dosages
    /// i.i.d. across samples.
    Unrelated,
    /// Balding–Nichols island model: subpopulation allele frequencies are
    /// Beta-distributed around an ancestral frequency, with divergence
    /// controlled by `fst`.
    BaldingNichols {
        /// Number of subpopulations (at least 2); samples are assigned
        /// round-robin so subpopulation sizes differ by at most one.
        n_subpops: usize,
        /// Fixation index, strictly between 0 and 1.
        fst: f64,
        /// Range of the uniform ancestral allele frequency.
        ancestral_maf_range: (f64, f64),
    },
}

/// Configuration of a simulated marker panel.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationConfig {
    /// Number of samples `n` (at least 2).
    pub n_samples: usize,
    /// Number of markers `m` (at least 1).
    pub n_markers: usize,
    /// Population structure.
    pub structure: PopulationStructure,
    /// Allele-frequency range for unrelated panels, a subinterval of
    /// `(0, 0.5]`.
    pub maf_range: (f64, f64),
    /// Master seed; every marker column derives its own substream from it.
    pub seed: u64,
}

impl PopulationConfig {
    /// Unrelated panel with the default allele-frequency range `[0.1, 0.5]`.
    pub fn unrelated(n_samples: usize, n_markers: usize, seed: u64) -> Self {
        Self {
            n_samples,
            n_markers,
            structure: PopulationStructure::Unrelated,
            maf_range: (0.1, 0.5),
            seed,
        }
    }

    /// Balding–Nichols panel with the default ancestral frequency range
    /// `[0.05, 0.95]`.
    pub fn balding_nichols(
        n_samples: usize,
        n_markers: usize,
        n_subpops: usize,
        fst: f64,
        seed: u64,
    ) -> Self {
        Self {
            n_samples,
            n_markers,
            structure: PopulationStructure::BaldingNichols {
                n_subpops,
                fst,
                ancestral_maf_range: (0.05, 0.95),
            },
            maf_range: (0.1, 0.5),
            seed,
        }
    }

    /// Round-robin subpopulation assignment (`sample i → i mod S`), or
    /// `None` for unrelated panels.
    pub fn subpopulations(&self) -> Option<Vec<usize>> {
        match &self.structure {
            PopulationStructure::Unrelated => None,
            PopulationStructure::BaldingNichols { n_subpops, .. } => {
                Some((0..self.n_samples).map(|i| i % n_subpops).collect())
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 samples, got {}",
                self.n_samples
            )));
        }
        if self.n_markers == 0 {
            return Err(Error::InvalidInput("need at least 1 marker".into()));
        }
        let (lo, hi) = self.maf_range;
        if !(lo > 0.0 && lo <= hi && hi <= 0.5) {
            return Err(Error::InvalidInput(format!(
                "maf_range must satisfy 0 < lo ≤ hi ≤ 0.5, got [{lo}, {hi}]"
            )));
        }
        if let PopulationStructure::BaldingNichols { n_subpops, fst, ancestral_maf_range } =
            &self.structure
        {
            if *n_subpops < 2 {
                return Err(Error::InvalidInput(format!(
                    "need at least 2 subpopulations, got {n_subpops}"
                )));
            }
            if !(*fst > 0.0 && *fst < 1.0) {
                return Err(Error::InvalidInput(format!(
                    "fst must lie strictly between 0 and 1, got {fst}"
                )));
            }
            let (alo, ahi) = *ancestral_maf_range;
            if !(alo > 0.0 && alo <= ahi && ahi < 1.0) {
                return Err(Error::InvalidInput(format!(
                    "ancestral_maf_range must satisfy 0 < lo ≤ hi < 1, got [{alo}, {ahi}]"
                )));
            }
        }
        Ok(())
    }
}

fn id_strings(prefix: &str, count: usize) -> Vec<String> {
    let width = count.to_string().len();
    (1..=count).map(|i| format!("{prefix}{i:0width$}")).collect()
}

/// RNG for marker column `j`: substream `j` of the master seed, so columns
/// are independent and may be generated in any order.
fn column_rng(seed: u64, column: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(column as u64);
    rng
}

/// Uniform draw on `[lo, hi)`; degenerates to the constant `lo` when the
/// interval is a point (useful for pinning frequencies in tests).
fn uniform_in(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    range.0 + rng.random::<f64>() * (range.1 - range.0)
}

/// Two Bernoulli(p) trials summed: a Binomial(2, p) dosage.
fn dosage(rng: &mut ChaCha8Rng, p: f64) -> f64 {
    let a = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
    let b = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
    a + b
}

/// Simulate a panel of unrelated individuals.
///
/// Marker `j` gets an allele frequency drawn uniformly from
/// `config.maf_range`, and dosages are i.i.d. Binomial(2, pⱼ) across
/// samples. Deterministic given `config` (bitwise).
pub fn simulate_unrelated(config: &PopulationConfig) -> Result<MarkerMatrix> {
    config.validate()?;
    if config.structure != PopulationStructure::Unrelated {
        return Err(Error::InvalidInput(
            "simulate_unrelated requires unrelated structure; use simulate_structured".into(),
        ));
    }
    let (n, m) = (config.n_samples, config.n_markers);
    let mut values = DMatrix::zeros(n, m);
    for j in 0..m {
        let mut rng = column_rng(config.seed, j);
        let p = uniform_in(&mut rng, config.maf_range);
        for i in 0..n {
            values[(i, j)] = dosage(&mut rng, p);
        }
    }
    MarkerMatrix::new(values, id_strings("g", n), id_strings("m", m))
}

/// Simulate a structured panel under the Balding–Nichols model.
///
/// For marker `j`: the ancestral frequency `πⱼ` is uniform on the
/// configured range; each subpopulation `s` draws its own frequency from
/// `Beta(πⱼ(1−F)/F, (1−πⱼ)(1−F)/F)` (mean `πⱼ`, divergence governed by
/// `F = fst`); dosages are Binomial(2, p_{j,s(i)}) with samples assigned to
/// subpopulations round-robin. Deterministic given `config` (bitwise).
pub fn simulate_structured(config: &PopulationConfig) -> Result<MarkerMatrix> {
    config.validate()?;
    let (n_subpops, fst, ancestral_range) = match &config.structure {
        PopulationStructure::BaldingNichols { n_subpops, fst, ancestral_maf_range } => {
            (*n_subpops, *fst, *ancestral_maf_range)
        }
        PopulationStructure::Unrelated => {
            return Err(Error::InvalidInput(
                "simulate_structured requires balding_nichols structure; use simulate_unrelated"
                    .into(),
            ));
        }
    };
    let (n, m) = (config.n_samples, config.n_markers);
    let shape_total = (1.0 - fst) / fst;
    let mut values = DMatrix::zeros(n, m);
    let mut subpop_freqs = vec![0.0f64; n_subpops];
    for j in 0..m {
        let mut rng = column_rng(config.seed, j);
        let pi = uniform_in(&mut rng, ancestral_range);
        let beta = Beta::new(pi * shape_total, (1.0 - pi) * shape_total).map_err(|e| {
            Error::InvalidInput(format!("invalid Balding–Nichols Beta shape: {e}"))
        })?;
        for freq in subpop_freqs.iter_mut() {
            *freq = beta.sample(&mut rng);
        }
        for i in 0..n {
            values[(i, j)] = dosage(&mut rng, subpop_freqs[i % n_subpops]);
        }
    }
    MarkerMatrix::new(values, id_strings("g", n), id_strings("m", m))
}

/// Draw `n_reps` independent phenotype vectors from a truth covariance, one
/// per row. Thin wrapper over [`sample_mvn`].
pub fn simulate_phenotypes(truth: &Covariance, n_reps: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n_reps == 0 {
        return Err(Error::InvalidInput("n_reps must be at least 1".into()));
    }
    sample_mvn(truth, n_reps, seed)
}
