//! Zero-mean Gaussian covariances: KL divergence, log-likelihood, sampling.
//!
//! Everything in this crate ultimately reduces to comparing two zero-mean
//! multivariate normals. The dense formulas live here, together with a fast
//! path for the balanced replicated layout where both covariances have the
//! form `Z M Zᵀ + c I` — that structure splits the computation into an
//! `n`-dimensional genotype-mean block and a pure-noise residual block,
//! turning an `N³` problem into an `n³` one.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernel::ReplicateDesign;
use crate::linalg;

/// Genotype-level decomposition of a balanced replicated covariance:
/// the full matrix is `Z · genotype_matrix · Zᵀ + residual · I_N` for the
/// incidence matrix `Z` of `design`.
#[derive(Debug, Clone)]
pub struct BalancedPart {
    /// `n × n` genotype-level component `M`.
    pub genotype_matrix: DMatrix<f64>,
    /// Independent per-observation noise variance `c`.
    pub residual: f64,
    /// The replicate layout tying `M` to observations.
    pub design: ReplicateDesign,
}

/// A labelled zero-mean Gaussian covariance matrix.
///
/// Symmetry is validated at construction (relative tolerance `1e-12`);
/// positive definiteness is checked lazily by whichever operation first
/// factorizes the matrix, so that nearly-singular covariances can still be
/// constructed and reported on.
#[derive(Debug, Clone)]
pub struct Covariance {
    matrix: DMatrix<f64>,
    label: String,
    balanced: Option<BalancedPart>,
}

impl Covariance {
    /// Wrap a symmetric matrix. Fails on non-square, non-finite, or
    /// materially asymmetric input.
    pub fn new(matrix: DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::InvalidInput(format!(
                "covariance {label:?} must be square, got {}×{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let scale = matrix.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !scale.is_finite() {
            return Err(Error::InvalidInput(format!(
                "covariance {label:?} contains non-finite entries"
            )));
        }
        for i in 0..matrix.nrows() {
            for j in 0..i {
                let asym = (matrix[(i, j)] - matrix[(j, i)]).abs();
                if asym > 1e-12 * scale.max(1.0) {
                    return Err(Error::InvalidInput(format!(
                        "covariance {label:?} is not symmetric (|S[{i},{j}] - S[{j},{i}]| = {asym:.3e})"
                    )));
                }
            }
        }
        Ok(Self { matrix, label, balanced: None })
    }

    /// Build a balanced replicated covariance `Z M Zᵀ + c I_N`, keeping the
    /// genotype-level decomposition alongside the materialized matrix so
    /// downstream consumers can use the fast path.
    pub fn balanced(
        genotype_matrix: DMatrix<f64>,
        residual: f64,
        design: ReplicateDesign,
        label: impl Into<String>,
    ) -> Result<Self> {
        if genotype_matrix.nrows() != design.n_genotypes() {
            return Err(Error::InvalidInput(format!(
                "genotype matrix dimension {} does not match design with {} genotypes",
                genotype_matrix.nrows(),
                design.n_genotypes()
            )));
        }
        if !residual.is_finite() || residual < 0.0 {
            return Err(Error::InvalidInput(format!(
                "residual variance must be finite and nonnegative, got {residual}"
            )));
        }
        let mut matrix = crate::kernel::expand_replicates(&genotype_matrix, &design)?;
        for i in 0..matrix.nrows() {
            matrix[(i, i)] += residual;
        }
        let mut cov = Self::new(matrix, label)?;
        cov.balanced = Some(BalancedPart { genotype_matrix, residual, design });
        Ok(cov)
    }

    /// Dimension `d` of the Gaussian.
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// The covariance matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Human-readable label used in reports and error messages.
    pub fn label(&self) -> &str {
        &self.label
    }

    /// Genotype-level decomposition, if this covariance was built as a
    /// balanced replicated one.
    pub fn balanced_part(&self) -> Option<&BalancedPart> {
        self.balanced.as_ref()
    }
}

/// Cholesky-factor a covariance, returning the lower-triangular factor and
/// the log-determinant `ln det S = 2 Σ ln Lᵢᵢ`.
pub fn chol_logdet(s: &Covariance) -> Result<(DMatrix<f64>, f64)> {
    let f = linalg::cholesky(s.matrix())?;
    Ok((f.lower(), f.logdet()))
}

/// KL divergence `KL(N(0, Sq) ‖ N(0, Sp))` between zero-mean Gaussians:
///
/// `½ [ tr(Sp⁻¹ Sq) − d + ln det Sp − ln det Sq ]`
///
/// Note the asymmetry: `Sq` is the data-generating ("true") covariance and
/// `Sp` the model covariance. Both matrices must be positive definite.
pub fn kl_divergence(sq: &Covariance, sp: &Covariance) -> Result<f64> {
    if sq.dim() != sp.dim() {
        return Err(Error::InvalidInput(format!(
            "KL operands have different dimensions: {} ({:?}) vs {} ({:?})",
            sq.dim(),
            sq.label(),
            sp.dim(),
            sp.label()
        )));
    }
    let d = sq.dim() as f64;
    let fp = linalg::cholesky(sp.matrix())?;
    let fq = linalg::cholesky(sq.matrix())?;
    let trace = fp.solve_mat(sq.matrix()).trace();
    Ok(0.5 * (trace - d + fp.logdet() - fq.logdet()))
}

/// KL divergence between two balanced replicated Gaussians,
/// `N(0, Z Mq Zᵀ + cq I_N)` versus `N(0, Z Mp Zᵀ + cp I_N)`, without ever
/// forming the `N × N` matrices.
///
/// Rotating observations into per-genotype means and within-genotype
/// contrasts block-diagonalizes both covariances: the mean block is
/// `r M + c I_n` and the residual block is `c I_{n(r−1)}`. The divergence
/// is the `n`-dimensional dense KL of the mean blocks plus the scalar
/// residual term `½ · n(r−1) · [cq/cp − 1 + ln(cp/cq)]`.
pub fn kl_balanced(
    mq: &DMatrix<f64>,
    cq: f64,
    mp: &DMatrix<f64>,
    cp: f64,
    r: usize,
) -> Result<f64> {
    if mq.nrows() != mq.ncols() || mp.nrows() != mp.ncols() {
        return Err(Error::InvalidInput("genotype matrices must be square".into()));
    }
    if mq.nrows() != mp.nrows() {
        return Err(Error::InvalidInput(format!(
            "genotype matrices have different dimensions: {} vs {}",
            mq.nrows(),
            mp.nrows()
        )));
    }
    if r == 0 {
        return Err(Error::InvalidInput("replicate count must be at least 1".into()));
    }
    let n = mq.nrows();
    let rf = r as f64;

    let mean_q = {
        let mut a = mq * rf;
        for i in 0..n {
            a[(i, i)] += cq;
        }
        a
    };
    let mean_p = {
        let mut a = mp * rf;
        for i in 0..n {
            a[(i, i)] += cp;
        }
        a
    };
    let fp = linalg::cholesky(&mean_p)?;
    let fq = linalg::cholesky(&mean_q)?;
    let trace = fp.solve_mat(&mean_q).trace();
    let kl_mean = 0.5 * (trace - n as f64 + fp.logdet() - fq.logdet());

    let resid_dims = (n * (r - 1)) as f64;
    let kl_resid = if r > 1 {
        if cp <= 0.0 || cq <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "residual variances must be positive with r > 1, got cq={cq}, cp={cp}"
            )));
        }
        0.5 * resid_dims * (cq / cp - 1.0 + (cp / cq).ln())
    } else {
        0.0
    };
    Ok(kl_mean + kl_resid)
}

/// Log-density of `y` under `N(0, S)`:
/// `−½ [ d ln 2π + ln det S + yᵀ S⁻¹ y ]`.
pub fn loglik(s: &Covariance, y: &DVector<f64>) -> Result<f64> {
    if y.nrows() != s.dim() {
        return Err(Error::InvalidInput(format!(
            "observation length {} does not match covariance dimension {}",
            y.nrows(),
            s.dim()
        )));
    }
    let f = linalg::cholesky(s.matrix())?;
    let x = f.solve_vec(y);
    let quad = y.dot(&x);
    Ok(-0.5 * (s.dim() as f64 * (2.0 * std::f64::consts::PI).ln() + f.logdet() + quad))
}

/// Draw `count` independent samples from `N(0, S)`, one per row.
///
/// Deterministic: the same `(S, count, seed)` triple always produces the
/// bitwise-identical matrix. See the crate documentation for the RNG
/// contract.
pub fn sample_mvn(s: &Covariance, count: usize, seed: u64) -> Result<DMatrix<f64>> {
    sample_mvn_stream(s, count, seed, 0)
}

/// Like [`sample_mvn`] but on a numbered substream of the generator, so
/// that callers can hand out independent, individually-reproducible streams
/// (one per replicate, say) from a single master seed.
pub(crate) fn sample_mvn_stream(
    s: &Covariance,
    count: usize,
    seed: u64,
    stream: u64,
) -> Result<DMatrix<f64>> {
    let d = s.dim();
    let f = linalg::cholesky(s.matrix())?;
    let l = f.lower();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut out = DMatrix::zeros(count, d);
    let mut z = DVector::zeros(d);
    for row in 0..count {
        for i in 0..d {
            z[i] = rng.sample(StandardNormal);
        }
        let x = &l * &z;
        for i in 0..d {
            out[(row, i)] = x[i];
        }
    }
    Ok(out)
}
