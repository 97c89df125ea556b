//! Shared spectral evaluation engine for divergence scans and likelihood
//! fits.
//!
//! Every model family this crate builds is simultaneously diagonalizable:
//! rotating observations into per-genotype means (scaled by √r) and
//! within-genotype contrasts, then into the eigenbasis `U` of the genotype
//! kernel `K = U Λ Uᵀ`, turns `Σ(θ) = θ_A·ZKZᵀ + θ_G·ZZᵀ + θ_E·I` into a
//! diagonal matrix. Its eigenvalues come in *groups*:
//!
//! * one group per kernel eigendirection `i`, multiplicity 1, with mixture
//!   coefficient `(r·λᵢ, r, 1)` per component;
//! * one residual group of multiplicity `n(r−1)` with coefficients
//!   `(0, 0, 1)`.
//!
//! KL divergences, log-likelihoods, and Fisher information all become
//! sums over groups, evaluated in O(n·k) per candidate θ after a single
//! O(n³) eigendecomposition. The same machinery covers any two-component
//! family `[V, I]` by eigendecomposing `V`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::Covariance;
use crate::kernel::ReplicateDesign;
use crate::linalg;
use crate::scenarios::CovarianceSpec;

/// Eigenvalue groups of a simultaneously-diagonalizable covariance family.
#[derive(Debug, Clone)]
pub(crate) struct EigenGroups {
    /// Multiplicity of each group.
    mults: Vec<f64>,
    /// Per-group mixture coefficients, flattened group-major:
    /// `coeffs[g*k + j]` is the eigenvalue of basis element `j` in group `g`.
    coeffs: Vec<f64>,
    /// Number of components `k`.
    k: usize,
    /// Total dimension `N = Σ mults`.
    total_dim: f64,
}

impl EigenGroups {
    /// Number of groups.
    pub(crate) fn len(&self) -> usize {
        self.mults.len()
    }

    /// Eigenvalue of `Σ(θ)` in group `g`.
    #[inline]
    pub(crate) fn mix(&self, g: usize, theta: &[f64]) -> f64 {
        let base = g * self.k;
        let mut d = 0.0;
        for j in 0..self.k {
            d += theta[j] * self.coeffs[base + j];
        }
        d
    }

    /// Whether two basis elements have identical eigenvalues in every
    /// group, i.e. are indistinguishable within this family (exact
    /// aliasing, e.g. `K = I` making the kernel term collide with the
    /// noise term).
    pub(crate) fn aliased_pair(&self) -> Option<(usize, usize)> {
        let scale = self.coeffs.iter().fold(0.0f64, |a, c| a.max(c.abs())).max(1.0);
        for i in 0..self.k {
            for j in (i + 1)..self.k {
                let equal = (0..self.len()).all(|g| {
                    (self.coeffs[g * self.k + i] - self.coeffs[g * self.k + j]).abs()
                        <= 1e-12 * scale
                });
                if equal {
                    return Some((i, j));
                }
            }
        }
        None
    }

    /// Index of the first group where `Σ(θ)` fails to be positive, if any.
    pub(crate) fn first_nonpositive(&self, theta: &[f64]) -> Option<usize> {
        (0..self.len()).find(|&g| {
            let d = self.mix(g, theta);
            !(d > 0.0 && d.is_finite())
        })
    }

    /// Fisher information `F[i,j] = ½ Σ_g mult_g · cᵢ cⱼ / d_g²` at θ, or
    /// `None` if `Σ(θ)` is singular on some group.
    pub(crate) fn fisher(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        let k = self.k;
        let mut f = DMatrix::zeros(k, k);
        for g in 0..self.len() {
            let d = self.mix(g, theta);
            if d <= 0.0 || !d.is_finite() {
                return None;
            }
            let w = self.mults[g] / (d * d);
            let base = g * k;
            for i in 0..k {
                for j in 0..=i {
                    f[(i, j)] += 0.5 * w * self.coeffs[base + i] * self.coeffs[base + j];
                }
            }
        }
        for i in 0..k {
            for j in 0..i {
                f[(j, i)] = f[(i, j)];
            }
        }
        Some(f)
    }
}

/// A model family reduced to spectral coordinates: the eigenvalue groups
/// plus the rotation needed to map truths and data into them.
pub(crate) struct SpectralFamily {
    pub(crate) groups: EigenGroups,
    /// Eigenvectors of the genotype-level kernel (columns aligned with the
    /// eigendirection groups, which come first in group order).
    u: DMatrix<f64>,
    design: ReplicateDesign,
}

impl SpectralFamily {
    /// Reduce a family to spectral coordinates if possible: either it
    /// carries replicate structure (models 1–3), or it is a two-component
    /// `[V, I]` family whose non-identity element we eigendecompose.
    /// Returns `Ok(None)` when neither applies (dense fallback).
    pub(crate) fn for_spec(spec: &CovarianceSpec) -> Result<Option<Self>> {
        if let Some(structure) = &spec.structure {
            let (lambda, u) = linalg::sym_eigen(&structure.kernel)?;
            let design = structure.design;
            let n = design.n_genotypes();
            let r = design.n_replicates() as f64;
            let k = spec.n_components();
            let mut mults = Vec::with_capacity(n + 1);
            let mut coeffs = Vec::with_capacity((n + 1) * k);
            for i in 0..n {
                mults.push(1.0);
                for term in &structure.terms {
                    coeffs.push(term.mean_eigenvalue(lambda[i], r));
                }
            }
            let resid_mult = (n * (design.n_replicates() - 1)) as f64;
            if resid_mult > 0.0 {
                mults.push(resid_mult);
                for term in &structure.terms {
                    coeffs.push(term.residual_eigenvalue());
                }
            }
            let total_dim = design.n_observations() as f64;
            return Ok(Some(Self {
                groups: EigenGroups { mults, coeffs, k, total_dim },
                u,
                design,
            }));
        }

        // Plain two-component [V, I] family: diagonalize V.
        if spec.n_components() == 2 {
            if let Some(id_idx) = spec.identity_index() {
                let other = 1 - id_idx;
                let (lambda, u) = linalg::sym_eigen(&spec.basis()[other])?;
                let d = spec.dim();
                let mut coeffs = Vec::with_capacity(2 * d);
                for i in 0..d {
                    let mut pair = [0.0; 2];
                    pair[other] = lambda[i];
                    pair[id_idx] = 1.0;
                    coeffs.extend_from_slice(&pair);
                }
                let design = ReplicateDesign::new(d, 1)?;
                return Ok(Some(Self {
                    groups: EigenGroups {
                        mults: vec![1.0; d],
                        coeffs,
                        k: 2,
                        total_dim: d as f64,
                    },
                    u,
                    design,
                }));
            }
        }
        Ok(None)
    }

    /// Project a truth covariance into the groups, yielding the per-group
    /// truth mass (`uᵢᵀ Sq_mean uᵢ` on eigendirections, `cq · mult` on the
    /// residual group) and the truth log-determinant.
    ///
    /// Returns `Ok(None)` when the truth does not share the family's
    /// replicate layout (caller falls back to dense evaluation); fails if
    /// the truth is not positive definite.
    pub(crate) fn truth_mass(&self, truth: &Covariance) -> Result<Option<(Vec<f64>, f64)>> {
        let n = self.design.n_genotypes();
        let r = self.design.n_replicates();
        if truth.dim() != self.design.n_observations() {
            return Err(Error::InvalidInput(format!(
                "truth dimension {} does not match family dimension {}",
                truth.dim(),
                self.design.n_observations()
            )));
        }
        // Genotype-mean-space covariance of the truth: r·M + c·I for a
        // matching balanced truth, or the truth itself when r = 1.
        let (mean_cov, resid_var): (std::borrow::Cow<'_, DMatrix<f64>>, f64) = if r == 1 {
            (std::borrow::Cow::Borrowed(truth.matrix()), 0.0)
        } else {
            match truth.balanced_part() {
                Some(part) if part.design == self.design => {
                    let mut a = &part.genotype_matrix * r as f64;
                    for i in 0..n {
                        a[(i, i)] += part.residual;
                    }
                    (std::borrow::Cow::Owned(a), part.residual)
                }
                _ => return Ok(None),
            }
        };

        let mut logdet_q = linalg::cholesky(&mean_cov)?.logdet();
        // a_i = uᵢᵀ Sq_mean uᵢ via one matrix product.
        let w = linalg::mul(&mean_cov, &self.u);
        let mut mass = Vec::with_capacity(self.groups.len());
        for i in 0..n {
            mass.push(self.u.column(i).dot(&w.column(i)));
        }
        let resid_mult = (n * (r - 1)) as f64;
        if resid_mult > 0.0 {
            if resid_var <= 0.0 {
                return Err(Error::NotPositiveDefinite { index: n });
            }
            mass.push(resid_var * resid_mult);
            logdet_q += resid_mult * resid_var.ln();
        }
        Ok(Some((mass, logdet_q)))
    }

    /// Project a data vector into the groups: squared rotated genotype
    /// means per eigendirection, plus the within-genotype residual sum of
    /// squares on the residual group.
    pub(crate) fn data_mass(&self, y: &DVector<f64>) -> Result<Vec<f64>> {
        let n = self.design.n_genotypes();
        let r = self.design.n_replicates();
        if y.nrows() != self.design.n_observations() {
            return Err(Error::InvalidInput(format!(
                "observation length {} does not match family dimension {}",
                y.nrows(),
                self.design.n_observations()
            )));
        }
        let w = if r == 1 {
            y.clone()
        } else {
            // √r · per-genotype means: the coordinates of y along the
            // orthonormal mean directions.
            let rf = r as f64;
            DVector::from_fn(n, |g, _| {
                let mut acc = 0.0;
                for a in 0..r {
                    acc += y[g * r + a];
                }
                acc / rf.sqrt()
            })
        };
        let v = self.u.tr_mul(&w);
        let mut mass: Vec<f64> = v.iter().map(|x| x * x).collect();
        if r > 1 {
            let ss_resid = (y.norm_squared() - w.norm_squared()).max(0.0);
            mass.push(ss_resid);
        }
        Ok(mass)
    }
}

/// KL divergence from a fixed truth to `Σ(θ)`, in spectral coordinates.
pub(crate) struct SpectralKl {
    pub(crate) groups: EigenGroups,
    mass: Vec<f64>,
    logdet_q: f64,
}

impl SpectralKl {
    pub(crate) fn new(family: &SpectralFamily, truth: &Covariance) -> Result<Option<Self>> {
        Ok(family.truth_mass(truth)?.map(|(mass, logdet_q)| Self {
            groups: family.groups.clone(),
            mass,
            logdet_q,
        }))
    }

    /// `KL(truth ‖ Σ(θ))`, or `None` when `Σ(θ)` is not positive definite
    /// (the scan records these as skipped points).
    pub(crate) fn eval(&self, theta: &[f64]) -> Option<f64> {
        let mut trace = 0.0;
        let mut logdet_p = 0.0;
        for g in 0..self.groups.len() {
            let d = self.groups.mix(g, theta);
            if d <= 0.0 {
                return None;
            }
            trace += self.mass[g] / d;
            logdet_p += self.groups.mults[g] * d.ln();
        }
        let kl = 0.5 * (trace - self.groups.total_dim + logdet_p - self.logdet_q);
        kl.is_finite().then_some(kl)
    }
}

/// Negative log-likelihood of a fixed data vector under `Σ(θ)`, in
/// spectral coordinates.
pub(crate) struct SpectralLik {
    pub(crate) groups: EigenGroups,
    mass: Vec<f64>,
}

impl SpectralLik {
    pub(crate) fn new(family: &SpectralFamily, y: &DVector<f64>) -> Result<Self> {
        Ok(Self { groups: family.groups.clone(), mass: family.data_mass(y)? })
    }

    /// `−ln L(θ)`; `+∞` when `Σ(θ)` is not positive definite.
    pub(crate) fn neg_loglik(&self, theta: &[f64]) -> f64 {
        let mut quad = 0.0;
        let mut logdet = 0.0;
        for g in 0..self.groups.len() {
            let d = self.groups.mix(g, theta);
            if d <= 0.0 {
                return f64::INFINITY;
            }
            quad += self.mass[g] / d;
            logdet += self.groups.mults[g] * d.ln();
        }
        let n = self.groups.total_dim;
        0.5 * (n * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
    }

    /// Profile out an overall scale `s`: given mixing proportions θ, the
    /// likelihood-maximizing scale is the mean squared whitened residual
    /// `ŝ = (Σ_g mass_g / d_g) / N`, and the profiled negative
    /// log-likelihood is `½ [N ln 2π + N + N ln ŝ + Σ mult ln d]`.
    /// Returns `(ŝ, profiled nll)`, or `(0, +∞)` when infeasible.
    pub(crate) fn profiled_scale(&self, theta: &[f64]) -> (f64, f64) {
        let mut quad = 0.0;
        let mut logdet = 0.0;
        for g in 0..self.groups.len() {
            let d = self.groups.mix(g, theta);
            if d <= 0.0 {
                return (0.0, f64::INFINITY);
            }
            quad += self.mass[g] / d;
            logdet += self.groups.mults[g] * d.ln();
        }
        let n = self.groups.total_dim;
        if quad <= 0.0 {
            return (0.0, f64::INFINITY);
        }
        let scale = quad / n;
        let nll =
            0.5 * (n * (2.0 * std::f64::consts::PI).ln() + n + n * scale.ln() + logdet);
        (scale, nll)
    }
}
