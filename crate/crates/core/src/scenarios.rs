//! Fitted-model families (models 1–3) and true covariances (scenarios A–C).
//!
//! A *model* is a linear family of covariances `Σ(θ) = Σᵢ θᵢ Vᵢ` that an
//! analyst would fit; a *scenario* is the covariance the data actually
//! follow. The three models are additive:
//!
//! 1. `σ_A² K + σ_E² I_n` — unreplicated individuals,
//! 2. `σ_A² Z K Zᵀ + σ_E² I_{nr}` — replicated genotypes,
//! 3. `σ_A² Z K Zᵀ + σ_G² Z Zᵀ + σ_E² I_{nr}` — replicated genotypes with a
//!    non-genetic genotype effect,
//!
//! while each scenario truth carries an interaction kernel `K ∘ K` (or a
//! `Z Zᵀ` block) that none of the models can represent, which is what makes
//! the fitted components converge to biased pseudo-true values.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gaussian::Covariance;
use crate::kernel::{expand_replicates, hadamard_square, Kernel, ReplicateDesign};

/// Default truth weights: additive 0.4, non-additive 0.2, noise 0.4.
pub const DEFAULT_TRUTH_WEIGHTS: [f64; 3] = [0.4, 0.2, 0.4];

/// Which data-generating covariance to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// `w_A·K + w_NA·(K∘K) + w_E·I_n` on unreplicated individuals.
    A,
    /// `w_A·ZKZᵀ + w_NA·ZZᵀ + w_E·I_N` on replicated genotypes.
    B,
    /// `w_A·ZKZᵀ + w_NA·Z(K∘K)Zᵀ + w_E·I_N` on replicated genotypes.
    C,
}

impl Scenario {
    /// The model conventionally fitted to this scenario.
    pub fn paired_model(self) -> ModelId {
        match self {
            Scenario::A => ModelId::M1,
            Scenario::B => ModelId::M2,
            Scenario::C => ModelId::M3,
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scenario::A => write!(f, "A"),
            Scenario::B => write!(f, "B"),
            Scenario::C => write!(f, "C"),
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Scenario::A),
            "B" | "b" => Ok(Scenario::B),
            "C" | "c" => Ok(Scenario::C),
            other => Err(Error::InvalidInput(format!(
                "unknown scenario {other:?}; expected A, B, or C"
            ))),
        }
    }
}

/// Which covariance family to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelId {
    /// Two components on individuals: `[K, I_n]`.
    M1,
    /// Two components on replicated observations: `[ZKZᵀ, I_N]`.
    M2,
    /// Three components on replicated observations: `[ZKZᵀ, ZZᵀ, I_N]`.
    M3,
}

impl ModelId {
    /// Number of variance components.
    pub fn n_components(self) -> usize {
        match self {
            ModelId::M1 | ModelId::M2 => 2,
            ModelId::M3 => 3,
        }
    }

    /// Numeric tag used on the command line.
    pub fn number(self) -> u8 {
        match self {
            ModelId::M1 => 1,
            ModelId::M2 => 2,
            ModelId::M3 => 3,
        }
    }

    /// Component names in basis order, as reported by every fitted or
    /// scanned result for this model.
    pub fn component_names(self) -> &'static [&'static str] {
        match self {
            ModelId::M1 | ModelId::M2 => &["sigma_A2", "sigma_E2"],
            ModelId::M3 => &["sigma_A2", "sigma_G2", "sigma_E2"],
        }
    }
}

impl std::fmt::Display for ModelId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl TryFrom<u8> for ModelId {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(ModelId::M1),
            2 => Ok(ModelId::M2),
            3 => Ok(ModelId::M3),
            other => Err(Error::InvalidInput(format!(
                "unknown model {other}; expected 1, 2, or 3"
            ))),
        }
    }
}

/// A (scenario, model) pair.
///
/// The conventional pairing is A↔1, B↔2, C↔3; [`ScenarioId::paired`]
/// enforces it, while [`ScenarioId::unpaired`] permits deliberate
/// mismatches for experimentation (flagged via
/// [`ScenarioId::is_conventional_pairing`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioId {
    /// Data-generating scenario.
    pub tag: Scenario,
    /// Fitted model.
    pub model: ModelId,
}

impl ScenarioId {
    /// The conventional pairing for a scenario.
    pub fn paired(tag: Scenario) -> Self {
        Self { tag, model: tag.paired_model() }
    }

    /// An arbitrary (scenario, model) combination.
    pub fn unpaired(tag: Scenario, model: ModelId) -> Self {
        Self { tag, model }
    }

    /// Whether this is the conventional pairing.
    pub fn is_conventional_pairing(&self) -> bool {
        self.model == self.tag.paired_model()
    }
}

/// How a basis element acts on a balanced replicated design. This is what
/// lets scans and fits run in kernel-eigenbasis coordinates instead of
/// observation coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SpectralTerm {
    /// `Z K Zᵀ` (equals `K` itself when r = 1): genotype-mean eigenvalue
    /// `r·λᵢ(K)`, no residual-space component.
    KernelExpanded,
    /// `Z Zᵀ`: genotype-mean eigenvalue `r`, no residual-space component.
    GenotypeBlock,
    /// `I_N`: eigenvalue 1 everywhere.
    ObsIdentity,
}

impl SpectralTerm {
    /// Eigenvalue contribution in the genotype-mean subspace, given the
    /// kernel eigenvalue `lambda` and replicate count `r`.
    pub(crate) fn mean_eigenvalue(self, lambda: f64, r: f64) -> f64 {
        match self {
            SpectralTerm::KernelExpanded => r * lambda,
            SpectralTerm::GenotypeBlock => r,
            SpectralTerm::ObsIdentity => 1.0,
        }
    }

    /// Eigenvalue contribution in the within-genotype residual subspace.
    pub(crate) fn residual_eigenvalue(self) -> f64 {
        match self {
            SpectralTerm::ObsIdentity => 1.0,
            SpectralTerm::KernelExpanded | SpectralTerm::GenotypeBlock => 0.0,
        }
    }
}

/// Spectral shortcut metadata carried by model families built from a kernel
/// and a replicate design.
#[derive(Debug, Clone)]
pub(crate) struct ModelStructure {
    /// Genotype-level kernel `K`.
    pub kernel: DMatrix<f64>,
    /// Replicate layout shared by all basis elements.
    pub design: ReplicateDesign,
    /// One term per basis element, in basis order.
    pub terms: Vec<SpectralTerm>,
}

/// A linear covariance family `Σ(θ) = Σᵢ θᵢ Vᵢ` with named components.
#[derive(Debug, Clone)]
pub struct CovarianceSpec {
    names: Vec<String>,
    basis: Vec<DMatrix<f64>>,
    weights: Option<Vec<f64>>,
    simplex_constrained: bool,
    pub(crate) structure: Option<ModelStructure>,
}

impl CovarianceSpec {
    /// Build a family from named symmetric basis matrices of equal
    /// dimension. `simplex_constrained` declares that realized weights must
    /// sum to one (total variance fixed to 1).
    pub fn new(
        names: Vec<String>,
        basis: Vec<DMatrix<f64>>,
        simplex_constrained: bool,
    ) -> Result<Self> {
        if names.is_empty() || names.len() != basis.len() {
            return Err(Error::InvalidInput(format!(
                "need one name per basis matrix, got {} names and {} matrices",
                names.len(),
                basis.len()
            )));
        }
        let dim = basis[0].nrows();
        for (name, v) in names.iter().zip(&basis) {
            if v.nrows() != v.ncols() || v.nrows() != dim {
                return Err(Error::InvalidInput(format!(
                    "basis matrix {name:?} is {}×{}, expected {dim}×{dim}",
                    v.nrows(),
                    v.ncols()
                )));
            }
            let scale = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            if !scale.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "basis matrix {name:?} contains non-finite entries"
                )));
            }
            for i in 0..dim {
                for j in 0..i {
                    if (v[(i, j)] - v[(j, i)]).abs() > 1e-12 * scale.max(1.0) {
                        return Err(Error::InvalidInput(format!(
                            "basis matrix {name:?} is not symmetric"
                        )));
                    }
                }
            }
        }
        Ok(Self { names, basis, weights: None, simplex_constrained, structure: None })
    }

    /// Component names, basis order.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Basis matrices, aligned with [`CovarianceSpec::names`].
    pub fn basis(&self) -> &[DMatrix<f64>] {
        &self.basis
    }

    /// Number of components `k`.
    pub fn n_components(&self) -> usize {
        self.basis.len()
    }

    /// Dimension `d` of the covariances in this family.
    pub fn dim(&self) -> usize {
        self.basis[0].nrows()
    }

    /// Whether realized weights must sum to one.
    pub fn is_simplex_constrained(&self) -> bool {
        self.simplex_constrained
    }

    /// Currently stored weights, if any.
    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Index of the exact-identity basis element, if present.
    pub fn identity_index(&self) -> Option<usize> {
        self.basis.iter().position(|v| {
            (0..v.nrows()).all(|i| {
                (0..v.ncols()).all(|j| {
                    let want = if i == j { 1.0 } else { 0.0 };
                    (v[(i, j)] - want).abs() <= 1e-12
                })
            })
        })
    }

    fn validate_weights(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_components() {
            return Err(Error::InvalidInput(format!(
                "got {} weights for {} components",
                theta.len(),
                self.n_components()
            )));
        }
        for (name, &w) in self.names.iter().zip(theta) {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "weight for {name:?} must be finite and nonnegative, got {w}"
                )));
            }
        }
        if self.simplex_constrained {
            let sum: f64 = theta.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "weights must sum to 1 (simplex-constrained family), got {sum}"
                )));
            }
        }
        Ok(())
    }

    /// Store weights on the family after validating them (nonnegative;
    /// summing to 1 within 1e-12 when simplex-constrained).
    pub fn with_weights(mut self, theta: Vec<f64>) -> Result<Self> {
        self.validate_weights(&theta)?;
        self.weights = Some(theta);
        Ok(self)
    }

    /// Realize `Σ(θ) = Σᵢ θᵢ Vᵢ` at the given weights without storing them.
    pub fn covariance_at(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.validate_weights(theta)?;
        let dim = self.dim();
        let mut sigma = DMatrix::zeros(dim, dim);
        for (w, v) in theta.iter().zip(&self.basis) {
            sigma.zip_apply(v, |s, x| *s += w * x);
        }
        Ok(sigma)
    }

    /// Realize the stored weights as a labelled [`Covariance`].
    pub fn realize(&self) -> Result<Covariance> {
        let theta = self.weights.as_ref().ok_or_else(|| {
            Error::InvalidInput("no weights stored on this covariance family".into())
        })?;
        let sigma = self.covariance_at(theta)?;
        let label = self
            .names
            .iter()
            .zip(theta)
            .map(|(n, w)| format!("{w:.4}·{n}"))
            .collect::<Vec<_>>()
            .join(" + ");
        Covariance::new(sigma, label)
    }
}

/// Build the fitted-model family for `model` from a kernel and a replicate
/// design: model 1 = `[K, I_n]`, model 2 = `[ZKZᵀ, I_N]`, model 3 =
/// `[ZKZᵀ, ZZᵀ, I_N]`, with component names in conventional order.
///
/// Model 1 is defined on unreplicated individuals and rejects `r > 1`;
/// model 3 rejects `r = 1` because `ZZᵀ = I` there makes `sigma_G2` and
/// `sigma_E2` indistinguishable. All families are simplex-constrained with
/// weights left unset.
pub fn build_model(model: ModelId, k: &Kernel, design: &ReplicateDesign) -> Result<CovarianceSpec> {
    if k.n() != design.n_genotypes() {
        return Err(Error::InvalidInput(format!(
            "kernel has {} samples but design has {} genotypes",
            k.n(),
            design.n_genotypes()
        )));
    }
    let r = design.n_replicates();
    let n_obs = design.n_observations();
    let (basis, terms): (Vec<DMatrix<f64>>, Vec<SpectralTerm>) = match model {
        ModelId::M1 => {
            if r != 1 {
                return Err(Error::InvalidInput(format!(
                    "model 1 is defined on unreplicated individuals (r = 1), got r = {r}; \
                     use model 2 for replicated data"
                )));
            }
            (
                vec![k.matrix().clone(), DMatrix::identity(n_obs, n_obs)],
                vec![SpectralTerm::KernelExpanded, SpectralTerm::ObsIdentity],
            )
        }
        ModelId::M2 => (
            vec![
                expand_replicates(k.matrix(), design)?,
                DMatrix::identity(n_obs, n_obs),
            ],
            vec![SpectralTerm::KernelExpanded, SpectralTerm::ObsIdentity],
        ),
        ModelId::M3 => {
            if r == 1 {
                return Err(Error::NonIdentifiable(
                    "sigma_G2 and sigma_E2 non-identifiable: ZZᵀ = I when r = 1".into(),
                ));
            }
            (
                vec![
                    expand_replicates(k.matrix(), design)?,
                    expand_replicates(&DMatrix::identity(k.n(), k.n()), design)?,
                    DMatrix::identity(n_obs, n_obs),
                ],
                vec![
                    SpectralTerm::KernelExpanded,
                    SpectralTerm::GenotypeBlock,
                    SpectralTerm::ObsIdentity,
                ],
            )
        }
    };
    let mut spec = CovarianceSpec::new(
        model.component_names().iter().map(|s| s.to_string()).collect(),
        basis,
        true,
    )?;
    spec.structure = Some(ModelStructure {
        kernel: k.matrix().clone(),
        design: *design,
        terms,
    });
    Ok(spec)
}

/// Build the true covariance of a scenario with explicit weights
/// `(w_A, w_NA, w_E)`: the additive kernel, the non-additive term the
/// models cannot represent, and white noise.
///
/// * A: `w_A·K + w_NA·(K∘K) + w_E·I_n` (unreplicated, rejects `r > 1`);
/// * B: `w_A·ZKZᵀ + w_NA·ZZᵀ + w_E·I_N`;
/// * C: `w_A·ZKZᵀ + w_NA·Z(K∘K)Zᵀ + w_E·I_N`.
///
/// Weights must be nonnegative and sum to one (total variance 1). The
/// result carries its genotype-level decomposition so divergence scans can
/// use the balanced fast path; positive definiteness is not checked here —
/// a `w_E = 0` truth over a rank-deficient kernel fails at first
/// factorization downstream.
pub fn build_truth_with_weights(
    scenario: Scenario,
    k: &Kernel,
    design: &ReplicateDesign,
    weights: [f64; 3],
) -> Result<Covariance> {
    if k.n() != design.n_genotypes() {
        return Err(Error::InvalidInput(format!(
            "kernel has {} samples but design has {} genotypes",
            k.n(),
            design.n_genotypes()
        )));
    }
    let [w_a, w_na, w_e] = weights;
    for w in weights {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidInput(format!(
                "truth weights must be finite and nonnegative, got {weights:?}"
            )));
        }
    }
    if (w_a + w_na + w_e - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!(
            "truth weights must sum to 1, got {}",
            w_a + w_na + w_e
        )));
    }
    if scenario == Scenario::A && design.n_replicates() != 1 {
        return Err(Error::InvalidInput(format!(
            "scenario A is defined on unreplicated individuals (r = 1), got r = {}; \
             scenario C is its replicated counterpart",
            design.n_replicates()
        )));
    }
    let n = k.n();
    // Genotype-level part M: the truth is Z M Zᵀ + w_E I in every scenario
    // (with Z = I for scenario A).
    let mut m = k.matrix() * w_a;
    match scenario {
        Scenario::A | Scenario::C => {
            let kk = hadamard_square(k);
            m.zip_apply(kk.matrix(), |acc, x| *acc += w_na * x);
        }
        Scenario::B => {
            for i in 0..n {
                m[(i, i)] += w_na;
            }
        }
    }
    Covariance::balanced(
        m,
        w_e,
        *design,
        format!("scenario {scenario} truth (weights {w_a}, {w_na}, {w_e})"),
    )
}

/// [`build_truth_with_weights`] at the default weights (0.4, 0.2, 0.4).
pub fn build_truth(scenario: Scenario, k: &Kernel, design: &ReplicateDesign) -> Result<Covariance> {
    build_truth_with_weights(scenario, k, design, DEFAULT_TRUTH_WEIGHTS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{compute_gsm, standardize_markers, KernelKind};
    use crate::simulate::{simulate_unrelated, PopulationConfig};
    use approx::assert_relative_eq;

    fn identity_kernel(n: usize) -> Kernel {
        let ids = (1..=n).map(|i| format!("g{i}")).collect();
        Kernel::new(DMatrix::identity(n, n), ids, KernelKind::Custom).unwrap()
    }

    fn simulated_kernel(n: usize, m: usize, seed: u64) -> Kernel {
        let panel = simulate_unrelated(&PopulationConfig::unrelated(n, m, seed)).unwrap();
        compute_gsm(&standardize_markers(&panel).unwrap()).unwrap()
    }

    #[test]
    fn model1_with_identity_kernel() {
        let k = identity_kernel(2);
        let design = ReplicateDesign::new(2, 1).unwrap();
        let spec = build_model(ModelId::M1, &k, &design).unwrap();
        assert_eq!(spec.names(), ["sigma_A2", "sigma_E2"]);
        assert_eq!(spec.basis()[0], DMatrix::identity(2, 2));
        assert_eq!(spec.basis()[1], DMatrix::identity(2, 2));
        assert!(spec.weights().is_none());
        assert!(spec.is_simplex_constrained());
    }

    #[test]
    fn model2_expands_identity_to_blocks() {
        let k = identity_kernel(2);
        let design = ReplicateDesign::new(2, 2).unwrap();
        let spec = build_model(ModelId::M2, &k, &design).unwrap();
        let j2 = DMatrix::from_element(2, 2, 1.0);
        let mut expected = DMatrix::zeros(4, 4);
        expected.view_mut((0, 0), (2, 2)).copy_from(&j2);
        expected.view_mut((2, 2), (2, 2)).copy_from(&j2);
        assert_eq!(spec.basis()[0], expected);
        assert_eq!(spec.basis()[1], DMatrix::identity(4, 4));
    }

    #[test]
    fn model3_matches_incidence_oracle() {
        let k = simulated_kernel(3, 80, 17);
        let design = ReplicateDesign::new(3, 2).unwrap();
        let spec = build_model(ModelId::M3, &k, &design).unwrap();
        assert_eq!(spec.names(), ["sigma_A2", "sigma_G2", "sigma_E2"]);
        let z = design.incidence_matrix();
        let zkz = &z * k.matrix() * z.transpose();
        let zz = &z * z.transpose();
        assert_relative_eq!(spec.basis()[0], zkz, epsilon = 1e-12);
        assert_relative_eq!(spec.basis()[1], zz, epsilon = 1e-12);
        assert_eq!(spec.basis()[2], DMatrix::identity(6, 6));
    }

    #[test]
    fn model3_unreplicated_is_rejected() {
        let k = identity_kernel(3);
        let design = ReplicateDesign::new(3, 1).unwrap();
        match build_model(ModelId::M3, &k, &design) {
            Err(Error::NonIdentifiable(msg)) => {
                assert!(msg.contains("sigma_G2") && msg.contains("sigma_E2"));
            }
            other => panic!("expected NonIdentifiable, got {other:?}"),
        }
    }

    #[test]
    fn model1_replicated_is_rejected() {
        let k = identity_kernel(3);
        let design = ReplicateDesign::new(3, 2).unwrap();
        assert!(matches!(
            build_model(ModelId::M1, &k, &design),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn truth_a_with_identity_kernel_collapses_to_identity() {
        let k = identity_kernel(4);
        let design = ReplicateDesign::new(4, 1).unwrap();
        let truth = build_truth(Scenario::A, &k, &design).unwrap();
        assert_relative_eq!(truth.matrix(), &DMatrix::identity(4, 4), epsilon = 1e-14);
    }

    #[test]
    fn truth_b_hand_expansion() {
        let k = identity_kernel(2);
        let design = ReplicateDesign::new(2, 2).unwrap();
        let truth = build_truth(Scenario::B, &k, &design).unwrap();
        // 0.6·blockdiag(J₂,J₂) + 0.4·I₄.
        let mut expected = DMatrix::zeros(4, 4);
        for block in 0..2 {
            for a in 0..2 {
                for b in 0..2 {
                    expected[(2 * block + a, 2 * block + b)] = 0.6;
                }
            }
        }
        for i in 0..4 {
            expected[(i, i)] += 0.4;
        }
        assert_relative_eq!(truth.matrix(), &expected, epsilon = 1e-14);
    }

    #[test]
    fn truth_c_matches_compositional_oracle() {
        let k = simulated_kernel(3, 80, 23);
        let design = ReplicateDesign::new(3, 2).unwrap();
        let truth = build_truth(Scenario::C, &k, &design).unwrap();
        let z = design.incidence_matrix();
        let kk = hadamard_square(&k);
        let expected = &z * (k.matrix() * 0.4 + kk.matrix() * 0.2) * z.transpose()
            + DMatrix::identity(6, 6) * 0.4;
        assert_relative_eq!(truth.matrix(), &expected, epsilon = 1e-12);
    }

    #[test]
    fn truth_a_equals_truth_c_unreplicated() {
        let k = simulated_kernel(5, 120, 31);
        let design = ReplicateDesign::new(5, 1).unwrap();
        let a = build_truth(Scenario::A, &k, &design).unwrap();
        let c = build_truth(Scenario::C, &k, &design).unwrap();
        assert_eq!(a.matrix(), c.matrix());
    }

    #[test]
    fn truth_diagonal_mean_tracks_kernel_diagonal() {
        let k = simulated_kernel(8, 150, 37);
        let design = ReplicateDesign::new(8, 1).unwrap();
        let truth = build_truth(Scenario::A, &k, &design).unwrap();
        let mean_diag = truth.matrix().diagonal().sum() / 8.0;
        let kk_mean_diag = hadamard_square(&k).matrix().diagonal().sum() / 8.0;
        let eps = 0.2 * (kk_mean_diag - 1.0).abs() + 1e-10;
        assert!(
            (mean_diag - 1.0).abs() <= eps,
            "mean diag {mean_diag}, allowed deviation {eps}"
        );
    }

    #[test]
    fn truth_weight_validation() {
        let k = identity_kernel(3);
        let design = ReplicateDesign::new(3, 1).unwrap();
        assert!(build_truth_with_weights(Scenario::A, &k, &design, [0.5, 0.2, 0.4]).is_err());
        assert!(build_truth_with_weights(Scenario::A, &k, &design, [-0.1, 0.7, 0.4]).is_err());
        let r2 = ReplicateDesign::new(3, 2).unwrap();
        assert!(build_truth(Scenario::A, &k, &r2).is_err()); // A is unreplicated
        assert!(build_truth(Scenario::B, &k, &r2).is_ok());
    }

    #[test]
    fn covariance_spec_weights_and_realization() {
        let k = simulated_kernel(4, 100, 41);
        let design = ReplicateDesign::new(4, 1).unwrap();
        let spec = build_model(ModelId::M1, &k, &design).unwrap();

        // Invalid weights rejected.
        assert!(spec.clone().with_weights(vec![0.5, 0.6]).is_err()); // sum != 1
        assert!(spec.clone().with_weights(vec![-0.2, 1.2]).is_err()); // negative
        assert!(spec.clone().with_weights(vec![1.0]).is_err()); // wrong length

        let realized = spec.clone().with_weights(vec![0.3, 0.7]).unwrap();
        let sigma = realized.realize().unwrap();
        let expected = k.matrix() * 0.3 + DMatrix::identity(4, 4) * 0.7;
        assert_relative_eq!(sigma.matrix(), &expected, epsilon = 1e-14);

        // covariance_at agrees with manual assembly.
        let at = spec.covariance_at(&[0.3, 0.7]).unwrap();
        assert_relative_eq!(at, expected, epsilon = 1e-14);

        assert_eq!(spec.identity_index(), Some(1));
        assert!(spec.realize().is_err()); // no stored weights
    }

    #[test]
    fn pairing_helpers() {
        assert_eq!(ScenarioId::paired(Scenario::B).model, ModelId::M2);
        assert!(ScenarioId::paired(Scenario::C).is_conventional_pairing());
        let crossed = ScenarioId::unpaired(Scenario::C, ModelId::M2);
        assert!(!crossed.is_conventional_pairing());
        assert_eq!(ModelId::try_from(3).unwrap(), ModelId::M3);
        assert!(ModelId::try_from(4).is_err());
        assert_eq!("b".parse::<Scenario>().unwrap(), Scenario::B);
        assert!("D".parse::<Scenario>().is_err());
    }
}
