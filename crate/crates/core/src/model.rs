//! The assembled regression problem: basis, plan, design, `Γ`, `θ⁰` and data.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::decomposition::{
    project_coefficients, CoefficientVector, DesignMatrices, DEFAULT_QUAD_POINTS, DEFAULT_TAIL_TOL,
};
use crate::harness::{Dataset, PriorGuess};
use crate::membership::{GammaStructure, MembershipSpec};
use crate::wavelet::{
    build_family, max_resolution, refine_scaling, Domain, FamilyName, ResolutionPlan, ScalingTable,
    DEFAULT_DEPTH,
};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelChoice {
    /// Largest level allowed by the parameter-count bound.
    Auto,
    Fixed(u32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: FamilyName,
    pub depth: u32,
    pub domain: Domain,
    pub level: LevelChoice,
    /// Overrides the family's nominal smoothness in `Γ` and `Q`.
    pub smoothness: Option<f64>,
    pub tail_tol: f64,
    pub quad_points: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: FamilyName::Daubechies2,
            depth: DEFAULT_DEPTH,
            domain: Domain::unit(),
            level: LevelChoice::Auto,
            smoothness: None,
            tail_tol: DEFAULT_TAIL_TOL,
            quad_points: DEFAULT_QUAD_POINTS,
        }
    }
}

impl ModelConfig {
    pub fn with_level(mut self, level: u32) -> Self {
        self.level = LevelChoice::Fixed(level);
        self
    }
}

/// Eigendecomposition `Q_n = H_Q diag(e) H_Q'`.
#[derive(Clone, Debug)]
pub struct QnSpectral {
    pub vectors: DMatrix<f64>,
    pub values: DVector<f64>,
}

impl QnSpectral {
    pub fn new(qn: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(qn.clone());
        Self {
            values: eig.eigenvalues.map(|v| v.max(0.0)),
            vectors: eig.eigenvectors,
        }
    }
}

#[derive(Clone, Debug)]
pub struct WaveletModel {
    pub table: Arc<ScalingTable>,
    pub plan: Arc<ResolutionPlan>,
    pub design: DesignMatrices,
    pub gamma: GammaStructure,
    pub theta0: CoefficientVector,
    pub y: DVector<f64>,
    /// `g0(x_i)`.
    pub g0_at_data: DVector<f64>,
    pub smoothness: f64,
}

/// Resolve the level for `n` observations.
pub fn resolve_level(config: &ModelConfig, n: usize) -> Result<u32> {
    match config.level {
        LevelChoice::Fixed(j) => Ok(j),
        LevelChoice::Auto => {
            let family = build_family(config.family)?;
            max_resolution(
                config.domain.length(),
                family.support_len_phi(),
                family.support_len_psi(),
                n,
            )
        }
    }
}

impl WaveletModel {
    pub fn build(data: &Dataset, g0: &PriorGuess, config: &ModelConfig) -> Result<Self> {
        let family = build_family(config.family)?;
        let table = Arc::new(refine_scaling(&family, config.depth)?);
        let level = resolve_level(config, data.n())?;
        Self::build_with_table(data, g0, config, table, level)
    }

    /// Reuse a cascade table (e.g. across levels or seeds).
    pub fn build_with_table(
        data: &Dataset,
        g0: &PriorGuess,
        config: &ModelConfig,
        table: Arc<ScalingTable>,
        level: u32,
    ) -> Result<Self> {
        data.check_domain(config.domain)?;
        let family = table.family().clone();
        let smoothness = config.smoothness.unwrap_or(family.smoothness);
        if !(smoothness > 0.5) {
            return Err(Error::Smoothness(smoothness));
        }
        let plan = Arc::new(ResolutionPlan::with_level(&family, config.domain, level));
        let design = DesignMatrices::build(data.x(), &plan, &table, smoothness, config.tail_tol)?;
        let gamma = GammaStructure::new(&plan, smoothness);
        let theta0 = project_coefficients(|x| g0.eval(x), &plan, &table, config.quad_points)?;
        let g0_at_data = DVector::from_iterator(data.n(), data.x().iter().map(|&x| g0.eval(x)));
        Ok(Self {
            table,
            plan,
            design,
            gamma,
            theta0,
            y: DVector::from_column_slice(data.y()),
            g0_at_data,
            smoothness,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.plan.p()
    }

    /// The Gaussian membership of the conjugate path (`N(θ⁰, τ²Γ)`).
    pub fn gaussian_spec(&self) -> MembershipSpec {
        MembershipSpec::gaussian(self.theta0.clone(), self.gamma.clone(), 1.0)
            .expect("Γ and θ⁰ share the plan")
    }

    pub fn qn_spectral(&self) -> QnSpectral {
        QnSpectral::new(&self.design.qn)
    }
}
