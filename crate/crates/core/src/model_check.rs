//! Bayes factor of `M₀: g = g₀` against `M₁: g ≠ g₀`, and resolution choice
//! by marginal likelihood.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::conjugate::{spectral_form, SpectralForm};
use crate::decomposition::CoefficientVector;
use crate::harness::{Dataset, PriorGuess};
use crate::membership::{GammaStructure, HyperPrior, MembershipKind, MembershipSpec};
use crate::model::{ModelConfig, WaveletModel};
use crate::par;
use crate::quadrature::{log_sum_exp, u_grid, PanelRule, QuadratureConfig};
use crate::wavelet::{build_family, parameter_bound, refine_scaling};
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `−(n/2) log 2π + log{k^{c−1}/Γ(c−1)} + log Γ(n/2 + c − 1)`.
pub(crate) fn marginal_prefactor(n: usize, hp: &HyperPrior) -> f64 {
    let n = n as f64;
    -0.5 * n * LN_2PI + hp.log_ig_norm() + ln_gamma(0.5 * n + hp.c - 1.0)
}

/// `log m(y | M₀)`: σ² integrated against its inverse-gamma prior.
pub fn log_marginal_m0(y: &DVector<f64>, g0_values: &DVector<f64>, hp: &HyperPrior) -> Result<f64> {
    hp.validate()?;
    if y.len() != g0_values.len() {
        return Err(Error::Dimension(format!(
            "y has {} values, g₀ has {}",
            y.len(),
            g0_values.len()
        )));
    }
    let n = y.len();
    let ss = (y - g0_values).norm_squared();
    if !ss.is_finite() {
        return Err(Error::NonFinite("residual sum of squares".into()));
    }
    Ok(marginal_prefactor(n, hp) - (0.5 * n as f64 + hp.c - 1.0) * (hp.k + 0.5 * ss).ln())
}

/// `log ∫ {k + ½Σ s_i²/(1+u d_i)}^{−(n/2+c−1)} Π(1+u d_i)^{−1/2} π₀(u) du`,
/// with `π₀` the F(b, a) density.
pub(crate) fn log_u_integral(d: &DVector<f64>, s: &DVector<f64>, hp: &HyperPrior, quad: QuadratureConfig) -> Result<f64> {
    let n = d.len() as f64;
    let expo = 0.5 * n + hp.c - 1.0;
    let nodes = u_grid(quad);
    let terms = par::map_slice(&nodes, |nd| {
        let u = nd.u;
        let mut ws = 0.0;
        let mut log_det = 0.0;
        for (si, di) in s.iter().zip(d.iter()) {
            let f = 1.0 + u * di;
            ws += si * si / f;
            log_det += (u * di).ln_1p();
        }
        nd.log_weight + hp.log_u_density(u) - 0.5 * log_det - expo * (hp.k + 0.5 * ws).ln()
    });
    let v = log_sum_exp(&terms);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("u-integral of the marginal likelihood".into()))
    }
}

/// `log m(y | M₁)` for the hierarchical Gaussian membership.
pub fn log_marginal_m1(sf: &SpectralForm, hp: &HyperPrior, quad: QuadratureConfig) -> Result<f64> {
    hp.validate()?;
    Ok(marginal_prefactor(sf.n(), hp) + log_u_integral(&sf.d, &sf.s, hp, quad)?)
}

/// `log E_h[q₂(θ)]` for `θ ~ N(θ⁰, τ̂²Γ)` with `τ̂²` held fixed:
///
/// ```text
/// ∫∫ N(y; Xθ⁰, σ²(I + uQ_n) + τ̂² XΓX') π₀(σ²) π₀(u) dσ² du
/// ```
///
/// For each `u` the two covariance pieces are diagonalised jointly, which
/// leaves a one-dimensional σ² integral in closed-form terms.
pub fn log_marginal_m1_fixed_scale(
    model: &WaveletModel,
    theta0: &CoefficientVector,
    gamma: &GammaStructure,
    tau2: f64,
    hp: &HyperPrior,
    quad: QuadratureConfig,
) -> Result<f64> {
    hp.validate()?;
    if !(tau2 > 0.0) {
        return Err(Error::InvalidParameter(format!("τ̂² = {tau2}")));
    }
    let x = &model.design.x;
    let n = model.n();
    let mut xg = x.clone();
    for (c, g) in gamma.diag().iter().enumerate() {
        xg.column_mut(c).scale_mut(*g * tau2);
    }
    let b = &xg * x.transpose();
    let r = &model.y - x * theta0.values();
    let qs = model.qn_spectral();
    // Rotate into the Q_n eigenbasis once: A_u is diagonal there.
    let b_rot = qs.vectors.transpose() * &b * &qs.vectors;
    let r_rot = qs.vectors.transpose() * &r;
    let nodes = u_grid(quad);
    let sigma_rule = SigmaRule::new();
    let terms = par::map_slice(&nodes, |nd| {
        let a: Vec<f64> = qs.values.iter().map(|e| 1.0 + nd.u * e).collect();
        let inv_sqrt = DVector::from_iterator(n, a.iter().map(|v| v.sqrt().recip()));
        let mut w = b_rot.clone();
        for i in 0..n {
            for j in 0..n {
                w[(i, j)] *= inv_sqrt[i] * inv_sqrt[j];
            }
        }
        let eig = SymmetricEigen::new(w);
        let lam: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
        let z = eig.eigenvectors.transpose() * r_rot.component_mul(&inv_sqrt);
        let log_det_a: f64 = a.iter().map(|v| v.ln()).sum();
        let log_inner = sigma_rule.log_integral(|ln_s2| {
            let s2 = ln_s2.exp();
            let mut quad_form = 0.0;
            let mut log_det = 0.0;
            for (zi, li) in z.iter().zip(&lam) {
                let v = s2 + li;
                quad_form += zi * zi / v;
                log_det += v.ln();
            }
            -0.5 * (log_det + quad_form) + hp.log_sigma2_density(s2) + ln_s2
        });
        nd.log_weight + hp.log_u_density(nd.u) - 0.5 * log_det_a + log_inner
    });
    let v = log_sum_exp(&terms);
    if v.is_finite() {
        Ok(v - 0.5 * n as f64 * LN_2PI)
    } else {
        Err(Error::NonFinite("fixed-scale marginal likelihood".into()))
    }
}

/// Composite Gauss–Legendre rule on `log σ² ∈ [−40, 40]`.
struct SigmaRule {
    nodes: Vec<(f64, f64)>,
}

impl SigmaRule {
    fn new() -> Self {
        let rule = PanelRule::new(16);
        let nodes = (0..320)
            .flat_map(|p| {
                let lo = -40.0 + 0.25 * p as f64;
                rule.mapped(lo, lo + 0.25).collect::<Vec<_>>()
            })
            .collect();
        Self { nodes }
    }

    fn log_integral<F: Fn(f64) -> f64>(&self, log_f: F) -> f64 {
        let terms: Vec<f64> = self.nodes.iter().map(|(z, w)| w.ln() + log_f(*z)).collect();
        log_sum_exp(&terms)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Favored {
    M0,
    M1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strength {
    Weak,
    Substantial,
    Strong,
    VeryStrong,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub strength: Strength,
    pub favored: Favored,
}

impl Evidence {
    /// Cut points 3, 10 and 100 on `max(B₀₁, 1/B₀₁)`.
    pub fn from_log_b01(log_b01: f64) -> Self {
        let favored = if log_b01 >= 0.0 { Favored::M0 } else { Favored::M1 };
        let m = log_b01.abs();
        let strength = if m < 3f64.ln() {
            Strength::Weak
        } else if m < 10f64.ln() {
            Strength::Substantial
        } else if m < 100f64.ln() {
            Strength::Strong
        } else {
            Strength::VeryStrong
        };
        Self { strength, favored }
    }
}

impl fmt::Display for Evidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.strength {
            Strength::Weak => "weak",
            Strength::Substantial => "substantial",
            Strength::Strong => "strong",
            Strength::VeryStrong => "very strong",
        };
        let m = match self.favored {
            Favored::M0 => "M0",
            Favored::M1 => "M1",
        };
        write!(f, "{s} for {m}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesFactorResult {
    pub log_m0: f64,
    pub log_m1: f64,
    pub log_b01: f64,
    pub label: Evidence,
}

impl BayesFactorResult {
    pub fn new(log_m0: f64, log_m1: f64) -> Self {
        let log_b01 = log_m0 - log_m1;
        Self {
            log_m0,
            log_m1,
            log_b01,
            label: Evidence::from_log_b01(log_b01),
        }
    }

    pub fn b01(&self) -> f64 {
        self.log_b01.exp()
    }
}

fn gaussian_parts(spec: &MembershipSpec) -> Result<&GammaStructure> {
    match spec.kind() {
        MembershipKind::Gaussian { gamma, .. } => Ok(gamma),
        _ => Err(Error::InvalidParameter(
            "Bayes factors are implemented for the Gaussian membership only".into(),
        )),
    }
}

pub fn bayes_factor(
    model: &WaveletModel,
    spec: &MembershipSpec,
    hp: &HyperPrior,
    quad: QuadratureConfig,
) -> Result<BayesFactorResult> {
    let gamma = gaussian_parts(spec)?;
    let log_m0 = log_marginal_m0(&model.y, &model.g0_at_data, hp)?;
    let sf = spectral_form(&model.design, gamma, &model.y, spec.theta0())?;
    let log_m1 = log_marginal_m1(&sf, hp, quad)?;
    Ok(BayesFactorResult::new(log_m0, log_m1))
}

/// Marginal likelihood of one candidate level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelScore {
    pub level: u32,
    pub p: usize,
    pub log_m1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionChoice {
    pub best: u32,
    pub scores: Vec<LevelScore>,
}

/// The level in `levels` with the largest `log m(y | M₁)`.
pub fn select_resolution(
    data: &Dataset,
    g0: &PriorGuess,
    config: &ModelConfig,
    hp: &HyperPrior,
    quad: QuadratureConfig,
    levels: &[u32],
) -> Result<ResolutionChoice> {
    if levels.is_empty() {
        return Err(Error::Empty("resolution levels"));
    }
    let family = build_family(config.family)?;
    for &j in levels {
        let needed = parameter_bound(
            config.domain.length(),
            family.support_len_phi(),
            family.support_len_psi(),
            j,
        );
        if needed > data.n() as f64 {
            return Err(Error::InsufficientData { n: data.n(), needed });
        }
    }
    let table = Arc::new(refine_scaling(&family, config.depth)?);
    let scores = par::map_slice(levels, |&j| -> Result<LevelScore> {
        let model = WaveletModel::build_with_table(data, g0, config, table.clone(), j)?;
        let spec = model.gaussian_spec();
        let bf = bayes_factor(&model, &spec, hp, quad)?;
        Ok(LevelScore {
            level: j,
            p: model.p(),
            log_m1: bf.log_m1,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let best = scores
        .iter()
        .max_by(|a, b| a.log_m1.total_cmp(&b.log_m1).then(b.level.cmp(&a.level)))
        .map(|s| s.level)
        .expect("non-empty");
    Ok(ResolutionChoice { best, scores })
}

/// `log N(y; μ, Σ)` by Cholesky; used by the brute-force checks.
pub fn log_normal_density(y: &DVector<f64>, mean: &DVector<f64>, cov: DMatrix<f64>) -> Result<f64> {
    let n = y.len() as f64;
    let chol = cov.cholesky().ok_or(Error::NotPositiveDefinite("covariance"))?;
    let r = y - mean;
    let z = chol.l().solve_lower_triangular(&r).expect("triangular solve");
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    Ok(-0.5 * (n * LN_2PI + log_det + z.norm_squared()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conjugate::spectral_form_of;
    use approx::assert_relative_eq;

    #[test]
    fn m0_single_observation() {
        let hp = HyperPrior::default();
        let v = log_marginal_m0(&DVector::from_vec(vec![0.7]), &DVector::from_vec(vec![0.7]), &hp).unwrap();
        assert_relative_eq!(v.exp(), 0.288_675_134_594_812_9, max_relative = 1e-12);
        assert_relative_eq!(v, -1.242_453_324_894_000_2, epsilon = 1e-9);
    }

    #[test]
    fn m0_doubling_k() {
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let hp1 = HyperPrior::from_b(3.0, 2.0, 1.5).unwrap();
        let hp2 = HyperPrior::from_b(3.0, 2.0, 3.0).unwrap();
        let d = log_marginal_m0(&y, &y, &hp2).unwrap() - log_marginal_m0(&y, &y, &hp1).unwrap();
        let expect = (hp1.c - 1.0) * 2f64.ln() - (1.5 + hp1.c - 1.0) * 2f64.ln();
        assert_relative_eq!(d, expect, epsilon = 1e-12);
    }

    #[test]
    fn m0_decays_with_residuals() {
        let hp = HyperPrior::default();
        let g = DVector::zeros(3);
        let mut prev = f64::INFINITY;
        for r in [0.0, 1.0, 10.0, 1e3, 1e6] {
            let v = log_marginal_m0(&DVector::from_element(3, r), &g, &hp).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn flat_spectrum_reduces_to_m0() {
        let hp = HyperPrior::default();
        let r = DVector::from_vec(vec![0.3, -1.2, 0.5, 2.0]);
        let sf = spectral_form_of(DMatrix::zeros(4, 4), &r).unwrap();
        let m1 = log_marginal_m1(&sf, &hp, QuadratureConfig::default()).unwrap();
        let m0 = log_marginal_m0(&r, &DVector::zeros(4), &hp).unwrap();
        assert_relative_eq!(m1, m0, epsilon = 1e-8);
    }

    #[test]
    fn m1_quadrature_converges() {
        let hp = HyperPrior::default();
        let m = DMatrix::from_fn(6, 6, |i, j| (-((i as f64 - j as f64).powi(2)) / 4.0).exp());
        let r = DVector::from_vec(vec![0.3, -1.2, 0.5, 2.0, 0.1, -0.4]);
        let sf = spectral_form_of(m, &r).unwrap();
        let a = log_marginal_m1(&sf, &hp, QuadratureConfig { nodes: 201 }).unwrap();
        let b = log_marginal_m1(&sf, &hp, QuadratureConfig { nodes: 402 }).unwrap();
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn evidence_labels() {
        let l = |b: f64| Evidence::from_log_b01(b.ln()).to_string();
        assert_eq!(l(933.4275), "very strong for M0");
        assert_eq!(l(57.4735), "strong for M0");
        assert_eq!(l(7.2845e-6), "very strong for M1");
        assert_eq!(l(5.0), "substantial for M0");
        assert_eq!(l(0.5), "weak for M1");
        assert_eq!(l(1.0), "weak for M0");
    }

    #[test]
    fn normal_density_matches_iid() {
        let y = DVector::from_vec(vec![0.5, -1.0]);
        let v = log_normal_density(&y, &DVector::zeros(2), DMatrix::identity(2, 2) * 2.0).unwrap();
        let expect = -LN_2PI - 2f64.ln() - 0.25 * 1.25;
        assert_relative_eq!(v, expect, epsilon = 1e-12);
    }
}
