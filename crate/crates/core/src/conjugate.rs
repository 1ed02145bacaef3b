//! Closed-form hierarchical posterior for the Gaussian membership
//! `θ | τ² ~ N(θ⁰, τ²Γ)`.
//!
//! With `XΓX' + Q_n = H D H'` and `s = H'(y − Xθ⁰)`, everything reduces to
//! one-dimensional integrals against the marginal posterior of `u = τ²/σ²`:
//!
//! ```text
//! π(u | y) ∝ π_F(u) Π(1 + u d_i)^{-1/2} (2k + Σ s_i²/(1 + u d_i))^{-(n + 2c - 2)/2}
//! E(θ | y) = θ⁰ + ΓX'H E[(I + uD)^{-1} | y] s
//! ```
//!
//! The covariance is assembled as `E[Var(θ | y, u)] + Var(E(θ | y, u))`, which
//! keeps it positive semidefinite.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::decomposition::{basis_row, CoefficientVector, DesignMatrices};
use crate::membership::{GammaStructure, HyperPrior, MembershipKind, MembershipSpec};
use crate::model::WaveletModel;
use crate::par;
use crate::quadrature::{log_sum_exp, u_grid, QuadratureConfig, UNode};
use crate::{Error, Result};

/// Which form of the `u`-posterior kernel to integrate against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FKernel {
    /// Derived from the model: textbook F(b, a) density and the
    /// `−(n + 2c − 2)/2` exponent left by integrating out σ².
    #[default]
    Textbook,
    /// `u^{b/2}/(a + bu)^{(a+b)/2}` with exponent `−(n + 2c)/2`, and the
    /// matching `1/(n + 2c)` covariance constants.
    AsPrinted,
}

/// `XΓX' + Q_n = H diag(d) H'`, `s = H'(y − Xθ⁰)`.
#[derive(Clone, Debug)]
pub struct SpectralForm {
    pub h: DMatrix<f64>,
    /// Descending, clipped at zero.
    pub d: DVector<f64>,
    pub s: DVector<f64>,
}

pub fn spectral_form(
    design: &DesignMatrices,
    gamma: &GammaStructure,
    y: &DVector<f64>,
    theta0: &CoefficientVector,
) -> Result<SpectralForm> {
    let (n, p) = design.x.shape();
    if y.len() != n || gamma.len() != p || theta0.len() != p || design.qn.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "X is {n}x{p}, y has {}, Γ has {}, θ⁰ has {}, Q_n is {:?}",
            y.len(),
            gamma.len(),
            theta0.len(),
            design.qn.shape()
        )));
    }
    let xg = scale_columns(&design.x, gamma.diag());
    let m = &xg * design.x.transpose() + &design.qn;
    spectral_form_of(m, &(y - &design.x * theta0.values()))
}

/// Spectral form of an explicit symmetric matrix and residual.
pub fn spectral_form_of(m: DMatrix<f64>, residual: &DVector<f64>) -> Result<SpectralForm> {
    if m.iter().chain(residual.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spectral decomposition input".into()));
    }
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let d = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i].max(0.0)));
    let h = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    let s = h.transpose() * residual;
    Ok(SpectralForm { h, d, s })
}

fn scale_columns(x: &DMatrix<f64>, diag: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (c, g) in diag.iter().enumerate() {
        out.column_mut(c).scale_mut(*g);
    }
    out
}

impl SpectralForm {
    pub fn n(&self) -> usize {
        self.d.len()
    }

    /// `Σ s_i² / (1 + u d_i)`.
    pub fn weighted_ss(&self, u: f64) -> f64 {
        self.s
            .iter()
            .zip(self.d.iter())
            .map(|(s, d)| s * s / (1.0 + u * d))
            .sum()
    }

    /// `Σ log(1 + u d_i)`.
    pub fn log_det(&self, u: f64) -> f64 {
        self.d.iter().map(|d| (u * d).ln_1p()).sum()
    }
}

/// `log π₂₂(u | y)` up to its normalising constant.
pub fn log_pi22_unnorm(u: f64, sf: &SpectralForm, hp: &HyperPrior, kernel: FKernel) -> f64 {
    if !(u > 0.0) {
        return f64::NEG_INFINITY;
    }
    let n = sf.n() as f64;
    let base = 2.0 * hp.k + sf.weighted_ss(u);
    match kernel {
        FKernel::Textbook => {
            hp.log_u_density(u) - 0.5 * sf.log_det(u) - 0.5 * (n + 2.0 * hp.c - 2.0) * base.ln()
        }
        FKernel::AsPrinted => {
            hp.log_u_kernel_as_printed(u) - 0.5 * sf.log_det(u) - 0.5 * (n + 2.0 * hp.c) * base.ln()
        }
    }
}

pub fn pi22_unnorm(u: f64, sf: &SpectralForm, hp: &HyperPrior, kernel: FKernel) -> f64 {
    log_pi22_unnorm(u, sf, hp, kernel).exp()
}

/// Normalised quadrature representation of `π₂₂(u | y)`.
#[derive(Clone, Debug)]
pub struct UPosterior {
    pub nodes: Vec<UNode>,
    /// Quadrature weight × normalised density; sums to one.
    pub weights: Vec<f64>,
    /// `log ∫ π₂₂ du` for the unnormalised kernel.
    pub log_norm: f64,
}

impl UPosterior {
    pub fn new(sf: &SpectralForm, hp: &HyperPrior, quad: QuadratureConfig, kernel: FKernel) -> Result<Self> {
        let nodes = u_grid(quad);
        let logs = par::map_slice(&nodes, |nd| nd.log_weight + log_pi22_unnorm(nd.u, sf, hp, kernel));
        let log_norm = log_sum_exp(&logs);
        if !log_norm.is_finite() {
            return Err(Error::DegenerateUPosterior);
        }
        let weights = logs.iter().map(|l| (l - log_norm).exp()).collect();
        Ok(Self {
            nodes,
            weights,
            log_norm,
        })
    }

    /// `E[f(u) | y]`.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(nd, w)| if *w > 0.0 { w * f(nd.u) } else { 0.0 })
            .sum()
    }

    /// Normalised density values `π₂₂(u_q | y)` at the nodes.
    pub fn densities(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(nd, w)| w / nd.log_weight.exp())
            .collect()
    }
}

/// `ΓX'H` (p × n).
fn gamma_xt_h(design: &DesignMatrices, gamma: &GammaStructure, sf: &SpectralForm) -> DMatrix<f64> {
    let xt_h = design.x.transpose() * &sf.h;
    let mut g = xt_h;
    for (r, gv) in gamma.diag().iter().enumerate() {
        g.row_mut(r).scale_mut(*gv);
    }
    g
}

/// `E(θ | y) = θ⁰ + ΓX'H E[(I + uD)^{-1} | y] s`.
pub fn posterior_mean(
    sf: &SpectralForm,
    gamma: &GammaStructure,
    design: &DesignMatrices,
    theta0: &CoefficientVector,
    hp: &HyperPrior,
    quad: QuadratureConfig,
    kernel: FKernel,
) -> Result<CoefficientVector> {
    let post = UPosterior::new(sf, hp, quad, kernel)?;
    Ok(mean_from(&post, sf, gamma, design, theta0, kernel))
}

/// Multiplier of `s_i` in `E(θ | y, u) − θ⁰ = ΓX'H r(u)`.
///
/// Conditioning on `τ² = uσ²` gives `u/(1 + u d_i)`; the as-printed form
/// drops the leading `u`.
fn correction_factor(u: f64, d: f64, kernel: FKernel) -> f64 {
    match kernel {
        FKernel::Textbook => u / (1.0 + u * d),
        FKernel::AsPrinted => 1.0 / (1.0 + u * d),
    }
}

fn shrink_factors(post: &UPosterior, sf: &SpectralForm, kernel: FKernel) -> DVector<f64> {
    DVector::from_iterator(
        sf.n(),
        sf.d.iter().map(|&d| post.expect(|u| correction_factor(u, d, kernel))),
    )
}

fn mean_from(
    post: &UPosterior,
    sf: &SpectralForm,
    gamma: &GammaStructure,
    design: &DesignMatrices,
    theta0: &CoefficientVector,
    kernel: FKernel,
) -> CoefficientVector {
    if sf.s.iter().all(|v| *v == 0.0) {
        return theta0.clone();
    }
    let g = gamma_xt_h(design, gamma, sf);
    let corr = shrink_factors(post, sf, kernel).component_mul(&sf.s);
    theta0
        .with_values(theta0.values() + g * corr)
        .expect("same plan")
}

/// `Var(θ | y)`.
pub fn posterior_cov(
    sf: &SpectralForm,
    gamma: &GammaStructure,
    design: &DesignMatrices,
    hp: &HyperPrior,
    quad: QuadratureConfig,
    kernel: FKernel,
) -> Result<DMatrix<f64>> {
    let post = UPosterior::new(sf, hp, quad, kernel)?;
    cov_from(&post, sf, gamma, design, hp, kernel)
}

fn sigma2_denominator(n: usize, hp: &HyperPrior, kernel: FKernel) -> Result<f64> {
    let denom = match kernel {
        FKernel::Textbook => n as f64 + 2.0 * hp.c - 4.0,
        FKernel::AsPrinted => n as f64 + 2.0 * hp.c,
    };
    if denom > 0.0 {
        Ok(denom)
    } else {
        Err(Error::InvalidParameter(format!(
            "posterior mean of σ² is infinite (n + 2c − 4 = {denom})"
        )))
    }
}

fn cov_from(
    post: &UPosterior,
    sf: &SpectralForm,
    gamma: &GammaStructure,
    design: &DesignMatrices,
    hp: &HyperPrior,
    kernel: FKernel,
) -> Result<DMatrix<f64>> {
    let n = sf.n();
    let denom = sigma2_denominator(n, hp, kernel)?;
    // E[σ² | y, u] = (2k + S(u)) / denom; the u, u² factors come from τ² = uσ².
    let (pow1, pow2) = match kernel {
        FKernel::Textbook => (1, 2),
        FKernel::AsPrinted => (0, 0),
    };
    let scale = |u: f64| (2.0 * hp.k + sf.weighted_ss(u)) / denom;
    let term1 = post.expect(|u| scale(u) * u.powi(pow1));
    let diag2 = DVector::from_iterator(
        n,
        sf.d.iter()
            .map(|d| post.expect(|u| scale(u) * u.powi(pow2) / (1.0 + u * d))),
    );

    // Var_u of r(u)
    let rbar = shrink_factors(post, sf, kernel).component_mul(&sf.s);
    let mut c = DMatrix::<f64>::zeros(n, n);
    for (nd, w) in post.nodes.iter().zip(&post.weights) {
        if *w == 0.0 {
            continue;
        }
        let r = DVector::from_iterator(
            n,
            sf.s.iter().zip(sf.d.iter()).map(|(s, &d)| s * correction_factor(nd.u, d, kernel)),
        ) - &rbar;
        c.ger(*w, &r, &r, 1.0);
    }
    for i in 0..n {
        c[(i, i)] -= diag2[i];
    }
    let g = gamma_xt_h(design, gamma, sf);
    let mut cov = &g * c * g.transpose();
    for (i, gv) in gamma.diag().iter().enumerate() {
        cov[(i, i)] += term1 * gv;
    }
    let sym = (&cov + cov.transpose()) * 0.5;
    Ok(sym)
}

/// One point of a fitted curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub fit: f64,
    pub sd: f64,
}

/// Moments and curve of the conjugate posterior.
#[derive(Clone, Debug)]
pub struct PosteriorSummary {
    pub mean: CoefficientVector,
    pub cov: DMatrix<f64>,
    /// `(u, normalised weight, normalised density)`.
    pub u_grid: Vec<(f64, f64, f64)>,
    pub fitted: Vec<CurvePoint>,
    pub e_u: f64,
    pub e_sigma2: Option<f64>,
    pub e_tau2: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConjugateConfig {
    pub quad: QuadratureConfig,
    pub kernel: FKernel,
}

/// Posterior mean and covariance, plus the curve on `x_out`.
pub fn fit_conjugate(
    model: &WaveletModel,
    spec: &MembershipSpec,
    hp: &HyperPrior,
    config: ConjugateConfig,
    x_out: &[f64],
) -> Result<PosteriorSummary> {
    let MembershipKind::Gaussian { gamma, .. } = spec.kind() else {
        return Err(Error::InvalidParameter(
            "the closed-form posterior needs the Gaussian membership".into(),
        ));
    };
    hp.validate()?;
    let sf = spectral_form(&model.design, gamma, &model.y, spec.theta0())?;
    let post = UPosterior::new(&sf, hp, config.quad, config.kernel)?;
    let mean = mean_from(&post, &sf, gamma, &model.design, spec.theta0(), config.kernel);
    let cov = cov_from(&post, &sf, gamma, &model.design, hp, config.kernel)?;
    let fitted = curve(model, &mean, &cov, x_out);
    let denom = sigma2_denominator(sf.n(), hp, config.kernel).ok();
    let scale = |u: f64| 2.0 * hp.k + sf.weighted_ss(u);
    let e_sigma2 = denom.map(|dn| post.expect(scale) / dn);
    let e_tau2 = denom.map(|dn| post.expect(|u| u * scale(u)) / dn);
    let dens = post.densities();
    Ok(PosteriorSummary {
        e_u: post.expect(|u| u),
        u_grid: post
            .nodes
            .iter()
            .zip(&post.weights)
            .zip(dens)
            .map(|((nd, w), d)| (nd.u, *w, d))
            .collect(),
        mean,
        cov,
        fitted,
        e_sigma2,
        e_tau2,
    })
}

/// Curve `x ↦ (b(x)'m, √(b(x)'Σ b(x)))`.
pub fn curve(model: &WaveletModel, mean: &CoefficientVector, cov: &DMatrix<f64>, x_out: &[f64]) -> Vec<CurvePoint> {
    par::map_slice(x_out, |&x| {
        let b = basis_row(&model.plan, &model.table, x);
        let fit = b.dot(mean.values());
        let var = (cov * &b).dot(&b);
        CurvePoint {
            x,
            fit,
            sd: var.max(0.0).sqrt(),
        }
    })
}
