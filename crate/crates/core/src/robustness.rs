//! Range of `B₀₁` over the density-ratio class
//! `{π : c₁h_A ≤ απ ≤ c₂h_A}` for the Gaussian membership.
//!
//! Writing `B₀₁(π) = ∫q₁π / ∫q₂π`, the infimum is the root in λ of
//!
//! ```text
//! c₂ ∫(q₁ − λq₂)⁻ h_A + c₁ ∫(q₁ − λq₂)⁺ h_A = 0
//! ```
//!
//! and the supremum swaps `c₁` and `c₂`. Here `q₁ = m(y | M₀)` and
//! `q₂(θ)` integrates the likelihood over `(σ², u)`. The `h_A`-integrals are
//! Monte Carlo averages over a fixed bank of draws from `N(θ⁰, τ̂²Γ)`, so every
//! λ, orientation and `(c₁, c₂)` pair sees the same sample.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::conjugate::{fit_conjugate, ConjugateConfig};
use crate::membership::{HyperPrior, MembershipKind, MembershipSpec};
use crate::model::{QnSpectral, WaveletModel};
use crate::model_check::{log_marginal_m0, log_marginal_m1_fixed_scale, marginal_prefactor};
use crate::par;
use crate::quadrature::{log_sum_exp, u_grid, QuadratureConfig};
use crate::{Error, Result};

const MIN_SAMPLES: usize = 100;
const MAX_BRACKET_STEPS: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MCConfig {
    pub samples: usize,
    pub seed: u64,
    /// Scale of the sampling membership `N(θ⁰, τ̂²Γ)`; the posterior mean
    /// of τ² when unset.
    pub tau2: Option<f64>,
}

impl Default for MCConfig {
    fn default() -> Self {
        Self {
            samples: 2000,
            seed: 0,
            tau2: None,
        }
    }
}

/// Precomputed `(u, log weight + log π₀(u))` pairs for `q₂`.
struct Q2Kernel {
    nodes: Vec<(f64, f64)>,
    prefactor: f64,
    expo: f64,
    k: f64,
}

impl Q2Kernel {
    fn new(n: usize, hp: &HyperPrior, quad: QuadratureConfig) -> Self {
        let nodes = u_grid(quad)
            .into_iter()
            .map(|nd| (nd.u, nd.log_weight + hp.log_u_density(nd.u)))
            .collect();
        Self {
            nodes,
            prefactor: marginal_prefactor(n, hp),
            expo: 0.5 * n as f64 + hp.c - 1.0,
            k: hp.k,
        }
    }

    /// `log q₂` from the rotated residual `r = H_Q'(y − Xθ)` and the `Q_n` eigenvalues.
    fn log_q2(&self, r: &DVector<f64>, e: &DVector<f64>) -> f64 {
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .map(|&(u, lw)| {
                let mut ws = 0.0;
                let mut log_det = 0.0;
                for (ri, ei) in r.iter().zip(e.iter()) {
                    ws += ri * ri / (1.0 + u * ei);
                    log_det += (u * ei).ln_1p();
                }
                lw - 0.5 * log_det - self.expo * (self.k + 0.5 * ws).ln()
            })
            .collect();
        self.prefactor + log_sum_exp(&terms)
    }
}

/// `log q₂(θ) = log ∫ f(y | θ, σ², u) π₀(σ²) π₀(u) dσ² du`.
pub fn log_q2_value(
    theta: &DVector<f64>,
    model: &WaveletModel,
    qs: &QnSpectral,
    hp: &HyperPrior,
    quad: QuadratureConfig,
) -> Result<f64> {
    hp.validate()?;
    if theta.len() != model.p() {
        return Err(Error::Dimension(format!("θ has {}, need {}", theta.len(), model.p())));
    }
    let kernel = Q2Kernel::new(model.n(), hp, quad);
    let r = qs.vectors.transpose() * (&model.y - &model.design.x * theta);
    let v = kernel.log_q2(&r, &qs.values);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("q₂".into()))
    }
}

/// The weighted problem `ratio = Σ wᵢaᵢ / Σ wᵢbᵢ` with `λ = κ·e^{log_scale}`.
///
/// Monte Carlo banks use `aᵢ = 1`, `bᵢ = q₂(θᵢ)/max q₂` and equal weights.
#[derive(Clone, Debug, PartialEq)]
pub struct RatioProblem {
    a: Vec<f64>,
    b: Vec<f64>,
    w: Vec<f64>,
    log_scale: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Inf,
    Sup,
}

impl RatioProblem {
    pub fn new(a: Vec<f64>, b: Vec<f64>, w: Vec<f64>, log_scale: f64) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::Empty("ratio problem"));
        }
        if a.len() != b.len() || a.len() != w.len() {
            return Err(Error::Dimension(format!(
                "a, b, w have {}, {}, {} entries",
                a.len(),
                b.len(),
                w.len()
            )));
        }
        if b.iter().any(|v| !(*v > 0.0 && v.is_finite())) || w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter("q₂ must be positive and weights non-negative".into()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("q₁".into()));
        }
        Ok(Self { a, b, w, log_scale })
    }

    /// Equal-weight Monte Carlo problem from `log q₁` and a bank of `log q₂`.
    pub fn from_logs(log_q1: f64, log_q2: &[f64]) -> Result<Self> {
        if log_q2.is_empty() {
            return Err(Error::Empty("q₂ bank"));
        }
        let m = log_q2.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let b = log_q2.iter().map(|l| (l - m).exp()).collect::<Vec<_>>();
        let n = log_q2.len();
        Self::new(vec![1.0; n], b, vec![1.0 / n as f64; n], log_q1 - m)
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    fn weights(c1: f64, c2: f64, orientation: Orientation) -> (f64, f64) {
        // (weight on the negative part, weight on the positive part)
        match orientation {
            Orientation::Inf => (c2, c1),
            Orientation::Sup => (c1, c2),
        }
    }

    fn term(&self, i: usize, kappa: f64, c_neg: f64, c_pos: f64) -> f64 {
        let q = self.a[i] - kappa * self.b[i];
        if q < 0.0 {
            c_neg * q
        } else {
            c_pos * q
        }
    }

    /// `c_neg Σ wᵢ(aᵢ − κbᵢ)⁻ + c_pos Σ wᵢ(aᵢ − κbᵢ)⁺` in scaled units.
    pub fn psi_scaled(&self, kappa: f64, c1: f64, c2: f64, orientation: Orientation) -> f64 {
        let (cn, cp) = Self::weights(c1, c2, orientation);
        (0..self.len()).map(|i| self.w[i] * self.term(i, kappa, cn, cp)).sum()
    }

    /// `ψ(λ)` for `λ` on the ratio scale.
    pub fn psi(&self, lambda: f64, c1: f64, c2: f64, orientation: Orientation) -> f64 {
        self.psi_scaled(lambda * (-self.log_scale).exp(), c1, c2, orientation)
    }

    /// Point ratio `Σwa / Σwb` in scaled units.
    fn kappa_point(&self) -> f64 {
        let num: f64 = self.w.iter().zip(&self.a).map(|(w, a)| w * a).sum();
        let den: f64 = self.w.iter().zip(&self.b).map(|(w, b)| w * b).sum();
        num / den
    }

    /// Root of `ψ` by bracketing from the point ratio and bisection.
    pub fn solve(&self, c1: f64, c2: f64, orientation: Orientation) -> Result<Root> {
        check_constants(c1, c2)?;
        let f = |k: f64| self.psi_scaled(k, c1, c2, orientation);
        let start = self.kappa_point();
        if !(start.is_finite() && start > 0.0) {
            if start == 0.0 {
                return Ok(Root {
                    log_lambda: f64::NEG_INFINITY,
                    se_log: 0.0,
                });
            }
            return Err(Error::NonFinite("point ratio".into()));
        }
        let (mut lo, mut hi) = (start, start);
        let mut steps = 0;
        while f(lo) < 0.0 {
            lo *= 0.5;
            steps += 1;
            if steps > MAX_BRACKET_STEPS {
                return Err(Error::Bracketing(steps));
            }
        }
        steps = 0;
        while f(hi) > 0.0 {
            hi *= 2.0;
            steps += 1;
            if steps > MAX_BRACKET_STEPS {
                return Err(Error::Bracketing(steps));
            }
        }
        for _ in 0..400 {
            if hi - lo <= 1e-15 * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let kappa = 0.5 * (lo + hi);
        Ok(Root {
            log_lambda: kappa.ln() + self.log_scale,
            se_log: self.relative_se(kappa, c1, c2, orientation),
        })
    }

    /// Delta-method standard error of `log κ*` for an equal-weight sample:
    /// `sd(ψᵢ) / (√N · κ |ψ'(κ)|)`.
    fn relative_se(&self, kappa: f64, c1: f64, c2: f64, orientation: Orientation) -> f64 {
        let (cn, cp) = Self::weights(c1, c2, orientation);
        let n = self.len() as f64;
        let terms: Vec<f64> = (0..self.len()).map(|i| self.term(i, kappa, cn, cp)).collect();
        let mean = terms.iter().sum::<f64>() / n;
        let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let slope: f64 = (0..self.len())
            .map(|i| {
                let c = if self.a[i] - kappa * self.b[i] < 0.0 { cn } else { cp };
                c * self.b[i]
            })
            .sum::<f64>()
            / n;
        (var / n).sqrt() / (kappa * slope)
    }
}

fn check_constants(c1: f64, c2: f64) -> Result<()> {
    if !(c1 > 0.0 && c2 >= c1 && c2.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "density-ratio constants need 0 < c1 ≤ c2 (got {c1}, {c2})"
        )));
    }
    Ok(())
}

/// `log λ*` with its Monte Carlo standard error on the log scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Root {
    pub log_lambda: f64,
    pub se_log: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioBand {
    pub c1: f64,
    pub c2: f64,
    pub inf_b01: f64,
    pub sup_b01: f64,
    pub log_inf_b01: f64,
    pub log_sup_b01: f64,
    /// Larger of the two endpoint standard errors, on the B₀₁ scale.
    pub mc_se: f64,
    pub n_samples: usize,
}

pub fn solve_band(problem: &RatioProblem, c1: f64, c2: f64) -> Result<RatioBand> {
    let lo = problem.solve(c1, c2, Orientation::Inf)?;
    let hi = problem.solve(c1, c2, Orientation::Sup)?;
    let inf = lo.log_lambda.exp();
    let sup = hi.log_lambda.exp();
    Ok(RatioBand {
        c1,
        c2,
        inf_b01: inf,
        sup_b01: sup,
        log_inf_b01: lo.log_lambda,
        log_sup_b01: hi.log_lambda,
        mc_se: (inf * lo.se_log).max(sup * hi.se_log),
        n_samples: problem.len(),
    })
}

/// A bank of `log q₂(θᵢ)` with `θᵢ ~ N(θ⁰, τ̂²Γ)`.
#[derive(Clone, Debug)]
pub struct ThetaBank {
    pub log_q1: f64,
    pub log_q2: Vec<f64>,
    pub tau2: f64,
}

impl ThetaBank {
    /// Draws are generated sequentially from `mc.seed`; `q₂` is evaluated in parallel.
    pub fn draw(
        model: &WaveletModel,
        spec: &MembershipSpec,
        hp: &HyperPrior,
        quad: QuadratureConfig,
        mc: &MCConfig,
    ) -> Result<Self> {
        if mc.samples < MIN_SAMPLES {
            return Err(Error::InvalidParameter(format!(
                "Monte Carlo needs at least {MIN_SAMPLES} samples (got {})",
                mc.samples
            )));
        }
        let MembershipKind::Gaussian { gamma, .. } = spec.kind() else {
            return Err(Error::InvalidParameter(
                "robustness bands are implemented for the Gaussian membership only".into(),
            ));
        };
        let tau2 = match mc.tau2 {
            Some(t) => t,
            None => default_tau2(model, spec, hp, quad)?,
        };
        if !(tau2 > 0.0 && tau2.is_finite()) {
            return Err(Error::InvalidParameter(format!("τ̂² = {tau2}")));
        }
        let log_q1 = log_marginal_m0(&model.y, &model.g0_at_data, hp)?;
        let sd = gamma.diag().map(|g| (tau2 * g).sqrt());
        let theta0 = spec.theta0().values();
        let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
        let thetas: Vec<DVector<f64>> = (0..mc.samples)
            .map(|_| {
                DVector::from_fn(theta0.len(), |i, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    theta0[i] + sd[i] * z
                })
            })
            .collect();
        let qs = model.qn_spectral();
        let kernel = Q2Kernel::new(model.n(), hp, quad);
        let zx = qs.vectors.transpose() * &model.design.x;
        let yq = qs.vectors.transpose() * &model.y;
        let log_q2 = par::map_slice(&thetas, |t| kernel.log_q2(&(&yq - &zx * t), &qs.values));
        if log_q2.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("q₂ bank".into()));
        }
        Ok(Self { log_q1, log_q2, tau2 })
    }

    pub fn problem(&self) -> Result<RatioProblem> {
        RatioProblem::from_logs(self.log_q1, &self.log_q2)
    }

    /// Monte Carlo estimate of `q₁ / E_h[q₂]`.
    pub fn point_log_b01(&self) -> f64 {
        let n = self.log_q2.len() as f64;
        self.log_q1 - (log_sum_exp(&self.log_q2) - n.ln())
    }
}

/// Posterior mean of τ² under the conjugate fit.
pub fn default_tau2(
    model: &WaveletModel,
    spec: &MembershipSpec,
    hp: &HyperPrior,
    quad: QuadratureConfig,
) -> Result<f64> {
    let fit = fit_conjugate(
        model,
        spec,
        hp,
        ConjugateConfig {
            quad,
            ..ConjugateConfig::default()
        },
        &[],
    )?;
    fit.e_tau2
        .ok_or_else(|| Error::InvalidParameter("posterior mean of τ² is not finite; set τ̂² explicitly".into()))
}

/// Deterministic `log{q₁ / E_h[q₂]}` for the fixed-scale sampling membership.
pub fn point_log_b01(
    model: &WaveletModel,
    spec: &MembershipSpec,
    hp: &HyperPrior,
    quad: QuadratureConfig,
    tau2: f64,
) -> Result<f64> {
    let MembershipKind::Gaussian { gamma, .. } = spec.kind() else {
        return Err(Error::InvalidParameter("Gaussian membership only".into()));
    };
    let m0 = log_marginal_m0(&model.y, &model.g0_at_data, hp)?;
    let m1 = log_marginal_m1_fixed_scale(model, spec.theta0(), gamma, tau2, hp, quad)?;
    Ok(m0 - m1)
}

/// Bands for several `(c₁, c₂)` pairs on one shared bank.
pub fn robustness_bands(
    model: &WaveletModel,
    spec: &MembershipSpec,
    hp: &HyperPrior,
    quad: QuadratureConfig,
    mc: &MCConfig,
    constants: &[(f64, f64)],
) -> Result<(ThetaBank, Vec<RatioBand>)> {
    for &(c1, c2) in constants {
        check_constants(c1, c2)?;
    }
    let bank = ThetaBank::draw(model, spec, hp, quad, mc)?;
    let problem = bank.problem()?;
    let bands = constants
        .iter()
        .map(|&(c1, c2)| solve_band(&problem, c1, c2))
        .collect::<Result<Vec<_>>>()?;
    Ok((bank, bands))
}
