//! Membership functions `h_A(θ)` around the prior guess `θ⁰`, the prior scale
//! structure `Γ`, and the hyperprior on `(σ², u)`.
//!
//! Memberships are normalised so that `h_A(θ⁰) = 1`; they are only ever used up
//! to a multiplicative constant.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::decomposition::CoefficientVector;
use crate::wavelet::ResolutionPlan;
use crate::{Error, Result};

/// Diagonal of `Γ`: ones on the scaling block, `2^{-2js}` on level `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaStructure {
    diag: DVector<f64>,
    smoothness: f64,
}

impl GammaStructure {
    pub fn new(plan: &ResolutionPlan, smoothness: f64) -> Self {
        let diag = DVector::from_iterator(
            plan.p(),
            plan.levels().into_iter().map(|lvl| match lvl {
                None => 1.0,
                Some(j) => (2.0f64).powf(-2.0 * j as f64 * smoothness),
            }),
        );
        Self { diag, smoothness }
    }

    pub fn diag(&self) -> &DVector<f64> {
        &self.diag
    }

    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.diag)
    }
}

/// Truncated squared L² distance `ρ_J²` between two coefficient vectors.
pub fn rho_j_sq(theta: &CoefficientVector, theta0: &CoefficientVector) -> Result<f64> {
    if !theta.same_plan(theta0) {
        return Err(Error::PlanMismatch);
    }
    Ok((theta.values() - theta0.values()).norm_squared())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MembershipKindName {
    Gaussian,
    StudentT,
    UniformEllipsoid,
}

#[derive(Clone, Debug)]
pub enum MembershipKind {
    /// `exp(−weight · ρ_J²)`; the conjugate path replaces the free weight by
    /// the hierarchical `N(θ⁰, τ²Γ)` density.
    Gaussian { gamma: GammaStructure, weight: f64 },
    /// `(1 + (θ−θ⁰)'V⁻¹(θ−θ⁰)/q)^{−(p+q)/2}`.
    StudentT {
        q: f64,
        v: DMatrix<f64>,
        v_chol: Cholesky<f64, Dyn>,
    },
    /// Indicator of `ρ_J ≤ δ`.
    UniformEllipsoid { delta: f64 },
}

#[derive(Clone, Debug)]
pub struct MembershipSpec {
    theta0: CoefficientVector,
    kind: MembershipKind,
}

impl MembershipSpec {
    pub fn gaussian(theta0: CoefficientVector, gamma: GammaStructure, weight: f64) -> Result<Self> {
        if gamma.len() != theta0.len() {
            return Err(Error::Dimension(format!(
                "Γ has {} entries, θ⁰ has {}",
                gamma.len(),
                theta0.len()
            )));
        }
        if !(weight > 0.0) {
            return Err(Error::InvalidParameter(format!("weight = {weight}")));
        }
        Ok(Self {
            theta0,
            kind: MembershipKind::Gaussian { gamma, weight },
        })
    }

    pub fn student_t(theta0: CoefficientVector, q: f64, v: DMatrix<f64>) -> Result<Self> {
        if !(q > 2.0) {
            return Err(Error::InvalidParameter(format!(
                "Student-t degrees of freedom q = {q} (need q > 2)"
            )));
        }
        let p = theta0.len();
        if v.shape() != (p, p) {
            return Err(Error::Dimension(format!("V is {:?}, need {p}x{p}", v.shape())));
        }
        let v_chol = Cholesky::new(v.clone()).ok_or(Error::NotPositiveDefinite("V"))?;
        Ok(Self {
            theta0,
            kind: MembershipKind::StudentT { q, v, v_chol },
        })
    }

    /// Student-t membership with `V = Γ`.
    pub fn student_t_with_gamma(theta0: CoefficientVector, q: f64, gamma: &GammaStructure) -> Result<Self> {
        Self::student_t(theta0, q, gamma.to_matrix())
    }

    pub fn ellipsoid(theta0: CoefficientVector, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::InvalidParameter(format!("ellipsoid radius δ = {delta}")));
        }
        Ok(Self {
            theta0,
            kind: MembershipKind::UniformEllipsoid { delta },
        })
    }

    pub fn theta0(&self) -> &CoefficientVector {
        &self.theta0
    }

    pub fn kind(&self) -> &MembershipKind {
        &self.kind
    }

    pub fn kind_name(&self) -> MembershipKindName {
        match self.kind {
            MembershipKind::Gaussian { .. } => MembershipKindName::Gaussian,
            MembershipKind::StudentT { .. } => MembershipKindName::StudentT,
            MembershipKind::UniformEllipsoid { .. } => MembershipKindName::UniformEllipsoid,
        }
    }

    pub fn p(&self) -> usize {
        self.theta0.len()
    }

    /// `(θ−θ⁰)'V⁻¹(θ−θ⁰)` for the Student-t kind, `ρ_J²` otherwise.
    pub fn quadratic_form(&self, theta: &DVector<f64>) -> f64 {
        let d = theta - self.theta0.values();
        match &self.kind {
            MembershipKind::StudentT { v_chol, .. } => {
                let z = v_chol.l().solve_lower_triangular(&d).expect("triangular solve");
                z.norm_squared()
            }
            _ => d.norm_squared(),
        }
    }

    /// `log h_A(θ)` on raw coefficient values.
    pub fn log_eval_values(&self, theta: &DVector<f64>) -> f64 {
        match &self.kind {
            MembershipKind::Gaussian { weight, .. } => -weight * self.quadratic_form(theta),
            MembershipKind::StudentT { q, .. } => {
                let p = self.p() as f64;
                -0.5 * (p + q) * (self.quadratic_form(theta) / q).ln_1p()
            }
            MembershipKind::UniformEllipsoid { delta } => {
                if self.quadratic_form(theta) <= delta * delta {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }
}

/// `log h_A(θ) ≤ 0`.
pub fn membership_log_eval(spec: &MembershipSpec, theta: &CoefficientVector) -> Result<f64> {
    if !theta.same_plan(&spec.theta0) {
        return Err(Error::PlanMismatch);
    }
    Ok(spec.log_eval_values(theta.values()))
}

/// Intersection of fuzzy sets: `h_{A∩B} = h_A h_B`.
#[derive(Clone, Debug)]
pub struct CompositeMembership {
    parts: Vec<MembershipSpec>,
}

pub fn combine(specs: &[MembershipSpec]) -> Result<CompositeMembership> {
    let first = specs.first().ok_or(Error::Empty("membership list"))?;
    if specs.iter().any(|s| !s.theta0.same_plan(&first.theta0)) {
        return Err(Error::PlanMismatch);
    }
    Ok(CompositeMembership {
        parts: specs.to_vec(),
    })
}

impl CompositeMembership {
    pub fn parts(&self) -> &[MembershipSpec] {
        &self.parts
    }

    pub fn log_eval(&self, theta: &CoefficientVector) -> Result<f64> {
        self.parts
            .iter()
            .map(|s| membership_log_eval(s, theta))
            .sum()
    }
}

/// Inverse-gamma `(c, k)` prior on σ² and F(b, a) prior on `u = τ²/σ²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperPrior {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub k: f64,
}

/// The `(c, k)` settings explored for the smoother.
pub const CK_PRESETS: [(f64, f64); 3] = [(2.0, 1.5), (1.5, 0.5), (1.05, 0.05)];
/// Ellipsoid radii explored for the uniform membership.
pub const DELTA_PRESETS: [f64; 3] = [0.5, 1.0, 5.0];

impl Default for HyperPrior {
    fn default() -> Self {
        Self::from_b(3.0, 2.0, 1.5).expect("valid defaults")
    }
}

impl HyperPrior {
    pub fn new(a: f64, b: f64, c: f64, k: f64) -> Result<Self> {
        let hp = Self { a, b, c, k };
        hp.validate()?;
        Ok(hp)
    }

    /// `a = 8(b + 2)/(b − 2)`.
    pub fn from_b(b: f64, c: f64, k: f64) -> Result<Self> {
        if !(b > 2.0) {
            return Err(Error::InvalidParameter(format!(
                "b = {b}: a = 8(b+2)/(b-2) needs b > 2"
            )));
        }
        Self::new(8.0 * (b + 2.0) / (b - 2.0), b, c, k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.a > 0.0 && self.b > 0.0 && self.c > 1.0 && self.k > 0.0;
        if !ok || ![self.a, self.b, self.c, self.k].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "hyperprior needs a, b > 0, c > 1, k > 0 (got a={}, b={}, c={}, k={})",
                self.a, self.b, self.c, self.k
            )));
        }
        Ok(())
    }

    /// `log{k^{c−1}/Γ(c−1)}`.
    pub fn log_ig_norm(&self) -> f64 {
        (self.c - 1.0) * self.k.ln() - ln_gamma(self.c - 1.0)
    }

    /// `log[{k^{c−1}/Γ(c−1)} exp(−k/σ²)(σ²)^{−c}]`.
    pub fn log_sigma2_density(&self, sigma2: f64) -> f64 {
        self.log_ig_norm() - self.k / sigma2 - self.c * sigma2.ln()
    }

    /// Log density of F(b, a) at `u`.
    pub fn log_u_density(&self, u: f64) -> f64 {
        let (a, b) = (self.a, self.b);
        0.5 * b * (b / a).ln() + (0.5 * b - 1.0) * u.ln()
            - 0.5 * (a + b) * (b * u / a).ln_1p()
            - ln_beta(0.5 * b, 0.5 * a)
    }

    /// `log[u^{b/2} / (a + bu)^{(a+b)/2}]`, the factor as it is printed in the
    /// closed-form u-posterior.
    pub fn log_u_kernel_as_printed(&self, u: f64) -> f64 {
        0.5 * self.b * u.ln() - 0.5 * (self.a + self.b) * (self.a + self.b * u).ln()
    }
}

/// Log of the product of the σ² and `u` prior densities.
pub fn hyper_log_density(hp: &HyperPrior, sigma2: f64, u: f64) -> Result<f64> {
    if !(sigma2 > 0.0 && u > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "hyperprior density needs σ² > 0 and u > 0 (got {sigma2}, {u})"
        )));
    }
    Ok(hp.log_sigma2_density(sigma2) + hp.log_u_density(u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::{build_family, Domain, FamilyName};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn plan(p_level: u32) -> Arc<ResolutionPlan> {
        let f = build_family(FamilyName::Daubechies2).unwrap();
        Arc::new(ResolutionPlan::with_level(&f, Domain::unit(), p_level))
    }

    fn random_vec(plan: &Arc<ResolutionPlan>, rng: &mut ChaCha8Rng) -> CoefficientVector {
        let v = DVector::from_fn(plan.p(), |_, _| rng.random_range(-1.0..1.0));
        CoefficientVector::new(plan.clone(), v).unwrap()
    }

    #[test]
    fn gamma_decays_per_level() {
        let pl = plan(2);
        let g = GammaStructure::new(&pl, 1.0);
        assert!(g.diag().iter().take(pl.n_alpha()).all(|&v| v == 1.0));
        assert_eq!(g.diag()[pl.level_offset(0)], 1.0);
        assert_eq!(g.diag()[pl.level_offset(1)], 0.25);
        assert_eq!(g.diag()[pl.level_offset(2)], 1.0 / 16.0);
    }

    #[test]
    fn rho_identities() {
        let pl = plan(1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_vec(&pl, &mut rng);
        assert_eq!(rho_j_sq(&a, &a).unwrap(), 0.0);
        let zero = CoefficientVector::zeros(pl.clone());
        let mut e = DVector::zeros(pl.p());
        e[4] = 1.0;
        let unit = CoefficientVector::new(pl.clone(), e).unwrap();
        assert_eq!(rho_j_sq(&unit, &zero).unwrap(), 1.0);
        let b = random_vec(&pl, &mut rng);
        let direct: f64 = a
            .values()
            .iter()
            .zip(b.values().iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        assert_relative_eq!(rho_j_sq(&a, &b).unwrap(), direct, epsilon = 1e-12);
        let other = CoefficientVector::zeros(plan(2));
        assert!(matches!(rho_j_sq(&a, &other), Err(Error::PlanMismatch)));
    }

    #[test]
    fn every_kind_is_one_at_the_guess() {
        let pl = plan(1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let th0 = random_vec(&pl, &mut rng);
        let g = GammaStructure::new(&pl, 1.0);
        let specs = [
            MembershipSpec::gaussian(th0.clone(), g.clone(), 1.0).unwrap(),
            MembershipSpec::student_t_with_gamma(th0.clone(), 4.0, &g).unwrap(),
            MembershipSpec::ellipsoid(th0.clone(), 1.0).unwrap(),
        ];
        for s in &specs {
            assert_eq!(membership_log_eval(s, &th0).unwrap(), 0.0);
            for _ in 0..50 {
                let th = random_vec(&pl, &mut rng);
                let v = membership_log_eval(s, &th).unwrap();
                assert!(v <= 0.0);
            }
        }
    }

    #[test]
    fn ellipsoid_boundary() {
        let pl = plan(0);
        let th0 = CoefficientVector::zeros(pl.clone());
        let s = MembershipSpec::ellipsoid(th0, 1.0).unwrap();
        let mut v = DVector::zeros(pl.p());
        v[0] = 1.0001;
        let outside = CoefficientVector::new(pl.clone(), v.clone()).unwrap();
        assert_eq!(membership_log_eval(&s, &outside).unwrap(), f64::NEG_INFINITY);
        v[0] = 0.9999;
        let inside = CoefficientVector::new(pl, v).unwrap();
        assert_eq!(membership_log_eval(&s, &inside).unwrap(), 0.0);
    }

    #[test]
    fn student_t_value_by_hand() {
        // p = 2, q = 4, V = I, ‖θ−θ⁰‖² = 4: (1 + 4/4)^{−3} ⇒ −3 log 2.
        let haar = build_family(FamilyName::Haar).unwrap();
        let pl = Arc::new(ResolutionPlan::with_level(&haar, Domain::unit(), 0));
        assert_eq!(pl.p(), 2);
        let th0 = CoefficientVector::zeros(pl.clone());
        let s = MembershipSpec::student_t(th0, 4.0, DMatrix::identity(2, 2)).unwrap();
        let th = CoefficientVector::new(pl, DVector::from_vec(vec![2.0, 0.0])).unwrap();
        assert_relative_eq!(
            membership_log_eval(&s, &th).unwrap(),
            -3.0 * 2f64.ln(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn student_t_preconditions() {
        let pl = plan(0);
        let th0 = CoefficientVector::zeros(pl.clone());
        let p = pl.p();
        assert!(MembershipSpec::student_t(th0.clone(), 2.0, DMatrix::identity(p, p)).is_err());
        let mut bad = DMatrix::identity(p, p);
        bad[(0, 0)] = -1.0;
        assert!(matches!(
            MembershipSpec::student_t(th0, 4.0, bad),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn gaussian_is_weighted_rho() {
        let pl = plan(1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let th0 = random_vec(&pl, &mut rng);
        let g = GammaStructure::new(&pl, 1.0);
        let s = MembershipSpec::gaussian(th0.clone(), g, 2.5).unwrap();
        for _ in 0..20 {
            let th = random_vec(&pl, &mut rng);
            assert_relative_eq!(
                membership_log_eval(&s, &th).unwrap(),
                -2.5 * rho_j_sq(&th, &th0).unwrap(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn combining_memberships() {
        let pl = plan(1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let th0 = random_vec(&pl, &mut rng);
        let g = GammaStructure::new(&pl, 1.0);
        let a = MembershipSpec::gaussian(th0.clone(), g.clone(), 0.7).unwrap();
        let b = MembershipSpec::gaussian(th0.clone(), g.clone(), 1.6).unwrap();
        let ab = MembershipSpec::gaussian(th0.clone(), g, 2.3).unwrap();
        let single = combine(std::slice::from_ref(&a)).unwrap();
        let both = combine(&[a.clone(), b]).unwrap();
        let e = MembershipSpec::ellipsoid(th0.clone(), 0.5).unwrap();
        let truncated = combine(&[a.clone(), e]).unwrap();
        for _ in 0..30 {
            let th = random_vec(&pl, &mut rng);
            assert_eq!(single.log_eval(&th).unwrap(), membership_log_eval(&a, &th).unwrap());
            assert_relative_eq!(
                both.log_eval(&th).unwrap(),
                membership_log_eval(&ab, &th).unwrap(),
                epsilon = 1e-12
            );
            let inside = rho_j_sq(&th, &th0).unwrap() <= 0.25;
            let v = truncated.log_eval(&th).unwrap();
            if inside {
                assert_eq!(v, membership_log_eval(&a, &th).unwrap());
            } else {
                assert_eq!(v, f64::NEG_INFINITY);
            }
        }
        assert!(matches!(combine(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn hyperprior_defaults_and_values() {
        let hp = HyperPrior::from_b(3.0, 2.0, 1.5).unwrap();
        assert_eq!(hp.a, 40.0);
        assert_eq!(hp, HyperPrior::default());
        assert_relative_eq!(hp.log_sigma2_density(1.0), 1.5f64.ln() - 1.5, epsilon = 1e-14);
        assert!(hp.log_u_density(1e-12).exp() < 1e-5);
        assert!(hyper_log_density(&hp, 0.0, 1.0).is_err());
        assert!(hyper_log_density(&hp, 1.0, -1.0).is_err());
        assert!(HyperPrior::new(40.0, 3.0, 1.0, 1.5).is_err());
        assert!(HyperPrior::new(40.0, 3.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn hyperprior_integrates_to_one() {
        // Product of two proper densities; check each factor on a log grid.
        for hp in [
            HyperPrior::default(),
            HyperPrior::from_b(3.0, 1.5, 0.5).unwrap(),
            HyperPrior::from_b(4.0, 3.0, 2.0).unwrap(),
        ] {
            let rule = crate::quadrature::PanelRule::new(32);
            let mut s2 = 0.0;
            let mut su = 0.0;
            for p in 0..400 {
                let lo = -40.0 + p as f64 * 0.2;
                s2 += rule.integrate(lo, lo + 0.2, |z| {
                    (hp.log_sigma2_density(z.exp()) + z).exp()
                });
                su += rule.integrate(lo, lo + 0.2, |z| (hp.log_u_density(z.exp()) + z).exp());
            }
            assert!((s2 * su - 1.0).abs() < 1e-3, "{hp:?}: {s2} {su}");
        }
    }

    proptest::proptest! {
        #[test]
        fn guess_is_the_unique_maximiser(seed in 0u64..1000, scale in 1e-3f64..2.0) {
            let pl = plan(1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let th0 = random_vec(&pl, &mut rng);
            let g = GammaStructure::new(&pl, 1.0);
            let specs = [
                MembershipSpec::gaussian(th0.clone(), g.clone(), 1.0).unwrap(),
                MembershipSpec::student_t_with_gamma(th0.clone(), 5.0, &g).unwrap(),
            ];
            let dir = random_vec(&pl, &mut rng);
            let moved = th0.with_values(th0.values() + dir.values() * scale).unwrap();
            for s in &specs {
                proptest::prop_assert!(membership_log_eval(s, &moved).unwrap() < 0.0);
            }
        }
    }
}
