//! Compactly supported orthonormal wavelet families, their cascade tables and
//! the resolution plan that fixes which translates enter the model.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Default dyadic depth of the cascade tables.
pub const DEFAULT_DEPTH: u32 = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyName {
    /// Piecewise-constant; only for tests since its regularity is 1/2.
    Haar,
    #[serde(rename = "db2")]
    Daubechies2,
    #[serde(rename = "db3")]
    Daubechies3,
    #[serde(rename = "db4")]
    Daubechies4,
}

impl FromStr for FamilyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "haar" => Ok(Self::Haar),
            "db2" | "daubechies2" => Ok(Self::Daubechies2),
            "db3" | "daubechies3" => Ok(Self::Daubechies3),
            "db4" | "daubechies4" => Ok(Self::Daubechies4),
            _ => Err(Error::UnknownFamily(s.to_string())),
        }
    }
}

impl fmt::Display for FamilyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Haar => "haar",
            Self::Daubechies2 => "db2",
            Self::Daubechies3 => "db3",
            Self::Daubechies4 => "db4",
        })
    }
}

/// Low-pass filter plus the metadata the model needs.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletFamily {
    pub name: FamilyName,
    /// `h_0 .. h_{L-1}`, normalised so that `Σ h = √2`.
    pub filter: Vec<f64>,
    /// Nominal regularity index `s` of ψ.
    pub smoothness: f64,
}

impl WaveletFamily {
    /// Support length of φ (and of ψ): filter length − 1.
    pub fn support_len(&self) -> f64 {
        (self.filter.len() - 1) as f64
    }

    pub fn support_len_phi(&self) -> f64 {
        self.support_len()
    }

    pub fn support_len_psi(&self) -> f64 {
        self.support_len()
    }

    pub fn is_test_only(&self) -> bool {
        self.smoothness <= 0.5
    }

    /// High-pass filter `g_m = (-1)^m h_{L-1-m}`.
    pub fn high_pass(&self) -> Vec<f64> {
        let l = self.filter.len();
        (0..l)
            .map(|m| {
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                sign * self.filter[l - 1 - m]
            })
            .collect()
    }

    /// Largest violation of `Σ h = √2` and `Σ h_m h_{m+2l} = δ_{l0}`.
    pub fn filter_residual(&self) -> f64 {
        filter_conditions(&self.filter)
            .iter()
            .take(1 + self.filter.len() / 2)
            .fold(0.0_f64, |m, r| m.max(r.abs()))
    }
}

pub fn build_family(name: FamilyName) -> Result<WaveletFamily> {
    let (seed, smoothness): (&[f64], f64) = match name {
        FamilyName::Haar => (&[1.0 / SQRT2, 1.0 / SQRT2], 0.5),
        FamilyName::Daubechies2 => (&DB2, 1.0),
        FamilyName::Daubechies3 => (&DB3, 1.4),
        FamilyName::Daubechies4 => (&DB4, 1.8),
    };
    let filter = polish_filter(seed.to_vec());
    let family = WaveletFamily {
        name,
        filter,
        smoothness,
    };
    if family.filter_residual() > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "filter for {name} fails orthonormality (residual {:e})",
            family.filter_residual()
        )));
    }
    Ok(family)
}

pub fn family_from_str(name: &str) -> Result<WaveletFamily> {
    build_family(name.parse()?)
}

const DB2: [f64; 4] = [
    0.482_962_913_144_534_1,
    0.836_516_303_737_807_7,
    0.224_143_868_042_013_4,
    -0.129_409_522_551_260_34,
];

const DB3: [f64; 6] = [
    0.332_670_552_950_956_9,
    0.806_891_509_313_338_8,
    0.459_877_502_119_331_3,
    -0.135_011_020_010_390_84,
    -0.085_441_273_882_241_49,
    0.035_226_291_882_100_656,
];

const DB4: [f64; 8] = [
    0.230_377_813_308_855_23,
    0.714_846_570_552_541_5,
    0.630_880_767_929_590_4,
    -0.027_983_769_416_983_85,
    -0.187_034_811_718_881_14,
    0.030_841_381_835_986_965,
    0.032_883_011_666_982_945,
    -0.010_597_401_784_997_278,
];

/// Residuals of the defining equations of a Daubechies filter of length `2N`:
/// `Σh − √2`, the `N` orthonormality conditions and `N − 1` vanishing moments.
fn filter_conditions(h: &[f64]) -> Vec<f64> {
    let l = h.len();
    let n = l / 2;
    let mut out = Vec::with_capacity(l);
    out.push(h.iter().sum::<f64>() - SQRT2);
    for shift in 0..n {
        let s: f64 = (0..l.saturating_sub(2 * shift))
            .map(|m| h[m] * h[m + 2 * shift])
            .sum();
        out.push(s - if shift == 0 { 1.0 } else { 0.0 });
    }
    for r in 1..n {
        let s: f64 = h
            .iter()
            .enumerate()
            .map(|(m, v)| {
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                sign * (m as f64).powi(r as i32) * v
            })
            .sum();
        out.push(s);
    }
    out
}

/// A few Newton steps on the defining equations so the tabulated constants
/// satisfy them to machine precision.
fn polish_filter(mut h: Vec<f64>) -> Vec<f64> {
    let l = h.len();
    if l < 4 {
        return h;
    }
    let norm = |v: &[f64]| v.iter().map(|r| r * r).sum::<f64>().sqrt();
    for _ in 0..8 {
        let f = filter_conditions(&h);
        let fnorm = norm(&f);
        if fnorm < 1e-15 {
            break;
        }
        let mut jac = DMatrix::zeros(l, l);
        for c in 0..l {
            let eps = 1e-7;
            let mut hp = h.clone();
            hp[c] += eps;
            let mut hm = h.clone();
            hm[c] -= eps;
            let fp = filter_conditions(&hp);
            let fm = filter_conditions(&hm);
            for r in 0..l {
                jac[(r, c)] = (fp[r] - fm[r]) / (2.0 * eps);
            }
        }
        // the conditions are redundant, so take the minimum-norm step
        let Ok(step) = jac.svd(true, true).solve(&DVector::from_vec(f), 1e-6) else {
            break;
        };
        let cand: Vec<f64> = h.iter().zip(step.iter()).map(|(a, d)| a - d).collect();
        if norm(&filter_conditions(&cand)) >= fnorm {
            break;
        }
        h = cand;
    }
    h
}

/// φ and ψ tabulated on the dyadic grid of step `2^-depth` over `[0, L-1]`.
#[derive(Clone, Debug)]
pub struct ScalingTable {
    family: WaveletFamily,
    depth: u32,
    phi: Vec<f64>,
    psi: Vec<f64>,
    piecewise_constant: bool,
}

pub fn refine_scaling(family: &WaveletFamily, depth: u32) -> Result<ScalingTable> {
    if !(4..=20).contains(&depth) {
        return Err(Error::DepthOutOfRange(depth));
    }
    let h = &family.filter;
    let l = h.len();
    let last = l - 1;
    let scale = 1usize << depth;
    let len = last * scale + 1;
    let mut phi = vec![0.0; len];

    // Values at the integers: the eigenvector of the two-scale operator for
    // eigenvalue 1, normalised by the partition of unity Σ φ(k) = 1.
    if family.name == FamilyName::Haar {
        phi[0] = 1.0;
    } else {
        let interior = last - 1;
        let mut a = DMatrix::<f64>::zeros(interior, interior);
        for r in 0..interior {
            let m = (r + 1) as i64;
            for c in 0..interior {
                let i = (c + 1) as i64;
                let idx = 2 * m - i;
                if (0..l as i64).contains(&idx) {
                    a[(r, c)] = SQRT2 * h[idx as usize];
                }
            }
            a[(r, r)] -= 1.0;
        }
        // Replace the last (dependent) equation with the normalisation.
        for c in 0..interior {
            a[(interior - 1, c)] = 1.0;
        }
        let mut rhs = DVector::zeros(interior);
        rhs[interior - 1] = 1.0;
        let v = a
            .lu()
            .solve(&rhs)
            .ok_or(Error::NotPositiveDefinite("cascade eigenproblem"))?;
        for (i, val) in v.iter().enumerate() {
            phi[(i + 1) * scale] = *val;
        }
    }

    // Dyadic refinement: level d fills the odd multiples of 2^-d.
    for d in 1..=depth {
        let stride = 1usize << (depth - d);
        let mut i = stride;
        while i < len {
            if (i / stride) % 2 == 1 {
                phi[i] = two_scale(h, &phi, i, scale);
            }
            i += 2 * stride;
        }
    }

    let g = family.high_pass();
    let psi: Vec<f64> = (0..len).map(|i| two_scale(&g, &phi, i, scale)).collect();

    Ok(ScalingTable {
        family: family.clone(),
        depth,
        phi,
        psi,
        piecewise_constant: family.name == FamilyName::Haar,
    })
}

/// `√2 Σ_m c_m φ(2x − m)` at grid index `i` (x = i / scale).
fn two_scale(coef: &[f64], phi: &[f64], i: usize, scale: usize) -> f64 {
    let base = 2 * i as i64;
    coef.iter()
        .enumerate()
        .map(|(m, c)| {
            let idx = base - (m * scale) as i64;
            if idx >= 0 && (idx as usize) < phi.len() {
                c * phi[idx as usize]
            } else {
                0.0
            }
        })
        .sum::<f64>()
        * SQRT2
}

impl ScalingTable {
    pub fn family(&self) -> &WaveletFamily {
        &self.family
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn step(&self) -> f64 {
        1.0 / (1u64 << self.depth) as f64
    }

    /// Grid values of φ at `i · step`, `i = 0..=(L-1)·2^depth`.
    pub fn phi_grid(&self) -> &[f64] {
        &self.phi
    }

    pub fn psi_grid(&self) -> &[f64] {
        &self.psi
    }

    pub fn support_len(&self) -> f64 {
        self.family.support_len()
    }

    fn lookup(&self, values: &[f64], t: f64) -> f64 {
        let support = self.support_len();
        if !(0.0..support).contains(&t) {
            return 0.0;
        }
        let pos = t * (1u64 << self.depth) as f64;
        let i = pos.floor() as usize;
        if self.piecewise_constant || i + 1 >= values.len() {
            return values[i.min(values.len() - 1)];
        }
        let frac = pos - i as f64;
        values[i] + frac * (values[i + 1] - values[i])
    }

    pub fn phi(&self, t: f64) -> f64 {
        self.lookup(&self.phi, t)
    }

    pub fn psi(&self, t: f64) -> f64 {
        self.lookup(&self.psi, t)
    }

    /// `φ_k(x) = φ(x − k)`.
    pub fn phi_k(&self, k: i64, x: f64) -> f64 {
        self.phi(x - k as f64)
    }

    /// `ψ_{j,k}(x) = 2^{j/2} ψ(2^j x − k)`; zero outside the support.
    pub fn psi_jk(&self, j: u32, k: i64, x: f64) -> f64 {
        let scale = (2.0f64).powi(j as i32);
        scale.sqrt() * self.psi(scale * x - k as f64)
    }

    /// Non-zero terms `(k, ψ_{j,k}(x))` at level `j`.
    pub fn psi_level_terms(&self, j: u32, x: f64) -> impl Iterator<Item = (i64, f64)> + '_ {
        let scale = (2.0f64).powi(j as i32);
        let t = scale * x;
        let lo = (t - self.support_len()).floor() as i64;
        let hi = t.floor() as i64;
        let amp = scale.sqrt();
        (lo..=hi).filter_map(move |k| {
            let v = self.psi(t - k as f64);
            (v != 0.0).then_some((k, amp * v))
        })
    }

    pub fn max_abs_psi(&self) -> f64 {
        self.psi.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Largest violation of the two-scale relations for φ and ψ on the grid.
    pub fn two_scale_residual(&self) -> f64 {
        let scale = 1usize << self.depth;
        let g = self.family.high_pass();
        let mut worst = 0.0_f64;
        for i in 0..self.phi.len() {
            let rp = (self.phi[i] - two_scale(&self.family.filter, &self.phi, i, scale)).abs();
            let rs = (self.psi[i] - two_scale(&g, &self.phi, i, scale)).abs();
            worst = worst.max(rp).max(rs);
        }
        worst
    }
}

/// The index set `T = [lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: f64,
    pub hi: f64,
}

impl Domain {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidParameter(format!(
                "domain [{lo}, {hi}] is empty or non-finite"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn unit() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// Contiguous translation indices `k_min..=k_max` at one level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationRange {
    pub k_min: i64,
    pub k_max: i64,
}

impl TranslationRange {
    /// Translates whose support `[k, k + len] / 2^j` meets the interior of `T`.
    fn covering(domain: Domain, j: u32, support: f64) -> Self {
        let scale = (2.0f64).powi(j as i32);
        let k_min = (scale * domain.lo - support).floor() as i64 + 1;
        let k_max = (scale * domain.hi).ceil() as i64 - 1;
        Self { k_min, k_max }
    }

    pub fn len(&self) -> usize {
        (self.k_max - self.k_min + 1).max(0) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Symmetric bound `K` with `|k| > K` ⇒ translate vanishes on `T`.
    pub fn symmetric_bound(&self) -> i64 {
        self.k_min.abs().max(self.k_max.abs())
    }

    pub fn iter(&self) -> std::ops::RangeInclusive<i64> {
        self.k_min..=self.k_max
    }
}

/// Which basis function a coefficient multiplies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisIndex {
    Scaling { k: i64 },
    Wavelet { j: u32, k: i64 },
}

/// Resolution level, translation ranges and coefficient layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionPlan {
    pub level: u32,
    pub domain: Domain,
    pub alpha: TranslationRange,
    /// One range per level `j = 0..=level`.
    pub beta: Vec<TranslationRange>,
    pub support_len_phi: f64,
    pub support_len_psi: f64,
}

/// Upper bound on the coefficient count at level `level`:
/// `l_X 2^{J+1} + J (l_ψ + 1) + (l_φ + l_ψ + 2)`.
pub fn parameter_bound(l_x: f64, l_phi: f64, l_psi: f64, level: u32) -> f64 {
    l_x * (2.0f64).powi(level as i32 + 1) + level as f64 * (l_psi + 1.0) + (l_phi + l_psi + 2.0)
}

/// Largest `J` whose parameter bound does not exceed `n`.
pub fn max_resolution(l_x: f64, l_phi: f64, l_psi: f64, n: usize) -> Result<u32> {
    let needed = parameter_bound(l_x, l_phi, l_psi, 0);
    if needed > n as f64 {
        return Err(Error::InsufficientData { n, needed });
    }
    let mut level = 0;
    while level < 40 && parameter_bound(l_x, l_phi, l_psi, level + 1) <= n as f64 {
        level += 1;
    }
    Ok(level)
}

/// Plan at the largest admissible resolution for `n` observations.
pub fn plan_resolution(family: &WaveletFamily, domain: Domain, n: usize) -> Result<ResolutionPlan> {
    let level = max_resolution(
        domain.length(),
        family.support_len_phi(),
        family.support_len_psi(),
        n,
    )?;
    Ok(ResolutionPlan::with_level(family, domain, level))
}

impl ResolutionPlan {
    pub fn with_level(family: &WaveletFamily, domain: Domain, level: u32) -> Self {
        let l_phi = family.support_len_phi();
        let l_psi = family.support_len_psi();
        Self {
            level,
            domain,
            alpha: TranslationRange::covering(domain, 0, l_phi),
            beta: (0..=level)
                .map(|j| TranslationRange::covering(domain, j, l_psi))
                .collect(),
            support_len_phi: l_phi,
            support_len_psi: l_psi,
        }
    }

    /// Number of scaling coefficients.
    pub fn n_alpha(&self) -> usize {
        self.alpha.len()
    }

    /// `M_β`: number of wavelet coefficients over levels `0..=J`.
    pub fn m_beta(&self) -> usize {
        self.beta.iter().map(TranslationRange::len).sum()
    }

    /// Total coefficient count `p`.
    pub fn p(&self) -> usize {
        self.n_alpha() + self.m_beta()
    }

    /// Symmetric bounds `K_0, …, K_J` for the wavelet levels.
    pub fn k_bounds(&self) -> Vec<i64> {
        self.beta.iter().map(TranslationRange::symmetric_bound).collect()
    }

    /// Offset of the first coefficient of level `j`.
    pub fn level_offset(&self, j: u32) -> usize {
        self.n_alpha()
            + self.beta[..j as usize]
                .iter()
                .map(TranslationRange::len)
                .sum::<usize>()
    }

    /// Basis functions in coefficient order: α ascending in `k`, then β
    /// ascending in `(j, k)`.
    pub fn basis(&self) -> Vec<BasisIndex> {
        let mut out = Vec::with_capacity(self.p());
        out.extend(self.alpha.iter().map(|k| BasisIndex::Scaling { k }));
        for (j, range) in self.beta.iter().enumerate() {
            out.extend(range.iter().map(|k| BasisIndex::Wavelet { j: j as u32, k }));
        }
        out
    }

    /// Smallest interval containing the support of every basis function.
    /// Projections over it invert reconstruction exactly (up to quadrature).
    pub fn support_hull(&self) -> Domain {
        let mut lo = self.alpha.k_min as f64;
        let mut hi = self.alpha.k_max as f64 + self.support_len_phi;
        for (j, r) in self.beta.iter().enumerate() {
            if r.is_empty() {
                continue;
            }
            let scale = (2.0f64).powi(j as i32);
            lo = lo.min(r.k_min as f64 / scale);
            hi = hi.max((r.k_max as f64 + self.support_len_psi) / scale);
        }
        Domain { lo, hi }
    }

    /// Resolution level of each coefficient (`None` for the scaling block).
    pub fn levels(&self) -> Vec<Option<u32>> {
        self.basis()
            .into_iter()
            .map(|b| match b {
                BasisIndex::Scaling { .. } => None,
                BasisIndex::Wavelet { j, .. } => Some(j),
            })
            .collect()
    }
}

/// Evaluate one basis function.
pub fn eval_basis(table: &ScalingTable, b: BasisIndex, x: f64) -> f64 {
    match b {
        BasisIndex::Scaling { k } => table.phi_k(k, x),
        BasisIndex::Wavelet { j, k } => table.psi_jk(j, k, x),
    }
}

/// A family, its table and a plan bundled for repeated evaluation.
#[derive(Clone, Debug)]
pub struct Basis {
    pub table: Arc<ScalingTable>,
    pub plan: Arc<ResolutionPlan>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn haar_filter_is_exact() {
        let f = build_family(FamilyName::Haar).unwrap();
        assert_eq!(f.filter, vec![1.0 / SQRT2, 1.0 / SQRT2]);
        assert_eq!(f.support_len_phi(), 1.0);
        assert_eq!(f.support_len_psi(), 1.0);
        assert!(f.is_test_only());
    }

    #[test]
    fn daubechies2_matches_closed_form() {
        // The D4 filter solves Σh = √2, Σh² = 1, h0h2 + h1h3 = 0 and
        // -h1 + 2h2 - 3h3 = 0; its minimum-phase root is (1 ± √3, 3 ± √3)/(4√2).
        let s3 = 3f64.sqrt();
        let d = 4.0 * SQRT2;
        let closed = [(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d];
        let f = build_family(FamilyName::Daubechies2).unwrap();
        for (a, b) in f.filter.iter().zip(closed) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
        assert!((f.filter.iter().sum::<f64>() - SQRT2).abs() < 1e-12);
        assert!(!f.is_test_only());
    }

    #[test]
    fn longer_filters_satisfy_their_equations() {
        for name in [FamilyName::Daubechies3, FamilyName::Daubechies4] {
            let f = build_family(name).unwrap();
            let worst = filter_conditions(&f.filter)
                .iter()
                .fold(0.0_f64, |m, r| m.max(r.abs()));
            assert!(worst < 1e-13, "{name}: {worst:e}");
            assert_eq!(f.support_len(), (f.filter.len() - 1) as f64);
        }
    }

    #[test]
    fn unknown_family_is_rejected() {
        assert!(matches!(
            "Daubechies99".parse::<FamilyName>(),
            Err(Error::UnknownFamily(_))
        ));
    }

    #[test]
    fn haar_table_has_closed_form() {
        let f = build_family(FamilyName::Haar).unwrap();
        let t = refine_scaling(&f, 4).unwrap();
        for i in 0..16 {
            let x = i as f64 / 16.0 + 1.0 / 64.0;
            assert_eq!(t.phi(x), 1.0);
            assert_eq!(t.psi(x), if x < 0.5 { 1.0 } else { -1.0 });
        }
        assert_eq!(t.phi(1.0), 0.0);
        assert_eq!(t.psi_jk(0, 0, 0.25), 1.0);
        assert_eq!(t.psi_jk(1, 0, 0.1), SQRT2);
    }

    #[test]
    fn depth_outside_range_is_rejected() {
        let f = build_family(FamilyName::Daubechies2).unwrap();
        assert!(matches!(refine_scaling(&f, 2), Err(Error::DepthOutOfRange(2))));
        assert!(matches!(refine_scaling(&f, 21), Err(Error::DepthOutOfRange(21))));
    }

    #[test]
    fn cascade_satisfies_two_scale_relations() {
        for name in [
            FamilyName::Haar,
            FamilyName::Daubechies2,
            FamilyName::Daubechies3,
            FamilyName::Daubechies4,
        ] {
            let f = build_family(name).unwrap();
            let t = refine_scaling(&f, 12).unwrap();
            assert!(t.two_scale_residual() < 1e-8, "{name}");
            // grid spans the support exactly
            let n_steps = t.phi_grid().len() - 1;
            assert_relative_eq!(n_steps as f64 * t.step(), f.support_len());
        }
    }

    #[test]
    fn partition_of_unity_and_unit_integral() {
        let f = build_family(FamilyName::Daubechies2).unwrap();
        let t = refine_scaling(&f, 12).unwrap();
        let scale = 1usize << 12;
        // Σ_k φ(x − k) = 1 at every offset of the grid
        for off in (0..scale).step_by(97) {
            let s: f64 = (0..3).map(|k| t.phi_grid()[off + k * scale]).sum();
            assert!((s - 1.0).abs() < 1e-10, "offset {off}: {s}");
        }
        let riemann: f64 = t.phi_grid().iter().sum::<f64>() * t.step();
        assert!((riemann - 1.0).abs() < 1e-6);
    }

    #[test]
    fn outside_support_is_zero() {
        let f = build_family(FamilyName::Daubechies2).unwrap();
        let t = refine_scaling(&f, 12).unwrap();
        assert_eq!(t.psi_jk(0, 5, 0.5), 0.0);
        assert_eq!(t.phi(-0.1), 0.0);
        assert_eq!(t.phi(3.0), 0.0);
    }

    #[test]
    fn wavelet_support_length_shrinks_dyadically() {
        let f = build_family(FamilyName::Daubechies2).unwrap();
        let t = refine_scaling(&f, 12).unwrap();
        for j in 0..4u32 {
            let width = f.support_len_psi() / (2.0f64).powi(j as i32);
            let k = 1;
            let start = k as f64 / (2.0f64).powi(j as i32);
            assert_eq!(t.psi_jk(j, k, start - 1e-9), 0.0);
            assert_eq!(t.psi_jk(j, k, start + width), 0.0);
            assert_ne!(t.psi_jk(j, k, start + 0.37 * width), 0.0);
        }
    }

    #[test]
    fn resolution_from_parameter_bound() {
        assert_eq!(max_resolution(1.0, 3.0, 3.0, 185).unwrap(), 6);
        // J=1: 4 + 4 + 8 = 16 <= 20; J=2: 8 + 8 + 8 = 24 > 20
        assert_eq!(max_resolution(1.0, 3.0, 3.0, 20).unwrap(), 1);
        assert!(matches!(
            max_resolution(1.0, 3.0, 3.0, 5),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn plan_counts_active_translates() {
        let haar = build_family(FamilyName::Haar).unwrap();
        let plan = ResolutionPlan::with_level(&haar, Domain::unit(), 1);
        assert_eq!(plan.alpha, TranslationRange { k_min: 0, k_max: 0 });
        assert_eq!(plan.beta[1], TranslationRange { k_min: 0, k_max: 1 });
        assert_eq!(plan.p(), 4);

        let db2 = build_family(FamilyName::Daubechies2).unwrap();
        let plan = ResolutionPlan::with_level(&db2, Domain::unit(), 2);
        assert_eq!(plan.alpha, TranslationRange { k_min: -2, k_max: 0 });
        assert_eq!(plan.beta[2], TranslationRange { k_min: -2, k_max: 3 });
        assert_eq!(plan.k_bounds(), vec![2, 2, 3]);
        assert_eq!(plan.p(), 3 + 3 + 4 + 6);
    }

    #[test]
    fn translates_outside_the_plan_vanish_on_the_domain() {
        let db2 = build_family(FamilyName::Daubechies2).unwrap();
        let t = refine_scaling(&db2, 12).unwrap();
        let plan = ResolutionPlan::with_level(&db2, Domain::unit(), 3);
        for (j, r) in plan.beta.iter().enumerate() {
            for k in [r.k_min - 1, r.k_max + 1] {
                for i in 0..=200 {
                    let x = i as f64 / 200.0;
                    assert_eq!(t.psi_jk(j as u32, k, x), 0.0);
                }
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn resolution_is_monotone_in_n(n in 10usize..5000, extra in 0usize..500) {
            let a = max_resolution(1.0, 3.0, 3.0, n).unwrap();
            let b = max_resolution(1.0, 3.0, 3.0, n + extra).unwrap();
            proptest::prop_assert!(b >= a);
        }
    }
}
