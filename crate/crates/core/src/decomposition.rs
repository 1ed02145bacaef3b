//! Coefficient vectors, projection of a prior guess onto the basis, the design
//! matrix and the Gram matrix of the remainder process.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::par;
use crate::quadrature::PanelRule;
use crate::wavelet::{eval_basis, BasisIndex, Domain, ResolutionPlan, ScalingTable};
use crate::{Error, Result};

/// Gauss–Legendre nodes per dyadic panel.
pub const NODES_PER_PANEL: usize = 16;
/// Default total nodes per unit length of basis coordinate.
pub const DEFAULT_QUAD_POINTS: usize = 1024;
/// Default truncation tolerance for the remainder kernel series.
pub const DEFAULT_TAIL_TOL: f64 = 1e-8;

/// `θ = (α_k, β_{j,k})` in plan order.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientVector {
    plan: Arc<ResolutionPlan>,
    values: DVector<f64>,
}

impl CoefficientVector {
    pub fn new(plan: Arc<ResolutionPlan>, values: DVector<f64>) -> Result<Self> {
        if values.len() != plan.p() {
            return Err(Error::Dimension(format!(
                "{} coefficients for a plan with p = {}",
                values.len(),
                plan.p()
            )));
        }
        Ok(Self { plan, values })
    }

    pub fn zeros(plan: Arc<ResolutionPlan>) -> Self {
        let p = plan.p();
        Self {
            plan,
            values: DVector::zeros(p),
        }
    }

    pub fn plan(&self) -> &Arc<ResolutionPlan> {
        &self.plan
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DVector<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.values.as_slice()[..self.plan.n_alpha()]
    }

    pub fn beta(&self, j: u32) -> &[f64] {
        let start = self.plan.level_offset(j);
        let len = self.plan.beta[j as usize].len();
        &self.values.as_slice()[start..start + len]
    }

    pub fn same_plan(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.plan, &other.plan) || *self.plan == *other.plan
    }

    /// Same plan, new values.
    pub fn with_values(&self, values: DVector<f64>) -> Result<Self> {
        Self::new(self.plan.clone(), values)
    }
}

/// Coefficients `∫_T b(x) g0(x) dx` for every basis function of the plan.
///
/// `quad_points` is the number of Gauss–Legendre nodes per unit length of the
/// basis function's own coordinate; panels of 16 nodes are aligned to dyadic
/// breakpoints of that coordinate and to the ends of `T`.
pub fn project_coefficients<G>(
    g0: G,
    plan: &Arc<ResolutionPlan>,
    table: &ScalingTable,
    quad_points: usize,
) -> Result<CoefficientVector>
where
    G: Fn(f64) -> f64 + Sync,
{
    project_on(g0, plan, table, quad_points, plan.domain)
}

/// As [`project_coefficients`] but integrating over `region` instead of `T`.
pub fn project_on<G>(
    g0: G,
    plan: &Arc<ResolutionPlan>,
    table: &ScalingTable,
    quad_points: usize,
    region: Domain,
) -> Result<CoefficientVector>
where
    G: Fn(f64) -> f64 + Sync,
{
    if quad_points < 64 {
        return Err(Error::InvalidParameter(format!(
            "quad_points = {quad_points} (need >= 64)"
        )));
    }
    let panels_per_unit = (quad_points / NODES_PER_PANEL).next_power_of_two();
    let rule = PanelRule::new(NODES_PER_PANEL);
    let basis = plan.basis();
    let values = par::map_range(basis.len(), |i| {
        integrate_basis(&g0, table, basis[i], region, panels_per_unit, &rule)
    });
    let values: Vec<f64> = values.into_iter().collect::<Result<_>>()?;
    CoefficientVector::new(plan.clone(), DVector::from_vec(values))
}

fn integrate_basis<G: Fn(f64) -> f64>(
    g0: &G,
    table: &ScalingTable,
    b: BasisIndex,
    region: Domain,
    panels_per_unit: usize,
    rule: &PanelRule,
) -> Result<f64> {
    let (scale, k) = match b {
        BasisIndex::Scaling { k } => (1.0, k),
        BasisIndex::Wavelet { j, k } => ((2.0f64).powi(j as i32), k),
    };
    let support = table.support_len();
    let n_panels = (support * panels_per_unit as f64).round() as usize;
    let mut total = 0.0;
    for p in 0..n_panels {
        let t0 = p as f64 / panels_per_unit as f64;
        let t1 = (p + 1) as f64 / panels_per_unit as f64;
        let x0 = ((t0 + k as f64) / scale).max(region.lo);
        let x1 = ((t1 + k as f64) / scale).min(region.hi);
        if x1 <= x0 {
            continue;
        }
        let mut bad = None;
        total += rule.integrate(x0, x1, |x| {
            let g = g0(x);
            if !g.is_finite() {
                bad = Some(x);
            }
            eval_basis(table, b, x) * g
        });
        if let Some(x) = bad {
            return Err(Error::NonFinite(format!("g0({x})")));
        }
    }
    Ok(total)
}

/// `g_J(x) = Σ α_k φ_k(x) + Σ_{j≤J} β_{j,k} ψ_{j,k}(x)`.
pub fn reconstruct(theta: &CoefficientVector, table: &ScalingTable, x: f64) -> f64 {
    basis_row(theta.plan(), table, x).dot(theta.values())
}

/// The row `(φ_k(x))_k ⧺ (ψ_{j,k}(x))_{j,k}`.
pub fn basis_row(plan: &ResolutionPlan, table: &ScalingTable, x: f64) -> DVector<f64> {
    DVector::from_iterator(
        plan.p(),
        plan.basis().into_iter().map(|b| eval_basis(table, b, x)),
    )
}

/// `X` with row `i` equal to [`basis_row`] at `x_i`.
pub fn design_matrix(xs: &[f64], plan: &ResolutionPlan, table: &ScalingTable) -> Result<DMatrix<f64>> {
    if let Some(&x) = xs.iter().find(|&&x| !plan.domain.contains(x)) {
        return Err(Error::OutsideDomain {
            x,
            lo: plan.domain.lo,
            hi: plan.domain.hi,
        });
    }
    let basis = plan.basis();
    let rows = par::map_slice(xs, |&x| {
        basis
            .iter()
            .map(|&b| eval_basis(table, b, x))
            .collect::<Vec<f64>>()
    });
    Ok(DMatrix::from_fn(xs.len(), basis.len(), |i, c| rows[i][c]))
}

/// Truncation of the remainder series `Q(x, y)`.
#[derive(Clone, Copy, Debug)]
struct RemainderSeries {
    first: u32,
    last: u32,
    s: f64,
}

impl RemainderSeries {
    fn new(table: &ScalingTable, level: u32, s_eff: f64, tail_tol: f64) -> Result<Self> {
        if !(s_eff > 0.5) {
            return Err(Error::Smoothness(s_eff));
        }
        if !(tail_tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tail_tol = {tail_tol}")));
        }
        // Level j contributes at most C·2^{j(1−2s)} in absolute value.
        let c = (table.support_len() + 1.0) * table.max_abs_psi().powi(2);
        let ratio = (2.0f64).powf(1.0 - 2.0 * s_eff);
        let tail_after = |j: u32| c * ratio.powi(j as i32 + 1) / (1.0 - ratio);
        let first = level + 1;
        let mut last = first;
        while tail_after(last) >= tail_tol {
            last += 1;
            if last > 52 {
                return Err(Error::InvalidParameter(format!(
                    "tail_tol = {tail_tol:e} unreachable with s = {s_eff}"
                )));
            }
        }
        Ok(Self {
            first,
            last,
            s: s_eff,
        })
    }

    /// Non-zero `(j, k, 2^{-js} ψ_{j,k}(x))`, ordered by `(j, k)`.
    fn features(&self, table: &ScalingTable, x: f64) -> Vec<(u32, i64, f64)> {
        let mut out = Vec::new();
        for j in self.first..=self.last {
            let w = (2.0f64).powf(-(j as f64) * self.s);
            out.extend(table.psi_level_terms(j, x).map(|(k, v)| (j, k, w * v)));
        }
        out
    }
}

fn merge_dot(a: &[(u32, i64, f64)], b: &[(u32, i64, f64)]) -> f64 {
    let (mut i, mut l) = (0, 0);
    let mut sum = 0.0;
    while i < a.len() && l < b.len() {
        let ka = (a[i].0, a[i].1);
        let kb = (b[l].0, b[l].1);
        match ka.cmp(&kb) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => l += 1,
            std::cmp::Ordering::Equal => {
                sum += a[i].2 * b[l].2;
                i += 1;
                l += 1;
            }
        }
    }
    sum
}

/// `Q(x, y) = Σ_{j>J} 2^{-2js} Σ_k ψ_{j,k}(x) ψ_{j,k}(y)`, truncated where the
/// geometric tail bound falls below `tail_tol`.
pub fn remainder_kernel(
    x: f64,
    y: f64,
    table: &ScalingTable,
    level: u32,
    s_eff: f64,
    tail_tol: f64,
) -> Result<f64> {
    let series = RemainderSeries::new(table, level, s_eff, tail_tol)?;
    Ok(merge_dot(
        &series.features(table, x),
        &series.features(table, y),
    ))
}

/// `(Q_n)_{il} = Q(x_i, x_l)`, symmetrised, with negative eigenvalues clipped.
pub fn gram_remainder(
    xs: &[f64],
    table: &ScalingTable,
    level: u32,
    s_eff: f64,
    tail_tol: f64,
) -> Result<DMatrix<f64>> {
    let mut q = gram_remainder_raw(xs, table, level, s_eff, tail_tol)?;
    clip_to_psd(&mut q);
    Ok(q)
}

/// [`gram_remainder`] before eigenvalue clipping.
pub fn gram_remainder_raw(
    xs: &[f64],
    table: &ScalingTable,
    level: u32,
    s_eff: f64,
    tail_tol: f64,
) -> Result<DMatrix<f64>> {
    let series = RemainderSeries::new(table, level, s_eff, tail_tol)?;
    let feats = par::map_slice(xs, |&x| series.features(table, x));
    let n = xs.len();
    let rows = par::map_range(n, |i| {
        (0..=i)
            .map(|l| merge_dot(&feats[i], &feats[l]))
            .collect::<Vec<f64>>()
    });
    let mut q = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (l, v) in row.iter().enumerate() {
            q[(i, l)] = *v;
            q[(l, i)] = *v;
        }
    }
    Ok(q)
}

/// Symmetrise and clip negative eigenvalues to zero; returns the smallest
/// eigenvalue before clipping.
pub fn clip_to_psd(m: &mut DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let sym = (&*m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < 0.0 {
        let clipped = eig.eigenvalues.map(|v| v.max(0.0));
        *m = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
        let sym = (&*m + m.transpose()) * 0.5;
        *m = sym;
    } else {
        *m = sym;
    }
    min
}

/// `X`, `Q_n` and the abscissae they were built on.
#[derive(Clone, Debug)]
pub struct DesignMatrices {
    pub x: DMatrix<f64>,
    pub qn: DMatrix<f64>,
    pub abscissae: Vec<f64>,
}

impl DesignMatrices {
    pub fn build(
        xs: &[f64],
        plan: &ResolutionPlan,
        table: &ScalingTable,
        s_eff: f64,
        tail_tol: f64,
    ) -> Result<Self> {
        Ok(Self {
            x: design_matrix(xs, plan, table)?,
            qn: gram_remainder(xs, table, plan.level, s_eff, tail_tol)?,
            abscissae: xs.to_vec(),
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}
