//! Gauss–Legendre rules and the mapped grid used for integrals over the
//! variance ratio `u ∈ (0, ∞)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`,
/// nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "Gauss–Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                let (_, d) = legendre_with_derivative(n, z);
                dp = d;
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// A Gauss–Legendre rule mapped onto `[lo, hi]`.
#[derive(Clone, Debug)]
pub struct PanelRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl PanelRule {
    pub fn new(points: usize) -> Self {
        let (nodes, weights) = gauss_legendre(points);
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `∫_lo^hi f`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, lo: f64, hi: f64, mut f: F) -> f64 {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| w * f(mid + half * z))
            .sum::<f64>()
            * half
    }

    /// Mapped nodes and weights on `[lo, hi]`.
    pub fn mapped(&self, lo: f64, hi: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(z, w)| (mid + half * z, w * half))
    }
}

/// `log Σ exp(v_i)` without overflow; `-∞` for an empty or all `-∞` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Settings for the `u`-integrals: composite Gauss–Legendre in `log u` over
/// `[−40, 40]`, eight nodes per panel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    /// Total node count; rounded down to a multiple of eight.
    pub nodes: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { nodes: 800 }
    }
}

const LOG_U_RANGE: f64 = 40.0;
const U_PANEL_NODES: usize = 8;

/// One node of the mapped `u` grid.
#[derive(Clone, Copy, Debug)]
pub struct UNode {
    pub u: f64,
    /// `log(w_z · du/dz)` with `z = log u`.
    pub log_weight: f64,
}

/// The mapped grid for `∫_0^∞ f(u) du ≈ Σ exp(log_weight) f(u)`.
pub fn u_grid(config: QuadratureConfig) -> Vec<UNode> {
    let panels = (config.nodes / U_PANEL_NODES).max(1);
    let width = 2.0 * LOG_U_RANGE / panels as f64;
    let rule = PanelRule::new(U_PANEL_NODES);
    (0..panels)
        .flat_map(|p| {
            let lo = -LOG_U_RANGE + p as f64 * width;
            rule.mapped(lo, lo + width)
                .map(|(z, w)| UNode {
                    u: z.exp(),
                    log_weight: w.ln() + z,
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn legendre_rule_integrates_polynomials_exactly() {
        for n in [1, 2, 5, 16, 64, 201] {
            let rule = PanelRule::new(n);
            let deg = 2 * n - 1;
            let exact = 1.0 / (deg as f64 + 1.0);
            let got = rule.integrate(0.0, 1.0, |x| x.powi(deg as i32));
            assert_relative_eq!(got, exact, max_relative = 1e-12);
        }
    }

    #[test]
    fn weights_sum_to_interval_length() {
        let (_, w) = gauss_legendre(401);
        assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn u_grid_integrates_a_heavy_tailed_density() {
        // ∫_0^∞ (1 + u)^-3 du = 1/2
        let grid = u_grid(QuadratureConfig::default());
        let s: f64 = grid
            .iter()
            .map(|n| n.log_weight.exp() * (1.0 + n.u).powi(-3))
            .sum();
        assert_relative_eq!(s, 0.5, max_relative = 1e-10);
        // F(3, 40)-like shape: ∫ u^{1/2} (1 + u)^-3 du = B(3/2, 3/2) = π/8
        let s: f64 = grid
            .iter()
            .map(|n| n.log_weight.exp() * n.u.sqrt() * (1.0 + n.u).powi(-3))
            .sum();
        assert_relative_eq!(s, std::f64::consts::PI / 8.0, max_relative = 1e-10);
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_relative_eq!(log_sum_exp(&[1000.0, 1000.0]), 1000.0 + 2f64.ln());
        assert_relative_eq!(log_sum_exp(&[-1e5, 0.0]), 0.0);
    }
}
