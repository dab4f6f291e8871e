//! Interpolatory quadrature rules on arbitrary intervals.
//!
//! Clenshaw–Curtis (closed, exact through degree M) and Gauss–Legendre
//! (open, exact through degree 2M+1). Rules are built on a reference
//! interval and mapped affinely, so rebuilding a rule for a new interval —
//! as the collocation system does whenever the period changes — costs O(M).

use std::f64::consts::PI;

use crate::basis::legendre_eval;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    ClenshawCurtis,
    GaussLegendre,
}

/// An interpolatory quadrature rule with `M+1` nodes on `[a, b]`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub kind: RuleKind,
    /// Approximation level; the rule has `level + 1` nodes.
    pub level: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub interval: (f64, f64),
}

impl QuadratureRule {
    /// Polynomial degree integrated exactly.
    pub fn algebraic_degree(&self) -> usize {
        match self.kind {
            RuleKind::ClenshawCurtis => self.level,
            RuleKind::GaussLegendre => 2 * self.level + 1,
        }
    }

    /// The same rule mapped affinely onto `[a, b]`.
    pub fn mapped_to(&self, a: f64, b: f64) -> Result<QuadratureRule> {
        if a >= b {
            return Err(Error::invalid("quadrature interval must satisfy a < b"));
        }
        let (a0, b0) = self.interval;
        let scale = (b - a) / (b0 - a0);
        let nodes = self
            .nodes
            .iter()
            .map(|&x| a + (x - a0) * scale)
            .collect::<Vec<_>>();
        let weights = self.weights.iter().map(|&w| w * scale).collect();
        Ok(QuadratureRule {
            kind: self.kind,
            level: self.level,
            nodes,
            weights,
            interval: (a, b),
        })
    }
}

/// Closed Clenshaw–Curtis rule with `M+1` nodes at the mapped Chebyshev
/// extrema of `[a, b]`; weights by the explicit cosine-sum formula.
pub fn clenshaw_curtis(level: usize, a: f64, b: f64) -> Result<QuadratureRule> {
    if level == 0 {
        return Err(Error::invalid("Clenshaw-Curtis needs level M >= 1"));
    }
    if a >= b {
        return Err(Error::invalid("quadrature interval must satisfy a < b"));
    }
    let m = level;
    let mut nodes = Vec::with_capacity(m + 1);
    let mut weights = Vec::with_capacity(m + 1);
    for j in 0..=m {
        let theta = j as f64 * PI / m as f64;
        // ascending nodes: x_j = -cos(theta) on [-1, 1]
        nodes.push(-theta.cos());
        let mut s = 0.0;
        for k in 1..=m / 2 {
            let bk = if 2 * k == m { 1.0 } else { 2.0 };
            s += bk / ((4 * k * k - 1) as f64) * (2.0 * k as f64 * theta).cos();
        }
        let cj = if j == 0 || j == m { 1.0 } else { 2.0 };
        weights.push(cj / m as f64 * (1.0 - s));
    }
    nodes[0] = -1.0;
    nodes[m] = 1.0;
    QuadratureRule {
        kind: RuleKind::ClenshawCurtis,
        level,
        nodes,
        weights,
        interval: (-1.0, 1.0),
    }
    .mapped_to(a, b)
}

/// Gauss–Legendre rule with `M+1` points on `(a, b)`.
pub fn gauss_legendre_rule(level: usize, a: f64, b: f64) -> Result<QuadratureRule> {
    if a >= b {
        return Err(Error::invalid("quadrature interval must satisfy a < b"));
    }
    let n = level + 1;
    let roots = crate::basis::legendre_roots(n);
    let mut weights = Vec::with_capacity(n);
    for &x in &roots {
        let (_, dp) = legendre_eval(n, x);
        weights.push(2.0 / ((1.0 - x * x) * dp * dp));
    }
    QuadratureRule {
        kind: RuleKind::GaussLegendre,
        level,
        nodes: roots,
        weights,
        interval: (-1.0, 1.0),
    }
    .mapped_to(a, b)
}

/// Apply the rule to a vector-valued integrand: `Σ w_i f(α_i)`.
pub fn integrate(rule: &QuadratureRule, d: usize, mut f: impl FnMut(f64, &mut [f64])) -> Vec<f64> {
    let mut acc = vec![0.0; d];
    let mut buf = vec![0.0; d];
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        f(x, &mut buf);
        for (a, &v) in acc.iter_mut().zip(buf.iter()) {
            *a += w * v;
        }
    }
    acc
}

/// Scalar convenience form of [`integrate`].
pub fn integrate_scalar(rule: &QuadratureRule, mut f: impl FnMut(f64) -> f64) -> f64 {
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&x, &w)| w * f(x))
        .sum()
}
