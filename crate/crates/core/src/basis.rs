//! Meshes, collocation abscissae, barycentric Lagrange interpolation and
//! piecewise polynomial representation on [0, 1].
//!
//! A mesh subdivides [0, 1] into `L` uniform intervals of width `h = 1/L`.
//! Each interval carries `m` collocation abscissae mapped from reference
//! abscissae `0 < c_1 < … < c_m ≤ 1`. A piecewise polynomial of degree `m`
//! is stored through its values at the global grid (the point 0 plus all
//! collocation points). When `c_m = 1` the right endpoints are shared grid
//! nodes and continuity of the representation is automatic; otherwise the
//! interval endpoint values are propagated left to right (the continuity
//! constraint at the interior mesh points determines them).

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Built-in collocation abscissae families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AbscissaeFamily {
    /// `c_j = (1 − cos(jπ/m))/2`; includes the right endpoint `c_m = 1`.
    ChebyshevExtrema,
    /// Roots of the degree-`m` Legendre polynomial mapped to (0, 1); interior.
    GaussLegendre,
}

impl AbscissaeFamily {
    pub fn name(&self) -> &'static str {
        match self {
            AbscissaeFamily::ChebyshevExtrema => "chebyshev",
            AbscissaeFamily::GaussLegendre => "legendre",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "chebyshev" => Ok(AbscissaeFamily::ChebyshevExtrema),
            "legendre" => Ok(AbscissaeFamily::GaussLegendre),
            other => Err(Error::invalid(format!("unknown abscissae family `{other}`"))),
        }
    }
}

/// Chebyshev-extrema abscissae `c_j = (1 − cos(jπ/m))/2`, `j = 1..m`.
pub fn chebyshev_extrema_abscissae(m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::invalid("degree m must be at least 1"));
    }
    let mut c: Vec<f64> = (1..=m)
        .map(|j| {
            let s = (0.5 * j as f64 * PI / m as f64).sin();
            s * s
        })
        .collect();
    c[m - 1] = 1.0;
    Ok(c)
}

/// Gauss–Legendre abscissae: the `m` roots of the Legendre polynomial `P_m`
/// mapped affinely from [−1, 1] to (0, 1).
pub fn gauss_legendre_abscissae(m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::invalid("degree m must be at least 1"));
    }
    let roots = legendre_roots(m);
    Ok(roots.iter().map(|x| 0.5 * (1.0 + x)).collect())
}

/// Roots of `P_m` on (−1, 1), ascending, by Newton iteration on the
/// three-term recurrence.
pub(crate) fn legendre_roots(m: usize) -> Vec<f64> {
    let mut roots = vec![0.0; m];
    for k in 0..m {
        // Chebyshev-based initial guess for the (k+1)-th root in descending order
        let mut x = (PI * (k as f64 + 0.75) / (m as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_eval(m, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        roots[m - 1 - k] = x;
    }
    roots
}

/// Evaluate `(P_m(x), P_m'(x))` via the recurrence.
pub(crate) fn legendre_eval(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if m == 0 {
        return (1.0, 0.0);
    }
    for n in 1..m {
        let p2 = ((2 * n + 1) as f64 * x * p1 - n as f64 * p0) / (n + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Barycentric weights `w_k = 1/∏_{j≠k}(x_k − x_j)`, normalized so the
/// largest magnitude is 1 (any common scaling cancels in evaluation).
pub fn barycentric_weights(nodes: &[f64]) -> Result<Vec<f64>> {
    let n = nodes.len();
    let mut w = vec![1.0; n];
    for k in 0..n {
        for j in 0..n {
            if j != k {
                let diff = nodes[k] - nodes[j];
                if diff == 0.0 {
                    return Err(Error::invalid(format!(
                        "duplicate interpolation nodes at {}",
                        nodes[k]
                    )));
                }
                w[k] /= diff;
            }
        }
    }
    let scale = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for v in &mut w {
        *v /= scale;
    }
    Ok(w)
}

/// Where a local interpolation node of an interval stores its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalNode {
    /// A stored grid value (global node index).
    Stored(usize),
    /// The propagated value at outer mesh point `t_k` (interior abscissae only).
    Junction(usize),
}

/// Collocation mesh on [0, 1]: `L` uniform intervals, degree `m`.
#[derive(Debug, Clone)]
pub struct Mesh {
    l: usize,
    m: usize,
    h: f64,
    family: Option<AbscissaeFamily>,
    outer: Vec<f64>,
    abscissae: Vec<f64>,
    grid: Vec<f64>,
    closed: bool,
    ref_nodes: Vec<f64>,
    ref_bary: Vec<f64>,
    /// (m+1)² row-major differentiation matrix on the reference nodes.
    ref_diff: Vec<f64>,
    /// Interpolation weights at the right endpoint of the reference interval.
    end_weights: Vec<f64>,
    /// Dense junction functionals over grid nodes, (L+1)×(1+Lm); only built
    /// for interior abscissae.
    junction_rows: Option<Arc<Vec<f64>>>,
}

impl Mesh {
    pub fn new(l: usize, m: usize, family: AbscissaeFamily) -> Result<Self> {
        let abscissae = match family {
            AbscissaeFamily::ChebyshevExtrema => chebyshev_extrema_abscissae(m)?,
            AbscissaeFamily::GaussLegendre => gauss_legendre_abscissae(m)?,
        };
        let mut mesh = Mesh::from_abscissae(l, abscissae)?;
        mesh.family = Some(family);
        Ok(mesh)
    }

    pub fn from_abscissae(l: usize, abscissae: Vec<f64>) -> Result<Self> {
        if l == 0 {
            return Err(Error::invalid("mesh needs at least one interval"));
        }
        let m = abscissae.len();
        if m == 0 {
            return Err(Error::invalid("degree m must be at least 1"));
        }
        for w in abscissae.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid("abscissae must be strictly increasing"));
            }
        }
        if abscissae[0] <= 0.0 || abscissae[m - 1] > 1.0 {
            return Err(Error::invalid("abscissae must lie in (0, 1]"));
        }
        let h = 1.0 / l as f64;
        let outer: Vec<f64> = (0..=l).map(|i| i as f64 / l as f64).collect();
        let mut grid = Vec::with_capacity(1 + l * m);
        grid.push(0.0);
        for i in 0..l {
            for &c in &abscissae {
                grid.push(outer[i] + c * h);
            }
        }
        let closed = abscissae[m - 1] == 1.0;

        let mut ref_nodes = Vec::with_capacity(m + 1);
        ref_nodes.push(0.0);
        ref_nodes.extend_from_slice(&abscissae);
        let ref_bary = barycentric_weights(&ref_nodes)?;
        let ref_diff = differentiation_matrix(&ref_nodes, &ref_bary);
        let end_weights = eval_weights(&ref_nodes, &ref_bary, 1.0);

        let mut mesh = Mesh {
            l,
            m,
            h,
            family: None,
            outer,
            abscissae,
            grid,
            closed,
            ref_nodes,
            ref_bary,
            ref_diff,
            end_weights,
            junction_rows: None,
        };
        if !closed {
            mesh.junction_rows = Some(Arc::new(mesh.build_junction_rows()));
        }
        Ok(mesh)
    }

    /// Junction functional rows: row k expresses the continuous value at
    /// outer node `t_k` as a linear combination of the stored grid values.
    fn build_junction_rows(&self) -> Vec<f64> {
        let nn = self.node_count();
        let mut rows = vec![0.0; (self.l + 1) * nn];
        rows[0] = 1.0; // junction 0 is the stored node at t = 0
        for k in 1..=self.l {
            let (prev, cur) = rows.split_at_mut(k * nn);
            let prev_row = &prev[(k - 1) * nn..k * nn];
            let row = &mut cur[..nn];
            let w0 = self.end_weights[0];
            for (r, p) in row.iter_mut().zip(prev_row) {
                *r = w0 * p;
            }
            for j in 1..=self.m {
                row[self.node_index(k - 1, j)] += self.end_weights[j];
            }
        }
        rows
    }

    pub fn intervals(&self) -> usize {
        self.l
    }

    pub fn degree(&self) -> usize {
        self.m
    }

    pub fn interval_width(&self) -> f64 {
        self.h
    }

    pub fn family(&self) -> Option<AbscissaeFamily> {
        self.family
    }

    pub fn abscissae(&self) -> &[f64] {
        &self.abscissae
    }

    pub fn outer(&self) -> &[f64] {
        &self.outer
    }

    /// All grid nodes: `t = 0` followed by every collocation point.
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Number of stored nodes, `1 + L·m`.
    pub fn node_count(&self) -> usize {
        1 + self.l * self.m
    }

    /// The right endpoint of every interval is itself a stored node.
    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Global node index of collocation point `(interval, j)`, `j = 1..=m`,
    /// interval 0-based.
    #[inline]
    pub fn node_index(&self, interval: usize, j: usize) -> usize {
        debug_assert!(j >= 1 && j <= self.m);
        interval * self.m + j
    }

    /// Interval containing `t`, 0-based; ties at interior outer nodes go to
    /// the left interval, t = 0 to interval 0.
    #[inline]
    pub fn interval_of(&self, t: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::OutOfDomain {
                value: t,
                lo: 0.0,
                hi: 1.0,
            });
        }
        let k = (t * self.l as f64).ceil() as usize;
        Ok(k.max(1).min(self.l) - 1)
    }

    /// Local coordinate of `t` in interval `k`, in [0, 1]; snaps interval
    /// endpoints exactly so shared grid nodes reproduce stored values.
    #[inline]
    pub fn local_coord(&self, k: usize, t: f64) -> f64 {
        if t == self.outer[k] {
            0.0
        } else if t == self.outer[k + 1] {
            1.0
        } else {
            (t - self.outer[k]) * self.l as f64
        }
    }

    /// Interval and local coordinate of `t`.
    #[inline]
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let k = self.interval_of(t)?;
        Ok((k, self.local_coord(k, t)))
    }

    /// Where local node `j` (0..=m) of interval `k` finds its value.
    #[inline]
    pub fn local_node(&self, k: usize, j: usize) -> LocalNode {
        if j == 0 {
            if k == 0 {
                LocalNode::Stored(0)
            } else if self.closed {
                LocalNode::Stored(k * self.m)
            } else {
                LocalNode::Junction(k)
            }
        } else {
            LocalNode::Stored(self.node_index(k, j))
        }
    }

    /// Interpolation weights over the m+1 local nodes at local coordinate ξ.
    pub fn local_eval_weights(&self, xi: f64) -> Vec<f64> {
        eval_weights(&self.ref_nodes, &self.ref_bary, xi)
    }

    /// Allocation-free variant of [`Mesh::local_deriv_weights`].
    pub(crate) fn local_deriv_weights_buf(&self, xi: f64, buf: &mut Vec<f64>, ew: &mut Vec<f64>) {
        self.local_eval_weights_buf(xi, ew);
        let n = self.ref_nodes.len();
        buf.clear();
        buf.resize(n, 0.0);
        for i in 0..n {
            let e = ew[i];
            if e != 0.0 {
                for j in 0..n {
                    buf[j] += e * self.ref_diff[i * n + j];
                }
            }
        }
    }

    /// Allocation-free variant of [`Mesh::local_eval_weights`] for assembly
    /// loops; clears and refills `buf`.
    pub(crate) fn local_eval_weights_buf(&self, xi: f64, buf: &mut Vec<f64>) {
        buf.clear();
        let nodes = &self.ref_nodes;
        let w = &self.ref_bary;
        for &xk in nodes.iter() {
            if xi == xk {
                buf.resize(nodes.len(), 0.0);
                let k = nodes.iter().position(|&v| v == xi).unwrap();
                buf[k] = 1.0;
                return;
            }
        }
        let mut denom = 0.0;
        for k in 0..nodes.len() {
            let q = w[k] / (xi - nodes[k]);
            buf.push(q);
            denom += q;
        }
        for v in buf.iter_mut() {
            *v /= denom;
        }
    }

    /// Derivative-of-interpolant weights at local coordinate ξ, with respect
    /// to the local node values, in local units (divide by h for d/dt).
    pub fn local_deriv_weights(&self, xi: f64) -> Vec<f64> {
        let n = self.ref_nodes.len();
        let ew = eval_weights(&self.ref_nodes, &self.ref_bary, xi);
        // derivative weights: row of (eval at xi) · D
        let mut dw = vec![0.0; n];
        for i in 0..n {
            if ew[i] != 0.0 {
                for j in 0..n {
                    dw[j] += ew[i] * self.ref_diff[i * n + j];
                }
            }
        }
        dw
    }

    pub(crate) fn junction_row(&self, k: usize) -> &[f64] {
        let nn = self.node_count();
        &self.junction_rows.as_ref().expect("interior mesh")[k * nn..(k + 1) * nn]
    }

    /// Two meshes are compatible when they share interval count and abscissae.
    pub fn same_discretization(&self, other: &Mesh) -> bool {
        self.l == other.l && self.abscissae == other.abscissae
    }
}

/// Barycentric evaluation weights at `x` for `nodes` with barycentric
/// weights `w`: exact unit vector on node hits.
pub(crate) fn eval_weights(nodes: &[f64], w: &[f64], x: f64) -> Vec<f64> {
    let n = nodes.len();
    let mut out = vec![0.0; n];
    for (k, &xk) in nodes.iter().enumerate() {
        if x == xk {
            out[k] = 1.0;
            return out;
        }
    }
    let mut denom = 0.0;
    for k in 0..n {
        let q = w[k] / (x - nodes[k]);
        out[k] = q;
        denom += q;
    }
    for v in &mut out {
        *v /= denom;
    }
    out
}

/// Differentiation matrix `D[i][j] = ℓ_j'(x_i)` from barycentric weights.
pub(crate) fn differentiation_matrix(nodes: &[f64], w: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let v = (w[j] / w[i]) / (nodes[i] - nodes[j]);
                d[i * n + j] = v;
                diag -= v;
            }
        }
        d[i * n + i] = diag;
    }
    d
}

/// A continuous piecewise polynomial on [0, 1] with `d`-vector values stored
/// at the mesh grid nodes.
#[derive(Debug, Clone)]
pub struct PiecewisePolynomial {
    mesh: Mesh,
    d: usize,
    /// Node-major values, length `node_count · d`.
    values: Vec<f64>,
    /// Values at the outer mesh points `t_0..t_L`, length `(L+1)·d`.
    junctions: Vec<f64>,
}

impl PiecewisePolynomial {
    pub fn new(mesh: Mesh, d: usize, values: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("state dimension d must be at least 1"));
        }
        if values.len() != mesh.node_count() * d {
            return Err(Error::invalid(format!(
                "expected {} values, got {}",
                mesh.node_count() * d,
                values.len()
            )));
        }
        let junctions = compute_junctions(&mesh, d, &values);
        Ok(PiecewisePolynomial {
            mesh,
            d,
            values,
            junctions,
        })
    }

    /// Sample a function at the grid nodes.
    pub fn from_fn(mesh: Mesh, d: usize, mut f: impl FnMut(f64, &mut [f64])) -> Result<Self> {
        let mut values = vec![0.0; mesh.node_count() * d];
        for (k, &t) in mesh.grid().iter().enumerate() {
            f(t, &mut values[k * d..(k + 1) * d]);
        }
        PiecewisePolynomial::new(mesh, d, values)
    }

    pub fn constant(mesh: Mesh, value: &[f64]) -> Result<Self> {
        let d = value.len();
        let values: Vec<f64> = std::iter::repeat(value)
            .take(mesh.node_count())
            .flatten()
            .copied()
            .collect();
        PiecewisePolynomial::new(mesh, d, values)
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node_value(&self, node: usize) -> &[f64] {
        &self.values[node * self.d..(node + 1) * self.d]
    }

    pub(crate) fn local_value(&self, k: usize, j: usize) -> &[f64] {
        match self.mesh.local_node(k, j) {
            LocalNode::Stored(q) => self.node_value(q),
            LocalNode::Junction(q) => &self.junctions[q * self.d..(q + 1) * self.d],
        }
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let k = self.mesh.interval_of(t)?;
        let xi = self.mesh.local_coord(k, t);
        let w = self.mesh.local_eval_weights(xi);
        out.fill(0.0);
        for (j, &wj) in w.iter().enumerate() {
            if wj != 0.0 {
                let v = self.local_value(k, j);
                for (o, &vv) in out.iter_mut().zip(v) {
                    *o += wj * vv;
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.d];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    /// Derivative of the interpolant at `t` (taken on the interval that
    /// contains `t`; one-sided at the mesh points).
    pub fn eval_deriv_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let k = self.mesh.interval_of(t)?;
        let xi = self.mesh.local_coord(k, t);
        let dw = self.mesh.local_deriv_weights(xi);
        out.fill(0.0);
        for (j, &wj) in dw.iter().enumerate() {
            if wj != 0.0 {
                let v = self.local_value(k, j);
                for (o, &vv) in out.iter_mut().zip(v) {
                    *o += wj * vv;
                }
            }
        }
        let scale = self.mesh.intervals() as f64;
        for o in out.iter_mut() {
            *o *= scale;
        }
        Ok(())
    }

    /// Interpolate onto another mesh by sampling at its grid nodes.
    pub fn resample(&self, mesh: &Mesh) -> Result<PiecewisePolynomial> {
        let mut values = vec![0.0; mesh.node_count() * self.d];
        for (k, &t) in mesh.grid().iter().enumerate() {
            self.eval_into(t, &mut values[k * self.d..(k + 1) * self.d])?;
        }
        PiecewisePolynomial::new(mesh.clone(), self.d, values)
    }

    /// Range (max − min) of one component over the grid nodes plus a fixed
    /// oversampling of the interpolant.
    pub fn component_range(&self, component: usize) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for k in 0..self.mesh.node_count() {
            let v = self.values[k * self.d + component];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let samples = 8 * self.mesh.intervals().max(16);
        let mut buf = vec![0.0; self.d];
        for s in 0..=samples {
            let t = s as f64 / samples as f64;
            if self.eval_into(t, &mut buf).is_ok() {
                lo = lo.min(buf[component]);
                hi = hi.max(buf[component]);
            }
        }
        hi - lo
    }
}

fn compute_junctions(mesh: &Mesh, d: usize, values: &[f64]) -> Vec<f64> {
    let l = mesh.intervals();
    let m = mesh.degree();
    let mut junctions = vec![0.0; (l + 1) * d];
    junctions[..d].copy_from_slice(&values[..d]);
    if mesh.is_closed() {
        for k in 1..=l {
            let q = k * m;
            junctions[k * d..(k + 1) * d].copy_from_slice(&values[q * d..(q + 1) * d]);
        }
    } else {
        let ew = &mesh.end_weights;
        for k in 1..=l {
            let mut acc = vec![0.0; d];
            for c in 0..d {
                acc[c] = ew[0] * junctions[(k - 1) * d + c];
            }
            for j in 1..=m {
                let q = mesh.node_index(k - 1, j);
                for c in 0..d {
                    acc[c] += ew[j] * values[q * d + c];
                }
            }
            junctions[k * d..(k + 1) * d].copy_from_slice(&acc);
        }
    }
    junctions
}
