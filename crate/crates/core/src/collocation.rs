//! Assembly and solution of the periodic collocation system.
//!
//! With `L` intervals, degree `m` and state dimension `d`, the unknown
//! vector stacks the `1 + Lm` grid values followed by the period ω, length
//! `(1+Lm)·d + 1`. The residual stacks, in order: the `Lm·d` collocation
//! rows `u(t_{i,j}) − F_M(...)` where the history is the periodically
//! wrapped interpolant; `d` periodicity rows `u(0) − u(1)`; and one phase
//! row. The Jacobian is assembled analytically: the value block goes
//! through the interpolation weights that express every wrapped history
//! evaluation as a linear combination of grid unknowns, and the ω column
//! differentiates the quadrature approximation of the right-hand side with
//! respect to the period, including the support-boundary and kernel
//! time-derivative terms (the quadrature nodes move with ω).

use serde::{Deserialize, Serialize};

use crate::basis::{AbscissaeFamily, LocalNode, Mesh, PiecewisePolynomial};
use crate::error::{Error, Result};
use crate::model::{REForm, REModel};
use crate::quadrature::{gauss_legendre_rule, QuadratureRule};
use crate::solver::{newton, Matrix, NewtonOptions, NewtonResult};

/// Map to the fundamental period: `s − ⌊s⌋ ∈ [0, 1)`.
///
/// Wrapping may cross several periods, as needed when the delay exceeds
/// the period.
#[inline]
pub fn wrap_periodic(s: f64) -> f64 {
    let w = s - s.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// A periodic solution candidate: profile on [0, 1] plus period ω.
#[derive(Debug, Clone)]
pub struct PeriodicOrbit {
    pub profile: PiecewisePolynomial,
    pub omega: f64,
}

impl PeriodicOrbit {
    pub fn new(profile: PiecewisePolynomial, omega: f64) -> Result<Self> {
        if omega <= 0.0 {
            return Err(Error::invalid("period omega must be positive"));
        }
        Ok(PeriodicOrbit { profile, omega })
    }

    /// max − min of one solution component over the period.
    pub fn amplitude(&self, component: usize) -> f64 {
        self.profile.component_range(component)
    }

    pub fn mesh(&self) -> &Mesh {
        self.profile.mesh()
    }
}

/// Scalar condition removing the time-translation invariance.
pub enum PhaseCondition {
    /// `u_k(0) = anchor`.
    Trivial { component: usize, anchor: f64 },
    /// `∫_0^1 u_k(t)·ref_k'(t) dt = 0` against a reference profile on the
    /// same mesh.
    Integral {
        component: usize,
        reference: PiecewisePolynomial,
    },
}

/// How the Jacobian of the collocation system is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianMode {
    Analytic,
    /// Central finite differences of the residual; retained for
    /// cross-validation and models without analytic derivatives.
    FiniteDifference,
}

/// Secondary discretization level policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MPolicy {
    /// `M = max(20, 2·L·m)`, keeping the quadrature error subdominant as
    /// the mesh is refined.
    Auto,
    Fixed(usize),
}

impl MPolicy {
    pub fn level(&self, mesh: &Mesh) -> usize {
        match self {
            MPolicy::Auto => (2 * mesh.intervals() * mesh.degree()).max(20),
            MPolicy::Fixed(m) => *m,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SystemOptions {
    pub level: MPolicy,
    pub jacobian: JacobianMode,
}

impl Default for SystemOptions {
    fn default() -> Self {
        SystemOptions {
            level: MPolicy::Auto,
            jacobian: JacobianMode::Analytic,
        }
    }
}

/// Diagnostics attached to a converged (or degenerate) solve.
#[derive(Debug, Clone)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub final_residual: f64,
    pub last_step_norm: f64,
    pub amplitude: f64,
    /// The converged state is numerically constant; the period is then
    /// undetermined.
    pub degenerate: bool,
    pub residual_history: Vec<f64>,
}

/// The discretized periodic boundary value problem for one model, mesh and
/// phase condition.
pub struct CollocationSystem {
    model: REModel,
    mesh: Mesh,
    phase: PhaseCondition,
    level: usize,
    jacobian_mode: JacobianMode,
    ref_rule: QuadratureRule,
    /// Dense phase row over the unknown vector (integral phase only).
    phase_row: Option<Vec<f64>>,
}

impl CollocationSystem {
    pub fn new(
        model: REModel,
        mesh: Mesh,
        phase: PhaseCondition,
        options: SystemOptions,
    ) -> Result<Self> {
        let level = options.level.level(&mesh);
        let ref_rule = crate::model::secondary_reference_rule(level)?;
        if let PhaseCondition::Integral { reference, .. } = &phase {
            if !reference.mesh().same_discretization(&mesh) {
                return Err(Error::invalid(
                    "integral phase reference must live on the system mesh",
                ));
            }
            if reference.dim() != model.d {
                return Err(Error::invalid("phase reference dimension mismatch"));
            }
        }
        let mut sys = CollocationSystem {
            model,
            mesh,
            phase,
            level,
            jacobian_mode: options.jacobian,
            ref_rule,
            phase_row: None,
        };
        if let PhaseCondition::Integral { .. } = sys.phase {
            sys.phase_row = Some(sys.build_phase_row()?);
        }
        Ok(sys)
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn model(&self) -> &REModel {
        &self.model
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn phase(&self) -> &PhaseCondition {
        &self.phase
    }

    /// Length of both the unknown and the residual vector: `(1+Lm)·d + 1`.
    pub fn dim(&self) -> usize {
        self.mesh.node_count() * self.model.d + 1
    }

    pub fn pack(&self, orbit: &PeriodicOrbit) -> Result<Vec<f64>> {
        if !orbit.mesh().same_discretization(&self.mesh) {
            return Err(Error::invalid("orbit mesh does not match the system mesh"));
        }
        let mut z = orbit.profile.values().to_vec();
        z.push(orbit.omega);
        Ok(z)
    }

    pub fn unpack(&self, z: &[f64]) -> Result<PeriodicOrbit> {
        let nv = self.mesh.node_count() * self.model.d;
        if z.len() != nv + 1 {
            return Err(Error::invalid("unknown vector length mismatch"));
        }
        let profile = PiecewisePolynomial::new(self.mesh.clone(), self.model.d, z[..nv].to_vec())?;
        PeriodicOrbit::new(profile, z[nv])
    }

    /// Per-interval Gauss quadrature of `u_k·ref_k'` as a dense linear
    /// functional over the unknowns. Degree-m Gauss per interval is exact
    /// for the product of two piecewise polynomials on the shared mesh.
    fn build_phase_row(&self) -> Result<Vec<f64>> {
        let PhaseCondition::Integral {
            component,
            reference,
        } = &self.phase
        else {
            unreachable!()
        };
        let d = self.model.d;
        let n = self.dim();
        let mut row = vec![0.0; n];
        let gauss = gauss_legendre_rule(self.mesh.degree() - 1, 0.0, 1.0)?;
        let mut wbuf = Vec::new();
        let mut deriv = vec![0.0; d];
        let h = self.mesh.interval_width();
        for k in 0..self.mesh.intervals() {
            let left = self.mesh.outer()[k];
            for (&xi, &wg) in gauss.nodes.iter().zip(&gauss.weights) {
                let t = left + xi * h;
                reference.eval_deriv_into(t, &mut deriv)?;
                let coeff = wg * h * deriv[*component];
                scatter_eval(&self.mesh, t, &mut wbuf, |node, w| {
                    row[node * d + component] += coeff * w;
                })?;
            }
        }
        Ok(row)
    }

    fn phase_value(&self, z: &[f64]) -> f64 {
        match &self.phase {
            PhaseCondition::Trivial { component, anchor } => z[*component] - anchor,
            PhaseCondition::Integral { .. } => {
                let row = self.phase_row.as_ref().unwrap();
                row.iter().zip(z).map(|(a, b)| a * b).sum()
            }
        }
    }

    /// Residual of the full nonlinear system at the packed unknown `z`.
    pub fn residual(&self, z: &[f64]) -> Result<Vec<f64>> {
        let d = self.model.d;
        let nn = self.mesh.node_count();
        let omega = z[nn * d];
        if omega <= 0.0 {
            return Err(Error::invalid(format!(
                "nonpositive period in unknown vector: {omega}"
            )));
        }
        let poly = PiecewisePolynomial::new(self.mesh.clone(), d, z[..nn * d].to_vec())?;
        let mut r = vec![0.0; self.dim()];
        let mut scratch = Scratch::new(d);
        let mut rhs = vec![0.0; d];

        for idx in 1..nn {
            let t = self.mesh.grid()[idx];
            self.rhs_at(&poly, omega, t, &mut scratch, &mut rhs)?;
            let row = (idx - 1) * d;
            for c in 0..d {
                r[row + c] = z[idx * d + c] - rhs[c];
            }
        }

        // periodicity u(0) = u(1)
        let pr = (nn - 1) * d;
        eval_scratch(&poly, 1.0, &mut scratch.wbuf, &mut rhs)?;
        for c in 0..d {
            r[pr + c] = z[c] - rhs[c];
        }

        r[self.dim() - 1] = self.phase_value(z);
        Ok(r)
    }

    /// Discretized right-hand side at collocation point `t` with the
    /// periodically wrapped interpolant as history.
    fn rhs_at(
        &self,
        poly: &PiecewisePolynomial,
        omega: f64,
        t: f64,
        scratch: &mut Scratch,
        out: &mut [f64],
    ) -> Result<()> {
        let d = self.model.d;
        match &self.model.form {
            REForm::Kernel(kf) => {
                let (a, b) = kf.support();
                let len = b - a;
                out.fill(0.0);
                for (&u, &w) in self.ref_rule.nodes.iter().zip(&self.ref_rule.weights) {
                    let arg = a + len * u;
                    let s = wrap_periodic(t + arg / omega);
                    eval_scratch(poly, s, &mut scratch.wbuf, &mut scratch.state)?;
                    kf.eval(arg, &scratch.state, &mut scratch.kval);
                    let scale = len * w;
                    for (o, &kv) in out.iter_mut().zip(scratch.kval.iter()) {
                        *o += scale * kv;
                    }
                }
            }
            REForm::Nested(nf) => {
                let n = nf.kernels.len();
                scratch.integrals.resize(n * d, 0.0);
                scratch.integrals.fill(0.0);
                for (q, ker) in nf.kernels.iter().enumerate() {
                    for (&u, &w) in self.ref_rule.nodes.iter().zip(&self.ref_rule.weights) {
                        let arg = ker.tau * u;
                        let s = wrap_periodic(t - arg / omega);
                        eval_scratch(poly, s, &mut scratch.wbuf, &mut scratch.state)?;
                        let scale = ker.tau * w * ker.eval(arg);
                        for c in 0..d {
                            scratch.integrals[q * d + c] += scale * scratch.state[c];
                        }
                    }
                }
                nf.outer(&scratch.integrals, out);
            }
        }
        Ok(())
    }

    /// Jacobian of [`CollocationSystem::residual`] at `z`.
    pub fn jacobian(&self, z: &[f64]) -> Result<Matrix> {
        match self.jacobian_mode {
            JacobianMode::Analytic => self.jacobian_analytic(z),
            JacobianMode::FiniteDifference => self.jacobian_fd(z, 1e-6),
        }
    }

    fn jacobian_analytic(&self, z: &[f64]) -> Result<Matrix> {
        let d = self.model.d;
        let nn = self.mesh.node_count();
        let n = self.dim();
        let omega = z[nn * d];
        if omega <= 0.0 {
            return Err(Error::invalid(format!(
                "nonpositive period in unknown vector: {omega}"
            )));
        }
        let poly = PiecewisePolynomial::new(self.mesh.clone(), d, z[..nn * d].to_vec())?;
        let mut a = Matrix::zeros(n, n);
        let mut scratch = Scratch::new(d);

        for idx in 1..nn {
            let t = self.mesh.grid()[idx];
            let row0 = (idx - 1) * d;
            for c in 0..d {
                a[(row0 + c, idx * d + c)] += 1.0;
            }
            match &self.model.form {
                REForm::Kernel(kf) => {
                    self.kernel_rows(&poly, omega, t, row0, kf, &mut a, &mut scratch)?
                }
                REForm::Nested(nf) => {
                    self.nested_rows(&poly, omega, t, row0, nf, &mut a, &mut scratch)?
                }
            }
        }

        // periodicity rows: u(0) − u(1)
        let pr = (nn - 1) * d;
        for c in 0..d {
            a[(pr + c, c)] += 1.0;
        }
        {
            let mut cols: Vec<(usize, f64)> = Vec::new();
            scatter_eval(&self.mesh, 1.0, &mut scratch.wbuf, |node, w| {
                cols.push((node, w));
            })?;
            for (node, w) in cols {
                for c in 0..d {
                    a[(pr + c, node * d + c)] -= w;
                }
            }
        }

        // phase row
        let last = n - 1;
        match &self.phase {
            PhaseCondition::Trivial { component, .. } => {
                a[(last, *component)] = 1.0;
            }
            PhaseCondition::Integral { .. } => {
                let row = self.phase_row.as_ref().unwrap();
                a.row_mut(last).copy_from_slice(row);
            }
        }
        Ok(a)
    }

    fn kernel_rows(
        &self,
        poly: &PiecewisePolynomial,
        omega: f64,
        t: f64,
        row0: usize,
        kf: &crate::model::KernelForm,
        a: &mut Matrix,
        scratch: &mut Scratch,
    ) -> Result<()> {
        let d = self.model.d;
        let ncol = self.dim();
        let (lo, hi) = kf.support();
        let len = hi - lo;
        let mut omega_col = vec![0.0; d];

        for (&u, &w) in self.ref_rule.nodes.iter().zip(&self.ref_rule.weights) {
            let arg = lo + len * u;
            let theta = arg / omega;
            let s = wrap_periodic(t + theta);
            eval_scratch(poly, s, &mut scratch.wbuf, &mut scratch.state)?;
            kf.deriv_y(arg, &scratch.state, &mut scratch.dmat);
            let factor = len * w; // ω · mapped weight
            let dmat = &scratch.dmat;
            scatter_eval(&self.mesh, s, &mut scratch.wbuf, |node, wq| {
                for c in 0..d {
                    for c2 in 0..d {
                        a[(row0 + c, node * d + c2)] -= factor * dmat[c * d + c2] * wq;
                    }
                }
            })?;
            // ω column. Both ω·w_i and the kernel argument ωθ_i are fixed by
            // the support, so the only ω dependence of the discrete
            // right-hand side is the drift of the evaluation points:
            // d/dω u(t+θ_i) = −(θ_i/ω)·u'(t+θ_i).
            eval_deriv_scratch(poly, s, scratch)?;
            let drift = -theta / omega;
            for c in 0..d {
                let mut acc = 0.0;
                for c2 in 0..d {
                    acc += scratch.dmat[c * d + c2] * scratch.du[c2];
                }
                omega_col[c] += factor * acc * drift;
            }
        }
        for c in 0..d {
            a[(row0 + c, ncol - 1)] -= omega_col[c];
        }
        Ok(())
    }

    fn nested_rows(
        &self,
        poly: &PiecewisePolynomial,
        omega: f64,
        t: f64,
        row0: usize,
        nf: &crate::model::NestedForm,
        a: &mut Matrix,
        scratch: &mut Scratch,
    ) -> Result<()> {
        let d = self.model.d;
        let ncol = self.dim();
        let nq = nf.kernels.len();

        // integrals first: the outer-map derivatives are taken at them
        scratch.integrals.resize(nq * d, 0.0);
        scratch.integrals.fill(0.0);
        for (q, ker) in nf.kernels.iter().enumerate() {
            for (&u, &w) in self.ref_rule.nodes.iter().zip(&self.ref_rule.weights) {
                let arg = ker.tau * u;
                let s = wrap_periodic(t - arg / omega);
                eval_scratch(poly, s, &mut scratch.wbuf, &mut scratch.state)?;
                let scale = ker.tau * w * ker.eval(arg);
                for c in 0..d {
                    scratch.integrals[q * d + c] += scale * scratch.state[c];
                }
            }
        }

        let mut omega_col = vec![0.0; d];
        let mut dfq = vec![0.0; d * d];
        let mut di_domega = vec![0.0; d];
        for (q, ker) in nf.kernels.iter().enumerate() {
            nf.outer_deriv(&scratch.integrals, q, &mut dfq);

            // value block: ∂F/∂u through I_q
            for (&u, &w) in self.ref_rule.nodes.iter().zip(&self.ref_rule.weights) {
                let arg = ker.tau * u;
                let s = wrap_periodic(t - arg / omega);
                let factor = ker.tau * w * ker.eval(arg); // ω · mapped weight · k_q
                if factor == 0.0 {
                    continue;
                }
                scatter_eval(&self.mesh, s, &mut scratch.wbuf, |node, wq| {
                    for c in 0..d {
                        for c2 in 0..d {
                            a[(row0 + c, node * d + c2)] -= factor * dfq[c * d + c2] * wq;
                        }
                    }
                })?;
            }

            // ω column through I_q: the lag of every quadrature node is
            // (ωσ_i)/ω with ωσ_i fixed, so
            // dI_q/dω = Σ (τ_q w_i k_q)·u'(t−σ_i)·σ_i/ω.
            di_domega.fill(0.0);
            for (&u, &w) in self.ref_rule.nodes.iter().zip(&self.ref_rule.weights) {
                let arg = ker.tau * u;
                let lag = arg / omega;
                let factor = ker.tau * w * ker.eval(arg);
                if factor == 0.0 {
                    continue;
                }
                let s = wrap_periodic(t - lag);
                eval_deriv_scratch(poly, s, scratch)?;
                let drift = lag / omega;
                for c in 0..d {
                    di_domega[c] += factor * scratch.du[c] * drift;
                }
            }
            for c in 0..d {
                for c2 in 0..d {
                    omega_col[c] += dfq[c * d + c2] * di_domega[c2];
                }
            }
        }
        for c in 0..d {
            a[(row0 + c, ncol - 1)] -= omega_col[c];
        }
        Ok(())
    }

    /// Central-difference Jacobian with per-component step `h·(1+|z_j|)`.
    pub fn jacobian_fd(&self, z: &[f64], h: f64) -> Result<Matrix> {
        let n = self.dim();
        let mut a = Matrix::zeros(n, n);
        let mut zp = z.to_vec();
        for j in 0..n {
            let step = h * (1.0 + z[j].abs());
            zp[j] = z[j] + step;
            let rp = self.residual(&zp)?;
            zp[j] = z[j] - step;
            let rm = self.residual(&zp)?;
            zp[j] = z[j];
            for i in 0..n {
                a[(i, j)] = (rp[i] - rm[i]) / (2.0 * step);
            }
        }
        Ok(a)
    }

    /// Damped Newton iteration on the collocation system.
    pub fn solve_orbit(
        &self,
        initial: &PeriodicOrbit,
        opts: &NewtonOptions,
    ) -> Result<(PeriodicOrbit, SolveDiagnostics)> {
        if initial.omega <= 0.0 {
            return Err(Error::invalid("initial period must be positive"));
        }
        let z0 = self.pack(initial)?;
        let nv = self.mesh.node_count() * self.model.d;

        let jacobian = |z: &[f64]| -> Result<Matrix> {
            let amp = value_range(&z[..nv], self.model.d);
            let scale = z[..nv].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if amp <= 1e-10 * (1.0 + scale) {
                return Err(Error::DegenerateOrbit(format!(
                    "state is numerically constant (range {amp:.2e}); the period column vanishes"
                )));
            }
            self.jacobian(z)
        };

        let result: NewtonResult = newton(|z| self.residual(z), jacobian, &z0, opts)?;
        let orbit = self.unpack(&result.x)?;
        let amplitude = orbit.amplitude(0);
        let scale = result.x[..nv].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diagnostics = SolveDiagnostics {
            iterations: result.iterations,
            final_residual: *result.residual_norms.last().unwrap(),
            last_step_norm: result.last_step_norm,
            amplitude,
            degenerate: amplitude <= 1e-8 * (1.0 + scale),
            residual_history: result.residual_norms,
        };
        Ok((orbit, diagnostics))
    }
}

/// Range (max − min) over the first component of node-major values.
fn value_range(values: &[f64], d: usize) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut k = 0;
    while k < values.len() {
        lo = lo.min(values[k]);
        hi = hi.max(values[k]);
        k += d;
    }
    hi - lo
}

/// Evaluate a piecewise polynomial using caller-provided scratch space.
pub(crate) fn eval_scratch(
    poly: &PiecewisePolynomial,
    s: f64,
    wbuf: &mut Vec<f64>,
    out: &mut [f64],
) -> Result<()> {
    let mesh = poly.mesh();
    let (k, xi) = mesh.locate(s)?;
    mesh.local_eval_weights_buf(xi, wbuf);
    out.fill(0.0);
    for (j, &wj) in wbuf.iter().enumerate() {
        if wj != 0.0 {
            let v = poly.local_value(k, j);
            for (o, &vv) in out.iter_mut().zip(v) {
                *o += wj * vv;
            }
        }
    }
    Ok(())
}

/// Derivative of the interpolant into `scratch.du` using scratch space.
fn eval_deriv_scratch(poly: &PiecewisePolynomial, s: f64, scratch: &mut Scratch) -> Result<()> {
    let mesh = poly.mesh();
    let (k, xi) = mesh.locate(s)?;
    mesh.local_deriv_weights_buf(xi, &mut scratch.dwbuf, &mut scratch.wbuf);
    scratch.du.fill(0.0);
    for (j, &wj) in scratch.dwbuf.iter().enumerate() {
        if wj != 0.0 {
            let v = poly.local_value(k, j);
            for (o, &vv) in scratch.du.iter_mut().zip(v) {
                *o += wj * vv;
            }
        }
    }
    let scale = mesh.intervals() as f64;
    for o in scratch.du.iter_mut() {
        *o *= scale;
    }
    Ok(())
}

/// Express evaluation at `s` as weights on stored grid nodes, expanding the
/// propagated interval-endpoint values of interior-abscissae meshes.
pub(crate) fn scatter_eval(
    mesh: &Mesh,
    s: f64,
    wbuf: &mut Vec<f64>,
    mut add: impl FnMut(usize, f64),
) -> Result<()> {
    let (k, xi) = mesh.locate(s)?;
    mesh.local_eval_weights_buf(xi, wbuf);
    for j in 0..wbuf.len() {
        let wj = wbuf[j];
        if wj == 0.0 {
            continue;
        }
        match mesh.local_node(k, j) {
            LocalNode::Stored(q) => add(q, wj),
            LocalNode::Junction(jk) => {
                for (q, &jw) in mesh.junction_row(jk).iter().enumerate() {
                    if jw != 0.0 {
                        add(q, wj * jw);
                    }
                }
            }
        }
    }
    Ok(())
}

struct Scratch {
    wbuf: Vec<f64>,
    dwbuf: Vec<f64>,
    state: Vec<f64>,
    kval: Vec<f64>,
    du: Vec<f64>,
    dmat: Vec<f64>,
    integrals: Vec<f64>,
}

impl Scratch {
    fn new(d: usize) -> Self {
        Scratch {
            wbuf: Vec::new(),
            dwbuf: Vec::new(),
            state: vec![0.0; d],
            kval: vec![0.0; d],
            du: vec![0.0; d],
            dmat: vec![0.0; d * d],
            integrals: Vec::new(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct OrbitFile {
    #[serde(rename = "L")]
    l: usize,
    m: usize,
    d: usize,
    abscissae_family: String,
    omega: f64,
    values: Vec<f64>,
}

/// Serialize an orbit to the JSON interchange format.
pub fn orbit_to_json(orbit: &PeriodicOrbit) -> Result<String> {
    let mesh = orbit.mesh();
    let family = mesh
        .family()
        .ok_or_else(|| Error::invalid("only orbits on built-in abscissae families serialize"))?;
    let file = OrbitFile {
        l: mesh.intervals(),
        m: mesh.degree(),
        d: orbit.profile.dim(),
        abscissae_family: family.name().to_string(),
        omega: orbit.omega,
        values: orbit.profile.values().to_vec(),
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::OrbitFormat(e.to_string()))
}

/// Parse an orbit from the JSON interchange format.
pub fn orbit_from_json(text: &str) -> Result<PeriodicOrbit> {
    let file: OrbitFile =
        serde_json::from_str(text).map_err(|e| Error::OrbitFormat(e.to_string()))?;
    let family = AbscissaeFamily::parse(&file.abscissae_family)?;
    let mesh = Mesh::new(file.l, file.m, family)?;
    if file.values.len() != mesh.node_count() * file.d {
        return Err(Error::OrbitFormat(format!(
            "values length {} does not match (1 + L·m)·d = {}",
            file.values.len(),
            mesh.node_count() * file.d
        )));
    }
    let profile = PiecewisePolynomial::new(mesh, file.d, file.values)?;
    PeriodicOrbit::new(profile, file.omega)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        eval_rhs, quadratic_exact_solution, quadratic_re_model, sirs_re_model, REModel,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exact_orbit(gamma: f64, mesh: &Mesh) -> PeriodicOrbit {
        let exact = quadratic_exact_solution(gamma).unwrap();
        let profile = PiecewisePolynomial::from_fn(mesh.clone(), 1, |t, out| {
            out[0] = exact.eval_rescaled(t)
        })
        .unwrap();
        PeriodicOrbit::new(profile, 4.0).unwrap()
    }

    fn quadratic_system(gamma: f64, mesh: Mesh, level: MPolicy) -> CollocationSystem {
        let exact = quadratic_exact_solution(gamma).unwrap();
        CollocationSystem::new(
            quadratic_re_model(gamma),
            mesh,
            PhaseCondition::Trivial {
                component: 0,
                anchor: exact.sigma,
            },
            SystemOptions {
                level,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn wrap_examples() {
        assert!((wrap_periodic(1.25) - 0.25).abs() < 1e-15);
        assert!((wrap_periodic(-0.3) - 0.7).abs() < 1e-15);
        assert!((wrap_periodic(-2.6) - 0.4).abs() < 1e-13);
        assert_eq!(wrap_periodic(1.0), 0.0);
        assert_eq!(wrap_periodic(0.0), 0.0);
        assert_eq!(wrap_periodic(-1e-17), 0.0);
    }

    #[test]
    fn wrap_idempotent_and_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let s: f64 = rng.gen_range(-5.0..5.0);
            let w = wrap_periodic(s);
            assert!((0.0..1.0).contains(&w));
            assert!((wrap_periodic(w) - w).abs() <= 1e-13);
            assert!((wrap_periodic(s + 1.0) - w).abs() <= 1e-13);
        }
    }

    #[test]
    fn residual_dimension_matches_unknowns() {
        let mesh = Mesh::new(6, 3, AbscissaeFamily::ChebyshevExtrema).unwrap();
        let sys = quadratic_system(4.0, mesh, MPolicy::Auto);
        assert_eq!(sys.dim(), (1 + 6 * 3) + 1);
        let z = sys.pack(&exact_orbit(4.0, sys.mesh())).unwrap();
        assert_eq!(sys.residual(&z).unwrap().len(), sys.dim());
    }

    #[test]
    fn equilibrium_constant_is_residual_zero() {
        let mesh = Mesh::new(8, 4, AbscissaeFamily::ChebyshevExtrema).unwrap();
        let model = quadratic_re_model(4.0);
        let xbar = model.equilibrium.clone().unwrap();
        let sys = CollocationSystem::new(
            model,
            mesh.clone(),
            PhaseCondition::Trivial {
                component: 0,
                anchor: xbar[0],
            },
            SystemOptions::default(),
        )
        .unwrap();
        let orbit =
            PeriodicOrbit::new(PiecewisePolynomial::constant(mesh, &xbar).unwrap(), 2.7).unwrap();
        let z = sys.pack(&orbit).unwrap();
        let r = sys.residual(&z).unwrap();
        let sup = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(sup <= 1e-10, "residual sup {sup:.2e}");
    }

    #[test]
    fn exact_solution_near_residual_zero() {
        let mesh = Mesh::new(40, 4, AbscissaeFamily::ChebyshevExtrema).unwrap();
        let sys = quadratic_system(4.0, mesh, MPolicy::Fixed(64));
        let z = sys.pack(&exact_orbit(4.0, sys.mesh())).unwrap();
        let r = sys.residual(&z).unwrap();
        let sup = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(sup <= 1e-6, "residual sup {sup:.2e}");
    }

    #[test]
    fn periodicity_rows_vanish_for_shared_endpoints() {
        // with c_m = 1 the profile stores u(1) at the last node, so matching
        // first/last values zero the periodicity rows for any state
        let mesh = Mesh::new(5, 3, AbscissaeFamily::ChebyshevExtrema).unwrap();
        let sys = quadratic_system(4.0, mesh.clone(), MPolicy::Auto);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut values: Vec<f64> = (0..mesh.node_count())
            .map(|_| rng.gen_range(0.2..0.8))
            .collect();
        let last = values.len() - 1;
        values[last] = values[0];
        let mut z = values;
        z.push(3.3);
        let r = sys.residual(&z).unwrap();
        let pr = mesh.node_count() - 1;
        assert_eq!(r[pr], 0.0);
    }

    #[test]
    fn residual_agrees_with_eval_rhs() {
        // the assembly path and the public right-hand-side evaluator must
        // produce the same collocation rows
        for (model, omega) in [
            (quadratic_re_model(4.2), 4.0),
            (sirs_re_model(1.75f64.exp()).unwrap(), 1.3),
        ] {
            let mesh = Mesh::new(7, 3, AbscissaeFamily::GaussLegendre).unwrap();
            let level = 40;
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let values: Vec<f64> = (0..mesh.node_count())
                .map(|_| rng.gen_range(0.3..0.9))
                .collect();
            let poly = PiecewisePolynomial::new(mesh.clone(), 1, values.clone()).unwrap();
            let d = model.d;
            let sys = CollocationSystem::new(
                model,
                mesh.clone(),
                PhaseCondition::Trivial {
                    component: 0,
                    anchor: 0.5,
                },
                SystemOptions {
                    level: MPolicy::Fixed(level),
                    ..Default::default()
                },
            )
            .unwrap();
            let mut z = values;
            z.push(omega);
            let r = sys.residual(&z).unwrap();
            for idx in [1usize, 5, mesh.node_count() - 1] {
                let t = mesh.grid()[idx];
                let expected = eval_rhs(
                    sys.model(),
                    |th, out| poly.eval_into(wrap_periodic(t + th), out).unwrap(),
                    omega,
                    level,
                )
                .unwrap();
                let got = z[idx * d] - r[(idx - 1) * d];
                assert!(
                    (got - expected[0]).abs() <= 1e-13,
                    "{} idx {idx}: {got} vs {}",
                    sys.model().name,
                    expected[0]
                );
            }
        }
    }

    fn fd_check(sys: &CollocationSystem, z: &[f64], tol: f64) {
        let analytic = sys.jacobian(z).unwrap();
        let fd = sys.jacobian_fd(z, 1e-6).unwrap();
        let mut worst = 0.0f64;
        for i in 0..sys.dim() {
            for j in 0..sys.dim() {
                let rel = (analytic[(i, j)] - fd[(i, j)]).abs() / (1.0 + fd[(i, j)].abs());
                worst = worst.max(rel);
            }
        }
        assert!(worst <= tol, "max relative discrepancy {worst:.2e}");
    }

    #[test]
    fn jacobian_matches_finite_differences_quadratic() {
        let mesh = Mesh::new(6, 3, AbscissaeFamily::ChebyshevExtrema).unwrap();
        let sys = quadratic_system(4.0, mesh, MPolicy::Fixed(60));
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut z = sys.pack(&exact_orbit(4.0, sys.mesh())).unwrap();
        for v in z.iter_mut() {
            *v += rng.gen_range(-0.01..0.01);
        }
        fd_check(&sys, &z, 1e-5);
    }

    #[test]
    fn jacobian_matches_finite_differences_interior_abscissae() {
        let mesh = Mesh::new(5, 3, AbscissaeFamily::GaussLegendre).unwrap();
        let sys = quadratic_system(4.0, mesh, MPolicy::Fixed(48));
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut z = sys.pack(&exact_orbit(4.0, sys.mesh())).unwrap();
        for v in z.iter_mut() {
            *v += rng.gen_range(-0.01..0.01);
        }
        fd_check(&sys, &z, 1e-5);
    }

    #[test]
    fn jacobian_matches_finite_differences_all_models() {
        let cases: Vec<(REModel, f64, f64)> = vec![
            (quadratic_re_model(4.0), 4.0, 0.7),
            (
                crate::model::exponential_re_model(3.83f64.exp()).unwrap(),
                4.0,
                3.8,
            ),
            (sirs_re_model(1.75f64.exp()).unwrap(), 1.3, 0.8),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for (model, omega, center) in cases {
            let name = model.name.clone();
            let mesh = Mesh::new(5, 3, AbscissaeFamily::ChebyshevExtrema).unwrap();
            let sys = CollocationSystem::new(
                model,
                mesh.clone(),
                PhaseCondition::Trivial {
                    component: 0,
                    anchor: center,
                },
                SystemOptions {
                    level: MPolicy::Fixed(40),
                    ..Default::default()
                },
            )
            .unwrap();
            for trial in 0..5 {
                let mut z: Vec<f64> = (0..mesh.node_count())
                    .map(|_| center + rng.gen_range(-0.2..0.2))
                    .collect();
                z.push(omega + rng.gen_range(-0.2..0.2));
                let analytic = sys.jacobian(&z).unwrap();
                let fd = sys.jacobian_fd(&z, 1e-6).unwrap();
                let mut worst = 0.0f64;
                for i in 0..sys.dim() {
                    for j in 0..sys.dim() {
                        let rel = (analytic[(i, j)] - fd[(i, j)]).abs() / (1.0 + fd[(i, j)].abs());
                        worst = worst.max(rel);
                    }
                }
                assert!(worst <= 1e-5, "{name} trial {trial}: {worst:.2e}");
            }
        }
    }

    #[test]
    fn omega_column_matches_integration_by_parts_form() {
        // The assembled ω column differentiates the discrete right-hand side
        // through the moving quadrature nodes. Integrating d/dθ[θ·K(ωθ, u(t+θ))]
        // over the support trades the state derivative for kernel and
        // boundary terms:
        //   dF/dω = Σ wᵢK + (a/ω)K(a, u(t+a/ω)) − (b/ω)K(b, u(t+b/ω))
        //           + ω Σ wᵢ D₁K θᵢ.
        // On a smooth state the two expressions agree up to quadrature error.
        let mesh = Mesh::new(40, 4, AbscissaeFamily::ChebyshevExtrema).unwrap();
        let sys = quadratic_system(4.0, mesh.clone(), MPolicy::Fixed(400));
        let orbit = exact_orbit(4.0, &mesh);
        let z = sys.pack(&orbit).unwrap();
        let omega = orbit.omega;
        let jac = sys.jacobian(&z).unwrap();

        let crate::model::REForm::Kernel(kf) = &sys.model().form else {
            panic!()
        };
        let (a, b) = kf.support();
        let rule = crate::quadrature::clenshaw_curtis(400, a / omega, b / omega).unwrap();
        let mut worst = 0.0f64;
        for idx in [1usize, 37, 80, mesh.node_count() - 1] {
            let t = mesh.grid()[idx];
            let mut byparts = 0.0;
            let mut kv = [0.0];
            for (&theta, &w) in rule.nodes.iter().zip(&rule.weights) {
                let y = orbit.profile.eval(wrap_periodic(t + theta)).unwrap();
                kf.eval(omega * theta, &y, &mut kv);
                byparts += w * kv[0];
                // D₁K ≡ 0 for this kernel
            }
            for (bound, sign) in [(a, 1.0), (b, -1.0)] {
                let y = orbit.profile.eval(wrap_periodic(t + bound / omega)).unwrap();
                kf.eval(bound, &y, &mut kv);
                byparts += sign * bound / omega * kv[0];
            }
            // residual row carries −dF/dω
            let assembled = -jac[(idx - 1, sys.dim() - 1)];
            worst = worst.max((assembled - byparts).abs());
        }
        assert!(worst <= 1e-6, "forms disagree by {worst:.2e}");
    }

    #[test]
    fn jacobian_with_integral_phase_matches_fd() {
        let mesh = Mesh::new(5, 4, AbscissaeFamily::ChebyshevExtrema).unwrap();
        let reference = exact_orbit(4.0, &mesh).profile;
        let sys = CollocationSystem::new(
            quadratic_re_model(4.0),
            mesh.clone(),
            PhaseCondition::Integral {
                component: 0,
                reference,
            },
            SystemOptions {
                level: MPolicy::Fixed(48),
                ..Default::default()
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut z = sys.pack(&exact_orbit(4.0, &mesh)).unwrap();
        for v in z.iter_mut() {
            *v += rng.gen_range(-0.01..0.01);
        }
        fd_check(&sys, &z, 1e-5);
    }

    #[test]
    fn zero_kernel_jacobian_is_fixed_pattern() {
        // F ≡ 0 leaves only the identity, periodicity and phase rows
        let model = REModel {
            name: "zero".into(),
            d: 1,
            tau: 3.0,
            parameter: 0.0,
            equilibrium: Some(vec![0.0]),
            form: REForm::Kernel(crate::model::KernelForm::new(
                (-3.0, -1.0),
                Box::new(|_, _, out| out[0] = 0.0),
                Box::new(|_, _, out| out[0] = 0.0),
                Box::new(|_, _, out| out[0] = 0.0),
            )),
        };
        let mesh = Mesh::new(4, 2, AbscissaeFamily::ChebyshevExtrema).unwrap();
        let nn = mesh.node_count();
        let sys = CollocationSystem::new(
            model,
            mesh,
            PhaseCondition::Trivial {
                component: 0,
                anchor: 0.0,
            },
            SystemOptions::default(),
        )
        .unwrap();
        let mut z = vec![0.3; nn];
        z[2] = 0.9; // non-constant so the degeneracy guard stays quiet
        z.push(2.0);
        let jac = sys.jacobian(&z).unwrap();
        let n = sys.dim();
        let mut expected = Matrix::zeros(n, n);
        for idx in 1..nn {
            expected[(idx - 1, idx)] = 1.0;
        }
        expected[(nn - 1, 0)] = 1.0;
        expected[(nn - 1, nn - 1)] = -1.0;
        expected[(n - 1, 0)] = 1.0;
        for i in 0..n {
            for j in 0..n {
                assert!(
                    (jac[(i, j)] - expected[(i, j)]).abs() < 1e-14,
                    "entry ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn history_evaluation_shift_invariant() {
        // wrapped history evaluation is insensitive to adding a full period
        let mesh = Mesh::new(6, 3, AbscissaeFamily::ChebyshevExtrema).unwrap();
        let orbit = exact_orbit(4.0, &mesh);
        let poly = &orbit.profile;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let s: f64 = rng.gen_range(-2.0..2.0);
            let a = poly.eval(wrap_periodic(s)).unwrap()[0];
            let b = poly.eval(wrap_periodic(s + 1.0)).unwrap()[0];
            assert!((a - b).abs() <= 1e-13);
        }
    }

    #[test]
    fn phase_row_is_linear() {
        let mesh = Mesh::new(5, 3, AbscissaeFamily::ChebyshevExtrema).unwrap();
        // trivial phase with anchor 0 doubles with the state
        let sys = CollocationSystem::new(
            quadratic_re_model(4.0),
            mesh.clone(),
            PhaseCondition::Trivial {
                component: 0,
                anchor: 0.0,
            },
            SystemOptions::default(),
        )
        .unwrap();
        let orbit = exact_orbit(4.0, &mesh);
        let z = sys.pack(&orbit).unwrap();
        let mut z2 = z.clone();
        for v in z2[..mesh.node_count()].iter_mut() {
            *v *= 2.0;
        }
        let p1 = sys.residual(&z).unwrap()[sys.dim() - 1];
        let p2 = sys.residual(&z2).unwrap()[sys.dim() - 1];
        assert!((p2 - 2.0 * p1).abs() <= 1e-12);

        // integral phase is linear as well
        let sys = CollocationSystem::new(
            quadratic_re_model(4.0),
            mesh.clone(),
            PhaseCondition::Integral {
                component: 0,
                reference: orbit.profile.clone(),
            },
            SystemOptions::default(),
        )
        .unwrap();
        let p1 = sys.residual(&z).unwrap()[sys.dim() - 1];
        let p2 = sys.residual(&z2).unwrap()[sys.dim() - 1];
        assert!((p2 - 2.0 * p1).abs() <= 1e-12);
    }

    #[test]
    fn integral_phase_vanishes_at_reference() {
        // p(u) = ∫ u x̃' with x̃ = u is ∫ u u' = 0 for a periodic u
        let mesh = Mesh::new(10, 4, AbscissaeFamily::ChebyshevExtrema).unwrap();
        let orbit = exact_orbit(4.0, &mesh);
        let sys = CollocationSystem::new(
            quadratic_re_model(4.0),
            mesh,
            PhaseCondition::Integral {
                component: 0,
                reference: orbit.profile.clone(),
            },
            SystemOptions::default(),
        )
        .unwrap();
        let z = sys.pack(&orbit).unwrap();
        let p = sys.residual(&z).unwrap()[sys.dim() - 1];
        assert!(p.abs() <= 1e-10, "phase value {p:.2e}");
    }

    #[test]
    fn solve_from_exact_solution_converges_fast() {
        let mesh = Mesh::new(20, 4, AbscissaeFamily::ChebyshevExtrema).unwrap();
        let sys = quadratic_system(4.0, mesh.clone(), MPolicy::Auto);
        let initial = exact_orbit(4.0, &mesh);
        let (orbit, diag) = sys
            .solve_orbit(&initial, &NewtonOptions::default())
            .unwrap();
        assert!(diag.iterations <= 3, "iterations {}", diag.iterations);
        assert!((orbit.omega - 4.0).abs() <= 1e-8, "omega {}", orbit.omega);
        assert!(!diag.degenerate);
    }

    #[test]
    fn residual_zero_characterization_with_refined_level() {
        let mesh = Mesh::new(20, 4, AbscissaeFamily::ChebyshevExtrema).unwrap();
        let sys = quadratic_system(4.0, mesh.clone(), MPolicy::Auto);
        let initial = exact_orbit(4.0, &mesh);
        let opts = NewtonOptions::default();
        let (orbit, _) = sys.solve_orbit(&initial, &opts).unwrap();
        let fine = quadratic_system(4.0, mesh, MPolicy::Fixed(2 * sys.level()));
        let z = fine.pack(&orbit).unwrap();
        let r = fine.residual(&z).unwrap();
        let sup = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(sup <= 10.0 * opts.tol.max(1e-9), "sup {sup:.2e}");
    }

    #[test]
    fn solve_from_equilibrium_with_matching_anchor_flags_degenerate() {
        let mesh = Mesh::new(6, 3, AbscissaeFamily::ChebyshevExtrema).unwrap();
        let model = quadratic_re_model(4.0);
        let xbar = model.equilibrium.clone().unwrap();
        let sys = CollocationSystem::new(
            model,
            mesh.clone(),
            PhaseCondition::Trivial {
                component: 0,
                anchor: xbar[0],
            },
            SystemOptions::default(),
        )
        .unwrap();
        let initial =
            PeriodicOrbit::new(PiecewisePolynomial::constant(mesh, &xbar).unwrap(), 3.0).unwrap();
        let (orbit, diag) = sys
            .solve_orbit(&initial, &NewtonOptions::default())
            .unwrap();
        assert!(diag.degenerate);
        assert!(diag.amplitude <= 1e-12);
        assert!((orbit.omega - 3.0).abs() < 1e-15); // period untouched
    }

    #[test]
    fn solve_from_equilibrium_with_wrong_anchor_errors_degenerate() {
        let mesh = Mesh::new(6, 3, AbscissaeFamily::ChebyshevExtrema).unwrap();
        let model = quadratic_re_model(4.0);
        let xbar = model.equilibrium.clone().unwrap();
        let sys = CollocationSystem::new(
            model,
            mesh.clone(),
            PhaseCondition::Trivial {
                component: 0,
                anchor: xbar[0] + 0.05,
            },
            SystemOptions::default(),
        )
        .unwrap();
        let initial =
            PeriodicOrbit::new(PiecewisePolynomial::constant(mesh, &xbar).unwrap(), 3.0).unwrap();
        match sys.solve_orbit(&initial, &NewtonOptions::default()) {
            Err(Error::DegenerateOrbit(_)) => {}
            other => panic!("expected degenerate-orbit error, got {other:?}"),
        }
    }

    #[test]
    fn nonpositive_initial_period_rejected() {
        let mesh = Mesh::new(4, 2, AbscissaeFamily::ChebyshevExtrema).unwrap();
        let profile = PiecewisePolynomial::constant(mesh.clone(), &[0.5]).unwrap();
        assert!(PeriodicOrbit::new(profile.clone(), 0.0).is_err());
        assert!(PeriodicOrbit::new(profile.clone(), -2.0).is_err());
        let sys = quadratic_system(4.0, mesh, MPolicy::Auto);
        let mut z = vec![0.5; sys.dim() - 1];
        z.push(-1.0);
        assert!(sys.residual(&z).is_err());
    }

    #[test]
    fn orbit_json_round_trip() {
        let mesh = Mesh::new(5, 3, AbscissaeFamily::GaussLegendre).unwrap();
        let orbit = exact_orbit(4.0, &mesh);
        let text = orbit_to_json(&orbit).unwrap();
        assert!(text.contains("\"abscissae_family\": \"legendre\""));
        let back = orbit_from_json(&text).unwrap();
        assert_eq!(back.omega, orbit.omega);
        assert_eq!(back.profile.values(), orbit.profile.values());
        assert!(orbit_from_json("{\"L\": 2}").is_err());
        assert!(orbit_from_json("not json").is_err());
    }
}
