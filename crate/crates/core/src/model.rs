//! Renewal-equation right-hand sides and the built-in benchmark models.
//!
//! A right-hand side is either a kernel integral
//! `F(ψ) = ∫ K(s, ψ(s)) ds` over a support interval `[a, b] ⊆ [−τ, 0]`, or
//! a nested form `F(ψ) = f(I_1, …, I_n)` with scalar-weighted integrals
//! `I_q = ∫_0^{τ_q} k_q(σ) ψ(−σ) dσ`. Both carry analytic partial
//! derivatives for Jacobian assembly.

use crate::error::{Error, Result};
use crate::quadrature::{clenshaw_curtis, QuadratureRule};

type KernelFn = Box<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
type OuterFn = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
type OuterDerivFn = Box<dyn Fn(&[f64], usize, &mut [f64]) + Send + Sync>;

/// Kernel-integral right-hand side with explicit support.
pub struct KernelForm {
    support: (f64, f64),
    kernel: KernelFn,
    deriv_s: KernelFn,
    deriv_y: KernelFn,
}

impl KernelForm {
    pub fn new(support: (f64, f64), kernel: KernelFn, deriv_s: KernelFn, deriv_y: KernelFn) -> Self {
        KernelForm {
            support,
            kernel,
            deriv_s,
            deriv_y,
        }
    }

    /// Support interval `[a, b]`; the kernel vanishes identically outside.
    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    #[inline]
    fn in_support(&self, s: f64) -> bool {
        s >= self.support.0 && s <= self.support.1
    }

    /// `K(s, y)`, exactly zero outside the support.
    pub fn eval(&self, s: f64, y: &[f64], out: &mut [f64]) {
        if self.in_support(s) {
            (self.kernel)(s, y, out);
        } else {
            out.fill(0.0);
        }
    }

    /// `∂K/∂s`, zero outside the support.
    pub fn deriv_s(&self, s: f64, y: &[f64], out: &mut [f64]) {
        if self.in_support(s) {
            (self.deriv_s)(s, y, out);
        } else {
            out.fill(0.0);
        }
    }

    /// `∂K/∂y` as a d×d row-major block, zero outside the support.
    pub fn deriv_y(&self, s: f64, y: &[f64], out: &mut [f64]) {
        if self.in_support(s) {
            (self.deriv_y)(s, y, out);
        } else {
            out.fill(0.0);
        }
    }
}

/// One scalar integral weight of a nested right-hand side.
pub struct NestedKernel {
    /// Upper limit of this integral (original time units).
    pub tau: f64,
    weight: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    weight_deriv: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl NestedKernel {
    pub fn new(
        tau: f64,
        weight: Box<dyn Fn(f64) -> f64 + Send + Sync>,
        weight_deriv: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    ) -> Self {
        NestedKernel {
            tau,
            weight,
            weight_deriv,
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        (self.weight)(s)
    }

    pub fn deriv(&self, s: f64) -> f64 {
        (self.weight_deriv)(s)
    }
}

/// Nested right-hand side `f(I_1, …, I_n)`.
pub struct NestedForm {
    pub kernels: Vec<NestedKernel>,
    outer: OuterFn,
    outer_deriv: OuterDerivFn,
}

impl NestedForm {
    pub fn new(kernels: Vec<NestedKernel>, outer: OuterFn, outer_deriv: OuterDerivFn) -> Self {
        NestedForm {
            kernels,
            outer,
            outer_deriv,
        }
    }

    /// `f` applied to the stacked integrals (`n·d` values).
    pub fn outer(&self, integrals: &[f64], out: &mut [f64]) {
        (self.outer)(integrals, out);
    }

    /// `∂f/∂I_q` as a d×d row-major block at the stacked integral values.
    pub fn outer_deriv(&self, integrals: &[f64], q: usize, out: &mut [f64]) {
        (self.outer_deriv)(integrals, q, out);
    }
}

pub enum REForm {
    Kernel(KernelForm),
    Nested(NestedForm),
}

/// A renewal equation `x(t) = F(x_t)` with delay `τ` and one active scalar
/// parameter.
pub struct REModel {
    pub name: String,
    /// State dimension.
    pub d: usize,
    /// Delay, original time units.
    pub tau: f64,
    /// Value of the active parameter (γ for the built-in models).
    pub parameter: f64,
    /// Analytic nontrivial equilibrium, when one is known.
    pub equilibrium: Option<Vec<f64>>,
    pub form: REForm,
}

/// Logistic-type kernel model: `x(t) = (γ/2)∫_{−3}^{−1} x(t+s)(1−x(t+s)) ds`.
///
/// Its periodic solutions between the Hopf point and the first period
/// doubling are known in closed form; see [`quadratic_exact_solution`].
pub fn quadratic_re_model(gamma: f64) -> REModel {
    let half = 0.5 * gamma;
    let equilibrium = if gamma != 0.0 {
        Some(vec![1.0 - 1.0 / gamma])
    } else {
        None
    };
    REModel {
        name: "quadratic".into(),
        d: 1,
        tau: 3.0,
        parameter: gamma,
        equilibrium,
        form: REForm::Kernel(KernelForm::new(
            (-3.0, -1.0),
            Box::new(move |_s, y, out| out[0] = half * y[0] * (1.0 - y[0])),
            Box::new(|_s, _y, out| out[0] = 0.0),
            Box::new(move |_s, y, out| out[0] = half * (1.0 - 2.0 * y[0])),
        )),
    }
}

/// Ricker-type kernel model: `x(t) = (γ/2)∫_{−3}^{−1} x(t+s) e^{−x(t+s)} ds`.
pub fn exponential_re_model(gamma: f64) -> Result<REModel> {
    if gamma <= 0.0 {
        return Err(Error::invalid("exponential model requires gamma > 0"));
    }
    let half = 0.5 * gamma;
    Ok(REModel {
        name: "exponential".into(),
        d: 1,
        tau: 3.0,
        parameter: gamma,
        equilibrium: Some(vec![gamma.ln()]),
        form: REForm::Kernel(KernelForm::new(
            (-3.0, -1.0),
            Box::new(move |_s, y, out| out[0] = half * y[0] * (-y[0]).exp()),
            Box::new(|_s, _y, out| out[0] = 0.0),
            Box::new(move |_s, y, out| out[0] = half * (-y[0]).exp() * (1.0 - y[0])),
        )),
    })
}

/// Normalization constant of the SIRS infectivity kernel,
/// `1/∫_0^1 s² e^{−10s} ds = 500 e^10/(e^10 − 61)`.
pub fn sirs_normalization() -> f64 {
    let e10 = 10.0f64.exp();
    500.0 * e10 / (e10 - 61.0)
}

/// SIRS-type nested model:
/// `x(t) = γ(1 − ∫_0^1 x(t−s) ds)·∫_0^1 α s² e^{−10s} x(t−s) ds`.
pub fn sirs_re_model(gamma: f64) -> Result<REModel> {
    if gamma <= 0.0 {
        return Err(Error::invalid("sirs model requires gamma > 0"));
    }
    let alpha = sirs_normalization();
    let kernels = vec![
        NestedKernel::new(1.0, Box::new(|_| 1.0), Box::new(|_| 0.0)),
        NestedKernel::new(
            1.0,
            Box::new(move |s| alpha * s * s * (-10.0 * s).exp()),
            Box::new(move |s| alpha * (2.0 * s - 10.0 * s * s) * (-10.0 * s).exp()),
        ),
    ];
    Ok(REModel {
        name: "sirs".into(),
        d: 1,
        tau: 1.0,
        parameter: gamma,
        equilibrium: Some(vec![1.0 - 1.0 / gamma]),
        form: REForm::Nested(NestedForm::new(
            kernels,
            Box::new(move |i, out| out[0] = gamma * (1.0 - i[0]) * i[1]),
            Box::new(move |i, q, out| {
                out[0] = match q {
                    0 => -gamma * i[1],
                    _ => gamma * (1.0 - i[0]),
                }
            }),
        )),
    })
}

/// Closed-form periodic solution of the quadratic model,
/// `x(t) = σ + A sin(πt/2)` with period 4 (original time).
#[derive(Debug, Clone, Copy)]
pub struct QuadraticExact {
    pub sigma: f64,
    pub amplitude: f64,
}

/// The closed-form family exists wherever `A² = 2σ(1 − 1/γ − σ) ≥ 0`.
pub fn quadratic_exact_solution(gamma: f64) -> Result<QuadraticExact> {
    let sigma = 0.5 + std::f64::consts::PI / (4.0 * gamma);
    let a2 = 2.0 * sigma * (1.0 - 1.0 / gamma - sigma);
    if a2 < 0.0 {
        return Err(Error::invalid(format!(
            "no real closed-form amplitude at gamma = {gamma}"
        )));
    }
    Ok(QuadraticExact {
        sigma,
        amplitude: a2.sqrt(),
    })
}

impl QuadraticExact {
    /// Period in original time units.
    pub fn omega(&self) -> f64 {
        4.0
    }

    /// The solution in rescaled time, 1-periodic: `σ + A sin(2πt)`.
    pub fn eval_rescaled(&self, t: f64) -> f64 {
        self.sigma + self.amplitude * (2.0 * std::f64::consts::PI * t).sin()
    }
}

/// Reference quadrature rule on [0, 1] for the secondary discretization.
pub(crate) fn secondary_reference_rule(level: usize) -> Result<QuadratureRule> {
    clenshaw_curtis(level, 0.0, 1.0)
}

/// Evaluate the discretized right-hand side `F_M` for a history segment in
/// rescaled time: `history(θ) ≈ x(t+θ)` for `θ ∈ [−τ/ω, 0]`.
///
/// The quadrature lives on the kernel support mapped by `1/ω` (kernel form)
/// or on `[0, τ_q/ω]` per integral (nested form); kernel arguments are
/// computed on the original-time interval so support endpoints are hit
/// exactly.
pub fn eval_rhs(
    model: &REModel,
    history: impl FnMut(f64, &mut [f64]),
    omega: f64,
    level: usize,
) -> Result<Vec<f64>> {
    let rule = secondary_reference_rule(level)?;
    eval_rhs_with_rule(model, history, omega, &rule)
}

pub(crate) fn eval_rhs_with_rule(
    model: &REModel,
    mut history: impl FnMut(f64, &mut [f64]),
    omega: f64,
    ref_rule: &QuadratureRule,
) -> Result<Vec<f64>> {
    if omega <= 0.0 {
        return Err(Error::invalid("period omega must be positive"));
    }
    let d = model.d;
    let mut state = vec![0.0; d];
    match &model.form {
        REForm::Kernel(kf) => {
            let (a, b) = kf.support();
            let len = b - a;
            let mut out = vec![0.0; d];
            let mut kval = vec![0.0; d];
            for (&u, &w) in ref_rule.nodes.iter().zip(&ref_rule.weights) {
                let arg = a + len * u; // original-time kernel argument ωθ
                history(arg / omega, &mut state);
                kf.eval(arg, &state, &mut kval);
                // ω·w_mapped = len·w_ref
                let scale = len * w;
                for (o, &kv) in out.iter_mut().zip(kval.iter()) {
                    *o += scale * kv;
                }
            }
            Ok(out)
        }
        REForm::Nested(nf) => {
            let n = nf.kernels.len();
            let mut integrals = vec![0.0; n * d];
            for (q, ker) in nf.kernels.iter().enumerate() {
                for (&u, &w) in ref_rule.nodes.iter().zip(&ref_rule.weights) {
                    let arg = ker.tau * u; // original-time lag σ
                    history(-arg / omega, &mut state);
                    let scale = ker.tau * w * ker.eval(arg);
                    for c in 0..d {
                        integrals[q * d + c] += scale * state[c];
                    }
                }
            }
            let mut out = vec![0.0; d];
            nf.outer(&integrals, &mut out);
            Ok(out)
        }
    }
}
