//! One-parameter continuation of periodic orbits: Hopf-start guesses,
//! secant prediction with step halving, and branch storage.

use std::f64::consts::PI;

use crate::basis::{Mesh, PiecewisePolynomial};
use crate::collocation::{
    wrap_periodic, CollocationSystem, JacobianMode, MPolicy, PeriodicOrbit, PhaseCondition,
    SolveDiagnostics, SystemOptions,
};
use crate::error::{Error, Result};
use crate::floquet::FloquetSpectrum;
use crate::model::REModel;
use crate::solver::NewtonOptions;

/// One accepted continuation point.
#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub param: f64,
    pub orbit: PeriodicOrbit,
    /// max − min of the phase component over the period.
    pub amplitude: f64,
    pub diagnostics: SolveDiagnostics,
    pub floquet: Option<FloquetSpectrum>,
}

/// An ordered branch of periodic orbits; parameters are strictly monotone.
#[derive(Debug, Clone)]
pub struct Branch {
    pub model_name: String,
    pub mesh: Mesh,
    pub points: Vec<BranchPoint>,
}

impl Branch {
    pub fn last(&self) -> Option<&BranchPoint> {
        self.points.last()
    }
}

/// How the phase condition is chosen at each continuation step.
pub enum PhasePolicy {
    /// Fixed anchor `u_k(0) = x̂` for the whole branch.
    TrivialFixed { component: usize, anchor: f64 },
    /// Anchor recomputed from the parameter, e.g. an equilibrium coordinate.
    TrivialFromParam {
        component: usize,
        anchor: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    },
    /// Integral phase against the profile accepted at the previous step.
    IntegralUpdating { component: usize },
}

impl PhasePolicy {
    pub fn build(&self, param: f64, previous: &PeriodicOrbit) -> PhaseCondition {
        match self {
            PhasePolicy::TrivialFixed { component, anchor } => PhaseCondition::Trivial {
                component: *component,
                anchor: *anchor,
            },
            PhasePolicy::TrivialFromParam { component, anchor } => PhaseCondition::Trivial {
                component: *component,
                anchor: anchor(param),
            },
            PhasePolicy::IntegralUpdating { component } => PhaseCondition::Integral {
                component: *component,
                reference: previous.profile.clone(),
            },
        }
    }

    pub fn component(&self) -> usize {
        match self {
            PhasePolicy::TrivialFixed { component, .. }
            | PhasePolicy::TrivialFromParam { component, .. }
            | PhasePolicy::IntegralUpdating { component } => *component,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ContinuationOptions {
    pub level: MPolicy,
    pub jacobian: JacobianMode,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Compute Floquet multipliers at every accepted point.
    pub floquet: bool,
    /// Secondary level for the monodromy assembly; defaults to the system
    /// level.
    pub floquet_level: Option<usize>,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions {
            level: MPolicy::Auto,
            jacobian: JacobianMode::Analytic,
            newton_tol: 1e-10,
            newton_max_iter: 25,
            floquet: false,
            floquet_level: None,
        }
    }
}

impl ContinuationOptions {
    pub fn newton(&self) -> NewtonOptions {
        NewtonOptions {
            tol: self.newton_tol,
            max_iter: self.newton_max_iter,
            ..Default::default()
        }
    }

    pub fn system(&self) -> SystemOptions {
        SystemOptions {
            level: self.level,
            jacobian: self.jacobian,
        }
    }
}

/// Continuation failure carrying whatever part of the branch was computed.
#[derive(Debug)]
pub struct BranchStalled {
    pub at_param: f64,
    pub last_error: Error,
    pub partial: Branch,
}

impl std::fmt::Display for BranchStalled {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "continuation stalled at parameter {} after {} points: {}",
            self.at_param,
            self.partial.points.len(),
            self.last_error
        )
    }
}

impl std::error::Error for BranchStalled {}

/// Initial orbit guess near a Hopf point: period `2π/β`, a sine of the
/// given amplitude in one component around the equilibrium.
pub fn hopf_initial_guess(
    equilibrium: &[f64],
    beta: f64,
    alpha_re: f64,
    amplitude: Option<f64>,
    component: usize,
    mesh: &Mesh,
) -> Result<PeriodicOrbit> {
    if beta <= 0.0 {
        return Err(Error::invalid("Hopf frequency beta must be positive"));
    }
    if component >= equilibrium.len() {
        return Err(Error::invalid("component index out of range"));
    }
    let amp = amplitude.unwrap_or_else(|| alpha_re.max(0.0).sqrt().max(1e-3));
    let d = equilibrium.len();
    let profile = PiecewisePolynomial::from_fn(mesh.clone(), d, |t, out| {
        out.copy_from_slice(equilibrium);
        out[component] += amp * (2.0 * PI * t).sin();
    })?;
    PeriodicOrbit::new(profile, 2.0 * PI / beta)
}

/// Double-period restart: two copies of the orbit over the doubled period
/// plus a perturbation that is antiperiodic over the original period.
///
/// `perturbation` is the period-doubling eigenfunction over one original
/// period (values on the orbit mesh); when absent a sine bump is used.
pub fn double_period_guess(
    orbit: &PeriodicOrbit,
    perturbation: Option<&PiecewisePolynomial>,
    eps: f64,
) -> Result<PeriodicOrbit> {
    let mesh = orbit.mesh().clone();
    let d = orbit.profile.dim();
    if let Some(p) = perturbation {
        if p.dim() != d {
            return Err(Error::invalid("perturbation dimension mismatch"));
        }
    }
    // sup-normalize the supplied eigenfunction so eps is an amplitude
    let scale = perturbation
        .map(|p| {
            p.values()
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()))
                .max(1e-300)
        })
        .unwrap_or(1.0);
    let mut pbuf = vec![0.0; d];
    let profile = PiecewisePolynomial::from_fn(mesh, d, |t, out| {
        let inner = wrap_periodic(2.0 * t);
        orbit.profile.eval_into(inner, out).unwrap();
        match perturbation {
            Some(p) => {
                // antiperiodic extension over the doubled interval
                let (s, sign) = if t < 0.5 {
                    (2.0 * t, 1.0)
                } else {
                    ((2.0 * t - 1.0).min(1.0), -1.0)
                };
                p.eval_into(s, &mut pbuf).unwrap();
                for (o, &pv) in out.iter_mut().zip(&pbuf) {
                    *o += eps * sign * pv / scale;
                }
            }
            None => {
                out[0] += eps * (2.0 * PI * t).sin();
            }
        }
    })?;
    PeriodicOrbit::new(profile, 2.0 * orbit.omega)
}

/// Natural-parameter continuation from `from` to `to`.
///
/// Each step predicts by secant extrapolation of the two previous orbits,
/// rebuilds the phase condition per the policy, corrects with the Newton
/// solver, and halves the step on failure (down to 1/64 of the initial
/// step). The start orbit is corrected at `from` first.
pub fn continue_branch<F>(
    family: F,
    from: f64,
    to: f64,
    step: f64,
    mesh: &Mesh,
    policy: &PhasePolicy,
    start: &PeriodicOrbit,
    opts: &ContinuationOptions,
) -> std::result::Result<Branch, BranchStalled>
where
    F: Fn(f64) -> Result<REModel>,
{
    let mut branch = Branch {
        model_name: String::new(),
        mesh: mesh.clone(),
        points: Vec::new(),
    };
    let direction = to - from;
    if direction == 0.0 || step == 0.0 || direction.signum() != step.signum() {
        return Err(BranchStalled {
            at_param: from,
            last_error: Error::invalid("need from ≠ to and a step of matching sign"),
            partial: branch,
        });
    }

    let solve_at = |param: f64, guess: &PeriodicOrbit, reference: &PeriodicOrbit| -> Result<BranchPoint> {
        let model = family(param)?;
        let phase = policy.build(param, reference);
        let sys = CollocationSystem::new(model, mesh.clone(), phase, opts.system())?;
        let (orbit, diagnostics) = sys.solve_orbit(guess, &opts.newton())?;
        if diagnostics.degenerate {
            return Err(Error::DegenerateOrbit(format!(
                "branch point at parameter {param} collapsed to a constant"
            )));
        }
        let floquet = if opts.floquet {
            let level = opts.floquet_level.unwrap_or_else(|| sys.level());
            Some(crate::floquet::floquet_spectrum(&orbit, sys.model(), level)?)
        } else {
            None
        };
        Ok(BranchPoint {
            param,
            amplitude: orbit.amplitude(policy.component()),
            orbit,
            diagnostics,
            floquet,
        })
    };

    // first point, corrected at `from` from the supplied start
    match solve_at(from, start, start) {
        Ok(point) => {
            branch.model_name = family(from).map(|m| m.name).unwrap_or_default();
            branch.points.push(point);
        }
        Err(e) => {
            return Err(BranchStalled {
                at_param: from,
                last_error: e,
                partial: branch,
            })
        }
    }

    let initial_step = step.abs();
    let mut step_cur = step;
    let mut current = from;

    while (to - current).abs() > 1e-14 * (1.0 + to.abs()) {
        let mut next = current + step_cur;
        if (next - to) * step.signum() > 0.0 {
            next = to;
        }
        // secant predictor over the last two accepted points
        let npts = branch.points.len();
        let prev = &branch.points[npts - 1];
        let guess = if npts >= 2 {
            let prev2 = &branch.points[npts - 2];
            let dp = prev.param - prev2.param;
            let lambda = if dp != 0.0 {
                (next - prev.param) / dp
            } else {
                0.0
            };
            let mut values = prev.orbit.profile.values().to_vec();
            for (v, &v2) in values.iter_mut().zip(prev2.orbit.profile.values()) {
                *v += lambda * (*v - v2);
            }
            let omega = prev.orbit.omega + lambda * (prev.orbit.omega - prev2.orbit.omega);
            PeriodicOrbit::new(
                PiecewisePolynomial::new(mesh.clone(), prev.orbit.profile.dim(), values)
                    .expect("predictor profile"),
                omega.max(1e-8),
            )
            .expect("predictor orbit")
        } else {
            prev.orbit.clone()
        };

        match solve_at(next, &guess, &prev.orbit.clone()) {
            Ok(point) => {
                branch.points.push(point);
                current = next;
                // gentle recovery toward the requested step size
                let grown = (step_cur.abs() * 2.0).min(initial_step);
                step_cur = grown * step.signum();
            }
            Err(e) => {
                step_cur *= 0.5;
                if step_cur.abs() < initial_step / 64.0 {
                    return Err(BranchStalled {
                        at_param: next,
                        last_error: e,
                        partial: branch,
                    });
                }
            }
        }
    }
    Ok(branch)
}
