//! Stability of computed periodic orbits: a discretized monodromy operator
//! for the linearized renewal equation and its eigenvalues (Floquet
//! multipliers).
//!
//! The state of the linearized equation lives on the rescaled history
//! window [−1, 0], discretized on the orbit mesh shifted left by one. The
//! monodromy matrix maps a state at time 0 to the state at time 1 by
//! solving one period of the linear collocation system as an initial value
//! problem: history values on [−1, 0] are data, values on (0, 1] are
//! unknowns, and no periodic wrapping is applied to the perturbation.

mod eigen;

pub use eigen::real_eigenvector;

use num_complex::Complex64;

use crate::basis::{Mesh, PiecewisePolynomial};
use crate::collocation::{scatter_eval, wrap_periodic, PeriodicOrbit};
use crate::continuation::{Branch, PhasePolicy};
use crate::error::{Error, Result};
use crate::model::{REForm, REModel};
use crate::solver::{LuFactors, Matrix, NewtonOptions};

pub const TOL_TRIVIAL_DEFAULT: f64 = 1e-3;
pub const TOL_MARGIN_DEFAULT: f64 = 1e-6;

/// Discretized monodromy operator over one period.
#[derive(Debug, Clone)]
pub struct MonodromyMatrix {
    pub matrix: Matrix,
    mesh: Mesh,
    d: usize,
}

impl MonodromyMatrix {
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn state_dim(&self) -> usize {
        self.d
    }
}

/// All eigenvalues of a real dense matrix (Hessenberg reduction followed by
/// implicitly shifted QR), with a residual check on the dominant ones.
pub fn eigenvalues_dense(a: &Matrix) -> Result<Vec<Complex64>> {
    eigen::eigenvalues(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    Stable,
    Unstable,
    Marginal,
}

impl std::fmt::Display for Stability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stability::Stable => write!(f, "stable"),
            Stability::Unstable => write!(f, "unstable"),
            Stability::Marginal => write!(f, "marginal"),
        }
    }
}

/// Floquet multipliers sorted by decreasing modulus, with the trivial
/// multiplier identified and a stability verdict.
#[derive(Debug, Clone)]
pub struct FloquetSpectrum {
    pub multipliers: Vec<Complex64>,
    pub trivial_index: usize,
    pub stability: Stability,
    /// |μ_trivial − 1|; large values signal an under-resolved orbit.
    pub trivial_deviation: f64,
}

impl FloquetSpectrum {
    /// Largest-modulus multiplier other than the trivial one.
    pub fn leading_nontrivial(&self) -> Option<Complex64> {
        self.multipliers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != self.trivial_index)
            .map(|(_, &m)| m)
            .next()
    }

    /// Most negative real nontrivial multiplier, the quantity whose passage
    /// through −1 signals a period doubling.
    pub fn most_negative_real(&self) -> Option<f64> {
        self.multipliers
            .iter()
            .enumerate()
            .filter(|(i, m)| *i != self.trivial_index && m.im.abs() <= 1e-9)
            .map(|(_, m)| m.re)
            .fold(None, |acc, v| match acc {
                Some(a) if a <= v => Some(a),
                _ => Some(v),
            })
    }
}

/// Classify a raw spectrum: identify the trivial multiplier (nearest 1) and
/// compare every other modulus against the unit circle.
pub fn classify(spectrum: &[Complex64], tol_trivial: f64, tol_margin: f64) -> Result<FloquetSpectrum> {
    if spectrum.is_empty() {
        return Err(Error::invalid("cannot classify an empty spectrum"));
    }
    let mut multipliers = spectrum.to_vec();
    multipliers.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.im.total_cmp(&a.im)));
    let trivial_index = multipliers
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            (*a - Complex64::new(1.0, 0.0))
                .norm()
                .total_cmp(&(*b - Complex64::new(1.0, 0.0)).norm())
        })
        .map(|(i, _)| i)
        .unwrap();
    let trivial_deviation = (multipliers[trivial_index] - Complex64::new(1.0, 0.0)).norm();
    let _ = tol_trivial; // deviation is reported; callers decide how strict to be

    let mut any_outside = false;
    let mut all_inside = true;
    for (i, m) in multipliers.iter().enumerate() {
        if i == trivial_index {
            continue;
        }
        let r = m.norm();
        if r > 1.0 + tol_margin {
            any_outside = true;
        }
        if r >= 1.0 - tol_margin {
            all_inside = false;
        }
    }
    let stability = if any_outside {
        Stability::Unstable
    } else if all_inside {
        Stability::Stable
    } else {
        Stability::Marginal
    };
    Ok(FloquetSpectrum {
        multipliers,
        trivial_index,
        stability,
        trivial_deviation,
    })
}

/// Assemble the monodromy matrix of the renewal equation linearized around
/// a periodic orbit.
///
/// Column `j` is the discrete time-1 state of the solution whose initial
/// history is the `j`-th interpolation basis function on [−1, 0]. One LU
/// factorization of the collocation operator serves all columns.
pub fn monodromy_matrix(
    orbit: &PeriodicOrbit,
    model: &REModel,
    level: usize,
) -> Result<MonodromyMatrix> {
    let mesh = orbit.mesh().clone();
    let d = model.d;
    if orbit.profile.dim() != d {
        return Err(Error::invalid("orbit dimension does not match model"));
    }
    let omega = orbit.omega;
    let reach = match &model.form {
        REForm::Kernel(kf) => -kf.support().0,
        REForm::Nested(nf) => nf
            .kernels
            .iter()
            .map(|k| k.tau)
            .fold(0.0f64, f64::max),
    } / omega;
    if reach > 1.0 + 1e-12 {
        return Err(Error::invalid(format!(
            "rescaled delay {reach:.4} exceeds the unit history window; analyze a period multiple"
        )));
    }

    let nn = mesh.node_count();
    let n = nn * d;
    let ref_rule = crate::model::secondary_reference_rule(level)?;
    let mut a = Matrix::identity(n);
    let mut b = Matrix::zeros(n, n);
    let mut wbuf: Vec<f64> = Vec::new();
    let mut state = vec![0.0; d];
    let mut dmat = vec![0.0; d * d];

    // scatter one coupling coefficient block at combined state point `s`
    // (perturbation side: no wrapping; s ≤ 0 reads the initial history)
    let couple = |a: &mut Matrix,
                      b: &mut Matrix,
                      row0: usize,
                      s: f64,
                      coeff: &[f64],
                      wbuf: &mut Vec<f64>|
     -> Result<()> {
        if s > 0.0 {
            scatter_eval(&mesh, s, wbuf, |node, wq| {
                for c in 0..d {
                    for c2 in 0..d {
                        a[(row0 + c, node * d + c2)] -= coeff[c * d + c2] * wq;
                    }
                }
            })
        } else {
            scatter_eval(&mesh, s + 1.0, wbuf, |node, wq| {
                for c in 0..d {
                    for c2 in 0..d {
                        b[(row0 + c, node * d + c2)] += coeff[c * d + c2] * wq;
                    }
                }
            })
        }
    };

    for idx in 0..nn {
        let t = mesh.grid()[idx];
        let row0 = idx * d;
        match &model.form {
            REForm::Kernel(kf) => {
                let (lo, hi) = kf.support();
                let len = hi - lo;
                for (&u, &w) in ref_rule.nodes.iter().zip(&ref_rule.weights) {
                    let arg = lo + len * u;
                    let theta = arg / omega;
                    // orbit state is periodic; the perturbation is not
                    orbit
                        .profile
                        .eval_into(wrap_periodic(t + theta), &mut state)?;
                    kf.deriv_y(arg, &state, &mut dmat);
                    let factor = len * w;
                    for v in dmat.iter_mut() {
                        *v *= factor;
                    }
                    couple(&mut a, &mut b, row0, t + theta, &dmat, &mut wbuf)?;
                }
            }
            REForm::Nested(nf) => {
                let nq = nf.kernels.len();
                let mut integrals = vec![0.0; nq * d];
                for (q, ker) in nf.kernels.iter().enumerate() {
                    for (&u, &w) in ref_rule.nodes.iter().zip(&ref_rule.weights) {
                        let arg = ker.tau * u;
                        orbit
                            .profile
                            .eval_into(wrap_periodic(t - arg / omega), &mut state)?;
                        let scale = ker.tau * w * ker.eval(arg);
                        for c in 0..d {
                            integrals[q * d + c] += scale * state[c];
                        }
                    }
                }
                let mut dfq = vec![0.0; d * d];
                for (q, ker) in nf.kernels.iter().enumerate() {
                    nf.outer_deriv(&integrals, q, &mut dfq);
                    for (&u, &w) in ref_rule.nodes.iter().zip(&ref_rule.weights) {
                        let arg = ker.tau * u;
                        let factor = ker.tau * w * ker.eval(arg);
                        if factor == 0.0 {
                            continue;
                        }
                        for (dv, &df) in dmat.iter_mut().zip(dfq.iter()) {
                            *dv = factor * df;
                        }
                        couple(&mut a, &mut b, row0, t - arg / omega, &dmat, &mut wbuf)?;
                    }
                }
            }
        }
    }

    let lu = LuFactors::factor(a)?;
    let mut t_mat = Matrix::zeros(n, n);
    let mut col = vec![0.0; n];
    for j in 0..n {
        for (i, v) in col.iter_mut().enumerate() {
            *v = b[(i, j)];
        }
        let y = lu.solve(&col);
        for (i, &v) in y.iter().enumerate() {
            t_mat[(i, j)] = v;
        }
    }
    Ok(MonodromyMatrix {
        matrix: t_mat,
        mesh,
        d,
    })
}

/// Monodromy spectrum of an orbit with default classification tolerances.
pub fn floquet_spectrum(orbit: &PeriodicOrbit, model: &REModel, level: usize) -> Result<FloquetSpectrum> {
    let mono = monodromy_matrix(orbit, model, level)?;
    let eigs = eigenvalues_dense(&mono.matrix)?;
    classify(&eigs, TOL_TRIVIAL_DEFAULT, TOL_MARGIN_DEFAULT)
}

/// Eigenfunction of the multiplier nearest −1 over one period, sampled on
/// the orbit mesh: the image under the monodromy matrix of its eigenvector
/// is the linearized solution at the grid points.
pub fn period_doubling_eigenfunction(
    mono: &MonodromyMatrix,
    spectrum: &FloquetSpectrum,
) -> Result<PiecewisePolynomial> {
    let mu = spectrum
        .multipliers
        .iter()
        .filter(|m| m.im.abs() <= 1e-6)
        .min_by(|a, b| {
            (a.re + 1.0)
                .abs()
                .total_cmp(&(b.re + 1.0).abs())
        })
        .map(|m| m.re)
        .ok_or_else(|| Error::Eigensolver("no real multiplier near −1".into()))?;
    let v = real_eigenvector(&mono.matrix, mu)?;
    let y = mono.matrix.mul_vec(&v);
    let sup = y.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    let values: Vec<f64> = y.iter().map(|x| x / sup).collect();
    PiecewisePolynomial::new(mono.mesh.clone(), mono.d, values)
}

/// A detected period-doubling point.
#[derive(Debug, Clone)]
pub struct PdDetection {
    pub bracket: (f64, f64),
    pub refined: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct PdOptions {
    pub level: crate::collocation::MPolicy,
    pub newton: NewtonOptions,
    /// Secondary level for monodromy assembly during refinement probes.
    pub floquet_level: Option<usize>,
    /// Stop refining once the parameter bracket is this narrow.
    pub bracket_tol: f64,
}

impl Default for PdOptions {
    fn default() -> Self {
        PdOptions {
            level: crate::collocation::MPolicy::Auto,
            newton: NewtonOptions::default(),
            floquet_level: None,
            bracket_tol: 1e-3,
        }
    }
}

/// Scan a branch for sign changes of μ+1 in the most negative real
/// multiplier and refine each bracket by bisection, re-solving the orbit
/// and its spectrum at every probe.
pub fn detect_period_doubling<F>(
    branch: &Branch,
    family: F,
    policy: &PhasePolicy,
    opts: &PdOptions,
) -> Result<Vec<PdDetection>>
where
    F: Fn(f64) -> Result<REModel>,
{
    if branch.points.iter().any(|p| p.floquet.is_none()) {
        return Err(Error::invalid(
            "period-doubling scan requires Floquet spectra on every branch point",
        ));
    }

    let probe = |param: f64, guess: &PeriodicOrbit| -> Result<(PeriodicOrbit, f64)> {
        let model = family(param)?;
        let phase = policy.build(param, guess);
        let sys = crate::collocation::CollocationSystem::new(
            model,
            branch.mesh.clone(),
            phase,
            crate::collocation::SystemOptions {
                level: opts.level,
                ..Default::default()
            },
        )?;
        let (orbit, _) = sys.solve_orbit(guess, &opts.newton)?;
        let level = opts.floquet_level.unwrap_or_else(|| sys.level());
        let spectrum = floquet_spectrum(&orbit, sys.model(), level)?;
        let mu = spectrum
            .most_negative_real()
            .ok_or_else(|| Error::Eigensolver("no real nontrivial multiplier at probe".into()))?;
        Ok((orbit, mu))
    };

    let mut detections = Vec::new();
    for w in branch.points.windows(2) {
        let mu0 = w[0].floquet.as_ref().unwrap().most_negative_real();
        let mu1 = w[1].floquet.as_ref().unwrap().most_negative_real();
        let (Some(mu0), Some(mu1)) = (mu0, mu1) else {
            continue;
        };
        if (mu0 + 1.0) * (mu1 + 1.0) >= 0.0 {
            continue;
        }
        let mut lo = (w[0].param, w[0].orbit.clone(), mu0);
        let mut hi = (w[1].param, w[1].orbit.clone(), mu1);
        while (hi.0 - lo.0).abs() > opts.bracket_tol {
            let mid = 0.5 * (lo.0 + hi.0);
            let guess = if (mid - lo.0).abs() <= (hi.0 - mid).abs() {
                lo.1.clone()
            } else {
                hi.1.clone()
            };
            let (orbit, mu) = probe(mid, &guess)?;
            if (mu + 1.0) * (lo.2 + 1.0) > 0.0 {
                lo = (mid, orbit, mu);
            } else {
                hi = (mid, orbit, mu);
            }
        }
        detections.push(PdDetection {
            bracket: (lo.0, hi.0),
            refined: 0.5 * (lo.0 + hi.0),
        });
    }
    Ok(detections)
}
