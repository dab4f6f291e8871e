// Manual Newton trace for the SIRS first point.

use recol::basis::{AbscissaeFamily, Mesh, PiecewisePolynomial};
use recol::collocation::{
    CollocationSystem, MPolicy, PeriodicOrbit, PhaseCondition, SystemOptions,
};
use recol::model::sirs_re_model;
use recol::solver::LuFactors;

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[test]
fn trace_newton_on_sirs_first_point() {
    let lg0: f64 = 1.70;
    let gamma = lg0.exp();
    let eq = 1.0 - 1.0 / gamma;
    let mesh = Mesh::new(40, 4, AbscissaeFamily::ChebyshevExtrema).unwrap();
    let amp = 0.02;
    let profile = PiecewisePolynomial::from_fn(mesh.clone(), 1, |t, out| {
        out[0] = eq + amp * (2.0 * std::f64::consts::PI * t).sin()
    })
    .unwrap();
    let beta = 4.88959;
    let orbit = PeriodicOrbit::new(profile, 2.0 * std::f64::consts::PI / beta).unwrap();
    let sys = CollocationSystem::new(
        sirs_re_model(gamma).unwrap(),
        mesh.clone(),
        PhaseCondition::Trivial {
            component: 0,
            anchor: eq + 0.4 * amp,
        },
        SystemOptions {
            level: MPolicy::Auto,
            ..Default::default()
        },
    )
    .unwrap();
    let mut z = sys.pack(&orbit).unwrap();
    let n = sys.dim();
    for it in 0..20 {
        let r = sys.residual(&z).unwrap();
        let jac = sys.jacobian(&z).unwrap();
        let lu = LuFactors::factor(jac).unwrap();
        let step = lu.solve(&r);
        let amp_now = {
            let o = sys.unpack(&z).unwrap();
            o.amplitude(0)
        };
        println!(
            "it {it}: |r| {:.3e}  |step| {:.3e}  step_omega {:.3e}  omega {:.6}  amp {:.4}  pivot_ratio {:.2e}",
            sup(&r),
            sup(&step),
            step[n - 1],
            z[n - 1],
            amp_now,
            lu.pivot_ratio(),
        );
        for (zi, si) in z.iter_mut().zip(&step) {
            *zi -= si;
        }
        if sup(&step) < 1e-12 {
            break;
        }
    }
    let r = sys.residual(&z).unwrap();
    println!("final |r| {:.3e}, omega {:.6}", sup(&r), z[n - 1]);
}
