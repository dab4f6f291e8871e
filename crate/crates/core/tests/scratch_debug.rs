// Focused probe of the stalled first-point solve.

use recol::basis::{AbscissaeFamily, Mesh, PiecewisePolynomial};
use recol::collocation::{
    CollocationSystem, MPolicy, PeriodicOrbit, PhaseCondition, SystemOptions,
};
use recol::model::sirs_re_model;

#[test]
fn jacobian_at_sine_guess_production_settings() {
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
    println!("level M = {}", sys.level());
    let z = sys.pack(&orbit).unwrap();
    let analytic = sys.jacobian(&z).unwrap();
    let fd = sys.jacobian_fd(&z, 1e-6).unwrap();
    let n = sys.dim();
    let mut worst = 0.0f64;
    let mut worst_ij = (0, 0);
    for i in 0..n {
        for j in 0..n {
            let rel = (analytic[(i, j)] - fd[(i, j)]).abs() / (1.0 + fd[(i, j)].abs());
            if rel > worst {
                worst = rel;
                worst_ij = (i, j);
            }
        }
    }
    println!(
        "worst rel {worst:.3e} at {:?}: analytic {} fd {}",
        worst_ij,
        analytic[worst_ij],
        fd[worst_ij]
    );
    assert!(worst <= 1e-5, "relative discrepancy {worst:.2e}");
}
