//! The two value routes must agree: Monte Carlo over the policy family
//! (including the feedback policy extracted from the solver) against the
//! finite-difference solution of the nonlinear Dirichlet problem.

use gsde_core::dynamics::SdeModel;
use gsde_core::expr;
use gsde_core::geometry::{Domain, Refinement};
use gsde_core::montecarlo::{
    estimate_value, vertex_policies, Functional, McConfig, Mode, NamedPolicy,
};
use gsde_core::pde::{extract_policy, solve_dirichlet, GridConfig};
use gsde_core::uncertainty::{ControlValue, UncertaintySet};

fn mc(n_paths: usize, dt: f64) -> McConfig {
    McConfig {
        n_paths,
        dt,
        seed: 7_130_010,
        t_max: None,
        refinement: Refinement::Bridge,
        bootstrap: 0,
    }
}

#[test]
fn drift_band_value_agrees_between_solver_and_sampler() {
    let model = SdeModel {
        n: 1,
        d: 1,
        b: vec![expr::parse("0", 1).unwrap()],
        sigma: vec![expr::parse("1", 1).unwrap()],
        h: None,
    };
    let theta = UncertaintySet::diag_box(1.0, 1.0, vec![0.5]).unwrap();
    let domain = Domain::interval(0.0, 1.0).unwrap();
    let f = expr::parse("0", 1).unwrap();
    let phi = expr::parse("x1", 1).unwrap();

    let cfg = GridConfig {
        nodes_per_axis: 201,
        ..GridConfig::default()
    };
    let sol = solve_dirichlet(&model, &theta, &domain, &f, &phi, &cfg, Mode::Upper).unwrap();
    let u_pde = sol.value_at(&[0.5]).unwrap();
    // Oracle for both routes: (1 - e^{-x})/(1 - e^{-1}).
    let oracle = (1.0 - (-0.5f64).exp()) / (1.0 - (-1.0f64).exp());
    assert!((u_pde - oracle).abs() < 2e-3, "pde {u_pde} vs oracle {oracle}");

    let mut policies = vertex_policies(&theta);
    policies.push(NamedPolicy {
        name: "pde-feedback".into(),
        policy: extract_policy(&sol).unwrap(),
    });
    let functional = Functional {
        phi,
        f,
        mode: Mode::Upper,
    };
    let est = estimate_value(
        &model,
        &theta,
        &domain,
        &functional,
        &policies,
        &[0.5],
        &mc(4000, 1e-3),
    )
    .unwrap();
    assert!(
        (est.value - u_pde).abs() <= 0.02,
        "mc {} vs pde {u_pde}",
        est.value
    );
    // The feedback policy is as good as the best vertex here (the optimal
    // control is bang-bang and constant), so its mean cannot lag the
    // reported family max by more than noise.
    let feedback = est
        .per_policy
        .iter()
        .find(|p| p.name == "pde-feedback")
        .unwrap();
    assert!(feedback.mean >= est.value - 3.0 * (feedback.std_error + est.std_error));
}

#[test]
fn ball_exit_time_agrees_between_solver_and_sampler() {
    let e2 = |s: &str| expr::parse(s, 2).unwrap();
    let model = SdeModel {
        n: 2,
        d: 2,
        b: vec![e2("0"), e2("0")],
        sigma: vec![e2("1"), e2("0"), e2("0"), e2("1")],
        h: None,
    };
    let theta = UncertaintySet::singleton(
        ControlValue::new(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap(),
    )
    .unwrap();
    let domain = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
    let f = e2("-1");
    let phi = e2("0");

    let cfg = GridConfig {
        nodes_per_axis: 81,
        ..GridConfig::default()
    };
    let sol = solve_dirichlet(&model, &theta, &domain, &f, &phi, &cfg, Mode::Upper).unwrap();
    // Oracle: u = (1 - r^2)/2, so 0.5 at the center.
    let u_pde = sol.value_at(&[0.0, 0.0]).unwrap();
    assert!((u_pde - 0.5).abs() < 0.02, "pde center value {u_pde}");

    let functional = Functional {
        phi,
        f,
        mode: Mode::Upper,
    };
    let est = estimate_value(
        &model,
        &theta,
        &domain,
        &functional,
        &vertex_policies(&theta),
        &[0.0, 0.0],
        &mc(3000, 2e-3),
    )
    .unwrap();
    assert!(
        (est.value - u_pde).abs() <= 0.03,
        "mc {} vs pde {u_pde}",
        est.value
    );
}
