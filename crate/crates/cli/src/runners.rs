//! One function per subcommand. Each returns the process exit code on
//! success: 0, or 5 when a verification/bounds run completes but a check
//! fails. Hard errors surface as `CliError` and map to codes 2, 3, 4.

use std::path::Path;

use gsde_core::dynamics::{self, ControlPolicy, SdeModel};
use gsde_core::geometry::{Domain, GeometryError};
use gsde_core::montecarlo::{
    self, Functional, McConfig, Mode, NamedPolicy,
};
use gsde_core::pde::{self, PdeSolution};
use gsde_core::uncertainty::{ControlValue, UncertaintySet};

use crate::config::{
    self, build_domain, build_functional, build_grid_config, build_mc, build_model, build_theta,
    CheckSpec, CliError, RunConfig,
};
use crate::report::{
    self, BoundsReport, CheckRecord, EllipticityOut, EmpiricalMoments, EstimateReport,
    ModelBoundsOut, PdeReport, PointEstimate, PointValue, VerifyReport,
};

struct Problem {
    model: SdeModel,
    theta: UncertaintySet,
    domain: Domain,
}

fn build_problem(cfg: &RunConfig) -> Result<Problem, CliError> {
    Ok(Problem {
        model: build_model(cfg)?,
        theta: build_theta(cfg)?,
        domain: build_domain(cfg)?,
    })
}

/// Vertex family plus configured extras plus, on request, the feedback
/// policy extracted from a fresh PDE solve.
fn build_policies(cfg: &RunConfig, prob: &Problem) -> Result<Vec<NamedPolicy>, CliError> {
    let mut family = montecarlo::vertex_policies(&prob.theta);
    for (i, entry) in cfg.mc.policies.iter().enumerate() {
        let c = ControlValue::new(entry.gamma.clone(), entry.mu.clone())
            .map_err(|e| CliError::Config(format!("mc.policies[{i}]: {e}")))?;
        family.push(NamedPolicy {
            name: format!("custom-{i}: {}", c.describe()),
            policy: ControlPolicy::Constant(c),
        });
    }
    if cfg.mc.include_pde_policy {
        let functional = build_functional(cfg)?;
        let solution = solve(cfg, prob, &functional)?;
        family.push(NamedPolicy {
            name: "pde-feedback".into(),
            policy: pde::extract_policy(&solution)?,
        });
    }
    Ok(family)
}

fn solve(cfg: &RunConfig, prob: &Problem, functional: &Functional) -> Result<PdeSolution, CliError> {
    Ok(pde::solve_dirichlet(
        &prob.model,
        &prob.theta,
        &prob.domain,
        &functional.f,
        &functional.phi,
        &build_grid_config(cfg),
        functional.mode,
    )?)
}

pub fn run_estimate(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    let prob = build_problem(cfg)?;
    let functional = build_functional(cfg)?;
    let points = config::points(cfg)?;
    let policies = build_policies(cfg, &prob)?;
    let mc = build_mc(cfg);

    let mut results = Vec::with_capacity(points.len());
    for x in points {
        let estimate = montecarlo::estimate_value(
            &prob.model,
            &prob.theta,
            &prob.domain,
            &functional,
            &policies,
            x,
            &mc,
        )?;
        println!(
            "x = [{}]  value = {:.6}  se = {:.2e}  censored = {:.4}",
            report::join_coords(x),
            estimate.value,
            estimate.std_error,
            estimate.censored_fraction
        );
        results.push(PointEstimate { x: x.clone(), estimate });
    }

    report::write_text(out, "estimate.csv", &report::estimate_csv(&results))?;
    let rep = EstimateReport {
        config: cfg.clone(),
        seed: cfg.mc.seed,
        results,
    };
    let path = report::write_json(out, "estimate.json", &rep)?;
    println!("wrote {} and estimate.csv", path.display());
    Ok(0)
}

pub fn run_pde(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    let prob = build_problem(cfg)?;
    let functional = build_functional(cfg)?;
    let solution = solve(cfg, &prob, &functional)?;

    let mut at_points = Vec::new();
    if let Some(points) = &cfg.points {
        for x in points {
            at_points.push(PointValue {
                x: x.clone(),
                value: solution.value_at(x)?,
            });
        }
    }
    for pv in &at_points {
        println!("u([{}]) = {:.8}", report::join_coords(&pv.x), pv.value);
    }
    println!(
        "residual = {:.3e} after {} policy iterations on {} nodes",
        solution.residual,
        solution.iterations,
        solution.grid.len()
    );

    report::write_text(out, "pde.csv", &pde_csv(&solution))?;
    let rep = PdeReport {
        config: cfg.clone(),
        seed: cfg.mc.seed,
        mode: match solution.mode {
            Mode::Upper => "upper".into(),
            Mode::Lower => "lower".into(),
        },
        nodes_per_axis: cfg.pde.nodes,
        residual: solution.residual,
        iterations: solution.iterations,
        shape: solution.grid.shape.clone(),
        origin: solution.grid.origin.clone(),
        spacing: solution.grid.h.clone(),
        values: solution.values.clone(),
        at_points,
    };
    let path = report::write_json(out, "pde.json", &rep)?;
    println!("wrote {} and pde.csv", path.display());
    Ok(0)
}

/// Nodal values along the grid: everything in one dimension, the middle
/// row in two.
fn pde_csv(solution: &PdeSolution) -> String {
    let g = &solution.grid;
    let mut out = String::new();
    if g.dim == 1 {
        out.push_str("x,value\n");
        for idx in 0..g.len() {
            out.push_str(&format!("{},{}\n", g.point(idx)[0], solution.values[idx]));
        }
    } else {
        out.push_str("x1,x2,value\n");
        let mid = g.shape[1] / 2;
        for ix in 0..g.shape[0] {
            let idx = g.index(&[ix, mid]);
            let p = g.point(idx);
            out.push_str(&format!("{},{},{}\n", p[0], p[1], solution.values[idx]));
        }
    }
    out
}

pub fn run_bounds(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    let prob = build_problem(cfg)?;
    let x0 = &config::points(cfg)?[0];
    let mc = build_mc(cfg);

    let model_bounds = prob.model.estimate_bounds(&prob.domain, 64)?;
    let ell = prob
        .theta
        .require_uniformly_elliptic()
        .map_err(|e| CliError::Config(format!("theta: {e}")))?;
    let lyapunov = montecarlo::lyapunov_bounds(&model_bounds, &ell, &prob.domain)?;
    let (tau, tau_sq) =
        montecarlo::estimate_exit_moments(&prob.model, &prob.theta, &prob.domain, &[], x0, &mc)?;

    let checks = vec![
        CheckRecord::below(
            "exit_time_mean_bound".into(),
            lyapunov.c_tau,
            tau.value,
            0.0,
            format!("family-max mean exit time from [{}]", report::join_coords(x0)),
        ),
        CheckRecord::below(
            "exit_time_second_moment_bound".into(),
            lyapunov.c_tau_sq,
            tau_sq.value,
            0.0,
            format!("family-max second moment from [{}]", report::join_coords(x0)),
        ),
    ];
    let all_pass = checks.iter().all(|c| c.pass);
    for c in &checks {
        println!(
            "{}: estimate {:.6} vs bound {:.6} -> {}",
            c.check,
            c.estimate,
            c.target,
            if c.pass { "PASS" } else { "FAIL" }
        );
    }

    let rep = BoundsReport {
        config: cfg.clone(),
        seed: cfg.mc.seed,
        model_bounds: ModelBoundsOut {
            c_b: model_bounds.c_b,
            c_sigma: model_bounds.c_sigma,
            lambda: model_bounds.lambda,
        },
        ellipticity: EllipticityOut {
            sigma_low_sq: ell.sigma_low_sq,
            sigma_high_sq: ell.sigma_high_sq,
            beta: ell.beta,
        },
        lyapunov,
        empirical: EmpiricalMoments {
            x: x0.clone(),
            tau_mean: tau.value,
            tau_mean_se: tau.std_error,
            tau_sq_mean: tau_sq.value,
            tau_sq_mean_se: tau_sq.std_error,
        },
        checks,
        all_pass,
    };
    let path = report::write_json(out, "bounds.json", &rep)?;
    println!("wrote {}", path.display());
    Ok(if all_pass { 0 } else { 5 })
}

pub fn run_verify(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    let specs = match &cfg.verify {
        Some(v) if !v.checks.is_empty() => &v.checks,
        _ => {
            return Err(CliError::Config(
                "verify.checks: at least one check is required".into(),
            ))
        }
    };
    let prob = build_problem(cfg)?;
    let mc = build_mc(cfg);

    let mut checks = Vec::new();
    for spec in specs {
        run_check(cfg, &prob, &mc, spec, &mut checks)?;
    }
    let all_pass = checks.iter().all(|c| c.pass);
    for c in &checks {
        println!(
            "{}: estimate {:.6} target {:.6} tolerance {:.2e} -> {}",
            c.check,
            c.estimate,
            c.target,
            c.tolerance,
            if c.pass { "PASS" } else { "FAIL" }
        );
    }

    let rep = VerifyReport {
        config: cfg.clone(),
        seed: cfg.mc.seed,
        checks,
        all_pass,
    };
    let path = report::write_json(out, "verify.json", &rep)?;
    println!("wrote {}", path.display());
    Ok(if all_pass { 0 } else { 5 })
}

fn run_check(
    cfg: &RunConfig,
    prob: &Problem,
    mc: &McConfig,
    spec: &CheckSpec,
    out: &mut Vec<CheckRecord>,
) -> Result<(), CliError> {
    match spec {
        CheckSpec::Gmartingale { a, p, t } => {
            let (est, target) = montecarlo::gmartingale_check(&prob.theta, a, p, *t, mc)?;
            let tol = (3.0 * est.std_error).max(0.02 * target.abs());
            out.push(CheckRecord::near(
                format!("gmartingale t={t}"),
                target,
                est.value,
                tol,
                format!("A={a:?}, p={p:?}; se {:.3e}", est.std_error),
            ));
        }
        CheckSpec::IntegralBound { t } => {
            let (lhs, rhs) = montecarlo::check_integral_bound(&prob.theta, *t, mc)?;
            out.push(CheckRecord::below(
                format!("integral_bound t={t}"),
                rhs,
                lhs,
                0.0,
                "family-max second moment of the first driver coordinate".into(),
            ));
            // The same estimate against its closed form at the worst vertex:
            // a11 T + mu1^2 T^2 with variance 2 a11^2 T^2 + 4 a11 mu1^2 T^3.
            let mut closed = f64::NEG_INFINITY;
            let mut var = 0.0;
            for v in prob.theta.vertices() {
                let d = prob.theta.dim();
                let a11: f64 = (0..d).map(|k| v.gamma[k] * v.gamma[k]).sum();
                let m1 = v.mu[0];
                let value = a11 * t + m1 * m1 * t * t;
                if value > closed {
                    closed = value;
                    var = 2.0 * a11 * a11 * t * t + 4.0 * a11 * m1 * m1 * t * t * t;
                }
            }
            let se = (var / mc.n_paths as f64).sqrt();
            out.push(CheckRecord::near(
                format!("integral_bound_closed_form t={t}"),
                closed,
                lhs,
                3.0 * se + 1e-12,
                format!("analytic se {se:.3e}"),
            ));
        }
        CheckSpec::Dpp { erode_fraction } => {
            let functional = build_functional(cfg)?;
            let policies = build_policies(cfg, prob)?;
            let x0 = &config::points(cfg)?[0];
            let eps = erode_fraction * prob.domain.diameter();
            let inner = match prob.domain.erode(eps) {
                Ok(d) => Some(d),
                Err(GeometryError::EmptyErosion { .. }) => None,
                Err(e) => return Err(CliError::Config(format!("dpp: {e}"))),
            };
            let rep = montecarlo::dpp_check(
                &prob.model,
                &prob.theta,
                &prob.domain,
                inner.as_ref(),
                &functional,
                &policies,
                x0,
                mc,
            )?;
            out.push(CheckRecord::below(
                format!("dpp erode={erode_fraction}"),
                3.0 * rep.combined_se,
                rep.residual,
                0.0,
                format!(
                    "direct {:.6} vs composed {:.6}; combined se {:.3e}",
                    rep.direct, rep.composed, rep.combined_se
                ),
            ));
        }
        CheckSpec::ExitGap { dt_list, threshold } => {
            let x0 = &config::points(cfg)?[0];
            let table =
                montecarlo::exit_time_gap(&prob.model, &prob.theta, &prob.domain, x0, dt_list, mc)?;
            out.push(ladder_record("exit_gap", &table, *threshold));
        }
        CheckSpec::BoundaryDecay { x, dt_list, threshold } => {
            let table = montecarlo::boundary_exit_decay(
                &prob.model,
                &prob.theta,
                &prob.domain,
                x,
                dt_list,
                mc,
            )?;
            out.push(ladder_record("boundary_decay", &table, *threshold));
        }
        CheckSpec::Continuity { points, tolerance } => {
            let functional = build_functional(cfg)?;
            let policies = build_policies(cfg, prob)?;
            let rep = montecarlo::continuity_modulus(
                &prob.model,
                &prob.theta,
                &prob.domain,
                points,
                &functional,
                &policies,
                mc,
            )?;
            let mut worst: f64 = 0.0;
            for w in rep.table.windows(2) {
                worst = worst.max((w[0].1 - w[1].1).abs());
            }
            out.push(CheckRecord::below(
                "continuity".into(),
                *tolerance,
                worst,
                0.0,
                format!(
                    "max adjacent value deviation over {} points; worst ratio {:.4}",
                    rep.table.len(),
                    rep.max_ratio
                ),
            ));
        }
        CheckSpec::ItoResidual {
            phi,
            x,
            t,
            dt,
            n_paths,
            tolerance,
        } => {
            let phi = config::parse_expr(phi, prob.model.n);
            let vertices = montecarlo::vertex_policies(&prob.theta);
            let policy = &vertices[0].policy;
            let steps = (t / dt).round().max(1.0) as usize;
            let mut sum_sq = 0.0;
            for i in 0..*n_paths {
                let mut rng = montecarlo::path_rng(mc.seed, i);
                let path =
                    dynamics::simulate_path(&prob.model, policy, x, *dt, steps, &mut rng.noise)?;
                let r = dynamics::ito_residual(&prob.model, &phi, &path);
                if !r.is_finite() {
                    return Err(CliError::Numerical(format!(
                        "expansion defect is non-finite on path {i}"
                    )));
                }
                sum_sq += r * r;
            }
            let rms = (sum_sq / *n_paths as f64).sqrt();
            out.push(CheckRecord::below(
                format!("ito_residual dt={dt}"),
                *tolerance,
                rms,
                0.0,
                format!("rms over {n_paths} paths of horizon {t} under {}", vertices[0].name),
            ));
        }
        CheckSpec::McVsPde { points, tolerance } => {
            let functional = build_functional(cfg)?;
            let solution = solve(cfg, prob, &functional)?;
            let mut policies = montecarlo::vertex_policies(&prob.theta);
            policies.push(NamedPolicy {
                name: "pde-feedback".into(),
                policy: pde::extract_policy(&solution)?,
            });
            for x in points {
                let u_pde = solution.value_at(x)?;
                let est = montecarlo::estimate_value(
                    &prob.model,
                    &prob.theta,
                    &prob.domain,
                    &functional,
                    &policies,
                    x,
                    mc,
                )?;
                out.push(CheckRecord::near(
                    format!("mc_vs_pde x=[{}]", report::join_coords(x)),
                    u_pde,
                    est.value,
                    *tolerance,
                    format!("mc se {:.3e}; argmax {}", est.std_error, est.argmax_policy),
                ));
            }
        }
        CheckSpec::Lyapunov { x } => {
            let model_bounds = prob.model.estimate_bounds(&prob.domain, 64)?;
            let ell = prob
                .theta
                .require_uniformly_elliptic()
                .map_err(|e| CliError::Config(format!("theta: {e}")))?;
            let ly = montecarlo::lyapunov_bounds(&model_bounds, &ell, &prob.domain)?;
            let (tau, tau_sq) = montecarlo::estimate_exit_moments(
                &prob.model,
                &prob.theta,
                &prob.domain,
                &[],
                x,
                mc,
            )?;
            out.push(CheckRecord::below(
                "lyapunov_tau".into(),
                ly.c_tau,
                tau.value,
                0.0,
                format!("alpha {:.4}, c_h {:.4}", ly.alpha, ly.c_h),
            ));
            out.push(CheckRecord::below(
                "lyapunov_tau_sq".into(),
                ly.c_tau_sq,
                tau_sq.value,
                0.0,
                String::new(),
            ));
        }
    }
    Ok(())
}

/// A dt-ladder statistic must shrink as the step refines and end below the
/// threshold. The table arrives coarsest first.
fn ladder_record(kind: &str, table: &[(f64, f64)], threshold: f64) -> CheckRecord {
    let monotone = table.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12);
    let last = table.last().expect("normalized dt_list is nonempty").1;
    let detail = table
        .iter()
        .map(|(dt, v)| format!("dt {dt} -> {v:.6}"))
        .collect::<Vec<_>>()
        .join("; ");
    CheckRecord {
        check: format!("{kind} dt={}", table.last().unwrap().0),
        target: threshold,
        estimate: last,
        tolerance: 0.0,
        pass: monotone && last <= threshold,
        detail,
    }
}
