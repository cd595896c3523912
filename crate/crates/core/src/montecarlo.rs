//! Sublinear-expectation estimators.
//!
//! An upper expectation of a path functional is approximated from below by
//! maximizing the ordinary Monte Carlo mean over a finite family of
//! policies (the constant vertex controls of the uncertainty set, plus any
//! feedback policy the caller supplies, e.g. one extracted from the PDE
//! solver). The reported value is therefore a lower bound for the upper
//! expectation within the implemented family, and the report names the
//! policy attaining it. Lower expectations mirror this with a min.
//!
//! Paths use common random numbers: path `i` always draws from noise
//! stream `2i` and bridge stream `2i + 1` regardless of policy or start
//! point, which makes differences of estimates (continuity, composition
//! checks) far less noisy. Reductions are compensated sums over
//! path-ordered values, so results are bit-stable for a fixed seed and
//! path count no matter how the work is scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{
    simulate_to_exit, ControlPolicy, DynamicsError, ExitSample, ModelBounds, PathRng, SdeModel,
    SimParams,
};
use crate::expr::Expression;
use crate::geometry::{Domain, ExteriorBall, GeometryError, Refinement};
use crate::linalg;
use crate::uncertainty::{EllipticityParams, ThetaError, UncertaintySet};

#[derive(Debug, Error)]
pub enum McError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("every path was censored at the time cap; raise t_max")]
    AllCensored,
    #[error("functional is non-finite: {0}")]
    NonFiniteFunctional(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Theta(#[from] ThetaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Upper,
    Lower,
}

/// Exit-value functional: payoff `phi` at the exit location minus the
/// integral of the running cost `f` up to the exit time.
#[derive(Debug, Clone)]
pub struct Functional {
    pub phi: Expression,
    pub f: Expression,
    pub mode: Mode,
}

#[derive(Debug, Clone, Copy)]
pub struct McConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    /// Time cap; `None` defaults to ten times the Lyapunov exit-time bound.
    pub t_max: Option<f64>,
    pub refinement: Refinement,
    /// Bootstrap resamples for the max-of-means bias estimate; 0 disables.
    pub bootstrap: usize,
}

#[derive(Debug, Clone)]
pub struct NamedPolicy {
    pub name: String,
    pub policy: ControlPolicy,
}

/// One tested policy's sample statistics.
#[derive(Debug, Clone, Serialize)]
pub struct PolicyStat {
    pub name: String,
    pub mean: f64,
    pub std_error: f64,
    pub censored_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct McEstimate {
    pub value: f64,
    /// SE of the attaining policy plus the censoring bound: the max of
    /// noisy means is upward biased, so the bar is deliberately generous.
    pub std_error: f64,
    pub n_paths: usize,
    pub per_policy: Vec<PolicyStat>,
    pub argmax_policy: String,
    pub censored_fraction: f64,
    pub censoring_bound: f64,
    /// Bootstrap estimate of the max-of-means bias, when requested.
    pub bootstrap_bias: Option<f64>,
}

/// All constant vertex policies of the uncertainty set.
pub fn vertex_policies(theta: &UncertaintySet) -> Vec<NamedPolicy> {
    theta
        .vertices()
        .into_iter()
        .map(|c| NamedPolicy {
            name: c.describe(),
            policy: ControlPolicy::Constant(c),
        })
        .collect()
}

pub fn path_rng(seed: u64, path_idx: usize) -> PathRng {
    let mut noise = ChaCha8Rng::seed_from_u64(seed);
    noise.set_stream(2 * path_idx as u64);
    let mut bridge = ChaCha8Rng::seed_from_u64(seed);
    bridge.set_stream(2 * path_idx as u64 + 1);
    PathRng { noise, bridge }
}

/// Neumaier-compensated sum: one pass, immune to cancellation between
/// large partials.
fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Mean and standard error with a deterministic floor so error bars never
/// collapse to zero (degenerate samples still carry roundoff uncertainty).
fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = compensated_sum(values) / n as f64;
    let mut se = 0.0;
    if n >= 2 {
        let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = compensated_sum(&sq) / (n - 1) as f64;
        se = (var / n as f64).sqrt();
    }
    let floor = 1e-12 * (1.0 + mean.abs());
    (mean, se.max(floor))
}

fn max_abs_on_closure(e: &Expression, domain: &Domain) -> Result<f64, McError> {
    let mut c: f64 = 0.0;
    for x in domain.sample_closure(256)? {
        let v = e.evaluate(&x);
        if !v.is_finite() {
            return Err(McError::NonFiniteFunctional(format!(
                "`{e}` is non-finite at {x:?}"
            )));
        }
        c = c.max(v.abs());
    }
    Ok(c)
}

fn preconditions(
    theta: &UncertaintySet,
    domain: &Domain,
    x0: &[f64],
) -> Result<EllipticityParams, McError> {
    let ell = theta.ellipticity_params();
    if ell.sigma_low_sq <= 0.0 {
        return Err(McError::Precondition(format!(
            "uncertainty set is degenerate: sigma_low_sq = {}",
            ell.sigma_low_sq
        )));
    }
    if let ExteriorBall::Violated { at } = domain.exterior_ball()? {
        return Err(McError::Precondition(format!(
            "domain violates the exterior-ball condition at {at:?}"
        )));
    }
    if !domain.contains(x0, true)? {
        return Err(McError::Precondition(format!(
            "start point {x0:?} is outside the closed domain"
        )));
    }
    Ok(ell)
}

/// Resolve the time cap: the configured value, or ten times the Lyapunov
/// exit-time bound computed from sampled coefficient bounds.
pub fn resolve_t_max(
    cfg: &McConfig,
    model: &SdeModel,
    theta: &UncertaintySet,
    domain: &Domain,
) -> Result<f64, McError> {
    if let Some(t) = cfg.t_max {
        return Ok(t);
    }
    let bounds = model.estimate_bounds(domain, 256)?;
    let ell = theta.ellipticity_params();
    let lb = lyapunov_bounds(&bounds, &ell, domain)?;
    Ok(10.0 * lb.c_tau)
}

struct PolicyRun {
    values: Vec<f64>,
    censored: usize,
    tau_open_sq: Vec<f64>,
    tau_closed: Vec<f64>,
    tau_closed_sq: Vec<f64>,
    gaps: Vec<f64>,
}

fn run_policy(
    model: &SdeModel,
    domain: &Domain,
    policy: &ControlPolicy,
    x0: &[f64],
    params: &SimParams,
    cost: Option<&Expression>,
    value_of: &(dyn Fn(&ExitSample) -> f64 + Sync),
    n_paths: usize,
    seed: u64,
) -> Result<PolicyRun, McError> {
    let samples: Result<Vec<ExitSample>, DynamicsError> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i);
            simulate_to_exit(model, domain, policy, x0, params, cost, &mut rng)
        })
        .collect();
    let samples = samples?;
    let mut run = PolicyRun {
        values: Vec::with_capacity(n_paths),
        censored: 0,
        tau_open_sq: Vec::with_capacity(n_paths),
        tau_closed: Vec::with_capacity(n_paths),
        tau_closed_sq: Vec::with_capacity(n_paths),
        gaps: Vec::with_capacity(n_paths),
    };
    for s in &samples {
        let v = value_of(s);
        if !v.is_finite() {
            return Err(McError::NonFiniteFunctional(format!(
                "path value is non-finite at exit {:?}",
                s.exit_open
            )));
        }
        run.values.push(v);
        run.censored += s.censored as usize;
        run.tau_open_sq.push(s.tau_open * s.tau_open);
        run.tau_closed.push(s.tau_closed);
        run.tau_closed_sq.push(s.tau_closed * s.tau_closed);
        run.gaps.push(s.tau_closed - s.tau_open);
    }
    Ok(run)
}

fn pick(mode: Mode, stats: &[PolicyStat]) -> usize {
    let mut best = 0;
    for (i, s) in stats.iter().enumerate() {
        let better = match mode {
            Mode::Upper => s.mean > stats[best].mean,
            Mode::Lower => s.mean < stats[best].mean,
        };
        if better {
            best = i;
        }
    }
    best
}

fn bootstrap_bias(mode: Mode, runs: &[PolicyRun], resamples: usize, seed: u64) -> Option<f64> {
    if resamples == 0 || runs.is_empty() {
        return None;
    }
    let n = runs[0].values.len();
    let means: Vec<f64> = runs
        .iter()
        .map(|r| compensated_sum(&r.values) / n as f64)
        .collect();
    let point = match mode {
        Mode::Upper => means.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        Mode::Lower => means.iter().cloned().fold(f64::INFINITY, f64::min),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x626f_6f74);
    let mut acc = 0.0;
    for _ in 0..resamples {
        let mut extreme = match mode {
            Mode::Upper => f64::NEG_INFINITY,
            Mode::Lower => f64::INFINITY,
        };
        // One shared index resample across policies keeps the common random
        // numbers coupling.
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        for r in runs {
            let m = idx.iter().map(|&i| r.values[i]).sum::<f64>() / n as f64;
            extreme = match mode {
                Mode::Upper => extreme.max(m),
                Mode::Lower => extreme.min(m),
            };
        }
        acc += extreme;
    }
    Some(acc / resamples as f64 - point)
}

#[allow(clippy::too_many_arguments)]
fn assemble_estimate(
    mode: Mode,
    names: &[String],
    runs: Vec<PolicyRun>,
    n_paths: usize,
    t_max: f64,
    c_phi: f64,
    c_f: f64,
    bootstrap: usize,
    seed: u64,
) -> Result<McEstimate, McError> {
    let stats: Vec<PolicyStat> = names
        .iter()
        .zip(&runs)
        .map(|(name, r)| {
            let (mean, se) = mean_se(&r.values);
            PolicyStat {
                name: name.clone(),
                mean,
                std_error: se,
                censored_fraction: r.censored as f64 / n_paths as f64,
            }
        })
        .collect();
    if stats.iter().all(|s| s.censored_fraction >= 1.0) {
        return Err(McError::AllCensored);
    }
    let best = pick(mode, &stats);
    let run = &runs[best];
    // Censoring bias bound: payoff moved by at most 2 sup|phi| on the
    // censored mass, and the unaccumulated running cost is controlled by
    // the Chebyshev tail E[tau 1_{tau>T}] <= E[tau^2]/T.
    let tail = compensated_sum(&run.tau_open_sq) / n_paths as f64 / t_max;
    let censoring_bound = stats[best].censored_fraction * 2.0 * c_phi + c_f * tail;
    let bias = bootstrap_bias(mode, &runs, bootstrap, seed);
    Ok(McEstimate {
        value: stats[best].mean,
        std_error: stats[best].std_error + censoring_bound,
        n_paths,
        argmax_policy: stats[best].name.clone(),
        censored_fraction: stats[best].censored_fraction,
        censoring_bound,
        per_policy: stats,
        bootstrap_bias: bias,
    })
}

/// Estimate the exit-value functional `phi(X_tau) - int_0^tau f` at `x0`,
/// maximized (or minimized) over the policy family. The exit time is the
/// open-domain exit; `phi` is evaluated at the recorded exit location.
pub fn estimate_value(
    model: &SdeModel,
    theta: &UncertaintySet,
    domain: &Domain,
    functional: &Functional,
    policies: &[NamedPolicy],
    x0: &[f64],
    cfg: &McConfig,
) -> Result<McEstimate, McError> {
    preconditions(theta, domain, x0)?;
    let c_phi = max_abs_on_closure(&functional.phi, domain)?;
    let c_f = max_abs_on_closure(&functional.f, domain)?;
    let owned;
    let policies = if policies.is_empty() {
        owned = vertex_policies(theta);
        &owned
    } else {
        policies
    };
    let t_max = resolve_t_max(cfg, model, theta, domain)?;
    let params = SimParams {
        dt: cfg.dt,
        t_max,
        refinement: cfg.refinement,
    };
    let phi = &functional.phi;
    let value_of = move |s: &ExitSample| phi.evaluate(&s.exit_open) - s.running_cost;
    let mut runs = Vec::with_capacity(policies.len());
    for p in policies {
        runs.push(run_policy(
            model,
            domain,
            &p.policy,
            x0,
            &params,
            Some(&functional.f),
            &value_of,
            cfg.n_paths,
            cfg.seed,
        )?);
    }
    let names: Vec<String> = policies.iter().map(|p| p.name.clone()).collect();
    assemble_estimate(
        functional.mode,
        &names,
        runs,
        cfg.n_paths,
        t_max,
        c_phi,
        c_f,
        cfg.bootstrap,
        cfg.seed,
    )
}

/// Family-max estimates of the closure exit time's first two moments.
pub fn estimate_exit_moments(
    model: &SdeModel,
    theta: &UncertaintySet,
    domain: &Domain,
    policies: &[NamedPolicy],
    x0: &[f64],
    cfg: &McConfig,
) -> Result<(McEstimate, McEstimate), McError> {
    preconditions(theta, domain, x0)?;
    let owned;
    let policies = if policies.is_empty() {
        owned = vertex_policies(theta);
        &owned
    } else {
        policies
    };
    let t_max = resolve_t_max(cfg, model, theta, domain)?;
    let params = SimParams {
        dt: cfg.dt,
        t_max,
        refinement: cfg.refinement,
    };
    let names: Vec<String> = policies.iter().map(|p| p.name.clone()).collect();
    let mut tau_runs = Vec::with_capacity(policies.len());
    let mut tau_sq_runs = Vec::with_capacity(policies.len());
    for p in policies {
        let run = run_policy(
            model,
            domain,
            &p.policy,
            x0,
            &params,
            None,
            &|s: &ExitSample| s.tau_closed,
            cfg.n_paths,
            cfg.seed,
        )?;
        // Same paths, second moment: reuse the recorded tau values.
        let sq_run = PolicyRun {
            values: run.tau_closed_sq.clone(),
            censored: run.censored,
            tau_open_sq: run.tau_open_sq.clone(),
            tau_closed: run.tau_closed.clone(),
            tau_closed_sq: run.tau_closed_sq.clone(),
            gaps: run.gaps.clone(),
        };
        tau_runs.push(run);
        tau_sq_runs.push(sq_run);
    }
    // Tail control for the moments themselves: E[tau 1_{tau>T}] <= E[tau^2]/T
    // and E[tau^2 1_{tau>T}] <= E[tau^3]/T, with capped empirical moments.
    let tau_est = assemble_moment(&names, tau_runs, cfg, t_max, 2)?;
    let tau_sq_est = assemble_moment(&names, tau_sq_runs, cfg, t_max, 3)?;
    Ok((tau_est, tau_sq_est))
}

fn assemble_moment(
    names: &[String],
    runs: Vec<PolicyRun>,
    cfg: &McConfig,
    t_max: f64,
    tail_power: u32,
) -> Result<McEstimate, McError> {
    let n = cfg.n_paths;
    let stats: Vec<PolicyStat> = names
        .iter()
        .zip(&runs)
        .map(|(name, r)| {
            let (mean, se) = mean_se(&r.values);
            PolicyStat {
                name: name.clone(),
                mean,
                std_error: se,
                censored_fraction: r.censored as f64 / n as f64,
            }
        })
        .collect();
    if stats.iter().all(|s| s.censored_fraction >= 1.0) {
        return Err(McError::AllCensored);
    }
    let best = pick(Mode::Upper, &stats);
    let run = &runs[best];
    let tail_moment: Vec<f64> = run
        .tau_closed
        .iter()
        .map(|&t| t.powi(tail_power as i32))
        .collect();
    let censoring_bound = compensated_sum(&tail_moment) / n as f64 / t_max;
    let bias = bootstrap_bias(Mode::Upper, &runs, cfg.bootstrap, cfg.seed);
    Ok(McEstimate {
        value: stats[best].mean,
        std_error: stats[best].std_error + censoring_bound,
        n_paths: n,
        argmax_policy: stats[best].name.clone(),
        censored_fraction: stats[best].censored_fraction,
        censoring_bound,
        per_policy: stats,
        bootstrap_bias: bias,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LyapunovBounds {
    pub alpha: f64,
    pub a_coeff: f64,
    pub c_h: f64,
    pub c_tau: f64,
    pub c_tau_sq: f64,
}

/// Exit-time moment bounds from the exponential test function
/// `h(y) = A exp(alpha y_1)`.
///
/// `alpha` is chosen so that the drift-dominating quadratic
/// `q(alpha) = sl * lam * alpha^2 - 2 alpha (C_b + beta C_sigma)` equals
/// `2 alpha` exactly: `alpha = (2 (C_b + beta C_sigma) + 2) / (sl * lam)`.
/// `A` then makes `A e^{alpha y1min} q / 2 = 1` at the low end of the first
/// coordinate's range, giving `C_h = sup h = A e^{alpha y1max}` in the
/// numerically stable difference form, and the chained moment bounds
/// `E[tau] <= C_tau = 2 C_h` and `E[tau^2] <= 2 C_h C_tau`.
pub fn lyapunov_bounds(
    bounds: &ModelBounds,
    ell: &EllipticityParams,
    domain: &Domain,
) -> Result<LyapunovBounds, McError> {
    let sl = ell.sigma_low_sq;
    let lam = bounds.lambda;
    if !(sl > 0.0 && lam > 0.0) {
        return Err(McError::Precondition(format!(
            "Lyapunov bounds need sigma_low_sq * lambda > 0, got {sl} * {lam}"
        )));
    }
    let drift = bounds.c_b + ell.beta * bounds.c_sigma;
    let alpha = (2.0 * drift + 2.0) / (sl * lam);
    // q(alpha) = 2 alpha by construction; keep the general expression so the
    // defining inequality can be re-evaluated directly.
    let q = sl * lam * alpha * alpha - 2.0 * alpha * drift;
    let (lo, hi) = domain.bounding_box();
    let (y1min, y1max) = (lo[0], hi[0]);
    let a_coeff = 2.0 / (q * (alpha * y1min).exp());
    let c_h = (2.0 / q) * (alpha * (y1max - y1min)).exp();
    let c_tau = 2.0 * c_h;
    let c_tau_sq = 2.0 * c_h * c_tau;
    if !c_tau_sq.is_finite() {
        return Err(McError::Precondition(
            "Lyapunov bounds overflow on this domain; the moment bounds are vacuous".into(),
        ));
    }
    Ok(LyapunovBounds {
        alpha,
        a_coeff,
        c_h,
        c_tau,
        c_tau_sq,
    })
}

/// Sample the driver identity: the mean of
/// `0.5 <A, <B>_t> + <p, B_t>` under the worst vertex control equals
/// `G(A, p) t`. Constant controls make `B_t` exactly Gaussian, so no time
/// stepping is involved.
pub fn gmartingale_check(
    theta: &UncertaintySet,
    a: &[f64],
    p: &[f64],
    t: f64,
    cfg: &McConfig,
) -> Result<(McEstimate, f64), McError> {
    if t <= 0.0 {
        return Err(McError::Precondition(format!("horizon must be positive, got {t}")));
    }
    let d = theta.dim();
    if a.len() != d * d || p.len() != d {
        return Err(McError::Precondition(format!(
            "shape mismatch: A is {}, p is {}, driver dimension is {d}",
            a.len(),
            p.len()
        )));
    }
    let target = theta.eval_g(a, p)? * t;
    let n = cfg.n_paths;
    // One shared normal vector per sample: common random numbers across
    // vertices.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    let draws: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let sq_t = t.sqrt();
    let vertices = theta.vertices();
    let mut names = Vec::with_capacity(vertices.len());
    let mut runs = Vec::with_capacity(vertices.len());
    for v in &vertices {
        let gram = v.gram();
        let qv = 0.5 * linalg::frob(a, &gram) * t;
        let values: Vec<f64> = draws
            .iter()
            .map(|xi| {
                let gx = linalg::mat_vec(&v.gamma, d, d, xi);
                let bt: Vec<f64> = gx
                    .iter()
                    .zip(&v.mu)
                    .map(|(g, m)| g * sq_t + m * t)
                    .collect();
                qv + linalg::dot(p, &bt)
            })
            .collect();
        names.push(v.describe());
        runs.push(PolicyRun {
            values,
            censored: 0,
            tau_open_sq: vec![0.0; n],
            tau_closed: vec![0.0; n],
            tau_closed_sq: vec![0.0; n],
            gaps: vec![0.0; n],
        });
    }
    let est = assemble_estimate(Mode::Upper, &names, runs, n, 1.0, 0.0, 0.0, cfg.bootstrap, cfg.seed)?;
    Ok((est, target))
}

/// Sampled instance of the moment inequality for driver integrals with unit
/// integrand: the family-max of `E[(B_T)_1^2]` against the explicit bound
/// `2 (sigma_high_sq + beta^2 T) T`.
pub fn check_integral_bound(
    theta: &UncertaintySet,
    t: f64,
    cfg: &McConfig,
) -> Result<(f64, f64), McError> {
    if t <= 0.0 {
        return Err(McError::Precondition(format!("horizon must be positive, got {t}")));
    }
    let ell = theta.ellipticity_params();
    let rhs = 2.0 * (ell.sigma_high_sq + ell.beta * ell.beta * t) * t;
    let d = theta.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    let n = cfg.n_paths;
    let sq_t = t.sqrt();
    let mut lhs = f64::NEG_INFINITY;
    let draws: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    for v in theta.vertices() {
        let values: Vec<f64> = draws
            .iter()
            .map(|xi| {
                let gx = linalg::mat_vec(&v.gamma, d, d, xi);
                let b1 = gx[0] * sq_t + v.mu[0] * t;
                b1 * b1
            })
            .collect();
        lhs = lhs.max(compensated_sum(&values) / n as f64);
    }
    Ok((lhs, rhs))
}

#[derive(Debug, Clone, Serialize)]
pub struct DppReport {
    pub direct: f64,
    pub direct_se: f64,
    pub composed: f64,
    pub composed_se: f64,
    pub residual: f64,
    pub combined_se: f64,
}

/// Composition (dynamic-programming) check: the value estimated directly at
/// `x0` against the value composed through the exit from `inner`, where the
/// continuation value is a per-point table on the inner boundary. `None`
/// for `inner` is the degenerate zero-time shortcut with residual zero.
#[allow(clippy::too_many_arguments)]
pub fn dpp_check(
    model: &SdeModel,
    theta: &UncertaintySet,
    domain: &Domain,
    inner: Option<&Domain>,
    functional: &Functional,
    policies: &[NamedPolicy],
    x0: &[f64],
    cfg: &McConfig,
) -> Result<DppReport, McError> {
    let direct = estimate_value(model, theta, domain, functional, policies, x0, cfg)?;
    let inner = match inner {
        None => {
            // Degenerate inner region: the composition is the identity.
            return Ok(DppReport {
                direct: direct.value,
                direct_se: direct.std_error,
                composed: direct.value,
                composed_se: direct.std_error,
                residual: 0.0,
                combined_se: 2.0 * direct.std_error,
            });
        }
        Some(q) => q,
    };
    if !inner.contains(x0, false)? {
        return Err(McError::Precondition(format!(
            "start point {x0:?} is not inside the inner domain"
        )));
    }
    // Continuation table: the value function re-estimated at each inner
    // boundary point (per-point Monte Carlo with the same seed).
    let nodes = inner.boundary_points(8)?;
    let mut table = Vec::with_capacity(nodes.len());
    let mut table_se: f64 = 0.0;
    for z in &nodes {
        let est = estimate_value(model, theta, domain, functional, policies, z, cfg)?;
        table_se = table_se.max(est.std_error);
        table.push((z.clone(), est.value));
    }
    if table.is_empty() {
        return Err(McError::Precondition("empty continuation value table".into()));
    }

    // Composed estimate: run to the inner exit, pay the running cost, and
    // close with the nearest table value.
    let owned;
    let policies = if policies.is_empty() {
        owned = vertex_policies(theta);
        &owned
    } else {
        policies
    };
    let t_max = resolve_t_max(cfg, model, theta, domain)?;
    let params = SimParams {
        dt: cfg.dt,
        t_max,
        refinement: cfg.refinement,
    };
    let lookup = move |s: &ExitSample| {
        let mut best = f64::INFINITY;
        let mut val = 0.0;
        for (z, v) in &table {
            let d2: f64 = z
                .iter()
                .zip(&s.exit_open)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d2 < best {
                best = d2;
                val = *v;
            }
        }
        val - s.running_cost
    };
    let names: Vec<String> = policies.iter().map(|p| p.name.clone()).collect();
    let mut runs = Vec::with_capacity(policies.len());
    for p in policies {
        runs.push(run_policy(
            model,
            inner,
            &p.policy,
            x0,
            &params,
            Some(&functional.f),
            &lookup,
            cfg.n_paths,
            cfg.seed,
        )?);
    }
    let c_phi = max_abs_on_closure(&functional.phi, domain)?;
    let c_f = max_abs_on_closure(&functional.f, domain)?;
    let composed = assemble_estimate(
        functional.mode,
        &names,
        runs,
        cfg.n_paths,
        t_max,
        c_phi,
        c_f,
        cfg.bootstrap,
        cfg.seed,
    )?;
    let residual = (direct.value - composed.value).abs();
    let combined_se = direct.std_error + composed.std_error + table_se;
    Ok(DppReport {
        direct: direct.value,
        direct_se: direct.std_error,
        composed: composed.value,
        composed_se: composed.std_error,
        residual,
        combined_se,
    })
}

/// Mean gap between the closure exit and the open exit, per step size,
/// maximized over the vertex policies. The gap is a discretization artifact
/// and should shrink with `dt`.
pub fn exit_time_gap(
    model: &SdeModel,
    theta: &UncertaintySet,
    domain: &Domain,
    x0: &[f64],
    dt_list: &[f64],
    cfg: &McConfig,
) -> Result<Vec<(f64, f64)>, McError> {
    preconditions(theta, domain, x0)?;
    let policies = vertex_policies(theta);
    let t_max = resolve_t_max(cfg, model, theta, domain)?;
    let mut out = Vec::with_capacity(dt_list.len());
    for &dt in dt_list {
        let params = SimParams {
            dt,
            t_max,
            refinement: cfg.refinement,
        };
        let mut worst = f64::NEG_INFINITY;
        for p in &policies {
            let run = run_policy(
                model,
                domain,
                &p.policy,
                x0,
                &params,
                None,
                &|s: &ExitSample| s.tau_closed - s.tau_open,
                cfg.n_paths,
                cfg.seed,
            )?;
            worst = worst.max(compensated_sum(&run.gaps) / cfg.n_paths as f64);
        }
        out.push((dt, worst));
    }
    Ok(out)
}

/// From a boundary start the closure exit time should vanish; this reports
/// the family-max of `E[min(tau_closed, 1)]` per step size, which should
/// decrease as the grid refines.
pub fn boundary_exit_decay(
    model: &SdeModel,
    theta: &UncertaintySet,
    domain: &Domain,
    x_boundary: &[f64],
    dt_list: &[f64],
    cfg: &McConfig,
) -> Result<Vec<(f64, f64)>, McError> {
    let sd = domain.signed_distance(x_boundary)?;
    if sd.abs() > 1e-12 {
        return Err(McError::Precondition(format!(
            "{x_boundary:?} is not on the boundary (signed distance {sd:.3e})"
        )));
    }
    let policies = vertex_policies(theta);
    let t_max = resolve_t_max(cfg, model, theta, domain)?;
    let mut out = Vec::with_capacity(dt_list.len());
    for &dt in dt_list {
        let params = SimParams {
            dt,
            t_max,
            refinement: cfg.refinement,
        };
        let mut worst = f64::NEG_INFINITY;
        for p in &policies {
            let run = run_policy(
                model,
                domain,
                &p.policy,
                x_boundary,
                &params,
                None,
                &|s: &ExitSample| s.tau_closed.min(1.0),
                cfg.n_paths,
                cfg.seed,
            )?;
            worst = worst.max(compensated_sum(&run.values) / cfg.n_paths as f64);
        }
        out.push((dt, worst));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuityReport {
    /// `(point, value, std_error)` per requested point.
    pub table: Vec<(Vec<f64>, f64, f64)>,
    /// Max of |u(x_i) - u(x_{i+1})| / |x_i - x_{i+1}| over adjacent pairs
    /// at distinct points.
    pub max_ratio: f64,
}

/// Value estimates along a list of points under common random numbers,
/// with the worst adjacent difference quotient.
pub fn continuity_modulus(
    model: &SdeModel,
    theta: &UncertaintySet,
    domain: &Domain,
    x_list: &[Vec<f64>],
    functional: &Functional,
    policies: &[NamedPolicy],
    cfg: &McConfig,
) -> Result<ContinuityReport, McError> {
    let mut table = Vec::with_capacity(x_list.len());
    for x in x_list {
        let est = estimate_value(model, theta, domain, functional, policies, x, cfg)?;
        table.push((x.clone(), est.value, est.std_error));
    }
    let mut max_ratio: f64 = 0.0;
    for w in table.windows(2) {
        let dx: f64 = w[0]
            .0
            .iter()
            .zip(&w[1].0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if dx > 0.0 {
            max_ratio = max_ratio.max((w[0].1 - w[1].1).abs() / dx);
        }
    }
    Ok(ContinuityReport { table, max_ratio })
}
