//! Run configuration: one JSON file per run, normalized before use so that
//! every report can embed a canonical, re-runnable copy.
//!
//! Normalization parses every coefficient expression and re-renders it in
//! the grammar's canonical form, materializes defaulted blocks, and applies
//! the command-line seed override. It is a fixed point: normalizing a
//! normalized config changes nothing.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use gsde_core::dynamics::SdeModel;
use gsde_core::expr::{self, Expression};
use gsde_core::geometry::{Domain, Refinement};
use gsde_core::montecarlo::{Functional, McConfig, McError, Mode};
use gsde_core::pde::{GridConfig, PdeError};
use gsde_core::uncertainty::{ControlValue, UncertaintySet};

#[derive(Debug)]
pub enum CliError {
    /// Configuration problems: unreadable file, invalid JSON, failed
    /// cross-field validation. Exit code 2.
    Config(String),
    /// Runtime numerical failures: NaN functionals, censored-out runs,
    /// stalled iterations. Exit code 3.
    Numerical(String),
    /// Solver precondition failures: diagonal dominance, exterior-ball
    /// certification. Exit code 4.
    Solver(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Solver(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Solver(m) => write!(f, "solver precondition failure: {m}"),
        }
    }
}

impl From<McError> for CliError {
    fn from(e: McError) -> Self {
        match e {
            McError::Precondition(_) | McError::Geometry(_) | McError::Theta(_) => {
                CliError::Config(e.to_string())
            }
            McError::AllCensored | McError::NonFiniteFunctional(_) | McError::Dynamics(_) => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}

impl From<gsde_core::dynamics::DynamicsError> for CliError {
    fn from(e: gsde_core::dynamics::DynamicsError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<PdeError> for CliError {
    fn from(e: PdeError) -> Self {
        match e {
            PdeError::Precondition(_) | PdeError::DiagonalDominance { .. } => {
                CliError::Solver(e.to_string())
            }
            PdeError::IterationCap { .. }
            | PdeError::LinearSolve(_)
            | PdeError::NonFinite { .. }
            | PdeError::Dynamics(_) => CliError::Numerical(e.to_string()),
            PdeError::OutsideGrid(_) | PdeError::Geometry(_) | PdeError::Theta(_) => {
                CliError::Config(e.to_string())
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub theta: ThetaSpec,
    pub domain: DomainSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functional: Option<FunctionalSpec>,
    /// Evaluation points for estimate/pde runs and the start point for
    /// bounds runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub mc: McSpec,
    #[serde(default)]
    pub pde: PdeSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub dim: usize,
    pub driver_dim: usize,
    pub drift: Vec<String>,
    /// Row-major dim x driver_dim.
    pub sigma: Vec<String>,
    /// Optional driver_dim x driver_dim blocks of dim-vectors for the
    /// quadratic-variation drift.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<Vec<String>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThetaSpec {
    Singleton { gamma: Vec<f64>, mu: Vec<f64> },
    DiagBox {
        sigma_low: f64,
        sigma_high: f64,
        beta: Vec<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Interval { a: f64, b: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    Annulus {
        center: Vec<f64>,
        r_inner: f64,
        r_outer: f64,
    },
    Implicit {
        g: String,
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ModeSpec {
    Upper,
    Lower,
}

impl From<ModeSpec> for Mode {
    fn from(m: ModeSpec) -> Mode {
        match m {
            ModeSpec::Upper => Mode::Upper,
            ModeSpec::Lower => Mode::Lower,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalSpec {
    pub phi: String,
    pub f: String,
    pub mode: ModeSpec,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum RefinementSpec {
    Grid,
    Interpolate,
    Bridge,
}

impl From<RefinementSpec> for Refinement {
    fn from(r: RefinementSpec) -> Refinement {
        match r {
            RefinementSpec::Grid => Refinement::Grid,
            RefinementSpec::Interpolate => Refinement::Interpolate,
            RefinementSpec::Bridge => Refinement::Bridge,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSpec {
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default = "default_refinement")]
    pub refinement: RefinementSpec,
    #[serde(default)]
    pub bootstrap: usize,
    /// Solve the PDE and add its extracted feedback policy to the family.
    #[serde(default)]
    pub include_pde_policy: bool,
    /// Extra constant policies beyond the vertex family.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub policies: Vec<PolicyEntry>,
}

fn default_paths() -> usize {
    10_000
}
fn default_dt() -> f64 {
    1e-3
}
fn default_refinement() -> RefinementSpec {
    RefinementSpec::Bridge
}

impl Default for McSpec {
    fn default() -> Self {
        McSpec {
            n_paths: default_paths(),
            dt: default_dt(),
            seed: 0,
            t_max: None,
            refinement: default_refinement(),
            bootstrap: 0,
            include_pde_policy: false,
            policies: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyEntry {
    pub gamma: Vec<f64>,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeSpec {
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
}

fn default_nodes() -> usize {
    101
}
fn default_tolerance() -> f64 {
    1e-10
}
fn default_iterations() -> usize {
    100
}

impl Default for PdeSpec {
    fn default() -> Self {
        PdeSpec {
            nodes: default_nodes(),
            tolerance: default_tolerance(),
            max_iterations: default_iterations(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    pub checks: Vec<CheckSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckSpec {
    /// Driver identity: sampled mean of 1/2 <A, <B>_t> + <p, B_t> against
    /// G(A, p) t. `a` is row-major driver_dim x driver_dim.
    Gmartingale { a: Vec<f64>, p: Vec<f64>, t: f64 },
    /// Family-max second moment of the first driver coordinate against the
    /// explicit bound, plus its closed form at the worst vertex.
    IntegralBound { t: f64 },
    /// Composition through the exit from an eroded inner domain.
    Dpp {
        #[serde(default = "default_erode")]
        erode_fraction: f64,
    },
    /// Open-vs-closure exit gap across a dt ladder: must shrink.
    ExitGap {
        dt_list: Vec<f64>,
        #[serde(default = "default_gap_threshold")]
        threshold: f64,
    },
    /// Boundary-started capped exit time across a dt ladder: must shrink.
    BoundaryDecay {
        x: Vec<f64>,
        dt_list: Vec<f64>,
        #[serde(default = "default_decay_threshold")]
        threshold: f64,
    },
    /// Worst adjacent value deviation under common random numbers.
    Continuity {
        points: Vec<Vec<f64>>,
        tolerance: f64,
    },
    /// RMS of the pathwise expansion defect of a test function.
    ItoResidual {
        phi: String,
        x: Vec<f64>,
        t: f64,
        dt: f64,
        n_paths: usize,
        tolerance: f64,
    },
    /// Monte Carlo against the solver at the listed points, feedback
    /// policy included.
    McVsPde {
        points: Vec<Vec<f64>>,
        tolerance: f64,
    },
    /// Exit-time moment bounds against their empirical counterparts,
    /// started from `x`.
    Lyapunov { x: Vec<f64> },
}

fn default_erode() -> f64 {
    0.25
}
fn default_gap_threshold() -> f64 {
    0.02
}
fn default_decay_threshold() -> f64 {
    0.05
}

pub fn load(path: &Path, seed_override: Option<u64>) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = seed_override {
        cfg.mc.seed = seed;
    }
    normalize(&mut cfg)?;
    Ok(cfg)
}

/// Canonicalize expressions, then validate cross-field consistency.
/// Idempotent by construction: expression rendering is a parse fixed point
/// and everything else is pure validation.
pub fn normalize(cfg: &mut RunConfig) -> Result<(), CliError> {
    let dim = cfg.model.dim;
    let d = cfg.model.driver_dim;
    if dim == 0 || d == 0 {
        return Err(CliError::Config(
            "model.dim and model.driver_dim must be at least 1".into(),
        ));
    }
    if cfg.model.drift.len() != dim {
        return Err(CliError::Config(format!(
            "model.drift: expected {dim} expressions for dim {dim}, got {}",
            cfg.model.drift.len()
        )));
    }
    if cfg.model.sigma.len() != dim * d {
        return Err(CliError::Config(format!(
            "model.sigma: expected {} expressions ({dim} x {d} row-major), got {}",
            dim * d,
            cfg.model.sigma.len()
        )));
    }
    for (i, s) in cfg.model.drift.iter_mut().enumerate() {
        *s = canonical(s, dim, &format!("model.drift[{i}]"))?;
    }
    for (i, s) in cfg.model.sigma.iter_mut().enumerate() {
        *s = canonical(s, dim, &format!("model.sigma[{i}]"))?;
    }
    if let Some(h) = &mut cfg.model.h {
        if h.len() != d * d {
            return Err(CliError::Config(format!(
                "model.h: expected {} blocks ({d} x {d} row-major), got {}",
                d * d,
                h.len()
            )));
        }
        for (bi, block) in h.iter_mut().enumerate() {
            if block.len() != dim {
                return Err(CliError::Config(format!(
                    "model.h[{bi}]: expected {dim} expressions, got {}",
                    block.len()
                )));
            }
            for (i, s) in block.iter_mut().enumerate() {
                *s = canonical(s, dim, &format!("model.h[{bi}][{i}]"))?;
            }
        }
    }

    match &cfg.theta {
        ThetaSpec::Singleton { gamma, mu } => {
            if gamma.len() != d * d {
                return Err(CliError::Config(format!(
                    "theta.gamma: expected {} entries ({d} x {d}), got {}",
                    d * d,
                    gamma.len()
                )));
            }
            if mu.len() != d {
                return Err(CliError::Config(format!(
                    "theta.mu: expected {d} entries, got {}",
                    mu.len()
                )));
            }
        }
        ThetaSpec::DiagBox { beta, .. } => {
            if beta.len() != d {
                return Err(CliError::Config(format!(
                    "theta.beta: expected {d} entries, got {}",
                    beta.len()
                )));
            }
        }
    }

    let domain_dim = match &mut cfg.domain {
        DomainSpec::Interval { .. } => 1,
        DomainSpec::Box { lo, hi } => {
            if lo.len() != hi.len() {
                return Err(CliError::Config(
                    "domain.lo and domain.hi lengths differ".into(),
                ));
            }
            lo.len()
        }
        DomainSpec::Ball { center, .. } => center.len(),
        DomainSpec::Annulus { center, .. } => center.len(),
        DomainSpec::Implicit { g, lo, hi } => {
            if lo.len() != hi.len() {
                return Err(CliError::Config(
                    "domain.lo and domain.hi lengths differ".into(),
                ));
            }
            *g = canonical(g, lo.len(), "domain.g")?;
            lo.len()
        }
    };
    if domain_dim != dim {
        return Err(CliError::Config(format!(
            "domain: dimension {domain_dim} does not match model.dim {dim}"
        )));
    }

    if let Some(fs) = &mut cfg.functional {
        fs.phi = canonical(&fs.phi, dim, "functional.phi")?;
        fs.f = canonical(&fs.f, dim, "functional.f")?;
    }

    if let Some(points) = &cfg.points {
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(CliError::Config(format!(
                    "points[{i}]: expected {dim} coordinates, got {}",
                    p.len()
                )));
            }
        }
    }

    if !(cfg.mc.dt > 0.0 && cfg.mc.dt.is_finite()) {
        return Err(CliError::Config(format!("mc.dt must be positive, got {}", cfg.mc.dt)));
    }
    if cfg.mc.n_paths == 0 {
        return Err(CliError::Config("mc.n_paths must be at least 1".into()));
    }
    for (i, p) in cfg.mc.policies.iter().enumerate() {
        if p.gamma.len() != d * d || p.mu.len() != d {
            return Err(CliError::Config(format!(
                "mc.policies[{i}]: gamma needs {} entries and mu {d}, got {} and {}",
                d * d,
                p.gamma.len(),
                p.mu.len()
            )));
        }
    }
    if cfg.pde.nodes < 3 {
        return Err(CliError::Config("pde.nodes must be at least 3".into()));
    }

    if let Some(v) = &mut cfg.verify {
        for (i, check) in v.checks.iter_mut().enumerate() {
            let path = format!("verify.checks[{i}]");
            match check {
                CheckSpec::Gmartingale { a, p, .. } => {
                    if a.len() != d * d {
                        return Err(CliError::Config(format!(
                            "{path}.a: expected {} entries ({d} x {d}), got {}",
                            d * d,
                            a.len()
                        )));
                    }
                    if p.len() != d {
                        return Err(CliError::Config(format!(
                            "{path}.p: expected {d} entries, got {}",
                            p.len()
                        )));
                    }
                }
                CheckSpec::ExitGap { dt_list, .. } => {
                    validate_dt_list(dt_list, &path)?;
                }
                CheckSpec::BoundaryDecay { x, dt_list, .. } => {
                    validate_point(x, dim, &format!("{path}.x"))?;
                    validate_dt_list(dt_list, &path)?;
                }
                CheckSpec::Continuity { points, .. } => {
                    if points.len() < 2 {
                        return Err(CliError::Config(format!(
                            "{path}.points: continuity needs at least 2 points"
                        )));
                    }
                    for (j, p) in points.iter().enumerate() {
                        validate_point(p, dim, &format!("{path}.points[{j}]"))?;
                    }
                }
                CheckSpec::McVsPde { points, .. } => {
                    for (j, p) in points.iter().enumerate() {
                        validate_point(p, dim, &format!("{path}.points[{j}]"))?;
                    }
                }
                CheckSpec::ItoResidual { phi, x, dt, n_paths, t, .. } => {
                    *phi = canonical(phi, dim, &format!("{path}.phi"))?;
                    validate_point(x, dim, &format!("{path}.x"))?;
                    if !(*dt > 0.0) || *n_paths == 0 || !(*t >= *dt) {
                        return Err(CliError::Config(format!(
                            "{path}: needs dt > 0, n_paths >= 1 and t >= dt"
                        )));
                    }
                }
                CheckSpec::Lyapunov { x } => {
                    validate_point(x, dim, &format!("{path}.x"))?;
                }
                CheckSpec::IntegralBound { t } => {
                    if !(*t > 0.0) {
                        return Err(CliError::Config(format!("{path}.t must be positive")));
                    }
                }
                CheckSpec::Dpp { erode_fraction } => {
                    if !(*erode_fraction > 0.0 && *erode_fraction < 0.5) {
                        return Err(CliError::Config(format!(
                            "{path}.erode_fraction must lie in (0, 0.5)"
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

fn canonical(text: &str, dim: usize, path: &str) -> Result<String, CliError> {
    let e = expr::parse(text, dim).map_err(|err| CliError::Config(format!("{path}: {err}")))?;
    Ok(e.to_string())
}

fn validate_point(p: &[f64], dim: usize, path: &str) -> Result<(), CliError> {
    if p.len() != dim {
        return Err(CliError::Config(format!(
            "{path}: expected {dim} coordinates, got {}",
            p.len()
        )));
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Config(format!("{path}: non-finite coordinate")));
    }
    Ok(())
}

fn validate_dt_list(dt_list: &[f64], path: &str) -> Result<(), CliError> {
    if dt_list.is_empty() {
        return Err(CliError::Config(format!("{path}.dt_list must be nonempty")));
    }
    if dt_list.iter().any(|&dt| !(dt > 0.0) || !dt.is_finite()) {
        return Err(CliError::Config(format!(
            "{path}.dt_list entries must be positive"
        )));
    }
    if dt_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(CliError::Config(format!(
            "{path}.dt_list must be strictly decreasing"
        )));
    }
    Ok(())
}

// Builders from validated specs to core objects.

pub fn build_model(cfg: &RunConfig) -> Result<SdeModel, CliError> {
    let dim = cfg.model.dim;
    let parse = |s: &String| expr::parse(s, dim).expect("normalized expression");
    let model = SdeModel {
        n: dim,
        d: cfg.model.driver_dim,
        b: cfg.model.drift.iter().map(parse).collect(),
        sigma: cfg.model.sigma.iter().map(parse).collect(),
        h: cfg
            .model
            .h
            .as_ref()
            .map(|blocks| blocks.iter().map(|b| b.iter().map(parse).collect()).collect()),
    };
    model
        .validate()
        .map_err(|e| CliError::Config(format!("model: {e}")))?;
    Ok(model)
}

pub fn build_theta(cfg: &RunConfig) -> Result<UncertaintySet, CliError> {
    match &cfg.theta {
        ThetaSpec::Singleton { gamma, mu } => {
            let c = ControlValue::new(gamma.clone(), mu.clone())
                .map_err(|e| CliError::Config(format!("theta: {e}")))?;
            UncertaintySet::singleton(c).map_err(|e| CliError::Config(format!("theta: {e}")))
        }
        ThetaSpec::DiagBox {
            sigma_low,
            sigma_high,
            beta,
        } => UncertaintySet::diag_box(*sigma_low, *sigma_high, beta.clone())
            .map_err(|e| CliError::Config(format!("theta: {e}"))),
    }
}

pub fn build_domain(cfg: &RunConfig) -> Result<Domain, CliError> {
    let mk = match &cfg.domain {
        DomainSpec::Interval { a, b } => Domain::interval(*a, *b),
        DomainSpec::Box { lo, hi } => Domain::cuboid(lo.clone(), hi.clone()),
        DomainSpec::Ball { center, radius } => Domain::ball(center.clone(), *radius),
        DomainSpec::Annulus {
            center,
            r_inner,
            r_outer,
        } => Domain::annulus(center.clone(), *r_inner, *r_outer),
        DomainSpec::Implicit { g, lo, hi } => {
            let e = expr::parse(g, lo.len()).expect("normalized expression");
            Domain::implicit(e, lo.clone(), hi.clone())
        }
    };
    mk.map_err(|e| CliError::Config(format!("domain: {e}")))
}

pub fn build_functional(cfg: &RunConfig) -> Result<Functional, CliError> {
    let spec = cfg
        .functional
        .as_ref()
        .ok_or_else(|| CliError::Config("functional: required for this run".into()))?;
    let dim = cfg.model.dim;
    Ok(Functional {
        phi: expr::parse(&spec.phi, dim).expect("normalized expression"),
        f: expr::parse(&spec.f, dim).expect("normalized expression"),
        mode: spec.mode.into(),
    })
}

pub fn build_mc(cfg: &RunConfig) -> McConfig {
    McConfig {
        n_paths: cfg.mc.n_paths,
        dt: cfg.mc.dt,
        seed: cfg.mc.seed,
        t_max: cfg.mc.t_max,
        refinement: cfg.mc.refinement.into(),
        bootstrap: cfg.mc.bootstrap,
    }
}

pub fn build_grid_config(cfg: &RunConfig) -> GridConfig {
    GridConfig {
        nodes_per_axis: cfg.pde.nodes,
        tolerance: cfg.pde.tolerance,
        max_iterations: cfg.pde.max_iterations,
    }
}

pub fn points(cfg: &RunConfig) -> Result<&[Vec<f64>], CliError> {
    match &cfg.points {
        Some(p) if !p.is_empty() => Ok(p),
        _ => Err(CliError::Config(
            "points: at least one evaluation point is required for this run".into(),
        )),
    }
}

/// Re-parse a normalized expression string.
pub fn parse_expr(text: &str, dim: usize) -> Expression {
    expr::parse(text, dim).expect("normalized expression")
}
