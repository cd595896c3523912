//! Monotone finite-difference solver for the fully nonlinear elliptic
//! Dirichlet problem
//!
//! ```text
//!   max over vertex controls of [ L^(gamma,mu) u - f ] = 0  in Q,
//!   u = phi on the boundary  (min instead of max in lower mode),
//! ```
//!
//! where `L^(gamma,mu) u = 1/2 tr(a D^2 u) + <v, Du>` with the controlled
//! coefficients `a = sigma Gamma sigma^T` and
//! `v = b + sum h_ij Gamma_ij + sigma mu` shared with the path simulator.
//!
//! Discretization: central second differences for the diffusion block, a
//! 7-point stencil for the cross derivative chosen by the sign of `a12`
//! (monotone only under diagonal dominance, which is checked up front and
//! is a hard error otherwise), and first differences for the drift that
//! switch per node and per control between central (when the diffusion
//! weight absorbs it, keeping second order) and upwind (unconditionally
//! monotone). Howard policy iteration freezes the per-node control, solves
//! the linear problem directly (1-D) or by relaxation (2-D), then
//! re-optimizes the control per node; with a finite vertex family and a
//! monotone scheme the value sequence is monotone, so the iteration cap
//! only guards floating-point pathologies.

use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{ControlPolicy, DynamicsError, GridAxis, GridPolicy, SdeModel};
use crate::expr::Expression;
use crate::geometry::{Domain, ExteriorBall, GeometryError};
use crate::montecarlo::Mode;
use crate::uncertainty::{ControlValue, ThetaError, UncertaintySet};

#[derive(Debug, Error)]
pub enum PdeError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("diffusion matrix is not diagonally dominant at node {node:?} under control {control}: {detail}; rotate coordinates or refine the control set")]
    DiagonalDominance {
        node: Vec<f64>,
        control: String,
        detail: String,
    },
    #[error("policy iteration did not converge within {cap} rounds")]
    IterationCap { cap: usize },
    #[error("linear sub-solve failed: {0}")]
    LinearSolve(String),
    #[error("{what} is non-finite at {at:?}")]
    NonFinite { what: String, at: Vec<f64> },
    #[error("point {0:?} lies outside the grid")]
    OutsideGrid(Vec<f64>),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Theta(#[from] ThetaError),
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GridConfig {
    pub nodes_per_axis: usize,
    /// Target for the Bellman residual max over interior nodes.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            nodes_per_axis: 101,
            tolerance: 1e-10,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NodeKind {
    Interior,
    /// Outside the open set but inside some interior node's stencil.
    Boundary,
    Exterior,
}

/// Uniform grid over the domain's bounding box. Non-interior nodes carry
/// the Dirichlet value of phi at their boundary projection (first order);
/// every stencil neighbor of an interior node is interior or boundary by
/// construction.
#[derive(Debug, Clone)]
pub struct Grid {
    pub dim: usize,
    pub shape: Vec<usize>,
    pub h: Vec<f64>,
    pub origin: Vec<f64>,
    pub kinds: Vec<NodeKind>,
    /// Dirichlet data per node; 0 at interior nodes.
    pub clamp: Vec<f64>,
    /// Node indices of the interior, in row-major order.
    pub interior: Vec<usize>,
}

impl Grid {
    pub fn build(domain: &Domain, phi: &Expression, nodes_per_axis: usize) -> Result<Grid, PdeError> {
        let dim = domain.dim();
        if dim > 2 {
            return Err(PdeError::Precondition(format!(
                "the solver covers dimensions 1 and 2, domain has {dim}"
            )));
        }
        if nodes_per_axis < 3 {
            return Err(PdeError::Precondition(
                "need at least 3 nodes per axis".into(),
            ));
        }
        if phi.max_var() > dim {
            return Err(PdeError::Precondition(format!(
                "phi references x{} but the domain has dimension {dim}",
                phi.max_var()
            )));
        }
        let (lo, hi) = domain.bounding_box();
        let shape = vec![nodes_per_axis; dim];
        let h: Vec<f64> = (0..dim)
            .map(|k| (hi[k] - lo[k]) / (nodes_per_axis - 1) as f64)
            .collect();
        if h.iter().any(|&s| !(s > 0.0)) {
            return Err(PdeError::Precondition(format!(
                "degenerate bounding box {lo:?}..{hi:?}"
            )));
        }
        let total: usize = shape.iter().product();
        let mut kinds = vec![NodeKind::Exterior; total];
        let mut clamp = vec![0.0; total];
        let mut inside = vec![false; total];
        let grid = Grid {
            dim,
            shape: shape.clone(),
            h,
            origin: lo.clone(),
            kinds: Vec::new(),
            clamp: Vec::new(),
            interior: Vec::new(),
        };
        for idx in 0..total {
            inside[idx] = domain.contains(&grid.point(idx), false)?;
        }
        let mut interior = Vec::new();
        for idx in 0..total {
            if inside[idx] {
                kinds[idx] = NodeKind::Interior;
                interior.push(idx);
            }
        }
        if interior.is_empty() {
            return Err(PdeError::Precondition(
                "no interior grid nodes; refine the grid".into(),
            ));
        }
        // Non-interior nodes adjacent (including diagonals) to an interior
        // node participate in stencils.
        for idx in 0..total {
            if inside[idx] {
                continue;
            }
            let c = grid.coords(idx);
            let mut adjacent = false;
            grid.for_neighbors(&c, |nidx| {
                adjacent |= inside[nidx];
            });
            if adjacent {
                kinds[idx] = NodeKind::Boundary;
            }
            let x = grid.point(idx);
            let p = domain.project_to_boundary(&x)?;
            let v = phi.evaluate(&p);
            if !v.is_finite() {
                return Err(PdeError::NonFinite {
                    what: "phi".into(),
                    at: p,
                });
            }
            clamp[idx] = v;
        }
        Ok(Grid {
            kinds,
            clamp,
            interior,
            ..grid
        })
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.coords(idx)
            .iter()
            .enumerate()
            .map(|(k, &i)| self.origin[k] + i as f64 * self.h[k])
            .collect()
    }

    pub fn coords(&self, idx: usize) -> Vec<usize> {
        match self.dim {
            1 => vec![idx],
            _ => vec![idx / self.shape[1], idx % self.shape[1]],
        }
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        match self.dim {
            1 => coords[0],
            _ => coords[0] * self.shape[1] + coords[1],
        }
    }

    fn for_neighbors(&self, c: &[usize], mut visit: impl FnMut(usize)) {
        match self.dim {
            1 => {
                if c[0] > 0 {
                    visit(c[0] - 1);
                }
                if c[0] + 1 < self.shape[0] {
                    visit(c[0] + 1);
                }
            }
            _ => {
                for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        if di == 0 && dj == 0 {
                            continue;
                        }
                        let i = c[0] as i64 + di;
                        let j = c[1] as i64 + dj;
                        if i >= 0
                            && j >= 0
                            && (i as usize) < self.shape[0]
                            && (j as usize) < self.shape[1]
                        {
                            visit(self.index(&[i as usize, j as usize]));
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct PdeSolution {
    pub grid: Grid,
    /// Value per node; non-interior nodes hold their Dirichlet clamp.
    pub values: Vec<f64>,
    /// Optimal control per interior node, parallel to `grid.interior`.
    pub policy: Vec<ControlValue>,
    /// Bellman residual: max over interior nodes of |extremal operator - f|.
    pub residual: f64,
    pub iterations: usize,
    pub mode: Mode,
    pub tolerance: f64,
}

impl PdeSolution {
    /// Multilinear interpolation of the nodal values. Non-interior nodes
    /// carry clamped Dirichlet data, so cells straddling the boundary
    /// interpolate between interior values and boundary data.
    pub fn value_at(&self, x: &[f64]) -> Result<f64, PdeError> {
        let g = &self.grid;
        if x.len() != g.dim {
            return Err(PdeError::OutsideGrid(x.to_vec()));
        }
        let mut cell = Vec::with_capacity(g.dim);
        let mut frac = Vec::with_capacity(g.dim);
        for k in 0..g.dim {
            let t = (x[k] - g.origin[k]) / g.h[k];
            let span = (g.shape[k] - 1) as f64;
            if t < -1e-9 || t > span + 1e-9 {
                return Err(PdeError::OutsideGrid(x.to_vec()));
            }
            let i = (t.floor().max(0.0) as usize).min(g.shape[k] - 2);
            cell.push(i);
            frac.push((t - i as f64).clamp(0.0, 1.0));
        }
        match g.dim {
            1 => {
                let v0 = self.values[cell[0]];
                let v1 = self.values[cell[0] + 1];
                Ok(v0 + frac[0] * (v1 - v0))
            }
            _ => {
                let f = |di: usize, dj: usize| {
                    self.values[g.index(&[cell[0] + di, cell[1] + dj])]
                };
                let a = f(0, 0) + frac[0] * (f(1, 0) - f(0, 0));
                let b = f(0, 1) + frac[0] * (f(1, 1) - f(0, 1));
                Ok(a + frac[1] * (b - a))
            }
        }
    }
}

/// One interior node's discrete operator under one control:
/// `L u (node) = center * u[node] + sum entries coef * u[neighbor]`.
#[derive(Debug, Clone)]
struct Row {
    center: f64,
    entries: Vec<(usize, f64)>,
}

fn build_row(
    grid: &Grid,
    model: &SdeModel,
    control: &ControlValue,
    node: usize,
) -> Result<Row, PdeError> {
    let x = grid.point(node);
    let (a, v) = model.controlled_coefficients(&x, control)?;
    let c = grid.coords(node);
    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(8);
    let mut center = 0.0;
    let axial = |k: usize, weight: f64, drift: f64, c: &[usize], entries: &mut Vec<(usize, f64)>, center: &mut f64| {
        // weight: diffusion coefficient on u(node +- e_k) after any cross
        // correction; drift: v_k. Central keeps order two whenever the
        // diffusion weight dominates, otherwise upwind.
        let hk = grid.h[k];
        let mut up = c.to_vec();
        up[k] += 1;
        let mut dn = c.to_vec();
        dn[k] -= 1;
        let (iu, id) = (grid.index(&up), grid.index(&dn));
        if weight >= drift.abs() / (2.0 * hk) {
            entries.push((iu, weight + drift / (2.0 * hk)));
            entries.push((id, weight - drift / (2.0 * hk)));
            *center -= 2.0 * weight;
        } else {
            let (wu, wd) = if drift >= 0.0 {
                (weight + drift / hk, weight)
            } else {
                (weight, weight - drift / hk)
            };
            entries.push((iu, wu));
            entries.push((id, wd));
            *center -= wu + wd;
        }
    };
    match grid.dim {
        1 => {
            let w = 0.5 * a[0] / (grid.h[0] * grid.h[0]);
            axial(0, w, v[0], &c, &mut entries, &mut center);
        }
        _ => {
            let (hx, hy) = (grid.h[0], grid.h[1]);
            let axx = 0.5 * a[0] / (hx * hx);
            let ayy = 0.5 * a[3] / (hy * hy);
            let cross = a[1] / (2.0 * hx * hy);
            let slack = 1e-12 * (axx + ayy + cross.abs() + 1.0);
            if axx - cross.abs() < -slack || ayy - cross.abs() < -slack {
                return Err(PdeError::DiagonalDominance {
                    node: x,
                    control: control.describe(),
                    detail: format!(
                        "a = [{:.6}, {:.6}; {:.6}, {:.6}] with spacings ({hx:.6}, {hy:.6})",
                        a[0], a[1], a[2], a[3]
                    ),
                });
            }
            let wx = (axx - cross.abs()).max(0.0);
            let wy = (ayy - cross.abs()).max(0.0);
            if cross != 0.0 {
                let (d1, d2) = if cross > 0.0 {
                    ([1i64, 1], [-1i64, -1])
                } else {
                    ([1i64, -1], [-1i64, 1])
                };
                for d in [d1, d2] {
                    let nc = [
                        (c[0] as i64 + d[0]) as usize,
                        (c[1] as i64 + d[1]) as usize,
                    ];
                    entries.push((grid.index(&nc), cross.abs()));
                }
                center -= 2.0 * cross.abs();
            }
            axial(0, wx, v[0], &c, &mut entries, &mut center);
            axial(1, wy, v[1], &c, &mut entries, &mut center);
        }
    }
    entries.retain(|&(_, w)| w != 0.0);
    Ok(Row { center, entries })
}

/// `L^c u - f` for one assembled row.
fn row_value(row: &Row, u: &[f64], node: usize, f: f64) -> f64 {
    let mut acc = row.center * u[node] - f;
    for &(j, w) in &row.entries {
        acc += w * u[j];
    }
    acc
}

struct Assembled {
    /// rows[interior position][vertex index]
    rows: Vec<Vec<Row>>,
    f_vals: Vec<f64>,
}

fn assemble(
    grid: &Grid,
    model: &SdeModel,
    vertices: &[ControlValue],
    f: &Expression,
) -> Result<Assembled, PdeError> {
    let mut rows = Vec::with_capacity(grid.interior.len());
    let mut f_vals = Vec::with_capacity(grid.interior.len());
    for &node in &grid.interior {
        let x = grid.point(node);
        let fv = f.evaluate(&x);
        if !fv.is_finite() {
            return Err(PdeError::NonFinite {
                what: "f".into(),
                at: x,
            });
        }
        f_vals.push(fv);
        let mut per_vertex = Vec::with_capacity(vertices.len());
        for vtx in vertices {
            per_vertex.push(build_row(grid, model, vtx, node)?);
        }
        rows.push(per_vertex);
    }
    Ok(Assembled { rows, f_vals })
}

/// Direct tridiagonal solve for the frozen-policy system in 1-D. Interior
/// nodes of an interval domain form one contiguous run.
fn solve_linear_1d(
    grid: &Grid,
    asm: &Assembled,
    policy: &[usize],
    u: &mut [f64],
) -> Result<(), PdeError> {
    let m = grid.interior.len();
    let first = grid.interior[0];
    let mut sub = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut sup = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    for (pos, &node) in grid.interior.iter().enumerate() {
        debug_assert_eq!(node, first + pos, "1-D interior must be contiguous");
        let row = &asm.rows[pos][policy[pos]];
        diag[pos] = row.center;
        rhs[pos] = asm.f_vals[pos];
        for &(j, w) in &row.entries {
            if grid.kinds[j] == NodeKind::Interior {
                if j == node - 1 {
                    sub[pos] = w;
                } else if j == node + 1 {
                    sup[pos] = w;
                } else {
                    return Err(PdeError::LinearSolve(format!(
                        "1-D stencil touched non-adjacent node {j} from {node}"
                    )));
                }
            } else {
                rhs[pos] -= w * u[j];
            }
        }
    }
    // Thomas elimination.
    for i in 1..m {
        if diag[i - 1] == 0.0 {
            return Err(PdeError::LinearSolve("zero pivot".into()));
        }
        let q = sub[i] / diag[i - 1];
        diag[i] -= q * sup[i - 1];
        rhs[i] -= q * rhs[i - 1];
    }
    if diag[m - 1] == 0.0 {
        return Err(PdeError::LinearSolve("zero pivot".into()));
    }
    u[grid.interior[m - 1]] = rhs[m - 1] / diag[m - 1];
    for i in (0..m - 1).rev() {
        u[grid.interior[i]] = (rhs[i] - sup[i] * u[grid.interior[i + 1]]) / diag[i];
    }
    Ok(())
}

const SWEEP_CAP: usize = 400_000;

/// Relaxation solve for the frozen-policy system in 2-D: SOR at the
/// model-problem optimal factor, falling back to plain Gauss-Seidel
/// (convergent for this monotone, diagonally dominant assembly) if the
/// residual ever stalls or grows.
fn solve_linear_2d(
    grid: &Grid,
    asm: &Assembled,
    policy: &[usize],
    u: &mut [f64],
    bellman_tol: f64,
) -> Result<(), PdeError> {
    let m = grid.interior.len();
    let scale = 1.0 + asm.f_vals.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let tol = 1e-12 * scale;
    let n_max = *grid.shape.iter().max().unwrap() as f64;
    let mut omega = 2.0 / (1.0 + (std::f64::consts::PI / n_max).sin());
    let mut last = f64::INFINITY;
    let mut sweep = 0;
    while sweep < SWEEP_CAP {
        for _ in 0..8 {
            for (pos, &node) in grid.interior.iter().enumerate() {
                let row = &asm.rows[pos][policy[pos]];
                let mut acc = asm.f_vals[pos];
                for &(j, w) in &row.entries {
                    acc -= w * u[j];
                }
                let next = acc / row.center;
                u[node] += omega * (next - u[node]);
            }
            sweep += 1;
        }
        let mut res = 0.0f64;
        for (pos, &node) in grid.interior.iter().enumerate() {
            let row = &asm.rows[pos][policy[pos]];
            res = res.max(row_value(row, u, node, asm.f_vals[pos]).abs());
        }
        if res <= tol {
            return Ok(());
        }
        if res >= last && omega > 1.0 {
            // Over-relaxation misbehaves on this (possibly drift-skewed)
            // system; retreat to the safe factor.
            omega = 1.0;
            last = f64::INFINITY;
            continue;
        }
        last = res;
        let _ = m;
    }
    // The sweep cap is generous; accept a stall only if it still meets the
    // Bellman tolerance the caller will verify against.
    let mut res = 0.0f64;
    for (pos, &node) in grid.interior.iter().enumerate() {
        let row = &asm.rows[pos][policy[pos]];
        res = res.max(row_value(row, u, node, asm.f_vals[pos]).abs());
    }
    if res <= bellman_tol {
        Ok(())
    } else {
        Err(PdeError::LinearSolve(format!(
            "relaxation stalled at residual {res:.3e}"
        )))
    }
}

fn preconditions(theta: &UncertaintySet, domain: &Domain) -> Result<(), PdeError> {
    let ell = theta.ellipticity_params();
    if ell.sigma_low_sq <= 0.0 {
        return Err(PdeError::Precondition(format!(
            "uncertainty set is degenerate: sigma_low_sq = {}",
            ell.sigma_low_sq
        )));
    }
    match domain.exterior_ball()? {
        ExteriorBall::Satisfied { .. } => Ok(()),
        ExteriorBall::Violated { at } => Err(PdeError::Precondition(format!(
            "domain violates the exterior-ball condition at {at:?}"
        ))),
        ExteriorBall::Unknown { reason } => Err(PdeError::Precondition(format!(
            "exterior-ball condition could not be certified: {reason}"
        ))),
    }
}

fn solve_with_history(
    model: &SdeModel,
    theta: &UncertaintySet,
    domain: &Domain,
    f: &Expression,
    phi: &Expression,
    cfg: &GridConfig,
    mode: Mode,
) -> Result<(PdeSolution, Vec<Vec<f64>>), PdeError> {
    model.validate()?;
    preconditions(theta, domain)?;
    if model.n != domain.dim() {
        return Err(PdeError::Precondition(format!(
            "model has {} state components but the domain has dimension {}",
            model.n,
            domain.dim()
        )));
    }
    if f.max_var() > domain.dim() {
        return Err(PdeError::Precondition(format!(
            "f references x{} but the domain has dimension {}",
            f.max_var(),
            domain.dim()
        )));
    }
    let grid = Grid::build(domain, phi, cfg.nodes_per_axis)?;
    let vertices = theta.vertices();
    // Dominance is checked during assembly, before any iteration runs.
    let asm = assemble(&grid, model, &vertices, f)?;

    let mut u = grid.clamp.clone();
    let mut policy = vec![0usize; grid.interior.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        if iterations > cfg.max_iterations {
            return Err(PdeError::IterationCap {
                cap: cfg.max_iterations,
            });
        }
        match grid.dim {
            1 => solve_linear_1d(&grid, &asm, &policy, &mut u)?,
            _ => solve_linear_2d(&grid, &asm, &policy, &mut u, cfg.tolerance)?,
        }
        history.push(u.clone());
        let mut changed = false;
        let mut residual = 0.0f64;
        for (pos, &node) in grid.interior.iter().enumerate() {
            let mut best = policy[pos];
            let mut best_val = row_value(&asm.rows[pos][best], &u, node, asm.f_vals[pos]);
            let tie_tol = 1e-12 * (1.0 + best_val.abs());
            for (vi, row) in asm.rows[pos].iter().enumerate() {
                if vi == best {
                    continue;
                }
                let val = row_value(row, &u, node, asm.f_vals[pos]);
                let improves = match mode {
                    Mode::Upper => val > best_val + tie_tol,
                    Mode::Lower => val < best_val - tie_tol,
                };
                if improves {
                    best = vi;
                    best_val = val;
                }
            }
            if best != policy[pos] {
                policy[pos] = best;
                changed = true;
            }
            residual = residual.max(best_val.abs());
        }
        if !changed {
            if residual > cfg.tolerance {
                return Err(PdeError::LinearSolve(format!(
                    "policy is stationary but the residual {residual:.3e} exceeds the tolerance {:.3e}",
                    cfg.tolerance
                )));
            }
            let solution = PdeSolution {
                policy: policy.iter().map(|&vi| vertices[vi].clone()).collect(),
                grid,
                values: u,
                residual,
                iterations,
                mode,
                tolerance: cfg.tolerance,
            };
            return Ok((solution, history));
        }
    }
}

pub fn solve_dirichlet(
    model: &SdeModel,
    theta: &UncertaintySet,
    domain: &Domain,
    f: &Expression,
    phi: &Expression,
    cfg: &GridConfig,
    mode: Mode,
) -> Result<PdeSolution, PdeError> {
    solve_with_history(model, theta, domain, f, phi, cfg, mode).map(|(s, _)| s)
}

/// Recompute the Bellman residual from the solution's current values:
/// max over interior nodes of |extremal_c (L^c u - f)|.
pub fn residual(
    solution: &PdeSolution,
    model: &SdeModel,
    theta: &UncertaintySet,
    f: &Expression,
) -> Result<f64, PdeError> {
    let grid = &solution.grid;
    let vertices = theta.vertices();
    let asm = assemble(grid, model, &vertices, f)?;
    let mut worst = 0.0f64;
    for (pos, &node) in grid.interior.iter().enumerate() {
        let mut extremal = f64::NEG_INFINITY;
        for row in &asm.rows[pos] {
            let val = row_value(row, &solution.values, node, asm.f_vals[pos]);
            extremal = match solution.mode {
                Mode::Upper => extremal.max(val),
                Mode::Lower => {
                    if extremal == f64::NEG_INFINITY {
                        val
                    } else {
                        extremal.min(val)
                    }
                }
            };
        }
        worst = worst.max(extremal.abs());
    }
    Ok(worst)
}

/// Turn the solved per-node policy into a feedback rule for the simulator:
/// nearest-node lookup, with non-interior nodes borrowing the control of
/// the nearest interior node.
pub fn extract_policy(solution: &PdeSolution) -> Result<ControlPolicy, PdeError> {
    if solution.residual > solution.tolerance {
        return Err(PdeError::Precondition(format!(
            "solution residual {:.3e} exceeds its tolerance {:.3e}",
            solution.residual, solution.tolerance
        )));
    }
    let grid = &solution.grid;
    let axes: Vec<GridAxis> = (0..grid.dim)
        .map(|k| GridAxis {
            min: grid.origin[k],
            step: grid.h[k],
            count: grid.shape[k],
        })
        .collect();
    let mut controls = Vec::with_capacity(grid.len());
    for idx in 0..grid.len() {
        if grid.kinds[idx] == NodeKind::Interior {
            let pos = grid.interior.binary_search(&idx).expect("interior listed");
            controls.push(solution.policy[pos].clone());
        } else {
            let x = grid.point(idx);
            let mut best = 0usize;
            let mut best_d2 = f64::INFINITY;
            for (pos, &node) in grid.interior.iter().enumerate() {
                let y = grid.point(node);
                let d2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2 < best_d2 {
                    best_d2 = d2;
                    best = pos;
                }
            }
            controls.push(solution.policy[best].clone());
        }
    }
    Ok(ControlPolicy::GridFeedback(GridPolicy { axes, controls }))
}
