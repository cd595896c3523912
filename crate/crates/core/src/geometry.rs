//! Bounded domains, their regularity certificates, and exit detection.
//!
//! The catalog kinds (interval, box, ball, annulus) have exact membership
//! tests, signed distances, erosion/dilation and boundary projections. An
//! `Implicit` domain is a sublevel set {g < 0} clipped to a stated bounding
//! box; its distances and projections are bisection-based approximations and
//! are flagged as such.
//!
//! Exit detection works on one Euler step at a time: given consecutive
//! states, [`exit_event`] reports whether and where the step left the open
//! domain or its closure. Three refinement modes:
//!
//! * `Grid`: exits are observed states only; the crossing is the landing
//!   point at full step fraction. First-order-in-sqrt(dt) biased, kept as
//!   the baseline the refined modes are measured against.
//! * `Interpolate`: the linear interpolant of the two states is intersected
//!   with the boundary; flat faces and spheres get closed-form fractions,
//!   implicit level sets a marched bisection.
//! * `Bridge`: on top of interpolation, steps that stay inside are assigned
//!   the Brownian-bridge probability exp(-2 d1 d2 / (v dt)) of having
//!   touched a face in between (d1, d2 the endpoint distances to the face,
//!   v the diffusion variance normal to it). A fired bridge is a touch of
//!   the boundary, not an observed excursion past it, so it opens the exit
//!   clock for the open set only. Faces must be flat: the correction applies
//!   to intervals and boxes, and curved kinds fall back to interpolation.
//!
//! A crossing is tagged `Open` when only the open-set clock stops (bridge
//! touches) and `OpenAndClosed` when the interpolant demonstrably left the
//! closure (landing outside, or a chord through the hole of an annulus).

use thiserror::Error;

use crate::expr::Expression;
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("non-finite coordinate in point {0:?}")]
    NonFinitePoint(Vec<f64>),
    #[error("dimension mismatch: domain has dimension {expected}, point has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid domain: {0}")]
    Invalid(String),
    #[error("erosion by {eps} empties the domain")]
    EmptyErosion { eps: f64 },
    #[error("operation `{op}` is not supported for {kind} domains")]
    Unsupported { op: &'static str, kind: &'static str },
    #[error("level set has no interior point among {0} probe samples")]
    NoInteriorFound(usize),
    #[error("level set evaluated to a non-finite value at {0:?}")]
    NonFiniteLevelSet(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Refinement {
    Grid,
    Interpolate,
    Bridge,
}

/// Exit-ball regularity report. `Satisfied` for catalog shapes is
/// structural; for implicit domains it is a probe certificate (sampled, not
/// proven), carrying the certified radius. `Unknown` names the first
/// boundary point where the probe gave up.
#[derive(Debug, Clone, PartialEq)]
pub enum ExteriorBall {
    Satisfied { radius: f64 },
    Violated { at: Vec<f64> },
    Unknown { reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    /// The open-set clock stops; the closure clock keeps running.
    Open,
    /// The interpolant left the closure: both clocks stop.
    OpenAndClosed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crossing {
    /// Fraction of the step at which the boundary was met, in [0, 1].
    pub fraction: f64,
    /// Crossing location, snapped onto the boundary for catalog kinds.
    pub point: Vec<f64>,
    pub kind: ExitKind,
}

/// Per-step context for the Brownian-bridge correction: the step size and
/// the diffusion variance rate normal to each coordinate axis, evaluated at
/// the step's starting state.
pub struct BridgeParams<'a> {
    pub dt: f64,
    pub normal_var: &'a [f64],
}

#[derive(Debug, Clone)]
pub enum Domain {
    Interval {
        a: f64,
        b: f64,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Annulus {
        center: Vec<f64>,
        r_inner: f64,
        r_outer: f64,
    },
    Implicit {
        g: Expression,
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

impl Domain {
    pub fn interval(a: f64, b: f64) -> Result<Domain, GeometryError> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(GeometryError::Invalid(format!(
                "interval needs a < b, got ({a}, {b})"
            )));
        }
        Ok(Domain::Interval { a, b })
    }

    pub fn cuboid(lo: Vec<f64>, hi: Vec<f64>) -> Result<Domain, GeometryError> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(GeometryError::Invalid("box bounds must match and be nonempty".into()));
        }
        for (l, h) in lo.iter().zip(&hi) {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(GeometryError::Invalid(format!(
                    "box needs lo < hi per axis, got ({l}, {h})"
                )));
            }
        }
        Ok(Domain::Box { lo, hi })
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Domain, GeometryError> {
        if center.is_empty() || !radius.is_finite() || radius <= 0.0 {
            return Err(GeometryError::Invalid("ball needs a positive radius".into()));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::Invalid("non-finite ball center".into()));
        }
        Ok(Domain::Ball { center, radius })
    }

    pub fn annulus(center: Vec<f64>, r_inner: f64, r_outer: f64) -> Result<Domain, GeometryError> {
        if center.is_empty() || !(r_inner.is_finite() && r_outer.is_finite()) {
            return Err(GeometryError::Invalid("non-finite annulus radii".into()));
        }
        if !(0.0 < r_inner && r_inner < r_outer) {
            return Err(GeometryError::Invalid(format!(
                "annulus needs 0 < r_inner < r_outer, got ({r_inner}, {r_outer})"
            )));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::Invalid("non-finite annulus center".into()));
        }
        Ok(Domain::Annulus {
            center,
            r_inner,
            r_outer,
        })
    }

    pub fn implicit(g: Expression, lo: Vec<f64>, hi: Vec<f64>) -> Result<Domain, GeometryError> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(GeometryError::Invalid("bounding box dims must match".into()));
        }
        for (l, h) in lo.iter().zip(&hi) {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(GeometryError::Invalid("bounding box needs lo < hi".into()));
            }
        }
        if g.max_var() > lo.len() {
            return Err(GeometryError::DimensionMismatch {
                expected: lo.len(),
                got: g.max_var(),
            });
        }
        Ok(Domain::Implicit { g, lo, hi })
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Box { lo, .. } => lo.len(),
            Domain::Ball { center, .. } => center.len(),
            Domain::Annulus { center, .. } => center.len(),
            Domain::Implicit { lo, .. } => lo.len(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Domain::Interval { .. } => "interval",
            Domain::Box { .. } => "box",
            Domain::Ball { .. } => "ball",
            Domain::Annulus { .. } => "annulus",
            Domain::Implicit { .. } => "implicit",
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<(), GeometryError> {
        if x.len() != self.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinitePoint(x.to_vec()));
        }
        Ok(())
    }

    /// Membership in the open domain (`closed = false`) or its closure.
    pub fn contains(&self, x: &[f64], closed: bool) -> Result<bool, GeometryError> {
        self.check_point(x)?;
        Ok(match self {
            Domain::Interval { a, b } => {
                if closed {
                    *a <= x[0] && x[0] <= *b
                } else {
                    *a < x[0] && x[0] < *b
                }
            }
            Domain::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(&v, (&l, &h))| {
                if closed {
                    l <= v && v <= h
                } else {
                    l < v && v < h
                }
            }),
            Domain::Ball { center, radius } => {
                let d2 = dist_sq(x, center);
                let r2 = radius * radius;
                if closed {
                    d2 <= r2
                } else {
                    d2 < r2
                }
            }
            Domain::Annulus {
                center,
                r_inner,
                r_outer,
            } => {
                let d2 = dist_sq(x, center);
                let (i2, o2) = (r_inner * r_inner, r_outer * r_outer);
                if closed {
                    i2 <= d2 && d2 <= o2
                } else {
                    i2 < d2 && d2 < o2
                }
            }
            Domain::Implicit { g, lo, hi } => {
                let in_bbox = x
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .all(|(&v, (&l, &h))| if closed { l <= v && v <= h } else { l < v && v < h });
                if !in_bbox {
                    false
                } else {
                    let gv = g.evaluate(x);
                    if gv.is_nan() {
                        return Err(GeometryError::NonFiniteLevelSet(x.to_vec()));
                    }
                    if closed {
                        gv <= 0.0
                    } else {
                        gv < 0.0
                    }
                }
            }
        })
    }

    /// Signed distance to the boundary, negative inside. Exact for catalog
    /// kinds; for implicit domains this is a probe along the ray through an
    /// interior anchor and only a first-order estimate (see
    /// [`Domain::distance_is_exact`]).
    pub fn signed_distance(&self, x: &[f64]) -> Result<f64, GeometryError> {
        self.check_point(x)?;
        Ok(match self {
            Domain::Interval { a, b } => (a - x[0]).max(x[0] - b),
            Domain::Box { lo, hi } => {
                let mut inside_margin = f64::NEG_INFINITY;
                let mut out_sq = 0.0;
                let mut outside = false;
                for ((&v, &l), &h) in x.iter().zip(lo).zip(hi) {
                    let q = (l - v).max(v - h);
                    inside_margin = inside_margin.max(q);
                    if q > 0.0 {
                        outside = true;
                        out_sq += q * q;
                    }
                }
                if outside {
                    out_sq.sqrt()
                } else {
                    inside_margin
                }
            }
            Domain::Ball { center, radius } => dist_sq(x, center).sqrt() - radius,
            Domain::Annulus {
                center,
                r_inner,
                r_outer,
            } => {
                let r = dist_sq(x, center).sqrt();
                (r_inner - r).max(r - r_outer)
            }
            Domain::Implicit { .. } => {
                let z = self.project_to_boundary(x)?;
                let dist = dist_sq(x, &z).sqrt();
                if self.contains(x, false)? {
                    -dist
                } else {
                    dist
                }
            }
        })
    }

    pub fn distance_is_exact(&self) -> bool {
        !matches!(self, Domain::Implicit { .. })
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Domain::Interval { a, b } => (vec![*a], vec![*b]),
            Domain::Box { lo, hi } => (lo.clone(), hi.clone()),
            Domain::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            Domain::Annulus {
                center, r_outer, ..
            } => (
                center.iter().map(|c| c - r_outer).collect(),
                center.iter().map(|c| c + r_outer).collect(),
            ),
            Domain::Implicit { lo, hi, .. } => (lo.clone(), hi.clone()),
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Domain::Interval { a, b } => b - a,
            Domain::Ball { radius, .. } => 2.0 * radius,
            Domain::Annulus { r_outer, .. } => 2.0 * r_outer,
            Domain::Box { .. } | Domain::Implicit { .. } => {
                let (lo, hi) = self.bounding_box();
                let diff: Vec<f64> = hi.iter().zip(&lo).map(|(h, l)| h - l).collect();
                linalg::norm2(&diff)
            }
        }
    }

    /// Shrink by `eps` (inner parallel set). Catalog kinds only.
    pub fn erode(&self, eps: f64) -> Result<Domain, GeometryError> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(GeometryError::Invalid(format!("erosion radius {eps} must be positive")));
        }
        match self {
            Domain::Interval { a, b } => {
                if a + eps >= b - eps {
                    Err(GeometryError::EmptyErosion { eps })
                } else {
                    Domain::interval(a + eps, b - eps)
                }
            }
            Domain::Box { lo, hi } => {
                let nlo: Vec<f64> = lo.iter().map(|l| l + eps).collect();
                let nhi: Vec<f64> = hi.iter().map(|h| h - eps).collect();
                if nlo.iter().zip(&nhi).any(|(l, h)| l >= h) {
                    Err(GeometryError::EmptyErosion { eps })
                } else {
                    Domain::cuboid(nlo, nhi)
                }
            }
            Domain::Ball { center, radius } => {
                if *radius <= eps {
                    Err(GeometryError::EmptyErosion { eps })
                } else {
                    Domain::ball(center.clone(), radius - eps)
                }
            }
            Domain::Annulus {
                center,
                r_inner,
                r_outer,
            } => {
                if r_inner + eps >= r_outer - eps {
                    Err(GeometryError::EmptyErosion { eps })
                } else {
                    Domain::annulus(center.clone(), r_inner + eps, r_outer - eps)
                }
            }
            Domain::Implicit { .. } => Err(GeometryError::Unsupported {
                op: "erode",
                kind: "implicit",
            }),
        }
    }

    /// Grow by `eps` (outer parallel set). An annulus whose hole fills in
    /// becomes a ball.
    pub fn dilate(&self, eps: f64) -> Result<Domain, GeometryError> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(GeometryError::Invalid(format!("dilation radius {eps} must be positive")));
        }
        match self {
            Domain::Interval { a, b } => Domain::interval(a - eps, b + eps),
            Domain::Box { lo, hi } => Domain::cuboid(
                lo.iter().map(|l| l - eps).collect(),
                hi.iter().map(|h| h + eps).collect(),
            ),
            Domain::Ball { center, radius } => Domain::ball(center.clone(), radius + eps),
            Domain::Annulus {
                center,
                r_inner,
                r_outer,
            } => {
                if *r_inner <= eps {
                    Domain::ball(center.clone(), r_outer + eps)
                } else {
                    Domain::annulus(center.clone(), r_inner - eps, r_outer + eps)
                }
            }
            Domain::Implicit { .. } => Err(GeometryError::Unsupported {
                op: "dilate",
                kind: "implicit",
            }),
        }
    }

    /// Nearest boundary point. Exact for catalog kinds. For implicit
    /// domains: bisection along the ray from the interior anchor through
    /// `x`, which is a boundary point but not necessarily the nearest one.
    pub fn project_to_boundary(&self, x: &[f64]) -> Result<Vec<f64>, GeometryError> {
        self.check_point(x)?;
        match self {
            Domain::Interval { a, b } => {
                Ok(vec![if x[0] - a <= b - x[0] { *a } else { *b }])
            }
            Domain::Box { lo, hi } => {
                let inside = self.contains(x, true)?;
                if !inside {
                    Ok(x.iter()
                        .zip(lo.iter().zip(hi))
                        .map(|(&v, (&l, &h))| v.clamp(l, h))
                        .collect())
                } else {
                    // Push the coordinate with the smallest margin to its face.
                    let mut best_axis = 0;
                    let mut best_margin = f64::INFINITY;
                    let mut best_value = lo[0];
                    for (j, (&v, (&l, &h))) in x.iter().zip(lo.iter().zip(hi)).enumerate() {
                        if v - l < best_margin {
                            best_margin = v - l;
                            best_axis = j;
                            best_value = l;
                        }
                        if h - v < best_margin {
                            best_margin = h - v;
                            best_axis = j;
                            best_value = h;
                        }
                    }
                    let mut out = x.to_vec();
                    out[best_axis] = best_value;
                    Ok(out)
                }
            }
            Domain::Ball { center, radius } => Ok(radial_point(center, x, *radius)),
            Domain::Annulus {
                center,
                r_inner,
                r_outer,
            } => {
                let r = dist_sq(x, center).sqrt();
                let target = if (r - r_inner).abs() <= (r - r_outer).abs() {
                    *r_inner
                } else {
                    *r_outer
                };
                Ok(radial_point(center, x, target))
            }
            Domain::Implicit { .. } => {
                let anchor = self.interior_anchor()?;
                let mut dir: Vec<f64> = x.iter().zip(&anchor).map(|(a, b)| a - b).collect();
                let norm = linalg::norm2(&dir);
                if norm < 1e-14 {
                    dir = vec![0.0; x.len()];
                    dir[0] = 1.0;
                } else {
                    for v in &mut dir {
                        *v /= norm;
                    }
                }
                // March outward from the anchor until the ray leaves, then bisect.
                let reach = 2.0 * self.diameter();
                let steps = 256;
                let mut prev_t = 0.0;
                for k in 1..=steps {
                    let t = reach * k as f64 / steps as f64;
                    let p: Vec<f64> = anchor.iter().zip(&dir).map(|(a, d)| a + d * t).collect();
                    if !self.contains(&p, false)? {
                        let f = |t: f64| -> Result<bool, GeometryError> {
                            let p: Vec<f64> =
                                anchor.iter().zip(&dir).map(|(a, d)| a + d * t).collect();
                            self.contains(&p, false)
                        };
                        let t_star = bisect_exit(f, prev_t, t)?;
                        return Ok(anchor
                            .iter()
                            .zip(&dir)
                            .map(|(a, d)| a + d * t_star)
                            .collect());
                    }
                    prev_t = t;
                }
                Err(GeometryError::Invalid(
                    "level set does not close inside its bounding box".into(),
                ))
            }
        }
    }

    /// Deterministic points on the boundary, used by probes and value
    /// tables. At least `k` points for catalog kinds in one or two
    /// dimensions; higher dimensions and implicit domains fall back to ray
    /// probes from the interior anchor.
    pub fn boundary_points(&self, k: usize) -> Result<Vec<Vec<f64>>, GeometryError> {
        let k = k.max(2);
        match self {
            Domain::Interval { a, b } => Ok(vec![vec![*a], vec![*b]]),
            Domain::Box { lo, hi } => {
                let n = lo.len();
                if n == 1 {
                    return Ok(vec![vec![lo[0]], vec![hi[0]]]);
                }
                let mut pts = Vec::new();
                let per_face = (k / (2 * n)).max(2);
                for axis in 0..n {
                    for &face in &[lo[axis], hi[axis]] {
                        for i in 0..per_face {
                            let mut p = vec![0.0; n];
                            p[axis] = face;
                            let mut free = 0;
                            for j in 0..n {
                                if j == axis {
                                    continue;
                                }
                                let u = halton(i as u64 + 1, HALTON_BASES[free % HALTON_BASES.len()]);
                                p[j] = lo[j] + u * (hi[j] - lo[j]);
                                free += 1;
                            }
                            pts.push(p);
                        }
                    }
                }
                // Corners pin down the extremes.
                if n == 2 {
                    for &cx in &[lo[0], hi[0]] {
                        for &cy in &[lo[1], hi[1]] {
                            pts.push(vec![cx, cy]);
                        }
                    }
                }
                Ok(pts)
            }
            Domain::Ball { center, radius } => sphere_points(center, *radius, k),
            Domain::Annulus {
                center,
                r_inner,
                r_outer,
            } => {
                let mut pts = sphere_points(center, *r_inner, k / 2 + 1)?;
                pts.extend(sphere_points(center, *r_outer, k / 2 + 1)?);
                Ok(pts)
            }
            Domain::Implicit { .. } => {
                let anchor = self.interior_anchor()?;
                let dirs = directions(self.dim(), k);
                let reach = 2.0 * self.diameter();
                let mut pts = Vec::new();
                for dir in dirs {
                    if let Some(p) = self.ray_boundary(&anchor, &dir, reach)? {
                        pts.push(p);
                    }
                }
                if pts.is_empty() {
                    return Err(GeometryError::Invalid(
                        "no boundary found along probe rays".into(),
                    ));
                }
                Ok(pts)
            }
        }
    }

    /// Deterministic sample of the closure: low-discrepancy interior points
    /// plus boundary points plus any bounding-box corners that belong to the
    /// closure. Used by coefficient-bound estimation and non-degeneracy
    /// checks, where extremes often sit on the boundary.
    pub fn sample_closure(&self, k: usize) -> Result<Vec<Vec<f64>>, GeometryError> {
        let (lo, hi) = self.bounding_box();
        let n = lo.len();
        let mut pts = Vec::new();
        let mut i = 1u64;
        let mut tried = 0usize;
        while pts.len() < k && tried < 64 * k {
            let p: Vec<f64> = (0..n)
                .map(|j| lo[j] + halton(i, HALTON_BASES[j % HALTON_BASES.len()]) * (hi[j] - lo[j]))
                .collect();
            i += 1;
            tried += 1;
            if self.contains(&p, true)? {
                pts.push(p);
            }
        }
        for corner_id in 0..(1usize << n.min(16)) {
            let p: Vec<f64> = (0..n)
                .map(|j| if corner_id >> j & 1 == 1 { hi[j] } else { lo[j] })
                .collect();
            if self.contains(&p, true)? {
                pts.push(p);
            }
        }
        if let Ok(boundary) = self.boundary_points(k / 4 + 2) {
            pts.extend(boundary);
        }
        if pts.is_empty() {
            return Err(GeometryError::NoInteriorFound(64 * k));
        }
        Ok(pts)
    }

    /// Default refinement: bridge where the boundary is flat, interpolation
    /// otherwise.
    pub fn default_refinement(&self) -> Refinement {
        match self {
            Domain::Interval { .. } | Domain::Box { .. } => Refinement::Bridge,
            _ => Refinement::Interpolate,
        }
    }

    /// Exterior-ball regularity. Catalog kinds satisfy it structurally with
    /// an explicit radius; implicit domains are probed at sampled boundary
    /// points and never claim `Satisfied` without a certificate radius that
    /// survived sampling.
    pub fn exterior_ball(&self) -> Result<ExteriorBall, GeometryError> {
        match self {
            Domain::Interval { a, b } => Ok(ExteriorBall::Satisfied { radius: (b - a) / 2.0 }),
            Domain::Box { lo, hi } => {
                let min_side = lo
                    .iter()
                    .zip(hi)
                    .map(|(l, h)| h - l)
                    .fold(f64::INFINITY, f64::min);
                Ok(ExteriorBall::Satisfied { radius: min_side / 2.0 })
            }
            Domain::Ball { radius, .. } => Ok(ExteriorBall::Satisfied { radius: *radius }),
            Domain::Annulus { r_inner, .. } => Ok(ExteriorBall::Satisfied { radius: *r_inner }),
            Domain::Implicit { g, .. } => self.probe_exterior_ball(g),
        }
    }

    fn probe_exterior_ball(&self, g: &Expression) -> Result<ExteriorBall, GeometryError> {
        let diam = self.diameter();
        let r_min = 1e-3 * diam;
        let boundary = self.boundary_points(256)?;
        let fd = 1e-6 * diam;

        // Hidden-boundary scan: ray probes only see boundary pieces with
        // interior on one side and bulk complement on the other. A thin
        // feature (a slit, an interior zero of g) leaves interior samples
        // whose first-order distance to the zero set, |g| / |grad g|, is far
        // smaller than their distance to any boundary point the rays found.
        if let Some(p) = self.hidden_boundary_sample(g, &boundary, diam, fd)? {
            return Ok(ExteriorBall::Unknown {
                reason: format!(
                    "level set has boundary structure near {:?} that ray probes did not reach",
                    p
                ),
            });
        }

        let mut certified = f64::INFINITY;
        for z in boundary.iter().step_by(4) {
            // Outward normal from the level-set gradient.
            let mut grad = vec![0.0; z.len()];
            for j in 0..z.len() {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[j] += fd;
                zm[j] -= fd;
                grad[j] = (g.evaluate(&zp) - g.evaluate(&zm)) / (2.0 * fd);
            }
            let gn = linalg::norm2(&grad);
            if !gn.is_finite() || gn < 1e-9 {
                return Ok(ExteriorBall::Unknown {
                    reason: format!("level-set normal is degenerate at {:?}", z),
                });
            }
            for v in &mut grad {
                *v /= gn;
            }

            let mut r = 0.1 * diam;
            let mut ok_radius = None;
            while r >= r_min {
                if self.ball_clear_of_domain(z, &grad, r)? {
                    ok_radius = Some(r);
                    break;
                }
                r *= 0.5;
            }
            match ok_radius {
                Some(r) => certified = certified.min(r),
                None => {
                    return Ok(ExteriorBall::Unknown {
                        reason: format!(
                            "no exterior ball of radius >= {:.3e} found at {:?}",
                            r_min, z
                        ),
                    })
                }
            }
        }
        Ok(ExteriorBall::Satisfied { radius: certified })
    }

    /// Scan interior samples for evidence of boundary the ray probes missed.
    /// Returns such a sample if found.
    fn hidden_boundary_sample(
        &self,
        g: &Expression,
        found_boundary: &[Vec<f64>],
        diam: f64,
        fd: f64,
    ) -> Result<Option<Vec<f64>>, GeometryError> {
        let (lo, hi) = self.bounding_box();
        let n = lo.len();
        for i in 1..=1024u64 {
            let p: Vec<f64> = (0..n)
                .map(|j| lo[j] + halton(i, HALTON_BASES[j % HALTON_BASES.len()]) * (hi[j] - lo[j]))
                .collect();
            if !self.contains(&p, false)? {
                continue;
            }
            let gv = g.evaluate(&p);
            let mut grad_sq = 0.0;
            for j in 0..n {
                let mut pp = p.clone();
                let mut pm = p.clone();
                pp[j] += fd;
                pm[j] -= fd;
                let d = (g.evaluate(&pp) - g.evaluate(&pm)) / (2.0 * fd);
                grad_sq += d * d;
            }
            if !(gv.is_finite() && grad_sq.is_finite()) || grad_sq < 1e-18 {
                continue;
            }
            let est = gv.abs() / grad_sq.sqrt();
            let nearest = found_boundary
                .iter()
                .map(|z| dist_sq(&p, z).sqrt())
                .fold(f64::INFINITY, f64::min);
            if nearest > (4.0 * est).max(0.03 * diam) {
                return Ok(Some(p));
            }
        }
        Ok(None)
    }

    /// Sample the open ball touching the boundary at `z` from outside and
    /// report whether every sample (away from the touching point) avoids the
    /// open domain.
    fn ball_clear_of_domain(
        &self,
        z: &[f64],
        normal: &[f64],
        r: f64,
    ) -> Result<bool, GeometryError> {
        let n = z.len();
        let center: Vec<f64> = z.iter().zip(normal).map(|(zi, ni)| zi + r * ni).collect();
        let dirs = directions(n, 24);
        for &scale in &[0.95, 0.7, 0.4, 0.15] {
            for dir in &dirs {
                let p: Vec<f64> = center
                    .iter()
                    .zip(dir)
                    .map(|(c, d)| c + scale * r * d)
                    .collect();
                // Ignore samples hugging the touching point, where roundoff
                // flips the sign.
                if dist_sq(&p, z).sqrt() < 0.05 * r {
                    continue;
                }
                if self.contains(&p, false)? {
                    return Ok(false);
                }
            }
        }
        if self.contains(&center, false)? {
            return Ok(false);
        }
        Ok(true)
    }

    fn interior_anchor(&self) -> Result<Vec<f64>, GeometryError> {
        let (lo, hi) = self.bounding_box();
        let n = lo.len();
        if let Domain::Implicit { g, .. } = self {
            let samples = 2048;
            let mut best: Option<(f64, Vec<f64>)> = None;
            for i in 1..=samples {
                let p: Vec<f64> = (0..n)
                    .map(|j| {
                        lo[j] + halton(i as u64, HALTON_BASES[j % HALTON_BASES.len()]) * (hi[j] - lo[j])
                    })
                    .collect();
                let gv = g.evaluate(&p);
                if gv.is_finite() && gv < 0.0 {
                    match &best {
                        Some((b, _)) if *b <= gv => {}
                        _ => best = Some((gv, p)),
                    }
                }
            }
            return best
                .map(|(_, p)| p)
                .ok_or(GeometryError::NoInteriorFound(samples));
        }
        // Catalog kinds: a point guaranteed interior.
        Ok(match self {
            Domain::Interval { a, b } => vec![0.5 * (a + b)],
            Domain::Box { lo, hi } => lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect(),
            Domain::Ball { center, .. } => center.clone(),
            Domain::Annulus {
                center,
                r_inner,
                r_outer,
            } => {
                let mut p = center.clone();
                p[0] += 0.5 * (r_inner + r_outer);
                p
            }
            Domain::Implicit { .. } => unreachable!(),
        })
    }

    fn ray_boundary(
        &self,
        anchor: &[f64],
        dir: &[f64],
        reach: f64,
    ) -> Result<Option<Vec<f64>>, GeometryError> {
        let steps = 256;
        let mut prev_t = 0.0;
        for k in 1..=steps {
            let t = reach * k as f64 / steps as f64;
            let p: Vec<f64> = anchor.iter().zip(dir).map(|(a, d)| a + d * t).collect();
            if !self.contains(&p, false)? {
                let f = |t: f64| -> Result<bool, GeometryError> {
                    let p: Vec<f64> = anchor.iter().zip(dir).map(|(a, d)| a + d * t).collect();
                    self.contains(&p, false)
                };
                let t_star = bisect_exit(f, prev_t, t)?;
                return Ok(Some(
                    anchor.iter().zip(dir).map(|(a, d)| a + d * t_star).collect(),
                ));
            }
            prev_t = t;
        }
        Ok(None)
    }
}

/// Detect an exit along one step from `x_prev` (inside the open domain, or
/// on its boundary when the open clock has already stopped) to `x_next`.
///
/// `bridge` supplies step size and per-axis normal variances and is consumed
/// only in `Bridge` mode on flat-faced domains; `uniform` yields the
/// uniform(0,1) draws for bridge decisions, consumed in a fixed face order
/// (axis-major, low face before high face), at most one per face and only
/// for faces whose touch probability is above the underflow cutoff.
pub fn exit_event(
    domain: &Domain,
    x_prev: &[f64],
    x_next: &[f64],
    refinement: Refinement,
    bridge: Option<&BridgeParams<'_>>,
    uniform: &mut dyn FnMut() -> f64,
) -> Result<Option<Crossing>, GeometryError> {
    domain.check_point(x_prev)?;
    domain.check_point(x_next)?;

    let next_in_closure = domain.contains(x_next, true)?;
    if !next_in_closure {
        if refinement == Refinement::Grid {
            return Ok(Some(Crossing {
                fraction: 1.0,
                point: x_next.to_vec(),
                kind: ExitKind::OpenAndClosed,
            }));
        }
        let (fraction, point) = segment_crossing(domain, x_prev, x_next)?
            .unwrap_or((1.0, x_next.to_vec()));
        return Ok(Some(Crossing {
            fraction,
            point,
            kind: ExitKind::OpenAndClosed,
        }));
    }

    let next_in_open = domain.contains(x_next, false)?;
    if !next_in_open {
        // Landed exactly on the boundary: the open clock stops, the closure
        // clock does not.
        return Ok(Some(Crossing {
            fraction: 1.0,
            point: x_next.to_vec(),
            kind: ExitKind::Open,
        }));
    }

    // Both endpoints inside the open set. Non-convex kinds can still be
    // left mid-step by the interpolant.
    if refinement != Refinement::Grid {
        if let Some((fraction, point)) = interior_excursion(domain, x_prev, x_next)? {
            return Ok(Some(Crossing {
                fraction,
                point,
                kind: ExitKind::OpenAndClosed,
            }));
        }
    }

    if refinement == Refinement::Bridge {
        if let Some(params) = bridge {
            if let Some(c) = bridge_touch(domain, x_prev, x_next, params, uniform)? {
                return Ok(Some(c));
            }
        }
    }

    Ok(None)
}

/// First crossing of the boundary by the segment, assuming the endpoints
/// straddle it (prev inside or on the boundary, next outside the closure).
fn segment_crossing(
    domain: &Domain,
    x_prev: &[f64],
    x_next: &[f64],
) -> Result<Option<(f64, Vec<f64>)>, GeometryError> {
    match domain {
        Domain::Interval { a, b } => {
            Ok(box_crossing(&[*a], &[*b], x_prev, x_next))
        }
        Domain::Box { lo, hi } => Ok(box_crossing(lo, hi, x_prev, x_next)),
        Domain::Ball { center, radius } => {
            Ok(sphere_crossing(center, *radius, x_prev, x_next, true)
                .map(|s| (s, snap_lerp(center, *radius, x_prev, x_next, s))))
        }
        Domain::Annulus {
            center,
            r_inner,
            r_outer,
        } => {
            let inner = sphere_crossing(center, *r_inner, x_prev, x_next, false);
            let outer = sphere_crossing(center, *r_outer, x_prev, x_next, true);
            let best = match (inner, outer) {
                (Some(si), Some(so)) => Some((si.min(so), if si <= so { *r_inner } else { *r_outer })),
                (Some(si), None) => Some((si, *r_inner)),
                (None, Some(so)) => Some((so, *r_outer)),
                (None, None) => None,
            };
            Ok(best.map(|(s, r)| (s, snap_lerp(center, r, x_prev, x_next, s))))
        }
        Domain::Implicit { .. } => {
            let f = |s: f64| -> Result<bool, GeometryError> {
                let p = lerp(x_prev, x_next, s);
                domain.contains(&p, false)
            };
            // March to bracket the first sign change, then bisect.
            let substeps = 32;
            let mut prev_s = 0.0;
            for k in 1..=substeps {
                let s = k as f64 / substeps as f64;
                if !f(s)? {
                    let s_star = bisect_exit(f, prev_s, s)?;
                    return Ok(Some((s_star, lerp(x_prev, x_next, s_star))));
                }
                prev_s = s;
            }
            Ok(None)
        }
    }
}

/// Mid-step excursion outside the closure while both endpoints are inside:
/// possible only for non-convex kinds (an annulus chord through the hole,
/// or a wiggly level set).
fn interior_excursion(
    domain: &Domain,
    x_prev: &[f64],
    x_next: &[f64],
) -> Result<Option<(f64, Vec<f64>)>, GeometryError> {
    match domain {
        Domain::Interval { .. } | Domain::Box { .. } | Domain::Ball { .. } => Ok(None),
        Domain::Annulus {
            center, r_inner, ..
        } => Ok(sphere_crossing(center, *r_inner, x_prev, x_next, false)
            .map(|s| (s, snap_lerp(center, *r_inner, x_prev, x_next, s)))),
        Domain::Implicit { .. } => {
            let substeps = 32;
            for k in 1..substeps {
                let s = k as f64 / substeps as f64;
                let p = lerp(x_prev, x_next, s);
                if !domain.contains(&p, false)? {
                    let f = |s: f64| -> Result<bool, GeometryError> {
                        let p = lerp(x_prev, x_next, s);
                        domain.contains(&p, false)
                    };
                    let lo = (k - 1) as f64 / substeps as f64;
                    let s_star = bisect_exit(f, lo, s)?;
                    return Ok(Some((s_star, lerp(x_prev, x_next, s_star))));
                }
            }
            Ok(None)
        }
    }
}

/// Brownian-bridge touch of a flat face: probability
/// exp(-2 d1 d2 / (v dt)) per face, checked in fixed face order.
fn bridge_touch(
    domain: &Domain,
    x_prev: &[f64],
    x_next: &[f64],
    params: &BridgeParams<'_>,
    uniform: &mut dyn FnMut() -> f64,
) -> Result<Option<Crossing>, GeometryError> {
    let (lo, hi) = match domain {
        Domain::Interval { a, b } => (vec![*a], vec![*b]),
        Domain::Box { lo, hi } => (lo.clone(), hi.clone()),
        // Curved boundaries: the flat-face correction does not apply.
        _ => return Ok(None),
    };
    let mut best: Option<(f64, usize, f64)> = None; // fraction, axis, face value
    for axis in 0..lo.len() {
        let v = params.normal_var.get(axis).copied().unwrap_or(0.0);
        if v <= 0.0 {
            continue;
        }
        for &face in &[lo[axis], hi[axis]] {
            let d1 = (x_prev[axis] - face).abs();
            let d2 = (x_next[axis] - face).abs();
            let exponent = -2.0 * d1 * d2 / (v * params.dt);
            // Below the cutoff the probability is < 4e-18: skip the draw.
            if exponent < -40.0 {
                continue;
            }
            let p = exponent.exp();
            if uniform() < p {
                let fraction = if d1 + d2 > 0.0 { d1 / (d1 + d2) } else { 0.0 };
                if best.map_or(true, |(bf, _, _)| fraction < bf) {
                    best = Some((fraction, axis, face));
                }
            }
        }
    }
    Ok(best.map(|(fraction, axis, face)| {
        let mut point = lerp(x_prev, x_next, fraction);
        point[axis] = face;
        Crossing {
            fraction,
            point,
            kind: ExitKind::Open,
        }
    }))
}

/// Earliest face crossing of an axis-aligned box, with the crossed
/// coordinate snapped exactly onto the face. Assumes the start is in the
/// closed box and the end is outside it.
fn box_crossing(lo: &[f64], hi: &[f64], x_prev: &[f64], x_next: &[f64]) -> Option<(f64, Vec<f64>)> {
    let mut best: Option<(f64, usize, f64)> = None;
    for axis in 0..lo.len() {
        let (p, q) = (x_prev[axis], x_next[axis]);
        let candidate = if q < lo[axis] && p >= lo[axis] {
            Some(lo[axis])
        } else if q > hi[axis] && p <= hi[axis] {
            Some(hi[axis])
        } else {
            None
        };
        if let Some(face) = candidate {
            let s = ((face - p) / (q - p)).clamp(0.0, 1.0);
            if best.map_or(true, |(bs, _, _)| s < bs) {
                best = Some((s, axis, face));
            }
        }
    }
    best.map(|(s, axis, face)| {
        let mut point = lerp(x_prev, x_next, s);
        point[axis] = face;
        (s, point)
    })
}

/// Smallest fraction in [0, 1] where the segment meets the sphere
/// |x - center| = radius. `from_inside` picks the exit through the sphere
/// going outward; otherwise the entry into the inner ball.
fn sphere_crossing(
    center: &[f64],
    radius: f64,
    x_prev: &[f64],
    x_next: &[f64],
    from_inside: bool,
) -> Option<f64> {
    let delta: Vec<f64> = x_next.iter().zip(x_prev).map(|(n, p)| n - p).collect();
    let rel: Vec<f64> = x_prev.iter().zip(center).map(|(p, c)| p - c).collect();
    let a = linalg::dot(&delta, &delta);
    if a == 0.0 {
        return None;
    }
    let b = 2.0 * linalg::dot(&rel, &delta);
    let c = linalg::dot(&rel, &rel) - radius * radius;
    let disc = b * b - 4.0 * a * c;
    if disc <= 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let roots = [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)];
    let eps = 1e-12;
    if from_inside {
        // c <= 0 here, so the roots straddle zero and the exit is the larger
        // one; accept it when it lies within the step.
        let s = roots[1];
        if s <= 1.0 + eps {
            Some(s.clamp(0.0, 1.0))
        } else {
            None
        }
    } else {
        // Starting outside the ball (c > 0): the entry is the smaller root.
        let s = roots[0];
        if (-eps..=1.0 + eps).contains(&s) {
            Some(s.clamp(0.0, 1.0))
        } else {
            None
        }
    }
}

fn lerp(a: &[f64], b: &[f64], s: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * (y - x)).collect()
}

/// Interpolate at `s` and rescale radially so the point sits exactly on the
/// sphere of the given radius.
fn snap_lerp(center: &[f64], radius: f64, a: &[f64], b: &[f64], s: f64) -> Vec<f64> {
    let p = lerp(a, b, s);
    radial_point(center, &p, radius)
}

fn radial_point(center: &[f64], x: &[f64], radius: f64) -> Vec<f64> {
    let r = dist_sq(x, center).sqrt();
    if r < 1e-300 {
        let mut p = center.to_vec();
        p[0] += radius;
        return p;
    }
    center
        .iter()
        .zip(x)
        .map(|(c, v)| c + (v - c) * radius / r)
        .collect()
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Bisect `f` (true = still inside) on [lo, hi] with f(lo) true-ish and
/// f(hi) false, returning the exit parameter.
fn bisect_exit(
    mut f: impl FnMut(f64) -> Result<bool, GeometryError>,
    mut lo: f64,
    mut hi: f64,
) -> Result<f64, GeometryError> {
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

const HALTON_BASES: [u64; 6] = [2, 3, 5, 7, 11, 13];

/// Halton radical-inverse in the given base: a deterministic low-discrepancy
/// sequence on (0, 1).
fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// `k` deterministic unit directions: uniform angles in 2-D, Halton-mapped
/// spherical angles otherwise.
fn directions(n: usize, k: usize) -> Vec<Vec<f64>> {
    if n == 1 {
        return vec![vec![1.0], vec![-1.0]];
    }
    let mut out = Vec::with_capacity(k);
    if n == 2 {
        for i in 0..k {
            let t = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
            out.push(vec![t.cos(), t.sin()]);
        }
        return out;
    }
    let mut i = 1u64;
    while out.len() < k {
        // Map Halton points through the inverse normal-ish trick: coordinates
        // from centered Halton values, normalized.
        let mut v: Vec<f64> = (0..n)
            .map(|j| 2.0 * halton(i, HALTON_BASES[j % HALTON_BASES.len()]) - 1.0)
            .collect();
        i += 1;
        let norm = linalg::norm2(&v);
        if norm < 1e-3 || norm > 1.0 {
            continue;
        }
        for x in &mut v {
            *x /= norm;
        }
        out.push(v);
    }
    out
}

fn sphere_points(center: &[f64], radius: f64, k: usize) -> Result<Vec<Vec<f64>>, GeometryError> {
    let n = center.len();
    if n == 1 {
        return Ok(vec![vec![center[0] - radius], vec![center[0] + radius]]);
    }
    Ok(directions(n, k)
        .into_iter()
        .map(|d| {
            center
                .iter()
                .zip(&d)
                .map(|(c, di)| c + radius * di)
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr;
    use approx::assert_relative_eq;

    fn unit_interval() -> Domain {
        Domain::interval(0.0, 1.0).unwrap()
    }

    fn unit_disc() -> Domain {
        Domain::ball(vec![0.0, 0.0], 1.0).unwrap()
    }

    #[test]
    fn membership_open_vs_closed() {
        let d = unit_disc();
        assert!(d.contains(&[0.999, 0.0], false).unwrap());
        assert!(!d.contains(&[1.0, 0.0], false).unwrap());
        assert!(d.contains(&[1.0, 0.0], true).unwrap());
        assert!(!d.contains(&[1.0001, 0.0], true).unwrap());

        let q = unit_interval();
        assert!(!q.contains(&[0.0], false).unwrap());
        assert!(q.contains(&[0.0], true).unwrap());
    }

    #[test]
    fn membership_rejects_nan() {
        assert!(matches!(
            unit_interval().contains(&[f64::NAN], false),
            Err(GeometryError::NonFinitePoint(_))
        ));
        assert!(matches!(
            unit_disc().contains(&[0.1], false),
            Err(GeometryError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn signed_distance_catalog() {
        let q = unit_interval();
        assert_eq!(q.signed_distance(&[0.3]).unwrap(), -0.3);
        assert_relative_eq!(q.signed_distance(&[1.2]).unwrap(), 0.2, max_relative = 1e-12);

        let b = unit_disc();
        assert!(b.signed_distance(&[0.6, 0.8]).unwrap().abs() < 1e-12);
        assert_relative_eq!(b.signed_distance(&[0.3, 0.4]).unwrap(), -0.5);

        let a = Domain::annulus(vec![0.0, 0.0], 0.5, 1.0).unwrap();
        assert_relative_eq!(a.signed_distance(&[0.75, 0.0]).unwrap(), -0.25);
        assert_relative_eq!(a.signed_distance(&[0.25, 0.0]).unwrap(), 0.25);

        let bx = Domain::cuboid(vec![0.0, 0.0], vec![2.0, 1.0]).unwrap();
        assert_relative_eq!(bx.signed_distance(&[1.0, 0.5]).unwrap(), -0.5);
        assert_relative_eq!(bx.signed_distance(&[3.0, 2.0]).unwrap(), 2.0_f64.sqrt());
    }

    #[test]
    fn erode_dilate_examples() {
        let q = unit_interval().erode(0.25).unwrap();
        match q {
            Domain::Interval { a, b } => assert_eq!((a, b), (0.25, 0.75)),
            _ => panic!("expected interval"),
        }
        assert!(matches!(
            unit_interval().erode(0.6),
            Err(GeometryError::EmptyErosion { .. })
        ));

        match unit_disc().erode(0.5).unwrap() {
            Domain::Ball { radius, .. } => assert_eq!(radius, 0.5),
            _ => panic!("expected ball"),
        }

        let ann = Domain::annulus(vec![0.0, 0.0], 0.5, 1.0).unwrap();
        match ann.dilate(0.25).unwrap() {
            Domain::Annulus {
                r_inner, r_outer, ..
            } => assert_eq!((r_inner, r_outer), (0.25, 1.25)),
            _ => panic!("expected annulus"),
        }
        // Filling the hole turns it into a ball.
        match ann.dilate(0.5).unwrap() {
            Domain::Ball { radius, .. } => assert_eq!(radius, 1.5),
            _ => panic!("expected ball"),
        }
    }

    #[test]
    fn erode_then_dilate_stays_inside_original() {
        let domains = vec![
            unit_interval(),
            Domain::cuboid(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap(),
            unit_disc(),
            Domain::annulus(vec![0.0, 0.0], 0.4, 1.0).unwrap(),
        ];
        for d in domains {
            let eps = 0.1;
            let rebuilt = d.erode(eps).unwrap().dilate(eps).unwrap();
            // Up to roundoff in eps arithmetic the rebuilt set cannot poke
            // outside the original.
            for p in rebuilt.sample_closure(200).unwrap() {
                assert!(
                    d.signed_distance(&p).unwrap() <= 1e-9,
                    "{:?} escaped the original {:?}",
                    p,
                    d.kind_name()
                );
            }
        }
    }

    #[test]
    fn exterior_ball_catalog_and_probe() {
        assert!(matches!(
            unit_interval().exterior_ball().unwrap(),
            ExteriorBall::Satisfied { .. }
        ));
        assert!(matches!(
            Domain::annulus(vec![0.0, 0.0], 0.5, 1.0)
                .unwrap()
                .exterior_ball()
                .unwrap(),
            ExteriorBall::Satisfied { radius } if radius == 0.5
        ));

        // Implicit unit disc: the probe certifies a radius.
        let g = expr::parse("x1^2 + x2^2 - 1", 2).unwrap();
        let d = Domain::implicit(g, vec![-1.1, -1.1], vec![1.1, 1.1]).unwrap();
        match d.exterior_ball().unwrap() {
            ExteriorBall::Satisfied { radius } => assert!(radius > 0.0),
            other => panic!("expected probe certificate, got {:?}", other),
        }
    }

    #[test]
    fn slit_disc_probe_is_unknown() {
        // Unit disc minus the slit {(t, 0): t >= 0}: min(x1, -abs(x2)) is
        // nonnegative exactly on the slit.
        let g = expr::parse("max(x1^2 + x2^2 - 1, min(x1, -abs(x2)))", 2).unwrap();
        let d = Domain::implicit(g, vec![-1.1, -1.1], vec![1.1, 1.1]).unwrap();
        assert!(!d.contains(&[0.5, 0.0], false).unwrap());
        assert!(d.contains(&[0.5, 0.1], false).unwrap());
        match d.exterior_ball().unwrap() {
            ExteriorBall::Unknown { .. } => {}
            other => panic!("slit should defeat the probe, got {:?}", other),
        }
    }

    #[test]
    fn grid_mode_reports_landing_state() {
        let q = Domain::interval(-1.0, 0.95).unwrap();
        let mut no_draws = || panic!("grid mode must not draw");
        let c = exit_event(&q, &[0.9], &[1.0], Refinement::Grid, None, &mut no_draws)
            .unwrap()
            .expect("crossing");
        assert_eq!(c.fraction, 1.0);
        assert_eq!(c.point, vec![1.0]);
        assert_eq!(c.kind, ExitKind::OpenAndClosed);
    }

    #[test]
    fn interpolation_snaps_to_the_face() {
        let q = unit_interval();
        let mut no_draws = || panic!("no bridge draws expected");
        let c = exit_event(&q, &[0.9], &[1.05], Refinement::Interpolate, None, &mut no_draws)
            .unwrap()
            .expect("crossing");
        assert_relative_eq!(c.fraction, 2.0 / 3.0, max_relative = 1e-12);
        assert_eq!(c.point, vec![1.0]);
        assert_eq!(c.kind, ExitKind::OpenAndClosed);
    }

    #[test]
    fn bridge_touch_probability_matches_formula() {
        let q = unit_interval();
        let nv = [1.0];
        let params = BridgeParams {
            dt: 1e-4,
            normal_var: &nv,
        };
        // exp(-2 * 0.01 * 0.02 / 1e-4) = exp(-4) ~ 0.0183. The low face is
        // below the cutoff, so exactly one draw happens.
        let p_touch = (-4.0f64).exp();
        let mut draws = vec![p_touch - 1e-4].into_iter();
        let mut take = || draws.next().expect("one draw");
        let c = exit_event(&q, &[0.99], &[0.98], Refinement::Bridge, Some(&params), &mut take)
            .unwrap()
            .expect("touch fires when u < p");
        assert_eq!(c.kind, ExitKind::Open);
        assert_eq!(c.point, vec![1.0]);
        assert_relative_eq!(c.fraction, 0.01 / 0.03, max_relative = 1e-12);

        let mut draws = vec![p_touch + 1e-4].into_iter();
        let mut take = || draws.next().expect("one draw");
        let c = exit_event(&q, &[0.99], &[0.98], Refinement::Bridge, Some(&params), &mut take)
            .unwrap();
        assert!(c.is_none(), "touch must not fire when u > p");
    }

    #[test]
    fn annulus_chord_through_the_hole_is_detected() {
        let ann = Domain::annulus(vec![0.0, 0.0], 0.5, 1.0).unwrap();
        let mut no_draws = || panic!("no draws");
        let c = exit_event(
            &ann,
            &[0.7, 0.0],
            &[-0.7, 0.0],
            Refinement::Interpolate,
            None,
            &mut no_draws,
        )
        .unwrap()
        .expect("chord crosses the hole");
        assert_eq!(c.kind, ExitKind::OpenAndClosed);
        assert_relative_eq!(c.fraction, 1.0 / 7.0, max_relative = 1e-9);
        assert_relative_eq!(c.point[0], 0.5, max_relative = 1e-9);
        // In grid mode the same step is invisible.
        let mut no_draws = || panic!("no draws");
        assert!(exit_event(
            &ann,
            &[0.7, 0.0],
            &[-0.7, 0.0],
            Refinement::Grid,
            None,
            &mut no_draws
        )
        .unwrap()
        .is_none());
    }

    #[test]
    fn ball_exit_is_snapped_to_the_sphere() {
        let b = unit_disc();
        let mut no_draws = || 0.5;
        let c = exit_event(
            &b,
            &[0.9, 0.0],
            &[1.2, 0.3],
            Refinement::Interpolate,
            None,
            &mut no_draws,
        )
        .unwrap()
        .expect("crossing");
        assert_relative_eq!(linalg::norm2(&c.point), 1.0, max_relative = 1e-12);
        assert!(c.fraction > 0.0 && c.fraction < 1.0);
    }

    #[test]
    fn interior_steps_report_nothing() {
        let q = unit_interval();
        let mut no_draws = || panic!("no draws without bridge mode");
        assert!(exit_event(&q, &[0.4], &[0.5], Refinement::Interpolate, None, &mut no_draws)
            .unwrap()
            .is_none());
    }

    #[test]
    fn boundary_projection() {
        assert_eq!(unit_interval().project_to_boundary(&[0.3]).unwrap(), vec![0.0]);
        assert_eq!(unit_interval().project_to_boundary(&[0.7]).unwrap(), vec![1.0]);
        let p = unit_disc().project_to_boundary(&[0.3, 0.0]).unwrap();
        assert_relative_eq!(p[0], 1.0, max_relative = 1e-12);
        let p = unit_disc().project_to_boundary(&[3.0, 4.0]).unwrap();
        assert_relative_eq!(linalg::norm2(&p), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn default_refinement_per_kind() {
        assert_eq!(unit_interval().default_refinement(), Refinement::Bridge);
        assert_eq!(unit_disc().default_refinement(), Refinement::Interpolate);
    }

    #[test]
    fn implicit_domain_membership_and_projection() {
        let g = expr::parse("x1^2 + x2^2 - 1", 2).unwrap();
        let d = Domain::implicit(g, vec![-1.5, -1.5], vec![1.5, 1.5]).unwrap();
        assert!(d.contains(&[0.5, 0.5], false).unwrap());
        assert!(!d.contains(&[0.9, 0.9], false).unwrap());
        let z = d.project_to_boundary(&[0.9, 0.9]).unwrap();
        assert_relative_eq!(linalg::norm2(&z), 1.0, max_relative = 1e-6);
        let sd = d.signed_distance(&[0.0, 0.0]).unwrap();
        assert_relative_eq!(sd, -1.0, max_relative = 1e-6);
    }
}
