//! Strong Lipschitz patches in R^3: the cylinder `C_{eps,h}(p)` around an
//! anchor point, the orthonormal frame `(w1, w2 | v)`, the graph function `a`
//! over the chart domain `U`, and everything derived from them.
//!
//! Chart: `k(zeta) = W^T (zeta - p)`. Inverse chart:
//! `k^{-1}(x) = p + x1 w1 + x2 w2 + a(x) v`.

use std::sync::Arc;

use log::warn;

use crate::calculus::{PlanarScalarField, Support, VolumeScalar};
use crate::error::{Error, Result};
use crate::expr::{lipschitz_bound, Expr, Rect, RidgeSet, SurfaceExpr};
use crate::smallmat::{cross, pinv_3x2, Mat2x2, Mat3x2, Vec2, Vec3};

/// Tolerance for frame orthonormality and `w1 x w2 = v`.
pub const FRAME_TOLERANCE: f64 = 1e-12;

/// Slack allowed when testing membership in the chart domain.
pub const CHART_TOLERANCE: f64 = 1e-12;

/// Samples per axis of the grid on which `sup |a| < h/2` is validated.
pub const VALIDATION_SAMPLES: usize = 101;

/// Frames whose Gram-Schmidt correction exceeds this are reported.
pub const FRAME_ADJUSTMENT_WARNING: f64 = 1e-8;

/// Maximum mismatch between `T(x)` and the graph of the target chart.
pub const OVERLAP_TOLERANCE: f64 = 1e-9;

/// Chart domain `U`: a disk centred at the origin or an axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChartDomain {
    Rect(Rect),
    Disk { radius: f64 },
}

impl ChartDomain {
    pub fn rect(x1: (f64, f64), x2: (f64, f64)) -> ChartDomain {
        ChartDomain::Rect(Rect::new(x1, x2))
    }

    pub fn contains(&self, x: Vec2, slack: f64) -> bool {
        match self {
            ChartDomain::Rect(r) => r.contains(x, slack),
            ChartDomain::Disk { radius } => x.norm() <= radius + slack,
        }
    }

    pub fn bounding_rect(&self) -> Rect {
        match self {
            ChartDomain::Rect(r) => *r,
            ChartDomain::Disk { radius } => Rect::new((-radius, *radius), (-radius, *radius)),
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            ChartDomain::Rect(r) => r.area(),
            ChartDomain::Disk { radius } => std::f64::consts::PI * radius * radius,
        }
    }

    /// True when the closed box lies in the open domain.
    pub fn contains_box_strictly(&self, b: &Rect) -> bool {
        match self {
            ChartDomain::Rect(r) => (0..2).all(|i| b.lo[i] > r.lo[i] && b.hi[i] < r.hi[i]),
            ChartDomain::Disk { radius } => b.corners().iter().all(|c| c.norm() < *radius),
        }
    }

    /// Points of a uniform `n x n` grid over the bounding rectangle that lie in
    /// the closed domain.
    pub fn sample_grid(&self, n: usize) -> Vec<Vec2> {
        let r = self.bounding_rect();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            let t1 = i as f64 / (n - 1) as f64;
            for j in 0..n {
                let t2 = j as f64 / (n - 1) as f64;
                let x = Vec2::new(r.lo[0] + t1 * (r.hi[0] - r.lo[0]), r.lo[1] + t2 * (r.hi[1] - r.lo[1]));
                if self.contains(x, 0.0) {
                    out.push(x);
                }
            }
        }
        out
    }

    /// `n` points along the boundary, corners included for rectangles.
    pub fn boundary_samples(&self, n: usize) -> Vec<Vec2> {
        match self {
            ChartDomain::Rect(r) => {
                let c = r.corners();
                let per_side = n.div_ceil(4).max(1);
                let mut out = Vec::with_capacity(4 * per_side);
                for k in 0..4 {
                    let (a, b) = (c[k], c[(k + 1) % 4]);
                    for j in 0..per_side {
                        let t = j as f64 / per_side as f64;
                        out.push(a + (b - a) * t);
                    }
                }
                out
            }
            ChartDomain::Disk { radius } => (0..n)
                .map(|j| {
                    let t = std::f64::consts::TAU * j as f64 / n as f64;
                    Vec2::new(radius * t.cos(), radius * t.sin())
                })
                .collect(),
        }
    }
}

/// Orthonormal frame `(w1, w2)` with normal `v = w1 x w2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub w1: Vec3,
    pub w2: Vec3,
    pub v: Vec3,
}

impl Frame {
    pub fn identity() -> Frame {
        Frame {
            w1: Vec3::unit(0),
            w2: Vec3::unit(1),
            v: Vec3::unit(2),
        }
    }

    /// Validates `W^T W = I` and derives `v = w1 x w2`.
    pub fn new(w1: Vec3, w2: Vec3) -> Result<Frame> {
        let frame = Frame {
            w1,
            w2,
            v: cross(w1, w2),
        };
        frame.validate()?;
        Ok(frame)
    }

    /// Frame from explicit `(w1, w2, v)`, checked against `w1 x w2 = v`.
    pub fn with_normal(w1: Vec3, w2: Vec3, v: Vec3) -> Result<Frame> {
        let frame = Frame { w1, w2, v };
        frame.validate()?;
        let defect = (cross(w1, w2) - v).max_abs();
        if defect > FRAME_TOLERANCE {
            return Err(Error::InvalidPatch(format!("w1 x w2 differs from v by {defect:e}")));
        }
        Ok(frame)
    }

    /// Gram-Schmidt orthonormalization of two vectors. Returns the frame and
    /// the largest change applied to an input component.
    pub fn orthonormalized(w1: Vec3, w2: Vec3) -> Result<(Frame, f64)> {
        let n1 = w1.norm();
        if !(n1 > 0.0) || !w1.is_finite() || !w2.is_finite() {
            return Err(Error::InvalidPatch("frame vectors must be finite and nonzero".into()));
        }
        let u1 = w1.scale(1.0 / n1);
        let r2 = w2 - u1.scale(u1.dot(&w2));
        let n2 = r2.norm();
        if !(n2 > 1e-8 * w2.norm()) {
            return Err(Error::InvalidPatch("frame vectors are parallel".into()));
        }
        let u2 = r2.scale(1.0 / n2);
        let adjustment = (u1 - w1).max_abs().max((u2 - w2).max_abs());
        let frame = Frame::new(u1, u2)?;
        if adjustment > FRAME_ADJUSTMENT_WARNING {
            warn!("frame orthonormalized, largest component change {adjustment:e}");
        }
        Ok((frame, adjustment))
    }

    fn validate(&self) -> Result<()> {
        let w = self.matrix();
        let defect = (w.gram() - Mat2x2::identity()).max_abs();
        if !(defect <= FRAME_TOLERANCE) {
            return Err(Error::InvalidPatch(format!(
                "frame is not orthonormal (defect {defect:e})"
            )));
        }
        Ok(())
    }

    /// The 3x2 matrix `W = [w1 w2]`.
    pub fn matrix(&self) -> Mat3x2 {
        Mat3x2::from_columns(self.w1, self.w2)
    }

    /// Rotates `(w1, w2)` by `theta` inside their plane; `v` is unchanged.
    pub fn rotated_in_plane(&self, theta: f64) -> Frame {
        let (s, c) = theta.sin_cos();
        Frame {
            w1: self.w1.scale(c) + self.w2.scale(s),
            w2: self.w2.scale(c) - self.w1.scale(s),
            v: self.v,
        }
    }

    /// Rotates `(w1, v)` by `theta` about `w2`.
    pub fn tilted(&self, theta: f64) -> Frame {
        let (s, c) = theta.sin_cos();
        Frame {
            w1: self.w1.scale(c) + self.v.scale(s),
            w2: self.w2,
            v: self.v.scale(c) - self.w1.scale(s),
        }
    }
}

/// Graph function of a patch.
#[derive(Debug, Clone)]
pub enum GraphFunction {
    /// Explicit expression in chart coordinates.
    Expr(SurfaceExpr),
    /// The surface of another (smooth) patch, re-expressed over a new frame by
    /// root finding along the new normal.
    Implicit(Box<ImplicitGraph>),
}

/// The graph of `source` seen from the frame `(p, frame)`: `a(x)` is the `s`
/// solving `p + W x + s v in source surface`, searched in `[-bracket, bracket]`.
#[derive(Debug, Clone)]
pub struct ImplicitGraph {
    source: LipschitzPatch,
    p: Vec3,
    frame: Frame,
    bracket: f64,
}

const ROOT_SCAN_INTERVALS: usize = 32;
const ROOT_MAX_ITERATIONS: usize = 200;

impl ImplicitGraph {
    fn defect(&self, base: Vec3, s: f64) -> Result<f64> {
        let zeta = base + self.frame.v.scale(s);
        let y = self.source.chart_forward(zeta);
        Ok(self.source.normal_coordinate(zeta) - self.source.graph_value(y)?)
    }

    fn value(&self, x: Vec2) -> Result<f64> {
        let base = self.p + self.frame.matrix() * x;
        let b = self.bracket;
        let mut best: Option<(f64, f64, f64, f64)> = None;
        let mut prev_s = -b;
        let mut prev_g = self.defect(base, prev_s)?;
        if prev_g == 0.0 {
            return Ok(prev_s);
        }
        for k in 1..=ROOT_SCAN_INTERVALS {
            let s = -b + 2.0 * b * k as f64 / ROOT_SCAN_INTERVALS as f64;
            let g = self.defect(base, s)?;
            if g == 0.0 {
                return Ok(s);
            }
            if (g < 0.0) != (prev_g < 0.0) {
                let closer = best.is_none_or(|(lo, _, hi, _)| (s + prev_s).abs() < (lo + hi).abs());
                if closer {
                    best = Some((prev_s, prev_g, s, g));
                }
            }
            prev_s = s;
            prev_g = g;
        }
        let (mut lo, mut glo, mut hi, mut ghi) = best
            .ok_or_else(|| Error::RootFinding(format!("no sign change along the normal over ({}, {})", x[0], x[1])))?;
        // Illinois variant of regula falsi, falling back to bisection
        let mut side = 0;
        for _ in 0..ROOT_MAX_ITERATIONS {
            if hi - lo <= 4.0 * f64::EPSILON * (1.0 + lo.abs().max(hi.abs())) {
                break;
            }
            let mut s = (lo * ghi - hi * glo) / (ghi - glo);
            if !(s > lo && s < hi) {
                s = 0.5 * (lo + hi);
            }
            let g = self.defect(base, s)?;
            if g == 0.0 {
                return Ok(s);
            }
            if (g < 0.0) == (glo < 0.0) {
                lo = s;
                glo = g;
                if side == -1 {
                    ghi *= 0.5;
                }
                side = -1;
            } else {
                hi = s;
                ghi = g;
                if side == 1 {
                    glo *= 0.5;
                }
                side = 1;
            }
        }
        Ok(if glo.abs() < ghi.abs() { lo } else { hi })
    }

    /// Gradient by the implicit function theorem applied to the defect.
    fn value_and_gradient(&self, x: Vec2) -> Result<(f64, Vec2)> {
        let s = self.value(x)?;
        let zeta = self.p + self.frame.matrix() * x + self.frame.v.scale(s);
        let src = &self.source;
        let y = src.chart_forward(zeta);
        let ga = src.graph_gradient(y)?;
        let wt = src.frame.matrix().transpose();
        let dir = |d: Vec3| src.frame.v.dot(&d) - ga.dot(&(wt * d));
        let ds = dir(self.frame.v);
        if !(ds.abs() > 1e-8) {
            return Err(Error::RootFinding(format!(
                "new normal is tangent to the source surface over ({}, {})",
                x[0], x[1]
            )));
        }
        let g = Vec2::new(-dir(self.frame.w1) / ds, -dir(self.frame.w2) / ds);
        Ok((s, g))
    }
}

/// Geometric data of a chart at one point of `U`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartPoint {
    pub x: Vec2,
    /// `k^{-1}(x)`.
    pub point: Vec3,
    /// `dk^{-1}(x)`.
    pub jacobian: Mat3x2,
    /// `1 + |grad a(x)|^2`.
    pub gram_det: f64,
    pub sqrt_gram: f64,
    /// Outward unit normal at `k^{-1}(x)`.
    pub normal: Vec3,
}

/// A boundary patch `Gamma = {p + W x + a(x) v : x in U}` inside the cylinder
/// `C_{eps,h}(p)`, with the domain below the graph.
#[derive(Debug, Clone)]
pub struct LipschitzPatch {
    name: String,
    p: Vec3,
    frame: Frame,
    epsilon: f64,
    h: f64,
    graph: GraphFunction,
    domain: ChartDomain,
    sup_abs_graph: f64,
    lipschitz: f64,
}

static NO_RIDGES: RidgeSet = RidgeSet::EMPTY;

impl LipschitzPatch {
    pub fn new(
        name: impl Into<String>,
        p: Vec3,
        frame: Frame,
        epsilon: f64,
        h: f64,
        graph: SurfaceExpr,
        domain: ChartDomain,
    ) -> Result<LipschitzPatch> {
        if graph.ast().contains_sign() {
            return Err(Error::InvalidPatch(
                "graph function uses sign(), which is not Lipschitz".into(),
            ));
        }
        LipschitzPatch::from_graph(name.into(), p, frame, epsilon, h, GraphFunction::Expr(graph), domain)
    }

    /// Identity frame anchored at the origin.
    pub fn standard(
        name: impl Into<String>,
        graph: &str,
        domain: ChartDomain,
        epsilon: f64,
        h: f64,
    ) -> Result<LipschitzPatch> {
        LipschitzPatch::new(
            name,
            Vec3::ZERO,
            Frame::identity(),
            epsilon,
            h,
            SurfaceExpr::parse(graph)?,
            domain,
        )
    }

    fn from_graph(
        name: String,
        p: Vec3,
        frame: Frame,
        epsilon: f64,
        h: f64,
        graph: GraphFunction,
        domain: ChartDomain,
    ) -> Result<LipschitzPatch> {
        frame.validate()?;
        if !(epsilon > 0.0 && epsilon.is_finite() && h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidPatch(format!(
                "need eps > 0 and h > 0, got eps={epsilon}, h={h}"
            )));
        }
        if !p.is_finite() {
            return Err(Error::InvalidPatch("anchor point is not finite".into()));
        }
        match domain {
            ChartDomain::Rect(r) => {
                if !(r.lo[0] < r.hi[0] && r.lo[1] < r.hi[1]) {
                    return Err(Error::InvalidPatch("empty chart rectangle".into()));
                }
                for c in r.corners() {
                    if c.norm() > epsilon * (1.0 + CHART_TOLERANCE) {
                        return Err(Error::InvalidPatch(format!(
                            "chart rectangle corner ({}, {}) lies outside the ball of radius {epsilon}",
                            c[0], c[1]
                        )));
                    }
                }
            }
            ChartDomain::Disk { radius } => {
                if !(radius > 0.0 && radius <= epsilon * (1.0 + CHART_TOLERANCE)) {
                    return Err(Error::InvalidPatch(format!(
                        "chart disk radius {radius} must lie in (0, {epsilon}]"
                    )));
                }
            }
        }
        let mut patch = LipschitzPatch {
            name,
            p,
            frame,
            epsilon,
            h,
            graph,
            domain,
            sup_abs_graph: 0.0,
            lipschitz: 0.0,
        };
        let mut sup = 0.0_f64;
        let mut lip = 0.0_f64;
        for x in domain.sample_grid(VALIDATION_SAMPLES) {
            let a = patch
                .graph_value(x)
                .map_err(|e| Error::InvalidPatch(format!("graph function fails at ({}, {}): {e}", x[0], x[1])))?;
            sup = sup.max(a.abs());
            if let GraphFunction::Implicit(g) = &patch.graph {
                let (_, grad) = g.value_and_gradient(x)?;
                lip = lip.max(grad.norm());
            }
        }
        if !(sup < 0.5 * h) {
            return Err(Error::InvalidPatch(format!(
                "sup |a| = {sup} violates sup |a| < h/2 = {}",
                0.5 * h
            )));
        }
        if let GraphFunction::Expr(e) = &patch.graph {
            lip = lipschitz_bound(e, &domain.bounding_rect());
        }
        if !lip.is_finite() {
            return Err(Error::InvalidPatch(
                "graph function has no finite Lipschitz bound".into(),
            ));
        }
        patch.sup_abs_graph = sup;
        patch.lipschitz = lip;
        Ok(patch)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> LipschitzPatch {
        self.name = name.into();
        self
    }

    pub fn anchor(&self) -> Vec3 {
        self.p
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn half_height(&self) -> f64 {
        self.h
    }

    pub fn domain(&self) -> &ChartDomain {
        &self.domain
    }

    pub fn graph(&self) -> &GraphFunction {
        &self.graph
    }

    /// The graph expression, when the graph is explicit.
    pub fn graph_expr(&self) -> Option<&SurfaceExpr> {
        match &self.graph {
            GraphFunction::Expr(e) => Some(e),
            GraphFunction::Implicit(_) => None,
        }
    }

    /// `sup |a|` over the validation grid.
    pub fn sup_abs_graph(&self) -> f64 {
        self.sup_abs_graph
    }

    /// Empirical Lipschitz constant of `a` (a lower bound of the true one).
    pub fn lipschitz_estimate(&self) -> f64 {
        self.lipschitz
    }

    pub fn ridges(&self) -> &RidgeSet {
        match &self.graph {
            GraphFunction::Expr(e) => e.ridges(),
            GraphFunction::Implicit(_) => &NO_RIDGES,
        }
    }

    /// `a(x)`, without checking `x in U`.
    pub fn graph_value(&self, x: Vec2) -> Result<f64> {
        match &self.graph {
            GraphFunction::Expr(e) => e.eval(x),
            GraphFunction::Implicit(g) => g.value(x),
        }
    }

    fn value_and_gradient(&self, x: Vec2) -> Result<(f64, Vec2)> {
        if self.ridges().contains(x) {
            return Err(Error::OnRidge { x1: x[0], x2: x[1] });
        }
        match &self.graph {
            GraphFunction::Expr(e) => Ok((e.eval(x)?, e.gradient(x)?)),
            GraphFunction::Implicit(g) => g.value_and_gradient(x),
        }
    }

    /// `grad a(x)`; fails on ridges.
    pub fn graph_gradient(&self, x: Vec2) -> Result<Vec2> {
        Ok(self.value_and_gradient(x)?.1)
    }

    /// `v . (zeta - p)`, the coordinate along the frame normal.
    pub fn normal_coordinate(&self, zeta: Vec3) -> f64 {
        self.frame.v.dot(&(zeta - self.p))
    }

    /// `k(zeta) = W^T (zeta - p)`.
    pub fn chart_forward(&self, zeta: Vec3) -> Vec2 {
        let d = zeta - self.p;
        Vec2::new(self.frame.w1.dot(&d), self.frame.w2.dot(&d))
    }

    /// `p + x1 w1 + x2 w2 + a(x) v`, without checking `x in U`.
    pub fn graph_point(&self, x: Vec2) -> Result<Vec3> {
        Ok(self.flat_point(x) + self.frame.v.scale(self.graph_value(x)?))
    }

    /// `p + x1 w1 + x2 w2`.
    pub fn flat_point(&self, x: Vec2) -> Vec3 {
        self.p + self.frame.w1.scale(x[0]) + self.frame.w2.scale(x[1])
    }

    fn check_domain(&self, x: Vec2) -> Result<()> {
        if x.is_finite() && self.domain.contains(x, CHART_TOLERANCE) {
            Ok(())
        } else {
            Err(Error::OutOfChart { x1: x[0], x2: x[1] })
        }
    }

    /// `k^{-1}(x)`.
    pub fn chart_inverse(&self, x: Vec2) -> Result<Vec3> {
        self.check_domain(x)?;
        self.graph_point(x)
    }

    /// `dk^{-1}(x) = [w1 + d1 a v, w2 + d2 a v]`.
    pub fn jacobian_inverse_chart(&self, x: Vec2) -> Result<Mat3x2> {
        self.check_domain(x)?;
        let g = self.graph_gradient(x)?;
        Ok(self.jacobian_from_gradient(g))
    }

    fn jacobian_from_gradient(&self, g: Vec2) -> Mat3x2 {
        let f = &self.frame;
        Mat3x2::from_columns(f.w1 + f.v.scale(g[0]), f.w2 + f.v.scale(g[1]))
    }

    /// `det((dk^{-1})^T dk^{-1}) = 1 + |grad a|^2`.
    pub fn gram_det(&self, x: Vec2) -> Result<f64> {
        self.check_domain(x)?;
        let g = self.graph_gradient(x)?;
        Ok(1.0 + g.norm_squared())
    }

    /// `(v - d1 a w1 - d2 a w2) / sqrt(1 + |grad a|^2)`.
    pub fn unit_normal(&self, x: Vec2) -> Result<Vec3> {
        self.check_domain(x)?;
        let g = self.graph_gradient(x)?;
        Ok(self.normal_from_gradient(g))
    }

    fn normal_from_gradient(&self, g: Vec2) -> Vec3 {
        let f = &self.frame;
        (f.v - f.w1.scale(g[0]) - f.w2.scale(g[1])).scale(1.0 / (1.0 + g.norm_squared()).sqrt())
    }

    /// Point, Jacobian, Gram determinant and normal at `x` in one pass.
    pub fn local_frame(&self, x: Vec2) -> Result<ChartPoint> {
        self.check_domain(x)?;
        let (a, g) = self.value_and_gradient(x)?;
        let gram_det = 1.0 + g.norm_squared();
        Ok(ChartPoint {
            x,
            point: self.flat_point(x) + self.frame.v.scale(a),
            jacobian: self.jacobian_from_gradient(g),
            gram_det,
            sqrt_gram: gram_det.sqrt(),
            normal: self.normal_from_gradient(g),
        })
    }

    /// The same surface over the frame rotated in-plane by `theta`; the new
    /// graph is `a(R x)` with `R` the rotation by `theta`, so ridges carry over.
    pub fn rotated_in_plane(&self, name: impl Into<String>, theta: f64, domain: ChartDomain) -> Result<LipschitzPatch> {
        let frame = self.frame.rotated_in_plane(theta);
        let graph = match &self.graph {
            GraphFunction::Expr(e) => {
                let (s, c) = theta.sin_cos();
                let x1 = Expr::affine(0.0, c, -s);
                let x2 = Expr::affine(0.0, s, c);
                GraphFunction::Expr(SurfaceExpr::from_ast(e.ast().substitute(&x1, &x2))?)
            }
            GraphFunction::Implicit(_) => {
                return self.reframed(name, self.p, frame, self.epsilon, self.h, domain);
            }
        };
        let patch = LipschitzPatch::from_graph(name.into(), self.p, frame, self.epsilon, self.h, graph, domain)?;
        self.ensure_covers(&patch)?;
        Ok(patch)
    }

    /// The same surface over an arbitrary frame. Planar sources give a closed
    /// form affine graph; smooth sources an implicit graph evaluated by root
    /// finding along the new normal. Sources with ridges are rejected because
    /// their ridges are generally curved in a tilted chart.
    pub fn reframed(
        &self,
        name: impl Into<String>,
        p: Vec3,
        frame: Frame,
        epsilon: f64,
        h: f64,
        domain: ChartDomain,
    ) -> Result<LipschitzPatch> {
        let affine = self.graph_expr().and_then(|e| e.as_affine());
        let graph = if let Some([c0, c1, c2]) = affine {
            // source plane: n . zeta = n . p_s + c0 with n = v_s - c1 w1_s - c2 w2_s
            let s = &self.frame;
            let n = s.v - s.w1.scale(c1) - s.w2.scale(c2);
            let nv = n.dot(&frame.v);
            if !(nv.abs() > 1e-8 * n.norm()) {
                return Err(Error::InvalidPatch("new normal lies in the source plane".into()));
            }
            let rhs = n.dot(&self.p) + c0 - n.dot(&p);
            let snap = |t: f64| if t.abs() < 1e-15 { 0.0 } else { t };
            let d0 = snap(rhs / nv);
            let d1 = snap(-n.dot(&frame.w1) / nv);
            let d2 = snap(-n.dot(&frame.w2) / nv);
            GraphFunction::Expr(SurfaceExpr::from_ast(Expr::affine(d0, d1, d2))?)
        } else {
            if !self.ridges().is_empty() {
                return Err(Error::InvalidPatch(
                    "only smooth or planar patches can be re-expressed over a tilted frame".into(),
                ));
            }
            GraphFunction::Implicit(Box::new(ImplicitGraph {
                source: self.clone(),
                p,
                frame,
                bracket: h,
            }))
        };
        let patch = LipschitzPatch::from_graph(name.into(), p, frame, epsilon, h, graph, domain)?;
        self.ensure_covers(&patch)?;
        Ok(patch)
    }

    fn ensure_covers(&self, other: &LipschitzPatch) -> Result<()> {
        if other.maps_into(self) {
            Ok(())
        } else {
            Err(Error::OutOfOverlap(format!(
                "chart domain of `{}` is not contained in `{}`",
                other.name, self.name
            )))
        }
    }

    /// True when sampled points of this patch's domain (boundary and a coarse
    /// interior grid) land in the chart domain of `target`.
    pub fn maps_into(&self, target: &LipschitzPatch) -> bool {
        let mut samples = self.domain.boundary_samples(128);
        samples.extend(self.domain.sample_grid(21));
        samples.iter().all(|&x| match self.graph_point(x) {
            Ok(z) => target.domain.contains(target.chart_forward(z), CHART_TOLERANCE),
            Err(_) => false,
        })
    }

    /// The cutoff used for strip extensions and lifted fields: with
    /// `A = sup |a|`, the profile is one up to `r0 = (A + h) / 2` (half the
    /// gap between the graph and the cylinder lid) and vanishes from
    /// `r1 = (r0 + h) / 2` on.
    pub fn default_cutoff(&self) -> CutoffProfile {
        let r0 = 0.5 * (self.sup_abs_graph + self.h);
        let r1 = 0.5 * (r0 + self.h);
        CutoffProfile { r0, r1 }
    }

    /// Checks that a test support box and a vertical cutoff keep a field
    /// inside the cylinder and equal to its chart data on the graph.
    pub fn check_support(&self, support: &Rect, cutoff: &CutoffProfile) -> Result<()> {
        if !self.domain.contains_box_strictly(support) {
            return Err(Error::SupportViolation(format!(
                "support box [{}, {}] x [{}, {}] touches the chart boundary",
                support.lo[0], support.hi[0], support.lo[1], support.hi[1]
            )));
        }
        if !(cutoff.r0 > self.sup_abs_graph) {
            return Err(Error::SupportViolation(format!(
                "cutoff plateau {} does not cover the graph (sup |a| = {})",
                cutoff.r0, self.sup_abs_graph
            )));
        }
        if !(cutoff.r1 < self.h) {
            return Err(Error::SupportViolation(format!(
                "cutoff radius {} reaches the cylinder lid h = {}",
                cutoff.r1, self.h
            )));
        }
        Ok(())
    }

    /// Support descriptor of a field living over `support` with vertical extent `r1`.
    pub fn local_support(&self, support: &Rect, r1: f64) -> Support {
        let c = Vec2::new(
            0.5 * (support.lo[0] + support.hi[0]),
            0.5 * (support.lo[1] + support.hi[1]),
        );
        let half_diag = 0.5 * (support.hi - support.lo).norm();
        Support {
            center: self.flat_point(c),
            radius: (half_diag * half_diag + r1 * r1).sqrt(),
            patch_local: true,
        }
    }
}

/// `T = k_to o k_from^{-1}`, mapping chart coordinates of `from` to those of `to`.
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub from: &'a LipschitzPatch,
    pub to: &'a LipschitzPatch,
}

impl<'a> Transition<'a> {
    pub fn new(from: &'a LipschitzPatch, to: &'a LipschitzPatch) -> Transition<'a> {
        Transition { from, to }
    }

    /// `T(x)`, checked to land on the graph of `to` inside its domain.
    pub fn map_point(&self, x: Vec2) -> Result<Vec2> {
        let zeta = self.from.chart_inverse(x)?;
        let y = self.to.chart_forward(zeta);
        if !self.to.domain.contains(y, CHART_TOLERANCE) {
            return Err(Error::OutOfOverlap(format!(
                "T({}, {}) = ({}, {}) leaves the target chart",
                x[0], x[1], y[0], y[1]
            )));
        }
        let mismatch = (self.to.normal_coordinate(zeta) - self.to.graph_value(y)?).abs();
        if mismatch > OVERLAP_TOLERANCE * (1.0 + (zeta - self.to.p).norm()) {
            return Err(Error::OutOfOverlap(format!(
                "charts describe different surfaces at ({}, {}) (gap {mismatch:e})",
                x[0], x[1]
            )));
        }
        Ok(y)
    }

    /// `T(x)` and `dT(x) = (dk_to^{-1}(T x))^dagger dk_from^{-1}(x)`.
    pub fn map(&self, x: Vec2) -> Result<(Vec2, Mat2x2)> {
        let y = self.map_point(x)?;
        let a_from = self.from.jacobian_inverse_chart(x)?;
        let a_to = self.to.jacobian_inverse_chart(y)?;
        Ok((y, pinv_3x2(&a_to)? * a_from))
    }
}

/// See [`Transition::map`].
pub fn transition_map(t: &Transition<'_>, x: Vec2) -> Result<(Vec2, Mat2x2)> {
    t.map(x)
}

/// Smooth radial step: one on `[0, r0]`, zero on `[r1, inf)`, and in between
/// `1 / (1 + exp(1/(1-t) - 1/t))` with `t = (r - r0) / (r1 - r0)`, the usual
/// `exp(-1/t)` construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffProfile {
    pub r0: f64,
    pub r1: f64,
}

impl CutoffProfile {
    pub fn new(r0: f64, r1: f64) -> Result<CutoffProfile> {
        if !(r0 > 0.0 && r1 > r0 && r1.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "cutoff needs 0 < r0 < r1, got {r0}, {r1}"
            )));
        }
        Ok(CutoffProfile { r0, r1 })
    }

    fn exponent(t: f64) -> f64 {
        1.0 / (1.0 - t) - 1.0 / t
    }

    pub fn value(&self, r: f64) -> f64 {
        if r <= self.r0 {
            return 1.0;
        }
        if r >= self.r1 {
            return 0.0;
        }
        let u = Self::exponent((r - self.r0) / (self.r1 - self.r0));
        if u > 700.0 {
            0.0
        } else {
            1.0 / (1.0 + u.exp())
        }
    }

    /// `d/dr` of [`CutoffProfile::value`].
    pub fn derivative(&self, r: f64) -> f64 {
        if r <= self.r0 || r >= self.r1 {
            return 0.0;
        }
        let width = self.r1 - self.r0;
        let t = (r - self.r0) / width;
        let u = Self::exponent(t);
        if u.abs() > 700.0 {
            return 0.0;
        }
        let e = u.exp();
        let du = 1.0 / ((1.0 - t) * (1.0 - t)) + 1.0 / (t * t);
        -e / ((1.0 + e) * (1.0 + e)) * du / width
    }
}

/// Normalized bumps `alpha_i = beta_i / sum_j beta_j` over a family of
/// cylinders. `beta_i` is the product of a lateral profile in
/// `|W_i^T (zeta - p_i)|` (plateau `eps/2`, support `eps`) and a vertical
/// profile in `|v_i . (zeta - p_i)|` (plateau `h/2`, support `h`).
#[derive(Debug, Clone)]
pub struct PartitionOfUnity {
    covers: Vec<LipschitzPatch>,
}

/// Smallest admissible bump sum.
pub const COVER_THRESHOLD: f64 = 1e-8;

impl PartitionOfUnity {
    fn lateral(patch: &LipschitzPatch) -> CutoffProfile {
        CutoffProfile {
            r0: 0.5 * patch.epsilon,
            r1: patch.epsilon,
        }
    }

    fn vertical(patch: &LipschitzPatch) -> CutoffProfile {
        CutoffProfile {
            r0: 0.5 * patch.h,
            r1: patch.h,
        }
    }

    /// Unnormalized bump of cover `i`.
    pub fn bump(&self, i: usize, zeta: Vec3) -> f64 {
        let patch = &self.covers[i];
        let r = patch.chart_forward(zeta).norm();
        let s = patch.normal_coordinate(zeta).abs();
        Self::lateral(patch).value(r) * Self::vertical(patch).value(s)
    }

    pub fn len(&self) -> usize {
        self.covers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covers.is_empty()
    }

    /// All weights at `zeta`; fails where the cover has a gap.
    pub fn weights(&self, zeta: Vec3) -> Result<Vec<f64>> {
        let bumps: Vec<f64> = (0..self.covers.len()).map(|i| self.bump(i, zeta)).collect();
        let sum: f64 = bumps.iter().sum();
        if !(sum >= COVER_THRESHOLD) {
            return Err(Error::CoverGap { index: 0, sum });
        }
        Ok(bumps.into_iter().map(|b| b / sum).collect())
    }

    pub fn weight(&self, i: usize, zeta: Vec3) -> Result<f64> {
        Ok(self.weights(zeta)?[i])
    }
}

/// Builds the partition of unity and checks the cover at every sample.
pub fn partition_of_unity(covers: &[LipschitzPatch], samples: &[Vec3]) -> Result<PartitionOfUnity> {
    if covers.is_empty() {
        return Err(Error::InvalidArgument(
            "partition of unity needs at least one cover".into(),
        ));
    }
    let pu = PartitionOfUnity {
        covers: covers.to_vec(),
    };
    for (index, &z) in samples.iter().enumerate() {
        let sum: f64 = (0..pu.len()).map(|i| pu.bump(i, z)).sum();
        if !(sum >= COVER_THRESHOLD) {
            return Err(Error::CoverGap { index, sum });
        }
    }
    Ok(pu)
}

/// Extends a compactly supported chart function constantly along the frame
/// normal and cuts it off vertically: `Phi(zeta) = chi(|v.(zeta-p)|) phi(W^T(zeta-p))`.
pub fn strip_extension(patch: &LipschitzPatch, phi: &PlanarScalarField, cutoff: CutoffProfile) -> Result<VolumeScalar> {
    let support = phi.support();
    patch.check_support(&support, &cutoff)?;
    let frame = patch.frame;
    let p = patch.p;
    let value_phi = Arc::clone(&phi.value);
    let value_phi2 = Arc::clone(&phi.value);
    let grad_phi = Arc::clone(&phi.gradient);
    let chart = move |zeta: Vec3| {
        let d = zeta - p;
        (Vec2::new(frame.w1.dot(&d), frame.w2.dot(&d)), frame.v.dot(&d))
    };
    let value = move |zeta: Vec3| {
        let (y, s) = chart(zeta);
        if !support.contains(y, 0.0) {
            return 0.0;
        }
        let chi = cutoff.value(s.abs());
        if chi == 0.0 {
            0.0
        } else {
            chi * value_phi(y)
        }
    };
    let gradient = move |zeta: Vec3| {
        let (y, s) = chart(zeta);
        if !support.contains(y, 0.0) {
            return Vec3::ZERO;
        }
        let chi = cutoff.value(s.abs());
        let dchi = cutoff.derivative(s.abs()) * s.signum();
        if chi == 0.0 && dchi == 0.0 {
            return Vec3::ZERO;
        }
        let g = grad_phi(y);
        frame.v.scale(dchi * value_phi2(y)) + (frame.w1.scale(g[0]) + frame.w2.scale(g[1])).scale(chi)
    };
    Ok(VolumeScalar::from_parts(
        Arc::new(value),
        Arc::new(gradient),
        patch.local_support(&support, cutoff.r1),
    ))
}
