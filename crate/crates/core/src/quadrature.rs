//! Ridge-aware tensor Gauss-Legendre quadrature on chart domains, surface
//! integrals weighted by `sqrt(1 + |grad a|^2)`, boundary L2 products and
//! integrals over the subgraph `{p + W x + s v : x in U, -h < s < a(x)}`.

use crate::calculus::{Arity, BoundaryField, VolumeScalar};
use crate::charts::{ChartDomain, ChartPoint, LipschitzPatch};
use crate::error::{Error, Result};
use crate::expr::{Rect, RidgeLine};
use crate::smallmat::{Vec2, Vec3};

/// Gauss-Legendre nodes and weights on `[-1, 1]`, by Newton iteration on the
/// three-term recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d.is_finite() { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// `(P_n(t), P_n'(t))`.
pub fn legendre_with_derivative(n: usize, t: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, t);
    let (mut d0, mut d1) = (0.0, 1.0);
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * t * p1 - kf * p0) / (kf + 1.0);
        let d2 = d0 + (2.0 * kf + 1.0) * p1;
        p0 = p1;
        p1 = p2;
        d0 = d1;
        d1 = d2;
    }
    (p1, d1)
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// A quadrature cell of the chart domain.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Rect(Rect),
    Triangle([Vec2; 3]),
    Polar { r: (f64, f64), theta: (f64, f64) },
}

/// A quadrature node with the chart data cached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridNode {
    /// Flat (Lebesgue) weight on `U`.
    pub weight: f64,
    pub chart: ChartPoint,
}

impl GridNode {
    pub fn x(&self) -> Vec2 {
        self.chart.x
    }

    /// Weight against the surface measure, `weight * sqrt(gram_det)`.
    pub fn surface_weight(&self) -> f64 {
        self.weight * self.chart.sqrt_gram
    }
}

/// Quadrature nodes on a chart domain, cells split along ridges and any extra
/// breaklines.
#[derive(Debug, Clone)]
pub struct ChartGrid {
    nodes: Vec<GridNode>,
    cells: Vec<Cell>,
    order: usize,
    refinement: usize,
}

const CLIP_TOLERANCE: f64 = 1e-13;

impl ChartGrid {
    pub fn nodes(&self) -> &[GridNode] {
        &self.nodes
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn refinement(&self) -> usize {
        self.refinement
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Sum of flat weights, the Lebesgue measure of `U`.
    pub fn flat_area(&self) -> f64 {
        pairwise_sum(&self.nodes.iter().map(|n| n.weight).collect::<Vec<_>>())
    }

    /// `sum_i w_i sqrt(g_i) f(node_i)`.
    pub fn integrate_surface(&self, mut f: impl FnMut(&GridNode) -> Result<f64>) -> Result<f64> {
        let terms = self
            .nodes
            .iter()
            .map(|n| Ok(n.surface_weight() * f(n)?))
            .collect::<Result<Vec<f64>>>()?;
        Ok(pairwise_sum(&terms))
    }

    /// `sum_i w_i f(node_i)` against the flat measure on `U`.
    pub fn integrate_flat(&self, mut f: impl FnMut(&GridNode) -> Result<f64>) -> Result<f64> {
        let terms = self
            .nodes
            .iter()
            .map(|n| Ok(n.weight * f(n)?))
            .collect::<Result<Vec<f64>>>()?;
        Ok(pairwise_sum(&terms))
    }
}

/// The four edges of a box as breaklines.
pub fn box_lines(b: &Rect) -> Vec<RidgeLine> {
    [
        RidgeLine::new(-b.lo[0], 1.0, 0.0),
        RidgeLine::new(-b.hi[0], 1.0, 0.0),
        RidgeLine::new(-b.lo[1], 0.0, 1.0),
        RidgeLine::new(-b.hi[1], 0.0, 1.0),
    ]
    .into_iter()
    .flatten()
    .collect()
}

/// Tensor Gauss-Legendre grid of `order` points per direction and cell; the
/// domain is divided uniformly `refinement` times (each step quarters every
/// cell) and then split along the patch ridges.
pub fn build_grid(patch: &LipschitzPatch, order: usize, refinement: usize) -> Result<ChartGrid> {
    build_grid_with_breaklines(patch, order, refinement, &[])
}

/// [`build_grid`] with additional lines along which cells are split, used to
/// align cells with the support boxes of test fields.
pub fn build_grid_with_breaklines(
    patch: &LipschitzPatch,
    order: usize,
    refinement: usize,
    extra: &[RidgeLine],
) -> Result<ChartGrid> {
    if order == 0 {
        return Err(Error::InvalidArgument("quadrature order must be positive".into()));
    }
    if refinement > 10 {
        return Err(Error::InvalidArgument(format!("refinement {refinement} is too large")));
    }
    let mut lines: Vec<RidgeLine> = patch.ridges().lines().to_vec();
    lines.extend_from_slice(extra);
    let cells = match patch.domain() {
        ChartDomain::Rect(r) => rect_cells(r, refinement, &lines),
        ChartDomain::Disk { radius } => polar_cells(*radius, refinement, &lines)?,
    };
    let (gx, gw) = gauss_legendre(order);
    let mut raw: Vec<(Vec2, f64)> = Vec::new();
    for cell in &cells {
        push_cell_nodes(cell, &gx, &gw, &mut raw);
    }
    let nodes = raw
        .into_iter()
        .map(|(x, weight)| {
            Ok(GridNode {
                weight,
                chart: patch.local_frame(x)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChartGrid {
        nodes,
        cells,
        order,
        refinement,
    })
}

/// Grid over a box inside the chart domain, split along the patch ridges.
/// Exact for integrands supported in the box; used on disk domains, whose
/// polar cells cannot follow box edges.
pub fn build_box_grid(patch: &LipschitzPatch, b: &Rect, order: usize, refinement: usize) -> Result<ChartGrid> {
    if order == 0 {
        return Err(Error::InvalidArgument("quadrature order must be positive".into()));
    }
    if refinement > 10 {
        return Err(Error::InvalidArgument(format!("refinement {refinement} is too large")));
    }
    if !b.corners().iter().all(|&c| patch.domain().contains(c, CLIP_TOLERANCE)) {
        return Err(Error::SupportViolation("grid box leaves the chart domain".into()));
    }
    let cells = rect_cells(b, refinement, patch.ridges().lines());
    let (gx, gw) = gauss_legendre(order);
    let mut raw: Vec<(Vec2, f64)> = Vec::new();
    for cell in &cells {
        push_cell_nodes(cell, &gx, &gw, &mut raw);
    }
    let nodes = raw
        .into_iter()
        .map(|(x, weight)| {
            Ok(GridNode {
                weight,
                chart: patch.local_frame(x)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChartGrid {
        nodes,
        cells,
        order,
        refinement,
    })
}

fn rect_cells(r: &Rect, refinement: usize, lines: &[RidgeLine]) -> Vec<Cell> {
    let m = 1usize << refinement;
    let coord = |i: usize, k: usize| {
        if k == m {
            r.hi[i]
        } else {
            r.lo[i] + (r.hi[i] - r.lo[i]) * k as f64 / m as f64
        }
    };
    let mut polys: Vec<Vec<Vec2>> = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            let sub = Rect::new((coord(0, i), coord(0, i + 1)), (coord(1, j), coord(1, j + 1)));
            polys.push(sub.corners().to_vec());
        }
    }
    for line in lines {
        let mut next = Vec::with_capacity(polys.len());
        for poly in polys {
            match split_polygon(&poly, line) {
                Some((a, b)) => {
                    next.push(a);
                    next.push(b);
                }
                None => next.push(poly),
            }
        }
        polys = next;
    }
    let mut cells = Vec::new();
    for poly in polys {
        if let Some(rect) = as_axis_rect(&poly) {
            cells.push(Cell::Rect(rect));
        } else {
            for k in 1..poly.len() - 1 {
                let tri = [poly[0], poly[k], poly[k + 1]];
                if triangle_area(&tri) > 1e-15 * r.area() {
                    cells.push(Cell::Triangle(tri));
                }
            }
        }
    }
    cells
}

fn triangle_area(t: &[Vec2; 3]) -> f64 {
    let (u, v) = (t[1] - t[0], t[2] - t[0]);
    0.5 * (u[0] * v[1] - u[1] * v[0]).abs()
}

fn as_axis_rect(poly: &[Vec2]) -> Option<Rect> {
    if poly.len() != 4 {
        return None;
    }
    let axis_edge = |a: Vec2, b: Vec2| a[0] == b[0] || a[1] == b[1];
    if !(0..4).all(|k| axis_edge(poly[k], poly[(k + 1) % 4])) {
        return None;
    }
    let lo = Vec2::new(
        poly.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min),
        poly.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min),
    );
    let hi = Vec2::new(
        poly.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max),
        poly.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max),
    );
    Some(Rect { lo, hi })
}

/// Splits a convex polygon by a line; `None` when the line does not cross
/// its interior.
fn split_polygon(poly: &[Vec2], line: &RidgeLine) -> Option<(Vec<Vec2>, Vec<Vec2>)> {
    let scale = poly.iter().map(|p| p.max_abs()).fold(1.0, f64::max);
    let tol = CLIP_TOLERANCE * scale;
    let d: Vec<f64> = poly.iter().map(|&p| line.signed_distance(p)).collect();
    if d.iter().all(|&t| t >= -tol) || d.iter().all(|&t| t <= tol) {
        return None;
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let n = poly.len();
    for k in 0..n {
        let (a, b) = (poly[k], poly[(k + 1) % n]);
        let (da, db) = (d[k], d[(k + 1) % n]);
        if da > tol {
            pos.push(a);
        } else if da < -tol {
            neg.push(a);
        } else {
            pos.push(a);
            neg.push(a);
        }
        if (da > tol && db < -tol) || (da < -tol && db > tol) {
            let t = da / (da - db);
            let mut q = a + (b - a) * t;
            // keep axis-parallel cuts exactly on the line
            if line.normal[1] == 0.0 {
                q[0] = -line.offset / line.normal[0];
            } else if line.normal[0] == 0.0 {
                q[1] = -line.offset / line.normal[1];
            }
            pos.push(q);
            neg.push(q);
        }
    }
    if pos.len() < 3 || neg.len() < 3 {
        return None;
    }
    Some((pos, neg))
}

fn polar_cells(radius: f64, refinement: usize, lines: &[RidgeLine]) -> Result<Vec<Cell>> {
    use std::f64::consts::{PI, TAU};
    let mut angles: Vec<f64> = (0..4usize << refinement)
        .map(|k| TAU * k as f64 / (4usize << refinement) as f64)
        .collect();
    for line in lines {
        if line.offset.abs() > 1e-12 {
            return Err(Error::RidgeSplitFailure(format!(
                "line {} + {} x1 + {} x2 = 0 misses the disk centre; polar cells only split along rays",
                line.offset, line.normal[0], line.normal[1]
            )));
        }
        let dir = line.normal[1].atan2(line.normal[0]) + 0.5 * PI;
        for t in [dir, dir + PI] {
            angles.push(t.rem_euclid(TAU));
        }
    }
    angles.sort_by(f64::total_cmp);
    angles.dedup_by(|a, b| (*a - *b).abs() <= 1e-14);
    if angles.len() > 1 && (TAU - angles[angles.len() - 1] + angles[0]).abs() <= 1e-14 {
        angles.pop();
    }
    let radial = 1usize << refinement;
    let mut cells = Vec::new();
    for k in 0..angles.len() {
        let t0 = angles[k];
        let t1 = if k + 1 < angles.len() {
            angles[k + 1]
        } else {
            angles[0] + TAU
        };
        for j in 0..radial {
            let r0 = radius * j as f64 / radial as f64;
            let r1 = if j + 1 == radial {
                radius
            } else {
                radius * (j + 1) as f64 / radial as f64
            };
            cells.push(Cell::Polar {
                r: (r0, r1),
                theta: (t0, t1),
            });
        }
    }
    Ok(cells)
}

fn push_cell_nodes(cell: &Cell, gx: &[f64], gw: &[f64], out: &mut Vec<(Vec2, f64)>) {
    let map = |lo: f64, hi: f64, t: f64| 0.5 * (lo + hi) + 0.5 * (hi - lo) * t;
    match cell {
        Cell::Rect(r) => {
            let jac = 0.25 * (r.hi[0] - r.lo[0]) * (r.hi[1] - r.lo[1]);
            for (i, &u) in gx.iter().enumerate() {
                for (j, &v) in gx.iter().enumerate() {
                    let x = Vec2::new(map(r.lo[0], r.hi[0], u), map(r.lo[1], r.hi[1], v));
                    out.push((x, jac * gw[i] * gw[j]));
                }
            }
        }
        Cell::Triangle([a, b, c]) => {
            // collapsed square: P = a + u (b - a) + u t (c - b), dP = u |det|
            let det = ((*b - *a)[0] * (*c - *b)[1] - (*b - *a)[1] * (*c - *b)[0]).abs();
            for (i, &s) in gx.iter().enumerate() {
                let u = 0.5 * (1.0 + s);
                for (j, &q) in gx.iter().enumerate() {
                    let t = 0.5 * (1.0 + q);
                    let x = *a + (*b - *a) * u + (*c - *b) * (u * t);
                    out.push((x, 0.25 * gw[i] * gw[j] * u * det));
                }
            }
        }
        Cell::Polar { r, theta } => {
            let jac = 0.25 * (r.1 - r.0) * (theta.1 - theta.0);
            for (i, &s) in gx.iter().enumerate() {
                let rho = map(r.0, r.1, s);
                for (j, &q) in gx.iter().enumerate() {
                    let t = map(theta.0, theta.1, q);
                    out.push((Vec2::new(rho * t.cos(), rho * t.sin()), jac * gw[i] * gw[j] * rho));
                }
            }
        }
    }
}

/// `int_Gamma g dmu = sum_i w_i g(k^{-1}(x_i)) sqrt(gram_det(x_i))`.
pub fn surface_integral(patch: &LipschitzPatch, grid: &ChartGrid, g: &BoundaryField) -> Result<f64> {
    if g.arity() != Arity::Scalar {
        return Err(Error::ArityMismatch("surface integral needs a scalar field".into()));
    }
    grid.integrate_surface(|n| g.eval_scalar(patch, n.x()))
}

/// `<f, g>_{L2(Gamma)}`; vector fields pair through the dot product.
pub fn l2_inner_boundary(
    patch: &LipschitzPatch,
    grid: &ChartGrid,
    f: &BoundaryField,
    g: &BoundaryField,
) -> Result<f64> {
    match (f.arity(), g.arity()) {
        (Arity::Scalar, Arity::Scalar) => {
            grid.integrate_surface(|n| Ok(f.eval_scalar(patch, n.x())? * g.eval_scalar(patch, n.x())?))
        }
        (Arity::Vector, Arity::Vector) => {
            grid.integrate_surface(|n| Ok(f.eval_vector(patch, n.x())?.dot(&g.eval_vector(patch, n.x())?)))
        }
        (a, b) => Err(Error::ArityMismatch(format!("cannot pair {a:?} with {b:?} fields"))),
    }
}

/// `L2(Gamma)` norm.
pub fn l2_norm_boundary(patch: &LipschitzPatch, grid: &ChartGrid, f: &BoundaryField) -> Result<f64> {
    Ok(l2_inner_boundary(patch, grid, f, f)?.max(0.0).sqrt())
}

/// Vertical quadrature for the part of the cylinder below the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgraphRegion {
    /// Gauss order in the vertical coordinate.
    pub order: usize,
    /// Values of `s` where the integrand is known to lose smoothness (for
    /// example the ends of a cutoff transition); vertical intervals are split
    /// there.
    pub breakpoints: Vec<f64>,
    /// Uniform subdivisions of every vertical piece.
    pub subdivisions: usize,
}

impl SubgraphRegion {
    pub fn new(order: usize) -> SubgraphRegion {
        SubgraphRegion {
            order,
            breakpoints: Vec::new(),
            subdivisions: 1,
        }
    }

    pub fn with_breakpoints(mut self, breakpoints: &[f64]) -> SubgraphRegion {
        self.breakpoints = breakpoints.to_vec();
        self.breakpoints.sort_by(f64::total_cmp);
        self
    }

    pub fn with_subdivisions(mut self, subdivisions: usize) -> SubgraphRegion {
        self.subdivisions = subdivisions.max(1);
        self
    }
}

/// `int_U int_{-h}^{a(x)} F(p + W x + s v) ds dx` with Gauss rules in `s`
/// mapped to each node's interval.
pub fn subgraph_integral(
    patch: &LipschitzPatch,
    region: &SubgraphRegion,
    grid: &ChartGrid,
    integrand: impl Fn(Vec3) -> f64,
) -> Result<f64> {
    if region.order == 0 {
        return Err(Error::InvalidArgument("vertical order must be positive".into()));
    }
    let (gx, gw) = gauss_legendre(region.order);
    let h = patch.half_height();
    let v = patch.frame().v;
    let mut column_values = Vec::with_capacity(grid.len());
    let mut column = Vec::new();
    let mut stops = Vec::new();
    for node in grid.nodes() {
        let top = patch.normal_coordinate(node.chart.point);
        if !(top > -h) {
            return Err(Error::InvalidArgument(format!(
                "graph leaves the cylinder at {:?}",
                node.x()
            )));
        }
        let base = patch.flat_point(node.x());
        stops.clear();
        stops.push(-h);
        stops.extend(region.breakpoints.iter().copied().filter(|&s| s > -h && s < top));
        stops.push(top);
        column.clear();
        for pair in stops.windows(2) {
            let piece = (pair[1] - pair[0]) / region.subdivisions as f64;
            for k in 0..region.subdivisions {
                let lo = pair[0] + piece * k as f64;
                let hi = if k + 1 == region.subdivisions {
                    pair[1]
                } else {
                    lo + piece
                };
                for (t, w) in gx.iter().zip(&gw) {
                    let s = 0.5 * (lo + hi) + 0.5 * (hi - lo) * t;
                    column.push(0.5 * (hi - lo) * w * integrand(base + v.scale(s)));
                }
            }
        }
        column_values.push(node.weight * pairwise_sum(&column));
    }
    Ok(pairwise_sum(&column_values))
}

/// [`subgraph_integral`] of a scalar volume field.
pub fn subgraph_volume_integral(
    patch: &LipschitzPatch,
    region: &SubgraphRegion,
    grid: &ChartGrid,
    field: &VolumeScalar,
) -> Result<f64> {
    subgraph_integral(patch, region, grid, |z| field.value(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::Support;
    use std::sync::Arc;

    fn square(lo: f64, hi: f64) -> ChartDomain {
        ChartDomain::rect((lo, hi), (lo, hi))
    }

    fn patch(a: &str, domain: ChartDomain, h: f64) -> LipschitzPatch {
        LipschitzPatch::standard(a, a, domain, 2f64.sqrt(), h).unwrap()
    }

    #[test]
    fn gauss_legendre_integrates_monomials() {
        for n in 1..=20 {
            let (x, w) = gauss_legendre(n);
            for k in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(t, w)| w * t.powi(k as i32)).sum();
                let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
                assert!((q - exact).abs() <= 1e-14, "n={n} k={k}: {q} vs {exact}");
            }
        }
    }

    #[test]
    fn single_cell_node_count() {
        let g = build_grid(&patch("0", square(-1.0, 1.0), 4.0), 4, 0).unwrap();
        assert_eq!(g.cells().len(), 1);
        assert_eq!(g.len(), 16);
    }

    #[test]
    fn corner_grid_avoids_ridge() {
        let p = patch("abs(x1)", square(-1.0, 1.0), 4.0);
        let g = build_grid(&p, 5, 0).unwrap();
        assert_eq!(g.cells().len(), 2);
        assert!(g.nodes().iter().all(|n| n.x()[0] != 0.0));
        assert!(g.cells().iter().all(|c| matches!(c, Cell::Rect(_))));
    }

    #[test]
    fn pyramid_grid_uses_triangles() {
        let p = patch("max(abs(x1),abs(x2))", square(-1.0, 1.0), 4.0);
        let g = build_grid(&p, 4, 1).unwrap();
        assert!(g.cells().iter().any(|c| matches!(c, Cell::Triangle(_))));
        assert!(g.nodes().iter().all(|n| !p.ridges().contains(n.x())));
        assert!((g.flat_area() - 4.0).abs() <= 1e-12);
    }

    #[test]
    fn flat_weights_sum_to_area() {
        for (a, dom) in [
            ("0", square(-1.0, 1.0)),
            ("abs(x1)", ChartDomain::rect((-1.0, 0.7), (-0.4, 0.9))),
            ("0.25*sin(3*x1)*cos(2*x2)", ChartDomain::Disk { radius: 1.2 }),
            ("abs(x1)", ChartDomain::Disk { radius: 1.0 }),
        ] {
            let p = patch(a, dom, 4.0);
            for r in 0..3 {
                let g = build_grid(&p, 6, r).unwrap();
                let area = dom.area();
                assert!((g.flat_area() - area).abs() <= 1e-12 * area, "{a} r={r}");
            }
        }
    }

    #[test]
    fn disk_rejects_off_centre_ridges() {
        let p = patch("abs(x1 - 0.2)", ChartDomain::Disk { radius: 1.0 }, 4.0);
        assert!(matches!(build_grid(&p, 4, 0), Err(Error::RidgeSplitFailure(_))));
    }

    #[test]
    fn box_grid_inside_disk() {
        let p = patch("abs(x1 - 0.2)", ChartDomain::Disk { radius: 1.0 }, 4.0);
        let b = Rect::new((-0.5, 0.6), (-0.4, 0.5));
        let g = build_box_grid(&p, &b, 6, 1).unwrap();
        assert!((g.flat_area() - b.area()).abs() <= 1e-14);
        assert!(g
            .nodes()
            .iter()
            .all(|n| b.contains(n.x(), 0.0) && !p.ridges().contains(n.x())));
        let s = g.integrate_surface(|_| Ok(1.0)).unwrap();
        assert!((s - b.area() * 2f64.sqrt()).abs() <= 1e-13);
        let outside = Rect::new((0.5, 0.9), (0.5, 0.9));
        assert!(matches!(
            build_box_grid(&p, &outside, 4, 0),
            Err(Error::SupportViolation(_))
        ));
    }

    #[test]
    fn surface_integral_examples() {
        let one = BoundaryField::constant(1.0);
        let p = patch("x1", square(0.0, 1.0), 4.0);
        let g = build_grid(&p, 4, 0).unwrap();
        let s = surface_integral(&p, &g, &one).unwrap();
        assert!((s - 2f64.sqrt()).abs() <= 1e-12 * 2f64.sqrt());

        let p = patch("0", square(-1.0, 1.0), 4.0);
        let g = build_grid(&p, 3, 1).unwrap();
        assert!((surface_integral(&p, &g, &one).unwrap() - 4.0).abs() <= 1e-12);

        let p = patch("abs(x1)", square(-1.0, 1.0), 4.0);
        for order in 1..6 {
            let g = build_grid(&p, order, 0).unwrap();
            let s = surface_integral(&p, &g, &one).unwrap();
            assert!((s - 4.0 * 2f64.sqrt()).abs() <= 1e-12 * s, "order {order}");
        }
    }

    #[test]
    fn pyramid_area_is_exact() {
        let p = patch("max(abs(x1),abs(x2))", square(-1.0, 1.0), 4.0);
        let g = build_grid(&p, 2, 0).unwrap();
        let s = surface_integral(&p, &g, &BoundaryField::constant(1.0)).unwrap();
        assert!((s - 4.0 * 2f64.sqrt()).abs() <= 1e-12 * s);
    }

    #[test]
    fn polynomial_exactness_on_flat_patch() {
        let p = patch("0", ChartDomain::rect((-0.3, 1.0), (-1.0, 0.5)), 4.0);
        for order in 1..8 {
            let g = build_grid(&p, order, 1).unwrap();
            let deg = 2 * order - 1;
            let f = BoundaryField::from_chart_function(
                move |x: Vec2| x[0].powi(deg as i32) * x[1].powi(deg as i32) + x[1].powi(deg as i32),
                move |_| Vec2::ZERO,
            );
            let q = surface_integral(&p, &g, &f).unwrap();
            let int = |lo: f64, hi: f64, k: usize| (hi.powi(k as i32 + 1) - lo.powi(k as i32 + 1)) / (k as f64 + 1.0);
            let exact = int(-0.3, 1.0, deg) * int(-1.0, 0.5, deg) + 1.3 * int(-1.0, 0.5, deg);
            assert!((q - exact).abs() <= 1e-12 * exact.abs().max(1.0), "order {order}");
        }
    }

    #[test]
    fn refinement_differences_decrease() {
        let p = patch("0.25*sin(3*x1)*cos(2*x2)", square(-1.0, 1.0), 4.0);
        let f = BoundaryField::from_chart_function(|x: Vec2| (x[0] * x[1]).cos(), |_| Vec2::ZERO);
        let vals: Vec<f64> = (0..5)
            .map(|r| surface_integral(&p, &build_grid(&p, 3, r).unwrap(), &f).unwrap())
            .collect();
        let diffs: Vec<f64> = vals.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        for w in diffs.windows(2) {
            assert!(w[1] < w[0], "{diffs:?}");
        }
    }

    #[test]
    fn inner_product_properties() {
        let p = patch("0.25*sin(3*x1)*cos(2*x2)", square(-1.0, 1.0), 4.0);
        let g = build_grid(&p, 6, 1).unwrap();
        let f = BoundaryField::from_chart_function(|x: Vec2| x[0].sin() + x[1], |_| Vec2::ZERO);
        let h = BoundaryField::from_chart_function(|x: Vec2| (x[0] * x[1]).exp(), |_| Vec2::ZERO);
        let fh = l2_inner_boundary(&p, &g, &f, &h).unwrap();
        let hf = l2_inner_boundary(&p, &g, &h, &f).unwrap();
        assert!((fh - hf).abs() <= 1e-14 * fh.abs().max(1.0));
        assert!(l2_inner_boundary(&p, &g, &f, &f).unwrap() >= 0.0);
        assert_eq!(
            l2_inner_boundary(&p, &g, &BoundaryField::constant(0.0), &BoundaryField::constant(0.0)).unwrap(),
            0.0
        );
        let flat = patch("0", square(-1.0, 1.0), 4.0);
        let gf = build_grid(&flat, 2, 0).unwrap();
        let one = BoundaryField::constant(1.0);
        assert!((l2_inner_boundary(&flat, &gf, &one, &one).unwrap() - 4.0).abs() <= 1e-14);
        let vec = BoundaryField::vector(|_, _| Ok(Vec3::unit(0)));
        assert!(matches!(
            l2_inner_boundary(&flat, &gf, &one, &vec),
            Err(Error::ArityMismatch(_))
        ));
        assert!(matches!(
            surface_integral(&flat, &gf, &vec),
            Err(Error::ArityMismatch(_))
        ));
    }

    #[test]
    fn subgraph_examples() {
        let one = VolumeScalar::from_parts(Arc::new(|_| 1.0), Arc::new(|_| Vec3::ZERO), Support::global());
        let p = LipschitzPatch::standard("flat", "0", square(0.0, 1.0), 2f64.sqrt(), 1.0).unwrap();
        let g = build_grid(&p, 3, 0).unwrap();
        let region = SubgraphRegion::new(3);
        assert!((subgraph_volume_integral(&p, &region, &g, &one).unwrap() - 1.0).abs() <= 1e-14);

        let p = LipschitzPatch::standard("tilted", "x1", square(0.0, 1.0), 2f64.sqrt(), 2.5).unwrap();
        let g = build_grid(&p, 3, 0).unwrap();
        // int_0^1 int_0^1 (x1 + 2.5) dx = 3
        assert!((subgraph_volume_integral(&p, &region, &g, &one).unwrap() - 3.0).abs() <= 1e-14);
    }

    #[test]
    fn subgraph_fundamental_theorem() {
        // G(zeta) = (zeta3 + h)^2 sin(zeta1) vanishes at s = -h; F = d3 G
        let h = 1.0;
        let p = LipschitzPatch::standard("s", "0.2*sin(3*x1)*cos(2*x2)", square(-0.5, 0.5), 1.0, h).unwrap();
        let g = build_grid(&p, 8, 1).unwrap();
        let f = VolumeScalar::from_parts(
            Arc::new(move |z: Vec3| 2.0 * (z[2] + h) * z[0].sin()),
            Arc::new(move |z: Vec3| Vec3::new(2.0 * (z[2] + h) * z[0].cos(), 0.0, 2.0 * z[0].sin())),
            Support::global(),
        );
        let lhs = subgraph_volume_integral(&p, &SubgraphRegion::new(4), &g, &f).unwrap();
        let rhs = g
            .integrate_flat(|n| {
                let z = n.chart.point;
                Ok((z[2] + h).powi(2) * z[0].sin())
            })
            .unwrap();
        assert!((lhs - rhs).abs() <= 1e-8 * rhs.abs().max(1.0));
    }
}
