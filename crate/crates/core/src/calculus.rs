//! Fields on the boundary and in space, and the surface operators built from
//! them: the tangential gradient `((dk^{-1})^dagger)^T grad(f o k^{-1})`, the
//! tangential trace `(nu x Q) x nu`, the lifting of planar test fields, the
//! weak-gradient residual and the least-squares recovery of a weak gradient.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::charts::{CutoffProfile, LipschitzPatch};
use crate::error::{Error, Result};
use crate::expr::Rect;
use crate::quadrature::{legendre_with_derivative, ChartGrid};
use crate::smallmat::{cross, pinv_3x2, tangential_projector, Mat2x2, Mat3x3, Vec2, Vec3};

/// Maximum `|nu . q|` (relative to `max(1, |q|)`) for a tangential field.
pub const TANGENTIAL_TOLERANCE: f64 = 1e-10;

/// Relative agreement required between a registered derivative and central
/// differences.
pub const JACOBIAN_CHECK_TOLERANCE: f64 = 1e-6;

/// Largest admissible condition number of the recovery basis Gram matrix.
pub const MAX_BASIS_CONDITION: f64 = 1e8;

const PROBES: usize = 16;
const PROBE_SEED: u64 = 0x5eed_f1e1d;

/// Where a volume field may be nonzero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Support {
    pub center: Vec3,
    /// Radius of a ball containing the support; infinite for global fields.
    pub radius: f64,
    /// The support meets the boundary only inside the patch graph.
    pub patch_local: bool,
}

impl Support {
    pub fn global() -> Support {
        Support {
            center: Vec3::ZERO,
            radius: f64::INFINITY,
            patch_local: false,
        }
    }

    fn probe(&self, rng: &mut ChaCha8Rng) -> Vec3 {
        let r = if self.radius.is_finite() { self.radius } else { 2.0 };
        loop {
            let d = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if d.norm() <= 1.0 {
                return self.center + d.scale(r);
            }
        }
    }
}

pub type ScalarFn3 = Arc<dyn Fn(Vec3) -> f64 + Send + Sync>;
pub type VectorFn3 = Arc<dyn Fn(Vec3) -> Vec3 + Send + Sync>;
pub type MatrixFn3 = Arc<dyn Fn(Vec3) -> Mat3x3 + Send + Sync>;

/// A scalar function on R^3 with its gradient.
#[derive(Clone)]
pub struct VolumeScalar {
    value: ScalarFn3,
    gradient: VectorFn3,
    support: Support,
}

impl fmt::Debug for VolumeScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VolumeScalar")
            .field("support", &self.support)
            .finish_non_exhaustive()
    }
}

fn fd_step(z: Vec3) -> f64 {
    1e-5 * z.max_abs().max(1.0)
}

impl VolumeScalar {
    /// Registers a field, checking the gradient against central differences
    /// at deterministic probe points.
    pub fn new(
        value: impl Fn(Vec3) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(Vec3) -> Vec3 + Send + Sync + 'static,
        support: Support,
    ) -> Result<VolumeScalar> {
        let field = VolumeScalar::from_parts(Arc::new(value), Arc::new(gradient), support);
        let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
        let mut worst = 0.0_f64;
        for _ in 0..PROBES {
            let z = support.probe(&mut rng);
            let h = fd_step(z);
            let g = field.gradient(z);
            let mut fd = Vec3::ZERO;
            for i in 0..3 {
                let e = Vec3::unit(i).scale(h);
                fd[i] = (field.value(z + e) - field.value(z - e)) / (2.0 * h);
            }
            let scale = g.max_abs().max(fd.max_abs()).max(1.0);
            worst = worst.max((fd - g).max_abs() / scale);
        }
        if worst > JACOBIAN_CHECK_TOLERANCE {
            return Err(Error::JacobianMismatch { error: worst });
        }
        Ok(field)
    }

    /// Wraps callbacks without the finite-difference check.
    pub fn from_parts(value: ScalarFn3, gradient: VectorFn3, support: Support) -> VolumeScalar {
        VolumeScalar {
            value,
            gradient,
            support,
        }
    }

    pub fn constant(c: f64) -> VolumeScalar {
        VolumeScalar::from_parts(Arc::new(move |_| c), Arc::new(|_| Vec3::ZERO), Support::global())
    }

    pub fn value(&self, z: Vec3) -> f64 {
        (self.value)(z)
    }

    pub fn gradient(&self, z: Vec3) -> Vec3 {
        (self.gradient)(z)
    }

    pub fn support(&self) -> Support {
        self.support
    }
}

/// A vector field on R^3 with its Jacobian `J_ij = d_j Phi_i`.
#[derive(Clone)]
pub struct VolumeVector {
    value: VectorFn3,
    jacobian: MatrixFn3,
    support: Support,
}

impl fmt::Debug for VolumeVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VolumeVector")
            .field("support", &self.support)
            .finish_non_exhaustive()
    }
}

impl VolumeVector {
    /// Registers a field, checking the Jacobian against central differences.
    pub fn new(
        value: impl Fn(Vec3) -> Vec3 + Send + Sync + 'static,
        jacobian: impl Fn(Vec3) -> Mat3x3 + Send + Sync + 'static,
        support: Support,
    ) -> Result<VolumeVector> {
        let field = VolumeVector::from_parts(Arc::new(value), Arc::new(jacobian), support);
        field.check_jacobian()?;
        Ok(field)
    }

    fn check_jacobian(&self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
        let mut worst = 0.0_f64;
        for _ in 0..PROBES {
            let z = self.support.probe(&mut rng);
            let h = fd_step(z);
            let j = self.jacobian(z);
            let mut fd = Mat3x3::ZERO;
            for c in 0..3 {
                let e = Vec3::unit(c).scale(h);
                let col = (self.value(z + e) - self.value(z - e)).scale(0.5 / h);
                for r in 0..3 {
                    fd.0[r][c] = col[r];
                }
            }
            let scale = j.max_abs().max(fd.max_abs()).max(1.0);
            worst = worst.max(fd.max_abs_diff(&j) / scale);
        }
        if worst > JACOBIAN_CHECK_TOLERANCE {
            return Err(Error::JacobianMismatch { error: worst });
        }
        Ok(())
    }

    pub fn from_parts(value: VectorFn3, jacobian: MatrixFn3, support: Support) -> VolumeVector {
        VolumeVector {
            value,
            jacobian,
            support,
        }
    }

    pub fn zero() -> VolumeVector {
        VolumeVector::from_parts(
            Arc::new(|_| Vec3::ZERO),
            Arc::new(|_| Mat3x3::ZERO),
            Support {
                center: Vec3::ZERO,
                radius: 0.0,
                patch_local: true,
            },
        )
    }

    /// The gradient field of a scalar; its Jacobian (the Hessian) comes from
    /// central differences of the registered gradient.
    pub fn gradient_of(f: &VolumeScalar) -> VolumeVector {
        let g = Arc::clone(&f.gradient);
        let g2 = Arc::clone(&f.gradient);
        VolumeVector::from_parts(
            Arc::new(move |z| g(z)),
            Arc::new(move |z| {
                let h = fd_step(z);
                let mut m = Mat3x3::ZERO;
                for c in 0..3 {
                    let e = Vec3::unit(c).scale(h);
                    let col = (g2(z + e) - g2(z - e)).scale(0.5 / h);
                    for r in 0..3 {
                        m.0[r][c] = col[r];
                    }
                }
                m
            }),
            f.support,
        )
    }

    pub fn value(&self, z: Vec3) -> Vec3 {
        (self.value)(z)
    }

    pub fn jacobian(&self, z: Vec3) -> Mat3x3 {
        (self.jacobian)(z)
    }

    /// `rot Phi = (J32 - J23, J13 - J31, J21 - J12)`.
    pub fn curl(&self, z: Vec3) -> Vec3 {
        let j = self.jacobian(z).0;
        Vec3::new(j[2][1] - j[1][2], j[0][2] - j[2][0], j[1][0] - j[0][1])
    }

    pub fn support(&self) -> Support {
        self.support
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Scalar,
    Vector,
}

pub type ChartScalarFn = Arc<dyn Fn(&LipschitzPatch, Vec2) -> Result<f64> + Send + Sync>;
pub type ChartVectorFn = Arc<dyn Fn(&LipschitzPatch, Vec2) -> Result<Vec3> + Send + Sync>;
pub type ChartGradientFn = Arc<dyn Fn(&LipschitzPatch, Vec2) -> Result<Vec2> + Send + Sync>;

#[derive(Clone)]
enum Values {
    Scalar(ChartScalarFn),
    Vector(ChartVectorFn),
}

/// Data on the boundary, evaluated through a patch: the callback receives the
/// patch and `x in U` and returns the value at `k^{-1}(x)`.
#[derive(Clone)]
pub struct BoundaryField {
    values: Values,
    chart_gradient: Option<ChartGradientFn>,
    stencil: bool,
    tangential: bool,
}

impl fmt::Debug for BoundaryField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundaryField")
            .field("arity", &self.arity())
            .field("chart_gradient", &self.chart_gradient.is_some())
            .field("stencil", &self.stencil)
            .field("tangential", &self.tangential)
            .finish()
    }
}

impl BoundaryField {
    pub fn scalar(f: impl Fn(&LipschitzPatch, Vec2) -> Result<f64> + Send + Sync + 'static) -> BoundaryField {
        BoundaryField {
            values: Values::Scalar(Arc::new(f)),
            chart_gradient: None,
            stencil: true,
            tangential: false,
        }
    }

    pub fn vector(f: impl Fn(&LipschitzPatch, Vec2) -> Result<Vec3> + Send + Sync + 'static) -> BoundaryField {
        BoundaryField {
            values: Values::Vector(Arc::new(f)),
            chart_gradient: None,
            stencil: true,
            tangential: false,
        }
    }

    pub fn constant(c: f64) -> BoundaryField {
        BoundaryField::from_chart_function(move |_| c, |_| Vec2::ZERO)
    }

    /// A scalar given directly in chart coordinates, `f o k^{-1} = u`, with
    /// its chart gradient.
    pub fn from_chart_function(
        u: impl Fn(Vec2) -> f64 + Send + Sync + 'static,
        grad: impl Fn(Vec2) -> Vec2 + Send + Sync + 'static,
    ) -> BoundaryField {
        BoundaryField::scalar(move |_, x| Ok(u(x))).with_chart_gradient(move |_, x| Ok(grad(x)))
    }

    /// The restriction `F|Gamma`, with chart gradient `(dk^{-1})^T grad F`.
    pub fn trace_of(f: &VolumeScalar) -> BoundaryField {
        let value = f.clone();
        let grad = f.clone();
        BoundaryField::scalar(move |patch, x| Ok(value.value(patch.graph_point(x)?))).with_chart_gradient(
            move |patch, x| {
                let c = patch.local_frame(x)?;
                Ok(c.jacobian.transpose() * grad.gradient(c.point))
            },
        )
    }

    /// `tantr Q = (nu x Q) x nu`, flagged tangential.
    pub fn tangential_trace_of(q: &VolumeVector) -> BoundaryField {
        let q = q.clone();
        BoundaryField::vector(move |patch, x| tangential_trace(patch, &q, x)).mark_tangential()
    }

    /// `grad_tau f`, flagged tangential.
    pub fn tangential_gradient_of(f: &BoundaryField) -> BoundaryField {
        let f = f.clone();
        BoundaryField::vector(move |patch, x| tangential_gradient(patch, &f, x)).mark_tangential()
    }

    pub fn zero_vector() -> BoundaryField {
        BoundaryField::vector(|_, _| Ok(Vec3::ZERO)).mark_tangential()
    }

    pub fn with_chart_gradient(
        mut self,
        g: impl Fn(&LipschitzPatch, Vec2) -> Result<Vec2> + Send + Sync + 'static,
    ) -> BoundaryField {
        self.chart_gradient = Some(Arc::new(g));
        self
    }

    /// Drops the analytic chart gradient.
    pub fn without_chart_gradient(mut self) -> BoundaryField {
        self.chart_gradient = None;
        self
    }

    /// Enables or disables the finite-difference fallback for the chart gradient.
    pub fn with_stencil(mut self, enabled: bool) -> BoundaryField {
        self.stencil = enabled;
        self
    }

    /// Declares the field tangential (`nu . g = 0`); checked where it is used.
    pub fn mark_tangential(mut self) -> BoundaryField {
        self.tangential = true;
        self
    }

    pub fn is_tangential(&self) -> bool {
        self.tangential
    }

    pub fn has_chart_gradient(&self) -> bool {
        self.chart_gradient.is_some()
    }

    pub fn arity(&self) -> Arity {
        match self.values {
            Values::Scalar(_) => Arity::Scalar,
            Values::Vector(_) => Arity::Vector,
        }
    }

    pub fn eval_scalar(&self, patch: &LipschitzPatch, x: Vec2) -> Result<f64> {
        match &self.values {
            Values::Scalar(f) => f(patch, x),
            Values::Vector(_) => Err(Error::ArityMismatch("expected a scalar field".into())),
        }
    }

    pub fn eval_vector(&self, patch: &LipschitzPatch, x: Vec2) -> Result<Vec3> {
        match &self.values {
            Values::Vector(f) => f(patch, x),
            Values::Scalar(_) => Err(Error::ArityMismatch("expected a vector field".into())),
        }
    }

    /// `grad (f o k^{-1})(x)`: the analytic callback when present, otherwise
    /// the fourth-order five-point central stencil with step `1e-5 eps`.
    pub fn chart_gradient(&self, patch: &LipschitzPatch, x: Vec2) -> Result<Vec2> {
        if let Some(g) = &self.chart_gradient {
            return g(patch, x);
        }
        if !self.stencil {
            return Err(Error::NoChartGradient);
        }
        let h = 1e-5 * patch.epsilon();
        let mut out = Vec2::ZERO;
        for i in 0..2 {
            let at = |k: f64| {
                let mut y = x;
                y[i] += k * h;
                self.eval_scalar(patch, y)
            };
            out[i] = (at(-2.0)? - 8.0 * at(-1.0)? + 8.0 * at(1.0)? - at(2.0)?) / (12.0 * h);
        }
        Ok(out)
    }
}

/// `((dk^{-1})^dagger)^T grad(f o k^{-1})(x)` in ambient coordinates.
pub fn tangential_gradient(patch: &LipschitzPatch, f: &BoundaryField, x: Vec2) -> Result<Vec3> {
    let a = patch.jacobian_inverse_chart(x)?;
    let g = f.chart_gradient(patch, x)?;
    Ok(pinv_3x2(&a)?.transpose() * g)
}

/// `(nu x Q) x nu` at `k^{-1}(x)`.
pub fn tangential_trace(patch: &LipschitzPatch, q: &VolumeVector, x: Vec2) -> Result<Vec3> {
    let c = patch.local_frame(x)?;
    Ok(tangential_projector(c.normal)? * q.value(c.point))
}

pub type PlanarValueFn = Arc<dyn Fn(Vec2) -> f64 + Send + Sync>;
pub type PlanarGradientFn = Arc<dyn Fn(Vec2) -> Vec2 + Send + Sync>;

/// Affine map of a box onto `[-1, 1]^2` and its (diagonal) derivative.
fn to_reference(b: &Rect, x: Vec2) -> (Vec2, Vec2) {
    let mut xi = Vec2::ZERO;
    let mut d = Vec2::ZERO;
    for i in 0..2 {
        let w = b.hi[i] - b.lo[i];
        xi[i] = (2.0 * x[i] - (b.lo[i] + b.hi[i])) / w;
        d[i] = 2.0 / w;
    }
    (xi, d)
}

/// `((1 - xi1^2)(1 - xi2^2))^k` in reference coordinates of a box, with its
/// gradient in chart coordinates. Zero outside the box.
fn box_bump(b: &Rect, exponent: u32, x: Vec2) -> (f64, Vec2) {
    if !b.contains(x, 0.0) {
        return (0.0, Vec2::ZERO);
    }
    let (xi, d) = to_reference(b, x);
    let k = exponent as i32;
    let f = |t: f64| (1.0 - t * t).powi(k);
    let df = |t: f64| -2.0 * k as f64 * t * (1.0 - t * t).powi(k - 1);
    let (f1, f2) = (f(xi[0]), f(xi[1]));
    (f1 * f2, Vec2::new(df(xi[0]) * f2 * d[0], f1 * df(xi[1]) * d[1]))
}

/// A compactly supported scalar on `U` with its gradient.
#[derive(Clone)]
pub struct PlanarScalarField {
    pub(crate) value: PlanarValueFn,
    pub(crate) gradient: PlanarGradientFn,
    support: Rect,
}

impl fmt::Debug for PlanarScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlanarScalarField")
            .field("support", &self.support)
            .finish_non_exhaustive()
    }
}

impl PlanarScalarField {
    /// Callbacks are only invoked inside `support`; outside the field is zero.
    pub fn new(
        support: Rect,
        value: impl Fn(Vec2) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(Vec2) -> Vec2 + Send + Sync + 'static,
    ) -> PlanarScalarField {
        PlanarScalarField {
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            support,
        }
    }

    pub fn zero(support: Rect) -> PlanarScalarField {
        PlanarScalarField::new(support, |_| 0.0, |_| Vec2::ZERO)
    }

    /// `u(x)` times the polynomial bump of `support` with the given exponent.
    pub fn bump_polynomial(
        support: Rect,
        exponent: u32,
        u: impl Fn(Vec2) -> f64 + Send + Sync + 'static,
        grad_u: impl Fn(Vec2) -> Vec2 + Send + Sync + 'static,
    ) -> PlanarScalarField {
        let u = Arc::new(u);
        let u2 = Arc::clone(&u);
        PlanarScalarField::new(
            support,
            move |x| box_bump(&support, exponent, x).0 * u(x),
            move |x| {
                let (b, db) = box_bump(&support, exponent, x);
                db.scale(u2(x)) + grad_u(x).scale(b)
            },
        )
    }

    pub fn support(&self) -> Rect {
        self.support
    }

    pub fn eval(&self, x: Vec2) -> f64 {
        if self.support.contains(x, 0.0) {
            (self.value)(x)
        } else {
            0.0
        }
    }

    pub fn grad(&self, x: Vec2) -> Vec2 {
        if self.support.contains(x, 0.0) {
            (self.gradient)(x)
        } else {
            Vec2::ZERO
        }
    }
}

/// A compactly supported 2-vector field on `U` with Jacobian `J_ij = d_j phi_i`.
pub trait PlanarField: Send + Sync {
    fn value(&self, x: Vec2) -> Vec2;
    fn jacobian(&self, x: Vec2) -> Mat2x2;
    /// Closed box containing the support.
    fn support(&self) -> Rect;
    fn divergence(&self, x: Vec2) -> f64 {
        self.jacobian(x).trace()
    }
}

/// `B(x) P_m(xi1) P_n(xi2) e_c`: tensor Legendre polynomial in reference
/// coordinates of the support box times the polynomial bump `B` of exponent `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpLegendre {
    pub support: Rect,
    pub exponent: u32,
    pub degrees: (usize, usize),
    pub component: usize,
}

impl BumpLegendre {
    fn scalar(&self, x: Vec2) -> (f64, Vec2) {
        if !self.support.contains(x, 0.0) {
            return (0.0, Vec2::ZERO);
        }
        let (b, db) = box_bump(&self.support, self.exponent, x);
        let (xi, d) = to_reference(&self.support, x);
        let (p1, dp1) = legendre_with_derivative(self.degrees.0, xi[0]);
        let (p2, dp2) = legendre_with_derivative(self.degrees.1, xi[1]);
        let p = p1 * p2;
        let dp = Vec2::new(dp1 * p2 * d[0], p1 * dp2 * d[1]);
        (b * p, db.scale(p) + dp.scale(b))
    }
}

impl PlanarField for BumpLegendre {
    fn value(&self, x: Vec2) -> Vec2 {
        let mut out = Vec2::ZERO;
        out[self.component] = self.scalar(x).0;
        out
    }

    fn jacobian(&self, x: Vec2) -> Mat2x2 {
        let g = self.scalar(x).1;
        let mut m = Mat2x2::ZERO;
        m.0[self.component] = [g[0], g[1]];
        m
    }

    fn support(&self) -> Rect {
        self.support
    }
}

/// A planar field given by closures.
#[derive(Clone)]
pub struct ClosureField {
    value: Arc<dyn Fn(Vec2) -> Vec2 + Send + Sync>,
    jacobian: Arc<dyn Fn(Vec2) -> Mat2x2 + Send + Sync>,
    support: Rect,
}

impl ClosureField {
    /// Callbacks are only invoked inside `support`.
    pub fn new(
        support: Rect,
        value: impl Fn(Vec2) -> Vec2 + Send + Sync + 'static,
        jacobian: impl Fn(Vec2) -> Mat2x2 + Send + Sync + 'static,
    ) -> ClosureField {
        ClosureField {
            value: Arc::new(value),
            jacobian: Arc::new(jacobian),
            support,
        }
    }

    /// The rotated gradient `(-d2 u, d1 u)` of a scalar; divergence free.
    pub fn rotated_gradient(
        u: &PlanarScalarField,
        hessian: impl Fn(Vec2) -> Mat2x2 + Send + Sync + 'static,
    ) -> ClosureField {
        let g = Arc::clone(&u.gradient);
        ClosureField::new(
            u.support(),
            move |x| {
                let d = g(x);
                Vec2::new(-d[1], d[0])
            },
            move |x| {
                let h = hessian(x).0;
                Mat2x2([[-h[1][0], -h[1][1]], [h[0][0], h[0][1]]])
            },
        )
    }
}

impl PlanarField for ClosureField {
    fn value(&self, x: Vec2) -> Vec2 {
        if self.support.contains(x, 0.0) {
            (self.value)(x)
        } else {
            Vec2::ZERO
        }
    }

    fn jacobian(&self, x: Vec2) -> Mat2x2 {
        if self.support.contains(x, 0.0) {
            (self.jacobian)(x)
        } else {
            Mat2x2::ZERO
        }
    }

    fn support(&self) -> Rect {
        self.support
    }
}

/// A finite family of test fields `phi_j` on `U`.
#[derive(Clone)]
pub struct TestFamily {
    fields: Vec<Arc<dyn PlanarField>>,
}

impl fmt::Debug for TestFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFamily").field("len", &self.fields.len()).finish()
    }
}

impl TestFamily {
    pub fn new(fields: Vec<Arc<dyn PlanarField>>) -> TestFamily {
        TestFamily { fields }
    }

    /// All [`BumpLegendre`] fields with `m + n <= degree`, both components.
    pub fn bump_legendre(support: Rect, degree: usize, exponent: u32) -> TestFamily {
        let mut fields: Vec<Arc<dyn PlanarField>> = Vec::new();
        for component in 0..2 {
            for total in 0..=degree {
                for m in 0..=total {
                    fields.push(Arc::new(BumpLegendre {
                        support,
                        exponent,
                        degrees: (m, total - m),
                        component,
                    }));
                }
            }
        }
        TestFamily { fields }
    }

    pub fn fields(&self) -> &[Arc<dyn PlanarField>] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}

/// Vector polynomials `P_m(xi1) P_n(xi2) e_c` with `m + n <= degree` on a box,
/// the trial space for recovered chart gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LegendreBasis {
    domain: Rect,
    degree: usize,
    terms: Vec<(usize, usize)>,
}

impl LegendreBasis {
    pub fn new(domain: Rect, degree: usize) -> LegendreBasis {
        let mut terms = Vec::new();
        for total in 0..=degree {
            for m in 0..=total {
                terms.push((m, total - m));
            }
        }
        LegendreBasis { domain, degree, terms }
    }

    pub fn domain(&self) -> Rect {
        self.domain
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of vector basis functions.
    pub fn len(&self) -> usize {
        2 * self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Scalar tensor polynomials at `x`; the vector basis is these times
    /// `e1` followed by these times `e2`.
    pub fn scalar_values(&self, x: Vec2) -> Vec<f64> {
        let (xi, _) = to_reference(&self.domain, x);
        let p1: Vec<f64> = (0..=self.degree)
            .map(|m| legendre_with_derivative(m, xi[0]).0)
            .collect();
        let p2: Vec<f64> = (0..=self.degree)
            .map(|n| legendre_with_derivative(n, xi[1]).0)
            .collect();
        self.terms.iter().map(|&(m, n)| p1[m] * p2[n]).collect()
    }

    /// `sum_i c_i psi_i(x)`.
    pub fn combine(&self, coefficients: &[f64], x: Vec2) -> Vec2 {
        let s = self.scalar_values(x);
        let t = s.len();
        let c1: f64 = s.iter().zip(&coefficients[..t]).map(|(a, b)| a * b).sum();
        let c2: f64 = s.iter().zip(&coefficients[t..]).map(|(a, b)| a * b).sum();
        Vec2::new(c1, c2)
    }
}

/// `Phi = chi Phi_hat` with `Phi_hat(zeta) = phi2(y) w1 - phi1(y) w2`,
/// `y = W^T (zeta - p)`, and `chi` the vertical cutoff in `|v . (zeta - p)|`.
/// The Jacobian is `Phi_hat grad(chi)^T + chi dPhi_hat`.
pub fn lift_test_field(
    patch: &LipschitzPatch,
    phi: Arc<dyn PlanarField>,
    cutoff: CutoffProfile,
) -> Result<VolumeVector> {
    let support = phi.support();
    patch.check_support(&support, &cutoff)?;
    let frame = *patch.frame();
    let p = patch.anchor();
    let chart = move |z: Vec3| {
        let d = z - p;
        (Vec2::new(frame.w1.dot(&d), frame.w2.dot(&d)), frame.v.dot(&d))
    };
    let phi_v = Arc::clone(&phi);
    let value = move |z: Vec3| {
        let (y, s) = chart(z);
        if !support.contains(y, 0.0) {
            return Vec3::ZERO;
        }
        let chi = cutoff.value(s.abs());
        if chi == 0.0 {
            return Vec3::ZERO;
        }
        let f = phi_v.value(y);
        (frame.w1.scale(f[1]) - frame.w2.scale(f[0])).scale(chi)
    };
    let jacobian = move |z: Vec3| {
        let (y, s) = chart(z);
        if !support.contains(y, 0.0) {
            return Mat3x3::ZERO;
        }
        let chi = cutoff.value(s.abs());
        let dchi = cutoff.derivative(s.abs()) * s.signum();
        if chi == 0.0 && dchi == 0.0 {
            return Mat3x3::ZERO;
        }
        let f = phi.value(y);
        let j = phi.jacobian(y).0;
        let hat = frame.w1.scale(f[1]) - frame.w2.scale(f[0]);
        // rows of d(phi_i o W^T(. - p)) = d1 phi_i w1^T + d2 phi_i w2^T
        let r1 = frame.w1.scale(j[0][0]) + frame.w2.scale(j[0][1]);
        let r2 = frame.w1.scale(j[1][0]) + frame.w2.scale(j[1][1]);
        let d_hat = Mat3x3::outer(frame.w1, r2) - Mat3x3::outer(frame.w2, r1);
        Mat3x3::outer(hat, frame.v.scale(dchi)) + d_hat.scale(chi)
    };
    Ok(VolumeVector::from_parts(
        Arc::new(value),
        Arc::new(jacobian),
        patch.local_support(&support, cutoff.r1),
    ))
}

/// `max_nodes |dk^{-1} phi - sqrt(g) (nu x Phi) o k^{-1}|`.
pub fn lifted_trace_residual(
    patch: &LipschitzPatch,
    grid: &ChartGrid,
    lifted: &VolumeVector,
    phi: &dyn PlanarField,
) -> f64 {
    let _ = patch;
    grid.nodes()
        .iter()
        .map(|n| {
            let c = &n.chart;
            let lhs = c.jacobian * phi.value(c.x);
            let rhs = cross(c.normal, lifted.value(c.point)).scale(c.sqrt_gram);
            (lhs - rhs).max_abs()
        })
        .fold(0.0, f64::max)
}

/// `max_nodes |div phi + sqrt(g) (nu . rot Phi) o k^{-1}|`.
pub fn lifted_curl_pairing(
    patch: &LipschitzPatch,
    grid: &ChartGrid,
    lifted: &VolumeVector,
    phi: &dyn PlanarField,
) -> f64 {
    let _ = patch;
    grid.nodes()
        .iter()
        .map(|n| {
            let c = &n.chart;
            (phi.divergence(c.x) + c.sqrt_gram * c.normal.dot(&lifted.curl(c.point))).abs()
        })
        .fold(0.0, f64::max)
}

/// The two sides of the weak-gradient identity for one test field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakPairing {
    /// `<q, nu x Phi>_{L2(Gamma)}`.
    pub flux: f64,
    /// `<f, nu . rot Phi>_{L2(Gamma)}`.
    pub curl: f64,
    /// `|q| |nu x Phi| + |f| |nu . rot Phi|` in `L2(Gamma)`, a Cauchy-Schwarz
    /// bound for both terms.
    pub scale: f64,
}

impl WeakPairing {
    pub fn residual(&self) -> f64 {
        self.flux - self.curl
    }

    /// `|residual| / scale`, or the plain residual when the scale vanishes.
    pub fn relative(&self) -> f64 {
        let r = self.residual().abs();
        if self.scale > 0.0 {
            r / self.scale
        } else {
            r
        }
    }
}

fn check_tangential(patch: &LipschitzPatch, grid: &ChartGrid, q: &BoundaryField) -> Result<()> {
    if !q.is_tangential() {
        return Err(Error::NotTangential("field is not flagged tangential".into()));
    }
    for n in grid.nodes() {
        let v = q.eval_vector(patch, n.x())?;
        let d = n.chart.normal.dot(&v).abs();
        if d > TANGENTIAL_TOLERANCE * v.norm().max(1.0) {
            return Err(Error::NotTangential(format!("nu . q = {d:e} at {:?}", n.x())));
        }
    }
    Ok(())
}

/// Both terms of `<q, nu x Phi> - <f, nu . rot Phi>` over the patch graph.
pub fn weak_pairing(
    patch: &LipschitzPatch,
    grid: &ChartGrid,
    f: &BoundaryField,
    q: &BoundaryField,
    phi: &VolumeVector,
) -> Result<WeakPairing> {
    if !phi.support().patch_local {
        return Err(Error::NonlocalSupport);
    }
    if f.arity() != Arity::Scalar || q.arity() != Arity::Vector {
        return Err(Error::ArityMismatch(
            "weak residual pairs a scalar f with a vector q".into(),
        ));
    }
    check_tangential(patch, grid, q)?;
    let mut flux = Vec::with_capacity(grid.len());
    let mut curl = Vec::with_capacity(grid.len());
    let mut norms = [Vec::with_capacity(grid.len()), Vec::new(), Vec::new(), Vec::new()];
    for n in grid.nodes() {
        let c = &n.chart;
        let w = n.surface_weight();
        let qv = q.eval_vector(patch, c.x)?;
        let fv = f.eval_scalar(patch, c.x)?;
        let t = cross(c.normal, phi.value(c.point));
        let r = c.normal.dot(&phi.curl(c.point));
        flux.push(w * qv.dot(&t));
        curl.push(w * fv * r);
        norms[0].push(w * qv.norm_squared());
        norms[1].push(w * t.norm_squared());
        norms[2].push(w * fv * fv);
        norms[3].push(w * r * r);
    }
    use crate::quadrature::pairwise_sum;
    let nrm = |k: usize| pairwise_sum(&norms[k]).max(0.0).sqrt();
    Ok(WeakPairing {
        flux: pairwise_sum(&flux),
        curl: pairwise_sum(&curl),
        scale: nrm(0) * nrm(1) + nrm(2) * nrm(3),
    })
}

/// `<q, nu x Phi>_{L2(Gamma)} - <f, nu . rot Phi>_{L2(Gamma)}`.
pub fn weak_residual(
    patch: &LipschitzPatch,
    grid: &ChartGrid,
    f: &BoundaryField,
    q: &BoundaryField,
    phi: &VolumeVector,
) -> Result<f64> {
    Ok(weak_pairing(patch, grid, f, q, phi)?.residual())
}

/// Result of [`recover_weak_gradient`].
#[derive(Debug, Clone)]
pub struct RecoveredGradient {
    pub coefficients: Vec<f64>,
    pub basis: LegendreBasis,
    /// Euclidean norm of the least-squares residual over the test family.
    pub residual_norm: f64,
    /// Condition number of the basis Gram matrix.
    pub condition: f64,
    pub tests: usize,
}

impl RecoveredGradient {
    /// The recovered chart gradient `g_c(x) = sum_i c_i psi_i(x)`.
    pub fn chart_gradient(&self, x: Vec2) -> Vec2 {
        self.basis.combine(&self.coefficients, x)
    }

    /// `q o k^{-1} = ((dk^{-1})^dagger)^T g_c` on the basis box, zero outside.
    pub fn field(&self) -> BoundaryField {
        let me = self.clone();
        BoundaryField::vector(move |patch, x| {
            if !me.basis.domain().contains(x, 0.0) {
                return Ok(Vec3::ZERO);
            }
            let a = patch.jacobian_inverse_chart(x)?;
            Ok(pinv_3x2(&a)?.transpose() * me.chart_gradient(x))
        })
        .mark_tangential()
    }
}

/// Least-squares recovery of `grad(f o k^{-1})` from weak data: minimizes
/// `sum_j (sum_i c_i <psi_i, phi_j>_U + <f o k^{-1}, div phi_j>_U)^2` by SVD
/// of the `M x N` design matrix. Integrals run over grid nodes in the basis
/// box; every test field must be supported in that box.
pub fn recover_weak_gradient(
    patch: &LipschitzPatch,
    grid: &ChartGrid,
    f: &BoundaryField,
    family: &TestFamily,
    basis: &LegendreBasis,
) -> Result<RecoveredGradient> {
    let (m, n) = (family.len(), basis.len());
    if m < n {
        return Err(Error::InsufficientTests { tests: m, unknowns: n });
    }
    let domain = basis.domain();
    for phi in family.fields() {
        let s = phi.support();
        if !(domain.contains(s.lo, 0.0) && domain.contains(s.hi, 0.0)) {
            return Err(Error::InvalidArgument("test field support leaves the basis box".into()));
        }
    }
    let nodes: Vec<_> = grid.nodes().iter().filter(|nd| domain.contains(nd.x(), 0.0)).collect();
    let t = n / 2;
    let mut scalar = Vec::with_capacity(nodes.len() * t);
    let mut fvals = Vec::with_capacity(nodes.len());
    for nd in &nodes {
        scalar.extend(basis.scalar_values(nd.x()));
        fvals.push(f.eval_scalar(patch, nd.x())?);
    }

    let mut gram = DMatrix::<f64>::zeros(t, t);
    for (k, nd) in nodes.iter().enumerate() {
        let s = &scalar[k * t..(k + 1) * t];
        for i in 0..t {
            for j in i..t {
                gram[(i, j)] += nd.weight * s[i] * s[j];
            }
        }
    }
    for i in 0..t {
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)];
        }
    }
    let eig = SymmetricEigen::new(gram).eigenvalues;
    let (lmin, lmax) = eig
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(a, b), &l| (a.min(l), b.max(l)));
    let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if !(condition <= MAX_BASIS_CONDITION) {
        return Err(Error::IllConditioned { cond: condition });
    }

    let rows: Vec<(Vec<f64>, f64)> = family
        .fields()
        .par_iter()
        .map(|phi| {
            let mut row = vec![0.0; n];
            let mut rhs = 0.0;
            for (k, nd) in nodes.iter().enumerate() {
                let x = nd.x();
                let v = phi.value(x);
                let div = phi.divergence(x);
                if v[0] == 0.0 && v[1] == 0.0 && div == 0.0 {
                    continue;
                }
                let s = &scalar[k * t..(k + 1) * t];
                for i in 0..t {
                    row[i] += nd.weight * v[0] * s[i];
                    row[t + i] += nd.weight * v[1] * s[i];
                }
                rhs -= nd.weight * fvals[k] * div;
            }
            (row, rhs)
        })
        .collect();
    let a = DMatrix::from_fn(m, n, |i, j| rows[i].0[j]);
    let b = DVector::from_iterator(m, rows.iter().map(|r| r.1));
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let c = svd
        .solve(&b, smax * 1e-14)
        .map_err(|e| Error::InvalidArgument(format!("least-squares solve failed: {e}")))?;
    let residual_norm = (&a * &c - &b).norm();
    Ok(RecoveredGradient {
        coefficients: c.iter().copied().collect(),
        basis: basis.clone(),
        residual_norm,
        condition,
        tests: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charts::ChartDomain;
    use crate::quadrature::{box_lines, build_grid, build_grid_with_breaklines, l2_norm_boundary};
    use crate::smallmat::range_projector;

    fn square() -> ChartDomain {
        ChartDomain::rect((-1.0, 1.0), (-1.0, 1.0))
    }

    fn patch(a: &str) -> LipschitzPatch {
        LipschitzPatch::standard(a, a, square(), 2f64.sqrt(), 4.0).unwrap()
    }

    fn zeta3() -> VolumeScalar {
        VolumeScalar::new(|z| z[2], |_| Vec3::unit(2), Support::global()).unwrap()
    }

    #[test]
    fn volume_fields_validate_derivatives() {
        assert!(VolumeScalar::new(|z| z[0] * z[1], |z| Vec3::new(z[1], z[0], 0.0), Support::global()).is_ok());
        assert!(matches!(
            VolumeScalar::new(|z| z[0] * z[1], |z| Vec3::new(z[1], 2.0 * z[0], 0.0), Support::global()),
            Err(Error::JacobianMismatch { .. })
        ));
        let ok = VolumeVector::new(
            |z| Vec3::new(z[1], -z[0], z[2] * z[2]),
            |z| Mat3x3([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 2.0 * z[2]]]),
            Support::global(),
        )
        .unwrap();
        assert_eq!(ok.curl(Vec3::new(0.3, 0.1, 0.2)), Vec3::new(0.0, 0.0, -2.0));
        assert!(VolumeVector::new(|z| Vec3::new(z[1], 0.0, 0.0), |_| Mat3x3::ZERO, Support::global()).is_err());
    }

    #[test]
    fn tangential_gradient_examples() {
        let x = Vec2::new(0.3, -0.4);
        let c = BoundaryField::constant(2.5);
        assert_eq!(tangential_gradient(&patch("x1"), &c, x).unwrap(), Vec3::ZERO);
        let f = BoundaryField::trace_of(&zeta3());
        let g = tangential_gradient(&patch("x1"), &f, x).unwrap();
        assert!((g - Vec3::new(0.5, 0.0, 0.5)).max_abs() <= 1e-15);
        let z1 = VolumeScalar::new(|z| z[0], |_| Vec3::unit(0), Support::global()).unwrap();
        let g = tangential_gradient(&patch("0"), &BoundaryField::trace_of(&z1), x).unwrap();
        assert_eq!(g, Vec3::unit(0));
    }

    #[test]
    fn stencil_fallback_and_its_absence() {
        let p = patch("0.25*sin(3*x1)*cos(2*x2)");
        let x = Vec2::new(0.2, 0.1);
        let f = BoundaryField::trace_of(&zeta3());
        let exact = tangential_gradient(&p, &f, x).unwrap();
        let approx = tangential_gradient(&p, &f.clone().without_chart_gradient(), x).unwrap();
        assert!((exact - approx).max_abs() <= 1e-6);
        let bare = f.without_chart_gradient().with_stencil(false);
        assert!(matches!(tangential_gradient(&p, &bare, x), Err(Error::NoChartGradient)));
    }

    #[test]
    fn tangential_trace_examples() {
        let x = Vec2::new(0.3, -0.4);
        let flat = patch("0");
        let q = VolumeVector::new(|_| Vec3::new(1.0, 2.0, 3.0), |_| Mat3x3::ZERO, Support::global()).unwrap();
        assert_eq!(tangential_trace(&flat, &q, x).unwrap(), Vec3::new(1.0, 2.0, 0.0));
        let tilted = patch("x1");
        let nu = tilted.unit_normal(x).unwrap();
        let along = VolumeVector::new(move |_| nu.scale(3.0), |_| Mat3x3::ZERO, Support::global()).unwrap();
        assert!(tangential_trace(&tilted, &along, x).unwrap().max_abs() <= 1e-15);
        let grad = VolumeVector::gradient_of(&zeta3());
        let t = tangential_trace(&tilted, &grad, x).unwrap();
        assert!((t - Vec3::new(0.5, 0.0, 0.5)).max_abs() <= 1e-15);
    }

    #[test]
    fn operators_are_tangential_and_match_projector() {
        let p = patch("0.25*sin(3*x1)*cos(2*x2)");
        let grid = build_grid(&p, 6, 1).unwrap();
        let big_f = VolumeScalar::new(
            |z| z[0].sin() * z[1] + z[2] * z[2],
            |z| Vec3::new(z[0].cos() * z[1], z[0].sin(), 2.0 * z[2]),
            Support::global(),
        )
        .unwrap();
        let f = BoundaryField::trace_of(&big_f);
        let q = VolumeVector::gradient_of(&big_f);
        for n in grid.nodes() {
            let c = &n.chart;
            let g = tangential_gradient(&p, &f, c.x).unwrap();
            let t = tangential_trace(&p, &q, c.x).unwrap();
            assert!(c.normal.dot(&g).abs() <= 1e-10);
            assert!(c.normal.dot(&t).abs() <= 1e-10);
            let proj = range_projector(&c.jacobian).unwrap() * q.value(c.point);
            assert!((proj - t).max_abs() <= 1e-10);
        }
    }

    #[test]
    fn operators_are_linear() {
        let p = patch("0.25*sin(3*x1)*cos(2*x2)");
        let f1 = BoundaryField::from_chart_function(|x| x[0].sin(), |x| Vec2::new(x[0].cos(), 0.0));
        let f2 = BoundaryField::from_chart_function(|x| x[0] * x[1], |x| Vec2::new(x[1], x[0]));
        let (a, b) = (1.7, -0.6);
        let combo = BoundaryField::from_chart_function(
            move |x| a * x[0].sin() + b * x[0] * x[1],
            move |x| Vec2::new(a * x[0].cos() + b * x[1], b * x[0]),
        );
        for x in [Vec2::new(0.1, 0.2), Vec2::new(-0.7, 0.5)] {
            let lhs = tangential_gradient(&p, &combo, x).unwrap();
            let rhs =
                tangential_gradient(&p, &f1, x).unwrap().scale(a) + tangential_gradient(&p, &f2, x).unwrap().scale(b);
            assert!((lhs - rhs).max_abs() <= 1e-12 * lhs.max_abs().max(1.0));
        }
    }

    fn lifting_support() -> Rect {
        Rect::new((-0.6, 0.7), (-0.5, 0.8))
    }

    fn sample_field(support: Rect) -> Arc<dyn PlanarField> {
        Arc::new(BumpLegendre {
            support,
            exponent: 3,
            degrees: (2, 1),
            component: 0,
        })
    }

    #[test]
    fn lifting_identities_hold_pointwise() {
        let cases = [
            ("0", lifting_support()),
            ("x1", lifting_support()),
            ("0.25*sin(3*x1)*cos(2*x2)", lifting_support()),
            ("abs(x1)", Rect::new((0.1, 0.9), (-0.9, 0.9))),
        ];
        for (a, support) in cases {
            let p = patch(a);
            let grid = build_grid_with_breaklines(&p, 8, 1, &box_lines(&support)).unwrap();
            for phi in [
                sample_field(support),
                Arc::new(BumpLegendre {
                    support,
                    exponent: 2,
                    degrees: (0, 3),
                    component: 1,
                }) as Arc<dyn PlanarField>,
            ] {
                let lifted = lift_test_field(&p, Arc::clone(&phi), p.default_cutoff()).unwrap();
                assert!(lifted_trace_residual(&p, &grid, &lifted, phi.as_ref()) <= 1e-12, "{a}");
                assert!(lifted_curl_pairing(&p, &grid, &lifted, phi.as_ref()) <= 1e-12, "{a}");
            }
        }
    }

    #[test]
    fn lifted_field_has_consistent_jacobian() {
        let p = patch("0.25*sin(3*x1)*cos(2*x2)");
        let lifted = lift_test_field(&p, sample_field(lifting_support()), p.default_cutoff()).unwrap();
        lifted.check_jacobian().unwrap();
    }

    #[test]
    fn lifting_on_identity_frame_is_rotated_field() {
        let flat = patch("0");
        let phi = sample_field(lifting_support());
        let lifted = lift_test_field(&flat, Arc::clone(&phi), flat.default_cutoff()).unwrap();
        for x in [Vec2::new(0.1, 0.2), Vec2::new(-0.5, 0.7), Vec2::new(0.65, -0.45)] {
            let v = phi.value(x);
            let z = flat.chart_inverse(x).unwrap();
            assert!((lifted.value(z) - Vec3::new(v[1], -v[0], 0.0)).max_abs() <= 1e-14);
        }
        let zero: Arc<dyn PlanarField> =
            Arc::new(ClosureField::new(lifting_support(), |_| Vec2::ZERO, |_| Mat2x2::ZERO));
        let lifted = lift_test_field(&flat, zero, flat.default_cutoff()).unwrap();
        assert_eq!(lifted.value(Vec3::new(0.1, 0.1, 0.0)), Vec3::ZERO);
    }

    #[test]
    fn divergence_free_field_has_no_normal_curl() {
        let support = lifting_support();
        let u = PlanarScalarField::bump_polynomial(support, 4, |_| 1.0, |_| Vec2::ZERO);
        let hess = {
            let s = support;
            move |x: Vec2| {
                let h = 1e-5;
                let g = |y: Vec2| box_bump(&s, 4, y).1;
                let c0 = (g(x + Vec2::new(h, 0.0)) - g(x - Vec2::new(h, 0.0))).scale(0.5 / h);
                let c1 = (g(x + Vec2::new(0.0, h)) - g(x - Vec2::new(0.0, h))).scale(0.5 / h);
                Mat2x2([[c0[0], c1[0]], [c0[1], c1[1]]])
            }
        };
        let phi: Arc<dyn PlanarField> = Arc::new(ClosureField::rotated_gradient(&u, hess));
        let flat = patch("0");
        let lifted = lift_test_field(&flat, phi, flat.default_cutoff()).unwrap();
        let grid = build_grid_with_breaklines(&flat, 6, 1, &box_lines(&support)).unwrap();
        let worst = grid
            .nodes()
            .iter()
            .map(|n| n.chart.normal.dot(&lifted.curl(n.chart.point)).abs())
            .fold(0.0, f64::max);
        // the Hessian is a difference quotient, so the rotated field is only
        // divergence free up to its truncation error
        assert!(worst <= 1e-8, "{worst}");
    }

    #[test]
    fn lifting_rejects_bad_supports() {
        let flat = patch("0");
        let touching = sample_field(Rect::new((-1.0, 0.5), (-0.5, 0.5)));
        assert!(matches!(
            lift_test_field(&flat, touching, flat.default_cutoff()),
            Err(Error::SupportViolation(_))
        ));
        let low = CutoffProfile::new(0.5, 4.5).unwrap();
        assert!(lift_test_field(&flat, sample_field(lifting_support()), low).is_err());
    }

    #[test]
    fn weak_residual_cases() {
        let support = lifting_support();
        let lines = box_lines(&support);
        for a in ["0", "x1", "0.25*sin(3*x1)*cos(2*x2)"] {
            let p = patch(a);
            let grid = build_grid_with_breaklines(&p, 12, 1, &lines).unwrap();
            let lifted = lift_test_field(&p, sample_field(support), p.default_cutoff()).unwrap();
            let big_f = VolumeScalar::new(
                |z| z[0].sin() * z[1] + z[2] * z[2],
                |z| Vec3::new(z[0].cos() * z[1], z[0].sin(), 2.0 * z[2]),
                Support::global(),
            )
            .unwrap();
            let f = BoundaryField::trace_of(&big_f);
            let q = BoundaryField::tangential_gradient_of(&f);
            let w = weak_pairing(&p, &grid, &f, &q, &lifted).unwrap();
            assert!(w.relative() <= 1e-8, "{a}: {w:?}");
            let c = weak_residual(
                &p,
                &grid,
                &BoundaryField::constant(1.0),
                &BoundaryField::zero_vector(),
                &lifted,
            )
            .unwrap();
            assert!(c.abs() <= 1e-8, "{a}: {c}");
            let z = weak_residual(&p, &grid, &f, &q, &VolumeVector::zero()).unwrap();
            assert_eq!(z, 0.0);
        }
    }

    #[test]
    fn weak_residual_preconditions() {
        let p = patch("0");
        let grid = build_grid(&p, 4, 0).unwrap();
        let global = VolumeVector::new(|_| Vec3::ZERO, |_| Mat3x3::ZERO, Support::global()).unwrap();
        let f = BoundaryField::constant(1.0);
        assert!(matches!(
            weak_residual(&p, &grid, &f, &BoundaryField::zero_vector(), &global),
            Err(Error::NonlocalSupport)
        ));
        let normal = BoundaryField::vector(|patch, x| patch.unit_normal(x));
        assert!(matches!(
            weak_residual(&p, &grid, &f, &normal, &VolumeVector::zero()),
            Err(Error::NotTangential(_))
        ));
        let normal = normal.mark_tangential();
        assert!(matches!(
            weak_residual(&p, &grid, &f, &normal, &VolumeVector::zero()),
            Err(Error::NotTangential(_))
        ));
    }

    fn recovery_setup(a: &str, degree: usize) -> (LipschitzPatch, ChartGrid, TestFamily, LegendreBasis) {
        let support = Rect::new((-0.9, 0.9), (-0.9, 0.9));
        let p = patch(a);
        let grid = build_grid_with_breaklines(&p, 12, 1, &box_lines(&support)).unwrap();
        let family = TestFamily::bump_legendre(support, degree + 2, 3);
        let basis = LegendreBasis::new(support, degree);
        (p, grid, family, basis)
    }

    #[test]
    fn recovery_is_exact_in_span() {
        let (p, grid, family, basis) = recovery_setup("x1", 2);
        let f = BoundaryField::from_chart_function(|x| 0.3 + 1.5 * x[0] - 0.7 * x[1], |_| Vec2::new(1.5, -0.7));
        let r = recover_weak_gradient(&p, &grid, &f, &family, &basis).unwrap();
        // constant gradient: only the two constant basis functions are active
        let t = basis.len() / 2;
        assert!((r.coefficients[0] - 1.5).abs() <= 1e-10);
        assert!((r.coefficients[t] + 0.7).abs() <= 1e-10);
        for (i, c) in r.coefficients.iter().enumerate() {
            if i != 0 && i != t {
                assert!(c.abs() <= 1e-10, "{i}: {c}");
            }
        }
        let c = BoundaryField::constant(4.0);
        let r = recover_weak_gradient(&p, &grid, &c, &family, &basis).unwrap();
        assert!(l2_norm_boundary(&p, &grid, &r.field()).unwrap() <= 1e-8);
    }

    #[test]
    fn recovery_error_decreases_with_degree() {
        let mut errors = Vec::new();
        for degree in [2, 4, 6] {
            let (p, grid, family, basis) = recovery_setup("x1", degree);
            let f = BoundaryField::from_chart_function(
                |x| x[0].sin() * x[1].cos(),
                |x| Vec2::new(x[0].cos() * x[1].cos(), -x[0].sin() * x[1].sin()),
            );
            let r = recover_weak_gradient(&p, &grid, &f, &family, &basis).unwrap();
            let strong = BoundaryField::tangential_gradient_of(&f);
            let rec = r.field();
            let dom = basis.domain();
            let diff = grid
                .integrate_surface(|n| {
                    if !dom.contains(n.x(), 0.0) {
                        return Ok(0.0);
                    }
                    let d = rec.eval_vector(&p, n.x())? - strong.eval_vector(&p, n.x())?;
                    Ok(d.norm_squared())
                })
                .unwrap()
                .sqrt();
            errors.push(diff);
        }
        assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
    }

    #[test]
    fn recovery_preconditions() {
        let (p, grid, _, basis) = recovery_setup("0", 4);
        let small = TestFamily::bump_legendre(basis.domain(), 1, 3);
        let f = BoundaryField::constant(1.0);
        assert!(matches!(
            recover_weak_gradient(&p, &grid, &f, &small, &basis),
            Err(Error::InsufficientTests { .. })
        ));
        let thin = LegendreBasis::new(Rect::new((-0.9, 0.9), (0.0, 1e-9)), 4);
        let family = TestFamily::bump_legendre(Rect::new((-0.9, 0.9), (0.0, 1e-9)), 6, 3);
        assert!(recover_weak_gradient(&p, &grid, &f, &family, &thin).is_err());
    }
}
