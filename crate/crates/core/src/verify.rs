//! Named numerical checks of the surface-calculus identities. Each checker
//! returns a [`SuiteReport`] with one row per case and, where a quantity is
//! followed across refinements or basis degrees, a convergence table.

use std::f64::consts::{FRAC_PI_4, FRAC_PI_6};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::calculus::{
    lift_test_field, lifted_curl_pairing, lifted_trace_residual, recover_weak_gradient, tangential_gradient,
    tangential_trace, weak_pairing, BoundaryField, BumpLegendre, LegendreBasis, PlanarField, PlanarScalarField,
    Support, TestFamily, VolumeScalar, VolumeVector, TANGENTIAL_TOLERANCE,
};
use crate::charts::{strip_extension, ChartDomain, LipschitzPatch, Transition};
use crate::error::{Error, Result};
use crate::expr::Rect;
use crate::quadrature::{
    box_lines, build_box_grid, build_grid, build_grid_with_breaklines, legendre_with_derivative, ChartGrid,
    SubgraphRegion,
};
use crate::quadrature::{pairwise_sum, subgraph_integral};
use crate::smallmat::{cross, pinv_3x2, range_projector, tangential_projector, Mat3x2, Vec2, Vec3};

/// Stable identifiers of the asserting checkers.
pub const CHECK_NAMES: [&str; 11] = [
    "appendix-c",
    "gram-det",
    "tangrad-trace",
    "lifting",
    "ibp-boundary",
    "ibp-volume",
    "indep-gradient",
    "indep-measure",
    "indep-projector",
    "weak-strong",
    "h1-from-trace",
];

/// The non-asserting approximation report for strip extensions.
pub const DENSITY_CHECK: &str = "density";

/// Relative residuals below this are treated as roundoff when judging
/// monotone convergence.
pub const ROUNDOFF_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    /// Reported for information only.
    NotAsserted,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Pass => "true",
            Status::Fail => "false",
            Status::NotAsserted => "na",
        }
    }
}

/// One compared quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub case: String,
    pub residual: f64,
    pub tolerance: f64,
    pub status: Status,
    /// Grid refinement, or basis degree for recovery ladders.
    pub refinement: usize,
    pub order: usize,
    /// What was compared, or the error that stopped the case.
    pub detail: String,
}

impl CaseResult {
    pub fn asserted(
        case: impl Into<String>,
        residual: f64,
        tolerance: f64,
        refinement: usize,
        order: usize,
    ) -> CaseResult {
        CaseResult {
            case: case.into(),
            residual,
            tolerance,
            status: if residual <= tolerance {
                Status::Pass
            } else {
                Status::Fail
            },
            refinement,
            order,
            detail: String::new(),
        }
    }

    pub fn informational(case: impl Into<String>, residual: f64, refinement: usize, order: usize) -> CaseResult {
        CaseResult {
            case: case.into(),
            residual,
            tolerance: f64::NAN,
            status: Status::NotAsserted,
            refinement,
            order,
            detail: String::new(),
        }
    }

    pub fn failed(
        case: impl Into<String>,
        tolerance: f64,
        refinement: usize,
        order: usize,
        error: &Error,
    ) -> CaseResult {
        CaseResult {
            case: case.into(),
            residual: f64::NAN,
            tolerance,
            status: Status::Fail,
            refinement,
            order,
            detail: error.to_string(),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> CaseResult {
        self.detail = detail.into();
        self
    }
}

/// A residual followed across a refinement or degree ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct Convergence {
    pub case: String,
    /// `"refinement"` or `"degree"`.
    pub parameter: &'static str,
    pub points: Vec<(usize, f64)>,
    /// Each step decreases, or both ends of the step are below [`ROUNDOFF_FLOOR`].
    pub monotone: bool,
}

impl Convergence {
    pub fn new(case: impl Into<String>, parameter: &'static str, points: Vec<(usize, f64)>) -> Convergence {
        let monotone = points
            .windows(2)
            .all(|w| w[1].1 < w[0].1 || (w[0].1 <= ROUNDOFF_FLOOR && w[1].1 <= ROUNDOFF_FLOOR));
        Convergence {
            case: case.into(),
            parameter,
            points,
            monotone,
        }
    }

    /// Largest ratio between consecutive residuals above the roundoff floor.
    pub fn worst_ratio(&self) -> Option<f64> {
        self.points
            .windows(2)
            .filter(|w| w[0].1 > ROUNDOFF_FLOOR)
            .map(|w| w[1].1 / w[0].1)
            .reduce(f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub check: String,
    pub patch: String,
    /// The configured primary tolerance.
    pub tolerance: f64,
    pub cases: Vec<CaseResult>,
    pub convergence: Vec<Convergence>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn new(check: impl Into<String>, patch: impl Into<String>, tolerance: f64) -> SuiteReport {
        SuiteReport {
            check: check.into(),
            patch: patch.into(),
            tolerance,
            cases: Vec::new(),
            convergence: Vec::new(),
            seconds: 0.0,
        }
    }

    pub fn push(&mut self, case: CaseResult) {
        self.cases.push(case);
    }

    pub fn absorb(&mut self, other: SuiteReport) {
        self.cases.extend(other.cases);
        self.convergence.extend(other.convergence);
    }

    /// True when every asserted case is within its tolerance.
    pub fn pass(&self) -> bool {
        self.cases.iter().all(|c| c.status != Status::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CaseResult> {
        self.cases.iter().filter(|c| c.status == Status::Fail)
    }

    /// Largest residual among asserted cases.
    pub fn max_residual(&self) -> f64 {
        self.cases
            .iter()
            .filter(|c| c.status != Status::NotAsserted)
            .map(|c| c.residual)
            .fold(0.0, |a, b| if b.is_nan() || a.is_nan() { f64::NAN } else { a.max(b) })
    }
}

/// Primary tolerance of a checker and, where a checker has a second class of
/// cases (approximation rather than identity, or curved instead of planar
/// geometry), the tolerance for those.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub primary: f64,
    pub secondary: Option<f64>,
}

impl Tolerance {
    pub fn new(primary: f64, secondary: Option<f64>) -> Tolerance {
        Tolerance { primary, secondary }
    }

    fn secondary_or_primary(&self) -> f64 {
        self.secondary.unwrap_or(self.primary)
    }
}

/// Default tolerance of a named check.
pub fn default_tolerance(check: &str) -> Option<Tolerance> {
    let t = match check {
        "appendix-c" | "gram-det" | "lifting" => Tolerance::new(1e-12, None),
        "tangrad-trace" => Tolerance::new(1e-10, None),
        "ibp-boundary" => Tolerance::new(1e-8, None),
        "ibp-volume" => Tolerance::new(1e-6, Some(1e-5)),
        "indep-gradient" | "indep-measure" | "indep-projector" => Tolerance::new(1e-10, Some(1e-8)),
        "weak-strong" | "h1-from-trace" => Tolerance::new(1e-8, Some(1e-4)),
        DENSITY_CHECK => Tolerance::new(f64::INFINITY, None),
        _ => return None,
    };
    Some(t)
}

/// Parameters shared by all checkers.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSettings {
    /// Gauss points per direction in every cell.
    pub order: usize,
    /// Finest refinement; convergence tables run from 0 to this level.
    pub refinements: usize,
    pub seed: u64,
    /// Random trials for the pointwise algebra checks.
    pub trials: usize,
    /// Recovery basis degrees; test families use degree + 2.
    pub degrees: Vec<usize>,
    /// Exponent of the polynomial bump in test fields.
    pub exponent: u32,
    /// Test-field support box; chosen per patch when absent.
    pub support: Option<Rect>,
    /// Vertical Gauss pieces per cutoff interval at refinement 0, doubled per level.
    pub vertical_subdivisions: usize,
}

impl Default for SuiteSettings {
    fn default() -> SuiteSettings {
        SuiteSettings {
            order: 12,
            refinements: 2,
            seed: 0,
            trials: 1000,
            degrees: vec![2, 4, 6],
            exponent: 3,
            support: None,
            vertical_subdivisions: 2,
        }
    }
}

/// Runs a named check on a patch. `appendix-c` ignores the patch. Errors
/// inside a check become failed rows; an unknown name yields one failed row.
pub fn run_check(
    check: &str,
    patch: Option<&LipschitzPatch>,
    settings: &SuiteSettings,
    tolerance: Tolerance,
) -> SuiteReport {
    let start = Instant::now();
    let patch_name = match (check, patch) {
        ("appendix-c", _) | (_, None) => "all".to_string(),
        (_, Some(p)) => p.name().to_string(),
    };
    let mut report = SuiteReport::new(check, patch_name.clone(), tolerance.primary);
    let body = match (check, patch) {
        ("appendix-c", _) => Ok(check_appendix_c(
            settings,
            tolerance.primary,
            mix_seed(settings.seed, check, "all"),
        )),
        (_, None) => Err(Error::InvalidArgument(format!("check `{check}` needs a patch"))),
        (_, Some(p)) => {
            let seed = mix_seed(settings.seed, check, p.name());
            match check {
                "gram-det" => Ok(check_gram_det(p, settings.trials, tolerance.primary, seed)),
                "tangrad-trace" => tangrad_suite(p, settings, tolerance),
                "lifting" => lifting_suite(p, settings, tolerance),
                "ibp-boundary" => ibp_boundary_suite(p, settings, tolerance),
                "ibp-volume" => ibp_volume_suite(p, settings, tolerance),
                "indep-gradient" | "indep-measure" | "indep-projector" => {
                    independence_suite(check, p, settings, tolerance)
                }
                "weak-strong" => weak_strong_suite(p, settings, tolerance),
                "h1-from-trace" => h1_suite(p, settings, tolerance),
                DENSITY_CHECK => density_suite(p, settings),
                _ => Err(Error::InvalidArgument(format!("unknown check `{check}`"))),
            }
        }
    };
    match body {
        Ok(r) => report.absorb(r),
        Err(e) => report.push(CaseResult::failed(
            "setup",
            tolerance.primary,
            settings.refinements,
            settings.order,
            &e,
        )),
    }
    report.seconds = start.elapsed().as_secs_f64();
    log::debug!(
        "{check} on {patch_name}: pass={} in {:.3}s",
        report.pass(),
        report.seconds
    );
    report
}

/// FNV-1a of the check and patch names, xor the user seed.
fn mix_seed(seed: u64, check: &str, patch: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in check.bytes().chain([0u8]).chain(patch.bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ seed
}

/// A ridge-free box compactly inside the chart domain for test-field supports.
pub fn test_support(patch: &LipschitzPatch) -> Result<Rect> {
    let base = match patch.domain() {
        ChartDomain::Rect(r) => *r,
        ChartDomain::Disk { radius } => {
            let s = radius / 2f64.sqrt();
            Rect::new((-s, s), (-s, s))
        }
    };
    let candidates = [
        ((-0.9, 0.9), (-0.9, 0.9)),
        ((0.1, 0.9), (-0.9, 0.9)),
        ((0.5, 0.9), (0.05, 0.45)),
        ((-0.9, -0.1), (-0.9, 0.9)),
        ((-0.9, 0.9), (0.1, 0.9)),
    ];
    let map = |(lo, hi): (f64, f64), i: usize| {
        let c = 0.5 * (base.lo[i] + base.hi[i]);
        let w = 0.5 * (base.hi[i] - base.lo[i]);
        (c + lo * w, c + hi * w)
    };
    for (a, b) in candidates {
        let r = Rect::new(map(a, 0), map(b, 1));
        if patch.domain().contains_box_strictly(&r) && ridge_free(patch, &r) {
            return Ok(r);
        }
    }
    Err(Error::SupportViolation(format!(
        "no ridge-free test box in the domain of `{}`",
        patch.name()
    )))
}

fn ridge_free(patch: &LipschitzPatch, r: &Rect) -> bool {
    patch.ridges().lines().iter().all(|line| {
        let d: Vec<f64> = r.corners().iter().map(|&c| line.signed_distance(c)).collect();
        d.iter().all(|&t| t > 1e-9) || d.iter().all(|&t| t < -1e-9)
    })
}

fn support_for(patch: &LipschitzPatch, settings: &SuiteSettings) -> Result<Rect> {
    match settings.support {
        Some(r) => {
            if !ridge_free(patch, &r) {
                return Err(Error::SupportViolation("configured support box meets a ridge".into()));
            }
            Ok(r)
        }
        None => test_support(patch),
    }
}

fn grid_on(patch: &LipschitzPatch, support: &Rect, order: usize, refinement: usize) -> Result<ChartGrid> {
    match patch.domain() {
        ChartDomain::Rect(_) => build_grid_with_breaklines(patch, order, refinement, &box_lines(support)),
        ChartDomain::Disk { .. } => build_box_grid(patch, support, order, refinement),
    }
}

/// True for ridge-free patches whose graph is not a plane.
fn is_curved(patch: &LipschitzPatch) -> bool {
    patch.ridges().is_empty() && patch.graph_expr().and_then(|e| e.as_affine()).is_none()
}

fn scalar_field(value: fn(Vec3) -> f64, gradient: fn(Vec3) -> Vec3) -> VolumeScalar {
    VolumeScalar::from_parts(Arc::new(value), Arc::new(gradient), Support::global())
}

/// Smooth volume scalars used across the checks, by name.
pub fn named_volume_field(name: &str) -> Option<VolumeScalar> {
    let f = match name {
        "const" => scalar_field(|_| 1.0, |_| Vec3::ZERO),
        "zeta1" => scalar_field(|z| z[0], |_| Vec3::unit(0)),
        "zeta3" => scalar_field(|z| z[2], |_| Vec3::unit(2)),
        "linear" => scalar_field(|z| z[0] + 2.0 * z[1] - z[2], |_| Vec3::new(1.0, 2.0, -1.0)),
        "poly" => scalar_field(|z| z[0] * z[1] + z[2] * z[2], |z| Vec3::new(z[1], z[0], 2.0 * z[2])),
        "sin-poly" => scalar_field(
            |z| z[0].sin() * z[1] + z[2] * z[2],
            |z| Vec3::new(z[0].cos() * z[1], z[0].sin(), 2.0 * z[2]),
        ),
        "exp-cos" => scalar_field(
            |z| (0.5 * z[0] - 0.3 * z[1]).exp() * z[2].cos(),
            |z| {
                let e = (0.5 * z[0] - 0.3 * z[1]).exp();
                Vec3::new(0.5 * e * z[2].cos(), -0.3 * e * z[2].cos(), -e * z[2].sin())
            },
        ),
        "sin-cos" => scalar_field(
            |z| z[0].sin() * z[1].cos(),
            |z| Vec3::new(z[0].cos() * z[1].cos(), -z[0].sin() * z[1].sin(), 0.0),
        ),
        _ => return None,
    };
    Some(f)
}

fn field(name: &str) -> VolumeScalar {
    named_volume_field(name).unwrap_or_else(|| unreachable!("built-in field {name}"))
}

/// Five bump-Legendre test fields of increasing degree on a support box.
pub fn planar_test_fields(support: Rect, exponent: u32) -> Vec<(String, Arc<dyn PlanarField>)> {
    [((0, 0), 0), ((1, 0), 1), ((2, 1), 0), ((1, 2), 1), ((0, 1), 0)]
        .into_iter()
        .map(|(degrees, component)| {
            let name = format!("P{}{}e{}", degrees.0, degrees.1, component + 1);
            let f: Arc<dyn PlanarField> = Arc::new(BumpLegendre {
                support,
                exponent,
                degrees,
                component,
            });
            (name, f)
        })
        .collect()
}

fn relative(residual: f64, scale: f64) -> f64 {
    residual / scale.max(1.0)
}

// ---------------------------------------------------------------------------
// Pointwise algebra

/// Random trials of `det(I + v v^T) = 1 + |v|^2`, `(w x v) x w = (I - w w^T) v`
/// and the Moore-Penrose axioms for `A A^dagger`; relative residuals.
pub fn check_appendix_c(settings: &SuiteSettings, tolerance: f64, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("appendix-c", "all", tolerance);
    let (r, o) = (0, 0);

    let mut worst = 0.0_f64;
    for k in 0..settings.trials {
        let n = 1 + k % 4;
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let m = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } + v[i] * v[j]);
        let brute = m.determinant();
        let closed = crate::smallmat::det_rank1_update(&v);
        worst = worst.max((brute - closed).abs() / closed.abs().max(1.0));
    }
    report.push(
        CaseResult::asserted("rank-one-determinant", worst, tolerance, r, o).with_detail("det(I+vv^T) vs 1+|v|^2"),
    );

    let mut worst = 0.0_f64;
    for _ in 0..settings.trials {
        let w = random_unit(&mut rng);
        let v = Vec3::new(
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
        );
        let lhs = cross(cross(w, v), w);
        let res = match tangential_projector(w) {
            Ok(p) => (lhs - p * v).max_abs() / v.max_abs().max(1.0),
            Err(_) => f64::NAN,
        };
        worst = if res.is_nan() { f64::NAN } else { worst.max(res) };
    }
    report.push(
        CaseResult::asserted("double-cross-projector", worst, tolerance, r, o)
            .with_detail("(w x v) x w vs (I - ww^T) v"),
    );

    let mut worst = 0.0_f64;
    let mut drawn = 0;
    while drawn < settings.trials {
        let a = Mat3x2([
            [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        ]);
        if crate::smallmat::singular_ratio(&a) < 1e-2 {
            continue;
        }
        drawn += 1;
        let Ok(ap) = pinv_3x2(&a) else {
            worst = f64::NAN;
            break;
        };
        let p = a * ap;
        let q = ap * a;
        let sa = a.max_abs();
        let sp = ap.max_abs();
        let residuals = [
            (p * p).max_abs_diff(&p),
            p.max_abs_diff(&p.transpose()),
            (p * a).max_abs_diff(&a) / sa,
            (q * ap).max_abs_diff(&ap) / sp,
            q.max_abs_diff(&q.transpose()),
            q.max_abs_diff(&crate::smallmat::Mat2x2::identity()),
        ];
        worst = residuals.iter().fold(worst, |m, &x| m.max(x));
    }
    report.push(
        CaseResult::asserted("projector-axioms", worst, tolerance, r, o)
            .with_detail("AA^dagger idempotent, symmetric, fixes ran A"),
    );
    report
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v.scale(1.0 / n);
        }
    }
}

/// Closed-form Gram determinant `1 + |grad a|^2` against `det(A^T A)` at
/// random off-ridge points; relative residuals.
pub fn check_gram_det(patch: &LipschitzPatch, trials: usize, tolerance: f64, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("gram-det", patch.name(), tolerance);
    let b = patch.domain().bounding_rect();
    let mut worst = 0.0_f64;
    let mut count = 0;
    let mut attempts = 0;
    while count < trials && attempts < 100 * trials.max(1) {
        attempts += 1;
        let x = Vec2::new(rng.random_range(b.lo[0]..b.hi[0]), rng.random_range(b.lo[1]..b.hi[1]));
        if !patch.domain().contains(x, 0.0) {
            continue;
        }
        let (closed, a) = match (patch.gram_det(x), patch.jacobian_inverse_chart(x)) {
            (Ok(g), Ok(a)) => (g, a),
            (Err(Error::OnRidge { .. }), _) | (_, Err(Error::OnRidge { .. })) => continue,
            (Err(e), _) | (_, Err(e)) => {
                report.push(CaseResult::failed("random-points", tolerance, 0, 0, &e));
                return report;
            }
        };
        let brute = a.gram().determinant();
        worst = worst.max((closed - brute).abs() / closed.abs());
        count += 1;
    }
    report.push(
        CaseResult::asserted("random-points", worst, tolerance, 0, 0)
            .with_detail(format!("{count} points, 1+|grad a|^2 vs det(A^T A)")),
    );
    report
}

/// Pointwise `grad_tau (F|Gamma)` against `tantr grad F` at grid nodes, the
/// former through the chart gradient `(dk^{-1})^T grad F` and the
/// pseudoinverse, the latter through the double cross product.
pub fn check_tangrad_vs_trace(
    patch: &LipschitzPatch,
    grid: &ChartGrid,
    name: &str,
    f: &VolumeScalar,
    tolerance: f64,
) -> CaseResult {
    let trace = BoundaryField::trace_of(f);
    let grad = VolumeVector::gradient_of(f);
    let mut worst = 0.0_f64;
    for n in grid.nodes() {
        let x = n.x();
        let r = tangential_gradient(patch, &trace, x)
            .and_then(|a| Ok((a, tangential_trace(patch, &grad, x)?)))
            .map(|(a, b)| relative((a - b).max_abs(), f.gradient(n.chart.point).max_abs()));
        match r {
            Ok(r) => worst = worst.max(r),
            Err(e) => return CaseResult::failed(name, tolerance, grid.refinement(), grid.order(), &e),
        }
    }
    CaseResult::asserted(name, worst, tolerance, grid.refinement(), grid.order())
        .with_detail("grad_tau(F|Gamma) vs (nu x grad F) x nu")
}

fn tangrad_suite(patch: &LipschitzPatch, s: &SuiteSettings, tol: Tolerance) -> Result<SuiteReport> {
    let grid = build_grid(patch, s.order, s.refinements)?;
    let mut report = SuiteReport::new("tangrad-trace", patch.name(), tol.primary);
    for name in ["const", "zeta3", "sin-poly", "exp-cos"] {
        report.push(check_tangrad_vs_trace(patch, &grid, name, &field(name), tol.primary));
    }
    Ok(report)
}

/// Both lifting identities at grid nodes for one planar field, relative to
/// the size of the chart-side quantities.
pub fn check_lifting_identities(
    patch: &LipschitzPatch,
    grid: &ChartGrid,
    name: &str,
    phi: Arc<dyn PlanarField>,
    tolerance: f64,
) -> Vec<CaseResult> {
    let (r, o) = (grid.refinement(), grid.order());
    let lifted = match lift_test_field(patch, Arc::clone(&phi), patch.default_cutoff()) {
        Ok(l) => l,
        Err(e) => return vec![CaseResult::failed(format!("{name}:trace"), tolerance, r, o, &e)],
    };
    let mut trace_scale = 0.0_f64;
    let mut div_scale = 0.0_f64;
    for n in grid.nodes() {
        trace_scale = trace_scale.max((n.chart.jacobian * phi.value(n.x())).max_abs());
        div_scale = div_scale.max(phi.divergence(n.x()).abs());
    }
    let t = lifted_trace_residual(patch, grid, &lifted, phi.as_ref());
    let d = lifted_curl_pairing(patch, grid, &lifted, phi.as_ref());
    vec![
        CaseResult::asserted(format!("{name}:trace"), relative(t, trace_scale), tolerance, r, o)
            .with_detail("dk^{-1} phi vs sqrt(g) nu x Phi"),
        CaseResult::asserted(format!("{name}:divergence"), relative(d, div_scale), tolerance, r, o)
            .with_detail("div phi vs -sqrt(g) nu . rot Phi"),
    ]
}

fn lifting_suite(patch: &LipschitzPatch, s: &SuiteSettings, tol: Tolerance) -> Result<SuiteReport> {
    let support = support_for(patch, s)?;
    let grid = grid_on(patch, &support, s.order, s.refinements)?;
    let mut report = SuiteReport::new("lifting", patch.name(), tol.primary);
    for (name, phi) in planar_test_fields(support, s.exponent) {
        for c in check_lifting_identities(patch, &grid, &name, phi, tol.primary) {
            report.push(c);
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Integration by parts

/// `|<tantr grad F, nu x Phi> - <F, nu . rot Phi>|` on the patch graph,
/// relative to the Cauchy-Schwarz bound of the two terms.
pub fn ibp_boundary_residual(
    patch: &LipschitzPatch,
    grid: &ChartGrid,
    f: &VolumeScalar,
    phi: &VolumeVector,
) -> Result<f64> {
    let trace = BoundaryField::trace_of(f);
    let q = BoundaryField::tangential_trace_of(&VolumeVector::gradient_of(f));
    let w = weak_pairing(patch, grid, &trace, &q, phi)?;
    Ok(w.relative())
}

/// [`ibp_boundary_residual`] for one `(F, Phi)` pair with a convergence table
/// over the given grids.
pub fn check_ibp_boundary(
    patch: &LipschitzPatch,
    grids: &[ChartGrid],
    case: &str,
    f: &VolumeScalar,
    phi: &VolumeVector,
    tolerance: f64,
) -> SuiteReport {
    let mut report = SuiteReport::new("ibp-boundary", patch.name(), tolerance);
    let mut points = Vec::new();
    for grid in grids {
        match ibp_boundary_residual(patch, grid, f, phi) {
            Ok(r) => points.push((grid.refinement(), r)),
            Err(e) => {
                report.push(CaseResult::failed(case, tolerance, grid.refinement(), grid.order(), &e));
                return report;
            }
        }
    }
    if let (Some(&(r, res)), Some(g)) = (points.last(), grids.last()) {
        report.push(
            CaseResult::asserted(case, res, tolerance, r, g.order())
                .with_detail("<tantr grad F, nu x Phi> vs <F, nu . rot Phi>"),
        );
    }
    report.convergence.push(Convergence::new(case, "refinement", points));
    report
}

fn refinement_grids(patch: &LipschitzPatch, support: &Rect, s: &SuiteSettings) -> Result<Vec<ChartGrid>> {
    (0..=s.refinements)
        .map(|r| grid_on(patch, support, s.order, r))
        .collect()
}

fn ibp_boundary_suite(patch: &LipschitzPatch, s: &SuiteSettings, tol: Tolerance) -> Result<SuiteReport> {
    let support = support_for(patch, s)?;
    let grids = refinement_grids(patch, &support, s)?;
    let mut report = SuiteReport::new("ibp-boundary", patch.name(), tol.primary);
    let fields = ["zeta3", "poly", "sin-poly", "exp-cos", "const"];
    for (fname, (pname, phi)) in fields.iter().zip(planar_test_fields(support, s.exponent)) {
        let case = format!("{fname}/{pname}");
        match lift_test_field(patch, phi, patch.default_cutoff()) {
            Ok(lifted) => report.absorb(check_ibp_boundary(
                patch,
                &grids,
                &case,
                &field(fname),
                &lifted,
                tol.primary,
            )),
            Err(e) => report.push(CaseResult::failed(case, tol.primary, s.refinements, s.order, &e)),
        }
    }
    let finest = grids.last().ok_or_else(|| Error::InvalidArgument("no grids".into()))?;
    let zero = weak_pairing(
        patch,
        finest,
        &BoundaryField::trace_of(&field("sin-poly")),
        &BoundaryField::tangential_trace_of(&VolumeVector::gradient_of(&field("sin-poly"))),
        &VolumeVector::zero(),
    )?;
    report.push(CaseResult::asserted(
        "zero-field",
        zero.residual().abs(),
        tol.primary,
        s.refinements,
        s.order,
    ));
    Ok(report)
}

/// `|int_{subgraph} grad F . rot Phi - <tantr grad F, nu x Phi>_{L2(Gamma)}|`
/// relative to `int |grad F . rot Phi|` plus the surface Cauchy-Schwarz bound.
pub fn ibp_volume_residual(
    patch: &LipschitzPatch,
    region: &SubgraphRegion,
    grid: &ChartGrid,
    f: &VolumeScalar,
    phi: &VolumeVector,
) -> Result<f64> {
    if !phi.support().patch_local {
        return Err(Error::NonlocalSupport);
    }
    let volume = subgraph_integral(patch, region, grid, |z| f.gradient(z).dot(&phi.curl(z)))?;
    let volume_abs = subgraph_integral(patch, region, grid, |z| f.gradient(z).dot(&phi.curl(z)).abs())?;
    let trace = BoundaryField::trace_of(f);
    let q = BoundaryField::tangential_trace_of(&VolumeVector::gradient_of(f));
    let w = weak_pairing(patch, grid, &trace, &q, phi)?;
    let scale = volume_abs + w.scale;
    let r = (volume - w.flux).abs();
    Ok(if scale > 0.0 { r / scale } else { r })
}

/// [`ibp_volume_residual`] across grids; vertical pieces double with each grid.
#[allow(clippy::too_many_arguments)]
pub fn check_ibp_volume(
    patch: &LipschitzPatch,
    grids: &[ChartGrid],
    vertical_subdivisions: usize,
    case: &str,
    f: &VolumeScalar,
    phi: &VolumeVector,
    tolerance: f64,
) -> SuiteReport {
    let mut report = SuiteReport::new("ibp-volume", patch.name(), tolerance);
    let c = patch.default_cutoff();
    let mut points = Vec::new();
    for grid in grids {
        let region = SubgraphRegion::new(grid.order())
            .with_breakpoints(&[-c.r1, -c.r0, c.r0, c.r1])
            .with_subdivisions(vertical_subdivisions << grid.refinement());
        match ibp_volume_residual(patch, &region, grid, f, phi) {
            Ok(r) => points.push((grid.refinement(), r)),
            Err(e) => {
                report.push(CaseResult::failed(case, tolerance, grid.refinement(), grid.order(), &e));
                return report;
            }
        }
    }
    if let (Some(&(r, res)), Some(g)) = (points.last(), grids.last()) {
        report.push(
            CaseResult::asserted(case, res, tolerance, r, g.order())
                .with_detail("volume grad F . rot Phi vs surface flux"),
        );
    }
    report.convergence.push(Convergence::new(case, "refinement", points));
    report
}

fn ibp_volume_suite(patch: &LipschitzPatch, s: &SuiteSettings, tol: Tolerance) -> Result<SuiteReport> {
    let support = support_for(patch, s)?;
    let grids = refinement_grids(patch, &support, s)?;
    let tolerance = if is_curved(patch) {
        tol.secondary_or_primary()
    } else {
        tol.primary
    };
    let mut report = SuiteReport::new("ibp-volume", patch.name(), tol.primary);
    let fields = planar_test_fields(support, s.exponent);
    for (fname, k) in [("linear", 0), ("sin-poly", 2), ("exp-cos", 3)] {
        let (pname, phi) = fields[k].clone();
        let case = format!("{fname}/{pname}");
        match lift_test_field(patch, phi, patch.default_cutoff()) {
            Ok(lifted) => report.absorb(check_ibp_volume(
                patch,
                &grids,
                s.vertical_subdivisions,
                &case,
                &field(fname),
                &lifted,
                tolerance,
            )),
            Err(e) => report.push(CaseResult::failed(case, tolerance, s.refinements, s.order, &e)),
        }
    }
    let finest = grids.last().ok_or_else(|| Error::InvalidArgument("no grids".into()))?;
    let region = SubgraphRegion::new(s.order);
    let zero = subgraph_integral(patch, &region, finest, |z| {
        field("linear").gradient(z).dot(&VolumeVector::zero().curl(z))
    })?;
    report.push(CaseResult::asserted(
        "zero-field",
        zero.abs(),
        tolerance,
        s.refinements,
        s.order,
    ));
    Ok(report)
}

// ---------------------------------------------------------------------------
// Chart independence

/// A second chart of the same surface piece.
#[derive(Debug, Clone)]
pub struct Reframing {
    pub label: String,
    pub patch: LipschitzPatch,
    /// Planar geometry or a linear transition; otherwise the overlap is
    /// resolved by root finding and the secondary tolerance applies.
    pub exact: bool,
}

/// Largest centred square (scaled by `fraction`) whose rotations stay in the domain.
fn inner_square(domain: &ChartDomain, fraction: f64) -> ChartDomain {
    let r = match domain {
        ChartDomain::Rect(b) => {
            if b.contains(Vec2::ZERO, 0.0) {
                (-b.lo[0]).min(b.hi[0]).min(-b.lo[1]).min(b.hi[1])
            } else {
                0.0
            }
        }
        ChartDomain::Disk { radius } => *radius,
    };
    let s = fraction * r / 2f64.sqrt();
    ChartDomain::rect((-s, s), (-s, s))
}

fn fitted<F>(patch: &LipschitzPatch, make: F) -> Result<LipschitzPatch>
where
    F: Fn(ChartDomain) -> Result<LipschitzPatch>,
{
    let mut last = Error::OutOfOverlap(format!("no common region found for `{}`", patch.name()));
    for fraction in [0.99, 0.8, 0.6, 0.4, 0.25] {
        match make(inner_square(patch.domain(), fraction)) {
            Ok(p) => return Ok(p),
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// Re-expressions of a patch: an in-plane rotation by 30 degrees always; a
/// 45 degree tilt for planes; a 0.3 rad tilt for smooth curved patches.
pub fn reframings(patch: &LipschitzPatch) -> Result<Vec<Reframing>> {
    let mut out = Vec::new();
    let rotated = fitted(patch, |d| {
        patch.rotated_in_plane(format!("{}-rot30", patch.name()), FRAC_PI_6, d)
    })?;
    out.push(Reframing {
        label: "rotate-30".into(),
        patch: rotated,
        exact: true,
    });
    let planar = patch.graph_expr().and_then(|e| e.as_affine()).is_some();
    let tilt = if planar {
        Some(("tilt-45", FRAC_PI_4, true))
    } else if patch.ridges().is_empty() {
        Some(("tilt-0.3", 0.3, false))
    } else {
        None
    };
    if let Some((label, theta, exact)) = tilt {
        let frame = patch.frame().tilted(theta);
        let p = fitted(patch, |d| {
            patch.reframed(
                format!("{}-{label}", patch.name()),
                patch.anchor(),
                frame,
                patch.epsilon(),
                patch.half_height(),
                d,
            )
        })?;
        out.push(Reframing {
            label: label.into(),
            patch: p,
            exact,
        });
    }
    Ok(out)
}

/// Off-ridge sample points of `second` whose images lie off the ridges of `first`.
fn overlap_samples(first: &LipschitzPatch, second: &LipschitzPatch) -> Result<Vec<(Vec2, Vec2)>> {
    let t = Transition::new(second, first);
    let mut out = Vec::new();
    for x in second.domain().sample_grid(11) {
        if second.graph_gradient(x).is_err() {
            continue;
        }
        let y = t.map_point(x)?;
        if first.graph_gradient(y).is_err() {
            continue;
        }
        out.push((x, y));
    }
    Ok(out)
}

/// Max `|grad_tau f|` difference between two charts at common points; `f1`
/// and `f2` describe the same boundary function through each chart.
pub fn check_chart_independence_gradient(
    first: &LipschitzPatch,
    second: &LipschitzPatch,
    case: &str,
    f1: &BoundaryField,
    f2: &BoundaryField,
    tolerance: f64,
) -> CaseResult {
    let run = || -> Result<f64> {
        let mut worst = 0.0_f64;
        for (x, y) in overlap_samples(first, second)? {
            let g1 = tangential_gradient(first, f1, y)?;
            let g2 = tangential_gradient(second, f2, x)?;
            worst = worst.max(relative((g1 - g2).max_abs(), g1.max_abs()));
        }
        Ok(worst)
    };
    match run() {
        Ok(r) => CaseResult::asserted(case, r, tolerance, 0, 0).with_detail("grad_tau f through two charts"),
        Err(e) => CaseResult::failed(case, tolerance, 0, 0, &e),
    }
}

/// Surface area of the second chart's domain through both charts: directly,
/// and through the first chart by change of variables with the transition map,
/// `int sqrt(g1(T x)) |det dT(x)| dx`. Returns both areas.
pub fn measure_through_charts(first: &LipschitzPatch, second: &LipschitzPatch, grid: &ChartGrid) -> Result<(f64, f64)> {
    let direct = grid.integrate_surface(|_| Ok(1.0))?;
    let t = Transition::new(second, first);
    let pulled = grid.integrate_flat(|n| {
        let (y, dt) = t.map(n.x())?;
        Ok(first.gram_det(y)?.sqrt() * dt.determinant().abs())
    })?;
    Ok((direct, pulled))
}

/// Max entrywise difference of the two range projectors at common points.
pub fn check_projector_coincidence(
    first: &LipschitzPatch,
    second: &LipschitzPatch,
    case: &str,
    tolerance: f64,
) -> CaseResult {
    let run = || -> Result<f64> {
        let mut worst = 0.0_f64;
        for (x, y) in overlap_samples(first, second)? {
            let p1 = range_projector(&first.jacobian_inverse_chart(y)?)?;
            let p2 = range_projector(&second.jacobian_inverse_chart(x)?)?;
            worst = worst.max(p1.max_abs_diff(&p2));
        }
        Ok(worst)
    };
    match run() {
        Ok(r) => CaseResult::asserted(case, r, tolerance, 0, 0).with_detail("range projectors of dk^{-1}"),
        Err(e) => CaseResult::failed(case, tolerance, 0, 0, &e),
    }
}

fn transported(first: &LipschitzPatch, second: &LipschitzPatch) -> (BoundaryField, BoundaryField) {
    let u = |x: Vec2| x[0].sin() * x[1].cos() + x[0] * x[1];
    let du = |x: Vec2| Vec2::new(x[0].cos() * x[1].cos() + x[1], -x[0].sin() * x[1].sin() + x[0]);
    let f1 = BoundaryField::from_chart_function(u, du);
    let (a, b) = (first.clone(), second.clone());
    let (c, d) = (first.clone(), second.clone());
    let f2 = BoundaryField::scalar(move |_, x| Ok(u(Transition::new(&b, &a).map_point(x)?))).with_chart_gradient(
        move |_, x| {
            let (y, dt) = Transition::new(&d, &c).map(x)?;
            Ok(dt.transpose() * du(y))
        },
    );
    (f1, f2)
}

fn independence_suite(check: &str, patch: &LipschitzPatch, s: &SuiteSettings, tol: Tolerance) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(check, patch.name(), tol.primary);
    let mut pairs = vec![Reframing {
        label: "identical".into(),
        patch: patch.clone(),
        exact: true,
    }];
    pairs.extend(reframings(patch)?);
    for other in &pairs {
        let tolerance = if other.exact {
            tol.primary
        } else {
            tol.secondary_or_primary()
        };
        let label = &other.label;
        match check {
            "indep-gradient" => {
                for name in ["const", "zeta1", "sin-poly"] {
                    let f = BoundaryField::trace_of(&field(name));
                    report.push(check_chart_independence_gradient(
                        patch,
                        &other.patch,
                        &format!("{label}:{name}"),
                        &f,
                        &f,
                        tolerance,
                    ));
                }
                let (f1, f2) = transported(patch, &other.patch);
                report.push(check_chart_independence_gradient(
                    patch,
                    &other.patch,
                    &format!("{label}:transported"),
                    &f1,
                    &f2,
                    tolerance,
                ));
            }
            "indep-measure" => {
                let result = build_grid(&other.patch, s.order, s.refinements)
                    .and_then(|g| Ok((measure_through_charts(patch, &other.patch, &g)?, g.flat_area())));
                match result {
                    Ok(((direct, pulled), flat)) => {
                        report.push(
                            CaseResult::asserted(
                                format!("{label}:transition"),
                                (direct - pulled).abs() / direct,
                                tolerance,
                                s.refinements,
                                s.order,
                            )
                            .with_detail(format!("areas {direct:.17e} and {pulled:.17e}")),
                        );
                        if let Some([_, c1, c2]) = other.patch.graph_expr().and_then(|e| e.as_affine()) {
                            let exact = flat * (1.0 + c1 * c1 + c2 * c2).sqrt();
                            report.push(
                                CaseResult::asserted(
                                    format!("{label}:analytic"),
                                    (direct - exact).abs() / exact,
                                    tolerance,
                                    s.refinements,
                                    s.order,
                                )
                                .with_detail("plane area sqrt(1+|grad a|^2) |U|"),
                            );
                        }
                    }
                    Err(e) => report.push(CaseResult::failed(
                        format!("{label}:transition"),
                        tolerance,
                        s.refinements,
                        s.order,
                        &e,
                    )),
                }
            }
            _ => report.push(check_projector_coincidence(patch, &other.patch, label, tolerance)),
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Weak gradients

/// `(int_B |q - t|^2)^(1/2)` and `(int_B |t|^2)^(1/2)` over the nodes in `B`.
fn l2_difference(
    patch: &LipschitzPatch,
    grid: &ChartGrid,
    b: &Rect,
    q: &BoundaryField,
    truth: &BoundaryField,
) -> Result<(f64, f64)> {
    let mut diff = Vec::new();
    let mut norm = Vec::new();
    for n in grid.nodes() {
        if !b.contains(n.x(), 0.0) {
            continue;
        }
        let w = n.surface_weight();
        let a = q.eval_vector(patch, n.x())?;
        let t = truth.eval_vector(patch, n.x())?;
        diff.push(w * (a - t).norm_squared());
        norm.push(w * t.norm_squared());
    }
    Ok((pairwise_sum(&diff).max(0.0).sqrt(), pairwise_sum(&norm).max(0.0).sqrt()))
}

/// Relative error when the truth is nonzero, absolute otherwise.
fn recovery_error(
    patch: &LipschitzPatch,
    grid: &ChartGrid,
    b: &Rect,
    q: &BoundaryField,
    truth: &BoundaryField,
) -> Result<f64> {
    let (d, t) = l2_difference(patch, grid, b, q, truth)?;
    Ok(if t > 0.0 { d / t } else { d })
}

fn max_normal_component(patch: &LipschitzPatch, grid: &ChartGrid, b: &Rect, q: &BoundaryField) -> Result<f64> {
    let mut worst = 0.0_f64;
    for n in grid.nodes() {
        if b.contains(n.x(), 0.0) {
            let v = q.eval_vector(patch, n.x())?;
            worst = worst.max(n.chart.normal.dot(&v).abs() / v.norm().max(1.0));
        }
    }
    Ok(worst)
}

/// Recovers `grad_tau f` from weak data at each degree and compares it with
/// the strong tangential gradient; also checks the tangentiality of the
/// recovered field. Errors are relative `L2` errors over the basis box.
pub fn check_weak_equals_strong(
    patch: &LipschitzPatch,
    grid: &ChartGrid,
    case: &str,
    f: &BoundaryField,
    support: Rect,
    degrees: &[usize],
    exponent: u32,
) -> Result<(Vec<(usize, f64)>, f64)> {
    let truth = BoundaryField::tangential_gradient_of(f);
    let mut ladder = Vec::new();
    let mut normal = 0.0_f64;
    for &d in degrees {
        let family = TestFamily::bump_legendre(support, d + 2, exponent);
        let basis = LegendreBasis::new(support, d);
        let rec = recover_weak_gradient(patch, grid, f, &family, &basis)?.field();
        ladder.push((d, recovery_error(patch, grid, &support, &rec, &truth)?));
        normal = normal.max(max_normal_component(patch, grid, &support, &rec)?);
    }
    log::trace!("{case}: {ladder:?}");
    Ok((ladder, normal))
}

/// One rung of a recovery ladder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryStep {
    pub degree: usize,
    /// Relative L2 error against the strong tangential gradient on the support box.
    pub error: f64,
    pub residual_norm: f64,
    pub condition: f64,
}

/// Recovers the weak gradient of the trace of `f` for every configured degree.
pub fn recovery_ladder(
    patch: &LipschitzPatch,
    settings: &SuiteSettings,
    f: &VolumeScalar,
) -> Result<Vec<RecoveryStep>> {
    let support = support_for(patch, settings)?;
    let grid = grid_on(patch, &support, settings.order, settings.refinements)?;
    let trace = BoundaryField::trace_of(f);
    let truth = BoundaryField::tangential_gradient_of(&trace);
    settings
        .degrees
        .iter()
        .map(|&d| {
            let family = TestFamily::bump_legendre(support, d + 2, settings.exponent);
            let basis = LegendreBasis::new(support, d);
            let rec = recover_weak_gradient(patch, &grid, &trace, &family, &basis)?;
            Ok(RecoveryStep {
                degree: d,
                error: recovery_error(patch, &grid, &support, &rec.field(), &truth)?,
                residual_norm: rec.residual_norm,
                condition: rec.condition,
            })
        })
        .collect()
}

fn weak_strong_suite(patch: &LipschitzPatch, s: &SuiteSettings, tol: Tolerance) -> Result<SuiteReport> {
    let support = support_for(patch, s)?;
    let grid = grid_on(patch, &support, s.order, s.refinements)?;
    let (r, o) = (s.refinements, s.order);
    let mut report = SuiteReport::new("weak-strong", patch.name(), tol.primary);
    let lowest = s.degrees.iter().copied().min().unwrap_or(2).max(1);
    let mut normal = 0.0_f64;

    let in_span = BoundaryField::from_chart_function(
        |x| 0.3 + 1.5 * x[0] - 0.7 * x[1] + 0.4 * x[0] * x[1],
        |x| Vec2::new(1.5 + 0.4 * x[1], -0.7 + 0.4 * x[0]),
    );
    let constant = BoundaryField::constant(2.0);
    for (case, f) in [("in-span", &in_span), ("const", &constant)] {
        match check_weak_equals_strong(patch, &grid, case, f, support, &[lowest], s.exponent) {
            Ok((ladder, nrm)) => {
                normal = normal.max(nrm);
                report.push(
                    CaseResult::asserted(case, ladder[0].1, tol.primary, lowest, o)
                        .with_detail("recovered vs strong gradient"),
                );
            }
            Err(e) => report.push(CaseResult::failed(case, tol.primary, lowest, o, &e)),
        }
    }

    let sc = BoundaryField::from_chart_function(
        |x| x[0].sin() * x[1].cos(),
        |x| Vec2::new(x[0].cos() * x[1].cos(), -x[0].sin() * x[1].sin()),
    );
    match check_weak_equals_strong(patch, &grid, "sin-cos", &sc, support, &s.degrees, s.exponent) {
        Ok((ladder, nrm)) => {
            normal = normal.max(nrm);
            for &(d, e) in &ladder {
                report.push(CaseResult::informational(format!("sin-cos:degree-{d}"), e, d, o));
            }
            if let Some(&(d, e)) = ladder.last() {
                report.push(
                    CaseResult::asserted("sin-cos", e, tol.secondary_or_primary(), d, o)
                        .with_detail("relative L2 error at the top degree"),
                );
            }
            report.convergence.push(Convergence::new("sin-cos", "degree", ladder));
        }
        Err(e) => report.push(CaseResult::failed("sin-cos", tol.secondary_or_primary(), r, o, &e)),
    }
    report.push(
        CaseResult::asserted("tangential", normal, TANGENTIAL_TOLERANCE, r, o)
            .with_detail("max |nu . q| of recovered fields"),
    );
    Ok(report)
}

fn h1_suite(patch: &LipschitzPatch, s: &SuiteSettings, tol: Tolerance) -> Result<SuiteReport> {
    let support = support_for(patch, s)?;
    let grid = grid_on(patch, &support, s.order, s.refinements)?;
    let mut report = SuiteReport::new("h1-from-trace", patch.name(), tol.primary);
    let lifted: Vec<(String, VolumeVector)> = planar_test_fields(support, s.exponent)
        .into_iter()
        .map(|(n, phi)| Ok((n, lift_test_field(patch, phi, patch.default_cutoff())?)))
        .collect::<Result<_>>()?;
    let degree = s.degrees.iter().copied().max().unwrap_or(6);
    for name in ["const", "zeta3", "sin-cos"] {
        // the trace of zeta3 is the graph function itself
        let resolved = !(name == "zeta3" && is_curved(patch));
        report.absorb(check_h1_from_weak_trace(
            patch,
            &grid,
            name,
            &field(name),
            &lifted,
            support,
            degree,
            s.exponent,
            tol,
            resolved,
        ));
    }
    Ok(report)
}

/// The chain from a volume field to a surface gradient: the weak identity
/// with `q = tantr grad F` against every lifted test field, then recovery of
/// the gradient from the values of `F|Gamma` alone, compared with
/// `grad_tau(F|Gamma)`.
#[allow(clippy::too_many_arguments)]
pub fn check_h1_from_weak_trace(
    patch: &LipschitzPatch,
    grid: &ChartGrid,
    name: &str,
    f: &VolumeScalar,
    lifted: &[(String, VolumeVector)],
    support: Rect,
    degree: usize,
    exponent: u32,
    tol: Tolerance,
    resolved: bool,
) -> SuiteReport {
    let (r, o) = (grid.refinement(), grid.order());
    let mut report = SuiteReport::new("h1-from-trace", patch.name(), tol.primary);
    let trace = BoundaryField::trace_of(f);
    let q = BoundaryField::tangential_trace_of(&VolumeVector::gradient_of(f));
    let weak = lifted.iter().try_fold(0.0_f64, |m, (_, phi)| {
        Ok::<f64, Error>(m.max(weak_pairing(patch, grid, &trace, &q, phi)?.relative()))
    });
    match weak {
        Ok(w) => report.push(
            CaseResult::asserted(format!("{name}:weak-trace"), w, tol.primary, r, o).with_detail(format!(
                "max relative weak residual over {} lifted fields",
                lifted.len()
            )),
        ),
        Err(e) => report.push(CaseResult::failed(format!("{name}:weak-trace"), tol.primary, r, o, &e)),
    }
    let values_only = BoundaryField::trace_of(f).without_chart_gradient();
    let recovered = recover_weak_gradient(
        patch,
        grid,
        &values_only,
        &TestFamily::bump_legendre(support, degree + 2, exponent),
        &LegendreBasis::new(support, degree),
    )
    .and_then(|rec| {
        recovery_error(
            patch,
            grid,
            &support,
            &rec.field(),
            &BoundaryField::tangential_gradient_of(&trace),
        )
    });
    let t = tol.secondary_or_primary();
    match recovered {
        Ok(e) if !resolved => report.push(
            CaseResult::informational(format!("{name}:recovery"), e, degree, o)
                .with_detail("trace carries the graph oscillation; beyond the basis degree"),
        ),
        Ok(e) => report.push(
            CaseResult::asserted(format!("{name}:recovery"), e, t, degree, o)
                .with_detail("recovered vs grad_tau(F|Gamma)"),
        ),
        Err(e) => report.push(CaseResult::failed(format!("{name}:recovery"), t, degree, o, &e)),
    }
    report
}

// ---------------------------------------------------------------------------
// Density (non-asserting)

/// Discrete least-squares fit of `g` by tensor Legendre polynomials of total
/// degree `n` on `b`, using the grid nodes in `b`.
fn fit_polynomial(grid: &ChartGrid, b: &Rect, n: usize, g: impl Fn(Vec2) -> f64) -> Result<Vec<f64>> {
    let basis = LegendreBasis::new(*b, n);
    let nodes: Vec<_> = grid.nodes().iter().filter(|nd| b.contains(nd.x(), 0.0)).collect();
    let t = basis.len() / 2;
    let a = DMatrix::from_fn(nodes.len(), t, |i, j| {
        nodes[i].weight.sqrt() * basis.scalar_values(nodes[i].x())[j]
    });
    let rhs = DVector::from_iterator(nodes.len(), nodes.iter().map(|nd| nd.weight.sqrt() * g(nd.x())));
    let svd = a.svd(true, true);
    let tol = svd.singular_values.max() * 1e-14;
    let c = svd
        .solve(&rhs, tol)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(c.iter().copied().collect())
}

/// Value and gradient of the fitted polynomial.
fn eval_fit(b: &Rect, n: usize, c: &[f64], x: Vec2) -> (f64, Vec2) {
    let mut xi = Vec2::ZERO;
    let mut d = Vec2::ZERO;
    for i in 0..2 {
        let w = b.hi[i] - b.lo[i];
        xi[i] = (2.0 * x[i] - (b.lo[i] + b.hi[i])) / w;
        d[i] = 2.0 / w;
    }
    let mut k = 0;
    let mut v = 0.0;
    let mut g = Vec2::ZERO;
    for total in 0..=n {
        for m in 0..=total {
            let (p1, dp1) = legendre_with_derivative(m, xi[0]);
            let (p2, dp2) = legendre_with_derivative(total - m, xi[1]);
            v += c[k] * p1 * p2;
            g += Vec2::new(c[k] * dp1 * p2 * d[0], c[k] * p1 * dp2 * d[1]);
            k += 1;
        }
    }
    (v, g)
}

/// `H1(Gamma)` distance between a compactly supported boundary function and
/// strip extensions of its degree-`n` polynomial approximations. Reported,
/// not asserted: no finite computation certifies density.
fn density_suite(patch: &LipschitzPatch, s: &SuiteSettings) -> Result<SuiteReport> {
    let support = support_for(patch, s)?;
    let grid = grid_on(patch, &support, s.order, s.refinements)?;
    let mut report = SuiteReport::new(DENSITY_CHECK, patch.name(), f64::INFINITY);
    let k = s.exponent;
    let g = |x: Vec2| x[0].sin() * x[1].cos();
    let dg = |x: Vec2| Vec2::new(x[0].cos() * x[1].cos(), -x[0].sin() * x[1].sin());
    let target = PlanarScalarField::bump_polynomial(support, k, g, dg);
    let (tv, tg) = (target.clone(), target.clone());
    let f = BoundaryField::scalar(move |_, x| Ok(tv.eval(x))).with_chart_gradient(move |_, x| Ok(tg.grad(x)));
    let mut ladder = Vec::new();
    for &n in &s.degrees {
        let c = Arc::new(fit_polynomial(&grid, &support, n, g)?);
        let (c1, c2) = (Arc::clone(&c), Arc::clone(&c));
        let approx = PlanarScalarField::bump_polynomial(
            support,
            k,
            move |x| eval_fit(&support, n, &c1, x).0,
            move |x| eval_fit(&support, n, &c2, x).1,
        );
        let ext = strip_extension(patch, &approx, patch.default_cutoff())?;
        let trace = BoundaryField::trace_of(&ext);
        let mut terms = Vec::with_capacity(grid.len());
        for nd in grid.nodes() {
            let x = nd.x();
            let dv = f.eval_scalar(patch, x)? - trace.eval_scalar(patch, x)?;
            let dgv = tangential_gradient(patch, &f, x)? - tangential_gradient(patch, &trace, x)?;
            terms.push(nd.surface_weight() * (dv * dv + dgv.norm_squared()));
        }
        let err = pairwise_sum(&terms).max(0.0).sqrt();
        report.push(
            CaseResult::informational(format!("degree-{n}"), err, n, s.order)
                .with_detail("H1(Gamma) distance of strip extension"),
        );
        ladder.push((n, err));
    }
    report
        .convergence
        .push(Convergence::new("strip-extension", "degree", ladder));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(a: &str) -> LipschitzPatch {
        LipschitzPatch::standard(a, a, ChartDomain::rect((-1.0, 1.0), (-1.0, 1.0)), 2f64.sqrt(), 4.0).unwrap()
    }

    fn quick() -> SuiteSettings {
        SuiteSettings {
            order: 8,
            refinements: 1,
            trials: 100,
            ..SuiteSettings::default()
        }
    }

    #[test]
    fn convergence_monotone_flag() {
        assert!(Convergence::new("a", "refinement", vec![(0, 1e-3), (1, 1e-6), (2, 1e-9)]).monotone);
        assert!(!Convergence::new("a", "refinement", vec![(0, 1e-3), (1, 1e-2)]).monotone);
        assert!(Convergence::new("a", "refinement", vec![(0, 2e-16), (1, 3e-16)]).monotone);
        assert!(!Convergence::new("a", "refinement", vec![(0, 2e-10), (1, 3e-10)]).monotone);
    }

    #[test]
    fn case_status_follows_tolerance() {
        assert_eq!(CaseResult::asserted("a", 1e-9, 1e-8, 0, 0).status, Status::Pass);
        assert_eq!(CaseResult::asserted("a", 1e-7, 1e-8, 0, 0).status, Status::Fail);
        assert_eq!(CaseResult::asserted("a", f64::NAN, 1e-8, 0, 0).status, Status::Fail);
        let mut r = SuiteReport::new("x", "p", 1.0);
        r.push(CaseResult::informational("i", 5.0, 0, 0));
        assert!(r.pass());
        r.push(CaseResult::asserted("a", 2.0, 1.0, 0, 0));
        assert!(!r.pass());
    }

    #[test]
    fn support_boxes_avoid_ridges() {
        let s = test_support(&corpus("0")).unwrap();
        assert_eq!(s, Rect::new((-0.9, 0.9), (-0.9, 0.9)));
        let s = test_support(&corpus("abs(x1)")).unwrap();
        assert_eq!(s, Rect::new((0.1, 0.9), (-0.9, 0.9)));
        let s = test_support(&corpus("max(abs(x1),abs(x2))")).unwrap();
        assert!((s.lo[0] - 0.5).abs() < 1e-15 && (s.hi[1] - 0.45).abs() < 1e-15);
    }

    #[test]
    fn unknown_check_is_a_failed_row() {
        let r = run_check("nope", Some(&corpus("0")), &quick(), Tolerance::new(1.0, None));
        assert!(!r.pass());
        assert_eq!(r.cases.len(), 1);
    }

    #[test]
    fn appendix_c_passes() {
        let r = run_check("appendix-c", None, &quick(), default_tolerance("appendix-c").unwrap());
        assert!(r.pass(), "{r:?}");
        assert_eq!(r.cases.len(), 3);
    }

    #[test]
    fn tangrad_examples() {
        let p = corpus("x1");
        let grid = build_grid(&p, 4, 0).unwrap();
        let c = check_tangrad_vs_trace(&p, &grid, "zeta3", &field("zeta3"), 1e-12);
        assert_eq!(c.status, Status::Pass);
        assert!(c.residual <= 1e-15);
    }

    #[test]
    fn reframed_tilted_plane_is_flat() {
        let p = corpus("x1");
        let r = reframings(&p).unwrap();
        let tilt = r.iter().find(|r| r.label == "tilt-45").unwrap();
        let [c0, c1, c2] = tilt.patch.graph_expr().unwrap().as_affine().unwrap();
        assert!(c0.abs() < 1e-15 && c1.abs() < 1e-15 && c2.abs() < 1e-15);
    }

    #[test]
    fn forced_failure_with_zero_tolerance() {
        let r = run_check("ibp-boundary", Some(&corpus("x1")), &quick(), Tolerance::new(0.0, None));
        assert!(!r.pass());
    }

    #[test]
    fn quick_suites_pass_on_corpus() {
        for a in ["0", "x1", "0.25*sin(3*x1)*cos(2*x2)", "abs(x1)", "max(abs(x1),abs(x2))"] {
            let p = corpus(a);
            for check in ["gram-det", "tangrad-trace", "lifting", "indep-projector"] {
                let r = run_check(check, Some(&p), &quick(), default_tolerance(check).unwrap());
                assert!(r.pass(), "{check} on {a}: {:?}", r.failures().collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn disk_patches_run_every_check() {
        let p =
            LipschitzPatch::standard("bowl", "0.1*(x1^2+x2^2)", ChartDomain::Disk { radius: 0.9 }, 0.9, 2.0).unwrap();
        let s = SuiteSettings {
            refinements: 1,
            trials: 50,
            ..SuiteSettings::default()
        };
        for check in CHECK_NAMES.iter().filter(|&&c| c != "appendix-c") {
            let r = run_check(check, Some(&p), &s, default_tolerance(check).unwrap());
            assert!(r.pass(), "{check}: {:?}", r.failures().collect::<Vec<_>>());
        }
    }
}
