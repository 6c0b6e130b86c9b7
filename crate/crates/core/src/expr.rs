//! A small expression language for graph functions `a(x1, x2)`.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := '-' factor | base ('^' '-'? int)?
//! base   := number | 'x1' | 'x2' | fn '(' args ')' | '(' expr ')'
//! fn     := sin | cos | exp | sqrt | abs | sign | min | max
//! ```
//!
//! `abs`, `sign`, `min` and `max` are only accepted on piecewise-affine
//! arguments, so their nonsmooth sets are unions of straight lines. Those
//! lines are collected into a [`RidgeSet`] that quadrature uses to split cells.
//! `sign` exists so that printed gradients can be parsed again; it is not
//! Lipschitz and patches reject it as a graph function.

use std::fmt;

use crate::error::{Error, Result};
use crate::smallmat::Vec2;

/// Maximum number of affine pieces tracked for a piecewise-affine argument.
const MAX_PIECES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X1,
    X2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
    Sign,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sign => "sign",
        }
    }

    fn is_nonsmooth(self) -> bool {
        matches!(self, Func::Abs | Func::Sign)
    }
}

/// Expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
}

fn sign(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else if t < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        Parser::new(src).parse_all()
    }

    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(v: Var) -> Expr {
        Expr::Var(v)
    }

    /// `c0 + c1*x1 + c2*x2` with zero terms dropped.
    pub fn affine(c0: f64, c1: f64, c2: f64) -> Expr {
        add(
            add(Expr::Const(c0), mul(Expr::Const(c1), Expr::Var(Var::X1))),
            mul(Expr::Const(c2), Expr::Var(Var::X2)),
        )
    }

    fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    fn is_const(&self, value: f64) -> bool {
        self.as_const() == Some(value)
    }

    /// True when the expression mentions `x1` or `x2`.
    pub fn has_vars(&self) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(_) => true,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.has_vars(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Min(a, b)
            | Expr::Max(a, b) => a.has_vars() || b.has_vars(),
        }
    }

    /// True when the tree contains a `sign` node.
    pub fn contains_sign(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::Var(_) => false,
            Expr::Call(Func::Sign, _) => true,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.contains_sign(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Min(a, b)
            | Expr::Max(a, b) => a.contains_sign() || b.contains_sign(),
        }
    }

    pub fn eval(&self, x: Vec2) -> Result<f64> {
        let value = self.eval_raw(x)?;
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::EvalDomain(format!("non-finite value of `{self}`")))
        }
    }

    fn eval_raw(&self, x: Vec2) -> Result<f64> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(Var::X1) => x[0],
            Expr::Var(Var::X2) => x[1],
            Expr::Neg(a) => -a.eval_raw(x)?,
            Expr::Add(a, b) => a.eval_raw(x)? + b.eval_raw(x)?,
            Expr::Sub(a, b) => a.eval_raw(x)? - b.eval_raw(x)?,
            Expr::Mul(a, b) => a.eval_raw(x)? * b.eval_raw(x)?,
            Expr::Div(a, b) => {
                let den = b.eval_raw(x)?;
                if den == 0.0 || !den.is_finite() {
                    return Err(Error::EvalDomain(format!("division by {den} in `{self}`")));
                }
                a.eval_raw(x)? / den
            }
            Expr::Pow(a, n) => {
                let base = a.eval_raw(x)?;
                if *n < 0 && base == 0.0 {
                    return Err(Error::EvalDomain(format!("zero to a negative power in `{self}`")));
                }
                base.powi(*n)
            }
            Expr::Call(f, a) => {
                let t = a.eval_raw(x)?;
                match f {
                    Func::Sin => t.sin(),
                    Func::Cos => t.cos(),
                    Func::Exp => t.exp(),
                    Func::Sqrt => {
                        if t < 0.0 {
                            return Err(Error::EvalDomain(format!("sqrt of {t} in `{self}`")));
                        }
                        t.sqrt()
                    }
                    Func::Abs => t.abs(),
                    Func::Sign => sign(t),
                }
            }
            Expr::Min(a, b) => a.eval_raw(x)?.min(b.eval_raw(x)?),
            Expr::Max(a, b) => a.eval_raw(x)?.max(b.eval_raw(x)?),
        })
    }

    /// Symbolic partial derivative, valid off the ridge set.
    pub fn derivative(&self, var: Var) -> Expr {
        use Expr::*;
        match self {
            Const(_) => Const(0.0),
            Var(v) => Const(if *v == var { 1.0 } else { 0.0 }),
            Neg(a) => neg(a.derivative(var)),
            Add(a, b) => add(a.derivative(var), b.derivative(var)),
            Sub(a, b) => sub(a.derivative(var), b.derivative(var)),
            Mul(a, b) => add(
                mul(a.derivative(var), (**b).clone()),
                mul((**a).clone(), b.derivative(var)),
            ),
            Div(a, b) => div(
                sub(
                    mul(a.derivative(var), (**b).clone()),
                    mul((**a).clone(), b.derivative(var)),
                ),
                pow((**b).clone(), 2),
            ),
            Pow(a, n) => mul(mul(Const(*n as f64), pow((**a).clone(), n - 1)), a.derivative(var)),
            Call(f, a) => {
                let inner = (**a).clone();
                let da = a.derivative(var);
                match f {
                    Func::Sin => mul(call(Func::Cos, inner), da),
                    Func::Cos => neg(mul(call(Func::Sin, inner), da)),
                    Func::Exp => mul(call(Func::Exp, inner), da),
                    Func::Sqrt => div(da, mul(Const(2.0), call(Func::Sqrt, inner))),
                    Func::Abs => mul(call(Func::Sign, inner), da),
                    Func::Sign => Const(0.0),
                }
            }
            // branch selectors: (1 +- sign(u - v)) / 2, averaging on ties
            Min(a, b) => {
                let s = call(Func::Sign, sub((**a).clone(), (**b).clone()));
                add(
                    mul(div(sub(Const(1.0), s.clone()), Const(2.0)), a.derivative(var)),
                    mul(div(add(Const(1.0), s), Const(2.0)), b.derivative(var)),
                )
            }
            Max(a, b) => {
                let s = call(Func::Sign, sub((**a).clone(), (**b).clone()));
                add(
                    mul(div(add(Const(1.0), s.clone()), Const(2.0)), a.derivative(var)),
                    mul(div(sub(Const(1.0), s), Const(2.0)), b.derivative(var)),
                )
            }
        }
    }

    /// Replaces `x1` and `x2` by the given expressions.
    pub fn substitute(&self, x1: &Expr, x2: &Expr) -> Expr {
        use Expr::*;
        match self {
            Const(c) => Const(*c),
            Var(self::Var::X1) => x1.clone(),
            Var(self::Var::X2) => x2.clone(),
            Neg(a) => neg(a.substitute(x1, x2)),
            Add(a, b) => add(a.substitute(x1, x2), b.substitute(x1, x2)),
            Sub(a, b) => sub(a.substitute(x1, x2), b.substitute(x1, x2)),
            Mul(a, b) => mul(a.substitute(x1, x2), b.substitute(x1, x2)),
            Div(a, b) => div(a.substitute(x1, x2), b.substitute(x1, x2)),
            Pow(a, n) => pow(a.substitute(x1, x2), *n),
            Call(f, a) => call(*f, a.substitute(x1, x2)),
            Min(a, b) => Min(Box::new(a.substitute(x1, x2)), Box::new(b.substitute(x1, x2))),
            Max(a, b) => Max(Box::new(a.substitute(x1, x2)), Box::new(b.substitute(x1, x2))),
        }
    }

    /// Affine pieces `c0 + c1 x1 + c2 x2` covering the expression, or `None`
    /// when it is not piecewise affine.
    fn affine_pieces(&self) -> Option<Vec<Affine>> {
        use Expr::*;
        if !self.has_vars() {
            return self.eval(Vec2::ZERO).ok().map(|c| vec![Affine([c, 0.0, 0.0])]);
        }
        let pieces = match self {
            Const(_) => unreachable!(),
            Var(self::Var::X1) => vec![Affine([0.0, 1.0, 0.0])],
            Var(self::Var::X2) => vec![Affine([0.0, 0.0, 1.0])],
            Neg(a) => a.affine_pieces()?.into_iter().map(|p| p.scale(-1.0)).collect(),
            Add(a, b) => combine(&a.affine_pieces()?, &b.affine_pieces()?, 1.0)?,
            Sub(a, b) => combine(&a.affine_pieces()?, &b.affine_pieces()?, -1.0)?,
            Mul(a, b) => {
                if !a.has_vars() {
                    let c = a.eval(Vec2::ZERO).ok()?;
                    b.affine_pieces()?.into_iter().map(|p| p.scale(c)).collect()
                } else if !b.has_vars() {
                    let c = b.eval(Vec2::ZERO).ok()?;
                    a.affine_pieces()?.into_iter().map(|p| p.scale(c)).collect()
                } else {
                    return None;
                }
            }
            Div(a, b) if !b.has_vars() => {
                let c = b.eval(Vec2::ZERO).ok()?;
                if c == 0.0 {
                    return None;
                }
                a.affine_pieces()?.into_iter().map(|p| p.scale(1.0 / c)).collect()
            }
            Pow(a, 1) => a.affine_pieces()?,
            Call(Func::Abs, a) => {
                let p = a.affine_pieces()?;
                let mut out = p.clone();
                out.extend(p.into_iter().map(|q| q.scale(-1.0)));
                out
            }
            Min(a, b) | Max(a, b) => {
                let mut out = a.affine_pieces()?;
                out.extend(b.affine_pieces()?);
                out
            }
            _ => return None,
        };
        let pieces = dedup_affine(pieces);
        (pieces.len() <= MAX_PIECES).then_some(pieces)
    }

    /// Collects ridge lines of every nonsmooth node. Fails on a nonsmooth node
    /// whose argument is not piecewise affine.
    fn collect_ridges(&self, out: &mut Vec<RidgeLine>) -> Result<()> {
        use Expr::*;
        match self {
            Const(_) | Var(_) => {}
            Neg(a) | Pow(a, _) => a.collect_ridges(out)?,
            Call(f, a) => {
                a.collect_ridges(out)?;
                if f.is_nonsmooth() {
                    let pieces = a.affine_pieces().ok_or_else(|| unsupported(0, self))?;
                    out.extend(pieces.iter().filter_map(|p| RidgeLine::from_affine(*p)));
                }
            }
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => {
                a.collect_ridges(out)?;
                b.collect_ridges(out)?;
            }
            Min(a, b) | Max(a, b) => {
                a.collect_ridges(out)?;
                b.collect_ridges(out)?;
                let pa = a.affine_pieces().ok_or_else(|| unsupported(0, self))?;
                let pb = b.affine_pieces().ok_or_else(|| unsupported(0, self))?;
                for p in &pa {
                    for q in &pb {
                        out.extend(RidgeLine::from_affine(p.sub(q)));
                    }
                }
            }
        }
        Ok(())
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Const(c) if c.is_sign_negative() => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }

    fn write_child(&self, f: &mut fmt::Formatter<'_>, child: &Expr, parens: bool) -> fmt::Result {
        if parens {
            write!(f, "({child})")
        } else {
            write!(f, "{child}")
        }
    }
}

fn unsupported(offset: usize, node: &Expr) -> Error {
    Error::UnsupportedNonsmooth {
        offset,
        message: format!("`{node}` needs piecewise-affine arguments"),
    }
}

impl fmt::Display for Expr {
    /// Prints the normal form: minimal parentheses, left-associative binary
    /// operators, constants in shortest round-trip notation.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = self.precedence();
        match self {
            Expr::Const(c) => {
                if c.is_sign_negative() {
                    write!(f, "-{}", -c)
                } else {
                    write!(f, "{c}")
                }
            }
            Expr::Var(Var::X1) => write!(f, "x1"),
            Expr::Var(Var::X2) => write!(f, "x2"),
            Expr::Neg(a) => {
                write!(f, "-")?;
                self.write_child(f, a, a.precedence() < 3)
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                let (op, strict_right) = match self {
                    Expr::Add(..) => ('+', false),
                    Expr::Sub(..) => ('-', true),
                    Expr::Mul(..) => ('*', false),
                    _ => ('/', true),
                };
                self.write_child(f, a, a.precedence() < level)?;
                write!(f, "{op}")?;
                let right_parens = if strict_right {
                    b.precedence() <= level
                } else {
                    b.precedence() < level
                };
                self.write_child(f, b, right_parens)
            }
            Expr::Pow(a, n) => {
                self.write_child(f, a, a.precedence() < 5)?;
                write!(f, "^{n}")
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
            Expr::Min(a, b) => write!(f, "min({a},{b})"),
            Expr::Max(a, b) => write!(f, "max({a},{b})"),
        }
    }
}

// Simplifying constructors used by differentiation and substitution.

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x + y),
        (Some(0.0), _) => b,
        (_, Some(0.0)) => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x - y),
        (_, Some(0.0)) => a,
        (Some(0.0), _) => neg(b),
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x * y),
        (Some(0.0), _) | (_, Some(0.0)) => Expr::Const(0.0),
        (Some(1.0), _) => b,
        (_, Some(1.0)) => a,
        (Some(-1.0), _) => neg(b),
        (_, Some(-1.0)) => neg(a),
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    if a.is_const(0.0) {
        return Expr::Const(0.0);
    }
    if b.is_const(1.0) {
        return a;
    }
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) if y != 0.0 => Expr::Const(x / y),
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn pow(a: Expr, n: i32) -> Expr {
    match n {
        0 => Expr::Const(1.0),
        1 => a,
        _ => match a.as_const() {
            Some(c) if c != 0.0 || n > 0 => Expr::Const(c.powi(n)),
            _ => Expr::Pow(Box::new(a), n),
        },
    }
}

fn call(f: Func, a: Expr) -> Expr {
    Expr::Call(f, Box::new(a))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Affine([f64; 3]);

impl Affine {
    fn scale(self, s: f64) -> Affine {
        Affine(self.0.map(|c| c * s))
    }

    fn sub(&self, other: &Affine) -> Affine {
        Affine([self.0[0] - other.0[0], self.0[1] - other.0[1], self.0[2] - other.0[2]])
    }
}

fn combine(a: &[Affine], b: &[Affine], sign_b: f64) -> Option<Vec<Affine>> {
    if a.len() * b.len() > MAX_PIECES {
        return None;
    }
    Some(
        a.iter()
            .flat_map(|p| {
                b.iter().map(move |q| {
                    Affine([
                        p.0[0] + sign_b * q.0[0],
                        p.0[1] + sign_b * q.0[1],
                        p.0[2] + sign_b * q.0[2],
                    ])
                })
            })
            .collect(),
    )
}

fn dedup_affine(pieces: Vec<Affine>) -> Vec<Affine> {
    let mut out: Vec<Affine> = Vec::with_capacity(pieces.len());
    for p in pieces {
        let seen = out.iter().any(|q| {
            p.0.iter()
                .zip(q.0.iter())
                .all(|(a, b)| (a - b).abs() <= 1e-14 * (1.0 + a.abs()))
        });
        if !seen {
            out.push(p);
        }
    }
    out
}

/// The line `c0 + n1 x1 + n2 x2 = 0` with unit normal `(n1, n2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeLine {
    pub offset: f64,
    pub normal: Vec2,
}

impl RidgeLine {
    fn from_affine(p: Affine) -> Option<RidgeLine> {
        let [c0, c1, c2] = p.0;
        let norm = c1.hypot(c2);
        if !(norm > 1e-14 * (1.0 + c0.abs())) {
            return None;
        }
        // canonical orientation: first nonzero normal component positive
        let s = if c1 > 1e-15 * norm || (c1.abs() <= 1e-15 * norm && c2 > 0.0) {
            1.0 / norm
        } else {
            -1.0 / norm
        };
        Some(RidgeLine {
            offset: c0 * s,
            normal: Vec2::new(c1 * s, c2 * s),
        })
    }

    /// Builds a line from `c0 + c1 x1 + c2 x2 = 0`.
    pub fn new(c0: f64, c1: f64, c2: f64) -> Option<RidgeLine> {
        RidgeLine::from_affine(Affine([c0, c1, c2]))
    }

    pub fn signed_distance(&self, x: Vec2) -> f64 {
        self.offset + self.normal.dot(&x)
    }

    fn same_line(&self, other: &RidgeLine) -> bool {
        (self.offset - other.offset).abs() <= 1e-12 && (self.normal - other.normal).max_abs() <= 1e-12
    }
}

/// Straight lines in chart coordinates where a graph function is nonsmooth.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RidgeSet {
    lines: Vec<RidgeLine>,
}

/// Points closer than this to a ridge line count as lying on it.
pub const RIDGE_TOLERANCE: f64 = 1e-12;

impl RidgeSet {
    pub const EMPTY: RidgeSet = RidgeSet { lines: Vec::new() };

    pub fn new(lines: Vec<RidgeLine>) -> RidgeSet {
        let mut unique: Vec<RidgeLine> = Vec::new();
        for l in lines {
            if !unique.iter().any(|u| u.same_line(&l)) {
                unique.push(l);
            }
        }
        RidgeSet { lines: unique }
    }

    pub fn lines(&self) -> &[RidgeLine] {
        &self.lines
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn contains(&self, x: Vec2) -> bool {
        self.lines.iter().any(|l| l.signed_distance(x).abs() <= RIDGE_TOLERANCE)
    }
}

/// A parsed graph function with its symbolic almost-everywhere gradient and
/// ridge set.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceExpr {
    ast: Expr,
    grad: [Expr; 2],
    ridges: RidgeSet,
}

impl SurfaceExpr {
    pub fn parse(src: &str) -> Result<SurfaceExpr> {
        SurfaceExpr::from_ast(Expr::parse(src)?)
    }

    pub fn from_ast(ast: Expr) -> Result<SurfaceExpr> {
        let mut lines = Vec::new();
        ast.collect_ridges(&mut lines)?;
        let grad = [ast.derivative(Var::X1), ast.derivative(Var::X2)];
        Ok(SurfaceExpr {
            ast,
            grad,
            ridges: RidgeSet::new(lines),
        })
    }

    pub fn ast(&self) -> &Expr {
        &self.ast
    }

    pub fn grad_exprs(&self) -> &[Expr; 2] {
        &self.grad
    }

    pub fn ridges(&self) -> &RidgeSet {
        &self.ridges
    }

    pub fn eval(&self, x: Vec2) -> Result<f64> {
        self.ast.eval(x)
    }

    pub fn gradient(&self, x: Vec2) -> Result<Vec2> {
        Ok(Vec2::new(self.grad[0].eval(x)?, self.grad[1].eval(x)?))
    }

    /// Returns `[c0, c1, c2]` when the expression is a single affine map.
    pub fn as_affine(&self) -> Option<[f64; 3]> {
        match self.ast.affine_pieces()?.as_slice() {
            [p] => Some(p.0),
            _ => None,
        }
    }
}

impl fmt::Display for SurfaceExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.ast)
    }
}

/// Axis-aligned rectangle `[lo.0, hi.0] x [lo.1, hi.1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub lo: Vec2,
    pub hi: Vec2,
}

impl Rect {
    pub fn new(x1: (f64, f64), x2: (f64, f64)) -> Rect {
        Rect {
            lo: Vec2::new(x1.0, x2.0),
            hi: Vec2::new(x1.1, x2.1),
        }
    }

    pub fn area(&self) -> f64 {
        (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])
    }

    pub fn contains(&self, x: Vec2, slack: f64) -> bool {
        (0..2).all(|i| x[i] >= self.lo[i] - slack && x[i] <= self.hi[i] + slack)
    }

    pub fn corners(&self) -> [Vec2; 4] {
        [
            self.lo,
            Vec2::new(self.hi[0], self.lo[1]),
            self.hi,
            Vec2::new(self.lo[0], self.hi[1]),
        ]
    }
}

/// Number of samples per axis used by [`lipschitz_bound`].
pub const LIPSCHITZ_SAMPLES: usize = 201;

/// Empirical Lipschitz constant: the largest `|grad a|` over a uniform
/// `201 x 201` grid on `rect` (endpoints included), skipping ridge points.
/// This is a lower bound of the true constant.
pub fn lipschitz_bound(expr: &SurfaceExpr, rect: &Rect) -> f64 {
    let n = LIPSCHITZ_SAMPLES;
    let mut best = 0.0_f64;
    for i in 0..n {
        let t1 = i as f64 / (n - 1) as f64;
        let x1 = rect.lo[0] + t1 * (rect.hi[0] - rect.lo[0]);
        for j in 0..n {
            let t2 = j as f64 / (n - 1) as f64;
            let x = Vec2::new(x1, rect.lo[1] + t2 * (rect.hi[1] - rect.lo[1]));
            if expr.ridges.contains(x) {
                continue;
            }
            if let Ok(g) = expr.gradient(x) {
                best = best.max(g.norm());
            }
        }
    }
    best
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
        }
    }

    fn error<T>(&self, offset: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax {
            offset,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            let found = self.describe_here();
            self.error(self.pos, format!("expected '{}', found {found}", c as char))
        }
    }

    fn describe_here(&mut self) -> String {
        match self.peek() {
            Some(_) => format!("'{}'", self.src[self.pos..].chars().next().unwrap()),
            None => "end of input".to_string(),
        }
    }

    fn parse_all(mut self) -> Result<Expr> {
        if self.peek().is_none() {
            return self.error(0, "empty expression");
        }
        let e = self.expr()?;
        if self.peek().is_some() {
            let found = self.describe_here();
            return self.error(self.pos, format!("unexpected {found}"));
        }
        Ok(e)
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            if self.eat(b'*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
            } else if self.eat(b'/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        if self.eat(b'-') {
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        let base = self.base()?;
        if self.eat(b'^') {
            let negative = self.eat(b'-');
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if start == self.pos {
                return self.error(start, "expected integer exponent");
            }
            let magnitude: i32 = match self.src[start..self.pos].parse() {
                Ok(n) => n,
                Err(_) => return self.error(start, "exponent out of range"),
            };
            let n = if negative { -magnitude } else { magnitude };
            return Ok(Expr::Pow(Box::new(base), n));
        }
        Ok(base)
    }

    fn base(&mut self) -> Result<Expr> {
        let start = match self.peek() {
            Some(_) => self.pos,
            None => return self.error(self.pos, "unexpected end of input"),
        };
        let c = self.bytes[start];
        if c == b'(' {
            self.pos += 1;
            let e = self.expr()?;
            self.expect(b')')?;
            return Ok(e);
        }
        if c.is_ascii_digit() || c == b'.' {
            return self.number();
        }
        if c.is_ascii_alphabetic() {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_alphanumeric() {
                self.pos += 1;
            }
            let ident = &self.src[start..self.pos];
            return match ident {
                "x1" => Ok(Expr::Var(Var::X1)),
                "x2" => Ok(Expr::Var(Var::X2)),
                "sin" | "cos" | "exp" | "sqrt" | "abs" | "sign" => {
                    let func = match ident {
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        "exp" => Func::Exp,
                        "sqrt" => Func::Sqrt,
                        "abs" => Func::Abs,
                        _ => Func::Sign,
                    };
                    self.expect(b'(')?;
                    let arg = self.expr()?;
                    self.expect(b')')?;
                    let node = Expr::Call(func, Box::new(arg));
                    self.check_nonsmooth(start, &node)?;
                    Ok(node)
                }
                "min" | "max" => {
                    self.expect(b'(')?;
                    let a = self.expr()?;
                    self.expect(b',')?;
                    let b = self.expr()?;
                    self.expect(b')')?;
                    let node = if ident == "min" {
                        Expr::Min(Box::new(a), Box::new(b))
                    } else {
                        Expr::Max(Box::new(a), Box::new(b))
                    };
                    self.check_nonsmooth(start, &node)?;
                    Ok(node)
                }
                _ => self.error(start, format!("unknown identifier `{ident}`")),
            };
        }
        let found = self.describe_here();
        self.error(start, format!("unexpected {found}"))
    }

    fn check_nonsmooth(&self, offset: usize, node: &Expr) -> Result<()> {
        let args_ok = match node {
            Expr::Call(f, a) if f.is_nonsmooth() => a.affine_pieces().is_some(),
            Expr::Min(a, b) | Expr::Max(a, b) => a.affine_pieces().is_some() && b.affine_pieces().is_some(),
            _ => true,
        };
        if args_ok {
            Ok(())
        } else {
            Err(unsupported(offset, node))
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.bytes.len() && p.bytes[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut count = digits(self);
        if self.pos < self.bytes.len() && self.bytes[self.pos] == b'.' {
            self.pos += 1;
            count += digits(self);
        }
        if count == 0 {
            return self.error(start, "malformed number");
        }
        if self.pos < self.bytes.len() && matches!(self.bytes[self.pos], b'e' | b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.bytes.len() && matches!(self.bytes[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = save;
            }
        }
        match self.src[start..self.pos].parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Expr::Const(v)),
            _ => self.error(start, "malformed number"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn printed(src: &str) -> String {
        Expr::parse(src).unwrap().to_string()
    }

    #[test]
    fn parses_variables_and_calls() {
        assert_eq!(Expr::parse("x1").unwrap(), Expr::Var(Var::X1));
        let e = SurfaceExpr::parse("abs(x1)").unwrap();
        assert_eq!(e.ridges().len(), 1);
        let line = e.ridges().lines()[0];
        assert_eq!(line.normal, Vec2::new(1.0, 0.0));
        assert_eq!(line.offset, 0.0);
        let e = SurfaceExpr::parse("0.25*sin(3*x1)*cos(2*x2)").unwrap();
        assert!(e.ridges().is_empty());
        assert_eq!(e.to_string(), "0.25*sin(3*x1)*cos(2*x2)");
    }

    #[test]
    fn whitespace_is_ignored() {
        assert_eq!(printed(" 0.25 * sin( 3*x1 ) "), "0.25*sin(3*x1)");
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        match Expr::parse("abs(x2") {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("{other:?}"),
        }
        match Expr::parse("x1 + y") {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
        assert!(matches!(Expr::parse(""), Err(Error::Syntax { offset: 0, .. })));
        assert!(matches!(Expr::parse("x1 x2"), Err(Error::Syntax { offset: 3, .. })));
        assert!(matches!(Expr::parse("x1^"), Err(Error::Syntax { .. })));
    }

    #[test]
    fn rejects_non_affine_nonsmooth_arguments() {
        match Expr::parse("1 + abs(x1*x2)") {
            Err(Error::UnsupportedNonsmooth { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            Expr::parse("max(sin(x1), x2)"),
            Err(Error::UnsupportedNonsmooth { offset: 0, .. })
        ));
        // smooth functions of nonsmooth nodes are fine
        assert!(Expr::parse("sin(abs(x1))").is_ok());
    }

    #[test]
    fn pyramid_has_axis_and_diagonal_ridges() {
        let e = SurfaceExpr::parse("max(abs(x1),abs(x2))").unwrap();
        let r = e.ridges();
        assert_eq!(r.len(), 4);
        for x in [
            Vec2::new(0.0, 0.3),
            Vec2::new(0.4, 0.0),
            Vec2::new(0.2, 0.2),
            Vec2::new(0.2, -0.2),
        ] {
            assert!(r.contains(x), "{x:?}");
        }
        assert!(!r.contains(Vec2::new(0.3, 0.1)));
    }

    #[test]
    fn eval_examples() {
        let e = Expr::parse("x1 + x2").unwrap();
        assert_eq!(e.eval(Vec2::new(1.0, 2.0)).unwrap(), 3.0);
        let e = Expr::parse("abs(x1)").unwrap();
        assert_eq!(e.eval(Vec2::new(-0.5, 0.9)).unwrap(), 0.5);
        let e = Expr::parse("0.25*sin(3*x1)*cos(2*x2)").unwrap();
        // independent evaluation of 0.25 sin(0.6) cos(0.2)
        let expected = 0.25 * 0.564_642_473_395_035_4 * 0.980_066_577_841_241_6;
        assert!((e.eval(Vec2::new(0.2, 0.1)).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn eval_domain_errors() {
        let e = Expr::parse("sqrt(x1)").unwrap();
        assert!(matches!(e.eval(Vec2::new(-1.0, 0.0)), Err(Error::EvalDomain(_))));
        let e = Expr::parse("1/x1").unwrap();
        assert!(matches!(e.eval(Vec2::new(0.0, 0.0)), Err(Error::EvalDomain(_))));
        let e = Expr::parse("x1^-2").unwrap();
        assert!(matches!(e.eval(Vec2::new(0.0, 0.0)), Err(Error::EvalDomain(_))));
        assert_eq!(e.eval(Vec2::new(2.0, 0.0)).unwrap(), 0.25);
        let e = Expr::parse("exp(x1)").unwrap();
        assert!(matches!(e.eval(Vec2::new(1000.0, 0.0)), Err(Error::EvalDomain(_))));
    }

    #[test]
    fn gradient_examples() {
        let e = SurfaceExpr::parse("x1^2 + x2").unwrap();
        assert_eq!(e.grad_exprs()[0].to_string(), "2*x1");
        assert_eq!(e.grad_exprs()[1].to_string(), "1");

        let e = SurfaceExpr::parse("abs(x1)").unwrap();
        assert_eq!(e.gradient(Vec2::new(0.3, 0.7)).unwrap(), Vec2::new(1.0, 0.0));
        assert_eq!(e.gradient(Vec2::new(-0.3, 0.7)).unwrap(), Vec2::new(-1.0, 0.0));
        // sign(0) = 0 on the ridge
        assert_eq!(e.gradient(Vec2::new(0.0, 0.7)).unwrap(), Vec2::new(0.0, 0.0));
    }

    #[test]
    fn min_max_gradients_are_branchwise() {
        let e = SurfaceExpr::parse("max(x1, 2*x2)").unwrap();
        assert_eq!(e.gradient(Vec2::new(0.5, 0.1)).unwrap(), Vec2::new(1.0, 0.0));
        assert_eq!(e.gradient(Vec2::new(0.1, 0.5)).unwrap(), Vec2::new(0.0, 2.0));
        let e = SurfaceExpr::parse("min(x1, 2*x2)").unwrap();
        assert_eq!(e.gradient(Vec2::new(0.5, 0.1)).unwrap(), Vec2::new(0.0, 2.0));
        assert_eq!(e.gradient(Vec2::new(0.1, 0.5)).unwrap(), Vec2::new(1.0, 0.0));
    }

    #[test]
    fn printer_respects_associativity() {
        assert_eq!(printed("x1-(x2-1)"), "x1-(x2-1)");
        assert_eq!(printed("(x1-x2)-1"), "x1-x2-1");
        assert_eq!(printed("x1/(x2*3)"), "x1/(x2*3)");
        assert_eq!(printed("(-x1)^2"), "(-x1)^2");
        assert_eq!(printed("-x1^2"), "-x1^2");
        assert_eq!(printed("(x1^2)^3"), "(x1^2)^3");
        assert_eq!(printed("2*-x1"), "2*-x1");
        assert_eq!(printed("1e-3*x1"), "0.001*x1");
    }

    #[test]
    fn gradients_reparse() {
        for src in ["abs(x1)", "max(abs(x1),abs(x2))", "sqrt(1+x1^2)/(2+x2)"] {
            let e = SurfaceExpr::parse(src).unwrap();
            for g in e.grad_exprs() {
                let s = g.to_string();
                let again = Expr::parse(&s).unwrap().to_string();
                assert_eq!(s, again);
            }
        }
    }

    #[test]
    fn lipschitz_bound_examples() {
        let rect = Rect::new((-1.0, 1.0), (-1.0, 1.0));
        let e = SurfaceExpr::parse("x1").unwrap();
        assert_eq!(lipschitz_bound(&e, &rect), 1.0);
        let e = SurfaceExpr::parse("abs(x1)").unwrap();
        assert_eq!(lipschitz_bound(&e, &rect), 1.0);
        let e = SurfaceExpr::parse("0.25*sin(3*x1)").unwrap();
        assert!((lipschitz_bound(&e, &rect) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn affine_detection() {
        assert_eq!(SurfaceExpr::parse("x1").unwrap().as_affine(), Some([0.0, 1.0, 0.0]));
        assert_eq!(
            SurfaceExpr::parse("2*(x1 - 3*x2)/4 + 1").unwrap().as_affine(),
            Some([1.0, 0.5, -1.5])
        );
        assert_eq!(SurfaceExpr::parse("abs(x1)").unwrap().as_affine(), None);
        assert_eq!(SurfaceExpr::parse("x1*x2").unwrap().as_affine(), None);
    }

    #[test]
    fn substitution_rotates_ridges() {
        let e = SurfaceExpr::parse("abs(x1)").unwrap();
        let (c, s) = (0.6, 0.8);
        let x1 = Expr::parse(&format!("{c}*x1-{s}*x2")).unwrap();
        let x2 = Expr::parse(&format!("{s}*x1+{c}*x2")).unwrap();
        let rotated = SurfaceExpr::from_ast(e.ast().substitute(&x1, &x2)).unwrap();
        assert_eq!(rotated.ridges().len(), 1);
        let y = Vec2::new(0.8, 0.6);
        assert!(rotated.ridges().contains(y));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn leaf() -> impl Strategy<Value = Expr> {
            prop_oneof![
                (0.0..5.0f64).prop_map(|c| Expr::Const((c * 100.0).round() / 100.0)),
                Just(Expr::Var(Var::X1)),
                Just(Expr::Var(Var::X2)),
            ]
        }

        fn smooth_expr() -> impl Strategy<Value = Expr> {
            leaf().prop_recursive(4, 24, 2, |inner| {
                prop_oneof![
                    inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
                    (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
                    (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Sub(Box::new(a), Box::new(b))),
                    (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Mul(Box::new(a), Box::new(b))),
                    (inner.clone(), 1..4i32).prop_map(|(a, n)| Expr::Pow(Box::new(a), n)),
                    inner.clone().prop_map(|a| Expr::Call(Func::Sin, Box::new(a))),
                    inner.clone().prop_map(|a| Expr::Call(Func::Cos, Box::new(a))),
                    inner.clone().prop_map(|a| Expr::Call(
                        Func::Exp,
                        Box::new(Expr::Mul(Box::new(Expr::Const(0.3)), Box::new(a)))
                    )),
                    (inner.clone(), inner).prop_map(|(a, b)| Expr::Div(
                        Box::new(a),
                        Box::new(Expr::Add(
                            Box::new(Expr::Const(3.0)),
                            Box::new(Expr::Call(Func::Sin, Box::new(b)))
                        ))
                    )),
                ]
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(300))]

            #[test]
            fn print_parse_print_is_fixpoint(e in smooth_expr()) {
                let printed = e.to_string();
                let reparsed = Expr::parse(&printed).unwrap();
                prop_assert_eq!(reparsed.to_string(), printed);
            }

            #[test]
            fn printing_preserves_value(e in smooth_expr(), x1 in -1.0..1.0f64, x2 in -1.0..1.0f64) {
                let x = Vec2::new(x1, x2);
                let reparsed = Expr::parse(&e.to_string()).unwrap();
                if let (Ok(a), Ok(b)) = (e.eval(x), reparsed.eval(x)) {
                    prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
                }
            }

            #[test]
            fn symbolic_gradient_matches_central_differences(
                e in smooth_expr(), x1 in -0.9..0.9f64, x2 in -0.9..0.9f64
            ) {
                let s = SurfaceExpr::from_ast(e).unwrap();
                let x = Vec2::new(x1, x2);
                let h = 1e-6;
                let g = match s.gradient(x) { Ok(g) => g, Err(_) => return Ok(()) };
                for i in 0..2 {
                    let mut xp = x; xp[i] += h;
                    let mut xm = x; xm[i] -= h;
                    let (fp, fm) = match (s.eval(xp), s.eval(xm)) {
                        (Ok(a), Ok(b)) => (a, b),
                        _ => return Ok(()),
                    };
                    let fd = (fp - fm) / (2.0 * h);
                    let scale = g[i].abs().max(s.eval(x).unwrap().abs()).max(1.0);
                    prop_assert!((fd - g[i]).abs() <= 1e-6 * scale,
                        "component {} of {}: fd {} vs {}", i, s, fd, g[i]);
                }
            }
        }
    }
}
