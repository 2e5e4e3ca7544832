//! Wengert-list reverse mode over scalars.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Real;
use crate::error::{Error, Result};

const NO_PARENT: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
}

/// Records every operation on [`Var`]s so one backward sweep yields the
/// gradient of a scalar with respect to every leaf.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    fault: Cell<Option<&'static str>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).field("fault", &self.fault.get()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(cap: usize) -> Self {
        Self { nodes: RefCell::new(Vec::with_capacity(cap)), fault: Cell::new(None) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops all recorded nodes, keeping the allocation.
    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
        self.fault.set(None);
    }

    /// A new independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push(NO_PARENT, 0.0, NO_PARENT, 0.0);
        Var { tape: Some(self), idx, val: value }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|v| self.var(*v)).collect()
    }

    /// Name of the first primitive that produced a non-finite value or partial.
    pub fn fault(&self) -> Option<&'static str> {
        self.fault.get()
    }

    pub fn check(&self) -> Result<()> {
        match self.fault.get() {
            Some(op) => Err(Error::NonFinite(format!("primitive `{op}`"))),
            None => Ok(()),
        }
    }

    #[inline]
    fn push(&self, p0: u32, d0: f64, p1: u32, d1: f64) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        nodes.push(Node { parents: [p0, p1], partials: [d0, d1] });
        idx
    }

    #[inline]
    fn note(&self, op: &'static str, val: f64, d0: f64, d1: f64) {
        if !(val.is_finite() && d0.is_finite() && d1.is_finite()) && self.fault.get().is_none() {
            self.fault.set(Some(op));
        }
    }

    /// Reverse sweep. `adjoint` is resized to the tape length and receives
    /// `d(sum_i w_i * seed_i) / d(node)` for every node.
    pub fn backward_into(&self, seeds: &[(Var<'_>, f64)], adjoint: &mut Vec<f64>) {
        let nodes = self.nodes.borrow();
        adjoint.clear();
        adjoint.resize(nodes.len(), 0.0);
        let mut top = 0;
        for (v, w) in seeds {
            if v.idx != NO_PARENT {
                adjoint[v.idx as usize] += w;
                top = top.max(v.idx as usize + 1);
            }
        }
        for i in (0..top).rev() {
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            let node = nodes[i];
            for k in 0..2 {
                let p = node.parents[k];
                if p != NO_PARENT {
                    adjoint[p as usize] += a * node.partials[k];
                }
            }
        }
    }

    /// Gradient of a single output.
    pub fn gradient(&self, output: Var<'_>) -> Adjoints {
        let mut adj = Vec::new();
        self.backward_into(&[(output, 1.0)], &mut adj);
        Adjoints(adj)
    }
}

/// Result of a reverse sweep, indexed by variable.
#[derive(Debug, Clone)]
pub struct Adjoints(pub Vec<f64>);

impl Adjoints {
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        adjoint_of(&self.0, v)
    }
}

/// Reads the adjoint of `v` from a buffer filled by [`Tape::backward_into`].
#[inline]
pub fn adjoint_of(adjoint: &[f64], v: Var<'_>) -> f64 {
    if v.idx == NO_PARENT {
        0.0
    } else {
        adjoint.get(v.idx as usize).copied().unwrap_or(0.0)
    }
}

/// A scalar that is either a constant or a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.idx == NO_PARENT {
            write!(f, "Var(const {})", self.val)
        } else {
            write!(f, "Var(#{} = {})", self.idx, self.val)
        }
    }
}

impl<'t> Var<'t> {
    pub fn is_constant(&self) -> bool {
        self.idx == NO_PARENT
    }

    #[inline]
    fn unary(self, op: &'static str, val: f64, d: f64) -> Self {
        match self.tape {
            None => Var { tape: None, idx: NO_PARENT, val },
            Some(t) => {
                t.note(op, val, d, 0.0);
                Var { tape: Some(t), idx: t.push(self.idx, d, NO_PARENT, 0.0), val }
            }
        }
    }

    #[inline]
    fn binary(self, other: Self, op: &'static str, val: f64, da: f64, db: f64) -> Self {
        match self.tape.or(other.tape) {
            None => Var { tape: None, idx: NO_PARENT, val },
            Some(t) => {
                t.note(op, val, da, db);
                Var { tape: Some(t), idx: t.push(self.idx, da, other.idx, db), val }
            }
        }
    }
}

impl Add for Var<'_> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        self.binary(o, "add", self.val + o.val, 1.0, 1.0)
    }
}

impl Sub for Var<'_> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        self.binary(o, "sub", self.val - o.val, 1.0, -1.0)
    }
}

impl Mul for Var<'_> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        self.binary(o, "mul", self.val * o.val, o.val, self.val)
    }
}

impl Div for Var<'_> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.val / o.val;
        self.binary(o, "div", q, 1.0 / o.val, -q / o.val)
    }
}

impl Neg for Var<'_> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.unary("neg", -self.val, -1.0)
    }
}

impl Add<f64> for Var<'_> {
    type Output = Self;
    #[inline]
    fn add(self, c: f64) -> Self {
        self.unary("add", self.val + c, 1.0)
    }
}

impl Sub<f64> for Var<'_> {
    type Output = Self;
    #[inline]
    fn sub(self, c: f64) -> Self {
        self.unary("sub", self.val - c, 1.0)
    }
}

impl Mul<f64> for Var<'_> {
    type Output = Self;
    #[inline]
    fn mul(self, c: f64) -> Self {
        self.unary("mul", self.val * c, c)
    }
}

impl Div<f64> for Var<'_> {
    type Output = Self;
    #[inline]
    fn div(self, c: f64) -> Self {
        self.unary("div", self.val / c, 1.0 / c)
    }
}

impl Real for Var<'_> {
    #[inline]
    fn cst(v: f64) -> Self {
        Var { tape: None, idx: NO_PARENT, val: v }
    }

    #[inline]
    fn value(self) -> f64 {
        self.val
    }

    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary("exp", e, e)
    }

    fn ln(self) -> Self {
        self.unary("ln", self.val.ln(), 1.0 / self.val)
    }

    fn ln_1p(self) -> Self {
        self.unary("ln_1p", self.val.ln_1p(), 1.0 / (1.0 + self.val))
    }

    fn sqrt(self) -> Self {
        let r = self.val.sqrt();
        self.unary("sqrt", r, 0.5 / r)
    }

    fn tanh(self) -> Self {
        let t = self.val.tanh();
        self.unary("tanh", t, 1.0 - t * t)
    }

    fn sin(self) -> Self {
        self.unary("sin", self.val.sin(), self.val.cos())
    }

    fn cos(self) -> Self {
        self.unary("cos", self.val.cos(), -self.val.sin())
    }

    fn atan2(self, x: Self) -> Self {
        let r2 = self.val * self.val + x.val * x.val;
        self.binary(x, "atan2", self.val.atan2(x.val), x.val / r2, -self.val / r2)
    }

    fn powf(self, p: f64) -> Self {
        let v = self.val.powf(p);
        self.unary("powf", v, p * self.val.powf(p - 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-5;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn square_at_three() {
        let tape = Tape::new();
        let p = tape.var(3.0);
        let y = p * p;
        assert_eq!(y.value(), 9.0);
        assert_eq!(tape.gradient(y).wrt(p), 6.0);
    }

    #[test]
    fn constants_do_not_record() {
        let tape = Tape::new();
        let a = Var::cst(2.0);
        let b = a * Var::cst(3.0) + 1.0;
        assert!(b.is_constant());
        assert_eq!(b.value(), 7.0);
        assert!(tape.is_empty());
    }

    #[test]
    fn unary_primitives_match_finite_differences() {
        let cases: Vec<(&str, fn(Var<'_>) -> Var<'_>, fn(f64) -> f64, f64)> = vec![
            ("exp", |v| v.exp(), f64::exp, 0.7),
            ("ln", |v| v.ln(), f64::ln, 1.3),
            ("ln_1p", |v| v.ln_1p(), f64::ln_1p, 0.4),
            ("sqrt", |v| v.sqrt(), f64::sqrt, 2.1),
            ("tanh", |v| v.tanh(), f64::tanh, -0.3),
            ("sin", |v| v.sin(), f64::sin, 0.9),
            ("cos", |v| v.cos(), f64::cos, 0.9),
            ("powf", |v| v.powf(-2.5), |x| x.powf(-2.5), 1.7),
            ("softplus", |v| v.softplus(), |x| x.exp().ln_1p(), 0.8),
            ("softplus_neg", |v| v.softplus(), |x| x.exp().ln_1p(), -1.8),
            ("neg", |v| -v, |x| -x, 0.5),
            ("div_c", |v| v / 3.0, |x| x / 3.0, 0.5),
        ];
        for (name, f, g, x) in cases {
            let tape = Tape::new();
            let v = tape.var(x);
            let y = f(v);
            assert_eq!(y.value(), g(x), "{name} value");
            let got = tape.gradient(y).wrt(v);
            let want = central_diff(g, x);
            assert!((got - want).abs() <= 1e-6 * want.abs().max(1e-3), "{name}: {got} vs {want}");
        }
    }

    #[test]
    fn binary_primitives_match_finite_differences() {
        let cases: Vec<(&str, for<'a> fn(Var<'a>, Var<'a>) -> Var<'a>, fn(f64, f64) -> f64)> = vec![
            ("add", |a, b| a + b, |a, b| a + b),
            ("sub", |a, b| a - b, |a, b| a - b),
            ("mul", |a, b| a * b, |a, b| a * b),
            ("div", |a, b| a / b, |a, b| a / b),
            ("atan2", |a, b| a.atan2(b), f64::atan2),
        ];
        for (name, f, g) in cases {
            for (x, y) in [(0.3, 1.2), (-0.8, -0.4), (1.5, -2.0)] {
                let tape = Tape::new();
                let (a, b) = (tape.var(x), tape.var(y));
                let out = f(a, b);
                let adj = tape.gradient(out);
                let da = central_diff(|t| g(t, y), x);
                let db = central_diff(|t| g(x, t), y);
                assert!((adj.wrt(a) - da).abs() <= 1e-6 * da.abs().max(1e-3), "{name} d/da");
                assert!((adj.wrt(b) - db).abs() <= 1e-6 * db.abs().max(1e-3), "{name} d/db");
            }
        }
    }

    #[test]
    fn non_finite_is_reported_with_primitive_name() {
        let tape = Tape::new();
        let v = tape.var(-1.0);
        let _ = v.ln();
        assert_eq!(tape.fault(), Some("ln"));
        assert!(matches!(tape.check(), Err(Error::NonFinite(m)) if m.contains("ln")));
    }

    #[test]
    fn reused_variable_accumulates() {
        let tape = Tape::new();
        let x = tape.var(2.0);
        let y = x * x * x + x.sin() * x;
        let want = 3.0 * 4.0 + 2.0f64.cos() * 2.0 + 2.0f64.sin();
        assert!((tape.gradient(y).wrt(x) - want).abs() < 1e-14);
    }

    #[test]
    fn seeded_backward_is_linear() {
        let tape = Tape::new();
        let x = tape.var(0.4);
        let a = x.exp();
        let b = x.tanh();
        let mut adj = Vec::new();
        tape.backward_into(&[(a, 2.0), (b, -3.0)], &mut adj);
        let want = 2.0 * 0.4f64.exp() - 3.0 * (1.0 - 0.4f64.tanh().powi(2));
        assert!((adjoint_of(&adj, x) - want).abs() < 1e-14);
    }
}
