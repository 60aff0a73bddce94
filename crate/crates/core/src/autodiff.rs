//! A small reverse-mode tape for scalar functions of a few hundred variables.
//!
//! Model code is written once against [`Real`] and evaluated either on plain
//! `f64` or on [`Var`] to obtain exact gradients.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::special;

/// Scalar operations needed by the density code.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(self) -> f64;
    /// A constant in the same context as `self`.
    fn lift(self, c: f64) -> Self;
    fn ln(self) -> Self;
    fn exp(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn ln_1p(self) -> Self;
    fn log_ndtr(self) -> Self;
    fn square(self) -> Self {
        self * self
    }
}

impl Real for f64 {
    fn value(self) -> f64 {
        self
    }
    fn lift(self, c: f64) -> Self {
        c
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
    fn log_ndtr(self) -> Self {
        special::log_ndtr(self)
    }
}

#[derive(Clone, Copy, Debug)]
struct Node {
    parents: [usize; 2],
    partials: [f64; 2],
}

/// Records operations for a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self { nodes: RefCell::new(Vec::with_capacity(n)) }
    }

    /// A new independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push(Node { parents: [usize::MAX; 2], partials: [0.0; 2] });
        Var { tape: self, idx, val: value }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    fn unary(&self, a: usize, da: f64, val: f64) -> Var<'_> {
        let idx = self.push(Node { parents: [a, usize::MAX], partials: [da, 0.0] });
        Var { tape: self, idx, val }
    }

    fn binary(&self, a: usize, da: f64, b: usize, db: f64, val: f64) -> Var<'_> {
        let idx = self.push(Node { parents: [a, b], partials: [da, db] });
        Var { tape: self, idx, val }
    }

    /// Adjoints of every recorded node with respect to `output`.
    pub fn gradient(&self, output: Var<'_>) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        adj[output.idx] = 1.0;
        for i in (0..=output.idx).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = nodes[i];
            for k in 0..2 {
                let p = node.parents[k];
                if p != usize::MAX {
                    adj[p] += a * node.partials[k];
                }
            }
        }
        adj
    }
}

/// A tape-tracked scalar.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
    val: f64,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, #{})", self.val, self.idx)
    }
}

impl<'t> Var<'t> {
    pub fn index(&self) -> usize {
        self.idx
    }

    fn constant(tape: &'t Tape, c: f64) -> Self {
        tape.var(c)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self::Output {
        self.tape.binary(self.idx, 1.0, rhs.idx, 1.0, self.val + rhs.val)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self::Output {
        self.tape.binary(self.idx, 1.0, rhs.idx, -1.0, self.val - rhs.val)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self::Output {
        self.tape.binary(self.idx, rhs.val, rhs.idx, self.val, self.val * rhs.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self::Output {
        let q = self.val / rhs.val;
        self.tape.binary(self.idx, 1.0 / rhs.val, rhs.idx, -q / rhs.val, q)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self::Output {
        self.tape.unary(self.idx, -1.0, -self.val)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self::Output {
        self.tape.unary(self.idx, 1.0, self.val + rhs)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Self::Output {
        self.tape.unary(self.idx, 1.0, self.val - rhs)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self::Output {
        self.tape.unary(self.idx, rhs, self.val * rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Self::Output {
        self.tape.unary(self.idx, 1.0 / rhs, self.val / rhs)
    }
}

impl<'t> Real for Var<'t> {
    fn value(self) -> f64 {
        self.val
    }
    fn lift(self, c: f64) -> Self {
        Var::constant(self.tape, c)
    }
    fn ln(self) -> Self {
        self.tape.unary(self.idx, 1.0 / self.val, self.val.ln())
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.tape.unary(self.idx, e, e)
    }
    fn tanh(self) -> Self {
        let t = self.val.tanh();
        self.tape.unary(self.idx, 1.0 - t * t, t)
    }
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.tape.unary(self.idx, 0.5 / s, s)
    }
    fn ln_1p(self) -> Self {
        self.tape.unary(self.idx, 1.0 / (1.0 + self.val), self.val.ln_1p())
    }
    fn log_ndtr(self) -> Self {
        self.tape.unary(self.idx, special::inv_mills(self.val), special::log_ndtr(self.val))
    }
}
