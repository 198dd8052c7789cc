//! Reverse-mode differentiation over scalar computation graphs.
//!
//! A [`Tape`] records every elementary operation of a forward computation in
//! topological order; [`Tape::backward`] then propagates adjoints from a
//! scalar output back to every leaf in a single reverse sweep. The same
//! generic code paths (featurization, network forward, potentials) run either
//! on plain `f64` or on tape expressions through the [`Scalar`] trait.
//!
//! Conventions:
//! - `relu`/`max0` use subgradient 0 at exactly 0.
//! - `sqrt` uses adjoint 0 at exactly 0 (cone-point convention; exact for
//!   structurally constant distances such as self-pair separations).
//! - One backward pass per forward pass; a second call without
//!   [`Tape::reset`] is an error.

use std::cell::{Cell, RefCell};
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Const,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    /// max(0, x); `Relu` and `Max0` are the same operation recorded under
    /// either name.
    Max0(u32),
    Sqrt(u32),
    Sin(u32),
    Ln(u32),
    /// Fused inner product; operand ids live in the auxiliary buffer at
    /// `a..a+len` and `b..b+len`.
    Dot { a: u32, b: u32, len: u32 },
}

#[derive(Clone, Copy)]
struct Node {
    op: Op,
    val: f64,
}

/// Append-only record of a scalar computation.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    aux: RefCell<Vec<u32>>,
    swept: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value on a tape. Cheap to copy; all arithmetic on it records
/// new nodes.
#[derive(Clone, Copy)]
pub struct Expr<'t> {
    tape: &'t Tape,
    id: u32,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            aux: RefCell::new(Vec::new()),
            swept: Cell::new(false),
        }
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(n)),
            aux: RefCell::new(Vec::new()),
            swept: Cell::new(false),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Clear all nodes so the tape can record a fresh forward pass.
    pub fn reset(&self) {
        self.nodes.borrow_mut().clear();
        self.aux.borrow_mut().clear();
        self.swept.set(false);
    }

    fn push(&self, op: Op, val: f64) -> Expr<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = u32::try_from(nodes.len()).expect("tape overflow");
        nodes.push(Node { op, val });
        Expr { tape: self, id }
    }

    /// Differentiable input (leaf) node.
    pub fn var(&self, v: f64) -> Expr<'_> {
        self.push(Op::Leaf, v)
    }

    /// Constant node; receives no adjoint.
    pub fn constant(&self, v: f64) -> Expr<'_> {
        self.push(Op::Const, v)
    }

    fn val(&self, id: u32) -> f64 {
        self.nodes.borrow()[id as usize].val
    }

    pub fn add<'t>(&'t self, a: Expr<'t>, b: Expr<'t>) -> Expr<'t> {
        self.push(Op::Add(a.id, b.id), a.value() + b.value())
    }

    pub fn sub<'t>(&'t self, a: Expr<'t>, b: Expr<'t>) -> Expr<'t> {
        self.push(Op::Sub(a.id, b.id), a.value() - b.value())
    }

    pub fn mul<'t>(&'t self, a: Expr<'t>, b: Expr<'t>) -> Expr<'t> {
        self.push(Op::Mul(a.id, b.id), a.value() * b.value())
    }

    /// Checked division; denominator exactly zero is a graph-construction
    /// error.
    pub fn div<'t>(&'t self, a: Expr<'t>, b: Expr<'t>) -> Result<Expr<'t>> {
        if b.value() == 0.0 {
            return Err(Error::Graph("division by zero".into()));
        }
        Ok(self.push(Op::Div(a.id, b.id), a.value() / b.value()))
    }

    pub fn neg<'t>(&'t self, a: Expr<'t>) -> Expr<'t> {
        self.push(Op::Neg(a.id), -a.value())
    }

    /// max(0, x). `relu` records the identical operation.
    pub fn max0<'t>(&'t self, a: Expr<'t>) -> Expr<'t> {
        let v = a.value();
        self.push(Op::Max0(a.id), if v > 0.0 { v } else { 0.0 })
    }

    pub fn relu<'t>(&'t self, a: Expr<'t>) -> Expr<'t> {
        self.max0(a)
    }

    /// Checked square root; negative operand is a graph-construction error.
    pub fn sqrt<'t>(&'t self, a: Expr<'t>) -> Result<Expr<'t>> {
        if a.value() < 0.0 {
            return Err(Error::Graph(format!("sqrt of negative value {}", a.value())));
        }
        Ok(self.push(Op::Sqrt(a.id), a.value().sqrt()))
    }

    pub fn sin<'t>(&'t self, a: Expr<'t>) -> Expr<'t> {
        self.push(Op::Sin(a.id), f64::sin(a.value()))
    }

    /// Checked natural logarithm; non-positive operand is a
    /// graph-construction error.
    pub fn ln<'t>(&'t self, a: Expr<'t>) -> Result<Expr<'t>> {
        if a.value() <= 0.0 {
            return Err(Error::Graph(format!("ln of non-positive value {}", a.value())));
        }
        Ok(self.push(Op::Ln(a.id), a.value().ln()))
    }

    /// Fused inner product of two equal-length expression slices.
    pub fn dot<'t>(&'t self, a: &[Expr<'t>], b: &[Expr<'t>]) -> Expr<'t> {
        assert_eq!(a.len(), b.len(), "dot operands must have equal length");
        let mut aux = self.aux.borrow_mut();
        let off_a = u32::try_from(aux.len()).expect("aux overflow");
        aux.extend(a.iter().map(|e| e.id));
        let off_b = u32::try_from(aux.len()).expect("aux overflow");
        aux.extend(b.iter().map(|e| e.id));
        drop(aux);
        let mut acc = 0.0;
        for (x, y) in a.iter().zip(b.iter()) {
            acc += x.value() * y.value();
        }
        self.push(
            Op::Dot {
                a: off_a,
                b: off_b,
                len: a.len() as u32,
            },
            acc,
        )
    }

    /// Reverse sweep from `output`; returns the adjoint of every node.
    ///
    /// Errors if called a second time without [`Tape::reset`].
    pub fn backward(&self, output: Expr<'_>) -> Result<Gradients> {
        assert!(std::ptr::eq(output.tape, self), "expression from another tape");
        if self.swept.get() {
            return Err(Error::TapeSwept);
        }
        self.swept.set(true);

        let nodes = self.nodes.borrow();
        let aux = self.aux.borrow();
        let mut adj = vec![0.0f64; nodes.len()];
        adj[output.id as usize] = 1.0;

        for i in (0..=output.id as usize).rev() {
            let a_i = adj[i];
            if a_i == 0.0 {
                continue;
            }
            let node = nodes[i];
            match node.op {
                Op::Leaf | Op::Const => {}
                Op::Add(a, b) => {
                    adj[a as usize] += a_i;
                    adj[b as usize] += a_i;
                }
                Op::Sub(a, b) => {
                    adj[a as usize] += a_i;
                    adj[b as usize] -= a_i;
                }
                Op::Mul(a, b) => {
                    adj[a as usize] += a_i * nodes[b as usize].val;
                    adj[b as usize] += a_i * nodes[a as usize].val;
                }
                Op::Div(a, b) => {
                    let bv = nodes[b as usize].val;
                    adj[a as usize] += a_i / bv;
                    adj[b as usize] -= a_i * node.val / bv;
                }
                Op::Neg(a) => adj[a as usize] -= a_i,
                Op::Max0(a) => {
                    if nodes[a as usize].val > 0.0 {
                        adj[a as usize] += a_i;
                    }
                }
                Op::Sqrt(a) => {
                    if node.val > 0.0 {
                        adj[a as usize] += a_i / (2.0 * node.val);
                    }
                }
                Op::Sin(a) => {
                    adj[a as usize] += a_i * f64::cos(nodes[a as usize].val);
                }
                Op::Ln(a) => {
                    adj[a as usize] += a_i / nodes[a as usize].val;
                }
                Op::Dot { a, b, len } => {
                    let (a, b, len) = (a as usize, b as usize, len as usize);
                    for k in 0..len {
                        let ia = aux[a + k] as usize;
                        let ib = aux[b + k] as usize;
                        adj[ia] += a_i * nodes[ib].val;
                        adj[ib] += a_i * nodes[ia].val;
                    }
                }
            }
        }
        Ok(Gradients { adj })
    }
}

/// Adjoints produced by one backward sweep.
pub struct Gradients {
    adj: Vec<f64>,
}

impl Gradients {
    /// Adjoint (∂output/∂expr) of a node.
    pub fn wrt(&self, e: Expr<'_>) -> f64 {
        self.adj[e.id as usize]
    }
}

impl<'t> Expr<'t> {
    /// Cached forward value.
    pub fn value(self) -> f64 {
        self.tape.val(self.id)
    }
}

impl<'t> Add for Expr<'t> {
    type Output = Expr<'t>;
    fn add(self, rhs: Expr<'t>) -> Expr<'t> {
        self.tape.add(self, rhs)
    }
}

impl<'t> Sub for Expr<'t> {
    type Output = Expr<'t>;
    fn sub(self, rhs: Expr<'t>) -> Expr<'t> {
        self.tape.sub(self, rhs)
    }
}

impl<'t> Mul for Expr<'t> {
    type Output = Expr<'t>;
    fn mul(self, rhs: Expr<'t>) -> Expr<'t> {
        self.tape.mul(self, rhs)
    }
}

impl<'t> Div for Expr<'t> {
    type Output = Expr<'t>;
    fn div(self, rhs: Expr<'t>) -> Expr<'t> {
        self.tape.div(self, rhs).expect("division by zero on tape")
    }
}

impl<'t> Neg for Expr<'t> {
    type Output = Expr<'t>;
    fn neg(self) -> Expr<'t> {
        self.tape.neg(self)
    }
}

/// Scalar arithmetic abstract over plain values and tape expressions.
///
/// Generic numeric code (featurization, potentials, network forward) is
/// written once against this trait and evaluated either directly (`f64`) or
/// under differentiation ([`Expr`]).
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Current numeric value (for branching on comparisons).
    fn value(self) -> f64;
    /// A constant with value `v` in the same computation context as `self`.
    fn lift(self, v: f64) -> Self;
    /// Square root; callers must guarantee a non-negative operand.
    fn sqrt(self) -> Self;
    /// max(0, x).
    fn max0(self) -> Self;
    fn sin(self) -> Self;
    fn dot(a: &[Self], b: &[Self]) -> Self;
}

impl Scalar for f64 {
    fn value(self) -> f64 {
        self
    }
    fn lift(self, v: f64) -> Self {
        v
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn max0(self) -> Self {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn dot(a: &[Self], b: &[Self]) -> Self {
        let mut acc = 0.0;
        for (x, y) in a.iter().zip(b.iter()) {
            acc += x * y;
        }
        acc
    }
}

impl<'t> Scalar for Expr<'t> {
    fn value(self) -> f64 {
        Expr::value(self)
    }
    fn lift(self, v: f64) -> Self {
        self.tape.constant(v)
    }
    fn sqrt(self) -> Self {
        self.tape.sqrt(self).expect("sqrt of negative value on tape")
    }
    fn max0(self) -> Self {
        self.tape.max0(self)
    }
    fn sin(self) -> Self {
        self.tape.sin(self)
    }
    fn dot(a: &[Self], b: &[Self]) -> Self {
        assert!(!a.is_empty(), "dot of empty slices");
        a[0].tape.dot(a, b)
    }
}

/// Max relative disagreement between reverse-mode and central-difference
/// gradients of `f` at `point`.
///
/// `f` builds the output expression from leaf variables on the given tape.
/// Analytic gradients come from one backward sweep; the reference is a
/// central difference with the given `step` per coordinate. The error of
/// coordinate i is `|analytic - central| / (|analytic| + |central| + 1e-12)`
/// and the max over coordinates is returned. The caller guarantees `f` is
/// smooth near `point` (kink collisions are re-sampled upstream).
pub fn grad_check<F>(f: F, point: &[f64], step: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Expr<'t>]) -> Expr<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Expr<'_>> = point.iter().map(|&v| tape.var(v)).collect();
    let out = f(&tape, &vars);
    let grads = tape.backward(out)?;
    let analytic: Vec<f64> = vars.iter().map(|v| grads.wrt(*v)).collect();

    let eval = |xs: &[f64]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Expr<'_>> = xs.iter().map(|&v| tape.var(v)).collect();
        f(&tape, &vars).value()
    };

    let mut max_err = 0.0f64;
    let mut xs = point.to_vec();
    for i in 0..xs.len() {
        let x0 = xs[i];
        xs[i] = x0 + step;
        let fp = eval(&xs);
        xs[i] = x0 - step;
        let fm = eval(&xs);
        xs[i] = x0;
        let central = (fp - fm) / (2.0 * step);
        let err = (analytic[i] - central).abs() / (analytic[i].abs() + central.abs() + 1e-12);
        if err > max_err {
            max_err = err;
        }
    }
    Ok(max_err)
}
