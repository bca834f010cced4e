//! Reverse-mode differentiation over a recorded scalar tape.
//!
//! A [`Recording`] owns the calling thread's tape for its lifetime. Values
//! created with [`Recording::var`] are leaves; every arithmetic operation on
//! a [`Var`] appends one node holding the local partial derivatives of its
//! (at most two) inputs. [`Recording::backward`] sweeps the tape once in
//! reverse and returns the adjoint of every node.
//!
//! Constants never touch the tape: a `Var` built with [`Real::from_f64`]
//! carries no index, and operations between two constants stay constant.
//!
//! Tapes are per thread, so independent recordings may run concurrently on
//! different threads (e.g. one per ray batch inside a rayon pool).

use std::cell::RefCell;
use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::math::Real;

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    a: u32,
    b: u32,
    da: f64,
    db: f64,
}

struct TapeState {
    nodes: Vec<Node>,
    active: bool,
}

thread_local! {
    static TAPE: RefCell<TapeState> = const {
        RefCell::new(TapeState { nodes: Vec::new(), active: false })
    };
}

#[inline]
fn push(node: Node) -> u32 {
    TAPE.with(|t| {
        let mut t = t.borrow_mut();
        debug_assert!(t.active, "Var operation outside of a Recording");
        let idx = t.nodes.len();
        assert!(idx < NONE as usize, "tape overflow");
        t.nodes.push(node);
        idx as u32
    })
}

/// A scalar that records its derivation on the thread's tape.
#[derive(Clone, Copy, Debug)]
pub struct Var {
    idx: u32,
    val: f64,
}

impl Var {
    #[inline]
    pub fn val(self) -> f64 {
        self.val
    }

    /// True for values created from constants only.
    #[inline]
    pub fn is_constant(self) -> bool {
        self.idx == NONE
    }

    #[inline]
    fn unary(self, val: f64, d: f64) -> Var {
        if self.idx == NONE {
            return Var { idx: NONE, val };
        }
        let idx = push(Node {
            a: self.idx,
            b: NONE,
            da: d,
            db: 0.0,
        });
        Var { idx, val }
    }

    #[inline]
    fn binary(self, other: Var, val: f64, da: f64, db: f64) -> Var {
        match (self.idx == NONE, other.idx == NONE) {
            (true, true) => Var { idx: NONE, val },
            (false, true) => self.unary(val, da),
            (true, false) => other.unary(val, db),
            (false, false) => {
                let idx = push(Node {
                    a: self.idx,
                    b: other.idx,
                    da,
                    db,
                });
                Var { idx, val }
            }
        }
    }
}

/// Exclusive handle on the current thread's tape.
pub struct Recording {
    _not_send: std::marker::PhantomData<*const ()>,
}

impl Recording {
    /// Starts recording on this thread.
    ///
    /// Panics if another `Recording` is alive on the same thread.
    pub fn new() -> Self {
        TAPE.with(|t| {
            let mut t = t.borrow_mut();
            assert!(!t.active, "nested Recording on one thread");
            t.active = true;
            t.nodes.clear();
        });
        Recording {
            _not_send: std::marker::PhantomData,
        }
    }

    /// Creates a leaf variable.
    pub fn var(&self, val: f64) -> Var {
        let idx = push(Node {
            a: NONE,
            b: NONE,
            da: 0.0,
            db: 0.0,
        });
        Var { idx, val }
    }

    pub fn vars(&self, vals: &[f64]) -> Vec<Var> {
        vals.iter().map(|&v| self.var(v)).collect()
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        TAPE.with(|t| t.borrow().nodes.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Propagates adjoints from `loss` to every recorded node and consumes
    /// the recording.
    pub fn backward(self, loss: Var) -> Gradients {
        let adjoints = TAPE.with(|t| {
            let t = t.borrow();
            let mut adj = vec![0.0; t.nodes.len()];
            if loss.idx != NONE {
                adj[loss.idx as usize] = 1.0;
                for i in (0..=loss.idx as usize).rev() {
                    let g = adj[i];
                    if g == 0.0 {
                        continue;
                    }
                    let n = t.nodes[i];
                    if n.a != NONE {
                        adj[n.a as usize] += g * n.da;
                    }
                    if n.b != NONE {
                        adj[n.b as usize] += g * n.db;
                    }
                }
            }
            adj
        });
        Gradients {
            adjoints,
            disconnected: loss.idx == NONE,
        }
        // `self` drops here and releases the tape.
    }
}

impl Default for Recording {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for Recording {
    fn drop(&mut self) {
        TAPE.with(|t| {
            let mut t = t.borrow_mut();
            t.active = false;
            t.nodes.clear();
        });
    }
}

/// Adjoints produced by [`Recording::backward`].
pub struct Gradients {
    adjoints: Vec<f64>,
    disconnected: bool,
}

impl Gradients {
    /// d(loss)/d(v); zero for constants and for values the loss does not use.
    pub fn wrt(&self, v: Var) -> f64 {
        if v.idx == NONE {
            0.0
        } else {
            self.adjoints[v.idx as usize]
        }
    }

    pub fn wrt_all(&self, vs: &[Var]) -> Vec<f64> {
        vs.iter().map(|&v| self.wrt(v)).collect()
    }

    /// Set when the loss was a constant, i.e. not connected to any leaf.
    pub fn is_disconnected(&self) -> bool {
        self.disconnected
    }
}

impl PartialEq for Var {
    fn eq(&self, other: &Self) -> bool {
        self.val == other.val
    }
}

impl PartialOrd for Var {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.val.partial_cmp(&other.val)
    }
}

impl Add for Var {
    type Output = Var;
    #[inline]
    fn add(self, o: Var) -> Var {
        self.binary(o, self.val + o.val, 1.0, 1.0)
    }
}

impl Sub for Var {
    type Output = Var;
    #[inline]
    fn sub(self, o: Var) -> Var {
        self.binary(o, self.val - o.val, 1.0, -1.0)
    }
}

impl Mul for Var {
    type Output = Var;
    #[inline]
    fn mul(self, o: Var) -> Var {
        self.binary(o, self.val * o.val, o.val, self.val)
    }
}

impl Div for Var {
    type Output = Var;
    #[inline]
    fn div(self, o: Var) -> Var {
        let inv = 1.0 / o.val;
        let val = self.val * inv;
        self.binary(o, self.val / o.val, inv, -val * inv)
    }
}

impl Neg for Var {
    type Output = Var;
    #[inline]
    fn neg(self) -> Var {
        self.unary(-self.val, -1.0)
    }
}

impl Add<f64> for Var {
    type Output = Var;
    #[inline]
    fn add(self, c: f64) -> Var {
        self.unary(self.val + c, 1.0)
    }
}

impl Sub<f64> for Var {
    type Output = Var;
    #[inline]
    fn sub(self, c: f64) -> Var {
        self.unary(self.val - c, 1.0)
    }
}

impl Mul<f64> for Var {
    type Output = Var;
    #[inline]
    fn mul(self, c: f64) -> Var {
        self.unary(self.val * c, c)
    }
}

impl Div<f64> for Var {
    type Output = Var;
    #[inline]
    fn div(self, c: f64) -> Var {
        self.unary(self.val / c, 1.0 / c)
    }
}

impl Real for Var {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Var { idx: NONE, val: v }
    }
    #[inline]
    fn value(self) -> f64 {
        self.val
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }
    #[inline]
    fn exp_m1(self) -> Self {
        self.unary(self.val.exp_m1(), self.val.exp())
    }
    #[inline]
    fn ln(self) -> Self {
        self.unary(self.val.ln(), 1.0 / self.val)
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.unary(s, 0.5 / s)
    }
    #[inline]
    fn sin(self) -> Self {
        self.unary(self.val.sin(), self.val.cos())
    }
    #[inline]
    fn cos(self) -> Self {
        self.unary(self.val.cos(), -self.val.sin())
    }
    #[inline]
    fn abs(self) -> Self {
        if self.val < 0.0 {
            -self
        } else {
            self
        }
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        let d = if n == 0 {
            0.0
        } else {
            n as f64 * self.val.powi(n - 1)
        };
        self.unary(self.val.powi(n), d)
    }
    #[inline]
    fn max(self, other: Self) -> Self {
        if other.val > self.val {
            other
        } else {
            self
        }
    }
    #[inline]
    fn min(self, other: Self) -> Self {
        if other.val < self.val {
            other
        } else {
            self
        }
    }
    #[inline]
    fn recip(self) -> Self {
        let r = 1.0 / self.val;
        self.unary(r, -r * r)
    }
    #[inline]
    fn sigmoid(self) -> Self {
        let s = crate::math::sigmoid(self.val);
        self.unary(s, s * (1.0 - s))
    }
    #[inline]
    fn softplus(self) -> Self {
        self.unary(
            crate::math::softplus(self.val),
            crate::math::sigmoid(self.val),
        )
    }
}
