use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::{DualScalar, Real};
use crate::error::{Error, Result};

/// Index of a node on a [`Tape`].
pub type NodeId = u32;

/// Elementary operations a tape node can hold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Sin,
    Cos,
    Tanh,
    Exp,
    Ln,
    Sqrt,
    /// `x^c` for a constant exponent.
    PowC,
    /// `x + c`.
    AddC,
    /// `c·x`.
    MulC,
    /// The time tangent of the input, as a value of its own. Its own tangent
    /// (a second time derivative) is not tracked and reads as zero.
    Tangent,
}

impl OpKind {
    pub fn arity(self) -> usize {
        match self {
            OpKind::Leaf => 0,
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => 2,
            _ => 1,
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "leaf" => OpKind::Leaf,
            "add" => OpKind::Add,
            "sub" => OpKind::Sub,
            "mul" => OpKind::Mul,
            "div" => OpKind::Div,
            "neg" => OpKind::Neg,
            "sin" => OpKind::Sin,
            "cos" => OpKind::Cos,
            "tanh" => OpKind::Tanh,
            "exp" => OpKind::Exp,
            "ln" | "log" => OpKind::Ln,
            "sqrt" => OpKind::Sqrt,
            "powc" | "pow" => OpKind::PowC,
            "addc" => OpKind::AddC,
            "mulc" => OpKind::MulC,
            "tangent" => OpKind::Tangent,
            other => return Err(Error::Config(format!("unknown op kind `{other}`"))),
        })
    }
}

#[derive(Clone, Copy, Debug)]
struct Node {
    op: OpKind,
    a: NodeId,
    b: NodeId,
    c: f64,
    v: f64,
    t: f64,
}

/// Reverse-mode tape over dual (value, time-tangent) nodes.
///
/// Nodes are appended in evaluation order, so ids are topologically sorted
/// and the backward sweep is a single reverse pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Adjoints of the value and tangent component of every node.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientStore {
    value: Vec<f64>,
    tangent: Vec<f64>,
}

impl GradientStore {
    /// ∂output/∂(value of node).
    pub fn value_adj(&self, id: NodeId) -> f64 {
        self.value.get(id as usize).copied().unwrap_or(0.0)
    }

    /// ∂output/∂(tangent of node).
    pub fn tangent_adj(&self, id: NodeId) -> f64 {
        self.tangent.get(id as usize).copied().unwrap_or(0.0)
    }

    /// Gradient with respect to a variable; constants report zero.
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        match v.tape {
            Some(_) => self.value_adj(v.id),
            None => 0.0,
        }
    }

    pub fn wrt_tangent(&self, v: Var<'_>) -> f64 {
        match v.tape {
            Some(_) => self.tangent_adj(v.id),
            None => 0.0,
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape { nodes: RefCell::new(Vec::with_capacity(n)) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop all nodes, keeping the allocation.
    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
    }

    /// New leaf with zero time tangent.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.var_with_tangent(value, 0.0)
    }

    /// New leaf carrying a time tangent.
    pub fn var_with_tangent(&self, value: f64, tangent: f64) -> Var<'_> {
        let id = self.push(Node { op: OpKind::Leaf, a: 0, b: 0, c: 0.0, v: value, t: tangent });
        Var { tape: Some(self), id, v: value, t: tangent }
    }

    pub fn value(&self, id: NodeId) -> Option<DualScalar> {
        self.nodes.borrow().get(id as usize).map(|n| DualScalar::new(n.v, n.t))
    }

    /// Checked node construction from explicit ids. `constant` is used by
    /// `PowC`, `AddC` and `MulC` and ignored otherwise.
    pub fn record(&self, op: OpKind, inputs: &[NodeId], constant: f64) -> Result<NodeId> {
        if op == OpKind::Leaf {
            return Err(Error::Config("leaves are created with Tape::var".into()));
        }
        if inputs.len() != op.arity() {
            return Err(Error::Config(format!("{op:?} takes {} inputs, got {}", op.arity(), inputs.len())));
        }
        let len = self.len() as NodeId;
        if let Some(bad) = inputs.iter().find(|&&i| i >= len) {
            return Err(Error::Config(format!("input node {bad} is not on the tape")));
        }
        let a = inputs[0];
        let b = inputs.get(1).copied().unwrap_or(0);
        Ok(self.push_op(op, a, b, constant).0)
    }

    fn push(&self, node: Node) -> NodeId {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        (nodes.len() - 1) as NodeId
    }

    fn push_op(&self, op: OpKind, a: NodeId, b: NodeId, c: f64) -> (NodeId, f64, f64) {
        let mut nodes = self.nodes.borrow_mut();
        let x = nodes[a as usize];
        let (v, t) = match op {
            OpKind::Leaf => unreachable!(),
            OpKind::Add => {
                let y = nodes[b as usize];
                (x.v + y.v, x.t + y.t)
            }
            OpKind::Sub => {
                let y = nodes[b as usize];
                (x.v - y.v, x.t - y.t)
            }
            OpKind::Mul => {
                let y = nodes[b as usize];
                (x.v * y.v, x.t * y.v + x.v * y.t)
            }
            OpKind::Div => {
                let y = nodes[b as usize];
                let inv = 1.0 / y.v;
                let v = x.v * inv;
                (v, (x.t - v * y.t) * inv)
            }
            OpKind::Neg => (-x.v, -x.t),
            OpKind::Sin => (x.v.sin(), x.v.cos() * x.t),
            OpKind::Cos => (x.v.cos(), -x.v.sin() * x.t),
            OpKind::Tanh => {
                let th = x.v.tanh();
                (th, (1.0 - th * th) * x.t)
            }
            OpKind::Exp => {
                let e = x.v.exp();
                (e, e * x.t)
            }
            OpKind::Ln => (x.v.ln(), x.t / x.v),
            OpKind::Sqrt => {
                let s = x.v.sqrt();
                (s, x.t / (2.0 * s))
            }
            OpKind::PowC => (x.v.powf(c), c * x.v.powf(c - 1.0) * x.t),
            OpKind::AddC => (x.v + c, x.t),
            OpKind::MulC => (c * x.v, c * x.t),
            OpKind::Tangent => (x.t, 0.0),
        };
        nodes.push(Node { op, a, b, c, v, t });
        ((nodes.len() - 1) as NodeId, v, t)
    }

    /// Reverse sweep from a scalar output, seeding its value adjoint with 1.
    pub fn backward(&self, output: NodeId) -> Result<GradientStore> {
        let mut store = GradientStore::default();
        self.backward_into(output, &mut store)?;
        Ok(store)
    }

    /// Like [`Tape::backward`] but reuses the buffers in `store`.
    pub fn backward_into(&self, output: NodeId, store: &mut GradientStore) -> Result<()> {
        let nodes = self.nodes.borrow();
        let n = nodes.len();
        if output as usize >= n {
            return Err(Error::Config(format!("output node {output} is not on the tape")));
        }
        store.value.clear();
        store.value.resize(n, 0.0);
        store.tangent.clear();
        store.tangent.resize(n, 0.0);
        let gvs = &mut store.value;
        let gts = &mut store.tangent;
        gvs[output as usize] = 1.0;

        for i in (0..=output as usize).rev() {
            let gv = gvs[i];
            let gt = gts[i];
            if gv == 0.0 && gt == 0.0 {
                continue;
            }
            let node = nodes[i];
            let a = node.a as usize;
            let b = node.b as usize;
            debug_assert!(node.op == OpKind::Leaf || a < i && (node.op.arity() < 2 || b < i));
            let x = nodes[a];
            match node.op {
                OpKind::Leaf => {}
                OpKind::Add => {
                    gvs[a] += gv;
                    gts[a] += gt;
                    gvs[b] += gv;
                    gts[b] += gt;
                }
                OpKind::Sub => {
                    gvs[a] += gv;
                    gts[a] += gt;
                    gvs[b] -= gv;
                    gts[b] -= gt;
                }
                OpKind::Mul => {
                    let y = nodes[b];
                    gvs[a] += gv * y.v + gt * y.t;
                    gts[a] += gt * y.v;
                    gvs[b] += gv * x.v + gt * x.t;
                    gts[b] += gt * x.v;
                }
                OpKind::Div => {
                    let y = nodes[b];
                    let inv = 1.0 / y.v;
                    let inv2 = inv * inv;
                    let o = node.v;
                    gvs[a] += gv * inv - gt * y.t * inv2;
                    gts[a] += gt * inv;
                    gvs[b] += -gv * o * inv + gt * (2.0 * o * y.t - x.t) * inv2;
                    gts[b] -= gt * o * inv;
                }
                OpKind::Tangent => {
                    gts[a] += gv;
                }
                op => {
                    let (d1, d2) = unary_partials(op, x.v, node.v, node.c);
                    gvs[a] += gv * d1 + gt * d2 * x.t;
                    gts[a] += gt * d1;
                }
            }
        }
        Ok(())
    }
}

/// First and second derivative of a unary op at `x` (with output `o`).
fn unary_partials(op: OpKind, x: f64, o: f64, c: f64) -> (f64, f64) {
    match op {
        OpKind::Neg => (-1.0, 0.0),
        OpKind::Sin => (x.cos(), -o),
        OpKind::Cos => (-x.sin(), -o),
        OpKind::Tanh => {
            let d1 = 1.0 - o * o;
            (d1, -2.0 * o * d1)
        }
        OpKind::Exp => (o, o),
        OpKind::Ln => {
            let inv = 1.0 / x;
            (inv, -inv * inv)
        }
        OpKind::Sqrt => {
            let d1 = 0.5 / o;
            (d1, -d1 / (2.0 * x))
        }
        OpKind::PowC => (c * x.powf(c - 1.0), c * (c - 1.0) * x.powf(c - 2.0)),
        OpKind::AddC => (1.0, 0.0),
        OpKind::MulC => (c, 0.0),
        _ => unreachable!("not a unary op: {op:?}"),
    }
}

/// Handle to a tape node, or a constant when `tape` is `None`.
///
/// Constants never touch the tape and always have a zero tangent.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    id: NodeId,
    v: f64,
    t: f64,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.tape {
            Some(_) => write!(f, "Var#{}({}, {})", self.id, self.v, self.t),
            None => write!(f, "Const({})", self.v),
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> Option<NodeId> {
        self.tape.map(|_| self.id)
    }

    pub fn is_constant(&self) -> bool {
        self.tape.is_none()
    }

    /// Time tangent of this value.
    pub fn tangent(&self) -> f64 {
        self.t
    }

    pub fn dual(&self) -> DualScalar {
        DualScalar::new(self.v, self.t)
    }

    /// The time tangent as a differentiable value.
    pub fn tangent_var(self) -> Var<'t> {
        match self.tape {
            Some(tape) => self.unary_on(tape, OpKind::Tangent, 0.0),
            None => Var::cst(0.0),
        }
    }

    fn unary_on(self, tape: &'t Tape, op: OpKind, c: f64) -> Var<'t> {
        let (id, v, t) = tape.push_op(op, self.id, 0, c);
        Var { tape: Some(tape), id, v, t }
    }

    fn unary(self, op: OpKind, c: f64, f: impl FnOnce(f64) -> f64) -> Var<'t> {
        match self.tape {
            Some(tape) => self.unary_on(tape, op, c),
            None => Var::cst(f(self.v)),
        }
    }

    fn binary(self, o: Var<'t>, op: OpKind) -> Var<'t> {
        match (self.tape, o.tape) {
            (Some(t1), Some(t2)) => {
                debug_assert!(std::ptr::eq(t1, t2), "vars from different tapes");
                let (id, v, t) = t1.push_op(op, self.id, o.id, 0.0);
                Var { tape: Some(t1), id, v, t }
            }
            (Some(_), None) => match op {
                OpKind::Add => self + o.v,
                OpKind::Sub => self - o.v,
                OpKind::Mul => self * o.v,
                OpKind::Div => self / o.v,
                _ => unreachable!(),
            },
            (None, Some(_)) => match op {
                OpKind::Add => o + self.v,
                OpKind::Sub => -o + self.v,
                OpKind::Mul => o * self.v,
                OpKind::Div => o.powc(-1.0) * self.v,
                _ => unreachable!(),
            },
            (None, None) => Var::cst(match op {
                OpKind::Add => self.v + o.v,
                OpKind::Sub => self.v - o.v,
                OpKind::Mul => self.v * o.v,
                OpKind::Div => self.v / o.v,
                _ => unreachable!(),
            }),
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        self.binary(o, OpKind::Add)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self.binary(o, OpKind::Sub)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        self.binary(o, OpKind::Mul)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        self.binary(o, OpKind::Div)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(OpKind::Neg, 0.0, |x| -x)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    fn add(self, c: f64) -> Self {
        if c == 0.0 {
            return self;
        }
        self.unary(OpKind::AddC, c, |x| x + c)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    fn sub(self, c: f64) -> Self {
        self + (-c)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    fn mul(self, c: f64) -> Self {
        if c == 1.0 {
            return self;
        }
        if c == 0.0 {
            return Var::cst(0.0);
        }
        self.unary(OpKind::MulC, c, |x| c * x)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    fn div(self, c: f64) -> Self {
        self * (1.0 / c)
    }
}

impl<'t> Real for Var<'t> {
    fn cst(c: f64) -> Self {
        Var { tape: None, id: 0, v: c, t: 0.0 }
    }

    fn value(&self) -> f64 {
        self.v
    }

    fn sin(self) -> Self {
        self.unary(OpKind::Sin, 0.0, f64::sin)
    }

    fn cos(self) -> Self {
        self.unary(OpKind::Cos, 0.0, f64::cos)
    }

    fn tanh(self) -> Self {
        self.unary(OpKind::Tanh, 0.0, f64::tanh)
    }

    fn exp(self) -> Self {
        self.unary(OpKind::Exp, 0.0, f64::exp)
    }

    fn ln(self) -> Self {
        self.unary(OpKind::Ln, 0.0, f64::ln)
    }

    fn sqrt(self) -> Self {
        self.unary(OpKind::Sqrt, 0.0, f64::sqrt)
    }

    fn powc(self, c: f64) -> Self {
        if c == 1.0 {
            return self;
        }
        self.unary(OpKind::PowC, c, |x| x.powf(c))
    }

    fn zero() -> Self {
        Var::cst(0.0)
    }

    fn one() -> Self {
        Var::cst(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn record_mul_of_constants_leaves() {
        let tape = Tape::new();
        let a = tape.var(2.0);
        let b = tape.var(3.0);
        let id = tape.record(OpKind::Mul, &[a.id().unwrap(), b.id().unwrap()], 0.0).unwrap();
        assert_eq!(tape.value(id).unwrap(), DualScalar::new(6.0, 0.0));
    }

    #[test]
    fn record_tanh_of_time_input() {
        let tape = Tape::new();
        let t = tape.var_with_tangent(0.0, 1.0);
        let id = tape.record(OpKind::Tanh, &[t.id().unwrap()], 0.0).unwrap();
        assert_eq!(tape.value(id).unwrap(), DualScalar::new(0.0, 1.0));
    }

    #[test]
    fn record_sin_at_half_pi() {
        let tape = Tape::new();
        let t = tape.var_with_tangent(std::f64::consts::FRAC_PI_2, 1.0);
        let id = tape.record(OpKind::Sin, &[t.id().unwrap()], 0.0).unwrap();
        let d = tape.value(id).unwrap();
        assert_eq!(d.re, 1.0);
        assert!(d.eps.abs() < 1e-16);
    }

    #[test]
    fn record_rejects_bad_input() {
        let tape = Tape::new();
        let a = tape.var(1.0);
        assert!(matches!(tape.record(OpKind::Add, &[a.id().unwrap()], 0.0), Err(Error::Config(_))));
        assert!(matches!(tape.record(OpKind::Sin, &[7], 0.0), Err(Error::Config(_))));
        assert!(matches!(tape.record(OpKind::Leaf, &[], 0.0), Err(Error::Config(_))));
        assert!(OpKind::from_name("erf").is_err());
        assert_eq!(OpKind::from_name("tanh").unwrap(), OpKind::Tanh);
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let w = tape.var(3.0);
        let y = w * w;
        let g = tape.backward(y.id().unwrap()).unwrap();
        assert_eq!(g.wrt(w), 6.0);
    }

    #[test]
    fn product_plus_sine_matches_finite_differences() {
        let f = |w1: f64, w2: f64| w1 * w2 + w1.sin();
        let tape = Tape::new();
        let w1 = tape.var(2.0);
        let w2 = tape.var(5.0);
        let y = w1 * w2 + w1.sin();
        let g = tape.backward(y.id().unwrap()).unwrap();
        let h = 1e-6;
        let fd1 = central(|x| f(x, 5.0), 2.0, h);
        let fd2 = central(|x| f(2.0, x), 5.0, h);
        assert!(((g.wrt(w1) - fd1) / fd1).abs() < 1e-6);
        assert!(((g.wrt(w2) - fd2) / fd2).abs() < 1e-6);
        assert_eq!(g.wrt(w1), 5.0 + 2.0f64.cos());
        assert_eq!(g.wrt(w2), 2.0);
    }

    #[test]
    fn gradient_of_time_derivative() {
        // d/dt tanh(w t) at t = 0 equals w, so its w-gradient is 1.
        for w0 in [-1.3, 0.0, 0.7, 2.5] {
            let tape = Tape::new();
            let w = tape.var(w0);
            let t = tape.var_with_tangent(0.0, 1.0);
            let y = (w * t).tanh();
            assert!((y.tangent() - w0).abs() < 1e-15);
            let dy = y.tangent_var();
            let g = tape.backward(dy.id().unwrap()).unwrap();
            assert!((g.wrt(w) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn unreached_leaves_have_zero_adjoint() {
        let tape = Tape::new();
        let a = tape.var(1.0);
        let b = tape.var(2.0);
        let y = a.exp();
        let g = tape.backward(y.id().unwrap()).unwrap();
        assert_eq!(g.wrt(b), 0.0);
        assert_eq!(g.wrt(Var::cst(4.0)), 0.0);
    }

    #[test]
    fn constant_operands_do_not_record() {
        let tape = Tape::new();
        let c = Var::cst(2.0) * Var::cst(3.0) + 1.0;
        assert!(c.is_constant());
        assert_eq!(c.value(), 7.0);
        assert!(tape.is_empty());
        let x = tape.var(0.5);
        let y = Var::cst(2.0) / x;
        let g = tape.backward(y.id().unwrap()).unwrap();
        assert!((y.value() - 4.0).abs() < 1e-15);
        assert!((g.wrt(x) + 8.0).abs() < 1e-12);
        let z = Var::cst(1.0) - x;
        let g = tape.backward(z.id().unwrap()).unwrap();
        assert_eq!(g.wrt(x), -1.0);
    }

    #[test]
    fn backward_is_deterministic() {
        let tape = Tape::new();
        let xs: Vec<_> = (0..6).map(|i| tape.var_with_tangent(0.1 * i as f64 - 0.2, 0.3)).collect();
        let mut acc = Var::cst(0.0);
        for (i, &x) in xs.iter().enumerate() {
            acc = acc + (x * (i as f64 + 1.0)).tanh() / (x.exp() + 1.0) + x.cos().tangent_var();
        }
        let id = acc.id().unwrap();
        let g1 = tape.backward(id).unwrap();
        let g2 = tape.backward(id).unwrap();
        assert_eq!(g1, g2);
    }
}
