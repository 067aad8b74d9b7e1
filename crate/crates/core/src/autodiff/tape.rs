//! Define-by-run tape.
//!
//! Every operation on a [`Var`] appends one node holding its forward value and
//! the ids of its inputs. Node ids are assigned in creation order, so the node
//! list is already topologically sorted and `backward` is a single reverse
//! sweep.

use std::cell::RefCell;

use super::{AutodiffError, ParamId, ParamStore, Tensor};

/// Pointwise operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemKind {
    Add,
    Sub,
    Mul,
    Relu,
    Tanh,
    Exp,
    Log,
    Square,
    Negate,
}

impl ElemKind {
    pub fn is_binary(self) -> bool {
        matches!(self, ElemKind::Add | ElemKind::Sub | ElemKind::Mul)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<ParamId> },
    Binary(ElemKind, usize, usize),
    Unary(ElemKind, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    AddBias(usize, usize),
    Reduce {
        kind: ReduceKind,
        input: usize,
        axis: Option<usize>,
    },
    Clamp {
        input: usize,
        lo: f64,
        hi: f64,
    },
    Gather {
        input: usize,
        index: Vec<usize>,
    },
    WeightedSum(Vec<(usize, f64)>),
    SoftmaxSegments {
        input: usize,
        segments: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var { tape: self, id }
    }

    /// Records a tensor that gradients never flow into.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf { param: None }, false)
    }

    /// Records a free leaf; it receives a gradient when the tensor requires one.
    pub fn leaf(&self, t: Tensor) -> Var<'_> {
        let rg = t.requires_grad();
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf { param: None }, rg)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    fn param_leaf(&self, t: &Tensor, id: ParamId, trainable: bool) -> Var<'_> {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf { param: Some(id) },
            trainable,
        )
    }

    /// Binds a parameter store whose leaves receive gradients.
    pub fn bind<'s>(&self, store: &'s ParamStore) -> Binding<'_, 's> {
        Binding::new(self, store, true)
    }

    /// Binds a parameter store as constants (target networks, frozen critics).
    pub fn bind_frozen<'s>(&self, store: &'s ParamStore) -> Binding<'_, 's> {
        Binding::new(self, store, false)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, AutodiffError> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(AutodiffError::ForeignTape);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss {
                shape: root.shape.clone(),
            });
        }
        let n = nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        let mut visits = vec![0u32; n];
        if root.requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            visits[id] += 1;
            backprop_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let params = nodes
            .iter()
            .enumerate()
            .filter_map(|(i, node)| match node.op {
                Op::Leaf { param: Some(p) } if node.requires_grad => Some((i, p)),
                _ => None,
            })
            .collect();
        Ok(Gradients {
            grads,
            params,
            visits,
        })
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, delta: &[f64]) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => {
            for (g, d) in g.iter_mut().zip(delta) {
                *g += d;
            }
        }
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

fn backprop_node(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    match &node.op {
        Op::Leaf { .. } => {}
        Op::Binary(kind, a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            match kind {
                ElemKind::Add => {
                    accumulate(nodes, grads, *a, g);
                    accumulate(nodes, grads, *b, g);
                }
                ElemKind::Sub => {
                    accumulate(nodes, grads, *a, g);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate(nodes, grads, *b, &neg);
                }
                ElemKind::Mul => {
                    let da: Vec<f64> = g.iter().zip(bv).map(|(g, b)| g * b).collect();
                    let db: Vec<f64> = g.iter().zip(av).map(|(g, a)| g * a).collect();
                    accumulate(nodes, grads, *a, &da);
                    accumulate(nodes, grads, *b, &db);
                }
                _ => unreachable!("unary kind recorded as binary"),
            }
        }
        Op::Unary(kind, a) => {
            let x = &nodes[*a].value;
            let y = &node.value;
            let d: Vec<f64> = match kind {
                ElemKind::Relu => g
                    .iter()
                    .zip(x)
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect(),
                ElemKind::Tanh => g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
                ElemKind::Exp => g.iter().zip(y).map(|(g, y)| g * y).collect(),
                ElemKind::Log => g.iter().zip(x).map(|(g, x)| g / x).collect(),
                ElemKind::Square => g.iter().zip(x).map(|(g, x)| 2.0 * x * g).collect(),
                ElemKind::Negate => g.iter().map(|g| -g).collect(),
                _ => unreachable!("binary kind recorded as unary"),
            };
            accumulate(nodes, grads, *a, &d);
        }
        Op::Scale(a, c) => {
            let d: Vec<f64> = g.iter().map(|g| g * c).collect();
            accumulate(nodes, grads, *a, &d);
        }
        Op::AddScalar(a) => accumulate(nodes, grads, *a, g),
        Op::MatMul(a, b) => {
            let (an, bn) = (&nodes[*a], &nodes[*b]);
            let (m, k, n) = (an.shape[0], an.shape[1], bn.shape[1]);
            if an.requires_grad {
                // dA = G . B^T
                let mut da = vec![0.0; m * k];
                for (row, gr) in da.chunks_exact_mut(k).zip(g.chunks_exact(n)) {
                    for (d, br) in row.iter_mut().zip(bn.value.chunks_exact(n)) {
                        *d = gr.iter().zip(br).fold(0.0, |s, (a, b)| s + a * b);
                    }
                }
                accumulate(nodes, grads, *a, &da);
            }
            if bn.requires_grad {
                // dB = A^T . G
                let mut db = vec![0.0; k * n];
                for (p, dr) in db.chunks_exact_mut(n).enumerate() {
                    for (ar, gr) in an.value.chunks_exact(k).zip(g.chunks_exact(n)) {
                        let a_ip = ar[p];
                        if a_ip == 0.0 {
                            continue;
                        }
                        for (d, &gv) in dr.iter_mut().zip(gr) {
                            *d += a_ip * gv;
                        }
                    }
                }
                accumulate(nodes, grads, *b, &db);
            }
        }
        Op::AddBias(x, b) => {
            accumulate(nodes, grads, *x, g);
            let n = nodes[*b].value.len();
            let mut db = vec![0.0; n];
            for row in g.chunks(n) {
                for (d, v) in db.iter_mut().zip(row) {
                    *d += v;
                }
            }
            accumulate(nodes, grads, *b, &db);
        }
        Op::Reduce { kind, input, axis } => {
            let in_shape = &nodes[*input].shape;
            let numel = nodes[*input].value.len();
            let mut d = vec![0.0; numel];
            match axis {
                None => {
                    let scale = match kind {
                        ReduceKind::Sum => 1.0,
                        ReduceKind::Mean => 1.0 / numel as f64,
                    };
                    d.iter_mut().for_each(|v| *v = g[0] * scale);
                }
                Some(ax) => {
                    let (outer, len, inner) = axis_split(in_shape, *ax);
                    let scale = match kind {
                        ReduceKind::Sum => 1.0,
                        ReduceKind::Mean => 1.0 / len as f64,
                    };
                    for o in 0..outer {
                        for l in 0..len {
                            for i in 0..inner {
                                d[(o * len + l) * inner + i] = g[o * inner + i] * scale;
                            }
                        }
                    }
                }
            }
            accumulate(nodes, grads, *input, &d);
        }
        Op::Clamp { input, lo, hi } => {
            let x = &nodes[*input].value;
            let d: Vec<f64> = g
                .iter()
                .zip(x)
                .map(|(g, x)| if *x >= *lo && *x <= *hi { *g } else { 0.0 })
                .collect();
            accumulate(nodes, grads, *input, &d);
        }
        Op::Gather { input, index } => {
            let cols = nodes[*input].shape[1];
            let mut d = vec![0.0; nodes[*input].value.len()];
            for (r, &c) in index.iter().enumerate() {
                d[r * cols + c] = g[r];
            }
            accumulate(nodes, grads, *input, &d);
        }
        Op::WeightedSum(terms) => {
            for &(t, c) in terms {
                let d: Vec<f64> = g.iter().map(|g| g * c).collect();
                accumulate(nodes, grads, t, &d);
            }
        }
        Op::SoftmaxSegments { input, segments } => {
            let y = &node.value;
            let cols: usize = segments.iter().sum();
            let mut d = vec![0.0; y.len()];
            for r in 0..y.len() / cols {
                let mut start = r * cols;
                for &len in segments {
                    let seg = start..start + len;
                    let dot: f64 = y[seg.clone()].iter().zip(&g[seg.clone()]).map(|(y, g)| y * g).sum();
                    for k in seg {
                        d[k] = y[k] * (g[k] - dot);
                    }
                    start += len;
                }
            }
            accumulate(nodes, grads, *input, &d);
        }
    }
}

/// (outer, axis length, inner) extents for reducing `shape` along `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(usize, ParamId)>,
    visits: Vec<u32>,
}

impl Gradients {
    /// d loss / d var, or `None` when the var does not require a gradient or
    /// is not an ancestor of the loss.
    pub fn wrt(&self, v: Var<'_>) -> Option<&[f64]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    /// Adds parameter gradients into the store. Trainable parameters bound on
    /// the tape but unreachable from the loss receive an explicit zero.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(node, pid) in &self.params {
            let t = store.get_mut(pid);
            match &self.grads[node] {
                Some(g) => t.accumulate_grad(g),
                None => {
                    if t.grad().is_none() {
                        t.zero_grad();
                    }
                }
            }
        }
    }

    /// How many times each node was processed by the reverse sweep.
    pub fn visit_counts(&self) -> &[u32] {
        &self.visits
    }

    pub fn nodes_visited(&self) -> usize {
        self.visits.iter().filter(|&&v| v > 0).count()
    }
}

/// Lazily materializes parameters of one store as leaves of one tape. Each
/// parameter becomes at most one leaf no matter how often it is used.
pub struct Binding<'t, 's> {
    tape: &'t Tape,
    store: &'s ParamStore,
    trainable: bool,
    cache: RefCell<Vec<Option<usize>>>,
}

impl<'t, 's> Binding<'t, 's> {
    fn new(tape: &'t Tape, store: &'s ParamStore, trainable: bool) -> Self {
        Binding {
            tape,
            store,
            trainable,
            cache: RefCell::new(vec![None; store.len()]),
        }
    }

    pub fn get(&self, id: ParamId) -> Var<'t> {
        let mut cache = self.cache.borrow_mut();
        if let Some(node) = cache[id.0] {
            return Var {
                tape: self.tape,
                id: node,
            };
        }
        let v = self
            .tape
            .param_leaf(self.store.get(id), id, self.trainable);
        cache[id.0] = Some(v.id);
        v
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn value(&self) -> Tensor {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape node holds a valid tensor")
    }

    /// The single element of a one-element var.
    pub fn item(&self) -> f64 {
        let nodes = self.tape.nodes.borrow();
        let v = &nodes[self.id].value;
        debug_assert_eq!(v.len(), 1);
        v[0]
    }

    /// Same value, cut off from the gradient flow.
    pub fn detach(&self) -> Var<'t> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.shape.clone(), n.value.clone())
        };
        self.tape.push(shape, value, Op::Leaf { param: None }, false)
    }

    fn check_tape(&self, other: &Var<'_>) -> Result<(), AutodiffError> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(AutodiffError::ForeignTape)
        }
    }

    fn unary_map(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let (shape, value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (
                n.shape.clone(),
                n.value.iter().map(|&x| f(x)).collect(),
                n.requires_grad,
            )
        };
        self.tape.push(shape, value, op, rg)
    }

    /// Generic pointwise entry point; `other` must be given exactly for the
    /// binary kinds.
    pub fn elementwise(&self, kind: ElemKind, other: Option<Var<'t>>) -> Result<Var<'t>, AutodiffError> {
        match (kind.is_binary(), other) {
            (true, Some(b)) => self.binary(kind, b),
            (false, None) => self.unary(kind),
            (true, None) => Err(AutodiffError::Arity { op: "elementwise", expected: 2 }),
            (false, Some(_)) => Err(AutodiffError::Arity { op: "elementwise", expected: 1 }),
        }
    }

    fn binary(&self, kind: ElemKind, b: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.check_tape(&b)?;
        let (shape, value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (x, y) = (&nodes[self.id], &nodes[b.id]);
            if x.shape != y.shape {
                return Err(AutodiffError::ShapeMismatch {
                    op: kind_name(kind),
                    left: x.shape.clone(),
                    right: y.shape.clone(),
                });
            }
            let f: fn(f64, f64) -> f64 = match kind {
                ElemKind::Add => |a, b| a + b,
                ElemKind::Sub => |a, b| a - b,
                ElemKind::Mul => |a, b| a * b,
                _ => unreachable!(),
            };
            let value = x.value.iter().zip(&y.value).map(|(&a, &b)| f(a, b)).collect();
            (x.shape.clone(), value, x.requires_grad || y.requires_grad)
        };
        Ok(self
            .tape
            .push(shape, value, Op::Binary(kind, self.id, b.id), rg))
    }

    fn unary(&self, kind: ElemKind) -> Result<Var<'t>, AutodiffError> {
        if kind == ElemKind::Log {
            let nodes = self.tape.nodes.borrow();
            if let Some(bad) = nodes[self.id].value.iter().find(|&&x| !(x > 0.0)) {
                return Err(AutodiffError::Domain {
                    op: "log",
                    detail: format!("input {bad} is not strictly positive"),
                });
            }
        }
        let f: fn(f64) -> f64 = match kind {
            ElemKind::Relu => |x| if x > 0.0 { x } else { 0.0 },
            ElemKind::Tanh => f64::tanh,
            ElemKind::Exp => f64::exp,
            ElemKind::Log => f64::ln,
            ElemKind::Square => |x| x * x,
            ElemKind::Negate => |x| -x,
            _ => unreachable!(),
        };
        Ok(self.unary_map(Op::Unary(kind, self.id), f))
    }

    pub fn add(&self, b: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.binary(ElemKind::Add, b)
    }

    pub fn sub(&self, b: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.binary(ElemKind::Sub, b)
    }

    pub fn mul(&self, b: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.binary(ElemKind::Mul, b)
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary_map(Op::Unary(ElemKind::Relu, self.id), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary_map(Op::Unary(ElemKind::Tanh, self.id), f64::tanh)
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary_map(Op::Unary(ElemKind::Exp, self.id), f64::exp)
    }

    pub fn log(&self) -> Result<Var<'t>, AutodiffError> {
        self.unary(ElemKind::Log)
    }

    pub fn square(&self) -> Var<'t> {
        self.unary_map(Op::Unary(ElemKind::Square, self.id), |x| x * x)
    }

    pub fn neg(&self) -> Var<'t> {
        self.unary_map(Op::Unary(ElemKind::Negate, self.id), |x| -x)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary_map(Op::Scale(self.id, c), |x| x * c)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary_map(Op::AddScalar(self.id), |x| x + c)
    }

    /// Clamps into `[lo, hi]`; the gradient is passed through only where the
    /// input already lies inside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        self.unary_map(
            Op::Clamp {
                input: self.id,
                lo,
                hi,
            },
            |x| x.clamp(lo, hi),
        )
    }

    /// `m x k` by `k x n` matrix product.
    pub fn matmul(&self, b: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.check_tape(&b)?;
        let (shape, value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (x, y) = (&nodes[self.id], &nodes[b.id]);
            if x.shape.len() != 2 || y.shape.len() != 2 || x.shape[1] != y.shape[0] {
                return Err(AutodiffError::ShapeMismatch {
                    op: "matmul",
                    left: x.shape.clone(),
                    right: y.shape.clone(),
                });
            }
            let (m, k, n) = (x.shape[0], x.shape[1], y.shape[1]);
            // i-p-j order keeps the per-element summation order over p
            let mut out = vec![0.0; m * n];
            for (row, xr) in out.chunks_exact_mut(n).zip(x.value.chunks_exact(k)) {
                for (&a, yr) in xr.iter().zip(y.value.chunks_exact(n)) {
                    for (o, &b) in row.iter_mut().zip(yr) {
                        *o += a * b;
                    }
                }
            }
            (vec![m, n], out, x.requires_grad || y.requires_grad)
        };
        Ok(self.tape.push(shape, value, Op::MatMul(self.id, b.id), rg))
    }

    /// Adds a length-`n` bias to every row of an `m x n` matrix.
    pub fn add_bias(&self, bias: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.check_tape(&bias)?;
        let (shape, value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (x, b) = (&nodes[self.id], &nodes[bias.id]);
            let n = b.value.len();
            if x.shape.len() != 2 || b.shape.len() != 1 || x.shape[1] != n {
                return Err(AutodiffError::ShapeMismatch {
                    op: "add_bias",
                    left: x.shape.clone(),
                    right: b.shape.clone(),
                });
            }
            let value = x
                .value
                .chunks(n)
                .flat_map(|row| row.iter().zip(&b.value).map(|(a, b)| a + b))
                .collect();
            (x.shape.clone(), value, x.requires_grad || b.requires_grad)
        };
        Ok(self
            .tape
            .push(shape, value, Op::AddBias(self.id, bias.id), rg))
    }

    /// Sum or mean over one axis (removed from the shape) or over everything.
    pub fn reduce(&self, kind: ReduceKind, axis: Option<usize>) -> Result<Var<'t>, AutodiffError> {
        let (shape, value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id];
            match axis {
                None => {
                    let s: f64 = x.value.iter().sum();
                    let v = match kind {
                        ReduceKind::Sum => s,
                        ReduceKind::Mean => s / x.value.len() as f64,
                    };
                    (Vec::new(), vec![v], x.requires_grad)
                }
                Some(ax) => {
                    if ax >= x.shape.len() {
                        return Err(AutodiffError::InvalidAxis {
                            axis: ax,
                            ndim: x.shape.len(),
                        });
                    }
                    let (outer, len, inner) = axis_split(&x.shape, ax);
                    let mut out = vec![0.0; outer * inner];
                    for o in 0..outer {
                        for i in 0..inner {
                            let mut s = 0.0;
                            for l in 0..len {
                                s += x.value[(o * len + l) * inner + i];
                            }
                            out[o * inner + i] = match kind {
                                ReduceKind::Sum => s,
                                ReduceKind::Mean => s / len as f64,
                            };
                        }
                    }
                    let mut shape = x.shape.clone();
                    shape.remove(ax);
                    (shape, out, x.requires_grad)
                }
            }
        };
        Ok(self.tape.push(
            shape,
            value,
            Op::Reduce {
                kind,
                input: self.id,
                axis,
            },
            rg,
        ))
    }

    pub fn sum(&self) -> Var<'t> {
        self.reduce(ReduceKind::Sum, None).expect("full reduction cannot fail")
    }

    pub fn mean(&self) -> Var<'t> {
        self.reduce(ReduceKind::Mean, None).expect("full reduction cannot fail")
    }

    /// Picks one column per row of an `m x n` matrix, giving `m x 1`.
    pub fn gather_cols(&self, index: &[usize]) -> Result<Var<'t>, AutodiffError> {
        let (value, rg, m) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id];
            if x.shape.len() != 2 || x.shape[0] != index.len() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "gather_cols",
                    left: x.shape.clone(),
                    right: vec![index.len()],
                });
            }
            let n = x.shape[1];
            if let Some(&bad) = index.iter().find(|&&c| c >= n) {
                return Err(AutodiffError::IndexOutOfRange { index: bad, len: n });
            }
            let value: Vec<f64> = index
                .iter()
                .enumerate()
                .map(|(r, &c)| x.value[r * n + c])
                .collect();
            (value, x.requires_grad, index.len())
        };
        Ok(self.tape.push(
            vec![m, 1],
            value,
            Op::Gather {
                input: self.id,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// Row-wise softmax applied independently to consecutive column segments
    /// (segment lengths must add up to the column count).
    pub fn softmax_segments(&self, segments: &[usize]) -> Result<Var<'t>, AutodiffError> {
        let (shape, value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id];
            let cols = *x.shape.last().unwrap_or(&1);
            if segments.iter().any(|&s| s == 0) || segments.iter().sum::<usize>() != cols {
                return Err(AutodiffError::ShapeMismatch {
                    op: "softmax_segments",
                    left: x.shape.clone(),
                    right: segments.to_vec(),
                });
            }
            let mut out = x.value.clone();
            for row in out.chunks_mut(cols) {
                softmax_segments_in_place(row, segments);
            }
            (x.shape.clone(), out, x.requires_grad)
        };
        Ok(self.tape.push(
            shape,
            value,
            Op::SoftmaxSegments {
                input: self.id,
                segments: segments.to_vec(),
            },
            rg,
        ))
    }

    /// `sum_k c_k * x_k` over same-shaped vars. Each output element is
    /// accumulated over its terms in ascending value order, so the result does
    /// not depend on the order in which the terms are listed.
    pub fn weighted_sum(terms: &[(Var<'t>, f64)]) -> Result<Var<'t>, AutodiffError> {
        let (first, _) = terms.first().ok_or(AutodiffError::EmptyInput {
            op: "weighted_sum",
        })?;
        let tape = first.tape;
        for (v, _) in terms {
            first.check_tape(v)?;
        }
        let (shape, value, rg) = {
            let nodes = tape.nodes.borrow();
            let shape = nodes[first.id].shape.clone();
            for (v, _) in terms {
                if nodes[v.id].shape != shape {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "weighted_sum",
                        left: shape,
                        right: nodes[v.id].shape.clone(),
                    });
                }
            }
            let numel = nodes[first.id].value.len();
            let mut scratch = Vec::with_capacity(terms.len());
            let mut out = Vec::with_capacity(numel);
            for k in 0..numel {
                scratch.clear();
                scratch.extend(terms.iter().map(|(v, c)| c * nodes[v.id].value[k]));
                scratch.sort_by(f64::total_cmp);
                out.push(scratch.iter().sum());
            }
            let rg = terms.iter().any(|(v, _)| nodes[v.id].requires_grad);
            (shape, out, rg)
        };
        let ids = terms.iter().map(|(v, c)| (v.id, *c)).collect();
        Ok(tape.push(shape, value, Op::WeightedSum(ids), rg))
    }
}

fn kind_name(kind: ElemKind) -> &'static str {
    match kind {
        ElemKind::Add => "add",
        ElemKind::Sub => "sub",
        ElemKind::Mul => "mul",
        ElemKind::Relu => "relu",
        ElemKind::Tanh => "tanh",
        ElemKind::Exp => "exp",
        ElemKind::Log => "log",
        ElemKind::Square => "square",
        ElemKind::Negate => "negate",
    }
}

/// Numerically stable softmax over each segment of `row`.
pub fn softmax_segments_in_place(row: &mut [f64], segments: &[usize]) {
    let mut start = 0;
    for &len in segments {
        let seg = &mut row[start..start + len];
        let max = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in seg.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in seg.iter_mut() {
            *v /= z;
        }
        start += len;
    }
}
