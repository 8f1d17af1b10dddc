//! A small reverse-mode automatic differentiation engine on dense
//! row-major matrices.
//!
//! Every operation appends a node to a [`Tape`]; [`Tape::backward`]
//! walks the record once in reverse creation order, accumulating
//! gradients deterministically. The scalar type is generic so the
//! same graph code runs in `f32` for training and `f64` for gradient
//! checks.
//!
//! Shape mismatches are programming errors and panic with the
//! offending shapes; runtime failures (non-scalar loss, NaN values)
//! are reported as values.

use crate::math::Real;
use alloc::vec::Vec;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NodeId(usize);

/// Axis selector for reductions and softmax.
///
/// `PerRow` operates within each row (across its columns); `PerCol`
/// operates within each column (down its rows).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Normalize or reduce each row over its columns.
    PerRow,
    /// Normalize or reduce each column over its rows.
    PerCol,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

/// Shape of the right operand relative to the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Col,
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum UnKind<T> {
    Relu,
    Abs,
    Sqrt,
    Exp,
    Ln,
    Sin,
    Cos,
    Scale(T),
    AddConst(T),
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul { a: NodeId, b: NodeId, ta: bool, tb: bool },
    Bin { a: NodeId, b: NodeId, kind: BinKind, bc: Bcast },
    Un { a: NodeId, kind: UnKind<T> },
    Softmax { a: NodeId, axis: Axis },
    MaxReduce { a: NodeId, axis: Axis, arg: Vec<usize> },
    SumReduce { a: NodeId, axis: Axis },
    SumAll { a: NodeId },
    RepeatRow { a: NodeId },
    ConcatCols { parts: Vec<NodeId> },
    ConcatRows { parts: Vec<NodeId> },
    GatherRows { a: NodeId, idx: Vec<usize> },
    Reshape { a: NodeId },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Bin { kind: BinKind::Add, .. } => "add",
            Op::Bin { kind: BinKind::Sub, .. } => "sub",
            Op::Bin { kind: BinKind::Mul, .. } => "mul",
            Op::Bin { kind: BinKind::Div, .. } => "div",
            Op::Un { kind: UnKind::Relu, .. } => "relu",
            Op::Un { kind: UnKind::Abs, .. } => "abs",
            Op::Un { kind: UnKind::Sqrt, .. } => "sqrt",
            Op::Un { kind: UnKind::Exp, .. } => "exp",
            Op::Un { kind: UnKind::Ln, .. } => "ln",
            Op::Un { kind: UnKind::Sin, .. } => "sin",
            Op::Un { kind: UnKind::Cos, .. } => "cos",
            Op::Un { kind: UnKind::Scale(_), .. } => "scale",
            Op::Un { kind: UnKind::AddConst(_), .. } => "add_const",
            Op::Softmax { .. } => "softmax",
            Op::MaxReduce { .. } => "max_reduce",
            Op::SumReduce { .. } => "sum_reduce",
            Op::SumAll { .. } => "sum_all",
            Op::RepeatRow { .. } => "repeat_row",
            Op::ConcatCols { .. } => "concat_cols",
            Op::ConcatRows { .. } => "concat_rows",
            Op::GatherRows { .. } => "gather_rows",
            Op::Reshape { .. } => "reshape",
        }
    }
}

struct Node<T> {
    rows: usize,
    cols: usize,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Tape runtime failures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TapeError {
    /// `backward` was called on a node that is not 1x1.
    NonScalarLoss {
        /// Loss node rows.
        rows: usize,
        /// Loss node columns.
        cols: usize,
    },
}

impl core::fmt::Display for TapeError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TapeError::NonScalarLoss { rows, cols } => {
                write!(f, "loss must be 1x1, got {rows}x{cols}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TapeError {}

/// Location of the first non-finite value on a tape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NanReport {
    /// Node holding the first non-finite value (creation order).
    pub node: NodeId,
    /// Operation that produced it.
    pub op: &'static str,
    /// Node rows.
    pub rows: usize,
    /// Node columns.
    pub cols: usize,
    /// Flat index of the offending entry.
    pub index: usize,
}

impl core::fmt::Display for NanReport {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "non-finite value in node {} ({}, {}x{}) at flat index {}",
            self.node.0, self.op, self.rows, self.cols, self.index
        )
    }
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss w.r.t. a node, row-major, zeros when the
    /// node does not influence the loss.
    pub fn get(&self, id: NodeId) -> &[T] {
        &self.grads[id.0]
    }
}

/// Ordered record of tensor operations; see the module docs.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    /// Empty tape.
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// True when nothing has been recorded.
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>, needs: bool) -> NodeId {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { rows, cols, value, op, needs_grad: needs });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, rows: usize, cols: usize, data: Vec<T>) -> NodeId {
        assert_eq!(data.len(), rows * cols, "param data length");
        self.push(rows, cols, data, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<T>) -> NodeId {
        assert_eq!(data.len(), rows * cols, "constant data length");
        self.push(rows, cols, data, Op::Leaf, false)
    }

    /// 1x1 non-trainable leaf.
    pub fn scalar(&mut self, v: T) -> NodeId {
        self.constant(1, 1, alloc::vec![v])
    }

    /// Node value, row-major.
    pub fn value(&self, id: NodeId) -> &[T] {
        &self.nodes[id.0].value
    }

    /// Node shape as (rows, cols).
    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Matrix product of optionally transposed operands.
    pub fn matmul(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> NodeId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (kb, n) = if tb { (bc, br) } else { (br, bc) };
        assert_eq!(k, kb, "matmul inner dims: {m}x{k} vs {kb}x{n}");
        let value = mm(
            &self.nodes[a.0].value,
            ar,
            ac,
            ta,
            &self.nodes[b.0].value,
            br,
            bc,
            tb,
        );
        let needs = self.needs(a) || self.needs(b);
        self.push(m, n, value, Op::MatMul { a, b, ta, tb }, needs)
    }

    fn binary(&mut self, a: NodeId, b: NodeId, kind: BinKind) -> NodeId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        let bc_kind = if (br, bc) == (ar, ac) {
            Bcast::Same
        } else if (br, bc) == (1, 1) {
            Bcast::Scalar
        } else if (br, bc) == (1, ac) {
            Bcast::Row
        } else if (br, bc) == (ar, 1) {
            Bcast::Col
        } else {
            panic!("binary op shapes: {ar}x{ac} vs {br}x{bc}")
        };
        let bv = &self.nodes[b.0].value;
        let av = &self.nodes[a.0].value;
        let mut value = Vec::with_capacity(ar * ac);
        for r in 0..ar {
            for c in 0..ac {
                let x = av[r * ac + c];
                let y = bv[bcast_index(bc_kind, r, c, ac)];
                value.push(match kind {
                    BinKind::Add => x + y,
                    BinKind::Sub => x - y,
                    BinKind::Mul => x * y,
                    BinKind::Div => x / y,
                });
            }
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(ar, ac, value, Op::Bin { a, b, kind, bc: bc_kind }, needs)
    }

    /// Elementwise sum; `b` may be 1x1, 1xC, Rx1, or the full shape.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, BinKind::Add)
    }

    /// Elementwise difference with the same broadcasts as [`Tape::add`].
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, BinKind::Sub)
    }

    /// Elementwise product with the same broadcasts as [`Tape::add`].
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, BinKind::Mul)
    }

    /// Elementwise quotient with the same broadcasts as [`Tape::add`].
    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, BinKind::Div)
    }

    fn unary(&mut self, a: NodeId, kind: UnKind<T>) -> NodeId {
        let (r, c) = self.shape(a);
        let value = self.nodes[a.0]
            .value
            .iter()
            .map(|&x| match kind {
                UnKind::Relu => {
                    if x > T::zero() {
                        x
                    } else {
                        T::zero()
                    }
                }
                UnKind::Abs => x.abs(),
                UnKind::Sqrt => x.sqrt(),
                UnKind::Exp => x.exp(),
                UnKind::Ln => x.ln(),
                UnKind::Sin => x.sin(),
                UnKind::Cos => x.cos(),
                UnKind::Scale(k) => x * k,
                UnKind::AddConst(k) => x + k,
            })
            .collect();
        let needs = self.needs(a);
        self.push(r, c, value, Op::Un { a, kind }, needs)
    }

    /// max(x, 0) elementwise.
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, UnKind::Relu)
    }

    /// |x| elementwise.
    pub fn abs_(&mut self, a: NodeId) -> NodeId {
        self.unary(a, UnKind::Abs)
    }

    /// √x elementwise.
    pub fn sqrt_(&mut self, a: NodeId) -> NodeId {
        self.unary(a, UnKind::Sqrt)
    }

    /// eˣ elementwise.
    pub fn exp_(&mut self, a: NodeId) -> NodeId {
        self.unary(a, UnKind::Exp)
    }

    /// ln x elementwise.
    pub fn ln_(&mut self, a: NodeId) -> NodeId {
        self.unary(a, UnKind::Ln)
    }

    /// sin x elementwise.
    pub fn sin_(&mut self, a: NodeId) -> NodeId {
        self.unary(a, UnKind::Sin)
    }

    /// cos x elementwise.
    pub fn cos_(&mut self, a: NodeId) -> NodeId {
        self.unary(a, UnKind::Cos)
    }

    /// k·x elementwise for a compile-time-known constant.
    pub fn scale(&mut self, a: NodeId, k: T) -> NodeId {
        self.unary(a, UnKind::Scale(k))
    }

    /// x + k elementwise for a constant.
    pub fn add_const(&mut self, a: NodeId, k: T) -> NodeId {
        self.unary(a, UnKind::AddConst(k))
    }

    /// Numerically stable softmax along the chosen axis; each slice
    /// sums to one.
    pub fn softmax(&mut self, a: NodeId, axis: Axis) -> NodeId {
        let (r, c) = self.shape(a);
        let av = &self.nodes[a.0].value;
        let mut value = alloc::vec![T::zero(); r * c];
        let (groups, len) = match axis {
            Axis::PerRow => (r, c),
            Axis::PerCol => (c, r),
        };
        let at = |g: usize, i: usize| match axis {
            Axis::PerRow => g * c + i,
            Axis::PerCol => i * c + g,
        };
        for g in 0..groups {
            let mut m = T::neg_infinity();
            for i in 0..len {
                m = m.max(av[at(g, i)]);
            }
            let mut z = T::zero();
            for i in 0..len {
                let e = (av[at(g, i)] - m).exp();
                value[at(g, i)] = e;
                z = z + e;
            }
            for i in 0..len {
                value[at(g, i)] = value[at(g, i)] / z;
            }
        }
        let needs = self.needs(a);
        self.push(r, c, value, Op::Softmax { a, axis }, needs)
    }

    /// Maximum along the axis (PerRow → Rx1, PerCol → 1xC). Gradients
    /// flow to the first maximal element of each slice.
    pub fn max_reduce(&mut self, a: NodeId, axis: Axis) -> NodeId {
        let (r, c) = self.shape(a);
        let av = &self.nodes[a.0].value;
        let (groups, len) = match axis {
            Axis::PerRow => (r, c),
            Axis::PerCol => (c, r),
        };
        let at = |g: usize, i: usize| match axis {
            Axis::PerRow => g * c + i,
            Axis::PerCol => i * c + g,
        };
        let mut value = Vec::with_capacity(groups);
        let mut arg = Vec::with_capacity(groups);
        for g in 0..groups {
            let mut best = av[at(g, 0)];
            let mut best_i = 0usize;
            for i in 1..len {
                let x = av[at(g, i)];
                if x > best {
                    best = x;
                    best_i = i;
                }
            }
            value.push(best);
            arg.push(best_i);
        }
        let (or, oc) = match axis {
            Axis::PerRow => (r, 1),
            Axis::PerCol => (1, c),
        };
        let needs = self.needs(a);
        self.push(or, oc, value, Op::MaxReduce { a, axis, arg }, needs)
    }

    /// Sum along the axis (PerRow → Rx1, PerCol → 1xC).
    pub fn sum_reduce(&mut self, a: NodeId, axis: Axis) -> NodeId {
        let (r, c) = self.shape(a);
        let av = &self.nodes[a.0].value;
        let value: Vec<T> = match axis {
            Axis::PerRow => (0..r)
                .map(|i| av[i * c..(i + 1) * c].iter().copied().sum())
                .collect(),
            Axis::PerCol => (0..c)
                .map(|j| (0..r).map(|i| av[i * c + j]).sum())
                .collect(),
        };
        let (or, oc) = match axis {
            Axis::PerRow => (r, 1),
            Axis::PerCol => (1, c),
        };
        let needs = self.needs(a);
        self.push(or, oc, value, Op::SumReduce { a, axis }, needs)
    }

    /// Sum of every entry, as a 1x1 node.
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let total: T = self.nodes[a.0].value.iter().copied().sum();
        let needs = self.needs(a);
        self.push(1, 1, alloc::vec![total], Op::SumAll { a }, needs)
    }

    /// Stacks `times` copies of a 1xC row.
    pub fn repeat_row(&mut self, a: NodeId, times: usize) -> NodeId {
        let (r, c) = self.shape(a);
        assert_eq!(r, 1, "repeat_row needs a 1xC node, got {r}x{c}");
        let row = self.nodes[a.0].value.clone();
        let mut value = Vec::with_capacity(times * c);
        for _ in 0..times {
            value.extend_from_slice(&row);
        }
        let needs = self.needs(a);
        self.push(times, c, value, Op::RepeatRow { a }, needs)
    }

    /// Concatenates equally tall nodes left to right.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts
            .iter()
            .map(|p| {
                let (r, c) = self.shape(*p);
                assert_eq!(r, rows, "concat_cols row mismatch");
                c
            })
            .sum();
        let mut value = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                let (_, pc) = self.shape(*p);
                let pv = &self.nodes[p.0].value;
                value.extend_from_slice(&pv[r * pc..(r + 1) * pc]);
            }
        }
        let needs = parts.iter().any(|p| self.needs(*p));
        self.push(rows, cols, value, Op::ConcatCols { parts: parts.to_vec() }, needs)
    }

    /// Concatenates equally wide nodes top to bottom.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = self.shape(parts[0]).1;
        let rows: usize = parts
            .iter()
            .map(|p| {
                let (r, c) = self.shape(*p);
                assert_eq!(c, cols, "concat_rows column mismatch");
                r
            })
            .sum();
        let mut value = Vec::with_capacity(rows * cols);
        for p in parts {
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        let needs = parts.iter().any(|p| self.needs(*p));
        self.push(rows, cols, value, Op::ConcatRows { parts: parts.to_vec() }, needs)
    }

    /// Selects rows by index; repeats allowed (gradients accumulate).
    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> NodeId {
        let (r, c) = self.shape(a);
        let av = &self.nodes[a.0].value;
        let mut value = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            assert!(i < r, "gather_rows index {i} out of {r}");
            value.extend_from_slice(&av[i * c..(i + 1) * c]);
        }
        let needs = self.needs(a);
        self.push(idx.len(), c, value, Op::GatherRows { a, idx: idx.to_vec() }, needs)
    }

    /// Reinterprets the data with a new shape of equal size.
    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let (r, c) = self.shape(a);
        assert_eq!(r * c, rows * cols, "reshape {r}x{c} to {rows}x{cols}");
        let value = self.nodes[a.0].value.clone();
        let needs = self.needs(a);
        self.push(rows, cols, value, Op::Reshape { a }, needs)
    }

    /// Scans values in creation order for the first non-finite entry.
    pub fn scan_non_finite(&self) -> Option<NanReport> {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(j) = node.value.iter().position(|v| !v.is_finite()) {
                return Some(NanReport {
                    node: NodeId(i),
                    op: node.op.name(),
                    rows: node.rows,
                    cols: node.cols,
                    index: j,
                });
            }
        }
        None
    }

    /// Reverse-mode gradient of a scalar loss node w.r.t. every node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>, TapeError> {
        let (lr, lc) = self.shape(loss);
        if (lr, lc) != (1, 1) {
            return Err(TapeError::NonScalarLoss { rows: lr, cols: lc });
        }
        let mut grads: Vec<Vec<T>> = self
            .nodes
            .iter()
            .map(|n| alloc::vec![T::zero(); n.rows * n.cols])
            .collect();
        grads[loss.0][0] = T::one();
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backprop_node(i, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, grads: &mut [Vec<T>]) {
        let node = &self.nodes[i];
        // Split off this node's gradient to allow writes to inputs.
        let (before, from) = grads.split_at_mut(i);
        let g = &from[0];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (ar, ac) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
                let (br, bc) = (self.nodes[b.0].rows, self.nodes[b.0].cols);
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let (m, n) = (node.rows, node.cols);
                if self.nodes[a.0].needs_grad {
                    let da = if !*ta {
                        mm(g, m, n, false, bv, br, bc, !*tb)
                    } else {
                        mm(bv, br, bc, *tb, g, m, n, true)
                    };
                    axpy(&mut before[a.0], &da);
                }
                if self.nodes[b.0].needs_grad {
                    let db = if !*tb {
                        mm(av, ar, ac, !*ta, g, m, n, false)
                    } else {
                        mm(g, m, n, true, av, ar, ac, *ta)
                    };
                    axpy(&mut before[b.0], &db);
                }
            }
            Op::Bin { a, b, kind, bc } => {
                let (r, c) = (node.rows, node.cols);
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let a_needs = self.nodes[a.0].needs_grad;
                let b_needs = self.nodes[b.0].needs_grad;
                // a and b precede this node, so both live in `before`;
                // handle a == b (x + x) by sequential accumulation.
                for r_i in 0..r {
                    for c_i in 0..c {
                        let o = r_i * c + c_i;
                        let ob = bcast_index(*bc, r_i, c_i, c);
                        let gv = g[o];
                        let (da, db) = match kind {
                            BinKind::Add => (gv, gv),
                            BinKind::Sub => (gv, -gv),
                            BinKind::Mul => (gv * bv[ob], gv * av[o]),
                            BinKind::Div => {
                                let bb = bv[ob];
                                (gv / bb, -gv * av[o] / (bb * bb))
                            }
                        };
                        if a_needs {
                            before[a.0][o] = before[a.0][o] + da;
                        }
                        if b_needs {
                            before[b.0][ob] = before[b.0][ob] + db;
                        }
                    }
                }
            }
            Op::Un { a, kind } => {
                if !self.nodes[a.0].needs_grad {
                    return;
                }
                let av = &self.nodes[a.0].value;
                let yv = &node.value;
                let target = &mut before[a.0];
                for (o, gv) in g.iter().enumerate() {
                    let d = match kind {
                        UnKind::Relu => {
                            if av[o] > T::zero() {
                                *gv
                            } else {
                                T::zero()
                            }
                        }
                        UnKind::Abs => {
                            if av[o] > T::zero() {
                                *gv
                            } else if av[o] < T::zero() {
                                -*gv
                            } else {
                                T::zero()
                            }
                        }
                        UnKind::Sqrt => {
                            *gv * T::from_f64(0.5) / yv[o]
                        }
                        UnKind::Exp => *gv * yv[o],
                        UnKind::Ln => *gv / av[o],
                        UnKind::Sin => *gv * av[o].cos(),
                        UnKind::Cos => -*gv * av[o].sin(),
                        UnKind::Scale(k) => *gv * *k,
                        UnKind::AddConst(_) => *gv,
                    };
                    target[o] = target[o] + d;
                }
            }
            Op::Softmax { a, axis } => {
                if !self.nodes[a.0].needs_grad {
                    return;
                }
                let (r, c) = (node.rows, node.cols);
                let yv = &node.value;
                let (groups, len) = match axis {
                    Axis::PerRow => (r, c),
                    Axis::PerCol => (c, r),
                };
                let at = |gi: usize, i: usize| match axis {
                    Axis::PerRow => gi * c + i,
                    Axis::PerCol => i * c + gi,
                };
                let target = &mut before[a.0];
                for gi in 0..groups {
                    let mut dot = T::zero();
                    for i in 0..len {
                        let o = at(gi, i);
                        dot = dot + g[o] * yv[o];
                    }
                    for i in 0..len {
                        let o = at(gi, i);
                        target[o] = target[o] + yv[o] * (g[o] - dot);
                    }
                }
            }
            Op::MaxReduce { a, axis, arg } => {
                if !self.nodes[a.0].needs_grad {
                    return;
                }
                let c = self.nodes[a.0].cols;
                let target = &mut before[a.0];
                for (gi, &best_i) in arg.iter().enumerate() {
                    let o = match axis {
                        Axis::PerRow => gi * c + best_i,
                        Axis::PerCol => best_i * c + gi,
                    };
                    target[o] = target[o] + g[gi];
                }
            }
            Op::SumReduce { a, axis } => {
                if !self.nodes[a.0].needs_grad {
                    return;
                }
                let (r, c) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
                let target = &mut before[a.0];
                match axis {
                    Axis::PerRow => {
                        for ri in 0..r {
                            for ci in 0..c {
                                target[ri * c + ci] = target[ri * c + ci] + g[ri];
                            }
                        }
                    }
                    Axis::PerCol => {
                        for ri in 0..r {
                            for ci in 0..c {
                                target[ri * c + ci] = target[ri * c + ci] + g[ci];
                            }
                        }
                    }
                }
            }
            Op::SumAll { a } => {
                if !self.nodes[a.0].needs_grad {
                    return;
                }
                let target = &mut before[a.0];
                for t in target.iter_mut() {
                    *t = *t + g[0];
                }
            }
            Op::RepeatRow { a } => {
                if !self.nodes[a.0].needs_grad {
                    return;
                }
                let c = node.cols;
                let target = &mut before[a.0];
                for (o, gv) in g.iter().enumerate() {
                    target[o % c] = target[o % c] + *gv;
                }
            }
            Op::ConcatCols { parts } => {
                let rows = node.rows;
                let mut offset = 0usize;
                for p in parts {
                    let pc = self.nodes[p.0].cols;
                    if self.nodes[p.0].needs_grad {
                        let target = &mut before[p.0];
                        for r_i in 0..rows {
                            for c_i in 0..pc {
                                target[r_i * pc + c_i] = target[r_i * pc + c_i]
                                    + g[r_i * node.cols + offset + c_i];
                            }
                        }
                    }
                    offset += pc;
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0usize;
                for p in parts {
                    let size = self.nodes[p.0].rows * self.nodes[p.0].cols;
                    if self.nodes[p.0].needs_grad {
                        let target = &mut before[p.0];
                        for (o, t) in target.iter_mut().enumerate() {
                            *t = *t + g[offset + o];
                        }
                    }
                    offset += size;
                }
            }
            Op::GatherRows { a, idx } => {
                if !self.nodes[a.0].needs_grad {
                    return;
                }
                let c = node.cols;
                let target = &mut before[a.0];
                for (t, &src_row) in idx.iter().enumerate() {
                    for c_i in 0..c {
                        target[src_row * c + c_i] =
                            target[src_row * c + c_i] + g[t * c + c_i];
                    }
                }
            }
            Op::Reshape { a } => {
                if !self.nodes[a.0].needs_grad {
                    return;
                }
                axpy(&mut before[a.0], g);
            }
        }
    }
}

fn bcast_index(bc: Bcast, r: usize, c: usize, cols: usize) -> usize {
    match bc {
        Bcast::Same => r * cols + c,
        Bcast::Row => c,
        Bcast::Col => r,
        Bcast::Scalar => 0,
    }
}

fn axpy<T: Real>(acc: &mut [T], add: &[T]) {
    for (a, b) in acc.iter_mut().zip(add) {
        *a = *a + *b;
    }
}

/// Dense row-major matrix product with optional operand transposes,
/// loop-ordered for contiguous access in the common cases.
#[allow(clippy::too_many_arguments)]
fn mm<T: Real>(
    a: &[T],
    ar: usize,
    ac: usize,
    ta: bool,
    b: &[T],
    br: usize,
    bc: usize,
    tb: bool,
) -> Vec<T> {
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let n = if tb { br } else { bc };
    let mut out = alloc::vec![T::zero(); m * n];
    match (ta, tb) {
        (false, false) => {
            for i in 0..m {
                for p in 0..k {
                    let av = a[i * ac + p];
                    if av == T::zero() {
                        continue;
                    }
                    let brow = &b[p * bc..(p + 1) * bc];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (o, bv) in orow.iter_mut().zip(brow) {
                        *o = *o + av * *bv;
                    }
                }
            }
        }
        (false, true) => {
            for i in 0..m {
                let arow = &a[i * ac..(i + 1) * ac];
                for j in 0..n {
                    let brow = &b[j * bc..(j + 1) * bc];
                    let mut acc = T::zero();
                    for (x, y) in arow.iter().zip(brow) {
                        acc = acc + *x * *y;
                    }
                    out[i * n + j] = acc;
                }
            }
        }
        (true, false) => {
            for p in 0..ar {
                let arow = &a[p * ac..(p + 1) * ac];
                let brow = &b[p * bc..(p + 1) * bc];
                for (i, av) in arow.iter().enumerate() {
                    if *av == T::zero() {
                        continue;
                    }
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (o, bv) in orow.iter_mut().zip(brow) {
                        *o = *o + *av * *bv;
                    }
                }
            }
        }
        (true, true) => {
            for i in 0..m {
                for j in 0..n {
                    let mut acc = T::zero();
                    for p in 0..k {
                        acc = acc + a[p * ac + i] * b[j * bc + p];
                    }
                    out[i * n + j] = acc;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::{finite_difference_gradient, max_relative_error};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randvec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()
    }

    #[test]
    fn matmul_known_product() {
        let mut t: Tape<f64> = Tape::new();
        let a = t.constant(2, 3, alloc::vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t.constant(3, 2, alloc::vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = t.matmul(a, b, false, false);
        assert_eq!(t.shape(c), (2, 2));
        assert_eq!(t.value(c), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_transpose_flags_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a_data = randvec(&mut rng, 12); // 3x4 stored
        let b_data = randvec(&mut rng, 20); // 4x5 stored
        let mut t: Tape<f64> = Tape::new();
        let a = t.constant(3, 4, a_data.clone());
        let b = t.constant(4, 5, b_data.clone());
        let at = t.constant(4, 3, transpose(&a_data, 3, 4));
        let bt = t.constant(5, 4, transpose(&b_data, 4, 5));
        let plain = t.matmul(a, b, false, false);
        let via_ta = t.matmul(at, b, true, false);
        let via_tb = t.matmul(a, bt, false, true);
        let via_tt = t.matmul(at, bt, true, true);
        for other in [via_ta, via_tb, via_tt] {
            for (x, y) in t.value(plain).iter().zip(t.value(other)) {
                assert_relative_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    fn transpose(data: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut out = alloc::vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = data[i * c + j];
            }
        }
        out
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.param(2, 3, alloc::vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]);
        let s = t.sum_all(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x), &[1.0; 6]);
    }

    #[test]
    fn quadratic_gradient_is_two_x() {
        let mut t: Tape<f64> = Tape::new();
        let data = alloc::vec![1.0, -2.0, 3.0, 0.5];
        let x = t.param(2, 2, data.clone());
        let sq = t.mul(x, x);
        let s = t.sum_all(sq);
        let g = t.backward(s).unwrap();
        for (gi, xi) in g.get(x).iter().zip(&data) {
            assert_relative_eq!(*gi, 2.0 * xi, epsilon = 1e-12);
        }
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.param(2, 2, alloc::vec![1.0; 4]);
        assert_eq!(
            t.backward(x).unwrap_err(),
            TapeError::NonScalarLoss { rows: 2, cols: 2 }
        );
    }

    /// Checks d(loss)/d(x) against central differences, where the
    /// loss is sum(W ⊙ f(x)) for a fixed random weighting W that
    /// makes every output entry matter differently.
    fn gradcheck(
        rng: &mut ChaCha8Rng,
        dims: (usize, usize),
        f: impl Fn(&mut Tape<f64>, NodeId) -> NodeId,
    ) -> f64 {
        gradcheck_on(rng, dims, &f, |r, n| randvec(r, n))
    }

    fn gradcheck_on(
        rng: &mut ChaCha8Rng,
        (rows, cols): (usize, usize),
        f: impl Fn(&mut Tape<f64>, NodeId) -> NodeId,
        draw: impl Fn(&mut ChaCha8Rng, usize) -> Vec<f64>,
    ) -> f64 {
        let x0 = draw(rng, rows * cols);
        let mut probe: Tape<f64> = Tape::new();
        let xp = probe.param(rows, cols, x0.clone());
        let out = f(&mut probe, xp);
        let (or_, oc_) = probe.shape(out);
        let w = randvec(rng, or_ * oc_);

        let mut eval = |x: &[f64]| -> f64 {
            let mut t: Tape<f64> = Tape::new();
            let xn = t.param(rows, cols, x.to_vec());
            let y = f(&mut t, xn);
            let wn = t.constant(or_, oc_, w.clone());
            let weighted = t.mul(y, wn);
            let s = t.sum_all(weighted);
            t.value(s)[0]
        };
        let numeric = finite_difference_gradient(&mut eval, &x0, 1e-6);

        let mut t: Tape<f64> = Tape::new();
        let xn = t.param(rows, cols, x0);
        let y = f(&mut t, xn);
        let wn = t.constant(or_, oc_, w);
        let weighted = t.mul(y, wn);
        let s = t.sum_all(weighted);
        let g = t.backward(s).unwrap();
        max_relative_error(g.get(xn), &numeric)
    }

    #[test]
    fn elementwise_unary_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..5 {
            // Smooth everywhere.
            assert!(gradcheck(&mut rng, (3, 4), |t, x| t.exp_(x)) < 1e-6);
            assert!(gradcheck(&mut rng, (3, 4), |t, x| t.sin_(x)) < 1e-6);
            assert!(gradcheck(&mut rng, (3, 4), |t, x| t.cos_(x)) < 1e-6);
            assert!(gradcheck(&mut rng, (2, 5), |t, x| t.scale(x, -2.5)) < 1e-6);
            assert!(gradcheck(&mut rng, (2, 5), |t, x| t.add_const(x, 3.0)) < 1e-6);
            // Kinked or domain-limited: keep inputs clear of trouble.
            let positive = |r: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
                (0..n).map(|_| r.gen_range(0.2..2.0)).collect()
            };
            assert!(gradcheck_on(&mut rng, (3, 4), |t, x| t.sqrt_(x), positive) < 1e-6);
            assert!(gradcheck_on(&mut rng, (3, 4), |t, x| t.ln_(x), positive) < 1e-6);
            let off_kink = |r: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
                (0..n)
                    .map(|_| {
                        let v: f64 = r.gen_range(0.1..1.5);
                        if r.gen_bool(0.5) {
                            v
                        } else {
                            -v
                        }
                    })
                    .collect()
            };
            assert!(gradcheck_on(&mut rng, (3, 4), |t, x| t.relu(x), off_kink) < 1e-6);
            assert!(gradcheck_on(&mut rng, (3, 4), |t, x| t.abs_(x), off_kink) < 1e-6);
        }
    }

    #[test]
    fn binary_broadcast_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let shapes = [(3usize, 4usize), (1, 4), (3, 1), (1, 1)];
        for &(br, bc) in &shapes {
            for _ in 0..3 {
                let b_data = randvec(&mut rng, br * bc);
                // Gradient w.r.t. the left operand.
                let bd = b_data.clone();
                assert!(
                    gradcheck(&mut rng, (3, 4), move |t, x| {
                        let b = t.constant(br, bc, bd.clone());
                        t.add(x, b)
                    }) < 1e-6
                );
                let bd = b_data.clone();
                assert!(
                    gradcheck(&mut rng, (3, 4), move |t, x| {
                        let b = t.constant(br, bc, bd.clone());
                        t.mul(x, b)
                    }) < 1e-6
                );
                // Gradient w.r.t. the broadcast (right) operand.
                let a_data = randvec(&mut rng, 12);
                let ad = a_data.clone();
                assert!(
                    gradcheck(&mut rng, (br, bc), move |t, x| {
                        let a = t.constant(3, 4, ad.clone());
                        t.sub(a, x)
                    }) < 1e-6
                );
                let ad = a_data.clone();
                let away_from_zero = |r: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
                    (0..n)
                        .map(|_| {
                            let v: f64 = r.gen_range(0.3..1.5);
                            if r.gen_bool(0.5) {
                                v
                            } else {
                                -v
                            }
                        })
                        .collect()
                };
                assert!(
                    gradcheck_on(
                        &mut rng,
                        (br, bc),
                        move |t, x| {
                            let a = t.constant(3, 4, ad.clone());
                            t.div(a, x)
                        },
                        away_from_zero
                    ) < 1e-6
                );
            }
        }
    }

    #[test]
    fn matmul_gradients_all_flag_combinations() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for &(ta, tb) in &[(false, false), (true, false), (false, true), (true, true)] {
            for _ in 0..3 {
                // x plays the left operand (stored 3x4 or 4x3).
                let (xr, xc) = if ta { (4, 3) } else { (3, 4) };
                let (br, bc) = if tb { (5, 4) } else { (4, 5) };
                let b_data = randvec(&mut rng, br * bc);
                let bd = b_data.clone();
                assert!(
                    gradcheck(&mut rng, (xr, xc), move |t, x| {
                        let b = t.constant(br, bc, bd.clone());
                        t.matmul(x, b, ta, tb)
                    }) < 1e-6,
                    "left operand, ta={ta} tb={tb}"
                );
                // x plays the right operand.
                let a_data = randvec(&mut rng, xr * xc);
                let ad = a_data.clone();
                assert!(
                    gradcheck(&mut rng, (br, bc), move |t, x| {
                        let a = t.constant(xr, xc, ad.clone());
                        t.matmul(a, x, ta, tb)
                    }) < 1e-6,
                    "right operand, ta={ta} tb={tb}"
                );
            }
        }
    }

    #[test]
    fn softmax_slices_sum_to_one_and_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let mut t: Tape<f64> = Tape::new();
        let x = t.param(4, 6, randvec(&mut rng, 24));
        let per_row = t.softmax(x, Axis::PerRow);
        let per_col = t.softmax(x, Axis::PerCol);
        for r in 0..4 {
            let s: f64 = t.value(per_row)[r * 6..(r + 1) * 6].iter().sum();
            assert_relative_eq!(s, 1.0, epsilon = 1e-12);
        }
        for c in 0..6 {
            let s: f64 = (0..4).map(|r| t.value(per_col)[r * 6 + c]).sum();
            assert_relative_eq!(s, 1.0, epsilon = 1e-12);
        }
        for _ in 0..5 {
            assert!(gradcheck(&mut rng, (4, 6), |t, x| t.softmax(x, Axis::PerRow)) < 1e-6);
            assert!(gradcheck(&mut rng, (4, 6), |t, x| t.softmax(x, Axis::PerCol)) < 1e-6);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let data = randvec(&mut rng, 12);
        let mut t: Tape<f64> = Tape::new();
        let x = t.constant(3, 4, data.clone());
        let y = t.softmax(x, Axis::PerCol);
        let shifted: Vec<f64> = data.iter().map(|v| v + 7.5).collect();
        let xs = t.constant(3, 4, shifted);
        let ys = t.softmax(xs, Axis::PerCol);
        for (a, b) in t.value(y).iter().zip(t.value(ys)) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn reductions_and_shapes_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        // Max-reduce inputs drawn with distinct entries (ties are the
        // documented nondifferentiable set).
        let spread = |r: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
            let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.05).collect();
            for i in (1..n).rev() {
                v.swap(i, r.gen_range(0..=i));
            }
            v
        };
        for _ in 0..5 {
            assert!(
                gradcheck_on(&mut rng, (4, 6), |t, x| t.max_reduce(x, Axis::PerRow), spread)
                    < 1e-6
            );
            assert!(
                gradcheck_on(&mut rng, (4, 6), |t, x| t.max_reduce(x, Axis::PerCol), spread)
                    < 1e-6
            );
            assert!(gradcheck(&mut rng, (4, 6), |t, x| t.sum_reduce(x, Axis::PerRow)) < 1e-6);
            assert!(gradcheck(&mut rng, (4, 6), |t, x| t.sum_reduce(x, Axis::PerCol)) < 1e-6);
            assert!(gradcheck(&mut rng, (1, 6), |t, x| t.repeat_row(x, 5)) < 1e-6);
            assert!(gradcheck(&mut rng, (4, 3), |t, x| t.reshape(x, 2, 6)) < 1e-6);
            assert!(
                gradcheck(&mut rng, (5, 3), |t, x| t.gather_rows(x, &[4, 0, 0, 2])) < 1e-6
            );
            assert!(
                gradcheck(&mut rng, (4, 3), |t, x| {
                    let other = t.constant(4, 2, alloc::vec![0.5; 8]);
                    t.concat_cols(&[x, other, x])
                }) < 1e-6
            );
            assert!(
                gradcheck(&mut rng, (2, 5), |t, x| {
                    let other = t.constant(3, 5, alloc::vec![-0.25; 15]);
                    t.concat_rows(&[other, x])
                }) < 1e-6
            );
        }
    }

    #[test]
    fn max_reduce_ties_route_to_first() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.param(1, 4, alloc::vec![2.0, 7.0, 7.0, 1.0]);
        let m = t.max_reduce(x, Axis::PerRow);
        let s = t.sum_all(m);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn repeated_operand_accumulates() {
        // loss = sum(x ⊙ x + x): d/dx = 2x + 1.
        let mut t: Tape<f64> = Tape::new();
        let x = t.param(1, 3, alloc::vec![0.5, -1.0, 2.0]);
        let sq = t.mul(x, x);
        let both = t.add(sq, x);
        let s = t.sum_all(both);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x), &[2.0, -1.0, 5.0]);
    }

    #[test]
    fn unused_input_gets_zero_gradient() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.param(2, 2, alloc::vec![1.0; 4]);
        let unused = t.param(3, 3, alloc::vec![2.0; 9]);
        let s = t.sum_all(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(unused), &[0.0; 9]);
    }

    #[test]
    fn nan_scan_reports_first_offender() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.param(1, 2, alloc::vec![-1.0, 4.0]);
        let bad = t.ln_(x); // ln(-1) = NaN at index 0
        let worse = t.sqrt_(bad);
        let _ = worse;
        let report = t.scan_non_finite().unwrap();
        assert_eq!(report.node, bad);
        assert_eq!(report.op, "ln");
        assert_eq!(report.index, 0);
    }

    #[test]
    fn clean_tape_scans_clean() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.param(2, 2, alloc::vec![1.0, 2.0, 3.0, 4.0]);
        let y = t.exp_(x);
        let _ = t.sum_all(y);
        assert_eq!(t.scan_non_finite(), None);
    }

    #[test]
    fn f32_and_f64_agree_on_small_graph() {
        let data = [0.25f64, -0.5, 1.0, 2.0, -1.5, 0.75];
        let run = |x_data: &[f64]| -> (f64, Vec<f64>) {
            let mut t: Tape<f64> = Tape::new();
            let x = t.param(2, 3, x_data.to_vec());
            let e = t.exp_(x);
            let s = t.softmax(e, Axis::PerRow);
            let l = t.sum_all(s);
            let g = t.backward(l).unwrap();
            (t.value(l)[0], g.get(x).to_vec())
        };
        let run32 = |x_data: &[f64]| -> (f32, Vec<f32>) {
            let mut t: Tape<f32> = Tape::new();
            let x = t.param(2, 3, x_data.iter().map(|v| *v as f32).collect());
            let e = t.exp_(x);
            let s = t.softmax(e, Axis::PerRow);
            let l = t.sum_all(s);
            let g = t.backward(l).unwrap();
            (t.value(l)[0], g.get(x).to_vec())
        };
        let (l64, g64) = run(&data);
        let (l32, g32) = run32(&data);
        assert_relative_eq!(l64, l32 as f64, epsilon = 1e-5);
        for (a, b) in g64.iter().zip(&g32) {
            assert_relative_eq!(*a, *b as f64, epsilon = 1e-5);
        }
    }
}
