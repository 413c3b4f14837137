//! Append-only computation tape.
//!
//! Each operation immediately computes its value, records its inputs, and
//! returns a [`Var`] handle. [`Tape::backward`] walks the records in reverse
//! push order, which is a valid topological order because inputs always
//! precede outputs. Nodes reachable from no tracked leaf never get gradient
//! buffers, so constants (masks, position tables) cost nothing extra.

use super::{NumericsError, Real, Tensor};

/// Handle to a value on a [`Tape`]. Only meaningful for the tape it came from.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(usize);

struct Node<T: Real> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
    tracked: bool,
}

enum Op<T: Real> {
    Leaf,
    MatMul { a: Var, b: Var },
    /// a * transpose(b), with b stored untransposed as [n x k].
    MatMulNT { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    /// Adds a 1xN bias row to every row of a.
    AddBias { a: Var, bias: Var },
    Scale { a: Var, c: T },
    AddScalar { a: Var },
    Sigmoid { a: Var },
    Tanh { a: Var },
    Relu { a: Var },
    Softplus { a: Var },
    Exp { a: Var },
    Log { a: Var },
    SoftmaxRows { a: Var },
    LogSoftmaxRows { a: Var },
    SumAll { a: Var },
    SumRows { a: Var },
    SumCols { a: Var },
    ConcatRows { parts: Vec<Var> },
    ConcatCols { parts: Vec<Var> },
    SliceRows { a: Var, from: usize },
    SliceCols { a: Var, from: usize },
    GatherRows { a: Var, ids: Vec<usize> },
    /// out[i, 0] = a[i, ids[i]], one picked column per row.
    GatherPerRow { a: Var, ids: Vec<usize> },
    /// Each input row repeated `times` times consecutively.
    RepeatRows { a: Var, times: usize },
    LayerNorm {
        a: Var,
        gain: Var,
        bias: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
}

pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    ops: Vec<Op<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].data
    }

    /// Scalar convenience accessor for 1x1 variables.
    pub fn scalar_value(&self, v: Var) -> T {
        debug_assert_eq!(self.nodes[v.0].data.len(), 1);
        self.nodes[v.0].data[0]
    }

    /// Gradient of the last backward target with respect to `v`. `None` until
    /// backward runs, and for variables with no tracked ancestor.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Copies the gradient for `v` into the tensor's gradient buffer,
    /// writing zeros when `v` has no gradient.
    pub fn write_grad(&self, v: Var, tensor: &mut Tensor<T>) {
        tensor.set_grad(self.grad(v));
    }

    // ---- leaves ----

    pub fn leaf(
        &mut self,
        rows: usize,
        cols: usize,
        data: Vec<T>,
        tracked: bool,
    ) -> Result<Var, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::WrongLen {
                op: "leaf",
                rows,
                cols,
                want: rows * cols,
                got: data.len(),
            });
        }
        Ok(self.push(rows, cols, data, Op::Leaf, tracked))
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Var, NumericsError> {
        self.leaf(rows, cols, data, false)
    }

    pub fn constant_scalar(&mut self, v: T) -> Var {
        self.push(1, 1, vec![v], Op::Leaf, false)
    }

    /// Binds a stored tensor to the tape. Tracked iff the tensor requires grad.
    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.rows(), t.cols(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    // ---- matrix products ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let mut out = vec![T::zero(); m * n];
        mm_nn(self.value(a), self.value(b), m, k, n, &mut out);
        Ok(self.push_op(m, n, out, Op::MatMul { a, b }, &[a, b]))
    }

    /// a * transpose(b) without materializing the transpose; b is [n x k].
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        if k != k2 {
            return Err(self.shape_err("matmul_nt", a, b));
        }
        let mut out = vec![T::zero(); m * n];
        mm_nt(self.value(a), self.value(b), m, k, n, &mut out);
        Ok(self.push_op(m, n, out, Op::MatMulNT { a, b }, &[a, b]))
    }

    // ---- elementwise on two inputs ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip("add", a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip("sub", a, b, |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip("mul", a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.shape(a);
        let (brows, bcols) = self.shape(bias);
        if brows != 1 || bcols != n {
            return Err(self.shape_err("add_bias", a, bias));
        }
        let mut out = Vec::with_capacity(m * n);
        {
            let av = self.value(a);
            let bv = self.value(bias);
            for i in 0..m {
                for j in 0..n {
                    out.push(av[i * n + j] + bv[j]);
                }
            }
        }
        Ok(self.push_op(m, n, out, Op::AddBias { a, bias }, &[a, bias]))
    }

    // ---- elementwise on one input ----

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().map(|&x| x * c).collect();
        self.push_op(m, n, out, Op::Scale { a, c }, &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().map(|&x| x + c).collect();
        self.push_op(m, n, out, Op::AddScalar { a }, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push_op(m, n, out, Op::Sigmoid { a }, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().map(|&x| x.tanh()).collect();
        self.push_op(m, n, out, Op::Tanh { a }, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let zero = T::zero();
        let out = self.value(a).iter().map(|&x| x.max(zero)).collect();
        self.push_op(m, n, out, Op::Relu { a }, &[a])
    }

    /// ln(1 + exp(x)), computed without overflow for large |x|.
    pub fn softplus(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().map(|&x| softplus(x)).collect();
        self.push_op(m, n, out, Op::Softplus { a }, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.shape(a);
        let mut out = Vec::with_capacity(m * n);
        for (i, &x) in self.value(a).iter().enumerate() {
            let v = x.exp();
            if !v.is_finite() {
                return Err(NumericsError::Domain {
                    op: "exp",
                    what: format!("overflow at index {i}, input {x}"),
                });
            }
            out.push(v);
        }
        Ok(self.push_op(m, n, out, Op::Exp { a }, &[a]))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.shape(a);
        let mut out = Vec::with_capacity(m * n);
        for (i, &x) in self.value(a).iter().enumerate() {
            if x <= T::zero() || !x.is_finite() {
                return Err(NumericsError::Domain {
                    op: "log",
                    what: format!("input {x} at index {i} is outside (0, inf)"),
                });
            }
            out.push(x.ln());
        }
        Ok(self.push_op(m, n, out, Op::Log { a }, &[a]))
    }

    // ---- row-wise softmax family ----

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let mut out = vec![T::zero(); m * n];
        {
            let av = self.value(a);
            for i in 0..m {
                softmax_row(&av[i * n..(i + 1) * n], &mut out[i * n..(i + 1) * n]);
            }
        }
        self.push_op(m, n, out, Op::SoftmaxRows { a }, &[a])
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let mut out = vec![T::zero(); m * n];
        {
            let av = self.value(a);
            for i in 0..m {
                log_softmax_row(&av[i * n..(i + 1) * n], &mut out[i * n..(i + 1) * n]);
            }
        }
        self.push_op(m, n, out, Op::LogSoftmaxRows { a }, &[a])
    }

    // ---- reductions ----

    pub fn sum_all(&mut self, a: Var) -> Var {
        let mut s = T::zero();
        for &x in self.value(a) {
            s += x;
        }
        self.push_op(1, 1, vec![s], Op::SumAll { a }, &[a])
    }

    /// Sums along `axis`: 0 collapses rows into a 1xN row, 1 collapses
    /// columns into an Mx1 column.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var, NumericsError> {
        let (m, n) = self.shape(a);
        match axis {
            0 => {
                let mut out = vec![T::zero(); n];
                let av = self.value(a);
                for i in 0..m {
                    for j in 0..n {
                        out[j] += av[i * n + j];
                    }
                }
                Ok(self.push_op(1, n, out, Op::SumCols { a }, &[a]))
            }
            1 => {
                let mut out = vec![T::zero(); m];
                let av = self.value(a);
                for i in 0..m {
                    for j in 0..n {
                        out[i] += av[i * n + j];
                    }
                }
                Ok(self.push_op(m, 1, out, Op::SumRows { a }, &[a]))
            }
            _ => Err(NumericsError::IndexOutOfRange {
                op: "sum_axis",
                index: axis,
                limit: 2,
            }),
        }
    }

    // ---- reshaping by copy ----

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = *parts.first().ok_or(NumericsError::BadShape {
            op: "concat_rows",
            expected: "at least one part",
            rows: 0,
            cols: 0,
        })?;
        let (_, n) = self.shape(first);
        let mut rows = 0;
        for &p in parts {
            let (pm, pn) = self.shape(p);
            if pn != n {
                return Err(self.shape_err("concat_rows", first, p));
            }
            rows += pm;
        }
        let mut out = Vec::with_capacity(rows * n);
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let tracked = parts.iter().any(|&p| self.nodes[p.0].tracked);
        Ok(self.push(rows, n, out, Op::ConcatRows { parts: parts.to_vec() }, tracked))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = *parts.first().ok_or(NumericsError::BadShape {
            op: "concat_cols",
            expected: "at least one part",
            rows: 0,
            cols: 0,
        })?;
        let (m, _) = self.shape(first);
        let mut cols = 0;
        for &p in parts {
            let (pm, pn) = self.shape(p);
            if pm != m {
                return Err(self.shape_err("concat_cols", first, p));
            }
            cols += pn;
        }
        let mut out = Vec::with_capacity(m * cols);
        for i in 0..m {
            for &p in parts {
                let (_, pn) = self.shape(p);
                out.extend_from_slice(&self.value(p)[i * pn..(i + 1) * pn]);
            }
        }
        let tracked = parts.iter().any(|&p| self.nodes[p.0].tracked);
        Ok(self.push(m, cols, out, Op::ConcatCols { parts: parts.to_vec() }, tracked))
    }

    pub fn slice_rows(&mut self, a: Var, from: usize, count: usize) -> Result<Var, NumericsError> {
        let (m, n) = self.shape(a);
        if from + count > m {
            return Err(NumericsError::IndexOutOfRange {
                op: "slice_rows",
                index: from + count,
                limit: m,
            });
        }
        let out = self.value(a)[from * n..(from + count) * n].to_vec();
        Ok(self.push_op(count, n, out, Op::SliceRows { a, from }, &[a]))
    }

    pub fn slice_cols(&mut self, a: Var, from: usize, count: usize) -> Result<Var, NumericsError> {
        let (m, n) = self.shape(a);
        if from + count > n {
            return Err(NumericsError::IndexOutOfRange {
                op: "slice_cols",
                index: from + count,
                limit: n,
            });
        }
        let mut out = Vec::with_capacity(m * count);
        {
            let av = self.value(a);
            for i in 0..m {
                out.extend_from_slice(&av[i * n + from..i * n + from + count]);
            }
        }
        Ok(self.push_op(m, count, out, Op::SliceCols { a, from }, &[a]))
    }

    /// Gathers whole rows by index; duplicate ids are fine and their
    /// gradients accumulate. Also serves as the embedding lookup.
    pub fn gather_rows(&mut self, a: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let (m, n) = self.shape(a);
        for &id in ids {
            if id >= m {
                return Err(NumericsError::IndexOutOfRange {
                    op: "gather_rows",
                    index: id,
                    limit: m,
                });
            }
        }
        let mut out = Vec::with_capacity(ids.len() * n);
        {
            let av = self.value(a);
            for &id in ids {
                out.extend_from_slice(&av[id * n..(id + 1) * n]);
            }
        }
        Ok(self.push_op(ids.len(), n, out, Op::GatherRows { a, ids: ids.to_vec() }, &[a]))
    }

    /// Looks up one embedding row per token id.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        self.gather_rows(table, ids)
    }

    /// Picks one column per row: out[i, 0] = a[i, ids[i]].
    pub fn gather_per_row(&mut self, a: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let (m, n) = self.shape(a);
        if ids.len() != m {
            return Err(NumericsError::BadShape {
                op: "gather_per_row",
                expected: "one id per row",
                rows: ids.len(),
                cols: 1,
            });
        }
        let mut out = Vec::with_capacity(m);
        {
            let av = self.value(a);
            for (i, &id) in ids.iter().enumerate() {
                if id >= n {
                    return Err(NumericsError::IndexOutOfRange {
                        op: "gather_per_row",
                        index: id,
                        limit: n,
                    });
                }
                out.push(av[i * n + id]);
            }
        }
        Ok(self.push_op(m, 1, out, Op::GatherPerRow { a, ids: ids.to_vec() }, &[a]))
    }

    /// Repeats each row `times` times consecutively: row i lands at rows
    /// i*times .. (i+1)*times of the output.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        let (m, n) = self.shape(a);
        let mut out = Vec::with_capacity(m * times * n);
        {
            let av = self.value(a);
            for i in 0..m {
                for _ in 0..times {
                    out.extend_from_slice(&av[i * n..(i + 1) * n]);
                }
            }
        }
        self.push_op(m * times, n, out, Op::RepeatRows { a, times }, &[a])
    }

    // ---- layer norm ----

    /// Normalizes each row to zero mean and unit variance, then applies a
    /// learned 1xN gain and bias.
    pub fn layer_norm(
        &mut self,
        a: Var,
        gain: Var,
        bias: Var,
        eps: T,
    ) -> Result<Var, NumericsError> {
        let (m, n) = self.shape(a);
        let (grows, gcols) = self.shape(gain);
        let (brows, bcols) = self.shape(bias);
        if grows != 1 || gcols != n {
            return Err(self.shape_err("layer_norm", a, gain));
        }
        if brows != 1 || bcols != n {
            return Err(self.shape_err("layer_norm", a, bias));
        }
        let nf = T::from_f64(n as f64);
        let mut out = vec![T::zero(); m * n];
        let mut mean = vec![T::zero(); m];
        let mut inv_std = vec![T::zero(); m];
        {
            let av = self.value(a);
            let gv = self.value(gain);
            let bv = self.value(bias);
            for i in 0..m {
                let row = &av[i * n..(i + 1) * n];
                let mut mu = T::zero();
                for &x in row {
                    mu += x;
                }
                mu = mu / nf;
                let mut var = T::zero();
                for &x in row {
                    let d = x - mu;
                    var += d * d;
                }
                var = var / nf;
                let is = (var + eps).sqrt().recip();
                mean[i] = mu;
                inv_std[i] = is;
                for j in 0..n {
                    let xhat = (row[j] - mu) * is;
                    out[i * n + j] = gv[j] * xhat + bv[j];
                }
            }
        }
        Ok(self.push_op(
            m,
            n,
            out,
            Op::LayerNorm { a, gain, bias, mean, inv_std },
            &[a, gain, bias],
        ))
    }

    // ---- backward ----

    /// Accumulates d(loss)/d(node) for every tracked node, walking the tape
    /// in reverse push order. Runs at most once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericsError> {
        if self.backward_done {
            return Err(NumericsError::BackwardTwice);
        }
        let (lr, lc) = self.shape(loss);
        if lr != 1 || lc != 1 {
            return Err(NumericsError::NonScalarLoss { rows: lr, cols: lc });
        }
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].tracked {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            self.apply_adjoint(id, &g);
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    fn apply_adjoint(&mut self, id: usize, g: &[T]) {
        // Ops are moved out so gradient buffers can be borrowed mutably;
        // each op is visited exactly once, so the swap is never observed.
        let op = std::mem::replace(&mut self.ops[id], Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = self.shape(*a);
                let (_, n) = self.shape(*b);
                if self.nodes[a.0].tracked {
                    let bv = self.nodes[b.0].data.clone();
                    let da = self.grad_buf(*a);
                    mm_nt(g, &bv, m, n, k, da);
                }
                if self.nodes[b.0].tracked {
                    let av = self.nodes[a.0].data.clone();
                    let db = self.grad_buf(*b);
                    mm_tn(&av, g, m, k, n, db);
                }
            }
            Op::MatMulNT { a, b } => {
                let (m, k) = self.shape(*a);
                let (n, _) = self.shape(*b);
                if self.nodes[a.0].tracked {
                    let bv = self.nodes[b.0].data.clone();
                    let da = self.grad_buf(*a);
                    mm_nn(g, &bv, m, n, k, da);
                }
                if self.nodes[b.0].tracked {
                    let av = self.nodes[a.0].data.clone();
                    let db = self.grad_buf(*b);
                    mm_tn(g, &av, m, n, k, db);
                }
            }
            Op::Add { a, b } => {
                if self.nodes[a.0].tracked {
                    axpy(T::one(), g, self.grad_buf(*a));
                }
                if self.nodes[b.0].tracked {
                    axpy(T::one(), g, self.grad_buf(*b));
                }
            }
            Op::Sub { a, b } => {
                if self.nodes[a.0].tracked {
                    axpy(T::one(), g, self.grad_buf(*a));
                }
                if self.nodes[b.0].tracked {
                    axpy(-T::one(), g, self.grad_buf(*b));
                }
            }
            Op::Mul { a, b } => {
                if self.nodes[a.0].tracked {
                    let bv = self.nodes[b.0].data.clone();
                    let da = self.grad_buf(*a);
                    for i in 0..g.len() {
                        da[i] += g[i] * bv[i];
                    }
                }
                if self.nodes[b.0].tracked {
                    let av = self.nodes[a.0].data.clone();
                    let db = self.grad_buf(*b);
                    for i in 0..g.len() {
                        db[i] += g[i] * av[i];
                    }
                }
            }
            Op::AddBias { a, bias } => {
                let (m, n) = self.shape(*a);
                if self.nodes[a.0].tracked {
                    axpy(T::one(), g, self.grad_buf(*a));
                }
                if self.nodes[bias.0].tracked {
                    let db = self.grad_buf(*bias);
                    for i in 0..m {
                        for j in 0..n {
                            db[j] += g[i * n + j];
                        }
                    }
                }
            }
            Op::Scale { a, c } => {
                if self.nodes[a.0].tracked {
                    axpy(*c, g, self.grad_buf(*a));
                }
            }
            Op::AddScalar { a } => {
                if self.nodes[a.0].tracked {
                    axpy(T::one(), g, self.grad_buf(*a));
                }
            }
            Op::Sigmoid { a } => {
                if self.nodes[a.0].tracked {
                    let y = self.nodes[id].data.clone();
                    let da = self.grad_buf(*a);
                    for i in 0..g.len() {
                        da[i] += g[i] * y[i] * (T::one() - y[i]);
                    }
                }
            }
            Op::Tanh { a } => {
                if self.nodes[a.0].tracked {
                    let y = self.nodes[id].data.clone();
                    let da = self.grad_buf(*a);
                    for i in 0..g.len() {
                        da[i] += g[i] * (T::one() - y[i] * y[i]);
                    }
                }
            }
            Op::Relu { a } => {
                if self.nodes[a.0].tracked {
                    let x = self.nodes[a.0].data.clone();
                    let da = self.grad_buf(*a);
                    for i in 0..g.len() {
                        if x[i] > T::zero() {
                            da[i] += g[i];
                        }
                    }
                }
            }
            Op::Softplus { a } => {
                if self.nodes[a.0].tracked {
                    let x = self.nodes[a.0].data.clone();
                    let da = self.grad_buf(*a);
                    for i in 0..g.len() {
                        da[i] += g[i] * sigmoid(x[i]);
                    }
                }
            }
            Op::Exp { a } => {
                if self.nodes[a.0].tracked {
                    let y = self.nodes[id].data.clone();
                    let da = self.grad_buf(*a);
                    for i in 0..g.len() {
                        da[i] += g[i] * y[i];
                    }
                }
            }
            Op::Log { a } => {
                if self.nodes[a.0].tracked {
                    let x = self.nodes[a.0].data.clone();
                    let da = self.grad_buf(*a);
                    for i in 0..g.len() {
                        da[i] += g[i] / x[i];
                    }
                }
            }
            Op::SoftmaxRows { a } => {
                if self.nodes[a.0].tracked {
                    let (m, n) = self.shape(*a);
                    let y = self.nodes[id].data.clone();
                    let da = self.grad_buf(*a);
                    for i in 0..m {
                        let yr = &y[i * n..(i + 1) * n];
                        let gr = &g[i * n..(i + 1) * n];
                        let mut dot = T::zero();
                        for j in 0..n {
                            dot += gr[j] * yr[j];
                        }
                        let dr = &mut da[i * n..(i + 1) * n];
                        for j in 0..n {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmaxRows { a } => {
                if self.nodes[a.0].tracked {
                    let (m, n) = self.shape(*a);
                    let y = self.nodes[id].data.clone();
                    let da = self.grad_buf(*a);
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        let mut gsum = T::zero();
                        for j in 0..n {
                            gsum += gr[j];
                        }
                        let dr = &mut da[i * n..(i + 1) * n];
                        for j in 0..n {
                            dr[j] += gr[j] - y[i * n + j].exp() * gsum;
                        }
                    }
                }
            }
            Op::SumAll { a } => {
                if self.nodes[a.0].tracked {
                    let da = self.grad_buf(*a);
                    for v in da.iter_mut() {
                        *v += g[0];
                    }
                }
            }
            Op::SumRows { a } => {
                if self.nodes[a.0].tracked {
                    let (m, n) = self.shape(*a);
                    let da = self.grad_buf(*a);
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] += g[i];
                        }
                    }
                }
            }
            Op::SumCols { a } => {
                if self.nodes[a.0].tracked {
                    let (m, n) = self.shape(*a);
                    let da = self.grad_buf(*a);
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] += g[j];
                        }
                    }
                }
            }
            Op::ConcatRows { parts } => {
                let mut row = 0;
                for &p in parts {
                    let (pm, pn) = self.shape(p);
                    if self.nodes[p.0].tracked {
                        let dp = self.grad_buf(p);
                        axpy(T::one(), &g[row * pn..(row + pm) * pn], dp);
                    }
                    row += pm;
                }
            }
            Op::ConcatCols { parts } => {
                let (m, n) = {
                    let node = &self.nodes[id];
                    (node.rows, node.cols)
                };
                let mut col = 0;
                for &p in parts {
                    let (_, pn) = self.shape(p);
                    if self.nodes[p.0].tracked {
                        let dp = self.grad_buf(p);
                        for i in 0..m {
                            for j in 0..pn {
                                dp[i * pn + j] += g[i * n + col + j];
                            }
                        }
                    }
                    col += pn;
                }
            }
            Op::SliceRows { a, from } => {
                if self.nodes[a.0].tracked {
                    let (_, n) = self.shape(*a);
                    let da = self.grad_buf(*a);
                    axpy(T::one(), g, &mut da[from * n..from * n + g.len()]);
                }
            }
            Op::SliceCols { a, from } => {
                if self.nodes[a.0].tracked {
                    let (m, n) = self.shape(*a);
                    let count = g.len() / m;
                    let da = self.grad_buf(*a);
                    for i in 0..m {
                        for j in 0..count {
                            da[i * n + from + j] += g[i * count + j];
                        }
                    }
                }
            }
            Op::GatherRows { a, ids } => {
                if self.nodes[a.0].tracked {
                    let (_, n) = self.shape(*a);
                    let da = self.grad_buf(*a);
                    for (i, &id) in ids.iter().enumerate() {
                        axpy(T::one(), &g[i * n..(i + 1) * n], &mut da[id * n..(id + 1) * n]);
                    }
                }
            }
            Op::GatherPerRow { a, ids } => {
                if self.nodes[a.0].tracked {
                    let (_, n) = self.shape(*a);
                    let da = self.grad_buf(*a);
                    for (i, &id) in ids.iter().enumerate() {
                        da[i * n + id] += g[i];
                    }
                }
            }
            Op::RepeatRows { a, times } => {
                if self.nodes[a.0].tracked {
                    let (m, n) = self.shape(*a);
                    let da = self.grad_buf(*a);
                    for i in 0..m {
                        for r in 0..*times {
                            let gr = &g[(i * times + r) * n..(i * times + r + 1) * n];
                            axpy(T::one(), gr, &mut da[i * n..(i + 1) * n]);
                        }
                    }
                }
            }
            Op::LayerNorm { a, gain, bias, mean, inv_std } => {
                let (m, n) = self.shape(*a);
                let nf = T::from_f64(n as f64);
                let av = self.nodes[a.0].data.clone();
                let gv = self.nodes[gain.0].data.clone();
                if self.nodes[gain.0].tracked || self.nodes[bias.0].tracked {
                    let mut dgain = vec![T::zero(); n];
                    let mut dbias = vec![T::zero(); n];
                    for i in 0..m {
                        for j in 0..n {
                            let xhat = (av[i * n + j] - mean[i]) * inv_std[i];
                            dgain[j] += g[i * n + j] * xhat;
                            dbias[j] += g[i * n + j];
                        }
                    }
                    if self.nodes[gain.0].tracked {
                        axpy(T::one(), &dgain, self.grad_buf(*gain));
                    }
                    if self.nodes[bias.0].tracked {
                        axpy(T::one(), &dbias, self.grad_buf(*bias));
                    }
                }
                if self.nodes[a.0].tracked {
                    let da = self.grad_buf(*a);
                    for i in 0..m {
                        // dxhat = g * gain; dx = inv_std * (dxhat - mean(dxhat)
                        //         - xhat * mean(dxhat * xhat))
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..n {
                            let xhat = (av[i * n + j] - mean[i]) * inv_std[i];
                            let dxh = g[i * n + j] * gv[j];
                            s1 += dxh;
                            s2 += dxh * xhat;
                        }
                        s1 = s1 / nf;
                        s2 = s2 / nf;
                        for j in 0..n {
                            let xhat = (av[i * n + j] - mean[i]) * inv_std[i];
                            let dxh = g[i * n + j] * gv[j];
                            da[i * n + j] += inv_std[i] * (dxh - s1 - xhat * s2);
                        }
                    }
                }
            }
        }
        self.ops[id] = op;
    }

    // ---- internals ----

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> NumericsError {
        let (lr, lc) = self.shape(a);
        let (rr, rc) = self.shape(b);
        NumericsError::ShapeMismatch {
            op,
            lrows: lr,
            lcols: lc,
            rrows: rr,
            rcols: rc,
        }
    }

    fn zip(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        make: impl Fn(Var, Var) -> Op<T>,
    ) -> Result<Var, NumericsError> {
        let (m, n) = self.shape(a);
        if self.shape(b) != (m, n) {
            return Err(self.shape_err(op_name, a, b));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push_op(m, n, out, make(a, b), &[a, b]))
    }

    fn push_op(&mut self, rows: usize, cols: usize, data: Vec<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|&v| self.nodes[v.0].tracked);
        self.push(rows, cols, data, op, tracked)
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<T>, op: Op<T>, tracked: bool) -> Var {
        debug_assert_eq!(data.len(), rows * cols);
        self.nodes.push(Node { rows, cols, data, tracked });
        self.ops.push(op);
        Var(self.nodes.len() - 1)
    }

    fn grad_buf(&mut self, v: Var) -> &mut [T] {
        let len = self.nodes[v.0].data.len();
        self.grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
    }
}

fn axpy<T: Real>(c: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for i in 0..x.len() {
        y[i] += c * x[i];
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        (T::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn softmax_row<T: Real>(x: &[T], out: &mut [T]) {
    let mut mx = x[0];
    for &v in x {
        mx = mx.max(v);
    }
    let mut sum = T::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        let e = (v - mx).exp();
        *o = e;
        sum += e;
    }
    let inv = sum.recip();
    for o in out.iter_mut() {
        *o = *o * inv;
    }
}

fn log_softmax_row<T: Real>(x: &[T], out: &mut [T]) {
    let mut mx = x[0];
    for &v in x {
        mx = mx.max(v);
    }
    let mut sum = T::zero();
    for &v in x {
        sum += (v - mx).exp();
    }
    let lse = mx + sum.ln();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v - lse;
    }
}

// out[m x n] += a[m x k] * b[k x n]
fn mm_nn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &apv) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += apv * brow[j];
            }
        }
    }
}

// out[m x n] += a[m x k] * transpose(b), b stored [n x k]
fn mm_nt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            orow[j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

// out[k x n] += transpose(a) * b, a stored [m x k], b [m x n]
fn mm_tn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let apv = a[i * k + p];
            let orow = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += apv * brow[j];
            }
        }
    }
}

// Four accumulators break the dependency chain; order is fixed, so results
// stay deterministic across runs.
fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    let n = x.len();
    let mut s0 = T::zero();
    let mut s1 = T::zero();
    let mut s2 = T::zero();
    let mut s3 = T::zero();
    let mut i = 0;
    while i + 4 <= n {
        s0 += x[i] * y[i];
        s1 += x[i + 1] * y[i + 1];
        s2 += x[i + 2] * y[i + 2];
        s3 += x[i + 3] * y[i + 3];
        i += 4;
    }
    let mut s = (s0 + s1) + (s2 + s3);
    while i < n {
        s += x[i] * y[i];
        i += 1;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf64(tape: &mut Tape<f64>, rows: usize, cols: usize, data: &[f64]) -> Var {
        tape.leaf(rows, cols, data.to_vec(), true).unwrap()
    }

    #[test]
    fn matmul_matches_hand_product() {
        let mut tape = Tape::<f64>::new();
        // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
        let a = leaf64(&mut tape, 2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = leaf64(&mut tape, 2, 2, &[5.0, 6.0, 7.0, 8.0]);
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_nt_agrees_with_explicit_transpose() {
        let mut tape = Tape::<f64>::new();
        let a = leaf64(&mut tape, 2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        // b is 2x3; a * transpose(b) is 2x2
        let b = leaf64(&mut tape, 2, 3, &[1.0, 0.0, 1.0, 0.5, 0.5, 0.5]);
        let c = tape.matmul_nt(a, b).unwrap();
        assert_eq!(tape.value(c), &[4.0, 3.0, 10.0, 7.5]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let mut tape = Tape::<f32>::new();
        let a = tape.leaf(2, 3, vec![0.0; 6], false).unwrap();
        let b = tape.leaf(2, 2, vec![0.0; 4], false).unwrap();
        let err = tape.matmul(a, b).unwrap_err();
        assert!(matches!(
            err,
            NumericsError::ShapeMismatch { op: "matmul", lcols: 3, rrows: 2, .. }
        ));
    }

    #[test]
    fn matmul_backward_matches_hand_gradient() {
        // loss = sum(a * b) with a = [1 2; 3 4], b = [5 6; 7 8].
        // d loss / d a = ones * transpose(b) = [11 15; 11 15]
        // d loss / d b = transpose(a) * ones = [4 4; 6 6]
        let mut tape = Tape::<f64>::new();
        let a = leaf64(&mut tape, 2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = leaf64(&mut tape, 2, 2, &[5.0, 6.0, 7.0, 8.0]);
        let c = tape.matmul(a, b).unwrap();
        let loss = tape.sum_all(c);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[11.0, 15.0, 11.0, 15.0]);
        assert_eq!(tape.grad(b).unwrap(), &[4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_keep_order() {
        let mut tape = Tape::<f64>::new();
        let a = leaf64(&mut tape, 2, 3, &[1.0, 2.0, 3.0, -5.0, 0.0, 5.0]);
        let p = tape.softmax_rows(a);
        let v = tape.value(p);
        for i in 0..2 {
            let s: f64 = v[i * 3..(i + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(v[0] < v[1] && v[1] < v[2]);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let mut tape = Tape::<f32>::new();
        let a = tape.leaf(1, 3, vec![1000.0, 1001.0, 999.0], false).unwrap();
        let p = tape.softmax_rows(a);
        let v = tape.value(p);
        assert!(v.iter().all(|x| x.is_finite()));
        assert!((v.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn log_softmax_is_log_of_softmax() {
        let mut tape = Tape::<f64>::new();
        let a = leaf64(&mut tape, 1, 4, &[0.3, -1.2, 2.0, 0.0]);
        let p = tape.softmax_rows(a);
        let lp = tape.log_softmax_rows(a);
        for (x, y) in tape.value(p).iter().zip(tape.value(lp)) {
            assert!((x.ln() - y).abs() < 1e-12);
        }
    }

    #[test]
    fn log_rejects_nonpositive_input() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(1, 2, vec![1.0, 0.0], false).unwrap();
        let err = tape.log(a).unwrap_err();
        assert!(matches!(err, NumericsError::Domain { op: "log", .. }));
    }

    #[test]
    fn exp_rejects_overflow() {
        let mut tape = Tape::<f32>::new();
        let a = tape.leaf(1, 1, vec![200.0], false).unwrap();
        let err = tape.exp(a).unwrap_err();
        assert!(matches!(err, NumericsError::Domain { op: "exp", .. }));
    }

    #[test]
    fn backward_runs_once_only() {
        let mut tape = Tape::<f64>::new();
        let a = leaf64(&mut tape, 1, 2, &[1.0, 2.0]);
        let loss = tape.sum_all(a);
        tape.backward(loss).unwrap();
        let err = tape.backward(loss).unwrap_err();
        assert!(matches!(err, NumericsError::BackwardTwice));
    }

    #[test]
    fn backward_rejects_non_scalar_target() {
        let mut tape = Tape::<f64>::new();
        let a = leaf64(&mut tape, 1, 2, &[1.0, 2.0]);
        let err = tape.backward(a).unwrap_err();
        assert!(matches!(err, NumericsError::NonScalarLoss { rows: 1, cols: 2 }));
    }

    #[test]
    fn untracked_subgraph_gets_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = leaf64(&mut tape, 1, 2, &[1.0, 2.0]);
        let mask = tape.constant(1, 2, vec![1.0, 0.0]).unwrap();
        let masked = tape.mul(a, mask).unwrap();
        let loss = tape.sum_all(masked);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[1.0, 0.0]);
        assert!(tape.grad(mask).is_none());
    }

    #[test]
    fn gather_rows_accumulates_duplicate_ids() {
        let mut tape = Tape::<f64>::new();
        let a = leaf64(&mut tape, 2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let g = tape.gather_rows(a, &[0, 0, 1]).unwrap();
        let loss = tape.sum_all(g);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[2.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn gather_rows_rejects_out_of_range_id() {
        let mut tape = Tape::<f64>::new();
        let a = leaf64(&mut tape, 2, 2, &[0.0; 4]);
        let err = tape.gather_rows(a, &[2]).unwrap_err();
        assert!(matches!(
            err,
            NumericsError::IndexOutOfRange { op: "gather_rows", index: 2, limit: 2 }
        ));
    }

    #[test]
    fn concat_and_slice_are_inverse() {
        let mut tape = Tape::<f64>::new();
        let a = leaf64(&mut tape, 1, 2, &[1.0, 2.0]);
        let b = leaf64(&mut tape, 1, 2, &[3.0, 4.0]);
        let cat = tape.concat_rows(&[a, b]).unwrap();
        let back = tape.slice_rows(cat, 1, 1).unwrap();
        assert_eq!(tape.value(back), &[3.0, 4.0]);

        let catc = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.value(catc), &[1.0, 2.0, 3.0, 4.0]);
        let backc = tape.slice_cols(catc, 2, 2).unwrap();
        assert_eq!(tape.value(backc), &[3.0, 4.0]);
    }

    #[test]
    fn repeat_rows_layout_and_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = leaf64(&mut tape, 2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let r = tape.repeat_rows(a, 3);
        assert_eq!(tape.shape(r), (6, 2));
        assert_eq!(&tape.value(r)[0..6], &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let loss = tape.sum_all(r);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[3.0; 4]);
    }

    #[test]
    fn layer_norm_rows_have_zero_mean_unit_variance() {
        let mut tape = Tape::<f64>::new();
        let a = leaf64(&mut tape, 2, 4, &[1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 2.0, 7.0]);
        let gain = tape.constant(1, 4, vec![1.0; 4]).unwrap();
        let bias = tape.constant(1, 4, vec![0.0; 4]).unwrap();
        let y = tape.layer_norm(a, gain, bias, 1e-9).unwrap();
        let v = tape.value(y);
        for i in 0..2 {
            let row = &v[i * 4..(i + 1) * 4];
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gather_per_row_picks_and_routes() {
        let mut tape = Tape::<f64>::new();
        let a = leaf64(&mut tape, 2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let picked = tape.gather_per_row(a, &[2, 0]).unwrap();
        assert_eq!(tape.value(picked), &[3.0, 4.0]);
        let loss = tape.sum_all(picked);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn sum_axis_directions() {
        let mut tape = Tape::<f64>::new();
        let a = leaf64(&mut tape, 2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let cols = tape.sum_axis(a, 0).unwrap();
        assert_eq!(tape.shape(cols), (1, 3));
        assert_eq!(tape.value(cols), &[5.0, 7.0, 9.0]);
        let rows = tape.sum_axis(a, 1).unwrap();
        assert_eq!(tape.shape(rows), (2, 1));
        assert_eq!(tape.value(rows), &[6.0, 15.0]);
    }
}
