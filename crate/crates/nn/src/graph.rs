//! Flat-tape computation graph. Values are computed eagerly as nodes are
//! appended; `backward` sweeps the tape once in reverse creation order,
//! which visits every node exactly once and needs no explicit topological
//! sort because inputs always precede their consumers.

use crate::{NnError, Real};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(u32);

impl Var {
    #[inline]
    fn idx(self) -> usize {
        self.0 as usize
    }
}

/// Every value on the tape is a row-major matrix; scalars are `1x1` and
/// row vectors `1xn`.
enum Op<F> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `x + s`, `s` scalar-shaped.
    AddScalar(Var, Var),
    /// `x - s`, `s` scalar-shaped.
    SubScalar(Var, Var),
    /// `x * s`, `s` scalar-shaped.
    MulScalar(Var, Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Square(Var),
    /// `x * c` for a compile-time constant.
    Scale(Var, F),
    /// `x + c` elementwise.
    AddConst(Var, F),
    /// Per-column affine `y[r][j] = x[r][j] * aux[j] + aux[cols + j]`.
    AffineCols(Var),
    MatMul(Var, Var),
    Transpose(Var),
    /// `[r,c] + [1,c]` with the row broadcast down.
    AddRow(Var, Var),
    SumAll(Var),
    MeanAll(Var),
    /// Row-wise `log sum exp`, `[r,c] -> [r,1]`, stabilised by the row max.
    LogSumExpRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    /// Rows starting at the recorded offset of the input.
    SliceRows(Var, usize),
    /// Columns starting at the recorded offset of the input.
    SliceCols(Var, usize),
}

struct Node<F> {
    rows: usize,
    cols: usize,
    value: Vec<F>,
    grad: Vec<F>,
    op: Op<F>,
    /// Constant payload for ops that carry one (per-column affine).
    aux: Vec<F>,
}

/// Append-only reverse-mode tape.
pub struct Graph<F: Real> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Graph { nodes: Vec::with_capacity(nodes) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.idx()];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.idx()].value
    }

    /// Gradient of the most recent `backward` root with respect to `v`.
    pub fn grad(&self, v: Var) -> &[F] {
        &self.nodes[v.idx()].grad
    }

    /// Value of a scalar-shaped node.
    pub fn scalar_value(&self, v: Var) -> F {
        debug_assert_eq!(self.nodes[v.idx()].value.len(), 1);
        self.nodes[v.idx()].value[0]
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<F>, op: Op<F>, aux: Vec<F>) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            rows,
            cols,
            grad: vec![F::zero(); value.len()],
            value,
            op,
            aux,
        });
        Var(id)
    }

    pub fn leaf(&mut self, rows: usize, cols: usize, value: Vec<F>) -> Result<Var, NnError> {
        if rows == 0 || cols == 0 || value.len() != rows * cols {
            return Err(NnError::BadShape { op: "leaf", shape: (rows, cols) });
        }
        Ok(self.push(rows, cols, value, Op::Leaf, Vec::new()))
    }

    pub fn leaf_slice(&mut self, rows: usize, cols: usize, value: &[F]) -> Result<Var, NnError> {
        self.leaf(rows, cols, value.to_vec())
    }

    pub fn scalar(&mut self, v: F) -> Var {
        self.push(1, 1, vec![v], Op::Leaf, Vec::new())
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Result<Var, NnError> {
        self.leaf(rows, cols, vec![F::zero(); rows * cols])
    }

    fn binary_same_shape(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
    ) -> Result<(usize, usize), NnError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if (ar, ac) != (br, bc) {
            return Err(NnError::DimMismatch { op: op_name, lhs: (ar, ac), rhs: (br, bc) });
        }
        Ok((ar, ac))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (r, c) = self.binary_same_shape("add", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(r, c, v, Op::Add(a, b), Vec::new()))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (r, c) = self.binary_same_shape("sub", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(r, c, v, Op::Sub(a, b), Vec::new()))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (r, c) = self.binary_same_shape("mul", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(r, c, v, Op::Mul(a, b), Vec::new()))
    }

    fn scalar_operand(&self, op: &'static str, s: Var) -> Result<F, NnError> {
        let (r, c) = self.shape(s);
        if (r, c) != (1, 1) {
            return Err(NnError::BadShape { op, shape: (r, c) });
        }
        Ok(self.nodes[s.idx()].value[0])
    }

    pub fn add_scalar(&mut self, x: Var, s: Var) -> Result<Var, NnError> {
        let sv = self.scalar_operand("add_scalar", s)?;
        let (r, c) = self.shape(x);
        let v = self.value(x).iter().map(|&a| a + sv).collect();
        Ok(self.push(r, c, v, Op::AddScalar(x, s), Vec::new()))
    }

    pub fn sub_scalar(&mut self, x: Var, s: Var) -> Result<Var, NnError> {
        let sv = self.scalar_operand("sub_scalar", s)?;
        let (r, c) = self.shape(x);
        let v = self.value(x).iter().map(|&a| a - sv).collect();
        Ok(self.push(r, c, v, Op::SubScalar(x, s), Vec::new()))
    }

    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var, NnError> {
        let sv = self.scalar_operand("mul_scalar", s)?;
        let (r, c) = self.shape(x);
        let v = self.value(x).iter().map(|&a| a * sv).collect();
        Ok(self.push(r, c, v, Op::MulScalar(x, s), Vec::new()))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let v = self.value(x).iter().map(|&a| if a > F::zero() { a } else { F::zero() }).collect();
        self.push(r, c, v, Op::Relu(x), Vec::new())
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let v = self.value(x).iter().map(|a| a.tanh()).collect();
        self.push(r, c, v, Op::Tanh(x), Vec::new())
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let one = F::one();
        let v = self.value(x).iter().map(|&a| one / (one + (-a).exp())).collect();
        self.push(r, c, v, Op::Sigmoid(x), Vec::new())
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let v = self.value(x).iter().map(|a| a.exp()).collect();
        self.push(r, c, v, Op::Exp(x), Vec::new())
    }

    pub fn square(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let v = self.value(x).iter().map(|&a| a * a).collect();
        self.push(r, c, v, Op::Square(x), Vec::new())
    }

    pub fn scale(&mut self, x: Var, c: F) -> Var {
        let (r, cl) = self.shape(x);
        let v = self.value(x).iter().map(|&a| a * c).collect();
        self.push(r, cl, v, Op::Scale(x, c), Vec::new())
    }

    pub fn add_const(&mut self, x: Var, c: F) -> Var {
        let (r, cl) = self.shape(x);
        let v = self.value(x).iter().map(|&a| a + c).collect();
        self.push(r, cl, v, Op::AddConst(x, c), Vec::new())
    }

    /// Per-column affine map `y = x * scale + shift`; `scale` and `shift`
    /// must have one entry per column of `x`.
    pub fn affine_cols(&mut self, x: Var, scale: &[F], shift: &[F]) -> Result<Var, NnError> {
        let (r, c) = self.shape(x);
        if scale.len() != c || shift.len() != c {
            return Err(NnError::DimMismatch {
                op: "affine_cols",
                lhs: (r, c),
                rhs: (scale.len(), shift.len()),
            });
        }
        let xv = self.value(x);
        let mut v = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                v[i * c + j] = xv[i * c + j] * scale[j] + shift[j];
            }
        }
        let mut aux = scale.to_vec();
        aux.extend_from_slice(shift);
        Ok(self.push(r, c, v, Op::AffineCols(x), aux))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (m, n) = self.shape(a);
        let (n2, p) = self.shape(b);
        if n != n2 {
            return Err(NnError::DimMismatch { op: "matmul", lhs: (m, n), rhs: (n2, p) });
        }
        let mut v = vec![F::zero(); m * p];
        matmul_into(self.value(a), self.value(b), &mut v, m, n, p);
        Ok(self.push(m, p, v, Op::MatMul(a, b), Vec::new()))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let xv = self.value(x);
        let mut v = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                v[j * r + i] = xv[i * c + j];
            }
        }
        self.push(c, r, v, Op::Transpose(x), Vec::new())
    }

    /// `x + row` where `row` is `1xc` and `x` is `rxc`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, NnError> {
        let (r, c) = self.shape(x);
        let (rr, rc) = self.shape(row);
        if rr != 1 || rc != c {
            return Err(NnError::DimMismatch { op: "add_row", lhs: (r, c), rhs: (rr, rc) });
        }
        let xv = self.value(x);
        let rv = self.value(row);
        let mut v = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                v[i * c + j] = xv[i * c + j] + rv[j];
            }
        }
        Ok(self.push(r, c, v, Op::AddRow(x, row), Vec::new()))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let mut acc = F::zero();
        for &a in self.value(x) {
            acc += a;
        }
        self.push(1, 1, vec![acc], Op::SumAll(x), Vec::new())
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let mut acc = F::zero();
        for &a in self.value(x) {
            acc += a;
        }
        let v = acc / F::from_f64(n as f64);
        self.push(1, 1, vec![v], Op::MeanAll(x), Vec::new())
    }

    pub fn logsumexp_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let xv = self.value(x);
        let mut v = vec![F::zero(); r];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            v[i] = logsumexp(row);
        }
        self.push(r, 1, v, Op::LogSumExpRows(x), Vec::new())
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        if parts.is_empty() {
            return Err(NnError::Contract("concat_rows of zero parts".into()));
        }
        let (_, c) = self.shape(parts[0]);
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pc != c {
                return Err(NnError::DimMismatch {
                    op: "concat_rows",
                    lhs: (rows, c),
                    rhs: (pr, pc),
                });
            }
            rows += pr;
        }
        let mut v = Vec::with_capacity(rows * c);
        for &p in parts {
            v.extend_from_slice(self.value(p));
        }
        Ok(self.push(rows, c, v, Op::ConcatRows(parts.to_vec()), Vec::new()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        if parts.is_empty() {
            return Err(NnError::Contract("concat_cols of zero parts".into()));
        }
        let (r, _) = self.shape(parts[0]);
        let mut cols = 0;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pr != r {
                return Err(NnError::DimMismatch {
                    op: "concat_cols",
                    lhs: (r, cols),
                    rhs: (pr, pc),
                });
            }
            cols += pc;
        }
        let mut v = vec![F::zero(); r * cols];
        let mut at = 0;
        for &p in parts {
            let (_, pc) = self.shape(p);
            let pv = self.value(p);
            for i in 0..r {
                v[i * cols + at..i * cols + at + pc].copy_from_slice(&pv[i * pc..(i + 1) * pc]);
            }
            at += pc;
        }
        Ok(self.push(r, cols, v, Op::ConcatCols(parts.to_vec()), Vec::new()))
    }

    pub fn slice_rows(&mut self, x: Var, r0: usize, r1: usize) -> Result<Var, NnError> {
        let (r, c) = self.shape(x);
        if r0 >= r1 || r1 > r {
            return Err(NnError::BadShape { op: "slice_rows", shape: (r0, r1) });
        }
        let v = self.value(x)[r0 * c..r1 * c].to_vec();
        Ok(self.push(r1 - r0, c, v, Op::SliceRows(x, r0), Vec::new()))
    }

    pub fn slice_cols(&mut self, x: Var, c0: usize, c1: usize) -> Result<Var, NnError> {
        let (r, c) = self.shape(x);
        if c0 >= c1 || c1 > c {
            return Err(NnError::BadShape { op: "slice_cols", shape: (c0, c1) });
        }
        let w = c1 - c0;
        let xv = self.value(x);
        let mut v = vec![F::zero(); r * w];
        for i in 0..r {
            v[i * w..(i + 1) * w].copy_from_slice(&xv[i * c + c0..i * c + c1]);
        }
        Ok(self.push(r, w, v, Op::SliceCols(x, c0), Vec::new()))
    }

    /// Reverse sweep from a scalar root. Gradients accumulate into every
    /// node's `grad` buffer, so leaves bound from parameters can be read
    /// out afterwards.
    pub fn backward(&mut self, root: Var) -> Result<(), NnError> {
        let (r, c) = self.shape(root);
        if (r, c) != (1, 1) {
            return Err(NnError::NonScalarRoot { rows: r, cols: c });
        }
        self.nodes[root.idx()].grad[0] = self.nodes[root.idx()].grad[0] + F::one();
        for i in (0..=root.idx()).rev() {
            let (head, tail) = self.nodes.split_at_mut(i);
            let node = &tail[0];
            match node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    axpy(&mut head[a.idx()].grad, &node.grad, F::one());
                    axpy(&mut head[b.idx()].grad, &node.grad, F::one());
                }
                Op::Sub(a, b) => {
                    axpy(&mut head[a.idx()].grad, &node.grad, F::one());
                    axpy(&mut head[b.idx()].grad, &node.grad, -F::one());
                }
                Op::Mul(a, b) => {
                    if a == b {
                        let n = head[a.idx()].grad.len();
                        for k in 0..n {
                            let x = head[a.idx()].value[k];
                            head[a.idx()].grad[k] += (x + x) * node.grad[k];
                        }
                    } else {
                        let (lo, hi) = if a.idx() < b.idx() { (a, b) } else { (b, a) };
                        let (h2, t2) = head.split_at_mut(hi.idx());
                        let hi_node = &mut t2[0];
                        let lo_node = &mut h2[lo.idx()];
                        for k in 0..node.grad.len() {
                            lo_node.grad[k] += hi_node.value[k] * node.grad[k];
                            hi_node.grad[k] += lo_node.value[k] * node.grad[k];
                        }
                    }
                }
                Op::AddScalar(x, s) => {
                    axpy(&mut head[x.idx()].grad, &node.grad, F::one());
                    let mut acc = F::zero();
                    for &g in &node.grad {
                        acc += g;
                    }
                    head[s.idx()].grad[0] += acc;
                }
                Op::SubScalar(x, s) => {
                    axpy(&mut head[x.idx()].grad, &node.grad, F::one());
                    let mut acc = F::zero();
                    for &g in &node.grad {
                        acc += g;
                    }
                    head[s.idx()].grad[0] -= acc;
                }
                Op::MulScalar(x, s) => {
                    let sv = head[s.idx()].value[0];
                    let mut acc = F::zero();
                    for k in 0..node.grad.len() {
                        acc += node.grad[k] * head[x.idx()].value[k];
                        head[x.idx()].grad[k] += node.grad[k] * sv;
                    }
                    head[s.idx()].grad[0] += acc;
                }
                Op::Relu(x) => {
                    let xn = &mut head[x.idx()];
                    for k in 0..node.grad.len() {
                        if node.value[k] > F::zero() {
                            xn.grad[k] += node.grad[k];
                        }
                    }
                }
                Op::Tanh(x) => {
                    let xn = &mut head[x.idx()];
                    let one = F::one();
                    for k in 0..node.grad.len() {
                        let t = node.value[k];
                        xn.grad[k] += node.grad[k] * (one - t * t);
                    }
                }
                Op::Sigmoid(x) => {
                    let xn = &mut head[x.idx()];
                    let one = F::one();
                    for k in 0..node.grad.len() {
                        let s = node.value[k];
                        xn.grad[k] += node.grad[k] * s * (one - s);
                    }
                }
                Op::Exp(x) => {
                    let xn = &mut head[x.idx()];
                    for k in 0..node.grad.len() {
                        xn.grad[k] += node.grad[k] * node.value[k];
                    }
                }
                Op::Square(x) => {
                    let xn = &mut head[x.idx()];
                    let two = F::from_f64(2.0);
                    for k in 0..node.grad.len() {
                        xn.grad[k] += node.grad[k] * two * xn.value[k];
                    }
                }
                Op::Scale(x, c) => {
                    axpy(&mut head[x.idx()].grad, &node.grad, c);
                }
                Op::AddConst(x, _) => {
                    axpy(&mut head[x.idx()].grad, &node.grad, F::one());
                }
                Op::AffineCols(x) => {
                    let cols = node.cols;
                    let xn = &mut head[x.idx()];
                    for i in 0..node.rows {
                        for j in 0..cols {
                            xn.grad[i * cols + j] += node.grad[i * cols + j] * node.aux[j];
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let m = node.rows;
                    let p = node.cols;
                    let n = head[a.idx()].cols;
                    if a == b {
                        // y = x . x with x square: dx = g . x^T + x^T . g
                        let xa = head[a.idx()].value.clone();
                        let xn = &mut head[a.idx()];
                        matmul_bt_into(&node.grad, &xa, &mut xn.grad, m, p, n);
                        matmul_at_into(&xa, &node.grad, &mut xn.grad, m, n, p);
                    } else {
                        let (lo, hi, a_first) = if a.idx() < b.idx() {
                            (a, b, true)
                        } else {
                            (b, a, false)
                        };
                        let (h2, t2) = head.split_at_mut(hi.idx());
                        let hi_node = &mut t2[0];
                        let lo_node = &mut h2[lo.idx()];
                        let (an, bn) = if a_first { (lo_node, hi_node) } else { (hi_node, lo_node) };
                        // dA += dY . B^T ; dB += A^T . dY
                        matmul_bt_into(&node.grad, &bn.value, &mut an.grad, m, p, n);
                        matmul_at_into(&an.value, &node.grad, &mut bn.grad, m, n, p);
                    }
                }
                Op::Transpose(x) => {
                    let xn = &mut head[x.idx()];
                    let (r, c) = (node.rows, node.cols);
                    for i in 0..r {
                        for j in 0..c {
                            xn.grad[j * r + i] += node.grad[i * c + j];
                        }
                    }
                }
                Op::AddRow(x, row) => {
                    axpy(&mut head[x.idx()].grad, &node.grad, F::one());
                    let c = node.cols;
                    let rn = &mut head[row.idx()];
                    for i in 0..node.rows {
                        for j in 0..c {
                            rn.grad[j] += node.grad[i * c + j];
                        }
                    }
                }
                Op::SumAll(x) => {
                    let g = node.grad[0];
                    for gk in head[x.idx()].grad.iter_mut() {
                        *gk += g;
                    }
                }
                Op::MeanAll(x) => {
                    let n = head[x.idx()].grad.len();
                    let g = node.grad[0] / F::from_f64(n as f64);
                    for gk in head[x.idx()].grad.iter_mut() {
                        *gk += g;
                    }
                }
                Op::LogSumExpRows(x) => {
                    let xn = &mut head[x.idx()];
                    let c = xn.cols;
                    for i in 0..node.rows {
                        let lse = node.value[i];
                        let g = node.grad[i];
                        if g == F::zero() {
                            continue;
                        }
                        for j in 0..c {
                            xn.grad[i * c + j] += g * (xn.value[i * c + j] - lse).exp();
                        }
                    }
                }
                Op::ConcatRows(ref parts) => {
                    let c = node.cols;
                    let mut at = 0;
                    for &p in parts {
                        let pn = &mut head[p.idx()];
                        let pr = pn.rows;
                        for k in 0..pr * c {
                            pn.grad[k] += node.grad[at * c + k];
                        }
                        at += pr;
                    }
                }
                Op::ConcatCols(ref parts) => {
                    let cols = node.cols;
                    let mut at = 0;
                    for &p in parts {
                        let pn = &mut head[p.idx()];
                        let pc = pn.cols;
                        for i in 0..node.rows {
                            for j in 0..pc {
                                pn.grad[i * pc + j] += node.grad[i * cols + at + j];
                            }
                        }
                        at += pc;
                    }
                }
                Op::SliceRows(x, r0) => {
                    let c = node.cols;
                    let xn = &mut head[x.idx()];
                    for k in 0..node.grad.len() {
                        xn.grad[r0 * c + k] += node.grad[k];
                    }
                }
                Op::SliceCols(x, c0) => {
                    let w = node.cols;
                    let xn = &mut head[x.idx()];
                    let c = xn.cols;
                    for i in 0..node.rows {
                        for j in 0..w {
                            xn.grad[i * c + c0 + j] += node.grad[i * w + j];
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn zip_map<F: Real>(a: &[F], b: &[F], f: impl Fn(F, F) -> F) -> Vec<F> {
    a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
}

fn axpy<F: Real>(dst: &mut [F], src: &[F], c: F) {
    for (d, &s) in dst.iter_mut().zip(src.iter()) {
        *d += s * c;
    }
}

/// `C += A . B` with `A: m x n`, `B: n x p`, row-major.
fn matmul_into<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, n: usize, p: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let crow = &mut c[i * p..(i + 1) * p];
        for (j, &aij) in arow.iter().enumerate() {
            if aij == F::zero() {
                continue;
            }
            let brow = &b[j * p..(j + 1) * p];
            for k in 0..p {
                crow[k] += aij * brow[k];
            }
        }
    }
}

/// `C += A . B^T` with `A: m x p`, `B: n x p`, so `C: m x n`.
fn matmul_bt_into<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, p: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * p..(i + 1) * p];
        for j in 0..n {
            let brow = &b[j * p..(j + 1) * p];
            let mut acc = F::zero();
            for k in 0..p {
                acc += arow[k] * brow[k];
            }
            c[i * n + j] += acc;
        }
    }
}

/// `C += A^T . B` with `A: m x n`, `B: m x p`, so `C: n x p`.
fn matmul_at_into<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, n: usize, p: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let brow = &b[i * p..(i + 1) * p];
        for (j, &aij) in arow.iter().enumerate() {
            if aij == F::zero() {
                continue;
            }
            let crow = &mut c[j * p..(j + 1) * p];
            for k in 0..p {
                crow[k] += aij * brow[k];
            }
        }
    }
}

/// Max-shifted `log sum exp` of a slice.
pub fn logsumexp<F: Real>(xs: &[F]) -> F {
    let mut m = F::neg_infinity();
    for &x in xs {
        if x > m {
            m = x;
        }
    }
    if m == F::neg_infinity() {
        return F::neg_infinity();
    }
    let mut acc = F::zero();
    for &x in xs {
        acc += (x - m).exp();
    }
    m + acc.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    type G = Graph<f64>;

    fn fd_scalar(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let eps = 1e-6;
        (f(x + eps) - f(x - eps)) / (2.0 * eps)
    }

    #[test]
    fn values_and_shapes() {
        let mut g = G::new();
        let a = g.leaf(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = g.leaf(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c), &[19.0, 22.0, 43.0, 50.0]);
        let t = g.transpose(a);
        assert_eq!(g.value(t), &[1.0, 3.0, 2.0, 4.0]);
        let s = g.sum_all(a);
        assert_eq!(g.scalar_value(s), 10.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut g = G::new();
        let a = g.leaf(2, 3, vec![0.0; 6]).unwrap();
        let b = g.leaf(2, 2, vec![0.0; 4]).unwrap();
        assert!(matches!(g.add(a, b), Err(NnError::DimMismatch { .. })));
        assert!(matches!(g.matmul(a, a), Err(NnError::DimMismatch { .. })));
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut g = G::new();
        let a = g.leaf(2, 2, vec![1.0; 4]).unwrap();
        assert!(matches!(g.backward(a), Err(NnError::NonScalarRoot { .. })));
    }

    #[test]
    fn reused_subexpression_accumulates() {
        // y = (x + x)^2, dy/dx = 8x
        let mut g = G::new();
        let x = g.scalar(1.5);
        let two_x = g.add(x, x).unwrap();
        let y = g.mul(two_x, two_x).unwrap();
        g.backward(y).unwrap();
        assert!((g.grad(x)[0] - 8.0 * 1.5).abs() < 1e-12);
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let base_a = vec![0.3, -1.2, 0.7, 2.0, -0.5, 0.1];
        let base_b = vec![1.1, 0.4, -0.2, 0.9, 0.6, -1.3];
        let eval = |av: &[f64], bv: &[f64]| {
            let mut g = G::new();
            let a = g.leaf(2, 3, av.to_vec()).unwrap();
            let b = g.leaf(3, 2, bv.to_vec()).unwrap();
            let c = g.matmul(a, b).unwrap();
            let sq = g.square(c);
            let l = g.sum_all(sq);
            g.scalar_value(l)
        };
        let mut g = G::new();
        let a = g.leaf(2, 3, base_a.clone()).unwrap();
        let b = g.leaf(3, 2, base_b.clone()).unwrap();
        let c = g.matmul(a, b).unwrap();
        let sq = g.square(c);
        let l = g.sum_all(sq);
        g.backward(l).unwrap();
        for i in 0..6 {
            let gi = g.grad(a)[i];
            let fd = fd_scalar(
                |x| {
                    let mut av = base_a.clone();
                    av[i] = x;
                    eval(&av, &base_b)
                },
                base_a[i],
            );
            assert!((gi - fd).abs() < 1e-5, "dA[{i}] = {gi} vs fd {fd}");
        }
        for i in 0..6 {
            let gi = g.grad(b)[i];
            let fd = fd_scalar(
                |x| {
                    let mut bv = base_b.clone();
                    bv[i] = x;
                    eval(&base_a, &bv)
                },
                base_b[i],
            );
            assert!((gi - fd).abs() < 1e-5, "dB[{i}] = {gi} vs fd {fd}");
        }
    }

    #[test]
    fn logsumexp_rows_gradient_is_softmax() {
        let mut g = G::new();
        let x = g.leaf(1, 3, vec![0.2, 1.4, -0.7]).unwrap();
        let l = g.logsumexp_rows(x);
        let root = g.sum_all(l);
        g.backward(root).unwrap();
        let lse = logsumexp(&[0.2, 1.4, -0.7]);
        for (k, &xk) in [0.2f64, 1.4, -0.7].iter().enumerate() {
            assert!((g.grad(x)[k] - (xk - lse).exp()).abs() < 1e-12);
        }
        let total: f64 = g.grad(x).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slice_and_concat_route_gradients() {
        let mut g = G::new();
        let x = g.leaf(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let top = g.slice_rows(x, 0, 1).unwrap();
        let bot = g.slice_rows(x, 1, 3).unwrap();
        let back = g.concat_rows(&[top, bot]).unwrap();
        assert_eq!(g.value(back), g.value(x));
        let col = g.slice_cols(back, 1, 2).unwrap();
        assert_eq!(g.value(col), &[2.0, 4.0, 6.0]);
        let l = g.sum_all(col);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn add_row_broadcast_and_gradient() {
        let mut g = G::new();
        let x = g.leaf(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = g.leaf(1, 2, vec![10.0, 20.0]).unwrap();
        let y = g.add_row(x, r).unwrap();
        assert_eq!(g.value(y), &[11.0, 22.0, 13.0, 24.0]);
        let l = g.sum_all(y);
        g.backward(l).unwrap();
        assert_eq!(g.grad(r), &[2.0, 2.0]);
    }

    #[test]
    fn affine_cols_applies_and_differentiates() {
        let mut g = G::new();
        let x = g.leaf(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = g.affine_cols(x, &[2.0, -1.0], &[0.5, 0.0]).unwrap();
        assert_eq!(g.value(y), &[2.5, -2.0, 6.5, -4.0]);
        let l = g.sum_all(y);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x), &[2.0, -1.0, 2.0, -1.0]);
    }

    #[test]
    fn scalar_broadcast_ops() {
        let mut g = G::new();
        let x = g.leaf(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let s = g.scalar(2.0);
        let y = g.mul_scalar(x, s).unwrap();
        assert_eq!(g.value(y), &[2.0, 4.0, 6.0]);
        let z = g.sub_scalar(y, s).unwrap();
        assert_eq!(g.value(z), &[0.0, 2.0, 4.0]);
        let l = g.sum_all(z);
        g.backward(l).unwrap();
        // d/ds of sum(x*s - s) = sum(x) - 3
        assert!((g.grad(s)[0] - (6.0 - 3.0)).abs() < 1e-12);
        assert_eq!(g.grad(x), &[2.0, 2.0, 2.0]);
    }

    proptest::proptest! {
        #[test]
        fn logsumexp_matches_naive_in_safe_range(
            xs in proptest::collection::vec(-20.0f64..20.0, 1..12)
        ) {
            let naive = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
            let stable = logsumexp(&xs);
            proptest::prop_assert!((naive - stable).abs() < 1e-12 * naive.abs().max(1.0));
        }

        #[test]
        fn logsumexp_survives_large_magnitudes(
            xs in proptest::collection::vec(500.0f64..800.0, 2..8)
        ) {
            let stable = logsumexp(&xs);
            let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            proptest::prop_assert!(stable.is_finite());
            proptest::prop_assert!(stable >= m && stable <= m + (xs.len() as f64).ln() + 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let mut g = G::new();
            let x = g.leaf(2, 2, vec![0.3, -0.4, 0.11, 2.2]).unwrap();
            let t = g.tanh(x);
            let s = g.sigmoid(t);
            let l = g.mean_all(s);
            g.scalar_value(l).to_bits()
        };
        assert_eq!(run(), run());
    }
}
