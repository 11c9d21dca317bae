//! Minimal reverse-mode differentiation over dense f64 matrices.
//!
//! A [`Tape`] owns every intermediate value of one forward pass; ops append
//! nodes and return [`Var`] handles. [`Tape::backward`] seeds the chosen
//! scalar with gradient 1 and walks the nodes in reverse construction order,
//! which is a valid reverse topological order because parents always precede
//! children.

use crate::linalg::{dot, Matrix};
use crate::patterns::SparsePattern;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

enum Op {
    Leaf,
    /// C = A * B
    MatMul(usize, usize),
    /// C = A + B, same shape
    Add(usize, usize),
    /// C = A - B, same shape
    Sub(usize, usize),
    /// C = A .* B, same shape
    Mul(usize, usize),
    /// C = A + row, row broadcast over rows of A
    AddRow(usize, usize),
    /// C = A .* row, row broadcast over rows of A
    MulRow(usize, usize),
    Sigmoid(usize),
    Relu(usize),
    Scale(usize, f64),
    /// 1x1 result: A + alpha * B, both 1x1
    AddScaled(usize, usize, f64),
    /// Input-gated diagonal recurrence h_t = a_t .* h_{t-1} + (1 - a_t) .* u_t
    GatedScan { a: usize, u: usize },
    /// Row gather: out[r] = table[tokens[r]]
    Embed { table: usize, tokens: Vec<usize> },
    /// out[r] = src[idx[r]]
    GatherRows { src: usize, idx: Vec<usize> },
    /// Masked sparse softmax attention with a fixed pattern; probs cached
    /// row-aligned with the pattern.
    SparseAttention { q: usize, k: usize, v: usize, pattern: SparsePattern, probs: Vec<Vec<f64>> },
    /// Mean next-token cross entropy over positions with Some(target).
    CrossEntropy { logits: usize, targets: Vec<Option<usize>>, probs: Matrix, count: usize },
    /// Pairwise logistic ranking loss of an l x 1 score column against
    /// constant targets.
    RankingLoss { scores: usize, targets: Vec<f64> },
}

struct Node {
    value: Matrix,
    grad: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    // numerically stable ln(1 + e^x)
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        let grad = Matrix::zeros(value.rows, value.cols);
        self.nodes.push(Node { value, grad, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].grad
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.data.len(), 1);
        self.nodes[v.0].value.data[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.nodes[a.0].value.matmul(&self.nodes[b.0].value);
        self.push(value, Op::MatMul(a.0, b.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!((va.rows, va.cols), (vb.rows, vb.cols), "add shape mismatch");
        let mut value = va.clone();
        for (x, y) in value.data.iter_mut().zip(&vb.data) {
            *x += y;
        }
        self.push(value, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!((va.rows, va.cols), (vb.rows, vb.cols), "sub shape mismatch");
        let mut value = va.clone();
        for (x, y) in value.data.iter_mut().zip(&vb.data) {
            *x -= y;
        }
        self.push(value, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!((va.rows, va.cols), (vb.rows, vb.cols), "mul shape mismatch");
        let mut value = va.clone();
        for (x, y) in value.data.iter_mut().zip(&vb.data) {
            *x *= y;
        }
        self.push(value, Op::Mul(a.0, b.0))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (&self.nodes[a.0].value, &self.nodes[row.0].value);
        assert_eq!(vr.rows, 1, "bias must be a row vector");
        assert_eq!(va.cols, vr.cols, "add_row width mismatch");
        let mut value = va.clone();
        for r in 0..value.rows {
            for (x, y) in value.row_mut(r).iter_mut().zip(&vr.data) {
                *x += y;
            }
        }
        self.push(value, Op::AddRow(a.0, row.0))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (&self.nodes[a.0].value, &self.nodes[row.0].value);
        assert_eq!(vr.rows, 1, "gate must be a row vector");
        assert_eq!(va.cols, vr.cols, "mul_row width mismatch");
        let mut value = va.clone();
        for r in 0..value.rows {
            for (x, y) in value.row_mut(r).iter_mut().zip(&vr.data) {
                *x *= y;
            }
        }
        self.push(value, Op::MulRow(a.0, row.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let mut value = self.nodes[a.0].value.clone();
        for x in &mut value.data {
            *x = sigmoid(*x);
        }
        self.push(value, Op::Sigmoid(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut value = self.nodes[a.0].value.clone();
        for x in &mut value.data {
            *x = x.max(0.0);
        }
        self.push(value, Op::Relu(a.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut value = self.nodes[a.0].value.clone();
        for x in &mut value.data {
            *x *= c;
        }
        self.push(value, Op::Scale(a.0, c))
    }

    /// 1x1 combination a + alpha * b, used to assemble total losses.
    pub fn add_scaled(&mut self, a: Var, b: Var, alpha: f64) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.data.len(), 1);
        assert_eq!(vb.data.len(), 1);
        let value = Matrix { rows: 1, cols: 1, data: vec![va.data[0] + alpha * vb.data[0]] };
        self.push(value, Op::AddScaled(a.0, b.0, alpha))
    }

    /// h_t = a_t .* h_{t-1} + (1 - a_t) .* u_t with h_0 = 0; strictly causal.
    pub fn gated_scan(&mut self, a: Var, u: Var) -> Var {
        let (va, vu) = (&self.nodes[a.0].value, &self.nodes[u.0].value);
        assert_eq!((va.rows, va.cols), (vu.rows, vu.cols), "scan shape mismatch");
        let mut value = Matrix::zeros(va.rows, va.cols);
        let cols = va.cols;
        for t in 0..va.rows {
            for c in 0..cols {
                let prev = if t == 0 { 0.0 } else { value.at(t - 1, c) };
                let at = va.at(t, c);
                *value.at_mut(t, c) = at * prev + (1.0 - at) * vu.at(t, c);
            }
        }
        self.push(value, Op::GatedScan { a: a.0, u: u.0 })
    }

    pub fn embed(&mut self, table: Var, tokens: &[usize]) -> Var {
        let vt = &self.nodes[table.0].value;
        let mut value = Matrix::zeros(tokens.len(), vt.cols);
        for (r, &tok) in tokens.iter().enumerate() {
            value.row_mut(r).copy_from_slice(vt.row(tok));
        }
        self.push(value, Op::Embed { table: table.0, tokens: tokens.to_vec() })
    }

    pub fn gather_rows(&mut self, src: Var, idx: &[usize]) -> Var {
        let vs = &self.nodes[src.0].value;
        let mut value = Matrix::zeros(idx.len(), vs.cols);
        for (r, &i) in idx.iter().enumerate() {
            value.row_mut(r).copy_from_slice(vs.row(i));
        }
        self.push(value, Op::GatherRows { src: src.0, idx: idx.to_vec() })
    }

    /// Differentiable counterpart of
    /// [`crate::patterns::sparse_attention_forward`]: softmax over exactly the
    /// pattern positions, zero rows for empty patterns, zero gradient routed
    /// to excluded positions.
    pub fn sparse_attention(&mut self, q: Var, k: Var, v: Var, pattern: &SparsePattern) -> Var {
        let (vq, vk, vv) = (
            &self.nodes[q.0].value,
            &self.nodes[k.0].value,
            &self.nodes[v.0].value,
        );
        assert_eq!(vq.rows, vk.rows);
        assert_eq!(vk.rows, vv.rows);
        assert_eq!(pattern.len, vq.rows);
        let scale = 1.0 / (vq.cols as f64).sqrt();
        let mut value = Matrix::zeros(vq.rows, vv.cols);
        let mut probs = Vec::with_capacity(pattern.len);
        for i in 0..vq.rows {
            let row = &pattern.rows[i];
            if row.is_empty() {
                probs.push(Vec::new());
                continue;
            }
            let logits: Vec<f64> = row.iter().map(|&j| dot(vq.row(i), vk.row(j)) * scale).collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let p: Vec<f64> = exps.iter().map(|e| e / sum).collect();
            let out_row = value.row_mut(i);
            for (&j, &pj) in row.iter().zip(&p) {
                for (o, &vx) in out_row.iter_mut().zip(vv.row(j)) {
                    *o += pj * vx;
                }
            }
            probs.push(p);
        }
        self.push(
            value,
            Op::SparseAttention { q: q.0, k: k.0, v: v.0, pattern: pattern.clone(), probs },
        )
    }

    /// Mean cross entropy of row-softmaxed logits against per-position
    /// targets; `None` positions contribute nothing.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let vl = &self.nodes[logits.0].value;
        assert_eq!(vl.rows, targets.len());
        let mut probs = Matrix::zeros(vl.rows, vl.cols);
        let mut loss = 0.0;
        let mut count = 0usize;
        for (r, target) in targets.iter().enumerate() {
            let Some(t) = target else { continue };
            let row = vl.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for (c, e) in exps.iter().enumerate() {
                *probs.at_mut(r, c) = e / sum;
            }
            loss -= (probs.at(r, *t)).ln();
            count += 1;
        }
        if count > 0 {
            loss /= count as f64;
        }
        let value = Matrix { rows: 1, cols: 1, data: vec![loss] };
        self.push(value, Op::CrossEntropy { logits: logits.0, targets: targets.to_vec(), probs, count })
    }

    /// Pairwise ranking loss between a k x 1 score column and constant
    /// reference targets: mean over all ordered pairs of the logistic loss of
    /// (x_i - x_j) against T_ij in {0, 0.5, 1}.
    pub fn ranking_loss(&mut self, scores: Var, targets: &[f64]) -> Var {
        let vs = &self.nodes[scores.0].value;
        assert_eq!(vs.cols, 1, "scores must be a column");
        assert_eq!(vs.rows, targets.len());
        let loss = ranking_loss_value(&vs.data, targets);
        let value = Matrix { rows: 1, cols: 1, data: vec![loss] };
        self.push(value, Op::RankingLoss { scores: scores.0, targets: targets.to_vec() })
    }

    /// Runs reverse accumulation from `root` (a 1x1 scalar).
    #[allow(clippy::needless_range_loop)] // indexed loops read several parallel buffers
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.nodes[root.0].value.data.len(), 1, "backward root must be scalar");
        for node in &mut self.nodes {
            node.grad.data.fill(0.0);
        }
        self.nodes[root.0].grad.data[0] = 1.0;
        for i in (0..self.nodes.len()).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if node.grad.data.iter().all(|&g| g == 0.0) {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    // dA += G * B^T ; dB += A^T * G
                    let ga = node.grad.matmul_t(&before[*b].value);
                    for (x, y) in before[*a].grad.data.iter_mut().zip(&ga.data) {
                        *x += y;
                    }
                    let gb = before[*a].value.t_matmul(&node.grad);
                    for (x, y) in before[*b].grad.data.iter_mut().zip(&gb.data) {
                        *x += y;
                    }
                }
                Op::Add(a, b) => {
                    for (x, y) in before[*a].grad.data.iter_mut().zip(&node.grad.data) {
                        *x += y;
                    }
                    for (x, y) in before[*b].grad.data.iter_mut().zip(&node.grad.data) {
                        *x += y;
                    }
                }
                Op::Sub(a, b) => {
                    for (x, y) in before[*a].grad.data.iter_mut().zip(&node.grad.data) {
                        *x += y;
                    }
                    for (x, y) in before[*b].grad.data.iter_mut().zip(&node.grad.data) {
                        *x -= y;
                    }
                }
                Op::Mul(a, b) => {
                    for ((x, g), y) in before[*a]
                        .grad
                        .data
                        .iter_mut()
                        .zip(&node.grad.data)
                        .zip(&before[*b].value.data)
                    {
                        *x += g * y;
                    }
                    for ((x, g), y) in before[*b]
                        .grad
                        .data
                        .iter_mut()
                        .zip(&node.grad.data)
                        .zip(&before[*a].value.data)
                    {
                        *x += g * y;
                    }
                }
                Op::AddRow(a, row) => {
                    for (x, y) in before[*a].grad.data.iter_mut().zip(&node.grad.data) {
                        *x += y;
                    }
                    let cols = node.grad.cols;
                    for r in 0..node.grad.rows {
                        for c in 0..cols {
                            before[*row].grad.data[c] += node.grad.at(r, c);
                        }
                    }
                }
                Op::MulRow(a, row) => {
                    let cols = node.grad.cols;
                    for r in 0..node.grad.rows {
                        for c in 0..cols {
                            let g = node.grad.at(r, c);
                            before[*a].grad.data[r * cols + c] += g * before[*row].value.data[c];
                            before[*row].grad.data[c] += g * before[*a].value.at(r, c);
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    for ((x, g), s) in before[*a]
                        .grad
                        .data
                        .iter_mut()
                        .zip(&node.grad.data)
                        .zip(&node.value.data)
                    {
                        *x += g * s * (1.0 - s);
                    }
                }
                Op::Relu(a) => {
                    for ((x, g), v) in before[*a]
                        .grad
                        .data
                        .iter_mut()
                        .zip(&node.grad.data)
                        .zip(&before[*a].value.data)
                    {
                        if *v > 0.0 {
                            *x += g;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    for (x, g) in before[*a].grad.data.iter_mut().zip(&node.grad.data) {
                        *x += g * c;
                    }
                }
                Op::AddScaled(a, b, alpha) => {
                    before[*a].grad.data[0] += node.grad.data[0];
                    before[*b].grad.data[0] += node.grad.data[0] * alpha;
                }
                Op::GatedScan { a, u } => {
                    let cols = node.value.cols;
                    let rows = node.value.rows;
                    let mut carry = vec![0.0; cols];
                    for t in (0..rows).rev() {
                        for c in 0..cols {
                            let g = node.grad.at(t, c) + carry[c];
                            let at = before[*a].value.at(t, c);
                            let ut = before[*u].value.at(t, c);
                            let prev = if t == 0 { 0.0 } else { node.value.at(t - 1, c) };
                            before[*a].grad.data[t * cols + c] += g * (prev - ut);
                            before[*u].grad.data[t * cols + c] += g * (1.0 - at);
                            carry[c] = g * at;
                        }
                    }
                }
                Op::Embed { table, tokens } => {
                    let cols = node.grad.cols;
                    for (r, &tok) in tokens.iter().enumerate() {
                        for c in 0..cols {
                            before[*table].grad.data[tok * cols + c] += node.grad.at(r, c);
                        }
                    }
                }
                Op::GatherRows { src, idx } => {
                    let cols = node.grad.cols;
                    for (r, &i) in idx.iter().enumerate() {
                        for c in 0..cols {
                            before[*src].grad.data[i * cols + c] += node.grad.at(r, c);
                        }
                    }
                }
                Op::SparseAttention { q, k, v, pattern, probs } => {
                    let scale = 1.0 / (before[*q].value.cols as f64).sqrt();
                    let d = before[*q].value.cols;
                    let dv = before[*v].value.cols;
                    for i in 0..pattern.len {
                        let row = &pattern.rows[i];
                        if row.is_empty() {
                            continue;
                        }
                        let g_out = node.grad.row(i);
                        // s_j = G_i . V_j ; dlogit_j = p_j (s_j - sum_j' p_j' s_j')
                        let s: Vec<f64> =
                            row.iter().map(|&j| dot(g_out, before[*v].value.row(j))).collect();
                        let mean: f64 =
                            probs[i].iter().zip(&s).map(|(p, sv)| p * sv).sum();
                        for ((&j, &pj), &sj) in row.iter().zip(&probs[i]).zip(&s) {
                            // value gradient
                            for c in 0..dv {
                                before[*v].grad.data[j * dv + c] += pj * g_out[c];
                            }
                            let dlogit = pj * (sj - mean);
                            if dlogit != 0.0 {
                                for c in 0..d {
                                    before[*q].grad.data[i * d + c] +=
                                        dlogit * scale * before[*k].value.at(j, c);
                                    before[*k].grad.data[j * d + c] +=
                                        dlogit * scale * before[*q].value.at(i, c);
                                }
                            }
                        }
                    }
                }
                Op::CrossEntropy { logits, targets, probs, count } => {
                    if *count == 0 {
                        continue;
                    }
                    let g = node.grad.data[0] / *count as f64;
                    let cols = probs.cols;
                    for (r, target) in targets.iter().enumerate() {
                        let Some(t) = target else { continue };
                        for c in 0..cols {
                            let indicator = if c == *t { 1.0 } else { 0.0 };
                            before[*logits].grad.data[r * cols + c] +=
                                g * (probs.at(r, c) - indicator);
                        }
                    }
                }
                Op::RankingLoss { scores, targets } => {
                    let g = node.grad.data[0];
                    let x = &before[*scores].value.data;
                    let kk = targets.len() as f64;
                    for i in 0..targets.len() {
                        let mut acc = 0.0;
                        for j in 0..targets.len() {
                            let tij = pair_target(targets[i], targets[j]);
                            let tji = pair_target(targets[j], targets[i]);
                            acc += sigmoid(x[i] - x[j]) - tij;
                            acc -= sigmoid(x[j] - x[i]) - tji;
                        }
                        before[*scores].grad.data[i] += g * acc / (kk * kk);
                    }
                }
            }
        }
    }
}

fn pair_target(yi: f64, yj: f64) -> f64 {
    if yi > yj {
        1.0
    } else if yi < yj {
        0.0
    } else {
        0.5
    }
}

/// Loss value shared by the tape op and standalone callers:
/// (1/k^2) sum_ij softplus(x_i - x_j) - T_ij (x_i - x_j).
pub fn ranking_loss_value(scores: &[f64], targets: &[f64]) -> f64 {
    assert_eq!(scores.len(), targets.len());
    let k = scores.len();
    if k == 0 {
        return 0.0;
    }
    let mut loss = 0.0;
    for i in 0..k {
        for j in 0..k {
            let p = scores[i] - scores[j];
            let t = pair_target(targets[i], targets[j]);
            loss += softplus(p) - t * p;
        }
    }
    loss / (k * k) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn finite_diff<F: FnMut(&Matrix) -> f64>(base: &Matrix, mut f: F) -> Matrix {
        let eps = 1e-5;
        let mut grad = Matrix::zeros(base.rows, base.cols);
        for i in 0..base.data.len() {
            let mut plus = base.clone();
            plus.data[i] += eps;
            let mut minus = base.clone();
            minus.data[i] -= eps;
            grad.data[i] = (f(&plus) - f(&minus)) / (2.0 * eps);
        }
        grad
    }

    fn assert_close(analytic: &Matrix, numeric: &Matrix, tol: f64) {
        for (a, n) in analytic.data.iter().zip(&numeric.data) {
            let denom = a.abs().max(n.abs()).max(1.0);
            assert!(
                (a - n).abs() / denom < tol,
                "gradient mismatch: analytic {a}, numeric {n}"
            );
        }
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix { rows: 1, cols: 1, data: vec![0.0] });
        let y = tape.sigmoid(x);
        tape.backward(y);
        assert!((tape.grad(x).data[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn singleton_softmax_row() {
        let mut tape = Tape::new();
        let q = tape.leaf(Matrix::from_rows(vec![vec![1.0, 2.0]]));
        let k = tape.leaf(Matrix::from_rows(vec![vec![-1.0, 0.5]]));
        let v = tape.leaf(Matrix::from_rows(vec![vec![3.0, 4.0]]));
        let pattern = SparsePattern { len: 1, budget: 1, rows: vec![vec![0]] };
        let out = tape.sparse_attention(q, k, v, &pattern);
        assert_eq!(tape.value(out).data, vec![3.0, 4.0]);
        let s = tape.scale(out, 1.0);
        let loss = tape.cross_entropy(s, &[Some(0)]);
        tape.backward(loss);
        // softmax over a singleton is constant 1: no gradient into q or k
        assert!(tape.grad(q).data.iter().all(|&g| g == 0.0));
        assert!(tape.grad(k).data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn composite_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..5 {
            let l = 6;
            let d = 4;
            let x0 = Matrix::randn(l, d, &mut rng);
            let w1 = Matrix::randn(d, d, &mut rng);
            let w2 = Matrix::randn(d, d, &mut rng);
            let bias = Matrix::randn(1, d, &mut rng);
            let targets: Vec<Option<usize>> =
                (0..l).map(|i| if i % 2 == 0 { Some(i % d) } else { None }).collect();

            let run = |x0v: &Matrix, w1v: &Matrix, w2v: &Matrix, bv: &Matrix| {
                let mut tape = Tape::new();
                let x = tape.leaf(x0v.clone());
                let w1 = tape.leaf(w1v.clone());
                let w2 = tape.leaf(w2v.clone());
                let b = tape.leaf(bv.clone());
                let h1 = tape.matmul(x, w1);
                let h1 = tape.add_row(h1, b);
                let h1 = tape.relu(h1);
                let a = tape.sigmoid(h1);
                let u = tape.matmul(x, w2);
                let h = tape.gated_scan(a, u);
                let hs = tape.mul(h, h1);
                let loss = tape.cross_entropy(hs, &targets);
                (tape, x, w1, w2, b, loss)
            };

            let (mut tape, x, w1v, w2v, bv, loss) = run(&x0, &w1, &w2, &bias);
            tape.backward(loss);

            let fd_x = finite_diff(&x0, |m| {
                let (t, _, _, _, _, l) = run(m, &w1, &w2, &bias);
                t.scalar_value(l)
            });
            assert_close(tape.grad(x), &fd_x, 1e-6);
            let fd_w1 = finite_diff(&w1, |m| {
                let (t, _, _, _, _, l) = run(&x0, m, &w2, &bias);
                t.scalar_value(l)
            });
            assert_close(tape.grad(w1v), &fd_w1, 1e-6);
            let fd_w2 = finite_diff(&w2, |m| {
                let (t, _, _, _, _, l) = run(&x0, &w1, m, &bias);
                t.scalar_value(l)
            });
            assert_close(tape.grad(w2v), &fd_w2, 1e-6);
            let fd_b = finite_diff(&bias, |m| {
                let (t, _, _, _, _, l) = run(&x0, &w1, &w2, m);
                t.scalar_value(l)
            });
            assert_close(tape.grad(bv), &fd_b, 1e-6);
        }
    }

    #[test]
    fn sparse_attention_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let l = 5;
        let d = 3;
        let q0 = Matrix::randn(l, d, &mut rng);
        let k0 = Matrix::randn(l, d, &mut rng);
        let v0 = Matrix::randn(l, d, &mut rng);
        let pattern = SparsePattern {
            len: l,
            budget: 3,
            rows: vec![vec![0], vec![0, 1], vec![], vec![1, 2], vec![0, 2, 4]],
        };
        let targets: Vec<Option<usize>> = vec![Some(0), Some(1), None, Some(2), Some(0)];
        let run = |qv: &Matrix, kv: &Matrix, vv: &Matrix| {
            let mut tape = Tape::new();
            let q = tape.leaf(qv.clone());
            let k = tape.leaf(kv.clone());
            let v = tape.leaf(vv.clone());
            let out = tape.sparse_attention(q, k, v, &pattern);
            let loss = tape.cross_entropy(out, &targets);
            (tape, q, k, v, loss)
        };
        let (mut tape, q, k, v, loss) = run(&q0, &k0, &v0);
        tape.backward(loss);
        let fd_q = finite_diff(&q0, |m| {
            let (t, _, _, _, l) = run(m, &k0, &v0);
            t.scalar_value(l)
        });
        assert_close(tape.grad(q), &fd_q, 1e-6);
        let fd_k = finite_diff(&k0, |m| {
            let (t, _, _, _, l) = run(&q0, m, &v0);
            t.scalar_value(l)
        });
        assert_close(tape.grad(k), &fd_k, 1e-6);
        let fd_v = finite_diff(&v0, |m| {
            let (t, _, _, _, l) = run(&q0, &k0, m);
            t.scalar_value(l)
        });
        assert_close(tape.grad(v), &fd_v, 1e-6);
        // excluded positions get exactly zero gradient
        assert!(tape.grad(v).row(3).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ranking_loss_fixed_point_and_gradient() {
        assert!((ranking_loss_value(&[0.0, 0.0], &[0.5, 0.5]) - 2f64.ln()).abs() < 1e-12);
        // direct evaluation: x=[10,-10], y=[1,0]
        let v = ranking_loss_value(&[10.0, -10.0], &[1.0, 0.0]);
        let expected = (2.0 * 2f64.ln() + softplus(20.0) - 20.0 + softplus(-20.0)) / 4.0;
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.34657).abs() < 1e-4);

        // permutation symmetry
        let a = ranking_loss_value(&[1.0, 3.0, -2.0], &[0.2, 0.9, 0.2]);
        let b = ranking_loss_value(&[3.0, -2.0, 1.0], &[0.9, 0.2, 0.2]);
        assert!((a - b).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = Matrix::randn(6, 1, &mut rng);
        let targets: Vec<f64> = vec![0.1, 0.8, 0.1, 0.5, 0.5, 0.9];
        let run = |xv: &Matrix| {
            let mut tape = Tape::new();
            let x = tape.leaf(xv.clone());
            let loss = tape.ranking_loss(x, &targets);
            (tape, x, loss)
        };
        let (mut tape, x, loss) = run(&x0);
        tape.backward(loss);
        let fd = finite_diff(&x0, |m| {
            let (t, _, l) = run(m);
            t.scalar_value(l)
        });
        assert_close(tape.grad(x), &fd, 1e-6);
    }

    #[test]
    fn embedding_scatter() {
        let mut tape = Tape::new();
        let table = tape.leaf(Matrix::from_rows(vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        ]));
        let x = tape.embed(table, &[2, 0, 2]);
        let loss = tape.cross_entropy(x, &[Some(0), Some(1), Some(0)]);
        tape.backward(loss);
        // token 2 used twice, token 1 never
        let g = tape.grad(table);
        assert!(g.row(1).iter().all(|&v| v == 0.0));
        assert!(g.row(2).iter().any(|&v| v != 0.0));
    }
}
