use super::{sigmoid, softmax_rows, softplus, Tensor};
use crate::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `[n, m] + [m]`, the bias add.
    AddRow(Var, Var),
    /// Tensor times a single-element node.
    MulScalarVar(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    LogEps(Var, f64),
    Square(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    Max(Var),
    MaxRows(Var),
    SumRows(Var),
    Gather(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// A recorded computation. Nodes are appended in evaluation order, so the node list
/// is already topologically sorted.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn check_2d(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.ndim() != 2 {
        return Err(Error::shape(op, format!("expected 2-D input, got {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a[i * m + j];
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated by previous backward passes, if any reached `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient of `v`, or zeros of the right shape when nothing reached it.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn unary(
        &mut self,
        op_name: &'static str,
        a: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let value = self.value(a).map(f);
        self.push(op_name, value, op, &[a])
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op_name, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(op_name, value, op, &[a, b])
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = check_2d("matmul", self.value(a))?;
        let (k2, m) = check_2d("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{n}, {k}] x [{k2}, {m}]")));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        self.push("matmul", Tensor::matrix(n, m, data)?, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (n, m) = check_2d("transpose", self.value(a))?;
        let data = transpose_raw(self.value(a).data(), n, m);
        self.push("transpose", Tensor::matrix(m, n, data)?, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Row-wise bias add: `a[i, j] + b[j]`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, m) = check_2d("add_row", self.value(a))?;
        let tb = self.value(b);
        if tb.len() != m || tb.ndim() != 1 {
            return Err(Error::shape("add_row", format!("[{n}, {m}] + {:?}", tb.shape())));
        }
        let bias = tb.data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_exact_mut(m) {
            for (x, &bv) in row.iter_mut().zip(bias) {
                *x += bv;
            }
        }
        self.push("add_row", Tensor::matrix(n, m, data)?, Op::AddRow(a, b), &[a, b])
    }

    /// Multiply every element of `a` by the single value held in `s`.
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(Error::shape("mul_scalar_var", "scale must hold one element"));
        }
        let k = self.value(s).item();
        let value = self.value(a).map(|x| x * k);
        self.push("mul_scalar_var", value, Op::MulScalarVar(a, s), &[a, s])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary("neg", a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.unary("scale", a, |x| x * k, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        self.unary("add_scalar", a, |x| x + k, Op::AddScalar(a))
    }

    /// `k - a`.
    pub fn rsub_scalar(&mut self, k: f64, a: Var) -> Result<Var> {
        let n = self.neg(a)?;
        self.add_scalar(n, k)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary("softplus", a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    /// Natural log; any input `<= 0` is an error.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(Error::invalid("log of a non-positive value"));
        }
        self.unary("log", a, f64::ln, Op::Log(a))
    }

    /// `ln(a + eps)`, for probabilities that may reach zero.
    pub fn log_eps(&mut self, a: Var, eps: f64) -> Result<Var> {
        self.unary("log_eps", a, |x| (x + eps).ln(), Op::LogEps(a, eps))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary("square", a, |x| x * x, Op::Square(a))
    }

    /// Row-wise softmax of a `[batch, classes]` tensor.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (n, m) = check_2d("softmax", self.value(a))?;
        let data = softmax_rows(self.value(a).data(), m);
        self.push("softmax", Tensor::matrix(n, m, data)?, Op::Softmax(a), &[a])
    }

    /// Row-wise log-softmax of a `[batch, classes]` tensor.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let (n, m) = check_2d("log_softmax", self.value(a))?;
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_exact_mut(m) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        self.push("log_softmax", Tensor::matrix(n, m, data)?, Op::LogSoftmax(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Maximum over all elements.
    pub fn max(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::shape("max", "empty tensor"));
        }
        let m = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.push("max", Tensor::scalar(m), Op::Max(a), &[a])
    }

    /// Row maxima of a `[n, m]` tensor, giving `[n]`.
    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let (_, m) = check_2d("max_rows", self.value(a))?;
        let data = self
            .value(a)
            .data()
            .chunks_exact(m)
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        self.push("max_rows", Tensor::vector(data), Op::MaxRows(a), &[a])
    }

    /// Row sums of a `[n, m]` tensor, giving `[n]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (_, m) = check_2d("sum_rows", self.value(a))?;
        let data = self.value(a).data().chunks_exact(m).map(|r| r.iter().sum()).collect();
        self.push("sum_rows", Tensor::vector(data), Op::SumRows(a), &[a])
    }

    /// Pick `a[i, idx[i]]` for every row, giving `[n]`.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (n, m) = check_2d("gather", self.value(a))?;
        if idx.len() != n {
            return Err(Error::shape("gather", format!("{n} rows, {} indices", idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= m) {
            return Err(Error::invalid(format!("gather index {bad} out of range for {m} columns")));
        }
        let t = self.value(a);
        let data = idx.iter().enumerate().map(|(i, &j)| t.get2(i, j)).collect();
        self.push("gather", Tensor::vector(data), Op::Gather(a, idx.to_vec()), &[a])
    }

    /// Sum of a list of same-shape nodes.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars
            .split_first()
            .ok_or_else(|| Error::invalid("add_all of an empty list"))?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    /// Accumulate `d root / d node` into every node reachable from `root`.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("root must be scalar, got {:?}", self.value(root).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?),
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, contribution: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&contribution) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let elementwise = |v: Var, f: &dyn Fn(f64, f64, f64) -> f64| -> Vec<f64> {
            // f(upstream, input, output)
            g.iter()
                .zip(val(v))
                .zip(y)
                .map(|((&gi, &xi), &yi)| f(gi, xi, yi))
                .collect()
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let m = self.value(*b).shape()[1];
                // dA = G B^T, dB = A^T G
                let bt = transpose_raw(val(*b), k, m);
                self.accumulate(grads, *a, matmul_raw(g, &bt, n, m, k));
                let at = transpose_raw(val(*a), n, k);
                self.accumulate(grads, *b, matmul_raw(&at, g, k, n, m));
            }
            Op::Transpose(a) => {
                let (n, m) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                self.accumulate(grads, *a, transpose_raw(g, m, n));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                self.accumulate(grads, *a, g.iter().zip(vb).map(|(x, y)| x * y).collect());
                self.accumulate(grads, *b, g.iter().zip(va).map(|(x, y)| x * y).collect());
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                self.accumulate(grads, *a, g.iter().zip(vb).map(|(x, y)| x / y).collect());
                let db = g
                    .iter()
                    .zip(va.iter().zip(vb))
                    .map(|(gi, (x, y))| -gi * x / (y * y))
                    .collect();
                self.accumulate(grads, *b, db);
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                let m = self.value(*b).len();
                let mut db = vec![0.0; m];
                for row in g.chunks_exact(m) {
                    for (d, x) in db.iter_mut().zip(row) {
                        *d += x;
                    }
                }
                self.accumulate(grads, *b, db);
            }
            Op::MulScalarVar(a, s) => {
                let k = self.value(*s).item();
                self.accumulate(grads, *a, g.iter().map(|x| x * k).collect());
                let ds = g.iter().zip(val(*a)).map(|(x, y)| x * y).sum();
                self.accumulate(grads, *s, vec![ds]);
            }
            Op::Neg(a) => self.accumulate(grads, *a, g.iter().map(|x| -x).collect()),
            Op::Scale(a, k) => self.accumulate(grads, *a, g.iter().map(|x| x * k).collect()),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.to_vec()),
            Op::Relu(a) => {
                let d = elementwise(*a, &|gi, x, _| if x > 0.0 { gi } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = elementwise(*a, &|gi, _, t| gi * (1.0 - t * t));
                self.accumulate(grads, *a, d);
            }
            Op::Softplus(a) => {
                let d = elementwise(*a, &|gi, x, _| gi * sigmoid(x));
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => {
                let d = elementwise(*a, &|gi, _, e| gi * e);
                self.accumulate(grads, *a, d);
            }
            Op::Log(a) => {
                let d = elementwise(*a, &|gi, x, _| gi / x);
                self.accumulate(grads, *a, d);
            }
            Op::LogEps(a, eps) => {
                let eps = *eps;
                let d = elementwise(*a, &|gi, x, _| gi / (x + eps));
                self.accumulate(grads, *a, d);
            }
            Op::Square(a) => {
                let d = elementwise(*a, &|gi, x, _| 2.0 * gi * x);
                self.accumulate(grads, *a, d);
            }
            Op::Softmax(a) => {
                let m = self.value(*a).shape()[1];
                let mut d = vec![0.0; g.len()];
                for ((gr, yr), dr) in g.chunks_exact(m).zip(y.chunks_exact(m)).zip(d.chunks_exact_mut(m)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((di, gi), yi) in dr.iter_mut().zip(gr).zip(yr) {
                        *di = yi * (gi - dot);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::LogSoftmax(a) => {
                let m = self.value(*a).shape()[1];
                let mut d = vec![0.0; g.len()];
                for ((gr, yr), dr) in g.chunks_exact(m).zip(y.chunks_exact(m)).zip(d.chunks_exact_mut(m)) {
                    let gs: f64 = gr.iter().sum();
                    for ((di, gi), yi) in dr.iter_mut().zip(gr).zip(yr) {
                        *di = gi - yi.exp() * gs;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![g[0] / n as f64; n]);
            }
            Op::Max(a) => {
                let x = val(*a);
                let arg = argmax(x);
                let mut d = vec![0.0; x.len()];
                d[arg] = g[0];
                self.accumulate(grads, *a, d);
            }
            Op::MaxRows(a) => {
                let m = self.value(*a).shape()[1];
                let x = val(*a);
                let mut d = vec![0.0; x.len()];
                for (r, (row, gi)) in x.chunks_exact(m).zip(g).enumerate() {
                    d[r * m + argmax(row)] = *gi;
                }
                self.accumulate(grads, *a, d);
            }
            Op::SumRows(a) => {
                let m = self.value(*a).shape()[1];
                let d = g.iter().flat_map(|&gi| std::iter::repeat_n(gi, m)).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Gather(a, idx) => {
                let m = self.value(*a).shape()[1];
                let mut d = vec![0.0; self.value(*a).len()];
                for (r, (&j, &gi)) in idx.iter().zip(g).enumerate() {
                    d[r * m + j] = gi;
                }
                self.accumulate(grads, *a, d);
            }
        }
    }
}

/// Index of the first maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn closed_form_forwards() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::vector(vec![0.0]));
        let t = g.tanh(z).unwrap();
        assert_eq!(g.value(t).item(), 0.0);
        let sp = g.softplus(z).unwrap();
        assert!(close(g.value(sp).item(), std::f64::consts::LN_2, 1e-15));
        let zeros = g.constant(Tensor::zeros(&[1, 3]));
        let s = g.softmax(zeros).unwrap();
        for &p in g.value(s).data() {
            assert!(close(p, 1.0 / 3.0, 1e-15));
        }
    }

    #[test]
    fn sum_and_mean_square_gradients() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        let sq = g.square(x).unwrap();
        let m = g.mean(sq).unwrap();
        g.backward(m).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn double_backward_accumulates() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![0.3, -1.2]));
        let t = g.tanh(x).unwrap();
        let e = g.mul(t, x).unwrap();
        let r = g.sum(e).unwrap();
        g.backward(r).unwrap();
        let once = g.grad(x).unwrap().clone();
        g.backward(r).unwrap();
        let twice = g.grad(x).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * a, *b);
        }
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn errors() {
        let mut g = Graph::new();
        let a = g.param(Tensor::zeros(&[2, 3]));
        let b = g.param(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.matmul(a, b), Err(Error::Shape { .. })));
        assert!(g.backward(a).is_err());
        let neg = g.constant(Tensor::vector(vec![-1.0]));
        assert!(g.log(neg).is_err());
        let big = g.constant(Tensor::vector(vec![1000.0]));
        assert!(matches!(g.exp(big), Err(Error::NonFinite { .. })));
        let v = g.constant(Tensor::vector(vec![1.0, 2.0]));
        assert!(g.softmax(v).is_err());
        assert!(g.gather(a, &[0, 3]).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![2.0]));
        let c = g.constant(Tensor::vector(vec![3.0]));
        let p = g.mul(x, c).unwrap();
        let s = g.sum(p).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 3.0);
        assert!(g.grad(c).is_none());
    }
}
