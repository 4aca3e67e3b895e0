//! Dense tensors and a small reverse-mode differentiation tape.
//!
//! Everything is `f64`. A [`Graph`] records operations in insertion order,
//! which is also a valid topological order, so [`Graph::backward`] is a single
//! reverse sweep over the node list.

use crate::error::{Error, Result};

/// Dense row-major tensor with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::BadLength {
                shape,
                len: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Tensor::new"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    /// Build an `[n, d]` matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::ShapeMismatch {
                    op: "from_rows",
                    left: vec![d],
                    right: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), d], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows of a matrix (first dimension).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Number of columns of a matrix (product of the trailing dimensions).
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// Value of a scalar (or single-element) tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    /// Select a subset of rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            shape.push(idx.len());
        } else {
            shape[0] = idx.len();
        }
        Tensor { shape, data }
    }

    /// Concatenate matrices along the first axis.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let c = parts.first().map(|t| t.cols()).unwrap_or(0);
        let mut data = Vec::new();
        let mut rows = 0;
        for t in parts {
            if t.cols() != c {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    left: vec![c],
                    right: vec![t.cols()],
                });
            }
            rows += t.rows();
            data.extend_from_slice(&t.data);
        }
        Tensor::new(vec![rows, c], data)
    }

    /// Elementwise map. The closure must keep values finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        Tensor::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn linf_distance(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Row-major `[m, k] x [k, n]` product.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            // exact: c + 0*b == c for finite b
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
    c
}

/// Entrywise sign with `sign(0) == 0`.
pub fn sign(t: &Tensor) -> Tensor {
    let data = t
        .data
        .iter()
        .map(|&v| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    Tensor {
        shape: t.shape.clone(),
        data,
    }
}

/// Feasible box for features. Either one interval shared by every feature or
/// per-feature intervals (broadcast over rows).
#[derive(Debug, Clone, PartialEq)]
pub enum Bounds {
    Uniform { lo: f64, hi: f64 },
    PerFeature { lo: Vec<f64>, hi: Vec<f64> },
}

impl Bounds {
    pub fn unit() -> Self {
        Bounds::Uniform { lo: 0.0, hi: 1.0 }
    }

    fn at(&self, flat: usize) -> (f64, f64) {
        match self {
            Bounds::Uniform { lo, hi } => (*lo, *hi),
            Bounds::PerFeature { lo, hi } => {
                let j = flat % lo.len();
                (lo[j], hi[j])
            }
        }
    }
}

/// Project `candidate` onto the L-infinity ball of radius `epsilon` around
/// `anchor`, intersected with `bounds`.
pub fn clip_to_ball(
    candidate: &Tensor,
    anchor: &Tensor,
    epsilon: f64,
    bounds: &Bounds,
) -> Result<Tensor> {
    if !(epsilon >= 0.0) {
        return Err(Error::invalid(format!("epsilon must be >= 0, got {epsilon}")));
    }
    if candidate.shape != anchor.shape {
        return Err(Error::ShapeMismatch {
            op: "clip_to_ball",
            left: candidate.shape.clone(),
            right: anchor.shape.clone(),
        });
    }
    if let Bounds::PerFeature { lo, hi } = bounds {
        if lo.len() != hi.len() || lo.is_empty() || candidate.len() % lo.len() != 0 {
            return Err(Error::ShapeMismatch {
                op: "clip_to_ball bounds",
                left: candidate.shape.clone(),
                right: vec![lo.len()],
            });
        }
    }
    let data = candidate
        .data
        .iter()
        .zip(&anchor.data)
        .enumerate()
        .map(|(i, (&c, &a))| {
            let (lo, hi) = bounds.at(i);
            // rounding in a ± epsilon can leave |v - a| one ulp above epsilon
            let mut v = c.clamp(a - epsilon, a + epsilon);
            while v - a > epsilon {
                v = v.next_down();
            }
            while a - v > epsilon {
                v = v.next_up();
            }
            v.clamp(lo, hi)
        })
        .collect();
    Tensor::new(candidate.shape.clone(), data)
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    SoftmaxXent {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// The computation record: append-only list of operations and their values.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
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

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_flag(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// An input that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (&self.value(a).shape, &self.value(b).shape);
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                left: sa.clone(),
                right: sb.clone(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape.clone(), self.value(b).shape.clone());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(&self.value(a).data, &self.value(b).data, m, k, n);
        check_finite("matmul", &data)?;
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), Tensor { shape: vec![m, n], data }, rg))
    }

    /// `a[m, n] + bias[n]` broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape.clone(), self.value(bias).shape.clone());
        if sa.len() != 2 || sb.len() != 1 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                left: sa,
                right: sb,
            });
        }
        let n = sa[1];
        let b = &self.value(bias).data;
        let data: Vec<f64> = self
            .value(a)
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i % n])
            .collect();
        check_finite("add_bias", &data)?;
        let rg = self.grad_flag(&[a, bias]);
        Ok(self.push(Op::AddBias(a, bias), Tensor { shape: sa, data }, rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&v| v.max(0.0)).collect(),
        };
        let rg = self.grad_flag(&[a]);
        self.push(Op::Relu(a), value, rg)
    }

    fn zip_with(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.same_shape(op_name, a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        check_finite(op_name, &data)?;
        let shape = self.value(a).shape.clone();
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(op, Tensor { shape, data }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let t = self.value(a);
        let data: Vec<f64> = t.data.iter().map(|&v| v * s).collect();
        check_finite("scale", &data)?;
        let shape = t.shape.clone();
        let rg = self.grad_flag(&[a]);
        Ok(self.push(Op::Scale(a, s), Tensor { shape, data }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data.iter().sum();
        check_finite("sum", &[s])?;
        let rg = self.grad_flag(&[a]);
        Ok(self.push(Op::Sum(a), Tensor::scalar(s), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.data.is_empty() {
            return Err(Error::invalid("mean of empty tensor"));
        }
        let s = t.data.iter().sum::<f64>() / t.data.len() as f64;
        check_finite("mean", &[s])?;
        let rg = self.grad_flag(&[a]);
        Ok(self.push(Op::Mean(a), Tensor::scalar(s), rg))
    }

    /// Mean softmax cross-entropy of `logits[n, C]` against integer labels.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let shape = t.shape.clone();
        if shape.len() != 2 || shape[0] != labels.len() || shape[0] == 0 {
            return Err(Error::ShapeMismatch {
                op: "softmax_xent",
                left: shape,
                right: vec![labels.len()],
            });
        }
        let (n, c) = (shape[0], shape[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for i in 0..n {
            let row = &t.data[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                probs[i * c + j] = e;
                z += e;
            }
            for p in &mut probs[i * c..(i + 1) * c] {
                *p /= z;
            }
            loss += z.ln() + max - row[labels[i]];
        }
        loss /= n as f64;
        check_finite("softmax_xent", &[loss])?;
        let rg = self.grad_flag(&[logits]);
        Ok(self.push(
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            Tensor::scalar(loss),
            rg,
        ))
    }

    /// Reverse sweep from a scalar loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[1]);
                    if self.nodes[a.0].requires_grad {
                        // dA = G B^T
                        let mut da = vec![0.0; m * k];
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let brow = &bv.data[p * n..(p + 1) * n];
                                da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                            }
                        }
                        accumulate(&mut grads, *a, da);
                    }
                    if self.nodes[b.0].requires_grad {
                        // dB = A^T G
                        let mut db = vec![0.0; k * n];
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let aip = av.data[i * k + p];
                                if aip == 0.0 {
                                    continue;
                                }
                                for (d, &gj) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *d += aip * gj;
                                }
                            }
                        }
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::AddBias(a, bias) => {
                    let n = self.value(*bias).len();
                    if self.nodes[bias.0].requires_grad {
                        let mut db = vec![0.0; n];
                        for (i, &v) in g.iter().enumerate() {
                            db[i % n] += v;
                        }
                        accumulate(&mut grads, *bias, db);
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::Relu(a) => {
                    let av = &self.value(*a).data;
                    let d = g
                        .iter()
                        .zip(av)
                        .map(|(&gi, &x)| if x > 0.0 { gi } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, d);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.iter().map(|v| -v).collect());
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                    let da = g.iter().zip(bv).map(|(x, y)| x * y).collect();
                    let db = g.iter().zip(av).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, s) => {
                    accumulate(&mut grads, *a, g.iter().map(|v| v * s).collect());
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    accumulate(&mut grads, *a, vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    accumulate(&mut grads, *a, vec![g[0] / n as f64; n]);
                }
                Op::SoftmaxXent {
                    logits,
                    labels,
                    probs,
                } => {
                    let c = self.value(*logits).shape[1];
                    let n = labels.len();
                    let scale = g[0] / n as f64;
                    let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (i, &l) in labels.iter().enumerate() {
                        d[i * c + l] -= scale;
                    }
                    accumulate(&mut grads, *logits, d);
                }
            }
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match (g, &node.op) {
                (Some(g), Op::Leaf) => Some(Tensor {
                    shape: node.value.shape.clone(),
                    data: g,
                }),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(g) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_definition() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn xent_uniform_logits_is_ln2() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2], &[0.0, 0.0]));
        let l = g.softmax_xent(x, &[0]).unwrap();
        assert!((g.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::new();
        let eye = g.constant(t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
        let a_data = [1.5, -2.0, 0.25, 3.0, 4.0, -1.0];
        let a = g.constant(t(&[3, 2], &a_data));
        let c = g.matmul(eye, a).unwrap();
        assert_eq!(g.value(c).data(), &a_data);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn square_derivative() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn xent_gradient_closed_form() {
        let c = 4;
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(vec![1, c]));
        let l = g.softmax_xent(x, &[2]).unwrap();
        let grads = g.backward(l).unwrap();
        let gx = grads.get(x).unwrap();
        for j in 0..c {
            let expected = 0.25 - if j == 2 { 1.0 } else { 0.0 };
            assert!((gx.data()[j] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_gradient_of_itself_is_one() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(1.25));
        let grads = g.backward(x).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 1.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(vec![2]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn sign_examples() {
        let s = sign(&t(&[3], &[-0.2, 0.0, 5.0]));
        assert_eq!(s.data(), &[-1.0, 0.0, 1.0]);
        let v = t(&[4], &[0.3, -7.0, 0.0, 1e-300]);
        let neg = v.map(|x| -x).unwrap();
        let lhs = sign(&neg);
        let rhs = sign(&v).map(|x| -x).unwrap();
        assert_eq!(lhs.data(), rhs.data());
    }

    #[test]
    fn clip_saturates_and_fixes_anchor() {
        let eps = 0.1;
        let anchor = t(&[3], &[0.5, 0.2, 0.95]);
        let cand = anchor.map(|v| v + 2.0 * eps).unwrap();
        let r = clip_to_ball(&cand, &anchor, eps, &Bounds::unit()).unwrap();
        assert!((r.data()[0] - 0.6).abs() < 1e-15);
        assert!((r.data()[1] - 0.3).abs() < 1e-15);
        // out of box: capped at 1.0
        assert_eq!(r.data()[2], 1.0);
        let fixed = clip_to_ball(&anchor, &anchor, eps, &Bounds::unit()).unwrap();
        assert_eq!(fixed, anchor);
    }

    #[test]
    fn clip_rejects_negative_epsilon() {
        let a = t(&[1], &[0.5]);
        assert!(clip_to_ball(&a, &a, -0.1, &Bounds::unit()).is_err());
    }

    #[test]
    fn tensor_rejects_non_finite() {
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
        assert!(Tensor::new(vec![2], vec![0.0]).is_err());
    }
}
