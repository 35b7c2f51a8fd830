//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] is built fresh for every forward pass. Parameters are read from
//! a borrowed [`ParamSet`] and never copied; their gradients are written into
//! a [`Grads`] buffer aligned with the parameter set.

use std::collections::HashMap;

use ndarray::{s, Array2, Axis};

use super::params::{Grads, ParamSet};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    Gather { param: usize, ids: Vec<usize> },
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    /// Elementwise product with a constant of the same shape or a `1 x m` row.
    MulConst(Var, Mat),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Transpose(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Unfold(Var, usize),
    MaxRows(Var, Vec<usize>),
    SoftmaxRows(Var),
    SquashRows(Var),
    Xent(Var, usize),
}

struct Node {
    op: Op,
    value: Option<Mat>,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_vars: HashMap<usize, Var>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
            param_vars: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Mat) -> Var {
        self.nodes.push(Node { op, value: Some(value) });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(i) => self.params.value(i),
            _ => node.value.as_ref().expect("non-parameter nodes own a value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// The scalar held by a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn input(&mut self, value: Mat) -> Var {
        self.push(Op::Input, value)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.input(Mat::zeros((rows, cols)))
    }

    /// Leaf for a named parameter. Panics on an unknown name, which is a
    /// programming error in model assembly.
    pub fn param(&mut self, name: &str) -> Var {
        let id = self
            .params
            .id(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"));
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node { op: Op::Param(id), value: None });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// Rows `ids` of a parameter matrix, as an `ids.len() x cols` node.
    pub fn gather(&mut self, name: &str, ids: &[usize]) -> Var {
        let id = self
            .params
            .id(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"));
        let value = self.params.value(id).select(Axis(0), ids);
        self.push(Op::Gather { param: id, ids: ids.to_vec() }, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v)
    }

    /// `a + row`, broadcasting a `1 x m` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let v = self.value(a) + self.value(row);
        self.push(Op::AddRow(a, row), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), v)
    }

    pub fn mul_const(&mut self, a: Var, c: Mat) -> Var {
        let v = self.value(a) * &c;
        self.push(Op::MulConst(a, c), v)
    }

    /// `alpha * a + beta`.
    pub fn affine(&mut self, a: Var, alpha: f64, beta: f64) -> Var {
        let v = self.value(a).mapv(|x| alpha * x + beta);
        self.push(Op::Affine(a, alpha), v)
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        self.affine(a, alpha, 0.0)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(Op::Transpose(a), v)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(Op::SliceCols(a, start), v)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(Op::SliceRows(a, start), v)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(Op::ConcatCols(parts.to_vec()), v)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("column counts agree");
        self.push(Op::ConcatRows(parts.to_vec()), v)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let flat: Vec<f64> = self.value(a).iter().copied().collect();
        let v = Mat::from_shape_vec((rows, cols), flat).expect("element count preserved");
        self.push(Op::Reshape(a), v)
    }

    /// Sliding windows over rows: output row `t` is rows `t..t+width` of `a`
    /// laid side by side. Requires `width <= rows`.
    pub fn unfold(&mut self, a: Var, width: usize) -> Var {
        let x = self.value(a);
        let (t, c) = x.dim();
        assert!(width >= 1 && width <= t, "unfold width {width} over {t} rows");
        let mut v = Mat::zeros((t - width + 1, width * c));
        for row in 0..=t - width {
            for k in 0..width {
                v.slice_mut(s![row, k * c..(k + 1) * c]).assign(&x.row(row + k));
            }
        }
        self.push(Op::Unfold(a, width), v)
    }

    /// Column-wise maximum over rows, `1 x m`. Ties go to the first row.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut arg = Vec::with_capacity(x.ncols());
        let mut v = Mat::zeros((1, x.ncols()));
        for (c, col) in x.columns().into_iter().enumerate() {
            let (mut best, mut bi) = (f64::NEG_INFINITY, 0);
            for (r, &val) in col.iter().enumerate() {
                if val > best {
                    best = val;
                    bi = r;
                }
            }
            v[[0, c]] = best;
            arg.push(bi);
        }
        self.push(Op::MaxRows(a, arg), v)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let z = row.sum();
            row.mapv_inplace(|x| x / z);
        }
        self.push(Op::SoftmaxRows(a), v)
    }

    /// Capsule squashing applied to each row.
    pub fn squash_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let n2 = row.dot(&row);
            let scale = if n2 > 0.0 { n2.sqrt() / (1.0 + n2) } else { 0.0 };
            row.mapv_inplace(|x| x * scale);
        }
        self.push(Op::SquashRows(a), v)
    }

    /// Cross-entropy of a `1 x k` logit row against class `gold`, as `1 x 1`.
    pub fn xent(&mut self, logits: Var, gold: usize) -> Var {
        let loss = xent_value(self.value(logits).row(0).as_slice().expect("contiguous"), gold);
        self.push(Op::Xent(logits, gold), Mat::from_elem((1, 1), loss))
    }

    /// Gradients of the scalar `loss` with respect to every parameter reached.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut grads = Grads::zeros_like(self.params);
        self.backward_into(loss, &mut grads);
        grads
    }

    /// Adds the gradients of `loss` into `out`.
    pub fn backward_into(&self, loss: Var, out: &mut Grads) {
        let n = self.nodes.len();
        let mut g: Vec<Option<Mat>> = (0..n).map(|_| None).collect();
        g[loss.0] = Some(Mat::ones(self.shape(loss)));

        fn acc(g: &mut [Option<Mat>], v: Var, contrib: Mat) {
            match &mut g[v.0] {
                Some(existing) => *existing += &contrib,
                slot => *slot = Some(contrib),
            }
        }

        for i in (0..n).rev() {
            let Some(grad) = g[i].take() else { continue };
            let node = &self.nodes[i];
            let out_val = node.value.as_ref();
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    if self.params.is_trainable(*id) {
                        out.add(*id, &grad);
                    }
                }
                Op::Gather { param, ids } => {
                    if self.params.is_trainable(*param) {
                        out.scatter_rows(*param, ids, &grad);
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = grad.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&grad);
                    acc(&mut g, *a, ga);
                    acc(&mut g, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut g, *b, grad.clone());
                    acc(&mut g, *a, grad);
                }
                Op::AddRow(a, row) => {
                    let gr = grad.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut g, *row, gr);
                    acc(&mut g, *a, grad);
                }
                Op::Mul(a, b) => {
                    let ga = &grad * self.value(*b);
                    let gb = &grad * self.value(*a);
                    acc(&mut g, *a, ga);
                    acc(&mut g, *b, gb);
                }
                Op::MulConst(a, c) => acc(&mut g, *a, grad * c),
                Op::Affine(a, alpha) => acc(&mut g, *a, grad * *alpha),
                Op::Sigmoid(a) => {
                    let y = out_val.expect("owned");
                    acc(&mut g, *a, grad * &y.mapv(|y| y * (1.0 - y)));
                }
                Op::Tanh(a) => {
                    let y = out_val.expect("owned");
                    acc(&mut g, *a, grad * &y.mapv(|y| 1.0 - y * y));
                }
                Op::Transpose(a) => acc(&mut g, *a, grad.t().to_owned()),
                Op::SliceCols(a, start) => {
                    let mut full = Mat::zeros(self.shape(*a));
                    full.slice_mut(s![.., *start..*start + grad.ncols()]).assign(&grad);
                    acc(&mut g, *a, full);
                }
                Op::SliceRows(a, start) => {
                    let mut full = Mat::zeros(self.shape(*a));
                    full.slice_mut(s![*start..*start + grad.nrows(), ..]).assign(&grad);
                    acc(&mut g, *a, full);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        acc(&mut g, p, grad.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let h = self.shape(p).0;
                        acc(&mut g, p, grad.slice(s![off..off + h, ..]).to_owned());
                        off += h;
                    }
                }
                Op::Reshape(a) => {
                    let flat: Vec<f64> = grad.iter().copied().collect();
                    acc(&mut g, *a, Mat::from_shape_vec(self.shape(*a), flat).expect("same size"));
                }
                Op::Unfold(a, width) => {
                    let (t, c) = self.shape(*a);
                    let mut full = Mat::zeros((t, c));
                    for row in 0..grad.nrows() {
                        for k in 0..*width {
                            let mut dst = full.row_mut(row + k);
                            dst += &grad.slice(s![row, k * c..(k + 1) * c]);
                        }
                    }
                    acc(&mut g, *a, full);
                }
                Op::MaxRows(a, arg) => {
                    let mut full = Mat::zeros(self.shape(*a));
                    for (c, &r) in arg.iter().enumerate() {
                        full[[r, c]] = grad[[0, c]];
                    }
                    acc(&mut g, *a, full);
                }
                Op::SoftmaxRows(a) => {
                    let y = out_val.expect("owned");
                    let mut ga = Mat::zeros(y.dim());
                    for ((gy, yr), mut dst) in grad.rows().into_iter().zip(y.rows()).zip(ga.rows_mut()) {
                        let dot = gy.dot(&yr);
                        for ((d, &gv), &yv) in dst.iter_mut().zip(gy).zip(yr) {
                            *d = yv * (gv - dot);
                        }
                    }
                    acc(&mut g, *a, ga);
                }
                Op::SquashRows(a) => {
                    let x = self.value(*a);
                    let mut ga = Mat::zeros(x.dim());
                    for ((xr, gr), mut dst) in x.rows().into_iter().zip(grad.rows()).zip(ga.rows_mut()) {
                        let n2 = xr.dot(&xr);
                        if n2 == 0.0 {
                            continue;
                        }
                        let n = n2.sqrt();
                        let scale = n / (1.0 + n2);
                        // d scale / d x = (1 - n^2) / (1 + n^2)^2 * x / n
                        let k = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2) * n) * gr.dot(&xr);
                        for ((d, &gv), &xv) in dst.iter_mut().zip(gr).zip(xr) {
                            *d = scale * gv + k * xv;
                        }
                    }
                    acc(&mut g, *a, ga);
                }
                Op::Xent(logits, gold) => {
                    let x = self.value(*logits);
                    let mut p = x.clone();
                    let m = p.fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
                    p.mapv_inplace(|v| (v - m).exp());
                    let z = p.sum();
                    p.mapv_inplace(|v| v / z);
                    p[[0, *gold]] -= 1.0;
                    acc(&mut g, *logits, p * grad[[0, 0]]);
                }
            }
        }
        out.canonicalize_zeros();
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln softmax(logits)[gold]` with max subtraction.
pub fn xent_value(logits: &[f64], gold: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if logits[gold] == m {
        // ln(1 + sum_{j != gold} e^(x_j - x_gold)) keeps precision near zero loss
        let rest: f64 = logits
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != gold)
            .map(|(_, &x)| (x - m).exp())
            .sum();
        rest.ln_1p()
    } else {
        let z: f64 = logits.iter().map(|&x| (x - m).exp()).sum();
        m + z.ln() - logits[gold]
    }
}
