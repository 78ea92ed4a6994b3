//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Values are `f64`
//! matrices; a row vector is a `1×n` matrix and a scalar is `1×1`. Calling
//! [`Tape::backward`] on a scalar node walks the tape in reverse and returns
//! the gradient of every registered parameter.

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Result, StatError};
use crate::params::{Gradients, ParamId, ParameterStore};

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Clamp applied to probabilities inside log-losses.
pub const PROB_CLAMP: f64 = 1e-7;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulConst(Var, Array2<f64>),
    Scale(Var, f64),
    Gelu(Var),
    SoftmaxRows(Var),
    /// Row-wise (x - mean) / sqrt(var + eps); stores 1/sqrt(var + eps).
    NormalizeRows(Var, Vec<f64>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Var, Var),
    GatherRows(Var, Vec<usize>),
    ScatterRows(Var, Vec<usize>, Var),
    Sum(Var),
    MeanSquaredError(Var, Array2<f64>),
    /// Stores sigmoid probabilities and targets.
    BinaryCrossEntropy(Var, Vec<f64>, Vec<f64>),
    /// Stores softmax probabilities and the label.
    CrossEntropy(Var, Vec<f64>, usize),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    param: Option<ParamId>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op, param: None });
        Var(self.nodes.len() - 1)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A trainable leaf bound to a parameter of `store`.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        let v = self.push(store.get(id).clone(), Op::Leaf);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        self.push(value, Op::MatMulNt(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push(value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    /// Broadcast-add a `1×m` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) + self.value(row);
        self.push(value, Op::AddRow(a, row))
    }

    /// Broadcast-multiply every row of `a` by a `1×m` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) * self.value(row);
        self.push(value, Op::MulRow(a, row))
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Array2<f64>) -> Var {
        let value = self.value(a) * &c;
        self.push(value, Op::MulConst(a, c))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        self.push(value, Op::Scale(a, factor))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()));
        self.push(value, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Zero-mean, unit-variance rows (layer normalization without affine).
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let mut value = self.value(a).clone();
        let mut inv = Vec::with_capacity(value.nrows());
        for mut row in value.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.fold(0.0, |acc, &v| acc + (v - mean) * (v - mean)) / n;
            let is = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv.push(is);
        }
        self.push(value, Op::NormalizeRows(a, inv))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(value, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let value =
            ndarray::concatenate(Axis(0), &[self.value(a).view(), self.value(b).view()]).expect("column counts agree");
        self.push(value, Op::ConcatRows(a, b))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let value = self.value(a).select(Axis(0), rows);
        self.push(value, Op::GatherRows(a, rows.to_vec()))
    }

    /// Copy of `base` with `rows` replaced by the `1×m` row `src`.
    pub fn scatter_rows(&mut self, base: Var, rows: &[usize], src: Var) -> Var {
        let mut value = self.value(base).clone();
        let row = self.value(src).row(0).to_owned();
        for &r in rows {
            value.row_mut(r).assign(&row);
        }
        self.push(value, Op::ScatterRows(base, rows.to_vec(), src))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Mean over all elements of (prediction - target)².
    pub fn mean_squared_error(&mut self, pred: Var, target: Array2<f64>) -> Var {
        let diff = self.value(pred) - &target;
        let loss = diff.mapv(|d| d * d).mean().unwrap_or(0.0);
        self.push(Array2::from_elem((1, 1), loss), Op::MeanSquaredError(pred, target))
    }

    /// Mean binary cross-entropy of sigmoid(logits) against 0/1 targets.
    pub fn binary_cross_entropy(&mut self, logits: Var, targets: &[f64]) -> Var {
        let probs: Vec<f64> = self.value(logits).iter().map(|&z| sigmoid(z)).collect();
        let loss = bce(&probs, targets);
        self.push(Array2::from_elem((1, 1), loss), Op::BinaryCrossEntropy(logits, probs, targets.to_vec()))
    }

    /// Cross-entropy of softmax over a `1×M` logit row against one label.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Var {
        let probs = softmax(self.value(logits).as_slice().expect("contiguous logits"));
        let loss = -probs[label].max(PROB_CLAMP).ln();
        self.push(Array2::from_elem((1, 1), loss), Op::CrossEntropy(logits, probs, label))
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf.
    /// Parameters off the loss path get exact zeros.
    pub fn backward(&self, loss: Var, store: &ParameterStore) -> Result<Gradients> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(StatError::BackwardBeforeForward);
        }
        if self.value(loss).dim() != (1, 1) {
            return Err(StatError::DimensionMismatch("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));
        let mut out = Gradients::zeros_like(store);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    if let Some(id) = node.param {
                        *out.get_mut(id) += &g;
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulNt(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.t().to_owned()),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    accumulate(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let grow = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *a, &g * self.value(*row));
                    accumulate(&mut grads, *row, grow);
                }
                Op::MulConst(a, c) => accumulate(&mut grads, *a, g * c),
                Op::Scale(a, f) => accumulate(&mut grads, *a, g * *f),
                Op::Gelu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|g, &x| {
                        let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                        let d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        *g *= d;
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = g;
                    for (mut grow, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot = grow.dot(&yrow);
                        Zip::from(&mut grow).and(&yrow).for_each(|g, &y| *g = y * (*g - dot));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::NormalizeRows(a, inv) => {
                    let y = &node.value;
                    let mut ga = g;
                    for ((mut grow, yrow), &is) in ga.rows_mut().into_iter().zip(y.rows()).zip(inv) {
                        let n = grow.len() as f64;
                        let mean_g = grow.sum() / n;
                        let mean_gy = grow.dot(&yrow) / n;
                        Zip::from(&mut grow).and(&yrow).for_each(|g, &y| *g = is * (*g - mean_g - y * mean_gy));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        accumulate(&mut grads, *p, g.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::ConcatRows(a, b) => {
                    let n = self.value(*a).nrows();
                    accumulate(&mut grads, *a, g.slice(s![..n, ..]).to_owned());
                    accumulate(&mut grads, *b, g.slice(s![n.., ..]).to_owned());
                }
                Op::GatherRows(a, rows) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    for (src, &r) in rows.iter().enumerate() {
                        let mut dst = ga.row_mut(r);
                        dst += &g.row(src);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ScatterRows(base, rows, src) => {
                    let mut gsrc = Array2::zeros((1, g.ncols()));
                    let mut gbase = g;
                    for &r in rows {
                        let mut acc = gsrc.row_mut(0);
                        acc += &gbase.row(r);
                        gbase.row_mut(r).fill(0.0);
                    }
                    accumulate(&mut grads, *src, gsrc);
                    accumulate(&mut grads, *base, gbase);
                }
                Op::Sum(a) => {
                    let dim = self.value(*a).dim();
                    accumulate(&mut grads, *a, Array2::from_elem(dim, g[[0, 0]]));
                }
                Op::MeanSquaredError(pred, target) => {
                    let n = target.len() as f64;
                    let ga = (self.value(*pred) - target) * (2.0 * g[[0, 0]] / n);
                    accumulate(&mut grads, *pred, ga);
                }
                Op::BinaryCrossEntropy(logits, probs, targets) => {
                    let n = probs.len() as f64;
                    let dim = self.value(*logits).dim();
                    let flat: Vec<f64> =
                        probs
                            .iter()
                            .zip(targets)
                            .map(|(&p, &y)| {
                                if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
                                    g[[0, 0]] * (p - y) / n
                                } else {
                                    0.0
                                }
                            })
                            .collect();
                    accumulate(&mut grads, *logits, Array2::from_shape_vec(dim, flat).expect("shape"));
                }
                Op::CrossEntropy(logits, probs, label) => {
                    let dim = self.value(*logits).dim();
                    let ga = if probs[*label] >= PROB_CLAMP {
                        let flat = probs
                            .iter()
                            .enumerate()
                            .map(|(k, &p)| g[[0, 0]] * (p - if k == *label { 1.0 } else { 0.0 }))
                            .collect();
                        Array2::from_shape_vec(dim, flat).expect("shape")
                    } else {
                        Array2::zeros(dim)
                    };
                    accumulate(&mut grads, *logits, ga);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7].
pub fn bce(probs: &[f64], targets: &[f64]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(targets)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    total / probs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn linear_sum_weight_gradient_broadcasts_inputs() {
        let mut store = ParameterStore::new();
        let w = store.register("w", array![[0.3, -0.1, 0.5], [0.2, 0.7, -0.4]]).unwrap();
        let x = array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.25]];
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.param(&store, w);
        let y = tape.matmul(xv, wv);
        let loss = tape.sum(y);
        let g = tape.backward(loss, &store).unwrap();
        // d/dW_ij sum(XW) = sum_n X_ni
        let col_sums = x.sum_axis(Axis(0));
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(g.get(w)[[i, j]], col_sums[i]);
            }
        }
    }

    #[test]
    fn unused_parameters_get_zero_gradient() {
        let mut store = ParameterStore::new();
        let used = store.register("used", array![[2.0]]).unwrap();
        let unused = store.register("unused", array![[5.0, 1.0]]).unwrap();
        let mut tape = Tape::new();
        let u = tape.param(&store, used);
        let _ = tape.param(&store, unused);
        let sq = tape.mul_row(u, u);
        let loss = tape.sum(sq);
        let g = tape.backward(loss, &store).unwrap();
        assert_eq!(g.get(used)[[0, 0]], 4.0);
        assert!(g.get(unused).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_on_empty_tape_fails() {
        let tape = Tape::new();
        let store = ParameterStore::new();
        assert!(matches!(tape.backward(Var(0), &store), Err(StatError::BackwardBeforeForward)));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let a = tape.constant(array![[1.0, 2.0, 3.0], [-100.0, 0.0, 100.0]]);
        let s = tape.softmax_rows(a);
        for row in tape.value(s).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_bce_is_ln2() {
        let mut tape = Tape::new();
        let z = tape.constant(Array2::zeros((4, 1)));
        let l = tape.binary_cross_entropy(z, &[1.0, 0.0, 1.0, 0.0]);
        assert!((tape.scalar(l) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
