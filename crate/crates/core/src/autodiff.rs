//! Minimal tape-based reverse-mode automatic differentiation.
//!
//! Every value is a dense `f64` matrix (vectors are `1 x d` rows, scalars
//! `1 x 1`). Nodes are appended to a [`Tape`] in creation order, so node ids
//! are already a topological order and the backward pass is a single reverse
//! sweep over them.
//!
//! Only the operations needed by the losses are provided; there is no
//! broadcasting.

use std::cell::{Ref, RefCell};

use ndarray::{concatenate, s, Array2, Axis};

use crate::error::{Error, Result};

/// Arguments of `log` are clamped to at least this value.
pub const LOG_FLOOR: f64 = 1e-12;

/// Cosine similarity refuses inputs whose norm is below this value.
pub const NORM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf { requires_grad: bool },
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    Log(usize),
    ScaledSigmoid(usize, f64),
    Cosine(usize, usize),
    NormDiff(usize, usize),
    Sum(usize),
    SliceCols { src: usize, start: usize },
    ConcatCols(usize, usize),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Append-only record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    // Accumulated gradients of leaves that require them, indexed by node id.
    leaf_grads: RefCell<Vec<Option<Array2<f64>>>>,
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

fn check_finite(value: &Array2<f64>, what: &str) -> Result<()> {
    if value.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite value produced by {what}")))
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `1 / (1 + exp(-alpha * x))`.
pub fn scaled_sigmoid_f64(x: f64, alpha: f64) -> f64 {
    stable_sigmoid(alpha * x)
}

/// Cosine similarity of two equally sized slices.
pub fn cosine_f64(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            op: "cosine",
            left: (1, a.len()),
            right: (1, b.len()),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < NORM_FLOOR || nb < NORM_FLOOR {
        return Err(Error::Numeric(format!(
            "cosine of near-zero vector (norms {na:e}, {nb:e})"
        )));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

fn accumulate(grads: &mut [Option<Array2<f64>>], id: usize, g: Array2<f64>) {
    match &mut grads[id] {
        Some(acc) => *acc += &g,
        slot => *slot = Some(g),
    }
}

/// `x W` for a single row `x`, as a sum of scaled rows of `W`. Avoids the
/// packing cost of a general matrix product.
fn row_times(x: &Array2<f64>, w: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((1, w.ncols()));
    for (xk, wk) in x.row(0).iter().zip(w.rows()) {
        if *xk != 0.0 {
            out.row_mut(0).scaled_add(*xk, &wk);
        }
    }
    out
}

/// Adds the outer product `x^T g` of two rows into the gradient slot `id`.
fn accumulate_outer(grads: &mut [Option<Array2<f64>>], id: usize, x: &Array2<f64>, g: &Array2<f64>) {
    let acc = grads[id].get_or_insert_with(|| Array2::zeros((x.ncols(), g.ncols())));
    for (xk, mut row) in x.row(0).iter().zip(acc.rows_mut()) {
        if *xk != 0.0 {
            row.scaled_add(*xk, &g.row(0));
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array2<f64>, op: Op, what: &str) -> Result<Var<'_>> {
        check_finite(&value, what)?;
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        self.leaf_grads.borrow_mut().push(None);
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    /// A trainable leaf; its gradient is kept after [`Tape::backward`].
    pub fn param(&self, value: Array2<f64>) -> Result<Var<'_>> {
        self.push(value, Op::Leaf { requires_grad: true }, "param")
    }

    /// A leaf that receives no gradient.
    pub fn constant(&self, value: Array2<f64>) -> Result<Var<'_>> {
        self.push(value, Op::Leaf { requires_grad: false }, "constant")
    }

    /// Row vector constant from a slice.
    pub fn row(&self, values: &[f64]) -> Result<Var<'_>> {
        self.constant(Array2::from_shape_vec((1, values.len()), values.to_vec()).unwrap())
    }

    pub fn scalar(&self, value: f64) -> Result<Var<'_>> {
        self.constant(Array2::from_elem((1, 1), value))
    }

    /// Sum of a list of scalars; zero for an empty list.
    pub fn sum_scalars<'t>(&'t self, terms: &[Var<'t>]) -> Result<Var<'t>> {
        match terms.split_first() {
            None => self.scalar(0.0),
            Some((first, rest)) => rest.iter().try_fold(*first, |acc, t| acc.add(*t)),
        }
    }

    /// Clears accumulated leaf gradients.
    pub fn zero_grad(&self) {
        for g in self.leaf_grads.borrow_mut().iter_mut() {
            *g = None;
        }
    }

    /// Propagates d(root)/d(node) to every node that `root` depends on and
    /// adds the result into the gradients of trainable leaves. Calling it
    /// twice without [`Tape::zero_grad`] accumulates.
    ///
    /// Returns the number of nodes visited; each reachable node is visited
    /// exactly once.
    pub fn backward(&self, root: Var<'_>) -> Result<usize> {
        let nodes = self.nodes.borrow();
        let root_shape = nodes[root.id].value.dim();
        if root_shape != (1, 1) {
            return Err(Error::NonScalarRoot(root_shape));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; root.id + 1];
        grads[root.id] = Some(Array2::ones((1, 1)));
        let mut leaf_grads = self.leaf_grads.borrow_mut();
        let mut visited = 0;

        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            visited += 1;
            let node = &nodes[id];
            let val = |i: usize| &nodes[i].value;
            match node.op {
                Op::Leaf { requires_grad } => {
                    if requires_grad {
                        accumulate(&mut leaf_grads, id, g);
                    }
                }
                Op::MatMul(a, b) if g.nrows() == 1 => {
                    let ga = Array2::from_shape_fn((1, val(b).nrows()), |(_, k)| val(b).row(k).dot(&g.row(0)));
                    accumulate(&mut grads, a, ga);
                    accumulate_outer(&mut grads, b, val(a), &g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&val(b).t());
                    let gb = val(a).t().dot(&g);
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, -g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * val(b);
                    let gb = g * val(a);
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::Neg(a) => accumulate(&mut grads, a, -g),
                Op::Scale(a, c) => accumulate(&mut grads, a, g * c),
                Op::Tanh(a) => {
                    let local = node.value.mapv(|y| 1.0 - y * y);
                    accumulate(&mut grads, a, g * local);
                }
                Op::Sigmoid(a) => {
                    let local = node.value.mapv(|y| y * (1.0 - y));
                    accumulate(&mut grads, a, g * local);
                }
                Op::ScaledSigmoid(a, alpha) => {
                    let local = node.value.mapv(|y| alpha * y * (1.0 - y));
                    accumulate(&mut grads, a, g * local);
                }
                Op::Log(a) => {
                    let local = val(a).mapv(|x| if x > LOG_FLOOR { 1.0 / x } else { 0.0 });
                    accumulate(&mut grads, a, g * local);
                }
                Op::Cosine(a, b) => {
                    let gs = g[[0, 0]];
                    let (va, vb) = (val(a), val(b));
                    let na = va.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let nb = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let cos = node.value[[0, 0]];
                    let ga = (vb / (na * nb) - va * (cos / (na * na))) * gs;
                    let gb = (va / (na * nb) - vb * (cos / (nb * nb))) * gs;
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::NormDiff(a, b) => {
                    let norm = node.value[[0, 0]];
                    let ga = if norm > 0.0 {
                        (val(a) - val(b)) * (g[[0, 0]] / norm)
                    } else {
                        Array2::zeros(val(a).dim())
                    };
                    accumulate(&mut grads, b, -&ga);
                    accumulate(&mut grads, a, ga);
                }
                Op::Sum(a) => {
                    accumulate(&mut grads, a, Array2::from_elem(val(a).dim(), g[[0, 0]]));
                }
                Op::SliceCols { src, start } => {
                    let mut full = Array2::zeros(val(src).dim());
                    full.slice_mut(s![.., start..start + g.ncols()]).assign(&g);
                    accumulate(&mut grads, src, full);
                }
                Op::ConcatCols(a, b) => {
                    let split = val(a).ncols();
                    accumulate(&mut grads, a, g.slice(s![.., ..split]).to_owned());
                    accumulate(&mut grads, b, g.slice(s![.., split..]).to_owned());
                }
            }
        }
        Ok(visited)
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Ref<'t, Array2<f64>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().dim()
    }

    /// The single entry of a `1 x 1` value.
    pub fn item(&self) -> f64 {
        let v = self.value();
        debug_assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }

    /// Accumulated gradient of a trainable leaf.
    pub fn grad(&self) -> Option<Array2<f64>> {
        self.tape.leaf_grads.borrow()[self.id].clone()
    }

    fn same_shape(&self, other: &Var<'t>, op: &'static str) -> Result<()> {
        let (l, r) = (self.shape(), other.shape());
        if l != r {
            return Err(Error::Dimension { op, left: l, right: r });
        }
        Ok(())
    }

    fn unary(&self, op: Op, what: &str, f: impl Fn(f64) -> f64) -> Result<Var<'t>> {
        let out = self.value().mapv(f);
        self.tape.push(out, op, what)
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let (l, r) = (self.shape(), other.shape());
        if l.1 != r.0 {
            return Err(Error::Dimension { op: "matmul", left: l, right: r });
        }
        let out = if l.0 == 1 {
            row_times(&self.value(), &other.value())
        } else {
            self.value().dot(&*other.value())
        };
        self.tape.push(out, Op::MatMul(self.id, other.id), "matmul")
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(&other, "add")?;
        let out = &*self.value() + &*other.value();
        self.tape.push(out, Op::Add(self.id, other.id), "add")
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(&other, "sub")?;
        let out = &*self.value() - &*other.value();
        self.tape.push(out, Op::Sub(self.id, other.id), "sub")
    }

    /// Elementwise product.
    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(&other, "mul")?;
        let out = &*self.value() * &*other.value();
        self.tape.push(out, Op::Mul(self.id, other.id), "mul")
    }

    pub fn neg(&self) -> Result<Var<'t>> {
        self.unary(Op::Neg(self.id), "negate", |x| -x)
    }

    pub fn scale(&self, c: f64) -> Result<Var<'t>> {
        self.unary(Op::Scale(self.id, c), "scale", |x| x * c)
    }

    pub fn tanh(&self) -> Result<Var<'t>> {
        self.unary(Op::Tanh(self.id), "tanh", f64::tanh)
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.unary(Op::Sigmoid(self.id), "sigmoid", stable_sigmoid)
    }

    /// Natural log of `max(x, LOG_FLOOR)`.
    pub fn ln(&self) -> Result<Var<'t>> {
        self.unary(Op::Log(self.id), "log", |x| x.max(LOG_FLOOR).ln())
    }

    /// `1 / (1 + exp(-alpha * x))`, elementwise.
    pub fn scaled_sigmoid(&self, alpha: f64) -> Result<Var<'t>> {
        if alpha.is_nan() || alpha <= 0.0 {
            return Err(Error::Invalid(format!("scaled sigmoid needs alpha > 0, got {alpha}")));
        }
        self.unary(Op::ScaledSigmoid(self.id, alpha), "scaled_sigmoid", |x| {
            scaled_sigmoid_f64(x, alpha)
        })
    }

    /// Cosine similarity of two equally shaped values, as a scalar.
    pub fn cosine(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(&other, "cosine")?;
        let c = {
            let (a, b) = (self.value(), other.value());
            cosine_f64(a.as_slice().unwrap(), b.as_slice().unwrap())?
        };
        self.tape
            .push(Array2::from_elem((1, 1), c), Op::Cosine(self.id, other.id), "cosine")
    }

    /// Euclidean norm of `self - other`; the subgradient at equality is zero.
    pub fn norm_diff(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(&other, "l2_norm_diff")?;
        let n = {
            let (a, b) = (self.value(), other.value());
            a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        };
        self.tape
            .push(Array2::from_elem((1, 1), n), Op::NormDiff(self.id, other.id), "l2_norm_diff")
    }

    /// Sum of all entries.
    pub fn sum(&self) -> Result<Var<'t>> {
        let total = self.value().sum();
        self.tape.push(Array2::from_elem((1, 1), total), Op::Sum(self.id), "sum")
    }

    /// Columns `start..start + width`.
    pub fn slice_cols(&self, start: usize, width: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        if start + width > shape.1 {
            return Err(Error::Dimension {
                op: "slice_cols",
                left: shape,
                right: (shape.0, start + width),
            });
        }
        let out = self.value().slice(s![.., start..start + width]).to_owned();
        self.tape.push(out, Op::SliceCols { src: self.id, start }, "slice_cols")
    }

    /// `[self | other]`, joined along columns.
    pub fn concat_cols(&self, other: Var<'t>) -> Result<Var<'t>> {
        let (l, r) = (self.shape(), other.shape());
        if l.0 != r.0 {
            return Err(Error::Dimension { op: "concat_cols", left: l, right: r });
        }
        let out = concatenate(Axis(1), &[self.value().view(), other.value().view()]).unwrap();
        self.tape.push(out, Op::ConcatCols(self.id, other.id), "concat_cols")
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use ndarray::Array2;

    /// Central finite-difference gradient of `f` at `x`.
    pub fn numeric_grad(x: &Array2<f64>, h: f64, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
        let mut g = Array2::zeros(x.dim());
        let mut probe = x.clone();
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let orig = probe[[r, c]];
            probe[[r, c]] = orig + h;
            let up = f(&probe);
            probe[[r, c]] = orig - h;
            let down = f(&probe);
            probe[[r, c]] = orig;
            g[[r, c]] = (up - down) / (2.0 * h);
        }
        g
    }

    pub fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    pub fn max_rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        assert_eq!(a.dim(), b.dim());
        a.iter().zip(b).map(|(x, y)| rel_err(*x, *y)).fold(0.0, f64::max)
    }
}
