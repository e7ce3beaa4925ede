//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Tape`] records a computation over flat `f64` arrays. Parameters are not
//! copied onto the tape: affine ops refer to them by [`ParamId`] and read the
//! [`ParamStore`] directly, and [`Tape::backward`] accumulates their gradients
//! into the store. Build a fresh tape per example.

mod params;

pub use params::{config_digest, AdamConfig, Checkpoint, Linear, Param, ParamId, ParamStore};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Affine { layer: Linear, x: Var },
    SparseAffine { layer: Linear, idx: Vec<usize>, val: Vec<f64> },
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Reshape(Var),
    SumSquares(Var),
    GaussianKl { mu: Var, logvar: Var },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    shape: (usize, usize),
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(expected: impl ToString, got: impl ToString) -> Error {
    Error::Shape { expected: expected.to_string(), got: got.to_string() }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        let n = value.len();
        self.nodes.push(Node { value, shape: (1, n), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].shape
    }

    pub fn len(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    /// Constant input; gradients flowing into it are discarded.
    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// `y = x·W + b`.
    pub fn affine(&mut self, store: &ParamStore, layer: Linear, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if xv.len() != layer.inputs {
            return Err(shape_err(layer.inputs, xv.len()));
        }
        let w = &store.get(layer.w).value;
        let mut y = store.get(layer.b).value.clone();
        for (i, &xi) in xv.iter().enumerate() {
            if xi != 0.0 {
                let row = &w[i * layer.outputs..(i + 1) * layer.outputs];
                y.iter_mut().zip(row).for_each(|(yo, wo)| *yo += xi * wo);
            }
        }
        Ok(self.push(y, Op::Affine { layer, x }))
    }

    /// Affine map of a constant sparse input given as `(index, value)` pairs.
    pub fn sparse_affine(&mut self, store: &ParamStore, layer: Linear, idx: Vec<usize>, val: Vec<f64>) -> Result<Var> {
        if idx.len() != val.len() {
            return Err(shape_err(idx.len(), val.len()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= layer.inputs) {
            return Err(shape_err(format!("index < {}", layer.inputs), bad));
        }
        let w = &store.get(layer.w).value;
        let mut y = store.get(layer.b).value.clone();
        for (&i, &xi) in idx.iter().zip(&val) {
            let row = &w[i * layer.outputs..(i + 1) * layer.outputs];
            y.iter_mut().zip(row).for_each(|(yo, wo)| *yo += xi * wo);
        }
        Ok(self.push(y, Op::SparseAffine { layer, idx, val }))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).iter().map(|v| v.tanh()).collect();
        self.push(y, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).iter().map(|v| v.max(0.0)).collect();
        self.push(y, Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let y = self.value(x).iter().map(|v| v.exp()).collect();
        self.push(y, Op::Exp(x))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() {
            return Err(shape_err(av.len(), bv.len()));
        }
        Ok(av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.zip_with(a, b, |x, y| x + y)?;
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.zip_with(a, b, |x, y| x - y)?;
        Ok(self.push(y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.zip_with(a, b, |x, y| x * y)?;
        Ok(self.push(y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let y = self.value(x).iter().map(|v| v * k).collect();
        self.push(y, Op::Scale(x, k))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let y = parts.iter().flat_map(|&p| self.value(p).iter().copied()).collect();
        self.push(y, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.len() {
            return Err(shape_err(format!("at least {}", start + len), xv.len()));
        }
        let y = xv[start..start + len].to_vec();
        Ok(self.push(y, Op::Slice { x, start }))
    }

    /// Reinterprets `x` as a `rows × cols` array; values are unchanged.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        if rows * cols != self.len(x) {
            return Err(shape_err(rows * cols, self.len(x)));
        }
        let v = self.push(self.value(x).to_vec(), Op::Reshape(x));
        self.nodes[v.0].shape = (rows, cols);
        Ok(v)
    }

    /// Σ xᵢ².
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().map(|v| v * v).sum();
        self.push(vec![s], Op::SumSquares(x))
    }

    /// Mean of squared differences.
    pub fn mean_squared_error(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let n = self.len(d).max(1) as f64;
        let s = self.sum_squares(d);
        Ok(self.scale(s, 1.0 / n))
    }

    /// KL divergence of `N(μ, diag(exp(logvar)))` from the standard normal.
    pub fn gaussian_kl(&mut self, mu: Var, logvar: Var) -> Result<Var> {
        let terms = self.zip_with(mu, logvar, |m, lv| lv.exp() + m * m - 1.0 - lv)?;
        let kl = 0.5 * terms.iter().sum::<f64>();
        Ok(self.push(vec![kl], Op::GaussianKl { mu, logvar }))
    }

    /// `μ + exp(logvar / 2) · ε` with `ε` a constant.
    pub fn reparameterize(&mut self, mu: Var, logvar: Var, eps: Vec<f64>) -> Result<Var> {
        let half = self.scale(logvar, 0.5);
        let sigma = self.exp(half);
        let e = self.input(eps);
        let noise = self.mul(sigma, e)?;
        self.add(mu, noise)
    }

    /// Reverse pass from a scalar `loss`, accumulating parameter gradients
    /// into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.len(loss) != 1 {
            return Err(Error::NonScalarLoss(self.len(loss)));
        }
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(loss.0 + 1);
        for n in &self.nodes[..=loss.0] {
            grads.push(vec![0.0; n.value.len()]);
        }
        grads[loss.0][0] = 1.0;
        for k in (0..=loss.0).rev() {
            let g = std::mem::take(&mut grads[k]);
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let node = &self.nodes[k];
            match &node.op {
                Op::Leaf => {}
                Op::Affine { layer, x } => {
                    let xv = self.value(*x);
                    {
                        let gb = &mut store.get_mut(layer.b).grad;
                        gb.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                    }
                    let gw = &mut store.get_mut(layer.w).grad;
                    for (i, &xi) in xv.iter().enumerate() {
                        if xi != 0.0 {
                            let row = &mut gw[i * layer.outputs..(i + 1) * layer.outputs];
                            row.iter_mut().zip(&g).for_each(|(a, go)| *a += xi * go);
                        }
                    }
                    let w = &store.get(layer.w).value;
                    let gx = &mut grads[x.0];
                    for (i, gxi) in gx.iter_mut().enumerate() {
                        let row = &w[i * layer.outputs..(i + 1) * layer.outputs];
                        *gxi += row.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                Op::SparseAffine { layer, idx, val } => {
                    {
                        let gb = &mut store.get_mut(layer.b).grad;
                        gb.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                    }
                    let gw = &mut store.get_mut(layer.w).grad;
                    for (&i, &xi) in idx.iter().zip(val) {
                        let row = &mut gw[i * layer.outputs..(i + 1) * layer.outputs];
                        row.iter_mut().zip(&g).for_each(|(a, go)| *a += xi * go);
                    }
                }
                Op::Tanh(x) => {
                    let gx = &mut grads[x.0];
                    for ((a, go), y) in gx.iter_mut().zip(&g).zip(&node.value) {
                        *a += go * (1.0 - y * y);
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let gx = &mut grads[x.0];
                    for ((a, go), xi) in gx.iter_mut().zip(&g).zip(xv) {
                        if *xi > 0.0 {
                            *a += go;
                        }
                    }
                }
                Op::Exp(x) => {
                    let gx = &mut grads[x.0];
                    for ((a, go), y) in gx.iter_mut().zip(&g).zip(&node.value) {
                        *a += go * y;
                    }
                }
                Op::Add(a, b) => {
                    add_into(&mut grads[a.0], &g, 1.0);
                    add_into(&mut grads[b.0], &g, 1.0);
                }
                Op::Sub(a, b) => {
                    add_into(&mut grads[a.0], &g, 1.0);
                    add_into(&mut grads[b.0], &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga: Vec<f64> = g.iter().zip(bv).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(av).map(|(x, y)| x * y).collect();
                    add_into(&mut grads[a.0], &ga, 1.0);
                    add_into(&mut grads[b.0], &gb, 1.0);
                }
                Op::Scale(x, s) => add_into(&mut grads[x.0], &g, *s),
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.len(*p);
                        add_into(&mut grads[p.0], &g[off..off + n], 1.0);
                        off += n;
                    }
                }
                Op::Slice { x, start } => {
                    add_into(&mut grads[x.0][*start..*start + g.len()], &g, 1.0);
                }
                Op::Reshape(x) => add_into(&mut grads[x.0], &g, 1.0),
                Op::SumSquares(x) => {
                    let xv = self.value(*x);
                    let gx = &mut grads[x.0];
                    for (a, xi) in gx.iter_mut().zip(xv) {
                        *a += 2.0 * xi * g[0];
                    }
                }
                Op::GaussianKl { mu, logvar } => {
                    let gm: Vec<f64> = self.value(*mu).iter().map(|m| m * g[0]).collect();
                    let gl: Vec<f64> = self.value(*logvar).iter().map(|lv| 0.5 * (lv.exp() - 1.0) * g[0]).collect();
                    add_into(&mut grads[mu.0], &gm, 1.0);
                    add_into(&mut grads[logvar.0], &gl, 1.0);
                }
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64], k: f64) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += k * b);
}
