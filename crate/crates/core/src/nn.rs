//! Small reverse-mode substrate for the forecasting graph.
//!
//! Values are batched row-major matrices (`batch x features`). Every op
//! appends a node to a [`Tape`]; [`Tape::backward`] walks the nodes in
//! reverse and accumulates adjoints, writing parameter gradients into a
//! [`Gradients`] buffer with exactly one entry per parameter tensor.
//! Only the ops the model and loss need are provided.

use std::path::Path;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ParamId = usize;

/// Named trainable tensors. Biases are stored as `1 x n`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Array2<f64>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.tensors[id]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn ids(&self) -> std::ops::Range<ParamId> {
        0..self.tensors.len()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Array2<f64>> {
        self.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect()
    }
}

/// Gradient buffer aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Array2<f64>>,
}

impl Gradients {
    pub fn zeros(params: &ParamStore) -> Self {
        Self {
            grads: params.zeros_like(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.grads[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.grads[id]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Handle to a recorded value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Dense { x: Var, weight: ParamId, bias: ParamId },
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    RowMean(Var),
    RowStd(Var),
    Destandardize { raw: Var, mean: Var, std: Var },
    ScaleRows { x: Var, scale: Array1<f64> },
    Sum(Var),
    /// Scalar produced outside the tape with its gradient w.r.t. `input`.
    External { input: Var, grad: Array2<f64>, branches: Vec<bool> },
}

struct Node {
    op: Op,
    value: Array2<f64>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: Array2<f64>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Input, value)
    }

    pub fn dense(&mut self, params: &ParamStore, layer: &DenseLayer, x: Var) -> Result<Var> {
        let input = self.value(x);
        if input.ncols() != layer.in_dim {
            return Err(Error::shape(
                format!("dense input ({})", params.name(layer.weight)),
                layer.in_dim,
                input.ncols(),
            ));
        }
        let mut out = input.dot(&params.get(layer.weight).t());
        out += params.get(layer.bias);
        Ok(self.push(
            Op::Dense {
                x,
                weight: layer.weight,
                bias: layer.bias,
            },
            out,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| if v > 0.0 { v } else { 0.0 });
        self.push(Op::Relu(x), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "add")?;
        let out = self.value(a) + self.value(b);
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "sub")?;
        let out = self.value(a) - self.value(b);
        Ok(self.push(Op::Sub(a, b), out))
    }

    /// Per-row mean, `batch x 1`.
    pub fn row_mean(&mut self, x: Var) -> Var {
        let out = row_means(self.value(x)).insert_axis(Axis(1));
        self.push(Op::RowMean(x), out)
    }

    /// Per-row population standard deviation, `batch x 1`.
    pub fn row_std(&mut self, x: Var) -> Var {
        let value = self.value(x);
        let means = row_means(value);
        let n = value.ncols() as f64;
        let out = Array1::from_iter(value.outer_iter().zip(means.iter()).map(|(row, &mu)| {
            (row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n).sqrt()
        }))
        .insert_axis(Axis(1));
        self.push(Op::RowStd(x), out)
    }

    /// `raw * std + mean`, with `std` and `mean` broadcast along each row.
    pub fn destandardize(&mut self, raw: Var, mean: Var, std: Var) -> Var {
        let mut out = self.value(raw) * self.value(std);
        out += self.value(mean);
        self.push(Op::Destandardize { raw, mean, std }, out)
    }

    /// Multiply row `i` by the constant `scale[i]`.
    pub fn scale_rows(&mut self, x: Var, scale: Array1<f64>) -> Var {
        let out = self.value(x) * &scale.view().insert_axis(Axis(1));
        self.push(Op::ScaleRows { x, scale }, out)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(x).sum());
        self.push(Op::Sum(x), out)
    }

    /// Record a scalar computed outside the tape together with its analytic
    /// gradient w.r.t. `input`. `branches` records which side of each
    /// piecewise kink was taken and feeds [`Tape::kink_signature`].
    pub fn external_scalar(&mut self, input: Var, value: f64, grad: Array2<f64>, branches: Vec<bool>) -> Result<Var> {
        if grad.dim() != self.value(input).dim() {
            return Err(Error::shape(
                "external scalar gradient",
                format!("{:?}", self.value(input).dim()),
                format!("{:?}", grad.dim()),
            ));
        }
        Ok(self.push(Op::External { input, grad, branches }, Array2::from_elem((1, 1), value)))
    }

    fn check_same(&self, a: Var, b: Var, op: &str) -> Result<()> {
        let (da, db) = (self.value(a).dim(), self.value(b).dim());
        if da != db {
            return Err(Error::shape(op, format!("{da:?}"), format!("{db:?}")));
        }
        Ok(())
    }

    /// Which side of every non-differentiable point the recorded forward
    /// pass took: ReLU inputs `> 0` and external-scalar branches.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => sig.extend(self.value(*x).iter().map(|&v| v > 0.0)),
                Op::External { branches, .. } => sig.extend_from_slice(branches),
                _ => {}
            }
        }
        sig
    }

    /// Reverse pass from the scalar `loss`. A tape can be differentiated once.
    pub fn backward(&mut self, loss: Var, params: &ParamStore) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let (rows, cols) = self.value(loss).dim();
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarLoss { rows, cols });
        }
        self.consumed = true;

        let mut grads = Gradients::zeros(params);
        let mut adj: Vec<Option<Array2<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Array2::ones((1, 1)));

        fn accumulate(adj: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut adj[v.0] {
                Some(a) => *a += &g,
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::Dense { x, weight, bias } => {
                    let input = self.value(*x);
                    *grads.get_mut(*weight) += &g.t().dot(input);
                    *grads.get_mut(*bias) += &g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut adj, *x, g.dot(params.get(*weight)));
                }
                Op::Relu(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx).and(self.value(*x)).for_each(|gi, &xi| {
                        if xi <= 0.0 {
                            *gi = 0.0;
                        }
                    });
                    accumulate(&mut adj, *x, gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, -&g);
                    accumulate(&mut adj, *a, g);
                }
                Op::RowMean(x) => {
                    let n = self.value(*x).ncols();
                    let gx = broadcast_cols(&g, n) / n as f64;
                    accumulate(&mut adj, *x, gx);
                }
                Op::RowStd(x) => {
                    let input = self.value(*x);
                    let std = &self.nodes[idx].value;
                    let means = row_means(input);
                    let n = input.ncols() as f64;
                    let mut gx = Array2::zeros(input.raw_dim());
                    for (r, mut row) in gx.outer_iter_mut().enumerate() {
                        let s = std[[r, 0]];
                        // d std / d x is undefined at std == 0; use 0.
                        if s > 0.0 {
                            let coef = g[[r, 0]] / (n * s);
                            for (c, v) in row.iter_mut().enumerate() {
                                *v = coef * (input[[r, c]] - means[r]);
                            }
                        }
                    }
                    accumulate(&mut adj, *x, gx);
                }
                Op::Destandardize { raw, mean, std } => {
                    let raw_v = self.value(*raw);
                    let std_v = self.value(*std);
                    let g_std = (&g * raw_v).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let g_mean = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let g_raw = &g * std_v;
                    accumulate(&mut adj, *raw, g_raw);
                    accumulate(&mut adj, *std, g_std);
                    accumulate(&mut adj, *mean, g_mean);
                }
                Op::ScaleRows { x, scale } => {
                    let gx = &g * &scale.view().insert_axis(Axis(1));
                    accumulate(&mut adj, *x, gx);
                }
                Op::Sum(x) => {
                    let dim = self.value(*x).raw_dim();
                    accumulate(&mut adj, *x, Array2::from_elem(dim, g[[0, 0]]));
                }
                Op::External { input, grad, .. } => {
                    accumulate(&mut adj, *input, grad * g[[0, 0]]);
                }
            }
        }
        Ok(grads)
    }
}

fn row_means(x: &Array2<f64>) -> Array1<f64> {
    let n = x.ncols() as f64;
    x.sum_axis(Axis(1)) / n
}

fn broadcast_cols(col: &Array2<f64>, n: usize) -> Array2<f64> {
    let rows = col.nrows();
    Array2::from_shape_fn((rows, n), |(r, _)| col[[r, 0]])
}

/// Fully connected layer `out = W x + b`, `W` stored `out x in`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Weight initialisation scheme for a new layer.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`, zero bias.
    HeUniform,
    /// Uniform in `±limit`, zero bias.
    Uniform(f64),
    Zeros,
}

impl DenseLayer {
    pub fn new<R: Rng>(
        params: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let limit = match init {
            Init::HeUniform => (6.0 / in_dim as f64).sqrt(),
            Init::Uniform(l) => l,
            Init::Zeros => 0.0,
        };
        let w = Array2::from_shape_fn((out_dim, in_dim), |_| {
            if limit > 0.0 {
                rng.random_range(-limit..limit)
            } else {
                0.0
            }
        });
        let weight = params.add(format!("{name}.weight"), w);
        let bias = params.add(format!("{name}.bias"), Array2::zeros((1, out_dim)));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, x: Var) -> Result<Var> {
        tape.dense(params, self, x)
    }
}

/// Adam moments and hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Gradients are checked for finiteness
/// before any parameter is touched.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape("adam_step", params.len(), grads.len()));
    }
    for id in params.ids() {
        if grads.get(id).dim() != params.get(id).dim() {
            return Err(Error::shape(
                format!("adam_step gradient for '{}'", params.name(id)),
                format!("{:?}", params.get(id).dim()),
                format!("{:?}", grads.get(id).dim()),
            ));
        }
        if grads.get(id).iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(params.name(id).to_string()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (lr, eps) = (state.lr, state.eps);
    for id in params.ids() {
        Zip::from(params.get_mut(id))
            .and(grads.get(id))
            .and(&mut state.m[id])
            .and(&mut state.v[id])
            .for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct BlockCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_near_kink: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub blocks: Vec<BlockCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.blocks.iter().filter(|b| !b.passed).map(|b| b.name.as_str()).collect()
    }
}

/// Compare tape gradients against central finite differences.
///
/// `record` builds a fresh tape for the given parameters and returns it with
/// its scalar loss. The step is `h = 1e-5 * max(1, |theta|)`. Coordinates
/// whose `±h` perturbation changes the kink signature are skipped. The
/// relative error is `|a - n| / max(|a|, |n|, 1e-6 * max(1, |f|))`.
pub fn grad_check<F>(params: &ParamStore, mut record: F, tolerance: f64) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(Tape, Var)>,
{
    let (mut tape, loss) = record(params)?;
    let f0 = tape.value(loss)[[0, 0]];
    if !f0.is_finite() {
        return Err(Error::NonFinite(format!("grad_check base value {f0}")));
    }
    let base_sig = tape.kink_signature();
    let analytic = tape.backward(loss, params)?;
    let floor = 1e-6 * f0.abs().max(1.0);

    let mut probe = params.clone();
    let mut eval = |p: &ParamStore| -> Result<(f64, Vec<bool>)> {
        let (t, l) = record(p)?;
        let v = t.value(l)[[0, 0]];
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("grad_check probe value {v}")));
        }
        Ok((v, t.kink_signature()))
    };

    let mut blocks = Vec::with_capacity(params.len());
    for id in params.ids() {
        let mut max_rel: f64 = 0.0;
        let (mut checked, mut skipped) = (0, 0);
        for k in 0..params.get(id).len() {
            let theta = params.get(id).as_slice().expect("contiguous")[k];
            let h = 1e-5 * theta.abs().max(1.0);
            probe.get_mut(id).as_slice_mut().expect("contiguous")[k] = theta + h;
            let (fp, sp) = eval(&probe)?;
            probe.get_mut(id).as_slice_mut().expect("contiguous")[k] = theta - h;
            let (fm, sm) = eval(&probe)?;
            probe.get_mut(id).as_slice_mut().expect("contiguous")[k] = theta;
            if sp != base_sig || sm != base_sig {
                skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.get(id).as_slice().expect("contiguous")[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            max_rel = max_rel.max(rel);
            checked += 1;
        }
        blocks.push(BlockCheck {
            name: params.name(id).to_string(),
            max_rel_error: max_rel,
            checked,
            skipped_near_kink: skipped,
            passed: max_rel < tolerance,
        });
    }
    Ok(GradCheckReport { tolerance, blocks })
}

pub const CHECKPOINT_FORMAT: &str = "nbeats-star-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// JSON parameter container. Layout is documented in the README.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_params(params: &ParamStore, config_hash: &str, seed: u64) -> Self {
        let tensors = params
            .ids()
            .map(|id| {
                let t = params.get(id);
                TensorRecord {
                    name: params.name(id).to_string(),
                    shape: [t.nrows(), t.ncols()],
                    data: t.iter().copied().collect(),
                }
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
            seed,
            tensors,
        }
    }

    /// Copy tensors into `params`, which must have the same names and shapes.
    pub fn restore_into(&self, params: &mut ParamStore) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format {} v{}", self.format, self.version)));
        }
        if self.tensors.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors in checkpoint, model expects {}",
                self.tensors.len(),
                params.len()
            )));
        }
        for (id, rec) in params.ids().zip(&self.tensors) {
            let t = params.get(id);
            if rec.name != params.name(id) || rec.shape != [t.nrows(), t.ncols()] {
                return Err(Error::Checkpoint(format!(
                    "tensor '{}' {:?} does not match '{}' {:?}",
                    rec.name,
                    rec.shape,
                    params.name(id),
                    t.dim()
                )));
            }
            let arr = Array2::from_shape_vec((rec.shape[0], rec.shape[1]), rec.data.clone())
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            *params.get_mut(id) = arr;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use ndarray::array;

    fn layer_with(params: &mut ParamStore, w: Array2<f64>, b: Array2<f64>) -> DenseLayer {
        let (out_dim, in_dim) = w.dim();
        let weight = params.add("l.weight", w);
        let bias = params.add("l.bias", b);
        DenseLayer {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    #[test]
    fn dense_identity_and_sum() {
        let mut p = ParamStore::new();
        let id = layer_with(&mut p, Array2::eye(2), Array2::zeros((1, 2)));
        let mut tape = Tape::new();
        let x = tape.input(array![[3.0, -1.0]]);
        let y = id.forward(&mut tape, &p, x).unwrap();
        assert_eq!(tape.value(y), &array![[3.0, -1.0]]);

        let mut p = ParamStore::new();
        let l = layer_with(&mut p, array![[1.0, 1.0]], array![[1.0]]);
        let mut tape = Tape::new();
        let x = tape.input(array![[2.0, 3.0]]);
        let y = l.forward(&mut tape, &p, x).unwrap();
        assert_eq!(tape.value(y), &array![[6.0]]);
    }

    #[test]
    fn dense_batch_matches_single() {
        let mut rng = rng_from(3);
        let mut p = ParamStore::new();
        let l = DenseLayer::new(&mut p, "l", 3, 2, Init::HeUniform, &mut rng);
        *p.get_mut(l.bias) = array![[0.5, -0.25]];
        let batch = Array2::from_shape_fn((4, 3), |(r, c)| (r * 3 + c) as f64 * 0.1 - 0.4);
        let mut tape = Tape::new();
        let xb = tape.input(batch.clone());
        let yb = l.forward(&mut tape, &p, xb).unwrap();
        for r in 0..4 {
            let xr = tape.input(batch.row(r).to_owned().insert_axis(Axis(0)));
            let yr = l.forward(&mut tape, &p, xr).unwrap();
            assert_eq!(tape.value(yr).row(0), tape.value(yb).row(r));
        }
    }

    #[test]
    fn dense_shape_mismatch() {
        let mut p = ParamStore::new();
        let l = layer_with(&mut p, Array2::eye(2), Array2::zeros((1, 2)));
        let mut tape = Tape::new();
        let x = tape.input(array![[1.0, 2.0, 3.0]]);
        assert!(matches!(l.forward(&mut tape, &p, x), Err(Error::Shape { .. })));
    }

    #[test]
    fn relu_values() {
        let mut tape = Tape::new();
        let x = tape.input(array![[-1.0, 0.0, 2.0]]);
        let y = tape.relu(x);
        assert_eq!(tape.value(y), &array![[0.0, 0.0, 2.0]]);
        let x = tape.input(array![[-1.0, -3.0]]);
        let y = tape.relu(x);
        assert_eq!(tape.value(y), &array![[0.0, 0.0]]);
    }

    #[test]
    fn relu_gradient_matches_finite_difference() {
        for (x0, expected) in [(-1.0, 0.0), (2.0, 1.0)] {
            let mut p = ParamStore::new();
            let l = layer_with(&mut p, array![[1.0]], array![[0.0]]);
            let mut tape = Tape::new();
            let x = tape.input(array![[x0]]);
            let z = l.forward(&mut tape, &p, x).unwrap();
            let r = tape.relu(z);
            let loss = tape.sum(r);
            let g = tape.backward(loss, &p).unwrap();
            // d relu(w x)/ d b at w=1, b=0
            let f = |b: f64| (x0 + b).max(0.0);
            let fd = (f(1e-5) - f(-1e-5)) / 2e-5;
            assert!((g.get(l.bias)[[0, 0]] - expected).abs() < 1e-12);
            assert!((fd - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_of_summed_dense() {
        let mut p = ParamStore::new();
        let l = layer_with(&mut p, array![[0.3, -0.2, 0.1], [1.0, 2.0, -1.0]], array![[0.0, 0.0]]);
        let unused = p.add("unused", array![[1.0]]);
        let x_val = array![[0.5, -1.5, 2.0]];
        let mut tape = Tape::new();
        let x = tape.input(x_val.clone());
        let y = l.forward(&mut tape, &p, x).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss, &p).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(g.get(l.weight)[[i, j]], x_val[[0, j]]);
            }
        }
        assert_eq!(g.get(unused), &array![[0.0]]);
        assert_eq!(g.len(), p.len());
        assert!(matches!(tape.backward(loss, &p), Err(Error::TapeConsumed)));
    }

    #[test]
    fn loss_independent_of_bias() {
        let mut p = ParamStore::new();
        let l = layer_with(&mut p, array![[1.0, 2.0]], array![[3.0]]);
        let mut tape = Tape::new();
        let x = tape.input(array![[1.0, 1.0]]);
        // std of a 1-wide row is constant 0, so the bias does not matter
        let y = l.forward(&mut tape, &p, x).unwrap();
        let s = tape.row_std(y);
        let loss = tape.sum(s);
        let g = tape.backward(loss, &p).unwrap();
        assert_eq!(g.get(l.bias), &array![[0.0]]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let p = ParamStore::new();
        let mut tape = Tape::new();
        let x = tape.input(array![[1.0, 2.0]]);
        assert!(matches!(tape.backward(x, &p), Err(Error::NonScalarLoss { rows: 1, cols: 2 })));
    }

    fn random_graph(p: &ParamStore, layers: &[DenseLayer], x_val: &Array2<f64>) -> Result<(Tape, Var)> {
        let mut tape = Tape::new();
        let x = tape.input(x_val.clone());
        let h = layers[0].forward(&mut tape, p, x)?;
        let h = tape.relu(h);
        let raw = layers[1].forward(&mut tape, p, h)?;
        let mean = tape.row_mean(x);
        let std = tape.row_std(x);
        let d = tape.destandardize(raw, mean, std);
        let r = tape.sub(x, d)?;
        let r = tape.relu(r);
        let h2 = layers[0].forward(&mut tape, p, r)?;
        let h2 = tape.relu(h2);
        let raw2 = layers[1].forward(&mut tape, p, h2)?;
        let m2 = tape.row_mean(r);
        let s2 = tape.row_std(r);
        let d2 = tape.destandardize(raw2, m2, s2);
        let out = tape.add(d, d2)?;
        let out = tape.scale_rows(out, array![2.0, 0.5, 1.5]);
        // smooth scalar: sum of squares via an external node
        let v = tape.value(out).clone();
        let value = v.iter().map(|a| a * a).sum();
        tape.external_scalar(out, value, v * 2.0, Vec::new()).map(|l| (tape, l))
    }

    #[test]
    fn random_graph_passes_finite_differences() {
        let mut rng = rng_from(11);
        let mut p = ParamStore::new();
        let l0 = DenseLayer::new(&mut p, "fc", 4, 5, Init::HeUniform, &mut rng);
        let l1 = DenseLayer::new(&mut p, "head", 5, 4, Init::Uniform(0.5), &mut rng);
        *p.get_mut(l0.bias) = Array2::from_shape_fn((1, 5), |_| rng.random_range(-0.2..0.2));
        let x = Array2::from_shape_fn((3, 4), |_| rng.random_range(0.1..1.0));
        let report = grad_check(&p, |p| random_graph(p, &[l0, l1], &x), 1e-4).unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.blocks.iter().all(|b| b.checked > 0));
    }

    #[test]
    fn quadratic_on_dense_passes_tight() {
        let mut rng = rng_from(5);
        let mut p = ParamStore::new();
        let l = DenseLayer::new(&mut p, "dense", 3, 2, Init::HeUniform, &mut rng);
        let x = array![[0.2, -0.7, 1.1], [1.0, 0.3, -0.4]];
        let report = grad_check(
            &p,
            |p| {
                let mut tape = Tape::new();
                let xi = tape.input(x.clone());
                let y = l.forward(&mut tape, p, xi)?;
                let v = tape.value(y).clone();
                let value = 0.5 * v.iter().map(|a| a * a).sum::<f64>();
                let loss = tape.external_scalar(y, value, v, Vec::new())?;
                Ok((tape, loss))
            },
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn deliberate_gradient_bug_is_reported() {
        let mut rng = rng_from(5);
        let mut p = ParamStore::new();
        let l = DenseLayer::new(&mut p, "buggy", 3, 2, Init::HeUniform, &mut rng);
        let x = array![[0.2, -0.7, 1.1]];
        let report = grad_check(
            &p,
            |p| {
                let mut tape = Tape::new();
                let xi = tape.input(x.clone());
                let y = l.forward(&mut tape, p, xi)?;
                let v = tape.value(y).clone();
                let value = 0.5 * v.iter().map(|a| a * a).sum::<f64>();
                // wrong by a factor of two
                let loss = tape.external_scalar(y, value, v * 2.0, Vec::new())?;
                Ok((tape, loss))
            },
            1e-4,
        )
        .unwrap();
        assert!(!report.passed());
        assert!(report.failing().contains(&"buggy.weight"));
    }

    #[test]
    fn grad_check_rejects_non_finite() {
        let p = ParamStore::new();
        let res = grad_check(
            &p,
            |_| {
                let mut tape = Tape::new();
                let x = tape.input(array![[f64::NAN]]);
                let l = tape.sum(x);
                Ok((tape, l))
            },
            1e-4,
        );
        assert!(matches!(res, Err(Error::NonFinite(_))));
    }

    fn one_param(value: f64) -> (ParamStore, AdamState) {
        let mut p = ParamStore::new();
        p.add("theta", array![[value]]);
        let s = AdamState::new(&p, 0.001);
        (p, s)
    }

    fn grad_of(p: &ParamStore, g: f64) -> Gradients {
        let mut grads = Gradients::zeros(p);
        grads.get_mut(0)[[0, 0]] = g;
        grads
    }

    #[test]
    fn adam_zero_gradient_and_first_step() {
        let (mut p, mut s) = one_param(0.5);
        { let g = grad_of(&p, 0.0); adam_step(&mut p, &g, &mut s) }.unwrap();
        assert_eq!(p.get(0)[[0, 0]], 0.5);
        assert_eq!(s.step, 1);

        let (mut p, mut s) = one_param(0.0);
        { let g = grad_of(&p, 1.0); adam_step(&mut p, &g, &mut s) }.unwrap();
        // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((p.get(0)[[0, 0]] - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_descends_and_is_scale_invariant() {
        let (mut p, mut s) = one_param(1.0);
        for _ in 0..100 {
            let g = grad_of(&p, -2.0);
            adam_step(&mut p, &g, &mut s).unwrap();
        }
        assert!(p.get(0)[[0, 0]] > 1.0);

        let (mut a, mut sa) = one_param(0.0);
        let (mut b, mut sb) = one_param(0.0);
        { let g = grad_of(&a, 0.3); adam_step(&mut a, &g, &mut sa) }.unwrap();
        { let g = grad_of(&b, 3.0); adam_step(&mut b, &g, &mut sb) }.unwrap();
        assert!((a.get(0)[[0, 0]] - b.get(0)[[0, 0]]).abs() < 1e-10);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let (mut p, mut s) = one_param(1.0);
        let err = { let g = grad_of(&p, f64::INFINITY); adam_step(&mut p, &g, &mut s) }.unwrap_err();
        assert!(err.to_string().contains("theta"));
        assert_eq!(s.step, 0);
        assert_eq!(p.get(0)[[0, 0]], 1.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = rng_from(1);
        let mut p = ParamStore::new();
        DenseLayer::new(&mut p, "a", 3, 4, Init::HeUniform, &mut rng);
        let ck = Checkpoint::from_params(&p, "abc", 42);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ck);
        let mut q = p.clone();
        q.get_mut(0).fill(0.0);
        loaded.restore_into(&mut q).unwrap();
        assert_eq!(p, q);

        let mut other = ParamStore::new();
        DenseLayer::new(&mut other, "a", 2, 4, Init::HeUniform, &mut rng);
        assert!(loaded.restore_into(&mut other).is_err());
    }
}
