//! Plain ReLU multilayer perceptron with Adam training.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DIVERGENCE_LOSS: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct ReluNet {
    dims: Vec<usize>,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

#[derive(Serialize, Deserialize)]
struct NetJson {
    dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Serialize for ReluNet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        NetJson {
            dims: self.dims.clone(),
            weights: self
                .weights
                .iter()
                .map(|w| w.transpose().iter().copied().collect())
                .collect(),
            biases: self.biases.iter().map(|b| b.iter().copied().collect()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ReluNet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = NetJson::deserialize(d)?;
        if j.dims.len() < 2 || j.weights.len() != j.dims.len() - 1 || j.biases.len() != j.dims.len() - 1 {
            return Err(serde::de::Error::custom("model: dims, weights and biases are inconsistent"));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, (w, b)) in j.weights.iter().zip(&j.biases).enumerate() {
            let (rows, cols) = (j.dims[l + 1], j.dims[l]);
            if w.len() != rows * cols || b.len() != rows {
                return Err(serde::de::Error::custom(format!("model: layer {l} has the wrong shape")));
            }
            weights.push(DMatrix::from_row_slice(rows, cols, w));
            biases.push(DVector::from_column_slice(b));
        }
        let net = ReluNet { dims: j.dims, weights, biases };
        net.validate().map_err(serde::de::Error::custom)?;
        Ok(net)
    }
}

/// Number of weights and biases of an MLP with layer sizes `dims`.
pub fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl ReluNet {
    pub fn new(weights: Vec<DMatrix<f64>>, biases: Vec<DVector<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Validation("network needs at least one layer".into()));
        }
        let mut dims = vec![weights[0].ncols()];
        dims.extend(weights.iter().map(|w| w.nrows()));
        let net = ReluNet { dims, weights, biases };
        net.validate()?;
        Ok(net)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Validation(format!("invalid layer sizes {dims:?}")));
        }
        ReluNet::new(
            dims.windows(2).map(|w| DMatrix::zeros(w[1], w[0])).collect(),
            dims[1..].iter().map(|&n| DVector::zeros(n)).collect(),
        )
    }

    /// He initialization: weights `N(0, 2/fan_in)`, zero biases.
    pub fn he_init(dims: &[usize], seed: u64) -> Result<Self> {
        let mut net = ReluNet::zeros(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in &mut net.weights {
            let normal = Normal::new(0.0, (2.0 / w.ncols() as f64).sqrt()).expect("positive variance");
            // Fill row-major so the stream order matches the file layout.
            for i in 0..w.nrows() {
                for j in 0..w.ncols() {
                    w[(i, j)] = normal.sample(&mut rng);
                }
            }
        }
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.dims.len() - 1 || self.biases.len() != self.weights.len() {
            return Err(Error::Validation("layer count mismatch".into()));
        }
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if w.shape() != (self.dims[l + 1], self.dims[l]) || b.len() != self.dims[l + 1] {
                return Err(Error::Validation(format!("layer {l} shape does not chain")));
            }
            if !w.iter().chain(b.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite { layer: l });
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }
    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }
    pub fn biases(&self) -> &[DVector<f64>] {
        &self.biases
    }
    pub fn n_in(&self) -> usize {
        self.dims[0]
    }
    pub fn n_out(&self) -> usize {
        *self.dims.last().unwrap()
    }
    /// Number of hidden layers.
    pub fn depth(&self) -> usize {
        self.dims.len() - 2
    }
    pub fn param_count(&self) -> usize {
        param_count(&self.dims)
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.n_in() {
            return Err(Error::Dimension { expected: self.n_in(), got: x.len() });
        }
        let mut a = x.clone();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            a = w * a + b;
            if !a.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { layer: l });
            }
            if l < last {
                a.apply(|v| *v = v.max(0.0));
            }
        }
        Ok(a)
    }

    /// Forward pass on the columns of `x`.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let acts = self.activations(x)?;
        Ok(acts.into_iter().last().unwrap())
    }

    /// Layer outputs `[x, a_1, ..., a_L]`; hidden entries are post-ReLU.
    fn activations(&self, x: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        if x.nrows() != self.n_in() {
            return Err(Error::Dimension { expected: self.n_in(), got: x.nrows() });
        }
        let last = self.weights.len() - 1;
        let mut acts = Vec::with_capacity(self.weights.len() + 1);
        acts.push(x.clone());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * acts.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += b;
            }
            if !z.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { layer: l });
            }
            if l < last {
                z.apply(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        Ok(acts)
    }

    /// Mean over samples of `|f(x) - y|^2` and its gradient. The ReLU
    /// subgradient at zero is taken as zero.
    pub fn backward(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<(f64, Gradients)> {
        self.backward_loss(x, y, Loss::Mse)
    }

    pub fn backward_loss(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, loss: Loss) -> Result<(f64, Gradients)> {
        let n = x.ncols();
        if n == 0 {
            return Err(Error::Validation("empty batch".into()));
        }
        if y.shape() != (self.n_out(), n) {
            return Err(Error::Dimension { expected: self.n_out(), got: y.nrows() });
        }
        let acts = self.activations(x)?;
        let out = acts.last().unwrap();
        let diff = out - y;
        let (loss, mut delta) = loss.value_and_grad(diff);
        let layers = self.weights.len();
        let mut gw = vec![DMatrix::zeros(0, 0); layers];
        let mut gb = vec![DVector::zeros(0); layers];
        for l in (0..layers).rev() {
            gw[l] = &delta * acts[l].transpose();
            gb[l] = delta.column_sum();
            if l > 0 {
                let mut prev = self.weights[l].transpose() * &delta;
                prev.zip_apply(&acts[l], |d, a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = prev;
            }
        }
        Ok((loss, Gradients { weights: gw, biases: gb }))
    }

    pub fn mse(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
        let out = self.forward_batch(x)?;
        Ok((out - y).norm_squared() / x.ncols().max(1) as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Training objective on the residual columns `e_j = f(x_j) - y_j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `mean |e_j|^2`.
    Mse,
    /// `ln (mean |e_j|^p)^{1/p}`; tends to `ln max |e_j|` as `p` grows.
    LogLp(f64),
}

impl Loss {
    fn value_and_grad(self, diff: DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let n = diff.ncols() as f64;
        match self {
            Loss::Mse => (diff.norm_squared() / n, diff * (2.0 / n)),
            Loss::LogLp(p) => {
                let norms: Vec<f64> = diff.column_iter().map(|c| c.norm()).collect();
                let m = norms.iter().copied().fold(0.0, f64::max);
                if m == 0.0 {
                    return (f64::NEG_INFINITY, diff);
                }
                let s: f64 = norms.iter().map(|e| (e / m).powf(p)).sum();
                let value = m.ln() + ((s / n).ln()) / p;
                let mut g = diff;
                for (j, mut col) in g.column_iter_mut().enumerate() {
                    col *= (norms[j] / m).powf(p - 2.0) / (m * m * s);
                }
                (value, g)
            }
        }
    }
}

/// Largest Euclidean error over the columns; a sampled lower bound of the
/// true supremum.
pub fn sup_error(net: &ReluNet, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    let out = net.forward_batch(x)?;
    Ok((out - y).column_iter().map(|c| c.norm()).fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lr_decay: f64,
    pub val_fraction: f64,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch: 64,
            epochs: 200,
            seed: 0,
            lr_decay: 1.0,
            val_fraction: 0.1,
            patience: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Validation("train.lr must be positive".into()));
        }
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::Validation("train.batch and train.epochs must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Validation("train.lr_decay must lie in (0, 1]".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Validation("train.val_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub net: ReluNet,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
}

struct Adam {
    m: Gradients,
    v: Gradients,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(net: &ReluNet) -> Self {
        let zero = Gradients {
            weights: net.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            biases: net.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        };
        Adam { m: zero.clone(), v: zero, t: 0 }
    }

    fn step(&mut self, net: &mut ReluNet, g: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        };
        for l in 0..net.weights.len() {
            let (w, m, v, gw) = (&mut net.weights[l], &mut self.m.weights[l], &mut self.v.weights[l], &g.weights[l]);
            for i in 0..w.len() {
                update(&mut w[i], &mut m[i], &mut v[i], gw[i]);
            }
            let (b, m, v, gb) = (&mut net.biases[l], &mut self.m.biases[l], &mut self.v.biases[l], &g.biases[l]);
            for i in 0..b.len() {
                update(&mut b[i], &mut m[i], &mut v[i], gb[i]);
            }
        }
    }
}

fn gather(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |r, c| m[(r, idx[c])])
}

/// Train on the columns of `x` (inputs) and `y` (targets). A seeded shuffle
/// holds out `val_fraction` of the samples; the weights with the lowest
/// validation MSE are returned.
pub fn train(x: &DMatrix<f64>, y: &DMatrix<f64>, dims: &[usize], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = x.ncols();
    if n < 2 || y.ncols() != n {
        return Err(Error::Validation("training set needs at least two matching samples".into()));
    }
    if dims.first() != Some(&x.nrows()) || dims.last() != Some(&y.nrows()) {
        return Err(Error::Validation(format!(
            "dims {dims:?} do not match data ({} inputs, {} outputs)",
            x.nrows(),
            y.nrows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net0 = ReluNet::he_init(dims, cfg.seed)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = ((n as f64 * cfg.val_fraction).round() as usize).clamp(1, n - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let (xv, yv) = (gather(x, val_idx), gather(y, val_idx));
    let (xt, yt) = (gather(x, train_idx), gather(y, train_idx));
    let mut train_order: Vec<usize> = (0..xt.ncols()).collect();

    let mut net = net0;
    let mut adam = Adam::new(&net);
    let mut best = (net.clone(), net.mse(&xv, &yv)?, 0usize);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut lr = cfg.lr;
    let mut since_best = 0;
    for epoch in 1..=cfg.epochs {
        train_order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in train_order.chunks(cfg.batch) {
            let (bx, by) = (gather(&xt, chunk), gather(&yt, chunk));
            let (loss, g) = net.backward(&bx, &by)?;
            if !loss.is_finite() || loss > DIVERGENCE_LOSS {
                return Err(Error::Divergence { epoch, loss });
            }
            sum += loss * chunk.len() as f64;
            adam.step(&mut net, &g, lr);
        }
        let train_mse = sum / xt.ncols() as f64;
        let val_mse = net.mse(&xv, &yv)?;
        if !val_mse.is_finite() || val_mse > DIVERGENCE_LOSS {
            return Err(Error::Divergence { epoch, loss: val_mse });
        }
        history.push(EpochRecord { epoch, lr, train_mse, val_mse });
        if val_mse < best.1 {
            best = (net.clone(), val_mse, epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
        lr *= cfg.lr_decay;
    }
    Ok(TrainOutcome {
        net: best.0,
        history,
        best_epoch: best.2,
        best_val_mse: best.1,
    })
}

/// Minimax stage run after [`train`]: full-batch Adam on [`Loss::LogLp`] with
/// an increasing exponent per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub lr: f64,
    pub exponents: Vec<f64>,
    pub steps_per_stage: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            lr: 1e-4,
            exponents: vec![8.0, 32.0, 128.0],
            steps_per_stage: 1000,
        }
    }
}

/// Returns the iterate with the smallest sup error over `(x, y)` and that error.
pub fn refine_sup(net: &ReluNet, x: &DMatrix<f64>, y: &DMatrix<f64>, cfg: &RefineConfig) -> Result<(ReluNet, f64)> {
    if !(cfg.lr > 0.0) || cfg.exponents.iter().any(|p| !(*p >= 2.0)) {
        return Err(Error::Validation("refine: lr must be positive and exponents >= 2".into()));
    }
    let mut cur = net.clone();
    let mut best = (cur.clone(), sup_error(&cur, x, y)?);
    for &p in &cfg.exponents {
        let mut adam = Adam::new(&cur);
        for _ in 0..cfg.steps_per_stage {
            let (_, g) = cur.backward_loss(x, y, Loss::LogLp(p))?;
            adam.step(&mut cur, &g, cfg.lr);
            let sup = sup_error(&cur, x, y)?;
            if sup < best.1 {
                best = (cur.clone(), sup);
            }
        }
        cur = best.0.clone();
    }
    Ok(best)
}
