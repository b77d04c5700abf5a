//! Cascade feedforward network reducing the scheduling parameters: a fixed
//! selection layer picks `upsilon = W1 w`, tanh layers encode it to `mu`, and
//! an affine decoder returns `rho_hat`. Training minimizes the error the
//! reconstruction causes in the LPV dynamics.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::serde_matrix;
use crate::lpvlft::LpvModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    #[serde(with = "serde_matrix")]
    pub weights: DMatrix<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        let limit = if fan_in + fan_out == 0 {
            0.0
        } else {
            (6.0 / (fan_in + fan_out) as f64).sqrt()
        };
        let weights = DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-limit..=limit));
        Self { weights, biases: vec![0.0; fan_out], activation }
    }

    fn apply(&self, input: &DVector<f64>) -> DVector<f64> {
        let mut a = &self.weights * input + DVector::from_column_slice(&self.biases);
        if self.activation == Activation::Tanh {
            a.apply(|v| *v = v.tanh());
        }
        a
    }

    fn parameter_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
    /// `(epoch, validation loss)` each time the kept snapshot improved.
    pub snapshots: Vec<(usize, f64)>,
    pub best_epoch: usize,
    /// Divisor applied to the data term of the training objective.
    pub loss_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cfnn {
    pub input_dim: usize,
    /// `W1`: row `i` selects coordinate `selector[i]` of `w`.
    pub selector: Vec<usize>,
    /// Tanh encoder layers followed by the affine decoder.
    pub layers: Vec<Layer>,
    pub seed: u64,
    #[serde(default)]
    pub history: LossHistory,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub upsilon: DVector<f64>,
    /// Input of every trainable layer followed by the final output.
    pub activations: Vec<DVector<f64>>,
}

impl Forward {
    pub fn mu(&self) -> &DVector<f64> {
        &self.activations[self.activations.len() - 2]
    }

    pub fn rho_hat(&self) -> &DVector<f64> {
        self.activations.last().expect("nonempty")
    }
}

impl Cfnn {
    /// Glorot-initialized network `l -> hidden.. -> m -> l` with zero biases.
    pub fn new(input_dim: usize, selector: Vec<usize>, hidden: &[usize], m: usize, seed: u64) -> Result<Self> {
        let l = selector.len();
        if let Some(bad) = selector.iter().find(|&&i| i >= input_dim) {
            return Err(Error::Config(format!("selector index {bad} exceeds input dimension {input_dim}")));
        }
        if m > l {
            return Err(Error::Config(format!("bottleneck {m} exceeds parameter count {l}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![l];
        widths.extend_from_slice(hidden);
        widths.push(m);
        let mut layers: Vec<Layer> = widths
            .windows(2)
            .map(|w| Layer::glorot(&mut rng, w[0], w[1], Activation::Tanh))
            .collect();
        layers.push(Layer::glorot(&mut rng, m, l, Activation::Linear));
        Ok(Self { input_dim, selector, layers, seed, history: LossHistory::default() })
    }

    /// Network whose parameters come from `lpv`'s variable-tied parameters.
    pub fn for_model(lpv: &LpvModel, hidden: &[usize], m: usize, seed: u64) -> Result<Self> {
        let selector = lpv
            .parameters
            .iter()
            .map(|p| p.source.ok_or_else(|| Error::Config(format!("parameter {} has no source", p.name))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(lpv.state_dim() + lpv.input_dim(), selector, hidden, m, seed)
    }

    pub fn parameter_dim(&self) -> usize {
        self.selector.len()
    }

    pub fn bottleneck(&self) -> usize {
        self.decoder().weights.ncols()
    }

    pub fn decoder(&self) -> &Layer {
        self.layers.last().expect("decoder layer")
    }

    pub fn select(&self, w: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.selector.len(), self.selector.iter().map(|&i| w[i]))
    }

    pub fn forward(&self, w: &[f64]) -> Forward {
        let upsilon = self.select(w);
        let mut activations = vec![upsilon.clone()];
        for layer in &self.layers {
            let next = layer.apply(activations.last().expect("nonempty"));
            activations.push(next);
        }
        Forward { upsilon, activations }
    }

    /// Encoder `eta: rho -> mu`.
    pub fn encode(&self, rho: &[f64]) -> Vec<f64> {
        let mut c = DVector::from_column_slice(rho);
        for layer in &self.layers[..self.layers.len() - 1] {
            c = layer.apply(&c);
        }
        c.as_slice().to_vec()
    }

    /// Affine decoder `(W, b)` with `rho_hat = W mu + b`.
    pub fn export_decoder(&self) -> (DMatrix<f64>, Vec<f64>) {
        let d = self.decoder();
        (d.weights.clone(), d.biases.clone())
    }

    pub fn decode(&self, mu: &[f64]) -> Vec<f64> {
        self.decoder().apply(&DVector::from_column_slice(mu)).as_slice().to_vec()
    }

    pub fn weight_norm_sq(&self) -> f64 {
        self.layers.iter().map(|l| l.weights.norm_squared()).sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    /// All weights (row-major) and biases, layer by layer.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            for i in 0..l.weights.nrows() {
                for j in 0..l.weights.ncols() {
                    out.push(l.weights[(i, j)]);
                }
            }
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_parameters(&mut self, values: &[f64]) {
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            for i in 0..l.weights.nrows() {
                for j in 0..l.weights.ncols() {
                    l.weights[(i, j)] = it.next().expect("parameter vector too short");
                }
            }
            for b in &mut l.biases {
                *b = it.next().expect("parameter vector too short");
            }
        }
    }
}

/// Residual part of `M(rho) w`, evaluated from the LPV term list.
pub struct ResidualMap<'a> {
    lpv: &'a LpvModel,
    rows: usize,
}

impl<'a> ResidualMap<'a> {
    pub fn new(lpv: &'a LpvModel) -> Self {
        Self { lpv, rows: lpv.state_dim() + lpv.output_dim() }
    }

    pub fn apply(&self, rho: &[f64], w: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.rows);
        for t in &self.lpv.terms {
            out[t.row] += t.value(rho) * w[t.col];
        }
        out
    }

    /// `d (M(rho) w) / d rho`, one column per parameter.
    pub fn jacobian(&self, rho: &[f64], w: &[f64]) -> DMatrix<f64> {
        let l = rho.len();
        let mut jac = DMatrix::zeros(self.rows, l);
        for t in &self.lpv.terms {
            for j in 0..l {
                let k = t.exponents[j];
                if k == 0 {
                    continue;
                }
                let mut d = t.coefficient * k as f64 * w[t.col];
                for (i, &e) in t.exponents.iter().enumerate() {
                    let p = if i == j { e - 1 } else { e };
                    if p > 0 {
                        d *= rho[i].powi(p as i32);
                    }
                }
                jac[(t.row, j)] += d;
            }
        }
        jac
    }
}

/// `||(M(upsilon) - M(rho_hat)) w||^2` for one sample.
pub fn sample_loss(net: &Cfnn, map: &ResidualMap, w: &[f64]) -> f64 {
    let f = net.forward(w);
    let e = map.apply(f.upsilon.as_slice(), w) - map.apply(f.rho_hat().as_slice(), w);
    e.norm_squared()
}

/// Mean sample loss over `batch`, in index order.
pub fn mean_loss(net: &Cfnn, map: &ResidualMap, batch: &[&[f64]]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    batch.iter().map(|w| sample_loss(net, map, w)).sum::<f64>() / batch.len() as f64
}

/// Training objective `mean L_i / scale + sigma_bar * sum ||W||_F^2`.
pub fn objective(net: &Cfnn, map: &ResidualMap, batch: &[&[f64]], sigma_bar: f64, scale: f64) -> f64 {
    mean_loss(net, map, batch) / scale + sigma_bar * net.weight_norm_sq()
}

/// Per-layer `(dW, db)` of [`objective`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(DMatrix<f64>, DVector<f64>)>,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            for i in 0..w.nrows() {
                for j in 0..w.ncols() {
                    out.push(w[(i, j)]);
                }
            }
            out.extend(b.iter().copied());
        }
        out
    }
}

pub fn gradients(net: &Cfnn, map: &ResidualMap, batch: &[&[f64]], sigma_bar: f64, scale: f64) -> Gradients {
    let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = net
        .layers
        .iter()
        .map(|l| (DMatrix::zeros(l.weights.nrows(), l.weights.ncols()), DVector::zeros(l.biases.len())))
        .collect();
    let weight = if batch.is_empty() { 0.0 } else { 1.0 / (batch.len() as f64 * scale) };
    for w in batch {
        let f = net.forward(w);
        let rho_hat = f.rho_hat();
        let e = map.apply(f.upsilon.as_slice(), w) - map.apply(rho_hat.as_slice(), w);
        let jac = map.jacobian(rho_hat.as_slice(), w);
        // d/d rho_hat of ||e||^2 with e = r(upsilon) - r(rho_hat).
        let mut g = -2.0 * weight * jac.tr_mul(&e);
        for k in (0..net.layers.len()).rev() {
            let layer = &net.layers[k];
            let out = &f.activations[k + 1];
            let input = &f.activations[k];
            if layer.activation == Activation::Tanh {
                g.zip_apply(out, |gi, c| *gi *= 1.0 - c * c);
            }
            grads[k].0 += &g * input.transpose();
            grads[k].1 += &g;
            g = layer.weights.tr_mul(&g);
        }
    }
    for (k, layer) in net.layers.iter().enumerate() {
        grads[k].0 += 2.0 * sigma_bar * &layer.weights;
    }
    Gradients { layers: grads }
}

/// Stacked `w = [x; u]` samples with the id of the run each came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub samples: Vec<Vec<f64>>,
    pub trajectory: Vec<usize>,
    pub labels: Vec<String>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Splits by whole trajectory: a seeded shuffle of the run ids puts the
    /// first `ceil(fraction * runs)` into validation. A single run is cut in
    /// time instead, its trailing `fraction` going to validation.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut ids: Vec<usize> = self.trajectory.clone();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() < 2 {
            let n = self.len();
            if n < 2 {
                return Err(Error::InsufficientCoverage("a train/validation split needs two samples".into()));
            }
            let n_valid = ((fraction * n as f64).ceil() as usize).clamp(1, n - 1);
            return Ok(((0..n - n_valid).collect(), (n - n_valid..n).collect()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ids.shuffle(&mut rng);
        let n_valid = ((fraction * ids.len() as f64).ceil() as usize).clamp(1, ids.len() - 1);
        let valid_ids = &ids[..n_valid];
        let (mut train, mut valid) = (Vec::new(), Vec::new());
        for (i, t) in self.trajectory.iter().enumerate() {
            if valid_ids.contains(t) {
                valid.push(i);
            } else {
                train.push(i);
            }
        }
        Ok((train, valid))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["trajectory".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (s, t) in self.samples.iter().zip(&self.trajectory) {
            let mut rec = vec![t.to_string()];
            rec.extend(s.iter().map(|v| format!("{v:e}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let labels: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
        let mut set = TrainingSet { samples: Vec::new(), trajectory: Vec::new(), labels };
        for rec in r.records() {
            let rec = rec?;
            let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Config(format!("training set: {e}")));
            let t = rec[0]
                .parse::<usize>()
                .map_err(|e| Error::Config(format!("training set: {e}")))?;
            set.trajectory.push(t);
            set.samples.push(rec.iter().skip(1).map(parse).collect::<Result<_>>()?);
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub sigma_bar: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    /// Divide the data term by the mean residual energy of the training set.
    pub normalize_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 128,
            sigma_bar: 1e-6,
            patience: 50,
            max_epochs: 5000,
            validation_fraction: 0.2,
            normalize_loss: true,
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            params[i] -= cfg.learning_rate * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.epsilon);
        }
    }
}

/// Adam on shuffled minibatches with early stopping on the validation loss.
/// Returns the best-validation snapshot with its loss history attached.
pub fn train(net: &Cfnn, lpv: &LpvModel, data: &TrainingSet, cfg: &TrainConfig) -> Result<Cfnn> {
    let (train_idx, valid_idx) = data.split(cfg.validation_fraction, net.seed)?;
    if train_idx.len() < 2 * cfg.batch_size {
        return Err(Error::InsufficientCoverage(format!(
            "{} training samples, need at least {}",
            train_idx.len(),
            2 * cfg.batch_size
        )));
    }
    let map = ResidualMap::new(lpv);
    let train_set: Vec<&[f64]> = train_idx.iter().map(|&i| data.samples[i].as_slice()).collect();
    let valid_set: Vec<&[f64]> = valid_idx.iter().map(|&i| data.samples[i].as_slice()).collect();
    let scale = if cfg.normalize_loss {
        let energy = train_set
            .iter()
            .map(|w| map.apply(net.select(w).as_slice(), w).norm_squared())
            .sum::<f64>()
            / train_set.len() as f64;
        if energy > 0.0 { energy } else { 1.0 }
    } else {
        1.0
    };

    let mut current = net.clone();
    let mut params = current.parameters();
    let mut adam = Adam { m: vec![0.0; params.len()], v: vec![0.0; params.len()], t: 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(net.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = LossHistory { loss_scale: scale, ..LossHistory::default() };
    let mut best = current.clone();
    let mut best_valid = f64::INFINITY;
    let mut since_best = 0;

    let initial_train = mean_loss(&current, &map, &train_set);
    let initial_valid = mean_loss(&current, &map, &valid_set);
    history.train.push(initial_train);
    history.validation.push(initial_valid);
    if initial_valid.is_finite() {
        best_valid = initial_valid;
        history.snapshots.push((0, initial_valid));
    }

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| train_set[i]).collect();
            let g = gradients(&current, &map, &batch, cfg.sigma_bar, scale).flatten();
            adam.step(&mut params, &g, cfg);
            current.set_parameters(&params);
        }
        let t_loss = mean_loss(&current, &map, &train_set);
        let v_loss = mean_loss(&current, &map, &valid_set);
        if !t_loss.is_finite() || !v_loss.is_finite() {
            return Err(Error::TrainingDivergence { epoch });
        }
        history.train.push(t_loss);
        history.validation.push(v_loss);
        if v_loss < best_valid {
            best_valid = v_loss;
            best = current.clone();
            history.best_epoch = epoch;
            history.snapshots.push((epoch, v_loss));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    best.history = history;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DiscreteLinearModel;
    use crate::envelope::ParameterSet;
    use crate::lpvlft::{SchedulingParameter, Term};

    fn lpv() -> LpvModel {
        LpvModel {
            linear: DiscreteLinearModel {
                a: DMatrix::identity(2, 2),
                b: DMatrix::zeros(2, 1),
                c: DMatrix::identity(2, 2),
                d: DMatrix::zeros(2, 1),
                tau: 0.1,
                x_op: vec![0.0; 2],
                u_op: vec![0.0],
                y_op: vec![0.0; 2],
            },
            parameters: vec![
                SchedulingParameter { name: "x1".into(), source: Some(0) },
                SchedulingParameter { name: "x2".into(), source: Some(1) },
            ],
            terms: vec![Term { coefficient: 0.5, row: 1, col: 0, exponents: vec![1, 0] }],
            parameter_set: ParameterSet::from_values(vec![[-1.0, 1.0]; 2]),
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut net = Cfnn::new(3, vec![0, 1], &[], 1, 3).unwrap();
        let zeros = vec![0.0; net.parameter_count()];
        net.set_parameters(&zeros);
        assert_eq!(net.forward(&[0.3, -0.7, 1.0]).rho_hat().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn hand_computed_forward_pass() {
        let mut net = Cfnn::new(3, vec![0, 2], &[], 1, 0).unwrap();
        net.layers[0].weights = DMatrix::from_row_slice(1, 2, &[0.5, -1.0]);
        net.layers[0].biases = vec![0.1];
        net.layers[1].weights = DMatrix::from_row_slice(2, 1, &[2.0, -3.0]);
        net.layers[1].biases = vec![0.25, 1.0];
        let w = [0.4, 9.0, -0.2];
        let mu = (0.5f64 * 0.4 + 0.2 + 0.1).tanh();
        let f = net.forward(&w);
        assert!((f.mu()[0] - mu).abs() < 1e-12);
        assert!((f.rho_hat()[0] - (2.0 * mu + 0.25)).abs() < 1e-12);
        assert!((f.rho_hat()[1] - (1.0 - 3.0 * mu)).abs() < 1e-12);
    }

    #[test]
    fn affine_single_term_loss() {
        let model = lpv();
        let map = ResidualMap::new(&model);
        let mut net = Cfnn::new(3, vec![0, 1], &[], 1, 1).unwrap();
        let zeros = vec![0.0; net.parameter_count()];
        net.set_parameters(&zeros);
        // rho_hat = 0, so the loss is (0.5 * w1 * w1)^2.
        let w = [0.6, 0.2, 0.0];
        let expected = (0.5f64 * 0.6 * 0.6).powi(2);
        assert!((sample_loss(&net, &map, &w) - expected).abs() < 1e-15);
    }

    #[test]
    fn regularization_gradient_is_twice_weights() {
        let model = lpv();
        let map = ResidualMap::new(&model);
        let net = Cfnn::new(3, vec![0, 1], &[3], 1, 5).unwrap();
        let g = gradients(&net, &map, &[], 1.0, 1.0);
        for (k, layer) in net.layers.iter().enumerate() {
            assert_eq!(g.layers[k].0, 2.0 * &layer.weights);
        }
    }

    #[test]
    fn json_round_trip() {
        let net = Cfnn::new(3, vec![0, 1], &[4], 1, 9).unwrap();
        let s = serde_json::to_string(&net).unwrap();
        let back: Cfnn = serde_json::from_str(&s).unwrap();
        assert_eq!(back, net);
    }
}
