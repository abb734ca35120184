use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    /// Hidden layer widths.
    pub layers: Vec<usize>,
    /// Dropout rate after each hidden layer.
    pub dropout: Vec<f64>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    /// Constant Adam step size.
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Fit on z-scored targets and map predictions back.
    pub standardize_target: bool,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            layers: vec![128, 128, 64, 32],
            dropout: vec![0.2, 0.2, 0.0, 0.0],
            activation: Activation::Relu,
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            standardize_target: true,
            seed: 0,
        }
    }
}

impl MlpConfig {
    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.layers.contains(&0) {
            return Err(Error::Parameter(
                "MLP needs at least one non-empty hidden layer".into(),
            ));
        }
        if self.dropout.len() != self.layers.len() {
            return Err(Error::Parameter(format!(
                "{} dropout rates for {} layers",
                self.dropout.len(),
                self.layers.len()
            )));
        }
        if let Some(r) = self.dropout.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::Parameter(format!("dropout rate {r} outside [0, 1)")));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Parameter(
                "batch size and learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Fully connected layer, `out = in · w + b` with `w` stored `inputs × outputs`
/// row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    fn forward(&self, a: &[T], rows: usize) -> Vec<T> {
        let (ni, no) = (self.inputs, self.outputs);
        let mut z = Vec::with_capacity(rows * no);
        for _ in 0..rows {
            z.extend_from_slice(&self.b);
        }
        T::gemm(rows, ni, no, a, [ni, 1], &self.w, [no, 1], T::one(), &mut z);
        z
    }
}

/// ReLU hidden layers followed by a linear scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel<T> {
    pub config: MlpConfig,
    pub layers: Vec<Dense<T>>,
    pub y_mean: T,
    pub y_std: T,
    /// Mean training loss (on the scaled target) per completed epoch.
    pub loss_history: Vec<f64>,
}

struct Trace<T> {
    /// Input to each layer (after activation and dropout of the previous one).
    inputs: Vec<Vec<T>>,
    /// Dropout multipliers of each hidden layer (empty when not applied).
    masks: Vec<Vec<T>>,
    out: Vec<T>,
}

impl<T: Scalar> MlpModel<T> {
    fn init(n_inputs: usize, config: &MlpConfig, rng: &mut crate::rng::Rng) -> Self {
        let mut widths = vec![n_inputs];
        widths.extend(&config.layers);
        widths.push(1);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (ni, no) = (w[0], w[1]);
                let limit = (6.0 / ni as f64).sqrt();
                Dense {
                    inputs: ni,
                    outputs: no,
                    w: (0..ni * no)
                        .map(|_| T::of(rng.random_range(-limit..limit)))
                        .collect(),
                    b: vec![T::zero(); no],
                }
            })
            .collect();
        Self {
            config: config.clone(),
            layers,
            y_mean: T::zero(),
            y_std: T::one(),
            loss_history: Vec::new(),
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].inputs
    }

    fn forward(&self, x: &[T], rows: usize, mut dropout: Option<&mut crate::rng::Rng>) -> Trace<T> {
        let hidden = self.layers.len() - 1;
        let mut inputs = vec![x.to_vec()];
        let mut masks = Vec::with_capacity(hidden);
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(inputs.last().expect("input present"), rows);
            if l == hidden {
                return Trace {
                    inputs,
                    masks,
                    out: z,
                };
            }
            let mut a = z;
            a.iter_mut().for_each(|v| *v = v.max(T::zero()));
            let rate = self.config.dropout.get(l).copied().unwrap_or(0.0);
            let mask = match dropout.as_deref_mut() {
                Some(rng) if rate > 0.0 => {
                    let keep = T::of(1.0 / (1.0 - rate));
                    let m: Vec<T> = (0..a.len())
                        .map(|_| {
                            if rng.random::<f64>() < rate {
                                T::zero()
                            } else {
                                keep
                            }
                        })
                        .collect();
                    a.iter_mut().zip(&m).for_each(|(v, &k)| *v *= k);
                    m
                }
                _ => Vec::new(),
            };
            masks.push(mask);
            inputs.push(a);
        }
        unreachable!("output layer returns")
    }

    /// Mean squared error over the rows. Its gradient with respect to every
    /// parameter is written to `grad`, laid out as in [`MlpModel::parameters`].
    fn loss_and_gradient(&self, trace: &Trace<T>, y: &[T], grad: &mut [T]) -> T {
        let rows = y.len();
        let nf = T::of_usize(rows);
        let mut loss = T::zero();
        let mut delta: Vec<T> = trace
            .out
            .iter()
            .zip(y)
            .map(|(&p, &t)| {
                let e = p - t;
                loss += e * e;
                T::of(2.0) * e / nf
            })
            .collect();
        let mut end = grad.len();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let (ni, no) = (layer.inputs, layer.outputs);
            let a = &trace.inputs[l];
            let start = end - (ni * no + no);
            let (gw, gb) = grad[start..end].split_at_mut(ni * no);
            end = start;
            gb.fill(T::zero());
            for d in delta.chunks_exact(no) {
                for (acc, &dv) in gb.iter_mut().zip(d) {
                    *acc += dv;
                }
            }
            T::gemm(ni, rows, no, a, [1, ni], &delta, [no, 1], T::zero(), gw);
            if l == 0 {
                break;
            }
            // Back through this layer's weights, dropout and ReLU of layer l-1.
            // A unit's output is zero exactly when it was inactive or dropped.
            let mask = &trace.masks[l - 1];
            let mut prev = vec![T::zero(); rows * ni];
            T::gemm(
                rows,
                no,
                ni,
                &delta,
                [no, 1],
                &layer.w,
                [1, no],
                T::zero(),
                &mut prev,
            );
            for (k, (v, &av)) in prev.iter_mut().zip(a).enumerate() {
                if av == T::zero() {
                    *v = T::zero();
                } else if !mask.is_empty() {
                    *v *= mask[k];
                }
            }
            delta = prev;
        }
        loss / nf
    }

    /// All weights and biases, layer by layer, `w` before `b`.
    pub fn parameters(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.b).copied())
            .collect()
    }

    pub fn n_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn set_parameters(&mut self, params: &[T]) {
        let mut at = 0;
        for l in &mut self.layers {
            let (nw, nb) = (l.w.len(), l.b.len());
            l.w.copy_from_slice(&params[at..at + nw]);
            l.b.copy_from_slice(&params[at + nw..at + nw + nb]);
            at += nw + nb;
        }
    }

    /// Full-batch MSE and gradient on raw targets with dropout disabled.
    pub fn gradient(&self, x: &Matrix<T>, y: &[T]) -> (T, Vec<T>) {
        let trace = self.forward(x.as_slice(), x.nrows(), None);
        let mut grad = vec![T::zero(); self.n_parameters()];
        let loss = self.loss_and_gradient(&trace, y, &mut grad);
        (loss, grad)
    }

    /// Deterministic forward pass (dropout off), on the original target scale.
    pub fn predict(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        if x.ncols() != self.n_inputs() {
            return Err(Error::Parameter(format!(
                "model expects {} features, got {}",
                self.n_inputs(),
                x.ncols()
            )));
        }
        let out = self.forward(x.as_slice(), x.nrows(), None).out;
        Ok(out
            .into_iter()
            .map(|v| v * self.y_std + self.y_mean)
            .collect())
    }

    pub fn to_json(&self) -> Result<String>
    where
        T: Serialize,
    {
        serde_json::to_string(&ModelDump {
            format_version: crate::FORMAT_VERSION,
            kind: "mlp",
            model: self,
        })
        .map_err(|e| Error::Json {
            context: "MLP model".into(),
            source: e,
        })
    }
}

#[derive(Serialize)]
pub(crate) struct ModelDump<'a, M> {
    pub format_version: &'a str,
    pub kind: &'a str,
    pub model: &'a M,
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    fn step(&mut self, params: &mut [T], grad: &[T], c: &MlpConfig) {
        self.t += 1;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::one() - b1.powi(self.t);
        let bc2 = T::one() - b2.powi(self.t);
        let eps = T::of(c.epsilon);
        let step = T::of(c.learning_rate) / bc1;
        let inv_sqrt_bc2 = bc2.sqrt().recip();
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let n = params.len();
        let (m, v, grad) = (&mut self.m[..n], &mut self.v[..n], &grad[..n]);
        for i in 0..n {
            let g = grad[i];
            m[i] = b1 * m[i] + c1 * g;
            v[i] = b2 * v[i] + c2 * g * g;
            params[i] -= step * m[i] / (v[i].sqrt() * inv_sqrt_bc2 + eps);
        }
    }
}

/// Mini-batch Adam on mean squared error. Rows are reshuffled each epoch;
/// initialization, shuffles and dropout masks all come from `config.seed`.
pub fn mlp_train<T: Scalar>(x: &Matrix<T>, y: &[T], config: &MlpConfig) -> Result<MlpModel<T>> {
    config.validate()?;
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::Parameter(format!(
            "{n} rows but {} targets",
            y.len()
        )));
    }
    if n == 0 || config.batch_size > n {
        return Err(Error::Parameter(format!(
            "batch size {} exceeds row count {n}",
            config.batch_size
        )));
    }
    if x.as_slice().iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Parameter("MLP inputs must be finite".into()));
    }
    let mut rng = crate::rng::rng_from(config.seed);
    let mut model = MlpModel::init(x.ncols(), config, &mut rng);
    if config.standardize_target {
        let nf = T::of_usize(n);
        let mean = y.iter().copied().sum::<T>() / nf;
        let var = y.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
        model.y_mean = mean;
        model.y_std = if var > T::zero() {
            var.sqrt()
        } else {
            T::one()
        };
    }
    let target: Vec<T> = y
        .iter()
        .map(|&v| (v - model.y_mean) / model.y_std)
        .collect();

    let mut params = model.parameters();
    let mut adam = Adam {
        m: vec![T::zero(); params.len()],
        v: vec![T::zero(); params.len()],
        t: 0,
    };
    let mut grad = vec![T::zero(); params.len()];
    let p = x.ncols();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut xb = Vec::with_capacity(batch.len() * p);
            for &i in batch {
                xb.extend_from_slice(x.row(i));
            }
            let yb: Vec<T> = batch.iter().map(|&i| target[i]).collect();
            let trace = model.forward(&xb, batch.len(), Some(&mut rng));
            let loss = model.loss_and_gradient(&trace, &yb, &mut grad);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            total += loss.as_f64() * batch.len() as f64;
            adam.step(&mut params, &grad, config);
            model.set_parameters(&params);
        }
        model.loss_history.push(total / n as f64);
    }
    Ok(model)
}

pub fn mlp_predict<T: Scalar>(model: &MlpModel<T>, x: &Matrix<T>) -> Result<Vec<T>> {
    model.predict(x)
}

/// Largest relative disagreement between the analytic gradient and central
/// finite differences (step `h = 1e-5`) over every parameter of a freshly
/// initialised network with small random biases. Dropout is ignored.
pub fn mlp_gradient_check(config: &MlpConfig, x: &Matrix<f64>, y: &[f64]) -> Result<f64> {
    let cfg = MlpConfig {
        dropout: vec![0.0; config.layers.len()],
        ..config.clone()
    };
    cfg.validate()?;
    if x.nrows() != y.len() || x.nrows() == 0 {
        return Err(Error::Parameter(
            "gradient check needs matching, non-empty x and y".into(),
        ));
    }
    let mut rng = crate::rng::rng_from(cfg.seed);
    let mut model = MlpModel::<f64>::init(x.ncols(), &cfg, &mut rng);
    // Zero biases can leave a pre-activation exactly on the ReLU kink, where
    // central differences are meaningless; check at a generic point instead.
    for layer in &mut model.layers {
        for b in &mut layer.b {
            *b = rng.random_range(-0.1..0.1);
        }
    }
    let (_, analytic) = model.gradient(x, y);
    let base = model.parameters();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (k, &ga) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[k] = base[k] + h;
        model.set_parameters(&p);
        let (up, _) = model.gradient(x, y);
        p[k] = base[k] - h;
        model.set_parameters(&p);
        let (down, _) = model.gradient(x, y);
        let gn = (up - down) / (2.0 * h);
        worst = worst.max((ga - gn).abs() / (ga.abs() + gn.abs()).max(1e-8));
    }
    Ok(worst)
}
