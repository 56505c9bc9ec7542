//! Dense layers with hand-written backward passes.
//!
//! Backward functions accumulate into a gradient value of the same type as
//! the layer (see [`Params`]) and return the gradient with respect to the
//! layer input when the caller needs it.

use rand::Rng;

use super::params::{prefixed, prefixed_mut, Params};
use super::{affine, Matrix};
use crate::error::{shape_err, Error, Result};

/// Fully-connected layer `y = x·W + b`, `W` stored as `in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(input, output),
            bias: Matrix::zeros(1, output),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let data = (0..input * output)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            weight: Matrix::from_vec(input, output, data).expect("sized above"),
            bias: Matrix::zeros(1, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        affine(x, &self.weight, self.bias.data())
    }

    /// Accumulates `dW += xᵀ·dy`, `db += Σ dy` into `grad`; returns `dy·Wᵀ`
    /// when `need_input_grad` is set.
    pub fn backward(
        &self,
        x: &Matrix,
        dy: &Matrix,
        grad: &mut Linear,
        need_input_grad: bool,
    ) -> Result<Option<Matrix>> {
        if dy.cols() != self.output_dim() || x.rows() != dy.rows() {
            return Err(shape_err("linear backward: upstream gradient shape"));
        }
        grad.weight.add_assign(&x.t_matmul(dy)?)?;
        for (b, s) in grad.bias.data_mut().iter_mut().zip(dy.col_sums()) {
            *b += s;
        }
        if need_input_grad {
            Ok(Some(dy.matmul_t(&self.weight)?))
        } else {
            Ok(None)
        }
    }
}

impl Params for Linear {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        vec![
            ("weight".into(), &mut self.weight),
            ("bias".into(), &mut self.bias),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Softplus,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Softplus => softplus(x),
        }
    }

    /// Derivative evaluated at the pre-activation. ReLU uses 0 at the kink.
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(pre),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Softplus => "softplus",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "identity" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "softplus" => Some(Activation::Softplus),
            _ => None,
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
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

/// A stack of linear layers, each followed by its activation.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Linear>,
    pub activations: Vec<Activation>,
}

/// Values saved by [`MlpParams::forward_cached`] for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
}

impl MlpParams {
    /// Glorot-initialised MLP through `dims`; `activations.len()` must be
    /// `dims.len() - 1`.
    pub fn new(dims: &[usize], activations: &[Activation], rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 2 || activations.len() + 1 != dims.len() {
            return Err(Error::InvalidArgument(
                "MLP needs one activation per layer and at least one layer".into(),
            ));
        }
        let layers = dims
            .windows(2)
            .map(|w| Linear::glorot(w[0], w[1], rng))
            .collect();
        Ok(Self {
            layers,
            activations: activations.to_vec(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::output_dim)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            h = layer.forward(&h)?;
            h.map_inplace(|v| act.apply(v));
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            let a = layer.forward(&h)?;
            inputs.push(h);
            h = a.map(|v| act.apply(v));
            pre.push(a);
        }
        Ok((h, MlpCache { inputs, pre }))
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the MLP input if requested.
    pub fn backward(
        &self,
        cache: &MlpCache,
        dy: &Matrix,
        grad: &mut MlpParams,
        need_input_grad: bool,
    ) -> Result<Option<Matrix>> {
        let mut g = dy.clone();
        for i in (0..self.layers.len()).rev() {
            let act = self.activations[i];
            if act != Activation::Identity {
                g = g.zip_map(&cache.pre[i], |gv, p| gv * act.derivative(p))?;
            }
            let want = i > 0 || need_input_grad;
            match self.layers[i].backward(&cache.inputs[i], &g, &mut grad.layers[i], want)? {
                Some(dx) => g = dx,
                None => return Ok(None),
            }
        }
        Ok(Some(g))
    }
}

impl Params for MlpParams {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| prefixed(&format!("layer{i}"), l.tensors()))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| prefixed_mut(&format!("layer{i}"), l.tensors_mut()))
            .collect()
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-column batch normalization.
///
/// `shift` is always trainable; `scale` only when `learn_scale` is set
/// (otherwise it stays at its initial value of 1).
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub scale: Matrix,
    pub shift: Matrix,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub learn_scale: bool,
}

#[derive(Clone, Debug)]
pub struct BnCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
    mean: Vec<f64>,
    /// unbiased batch variance, for the running estimate
    var_unbiased: Vec<f64>,
}

impl BatchNorm {
    pub fn new(dim: usize, learn_scale: bool) -> Self {
        Self {
            scale: Matrix::filled(1, dim, 1.0),
            shift: Matrix::zeros(1, dim),
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            learn_scale,
        }
    }

    pub fn dim(&self) -> usize {
        self.shift.cols()
    }

    /// Training-mode forward using batch statistics. Running statistics are
    /// left untouched; apply [`BatchNorm::update_running`] with the cache when
    /// this batch should count toward them.
    pub fn forward_train(&self, x: &Matrix) -> Result<(Matrix, BnCache)> {
        let (n, d) = x.shape();
        if d != self.dim() {
            return Err(shape_err(format!(
                "batchnorm over {} columns got {d}",
                self.dim()
            )));
        }
        if n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        let mean = x.col_means();
        let mut var = vec![0.0; d];
        for row in x.row_iter() {
            for ((v, &xv), &m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (xv - m) * (xv - m);
            }
        }
        let var_unbiased: Vec<f64> = var.iter().map(|v| v / (n - 1) as f64).collect();
        let inv_std: Vec<f64> = var
            .iter()
            .map(|v| 1.0 / (v / n as f64 + self.eps).sqrt())
            .collect();
        let mut normalized = Matrix::zeros(n, d);
        let mut out = Matrix::zeros(n, d);
        let (scale, shift) = (self.scale.data(), self.shift.data());
        for r in 0..n {
            let xr = x.row(r);
            let nr = normalized.row_mut(r);
            for j in 0..d {
                nr[j] = (xr[j] - mean[j]) * inv_std[j];
            }
            let nr = normalized.row(r).to_vec();
            for (j, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = scale[j] * nr[j] + shift[j];
            }
        }
        Ok((
            out,
            BnCache {
                normalized,
                inv_std,
                mean,
                var_unbiased,
            },
        ))
    }

    pub fn update_running(&mut self, cache: &BnCache) {
        let m = self.momentum;
        for (r, &b) in self.running_mean.iter_mut().zip(&cache.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(&cache.var_unbiased) {
            *r = (1.0 - m) * *r + m * b;
        }
    }

    /// Evaluation-mode forward using the running statistics.
    pub fn forward_eval(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dim() {
            return Err(shape_err(format!(
                "batchnorm over {} columns got {}",
                self.dim(),
                x.cols()
            )));
        }
        let inv: Vec<f64> = self
            .running_var
            .iter()
            .map(|v| 1.0 / (v + self.eps).sqrt())
            .collect();
        let (scale, shift) = (self.scale.data(), self.shift.data());
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = scale[j] * (*v - self.running_mean[j]) * inv[j] + shift[j];
            }
        }
        Ok(out)
    }

    /// Mode-switching forward; training mode updates the running statistics.
    pub fn forward(&mut self, x: &Matrix, training: bool) -> Result<Matrix> {
        if training {
            let (y, cache) = self.forward_train(x)?;
            self.update_running(&cache);
            Ok(y)
        } else {
            self.forward_eval(x)
        }
    }

    pub fn backward(&self, cache: &BnCache, dy: &Matrix, grad: &mut BatchNorm) -> Result<Matrix> {
        cache.normalized.same_shape(dy, "batchnorm backward")?;
        let (n, d) = dy.shape();
        let nf = n as f64;
        let scale = self.scale.data();
        let mut sum_g = vec![0.0; d];
        let mut sum_gx = vec![0.0; d];
        for r in 0..n {
            for j in 0..d {
                let g = dy.get(r, j);
                sum_g[j] += g;
                sum_gx[j] += g * cache.normalized.get(r, j);
            }
        }
        for j in 0..d {
            grad.shift.data_mut()[j] += sum_g[j];
            if self.learn_scale {
                grad.scale.data_mut()[j] += sum_gx[j];
            }
        }
        let mut dx = Matrix::zeros(n, d);
        for r in 0..n {
            for j in 0..d {
                let xhat = cache.normalized.get(r, j);
                let g = dy.get(r, j);
                let v = scale[j] * cache.inv_std[j] / nf * (nf * g - sum_g[j] - xhat * sum_gx[j]);
                dx.set(r, j, v);
            }
        }
        Ok(dx)
    }
}

impl Params for BatchNorm {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut v = vec![("shift".to_string(), &self.shift)];
        if self.learn_scale {
            v.push(("scale".into(), &self.scale));
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        if self.learn_scale {
            vec![
                ("shift".into(), &mut self.shift),
                ("scale".into(), &mut self.scale),
            ]
        } else {
            vec![("shift".into(), &mut self.shift)]
        }
    }
}
