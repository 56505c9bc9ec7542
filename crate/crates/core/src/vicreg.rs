//! Variance, invariance and covariance regularizers with their gradients,
//! and the expander used by the deep variants.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::numerics::{Activation, Matrix, MlpParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VicWeights {
    /// invariance weight
    pub lambda: f64,
    /// variance weight
    pub mu: f64,
    /// covariance weight
    pub nu: f64,
    /// standard-deviation target
    pub gamma: f64,
    /// variance stabilizer
    pub eps: f64,
}

impl Default for VicWeights {
    fn default() -> Self {
        Self {
            lambda: 25.0,
            mu: 25.0,
            nu: 1.0,
            gamma: 1.0,
            eps: 1e-4,
        }
    }
}

impl VicWeights {
    pub fn zero() -> Self {
        Self {
            lambda: 0.0,
            mu: 0.0,
            nu: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !(self.eps > 0.0) {
            return Err(invalid("VIC gamma and eps must be positive"));
        }
        if [self.lambda, self.mu, self.nu]
            .iter()
            .any(|w| !(*w >= 0.0 && w.is_finite()))
        {
            return Err(invalid("VIC weights must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Unweighted term values plus the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VicBreakdown {
    /// `s(Y, Y′)`
    pub inv: f64,
    /// `v(Y) + v(Y′)`
    pub var: f64,
    /// `c(Y) + c(Y′)`
    pub cov: f64,
    pub total: f64,
}

fn need_rows(y: &Matrix) -> Result<()> {
    if y.rows() < 2 {
        return Err(Error::BatchTooSmall(y.rows()));
    }
    Ok(())
}

fn centered(y: &Matrix) -> Matrix {
    let mean = y.col_means();
    let mut c = y.clone();
    for r in 0..c.rows() {
        for (v, m) in c.row_mut(r).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    c
}

fn column_std(yc: &Matrix, eps: f64) -> Vec<f64> {
    let n1 = (yc.rows() - 1) as f64;
    let mut ss = vec![0.0; yc.cols()];
    for row in yc.row_iter() {
        for (s, v) in ss.iter_mut().zip(row) {
            *s += v * v;
        }
    }
    ss.iter().map(|s| (s / n1 + eps).sqrt()).collect()
}

/// `(1/d) Σ_j max(0, γ − sqrt(Var(Y^j) + ε))` with unbiased variances.
pub fn variance_term(y: &Matrix, gamma: f64, eps: f64) -> Result<f64> {
    need_rows(y)?;
    let sd = column_std(&centered(y), eps);
    Ok(sd.iter().map(|s| (gamma - s).max(0.0)).sum::<f64>() / y.cols() as f64)
}

pub fn variance_grad(y: &Matrix, gamma: f64, eps: f64) -> Result<Matrix> {
    need_rows(y)?;
    let yc = centered(y);
    let sd = column_std(&yc, eps);
    let scale = -1.0 / (y.cols() as f64 * (y.rows() - 1) as f64);
    let mut g = yc;
    for r in 0..g.rows() {
        for (v, s) in g.row_mut(r).iter_mut().zip(&sd) {
            *v = if gamma - s > 0.0 { scale * *v / s } else { 0.0 };
        }
    }
    Ok(g)
}

/// `(1/n) Σ_i ‖y_i − y′_i‖²`.
pub fn invariance_term(y: &Matrix, yp: &Matrix) -> Result<f64> {
    y.same_shape(yp, "invariance term")?;
    if y.rows() == 0 {
        return Err(Error::BatchTooSmall(0));
    }
    let ss: f64 = y
        .data()
        .iter()
        .zip(yp.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(ss / y.rows() as f64)
}

/// Gradient with respect to `Y`; the gradient for `Y′` is its negation.
pub fn invariance_grad(y: &Matrix, yp: &Matrix) -> Result<Matrix> {
    let n = y.rows() as f64;
    y.zip_map(yp, |a, b| 2.0 * (a - b) / n)
}

fn covariance(yc: &Matrix) -> Result<Matrix> {
    let mut c = yc.t_matmul(yc)?;
    c.scale(1.0 / (yc.rows() - 1) as f64);
    Ok(c)
}

/// `(1/d) Σ_{i≠j} C_ij²` with `C` the unbiased covariance.
pub fn covariance_term(y: &Matrix) -> Result<f64> {
    need_rows(y)?;
    let c = covariance(&centered(y))?;
    let d = c.rows();
    let mut total = 0.0;
    for i in 0..d {
        for (j, v) in c.row(i).iter().enumerate() {
            if i != j {
                total += v * v;
            }
        }
    }
    Ok(total / d as f64)
}

/// `(4 / (d (n−1))) · Yc · offdiag(C)`.
pub fn covariance_grad(y: &Matrix) -> Result<Matrix> {
    need_rows(y)?;
    let yc = centered(y);
    let mut c = covariance(&yc)?;
    for i in 0..c.rows() {
        c.set(i, i, 0.0);
    }
    let mut g = yc.matmul(&c)?;
    g.scale(4.0 / (y.cols() as f64 * (y.rows() - 1) as f64));
    Ok(g)
}

/// `μ[v(Y)+v(Y′)] + λ s(Y,Y′) + ν[c(Y)+c(Y′)]`.
pub fn vic_loss(y: &Matrix, yp: &Matrix, w: &VicWeights) -> Result<VicBreakdown> {
    y.same_shape(yp, "VIC loss")?;
    let inv = invariance_term(y, yp)?;
    let var = variance_term(y, w.gamma, w.eps)? + variance_term(yp, w.gamma, w.eps)?;
    let cov = covariance_term(y)? + covariance_term(yp)?;
    Ok(VicBreakdown {
        inv,
        var,
        cov,
        total: w.mu * var + w.lambda * inv + w.nu * cov,
    })
}

/// Gradients of the weighted VIC total with respect to `Y` and `Y′`. Terms
/// with zero weight are skipped.
pub fn vic_grad(y: &Matrix, yp: &Matrix, w: &VicWeights) -> Result<(Matrix, Matrix)> {
    y.same_shape(yp, "VIC loss")?;
    let mut gy = Matrix::zeros(y.rows(), y.cols());
    let mut gyp = Matrix::zeros(y.rows(), y.cols());
    if w.lambda != 0.0 {
        let g = invariance_grad(y, yp)?;
        gy.axpy(w.lambda, &g)?;
        gyp.axpy(-w.lambda, &g)?;
    }
    if w.mu != 0.0 {
        gy.axpy(w.mu, &variance_grad(y, w.gamma, w.eps)?)?;
        gyp.axpy(w.mu, &variance_grad(yp, w.gamma, w.eps)?)?;
    }
    if w.nu != 0.0 {
        gy.axpy(w.nu, &covariance_grad(y)?)?;
        gyp.axpy(w.nu, &covariance_grad(yp)?)?;
    }
    Ok((gy, gyp))
}

/// Three-layer expander `k → d → d → d`, ReLU after the first two layers.
pub fn new_expander(k: usize, dim: usize, rng: &mut impl Rng) -> Result<MlpParams> {
    if k == 0 || dim == 0 {
        return Err(invalid("expander dimensions must be positive"));
    }
    MlpParams::new(
        &[k, dim, dim, dim],
        &[Activation::Relu, Activation::Relu, Activation::Identity],
        rng,
    )
}

pub fn expand(z: &Matrix, expander: &MlpParams) -> Result<Matrix> {
    if expander.layers.len() != 3 {
        return Err(invalid("expander must have exactly three layers"));
    }
    if z.cols() != expander.input_dim() {
        return Err(shape_err(format!(
            "expander expects {} inputs, got {}",
            expander.input_dim(),
            z.cols()
        )));
    }
    expander.forward(z)
}
