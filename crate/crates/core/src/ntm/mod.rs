//! Unsupervised SCHOLAR-style topic model: encoder, logistic-normal latent,
//! background-log-frequency decoder and the ELBO terms.
//!
//! Forward functions return caches; backward functions accumulate into a
//! gradient value of type [`NtmParams`] so branches can share one encoder.

use rand::Rng;

use crate::corpus::{BowMatrix, Vocabulary};
use crate::error::{invalid, shape_err, Error, Result};
use crate::metrics::TopicSet;
use crate::numerics::params::{prefixed, prefixed_mut};
use crate::numerics::{
    softmax_rows, softmax_rows_backward, Activation, Archive, BatchNorm, BnCache, Linear, Matrix,
    MlpCache, MlpParams, Params,
};

/// Floor applied to decoder probabilities inside the log.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct NtmConfig {
    pub vocab: usize,
    pub topics: usize,
    /// widths of the shared softplus encoder layers
    pub hidden: Vec<usize>,
    /// `false` pins the background to zero (ProdLDA-style decoder)
    pub use_background: bool,
}

impl NtmConfig {
    pub fn new(vocab: usize, topics: usize) -> Self {
        Self {
            vocab,
            topics,
            hidden: vec![300],
            use_background: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NtmParams {
    /// shared hidden stack feeding both heads
    pub encoder: MlpParams,
    pub mu_head: Linear,
    pub logvar_head: Linear,
    pub mu_bn: BatchNorm,
    pub logvar_bn: BatchNorm,
    /// topic-word matrix, `k × |V|`
    pub beta: Matrix,
    /// frozen background log-frequencies; not a trainable tensor
    pub background: Vec<f64>,
    pub decoder_bn: BatchNorm,
    /// weight of the batch-normalized decoder path in `[0, 1]`
    pub decoder_mix: f64,
}

/// Latent quantities for one minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBatch {
    pub mu: Matrix,
    pub logvar: Matrix,
    pub noise: Matrix,
    pub r: Matrix,
    pub z: Matrix,
}

#[derive(Clone, Debug)]
pub struct EncoderCache {
    hidden: MlpCache,
    h: Matrix,
    mu_bn: BnCache,
    logvar_bn: BnCache,
}

#[derive(Clone, Debug)]
pub struct DecoderCache {
    z: Matrix,
    bn: BnCache,
    s_bn: Matrix,
    s_plain: Matrix,
    mix: f64,
}

/// `d_w = ln((count_w + s) / Σ_v (count_v + s))`.
pub fn compute_background(train: &BowMatrix, smoothing: f64) -> Result<Vec<f64>> {
    if train.rows() == 0 {
        return Err(invalid("background from an empty training set"));
    }
    if smoothing < 0.0 {
        return Err(invalid("background smoothing must be non-negative"));
    }
    let counts: Vec<f64> = train.word_counts().iter().map(|c| c + smoothing).collect();
    let total: f64 = counts.iter().sum();
    if counts.iter().any(|&c| c <= 0.0) {
        return Err(invalid(
            "word with zero count and no smoothing; background undefined",
        ));
    }
    Ok(counts.iter().map(|c| (c / total).ln()).collect())
}

impl NtmParams {
    pub fn new(cfg: &NtmConfig, background: Vec<f64>, rng: &mut impl Rng) -> Result<Self> {
        if cfg.topics == 0 || cfg.vocab == 0 {
            return Err(invalid(
                "topic model needs k ≥ 1 and a non-empty vocabulary",
            ));
        }
        if background.len() != cfg.vocab {
            return Err(shape_err(format!(
                "background has {} entries for {} words",
                background.len(),
                cfg.vocab
            )));
        }
        let mut dims = vec![cfg.vocab];
        dims.extend(&cfg.hidden);
        if dims.len() < 2 {
            return Err(invalid("encoder needs at least one hidden layer"));
        }
        let acts = vec![Activation::Softplus; dims.len() - 1];
        let encoder = MlpParams::new(&dims, &acts, rng)?;
        let h = *dims.last().expect("non-empty");
        let mu_head = Linear::glorot(h, cfg.topics, rng);
        let logvar_head = Linear::glorot(h, cfg.topics, rng);
        let beta = Linear::glorot(cfg.topics, cfg.vocab, rng).weight;
        let background = if cfg.use_background {
            background
        } else {
            vec![0.0; cfg.vocab]
        };
        Ok(Self {
            encoder,
            mu_head,
            logvar_head,
            mu_bn: BatchNorm::new(cfg.topics, false),
            logvar_bn: BatchNorm::new(cfg.topics, false),
            beta,
            background,
            decoder_bn: BatchNorm::new(cfg.vocab, false),
            decoder_mix: 1.0,
        })
    }

    pub fn vocab(&self) -> usize {
        self.beta.cols()
    }

    pub fn topics(&self) -> usize {
        self.beta.rows()
    }

    pub fn config(&self) -> NtmConfig {
        NtmConfig {
            vocab: self.vocab(),
            topics: self.topics(),
            hidden: self.encoder.layers.iter().map(Linear::output_dim).collect(),
            use_background: self.background.iter().any(|&v| v != 0.0),
        }
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.vocab() {
            return Err(shape_err(format!(
                "input has {} columns, vocabulary has {}",
                x.cols(),
                self.vocab()
            )));
        }
        Ok(())
    }

    /// Training-mode encoder (batch statistics, running stats untouched).
    pub fn encode_train(&self, x: &Matrix) -> Result<(Matrix, Matrix, EncoderCache)> {
        self.check_input(x)?;
        let (h, hidden) = self.encoder.forward_cached(x)?;
        let (mu, mu_bn) = self.mu_bn.forward_train(&self.mu_head.forward(&h)?)?;
        let (logvar, logvar_bn) = self
            .logvar_bn
            .forward_train(&self.logvar_head.forward(&h)?)?;
        Ok((
            mu,
            logvar,
            EncoderCache {
                hidden,
                h,
                mu_bn,
                logvar_bn,
            },
        ))
    }

    /// Evaluation-mode encoder using running statistics.
    pub fn encode(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        self.check_input(x)?;
        let h = self.encoder.forward(x)?;
        let mu = self.mu_bn.forward_eval(&self.mu_head.forward(&h)?)?;
        let logvar = self
            .logvar_bn
            .forward_eval(&self.logvar_head.forward(&h)?)?;
        Ok((mu, logvar))
    }

    pub fn encode_backward(
        &self,
        cache: &EncoderCache,
        dmu: &Matrix,
        dlogvar: &Matrix,
        grad: &mut NtmParams,
    ) -> Result<()> {
        let dpre_mu = self.mu_bn.backward(&cache.mu_bn, dmu, &mut grad.mu_bn)?;
        let dpre_lv = self
            .logvar_bn
            .backward(&cache.logvar_bn, dlogvar, &mut grad.logvar_bn)?;
        let mut dh = self
            .mu_head
            .backward(&cache.h, &dpre_mu, &mut grad.mu_head, true)?
            .expect("requested");
        dh.add_assign(
            &self
                .logvar_head
                .backward(&cache.h, &dpre_lv, &mut grad.logvar_head, true)?
                .expect("requested"),
        )?;
        self.encoder
            .backward(&cache.hidden, &dh, &mut grad.encoder, false)?;
        Ok(())
    }

    fn logits(&self, z: &Matrix) -> Result<Matrix> {
        if z.cols() != self.topics() {
            return Err(shape_err(format!(
                "latent has {} columns, model has {} topics",
                z.cols(),
                self.topics()
            )));
        }
        z.matmul(&self.beta)
    }

    fn add_background(&self, m: &mut Matrix) -> Result<()> {
        m.add_row_vector(&self.background)
    }

    /// Training-mode decoder: `mix · softmax(BN(zβ) + d) + (1 − mix) · softmax(zβ + d)`.
    pub fn decode_train(&self, z: &Matrix) -> Result<(Matrix, DecoderCache)> {
        let eta = self.logits(z)?;
        let (mut a_bn, bn) = self.decoder_bn.forward_train(&eta)?;
        self.add_background(&mut a_bn)?;
        let s_bn = softmax_rows(&a_bn);
        let mut a_plain = eta;
        self.add_background(&mut a_plain)?;
        let s_plain = softmax_rows(&a_plain);
        let mix = self.decoder_mix;
        let x = mixture(&s_bn, &s_plain, mix)?;
        Ok((
            x,
            DecoderCache {
                z: z.clone(),
                bn,
                s_bn,
                s_plain,
                mix,
            },
        ))
    }

    /// Evaluation-mode decoder using running statistics.
    pub fn decode(&self, z: &Matrix) -> Result<Matrix> {
        let eta = self.logits(z)?;
        let mut a_plain = eta.clone();
        self.add_background(&mut a_plain)?;
        let s_plain = softmax_rows(&a_plain);
        if self.decoder_mix == 0.0 {
            return Ok(s_plain);
        }
        let mut a_bn = self.decoder_bn.forward_eval(&eta)?;
        self.add_background(&mut a_bn)?;
        mixture(&softmax_rows(&a_bn), &s_plain, self.decoder_mix)
    }

    /// Accumulates decoder gradients and returns `∂L/∂z`.
    pub fn decode_backward(
        &self,
        cache: &DecoderCache,
        dx: &Matrix,
        grad: &mut NtmParams,
    ) -> Result<Matrix> {
        let mut deta = Matrix::zeros(dx.rows(), dx.cols());
        if cache.mix != 0.0 {
            let mut g = dx.clone();
            g.scale(cache.mix);
            let da = softmax_rows_backward(&cache.s_bn, &g)?;
            deta.add_assign(
                &self
                    .decoder_bn
                    .backward(&cache.bn, &da, &mut grad.decoder_bn)?,
            )?;
        }
        if cache.mix != 1.0 {
            let mut g = dx.clone();
            g.scale(1.0 - cache.mix);
            deta.add_assign(&softmax_rows_backward(&cache.s_plain, &g)?)?;
        }
        grad.beta.add_assign(&cache.z.t_matmul(&deta)?)?;
        deta.matmul_t(&self.beta)
    }

    /// Folds a training batch into the batch-norm running statistics.
    pub fn update_running(&mut self, enc: &EncoderCache, dec: &DecoderCache) {
        self.mu_bn.update_running(&enc.mu_bn);
        self.logvar_bn.update_running(&enc.logvar_bn);
        self.decoder_bn.update_running(&dec.bn);
    }

    /// Posterior-mean topic proportions `softmax(μ)` in evaluation mode.
    pub fn posterior_mean(&self, x: &Matrix) -> Result<Matrix> {
        Ok(topics_from_r(&self.encode(x)?.0))
    }

    pub fn to_archive(&self, ar: &mut Archive, prefix: &str) {
        let cfg = self.config();
        ar.set_meta(format!("{prefix}.vocab"), cfg.vocab.to_string());
        ar.set_meta(format!("{prefix}.topics"), cfg.topics.to_string());
        let hidden: Vec<String> = cfg.hidden.iter().map(usize::to_string).collect();
        ar.set_meta(format!("{prefix}.hidden"), hidden.join(","));
        ar.set_meta(
            format!("{prefix}.decoder_mix"),
            format!("{:?}", self.decoder_mix),
        );
        ar.push_params(prefix, self);
        ar.push(
            format!("{prefix}.state.background"),
            Matrix::row_vector(&self.background),
        );
        for (name, bn) in [
            ("mu_bn", &self.mu_bn),
            ("logvar_bn", &self.logvar_bn),
            ("decoder_bn", &self.decoder_bn),
        ] {
            ar.push(
                format!("{prefix}.state.{name}.running_mean"),
                Matrix::row_vector(&bn.running_mean),
            );
            ar.push(
                format!("{prefix}.state.{name}.running_var"),
                Matrix::row_vector(&bn.running_var),
            );
        }
    }

    pub fn from_archive(ar: &Archive, prefix: &str) -> Result<Self> {
        let parse = |key: &str| -> Result<usize> {
            ar.meta(&format!("{prefix}.{key}"))?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad `{prefix}.{key}`")))
        };
        let vocab = parse("vocab")?;
        let topics = parse("topics")?;
        let hidden = ar
            .meta(&format!("{prefix}.hidden"))?
            .split(',')
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Checkpoint("bad hidden widths".into()))
            })
            .collect::<Result<Vec<usize>>>()?;
        let mix: f64 = ar
            .meta(&format!("{prefix}.decoder_mix"))?
            .parse()
            .map_err(|_| Error::Checkpoint("bad decoder mix".into()))?;
        let cfg = NtmConfig {
            vocab,
            topics,
            hidden,
            use_background: true,
        };
        let mut rng = crate::numerics::rng::stream(0, 0);
        let mut m = Self::new(&cfg, vec![0.0; vocab], &mut rng)?;
        ar.load_params(prefix, &mut m)?;
        m.background = ar
            .tensor_shaped(&format!("{prefix}.state.background"), (1, vocab))?
            .data()
            .to_vec();
        m.decoder_mix = mix;
        for (name, bn) in [
            ("mu_bn", &mut m.mu_bn),
            ("logvar_bn", &mut m.logvar_bn),
            ("decoder_bn", &mut m.decoder_bn),
        ] {
            let d = bn.dim();
            bn.running_mean = ar
                .tensor_shaped(&format!("{prefix}.state.{name}.running_mean"), (1, d))?
                .data()
                .to_vec();
            bn.running_var = ar
                .tensor_shaped(&format!("{prefix}.state.{name}.running_var"), (1, d))?
                .data()
                .to_vec();
        }
        Ok(m)
    }
}

fn mixture(s_bn: &Matrix, s_plain: &Matrix, mix: f64) -> Result<Matrix> {
    if mix == 1.0 {
        return Ok(s_bn.clone());
    }
    if mix == 0.0 {
        return Ok(s_plain.clone());
    }
    s_bn.zip_map(s_plain, |a, b| mix * a + (1.0 - mix) * b)
}

impl Params for NtmParams {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut v = prefixed("encoder", self.encoder.tensors());
        v.extend(prefixed("mu_head", self.mu_head.tensors()));
        v.extend(prefixed("logvar_head", self.logvar_head.tensors()));
        v.extend(prefixed("mu_bn", self.mu_bn.tensors()));
        v.extend(prefixed("logvar_bn", self.logvar_bn.tensors()));
        v.push(("beta".into(), &self.beta));
        v.extend(prefixed("decoder_bn", self.decoder_bn.tensors()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut v = prefixed_mut("encoder", self.encoder.tensors_mut());
        v.extend(prefixed_mut("mu_head", self.mu_head.tensors_mut()));
        v.extend(prefixed_mut("logvar_head", self.logvar_head.tensors_mut()));
        v.extend(prefixed_mut("mu_bn", self.mu_bn.tensors_mut()));
        v.extend(prefixed_mut("logvar_bn", self.logvar_bn.tensors_mut()));
        v.push(("beta".into(), &mut self.beta));
        v.extend(prefixed_mut("decoder_bn", self.decoder_bn.tensors_mut()));
        v
    }
}

/// Gaussian prior over the pre-softmax latent.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorParams {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl PriorParams {
    pub fn standard_normal(k: usize) -> Self {
        Self {
            mean: vec![0.0; k],
            variance: vec![1.0; k],
            alpha: Vec::new(),
        }
    }

    /// Laplace approximation of a Dirichlet(α) in the softmax basis.
    pub fn from_dirichlet(alpha: &[f64]) -> Result<Self> {
        let k = alpha.len() as f64;
        if alpha.is_empty() || alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(invalid("Dirichlet concentrations must be positive"));
        }
        let mean_log = alpha.iter().map(|a| a.ln()).sum::<f64>() / k;
        let inv_sum = alpha.iter().map(|a| 1.0 / a).sum::<f64>();
        let mean = alpha.iter().map(|a| a.ln() - mean_log).collect();
        let variance = alpha
            .iter()
            .map(|a| (1.0 / a) * (1.0 - 2.0 / k) + inv_sum / (k * k))
            .collect();
        Ok(Self {
            mean,
            variance,
            alpha: alpha.to_vec(),
        })
    }

    pub fn symmetric(k: usize, alpha: f64) -> Result<Self> {
        Self::from_dirichlet(&vec![alpha; k])
    }

    pub fn default_alpha(k: usize) -> f64 {
        0.01 * 50.0 / k as f64
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `r = μ + exp(logvar/2) ⊙ noise`.
pub fn reparameterize(mu: &Matrix, logvar: &Matrix, noise: &Matrix) -> Result<Matrix> {
    mu.same_shape(logvar, "reparameterize")?;
    mu.same_shape(noise, "reparameterize")?;
    let mut r = mu.clone();
    for ((rv, &lv), &e) in r.data_mut().iter_mut().zip(logvar.data()).zip(noise.data()) {
        *rv += (0.5 * lv).exp() * e;
    }
    Ok(r)
}

pub fn topics_from_r(r: &Matrix) -> Matrix {
    softmax_rows(r)
}

/// Samples the latent for a batch given the encoder outputs and a noise draw.
pub fn sample_latent(mu: Matrix, logvar: Matrix, noise: Matrix) -> Result<LatentBatch> {
    let r = reparameterize(&mu, &logvar, &noise)?;
    let z = topics_from_r(&r);
    Ok(LatentBatch {
        mu,
        logvar,
        noise,
        r,
        z,
    })
}

/// Back-propagates `∂L/∂z` through the softmax and reparameterization,
/// returning `(∂L/∂μ, ∂L/∂logvar)`.
pub fn latent_backward(lat: &LatentBatch, dz: &Matrix) -> Result<(Matrix, Matrix)> {
    let dr = softmax_rows_backward(&lat.z, dz)?;
    let mut dlv = dr.clone();
    for ((g, &lv), &e) in dlv
        .data_mut()
        .iter_mut()
        .zip(lat.logvar.data())
        .zip(lat.noise.data())
    {
        *g *= 0.5 * (0.5 * lv).exp() * e;
    }
    Ok((dr, dlv))
}

/// `Σ_batch −xᵀ ln max(x′, 1e-10)`.
pub fn recon_loss(x: &Matrix, xprime: &Matrix) -> Result<f64> {
    x.same_shape(xprime, "reconstruction loss")?;
    let mut total = 0.0;
    for (&c, &p) in x.data().iter().zip(xprime.data()) {
        if c != 0.0 {
            total -= c * p.max(LOG_FLOOR).ln();
        }
    }
    Ok(total)
}

/// `∂ recon / ∂x′`; zero where the floor is active.
pub fn recon_grad(x: &Matrix, xprime: &Matrix) -> Result<Matrix> {
    x.zip_map(xprime, |c, p| {
        if c != 0.0 && p > LOG_FLOOR {
            -c / p
        } else {
            0.0
        }
    })
}

/// Closed-form KL between diagonal Gaussians, summed over dimensions and batch.
pub fn kl_loss(mu: &Matrix, logvar: &Matrix, prior: &PriorParams) -> Result<f64> {
    mu.same_shape(logvar, "kl")?;
    if mu.cols() != prior.dim() {
        return Err(shape_err("prior dimension differs from latent"));
    }
    let mut total = 0.0;
    for r in 0..mu.rows() {
        for (j, (&m, &lv)) in mu.row(r).iter().zip(logvar.row(r)).enumerate() {
            let pv = prior.variance[j];
            let diff = m - prior.mean[j];
            total += 0.5 * (lv.exp() / pv + diff * diff / pv + pv.ln() - lv - 1.0);
        }
    }
    Ok(total)
}

pub fn kl_grad(mu: &Matrix, logvar: &Matrix, prior: &PriorParams) -> Result<(Matrix, Matrix)> {
    mu.same_shape(logvar, "kl")?;
    let k = mu.cols();
    let mut dmu = Matrix::zeros(mu.rows(), k);
    let mut dlv = Matrix::zeros(mu.rows(), k);
    for r in 0..mu.rows() {
        for j in 0..k {
            let pv = prior.variance[j];
            dmu.set(r, j, (mu.get(r, j) - prior.mean[j]) / pv);
            dlv.set(r, j, 0.5 * (logvar.get(r, j).exp() / pv - 1.0));
        }
    }
    Ok((dmu, dlv))
}

/// Indices of the `n` largest entries per row, descending; ties go to the
/// lower index.
pub fn top_word_indices(beta: &Matrix, n: usize) -> Result<Vec<Vec<usize>>> {
    if n > beta.cols() {
        return Err(invalid(format!(
            "asked for {n} top words from a vocabulary of {}",
            beta.cols()
        )));
    }
    Ok(beta
        .row_iter()
        .map(|row| {
            let mut idx: Vec<usize> = (0..row.len()).collect();
            let cmp = |a: &usize, b: &usize| row[*b].total_cmp(&row[*a]).then(a.cmp(b));
            if n < idx.len() {
                idx.select_nth_unstable_by(n, cmp);
                idx.truncate(n);
            }
            idx.sort_by(cmp);
            idx
        })
        .collect())
}

pub fn top_words(beta: &Matrix, n: usize, vocab: &Vocabulary) -> Result<TopicSet> {
    if vocab.len() != beta.cols() {
        return Err(shape_err("vocabulary size differs from topic-word matrix"));
    }
    TopicSet::new(top_word_indices(beta, n)?)
}
