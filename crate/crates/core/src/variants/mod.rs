//! Per-variant loss composition over the shared topic model, the training
//! loop with early stopping, and hyperparameter search.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::ntm::{
    kl_grad, kl_loss, latent_backward, recon_grad, recon_loss, sample_latent, DecoderCache,
    EncoderCache, LatentBatch, NtmParams, PriorParams,
};
use crate::numerics::params::{prefixed, prefixed_mut};
use crate::numerics::{sigmoid, softplus, zeros_like, Archive, Matrix, MlpParams, Params};
use crate::sampling::SampleSource;
use crate::vicreg::{vic_grad, vic_loss, VicWeights};

mod search;
mod train;

pub use search::{
    ablation_specs, random_search, sample_specs, SearchBounds, SearchResult, TrialRecord,
};
pub use train::{
    batch_plan, train, EarlyStopper, EpochRecord, StopReason, TrainConfig, TrainHistory,
    TrainOutcome,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VariantKind {
    #[serde(rename = "scholar")]
    Scholar,
    #[serde(rename = "prodlda")]
    ProdLda,
    #[serde(rename = "clntm")]
    Clntm,
    #[serde(rename = "vicntm")]
    Vicntm,
    #[serde(rename = "deep-vicntm")]
    DeepVicntm,
    #[serde(rename = "vc-clntm")]
    VcClntm,
    #[serde(rename = "deep-vc-clntm")]
    DeepVcClntm,
    #[serde(rename = "vic-clntm")]
    VicClntm,
}

impl VariantKind {
    pub const ALL: [VariantKind; 8] = [
        VariantKind::Scholar,
        VariantKind::ProdLda,
        VariantKind::Clntm,
        VariantKind::Vicntm,
        VariantKind::DeepVicntm,
        VariantKind::VcClntm,
        VariantKind::DeepVcClntm,
        VariantKind::VicClntm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Scholar => "scholar",
            VariantKind::ProdLda => "prodlda",
            VariantKind::Clntm => "clntm",
            VariantKind::Vicntm => "vicntm",
            VariantKind::DeepVicntm => "deep-vicntm",
            VariantKind::VcClntm => "vc-clntm",
            VariantKind::DeepVcClntm => "deep-vc-clntm",
            VariantKind::VicClntm => "vic-clntm",
        }
    }

    pub fn is_deep(self) -> bool {
        matches!(self, VariantKind::DeepVicntm | VariantKind::DeepVcClntm)
    }

    pub fn needs_positive(self) -> bool {
        !matches!(self, VariantKind::Scholar | VariantKind::ProdLda)
    }

    pub fn needs_negative(self) -> bool {
        matches!(
            self,
            VariantKind::Clntm
                | VariantKind::VcClntm
                | VariantKind::DeepVcClntm
                | VariantKind::VicClntm
        )
    }

    pub fn uses_background(self) -> bool {
        self != VariantKind::ProdLda
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariantSpec {
    pub kind: VariantKind,
    pub vic: VicWeights,
    /// expander width for deep kinds; `None` means `4k`
    pub expander_dim: Option<usize>,
    pub contrastive_weight: f64,
    pub temperature: f64,
    /// weight of the anchor/negative cosine penalty (VIC-CLNTM)
    pub cosine_weight: f64,
    pub sampler: SampleSource,
    /// words replaced per document by the tf-idf sampler
    pub t: usize,
}

impl Default for VariantSpec {
    fn default() -> Self {
        Self::new(VariantKind::Scholar)
    }
}

impl VariantSpec {
    pub fn new(kind: VariantKind) -> Self {
        Self {
            kind,
            vic: VicWeights::default(),
            expander_dim: None,
            contrastive_weight: 1.0,
            temperature: 0.5,
            cosine_weight: 1.0,
            sampler: SampleSource::Tfidf,
            t: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.vic.validate()?;
        if !(self.temperature > 0.0) {
            return Err(invalid("temperature must be positive"));
        }
        if !(self.contrastive_weight >= 0.0) || !(self.cosine_weight >= 0.0) {
            return Err(invalid(
                "contrastive and cosine weights must be non-negative",
            ));
        }
        if self.expander_dim == Some(0) {
            return Err(invalid("expander dimension must be positive"));
        }
        if self.kind.needs_positive() && self.t == 0 && self.sampler == SampleSource::Tfidf {
            return Err(invalid("tf-idf sampler needs t ≥ 1"));
        }
        Ok(())
    }

    pub fn expander_width(&self, k: usize) -> usize {
        self.expander_dim.unwrap_or(4 * k)
    }

    /// VIC weights as applied; the VC kinds drop the invariance term.
    pub fn effective_vic(&self) -> Option<VicWeights> {
        match self.kind {
            VariantKind::Vicntm | VariantKind::DeepVicntm | VariantKind::VicClntm => Some(self.vic),
            VariantKind::VcClntm | VariantKind::DeepVcClntm => Some(VicWeights {
                lambda: 0.0,
                ..self.vic
            }),
            _ => None,
        }
    }

    fn has_contrastive(&self) -> bool {
        matches!(
            self.kind,
            VariantKind::Clntm | VariantKind::VcClntm | VariantKind::DeepVcClntm
        )
    }
}

/// Topic model plus the expander of the deep variants.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub ntm: NtmParams,
    pub expander: Option<MlpParams>,
}

impl Params for Model {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut v = prefixed("ntm", self.ntm.tensors());
        if let Some(e) = &self.expander {
            v.extend(prefixed("expander", e.tensors()));
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut v = prefixed_mut("ntm", self.ntm.tensors_mut());
        if let Some(e) = &mut self.expander {
            v.extend(prefixed_mut("expander", e.tensors_mut()));
        }
        v
    }
}

impl Model {
    pub fn to_archive(&self, ar: &mut Archive) {
        self.ntm.to_archive(ar, "ntm");
        match &self.expander {
            Some(e) => {
                ar.set_meta("expander.width", e.output_dim().to_string());
                ar.push_params("expander", e);
            }
            None => ar.set_meta("expander.width", "0"),
        }
    }

    pub fn from_archive(ar: &Archive) -> Result<Self> {
        let ntm = NtmParams::from_archive(ar, "ntm")?;
        let width: usize = ar
            .meta("expander.width")?
            .parse()
            .map_err(|_| Error::Checkpoint("bad expander width".into()))?;
        let expander = if width == 0 {
            None
        } else {
            let mut e = crate::vicreg::new_expander(
                ntm.topics(),
                width,
                &mut crate::numerics::rng::stream(0, 0),
            )?;
            ar.load_params("expander", &mut e)?;
            Some(e)
        };
        Ok(Self { ntm, expander })
    }
}

/// Per-batch loss values. `inv`, `var` and `cov` are unweighted; only
/// `total` carries the variant's weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub kl: f64,
    pub inv: f64,
    pub var: f64,
    pub cov: f64,
    pub contrastive: f64,
    pub cosine: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.recon,
            self.kl,
            self.inv,
            self.var,
            self.cov,
            self.contrastive,
            self.cosine,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn row_norms(z: &Matrix) -> Result<Vec<f64>> {
    z.row_iter()
        .enumerate()
        .map(|(r, row)| {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                Ok(n)
            } else {
                Err(invalid(format!("latent row {r} has zero norm")))
            }
        })
        .collect()
}

/// Row-wise cosine similarities with their gradients with respect to both
/// arguments.
fn cosine_rows(u: &Matrix, v: &Matrix) -> Result<(Vec<f64>, Matrix, Matrix)> {
    u.same_shape(v, "cosine similarity")?;
    let (nu, nv) = (row_norms(u)?, row_norms(v)?);
    let mut cos = Vec::with_capacity(u.rows());
    let mut du = Matrix::zeros(u.rows(), u.cols());
    let mut dv = Matrix::zeros(u.rows(), u.cols());
    for r in 0..u.rows() {
        let (a, b) = (u.row(r), v.row(r));
        let c = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (nu[r] * nv[r]);
        for j in 0..u.cols() {
            du.set(r, j, b[j] / (nu[r] * nv[r]) - c * a[j] / (nu[r] * nu[r]));
            dv.set(r, j, a[j] / (nu[r] * nv[r]) - c * b[j] / (nv[r] * nv[r]));
        }
        cos.push(c);
    }
    Ok((cos, du, dv))
}

/// Mean over rows of `−ln[e^{c⁺/τ} / (e^{c⁺/τ} + e^{c⁻/τ})] = softplus((c⁻ − c⁺)/τ)`.
pub fn contrastive_term(z: &Matrix, zp: &Matrix, zn: &Matrix, temperature: f64) -> Result<f64> {
    Ok(contrastive_grad(z, zp, zn, temperature)?.0)
}

/// [`contrastive_term`] and its gradients with respect to `z`, `z⁺`, `z⁻`.
pub fn contrastive_grad(
    z: &Matrix,
    zp: &Matrix,
    zn: &Matrix,
    temperature: f64,
) -> Result<(f64, Matrix, Matrix, Matrix)> {
    if !(temperature > 0.0) {
        return Err(invalid("temperature must be positive"));
    }
    let (cp, dz_p, dzp) = cosine_rows(z, zp)?;
    let (cn, dz_n, dzn) = cosine_rows(z, zn)?;
    let n = z.rows() as f64;
    let mut loss = 0.0;
    let mut gz = Matrix::zeros(z.rows(), z.cols());
    let mut gp = dzp;
    let mut gn = dzn;
    for r in 0..z.rows() {
        let a = (cn[r] - cp[r]) / temperature;
        loss += softplus(a);
        let s = sigmoid(a) / (temperature * n);
        for j in 0..z.cols() {
            gz.set(r, j, s * (dz_n.get(r, j) - dz_p.get(r, j)));
        }
        gp.row_mut(r).iter_mut().for_each(|v| *v *= -s);
        gn.row_mut(r).iter_mut().for_each(|v| *v *= s);
    }
    Ok((loss / n, gz, gp, gn))
}

/// Mean row-wise cosine similarity between anchor and negative latents.
pub fn cosine_penalty(z: &Matrix, zn: &Matrix) -> Result<f64> {
    Ok(cosine_rows(z, zn)?.0.iter().sum::<f64>() / z.rows() as f64)
}

/// Anchor forward pass in training mode.
#[derive(Clone, Debug)]
pub struct AnchorPass {
    pub latent: LatentBatch,
    enc: EncoderCache,
    dec: DecoderCache,
    /// decoder output on the simplex
    pub xprime: Matrix,
}

pub fn anchor_pass(ntm: &NtmParams, x: &Matrix, noise: &Matrix) -> Result<AnchorPass> {
    let (mu, logvar, enc) = ntm.encode_train(x)?;
    let latent = sample_latent(mu, logvar, noise.clone())?;
    let (xprime, dec) = ntm.decode_train(&latent.z)?;
    Ok(AnchorPass {
        latent,
        enc,
        dec,
        xprime,
    })
}

impl AnchorPass {
    /// Folds this batch into the batch-norm running statistics.
    pub fn commit_running(&self, ntm: &mut NtmParams) {
        ntm.update_running(&self.enc, &self.dec);
    }
}

/// Augmented branch input: documents (treated as constants) and noise.
#[derive(Clone, Copy, Debug)]
pub struct Branch<'a> {
    pub x: &'a Matrix,
    pub noise: &'a Matrix,
}

struct BranchPass {
    latent: LatentBatch,
    enc: EncoderCache,
}

fn branch_pass(ntm: &NtmParams, b: &Branch<'_>, rows: usize) -> Result<BranchPass> {
    if b.x.rows() != rows {
        return Err(shape_err(
            "augmented branch rows differ from the anchor batch",
        ));
    }
    let (mu, logvar, enc) = ntm.encode_train(b.x)?;
    Ok(BranchPass {
        latent: sample_latent(mu, logvar, b.noise.clone())?,
        enc,
    })
}

/// Applies `vic` to `(z, z⁺)` directly or through the expander, adding the
/// latent gradients into `dz`, `dzp`.
fn vic_part(
    model: &Model,
    deep: bool,
    z: &Matrix,
    zp: &Matrix,
    w: &VicWeights,
    grad: &mut Model,
    dz: &mut Matrix,
    dzp: &mut Matrix,
) -> Result<crate::vicreg::VicBreakdown> {
    if !deep {
        let b = vic_loss(z, zp, w)?;
        let (gy, gyp) = vic_grad(z, zp, w)?;
        dz.add_assign(&gy)?;
        dzp.add_assign(&gyp)?;
        return Ok(b);
    }
    let e = model
        .expander
        .as_ref()
        .ok_or_else(|| invalid("deep variant without an expander"))?;
    let ge = grad
        .expander
        .as_mut()
        .ok_or_else(|| invalid("gradient buffer lacks an expander"))?;
    let (y, cy) = e.forward_cached(z)?;
    let (yp, cyp) = e.forward_cached(zp)?;
    let b = vic_loss(&y, &yp, w)?;
    let (gy, gyp) = vic_grad(&y, &yp, w)?;
    dz.add_assign(&e.backward(&cy, &gy, ge, true)?.expect("requested"))?;
    dzp.add_assign(&e.backward(&cyp, &gyp, ge, true)?.expect("requested"))?;
    Ok(b)
}

/// Loss breakdown and full parameter gradient for one minibatch. Branch
/// inputs are constants; `kl_weight` scales the KL term.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_grad(
    model: &Model,
    spec: &VariantSpec,
    prior: &PriorParams,
    kl_weight: f64,
    x: &Matrix,
    anchor: &AnchorPass,
    positive: Option<Branch<'_>>,
    negative: Option<Branch<'_>>,
) -> Result<(LossBreakdown, Model)> {
    let kind = spec.kind;
    if kind.needs_positive() && positive.is_none() {
        return Err(Error::MissingSamples {
            variant: kind.name().into(),
            what: "positive",
        });
    }
    if kind.needs_negative() && negative.is_none() {
        return Err(Error::MissingSamples {
            variant: kind.name().into(),
            what: "negative",
        });
    }
    let ntm = &model.ntm;
    let lat = &anchor.latent;
    let n = x.rows();
    let mut grad = zeros_like(model);
    let mut out = LossBreakdown {
        recon: recon_loss(x, &anchor.xprime)?,
        kl: kl_loss(&lat.mu, &lat.logvar, prior)?,
        ..LossBreakdown::default()
    };
    out.total = out.recon + kl_weight * out.kl;

    let mut dz =
        ntm.decode_backward(&anchor.dec, &recon_grad(x, &anchor.xprime)?, &mut grad.ntm)?;
    let pos = positive
        .filter(|_| kind.needs_positive())
        .map(|b| branch_pass(ntm, &b, n))
        .transpose()?;
    let neg = negative
        .filter(|_| kind.needs_negative())
        .map(|b| branch_pass(ntm, &b, n))
        .transpose()?;
    let zeros = || Matrix::zeros(n, lat.z.cols());
    let mut dzp = zeros();
    let mut dzn = zeros();

    if let (Some(w), Some(p)) = (spec.effective_vic(), &pos) {
        let b = vic_part(
            model,
            kind.is_deep(),
            &lat.z,
            &p.latent.z,
            &w,
            &mut grad,
            &mut dz,
            &mut dzp,
        )?;
        out.inv = b.inv;
        out.var = b.var;
        out.cov = b.cov;
        out.total += b.total;
    }
    if spec.has_contrastive() {
        let (p, q) = (
            pos.as_ref().expect("checked"),
            neg.as_ref().expect("checked"),
        );
        let (l, gz, gp, gn) = contrastive_grad(&lat.z, &p.latent.z, &q.latent.z, spec.temperature)?;
        out.contrastive = l;
        out.total += spec.contrastive_weight * l;
        dz.axpy(spec.contrastive_weight, &gz)?;
        dzp.axpy(spec.contrastive_weight, &gp)?;
        dzn.axpy(spec.contrastive_weight, &gn)?;
    }
    if kind == VariantKind::VicClntm {
        let q = neg.as_ref().expect("checked");
        let (cos, gz, gn) = cosine_rows(&lat.z, &q.latent.z)?;
        out.cosine = cos.iter().sum::<f64>() / n as f64;
        out.total += spec.cosine_weight * out.cosine;
        dz.axpy(spec.cosine_weight / n as f64, &gz)?;
        dzn.axpy(spec.cosine_weight / n as f64, &gn)?;
    }

    let (mut dmu, mut dlv) = latent_backward(lat, &dz)?;
    if kl_weight != 0.0 {
        let (kmu, klv) = kl_grad(&lat.mu, &lat.logvar, prior)?;
        dmu.axpy(kl_weight, &kmu)?;
        dlv.axpy(kl_weight, &klv)?;
    }
    ntm.encode_backward(&anchor.enc, &dmu, &dlv, &mut grad.ntm)?;
    for (b, d) in [(&pos, &dzp), (&neg, &dzn)] {
        if let Some(b) = b {
            let (dmu, dlv) = latent_backward(&b.latent, d)?;
            ntm.encode_backward(&b.enc, &dmu, &dlv, &mut grad.ntm)?;
        }
    }
    Ok((out, grad))
}

/// Loss value only; runs the anchor pass itself.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    model: &Model,
    spec: &VariantSpec,
    prior: &PriorParams,
    kl_weight: f64,
    x: &Matrix,
    noise: &Matrix,
    positive: Option<Branch<'_>>,
    negative: Option<Branch<'_>>,
) -> Result<LossBreakdown> {
    let anchor = anchor_pass(&model.ntm, x, noise)?;
    Ok(loss_and_grad(
        model, spec, prior, kl_weight, x, &anchor, positive, negative,
    )?
    .0)
}
