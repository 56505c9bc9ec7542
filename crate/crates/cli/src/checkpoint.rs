//! Training checkpoints: the best model, the optimizer moments at the end of
//! training, generator positions and the epoch history, in one archive.

use std::path::Path;

use anyhow::{bail, Context, Result};
use vicntm::numerics::{AdamConfig, Archive, OptimizerState, RngState};
use vicntm::variants::{Model, TrainConfig, TrainHistory, TrainOutcome, VariantSpec};

const KIND: &str = "checkpoint";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest_hash: String,
    pub vocab_hash: String,
    pub seed: u64,
    pub spec: VariantSpec,
    pub train: TrainConfig,
    pub model: Model,
    pub history: TrainHistory,
    pub optimizer: OptimizerState,
    pub rng: Vec<(String, RngState)>,
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("config types serialize")
}

impl Checkpoint {
    pub fn from_outcome(
        out: TrainOutcome,
        manifest_hash: &str,
        vocab_hash: &str,
        seed: u64,
        spec: &VariantSpec,
        train: &TrainConfig,
    ) -> Self {
        Self {
            manifest_hash: manifest_hash.into(),
            vocab_hash: vocab_hash.into(),
            seed,
            spec: *spec,
            train: train.clone(),
            model: out.model,
            history: out.history,
            optimizer: out.optimizer,
            rng: out.rng,
        }
    }

    pub fn to_archive(&self) -> Archive {
        let mut ar = Archive::new();
        ar.set_meta("kind", KIND);
        ar.set_meta("manifest", &self.manifest_hash);
        ar.set_meta("vocab_sha256", &self.vocab_hash);
        ar.set_meta("seed", self.seed.to_string());
        ar.set_meta("variant", json(&self.spec));
        ar.set_meta("train", json(&self.train));
        ar.set_meta("history", json(&self.history));
        self.model.to_archive(&mut ar);
        let opt = &self.optimizer;
        ar.set_meta("opt.config", json(&opt.config));
        ar.set_meta("opt.step", opt.step.to_string());
        ar.set_meta("opt.names", opt.names.join("\n"));
        for (i, (m, v)) in opt.first.iter().zip(&opt.second).enumerate() {
            ar.push(format!("opt.m.{i}"), m.clone());
            ar.push(format!("opt.v.{i}"), v.clone());
        }
        ar.set_meta(
            "rng.names",
            self.rng
                .iter()
                .map(|(n, _)| n.as_str())
                .collect::<Vec<_>>()
                .join("\n"),
        );
        for (name, state) in &self.rng {
            ar.set_meta(format!("rng.{name}"), state.encode());
        }
        ar
    }

    pub fn from_archive(ar: &Archive) -> Result<Self> {
        if ar.meta("kind")? != KIND {
            bail!("archive is not a training checkpoint");
        }
        let parse = |key: &str| -> Result<&str> { Ok(ar.meta(key)?) };
        let spec: VariantSpec =
            serde_json::from_str(parse("variant")?).context("bad variant metadata")?;
        let train: TrainConfig =
            serde_json::from_str(parse("train")?).context("bad train metadata")?;
        let history: TrainHistory =
            serde_json::from_str(parse("history")?).context("bad history metadata")?;
        let model = Model::from_archive(ar)?;
        if model.ntm.topics() != train.topics {
            bail!(
                "checkpoint model has {} topics, its config says {}",
                model.ntm.topics(),
                train.topics
            );
        }
        let config: AdamConfig =
            serde_json::from_str(parse("opt.config")?).context("bad optimizer metadata")?;
        let names: Vec<String> = match parse("opt.names")? {
            "" => Vec::new(),
            s => s.split('\n').map(String::from).collect(),
        };
        let mut first = Vec::with_capacity(names.len());
        let mut second = Vec::with_capacity(names.len());
        for i in 0..names.len() {
            first.push(ar.tensor(&format!("opt.m.{i}"))?.clone());
            second.push(ar.tensor(&format!("opt.v.{i}"))?.clone());
        }
        let step = parse("opt.step")?.parse().context("bad optimizer step")?;
        let optimizer = OptimizerState {
            config,
            step,
            names,
            first,
            second,
        };
        let rng = match parse("rng.names")? {
            "" => Vec::new(),
            s => s
                .split('\n')
                .map(|n| {
                    Ok((
                        n.to_string(),
                        RngState::decode(parse(&format!("rng.{n}"))?)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?,
        };
        Ok(Self {
            manifest_hash: parse("manifest")?.into(),
            vocab_hash: parse("vocab_sha256")?.into(),
            seed: parse("seed")?.parse().context("bad seed")?,
            spec,
            train,
            model,
            history,
            optimizer,
            rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive()
            .save(path)
            .with_context(|| format!("cannot write checkpoint {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ar = Archive::load(path)
            .with_context(|| format!("cannot load checkpoint {}", path.display()))?;
        Self::from_archive(&ar).with_context(|| format!("invalid checkpoint {}", path.display()))
    }
}
