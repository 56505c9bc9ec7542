//! Experiment configuration: a TOML file with `[data]`, `[variant]`,
//! `[train]`, `[sampler]`, `[metrics]` and `[search]` sections, overridable
//! from the environment.
//!
//! `VICNTM_TRAIN__BATCH_SIZE=100` sets `train.batch_size`; `__` separates
//! path segments. Values parse as TOML scalars or arrays and fall back to
//! strings.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vicntm::sampling::AdvSamplerConfig;
use vicntm::variants::{SearchBounds, TrainConfig, VariantSpec};

pub const ENV_PREFIX: &str = "VICNTM_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// raw documents, one per line (`lines`) or `{id, text}` objects (`jsonl`)
    pub input: PathBuf,
    pub format: String,
    /// named dataset whose split ratios and batch size apply unless set
    pub preset: Option<String>,
    pub min_df: usize,
    pub max_df_frac: f64,
    pub min_types: usize,
    pub ratios: [f64; 3],
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            format: "lines".into(),
            preset: None,
            min_df: 100,
            max_df_frac: 0.7,
            min_types: 30,
            ratios: [0.48, 0.12, 0.40],
            split_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// split providing NPMI co-occurrence counts: `test` or `train`
    pub reference: String,
    pub top_n: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            reference: "test".into(),
            top_n: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub trials: usize,
    pub seed: u64,
    pub bounds: SearchBounds,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            trials: 20,
            seed: 0,
            bounds: SearchBounds::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub data: DataConfig,
    pub variant: VariantSpec,
    pub train: TrainConfig,
    pub sampler: AdvSamplerConfig,
    pub metrics: MetricsConfig,
    pub search: SearchConfig,
}

/// Split ratios and batch size per named dataset.
pub fn preset(name: &str) -> Option<([f64; 3], usize)> {
    match name {
        "20ng" => Some(([0.48, 0.12, 0.40], 50)),
        "imdb" => Some(([0.50, 0.25, 0.25], 1000)),
        "wiki" => Some(([0.70, 0.15, 0.15], 250)),
        _ => None,
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().context("empty override path")?;
    let mut table = root;
    for p in parents {
        let entry = table
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("override path crosses non-table key `{p}`"),
        };
    }
    table.insert(last.clone(), value);
    Ok(())
}

fn has_path(root: &toml::Table, path: &[&str]) -> bool {
    let mut t = root;
    for (i, p) in path.iter().enumerate() {
        match t.get(*p) {
            Some(toml::Value::Table(next)) if i + 1 < path.len() => t = next,
            Some(_) if i + 1 == path.len() => return true,
            _ => return false,
        }
    }
    false
}

impl ExperimentConfig {
    /// Parses `text` after applying `overrides` (`(env key, value)` pairs
    /// already stripped of nothing; keys must carry [`ENV_PREFIX`]).
    pub fn from_toml_with(
        text: &str,
        overrides: &[(String, String)],
        base_dir: &Path,
    ) -> Result<Self> {
        let mut root: toml::Table = text.parse().context("config is not valid TOML")?;
        let mut sorted: Vec<&(String, String)> = overrides
            .iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        sorted.sort();
        for (k, v) in sorted {
            let path: Vec<String> = k[ENV_PREFIX.len()..]
                .split("__")
                .map(|s| s.to_ascii_lowercase())
                .collect();
            set_path(&mut root, &path, parse_scalar(v))?;
        }
        let preset_name = root
            .get("data")
            .and_then(|d| d.get("preset"))
            .and_then(toml::Value::as_str)
            .map(str::to_string);
        if let Some(name) = preset_name {
            let (ratios, batch) =
                preset(&name).with_context(|| format!("unknown dataset preset `{name}`"))?;
            if !has_path(&root, &["data", "ratios"]) {
                let arr = ratios.iter().map(|&r| toml::Value::Float(r)).collect();
                set_path(
                    &mut root,
                    &["data".into(), "ratios".into()],
                    toml::Value::Array(arr),
                )?;
            }
            if !has_path(&root, &["train", "batch_size"]) {
                set_path(
                    &mut root,
                    &["train".into(), "batch_size".into()],
                    toml::Value::Integer(batch as i64),
                )?;
            }
        }
        let mut cfg: ExperimentConfig = root
            .try_into()
            .context("config does not match the expected schema")?;
        for p in [&mut cfg.out_dir, &mut cfg.data.input] {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base_dir.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` with overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let env: Vec<(String, String)> = std::env::vars().collect();
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_with(&text, &env, base)
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_dir.as_os_str().is_empty() {
            bail!("out_dir must be set");
        }
        if self.seeds.is_empty() {
            bail!("seeds must list at least one seed");
        }
        let mut uniq = self.seeds.clone();
        uniq.sort_unstable();
        uniq.dedup();
        if uniq.len() != self.seeds.len() {
            bail!("seeds must be distinct");
        }
        vicntm::corpus::io::InputFormat::from_name(&self.data.format)?;
        if self.data.min_types == 0 || self.data.min_df == 0 {
            bail!("min_df and min_types must be at least 1");
        }
        self.variant.validate()?;
        self.train.validate()?;
        if self.variant.kind.needs_positive()
            && self.variant.sampler == vicntm::sampling::SampleSource::Adversarial
        {
            self.sampler.validate()?;
        }
        if !matches!(self.metrics.reference.as_str(), "test" | "train") {
            bail!("metrics.reference must be `test` or `train`");
        }
        if self.metrics.top_n < 2 {
            bail!("metrics.top_n must be at least 2");
        }
        self.search.bounds.validate()?;
        Ok(())
    }
}
