//! The runner's commands. Each returns its in-memory result as well as
//! writing files, so tests can check both.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context};
use rayon::prelude::*;
use serde_json::{json, Value};
use vicntm::corpus::{self, io, synthetic, BowMatrix, CorpusSplit, Vocabulary};
use vicntm::metrics::{count_cooc, MetricsReport, TopicSet};
use vicntm::ntm::top_words;
use vicntm::numerics::Matrix;
use vicntm::sampling::{self, SampleSource};
use vicntm::variants::{self, ablation_specs, SearchResult, VariantSpec};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::manifest::{
    code_version, file_sha256, manifest_hash, publish_dir, sha256_hex, write_atomic, write_manifest,
};
use crate::{training_kind, CliError, CliResult, Kind, WithKind};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUMMARY_HEADER: &str =
    "group,dataset,variant,k,n_seeds,npmi_mean,npmi_std,td_mean,td_std,irbo_mean,irbo_std,perplexity_mean,perplexity_std";

/// A preprocessed corpus loaded back from its artifact directory.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub dir: PathBuf,
    pub hash: String,
    pub vocab: Vocabulary,
    pub vocab_hash: String,
    pub bow: BowMatrix,
    pub ids: Vec<String>,
    pub split: CorpusSplit,
}

fn data_manifest(cfg: &ExperimentConfig) -> CliResult<Value> {
    let d = &cfg.data;
    if !d.input.is_file() {
        return Err(anyhow!("input corpus not found: {}", d.input.display())).kind(Kind::Data);
    }
    Ok(json!({
        "code_version": code_version(),
        "command": "preprocess",
        "input_sha256": file_sha256(&d.input).kind(Kind::Data)?,
        "format": d.format,
        "min_df": d.min_df,
        "max_df_frac": d.max_df_frac,
        "min_types": d.min_types,
        "ratios": d.ratios,
        "split_seed": d.split_seed,
    }))
}

fn dataset_name(cfg: &ExperimentConfig) -> String {
    cfg.data.preset.clone().unwrap_or_else(|| {
        cfg.data
            .input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "corpus".into())
    })
}

fn write_corpus(cfg: &ExperimentConfig, manifest: &Value, dir: &Path) -> anyhow::Result<()> {
    let d = &cfg.data;
    let format = io::InputFormat::from_name(&d.format)?;
    let docs = io::read_documents_file(&d.input, format)?;
    if docs.is_empty() {
        bail!("{} contains no usable documents", d.input.display());
    }
    let vocab =
        corpus::build_vocabulary(&docs, d.min_df, d.max_df_frac, &corpus::english_stopwords())?;
    let (bow, ids) = corpus::vectorize_and_filter(&docs, &vocab, d.min_types)?;
    let split = corpus::split(&bow, &ids, d.ratios, d.split_seed)?;
    if split.train.bow.rows() < 2 || split.dev.bow.rows() == 0 || split.test.bow.rows() == 0 {
        bail!(
            "{} documents survive filtering, too few to split {:?}",
            bow.rows(),
            d.ratios
        );
    }
    io::write_vocabulary(&dir.join("vocab.tsv"), &vocab)?;
    io::write_bow(&dir.join("bow.txt"), &bow)?;
    io::write_ids(&dir.join("ids.txt"), &ids)?;
    for name in ["train", "dev", "test"] {
        io::write_ids(
            &dir.join(format!("split.{name}.txt")),
            &split.part(name).expect("known part").ids,
        )?;
    }
    io::write_idf(
        &dir.join("idf.txt"),
        &corpus::compute_tfidf(&split.train.bow)?.idf,
    )?;
    let stats = json!({
        "raw_documents": docs.len(),
        "documents": bow.rows(),
        "vocabulary": vocab.len(),
        "tokens": bow.total_tokens(),
        "train": split.train.bow.rows(),
        "dev": split.dev.bow.rows(),
        "test": split.test.bow.rows(),
        "vocab_sha256": file_sha256(&dir.join("vocab.tsv"))?,
    });
    write_manifest(&dir.join("stats.json"), &stats)?;
    write_manifest(&dir.join("manifest.json"), manifest)
}

pub fn load_corpus(dir: &Path, split_seed: u64) -> anyhow::Result<Corpus> {
    let ctx = || format!("corpus artifacts in {}", dir.display());
    let vocab = io::read_vocabulary(&dir.join("vocab.tsv")).with_context(ctx)?;
    let bow = io::read_bow(&dir.join("bow.txt")).with_context(ctx)?;
    let ids = io::read_ids(&dir.join("ids.txt")).with_context(ctx)?;
    if bow.cols() != vocab.len() || bow.rows() != ids.len() {
        bail!(
            "{} are inconsistent: matrix {}x{}, {} ids, {} words",
            ctx(),
            bow.rows(),
            bow.cols(),
            ids.len(),
            vocab.len()
        );
    }
    let parts = ["train", "dev", "test"]
        .map(|n| io::read_ids(&dir.join(format!("split.{n}.txt"))).with_context(ctx));
    let [tr, dv, te] = parts;
    let (tr, dv, te) = (tr?, dv?, te?);
    let split = CorpusSplit::from_ids(&bow, &ids, [&tr, &dv, &te], split_seed)?;
    let hash = dir
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_prefix("corpus-"))
        .unwrap_or_default()
        .to_string();
    Ok(Corpus {
        dir: dir.into(),
        hash,
        vocab_hash: file_sha256(&dir.join("vocab.tsv"))?,
        vocab,
        bow,
        ids,
        split,
    })
}

/// Tokenizes, filters and splits the input, writing the artifacts once per
/// data manifest; later calls load the existing directory.
pub fn cmd_preprocess(cfg: &ExperimentConfig) -> CliResult<Corpus> {
    let manifest = data_manifest(cfg)?;
    let hash = manifest_hash(&manifest);
    let dir = cfg.out_dir.join(format!("corpus-{hash}"));
    publish_dir(&dir, |stage| write_corpus(cfg, &manifest, stage)).kind(Kind::Data)?;
    load_corpus(&dir, cfg.data.split_seed).kind(Kind::Data)
}

fn needs_table(spec: &VariantSpec) -> bool {
    spec.kind.needs_positive() && spec.sampler == SampleSource::Adversarial
}

/// Fits the adversarial sampler on the training split under `seed`, once
/// per sampler manifest. Returns the directory and the positive table.
pub fn fit_adversarial(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    seed: u64,
) -> CliResult<(PathBuf, Matrix)> {
    cfg.sampler.validate().kind(Kind::Config)?;
    let manifest = json!({
        "code_version": code_version(),
        "command": "fit-adversarial",
        "corpus": corpus.hash,
        "sampler": cfg.sampler,
        "seed": seed,
    });
    let dir = cfg
        .out_dir
        .join(format!("adversarial-{}", manifest_hash(&manifest)));
    publish_dir(&dir, |stage| {
        let out = sampling::adversarial_fit(&corpus.split.train.bow, &cfg.sampler, seed).map_err(
            |e| {
                anyhow!(CliError {
                    kind: training_kind(&e),
                    source: e.into()
                })
            },
        )?;
        sampling::save_positive_table(
            &stage.join("positives.bin"),
            &corpus.split.train.ids,
            &out.positives,
        )?;
        let mut log = String::from("epoch,target_loss,augment_loss,target_acc,teacher_acc\n");
        for e in &out.log {
            let _ = writeln!(
                log,
                "{},{},{},{},{}",
                e.epoch, e.target_loss, e.augment_loss, e.target_acc, e.teacher_acc
            );
        }
        fs::write(stage.join("log.csv"), log)?;
        write_manifest(&stage.join("manifest.json"), &manifest)
    })
    .map_err(lift)?;
    let (ids, table) =
        sampling::load_positive_table(&dir.join("positives.bin")).kind(Kind::Data)?;
    if ids != corpus.split.train.ids {
        return Err(anyhow!(
            "positive table in {} does not match the training split",
            dir.display()
        ))
        .kind(Kind::Data);
    }
    Ok((dir, table))
}

/// Recovers a classified error that travelled through an `anyhow` boundary.
fn lift(e: anyhow::Error) -> CliError {
    match e.downcast::<CliError>() {
        Ok(c) => c,
        Err(e) => CliError {
            kind: Kind::Data,
            source: e,
        },
    }
}

/// One finished training run.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub seed: u64,
    pub dir: PathBuf,
    pub report: MetricsReport,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub group: String,
    pub runs: Vec<RunRecord>,
    pub summary_row: String,
}

fn run_manifest(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    spec: &VariantSpec,
    seed: Option<u64>,
) -> Value {
    let mut m = json!({
        "code_version": code_version(),
        "command": "train",
        "corpus": corpus.hash,
        "variant": spec,
        "train": cfg.train,
        "metrics": cfg.metrics,
        "sampler": if needs_table(spec) { json!(cfg.sampler) } else { Value::Null },
    });
    match seed {
        Some(s) => m["seed"] = json!(s),
        None => m["seeds"] = json!(cfg.seeds),
    }
    m
}

/// Recomputes the metrics of a frozen model against the configured
/// reference split, with the run's identification columns.
pub fn evaluate(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    ck: &Checkpoint,
) -> CliResult<MetricsReport> {
    if ck.vocab_hash != corpus.vocab_hash {
        return Err(anyhow!(
            "checkpoint vocabulary {} differs from corpus vocabulary {}",
            &ck.vocab_hash[..12.min(ck.vocab_hash.len())],
            &corpus.vocab_hash[..12]
        ))
        .kind(Kind::Data);
    }
    let reference = match cfg.metrics.reference.as_str() {
        "train" => &corpus.split.train.bow,
        _ => &corpus.split.test.bow,
    };
    let counts = count_cooc(reference).kind(Kind::Data)?;
    let topics =
        top_words(&ck.model.ntm.beta, cfg.metrics.top_n, &corpus.vocab).kind(Kind::Data)?;
    let meta = BTreeMap::from([
        ("dataset".to_string(), dataset_name(cfg)),
        ("k".to_string(), ck.train.topics.to_string()),
        ("manifest".to_string(), ck.manifest_hash.clone()),
        ("seed".to_string(), ck.seed.to_string()),
        ("variant".to_string(), ck.spec.kind.name().to_string()),
    ]);
    MetricsReport::compute(
        &ck.model.ntm,
        &topics,
        &counts,
        &corpus.split.test.bow,
        meta,
    )
    .kind(Kind::Data)
}

fn metrics_csv(r: &MetricsReport) -> String {
    format!("{}\n{}\n", r.csv_header(), r.csv_row())
}

fn topics_text(topics: &TopicSet, vocab: &Vocabulary) -> String {
    topics
        .words(vocab)
        .iter()
        .map(|w| w.join(" ") + "\n")
        .collect()
}

fn latents_csv(ck: &Checkpoint, bow: &BowMatrix, ids: &[String]) -> anyhow::Result<String> {
    let rows: Vec<usize> = (0..bow.rows()).collect();
    let z = ck.model.ntm.posterior_mean(&bow.dense_rows(&rows))?;
    let mut out = String::from("id");
    for j in 0..z.cols() {
        let _ = write!(out, ",z{j}");
    }
    out.push('\n');
    for (id, row) in ids.iter().zip(z.row_iter()) {
        out.push_str(id);
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

fn train_one(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    spec: &VariantSpec,
    seed: u64,
) -> CliResult<RunRecord> {
    let manifest = run_manifest(cfg, corpus, spec, Some(seed));
    let hash = manifest_hash(&manifest);
    let dir = cfg
        .out_dir
        .join("runs")
        .join(format!("{}-{hash}", spec.kind.name()));
    let table = if needs_table(spec) && !dir.is_dir() {
        Some(fit_adversarial(cfg, corpus, seed)?.1)
    } else {
        None
    };
    publish_dir(&dir, |stage| {
        let out = variants::train(spec, &corpus.split, &cfg.train, seed, table.as_ref()).map_err(
            |e| {
                let kind = training_kind(&e);
                anyhow!(CliError {
                    kind,
                    source: anyhow!(e)
                        .context(format!("training run {hash} (seed {seed}) aborted"))
                })
            },
        )?;
        let ck = Checkpoint::from_outcome(out, &hash, &corpus.vocab_hash, seed, spec, &cfg.train);
        let report = evaluate(cfg, corpus, &ck).map_err(|e| anyhow!(e))?;
        let topics = top_words(&ck.model.ntm.beta, cfg.metrics.top_n, &corpus.vocab)?;
        ck.save(&stage.join("checkpoint.bin"))?;
        fs::write(stage.join("curves.csv"), ck.history.curves_csv())?;
        fs::write(
            stage.join("topics.txt"),
            topics_text(&topics, &corpus.vocab),
        )?;
        fs::write(
            stage.join("topic_npmi.csv"),
            report.topic_detail(&topics, &corpus.vocab),
        )?;
        fs::write(stage.join("metrics.csv"), metrics_csv(&report))?;
        fs::write(
            stage.join("latents.csv"),
            latents_csv(&ck, &corpus.split.test.bow, &corpus.split.test.ids)?,
        )?;
        write_manifest(&stage.join("manifest.json"), &manifest)
    })
    .map_err(lift)?;
    let ck = Checkpoint::load(&dir.join("checkpoint.bin")).kind(Kind::Data)?;
    Ok(RunRecord {
        seed,
        report: evaluate(cfg, corpus, &ck)?,
        dir,
    })
}

/// Sample mean and standard deviation (`n − 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summary_row(
    group: &str,
    cfg: &ExperimentConfig,
    spec: &VariantSpec,
    runs: &[RunRecord],
) -> String {
    let mut row = format!(
        "{group},{},{},{},{}",
        dataset_name(cfg),
        spec.kind.name(),
        cfg.train.topics,
        runs.len()
    );
    let cols: [fn(&MetricsReport) -> f64; 4] = [|r| r.npmi, |r| r.td, |r| r.irbo, |r| r.perplexity];
    for f in cols {
        let (m, s) = mean_std(&runs.iter().map(|r| f(&r.report)).collect::<Vec<_>>());
        let _ = write!(row, ",{m:.6},{s:.6}");
    }
    row
}

static SUMMARY_LOCK: Mutex<()> = Mutex::new(());

struct FileLock(PathBuf);

impl FileLock {
    fn acquire(path: PathBuf) -> anyhow::Result<Self> {
        let start = Instant::now();
        loop {
            match fs::OpenOptions::new()
                .write(true)
                .create_new(true)
                .open(&path)
            {
                Ok(_) => return Ok(Self(path)),
                Err(e)
                    if e.kind() == std::io::ErrorKind::AlreadyExists
                        && start.elapsed() < Duration::from_secs(60) =>
                {
                    std::thread::sleep(Duration::from_millis(20))
                }
                Err(e) => return Err(e).with_context(|| format!("cannot lock {}", path.display())),
            }
        }
    }
}

impl Drop for FileLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Inserts or replaces the row whose first column is `row`'s group key.
pub fn upsert_summary(path: &Path, row: &str) -> anyhow::Result<()> {
    let _guard = SUMMARY_LOCK.lock().unwrap_or_else(|p| p.into_inner());
    let _file = FileLock::acquire(path.with_extension("csv.lock"))?;
    let key = row.split(',').next().unwrap_or_default();
    let mut lines: Vec<String> = match fs::read_to_string(path) {
        Ok(text) => text.lines().skip(1).map(String::from).collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e).with_context(|| format!("cannot read {}", path.display())),
    };
    match lines.iter_mut().find(|l| l.split(',').next() == Some(key)) {
        Some(l) => *l = row.to_string(),
        None => lines.push(row.to_string()),
    }
    let mut text = format!("{SUMMARY_HEADER}\n");
    for l in lines {
        text.push_str(&l);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

fn train_group(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    spec: &VariantSpec,
) -> CliResult<TrainReport> {
    spec.validate().kind(Kind::Config)?;
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&s| train_one(cfg, corpus, spec, s))
        .collect::<CliResult<Vec<_>>>()?;
    let group = manifest_hash(&run_manifest(cfg, corpus, spec, None));
    let row = summary_row(&group, cfg, spec, &runs);
    upsert_summary(&cfg.out_dir.join(SUMMARY_FILE), &row).kind(Kind::Data)?;
    Ok(TrainReport {
        group,
        runs,
        summary_row: row,
    })
}

/// Trains the configured variant once per seed, seeds in parallel, and
/// records their mean ± std in the summary table.
pub fn cmd_train(cfg: &ExperimentConfig) -> CliResult<TrainReport> {
    let corpus = cmd_preprocess(cfg)?;
    train_group(cfg, &corpus, &cfg.variant)
}

/// Loads `checkpoint` and recomputes its report against the configured corpus.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path) -> CliResult<MetricsReport> {
    let ck = Checkpoint::load(checkpoint).kind(Kind::Data)?;
    let corpus = cmd_preprocess(cfg)?;
    evaluate(cfg, &corpus, &ck)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportKind {
    Topics,
    Latents,
    Curves,
}

impl std::str::FromStr for ExportKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match s {
            "topics" => Ok(Self::Topics),
            "latents" => Ok(Self::Latents),
            "curves" => Ok(Self::Curves),
            other => bail!("unknown export kind `{other}` (expected topics, latents or curves)"),
        }
    }
}

/// Writes one artifact derived from a checkpoint. `part` picks the split
/// whose documents are projected for `latents`.
pub fn cmd_export(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    kind: ExportKind,
    part: &str,
    out: &Path,
) -> CliResult<()> {
    let ck = Checkpoint::load(checkpoint).kind(Kind::Data)?;
    let text = match kind {
        ExportKind::Curves => ck.history.curves_csv(),
        ExportKind::Topics | ExportKind::Latents => {
            let corpus = cmd_preprocess(cfg)?;
            if ck.vocab_hash != corpus.vocab_hash {
                return Err(anyhow!(
                    "checkpoint vocabulary differs from the configured corpus"
                ))
                .kind(Kind::Data);
            }
            if kind == ExportKind::Topics {
                let topics = top_words(&ck.model.ntm.beta, cfg.metrics.top_n, &corpus.vocab)
                    .kind(Kind::Data)?;
                topics_text(&topics, &corpus.vocab)
            } else {
                let p = corpus
                    .split
                    .part(part)
                    .ok_or_else(|| anyhow!("unknown split `{part}`"))
                    .kind(Kind::Config)?;
                latents_csv(&ck, &p.bow, &p.ids).kind(Kind::Data)?
            }
        }
    };
    fs::write(out, text)
        .with_context(|| format!("cannot write {}", out.display()))
        .kind(Kind::Data)
}

/// Random search over the configured variant's hyperparameters, scored by
/// validation NPMI under the first seed.
pub fn cmd_search(cfg: &ExperimentConfig) -> CliResult<(PathBuf, SearchResult)> {
    let corpus = cmd_preprocess(cfg)?;
    let seed = cfg.seeds[0];
    let manifest = json!({
        "code_version": code_version(),
        "command": "search",
        "corpus": corpus.hash,
        "variant": cfg.variant,
        "train": cfg.train,
        "sampler": if needs_table(&cfg.variant) { json!(cfg.sampler) } else { Value::Null },
        "search": cfg.search,
        "seed": seed,
    });
    let dir = cfg
        .out_dir
        .join(format!("search-{}", manifest_hash(&manifest)));
    if !dir.is_dir() {
        let table = if needs_table(&cfg.variant) {
            Some(fit_adversarial(cfg, &corpus, seed)?.1)
        } else {
            None
        };
        publish_dir(&dir, |stage| {
            let s = &cfg.search;
            let result = variants::random_search(
                &cfg.variant,
                &corpus.split,
                &cfg.train,
                s.trials,
                &s.bounds,
                s.seed,
                table.as_ref(),
            )
            .map_err(|e| {
                anyhow!(CliError {
                    kind: training_kind(&e),
                    source: e.into()
                })
            })?;
            let mut csv = String::from("trial,lambda,mu,nu,expander_dim,t,val_npmi,best_epoch\n");
            for t in &result.trials {
                let v = &t.spec.vic;
                let dim = t
                    .spec
                    .expander_dim
                    .map(|d| d.to_string())
                    .unwrap_or_default();
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{dim},{},{},{}",
                    t.index, v.lambda, v.mu, v.nu, t.spec.t, t.val_npmi, t.best_epoch
                );
            }
            fs::write(stage.join("trials.csv"), csv)?;
            fs::write(
                stage.join("result.json"),
                serde_json::to_string_pretty(&result)? + "\n",
            )?;
            write_manifest(&stage.join("manifest.json"), &manifest)
        })
        .map_err(lift)?;
    }
    let text = fs::read_to_string(dir.join("result.json")).kind(Kind::Data)?;
    let result = serde_json::from_str(&text).kind(Kind::Data)?;
    Ok((dir, result))
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub label: &'static str,
    pub spec: VariantSpec,
    pub report: TrainReport,
}

/// Trains the four regularizer subsets of the configured variant over all
/// seeds and writes one NPMI table covering them.
pub fn cmd_ablate(cfg: &ExperimentConfig) -> CliResult<(PathBuf, Vec<AblationRow>)> {
    let corpus = cmd_preprocess(cfg)?;
    let rows = ablation_specs(&cfg.variant)
        .into_iter()
        .map(|(label, spec)| {
            Ok(AblationRow {
                label,
                spec,
                report: train_group(cfg, &corpus, &spec)?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut csv = String::from("config,group,seed,npmi,td,irbo,perplexity\n");
    for row in &rows {
        for run in &row.report.runs {
            let r = &run.report;
            let _ = writeln!(
                csv,
                "{},{},{},{:.6},{:.6},{:.6},{:.6}",
                row.label, row.report.group, run.seed, r.npmi, r.td, r.irbo, r.perplexity
            );
        }
    }
    let key = sha256_hex(
        rows.iter()
            .map(|r| r.report.group.as_str())
            .collect::<Vec<_>>()
            .join(",")
            .as_bytes(),
    );
    let path = cfg.out_dir.join(format!("ablation-{}.csv", &key[..16]));
    write_atomic(&path, csv.as_bytes()).kind(Kind::Data)?;
    Ok((path, rows))
}

/// Writes a synthetic corpus in the `lines` format.
pub fn cmd_synth(cfg: &synthetic::SyntheticConfig, out: &Path) -> CliResult<usize> {
    let docs = synthetic::generate(cfg).kind(Kind::Config)?;
    let text: String = docs.iter().map(|d| d.tokens.join(" ") + "\n").collect();
    fs::write(out, text)
        .with_context(|| format!("cannot write {}", out.display()))
        .kind(Kind::Data)?;
    Ok(docs.len())
}
