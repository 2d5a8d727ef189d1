//! Executes a [`RunConfig`] and lays out its artifacts:
//!
//! ```text
//! <output_dir>/<run_id>/
//!   manifest.json
//!   transcripts/<experiment>/<run_id>.ndjson
//!   rates/summary.csv, table1.csv, table2.csv, table3.csv, radar.csv
//!   trajectories/<label>.csv
//!   accounting.csv
//! ```
//!
//! Transcripts are appended and flushed after every inquiry, so a killed
//! run leaves parseable partial files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::TemplateRegistry;
use crate::backend::Backend;
use crate::config::RunConfig;
use crate::dataset::{qualify_all, read_candidates, QualificationReport, SCHEMA_VERSION};
use crate::domain::{Experiment, InquiryOutcome, RateKey, RateMetric, Transcript, TranscriptHeader, TranscriptRecord};
use crate::error::{ConfigError, DatasetError, EvalError, MetricsError, ProtocolError};
use crate::evaluators::{
    attach_labels, import_human_labels, DiscriminatorKind, SidecarClient, SimilarityProvider, SIMILARITY_THRESHOLD,
};
use crate::metrics::{
    account_api_calls, compute_all_rates, compute_bias_rate, export_accounting, export_radar, export_rate_table,
    export_similarity_trajectories, export_summary, BiasRate, LengthRate, TableLayout, RADAR_METRICS,
};
use crate::protocols::{rumor, run_protocol, ProtocolConfig, ProtocolContext, ProtocolRun};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_BACKEND: i32 = 2;

pub const MANIFEST_NAME: &str = "manifest.json";
pub const ACCOUNTING_NAME: &str = "accounting.csv";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("protocol {label}: {source}")]
    Protocol { label: String, source: ProtocolError },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("template overrides: {0}")]
    Templates(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Protocol { source, .. } if source.is_backend_exhaustion() => EXIT_BACKEND,
            RunError::Dataset(DatasetError::Backend(_)) => EXIT_BACKEND,
            _ => EXIT_CONFIG,
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl RunOptions {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(o) = &self.output_dir {
            cfg.output_dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProtocolEntrySummary {
    pub label: String,
    pub experiment: Experiment,
    pub backend: String,
    pub seed: u64,
    pub inquiries: usize,
    pub outcomes: usize,
    pub transcript: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub seed: u64,
    pub config_sha256: String,
    pub harness_version: String,
    pub dataset_schema_version: String,
    /// Evaluator tag similarity verdicts were filed under.
    pub similarity_tag: String,
    pub protocols: Vec<ProtocolEntrySummary>,
    /// Backend id to completed chat calls.
    pub backend_calls: BTreeMap<String, u64>,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub manifest: RunManifest,
    pub rates: Vec<BiasRate>,
    pub lengths: Vec<LengthRate>,
    pub outcomes: Vec<InquiryOutcome>,
    pub trajectory_rows: usize,
}

/// SHA-256 of the config's canonical JSON form.
pub fn config_hash(cfg: &RunConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

struct TranscriptWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl TranscriptWriter {
    fn create(path: PathBuf, header: TranscriptHeader) -> Result<Self, RunError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut w = Self { path, out: BufWriter::new(file) };
        w.record(&TranscriptRecord::Header(header)).map_err(io_err(&w.path.clone()))?;
        w.out.flush().map_err(io_err(&w.path.clone()))?;
        Ok(w)
    }

    fn record(&mut self, r: &TranscriptRecord) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, r)?;
        self.out.write_all(b"\n")
    }

    fn finish(mut self) -> Result<(), RunError> {
        let r = TranscriptRecord::Footer { finished_at: chrono::Utc::now().to_rfc3339() };
        self.record(&r).and_then(|_| self.out.flush()).map_err(io_err(&self.path))
    }
}

fn transcript_path(run_dir: &Path, run_id: &str, cfg: &ProtocolConfig) -> PathBuf {
    let name = if cfg.label == cfg.experiment.as_str() {
        format!("{run_id}.ndjson")
    } else {
        format!("{run_id}.{}.ndjson", cfg.label)
    };
    run_dir.join("transcripts").join(cfg.experiment.as_str()).join(name)
}

/// Picks the similarity provider; an unreachable sidecar degrades to the
/// token-overlap fallback for the whole run.
fn similarity_setup(cfg: &RunConfig) -> (SimilarityProvider, f64) {
    for d in &cfg.discriminators {
        if let DiscriminatorKind::TechnicalSimilarity { threshold, provider } = &d.kind {
            let p = cfg.similarity_providers.iter().find(|p| &p.id == provider).expect("validated");
            let client = SidecarClient::new(&p.url, p.timeout_ms);
            return match client.health() {
                Ok(h) if h.is_ready() => (SimilarityProvider::Sidecar(client), *threshold),
                Ok(_) => {
                    log::warn!("similarity sidecar {} is not ready; using token-overlap fallback", p.url);
                    (SimilarityProvider::Fallback, *threshold)
                }
                Err(e) => {
                    log::warn!("{e}; using token-overlap fallback");
                    (SimilarityProvider::Fallback, *threshold)
                }
            };
        }
    }
    let threshold = cfg
        .discriminators
        .iter()
        .find_map(|d| match d.kind {
            DiscriminatorKind::TokenOverlapFallback { threshold } => Some(threshold),
            _ => None,
        })
        .unwrap_or(SIMILARITY_THRESHOLD);
    (SimilarityProvider::Fallback, threshold)
}

/// Rates for one protocol's outcomes, including per-chain-final rates
/// for the rumor chain.
fn protocol_rates(outcomes: &[InquiryOutcome], model: &str) -> Vec<BiasRate> {
    let mut rates = compute_all_rates(outcomes);
    let finals: BTreeSet<(String, String)> = outcomes
        .iter()
        .filter(|o| o.experiment == Experiment::RumorChain && o.condition_tags.iter().any(|t| t == rumor::FINAL_TAG))
        .flat_map(|o| o.verdicts.keys().map(|t| (o.condition_tags[1].clone(), t.clone())))
        .collect();
    for (dataset, tag) in finals {
        let key = RateKey::new(RateMetric::Bmha, dataset, rumor::FINAL_TAG, tag);
        if let Ok(r) = compute_bias_rate(outcomes, &key) {
            rates.push(r);
        }
    }
    rates.into_iter().map(|r| r.with_model(model)).collect()
}

fn length_rate(cfg: &ProtocolConfig, values: &[f64], model: &str) -> Option<LengthRate> {
    if values.is_empty() {
        return None;
    }
    let n = rumor::chain_length(cfg).ok()?;
    Some(LengthRate {
        model: model.to_string(),
        dataset_tag: rumor::DATASET_TAG.to_string(),
        condition_tag: rumor::condition_tag(n),
        chains: values.len() as u64,
        rate_percent: values.iter().sum::<f64>() / values.len() as f64,
    })
}

/// Loads, validates and runs the config at `path`.
pub fn run_file(path: &Path, opts: &RunOptions) -> Result<RunSummary, RunError> {
    let mut cfg = RunConfig::load(path)?;
    opts.apply(&mut cfg);
    run(&cfg)
}

/// Runs every protocol in order and writes all artifacts. On a protocol
/// failure the transcripts, rates and manifest reflect what finished
/// before it, and the error is returned.
pub fn run(cfg: &RunConfig) -> Result<RunSummary, RunError> {
    cfg.check()?;
    let data = cfg.load_datasets()?;
    let mut templates = TemplateRegistry::default();
    if let Some(t) = &cfg.templates {
        templates.load_overrides(t).map_err(|e| RunError::Templates(e.to_string()))?;
    }
    let mut backends = BTreeMap::new();
    for b in &cfg.backends {
        let backend = Backend::new(b.clone()).map_err(|e| ConfigError::Invalid(vec![format!("backend {}: {e}", b.id)]))?;
        backends.insert(b.id.clone(), backend);
    }
    let judge = cfg.discriminators.iter().find_map(|d| match &d.kind {
        DiscriminatorKind::LlmJudge { backend } => backends.get(backend),
        _ => None,
    });
    let (similarity, threshold) = similarity_setup(cfg);
    let protocols = cfg.protocol_configs()?;

    let run_dir = cfg.run_dir();
    for sub in ["transcripts", "rates", "trajectories"] {
        let d = run_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(io_err(&d))?;
    }

    let mut manifest = RunManifest {
        run_id: cfg.run_id.clone(),
        seed: cfg.seed,
        config_sha256: config_hash(cfg),
        harness_version: env!("CARGO_PKG_VERSION").to_string(),
        dataset_schema_version: SCHEMA_VERSION.to_string(),
        similarity_tag: similarity.tag().to_string(),
        protocols: Vec::new(),
        backend_calls: BTreeMap::new(),
        status: "complete".into(),
        error: None,
    };
    let mut per_protocol: Vec<(ProtocolConfig, Vec<InquiryOutcome>, ProtocolRun)> = Vec::new();
    let mut failure = None;

    for pc in protocols {
        let backend = &backends[&pc.backend];
        let ctx = ProtocolContext { backend, judge, templates: &templates, data: &data, similarity: &similarity, threshold };
        let path = transcript_path(&run_dir, &cfg.run_id, &pc);
        let header = TranscriptHeader {
            run_id: cfg.run_id.clone(),
            experiment: pc.experiment,
            backend_id: pc.backend.clone(),
            model: backend.config().model.clone(),
            temperature: backend.config().temperature,
            seed: pc.seed,
            started_at: chrono::Utc::now().to_rfc3339(),
        };
        let mut writer = TranscriptWriter::create(path.clone(), header)?;
        let mut streamed: Vec<InquiryOutcome> = Vec::new();
        log::info!("running {} ({}, {:?})", pc.label, pc.experiment, pc.mode);
        let result = run_protocol(&pc, &ctx, &mut |r| {
            for m in &r.messages {
                writer.record(&TranscriptRecord::Message(m.clone()))?;
            }
            for o in &r.outcomes {
                writer.record(&TranscriptRecord::Outcome(o.clone()))?;
            }
            writer.out.flush()?;
            streamed.extend(r.outcomes.iter().cloned());
            Ok(())
        });
        let transcript = path.strip_prefix(&run_dir).unwrap_or(&path).display().to_string();
        match result {
            Ok(run) => {
                writer.finish()?;
                manifest.protocols.push(ProtocolEntrySummary {
                    label: pc.label.clone(),
                    experiment: pc.experiment,
                    backend: pc.backend.clone(),
                    seed: pc.seed,
                    inquiries: run.inquiries,
                    outcomes: run.outcomes.len(),
                    transcript,
                });
                per_protocol.push((pc, streamed, run));
            }
            Err(source) => {
                writer.out.flush().map_err(io_err(&path))?;
                manifest.protocols.push(ProtocolEntrySummary {
                    label: pc.label.clone(),
                    experiment: pc.experiment,
                    backend: pc.backend.clone(),
                    seed: pc.seed,
                    inquiries: 0,
                    outcomes: streamed.len(),
                    transcript,
                });
                let partial = ProtocolRun { inquiries: 0, ..Default::default() };
                let label = pc.label.clone();
                per_protocol.push((pc, streamed, partial));
                failure = Some(RunError::Protocol { label, source });
                break;
            }
        }
    }

    if failure.is_none() {
        let known: BTreeSet<String> = per_protocol.iter().flat_map(|(_, o, _)| o.iter().map(|x| x.id.clone())).collect();
        for d in &cfg.discriminators {
            if let DiscriminatorKind::HumanImport { path } = &d.kind {
                match import_human_labels(Path::new(path), &known) {
                    Ok(labels) => {
                        let attached: usize =
                            per_protocol.iter_mut().map(|(_, o, _)| attach_labels(o, &labels, &d.tag)).sum();
                        log::info!("attached {attached} {} labels from {path}", d.tag);
                    }
                    Err(e) => {
                        failure = Some(e.into());
                        break;
                    }
                }
            }
        }
    }

    let mut rates = Vec::new();
    let mut lengths = Vec::new();
    let mut trajectory_rows = 0;
    let mut transcripts = Vec::new();
    for (pc, outcomes, run) in &per_protocol {
        let model = pc.backend.as_str();
        rates.extend(protocol_rates(outcomes, model));
        lengths.extend(length_rate(pc, &run.length_rates, model));
        if pc.experiment == Experiment::RumorChain && !run.trajectories.is_empty() {
            let p = run_dir.join("trajectories").join(format!("{}.csv", pc.label));
            trajectory_rows += export_similarity_trajectories(&run.trajectories, &p)?;
        }
        let mut t = Transcript::new(TranscriptHeader {
            run_id: cfg.run_id.clone(),
            experiment: pc.experiment,
            backend_id: pc.backend.clone(),
            model: String::new(),
            temperature: 0.0,
            seed: pc.seed,
            started_at: String::new(),
        });
        for o in outcomes {
            t.push_outcome(o.clone());
        }
        transcripts.push(t);
    }
    write_rates(&run_dir.join("rates"), &rates, &lengths)?;
    export_accounting(&account_api_calls(&transcripts), &run_dir.join(ACCOUNTING_NAME))?;

    manifest.backend_calls = backends.iter().map(|(id, b)| (id.clone(), b.calls())).collect();
    if let Some(e) = &failure {
        manifest.status = "failed".into();
        manifest.error = Some(e.to_string());
    }
    let mpath = run_dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(&mpath, text).map_err(io_err(&mpath))?;

    if let Some(e) = failure {
        return Err(e);
    }
    let outcomes = per_protocol.into_iter().flat_map(|(_, o, _)| o).collect();
    Ok(RunSummary { run_dir, manifest, rates, lengths, outcomes, trajectory_rows })
}

/// Writes the summary plus whichever tables the rates can fill.
pub fn write_rates(dir: &Path, rates: &[BiasRate], lengths: &[LengthRate]) -> Result<(), RunError> {
    export_summary(rates, lengths, &dir.join("summary.csv"))?;
    let has = |e: Experiment| rates.iter().any(|r| r.experiment == Some(e));
    if has(Experiment::Herd) {
        let herd: Vec<BiasRate> = rates.iter().filter(|r| r.experiment == Some(Experiment::Herd)).cloned().collect();
        export_rate_table(&herd, &[], TableLayout::Table1, &dir.join("table1.csv"))?;
    }
    let t2 = [Experiment::BenFranklin, Experiment::Confirmation, Experiment::Halo, Experiment::Gambler];
    if t2.iter().any(|e| has(*e)) {
        let sel: Vec<BiasRate> = rates.iter().filter(|r| r.experiment.is_some_and(|e| t2.contains(&e))).cloned().collect();
        export_rate_table(&sel, &[], TableLayout::Table2, &dir.join("table2.csv"))?;
    }
    if has(Experiment::RumorChain) || !lengths.is_empty() {
        let sel: Vec<BiasRate> =
            rates.iter().filter(|r| r.experiment == Some(Experiment::RumorChain)).cloned().collect();
        export_rate_table(&sel, lengths, TableLayout::Table3, &dir.join("table3.csv"))?;
    }
    // Radar needs all five headline metrics; models missing one are left out.
    let complete: BTreeSet<&str> = rates
        .iter()
        .map(|r| r.model.as_str())
        .filter(|m| {
            RADAR_METRICS.iter().all(|e| crate::metrics::headline_rate(rates, m, *e).is_some())
        })
        .collect();
    if !complete.is_empty() {
        let sel: Vec<BiasRate> = rates.iter().filter(|r| complete.contains(r.model.as_str())).cloned().collect();
        export_radar(&sel, &dir.join("radar.csv"))?;
    }
    Ok(())
}

/// Screens the Known MCQ candidates in `dataset` and writes one report
/// per candidate to `out/qualification/<stem>.<backend>.ndjson`.
pub fn qualify(
    dataset: &Path,
    backend: &Backend,
    repetitions: u32,
    seed: u64,
    out_dir: &Path,
) -> Result<(PathBuf, Vec<QualificationReport>), RunError> {
    let candidates = read_candidates(dataset)?;
    let reports = qualify_all(&candidates, backend, &TemplateRegistry::default(), repetitions, seed)?;
    let dir = out_dir.join("qualification");
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let stem = dataset.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    let path = dir.join(format!("{stem}.{}.ndjson", backend.config().id));
    let mut text = String::new();
    for r in &reports {
        text.push_str(&serde_json::to_string(r).expect("report serializes"));
        text.push('\n');
    }
    std::fs::write(&path, text).map_err(io_err(&path))?;
    Ok((path, reports))
}
