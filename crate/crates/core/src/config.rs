//! Run configuration: one TOML file describing backends, discriminators,
//! datasets and the protocols to execute.
//!
//! Relative paths inside the file are resolved against the file's own
//! directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{mix_seed, BackendConfig};
use crate::dataset::{read_manifest, DatasetBundle, DatasetName};
use crate::domain::Experiment;
use crate::error::ConfigError;
use crate::evaluators::{DiscriminatorConfig, DiscriminatorKind};
use crate::protocols::{ProtocolConfig, ProtocolMode, ProtocolParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityProviderConfig {
    pub id: String,
    /// Base URL of the similarity service, e.g. `http://127.0.0.1:8765`.
    pub url: String,
    #[serde(default = "default_sidecar_timeout")]
    pub timeout_ms: u64,
}

fn default_sidecar_timeout() -> u64 {
    10_000
}

/// One `[[protocols]]` entry. The experiment is kept as a string so an
/// unknown name shows up as a violation instead of a parse error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolEntry {
    pub experiment: String,
    pub backend: String,
    pub repetitions: u32,
    pub questions: u32,
    #[serde(default)]
    pub mode: ProtocolMode,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(flatten)]
    pub params: ProtocolParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub run_id: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub dataset_dir: PathBuf,
    /// Pads every dataset with synthetic records up to this many items.
    #[serde(default)]
    pub pad_to: Option<usize>,
    /// NDJSON file of prompt templates replacing the built-in ones by id.
    #[serde(default)]
    pub templates: Option<PathBuf>,
    #[serde(default)]
    pub backends: Vec<BackendConfig>,
    #[serde(default)]
    pub similarity_providers: Vec<SimilarityProviderConfig>,
    #[serde(default)]
    pub discriminators: Vec<DiscriminatorConfig>,
    #[serde(default)]
    pub protocols: Vec<ProtocolEntry>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_path_buf(), reason: e.to_string() })
    }

    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.dataset_dir);
        if let Some(t) = self.templates.as_mut() {
            fix(t);
        }
        for d in &mut self.discriminators {
            if let DiscriminatorKind::HumanImport { path } = &mut d.kind {
                let mut p = PathBuf::from(&*path);
                fix(&mut p);
                *path = p.to_string_lossy().into_owned();
            }
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_id)
    }

    /// Protocol configs in file order. Entries without a seed get one
    /// derived from the run seed and their position.
    pub fn protocol_configs(&self) -> Result<Vec<ProtocolConfig>, ConfigError> {
        self.protocols
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let experiment: Experiment =
                    e.experiment.parse().map_err(|err: crate::error::DomainError| ConfigError::Invalid(vec![err.to_string()]))?;
                Ok(ProtocolConfig {
                    label: e.label.clone().unwrap_or_else(|| experiment.as_str().to_string()),
                    experiment,
                    backend: e.backend.clone(),
                    repetitions: e.repetitions,
                    questions: e.questions,
                    mode: e.mode,
                    seed: e.seed.unwrap_or_else(|| mix_seed(self.seed, i as u64)),
                    params: e.params.clone(),
                })
            })
            .collect()
    }

    /// Loads (and pads, if configured) the dataset bundle.
    pub fn load_datasets(&self) -> Result<DatasetBundle, crate::error::DatasetError> {
        let mut bundle = DatasetBundle::load_dir(&self.dataset_dir)?;
        if let Some(n) = self.pad_to {
            bundle.pad_to(n, mix_seed(self.seed, 0xDA7A));
        }
        Ok(bundle)
    }

    /// Every problem found, without executing anything.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.run_id.trim().is_empty() || self.run_id.contains(['/', '\\']) || self.run_id.starts_with('.') {
            v.push(format!("run_id {:?} is not a usable directory name", self.run_id));
        }

        let mut backend_ids = BTreeSet::new();
        for b in &self.backends {
            if !backend_ids.insert(b.id.as_str()) {
                v.push(format!("duplicate backend id {:?}", b.id));
            }
            if let Err(e) = b.validate() {
                v.push(format!("backend {:?}: {e}", b.id));
            }
        }

        let mut provider_ids = BTreeSet::new();
        for p in &self.similarity_providers {
            if !provider_ids.insert(p.id.as_str()) {
                v.push(format!("duplicate similarity provider id {:?}", p.id));
            }
        }

        let mut tags = BTreeSet::new();
        for d in &self.discriminators {
            if !tags.insert(d.tag.as_str()) {
                v.push(format!("duplicate discriminator tag {:?}", d.tag));
            }
            v.extend(d.violations());
            match &d.kind {
                DiscriminatorKind::TechnicalSimilarity { provider, .. } if !provider_ids.contains(provider.as_str()) => {
                    v.push(format!("discriminator {}: unknown similarity provider {provider:?}", d.tag));
                }
                DiscriminatorKind::LlmJudge { backend } if !backend_ids.contains(backend.as_str()) => {
                    v.push(format!("discriminator {}: unknown backend {backend:?}", d.tag));
                }
                DiscriminatorKind::HumanImport { path } if !Path::new(path).is_file() => {
                    v.push(format!("discriminator {}: label file {path} not found", d.tag));
                }
                _ => {}
            }
        }

        if let Some(t) = &self.templates {
            if !t.is_file() {
                v.push(format!("template file {} not found", t.display()));
            }
        }

        let mut labels = BTreeSet::new();
        let mut needs: BTreeMap<DatasetName, (usize, String)> = BTreeMap::new();
        for (i, e) in self.protocols.iter().enumerate() {
            let experiment: Experiment = match e.experiment.parse() {
                Ok(x) => x,
                Err(_) => {
                    v.push(format!("protocols[{i}]: unknown experiment name {:?}", e.experiment));
                    continue;
                }
            };
            if !backend_ids.contains(e.backend.as_str()) {
                v.push(format!("protocols[{i}] ({experiment}): unknown backend {:?}", e.backend));
            }
            let label = e.label.clone().unwrap_or_else(|| experiment.as_str().to_string());
            if !labels.insert(label.clone()) {
                v.push(format!("protocols[{i}]: duplicate label {label:?}; set a distinct `label`"));
            }
            let cfg = ProtocolConfig::new(experiment, e.backend.clone(), e.repetitions, e.questions)
                .with_mode(e.mode)
                .with_params(e.params.clone());
            let cfg = ProtocolConfig { label: label.clone(), ..cfg };
            v.extend(cfg.violations());
            for (name, n) in cfg.required_datasets() {
                let slot = needs.entry(name).or_insert((0, String::new()));
                if n > slot.0 {
                    *slot = (n, label.clone());
                }
            }
        }

        v.extend(self.dataset_violations(&needs));
        v.extend(self.output_violations());
        v
    }

    fn dataset_violations(&self, needs: &BTreeMap<DatasetName, (usize, String)>) -> Vec<String> {
        let mut v = Vec::new();
        let manifest = match read_manifest(&self.dataset_dir) {
            Ok(m) => m,
            Err(e) => return vec![format!("dataset manifest: {e}")],
        };
        let listed: BTreeSet<DatasetName> = manifest.iter().map(|m| m.name).collect();
        let mut missing = false;
        for m in &manifest {
            let path = if m.path.is_relative() { self.dataset_dir.join(&m.path) } else { m.path.clone() };
            if !path.is_file() {
                v.push(format!("dataset file {} not found", path.display()));
                missing = true;
            }
        }
        for name in needs.keys() {
            if !listed.contains(name) {
                v.push(format!("dataset {} is not listed in the manifest", name.file_name()));
                missing = true;
            }
        }
        if missing {
            return v;
        }
        match self.load_datasets() {
            Err(e) => v.push(format!("dataset: {e}")),
            Ok(bundle) => {
                for (name, (n, label)) in needs {
                    let have = bundle.len_of(*name);
                    if have < *n {
                        v.push(format!("{label}: needs {n} records from {} but it holds {have}", name.file_name()));
                    }
                }
            }
        }
        v
    }

    fn output_violations(&self) -> Vec<String> {
        let mut dir = self.output_dir.as_path();
        loop {
            if dir.exists() {
                return match std::fs::metadata(dir) {
                    Ok(m) if !m.is_dir() => vec![format!("output path {} is not a directory", dir.display())],
                    Ok(m) if m.permissions().readonly() => {
                        vec![format!("output directory {} is not writable", dir.display())]
                    }
                    Ok(_) => Vec::new(),
                    Err(e) => vec![format!("output directory {}: {e}", dir.display())],
                };
            }
            match dir.parent() {
                Some(p) if !p.as_os_str().is_empty() => dir = p,
                _ => return Vec::new(),
            }
        }
    }

    /// Validates; the error lists every violation.
    pub fn check(&self) -> Result<(), ConfigError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }
}
