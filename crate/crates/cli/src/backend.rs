use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use minuscule::backends::file::FileBackend;
use minuscule::backends::oracle::{NoiseScope, Oracle, OracleConfig};
use minuscule::backends::process::{ProcessBackend, Role};
use minuscule::backends::{Backends, Classifier, Embedder, LineDetector, WordDetector};
use minuscule::corpus::load_corpus;

/// A parsed `--backend` value.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BackendSpec {
    File(PathBuf),
    Oracle(PathBuf),
    Process(String),
}

impl std::str::FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            Some(("file", p)) if !p.is_empty() => Ok(Self::File(p.into())),
            Some(("oracle", p)) if !p.is_empty() => Ok(Self::Oracle(p.into())),
            Some(("proc", c)) if !c.trim().is_empty() => Ok(Self::Process(c.to_string())),
            _ => Err(format!("expected file:<path>, oracle:<corpus-dir> or proc:<command>, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct BackendArgs {
    /// Backend serving every model role: file:<path>, oracle:<corpus-dir>
    /// or proc:<command>.
    #[arg(long)]
    pub backend: Option<BackendSpec>,
    /// Overrides --backend for line detection.
    #[arg(long)]
    pub line_backend: Option<BackendSpec>,
    /// Overrides --backend for word detection.
    #[arg(long)]
    pub word_backend: Option<BackendSpec>,
    /// Overrides --backend for classification.
    #[arg(long)]
    pub classifier_backend: Option<BackendSpec>,
    /// Overrides --backend for embedding.
    #[arg(long)]
    pub embedder_backend: Option<BackendSpec>,
    /// Embedding dimension of file and process backends.
    #[arg(long, default_value_t = minuscule::backends::DEFAULT_EMBEDDING_DIM)]
    pub dim: usize,
    /// Seconds to wait for a process backend response.
    #[arg(long, default_value_t = 60.0)]
    pub timeout: f64,
    /// Oracle: maximum coordinate jitter in pixels.
    #[arg(long, default_value_t = 0.0)]
    pub oracle_jitter: f64,
    /// Oracle: probability of dropping each detection.
    #[arg(long, default_value_t = 0.0)]
    pub oracle_drop_rate: f64,
    /// Oracle: lowest detection confidence.
    #[arg(long, default_value_t = 1.0)]
    pub oracle_confidence_floor: f64,
    /// Oracle: noise seed.
    #[arg(long, default_value_t = 0)]
    pub oracle_seed: u64,
    /// Oracle: detectors that receive noise.
    #[arg(long, value_enum, default_value_t = Scope::Both)]
    pub oracle_noise: Scope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Scope {
    Lines,
    Words,
    Both,
}

impl From<Scope> for NoiseScope {
    fn from(s: Scope) -> Self {
        match s {
            Scope::Lines => NoiseScope::Lines,
            Scope::Words => NoiseScope::Words,
            Scope::Both => NoiseScope::Both,
        }
    }
}

trait AllRoles: LineDetector + WordDetector + Classifier + Embedder {}
impl<T: LineDetector + WordDetector + Classifier + Embedder> AllRoles for T {}

impl BackendArgs {
    fn oracle_config(&self) -> OracleConfig {
        OracleConfig {
            jitter_px: self.oracle_jitter,
            drop_rate: self.oracle_drop_rate,
            confidence_floor: self.oracle_confidence_floor,
            seed: self.oracle_seed,
            scope: self.oracle_noise.into(),
            dimension: self.dim,
        }
    }

    fn open(&self, spec: &BackendSpec) -> Result<Arc<dyn AllRoles>> {
        Ok(match spec {
            BackendSpec::File(p) => Arc::new(FileBackend::load(p)?),
            BackendSpec::Oracle(dir) => {
                let docs = load_corpus(dir).with_context(|| format!("loading oracle corpus {}", dir.display()))?;
                Arc::new(Oracle::new(docs, self.oracle_config())?)
            }
            BackendSpec::Process(cmd) => {
                if !(self.timeout > 0.0 && self.timeout.is_finite()) {
                    bail!("timeout {} must be a positive number of seconds", self.timeout);
                }
                Arc::new(ProcessBackend::spawn(cmd, Role::All, Duration::from_secs_f64(self.timeout), self.dim)?)
            }
        })
    }

    /// Opens each distinct spec once, so a process serving several roles
    /// is spawned a single time.
    pub fn build(&self) -> Result<Backends> {
        let pick = |o: &Option<BackendSpec>, role: &str| {
            o.clone()
                .or_else(|| self.backend.clone())
                .with_context(|| format!("no backend for {role}; pass --backend"))
        };
        let specs = [
            pick(&self.line_backend, "line detection")?,
            pick(&self.word_backend, "word detection")?,
            pick(&self.classifier_backend, "classification")?,
            pick(&self.embedder_backend, "embedding")?,
        ];
        let mut opened: HashMap<BackendSpec, Arc<dyn AllRoles>> = HashMap::new();
        for s in &specs {
            if !opened.contains_key(s) {
                opened.insert(s.clone(), self.open(s)?);
            }
        }
        let get = |i: usize| opened[&specs[i]].clone();
        let (lines, words, classifier, embedder) = (get(0), get(1), get(2), get(3));
        Ok(Backends { lines, words, classifier, embedder })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_specs() {
        assert_eq!("file:a.jsonl".parse(), Ok(BackendSpec::File("a.jsonl".into())));
        assert_eq!("oracle:dir".parse(), Ok(BackendSpec::Oracle("dir".into())));
        assert_eq!("proc:python m.py --x".parse(), Ok(BackendSpec::Process("python m.py --x".into())));
        assert!("file:".parse::<BackendSpec>().is_err());
        assert!("http://x".parse::<BackendSpec>().is_err());
    }
}
