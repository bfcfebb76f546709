mod backend;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use minuscule::backends::BackendError;
use minuscule::corpus::manifest::{load_page, triplet_records, write_datasets, DatasetOptions};
use minuscule::corpus::{build_classification_dataset, load_corpus, DEFAULT_MEMBERSHIP_THRESHOLD};
use minuscule::lexicon::{merge_similar, occurrence_histogram, similarity_pairs, HistogramBin, OccurrenceTable};
use minuscule::pipeline::{build_store, evaluate_outputs, render_overlay, transcribe, PipelineConfig, PipelineOutput};
use minuscule::synth::{synth_corpus, write_corpus, SynthConfig};
use minuscule::vectorstore::{EmbeddingStore, Neighbor};
use minuscule::{Raster, Word};

use backend::BackendArgs;

#[derive(Parser)]
#[command(name = "minuscule", version, about = "Transcription of handwritten manuscript pages")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build line, word, classification and triplet datasets from an annotated corpus.
    BuildDataset {
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        val_fraction: f64,
        #[arg(long, default_value_t = 10_000)]
        triplets: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_MEMBERSHIP_THRESHOLD)]
        membership_threshold: f64,
    },
    /// Word occurrence statistics of a corpus transcript.
    Stats {
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Transcribe page images.
    Transcribe {
        #[arg(required = true)]
        images: Vec<PathBuf>,
        #[command(flatten)]
        backends: BackendArgs,
        /// Embedding store used when the classifier is not confident.
        #[arg(long)]
        store: Option<PathBuf>,
        /// Write an annotated copy of the page (single image only).
        #[arg(long)]
        overlay: Option<PathBuf>,
        /// Image id; defaults to the file stem (single image only).
        #[arg(long)]
        image_id: Option<String>,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Score transcriptions against an annotated corpus.
    Evaluate {
        /// A transcription JSON object or an array of them.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Store for modified precision; needs --queries.
        #[arg(long, requires = "queries")]
        store: Option<PathBuf>,
        /// JSON array of {"label", "vec"} query vectors.
        #[arg(long, requires = "store")]
        queries: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MEMBERSHIP_THRESHOLD)]
        membership_threshold: f64,
    },
    /// Nearest stored embeddings of a vector.
    Knn {
        #[arg(long)]
        store: PathBuf,
        /// JSON array of numbers, or a path to a file holding one.
        #[arg(long)]
        query: String,
        #[arg(short, default_value_t = 5)]
        k: usize,
    },
    /// Sample a triplet manifest from a corpus.
    Triplets {
        corpus: PathBuf,
        #[arg(short, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_MEMBERSHIP_THRESHOLD)]
        membership_threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a synthetic annotated corpus.
    Synth {
        out: PathBuf,
        #[arg(short, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Embed every labelled word of a corpus into a new store.
    BuildStore {
        corpus: PathBuf,
        #[command(flatten)]
        backends: BackendArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MEMBERSHIP_THRESHOLD)]
        membership_threshold: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, clap::Args)]
struct PipelineArgs {
    #[arg(long, default_value_t = 0.4)]
    line_iou: f64,
    #[arg(long, default_value_t = 0.4)]
    word_iou: f64,
    #[arg(long, default_value_t = DEFAULT_MEMBERSHIP_THRESHOLD)]
    membership_threshold: f64,
    /// Classifier confidence below which the embedding store decides.
    #[arg(long, default_value_t = 0.5)]
    confidence_floor: f64,
    #[arg(long, default_value_t = 5)]
    fallback_k: usize,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    workers: Option<usize>,
}

impl PipelineArgs {
    fn config(&self, dim: usize) -> PipelineConfig {
        let d = PipelineConfig::default();
        PipelineConfig {
            line_iou_threshold: self.line_iou,
            word_iou_threshold: self.word_iou,
            membership_threshold: self.membership_threshold,
            classifier_confidence_floor: self.confidence_floor,
            fallback_k: self.fallback_k,
            embedding_dim: dim,
            worker_count: self.workers.unwrap_or(d.worker_count),
            ..d
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, format!("{text}\n")).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

fn to_json<T: Serialize + ?Sized>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("value serializes")
}

fn corpus(dir: &Path) -> Result<Vec<minuscule::corpus::DocumentAnnotation>> {
    let docs = load_corpus(dir).with_context(|| format!("loading corpus {}", dir.display()))?;
    if docs.is_empty() {
        bail!("{} holds no annotated pages", dir.display());
    }
    Ok(docs)
}

#[derive(Serialize)]
struct Stats {
    tokens: u64,
    vocabulary: usize,
    histogram: Vec<HistogramBin>,
    similar_pairs: usize,
    merged_vocabulary: usize,
    merged_histogram: Vec<HistogramBin>,
}

fn stats(dir: &Path) -> Result<Stats> {
    let docs = corpus(dir)?;
    let table = OccurrenceTable::from_tokens(
        docs.iter().flat_map(|d| &d.transcript).filter(|t| t.is_clean()).map(|t| &t.word),
    );
    let histogram = occurrence_histogram(&table).context("the transcripts hold no clean tokens")?;
    let classes = merge_similar(table.words());
    let merged = table.merged(&classes);
    Ok(Stats {
        tokens: table.total(),
        vocabulary: table.vocabulary_size(),
        histogram,
        similar_pairs: similarity_pairs(table.words()).len(),
        merged_vocabulary: merged.vocabulary_size(),
        merged_histogram: occurrence_histogram(&merged).expect("merging keeps words"),
    })
}

fn stats_table(s: &Stats) -> String {
    let mut out = format!(
        "tokens {}\nvocabulary {}\nsimilar pairs {}\nmerged vocabulary {}\n\n{:<12} {:>8} {:>8}\n",
        s.tokens, s.vocabulary, s.similar_pairs, s.merged_vocabulary, "occurrences", "words", "merged"
    );
    for (a, b) in s.histogram.iter().zip(&s.merged_histogram) {
        out.push_str(&format!("{:<12} {:>8} {:>8}\n", a.label, a.words, b.words));
    }
    out
}

fn read_predictions(path: &Path) -> Result<Vec<PipelineOutput>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        Many(Vec<PipelineOutput>),
        One(Box<PipelineOutput>),
    }
    Ok(match serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))? {
        OneOrMany::Many(v) => v,
        OneOrMany::One(o) => vec![*o],
    })
}

#[derive(Deserialize)]
struct Query {
    label: Word,
    vec: Vec<f32>,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildDataset { corpus: dir, out, val_fraction, triplets, seed, membership_threshold } => {
            let docs = corpus(&dir)?;
            let opts = DatasetOptions { membership_threshold, val_fraction, triplets, seed };
            let summary = write_datasets(&dir, &docs, &out, &opts)?;
            emit(None, &to_json(&summary))
        }
        Command::Stats { corpus: dir, format } => {
            let s = stats(&dir)?;
            match format {
                Format::Json => emit(None, &to_json(&s)),
                Format::Text => emit(None, stats_table(&s).trim_end()),
            }
        }
        Command::Transcribe { images, backends, store, overlay, image_id, out, pipeline } => {
            if images.len() > 1 && (overlay.is_some() || image_id.is_some()) {
                bail!("--overlay and --image-id need a single image");
            }
            let cfg = pipeline.config(backends.dim);
            cfg.validate()?;
            rayon::ThreadPoolBuilder::new().num_threads(cfg.worker_count).build_global().ok();
            let store = store.map(|p| EmbeddingStore::load(&p)).transpose()?;
            let backends = backends.build()?;
            let results: Vec<(Raster, PipelineOutput)> = images
                .par_iter()
                .map(|path| {
                    let page = Raster::load_png(path).with_context(|| format!("reading {}", path.display()))?;
                    let id = match &image_id {
                        Some(id) => id.clone(),
                        None => path
                            .file_stem()
                            .map(|s| s.to_string_lossy().into_owned())
                            .with_context(|| format!("{} has no file name", path.display()))?,
                    };
                    let output = transcribe(&page, &id, &backends, store.as_ref(), &cfg)?;
                    Ok((page, output))
                })
                .collect::<Result<_>>()?;
            if let (Some(p), [(page, output)]) = (&overlay, results.as_slice()) {
                render_overlay(page, output).save_png(p)?;
            }
            let outputs: Vec<&PipelineOutput> = results.iter().map(|(_, o)| o).collect();
            let text = match outputs.as_slice() {
                [one] => to_json(one),
                many => to_json(many),
            };
            emit(out.as_deref(), &text)
        }
        Command::Evaluate { pred, gt, store, queries, membership_threshold } => {
            let outputs = read_predictions(&pred)?;
            let docs = corpus(&gt)?;
            let retrieval = match (store, queries) {
                (Some(s), Some(q)) => {
                    let store = EmbeddingStore::load(&s)?;
                    let text = fs::read_to_string(&q).with_context(|| format!("reading {}", q.display()))?;
                    let qs: Vec<Query> = serde_json::from_str(&text).with_context(|| format!("parsing {}", q.display()))?;
                    Some((store, qs.into_iter().map(|q| (q.vec, q.label)).collect::<Vec<_>>()))
                }
                _ => None,
            };
            let report = evaluate_outputs(
                &outputs,
                &docs,
                membership_threshold,
                retrieval.as_ref().map(|(s, q)| (s, q.as_slice())),
            )?;
            emit(None, &to_json(&report))
        }
        Command::Knn { store, query, k } => {
            let store = EmbeddingStore::load(&store)?;
            let text = if query.trim_start().starts_with('[') {
                query
            } else {
                fs::read_to_string(&query).with_context(|| format!("reading {query}"))?
            };
            let v: Vec<f32> = serde_json::from_str(&text).context("query must be a JSON array of numbers")?;
            let nn: Vec<Neighbor> = store.knn(&v, k)?;
            emit(None, &to_json(&nn))
        }
        Command::Triplets { corpus: dir, n, seed, membership_threshold, out } => {
            let docs = corpus(&dir)?;
            let data = build_classification_dataset(&docs, |d| load_page(&dir, d), membership_threshold);
            for (id, e) in &data.failures {
                log::warn!("{id}: {e}");
            }
            let records = triplet_records(&data, n, seed)?;
            emit(out.as_deref(), &to_json(&records))
        }
        Command::Synth { out, n, seed } => {
            let pages = synth_corpus(n, &SynthConfig::default(), seed);
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_corpus(&out, &pages).with_context(|| format!("writing {}", out.display()))?;
            let words: usize = pages.iter().map(|p| p.doc.words.len()).sum();
            emit(None, &format!("{{\"pages\": {}, \"words\": {words}}}", pages.len()))
        }
        Command::BuildStore { corpus: dir, backends, out, membership_threshold } => {
            let docs = corpus(&dir)?;
            let backends = backends.build()?;
            let data = build_classification_dataset(&docs, |d| load_page(&dir, d), membership_threshold);
            for (id, e) in &data.failures {
                log::warn!("{id}: {e}");
            }
            let store = build_store(&data, &docs, backends.embedder.as_ref())?;
            store.save(&out)?;
            emit(None, &format!("{{\"entries\": {}, \"dim\": {}}}", store.len(), store.dimension()))
        }
    }
}

/// Backend failures exit with 2, everything else with 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    let backend = err
        .chain()
        .filter_map(|e| e.downcast_ref::<BackendError>())
        .any(|e| !matches!(e, BackendError::Config(_)));
    if backend {
        2
    } else {
        1
    }
}

fn report(err: &anyhow::Error) {
    let mut msg = String::new();
    for cause in err.chain() {
        let s = cause.to_string();
        if !msg.ends_with(&s) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&s);
        }
    }
    eprintln!("error: {msg}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(exit_code(&e))
        }
    }
}
