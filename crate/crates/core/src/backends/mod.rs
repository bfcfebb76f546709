//! Inference contracts for the four learned models and three ways of
//! fulfilling them.
//!
//! * [`file::FileBackend`] replays precomputed outputs from a JSONL file.
//! * [`oracle::Oracle`] answers from ground-truth annotations, optionally
//!   with seeded noise.
//! * [`process::ProcessBackend`] talks to an external program over a JSONL
//!   stdio protocol.
//!
//! Backends receive a context naming what is being asked about. Context ids
//! are `<image_id>` for pages, `<image_id>/l<k>` for the k-th line in
//! reading order and `<image_id>/l<k>/w<j>` for the j-th word of that line.

pub mod file;
pub mod oracle;
pub mod process;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deskew::CropFrame;
use crate::geometry::{AxisBox, OrientedBox};
use crate::imaging::Raster;
use crate::lexicon::Word;
use crate::postprocess::Detection;

pub const DEFAULT_EMBEDDING_DIM: usize = 64;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Record { path: String, line: usize, message: String },
    #[error("backend process exited: {0}")]
    Exited(String),
    #[error("backend process did not answer within {0:.1} s")]
    Timeout(f64),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("backend reported: {0}")]
    Remote(String),
    #[error("invalid backend output: {0}")]
    Invalid(String),
    #[error("{0}")]
    Config(String),
}

/// The line a word detector is asked about.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineContext {
    pub image_id: String,
    pub line_index: usize,
    /// The extended line box in page coordinates.
    pub line: OrientedBox,
    pub frame: CropFrame,
}

impl LineContext {
    pub fn id(&self) -> String {
        format!("{}/l{}", self.image_id, self.line_index)
    }
}

/// The word a classifier or embedder is asked about.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordContext {
    pub line: LineContext,
    pub word_index: usize,
    /// Word box in page coordinates.
    pub page_box: AxisBox,
    /// Word box in crop-normalized coordinates of the deskewed line.
    pub crop_box: AxisBox,
}

impl WordContext {
    pub fn id(&self) -> String {
        format!("{}/w{}", self.line.id(), self.word_index)
    }

    pub fn image_id(&self) -> &str {
        &self.line.image_id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub label: Word,
    #[serde(rename = "conf")]
    pub confidence: f64,
}

pub trait LineDetector: Send + Sync {
    /// Oriented line boxes in page-normalized coordinates.
    fn detect_lines(&self, page: &Raster, image_id: &str) -> Result<Vec<Detection<OrientedBox>>, BackendError>;
}

pub trait WordDetector: Send + Sync {
    /// Word boxes in crop-normalized coordinates of the deskewed line crop.
    fn detect_words(&self, crop: &Raster, ctx: &LineContext) -> Result<Vec<Detection<AxisBox>>, BackendError>;
}

pub trait Classifier: Send + Sync {
    /// Candidates ranked by non-increasing confidence.
    fn classify(&self, crop: &Raster, ctx: &WordContext) -> Result<Vec<Candidate>, BackendError>;
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, crop: &Raster, ctx: &WordContext) -> Result<Vec<f32>, BackendError>;
}

/// One implementation per model role.
#[derive(Clone)]
pub struct Backends {
    pub lines: Arc<dyn LineDetector>,
    pub words: Arc<dyn WordDetector>,
    pub classifier: Arc<dyn Classifier>,
    pub embedder: Arc<dyn Embedder>,
}

impl Backends {
    /// Uses one object for all four roles.
    pub fn uniform<T>(backend: Arc<T>) -> Self
    where
        T: LineDetector + WordDetector + Classifier + Embedder + 'static,
    {
        Self {
            lines: backend.clone(),
            words: backend.clone(),
            classifier: backend.clone(),
            embedder: backend,
        }
    }
}

fn check_confidence(c: f64) -> Result<(), String> {
    if (0.0..=1.0).contains(&c) {
        Ok(())
    } else {
        Err(format!("confidence {c} outside [0, 1]"))
    }
}

pub fn validate_lines(dets: &[Detection<OrientedBox>]) -> Result<(), BackendError> {
    dets.iter()
        .try_for_each(|d| check_confidence(d.confidence))
        .map_err(BackendError::Invalid)
}

/// Word boxes must stay within the crop up to a 0.01 margin.
pub fn validate_words(dets: &[Detection<AxisBox>]) -> Result<(), BackendError> {
    let crop = AxisBox { cx: 0.5, cy: 0.5, w: 1.0, h: 1.0 };
    for d in dets {
        check_confidence(d.confidence).map_err(BackendError::Invalid)?;
        if !crop.contains(&d.bbox, 0.01) {
            return Err(BackendError::Invalid(format!("word box {:?} leaves the crop", d.bbox)));
        }
    }
    Ok(())
}

pub fn validate_candidates(c: &[Candidate]) -> Result<(), BackendError> {
    if c.is_empty() {
        return Err(BackendError::Invalid("classifier returned no candidates".into()));
    }
    c.iter()
        .try_for_each(|c| check_confidence(c.confidence))
        .map_err(BackendError::Invalid)?;
    if c.windows(2).any(|w| w[1].confidence > w[0].confidence) {
        return Err(BackendError::Invalid("candidates are not ranked by confidence".into()));
    }
    let sum: f64 = c.iter().map(|c| c.confidence).sum();
    if sum > 1.0 + 1e-6 {
        return Err(BackendError::Invalid(format!("candidate confidences sum to {sum}")));
    }
    Ok(())
}

pub fn validate_vector(v: &[f32], dim: usize) -> Result<(), BackendError> {
    if v.len() != dim {
        return Err(BackendError::Invalid(format!("embedding has {} components, expected {dim}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(BackendError::Invalid("embedding has a non-finite component".into()));
    }
    Ok(())
}

/// Wire form of a detection, shared by the file and process backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DetectionRecord {
    Line { obb: [f64; 8], conf: f64 },
    Word {
        #[serde(rename = "box")]
        bbox: [f64; 4],
        conf: f64,
    },
}

impl DetectionRecord {
    pub fn into_line(self) -> Result<Detection<OrientedBox>, String> {
        match self {
            Self::Line { obb, conf } => {
                check_confidence(conf)?;
                let b = OrientedBox::from_coords(obb).map_err(|e| e.to_string())?;
                Ok(Detection::new(b, conf))
            }
            Self::Word { .. } => Err("expected an `obb` line detection, found a word `box`".into()),
        }
    }

    pub fn into_word(self) -> Result<Detection<AxisBox>, String> {
        match self {
            Self::Word { bbox: [cx, cy, w, h], conf } => {
                check_confidence(conf)?;
                let b = AxisBox::new(cx, cy, w, h).map_err(|e| e.to_string())?;
                Ok(Detection::new(b, conf))
            }
            Self::Line { .. } => Err("expected a word `box` detection, found a line `obb`".into()),
        }
    }
}

/// Wire form of a response (process backend) or replay record (file
/// backend, which adds `key`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<Vec<DetectionRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<Candidate>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Converts a wire vector, rejecting values that do not fit in `f32`.
pub fn vector_from_wire(v: &[f64]) -> Result<Vec<f32>, String> {
    v.iter()
        .map(|&x| {
            let y = x as f32;
            if y.is_finite() {
                Ok(y)
            } else {
                Err(format!("vector component {x} is not a finite f32"))
            }
        })
        .collect()
}

/// 64-bit FNV-1a; used to derive per-context seeds.
pub fn fnv1a(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
