//! End-to-end transcription of a page: detect lines, resolve overlaps,
//! extend and deskew each line, detect and merge words, order everything
//! and label each word with the classifier or, when it is unsure, with the
//! nearest stored embedding.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::FRAC_PI_4;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    validate_candidates, validate_lines, validate_vector, validate_words, BackendError, Backends, Embedder, LineContext,
    WordContext,
};
use crate::corpus::{align_tokens, assign_words_to_lines, ClassificationDataset, DocumentAnnotation};
use crate::deskew::{pixel_angle, CropFrame, LineCrop};
use crate::eval::{detection_report, mean_string_distance, match_detections, DetectionReport, EvalError};
use crate::geometry::{AxisBox, OrientedBox};
use crate::imaging::{self, Raster};
use crate::lexicon::Word;
use crate::postprocess::{extend_line, resolve_by_confidence, resolve_by_union, sort_lines, sort_words, Detection};
use crate::vectorstore::{EmbeddingStore, MatchMode, Neighbor, StoreError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub line_iou_threshold: f64,
    pub word_iou_threshold: f64,
    pub membership_threshold: f64,
    /// Words whose top classifier confidence is below this go through the
    /// embedding store.
    pub classifier_confidence_floor: f64,
    pub fallback_k: usize,
    pub embedding_dim: usize,
    pub max_line_angle: f64,
    pub worker_count: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            line_iou_threshold: 0.4,
            word_iou_threshold: 0.4,
            membership_threshold: 0.5,
            classifier_confidence_floor: 0.5,
            fallback_k: 5,
            embedding_dim: crate::backends::DEFAULT_EMBEDDING_DIM,
            max_line_angle: FRAC_PI_4,
            worker_count: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let open = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(PipelineError::Config(format!("{name} {v} must lie in (0, 1)")))
            }
        };
        open("line IoU threshold", self.line_iou_threshold)?;
        open("word IoU threshold", self.word_iou_threshold)?;
        open("membership threshold", self.membership_threshold)?;
        if !(0.0..=1.0).contains(&self.classifier_confidence_floor) {
            return Err(PipelineError::Config(format!(
                "classifier confidence floor {} must lie in [0, 1]",
                self.classifier_confidence_floor
            )));
        }
        if self.fallback_k == 0 || self.embedding_dim == 0 || self.worker_count == 0 {
            return Err(PipelineError::Config("fallback k, embedding dimension and worker count must be positive".into()));
        }
        if !(self.max_line_angle > 0.0 && self.max_line_angle <= FRAC_PI_4) {
            return Err(PipelineError::Config(format!("maximum line angle {} must lie in (0, pi/4]", self.max_line_angle)));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("embedding store: {0}")]
    Store(#[from] StoreError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Classifier,
    Fallback,
}

mod axis_array {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::geometry::AxisBox;

    pub fn serialize<S: Serializer>(b: &AxisBox, s: S) -> Result<S::Ok, S::Error> {
        [b.cx, b.cy, b.w, b.h].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<AxisBox, D::Error> {
        let [cx, cy, w, h] = <[f64; 4]>::deserialize(d)?;
        AxisBox::new(cx, cy, w, h).map_err(serde::de::Error::custom)
    }
}

mod obb_array {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::geometry::OrientedBox;

    pub fn serialize<S: Serializer>(b: &OrientedBox, s: S) -> Result<S::Ok, S::Error> {
        b.coords().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<OrientedBox, D::Error> {
        OrientedBox::from_coords(<[f64; 8]>::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordResult {
    /// Page-normalized box.
    #[serde(rename = "box", with = "axis_array")]
    pub bbox: AxisBox,
    pub label: Option<Word>,
    /// Top classifier confidence.
    #[serde(rename = "conf")]
    pub confidence: f64,
    /// Word detector confidence.
    pub det_conf: f64,
    pub source: LabelSource,
    pub candidates: Vec<Neighbor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineResult {
    /// The extended line box.
    #[serde(with = "obb_array")]
    pub obb: OrientedBox,
    /// Line detector confidence.
    pub conf: f64,
    pub words: Vec<WordResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineFailure {
    pub line_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub image_id: String,
    pub lines: Vec<LineResult>,
    pub flat_text: String,
    /// Lines that were detected but could not be transcribed.
    #[serde(skip)]
    pub failures: Vec<LineFailure>,
}

impl PipelineOutput {
    pub fn words(&self) -> impl Iterator<Item = &WordResult> {
        self.lines.iter().flat_map(|l| &l.words)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("output serializes")
    }
}

struct Stage<'a> {
    page: &'a Raster,
    image_id: &'a str,
    backends: &'a Backends,
    store: Option<&'a EmbeddingStore>,
    cfg: &'a PipelineConfig,
}

impl Stage<'_> {
    fn line(&self, line_index: usize, det: &Detection<OrientedBox>) -> Result<LineResult, BackendError> {
        let crop = LineCrop::new(self.page, &det.bbox).map_err(|e| BackendError::Invalid(e.to_string()))?;
        let ctx = LineContext {
            image_id: self.image_id.to_string(),
            line_index,
            line: det.bbox,
            frame: crop.frame,
        };
        let words = self.backends.words.detect_words(&crop.image, &ctx)?;
        validate_words(&words)?;
        let words = sort_words(&resolve_by_union(&words, self.cfg.word_iou_threshold));
        let mut out = Vec::with_capacity(words.len());
        for (word_index, w) in words.iter().enumerate() {
            let rect = imaging::to_pixel_rect(&w.bbox, crop.image.width(), crop.image.height())
                .map_err(|e| BackendError::Invalid(e.to_string()))?;
            let image = imaging::crop(&crop.image, rect);
            let wctx = WordContext {
                line: ctx.clone(),
                word_index,
                page_box: crop.frame.crop_to_page(&w.bbox),
                crop_box: w.bbox,
            };
            out.push(self.word(&image, &wctx, w.confidence)?);
        }
        Ok(LineResult { obb: det.bbox, conf: det.confidence, words: out })
    }

    fn word(&self, image: &Raster, ctx: &WordContext, det_conf: f64) -> Result<WordResult, BackendError> {
        let candidates = self.backends.classifier.classify(image, ctx)?;
        validate_candidates(&candidates)?;
        let top = &candidates[0];
        let mut result = WordResult {
            bbox: ctx.page_box,
            label: Some(top.label.clone()),
            confidence: top.confidence,
            det_conf,
            source: LabelSource::Classifier,
            candidates: Vec::new(),
        };
        if top.confidence >= self.cfg.classifier_confidence_floor {
            return Ok(result);
        }
        match self.store.filter(|s| !s.is_empty()) {
            Some(store) => {
                let v = self.backends.embedder.embed(image, ctx)?;
                validate_vector(&v, self.cfg.embedding_dim)?;
                let nn = store
                    .knn(&v, self.cfg.fallback_k)
                    .map_err(|e| BackendError::Invalid(e.to_string()))?;
                result.label = Some(nn[0].label.clone());
                result.source = LabelSource::Fallback;
                result.candidates = nn;
            }
            None => {
                warn!("{}: low-confidence word and no embedding store; left unlabelled", ctx.id());
                result.label = None;
            }
        }
        Ok(result)
    }
}

/// Transcribes one page. A failing line is reported in
/// [`PipelineOutput::failures`] and the other lines continue; only a failing
/// line detector fails the page.
pub fn transcribe(
    page: &Raster,
    image_id: &str,
    backends: &Backends,
    store: Option<&EmbeddingStore>,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    cfg.validate()?;
    if backends.embedder.dimension() != cfg.embedding_dim {
        return Err(PipelineError::Config(format!(
            "embedder dimension {} differs from configured {}",
            backends.embedder.dimension(),
            cfg.embedding_dim
        )));
    }
    if let Some(s) = store {
        if s.dimension() != cfg.embedding_dim {
            return Err(StoreError::Dimension { expected: cfg.embedding_dim, found: s.dimension() }.into());
        }
    }
    let dets = backends.lines.detect_lines(page, image_id)?;
    validate_lines(&dets)?;
    let mut failures = Vec::new();
    let mut extended = Vec::new();
    for d in resolve_by_confidence(&dets, cfg.line_iou_threshold) {
        let angle = pixel_angle(&d.bbox, page.width(), page.height()).radians();
        if angle.abs() >= cfg.max_line_angle {
            warn!("{image_id}: dropping line inclined by {angle:.3} rad");
            continue;
        }
        match extend_line(&d.bbox) {
            Ok(b) => extended.push(Detection { bbox: b, ..d }),
            Err(e) => warn!("{image_id}: dropping line: {e}"),
        }
    }
    let lines = sort_lines(&extended);
    let stage = Stage { page, image_id, backends, store, cfg };
    let results: Vec<Result<LineResult, BackendError>> =
        lines.par_iter().enumerate().map(|(i, d)| stage.line(i, d)).collect();
    let mut out = Vec::with_capacity(results.len());
    for (line_index, r) in results.into_iter().enumerate() {
        match r {
            Ok(l) => out.push(l),
            Err(e) => {
                warn!("{image_id}: line {line_index}: {e}");
                failures.push(LineFailure { line_index, reason: e.to_string() });
            }
        }
    }
    let flat_text = out
        .iter()
        .flat_map(|l| &l.words)
        .filter_map(|w| w.label.as_ref().map(Word::as_str))
        .collect::<Vec<_>>()
        .join(" ");
    Ok(PipelineOutput { image_id: image_id.to_string(), lines: out, flat_text, failures })
}

pub const LINE_COLOR: [u8; 3] = [0, 160, 0];
pub const WORD_COLOR: [u8; 3] = [0, 0, 255];
pub const LABEL_COLOR: [u8; 3] = [200, 0, 0];

/// An RGB copy of the page with line boxes in green, word boxes in blue
/// and word labels in red just above their boxes.
pub fn render_overlay(page: &Raster, out: &PipelineOutput) -> Raster {
    let mut img = page.to_rgb();
    let (w, h) = (page.width() as f64, page.height() as f64);
    for line in &out.lines {
        let c = line.obb.corners();
        for i in 0..4 {
            let (a, b) = (c[i], c[(i + 1) % 4]);
            img.draw_line((a.x * w, a.y * h), (b.x * w, b.y * h), 2, &LINE_COLOR);
        }
    }
    for word in out.words() {
        let Ok(r) = imaging::to_pixel_rect(&word.bbox, page.width(), page.height()) else {
            continue;
        };
        img.draw_rect(r, 2, &WORD_COLOR);
        if let Some(label) = &word.label {
            img.draw_text(r.x0, r.y0 - 10, 1, label.as_str(), &LABEL_COLOR);
        }
    }
    img
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionReport {
    pub matched_words: usize,
    pub mean_string_distance: Option<f64>,
    /// Keyed by k.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modified_precision: Option<BTreeMap<usize, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub lines: DetectionReport,
    pub words: DetectionReport,
    pub recognition: RecognitionReport,
}

pub const EVAL_IOU_THRESHOLD: f64 = 0.5;
pub const SWEEP_STEPS: usize = 101;

/// A query embedding with its true label.
pub type LabelledQuery = (Vec<f32>, Word);

/// Scores pipeline outputs against annotated pages. Predicted lines are
/// extended, so they are compared with the extended annotated lines.
/// Recognized words are paired with annotated words by IoU at least 0.5;
/// the labels of those pairs give the mean string distance. Pages missing
/// from `outputs` count as empty predictions. Modified precision is only
/// reported when a store and labelled query vectors are given.
pub fn evaluate_outputs(
    outputs: &[PipelineOutput],
    docs: &[DocumentAnnotation],
    membership_threshold: f64,
    retrieval: Option<(&EmbeddingStore, &[LabelledQuery])>,
) -> Result<EvalReport, PipelineError> {
    let by_id: BTreeMap<&str, &PipelineOutput> = outputs.iter().map(|o| (o.image_id.as_str(), o)).collect();
    let mut line_preds: Vec<Detection<AxisBox>> = Vec::new();
    let mut line_gts = Vec::new();
    let mut word_preds: Vec<Detection<AxisBox>> = Vec::new();
    let mut word_gts = Vec::new();
    let mut pred_labels = Vec::new();
    let mut gt_labels = Vec::new();
    // pages are laid side by side so boxes of different pages never overlap
    for (page, doc) in docs.iter().enumerate() {
        let shift = |b: AxisBox| b.translate(2.0 * page as f64, 0.0);
        for l in &doc.lines {
            if let Ok(e) = extend_line(&l.bbox) {
                line_gts.push(shift(e.bounding_rect()));
            }
        }
        let labels = assign_words_to_lines(doc, membership_threshold);
        let aligned = align_tokens(doc, &labels).ok();
        let mut truth: Vec<Option<Word>> = vec![None; doc.words.len()];
        for a in aligned.into_iter().flatten() {
            truth[a.word_index] = Some(a.token.word);
        }
        let page_gts: Vec<AxisBox> = doc.words.iter().map(|w| w.bbox).collect();
        word_gts.extend(page_gts.iter().map(|b| shift(*b)));
        let Some(out) = by_id.get(doc.image_id.as_str()) else {
            continue;
        };
        for l in &out.lines {
            line_preds.push(Detection::new(shift(l.obb.bounding_rect()), l.conf));
        }
        let page_words: Vec<&WordResult> = out.words().collect();
        let dets: Vec<Detection<AxisBox>> = page_words.iter().map(|w| Detection::new(w.bbox, w.det_conf)).collect();
        let m = match_detections(&dets, &page_gts, EVAL_IOU_THRESHOLD);
        for p in &m.pairs {
            if let (Some(pred), Some(gt)) = (&page_words[p.pred].label, &truth[p.gt]) {
                pred_labels.push(pred.clone());
                gt_labels.push(gt.clone());
            }
        }
        word_preds.extend(dets.into_iter().map(|d| Detection { bbox: shift(d.bbox), ..d }));
    }
    let recognition = RecognitionReport {
        matched_words: pred_labels.len(),
        mean_string_distance: mean_string_distance(&pred_labels, &gt_labels).ok(),
        modified_precision: retrieval
            .map(|(store, queries)| precision_at_ks(store, queries, MatchMode::Similar))
            .transpose()?,
    };
    Ok(EvalReport {
        lines: detection_report(&line_preds, &line_gts, EVAL_IOU_THRESHOLD, SWEEP_STEPS)?,
        words: detection_report(&word_preds, &word_gts, EVAL_IOU_THRESHOLD, SWEEP_STEPS)?,
        recognition,
    })
}

/// Modified precision at k = 1..=9 over labelled query vectors.
pub fn precision_at_ks(
    store: &EmbeddingStore,
    queries: &[(Vec<f32>, Word)],
    mode: MatchMode,
) -> Result<BTreeMap<usize, f64>, StoreError> {
    (1..=9).map(|k| Ok((k, store.modified_precision(queries, k, mode)?))).collect()
}

/// Embeds every classification pair and stores it under its label, in
/// dataset order.
pub fn build_store(
    data: &ClassificationDataset,
    docs: &[DocumentAnnotation],
    embedder: &dyn Embedder,
) -> Result<EmbeddingStore, PipelineError> {
    let by_id: HashMap<&str, &DocumentAnnotation> = docs.iter().map(|d| (d.image_id.as_str(), d)).collect();
    let vectors: Vec<Vec<f32>> = data
        .pairs
        .par_iter()
        .map(|p| {
            let src = &p.source;
            let doc = by_id
                .get(src.image_id.as_str())
                .ok_or_else(|| PipelineError::Config(format!("no annotations for {}", src.image_id)))?;
            let line = doc.lines[src.line_index].bbox;
            let frame = CropFrame::for_line(&line, doc.image_w, doc.image_h)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", src.image_id)))?;
            let page_box = doc.words[src.word_index].bbox;
            let ctx = WordContext {
                line: LineContext { image_id: src.image_id.clone(), line_index: src.line_index, line, frame },
                word_index: src.word_index,
                page_box,
                crop_box: frame.page_to_crop(&page_box),
            };
            let v = embedder.embed(&p.image, &ctx)?;
            validate_vector(&v, embedder.dimension())?;
            Ok(v)
        })
        .collect::<Result<_, PipelineError>>()?;
    let mut store = EmbeddingStore::new(embedder.dimension());
    for (p, v) in data.pairs.iter().zip(vectors) {
        store.add(p.label.clone(), v)?;
    }
    Ok(store)
}
