use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fnv1a, BackendError, Candidate, Classifier, Embedder, LineContext, LineDetector, WordContext, WordDetector};
use crate::corpus::{align_tokens, assign_words_to_lines, DocumentAnnotation, LineAssignment, DEFAULT_MEMBERSHIP_THRESHOLD};
use crate::geometry::{iou, AxisBox, OrientedBox, Point};
use crate::imaging::Raster;
use crate::lexicon::{merge_similar, MergeClasses, Word};
use crate::postprocess::{extend_line, Detection};

/// Which detectors the oracle perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseScope {
    Lines,
    Words,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Maximum uniform displacement of each coordinate, in pixels.
    pub jitter_px: f64,
    /// Probability of dropping each detection; below 1.
    pub drop_rate: f64,
    /// Detection confidences are drawn uniformly from `[confidence_floor, 1]`.
    pub confidence_floor: f64,
    pub seed: u64,
    pub scope: NoiseScope,
    pub dimension: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            jitter_px: 0.0,
            drop_rate: 0.0,
            confidence_floor: 1.0,
            seed: 0,
            scope: NoiseScope::Both,
            dimension: super::DEFAULT_EMBEDDING_DIM,
        }
    }
}

impl OracleConfig {
    fn validate(&self) -> Result<(), BackendError> {
        if !(self.jitter_px >= 0.0 && self.jitter_px.is_finite()) {
            return Err(BackendError::Config(format!("jitter {} must be a non-negative number", self.jitter_px)));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return Err(BackendError::Config(format!("drop rate {} must lie in [0, 1)", self.drop_rate)));
        }
        if !(0.0..=1.0).contains(&self.confidence_floor) {
            return Err(BackendError::Config(format!(
                "confidence floor {} must lie in [0, 1]",
                self.confidence_floor
            )));
        }
        if self.dimension == 0 {
            return Err(BackendError::Config("embedding dimension must be positive".into()));
        }
        Ok(())
    }
}

/// Label-derived embeddings. Labels in one merge class share a class
/// vector with uniform components in `[-1, 1]`; each label adds its own
/// offset of norm [`OracleEmbedder::OFFSET`]. Labels in the same class are
/// therefore at most `2 * OFFSET` apart, while independent class vectors
/// in 64 dimensions lie about 6.5 apart.
#[derive(Debug, Clone)]
pub struct OracleEmbedder {
    classes: MergeClasses,
    seed: u64,
    dimension: usize,
}

impl OracleEmbedder {
    pub const OFFSET: f64 = 0.2;

    pub fn new<'a, I: IntoIterator<Item = &'a Word>>(vocabulary: I, seed: u64, dimension: usize) -> Self {
        let vocab: BTreeSet<&Word> = vocabulary.into_iter().collect();
        let classes = merge_similar(vocab);
        Self { classes, seed, dimension }
    }

    pub fn classes(&self) -> &MergeClasses {
        &self.classes
    }

    fn uniform(&self, key: &str, salt: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(key) ^ salt);
        (0..self.dimension).map(|_| rng.random_range(-1.0..=1.0)).collect()
    }

    pub fn embed_label(&self, label: &Word) -> Vec<f32> {
        let rep = self.classes.representative(label).unwrap_or(label);
        let base = self.uniform(rep.as_str(), 0);
        let offset = self.uniform(label.as_str(), 0x9e37_79b9_7f4a_7c15);
        let norm = offset.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        base.iter()
            .zip(&offset)
            .map(|(b, o)| (b + o / norm * Self::OFFSET) as f32)
            .collect()
    }
}

struct OracleDoc {
    doc: DocumentAnnotation,
    assignment: LineAssignment,
    extended: Vec<Option<OrientedBox>>,
    labels: Vec<Option<Word>>,
}

/// Ground-truth backed implementation of all four model roles.
///
/// Line detection returns the annotated lines, word detection the words
/// assigned to the annotated line that best matches the queried one, and
/// classification the aligned transcript word of the annotated word that
/// best overlaps the queried box. Noise, when configured, is drawn from a
/// generator seeded by the configured seed and the context id, so answers
/// do not depend on call order.
pub struct Oracle {
    docs: HashMap<String, OracleDoc>,
    cfg: OracleConfig,
    embedder: OracleEmbedder,
}

impl Oracle {
    pub fn new(docs: Vec<DocumentAnnotation>, cfg: OracleConfig) -> Result<Self, BackendError> {
        cfg.validate()?;
        let mut map = HashMap::new();
        for doc in docs {
            let assignment = assign_words_to_lines(&doc, DEFAULT_MEMBERSHIP_THRESHOLD);
            let aligned = align_tokens(&doc, &assignment).map_err(|e| BackendError::Config(e.to_string()))?;
            let mut labels = vec![None; doc.words.len()];
            for a in aligned {
                labels[a.word_index] = Some(a.token.word);
            }
            let extended = doc.lines.iter().map(|l| extend_line(&l.bbox).ok()).collect();
            let id = doc.image_id.clone();
            let entry = OracleDoc { doc, assignment, extended, labels };
            if map.insert(id.clone(), entry).is_some() {
                return Err(BackendError::Config(format!("duplicate image id {id}")));
            }
        }
        let vocab: BTreeSet<Word> = map.values().flat_map(|d| d.labels.iter().flatten().cloned()).collect();
        let embedder = OracleEmbedder::new(&vocab, cfg.seed, cfg.dimension);
        Ok(Self { docs: map, cfg, embedder })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.cfg
    }

    pub fn embedder(&self) -> &OracleEmbedder {
        &self.embedder
    }

    fn doc(&self, image_id: &str) -> Result<&OracleDoc, BackendError> {
        self.docs
            .get(image_id)
            .ok_or_else(|| BackendError::Invalid(format!("oracle has no annotations for {image_id}")))
    }

    fn rng(&self, context: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.cfg.seed ^ fnv1a(context))
    }

    fn noisy(&self, lines: bool) -> bool {
        match self.cfg.scope {
            NoiseScope::Both => true,
            NoiseScope::Lines => lines,
            NoiseScope::Words => !lines,
        }
    }

    fn confidence(&self, rng: &mut ChaCha8Rng) -> f64 {
        let floor = self.cfg.confidence_floor;
        if floor >= 1.0 {
            1.0
        } else {
            rng.random_range(floor..=1.0)
        }
    }

    /// The annotated word best overlapping `page_box` and its IoU.
    fn best_word(&self, doc: &OracleDoc, page_box: &AxisBox) -> Option<(Word, f64)> {
        let mut best: Option<(Word, f64)> = None;
        for (w, label) in doc.doc.words.iter().zip(&doc.labels) {
            let Some(label) = label else { continue };
            let v = iou(&w.bbox, page_box);
            if best.as_ref().is_none_or(|(_, b)| v > *b) {
                best = Some((label.clone(), v));
            }
        }
        best
    }
}

impl LineDetector for Oracle {
    fn detect_lines(&self, page: &Raster, image_id: &str) -> Result<Vec<Detection<OrientedBox>>, BackendError> {
        let doc = self.doc(image_id)?;
        let mut rng = self.rng(image_id);
        let noisy = self.noisy(true);
        let (jx, jy) = (self.cfg.jitter_px / page.width() as f64, self.cfg.jitter_px / page.height() as f64);
        let mut out = Vec::with_capacity(doc.doc.lines.len());
        for l in &doc.doc.lines {
            let dropped = noisy && rng.random_bool(self.cfg.drop_rate);
            let conf = self.confidence(&mut rng);
            let mut b = l.bbox;
            if noisy && self.cfg.jitter_px > 0.0 {
                let mut shift = || (rng.random_range(-jx..=jx), rng.random_range(-jy..=jy));
                let d: [(f64, f64); 4] = [shift(), shift(), shift(), shift()];
                let c = l.bbox.corners();
                let moved = core::array::from_fn(|i| {
                    Point::new((c[i].x + d[i].0).clamp(0.0, 1.0), (c[i].y + d[i].1).clamp(0.0, 1.0))
                });
                b = OrientedBox::new(moved).unwrap_or(l.bbox);
            }
            if !dropped {
                out.push(Detection { bbox: b, confidence: conf, class_id: l.class_id });
            }
        }
        Ok(out)
    }
}

impl WordDetector for Oracle {
    fn detect_words(&self, crop: &Raster, ctx: &LineContext) -> Result<Vec<Detection<AxisBox>>, BackendError> {
        let doc = self.doc(&ctx.image_id)?;
        let query = ctx.line.bounding_rect();
        let matched = doc
            .extended
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.map(|e| (i, iou(&e.bounding_rect(), &query))))
            .filter(|&(_, v)| v > 0.0)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        let Some((li, _)) = matched else {
            return Ok(Vec::new());
        };
        let mut rng = self.rng(&ctx.id());
        let noisy = self.noisy(false);
        let (jx, jy) = (self.cfg.jitter_px / crop.width() as f64, self.cfg.jitter_px / crop.height() as f64);
        let mut out = Vec::new();
        for &wi in &doc.assignment.lines[li] {
            let word = &doc.doc.words[wi];
            let dropped = noisy && rng.random_bool(self.cfg.drop_rate);
            let conf = self.confidence(&mut rng);
            let mut b = ctx.frame.page_to_crop(&word.bbox);
            if noisy && self.cfg.jitter_px > 0.0 {
                let mut j = |s: f64| rng.random_range(-s..=s);
                let (l, t, r, btm) = (b.left() + j(jx), b.top() + j(jy), b.right() + j(jx), b.bottom() + j(jy));
                b = AxisBox::from_extents(l, t, r, btm).unwrap_or(b);
            }
            let clipped = AxisBox::from_extents(
                b.left().max(0.0),
                b.top().max(0.0),
                b.right().min(1.0),
                b.bottom().min(1.0),
            );
            if let (false, Ok(b)) = (dropped, clipped) {
                out.push(Detection { bbox: b, confidence: conf, class_id: word.class_id });
            }
        }
        Ok(out)
    }
}

impl Classifier for Oracle {
    /// The annotated label with confidence 1 when the queried box overlaps
    /// an annotated word with IoU of at least 0.5, otherwise the best
    /// overlapping label with the IoU as confidence.
    fn classify(&self, _crop: &Raster, ctx: &WordContext) -> Result<Vec<Candidate>, BackendError> {
        let doc = self.doc(ctx.image_id())?;
        let (label, v) = self
            .best_word(doc, &ctx.page_box)
            .ok_or_else(|| BackendError::Invalid(format!("{} has no labelled words", ctx.image_id())))?;
        let confidence = if v >= 0.5 { 1.0 } else { v };
        Ok(vec![Candidate { label, confidence }])
    }
}

impl Embedder for Oracle {
    fn dimension(&self) -> usize {
        self.cfg.dimension
    }

    fn embed(&self, _crop: &Raster, ctx: &WordContext) -> Result<Vec<f32>, BackendError> {
        let doc = self.doc(ctx.image_id())?;
        let (label, _) = self
            .best_word(doc, &ctx.page_box)
            .ok_or_else(|| BackendError::Invalid(format!("{} has no labelled words", ctx.image_id())))?;
        Ok(self.embedder.embed_label(&label))
    }
}
