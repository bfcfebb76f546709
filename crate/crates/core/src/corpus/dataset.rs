use std::collections::HashSet;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{align_tokens, assign_words_to_lines, CorpusError, DocumentAnnotation, LineAssignment};
use crate::deskew::{CropFrame, LineCrop};
use crate::geometry::AxisBox;
use crate::imaging::{self, Raster};
use crate::lexicon::{OccurrenceTable, Word};

/// A deskewed line crop and the boxes of its words in crop-normalized
/// coordinates.
#[derive(Debug, Clone)]
pub struct LineSample {
    pub image_id: String,
    pub line_index: usize,
    pub frame: CropFrame,
    pub crop: Raster,
    /// Indices into the document's word list, in reading order.
    pub word_indices: Vec<usize>,
    pub words: Vec<AxisBox>,
    pub class_ids: Vec<u32>,
}

/// Crops and deskews every line of `doc`, carrying along the words assigned
/// to it. Word centers are rotated with the crop; widths and heights are
/// kept. Boxes poking out of the crop are clipped to it, and boxes left
/// with no area are dropped.
pub fn build_line_samples(
    doc: &DocumentAnnotation,
    page: &Raster,
    assignment: &LineAssignment,
) -> Vec<LineSample> {
    let mut out = Vec::with_capacity(doc.lines.len());
    for (li, line) in doc.lines.iter().enumerate() {
        let crop = match LineCrop::new(page, &line.bbox) {
            Ok(c) => c,
            Err(e) => {
                warn!("{}: skipping line {li}: {e}", doc.image_id);
                continue;
            }
        };
        let mut sample = LineSample {
            image_id: doc.image_id.clone(),
            line_index: li,
            frame: crop.frame,
            crop: crop.image,
            word_indices: Vec::new(),
            words: Vec::new(),
            class_ids: Vec::new(),
        };
        for &wi in &assignment.lines[li] {
            let local = crop.frame.page_to_crop(&doc.words[wi].bbox);
            match clip_to_unit(&local) {
                Some(b) => {
                    sample.word_indices.push(wi);
                    sample.words.push(b);
                    sample.class_ids.push(doc.words[wi].class_id);
                }
                None => warn!("{}: word {wi} falls outside the crop of line {li}", doc.image_id),
            }
        }
        out.push(sample);
    }
    out
}

fn clip_to_unit(b: &AxisBox) -> Option<AxisBox> {
    let unit = AxisBox { cx: 0.5, cy: 0.5, w: 1.0, h: 1.0 };
    if unit.contains(b, 0.0) {
        return Some(*b);
    }
    AxisBox::from_extents(
        b.left().max(0.0),
        b.top().max(0.0),
        b.right().min(1.0),
        b.bottom().min(1.0),
    )
    .ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordSource {
    pub image_id: String,
    pub line_index: usize,
    pub word_index: usize,
}

#[derive(Debug, Clone)]
pub struct ClassificationPair {
    pub image: Raster,
    pub label: Word,
    pub source: WordSource,
}

#[derive(Debug, Default)]
pub struct ClassificationDataset {
    pub pairs: Vec<ClassificationPair>,
    pub occurrences: OccurrenceTable,
    /// Documents that could not be used, with the reason.
    pub failures: Vec<(String, CorpusError)>,
}

impl ClassificationDataset {
    pub fn labels(&self) -> Vec<Word> {
        self.pairs.iter().map(|p| p.label.clone()).collect()
    }

    /// Number of output classes a classifier trained on this set needs.
    pub fn lexicon_size(&self) -> usize {
        self.occurrences.vocabulary_size()
    }
}

fn document_pairs(
    doc: &DocumentAnnotation,
    page: &Raster,
    threshold: f64,
) -> Result<Vec<ClassificationPair>, CorpusError> {
    let assignment = assign_words_to_lines(doc, threshold);
    let aligned = align_tokens(doc, &assignment)?;
    let samples = build_line_samples(doc, page, &assignment);
    let mut pairs = Vec::new();
    for a in aligned.iter().filter(|a| a.token.is_clean()) {
        let Some(sample) = samples.iter().find(|s| s.line_index == a.line_index) else {
            continue;
        };
        let Some(pos) = sample.word_indices.iter().position(|&w| w == a.word_index) else {
            continue;
        };
        let rect = imaging::to_pixel_rect(&sample.words[pos], sample.crop.width(), sample.crop.height())
            .map_err(|source| CorpusError::Image { image_id: doc.image_id.clone(), source })?;
        pairs.push(ClassificationPair {
            image: imaging::crop(&sample.crop, rect),
            label: a.token.word.clone(),
            source: WordSource {
                image_id: doc.image_id.clone(),
                line_index: a.line_index,
                word_index: a.word_index,
            },
        });
    }
    if pairs.is_empty() {
        warn!("{}: no clean aligned words", doc.image_id);
    }
    Ok(pairs)
}

/// Word crops paired with their transcript labels across a corpus. Damaged
/// and carried tokens are left out. Crops are cut from the deskewed line
/// samples so they look like the crops seen at transcription time.
///
/// Documents are processed in parallel; `load_page` supplies each page
/// image. A document that fails (unreadable image, token count mismatch) is
/// recorded in `failures` and the others continue.
pub fn build_classification_dataset<F>(
    docs: &[DocumentAnnotation],
    load_page: F,
    membership_threshold: f64,
) -> ClassificationDataset
where
    F: Fn(&DocumentAnnotation) -> Result<Raster, CorpusError> + Sync,
{
    let mut seen = HashSet::new();
    let mut failures = Vec::new();
    let unique: Vec<&DocumentAnnotation> = docs
        .iter()
        .filter(|d| {
            let fresh = seen.insert(d.image_id.as_str());
            if !fresh {
                failures.push((d.image_id.clone(), CorpusError::DuplicateImageId(d.image_id.clone())));
            }
            fresh
        })
        .collect();
    let results: Vec<(String, Result<Vec<ClassificationPair>, CorpusError>)> = unique
        .par_iter()
        .map(|doc| {
            let r = load_page(doc).and_then(|page| document_pairs(doc, &page, membership_threshold));
            (doc.image_id.clone(), r)
        })
        .collect();
    let mut out = ClassificationDataset { failures, ..Default::default() };
    for (id, r) in results {
        match r {
            Ok(pairs) => {
                for p in &pairs {
                    out.occurrences.add(p.label.clone());
                }
                out.pairs.extend(pairs);
            }
            Err(e) => {
                warn!("{id}: {e}");
                out.failures.push((id, e));
            }
        }
    }
    out
}
