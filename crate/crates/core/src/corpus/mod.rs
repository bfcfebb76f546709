//! Annotated pages and the training datasets built from them.
//!
//! A corpus directory holds, per page, `<id>.png`, `<id>.words.txt`,
//! `<id>.lines.txt` and optionally `<id>.tokens.txt` (see [`parse`] for the
//! formats). From those this module derives
//!
//! * line samples: deskewed line crops with the words that belong to them,
//! * word classification pairs: word crops aligned with transcript tokens,
//! * a train/validation split that keeps every single-occurrence word in
//!   the training set,
//! * triplets for metric learning.

mod dataset;
pub mod manifest;
pub mod parse;
mod split;

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{membership_ratio, AxisBox, OrientedBox};
use crate::imaging::{self, ImageError};
use crate::lexicon::Word;

pub use dataset::{
    build_classification_dataset, build_line_samples, ClassificationDataset, ClassificationPair,
    LineSample, WordSource,
};
pub use split::{sample_triplets, train_val_split, Split, Triplet};

/// Word annotations with this class id take part in transcript alignment;
/// other classes only feed the detection datasets.
pub const WORD_CLASS: u32 = 0;

pub const DEFAULT_MEMBERSHIP_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: field `{field}`: {message}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        field: String,
        message: String,
    },
    #[error("{image_id}: {source}")]
    Image {
        image_id: String,
        #[source]
        source: ImageError,
    },
    #[error("{image_id}: {boxes} word boxes but {tokens} transcript tokens{}",
        first_divergent_line.map(|l| format!(" (first divergence at line {l})")).unwrap_or_default())]
    CountMismatch {
        image_id: String,
        boxes: usize,
        tokens: usize,
        first_divergent_line: Option<usize>,
    },
    #[error("duplicate image id {0}")]
    DuplicateImageId(String),
    #[error("validation fraction {0} must lie in (0, 0.5)")]
    ValFraction(f64),
    #[error("no sample has both a similar partner and a dissimilar one")]
    NoAdmissibleAnchor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WordAnnotation {
    #[serde(rename = "box")]
    pub bbox: AxisBox,
    pub class_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineAnnotation {
    #[serde(rename = "obb")]
    pub bbox: OrientedBox,
    pub class_id: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptToken {
    pub word: Word,
    pub damaged: bool,
    /// Half of a word hyphenated across a line break.
    pub carry: bool,
    /// 1-based line of the transcript file the token came from.
    pub text_line: usize,
}

impl TranscriptToken {
    pub fn is_clean(&self) -> bool {
        !self.damaged && !self.carry
    }
}

/// One annotated page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentAnnotation {
    pub image_id: String,
    pub image_w: u32,
    pub image_h: u32,
    pub words: Vec<WordAnnotation>,
    pub lines: Vec<LineAnnotation>,
    pub transcript: Vec<TranscriptToken>,
}

/// Words assigned to each line, in reading order within the line.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LineAssignment {
    pub lines: Vec<Vec<usize>>,
    pub unassigned: Vec<usize>,
}

/// A word box paired with its transcript token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedWord {
    pub word_index: usize,
    pub line_index: usize,
    pub token: TranscriptToken,
}

impl DocumentAnnotation {
    /// Parses the three annotation texts. `files` names the sources for
    /// error messages: (words, lines, tokens).
    pub fn parse(
        image_id: &str,
        (image_w, image_h): (u32, u32),
        words: &str,
        lines: &str,
        tokens: &str,
        files: [&Path; 3],
    ) -> Result<Self, CorpusError> {
        Ok(Self {
            image_id: image_id.to_string(),
            image_w,
            image_h,
            words: parse::parse_words(words, files[0])?,
            lines: parse::parse_lines(lines, files[1])?,
            transcript: parse::parse_transcript(tokens, files[2])?,
        })
    }

    /// Loads `<dir>/<id>.{words,lines,tokens}.txt`; the page size is read
    /// from the header of `<dir>/<id>.png`. A missing tokens file means an
    /// empty transcript.
    pub fn load(dir: &Path, image_id: &str) -> Result<Self, CorpusError> {
        let paths = page_paths(dir, image_id);
        let dims = imaging::png_dimensions(&paths.image).map_err(|source| CorpusError::Image {
            image_id: image_id.to_string(),
            source,
        })?;
        let read = |p: &Path| {
            fs::read_to_string(p).map_err(|source| CorpusError::Io { path: p.to_path_buf(), source })
        };
        let tokens = if paths.tokens.exists() {
            read(&paths.tokens)?
        } else {
            String::new()
        };
        Self::parse(
            image_id,
            dims,
            &read(&paths.words)?,
            &read(&paths.lines)?,
            &tokens,
            [&paths.words, &paths.lines, &paths.tokens],
        )
    }

    /// Line indices ordered top to bottom by centroid (then left to right).
    pub fn line_reading_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.lines.len()).collect();
        idx.sort_by(|&a, &b| {
            let (ca, cb) = (self.lines[a].bbox.centroid(), self.lines[b].bbox.centroid());
            ca.y.total_cmp(&cb.y).then(ca.x.total_cmp(&cb.x))
        });
        idx
    }

    /// Class-0 word indices in reading order: lines top to bottom, words
    /// left to right along each deskewed line. Unassigned words are skipped.
    pub fn reading_order_words(&self, assignment: &LineAssignment) -> Vec<(usize, usize)> {
        self.line_reading_order()
            .into_iter()
            .flat_map(|l| {
                assignment.lines[l]
                    .iter()
                    .filter(|&&w| self.words[w].class_id == WORD_CLASS)
                    .map(move |&w| (l, w))
            })
            .collect()
    }
}

pub struct PagePaths {
    pub image: PathBuf,
    pub words: PathBuf,
    pub lines: PathBuf,
    pub tokens: PathBuf,
}

pub fn page_paths(dir: &Path, image_id: &str) -> PagePaths {
    PagePaths {
        image: dir.join(format!("{image_id}.png")),
        words: dir.join(format!("{image_id}.words.txt")),
        lines: dir.join(format!("{image_id}.lines.txt")),
        tokens: dir.join(format!("{image_id}.tokens.txt")),
    }
}

/// Loads every page of a corpus directory, ordered by image id.
pub fn load_corpus(dir: &Path) -> Result<Vec<DocumentAnnotation>, CorpusError> {
    let entries = fs::read_dir(dir).map_err(|source| CorpusError::Io { path: dir.to_path_buf(), source })?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| CorpusError::Io { path: dir.to_path_buf(), source })?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(".words.txt") {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    ids.iter().map(|id| DocumentAnnotation::load(dir, id)).collect()
}

/// Assigns each word to the line covering the largest fraction of it, if
/// that fraction reaches `threshold`. Ties go to the lower line index.
/// Words within a line are ordered along the deskewed line direction.
pub fn assign_words_to_lines(doc: &DocumentAnnotation, threshold: f64) -> LineAssignment {
    let mut out = LineAssignment {
        lines: vec![Vec::new(); doc.lines.len()],
        unassigned: Vec::new(),
    };
    for (wi, word) in doc.words.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (li, line) in doc.lines.iter().enumerate() {
            let r = membership_ratio(&word.bbox, &line.bbox);
            if r >= threshold && best.is_none_or(|(_, b)| r > b) {
                best = Some((li, r));
            }
        }
        match best {
            Some((li, _)) => out.lines[li].push(wi),
            None => out.unassigned.push(wi),
        }
    }
    let (pw, ph) = (doc.image_w as f64, doc.image_h as f64);
    for (li, members) in out.lines.iter_mut().enumerate() {
        let line = &doc.lines[li].bbox;
        let center = line.centroid();
        let center = crate::geometry::Point::new(center.x * pw, center.y * ph);
        let angle = crate::deskew::pixel_angle(line, doc.image_w, doc.image_h);
        let key = |w: usize| {
            let b = doc.words[w].bbox;
            crate::geometry::Point::new(b.cx * pw, b.cy * ph).rotate_about(center, -angle)
        };
        members.sort_by(|&a, &b| {
            let (pa, pb) = (key(a), key(b));
            pa.x.total_cmp(&pb.x).then(pa.y.total_cmp(&pb.y)).then(a.cmp(&b))
        });
    }
    out
}

/// Zips class-0 word boxes in reading order with the transcript tokens.
/// Every token is returned, flagged or not; use
/// [`TranscriptToken::is_clean`] to select classification material.
pub fn align_tokens(doc: &DocumentAnnotation, assignment: &LineAssignment) -> Result<Vec<AlignedWord>, CorpusError> {
    let ordered = doc.reading_order_words(assignment);
    if ordered.len() != doc.transcript.len() {
        return Err(CorpusError::CountMismatch {
            image_id: doc.image_id.clone(),
            boxes: ordered.len(),
            tokens: doc.transcript.len(),
            first_divergent_line: first_divergent_line(doc, assignment),
        });
    }
    Ok(ordered
        .into_iter()
        .zip(&doc.transcript)
        .map(|((line_index, word_index), token)| AlignedWord {
            word_index,
            line_index,
            token: token.clone(),
        })
        .collect())
}

/// Compares per-line box counts (reading order, lines with words only)
/// against per-line token counts of the transcript file; returns the first
/// 1-based line where they differ.
fn first_divergent_line(doc: &DocumentAnnotation, assignment: &LineAssignment) -> Option<usize> {
    let boxes: Vec<usize> = doc
        .line_reading_order()
        .into_iter()
        .map(|l| {
            assignment.lines[l]
                .iter()
                .filter(|&&w| doc.words[w].class_id == WORD_CLASS)
                .count()
        })
        .filter(|&n| n > 0)
        .collect();
    let mut tokens: Vec<usize> = Vec::new();
    let mut last_line = None;
    for t in &doc.transcript {
        if last_line != Some(t.text_line) {
            tokens.push(0);
            last_line = Some(t.text_line);
        }
        *tokens.last_mut().expect("pushed above") += 1;
    }
    let n = boxes.len().max(tokens.len());
    (0..n)
        .find(|&i| boxes.get(i).cmp(&tokens.get(i)) != Ordering::Equal)
        .map(|i| i + 1)
}
