//! On-disk datasets. [`write_datasets`] lays out
//!
//! ```text
//! <out>/lines/manifest.json           page images with their line boxes
//! <out>/lines/images/<id>.png
//! <out>/words/manifest.json           deskewed line crops with word boxes
//! <out>/words/images/<id>_l<k>.png
//! <out>/classification/manifest.json  word crops with labels and split
//! <out>/classification/images/<id>_l<k>_w<j>.png
//! <out>/triplets/manifest.json        index triplets into the word crops
//! ```
//!
//! Image paths in a manifest are relative to the manifest's directory.
//! Line corners are `[x1, y1, ..., x4, y4]` and word boxes `[cx, cy, w, h]`,
//! normalized to the image they refer to.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    assign_words_to_lines, build_classification_dataset, build_line_samples, page_paths, sample_triplets,
    train_val_split, ClassificationDataset, CorpusError, DocumentAnnotation,
};
use crate::deskew::CropFrame;
use crate::imaging::Raster;
use crate::lexicon::{class_weights, Word};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRecord {
    pub class_id: u32,
    pub obb: [f64; 8],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageRecord {
    pub image: String,
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub lines: Vec<LineRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordBoxRecord {
    pub class_id: u32,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineCropRecord {
    pub image: String,
    pub image_id: String,
    pub line_index: usize,
    pub frame: CropFrame,
    pub words: Vec<WordBoxRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRecord {
    pub image: String,
    pub label: Word,
    pub split: Subset,
    pub image_id: String,
    pub line_index: usize,
    pub word_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationManifest {
    pub lexicon_size: usize,
    pub class_weights: BTreeMap<Word, f64>,
    pub samples: Vec<ClassificationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub anchor: String,
    pub positive: String,
    pub negative: String,
    pub anchor_label: Word,
    pub positive_label: Word,
    pub negative_label: Word,
}

#[derive(Debug, Clone)]
pub struct DatasetOptions {
    pub membership_threshold: f64,
    pub val_fraction: f64,
    pub triplets: usize,
    pub seed: u64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            membership_threshold: super::DEFAULT_MEMBERSHIP_THRESHOLD,
            val_fraction: 0.2,
            triplets: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub pages: usize,
    pub line_samples: usize,
    pub word_boxes: usize,
    pub classification_pairs: usize,
    pub lexicon_size: usize,
    pub train: usize,
    pub val: usize,
    pub triplets: usize,
    /// `(image_id, reason)` for pages left out of the classification data.
    pub failures: Vec<(String, String)>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CorpusError> {
    let text = serde_json::to_string_pretty(value).expect("manifest records serialize");
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn make_dir(path: PathBuf) -> Result<PathBuf, CorpusError> {
    fs::create_dir_all(&path).map_err(io_err(&path))?;
    Ok(path)
}

fn save(img: &Raster, path: &Path, image_id: &str) -> Result<(), CorpusError> {
    img.save_png(path)
        .map_err(|source| CorpusError::Image { image_id: image_id.to_string(), source })
}

pub fn load_page(corpus_dir: &Path, doc: &DocumentAnnotation) -> Result<Raster, CorpusError> {
    Raster::load_png(page_paths(corpus_dir, &doc.image_id).image)
        .map_err(|source| CorpusError::Image { image_id: doc.image_id.clone(), source })
}

pub fn classification_image_name(image_id: &str, line_index: usize, word_index: usize) -> String {
    format!("images/{image_id}_l{line_index}_w{word_index}.png")
}

fn write_page(
    doc: &DocumentAnnotation,
    page: &Raster,
    lines_dir: &Path,
    words_dir: &Path,
    threshold: f64,
) -> Result<(PageRecord, Vec<LineCropRecord>), CorpusError> {
    let image = format!("images/{}.png", doc.image_id);
    save(page, &lines_dir.join(&image), &doc.image_id)?;
    let page_record = PageRecord {
        image,
        image_id: doc.image_id.clone(),
        width: page.width(),
        height: page.height(),
        lines: doc
            .lines
            .iter()
            .map(|l| LineRecord { class_id: l.class_id, obb: l.bbox.coords() })
            .collect(),
    };
    let assignment = assign_words_to_lines(doc, threshold);
    let mut crops = Vec::new();
    for s in build_line_samples(doc, page, &assignment) {
        let image = format!("images/{}_l{}.png", doc.image_id, s.line_index);
        save(&s.crop, &words_dir.join(&image), &doc.image_id)?;
        crops.push(LineCropRecord {
            image,
            image_id: doc.image_id.clone(),
            line_index: s.line_index,
            frame: s.frame,
            words: s
                .words
                .iter()
                .zip(&s.class_ids)
                .map(|(b, &class_id)| WordBoxRecord { class_id, bbox: [b.cx, b.cy, b.w, b.h] })
                .collect(),
        });
    }
    Ok((page_record, crops))
}

/// Writes the classification manifest for an already built dataset and
/// returns the split used.
fn write_classification(
    data: &ClassificationDataset,
    dir: &Path,
    opts: &DatasetOptions,
) -> Result<super::Split, CorpusError> {
    let labels = data.labels();
    let split = if labels.is_empty() {
        super::Split::default()
    } else {
        train_val_split(&labels, opts.val_fraction, opts.seed)?
    };
    let mut subset = vec![Subset::Train; labels.len()];
    for &i in &split.val {
        subset[i] = Subset::Val;
    }
    let samples: Vec<ClassificationRecord> = data
        .pairs
        .par_iter()
        .zip(subset.par_iter())
        .map(|(p, &split)| {
            let image = classification_image_name(&p.source.image_id, p.source.line_index, p.source.word_index);
            save(&p.image, &dir.join(&image), &p.source.image_id)?;
            Ok(ClassificationRecord {
                image,
                label: p.label.clone(),
                split,
                image_id: p.source.image_id.clone(),
                line_index: p.source.line_index,
                word_index: p.source.word_index,
            })
        })
        .collect::<Result<_, CorpusError>>()?;
    write_json(
        &dir.join("manifest.json"),
        &ClassificationManifest {
            lexicon_size: data.lexicon_size(),
            class_weights: class_weights(&data.occurrences),
            samples,
        },
    )?;
    Ok(split)
}

/// Triplet records pointing at the classification crops, relative to the
/// triplet manifest directory.
pub fn triplet_records(data: &ClassificationDataset, n: usize, seed: u64) -> Result<Vec<TripletRecord>, CorpusError> {
    let labels = data.labels();
    let path = |i: usize| {
        let s = &data.pairs[i].source;
        format!("../classification/{}", classification_image_name(&s.image_id, s.line_index, s.word_index))
    };
    Ok(sample_triplets(&labels, n, seed)?
        .into_iter()
        .map(|t| TripletRecord {
            anchor: path(t.anchor),
            positive: path(t.positive),
            negative: path(t.negative),
            anchor_label: labels[t.anchor].clone(),
            positive_label: labels[t.positive].clone(),
            negative_label: labels[t.negative].clone(),
        })
        .collect())
}

/// Builds all four datasets for the pages of `corpus_dir` under `out`.
pub fn write_datasets(
    corpus_dir: &Path,
    docs: &[DocumentAnnotation],
    out: &Path,
    opts: &DatasetOptions,
) -> Result<DatasetSummary, CorpusError> {
    let lines_dir = make_dir(out.join("lines"))?;
    let words_dir = make_dir(out.join("words"))?;
    let class_dir = make_dir(out.join("classification"))?;
    let triplet_dir = make_dir(out.join("triplets"))?;
    make_dir(lines_dir.join("images"))?;
    make_dir(words_dir.join("images"))?;
    make_dir(class_dir.join("images"))?;

    let per_page: Vec<(PageRecord, Vec<LineCropRecord>)> = docs
        .par_iter()
        .map(|doc| {
            let page = load_page(corpus_dir, doc)?;
            write_page(doc, &page, &lines_dir, &words_dir, opts.membership_threshold)
        })
        .collect::<Result<_, _>>()?;
    let (pages, crops): (Vec<_>, Vec<_>) = per_page.into_iter().unzip();
    let crops: Vec<LineCropRecord> = crops.into_iter().flatten().collect();
    write_json(&lines_dir.join("manifest.json"), &pages)?;
    write_json(&words_dir.join("manifest.json"), &crops)?;

    let data = build_classification_dataset(docs, |d| load_page(corpus_dir, d), opts.membership_threshold);
    let split = write_classification(&data, &class_dir, opts)?;

    let triplets = if opts.triplets == 0 {
        Vec::new()
    } else {
        match triplet_records(&data, opts.triplets, opts.seed) {
            Ok(t) => t,
            Err(CorpusError::NoAdmissibleAnchor) => {
                warn!("no admissible triplet anchor; triplet manifest left empty");
                Vec::new()
            }
            Err(e) => return Err(e),
        }
    };
    write_json(&triplet_dir.join("manifest.json"), &triplets)?;

    Ok(DatasetSummary {
        pages: pages.len(),
        line_samples: crops.len(),
        word_boxes: crops.iter().map(|c| c.words.len()).sum(),
        classification_pairs: data.pairs.len(),
        lexicon_size: data.lexicon_size(),
        train: split.train.len(),
        val: split.val.len(),
        triplets: triplets.len(),
        failures: data.failures.iter().map(|(id, e)| (id.clone(), e.to_string())).collect(),
    })
}
