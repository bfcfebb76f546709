use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::lexicon::{similarity_pairs, Word};

/// Indices into the pair list, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Splits pairs (given by their labels) into train and validation sets.
///
/// A label seen once always goes to train. Every other label keeps one
/// randomly chosen pair in train; the remaining pairs form a pool from which
/// `round(val_fraction * labels.len())` pairs (at most the whole pool) move
/// to validation. Every validation label is therefore also a train label.
pub fn train_val_split(labels: &[Word], val_fraction: f64, seed: u64) -> Result<Split, CorpusError> {
    if !(val_fraction > 0.0 && val_fraction < 0.5) {
        return Err(CorpusError::ValFraction(val_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: BTreeMap<&Word, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let mut split = Split::default();
    let mut pool = Vec::new();
    for (_, mut idx) in groups {
        idx.shuffle(&mut rng);
        split.train.push(idx[0]);
        pool.extend_from_slice(&idx[1..]);
    }
    pool.shuffle(&mut rng);
    let n_val = ((val_fraction * labels.len() as f64).round() as usize).min(pool.len());
    split.val = pool.split_off(pool.len() - n_val);
    split.train.extend(pool);
    split.train.sort_unstable();
    split.val.sort_unstable();
    Ok(split)
}

/// Indices of an anchor, a similarly labelled positive and a dissimilarly
/// labelled negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

struct TripletIndex<'a> {
    labels: &'a [Word],
    by_label: BTreeMap<&'a Word, Vec<usize>>,
    /// Similar labels of each label, itself included.
    similar: BTreeMap<&'a Word, Vec<&'a Word>>,
}

impl<'a> TripletIndex<'a> {
    fn new(labels: &'a [Word]) -> Self {
        let mut by_label: BTreeMap<&Word, Vec<usize>> = BTreeMap::new();
        for (i, l) in labels.iter().enumerate() {
            by_label.entry(l).or_default().push(i);
        }
        let mut similar: BTreeMap<&Word, Vec<&Word>> = by_label.keys().map(|&w| (w, vec![w])).collect();
        for (a, b) in similarity_pairs(by_label.keys().copied()) {
            let (ka, kb) = (by_label.get_key_value(&a).unwrap().0, by_label.get_key_value(&b).unwrap().0);
            similar.get_mut(ka).unwrap().push(kb);
            similar.get_mut(kb).unwrap().push(ka);
        }
        Self { labels, by_label, similar }
    }

    fn positives(&self, anchor: usize) -> Vec<usize> {
        self.similar[&self.labels[anchor]]
            .iter()
            .flat_map(|w| self.by_label[w].iter().copied())
            .filter(|&j| j != anchor)
            .collect()
    }

    fn negative_count(&self, anchor: usize) -> usize {
        let similar: usize = self.similar[&self.labels[anchor]].iter().map(|w| self.by_label[w].len()).sum();
        self.labels.len() - similar
    }

    fn is_negative(&self, anchor: usize, j: usize) -> bool {
        !self.similar[&self.labels[anchor]].contains(&&self.labels[j])
    }
}

/// Draws `n` triplets. Anchors are drawn uniformly from the pairs that have
/// both a positive (another image whose label is within distance 1,
/// including the same label) and a negative (label at distance above 1).
///
/// Triplets are distinct when at least `n` distinct combinations exist and
/// drawn with replacement otherwise.
pub fn sample_triplets(labels: &[Word], n: usize, seed: u64) -> Result<Vec<Triplet>, CorpusError> {
    let index = TripletIndex::new(labels);
    let anchors: Vec<(usize, Vec<usize>, usize)> = (0..labels.len())
        .filter_map(|a| {
            let pos = index.positives(a);
            let neg = index.negative_count(a);
            (!pos.is_empty() && neg > 0).then_some((a, pos, neg))
        })
        .collect();
    if anchors.is_empty() {
        return Err(CorpusError::NoAdmissibleAnchor);
    }
    let combinations: u128 = anchors.iter().map(|(_, p, q)| p.len() as u128 * *q as u128).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        let (a, pos, _) = &anchors[rng.random_range(0..anchors.len())];
        let positive = pos[rng.random_range(0..pos.len())];
        let negative = loop {
            let j = rng.random_range(0..labels.len());
            if index.is_negative(*a, j) {
                break j;
            }
        };
        Triplet { anchor: *a, positive, negative }
    };
    if combinations < n as u128 {
        return Ok((0..n).map(|_| draw(&mut rng)).collect());
    }
    if combinations <= 4 * n as u128 {
        let mut all: Vec<Triplet> = anchors
            .iter()
            .flat_map(|(a, pos, _)| {
                let index = &index;
                pos.iter().flat_map(move |&p| {
                    (0..labels.len())
                        .filter(move |&j| index.is_negative(*a, j))
                        .map(move |negative| Triplet { anchor: *a, positive: p, negative })
                })
            })
            .collect();
        all.shuffle(&mut rng);
        all.truncate(n);
        return Ok(all);
    }
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let t = draw(&mut rng);
        if seen.insert(t) {
            out.push(t);
        }
    }
    Ok(out)
}
