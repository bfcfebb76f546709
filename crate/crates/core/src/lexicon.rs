//! Word-level string analytics: the length-constrained Hamming distance used
//! to decide whether two Latin word forms are "similar", similarity merging,
//! occurrence statistics and class weights, plus plain Levenshtein distance
//! for scoring transcriptions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// Words shorter than this are never comparable with words at least this long.
pub const SHORT_WORD_LEN: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WordError {
    #[error("empty word")]
    Empty,
    #[error("word {0:?} contains whitespace")]
    Whitespace(String),
}

/// A lowercased, whitespace-free, non-empty token.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Word(String);

impl Word {
    pub fn new(text: &str) -> Result<Self, WordError> {
        if text.is_empty() {
            return Err(WordError::Empty);
        }
        if text.chars().any(char::is_whitespace) {
            return Err(WordError::Whitespace(text.to_string()));
        }
        Ok(Word(text.to_lowercase()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Length in Unicode scalar values.
    pub fn len(&self) -> usize {
        self.0.chars().count()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn normalized(&self, norm: Normalization) -> Word {
        match norm {
            Normalization::AsIs => self.clone(),
            Normalization::FoldDiacritics => {
                let folded: String = self
                    .0
                    .nfd()
                    .filter(|c| !('\u{0300}'..='\u{036f}').contains(c))
                    .collect();
                if folded.is_empty() {
                    self.clone()
                } else {
                    Word(folded)
                }
            }
        }
    }
}

impl TryFrom<String> for Word {
    type Error = WordError;
    fn try_from(s: String) -> Result<Self, WordError> {
        Word::new(&s)
    }
}

impl From<Word> for String {
    fn from(w: Word) -> String {
        w.0
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// How characters are compared by the similarity measure.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Compare Unicode scalar values verbatim ("nostrī" ≠ "nostri").
    #[default]
    AsIs,
    /// Strip combining diacritics after canonical decomposition.
    FoldDiacritics,
}

/// Distance that can be infinite; `Infinite` orders after every finite value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Distance {
    Finite(u32),
    Infinite,
}

impl Distance {
    pub fn is_similar(self) -> bool {
        self <= Distance::Finite(1)
    }

    pub fn finite(self) -> Option<u32> {
        match self {
            Distance::Finite(d) => Some(d),
            Distance::Infinite => None,
        }
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distance::Finite(d) => write!(f, "{d}"),
            Distance::Infinite => f.write_str("inf"),
        }
    }
}

/// Length-constrained Hamming distance between two word forms.
///
/// * one word shorter than [`SHORT_WORD_LEN`] and the other not: infinite
/// * equal lengths: number of mismatching positions
/// * lengths differ by one: 1 if deleting one character of the longer word
///   yields the shorter one, infinite otherwise
/// * any larger length difference: infinite
pub fn modified_hamming(a: &Word, b: &Word) -> Distance {
    let a: Vec<char> = a.as_str().chars().collect();
    let b: Vec<char> = b.as_str().chars().collect();
    distance_chars(&a, &b)
}

fn distance_chars(a: &[char], b: &[char]) -> Distance {
    if (a.len() < SHORT_WORD_LEN) != (b.len() < SHORT_WORD_LEN) {
        return Distance::Infinite;
    }
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    match long.len() - short.len() {
        0 => Distance::Finite(long.iter().zip(short).filter(|(x, y)| x != y).count() as u32),
        1 => {
            if is_one_deletion(long, short) {
                Distance::Finite(1)
            } else {
                Distance::Infinite
            }
        }
        _ => Distance::Infinite,
    }
}

/// True if removing exactly one character of `long` gives `short`.
fn is_one_deletion(long: &[char], short: &[char]) -> bool {
    let prefix = long.iter().zip(short).take_while(|(x, y)| x == y).count();
    long[prefix + 1..] == short[prefix..]
}

pub fn modified_hamming_with(a: &Word, b: &Word, norm: Normalization) -> Distance {
    modified_hamming(&a.normalized(norm), &b.normalized(norm))
}

/// All unordered pairs `(a, b)`, `a < b`, at modified Hamming distance ≤ 1.
///
/// Only words whose lengths can yield a finite distance are compared, so the
/// cost is roughly quadratic in the size of each length bucket rather than
/// in the whole vocabulary.
pub fn similarity_pairs<'a, I>(vocab: I) -> Vec<(Word, Word)>
where
    I: IntoIterator<Item = &'a Word>,
{
    let unique: BTreeSet<&Word> = vocab.into_iter().collect();
    let mut by_len: BTreeMap<usize, Vec<(&Word, Vec<char>)>> = BTreeMap::new();
    for w in unique {
        by_len
            .entry(w.len())
            .or_default()
            .push((w, w.as_str().chars().collect()));
    }
    let mut pairs = Vec::new();
    for (&len, bucket) in &by_len {
        for (i, (wa, ca)) in bucket.iter().enumerate() {
            for (wb, cb) in &bucket[i + 1..] {
                if distance_chars(ca, cb).is_similar() {
                    pairs.push(ordered(wa, wb));
                }
            }
        }
        if let Some(next) = by_len.get(&(len + 1)) {
            for (wa, ca) in bucket {
                for (wb, cb) in next {
                    if distance_chars(ca, cb).is_similar() {
                        pairs.push(ordered(wa, wb));
                    }
                }
            }
        }
    }
    pairs.sort();
    pairs
}

fn ordered(a: &Word, b: &Word) -> (Word, Word) {
    if a < b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

/// Partition of a vocabulary into classes of transitively similar words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeClasses {
    representative: BTreeMap<Word, Word>,
}

impl MergeClasses {
    pub fn representative(&self, w: &Word) -> Option<&Word> {
        self.representative.get(w)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Word, &Word)> {
        self.representative.iter()
    }

    pub fn len(&self) -> usize {
        self.representative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.representative.is_empty()
    }

    /// Members of every class keyed by representative.
    pub fn classes(&self) -> BTreeMap<&Word, Vec<&Word>> {
        let mut out: BTreeMap<&Word, Vec<&Word>> = BTreeMap::new();
        for (w, r) in &self.representative {
            out.entry(r).or_default().push(w);
        }
        out
    }

    pub fn class_count(&self) -> usize {
        self.representative
            .iter()
            .filter(|(w, r)| w == r)
            .count()
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Keeps the smaller index as root; with sorted input that is the
    /// lexicographically smallest member.
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Union-find closure of [`similarity_pairs`]. Each class is represented by
/// its lexicographically smallest member.
pub fn merge_similar<'a, I>(vocab: I) -> MergeClasses
where
    I: IntoIterator<Item = &'a Word>,
{
    let words: Vec<&Word> = vocab.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
    let index: HashMap<&Word, usize> = words.iter().enumerate().map(|(i, w)| (*w, i)).collect();
    let mut sets = DisjointSet::new(words.len());
    for (a, b) in similarity_pairs(words.iter().copied()) {
        sets.union(index[&a], index[&b]);
    }
    let representative = words
        .iter()
        .enumerate()
        .map(|(i, w)| ((*w).clone(), words[sets.find(i)].clone()))
        .collect();
    MergeClasses { representative }
}

/// Token counts per word.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccurrenceTable {
    counts: BTreeMap<Word, u64>,
}

impl OccurrenceTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tokens<'a, I: IntoIterator<Item = &'a Word>>(tokens: I) -> Self {
        let mut t = Self::new();
        for w in tokens {
            t.add(w.clone());
        }
        t
    }

    pub fn add(&mut self, w: Word) {
        *self.counts.entry(w).or_insert(0) += 1;
    }

    pub fn merge(&mut self, other: &OccurrenceTable) {
        for (w, c) in &other.counts {
            *self.counts.entry(w.clone()).or_insert(0) += c;
        }
    }

    pub fn count(&self, w: &Word) -> u64 {
        self.counts.get(w).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn vocabulary_size(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &Word> {
        self.counts.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Word, u64)> {
        self.counts.iter().map(|(w, c)| (w, *c))
    }

    /// Counts summed per merge class, keyed by class representative.
    pub fn merged(&self, classes: &MergeClasses) -> OccurrenceTable {
        let mut out = OccurrenceTable::new();
        for (w, c) in &self.counts {
            let rep = classes.representative(w).unwrap_or(w).clone();
            *out.counts.entry(rep).or_insert(0) += c;
        }
        out
    }
}

/// Upper bin edges of the occurrence histogram. The first bin is `[1, 2]`,
/// every later bin is half-open on the left: `(2, 5]`, `(5, 10]`, ...
pub const HISTOGRAM_EDGES: [u64; 7] = [2, 5, 10, 25, 50, 100, 500];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub label: String,
    /// Exclusive lower bound (0 for the first bin).
    pub above: u64,
    /// Inclusive upper bound; `None` for the open last bin.
    pub up_to: Option<u64>,
    pub words: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("occurrence table is empty")]
pub struct EmptyTable;

pub fn occurrence_histogram(t: &OccurrenceTable) -> Result<Vec<HistogramBin>, EmptyTable> {
    if t.is_empty() {
        return Err(EmptyTable);
    }
    let mut bins: Vec<HistogramBin> = Vec::with_capacity(HISTOGRAM_EDGES.len() + 1);
    let mut lower = 0;
    for &upper in &HISTOGRAM_EDGES {
        let label = if lower == 0 {
            format!("[1,{upper}]")
        } else {
            format!("({lower},{upper}]")
        };
        bins.push(HistogramBin { label, above: lower, up_to: Some(upper), words: 0 });
        lower = upper;
    }
    bins.push(HistogramBin {
        label: format!("({lower},inf)"),
        above: lower,
        up_to: None,
        words: 0,
    });
    for (_, c) in t.iter() {
        let idx = HISTOGRAM_EDGES
            .iter()
            .position(|&e| c <= e)
            .unwrap_or(HISTOGRAM_EDGES.len());
        bins[idx].words += 1;
    }
    Ok(bins)
}

/// Inverse-frequency class weights: `1 / count`.
pub fn class_weights(t: &OccurrenceTable) -> BTreeMap<Word, f64> {
    t.iter().map(|(w, c)| (w.clone(), 1.0 / c as f64)).collect()
}

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}
