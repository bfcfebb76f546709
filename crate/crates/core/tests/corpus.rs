use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use minuscule::corpus::{
    align_tokens, assign_words_to_lines, build_classification_dataset, build_line_samples, sample_triplets,
    train_val_split, CorpusError,
};
use minuscule::lexicon::{modified_hamming, Word};
use minuscule::synth::{render_page, synth_corpus, SynthConfig};

fn small() -> SynthConfig {
    SynthConfig { width: 600, height: 480, lines: (2, 4), words_per_line: (2, 6), ..SynthConfig::default() }
}

fn words_from(seed: u64, n: usize, alphabet: &[&str]) -> Vec<Word> {
    (0..n)
        .map(|i| Word::new(alphabet[(i as u64 * 7 + seed) as usize % alphabet.len()]).unwrap())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn words_belong_to_one_line(seed in 0u64..10_000) {
        let page = render_page("p", &small(), seed);
        let a = assign_words_to_lines(&page.doc, 0.5);
        let mut seen = BTreeSet::new();
        for w in a.lines.iter().flatten().chain(&a.unassigned) {
            prop_assert!(seen.insert(*w), "word {} placed twice", w);
        }
        prop_assert_eq!(seen.len(), page.doc.words.len());
    }

    #[test]
    fn deskewed_lines_are_level(seed in 0u64..10_000) {
        let page = render_page("p", &small(), seed);
        let a = assign_words_to_lines(&page.doc, 0.5);
        for s in build_line_samples(&page.doc, &page.image, &a) {
            let line = &page.doc.lines[s.line_index].bbox;
            let d = s.frame.deskewed_line(line).unwrap();
            prop_assert!(d.angle().radians().abs() < 1e-6);
            let (tl, tr) = (d.top_left(), d.top_right());
            prop_assert!((tl.y - tr.y).abs() < 1.5);
            for &wi in &s.word_indices {
                let b = page.doc.words[wi].bbox;
                let px = b.scale(page.doc.image_w as f64, page.doc.image_h as f64);
                let c = s.frame.page_to_crop_px(&b);
                prop_assert_eq!(c.w.to_bits(), px.w.to_bits());
                prop_assert_eq!(c.h.to_bits(), px.h.to_bits());
            }
        }
    }

    #[test]
    fn split_keeps_singletons_in_train(seed in 0u64..1000, n in 1usize..200, f in 0.05..0.45f64) {
        let labels = words_from(seed, n, &["et", "in", "amen", "deus", "rex", "sanctus", "pater", "filius", "nostri"][..(1 + seed as usize % 9)]);
        let mut labels = labels;
        labels.push(Word::new("singularis").unwrap());
        let split = train_val_split(&labels, f, seed).unwrap();
        prop_assert_eq!(split.train.len() + split.val.len(), labels.len());
        let train: BTreeSet<&Word> = split.train.iter().map(|&i| &labels[i]).collect();
        for &i in &split.val {
            prop_assert!(train.contains(&labels[i]));
        }
        prop_assert!(train.contains(&Word::new("singularis").unwrap()));
    }

    #[test]
    fn triplets_respect_similarity(seed in 0u64..1000, n in 1usize..300) {
        let labels = words_from(seed, 40, &["nostri", "nostro", "nostra", "amen", "deus", "dei", "et", "in"]);
        let t = sample_triplets(&labels, n, seed).unwrap();
        prop_assert_eq!(t.len(), n);
        for x in t {
            prop_assert_ne!(x.anchor, x.positive);
            prop_assert!(modified_hamming(&labels[x.anchor], &labels[x.positive]).is_similar());
            prop_assert!(!modified_hamming(&labels[x.anchor], &labels[x.negative]).is_similar());
        }
    }
}

#[test]
fn occurrences_match_planted_counts() {
    let pages = synth_corpus(3, &small(), 77);
    let docs: Vec<_> = pages.iter().map(|p| p.doc.clone()).collect();
    let data = build_classification_dataset(&docs, |d| Ok(pages.iter().find(|p| p.doc.image_id == d.image_id).unwrap().image.clone()), 0.5);
    assert!(data.failures.is_empty());
    let mut planted: BTreeMap<&Word, u64> = BTreeMap::new();
    for t in docs.iter().flat_map(|d| &d.transcript) {
        *planted.entry(&t.word).or_default() += 1;
    }
    for (w, c) in &planted {
        assert_eq!(data.occurrences.count(w), *c, "{w}");
    }
    assert_eq!(data.occurrences.vocabulary_size(), planted.len());
    for p in &data.pairs {
        assert!(data.occurrences.count(&p.label) >= 1);
    }
}

#[test]
fn damaged_tokens_are_not_paired() {
    let cfg = SynthConfig { damaged_rate: 0.3, ..small() };
    let page = render_page("p", &cfg, 5);
    let a = assign_words_to_lines(&page.doc, 0.5);
    let aligned = align_tokens(&page.doc, &a).unwrap();
    let clean = aligned.iter().filter(|w| w.token.is_clean()).count();
    assert!(clean < aligned.len(), "seed should plant damaged tokens");
    let data = build_classification_dataset(std::slice::from_ref(&page.doc), |_| Ok(page.image.clone()), 0.5);
    assert_eq!(data.pairs.len(), clean);
}

#[test]
fn no_anchor_is_an_error() {
    let labels = words_from(0, 5, &["amen"]);
    assert!(matches!(sample_triplets(&labels, 3, 0), Err(CorpusError::NoAdmissibleAnchor)));
}
