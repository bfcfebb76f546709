//! Seeded inputs shared by the throughput benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use minuscule::vectorstore::EmbeddingStore;
use minuscule::{Angle, AxisBox, OrientedBox, Point, Word};

pub fn axis_boxes(n: usize, seed: u64) -> Vec<AxisBox> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let (w, h) = (rng.random_range(0.02..0.3), rng.random_range(0.02..0.3));
            AxisBox::new(rng.random_range(w / 2.0..1.0 - w / 2.0), rng.random_range(h / 2.0..1.0 - h / 2.0), w, h)
                .expect("box lies inside the page")
        })
        .collect()
}

/// Slanted line boxes spanning most of the page width.
pub fn line_boxes(n: usize, seed: u64) -> Vec<OrientedBox> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let c = Point::new(rng.random_range(0.4..0.6), rng.random_range(0.2..0.8));
        let (w, h) = (rng.random_range(0.5..0.8), rng.random_range(0.03..0.08));
        let a = Angle(rng.random_range(-0.1..0.1));
        let corners = [(-w, -h), (w, -h), (w, h), (-w, h)]
            .map(|(dx, dy)| Point::new(c.x + dx / 2.0, c.y + dy / 2.0).rotate_about(c, a));
        if let Ok(b) = OrientedBox::new(corners) {
            out.push(b);
        }
    }
    out
}

/// Distinct lowercase words of length 2 to 10 over a small alphabet, so that
/// many pairs land at distance 0 or 1.
pub fn vocabulary(n: usize, seed: u64) -> Vec<Word> {
    const LETTERS: &[char] = &['a', 'e', 'i', 'm', 'n', 'o', 'r', 's', 't', 'u'];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::BTreeSet::new();
    while seen.len() < n {
        let len = rng.random_range(2..=10);
        let s: String = (0..len).map(|_| LETTERS[rng.random_range(0..LETTERS.len())]).collect();
        seen.insert(s);
    }
    seen.into_iter().map(|s| Word::new(&s).expect("generated words are valid")).collect()
}

pub fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

pub fn store(n: usize, dim: usize, seed: u64) -> EmbeddingStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = vocabulary(64.min(n.max(1)), seed);
    let mut store = EmbeddingStore::new(dim);
    for i in 0..n {
        store.add(labels[i % labels.len()].clone(), random_vector(&mut rng, dim)).expect("dimension matches");
    }
    store
}
