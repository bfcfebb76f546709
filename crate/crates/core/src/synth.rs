//! Synthetic annotated pages: slanted lines of bitmap-font words on a light
//! background, with word boxes, line boxes and a clean transcript that
//! match the rendering exactly.

use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{page_paths, DocumentAnnotation, LineAnnotation, TranscriptToken, WordAnnotation, WORD_CLASS};
use crate::geometry::{AxisBox, OrientedBox, Point};
use crate::imaging::{glyph_bit, Raster};
use crate::lexicon::Word;

/// Latin word forms used for planted transcripts. Several similar pairs
/// (distance 1) are included on purpose.
pub const VOCABULARY: &[&str] = &[
    "et", "in", "est", "non", "ad", "cum", "de", "per", "qui", "quod", "sed", "ut", "deus", "dei", "amen",
    "nomen", "nomine", "domini", "domino", "dominus", "nostri", "nostro", "nostrae", "nostre", "gratia",
    "gloria", "sancti", "sancto", "spiritus", "patris", "filii", "regnum", "regum", "ecclesia", "ecclesiae",
    "episcopus", "episcopi", "omnibus", "omnium", "terra", "terram", "caelum", "populus", "populi", "anno",
    "incarnationis", "mense", "die", "tempore", "donavit", "dedit", "fecit", "scripsi", "subscripsi",
    "monasterii", "monasterio", "beati", "beato", "presbyter", "diaconus", "quoniam", "itaque", "autem",
    "vero", "igitur", "sicut", "super", "inter", "propter", "contra",
];

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub width: u32,
    pub height: u32,
    pub lines: (usize, usize),
    pub words_per_line: (usize, usize),
    /// Page-wide inclination is drawn from `±base_angle_deg`, each line
    /// adds `±line_jitter_deg`, and the total is capped at `±max_angle_deg`.
    pub base_angle_deg: f64,
    pub line_jitter_deg: f64,
    pub max_angle_deg: f64,
    pub margin_px: f64,
    pub word_height_px: f64,
    pub char_width_px: f64,
    /// Fraction of transcript tokens marked damaged.
    pub damaged_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 1400,
            height: 1100,
            lines: (3, 8),
            words_per_line: (5, 15),
            base_angle_deg: 4.0,
            line_jitter_deg: 1.0,
            max_angle_deg: 5.0,
            margin_px: 80.0,
            word_height_px: 30.0,
            char_width_px: 12.0,
            damaged_rate: 0.0,
        }
    }
}

const PAPER: u8 = 238;
const INK: u8 = 40;

#[derive(Debug, Clone)]
pub struct SynthPage {
    pub doc: DocumentAnnotation,
    pub image: Raster,
}

struct PlacedWord {
    text: Word,
    center: (f64, f64),
    w: f64,
    angle: f64,
}

/// Renders one page. The same `seed` and config always give the same page.
pub fn render_page(image_id: &str, cfg: &SynthConfig, seed: u64) -> SynthPage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (pw, ph) = (cfg.width as f64, cfg.height as f64);
    let n_lines = rng.random_range(cfg.lines.0..=cfg.lines.1);
    let base = rng.random_range(-cfg.base_angle_deg..=cfg.base_angle_deg);
    let max = cfg.max_angle_deg.to_radians();

    let h = cfg.word_height_px;
    let pad = h * 0.4;
    let band = h + 2.0 * pad;
    let max_len = pw - 2.0 * cfg.margin_px - 2.0 * pad;
    let drift = 0.5 * max_len * max.sin() + band / 2.0;
    let pitch = (ph - 2.0 * cfg.margin_px - 2.0 * drift) / n_lines as f64;

    let mut image = Raster::filled(cfg.width, cfg.height, 1, PAPER).expect("positive page size");
    let mut words = Vec::new();
    let mut lines = Vec::new();
    let mut transcript = Vec::new();

    for li in 0..n_lines {
        let angle = (base + rng.random_range(-cfg.line_jitter_deg..=cfg.line_jitter_deg))
            .to_radians()
            .clamp(-max, max);
        let n_words = rng.random_range(cfg.words_per_line.0..=cfg.words_per_line.1);
        let texts: Vec<Word> = (0..n_words)
            .map(|_| Word::new(VOCABULARY[rng.random_range(0..VOCABULARY.len())]).expect("vocabulary words are valid"))
            .collect();
        let mut widths: Vec<f64> = texts.iter().map(|t| cfg.char_width_px * t.len() as f64 + 6.0).collect();
        let mut gaps: Vec<f64> = (1..n_words).map(|_| rng.random_range(0.6..1.2) * h).collect();
        let natural: f64 = widths.iter().sum::<f64>() + gaps.iter().sum::<f64>();
        if natural > max_len {
            let s = max_len / natural;
            widths.iter_mut().for_each(|w| *w *= s);
            gaps.iter_mut().for_each(|g| *g *= s);
        }
        let total: f64 = widths.iter().sum::<f64>() + gaps.iter().sum::<f64>();
        let indent = rng.random_range(0.0..=(max_len - total).clamp(0.0, 3.0 * h));
        let center = (
            cfg.margin_px + pad + indent + total / 2.0,
            cfg.margin_px + drift + (li as f64 + 0.5) * pitch,
        );
        let (sin, cos) = angle.sin_cos();
        let along = |t: f64, n: f64| (center.0 + t * cos - n * sin, center.1 + t * sin + n * cos);

        let mut t = -total / 2.0;
        let mut placed = Vec::with_capacity(n_words);
        for (i, text) in texts.into_iter().enumerate() {
            let w = widths[i];
            placed.push(PlacedWord { text, center: along(t + w / 2.0, 0.0), w, angle });
            t += w + gaps.get(i).copied().unwrap_or(0.0);
        }

        let half = total / 2.0 + pad;
        let corner = |t: f64, n: f64| {
            let (x, y) = along(t, n);
            Point::new(x / pw, y / ph)
        };
        let obb = OrientedBox::new([
            corner(-half, -band / 2.0),
            corner(half, -band / 2.0),
            corner(half, band / 2.0),
            corner(-half, band / 2.0),
        ])
        .expect("synthetic line boxes are valid");
        lines.push(LineAnnotation { bbox: obb, class_id: 0 });

        for p in &placed {
            draw_word(&mut image, p, h);
            let (s, c) = (p.angle.sin().abs(), p.angle.cos());
            let (bw, bh) = (p.w * c + h * s, p.w * s + h * c);
            let bbox = AxisBox::new(p.center.0 / pw, p.center.1 / ph, bw / pw, bh / ph).expect("word inside page");
            words.push(WordAnnotation { bbox, class_id: WORD_CLASS });
            transcript.push(TranscriptToken {
                word: p.text.clone(),
                damaged: rng.random_bool(cfg.damaged_rate.clamp(0.0, 1.0)),
                carry: false,
                text_line: li + 1,
            });
        }
    }

    SynthPage {
        doc: DocumentAnnotation {
            image_id: image_id.to_string(),
            image_w: cfg.width,
            image_h: cfg.height,
            words,
            lines,
            transcript,
        },
        image,
    }
}

fn draw_word(img: &mut Raster, p: &PlacedWord, h: f64) {
    let chars: Vec<char> = p.text.as_str().chars().collect();
    let cw = p.w / chars.len() as f64;
    let (sin, cos) = p.angle.sin_cos();
    let reach = (p.w + h) / 2.0 + 1.0;
    let (x0, x1) = ((p.center.0 - reach).floor() as i64, (p.center.0 + reach).ceil() as i64);
    let (y0, y1) = ((p.center.1 - reach).floor() as i64, (p.center.1 + reach).ceil() as i64);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dx, dy) = (x as f64 + 0.5 - p.center.0, y as f64 + 0.5 - p.center.1);
            let u = cos * dx + sin * dy + p.w / 2.0;
            let v = -sin * dx + cos * dy + h / 2.0;
            if u < 0.0 || v < 0.0 || u >= p.w || v >= h {
                continue;
            }
            let ci = ((u / cw) as usize).min(chars.len() - 1);
            let gx = ((u - ci as f64 * cw) / cw * 8.0) as u32;
            let gy = (v / h * 8.0) as u32;
            if glyph_bit(chars[ci], gx.min(7), gy.min(7)) {
                img.put(x, y, &[INK]);
            }
        }
    }
}

/// `n` pages named `page000`, `page001`, ...; page `i` uses seed `seed + i`.
pub fn synth_corpus(n: usize, cfg: &SynthConfig, seed: u64) -> Vec<SynthPage> {
    (0..n)
        .map(|i| render_page(&format!("page{i:03}"), cfg, seed.wrapping_add(i as u64)))
        .collect()
}

fn format_transcript(tokens: &[TranscriptToken]) -> String {
    let mut out = String::new();
    let mut line = None;
    for t in tokens {
        if line.is_some() {
            out.push(if line == Some(t.text_line) { ' ' } else { '\n' });
        }
        line = Some(t.text_line);
        let mut s = t.word.as_str().to_string();
        if t.damaged {
            s = format!("[{s}]");
        }
        out.push_str(&s);
    }
    out.push('\n');
    out
}

/// Writes pages in the corpus directory layout read by
/// [`crate::corpus::load_corpus`].
pub fn write_corpus(dir: &Path, pages: &[SynthPage]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for p in pages {
        let paths = page_paths(dir, &p.doc.image_id);
        p.image.save_png(&paths.image).map_err(io::Error::other)?;
        let words: String = p
            .doc
            .words
            .iter()
            .map(|w| format!("{} {} {} {} {}\n", w.class_id, w.bbox.cx, w.bbox.cy, w.bbox.w, w.bbox.h))
            .collect();
        let lines: String = p
            .doc
            .lines
            .iter()
            .map(|l| {
                let c = l.bbox.coords().map(|v| v.to_string()).join(" ");
                format!("{} {c}\n", l.class_id)
            })
            .collect();
        fs::write(&paths.words, words)?;
        fs::write(&paths.lines, lines)?;
        fs::write(&paths.tokens, format_transcript(&p.doc.transcript))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{align_tokens, assign_words_to_lines, load_corpus};
    use crate::deskew::pixel_angle;

    #[test]
    fn pages_are_deterministic_and_aligned() {
        let cfg = SynthConfig::default();
        let a = render_page("p", &cfg, 11);
        let b = render_page("p", &cfg, 11);
        assert_eq!(a.doc, b.doc);
        assert_eq!(a.image, b.image);
        let assignment = assign_words_to_lines(&a.doc, 0.5);
        assert!(assignment.unassigned.is_empty());
        let aligned = align_tokens(&a.doc, &assignment).unwrap();
        assert_eq!(aligned.len(), a.doc.words.len());
        for (k, al) in aligned.iter().enumerate() {
            assert_eq!(al.word_index, k, "reading order matches planting order");
        }
    }

    #[test]
    fn inclinations_are_bounded() {
        let cfg = SynthConfig::default();
        for seed in 0..20 {
            let p = render_page("p", &cfg, seed);
            assert!((3..=8).contains(&p.doc.lines.len()));
            for l in &p.doc.lines {
                let a = pixel_angle(&l.bbox, cfg.width, cfg.height).radians();
                assert!(a.abs() <= 5f64.to_radians() + 1e-9);
                for c in l.bbox.corners() {
                    assert!((0.0..=1.0).contains(&c.x) && (0.0..=1.0).contains(&c.y));
                }
            }
        }
    }

    #[test]
    fn corpus_round_trips_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let pages = synth_corpus(2, &SynthConfig::default(), 5);
        write_corpus(dir.path(), &pages).unwrap();
        let docs = load_corpus(dir.path()).unwrap();
        assert_eq!(docs.len(), 2);
        for (d, p) in docs.iter().zip(&pages) {
            assert_eq!(d, &p.doc);
        }
    }
}
