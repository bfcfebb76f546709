//! Readers for the plain-text annotation formats.
//!
//! * `<id>.words.txt`: `class cx cy w h`
//! * `<id>.lines.txt`: `class x1 y1 x2 y2 x3 y3 x4 y4`, corners ordered
//!   top-left, top-right, bottom-right, bottom-left
//! * `<id>.tokens.txt`: whitespace-separated transcript tokens; `[tok]` is
//!   damaged, `tok~` / `~tok` are the two halves of a word carried over a
//!   line break
//!
//! Coordinates are fractions of the page size. Out-of-range values are
//! clamped into `[0, 1]` with a warning.

use std::path::Path;

use log::warn;

use super::{CorpusError, LineAnnotation, TranscriptToken, WordAnnotation};
use crate::geometry::{AxisBox, OrientedBox, Point};
use crate::lexicon::Word;

fn parse_error(file: &Path, line: usize, field: &str, message: impl Into<String>) -> CorpusError {
    CorpusError::Parse {
        file: file.to_path_buf(),
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
        .filter(|(_, f)| !f.is_empty() && !f[0].starts_with('#'))
}

fn parse_class(file: &Path, line: usize, raw: &str) -> Result<u32, CorpusError> {
    raw.parse()
        .map_err(|_| parse_error(file, line, "class", format!("{raw:?} is not a class id")))
}

fn parse_coord(file: &Path, line: usize, field: &str, raw: &str) -> Result<f64, CorpusError> {
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(parse_error(file, line, field, format!("{raw:?} is not a finite number"))),
    }
}

/// Clamps a center/extent box into the unit square: the center is pulled
/// inside first, then each edge is clipped.
pub fn clamp_unit(cx: f64, cy: f64, w: f64, h: f64) -> (f64, f64, f64, f64) {
    let inside = |c: f64, e: f64| c - e / 2.0 >= 0.0 && c + e / 2.0 <= 1.0;
    if inside(cx, w) && inside(cy, h) {
        return (cx, cy, w, h);
    }
    let cx = cx.clamp(0.0, 1.0);
    let cy = cy.clamp(0.0, 1.0);
    let left = (cx - w / 2.0).max(0.0);
    let right = (cx + w / 2.0).min(1.0);
    let top = (cy - h / 2.0).max(0.0);
    let bottom = (cy + h / 2.0).min(1.0);
    ((left + right) / 2.0, (top + bottom) / 2.0, right - left, bottom - top)
}

pub fn parse_words(text: &str, file: &Path) -> Result<Vec<WordAnnotation>, CorpusError> {
    const FIELDS: [&str; 4] = ["cx", "cy", "w", "h"];
    let mut out = Vec::new();
    for (line, f) in records(text) {
        if f.len() != 5 {
            return Err(parse_error(file, line, "record", format!("expected 5 fields, found {}", f.len())));
        }
        let class_id = parse_class(file, line, f[0])?;
        let mut v = [0.0; 4];
        for (i, name) in FIELDS.iter().enumerate() {
            v[i] = parse_coord(file, line, name, f[i + 1])?;
        }
        for (i, name) in ["w", "h"].iter().enumerate() {
            if v[2 + i] <= 0.0 {
                return Err(parse_error(file, line, name, "extent must be positive"));
            }
        }
        let clamped = clamp_unit(v[0], v[1], v[2], v[3]);
        if clamped != (v[0], v[1], v[2], v[3]) {
            warn!("{}:{line}: word box clamped to the page", file.display());
        }
        let (cx, cy, w, h) = clamped;
        let bbox = AxisBox::new(cx, cy, w, h)
            .map_err(|e| parse_error(file, line, "box", e.to_string()))?;
        out.push(WordAnnotation { bbox, class_id });
    }
    Ok(out)
}

pub fn parse_lines(text: &str, file: &Path) -> Result<Vec<LineAnnotation>, CorpusError> {
    const FIELDS: [&str; 8] = ["x1", "y1", "x2", "y2", "x3", "y3", "x4", "y4"];
    let mut out = Vec::new();
    for (line, f) in records(text) {
        if f.len() != 9 {
            return Err(parse_error(file, line, "record", format!("expected 9 fields, found {}", f.len())));
        }
        let class_id = parse_class(file, line, f[0])?;
        let mut c = [0.0; 8];
        let mut clamped = false;
        for (i, name) in FIELDS.iter().enumerate() {
            let v = parse_coord(file, line, name, f[i + 1])?;
            c[i] = v.clamp(0.0, 1.0);
            clamped |= c[i] != v;
        }
        if clamped {
            warn!("{}:{line}: line corners clamped to the page", file.display());
        }
        let corners = [
            Point::new(c[0], c[1]),
            Point::new(c[2], c[3]),
            Point::new(c[4], c[5]),
            Point::new(c[6], c[7]),
        ];
        let bbox = OrientedBox::new(corners)
            .map_err(|e| parse_error(file, line, "corners", e.to_string()))?;
        out.push(LineAnnotation { bbox, class_id });
    }
    Ok(out)
}

pub fn parse_token(raw: &str) -> Option<(Word, bool, bool)> {
    let mut s = raw;
    let damaged = s.len() >= 2 && s.starts_with('[') && s.ends_with(']');
    if damaged {
        s = &s[1..s.len() - 1];
    }
    let mut carry = false;
    if let Some(rest) = s.strip_suffix('~') {
        s = rest;
        carry = true;
    }
    if let Some(rest) = s.strip_prefix('~') {
        s = rest;
        carry = true;
    }
    Word::new(s).ok().map(|w| (w, damaged, carry))
}

pub fn parse_transcript(text: &str, file: &Path) -> Result<Vec<TranscriptToken>, CorpusError> {
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        for raw in l.split_whitespace() {
            let (word, damaged, carry) = parse_token(raw)
                .ok_or_else(|| parse_error(file, i + 1, "token", format!("{raw:?} has no word text")))?;
            out.push(TranscriptToken { word, damaged, carry, text_line: i + 1 });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("page.words.txt")
    }

    #[test]
    fn word_record() {
        let w = parse_words("0 0.5 0.5 0.1 0.05\n", p()).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].class_id, 0);
        assert_eq!(w[0].bbox, AxisBox::new(0.5, 0.5, 0.1, 0.05).unwrap());
    }

    #[test]
    fn word_record_clamped() {
        let w = parse_words("0 1.2 0.5 0.1 0.05", p()).unwrap();
        let b = w[0].bbox;
        assert!((b.right() - 1.0).abs() < 1e-12);
        assert!((b.left() - 0.95).abs() < 1e-12);
        assert!(b.w > 0.0);
    }

    #[test]
    fn word_errors_name_the_field() {
        let err = parse_words("0 0.5 0.5 0.1 0.05\n1 0.5 abc 0.1 0.1", p()).unwrap_err();
        match err {
            CorpusError::Parse { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field, "cy");
            }
            other => panic!("{other:?}"),
        }
        let err = parse_words("0 0.5 0.5 0.1", p()).unwrap_err();
        assert!(err.to_string().contains("page.words.txt:1"), "{err}");
        let err = parse_words("x 0.5 0.5 0.1 0.1", p()).unwrap_err();
        assert!(matches!(err, CorpusError::Parse { ref field, .. } if field == "class"));
        let err = parse_words("0 0.5 0.5 0 0.1", p()).unwrap_err();
        assert!(matches!(err, CorpusError::Parse { ref field, .. } if field == "w"));
    }

    #[test]
    fn line_record() {
        let l = parse_lines("0 0.1 0.2 0.9 0.25 0.9 0.3 0.1 0.25\n", Path::new("a.lines.txt")).unwrap();
        assert_eq!(l.len(), 1);
        assert_eq!(l[0].bbox.top_right(), Point::new(0.9, 0.25));
        let bad = parse_lines("0 0.1 0.2 0.9 0.25 0.1 0.3 0.9 0.25", Path::new("a.lines.txt"));
        assert!(matches!(bad, Err(CorpusError::Parse { ref field, .. }) if field == "corners"));
        let short = parse_lines("0 0.1 0.2 0.9", Path::new("a.lines.txt"));
        assert!(matches!(short, Err(CorpusError::Parse { ref field, .. }) if field == "record"));
    }

    #[test]
    fn tokens() {
        let t = parse_transcript("In nomine [domini]\npat~\n~ris et", Path::new("t")).unwrap();
        let words: Vec<&str> = t.iter().map(|t| t.word.as_str()).collect();
        assert_eq!(words, ["in", "nomine", "domini", "pat", "ris", "et"]);
        assert!(t[2].damaged && !t[2].carry);
        assert!(t[3].carry && t[4].carry && !t[3].damaged);
        assert_eq!(t[4].text_line, 3);
        assert!(parse_transcript("ok [] fine", Path::new("t")).is_err());
        assert!(parse_transcript("~", Path::new("t")).is_err());
        let (w, d, c) = parse_token("[reg~]").unwrap();
        assert_eq!((w.as_str(), d, c), ("reg", true, true));
    }
}
