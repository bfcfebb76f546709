use std::collections::HashMap;
use std::fs;
use std::path::Path;

use log::warn;

use super::{
    vector_from_wire, BackendError, Candidate, Classifier, DetectionRecord, Embedder, LineContext, LineDetector,
    ResponseRecord, WordContext, WordDetector, DEFAULT_EMBEDDING_DIM,
};
use crate::geometry::{AxisBox, OrientedBox};
use crate::imaging::Raster;
use crate::postprocess::Detection;

/// Replays model outputs recorded as JSONL. Each record carries a `key`
/// (a context id) and one or more of `detections`, `candidates` and
/// `vector`, in the same shapes as the process protocol responses.
/// Line detections are keyed by image id, word detections by line context
/// id, candidates and vectors by word context id.
#[derive(Debug, Default)]
pub struct FileBackend {
    lines: HashMap<String, Vec<Detection<OrientedBox>>>,
    words: HashMap<String, Vec<Detection<AxisBox>>>,
    candidates: HashMap<String, Vec<Candidate>>,
    vectors: HashMap<String, Vec<f32>>,
    dim: usize,
}

impl FileBackend {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = fs::read_to_string(path).map_err(|source| BackendError::Io {
            context: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// `source` names the input in error messages.
    pub fn parse(text: &str, source: &str) -> Result<Self, BackendError> {
        let mut out = FileBackend::default();
        let mut dim = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| BackendError::Record { path: source.to_string(), line, message };
            if raw.trim().is_empty() {
                continue;
            }
            let rec: ResponseRecord = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
            let key = rec.key.ok_or_else(|| err("record has no `key`".into()))?;
            if let Some(e) = rec.error {
                return Err(err(format!("record carries an error: {e}")));
            }
            if let Some(dets) = rec.detections {
                let obb = dets.iter().filter(|d| matches!(d, DetectionRecord::Line { .. })).count();
                if obb == dets.len() {
                    let v = dets.into_iter().map(DetectionRecord::into_line).collect::<Result<Vec<_>, _>>();
                    insert(&mut out.lines, &key, v.map_err(&err)?).map_err(&err)?;
                } else if obb == 0 {
                    let v = dets.into_iter().map(DetectionRecord::into_word).collect::<Result<Vec<_>, _>>();
                    insert(&mut out.words, &key, v.map_err(&err)?).map_err(&err)?;
                } else {
                    return Err(err("record mixes line and word detections".into()));
                }
            }
            if let Some(c) = rec.candidates {
                super::validate_candidates(&c).map_err(|e| err(e.to_string()))?;
                insert(&mut out.candidates, &key, c).map_err(&err)?;
            }
            if let Some(v) = rec.vector {
                let v = vector_from_wire(&v).map_err(&err)?;
                let d = *dim.get_or_insert(v.len());
                if v.len() != d {
                    return Err(err(format!("vector has {} components, earlier records have {d}", v.len())));
                }
                insert(&mut out.vectors, &key, v).map_err(&err)?;
            }
        }
        out.dim = dim.unwrap_or(DEFAULT_EMBEDDING_DIM);
        Ok(out)
    }
}

fn insert<T>(map: &mut HashMap<String, T>, key: &str, value: T) -> Result<(), String> {
    if map.insert(key.to_string(), value).is_some() {
        return Err(format!("duplicate record for key {key:?}"));
    }
    Ok(())
}

fn lookup<T: Clone + Default>(map: &HashMap<String, T>, key: &str, what: &str) -> T {
    match map.get(key) {
        Some(v) => v.clone(),
        None => {
            warn!("no recorded {what} for {key}");
            T::default()
        }
    }
}

impl LineDetector for FileBackend {
    fn detect_lines(&self, _page: &Raster, image_id: &str) -> Result<Vec<Detection<OrientedBox>>, BackendError> {
        Ok(lookup(&self.lines, image_id, "line detections"))
    }
}

impl WordDetector for FileBackend {
    fn detect_words(&self, _crop: &Raster, ctx: &LineContext) -> Result<Vec<Detection<AxisBox>>, BackendError> {
        Ok(lookup(&self.words, &ctx.id(), "word detections"))
    }
}

impl Classifier for FileBackend {
    /// An unknown word yields no candidates, which the pipeline rejects
    /// for that line.
    fn classify(&self, _crop: &Raster, ctx: &WordContext) -> Result<Vec<Candidate>, BackendError> {
        Ok(lookup(&self.candidates, &ctx.id(), "candidates"))
    }
}

impl Embedder for FileBackend {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, _crop: &Raster, ctx: &WordContext) -> Result<Vec<f32>, BackendError> {
        Ok(lookup(&self.vectors, &ctx.id(), "embedding"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RECORDS: &str = r#"
{"key":"p1","detections":[{"obb":[0.1,0.1,0.9,0.1,0.9,0.2,0.1,0.2],"conf":0.9},{"obb":[0.1,0.3,0.9,0.3,0.9,0.4,0.1,0.4],"conf":0.8}]}
{"key":"p1/l0","detections":[{"box":[0.2,0.5,0.1,0.8],"conf":0.7}]}
{"key":"p1/l0/w0","candidates":[{"label":"et","conf":0.9}],"vector":[0.5,0.25]}
"#;

    #[test]
    fn replays_records() {
        let b = FileBackend::parse(RECORDS, "rec.jsonl").unwrap();
        let page = Raster::filled(4, 4, 1, 255).unwrap();
        assert_eq!(b.detect_lines(&page, "p1").unwrap().len(), 2);
        assert!(b.detect_lines(&page, "p2").unwrap().is_empty());
        assert_eq!(b.dimension(), 2);
    }

    #[test]
    fn bad_records_name_their_line() {
        let bad = "{\"key\":\"a\",\"candidates\":[{\"label\":\"et\",\"conf\":0.5}]}\n{\"key\":\"b\",\"detections\":[{\"box\":[0.5,0.5,0.1,0.1],\"conf\":1.3}]}";
        match FileBackend::parse(bad, "x.jsonl").unwrap_err() {
            BackendError::Record { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("1.3"), "{message}");
            }
            e => panic!("{e}"),
        }
        assert!(FileBackend::parse("{\"detections\":[]}", "x").is_err());
        assert!(FileBackend::parse("not json", "x").is_err());
        let dup = "{\"key\":\"a\",\"vector\":[1]}\n{\"key\":\"a\",\"vector\":[2]}";
        assert!(FileBackend::parse(dup, "x").is_err());
        let dims = "{\"key\":\"a\",\"vector\":[1]}\n{\"key\":\"b\",\"vector\":[2,3]}";
        assert!(FileBackend::parse(dims, "x").is_err());
    }
}
