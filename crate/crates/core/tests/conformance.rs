//! Every backend implementation runs through the same checks.

use std::io::Write;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use minuscule::backends::file::FileBackend;
use minuscule::backends::oracle::{NoiseScope, Oracle, OracleConfig, OracleEmbedder};
use minuscule::backends::process::{ProcessBackend, Role};
use minuscule::backends::{
    validate_candidates, validate_lines, validate_vector, validate_words, BackendError, Backends, Candidate,
    Classifier, DetectionRecord, Embedder, LineContext, LineDetector, ResponseRecord, WordContext, WordDetector,
};
use minuscule::deskew::LineCrop;
use minuscule::lexicon::{modified_hamming, Word};
use minuscule::pipeline::{transcribe, PipelineConfig};
use minuscule::postprocess::{extend_line, Detection};
use minuscule::synth::{render_page, SynthConfig, SynthPage};
use minuscule::vectorstore::euclidean;
use minuscule::{AxisBox, OrientedBox, Raster};

fn page() -> SynthPage {
    let cfg = SynthConfig { width: 640, height: 480, lines: (2, 3), words_per_line: (3, 5), ..SynthConfig::default() };
    render_page("conf", &cfg, 21)
}

/// Walks a page the way the pipeline does and checks every answer.
fn conformance(b: &Backends, page: &Raster, image_id: &str) {
    let lines = b.lines.detect_lines(page, image_id).unwrap();
    validate_lines(&lines).unwrap();
    assert_eq!(lines, b.lines.detect_lines(page, image_id).unwrap(), "line detection is not deterministic");
    for d in &lines {
        assert!((0.0..=1.0).contains(&d.confidence));
        for p in d.bbox.corners() {
            assert!((-0.01..=1.01).contains(&p.x) && (-0.01..=1.01).contains(&p.y), "{p:?}");
        }
    }
    let dim = b.embedder.dimension();
    for (li, d) in lines.iter().enumerate() {
        let Ok(ext) = extend_line(&d.bbox) else { continue };
        let crop = LineCrop::new(page, &ext).unwrap();
        let ctx = LineContext { image_id: image_id.into(), line_index: li, line: ext, frame: crop.frame };
        let words = b.words.detect_words(&crop.image, &ctx).unwrap();
        validate_words(&words).unwrap();
        assert_eq!(words, b.words.detect_words(&crop.image, &ctx).unwrap());
        for (wi, w) in words.iter().enumerate() {
            let wctx = WordContext {
                line: ctx.clone(),
                word_index: wi,
                page_box: crop.frame.crop_to_page(&w.bbox),
                crop_box: w.bbox,
            };
            let c = b.classifier.classify(&crop.image, &wctx).unwrap();
            validate_candidates(&c).unwrap();
            assert_eq!(c, b.classifier.classify(&crop.image, &wctx).unwrap());
            let v = b.embedder.embed(&crop.image, &wctx).unwrap();
            validate_vector(&v, dim).unwrap();
            assert_eq!(v, b.embedder.embed(&crop.image, &wctx).unwrap());
            assert_eq!(b.embedder.dimension(), dim);
        }
    }
}

fn oracle(p: &SynthPage, cfg: OracleConfig) -> Arc<Oracle> {
    Arc::new(Oracle::new(vec![p.doc.clone()], cfg).unwrap())
}

#[test]
fn oracle_conforms() {
    let p = page();
    conformance(&Backends::uniform(oracle(&p, OracleConfig::default())), &p.image, "conf");
    let noisy = OracleConfig {
        jitter_px: 3.0,
        drop_rate: 0.2,
        confidence_floor: 0.3,
        seed: 9,
        scope: NoiseScope::Both,
        ..OracleConfig::default()
    };
    conformance(&Backends::uniform(oracle(&p, noisy)), &p.image, "conf");
}

#[test]
fn oracle_rejects_bad_config() {
    let p = page();
    for cfg in [
        OracleConfig { drop_rate: 1.0, ..OracleConfig::default() },
        OracleConfig { jitter_px: -1.0, ..OracleConfig::default() },
        OracleConfig { confidence_floor: 2.0, ..OracleConfig::default() },
        OracleConfig { dimension: 0, ..OracleConfig::default() },
    ] {
        assert!(matches!(Oracle::new(vec![p.doc.clone()], cfg), Err(BackendError::Config(_))));
    }
}

/// Wraps a backend and keeps every answer as a replay record.
struct Recorder {
    inner: Arc<Oracle>,
    records: Mutex<Vec<ResponseRecord>>,
}

impl Recorder {
    fn push(&self, key: String, f: impl FnOnce(&mut ResponseRecord)) {
        let mut r = ResponseRecord { key: Some(key), ..ResponseRecord::default() };
        f(&mut r);
        self.records.lock().unwrap().push(r);
    }
}

impl LineDetector for Recorder {
    fn detect_lines(&self, page: &Raster, id: &str) -> Result<Vec<Detection<OrientedBox>>, BackendError> {
        let out = self.inner.detect_lines(page, id)?;
        self.push(id.into(), |r| {
            r.detections = Some(out.iter().map(|d| DetectionRecord::Line { obb: d.bbox.coords(), conf: d.confidence }).collect())
        });
        Ok(out)
    }
}

impl WordDetector for Recorder {
    fn detect_words(&self, crop: &Raster, ctx: &LineContext) -> Result<Vec<Detection<AxisBox>>, BackendError> {
        let out = self.inner.detect_words(crop, ctx)?;
        self.push(ctx.id(), |r| {
            r.detections = Some(
                out.iter()
                    .map(|d| DetectionRecord::Word { bbox: [d.bbox.cx, d.bbox.cy, d.bbox.w, d.bbox.h], conf: d.confidence })
                    .collect(),
            )
        });
        Ok(out)
    }
}

impl Classifier for Recorder {
    fn classify(&self, crop: &Raster, ctx: &WordContext) -> Result<Vec<Candidate>, BackendError> {
        let out = self.inner.classify(crop, ctx)?;
        let emb = self.inner.embed(crop, ctx)?;
        self.push(ctx.id(), |r| {
            r.candidates = Some(out.clone());
            r.vector = Some(emb.iter().map(|&x| x as f64).collect());
        });
        Ok(out)
    }
}

impl Embedder for Recorder {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, crop: &Raster, ctx: &WordContext) -> Result<Vec<f32>, BackendError> {
        self.inner.embed(crop, ctx)
    }
}

#[test]
fn file_replay_conforms_and_reproduces() {
    let p = page();
    let rec = Arc::new(Recorder { inner: oracle(&p, OracleConfig::default()), records: Mutex::new(Vec::new()) });
    let cfg = PipelineConfig { worker_count: 1, ..PipelineConfig::default() };
    let live = transcribe(&p.image, "conf", &Backends::uniform(rec.clone()), None, &cfg).unwrap();
    let jsonl: String = rec
        .records
        .lock()
        .unwrap()
        .iter()
        .map(|r| serde_json::to_string(r).unwrap() + "\n")
        .collect();
    let file = Arc::new(FileBackend::parse(&jsonl, "recording").unwrap());
    let replay = transcribe(&p.image, "conf", &Backends::uniform(file.clone()), None, &cfg).unwrap();
    assert_eq!(live.to_json(), replay.to_json());
    conformance(&Backends::uniform(file), &p.image, "conf");
}

#[test]
fn file_backend_rejects_bad_records() {
    let bad = [
        "{\"detections\":[]}",
        "{\"key\":\"a\",\"candidates\":[]}",
        "{\"key\":\"a\",\"candidates\":[{\"label\":\"et\",\"conf\":0.2},{\"label\":\"in\",\"conf\":0.5}]}",
        "{\"key\":\"a\",\"detections\":[{\"box\":[0.5,0.5,0.1,0.1],\"conf\":1.5}]}",
        "{\"key\":\"a\",\"vector\":[1.0]}\n{\"key\":\"b\",\"vector\":[1.0,2.0]}",
        "{\"key\":\"a\",\"vector\":[1.0]}\n{\"key\":\"a\",\"vector\":[2.0]}",
        "not json",
    ];
    for text in bad {
        assert!(FileBackend::parse(text, "t").is_err(), "{text}");
    }
    let e = FileBackend::parse("{\"key\":\"a\",\"vector\":[1.0]}\n\nnot json", "t").unwrap_err();
    assert!(matches!(e, BackendError::Record { line: 3, .. }), "{e}");
}

const STUB: &str = r#"while IFS= read -r l; do
  id=$(printf '%s' "$l" | sed 's/.*"id":\([0-9]*\).*/\1/')
  case "$l" in
    *detect_lines*) echo "{\"id\":$id,\"detections\":[{\"obb\":[0.1,0.4,0.9,0.42,0.9,0.52,0.1,0.5],\"conf\":0.9}]}";;
    *detect_words*) echo "{\"id\":$id,\"detections\":[{\"box\":[0.3,0.5,0.2,0.5],\"conf\":0.8},{\"box\":[0.7,0.5,0.2,0.5],\"conf\":0.7}]}";;
    *classify*) echo "{\"id\":$id,\"candidates\":[{\"label\":\"amen\",\"conf\":0.6},{\"label\":\"amem\",\"conf\":0.3}]}";;
    *embed*) echo "{\"id\":$id,\"vector\":[0.5,0.25,1.0]}";;
  esac
done"#;

fn stub() -> (tempfile::NamedTempFile, Arc<ProcessBackend>) {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(STUB.as_bytes()).unwrap();
    let cmd = format!("sh {}", f.path().display());
    let b = ProcessBackend::spawn(&cmd, Role::All, Duration::from_secs(20), 3).unwrap();
    (f, Arc::new(b))
}

#[test]
fn process_backend_conforms() {
    let p = page();
    let (_f, b) = stub();
    conformance(&Backends::uniform(b), &p.image, "conf");
}

#[test]
fn process_failures_are_typed() {
    let p = page();
    let spawn = |cmd: &str, role: Role, timeout: f64| ProcessBackend::spawn(cmd, role, Duration::from_secs_f64(timeout), 3).unwrap();

    let b = spawn("sleep 5", Role::All, 0.2);
    assert!(matches!(b.detect_lines(&p.image, "x"), Err(BackendError::Timeout(_))));
    assert!(matches!(b.detect_lines(&p.image, "x"), Err(BackendError::Exited(_))));

    let b = spawn("true", Role::All, 5.0);
    assert!(matches!(b.detect_lines(&p.image, "x"), Err(BackendError::Exited(_))));

    let b = spawn(r#"while read l; do echo '{"id":7,"detections":[]}'; done"#, Role::All, 5.0);
    assert!(matches!(b.detect_lines(&p.image, "x"), Err(BackendError::Protocol(_))));

    let b = spawn(r#"while read l; do echo 'garbage'; done"#, Role::All, 5.0);
    assert!(matches!(b.detect_lines(&p.image, "x"), Err(BackendError::Protocol(_))));

    let b = spawn(r#"while read l; do echo '{"id":0,"error":"out of memory"}'; done"#, Role::All, 5.0);
    assert!(matches!(b.detect_lines(&p.image, "x"), Err(BackendError::Remote(_))));

    let b = spawn("cat", Role::Classify, 5.0);
    assert!(matches!(b.detect_lines(&p.image, "x"), Err(BackendError::Config(_))));
}

#[test]
fn oracle_embedding_separates_similar_words() {
    // no similarity chains: every similar pair is its own merge class
    let vocab: Vec<Word> = ["nostri", "nostro", "amen", "amem", "dominus", "dominis", "et", "in", "deus", "rex", "sanctus", "pater"]
        .iter()
        .map(|s| Word::new(s).unwrap())
        .collect();
    for seed in 0..20 {
        let e = OracleEmbedder::new(&vocab, seed, 64);
        for a in &vocab {
            for b in &vocab {
                let near = euclidean(&e.embed_label(a), &e.embed_label(b)) < 1.0;
                assert_eq!(near, modified_hamming(a, b).is_similar(), "{a} {b} seed {seed}");
            }
        }
    }
}
