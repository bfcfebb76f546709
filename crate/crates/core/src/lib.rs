//! Transcription engine for handwritten medieval Latin pages.
//!
//! The pipeline detects oriented text lines on a page, resolves overlapping
//! detections, extends and deskews each line, detects words inside the
//! deskewed line, classifies every word crop and falls back to a
//! nearest-neighbour search over word embeddings when the classifier is not
//! confident. Model inference sits behind the traits in [`backends`].
//!
//! Besides the pipeline the crate builds training datasets from annotated
//! pages ([`corpus`]) and computes detection and recognition metrics
//! ([`eval`]).

pub mod backends;
pub mod corpus;
pub mod deskew;
pub mod eval;
pub mod geometry;
pub mod imaging;
pub mod lexicon;
pub mod pipeline;
pub mod postprocess;
pub mod synth;
pub mod vectorstore;

pub use geometry::{Angle, AxisBox, OrientedBox, Point};
pub use imaging::{PixelRect, Raster};
pub use lexicon::{Distance, Word};
