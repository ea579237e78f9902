//! Radial-ray graph-cut segmentation of roughly star-shaped dark lesions,
//! with phantom generation and an evaluation harness.

pub mod error;
pub mod evaluation;
pub mod harness;
pub mod imaging;
pub mod maxflow;
pub mod phantom;
pub mod raygraph;
pub mod segmenter;

pub use error::{Error, ErrorClass, Result};
pub use imaging::{BinaryMask, GrayImage, Point2D, Polygon};
pub use segmenter::{segment, SeedInput, SegmentParams, SegmentationResult};
