//! Explanation-concentration scores for 3D detections and a meta-classifier
//! that uses them to separate true from false positives.

pub mod attribution;
pub mod autodiff;
pub mod geometry;
pub mod io;
pub mod matching;
pub mod meta;
pub mod metrics;
pub mod par;
pub mod rng;
pub mod scene;
pub mod synth;
pub mod xc;

pub use attribution::{AttributionMap, AttributionTarget, IgOptions, Method};
pub use autodiff::{ModelGraph, ModelSpec, Tensor};
pub use geometry::{Box3D, GridMeta};
pub use scene::{Detection, GroundTruth, ObjectClass, PseudoImage};
