//! Weakly supervised cell instance segmentation.
//!
//! A U-Net regresses a cell-centroid likelihood map from an image. Each
//! detected centre region seeds a guided backward pass through the recorded
//! forward trace, giving a per-cell contribution map. The maps are made
//! spatially disjoint by per-pixel maximum projection and each cell is cut out
//! of the image with a seeded min-cut.

pub mod contribution;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod graphcut;
pub mod imageio;
pub mod labeling;
pub mod likelihood;
pub mod nn;
pub mod peaks;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use contribution::ContributionStack;
pub use detector::{Detector, NetConfig, TrainReport};
pub use error::{Error, Result};
pub use evaluation::{f_measure, mdice, SegScores};
pub use graphcut::{GraphCutParams, Modality, SaliencyMap};
pub use labeling::InstanceLabeling;
pub use likelihood::{CentroidAnnotation, LikelihoodMap};
pub use nn::{ForwardTrace, LayerSpec, Network};
pub use peaks::CenterRegion;
pub use pipeline::{segment_image, PipelineConfig, Segmentation};
pub use synth::{Scene, SceneSpec};
pub use tensor::{Plane, Tensor};
