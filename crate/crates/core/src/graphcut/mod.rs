//! Seeded min-cut segmentation of individual cells.

mod cell;
pub mod maxflow;

pub use cell::{
    background_map, build_cell_graph, fuse_masks, saliency_from_image, segment_all, segment_cell, CellGraph,
    CellSegmentation, Connectivity, Crop, GraphCutParams, Modality, SaliencyMap,
};
pub use maxflow::{max_flow, FlowGraph, MaxFlow};
