//! Per-cell contribution maps and their maximum projection.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::likelihood::LikelihoodMap;
use crate::nn::{ForwardTrace, Network};
use crate::peaks::CenterRegion;
use crate::tensor::{Plane, Tensor};

/// Contribution maps of all detected cells, channel `k` belonging to cell
/// `ids[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionStack {
    pub ids: Vec<u32>,
    /// Rectified guided-backward maps, one per cell.
    pub raw: Vec<Plane>,
    /// Spatially disjoint maps after maximum projection.
    pub projected: Vec<Plane>,
}

impl ContributionStack {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Projected map of cell `u` (1-based id).
    pub fn channel(&self, u: u32) -> Option<&Plane> {
        self.ids.iter().position(|&id| id == u).map(|k| &self.projected[k])
    }
}

/// Output-shaped gradient equal to `y` inside the region and zero elsewhere.
pub fn seed_from_region(y: &LikelihoodMap, region: &CenterRegion) -> Tensor {
    let (w, h) = y.plane().dims();
    let mut seed = Tensor::zeros(&[1, h, w]);
    for &(x, yy) in &region.pixels {
        seed.data_mut()[yy * w + x] = y.get(x, yy);
    }
    seed
}

/// Guided backward pass from one centre region down to the input, with
/// negative input-level values clamped to zero.
pub fn cell_contribution(net: &Network, trace: &ForwardTrace, y: &LikelihoodMap, region: &CenterRegion) -> Result<Plane> {
    if let Some(&(x, yy)) = region.pixels.iter().find(|&&(x, yy)| x >= y.width() || yy >= y.height()) {
        return Err(Error::InvalidArgument(format!(
            "region {} pixel ({x}, {yy}) outside a {}x{} map",
            region.id,
            y.width(),
            y.height()
        )));
    }
    let g = net.backward_guided(trace, &seed_from_region(y, region))?;
    let g = Plane::from_tensor(&g)?;
    Ok(g.map(|v| if v > 0.0 { v } else { 0.0 }))
}

/// Per pixel, the channel with the largest value keeps it and every other
/// channel is set to zero. Ties go to the lowest channel; pixels where all
/// channels are zero stay zero everywhere.
pub fn max_projection(raw: &[Plane]) -> Vec<Plane> {
    let Some(first) = raw.first() else {
        return Vec::new();
    };
    let (w, h) = first.dims();
    assert!(raw.iter().all(|p| p.dims() == (w, h)), "contribution maps differ in shape");
    let mut out: Vec<Plane> = raw.iter().map(|_| Plane::zeros(w, h)).collect();
    for i in 0..w * h {
        let mut best = 0;
        for k in 1..raw.len() {
            if raw[k].data()[i] > raw[best].data()[i] {
                best = k;
            }
        }
        out[best].data_mut()[i] = raw[best].data()[i];
    }
    out
}

/// Contribution maps for every region from one shared trace. Per-cell passes
/// run in parallel; the result does not depend on scheduling.
pub fn contribution_stack(
    net: &Network,
    trace: &ForwardTrace,
    y: &LikelihoodMap,
    regions: &[CenterRegion],
) -> Result<ContributionStack> {
    let raw = regions
        .par_iter()
        .map(|r| cell_contribution(net, trace, y, r))
        .collect::<Result<Vec<_>>>()?;
    let projected = max_projection(&raw);
    Ok(ContributionStack {
        ids: regions.iter().map(|r| r.id).collect(),
        raw,
        projected,
    })
}
