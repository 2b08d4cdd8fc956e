use std::str::FromStr;

use rayon::prelude::*;

use crate::contribution::ContributionStack;
use crate::error::{Error, Result};
use crate::graphcut::maxflow::{max_flow, FlowGraph};
use crate::labeling::InstanceLabeling;
use crate::tensor::Plane;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphCutParams {
    /// Weight of the saliency data term.
    pub lambda: f64,
    /// Weight of the contrast-sensitive pairwise term.
    pub beta: f64,
    /// Intensity scale of the pairwise term; `None` uses the standard
    /// deviation of the image inside the working crop.
    pub sigma_c: Option<f64>,
    /// Seeds are pixels above this fraction of their map's maximum.
    pub seed_fraction: f64,
    /// Dilation of the foreground-seed bounding box, pixels.
    pub crop_margin: usize,
    pub connectivity: Connectivity,
}

impl Default for GraphCutParams {
    fn default() -> Self {
        GraphCutParams {
            lambda: 1.0,
            beta: 50.0,
            sigma_c: None,
            seed_fraction: 0.1,
            crop_margin: 10,
            connectivity: Connectivity::Four,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    /// Cells darker than the background: saliency is the inverted image.
    PhaseContrast,
    /// Saliency is the image itself.
    Direct,
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Modality> {
        match s {
            "phase-contrast" => Ok(Modality::PhaseContrast),
            "direct" => Ok(Modality::Direct),
            other => Err(Error::UnknownModality(other.to_string())),
        }
    }
}

impl Modality {
    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::PhaseContrast => "phase-contrast",
            Modality::Direct => "direct",
        }
    }
}

/// Data-term source in `[0, 1]`: high where a pixel looks like a cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap(pub Plane);

pub fn saliency_from_image(image: &Plane, modality: Modality) -> Result<SaliencyMap> {
    if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument("saliency needs an image in [0, 1]".into()));
    }
    Ok(SaliencyMap(match modality {
        Modality::PhaseContrast => image.map(|v| 1.0 - v),
        Modality::Direct => image.clone(),
    }))
}

/// Rectangle `x0..x0+w`, `y0..y0+h` in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crop {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

/// Flow graph of one cell over its working crop. Pixel `(x, y)` of the crop
/// is node `y * w + x`; the source and sink follow the pixels.
#[derive(Debug, Clone)]
pub struct CellGraph {
    pub graph: FlowGraph,
    pub crop: Crop,
    pub fg_seeds: Vec<bool>,
    pub bg_seeds: Vec<bool>,
    /// Pixels that were above both seed thresholds (resolved to foreground).
    pub conflicts: usize,
}

fn seed_mask(map: &Plane, fraction: f64) -> Vec<bool> {
    let max = map.max();
    if !(max > 0.0) {
        return vec![false; map.data().len()];
    }
    let t = fraction * max;
    map.data().iter().map(|&v| v > t).collect()
}

fn neighbour_offsets(c: Connectivity) -> &'static [(isize, isize, f64)] {
    const FOUR: [(isize, isize, f64); 2] = [(1, 0, 1.0), (0, 1, 1.0)];
    const EIGHT: [(isize, isize, f64); 4] = [
        (1, 0, 1.0),
        (0, 1, 1.0),
        (1, 1, std::f64::consts::FRAC_1_SQRT_2),
        (-1, 1, std::f64::consts::FRAC_1_SQRT_2),
    ];
    match c {
        Connectivity::Four => &FOUR,
        Connectivity::Eight => &EIGHT,
    }
}

fn pairwise_weight(beta: f64, sigma_c: f64, a: f64, b: f64) -> f64 {
    let d2 = (a - b) * (a - b);
    if sigma_c > 0.0 {
        beta * (-d2 / (2.0 * sigma_c * sigma_c)).exp()
    } else if d2 == 0.0 {
        beta
    } else {
        0.0
    }
}

/// Build the min-cut graph separating cell `fg` from background `bg`.
///
/// Foreground seeds get infinite source arcs, background seeds infinite
/// sink arcs, and the remaining pixels a saliency data term. The graph
/// covers the foreground seeds' bounding box dilated by the crop margin;
/// pixels just outside the crop act as background seeds through the
/// pairwise arcs that would connect to them.
pub fn build_cell_graph(
    image: &Plane,
    saliency: &SaliencyMap,
    fg: &Plane,
    bg: &Plane,
    params: &GraphCutParams,
) -> Result<CellGraph> {
    let dims = image.dims();
    if saliency.0.dims() != dims || fg.dims() != dims || bg.dims() != dims {
        return Err(Error::InvalidArgument("graph-cut maps differ in shape".into()));
    }
    let (iw, ih) = dims;
    let fg_full = seed_mask(fg, params.seed_fraction);
    let bg_full = seed_mask(bg, params.seed_fraction);

    let (mut x_lo, mut y_lo, mut x_hi, mut y_hi) = (iw, ih, 0, 0);
    for (i, _) in fg_full.iter().enumerate().filter(|(_, &s)| s) {
        let (x, y) = (i % iw, i / iw);
        x_lo = x_lo.min(x);
        y_lo = y_lo.min(y);
        x_hi = x_hi.max(x);
        y_hi = y_hi.max(y);
    }
    let crop = if x_lo > x_hi {
        Crop { x0: 0, y0: 0, w: 0, h: 0 }
    } else {
        let m = params.crop_margin;
        let x0 = x_lo.saturating_sub(m);
        let y0 = y_lo.saturating_sub(m);
        Crop {
            x0,
            y0,
            w: (x_hi + m + 1).min(iw) - x0,
            h: (y_hi + m + 1).min(ih) - y0,
        }
    };
    let n = crop.w * crop.h;
    let (s, t) = (n, n + 1);
    let mut graph = FlowGraph::new(n + 2, s, t);
    let mut fg_seeds = vec![false; n];
    let mut bg_seeds = vec![false; n];
    let mut conflicts = 0;

    let sigma_c = params.sigma_c.unwrap_or_else(|| {
        let vals: Vec<f64> = (0..n).map(|i| image.get(crop.x0 + i % crop.w, crop.y0 + i / crop.w)).collect();
        let mean = vals.iter().sum::<f64>() / n.max(1) as f64;
        (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt()
    });

    for cy in 0..crop.h {
        for cx in 0..crop.w {
            let (x, y) = (crop.x0 + cx, crop.y0 + cy);
            let i = cy * crop.w + cx;
            let gi = y * iw + x;
            let is_fg = fg_full[gi];
            let is_bg = bg_full[gi];
            if is_fg && is_bg {
                conflicts += 1;
            }
            if is_fg {
                fg_seeds[i] = true;
                graph.add_arc(s, i, f64::INFINITY);
            } else if is_bg {
                bg_seeds[i] = true;
                graph.add_arc(i, t, f64::INFINITY);
            } else {
                let sal = saliency.0.get(x, y);
                graph.add_arc(s, i, params.lambda * sal);
                graph.add_arc(i, t, params.lambda * (1.0 - sal));
            }
        }
    }

    let offsets = neighbour_offsets(params.connectivity);
    for cy in 0..crop.h {
        for cx in 0..crop.w {
            let (x, y) = (crop.x0 + cx, crop.y0 + cy);
            let i = cy * crop.w + cx;
            for &(dx, dy, scale) in offsets {
                // Each undirected pair once, plus mirrored offsets for arcs
                // leaving the crop.
                for (sx, sy) in [(dx, dy), (-dx, -dy)] {
                    let (nx, ny) = (x as isize + sx, y as isize + sy);
                    if nx < 0 || ny < 0 || nx >= iw as isize || ny >= ih as isize {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    let w = scale * pairwise_weight(params.beta, sigma_c, image.get(x, y), image.get(nx, ny));
                    let inside = nx >= crop.x0 && ny >= crop.y0 && nx < crop.x0 + crop.w && ny < crop.y0 + crop.h;
                    if inside {
                        if (sx, sy) == (dx, dy) {
                            let j = (ny - crop.y0) * crop.w + (nx - crop.x0);
                            graph.add_arc(i, j, w);
                            graph.add_arc(j, i, w);
                        }
                    } else {
                        graph.add_arc(i, t, w);
                    }
                }
            }
        }
    }
    Ok(CellGraph {
        graph,
        crop,
        fg_seeds,
        bg_seeds,
        conflicts,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSegmentation {
    pub id: u32,
    /// Full-image mask.
    pub mask: Vec<bool>,
    pub empty_seed: bool,
    pub seed_conflicts: usize,
    pub flow: f64,
    /// Full-image hard foreground seeds, for auditing.
    pub fg_seeds: Vec<bool>,
}

/// Maximum over all channels except `u`, each scaled by its own maximum so
/// weak cells still seed the background.
pub fn background_map(stack: &ContributionStack, u: u32) -> Result<Plane> {
    let k_u = stack
        .ids
        .iter()
        .position(|&id| id == u)
        .ok_or_else(|| Error::InvalidArgument(format!("no contribution channel for cell {u}")))?;
    let (w, h) = stack.projected[k_u].dims();
    let mut bg = Plane::zeros(w, h);
    for (k, c) in stack.projected.iter().enumerate() {
        let max = c.max();
        if k == k_u || !(max > 0.0) {
            continue;
        }
        for (b, &v) in bg.data_mut().iter_mut().zip(c.data()) {
            *b = b.max(v / max);
        }
    }
    Ok(bg)
}

/// Min-cut segmentation of cell `u` seeded by its projected contribution map.
pub fn segment_cell(
    image: &Plane,
    saliency: &SaliencyMap,
    stack: &ContributionStack,
    u: u32,
    params: &GraphCutParams,
) -> Result<CellSegmentation> {
    let fg = stack
        .channel(u)
        .ok_or_else(|| Error::InvalidArgument(format!("cell {u} not in contribution stack")))?;
    let bg = background_map(stack, u)?;
    let cg = build_cell_graph(image, saliency, fg, &bg, params)?;
    let (iw, ih) = image.dims();
    let mut mask = vec![false; iw * ih];
    let mut fg_seeds = vec![false; iw * ih];
    let empty_seed = !cg.fg_seeds.iter().any(|&s| s);
    let mut flow = 0.0;
    if !empty_seed {
        let result = max_flow(&cg.graph);
        flow = result.value;
        let c = cg.crop;
        for cy in 0..c.h {
            for cx in 0..c.w {
                let i = cy * c.w + cx;
                let gi = (c.y0 + cy) * iw + c.x0 + cx;
                mask[gi] = result.source_side[i];
                fg_seeds[gi] = cg.fg_seeds[i];
            }
        }
    }
    Ok(CellSegmentation {
        id: u,
        mask,
        empty_seed,
        seed_conflicts: cg.conflicts,
        flow,
        fg_seeds,
    })
}

/// Segment every cell in the stack; cells run in parallel, output is in
/// stack order.
pub fn segment_all(
    image: &Plane,
    saliency: &SaliencyMap,
    stack: &ContributionStack,
    params: &GraphCutParams,
) -> Result<Vec<CellSegmentation>> {
    stack
        .ids
        .par_iter()
        .map(|&u| segment_cell(image, saliency, stack, u, params))
        .collect()
}

/// Combine per-cell masks (`masks[k]` belongs to `stack.ids[k]`). Pixels
/// claimed by several cells go to the one with the largest projected
/// contribution, ties to the lowest id.
pub fn fuse_masks(masks: &[Vec<bool>], stack: &ContributionStack, width: usize, height: usize) -> Result<InstanceLabeling> {
    if masks.len() != stack.len() {
        return Err(Error::InvalidArgument(format!(
            "{} masks for {} contribution channels",
            masks.len(),
            stack.len()
        )));
    }
    if masks.iter().any(|m| m.len() != width * height) {
        return Err(Error::InvalidArgument("mask shape does not match the image".into()));
    }
    let mut labels = InstanceLabeling::empty(width, height, stack.ids.iter().copied().max().unwrap_or(0) as usize);
    for i in 0..width * height {
        let mut winner: Option<(u32, f64)> = None;
        for (k, m) in masks.iter().enumerate() {
            if !m[i] {
                continue;
            }
            let id = stack.ids[k];
            let c = stack.projected[k].data()[i];
            winner = match winner {
                None => Some((id, c)),
                Some((wid, wc)) if c > wc || (c == wc && id < wid) => Some((id, c)),
                keep => keep,
            };
        }
        if let Some((id, _)) = winner {
            labels.labels_mut()[i] = id;
        }
    }
    Ok(labels)
}
