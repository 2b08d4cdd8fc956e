//! End-to-end segmentation of one image with a trained detector.

use crate::contribution::{cell_contribution, max_projection, ContributionStack};
use crate::detector::{Detector, TileTrace};
use crate::error::Result;
use crate::graphcut::{fuse_masks, saliency_from_image, segment_all, CellSegmentation, GraphCutParams, Modality};
use crate::labeling::InstanceLabeling;
use crate::likelihood::LikelihoodMap;
use crate::peaks::{detect_centers, CenterRegion, DEFAULT_THRESHOLD};
use crate::tensor::Plane;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub threshold: f64,
    pub modality: Modality,
    pub graphcut: GraphCutParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            threshold: DEFAULT_THRESHOLD,
            modality: Modality::PhaseContrast,
            graphcut: GraphCutParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    pub likelihood: LikelihoodMap,
    pub regions: Vec<CenterRegion>,
    pub stack: ContributionStack,
    pub cells: Vec<CellSegmentation>,
    pub labels: InstanceLabeling,
    pub warnings: Vec<String>,
}

/// Tile whose centre is nearest the region centroid, ties to the first.
fn nearest_tile<'a>(tiles: &'a [TileTrace], tile: usize, region: &CenterRegion) -> &'a TileTrace {
    let half = tile as f64 / 2.0 - 0.5;
    let d = |t: &TileTrace| {
        let dx = t.x0 as f64 + half - region.centroid.0;
        let dy = t.y0 as f64 + half - region.centroid.1;
        dx * dx + dy * dy
    };
    tiles
        .iter()
        .min_by(|a, b| d(a).total_cmp(&d(b)))
        .expect("tiling produced no tiles")
}

/// Contribution map of one region traced through a single tile and placed
/// back in image coordinates. Region pixels outside the tile are dropped.
fn tiled_contribution(
    det: &Detector,
    tiles: &[TileTrace],
    y: &LikelihoodMap,
    region: &CenterRegion,
) -> Result<Plane> {
    let tile = det.input_size;
    let t = nearest_tile(tiles, tile, region);
    let inside = |&&(x, yy): &&(usize, usize)| x >= t.x0 && yy >= t.y0 && x < t.x0 + tile && yy < t.y0 + tile;
    let local = CenterRegion {
        id: region.id,
        pixels: region.pixels.iter().filter(inside).map(|&(x, yy)| (x - t.x0, yy - t.y0)).collect(),
        peak: region.peak,
        centroid: (region.centroid.0 - t.x0 as f64, region.centroid.1 - t.y0 as f64),
    };
    let y_local = LikelihoodMap(y.plane().crop(t.x0, t.y0, tile, tile));
    let g = cell_contribution(&det.net, &t.trace, &y_local, &local)?;
    let mut full = Plane::zeros(y.width(), y.height());
    for ty in 0..tile {
        for tx in 0..tile {
            full.set(t.x0 + tx, t.y0 + ty, g.get(tx, ty));
        }
    }
    Ok(full)
}

/// Likelihood → centre regions → contribution maps → per-cell min-cut →
/// fused labeling. Images larger than the network input are processed in
/// overlapping tiles.
pub fn segment_image(det: &Detector, image: &Plane, cfg: &PipelineConfig) -> Result<Segmentation> {
    use rayon::prelude::*;

    let saliency = saliency_from_image(image, cfg.modality)?;
    let whole = image.dims() == (det.input_size, det.input_size);
    let (likelihood, tiles, trace) = if whole {
        let (y, trace) = det.infer(image)?;
        (y, Vec::new(), Some(trace))
    } else {
        let (y, tiles) = det.infer_tiled(image)?;
        (y, tiles, None)
    };
    let regions = detect_centers(&likelihood, cfg.threshold);
    let raw = regions
        .par_iter()
        .map(|r| match &trace {
            Some(tr) => cell_contribution(&det.net, tr, &likelihood, r),
            None => tiled_contribution(det, &tiles, &likelihood, r),
        })
        .collect::<Result<Vec<_>>>()?;
    let projected = max_projection(&raw);
    let stack = ContributionStack {
        ids: regions.iter().map(|r| r.id).collect(),
        raw,
        projected,
    };

    let mut warnings = Vec::new();
    if regions.is_empty() {
        warnings.push("no cell centres detected".to_string());
    }
    let cells = segment_all(image, &saliency, &stack, &cfg.graphcut)?;
    for c in &cells {
        if c.empty_seed {
            warnings.push(format!("cell {} has no foreground seed; left unsegmented", c.id));
        }
        if c.seed_conflicts > 0 {
            warnings.push(format!("cell {}: {} pixels seeded both ways, kept as foreground", c.id, c.seed_conflicts));
        }
    }
    let masks: Vec<Vec<bool>> = cells.iter().map(|c| c.mask.clone()).collect();
    let labels = fuse_masks(&masks, &stack, image.width(), image.height())?;
    Ok(Segmentation {
        likelihood,
        regions,
        stack,
        cells,
        labels,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::NetConfig;

    fn small_detector() -> Detector {
        Detector::untrained(&NetConfig {
            depth: 1,
            base_channels: 2,
            input_size: 8,
            ..NetConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn blank_image_with_high_threshold_is_empty() {
        let det = small_detector();
        let cfg = PipelineConfig {
            threshold: 2.0,
            ..PipelineConfig::default()
        };
        let s = segment_image(&det, &Plane::filled(8, 8, 0.5), &cfg).unwrap();
        assert!(s.regions.is_empty());
        assert!(s.labels.labels().iter().all(|&l| l == 0));
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn tiled_image_runs() {
        let det = small_detector();
        let img = Plane::from_fn(14, 11, |x, y| ((x * 7 + y * 3) % 10) as f64 / 10.0);
        let cfg = PipelineConfig {
            threshold: -1.0,
            ..PipelineConfig::default()
        };
        let s = segment_image(&det, &img, &cfg).unwrap();
        assert_eq!(s.likelihood.plane().dims(), (14, 11));
        assert_eq!(s.regions.len(), 1);
        assert_eq!(s.labels.dims(), (14, 11));
    }
}
