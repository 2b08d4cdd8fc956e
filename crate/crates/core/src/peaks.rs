//! Centre-region detection on a likelihood map and point matching.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::likelihood::{CentroidAnnotation, LikelihoodMap};

pub const DEFAULT_THRESHOLD: f64 = 0.3;
/// Components with fewer pixels are treated as noise.
pub const MIN_REGION_PIXELS: usize = 2;

/// One detected cell centre: an 8-connected set of pixels above threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterRegion {
    /// 1-based cell id, assigned in raster scan order.
    pub id: u32,
    /// `(x, y)` pixel coordinates.
    pub pixels: Vec<(usize, usize)>,
    pub peak: f64,
    /// Likelihood-weighted mean position.
    pub centroid: (f64, f64),
}

impl CenterRegion {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

/// Label the 8-connected components of `{ y > threshold }`, in raster order
/// of each component's first pixel. Components smaller than
/// [`MIN_REGION_PIXELS`] are dropped and ids stay consecutive.
pub fn detect_centers(y: &LikelihoodMap, threshold: f64) -> Vec<CenterRegion> {
    let plane = y.plane();
    let (w, h) = plane.dims();
    let above = |x: usize, yy: usize| plane.get(x, yy) > threshold;
    let mut visited = vec![false; w * h];
    let mut regions = Vec::new();
    let mut queue = VecDeque::new();
    for sy in 0..h {
        for sx in 0..w {
            if visited[sy * w + sx] || !above(sx, sy) {
                continue;
            }
            visited[sy * w + sx] = true;
            queue.push_back((sx, sy));
            let mut pixels = Vec::new();
            while let Some((x, yy)) = queue.pop_front() {
                pixels.push((x, yy));
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let nx = x as isize + dx;
                        let ny = yy as isize + dy;
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if !visited[ny * w + nx] && above(nx, ny) {
                            visited[ny * w + nx] = true;
                            queue.push_back((nx, ny));
                        }
                    }
                }
            }
            if pixels.len() < MIN_REGION_PIXELS {
                continue;
            }
            pixels.sort_unstable_by_key(|&(x, yy)| (yy, x));
            let mut peak = f64::NEG_INFINITY;
            let (mut sx_acc, mut sy_acc, mut wsum) = (0.0, 0.0, 0.0);
            for &(x, yy) in &pixels {
                let v = plane.get(x, yy);
                peak = peak.max(v);
                sx_acc += v * x as f64;
                sy_acc += v * yy as f64;
                wsum += v;
            }
            regions.push(CenterRegion {
                id: regions.len() as u32 + 1,
                pixels,
                peak,
                centroid: (sx_acc / wsum, sy_acc / wsum),
            });
        }
    }
    regions
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub counts: MatchCounts,
    /// `(pred index, truth index, distance)` for every matched pair.
    pub pairs: Vec<(usize, usize, f64)>,
}

/// Greedy one-to-one matching of predicted centroids to truth points:
/// candidate pairs within `radius` are taken in increasing distance order
/// (ties by pred index, then truth index) while both ends are free.
pub fn match_points(pred: &[(f64, f64)], truth: &[(f64, f64)], radius: f64) -> Matching {
    let mut cand = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            let d = (p.0 - t.0).hypot(p.1 - t.1);
            if d <= radius {
                cand.push((d, i, j));
            }
        }
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_used = vec![false; pred.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut pairs = Vec::new();
    for (d, i, j) in cand {
        if !pred_used[i] && !truth_used[j] {
            pred_used[i] = true;
            truth_used[j] = true;
            pairs.push((i, j, d));
        }
    }
    let tp = pairs.len();
    Matching {
        counts: MatchCounts {
            tp,
            fp: pred.len() - tp,
            fn_: truth.len() - tp,
        },
        pairs,
    }
}

pub fn match_detections(pred: &[CenterRegion], truth: &CentroidAnnotation, radius: f64) -> Matching {
    let p: Vec<(f64, f64)> = pred.iter().map(|r| r.centroid).collect();
    match_points(&p, &truth.points, radius)
}

/// `u,cx,cy,peak,area` rows with a header line.
pub fn detections_csv(regions: &[CenterRegion]) -> String {
    let mut s = String::from("u,cx,cy,peak,area\n");
    for r in regions {
        let _ = writeln!(s, "{},{},{},{},{}", r.id, r.centroid.0, r.centroid.1, r.peak, r.area());
    }
    s
}
