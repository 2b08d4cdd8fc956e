//! Centroid annotations and their Gaussian likelihood-map targets.
//!
//! Pixel `(i, j)` (column, row) has its centre at real coordinates
//! `(x, y) = (i, j)`, so an image `w` pixels wide covers `x ∈ [-0.5, w - 0.5)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Plane;

/// Kernels are cut off beyond this many standard deviations.
pub const TRUNCATE_SIGMAS: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CentroidAnnotation {
    pub image_id: String,
    pub points: Vec<(f64, f64)>,
}

impl CentroidAnnotation {
    pub fn new(image_id: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        CentroidAnnotation {
            image_id: image_id.into(),
            points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn check_bounds(&self, width: usize, height: usize) -> Result<()> {
        for &(x, y) in &self.points {
            if !in_bounds(x, y, width, height) {
                return Err(Error::OutOfBounds { x, y, width, height });
            }
        }
        Ok(())
    }
}

pub fn in_bounds(x: f64, y: f64, width: usize, height: usize) -> bool {
    x >= -0.5 && y >= -0.5 && x < width as f64 - 0.5 && y < height as f64 - 0.5
}

/// Index of the pixel whose centre is nearest to `v`.
pub fn nearest_pixel(v: f64) -> usize {
    (v + 0.5).floor().max(0.0) as usize
}

/// Single-channel map in `[0, 1]`: the regression target and network output.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodMap(pub Plane);

impl LikelihoodMap {
    pub fn plane(&self) -> &Plane {
        &self.0
    }

    pub fn into_plane(self) -> Plane {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.0.get(x, y)
    }
}

/// Render one Gaussian per centroid, combining overlaps by maximum.
///
/// Each kernel is scaled so that it reaches exactly 1 at the centroid's
/// nearest pixel.
pub fn render_likelihood(ann: &CentroidAnnotation, width: usize, height: usize, sigma: f64) -> Result<LikelihoodMap> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    ann.check_bounds(width, height)?;
    let mut map = Plane::zeros(width, height);
    let two_s2 = 2.0 * sigma * sigma;
    let cutoff = TRUNCATE_SIGMAS * sigma;
    for &(cx, cy) in &ann.points {
        let (px, py) = (nearest_pixel(cx), nearest_pixel(cy));
        let peak_d2 = (px as f64 - cx).powi(2) + (py as f64 - cy).powi(2);
        let x_lo = (cx - cutoff).ceil().max(0.0) as usize;
        let x_hi = ((cx + cutoff).floor() as usize).min(width - 1);
        let y_lo = (cy - cutoff).ceil().max(0.0) as usize;
        let y_hi = ((cy + cutoff).floor() as usize).min(height - 1);
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                if d2 > cutoff * cutoff {
                    continue;
                }
                let v = if (x, y) == (px, py) {
                    1.0
                } else {
                    (-(d2 - peak_d2) / two_s2).exp().min(1.0)
                };
                if v > map.get(x, y) {
                    map.set(x, y, v);
                }
            }
        }
    }
    Ok(LikelihoodMap(map))
}

/// Parse an annotation CSV: one `x,y` pair per line, with an optional
/// leading `x,y` header. Blank lines are skipped.
pub fn parse_annotations(text: &str, image_id: &str, path: &Path, width: usize, height: usize) -> Result<CentroidAnnotation> {
    let mut points = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if idx == 0 && line.replace(' ', "").eq_ignore_ascii_case("x,y") {
            continue;
        }
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let mut fields = line.split(',').map(str::trim);
        let (Some(xs), Some(ys), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(bad(format!("expected two fields, got {line:?}")));
        };
        let x: f64 = xs.parse().map_err(|_| bad(format!("invalid number {xs:?}")))?;
        let y: f64 = ys.parse().map_err(|_| bad(format!("invalid number {ys:?}")))?;
        if !in_bounds(x, y, width, height) {
            return Err(Error::OutOfBounds { x, y, width, height });
        }
        points.push((x, y));
    }
    Ok(CentroidAnnotation::new(image_id, points))
}

/// Load an annotation CSV for a `width`x`height` image. The image id is the
/// file stem.
pub fn load_annotations(path: impl AsRef<Path>, width: usize, height: usize) -> Result<CentroidAnnotation> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_annotations(&text, &id, path, width, height)
}

pub fn write_annotations(path: impl AsRef<Path>, ann: &CentroidAnnotation) -> Result<()> {
    let mut out = String::from("x,y\n");
    for &(x, y) in &ann.points {
        out.push_str(&format!("{x},{y}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(points: &[(f64, f64)]) -> CentroidAnnotation {
        CentroidAnnotation::new("t", points.to_vec())
    }

    #[test]
    fn peak_is_one_at_centroid_pixel() {
        let m = render_likelihood(&ann(&[(10.0, 12.0)]), 32, 32, 3.0).unwrap();
        assert_eq!(m.get(10, 12), 1.0);
        assert_eq!(m.plane().max(), 1.0);
    }

    #[test]
    fn off_grid_centroid_still_peaks_at_nearest_pixel() {
        let m = render_likelihood(&ann(&[(10.3, 11.6)]), 32, 32, 3.0).unwrap();
        assert_eq!(m.get(10, 12), 1.0);
        assert!(m.plane().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn value_one_sigma_away() {
        let sigma = 3.0;
        let m = render_likelihood(&ann(&[(10.0, 10.0)]), 32, 32, sigma).unwrap();
        let expected = (-0.5f64).exp();
        assert!((m.get(13, 10) - expected).abs() < 1e-15);
        assert!((m.get(10, 7) - 0.6065306597126334).abs() < 1e-15);
    }

    #[test]
    fn overlapping_kernels_combine_by_max() {
        let sigma = 2.0;
        // 2 sigma apart, midpoint is one sigma from each.
        let m = render_likelihood(&ann(&[(10.0, 10.0), (14.0, 10.0)]), 32, 32, sigma).unwrap();
        assert!((m.get(12, 10) - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn truncated_beyond_four_sigma() {
        let m = render_likelihood(&ann(&[(16.0, 16.0)]), 40, 40, 2.0).unwrap();
        assert!(m.get(24, 16) > 0.0);
        assert_eq!(m.get(25, 16), 0.0);
        assert_eq!(m.get(22, 22), 0.0); // distance 8.49 > 8
    }

    #[test]
    fn empty_annotation_gives_zero_map() {
        let m = render_likelihood(&ann(&[]), 8, 8, 3.0).unwrap();
        assert!(m.plane().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_bounds_rejected() {
        let err = render_likelihood(&ann(&[(40.0, 2.0)]), 32, 32, 3.0).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { x, width: 32, .. } if x == 40.0));
        assert!(render_likelihood(&ann(&[(1.0, 1.0)]), 32, 32, 0.0).is_err());
    }

    #[test]
    fn parse_rows_and_header() {
        let p = Path::new("a.csv");
        let a = parse_annotations("5.0,7.0\n", "a", p, 32, 32).unwrap();
        assert_eq!(a.points, vec![(5.0, 7.0)]);
        assert!(parse_annotations("", "a", p, 32, 32).unwrap().is_empty());
        let h = parse_annotations("x,y\n5,7", "a", p, 32, 32).unwrap();
        assert_eq!(h.points, vec![(5.0, 7.0)]);
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse_annotations("1,2\n3;4\n", "a", Path::new("a.csv"), 32, 32).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_annotations("1,2\n3,abc\n", "a", Path::new("a.csv"), 32, 32).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_annotations("1,2\n50,4\n", "a", Path::new("a.csv"), 32, 32).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { .. }));
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene_001.csv");
        let a = ann(&[(1.25, 2.5), (30.0, 0.0)]);
        write_annotations(&path, &a).unwrap();
        let back = load_annotations(&path, 32, 32).unwrap();
        assert_eq!(back.points, a.points);
        assert_eq!(back.image_id, "scene_001");
    }
}
