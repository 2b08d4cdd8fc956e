//! Synthetic phase-contrast-like scenes of touching elliptical cells.
//!
//! Cells are dark ellipses on a mid-gray background, brightening towards
//! their centre (shade-off) and surrounded by a bright ring (halo). Each scene
//! comes with its centroid annotation and the instance ground truth.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::labeling::InstanceLabeling;
use crate::likelihood::CentroidAnnotation;
use crate::rng::substream;
use crate::tensor::Plane;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Square image side, pixels.
    pub size: usize,
    pub count_min: usize,
    pub count_max: usize,
    /// Semi-major axis range, pixels.
    pub radius_min: f64,
    pub radius_max: f64,
    pub eccentricity_min: f64,
    pub eccentricity_max: f64,
    /// Minimum centroid distance, pixels. Below `2 * radius` cells can overlap.
    pub min_separation: f64,
    /// Probability that a new cell is proposed right next to an existing one.
    pub touch_probability: f64,
    pub halo_width: f64,
    pub halo_brightness: f64,
    pub background: f64,
    /// Depth of the cell rim below the background.
    pub interior_darkness: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            size: 64,
            count_min: 3,
            count_max: 6,
            radius_min: 9.0,
            radius_max: 12.0,
            eccentricity_min: 0.0,
            eccentricity_max: 0.7,
            min_separation: 16.0,
            touch_probability: 0.5,
            halo_width: 3.0,
            halo_brightness: 0.35,
            background: 0.5,
            interior_darkness: 0.3,
            noise_std: 0.02,
            seed: 0,
        }
    }
}

macro_rules! spec_fields {
    ($m:ident) => {
        $m!(size, count_min, count_max, radius_min, radius_max, eccentricity_min, eccentricity_max,
            min_separation, touch_probability, halo_width, halo_brightness, background,
            interior_darkness, noise_std, seed)
    };
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.size == 0 {
            return bad("size must be positive");
        }
        if self.count_min > self.count_max {
            return bad("count range is empty");
        }
        if !(self.radius_min >= 1.0 && self.radius_min <= self.radius_max) {
            return bad("radius range must be nonempty with radius_min >= 1");
        }
        if !(0.0 <= self.eccentricity_min && self.eccentricity_min <= self.eccentricity_max && self.eccentricity_max < 1.0) {
            return bad("eccentricity range must lie in [0, 1)");
        }
        if !(self.min_separation > 0.0) {
            return bad("min_separation must be positive");
        }
        if !(0.0..=1.0).contains(&self.touch_probability) {
            return bad("touch_probability must lie in [0, 1]");
        }
        let nonneg = [
            self.halo_width,
            self.halo_brightness,
            self.background,
            self.interior_darkness,
            self.noise_std,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return bad("halo, intensity and noise parameters must be nonnegative");
        }
        Ok(())
    }

    /// `key = value` lines with the field names as keys; omitted keys keep
    /// their defaults.
    pub fn parse(text: &str, path: &Path) -> Result<SceneSpec> {
        let mut spec = SceneSpec::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("expected key = value, got {line:?}")))?;
            spec.set(k.trim(), v.trim()).map_err(bad)?;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        macro_rules! assign {
            ($($f:ident),*) => {
                match key {
                    $(stringify!($f) => {
                        self.$f = value.parse().map_err(|_| format!("invalid value {value:?} for {key}"))?;
                    })*
                    other => return Err(format!("unknown key {other:?}")),
                }
            };
        }
        spec_fields!(assign);
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        macro_rules! emit {
            ($($f:ident),*) => { $( let _ = writeln!(s, "{} = {}", stringify!($f), self.$f); )* };
        }
        spec_fields!(emit);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cell {
    cx: f64,
    cy: f64,
    /// Semi-axes.
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Cell {
    /// Normalised elliptical radius: 1 on the boundary.
    fn rho(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt()
    }

    fn mean_radius(&self) -> f64 {
        (self.a * self.b).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: Plane,
    pub annotation: CentroidAnnotation,
    pub labels: InstanceLabeling,
}

/// Render one scene. Fully determined by `spec` (including its seed).
pub fn generate(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = substream(spec.seed, "synth.layout");
    let requested = rng.random_range(spec.count_min..=spec.count_max);
    let size = spec.size as f64;
    let mut cells: Vec<Cell> = Vec::with_capacity(requested);
    let max_attempts = 1000 * requested;
    let mut attempts = 0;
    while cells.len() < requested {
        if attempts == max_attempts {
            return Err(Error::Placement {
                placed: cells.len(),
                requested,
            });
        }
        attempts += 1;
        let a = rng.random_range(spec.radius_min..=spec.radius_max);
        let e = rng.random_range(spec.eccentricity_min..=spec.eccentricity_max);
        let b = a * (1.0 - e * e).sqrt();
        let theta = rng.random_range(0.0..PI);
        let margin = a + 1.0;
        if 2.0 * margin >= size {
            continue;
        }
        let touch = !cells.is_empty() && rng.random_bool(spec.touch_probability);
        let (cx, cy) = if touch {
            let anchor = cells[rng.random_range(0..cells.len())];
            let d = rng.random_range(spec.min_separation..=spec.min_separation + 0.5 * a);
            let phi = rng.random_range(0.0..2.0 * PI);
            (anchor.cx + d * phi.cos(), anchor.cy + d * phi.sin())
        } else {
            (rng.random_range(margin..size - margin), rng.random_range(margin..size - margin))
        };
        if cx < margin || cy < margin || cx > size - margin || cy > size - margin {
            continue;
        }
        if cells.iter().any(|c| (c.cx - cx).hypot(c.cy - cy) < spec.min_separation) {
            continue;
        }
        cells.push(Cell {
            cx,
            cy,
            a,
            b,
            cos: theta.cos(),
            sin: theta.sin(),
        });
    }

    let n = spec.size;
    let mut image = Plane::filled(n, n, spec.background);
    let mut labels = InstanceLabeling::empty(n, n, cells.len());
    for y in 0..n {
        for x in 0..n {
            let (fx, fy) = (x as f64, y as f64);
            let mut owner: Option<(usize, f64)> = None;
            let mut in_halo = false;
            for (k, c) in cells.iter().enumerate() {
                let rho = c.rho(fx, fy);
                if rho <= 1.0 {
                    let d = (c.cx - fx).hypot(c.cy - fy);
                    if owner.is_none_or(|(_, best)| d < best) {
                        owner = Some((k, d));
                    }
                } else if spec.halo_width > 0.0 {
                    // Flat ring with a sharp outer edge.
                    in_halo |= (rho - 1.0) * c.mean_radius() < spec.halo_width;
                }
            }
            let v = match owner {
                Some((k, _)) => {
                    labels.set(x, y, k as u32 + 1);
                    let rho = cells[k].rho(fx, fy);
                    spec.background - spec.interior_darkness * (0.5 + 0.5 * rho * rho)
                }
                None if in_halo => spec.background + spec.halo_brightness,
                None => spec.background,
            };
            image.set(x, y, v);
        }
    }
    if spec.noise_std > 0.0 {
        let mut noise_rng = substream(spec.seed, "synth.noise");
        let normal = Normal::new(0.0, spec.noise_std).unwrap();
        for v in image.data_mut() {
            *v += normal.sample(&mut noise_rng);
        }
    }
    let image = image.map(|v| v.clamp(0.0, 1.0));
    let annotation = CentroidAnnotation::new(
        format!("scene_{}", spec.seed),
        cells.iter().map(|c| (c.cx, c.cy)).collect(),
    );
    Ok(Scene {
        image,
        annotation,
        labels,
    })
}
