//! PNG import/export for planes, label images and colour overlays.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::labeling::InstanceLabeling;
use crate::tensor::Plane;

fn quantize(v: f64, max: f64) -> f64 {
    (v.clamp(0.0, 1.0) * max).round()
}

pub fn save_gray8(path: impl AsRef<Path>, plane: &Plane) -> Result<()> {
    let buf: Vec<u8> = plane.data().iter().map(|&v| quantize(v, 255.0) as u8).collect();
    let img = ImageBuffer::<Luma<u8>, _>::from_raw(plane.width() as u32, plane.height() as u32, buf).unwrap();
    img.save(path)?;
    Ok(())
}

/// Values in `[0, 1]` scaled by 65535.
pub fn save_gray16(path: impl AsRef<Path>, plane: &Plane) -> Result<()> {
    let buf: Vec<u16> = plane.data().iter().map(|&v| quantize(v, 65535.0) as u16).collect();
    let img = ImageBuffer::<Luma<u16>, _>::from_raw(plane.width() as u32, plane.height() as u32, buf).unwrap();
    img.save(path)?;
    Ok(())
}

/// Load any grayscale-convertible image as a plane in `[0, 1]`.
pub fn load_gray(path: impl AsRef<Path>) -> Result<Plane> {
    let img = image::open(path)?.into_luma16();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
    Plane::from_vec(w as usize, h as usize, data)
}

/// Label value stored directly as the 16-bit pixel value.
pub fn save_labels(path: impl AsRef<Path>, labels: &InstanceLabeling) -> Result<()> {
    if labels.count() > u16::MAX as usize {
        return Err(Error::InvalidArgument(format!("{} labels do not fit in 16 bits", labels.count())));
    }
    let buf: Vec<u16> = labels.labels().iter().map(|&l| l as u16).collect();
    let img = ImageBuffer::<Luma<u16>, _>::from_raw(labels.width() as u32, labels.height() as u32, buf).unwrap();
    img.save(path)?;
    Ok(())
}

/// Accepts 16-bit or 8-bit single-channel images; the pixel value is the label.
pub fn load_labels(path: impl AsRef<Path>) -> Result<InstanceLabeling> {
    let (w, h, labels): (u32, u32, Vec<u32>) = match image::open(path)? {
        image::DynamicImage::ImageLuma16(i) => (i.width(), i.height(), i.into_raw().into_iter().map(u32::from).collect()),
        image::DynamicImage::ImageLuma8(i) => (i.width(), i.height(), i.into_raw().into_iter().map(u32::from).collect()),
        other => {
            return Err(Error::InvalidArgument(format!(
                "label image must be single-channel, got {:?}",
                other.color()
            )))
        }
    };
    InstanceLabeling::from_vec(w as usize, h as usize, labels)
}

/// Deterministic, well-separated colour for a cell id.
pub fn label_color(id: u32) -> [u8; 3] {
    // Golden-angle hue walk at fixed saturation/value.
    let hue = (id as f64 * 137.507_764) % 360.0;
    let (s, v) = (0.75, 0.95);
    let c = v * s;
    let hp = hue / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [((r + m) * 255.0) as u8, ((g + m) * 255.0) as u8, ((b + m) * 255.0) as u8]
}

/// Grayscale `base` with each labelled pixel blended towards its cell colour.
pub fn label_overlay(base: &Plane, labels: &InstanceLabeling) -> RgbImage {
    assert_eq!(base.dims(), labels.dims());
    RgbImage::from_fn(base.width() as u32, base.height() as u32, |x, y| {
        let g = quantize(base.get(x as usize, y as usize), 255.0);
        match labels.get(x as usize, y as usize) {
            0 => Rgb([g as u8; 3]),
            l => {
                let c = label_color(l);
                Rgb(c.map(|ch| (0.45 * g + 0.55 * ch as f64).round() as u8))
            }
        }
    })
}

/// Colour each pixel by the channel holding its largest value, with
/// brightness proportional to that value relative to the channel maximum.
pub fn fused_overlay(channels: &[Plane]) -> Option<RgbImage> {
    let first = channels.first()?;
    let maxes: Vec<f64> = channels.iter().map(|c| c.max()).collect();
    Some(RgbImage::from_fn(first.width() as u32, first.height() as u32, |x, y| {
        let mut best = (0usize, 0.0);
        for (k, c) in channels.iter().enumerate() {
            let v = c.get(x as usize, y as usize);
            if v > best.1 {
                best = (k, v);
            }
        }
        if best.1 <= 0.0 || maxes[best.0] <= 0.0 {
            return Rgb([0, 0, 0]);
        }
        let t = (best.1 / maxes[best.0]).clamp(0.0, 1.0);
        Rgb(label_color(best.0 as u32 + 1).map(|ch| (ch as f64 * t).round() as u8))
    }))
}

pub fn save_rgb(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    img.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray16_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let plane = Plane::from_fn(5, 4, |x, y| (x + 5 * y) as f64 / 19.0);
        save_gray16(&p, &plane).unwrap();
        let back = load_gray(&p).unwrap();
        for (a, b) in plane.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
        }
    }

    #[test]
    fn labels_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.png");
        let l = InstanceLabeling::from_vec(3, 2, vec![0, 1, 300, 2, 2, 0]).unwrap();
        save_labels(&p, &l).unwrap();
        assert_eq!(load_labels(&p).unwrap(), l);
    }

    #[test]
    fn colors_differ_for_neighbouring_ids() {
        assert_ne!(label_color(1), label_color(2));
        assert_ne!(label_color(2), label_color(3));
    }
}
