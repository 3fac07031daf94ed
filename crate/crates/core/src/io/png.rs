//! PNG import/export for RGB images, overlays and heatmap figures.

use std::path::Path;

use crate::geom::{Grid, RgbImage};
use crate::{Error, Result};

pub fn encode_rgb_png(img: &RgbImage) -> Result<Vec<u8>> {
    let buf =
        image::RgbImage::from_raw(img.width as u32, img.height as u32, img.data.clone()).ok_or_else(|| Error::shape("rgb buffer size"))?;
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn decode_rgb_png(bytes: &[u8]) -> Result<RgbImage> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_rgb8();
    Ok(RgbImage { width: img.width() as usize, height: img.height() as usize, data: img.into_raw() })
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    super::tensor::write_atomic(path, &encode_rgb_png(img)?)
}

pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|source| Error::File { path: path.to_path_buf(), source })?;
    decode_rgb_png(&bytes)
}

/// Viridis anchors at 0, 1/8, ..., 1.
const VIRIDIS: [[f64; 3]; 9] = [
    [68.0, 1.0, 84.0],
    [71.0, 44.0, 123.0],
    [59.0, 82.0, 139.0],
    [44.0, 113.0, 142.0],
    [33.0, 145.0, 140.0],
    [39.0, 173.0, 129.0],
    [92.0, 200.0, 99.0],
    [170.0, 220.0, 50.0],
    [253.0, 231.0, 37.0],
];

pub fn viridis(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * 8.0;
    let i = (x.floor() as usize).min(7);
    let f = x - i as f64;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    [0, 1, 2].map(|c| (a[c] + (b[c] - a[c]) * f).round() as u8)
}

/// Heatmap figure of a `[0, 1]` map with a vertical value-scale strip on the right.
pub fn heatmap_figure(map: &Grid<f64>) -> RgbImage {
    let strip = (map.width / 12).max(3);
    let gap = 2;
    let w = map.width + gap + strip;
    let mut img = RgbImage::new(w, map.height);
    img.data.iter_mut().for_each(|x| *x = 255);
    for r in 0..map.height {
        for c in 0..map.width {
            img.put(r, c, viridis(*map.get(r, c)));
        }
        let t = if map.height > 1 { 1.0 - r as f64 / (map.height - 1) as f64 } else { 1.0 };
        for c in 0..strip {
            img.put(r, map.width + gap + c, viridis(t));
        }
    }
    img
}

pub fn write_heatmap_png(path: &Path, map: &Grid<f64>) -> Result<()> {
    write_rgb_png(path, &heatmap_figure(map))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let mut img = RgbImage::new(3, 2);
        img.put(1, 2, [1, 2, 3]);
        let back = decode_rgb_png(&encode_rgb_png(&img).unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(viridis(0.0), [68, 1, 84]);
        assert_eq!(viridis(1.0), [253, 231, 37]);
        assert_eq!(viridis(f64::NAN), viridis(0.0));
        let fig = heatmap_figure(&Grid::filled(24, 10, 0.5));
        assert_eq!(fig.width, 24 + 2 + 3);
        assert_eq!(fig.pixel(0, 27), viridis(1.0));
    }
}
