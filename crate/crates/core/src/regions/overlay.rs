use crate::geom::{label_pixels_by_nn, CameraView, PointCloud, RgbImage, SpatialIndex};
use crate::Result;

use super::RegionLabeling;

/// Twenty mutually distinct colours, cycled by region label.
pub const PALETTE: [[u8; 3]; 20] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [67, 99, 216],
    [245, 130, 49],
    [145, 30, 180],
    [66, 212, 244],
    [240, 50, 230],
    [191, 239, 69],
    [250, 190, 212],
    [70, 153, 144],
    [220, 190, 255],
    [154, 99, 36],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
    [128, 128, 0],
    [255, 216, 177],
    [0, 0, 117],
    [169, 169, 169],
];

/// Colour for a 1-based region label, by label number.
pub fn palette_color(label: u32) -> [u8; 3] {
    PALETTE[(label.max(1) as usize - 1) % PALETTE.len()]
}

/// Labels ordered by size, largest first; ties by label.
pub fn size_rank(labeling: &RegionLabeling) -> Vec<u32> {
    let sizes = labeling.sizes();
    let mut order: Vec<u32> = (1..=labeling.num_regions).collect();
    order.sort_by(|&a, &b| sizes[b as usize].cmp(&sizes[a as usize]).then(a.cmp(&b)));
    order
}

/// Overlay colour per label (index 0 unused): the palette is handed out in
/// size order, so the twenty largest regions never share a colour.
pub fn region_colors(labeling: &RegionLabeling) -> Vec<[u8; 3]> {
    let mut colors = vec![[0, 0, 0]; labeling.num_regions as usize + 1];
    for (rank, label) in size_rank(labeling).into_iter().enumerate() {
        colors[label as usize] = PALETTE[rank % PALETTE.len()];
    }
    colors
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LegendEntry {
    pub label: u32,
    pub rgb: [u8; 3],
    pub point_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Overlay {
    pub image: RgbImage,
    pub legend: Vec<LegendEntry>,
}

/// Paints each foreground pixel with the [`region_colors`] colour of its
/// nearest point's region. The legend lists regions largest first. Background pixels, and pixels whose nearest point is unlabelled,
/// keep the original RGB.
pub fn render_region_overlay(labeling: &RegionLabeling, view: &CameraView, cloud: &PointCloud, index: &SpatialIndex) -> Result<Overlay> {
    let per_pixel = label_pixels_by_nn(view, cloud, &labeling.labels, index)?;
    let colors = region_colors(labeling);
    let mut image = view.rgb.clone();
    for row in 0..view.height() {
        for col in 0..view.width() {
            let l = *per_pixel.get(row, col);
            if *view.fg_mask.get(row, col) && l > 0 {
                image.put(row, col, colors[l as usize]);
            }
        }
    }
    let sizes = labeling.sizes();
    let legend = size_rank(labeling)
        .into_iter()
        .map(|label| LegendEntry { label, rgb: colors[label as usize], point_count: sizes[label as usize] })
        .collect();
    Ok(Overlay { image, legend })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{backproject_view, Grid, Intrinsics, Point3};
    use nalgebra::Matrix4;
    use std::collections::{BTreeMap, HashSet};

    fn view(w: usize, h: usize) -> CameraView {
        let mut rgb = RgbImage::new(w, h);
        rgb.data.iter_mut().for_each(|x| *x = 7);
        let mut mask = Grid::filled(w, h, true);
        mask.set(0, 0, false);
        let mut depth = Grid::filled(w, h, 1.0);
        depth.set(0, 0, 0.0);
        CameraView::new(Intrinsics::from_focal(10.0, 10.0, 4.0, 4.0).unwrap(), Matrix4::identity(), rgb, depth, mask, None).unwrap()
    }

    fn labeling(labels: Vec<u32>) -> RegionLabeling {
        let m = labels.iter().copied().max().unwrap_or(0);
        RegionLabeling { labels, num_regions: m, per_link: BTreeMap::new(), paths: vec![], mean_shift_regions: m as usize }
    }

    #[test]
    fn palette_distinct() {
        assert_eq!(PALETTE.iter().collect::<HashSet<_>>().len(), 20);
        assert_eq!(palette_color(21), palette_color(1));
    }

    #[test]
    fn single_region_uniform() {
        let v = view(9, 9);
        let c = backproject_view(&v);
        let idx = SpatialIndex::new(&c.points);
        let o = render_region_overlay(&labeling(vec![1; c.len()]), &v, &c, &idx).unwrap();
        assert_eq!(o.image.pixel(0, 0), [7, 7, 7]);
        for r in 0..9 {
            for col in 0..9 {
                if (r, col) != (0, 0) {
                    assert_eq!(o.image.pixel(r, col), PALETTE[0]);
                }
            }
        }
        assert_eq!(o.legend, vec![LegendEntry { label: 1, rgb: PALETTE[0], point_count: c.len() }]);
    }

    #[test]
    fn two_regions_split_at_bisector() {
        let v = view(9, 9);
        let c = PointCloud {
            points: vec![Point3::new(-0.2, 0.0, 1.0), Point3::new(0.2, 0.0, 1.0)],
            source_view: vec![0; 2],
            source_pixel: vec![0; 2],
            link_id: vec![None; 2],
        };
        let idx = SpatialIndex::new(&c.points);
        let o = render_region_overlay(&labeling(vec![1, 2]), &v, &c, &idx).unwrap();
        for r in 1..9 {
            assert_eq!(o.image.pixel(r, 3), PALETTE[0]);
            assert_eq!(o.image.pixel(r, 5), PALETTE[1]);
        }
    }
}
