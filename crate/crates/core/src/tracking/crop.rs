//! Search-region crops and their mapping to score-map coordinates.
//!
//! A crop is a square of `side` frame pixels resampled to `patch` pixels,
//! optionally mirrored and rotated about its center. Patch pixels are split
//! into cells of `cell` pixels; a filter of size K placed at score index `i`
//! covers cells `[i, i+K)`, so score coordinate = cell coordinate − K/2.

use super::augment::PatchSpec;
use super::features::FeatureExtractor;
use super::{Frame, FrameData, TargetBox};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::lossmodel::{Center, TrainingSample};
use crate::modelpred::{bilinear, CellBox};
use crate::numerics::Tensor3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crop {
    pub cx: f64,
    pub cy: f64,
    pub side: f64,
    pub patch: usize,
    pub flip: bool,
    /// Radians, counter-clockwise in image coordinates.
    pub rotation: f64,
}

impl Crop {
    /// Square crop of side `factor·√(wh)·scale` around `target`, moved
    /// inside the frame where it fits.
    pub fn around(target: &TargetBox, frame_size: (f64, f64), factor: f64, scale: f64, patch: usize) -> Crop {
        let side = factor * target.area().sqrt() * scale;
        let clamp = |c: f64, extent: f64| {
            if side <= extent {
                c.clamp(side / 2.0, extent - side / 2.0)
            } else {
                extent / 2.0
            }
        };
        Crop {
            cx: clamp(target.cx, frame_size.0),
            cy: clamp(target.cy, frame_size.1),
            side,
            patch,
            flip: false,
            rotation: 0.0,
        }
    }

    /// Frame pixels per patch pixel.
    pub fn pixel_scale(&self) -> f64 {
        self.side / self.patch as f64
    }

    /// Patch coordinates `(u, v)` to frame coordinates `(x, y)`.
    pub fn to_frame(&self, u: f64, v: f64) -> (f64, f64) {
        let half = self.patch as f64 / 2.0;
        let k = self.pixel_scale();
        let mut a = (u - half) * k;
        let b = (v - half) * k;
        if self.flip {
            a = -a;
        }
        let (sin, cos) = self.rotation.sin_cos();
        (self.cx + cos * a - sin * b, self.cy + sin * a + cos * b)
    }

    pub fn to_patch(&self, x: f64, y: f64) -> (f64, f64) {
        let half = self.patch as f64 / 2.0;
        let k = self.pixel_scale();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (sin, cos) = self.rotation.sin_cos();
        let mut a = cos * dx + sin * dy;
        let b = -sin * dx + cos * dy;
        if self.flip {
            a = -a;
        }
        (a / k + half, b / k + half)
    }

    /// Resamples `img` over the crop.
    pub fn sample_image(&self, img: &GrayImage) -> GrayImage {
        GrayImage::from_fn(self.patch, self.patch, |r, c| {
            let (x, y) = self.to_frame(c as f64 + 0.5, r as f64 + 0.5);
            img.sample(x, y)
        })
    }

    /// Resamples a feature map whose cells cover `stride` pixels onto a
    /// grid of `patch / cell` cells.
    pub fn sample_features(&self, map: &Tensor3<f64>, stride: f64, cell: usize) -> Tensor3<f64> {
        let g = self.patch / cell;
        let mut out = Tensor3::zeros(g, g, map.channels());
        for a in 0..g {
            for b in 0..g {
                let (x, y) = self.to_frame(
                    (b as f64 + 0.5) * cell as f64,
                    (a as f64 + 0.5) * cell as f64,
                );
                for k in 0..map.channels() {
                    out.set(a, b, k, bilinear(map, y / stride, x / stride, k));
                }
            }
        }
        out
    }
}

/// A crop turned into a training sample.
#[derive(Clone, Debug)]
pub struct Extracted {
    pub sample: TrainingSample<f64>,
    /// Target extent on the feature grid.
    pub target_cells: CellBox,
    pub crop: Crop,
    /// Patch pixels per feature cell.
    pub cell: usize,
}

impl Extracted {
    /// Maps a score-map location back to frame pixels.
    pub fn score_to_frame(&self, row: f64, col: f64, filter_size: usize) -> (f64, f64) {
        let half = filter_size as f64 / 2.0;
        let cell = self.cell as f64;
        self.crop.to_frame((col + half) * cell, (row + half) * cell)
    }
}

/// Crops `frame` around `target` according to `spec` at relative `scale`
/// and extracts features.
pub fn extract_with(
    frame: &Frame,
    target: &TargetBox,
    spec: &PatchSpec,
    scale: f64,
    extractor: &dyn FeatureExtractor,
    cfg: &Config,
) -> Result<Extracted> {
    let (fw, fh) = frame.size();
    if !target.overlaps_frame(fw, fh) {
        return Err(Error::TargetOutsideFrame);
    }
    let p = cfg.patch_size;
    let mut crop = Crop::around(target, (fw, fh), cfg.search_area_factor, scale / spec.zoom, p);
    crop.cx += spec.shift.0 * crop.side;
    crop.cy += spec.shift.1 * crop.side;
    crop.flip = spec.flip;
    crop.rotation = spec.rotation_deg.to_radians();

    let (features, cell) = match &frame.data {
        FrameData::Image(img) => {
            let mut patch = crop.sample_image(img);
            if spec.blur > 0.0 {
                patch = patch.gaussian_blur(spec.blur);
            }
            if spec.brightness != 0.0 {
                for v in patch.as_mut_slice() {
                    *v += spec.brightness;
                }
            }
            (extractor.extract(&patch)?, extractor.stride())
        }
        FrameData::Features { map, stride } => {
            let cell = cfg.feature_stride;
            (crop.sample_features(map, *stride, cell), cell)
        }
    };

    let (u, v) = crop.to_patch(target.cx, target.cy);
    let cellf = cell as f64;
    let half = cfg.filter_size as f64 / 2.0;
    let center = Center::new(v / cellf - half, u / cellf - half);
    let zoom = 1.0 / crop.pixel_scale() / cellf;
    let target_cells = CellBox::from_center(v / cellf, u / cellf, target.h * zoom, target.w * zoom);
    Ok(Extracted {
        sample: TrainingSample::new(features, center),
        target_cells,
        crop,
        cell,
    })
}

/// Plain crop at the base scale: the sample used for tracking and memory.
pub fn extract_patch_features(
    frame: &Frame,
    target: &TargetBox,
    extractor: &dyn FeatureExtractor,
    cfg: &Config,
) -> Result<TrainingSample<f64>> {
    Ok(extract_with(frame, target, &PatchSpec::identity(), 1.0, extractor, cfg)?.sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracking::HandCrafted;

    fn cfg() -> Config {
        Config::default()
    }

    #[test]
    fn to_frame_inverts_to_patch() {
        let crop = Crop {
            cx: 50.0,
            cy: 40.0,
            side: 90.0,
            patch: 64,
            flip: true,
            rotation: 0.3,
        };
        for &(u, v) in &[(0.0, 0.0), (10.5, 60.25), (64.0, 3.0)] {
            let (x, y) = crop.to_frame(u, v);
            let (uu, vv) = crop.to_patch(x, y);
            assert!((uu - u).abs() < 1e-12 && (vv - v).abs() < 1e-12);
        }
    }

    #[test]
    fn centered_box_maps_to_score_center() {
        let c = cfg();
        let frame = Frame::image(0, GrayImage::filled(400, 400, 0.5));
        let target = TargetBox::new(200.0, 200.0, 57.6, 57.6).unwrap();
        let ex = HandCrafted::from_config(&c);
        let s = extract_patch_features(&frame, &target, &ex, &c).unwrap();
        let mid = (c.score_size() - 1) as f64 / 2.0;
        assert!((s.center.row - mid).abs() < 1e-12);
        assert!((s.center.col - mid).abs() < 1e-12);
        assert_eq!(s.features.dims(), (18, 18, 9));
    }

    #[test]
    fn clamped_crop_tracks_displacement() {
        // The crop fills the frame, so it stays put while the box moves; each
        // cell spans 288 / 18 = 16 frame pixels.
        let c = cfg();
        let frame = Frame::image(0, GrayImage::filled(288, 288, 0.5));
        let ex = HandCrafted::from_config(&c);
        let a = TargetBox::new(140.0, 150.0, 57.6, 57.6).unwrap();
        let b = TargetBox::new(140.0 + 24.0, 150.0 - 8.0, 57.6, 57.6).unwrap();
        let sa = extract_patch_features(&frame, &a, &ex, &c).unwrap();
        let sb = extract_patch_features(&frame, &b, &ex, &c).unwrap();
        assert!((sb.center.col - sa.center.col - 24.0 / 16.0).abs() < 1e-12);
        assert!((sb.center.row - sa.center.row + 8.0 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn aligned_feature_frame_passes_through() {
        let c = cfg();
        let g = c.patch_size / c.feature_stride;
        let map = Tensor3::from_fn(g, g, 3, |i, j, k| (i * 100 + j * 3 + k) as f64);
        let frame = Frame::features(0, map.clone(), c.feature_stride as f64).unwrap();
        let side = c.patch_size as f64;
        let w = side / c.search_area_factor;
        let target = TargetBox::new(side / 2.0, side / 2.0, w, w).unwrap();
        let s = extract_patch_features(&frame, &target, &HandCrafted::from_config(&c), &c).unwrap();
        for (x, y) in s.features.as_slice().iter().zip(map.as_slice()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn outside_frame_is_error() {
        let c = cfg();
        let frame = Frame::image(0, GrayImage::filled(100, 100, 0.5));
        let target = TargetBox::new(500.0, 50.0, 10.0, 10.0).unwrap();
        let r = extract_patch_features(&frame, &target, &HandCrafted::from_config(&c), &c);
        assert!(matches!(r, Err(Error::TargetOutsideFrame)));
    }

    #[test]
    fn mapping_back_to_frame() {
        let c = cfg();
        let frame = Frame::image(0, GrayImage::filled(600, 600, 0.5));
        let target = TargetBox::new(310.0, 290.0, 40.0, 30.0).unwrap();
        let ex = HandCrafted::from_config(&c);
        let e = extract_with(&frame, &target, &PatchSpec::identity(), 1.0, &ex, &c).unwrap();
        let (x, y) = e.score_to_frame(e.sample.center.row, e.sample.center.col, c.filter_size);
        assert!((x - 310.0).abs() < 1e-9 && (y - 290.0).abs() < 1e-9);
    }
}
