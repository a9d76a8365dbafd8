//! Online tracking: frames, crops, features, first-frame augmentation and
//! the memory-based update loop.

pub mod augment;
pub mod crop;
pub mod features;
pub mod sequence;
pub mod tracker;

pub use augment::{augmentations, PatchSpec};
pub use crop::{extract_patch_features, extract_with, Crop, Extracted};
pub use features::{FeatureExtractor, HandCrafted};
pub use sequence::{
    frame_files, load_frame, load_sequence, score_image, write_score_dump, FrameRecord, Sequence,
    TRACK_SCHEMA,
};
pub use tracker::{find_distractor, refine_peak, FrameResult, Tracker, TrackerState};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::numerics::Tensor3;

/// Axis-aligned box in continuous pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl TargetBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidArgument("non-finite box center".into()));
        }
        if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "box size must be positive, got {w}x{h}"
            )));
        }
        Ok(TargetBox { cx, cy, w, h })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn x0(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn y0(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn x1(&self) -> f64 {
        self.cx + self.w / 2.0
    }

    pub fn y1(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn iou(&self, other: &TargetBox) -> f64 {
        let iw = (self.x1().min(other.x1()) - self.x0().max(other.x0())).max(0.0);
        let ih = (self.y1().min(other.y1()) - self.y0().max(other.y0())).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }

    /// True when the box overlaps the `width × height` frame.
    pub fn overlaps_frame(&self, width: f64, height: f64) -> bool {
        self.x1() > 0.0 && self.x0() < width && self.y1() > 0.0 && self.y0() < height
    }
}

/// Frame content: pixels, or features computed elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub enum FrameData {
    Image(GrayImage),
    /// Feature map whose cells each cover `stride × stride` pixels.
    Features { map: Tensor3<f64>, stride: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub data: FrameData,
}

impl Frame {
    pub fn image(index: usize, image: GrayImage) -> Self {
        Frame {
            index,
            data: FrameData::Image(image),
        }
    }

    pub fn features(index: usize, map: Tensor3<f64>, stride: f64) -> Result<Self> {
        if map.height() == 0 || map.width() == 0 || map.channels() == 0 {
            return Err(Error::InvalidArgument("empty feature frame".into()));
        }
        if !(stride > 0.0) {
            return Err(Error::InvalidArgument(format!("feature stride must be positive, got {stride}")));
        }
        Ok(Frame {
            index,
            data: FrameData::Features { map, stride },
        })
    }

    /// Frame extent in pixels, `(width, height)`.
    pub fn size(&self) -> (f64, f64) {
        match &self.data {
            FrameData::Image(img) => (img.width() as f64, img.height() as f64),
            FrameData::Features { map, stride } => {
                (map.width() as f64 * stride, map.height() as f64 * stride)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_validation() {
        assert!(TargetBox::new(1.0, 1.0, 0.0, 2.0).is_err());
        assert!(TargetBox::new(f64::NAN, 1.0, 1.0, 2.0).is_err());
        assert!(TargetBox::new(1.0, 1.0, 1.0, 2.0).is_ok());
    }

    #[test]
    fn iou_cases() {
        let a = TargetBox::new(10.0, 10.0, 4.0, 4.0).unwrap();
        assert_eq!(a.iou(&a), 1.0);
        let b = TargetBox::new(12.0, 10.0, 4.0, 4.0).unwrap();
        // overlap 2x4 = 8, union 24
        assert!((a.iou(&b) - 8.0 / 24.0).abs() < 1e-15);
        let c = TargetBox::new(100.0, 10.0, 4.0, 4.0).unwrap();
        assert_eq!(a.iou(&c), 0.0);
    }
}
