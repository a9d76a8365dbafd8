//! File formats: images, feature maps and annotations.

pub mod annotations;
pub mod dfm1;
pub mod pnm;
