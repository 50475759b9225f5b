//! In-memory posed image collections.

use alloc::string::String;
use alloc::vec::Vec;

use crate::geometry::CameraPose;

/// An 8-bit RGB image with an optional foreground mask, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
    pub mask: Option<Vec<bool>>,
}

impl Image {
    pub fn color(&self, x: usize, y: usize) -> [f32; 3] {
        self.pixels[y * self.width + x].map(|c| c as f32 / 255.0)
    }

    pub fn to_f64(&self) -> Vec<[f64; 3]> {
        self.pixels.iter().map(|p| p.map(|c| c as f64 / 255.0)).collect()
    }
}

/// Quantizes `[0, 1]` to a byte, rounding halves up.
pub fn quantize(v: f64) -> u8 {
    let x = v.clamp(0.0, 1.0) * 255.0 + 0.5;
    (x as u32).min(255) as u8
}

/// Images with cameras in the normalized scene frame (object inside the unit sphere).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub names: Vec<String>,
    pub images: Vec<Image>,
    pub poses: Vec<CameraPose>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// True when every image carries a mask.
    pub fn has_masks(&self) -> bool {
        !self.images.is_empty() && self.images.iter().all(|i| i.mask.is_some())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(2.0), 255);
        assert_eq!(quantize(-1.0), 0);
        assert_eq!(quantize(1.5 / 255.0), 2);
        for b in 0..=255u8 {
            assert_eq!(quantize(b as f64 / 255.0), b);
        }
    }
}
