use image::RgbaImage;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::RenderError;

/// A pixel counts as grey when the population variance of its R, G, B values
/// is below `variance_eps` (in 8-bit units squared). An image is all-grey when
/// at least `min_grey_fraction` of its pixels are grey.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreyConfig {
    pub variance_eps: f64,
    pub min_grey_fraction: f64,
}

impl Default for GreyConfig {
    fn default() -> Self {
        GreyConfig {
            variance_eps: 4.0,
            min_grey_fraction: 0.999,
        }
    }
}

fn channel_variance(rgb: [u8; 3]) -> f64 {
    let v = rgb.map(f64::from);
    let mean = (v[0] + v[1] + v[2]) / 3.0;
    v.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / 3.0
}

pub fn is_all_grey(image: &RgbaImage, config: &GreyConfig) -> bool {
    let total = image.pixels().len();
    if total == 0 {
        return true;
    }
    let grey = image
        .pixels()
        .filter(|p| channel_variance([p[0], p[1], p[2]]) < config.variance_eps)
        .count();
    grey as f64 >= config.min_grey_fraction * total as f64
}

pub fn detect_all_grey(image_ref: &Path, config: &GreyConfig) -> Result<bool, RenderError> {
    let image = image::open(image_ref).map_err(|source| RenderError::Image {
        path: image_ref.to_path_buf(),
        source,
    })?;
    Ok(is_all_grey(&image.to_rgba8(), config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgba;

    #[test]
    fn uniform_grey_is_grey() {
        let img = RgbaImage::from_pixel(32, 32, Rgba([128, 128, 128, 255]));
        assert!(is_all_grey(&img, &GreyConfig::default()));
        // near-grey noise (variance < eps) still counts
        let img = RgbaImage::from_fn(32, 32, |x, _| Rgba([127 + (x % 2) as u8, 128, 128, 255]));
        assert!(is_all_grey(&img, &GreyConfig::default()));
    }

    #[test]
    fn ten_pixel_artifact_tolerated() {
        // 128×128 = 16384 pixels; 10 red pixels leave 16374/16384 ≈ 0.99939 grey ≥ 0.999
        let mut img = RgbaImage::from_pixel(128, 128, Rgba([90, 90, 90, 255]));
        for i in 0..10 {
            img.put_pixel(i * 7, 3, Rgba([255, 0, 0, 255]));
        }
        let cfg = GreyConfig::default();
        assert!(is_all_grey(&img, &cfg));
        // 17 red pixels: 16367/16384 ≈ 0.998962 < 0.999
        for i in 10..17 {
            img.put_pixel(i * 7, 3, Rgba([255, 0, 0, 255]));
        }
        assert!(!is_all_grey(&img, &cfg));
    }

    #[test]
    fn coloured_blob_is_not_grey() {
        let img = RgbaImage::from_fn(32, 32, |x, y| {
            if (8..24).contains(&x) && (8..24).contains(&y) {
                Rgba([200, 40, 40, 255])
            } else {
                Rgba([128, 128, 128, 255])
            }
        });
        assert!(!is_all_grey(&img, &GreyConfig::default()));
    }

    #[test]
    fn unreadable_image_is_typed_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.png");
        std::fs::write(&path, b"not a png").unwrap();
        assert!(matches!(
            detect_all_grey(&path, &GreyConfig::default()),
            Err(RenderError::Image { .. })
        ));
        assert!(detect_all_grey(&dir.path().join("absent.png"), &GreyConfig::default()).is_err());
    }
}
