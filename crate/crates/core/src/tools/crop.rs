//! Region cropping/zooming over an input image.

use image::GenericImageView;

use super::{BBox, ToolError};

/// Crop the given region out of an encoded image and return it re-encoded as
/// PNG. The box is clamped to the image bounds first; a box that is empty
/// after clamping is rejected.
pub fn crop_zoom(image_bytes: &[u8], bbox: &BBox) -> Result<Vec<u8>, ToolError> {
    let img = image::load_from_memory(image_bytes)
        .map_err(|e| ToolError::ImageDecode(e.to_string()))?;
    let (w, h) = img.dimensions();
    let (x1, y1, x2, y2) = bbox.clamp_to(w, h)?;
    let cropped = img.crop_imm(x1, y1, x2 - x1, y2 - y1);
    encode_png(&cropped)
}

pub(crate) fn encode_png(img: &image::DynamicImage) -> Result<Vec<u8>, ToolError> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| ToolError::ImageDecode(format!("png encode: {e}")))?;
    Ok(out.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{DynamicImage, Rgba, RgbaImage};

    /// Deterministic gradient test image.
    pub(crate) fn test_image(w: u32, h: u32) -> Vec<u8> {
        let img = RgbaImage::from_fn(w, h, |x, y| {
            Rgba([(x % 256) as u8, (y % 256) as u8, ((x + y) % 256) as u8, 255])
        });
        encode_png(&DynamicImage::ImageRgba8(img)).unwrap()
    }

    #[test]
    fn full_extent_crop_is_pixel_identical() {
        let src = test_image(32, 24);
        let out = crop_zoom(&src, &BBox { x1: 0, y1: 0, x2: 32, y2: 24 }).unwrap();
        let a = image::load_from_memory(&src).unwrap().to_rgba8();
        let b = image::load_from_memory(&out).unwrap().to_rgba8();
        assert_eq!(a, b);
    }

    #[test]
    fn crop_matches_source_region() {
        let src = test_image(300, 300);
        let out = crop_zoom(&src, &BBox { x1: 100, y1: 100, x2: 200, y2: 200 }).unwrap();
        let full = image::load_from_memory(&src).unwrap().to_rgba8();
        let crop = image::load_from_memory(&out).unwrap().to_rgba8();
        assert_eq!(crop.dimensions(), (100, 100));
        for y in 0..100 {
            for x in 0..100 {
                assert_eq!(crop.get_pixel(x, y), full.get_pixel(x + 100, y + 100));
            }
        }
    }

    #[test]
    fn inverted_box_rejected() {
        let src = test_image(300, 300);
        assert!(matches!(
            crop_zoom(&src, &BBox { x1: 200, y1: 50, x2: 100, y2: 80 }),
            Err(ToolError::InvalidBBox(_))
        ));
    }

    #[test]
    fn composition_of_crops() {
        let src = test_image(120, 80);
        let b1 = BBox { x1: 10, y1: 5, x2: 110, y2: 75 };
        let first = crop_zoom(&src, &b1).unwrap();
        let b2 = BBox { x1: 20, y1: 10, x2: 60, y2: 40 };
        let nested = crop_zoom(&first, &b2).unwrap();
        let composed = crop_zoom(
            &src,
            &BBox { x1: b1.x1 + b2.x1, y1: b1.y1 + b2.y1, x2: b1.x1 + b2.x2, y2: b1.y1 + b2.y2 },
        )
        .unwrap();
        let a = image::load_from_memory(&nested).unwrap().to_rgba8();
        let b = image::load_from_memory(&composed).unwrap().to_rgba8();
        assert_eq!(a, b);
    }

    #[test]
    fn undecodable_image() {
        assert!(matches!(
            crop_zoom(b"not an image", &BBox { x1: 0, y1: 0, x2: 1, y2: 1 }),
            Err(ToolError::ImageDecode(_))
        ));
    }
}
