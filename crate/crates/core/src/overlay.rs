//! Binary PPM (P6) overlays of a prediction on its image slice: grayscale
//! base, false positives in red, false negatives in green.

use crate::error::{Error, Result};

pub const FALSE_POSITIVE: [u8; 3] = [255, 0, 0];
pub const FALSE_NEGATIVE: [u8; 3] = [0, 255, 0];

/// RGB pixels for one slice. Image values are clamped to `[0, 1]`.
pub fn render_overlay(image: &[f32], pred: &[u8], gt: &[u8]) -> Result<Vec<u8>> {
    if image.len() != pred.len() || pred.len() != gt.len() {
        return Err(Error::shape(
            "render_overlay",
            format!("image {} / pred {} / gt {} pixels", image.len(), pred.len(), gt.len()),
        ));
    }
    let mut rgb = Vec::with_capacity(3 * image.len());
    for ((&x, &p), &g) in image.iter().zip(pred).zip(gt) {
        let px = match (p, g) {
            (1, 0) => FALSE_POSITIVE,
            (0, 1) => FALSE_NEGATIVE,
            _ => [(x.clamp(0.0, 1.0) * 255.0).round() as u8; 3],
        };
        rgb.extend_from_slice(&px);
    }
    Ok(rgb)
}

pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    if rgb.len() != 3 * width * height {
        return Err(Error::shape("encode_ppm", format!("{} bytes for {width}x{height}", rgb.len())));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colors() {
        let rgb = render_overlay(&[0.5, 0.5, 0.5, 1.0], &[1, 0, 1, 0], &[0, 1, 1, 0]).unwrap();
        assert_eq!(&rgb[0..3], &FALSE_POSITIVE);
        assert_eq!(&rgb[3..6], &FALSE_NEGATIVE);
        assert_eq!(&rgb[6..9], &[128, 128, 128]);
        assert_eq!(&rgb[9..12], &[255, 255, 255]);
        let ppm = encode_ppm(2, 2, &rgb).unwrap();
        assert!(ppm.starts_with(b"P6\n2 2\n255\n"));
        assert_eq!(ppm.len(), 11 + 12);
    }
}
