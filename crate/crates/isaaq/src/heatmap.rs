use isaaq_core::vision::{BBox, GrayImage};

/// Darkens the diagram in proportion to the attention mass covering each
/// pixel, so attended regions stand out as dark patches.
pub fn render_heatmap(image: &GrayImage, bboxes: &[BBox], alpha: &[f64]) -> GrayImage {
    let mut heat = vec![0.0f64; image.pixels.len()];
    for (b, &a) in bboxes.iter().zip(alpha) {
        let (x0, y0, x1, y1) = image.pixel_bounds(b);
        for y in y0..y1 {
            for x in x0..x1 {
                heat[y * image.width + x] += a;
            }
        }
    }
    let peak = heat.iter().cloned().fold(0.0, f64::max);
    let pixels = image
        .pixels
        .iter()
        .zip(&heat)
        .map(|(&p, &h)| {
            let w = if peak > 0.0 { h / peak } else { 0.0 };
            (p as f64 * (1.0 - 0.75 * w)).round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage { width: image.width, height: image.height, pixels }
}
