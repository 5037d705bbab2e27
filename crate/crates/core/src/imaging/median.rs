use super::GrayImage;

/// 3×3 median filter with edge-replicated borders.
pub fn median_filter_3x3(img: &GrayImage) -> GrayImage {
    let (h, w) = (img.height(), img.width());
    let mut out = Vec::with_capacity(h * w);
    let mut window = [0u8; 9];
    for r in 0..h {
        let rows = [r.saturating_sub(1), r, (r + 1).min(h - 1)];
        for c in 0..w {
            let cols = [c.saturating_sub(1), c, (c + 1).min(w - 1)];
            let mut k = 0;
            for &rr in &rows {
                for &cc in &cols {
                    window[k] = img.get(rr, cc);
                    k += 1;
                }
            }
            window.sort_unstable();
            out.push(window[4]);
        }
    }
    GrayImage::from_pixels(h, w, out).expect("same dimensions")
}
