//! Side-by-side PNG panels.

use bkt_core::datamodel::{Image, Mask, Triplet};
use bkt_core::Result;

/// Grayscale mask as a three-channel image.
pub fn mask_rgb(m: &Mask) -> Result<Image> {
    Image::from_fn(3, m.height(), m.width(), |_, y, x| m.get(y, x))
}

/// Images of equal height concatenated left to right with a 2-pixel gap.
pub fn hstack(parts: &[Image]) -> Result<Image> {
    const GAP: usize = 2;
    let h = parts[0].height();
    let mut offsets = Vec::with_capacity(parts.len());
    let mut w = 0;
    for p in parts {
        offsets.push(w);
        w += p.width() + GAP;
    }
    let w = w - GAP;
    Image::from_fn(3, h, w, |c, y, x| {
        for (p, &o) in parts.iter().zip(&offsets) {
            if x >= o && x < o + p.width() {
                return p.get(c.min(p.channels() - 1), y, x - o);
            }
        }
        1.0
    })
}

/// `image | mask | masked image`.
pub fn triplet_panel(t: &Triplet) -> Result<Image> {
    hstack(&[t.image.clone(), mask_rgb(&t.mask)?, t.masked_image.clone()])
}
