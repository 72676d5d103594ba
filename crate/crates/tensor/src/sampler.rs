//! Fixed sparse resampling operators (e.g. bilinear warps).

/// One bilinear tap: source pixel index within a plane and its weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tap {
    pub index: u32,
    pub weight: f64,
}

impl Tap {
    pub const NONE: Tap = Tap { index: 0, weight: 0.0 };
}

/// A linear map from an `in_h x in_w` plane to an `out_h x out_w` plane where
/// every output pixel is a weighted sum of at most four input pixels.
///
/// The same map is applied to every channel of a batch item.
#[derive(Clone, Debug, PartialEq)]
pub struct Sampler {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    taps: Vec<[Tap; 4]>,
}

impl Sampler {
    pub fn new(in_h: usize, in_w: usize, out_h: usize, out_w: usize, taps: Vec<[Tap; 4]>) -> Self {
        assert_eq!(taps.len(), out_h * out_w, "one tap set per output pixel");
        let plane = (in_h * in_w) as u32;
        assert!(
            taps.iter().flatten().all(|t| t.weight == 0.0 || t.index < plane),
            "tap index out of range"
        );
        Self { in_h, in_w, out_h, out_w, taps }
    }

    pub fn taps(&self) -> &[[Tap; 4]] {
        &self.taps
    }

    /// Applies the map to one plane.
    pub fn apply_plane(&self, src: &[f64], dst: &mut [f64]) {
        for (d, taps) in dst.iter_mut().zip(&self.taps) {
            *d = taps.iter().map(|t| t.weight * src[t.index as usize]).sum();
        }
    }
}
