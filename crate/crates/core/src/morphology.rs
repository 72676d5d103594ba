//! Binary morphology with closed-disk structuring elements and the
//! boundary-band weight map `dilate(m, r) - erode(m, r)`.

use crate::datamodel::Mask;
use crate::{Error, Result};

/// Closed disk `{(dy, dx) : dy² + dx² <= r²}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiskStrel {
    radius: usize,
    half_widths: Vec<usize>,
}

impl DiskStrel {
    pub fn new(radius: usize) -> Self {
        let r = radius as i64;
        let half_widths = (-r..=r).map(|dy| isqrt(r * r - dy * dy) as usize).collect();
        Self { radius, half_widths }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Horizontal half-extent of the disk at row offset `dy`.
    pub fn half_width(&self, dy: i64) -> usize {
        self.half_widths[(dy + self.radius as i64) as usize]
    }

    /// Every member offset, row-major.
    pub fn offsets(&self) -> Vec<(i64, i64)> {
        let r = self.radius as i64;
        let mut out = Vec::new();
        for dy in -r..=r {
            let h = self.half_width(dy) as i64;
            out.extend((-h..=h).map(|dx| (dy, dx)));
        }
        out
    }

    pub fn contains(&self, dy: i64, dx: i64) -> bool {
        dy.unsigned_abs() as usize <= self.radius && dx.unsigned_abs() as usize <= self.half_width(dy)
    }
}

fn isqrt(n: i64) -> i64 {
    let mut s = (n as f64).sqrt() as i64;
    while s * s > n {
        s -= 1;
    }
    while (s + 1) * (s + 1) <= n {
        s += 1;
    }
    s
}

/// A binary raster together with the value assumed outside its extent.
///
/// Complementing flips the exterior as well, which keeps
/// `erode = !dilate(!·)` exact up to the border.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryGrid {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
    pub exterior: bool,
}

impl BinaryGrid {
    /// Grid whose exterior is background.
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), height * width, "grid size");
        Self { height, width, bits, exterior: false }
    }

    pub fn complement(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| !b).collect(),
            exterior: !self.exterior,
        }
    }

    /// A pixel is set iff some pixel of the disk around it is set.
    pub fn dilate(&self, disk: &DiskStrel) -> Self {
        let (h, w) = (self.height, self.width);
        // prefix[y * (w + 1) + x] = number of set bits in row y before column x.
        let mut prefix = vec![0u32; h * (w + 1)];
        for y in 0..h {
            let row = &self.bits[y * w..(y + 1) * w];
            let p = &mut prefix[y * (w + 1)..(y + 1) * (w + 1)];
            for x in 0..w {
                p[x + 1] = p[x] + row[x] as u32;
            }
        }
        let r = disk.radius() as i64;
        let mut bits = vec![false; h * w];
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let mut hit = false;
                for dy in -r..=r {
                    let yy = y + dy;
                    let hx = disk.half_width(dy) as i64;
                    if yy < 0 || yy >= h as i64 {
                        if self.exterior {
                            hit = true;
                            break;
                        }
                        continue;
                    }
                    let lo = x - hx;
                    let hi = x + hx;
                    if self.exterior && (lo < 0 || hi >= w as i64) {
                        hit = true;
                        break;
                    }
                    let p = &prefix[yy as usize * (w + 1)..];
                    let (a, b) = (lo.max(0) as usize, (hi.min(w as i64 - 1) + 1) as usize);
                    if p[b] > p[a] {
                        hit = true;
                        break;
                    }
                }
                bits[y as usize * w + x as usize] = hit;
            }
        }
        Self { height: h, width: w, bits, exterior: self.exterior }
    }

    /// A pixel is set iff every pixel of the disk around it is set.
    pub fn erode(&self, disk: &DiskStrel) -> Self {
        self.complement().dilate(disk).complement()
    }
}

fn check_radius(radius: usize, height: usize, width: usize) -> Result<()> {
    if radius < 1 || 2 * radius >= height.min(width) {
        return Err(Error::InvalidRadius { radius, height, width });
    }
    Ok(())
}

fn grid_of(m: &Mask) -> Result<BinaryGrid> {
    Ok(BinaryGrid::new(m.height(), m.width(), m.bits()?))
}

fn mask_of(g: &BinaryGrid) -> Mask {
    Mask::from_bits(g.height, g.width, &g.bits).expect("grid dimensions are valid")
}

/// Dilation of a hard mask; pixels outside the grid count as background.
pub fn dilate(m: &Mask, radius: usize) -> Result<Mask> {
    let g = grid_of(m)?;
    check_radius(radius, m.height(), m.width())?;
    Ok(mask_of(&g.dilate(&DiskStrel::new(radius))))
}

/// Erosion of a hard mask; pixels outside the grid count as background, so
/// foreground touching the border shrinks.
pub fn erode(m: &Mask, radius: usize) -> Result<Mask> {
    let g = grid_of(m)?;
    check_radius(radius, m.height(), m.width())?;
    Ok(mask_of(&g.erode(&DiskStrel::new(radius))))
}

/// Boundary band of `m` binarized at 0.5: dilation minus erosion.
pub fn weight_map(m: &Mask, radius: usize) -> Result<Mask> {
    check_radius(radius, m.height(), m.width())?;
    let bits = weight_bits(m.height(), m.width(), &m.binarize(0.5).bits()?, radius);
    Ok(Mask::from_bits(m.height(), m.width(), &bits).expect("grid dimensions are valid"))
}

/// [`weight_map`] on raw foreground bits; no radius validation.
pub fn weight_bits(height: usize, width: usize, bits: &[bool], radius: usize) -> Vec<bool> {
    let disk = DiskStrel::new(radius);
    let g = BinaryGrid::new(height, width, bits.to_vec());
    let d = g.dilate(&disk);
    let e = g.erode(&disk);
    d.bits.iter().zip(&e.bits).map(|(&a, &b)| a && !b).collect()
}

/// Dilation on raw foreground bits with a background exterior.
pub fn dilate_bits(height: usize, width: usize, bits: &[bool], radius: usize) -> Vec<bool> {
    BinaryGrid::new(height, width, bits.to_vec()).dilate(&DiskStrel::new(radius)).bits
}

/// Erosion on raw foreground bits with a background exterior.
pub fn erode_bits(height: usize, width: usize, bits: &[bool], radius: usize) -> Vec<bool> {
    BinaryGrid::new(height, width, bits.to_vec()).erode(&DiskStrel::new(radius)).bits
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::complement;

    fn brute(m: &Mask, r: i64, all: bool) -> Vec<f64> {
        let (h, w) = (m.height() as i64, m.width() as i64);
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let mut acc = all;
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dy * dy + dx * dx > r * r {
                            continue;
                        }
                        let (yy, xx) = (y + dy, x + dx);
                        let v = yy >= 0 && yy < h && xx >= 0 && xx < w && m.get(yy as usize, xx as usize) == 1.0;
                        acc = if all { acc && v } else { acc || v };
                    }
                }
                out.push(acc as u8 as f64);
            }
        }
        out
    }

    fn point(n: usize, y: usize, x: usize) -> Mask {
        let mut bits = vec![false; n * n];
        bits[y * n + x] = true;
        Mask::from_bits(n, n, &bits).unwrap()
    }

    fn square(n: usize, side: usize) -> Mask {
        let o = (n - side) / 2;
        let bits: Vec<bool> = (0..n * n).map(|i| (o..o + side).contains(&(i / n)) && (o..o + side).contains(&(i % n))).collect();
        Mask::from_bits(n, n, &bits).unwrap()
    }

    #[test]
    fn disk_membership() {
        let d = DiskStrel::new(2);
        let offs = d.offsets();
        assert_eq!(offs.len(), 13);
        assert!(offs.contains(&(0, 0)));
        for &(dy, dx) in &offs {
            assert!(offs.contains(&(-dy, -dx)));
            assert!(dy * dy + dx * dx <= 4);
        }
        assert_eq!(DiskStrel::new(5).offsets().len(), 81);
        assert!(!d.contains(2, 1));
    }

    #[test]
    fn dilate_point_is_cross() {
        let m = point(9, 4, 4);
        let d = dilate(&m, 1).unwrap();
        let set: Vec<usize> = (0..81).filter(|&i| d.data()[i] == 1.0).collect();
        assert_eq!(set, vec![3 * 9 + 4, 4 * 9 + 3, 4 * 9 + 4, 4 * 9 + 5, 5 * 9 + 4]);
        assert_eq!(d.data(), brute(&m, 1, false).as_slice());
    }

    #[test]
    fn constant_masks() {
        let ones = Mask::filled(9, 9, 1.0).unwrap();
        let zeros = Mask::filled(9, 9, 0.0).unwrap();
        for r in 1..=3 {
            assert_eq!(dilate(&ones, r).unwrap(), ones);
            assert_eq!(dilate(&zeros, r).unwrap(), zeros);
            assert_eq!(erode(&zeros, r).unwrap(), zeros);
            assert_eq!(weight_map(&zeros, r).unwrap(), zeros);
        }
    }

    #[test]
    fn erode_full_grid_loses_frame() {
        let ones = Mask::filled(9, 9, 1.0).unwrap();
        let e = erode(&ones, 1).unwrap();
        for y in 0..9 {
            for x in 0..9 {
                let interior = (1..8).contains(&y) && (1..8).contains(&x);
                assert_eq!(e.get(y, x), interior as u8 as f64);
            }
        }
        assert_eq!(e.data(), brute(&ones, 1, true).as_slice());
        let w = weight_map(&ones, 1).unwrap();
        assert_eq!(w, complement(&e));
    }

    #[test]
    fn erode_point_vanishes() {
        assert!(erode(&point(9, 4, 4), 1).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weight_map_of_square() {
        let m = square(9, 3);
        let w = weight_map(&m, 1).unwrap();
        let oracle: Vec<f64> =
            brute(&m, 1, false).iter().zip(brute(&m, 1, true)).map(|(d, e)| d - e).collect();
        assert_eq!(w.data(), oracle.as_slice());
        // 3x3 square + 4-neighbour halo (12) minus the centre pixel.
        assert_eq!(w.data().iter().sum::<f64>(), 9.0 + 12.0 - 1.0);
        assert_eq!(w.get(4, 4), 0.0);
        assert_eq!(w.get(2, 4), 1.0);
        assert_eq!(w.get(2, 2), 0.0);
    }

    #[test]
    fn soft_and_radius_errors() {
        let soft = Mask::soft(9, 9, vec![0.5; 81]).unwrap();
        assert!(matches!(dilate(&soft, 1), Err(Error::SoftMask)));
        assert!(matches!(erode(&soft, 1), Err(Error::SoftMask)));
        assert!(weight_map(&soft, 1).is_ok());
        let m = square(9, 3);
        assert!(matches!(dilate(&m, 0), Err(Error::InvalidRadius { .. })));
        assert!(matches!(dilate(&m, 5), Err(Error::InvalidRadius { .. })));
        assert!(dilate(&m, 4).is_ok());
    }

    #[test]
    fn grid_duality_with_exterior() {
        let bits: Vec<bool> = (0..144).map(|i| (i * 7919) % 5 < 2).collect();
        let g = BinaryGrid::new(12, 12, bits);
        let disk = DiskStrel::new(2);
        assert_eq!(g.erode(&disk), g.complement().dilate(&disk).complement());
        assert_eq!(g.dilate(&disk), g.complement().erode(&disk).complement());
    }
}
