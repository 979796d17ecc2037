//! Oracles shared by the property suites and the acceptance run.

#![allow(dead_code)]

use tfn_core::data::{BBox, Image};
use tfn_core::vam::Palette;

/// A pixel belongs to a box when its unit square overlaps the box's open interior.
pub fn covers(b: &BBox, x: usize, y: usize) -> bool {
    let (x, y) = (x as f64, y as f64);
    x + 1.0 > b[0] && x < b[2] && y + 1.0 > b[1] && y < b[3]
}

/// First pixel where `out` disagrees with drawing `boxes` over `im` in
/// order, later boxes on top, blue and green from the palette, red kept.
pub fn overlay_mismatch(im: &Image, out: &Image, boxes: &[BBox], pal: &Palette, first: usize) -> Option<String> {
    if (out.width, out.height) != (im.width, im.height) {
        return Some(format!("size {}x{} became {}x{}", im.width, im.height, out.width, out.height));
    }
    for y in 0..im.height {
        for x in 0..im.width {
            let (a, b) = (im.pixel(x, y), out.pixel(x, y));
            if a[2] != b[2] {
                return Some(format!("red changed at ({x}, {y})"));
            }
            let want = match boxes.iter().rposition(|bx| covers(bx, x, y)) {
                // Palette entries are RGB; images are stored B, G, R.
                Some(i) => {
                    let [_, g, bl] = pal.colors[first + i];
                    [bl, g, a[2]]
                }
                None => a,
            };
            if b != want {
                return Some(format!("pixel ({x}, {y}) is {b:?}, expected {want:?}"));
            }
        }
    }
    None
}

/// Twice the number of ordered pairs plus ties, over twice the pair count.
pub fn pairwise_auc(p: &[f64], y: &[u8]) -> Option<f64> {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for i in (0..p.len()).filter(|&i| y[i] == 1) {
        for j in (0..p.len()).filter(|&j| y[j] == 0) {
            pairs += 1;
            twice += if p[i] > p[j] { 2 } else if p[i] == p[j] { 1 } else { 0 };
        }
    }
    (pairs > 0).then(|| twice as f64 / (2 * pairs) as f64)
}
