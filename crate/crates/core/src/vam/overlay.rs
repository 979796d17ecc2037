//! Trajectory overlays: filled boxes written into the blue and green
//! channels only, coloured by timestep.

use crate::data::{BBox, Image};
use crate::error::{Error, Result};

use super::palette::Palette;

/// Pixel span `[lo, hi)` touched by the interval `[a, b)`, clipped to `0..n`.
/// Empty when `b <= a`.
fn span(a: f64, b: f64, n: usize) -> (usize, usize) {
    if b <= a {
        return (0, 0);
    }
    let lo = a.floor().max(0.0).min(n as f64) as usize;
    let hi = b.ceil().max(0.0).min(n as f64) as usize;
    (lo, hi.max(lo))
}

/// Columns and rows covered by `bbox` in an image of the given size.
pub fn box_pixels(bbox: &BBox, width: usize, height: usize) -> ((usize, usize), (usize, usize)) {
    (span(bbox[0], bbox[2], width), span(bbox[1], bbox[3], height))
}

/// Draws `boxes` in order onto a copy of `image`; box `i` takes palette
/// entry `first_index + i`. Later boxes cover earlier ones. The red channel
/// is never written.
pub fn render_overlay(image: &Image, boxes: &[BBox], palette: &Palette, first_index: usize) -> Result<Image> {
    let mut out = image.clone();
    draw_overlay(&mut out, boxes, palette, first_index)?;
    Ok(out)
}

/// In-place form of [`render_overlay`].
pub fn draw_overlay(image: &mut Image, boxes: &[BBox], palette: &Palette, first_index: usize) -> Result<()> {
    if palette.is_empty() {
        return Err(Error::Data("overlay palette is empty".into()));
    }
    if first_index + boxes.len() > palette.len() {
        return Err(Error::Data(format!(
            "overlay needs {} palette entries, palette has {}",
            first_index + boxes.len(),
            palette.len()
        )));
    }
    if let Some(b) = boxes.iter().find(|b| b.iter().any(|v| !v.is_finite())) {
        return Err(Error::Data(format!("non-finite overlay box {b:?}")));
    }
    let (w, h) = (image.width, image.height);
    for (i, b) in boxes.iter().enumerate() {
        let (bl, gr) = palette.blue_green(first_index + i).expect("index checked above");
        let ((x0, x1), (y0, y1)) = box_pixels(b, w, h);
        for y in y0..y1 {
            let row = &mut image.data[(y * w + x0) * 3..(y * w + x1) * 3];
            for px in row.chunks_exact_mut(3) {
                px[0] = bl;
                px[1] = gr;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray() -> Image {
        let mut im = Image::filled(20, 10, [10, 20, 30]);
        for (i, v) in im.data.iter_mut().enumerate() {
            *v = (i * 7 % 251) as u8;
        }
        im
    }

    #[test]
    fn no_boxes_is_identity() {
        let im = gray();
        assert_eq!(render_overlay(&im, &[], &Palette::ade20k(), 0).unwrap(), im);
    }

    #[test]
    fn later_box_wins_and_red_untouched() {
        let im = gray();
        let pal = Palette::ade20k();
        let out = render_overlay(&im, &[[2.0, 2.0, 8.0, 6.0], [5.0, 3.0, 12.0, 9.0]], &pal, 0).unwrap();
        let (b0, g0) = pal.blue_green(0).unwrap();
        let (b1, g1) = pal.blue_green(1).unwrap();
        assert_eq!(&out.pixel(3, 3)[..2], &[b0, g0]);
        assert_eq!(&out.pixel(6, 4)[..2], &[b1, g1]);
        assert_eq!(out.pixel(15, 1), im.pixel(15, 1));
        assert_eq!(out.channel(2), im.channel(2));
    }

    #[test]
    fn clipped_and_errors() {
        let im = gray();
        let pal = Palette::ade20k();
        let out = render_overlay(&im, &[[-5.0, -5.0, 100.0, 100.0]], &pal, 74).unwrap();
        let (b, g) = pal.blue_green(74).unwrap();
        assert!(out.data.chunks(3).all(|p| p[0] == b && p[1] == g));
        assert!(render_overlay(&im, &[[0.0; 4]; 3], &pal, 78).is_err());
        assert!(render_overlay(&im, &[[f64::NAN, 0.0, 1.0, 1.0]], &pal, 0).is_err());
        let p1 = Palette::parse("1,2,3").unwrap();
        assert!(render_overlay(&im, &[[0.0, 0.0, 1.0, 1.0]; 2], &p1, 0).is_err());
    }
}
