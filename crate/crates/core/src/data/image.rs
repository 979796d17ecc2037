//! 8-bit images stored interleaved in B, G, R order.

use std::path::Path;

use crate::error::{data_err, io_err, Result};

/// Per-channel normalization constants in B, G, R order (0..1 scale).
pub const PIXEL_MEAN_BGR: [f32; 3] = [0.406, 0.456, 0.485];
pub const PIXEL_STD_BGR: [f32; 3] = [0.225, 0.224, 0.229];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// `height * width * 3` bytes, pixel-major, channels B, G, R.
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, bgr: [u8; 3]) -> Self {
        let mut im = Self::new(width, height);
        for px in im.data.chunks_exact_mut(3) {
            px.copy_from_slice(&bgr);
        }
        im
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, bgr: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&bgr);
    }

    /// One channel (0 = B, 1 = G, 2 = R) as a plane.
    pub fn channel(&self, c: usize) -> Vec<u8> {
        self.data.iter().skip(c).step_by(3).copied().collect()
    }

    /// Bilinear resize with half-pixel centers, rounded to 8 bits.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        let planes = self.resize_planar(width, height);
        let mut out = Image::new(width, height);
        for c in 0..3 {
            for i in 0..width * height {
                out.data[i * 3 + c] = planes[c * width * height + i].round().clamp(0.0, 255.0) as u8;
            }
        }
        out
    }

    /// Bilinear resize into planar `[3, height, width]` floats (0..255).
    pub fn resize_planar(&self, width: usize, height: usize) -> Vec<f32> {
        let mut out = vec![0f32; 3 * width * height];
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        let taps = |o: usize, scale: f32, n: usize| {
            let f = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (f.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, f - i0 as f32)
        };
        let xt: Vec<_> = (0..width).map(|x| taps(x, sx, self.width)).collect();
        for y in 0..height {
            let (y0, y1, fy) = taps(y, sy, self.height);
            for (x, &(x0, x1, fx)) in xt.iter().enumerate() {
                let p00 = self.pixel(x0, y0);
                let p01 = self.pixel(x1, y0);
                let p10 = self.pixel(x0, y1);
                let p11 = self.pixel(x1, y1);
                for c in 0..3 {
                    let top = p00[c] as f32 * (1.0 - fx) + p01[c] as f32 * fx;
                    let bot = p10[c] as f32 * (1.0 - fx) + p11[c] as f32 * fx;
                    out[(c * height + y) * width + x] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
        out
    }

    /// Network input: resized, planar B, G, R, normalized with the pinned
    /// mean/std constants.
    pub fn to_network_input(&self, size: usize) -> Vec<f32> {
        let mut v = self.resize_planar(size, size);
        let plane = size * size;
        for (c, chunk) in v.chunks_mut(plane).enumerate() {
            let (m, s) = (PIXEL_MEAN_BGR[c], PIXEL_STD_BGR[c]);
            for x in chunk {
                *x = (*x / 255.0 - m) / s;
            }
        }
        v
    }

    /// Binary PPM (P6). PPM stores R, G, B; channels are swapped on write.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.data.len());
        for px in self.data.chunks_exact(3) {
            out.extend_from_slice(&[px[2], px[1], px[0]]);
        }
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Image> {
        let mut pos = 0usize;
        let mut fields = [0usize; 3];
        let magic = next_token(bytes, &mut pos).ok_or_else(|| data_err("ppm: missing magic"))?;
        if magic != b"P6" {
            return Err(data_err("ppm: only binary P6 is supported"));
        }
        for f in &mut fields {
            let tok = next_token(bytes, &mut pos).ok_or_else(|| data_err("ppm: truncated header"))?;
            *f = std::str::from_utf8(tok)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| data_err("ppm: bad header number"))?;
        }
        let [w, h, maxval] = fields;
        if maxval != 255 {
            return Err(data_err(format!("ppm: maxval {maxval} unsupported (need 255)")));
        }
        if w == 0 || h == 0 {
            return Err(data_err("ppm: empty image"));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let n = w
            .checked_mul(h)
            .and_then(|v| v.checked_mul(3))
            .ok_or_else(|| data_err("ppm: dimensions overflow"))?;
        let raster = bytes
            .get(pos..)
            .filter(|r| r.len() >= n)
            .ok_or_else(|| data_err("ppm: truncated raster"))?;
        let mut data = Vec::with_capacity(n);
        for px in raster[..n].chunks_exact(3) {
            data.extend_from_slice(&[px[2], px[1], px[0]]);
        }
        Ok(Image {
            width: w,
            height: h,
            data,
        })
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        if let Some(d) = path.parent() {
            std::fs::create_dir_all(d).map_err(io_err(d))?;
        }
        std::fs::write(path, self.to_ppm()).map_err(io_err(path))
    }

    pub fn load_ppm(path: &Path) -> Result<Image> {
        Image::from_ppm(&std::fs::read(path).map_err(io_err(path))?)
    }
}

fn next_token<'a>(b: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < b.len() && b[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < b.len() && b[*pos] == b'#' {
            while *pos < b.len() && b[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < b.len() && !b[*pos].is_ascii_whitespace() && b[*pos] != b'#' {
        *pos += 1;
    }
    (*pos > start).then(|| &b[start..*pos])
}
