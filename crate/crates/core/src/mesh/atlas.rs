use std::path::Path;

use image::{GrayImage, Rgb, RgbImage};

use crate::{Error, Result};

use super::Uv;

/// RGB texture image. Pixel `(i, j)` is row `i`, column `j`; row 0 is the top
/// of the image, which is `v = 1` in UV space.
#[derive(Clone, Debug, PartialEq)]
pub struct TextureAtlas {
    pub image: RgbImage,
}

impl TextureAtlas {
    /// All-black atlas.
    pub fn black(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("atlas dimensions must be at least 1"));
        }
        Ok(Self {
            image: RgbImage::new(width, height),
        })
    }

    pub fn from_image(image: RgbImage) -> Result<Self> {
        if image.width() == 0 || image.height() == 0 {
            return Err(Error::invalid("atlas dimensions must be at least 1"));
        }
        Ok(Self { image })
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    pub fn get(&self, row: u32, col: u32) -> [u8; 3] {
        self.image.get_pixel(col, row).0
    }

    pub fn set(&mut self, row: u32, col: u32, rgb: [u8; 3]) {
        self.image.put_pixel(col, row, Rgb(rgb));
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingTexture(path.to_path_buf()));
        }
        Self::from_image(image::open(path)?.to_rgb8())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.image.save(path)?;
        Ok(())
    }

    /// Bilinear sample at a UV coordinate; returns channel values in `[0, 255]`.
    /// Lookups clamp to the border texels.
    pub fn sample_bilinear(&self, uv: Uv) -> [f64; 3] {
        let (w, h) = (self.width() as i64, self.height() as i64);
        let x = uv[0] * w as f64 - 0.5;
        let y = (1.0 - uv[1]) * h as f64 - 0.5;
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let px = |xi: i64, yi: i64| {
            let p = self.image.get_pixel(xi.clamp(0, w - 1) as u32, yi.clamp(0, h - 1) as u32);
            [p[0] as f64, p[1] as f64, p[2] as f64]
        };
        let (x0, y0) = (x0 as i64, y0 as i64);
        let a = px(x0, y0);
        let b = px(x0 + 1, y0);
        let c = px(x0, y0 + 1);
        let d = px(x0 + 1, y0 + 1);
        let mut out = [0.0; 3];
        for k in 0..3 {
            let top = a[k] * (1.0 - fx) + b[k] * fx;
            let bot = c[k] * (1.0 - fx) + d[k] * fx;
            out[k] = top * (1.0 - fy) + bot * fy;
        }
        out
    }

    /// Nearest-texel lookup at a UV coordinate.
    pub fn sample_nearest(&self, uv: Uv) -> [u8; 3] {
        let (w, h) = (self.width() as f64, self.height() as f64);
        let col = (uv[0] * w).floor().clamp(0.0, w - 1.0) as u32;
        let row = ((1.0 - uv[1]) * h).floor().clamp(0.0, h - 1.0) as u32;
        self.get(row, col)
    }
}

/// Binary image; `true` is 1 (valid / foreground).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl Mask {
    pub fn filled(width: u32, height: u32, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; (width * height) as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<bool>) -> Result<Self> {
        if data.len() != (width * height) as usize {
            return Err(Error::ShapeMismatch {
                left: vec![data.len()],
                right: vec![height as usize, width as usize],
                context: "mask data",
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, row: u32, col: u32) -> bool {
        self.data[(row * self.width + col) as usize]
    }

    pub fn set(&mut self, row: u32, col: u32, v: bool) {
        self.data[(row * self.width + col) as usize] = v;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Stored as an 8-bit grayscale PNG: 0 for false, 255 for true.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = GrayImage::from_fn(self.width, self.height, |x, y| {
            image::Luma([if self.get(y, x) { 255 } else { 0 }])
        });
        img.save(path)?;
        Ok(())
    }

    /// Gray values >= 128 read as true.
    pub fn load_png(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::invalid(format!("mask not found: {}", path.display())));
        }
        let img = image::open(path)?.to_luma8();
        let data = img.pixels().map(|p| p[0] >= 128).collect();
        Self::from_vec(img.width(), img.height(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_at_texel_center_is_exact() {
        let mut a = TextureAtlas::black(4, 3).unwrap();
        for r in 0..3 {
            for c in 0..4 {
                a.set(r, c, [(r * 40 + c) as u8, 7, 200]);
            }
        }
        for r in 0..3 {
            for c in 0..4 {
                let uv = [(c as f64 + 0.5) / 4.0, 1.0 - (r as f64 + 0.5) / 3.0];
                let s = a.sample_bilinear(uv);
                let p = a.get(r, c);
                for k in 0..3 {
                    assert!((s[k] - p[k] as f64).abs() < 1e-9);
                }
                assert_eq!(a.sample_nearest(uv), p);
            }
        }
    }

    #[test]
    fn mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let mut m = Mask::filled(5, 3, false);
        m.set(1, 2, true);
        m.set(2, 4, true);
        m.save_png(&p).unwrap();
        assert_eq!(Mask::load_png(&p).unwrap(), m);
    }
}
