//! RGB images in `[0, 1]`, PNG I/O and differentiable resampling maps.

use std::io::Cursor;
use std::path::Path;
use std::sync::Arc;

use crate::autodiff::{SparseMap, Tensor};
use crate::error::{Error, Result};

/// Row-major RGB image; `pixels` is `[height * width, 3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Tensor,
}

impl Image {
    pub fn from_tensor(width: usize, height: usize, pixels: Tensor) -> Result<Self> {
        if pixels.shape() != (width * height, 3) {
            return Err(Error::shape(format!("{width}x{height} RGB image needs [{}, 3] pixels, got {:?}", width * height, pixels.shape())));
        }
        if !pixels.all_finite() {
            return Err(Error::Image("image has non-finite pixels".into()));
        }
        Ok(Image { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Image { width, height, pixels: Tensor::from_fn(width * height, 3, |_, c| rgb[c]) }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn into_pixels(self) -> Tensor {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let r = self.pixels.row_slice(y * self.width + x);
        [r[0], r[1], r[2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        for (c, v) in rgb.iter().enumerate() {
            self.pixels.set(y * self.width + x, c, *v);
        }
    }

    pub fn mean_color(&self) -> [f64; 3] {
        let n = (self.width * self.height).max(1) as f64;
        let mut acc = [0.0; 3];
        for r in 0..self.pixels.rows() {
            for (c, a) in acc.iter_mut().enumerate() {
                *a += self.pixels.get(r, c);
            }
        }
        acc.map(|a| a / n)
    }

    pub fn mse(&self, other: &Image) -> Result<f64> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::shape(format!(
                "image sizes differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let n = self.pixels.len() as f64;
        Ok(self.pixels.data().iter().zip(other.pixels.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
    }

    /// Peak signal-to-noise ratio in dB for a peak value of 1.
    pub fn psnr(&self, other: &Image) -> Result<f64> {
        let mse = self.mse(other)?;
        Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * 3 {
            return Err(Error::Image(format!("expected {} RGB bytes, got {}", width * height * 3, bytes.len())));
        }
        let data = bytes.iter().map(|&b| b as f64 / 255.0).collect();
        Image::from_tensor(width, height, Tensor::from_vec(width * height, 3, data))
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .ok_or_else(|| Error::Image("buffer size mismatch".into()))?;
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png).map_err(|e| Error::Image(e.to_string()))?;
        Ok(out.into_inner())
    }

    /// Decode PNG or JPEG bytes; transparent pixels are composited over white.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes).map_err(|e| Error::Image(e.to_string()))?;
        let rgba = img.to_rgba8();
        let (w, h) = (rgba.width() as usize, rgba.height() as usize);
        if w == 0 || h == 0 {
            return Err(Error::Image("image has no pixels".into()));
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for p in rgba.pixels() {
            let a = p[3] as f64 / 255.0;
            for c in 0..3 {
                data.push(p[c] as f64 / 255.0 * a + (1.0 - a));
            }
        }
        Image::from_tensor(w, h, Tensor::from_vec(w * h, 3, data))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Image::decode(&bytes).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_png()?)?;
        Ok(())
    }

    /// Quantise to 8 bits per channel and back, as a PNG round trip would.
    pub fn quantized(&self) -> Image {
        Image::from_rgb8(self.width, self.height, &self.to_rgb8()).expect("same size")
    }
}

fn triangle_weights(out_len: usize, in_len: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = in_len as f64 / out_len as f64;
    let support = scale.max(1.0);
    (0..out_len)
        .map(|j| {
            let center = (j as f64 + 0.5) * scale;
            let lo = ((center - support).floor().max(0.0)) as usize;
            let hi = ((center + support).ceil() as usize).min(in_len);
            let mut w: Vec<(usize, f64)> = (lo..hi)
                .filter_map(|i| {
                    let d = ((i as f64 + 0.5) - center).abs() / support;
                    (d < 1.0).then_some((i, 1.0 - d))
                })
                .collect();
            if w.is_empty() {
                let nearest = (center.floor() as usize).min(in_len - 1);
                w.push((nearest, 1.0));
            }
            let total: f64 = w.iter().map(|p| p.1).sum();
            w.iter_mut().for_each(|p| p.1 /= total);
            w
        })
        .collect()
}

/// Linear map resizing a flattened `[in_h * in_w, 3]` image to `[out_h * out_w, 3]`
/// with a triangle (bilinear) filter widened when downscaling.
pub fn resize_map(in_w: usize, in_h: usize, out_w: usize, out_h: usize) -> Arc<SparseMap> {
    let wx = triangle_weights(out_w, in_w);
    let wy = triangle_weights(out_h, in_h);
    let mut rows = Vec::with_capacity(out_w * out_h * 3);
    for y in 0..out_h {
        for x in 0..out_w {
            for c in 0..3 {
                let mut row = Vec::with_capacity(wx[x].len() * wy[y].len());
                for &(iy, ay) in &wy[y] {
                    for &(ix, ax) in &wx[x] {
                        row.push(((iy * in_w + ix) * 3 + c, ay * ax));
                    }
                }
                rows.push(row);
            }
        }
    }
    Arc::new(SparseMap::from_rows(in_w * in_h * 3, rows))
}

/// Linear map sampling a flattened image bilinearly at continuous pixel
/// coordinates (pixel centres at `i + 0.5`, edges clamped).
pub fn bilinear_sample_map(width: usize, height: usize, coords: &[(f64, f64)]) -> Arc<SparseMap> {
    let axis = |p: f64, len: usize| -> [(usize, f64); 2] {
        let x = (p - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = x.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        let f = x - i0 as f64;
        [(i0, 1.0 - f), (i1, f)]
    };
    let mut rows = Vec::with_capacity(coords.len() * 3);
    for &(u, v) in coords {
        let ax = axis(u, width);
        let ay = axis(v, height);
        for c in 0..3 {
            let mut row = Vec::with_capacity(4);
            for &(iy, wy) in &ay {
                for &(ix, wx) in &ax {
                    if wx * wy != 0.0 {
                        row.push(((iy * width + ix) * 3 + c, wx * wy));
                    }
                }
            }
            rows.push(row);
        }
    }
    Arc::new(SparseMap::from_rows(width * height * 3, rows))
}

impl Image {
    pub fn resized(&self, width: usize, height: usize) -> Image {
        let map = resize_map(self.width, self.height, width, height);
        let px = map.apply(&self.pixels, false, width * height, 3);
        Image { width, height, pixels: px }
    }

    /// Bilinear samples `[coords.len(), 3]`.
    pub fn sample(&self, coords: &[(f64, f64)]) -> Tensor {
        bilinear_sample_map(self.width, self.height, coords).apply(&self.pixels, false, coords.len(), 3)
    }
}
