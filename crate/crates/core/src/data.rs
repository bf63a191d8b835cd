//! Pixel arrays and image loading.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::parallel::{self, Exec};
use crate::schema::DatasetManifest;

/// An RGB image stored row-major as `H × W × 3` values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::DimensionMismatch {
                expected: height * width * 3,
                actual: data.len(),
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self { height, width, data }
    }

    #[inline]
    pub fn idx(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * 3 + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.idx(y, x, c)]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = self.idx(y, x, 0);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = self.idx(y, x, 0);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Quantizes to 8 bits, the resolution images have once written to disk.
    pub fn quantized(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| to_u8(v) as f32 / 255.0).collect(),
        }
    }

    pub fn mse(&self, other: &Image) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| {
                let d = (a - b) as f64;
                d * d
            })
            .sum();
        sum / self.data.len() as f64
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        let img = image::open(path)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Self::new(h as usize, w as usize, data)
    }

    /// Writes a lossless 8-bit RGB PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer size matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Decoded images keyed by record id.
#[derive(Debug, Clone, Default)]
pub struct ImageBank {
    images: HashMap<String, Arc<Image>>,
}

impl ImageBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(manifest: &DatasetManifest) -> Result<Self> {
        let mut bank = Self::new();
        bank.extend_from(manifest)?;
        Ok(bank)
    }

    /// Loads every image of `manifest` not already present.
    pub fn extend_from(&mut self, manifest: &DatasetManifest) -> Result<()> {
        let missing: Vec<_> = manifest
            .records
            .iter()
            .filter(|r| !self.images.contains_key(&r.id))
            .collect();
        let loaded = parallel::try_map(Exec::default(), &missing, |r| {
            Image::load(&manifest.image_path(r)).map(Arc::new)
        })?;
        for (r, img) in missing.into_iter().zip(loaded) {
            self.images.insert(r.id.clone(), img);
        }
        Ok(())
    }

    pub fn insert(&mut self, id: impl Into<String>, image: Image) {
        self.images.insert(id.into(), Arc::new(image));
    }

    pub fn get(&self, id: &str) -> Result<&Arc<Image>> {
        self.images
            .get(id)
            .ok_or_else(|| Error::EmptyData(format!("no image loaded for record `{id}`")))
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Images for every record of `manifest`, in record order.
    pub fn for_manifest(&self, manifest: &DatasetManifest) -> Result<Vec<Arc<Image>>> {
        manifest
            .records
            .iter()
            .map(|r| self.get(&r.id).cloned())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_lossless_at_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::filled(4, 5, [0.1, 0.5, 0.9]);
        img.set_pixel(2, 3, [1.0, 0.0, 0.25]);
        let q = img.quantized();
        let path = dir.path().join("a.png");
        q.save_png(&path).unwrap();
        assert_eq!(Image::load(&path).unwrap(), q);
    }

    #[test]
    fn size_mismatch_rejected() {
        assert!(Image::new(2, 2, vec![0.0; 11]).is_err());
    }

    #[test]
    fn missing_file_is_not_found() {
        assert!(matches!(
            Image::load(Path::new("/nonexistent/x.png")),
            Err(Error::NotFound(_))
        ));
    }
}
