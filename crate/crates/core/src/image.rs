//! Per-camera single-channel images, masks, and image file I/O (PFM, PNG).

use crate::error::{Error, Result};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

/// Single-channel pixel array for one camera. Pixel `(ix, iy)` lives at
/// linear index `iy * npx + ix`. `valid` flags pixels inside the fisheye
/// image circle.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub npx: usize,
    pub npy: usize,
    pub data: Vec<f64>,
    pub valid: Vec<bool>,
}

impl Image {
    pub fn zeros(npx: usize, npy: usize) -> Image {
        Image {
            npx,
            npy,
            data: vec![0.0; npx * npy],
            valid: vec![true; npx * npy],
        }
    }

    pub fn with_validity(npx: usize, npy: usize, valid: Vec<bool>) -> Image {
        Image { npx, npy, data: vec![0.0; npx * npy], valid }
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.data[iy * self.npx + ix]
    }

    #[inline]
    pub fn n_pixels(&self) -> usize {
        self.npx * self.npy
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn add(&mut self, other: &Image) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Least-squares scalar fitting `b` to `a`: minimizes `||a - s*b||^2` over
/// pixels where `use_pixel` is true.
pub fn fit_scale<F: Fn(usize) -> bool>(a: &[f64], b: &[f64], use_pixel: F) -> Result<f64> {
    assert_eq!(a.len(), b.len());
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..a.len() {
        if use_pixel(i) {
            num += a[i] * b[i];
            den += b[i] * b[i];
        }
    }
    if den == 0.0 {
        return Err(Error::Invalid("scale fit reference is all zero".into()));
    }
    Ok(num / den)
}

/// Pearson correlation over selected pixels.
pub fn pearson<F: Fn(usize) -> bool>(a: &[f64], b: &[f64], use_pixel: F) -> f64 {
    let idx: Vec<usize> = (0..a.len()).filter(|i| use_pixel(*i)).collect();
    let n = idx.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let ma = idx.iter().map(|&i| a[i]).sum::<f64>() / n;
    let mb = idx.iter().map(|&i| b[i]).sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for &i in &idx {
        let (da, db) = (a[i] - ma, b[i] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Relative RMS of `a - b` over selected pixels, normalized by the RMS of `a`.
pub fn relative_rms<F: Fn(usize) -> bool>(a: &[f64], b: &[f64], use_pixel: F) -> f64 {
    let mut se = 0.0;
    let mut sa = 0.0;
    let mut n = 0usize;
    for i in 0..a.len() {
        if use_pixel(i) {
            se += (a[i] - b[i]) * (a[i] - b[i]);
            sa += a[i] * a[i];
            n += 1;
        }
    }
    if n == 0 || sa == 0.0 {
        return f64::INFINITY;
    }
    (se / sa).sqrt()
}

/// Writes a grayscale PFM ("Pf", little-endian, rows bottom-to-top).
pub fn write_pfm(img: &Image, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "Pf\n{} {}\n-1.0\n", img.npx, img.npy)?;
    for iy in (0..img.npy).rev() {
        for ix in 0..img.npx {
            f.write_all(&(img.at(ix, iy) as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a grayscale PFM written by [`write_pfm`].
pub fn read_pfm(path: &Path) -> Result<Image> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim() != "Pf" {
        return Err(Error::Parse(format!("{}: not a grayscale PFM", path.display())));
    }
    line.clear();
    r.read_line(&mut line)?;
    let mut it = line.split_whitespace();
    let npx: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse("bad PFM dims".into()))?;
    let npy: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse("bad PFM dims".into()))?;
    line.clear();
    r.read_line(&mut line)?;
    let scale: f64 = line
        .trim()
        .parse()
        .map_err(|_| Error::Parse("bad PFM scale".into()))?;
    let little_endian = scale < 0.0;
    let mut buf = vec![0u8; npx * npy * 4];
    r.read_exact(&mut buf)?;
    let mut img = Image::zeros(npx, npy);
    for iy in 0..npy {
        let row = npy - 1 - iy; // stored bottom-to-top
        for ix in 0..npx {
            let o = (row * npx + ix) * 4;
            let bytes = [buf[o], buf[o + 1], buf[o + 2], buf[o + 3]];
            let v = if little_endian {
                f32::from_le_bytes(bytes)
            } else {
                f32::from_be_bytes(bytes)
            };
            img.data[iy * npx + ix] = v as f64;
        }
    }
    Ok(img)
}

/// Writes a 16-bit grayscale PNG; values are mapped linearly from
/// `[0, max_value]` to the full u16 range.
pub fn write_png16(img: &Image, max_value: f64, path: &Path) -> Result<()> {
    let scale = if max_value > 0.0 { 65535.0 / max_value } else { 0.0 };
    let mut buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(img.npx as u32, img.npy as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        let v = img.at(x as usize, y as usize).max(0.0) * scale;
        *px = image::Luma([v.min(65535.0) as u16]);
    }
    buf.save(path).map_err(|e| Error::Invalid(format!("png write: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_scale_identity_and_double() {
        let a = vec![1.0, 2.0, 3.0];
        assert_eq!(fit_scale(&a, &a, |_| true).unwrap(), 1.0);
        let b: Vec<f64> = a.iter().map(|v| v / 2.0).collect();
        assert!((fit_scale(&a, &b, |_| true).unwrap() - 2.0).abs() < 1e-15);
        assert!(fit_scale(&a, &[0.0, 0.0, 0.0], |_| true).is_err());
    }

    #[test]
    fn pearson_perfect() {
        let a = vec![1.0, 2.0, 3.0, 4.0];
        let b = vec![2.0, 4.0, 6.0, 8.0];
        assert!((pearson(&a, &b, |_| true) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pfm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::zeros(3, 2);
        img.data = vec![0.0, 0.5, 1.5, -2.0, 8.25, 1e-3];
        let p = dir.path().join("x.pfm");
        write_pfm(&img, &p).unwrap();
        let back = read_pfm(&p).unwrap();
        assert_eq!(back.npx, 3);
        assert_eq!(back.npy, 2);
        for (a, b) in img.data.iter().zip(&back.data) {
            assert_eq!(*a as f32, *b as f32);
        }
    }
}
