//! Camera measurement simulation: global gain to graylevels, Gaussian read
//! noise, clipping, quantization, and the sun mask.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::packet_rng;
use crate::scene::{Camera, Sun};
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, Debug)]
pub struct SensorModel {
    pub bit_depth: u32,
    /// Read-noise standard deviation in graylevels; 0 disables noise.
    pub read_noise: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel { bit_depth: 10, read_noise: 0.4 }
    }
}

impl SensorModel {
    pub fn full_scale(&self) -> f64 {
        (1u64 << self.bit_depth) as f64
    }
}

/// Per-pixel exclusion mask: `true` entries are dropped from costs,
/// gradients, and gain normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct SunMask {
    pub npx: usize,
    pub npy: usize,
    pub masked: Vec<bool>,
}

impl SunMask {
    #[inline]
    pub fn is_masked(&self, pixel: usize) -> bool {
        self.masked[pixel]
    }

    pub fn n_unmasked(&self) -> usize {
        self.masked.iter().filter(|m| !**m).count()
    }
}

/// Masks pixels whose central view direction lies within `radius_deg` of the
/// direction toward the sun, plus all pixels outside the image circle.
pub fn build_sun_mask(camera: &Camera, sun: &Sun, radius_deg: f64) -> SunMask {
    assert!(radius_deg >= 0.0);
    let toward = sun.toward();
    let cos_radius = radius_deg.to_radians().cos();
    let mut masked = vec![true; camera.n_pixels()];
    for iy in 0..camera.npy {
        for ix in 0..camera.npx {
            let p = camera.pixel_index(ix, iy);
            match camera.center_dir(ix, iy) {
                None => masked[p] = true,
                Some(d) => masked[p] = d.dot(toward) > cos_radius,
            }
        }
    }
    SunMask { npx: camera.npx, npy: camera.npy, masked }
}

/// Applies the sensor model to a set of images (any cameras/channels):
/// one global gain maps the maximum unmasked pixel to the full graylevel
/// scale, then Gaussian read noise is added and values are clipped to
/// `[0, 2^bits]` and rounded. `masks` must parallel `images`.
/// Returns the measured images and the gain that was applied.
pub fn apply_sensor(
    images: &[Image],
    masks: &[&SunMask],
    model: &SensorModel,
    seed: u64,
) -> Result<(Vec<Image>, f64)> {
    if images.len() != masks.len() {
        return Err(Error::Dimension("images and masks differ in length".into()));
    }
    let mut max_val = 0.0f64;
    for (img, mask) in images.iter().zip(masks) {
        if img.n_pixels() != mask.masked.len() {
            return Err(Error::Dimension("mask shape != image shape".into()));
        }
        for (p, v) in img.data.iter().enumerate() {
            if !mask.is_masked(p) && *v > max_val {
                max_val = *v;
            }
        }
    }
    if max_val <= 0.0 {
        return Err(Error::Invalid(
            "all unmasked pixels are zero or masked; cannot set sensor gain".into(),
        ));
    }
    let full = model.full_scale();
    let gain = full / max_val;
    let mut rng = packet_rng(seed, 0x5E75);
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut out = Vec::with_capacity(images.len());
    for img in images {
        let mut m = img.clone();
        for v in &mut m.data {
            let noise = if model.read_noise > 0.0 {
                model.read_noise * normal.sample(&mut rng)
            } else {
                0.0
            };
            *v = (*v * gain + noise).clamp(0.0, full).round();
        }
        out.push(m);
    }
    // burn one draw so consecutive seeds do not alias trivially
    let _: f64 = rng.gen();
    Ok((out, gain))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;

    fn cam() -> Camera {
        Camera::new(Vec3::ZERO, 16, 16).unwrap()
    }

    fn sun() -> Sun {
        Sun::new(45.0, 30.0, [255.0, 236.0, 224.0]).unwrap()
    }

    #[test]
    fn gain_maps_global_max_to_full_scale() {
        let c = cam();
        let mask = build_sun_mask(&c, &sun(), 0.0);
        let mut a = Image::zeros(16, 16);
        let mut b = Image::zeros(16, 16);
        // put the global max in image b at an unmasked pixel
        let p_free = (0..256).find(|p| !mask.is_masked(*p)).unwrap();
        a.data[p_free] = 1.0;
        b.data[p_free] = 4.0;
        let model = SensorModel { bit_depth: 10, read_noise: 0.0 };
        let (out, gain) = apply_sensor(&[a, b], &[&mask, &mask], &model, 1).unwrap();
        assert_eq!(gain, 256.0);
        assert_eq!(out[1].data[p_free], 1024.0);
        assert_eq!(out[0].data[p_free], 256.0);
        // integers in range everywhere
        for img in &out {
            for v in &img.data {
                assert!(*v >= 0.0 && *v <= 1024.0 && v.fract() == 0.0);
            }
        }
    }

    #[test]
    fn noise_free_mode_is_gain_and_round() {
        let c = cam();
        let mask = build_sun_mask(&c, &sun(), 0.0);
        let mut a = Image::zeros(16, 16);
        for (p, v) in a.data.iter_mut().enumerate() {
            *v = (p as f64) / 300.0;
        }
        let model = SensorModel { bit_depth: 10, read_noise: 0.0 };
        let (out, gain) = apply_sensor(&[a.clone()], &[&mask], &model, 7).unwrap();
        for (p, v) in out[0].data.iter().enumerate() {
            let ideal = a.data[p] * gain;
            assert!((v - ideal).abs() <= 0.5, "quantization bound at {p}");
            assert_eq!(*v, ideal.round().clamp(0.0, 1024.0));
        }
    }

    #[test]
    fn noise_clips_at_zero() {
        let c = cam();
        let mask = build_sun_mask(&c, &sun(), 0.0);
        let mut a = Image::zeros(16, 16);
        let p_free = (0..256).find(|p| !mask.is_masked(*p)).unwrap();
        a.data[p_free] = 1.0;
        let model = SensorModel { bit_depth: 10, read_noise: 5000.0 };
        let (out, _) = apply_sensor(&[a], &[&mask], &model, 3).unwrap();
        for v in &out[0].data {
            assert!(*v >= 0.0 && *v <= 1024.0);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let c = cam();
        let mask = build_sun_mask(&c, &sun(), 10.0);
        let mut a = Image::zeros(16, 16);
        for (p, v) in a.data.iter_mut().enumerate() {
            *v = ((p * 37) % 101) as f64;
        }
        let model = SensorModel::default();
        let (o1, g1) = apply_sensor(&[a.clone()], &[&mask], &model, 42).unwrap();
        let (o2, g2) = apply_sensor(&[a], &[&mask], &model, 42).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(o1[0].data, o2[0].data);
    }

    #[test]
    fn all_masked_input_errors() {
        let c = cam();
        let mask = build_sun_mask(&c, &sun(), 180.0);
        assert_eq!(mask.n_unmasked(), 0);
        let a = Image::zeros(16, 16);
        assert!(apply_sensor(&[a], &[&mask], &SensorModel::default(), 1).is_err());
    }

    #[test]
    fn mask_radius_limits() {
        let c = cam();
        // radius 0: only invalid pixels masked
        let m0 = build_sun_mask(&c, &sun(), 0.0);
        let valid = c.valid_mask();
        for p in 0..c.n_pixels() {
            assert_eq!(m0.is_masked(p), !valid[p]);
        }
        // radius 180: everything masked
        let m180 = build_sun_mask(&c, &sun(), 180.0);
        assert!(m180.masked.iter().all(|m| *m));
        // brute-force angle check at 15 degrees
        let s = sun();
        let m15 = build_sun_mask(&c, &s, 15.0);
        for iy in 0..16 {
            for ix in 0..16 {
                let p = c.pixel_index(ix, iy);
                let expect = match c.center_dir(ix, iy) {
                    None => true,
                    Some(d) => d.dot(s.toward()).acos().to_degrees() < 15.0,
                };
                assert_eq!(m15.is_masked(p), expect, "pixel ({ix},{iy})");
            }
        }
    }
}
