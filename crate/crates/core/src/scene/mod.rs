//! The voxelized atmospheric domain: grid, media, cameras, sun.
//!
//! A [`Scene`] is immutable after construction and is shared read-only by all
//! transport workers.

pub mod generators;
pub mod io;

use crate::error::{Error, Result};
use crate::math::Vec3;
use serde::{Deserialize, Serialize};

/// Color channel of the three discrete wavelengths carried by the engine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    R,
    G,
    B,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::R, Channel::G, Channel::B];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Channel::R => 0,
            Channel::G => 1,
            Channel::B => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::R => "r",
            Channel::G => "g",
            Channel::B => "b",
        }
    }

    pub fn from_name(s: &str) -> Option<Channel> {
        match s {
            "r" | "R" => Some(Channel::R),
            "g" | "G" => Some(Channel::G),
            "b" | "B" => Some(Channel::B),
            _ => None,
        }
    }
}

/// Axis-aligned grid of rectangular cuboid voxels.
///
/// Linear index runs x-fastest: `k = ix + nx*(iy + ny*iz)`. Voxel ownership
/// of boundary points follows the half-open convention `[low, high)` on every
/// axis, so each point of the open domain belongs to exactly one voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub origin: Vec3,
    pub spacing: Vec3,
}

impl VoxelGrid {
    pub fn new(nx: usize, ny: usize, nz: usize, origin: Vec3, spacing: Vec3) -> Result<Self> {
        if nx < 1 || ny < 1 || nz < 1 {
            return Err(Error::validation("grid", "voxel counts must be >= 1"));
        }
        if !(spacing.x > 0.0 && spacing.y > 0.0 && spacing.z > 0.0) {
            return Err(Error::validation("grid.spacing", "voxel dims must be > 0"));
        }
        if !origin.is_finite() || !spacing.is_finite() {
            return Err(Error::validation("grid", "origin/spacing must be finite"));
        }
        Ok(VoxelGrid { nx, ny, nz, origin, spacing })
    }

    #[inline]
    pub fn n_voxels(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn voxel_volume(&self) -> f64 {
        self.spacing.x * self.spacing.y * self.spacing.z
    }

    #[inline]
    pub fn dim(&self, axis: usize) -> usize {
        match axis {
            0 => self.nx,
            1 => self.ny,
            _ => self.nz,
        }
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        debug_assert!(ix < self.nx && iy < self.ny && iz < self.nz);
        ix + self.nx * (iy + self.ny * iz)
    }

    #[inline]
    pub fn coords(&self, k: usize) -> (usize, usize, usize) {
        let ix = k % self.nx;
        let iy = (k / self.nx) % self.ny;
        let iz = k / (self.nx * self.ny);
        (ix, iy, iz)
    }

    pub fn min_corner(&self) -> Vec3 {
        self.origin
    }

    pub fn max_corner(&self) -> Vec3 {
        self.origin
            + Vec3::new(
                self.nx as f64 * self.spacing.x,
                self.ny as f64 * self.spacing.y,
                self.nz as f64 * self.spacing.z,
            )
    }

    pub fn top_z(&self) -> f64 {
        self.origin.z + self.nz as f64 * self.spacing.z
    }

    #[inline]
    pub fn voxel_center(&self, k: usize) -> Vec3 {
        let (ix, iy, iz) = self.coords(k);
        self.origin
            + Vec3::new(
                (ix as f64 + 0.5) * self.spacing.x,
                (iy as f64 + 0.5) * self.spacing.y,
                (iz as f64 + 0.5) * self.spacing.z,
            )
    }

    /// Containing voxel of a point, or `None` when the point is outside.
    /// Boundary ownership is half-open per axis: the max faces are outside.
    pub fn voxel_of_point(&self, p: Vec3) -> Option<usize> {
        let fx = (p.x - self.origin.x) / self.spacing.x;
        let fy = (p.y - self.origin.y) / self.spacing.y;
        let fz = (p.z - self.origin.z) / self.spacing.z;
        if fx < 0.0 || fy < 0.0 || fz < 0.0 {
            return None;
        }
        let (ix, iy, iz) = (fx.floor() as usize, fy.floor() as usize, fz.floor() as usize);
        if ix >= self.nx || iy >= self.ny || iz >= self.nz {
            return None;
        }
        Some(self.index(ix, iy, iz))
    }

    /// Altitude of a voxel center above the grid floor.
    #[inline]
    pub fn center_altitude(&self, k: usize) -> f64 {
        let iz = k / (self.nx * self.ny);
        (iz as f64 + 0.5) * self.spacing.z
    }
}

/// Per-voxel, per-channel optical description of air and a single aerosol type.
#[derive(Clone, Debug, PartialEq)]
pub struct Medium {
    /// Molecular extinction per channel, 1/m.
    pub beta_air: [Vec<f64>; 3],
    /// Aerosol extinction per channel, 1/m.
    pub beta_aerosol: [Vec<f64>; 3],
    /// Aerosol extinction cross sections per channel, m^2.
    pub sigma_aerosol: [f64; 3],
    /// Aerosol single scattering albedo.
    pub albedo_aerosol: f64,
    /// Air single scattering albedo (visible range: ~1).
    pub albedo_air: f64,
    /// Henyey-Greenstein anisotropy per channel.
    pub g: [f64; 3],
    beta_total: [Vec<f64>; 3],
}

impl Medium {
    pub fn new(
        beta_air: [Vec<f64>; 3],
        beta_aerosol: [Vec<f64>; 3],
        sigma_aerosol: [f64; 3],
        albedo_aerosol: f64,
        albedo_air: f64,
        g: [f64; 3],
    ) -> Result<Self> {
        let n = beta_air[0].len();
        for (name, field) in [("beta_air", &beta_air), ("beta_aerosol", &beta_aerosol)] {
            for ch in 0..3 {
                if field[ch].len() != n {
                    return Err(Error::validation(name, "channel field lengths differ"));
                }
                if let Some(v) = field[ch].iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                    return Err(Error::validation(
                        name,
                        format!("extinction must be finite and >= 0, got {v}"),
                    ));
                }
            }
        }
        for (name, v) in [("albedo_aerosol", albedo_aerosol), ("albedo_air", albedo_air)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(name, format!("albedo must be in [0,1], got {v}")));
            }
        }
        for gv in g {
            if !(gv.abs() < 1.0) {
                return Err(Error::validation("g", format!("anisotropy must satisfy |g| < 1, got {gv}")));
            }
        }
        for s in sigma_aerosol {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::validation("sigma", "cross sections must be finite and >= 0"));
            }
        }
        let beta_total = std::array::from_fn(|ch| {
            beta_air[ch]
                .iter()
                .zip(&beta_aerosol[ch])
                .map(|(a, b)| a + b)
                .collect()
        });
        Ok(Medium {
            beta_air,
            beta_aerosol,
            sigma_aerosol,
            albedo_aerosol,
            albedo_air,
            g,
            beta_total,
        })
    }

    #[inline]
    pub fn n_voxels(&self) -> usize {
        self.beta_air[0].len()
    }

    /// Total extinction field (air + aerosol) for a channel.
    #[inline]
    pub fn beta_total(&self, ch: Channel) -> &[f64] {
        &self.beta_total[ch.index()]
    }

    #[inline]
    pub fn beta_air(&self, ch: Channel) -> &[f64] {
        &self.beta_air[ch.index()]
    }

    #[inline]
    pub fn beta_aerosol(&self, ch: Channel) -> &[f64] {
        &self.beta_aerosol[ch.index()]
    }

    /// Probability that an interaction in voxel `k` is with an aerosol particle.
    #[inline]
    pub fn aerosol_fraction(&self, ch: Channel, k: usize) -> f64 {
        let b = self.beta_total[ch.index()][k];
        debug_assert!(b > 0.0, "no interaction can occur in a void voxel");
        self.beta_aerosol[ch.index()][k] / b
    }

    /// Replaces the aerosol field from a green-channel extinction vector,
    /// scaling the other channels by the cross-section ratios.
    pub fn with_aerosol_g(&self, beta_aerosol_g: &[f64]) -> Result<Medium> {
        if beta_aerosol_g.len() != self.n_voxels() {
            return Err(Error::Dimension("aerosol field length != n_voxels".into()));
        }
        if self.sigma_aerosol[Channel::G.index()] == 0.0 {
            return Err(Error::validation("sigma", "green cross section must be nonzero"));
        }
        let beta_aerosol = std::array::from_fn(|ch| {
            let ratio = self.sigma_aerosol[ch] / self.sigma_aerosol[Channel::G.index()];
            beta_aerosol_g.iter().map(|b| ratio * b.max(0.0)).collect()
        });
        Medium::new(
            self.beta_air.clone(),
            beta_aerosol,
            self.sigma_aerosol,
            self.albedo_aerosol,
            self.albedo_air,
            self.g,
        )
    }
}

/// Upward-looking hemispherical (equidistant fisheye) camera.
///
/// Pixel `(ix, iy)` maps to normalized image coordinates in `[-1, 1]^2`; the
/// radial distance from the image center gives the zenith angle linearly
/// (`theta = r * pi/2`). Pixels outside the unit image circle are invalid.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub npx: usize,
    pub npy: usize,
}

impl Camera {
    pub fn new(position: Vec3, npx: usize, npy: usize) -> Result<Self> {
        if npx < 1 || npy < 1 {
            return Err(Error::validation("camera.pixels", "pixel counts must be >= 1"));
        }
        if !position.is_finite() {
            return Err(Error::validation("camera.position", "must be finite"));
        }
        Ok(Camera { position, npx, npy })
    }

    #[inline]
    pub fn n_pixels(&self) -> usize {
        self.npx * self.npy
    }

    /// Linear pixel index, x-fastest.
    #[inline]
    pub fn pixel_index(&self, ix: usize, iy: usize) -> usize {
        iy * self.npx + ix
    }

    /// View direction (camera toward sky) for a sub-pixel point
    /// `(sx, sy) in [0,1)^2` of pixel `(ix, iy)`; `None` outside the image circle.
    pub fn pixel_dir(&self, ix: usize, iy: usize, sx: f64, sy: f64) -> Option<Vec3> {
        let u = 2.0 * (ix as f64 + sx) / self.npx as f64 - 1.0;
        let v = 2.0 * (iy as f64 + sy) / self.npy as f64 - 1.0;
        let r = (u * u + v * v).sqrt();
        if r > 1.0 {
            return None;
        }
        let theta = r * std::f64::consts::FRAC_PI_2;
        let (st, ct) = theta.sin_cos();
        if r < 1e-12 {
            return Some(Vec3::new(0.0, 0.0, 1.0));
        }
        Some(Vec3::new(st * u / r, st * v / r, ct))
    }

    /// Central view direction of a pixel.
    pub fn center_dir(&self, ix: usize, iy: usize) -> Option<Vec3> {
        self.pixel_dir(ix, iy, 0.5, 0.5)
    }

    /// Pixel whose cone contains view direction `d` (camera toward scene).
    /// `None` for downward directions and directions mapping outside the grid.
    pub fn dir_to_pixel(&self, d: Vec3) -> Option<(usize, usize)> {
        if d.z < 0.0 {
            return None;
        }
        let theta = d.z.min(1.0).acos();
        let r = theta / std::f64::consts::FRAC_PI_2;
        let rho = (d.x * d.x + d.y * d.y).sqrt();
        let (u, v) = if rho < 1e-300 {
            (0.0, 0.0)
        } else {
            (r * d.x / rho, r * d.y / rho)
        };
        let fx = (u + 1.0) * 0.5 * self.npx as f64;
        let fy = (v + 1.0) * 0.5 * self.npy as f64;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
        if ix >= self.npx || iy >= self.npy {
            return None;
        }
        Some((ix, iy))
    }

    /// Solid angle subtended by a pixel's cone, steradians.
    ///
    /// The equidistant mapping has solid-angle density
    /// `(pi/2) * sin(theta)/r` per unit image-plane area; a 3x3 sub-sample
    /// average handles pixels cut by the image circle (invalid sub-areas
    /// contribute zero).
    pub fn pixel_solid_angle(&self, ix: usize, iy: usize) -> f64 {
        let pixel_area = (2.0 / self.npx as f64) * (2.0 / self.npy as f64);
        let mut sum = 0.0;
        const NS: usize = 3;
        for a in 0..NS {
            for b in 0..NS {
                let sx = (a as f64 + 0.5) / NS as f64;
                let sy = (b as f64 + 0.5) / NS as f64;
                let u = 2.0 * (ix as f64 + sx) / self.npx as f64 - 1.0;
                let v = 2.0 * (iy as f64 + sy) / self.npy as f64 - 1.0;
                let r = (u * u + v * v).sqrt();
                if r > 1.0 {
                    continue;
                }
                let theta = r * std::f64::consts::FRAC_PI_2;
                let jac = if r < 1e-9 {
                    std::f64::consts::FRAC_PI_2
                } else {
                    theta.sin() / r
                };
                sum += std::f64::consts::FRAC_PI_2 * jac;
            }
        }
        sum / (NS * NS) as f64 * pixel_area
    }

    /// True for pixels whose center lies inside the image circle.
    pub fn pixel_valid(&self, ix: usize, iy: usize) -> bool {
        self.center_dir(ix, iy).is_some()
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.n_pixels()];
        for iy in 0..self.npy {
            for ix in 0..self.npx {
                m[self.pixel_index(ix, iy)] = self.pixel_valid(ix, iy);
            }
        }
        m
    }
}

/// Collimated solar source.
#[derive(Clone, Debug, PartialEq)]
pub struct Sun {
    pub zenith_deg: f64,
    pub azimuth_deg: f64,
    /// Per-channel relative irradiance.
    pub irradiance: [f64; 3],
}

impl Sun {
    pub fn new(zenith_deg: f64, azimuth_deg: f64, irradiance: [f64; 3]) -> Result<Self> {
        if !(0.0..90.0).contains(&zenith_deg) {
            return Err(Error::validation("sun.zenith_deg", "must be in [0, 90)"));
        }
        if irradiance.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::validation("sun.irradiance", "ratios must be > 0"));
        }
        Ok(Sun { zenith_deg, azimuth_deg, irradiance })
    }

    /// Unit vector pointing from the ground toward the sun.
    pub fn toward(&self) -> Vec3 {
        let z = self.zenith_deg.to_radians();
        let a = self.azimuth_deg.to_radians();
        let (sz, cz) = z.sin_cos();
        let (sa, ca) = a.sin_cos();
        Vec3::new(sz * ca, sz * sa, cz)
    }

    /// Propagation direction of sunlight (downward).
    pub fn direction(&self) -> Vec3 {
        -self.toward()
    }

    pub fn cos_zenith(&self) -> f64 {
        self.zenith_deg.to_radians().cos()
    }
}

/// Complete, validated scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub grid: VoxelGrid,
    pub medium: Medium,
    pub cameras: Vec<Camera>,
    pub sun: Sun,
}

impl Scene {
    pub fn new(grid: VoxelGrid, medium: Medium, cameras: Vec<Camera>, sun: Sun) -> Result<Self> {
        if medium.n_voxels() != grid.n_voxels() {
            return Err(Error::Dimension(format!(
                "medium has {} voxels, grid has {}",
                medium.n_voxels(),
                grid.n_voxels()
            )));
        }
        let lo = grid.min_corner();
        let hi = grid.max_corner();
        for (i, cam) in cameras.iter().enumerate() {
            let p = cam.position;
            if p.x < lo.x || p.x > hi.x || p.y < lo.y || p.y > hi.y || p.z > hi.z {
                return Err(Error::validation(
                    format!("camera[{i}].position"),
                    "must lie inside or below the domain footprint",
                ));
            }
        }
        Ok(Scene { grid, medium, cameras, sun })
    }

    /// Same geometry, air, and aerosol optics, with the aerosol field replaced
    /// from a green-channel extinction vector.
    pub fn with_aerosol_g(&self, beta_aerosol_g: &[f64]) -> Result<Scene> {
        Ok(Scene {
            grid: self.grid.clone(),
            medium: self.medium.with_aerosol_g(beta_aerosol_g)?,
            cameras: self.cameras.clone(),
            sun: self.sun.clone(),
        })
    }

    /// Cross-section ratio of channel `ch` to green (sigma_tilde of the
    /// channel-coupling relation).
    pub fn sigma_ratio(&self, ch: Channel) -> f64 {
        self.medium.sigma_aerosol[ch.index()] / self.medium.sigma_aerosol[Channel::G.index()]
    }
}
