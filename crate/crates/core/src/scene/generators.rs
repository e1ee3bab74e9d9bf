//! Procedural media: exponential molecular profile and aerosol density shapes.

use super::{Medium, VoxelGrid};
use crate::error::{Error, Result};
use crate::math::Vec3;
use serde::{Deserialize, Serialize};

/// Exponential clear-air profile `beta_air(h) = beta0 * exp(-h/H)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AirModel {
    /// Sea-level molecular extinction per channel, 1/m.
    pub beta0: [f64; 3],
    /// Scale height, m.
    pub scale_height: f64,
    /// Single scattering albedo.
    pub albedo: f64,
}

impl Default for AirModel {
    fn default() -> Self {
        // Rayleigh extinction at roughly 680/550/440 nm: blue > green > red.
        AirModel {
            beta0: [5.8e-6, 1.35e-5, 3.31e-5],
            scale_height: 8000.0,
            albedo: 1.0,
        }
    }
}

impl AirModel {
    pub fn field(&self, grid: &VoxelGrid) -> [Vec<f64>; 3] {
        std::array::from_fn(|ch| {
            (0..grid.n_voxels())
                .map(|k| self.beta0[ch] * (-grid.center_altitude(k) / self.scale_height).exp())
                .collect()
        })
    }
}

/// Optical properties of the single aerosol type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AerosolOptics {
    /// Extinction cross sections per channel, m^2.
    pub sigma: [f64; 3],
    pub albedo: f64,
    /// Henyey-Greenstein anisotropy per channel.
    pub g: [f64; 3],
    /// Vertical decay scale of aerosol density inside generated shapes, m.
    pub scale_height: f64,
}

impl Default for AerosolOptics {
    fn default() -> Self {
        AerosolOptics {
            sigma: [17e-12; 3],
            albedo: 1.0,
            g: [0.0; 3],
            scale_height: 1200.0,
        }
    }
}

/// One isotropic-by-axis Gaussian density blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    /// Center, meters (domain coordinates).
    pub center: [f64; 3],
    /// Gaussian sigma per axis, m.
    pub radius: [f64; 3],
}

/// Elliptic cylinder with its axis along y; cross-section in the x-z plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylinderParams {
    /// Axis position in the x-z plane, m.
    pub center_xz: [f64; 2],
    /// Semi-axes in x and z, m.
    pub semi_axes: [f64; 2],
    /// Fraction of the elliptic radius over which density falls smoothly
    /// from 1 to 0 at the boundary.
    pub edge: f64,
}

/// Axis-aligned ellipsoid with uniform interior density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidParams {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
}

fn densities_to_medium(
    grid: &VoxelGrid,
    air: &AirModel,
    aerosol: &AerosolOptics,
    density: Vec<f64>,
) -> Result<Medium> {
    let beta_aerosol = std::array::from_fn(|ch| density.iter().map(|n| aerosol.sigma[ch] * n).collect());
    Medium::new(
        air.field(grid),
        beta_aerosol,
        aerosol.sigma,
        aerosol.albedo,
        air.albedo,
        aerosol.g,
    )
}

fn altitude_profile(h: f64, scale_height: f64) -> f64 {
    (-h / scale_height).exp()
}

/// Sum-of-Gaussian-blobs aerosol density with exponential altitude decay,
/// normalized so the peak voxel density equals `n_sealevel` exactly.
/// The resulting aerosol extinction is `sigma * n` per channel.
pub fn make_haze_blobs(
    grid: &VoxelGrid,
    air: &AirModel,
    aerosol: &AerosolOptics,
    n_sealevel: f64,
    blobs: &[Blob],
) -> Result<Medium> {
    if !(n_sealevel > 0.0) {
        return Err(Error::validation("n_sealevel", "must be > 0"));
    }
    let lo = grid.min_corner();
    let hi = grid.max_corner();
    for (i, b) in blobs.iter().enumerate() {
        let c = Vec3::new(b.center[0], b.center[1], b.center[2]);
        if c.x < lo.x || c.x > hi.x || c.y < lo.y || c.y > hi.y || c.z < lo.z || c.z > hi.z {
            return Err(Error::validation(
                format!("blobs[{i}].center"),
                "blob center lies outside the grid",
            ));
        }
        if b.radius.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::validation(format!("blobs[{i}].radius"), "must be > 0"));
        }
    }
    let mut shape = vec![0.0f64; grid.n_voxels()];
    for k in 0..grid.n_voxels() {
        let p = grid.voxel_center(k);
        let mut s = 0.0;
        for b in blobs {
            let dx = (p.x - b.center[0]) / b.radius[0];
            let dy = (p.y - b.center[1]) / b.radius[1];
            let dz = (p.z - b.center[2]) / b.radius[2];
            s += (-0.5 * (dx * dx + dy * dy + dz * dz)).exp();
        }
        shape[k] = s * altitude_profile(grid.center_altitude(k), aerosol.scale_height);
    }
    let peak = shape.iter().cloned().fold(0.0f64, f64::max);
    let density: Vec<f64> = if peak > 0.0 {
        shape.iter().map(|s| n_sealevel * s / peak).collect()
    } else {
        shape
    };
    densities_to_medium(grid, air, aerosol, density)
}

/// Haze front: density `n_sealevel * exp(-h/H)` inside an elliptic cylinder,
/// falling smoothly to zero over the outer `edge` fraction of the ellipse.
pub fn make_haze_front(
    grid: &VoxelGrid,
    air: &AirModel,
    aerosol: &AerosolOptics,
    n_sealevel: f64,
    cyl: &CylinderParams,
) -> Result<Medium> {
    if !(n_sealevel > 0.0) {
        return Err(Error::validation("n_sealevel", "must be > 0"));
    }
    if cyl.semi_axes.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::validation("cylinder.semi_axes", "degenerate ellipse axis"));
    }
    if !(0.0..=1.0).contains(&cyl.edge) {
        return Err(Error::validation("cylinder.edge", "must be in [0,1]"));
    }
    let mut density = vec![0.0f64; grid.n_voxels()];
    for (k, d) in density.iter_mut().enumerate() {
        let p = grid.voxel_center(k);
        let ex = (p.x - cyl.center_xz[0]) / cyl.semi_axes[0];
        let ez = (p.z - cyl.center_xz[1]) / cyl.semi_axes[1];
        let rho = (ex * ex + ez * ez).sqrt();
        let w = if rho >= 1.0 {
            0.0
        } else if cyl.edge == 0.0 || rho <= 1.0 - cyl.edge {
            1.0
        } else {
            // smoothstep from 1 at rho = 1-edge down to 0 at rho = 1
            let t = (1.0 - rho) / cyl.edge;
            t * t * (3.0 - 2.0 * t)
        };
        *d = n_sealevel * w * altitude_profile(grid.center_altitude(k), aerosol.scale_height);
    }
    densities_to_medium(grid, air, aerosol, density)
}

/// Uniform-density ellipsoid (the conditioning test layout).
pub fn make_ellipsoid(
    grid: &VoxelGrid,
    air: &AirModel,
    aerosol: &AerosolOptics,
    n_inside: f64,
    ell: &EllipsoidParams,
) -> Result<Medium> {
    if ell.semi_axes.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::validation("ellipsoid.semi_axes", "must be > 0"));
    }
    let mut density = vec![0.0f64; grid.n_voxels()];
    for (k, d) in density.iter_mut().enumerate() {
        let p = grid.voxel_center(k);
        let ex = (p.x - ell.center[0]) / ell.semi_axes[0];
        let ey = (p.y - ell.center[1]) / ell.semi_axes[1];
        let ez = (p.z - ell.center[2]) / ell.semi_axes[2];
        if ex * ex + ey * ey + ez * ez <= 1.0 {
            *d = n_inside;
        }
    }
    densities_to_medium(grid, air, aerosol, density)
}

/// Aerosol density from an explicit per-voxel vector.
pub fn from_density(
    grid: &VoxelGrid,
    air: &AirModel,
    aerosol: &AerosolOptics,
    density: Vec<f64>,
) -> Result<Medium> {
    if density.len() != grid.n_voxels() {
        return Err(Error::Dimension(format!(
            "density has {} values, grid has {} voxels",
            density.len(),
            grid.n_voxels()
        )));
    }
    if let Some(v) = density.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::validation("density", format!("must be finite and >= 0, got {v}")));
    }
    densities_to_medium(grid, air, aerosol, density)
}

/// Zero aerosol everywhere.
pub fn pure_air(grid: &VoxelGrid, air: &AirModel, aerosol: &AerosolOptics) -> Result<Medium> {
    densities_to_medium(grid, air, aerosol, vec![0.0; grid.n_voxels()])
}
