//! Scene files and raw volume I/O.
//!
//! Scenes are stored as TOML with nested sections; the aerosol field is
//! either generated (blobs / cylinder / ellipsoid) or read from a raw volume
//! of row-major (x-fastest) little-endian float32 densities.

use super::generators::{
    self, AerosolOptics, AirModel, Blob, CylinderParams, EllipsoidParams,
};
use super::{Camera, Medium, Scene, Sun, VoxelGrid};
use crate::error::{Error, Result};
use crate::math::Vec3;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SunSpec {
    pub zenith_deg: f64,
    pub azimuth_deg: f64,
    pub irradiance: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub position: [f64; 3],
    pub pixels: [usize; 2],
}

/// Aerosol density field description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldSpec {
    None,
    Blobs {
        n_sealevel: f64,
        blobs: Vec<Blob>,
    },
    Cylinder {
        n_sealevel: f64,
        #[serde(flatten)]
        params: CylinderParams,
    },
    Ellipsoid {
        n_inside: f64,
        #[serde(flatten)]
        params: EllipsoidParams,
    },
    /// Raw float32 volume referenced by path (relative to the scene file).
    Volume { path: String },
    /// Densities inline, row-major x-fastest.
    Values { data: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AerosolSpec {
    #[serde(flatten)]
    pub optics: AerosolOptics,
    pub field: FieldSpec,
}

/// Serializable scene description; `build` turns it into a validated [`Scene`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub grid: GridSpec,
    pub sun: SunSpec,
    #[serde(default)]
    pub air: AirModel,
    pub aerosol: AerosolSpec,
    #[serde(rename = "camera")]
    pub cameras: Vec<CameraSpec>,
}

impl SceneSpec {
    pub fn build(&self, base_dir: &Path) -> Result<Scene> {
        let grid = VoxelGrid::new(
            self.grid.nx,
            self.grid.ny,
            self.grid.nz,
            Vec3::new(self.grid.origin[0], self.grid.origin[1], self.grid.origin[2]),
            Vec3::new(self.grid.spacing[0], self.grid.spacing[1], self.grid.spacing[2]),
        )?;
        let medium = self.build_medium(&grid, base_dir)?;
        let sun = Sun::new(self.sun.zenith_deg, self.sun.azimuth_deg, self.sun.irradiance)?;
        let cameras = self
            .cameras
            .iter()
            .map(|c| {
                Camera::new(
                    Vec3::new(c.position[0], c.position[1], c.position[2]),
                    c.pixels[0],
                    c.pixels[1],
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Scene::new(grid, medium, cameras, sun)
    }

    fn build_medium(&self, grid: &VoxelGrid, base_dir: &Path) -> Result<Medium> {
        let air = &self.air;
        let aero = &self.aerosol.optics;
        match &self.aerosol.field {
            FieldSpec::None => generators::pure_air(grid, air, aero),
            FieldSpec::Blobs { n_sealevel, blobs } => {
                generators::make_haze_blobs(grid, air, aero, *n_sealevel, blobs)
            }
            FieldSpec::Cylinder { n_sealevel, params } => {
                generators::make_haze_front(grid, air, aero, *n_sealevel, params)
            }
            FieldSpec::Ellipsoid { n_inside, params } => {
                generators::make_ellipsoid(grid, air, aero, *n_inside, params)
            }
            FieldSpec::Volume { path } => {
                let full = base_dir.join(path);
                let density = read_f32_volume(&full, grid.n_voxels())?;
                generators::from_density(grid, air, aero, density)
            }
            FieldSpec::Values { data } => generators::from_density(grid, air, aero, data.clone()),
        }
    }

    pub fn load(path: &Path) -> Result<SceneSpec> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Parses and validates a scene file.
pub fn load_scene(path: &Path) -> Result<Scene> {
    let spec = SceneSpec::load(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    spec.build(base)
}

/// Writes a scene description next to any referenced volumes.
pub fn save_scene(spec: &SceneSpec, path: &Path) -> Result<()> {
    spec.save(path)
}

/// Reads a raw little-endian float32 volume.
pub fn read_f32_volume(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() != expected * 4 {
        return Err(Error::Dimension(format!(
            "{}: has {} bytes, expected {} ({} float32 values)",
            path.display(),
            buf.len(),
            expected * 4,
            expected
        )));
    }
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Writes a raw little-endian float32 volume plus a small TOML sidecar header
/// (`<path>.meta`) recording dims, spacing, origin, and the stored quantity.
pub fn write_f32_volume(path: &Path, grid: &VoxelGrid, values: &[f64], quantity: &str) -> Result<()> {
    if values.len() != grid.n_voxels() {
        return Err(Error::Dimension("volume length != n_voxels".into()));
    }
    let mut f = std::fs::File::create(path)?;
    for v in values {
        f.write_all(&(*v as f32).to_le_bytes())?;
    }
    let meta = format!(
        "quantity = {:?}\ndims = [{}, {}, {}]\nspacing = [{}, {}, {}]\norigin = [{}, {}, {}]\nlayout = \"row-major x-fastest, float32 little-endian\"\n",
        quantity,
        grid.nx, grid.ny, grid.nz,
        grid.spacing.x, grid.spacing.y, grid.spacing.z,
        grid.origin.x, grid.origin.y, grid.origin.z,
    );
    std::fs::write(path.with_extension(
        path.extension()
            .map(|e| format!("{}.meta", e.to_string_lossy()))
            .unwrap_or_else(|| "meta".into()),
    ), meta)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Channel;

    fn minimal_spec() -> SceneSpec {
        SceneSpec {
            grid: GridSpec {
                nx: 1,
                ny: 1,
                nz: 1,
                origin: [0.0; 3],
                spacing: [1000.0, 1000.0, 1000.0],
            },
            sun: SunSpec { zenith_deg: 45.0, azimuth_deg: 0.0, irradiance: [255.0, 236.0, 224.0] },
            air: AirModel::default(),
            aerosol: AerosolSpec { optics: AerosolOptics::default(), field: FieldSpec::None },
            cameras: vec![CameraSpec { position: [500.0, 500.0, 0.0], pixels: [8, 8] }],
        }
    }

    #[test]
    fn minimal_scene_has_air_only_extinction() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.toml");
        minimal_spec().save(&path).unwrap();
        let scene = load_scene(&path).unwrap();
        assert_eq!(scene.grid.n_voxels(), 1);
        for ch in Channel::ALL {
            assert_eq!(scene.medium.beta_total(ch)[0], scene.medium.beta_air(ch)[0]);
        }
    }

    #[test]
    fn roundtrip_reproduces_scene() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = minimal_spec();
        spec.grid = GridSpec { nx: 6, ny: 5, nz: 4, origin: [10.0, -20.0, 0.0], spacing: [250.0, 300.0, 125.0] };
        spec.aerosol.field = FieldSpec::Blobs {
            n_sealevel: 1e6,
            blobs: vec![Blob { center: [800.0, 700.0, 200.0], radius: [300.0, 300.0, 150.0] }],
        };
        spec.cameras = vec![CameraSpec { position: [760.0, 730.0, 0.0], pixels: [4, 4] }];
        let p1 = dir.path().join("a.toml");
        let p2 = dir.path().join("b.toml");
        spec.save(&p1).unwrap();
        let loaded = SceneSpec::load(&p1).unwrap();
        loaded.save(&p2).unwrap();
        let s1 = load_scene(&p1).unwrap();
        let s2 = load_scene(&p2).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn negative_extinction_names_field() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = minimal_spec();
        spec.aerosol.field = FieldSpec::Values { data: vec![-1.0] };
        let p = dir.path().join("bad.toml");
        spec.save(&p).unwrap();
        let err = load_scene(&p).unwrap_err();
        assert!(err.to_string().contains("density"), "{err}");
    }

    #[test]
    fn volume_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = VoxelGrid::new(3, 2, 2, Vec3::ZERO, Vec3::new(1.0, 1.0, 1.0)).unwrap();
        let vals: Vec<f64> = (0..12).map(|i| i as f64 * 0.5).collect();
        let p = dir.path().join("vol.f32");
        write_f32_volume(&p, &grid, &vals, "aerosol_density").unwrap();
        let back = read_f32_volume(&p, 12).unwrap();
        assert_eq!(vals, back);
        assert!(p.with_extension("f32.meta").exists());
    }
}
