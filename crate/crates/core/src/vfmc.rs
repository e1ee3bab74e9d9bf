//! Voxelized forward renderer: precomputed camera geometry, per-camera
//! scatter caches filled by forward tracking, line-of-sight transmittance,
//! and sparse image assembly.
//!
//! Scattering events deposit `albedo * I * P` toward every camera with no
//! inverse-square factor; the projection matrix spreads each voxel's power
//! over the pixels that see it, which is what keeps in-situ cameras stable.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scene::{Channel, Scene};
use crate::transport::{
    phase_of, run_fmc, EventSink, Particle, ScatterEvent, TraceStats, TransportConfig,
};

pub use crate::image::fit_scale;

/// Deterministic sub-pixel sample pattern (R2 low-discrepancy sequence),
/// shared by the projection build and the single-scatter integrator.
pub fn subpixel_offsets(n_rays: usize) -> Vec<(f64, f64)> {
    const A1: f64 = 0.754_877_666_246_692_7;
    const A2: f64 = 0.569_840_290_998_053_2;
    (0..n_rays)
        .map(|i| {
            let t = i as f64 + 1.0;
            ((0.5 + t * A1).fract(), (0.5 + t * A2).fract())
        })
        .collect()
}

/// Sparse pixel-by-voxel geometric weight matrix of one camera, with the
/// per-voxel sub-ray counts used for gradient conditioning.
#[derive(Clone, Debug)]
pub struct ProjectionMatrix {
    pub npx: usize,
    pub npy: usize,
    pub n_rays: usize,
    /// Row per pixel: (voxel, weight) pairs, weights in 1/m^2.
    pub rows: Vec<Vec<(u32, f64)>>,
    /// Number of sub-pixel rays crossing each voxel.
    pub ray_counts: Vec<u32>,
    pub valid: Vec<bool>,
}

impl ProjectionMatrix {
    #[inline]
    pub fn n_pixels(&self) -> usize {
        self.npx * self.npy
    }

    /// `Pi * v` for a voxel vector.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(k, w)| w * v[k as usize]).sum())
            .collect()
    }

    /// `out += Pi^T * p` for a pixel vector.
    pub fn transpose_apply(&self, p: &[f64], out: &mut [f64]) {
        for (row, &pv) in self.rows.iter().zip(p) {
            if pv == 0.0 {
                continue;
            }
            for &(k, w) in row {
                out[k as usize] += w * pv;
            }
        }
    }
}

/// Builds the projection weights: each of `n_rays` deterministic sub-pixel
/// rays is traversed exactly, and weight `(p, k)` accumulates
/// `l / (n_rays * V_voxel)`.
pub fn build_projection(scene: &Scene, cam_idx: usize, n_rays: usize) -> ProjectionMatrix {
    assert!(n_rays >= 1);
    let cam = &scene.cameras[cam_idx];
    let grid = &scene.grid;
    let inv = 1.0 / (n_rays as f64 * grid.voxel_volume());
    let offsets = subpixel_offsets(n_rays);
    let mut rows = Vec::with_capacity(cam.n_pixels());
    let mut ray_counts = vec![0u32; grid.n_voxels()];
    let mut scratch: Vec<(u32, f64)> = Vec::new();
    for iy in 0..cam.npy {
        for ix in 0..cam.npx {
            scratch.clear();
            for &(sx, sy) in &offsets {
                let Some(dir) = cam.pixel_dir(ix, iy, sx, sy) else {
                    continue;
                };
                let tr = crate::optics::traverse(grid, cam.position, dir);
                for seg in &tr.segments {
                    scratch.push((seg.voxel as u32, seg.length * inv));
                    ray_counts[seg.voxel] += 1;
                }
            }
            scratch.sort_unstable_by_key(|(k, _)| *k);
            let mut row: Vec<(u32, f64)> = Vec::with_capacity(scratch.len());
            for &(k, w) in scratch.iter() {
                match row.last_mut() {
                    Some((lk, lw)) if *lk == k => *lw += w,
                    _ => row.push((k, w)),
                }
            }
            rows.push(row);
        }
    }
    ProjectionMatrix {
        npx: cam.npx,
        npy: cam.npy,
        n_rays,
        rows,
        ray_counts,
        valid: cam.valid_mask(),
    }
}

/// Sparse voxel-by-voxel path-length matrix of one camera: row `k` holds the
/// per-voxel intersection lengths of the segment from the camera to the
/// center of voxel `k`, clipped to the domain. Purely geometric, shared by
/// all channels.
#[derive(Clone, Debug)]
pub struct LosMatrix {
    pub rows: Vec<Vec<(u32, f64)>>,
}

impl LosMatrix {
    /// Optical depth from each voxel center to the camera: `tau = W * beta`.
    pub fn tau_los(&self, beta: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(m, l)| l * beta[m as usize]).sum())
            .collect()
    }

    /// Per-voxel transmittance toward the camera: `exp(-W * beta)`.
    pub fn transmittance_field(&self, beta: &[f64]) -> Vec<f64> {
        self.tau_los(beta).iter().map(|t| (-t).exp()).collect()
    }

    /// `out += W^T * v`.
    pub fn transpose_apply(&self, v: &[f64], out: &mut [f64]) {
        for (row, &vk) in self.rows.iter().zip(v) {
            if vk == 0.0 {
                continue;
            }
            for &(m, l) in row {
                out[m as usize] += l * vk;
            }
        }
    }

    pub fn row_sum(&self, k: usize) -> f64 {
        self.rows[k].iter().map(|&(_, l)| l).sum()
    }
}

/// Exact traversal of each `[camera, voxel-center]` segment.
pub fn build_los(scene: &Scene, cam_idx: usize) -> LosMatrix {
    let cam = &scene.cameras[cam_idx];
    let grid = &scene.grid;
    let rows = (0..grid.n_voxels())
        .map(|k| {
            let tr = crate::optics::traverse_to(grid, cam.position, grid.voxel_center(k));
            tr.segments
                .iter()
                .map(|s| (s.voxel as u32, s.length))
                .collect()
        })
        .collect();
    LosMatrix { rows }
}

/// Per-camera accumulated scattered power, with event counts. Values are raw
/// `albedo * I * P` sums; merging batches adds values and packet counts, so a
/// merged set equals a single run over the union of packets.
#[derive(Clone, Debug)]
pub struct ScatterCacheSet {
    pub per_camera: Vec<Vec<f64>>,
    pub event_counts: Vec<u64>,
    pub n_packets: u64,
    /// Launch-rectangle area times cos(solar zenith) — fixed by the geometry.
    pub area_cos: f64,
}

impl ScatterCacheSet {
    pub fn merge(&mut self, other: &ScatterCacheSet) {
        assert_eq!(self.per_camera.len(), other.per_camera.len());
        assert!((self.area_cos - other.area_cos).abs() <= 1e-12 * self.area_cos.abs());
        for (a, b) in self.per_camera.iter_mut().zip(&other.per_camera) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (x, y) in self.event_counts.iter_mut().zip(&other.event_counts) {
            *x += y;
        }
        self.n_packets += other.n_packets;
    }

    /// Power carried by a unit-weight packet under the channel's relative
    /// irradiance.
    pub fn packet_power(&self, irradiance: f64) -> f64 {
        irradiance * self.area_cos / self.n_packets as f64
    }
}

struct CacheSink<'a> {
    scene: &'a Scene,
    ch: Channel,
    per_camera: Vec<Vec<f64>>,
    event_counts: Vec<u64>,
}

impl<'a> EventSink for CacheSink<'a> {
    fn on_scatter(&mut self, ev: &ScatterEvent) {
        let scene = self.scene;
        let albedo = match ev.particle {
            Particle::Air => scene.medium.albedo_air,
            Particle::Aerosol => scene.medium.albedo_aerosol,
        };
        let w0 = albedo * ev.intensity;
        for (c, cam) in scene.cameras.iter().enumerate() {
            let v = cam.position - ev.pos;
            let r2 = v.length_squared();
            if r2 == 0.0 {
                continue;
            }
            let mu = ev.dir_in.dot(v) / r2.sqrt();
            let p = phase_of(&scene.medium, self.ch, ev.particle, mu);
            self.per_camera[c][ev.voxel] += w0 * p;
        }
        self.event_counts[ev.voxel] += 1;
    }

    fn merge(&mut self, other: Self) {
        for (a, b) in self.per_camera.iter_mut().zip(other.per_camera) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (x, y) in self.event_counts.iter_mut().zip(other.event_counts) {
            *x += y;
        }
    }
}

/// Forward-tracking pass that fills all cameras' scatter caches from one set
/// of trajectories.
pub fn accumulate_scatter(
    scene: &Scene,
    ch: Channel,
    n_packets: u64,
    seed: u64,
    cfg: &TransportConfig,
    threads: usize,
) -> (ScatterCacheSet, TraceStats) {
    let n_vox = scene.grid.n_voxels();
    let (sink, stats, norm) = run_fmc(scene, ch, n_packets, seed, cfg, threads, || CacheSink {
        scene,
        ch,
        per_camera: scene.cameras.iter().map(|_| vec![0.0; n_vox]).collect(),
        event_counts: vec![0u64; n_vox],
    });
    (
        ScatterCacheSet {
            per_camera: sink.per_camera,
            event_counts: sink.event_counts,
            n_packets,
            area_cos: norm.area_cos,
        },
        stats,
    )
}

/// Discrete in-scattering field toward one camera: `j = L / beta`, zero in
/// void voxels (where no event can have occurred). `irradiance` is the
/// channel's relative solar irradiance; the result is in radiance units.
pub fn in_scatter_field(
    cache: &ScatterCacheSet,
    cam_idx: usize,
    irradiance: f64,
    beta: &[f64],
) -> Vec<f64> {
    let scale = cache.packet_power(irradiance);
    cache.per_camera[cam_idx]
        .iter()
        .zip(beta)
        .map(|(l, b)| if *b > 0.0 { scale * l / b } else { 0.0 })
        .collect()
}

/// Image assembly `i = Pi * (j ⊙ beta ⊙ T)`.
pub fn render(proj: &ProjectionMatrix, j: &[f64], beta: &[f64], t: &[f64]) -> Result<Image> {
    let n = proj.ray_counts.len();
    if j.len() != n || beta.len() != n || t.len() != n {
        return Err(Error::Dimension(format!(
            "render: fields of length {}/{}/{} vs {} voxels",
            j.len(),
            beta.len(),
            t.len(),
            n
        )));
    }
    let mut img = Image::with_validity(proj.npx, proj.npy, proj.valid.clone());
    for (p, row) in proj.rows.iter().enumerate() {
        img.data[p] = row
            .iter()
            .map(|&(k, w)| {
                let k = k as usize;
                w * j[k] * beta[k] * t[k]
            })
            .sum();
    }
    Ok(img)
}

/// Full voxelized forward render of every camera for one channel.
pub fn render_all(
    scene: &Scene,
    ch: Channel,
    projections: &[ProjectionMatrix],
    los: &[LosMatrix],
    n_packets: u64,
    seed: u64,
    cfg: &TransportConfig,
    threads: usize,
) -> Result<(Vec<Image>, TraceStats)> {
    let (cache, stats) = accumulate_scatter(scene, ch, n_packets, seed, cfg, threads);
    let beta = scene.medium.beta_total(ch);
    let e = scene.sun.irradiance[ch.index()];
    let mut images = Vec::with_capacity(scene.cameras.len());
    for c in 0..scene.cameras.len() {
        let j = in_scatter_field(&cache, c, e, beta);
        let t = los[c].transmittance_field(beta);
        images.push(render(&projections[c], &j, beta, &t)?);
    }
    Ok((images, stats))
}

/// Projection and LOS matrices for every camera.
pub fn build_geometry(scene: &Scene, n_rays: usize) -> (Vec<ProjectionMatrix>, Vec<LosMatrix>) {
    let projections = (0..scene.cameras.len())
        .map(|c| build_projection(scene, c, n_rays))
        .collect();
    let los = (0..scene.cameras.len()).map(|c| build_los(scene, c)).collect();
    (projections, los)
}

/// Writes a sparse matrix in triplet form: `row,col,value` lines.
pub fn dump_triplets<W: std::io::Write>(rows: &[Vec<(u32, f64)>], mut w: W) -> std::io::Result<()> {
    writeln!(w, "row,col,value")?;
    for (r, row) in rows.iter().enumerate() {
        for &(c, v) in row {
            writeln!(w, "{r},{c},{v}")?;
        }
    }
    Ok(())
}
