//! Deterministic single-scatter renderer.
//!
//! Integrates sun -> one scattering event -> camera along each pixel's
//! sub-rays, with exact per-voxel extinction toward the camera and a
//! numerically integrated sun transmittance per sub-step. Serves as the
//! independent reference the Monte Carlo renderers are tested against, and
//! as the single-scattering baseline image.

use crate::image::Image;
use crate::math::Vec3;
use crate::optics::{optical_depth, phase_hg, phase_rayleigh, traverse, GridWalker};
use crate::scene::{Channel, Scene};
use crate::vfmc::subpixel_offsets;

/// Radiance reaching the camera along one ray, counting exactly one
/// scattering event. `max_step` bounds the sub-step length inside voxels.
pub fn single_scatter_ray(scene: &Scene, ch: Channel, origin: Vec3, dir: Vec3, max_step: f64) -> f64 {
    let grid = &scene.grid;
    let medium = &scene.medium;
    let beta_total = medium.beta_total(ch);
    let beta_air = medium.beta_air(ch);
    let beta_aero = medium.beta_aerosol(ch);
    let g = medium.g[ch.index()];
    let toward_sun = scene.sun.toward();
    // scattering cosine from the solar propagation direction into the
    // direction of propagation toward the camera
    let mu = toward_sun.dot(dir);
    let p_air = phase_rayleigh(mu) * medium.albedo_air;
    let p_aero = phase_hg(mu, g) * medium.albedo_aerosol;
    let Some(mut walker) = GridWalker::new(grid, origin, dir, f64::INFINITY) else {
        return 0.0;
    };
    let mut tau_cam = 0.0f64;
    let mut total = 0.0f64;
    while let Some(seg) = walker.next_segment() {
        let k = seg.voxel;
        let b = beta_total[k];
        if b == 0.0 {
            continue;
        }
        let source = beta_air[k] * p_air + beta_aero[k] * p_aero;
        let len = seg.length();
        let n_sub = (len / max_step).ceil().max(1.0) as usize;
        let dl = len / n_sub as f64;
        for i in 0..n_sub {
            let l_mid = seg.t0 + (i as f64 + 0.5) * dl;
            let x = origin + dir * l_mid;
            let tau_sun = optical_depth(&traverse(grid, x, toward_sun), beta_total);
            let t_cam_mid = (-(tau_cam + b * (i as f64 + 0.5) * dl)).exp();
            total += source * (-tau_sun).exp() * t_cam_mid * dl;
        }
        tau_cam += b * len;
    }
    total * scene.sun.irradiance[ch.index()]
}

/// Single-scatter image of one camera, averaged over the same deterministic
/// sub-pixel pattern the projection matrix uses.
pub fn single_scatter_image(
    scene: &Scene,
    ch: Channel,
    cam_idx: usize,
    n_rays: usize,
    max_step: f64,
) -> Image {
    let cam = &scene.cameras[cam_idx];
    let offsets = subpixel_offsets(n_rays);
    let mut img = Image::with_validity(cam.npx, cam.npy, cam.valid_mask());
    for iy in 0..cam.npy {
        for ix in 0..cam.npx {
            let mut acc = 0.0;
            for &(sx, sy) in &offsets {
                if let Some(dir) = cam.pixel_dir(ix, iy, sx, sy) {
                    acc += single_scatter_ray(scene, ch, cam.position, dir, max_step);
                }
            }
            img.data[cam.pixel_index(ix, iy)] = acc / n_rays as f64;
        }
    }
    img
}

/// Default sub-step: half the smallest voxel edge.
pub fn default_max_step(scene: &Scene) -> f64 {
    0.5 * scene
        .grid
        .spacing
        .x
        .min(scene.grid.spacing.y)
        .min(scene.grid.spacing.z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Camera, Medium, Scene, Sun, VoxelGrid};

    #[test]
    fn matches_homogeneous_closed_form() {
        // homogeneous slab, vertical view, sun at zenith: the integral
        // collapses to P_iso * beta * h * exp(-beta * h)
        let h = 1000.0;
        let beta = 2e-5;
        let grid = VoxelGrid::new(1, 1, 8, Vec3::ZERO, Vec3::new(1e8, 1e8, h / 8.0)).unwrap();
        let n = grid.n_voxels();
        let medium = Medium::new(
            [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            [vec![beta; n], vec![beta; n], vec![beta; n]],
            [17e-12; 3],
            1.0,
            1.0,
            [0.0; 3],
        )
        .unwrap();
        let cam = Camera::new(Vec3::new(5e7, 5e7, 0.0), 2, 2).unwrap();
        let sun = Sun::new(0.0, 0.0, [1.0; 3]).unwrap();
        let scene = Scene::new(grid, medium, vec![cam], sun).unwrap();
        let up = Vec3::new(0.0, 0.0, 1.0);
        let got = single_scatter_ray(&scene, Channel::G, scene.cameras[0].position, up, 10.0);
        let p_iso = 1.0 / (4.0 * std::f64::consts::PI);
        let expect = p_iso * beta * h * (-beta * h).exp();
        assert!(
            (got - expect).abs() < 1e-6 * expect,
            "got {got} expect {expect}"
        );
    }

    #[test]
    fn vacuum_is_zero() {
        let grid = VoxelGrid::new(2, 2, 2, Vec3::ZERO, Vec3::new(100.0, 100.0, 100.0)).unwrap();
        let n = 8;
        let medium = Medium::new(
            [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            [17e-12; 3],
            1.0,
            1.0,
            [0.0; 3],
        )
        .unwrap();
        let cam = Camera::new(Vec3::new(100.0, 100.0, 0.0), 4, 4).unwrap();
        let sun = Sun::new(30.0, 0.0, [1.0; 3]).unwrap();
        let scene = Scene::new(grid, medium, vec![cam], sun).unwrap();
        let img = single_scatter_image(&scene, Channel::G, 0, 4, 50.0);
        assert!(img.data.iter().all(|v| *v == 0.0));
    }
}
