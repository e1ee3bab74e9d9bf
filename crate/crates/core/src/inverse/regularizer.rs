//! Altitude-weighted 3D Laplacian smoothness term.

use crate::scene::VoxelGrid;

/// `Psi(x) = || w .* (L x) ||^2` where `L` is the 6-neighbor Laplacian with
/// degree-matched boundary rows (so constant fields are exactly annihilated)
/// and `w` grows exponentially with altitude, penalizing roughness harder
/// where aerosols are sparse.
#[derive(Clone, Debug)]
pub struct LaplacianReg {
    nx: usize,
    ny: usize,
    nz: usize,
    weights: Vec<f64>,
}

impl LaplacianReg {
    pub fn new(grid: &VoxelGrid, scale_height: f64) -> LaplacianReg {
        let weights = (0..grid.n_voxels())
            .map(|k| (grid.center_altitude(k) / scale_height).exp())
            .collect();
        LaplacianReg { nx: grid.nx, ny: grid.ny, nz: grid.nz, weights }
    }

    /// `out = L x` with `L(k,k) = deg(k)`, `L(k,m) = -1` for grid neighbors.
    /// `L` is symmetric.
    pub fn apply_l(&self, x: &[f64], out: &mut [f64]) {
        let (nx, ny, nz) = (self.nx, self.ny, self.nz);
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    let k = ix + nx * (iy + ny * iz);
                    let mut acc = 0.0;
                    let mut deg = 0.0;
                    if ix > 0 {
                        acc += x[k - 1];
                        deg += 1.0;
                    }
                    if ix + 1 < nx {
                        acc += x[k + 1];
                        deg += 1.0;
                    }
                    if iy > 0 {
                        acc += x[k - nx];
                        deg += 1.0;
                    }
                    if iy + 1 < ny {
                        acc += x[k + nx];
                        deg += 1.0;
                    }
                    if iz > 0 {
                        acc += x[k - nx * ny];
                        deg += 1.0;
                    }
                    if iz + 1 < nz {
                        acc += x[k + nx * ny];
                        deg += 1.0;
                    }
                    out[k] = deg * x[k] - acc;
                }
            }
        }
    }

    pub fn psi(&self, x: &[f64]) -> f64 {
        let mut lx = vec![0.0; x.len()];
        self.apply_l(x, &mut lx);
        lx.iter()
            .zip(&self.weights)
            .map(|(v, w)| (w * v) * (w * v))
            .sum()
    }

    /// `out += scale * 2 * L (w^2 .* L x)` (gradient of `psi`, using the
    /// symmetry of `L`).
    pub fn add_gradient(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        let mut lx = vec![0.0; x.len()];
        self.apply_l(x, &mut lx);
        for (v, w) in lx.iter_mut().zip(&self.weights) {
            *v *= w * w;
        }
        let mut g = vec![0.0; x.len()];
        self.apply_l(&lx, &mut g);
        for (o, v) in out.iter_mut().zip(&g) {
            *o += scale * 2.0 * v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;
    use rand::Rng;

    fn grid() -> VoxelGrid {
        VoxelGrid::new(4, 3, 5, Vec3::ZERO, Vec3::new(100.0, 100.0, 50.0)).unwrap()
    }

    #[test]
    fn constant_field_is_annihilated() {
        let g = grid();
        let reg = LaplacianReg::new(&g, 3000.0);
        let x = vec![3.7; g.n_voxels()];
        assert_eq!(reg.psi(&x), 0.0);
        let mut grad = vec![0.0; x.len()];
        reg.add_gradient(&x, 1.0, &mut grad);
        assert!(grad.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = grid();
        let reg = LaplacianReg::new(&g, 2000.0);
        let mut rng = crate::rng::packet_rng(17, 0);
        let x: Vec<f64> = (0..g.n_voxels()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut grad = vec![0.0; x.len()];
        reg.add_gradient(&x, 1.0, &mut grad);
        let h = 1e-6;
        for k in (0..x.len()).step_by(7) {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (reg.psi(&xp) - reg.psi(&xm)) / (2.0 * h);
            let denom = fd.abs().max(grad[k].abs()).max(1e-12);
            assert!(
                (fd - grad[k]).abs() / denom < 1e-6,
                "voxel {k}: fd {fd} grad {}",
                grad[k]
            );
        }
    }

    #[test]
    fn laplacian_is_symmetric() {
        let g = grid();
        let reg = LaplacianReg::new(&g, 3000.0);
        let n = g.n_voxels();
        let mut rng = crate::rng::packet_rng(23, 0);
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut lu = vec![0.0; n];
        let mut lv = vec![0.0; n];
        reg.apply_l(&u, &mut lu);
        reg.apply_l(&v, &mut lv);
        let a: f64 = lu.iter().zip(&v).map(|(a, b)| a * b).sum();
        let b: f64 = lv.iter().zip(&u).map(|(a, b)| a * b).sum();
        assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }
}
