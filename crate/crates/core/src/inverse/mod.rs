//! Recovery of the aerosol extinction field from multi-view images:
//! masked least-squares cost over RGB channels, surrogate-function Jacobian
//! with frozen in-scatter fields, ray-count conditioning, altitude-weighted
//! Laplacian regularization, and projected gradient descent.

pub mod regularizer;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::derive_seed;
use crate::scene::{Channel, Scene, VoxelGrid};
use crate::sensor::SunMask;
use crate::transport::TransportConfig;
use crate::vfmc::{
    accumulate_scatter, build_geometry, in_scatter_field, render, LosMatrix, ProjectionMatrix,
};
use regularizer::LaplacianReg;

/// Structural constraints on the unknown field: non-negativity (always),
/// optional support mask, optional piecewise-constant blocking.
#[derive(Clone, Debug, Default)]
pub struct Constraints {
    /// `true` for voxels allowed to carry aerosol.
    pub support: Option<Vec<bool>>,
    /// Voxels-per-block along (x, y, z).
    pub blocks: Option<(usize, usize, usize)>,
}

impl Constraints {
    pub fn none() -> Constraints {
        Constraints::default()
    }

    fn block_of(&self, grid: &VoxelGrid, ix: usize, iy: usize, iz: usize) -> usize {
        let (bx, by, bz) = self.blocks.unwrap();
        let nbx = grid.nx.div_ceil(bx);
        let nby = grid.ny.div_ceil(by);
        (ix / bx) + nbx * ((iy / by) + nby * (iz / bz))
    }

    fn block_average(&self, grid: &VoxelGrid, x: &mut [f64]) {
        let (bx, by, bz) = self.blocks.unwrap();
        let nb = grid.nx.div_ceil(bx) * grid.ny.div_ceil(by) * grid.nz.div_ceil(bz);
        let mut sums = vec![0.0f64; nb];
        let mut counts = vec![0u32; nb];
        for iz in 0..grid.nz {
            for iy in 0..grid.ny {
                for ix in 0..grid.nx {
                    let b = self.block_of(grid, ix, iy, iz);
                    sums[b] += x[grid.index(ix, iy, iz)];
                    counts[b] += 1;
                }
            }
        }
        for iz in 0..grid.nz {
            for iy in 0..grid.ny {
                for ix in 0..grid.nx {
                    let b = self.block_of(grid, ix, iy, iz);
                    x[grid.index(ix, iy, iz)] = sums[b] / counts[b] as f64;
                }
            }
        }
    }

    /// Zeroes unsupported entries. With blocking active, a block is
    /// supported only when all of its voxels are, which keeps the projection
    /// idempotent.
    fn apply_support(&self, grid: &VoxelGrid, x: &mut [f64]) {
        let Some(support) = &self.support else {
            return;
        };
        if self.blocks.is_some() {
            let (bx, by, bz) = self.blocks.unwrap();
            let nb = grid.nx.div_ceil(bx) * grid.ny.div_ceil(by) * grid.nz.div_ceil(bz);
            let mut ok = vec![true; nb];
            for iz in 0..grid.nz {
                for iy in 0..grid.ny {
                    for ix in 0..grid.nx {
                        if !support[grid.index(ix, iy, iz)] {
                            ok[self.block_of(grid, ix, iy, iz)] = false;
                        }
                    }
                }
            }
            for iz in 0..grid.nz {
                for iy in 0..grid.ny {
                    for ix in 0..grid.nx {
                        if !ok[self.block_of(grid, ix, iy, iz)] {
                            x[grid.index(ix, iy, iz)] = 0.0;
                        }
                    }
                }
            }
        } else {
            for (v, s) in x.iter_mut().zip(support) {
                if !s {
                    *v = 0.0;
                }
            }
        }
    }

    /// Projects onto the constraint set: block-average, zero outside
    /// support, clamp non-negative. Idempotent.
    pub fn project(&self, grid: &VoxelGrid, x: &mut [f64]) {
        if self.blocks.is_some() {
            self.block_average(grid, x);
        }
        self.apply_support(grid, x);
        for v in x.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    /// Restriction of a gradient to the constrained subspace
    /// (block-average and support zeroing, no clamping).
    pub fn restrict_gradient(&self, grid: &VoxelGrid, g: &mut [f64]) {
        if self.blocks.is_some() {
            self.block_average(grid, g);
        }
        self.apply_support(grid, g);
    }
}

/// Per-channel total extinction from the green-channel aerosol unknown:
/// `beta_mu = beta_air_mu + (sigma_mu / sigma_G) * x`.
pub fn channel_extinction(scene: &Scene, x: &[f64]) -> Result<[Vec<f64>; 3]> {
    if scene.medium.sigma_aerosol[Channel::G.index()] == 0.0 {
        return Err(Error::validation("sigma", "green cross section must be nonzero"));
    }
    Ok(std::array::from_fn(|chi| {
        let ratio = scene.medium.sigma_aerosol[chi] / scene.medium.sigma_aerosol[Channel::G.index()];
        scene.medium.beta_air[chi]
            .iter()
            .zip(x)
            .map(|(a, v)| a + ratio * v)
            .collect()
    }))
}

/// The data side of a reconstruction: measured images (radiance units),
/// masks, and the precomputed per-camera geometry.
pub struct InverseProblem<'a> {
    pub scene: &'a Scene,
    /// `measured[cam][channel]`.
    pub measured: Vec<[Image; 3]>,
    pub masks: Vec<SunMask>,
    pub projections: Vec<ProjectionMatrix>,
    pub los: Vec<LosMatrix>,
    pub constraints: Constraints,
    pub reg: LaplacianReg,
}

impl<'a> InverseProblem<'a> {
    pub fn new(
        scene: &'a Scene,
        measured: Vec<[Image; 3]>,
        masks: Vec<SunMask>,
        n_rays: usize,
        constraints: Constraints,
        reg_scale_height: f64,
    ) -> Result<Self> {
        if measured.len() != scene.cameras.len() || masks.len() != scene.cameras.len() {
            return Err(Error::Dimension(format!(
                "got {} image sets and {} masks for {} cameras",
                measured.len(),
                masks.len(),
                scene.cameras.len()
            )));
        }
        for (c, cam) in scene.cameras.iter().enumerate() {
            for img in &measured[c] {
                if img.npx != cam.npx || img.npy != cam.npy {
                    return Err(Error::Dimension(format!(
                        "camera {c}: image is {}x{}, camera has {}x{} pixels",
                        img.npx, img.npy, cam.npx, cam.npy
                    )));
                }
            }
            if masks[c].masked.len() != cam.n_pixels() {
                return Err(Error::Dimension(format!("camera {c}: mask shape mismatch")));
            }
        }
        let (projections, los) = build_geometry(scene, n_rays);
        let reg = LaplacianReg::new(&scene.grid, reg_scale_height);
        Ok(InverseProblem { scene, measured, masks, projections, los, constraints, reg })
    }
}

/// In-scatter fields frozen for one surrogate block: `j[channel][camera]`.
pub struct FrozenFields {
    pub j: Vec<Vec<Vec<f64>>>,
}

/// Renders the in-scatter fields at the current estimate (a forward-model
/// pass, not an inverse step).
pub fn refresh_frozen(
    problem: &InverseProblem,
    x: &[f64],
    photons: u64,
    seed: u64,
    cfg: &TransportConfig,
    threads: usize,
) -> Result<FrozenFields> {
    let scene_x = problem.scene.with_aerosol_g(x)?;
    let n_cams = scene_x.cameras.len();
    let mut j = Vec::with_capacity(3);
    for ch in Channel::ALL {
        let (cache, _) = accumulate_scatter(
            &scene_x,
            ch,
            photons,
            derive_seed(seed, ch.index() as u64),
            cfg,
            threads,
        );
        let beta = scene_x.medium.beta_total(ch);
        let e = scene_x.sun.irradiance[ch.index()];
        j.push((0..n_cams).map(|c| in_scatter_field(&cache, c, e, beta)).collect());
    }
    Ok(FrozenFields { j })
}

#[derive(Clone, Copy, Debug)]
pub struct CostBreakdown {
    pub data: f64,
    pub reg: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.data + self.reg
    }
}

/// Masked least-squares cost with the in-scatter fields held fixed, plus the
/// weighted-Laplacian penalty.
pub fn cost(
    problem: &InverseProblem,
    x: &[f64],
    frozen: &FrozenFields,
    eta: f64,
) -> Result<CostBreakdown> {
    let betas = channel_extinction(problem.scene, x)?;
    let mut data = 0.0;
    for ch in Channel::ALL {
        let beta = &betas[ch.index()];
        for c in 0..problem.scene.cameras.len() {
            let t = problem.los[c].transmittance_field(beta);
            let model = render(&problem.projections[c], &frozen.j[ch.index()][c], beta, &t)?;
            let meas = &problem.measured[c][ch.index()];
            let mask = &problem.masks[c];
            for p in 0..model.data.len() {
                if !mask.is_masked(p) {
                    let r = model.data[p] - meas.data[p];
                    data += r * r;
                }
            }
        }
    }
    let reg = if eta > 0.0 { eta * problem.reg.psi(x) } else { 0.0 };
    Ok(CostBreakdown { data, reg })
}

/// `J^T r` for one camera/channel with frozen `j`: the Jacobian of
/// `Pi (j ⊙ beta ⊙ T)` in `beta` factors into
/// `Pi diag(j) [diag(T) - diag(beta ⊙ T) W]`, applied matrix-free.
pub fn surrogate_jacobian_transpose_apply(
    proj: &ProjectionMatrix,
    los: &LosMatrix,
    j: &[f64],
    beta: &[f64],
    t: &[f64],
    residual: &[f64],
) -> Vec<f64> {
    let n = beta.len();
    let mut v = vec![0.0; n];
    proj.transpose_apply(residual, &mut v);
    for (vk, jk) in v.iter_mut().zip(j) {
        *vk *= jk;
    }
    let mut out: Vec<f64> = t.iter().zip(&v).map(|(tk, vk)| tk * vk).collect();
    let u: Vec<f64> = (0..n).map(|k| beta[k] * t[k] * v[k]).collect();
    let mut wtu = vec![0.0; n];
    los.transpose_apply(&u, &mut wtu);
    for (o, w) in out.iter_mut().zip(&wtu) {
        *o -= w;
    }
    out
}

/// Full cost gradient over the green-channel aerosol unknowns.
///
/// With `conditioning` enabled, each camera's term is divided by its
/// per-voxel sub-ray count (zero where the camera has no coverage) before
/// summing, equalizing the step between near-camera and distant voxels.
/// Conditioning changes the descent direction, not the cost; disable it to
/// compare against finite differences.
pub fn gradient(
    problem: &InverseProblem,
    x: &[f64],
    frozen: &FrozenFields,
    eta: f64,
    conditioning: bool,
) -> Result<Vec<f64>> {
    let betas = channel_extinction(problem.scene, x)?;
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut residual = Vec::new();
    for ch in Channel::ALL {
        let beta = &betas[ch.index()];
        let sigma_ratio = problem.scene.sigma_ratio(ch);
        for c in 0..problem.scene.cameras.len() {
            let t = problem.los[c].transmittance_field(beta);
            let model = render(&problem.projections[c], &frozen.j[ch.index()][c], beta, &t)?;
            let meas = &problem.measured[c][ch.index()];
            let mask = &problem.masks[c];
            residual.clear();
            residual.extend((0..model.data.len()).map(|p| {
                if mask.is_masked(p) {
                    0.0
                } else {
                    model.data[p] - meas.data[p]
                }
            }));
            let mut jt = surrogate_jacobian_transpose_apply(
                &problem.projections[c],
                &problem.los[c],
                &frozen.j[ch.index()][c],
                beta,
                &t,
                &residual,
            );
            if conditioning {
                for (v, cnt) in jt.iter_mut().zip(&problem.projections[c].ray_counts) {
                    if *cnt > 0 {
                        *v /= *cnt as f64;
                    } else {
                        *v = 0.0;
                    }
                }
            }
            for (gk, jk) in g.iter_mut().zip(&jt) {
                *gk += 2.0 * sigma_ratio * jk;
            }
        }
    }
    if eta > 0.0 {
        problem.reg.add_gradient(x, eta, &mut g);
    }
    problem.constraints.restrict_gradient(&problem.scene.grid, &mut g);
    Ok(g)
}

/// Mass and local-error metrics between recovered and true fields:
/// `delta_mass = (|n_hat| - |n_true|) / |n_true|` and
/// `epsilon = |n_hat - n_true| / |n_true|` in the l1 norm.
pub fn error_metrics(n_hat: &[f64], n_true: &[f64]) -> Result<(f64, f64)> {
    if n_hat.len() != n_true.len() {
        return Err(Error::Dimension("metric operands differ in length".into()));
    }
    let norm_true: f64 = n_true.iter().map(|v| v.abs()).sum();
    if norm_true == 0.0 {
        return Err(Error::Invalid("true field is identically zero".into()));
    }
    let norm_hat: f64 = n_hat.iter().map(|v| v.abs()).sum();
    let diff: f64 = n_hat.iter().zip(n_true).map(|(a, b)| (a - b).abs()).sum();
    Ok(((norm_hat - norm_true) / norm_true, diff / norm_true))
}

#[derive(Clone, Debug)]
pub struct Hyperparams {
    /// Gradient-descent step size.
    pub step: f64,
    /// Regularization weight.
    pub eta: f64,
    /// Inner descent steps per surrogate block.
    pub n_gd: u32,
    /// Maximum surrogate blocks.
    pub max_q: u32,
    /// Forward-tracking budget per in-scatter refresh (per channel).
    pub photons_per_update: u64,
    /// Optional larger budget for one final block.
    pub final_polish_photons: Option<u64>,
    pub seed: u64,
    pub threads: usize,
    pub conditioning: bool,
    /// Plateau stop: relative spread of the block costs over the window.
    pub stop_rel_change: f64,
    pub stop_window: u32,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            step: 1e-3,
            eta: 0.0,
            n_gd: 5,
            max_q: 200,
            photons_per_update: 100_000,
            final_polish_photons: None,
            seed: 7,
            threads: 0,
            conditioning: true,
            stop_rel_change: 1e-4,
            stop_window: 10,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TraceRow {
    pub q: u32,
    pub d: u32,
    pub cost_data: f64,
    pub cost_reg: f64,
    pub cost_total: f64,
    pub step: f64,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub beta_aerosol_g: Vec<f64>,
    pub trace: Vec<TraceRow>,
    /// Cost at the end of each surrogate block.
    pub block_costs: Vec<f64>,
    pub step_final: f64,
    pub halvings: u32,
    pub blocks_run: u32,
}

/// Surrogate-descent driver: alternately re-renders the in-scatter fields at
/// the current estimate (fresh RNG stream each block) and runs `n_gd`
/// projected gradient-descent steps with those fields frozen. The step is
/// halved after five consecutive cost-increasing blocks; the run stops at
/// `max_q` blocks or when the block costs plateau.
pub fn solve(
    problem: &InverseProblem,
    hp: &Hyperparams,
    cfg: &TransportConfig,
    init: Vec<f64>,
) -> Result<SolveResult> {
    let grid = &problem.scene.grid;
    let mut x = init;
    if x.len() != grid.n_voxels() {
        return Err(Error::Dimension("init length != n_voxels".into()));
    }
    problem.constraints.project(grid, &mut x);
    let mut step = hp.step;
    let mut trace = Vec::new();
    let mut block_costs: Vec<f64> = Vec::new();
    let mut consecutive_up = 0u32;
    let mut halvings = 0u32;
    let mut blocks_run = 0u32;
    let mut run_block = |q: u32,
                         photons: u64,
                         x: &mut Vec<f64>,
                         step: &mut f64,
                         trace: &mut Vec<TraceRow>|
     -> Result<f64> {
        let frozen = refresh_frozen(problem, x, photons, derive_seed(hp.seed, q as u64), cfg, hp.threads)?;
        let mut last = f64::NAN;
        for d in 0..hp.n_gd {
            let g = gradient(problem, x, &frozen, hp.eta, hp.conditioning)?;
            for (xk, gk) in x.iter_mut().zip(&g) {
                *xk -= *step * gk;
            }
            problem.constraints.project(grid, x);
            let cb = cost(problem, x, &frozen, hp.eta)?;
            last = cb.total();
            if !last.is_finite() {
                return Err(Error::Divergence(format!(
                    "cost became non-finite at block {q}, inner step {d}"
                )));
            }
            trace.push(TraceRow {
                q,
                d,
                cost_data: cb.data,
                cost_reg: cb.reg,
                cost_total: last,
                step: *step,
            });
        }
        Ok(last)
    };
    for q in 0..hp.max_q {
        let c = run_block(q, hp.photons_per_update, &mut x, &mut step, &mut trace)?;
        blocks_run += 1;
        if let Some(prev) = block_costs.last() {
            if c > *prev {
                consecutive_up += 1;
                if consecutive_up >= 5 {
                    step *= 0.5;
                    halvings += 1;
                    consecutive_up = 0;
                }
            } else {
                consecutive_up = 0;
            }
        }
        block_costs.push(c);
        let w = hp.stop_window as usize;
        if block_costs.len() > w {
            let recent = &block_costs[block_costs.len() - w - 1..];
            let hi = recent.iter().cloned().fold(f64::MIN, f64::max);
            let lo = recent.iter().cloned().fold(f64::MAX, f64::min);
            if hi > 0.0 && (hi - lo) / hi < hp.stop_rel_change {
                break;
            }
        }
    }
    if let Some(polish) = hp.final_polish_photons {
        let c = run_block(blocks_run, polish, &mut x, &mut step, &mut trace)?;
        blocks_run += 1;
        block_costs.push(c);
    }
    Ok(SolveResult {
        beta_aerosol_g: x,
        trace,
        block_costs,
        step_final: step,
        halvings,
        blocks_run,
    })
}

/// Writes the per-step cost trace as CSV.
pub fn trace_to_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from("q,d,cost_data,cost_reg,cost_total,step\n");
    for r in trace {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.q, r.d, r.cost_data, r.cost_reg, r.cost_total, r.step
        ));
    }
    s
}
