//! Exact incremental voxel-grid ray traversal and optical-depth marching.
//!
//! The walker steps one voxel boundary at a time; segment lengths come from
//! differences of a single monotone parameter sequence, so their sum
//! telescopes to the clipped ray length exactly (up to addition rounding).

use crate::math::Vec3;
use crate::scene::VoxelGrid;

/// One voxel intersection of a ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub voxel: usize,
    pub length: f64,
}

/// Ordered voxel intersections of a ray with the grid.
#[derive(Clone, Debug, Default)]
pub struct Traversal {
    pub segments: Vec<Segment>,
    /// Ray parameter at domain entry (0 when the origin is inside).
    pub t_enter: f64,
    /// Ray parameter at domain exit (or at the user-supplied end point).
    pub t_exit: f64,
}

impl Traversal {
    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(|s| s.length).sum()
    }
}

/// Segment produced by [`GridWalker`], with its absolute ray parameters.
#[derive(Clone, Copy, Debug)]
pub struct WalkSegment {
    pub voxel: usize,
    pub t0: f64,
    pub t1: f64,
}

impl WalkSegment {
    #[inline]
    pub fn length(&self) -> f64 {
        self.t1 - self.t0
    }
}

/// Allocation-free incremental traversal of a grid along a ray.
pub struct GridWalker {
    nx: isize,
    ny: isize,
    nz: isize,
    idx: [isize; 3],
    step: [isize; 3],
    t_next: [f64; 3],
    dt: [f64; 3],
    t: f64,
    t_exit: f64,
    done: bool,
}

impl GridWalker {
    /// Walker for the ray `origin + t * dir`, `t in [0, t_max]`.
    /// Returns `None` when the ray does not intersect the domain.
    /// `dir` must be unit-norm so that `t` is metric length.
    pub fn new(grid: &VoxelGrid, origin: Vec3, dir: Vec3, t_max: f64) -> Option<GridWalker> {
        debug_assert!((dir.length() - 1.0).abs() < 1e-9, "direction must be unit");
        let lo = grid.min_corner();
        let hi = grid.max_corner();
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for a in 0..3 {
            let o = origin.component(a);
            let d = dir.component(a);
            let (l, h) = (lo.component(a), hi.component(a));
            if d == 0.0 {
                if o < l || o >= h {
                    return None;
                }
            } else {
                let ta = (l - o) / d;
                let tb = (h - o) / d;
                let (ta, tb) = if ta <= tb { (ta, tb) } else { (tb, ta) };
                t0 = t0.max(ta);
                t1 = t1.min(tb);
            }
        }
        if !(t1 > t0) {
            return None;
        }
        let entry = origin + dir * t0;
        let mut idx = [0isize; 3];
        let mut step = [0isize; 3];
        let mut t_next = [f64::INFINITY; 3];
        let mut dt = [f64::INFINITY; 3];
        let dims = [grid.nx as isize, grid.ny as isize, grid.nz as isize];
        for a in 0..3 {
            let sp = grid.spacing.component(a);
            let rel = (entry.component(a) - lo.component(a)) / sp;
            idx[a] = (rel.floor() as isize).clamp(0, dims[a] - 1);
            let d = dir.component(a);
            if d > 0.0 {
                step[a] = 1;
                let bound = lo.component(a) + (idx[a] + 1) as f64 * sp;
                t_next[a] = (bound - origin.component(a)) / d;
                dt[a] = sp / d;
            } else if d < 0.0 {
                step[a] = -1;
                let bound = lo.component(a) + idx[a] as f64 * sp;
                t_next[a] = (bound - origin.component(a)) / d;
                dt[a] = -sp / d;
            }
        }
        Some(GridWalker {
            nx: dims[0],
            ny: dims[1],
            nz: dims[2],
            idx,
            step,
            t_next,
            dt,
            t: t0,
            t_exit: t1,
            done: false,
        })
    }

    #[inline]
    pub fn t_enter_exit(&self) -> (f64, f64) {
        (self.t, self.t_exit)
    }

    pub fn t_exit(&self) -> f64 {
        self.t_exit
    }

    /// Next strictly positive-length segment, or `None` past the domain.
    /// Ties at voxel corners advance one axis at a time; the zero-length
    /// in-between segments are skipped.
    #[inline]
    pub fn next_segment(&mut self) -> Option<WalkSegment> {
        while !self.done {
            let t_hit = self.t_next[0].min(self.t_next[1]).min(self.t_next[2]);
            let t_end = t_hit.min(self.t_exit);
            let voxel =
                (self.idx[0] + self.nx * (self.idx[1] + self.ny * self.idx[2])) as usize;
            let t_start = self.t;
            if t_hit >= self.t_exit {
                self.done = true;
            } else {
                let axis = if self.t_next[0] <= self.t_next[1] && self.t_next[0] <= self.t_next[2] {
                    0
                } else if self.t_next[1] <= self.t_next[2] {
                    1
                } else {
                    2
                };
                self.idx[axis] += self.step[axis];
                let dim = match axis {
                    0 => self.nx,
                    1 => self.ny,
                    _ => self.nz,
                };
                if self.idx[axis] < 0 || self.idx[axis] >= dim {
                    self.done = true;
                }
                self.t_next[axis] += self.dt[axis];
            }
            self.t = t_end;
            if t_end > t_start {
                return Some(WalkSegment { voxel, t0: t_start, t1: t_end });
            }
        }
        None
    }
}

/// Collects the full traversal of a ray through the grid.
pub fn traverse(grid: &VoxelGrid, origin: Vec3, dir: Vec3) -> Traversal {
    collect_walker(GridWalker::new(grid, origin, dir, f64::INFINITY))
}

/// Traversal of the finite segment from `origin` to `target`,
/// clipped to the domain.
pub fn traverse_to(grid: &VoxelGrid, origin: Vec3, target: Vec3) -> Traversal {
    let delta = target - origin;
    let dist = delta.length();
    if dist == 0.0 {
        return Traversal::default();
    }
    collect_walker(GridWalker::new(grid, origin, delta / dist, dist))
}

fn collect_walker(walker: Option<GridWalker>) -> Traversal {
    let Some(mut w) = walker else {
        return Traversal::default();
    };
    let t_enter = w.t;
    let t_exit = w.t_exit;
    let mut segments = Vec::new();
    while let Some(s) = w.next_segment() {
        segments.push(Segment { voxel: s.voxel, length: s.length() });
    }
    Traversal { segments, t_enter, t_exit }
}

/// Optical depth of a traversal under a per-voxel extinction field.
pub fn optical_depth(traversal: &Traversal, beta: &[f64]) -> f64 {
    traversal
        .segments
        .iter()
        .map(|s| beta[s.voxel] * s.length)
        .sum()
}

/// Beer-Lambert transmittance.
#[inline]
pub fn transmittance(tau: f64) -> f64 {
    debug_assert!(tau >= 0.0);
    (-tau).exp()
}

/// Result of marching a ray to a target optical depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MarchOutcome {
    /// The target depth was reached inside the domain.
    Scattered { pos: Vec3, voxel: usize, distance: f64 },
    /// The ray left the domain (or missed it) first.
    Escaped { exit: Vec3, distance: f64 },
}

/// Walks the ray accumulating `beta * length` per voxel and returns the point
/// where the accumulated optical depth reaches `tau_target`, or the domain
/// exit. Escape is a normal outcome, not an error.
pub fn march_to_tau(
    grid: &VoxelGrid,
    beta: &[f64],
    origin: Vec3,
    dir: Vec3,
    tau_target: f64,
) -> MarchOutcome {
    debug_assert!(tau_target >= 0.0);
    let Some(mut w) = GridWalker::new(grid, origin, dir, f64::INFINITY) else {
        return MarchOutcome::Escaped { exit: origin, distance: 0.0 };
    };
    let t_exit = w.t_exit;
    let mut acc = 0.0f64;
    while let Some(seg) = w.next_segment() {
        let b = beta[seg.voxel];
        let dtau = b * seg.length();
        if acc + dtau >= tau_target {
            let l_in = if b > 0.0 { (tau_target - acc) / b } else { 0.0 };
            let distance = seg.t0 + l_in;
            return MarchOutcome::Scattered {
                pos: origin + dir * distance,
                voxel: seg.voxel,
                distance,
            };
        }
        acc += dtau;
    }
    MarchOutcome::Escaped { exit: origin + dir * t_exit, distance: t_exit }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn grid(n: usize, d: f64) -> VoxelGrid {
        VoxelGrid::new(n, n, n, Vec3::ZERO, Vec3::new(d, d, d)).unwrap()
    }

    #[test]
    fn axis_aligned_ray_yields_equal_segments() {
        let g = grid(5, 100.0);
        let tr = traverse(&g, Vec3::new(-50.0, 250.0, 250.0), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(tr.segments.len(), 5);
        for (i, s) in tr.segments.iter().enumerate() {
            assert!((s.length - 100.0).abs() < 1e-9);
            assert_eq!(s.voxel, g.index(i, 2, 2));
        }
    }

    #[test]
    fn face_diagonal_yields_sqrt2_segments() {
        let g = grid(4, 50.0);
        let dir = Vec3::new(1.0, 1.0, 0.0).normalized();
        let tr = traverse(&g, Vec3::new(0.0, 0.0, 25.0), dir);
        // along the diagonal every crossed voxel contributes d*sqrt(2)
        let expect = 50.0 * 2.0f64.sqrt();
        assert_eq!(tr.segments.len(), 4);
        for s in &tr.segments {
            assert!((s.length - expect).abs() < 1e-9, "{}", s.length);
        }
    }

    #[test]
    fn segment_sum_matches_clipped_length() {
        let g = VoxelGrid::new(7, 5, 9, Vec3::new(-100.0, 40.0, 0.0), Vec3::new(37.0, 96.0, 12.5)).unwrap();
        let mut rng = crate::rng::packet_rng(42, 0);
        let lo = g.min_corner();
        let hi = g.max_corner();
        for _ in 0..2000 {
            let o = Vec3::new(
                rng.gen_range(lo.x - 200.0..hi.x + 200.0),
                rng.gen_range(lo.y - 200.0..hi.y + 200.0),
                rng.gen_range(lo.z - 200.0..hi.z + 200.0),
            );
            let d = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if d.length() < 1e-3 {
                continue;
            }
            let d = d.normalized();
            let tr = traverse(&g, o, d);
            // independent slab clip
            let mut t0 = 0.0f64;
            let mut t1 = f64::INFINITY;
            let mut miss = false;
            for a in 0..3 {
                let (oa, da) = (o.component(a), d.component(a));
                let (l, h) = (lo.component(a), hi.component(a));
                if da == 0.0 {
                    if oa < l || oa >= h {
                        miss = true;
                    }
                } else {
                    let (ta, tb) = ((l - oa) / da, (h - oa) / da);
                    let (ta, tb) = if ta < tb { (ta, tb) } else { (tb, ta) };
                    t0 = t0.max(ta);
                    t1 = t1.min(tb);
                }
            }
            let expect = if miss || t1 <= t0 { 0.0 } else { t1 - t0 };
            let got = tr.total_length();
            assert!(
                (got - expect).abs() <= 1e-9 * expect.max(1.0),
                "sum {got} clip {expect}"
            );
            // segments sit in adjacent voxels along the ray
            for s in &tr.segments {
                assert!(s.length > 0.0);
                assert!(s.voxel < g.n_voxels());
            }
        }
    }

    #[test]
    fn march_homogeneous() {
        let g = grid(10, 1000.0);
        let beta = vec![1e-4; g.n_voxels()];
        let o = Vec3::new(5.0, 5000.0, 5000.0);
        let d = Vec3::new(1.0, 0.0, 0.0);
        match march_to_tau(&g, &beta, o, d, 0.1) {
            MarchOutcome::Scattered { distance, .. } => {
                assert!((distance - 1000.0).abs() < 1e-9, "{distance}");
            }
            _ => panic!("expected scatter"),
        }
        // tau = 0 stops at the origin
        match march_to_tau(&g, &beta, o, d, 0.0) {
            MarchOutcome::Scattered { pos, distance, .. } => {
                assert_eq!(distance, 0.0);
                assert_eq!(pos, o);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn march_two_voxel_piecewise() {
        // beta = (1e-4, 2e-4) over 1000 m each; tau 0.25 stops 750 m into
        // the second voxel, total 1750 m.
        let g = VoxelGrid::new(2, 1, 1, Vec3::ZERO, Vec3::new(1000.0, 1000.0, 1000.0)).unwrap();
        let beta = vec![1e-4, 2e-4];
        match march_to_tau(&g, &beta, Vec3::new(0.0, 500.0, 500.0), Vec3::new(1.0, 0.0, 0.0), 0.25) {
            MarchOutcome::Scattered { distance, voxel, .. } => {
                assert_eq!(voxel, 1);
                assert!((distance - 1750.0).abs() < 1e-9, "{distance}");
            }
            _ => panic!("expected scatter"),
        }
        // past the total depth of 0.3 the ray escapes at 2000 m
        match march_to_tau(&g, &beta, Vec3::new(0.0, 500.0, 500.0), Vec3::new(1.0, 0.0, 0.0), 0.31) {
            MarchOutcome::Escaped { distance, .. } => assert!((distance - 2000.0).abs() < 1e-9),
            _ => panic!("expected escape"),
        }
    }

    #[test]
    fn march_is_inverse_of_optical_depth() {
        let g = VoxelGrid::new(6, 6, 6, Vec3::ZERO, Vec3::new(500.0, 400.0, 300.0)).unwrap();
        let mut rng = crate::rng::packet_rng(9, 1);
        let beta: Vec<f64> = (0..g.n_voxels()).map(|_| rng.gen_range(0.0..4e-4)).collect();
        for _ in 0..500 {
            let o = Vec3::new(
                rng.gen_range(0.0..3000.0),
                rng.gen_range(0.0..2400.0),
                rng.gen_range(0.0..1800.0),
            );
            let d = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if d.length() < 1e-3 {
                continue;
            }
            let d = d.normalized();
            let target = rng.gen_range(0.0..0.5);
            if let MarchOutcome::Scattered { pos, .. } = march_to_tau(&g, &beta, o, d, target) {
                let back = optical_depth(&traverse_to(&g, o, pos), &beta);
                assert!(
                    (back - target).abs() < 1e-9 * target.max(1.0),
                    "target {target} back {back}"
                );
            }
        }
    }

    #[test]
    fn transmittance_is_multiplicative_over_concatenation() {
        let g = grid(8, 250.0);
        let mut rng = crate::rng::packet_rng(5, 2);
        let beta: Vec<f64> = (0..g.n_voxels()).map(|_| rng.gen_range(0.0..1e-3)).collect();
        let a = Vec3::new(10.0, 900.0, 300.0);
        let c = Vec3::new(1900.0, 600.0, 1700.0);
        let b = a + (c - a) * 0.37;
        let t_ab = transmittance(optical_depth(&traverse_to(&g, a, b), &beta));
        let t_bc = transmittance(optical_depth(&traverse_to(&g, b, c), &beta));
        let t_ac = transmittance(optical_depth(&traverse_to(&g, a, c), &beta));
        assert!((t_ab * t_bc - t_ac).abs() < 1e-12);
    }

    #[test]
    fn empty_path_has_unit_transmittance() {
        assert_eq!(optical_depth(&Traversal::default(), &[]), 0.0);
        assert_eq!(transmittance(0.0), 1.0);
        assert!((transmittance(std::f64::consts::LN_2) - 0.5).abs() < 1e-15);
        // beta = (1e-4, 2e-4) over (1000, 1000) m: tau = 0.3
        let tau = 1e-4 * 1000.0 + 2e-4 * 1000.0;
        assert!((transmittance(tau) - 0.740818).abs() < 1e-6);
    }
}
