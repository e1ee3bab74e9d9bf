//! Photon-packet life cycles: free-path sampling, particle selection,
//! attenuation and roulette, and the forward / backward tracking drivers.
//!
//! All packets are mutually independent; each one draws from a
//! counter-derived RNG stream, so a run is reproducible regardless of how
//! packets are split across workers (bit-exact accumulation only in
//! sequential mode).

use crate::math::Vec3;
use crate::optics::{
    optical_depth, phase_hg, phase_rayleigh, sample_hg_direction, sample_rayleigh_direction,
    sample_tau, transmittance, traverse, traverse_to, GridWalker,
};
use crate::rng::packet_rng;
use crate::scene::{Channel, Medium, Scene};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Clone, Copy, Debug)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

/// A traced ray bundle: current ray, unitless weight, scattering order.
#[derive(Clone, Copy, Debug)]
pub struct PhotonPacket {
    pub ray: Ray,
    pub intensity: f64,
    pub order: u32,
    pub alive: bool,
}

impl PhotonPacket {
    pub fn launch(origin: Vec3, dir: Vec3) -> PhotonPacket {
        PhotonPacket { ray: Ray { origin, dir }, intensity: 1.0, order: 0, alive: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Particle {
    Air,
    Aerosol,
}

/// One scattering event, reported after particle-type selection and before
/// the packet's direction is resampled. `intensity` is the packet weight
/// arriving at the event (pre-attenuation).
#[derive(Clone, Copy, Debug)]
pub struct ScatterEvent {
    pub voxel: usize,
    pub pos: Vec3,
    pub dir_in: Vec3,
    pub particle: Particle,
    pub intensity: f64,
    pub order: u32,
}

#[derive(Clone, Debug)]
pub struct TransportConfig {
    /// Roulette threshold relative to the launch intensity.
    pub i_min: f64,
    /// Roulette survival probability; survivors are reweighted by its inverse.
    pub survival_prob: f64,
    /// Hard cap on scattering order; capped packets are counted.
    pub max_order: u32,
    /// Radius of the forward-tracking camera detector disc, meters.
    /// `None` derives half the smallest voxel edge.
    pub detector_radius: Option<f64>,
    /// Angular radius counted as a direct solar hit in backward tracking, deg.
    pub solar_tolerance_deg: f64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            i_min: 1e-3,
            survival_prob: 0.5,
            max_order: 300,
            detector_radius: None,
            solar_tolerance_deg: 0.27,
        }
    }
}

/// Aggregate trace statistics (order histogram, termination causes).
#[derive(Clone, Debug, Default)]
pub struct TraceStats {
    pub launched: u64,
    pub missed_domain: u64,
    pub escaped: u64,
    pub roulette_killed: u64,
    pub order_capped: u64,
    pub events_air: u64,
    pub events_aerosol: u64,
    /// Scattering events indexed by order (entry 0 unused).
    pub order_histogram: Vec<u64>,
}

impl TraceStats {
    fn record_event(&mut self, ev: &ScatterEvent) {
        match ev.particle {
            Particle::Air => self.events_air += 1,
            Particle::Aerosol => self.events_aerosol += 1,
        }
        let o = ev.order as usize;
        if self.order_histogram.len() <= o {
            self.order_histogram.resize(o + 1, 0);
        }
        self.order_histogram[o] += 1;
    }

    pub fn merge(&mut self, other: &TraceStats) {
        self.launched += other.launched;
        self.missed_domain += other.missed_domain;
        self.escaped += other.escaped;
        self.roulette_killed += other.roulette_killed;
        self.order_capped += other.order_capped;
        self.events_air += other.events_air;
        self.events_aerosol += other.events_aerosol;
        if self.order_histogram.len() < other.order_histogram.len() {
            self.order_histogram.resize(other.order_histogram.len(), 0);
        }
        for (a, b) in self.order_histogram.iter_mut().zip(&other.order_histogram) {
            *a += b;
        }
    }

    pub fn total_events(&self) -> u64 {
        self.events_air + self.events_aerosol
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("key,value\n");
        s.push_str(&format!("launched,{}\n", self.launched));
        s.push_str(&format!("missed_domain,{}\n", self.missed_domain));
        s.push_str(&format!("escaped,{}\n", self.escaped));
        s.push_str(&format!("roulette_killed,{}\n", self.roulette_killed));
        s.push_str(&format!("order_capped,{}\n", self.order_capped));
        s.push_str(&format!("events_air,{}\n", self.events_air));
        s.push_str(&format!("events_aerosol,{}\n", self.events_aerosol));
        for (o, n) in self.order_histogram.iter().enumerate().skip(1) {
            s.push_str(&format!("order_{o},{n}\n"));
        }
        s
    }
}

/// Receives per-packet transport callbacks. Workers each own a private sink;
/// partial sinks are merged after the parallel region.
pub trait EventSink: Send {
    fn on_scatter(&mut self, ev: &ScatterEvent);
    /// Free-flight segment of length `length` starting at `origin`
    /// (used by the forward detector disc).
    fn on_free_path(&mut self, _origin: Vec3, _dir: Vec3, _length: f64, _intensity: f64) {}
    /// The packet left the domain traveling along `dir`.
    fn on_escape(&mut self, _dir: Vec3, _intensity: f64, _order: u32) {}
    /// End of a packet's life cycle (any cause).
    fn on_packet_done(&mut self) {}
    fn merge(&mut self, other: Self)
    where
        Self: Sized;
}

/// Sink that ignores everything.
pub struct NullSink;

impl EventSink for NullSink {
    fn on_scatter(&mut self, _ev: &ScatterEvent) {}
    fn merge(&mut self, _other: Self) {}
}

impl<A: EventSink, B: EventSink> EventSink for (A, B) {
    fn on_scatter(&mut self, ev: &ScatterEvent) {
        self.0.on_scatter(ev);
        self.1.on_scatter(ev);
    }
    fn on_free_path(&mut self, origin: Vec3, dir: Vec3, length: f64, intensity: f64) {
        self.0.on_free_path(origin, dir, length, intensity);
        self.1.on_free_path(origin, dir, length, intensity);
    }
    fn on_escape(&mut self, dir: Vec3, intensity: f64, order: u32) {
        self.0.on_escape(dir, intensity, order);
        self.1.on_escape(dir, intensity, order);
    }
    fn on_packet_done(&mut self) {
        self.0.on_packet_done();
        self.1.on_packet_done();
    }
    fn merge(&mut self, other: Self) {
        self.0.merge(other.0);
        self.1.merge(other.1);
    }
}

/// Picks the interacting particle type from the relative extinctions.
/// Requires total extinction > 0 in the voxel (a packet cannot stop in a
/// void voxel).
#[inline]
pub fn choose_particle(medium: &Medium, ch: Channel, voxel: usize, u: f64) -> Particle {
    let b = medium.beta_total(ch)[voxel];
    assert!(b > 0.0, "interaction sampled in a void voxel");
    if u * b < medium.beta_aerosol(ch)[voxel] {
        Particle::Aerosol
    } else {
        Particle::Air
    }
}

/// Applies the particle albedo and, below the roulette threshold, either
/// terminates the packet or reweights it by the inverse survival probability
/// (keeping the estimator unbiased). Returns the surviving intensity.
#[inline]
pub fn attenuate_and_roulette(
    intensity: f64,
    albedo: f64,
    cfg: &TransportConfig,
    rng: &mut ChaCha8Rng,
) -> Option<f64> {
    let i = intensity * albedo;
    if i < cfg.i_min {
        if rng.gen::<f64>() < cfg.survival_prob {
            Some(i / cfg.survival_prob)
        } else {
            None
        }
    } else {
        Some(i)
    }
}

#[inline]
fn albedo_of(medium: &Medium, particle: Particle) -> f64 {
    match particle {
        Particle::Air => medium.albedo_air,
        Particle::Aerosol => medium.albedo_aerosol,
    }
}

/// Evaluates the particle's phase function at scattering cosine `mu`.
#[inline]
pub fn phase_of(medium: &Medium, ch: Channel, particle: Particle, mu: f64) -> f64 {
    match particle {
        Particle::Air => phase_rayleigh(mu),
        Particle::Aerosol => phase_hg(mu, medium.g[ch.index()]),
    }
}

/// Runs one packet to termination, reporting events to `sink`.
pub fn propagate<S: EventSink>(
    scene: &Scene,
    ch: Channel,
    mut packet: PhotonPacket,
    rng: &mut ChaCha8Rng,
    cfg: &TransportConfig,
    sink: &mut S,
    stats: &mut TraceStats,
) {
    let beta = scene.medium.beta_total(ch);
    let grid = &scene.grid;
    stats.launched += 1;
    loop {
        let tau_target = sample_tau(rng.gen());
        let Some(mut walker) = GridWalker::new(grid, packet.ray.origin, packet.ray.dir, f64::INFINITY)
        else {
            if packet.order == 0 {
                stats.missed_domain += 1;
            } else {
                stats.escaped += 1;
            }
            break;
        };
        let t_exit = walker.t_exit();
        let mut acc = 0.0f64;
        let mut stop: Option<(usize, f64)> = None;
        while let Some(seg) = walker.next_segment() {
            let b = beta[seg.voxel];
            let dtau = b * seg.length();
            if acc + dtau >= tau_target {
                let l_in = if b > 0.0 { (tau_target - acc) / b } else { 0.0 };
                stop = Some((seg.voxel, seg.t0 + l_in));
                break;
            }
            acc += dtau;
        }
        match stop {
            None => {
                sink.on_free_path(packet.ray.origin, packet.ray.dir, t_exit, packet.intensity);
                sink.on_escape(packet.ray.dir, packet.intensity, packet.order);
                stats.escaped += 1;
                break;
            }
            Some((voxel, distance)) => {
                sink.on_free_path(packet.ray.origin, packet.ray.dir, distance, packet.intensity);
                let pos = packet.ray.origin + packet.ray.dir * distance;
                if beta[voxel] == 0.0 {
                    // zero optical depth drawn into a void voxel: no
                    // interaction is possible there, keep flying
                    packet.ray.origin = pos;
                    continue;
                }
                if packet.order >= cfg.max_order {
                    stats.order_capped += 1;
                    break;
                }
                packet.order += 1;
                let particle = choose_particle(&scene.medium, ch, voxel, rng.gen());
                let ev = ScatterEvent {
                    voxel,
                    pos,
                    dir_in: packet.ray.dir,
                    particle,
                    intensity: packet.intensity,
                    order: packet.order,
                };
                stats.record_event(&ev);
                sink.on_scatter(&ev);
                match attenuate_and_roulette(
                    packet.intensity,
                    albedo_of(&scene.medium, particle),
                    cfg,
                    rng,
                ) {
                    Some(i) => packet.intensity = i,
                    None => {
                        stats.roulette_killed += 1;
                        break;
                    }
                }
                let sample = match particle {
                    Particle::Aerosol => sample_hg_direction(
                        packet.ray.dir,
                        scene.medium.g[ch.index()],
                        rng.gen(),
                        rng.gen(),
                    ),
                    Particle::Air => sample_rayleigh_direction(packet.ray.dir, rng.gen(), rng.gen()),
                };
                packet.ray = Ray { origin: pos, dir: sample.dir };
            }
        }
    }
    sink.on_packet_done();
}

/// Rectangle on the top face from which forward packets launch; extended
/// horizontally by the slant-shadow offset so oblique illumination covers the
/// whole domain down to the ground.
pub fn toa_launch_rect(scene: &Scene) -> (Vec3, f64, f64) {
    let grid = &scene.grid;
    let dir = scene.sun.direction();
    let lo = grid.min_corner();
    let hi = grid.max_corner();
    let t_depth = (hi.z - lo.z) / (-dir.z);
    let shift_x = dir.x * t_depth;
    let shift_y = dir.y * t_depth;
    let x0 = lo.x - shift_x.max(0.0);
    let x1 = hi.x - shift_x.min(0.0);
    let y0 = lo.y - shift_y.max(0.0);
    let y1 = hi.y - shift_y.min(0.0);
    (Vec3::new(x0, y0, hi.z), x1 - x0, y1 - y0)
}

/// Radiometric normalization of a forward run: `power_area * irradiance / n`
/// is the power carried by each unit-weight packet in a channel.
#[derive(Clone, Copy, Debug)]
pub struct FmcNorm {
    /// Launch-rectangle area times the cosine of the solar zenith.
    pub area_cos: f64,
    pub n_packets: u64,
}

impl FmcNorm {
    /// Power represented by a unit-intensity packet, given the channel's
    /// relative irradiance.
    pub fn packet_power(&self, irradiance: f64) -> f64 {
        irradiance * self.area_cos / self.n_packets as f64
    }
}

/// Drives `n_packets` forward packets from the top of the atmosphere along
/// the solar direction. `threads == 1` runs sequentially (bit-exact
/// accumulation order); `threads == 0` uses the global worker pool.
pub fn run_fmc<S: EventSink, F: Fn() -> S + Sync>(
    scene: &Scene,
    ch: Channel,
    n_packets: u64,
    seed: u64,
    cfg: &TransportConfig,
    threads: usize,
    make_sink: F,
) -> (S, TraceStats, FmcNorm) {
    let (corner, ex, ey) = toa_launch_rect(scene);
    let dir = scene.sun.direction();
    let norm = FmcNorm {
        area_cos: ex * ey * scene.sun.cos_zenith(),
        n_packets,
    };
    let trace_one = |i: u64, sink: &mut S, stats: &mut TraceStats| {
        let mut rng = packet_rng(seed, i);
        let x = corner.x + ex * rng.gen::<f64>();
        let y = corner.y + ey * rng.gen::<f64>();
        let packet = PhotonPacket::launch(Vec3::new(x, y, corner.z), dir);
        propagate(scene, ch, packet, &mut rng, cfg, sink, stats);
    };
    if threads == 1 {
        let mut sink = make_sink();
        let mut stats = TraceStats::default();
        for i in 0..n_packets {
            trace_one(i, &mut sink, &mut stats);
        }
        return (sink, stats, norm);
    }
    let run = || {
        (0..n_packets)
            .into_par_iter()
            .fold(
                || (make_sink(), TraceStats::default()),
                |(mut sink, mut stats), i| {
                    trace_one(i, &mut sink, &mut stats);
                    (sink, stats)
                },
            )
            .reduce(
                || (make_sink(), TraceStats::default()),
                |(mut s1, mut t1), (s2, t2)| {
                    s1.merge(s2);
                    t1.merge(&t2);
                    (s1, t1)
                },
            )
    };
    let (sink, stats) = if threads == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("worker pool")
            .install(run)
    };
    (sink, stats, norm)
}

/// Plain forward-tracking renderer sink: per scattering event, adds the
/// local-estimation weight `albedo * I * P * t / |V|^2` to the pixel of every
/// camera that sees the event, and counts packets crossing a small detector
/// disc around each camera for the direct term. Contributions are divided by
/// the pixel solid angle so pixel values estimate radiance.
pub struct PlainLeSink<'a> {
    scene: &'a Scene,
    ch: Channel,
    detector_radius: f64,
    solid_angles: &'a [Vec<f64>],
    /// Per-camera running sums of per-packet pixel contributions.
    sum: Vec<Vec<f64>>,
    sumsq: Vec<Vec<f64>>,
    scratch: Vec<(u32, u32, f64)>,
}

impl<'a> PlainLeSink<'a> {
    pub fn new(scene: &'a Scene, ch: Channel, cfg: &TransportConfig, solid_angles: &'a [Vec<f64>]) -> Self {
        let r = cfg.detector_radius.unwrap_or_else(|| {
            0.5 * scene
                .grid
                .spacing
                .x
                .min(scene.grid.spacing.y)
                .min(scene.grid.spacing.z)
        });
        PlainLeSink {
            scene,
            ch,
            detector_radius: r,
            solid_angles,
            sum: scene.cameras.iter().map(|c| vec![0.0; c.n_pixels()]).collect(),
            sumsq: scene.cameras.iter().map(|c| vec![0.0; c.n_pixels()]).collect(),
            scratch: Vec::new(),
        }
    }

    /// Per-camera mean image and standard error of the mean, in radiance units.
    pub fn finalize(self, norm: &FmcNorm) -> (Vec<crate::image::Image>, Vec<crate::image::Image>) {
        let e = self.scene.sun.irradiance[self.ch.index()];
        let scale = norm.packet_power(e);
        let n = norm.n_packets as f64;
        let mut means = Vec::new();
        let mut sigmas = Vec::new();
        for (c, cam) in self.scene.cameras.iter().enumerate() {
            let mut mean = crate::image::Image::with_validity(cam.npx, cam.npy, cam.valid_mask());
            let mut sig = mean.clone();
            for p in 0..cam.n_pixels() {
                let m = self.sum[c][p] / n;
                let var_mean = (self.sumsq[c][p] / n - m * m).max(0.0) / (n - 1.0).max(1.0);
                mean.data[p] = scale * self.sum[c][p];
                sig.data[p] = scale * n * var_mean.sqrt();
            }
            means.push(mean);
            sigmas.push(sig);
        }
        (means, sigmas)
    }
}

impl<'a> EventSink for PlainLeSink<'a> {
    fn on_scatter(&mut self, ev: &ScatterEvent) {
        let scene = self.scene;
        for (c, cam) in scene.cameras.iter().enumerate() {
            let v = cam.position - ev.pos;
            let r2 = v.length_squared();
            if r2 == 0.0 {
                continue;
            }
            let r = r2.sqrt();
            let v_hat = v / r;
            let Some((ix, iy)) = cam.dir_to_pixel(-v_hat) else {
                continue;
            };
            let mu = ev.dir_in.dot(v_hat);
            let p = phase_of(&scene.medium, self.ch, ev.particle, mu);
            let albedo = albedo_of(&scene.medium, ev.particle);
            let tau = optical_depth(
                &traverse_to(&scene.grid, ev.pos, cam.position),
                scene.medium.beta_total(self.ch),
            );
            let pixel = cam.pixel_index(ix, iy);
            let w = albedo * ev.intensity * p * transmittance(tau) / r2
                / self.solid_angles[c][pixel];
            self.scratch.push((c as u32, pixel as u32, w));
        }
    }

    fn on_free_path(&mut self, origin: Vec3, dir: Vec3, length: f64, intensity: f64) {
        let scene = self.scene;
        let r_det = self.detector_radius;
        for (c, cam) in scene.cameras.iter().enumerate() {
            let to_cam = cam.position - origin;
            let t_star = to_cam.dot(dir).clamp(0.0, length);
            let closest = origin + dir * t_star;
            if (closest - cam.position).length_squared() < r_det * r_det {
                let Some((ix, iy)) = cam.dir_to_pixel(-dir) else {
                    continue;
                };
                let pixel = cam.pixel_index(ix, iy);
                let w = intensity / (std::f64::consts::PI * r_det * r_det)
                    / self.solid_angles[c][pixel];
                self.scratch.push((c as u32, pixel as u32, w));
            }
        }
    }

    fn on_packet_done(&mut self) {
        // fold this packet's contributions into the per-pixel moments,
        // combining repeated hits on the same pixel first
        self.scratch.sort_unstable_by_key(|(c, p, _)| (*c, *p));
        let mut i = 0;
        while i < self.scratch.len() {
            let (c, p, mut w) = self.scratch[i];
            let mut j = i + 1;
            while j < self.scratch.len() && self.scratch[j].0 == c && self.scratch[j].1 == p {
                w += self.scratch[j].2;
                j += 1;
            }
            self.sum[c as usize][p as usize] += w;
            self.sumsq[c as usize][p as usize] += w * w;
            i = j;
        }
        self.scratch.clear();
    }

    fn merge(&mut self, other: Self) {
        for c in 0..self.sum.len() {
            for p in 0..self.sum[c].len() {
                self.sum[c][p] += other.sum[c][p];
                self.sumsq[c][p] += other.sumsq[c][p];
            }
        }
    }
}

/// Per-camera pixel solid angles, used by radiance-calibrated sinks.
pub fn camera_solid_angles(scene: &Scene) -> Vec<Vec<f64>> {
    scene
        .cameras
        .iter()
        .map(|cam| {
            let mut o = vec![0.0; cam.n_pixels()];
            for iy in 0..cam.npy {
                for ix in 0..cam.npx {
                    o[cam.pixel_index(ix, iy)] = cam.pixel_solid_angle(ix, iy);
                }
            }
            o
        })
        .collect()
}

/// Plain forward-tracking render of all cameras.
/// Returns per-camera mean images, their per-pixel standard errors, and stats.
pub fn render_fmc(
    scene: &Scene,
    ch: Channel,
    n_packets: u64,
    seed: u64,
    cfg: &TransportConfig,
    threads: usize,
) -> (Vec<crate::image::Image>, Vec<crate::image::Image>, TraceStats) {
    let omega = camera_solid_angles(scene);
    let (sink, stats, norm) = run_fmc(scene, ch, n_packets, seed, cfg, threads, || {
        PlainLeSink::new(scene, ch, cfg, &omega)
    });
    let (mean, sigma) = sink.finalize(&norm);
    (mean, sigma, stats)
}

struct BmcAccumulator {
    toward_sun: Vec3,
    cos_tol: f64,
    value: f64,
}

struct BmcSink<'a> {
    scene: &'a Scene,
    ch: Channel,
    acc: BmcAccumulator,
}

impl<'a> EventSink for BmcSink<'a> {
    fn on_scatter(&mut self, ev: &ScatterEvent) {
        let mu = ev.dir_in.dot(self.acc.toward_sun);
        let p = phase_of(&self.scene.medium, self.ch, ev.particle, mu);
        let albedo = albedo_of(&self.scene.medium, ev.particle);
        let tau = optical_depth(
            &traverse(&self.scene.grid, ev.pos, self.acc.toward_sun),
            self.scene.medium.beta_total(self.ch),
        );
        self.acc.value += albedo * ev.intensity * p * transmittance(tau);
    }

    fn on_escape(&mut self, dir: Vec3, intensity: f64, _order: u32) {
        if dir.dot(self.acc.toward_sun) > self.acc.cos_tol {
            self.acc.value += intensity;
        }
    }

    fn merge(&mut self, _other: Self) {
        unreachable!("backward packets are accumulated per pixel");
    }
}

/// Backward estimate for one pixel: packets launch from the camera through
/// jittered sub-pixel points; each scattering event adds the sun-directed
/// local-estimation weight `albedo * I * P * t_sun` (no inverse-square
/// factor), and packets escaping within the solar tolerance add the direct
/// term. Returns (mean, standard error of the mean) in radiance units.
pub fn bmc_pixel(
    scene: &Scene,
    ch: Channel,
    cam_idx: usize,
    ix: usize,
    iy: usize,
    n_packets: u64,
    seed: u64,
    cfg: &TransportConfig,
) -> (f64, f64) {
    let cam = &scene.cameras[cam_idx];
    let toward_sun = scene.sun.toward();
    let cos_tol = cfg.solar_tolerance_deg.to_radians().cos();
    let mut sum = 0.0f64;
    let mut sumsq = 0.0f64;
    let pixel_stream = (cam_idx as u64) << 40 | (iy as u64) << 20 | ix as u64;
    let mut stats = TraceStats::default();
    for j in 0..n_packets {
        let mut rng = packet_rng(seed ^ 0xB4C5_D6E7_F809_1A2B, pixel_stream.wrapping_mul(0x1_0000_01).wrapping_add(j));
        let (sx, sy) = (rng.gen::<f64>(), rng.gen::<f64>());
        let Some(dir) = cam.pixel_dir(ix, iy, sx, sy) else {
            continue;
        };
        let mut sink = BmcSink {
            scene,
            ch,
            acc: BmcAccumulator { toward_sun, cos_tol, value: 0.0 },
        };
        propagate(
            scene,
            ch,
            PhotonPacket::launch(cam.position, dir),
            &mut rng,
            cfg,
            &mut sink,
            &mut stats,
        );
        let x = sink.acc.value;
        sum += x;
        sumsq += x * x;
    }
    let e = scene.sun.irradiance[ch.index()];
    let n = n_packets as f64;
    let mean = sum / n;
    let var_mean = (sumsq / n - mean * mean).max(0.0) / (n - 1.0).max(1.0);
    (e * mean, e * var_mean.sqrt())
}

/// Backward-tracked image of one camera (invalid pixels stay zero).
/// Returns the mean image and the per-pixel standard error of the mean.
pub fn bmc_image(
    scene: &Scene,
    ch: Channel,
    cam_idx: usize,
    packets_per_pixel: u64,
    seed: u64,
    cfg: &TransportConfig,
    threads: usize,
) -> (crate::image::Image, crate::image::Image) {
    let cam = &scene.cameras[cam_idx];
    let mut mean = crate::image::Image::with_validity(cam.npx, cam.npy, cam.valid_mask());
    let mut sigma = mean.clone();
    let run = |mean: &mut crate::image::Image, sigma: &mut crate::image::Image| {
        let results: Vec<(usize, f64, f64)> = (0..cam.n_pixels())
            .into_par_iter()
            .filter(|p| mean.valid[*p])
            .map(|p| {
                let (ix, iy) = (p % cam.npx, p / cam.npx);
                let (m, s) = bmc_pixel(scene, ch, cam_idx, ix, iy, packets_per_pixel, seed, cfg);
                (p, m, s)
            })
            .collect();
        for (p, m, s) in results {
            mean.data[p] = m;
            sigma.data[p] = s;
        }
    };
    if threads == 1 {
        for p in 0..cam.n_pixels() {
            if !mean.valid[p] {
                continue;
            }
            let (ix, iy) = (p % cam.npx, p / cam.npx);
            let (m, s) = bmc_pixel(scene, ch, cam_idx, ix, iy, packets_per_pixel, seed, cfg);
            mean.data[p] = m;
            sigma.data[p] = s;
        }
    } else if threads == 0 {
        run(&mut mean, &mut sigma);
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("worker pool")
            .install(|| run(&mut mean, &mut sigma));
    }
    (mean, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Camera, Medium, Scene, Sun, VoxelGrid};

    fn test_scene(beta_aerosol: f64, beta_air: f64) -> Scene {
        let grid = VoxelGrid::new(4, 4, 4, Vec3::ZERO, Vec3::new(500.0, 500.0, 500.0)).unwrap();
        let n = grid.n_voxels();
        let medium = Medium::new(
            [vec![beta_air; n], vec![beta_air; n], vec![beta_air; n]],
            [vec![beta_aerosol; n], vec![beta_aerosol; n], vec![beta_aerosol; n]],
            [17e-12; 3],
            0.9,
            1.0,
            [0.6; 3],
        )
        .unwrap();
        let cam = Camera::new(Vec3::new(1000.0, 1000.0, 0.0), 8, 8).unwrap();
        let sun = Sun::new(30.0, 10.0, [255.0, 236.0, 224.0]).unwrap();
        Scene::new(grid, medium, vec![cam], sun).unwrap()
    }

    #[test]
    fn choose_particle_fractions() {
        let scene = test_scene(1e-4, 1e-4);
        // equal extinctions: aerosol chosen exactly when u < 0.5
        assert_eq!(choose_particle(&scene.medium, Channel::G, 0, 0.49), Particle::Aerosol);
        assert_eq!(choose_particle(&scene.medium, Channel::G, 0, 0.51), Particle::Air);
        let air_only = test_scene(0.0, 1e-4);
        for u in [0.0, 0.3, 0.99] {
            assert_eq!(choose_particle(&air_only.medium, Channel::G, 0, u), Particle::Air);
        }
        // 90/10 split: empirical binomial check
        let skewed = test_scene(9e-4, 1e-4);
        let mut rng = packet_rng(1, 1);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| {
                choose_particle(&skewed.medium, Channel::G, 0, rng.gen()) == Particle::Aerosol
            })
            .count() as f64;
        let p = hits / n as f64;
        let sigma = (0.9f64 * 0.1 / n as f64).sqrt();
        assert!((p - 0.9).abs() < 3.0 * sigma, "p {p}");
    }

    #[test]
    fn attenuation_values() {
        let cfg = TransportConfig::default();
        let mut rng = packet_rng(2, 0);
        // albedo 1 leaves intensity unchanged
        assert_eq!(attenuate_and_roulette(1.0, 1.0, &cfg, &mut rng), Some(1.0));
        // albedo 0.8 scales
        assert_eq!(attenuate_and_roulette(1.0, 0.8, &cfg, &mut rng), Some(0.8));
    }

    #[test]
    fn roulette_is_unbiased() {
        let cfg = TransportConfig::default();
        let mut rng = packet_rng(3, 0);
        let start = 5e-4; // below threshold after albedo 1
        let trials = 100_000;
        let total: f64 = (0..trials)
            .filter_map(|_| attenuate_and_roulette(start, 1.0, &cfg, &mut rng))
            .sum();
        let mean = total / trials as f64;
        // expected value is the pre-roulette intensity
        let sigma = start * (1.0f64 / cfg.survival_prob - 1.0).sqrt() / (trials as f64).sqrt();
        assert!((mean - start).abs() < 4.0 * sigma, "mean {mean} vs {start}");
    }

    #[test]
    fn vacuum_scene_renders_zero() {
        let scene = test_scene(0.0, 0.0);
        let (imgs, _sig, stats) =
            render_fmc(&scene, Channel::G, 2000, 7, &TransportConfig::default(), 1);
        assert_eq!(stats.total_events(), 0);
        // no scattering and the camera detector disc is away from the beam
        // footprint at order 0 except for direct passes; allow the direct
        // disc hits only in the sun-aligned pixel
        let sun_pix = scene.cameras[0].dir_to_pixel(scene.sun.toward());
        for (p, v) in imgs[0].data.iter().enumerate() {
            if Some((p % 8, p / 8)) != sun_pix {
                assert_eq!(*v, 0.0, "pixel {p}");
            }
        }
    }

    #[test]
    fn identical_seeds_are_bit_identical_sequentially() {
        let scene = test_scene(2e-4, 1e-5);
        let cfg = TransportConfig::default();
        let (a, _, sa) = render_fmc(&scene, Channel::R, 5000, 99, &cfg, 1);
        let (b, _, sb) = render_fmc(&scene, Channel::R, 5000, 99, &cfg, 1);
        assert_eq!(a[0].data, b[0].data);
        assert_eq!(sa.total_events(), sb.total_events());
    }

    #[test]
    fn thin_scene_order_histogram_is_dominated_by_single_scatter() {
        // max optical depth well under 0.1
        let scene = test_scene(1e-5, 5e-6);
        let cfg = TransportConfig::default();
        let (_, stats, _) = run_fmc(&scene, Channel::G, 50_000, 5, &cfg, 1, || NullSink);
        let h = &stats.order_histogram;
        let first = *h.get(1).unwrap_or(&0) as f64;
        let higher: u64 = h.iter().skip(2).sum();
        assert!(first > 0.0);
        assert!(
            (higher as f64) < 0.05 * first,
            "order>=2 {higher} vs order1 {first}"
        );
    }

    #[test]
    fn bmc_vacuum_pixel_direct_term() {
        let scene = test_scene(0.0, 0.0);
        let cfg = TransportConfig::default();
        let cam = &scene.cameras[0];
        // pixel containing the sun direction gets exactly the direct term
        let (ix, iy) = cam.dir_to_pixel(scene.sun.toward()).unwrap();
        let (v, _) = bmc_pixel(&scene, Channel::G, 0, ix, iy, 64, 3, &cfg);
        // the jittered sub-pixel rays may leave the solar tolerance cone;
        // with a vacuumed domain any aligned ray contributes exactly E
        assert!(v >= 0.0 && v <= scene.sun.irradiance[1]);
        // a pixel far from the sun sees nothing
        let (v0, s0) = bmc_pixel(&scene, Channel::G, 0, 1, 1, 64, 3, &cfg);
        assert_eq!(v0, 0.0);
        assert_eq!(s0, 0.0);
    }
}
