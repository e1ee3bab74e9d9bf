//! Phase functions and inverse-transform samplers.

use crate::math::{Onb, Vec3};

const INV_FOUR_PI: f64 = 1.0 / (4.0 * std::f64::consts::PI);

/// Henyey-Greenstein phase density per steradian.
///
/// `mu` is the cosine of the scattering angle between the incoming and
/// outgoing propagation directions.
#[inline]
pub fn phase_hg(mu: f64, g: f64) -> f64 {
    assert!(g.abs() < 1.0, "HG anisotropy must satisfy |g| < 1, got {g}");
    debug_assert!(mu.abs() <= 1.0 + 1e-12);
    let denom = 1.0 + g * g - 2.0 * g * mu;
    INV_FOUR_PI * (1.0 - g * g) / (denom * denom.sqrt())
}

/// Rayleigh phase density per steradian.
#[inline]
pub fn phase_rayleigh(mu: f64) -> f64 {
    debug_assert!(mu.abs() <= 1.0 + 1e-12);
    3.0 / (16.0 * std::f64::consts::PI) * (1.0 + mu * mu)
}

/// Free-path optical depth from a uniform draw `u in [0, 1)`.
#[inline]
pub fn sample_tau(u: f64) -> f64 {
    debug_assert!((0.0..1.0).contains(&u));
    -(1.0 - u).ln()
}

/// Outcome of a direction resampling.
#[derive(Clone, Copy, Debug)]
pub struct ScatterSample {
    /// New propagation direction (unit).
    pub dir: Vec3,
    /// Cosine of the off-axis scattering angle.
    pub cos_theta: f64,
    /// Azimuth about the incoming direction, in [0, 2*pi).
    pub azimuth: f64,
}

impl ScatterSample {
    /// Off-axis scattering angle in [0, pi].
    pub fn angle(&self) -> f64 {
        self.cos_theta.clamp(-1.0, 1.0).acos()
    }
}

/// Cosine of the HG scattering angle from a uniform draw, by the exact
/// inverse CDF. The isotropic case gets its own branch since the general
/// expression is singular at g = 0.
#[inline]
pub fn sample_hg_cos(g: f64, u: f64) -> f64 {
    assert!(g.abs() < 1.0);
    if g.abs() < 1e-9 {
        return 2.0 * u - 1.0;
    }
    let frac = (1.0 - g * g) / (1.0 - g + 2.0 * g * u);
    ((1.0 + g * g - frac * frac) / (2.0 * g)).clamp(-1.0, 1.0)
}

/// Cosine of the Rayleigh scattering angle from a uniform draw
/// (Cardano inversion of the cubic CDF).
#[inline]
pub fn sample_rayleigh_cos(u: f64) -> f64 {
    let c = 4.0 * u - 2.0;
    let gamma = c + (c * c + 1.0).sqrt();
    let g3 = gamma.cbrt();
    (g3 - 1.0 / g3).clamp(-1.0, 1.0)
}

#[inline]
fn direction_about(psi: Vec3, cos_theta: f64, u_azimuth: f64) -> ScatterSample {
    let azimuth = 2.0 * std::f64::consts::PI * u_azimuth;
    let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    let dir = Onb::around(psi).spherical(cos_theta, sin_theta, azimuth);
    ScatterSample { dir, cos_theta, azimuth }
}

/// Samples an HG-scattered direction about the incoming direction `psi`.
#[inline]
pub fn sample_hg_direction(psi: Vec3, g: f64, u1: f64, u2: f64) -> ScatterSample {
    direction_about(psi, sample_hg_cos(g, u1), u2)
}

/// Samples a Rayleigh-scattered direction about the incoming direction `psi`.
#[inline]
pub fn sample_rayleigh_direction(psi: Vec3, u1: f64, u2: f64) -> ScatterSample {
    direction_about(psi, sample_rayleigh_cos(u1), u2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hg_isotropic_limit() {
        for mu in [-1.0, -0.3, 0.0, 0.7, 1.0] {
            assert!((phase_hg(mu, 0.0) - INV_FOUR_PI).abs() < 1e-15);
        }
        assert!((INV_FOUR_PI - 0.0795775).abs() < 1e-7);
    }

    #[test]
    fn hg_point_value() {
        // (1/4pi) * 0.75 / 1.25^1.5
        let expect = INV_FOUR_PI * 0.75 / 1.25f64.powf(1.5);
        assert!((phase_hg(0.0, 0.5) - expect).abs() < 1e-15);
        assert!((expect - 0.04270575).abs() < 1e-8);
    }

    #[test]
    fn hg_forward_peak_for_positive_g() {
        let g = 0.763;
        assert!(phase_hg(1.0, g) > phase_hg(-1.0, g));
        assert!(phase_hg(1.0, g) > phase_hg(0.0, g));
    }

    #[test]
    #[should_panic]
    fn hg_rejects_unit_g() {
        phase_hg(0.0, 1.0);
    }

    #[test]
    fn rayleigh_values_and_symmetry() {
        let p0 = phase_rayleigh(0.0);
        assert!((p0 - 3.0 / (16.0 * std::f64::consts::PI)).abs() < 1e-15);
        assert!((p0 - 0.0596831).abs() < 1e-7);
        let p1 = phase_rayleigh(1.0);
        assert!((p1 - 3.0 / (8.0 * std::f64::consts::PI)).abs() < 1e-15);
        assert!((p1 - 0.1193662).abs() < 1e-7);
        for mu in [0.1, 0.5, 0.9] {
            assert_eq!(phase_rayleigh(mu), phase_rayleigh(-mu));
        }
    }

    #[test]
    fn tau_sampler_points() {
        assert_eq!(sample_tau(0.0), 0.0);
        let u = 1.0 - (-1.0f64).exp();
        assert!((sample_tau(u) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tau_sampler_mean_is_one() {
        use rand::Rng;
        let mut rng = crate::rng::packet_rng(3, 0);
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| sample_tau(rng.gen())).sum::<f64>() / n as f64;
        // exponential(1): sd of the mean is 1/sqrt(n)
        assert!((mean - 1.0).abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn hg_cos_inverts_cdf() {
        // closed-form check of the spec'd point: g = 0.5, u = 0.5
        let c = sample_hg_cos(0.5, 0.5);
        assert!((c - 0.6875).abs() < 1e-12, "{c}");
        // CDF(c) must give back u for a few (g, u) pairs
        let cdf = |mu: f64, g: f64| {
            (1.0 - g * g) / (2.0 * g)
                * ((1.0 + g * g - 2.0 * g * mu).sqrt().recip() - (1.0 + g).recip())
        };
        for g in [-0.8, -0.3, 0.2, 0.5, 0.775, 0.95] {
            for u in [0.01, 0.25, 0.5, 0.9, 0.999] {
                let mu = sample_hg_cos(g, u);
                assert!((cdf(mu, g) - u).abs() < 1e-9, "g {g} u {u}");
            }
        }
    }

    #[test]
    fn rayleigh_cos_inverts_cdf() {
        // u = 0.5 is the symmetry point
        assert!(sample_rayleigh_cos(0.5).abs() < 1e-12);
        let cdf = |mu: f64| 3.0 / 8.0 * (mu + mu * mu * mu / 3.0) + 0.5;
        let mu = sample_rayleigh_cos(7.0 / 8.0);
        assert!((cdf(mu) - 7.0 / 8.0).abs() < 1e-12, "mu {mu}");
        for u in [0.0, 0.1, 0.33, 0.66, 0.97] {
            let mu = sample_rayleigh_cos(u);
            assert!((cdf(mu) - u).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_directions_are_unit_and_consistent() {
        use rand::Rng;
        let mut rng = crate::rng::packet_rng(11, 0);
        let psi = Vec3::new(0.48, -0.6, 0.64).normalized();
        for _ in 0..500 {
            let s = sample_hg_direction(psi, 0.775, rng.gen(), rng.gen());
            assert!((s.dir.length() - 1.0).abs() < 1e-12);
            assert!((s.dir.dot(psi) - s.cos_theta).abs() < 1e-12);
            assert!((0.0..2.0 * std::f64::consts::PI).contains(&s.azimuth));
            let r = sample_rayleigh_direction(psi, rng.gen(), rng.gen());
            assert!((r.dir.length() - 1.0).abs() < 1e-12);
            assert!((r.dir.dot(psi) - r.cos_theta).abs() < 1e-12);
        }
        // isotropic limit: cos uniform in [-1, 1]
        assert!((sample_hg_cos(0.0, 0.25) + 0.5).abs() < 1e-15);
    }
}
