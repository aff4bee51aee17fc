//! Product-form subgaussian noise families and the one-dimensional density
//! envelope that bounds them by a Gaussian.

use std::f64::consts::{E, PI};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{arg, config, Error, Result};
use crate::measures::PointCloud;
use crate::rng::SeedTuple;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseFamily {
    /// `N(0, σ²)` per coordinate.
    #[default]
    Gaussian,
    /// Uniform on `[-σ, σ]`.
    Uniform,
    /// Symmetric triangle on `[-σ, σ]` with its peak at zero.
    Triangular,
}

impl NoiseFamily {
    pub const ALL: [NoiseFamily; 3] = [Self::Gaussian, Self::Uniform, Self::Triangular];

    pub fn name(self) -> &'static str {
        match self {
            Self::Gaussian => "gaussian",
            Self::Uniform => "uniform",
            Self::Triangular => "triangular",
        }
    }

    /// Scale families share unit draws across σ under common random numbers.
    pub fn supports_crn(self) -> bool {
        matches!(self, Self::Gaussian)
    }
}

impl fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "uniform" => Ok(Self::Uniform),
            "triangular" => Ok(Self::Triangular),
            other => config(format!("unknown noise family '{other}'")),
        }
    }
}

/// Isotropic noise `G_σ` on `R^d` whose density is a product of identical
/// one-dimensional factors. `sigma` is the per-coordinate subgaussian
/// parameter; `sigma = 0` means no smoothing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub family: NoiseFamily,
    pub sigma: f64,
    pub d: usize,
}

#[inline]
fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

impl NoiseModel {
    pub fn new(family: NoiseFamily, sigma: f64, d: usize) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return arg(format!("sigma must be finite and non-negative, got {sigma}"));
        }
        if d == 0 {
            return arg("noise dimension must be at least 1");
        }
        Ok(Self { family, sigma, d })
    }

    pub fn gaussian(sigma: f64, d: usize) -> Result<Self> {
        Self::new(NoiseFamily::Gaussian, sigma, d)
    }

    pub fn with_sigma(self, sigma: f64) -> Result<Self> {
        Self::new(self.family, sigma, self.d)
    }

    pub fn is_degenerate(&self) -> bool {
        self.sigma == 0.0
    }

    /// One-dimensional factor `g̃_σ(t)`. Undefined (NaN) for `σ = 0`.
    pub fn density_1d(&self, t: f64) -> f64 {
        let s = self.sigma;
        if s <= 0.0 {
            return f64::NAN;
        }
        match self.family {
            NoiseFamily::Gaussian => std_normal_pdf(t / s) / s,
            NoiseFamily::Uniform => {
                if t.abs() <= s {
                    0.5 / s
                } else {
                    0.0
                }
            }
            NoiseFamily::Triangular => ((1.0 - t.abs() / s) / s).max(0.0),
        }
    }

    /// `g_σ(t) = Π_j g̃_σ(t_j)`.
    pub fn density(&self, t: &[f64]) -> Result<f64> {
        if t.len() != self.d {
            return arg(format!("point has dimension {}, expected {}", t.len(), self.d));
        }
        Ok(t.iter().map(|&x| self.density_1d(x)).product())
    }

    /// Unit-scale draws (σ = 1); `sample_noise` multiplies these by σ.
    pub fn sample_unit(&self, n: usize, seed: SeedTuple) -> PointCloud {
        let mut rng = seed.rng();
        let data: Vec<f64> = match self.family {
            NoiseFamily::Gaussian => (0..n * self.d)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect(),
            NoiseFamily::Uniform => (0..n * self.d)
                .map(|_| rng.random_range(-1.0..=1.0))
                .collect(),
            NoiseFamily::Triangular => (0..n * self.d)
                .map(|_| rng.random::<f64>() - rng.random::<f64>())
                .collect(),
        };
        PointCloud::new(self.d, data).expect("noise dimension validated at construction")
    }
}

/// `n` i.i.d. noise vectors.
pub fn sample_noise(model: &NoiseModel, n: usize, seed: SeedTuple) -> Result<PointCloud> {
    if !(model.sigma > 0.0) {
        return config(format!("noise sampling needs sigma > 0, got {}", model.sigma));
    }
    if n == 0 {
        return arg("sample count must be at least 1");
    }
    let unit = model.sample_unit(n, seed);
    let scaled = unit.as_slice().iter().map(|z| model.sigma * z).collect();
    PointCloud::new(model.d, scaled)
}

/// `δ = min{1, 1/(4σ²)}`.
pub fn delta_param(sigma: f64) -> f64 {
    (1.0 / (4.0 * sigma * sigma)).min(1.0)
}

/// Outcome of auditing `g̃_σ(t) ≤ c·exp(2δ|t| − δ² − ln δ)·φ̃_σ(t)` on a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityBoundCertificate {
    pub family: NoiseFamily,
    pub sigma: f64,
    pub delta: f64,
    /// `√(2πσ²e²)`, the tail-bound constant.
    pub c_prime: f64,
    /// `max(c', sup_{|t|≤δ} g̃/(e^{2δt−δ²−ln δ} φ̃))` over the grid.
    pub c: f64,
    pub grid_max_ratio: f64,
    pub verified: bool,
    /// Per-coordinate constant after using `|t| ≤ t² + 1`:
    /// `c·e^{2δ − δ² − ln δ}`.
    pub collected_c1: f64,
    /// Quadratic exponent coefficient as stated for the d-dimensional envelope.
    pub stated_exponent: f64,
    /// Quadratic exponent coefficient produced by collecting the 1-d bounds.
    pub collected_exponent: f64,
}

impl DensityBoundCertificate {
    /// `collected_c1^d`, the d-dimensional constant in front of `φ_σ`.
    pub fn d_dim_constant(&self, d: usize) -> f64 {
        self.collected_c1.powi(d as i32)
    }

    /// The two quadratic-exponent readings disagree by a factor of two.
    pub fn exponent_mismatch(&self) -> bool {
        self.stated_exponent != self.collected_exponent
    }
}

/// Symmetric audit grid `k·σ/steps_per_sigma` for `|k| ≤ radius·steps_per_sigma`.
pub fn audit_grid(sigma: f64, radius_sigmas: usize, steps_per_sigma: usize) -> Vec<f64> {
    let k = (radius_sigmas * steps_per_sigma) as i64;
    (-k..=k)
        .map(|i| i as f64 * sigma / steps_per_sigma as f64)
        .collect()
}

/// Computes the envelope constant from the grid and audits the bound at every
/// grid point.
pub fn verify_density_bound(model: &NoiseModel, grid: &[f64]) -> Result<DensityBoundCertificate> {
    audit_envelope(model.family, model.sigma, |t| model.density_1d(t), grid)
}

fn audit_envelope(
    family: NoiseFamily,
    s: f64,
    density: impl Fn(f64) -> f64,
    grid: &[f64],
) -> Result<DensityBoundCertificate> {
    if !(s > 0.0) {
        return arg("density bound needs sigma > 0");
    }
    if grid.len() < 2 || grid.iter().any(|t| !t.is_finite()) {
        return arg("audit grid needs at least two finite points");
    }
    let (lo, hi) = grid
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
    let slack = 1e-9 * s;
    if lo > -10.0 * s + slack || hi < 10.0 * s - slack {
        return arg(format!("grid [{lo}, {hi}] must cover [-10σ, 10σ]"));
    }
    let max_step = grid.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    if max_step > s / 100.0 + slack {
        return arg(format!("grid step {max_step} exceeds σ/100"));
    }

    let delta = delta_param(s);
    let c_prime = (2.0 * PI * s * s * E * E).sqrt();
    let gauss = |t: f64| std_normal_pdf(t / s) / s;
    // exp(2δt − δ² − ln δ) φ̃_σ(t) evaluated in log space to survive the tails
    let log_env = |t: f64| 2.0 * delta * t - delta * delta - delta.ln() + gauss(t).ln();

    let mut sup_inner = 0.0_f64;
    for &t in grid.iter().filter(|t| t.abs() <= delta) {
        let g = density(t);
        if g > 0.0 {
            sup_inner = sup_inner.max((g.ln() - log_env(t)).exp());
        }
    }
    let c = c_prime.max(sup_inner);

    let mut worst = (0.0_f64, 0.0_f64);
    for &t in grid {
        let g = density(t);
        if g <= 0.0 {
            continue;
        }
        let ratio = (g.ln() - c.ln() - log_env(t.abs())).exp();
        if ratio > worst.1 {
            worst = (t, ratio);
        }
    }
    let verified = worst.1 <= 1.0 + 1e-9;
    if !verified {
        return Err(Error::Verification {
            t: worst.0,
            ratio: worst.1,
        });
    }
    Ok(DensityBoundCertificate {
        family,
        sigma: s,
        delta,
        c_prime,
        c,
        grid_max_ratio: worst.1,
        verified,
        collected_c1: c * (2.0 * delta - delta * delta - delta.ln()).exp(),
        stated_exponent: delta,
        collected_exponent: 2.0 * delta,
    })
}

/// Default `c₁` for rate bounds: exactly 1 for Gaussian noise, otherwise the
/// collected per-coordinate constant of the audited envelope.
pub fn default_c1(model: &NoiseModel) -> Result<f64> {
    match model.family {
        NoiseFamily::Gaussian => Ok(1.0),
        _ => {
            let grid = audit_grid(model.sigma, 10, 100);
            Ok(verify_density_bound(model, &grid)?.collected_c1.max(1.0))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(f: NoiseFamily, s: f64, d: usize) -> NoiseModel {
        NoiseModel::new(f, s, d).unwrap()
    }

    #[test]
    fn density_values() {
        let g = model(NoiseFamily::Gaussian, 1.0, 1);
        assert!((g.density(&[0.0]).unwrap() - 0.398_942_280_401_432_7).abs() < 1e-15);
        let u = model(NoiseFamily::Uniform, 1.0, 2);
        assert_eq!(u.density(&[0.0, 0.0]).unwrap(), 0.25);
        assert_eq!(u.density(&[0.0, 1.5]).unwrap(), 0.0);
        let t = model(NoiseFamily::Triangular, 1.0, 1);
        assert_eq!(t.density(&[0.0]).unwrap(), 1.0);
        assert_eq!(t.density(&[1.0]).unwrap(), 0.0);
        assert_eq!(t.density(&[-1.0]).unwrap(), 0.0);
        assert!(g.density(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn densities_integrate_to_one() {
        for fam in NoiseFamily::ALL {
            for s in [0.5, 1.0, 2.0] {
                let m = model(fam, s, 1);
                let grid = audit_grid(s, 10, 100);
                let integral: f64 = grid
                    .windows(2)
                    .map(|w| 0.5 * (w[1] - w[0]) * (m.density_1d(w[0]) + m.density_1d(w[1])))
                    .sum();
                // the uniform jump at ±σ sits on a node; average the one-sided values there
                let correction = if fam == NoiseFamily::Uniform {
                    -2.0 * 0.5 * (s / 100.0) * (0.5 / s)
                } else {
                    0.0
                };
                assert!(
                    (integral + correction - 1.0).abs() < 1e-6,
                    "{fam} σ={s}: {integral}"
                );
            }
        }
    }

    #[test]
    fn sampling_support_and_variance() {
        let u = model(NoiseFamily::Uniform, 1.0, 3);
        let pts = sample_noise(&u, 10_000, SeedTuple::new(1)).unwrap();
        assert!(pts.as_slice().iter().all(|x| (-1.0..=1.0).contains(x)));

        let n = 100_000;
        let g = model(NoiseFamily::Gaussian, 1.0, 1);
        let pts = sample_noise(&g, n, SeedTuple::new(2)).unwrap();
        let mean = pts.as_slice().iter().sum::<f64>() / n as f64;
        let var = pts.as_slice().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn sampling_deterministic_and_validated() {
        let t = model(NoiseFamily::Triangular, 0.7, 2);
        let a = sample_noise(&t, 100, SeedTuple::new(4).trial(1)).unwrap();
        let b = sample_noise(&t, 100, SeedTuple::new(4).trial(1)).unwrap();
        assert_eq!(a, b);
        let zero = model(NoiseFamily::Gaussian, 0.0, 2);
        assert!(matches!(
            sample_noise(&zero, 10, SeedTuple::new(0)),
            Err(Error::Config(_))
        ));
        assert!(NoiseModel::new(NoiseFamily::Gaussian, -1.0, 1).is_err());
    }

    #[test]
    fn empirical_mgf_is_dominated() {
        let n = 1_000_000;
        for fam in NoiseFamily::ALL {
            let m = model(fam, 1.0, 1);
            let draws = sample_noise(&m, n, SeedTuple::new(77)).unwrap();
            let xs = draws.as_slice();
            for alpha in [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0] {
                let vals: Vec<f64> = xs.iter().map(|x| (alpha * x).exp()).collect();
                let mean = vals.iter().sum::<f64>() / n as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                let se = (var / n as f64).sqrt();
                let bound = (0.5 * alpha * alpha).exp();
                assert!(
                    mean <= bound * (1.0 + 5.0 * se),
                    "{fam} α={alpha}: {mean} > {bound}"
                );
            }
        }
    }

    #[test]
    fn gaussian_certificate() {
        for s in [0.5, 1.0, 2.0] {
            let m = model(NoiseFamily::Gaussian, s, 1);
            let cert = verify_density_bound(&m, &audit_grid(s, 10, 100)).unwrap();
            assert!(cert.verified);
            assert!(cert.grid_max_ratio <= 1.0);
            assert!(cert.c >= cert.c_prime);
            assert!(cert.delta > 0.0 && cert.delta <= 1.0);
            assert!((cert.c_prime - s * E * (2.0 * PI).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_and_triangular_certificates() {
        let grid: Vec<f64> = (-1000..=1000).map(|k| k as f64 * 0.01).collect();
        let cert = verify_density_bound(&model(NoiseFamily::Uniform, 1.0, 1), &grid).unwrap();
        assert!(cert.verified);
        let cert = verify_density_bound(&model(NoiseFamily::Triangular, 1.0, 1), &grid).unwrap();
        assert!(cert.verified && cert.c.is_finite());
        assert!(cert.exponent_mismatch());
        assert!(cert.d_dim_constant(3) > 0.0);
    }

    #[test]
    fn audit_grid_requirements() {
        let m = model(NoiseFamily::Gaussian, 1.0, 1);
        assert!(verify_density_bound(&m, &audit_grid(1.0, 5, 100)).is_err());
        assert!(verify_density_bound(&m, &audit_grid(1.0, 10, 50)).is_err());
    }

    #[test]
    fn violated_bound_names_offending_point() {
        // Laplace tails are not 0.3-subgaussian; the envelope must fail far out.
        let s = 0.3;
        let laplace = |t: f64| 0.5 * (-t.abs()).exp();
        let res = audit_envelope(NoiseFamily::Gaussian, s, laplace, &audit_grid(s, 10, 100));
        match res {
            Err(Error::Verification { t, ratio }) => {
                assert!(ratio > 1.0);
                assert!(t.abs() > delta_param(s));
            }
            other => panic!("expected a violation, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn density_non_increasing_in_abs(
            fam in prop::sample::select(NoiseFamily::ALL.to_vec()),
            s in 0.1f64..3.0,
            a in -5.0f64..5.0,
            b in -5.0f64..5.0,
        ) {
            let m = NoiseModel::new(fam, s, 1).unwrap();
            let (near, far) = if a.abs() <= b.abs() { (a, b) } else { (b, a) };
            prop_assert!(m.density_1d(near) >= m.density_1d(far));
            prop_assert_eq!(m.density_1d(a), m.density_1d(-a));
        }
    }
}
