//! Discrete probability measures and the source distributions sampled in experiments.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{arg, config, Error, Result};
use crate::rng::SeedTuple;

/// Row-major list of `len` points in `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    data: Vec<f64>,
}

impl PointCloud {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return arg("dimension must be at least 1");
        }
        if !data.len().is_multiple_of(dim) {
            return arg(format!(
                "coordinate buffer of length {} is not a multiple of dimension {dim}",
                data.len()
            ));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return arg("point list is empty");
        };
        let dim = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return arg(format!("point {i} has dimension {}, expected {dim}", r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn point_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter().map(<[f64]>::to_vec).collect()
    }

    /// Adds `other` point-by-point (used to convolve a cloud with noise draws).
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn add_assign(&mut self, other: &PointCloud) -> Result<()> {
        if self.dim != other.dim || self.len() != other.len() {
            return arg("point clouds differ in shape");
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn translate(&mut self, shift: &[f64]) {
        for p in self.data.chunks_exact_mut(self.dim) {
            for (x, s) in p.iter_mut().zip(shift) {
                *x += s;
            }
        }
    }
}

#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Weighted atoms `Σ w_i δ_{x_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: PointCloud,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub const WEIGHT_SUM_TOL: f64 = 1e-12;

    pub fn new(points: PointCloud, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return arg("measure has no atoms");
        }
        if points.len() != weights.len() {
            return arg(format!(
                "{} atoms but {} weights",
                points.len(),
                weights.len()
            ));
        }
        if let Some(i) = points.as_slice().iter().position(|x| !x.is_finite()) {
            return arg(format!("non-finite coordinate in atom {}", i / points.dim()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return arg(format!("invalid weight {w}"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > Self::WEIGHT_SUM_TOL {
            return arg(format!("weights sum to {total}, expected 1"));
        }
        Ok(Self { points, weights })
    }

    /// Renormalizes arbitrary non-negative weights before validating.
    pub fn normalized(points: PointCloud, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return arg("weights must have a positive finite sum");
        }
        Self::new(points, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn dirac(x: &[f64]) -> Result<Self> {
        Self::new(PointCloud::from_rows(&[x])?, vec![1.0])
    }

    pub fn points(&self) -> &PointCloud {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// True when all weights equal `1/len` exactly.
    pub fn is_uniform(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|&x| x == w)
    }

    pub fn translated(&self, shift: &[f64]) -> Self {
        let mut points = self.points.clone();
        points.translate(shift);
        Self {
            points,
            weights: self.weights.clone(),
        }
    }
}

/// Uniform weights on the given atoms; duplicates stay separate atoms.
pub fn make_empirical(samples: PointCloud) -> Result<DiscreteMeasure> {
    if samples.is_empty() {
        return arg("cannot build an empirical measure from zero samples");
    }
    let n = samples.len();
    DiscreteMeasure::new(samples, vec![1.0 / n as f64; n])
}

/// `Σ w_i ‖x_i‖`.
pub fn first_moment(m: &DiscreteMeasure) -> f64 {
    m.points()
        .iter()
        .zip(m.weights())
        .map(|(p, w)| w * p.iter().map(|x| x * x).sum::<f64>().sqrt())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DiracComponent {
    #[default]
    First,
    Second,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum SourceFamily {
    /// Uniform on `[0, side]^d`.
    UniformCube {
        #[serde(default = "one")]
        side: f64,
    },
    /// `N(0, std² I_d)`.
    IsotropicGaussian {
        #[serde(default = "one")]
        std: f64,
    },
    /// Equal-variance isotropic mixture.
    GaussianMixture {
        means: Vec<Vec<f64>>,
        weights: Vec<f64>,
        std: f64,
    },
    /// Pair of Dirac masses; sampling draws from the selected component.
    DiracPair {
        x: Vec<f64>,
        y: Vec<f64>,
        #[serde(default)]
        component: DiracComponent,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    #[serde(flatten)]
    pub family: SourceFamily,
    pub d: usize,
}

impl SourceSpec {
    pub fn uniform_cube(d: usize) -> Self {
        Self {
            family: SourceFamily::UniformCube { side: 1.0 },
            d,
        }
    }

    pub fn gaussian(d: usize, std: f64) -> Self {
        Self {
            family: SourceFamily::IsotropicGaussian { std },
            d,
        }
    }

    pub fn dirac_pair(x: Vec<f64>, y: Vec<f64>) -> Self {
        let d = x.len();
        Self {
            family: SourceFamily::DiracPair {
                x,
                y,
                component: DiracComponent::First,
            },
            d,
        }
    }

    /// Same pair with the other component selected.
    pub fn other_component(&self) -> Self {
        let mut s = self.clone();
        if let SourceFamily::DiracPair { component, .. } = &mut s.family {
            *component = match component {
                DiracComponent::First => DiracComponent::Second,
                DiracComponent::Second => DiracComponent::First,
            };
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return config("source dimension must be at least 1");
        }
        let pos = |v: f64, what: &str| -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                config(format!("{what} must be positive and finite, got {v}"))
            }
        };
        match &self.family {
            SourceFamily::UniformCube { side } => pos(*side, "cube side"),
            SourceFamily::IsotropicGaussian { std } => pos(*std, "gaussian std"),
            SourceFamily::GaussianMixture {
                means,
                weights,
                std,
            } => {
                pos(*std, "mixture std")?;
                if means.is_empty() || means.len() != weights.len() {
                    return config("mixture needs one weight per component and at least one component");
                }
                if means.iter().any(|m| m.len() != self.d || m.iter().any(|x| !x.is_finite())) {
                    return config(format!("mixture means must be finite {}-vectors", self.d));
                }
                let total: f64 = weights.iter().sum();
                if weights.iter().any(|w| !(*w >= 0.0)) || !(total > 0.0) {
                    return config("mixture weights must be non-negative with positive sum");
                }
                Ok(())
            }
            SourceFamily::DiracPair { x, y, .. } => {
                if x.len() != self.d || y.len() != self.d {
                    return config(format!("dirac locations must have dimension {}", self.d));
                }
                if x.iter().chain(y).any(|v| !v.is_finite()) {
                    return config("dirac locations must be finite");
                }
                if x == y {
                    return config("dirac-pair requires x != y");
                }
                Ok(())
            }
        }
    }

    /// Certified subgaussian parameter `K` of the source (Hoeffding for bounded
    /// parts, exact for Gaussian parts).
    pub fn subgaussian_constant(&self) -> f64 {
        match &self.family {
            SourceFamily::UniformCube { side } => side / 2.0,
            SourceFamily::IsotropicGaussian { std } => *std,
            SourceFamily::GaussianMixture {
                means,
                weights,
                std,
            } => {
                let total: f64 = weights.iter().sum();
                let mut centre = vec![0.0; self.d];
                for (m, w) in means.iter().zip(weights) {
                    for (c, x) in centre.iter_mut().zip(m) {
                        *c += w / total * x;
                    }
                }
                let radius = means
                    .iter()
                    .map(|m| euclidean(m, &centre))
                    .fold(0.0, f64::max);
                (std * std + radius * radius).sqrt()
            }
            SourceFamily::DiracPair { .. } => 0.0,
        }
    }

    /// Diameter of the support, when bounded.
    pub fn diameter(&self) -> Option<f64> {
        match &self.family {
            SourceFamily::UniformCube { side } => Some(side * (self.d as f64).sqrt()),
            SourceFamily::DiracPair { .. } => Some(0.0),
            _ => None,
        }
    }
}

/// `n` i.i.d. draws from the source, fully determined by `seed`.
pub fn sample_source(spec: &SourceSpec, n: usize, seed: SeedTuple) -> Result<PointCloud> {
    if n == 0 {
        return arg("sample count must be at least 1");
    }
    spec.validate()?;
    let d = spec.d;
    let mut rng = seed.rng();
    let mut data = Vec::with_capacity(n * d);
    match &spec.family {
        SourceFamily::UniformCube { side } => {
            data.extend((0..n * d).map(|_| side * rng.random::<f64>()));
        }
        SourceFamily::IsotropicGaussian { std } => {
            data.extend((0..n * d).map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                std * z
            }));
        }
        SourceFamily::GaussianMixture {
            means,
            weights,
            std,
        } => {
            let pick = rand_distr::weighted::WeightedIndex::new(weights)
                .map_err(|e| Error::Config(format!("mixture weights: {e}")))?;
            for _ in 0..n {
                let k = pick.sample(&mut rng);
                for x in &means[k] {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    data.push(x + std * z);
                }
            }
        }
        SourceFamily::DiracPair { x, y, component } => {
            let atom = match component {
                DiracComponent::First => x,
                DiracComponent::Second => y,
            };
            for _ in 0..n {
                data.extend_from_slice(atom);
            }
        }
    }
    PointCloud::new(d, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed(s: u64) -> SeedTuple {
        SeedTuple::new(s)
    }

    #[test]
    fn dirac_sampling_is_constant() {
        let spec = SourceSpec::dirac_pair(vec![0.5, -1.0], vec![2.0, 2.0]);
        let pts = sample_source(&spec, 3, seed(99)).unwrap();
        assert_eq!(pts.to_rows(), vec![vec![0.5, -1.0]; 3]);
        let other = sample_source(&spec.other_component(), 2, seed(1)).unwrap();
        assert_eq!(other.to_rows(), vec![vec![2.0, 2.0]; 2]);
    }

    #[test]
    fn uniform_cube_moments() {
        let n = 100_000;
        let pts = sample_source(&SourceSpec::uniform_cube(2), n, seed(11)).unwrap();
        for j in 0..2 {
            let mean = pts.iter().map(|p| p[j]).sum::<f64>() / n as f64;
            // 5 standard errors of a U(0,1) mean: 5 * sqrt(1/12) / sqrt(n)
            assert!((mean - 0.5).abs() <= 0.01, "mean {mean}");
            assert!((mean - 0.5).abs() <= 5.0 * (1.0f64 / 12.0).sqrt() / (n as f64).sqrt());
            let var = pts.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((var - 1.0 / 12.0).abs() <= 0.1 / 12.0, "var {var}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = SourceSpec::gaussian(3, 2.0);
        let a = sample_source(&spec, 50, seed(5).trial(2)).unwrap();
        let b = sample_source(&spec, 50, seed(5).trial(2)).unwrap();
        assert_eq!(a, b);
        let c = sample_source(&spec, 50, seed(5).trial(3)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = SourceSpec::dirac_pair(vec![1.0], vec![1.0]);
        assert!(matches!(sample_source(&bad, 1, seed(0)), Err(Error::Config(_))));
        let bad = SourceSpec {
            family: SourceFamily::UniformCube { side: -1.0 },
            d: 2,
        };
        assert!(sample_source(&bad, 1, seed(0)).is_err());
        assert!(matches!(
            sample_source(&SourceSpec::uniform_cube(2), 0, seed(0)),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn subgaussian_constants() {
        assert_eq!(SourceSpec::uniform_cube(4).subgaussian_constant(), 0.5);
        assert_eq!(
            SourceSpec::dirac_pair(vec![0.0], vec![1.0]).subgaussian_constant(),
            0.0
        );
        let mix = SourceSpec {
            family: SourceFamily::GaussianMixture {
                means: vec![vec![-3.0, 0.0], vec![3.0, 0.0]],
                weights: vec![1.0, 1.0],
                std: 4.0,
            },
            d: 2,
        };
        assert!((mix.subgaussian_constant() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_weights() {
        let m = make_empirical(PointCloud::from_rows(&[[0.0], [1.0]]).unwrap()).unwrap();
        assert_eq!(m.weights(), &[0.5, 0.5]);
        let m = make_empirical(PointCloud::from_rows(&[[0.0], [0.0], [1.0]]).unwrap()).unwrap();
        assert_eq!(m.len(), 3);
        assert!(m.weights().iter().all(|&w| w == 1.0 / 3.0));
        let pts = sample_source(&SourceSpec::uniform_cube(3), 1000, seed(3)).unwrap();
        let m = make_empirical(pts).unwrap();
        assert!(m.weights().iter().all(|&w| w == 0.001));
        assert!((m.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(m.is_uniform());
    }

    #[test]
    fn empty_and_ragged_inputs_rejected() {
        let empty: [[f64; 1]; 0] = [];
        assert!(PointCloud::from_rows(&empty).is_err());
        assert!(PointCloud::from_rows(&[vec![0.0], vec![1.0, 2.0]]).is_err());
        assert!(make_empirical(PointCloud::new(2, vec![]).unwrap()).is_err());
    }

    #[test]
    fn measure_invariants_enforced() {
        let pts = PointCloud::from_rows(&[[0.0], [1.0]]).unwrap();
        assert!(DiscreteMeasure::new(pts.clone(), vec![0.5, 0.6]).is_err());
        assert!(DiscreteMeasure::new(pts.clone(), vec![1.5, -0.5]).is_err());
        assert!(DiscreteMeasure::new(PointCloud::from_rows(&[[f64::NAN]]).unwrap(), vec![1.0]).is_err());
        assert!(DiscreteMeasure::new(pts, vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn first_moment_cases() {
        assert_eq!(first_moment(&DiscreteMeasure::dirac(&[0.0, 0.0]).unwrap()), 0.0);
        let m = make_empirical(PointCloud::from_rows(&[[3.0, 4.0], [0.0, 0.0]]).unwrap()).unwrap();
        assert!((first_moment(&m) - 2.5).abs() < 1e-15);

        let pts = sample_source(&SourceSpec::gaussian(3, 1.0), 10, seed(8)).unwrap();
        let w: Vec<f64> = (1..=10).map(|k| k as f64).collect();
        let m = DiscreteMeasure::normalized(pts.clone(), w.clone()).unwrap();
        let total: f64 = w.iter().sum();
        let mut brute = 0.0;
        for (k, row) in pts.to_rows().iter().enumerate() {
            let norm = (row[0] * row[0] + row[1] * row[1] + row[2] * row[2]).sqrt();
            brute += w[k] / total * norm;
        }
        assert!((first_moment(&m) - brute).abs() < 1e-12);
    }
}
