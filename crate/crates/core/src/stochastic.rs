//! Random scenarios: truncated-normal coefficients drawn from ChaCha20
//! streams.  Every consumer gets its own stream of one seed, so draws are
//! reproducible and independent of evaluation order.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{BoundaryData, Scenario};
use crate::mesh::Mesh;

const MAX_REJECTIONS: usize = 1_000_000;

/// Normal law with location `rho` and scale `sigma`, truncated to `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedNormalSpec {
    pub rho: f64,
    pub sigma: f64,
    pub a: f64,
    pub b: f64,
}

impl TruncatedNormalSpec {
    pub fn new(rho: f64, sigma: f64, a: f64, b: f64) -> Result<Self> {
        let s = TruncatedNormalSpec { rho, sigma, a, b };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.rho, self.sigma, self.a, self.b].iter().all(|v| v.is_finite());
        if !finite || !(self.sigma > 0.0) || !(self.a < self.b) {
            return Err(Error::Config(format!(
                "invalid truncated normal (rho {}, sigma {}, a {}, b {}): need sigma > 0 and a < b",
                self.rho, self.sigma, self.a, self.b
            )));
        }
        Ok(())
    }
}

/// Draw by rejection from the untruncated normal.
pub fn sample_truncated_normal<R: Rng + ?Sized>(spec: &TruncatedNormalSpec, rng: &mut R) -> Result<f64> {
    spec.validate()?;
    for _ in 0..MAX_REJECTIONS {
        let z: f64 = StandardNormal.sample(rng);
        let x = spec.rho + spec.sigma * z;
        if x >= spec.a && x <= spec.b {
            return Ok(x);
        }
    }
    Err(Error::Sampling(format!(
        "no draw inside [{}, {}] after {MAX_REJECTIONS} rejections (rho {}, sigma {})",
        spec.a, spec.b, spec.rho, spec.sigma
    )))
}

/// Seed plus stream index of a ChaCha20 generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
}

/// Stream families; the top bits of the stream index keep them disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    Iteration = 0,
    Lipschitz = 1,
    SecondMoment = 2,
    Recompute = 3,
    Study = 4,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState { seed, stream: 0 }
    }

    /// Stream used by optimizer iteration `n`.
    pub fn iteration(seed: u64, n: u64) -> Self {
        RngState { seed, stream: n }
    }

    /// Stream `j` of a diagnostic family at checkpoint `n`.
    pub fn tagged(seed: u64, purpose: StreamPurpose, n: u64, j: u64) -> Self {
        assert!(n < 1 << 28 && j < 1 << 20);
        let tag = (1u64 << 63) | ((purpose as u64) << 48) | (n << 20) | j;
        RngState { seed, stream: tag }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut r = ChaCha20Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream);
        r
    }
}

/// A coefficient is either fixed or truncated-normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefficientSpec {
    Deterministic(f64),
    TruncatedNormal(TruncatedNormalSpec),
}

impl CoefficientSpec {
    pub fn mean_value(&self) -> f64 {
        match self {
            CoefficientSpec::Deterministic(v) => *v,
            CoefficientSpec::TruncatedNormal(s) => s.rho,
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match self {
            CoefficientSpec::Deterministic(v) => (*v, *v),
            CoefficientSpec::TruncatedNormal(s) => (s.a, s.b),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        match self {
            CoefficientSpec::Deterministic(v) => Ok(*v),
            CoefficientSpec::TruncatedNormal(s) => sample_truncated_normal(s, rng),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CoefficientSpec::Deterministic(v) if v.is_finite() => Ok(()),
            CoefficientSpec::Deterministic(v) => Err(Error::Config(format!("non-finite coefficient {v}"))),
            CoefficientSpec::TruncatedNormal(s) => s.validate(),
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, CoefficientSpec::TruncatedNormal(_))
    }
}

/// Neumann data: one coefficient, or one per angular sector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GSpec {
    Sectors { sectors: Vec<CoefficientSpec> },
    Constant(CoefficientSpec),
}

impl Default for GSpec {
    fn default() -> Self {
        GSpec::Constant(CoefficientSpec::Deterministic(10.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kappa: BTreeMap<String, CoefficientSpec>,
    #[serde(default)]
    pub g: GSpec,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, c) in &self.kappa {
            c.validate()
                .map_err(|e| Error::Config(format!("kappa for region '{name}': {e}")))?;
            let (lo, _) = c.bounds();
            if !(lo > 0.0) {
                return Err(Error::Config(format!("kappa for region '{name}' must stay positive")));
            }
        }
        match &self.g {
            GSpec::Constant(c) => c.validate(),
            GSpec::Sectors { sectors } if sectors.is_empty() => {
                Err(Error::Config("g sectors list is empty".into()))
            }
            GSpec::Sectors { sectors } => sectors.iter().try_for_each(|c| c.validate()),
        }
    }

    /// Fails when a mesh region has no coefficient.
    pub fn check_regions(&self, mesh: &Mesh) -> Result<()> {
        for r in mesh.region_names() {
            if !self.kappa.contains_key(r) {
                return Err(Error::Config(format!("no kappa specification for region '{r}'")));
            }
        }
        Ok(())
    }

    pub fn is_deterministic(&self) -> bool {
        let g_random = match &self.g {
            GSpec::Constant(c) => c.is_random(),
            GSpec::Sectors { sectors } => sectors.iter().any(|c| c.is_random()),
        };
        !g_random && self.kappa.values().all(|c| !c.is_random())
    }

    /// Scenario with every coefficient at its location parameter.
    pub fn mean_scenario(&self) -> Scenario {
        let kappa = self.kappa.iter().map(|(k, c)| (k.clone(), c.mean_value()));
        let g = match &self.g {
            GSpec::Constant(c) => BoundaryData::Constant(c.mean_value()),
            GSpec::Sectors { sectors } => BoundaryData::Sectors(sectors.iter().map(|c| c.mean_value()).collect()),
        };
        Scenario::new(kappa, g)
    }

    /// Independent draws, regions in name order, then `g`.
    pub fn draw_scenario<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Scenario> {
        let mut kappa = BTreeMap::new();
        for (k, c) in &self.kappa {
            kappa.insert(k.clone(), c.draw(rng)?);
        }
        let g = match &self.g {
            GSpec::Constant(c) => BoundaryData::Constant(c.draw(rng)?),
            GSpec::Sectors { sectors } => {
                BoundaryData::Sectors(sectors.iter().map(|c| c.draw(rng)).collect::<Result<_>>()?)
            }
        };
        Ok(Scenario {
            kappa,
            g,
            source: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tn(rho: f64, sigma: f64, a: f64, b: f64) -> CoefficientSpec {
        CoefficientSpec::TruncatedNormal(TruncatedNormalSpec { rho, sigma, a, b })
    }

    #[test]
    fn same_seed_same_sequence() {
        let spec = TruncatedNormalSpec::new(1.0, 0.1, 0.7, 1.3).unwrap();
        let draw = |s: RngState| {
            let mut r = s.rng();
            (0..50).map(|_| sample_truncated_normal(&spec, &mut r).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(RngState::iteration(7, 3)), draw(RngState::iteration(7, 3)));
        assert_ne!(draw(RngState::iteration(7, 3)), draw(RngState::iteration(7, 4)));
        assert_ne!(draw(RngState::iteration(7, 3)), draw(RngState::iteration(8, 3)));
    }

    #[test]
    fn narrow_support_is_respected() {
        let spec = TruncatedNormalSpec::new(1.0, 1.0, 1.0 - 1e-3, 1.0).unwrap();
        let mut r = RngState::new(1).rng();
        for _ in 0..20 {
            let x = sample_truncated_normal(&spec, &mut r).unwrap();
            assert!((spec.a..=spec.b).contains(&x));
        }
    }

    #[test]
    fn hopeless_spec_hits_the_rejection_cap() {
        let spec = TruncatedNormalSpec::new(0.0, 1e-3, 10.0, 11.0).unwrap();
        let mut r = RngState::new(1).rng();
        assert!(matches!(sample_truncated_normal(&spec, &mut r), Err(Error::Sampling(_))));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(TruncatedNormalSpec::new(1.0, 0.0, 0.0, 2.0).is_err());
        assert!(TruncatedNormalSpec::new(1.0, 1.0, 2.0, 2.0).is_err());
    }

    #[test]
    fn deterministic_spec_reproduces_constants() {
        let spec = ScenarioSpec {
            kappa: [("out".to_string(), CoefficientSpec::Deterministic(1.0)), ("in".to_string(), CoefficientSpec::Deterministic(0.005))]
                .into_iter()
                .collect(),
            g: GSpec::Constant(CoefficientSpec::Deterministic(10.0)),
        };
        let mut r = RngState::new(3).rng();
        assert_eq!(spec.draw_scenario(&mut r).unwrap(), spec.mean_scenario());
        assert!(spec.is_deterministic());
    }

    #[test]
    fn experiment_distributions_stay_in_support() {
        let spec = ScenarioSpec {
            kappa: [
                ("trunk".to_string(), tn(1.0, 1e-3, 0.7, 1.3)),
                ("lungs".to_string(), tn(0.005, 1e-3, 2.5e-3, 7.5e-3)),
                ("heart".to_string(), tn(0.015, 1e-3, 0.01, 0.02)),
            ]
            .into_iter()
            .collect(),
            g: GSpec::default(),
        };
        for n in 0..500 {
            let s = spec.draw_scenario(&mut RngState::iteration(11, n).rng()).unwrap();
            assert!((0.7..=1.3).contains(&s.kappa["trunk"]));
            assert!((2.5e-3..=7.5e-3).contains(&s.kappa["lungs"]));
            assert!((0.01..=0.02).contains(&s.kappa["heart"]));
        }
    }

    #[test]
    fn successive_iteration_draws_are_uncorrelated() {
        let spec = tn(1.0, 1e-4, 0.7, 1.3);
        let x: Vec<f64> = (0..10_000u64)
            .map(|n| spec.draw(&mut RngState::iteration(5, n).rng()).unwrap())
            .collect();
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let var: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
        let cov: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
        assert!((cov / var).abs() <= 0.03);
    }

    #[test]
    fn config_syntax() {
        let text = r#"
            g = 10.0
            [kappa]
            trunk = { rho = 1.0, sigma = 1e-4, a = 0.7, b = 1.3 }
            lungs = 0.005
        "#;
        let spec: ScenarioSpec = toml::from_str(text).unwrap();
        assert_eq!(spec.kappa["lungs"], CoefficientSpec::Deterministic(0.005));
        assert_eq!(spec.kappa["trunk"], tn(1.0, 1e-4, 0.7, 1.3));
        assert_eq!(spec.g, GSpec::Constant(CoefficientSpec::Deterministic(10.0)));
        let sectors: ScenarioSpec = toml::from_str("g = { sectors = [1.0, 2.0] }\n[kappa]\nout = 1.0\n").unwrap();
        assert!(matches!(sectors.g, GSpec::Sectors { .. }));
    }
}
