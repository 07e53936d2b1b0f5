//! Photon-number statistics of the light states used in the experiments.
//!
//! Coherent light is Poissonian, a single speckle of pseudo-thermal light is
//! Bose-Einstein distributed and a multi-mode thermal field (either arm of a
//! twin beam) follows the negative-binomial law with `modes` degrees of
//! freedom. Multi-mode sampling goes through a gamma-distributed intensity
//! followed by a Poisson draw, which stays exact for very large mode counts.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum LightKind {
    Coherent,
    Thermal,
    MultiThermal,
    TwinBeam,
}

/// A light state: its statistics family, mean photon number per pulse and
/// mode number. For twin beams `mean_photons` is the per-arm mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct LightStateSpec {
    pub kind: LightKind,
    pub mean_photons: f64,
    #[serde(default = "one")]
    pub modes: u64,
}

fn one() -> u64 {
    1
}

impl LightStateSpec {
    pub fn new(kind: LightKind, mean_photons: f64, modes: u64) -> Result<Self> {
        let spec = Self {
            kind,
            mean_photons,
            modes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn coherent(mean: f64) -> Result<Self> {
        Self::new(LightKind::Coherent, mean, 1)
    }

    pub fn thermal(mean: f64) -> Result<Self> {
        Self::new(LightKind::Thermal, mean, 1)
    }

    pub fn multi_thermal(mean: f64, modes: u64) -> Result<Self> {
        Self::new(LightKind::MultiThermal, mean, modes)
    }

    pub fn twin_beam(mean_per_arm: f64, modes: u64) -> Result<Self> {
        Self::new(LightKind::TwinBeam, mean_per_arm, modes)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean_photons.is_finite() && self.mean_photons >= 0.0) {
            return Err(Error::config(
                "state.mean_photons",
                format!("must be finite and >= 0, got {}", self.mean_photons),
            ));
        }
        if self.modes == 0 {
            return Err(Error::config("state.modes", "must be >= 1"));
        }
        if matches!(self.kind, LightKind::Coherent | LightKind::Thermal) && self.modes != 1 {
            return Err(Error::config(
                "state.modes",
                format!(
                    "{:?} light is single-mode, got modes = {}",
                    self.kind, self.modes
                ),
            ));
        }
        Ok(())
    }

    /// Same state with a different mean photon number.
    pub fn with_mean(&self, mean_photons: f64) -> Self {
        Self {
            mean_photons,
            ..*self
        }
    }
}

/// True photon numbers of one shot, before detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ShotPhotons {
    pub n1: u64,
    pub n2: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct BeamSplitterSpec {
    /// Probability that a photon leaves through port 1.
    pub transmittance: f64,
}

impl BeamSplitterSpec {
    pub fn new(transmittance: f64) -> Result<Self> {
        let bs = Self { transmittance };
        bs.validate()?;
        Ok(bs)
    }

    pub fn balanced() -> Self {
        Self { transmittance: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.transmittance) {
            return Err(Error::config(
                "splitter.transmittance",
                format!("must lie in [0, 1], got {}", self.transmittance),
            ));
        }
        Ok(())
    }
}

pub(crate) fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("finite positive Poisson mean");
    d.sample(rng) as u64
}

pub(crate) fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("p in (0,1)").sample(rng)
}

/// Bose-Einstein draw by inversion of the geometric CDF.
fn bose_einstein<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let ratio = mean / (1.0 + mean);
    // u in (0, 1]
    let u = 1.0 - rng.random::<f64>();
    (u.ln() / ratio.ln()).floor() as u64
}

fn multi_thermal<R: Rng + ?Sized>(mean: f64, modes: u64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let shape = modes as f64;
    let intensity = Gamma::new(shape, mean / shape)
        .expect("positive gamma parameters")
        .sample(rng);
    poisson(intensity, rng)
}

/// Photon number of one pulse of `spec`.
pub fn sample_photons<R: Rng + ?Sized>(spec: &LightStateSpec, rng: &mut R) -> u64 {
    match spec.kind {
        LightKind::Coherent => poisson(spec.mean_photons, rng),
        LightKind::Thermal => bose_einstein(spec.mean_photons, rng),
        LightKind::MultiThermal | LightKind::TwinBeam => {
            multi_thermal(spec.mean_photons, spec.modes, rng)
        }
    }
}

/// Route each of `n` photons independently to port 1 with probability
/// `transmittance`.
pub fn split_at_bs<R: Rng + ?Sized>(n: u64, bs: &BeamSplitterSpec, rng: &mut R) -> ShotPhotons {
    let n1 = binomial(n, bs.transmittance, rng);
    ShotPhotons {
        n1,
        n2: Some(n - n1),
    }
}

/// One twin-beam pulse: both arms carry the same photon number.
pub fn sample_twin_beam<R: Rng + ?Sized>(
    spec: &LightStateSpec,
    rng: &mut R,
) -> Result<ShotPhotons> {
    if spec.kind != LightKind::TwinBeam {
        return Err(Error::invalid(format!(
            "sample_twin_beam needs a twin-beam state, got {:?}",
            spec.kind
        )));
    }
    let n = multi_thermal(spec.mean_photons, spec.modes, rng);
    Ok(ShotPhotons { n1: n, n2: Some(n) })
}

/// Mean and variance of the photon-number distribution of `spec`
/// (per arm for twin beams).
pub fn analytic_moments(spec: &LightStateSpec) -> (f64, f64) {
    let m = spec.mean_photons;
    match spec.kind {
        LightKind::Coherent => (m, m),
        LightKind::Thermal => (m, m + m * m),
        LightKind::MultiThermal | LightKind::TwinBeam => (m, m + m * m / spec.modes as f64),
    }
}
