use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the analytic noise-reduction model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct NrfModelParams {
    /// Number of multi-thermal modes.
    pub mu: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub eps1: f64,
    pub eps2: f64,
    /// Mean dark counts per shot in each arm.
    pub m1dc: f64,
    pub m2dc: f64,
    /// Imbalance, `<k2> = t <k1>`.
    pub t: f64,
    /// Include the quantum-correlation term.
    pub quantum: bool,
}

impl Default for NrfModelParams {
    fn default() -> Self {
        Self {
            mu: 1.0,
            eta1: 0.0,
            eta2: 0.0,
            eps1: 0.0,
            eps2: 0.0,
            m1dc: 0.0,
            m2dc: 0.0,
            t: 1.0,
            quantum: false,
        }
    }
}

impl NrfModelParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameters(what.to_string()));
        if !(self.mu > 0.0) {
            return bad("mu must be > 0");
        }
        for (name, v) in [("eta1", self.eta1), ("eta2", self.eta2)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        for (name, v) in [("eps1", self.eps1), ("eps2", self.eps2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1)"));
            }
        }
        if !(self.m1dc >= 0.0 && self.m2dc >= 0.0) {
            return bad("dark-count means must be >= 0");
        }
        if !(self.t > 0.0 && self.t <= 1.0) {
            return bad("t must lie in (0, 1]");
        }
        Ok(())
    }

    /// Dark-count contributions to the detector output of each arm.
    fn dark_outputs(&self) -> (f64, f64) {
        ((1.0 + self.eps1) * self.m1dc, (1.0 + self.eps2) * self.m2dc)
    }
}

fn sqrt_arg(v: f64, arm: u8) -> Result<f64> {
    if v < 0.0 {
        return Err(Error::InvalidParameters(format!(
            "mean output of arm {arm} lies below its dark-count floor"
        )));
    }
    Ok(v.sqrt())
}

/// Noise reduction factor for arbitrary mean outputs of the two arms.
pub fn model_r_general(p: &NrfModelParams, mean_k1: f64, mean_k2: f64) -> Result<f64> {
    if !(mean_k1 > 0.0 && mean_k2 > 0.0) {
        return Err(Error::invalid("mean outputs must be > 0"));
    }
    let s = mean_k1 + mean_k2;
    let diff = mean_k1 - mean_k2;
    let (a, b) = p.dark_outputs();
    let dd = a - b;
    let mut r = 1.0
        + diff * diff / (p.mu * s)
        + 2.0 * p.eps1 / (1.0 + p.eps1) * mean_k1 / s
        + 2.0 * p.eps2 / (1.0 + p.eps2) * mean_k2 / s
        - 2.0 / p.mu * dd * diff / s
        + dd * dd / (p.mu * s);
    if p.quantum {
        let x1 = sqrt_arg((1.0 + p.eps1) * (mean_k1 - a) / s, 1)?;
        let x2 = sqrt_arg((1.0 + p.eps2) * (mean_k2 - b) / s, 2)?;
        r -= 2.0 * (p.eta1 * p.eta2).sqrt() * x1 * x2;
    }
    Ok(r)
}

/// Noise reduction factor written in terms of `<k> = <k1>` and the
/// imbalance `t`.
pub fn model_r_balanced(p: &NrfModelParams, mean_k: f64) -> Result<f64> {
    if !(mean_k > 0.0) {
        return Err(Error::invalid("mean output must be > 0"));
    }
    let t = p.t;
    let (a, b) = p.dark_outputs();
    let dd = a - b;
    let mut r = 1.0
        + (1.0 - t).powi(2) / (1.0 + t) * mean_k / p.mu
        + 2.0 / (1.0 + t) * (p.eps1 / (1.0 + p.eps1) + p.eps2 / (1.0 + p.eps2) * t)
        - 2.0 / p.mu * (1.0 - t) / (1.0 + t) * dd
        + dd * dd / (p.mu * (1.0 + t) * mean_k);
    if p.quantum {
        let x1 = sqrt_arg((1.0 + p.eps1) * (1.0 - a / mean_k), 1)?;
        let x2 = sqrt_arg((1.0 + p.eps2) * (t - b / mean_k), 2)?;
        r -= 2.0 * (p.eta1 * p.eta2).sqrt() / (1.0 + t) * x1 * x2;
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quantum(eta: f64) -> NrfModelParams {
        NrfModelParams {
            eta1: eta,
            eta2: eta,
            quantum: true,
            ..NrfModelParams::default()
        }
    }

    #[test]
    fn ideal_classical_is_one() {
        let p = NrfModelParams::default();
        assert_eq!(model_r_general(&p, 4.0, 4.0).unwrap(), 1.0);
        assert_eq!(model_r_balanced(&p, 4.0).unwrap(), 1.0);
    }

    #[test]
    fn ideal_quantum_floor() {
        let p = quantum(0.3);
        assert!((model_r_general(&p, 4.0, 4.0).unwrap() - 0.7).abs() < 1e-15);
        assert!((model_r_balanced(&quantum(0.2), 7.0).unwrap() - 0.8).abs() < 1e-15);
        let p = NrfModelParams {
            eta2: 0.5,
            ..quantum(0.2)
        };
        assert!((model_r_general(&p, 3.0, 3.0).unwrap() - (1.0 - 0.1f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn crosstalk_excess() {
        let p = NrfModelParams {
            eps1: 0.03,
            eps2: 0.03,
            ..NrfModelParams::default()
        };
        let r = model_r_general(&p, 5.0, 5.0).unwrap();
        assert!((r - (1.0 + 0.06 / 1.03)).abs() < 1e-15);
        assert!((r - 1.0583).abs() < 1e-4);
    }

    #[test]
    fn imbalance_term() {
        let p = NrfModelParams {
            t: 0.9,
            ..NrfModelParams::default()
        };
        let r = model_r_balanced(&p, 10.0).unwrap();
        assert!((r - (1.0 + 0.01 / 1.9 * 10.0)).abs() < 1e-14);
        assert!((r - 1.0526).abs() < 1e-4);
    }

    #[test]
    fn twin_beam_fit_parameters_at_eleven() {
        let p = NrfModelParams {
            mu: 9256.0,
            eta1: 0.182,
            eta2: 0.182,
            eps1: 0.019,
            eps2: 0.019,
            m1dc: 0.349,
            m2dc: 0.349,
            t: 0.913,
            quantum: true,
        };
        let r = model_r_balanced(&p, 11.0).unwrap();
        // Term-by-term hand evaluation.
        let a: f64 = 1.019 * 0.349;
        let expect = 1.0 + 0.087f64.powi(2) / 1.913 * 11.0 / 9256.0 + 2.0 * 0.019 / 1.019
            - 2.0 * 0.182 / 1.913
                * (1.019 * (1.0 - a / 11.0)).sqrt()
                * (1.019 * (0.913 - a / 11.0)).sqrt();
        assert!((r - expect).abs() < 1e-14);
        assert!((r - 0.858).abs() < 0.005, "{r}");
    }

    #[test]
    fn below_dark_floor_is_invalid() {
        let p = NrfModelParams {
            m1dc: 2.0,
            ..quantum(0.2)
        };
        assert!(matches!(
            model_r_balanced(&p, 1.0),
            Err(Error::InvalidParameters(_))
        ));
        assert!(matches!(
            model_r_general(&p, 1.0, 1.0),
            Err(Error::InvalidParameters(_))
        ));
        // classical light has no square-root term
        let c = NrfModelParams {
            quantum: false,
            ..p
        };
        assert!(model_r_balanced(&c, 1.0).is_ok());
    }
}
