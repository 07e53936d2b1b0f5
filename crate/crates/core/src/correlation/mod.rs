//! Noise reduction factor: shot-by-shot estimate, analytic model for
//! classically and quantum-correlated light, and model fitting.

mod fit;
mod model;

pub use fit::{fit_model, FitReport, FitSpec, Param, ParamBounds, RestartStat};
pub use model::{model_r_balanced, model_r_general, NrfModelParams};

use std::io::{Read, Write};

use rand::Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum VarianceConvention {
    /// Divide by N - 1.
    #[default]
    Unbiased,
    /// Divide by N.
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NrfOptions {
    pub variance: VarianceConvention,
    pub bootstrap_resamples: usize,
    pub seed: u64,
    /// Distinguishes bootstrap streams of different curve points.
    pub group: u64,
}

impl Default for NrfOptions {
    fn default() -> Self {
        Self {
            variance: VarianceConvention::Unbiased,
            bootstrap_resamples: 500,
            seed: 0,
            group: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NrfEstimate {
    pub r: f64,
    pub sigma_r: f64,
    pub mean_k1: f64,
    pub mean_k2: f64,
}

fn r_of(
    k1: &[f64],
    k2: &[f64],
    idx: impl Iterator<Item = usize> + Clone,
    conv: VarianceConvention,
) -> Option<(f64, f64, f64)> {
    let mut n = 0usize;
    let (mut s1, mut s2, mut sd, mut sdd) = (0.0, 0.0, 0.0, 0.0);
    // Shift by the first difference for numerical stability.
    let first = idx.clone().next()?;
    let shift = k1[first] - k2[first];
    for i in idx {
        let d = k1[i] - k2[i] - shift;
        s1 += k1[i];
        s2 += k2[i];
        sd += d;
        sdd += d * d;
        n += 1;
    }
    let nf = n as f64;
    let ss = sdd - sd * sd / nf;
    let var = match conv {
        VarianceConvention::Unbiased => ss / (nf - 1.0),
        VarianceConvention::Population => ss / nf,
    }
    .max(0.0);
    let (m1, m2) = (s1 / nf, s2 / nf);
    if m1 + m2 == 0.0 {
        return None;
    }
    Some((var / (m1 + m2), m1, m2))
}

/// `Var(k1 - k2) / (<k1> + <k2>)` with a bootstrap standard error.
pub fn noise_reduction(k1: &[f64], k2: &[f64], opts: &NrfOptions) -> Result<NrfEstimate> {
    if k1.len() != k2.len() {
        return Err(Error::invalid("both arms need the same number of shots"));
    }
    let n = k1.len();
    if n < 2 {
        return Err(Error::invalid("noise reduction needs at least 2 shots"));
    }
    let (r, m1, m2) = r_of(k1, k2, 0..n, opts.variance)
        .ok_or_else(|| Error::UndefinedR("mean detector outputs sum to zero".into()))?;

    let sigma_r = if opts.bootstrap_resamples >= 2 {
        let rs: Vec<f64> = rng::map_indexed(opts.bootstrap_resamples, |b| {
            let mut g = rng::stream(opts.seed, domain::BOOTSTRAP_R, opts.group, b as u64);
            let idx: Vec<usize> = (0..n).map(|_| g.random_range(0..n)).collect();
            r_of(k1, k2, idx.iter().copied(), opts.variance).map(|x| x.0)
        })
        .into_iter()
        .flatten()
        .collect();
        let m = rs.iter().sum::<f64>() / rs.len() as f64;
        (rs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (rs.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(NrfEstimate {
        r,
        sigma_r,
        mean_k1: m1,
        mean_k2: m2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NrfPoint {
    pub mean_k: f64,
    pub mean_k1: f64,
    pub mean_k2: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub sigma_r: f64,
}

impl From<NrfEstimate> for NrfPoint {
    fn from(e: NrfEstimate) -> Self {
        Self {
            mean_k: e.mean_k1,
            mean_k1: e.mean_k1,
            mean_k2: e.mean_k2,
            r: e.r,
            sigma_r: e.sigma_r,
        }
    }
}

/// Measured or simulated R versus mean detected photons.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NrfCurve {
    pub points: Vec<NrfPoint>,
}

impl NrfCurve {
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if !(p.sigma_r > 0.0) {
                return Err(Error::invalid(format!("point {i}: sigma_R must be > 0")));
            }
        }
        let mut ks: Vec<f64> = self.points.iter().map(|p| p.mean_k).collect();
        ks.sort_by(f64::total_cmp);
        if ks.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("curve mean_k values must be distinct"));
        }
        Ok(())
    }

    /// CSV with header `mean_k,mean_k1,mean_k2,R,sigma_R`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["mean_k", "mean_k1", "mean_k2", "R", "sigma_R"])?;
        for p in &self.points {
            w.write_record([
                format!("{}", p.mean_k),
                format!("{}", p.mean_k1),
                format!("{}", p.mean_k2),
                format!("{}", p.r),
                format!("{}", p.sigma_r),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            mean_k: f64,
            mean_k1: Option<f64>,
            mean_k2: Option<f64>,
            #[serde(rename = "R")]
            r: f64,
            #[serde(rename = "sigma_R")]
            sigma_r: f64,
        }
        let mut rd = csv::Reader::from_reader(input);
        let mut points = Vec::new();
        for row in rd.deserialize() {
            let row: Row = row?;
            points.push(NrfPoint {
                mean_k: row.mean_k,
                mean_k1: row.mean_k1.unwrap_or(row.mean_k),
                mean_k2: row.mean_k2.unwrap_or(f64::NAN),
                r: row.r,
                sigma_r: row.sigma_r,
            });
        }
        Ok(Self { points })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Poisson};

    fn opts(resamples: usize) -> NrfOptions {
        NrfOptions {
            bootstrap_resamples: resamples,
            ..NrfOptions::default()
        }
    }

    #[test]
    fn perfectly_correlated_arms_give_zero() {
        let k = [1.0, 4.0, 2.0, 7.0];
        let e = noise_reduction(&k, &k, &opts(50)).unwrap();
        assert_eq!(e.r, 0.0);
    }

    #[test]
    fn hand_computed_example_and_convention() {
        let k1 = [2.0, 0.0, 2.0, 0.0];
        let k2 = [0.0, 2.0, 0.0, 2.0];
        let e = noise_reduction(&k1, &k2, &opts(0)).unwrap();
        assert!((e.r - 8.0 / 3.0).abs() < 1e-12);
        let pop = NrfOptions {
            variance: VarianceConvention::Population,
            ..opts(0)
        };
        assert!((noise_reduction(&k1, &k2, &pop).unwrap().r - 2.0).abs() < 1e-12);
        // arm exchange
        let swapped = noise_reduction(&k2, &k1, &opts(0)).unwrap();
        assert_eq!(swapped.r, e.r);
    }

    #[test]
    fn undefined_when_means_vanish() {
        let z = [0.0; 5];
        assert!(matches!(
            noise_reduction(&z, &z, &opts(0)),
            Err(Error::UndefinedR(_))
        ));
        assert!(noise_reduction(&[1.0], &[1.0], &opts(0)).is_err());
        assert!(noise_reduction(&[1.0, 2.0], &[1.0], &opts(0)).is_err());
    }

    #[test]
    fn independent_poisson_arms_are_shot_noise_limited() {
        let n = 1_000_000;
        let mut r = rng::stream(11, 0, 0, 0);
        let p = Poisson::new(5.0).unwrap();
        let k1: Vec<f64> = (0..n).map(|_| p.sample(&mut r)).collect();
        let k2: Vec<f64> = (0..n).map(|_| p.sample(&mut r)).collect();
        let e = noise_reduction(&k1, &k2, &opts(100)).unwrap();
        assert!(e.sigma_r > 0.0);
        assert!(
            (e.r - 1.0).abs() < 4.0 * e.sigma_r,
            "{} +- {}",
            e.r,
            e.sigma_r
        );
    }

    #[test]
    fn curve_csv_round_trip() {
        let c = NrfCurve {
            points: vec![
                NrfPoint {
                    mean_k: 1.5,
                    mean_k1: 1.5,
                    mean_k2: 1.4,
                    r: 1.02,
                    sigma_r: 0.01,
                },
                NrfPoint {
                    mean_k: 3.0,
                    mean_k1: 3.0,
                    mean_k2: 2.9,
                    r: 1.05,
                    sigma_r: 0.012,
                },
            ],
        };
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("mean_k,mean_k1,mean_k2,R,sigma_R\n"));
        assert_eq!(NrfCurve::read_csv(&buf[..]).unwrap(), c);
        assert!(c.validate().is_ok());
    }
}
