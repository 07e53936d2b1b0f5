//! Bounded weighted least-squares fit of the noise-reduction model.

use rand::Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::model::{model_r_general, NrfModelParams};
use super::NrfCurve;
use crate::error::{Error, Result};
use crate::rng::{self, domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    Mu,
    Eta1,
    Eta2,
    Eps1,
    Eps2,
    M1dc,
    M2dc,
    T,
}

impl Param {
    pub const ALL: [Param; 8] = [
        Param::Mu,
        Param::Eta1,
        Param::Eta2,
        Param::Eps1,
        Param::Eps2,
        Param::M1dc,
        Param::M2dc,
        Param::T,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::Mu => "mu",
            Param::Eta1 => "eta1",
            Param::Eta2 => "eta2",
            Param::Eps1 => "eps1",
            Param::Eps2 => "eps2",
            Param::M1dc => "m1dc",
            Param::M2dc => "m2dc",
            Param::T => "t",
        }
    }

    fn get(self, p: &NrfModelParams) -> f64 {
        match self {
            Param::Mu => p.mu,
            Param::Eta1 => p.eta1,
            Param::Eta2 => p.eta2,
            Param::Eps1 => p.eps1,
            Param::Eps2 => p.eps2,
            Param::M1dc => p.m1dc,
            Param::M2dc => p.m2dc,
            Param::T => p.t,
        }
    }

    fn set(self, p: &mut NrfModelParams, v: f64) {
        match self {
            Param::Mu => p.mu = v,
            Param::Eta1 => p.eta1 = v,
            Param::Eta2 => p.eta2 = v,
            Param::Eps1 => p.eps1 = v,
            Param::Eps2 => p.eps2 = v,
            Param::M1dc => p.m1dc = v,
            Param::M2dc => p.m2dc = v,
            Param::T => p.t = v,
        }
    }
}

/// Closed search interval per parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ParamBounds {
    pub mu: (f64, f64),
    pub eta1: (f64, f64),
    pub eta2: (f64, f64),
    pub eps1: (f64, f64),
    pub eps2: (f64, f64),
    pub m1dc: (f64, f64),
    pub m2dc: (f64, f64),
    pub t: (f64, f64),
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            mu: (1.0, 1e5),
            eta1: (0.0, 1.0),
            eta2: (0.0, 1.0),
            eps1: (0.0, 0.2),
            eps2: (0.0, 0.2),
            m1dc: (0.0, 2.0),
            m2dc: (0.0, 2.0),
            t: (0.5, 1.0),
        }
    }
}

impl ParamBounds {
    pub fn get(&self, p: Param) -> (f64, f64) {
        match p {
            Param::Mu => self.mu,
            Param::Eta1 => self.eta1,
            Param::Eta2 => self.eta2,
            Param::Eps1 => self.eps1,
            Param::Eps2 => self.eps2,
            Param::M1dc => self.m1dc,
            Param::M2dc => self.m2dc,
            Param::T => self.t,
        }
    }
}

/// Which parameters float, their bounds, and the values of the fixed ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct FitSpec {
    pub free: Vec<Param>,
    pub bounds: ParamBounds,
    /// Fixed parameter values and the first starting point.
    pub start: NrfModelParams,
    /// Force `eps2 = eps1`.
    pub tie_eps: bool,
    /// Force `eta2 = eta1`.
    pub tie_eta: bool,
    /// Force `m2dc = m1dc`.
    pub tie_dark: bool,
    pub restarts: usize,
    pub seed: u64,
    /// Function evaluations allowed per simplex run.
    pub max_evals: usize,
}

impl Default for FitSpec {
    fn default() -> Self {
        Self {
            free: vec![Param::Eps1, Param::M1dc, Param::M2dc, Param::T],
            bounds: ParamBounds::default(),
            start: NrfModelParams::default(),
            tie_eps: true,
            tie_eta: true,
            tie_dark: false,
            restarts: 20,
            seed: 0,
            max_evals: 4000,
        }
    }
}

impl FitSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config("fit", m));
        if self.free.is_empty() {
            return bad("at least one parameter must be free".into());
        }
        for (i, p) in self.free.iter().enumerate() {
            if self.free[..i].contains(p) {
                return bad(format!("{} listed twice", p.name()));
            }
            let (lo, hi) = self.bounds.get(*p);
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return bad(format!("bounds of {} must satisfy lo < hi", p.name()));
            }
            if *p == Param::Mu && lo <= 0.0 {
                return bad("mu lower bound must be > 0".into());
            }
        }
        for (tied, on, what) in [
            (Param::Eps2, self.tie_eps, "tie_eps"),
            (Param::Eta2, self.tie_eta, "tie_eta"),
            (Param::M2dc, self.tie_dark, "tie_dark"),
        ] {
            if on && self.free.contains(&tied) {
                return bad(format!(
                    "{} cannot be free while {what} is set",
                    tied.name()
                ));
            }
        }
        if self.restarts == 0 {
            return bad("restarts must be >= 1".into());
        }
        Ok(())
    }

    fn decode(&self, u: &[f64]) -> NrfModelParams {
        let mut p = self.start;
        for (&par, &ui) in self.free.iter().zip(u) {
            let (lo, hi) = self.bounds.get(par);
            let ui = ui.clamp(0.0, 1.0);
            let v = if par == Param::Mu {
                lo * (hi / lo).powf(ui)
            } else {
                lo + (hi - lo) * ui
            };
            par.set(&mut p, v);
        }
        if self.tie_eps {
            p.eps2 = p.eps1;
        }
        if self.tie_eta {
            p.eta2 = p.eta1;
        }
        if self.tie_dark {
            p.m2dc = p.m1dc;
        }
        p
    }

    fn encode(&self, p: &NrfModelParams) -> Vec<f64> {
        self.free
            .iter()
            .map(|&par| {
                let (lo, hi) = self.bounds.get(par);
                let v = par.get(p);
                let u = if par == Param::Mu {
                    (v / lo).ln() / (hi / lo).ln()
                } else {
                    (v - lo) / (hi - lo)
                };
                u.clamp(0.0, 1.0)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestartStat {
    pub chi2: f64,
    pub evals: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: NrfModelParams,
    pub free: Vec<Param>,
    pub bounds: ParamBounds,
    pub tie_eps: bool,
    pub tie_eta: bool,
    pub tie_dark: bool,
    pub chi2: f64,
    pub dof: usize,
    pub reduced_chi2: f64,
    pub converged: bool,
    pub restarts: Vec<RestartStat>,
}

impl FitReport {
    pub fn value(&self, p: Param) -> f64 {
        p.get(&self.params)
    }
}

const PENALTY: f64 = 1e30;

fn chi2(curve: &NrfCurve, p: &NrfModelParams) -> f64 {
    if p.validate().is_err() {
        return PENALTY;
    }
    let mut s = 0.0;
    for pt in &curve.points {
        let k2 = if pt.mean_k2.is_finite() {
            pt.mean_k2
        } else {
            p.t * pt.mean_k1
        };
        match model_r_general(p, pt.mean_k1, k2) {
            Ok(r) => s += ((pt.r - r) / pt.sigma_r).powi(2),
            Err(_) => return PENALTY,
        }
    }
    s
}

struct Run {
    x: Vec<f64>,
    f: f64,
    evals: usize,
    converged: bool,
}

/// Nelder-Mead on the unit box; points are projected back onto the box.
fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], step: f64, max_evals: usize) -> Run {
    let n = x0.len();
    let proj = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect() };
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] = if v[i] + step <= 1.0 {
            v[i] + step
        } else {
            v[i] - step
        };
        simplex.push(v);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut evals = n + 1;
    let mut converged = false;

    while evals < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| fv[a].total_cmp(&fv[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        fv = order.iter().map(|&i| fv[i]).collect();

        let spread = fv[n] - fv[0];
        let size = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread <= 1e-12 * (fv[0].abs() + 1e-12) && size < 1e-9 {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |c: f64| -> Vec<f64> {
            proj(
                (0..n)
                    .map(|j| centroid[j] + c * (simplex[n][j] - centroid[j]))
                    .collect(),
            )
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < fv[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                simplex[n] = xe;
                fv[n] = fe;
            } else {
                simplex[n] = xr;
                fv[n] = fr;
            }
        } else if fr < fv[n - 1] {
            simplex[n] = xr;
            fv[n] = fr;
        } else {
            let (xc, fc) = if fr < fv[n] {
                let x = along(-0.5);
                let fx = f(&x);
                (x, fx)
            } else {
                let x = along(0.5);
                let fx = f(&x);
                (x, fx)
            };
            evals += 1;
            if fc < fv[n].min(fr) {
                simplex[n] = xc;
                fv[n] = fc;
            } else {
                for i in 1..=n {
                    simplex[i] = (0..n)
                        .map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]))
                        .collect();
                    fv[i] = f(&simplex[i]);
                }
                evals += n;
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| fv[a].total_cmp(&fv[b])).unwrap();
    Run {
        x: simplex[best].clone(),
        f: fv[best],
        evals,
        converged,
    }
}

/// Simplex runs restarted from their own optimum until they stop improving.
fn polish(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], max_evals: usize) -> Run {
    let mut run = nelder_mead(f, x0, 0.1, max_evals);
    for _ in 0..4 {
        let next = nelder_mead(f, &run.x, 0.02, max_evals);
        let improved = next.f < run.f * (1.0 - 1e-10) - 1e-300;
        let evals = run.evals + next.evals;
        if next.f <= run.f {
            run = Run {
                evals,
                converged: next.converged,
                ..next
            };
        } else {
            run.evals = evals;
        }
        if !improved {
            break;
        }
    }
    run
}

/// Fits the model to a measured curve by weighted least squares, taking
/// the best of several bounded simplex searches.
pub fn fit_model(curve: &NrfCurve, spec: &FitSpec) -> Result<FitReport> {
    spec.validate()?;
    curve.validate()?;
    let nfree = spec.free.len();
    let npts = curve.points.len();
    if npts < nfree + 1 {
        return Err(Error::FitFailed {
            reason: format!("{npts} points cannot constrain {nfree} free parameters"),
            best: None,
        });
    }
    let objective = |u: &[f64]| chi2(curve, &spec.decode(u));

    let mut g = rng::stream(spec.seed, domain::FIT, 0, 0);
    let mut stats = Vec::with_capacity(spec.restarts);
    let mut best: Option<Run> = None;
    for r in 0..spec.restarts {
        let x0 = if r == 0 {
            spec.encode(&spec.start)
        } else {
            (0..nfree).map(|_| g.random::<f64>()).collect()
        };
        let run = polish(&objective, &x0, spec.max_evals);
        stats.push(RestartStat {
            chi2: run.f,
            evals: run.evals,
            converged: run.converged && run.f < PENALTY,
        });
        if best.as_ref().is_none_or(|b| run.f < b.f) {
            best = Some(run);
        }
    }
    let best = best.expect("restarts >= 1");
    let dof = npts - nfree;
    let converged = stats.iter().any(|s| s.converged) && best.f < PENALTY;
    let report = FitReport {
        params: spec.decode(&best.x),
        free: spec.free.clone(),
        bounds: spec.bounds,
        tie_eps: spec.tie_eps,
        tie_eta: spec.tie_eta,
        tie_dark: spec.tie_dark,
        chi2: best.f,
        dof,
        reduced_chi2: best.f / dof as f64,
        converged,
        restarts: stats,
    };
    if !converged {
        return Err(Error::FitFailed {
            reason: "no restart converged to a valid parameter set".into(),
            best: Some(Box::new(report)),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::{model_r_balanced, NrfPoint};

    fn synthetic(truth: &NrfModelParams, ks: &[f64]) -> NrfCurve {
        NrfCurve {
            points: ks
                .iter()
                .map(|&k| NrfPoint {
                    mean_k: k,
                    mean_k1: k,
                    mean_k2: truth.t * k,
                    r: model_r_balanced(truth, k).unwrap(),
                    sigma_r: 0.01,
                })
                .collect(),
        }
    }

    #[test]
    fn recovers_noiseless_quantum_parameters() {
        let truth = NrfModelParams {
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
        let ks: Vec<f64> = (2..=14).map(f64::from).collect();
        let spec = FitSpec {
            free: vec![Param::Eta1, Param::Eps1, Param::M1dc, Param::T],
            tie_dark: true,
            start: NrfModelParams {
                mu: 9256.0,
                eta1: 0.5,
                eta2: 0.5,
                quantum: true,
                t: 0.8,
                ..NrfModelParams::default()
            },
            ..FitSpec::default()
        };
        let rep = fit_model(&synthetic(&truth, &ks), &spec).unwrap();
        assert!(rep.reduced_chi2 < 1e-6, "{}", rep.reduced_chi2);
        assert!((rep.params.eta1 - 0.182).abs() < 2e-3, "{:?}", rep.params);
        assert!((rep.params.eps1 - 0.019).abs() < 2e-3, "{:?}", rep.params);
        assert_eq!(rep.dof, ks.len() - 4);
        assert_eq!(rep.restarts.len(), 20);
    }

    #[test]
    fn too_few_points() {
        let truth = NrfModelParams::default();
        let c = synthetic(&truth, &[1.0, 2.0]);
        let spec = FitSpec::default();
        assert!(matches!(
            fit_model(&c, &spec),
            Err(Error::FitFailed { best: None, .. })
        ));
    }

    #[test]
    fn rejects_inconsistent_ties() {
        let spec = FitSpec {
            free: vec![Param::Eps1, Param::Eps2],
            ..FitSpec::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn invalid_region_reports_best_attempt() {
        // Quantum model with dark floor above every mean output.
        let c = synthetic(&NrfModelParams::default(), &[0.5, 0.6, 0.7, 0.8, 0.9]);
        let spec = FitSpec {
            free: vec![Param::Eps1],
            bounds: ParamBounds {
                m1dc: (0.0, 5.0),
                ..ParamBounds::default()
            },
            start: NrfModelParams {
                eta1: 0.2,
                eta2: 0.2,
                m1dc: 3.0,
                m2dc: 3.0,
                quantum: true,
                ..NrfModelParams::default()
            },
            ..FitSpec::default()
        };
        match fit_model(&c, &spec) {
            Err(Error::FitFailed { best: Some(_), .. }) => {}
            other => panic!("{other:?}"),
        }
    }
}
