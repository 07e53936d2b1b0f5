//! SiPM response: photon detection, dark counts, optical cross-talk,
//! afterpulses and the finite number of cells.
//!
//! Only primary avalanches (detected photons and dark counts) spawn
//! secondaries; each spawns at most one prompt and one delayed cross-talk
//! event and at most one afterpulse.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::photon::{binomial, poisson};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Photon detection efficiency.
    pub eta: f64,
    pub n_cells: u32,
    /// Dark-count rate in Hz.
    pub dark_rate: f64,
    pub eps_prompt: f64,
    pub eps_delayed: f64,
    /// Mean delay of delayed cross-talk, ns.
    pub ct_delay_tau: f64,
    pub afterpulse_prob: f64,
    /// Mean afterpulse delay, ns.
    pub afterpulse_tau: f64,
    /// End of the time span over which events are kept, ns after the trigger.
    pub record_window: f64,
    /// Span before the trigger over which dark counts also accrue, ns.
    pub pre_trigger: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            eta: 0.38,
            n_cells: 667,
            dark_rate: 9.0e4,
            eps_prompt: 0.02,
            eps_delayed: 0.01,
            ct_delay_tau: 20.0,
            afterpulse_prob: 0.0,
            afterpulse_tau: 50.0,
            record_window: 200.0,
            pre_trigger: 0.0,
        }
    }
}

impl DetectorConfig {
    /// Perfect detector: unit efficiency, no spurious events.
    pub fn ideal() -> Self {
        Self {
            eta: 1.0,
            dark_rate: 0.0,
            eps_prompt: 0.0,
            eps_delayed: 0.0,
            afterpulse_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let field = |f: &str| format!("{name}.{f}");
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let half_open = |v: f64| (0.0..1.0).contains(&v);
        if !unit(self.eta) {
            return Err(Error::config(field("eta"), "must lie in [0, 1]"));
        }
        if self.n_cells == 0 {
            return Err(Error::config(field("n_cells"), "must be >= 1"));
        }
        if !(self.dark_rate.is_finite() && self.dark_rate >= 0.0) {
            return Err(Error::config(field("dark_rate"), "must be >= 0"));
        }
        for (f, v) in [
            ("eps_prompt", self.eps_prompt),
            ("eps_delayed", self.eps_delayed),
            ("afterpulse_prob", self.afterpulse_prob),
        ] {
            if !half_open(v) {
                return Err(Error::config(field(f), "must lie in [0, 1)"));
            }
        }
        for (f, v) in [
            ("ct_delay_tau", self.ct_delay_tau),
            ("afterpulse_tau", self.afterpulse_tau),
            ("record_window", self.record_window),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(field(f), "must be > 0"));
            }
        }
        if !(self.pre_trigger.is_finite() && self.pre_trigger >= 0.0) {
            return Err(Error::config(field("pre_trigger"), "must be >= 0"));
        }
        Ok(())
    }

    /// Cross-talk probability seen by an integration gate of `gate` ns.
    pub fn effective_crosstalk(&self, gate: f64, mode: CountMode) -> f64 {
        match mode {
            CountMode::Integral => {
                self.eps_prompt + self.eps_delayed * (1.0 - (-gate / self.ct_delay_tau).exp())
            }
            CountMode::Peak => self.eps_prompt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    Photon,
    Dark,
    PromptCT,
    DelayedCT,
    Afterpulse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Avalanche {
    /// ns relative to the light pulse.
    pub time: f64,
    pub origin: Origin,
}

/// Single-cell firings of one shot, sorted by time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AvalancheEventList {
    pub events: Vec<Avalanche>,
}

impl AvalancheEventList {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count_origin(&self, origin: Origin) -> usize {
        self.events.iter().filter(|e| e.origin == origin).count()
    }
}

/// How a charge measurement admits delayed events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    /// Everything inside the gate contributes.
    Integral,
    /// Only the prompt part of the signal contributes.
    Peak,
}

/// Detect `n` photons arriving at t = 0.
pub fn detect<R: Rng + ?Sized>(n: u64, cfg: &DetectorConfig, rng: &mut R) -> AvalancheEventList {
    let mut events = Vec::new();
    let detected = binomial(n, cfg.eta, rng);
    events.extend((0..detected).map(|_| Avalanche {
        time: 0.0,
        origin: Origin::Photon,
    }));

    let span = cfg.pre_trigger + cfg.record_window;
    let dark = poisson(cfg.dark_rate * span * 1e-9, rng);
    events.extend((0..dark).map(|_| Avalanche {
        time: -cfg.pre_trigger + span * rng.random::<f64>(),
        origin: Origin::Dark,
    }));

    let primaries = events.len();
    let ct_delay = Exp::new(1.0 / cfg.ct_delay_tau).expect("positive delay constant");
    let ap_delay = Exp::new(1.0 / cfg.afterpulse_tau).expect("positive delay constant");
    for i in 0..primaries {
        let t = events[i].time;
        if cfg.eps_prompt > 0.0 && rng.random::<f64>() < cfg.eps_prompt {
            events.push(Avalanche {
                time: t,
                origin: Origin::PromptCT,
            });
        }
        if cfg.eps_delayed > 0.0 && rng.random::<f64>() < cfg.eps_delayed {
            let td = t + ct_delay.sample(rng);
            if td <= cfg.record_window {
                events.push(Avalanche {
                    time: td,
                    origin: Origin::DelayedCT,
                });
            }
        }
        if cfg.afterpulse_prob > 0.0 && rng.random::<f64>() < cfg.afterpulse_prob {
            let ta = t + ap_delay.sample(rng);
            if ta <= cfg.record_window {
                events.push(Avalanche {
                    time: ta,
                    origin: Origin::Afterpulse,
                });
            }
        }
    }

    // Earliest avalanches claim the cells.
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    events.truncate(cfg.n_cells as usize);
    AvalancheEventList { events }
}

/// Analytic mean detector output for `mean_n` impinging photons.
pub fn mean_k(mean_n: f64, cfg: &DetectorConfig, gate: f64, mode: CountMode) -> Result<f64> {
    if !(gate > 0.0) {
        return Err(Error::invalid(format!("gate must be > 0 ns, got {gate}")));
    }
    if mean_n < 0.0 {
        return Err(Error::invalid(format!(
            "mean photon number must be >= 0, got {mean_n}"
        )));
    }
    let dark = mean_dark_counts(cfg.dark_rate, gate);
    Ok((cfg.eta * mean_n + dark) * (1.0 + cfg.effective_crosstalk(gate, mode)))
}

/// Mean number of dark counts in a gate: rate (Hz) times gate (ns).
pub fn mean_dark_counts(dark_rate: f64, gate: f64) -> f64 {
    dark_rate * gate * 1e-9
}

/// Number of avalanches with 0 <= t <= gate.
pub fn count_in_gate(events: &AvalancheEventList, gate: f64) -> u64 {
    events
        .events
        .iter()
        .filter(|e| e.time >= 0.0 && e.time <= gate)
        .count() as u64
}
