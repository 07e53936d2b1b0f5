//! Reduction of a digitized trace to one number per shot.
//!
//! All methods subtract a baseline measured before the trigger and fold the
//! chain polarity so that light always yields positive outputs.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::detector::CountMode;
use crate::error::{Error, Result};
use crate::waveform::WaveformTrace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExtractionMethod {
    /// Integral over `tau` ns starting at the trigger, V·ns.
    GatedIntegral { tau: f64 },
    /// Largest sample within `search_window` ns after the trigger, V.
    PeakValue { search_window: f64 },
    /// Integral over the `width` ns ending at the peak sample, V·ns.
    PrePeakIntegral { width: f64, search_window: f64 },
}

impl ExtractionMethod {
    pub fn label(&self) -> String {
        match self {
            ExtractionMethod::GatedIntegral { tau } => format!("gate_{tau}ns"),
            ExtractionMethod::PeakValue { .. } => "peak".to_string(),
            ExtractionMethod::PrePeakIntegral { width, .. } => format!("prepeak_{width}ns"),
        }
    }

    /// Count-level semantics of the method: the gate length and whether
    /// delayed avalanches inside it contribute.
    pub fn count_semantics(&self, peak_window: f64) -> (f64, CountMode) {
        match *self {
            ExtractionMethod::GatedIntegral { tau } => (tau, CountMode::Integral),
            ExtractionMethod::PeakValue { .. } | ExtractionMethod::PrePeakIntegral { .. } => {
                (peak_window, CountMode::Peak)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |f: &str| Err(Error::config(format!("extraction.{f}"), "must be > 0"));
        match *self {
            ExtractionMethod::GatedIntegral { tau } if !(tau > 0.0) => bad("tau"),
            ExtractionMethod::PeakValue { search_window } if !(search_window > 0.0) => {
                bad("search_window")
            }
            ExtractionMethod::PrePeakIntegral { width, .. } if !(width > 0.0) => bad("width"),
            ExtractionMethod::PrePeakIntegral { search_window, .. } if !(search_window > 0.0) => {
                bad("search_window")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ExtractionConfig {
    #[serde(flatten)]
    pub method: ExtractionMethod,
    /// (start, end) in ns relative to the trigger; both negative.
    #[serde(default = "default_baseline_window")]
    pub baseline_window: (f64, f64),
}

pub fn default_baseline_window() -> (f64, f64) {
    (-24.0, -4.0)
}

impl ExtractionConfig {
    pub fn new(method: ExtractionMethod) -> Self {
        Self {
            method,
            baseline_window: default_baseline_window(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.method.validate()?;
        let (a, b) = self.baseline_window;
        if !(a < b && b <= 0.0) {
            return Err(Error::config(
                "extraction.baseline_window",
                "must be an increasing interval ending at or before the trigger",
            ));
        }
        Ok(())
    }

    pub fn extract(&self, trace: &WaveformTrace) -> Result<f64> {
        let base = baseline(trace, self.baseline_window)?;
        extract_with_baseline(trace, &self.method, base)
    }
}

/// Evaluate one method against an already measured baseline.
pub fn extract_with_baseline(
    trace: &WaveformTrace,
    method: &ExtractionMethod,
    base: f64,
) -> Result<f64> {
    match *method {
        ExtractionMethod::GatedIntegral { tau } => gated_integral(trace, base, tau),
        ExtractionMethod::PeakValue { search_window } => {
            peak_value(trace, base, search_window).map(|(_, v)| v)
        }
        ExtractionMethod::PrePeakIntegral {
            width,
            search_window,
        } => pre_peak_integral(trace, base, width, search_window),
    }
}

/// Samples with times inside `[start, end]` ns.
fn index_range(trace: &WaveformTrace, start: f64, end: f64) -> (usize, usize) {
    let ts = trace.sample_period;
    let trig = trace.trigger_index as f64;
    let eps = 1e-9;
    let lo = ((start / ts + trig) - eps).ceil().max(0.0) as usize;
    let hi = ((end / ts + trig) + eps).floor() as i64;
    (lo, (hi + 1).max(0) as usize)
}

/// Mean of the samples inside `window` (ns relative to the trigger).
pub fn baseline(trace: &WaveformTrace, window: (f64, f64)) -> Result<f64> {
    let (start, end) = window;
    if end > 0.0 || start >= end {
        return Err(Error::invalid(format!(
            "baseline window ({start}, {end}) ns must precede the trigger"
        )));
    }
    if start < trace.time(0) - 1e-9 {
        return Err(Error::invalid(format!(
            "baseline window starts at {start} ns, before the record ({} ns)",
            trace.time(0)
        )));
    }
    let (lo, hi) = index_range(trace, start, end);
    let hi = hi.min(trace.samples.len());
    if hi < lo + 4 {
        return Err(Error::invalid(format!(
            "baseline window holds {} samples, need at least 4",
            hi.saturating_sub(lo)
        )));
    }
    Ok(trace.samples[lo..hi].iter().sum::<f64>() / (hi - lo) as f64)
}

fn folded(trace: &WaveformTrace, base: f64, i: usize) -> f64 {
    trace.polarity.sign() * (trace.samples[i] - base)
}

/// Sum of polarity-folded, baseline-subtracted samples over
/// `round(tau / period)` samples starting at the trigger, times the period.
pub fn gated_integral(trace: &WaveformTrace, base: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("gate must be > 0 ns, got {tau}")));
    }
    let n = (tau / trace.sample_period).round() as usize;
    let lo = trace.trigger_index;
    let hi = lo + n;
    if hi > trace.samples.len() {
        return Err(Error::invalid(format!(
            "gate of {tau} ns exceeds the record after the trigger"
        )));
    }
    Ok((lo..hi).map(|i| folded(trace, base, i)).sum::<f64>() * trace.sample_period)
}

/// Index and value of the largest folded sample in
/// `[trigger, trigger + search_window]`.
pub fn peak_value(trace: &WaveformTrace, base: f64, search_window: f64) -> Result<(usize, f64)> {
    if !(search_window > 0.0) {
        return Err(Error::invalid("peak search window must be > 0 ns"));
    }
    let (lo, hi) = index_range(trace, 0.0, search_window);
    if hi > trace.samples.len() || hi <= lo {
        return Err(Error::invalid(format!(
            "peak search window of {search_window} ns exceeds the record"
        )));
    }
    let mut best = (lo, f64::MIN);
    for i in lo..hi {
        let v = folded(trace, base, i);
        if v > best.1 {
            best = (i, v);
        }
    }
    Ok(best)
}

/// Integral over the `round(width / period)` samples ending at the peak
/// sample (inclusive).
pub fn pre_peak_integral(
    trace: &WaveformTrace,
    base: f64,
    width: f64,
    search_window: f64,
) -> Result<f64> {
    if !(width > 0.0) {
        return Err(Error::invalid(format!("width must be > 0 ns, got {width}")));
    }
    let (ipk, _) = peak_value(trace, base, search_window)?;
    let n = pre_peak_samples(trace.sample_period, width);
    if n > ipk + 1 {
        return Err(Error::invalid(format!(
            "pre-peak window of {width} ns runs past the start of the record"
        )));
    }
    let lo = ipk + 1 - n;
    Ok((lo..=ipk).map(|i| folded(trace, base, i)).sum::<f64>() * trace.sample_period)
}

/// Number of samples spanned by a pre-peak window.
pub fn pre_peak_samples(sample_period: f64, width: f64) -> usize {
    ((width / sample_period).round() as usize).max(1)
}

/// One extracted shot, optionally calibrated to detected photons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub shot: u64,
    pub x_out1: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub x_out2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k2: Option<f64>,
}

/// Write shot records as JSON lines.
pub fn write_shot_records<W: std::io::Write>(mut out: W, records: &[ShotRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{Avalanche, AvalancheEventList, Origin};
    use crate::waveform::{
        AmplifierConfig, CellPulseParams, Chain, DigitizerConfig, NoiseConfig, Polarity,
        DEFAULT_OVERSAMPLE_RATE,
    };

    fn constant_trace(v: f64, period: f64, n: usize, trig: usize) -> WaveformTrace {
        WaveformTrace {
            sample_period: period,
            samples: vec![v; n],
            trigger_index: trig,
            polarity: Polarity::NonInverting,
        }
    }

    fn cells(times: &[f64]) -> AvalancheEventList {
        AvalancheEventList {
            events: times
                .iter()
                .map(|&time| Avalanche {
                    time,
                    origin: Origin::Photon,
                })
                .collect(),
        }
    }

    fn quiet_chain(amp: AmplifierConfig) -> Chain {
        Chain::new(
            CellPulseParams::default(),
            amp,
            fine_drs4(),
            NoiseConfig::silent(),
            DEFAULT_OVERSAMPLE_RATE,
        )
        .unwrap()
    }

    /// DRS4 timing with enough bits that quantization stays far below the
    /// tolerances checked here.
    fn fine_drs4() -> DigitizerConfig {
        DigitizerConfig {
            bits: 16,
            ..DigitizerConfig::drs4()
        }
    }

    fn render(chain: &Chain, times: &[f64]) -> WaveformTrace {
        let mut r = crate::rng::stream(0, 0, 0, 0);
        chain.render(&cells(times), &mut r)
    }

    #[test]
    fn baseline_examples() {
        let t = constant_trace(0.0, 1.0, 100, 50);
        assert_eq!(baseline(&t, (-20.0, -4.0)).unwrap(), 0.0);
        let t = constant_trace(0.1, 1.0, 100, 50);
        assert!((baseline(&t, (-20.0, -4.0)).unwrap() - 0.1).abs() < 1e-15);
        assert!(baseline(&t, (-20.0, 5.0)).is_err());
        assert!(baseline(&t, (-80.0, -4.0)).is_err());
        assert!(baseline(&t, (-2.5, -0.5)).is_err());
    }

    #[test]
    fn baseline_noise_bound() {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut r = crate::rng::stream(1, 0, 0, 0);
        let trials = 20_000;
        let mut outliers = 0;
        for _ in 0..trials {
            let mut t = constant_trace(0.0, 1.0, 120, 110);
            for s in &mut t.samples {
                let z: f64 = r.sample(StandardNormal);
                *s = 1e-3 * z;
            }
            let b = baseline(&t, (-109.5, -10.0)).unwrap();
            if b.abs() >= 0.4e-3 {
                outliers += 1;
            }
        }
        // 4 sigma two-sided tail is 6.3e-5
        assert!(outliers <= 5, "{outliers}");
    }

    #[test]
    fn gated_integral_examples() {
        let t = constant_trace(0.0, 1.0, 100, 10);
        assert_eq!(gated_integral(&t, 0.0, 10.0).unwrap(), 0.0);
        let t = constant_trace(1.5, 1.0, 100, 10);
        assert!((gated_integral(&t, 0.5, 10.0).unwrap() - 10.0).abs() < 1e-12);
        assert!(gated_integral(&t, 0.5, 200.0).is_err());
    }

    #[test]
    fn gate_beyond_twice_slow_fall_recovers_tail_mass() {
        let p = CellPulseParams::default();
        let dig = DigitizerConfig {
            record_samples: 8000,
            pre_trigger_fraction: 0.02,
            ..fine_drs4()
        };
        let chain = Chain::new(
            p,
            AmplifierConfig::fast(20.0),
            dig,
            NoiseConfig::silent(),
            20e9,
        )
        .unwrap();
        let tr = render(&chain, &[0.0]);
        let full_gate = dig.record_end();
        let full = gated_integral(&tr, 0.0, full_gate).unwrap();
        let two = gated_integral(&tr, 0.0, 2.0 * p.tau_fall_slow).unwrap();
        let pulse = chain.pulse();
        let expected = pulse.integral(2.0 * p.tau_fall_slow) / pulse.integral(full_gate);
        assert!(
            ((two / full) / expected - 1.0).abs() < 0.02,
            "{} vs {}",
            two / full,
            expected
        );
    }

    #[test]
    fn peak_and_pre_peak_examples() {
        let t = constant_trace(0.0, 0.2, 1000, 100);
        assert_eq!(peak_value(&t, 0.0, 50.0).unwrap().1, 0.0);
        assert_eq!(pre_peak_integral(&t, 0.0, 2.0, 50.0).unwrap(), 0.0);
        assert_eq!(pre_peak_samples(0.2, 2.0), 10);
        assert!(peak_value(&t, 0.0, 500.0).is_err());
    }

    #[test]
    fn coincident_cells_scale_linearly() {
        for amp in [AmplifierConfig::fast(12.0), AmplifierConfig::slow()] {
            let chain = quiet_chain(amp);
            let methods = [
                ExtractionMethod::GatedIntegral { tau: 70.0 },
                ExtractionMethod::PeakValue {
                    search_window: 120.0,
                },
                ExtractionMethod::PrePeakIntegral {
                    width: 2.0,
                    search_window: 120.0,
                },
            ];
            let one = render(&chain, &[0.0]);
            for m in methods {
                let cfg = ExtractionConfig::new(m);
                let x1 = cfg.extract(&one).unwrap();
                assert!(x1 > 0.0);
                for cells_fired in [2usize, 3, 5] {
                    let tr = render(&chain, &vec![0.0; cells_fired]);
                    let xm = cfg.extract(&tr).unwrap();
                    assert!(
                        (xm / (cells_fired as f64 * x1) - 1.0).abs() < 0.01,
                        "{m:?} {cells_fired}"
                    );
                }
            }
        }
    }

    #[test]
    fn gated_integral_nondecreasing_in_tau() {
        let chain = quiet_chain(AmplifierConfig::fast(12.0));
        let tr = render(&chain, &[0.0, 0.0, 25.0]);
        let base = baseline(&tr, default_baseline_window()).unwrap();
        let mut prev = f64::MIN;
        for k in 1..150 {
            let v = gated_integral(&tr, base, k as f64).unwrap();
            assert!(v >= prev - 1e-12);
            prev = v;
        }
    }

    #[test]
    fn delayed_event_rejection() {
        let chain = quiet_chain(AmplifierConfig::fast(12.0));
        let clean = render(&chain, &[0.0]);
        let late = render(&chain, &[0.0, 30.0]);
        let peak = ExtractionConfig::new(ExtractionMethod::PeakValue {
            search_window: 20.0,
        });
        assert_eq!(peak.extract(&clean).unwrap(), peak.extract(&late).unwrap());
        let short = ExtractionConfig::new(ExtractionMethod::GatedIntegral { tau: 10.0 });
        assert_eq!(
            short.extract(&clean).unwrap(),
            short.extract(&late).unwrap()
        );
        let long = ExtractionConfig::new(ExtractionMethod::GatedIntegral { tau: 110.0 });
        let pulse = chain.pulse();
        let a = long.extract(&clean).unwrap();
        let b = long.extract(&late).unwrap();
        let expected_ratio = 1.0 + pulse.integral(80.0) / pulse.integral(110.0);
        assert!((b / a / expected_ratio - 1.0).abs() < 0.01);
    }

    #[test]
    fn pre_peak_integral_approaches_peak_for_one_sample() {
        let chain = quiet_chain(AmplifierConfig::slow());
        let tr = render(&chain, &[0.0]);
        let base = baseline(&tr, default_baseline_window()).unwrap();
        let (_, pk) = peak_value(&tr, base, 150.0).unwrap();
        let one = pre_peak_integral(&tr, base, tr.sample_period, 150.0).unwrap();
        assert!((one / tr.sample_period - pk).abs() < 1e-12);
        let two_ns = pre_peak_integral(&tr, base, 2.0, 150.0).unwrap();
        assert!((two_ns / 2.0 / pk - 1.0).abs() < 0.01);
    }

    #[test]
    fn shot_records_as_json_lines() {
        let recs = [
            ShotRecord {
                shot: 0,
                x_out1: 1.5,
                x_out2: None,
                k1: None,
                k2: None,
            },
            ShotRecord {
                shot: 1,
                x_out1: 2.0,
                x_out2: Some(3.0),
                k1: Some(1.0),
                k2: Some(2.0),
            },
        ];
        let mut buf = Vec::new();
        write_shot_records(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], r#"{"shot":0,"x_out1":1.5}"#);
        let back: ShotRecord = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(back, recs[1]);
    }
}
