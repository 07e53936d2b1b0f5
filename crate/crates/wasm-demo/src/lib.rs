//! Browser bindings. Every operation takes a JSON request string and returns
//! a JSON response string; errors come back as JavaScript exceptions.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use sipm_core::correlation::{model_r_balanced, NrfModelParams, NrfOptions};
use sipm_core::detector::{mean_dark_counts, CountMode, DetectorConfig};
use sipm_core::extraction::ExtractionMethod;
use sipm_core::harness::{self, ExperimentConfig, Overrides};
use sipm_core::photon::{BeamSplitterSpec, LightKind, LightStateSpec};
use sipm_core::sim::{simulate_r_curve, CurveOptions, Readout, SweepAxis, TwoArmSetup};

const MAX_TRACES: usize = 50;
const MAX_SHOTS: usize = 200_000;

type Outcome<T> = std::result::Result<T, String>;

fn preset_config(preset: &str, mean_photons: f64, seed: u64) -> Outcome<ExperimentConfig> {
    let mut cfg = harness::load_config(Some(preset), None, &Overrides::default())
        .map_err(|e| e.to_string())?;
    cfg.state = LightStateSpec::coherent(mean_photons).map_err(|e| e.to_string())?;
    cfg.seed = seed;
    Ok(cfg)
}

#[derive(Deserialize)]
pub struct WaveformRequest {
    pub preset: String,
    pub mean_photons: f64,
    pub traces: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Serialize)]
pub struct WaveformResponse {
    pub sample_period: f64,
    pub trigger_index: usize,
    /// +1 when pulses go positive, -1 when the chain inverts.
    pub sign: f64,
    pub traces: Vec<Vec<f64>>,
}

pub fn waveforms_impl(req: &WaveformRequest) -> Outcome<WaveformResponse> {
    let cfg = preset_config(&req.preset, req.mean_photons, req.seed)?;
    let traces =
        harness::render_traces(&cfg, req.traces.clamp(1, MAX_TRACES)).map_err(|e| e.to_string())?;
    let first = &traces[0];
    Ok(WaveformResponse {
        sample_period: first.sample_period,
        trigger_index: first.trigger_index,
        sign: first.polarity.sign(),
        traces: traces.into_iter().map(|t| t.samples).collect(),
    })
}

#[derive(Deserialize)]
pub struct SpectrumRequest {
    pub preset: String,
    pub mean_photons: f64,
    pub shots: usize,
    /// Extraction method; the preset's when absent.
    #[serde(default)]
    pub method: Option<ExtractionMethod>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Serialize)]
pub struct SpectrumResponse {
    pub label: String,
    pub bin_centers: Vec<f64>,
    pub counts: Vec<u64>,
    pub peaks: Vec<f64>,
    pub valleys: Vec<f64>,
    pub gamma_bar: Option<f64>,
    pub visibility: Option<f64>,
    pub saturation_knee: Option<usize>,
}

pub fn spectrum_impl(req: &SpectrumRequest) -> Outcome<SpectrumResponse> {
    let mut cfg = preset_config(&req.preset, req.mean_photons, req.seed)?;
    cfg.shots = req.shots.clamp(100, MAX_SHOTS);
    cfg.phs.bootstrap_resamples = 0;
    if let Some(m) = req.method {
        cfg.phs.methods = vec![m];
    }
    let (summary, phs, _) = harness::phs_spectra(&cfg)
        .map_err(|e| e.to_string())?
        .into_iter()
        .next()
        .ok_or("no extraction method configured")?;
    let h = &phs.histogram;
    Ok(SpectrumResponse {
        label: summary.method.label(),
        bin_centers: (0..h.counts.len()).map(|i| h.bin_center(i)).collect(),
        counts: h.counts.clone(),
        peaks: summary.peaks.iter().map(|p| p.position).collect(),
        valleys: summary.valleys.iter().map(|p| p.position).collect(),
        gamma_bar: summary.gamma_bar,
        visibility: summary.visibility,
        saturation_knee: summary.saturation_knee,
    })
}

#[derive(Deserialize)]
pub struct CurveRequest {
    pub light: LightKind,
    #[serde(default = "one")]
    pub modes: u64,
    pub eta: f64,
    #[serde(default)]
    pub eps_prompt: f64,
    #[serde(default)]
    pub eps_delayed: f64,
    #[serde(default)]
    pub dark_rate: f64,
    /// Counting window in ns.
    pub gate: f64,
    /// Count only the prompt part of the signal (peak extraction).
    #[serde(default)]
    pub peak: bool,
    pub sweep: Vec<f64>,
    pub shots: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> u64 {
    1
}

#[derive(Serialize)]
pub struct CurvePoint {
    pub mean_k: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "sigma_R")]
    pub sigma_r: f64,
    /// Analytic expectation at the simulated mean.
    pub model: Option<f64>,
}

pub fn r_curve_impl(req: &CurveRequest) -> Outcome<Vec<CurvePoint>> {
    let det = DetectorConfig {
        eta: req.eta,
        eps_prompt: req.eps_prompt,
        eps_delayed: req.eps_delayed,
        dark_rate: req.dark_rate,
        ..DetectorConfig::default()
    };
    det.validate("detector").map_err(|e| e.to_string())?;
    let modes = if req.light == LightKind::Coherent || req.light == LightKind::Thermal {
        1
    } else {
        req.modes
    };
    let state = LightStateSpec::new(req.light, 1.0, modes).map_err(|e| e.to_string())?;
    let setup = TwoArmSetup {
        state,
        splitter: BeamSplitterSpec::balanced(),
        det1: det,
        det2: det,
    };
    let mode = if req.peak {
        CountMode::Peak
    } else {
        CountMode::Integral
    };
    let opts = CurveOptions {
        sweep: req.sweep.clone(),
        axis: SweepAxis::Detected,
        shots_per_point: req.shots.clamp(100, MAX_SHOTS),
        seed: req.seed,
        nrf: NrfOptions {
            seed: req.seed,
            bootstrap_resamples: 100,
            ..NrfOptions::default()
        },
    };
    let curve = simulate_r_curve(
        &setup,
        &Readout::Counts {
            gate: req.gate,
            mode,
        },
        &opts,
    )
    .map_err(|e| e.to_string())?;

    // delayed events inside a short window are ignored by the model
    let eps = if req.peak {
        det.eps_prompt
    } else {
        det.effective_crosstalk(req.gate, mode)
    };
    let dark = mean_dark_counts(det.dark_rate, req.gate);
    let params = NrfModelParams {
        mu: match req.light {
            LightKind::Coherent => f64::INFINITY,
            _ => modes as f64,
        },
        eta1: det.eta,
        eta2: det.eta,
        eps1: eps,
        eps2: eps,
        m1dc: dark,
        m2dc: dark,
        t: 1.0,
        quantum: req.light == LightKind::TwinBeam,
    };
    Ok(curve
        .points
        .iter()
        .map(|p| CurvePoint {
            mean_k: p.mean_k,
            r: p.r,
            sigma_r: p.sigma_r,
            model: model_r_balanced(&params, p.mean_k).ok(),
        })
        .collect())
}

fn call<Q, A>(request: &str, f: impl FnOnce(&Q) -> Outcome<A>) -> Outcome<String>
where
    Q: for<'de> Deserialize<'de>,
    A: Serialize,
{
    let req: Q = serde_json::from_str(request).map_err(|e| format!("bad request: {e}"))?;
    serde_json::to_string(&f(&req)?).map_err(|e| e.to_string())
}

/// Digitized single-shot traces for a preset chain.
#[wasm_bindgen]
pub fn waveforms(request: &str) -> Result<String, JsError> {
    call(request, waveforms_impl).map_err(|e| JsError::new(&e))
}

/// Pulse-height spectrum, peaks and visibility for a preset chain.
#[wasm_bindgen]
pub fn spectrum(request: &str) -> Result<String, JsError> {
    call(request, spectrum_impl).map_err(|e| JsError::new(&e))
}

/// Noise reduction factor versus mean detected photons, with the analytic
/// expectation alongside.
#[wasm_bindgen]
pub fn r_curve(request: &str) -> Result<String, JsError> {
    call(request, r_curve_impl).map_err(|e| JsError::new(&e))
}

/// Names of the chain presets.
#[wasm_bindgen]
pub fn presets() -> String {
    serde_json::to_string(&harness::preset_names()).expect("names serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn waveform_request_round_trip() {
        let out = call(
            r#"{"preset": "psau_dt5720", "mean_photons": 5.0, "traces": 2}"#,
            waveforms_impl,
        )
        .unwrap();
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["traces"].as_array().unwrap().len(), 2);
        assert_eq!(v["sample_period"], 4.0);
        assert_eq!(v["sign"], -1.0);
    }

    #[test]
    fn spectrum_resolves_peaks() {
        let req = SpectrumRequest {
            preset: "psau_drs4".into(),
            mean_photons: 8.0,
            shots: 5000,
            method: None,
            seed: 1,
        };
        let s = spectrum_impl(&req).unwrap();
        assert!(s.peaks.len() >= 4);
        assert!(s.visibility.unwrap() > 0.5);
        assert_eq!(s.bin_centers.len(), s.counts.len());
    }

    #[test]
    fn twin_beam_curve_tracks_model() {
        let out = call(
            r#"{"light": "twin_beam", "modes": 100, "eta": 0.3, "gate": 110.0,
                "sweep": [2.0, 8.0], "shots": 50000, "seed": 3}"#,
            r_curve_impl,
        )
        .unwrap();
        let pts: serde_json::Value = serde_json::from_str(&out).unwrap();
        for p in pts.as_array().unwrap() {
            let (r, s, m) = (
                p["R"].as_f64().unwrap(),
                p["sigma_R"].as_f64().unwrap(),
                p["model"].as_f64().unwrap(),
            );
            assert!((r - m).abs() < 4.0 * s, "{r} vs {m}");
        }
    }

    #[test]
    fn bad_requests_are_reported() {
        assert!(call(r#"{"preset": 3}"#, waveforms_impl)
            .unwrap_err()
            .starts_with("bad request"));
        let e = call(
            r#"{"preset": "nope", "mean_photons": 1.0, "traces": 1}"#,
            waveforms_impl,
        )
        .unwrap_err();
        assert!(e.contains("preset"));
    }
}
