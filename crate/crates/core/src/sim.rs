//! Shot-level Monte Carlo pipelines: photons, detection, and either the
//! full analog chain with extraction or the count-level shortcut.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::correlation::{noise_reduction, NrfCurve, NrfOptions, NrfPoint};
use crate::detector::{
    count_in_gate, detect, mean_k, AvalancheEventList, CountMode, DetectorConfig,
};
use crate::error::{Error, Result};
use crate::extraction::ExtractionConfig;
use crate::photon::{
    sample_photons, sample_twin_beam, split_at_bs, BeamSplitterSpec, LightKind, LightStateSpec,
    ShotPhotons,
};
use crate::rng::{self, domain, ShotRng};
use crate::spectrum::{analyze, calibrate, SpectrumOptions};
use crate::waveform::{Chain, NoiseConfig};

/// Light source and detectors of a two-arm measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoArmSetup {
    pub state: LightStateSpec,
    /// Ignored for twin beams, whose arms are separate by construction.
    pub splitter: BeamSplitterSpec,
    pub det1: DetectorConfig,
    pub det2: DetectorConfig,
}

impl TwoArmSetup {
    pub fn validate(&self) -> Result<()> {
        self.state.validate()?;
        self.splitter.validate()?;
        self.det1.validate("detector1")?;
        self.det2.validate("detector2")
    }

    fn is_twin_beam(&self) -> bool {
        self.state.kind == LightKind::TwinBeam
    }

    fn sample(&self, state: &LightStateSpec, rng: &mut ShotRng) -> Result<ShotPhotons> {
        if self.is_twin_beam() {
            sample_twin_beam(state, rng)
        } else {
            Ok(split_at_bs(sample_photons(state, rng), &self.splitter, rng))
        }
    }

    /// Mean photons reaching arm 1 for a source mean of `mean_photons`.
    fn arm1_photons(&self, mean_photons: f64) -> f64 {
        if self.is_twin_beam() {
            mean_photons
        } else {
            mean_photons * self.splitter.transmittance
        }
    }

    fn detect_pair(
        &self,
        shot: &ShotPhotons,
        rng: &mut ShotRng,
    ) -> (AvalancheEventList, AvalancheEventList) {
        let a = detect(shot.n1, &self.det1, rng);
        let b = detect(shot.n2.unwrap_or(0), &self.det2, rng);
        (a, b)
    }
}

/// Meaning of the values in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Target mean detector output of arm 1, `<k1>`.
    #[default]
    Detected,
    /// Mean photons per pulse of the source (per arm for twin beams).
    Photons,
}

/// How extracted outputs are converted to detected photons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Gain and zero from the pulse-height spectrum of each arm, falling
    /// back to the chain's single-cell response when no peaks are resolved.
    #[default]
    Spectrum,
    /// Always the chain's noiseless single-cell response.
    Reference,
}

/// Per-shot readout used to obtain `k`.
#[derive(Debug, Clone, Copy)]
pub enum Readout<'a> {
    /// Count avalanches directly.
    Counts { gate: f64, mode: CountMode },
    /// Render, digitize and extract every shot, then calibrate.
    Waveform {
        chain: &'a Chain,
        extraction: &'a ExtractionConfig,
        calibration: CalibrationMode,
        /// Round calibrated outputs to integers.
        round: bool,
        /// Gate and count mode used to relate the sweep to `<k1>`.
        semantics: (f64, CountMode),
    },
}

impl Readout<'_> {
    fn semantics(&self) -> (f64, CountMode) {
        match *self {
            Readout::Counts { gate, mode } => (gate, mode),
            Readout::Waveform { semantics, .. } => semantics,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveOptions {
    pub sweep: Vec<f64>,
    pub axis: SweepAxis,
    pub shots_per_point: usize,
    pub seed: u64,
    pub nrf: NrfOptions,
}

/// Source mean giving `<k1> = target` for the given count semantics.
pub fn photons_for_detected_mean(
    setup: &TwoArmSetup,
    target: f64,
    gate: f64,
    mode: CountMode,
) -> Result<f64> {
    let det = &setup.det1;
    let floor = mean_k(0.0, det, gate, mode)?;
    let per_photon = mean_k(1.0, det, gate, mode)? - floor;
    if !(target > floor) {
        return Err(Error::invalid(format!(
            "target <k1> = {target} is not above the dark-count floor {floor:.4}"
        )));
    }
    if !(per_photon > 0.0) {
        return Err(Error::invalid("detector 1 has zero efficiency"));
    }
    let arm_share = setup.arm1_photons(1.0);
    if !(arm_share > 0.0) {
        return Err(Error::invalid("no light reaches arm 1"));
    }
    Ok((target - floor) / per_photon / arm_share)
}

fn source_means(setup: &TwoArmSetup, readout: &Readout, opts: &CurveOptions) -> Result<Vec<f64>> {
    let (gate, mode) = readout.semantics();
    opts.sweep
        .iter()
        .map(|&v| match opts.axis {
            SweepAxis::Photons => Ok(v),
            SweepAxis::Detected => photons_for_detected_mean(setup, v, gate, mode),
        })
        .collect()
}

/// Count-level outputs of both arms: avalanches within `[0, gate]` ns of
/// the light pulse. A gate much shorter than the cross-talk delay gives the
/// peak-extraction semantics.
pub fn simulate_counts(
    setup: &TwoArmSetup,
    mean_photons: f64,
    gate: f64,
    shots: usize,
    seed: u64,
    group: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let state = setup.state.with_mean(mean_photons);
    state.validate()?;
    let pairs = rng::map_indexed(shots, |i| -> Result<(f64, f64)> {
        let mut r = rng::stream(seed, domain::SHOTS, group, i as u64);
        let shot = setup.sample(&state, &mut r)?;
        let (a, b) = setup.detect_pair(&shot, &mut r);
        Ok((
            count_in_gate(&a, gate) as f64,
            count_in_gate(&b, gate) as f64,
        ))
    });
    unzip(pairs)
}

fn unzip(pairs: Vec<Result<(f64, f64)>>) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut a = Vec::with_capacity(pairs.len());
    let mut b = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (x, y) = p?;
        a.push(x);
        b.push(y);
    }
    Ok((a, b))
}

/// Extracted outputs of both arms through the full analog chain.
pub fn simulate_waveform_outputs(
    setup: &TwoArmSetup,
    mean_photons: f64,
    chain: &Chain,
    extraction: &ExtractionConfig,
    shots: usize,
    seed: u64,
    group: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let state = setup.state.with_mean(mean_photons);
    state.validate()?;
    extraction.validate()?;
    // Fail early on windows the record cannot hold.
    reference_response(chain, extraction)?;
    let pairs = rng::map_indexed(shots, |i| -> Result<(f64, f64)> {
        let mut r = rng::stream(seed, domain::SHOTS, group, i as u64);
        let shot = setup.sample(&state, &mut r)?;
        let (a, b) = setup.detect_pair(&shot, &mut r);
        let x1 = extraction.extract(&chain.render(&a, &mut r))?;
        let x2 = extraction.extract(&chain.render(&b, &mut r))?;
        Ok((x1, x2))
    });
    unzip(pairs)
}

/// Extracted outputs of a single arm, one series per extraction, all taken
/// from the same traces.
pub fn simulate_single_arm(
    state: &LightStateSpec,
    det: &DetectorConfig,
    chain: &Chain,
    extractions: &[ExtractionConfig],
    shots: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    state.validate()?;
    det.validate("detector")?;
    for e in extractions {
        e.validate()?;
        reference_response(chain, e)?;
    }
    let rows = rng::map_indexed(shots, |i| -> Result<Vec<f64>> {
        let mut r = rng::stream(seed, domain::SHOTS, 0, i as u64);
        let n = sample_photons(state, &mut r);
        let ev = detect(n, det, &mut r);
        let tr = chain.render(&ev, &mut r);
        extractions.iter().map(|e| e.extract(&tr)).collect()
    });
    let mut out = vec![Vec::with_capacity(shots); extractions.len()];
    for row in rows {
        for (col, v) in out.iter_mut().zip(row?) {
            col.push(v);
        }
    }
    Ok(out)
}

/// Noiseless extracted output of one fired cell at the trigger time, net
/// of the output of an empty record.
pub fn reference_response(chain: &Chain, extraction: &ExtractionConfig) -> Result<f64> {
    let mut quiet = chain.clone();
    quiet.noise = NoiseConfig::silent();
    let mut r = rng::stream(0, 0, 0, 0);
    let empty = extraction.extract(&quiet.render(&AvalancheEventList::default(), &mut r))?;
    let one = AvalancheEventList {
        events: vec![crate::detector::Avalanche {
            time: 0.0,
            origin: crate::detector::Origin::Photon,
        }],
    };
    let single = extraction.extract(&quiet.render(&one, &mut r))?;
    let g = single - empty;
    if !(g > 0.0) {
        return Err(Error::config(
            "extraction",
            "a single fired cell gives no positive output with this chain",
        ));
    }
    Ok(g)
}

/// Gain and zero offset for one arm's outputs.
pub fn calibration_for(
    x: &[f64],
    reference_gain: f64,
    mode: CalibrationMode,
    seed: u64,
) -> (f64, f64) {
    if mode == CalibrationMode::Spectrum {
        let opts = SpectrumOptions {
            reference_gamma: Some(reference_gain),
            bootstrap_resamples: 0,
            seed,
            ..SpectrumOptions::default()
        };
        if let Ok(phs) = analyze(x, &opts) {
            if let (Some(g), Some(z)) = (phs.gamma_bar, phs.zero_position) {
                return (g, z);
            }
        }
    }
    (reference_gain, 0.0)
}

/// Noise reduction factor versus mean detected photons.
pub fn simulate_r_curve(
    setup: &TwoArmSetup,
    readout: &Readout,
    opts: &CurveOptions,
) -> Result<NrfCurve> {
    setup.validate()?;
    if opts.shots_per_point < 2 {
        return Err(Error::config(
            "shots",
            "at least 2 shots per point are needed",
        ));
    }
    let means = source_means(setup, readout, opts)?;
    let mut points = Vec::with_capacity(means.len());
    for (g, &mean) in means.iter().enumerate() {
        let group = g as u64;
        let (k1, k2) = match *readout {
            Readout::Counts { gate, .. } => {
                simulate_counts(setup, mean, gate, opts.shots_per_point, opts.seed, group)?
            }
            Readout::Waveform {
                chain,
                extraction,
                calibration,
                round,
                ..
            } => {
                let (x1, x2) = simulate_waveform_outputs(
                    setup,
                    mean,
                    chain,
                    extraction,
                    opts.shots_per_point,
                    opts.seed,
                    group,
                )?;
                let gain = reference_response(chain, extraction)?;
                let (g1, z1) = calibration_for(&x1, gain, calibration, opts.seed);
                let (g2, z2) = calibration_for(&x2, gain, calibration, opts.seed);
                (
                    calibrate(&x1, g1, z1, round)?,
                    calibrate(&x2, g2, z2, round)?,
                )
            }
        };
        let nrf = NrfOptions { group, ..opts.nrf };
        points.push(NrfPoint::from(noise_reduction(&k1, &k2, &nrf)?));
    }
    Ok(NrfCurve { points })
}
