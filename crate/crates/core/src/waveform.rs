//! Analog pulse synthesis, amplification and digitization.
//!
//! A fired cell produces a pulse whose leading edge is the square of a
//! single-exponential charge curve and whose trailing edge is a mixture of a
//! fast and a slow exponential. Pulses are superposed on a fine analog grid
//! (20 GS/s by default), passed through an amplifier model and sampled,
//! clamped and quantized by a digitizer model.

use std::io::{self, Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::detector::{Avalanche, AvalancheEventList};
use crate::error::{Error, Result};

/// Internal analog sampling rate, samples/s.
pub const DEFAULT_OVERSAMPLE_RATE: f64 = 20e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct CellPulseParams {
    /// Peak voltage of one fired cell before amplification, V.
    pub amplitude: f64,
    pub tau_rise: f64,
    pub tau_fall_fast: f64,
    pub tau_fall_slow: f64,
    /// Weight of the fast fall component.
    pub fall_mix: f64,
}

impl Default for CellPulseParams {
    fn default() -> Self {
        Self {
            amplitude: 2.0e-3,
            tau_rise: 0.15,
            tau_fall_fast: 10.0,
            tau_fall_slow: 100.0,
            fall_mix: 0.7,
        }
    }
}

impl CellPulseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0) {
            return Err(Error::config("pulse.amplitude", "must be > 0"));
        }
        if !(self.tau_rise > 0.0
            && self.tau_rise < self.tau_fall_fast
            && self.tau_fall_fast < self.tau_fall_slow)
        {
            return Err(Error::config(
                "pulse",
                "time constants must satisfy 0 < tau_rise < tau_fall_fast < tau_fall_slow",
            ));
        }
        if !(0.0..=1.0).contains(&self.fall_mix) {
            return Err(Error::config("pulse.fall_mix", "must lie in [0, 1]"));
        }
        Ok(())
    }

    fn raw(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        let rise = 1.0 - (-t / self.tau_rise).exp();
        let fall = self.fall_mix * (-t / self.tau_fall_fast).exp()
            + (1.0 - self.fall_mix) * (-t / self.tau_fall_slow).exp();
        rise * rise * fall
    }

    /// Time of the pulse maximum, ns.
    pub fn peak_time(&self) -> f64 {
        // The maximum sits on the leading edge, well before tau_fall_fast.
        let hi = self.tau_fall_fast;
        let steps = 2000;
        let mut best = 0.0;
        let mut best_v = f64::MIN;
        for i in 0..=steps {
            let t = hi * i as f64 / steps as f64;
            let v = self.raw(t);
            if v > best_v {
                best_v = v;
                best = t;
            }
        }
        // golden-section refinement around the coarse maximum
        let step = hi / steps as f64;
        let (mut a, mut b) = ((best - step).max(0.0), best + step);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if self.raw(c) > self.raw(d) {
                b = d;
            } else {
                a = c;
            }
        }
        0.5 * (a + b)
    }
}

/// A cell pulse with its peak normalization resolved.
#[derive(Debug, Clone, Copy)]
pub struct CellPulse {
    params: CellPulseParams,
    scale: f64,
}

impl CellPulse {
    pub fn new(params: CellPulseParams) -> Self {
        let peak = params.raw(params.peak_time());
        Self {
            params,
            scale: params.amplitude / peak,
        }
    }

    pub fn params(&self) -> &CellPulseParams {
        &self.params
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.scale * self.params.raw(t)
    }

    /// Closed-form integral of the pulse over [0, t], V·ns.
    pub fn integral(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let p = &self.params;
        // (1 - e^{-t/r})^2 = 1 - 2 e^{-t/r} + e^{-2t/r}; integrate each
        // product with both fall exponentials.
        let part = |tau_fall: f64| {
            let term = |rate: f64| (1.0 - (-rate * t).exp()) / rate;
            let a = 1.0 / tau_fall;
            let r = 1.0 / p.tau_rise;
            term(a) - 2.0 * term(a + r) + term(a + 2.0 * r)
        };
        self.scale
            * (p.fall_mix * part(p.tau_fall_fast) + (1.0 - p.fall_mix) * part(p.tau_fall_slow))
    }
}

/// Voltage of one fired cell `t` ns after its avalanche.
pub fn cell_pulse(t: f64, p: &CellPulseParams) -> f64 {
    CellPulse::new(*p).eval(t)
}

/// Uniform time grid: sample `i` sits at `t0 + i * dt` ns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub len: usize,
}

impl TimeGrid {
    /// Grid at `rate` samples/s spanning `[start, end]` ns. Grid points fall
    /// on integer multiples of the period, so t = 0 is always a sample.
    pub fn spanning(start: f64, end: f64, rate: f64) -> Self {
        let dt = 1e9 / rate;
        let first = (start / dt).floor() as i64;
        let last = (end / dt).ceil() as i64;
        Self {
            t0: first as f64 * dt,
            dt,
            len: (last - first + 1).max(1) as usize,
        }
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    /// Nearest grid index to `t` (may be outside the grid).
    pub fn nearest(&self, t: f64) -> i64 {
        ((t - self.t0) / self.dt).round() as i64
    }
}

/// Finely sampled analog voltage record.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalogWaveform {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl AnalogWaveform {
    pub fn zeros(grid: TimeGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len],
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * a).collect(),
        }
    }

    pub fn add_white_noise<R: Rng + ?Sized>(&mut self, rms: f64, rng: &mut R) {
        if rms <= 0.0 {
            return;
        }
        for v in &mut self.values {
            let z: f64 = rng.sample(StandardNormal);
            *v += rms * z;
        }
    }
}

/// Pre-evaluated single-cell pulse on a grid of period `dt`.
#[derive(Debug, Clone)]
pub struct PulseTemplate {
    pulse: CellPulse,
    dt: f64,
    values: Vec<f64>,
}

impl PulseTemplate {
    pub fn new(params: CellPulseParams, dt: f64, len: usize) -> Self {
        let pulse = CellPulse::new(params);
        let values = (0..len).map(|j| pulse.eval(j as f64 * dt)).collect();
        Self { pulse, dt, values }
    }

    pub fn pulse(&self) -> &CellPulse {
        &self.pulse
    }

    fn at(&self, j: usize) -> f64 {
        match self.values.get(j) {
            Some(v) => *v,
            None => self.pulse.eval(j as f64 * self.dt),
        }
    }

    /// Add `count` pulses starting at grid index `start` into `out`.
    fn add_into(&self, out: &mut [f64], start: i64, count: f64) {
        let first = start.max(0) as usize;
        for (i, v) in out.iter_mut().enumerate().skip(first) {
            *v += count * self.at((i as i64 - start) as usize);
        }
    }
}

/// Superpose one cell pulse per event on `grid`. Event times are resolved to
/// the grid period.
pub fn synthesize(
    events: &AvalancheEventList,
    p: &CellPulseParams,
    grid: TimeGrid,
) -> AnalogWaveform {
    let template = PulseTemplate::new(*p, grid.dt, 2 * grid.len);
    synthesize_with(events, &template, grid)
}

pub fn synthesize_with(
    events: &AvalancheEventList,
    template: &PulseTemplate,
    grid: TimeGrid,
) -> AnalogWaveform {
    let mut out = AnalogWaveform::zeros(grid);
    let mut starts: Vec<i64> = events.events.iter().map(|e| grid.nearest(e.time)).collect();
    starts.sort_unstable();
    let mut i = 0;
    while i < starts.len() {
        let s = starts[i];
        let mut j = i;
        while j < starts.len() && starts[j] == s {
            j += 1;
        }
        if s < grid.len as i64 {
            template.add_into(&mut out.values, s, (j - i) as f64);
        }
        i = j;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum AmplifierKind {
    FastInverting,
    SlowShaper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Inverting,
    NonInverting,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Inverting => -1.0,
            Polarity::NonInverting => 1.0,
        }
    }
}

/// How the amplifier output saturates at its rails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Saturation {
    Hard,
    /// `rail * tanh(v / rail)`.
    Smooth,
}

/// Gain of one stage of the slow shaping amplifier.
pub const SHAPER_STAGE_GAIN: f64 = 5.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AmplifierConfig {
    pub kind: AmplifierKind,
    pub gain_db: f64,
    /// Low-pass time constant of each shaper stage, ns.
    #[serde(default = "default_shaping_tau")]
    pub shaping_tau: f64,
    pub rail_voltage: f64,
    pub polarity: Polarity,
    #[serde(default = "default_saturation")]
    pub saturation: Saturation,
}

fn default_shaping_tau() -> f64 {
    41.0
}

fn default_saturation() -> Saturation {
    Saturation::Hard
}

impl AmplifierConfig {
    /// Rail of the fast amplifier; at 24 dB it clips a little above ten
    /// coincident cells of the default pulse.
    pub const FAST_RAIL: f64 = 0.35;

    pub fn fast(gain_db: f64) -> Self {
        Self {
            kind: AmplifierKind::FastInverting,
            gain_db,
            shaping_tau: default_shaping_tau(),
            rail_voltage: Self::FAST_RAIL,
            polarity: Polarity::Inverting,
            saturation: Saturation::Hard,
        }
    }

    pub fn slow() -> Self {
        Self {
            kind: AmplifierKind::SlowShaper,
            gain_db: 20.0 * (SHAPER_STAGE_GAIN * SHAPER_STAGE_GAIN).log10(),
            shaping_tau: default_shaping_tau(),
            rail_voltage: 2.0,
            polarity: Polarity::NonInverting,
            saturation: Saturation::Hard,
        }
    }

    pub fn linear_gain(&self) -> f64 {
        10f64.powf(self.gain_db / 20.0)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            AmplifierKind::FastInverting => {
                if !(1.0..=40.0).contains(&self.gain_db) {
                    return Err(Error::config(
                        "amplifier.gain_db",
                        "fast amplifier gain spans 1-40 dB",
                    ));
                }
            }
            AmplifierKind::SlowShaper => {
                if (self.gain_db - 29.6).abs() > 0.1 {
                    return Err(Error::config(
                        "amplifier.gain_db",
                        "the shaping amplifier has a fixed 29.6 dB gain (two x5.5 stages)",
                    ));
                }
                if !(self.shaping_tau > 0.0) {
                    return Err(Error::config("amplifier.shaping_tau", "must be > 0"));
                }
            }
        }
        if !(self.rail_voltage > 0.0) {
            return Err(Error::config("amplifier.rail_voltage", "must be > 0"));
        }
        Ok(())
    }

    /// Span the shaper needs to reach steady state from rest, ns.
    pub fn settling_time(&self) -> f64 {
        match self.kind {
            AmplifierKind::FastInverting => 0.0,
            AmplifierKind::SlowShaper => 8.0 * self.shaping_tau,
        }
    }

    fn saturate(&self, v: f64) -> f64 {
        let r = self.rail_voltage;
        match self.saturation {
            Saturation::Hard => v.clamp(-r, r),
            Saturation::Smooth => r * (v / r).tanh(),
        }
    }
}

fn low_pass(values: &mut [f64], dt: f64, tau: f64) {
    let a = (-dt / tau).exp();
    let mut y = 0.0;
    for v in values.iter_mut() {
        y = a * y + (1.0 - a) * *v;
        *v = y;
    }
}

pub fn amplify(w: &AnalogWaveform, cfg: &AmplifierConfig) -> AnalogWaveform {
    let mut out = w.clone();
    amplify_in_place(&mut out, cfg);
    out
}

pub fn amplify_in_place(w: &mut AnalogWaveform, cfg: &AmplifierConfig) {
    let sign = cfg.polarity.sign();
    match cfg.kind {
        AmplifierKind::FastInverting => {
            let g = sign * cfg.linear_gain();
            for v in &mut w.values {
                *v = cfg.saturate(g * *v);
            }
        }
        AmplifierKind::SlowShaper => {
            let stage_gain = 10f64.powf(cfg.gain_db / 40.0);
            for stage in 0..2 {
                low_pass(&mut w.values, w.grid.dt, cfg.shaping_tau);
                let g = if stage == 1 {
                    sign * stage_gain
                } else {
                    stage_gain
                };
                for v in &mut w.values {
                    *v = cfg.saturate(g * *v);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DigitizerConfig {
    /// Samples per second.
    pub sample_rate: f64,
    #[serde(default = "default_bits")]
    pub bits: u32,
    /// Peak-to-peak input range, V.
    pub full_scale: f64,
    pub record_samples: usize,
    pub pre_trigger_fraction: f64,
}

fn default_bits() -> u32 {
    12
}

impl DigitizerConfig {
    /// 12 bit, 2 Vpp, 250 MS/s desktop digitizer.
    pub fn dt5720() -> Self {
        Self {
            sample_rate: 250e6,
            bits: 12,
            full_scale: 2.0,
            record_samples: 128,
            pre_trigger_fraction: 0.1,
        }
    }

    /// 12 bit, 1 Vpp, 5 GS/s switched-capacitor digitizer.
    pub fn drs4() -> Self {
        Self {
            sample_rate: 5e9,
            bits: 12,
            full_scale: 1.0,
            record_samples: 1024,
            pre_trigger_fraction: 0.15,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) {
            return Err(Error::config("digitizer.sample_rate", "must be > 0"));
        }
        if !(8..=16).contains(&self.bits) {
            return Err(Error::config("digitizer.bits", "must lie in [8, 16]"));
        }
        if !(self.full_scale > 0.0) {
            return Err(Error::config("digitizer.full_scale", "must be > 0"));
        }
        if self.record_samples < 2 {
            return Err(Error::config("digitizer.record_samples", "must be >= 2"));
        }
        if !(0.0..1.0).contains(&self.pre_trigger_fraction) {
            return Err(Error::config(
                "digitizer.pre_trigger_fraction",
                "must lie in [0, 1)",
            ));
        }
        Ok(())
    }

    /// ns between samples.
    pub fn sample_period(&self) -> f64 {
        1e9 / self.sample_rate
    }

    pub fn lsb(&self) -> f64 {
        self.full_scale / (1u64 << self.bits) as f64
    }

    pub fn trigger_index(&self) -> usize {
        (self.record_samples as f64 * self.pre_trigger_fraction).floor() as usize
    }

    /// Time of the first sample relative to the trigger, ns (<= 0).
    pub fn record_start(&self) -> f64 {
        -(self.trigger_index() as f64) * self.sample_period()
    }

    /// Time of the last sample relative to the trigger, ns.
    pub fn record_end(&self) -> f64 {
        (self.record_samples - 1 - self.trigger_index()) as f64 * self.sample_period()
    }

    fn quantize(&self, v: f64) -> f64 {
        let half = 0.5 * self.full_scale;
        let q = self.lsb();
        // f64::round rounds half away from zero
        ((v.clamp(-half, half) / q).round() * q).clamp(-half, half)
    }
}

/// Digitized record of one shot.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformTrace {
    /// ns.
    pub sample_period: f64,
    /// Volts, on the quantization grid.
    pub samples: Vec<f64>,
    pub trigger_index: usize,
    /// Sign convention of the chain that produced the trace.
    pub polarity: Polarity,
}

impl WaveformTrace {
    /// Time of sample `i` relative to the trigger, ns.
    pub fn time(&self, i: usize) -> f64 {
        (i as f64 - self.trigger_index as f64) * self.sample_period
    }
}

/// Sample `w` at the digitizer rate, clamp and quantize. Each sample is the
/// mean of the analog values over one sample period centred on it, standing
/// in for the front end's anti-aliasing bandwidth. Polarity is tagged non-inverting; use [`digitize_noisy`] or set
/// the field when the chain inverts.
pub fn digitize(w: &AnalogWaveform, cfg: &DigitizerConfig) -> WaveformTrace {
    sample_and_quantize(w, cfg, |v| v, Polarity::NonInverting)
}

/// As [`digitize`], adding white Gaussian noise of `rms` volts to each sample
/// before quantization.
pub fn digitize_noisy<R: Rng + ?Sized>(
    w: &AnalogWaveform,
    cfg: &DigitizerConfig,
    rms: f64,
    polarity: Polarity,
    rng: &mut R,
) -> WaveformTrace {
    sample_and_quantize(
        w,
        cfg,
        |v| {
            if rms > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                v + rms * z
            } else {
                v
            }
        },
        polarity,
    )
}

fn sample_and_quantize(
    w: &AnalogWaveform,
    cfg: &DigitizerConfig,
    mut perturb: impl FnMut(f64) -> f64,
    polarity: Polarity,
) -> WaveformTrace {
    let period = cfg.sample_period();
    let trig = cfg.trigger_index();
    let len = w.grid.len as i64;
    let width = ((period / w.grid.dt).round() as i64).max(1);
    let samples = (0..cfg.record_samples)
        .map(|i| {
            let t = (i as f64 - trig as f64) * period;
            let first = w.grid.nearest(t) - width / 2;
            let sum: f64 = (first.max(0)..(first + width).min(len))
                .map(|j| w.values[j as usize])
                .sum();
            cfg.quantize(perturb(sum / width as f64))
        })
        .collect();
    WaveformTrace {
        sample_period: period,
        samples,
        trigger_index: trig,
        polarity,
    }
}

/// Electronic noise of the front end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// White noise at the amplifier input on the analog grid, V rms.
    pub input_rms: f64,
    /// White noise at the digitizer input, in quantization steps rms.
    pub digitizer_rms_lsb: f64,
    /// Shot-to-shot jitter of the light pulse against the sampling clock,
    /// ns rms.
    #[serde(default)]
    pub trigger_jitter: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            input_rms: 0.0,
            digitizer_rms_lsb: 0.25,
            trigger_jitter: 0.0,
        }
    }
}

impl NoiseConfig {
    pub fn silent() -> Self {
        Self {
            input_rms: 0.0,
            digitizer_rms_lsb: 0.0,
            trigger_jitter: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.input_rms >= 0.0 && self.digitizer_rms_lsb >= 0.0 && self.trigger_jitter >= 0.0) {
            return Err(Error::config("noise", "noise levels must be >= 0"));
        }
        Ok(())
    }
}

/// A full analog-to-digital chain with its pulse template cached.
#[derive(Debug, Clone)]
pub struct Chain {
    pub amplifier: AmplifierConfig,
    pub digitizer: DigitizerConfig,
    pub noise: NoiseConfig,
    template: PulseTemplate,
    grid: TimeGrid,
}

impl Chain {
    pub fn new(
        pulse: CellPulseParams,
        amplifier: AmplifierConfig,
        digitizer: DigitizerConfig,
        noise: NoiseConfig,
        oversample_rate: f64,
    ) -> Result<Self> {
        pulse.validate()?;
        amplifier.validate()?;
        digitizer.validate()?;
        noise.validate()?;
        if oversample_rate < 4.0 * digitizer.sample_rate {
            return Err(Error::config(
                "oversample_rate",
                "must be at least four times the digitizer sample rate",
            ));
        }
        let start = digitizer.record_start() - amplifier.settling_time();
        let grid = TimeGrid::spanning(start, digitizer.record_end(), oversample_rate);
        let template = PulseTemplate::new(pulse, grid.dt, 2 * grid.len);
        Ok(Self {
            amplifier,
            digitizer,
            noise,
            template,
            grid,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn pulse(&self) -> &CellPulse {
        self.template.pulse()
    }

    /// Time span before the trigger over which avalanches affect the record.
    pub fn lookback(&self) -> f64 {
        -self.grid.t0
    }

    /// Analog waveform at the amplifier output (noise included).
    pub fn analog<R: Rng + ?Sized>(
        &self,
        events: &AvalancheEventList,
        rng: &mut R,
    ) -> AnalogWaveform {
        let mut w = if self.noise.trigger_jitter > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            let shift = self.noise.trigger_jitter * z;
            let moved = AvalancheEventList {
                events: events
                    .events
                    .iter()
                    .map(|e| Avalanche {
                        time: e.time + shift,
                        ..*e
                    })
                    .collect(),
            };
            synthesize_with(&moved, &self.template, self.grid)
        } else {
            synthesize_with(events, &self.template, self.grid)
        };
        w.add_white_noise(self.noise.input_rms, rng);
        amplify_in_place(&mut w, &self.amplifier);
        w
    }

    pub fn render<R: Rng + ?Sized>(
        &self,
        events: &AvalancheEventList,
        rng: &mut R,
    ) -> WaveformTrace {
        let w = self.analog(events, rng);
        let rms = self.noise.digitizer_rms_lsb * self.digitizer.lsb();
        digitize_noisy(&w, &self.digitizer, rms, self.amplifier.polarity, rng)
    }
}

/// Append one shot to a binary waveform dump: u64 shot index, u32 sample
/// count, f64 sample period (ns), then f32 samples, all little-endian.
pub fn write_dump_record<W: Write>(
    out: &mut W,
    shot: u64,
    trace: &WaveformTrace,
) -> io::Result<()> {
    out.write_all(&shot.to_le_bytes())?;
    out.write_all(&(trace.samples.len() as u32).to_le_bytes())?;
    out.write_all(&trace.sample_period.to_le_bytes())?;
    for s in &trace.samples {
        out.write_all(&(*s as f32).to_le_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DumpRecord {
    pub shot: u64,
    pub sample_period: f64,
    pub samples: Vec<f32>,
}

/// Read every record of a waveform dump.
pub fn read_dump<R: Read>(mut input: R) -> io::Result<Vec<DumpRecord>> {
    let mut records = Vec::new();
    loop {
        let mut head = [0u8; 8];
        match input.read_exact(&mut head) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e),
        }
        let shot = u64::from_le_bytes(head);
        let mut n = [0u8; 4];
        input.read_exact(&mut n)?;
        let n = u32::from_le_bytes(n) as usize;
        let mut period = [0u8; 8];
        input.read_exact(&mut period)?;
        let mut raw = vec![0u8; 4 * n];
        input.read_exact(&mut raw)?;
        let samples = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        records.push(DumpRecord {
            shot,
            sample_period: f64::from_le_bytes(period),
            samples,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{Avalanche, Origin};

    fn events_at(times: &[f64]) -> AvalancheEventList {
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

    fn rise_time_10_90(values: &[f64], dt: f64) -> f64 {
        let (imax, vmax) =
            values.iter().enumerate().fold(
                (0, f64::MIN),
                |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
            );
        let cross = |level: f64| {
            let i = values[..=imax]
                .iter()
                .position(|&v| v >= level * vmax)
                .unwrap();
            // linear interpolation between i-1 and i
            let (a, b) = (values[i - 1], values[i]);
            (i - 1) as f64 * dt + dt * (level * vmax - a) / (b - a)
        };
        cross(0.9) - cross(0.1)
    }

    #[test]
    fn causal_and_normalized() {
        let p = CellPulseParams::default();
        assert_eq!(cell_pulse(-0.1, &p), 0.0);
        assert_eq!(cell_pulse(0.0, &p), 0.0);
        let tp = p.peak_time();
        assert!(tp < 1.0, "peak at {tp} ns");
        assert!((cell_pulse(tp, &p) - p.amplitude).abs() < 1e-12);
        assert!(cell_pulse(1000.0, &p) < 1e-3 * p.amplitude);
    }

    #[test]
    fn closed_form_integral_matches_quadrature() {
        let pulse = CellPulse::new(CellPulseParams::default());
        let dt = 1e-3;
        let mut sum = 0.0;
        for i in 0..300_000 {
            // Simpson on [t, t + dt]
            let t = i as f64 * dt;
            sum += dt / 6.0 * (pulse.eval(t) + 4.0 * pulse.eval(t + 0.5 * dt) + pulse.eval(t + dt));
        }
        let exact = pulse.integral(300.0);
        assert!((sum - exact).abs() < 1e-9 * exact, "{sum} vs {exact}");
    }

    #[test]
    fn superposition() {
        let p = CellPulseParams::default();
        let grid = TimeGrid::spanning(-10.0, 200.0, DEFAULT_OVERSAMPLE_RATE);
        let empty = synthesize(&AvalancheEventList::default(), &p, grid);
        assert!(empty.values.iter().all(|&v| v == 0.0));
        let one = synthesize(&events_at(&[0.0]), &p, grid);
        let two = synthesize(&events_at(&[0.0, 0.0]), &p, grid);
        for (a, b) in one.values.iter().zip(&two.values) {
            assert_eq!(2.0 * a, *b);
        }
        let five = synthesize(&events_at(&[0.0; 5]), &p, grid);
        let s1: f64 = one.values.iter().sum();
        let s5: f64 = five.values.iter().sum();
        assert!((s5 / s1 - 5.0).abs() < 5e-6);
    }

    #[test]
    fn shift_covariance() {
        let p = CellPulseParams::default();
        let grid = TimeGrid::spanning(-10.0, 200.0, DEFAULT_OVERSAMPLE_RATE);
        let base = synthesize(&events_at(&[0.0, 3.0]), &p, grid);
        let shift = 40usize;
        let dt = shift as f64 * grid.dt;
        let moved = synthesize(&events_at(&[dt, 3.0 + dt]), &p, grid);
        for i in shift..grid.len {
            assert!((moved.values[i] - base.values[i - shift]).abs() < 1e-15);
        }
    }

    #[test]
    fn fast_amplifier_gain_and_inversion() {
        let p = CellPulseParams::default();
        let grid = TimeGrid::spanning(-10.0, 200.0, DEFAULT_OVERSAMPLE_RATE);
        let w = synthesize(&events_at(&[0.0]), &p, grid);
        let amp = AmplifierConfig::fast(12.0);
        let zero = amplify(&AnalogWaveform::zeros(grid), &amp);
        assert!(zero.values.iter().all(|&v| v == 0.0));
        let out = amplify(&w, &amp);
        let in_peak = w.values.iter().cloned().fold(f64::MIN, f64::max);
        let out_min = out.values.iter().cloned().fold(f64::MAX, f64::min);
        assert!((out_min + 10f64.powf(0.6) * in_peak).abs() < 1e-6 * in_peak * 4.0);
    }

    #[test]
    fn fast_amplifier_clips_at_rail() {
        let grid = TimeGrid::spanning(0.0, 10.0, DEFAULT_OVERSAMPLE_RATE);
        let mut w = AnalogWaveform::zeros(grid);
        w.values.iter_mut().for_each(|v| *v = 1.0);
        let out = amplify(&w, &AmplifierConfig::fast(20.0));
        assert!(out.values.iter().all(|&v| v == -AmplifierConfig::FAST_RAIL));
    }

    #[test]
    fn linearity_below_rails() {
        let p = CellPulseParams::default();
        let grid = TimeGrid::spanning(-10.0, 300.0, DEFAULT_OVERSAMPLE_RATE);
        let w = synthesize(&events_at(&[0.0, 0.0, 12.0]), &p, grid);
        for amp in [AmplifierConfig::fast(12.0), AmplifierConfig::slow()] {
            let a = 1.7;
            let lhs = amplify(&w.scaled(a), &amp);
            let rhs = amplify(&w, &amp).scaled(a);
            for (x, y) in lhs.values.iter().zip(&rhs.values) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shaper_stretches_rising_edge_to_about_50_ns() {
        let p = CellPulseParams::default();
        let grid = TimeGrid::spanning(0.0, 600.0, DEFAULT_OVERSAMPLE_RATE);
        let w = synthesize(&events_at(&[0.0]), &p, grid);
        let raw_rise = rise_time_10_90(&w.values, grid.dt);
        assert!(raw_rise < 1.0);
        let out = amplify(&w, &AmplifierConfig::slow());
        let rise = rise_time_10_90(&out.values, grid.dt);
        assert!((rise - 50.0).abs() <= 5.0, "rise time {rise} ns");
    }

    #[test]
    fn sample_periods() {
        assert_eq!(DigitizerConfig::dt5720().sample_period(), 4.0);
        assert!((DigitizerConfig::drs4().sample_period() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn quantization_and_clamping() {
        let cfg = DigitizerConfig {
            sample_rate: 1e9,
            bits: 12,
            full_scale: 2.0,
            record_samples: 16,
            pre_trigger_fraction: 0.25,
        };
        let grid = TimeGrid::spanning(cfg.record_start(), cfg.record_end(), 4e9);
        let mut w = AnalogWaveform::zeros(grid);
        w.values.iter_mut().for_each(|v| *v = 3.0);
        let tr = digitize(&w, &cfg);
        assert!(tr.samples.iter().all(|&s| s == 1.0));

        let q = cfg.lsb();
        assert_eq!(q, 2.0 / 4096.0);
        for (i, v) in w.values.iter_mut().enumerate() {
            *v = -0.9 + 1.8 * i as f64 / grid.len as f64;
        }
        let tr = digitize(&w, &cfg);
        for (i, s) in tr.samples.iter().enumerate() {
            // four analog points per sample period
            let j = grid.nearest(tr.time(i)) as usize;
            if j < 2 || j + 2 > grid.len {
                continue;
            }
            let mean = w.values[j - 2..j + 2].iter().sum::<f64>() / 4.0;
            assert!((s - mean).abs() <= 0.5 * q + 1e-15);
            assert!(((s / q).round() - s / q).abs() < 1e-9);
        }
    }

    #[test]
    fn undersampling_loses_the_fast_peak() {
        let p = CellPulseParams::default();
        let amp = AmplifierConfig::fast(12.0);
        let peak = |dig: DigitizerConfig| {
            let chain =
                Chain::new(p, amp, dig, NoiseConfig::silent(), DEFAULT_OVERSAMPLE_RATE).unwrap();
            let mut r = crate::rng::stream(0, 0, 0, 0);
            let tr = chain.render(&events_at(&[0.0]), &mut r);
            tr.samples.iter().map(|v| -v).fold(f64::MIN, f64::max)
        };
        let slow = peak(DigitizerConfig::dt5720());
        let fast = peak(DigitizerConfig::drs4());
        assert!(slow < fast, "{slow} vs {fast}");
    }

    #[test]
    fn dump_round_trip() {
        let tr = WaveformTrace {
            sample_period: 0.2,
            samples: vec![0.0, -0.25, 0.5],
            trigger_index: 1,
            polarity: Polarity::Inverting,
        };
        let mut buf = Vec::new();
        write_dump_record(&mut buf, 42, &tr).unwrap();
        write_dump_record(&mut buf, 43, &tr).unwrap();
        assert_eq!(buf.len(), 2 * (8 + 4 + 8 + 3 * 4));
        assert_eq!(&buf[..8], &42u64.to_le_bytes());
        let recs = read_dump(&buf[..]).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].shot, 43);
        assert_eq!(recs[0].samples, vec![0.0f32, -0.25, 0.5]);
        assert_eq!(recs[0].sample_period, 0.2);
    }
}
