//! Experiment configuration, presets and the runs behind the command-line
//! tool. Every run writes its artifacts plus a `manifest.json` into the
//! output directory.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::correlation::{fit_model, FitReport, FitSpec, NrfCurve, NrfOptions, VarianceConvention};
use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::extraction::{write_shot_records, ExtractionConfig, ExtractionMethod, ShotRecord};
use crate::photon::{BeamSplitterSpec, LightStateSpec};
use crate::rng;
use crate::sim::{
    reference_response, simulate_r_curve, simulate_single_arm, CalibrationMode, CurveOptions,
    Readout, SweepAxis, TwoArmSetup,
};
use crate::spectrum::{
    analyze, calibrate, linearity_check, PeakFinder, PulseHeightSpectrum, SpectrumOptions,
};
use crate::waveform::{
    write_dump_record, AmplifierConfig, CellPulseParams, Chain, DigitizerConfig, NoiseConfig,
    WaveformTrace, DEFAULT_OVERSAMPLE_RATE,
};

const PSAU_DT5720: &str = r#"
[amplifier]
kind = "fast_inverting"
gain_db = 12.0
rail_voltage = 0.35
polarity = "inverting"

[digitizer]
sample_rate = 250e6
full_scale = 2.0
record_samples = 128
pre_trigger_fraction = 0.25

[noise]
input_rms = 2.0e-3
digitizer_rms_lsb = 0.25
trigger_jitter = 0.2

[extraction]
method = "gated_integral"
tau = 48.0
baseline_window = [-28.0, -4.0]
"#;

const PSAU_DRS4: &str = r#"
[amplifier]
kind = "fast_inverting"
gain_db = 12.0
rail_voltage = 0.35
polarity = "inverting"

[digitizer]
sample_rate = 5e9
full_scale = 1.0
record_samples = 1024
pre_trigger_fraction = 0.15

[noise]
input_rms = 2.0e-3
digitizer_rms_lsb = 0.25
trigger_jitter = 0.2

[extraction]
method = "gated_integral"
tau = 70.0
"#;

const PSAU_DRS4_24DB: &str = r#"
[amplifier]
kind = "fast_inverting"
gain_db = 24.0
rail_voltage = 0.33
polarity = "inverting"

[digitizer]
sample_rate = 5e9
full_scale = 1.0
record_samples = 1024
pre_trigger_fraction = 0.15

[noise]
input_rms = 2.0e-3
digitizer_rms_lsb = 0.25
trigger_jitter = 0.2

[extraction]
method = "gated_integral"
tau = 70.0
"#;

const SLOW_DRS4: &str = r#"
[amplifier]
kind = "slow_shaper"
gain_db = 29.6
rail_voltage = 2.0
polarity = "non_inverting"

[digitizer]
sample_rate = 5e9
full_scale = 1.0
record_samples = 1024
pre_trigger_fraction = 0.15

[noise]
input_rms = 1.0e-3
digitizer_rms_lsb = 3.0

[extraction]
method = "peak_value"
search_window = 160.0
"#;

/// Shipped chain presets: amplifier, digitizer, noise and extraction.
pub const PRESETS: [(&str, &str); 4] = [
    ("psau_dt5720", PSAU_DT5720),
    ("psau_drs4", PSAU_DRS4),
    ("psau_drs4_24db", PSAU_DRS4_24DB),
    ("slow_drs4", SLOW_DRS4),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

fn default_shots() -> usize {
    10_000
}

fn default_splitter() -> BeamSplitterSpec {
    BeamSplitterSpec::balanced()
}

fn default_oversample_rate() -> f64 {
    DEFAULT_OVERSAMPLE_RATE
}

fn default_outputs() -> PathBuf {
    PathBuf::from("out")
}

fn default_state() -> LightStateSpec {
    LightStateSpec {
        kind: crate::photon::LightKind::Coherent,
        mean_photons: 10.0,
        modes: 1,
    }
}

/// Pulse-height-spectrum settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct PhsSection {
    /// Extraction methods applied to the same traces; empty means the one
    /// in `[extraction]`.
    pub methods: Vec<ExtractionMethod>,
    pub bins_per_gamma: f64,
    pub bootstrap_resamples: usize,
    pub smoothing: usize,
    pub min_prominence: f64,
    pub linearity_tolerance: f64,
    /// Also write per-shot outputs as JSON lines.
    pub write_shots: bool,
}

impl Default for PhsSection {
    fn default() -> Self {
        Self {
            methods: Vec::new(),
            bins_per_gamma: 25.0,
            bootstrap_resamples: 200,
            smoothing: 3,
            min_prominence: 0.01,
            linearity_tolerance: 0.10,
            write_shots: false,
        }
    }
}

/// Noise-reduction-factor settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct NrfSection {
    pub variance: VarianceConvention,
    pub bootstrap_resamples: usize,
    pub calibration: CalibrationMode,
    /// Round calibrated outputs to whole photons.
    pub round: bool,
    /// Fit the model to the simulated curve when present.
    pub fit: Option<FitSpec>,
}

impl Default for NrfSection {
    fn default() -> Self {
        Self {
            variance: VarianceConvention::Unbiased,
            bootstrap_resamples: 500,
            calibration: CalibrationMode::Spectrum,
            round: true,
            fit: None,
        }
    }
}

/// Count-level shortcut settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct FastpathSection {
    /// Counting window standing in for peak extraction, ns.
    pub peak_window: f64,
}

impl Default for FastpathSection {
    fn default() -> Self {
        Self { peak_window: 1.0 }
    }
}

/// A complete experiment description.
///
/// For waveform runs the detectors' `pre_trigger` and `record_window` are
/// replaced by the span the chain actually renders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_shots")]
    pub shots: usize,
    #[serde(default = "default_state")]
    pub state: LightStateSpec,
    /// Ignored when the state is a twin beam.
    #[serde(default = "default_splitter")]
    pub splitter: BeamSplitterSpec,
    #[serde(default)]
    pub detector1: DetectorConfig,
    #[serde(default)]
    pub detector2: DetectorConfig,
    #[serde(default)]
    pub pulse: CellPulseParams,
    pub amplifier: AmplifierConfig,
    pub digitizer: DigitizerConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    /// Rate of the analog simulation grid, samples/s.
    #[serde(default = "default_oversample_rate")]
    pub oversample_rate: f64,
    pub extraction: ExtractionConfig,
    /// Sweep of mean values for curve runs; see `sweep_axis`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<f64>>,
    #[serde(default)]
    pub sweep_axis: SweepAxis,
    #[serde(default = "default_outputs")]
    pub outputs: PathBuf,
    #[serde(default)]
    pub phs: PhsSection,
    #[serde(default)]
    pub nrf: NrfSection,
    #[serde(default)]
    pub fastpath: FastpathSection,
}

/// Command-line values that take precedence over the file and preset.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub shots: Option<usize>,
    pub outputs: Option<PathBuf>,
}

/// Overlay `top` on `base`. A table naming an extraction `method` replaces
/// the old one wholesale, since the fields depend on the method.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) if !t.contains_key("method") => {
                merge(b, t)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_table(text: &str, origin: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>()
        .map_err(|e| Error::Toml(format!("{origin}: {e}")))
}

/// Resolve a configuration from an optional preset, an optional TOML file
/// and command-line overrides, in increasing precedence. A file may name
/// its own preset with a top-level `preset` key.
pub fn load_config(
    preset_name: Option<&str>,
    file: Option<&Path>,
    overrides: &Overrides,
) -> Result<ExperimentConfig> {
    let mut user = match file {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| {
                Error::config("config", format!("cannot read {}: {e}", p.display()))
            })?;
            parse_table(&text, &p.display().to_string())?
        }
        None => toml::Table::new(),
    };
    let file_preset = match user.remove("preset") {
        Some(toml::Value::String(s)) => Some(s),
        Some(_) => return Err(Error::config("preset", "must be a string")),
        None => None,
    };
    let mut table = toml::Table::new();
    if let Some(name) = preset_name.map(str::to_string).or(file_preset) {
        let text = preset(&name).ok_or_else(|| {
            Error::config(
                "preset",
                format!(
                    "unknown preset `{name}`; known: {}",
                    preset_names().join(", ")
                ),
            )
        })?;
        table = parse_table(text, &name)?;
    }
    merge(&mut table, user);
    if let Some(seed) = overrides.seed {
        table.insert("seed".into(), toml::Value::Integer(seed as i64));
    }
    if let Some(shots) = overrides.shots {
        table.insert("shots".into(), toml::Value::Integer(shots as i64));
    }
    if let Some(out) = &overrides.outputs {
        table.insert(
            "outputs".into(),
            toml::Value::String(out.display().to_string()),
        );
    }
    let cfg = config_from_table(table)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parse a configuration document without presets or overrides.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg = config_from_table(parse_table(text, "config")?)?;
    cfg.validate()?;
    Ok(cfg)
}

fn config_from_table(table: toml::Table) -> Result<ExperimentConfig> {
    serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." {
            "config".to_string()
        } else {
            path
        };
        Error::Config {
            field,
            reason: e.into_inner().to_string(),
        }
    })
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(Error::config("shots", "must be >= 1"));
        }
        self.state.validate()?;
        self.splitter.validate()?;
        self.detector1.validate("detector1")?;
        self.detector2.validate("detector2")?;
        self.extraction.validate()?;
        for m in &self.phs.methods {
            ExtractionConfig {
                method: *m,
                baseline_window: self.extraction.baseline_window,
            }
            .validate()?;
        }
        if let Some(sweep) = &self.sweep {
            if sweep.is_empty() {
                return Err(Error::config("sweep", "must list at least one value"));
            }
            if sweep.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::config("sweep", "values must be > 0"));
            }
            if sweep.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::config("sweep", "values must be strictly increasing"));
            }
        }
        if !(self.phs.bins_per_gamma >= 2.0) {
            return Err(Error::config("phs.bins_per_gamma", "must be >= 2"));
        }
        if !(0.0..1.0).contains(&self.phs.linearity_tolerance) {
            return Err(Error::config(
                "phs.linearity_tolerance",
                "must lie in [0, 1)",
            ));
        }
        if !(self.fastpath.peak_window > 0.0) {
            return Err(Error::config("fastpath.peak_window", "must be > 0"));
        }
        if let Some(fit) = &self.nrf.fit {
            fit.validate()?;
        }
        self.chain().map(|_| ())
    }

    pub fn chain(&self) -> Result<Chain> {
        Chain::new(
            self.pulse,
            self.amplifier,
            self.digitizer,
            self.noise,
            self.oversample_rate,
        )
    }

    /// Detector with its dark-count span matched to what `chain` renders.
    fn timed_detector(&self, det: &DetectorConfig, chain: &Chain) -> DetectorConfig {
        DetectorConfig {
            pre_trigger: chain.lookback(),
            record_window: self.digitizer.record_end(),
            ..*det
        }
    }

    fn two_arm_setup(&self, chain: Option<&Chain>) -> TwoArmSetup {
        let (det1, det2) = match chain {
            Some(c) => (
                self.timed_detector(&self.detector1, c),
                self.timed_detector(&self.detector2, c),
            ),
            None => (self.detector1, self.detector2),
        };
        TwoArmSetup {
            state: self.state,
            splitter: self.splitter,
            det1,
            det2,
        }
    }

    fn phs_methods(&self) -> Vec<ExtractionConfig> {
        let methods = if self.phs.methods.is_empty() {
            vec![self.extraction.method]
        } else {
            self.phs.methods.clone()
        };
        methods
            .into_iter()
            .map(|method| ExtractionConfig {
                method,
                baseline_window: self.extraction.baseline_window,
            })
            .collect()
    }

    fn curve_options(&self) -> CurveOptions {
        let (sweep, axis) = match &self.sweep {
            Some(s) => (s.clone(), self.sweep_axis),
            None => (vec![self.state.mean_photons], SweepAxis::Photons),
        };
        CurveOptions {
            sweep,
            axis,
            shots_per_point: self.shots,
            seed: self.seed,
            nrf: NrfOptions {
                variance: self.nrf.variance,
                bootstrap_resamples: self.nrf.bootstrap_resamples,
                seed: self.seed,
                group: 0,
            },
        }
    }

    /// TOML text that parses back to this configuration.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Toml(e.to_string()))
    }
}

/// Reproducibility record written once at the end of every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub timestamp: String,
    pub seed: u64,
    /// The resolved configuration, as TOML.
    pub config: String,
    /// SHA-256 of every output file, keyed by file name.
    pub outputs: BTreeMap<String, String>,
}

/// What a run produced and whether the analysis hit a soft failure.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub notices: Vec<String>,
    pub degenerate: bool,
    pub fit_failed: Option<String>,
}

struct Outputs {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    fn write(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
    ) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        drop(w);
        let digest = Sha256::digest(fs::read(&path)?);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.files.insert(name.to_string(), hex);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    fn finish(self, command: &str, seed: u64, config: String) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            seed,
            config,
            outputs: self.files,
        };
        let mut w = BufWriter::new(File::create(self.dir.join("manifest.json"))?);
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        writeln!(w)?;
        w.flush()?;
        Ok(manifest)
    }
}

/// Per-method summary written next to each spectrum CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub method: ExtractionMethod,
    pub shots: usize,
    pub reference_gamma: f64,
    pub peaks: Vec<crate::spectrum::Extremum>,
    pub valleys: Vec<crate::spectrum::Extremum>,
    pub gamma_series: Vec<f64>,
    pub gamma_bar: Option<f64>,
    pub zero_position: Option<f64>,
    pub visibility: Option<f64>,
    pub visibility_err: Option<f64>,
    /// 1-based index of the first gain drop beyond tolerance.
    pub saturation_knee: Option<usize>,
    pub degenerate: bool,
}

fn spectrum_options(cfg: &ExperimentConfig, reference_gamma: f64) -> SpectrumOptions {
    SpectrumOptions {
        reference_gamma: Some(reference_gamma),
        bins_per_gamma: cfg.phs.bins_per_gamma,
        finder: PeakFinder {
            smoothing: cfg.phs.smoothing,
            min_prominence: cfg.phs.min_prominence,
            min_separation: 0.0,
        },
        bootstrap_resamples: cfg.phs.bootstrap_resamples,
        seed: cfg.seed,
    }
}

/// Spectra of one arm for every configured extraction method.
pub fn phs_spectra(
    cfg: &ExperimentConfig,
) -> Result<Vec<(SpectrumSummary, PulseHeightSpectrum, Vec<f64>)>> {
    let chain = cfg.chain()?;
    let det = cfg.timed_detector(&cfg.detector1, &chain);
    let methods = cfg.phs_methods();
    let xs = simulate_single_arm(&cfg.state, &det, &chain, &methods, cfg.shots, cfg.seed)?;
    let mut out = Vec::with_capacity(methods.len());
    for (m, x) in methods.iter().zip(xs) {
        let gamma_ref = reference_response(&chain, m)?;
        let phs = analyze(&x, &spectrum_options(cfg, gamma_ref))?;
        let summary = SpectrumSummary {
            method: m.method,
            shots: x.len(),
            reference_gamma: gamma_ref,
            peaks: phs.peaks.clone(),
            valleys: phs.valleys.clone(),
            gamma_series: phs.gamma_series.clone(),
            gamma_bar: phs.gamma_bar,
            zero_position: phs.zero_position,
            visibility: phs.visibility,
            visibility_err: phs.visibility_err,
            saturation_knee: linearity_check(&phs.gamma_series, cfg.phs.linearity_tolerance),
            degenerate: phs.is_degenerate(),
        };
        out.push((summary, phs, x));
    }
    Ok(out)
}

/// Simulate one arm through the full chain and write a spectrum CSV and
/// summary JSON per extraction method.
pub fn run_phs(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let spectra = phs_spectra(cfg)?;
    let mut out = Outputs::new(&cfg.outputs)?;
    let mut notices = Vec::new();
    let mut degenerate = false;
    for (i, (summary, phs, x)) in spectra.iter().enumerate() {
        let label = summary.method.label();
        out.write(&format!("spectrum_{label}.csv"), |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["bin_center", "count"])?;
            for (b, n) in phs.histogram.counts.iter().enumerate() {
                c.write_record([format!("{}", phs.histogram.bin_center(b)), n.to_string()])?;
            }
            c.flush()?;
            Ok(())
        })?;
        out.write_json(&format!("spectrum_{label}.json"), summary)?;
        if summary.degenerate {
            degenerate = true;
            notices.push(format!(
                "{label}: fewer than two peaks resolved, visibility and gain are undefined"
            ));
        }
        if let Some(knee) = summary.saturation_knee {
            notices.push(format!("{label}: peak spacing drops at peak {knee}"));
        }
        if cfg.phs.write_shots && i == 0 {
            let (g, z) = match (summary.gamma_bar, summary.zero_position) {
                (Some(g), Some(z)) => (g, z),
                _ => (summary.reference_gamma, 0.0),
            };
            let k = calibrate(x, g, z, true)?;
            let recs: Vec<ShotRecord> = x
                .iter()
                .zip(&k)
                .enumerate()
                .map(|(s, (&x_out1, &k1))| ShotRecord {
                    shot: s as u64,
                    x_out1,
                    x_out2: None,
                    k1: Some(k1),
                    k2: None,
                })
                .collect();
            out.write("shots.jsonl", |w| write_shot_records(w, &recs))?;
        }
    }
    let manifest = out.finish("phs", cfg.seed, cfg.to_toml()?)?;
    Ok(RunOutcome {
        manifest,
        notices,
        degenerate,
        fit_failed: None,
    })
}

fn write_curve_and_fit(
    cfg: &ExperimentConfig,
    command: &str,
    curve: &NrfCurve,
    extra: impl FnOnce(&mut Outputs) -> Result<()>,
) -> Result<RunOutcome> {
    let mut out = Outputs::new(&cfg.outputs)?;
    out.write("nrf_curve.csv", |w| curve.write_csv(w))?;
    extra(&mut out)?;
    let mut notices = Vec::new();
    let mut fit_failed = None;
    if let Some(spec) = &cfg.nrf.fit {
        let (report, failure) = fit_outcome(curve, spec)?;
        if let Some(r) = &report {
            out.write_json("fit_report.json", r)?;
        }
        if let Some(f) = failure {
            notices.push(format!("fit failed: {f}"));
            fit_failed = Some(f);
        }
    }
    let manifest = out.finish(command, cfg.seed, cfg.to_toml()?)?;
    Ok(RunOutcome {
        manifest,
        notices,
        degenerate: false,
        fit_failed,
    })
}

/// Fit report (best attempt when the fit failed) and the failure reason.
fn fit_outcome(curve: &NrfCurve, spec: &FitSpec) -> Result<(Option<FitReport>, Option<String>)> {
    match fit_model(curve, spec) {
        Ok(r) => Ok((Some(r), None)),
        Err(Error::FitFailed { reason, best }) => Ok((best.map(|b| *b), Some(reason))),
        Err(e) => Err(e),
    }
}

/// Two-arm curve through the full chain.
pub fn nrf_curve(cfg: &ExperimentConfig) -> Result<NrfCurve> {
    let chain = cfg.chain()?;
    let setup = cfg.two_arm_setup(Some(&chain));
    let readout = Readout::Waveform {
        chain: &chain,
        extraction: &cfg.extraction,
        calibration: cfg.nrf.calibration,
        round: cfg.nrf.round,
        semantics: cfg
            .extraction
            .method
            .count_semantics(cfg.fastpath.peak_window),
    };
    simulate_r_curve(&setup, &readout, &cfg.curve_options())
}

/// Two-arm curve from avalanche counts, skipping waveform synthesis.
pub fn fastpath_curve(cfg: &ExperimentConfig) -> Result<NrfCurve> {
    let setup = cfg.two_arm_setup(None);
    let (gate, mode) = cfg
        .extraction
        .method
        .count_semantics(cfg.fastpath.peak_window);
    let readout = Readout::Counts { gate, mode };
    simulate_r_curve(&setup, &readout, &cfg.curve_options())
}

pub fn run_nrf(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let curve = nrf_curve(cfg)?;
    write_curve_and_fit(cfg, "nrf", &curve, |_| Ok(()))
}

pub fn run_fastpath(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let curve = fastpath_curve(cfg)?;
    write_curve_and_fit(cfg, "fastpath", &curve, |_| Ok(()))
}

/// Fit an externally measured curve.
pub fn run_fit(curve: &NrfCurve, spec: &FitSpec, outputs: &Path) -> Result<RunOutcome> {
    let (report, failure) = fit_outcome(curve, spec)?;
    let mut out = Outputs::new(outputs)?;
    if let Some(r) = &report {
        out.write_json("fit_report.json", r)?;
    }
    let config = toml::to_string(spec).map_err(|e| Error::Toml(e.to_string()))?;
    let manifest = out.finish("fit", spec.seed, config)?;
    Ok(RunOutcome {
        manifest,
        notices: failure.iter().map(|f| format!("fit failed: {f}")).collect(),
        degenerate: false,
        fit_failed: failure,
    })
}

/// Digitized arm-1 traces of the first `shots` shots.
pub fn render_traces(cfg: &ExperimentConfig, shots: usize) -> Result<Vec<WaveformTrace>> {
    let chain = cfg.chain()?;
    let det = cfg.timed_detector(&cfg.detector1, &chain);
    Ok(rng::map_indexed(shots, |i| {
        let mut r = rng::stream(cfg.seed, rng::domain::SHOTS, 0, i as u64);
        let n = crate::photon::sample_photons(&cfg.state, &mut r);
        let ev = crate::detector::detect(n, &det, &mut r);
        chain.render(&ev, &mut r)
    }))
}

/// Render arm-1 traces and write them in the binary dump format.
pub fn run_dump_waveforms(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let traces = render_traces(cfg, cfg.shots)?;
    let mut out = Outputs::new(&cfg.outputs)?;
    out.write("waveforms.bin", |w| {
        for (i, t) in traces.iter().enumerate() {
            write_dump_record(w, i as u64, t)?;
        }
        Ok(())
    })?;
    let manifest = out.finish("dump-waveforms", cfg.seed, cfg.to_toml()?)?;
    Ok(RunOutcome {
        manifest,
        notices: Vec::new(),
        degenerate: false,
        fit_failed: None,
    })
}

/// JSON schema of the configuration file.
pub fn config_schema() -> serde_json::Value {
    serde_json::to_value(schemars::schema_for!(ExperimentConfig)).expect("schema serializes")
}
