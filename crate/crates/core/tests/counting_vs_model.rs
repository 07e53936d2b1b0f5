//! Count-level Monte Carlo against the analytic mean output and the analytic
//! noise reduction factor.

use sipm_core::correlation::{model_r_general, NrfModelParams, NrfOptions};
use sipm_core::detector::{
    count_in_gate, detect, mean_dark_counts, mean_k, CountMode, DetectorConfig,
};
use sipm_core::photon::{sample_photons, BeamSplitterSpec, LightStateSpec};
use sipm_core::rng;
use sipm_core::sim::{simulate_r_curve, CurveOptions, Readout, SweepAxis, TwoArmSetup};

#[test]
fn simulated_mean_output_matches_analytic_mean() {
    let det = DetectorConfig {
        eta: 0.4,
        dark_rate: 2.0e6,
        eps_prompt: 0.03,
        eps_delayed: 0.02,
        ct_delay_tau: 20.0,
        ..DetectorConfig::default()
    };
    let gate = 110.0;
    let state = LightStateSpec::coherent(12.0).unwrap();
    let n = 200_000;
    let total: u64 = (0..n)
        .map(|i| {
            let mut r = rng::stream(31, 0, 0, i);
            count_in_gate(&detect(sample_photons(&state, &mut r), &det, &mut r), gate)
        })
        .sum();
    let m = total as f64 / n as f64;
    let expect = mean_k(12.0, &det, gate, CountMode::Integral).unwrap();
    // Fano factor of the output stays below 1.2 for these settings
    let se = (1.2 * expect / n as f64).sqrt();
    // dark counts late in the gate lose part of their delayed cross-talk
    let late_loss = mean_dark_counts(det.dark_rate, gate) * det.eps_delayed;
    assert!((m - expect).abs() < 4.0 * se + late_loss, "{m} vs {expect}");
}

fn opts(sweep: Vec<f64>, seed: u64) -> CurveOptions {
    CurveOptions {
        sweep,
        axis: SweepAxis::Photons,
        shots_per_point: 200_000,
        seed,
        nrf: NrfOptions {
            seed,
            bootstrap_resamples: 200,
            ..NrfOptions::default()
        },
    }
}

fn check_against_model(
    setup: &TwoArmSetup,
    base: NrfModelParams,
    gate: f64,
    sweep: Vec<f64>,
    seed: u64,
) {
    let curve = simulate_r_curve(
        setup,
        &Readout::Counts {
            gate,
            mode: CountMode::Integral,
        },
        &opts(sweep, seed),
    )
    .unwrap();
    for p in &curve.points {
        let expect = model_r_general(&base, p.mean_k1, p.mean_k2).unwrap();
        assert!(
            (p.r - expect).abs() < 4.0 * p.sigma_r,
            "<k1> = {:.2}: R = {:.4} +- {:.4}, model {expect:.4}",
            p.mean_k1,
            p.r,
            p.sigma_r
        );
    }
}

#[test]
fn classical_light_with_crosstalk_dark_counts_and_imbalance() {
    let gate = 110.0;
    let det = |eta: f64, dark: f64| DetectorConfig {
        eta,
        dark_rate: dark,
        eps_prompt: 0.04,
        eps_delayed: 0.0,
        ..DetectorConfig::ideal()
    };
    let setup = TwoArmSetup {
        state: LightStateSpec::thermal(1.0).unwrap(),
        splitter: BeamSplitterSpec::balanced(),
        det1: det(0.3, 2.0e6),
        det2: det(0.25, 5.0e6),
    };
    let model = NrfModelParams {
        mu: 1.0,
        eps1: 0.04,
        eps2: 0.04,
        m1dc: mean_dark_counts(2.0e6, gate),
        m2dc: mean_dark_counts(5.0e6, gate),
        quantum: false,
        ..NrfModelParams::default()
    };
    check_against_model(&setup, model, gate, vec![4.0, 15.0, 40.0], 32);
}

#[test]
fn twin_beam_with_crosstalk_and_dark_counts() {
    let gate = 110.0;
    let det = DetectorConfig {
        eta: 0.3,
        dark_rate: 3.0e6,
        eps_prompt: 0.02,
        eps_delayed: 0.0,
        ..DetectorConfig::ideal()
    };
    let setup = TwoArmSetup {
        state: LightStateSpec::twin_beam(1.0, 50).unwrap(),
        splitter: BeamSplitterSpec::balanced(),
        det1: det,
        det2: det,
    };
    let m = mean_dark_counts(3.0e6, gate);
    let model = NrfModelParams {
        mu: 50.0,
        eta1: 0.3,
        eta2: 0.3,
        eps1: 0.02,
        eps2: 0.02,
        m1dc: m,
        m2dc: m,
        t: 1.0,
        quantum: true,
    };
    check_against_model(&setup, model, gate, vec![3.0, 10.0, 30.0], 33);
}
