//! Pulse-height spectra: histogramming, photon-peak search, gain estimate,
//! calibration to detected photons, visibility and gain-linearity checks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, domain};

/// Uniform-width histogram; bin `i` covers `[origin + i*w, origin + (i+1)*w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub origin: f64,
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(origin: f64, bin_width: f64, bins: usize) -> Self {
        Self {
            origin,
            bin_width,
            counts: vec![0; bins],
        }
    }

    /// Add `x`; values outside the range land in the edge bins.
    pub fn fill(&mut self, x: f64) {
        let last = self.counts.len() - 1;
        let i = ((x - self.origin) / self.bin_width).floor();
        let i = if i < 0.0 { 0 } else { (i as usize).min(last) };
        self.counts[i] += 1;
    }

    /// Add the counts of a histogram with identical binning.
    pub fn merge(&mut self, other: &Histogram) -> Result<()> {
        if other.counts.len() != self.counts.len()
            || other.origin != self.origin
            || other.bin_width != self.bin_width
        {
            return Err(Error::invalid(
                "cannot merge histograms with different binning",
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.origin + (i as f64 + 0.5) * self.bin_width
    }

    pub fn bin_edges(&self) -> Vec<f64> {
        (0..=self.counts.len())
            .map(|i| self.origin + i as f64 * self.bin_width)
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn empty_like(&self) -> Self {
        Self::new(self.origin, self.bin_width, self.counts.len())
    }
}

/// Histogram of `x` with bins of `bin_width` covering `[min, max]`.
pub fn build_phs(x: &[f64], bin_width: f64) -> Result<Histogram> {
    if x.is_empty() {
        return Err(Error::invalid("cannot build a spectrum from no samples"));
    }
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::invalid(format!(
            "bin width must be > 0, got {bin_width}"
        )));
    }
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::invalid("spectrum samples must be finite"));
    }
    let bins = ((hi - lo) / bin_width).floor() as usize + 1;
    let mut h = Histogram::new(lo, bin_width, bins);
    for &v in x {
        h.fill(v);
    }
    Ok(h)
}

/// A peak or valley of the smoothed spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extremum {
    pub position: f64,
    pub height: f64,
    pub bin: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PeakSet {
    pub peaks: Vec<Extremum>,
    /// `valleys[i]` lies between `peaks[i]` and `peaks[i + 1]`.
    pub valleys: Vec<Extremum>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakFinder {
    /// Moving-average width in bins.
    pub smoothing: usize,
    /// Minimum prominence as a fraction of the tallest smoothed bin.
    pub min_prominence: f64,
    /// Peaks closer than this (in x units) are merged into the taller one.
    pub min_separation: f64,
}

impl Default for PeakFinder {
    fn default() -> Self {
        Self {
            smoothing: 3,
            min_prominence: 0.01,
            min_separation: 0.0,
        }
    }
}

fn smooth(counts: &[u64], width: usize) -> Vec<f64> {
    let half = width / 2;
    let n = counts.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            counts[lo..hi].iter().sum::<u64>() as f64 / (hi - lo) as f64
        })
        .collect()
}

/// Sub-bin offset of the peak at bin `p`: least-squares parabola through
/// the raw counts of the part of the peak above half its height over the
/// neighbouring valleys.
fn refine_peak(
    counts: &[u64],
    s: &[f64],
    p: usize,
    left: Option<usize>,
    right: Option<usize>,
) -> f64 {
    let n = s.len();
    let floor = match (left, right) {
        (Some(l), Some(r)) => s[l].max(s[r]),
        (Some(v), None) | (None, Some(v)) => s[v],
        (None, None) => 0.0,
    };
    let cut = 0.5 * (s[p] + floor);
    let mut lo = p;
    while lo > left.unwrap_or(0) && s[lo - 1] >= cut {
        lo -= 1;
    }
    let mut hi = p;
    while hi + 1 < right.unwrap_or(n) && s[hi + 1] >= cut {
        hi += 1;
    }
    if hi - lo < 2 {
        if p == 0 || p + 1 >= n {
            return 0.0;
        }
        let denom = s[p - 1] - 2.0 * s[p] + s[p + 1];
        return if denom < 0.0 {
            (0.5 * (s[p - 1] - s[p + 1]) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        };
    }
    // normal equations for y = a + b u + c u^2, u = k - p
    let mut m = [[0.0f64; 3]; 3];
    let mut v = [0.0f64; 3];
    for (k, &y) in counts.iter().enumerate().take(hi + 1).skip(lo) {
        let u = k as f64 - p as f64;
        let y = y as f64;
        let pw = [1.0, u, u * u];
        for r in 0..3 {
            v[r] += pw[r] * y;
            for c in 0..3 {
                m[r][c] += pw[r] * pw[c];
            }
        }
    }
    let det3 = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det3(&m);
    let span = (lo as f64 - p as f64, hi as f64 - p as f64);
    let centroid = || {
        let (mut w, mut wu) = (0.0, 0.0);
        for (k, &c) in counts.iter().enumerate().take(hi + 1).skip(lo) {
            w += c as f64;
            wu += c as f64 * (k as f64 - p as f64);
        }
        if w > 0.0 {
            wu / w
        } else {
            0.0
        }
    };
    if d.abs() < 1e-12 {
        return centroid();
    }
    let solve = |col: usize| {
        let mut mm = m;
        for r in 0..3 {
            mm[r][col] = v[r];
        }
        det3(&mm) / d
    };
    let (b, c) = (solve(1), solve(2));
    if c < 0.0 {
        let x = -b / (2.0 * c);
        if x >= span.0 && x <= span.1 {
            return x;
        }
    }
    centroid()
}

impl PeakFinder {
    /// Peaks and the valleys between them; may return fewer than two peaks.
    pub fn extrema(&self, hist: &Histogram) -> PeakSet {
        let s = smooth(&hist.counts, self.smoothing.max(1));
        let n = s.len();
        let top = s.iter().cloned().fold(0.0, f64::max);
        if top <= 0.0 {
            return PeakSet::default();
        }
        let threshold = self.min_prominence * top;

        // local maxima, plateaus reduced to their middle bin
        let mut candidates = Vec::new();
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && s[j + 1] == s[i] {
                j += 1;
            }
            let left_lower = i == 0 || s[i - 1] < s[i];
            let right_lower = j + 1 == n || s[j + 1] < s[i];
            if left_lower && right_lower && s[i] > 0.0 {
                candidates.push((i + j) / 2);
            }
            i = j + 1;
        }

        let prominence = |p: usize| {
            let h = s[p];
            let mut left_min = h;
            let mut k = p;
            loop {
                if k == 0 {
                    left_min = 0.0;
                    break;
                }
                k -= 1;
                if s[k] > h {
                    break;
                }
                left_min = left_min.min(s[k]);
            }
            let mut right_min = h;
            let mut k = p;
            loop {
                if k + 1 == n {
                    right_min = 0.0;
                    break;
                }
                k += 1;
                if s[k] > h {
                    break;
                }
                right_min = right_min.min(s[k]);
            }
            h - left_min.max(right_min)
        };

        let mut accepted: Vec<usize> = candidates
            .into_iter()
            .filter(|&p| prominence(p) >= threshold)
            .collect();

        if self.min_separation > 0.0 && accepted.len() > 1 {
            let mut by_height = accepted.clone();
            by_height.sort_by(|a, b| s[*b].total_cmp(&s[*a]).then(a.cmp(b)));
            let mut kept: Vec<usize> = Vec::new();
            for p in by_height {
                let far = kept
                    .iter()
                    .all(|&q| (p as f64 - q as f64).abs() * hist.bin_width >= self.min_separation);
                if far {
                    kept.push(p);
                }
            }
            kept.sort_unstable();
            accepted = kept;
        }

        let valley_bins: Vec<usize> = accepted
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0], w[1]);
                let mut best = a + 1;
                for k in a + 1..b {
                    if s[k] < s[best] {
                        best = k;
                    }
                }
                best.min(b)
            })
            .collect();

        let peaks: Vec<Extremum> = accepted
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let left = if i > 0 {
                    Some(valley_bins[i - 1])
                } else {
                    None
                };
                let right = valley_bins.get(i).copied();
                let offset = refine_peak(&hist.counts, &s, p, left, right);
                Extremum {
                    position: hist.bin_center(p) + offset * hist.bin_width,
                    height: s[p],
                    bin: p,
                }
            })
            .collect();

        let valleys = valley_bins
            .iter()
            .map(|&b| Extremum {
                position: hist.bin_center(b),
                height: s[b],
                bin: b,
            })
            .collect();

        PeakSet { peaks, valleys }
    }
}

/// Photon peaks of `hist`; fewer than two is a degenerate spectrum.
pub fn find_peaks(hist: &Histogram, finder: &PeakFinder) -> Result<PeakSet> {
    let set = finder.extrema(hist);
    if set.peaks.len() < 2 {
        return Err(Error::DegenerateSpectrum(format!(
            "found {} peak(s), need at least 2",
            set.peaks.len()
        )));
    }
    Ok(set)
}

/// Consecutive peak distances and their mean.
pub fn estimate_gamma(positions: &[f64]) -> Result<(Vec<f64>, f64)> {
    if positions.len() < 2 {
        return Err(Error::DegenerateSpectrum(
            "gain estimate needs at least 2 peaks".into(),
        ));
    }
    let series: Vec<f64> = positions.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    Ok((series, mean))
}

/// Mean of (M - m) / (M + m) over peak/valley pairs, skipping pairs with
/// M + m = 0. Returns `None` when no pair qualifies.
pub fn visibility_from_pairs(peak_heights: &[f64], valley_heights: &[f64]) -> Option<f64> {
    let terms: Vec<f64> = peak_heights
        .iter()
        .zip(valley_heights)
        .filter(|(m_pk, m_va)| *m_pk + *m_va > 0.0)
        .map(|(m_pk, m_va)| (m_pk - m_va) / (m_pk + m_va))
        .collect();
    if terms.is_empty() {
        None
    } else {
        Some(terms.iter().sum::<f64>() / terms.len() as f64)
    }
}

/// Visibility of a peak set: each peak paired with the valley that follows it.
pub fn visibility(set: &PeakSet) -> Result<f64> {
    if set.peaks.len() < 2 {
        return Err(Error::DegenerateSpectrum(
            "visibility needs at least 2 peaks".into(),
        ));
    }
    let m_pk: Vec<f64> = set.peaks.iter().map(|p| p.height).collect();
    let m_va: Vec<f64> = set.valleys.iter().map(|v| v.height).collect();
    visibility_from_pairs(&m_pk, &m_va)
        .ok_or_else(|| Error::DegenerateSpectrum("no peak/valley pair with nonzero height".into()))
}

/// Position of the zero-photon peak given the first detected peak.
pub fn zero_position(first_peak: f64, gamma_bar: f64) -> f64 {
    let offset = (first_peak / gamma_bar).round();
    first_peak - offset * gamma_bar
}

/// Convert outputs to detected photons; `round` snaps to the nearest
/// nonnegative integer.
pub fn calibrate(x: &[f64], gamma_bar: f64, zero: f64, round: bool) -> Result<Vec<f64>> {
    if !(gamma_bar > 0.0) {
        return Err(Error::invalid(format!("gain must be > 0, got {gamma_bar}")));
    }
    Ok(x.iter()
        .map(|&v| {
            let k = (v - zero) / gamma_bar;
            if round {
                k.round().max(0.0)
            } else {
                k
            }
        })
        .collect())
}

/// First 1-based index `i` with `gamma_i < (1 - tolerance) * median(gamma_1..gamma_{i-1})`.
pub fn linearity_check(series: &[f64], tolerance: f64) -> Option<usize> {
    if series.len() < 3 {
        return None;
    }
    (1..series.len()).find_map(|i| {
        let mut prev = series[..i].to_vec();
        prev.sort_by(f64::total_cmp);
        let mid = prev.len() / 2;
        let median = if prev.len() % 2 == 1 {
            prev[mid]
        } else {
            0.5 * (prev[mid - 1] + prev[mid])
        };
        (series[i] < (1.0 - tolerance) * median).then_some(i + 1)
    })
}

/// Options of the full spectrum analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumOptions {
    /// Expected single-photon spacing used for the first binning pass.
    pub reference_gamma: Option<f64>,
    pub bins_per_gamma: f64,
    pub finder: PeakFinder,
    pub bootstrap_resamples: usize,
    pub seed: u64,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            reference_gamma: None,
            bins_per_gamma: 25.0,
            finder: PeakFinder::default(),
            bootstrap_resamples: 200,
            seed: 0,
        }
    }
}

/// Analyzed pulse-height spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseHeightSpectrum {
    pub histogram: Histogram,
    pub peaks: Vec<Extremum>,
    pub valleys: Vec<Extremum>,
    pub gamma_series: Vec<f64>,
    pub gamma_bar: Option<f64>,
    pub zero_position: Option<f64>,
    pub visibility: Option<f64>,
    pub visibility_err: Option<f64>,
}

impl PulseHeightSpectrum {
    pub fn is_degenerate(&self) -> bool {
        self.peaks.len() < 2
    }
}

fn finder_for(opts: &SpectrumOptions, gamma: Option<f64>) -> PeakFinder {
    let mut f = opts.finder;
    if let Some(g) = gamma {
        f.min_separation = f.min_separation.max(0.5 * g);
    }
    f
}

/// Histogram `x`, locate photon peaks, estimate the gain and visibility.
///
/// Binning is done twice: first from the reference gain (or a fixed bin
/// count), then at `bins_per_gamma` bins per measured peak spacing.
pub fn analyze(x: &[f64], opts: &SpectrumOptions) -> Result<PulseHeightSpectrum> {
    if x.is_empty() {
        return Err(Error::invalid("cannot analyze an empty spectrum"));
    }
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let coarse = match opts.reference_gamma {
        Some(g) if g > 0.0 => g / opts.bins_per_gamma,
        _ => ((hi - lo) / 500.0).max(f64::MIN_POSITIVE),
    };
    let hist = build_phs(x, coarse)?;
    let set = finder_for(opts, opts.reference_gamma).extrema(&hist);

    let (hist, set, gamma) = if set.peaks.len() >= 2 {
        let positions: Vec<f64> = set.peaks.iter().map(|p| p.position).collect();
        let (_, g) = estimate_gamma(&positions)?;
        let hist = build_phs(x, g / opts.bins_per_gamma)?;
        let set = finder_for(opts, opts.reference_gamma.or(Some(g))).extrema(&hist);
        (hist, set, Some(g))
    } else {
        (hist, set, opts.reference_gamma)
    };

    if set.peaks.len() < 2 {
        return Ok(PulseHeightSpectrum {
            histogram: hist,
            peaks: set.peaks,
            valleys: set.valleys,
            gamma_series: Vec::new(),
            gamma_bar: None,
            zero_position: None,
            visibility: None,
            visibility_err: None,
        });
    }

    let positions: Vec<f64> = set.peaks.iter().map(|p| p.position).collect();
    let (series, gamma_bar) = estimate_gamma(&positions)?;
    let v = visibility(&set).ok();
    let finder = finder_for(opts, opts.reference_gamma.or(gamma).or(Some(gamma_bar)));
    let v_err = if v.is_some() && opts.bootstrap_resamples >= 2 {
        bootstrap_visibility(x, &hist, &finder, opts.bootstrap_resamples, opts.seed)
    } else {
        None
    };

    Ok(PulseHeightSpectrum {
        zero_position: Some(zero_position(positions[0], gamma_bar)),
        histogram: hist,
        peaks: set.peaks,
        valleys: set.valleys,
        gamma_series: series,
        gamma_bar: Some(gamma_bar),
        visibility: v,
        visibility_err: v_err,
    })
}

/// Standard deviation of the visibility over shot resamples.
fn bootstrap_visibility(
    x: &[f64],
    binning: &Histogram,
    finder: &PeakFinder,
    resamples: usize,
    seed: u64,
) -> Option<f64> {
    let n = x.len();
    let values: Vec<f64> = rng::map_indexed(resamples, |b| {
        let mut r = rng::stream(seed, domain::BOOTSTRAP_V, 0, b as u64);
        let mut h = binning.empty_like();
        for _ in 0..n {
            h.fill(x[r.random_range(0..n)]);
        }
        let set = finder.extrema(&h);
        visibility(&set).ok()
    })
    .into_iter()
    .flatten()
    .collect();
    if values.len() < 2 {
        return None;
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    Some(var.sqrt())
}
