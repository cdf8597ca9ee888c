//! Coloration and density diagnostics.

use std::f64::consts::{PI, SQRT_2};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdn::{eval_transfer, FdnConfig, FrequencyPoint};
use crate::filters::{Biquad, BiquadCascade, SectionRole};
use crate::linalg::C64;
use crate::par::{self, Execution};

/// Energy `1/(1 − γ^{2m})` of a feedback comb with loop gain `γ^m`.
pub fn comb_energy(gamma: f64, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::Input("comb delay must be at least 1".into()));
    }
    if gamma == 1.0 {
        return Err(Error::Divergent(gamma));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Input(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    Ok(1.0 / (1.0 - gamma.powf(2.0 * m as f64)))
}

/// Fraction of Gaussian samples beyond one standard deviation.
pub const GAUSSIAN_OUTLIER_FRACTION: f64 = 0.317_310_507_862_914_15;
/// Echo density window length in seconds.
pub const ECHO_WINDOW_SECONDS: f64 = 0.02;
/// Hop between echo density frames in seconds.
pub const ECHO_HOP_SECONDS: f64 = 0.001;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EchoDensityProfile {
    /// Frame centers in samples.
    pub times: Vec<usize>,
    pub values: Vec<f64>,
    pub window_len: usize,
}

impl EchoDensityProfile {
    /// First frame center where the profile reaches `threshold`.
    pub fn time_to(&self, threshold: f64) -> Option<usize> {
        self.times
            .iter()
            .zip(&self.values)
            .find(|(_, &v)| v >= threshold)
            .map(|(&t, _)| t)
    }

    pub fn to_csv(&self, fs: f64) -> String {
        let mut s = String::from("sample,time_s,echo_density\n");
        for (t, v) in self.times.iter().zip(&self.values) {
            s.push_str(&format!("{t},{:.6},{v:.6}\n", *t as f64 / fs));
        }
        s
    }
}

/// Sliding-window echo density with a hop of `window_len / 20` samples.
pub fn echo_density_profile(ir: &[f64], window_len: usize) -> Result<EchoDensityProfile> {
    echo_density_profile_with(ir, window_len, (window_len / 20).max(1))
}

/// Echo density with the default 20 ms window and 1 ms hop.
pub fn echo_density_at_rate(ir: &[f64], fs: f64) -> Result<EchoDensityProfile> {
    let window = (ECHO_WINDOW_SECONDS * fs).round().max(1.0) as usize;
    let hop = (ECHO_HOP_SECONDS * fs).round().max(1.0) as usize;
    echo_density_profile_with(ir, window, hop)
}

/// Each frame counts samples whose magnitude exceeds the frame's RMS,
/// divided by the window length and by `erfc(1/√2)`. Silent frames score 0.
pub fn echo_density_profile_with(ir: &[f64], window_len: usize, hop: usize) -> Result<EchoDensityProfile> {
    if window_len == 0 || hop == 0 {
        return Err(Error::Input("window length and hop must be positive".into()));
    }
    if ir.len() < window_len {
        return Err(Error::Input(format!(
            "impulse response has {} samples, shorter than the {window_len}-sample window",
            ir.len()
        )));
    }
    let starts: Vec<usize> = (0..=ir.len() - window_len).step_by(hop).collect();
    let values = par::map(Execution::default(), &starts, |&s| {
        let frame = &ir[s..s + window_len];
        let rms = (frame.iter().map(|x| x * x).sum::<f64>() / window_len as f64).sqrt();
        if rms == 0.0 {
            return 0.0;
        }
        let count = frame.iter().filter(|x| x.abs() > rms).count();
        count as f64 / window_len as f64 / GAUSSIAN_OUTLIER_FRACTION
    });
    Ok(EchoDensityProfile {
        times: starts.iter().map(|s| s + window_len / 2).collect(),
        values,
        window_len,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FdnType {
    /// Random orthogonal matrix, not optimized.
    Ro,
    DiffOrthogonal,
    DiffHouseholder,
    DiffScattering,
    /// Standard FDN with a dense matrix.
    Plain,
}

impl FromStr for FdnType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "RO" => Ok(FdnType::Ro),
            "DiffFDN-O" => Ok(FdnType::DiffOrthogonal),
            "DiffFDN-HH" => Ok(FdnType::DiffHouseholder),
            "DiffFDN-SCAT" => Ok(FdnType::DiffScattering),
            s if s == "plain" || (s.starts_with("plain") && s[5..].parse::<usize>().is_ok()) => Ok(FdnType::Plain),
            other => Err(Error::UnknownType(other.to_string())),
        }
    }
}

impl FdnType {
    pub fn label(self) -> &'static str {
        match self {
            FdnType::Ro => "RO",
            FdnType::DiffOrthogonal => "DiffFDN-O",
            FdnType::DiffHouseholder => "DiffFDN-HH",
            FdnType::DiffScattering => "DiffFDN-SCAT",
            FdnType::Plain => "plain",
        }
    }
}

/// Multiply-adds per sample of an FDN with octave attenuation filters.
///
/// Gains `2N`, delays `2N`, filters `44N`, plus the matrix term: `N²`
/// dense, `2N` Householder, `K(N² + 2N)` scattering.
pub fn operation_count(fdn_type: FdnType, n: usize, k: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::Input("N must be at least 1".into()));
    }
    let matrix = match fdn_type {
        FdnType::Ro | FdnType::DiffOrthogonal | FdnType::Plain => n * n,
        FdnType::DiffHouseholder => 2 * n,
        FdnType::DiffScattering => k * (n * n + 2 * n),
    };
    Ok(48 * n + matrix)
}

/// [`operation_count`] by type name (`RO`, `DiffFDN-O`, `DiffFDN-HH`,
/// `DiffFDN-SCAT`, `plain`/`plainN`).
pub fn operation_count_named(fdn_type: &str, n: usize, k: usize) -> Result<usize> {
    operation_count(fdn_type.parse()?, n, k)
}

/// Octave centers used for decay analysis and attenuation design.
pub const OCTAVE_CENTERS: [f64; 8] = [63.0, 125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0];

const FIT_START_DB: f64 = -5.0;
const FIT_END_DB: f64 = -25.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandDecay {
    pub center_hz: f64,
    pub t60: f64,
    /// Amplitude of the fitted single-slope envelope at `t = 0`.
    pub initial_level: f64,
}

/// Sixth-order Butterworth octave band-pass as three biquads, unit gain at
/// the center.
pub fn octave_bandpass(center_hz: f64, fs: f64) -> Result<BiquadCascade> {
    let (lo, hi) = (center_hz / SQRT_2, center_hz * SQRT_2);
    if !(lo > 0.0) || hi >= fs / 2.0 {
        return Err(Error::Config(format!(
            "octave band at {center_hz} Hz does not fit below Nyquist at fs = {fs}"
        )));
    }
    let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
    let (wl, wh) = (warp(lo), warp(hi));
    let w0 = (wl * wh).sqrt();
    let bw = wh - wl;
    let center = 2.0 * (w0 / (2.0 * fs)).atan();
    let order = 3;
    let mut sections = Vec::with_capacity(order);
    for k in 0..order {
        let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
        let p = C64::from_polar(1.0, theta);
        // s² − p·B·s + ω0² = 0
        let half = p * bw / 2.0;
        let disc = (half * half - w0 * w0).sqrt();
        for s in [half + disc, half - disc] {
            if s.im <= 0.0 {
                continue;
            }
            let z = (2.0 * fs + s) / (2.0 * fs - s);
            let raw = Biquad {
                b0: 1.0,
                b1: 0.0,
                b2: -1.0,
                a1: -2.0 * z.re,
                a2: z.norm_sqr(),
            };
            let g = 1.0 / raw.response(center).norm();
            sections.push((SectionRole::Band, raw.scaled(g)));
        }
    }
    if sections.len() != order {
        return Err(Error::Config(format!("band-pass design at {center_hz} Hz is degenerate")));
    }
    Ok(BiquadCascade::new(1.0, sections))
}

/// Least-squares T60 of the −5…−25 dB range of the Schroeder curve.
///
/// The −25 dB point must fall in the first three quarters of the signal so
/// the truncation tail of the backward integral does not enter the fit.
pub fn estimate_t60(signal: &[f64], fs: f64, center_hz: f64) -> Result<BandDecay> {
    let mut edf = vec![0.0; signal.len() + 1];
    for i in (0..signal.len()).rev() {
        edf[i] = edf[i + 1] + signal[i] * signal[i];
    }
    let total = edf[0];
    if !(total > 0.0) {
        return Err(Error::InsufficientDecay { center_hz });
    }
    let db = |e: f64| 10.0 * (e / total).log10();
    let usable = signal.len() * 3 / 4;
    let start = (0..usable).find(|&i| db(edf[i]) <= FIT_START_DB);
    let end = start.and_then(|s| (s..usable).find(|&i| db(edf[i]) <= FIT_END_DB));
    let (start, end) = match (start, end) {
        (Some(s), Some(e)) if e > s + 1 => (s, e),
        _ => return Err(Error::InsufficientDecay { center_hz }),
    };
    let pts: Vec<(f64, f64)> = (start..=end).map(|i| (i as f64 / fs, db(edf[i]))).collect();
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(Error::InsufficientDecay { center_hz });
    }
    let intercept_db = my - slope * mt;
    let t60 = -60.0 / slope;
    // per-sample energy decay γ² from the slope
    let gamma2 = 10f64.powf(slope / (10.0 * fs));
    let e0 = total * 10f64.powf(intercept_db / 10.0);
    Ok(BandDecay {
        center_hz,
        t60,
        initial_level: (e0 * (1.0 - gamma2)).sqrt(),
    })
}

/// Per-octave T60 and initial level of `ir`. Each band fails on its own
/// when it does not decay far enough.
pub fn estimate_t60_bands(ir: &[f64], fs: f64, centers: &[f64]) -> Vec<Result<BandDecay>> {
    par::map(Execution::default(), centers, |&fc| {
        let mut filter = octave_bandpass(fc, fs)?.processor()?;
        let band: Vec<f64> = ir.iter().map(|&x| filter.tick(x)).collect();
        estimate_t60(&band, fs, fc)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPoint {
    pub frequency_hz: f64,
    pub magnitude_db: f64,
}

/// `|H|` in dB on a uniform grid from `f_lo` to `f_hi`.
pub fn magnitude_response(config: &FdnConfig, f_lo: f64, f_hi: f64, resolution_hz: f64) -> Result<Vec<SpectrumPoint>> {
    let fs = config.sample_rate as f64;
    if !(resolution_hz > 0.0) || !(f_lo >= 0.0) || !(f_hi >= f_lo) || f_hi > fs / 2.0 {
        return Err(Error::Input(format!(
            "invalid frequency range {f_lo}..{f_hi} Hz at resolution {resolution_hz} Hz"
        )));
    }
    let count = ((f_hi - f_lo) / resolution_hz).floor() as usize + 1;
    let freqs: Vec<f64> = (0..count).map(|k| f_lo + k as f64 * resolution_hz).collect();
    let points: Vec<FrequencyPoint> = freqs
        .iter()
        .map(|f| FrequencyPoint::from_angle(2.0 * PI * f / fs))
        .collect();
    let h = eval_transfer(config, &points)?;
    Ok(freqs
        .iter()
        .zip(h)
        .map(|(&f, s)| SpectrumPoint {
            frequency_hz: f,
            magnitude_db: 20.0 * s.total.norm().log10(),
        })
        .collect())
}

/// [`magnitude_response`] as CSV.
pub fn magnitude_report(config: &FdnConfig, f_lo: f64, f_hi: f64, resolution_hz: f64) -> Result<String> {
    let mut s = String::from("frequency_hz,magnitude_db\n");
    for p in magnitude_response(config, f_lo, f_hi, resolution_hz)? {
        s.push_str(&format!("{:.6},{:.6}\n", p.frequency_hz, p.magnitude_db));
    }
    Ok(s)
}
