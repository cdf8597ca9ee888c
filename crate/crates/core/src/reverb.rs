//! Frequency-dependent decay on top of a lossless prototype.

use std::f64::consts::PI;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdn::{render_loop, FdnConfig};
use crate::filters::{design_geq, BiquadCascade, GeqTarget};
use crate::metrics::{BandDecay, OCTAVE_CENTERS};

fn default_centers() -> Vec<f64> {
    OCTAVE_CENTERS.to_vec()
}

fn default_levels() -> Vec<f64> {
    vec![1.0; 8]
}

/// Per-band reverberation time and initial level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttenuationSpec {
    #[serde(default = "default_centers")]
    pub band_centers: Vec<f64>,
    pub band_t60: Vec<f64>,
    pub dc_t60: f64,
    pub nyquist_t60: f64,
    #[serde(default = "default_levels")]
    pub initial_levels: Vec<f64>,
}

impl AttenuationSpec {
    /// Same T60 everywhere, unit levels.
    pub fn uniform(t60: f64) -> Self {
        AttenuationSpec {
            band_centers: default_centers(),
            band_t60: vec![t60; 8],
            dc_t60: t60,
            nyquist_t60: t60,
            initial_levels: default_levels(),
        }
    }

    /// Spec from per-band estimates; the shelves copy the edge bands.
    pub fn from_estimates(bands: &[BandDecay]) -> Result<Self> {
        if bands.len() != 8 || bands.iter().zip(OCTAVE_CENTERS).any(|(b, c)| b.center_hz != c) {
            return Err(Error::Input("expected one estimate per octave band 63..8000 Hz".into()));
        }
        let spec = AttenuationSpec {
            band_centers: default_centers(),
            band_t60: bands.iter().map(|b| b.t60).collect(),
            dc_t60: bands[0].t60,
            nyquist_t60: bands[7].t60,
            initial_levels: bands.iter().map(|b| b.initial_level).collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.band_centers.as_slice() != OCTAVE_CENTERS.as_slice() {
            return Err(Error::Config(format!(
                "band centers must be {OCTAVE_CENTERS:?}, got {:?}",
                self.band_centers
            )));
        }
        if self.band_t60.len() != 8 || self.initial_levels.len() != 8 {
            return Err(Error::Config("need exactly 8 band T60s and 8 initial levels".into()));
        }
        let t60s = self.band_t60.iter().chain([&self.dc_t60, &self.nyquist_t60]);
        if let Some(&bad) = t60s.into_iter().find(|t| !(**t > 0.0)) {
            return Err(Error::Domain(bad));
        }
        if let Some(bad) = self.initial_levels.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::Config(format!("initial levels must be positive, got {bad}")));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-pass attenuation `m·(−60/(f_s T60))` dB for a line of `m` samples.
    pub fn attenuation_target(&self, m: usize, fs: f64) -> GeqTarget {
        let db = |t60: f64| {
            if t60.is_infinite() {
                0.0
            } else {
                m as f64 * (-60.0 / (fs * t60))
            }
        };
        let mut band_db = [0.0; 8];
        for (g, &t) in band_db.iter_mut().zip(&self.band_t60) {
            *g = db(t);
        }
        GeqTarget {
            dc_db: db(self.dc_t60),
            band_db,
            nyquist_db: db(self.nyquist_t60),
        }
    }
}

/// Graphic EQ whose band-center gains equal the per-pass attenuation of a
/// delay line of `m` samples.
pub fn design_attenuation_filter(spec: &AttenuationSpec, m: usize, fs: f64) -> Result<BiquadCascade> {
    spec.validate()?;
    if m == 0 {
        return Err(Error::Config("attenuation filters need a delay of at least 1".into()));
    }
    design_geq(&spec.attenuation_target(m, fs), fs)
}

/// Shared output EQ with band gains `20 log10 A_b`.
pub fn design_level_eq(initial_levels: &[f64], fs: f64) -> Result<BiquadCascade> {
    if initial_levels.len() != 8 {
        return Err(Error::Config(format!("need 8 levels, got {}", initial_levels.len())));
    }
    if let Some(bad) = initial_levels.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
        return Err(Error::Config(format!("levels must be positive, got {bad}")));
    }
    let mut band_db = [0.0; 8];
    for (g, l) in band_db.iter_mut().zip(initial_levels) {
        *g = 20.0 * l.log10();
    }
    if band_db.iter().all(|&g| g == 0.0) {
        return Ok(BiquadCascade::identity());
    }
    design_geq(
        &GeqTarget {
            dc_db: band_db[0],
            band_db,
            nyquist_db: band_db[7],
        },
        fs,
    )
}

/// Largest group delay (samples) of `cascade` over the octave centers.
pub fn max_group_delay(cascade: &BiquadCascade, fs: f64) -> f64 {
    OCTAVE_CENTERS
        .iter()
        .map(|f| cascade.group_delay(2.0 * PI * f / fs).abs())
        .fold(0.0, f64::max)
}

/// Impulse response of `prototype` with a per-line attenuation EQ inside
/// the loop and the level EQ after the output gains.
///
/// The prototype is rendered lossless; a `gamma` below one is overridden.
pub fn render_fd_ir(prototype: &FdnConfig, spec: &AttenuationSpec, length: usize) -> Result<Vec<f64>> {
    spec.validate()?;
    let fs = prototype.sample_rate as f64;
    let mut lossless = prototype.clone();
    if lossless.gamma != 1.0 {
        warn!("prototype gamma {} replaced by 1 for frequency-dependent rendering", lossless.gamma);
        lossless.gamma = 1.0;
    }
    lossless.direct_gain = 0.0;
    let op = lossless.operator()?;
    let mut filters = Vec::with_capacity(lossless.n());
    for &m in &lossless.delays {
        let cascade = design_attenuation_filter(spec, m, fs)?;
        debug!("line of {m} samples: worst group delay {:.2} samples", max_group_delay(&cascade, fs));
        filters.push(cascade.processor()?);
    }
    let mut out = render_loop(&lossless, &op, length, |i, s| filters[i].tick(s))?;
    let mut eq = design_level_eq(&spec.initial_levels, fs)?.processor()?;
    for y in out.iter_mut() {
        *y = eq.tick(*y);
    }
    out[0] += prototype.direct_gain;
    Ok(out)
}
