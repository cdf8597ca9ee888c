//! Second-order sections, parametric EQ prototypes and an octave graphic EQ.

use std::f64::consts::{FRAC_1_SQRT_2, LN_2, PI};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::metrics::OCTAVE_CENTERS;

/// Low-shelf crossover of the graphic EQ.
pub const LOW_SHELF_HZ: f64 = 46.0;
/// High-shelf crossover of the graphic EQ.
pub const HIGH_SHELF_HZ: f64 = 11360.0;
pub const SHELF_Q: f64 = FRAC_1_SQRT_2;
/// Peak bandwidth in octaves.
pub const PEAK_BANDWIDTH: f64 = 1.0;
/// Largest attenuation a single section may be asked for.
pub const MAX_SECTION_CUT_DB: f64 = 60.0;

/// `H(z) = (b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    pub const IDENTITY: Biquad = Biquad {
        b0: 1.0,
        b1: 0.0,
        b2: 0.0,
        a1: 0.0,
        a2: 0.0,
    };

    fn normalized(b: [f64; 3], a: [f64; 3]) -> Self {
        Biquad {
            b0: b[0] / a[0],
            b1: b[1] / a[0],
            b2: b[2] / a[0],
            a1: a[1] / a[0],
            a2: a[2] / a[0],
        }
    }

    pub fn scaled(self, g: f64) -> Self {
        Biquad {
            b0: self.b0 * g,
            b1: self.b1 * g,
            b2: self.b2 * g,
            ..self
        }
    }

    /// Peaking section (RBJ), bandwidth in octaves.
    pub fn peaking(fc: f64, gain_db: f64, bandwidth: f64, fs: f64) -> Self {
        let a = 10f64.powf(gain_db / 40.0);
        let w0 = 2.0 * PI * fc / fs;
        let (sn, cs) = w0.sin_cos();
        let alpha = sn * (LN_2 / 2.0 * bandwidth * w0 / sn).sinh();
        Self::normalized(
            [1.0 + alpha * a, -2.0 * cs, 1.0 - alpha * a],
            [1.0 + alpha / a, -2.0 * cs, 1.0 - alpha / a],
        )
    }

    /// Low shelf (RBJ); the DC gain is `gain_db`.
    pub fn low_shelf(fc: f64, gain_db: f64, q: f64, fs: f64) -> Self {
        let a = 10f64.powf(gain_db / 40.0);
        let w0 = 2.0 * PI * fc / fs;
        let (sn, cs) = w0.sin_cos();
        let k = 2.0 * a.sqrt() * sn / (2.0 * q);
        Self::normalized(
            [
                a * ((a + 1.0) - (a - 1.0) * cs + k),
                2.0 * a * ((a - 1.0) - (a + 1.0) * cs),
                a * ((a + 1.0) - (a - 1.0) * cs - k),
            ],
            [
                (a + 1.0) + (a - 1.0) * cs + k,
                -2.0 * ((a - 1.0) + (a + 1.0) * cs),
                (a + 1.0) + (a - 1.0) * cs - k,
            ],
        )
    }

    /// High shelf (RBJ); the Nyquist gain is `gain_db`.
    pub fn high_shelf(fc: f64, gain_db: f64, q: f64, fs: f64) -> Self {
        let a = 10f64.powf(gain_db / 40.0);
        let w0 = 2.0 * PI * fc / fs;
        let (sn, cs) = w0.sin_cos();
        let k = 2.0 * a.sqrt() * sn / (2.0 * q);
        Self::normalized(
            [
                a * ((a + 1.0) + (a - 1.0) * cs + k),
                -2.0 * a * ((a - 1.0) + (a + 1.0) * cs),
                a * ((a + 1.0) + (a - 1.0) * cs - k),
            ],
            [
                (a + 1.0) - (a - 1.0) * cs + k,
                2.0 * ((a - 1.0) - (a + 1.0) * cs),
                (a + 1.0) - (a - 1.0) * cs - k,
            ],
        )
    }

    /// `H(e^{jω})`.
    pub fn response(&self, omega: f64) -> C64 {
        let z1 = C64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        (self.b0 + z1 * self.b1 + z2 * self.b2) / (1.0 + z1 * self.a1 + z2 * self.a2)
    }

    /// Group delay in samples at `ω`.
    pub fn group_delay(&self, omega: f64) -> f64 {
        fn poly_delay(c: [f64; 3], omega: f64) -> f64 {
            let mut num = C64::new(0.0, 0.0);
            let mut den = C64::new(0.0, 0.0);
            for (k, &ck) in c.iter().enumerate() {
                let e = C64::from_polar(1.0, -omega * k as f64);
                num += e * (ck * k as f64);
                den += e * ck;
            }
            (num / den).re
        }
        poly_delay([self.b0, self.b1, self.b2], omega) - poly_delay([1.0, self.a1, self.a2], omega)
    }

    /// Poles strictly inside the unit circle (stability triangle).
    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionRole {
    LowShelf,
    Peak,
    HighShelf,
    Band,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub role: SectionRole,
    #[serde(flatten)]
    pub coefficients: Biquad,
}

/// Broadband gain followed by second-order sections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiquadCascade {
    pub gain: f64,
    pub sections: Vec<Section>,
}

impl BiquadCascade {
    pub fn new(gain: f64, sections: Vec<(SectionRole, Biquad)>) -> Self {
        BiquadCascade {
            gain,
            sections: sections
                .into_iter()
                .map(|(role, coefficients)| Section { role, coefficients })
                .collect(),
        }
    }

    pub fn identity() -> Self {
        BiquadCascade {
            gain: 1.0,
            sections: Vec::new(),
        }
    }

    pub fn response(&self, omega: f64) -> C64 {
        self.sections
            .iter()
            .fold(C64::new(self.gain, 0.0), |h, s| h * s.coefficients.response(omega))
    }

    pub fn magnitude_db(&self, f: f64, fs: f64) -> f64 {
        20.0 * self.response(2.0 * PI * f / fs).norm().log10()
    }

    pub fn group_delay(&self, omega: f64) -> f64 {
        self.sections.iter().map(|s| s.coefficients.group_delay(omega)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        match self.sections.iter().position(|s| !s.coefficients.is_stable()) {
            Some(index) => Err(Error::UnstableFilter { index }),
            None => Ok(()),
        }
    }

    /// Stateful runner; fails on unstable sections.
    pub fn processor(&self) -> Result<CascadeState> {
        self.validate()?;
        Ok(CascadeState {
            gain: self.gain,
            sections: self.sections.iter().map(|s| s.coefficients).collect(),
            state: vec![[0.0; 2]; self.sections.len()],
        })
    }
}

/// Transposed direct form II state of a cascade.
#[derive(Clone, Debug)]
pub struct CascadeState {
    gain: f64,
    sections: Vec<Biquad>,
    state: Vec<[f64; 2]>,
}

impl CascadeState {
    pub fn tick(&mut self, x: f64) -> f64 {
        let mut y = x * self.gain;
        for (s, z) in self.sections.iter().zip(&mut self.state) {
            let out = s.b0 * y + z[0];
            z[0] = s.b1 * y - s.a1 * out + z[1];
            z[1] = s.b2 * y - s.a2 * out;
            y = out;
        }
        y
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|z| *z = [0.0; 2]);
    }
}

/// Target magnitudes in dB for the octave graphic EQ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeqTarget {
    pub dc_db: f64,
    pub band_db: [f64; 8],
    pub nyquist_db: f64,
}

impl GeqTarget {
    pub fn flat(db: f64) -> Self {
        GeqTarget {
            dc_db: db,
            band_db: [db; 8],
            nyquist_db: db,
        }
    }
}

/// Design frequencies (Hz) with target and weight.
fn design_points(target: &GeqTarget, fs: f64) -> Vec<(f64, f64, f64)> {
    let mut pts = vec![(0.0, target.dc_db, 1.0)];
    for b in 0..8 {
        pts.push((OCTAVE_CENTERS[b], target.band_db[b], 1.0));
        if b < 7 {
            let mid = (OCTAVE_CENTERS[b] * OCTAVE_CENTERS[b + 1]).sqrt();
            pts.push((mid, 0.5 * (target.band_db[b] + target.band_db[b + 1]), 0.5));
        }
    }
    pts.push((fs / 2.0, target.nyquist_db, 1.0));
    pts
}

fn geq_sections(gains: &[f64], fs: f64) -> Vec<(SectionRole, Biquad)> {
    let mut out = Vec::with_capacity(10);
    out.push((SectionRole::LowShelf, Biquad::low_shelf(LOW_SHELF_HZ, gains[0], SHELF_Q, fs)));
    for (b, &fc) in OCTAVE_CENTERS.iter().enumerate() {
        out.push((SectionRole::Peak, Biquad::peaking(fc, gains[b + 1], PEAK_BANDWIDTH, fs)));
    }
    out.push((SectionRole::HighShelf, Biquad::high_shelf(HIGH_SHELF_HZ, gains[9], SHELF_Q, fs)));
    out
}

const PROTOTYPE_DB: f64 = 6.0;
const REFINE_PASSES: usize = 12;
const REFINE_TOLERANCE_DB: f64 = 0.01;

/// Low shelf, eight one-octave peaks and a high shelf matching `target`.
///
/// The mean band target becomes the broadband gain. Command gains come
/// from a weighted least-squares solve against the band-interaction
/// matrix, followed by correction passes that re-measure the response.
pub fn design_geq(target: &GeqTarget, fs: f64) -> Result<BiquadCascade> {
    if HIGH_SHELF_HZ >= fs / 2.0 {
        return Err(Error::Config(format!(
            "sample rate {fs} Hz leaves no room for the {HIGH_SHELF_HZ} Hz shelf"
        )));
    }
    let all = std::iter::once(target.dc_db)
        .chain(target.band_db)
        .chain(std::iter::once(target.nyquist_db));
    if all.into_iter().any(|g| !g.is_finite()) {
        return Err(Error::Input("graphic EQ targets must be finite".into()));
    }
    let mean = target.band_db.iter().sum::<f64>() / 8.0;
    let gain = 10f64.powf(mean / 20.0);
    let residual = GeqTarget {
        dc_db: target.dc_db - mean,
        band_db: target.band_db.map(|g| g - mean),
        nyquist_db: target.nyquist_db - mean,
    };
    let pts = design_points(&residual, fs);
    let omega: Vec<f64> = pts.iter().map(|p| 2.0 * PI * p.0 / fs).collect();
    let weights: Vec<f64> = pts.iter().map(|p| p.2).collect();

    let proto = geq_sections(&[PROTOTYPE_DB; 10], fs);
    let b = DMatrix::from_fn(pts.len(), 10, |r, c| {
        weights[r] * 20.0 * proto[c].1.response(omega[r]).norm().log10() / PROTOTYPE_DB
    });
    let svd = b.clone().svd(true, true);
    let solve = |rhs: &DVector<f64>| -> Result<DVector<f64>> {
        svd.solve(rhs, 1e-10).map_err(|e| Error::Config(format!("graphic EQ solve failed: {e}")))
    };

    let response_db = |g: &[f64]| -> Vec<f64> {
        let c = BiquadCascade::new(1.0, geq_sections(g, fs));
        omega.iter().map(|&w| 20.0 * c.response(w).norm().log10()).collect()
    };
    let rhs = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1 * p.2));
    let mut gains: Vec<f64> = solve(&rhs)?.iter().copied().collect();
    let centers: Vec<usize> = (0..8).map(|b| 1 + 2 * b).collect();
    for _ in 0..REFINE_PASSES {
        let resp = response_db(&gains);
        let worst = centers
            .iter()
            .map(|&k| (resp[k] - pts[k].1).abs())
            .fold(0.0, f64::max);
        if worst < REFINE_TOLERANCE_DB {
            break;
        }
        let err = DVector::from_iterator(pts.len(), (0..pts.len()).map(|k| (pts[k].1 - resp[k]) * weights[k]));
        let step = solve(&err)?;
        for (g, d) in gains.iter_mut().zip(step.iter()) {
            *g += d;
        }
    }
    if let Some(g) = gains.iter().find(|&&g| g < -MAX_SECTION_CUT_DB) {
        return Err(Error::Config(format!(
            "graphic EQ needs a {g:.1} dB section gain, beyond the {MAX_SECTION_CUT_DB} dB limit"
        )));
    }
    let cascade = BiquadCascade::new(gain, geq_sections(&gains, fs));
    cascade.validate()?;
    Ok(cascade)
}
