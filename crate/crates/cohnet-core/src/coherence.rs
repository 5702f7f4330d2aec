//! Interferometric coherence estimation from an SLC pair and the
//! multiplicative decorrelation budget used to approximate volume
//! decorrelation.

use num_complex::{Complex32, Complex64};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{ComplexRaster, ScalarRaster};

/// Co-registered single-look-complex image pair.
#[derive(Debug, Clone)]
pub struct SlcPair {
    pub s1: ComplexRaster,
    pub s2: ComplexRaster,
}

impl SlcPair {
    pub fn new(s1: ComplexRaster, s2: ComplexRaster) -> Result<Self> {
        if s1.width() != s2.width() || s1.height() != s2.height() {
            return Err(Error::ShapeMismatch);
        }
        Ok(Self { s1, s2 })
    }
}

/// Multiplicative coherence factors; each lies in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DecorrelationBudget {
    pub gamma_snr: f64,
    pub gamma_rg: f64,
    pub gamma_quant: f64,
    pub gamma_temp: f64,
    pub gamma_sensor: f64,
}

impl Default for DecorrelationBudget {
    fn default() -> Self {
        // gamma_temp = 1 is the bistatic assumption
        Self { gamma_snr: 1.0, gamma_rg: 1.0, gamma_quant: 1.0, gamma_temp: 1.0, gamma_sensor: 1.0 }
    }
}

impl DecorrelationBudget {
    pub fn validate(&self) -> Result<()> {
        for f in [self.gamma_snr, self.gamma_rg, self.gamma_quant, self.gamma_temp, self.gamma_sensor] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::BadBudgetFactor);
            }
        }
        Ok(())
    }

    /// Product of all non-volume factors.
    pub fn product(&self) -> f64 {
        self.gamma_snr * self.gamma_rg * self.gamma_quant * self.gamma_temp * self.gamma_sensor
    }
}

/// SNR decorrelation for a symmetric pair with linear SNR `snr`:
/// gamma_SNR = snr / (1 + snr).
pub fn snr_decorrelation(snr_linear: f64) -> Result<f64> {
    if !(snr_linear > 0.0) {
        return Err(Error::NonPositiveSnr);
    }
    Ok(snr_linear / (1.0 + snr_linear))
}

/// Boxcar maximum-likelihood coherence estimate over an odd window,
/// restricted to valid in-bounds neighbors (the window shrinks at edges).
pub fn estimate_coherence(pair: &SlcPair, window: usize) -> Result<ComplexRaster> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::BadWindow(window));
    }
    let w = pair.s1.width();
    let h = pair.s1.height();
    let half = window / 2;
    let s1 = &pair.s1;
    let s2 = &pair.s2;

    let rows: Vec<(Vec<Complex32>, Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|row| {
            let mut data = vec![Complex32::new(0.0, 0.0); w];
            let mut valid = vec![false; w];
            let r_lo = row.saturating_sub(half);
            let r_hi = (row + half).min(h - 1);
            for col in 0..w {
                if !s1.is_valid(row, col) || !s2.is_valid(row, col) {
                    continue;
                }
                let c_lo = col.saturating_sub(half);
                let c_hi = (col + half).min(w - 1);
                let mut num = Complex64::new(0.0, 0.0);
                let mut den1 = 0.0f64;
                let mut den2 = 0.0f64;
                for r in r_lo..=r_hi {
                    for c in c_lo..=c_hi {
                        if !s1.is_valid(r, c) || !s2.is_valid(r, c) {
                            continue;
                        }
                        let a = s1.get(r, c);
                        let b = s2.get(r, c);
                        let a = Complex64::new(f64::from(a.re), f64::from(a.im));
                        let b = Complex64::new(f64::from(b.re), f64::from(b.im));
                        num += a * b.conj();
                        den1 += a.norm_sqr();
                        den2 += b.norm_sqr();
                    }
                }
                if den1 <= 0.0 || den2 <= 0.0 {
                    continue;
                }
                let mut g = num / (den1 * den2).sqrt();
                let mag = g.norm();
                debug_assert!(mag <= 1.0 + 1e-6);
                if mag > 1.0 {
                    g /= mag;
                }
                data[col] = Complex32::new(g.re as f32, g.im as f32);
                valid[col] = true;
            }
            (data, valid)
        })
        .collect();

    let mut data = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for (d, v) in rows {
        data.extend(d);
        valid.extend(v);
    }
    ComplexRaster::new(w, h, data, valid)
}

/// Approximate volume decorrelation: |gamma| * gamma_rg / gamma_SNR per
/// pixel, clamped to [0, 1].
pub fn volume_decorrelation(gamma: &ComplexRaster, budget: &DecorrelationBudget) -> Result<ScalarRaster> {
    budget.validate()?;
    let n = gamma.width() * gamma.height();
    let mut data = vec![0.0f32; n];
    let valid = gamma.valid().to_vec();
    for i in 0..n {
        if valid[i] {
            let v = f64::from(gamma.data()[i].norm()) * budget.gamma_rg / budget.gamma_snr;
            data[i] = v.clamp(0.0, 1.0) as f32;
        }
    }
    ScalarRaster::new(gamma.width(), gamma.height(), data, valid)
}
