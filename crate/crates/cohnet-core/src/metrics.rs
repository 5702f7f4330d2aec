//! Masked evaluation metrics and map/scatter exports.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::raster::ScalarRaster;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Meters.
    pub rmse: f64,
    pub r2: f64,
    pub n_valid: usize,
    /// Mean of estimate minus reference, meters.
    pub bias: f64,
}

fn paired_valid<'a>(
    pred: &'a ScalarRaster,
    reference: &'a ScalarRaster,
    mask: Option<&'a ScalarRaster>,
) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    if pred.width() != reference.width() || pred.height() != reference.height() {
        return Err(Error::ShapeMismatch);
    }
    if let Some(m) = mask {
        if m.width() != pred.width() || m.height() != pred.height() {
            return Err(Error::ShapeMismatch);
        }
    }
    Ok((0..pred.data().len()).filter_map(move |i| {
        let masked_in = mask.map_or(true, |m| m.valid()[i] && m.data()[i] > 0.5);
        if masked_in && pred.valid()[i] && reference.valid()[i] {
            Some((f64::from(pred.data()[i]), f64::from(reference.data()[i])))
        } else {
            None
        }
    }))
}

pub fn rmse(pred: &ScalarRaster, reference: &ScalarRaster, mask: Option<&ScalarRaster>) -> Result<f64> {
    let mut se = 0.0f64;
    let mut n = 0usize;
    for (p, r) in paired_valid(pred, reference, mask)? {
        se += (p - r) * (p - r);
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok((se / n as f64).sqrt())
}

pub fn r_squared(pred: &ScalarRaster, reference: &ScalarRaster, mask: Option<&ScalarRaster>) -> Result<f64> {
    let pairs: Vec<(f64, f64)> = paired_valid(pred, reference, mask)?.collect();
    if pairs.len() < 2 {
        return Err(Error::NoValidPixels);
    }
    let mean_ref = pairs.iter().map(|&(_, r)| r).sum::<f64>() / pairs.len() as f64;
    let ss_tot: f64 = pairs.iter().map(|&(_, r)| (r - mean_ref).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::ConstantReference);
    }
    let ss_res: f64 = pairs.iter().map(|&(p, r)| (r - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn metric_report(
    pred: &ScalarRaster,
    reference: &ScalarRaster,
    mask: Option<&ScalarRaster>,
) -> Result<MetricReport> {
    let pairs: Vec<(f64, f64)> = paired_valid(pred, reference, mask)?.collect();
    if pairs.is_empty() {
        return Err(Error::NoValidPixels);
    }
    let n = pairs.len();
    let se: f64 = pairs.iter().map(|&(p, r)| (p - r).powi(2)).sum();
    let bias = pairs.iter().map(|&(p, r)| p - r).sum::<f64>() / n as f64;
    let r2 = r_squared(pred, reference, mask).unwrap_or(f64::NEG_INFINITY);
    Ok(MetricReport { rmse: (se / n as f64).sqrt(), r2, n_valid: n, bias })
}

/// Two-column CSV (ref_m, pred_m), one row per valid pixel in row-major
/// order.
pub fn export_scatter(
    pred: &ScalarRaster,
    reference: &ScalarRaster,
    mask: Option<&ScalarRaster>,
    path: &Path,
) -> Result<usize> {
    let mut out = String::from("ref_m,pred_m\n");
    let mut n = 0usize;
    for (p, r) in paired_valid(pred, reference, mask)? {
        out.push_str(&format!("{r},{p}\n"));
        n += 1;
    }
    write_atomic(path, out.as_bytes())?;
    Ok(n)
}

/// Binary 8-bit PGM (P5) with floor quantization of [min, max] onto
/// [0, 255]; invalid pixels map to 0.
pub fn export_map_pgm(raster: &ScalarRaster, path: &Path, range: (f64, f64)) -> Result<()> {
    let (lo, hi) = range;
    if !(lo < hi) {
        return Err(Error::InvalidParam(format!("degenerate range [{lo}, {hi}]")));
    }
    let mut out = format!("P5\n{} {}\n255\n", raster.width(), raster.height()).into_bytes();
    for i in 0..raster.data().len() {
        let byte = if raster.valid()[i] {
            let t = (f64::from(raster.data()[i]) - lo) / (hi - lo);
            (t * 255.0).floor().clamp(0.0, 255.0) as u8
        } else {
            0
        };
        out.push(byte);
    }
    write_atomic(path, &out)
}
