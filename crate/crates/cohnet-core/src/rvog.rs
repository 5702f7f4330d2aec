//! Random Volume over Ground model: forward volume coherence, the sinc
//! amplitude simplification, and height inversion (bisection and LUT).

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::raster::ScalarRaster;

/// Default incidence angle, 45 degrees.
pub const DEFAULT_THETA: f64 = std::f64::consts::FRAC_PI_4;
/// Default bisection tolerance in meters.
pub const DEFAULT_TOL_M: f64 = 1e-3;
const MAX_BISECT_ITERS: usize = 200;

/// Physical model state. Heights are confined to the first interferometric
/// branch [0, 2*pi/kz).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RvogParams {
    /// Canopy height, meters.
    pub hv: f64,
    /// Extinction coefficient, 1/m.
    pub sigma: f64,
    /// Ground-to-volume amplitude ratio.
    pub mu: f64,
    /// Ground elevation, meters.
    pub z0: f64,
    /// Incidence angle, radians.
    pub theta: f64,
    /// Vertical wavenumber, rad/m.
    pub kz: f64,
}

impl RvogParams {
    pub fn new(hv: f64, sigma: f64, mu: f64, z0: f64, theta: f64, kz: f64) -> Result<Self> {
        if !(kz > 0.0) {
            return Err(Error::InvalidParam(format!("kz must be positive, got {kz}")));
        }
        if !(theta > 0.0 && theta < std::f64::consts::FRAC_PI_2) {
            return Err(Error::InvalidParam(format!("theta must lie in (0, pi/2), got {theta}")));
        }
        let h_max = ambiguity_height(kz) - 1e-9;
        if !(hv >= 0.0 && hv <= h_max) {
            return Err(Error::InvalidParam(format!("hv must lie in [0, {h_max:.3}], got {hv}")));
        }
        if !(sigma >= 0.0) {
            return Err(Error::InvalidParam(format!("sigma must be >= 0, got {sigma}")));
        }
        if !(mu >= 0.0) {
            return Err(Error::InvalidParam(format!("mu must be >= 0, got {mu}")));
        }
        if !z0.is_finite() {
            return Err(Error::InvalidParam("z0 must be finite".into()));
        }
        Ok(Self { hv, sigma, mu, z0, theta, kz })
    }
}

/// Height of ambiguity 2*pi/kz.
pub fn ambiguity_height(kz: f64) -> f64 {
    2.0 * std::f64::consts::PI / kz
}

/// Volume-only coherence of an exponential-extinction profile
/// f(z) = exp(2*sigma*z/cos(theta)):
/// e^{i kz z0} * I1/I0 with I1 = (e^{(p+i kz) hv} - 1)/(p + i kz),
/// I0 = (e^{p hv} - 1)/p, p = 2*sigma/cos(theta). The sigma = 0 limit is
/// (e^{i kz hv} - 1)/(i kz hv).
pub fn rvog_volume_coherence(params: &RvogParams) -> Complex64 {
    let phase = Complex64::from_polar(1.0, params.kz * params.z0);
    phase * volume_ratio(params)
}

fn volume_ratio(params: &RvogParams) -> Complex64 {
    let hv = params.hv;
    let kz = params.kz;
    if hv == 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    let mut g = if params.sigma == 0.0 {
        let ikzh = Complex64::new(0.0, kz * hv);
        (ikzh.exp() - 1.0) / ikzh
    } else {
        let p = 2.0 * params.sigma / params.theta.cos();
        let q = Complex64::new(p, kz);
        let i1 = ((q * hv).exp() - 1.0) / q;
        let i0 = ((p * hv).exp() - 1.0) / p;
        i1 / i0
    };
    let mag = g.norm();
    if mag > 1.0 {
        g /= mag;
    }
    g
}

/// Two-layer RVoG coherence: e^{i kz z0} * (gamma_v + mu) / (1 + mu), with
/// gamma_v the volume-only term at z0 = 0. mu = 0 reduces bit-for-bit to
/// `rvog_volume_coherence`.
pub fn rvog_total_coherence(params: &RvogParams) -> Complex64 {
    let phase = Complex64::from_polar(1.0, params.kz * params.z0);
    let gv = volume_ratio(params);
    phase * ((gv + params.mu) / (1.0 + params.mu))
}

/// |sinc(kz*hv/2)| on the first branch, 1 at hv = 0.
pub fn sinc_magnitude(hv: f64, kz: f64) -> Result<f64> {
    if !(kz > 0.0) {
        return Err(Error::InvalidParam(format!("kz must be positive, got {kz}")));
    }
    if !(hv >= 0.0 && hv <= ambiguity_height(kz)) {
        return Err(Error::InvalidParam(format!(
            "hv = {hv} outside the first sinc branch [0, {}]",
            ambiguity_height(kz)
        )));
    }
    if hv == 0.0 {
        return Ok(1.0);
    }
    let x = kz * hv / 2.0;
    Ok((x.sin() / x).abs())
}

/// Invert the sinc magnitude on its first monotone branch by bisection.
pub fn invert_height_sinc(gamma_vol_mag: f64, kz: f64, tol: f64) -> Result<f64> {
    if !(kz > 0.0) {
        return Err(Error::InvalidParam(format!("kz must be positive, got {kz}")));
    }
    if !(0.0..=1.0).contains(&gamma_vol_mag) {
        return Err(Error::InvalidParam(format!("gamma must lie in [0,1], got {gamma_vol_mag}")));
    }
    let h_amb = ambiguity_height(kz);
    if gamma_vol_mag >= 1.0 {
        return Ok(0.0);
    }
    if gamma_vol_mag <= 0.0 {
        return Ok(h_amb);
    }
    let mut lo = 0.0f64;
    let mut hi = h_amb;
    for _ in 0..MAX_BISECT_ITERS {
        let mid = 0.5 * (lo + hi);
        let f = sinc_magnitude(mid, kz)?;
        // sinc magnitude is strictly decreasing on the branch
        if f > gamma_vol_mag {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= tol {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Precomputed forward-model table over (hv, sigma) for one acquisition
/// geometry; entries are complex total coherences with z0 = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct InversionLut {
    pub kz: f64,
    pub theta: f64,
    pub mu: f64,
    pub hv_grid: Vec<f64>,
    pub sigma_grid: Vec<f64>,
    /// Row-major, hv-major: table[i * sigma_grid.len() + j].
    pub table: Vec<Complex64>,
}

fn check_ascending(grid: &[f64]) -> bool {
    !grid.is_empty() && grid.windows(2).all(|w| w[0] < w[1])
}

pub fn build_inversion_lut(
    kz: f64,
    hv_grid: &[f64],
    sigma_grid: &[f64],
    theta: f64,
    mu: f64,
) -> Result<InversionLut> {
    if hv_grid.is_empty() || sigma_grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if (hv_grid.len() > 1 && !check_ascending(hv_grid))
        || (sigma_grid.len() > 1 && !check_ascending(sigma_grid))
    {
        return Err(Error::EmptyGrid);
    }
    let mut table = Vec::with_capacity(hv_grid.len() * sigma_grid.len());
    for &hv in hv_grid {
        for &sigma in sigma_grid {
            let params = RvogParams::new(hv, sigma, mu, 0.0, theta, kz)?;
            table.push(rvog_total_coherence(&params));
        }
    }
    Ok(InversionLut { kz, theta, mu, hv_grid: hv_grid.to_vec(), sigma_grid: sigma_grid.to_vec(), table })
}

/// Nearest-entry LUT inversion; ties break toward smaller hv, then smaller
/// sigma (first occurrence in hv-major order).
pub fn invert_height_lut(gamma_obs: Complex64, lut: &InversionLut) -> (f64, f64) {
    let ns = lut.sigma_grid.len();
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, &entry) in lut.table.iter().enumerate() {
        let d = (entry - gamma_obs).norm_sqr();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    (lut.hv_grid[best / ns], lut.sigma_grid[best % ns])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InversionMode {
    Sinc,
    Lut,
}

/// Pixel-wise height inversion. Per-pixel precondition failures mark the
/// pixel invalid rather than failing globally.
pub fn invert_raster(
    gamma_vol: &ScalarRaster,
    kz: &ScalarRaster,
    mode: InversionMode,
    lut: Option<&InversionLut>,
) -> Result<ScalarRaster> {
    if gamma_vol.width() != kz.width() || gamma_vol.height() != kz.height() {
        return Err(Error::ShapeMismatch);
    }
    let n = gamma_vol.data().len();
    let out: Vec<(f32, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            if !gamma_vol.valid()[i] || !kz.valid()[i] {
                return (0.0, false);
            }
            let g = f64::from(gamma_vol.data()[i]).clamp(0.0, 1.0);
            let k = f64::from(kz.data()[i]);
            if !(k > 0.0) {
                return (0.0, false);
            }
            match mode {
                InversionMode::Sinc => match invert_height_sinc(g, k, DEFAULT_TOL_M) {
                    Ok(h) => (h as f32, true),
                    Err(_) => (0.0, false),
                },
                InversionMode::Lut => match lut {
                    Some(l) => {
                        let (h, _) = invert_height_lut(Complex64::new(g, 0.0), l);
                        (h as f32, true)
                    }
                    None => (0.0, false),
                },
            }
        })
        .collect();
    let data = out.iter().map(|&(v, _)| v).collect();
    let valid = out.iter().map(|&(_, v)| v).collect();
    ScalarRaster::new(gamma_vol.width(), gamma_vol.height(), data, valid)
}

// --- LUT serialization (CLUT, little-endian) --------------------------------

pub const LUT_MAGIC: &[u8; 4] = b"CLUT";

pub fn lut_bytes(lut: &InversionLut) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(LUT_MAGIC);
    out.extend_from_slice(&(lut.hv_grid.len() as u32).to_le_bytes());
    out.extend_from_slice(&(lut.sigma_grid.len() as u32).to_le_bytes());
    out.extend_from_slice(&lut.kz.to_le_bytes());
    out.extend_from_slice(&lut.theta.to_le_bytes());
    out.extend_from_slice(&lut.mu.to_le_bytes());
    for v in lut.hv_grid.iter().chain(&lut.sigma_grid) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for c in &lut.table {
        out.extend_from_slice(&c.re.to_le_bytes());
        out.extend_from_slice(&c.im.to_le_bytes());
    }
    out
}

pub fn write_lut(lut: &InversionLut, path: &std::path::Path) -> Result<()> {
    write_atomic(path, &lut_bytes(lut))
}

pub fn parse_lut(bytes: &[u8]) -> Result<InversionLut> {
    if bytes.len() < 4 {
        return Err(Error::Truncated);
    }
    if &bytes[0..4] != LUT_MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 36 {
        return Err(Error::Truncated);
    }
    let nh = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let ns = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mut off = 12;
    let read_f64 = |bytes: &[u8], off: &mut usize| -> Result<f64> {
        if bytes.len() < *off + 8 {
            return Err(Error::Truncated);
        }
        let v = f64::from_le_bytes(bytes[*off..*off + 8].try_into().unwrap());
        *off += 8;
        Ok(v)
    };
    let kz = read_f64(bytes, &mut off)?;
    let theta = read_f64(bytes, &mut off)?;
    let mu = read_f64(bytes, &mut off)?;
    let mut hv_grid = Vec::with_capacity(nh);
    for _ in 0..nh {
        hv_grid.push(read_f64(bytes, &mut off)?);
    }
    let mut sigma_grid = Vec::with_capacity(ns);
    for _ in 0..ns {
        sigma_grid.push(read_f64(bytes, &mut off)?);
    }
    let mut table = Vec::with_capacity(nh * ns);
    for _ in 0..nh * ns {
        let re = read_f64(bytes, &mut off)?;
        let im = read_f64(bytes, &mut off)?;
        table.push(Complex64::new(re, im));
    }
    Ok(InversionLut { kz, theta, mu, hv_grid, sigma_grid, table })
}

pub fn read_lut(path: &std::path::Path) -> Result<InversionLut> {
    parse_lut(&std::fs::read(path)?)
}
