//! Synthetic forest scenes and bistatic SLC pairs whose statistics follow
//! the RVoG model plus a decorrelation budget, providing ground-truth
//! heights in place of airborne LiDAR reference data.

use num_complex::{Complex32, Complex64};

use crate::coherence::{DecorrelationBudget, SlcPair};
use crate::error::{Error, Result};
use crate::raster::{ComplexRaster, ScalarRaster};
use crate::rng::Rng;
use crate::rvog::{ambiguity_height, rvog_total_coherence, RvogParams, DEFAULT_THETA};

// rng stream ids per purpose
const STREAM_HEIGHT: u64 = 0;
const STREAM_MASK: u64 = 1;
const STREAM_KZ: u64 = 2;
const STREAM_REFERENCE: u64 = 3;
const STREAM_SLC: u64 = 10;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Mean forest height in meters.
    pub mean_height: f64,
    /// Height standard deviation in meters.
    pub height_spread: f64,
    pub h_max: f64,
    /// Spatial scale of the Gaussian low-pass, pixels.
    pub correlation_length: f64,
    pub forest_fraction: f64,
    /// Per-scene vertical wavenumber is drawn uniformly from this range.
    pub kz_range: (f64, f64),
    pub budget: DecorrelationBudget,
    pub sigma: f64,
    pub theta: f64,
    pub mu: f64,
    pub z0: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 256,
            height: 256,
            mean_height: 33.0,
            height_spread: 10.0,
            h_max: 60.0,
            correlation_length: 24.0,
            forest_fraction: 0.85,
            kz_range: (0.06, 0.12),
            budget: DecorrelationBudget::default(),
            sigma: 0.0,
            theta: DEFAULT_THETA,
            mu: 0.0,
            z0: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_height >= 0.0 && self.mean_height <= self.h_max) {
            return Err(Error::InvalidParam("mean_height must lie in [0, h_max]".into()));
        }
        if !(self.kz_range.0 > 0.0 && self.kz_range.0 <= self.kz_range.1) {
            return Err(Error::InvalidParam("kz_range must be positive and ordered".into()));
        }
        if !(0.0..=1.0).contains(&self.forest_fraction) {
            return Err(Error::InvalidParam("forest_fraction must lie in [0, 1]".into()));
        }
        if !(self.height_spread >= 0.0) {
            return Err(Error::InvalidParam("height_spread must be >= 0".into()));
        }
        if !(self.correlation_length > 0.0) {
            return Err(Error::InvalidParam("correlation_length must be positive".into()));
        }
        self.budget.validate()
    }
}

/// Ground truth stack for one scene: heights, forest mask, kz, and the
/// per-pixel target coherence (budget product times the RVoG forward model).
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub height_map: ScalarRaster,
    /// 1.0 on forest pixels, 0.0 elsewhere; valid everywhere.
    pub forest_mask: ScalarRaster,
    pub kz_map: ScalarRaster,
    pub true_gamma_map: ComplexRaster,
    pub kz: f64,
    pub config: SimConfig,
}

fn normal_field(rng: &mut Rng, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    while out.len() < n {
        let (a, b) = rng.normal_pair();
        out.push(a);
        out.push(b);
    }
    out.truncate(n);
    out
}

/// Separable Gaussian blur; the kernel is renormalized at image borders.
fn gaussian_blur(field: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp())
        .collect();
    let mut tmp = vec![0.0f64; field.len()];
    for r in 0..height {
        for c in 0..width {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (ki, k) in (-radius..=radius).enumerate() {
                let cc = c as i64 + k;
                if cc < 0 || cc >= width as i64 {
                    continue;
                }
                acc += kernel[ki] * field[r * width + cc as usize];
                wsum += kernel[ki];
            }
            tmp[r * width + c] = acc / wsum;
        }
    }
    let mut out = vec![0.0f64; field.len()];
    for r in 0..height {
        for c in 0..width {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (ki, k) in (-radius..=radius).enumerate() {
                let rr = r as i64 + k;
                if rr < 0 || rr >= height as i64 {
                    continue;
                }
                acc += kernel[ki] * tmp[rr as usize * width + c];
                wsum += kernel[ki];
            }
            out[r * width + c] = acc / wsum;
        }
    }
    out
}

/// Spectral-synthesis height field: seeded white noise, Gaussian low-pass of
/// scale `correlation_length`, affine rescale to the target mean and spread,
/// clamped to [2, h_max] on forest pixels; non-forest heights are zero.
pub fn synth_height_field(config: &SimConfig) -> Result<(ScalarRaster, ScalarRaster)> {
    config.validate()?;
    let (w, h) = (config.width, config.height);
    let n = w * h;

    let mut rng_h = Rng::new(config.seed, STREAM_HEIGHT);
    let noise = normal_field(&mut rng_h, n);
    let smooth = gaussian_blur(&noise, w, h, config.correlation_length);

    let mean: f64 = smooth.iter().sum::<f64>() / n as f64;
    let var: f64 = smooth.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    let heights: Vec<f64> = if config.height_spread == 0.0 || std == 0.0 {
        vec![config.mean_height; n]
    } else {
        smooth
            .iter()
            .map(|v| config.mean_height + (v - mean) / std * config.height_spread)
            .collect()
    };

    // independently filtered field thresholded to the forest fraction
    let mut rng_m = Rng::new(config.seed, STREAM_MASK);
    let mask_noise = normal_field(&mut rng_m, n);
    let mask_field = gaussian_blur(&mask_noise, w, h, config.correlation_length);
    let k = (config.forest_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| mask_field[b].partial_cmp(&mask_field[a]).unwrap().then(a.cmp(&b)));
    let mut forest = vec![false; n];
    for &i in order.iter().take(k) {
        forest[i] = true;
    }

    let mut hdata = vec![0.0f32; n];
    let mut mdata = vec![0.0f32; n];
    for i in 0..n {
        if forest[i] {
            hdata[i] = heights[i].clamp(2.0, config.h_max) as f32;
            mdata[i] = 1.0;
        }
    }
    Ok((
        ScalarRaster::new(w, h, hdata, vec![true; n])?,
        ScalarRaster::new(w, h, mdata, vec![true; n])?,
    ))
}

/// Build the full ground-truth scene: height field, constant-per-scene kz
/// drawn from the configured range, and the per-pixel target coherence.
pub fn make_scene(config: &SimConfig) -> Result<SyntheticScene> {
    let (height_map, forest_mask) = synth_height_field(config)?;
    let (w, h) = (config.width, config.height);
    let n = w * h;

    let mut rng_kz = Rng::new(config.seed, STREAM_KZ);
    let kz = rng_kz.uniform(config.kz_range.0, config.kz_range.1);
    let kz_map = ScalarRaster::filled(w, h, kz as f32)?;

    let budget = config.budget.product();
    // heights taller than the ambiguity height saturate at the branch edge
    // in the forward model; the stored truth keeps the full value
    let hv_cap = ambiguity_height(kz) * (1.0 - 1e-9);
    let mut gamma = Vec::with_capacity(n);
    for i in 0..n {
        let hv = f64::from(height_map.data()[i]).min(hv_cap);
        let params = RvogParams::new(hv, config.sigma, config.mu, config.z0, config.theta, kz)?;
        let g: Complex64 = rvog_total_coherence(&params) * budget;
        gamma.push(Complex32::new(g.re as f32, g.im as f32));
    }
    let true_gamma_map = ComplexRaster::new(w, h, gamma, vec![true; n])?;
    Ok(SyntheticScene { height_map, forest_mask, kz_map, true_gamma_map, kz, config: config.clone() })
}

/// Draw a correlated circular-Gaussian SLC pair whose expected coherence is
/// exactly the scene's target coherence:
/// s1 = n1, s2 = conj(gamma) * n1 + sqrt(1 - |gamma|^2) * n2.
pub fn simulate_slc_pair(scene: &SyntheticScene, seed: u64) -> Result<SlcPair> {
    let w = scene.true_gamma_map.width();
    let h = scene.true_gamma_map.height();
    let n = w * h;
    let mut rng = Rng::new(seed, STREAM_SLC);
    let mut d1 = Vec::with_capacity(n);
    let mut d2 = Vec::with_capacity(n);
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..n {
        let (a1, b1) = rng.normal_pair();
        let (a2, b2) = rng.normal_pair();
        let n1 = Complex64::new(a1 * inv_sqrt2, b1 * inv_sqrt2);
        let n2 = Complex64::new(a2 * inv_sqrt2, b2 * inv_sqrt2);
        let gc = scene.true_gamma_map.data()[i];
        let g = Complex64::new(f64::from(gc.re), f64::from(gc.im));
        let s2 = g.conj() * n1 + (1.0 - g.norm_sqr()).max(0.0).sqrt() * n2;
        d1.push(Complex32::new(n1.re as f32, n1.im as f32));
        d2.push(Complex32::new(s2.re as f32, s2.im as f32));
    }
    SlcPair::new(
        ComplexRaster::new(w, h, d1, vec![true; n])?,
        ComplexRaster::new(w, h, d2, vec![true; n])?,
    )
}

/// Reference heights standing in for LiDAR coverage: truth plus Gaussian
/// noise on forest pixels, clamped at zero; non-forest pixels invalid.
pub fn make_reference_heights(scene: &SyntheticScene, noise_std: f64) -> Result<ScalarRaster> {
    if noise_std < 0.0 {
        return Err(Error::InvalidParam("noise_std must be >= 0".into()));
    }
    let w = scene.height_map.width();
    let h = scene.height_map.height();
    let n = w * h;
    let mut rng = Rng::new(scene.config.seed, STREAM_REFERENCE);
    let mut data = vec![0.0f32; n];
    let mut valid = vec![false; n];
    for i in 0..n {
        // fixed consumption order: one draw per pixel regardless of mask
        let noise = rng.normal();
        if scene.forest_mask.data()[i] > 0.5 {
            let v = f64::from(scene.height_map.data()[i]) + noise * noise_std;
            data[i] = v.max(0.0) as f32;
            valid[i] = true;
        }
    }
    ScalarRaster::new(w, h, data, valid)
}
