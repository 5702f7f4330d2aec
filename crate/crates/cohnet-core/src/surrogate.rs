//! Neural surrogate of the physical height inversion: a per-pixel MLP
//! mapping (volume decorrelation, kz) to forest height, trained on a dense
//! analytic grid of physical-model inversions.

use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::nn::{
    build_mlp, load_weights, save_weights, scheduled_lr, AdamState, Layer, Network, Tensor,
};
use crate::raster::ScalarRaster;
use crate::rng::Rng;
use crate::rvog::{invert_height_lut, invert_height_sinc, InversionLut, InversionMode, DEFAULT_TOL_M};

/// kz is divided by this before entering any network. Pinned to the f32
/// grid so it survives the weight-file metadata round trip exactly.
pub const KZ_SCALE: f64 = 0.15f32 as f64;
/// Training grid excludes the near-zero coherence region where the inversion
/// saturates at the ambiguity height and its derivative explodes.
pub const GAMMA_MIN: f64 = 0.02;
pub const DEFAULT_H_MAX: f64 = 60.0;

const MODEL_KIND_NSM: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NsmSample {
    pub gamma_vol: f64,
    pub kz: f64,
    pub target_height: f64,
}

/// Grid samples with an interleaved held-out split (every 7th sample) never
/// used in training.
#[derive(Debug, Clone)]
pub struct NsmDataset {
    pub train: Vec<NsmSample>,
    pub held_out: Vec<NsmSample>,
}

/// Dense grid of gamma_vol in [GAMMA_MIN, 1] times the given kz values;
/// targets are the physical inversion of each input.
pub fn build_nsm_dataset(
    kz_values: &[f64],
    grid_n: usize,
    mode: InversionMode,
    lut: Option<&InversionLut>,
) -> Result<NsmDataset> {
    if kz_values.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if grid_n < 2 {
        return Err(Error::InvalidParam("grid_n must be >= 2".into()));
    }
    let mut train = Vec::new();
    let mut held_out = Vec::new();
    let mut index = 0usize;
    for &kz in kz_values {
        for g in 0..grid_n {
            let gamma = GAMMA_MIN + (1.0 - GAMMA_MIN) * g as f64 / (grid_n - 1) as f64;
            let target = match mode {
                InversionMode::Sinc => invert_height_sinc(gamma, kz, DEFAULT_TOL_M)?,
                InversionMode::Lut => {
                    let l = lut.ok_or(Error::EmptyGrid)?;
                    invert_height_lut(Complex64::new(gamma, 0.0), l).0
                }
            };
            let sample = NsmSample { gamma_vol: gamma, kz, target_height: target };
            if index % 7 == 0 {
                held_out.push(sample);
            } else {
                train.push(sample);
            }
            index += 1;
        }
    }
    Ok(NsmDataset { train, held_out })
}

#[derive(Debug, Clone)]
pub struct NsmHyper {
    pub epochs: usize,
    pub batch: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub h_max: f64,
    pub hidden: Vec<usize>,
}

impl Default for NsmHyper {
    fn default() -> Self {
        Self { epochs: 1000, batch: 32, lr_start: 1e-3, lr_end: 1e-4, h_max: DEFAULT_H_MAX, hidden: vec![64, 64] }
    }
}

/// Trained surrogate with its normalization constants; self-contained for
/// prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct NsmModel {
    pub net: Network,
    pub h_max: f64,
    pub kz_scale: f64,
}

impl NsmModel {
    fn metadata(&self) -> Tensor {
        Tensor::new(vec![4], vec![MODEL_KIND_NSM, self.h_max, self.kz_scale, 0.0]).expect("fixed shape")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_weights(&self.net, &[self.metadata()], path)
    }

    /// Load into the default architecture (hidden sizes from the file are
    /// implied by the tensor shapes).
    pub fn load(path: &Path, hyper: &NsmHyper) -> Result<Self> {
        let mut net = build_mlp(2, &hyper.hidden, 1);
        let meta = load_weights(&mut net, 1, path)?;
        let m = meta[0].data();
        if m.len() != 4 || m[0] != MODEL_KIND_NSM {
            return Err(Error::WeightShapeMismatch);
        }
        Ok(Self { net, h_max: m[1], kz_scale: m[2] })
    }

    /// Raw (unclamped) height for one normalized-ready input pair.
    pub fn predict_sample(&self, gamma_vol: f64, kz: f64) -> Result<f64> {
        let x = Tensor::new(vec![2], vec![gamma_vol, kz / self.kz_scale])?;
        let cache = self.net.forward(&x)?;
        Ok(cache.output().data()[0] * self.h_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NsmReport {
    pub train_rmse: f64,
    pub held_out_rmse: f64,
}

fn sample_input(s: &NsmSample, h_max: f64) -> (Tensor, f64) {
    let x = Tensor::new(vec![2], vec![s.gamma_vol, s.kz / KZ_SCALE]).expect("fixed shape");
    (x, s.target_height / h_max)
}

/// RMSE in meters of the raw model against the physical targets.
pub fn nsm_rmse(model: &NsmModel, samples: &[NsmSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut se = 0.0;
    for s in samples {
        let pred = model.predict_sample(s.gamma_vol, s.kz)?;
        se += (pred - s.target_height).powi(2);
    }
    Ok((se / samples.len() as f64).sqrt())
}

/// Deterministic single-threaded training: Adam on the normalized squared
/// height error with a linear learning-rate schedule.
pub fn train_nsm(dataset: &NsmDataset, hyper: &NsmHyper, seed: u64) -> Result<(NsmModel, NsmReport)> {
    if dataset.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut net = build_mlp(2, &hyper.hidden, 1);
    net.init_weights(seed);
    let mut adam = AdamState::new(&net.params());
    let mut rng = Rng::new(seed, 100);
    let n = dataset.train.len();
    for epoch in 0..hyper.epochs {
        let lr = scheduled_lr(epoch, hyper.epochs, hyper.lr_start, hyper.lr_end);
        let perm = rng.permutation(n);
        let mut epoch_loss = 0.0;
        for chunk in perm.chunks(hyper.batch) {
            let mut grads: Option<Vec<Tensor>> = None;
            let mut batch_loss = 0.0;
            for &i in chunk {
                let (x, target) = sample_input(&dataset.train[i], hyper.h_max);
                let cache = net.forward(&x)?;
                let out = cache.output().data()[0];
                let err = out - target;
                batch_loss += err * err;
                let upstream = Tensor::new(vec![1], vec![2.0 * err / chunk.len() as f64])?;
                let (pg, _) = net.backward(&cache, &upstream)?;
                match &mut grads {
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&pg) {
                            a.add_assign(g);
                        }
                    }
                    slot => *slot = Some(pg),
                }
            }
            let grads = grads.expect("non-empty batch");
            for g in &grads {
                g.assert_finite("nsm gradient")?;
            }
            adam.step(&mut net.params_mut(), &grads, lr)?;
            epoch_loss += batch_loss / chunk.len() as f64;
        }
        if !epoch_loss.is_finite() {
            return Err(Error::NumericalAbort(format!("nsm loss at epoch {epoch}")));
        }
    }
    let model = NsmModel { net, h_max: hyper.h_max, kz_scale: KZ_SCALE };
    let report = NsmReport {
        train_rmse: nsm_rmse(&model, &dataset.train)?,
        held_out_rmse: nsm_rmse(&model, &dataset.held_out)?,
    };
    Ok((model, report))
}

// --- vectorized per-pixel application ---------------------------------------

/// Dense/ReLU stages of a per-pixel MLP, flattened for batched pixel work.
pub(crate) struct MlpStages<'a> {
    stages: Vec<(&'a Tensor, &'a Tensor, bool)>, // (w, b, relu_after)
    pub in_f: usize,
}

pub(crate) fn mlp_stages(net: &Network) -> Result<MlpStages<'_>> {
    let mut stages = Vec::new();
    let mut i = 0;
    while i < net.layers.len() {
        match &net.layers[i] {
            Layer::Dense { w, b, .. } => {
                let relu = matches!(net.layers.get(i + 1), Some(Layer::ReLU));
                stages.push((w, b, relu));
                i += if relu { 2 } else { 1 };
            }
            other => {
                return Err(Error::TensorShape(format!(
                    "per-pixel surrogate must be dense/relu only, found {other:?}"
                )))
            }
        }
    }
    if stages.is_empty() {
        return Err(Error::TensorShape("empty surrogate network".into()));
    }
    let in_f = stages[0].0.shape()[1];
    Ok(MlpStages { stages, in_f })
}

/// Forward a block of pixels; returns pre-activation inputs per stage plus
/// the final outputs, for use by `mlp_pixels_backward`.
pub(crate) fn mlp_pixels_forward(stages: &MlpStages, inputs: &[f64], n: usize) -> Vec<Vec<f64>> {
    debug_assert_eq!(inputs.len(), n * stages.in_f);
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(stages.stages.len() + 1);
    acts.push(inputs.to_vec());
    for (w, b, relu) in &stages.stages {
        let out_f = w.shape()[0];
        let in_f = w.shape()[1];
        let x = acts.last().unwrap();
        let wd = w.data();
        let bd = b.data();
        let mut y = vec![0.0f64; n * out_f];
        for p in 0..n {
            let xi = &x[p * in_f..(p + 1) * in_f];
            let yo = &mut y[p * out_f..(p + 1) * out_f];
            for o in 0..out_f {
                let row = &wd[o * in_f..(o + 1) * in_f];
                let mut acc = bd[o];
                for (wv, xv) in row.iter().zip(xi) {
                    acc += wv * xv;
                }
                yo[o] = if *relu { acc.max(0.0) } else { acc };
            }
        }
        acts.push(y);
    }
    acts
}

/// Input gradients for a block of pixels given upstream output gradients;
/// parameter gradients are not produced (frozen use).
pub(crate) fn mlp_pixels_backward(
    stages: &MlpStages,
    acts: &[Vec<f64>],
    upstream: &[f64],
    n: usize,
) -> Vec<f64> {
    let mut grad = upstream.to_vec();
    for (si, (w, _, relu)) in stages.stages.iter().enumerate().rev() {
        let out_f = w.shape()[0];
        let in_f = w.shape()[1];
        let wd = w.data();
        // relu derivative uses the stage output (post-activation)
        if *relu {
            let y = &acts[si + 1];
            for (g, &v) in grad.iter_mut().zip(y) {
                if v <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let mut gx = vec![0.0f64; n * in_f];
        for p in 0..n {
            let go = &grad[p * out_f..(p + 1) * out_f];
            let gi = &mut gx[p * in_f..(p + 1) * in_f];
            for o in 0..out_f {
                let row = &wd[o * in_f..(o + 1) * in_f];
                let g = go[o];
                if g == 0.0 {
                    continue;
                }
                for (giv, wv) in gi.iter_mut().zip(row) {
                    *giv += g * wv;
                }
            }
        }
        grad = gx;
    }
    grad
}

/// Pixel-wise surrogate prediction; invalid pixels propagate, outputs are
/// clamped to [0, h_max].
pub fn nsm_predict(model: &NsmModel, gamma_vol: &ScalarRaster, kz: &ScalarRaster) -> Result<ScalarRaster> {
    if gamma_vol.width() != kz.width() || gamma_vol.height() != kz.height() {
        return Err(Error::ShapeMismatch);
    }
    let stages = mlp_stages(&model.net)?;
    let w = gamma_vol.width();
    let h = gamma_vol.height();
    let rows: Vec<(Vec<f32>, Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|r| {
            let mut inputs = Vec::with_capacity(w * 2);
            for c in 0..w {
                inputs.push(f64::from(gamma_vol.get(r, c)));
                inputs.push(f64::from(kz.get(r, c)) / model.kz_scale);
            }
            let acts = mlp_pixels_forward(&stages, &inputs, w);
            let out = acts.last().unwrap();
            let mut data = vec![0.0f32; w];
            let mut valid = vec![false; w];
            for c in 0..w {
                if gamma_vol.is_valid(r, c) && kz.is_valid(r, c) {
                    data[c] = (out[c] * model.h_max).clamp(0.0, model.h_max) as f32;
                    valid[c] = true;
                }
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
    ScalarRaster::new(w, h, data, valid)
}

/// RMSE of each surrogate against the physical inversion on each region's
/// inputs. Rows are models, columns regions.
pub fn nsm_fidelity_matrix(
    models: &[(String, NsmModel)],
    regions: &[(String, Vec<crate::dataset::PatchSample>)],
) -> Result<Vec<Vec<f64>>> {
    if models.is_empty() || regions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut matrix = Vec::with_capacity(models.len());
    for (_, model) in models {
        let mut row = Vec::with_capacity(regions.len());
        for (_, samples) in regions {
            let mut se = 0.0f64;
            let mut count = 0usize;
            for s in samples {
                let pred = nsm_predict(model, &s.coherence, &s.kz)?;
                let oracle =
                    crate::rvog::invert_raster(&s.coherence, &s.kz, InversionMode::Sinc, None)?;
                for i in 0..pred.data().len() {
                    if pred.valid()[i] && oracle.valid()[i] {
                        let o = f64::from(oracle.data()[i]).clamp(0.0, model.h_max);
                        se += (f64::from(pred.data()[i]) - o).powi(2);
                        count += 1;
                    }
                }
            }
            if count == 0 {
                return Err(Error::NoValidPixels);
            }
            row.push((se / count as f64).sqrt());
        }
        matrix.push(row);
    }
    Ok(matrix)
}

/// CSV with a header row of column names and one row per model.
pub fn write_matrix_csv(
    row_names: &[String],
    col_names: &[String],
    matrix: &[Vec<f64>],
    path: &Path,
) -> Result<()> {
    let mut out = String::from("model");
    for c in col_names {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (name, row) in row_names.iter().zip(matrix) {
        out.push_str(name);
        for v in row {
            out.push_str(&format!(",{v:.6}"));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}
