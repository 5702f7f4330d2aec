//! End-to-end training of height estimators on patch datasets: the two-stage
//! pipeline (coherence-correction network feeding a frozen surrogate of the
//! physical inversion) and a direct-regression baseline, plus cross-region
//! evaluation.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::dataset::{load_patches, Manifest, PatchRecord, PatchSample, SceneMeta};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::metrics::{metric_report, MetricReport};
use crate::nn::{
    apply_weights, build_unet, save_weights, scheduled_lr, AdamState, Layer, Network,
    OutActivation, Tensor, WeightFile,
};
use crate::raster::{reassemble_patches, ScalarRaster};
use crate::rng::Rng;
use crate::sim::SimConfig;
use crate::surrogate::{mlp_pixels_backward, mlp_pixels_forward, mlp_stages, MlpStages, NsmModel, KZ_SCALE};

pub const UNET_BASE_CHANNELS: usize = 8;
pub const UNET_DEPTH: usize = 2;
const MODEL_KIND_COHNET: f64 = 1.0;
const MODEL_KIND_DIRECT: f64 = 2.0;

/// Batch objective. `BatchRmse` is the square root of the mean squared
/// error over all valid pixels in the batch; `ScaledAbsSum` is the sum of
/// absolute errors divided by the square root of the pixel count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    BatchRmse,
    ScaledAbsSum,
}

#[derive(Debug, Clone)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub h_max: f64,
    pub loss: LossKind,
    /// When false the network sees only the coherence channel; kz still
    /// reaches the surrogate.
    pub kz_input: bool,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch: 8,
            lr_start: 1e-3,
            lr_end: 1e-4,
            h_max: 60.0,
            loss: LossKind::BatchRmse,
            kz_input: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

pub fn write_training_log(logs: &[EpochLog], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,train_loss,lr,wall_seconds\n");
    for l in logs {
        out.push_str(&format!("{},{:.8},{:.8},{:.3}\n", l.epoch, l.train_loss, l.lr, l.wall_seconds));
    }
    write_atomic(path, out.as_bytes())
}

/// Patch unpacked into network-ready buffers. Invalid input pixels are
/// zeroed in the tensor and excluded from the loss via `valid`.
struct TrainSample {
    input: Tensor,
    kz_norm: Vec<f64>,
    target: Vec<f64>,
    valid: Vec<bool>,
    width: usize,
    height: usize,
}

fn prepare_sample(s: &PatchSample, kz_input: bool) -> Result<TrainSample> {
    let (w, h) = (s.coherence.width(), s.coherence.height());
    if s.kz.width() != w || s.kz.height() != h || s.reference.width() != w || s.reference.height() != h {
        return Err(Error::ShapeMismatch);
    }
    let n = w * h;
    let channels = if kz_input { 2 } else { 1 };
    let mut data = vec![0.0f64; channels * n];
    let mut kz_norm = vec![0.0f64; n];
    let mut target = vec![0.0f64; n];
    let mut valid = vec![false; n];
    for i in 0..n {
        let coh_ok = s.coherence.valid()[i];
        let kz_ok = s.kz.valid()[i];
        if coh_ok {
            data[i] = f64::from(s.coherence.data()[i]);
        }
        if kz_ok {
            let kn = f64::from(s.kz.data()[i]) / KZ_SCALE;
            if kz_input {
                data[n + i] = kn;
            }
            kz_norm[i] = kn;
        }
        if coh_ok && kz_ok && s.reference.valid()[i] {
            target[i] = f64::from(s.reference.data()[i]);
            valid[i] = true;
        }
    }
    Ok(TrainSample { input: Tensor::new(vec![channels, h, w], data)?, kz_norm, target, valid, width: w, height: h })
}

/// Input channel count of a trained backbone, read off its first
/// convolution.
fn input_channels(net: &Network) -> usize {
    for layer in &net.layers {
        if let Layer::Conv3x3 { w, .. } = layer {
            return w.shape()[1];
        }
    }
    2
}

enum Head<'a> {
    /// Frozen per-pixel surrogate; raw heights are clamped to [0, h_max].
    Surrogate { stages: MlpStages<'a>, h_max: f64 },
    /// Sigmoid network output scaled to [0, h_max].
    Scaled { h_max: f64 },
}

enum HeadCache {
    Surrogate { acts: Vec<Vec<f64>>, h_raw: Vec<f64> },
    Scaled,
}

fn head_forward(head: &Head, net_out: &[f64], sample: &TrainSample) -> (Vec<f64>, HeadCache) {
    let n = sample.width * sample.height;
    debug_assert_eq!(net_out.len(), n);
    match head {
        Head::Surrogate { stages, h_max } => {
            let mut inputs = Vec::with_capacity(2 * n);
            for p in 0..n {
                inputs.push(net_out[p]);
                inputs.push(sample.kz_norm[p]);
            }
            let acts = mlp_pixels_forward(stages, &inputs, n);
            let h_raw: Vec<f64> = acts.last().unwrap().iter().map(|&v| v * h_max).collect();
            let pred = h_raw.iter().map(|&v| v.clamp(0.0, *h_max)).collect();
            (pred, HeadCache::Surrogate { acts, h_raw })
        }
        Head::Scaled { h_max } => (net_out.iter().map(|&v| v * h_max).collect(), HeadCache::Scaled),
    }
}

/// Gradient of the loss with respect to the network output, given the
/// gradient with respect to the predicted heights.
fn head_backward(head: &Head, cache: &HeadCache, grad_pred: &[f64], n: usize) -> Vec<f64> {
    match (head, cache) {
        (Head::Surrogate { stages, h_max }, HeadCache::Surrogate { acts, h_raw }) => {
            let upstream: Vec<f64> = grad_pred
                .iter()
                .zip(h_raw)
                .map(|(&g, &h)| if h > 0.0 && h < *h_max { g * h_max } else { 0.0 })
                .collect();
            let gx = mlp_pixels_backward(stages, acts, &upstream, n);
            (0..n).map(|p| gx[p * 2]).collect()
        }
        (Head::Scaled { h_max }, HeadCache::Scaled) => grad_pred.iter().map(|&g| g * h_max).collect(),
        _ => unreachable!("head/cache mismatch"),
    }
}

fn batch_loss_and_grads(errors: &[f64], n_valid: usize, loss: LossKind) -> (f64, Vec<f64>) {
    let nf = n_valid as f64;
    match loss {
        LossKind::BatchRmse => {
            let sum_sq: f64 = errors.iter().map(|e| e * e).sum();
            let l = (sum_sq / nf).sqrt();
            let grads = if l > 0.0 {
                errors.iter().map(|e| e / (nf * l)).collect()
            } else {
                vec![0.0; errors.len()]
            };
            (l, grads)
        }
        LossKind::ScaledAbsSum => {
            let l: f64 = errors.iter().map(|e| e.abs()).sum::<f64>() / nf.sqrt();
            (l, errors.iter().map(|e| e.signum() / nf.sqrt()).collect())
        }
    }
}

/// One optimization step's worth of work: forward the whole batch, compute
/// the masked batch loss, and return it with the summed parameter gradients
/// (fixed summation order). `None` when the batch has no valid pixels.
fn batch_step(
    net: &Network,
    head: &Head,
    batch: &[&TrainSample],
    loss: LossKind,
) -> Result<Option<(f64, Vec<Tensor>)>> {
    // forward every sample in the batch, keeping the caches for the
    // backward phase
    let fwd: Result<Vec<_>> = batch
        .par_iter()
        .map(|s| {
            let cache = net.forward(&s.input)?;
            let (pred, head_cache) = head_forward(head, cache.output().data(), s);
            Ok((*s, cache, head_cache, pred))
        })
        .collect();
    let fwd = fwd?;
    let mut errors = Vec::new();
    for (s, _, _, pred) in &fwd {
        for p in 0..pred.len() {
            if s.valid[p] {
                errors.push(pred[p] - s.target[p]);
            }
        }
    }
    if errors.is_empty() {
        return Ok(None);
    }
    let (loss_value, err_grads) = batch_loss_and_grads(&errors, errors.len(), loss);
    if !loss_value.is_finite() {
        return Err(Error::NumericalAbort("training loss".into()));
    }
    // scatter the flat per-error gradients back onto each sample
    let mut offsets = Vec::with_capacity(fwd.len());
    let mut cursor = 0usize;
    for (s, _, _, _) in &fwd {
        offsets.push(cursor);
        cursor += s.valid.iter().filter(|&&v| v).count();
    }
    let sample_grads: Result<Vec<Vec<Tensor>>> = fwd
        .par_iter()
        .zip(&offsets)
        .map(|((s, cache, head_cache, pred), &off)| {
            let n = pred.len();
            let mut grad_pred = vec![0.0f64; n];
            let mut k = off;
            for p in 0..n {
                if s.valid[p] {
                    grad_pred[p] = err_grads[k];
                    k += 1;
                }
            }
            let g_out = head_backward(head, head_cache, &grad_pred, n);
            let grad_tensor = Tensor::new(vec![1, s.height, s.width], g_out)?;
            let (pg, _) = net.backward(cache, &grad_tensor)?;
            Ok(pg)
        })
        .collect();
    let sample_grads = sample_grads?;
    let mut total = sample_grads[0].clone();
    for pg in &sample_grads[1..] {
        for (a, g) in total.iter_mut().zip(pg) {
            a.add_assign(g);
        }
    }
    Ok(Some((loss_value, total)))
}

/// Loss and parameter gradients of the correction network for one batch,
/// exactly as computed inside `train_cohnet`. Exposed so the composed
/// pipeline gradient can be verified externally.
pub fn cohnet_batch_step(
    net: &Network,
    nsm: &NsmModel,
    samples: &[PatchSample],
    loss: LossKind,
) -> Result<(f64, Vec<Tensor>)> {
    let kz_input = input_channels(net) == 2;
    let prepared: Result<Vec<_>> = samples.iter().map(|s| prepare_sample(s, kz_input)).collect();
    let prepared = prepared?;
    let refs: Vec<&TrainSample> = prepared.iter().collect();
    let head = Head::Surrogate { stages: mlp_stages(&nsm.net)?, h_max: nsm.h_max };
    batch_step(net, &head, &refs, loss)?.ok_or(Error::NoValidPixels)
}

fn train_net(
    samples: &[TrainSample],
    head: &Head,
    hyper: &TrainHyper,
    seed: u64,
) -> Result<(Network, Vec<EpochLog>)> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if samples.iter().all(|s| !s.valid.iter().any(|&v| v)) {
        return Err(Error::NoValidPixels);
    }
    let out_act = match head {
        Head::Surrogate { .. } | Head::Scaled { .. } => OutActivation::Sigmoid,
    };
    let in_ch = samples[0].input.shape()[0];
    let mut net = build_unet(in_ch, UNET_BASE_CHANNELS, UNET_DEPTH, out_act);
    net.init_weights(seed);
    let mut adam = AdamState::new(&net.params());
    let mut rng = Rng::new(seed, 200);
    let start = Instant::now();
    let mut logs = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let lr = scheduled_lr(epoch, hyper.epochs, hyper.lr_start, hyper.lr_end);
        let perm = rng.permutation(samples.len());
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in perm.chunks(hyper.batch) {
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let Some((loss, total)) = batch_step(&net, head, &batch, hyper.loss)? else {
                continue;
            };
            for g in &total {
                g.assert_finite("training gradient")?;
            }
            adam.step(&mut net.params_mut(), &total, lr)?;
            epoch_loss += loss;
            batches += 1;
        }
        logs.push(EpochLog {
            epoch,
            train_loss: epoch_loss / batches.max(1) as f64,
            lr,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((net, logs))
}

/// Two-stage pipeline (correction network plus frozen surrogate) or direct
/// regression baseline.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Cohnet { first: Network, nsm: NsmModel },
    Direct { net: Network, h_max: f64 },
}

/// Train the correction network through the frozen surrogate. The surrogate
/// receives no parameter updates; gradients flow through it into the
/// correction network only.
pub fn train_cohnet(
    samples: &[PatchSample],
    nsm: &NsmModel,
    hyper: &TrainHyper,
    seed: u64,
) -> Result<(TrainedModel, Vec<EpochLog>)> {
    let prepared: Result<Vec<_>> =
        samples.iter().map(|s| prepare_sample(s, hyper.kz_input)).collect();
    let head = Head::Surrogate { stages: mlp_stages(&nsm.net)?, h_max: nsm.h_max };
    let (first, logs) = train_net(&prepared?, &head, hyper, seed)?;
    Ok((TrainedModel::Cohnet { first, nsm: nsm.clone() }, logs))
}

/// Train the direct-regression baseline: the same backbone predicting
/// height directly as sigmoid output times h_max.
pub fn train_direct(
    samples: &[PatchSample],
    hyper: &TrainHyper,
    seed: u64,
) -> Result<(TrainedModel, Vec<EpochLog>)> {
    let prepared: Result<Vec<_>> =
        samples.iter().map(|s| prepare_sample(s, hyper.kz_input)).collect();
    let head = Head::Scaled { h_max: hyper.h_max };
    let (net, logs) = train_net(&prepared?, &head, hyper, seed)?;
    Ok((TrainedModel::Direct { net, h_max: hyper.h_max }, logs))
}

impl TrainedModel {
    /// Per-patch height prediction. The arithmetic path is identical to the
    /// training forward pass; only the final store is f32.
    pub fn predict_patch(&self, coh: &ScalarRaster, kz: &ScalarRaster) -> Result<ScalarRaster> {
        let sample = PatchSample {
            coherence: coh.clone(),
            kz: kz.clone(),
            reference: ScalarRaster::filled(coh.width(), coh.height(), 0.0)?,
        };
        let net = match self {
            TrainedModel::Cohnet { first, .. } => first,
            TrainedModel::Direct { net, .. } => net,
        };
        let prepared = prepare_sample(&sample, input_channels(net) == 2)?;
        let head = match self {
            TrainedModel::Cohnet { nsm, .. } => {
                Head::Surrogate { stages: mlp_stages(&nsm.net)?, h_max: nsm.h_max }
            }
            TrainedModel::Direct { h_max, .. } => Head::Scaled { h_max: *h_max },
        };
        let cache = net.forward(&prepared.input)?;
        let (pred, _) = head_forward(&head, cache.output().data(), &prepared);
        let n = coh.width() * coh.height();
        let mut data = vec![0.0f32; n];
        let mut valid = vec![false; n];
        for i in 0..n {
            if coh.valid()[i] && kz.valid()[i] {
                data[i] = pred[i] as f32;
                valid[i] = true;
            }
        }
        ScalarRaster::new(coh.width(), coh.height(), data, valid)
    }

    /// Intermediate corrected coherence from the two-stage pipeline.
    pub fn predict_gamma_opt(&self, coh: &ScalarRaster, kz: &ScalarRaster) -> Result<ScalarRaster> {
        let TrainedModel::Cohnet { first, .. } = self else {
            return Err(Error::InvalidParam("gamma export requires the two-stage model".into()));
        };
        let sample = PatchSample {
            coherence: coh.clone(),
            kz: kz.clone(),
            reference: ScalarRaster::filled(coh.width(), coh.height(), 0.0)?,
        };
        let prepared = prepare_sample(&sample, input_channels(first) == 2)?;
        let cache = first.forward(&prepared.input)?;
        let out = cache.output().data();
        let n = coh.width() * coh.height();
        let mut data = vec![0.0f32; n];
        let mut valid = vec![false; n];
        for i in 0..n {
            if coh.valid()[i] && kz.valid()[i] {
                data[i] = out[i] as f32;
                valid[i] = true;
            }
        }
        ScalarRaster::new(coh.width(), coh.height(), data, valid)
    }

    fn net_and_meta(&self) -> (&Network, Tensor) {
        match self {
            TrainedModel::Cohnet { first, nsm } => (
                first,
                Tensor::new(
                    vec![4],
                    vec![MODEL_KIND_COHNET, nsm.h_max, nsm.kz_scale, input_channels(first) as f64],
                )
                .expect("fixed shape"),
            ),
            TrainedModel::Direct { net, h_max } => (
                net,
                Tensor::new(
                    vec![4],
                    vec![MODEL_KIND_DIRECT, *h_max, KZ_SCALE, input_channels(net) as f64],
                )
                .expect("fixed shape"),
            ),
        }
    }

    /// Writes the trainable network only; the surrogate travels in its own
    /// weight file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let (net, meta) = self.net_and_meta();
        save_weights(net, &[meta], path)
    }

    fn load_net(path: &Path, kind: f64) -> Result<(Network, Vec<f64>)> {
        let file = WeightFile::read(path)?;
        let m = file.tensors.first().map(|t| t.data().to_vec()).unwrap_or_default();
        if m.len() != 4 || m[0] != kind || !(m[3] == 1.0 || m[3] == 2.0) {
            return Err(Error::WeightShapeMismatch);
        }
        let mut net = build_unet(m[3] as usize, UNET_BASE_CHANNELS, UNET_DEPTH, OutActivation::Sigmoid);
        apply_weights(&mut net, 1, file)?;
        Ok((net, m))
    }

    pub fn load_cohnet(path: &Path, nsm: &NsmModel) -> Result<Self> {
        let (first, _) = Self::load_net(path, MODEL_KIND_COHNET)?;
        Ok(TrainedModel::Cohnet { first, nsm: nsm.clone() })
    }

    pub fn load_direct(path: &Path) -> Result<Self> {
        let (net, m) = Self::load_net(path, MODEL_KIND_DIRECT)?;
        Ok(TrainedModel::Direct { net, h_max: m[1] })
    }
}

/// Reassembled full-scene maps from per-patch predictions.
pub struct RegionEvaluation {
    pub predicted: ScalarRaster,
    pub reference: ScalarRaster,
    pub mask: ScalarRaster,
    pub report: MetricReport,
}

pub fn evaluate_model(
    model: &TrainedModel,
    dir: &Path,
    records: &[PatchRecord],
    meta: &SceneMeta,
) -> Result<RegionEvaluation> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let grid = meta.grid()?;
    if grid.len() != records.len() {
        return Err(Error::PatchGridMismatch);
    }
    let samples = load_patches(dir, records)?;
    let preds: Result<Vec<ScalarRaster>> = samples
        .par_iter()
        .map(|s| model.predict_patch(&s.coherence, &s.kz))
        .collect();
    let predicted = reassemble_patches(&preds?, &grid)?;
    let refs: Vec<ScalarRaster> = samples.iter().map(|s| s.reference.clone()).collect();
    let reference = reassemble_patches(&refs, &grid)?;
    let masks: Result<Vec<ScalarRaster>> = records
        .iter()
        .map(|r| crate::io::read_scalar_raster(&dir.join(&r.mask)))
        .collect();
    let mask = reassemble_patches(&masks?, &grid)?;
    let report = metric_report(&predicted, &reference, Some(&mask))?;
    Ok(RegionEvaluation { predicted, reference, mask, report })
}

/// Masked test RMSE of each model on each region. Rows are models, columns
/// regions (manifest order).
pub fn cross_region_matrix(
    models: &[(String, TrainedModel)],
    manifest: &Manifest,
    dir: &Path,
) -> Result<Vec<Vec<f64>>> {
    if models.is_empty() || manifest.regions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut matrix = Vec::with_capacity(models.len());
    for (_, model) in models {
        let mut row = Vec::with_capacity(manifest.regions.len());
        for entry in manifest.regions.values() {
            let eval = evaluate_model(model, dir, &entry.test, &entry.test_meta)?;
            row.push(eval.report.rmse);
        }
        matrix.push(row);
    }
    Ok(matrix)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderingResult {
    pub raw_rmse: f64,
    pub volcorr_rmse: f64,
    pub optimized_rmse: f64,
}

/// End-to-end comparison on one synthetic region: invert the raw coherence
/// magnitude, invert the budget-compensated magnitude, and evaluate the
/// trained pipeline, all against the same reference heights on the test
/// scene. Dataset files are written under `out_dir`.
pub fn ordering_benchmark(
    config: &SimConfig,
    epochs: usize,
    surrogate_epochs: usize,
    out_dir: &Path,
) -> Result<OrderingResult> {
    use crate::rvog::{invert_raster, InversionMode};
    use crate::surrogate::{build_nsm_dataset, train_nsm, NsmHyper};

    let manifest = crate::dataset::build_dataset(&[config.clone()], &["r".into()], out_dir)?;
    let entry = manifest.region("r")?;

    // reassemble the test-split rasters into full maps
    let grid = entry.test_meta.grid()?;
    let samples = load_patches(out_dir, &entry.test)?;
    let coh: Vec<_> = samples.iter().map(|s| s.coherence.clone()).collect();
    let kzs: Vec<_> = samples.iter().map(|s| s.kz.clone()).collect();
    let refs: Vec<_> = samples.iter().map(|s| s.reference.clone()).collect();
    let masks: Result<Vec<_>> = entry
        .test
        .iter()
        .map(|r| crate::io::read_scalar_raster(&out_dir.join(&r.mask)))
        .collect();
    let coh_map = reassemble_patches(&coh, &grid)?;
    let kz_map = reassemble_patches(&kzs, &grid)?;
    let ref_map = reassemble_patches(&refs, &grid)?;
    let mask_map = reassemble_patches(&masks?, &grid)?;

    // raw: treat the measured magnitude as pure volume decorrelation
    let raw_heights = invert_raster(&coh_map, &kz_map, InversionMode::Sinc, None)?;
    let raw = metric_report(&raw_heights, &ref_map, Some(&mask_map))?;

    // corrected: divide out the known non-volume budget first
    let factor = config.budget.product();
    let mut corrected = coh_map.clone();
    for i in 0..corrected.data().len() {
        let v = (f64::from(coh_map.data()[i]) / factor).clamp(0.0, 1.0);
        corrected.data_mut()[i] = v as f32;
    }
    let corr_heights = invert_raster(&corrected, &kz_map, InversionMode::Sinc, None)?;
    let volcorr = metric_report(&corr_heights, &ref_map, Some(&mask_map))?;

    // optimized: train the pipeline on the train split
    let nsm_ds = build_nsm_dataset(&[0.06, 0.09, 0.12], 200, InversionMode::Sinc, None)?;
    let nsm_hyper = NsmHyper { epochs: surrogate_epochs, ..Default::default() };
    let (nsm, _) = train_nsm(&nsm_ds, &nsm_hyper, config.seed)?;
    let train_samples = load_patches(out_dir, &entry.train)?;
    let hyper = TrainHyper { epochs, ..Default::default() };
    let (model, _) = train_cohnet(&train_samples, &nsm, &hyper, config.seed)?;
    let eval = evaluate_model(&model, out_dir, &entry.test, &entry.test_meta)?;

    Ok(OrderingResult {
        raw_rmse: raw.rmse,
        volcorr_rmse: volcorr.rmse,
        optimized_rmse: eval.report.rmse,
    })
}
