use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cohnet_core::coherence::{
    estimate_coherence, snr_decorrelation, volume_decorrelation, DecorrelationBudget, SlcPair,
};
use cohnet_core::dataset::{
    build_dataset, load_patches, manifest_path, Manifest, DEFAULT_WINDOW,
};
use cohnet_core::io::{
    read_complex_raster, read_scalar_raster, write_atomic, write_complex_raster,
    write_scalar_raster,
};
use cohnet_core::metrics::{export_map_pgm, export_scatter};
use cohnet_core::rvog::{build_inversion_lut, invert_raster, read_lut, write_lut, InversionMode};
use cohnet_core::sim::{make_reference_heights, make_scene, simulate_slc_pair, SimConfig};
use cohnet_core::surrogate::{
    build_nsm_dataset, nsm_fidelity_matrix, train_nsm, write_matrix_csv, NsmHyper, NsmModel,
};
use cohnet_core::trainer::{
    cross_region_matrix, evaluate_model, ordering_benchmark, train_cohnet, train_direct,
    write_training_log, LossKind, TrainHyper, TrainedModel,
};
use cohnet_core::{Error, Result};

#[derive(Parser)]
#[command(name = "cohnet", version, about = "Physics-aware forest height estimation from InSAR coherence")]
struct Cli {
    /// Optional key=value configuration file (# starts a comment).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sinc,
    Lut,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Cohnet,
    Direct,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Rmse,
    AbsSum,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and write its rasters.
    Simulate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate complex coherence from a co-registered SLC pair.
    Coherence {
        #[arg(long)]
        s1: PathBuf,
        #[arg(long)]
        s2: PathBuf,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compensate a coherence map for the non-volume decorrelation budget.
    Volcorr {
        #[arg(long)]
        gamma: PathBuf,
        /// Linear SNR converted to gamma_snr = snr/(1+snr); overrides config.
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Invert a volume-decorrelation map to heights.
    Invert {
        #[arg(long)]
        gamma: PathBuf,
        #[arg(long)]
        kz: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Sinc)]
        mode: ModeArg,
        #[arg(long)]
        lut: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Precompute a forward-model lookup table for one geometry.
    BuildLut {
        #[arg(long)]
        kz: f64,
        #[arg(long, default_value_t = 200)]
        hv_steps: usize,
        #[arg(long, default_value_t = 0.0)]
        sigma_max: f64,
        #[arg(long, default_value_t = 1)]
        sigma_steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a multi-region patch dataset with a manifest.
    Dataset {
        /// Comma list of name:seed:mean_height entries, each optionally
        /// extended with :kz_min:kz_max.
        #[arg(long)]
        regions: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the surrogate of the physical inversion on an analytic grid.
    TrainSurrogate {
        #[arg(long, default_value = "0.06,0.09,0.12")]
        kz_values: String,
        #[arg(long, default_value_t = 200)]
        grid_n: usize,
        #[arg(long, default_value_t = 1000)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON report with train/held-out RMSE.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train the two-stage pipeline through a frozen surrogate.
    TrainCohnet {
        #[arg(long)]
        data: PathBuf,
        /// Comma list of region names to pool for training.
        #[arg(long)]
        regions: String,
        #[arg(long)]
        nsm: PathBuf,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = LossArg::Rmse)]
        loss: LossArg,
        /// Feed coherence only to the first network (kz still reaches the surrogate).
        #[arg(long)]
        no_kz_input: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Train the direct height-regression baseline.
    TrainDirect {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        regions: String,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = LossArg::Rmse)]
        loss: LossArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a trained model on a region's test split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        region: String,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        nsm: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        scatter: Option<PathBuf>,
        #[arg(long)]
        map: Option<PathBuf>,
        /// lo:hi display range for the height map.
        #[arg(long, default_value = "0:60")]
        map_range: String,
    },
    /// Cross-region RMSE matrix for several trained models.
    Matrix {
        #[arg(long)]
        data: PathBuf,
        /// Comma list of name=path:kind entries (kind is cohnet or direct).
        #[arg(long)]
        models: String,
        #[arg(long)]
        nsm: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Surrogate-vs-physical-inversion RMSE matrix on region test inputs.
    SurrogateMatrix {
        #[arg(long)]
        data: PathBuf,
        /// Comma list of name=path entries.
        #[arg(long)]
        models: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// End-to-end comparison: raw inversion vs budget-corrected inversion vs
    /// the trained pipeline on one synthetic region.
    ReproOrdering {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 300)]
        surrogate_epochs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export a scalar raster to an 8-bit PGM image.
    Export {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        pgm: PathBuf,
        #[arg(long, default_value = "0:60")]
        range: String,
    },
}

type Config = BTreeMap<String, String>;

fn load_config(path: Option<&PathBuf>) -> Result<Config> {
    let mut map = Config::new();
    let Some(path) = path else { return Ok(map) };
    let text = std::fs::read_to_string(path)?;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::InvalidParam(format!(
                "config line {}: expected key=value, got {line:?}",
                lineno + 1
            )));
        };
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn get_parsed<T: std::str::FromStr>(cfg: &Config, key: &str, default: T) -> Result<T> {
    match cfg.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| Error::InvalidParam(format!("config key {key}: bad value {v:?}"))),
    }
}

fn budget_from_config(cfg: &Config) -> Result<DecorrelationBudget> {
    let mut b = DecorrelationBudget::default();
    if let Some(v) = cfg.get("snr") {
        let snr: f64 = v
            .parse()
            .map_err(|_| Error::InvalidParam(format!("config key snr: bad value {v:?}")))?;
        b.gamma_snr = snr_decorrelation(snr)?;
    }
    b.gamma_snr = get_parsed(cfg, "gamma_snr", b.gamma_snr)?;
    b.gamma_rg = get_parsed(cfg, "gamma_rg", b.gamma_rg)?;
    b.gamma_quant = get_parsed(cfg, "gamma_quant", b.gamma_quant)?;
    b.gamma_temp = get_parsed(cfg, "gamma_temp", b.gamma_temp)?;
    b.gamma_sensor = get_parsed(cfg, "gamma_sensor", b.gamma_sensor)?;
    b.validate()?;
    Ok(b)
}

fn sim_config(cfg: &Config, seed: u64) -> Result<SimConfig> {
    let d = SimConfig::default();
    let out = SimConfig {
        seed,
        width: get_parsed(cfg, "width", d.width)?,
        height: get_parsed(cfg, "height", d.height)?,
        mean_height: get_parsed(cfg, "mean_height", d.mean_height)?,
        height_spread: get_parsed(cfg, "height_spread", d.height_spread)?,
        h_max: get_parsed(cfg, "h_max", d.h_max)?,
        correlation_length: get_parsed(cfg, "correlation_length", d.correlation_length)?,
        forest_fraction: get_parsed(cfg, "forest_fraction", d.forest_fraction)?,
        kz_range: (
            get_parsed(cfg, "kz_min", d.kz_range.0)?,
            get_parsed(cfg, "kz_max", d.kz_range.1)?,
        ),
        budget: budget_from_config(cfg)?,
        sigma: get_parsed(cfg, "sigma", d.sigma)?,
        theta: get_parsed(cfg, "theta", d.theta)?,
        mu: get_parsed(cfg, "mu", d.mu)?,
        z0: get_parsed(cfg, "z0", d.z0)?,
    };
    out.validate()?;
    Ok(out)
}

fn parse_range(s: &str) -> Result<(f64, f64)> {
    let parse = |v: &str| {
        v.parse::<f64>()
            .map_err(|_| Error::InvalidParam(format!("bad range component {v:?}")))
    };
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| Error::InvalidParam(format!("range must be lo:hi, got {s:?}")))?;
    Ok((parse(lo)?, parse(hi)?))
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidParam(format!("bad number {v:?}")))
        })
        .collect()
}

fn loss_kind(arg: LossArg) -> LossKind {
    match arg {
        LossArg::Rmse => LossKind::BatchRmse,
        LossArg::AbsSum => LossKind::ScaledAbsSum,
    }
}

fn pooled_training_samples(
    data: &Path,
    regions: &str,
    manifest: &Manifest,
) -> Result<Vec<cohnet_core::dataset::PatchSample>> {
    let mut samples = Vec::new();
    for name in regions.split(',') {
        let entry = manifest.region(name.trim())?;
        samples.extend(load_patches(data, &entry.train)?);
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(samples)
}

fn load_trained(kind: KindArg, model: &Path, nsm: Option<&PathBuf>) -> Result<TrainedModel> {
    match kind {
        KindArg::Cohnet => {
            let nsm_path = nsm.ok_or_else(|| {
                Error::InvalidParam("--nsm is required for the cohnet model kind".into())
            })?;
            let nsm = NsmModel::load(nsm_path, &NsmHyper::default())?;
            TrainedModel::load_cohnet(model, &nsm)
        }
        KindArg::Direct => TrainedModel::load_direct(model),
    }
}

fn run(cli: Cli) -> Result<()> {
    cohnet_core::init_threads();
    let cfg = load_config(cli.config.as_ref())?;
    match cli.command {
        Command::Simulate { seed, out } => {
            let config = sim_config(&cfg, seed)?;
            let scene = make_scene(&config)?;
            std::fs::create_dir_all(&out)?;
            let pair = simulate_slc_pair(&scene, seed ^ 0x51C0)?;
            let reference = make_reference_heights(&scene, get_parsed(&cfg, "reference_noise_std", 1.0)?)?;
            write_scalar_raster(&scene.height_map, &out.join("height.chr"))?;
            write_scalar_raster(&scene.forest_mask, &out.join("mask.chr"))?;
            write_scalar_raster(&scene.kz_map, &out.join("kz.chr"))?;
            write_scalar_raster(&reference, &out.join("reference.chr"))?;
            write_complex_raster(&scene.true_gamma_map, &out.join("true_gamma.chr"))?;
            write_complex_raster(&pair.s1, &out.join("slc1.chr"))?;
            write_complex_raster(&pair.s2, &out.join("slc2.chr"))?;
            let summary = serde_json::json!({
                "seed": seed,
                "width": config.width,
                "height": config.height,
                "kz": scene.kz,
            });
            write_atomic(&out.join("scene.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
            println!("scene written to {}", out.display());
        }
        Command::Coherence { s1, s2, window, out } => {
            let pair = SlcPair::new(read_complex_raster(&s1)?, read_complex_raster(&s2)?)?;
            let gamma = estimate_coherence(&pair, window)?;
            write_complex_raster(&gamma, &out)?;
            println!("coherence written to {}", out.display());
        }
        Command::Volcorr { gamma, snr, out } => {
            let mut budget = budget_from_config(&cfg)?;
            if let Some(snr) = snr {
                budget.gamma_snr = snr_decorrelation(snr)?;
            }
            let gamma = read_complex_raster(&gamma)?;
            let vol = volume_decorrelation(&gamma, &budget)?;
            write_scalar_raster(&vol, &out)?;
            println!("volume decorrelation written to {}", out.display());
        }
        Command::Invert { gamma, kz, mode, lut, out } => {
            let gamma = read_scalar_raster(&gamma)?;
            let kz = read_scalar_raster(&kz)?;
            let (mode, lut) = match mode {
                ModeArg::Sinc => (InversionMode::Sinc, None),
                ModeArg::Lut => {
                    let path = lut.ok_or_else(|| {
                        Error::InvalidParam("--lut is required with --mode lut".into())
                    })?;
                    (InversionMode::Lut, Some(read_lut(&path)?))
                }
            };
            let heights = invert_raster(&gamma, &kz, mode, lut.as_ref())?;
            write_scalar_raster(&heights, &out)?;
            println!("heights written to {}", out.display());
        }
        Command::BuildLut { kz, hv_steps, sigma_max, sigma_steps, out } => {
            let hv_max = cohnet_core::rvog::ambiguity_height(kz) * (1.0 - 1e-9);
            let hv_grid: Vec<f64> =
                (0..hv_steps).map(|i| hv_max * i as f64 / (hv_steps - 1) as f64).collect();
            let sigma_grid: Vec<f64> = if sigma_steps <= 1 {
                vec![0.0]
            } else {
                (0..sigma_steps).map(|i| sigma_max * i as f64 / (sigma_steps - 1) as f64).collect()
            };
            let theta = get_parsed(&cfg, "theta", cohnet_core::rvog::DEFAULT_THETA)?;
            let mu = get_parsed(&cfg, "mu", 0.0)?;
            let lut = build_inversion_lut(kz, &hv_grid, &sigma_grid, theta, mu)?;
            write_lut(&lut, &out)?;
            println!("lut written to {}", out.display());
        }
        Command::Dataset { regions, out } => {
            let mut names = Vec::new();
            let mut configs = Vec::new();
            for item in regions.split(',') {
                let parts: Vec<&str> = item.trim().split(':').collect();
                if parts.len() != 3 && parts.len() != 5 {
                    return Err(Error::InvalidParam(format!(
                        "region entry must be name:seed:mean_height[:kz_min:kz_max], got {item:?}"
                    )));
                }
                let seed: u64 = parts[1]
                    .parse()
                    .map_err(|_| Error::InvalidParam(format!("bad seed {:?}", parts[1])))?;
                let mut c = sim_config(&cfg, seed)?;
                c.mean_height = parts[2]
                    .parse()
                    .map_err(|_| Error::InvalidParam(format!("bad mean height {:?}", parts[2])))?;
                if parts.len() == 5 {
                    let lo: f64 = parts[3]
                        .parse()
                        .map_err(|_| Error::InvalidParam(format!("bad kz_min {:?}", parts[3])))?;
                    let hi: f64 = parts[4]
                        .parse()
                        .map_err(|_| Error::InvalidParam(format!("bad kz_max {:?}", parts[4])))?;
                    c.kz_range = (lo, hi);
                }
                c.validate()?;
                names.push(parts[0].to_string());
                configs.push(c);
            }
            let manifest = build_dataset(&configs, &names, &out)?;
            println!(
                "dataset with {} regions written to {}",
                manifest.regions.len(),
                out.display()
            );
        }
        Command::TrainSurrogate { kz_values, grid_n, epochs, seed, out, report } => {
            let kz = parse_f64_list(&kz_values)?;
            let ds = build_nsm_dataset(&kz, grid_n, InversionMode::Sinc, None)?;
            let hyper = NsmHyper { epochs, ..Default::default() };
            let (model, stats) = train_nsm(&ds, &hyper, seed)?;
            model.save(&out)?;
            println!(
                "surrogate trained: train rmse {:.3} m, held-out rmse {:.3} m -> {}",
                stats.train_rmse,
                stats.held_out_rmse,
                out.display()
            );
            if let Some(report_path) = report {
                let json = serde_json::json!({
                    "train_rmse": stats.train_rmse,
                    "held_out_rmse": stats.held_out_rmse,
                });
                write_atomic(&report_path, serde_json::to_string_pretty(&json)?.as_bytes())?;
            }
        }
        Command::TrainCohnet { data, regions, nsm, epochs, batch, seed, loss, no_kz_input, out, log } => {
            let manifest = Manifest::read(&manifest_path(&data))?;
            let samples = pooled_training_samples(&data, &regions, &manifest)?;
            let nsm = NsmModel::load(&nsm, &NsmHyper::default())?;
            let hyper = TrainHyper {
                epochs,
                batch,
                loss: loss_kind(loss),
                kz_input: !no_kz_input,
                ..Default::default()
            };
            let (model, logs) = train_cohnet(&samples, &nsm, &hyper, seed)?;
            model.save(&out)?;
            if let Some(log) = log {
                write_training_log(&logs, &log)?;
            }
            println!(
                "pipeline trained for {} epochs, final loss {:.4} -> {}",
                epochs,
                logs.last().map_or(f64::NAN, |l| l.train_loss),
                out.display()
            );
        }
        Command::TrainDirect { data, regions, epochs, batch, seed, loss, out, log } => {
            let manifest = Manifest::read(&manifest_path(&data))?;
            let samples = pooled_training_samples(&data, &regions, &manifest)?;
            let hyper = TrainHyper { epochs, batch, loss: loss_kind(loss), ..Default::default() };
            let (model, logs) = train_direct(&samples, &hyper, seed)?;
            model.save(&out)?;
            if let Some(log) = log {
                write_training_log(&logs, &log)?;
            }
            println!(
                "baseline trained for {} epochs, final loss {:.4} -> {}",
                epochs,
                logs.last().map_or(f64::NAN, |l| l.train_loss),
                out.display()
            );
        }
        Command::Eval { data, region, model, kind, nsm, report, scatter, map, map_range } => {
            let manifest = Manifest::read(&manifest_path(&data))?;
            let entry = manifest.region(&region)?;
            let model = load_trained(kind, &model, nsm.as_ref())?;
            let eval = evaluate_model(&model, &data, &entry.test, &entry.test_meta)?;
            println!(
                "region {region}: rmse {:.3} m, r2 {:.3}, bias {:.3} m over {} pixels",
                eval.report.rmse, eval.report.r2, eval.report.bias, eval.report.n_valid
            );
            if let Some(path) = report {
                write_atomic(&path, serde_json::to_string_pretty(&eval.report)?.as_bytes())?;
            }
            if let Some(path) = scatter {
                export_scatter(&eval.predicted, &eval.reference, Some(&eval.mask), &path)?;
            }
            if let Some(path) = map {
                export_map_pgm(&eval.predicted, &path, parse_range(&map_range)?)?;
            }
        }
        Command::Matrix { data, models, nsm, out } => {
            let manifest = Manifest::read(&manifest_path(&data))?;
            let mut entries = Vec::new();
            for item in models.split(',') {
                let (name, rest) = item.trim().split_once('=').ok_or_else(|| {
                    Error::InvalidParam(format!("model entry must be name=path:kind, got {item:?}"))
                })?;
                let (path, kind) = rest.rsplit_once(':').ok_or_else(|| {
                    Error::InvalidParam(format!("model entry must be name=path:kind, got {item:?}"))
                })?;
                let kind = match kind {
                    "cohnet" => KindArg::Cohnet,
                    "direct" => KindArg::Direct,
                    other => {
                        return Err(Error::InvalidParam(format!("unknown model kind {other:?}")))
                    }
                };
                entries.push((name.to_string(), load_trained(kind, Path::new(path), nsm.as_ref())?));
            }
            let matrix = cross_region_matrix(&entries, &manifest, &data)?;
            let row_names: Vec<String> = entries.iter().map(|(n, _)| n.clone()).collect();
            let col_names: Vec<String> = manifest.regions.keys().cloned().collect();
            write_matrix_csv(&row_names, &col_names, &matrix, &out)?;
            println!("cross-region matrix written to {}", out.display());
        }
        Command::SurrogateMatrix { data, models, out } => {
            let manifest = Manifest::read(&manifest_path(&data))?;
            let mut named = Vec::new();
            for item in models.split(',') {
                let (name, path) = item.trim().split_once('=').ok_or_else(|| {
                    Error::InvalidParam(format!("model entry must be name=path, got {item:?}"))
                })?;
                named.push((name.to_string(), NsmModel::load(Path::new(path), &NsmHyper::default())?));
            }
            let mut regions = Vec::new();
            for (name, entry) in &manifest.regions {
                regions.push((name.clone(), load_patches(&data, &entry.test)?));
            }
            let matrix = nsm_fidelity_matrix(&named, &regions)?;
            let row_names: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
            let col_names: Vec<String> = regions.iter().map(|(n, _)| n.clone()).collect();
            write_matrix_csv(&row_names, &col_names, &matrix, &out)?;
            println!("surrogate fidelity matrix written to {}", out.display());
        }
        Command::ReproOrdering { seed, epochs, surrogate_epochs, out } => {
            std::fs::create_dir_all(&out)?;
            let mut base = sim_config(&cfg, seed)?;
            // the comparison needs a non-trivial budget to correct for
            if !cfg.contains_key("gamma_snr") && !cfg.contains_key("snr") {
                base.budget.gamma_snr = 0.9;
            }
            if !cfg.contains_key("gamma_rg") {
                base.budget.gamma_rg = 0.95;
            }
            let result = ordering_benchmark(&base, epochs, surrogate_epochs, &out.join("data"))?;
            let json = serde_json::json!({
                "raw_rmse": result.raw_rmse,
                "volcorr_rmse": result.volcorr_rmse,
                "optimized_rmse": result.optimized_rmse,
            });
            write_atomic(&out.join("ordering.json"), serde_json::to_string_pretty(&json)?.as_bytes())?;
            println!("raw inversion rmse       {:.3} m", result.raw_rmse);
            println!("budget-corrected rmse    {:.3} m", result.volcorr_rmse);
            println!("trained pipeline rmse    {:.3} m", result.optimized_rmse);
            let ordered = result.raw_rmse > result.volcorr_rmse
                && result.volcorr_rmse > result.optimized_rmse;
            println!("ordering raw > corrected > optimized: {}", if ordered { "yes" } else { "no" });
        }
        Command::Export { input, pgm, range } => {
            let raster = read_scalar_raster(&input)?;
            export_map_pgm(&raster, &pgm, parse_range(&range)?)?;
            println!("pgm written to {}", pgm.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not usage errors
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
