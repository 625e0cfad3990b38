//! Staged end-to-end runs.
//!
//! Every stage reads the shared config plus the artifacts earlier stages
//! left in a run directory, then writes its own. Ledgers are append-only;
//! model and report files are plain outputs that re-running a stage
//! regenerates byte-identically from (config, seeds). Stages are safe to
//! re-run: `sample` becomes a no-op when its ledger already matches the
//! config, `simulate` only processes designs it has not simulated yet, and
//! the training stages simply rewrite their checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::decoder::{
    infer_latent, train_autodecoder, AutoDecoder, DecoderConfig, DecoderError, DecoderTrainConfig,
};
use crate::geometry::{
    build_contour, build_reference, GeometryConfig, GeometryError, ReferenceGeometry, Vec2,
};
use crate::grid::{
    rasterize_sdf, read_grid, write_csv, write_grid, write_pgm, GridError, GridSpec, ScalarGrid,
};
use crate::manifest::{
    append_dataset, append_designs, read_dataset, read_designs, DatasetRecord, DesignRecord,
    SplitTag, DATASET_FILE, DESIGNS_FILE,
};
use crate::metrics::{evaluate_surrogates, BenchModels, BenchSample, EvalReport, MetricsError};
use crate::nn::ckpt::{read_latents, write_latents};
use crate::nn::NnError;
use crate::optimizer::{
    optimise, region1_line_box, select_start_latent, validate, MaxMode, OptimizationTrace,
    OptimizerConfig, OptimizerError,
};
use crate::oracle::{simulate, OracleConfig, OracleError};
use crate::sampling::{generate_splits, SamplingError, SamplingPlan};
use crate::surrogate::{KrigingModel, RbfModel, SurrogateError, KRIGING_DEFAULT_NUGGET};
use crate::unet::{train_iaism, MaskResSEUNet, UnetConfig, UnetError, UnetTrainConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing upstream artifact: {}", .0.display())]
    MissingUpstream(PathBuf),
    #[error("{} was produced by a different configuration; use a fresh run directory", .0.display())]
    ConfigChanged(PathBuf),
    #[error("config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Manifest(#[from] crate::manifest::ManifestError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Unet(#[from] UnetError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl PipelineError {
    /// True when the failure is a missing input another stage should have
    /// produced (the CLI maps this to its own exit code).
    pub fn is_missing_upstream(&self) -> bool {
        matches!(self, PipelineError::MissingUpstream(_))
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Artifact layout inside a run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunPaths { root: root.into() }
    }

    pub fn designs(&self) -> PathBuf {
        self.root.join(DESIGNS_FILE)
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join(DATASET_FILE)
    }

    pub fn sdf_rel(id: u64) -> String {
        format!("grids/sdf/{id:04}.fgrd")
    }

    pub fn field_rel(id: u64) -> String {
        format!("grids/field/{id:04}.fgrd")
    }

    pub fn decoder_ckpt(&self) -> PathBuf {
        self.root.join("models/decoder.nnck")
    }

    pub fn latents(&self, split: SplitTag) -> PathBuf {
        self.root
            .join(format!("models/latents_{}.lmat", split.as_str()))
    }

    pub fn iaism_ckpt(&self, augmented: bool) -> PathBuf {
        self.root.join(if augmented {
            "models/iaism_aug.nnck"
        } else {
            "models/iaism.nnck"
        })
    }

    pub fn scalar_model(&self, name: &str) -> PathBuf {
        self.root.join(format!("models/{name}.ssmf"))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join(format!("reports/{name}"))
    }

    pub fn optimize_dir(&self) -> PathBuf {
        self.root.join("optimize")
    }

    pub fn export_dir(&self) -> PathBuf {
        self.root.join("export")
    }

    fn ensure_parent(&self, path: &Path) -> Result<(), PipelineError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        Ok(())
    }

    fn read_rel_grid(&self, rel: &str) -> Result<ScalarGrid, PipelineError> {
        let path = self.root.join(rel);
        if !path.is_file() {
            return Err(PipelineError::MissingUpstream(path));
        }
        Ok(read_grid(&path)?)
    }

    fn require(&self, path: PathBuf) -> Result<PathBuf, PipelineError> {
        if path.is_file() {
            Ok(path)
        } else {
            Err(PipelineError::MissingUpstream(path))
        }
    }
}

/// Grid resolution from `[grid]`: `preset = desk|paper` or explicit
/// `height`, `width`, `origin_x`, `origin_y`, `spacing`.
pub fn grid_from_config(cfg: &Config) -> Result<GridSpec, PipelineError> {
    match cfg.get_str_or("grid", "preset", "desk") {
        "desk" => Ok(GridSpec::desk()),
        "paper" => Ok(GridSpec::paper()),
        "custom" => {
            let h = cfg.get_usize("grid", "height")?;
            let w = cfg.get_usize("grid", "width")?;
            let origin = Vec2::new(
                cfg.get_f64("grid", "origin_x")?,
                cfg.get_f64("grid", "origin_y")?,
            );
            let spacing = cfg.get_f64("grid", "spacing")?;
            Ok(GridSpec::new(h, w, origin, spacing)?)
        }
        other => Err(PipelineError::BadConfig(format!(
            "unknown grid preset {other:?} (expected desk, paper, or custom)"
        ))),
    }
}

fn plan_from_config(cfg: &Config) -> Result<SamplingPlan, PipelineError> {
    Ok(SamplingPlan {
        n_train: cfg.get_usize_or("sample", "n_train", 64)?,
        n_test: cfg.get_usize_or("sample", "n_test", 16)?,
        seed_train: cfg.get_u64_or("sample", "seed_train", 7)?,
        seed_test: cfg.get_u64_or("sample", "seed_test", 11)?,
        stratify: cfg.get_bool_or("sample", "stratify", true)?,
    })
}

fn geometry_from_config(cfg: &Config) -> Result<ReferenceGeometry, PipelineError> {
    Ok(build_reference(&GeometryConfig::from_config(cfg)?)?)
}

fn decoder_train_from_config(cfg: &Config) -> Result<DecoderTrainConfig, PipelineError> {
    let d = DecoderTrainConfig::default();
    Ok(DecoderTrainConfig {
        epochs: cfg.get_usize_or("decoder", "epochs", d.epochs)?,
        batch_size: cfg.get_usize_or("decoder", "batch_size", d.batch_size)?,
        lr: cfg.get_f64_or("decoder", "lr", d.lr)?,
        seed: cfg.get_u64_or("decoder", "seed", d.seed)?,
        lambda1: cfg.get_f64_or("decoder", "lambda1", d.lambda1)?,
        lambda2: cfg.get_f64_or("decoder", "lambda2", d.lambda2)?,
    })
}

fn iaism_train_from_config(cfg: &Config) -> Result<UnetTrainConfig, PipelineError> {
    let d = UnetTrainConfig::default();
    Ok(UnetTrainConfig {
        epochs: cfg.get_usize_or("iaism", "epochs", d.epochs)?,
        batch_size: cfg.get_usize_or("iaism", "batch_size", d.batch_size)?,
        lr: cfg.get_f64_or("iaism", "lr", d.lr)?,
        seed: cfg.get_u64_or("iaism", "seed", d.seed)?,
        lambda1: cfg.get_f64_or("iaism", "lambda1", d.lambda1)?,
        lambda2: cfg.get_f64_or("iaism", "lambda2", d.lambda2)?,
        augment: cfg.get_bool_or("iaism", "augment", false)?,
    })
}

fn write_text(paths: &RunPaths, path: &Path, text: &str) -> Result<(), PipelineError> {
    paths.ensure_parent(path)?;
    fs::write(path, text).map_err(io_err(path))
}

fn history_csv(history: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in history.iter().enumerate() {
        out.push_str(&format!("{},{l:?}\n", i + 1));
    }
    out
}

/// Records of one split, in id order.
fn split_records<T>(records: &[T], id_of: impl Fn(&T) -> u64, keep: impl Fn(&T) -> bool) -> Vec<&T> {
    let mut out: Vec<&T> = records.iter().filter(|r| keep(r)).collect();
    out.sort_by_key(|r| id_of(r));
    out
}

// ---------------------------------------------------------------------------
// sample

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleOutcome {
    pub n_train: usize,
    pub n_test: usize,
    /// True when the ledger already matched this config and nothing was
    /// regenerated.
    pub already_done: bool,
}

/// Draw the train/test designs, rasterize their SDFs, and open the design
/// ledger.
pub fn stage_sample(cfg: &Config, paths: &RunPaths) -> Result<SampleOutcome, PipelineError> {
    let spec = grid_from_config(cfg)?;
    let geo = geometry_from_config(cfg)?;
    let plan = plan_from_config(cfg)?;
    let hash = cfg.content_hash();

    let ledger = paths.designs();
    if ledger.is_file() {
        let existing = read_designs(&ledger)?;
        let same = existing.len() == plan.n_train + plan.n_test
            && existing.iter().all(|r| r.config_hash == hash);
        return if same {
            Ok(SampleOutcome {
                n_train: plan.n_train,
                n_test: plan.n_test,
                already_done: true,
            })
        } else {
            Err(PipelineError::ConfigChanged(ledger))
        };
    }

    let (train, test) = generate_splits(&plan, &geo)?;
    let mut jobs: Vec<(u64, SplitTag, u64, &crate::geometry::BlankDesign)> = Vec::new();
    for (i, d) in train.iter().enumerate() {
        jobs.push((i as u64, SplitTag::Train, plan.seed_train, d));
    }
    for (i, d) in test.iter().enumerate() {
        jobs.push(((plan.n_train + i) as u64, SplitTag::Test, plan.seed_test, d));
    }

    let rasterized: Vec<(DesignRecord, ScalarGrid)> = jobs
        .par_iter()
        .map(|(id, split, seed, design)| {
            let contour = build_contour(design, &geo)?;
            let sdf = rasterize_sdf(&contour, &spec)?;
            let record =
                DesignRecord::from_design(*id, *split, design, RunPaths::sdf_rel(*id), *seed, &hash);
            Ok((record, sdf))
        })
        .collect::<Result<_, PipelineError>>()?;

    let mut records = Vec::with_capacity(rasterized.len());
    for (record, sdf) in &rasterized {
        let path = paths.root.join(&record.sdf_path);
        paths.ensure_parent(&path)?;
        write_grid(sdf, &path)?;
        records.push(record.clone());
    }
    append_designs(&ledger, &records)?;
    Ok(SampleOutcome {
        n_train: plan.n_train,
        n_test: plan.n_test,
        already_done: false,
    })
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulateOutcome {
    /// Designs simulated in this invocation.
    pub n_simulated: usize,
    /// Designs that already had dataset records.
    pub n_existing: usize,
}

/// Run the forming simulator over every design not yet in the dataset
/// ledger.
pub fn stage_simulate(cfg: &Config, paths: &RunPaths) -> Result<SimulateOutcome, PipelineError> {
    let designs = read_designs(&paths.require(paths.designs())?)?;
    let oracle = OracleConfig::from_config(cfg)?;

    let existing: std::collections::BTreeSet<u64> = if paths.dataset().is_file() {
        read_dataset(&paths.dataset())?
            .iter()
            .map(|r| r.design.id)
            .collect()
    } else {
        Default::default()
    };
    let todo: Vec<&DesignRecord> = designs
        .iter()
        .filter(|r| !existing.contains(&r.id))
        .collect();

    let simulated: Vec<(DatasetRecord, ScalarGrid)> = todo
        .par_iter()
        .map(|record| {
            let sdf = paths.read_rel_grid(&record.sdf_path)?;
            let result = simulate(&sdf, &oracle)?;
            let dataset = DatasetRecord {
                design: (*record).clone(),
                field_path: RunPaths::field_rel(record.id),
                max_thinning: result.max_thinning,
                max_thickening: result.max_thickening,
            };
            Ok((dataset, result.field))
        })
        .collect::<Result<_, PipelineError>>()?;

    let mut records = Vec::with_capacity(simulated.len());
    for (record, field) in &simulated {
        let path = paths.root.join(&record.field_path);
        paths.ensure_parent(&path)?;
        write_grid(field, &path)?;
        records.push(record.clone());
    }
    append_dataset(&paths.dataset(), &records)?;
    Ok(SimulateOutcome {
        n_simulated: records.len(),
        n_existing: existing.len(),
    })
}

// ---------------------------------------------------------------------------
// train-autodecoder

#[derive(Debug, Clone)]
pub struct DecoderOutcome {
    pub shapes: usize,
    pub epochs: usize,
    pub first_epoch_loss: f64,
    pub final_epoch_loss: f64,
}

/// Train the shape auto-decoder on the train (plus decoder-extra) SDFs;
/// writes the checkpoint, the train latent table, and the loss history.
pub fn stage_train_autodecoder(
    cfg: &Config,
    paths: &RunPaths,
) -> Result<DecoderOutcome, PipelineError> {
    let spec = grid_from_config(cfg)?;
    let designs = read_designs(&paths.require(paths.designs())?)?;
    let subset = split_records(
        &designs,
        |r| r.id,
        |r| matches!(r.split, SplitTag::Train | SplitTag::DecoderExtra),
    );
    let mut grids = Vec::with_capacity(subset.len());
    for r in &subset {
        grids.push(paths.read_rel_grid(&r.sdf_path)?);
    }

    let dcfg = DecoderConfig::new(spec, cfg.get_usize_or("decoder", "base_channels", 16)?);
    let tcfg = decoder_train_from_config(cfg)?;
    let (mut model, latents, history) = train_autodecoder(&grids, &dcfg, &tcfg)?;

    let ckpt = paths.decoder_ckpt();
    paths.ensure_parent(&ckpt)?;
    model.save(&ckpt)?;
    write_latents(&paths.latents(SplitTag::Train), &latents)?;
    write_text(
        paths,
        &paths.report("decoder_history.csv"),
        &format!("# config {}\n{}", cfg.content_hash(), history_csv(&history)),
    )?;
    Ok(DecoderOutcome {
        shapes: grids.len(),
        epochs: history.len(),
        first_epoch_loss: history.first().copied().unwrap_or(f64::NAN),
        final_epoch_loss: history.last().copied().unwrap_or(f64::NAN),
    })
}

// ---------------------------------------------------------------------------
// infer-latents

#[derive(Debug, Clone)]
pub struct InferOutcome {
    pub shapes: usize,
    pub mean_final_loss: f64,
}

/// Embed the test SDFs into the trained decoder's latent space.
pub fn stage_infer_latents(cfg: &Config, paths: &RunPaths) -> Result<InferOutcome, PipelineError> {
    let designs = read_designs(&paths.require(paths.designs())?)?;
    let ckpt = paths.require(paths.decoder_ckpt())?;
    let mut model = AutoDecoder::load(&ckpt)?;

    let steps = cfg.get_usize_or("infer", "steps", 200)?;
    let lr = cfg.get_f64_or("infer", "lr", 1e-2)?;
    let seed = cfg.get_u64_or("infer", "seed", 101)?;

    let subset = split_records(&designs, |r| r.id, |r| r.split == SplitTag::Test);
    let mut rows = Vec::with_capacity(subset.len());
    let mut finals = Vec::with_capacity(subset.len());
    let mut lines = String::from("# id,final_loss\nid,final_loss\n");
    for r in &subset {
        let sdf = paths.read_rel_grid(&r.sdf_path)?;
        // Decorrelate the per-shape starting latents deterministically.
        let (z, history) = infer_latent(&mut model, &sdf, steps, lr, seed.wrapping_add(r.id))?;
        let fin = history.last().copied().unwrap_or(f64::NAN);
        lines.push_str(&format!("{},{fin:?}\n", r.id));
        finals.push(fin);
        rows.push(z);
    }

    let mut table = Array2::<f32>::zeros((rows.len(), crate::decoder::LATENT_DIM));
    for (i, z) in rows.iter().enumerate() {
        for (j, v) in z.iter().enumerate() {
            table[(i, j)] = *v;
        }
    }
    let out = paths.latents(SplitTag::Test);
    paths.ensure_parent(&out)?;
    write_latents(&out, &table)?;
    write_text(paths, &paths.report("infer_history.csv"), &lines)?;
    Ok(InferOutcome {
        shapes: rows.len(),
        mean_final_loss: if finals.is_empty() {
            f64::NAN
        } else {
            finals.iter().sum::<f64>() / finals.len() as f64
        },
    })
}

// ---------------------------------------------------------------------------
// train-iaism

#[derive(Debug, Clone)]
pub struct IaismOutcome {
    pub pairs: usize,
    pub epochs: usize,
    pub final_epoch_loss: f64,
    /// Loss of the optional second (augmented) model, when trained.
    pub final_epoch_loss_augmented: Option<f64>,
}

/// Train the image surrogate on the train (SDF, thinning-field) pairs.
/// With `extra_augmented`, a second flip-augmented model is trained and
/// saved alongside.
pub fn stage_train_iaism(cfg: &Config, paths: &RunPaths) -> Result<IaismOutcome, PipelineError> {
    let spec = grid_from_config(cfg)?;
    let dataset = read_dataset(&paths.require(paths.dataset())?)?;
    let subset = split_records(&dataset, |r| r.design.id, |r| {
        r.design.split == SplitTag::Train
    });
    let mut pairs = Vec::with_capacity(subset.len());
    for r in &subset {
        pairs.push((
            paths.read_rel_grid(&r.design.sdf_path)?,
            paths.read_rel_grid(&r.field_path)?,
        ));
    }

    let ucfg = UnetConfig::new(spec, cfg.get_usize_or("iaism", "base_channels", 2)?);
    let tcfg = iaism_train_from_config(cfg)?;
    let (mut net, history) = train_iaism(&pairs, &ucfg, &tcfg)?;
    let ckpt = paths.iaism_ckpt(false);
    paths.ensure_parent(&ckpt)?;
    net.save(&ckpt)?;
    write_text(
        paths,
        &paths.report("iaism_history.csv"),
        &format!("# config {}\n{}", cfg.content_hash(), history_csv(&history)),
    )?;

    let mut final_aug = None;
    if cfg.get_bool_or("iaism", "extra_augmented", false)? {
        let aug_cfg = UnetTrainConfig {
            augment: true,
            ..tcfg
        };
        let (mut net2, history2) = train_iaism(&pairs, &ucfg, &aug_cfg)?;
        net2.save(&paths.iaism_ckpt(true))?;
        write_text(
            paths,
            &paths.report("iaism_aug_history.csv"),
            &format!("# config {}\n{}", cfg.content_hash(), history_csv(&history2)),
        )?;
        final_aug = history2.last().copied();
    }

    Ok(IaismOutcome {
        pairs: pairs.len(),
        epochs: history.len(),
        final_epoch_loss: history.last().copied().unwrap_or(f64::NAN),
        final_epoch_loss_augmented: final_aug,
    })
}

// ---------------------------------------------------------------------------
// train-saism

#[derive(Debug, Clone)]
pub struct SaismOutcome {
    pub samples: usize,
    pub kriging_theta_thinning: Vec<f64>,
    pub kriging_theta_thickening: Vec<f64>,
}

/// Latent rows (as f64) joined against the dataset records of a split, in
/// id order.
fn latent_dataset(
    paths: &RunPaths,
    split: SplitTag,
) -> Result<(Vec<Vec<f64>>, Vec<DatasetRecord>), PipelineError> {
    let dataset = read_dataset(&paths.require(paths.dataset())?)?;
    let subset = split_records(&dataset, |r| r.design.id, |r| r.design.split == split);
    let latents = read_latents(&paths.require(paths.latents(split))?)?;
    if latents.nrows() != subset.len() {
        return Err(PipelineError::BadConfig(format!(
            "{} latent rows but {} {} dataset records — re-run the latent stages",
            latents.nrows(),
            subset.len(),
            split.as_str()
        )));
    }
    let x: Vec<Vec<f64>> = latents
        .rows()
        .into_iter()
        .map(|row| row.iter().map(|v| *v as f64).collect())
        .collect();
    Ok((x, subset.into_iter().cloned().collect()))
}

/// Fit the scalar surrogates (RBF and Kriging, one model per response) on
/// the train latents.
pub fn stage_train_saism(cfg: &Config, paths: &RunPaths) -> Result<SaismOutcome, PipelineError> {
    let (x, records) = latent_dataset(paths, SplitTag::Train)?;
    let y_thin: Vec<f64> = records.iter().map(|r| r.max_thinning).collect();
    let y_thick: Vec<f64> = records.iter().map(|r| r.max_thickening).collect();

    let nugget = cfg.get_f64_or("saism", "nugget", KRIGING_DEFAULT_NUGGET)?;
    let seed = cfg.get_u64_or("saism", "seed", 1234)?;

    let rbf_thin = RbfModel::fit(&x, &y_thin)?;
    let rbf_thick = RbfModel::fit(&x, &y_thick)?;
    let krig_thin = KrigingModel::fit(&x, &y_thin, nugget, seed)?;
    let krig_thick = KrigingModel::fit(&x, &y_thick, nugget, seed.wrapping_add(1))?;

    let out = paths.scalar_model("rbf_thinning");
    paths.ensure_parent(&out)?;
    rbf_thin.save(&out)?;
    rbf_thick.save(&paths.scalar_model("rbf_thickening"))?;
    krig_thin.save(&paths.scalar_model("kriging_thinning"))?;
    krig_thick.save(&paths.scalar_model("kriging_thickening"))?;

    Ok(SaismOutcome {
        samples: x.len(),
        kriging_theta_thinning: krig_thin.theta().to_vec(),
        kriging_theta_thickening: krig_thick.theta().to_vec(),
    })
}

// ---------------------------------------------------------------------------
// evaluate

/// Benchmark every trained surrogate on one split; writes CSV and text
/// reports and returns the table.
pub fn stage_evaluate(
    cfg: &Config,
    paths: &RunPaths,
    split: SplitTag,
) -> Result<EvalReport, PipelineError> {
    let (x, records) = latent_dataset(paths, split)?;
    let mut samples = Vec::with_capacity(records.len());
    for (latent, r) in x.into_iter().zip(&records) {
        samples.push(BenchSample {
            latent,
            sdf: paths.read_rel_grid(&r.design.sdf_path)?,
            gt_thinning: r.max_thinning,
            gt_thickening: r.max_thickening,
        });
    }

    let rbf_thin = RbfModel::load(&paths.require(paths.scalar_model("rbf_thinning"))?)?;
    let rbf_thick = RbfModel::load(&paths.require(paths.scalar_model("rbf_thickening"))?)?;
    let krig_thin = KrigingModel::load(&paths.require(paths.scalar_model("kriging_thinning"))?)?;
    let krig_thick = KrigingModel::load(&paths.require(paths.scalar_model("kriging_thickening"))?)?;
    let mut image = if paths.iaism_ckpt(false).is_file() {
        Some(MaskResSEUNet::load(&paths.iaism_ckpt(false))?)
    } else {
        None
    };
    let mut image_aug = if paths.iaism_ckpt(true).is_file() {
        Some(MaskResSEUNet::load(&paths.iaism_ckpt(true))?)
    } else {
        None
    };

    let models = BenchModels {
        rbf_thinning: &rbf_thin,
        rbf_thickening: &rbf_thick,
        kriging_thinning: &krig_thin,
        kriging_thickening: &krig_thick,
        image: image.as_mut(),
        image_augmented: image_aug.as_mut(),
    };
    let report = evaluate_surrogates(models, &samples, split.as_str())?;

    let header = format!("# config {}\n", cfg.content_hash());
    write_text(
        paths,
        &paths.report(&format!("evaluate_{}.csv", split.as_str())),
        &format!("{header}{}", report.to_csv()),
    )?;
    write_text(
        paths,
        &paths.report(&format!("evaluate_{}.txt", split.as_str())),
        &format!("{header}{}", report.to_text()),
    )?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// optimize

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    /// Ledger id of the design whose latent seeded the runs.
    pub start_id: u64,
    pub traces: Vec<(u64, OptimizationTrace)>,
}

impl OptimizeOutcome {
    pub fn any_validated(&self) -> bool {
        self.traces
            .iter()
            .any(|(_, t)| t.validation.as_ref().is_some_and(|v| v.passed))
    }
}

/// Optimizer settings from `[optimize]`, given the line box.
fn optimizer_from_config(
    cfg: &Config,
    region: crate::optimizer::LineRegion,
) -> Result<OptimizerConfig, PipelineError> {
    let mut ocfg = OptimizerConfig::new(region);
    ocfg.lambda1 = cfg.get_f64_or("optimize", "lambda1", ocfg.lambda1)?;
    ocfg.lambda2 = cfg.get_f64_or("optimize", "lambda2", ocfg.lambda2)?;
    ocfg.lambda3 = cfg.get_f64_or("optimize", "lambda3", ocfg.lambda3)?;
    ocfg.threshold = cfg.get_f64_or("optimize", "threshold", ocfg.threshold)?;
    ocfg.lr = cfg.get_f64_or("optimize", "lr", ocfg.lr)?;
    ocfg.epochs = cfg.get_usize_or("optimize", "epochs", ocfg.epochs)?;
    ocfg.start_jitter = cfg.get_f64_or("optimize", "start_jitter", ocfg.start_jitter)?;
    if let Ok(tau) = cfg.get_f64("optimize", "smooth_tau") {
        ocfg.max_mode = MaxMode::Smooth { tau };
    }
    Ok(ocfg)
}

/// Start from the best-known train design and run seeded latent descents;
/// each result is decoded and judged by the forming simulator.
pub fn stage_optimize(cfg: &Config, paths: &RunPaths) -> Result<OptimizeOutcome, PipelineError> {
    let spec = grid_from_config(cfg)?;
    let geo = geometry_from_config(cfg)?;
    let mut decoder = AutoDecoder::load(&paths.require(paths.decoder_ckpt())?)?;
    let mut net = MaskResSEUNet::load(&paths.require(paths.iaism_ckpt(false))?)?;
    let (x, records) = latent_dataset(paths, SplitTag::Train)?;
    drop(x);
    let latents = read_latents(&paths.latents(SplitTag::Train))?;
    let thickening: Vec<f64> = records.iter().map(|r| r.max_thickening).collect();
    let (row, start) = select_start_latent(&latents, &thickening)?;
    let start_record = &records[row];

    // The straight-edge box tracks the start design's plateau half-width
    // unless the config pins one.
    let p0 = match cfg.get_f64("optimize", "line_p0") {
        Ok(v) => v,
        Err(_) => start_record
            .design
            .params
            .iter()
            .find(|(id, _)| *id == 0)
            .map(|(_, v)| *v)
            .unwrap_or(40.0),
    };
    let dilate = cfg.get_usize_or("optimize", "line_dilate", 5)?;
    let region = region1_line_box(&spec, &geo, p0, dilate)?;
    let ocfg = optimizer_from_config(cfg, region)?;
    let seeds = cfg
        .get_u64_list("optimize", "seeds")
        .unwrap_or_else(|_| vec![17, 29, 47]);

    let oracle = OracleConfig::from_config(cfg)?;
    let dir = paths.optimize_dir();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;

    let hash = cfg.content_hash();
    let mut summary = format!(
        "# config {hash}\nstart: ledger id {} (row {row}, max thickening {:.6})\n\
         line box: rows {}..{}, cols {}..{} (p0 {p0}, dilate {dilate})\n",
        start_record.design.id, thickening[row], region.row0, region.row1, region.col0, region.col1
    );
    let mut traces = Vec::with_capacity(seeds.len());
    for seed in seeds {
        let mut trace = optimise(&start, &mut decoder, &mut net, &ocfg, seed)?;
        trace.validation = Some(validate(&trace.final_latent, &mut decoder, &oracle)?);
        write_text(
            paths,
            &dir.join(format!("trace_seed{seed}.csv")),
            &format!("# config {hash}\n{}", trace.to_csv()),
        )?;
        let sdf = decoder.decode(&trace.final_latent)?;
        write_grid(&sdf, &dir.join(format!("final_sdf_seed{seed}.fgrd")))?;
        let v = trace.validation.as_ref().unwrap();
        summary.push_str(&format!(
            "seed {seed}: loss {:.6} -> {:.6}, predicted thinning {:.6}, thickening {:.6}, validation {} ({})\n",
            trace.losses.first().unwrap_or(&f64::NAN),
            trace.losses.last().unwrap_or(&f64::NAN),
            trace.max_thinnings.last().unwrap_or(&f64::NAN),
            trace.max_thickenings.last().unwrap_or(&f64::NAN),
            if v.passed { "PASS" } else { "FAIL" },
            v.reason
        ));
        traces.push((seed, trace));
    }
    write_text(paths, &dir.join("summary.txt"), &summary)?;
    Ok(OptimizeOutcome {
        start_id: start_record.design.id,
        traces,
    })
}

// ---------------------------------------------------------------------------
// export

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExportOutcome {
    pub files: usize,
}

/// Convert every dataset grid to PGM (plus a CSV per SDF) and tabulate the
/// maxima.
pub fn stage_export(_cfg: &Config, paths: &RunPaths) -> Result<ExportOutcome, PipelineError> {
    let dataset = read_dataset(&paths.require(paths.dataset())?)?;
    let dir = paths.export_dir();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;

    let mut files = 0;
    let mut table = String::from("id,split,max_thinning,max_thickening\n");
    for r in &dataset {
        let sdf = paths.read_rel_grid(&r.design.sdf_path)?;
        let field = paths.read_rel_grid(&r.field_path)?;
        let id = r.design.id;
        write_pgm(&sdf, &dir.join(format!("sdf_{id:04}.pgm")))?;
        write_pgm(&field, &dir.join(format!("field_{id:04}.pgm")))?;
        write_csv(&sdf, &dir.join(format!("sdf_{id:04}.csv")))?;
        files += 3;
        table.push_str(&format!(
            "{id},{},{:?},{:?}\n",
            r.design.split.as_str(),
            r.max_thinning,
            r.max_thickening
        ));
    }
    write_text(paths, &dir.join("maxima.csv"), &table)?;
    Ok(ExportOutcome { files: files + 1 })
}
