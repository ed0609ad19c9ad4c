//! Losses, the training loop, reconstruction, transfer and ablation runs.

pub mod config;
pub mod dataset;
pub mod losses;
pub mod runlog;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use config::{FreezeMask, LossSelector, Precision, Sampling, TrainConfig};
pub use dataset::{Dataset, Subject};
pub use losses::{loss_dice, loss_intensity, loss_total, one_hot};
pub use runlog::{EpochRow, RunLog};

use crate::autodiff::{sgd_step, AutodiffError, Checkpoint, ParamStore, Real, SgdState, Tape};
use crate::eval::{self, EvalError, MetricsReport};
use crate::field::{DecoderTopology, FieldConfig, FieldError, SpiderModel};
use crate::kv::{KvError, KvMap};
use crate::projector::{BiplanarGeometry, ProjectorError, Projection};
use crate::volume::{normalized_coord, Dims, LabelGrid, Spacing, VolumeError, VolumeGeometry, VoxelGrid};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Projector(#[from] ProjectorError),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Points evaluated per tape when predicting a whole grid.
pub const PREDICT_CHUNK: usize = 8192;

/// A model, its parameters and the geometry it was trained for.
#[derive(Debug, Clone)]
pub struct Trained<T> {
    pub model: SpiderModel,
    pub store: ParamStore<T>,
    pub geometry: BiplanarGeometry,
    pub log: RunLog,
}

fn run_meta(field: &FieldConfig, geometry: &BiplanarGeometry, config: &TrainConfig, freeze: &FreezeMask) -> KvMap {
    let mut m = KvMap::default();
    field.to_kv(&mut m);
    dataset::geometry_to_kv(geometry, &mut m);
    config.to_kv(&mut m);
    freeze.to_kv(&mut m);
    m
}

impl<T: Real> Trained<T> {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(&self.store, self.log.config.clone())
    }

    /// Rebuilds a model from a checkpoint written by [`Trained::checkpoint`].
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, TrainError> {
        let field = FieldConfig::from_kv(&ckpt.meta)?;
        let geometry = dataset::geometry_from_kv(&ckpt.meta)?;
        let mut store = ParamStore::new();
        let model = SpiderModel::new(field, &mut store, 0)?;
        ckpt.restore_into(&mut store)?;
        Ok(Self { model, store, geometry, log: RunLog::new(ckpt.meta.clone()) })
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn reconstruct(&self, pa: &Projection, lat: &Projection, out_dims: Dims) -> Result<(VoxelGrid, LabelGrid), TrainError> {
        reconstruct(&self.model, &self.store, &self.geometry, pa, lat, out_dims)
    }
}

fn check_classes(field: &FieldConfig, subjects: &[&Subject]) -> Result<(), TrainError> {
    for s in subjects {
        if s.labels.classes() as usize + 1 != field.classes {
            return Err(TrainError::Config(format!(
                "subject {} has {} foreground classes, decoder emits {} channels",
                s.id,
                s.labels.classes(),
                field.classes
            )));
        }
    }
    Ok(())
}

fn check_geometry(geometry: &BiplanarGeometry, pa: &Projection, lat: &Projection) -> Result<(), TrainError> {
    if pa.detector != geometry.detector_pa || lat.detector != geometry.detector_lat {
        return Err(TrainError::Config(format!(
            "projections are {}×{} and {}×{}, model expects {}×{}",
            pa.detector.nu, pa.detector.nv, lat.detector.nu, lat.detector.nv, geometry.detector_pa.nu, geometry.detector_pa.nv
        )));
    }
    Ok(())
}

/// Training labels after mapping excluded classes to background.
fn training_labels(labels: &LabelGrid, included: Option<&[u16]>) -> Vec<u16> {
    match included {
        None => labels.labels().to_vec(),
        Some(keep) => labels.labels().iter().map(|&l| if keep.contains(&l) { l } else { 0 }).collect(),
    }
}

struct Prepared<'a> {
    subject: &'a Subject,
    truth: Vec<f64>,
    labels: Vec<u16>,
    by_class: Vec<Vec<usize>>,
}

fn sample_voxels<R: Rng>(p: &Prepared, config: &TrainConfig, rng: &mut R) -> Vec<usize> {
    let n = p.truth.len();
    match config.sampling {
        Sampling::Uniform => (0..config.points_per_step).map(|_| rng.gen_range(0..n)).collect(),
        Sampling::ClassBalanced => {
            let present: Vec<&Vec<usize>> = p.by_class.iter().filter(|v| !v.is_empty()).collect();
            (0..config.points_per_step)
                .map(|_| {
                    let c = present[rng.gen_range(0..present.len())];
                    c[rng.gen_range(0..c.len())]
                })
                .collect()
        }
    }
}

/// Losses of one optimisation step: `(total, l_int, l_seg)`.
fn step_losses<T: Real>(
    model: &SpiderModel,
    store: &ParamStore<T>,
    tape: &mut Tape<T>,
    geometry: &VolumeGeometry,
    p: &Prepared,
    voxels: &[usize],
    config: &TrainConfig,
    freeze: &FreezeMask,
) -> Result<(crate::autodiff::Var, f64, f64), TrainError> {
    let dims = geometry.dims;
    let points: Vec<[f64; 3]> = voxels.iter().map(|&i| normalized_coord(dims.coords(i), dims)).collect::<Result<_, _>>()?;
    let views = model.encode_views(tape, store, &p.subject.pa, &p.subject.lat)?;
    let out = model.forward(tape, store, &views, geometry, &points)?;
    let truth: Vec<f64> = voxels.iter().map(|&i| p.truth[i]).collect();
    let l_int = loss_intensity(tape, out.intensity, &truth)?;
    let probs = tape.softmax(out.logits)?;
    let labels: Vec<u16> = voxels.iter().map(|&i| p.labels[i]).collect();
    let l_seg = loss_dice(tape, probs, &one_hot(&labels, model.config.classes), config.dice_epsilon)?;
    let total = match freeze.loss {
        LossSelector::Joint => loss_total(tape, l_int, l_seg, config.lambda_int, config.lambda_seg)?,
        LossSelector::IntensityOnly => tape.scale(l_int, T::of(config.lambda_int))?,
    };
    let li = tape.value(l_int)?.item().as_f64();
    let ls = tape.value(l_seg)?.item().as_f64();
    Ok((total, li, ls))
}

/// Mean PSNR and mean present-class Dice over `subjects`.
pub fn validate<T: Real>(
    model: &SpiderModel,
    store: &ParamStore<T>,
    geometry: &BiplanarGeometry,
    subjects: &[&Subject],
) -> Result<(f64, f64), TrainError> {
    let (mut psnr, mut dice) = (0.0, 0.0);
    for s in subjects {
        let (vol, lab) = reconstruct(model, store, geometry, &s.pa, &s.lat, geometry.volume.dims)?;
        let r = eval::evaluate(&s.id, "field", &vol, Some(&lab), &s.volume, &s.labels)?;
        psnr += r.psnr;
        dice += r.mean_dice();
    }
    let n = subjects.len() as f64;
    Ok((psnr / n, dice / n))
}

/// Runs the epoch loop on `train`, updating `store` in place. Parameters
/// under the prefixes frozen by `freeze` never change.
#[allow(clippy::too_many_arguments)]
pub fn fit<T: Real>(
    model: &SpiderModel,
    store: &mut ParamStore<T>,
    geometry: &BiplanarGeometry,
    train: &[&Subject],
    val: &[&Subject],
    config: &TrainConfig,
    freeze: FreezeMask,
    mut log: RunLog,
) -> Result<RunLog, TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::Config("no training subjects".into()));
    }
    check_classes(&model.config, train)?;
    check_classes(&model.config, val)?;
    for s in train.iter().chain(val) {
        if s.volume.dims != geometry.volume.dims {
            return Err(TrainError::Config(format!("subject {} has dims {}, geometry expects {}", s.id, s.volume.dims, geometry.volume.dims)));
        }
        check_geometry(geometry, &s.pa, &s.lat)?;
    }
    if let Some(keep) = &config.classes_included {
        if let Some(&bad) = keep.iter().find(|&&c| c == 0 || c as usize >= model.config.classes) {
            return Err(TrainError::Config(format!("included class {bad} is not a foreground class")));
        }
    }
    store.unfreeze_all();
    store.freeze_prefixes(&freeze.frozen_prefixes());
    store.zero_grad();

    let prepared: Vec<Prepared> = train
        .iter()
        .map(|s| {
            let labels = training_labels(&s.labels, config.classes_included.as_deref());
            let mut by_class = vec![Vec::new(); model.config.classes];
            for (i, &l) in labels.iter().enumerate() {
                by_class[l as usize].push(i);
            }
            Prepared { subject: s, truth: s.volume.to_f64(), labels, by_class }
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = SgdState::with_kind(config.schedule()?, config.optimizer);
    let start = Instant::now();
    let first_epoch = log.last().map_or(0, |r| r.epoch + 1);
    for e in 0..config.epochs {
        state.epoch = e;
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut rng);
        let (mut sum, mut sum_int, mut sum_seg) = (0.0, 0.0, 0.0);
        for &i in &order {
            let voxels = sample_voxels(&prepared[i], config, &mut rng);
            let mut tape = Tape::new();
            let (loss, li, ls) = step_losses(model, store, &mut tape, &geometry.volume, &prepared[i], &voxels, config, &freeze)?;
            sum += tape.value(loss)?.item().as_f64();
            sum_int += li;
            sum_seg += ls;
            tape.backward(loss, store)?;
            sgd_step(store, &mut state)?;
            store.zero_grad();
        }
        let n = order.len() as f64;
        let last = e + 1 == config.epochs;
        let due = config.val_every > 0 && (e + 1) % config.val_every == 0;
        let (val_psnr, val_dice) = if !val.is_empty() && (last || due) { validate(model, store, geometry, val)? } else { (f64::NAN, f64::NAN) };
        let row = EpochRow {
            epoch: first_epoch + e,
            lr: state.lr(),
            loss: sum / n,
            l_int: sum_int / n,
            l_seg: sum_seg / n,
            val_psnr,
            val_dice,
            wall_ms: start.elapsed().as_millis(),
        };
        log::info!("epoch {} lr {} loss {:.6} l_int {:.6} l_seg {:.6}", row.epoch, row.lr, row.loss, row.l_int, row.l_seg);
        log.push(row)?;
    }
    store.unfreeze_all();
    Ok(log)
}

/// Trains a fresh model on the dataset's training split (validating on its
/// validation split). Initialisation and sampling both derive from `config.seed`.
pub fn train<T: Real>(dataset: &Dataset, field: &FieldConfig, config: &TrainConfig, freeze: FreezeMask) -> Result<Trained<T>, TrainError> {
    let train = dataset.group(&dataset.split.train)?;
    let val = dataset.group(&dataset.split.val)?;
    train_on(&dataset.geometry, &train, &val, field, config, freeze)
}

pub fn train_on<T: Real>(
    geometry: &BiplanarGeometry,
    train: &[&Subject],
    val: &[&Subject],
    field: &FieldConfig,
    config: &TrainConfig,
    freeze: FreezeMask,
) -> Result<Trained<T>, TrainError> {
    let mut store = ParamStore::new();
    let model = SpiderModel::new(field.clone(), &mut store, config.seed)?;
    let log = fit(&model, &mut store, geometry, train, val, config, freeze, RunLog::new(run_meta(field, geometry, config, &freeze)))?;
    Ok(Trained { model, store, geometry: *geometry, log })
}

/// Dense evaluation at every voxel centre of `out_dims`; intensity clamped to
/// `[0, 1]`, labels by argmax.
pub fn reconstruct<T: Real>(
    model: &SpiderModel,
    store: &ParamStore<T>,
    geometry: &BiplanarGeometry,
    pa: &Projection,
    lat: &Projection,
    out_dims: Dims,
) -> Result<(VoxelGrid, LabelGrid), TrainError> {
    check_geometry(geometry, pa, lat)?;
    out_dims.validate()?;
    let e = geometry.volume.extent();
    let spacing = Spacing::new(e[0] / out_dims.nx as f64, e[1] / out_dims.ny as f64, e[2] / out_dims.nz as f64);
    let (intensity, labels) = model.predict_grid(store, pa, lat, &geometry.volume, out_dims, PREDICT_CHUNK)?;
    let vol = VoxelGrid::from_clamped(out_dims, spacing, intensity)?;
    let lab = LabelGrid::from_labels(out_dims, spacing, (model.config.classes - 1) as u16, labels)?;
    Ok((vol, lab))
}

/// Result of adapting a pretrained model to one new subject.
#[derive(Debug, Clone)]
pub struct TransferOutcome<T> {
    pub freeze: FreezeMask,
    pub trained: Trained<T>,
    pub volume: VoxelGrid,
    pub labels: LabelGrid,
}

/// Fine-tunes a copy of `pretrained` on `subject` with an intensity-only
/// loss under `freeze`, then reconstructs the subject.
pub fn transfer<T: Real>(
    pretrained: &Trained<T>,
    subject: &Subject,
    config: &TrainConfig,
    freeze: FreezeMask,
) -> Result<TransferOutcome<T>, TrainError> {
    let mut t = pretrained.clone();
    let meta = run_meta(&t.model.config, &t.geometry, config, &freeze);
    t.log = fit(&t.model, &mut t.store, &t.geometry, &[subject], &[], config, freeze, RunLog::new(meta))?;
    let (volume, labels) = t.reconstruct(&subject.pa, &subject.lat, t.geometry.volume.dims)?;
    Ok(TransferOutcome { freeze, trained: t, volume, labels })
}

/// Both transfer arms: decoder frozen, then encoder frozen.
pub fn frozen_decoder_transfer<T: Real>(
    pretrained: &Trained<T>,
    subject: &Subject,
    config: &TrainConfig,
) -> Result<(TransferOutcome<T>, TransferOutcome<T>), TrainError> {
    Ok((transfer(pretrained, subject, config, FreezeMask::decoder_transfer())?, transfer(pretrained, subject, config, FreezeMask::encoder_transfer())?))
}

/// Held-out scores of one trained model.
pub fn evaluate_subjects<T: Real>(trained: &Trained<T>, subjects: &[&Subject], method: &str) -> Result<Vec<MetricsReport>, TrainError> {
    subjects
        .iter()
        .map(|s| {
            let (v, l) = trained.reconstruct(&s.pa, &s.lat, s.volume.dims)?;
            Ok(eval::evaluate(&s.id, method, &v, Some(&l), &s.volume, &s.labels)?)
        })
        .collect()
}

/// One arm of an ablation suite.
#[derive(Debug, Clone)]
pub struct AblationArm {
    pub name: String,
    pub field: FieldConfig,
    pub config: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub arm: String,
    pub seed: u64,
    pub reports: Vec<MetricsReport>,
}

impl AblationResult {
    pub fn mean_psnr(&self) -> f64 {
        self.reports.iter().map(|r| r.psnr).sum::<f64>() / self.reports.len() as f64
    }

    pub fn mean_dice(&self) -> f64 {
        self.reports.iter().map(|r| r.mean_dice()).sum::<f64>() / self.reports.len() as f64
    }
}

/// Decoder topologies on otherwise identical settings.
pub fn decoder_arms(field: &FieldConfig, config: &TrainConfig) -> Vec<AblationArm> {
    [DecoderTopology::Shared, DecoderTopology::TwoBranch, DecoderTopology::TwoStage]
        .into_iter()
        .map(|t| {
            let mut f = field.clone();
            f.decoder.topology = t;
            AblationArm { name: t.to_string(), field: f, config: config.clone() }
        })
        .collect()
}

/// No segmentation, then foreground classes added one at a time.
pub fn structure_arms(field: &FieldConfig, config: &TrainConfig) -> Vec<AblationArm> {
    let mut arms = vec![AblationArm { name: "no_seg".into(), field: field.clone(), config: TrainConfig { lambda_seg: 0.0, ..config.clone() } }];
    let fg = field.classes as u16 - 1;
    for k in 1..=fg {
        let classes_included = if k == fg { None } else { Some((1..=k).collect()) };
        arms.push(AblationArm { name: format!("classes_{k}"), field: field.clone(), config: TrainConfig { classes_included, ..config.clone() } });
    }
    arms
}

/// Trains every arm for every seed and scores it on the test split.
pub fn run_ablation<T: Real>(dataset: &Dataset, arms: &[AblationArm], seeds: &[u64]) -> Result<Vec<AblationResult>, TrainError> {
    let test = dataset.group(&dataset.split.test)?;
    let mut out = Vec::new();
    for arm in arms {
        for &seed in seeds {
            let config = TrainConfig { seed, ..arm.config.clone() };
            let trained = train::<T>(dataset, &arm.field, &config, FreezeMask::default())?;
            let reports = evaluate_subjects(&trained, &test, &arm.name)?;
            let r = AblationResult { arm: arm.name.clone(), seed, reports };
            log::info!("arm {} seed {seed}: psnr {:.3} dice {:.4}", r.arm, r.mean_psnr(), r.mean_dice());
            out.push(r);
        }
    }
    Ok(out)
}

/// `arm,seed,subject,psnr,ssim,mean_dice,mean_hd95,mean_chamfer` rows.
pub fn ablation_csv(results: &[AblationResult]) -> String {
    let mut s = String::from("arm,seed,subject,psnr,ssim,mean_dice,mean_hd95,mean_chamfer\n");
    for r in results {
        for m in &r.reports {
            s.push_str(&format!("{},{},{},{},{},{},{},{}\n", r.arm, r.seed, m.subject, m.psnr, m.ssim, m.mean_dice(), m.mean_hd95(), m.mean_chamfer()));
        }
    }
    s
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
