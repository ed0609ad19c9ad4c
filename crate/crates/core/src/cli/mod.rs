//! Command-line driver. Exit codes: 0 success, 2 usage, 3 I/O, 4 config or
//! validation failure.

pub mod manifest;
pub mod png;

use std::error::Error;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::autodiff::Real;
use crate::eval::{self, mesh::class_mesh, MetricsReport};
use crate::field::FieldConfig;
use crate::kv::KvMap;
use crate::projector::{fbp_two_view, BiplanarGeometry, Projection};
use crate::train::dataset::{self, Dataset, Subject};
use crate::train::{self as tr, FreezeMask, LossSelector, Precision, RunLog, TrainConfig, Trained};
use crate::volume::{
    load_intensity, load_labels, save_labels, save_volume, DatasetSplit, Dims, LabelGrid, PhantomSpec, Spacing, VolumeGeometry, VoxelGrid,
};
use manifest::RunManifest;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

type BoxError = Box<dyn Error + Send + Sync>;
type Res<T> = Result<T, BoxError>;

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(String);

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(String);

#[derive(Debug, thiserror::Error)]
#[error("{path}: {source}")]
pub struct IoError {
    path: String,
    source: std::io::Error,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BoxError + '_ {
    move |source| Box::new(IoError { path: path.display().to_string(), source })
}

/// Maps an error to the exit-code taxonomy by walking its source chain.
pub fn exit_code(e: &(dyn Error + 'static)) -> i32 {
    if e.is::<UsageError>() {
        return EXIT_USAGE;
    }
    let mut cur: Option<&(dyn Error + 'static)> = Some(e);
    while let Some(err) = cur {
        if err.is::<std::io::Error>() {
            return EXIT_IO;
        }
        cur = err.source();
    }
    EXIT_CONFIG
}

#[derive(Debug, Parser)]
#[command(name = "spider-recon", version, about = "Biplanar X-ray reconstruction with a jointly supervised neural field")]
pub struct Cli {
    /// Upper bound on worker threads (projection); 1 keeps runs reproducible.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate phantom volume/label pairs and a split file.
    Phantom(PhantomArgs),
    /// Simulate biplanar DRRs for every phantom in a directory.
    Simulate(SimulateArgs),
    /// Train a model on a simulated dataset.
    Train(TrainCmd),
    /// Reconstruct intensity and labels from two projections.
    Reconstruct(ReconstructArgs),
    /// Score a reconstruction against ground truth.
    Eval(EvalArgs),
    /// Two-view filtered backprojection baseline.
    BaselineFbp(FbpArgs),
    /// Decoder-topology or incremental-structure ablation suites.
    Ablate(AblateArgs),
    /// Adapt a trained model to one subject with the decoder or encoder frozen.
    Transfer(TransferArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Spec file, or one of the built-in families `head`, `head_open_jaw`.
    #[arg(long, default_value = "head")]
    pub spec: String,
    #[arg(long, default_value_t = 30)]
    pub count: usize,
    /// `N` or `NX,NY,NZ`.
    #[arg(long, default_value = "64")]
    pub dims: String,
    /// Voxel size in mm, `S` or `SX,SY,SZ`.
    #[arg(long, default_value = "1")]
    pub spacing: String,
    /// Overrides the spec seed; also seeds the split.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub volumes: PathBuf,
    /// Key-value file providing `geometry.detector = NU,NV`.
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    /// Detector size `N` or `NU,NV`; overrides the geometry file.
    #[arg(long)]
    pub detector: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FreezeArg {
    None,
    Encoder,
    Decoder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransferFreeze {
    Decoder,
    Encoder,
    Both,
}

/// Training settings; flags override `--config`, which overrides defaults.
#[derive(Debug, Clone, Args)]
pub struct TrainOptions {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub decay_every: Option<usize>,
    #[arg(long)]
    pub lambda_int: Option<f64>,
    #[arg(long)]
    pub lambda_seg: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub points: Option<usize>,
    /// `sgd` or `adam`.
    #[arg(long)]
    pub optimizer: Option<String>,
    /// `uniform` or `class_balanced`.
    #[arg(long)]
    pub sampling: Option<String>,
    /// `f32` or `f64`.
    #[arg(long)]
    pub precision: Option<String>,
    #[arg(long)]
    pub val_every: Option<usize>,
    /// `shared`, `two_branch` or `two_stage`.
    #[arg(long)]
    pub decoder: Option<String>,
    /// Comma-separated foreground classes kept in the losses.
    #[arg(long)]
    pub classes_included: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Start from this checkpoint instead of a fresh initialisation.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FreezeArg::None)]
    pub freeze: FreezeArg,
    #[command(flatten)]
    pub opts: TrainOptions,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub pa: PathBuf,
    #[arg(long)]
    pub lat: PathBuf,
    /// Output grid; defaults to the training grid.
    #[arg(long)]
    pub dims: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prefix of `<prefix>.vol.spvol` and optional `<prefix>.labels.spvol`.
    #[arg(long)]
    pub pred: PathBuf,
    /// Prefix of the ground-truth pair.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub method: Option<String>,
    /// Foreground class count; inferred from the labels when absent.
    #[arg(long)]
    pub classes: Option<u16>,
    /// Also write a smoothed OBJ surface per predicted class.
    #[arg(long)]
    pub mesh: bool,
}

#[derive(Debug, Args)]
pub struct FbpArgs {
    #[arg(long)]
    pub pa: PathBuf,
    #[arg(long)]
    pub lat: PathBuf,
    #[arg(long)]
    pub dims: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Decoders,
    Structures,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(value_enum)]
    pub suite: Suite,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated training seeds.
    #[arg(long, default_value = "0,1,2")]
    pub seeds: String,
    #[command(flatten)]
    pub opts: TrainOptions,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset directory holding the subject's projections and volumes.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub subject: String,
    #[arg(long, value_enum, default_value_t = TransferFreeze::Both)]
    pub freeze: TransferFreeze,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub opts: TrainOptions,
}

/// Parses `argv` (program name first) and runs the command; returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let command: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli, command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(e.as_ref())
        }
    }
}

fn dispatch(cli: Cli, command: Vec<String>) -> Res<()> {
    let w = cli.workers.max(1);
    match cli.command {
        Command::Phantom(a) => phantom(a, command),
        Command::Simulate(a) => simulate(a, command, w),
        Command::Train(a) => train(a, command),
        Command::Reconstruct(a) => reconstruct(a, command),
        Command::Eval(a) => evaluate(a, command),
        Command::BaselineFbp(a) => baseline_fbp(a, command),
        Command::Ablate(a) => ablate(a, command),
        Command::Transfer(a) => transfer(a, command),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Res<Vec<T>> {
    s.split([',', 'x', ' '])
        .filter(|p| !p.is_empty())
        .map(|p| p.trim().parse::<T>().map_err(|_| -> BoxError { Box::new(UsageError(format!("cannot parse `{s}` as {what}"))) }))
        .collect()
}

pub fn parse_dims(s: &str) -> Res<Dims> {
    let v: Vec<usize> = parse_list(s, "dimensions")?;
    match v[..] {
        [n] => Ok(Dims::cube(n)),
        [x, y, z] => Ok(Dims::new(x, y, z)),
        _ => Err(Box::new(UsageError(format!("dimensions `{s}` need 1 or 3 values")))),
    }
}

fn parse_spacing(s: &str) -> Res<Spacing> {
    let v: Vec<f64> = parse_list(s, "spacing")?;
    match v[..] {
        [a] => Ok(Spacing::isotropic(a)),
        [x, y, z] => Ok(Spacing::new(x, y, z)),
        _ => Err(Box::new(UsageError(format!("spacing `{s}` needs 1 or 3 values")))),
    }
}

fn parse_pair(s: &str) -> Res<(usize, usize)> {
    let v: Vec<usize> = parse_list(s, "detector size")?;
    match v[..] {
        [n] => Ok((n, n)),
        [u, v] => Ok((u, v)),
        _ => Err(Box::new(UsageError(format!("detector `{s}` needs 1 or 2 values")))),
    }
}

fn read_kv_file(path: &Path) -> Res<KvMap> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(KvMap::parse(&text)?)
}

fn create_dir(path: &Path) -> Res<()> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> Res<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn begin(m: &RunManifest, path: &Path) -> Res<()> {
    m.write_initial(path).map_err(io_err(path))
}

fn finish(m: &RunManifest, path: &Path) -> Res<()> {
    m.write_final(path).map_err(io_err(path))
}

fn builtin_spec(name: &str) -> Option<PhantomSpec> {
    match name {
        "head" => Some(PhantomSpec::head_family()),
        "head_open_jaw" => Some(PhantomSpec::head_family_open_jaw()),
        _ => None,
    }
}

fn phantom(a: PhantomArgs, command: Vec<String>) -> Res<()> {
    let mut inputs = Vec::new();
    let mut spec = match builtin_spec(&a.spec) {
        Some(s) => s,
        None => {
            let p = PathBuf::from(&a.spec);
            inputs.push(p.clone());
            PhantomSpec::from_kv(&read_kv_file(&p)?)?
        }
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let dims = parse_dims(&a.dims)?;
    let spacing = parse_spacing(&a.spacing)?;
    let split = match (a.train, a.val) {
        (None, None) => DatasetSplit::proportional(a.count, spec.seed)?,
        (t, v) => {
            let v = v.unwrap_or(0);
            DatasetSplit::random(a.count, t.unwrap_or(a.count.saturating_sub(v)), v, spec.seed)?
        }
    };
    let mut config = spec.to_kv();
    config.set("count", a.count);
    config.set("dims", dims);
    config.set("spacing", format!("{},{},{}", spacing.sx, spacing.sy, spacing.sz));
    let m = RunManifest { command, seed: spec.seed, config, inputs, outputs: vec![a.out.clone()] };
    let mpath = a.out.join("manifest.txt");
    begin(&m, &mpath)?;
    let volumes = dataset::generate_volumes(&spec, a.count, dims, spacing)?;
    dataset::write_volumes(&a.out, &volumes, &split)?;
    write_text(&a.out.join("spec.txt"), &spec.to_kv().to_text())?;
    finish(&m, &mpath)
}

/// Foreground class count of a phantom directory: `spec.txt` if present,
/// otherwise the largest label found.
fn volume_classes(dir: &Path, labels: &[LabelGrid]) -> Res<u16> {
    let spec = dir.join("spec.txt");
    if spec.is_file() {
        return Ok(PhantomSpec::from_kv(&read_kv_file(&spec)?)?.class_count);
    }
    Ok(labels.iter().flat_map(|l| l.labels().iter().copied()).max().unwrap_or(0).max(1))
}

fn simulate(a: SimulateArgs, command: Vec<String>, workers: usize) -> Res<()> {
    let mut det = (128, 128);
    let mut inputs = vec![a.volumes.clone()];
    if let Some(g) = &a.geometry {
        inputs.push(g.clone());
        if let Some(v) = read_kv_file(g)?.get("geometry.detector") {
            det = parse_pair(v).map_err(|_| -> BoxError { Box::new(ConfigError(format!("bad geometry.detector `{v}`"))) })?;
        }
    }
    if let Some(d) = &a.detector {
        det = parse_pair(d)?;
    }
    let split = DatasetSplit::from_kv(&read_kv_file(&a.volumes.join(dataset::SPLIT_FILE))?)?;
    let mut volumes = Vec::new();
    let mut labels = Vec::new();
    for id in split.all() {
        volumes.push(load_intensity(&dataset::volume_path(&a.volumes, id))?);
        labels.push(load_labels(&dataset::labels_path(&a.volumes, id), None)?);
    }
    let classes = volume_classes(&a.volumes, &labels)?;
    let first = volumes.first().ok_or_else(|| -> BoxError { Box::new(ConfigError("split lists no subjects".into())) })?;
    let geometry = BiplanarGeometry::fitted(VolumeGeometry::new(first.dims, first.spacing)?, det.0, det.1)?;
    let mut config = KvMap::new();
    dataset::geometry_to_kv(&geometry, &mut config);
    config.set("classes", classes);
    let m = RunManifest { command, seed: split.master_seed, config, inputs, outputs: vec![a.out.clone()] };
    let mpath = a.out.join("manifest.txt");
    begin(&m, &mpath)?;
    let mut subjects = Vec::new();
    for ((id, v), l) in split.all().zip(volumes).zip(labels) {
        let l = LabelGrid::from_labels(l.dims, l.spacing, classes, l.labels().to_vec())?;
        subjects.push(Subject::simulate(id, v, l, &geometry, workers)?);
    }
    let ds = Dataset { geometry, classes, subjects, split };
    let vol_dir = std::fs::canonicalize(&a.volumes).map_err(io_err(&a.volumes))?;
    ds.write_projections(&a.out, &vol_dir)?;
    for s in &ds.subjects {
        for (view, p) in [("pa", &s.pa), ("lat", &s.lat)] {
            png::write_gray(&a.out.join(format!("{}.{view}.png", s.id)), &flip_rows(&p.log_values, p.detector.nu), p.detector.nu, p.detector.nv)?;
        }
    }
    finish(&m, &mpath)
}

/// Reverses row order so that the highest detector row is drawn on top.
fn flip_rows(values: &[f64], width: usize) -> Vec<f64> {
    values.chunks(width).rev().flatten().copied().collect()
}

impl TrainOptions {
    fn overrides(&self) -> KvMap {
        let mut m = KvMap::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                m.set(k, v);
            }
        };
        put("train.epochs", self.epochs.map(|v| v.to_string()));
        put("train.lr", self.lr.map(|v| v.to_string()));
        put("train.lr_decay", self.lr_decay.map(|v| v.to_string()));
        put("train.decay_every", self.decay_every.map(|v| v.to_string()));
        put("train.lambda_int", self.lambda_int.map(|v| v.to_string()));
        put("train.lambda_seg", self.lambda_seg.map(|v| v.to_string()));
        put("train.seed", self.seed.map(|v| v.to_string()));
        put("train.points_per_step", self.points.map(|v| v.to_string()));
        put("train.optimizer", self.optimizer.clone());
        put("train.sampling", self.sampling.clone());
        put("train.precision", self.precision.clone());
        put("train.val_every", self.val_every.map(|v| v.to_string()));
        put("decoder.topology", self.decoder.clone());
        put("train.classes_included", self.classes_included.clone());
        m
    }

    /// Resolves flag > file > default into field and training configs.
    fn resolve(&self, classes: u16) -> Res<(FieldConfig, TrainConfig)> {
        let file = match &self.config {
            Some(p) => read_kv_file(p)?,
            None => KvMap::new(),
        };
        let mut kv = file.merged(&self.overrides());
        if kv.get("field.classes").is_none() {
            kv.set("field.classes", classes as usize + 1);
        }
        Ok((FieldConfig::from_kv(&kv)?, TrainConfig::from_kv(&kv)?))
    }
}

fn resolved_kv(field: &FieldConfig, config: &TrainConfig) -> KvMap {
    let mut m = KvMap::new();
    field.to_kv(&mut m);
    config.to_kv(&mut m);
    m
}

fn log_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("log.csv")
}

fn train(a: TrainCmd, command: Vec<String>) -> Res<()> {
    let ds = Dataset::load(&a.data)?;
    let (field, config) = a.opts.resolve(ds.classes)?;
    let freeze = FreezeMask {
        freeze_encoder: a.freeze == FreezeArg::Encoder,
        freeze_decoder: a.freeze == FreezeArg::Decoder,
        freeze_hash: false,
        loss: LossSelector::Joint,
    };
    let mut kv = resolved_kv(&field, &config);
    freeze.to_kv(&mut kv);
    let mut inputs = vec![a.data.clone()];
    inputs.extend(a.opts.config.clone());
    inputs.extend(a.init.clone());
    let m = RunManifest { command, seed: config.seed, config: kv, inputs, outputs: vec![a.out.clone(), log_path(&a.out), log_path(&a.out).with_extension("config.txt")] };
    let mpath = with_suffix(&a.out, ".manifest.txt");
    begin(&m, &mpath)?;
    match config.precision {
        Precision::F32 => train_typed::<f32>(&ds, &field, &config, freeze, a.init.as_deref(), &a.out)?,
        Precision::F64 => train_typed::<f64>(&ds, &field, &config, freeze, a.init.as_deref(), &a.out)?,
    }
    finish(&m, &mpath)
}

fn train_typed<T: Real>(ds: &Dataset, field: &FieldConfig, config: &TrainConfig, freeze: FreezeMask, init: Option<&Path>, out: &Path) -> Res<()> {
    let trained = match init {
        None => tr::train::<T>(ds, field, config, freeze)?,
        Some(p) => {
            let mut t = Trained::<T>::load(p)?;
            if t.geometry != ds.geometry {
                return Err(Box::new(ConfigError("initial checkpoint was trained on a different geometry".into())));
            }
            let mut meta = t.log.config.clone();
            config.to_kv(&mut meta);
            freeze.to_kv(&mut meta);
            let train = ds.group(&ds.split.train)?;
            let val = ds.group(&ds.split.val)?;
            t.log = tr::fit(&t.model, &mut t.store, &t.geometry, &train, &val, config, freeze, RunLog::new(meta))?;
            t
        }
    };
    save_run(&trained, out)
}

fn save_run<T: Real>(t: &Trained<T>, ckpt: &Path) -> Res<()> {
    if let Some(dir) = ckpt.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    t.checkpoint().save(ckpt)?;
    t.log.write(&log_path(ckpt))?;
    Ok(())
}

fn save_pair(prefix: &Path, vol: &VoxelGrid, labels: Option<&LabelGrid>) -> Res<()> {
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_volume(&with_suffix(prefix, ".vol.spvol"), vol)?;
    for (name, w, h, s) in png::mid_slices(&vol.to_f64(), vol.dims) {
        png::write_gray(&with_suffix(prefix, &format!(".vol.{name}.png")), &s, w, h)?;
    }
    if let Some(l) = labels {
        save_labels(&with_suffix(prefix, ".labels.spvol"), l)?;
        let v: Vec<f64> = l.labels().iter().map(|&x| x as f64).collect();
        for (name, w, h, s) in png::mid_slices(&v, l.dims) {
            png::write_gray(&with_suffix(prefix, &format!(".labels.{name}.png")), &s, w, h)?;
        }
    }
    Ok(())
}

fn reconstruct(a: ReconstructArgs, command: Vec<String>) -> Res<()> {
    let ckpt = crate::autodiff::Checkpoint::load(&a.ckpt)?;
    let precision: Precision = ckpt.meta.get("train.precision").unwrap_or("f32").parse()?;
    let mut kv = ckpt.meta.clone();
    if let Some(d) = &a.dims {
        kv.set("reconstruct.dims", parse_dims(d)?);
    }
    let outputs = ["vol.spvol", "labels.spvol"].iter().map(|s| with_suffix(&a.out, &format!(".{s}"))).collect();
    let m = RunManifest { command, seed: 0, config: kv, inputs: vec![a.ckpt.clone(), a.pa.clone(), a.lat.clone()], outputs };
    let mpath = with_suffix(&a.out, ".manifest.txt");
    begin(&m, &mpath)?;
    match precision {
        Precision::F32 => reconstruct_typed::<f32>(&ckpt, &a)?,
        Precision::F64 => reconstruct_typed::<f64>(&ckpt, &a)?,
    }
    finish(&m, &mpath)
}

fn reconstruct_typed<T: Real>(ckpt: &crate::autodiff::Checkpoint, a: &ReconstructArgs) -> Res<()> {
    let t = Trained::<T>::from_checkpoint(ckpt)?;
    let pa = Projection::load(&a.pa, t.geometry.pa)?;
    let lat = Projection::load(&a.lat, t.geometry.lat)?;
    let dims = match &a.dims {
        Some(d) => parse_dims(d)?,
        None => t.geometry.volume.dims,
    };
    let (vol, labels) = t.reconstruct(&pa, &lat, dims)?;
    save_pair(&a.out, &vol, Some(&labels))
}

fn file_stem(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn evaluate(a: EvalArgs, command: Vec<String>) -> Res<()> {
    let pred_vol_path = with_suffix(&a.pred, ".vol.spvol");
    let pred_lab_path = with_suffix(&a.pred, ".labels.spvol");
    let truth_vol_path = with_suffix(&a.truth, ".vol.spvol");
    let truth_lab_path = with_suffix(&a.truth, ".labels.spvol");
    let mut inputs = vec![pred_vol_path.clone(), truth_vol_path.clone(), truth_lab_path.clone()];
    let has_pred_labels = pred_lab_path.is_file();
    if has_pred_labels {
        inputs.push(pred_lab_path.clone());
    }
    let mut config = KvMap::new();
    config.set("eval.mesh", a.mesh);
    config.set("eval.ssim", "slice-wise along z, gaussian window 11, sigma 1.5");
    let m = RunManifest { command, seed: 0, config, inputs, outputs: vec![a.out.clone()] };
    let mpath = with_suffix(&a.out, ".manifest.txt");
    begin(&m, &mpath)?;
    let pred_vol = load_intensity(&pred_vol_path)?;
    let truth_vol = load_intensity(&truth_vol_path)?;
    let truth_raw = load_labels(&truth_lab_path, None)?;
    let pred_raw = if has_pred_labels { Some(load_labels(&pred_lab_path, None)?) } else { None };
    let classes = a.classes.unwrap_or_else(|| truth_raw.classes().max(pred_raw.as_ref().map_or(0, |p| p.classes())));
    let truth = LabelGrid::from_labels(truth_raw.dims, truth_raw.spacing, classes, truth_raw.labels().to_vec())?;
    let pred = pred_raw.map(|p| LabelGrid::from_labels(p.dims, p.spacing, classes, p.labels().to_vec())).transpose()?;
    let method = a.method.clone().unwrap_or_else(|| file_stem(&a.pred));
    let report = eval::evaluate(&file_stem(&a.truth), &method, &pred_vol, pred.as_ref(), &truth_vol, &truth)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    eval::write_reports_csv(&a.out, classes, &[report])?;
    let mut m = m;
    if a.mesh {
        let Some(pred) = &pred else {
            return Err(Box::new(ConfigError("--mesh needs predicted labels".into())));
        };
        for c in 1..=classes {
            let mut mesh = class_mesh(pred.labels(), pred.dims, pred.spacing, c)?;
            mesh.laplacian_smooth(10, 0.5);
            let p = a.out.with_extension(format!("class{c}.obj"));
            mesh.write_obj(&p)?;
            m.outputs.push(p);
        }
    }
    finish(&m, &mpath)
}

/// Volume geometry implied by two fitted canonical projections.
fn geometry_from_projections(pa: &Projection, lat: &Projection, dims: Dims) -> Res<VolumeGeometry> {
    let ex = pa.detector.nu as f64 * pa.detector.pitch_u;
    let ey = lat.detector.nu as f64 * lat.detector.pitch_u;
    let ez = pa.detector.nv as f64 * pa.detector.pitch_v;
    Ok(VolumeGeometry::new(dims, Spacing::new(ex / dims.nx as f64, ey / dims.ny as f64, ez / dims.nz as f64))?)
}

fn baseline_fbp(a: FbpArgs, command: Vec<String>) -> Res<()> {
    let dims = parse_dims(&a.dims)?;
    let mut config = KvMap::new();
    config.set("fbp.dims", dims);
    config.set("fbp.filter", "ram-lak");
    let m = RunManifest { command, seed: 0, config, inputs: vec![a.pa.clone(), a.lat.clone()], outputs: vec![with_suffix(&a.out, ".vol.spvol")] };
    let mpath = with_suffix(&a.out, ".manifest.txt");
    begin(&m, &mpath)?;
    // Poses are the canonical ones; rebuild them for the implied volume.
    let probe = |p: &Path| Projection::load(p, placeholder_pose());
    let (pa0, lat0) = (probe(&a.pa)?, probe(&a.lat)?);
    let vg = geometry_from_projections(&pa0, &lat0, dims)?;
    let g = BiplanarGeometry::fitted(vg, pa0.detector.nu, pa0.detector.nv)?;
    let pa = Projection { pose: g.pa, ..pa0 };
    let lat = Projection { pose: g.lat, ..lat0 };
    let vol = fbp_two_view(&pa, &lat, dims, vg.spacing)?;
    save_pair(&a.out, &vol, None)?;
    finish(&m, &mpath)
}

fn placeholder_pose() -> crate::projector::ViewPose {
    crate::projector::ViewPose {
        view_id: crate::projector::ViewId::Custom,
        ray_direction: [0.0, 1.0, 0.0],
        detector_u_axis: [1.0, 0.0, 0.0],
        detector_v_axis: [0.0, 0.0, 1.0],
        detector_origin: [0.0; 3],
    }
}

fn ablate(a: AblateArgs, command: Vec<String>) -> Res<()> {
    let ds = Dataset::load(&a.data)?;
    let (field, config) = a.opts.resolve(ds.classes)?;
    let seeds: Vec<u64> = parse_list(&a.seeds, "seeds")?;
    let arms = match a.suite {
        Suite::Decoders => tr::decoder_arms(&field, &config),
        Suite::Structures => tr::structure_arms(&field, &config),
    };
    let mut kv = resolved_kv(&field, &config);
    kv.set("ablate.suite", format!("{:?}", a.suite).to_lowercase());
    kv.set("ablate.seeds", &a.seeds);
    kv.set("ablate.arms", arms.iter().map(|x| x.name.as_str()).collect::<Vec<_>>().join(","));
    let mut inputs = vec![a.data.clone()];
    inputs.extend(a.opts.config.clone());
    let m = RunManifest { command, seed: config.seed, config: kv, inputs, outputs: vec![a.out.clone()] };
    let mpath = a.out.join("manifest.txt");
    begin(&m, &mpath)?;
    let results = match config.precision {
        Precision::F32 => tr::run_ablation::<f32>(&ds, &arms, &seeds)?,
        Precision::F64 => tr::run_ablation::<f64>(&ds, &arms, &seeds)?,
    };
    write_text(&a.out.join("ablation.csv"), &tr::ablation_csv(&results))?;
    let mut summary = String::from("arm,median_psnr,median_dice\n");
    for arm in &arms {
        let rs: Vec<_> = results.iter().filter(|r| r.arm == arm.name).collect();
        let p: Vec<f64> = rs.iter().map(|r| r.mean_psnr()).collect();
        let d: Vec<f64> = rs.iter().map(|r| r.mean_dice()).collect();
        summary.push_str(&format!("{},{},{}\n", arm.name, tr::median(&p), tr::median(&d)));
    }
    write_text(&a.out.join("summary.csv"), &summary)?;
    finish(&m, &mpath)
}

fn transfer(a: TransferArgs, command: Vec<String>) -> Res<()> {
    let ckpt = crate::autodiff::Checkpoint::load(&a.ckpt)?;
    let ds = Dataset::load(&a.data)?;
    ds.require(&a.subject)?;
    let mut base = TrainConfig::from_kv(&ckpt.meta)?;
    let file = match &a.opts.config {
        Some(p) => read_kv_file(p)?,
        None => KvMap::new(),
    };
    let mut kv = KvMap::new();
    base.to_kv(&mut kv);
    base = TrainConfig::from_kv(&kv.merged(&file).merged(&a.opts.overrides()))?;
    let arms: Vec<(&str, FreezeMask)> = match a.freeze {
        TransferFreeze::Decoder => vec![("freeze_decoder", FreezeMask::decoder_transfer())],
        TransferFreeze::Encoder => vec![("freeze_encoder", FreezeMask::encoder_transfer())],
        TransferFreeze::Both => vec![("freeze_decoder", FreezeMask::decoder_transfer()), ("freeze_encoder", FreezeMask::encoder_transfer())],
    };
    let mut cfg = KvMap::new();
    base.to_kv(&mut cfg);
    cfg.set("transfer.subject", &a.subject);
    cfg.set("transfer.arms", arms.iter().map(|x| x.0).collect::<Vec<_>>().join(","));
    let mut inputs = vec![a.ckpt.clone(), a.data.clone()];
    inputs.extend(a.opts.config.clone());
    let m = RunManifest { command, seed: base.seed, config: cfg, inputs, outputs: vec![a.out.clone()] };
    let mpath = a.out.join("manifest.txt");
    begin(&m, &mpath)?;
    let precision: Precision = ckpt.meta.get("train.precision").unwrap_or("f32").parse()?;
    match precision {
        Precision::F32 => transfer_typed::<f32>(&ckpt, &ds, &a, &base, &arms)?,
        Precision::F64 => transfer_typed::<f64>(&ckpt, &ds, &a, &base, &arms)?,
    }
    finish(&m, &mpath)
}

fn transfer_typed<T: Real>(ckpt: &crate::autodiff::Checkpoint, ds: &Dataset, a: &TransferArgs, config: &TrainConfig, arms: &[(&str, FreezeMask)]) -> Res<()> {
    let pretrained = Trained::<T>::from_checkpoint(ckpt)?;
    if pretrained.geometry != ds.geometry {
        return Err(Box::new(ConfigError("checkpoint geometry does not match the dataset".into())));
    }
    let subject = ds.require(&a.subject)?;
    create_dir(&a.out)?;
    let mut reports: Vec<MetricsReport> = Vec::new();
    let mut summary = String::from("arm,decoder_unchanged,encoder_unchanged\n");
    for (name, freeze) in arms {
        let o = tr::transfer(&pretrained, subject, config, *freeze)?;
        let unchanged = |prefix: &str| {
            pretrained.store.iter().zip(o.trained.store.iter()).filter(|(p, _)| p.name.starts_with(prefix)).all(|(p, q)| {
                p.value.data.iter().zip(&q.value.data).all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
            })
        };
        summary.push_str(&format!("{name},{},{}\n", unchanged(crate::field::DECODER_PREFIX), unchanged(crate::encoder::ENCODER_PREFIX)));
        save_run(&o.trained, &a.out.join(format!("{name}.spckpt")))?;
        save_pair(&a.out.join(format!("{}.{name}", a.subject)), &o.volume, Some(&o.labels))?;
        reports.push(eval::evaluate(&subject.id, name, &o.volume, Some(&o.labels), &subject.volume, &subject.labels)?);
    }
    eval::write_reports_csv(&a.out.join("metrics.csv"), ds.classes, &reports)?;
    write_text(&a.out.join("frozen.csv"), &summary)
}
