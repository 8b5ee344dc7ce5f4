//! Command-line front end: JSON-config-driven training plus evaluation,
//! parameter counting, pooling surgery, preprocessing statistics, and
//! feature visualization, each as a subcommand with conventional exit
//! codes (0 success, 1 usage error, 2 runtime error). Diagnostics go to
//! stderr; results go to files (or stdout for scalar answers).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    apply_preprocessing, fit_preprocessing, load_cifar10, load_cifar100, load_stats, save_stats,
    Dataset, DEFAULT_GCN_EPS,
};
use crate::error::{Error, Result};
use crate::ioutil::atomic_write;
use crate::layers::Activation;
use crate::model::{
    build_architecture, load_checkpoint, normalize_architecture_id, save_checkpoint, LayerSpec,
    Model,
};
use crate::saliency::{
    reconstruct, render_visualization, top_activating_patches, write_manifest, ManifestRow,
    NeuronPosition, NeuronRef, SaliencyRule,
};
use crate::train::{train, evaluate, write_metrics_csv, Schedule, TrainConfig};

const EXIT_OK: i32 = 0;
const EXIT_USAGE: i32 = 1;
const EXIT_RUNTIME: i32 = 2;

const USAGE: &str = "\
usage: allconv <command> [options]

commands:
  train        --config FILE
  eval         --checkpoint FILE --data DIR [--stats FILE]
  visualize    --checkpoint FILE --rule backprop|deconvnet|guided
               --layer L --channel C [--switches] [--data DIR]
               [--stats FILE] [--image N] [--top N] [--out FILE]
  count-params --arch ID [--classes N] [--scale S]
  surgery      --checkpoint IN --out OUT
  preprocess   --data DIR --out FILE [--cifar100] [--gcn-eps E] [--zca-eps E]

Training is driven by a JSON config file; every omitted field takes its
default (see the shipped configs). The ACNK_THREADS environment variable,
when set, must be a positive integer cap on worker threads.";

/// Where training and evaluation images come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    /// Binary batch files `data_batch_1..5.bin` + `test_batch.bin`.
    #[default]
    Cifar10,
    /// Binary `train.bin` + `test.bin` with coarse+fine label bytes.
    Cifar100,
    /// Deterministic in-memory rendered-figure corpus (10 classes).
    Synthetic,
}

/// A complete, reproducible training run. Defaults follow the reference
/// protocol: 350 epochs of SGD with momentum 0.9, weight decay 0.001,
/// base learning rate 0.05 cut by 10x at epochs 200, 250, and 300,
/// horizontal-flip + translation augmentation, contrast normalization +
/// whitening, input dropout 0.2, and interior dropout 0.5.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Architecture id, e.g. `allcnn-c` (see `count-params` for the list).
    pub arch: String,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default)]
    pub dataset: DatasetKind,
    /// Directory of dataset files; unused for the synthetic corpus.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    /// Cap on training images (0 = use all). The synthetic corpus
    /// requires an explicit positive count.
    #[serde(default)]
    pub train_samples: usize,
    /// Cap on test images (0 = use all available).
    #[serde(default)]
    pub test_samples: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_base_lr")]
    pub base_lr: f64,
    #[serde(default = "default_milestones")]
    pub milestones: Vec<usize>,
    #[serde(default = "default_lr_factor")]
    pub lr_factor: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Random horizontal flips and +/-5-pixel translations.
    #[serde(default = "default_true")]
    pub augment: bool,
    /// Per-image contrast normalization + fitted whitening.
    #[serde(default = "default_true")]
    pub whiten: bool,
    #[serde(default = "default_input_dropout")]
    pub input_dropout: f64,
    #[serde(default = "default_interior_dropout")]
    pub interior_dropout: f64,
}

fn default_scale() -> f64 {
    1.0
}
fn default_classes() -> usize {
    10
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("run-out")
}
fn default_seed() -> u64 {
    1
}
fn default_epochs() -> usize {
    350
}
fn default_batch() -> usize {
    64
}
fn default_base_lr() -> f64 {
    0.05
}
fn default_milestones() -> Vec<usize> {
    vec![200, 250, 300]
}
fn default_lr_factor() -> f64 {
    0.1
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    0.001
}
fn default_true() -> bool {
    true
}
fn default_input_dropout() -> f64 {
    0.2
}
fn default_interior_dropout() -> f64 {
    0.5
}

impl RunConfig {
    /// Parses a JSON config file, applying defaults for omitted fields.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field checks that don't need any files yet.
    pub fn validate(&self) -> Result<()> {
        let rate_ok = |r: f64| (0.0..1.0).contains(&r);
        if !rate_ok(self.input_dropout) || !rate_ok(self.interior_dropout) {
            return Err(Error::BadRate(format!(
                "dropout rates must lie in [0, 1), got input {} interior {}",
                self.input_dropout, self.interior_dropout
            )));
        }
        let expected = match self.dataset {
            DatasetKind::Cifar10 | DatasetKind::Synthetic => 10,
            DatasetKind::Cifar100 => 100,
        };
        if self.classes != expected {
            return Err(Error::Config(format!(
                "dataset {:?} has {expected} classes but the config says {}",
                self.dataset, self.classes
            )));
        }
        match self.dataset {
            DatasetKind::Synthetic => {
                if self.train_samples == 0 {
                    return Err(Error::Config(
                        "the synthetic corpus needs a positive train_samples count".into(),
                    ));
                }
            }
            _ => {
                if self.data_dir.is_none() {
                    return Err(Error::Config(
                        "data_dir is required for file-based datasets".into(),
                    ));
                }
            }
        }
        // Fail fast on schedule problems before touching any data.
        Schedule::new(self.base_lr, self.milestones.clone(), self.lr_factor)?;
        Ok(())
    }

    /// Loads the train/test pair this config describes, applying the
    /// sample caps.
    fn load_datasets(&self) -> Result<(Dataset, Dataset)> {
        let (train, test) = match self.dataset {
            DatasetKind::Synthetic => {
                let test_n = if self.test_samples == 0 {
                    self.train_samples / 4
                } else {
                    self.test_samples
                };
                (
                    crate::data::synthetic_dataset(
                        self.train_samples,
                        self.seed,
                        0,
                        crate::data::Split::Train,
                    )?,
                    crate::data::synthetic_dataset(
                        test_n.max(1),
                        self.seed,
                        self.train_samples,
                        crate::data::Split::Test,
                    )?,
                )
            }
            DatasetKind::Cifar10 | DatasetKind::Cifar100 => {
                let dir = self.data_dir.as_ref().expect("validated above");
                let (mut train, mut test) = match self.dataset {
                    DatasetKind::Cifar10 => load_cifar10(dir)?,
                    _ => load_cifar100(dir)?,
                };
                if self.train_samples > 0 && self.train_samples < train.len() {
                    train = train.subset(0, self.train_samples)?;
                }
                if self.test_samples > 0 && self.test_samples < test.len() {
                    test = test.subset(0, self.test_samples)?;
                }
                (train, test)
            }
        };
        Ok((train, test))
    }
}

/// Internal failure channel separating usage problems from runtime ones.
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        Failure::Runtime(e)
    }
}

fn usage_err<T>(msg: impl Into<String>) -> std::result::Result<T, Failure> {
    Err(Failure::Usage(msg.into()))
}

/// Runs one invocation. `argv` excludes the program name (pass
/// `std::env::args().skip(1)`). Returns the process exit code.
pub fn dispatch<I>(argv: I) -> i32
where
    I: IntoIterator,
    I::Item: Into<String>,
{
    let args: Vec<String> = argv.into_iter().map(Into::into).collect();
    match run(&args) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{USAGE}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn run(args: &[String]) -> std::result::Result<(), Failure> {
    let cap = parse_worker_cap(std::env::var("ACNK_THREADS").ok().as_deref())
        .map_err(Failure::Usage)?;
    if let Some(cap) = cap {
        apply_worker_cap(cap);
    }
    let Some(command) = args.first() else {
        return usage_err("no command given");
    };
    let rest = &args[1..];
    match command.as_str() {
        "train" => cmd_train(rest),
        "eval" => cmd_eval(rest),
        "visualize" => cmd_visualize(rest),
        "count-params" => cmd_count_params(rest),
        "surgery" => cmd_surgery(rest),
        "preprocess" => cmd_preprocess(rest),
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            Ok(())
        }
        other => usage_err(format!("unknown command '{other}'")),
    }
}

/// Validates the `ACNK_THREADS` environment value: unset means no cap,
/// anything else must parse as a positive integer.
pub fn parse_worker_cap(value: Option<&str>) -> std::result::Result<Option<usize>, String> {
    let Some(raw) = value else { return Ok(None) };
    match raw.trim().parse::<usize>() {
        Ok(n) if n >= 1 => Ok(Some(n)),
        _ => Err(format!(
            "ACNK_THREADS must be a positive integer, got '{raw}'"
        )),
    }
}

/// Caps the global worker pool. The pool can only be sized once per
/// process; later calls (more dispatches in one process) keep the first
/// size, which is reported either way.
fn apply_worker_cap(cap: usize) {
    static POOL: std::sync::OnceLock<usize> = std::sync::OnceLock::new();
    let applied = *POOL.get_or_init(|| {
        match rayon::ThreadPoolBuilder::new().num_threads(cap).build_global() {
            Ok(()) => cap,
            // A pool already exists (library embedding); keep its size.
            Err(_) => rayon::current_num_threads(),
        }
    });
    eprintln!("worker cap: {applied} threads");
}

/// Tiny `--flag value` / `--switch` parser. Every option must be declared
/// as either value-taking or a bare switch; anything else is a usage
/// error.
struct Flags {
    values: BTreeMap<&'static str, String>,
    switches: Vec<&'static str>,
}

impl Flags {
    fn parse(
        args: &[String],
        value_keys: &[&'static str],
        switch_keys: &[&'static str],
    ) -> std::result::Result<Flags, Failure> {
        let mut values = BTreeMap::new();
        let mut switches = Vec::new();
        let mut it = args.iter();
        while let Some(tok) = it.next() {
            let Some(name) = tok.strip_prefix("--") else {
                return usage_err(format!("unexpected argument '{tok}'"));
            };
            if let Some(&key) = value_keys.iter().find(|&&k| k == name) {
                let Some(v) = it.next() else {
                    return usage_err(format!("--{name} needs a value"));
                };
                if values.insert(key, v.clone()).is_some() {
                    return usage_err(format!("--{name} given twice"));
                }
            } else if let Some(&key) = switch_keys.iter().find(|&&k| k == name) {
                if switches.contains(&key) {
                    return usage_err(format!("--{name} given twice"));
                }
                switches.push(key);
            } else {
                return usage_err(format!("unknown option '--{name}'"));
            }
        }
        Ok(Flags { values, switches })
    }

    fn need(&self, key: &'static str) -> std::result::Result<&str, Failure> {
        match self.values.get(key) {
            Some(v) => Ok(v),
            None => usage_err(format!("missing required option --{key}")),
        }
    }

    fn get(&self, key: &'static str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn has(&self, key: &'static str) -> bool {
        self.switches.contains(&key)
    }

    fn usize_opt(&self, key: &'static str) -> std::result::Result<Option<usize>, Failure> {
        match self.get(key) {
            None => Ok(None),
            Some(s) => match s.parse() {
                Ok(v) => Ok(Some(v)),
                Err(_) => usage_err(format!("--{key} must be a non-negative integer, got '{s}'")),
            },
        }
    }

    fn f64_opt(&self, key: &'static str) -> std::result::Result<Option<f64>, Failure> {
        match self.get(key) {
            None => Ok(None),
            Some(s) => match s.parse() {
                Ok(v) => Ok(Some(v)),
                Err(_) => usage_err(format!("--{key} must be a number, got '{s}'")),
            },
        }
    }
}

/// Sets the leading dropout layer (on the raw input, if present) to
/// `input` and every other dropout layer to `interior`.
fn apply_dropout_rates(model: &mut Model<f32>, input: f64, interior: f64) {
    for (li, layer) in model.layers.iter_mut().enumerate() {
        if let LayerSpec::Dropout { rate } = layer {
            *rate = if li == 0 { input } else { interior };
        }
    }
}

/// `train --config FILE`: runs the configured training end to end,
/// leaving `config.json` (effective config), `metrics.csv`,
/// `model.acnk`, and (when whitening) `model.acns` in the output dir.
fn cmd_train(args: &[String]) -> std::result::Result<(), Failure> {
    let flags = Flags::parse(args, &["config"], &[])?;
    let cfg = RunConfig::load(Path::new(flags.need("config")?))?;
    run_training(&cfg)?;
    Ok(())
}

/// The `train` subcommand body; exposed so tests and examples can drive
/// a full run in-process. Returns the per-epoch metrics.
pub fn run_training(cfg: &RunConfig) -> Result<Vec<crate::train::EpochMetrics>> {
    cfg.validate()?;
    // Load (and possibly synthesize) the data before creating any output,
    // so a bad data directory leaves nothing half-written behind.
    let (mut train_set, mut test_set) = cfg.load_datasets()?;
    eprintln!(
        "data: {} train / {} test images, {} classes",
        train_set.len(),
        test_set.len(),
        train_set.classes
    );

    let mut model = build_architecture::<f32>(&cfg.arch, cfg.classes, cfg.scale, cfg.seed)?;
    apply_dropout_rates(&mut model, cfg.input_dropout, cfg.interior_dropout);
    model.validate()?;
    eprintln!(
        "model: {} ({} parameters)",
        model.name,
        model.count_parameters()
    );

    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let effective = serde_json::to_string_pretty(cfg)
        .map_err(|e| Error::Config(format!("config serialization: {e}")))?;
    atomic_write(&cfg.out_dir.join("config.json"), format!("{effective}\n").as_bytes())?;

    let checkpoint_path = cfg.out_dir.join("model.acnk");
    if cfg.whiten {
        let stats = fit_preprocessing(&train_set, DEFAULT_GCN_EPS, None)?;
        train_set = apply_preprocessing(&stats, &train_set)?;
        test_set = apply_preprocessing(&stats, &test_set)?;
        save_stats(&stats, &checkpoint_path.with_extension("acns"))?;
        eprintln!("preprocessing: contrast normalization + whitening fitted and applied");
    }

    let tc = TrainConfig {
        epochs: cfg.epochs,
        batch: cfg.batch,
        schedule: Schedule::new(cfg.base_lr, cfg.milestones.clone(), cfg.lr_factor)?,
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
        augment: cfg.augment,
        seed: cfg.seed,
    };
    let metrics = train(&mut model, &train_set, Some(&test_set), &tc, |m| {
        let test = m
            .test_error
            .map(|e| format!("{:.4}", e))
            .unwrap_or_else(|| "-".into());
        eprintln!(
            "epoch {:>4}  lr {:<9}  train loss {:<10.6}  test error {test}",
            m.epoch, m.lr, m.train_loss
        );
    })?;

    write_metrics_csv(&metrics, &cfg.out_dir.join("metrics.csv"))?;
    save_checkpoint(&model, &checkpoint_path)?;
    eprintln!("wrote {}", checkpoint_path.display());
    Ok(metrics)
}

/// Picks the dataset loader matching a model's class count.
fn load_eval_data(model: &Model<f32>, dir: &Path) -> Result<(Dataset, Dataset)> {
    match model.classes {
        10 => load_cifar10(dir),
        100 => load_cifar100(dir),
        n => Err(Error::Config(format!(
            "no file loader for a {n}-class model; expected 10 or 100"
        ))),
    }
}

/// Applies saved preprocessing statistics when present: an explicit
/// `--stats` path wins; otherwise a sidecar next to the checkpoint
/// (same name, `.acns` extension) is picked up automatically.
fn maybe_whiten(
    ds: Dataset,
    stats_flag: Option<&str>,
    checkpoint: &Path,
) -> Result<Dataset> {
    let path = match stats_flag {
        Some(p) => Some(PathBuf::from(p)),
        None => {
            let sidecar = checkpoint.with_extension("acns");
            sidecar.is_file().then_some(sidecar)
        }
    };
    match path {
        Some(p) => {
            eprintln!("preprocessing: applying statistics from {}", p.display());
            let stats = load_stats(&p)?;
            apply_preprocessing(&stats, &ds)
        }
        None => {
            eprintln!("preprocessing: none (no statistics file found)");
            Ok(ds)
        }
    }
}

/// `eval --checkpoint F --data D [--stats S]`: prints the test error rate
/// (fraction in [0,1]) on stdout.
fn cmd_eval(args: &[String]) -> std::result::Result<(), Failure> {
    let flags = Flags::parse(args, &["checkpoint", "data", "stats"], &[])?;
    let ckpt_path = Path::new(flags.need("checkpoint")?);
    let data_dir = Path::new(flags.need("data")?);
    let model = load_checkpoint(ckpt_path)?;
    let (_, test) = load_eval_data(&model, data_dir)?;
    let test = maybe_whiten(test, flags.get("stats"), ckpt_path)?;
    let err = evaluate(&model, &test)?;
    eprintln!(
        "{}: test error {:.4} over {} images",
        model.name,
        err,
        test.len()
    );
    println!("{err}");
    Ok(())
}

/// `count-params --arch ID [--classes N] [--scale S]`: prints the exact
/// trainable-parameter count on stdout and the layer table on stderr.
fn cmd_count_params(args: &[String]) -> std::result::Result<(), Failure> {
    let flags = Flags::parse(args, &["arch", "classes", "scale"], &[])?;
    let arch = flags.need("arch")?;
    let classes = match flags.usize_opt("classes")? {
        Some(c) => c,
        // The 224x224 model is defined over the 1000-class corpus.
        None if normalize_architecture_id(arch) == "imagenet" => 1000,
        None => 10,
    };
    let scale = flags.f64_opt("scale")?.unwrap_or(1.0);
    let model = build_architecture::<f32>(arch, classes, scale, 1)?;
    eprintln!("{}", describe_model(&model)?);
    println!("{}", model.count_parameters());
    Ok(())
}

/// Renders the layer table with output shapes, one line per layer.
pub fn describe_model(model: &Model<f32>) -> Result<String> {
    let shapes = model.shape_trace(model.in_spatial, model.in_spatial)?;
    let mut out = format!(
        "{}: input {}x{}x{}\n",
        model.name, model.in_channels, model.in_spatial, model.in_spatial
    );
    for (li, layer) in model.layers.iter().enumerate() {
        let desc = match layer {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                padding,
                activation,
            } => {
                let act = match activation {
                    Activation::Identity => "identity".into(),
                    Activation::Relu => "relu".into(),
                    Activation::LeakyRelu { slope } => format!("leaky-relu({slope})"),
                };
                format!("conv {out_channels} x {kernel}x{kernel} s{stride} p{padding} {act}")
            }
            LayerSpec::MaxPool { kernel, stride } => format!("maxpool {kernel}x{kernel} s{stride}"),
            LayerSpec::PNormPool { kernel, stride, p } => {
                format!("pnorm-pool {kernel}x{kernel} s{stride} p={p}")
            }
            LayerSpec::Dropout { rate } => format!("dropout {rate}"),
            LayerSpec::GlobalAvg => "global-avg-pool".into(),
            LayerSpec::SoftmaxCE => "softmax cross-entropy".into(),
        };
        let (c, h, w) = shapes[li + 1];
        writeln!(out, "  {li:>2}  {desc:<40} -> {c}x{h}x{w}").expect("string write");
    }
    write!(out, "  total parameters: {}", model.count_parameters()).expect("string write");
    Ok(out)
}

/// `surgery --checkpoint IN --out OUT`: converts stride-2 convolutions to
/// stride-1 + max-pooling and writes the result as a new checkpoint.
fn cmd_surgery(args: &[String]) -> std::result::Result<(), Failure> {
    let flags = Flags::parse(args, &["checkpoint", "out"], &[])?;
    let model = load_checkpoint(Path::new(flags.need("checkpoint")?))?;
    let pooled = model.pool_surgery()?;
    eprintln!("{}", describe_model(&pooled)?);
    save_checkpoint(&pooled, Path::new(flags.need("out")?))?;
    Ok(())
}

/// `preprocess --data D --out F`: fits contrast-normalization + whitening
/// statistics on the training split and writes them for later runs.
fn cmd_preprocess(args: &[String]) -> std::result::Result<(), Failure> {
    let flags = Flags::parse(args, &["data", "out", "gcn-eps", "zca-eps"], &["cifar100"])?;
    let dir = Path::new(flags.need("data")?);
    let (train, _) = if flags.has("cifar100") {
        load_cifar100(dir)?
    } else {
        load_cifar10(dir)?
    };
    let gcn_eps = flags.f64_opt("gcn-eps")?.unwrap_or(DEFAULT_GCN_EPS);
    let stats = fit_preprocessing(&train, gcn_eps, flags.f64_opt("zca-eps")?)?;
    let out = Path::new(flags.need("out")?);
    save_stats(&stats, out)?;
    eprintln!(
        "fitted on {} images ({}x{}x{}), wrote {}",
        train.len(),
        stats.channels,
        stats.height,
        stats.width,
        out.display()
    );
    Ok(())
}

/// `visualize`: reconstructs what drives one convolution channel. With
/// `--data` the top-activating images are mined and the map is computed
/// on the best (or `--image N`) one alongside receptive-field crops;
/// without it the reconstruction is unconditioned. Writes a PPM grid and,
/// when patches were mined, a CSV manifest next to it.
fn cmd_visualize(args: &[String]) -> std::result::Result<(), Failure> {
    let flags = Flags::parse(
        args,
        &["checkpoint", "rule", "layer", "channel", "data", "stats", "image", "top", "out"],
        &["switches"],
    )?;
    let ckpt_path = Path::new(flags.need("checkpoint")?);
    let rule = SaliencyRule::parse(flags.need("rule")?).map_err(|e| Failure::Usage(e.to_string()))?;
    let layer = flags
        .usize_opt("layer")?
        .ok_or_else(|| Failure::Usage("missing required option --layer".into()))?;
    let channel = flags
        .usize_opt("channel")?
        .ok_or_else(|| Failure::Usage("missing required option --channel".into()))?;
    let top = flags.usize_opt("top")?.unwrap_or(8);
    let out = PathBuf::from(flags.get("out").unwrap_or("visualization.ppm"));
    let use_switches = flags.has("switches");

    let model = load_checkpoint(ckpt_path)?;

    let Some(data_dir) = flags.get("data") else {
        // Unconditioned: seed the channel at the center of its plane.
        let shapes = model.shape_trace(model.in_spatial, model.in_spatial)?;
        let (_, h, w) = shapes[layer + 1];
        let neuron = NeuronRef {
            layer,
            channel,
            position: NeuronPosition::At(h / 2, w / 2),
        };
        let map = reconstruct(&model, None, &neuron, rule, use_switches)?;
        render_visualization(&[map], &[], 1, &out)?;
        eprintln!("wrote {} (unconditioned)", out.display());
        return Ok(());
    };

    let (_, test) = load_eval_data(&model, Path::new(data_dir))?;
    let test = maybe_whiten(test, flags.get("stats"), ckpt_path)?;
    let patches = top_activating_patches(&model, &test, layer, channel, top.max(1))?;
    let image_idx = match flags.usize_opt("image")? {
        Some(i) if i < test.len() => i,
        Some(i) => {
            return Err(Failure::Runtime(Error::Config(format!(
                "--image {i} out of range for {} images",
                test.len()
            ))))
        }
        None => patches[0].image,
    };
    let neuron = NeuronRef {
        layer,
        channel,
        position: NeuronPosition::Max,
    };
    let image = test.images.batch_range(image_idx, 1);
    let map = reconstruct(&model, Some(&image), &neuron, rule, use_switches)?;
    let crops: Vec<_> = patches.iter().map(|p| p.crop.clone()).collect();
    render_visualization(&[map], &[crops], 1 + patches.len(), &out)?;

    let file = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| out.display().to_string());
    let rows: Vec<ManifestRow> = patches
        .iter()
        .map(|p| ManifestRow {
            neuron: format!("layer{layer}-ch{channel}"),
            image: p.image,
            activation: p.activation,
            file: file.clone(),
        })
        .collect();
    write_manifest(&rows, &out.with_extension("csv"))?;
    eprintln!(
        "wrote {} and {} (reconstruction on image {image_idx}, {} patches)",
        out.display(),
        out.with_extension("csv").display(),
        patches.len()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    /// A short synthetic-data run used by several tests.
    fn desk_config(out_dir: &Path) -> String {
        format!(
            r#"{{
  "arch": "allcnn-a",
  "scale": 0.1,
  "dataset": "synthetic",
  "train_samples": 32,
  "test_samples": 16,
  "out_dir": "{}",
  "epochs": 2,
  "batch": 8,
  "base_lr": 0.02,
  "milestones": [1],
  "augment": true,
  "whiten": false,
  "seed": 7
}}"#,
            out_dir.display()
        )
    }

    #[test]
    fn defaults_follow_the_reference_protocol() {
        let cfg: RunConfig = serde_json::from_str(r#"{"arch": "allcnn-c"}"#).unwrap();
        assert_eq!(cfg.epochs, 350);
        assert_eq!(cfg.batch, 64);
        assert_eq!(cfg.base_lr, 0.05);
        assert_eq!(cfg.milestones, vec![200, 250, 300]);
        assert_eq!(cfg.lr_factor, 0.1);
        assert_eq!(cfg.momentum, 0.9);
        assert_eq!(cfg.weight_decay, 0.001);
        assert!(cfg.augment);
        assert!(cfg.whiten);
        assert_eq!(cfg.input_dropout, 0.2);
        assert_eq!(cfg.interior_dropout, 0.5);
        assert_eq!(cfg.scale, 1.0);
        assert_eq!(cfg.classes, 10);
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.dataset, DatasetKind::Cifar10);
    }

    #[test]
    fn config_validation_catches_cross_field_mistakes() {
        let base = r#"{"arch": "allcnn-c", "dataset": "synthetic", "train_samples": 8"#;
        let ok: RunConfig = serde_json::from_str(&format!("{base}}}")).unwrap();
        ok.validate().unwrap();
        // cifar100 data with the default 10 classes.
        let cfg: RunConfig =
            serde_json::from_str(r#"{"arch": "allcnn-c", "dataset": "cifar100", "data_dir": "x"}"#)
                .unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        // Synthetic corpus without a sample count.
        let cfg: RunConfig =
            serde_json::from_str(r#"{"arch": "allcnn-c", "dataset": "synthetic"}"#).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        //

        // File dataset without a directory.
        let cfg: RunConfig = serde_json::from_str(r#"{"arch": "allcnn-c"}"#).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        // Unknown fields are typos, not extensions.
        assert!(serde_json::from_str::<RunConfig>(r#"{"arch": "a", "epoch": 3}"#).is_err());
    }

    #[test]
    fn unknown_commands_and_flags_are_usage_errors() {
        assert_eq!(dispatch(["frobnicate"]), EXIT_USAGE);
        assert_eq!(dispatch(Vec::<String>::new()), EXIT_USAGE);
        assert_eq!(dispatch(["count-params", "--arch"]), EXIT_USAGE);
        assert_eq!(dispatch(["count-params", "--architecture", "a"]), EXIT_USAGE);
        assert_eq!(dispatch(["count-params"]), EXIT_USAGE);
        assert_eq!(
            dispatch(["eval", "--checkpoint", "x", "--data", "y", "stray"]),
            EXIT_USAGE
        );
        assert_eq!(dispatch(["help"]), EXIT_OK);
    }

    #[test]
    fn worker_cap_must_be_a_positive_integer() {
        assert_eq!(parse_worker_cap(None), Ok(None));
        assert_eq!(parse_worker_cap(Some("4")), Ok(Some(4)));
        assert_eq!(parse_worker_cap(Some(" 2 ")), Ok(Some(2)));
        assert!(parse_worker_cap(Some("0")).is_err());
        assert!(parse_worker_cap(Some("-3")).is_err());
        assert!(parse_worker_cap(Some("many")).is_err());
        assert!(parse_worker_cap(Some("")).is_err());
    }

    #[test]
    fn count_params_prints_the_exact_count() {
        // The full C-derived all-convolutional model. Building it is the
        // same path the subcommand runs; the count matches the model.
        let model = build_architecture::<f32>("all-cnn-c", 10, 1.0, 1).unwrap();
        assert_eq!(model.count_parameters(), 1_369_738);
        assert_eq!(dispatch(["count-params", "--arch", "all-cnn-c"]), EXIT_OK);
        assert_eq!(dispatch(["count-params", "--arch", "nope"]), EXIT_RUNTIME);
        let desc = describe_model(&model).unwrap();
        assert!(desc.contains("conv 10 x 1x1 s1 p0 relu"));
        assert!(desc.contains("-> 10x1x1"));
        assert!(desc.contains("total parameters: 1369738"));
    }

    #[test]
    fn training_run_writes_all_artifacts_and_reruns_bit_identically() {
        let dir = tempfile::tempdir().unwrap();
        let out1 = dir.path().join("run1");
        let cfg_path = write_config(dir.path(), "c1.json", &desk_config(&out1));
        assert_eq!(dispatch(["train", "--config", cfg_path.to_str().unwrap()]), EXIT_OK);
        for f in ["config.json", "metrics.csv", "model.acnk"] {
            assert!(out1.join(f).is_file(), "missing artifact {f}");
        }
        // whiten=false: no statistics sidecar.
        assert!(!out1.join("model.acns").exists());

        // Re-running the *echoed* config into a second directory must give
        // byte-identical metrics and checkpoint.
        let echoed = std::fs::read_to_string(out1.join("config.json")).unwrap();
        let out2 = dir.path().join("run2");
        let echoed = echoed.replace(
            &format!("\"out_dir\": \"{}\"", out1.display()),
            &format!("\"out_dir\": \"{}\"", out2.display()),
        );
        let cfg2 = write_config(dir.path(), "c2.json", &echoed);
        assert_eq!(dispatch(["train", "--config", cfg2.to_str().unwrap()]), EXIT_OK);
        assert_eq!(
            std::fs::read(out1.join("metrics.csv")).unwrap(),
            std::fs::read(out2.join("metrics.csv")).unwrap()
        );
        assert_eq!(
            std::fs::read(out1.join("model.acnk")).unwrap(),
            std::fs::read(out2.join("model.acnk")).unwrap()
        );

        // The checkpoint evaluates on a synthetic-format data dir.
        let data_dir = dir.path().join("synthetic-data");
        crate::data::write_synthetic_cifar10_dir(&data_dir, 20, 16, 7).unwrap();
        assert_eq!(
            dispatch([
                "eval",
                "--checkpoint",
                out1.join("model.acnk").to_str().unwrap(),
                "--data",
                data_dir.to_str().unwrap(),
            ]),
            EXIT_OK
        );
    }

    #[test]
    fn missing_data_dir_fails_at_runtime_without_partial_output() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("never-created");
        let cfg = format!(
            r#"{{"arch": "allcnn-a", "scale": 0.1, "data_dir": "{}/no-such-dir",
                "out_dir": "{}", "epochs": 1}}"#,
            dir.path().display(),
            out.display()
        );
        let cfg_path = write_config(dir.path(), "c.json", &cfg);
        assert_eq!(dispatch(["train", "--config", cfg_path.to_str().unwrap()]), EXIT_RUNTIME);
        assert!(!out.exists(), "failed run must not leave artifacts");
        // Missing config file is also a runtime error (the argv was fine).
        assert_eq!(dispatch(["train", "--config", "/no/such/config.json"]), EXIT_RUNTIME);
    }

    #[test]
    fn surgery_and_visualize_produce_their_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cfg_path = write_config(dir.path(), "c.json", &desk_config(&out));
        assert_eq!(dispatch(["train", "--config", cfg_path.to_str().unwrap()]), EXIT_OK);
        let ckpt = out.join("model.acnk");

        let pooled = dir.path().join("pooled.acnk");
        assert_eq!(
            dispatch([
                "surgery",
                "--checkpoint",
                ckpt.to_str().unwrap(),
                "--out",
                pooled.to_str().unwrap(),
            ]),
            EXIT_OK
        );
        let pooled_model = load_checkpoint(&pooled).unwrap();
        assert!(pooled_model
            .layers
            .iter()
            .any(|l| matches!(l, LayerSpec::MaxPool { .. })));

        // Unconditioned visualization needs no data.
        let vis = dir.path().join("uncond.ppm");
        assert_eq!(
            dispatch([
                "visualize",
                "--checkpoint",
                ckpt.to_str().unwrap(),
                "--rule",
                "deconvnet",
                "--layer",
                "1",
                "--channel",
                "0",
                "--out",
                vis.to_str().unwrap(),
            ]),
            EXIT_OK
        );
        assert!(vis.is_file());

        // Data-conditioned visualization mines patches and a manifest.
        let data_dir = dir.path().join("synthetic-data");
        crate::data::write_synthetic_cifar10_dir(&data_dir, 20, 12, 9).unwrap();
        let vis2 = dir.path().join("guided.ppm");
        assert_eq!(
            dispatch([
                "visualize",
                "--checkpoint",
                ckpt.to_str().unwrap(),
                "--rule",
                "guided",
                "--layer",
                "2",
                "--channel",
                "1",
                "--data",
                data_dir.to_str().unwrap(),
                "--top",
                "3",
                "--out",
                vis2.to_str().unwrap(),
            ]),
            EXIT_OK
        );
        assert!(vis2.is_file());
        let manifest = std::fs::read_to_string(vis2.with_extension("csv")).unwrap();
        assert!(manifest.starts_with("neuron,image,activation,file\n"));
        assert_eq!(manifest.lines().count(), 1 + 3);
        assert!(manifest.contains("layer2-ch1"));
        // An unknown rule is a usage error.
        assert_eq!(
            dispatch([
                "visualize",
                "--checkpoint",
                ckpt.to_str().unwrap(),
                "--rule",
                "magic",
                "--layer",
                "1",
                "--channel",
                "0",
            ]),
            EXIT_USAGE
        );
    }

    #[test]
    fn preprocess_writes_loadable_statistics() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        crate::data::write_synthetic_cifar10_dir(&data_dir, 40, 10, 3).unwrap();
        let out = dir.path().join("stats.acns");
        assert_eq!(
            dispatch([
                "preprocess",
                "--data",
                data_dir.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ]),
            EXIT_OK
        );
        let stats = load_stats(&out).unwrap();
        assert_eq!(
            (stats.channels, stats.height, stats.width),
            (3, 32, 32)
        );
    }
}
