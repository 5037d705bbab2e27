//! The `ct-classify` command line.
//!
//! A dataset directory holds `manifest.csv` plus the images it lists, at
//! paths relative to the directory. Every verb except `predict` works on
//! such a directory.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::augment::{
    assign_splits, expand_where, materialize, AugmentationSpec, SplitRatios,
    PAPER_EXPANSION_TARGETS,
};
use crate::dataset::{
    build_manifest, load_manifest, save_manifest, ClassMap, DatasetManifest, Record, Split,
    CLASS_NAMES,
};
use crate::imaging::{load_grayscale, preprocess, ClaheParams, INPUT_SIZE};
use crate::metrics::{render_report, report_csv};
use crate::nn::{build_paper_model, Model, PAPER_INPUT_SHAPE};
use crate::train::{
    evaluate, load_checkpoint, predict, train_to_dir, ManifestSource, OptimizerConfig, TrainConfig,
};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const SEED_ENV: &str = "CT_CLASSIFY_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "ct-classify",
    version,
    about = "Lung CT scan classification pipeline"
)]
pub struct Command {
    /// Seed for every random choice (splits, augmentation, initialisation, shuffling).
    #[arg(long, global = true, env = SEED_ENV)]
    pub seed: Option<u64>,

    /// TOML file with [imaging], [augment], [split] and [train] sections.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Resize, enhance (CLAHE) and denoise every image into a new dataset directory.
    Preprocess(PreprocessArgs),
    /// Assign a stratified train/val/test split to a dataset's manifest.
    Split(SplitArgs),
    /// Add augmented copies until each class reaches its target count.
    Augment(AugmentArgs),
    /// Train the classifier on the train split, validating on the val split.
    Train(TrainArgs),
    /// Print the metrics report of a checkpoint on one split.
    Evaluate(EvaluateArgs),
    /// Classify a single image.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Raw dataset: class directories, or a directory with a manifest.csv.
    #[arg(long)]
    pub input: PathBuf,
    /// Destination dataset directory.
    #[arg(long)]
    pub output: PathBuf,
    /// Output side length in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub tiles_m: Option<usize>,
    #[arg(long)]
    pub tiles_n: Option<usize>,
    /// Clip limit as a fraction of each tile's pixel count.
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub train: Option<f64>,
    #[arg(long)]
    pub val: Option<f64>,
    #[arg(long)]
    pub test: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Per-class target counts, comma separated in label order
    /// (default 1282,4090,3089).
    #[arg(long, value_delimiter = ',', value_name = "N,N,N")]
    pub targets: Option<Vec<usize>>,
    /// Expand every record instead of only the train split.
    #[arg(long)]
    pub all: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Directory receiving model.ckpt and curves.csv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// `adam` or `sgd`.
    #[arg(long, value_parser = ["adam", "sgd"])]
    pub optimizer: Option<String>,
    /// SGD momentum.
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Weight the loss by inverse class frequency.
    #[arg(long)]
    pub class_weighting: bool,
    /// Skip unreadable images with a warning instead of aborting.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Split to evaluate: train, val, test or unsplit.
    #[arg(long, default_value = "val")]
    pub split: Split,
    /// Also write the per-class report as CSV.
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Run the preprocessing chain on the image first.
    #[arg(long)]
    pub raw: bool,
}

/// `[imaging]` section.
#[derive(Clone, Copy, Debug, PartialEq, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImagingConfig {
    pub size: usize,
    pub tiles_m: usize,
    pub tiles_n: usize,
    pub clip: f64,
    pub bins: usize,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        let c = ClaheParams::default();
        Self {
            size: INPUT_SIZE,
            tiles_m: c.tiles_m,
            tiles_n: c.tiles_n,
            clip: c.clip,
            bins: c.bins,
        }
    }
}

impl ImagingConfig {
    pub fn clahe(&self) -> ClaheParams {
        ClaheParams {
            tiles_m: self.tiles_m,
            tiles_n: self.tiles_n,
            clip: self.clip,
            bins: self.bins,
            ..ClaheParams::default()
        }
    }
}

/// Contents of the `--config` file.
#[derive(Clone, Debug, Default, PartialEq, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub imaging: ImagingConfig,
    pub augment: AugmentationSpec,
    pub split: SplitRatios,
    pub train: TrainConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().trim().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message().trim())))
    }
}

/// Parses arguments (the first item is the program name).
pub fn parse_cli<I, T>(argv: I) -> std::result::Result<Command, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    Command::try_parse_from(argv)
}

/// Parses and runs; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match parse_cli(argv) {
        Ok(cmd) => execute(&cmd),
        Err(e) => {
            let _ = e.print();
            e.exit_code()
        }
    }
}

/// Runs a parsed command: 0 on success, 1 with a one-line diagnostic on
/// standard error otherwise.
pub fn execute(cmd: &Command) -> i32 {
    match execute_inner(cmd) {
        Ok(()) => 0,
        Err(e) => {
            let line = e.to_string().replace('\n', " ");
            eprintln!("ct-classify: error: {line}");
            1
        }
    }
}

/// The configuration in effect after applying the file, then the flags.
pub fn resolve_config(cmd: &Command) -> Result<(Config, u64)> {
    let mut config = match &cmd.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let seed = cmd.seed.or(config.seed).unwrap_or(0);
    match &cmd.verb {
        Verb::Preprocess(a) => {
            let im = &mut config.imaging;
            set(&mut im.size, a.size);
            set(&mut im.tiles_m, a.tiles_m);
            set(&mut im.tiles_n, a.tiles_n);
            set(&mut im.clip, a.clip);
            set(&mut im.bins, a.bins);
        }
        Verb::Split(a) => {
            set(&mut config.split.train, a.train);
            set(&mut config.split.val, a.val);
            set(&mut config.split.test, a.test);
        }
        Verb::Train(a) => {
            let t = &mut config.train;
            set(&mut t.epochs, a.epochs);
            set(&mut t.batch_size, a.batch_size);
            t.class_weighting |= a.class_weighting;
            t.strict &= !a.lenient;
            match a.optimizer.as_deref() {
                Some("sgd") if !matches!(t.optimizer, OptimizerConfig::Sgd { .. }) => {
                    t.optimizer = OptimizerConfig::Sgd {
                        lr: t.optimizer.lr(),
                        momentum: 0.0,
                    }
                }
                Some("adam") if !matches!(t.optimizer, OptimizerConfig::Adam { .. }) => {
                    t.optimizer = OptimizerConfig::default().with_lr(t.optimizer.lr())
                }
                _ => {}
            }
            if let Some(lr) = a.lr {
                t.optimizer = t.optimizer.with_lr(lr);
            }
            if let Some(m) = a.momentum {
                match &mut t.optimizer {
                    OptimizerConfig::Sgd { momentum, .. } => *momentum = m,
                    OptimizerConfig::Adam { .. } => {
                        return Err(Error::argument(
                            "--momentum applies to the sgd optimizer only",
                        ))
                    }
                }
            }
        }
        _ => {}
    }
    config.train.seed = seed;
    Ok((config, seed))
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn execute_inner(cmd: &Command) -> Result<()> {
    let (config, seed) = resolve_config(cmd)?;
    match &cmd.verb {
        Verb::Preprocess(a) => run_preprocess(a, &config.imaging),
        Verb::Split(a) => run_split(a, &config.split, seed),
        Verb::Augment(a) => run_augment(a, &config.augment, seed),
        Verb::Train(a) => run_train(a, &config.train),
        Verb::Evaluate(a) => run_evaluate(a, config.train.rescale),
        Verb::Predict(a) => run_predict(a, &config.imaging, config.train.rescale),
    }
}

fn manifest_path(data: &Path) -> PathBuf {
    data.join(MANIFEST_FILE)
}

/// Records of a raw dataset: its manifest if present, otherwise the class
/// directories (either the distribution's names or the bare class names).
fn discover(input: &Path) -> Result<DatasetManifest> {
    let listed = manifest_path(input);
    if listed.is_file() {
        return load_manifest(&listed);
    }
    let bare = ClassMap(
        CLASS_NAMES
            .iter()
            .enumerate()
            .map(|(i, n)| (n.to_string(), i))
            .collect(),
    );
    let mut last_warnings = vec![];
    for map in [ClassMap::default(), bare] {
        let built = build_manifest(input, &map)?;
        if !built.manifest.is_empty() {
            for w in &built.warnings {
                log::warn!("{w}");
            }
            return Ok(built.manifest);
        }
        last_warnings = built.warnings;
    }
    let detail = last_warnings.join("; ");
    Err(Error::argument(format!(
        "no images found under {} ({detail})",
        input.display()
    )))
}

fn png_path(path: &str) -> String {
    match path.rfind('.') {
        Some(i) if i > path.rfind('/').map_or(0, |s| s + 1) => format!("{}.png", &path[..i]),
        _ => format!("{path}.png"),
    }
}

fn run_preprocess(a: &PreprocessArgs, imaging: &ImagingConfig) -> Result<()> {
    let params = imaging.clahe();
    params.validate()?;
    let manifest = discover(&a.input)?;
    let records: Vec<Record> = manifest
        .records()
        .par_iter()
        .map(|r| {
            let img = load_grayscale(a.input.join(&r.path))?;
            let out = preprocess(&img, imaging.size, &params)?;
            let path = png_path(&r.path);
            out.save_png(a.output.join(&path))?;
            Ok(Record::new(path, r.label, r.split))
        })
        .collect::<Result<_>>()?;
    let out = DatasetManifest::from_records(records)?;
    save_manifest(&out, manifest_path(&a.output))?;
    println!(
        "preprocessed {} images into {}",
        out.len(),
        a.output.display()
    );
    Ok(())
}

fn counts_line(m: &DatasetManifest) -> String {
    m.class_counts()
        .iter()
        .zip(m.class_names())
        .map(|(c, n)| format!("{n} {c}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn run_split(a: &SplitArgs, ratios: &SplitRatios, seed: u64) -> Result<()> {
    let path = manifest_path(&a.data);
    let tagged = assign_splits(&load_manifest(&path)?, ratios, seed)?;
    save_manifest(&tagged, &path)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        let part = tagged.with_split(split);
        println!("{split}: {} ({})", part.len(), counts_line(&part));
    }
    Ok(())
}

fn run_augment(a: &AugmentArgs, spec: &AugmentationSpec, seed: u64) -> Result<()> {
    spec.validate()?;
    let path = manifest_path(&a.data);
    let manifest = load_manifest(&path)?;
    let targets = a
        .targets
        .clone()
        .unwrap_or_else(|| PAPER_EXPANSION_TARGETS.to_vec());
    let selection = if a.all { None } else { Some(Split::Train) };
    let expansion = expand_where(&manifest, &targets, seed, selection)?;
    materialize(&expansion, &a.data, spec)?;
    save_manifest(&expansion.manifest, &path)?;
    println!(
        "generated {} images; dataset now {} ({})",
        expansion.jobs.len(),
        expansion.manifest.len(),
        counts_line(&expansion.manifest)
    );
    Ok(())
}

fn run_train(a: &TrainArgs, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    let manifest = load_manifest(manifest_path(&a.data))?;
    let (train_m, val_m) = (
        manifest.with_split(Split::Train),
        manifest.with_split(Split::Val),
    );
    if train_m.is_empty() || val_m.is_empty() {
        return Err(Error::argument(format!(
            "{} needs train and val records; run `split` first",
            manifest_path(&a.data).display()
        )));
    }
    let model = build_paper_model(config.seed);
    let stdout = std::io::stdout();
    let (_, _, outputs) = train_to_dir(model, &a.data, &train_m, &val_m, config, &a.out, |e| {
        let _ = writeln!(
            stdout.lock(),
            "epoch {:>3}  loss {:.4}  acc {:.4}  val_loss {:.4}  val_acc {:.4}",
            e.epoch,
            e.train_loss,
            e.train_acc,
            e.val_loss,
            e.val_acc
        );
    })?;
    println!(
        "wrote {} and {}",
        outputs.checkpoint.display(),
        outputs.curves.display()
    );
    Ok(())
}

fn run_evaluate(a: &EvaluateArgs, rescale: f64) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let manifest = load_manifest(manifest_path(&a.data))?.with_split(a.split);
    if manifest.is_empty() {
        return Err(Error::argument(format!(
            "no {} records to evaluate",
            a.split
        )));
    }
    let source = ManifestSource::new(&a.data, &manifest);
    let eval = evaluate(&model, &source, manifest.class_names(), rescale)?;
    print!("{}", render_report(&eval.report));
    if let Some(path) = &a.csv {
        std::fs::write(path, report_csv(&eval.report)).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn run_predict(a: &PredictArgs, imaging: &ImagingConfig, rescale: f64) -> Result<()> {
    let model: Model<f32> = load_checkpoint(&a.checkpoint)?;
    let mut img = load_grayscale(&a.image)?;
    if a.raw {
        let side = model
            .input_shape()
            .first()
            .copied()
            .unwrap_or(PAPER_INPUT_SHAPE[0]);
        img = preprocess(&img, side, &imaging.clahe())?;
    }
    let probs = predict(&model, &img, rescale)?;
    let best = probs.argmax().expect("non-empty output");
    let name = CLASS_NAMES.get(best).copied().unwrap_or("unknown");
    let listed: Vec<String> = probs
        .data()
        .iter()
        .zip(CLASS_NAMES)
        .map(|(p, n)| format!("{n}={p:.6}"))
        .collect();
    println!("{name} {}", listed.join(" "));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<Command, clap::Error> {
        parse_cli(std::iter::once("ct-classify").chain(args.iter().copied()))
    }

    #[test]
    fn parses_verbs() {
        let cmd = parse(&["preprocess", "--input", "raw/", "--output", "clean/"]).unwrap();
        assert!(matches!(cmd.verb, Verb::Preprocess(ref a) if a.input == Path::new("raw/")));

        let cmd = parse(&[
            "train", "--data", "d", "--out", "o", "--epochs", "10", "--seed", "7",
        ])
        .unwrap();
        assert_eq!(cmd.seed, Some(7));
        let (config, seed) = resolve_config(&cmd).unwrap();
        assert_eq!((config.train.epochs, seed, config.train.seed), (10, 7, 7));
    }

    #[test]
    fn usage_errors_exit_2() {
        for args in [
            vec!["frobnicate"],
            vec![],
            vec!["split", "--data", "d", "--bogus"],
            vec![
                "train",
                "--data",
                "d",
                "--out",
                "o",
                "--optimizer",
                "rmsprop",
            ],
        ] {
            let e = parse(&args).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{args:?}");
        }
    }

    #[test]
    fn help_exits_0() {
        for verb in [
            "preprocess",
            "split",
            "augment",
            "train",
            "evaluate",
            "predict",
        ] {
            let e = parse(&[verb, "--help"]).unwrap_err();
            assert_eq!(e.exit_code(), 0);
            assert!(e.to_string().contains("Usage"));
        }
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "seed = 3\n[train]\nepochs = 4\nbatch_size = 16\n[train.optimizer]\nkind = \"sgd\"\nlr = 0.1\n[imaging]\nclip = 0.02\n",
        )
        .unwrap();
        let p = path.to_str().unwrap();
        let cmd = parse(&[
            "--config", p, "train", "--data", "d", "--out", "o", "--epochs", "6",
        ])
        .unwrap();
        let (config, seed) = resolve_config(&cmd).unwrap();
        assert_eq!(seed, 3);
        assert_eq!((config.train.epochs, config.train.batch_size), (6, 16));
        assert_eq!(
            config.train.optimizer,
            OptimizerConfig::Sgd {
                lr: 0.1,
                momentum: 0.0
            }
        );
        assert_eq!(config.imaging.clip, 0.02);

        let cmd = parse(&[
            "--config",
            p,
            "--seed",
            "9",
            "train",
            "--data",
            "d",
            "--out",
            "o",
            "--lr",
            "0.5",
            "--momentum",
            "0.9",
        ])
        .unwrap();
        let (config, seed) = resolve_config(&cmd).unwrap();
        assert_eq!(seed, 9);
        assert_eq!(
            config.train.optimizer,
            OptimizerConfig::Sgd {
                lr: 0.5,
                momentum: 0.9
            }
        );
    }

    #[test]
    fn bad_config_is_a_runtime_error() {
        assert!(Config::from_toml("[imaging]\nbogus = 1\n").is_err());
        assert!(Config::from_toml("[train]\nepochs = \"ten\"\n").is_err());
        let cmd = parse(&["--config", "/nonexistent/c.toml", "split", "--data", "d"]).unwrap();
        assert_eq!(execute(&cmd), 1);
    }

    #[test]
    fn png_paths() {
        assert_eq!(png_path("Benign cases/a.jpg"), "Benign cases/a.png");
        assert_eq!(png_path("x.y/file"), "x.y/file.png");
        assert_eq!(png_path("n.png"), "n.png");
    }
}
