//! Command-line front end: `gen-data`, `train`, `evolve`, `eval`, `infer`.
//!
//! Every command reads the same [`RunConfig`]. Settings come from an
//! optional `key = value` file given with `--config`, then from
//! `--key value` (or `--key=value`) overrides in command-line order.
//! Dashes in override keys are read as underscores. Unknown keys are
//! fatal.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{format_list, parse_entries, parse_list, parse_value};
use crate::data::{generate_dataset, load_dataset, save_dataset, Dataset, DatasetConfig, Split};
use crate::error::{Error, Result};
use crate::geometry::{count_instances, update_labels, Connectivity};
use crate::metrics::{evaluate, reports_csv, summary_text, write_curve_csv, MetricReport};
use crate::model::{load_checkpoint, save_checkpoint, Model, NetworkConfig};
use crate::pnm::{read_image, read_mask, write_mask};
use crate::raster::ClassMask;
use crate::train::{
    final_inference, run_recursive_training, run_static_training, segmentation_inference, write_history,
    TrainConfig, TrainState,
};

#[derive(Debug, Parser)]
#[command(name = "seggrow", version, about = "Segmentation from coarse partial masks by recursive approximation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset into `data_dir`.
    GenData(Options),
    /// Train on the dataset in `data_dir`, writing to `run_dir`.
    Train(Options),
    /// Grow `seed_mask` towards `prediction` and write `output`.
    Evolve(Options),
    /// Score a checkpoint on one split of the dataset.
    Eval(Options),
    /// Segment a single image.
    Infer(Options),
}

#[derive(Debug, Clone, clap::Args)]
pub struct Options {
    /// `--config FILE` and `--key value` settings
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "SETTINGS")]
    pub settings: Vec<String>,
}

impl Command {
    pub fn options(&self) -> &Options {
        match self {
            Command::GenData(o) | Command::Train(o) | Command::Evolve(o) | Command::Eval(o) | Command::Infer(o) => o,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Labels of the approximation task evolve between iterations.
    Recursive,
    /// Labels stay fixed.
    Static,
}

impl std::str::FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "recursive" => Ok(TrainMode::Recursive),
            "static" => Ok(TrainMode::Static),
            other => Err(format!("expected `recursive` or `static`, got `{other}`")),
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainMode::Recursive => "recursive",
            TrainMode::Static => "static",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inference {
    /// Approximation head grown towards the segmentation head.
    Final,
    /// Segmentation head only.
    Segmentation,
}

impl std::str::FromStr for Inference {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "final" => Ok(Inference::Final),
            "segmentation" => Ok(Inference::Segmentation),
            other => Err(format!("expected `final` or `segmentation`, got `{other}`")),
        }
    }
}

impl std::fmt::Display for Inference {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Inference::Final => "final",
            Inference::Segmentation => "segmentation",
        })
    }
}

/// All settings of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
    pub mode: TrainMode,
    /// Defaults to `run_dir/model.ckpt`.
    pub checkpoint: Option<PathBuf>,
    pub split: Split,
    pub inference: Inference,
    pub image: Option<PathBuf>,
    pub seed_mask: Option<PathBuf>,
    pub prediction: Option<PathBuf>,
    /// Growth parameter for `evolve`.
    pub beta: f64,
    /// Classes of the masks given to `evolve`; 0 infers them.
    pub classes: usize,
    pub output: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            data_dir: PathBuf::from("data"),
            run_dir: PathBuf::from("run"),
            mode: TrainMode::Recursive,
            checkpoint: None,
            split: Split::Test,
            inference: Inference::Final,
            image: None,
            seed_mask: None,
            prediction: None,
            beta: 1.0,
            classes: 0,
            output: None,
            threads: 0,
        }
    }
}

fn path_entry(path: &Option<PathBuf>) -> Option<String> {
    path.as_ref().map(|p| p.display().to_string())
}

impl RunConfig {
    /// Sets one key; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || Some(PathBuf::from(value));
        match key {
            "data_dir" => self.data_dir = PathBuf::from(value),
            "run_dir" => self.run_dir = PathBuf::from(value),
            "mode" => self.mode = parse_value(key, value)?,
            "checkpoint" => self.checkpoint = path(),
            "split" => self.split = parse_value(key, value)?,
            "inference" => self.inference = parse_value(key, value)?,
            "image" => self.image = path(),
            "seed_mask" => self.seed_mask = path(),
            "prediction" => self.prediction = path(),
            "beta" => self.beta = parse_value(key, value)?,
            "classes" => self.classes = parse_value(key, value)?,
            "output" => self.output = path(),
            "threads" => self.threads = parse_value(key, value)?,
            "name" => self.dataset.name = value.to_string(),
            "train_count" => self.dataset.train = parse_value(key, value)?,
            "val_count" => self.dataset.val = parse_value(key, value)?,
            "test_count" => self.dataset.test = parse_value(key, value)?,
            "availability" => self.dataset.availability = parse_list(key, value)?,
            _ => {
                let known = self.dataset.scene.set(key, value)?
                    || self.network.set(key, value)?
                    || self.train.set(key, value)?;
                if !known {
                    return Err(Error::config(key, "unknown key"));
                }
            }
        }
        Ok(())
    }

    /// Every setting as `key = value` lines, readable by [`RunConfig::set`].
    pub fn to_text(&self) -> String {
        let mut entries: Vec<(&str, String)> = vec![
            ("data_dir", self.data_dir.display().to_string()),
            ("run_dir", self.run_dir.display().to_string()),
            ("mode", self.mode.to_string()),
            ("split", self.split.to_string()),
            ("inference", self.inference.to_string()),
            ("beta", self.beta.to_string()),
            ("classes", self.classes.to_string()),
            ("threads", self.threads.to_string()),
            ("name", self.dataset.name.clone()),
            ("train_count", self.dataset.train.to_string()),
            ("val_count", self.dataset.val.to_string()),
            ("test_count", self.dataset.test.to_string()),
            ("availability", format_list(&self.dataset.availability)),
        ];
        for (key, value) in [
            ("checkpoint", path_entry(&self.checkpoint)),
            ("image", path_entry(&self.image)),
            ("seed_mask", path_entry(&self.seed_mask)),
            ("prediction", path_entry(&self.prediction)),
            ("output", path_entry(&self.output)),
        ] {
            if let Some(value) = value {
                entries.push((key, value));
            }
        }
        entries.extend(self.dataset.scene.entries());
        entries.extend(self.network.entries());
        entries.extend(self.train.entries());
        entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        let entries =
            parse_entries(text).map_err(|r| Error::config("config", format!("{}: {r}", origin.display())))?;
        for e in entries {
            self.set(&e.key, &e.value)?;
        }
        Ok(())
    }

    /// Builds the config from command-line settings: the `--config` file
    /// first, wherever it appears, then each override in order.
    pub fn from_settings(settings: &[String]) -> Result<Self> {
        let pairs = setting_pairs(settings)?;
        let mut cfg = RunConfig::default();
        for (_, value) in pairs.iter().filter(|(k, _)| k == "config") {
            let path = Path::new(value);
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_text(&text, path)?;
        }
        for (key, value) in pairs.iter().filter(|(k, _)| k != "config") {
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.run_dir.join(MODEL_FILE))
    }
}

/// Splits `--key value` and `--key=value` arguments into pairs.
pub fn setting_pairs(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--") else {
            return Err(Error::config(arg.as_str(), "expected `--key value`"));
        };
        let (key, value) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let value = it.next().ok_or_else(|| Error::config(body, "missing value"))?;
                (body.to_string(), value.clone())
            }
        };
        out.push((key.replace('-', "_"), value));
    }
    Ok(out)
}

/// Final weights of a training run.
pub const MODEL_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const CURVE_FILE: &str = "approximation_curve.csv";
pub const CONFIG_FILE: &str = "config.txt";

fn required<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| Error::config(key, "required by this command"))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Runs one command; the caller maps errors to exit codes.
pub fn run(command: &Command) -> Result<()> {
    let cfg = RunConfig::from_settings(&command.options().settings)?;
    // a pool may already exist when called repeatedly in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    match command {
        Command::GenData(_) => cmd_gen_data(&cfg),
        Command::Train(_) => cmd_train(&cfg).map(|_| ()),
        Command::Evolve(_) => cmd_evolve(&cfg),
        Command::Eval(_) => cmd_eval(&cfg).map(|_| ()),
        Command::Infer(_) => cmd_infer(&cfg),
    }
}

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<()> {
    let (dataset, skipped) = generate_dataset(&cfg.dataset)?;
    save_dataset(&dataset, &cfg.data_dir)?;
    let count = |s| dataset.split(s).count();
    println!(
        "wrote {} items to {}: train {}, val {}, test {}",
        dataset.items.len(),
        cfg.data_dir.display(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test)
    );
    println!("training labels per task: {:?}", dataset.label_counts(Split::Train));
    if skipped > 0 {
        println!("instances without a weak label: {skipped}");
    }
    Ok(())
}

/// Network shape for a dataset: channels and classes follow the data.
pub fn network_for(cfg: &RunConfig, dataset: &Dataset) -> NetworkConfig {
    NetworkConfig {
        in_channels: dataset.items.first().map_or(1, |i| i.image.channels()),
        task_classes: dataset.task_classes.clone(),
        ..cfg.network.clone()
    }
}

fn write_snapshot(dir: &Path, ids: &[String], labels: &[Option<ClassMask>]) -> Result<()> {
    create_dir(dir)?;
    for (id, label) in ids.iter().zip(labels) {
        if let Some(label) = label {
            write_mask(&dir.join(format!("{id}.pgm")), label)?;
        }
    }
    Ok(())
}

fn snapshot_dir(run_dir: &Path, k: usize) -> PathBuf {
    run_dir.join("snapshots").join(format!("k{k:02}"))
}

/// Trains and writes `config.txt`, `ckpt_k{K}.ckpt` per iteration,
/// `history.csv`, approximation snapshots, the curve and `model.ckpt`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainState> {
    let dataset = load_dataset(&cfg.data_dir)?;
    let net = network_for(cfg, &dataset);
    net.validate()?;
    cfg.train.validate()?;
    let run_dir = &cfg.run_dir;
    create_dir(run_dir)?;
    let config_path = run_dir.join(CONFIG_FILE);
    fs::write(&config_path, cfg.to_text()).map_err(|e| Error::io(&config_path, e))?;
    let recursive = cfg.mode == TrainMode::Recursive;

    let mut observer = |model: &Model<f32>, state: &TrainState| -> Result<()> {
        if recursive {
            if state.k == 1 {
                write_snapshot(&snapshot_dir(run_dir, 0), &state.item_ids, &state.snapshots[0])?;
            }
            write_snapshot(&snapshot_dir(run_dir, state.k), &state.item_ids, &state.task2_labels)?;
        }
        save_checkpoint(model, &run_dir.join(format!("ckpt_k{}.ckpt", state.k)))?;
        write_history(&run_dir.join(HISTORY_FILE), &state.history)?;
        let r = state.history.last().expect("observer runs after an iteration");
        let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:.4}"));
        eprintln!(
            "k={} loss={} dice={} t={:.0}s",
            r.k,
            fmt(r.mean_loss),
            fmt(r.approximation_dice),
            r.wall_seconds
        );
        Ok(())
    };
    let (model, state) = match cfg.mode {
        TrainMode::Recursive => run_recursive_training(&dataset, &net, &cfg.train, &mut observer)?,
        TrainMode::Static => run_static_training(&dataset, &net, &cfg.train, &mut observer)?,
    };
    save_checkpoint(&model, &run_dir.join(MODEL_FILE))?;
    let curve = state.approximation_curve();
    if recursive && !curve.is_empty() {
        write_curve_csv(&curve, &run_dir.join(CURVE_FILE))?;
    }
    Ok(state)
}

fn read_mask_pair(cfg: &RunConfig) -> Result<(ClassMask, ClassMask)> {
    let seed_path = required(&cfg.seed_mask, "seed_mask")?;
    let pred_path = required(&cfg.prediction, "prediction")?;
    let classes = match cfg.classes {
        0 => read_mask(seed_path, None)?.classes().max(read_mask(pred_path, None)?.classes()),
        c => c,
    };
    Ok((read_mask(seed_path, Some(classes))?, read_mask(pred_path, Some(classes))?))
}

pub fn cmd_evolve(cfg: &RunConfig) -> Result<()> {
    let output = required(&cfg.output, "output")?;
    let (seed, prediction) = read_mask_pair(cfg)?;
    let grown = update_labels(&seed, &prediction, cfg.beta, Connectivity::Eight)?;
    write_mask(output, &grown)?;
    println!(
        "instances before: {}, after: {}",
        count_instances(&seed, Connectivity::Eight),
        count_instances(&grown, Connectivity::Eight)
    );
    Ok(())
}

/// Predicted mask for one image under the configured inference.
pub fn infer_mask(cfg: &RunConfig, model: &Model<f32>, image: &crate::raster::Image) -> Result<ClassMask> {
    match cfg.inference {
        Inference::Final => final_inference(model, image, cfg.train.beta_final),
        Inference::Segmentation => segmentation_inference(model, image),
    }
}

/// Scores every item of the split with ground truth and writes the
/// per-image CSV (default `run_dir/metrics_{split}.csv`).
pub fn cmd_eval(cfg: &RunConfig) -> Result<Vec<MetricReport>> {
    let model = load_checkpoint(&cfg.checkpoint_path())?;
    let dataset = load_dataset(&cfg.data_dir)?;
    let items: Vec<_> = dataset.split(cfg.split).filter(|i| i.gt.is_some()).collect();
    if items.is_empty() {
        return Err(Error::Dataset(format!("no {} items with ground truth", cfg.split)));
    }
    let reports = items
        .par_iter()
        .map(|item| {
            let pred = infer_mask(cfg, &model, &item.image)?;
            let gt = item.gt.as_ref().expect("filtered on ground truth");
            evaluate(&item.id, &pred, gt, item.instances.as_deref())
        })
        .collect::<Result<Vec<_>>>()?;
    let output = cfg
        .output
        .clone()
        .unwrap_or_else(|| cfg.run_dir.join(format!("metrics_{}.csv", cfg.split)));
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(&output, reports_csv(&reports)).map_err(|e| Error::io(&output, e))?;
    print!("{}", summary_text(&reports));
    Ok(reports)
}

pub fn cmd_infer(cfg: &RunConfig) -> Result<()> {
    let image = read_image(required(&cfg.image, "image")?)?;
    let output = required(&cfg.output, "output")?;
    let model = load_checkpoint(&cfg.checkpoint_path())?;
    write_mask(output, &infer_mask(cfg, &model, &image)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(args: &[&str]) -> Vec<String> {
        args.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn overrides_apply_in_order() {
        let cfg = RunConfig::from_settings(&strings(&[
            "--outer-iterations",
            "1",
            "--steps=0",
            "--beta-train",
            "0.5",
            "--seed",
            "7",
            "--levels",
            "3",
            "--beta-train",
            "0.25",
        ]))
        .unwrap();
        assert_eq!(cfg.train.outer_iterations, 1);
        assert_eq!(cfg.train.steps_per_iteration, 0);
        assert_eq!(cfg.train.beta_train, 0.25);
        assert_eq!(cfg.dataset.scene.seed, 7);
        assert_eq!(cfg.network.levels, 3);
    }

    #[test]
    fn unknown_and_malformed_settings_are_config_errors() {
        for args in [
            &["--no-such-key", "1"][..],
            &["--lr"],
            &["lr", "1"],
            &["--availability", "0.1,x,1"],
        ] {
            let err = RunConfig::from_settings(&strings(args)).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{args:?}");
        }
        let err = RunConfig::from_settings(&strings(&["--no-such-key", "1"])).unwrap_err();
        assert!(err.to_string().contains("no_such_key"));
    }

    #[test]
    fn text_form_reads_back() {
        let mut cfg = RunConfig::default();
        cfg.set("lr", "0.001").unwrap();
        cfg.set("output", "out.pgm").unwrap();
        cfg.set("mode", "static").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text(), Path::new("x")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_file_comes_before_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.txt");
        fs::write(&path, "# comment\nlr = 0.01\nbatch_size = 2\n").unwrap();
        let p = path.display().to_string();
        let cfg = RunConfig::from_settings(&strings(&["--batch-size", "3", "--config", &p])).unwrap();
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.train.batch_size, 3);
    }
}
