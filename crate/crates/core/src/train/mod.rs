//! Recursive approximation: alternate network training with region growing
//! of the approximation-task labels, then a final growth step at inference.

pub mod augment;
mod history;

use std::time::Instant;

pub use augment::{random_transform, Augmentations, Batch, CropSampler, CropTransform};
pub use history::{history_csv, write_history, HISTORY_COLUMNS, HISTORY_SCHEMA};

use crate::config::{format_list, parse_list, parse_value};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::geometry::{update_labels, Connectivity};
use crate::metrics::mean_foreground_dice;
use crate::model::{
    adam_step, build_network, images_to_tensor, AdamConfig, LossWeights, Mode, Model, NetworkConfig, TaskOutputs,
    Tensor,
};
use crate::raster::{ClassMask, Image, LabelField};
use crate::rng::derived_rng;

/// Index of the segmentation task.
pub const SEGMENTATION: usize = 0;
/// Index of the approximation task.
pub const APPROXIMATION: usize = 1;
/// Images per forward pass when predicting full images.
const PREDICT_CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub outer_iterations: usize,
    pub steps_per_iteration: usize,
    pub batch_size: usize,
    pub crop_size: usize,
    pub beta_train: f64,
    pub beta_final: f64,
    pub lr: f64,
    pub augment: Augmentations,
    /// Per-task loss weights.
    pub alphas: Vec<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            outer_iterations: 10,
            steps_per_iteration: 600,
            batch_size: 8,
            crop_size: 64,
            beta_train: 1.0,
            beta_final: 100.0,
            lr: 2e-4,
            augment: Augmentations::default(),
            alphas: vec![1.0, 1.0, 1.0],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iterations < 1 {
            return Err(Error::config("outer_iterations", "must be >= 1"));
        }
        if !(self.beta_train.is_finite() && self.beta_train >= 0.0) {
            return Err(Error::config("beta_train", "must be finite and >= 0"));
        }
        if !(self.beta_final >= self.beta_train) {
            return Err(Error::config("beta_final", "must be >= beta_train"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.crop_size == 0 {
            return Err(Error::config("crop_size", "must be positive"));
        }
        self.adam().validate()?;
        LossWeights::new(self.alphas.clone())?;
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..Default::default()
        }
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("outer_iterations", self.outer_iterations.to_string()),
            ("steps_per_iteration", self.steps_per_iteration.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("crop_size", self.crop_size.to_string()),
            ("beta_train", self.beta_train.to_string()),
            ("beta_final", self.beta_final.to_string()),
            ("lr", self.lr.to_string()),
            ("flip", self.augment.flip.to_string()),
            ("rotate", self.augment.rotate.to_string()),
            ("rescale", self.augment.rescale.to_string()),
            ("alphas", format_list(&self.alphas)),
            ("train_seed", self.seed.to_string()),
        ]
    }

    /// Sets one field from text. Returns `false` for an unknown key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "outer_iterations" => self.outer_iterations = parse_value(key, value)?,
            "steps_per_iteration" | "steps" => self.steps_per_iteration = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "crop_size" => self.crop_size = parse_value(key, value)?,
            "beta_train" => self.beta_train = parse_value(key, value)?,
            "beta_final" => self.beta_final = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "flip" => self.augment.flip = parse_value(key, value)?,
            "rotate" => self.augment.rotate = parse_value(key, value)?,
            "rescale" => self.augment.rescale = parse_value(key, value)?,
            "alphas" => self.alphas = parse_list(key, value)?,
            "train_seed" => self.seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Summary of one outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    /// Mean per-pixel loss over the optimizer steps; `None` without steps.
    pub mean_loss: Option<f64>,
    /// Mean foreground dice of the approximation labels against ground
    /// truth after this iteration's update.
    pub approximation_dice: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Completed outer iterations.
    pub k: usize,
    /// Ids of the training items, in the order of the label vectors.
    pub item_ids: Vec<String>,
    /// Current approximation labels per training item.
    pub task2_labels: Vec<Option<ClassMask>>,
    /// Approximation labels before the first and after every update.
    pub snapshots: Vec<Vec<Option<ClassMask>>>,
    /// Approximation dice of the initial labels.
    pub initial_dice: Option<f64>,
    pub history: Vec<IterationRecord>,
}

impl TrainState {
    /// `(k, dice)` from `k = 0` on, when ground truth was available.
    pub fn approximation_curve(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = self.initial_dice.map(|d| (0, d)).into_iter().collect();
        out.extend(self.history.iter().filter_map(|r| r.approximation_dice.map(|d| (r.k, d))));
        out
    }
}

/// Called after every outer iteration with the model and the state so far.
pub type Observer<'a> = dyn FnMut(&Model<f32>, &TrainState) -> Result<()> + 'a;

struct Trainer<'a> {
    images: Vec<&'a Image>,
    cfg: &'a TrainConfig,
    weights: LossWeights,
    model: Model<f32>,
    crop_rng: crate::rng::Rng,
    step: u64,
}

impl Trainer<'_> {
    /// Runs the configured number of optimizer steps on crops of the images
    /// whose label fields are given; returns the mean per-pixel loss.
    fn optimize(&mut self, fields: &[LabelField]) -> Result<Option<f64>> {
        let weights = &self.weights;
        let sources: Vec<(&Image, &LabelField)> = self
            .images
            .iter()
            .zip(fields)
            .filter(|(_, f)| (0..f.task_count()).any(|t| f.is_present(t) && weights.get(t) > 0.0))
            .map(|(i, f)| (*i, f))
            .collect();
        let sampler = CropSampler::new(sources, self.cfg.crop_size, self.cfg.batch_size, self.cfg.augment)?;
        let adam = self.cfg.adam();
        let mut total = 0.0;
        for _ in 0..self.cfg.steps_per_iteration {
            self.step += 1;
            let batch = sampler.next_batch(&mut self.crop_rng)?;
            let refs: Vec<&LabelField> = batch.labels.iter().collect();
            let pixels = (batch.input.n * batch.input.plane()) as f64;
            self.model.params.zero_grad();
            let loss = self
                .model
                .accumulate_gradients(batch.input, &refs, weights, Mode::Train, 1.0 / pixels)?
                / pixels;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    what: "loss",
                    step: self.step,
                });
            }
            adam_step(&mut self.model.params, &adam)?;
            total += loss;
        }
        let steps = self.cfg.steps_per_iteration;
        Ok((steps > 0).then(|| total / steps as f64))
    }
}

/// Inference-mode outputs for a list of images, in chunks.
pub fn predict_all(model: &Model<f32>, images: &[&Image]) -> Result<Vec<TaskOutputs<f32>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(PREDICT_CHUNK) {
        let pass = model.forward(images_to_tensor(chunk)?, Mode::Eval)?;
        for n in 0..chunk.len() {
            let probs = pass
                .outputs
                .probs
                .iter()
                .map(|p| {
                    let len = p.sample_len();
                    Tensor::from_vec(1, p.c, p.h, p.w, p.data[n * len..(n + 1) * len].to_vec())
                })
                .collect();
            out.push(TaskOutputs { probs });
        }
    }
    Ok(out)
}

fn task2_dice(labels: &[Option<ClassMask>], gt: &[Option<&ClassMask>]) -> Result<Option<f64>> {
    let mut l = Vec::new();
    let mut g = Vec::new();
    for (label, truth) in labels.iter().zip(gt) {
        if let Some(label) = label {
            match truth {
                Some(t) => {
                    l.push(label);
                    g.push(*t);
                }
                None => return Ok(None),
            }
        }
    }
    if l.is_empty() {
        return Ok(None);
    }
    mean_foreground_dice(&l, &g).map(Some)
}

fn training_items(dataset: &Dataset) -> Vec<&crate::data::DatasetItem> {
    dataset.split(Split::Train).collect()
}

fn check_net(dataset: &Dataset, net: &NetworkConfig) -> Result<()> {
    if net.task_classes != dataset.task_classes {
        return Err(Error::config(
            "task_classes",
            format!(
                "network has {:?} classes per task, dataset {:?}",
                net.task_classes, dataset.task_classes
            ),
        ));
    }
    Ok(())
}

/// Runs the outer loop: for `k = 1..=N`, train on crops with the current
/// labels, predict the segmentation task on every training image with an
/// approximation label, and grow those labels towards the prediction.
/// Segmentation and auxiliary labels never change.
///
/// Ground truth, when present, is read only to record the approximation
/// dice.
pub fn run_recursive_training(
    dataset: &Dataset,
    net: &NetworkConfig,
    cfg: &TrainConfig,
    observer: &mut Observer<'_>,
) -> Result<(Model<f32>, TrainState)> {
    train_loop(dataset, net, cfg, true, observer)
}

/// The same optimization with labels held fixed, e.g. a supervised
/// baseline with weights `[1, 0, 0]`.
pub fn run_static_training(
    dataset: &Dataset,
    net: &NetworkConfig,
    cfg: &TrainConfig,
    observer: &mut Observer<'_>,
) -> Result<(Model<f32>, TrainState)> {
    train_loop(dataset, net, cfg, false, observer)
}

fn train_loop(
    dataset: &Dataset,
    net: &NetworkConfig,
    cfg: &TrainConfig,
    recursive: bool,
    observer: &mut Observer<'_>,
) -> Result<(Model<f32>, TrainState)> {
    cfg.validate()?;
    check_net(dataset, net)?;
    let items = training_items(dataset);
    let weights = LossWeights::new(cfg.alphas.clone())?;
    if weights.as_slice().len() != dataset.task_count() {
        return Err(Error::config(
            "alphas",
            format!("expected {} weights, got {}", dataset.task_count(), weights.as_slice().len()),
        ));
    }
    let has = |t: usize| items.iter().any(|i| i.labels.is_present(t));
    if !has(SEGMENTATION) {
        return Err(Error::Dataset("no training image has a segmentation label".into()));
    }
    if recursive && !has(APPROXIMATION) {
        return Err(Error::Dataset("no training image has an approximation label".into()));
    }
    let divisor = net.divisor();
    if !cfg.crop_size.is_multiple_of(divisor) {
        return Err(Error::Indivisible {
            height: cfg.crop_size,
            width: cfg.crop_size,
            divisor,
        });
    }

    let mut fields: Vec<LabelField> = items.iter().map(|i| i.labels.clone()).collect();
    let gt: Vec<Option<&ClassMask>> = items.iter().map(|i| i.gt.as_ref()).collect();
    let task2 = |fields: &[LabelField]| -> Vec<Option<ClassMask>> {
        fields.iter().map(|f| f.get(APPROXIMATION).cloned()).collect()
    };
    let initial = task2(&fields);
    let mut state = TrainState {
        k: 0,
        item_ids: items.iter().map(|i| i.id.clone()).collect(),
        initial_dice: task2_dice(&initial, &gt)?,
        task2_labels: initial.clone(),
        snapshots: vec![initial],
        history: Vec::new(),
    };
    let mut trainer = Trainer {
        images: items.iter().map(|i| &i.image).collect(),
        cfg,
        weights,
        model: build_network(net, &mut derived_rng(cfg.seed, 0))?,
        crop_rng: derived_rng(cfg.seed, 1),
        step: 0,
    };

    let start = Instant::now();
    for k in 1..=cfg.outer_iterations {
        let mean_loss = trainer.optimize(&fields)?;
        if recursive {
            let targets: Vec<usize> = (0..fields.len()).filter(|&i| fields[i].is_present(APPROXIMATION)).collect();
            let images: Vec<&Image> = targets.iter().map(|&i| trainer.images[i]).collect();
            let outputs = predict_all(&trainer.model, &images)?;
            for (&i, out) in targets.iter().zip(&outputs) {
                let prediction = out.predict_mask(SEGMENTATION, 0)?;
                let current = fields[i].get(APPROXIMATION).expect("selected by presence");
                let grown = update_labels(current, &prediction, cfg.beta_train, Connectivity::Eight)?;
                fields[i].set(APPROXIMATION, Some(grown));
            }
        }
        state.k = k;
        state.task2_labels = task2(&fields);
        state.snapshots.push(state.task2_labels.clone());
        state.history.push(IterationRecord {
            k,
            mean_loss,
            approximation_dice: task2_dice(&state.task2_labels, &gt)?,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        observer(&trainer.model, &state)?;
    }
    Ok((trainer.model, state))
}

/// Inference-mode outputs for an image of any size. Images whose sides are
/// not multiples of the network divisor are extended by edge replication and
/// the outputs cropped back.
pub fn predict_padded(model: &Model<f32>, image: &Image) -> Result<TaskOutputs<f32>> {
    let d = model.config().divisor();
    let (h, w) = image.dims();
    let (ph, pw) = (h.div_ceil(d) * d, w.div_ceil(d) * d);
    if (ph, pw) == (h, w) {
        return model.predict(image);
    }
    let ch = image.channels();
    let mut data = Vec::with_capacity(ph * pw * ch);
    for y in 0..ph {
        for x in 0..pw {
            for k in 0..ch {
                data.push(image.get(y.min(h - 1), x.min(w - 1), k));
            }
        }
    }
    let out = model.predict(&Image::new(ph, pw, ch, data)?)?;
    let probs = out
        .probs
        .iter()
        .map(|p| {
            let mut data = Vec::with_capacity(p.c * h * w);
            for c in 0..p.c {
                for y in 0..h {
                    let row = (c * ph + y) * pw;
                    data.extend_from_slice(&p.data[row..row + w]);
                }
            }
            Tensor::from_vec(1, p.c, h, w, data)
        })
        .collect();
    Ok(TaskOutputs { probs })
}

/// Segmentation and approximation predictions, combined by growing the
/// approximation regions towards the segmentation with `beta_final`.
pub fn final_inference(model: &Model<f32>, image: &Image, beta_final: f64) -> Result<ClassMask> {
    combine_predictions(&predict_padded(model, image)?, beta_final)
}

pub fn combine_predictions(out: &TaskOutputs<f32>, beta_final: f64) -> Result<ClassMask> {
    let seg = out.predict_mask(SEGMENTATION, 0)?;
    let approx = out.predict_mask(APPROXIMATION, 0)?;
    update_labels(&approx, &seg, beta_final, Connectivity::Eight)
}

/// Plain argmax of the segmentation head.
pub fn segmentation_inference(model: &Model<f32>, image: &Image) -> Result<ClassMask> {
    predict_padded(model, image)?.predict_mask(SEGMENTATION, 0)
}
