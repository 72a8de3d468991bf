//! Synthetic datasets with strong labels, weak inner-region labels and
//! separation scribbles, plus their on-disk form.
//!
//! Tasks, numbered from 1:
//!
//! 1. full segmentation (ground truth), classes `0..K` objects and `K` background;
//! 2. inner parts of every object with the same palette;
//! 3. separation scribbles: 0 separation, 1 background.

mod io;
pub mod scene;
pub mod weak;

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;

pub use io::{load_dataset, save_dataset, MANIFEST};
pub use scene::{generate_scene, Scene, SceneConfig, SceneObject, ShapeFamily, Touch};
pub use weak::{make_separation_scribbles, make_weak_label, shared_interface};

use crate::error::{Error, Result};
use crate::raster::{ClassMask, Image, InstanceMask, LabelField};
use crate::rng::{derived_rng, Rng};

pub const TASK_COUNT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("expected train, val or test, got `{other}`")),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub id: String,
    pub split: Split,
    pub image: Image,
    pub labels: LabelField,
    /// Evaluation only; never read by training.
    pub gt: Option<ClassMask>,
    pub instances: Option<Vec<InstanceMask>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub seed: u64,
    /// Classes per task, background last.
    pub task_classes: Vec<usize>,
    /// Per-task fraction of training items that keep their label.
    pub availability: Vec<f64>,
    /// Generator settings, when the dataset is synthetic.
    pub scene: Option<SceneConfig>,
    pub items: Vec<DatasetItem>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &DatasetItem> {
        self.items.iter().filter(move |i| i.split == split)
    }

    pub fn task_count(&self) -> usize {
        self.task_classes.len()
    }

    /// Number of items of `split` with a label for each task.
    pub fn label_counts(&self, split: Split) -> Vec<usize> {
        (0..self.task_count())
            .map(|t| self.split(split).filter(|i| i.labels.is_present(t)).count())
            .collect()
    }

    /// Object class names for the task 1 and 2 palette, background last.
    pub fn class_names(&self) -> Vec<&'static str> {
        let objects = self.task_classes.first().map_or(1, |c| c - 1);
        let mut names: Vec<&'static str> = ["bright", "textured"].iter().take(objects).copied().collect();
        names.push("background");
        names
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub name: String,
    pub scene: SceneConfig,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Per-task fraction of training items keeping their label.
    pub availability: Vec<f64>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            name: "synthetic".to_string(),
            scene: SceneConfig::default(),
            train: 40,
            val: 10,
            test: 20,
            availability: vec![0.1, 1.0, 1.0],
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        check_ratios(&self.availability)?;
        if self.train == 0 {
            return Err(Error::config("train", "need at least one training item"));
        }
        Ok(())
    }
}

fn check_ratios(ratios: &[f64]) -> Result<()> {
    if ratios.len() != TASK_COUNT {
        return Err(Error::config(
            "availability",
            format!("expected {TASK_COUNT} ratios, got {}", ratios.len()),
        ));
    }
    if let Some(r) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::config("availability", format!("ratio {r} is outside [0, 1]")));
    }
    Ok(())
}

/// Builds every label of one scene; instances too small to shrink get no
/// weak label and are counted in the second return value.
fn build_item(id: String, split: Split, cfg: &SceneConfig, rng: &mut Rng) -> Result<(DatasetItem, usize)> {
    let scene = generate_scene(cfg, rng)?;
    let (h, w) = scene.gt.dims();
    let bg = cfg.object_classes as u8;
    let mut weak = vec![bg; h * w];
    let mut skipped = 0;
    for object in &scene.objects {
        let shrink = rng.random_range(cfg.min_shrink..=cfg.max_shrink);
        match make_weak_label(&object.mask, shrink, rng) {
            Ok(m) => m.support().for_each(|i| weak[i] = object.class),
            Err(Error::InstanceTooSmall { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    let classes = cfg.object_classes + 1;
    let scribbles = make_separation_scribbles(&scene.objects, &scene.touches, (h, w));
    let image = quantized(&scene.image)?;
    let labels = LabelField::new(vec![
        Some(scene.gt.clone()),
        Some(ClassMask::new(h, w, classes, weak)?),
        Some(scribbles),
    ]);
    let instances = scene.instance_masks();
    Ok((
        DatasetItem {
            id,
            split,
            image,
            labels,
            gt: Some(scene.gt),
            instances: Some(instances),
        },
        skipped,
    ))
}

/// Rounds intensities to the 8-bit grid used on disk.
fn quantized(image: &Image) -> Result<Image> {
    let data = image
        .data()
        .iter()
        .map(|&v| crate::pnm::quantize(v) as f32 / 255.0)
        .collect();
    Image::new(image.height(), image.width(), image.channels(), data)
}

/// Generates the dataset as a pure function of the config: item `i` draws
/// from its own stream derived from the seed and `i`.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<(Dataset, usize)> {
    cfg.validate()?;
    let seed = cfg.scene.seed;
    let splits: Vec<Split> = std::iter::repeat_n(Split::Train, cfg.train)
        .chain(std::iter::repeat_n(Split::Val, cfg.val))
        .chain(std::iter::repeat_n(Split::Test, cfg.test))
        .collect();
    let built = splits
        .par_iter()
        .enumerate()
        .map(|(i, &split)| build_item(format!("{i:04}"), split, &cfg.scene, &mut derived_rng(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let skipped = built.iter().map(|b| b.1).sum();
    let classes = cfg.scene.object_classes + 1;
    let dataset = Dataset {
        name: cfg.name.clone(),
        seed,
        task_classes: vec![classes, classes, 2],
        availability: vec![1.0; TASK_COUNT],
        scene: Some(cfg.scene.clone()),
        items: built.into_iter().map(|b| b.0).collect(),
    };
    let mut rng = derived_rng(seed, u64::MAX);
    Ok((assign_availability(dataset, &cfg.availability, &mut rng)?, skipped))
}

/// `ceil(ratio * n)`, tolerant of products like `0.1 * 40` landing a hair
/// above an integer.
fn subset_size(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Keeps each task's label on a uniformly drawn `ceil(ratio * n)` subset of
/// the `n` training items and drops it elsewhere. Subsets are drawn
/// independently per task. Other splits are left untouched.
pub fn assign_availability(mut dataset: Dataset, ratios: &[f64], rng: &mut Rng) -> Result<Dataset> {
    check_ratios(ratios)?;
    let train: Vec<usize> = (0..dataset.items.len())
        .filter(|&i| dataset.items[i].split == Split::Train)
        .collect();
    let n = train.len();
    if subset_size(ratios[0], n) == 0 {
        return Err(Error::config("availability", "task 1 would have no labeled images"));
    }
    for (t, &ratio) in ratios.iter().enumerate() {
        let keep = subset_size(ratio, n);
        let mut chosen = vec![false; n];
        for j in sample(rng, n, keep) {
            chosen[j] = true;
        }
        for (j, &i) in train.iter().enumerate() {
            if !chosen[j] {
                dataset.items[i].labels.set(t, None);
            }
        }
    }
    dataset.availability = ratios.to_vec();
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn small() -> DatasetConfig {
        DatasetConfig {
            scene: SceneConfig {
                height: 64,
                width: 64,
                min_instances: 2,
                max_instances: 3,
                min_radius: 7.0,
                max_radius: 10.0,
                ..Default::default()
            },
            train: 40,
            val: 2,
            test: 3,
            availability: vec![1.0, 1.0, 1.0],
            ..Default::default()
        }
    }

    #[test]
    fn subset_sizes_follow_ratios() {
        let (full, _) = generate_dataset(&small()).unwrap();
        assert_eq!(full.label_counts(Split::Train), vec![40, 40, 40]);
        let cut = assign_availability(full.clone(), &[0.1, 0.75, 1.0], &mut seeded_rng(3)).unwrap();
        assert_eq!(cut.label_counts(Split::Train), vec![4, 30, 40]);
        assert_eq!(cut.label_counts(Split::Test), vec![3, 3, 3]);
        let again = assign_availability(full.clone(), &[0.1, 0.75, 1.0], &mut seeded_rng(3)).unwrap();
        assert_eq!(cut, again);
        assert!(assign_availability(full.clone(), &[0.0, 1.0, 1.0], &mut seeded_rng(3)).is_err());
        assert!(assign_availability(full, &[0.5, 1.5, 1.0], &mut seeded_rng(3)).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let (a, _) = generate_dataset(&small()).unwrap();
        let (b, _) = generate_dataset(&small()).unwrap();
        assert_eq!(a, b);
        let mut other = small();
        other.scene.seed += 1;
        assert_ne!(a, generate_dataset(&other).unwrap().0);
    }

    #[test]
    fn weak_labels_sit_inside_ground_truth() {
        let (d, skipped) = generate_dataset(&small()).unwrap();
        assert_eq!(skipped, 0);
        for item in &d.items {
            let gt = item.gt.as_ref().unwrap();
            let weak = item.labels.get(1).unwrap();
            for (i, &l) in weak.labels().iter().enumerate() {
                if l != weak.background() {
                    assert_eq!(gt.labels()[i], l);
                }
            }
            let instances = item.instances.as_ref().unwrap();
            let seeds = crate::geometry::extract_seeds(weak, crate::geometry::Connectivity::Eight);
            assert_eq!(seeds.len(), instances.len());
        }
    }
}
