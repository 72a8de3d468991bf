//! Dataset directory layout:
//!
//! ```text
//! manifest.txt
//! images/NNNN.pgm          (P6 .ppm for three channels)
//! gt/NNNN.pgm              ground-truth class mask
//! instances/NNNN.pgm       instance ids, 0 = none, 1.. = object
//! labels/taskT/NNNN.pgm    present only where task T is labeled
//! ```
//!
//! The manifest is a `key = value` file. Per-item keys have the form
//! `item.NNNN.FIELD`, with the file path followed by the 64-bit FNV-1a hash
//! of the file contents in hex, e.g.
//!
//! ```text
//! item.0003.split = train
//! item.0003.image = images/0003.pgm 9f3c0e21b4a8d710
//! item.0003.task2 = labels/task2/0003.pgm 0b1d5e77aa03c4f9
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;

use super::{Dataset, DatasetItem, SceneConfig, Split};
use crate::config::{format_list, parse_entries, parse_list, parse_value};
use crate::error::{Error, Result};
use crate::pnm::{decode_image, decode_mask, encode_image, encode_mask, read_bytes, write_bytes};
use crate::raster::{ClassMask, InstanceMask, LabelField};

pub const MANIFEST: &str = "manifest.txt";
const FORMAT_VERSION: u32 = 1;

fn fnv64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn encode_instances(instances: &[InstanceMask], dims: (usize, usize)) -> Result<Vec<u8>> {
    if instances.len() > 255 {
        return Err(Error::Dataset(format!("{} instances do not fit 8 bits", instances.len())));
    }
    let mut ids = vec![0u8; dims.0 * dims.1];
    for (k, m) in instances.iter().enumerate() {
        for i in m.support() {
            ids[i] = k as u8 + 1;
        }
    }
    Ok(encode_mask(&ClassMask::new(dims.0, dims.1, 256, ids)?))
}

fn decode_instances(bytes: &[u8], path: &Path) -> Result<Vec<InstanceMask>> {
    let map = decode_mask(bytes, Some(256), path)?;
    let count = map.labels().iter().copied().max().unwrap_or(0);
    let (h, w) = map.dims();
    Ok((1..=count)
        .map(|k| InstanceMask::from_fn(h, w, |r, c| map.get(r, c) == k))
        .collect())
}

struct Writer<'a> {
    root: &'a Path,
    manifest: String,
}

impl Writer<'_> {
    fn file(&mut self, item: &str, field: &str, rel: String, bytes: &[u8]) -> Result<()> {
        write_bytes(&self.root.join(&rel), bytes)?;
        let _ = writeln!(self.manifest, "item.{item}.{field} = {rel} {:016x}", fnv64(bytes));
        Ok(())
    }
}

/// Writes the dataset under `root`. Saving the same dataset twice produces
/// identical bytes.
pub fn save_dataset(dataset: &Dataset, root: &Path) -> Result<()> {
    let mut manifest = String::from("# seggrow dataset manifest\n");
    let _ = writeln!(manifest, "format = {FORMAT_VERSION}");
    let _ = writeln!(manifest, "name = {}", dataset.name);
    let _ = writeln!(manifest, "seed = {}", dataset.seed);
    let _ = writeln!(manifest, "task_classes = {}", format_list(&dataset.task_classes));
    let _ = writeln!(manifest, "class_names = {}", dataset.class_names().join(","));
    let _ = writeln!(manifest, "availability = {}", format_list(&dataset.availability));
    if let Some(scene) = &dataset.scene {
        for (k, v) in scene.entries() {
            let _ = writeln!(manifest, "scene.{k} = {v}");
        }
    }
    let _ = writeln!(manifest, "items = {}", dataset.items.len());
    let mut w = Writer { root, manifest };
    for item in &dataset.items {
        let id = &item.id;
        let _ = writeln!(w.manifest, "item.{id}.split = {}", item.split);
        let ext = if item.image.channels() == 3 { "ppm" } else { "pgm" };
        w.file(id, "image", format!("images/{id}.{ext}"), &encode_image(&item.image))?;
        if let Some(gt) = &item.gt {
            w.file(id, "gt", format!("gt/{id}.pgm"), &encode_mask(gt))?;
        }
        if let Some(inst) = &item.instances {
            let bytes = encode_instances(inst, item.image.dims())?;
            w.file(id, "instances", format!("instances/{id}.pgm"), &bytes)?;
        }
        for (t, mask) in item.labels.iter().enumerate() {
            if let Some(mask) = mask {
                let task = t + 1;
                w.file(id, &format!("task{task}"), format!("labels/task{task}/{id}.pgm"), &encode_mask(mask))?;
            }
        }
    }
    let manifest = w.manifest;
    write_bytes(&root.join(MANIFEST), manifest.as_bytes())
}

#[derive(Default)]
struct ItemEntry {
    split: Option<Split>,
    image: Option<String>,
    gt: Option<String>,
    instances: Option<String>,
    tasks: BTreeMap<usize, String>,
}

/// Reads a file listed as `path hash` and verifies the hash.
fn checked_read(root: &Path, value: &str) -> Result<(Vec<u8>, std::path::PathBuf)> {
    let (rel, hash) = value
        .rsplit_once(' ')
        .ok_or_else(|| Error::Dataset(format!("expected `path hash`, got `{value}`")))?;
    let expected = u64::from_str_radix(hash, 16)
        .map_err(|_| Error::Dataset(format!("bad checksum `{hash}` for {rel}")))?;
    let path = root.join(rel);
    let bytes = read_bytes(&path)?;
    let found = fnv64(&bytes);
    if found != expected {
        return Err(Error::Checksum {
            path,
            expected,
            found,
        });
    }
    Ok((bytes, path))
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let manifest_path = root.join(MANIFEST);
    let text = String::from_utf8(read_bytes(&manifest_path)?)
        .map_err(|_| Error::Dataset(format!("{} is not utf-8", manifest_path.display())))?;
    let bad = |line: usize, reason: String| Error::Dataset(format!("{}:{line}: {reason}", manifest_path.display()));
    let entries = parse_entries(&text).map_err(|r| Error::Dataset(format!("{}: {r}", manifest_path.display())))?;

    let mut name = None;
    let mut seed = None;
    let mut task_classes: Option<Vec<usize>> = None;
    let mut availability = None;
    let mut item_count = None;
    let mut scene: Option<SceneConfig> = None;
    let mut items: BTreeMap<String, ItemEntry> = BTreeMap::new();
    for e in &entries {
        let (key, value) = (e.key.as_str(), e.value.as_str());
        let wrap = |err: Error| bad(e.line, err.to_string());
        match key {
            "format" => {
                let v: u32 = parse_value(key, value).map_err(wrap)?;
                if v != FORMAT_VERSION {
                    return Err(bad(e.line, format!("unsupported format {v}")));
                }
            }
            "name" => name = Some(value.to_string()),
            "seed" => seed = Some(parse_value(key, value).map_err(wrap)?),
            "task_classes" => task_classes = Some(parse_list(key, value).map_err(wrap)?),
            "class_names" => {}
            "availability" => availability = Some(parse_list(key, value).map_err(wrap)?),
            "items" => item_count = Some(parse_value::<usize>(key, value).map_err(wrap)?),
            _ if key.starts_with("scene.") => {
                let cfg = scene.get_or_insert_with(SceneConfig::default);
                if !cfg.set(&key["scene.".len()..], value).map_err(wrap)? {
                    return Err(bad(e.line, format!("unknown key `{key}`")));
                }
            }
            _ if key.starts_with("item.") => {
                let rest = &key["item.".len()..];
                let (id, field) = rest
                    .split_once('.')
                    .ok_or_else(|| bad(e.line, format!("malformed item key `{key}`")))?;
                let entry = items.entry(id.to_string()).or_default();
                match field {
                    "split" => entry.split = Some(value.parse().map_err(|r: String| bad(e.line, r))?),
                    "image" => entry.image = Some(value.to_string()),
                    "gt" => entry.gt = Some(value.to_string()),
                    "instances" => entry.instances = Some(value.to_string()),
                    _ => {
                        let task = field
                            .strip_prefix("task")
                            .and_then(|t| t.parse::<usize>().ok())
                            .ok_or_else(|| bad(e.line, format!("unknown item field `{field}`")))?;
                        entry.tasks.insert(task, value.to_string());
                    }
                }
            }
            _ => return Err(bad(e.line, format!("unknown key `{key}`"))),
        }
    }
    let missing = |k: &str| Error::Dataset(format!("{}: missing `{k}`", manifest_path.display()));
    let task_classes = task_classes.ok_or_else(|| missing("task_classes"))?;
    let item_count = item_count.ok_or_else(|| missing("items"))?;
    if items.len() != item_count {
        return Err(Error::Dataset(format!(
            "manifest declares {item_count} items but lists {}",
            items.len()
        )));
    }
    let tasks = task_classes.len();
    let object_classes = task_classes.first().copied().unwrap_or(2);

    let mut out = Vec::with_capacity(items.len());
    for (id, entry) in items {
        if let Some(&t) = entry.tasks.keys().find(|&&t| t == 0 || t > tasks) {
            return Err(Error::Dataset(format!("item {id}: unknown task id {t} (dataset has {tasks} tasks)")));
        }
        let split = entry.split.ok_or_else(|| missing(&format!("item.{id}.split")))?;
        let image_spec = entry.image.ok_or_else(|| missing(&format!("item.{id}.image")))?;
        let (bytes, path) = checked_read(root, &image_spec)?;
        let image = decode_image(&bytes, &path)?;
        let gt = match entry.gt {
            Some(value) => {
                let (bytes, path) = checked_read(root, &value)?;
                Some(decode_mask(&bytes, Some(object_classes), &path)?)
            }
            None => None,
        };
        let instances = match entry.instances {
            Some(value) => {
                let (bytes, path) = checked_read(root, &value)?;
                Some(decode_instances(&bytes, &path)?)
            }
            None => None,
        };
        let mut labels = LabelField::absent(tasks);
        for (t, value) in entry.tasks {
            let (bytes, path) = checked_read(root, &value)?;
            labels.set(t - 1, Some(decode_mask(&bytes, Some(task_classes[t - 1]), &path)?));
        }
        labels.check_dims(image.dims())?;
        out.push(DatasetItem {
            id,
            split,
            image,
            labels,
            gt,
            instances,
        });
    }
    Ok(Dataset {
        name: name.unwrap_or_default(),
        seed: seed.ok_or_else(|| missing("seed"))?,
        task_classes,
        availability: availability.ok_or_else(|| missing("availability"))?,
        scene,
        items: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, DatasetConfig};

    fn tiny() -> Dataset {
        let mut cfg = DatasetConfig::default();
        cfg.scene.height = 48;
        cfg.scene.width = 48;
        cfg.scene.min_instances = 1;
        cfg.scene.max_instances = 2;
        cfg.scene.min_radius = 6.0;
        cfg.scene.max_radius = 9.0;
        cfg.train = 10;
        cfg.val = 1;
        cfg.test = 2;
        generate_dataset(&cfg).unwrap().0
    }

    #[test]
    fn save_load_save_is_stable() {
        let d = tiny();
        let a = tempfile::tempdir().unwrap();
        save_dataset(&d, a.path()).unwrap();
        let back = load_dataset(a.path()).unwrap();
        assert_eq!(back, d);
        let b = tempfile::tempdir().unwrap();
        save_dataset(&back, b.path()).unwrap();
        for rel in [MANIFEST, "images/0000.pgm", "labels/task3/0005.pgm", "instances/0012.pgm"] {
            assert_eq!(
                std::fs::read(a.path().join(rel)).unwrap(),
                std::fs::read(b.path().join(rel)).unwrap(),
                "{rel}"
            );
        }
    }

    #[test]
    fn tampering_is_detected() {
        let d = tiny();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&d, dir.path()).unwrap();
        let target = dir.path().join("gt/0001.pgm");
        let mut bytes = std::fs::read(&target).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        std::fs::write(&target, bytes).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Checksum { .. }));
        assert!(err.to_string().contains("0001.pgm"));
    }

    #[test]
    fn unknown_task_is_rejected() {
        let d = tiny();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&d, dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let mut text = std::fs::read_to_string(&path).unwrap();
        text = text.replace("item.0000.task3", "item.0000.task7");
        std::fs::write(&path, text).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("unknown task id 7"), "{err}");
        assert_eq!(err.exit_code(), 3);
    }
}
