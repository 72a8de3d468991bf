use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use seggrow::data::{load_dataset, Split};
use seggrow::model::load_checkpoint;
use seggrow::pnm::{read_mask, write_image, write_mask};
use seggrow::raster::{ClassMask, Image};
use seggrow::train::{final_inference, APPROXIMATION, HISTORY_COLUMNS, HISTORY_SCHEMA};

fn seggrow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seggrow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = seggrow(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_DATA: &[&str] = &[
    "--height", "48", "--width", "48", "--min-instances", "2", "--max-instances", "3",
    "--min-radius", "5", "--max-radius", "7", "--train-count", "4", "--val-count", "0",
    "--test-count", "2", "--availability", "0.5,1,1",
];

const SMALL_NET: &[&str] = &["--levels", "3", "--base-channels", "4", "--crop-size", "16", "--batch-size", "2"];

fn small_dataset(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let mut args = vec!["gen-data", "--data-dir", s(&data)];
    args.extend_from_slice(SMALL_DATA);
    ok(&args);
    data
}

fn train(data: &Path, run: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--data-dir", s(data), "--run-dir", s(run)];
    args.extend_from_slice(SMALL_NET);
    args.extend_from_slice(extra);
    ok(&args);
}

fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn default_dataset_has_documented_splits() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = ok(&["gen-data", "--data-dir", s(&data)]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("train 40, val 10, test 20"), "{text}");
    let d = load_dataset(&data).unwrap();
    assert_eq!(d.label_counts(Split::Train), vec![4, 40, 40]);
}

#[test]
fn same_seed_gives_identical_directories() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (path, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        let mut args = vec!["gen-data", "--data-dir", s(path), "--seed", seed];
        args.extend_from_slice(SMALL_DATA);
        ok(&args);
    }
    assert_eq!(tree_bytes(&a), tree_bytes(&b));
    assert_ne!(tree_bytes(&a), tree_bytes(&c));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = seggrow(&["gen-data", "--data-dir", s(dir.path()), "--availability", "0.1,1.5,1"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("availability"));
    assert_eq!(seggrow(&["train", "--bogus", "1"]).status.code(), Some(2));
    let missing = dir.path().join("missing");
    assert_eq!(seggrow(&["train", "--data-dir", s(&missing)]).status.code(), Some(3));

    let data = small_dataset(dir.path());
    let run = dir.path().join("run");
    let mut args = vec!["train", "--data-dir", s(&data), "--run-dir", s(&run), "--lr", "1e30", "--steps", "5"];
    args.extend_from_slice(SMALL_NET);
    assert_eq!(seggrow(&args).status.code(), Some(4));
}

#[test]
fn degenerate_run_has_one_history_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let run = dir.path().join("run");
    train(&data, &run, &["--outer-iterations", "1", "--steps", "0"]);
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(&lines[..2], &[HISTORY_SCHEMA, HISTORY_COLUMNS]);
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("1,NA,"));
    assert!(run.join("ckpt_k1.ckpt").exists());
    assert!(run.join("model.ckpt").exists());
    assert!(run.join("snapshots/k00").is_dir());
    assert!(run.join("snapshots/k01").is_dir());
}

#[test]
fn zero_beta_freezes_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let run = dir.path().join("run");
    train(&data, &run, &["--outer-iterations", "2", "--steps", "2", "--beta-train", "0"]);
    let k0 = tree_bytes(&run.join("snapshots/k00"));
    assert!(!k0.is_empty());
    assert_eq!(k0, tree_bytes(&run.join("snapshots/k01")));
    assert_eq!(k0, tree_bytes(&run.join("snapshots/k02")));
}

/// `phi(i) = min dist to seed - beta * min dist to outside`, by scanning all
/// pixel pairs.
fn brute_force_growth(seed: &[(usize, usize)], region: &[(usize, usize)], h: usize, w: usize, beta: f64) -> Vec<bool> {
    let dist = |a: (usize, usize), b: (usize, usize)| (a.0 as f64 - b.0 as f64).hypot(a.1 as f64 - b.1 as f64);
    let outside: Vec<(usize, usize)> = (0..h * w).map(|i| (i / w, i % w)).filter(|p| !region.contains(p)).collect();
    (0..h * w)
        .map(|i| {
            let p = (i / w, i % w);
            let ds = seed.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min);
            let dout = outside.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min);
            ds - beta * dout <= 0.0
        })
        .collect()
}

#[test]
fn evolve_matches_oracle_and_limits() {
    let dir = tempfile::tempdir().unwrap();
    let (h, w) = (16, 16);
    // two well separated predicted blobs, one seed of each class
    let blob_a: Vec<(usize, usize)> = (0..h * w)
        .map(|i| (i / w, i % w))
        .filter(|&(y, x)| (y as f64 - 4.0).hypot(x as f64 - 4.5) <= 3.6)
        .collect();
    let blob_b: Vec<(usize, usize)> = (0..h * w)
        .map(|i| (i / w, i % w))
        .filter(|&(y, x)| (9..15).contains(&y) && (8..15).contains(&x))
        .collect();
    let seed_a = vec![(4, 4), (4, 5)];
    let seed_b = vec![(12, 12)];
    let mut seed = ClassMask::uniform(h, w, 3, 2);
    let mut pred = ClassMask::uniform(h, w, 3, 2);
    for &(y, x) in &blob_a {
        pred.set(y, x, 0);
    }
    for &(y, x) in &blob_b {
        pred.set(y, x, 0);
    }
    for &(y, x) in &seed_a {
        seed.set(y, x, 0);
    }
    for &(y, x) in &seed_b {
        seed.set(y, x, 1);
    }
    let (seed_path, pred_path) = (dir.path().join("seed.pgm"), dir.path().join("pred.pgm"));
    write_mask(&seed_path, &seed).unwrap();
    write_mask(&pred_path, &pred).unwrap();
    let out_path = dir.path().join("out.pgm");
    let evolve = |beta: &str| {
        let out = ok(&[
            "evolve", "--seed-mask", s(&seed_path), "--prediction", s(&pred_path), "--beta", beta,
            "--classes", "3", "--output", s(&out_path),
        ]);
        (String::from_utf8(out.stdout).unwrap(), read_mask(&out_path, Some(3)).unwrap())
    };

    let (report, _) = evolve("0");
    assert_eq!(fs::read(&out_path).unwrap(), fs::read(&seed_path).unwrap());
    assert!(report.contains("instances before: 2, after: 2"), "{report}");

    for beta in [0.5, 1.0, 2.0] {
        let (_, grown) = evolve(&beta.to_string());
        let a = brute_force_growth(&seed_a, &blob_a, h, w, beta);
        let b = brute_force_growth(&seed_b, &blob_b, h, w, beta);
        for i in 0..h * w {
            let expected = if a[i] { 0 } else if b[i] { 1 } else { 2 };
            assert_eq!(grown.labels()[i], expected, "beta {beta}, pixel {i}");
        }
    }

    // beyond the grid diameter every predicted pixel is reached
    let (_, grown) = evolve("1e6");
    for i in 0..h * w {
        assert_eq!(grown.labels()[i] == 2, pred.labels()[i] == 2);
    }
}

#[test]
fn infer_and_eval_follow_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let run = dir.path().join("run");
    train(&data, &run, &["--outer-iterations", "1", "--steps", "3"]);
    let model = load_checkpoint(&run.join("model.ckpt")).unwrap();
    let dataset = load_dataset(&data).unwrap();
    let item = dataset.split(Split::Test).next().unwrap();
    let image_path = dir.path().join("image.pgm");
    write_image(&image_path, &item.image).unwrap();

    let infer = |extra: &[&str], out: &Path| {
        let mut args = vec!["infer", "--run-dir", s(&run), "--image", s(&image_path), "--output", s(out)];
        args.extend_from_slice(extra);
        ok(&args);
        fs::read(out).unwrap()
    };
    let (o1, o2, o3) = (dir.path().join("o1.pgm"), dir.path().join("o2.pgm"), dir.path().join("o3.pgm"));
    let first = infer(&[], &o1);
    assert_eq!(first, infer(&[], &o2));
    let golden = final_inference(&model, &item.image, 100.0).unwrap();
    assert_eq!(read_mask(&o1, Some(3)).unwrap(), golden);

    infer(&["--beta-final", "0", "--beta-train", "0"], &o3);
    let raw = model.predict(&item.image).unwrap().predict_mask(APPROXIMATION, 0).unwrap();
    assert_eq!(read_mask(&o3, Some(3)).unwrap(), raw);

    // an odd-sized image is padded, not rejected
    let cut: Vec<f32> = (0..30 * 31).map(|i| item.image.get(i / 31, i % 31, 0)).collect();
    write_image(&image_path, &Image::new(30, 31, 1, cut).unwrap()).unwrap();
    infer(&[], &o3);
    assert_eq!(read_mask(&o3, Some(3)).unwrap().dims(), (30, 31));

    let metrics = dir.path().join("m.csv");
    let out = ok(&["eval", "--run-dir", s(&run), "--data-dir", s(&data), "--output", s(&metrics)]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("mean dice"));
    let csv = fs::read_to_string(&metrics).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 + 1);
    assert!(csv.lines().last().unwrap().starts_with("mean,"));
}
