use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cellprop::detector::{Detector, NetConfig};
use cellprop::{imageio, InstanceLabeling, Plane};
use tempfile::TempDir;

fn cellprop(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cellprop"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn cellprop")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn ok(o: &Output) {
    assert_eq!(code(o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn tiny_net(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("net.txt");
    fs::write(&p, format!("depth = 1\nbase_channels = 2\ninput_size = 64\nsteps = 200\nbatch_size = 2\n{extra}")).unwrap();
    p
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .filter(|(n, _)| n != "manifest.txt")
        .collect();
    v.sort();
    v
}

#[test]
fn synth_zero_count_writes_only_manifest() {
    let tmp = TempDir::new().unwrap();
    ok(&cellprop(&["synth", "--out", "d", "--count", "0"], tmp.path()));
    let names: Vec<_> = fs::read_dir(tmp.path().join("d")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec!["manifest.txt"]);
}

#[test]
fn synth_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    ok(&cellprop(&["synth", "--out", "a", "--count", "3", "--seed", "11"], tmp.path()));
    ok(&cellprop(&["synth", "--out", "b", "--count", "3", "--seed", "11"], tmp.path()));
    ok(&cellprop(&["synth", "--out", "c", "--count", "3", "--seed", "12"], tmp.path()));
    let a = read_dir_sorted(&tmp.path().join("a"));
    assert_eq!(a.len(), 12);
    assert_eq!(a, read_dir_sorted(&tmp.path().join("b")));
    assert_ne!(a, read_dir_sorted(&tmp.path().join("c")));
    let manifest = fs::read_to_string(tmp.path().join("a/manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 11"), "{manifest}");
}

#[test]
fn synth_impossible_placement_is_input_error() {
    let tmp = TempDir::new().unwrap();
    let spec = tmp.path().join("spec.txt");
    fs::write(&spec, "size = 32\ncount_min = 20\ncount_max = 20\n").unwrap();
    let o = cellprop(&["synth", "--spec", "spec.txt", "--out", "d", "--count", "1"], tmp.path());
    assert_eq!(code(&o), 2, "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn train_reduces_loss_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(&cellprop(&["synth", "--out", "data", "--count", "4", "--seed", "3"], dir));
    tiny_net(dir, "learning_rate = 0.01\n");
    ok(&cellprop(&["train", "--config", "net.txt", "--data", "data", "--out", "m1.bin"], dir));
    ok(&cellprop(&["train", "--config", "net.txt", "--data", "data", "--out", "m2.bin"], dir));
    assert_eq!(fs::read(dir.join("m1.bin")).unwrap(), fs::read(dir.join("m2.bin")).unwrap());

    let csv = fs::read_to_string(dir.join("m1.losses.csv")).unwrap();
    let losses: Vec<f64> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(losses.len(), 200);
    let head: f64 = losses[..20].iter().sum::<f64>() / 20.0;
    let tail: f64 = losses[180..].iter().sum::<f64>() / 20.0;
    assert!(tail < head, "head {head} tail {tail}");
    assert!(dir.join("m1.manifest.txt").exists());
}

#[test]
fn train_without_annotations_is_input_error() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(&cellprop(&["synth", "--out", "data", "--count", "2"], dir));
    fs::remove_file(dir.join("data/scene_0001.csv")).unwrap();
    tiny_net(dir, "");
    let o = cellprop(&["train", "--config", "net.txt", "--data", "data", "--out", "m.bin"], dir);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("scene_0001.csv"));
}

#[test]
fn diverging_training_is_numeric_error() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(&cellprop(&["synth", "--out", "data", "--count", "2"], dir));
    tiny_net(dir, "learning_rate = 1e300\n");
    let o = cellprop(&["train", "--config", "net.txt", "--data", "data", "--out", "m.bin"], dir);
    assert_eq!(code(&o), 3, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    assert!(!dir.join("m.bin").exists());
}

fn untrained_model(dir: &Path) -> PathBuf {
    let cfg = NetConfig {
        depth: 1,
        base_channels: 2,
        input_size: 64,
        ..NetConfig::default()
    };
    let p = dir.join("model.bin");
    Detector::untrained(&cfg).unwrap().save(&p).unwrap();
    p
}

#[test]
fn segment_blank_image_yields_empty_labeling() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    untrained_model(dir);
    imageio::save_gray8(dir.join("blank.png"), &Plane::zeros(64, 64)).unwrap();
    let o = cellprop(&["segment", "--model", "model.bin", "--image", "blank.png", "--out", "out", "--threshold", "0.99"], dir);
    ok(&o);
    let labels = imageio::load_labels(dir.join("out/blank_labels.png")).unwrap();
    assert!(labels.labels().iter().all(|&l| l == 0));
    let manifest = fs::read_to_string(dir.join("out/blank_manifest.txt")).unwrap();
    assert!(manifest.contains("warning = "), "{manifest}");
    assert_eq!(fs::read_to_string(dir.join("out/blank_detections.csv")).unwrap().lines().count(), 1);
}

#[test]
fn segment_rejects_corrupt_model_and_bad_modality() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("bad.bin"), b"not a model").unwrap();
    imageio::save_gray8(dir.join("img.png"), &Plane::zeros(64, 64)).unwrap();
    let o = cellprop(&["segment", "--model", "bad.bin", "--image", "img.png", "--out", "out"], dir);
    assert_eq!(code(&o), 2);
    untrained_model(dir);
    let o = cellprop(&["segment", "--model", "model.bin", "--image", "img.png", "--out", "out", "--modality", "xray"], dir);
    assert_eq!(code(&o), 2);
}

#[test]
fn zero_jobs_is_input_error() {
    let tmp = TempDir::new().unwrap();
    let o = cellprop(&["--jobs", "0", "synth", "--out", "d", "--count", "0"], tmp.path());
    assert_eq!(code(&o), 2);
}

fn write_labels(dir: &Path, name: &str, w: usize, h: usize, cells: &[(u32, &[(usize, usize)])]) {
    fs::create_dir_all(dir).unwrap();
    let mut l = InstanceLabeling::empty(w, h, 0);
    for &(id, px) in cells {
        for &(x, y) in px {
            l.set(x, y, id);
        }
    }
    let n = cells.iter().map(|c| c.0 as usize).max().unwrap_or(0);
    let l = l.with_count(n).unwrap();
    imageio::save_labels(dir.join(name), &l).unwrap();
}

fn eval_rows(dir: &Path, csv: &str) -> Vec<(String, String, f64)> {
    fs::read_to_string(dir.join(csv))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<_> = l.split(',').collect();
            (f[0].to_string(), f[1].to_string(), f[2].parse().unwrap())
        })
        .collect()
}

fn metric(rows: &[(String, String, f64)], image: &str, name: &str) -> Option<f64> {
    rows.iter().find(|r| r.0 == image && r.1 == name).map(|r| r.2)
}

#[test]
fn eval_scores_known_cases() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let square: &[(usize, usize)] = &[(2, 2), (3, 2), (2, 3), (3, 3)];
    let row: &[(usize, usize)] = &[(1, 8), (2, 8), (3, 8), (4, 8)];
    let shifted: &[(usize, usize)] = &[(2, 8), (3, 8), (4, 8), (5, 8)];
    write_labels(&dir.join("t"), "same_labels.png", 16, 16, &[(1, square)]);
    write_labels(&dir.join("p"), "same_labels.png", 16, 16, &[(7, square)]);
    write_labels(&dir.join("t"), "missed_labels.png", 16, 16, &[(1, square)]);
    write_labels(&dir.join("p"), "missed_labels.png", 16, 16, &[]);
    write_labels(&dir.join("t"), "shift_labels.png", 16, 16, &[(1, row)]);
    write_labels(&dir.join("p"), "shift_labels.png", 16, 16, &[(1, shifted)]);

    let o = cellprop(&["eval", "--pred", "p", "--truth", "t", "--out", "scores.csv"], dir);
    ok(&o);
    let rows = eval_rows(dir, "scores.csv");
    assert_eq!(metric(&rows, "same", "mdice"), Some(1.0));
    assert_eq!(metric(&rows, "same", "f_measure"), Some(1.0));
    assert_eq!(metric(&rows, "missed", "mdice"), Some(0.0));
    assert_eq!(metric(&rows, "missed", "recall"), Some(0.0));
    assert_eq!(metric(&rows, "shift", "mdice"), Some(0.75));
    let all = metric(&rows, "all", "mdice").unwrap();
    assert!((all - 1.75 / 3.0).abs() < 1e-12, "{all}");
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("all"), "{table}");
    assert!(dir.join("scores.manifest.txt").exists());
}

#[test]
fn eval_unpaired_files_are_input_error() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_labels(&dir.join("t"), "a_labels.png", 8, 8, &[]);
    write_labels(&dir.join("p"), "b_labels.png", 8, 8, &[]);
    let o = cellprop(&["eval", "--pred", "p", "--truth", "t", "--out", "s.csv"], dir);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("a_labels.png"));
}
