use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cellprop::detector::{self, Detector, NetConfig};
use cellprop::evaluation::{self, DetectionScores, SegScores};
use cellprop::graphcut::GraphCutParams;
use cellprop::imageio;
use cellprop::likelihood::{self, render_likelihood};
use cellprop::peaks::{detections_csv, match_points};
use cellprop::pipeline::{segment_image, PipelineConfig};
use cellprop::rng::derive_seed;
use cellprop::synth::{generate, SceneSpec};
use cellprop::{Error, InstanceLabeling, Result};

use crate::manifest::RunManifest;
use crate::{EvalArgs, SegmentArgs, SynthArgs, TrainArgs};

const LABELS_SUFFIX: &str = "_labels.png";

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    v.sort();
    Ok(v)
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => SceneSpec::parse(&fs::read_to_string(p)?, p)?,
        None => SceneSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    fs::create_dir_all(&a.out)?;
    let mut m = RunManifest::new("synth");
    m.seed(spec.seed);
    m.config("count", a.count);
    m.config_text("spec", &spec.to_text());
    if let Some(p) = &a.spec {
        m.input(p);
    }
    for i in 0..a.count {
        let scene_spec = SceneSpec {
            seed: derive_seed(spec.seed, &format!("synth.scene.{i}")),
            ..spec.clone()
        };
        let scene = generate(&scene_spec)?;
        let stem = format!("scene_{i:04}");
        let image = a.out.join(format!("{stem}.png"));
        imageio::save_gray8(&image, &scene.image)?;
        let ann = a.out.join(format!("{stem}.csv"));
        likelihood::write_annotations(&ann, &scene.annotation)?;
        let labels = a.out.join(format!("{stem}{LABELS_SUFFIX}"));
        imageio::save_labels(&labels, &scene.labels)?;
        let sidecar = a.out.join(format!("{stem}.spec.txt"));
        fs::write(&sidecar, scene_spec.to_text())?;
        for p in [image, ann, labels, sidecar] {
            m.output(p);
        }
    }
    m.write(&a.out.join("manifest.txt"))
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => NetConfig::load(p)?,
        None => NetConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.sigma {
        cfg.sigma = s;
    }
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    cfg.validate()?;

    let mut m = RunManifest::new("train");
    m.seed(cfg.seed);
    m.config_text("net", &cfg.to_text());
    if let Some(p) = &a.config {
        m.input(p);
    }
    let mut pairs = Vec::new();
    for p in sorted_entries(&a.data)? {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if !name.ends_with(".png") || name.ends_with(LABELS_SUFFIX) {
            continue;
        }
        let image = imageio::load_gray(&p)?;
        let ann_path = p.with_extension("csv");
        if !ann_path.exists() {
            return Err(Error::InvalidArgument(format!("no annotation {} for {}", ann_path.display(), p.display())));
        }
        let ann = likelihood::load_annotations(&ann_path, image.width(), image.height())?;
        if image.dims() != (cfg.input_size, cfg.input_size) {
            return Err(Error::InvalidArgument(format!(
                "{} is {}x{}, training needs {}x{}",
                p.display(),
                image.width(),
                image.height(),
                cfg.input_size,
                cfg.input_size
            )));
        }
        let y = render_likelihood(&ann, image.width(), image.height(), cfg.sigma)?;
        m.input(&p);
        m.input(&ann_path);
        pairs.push((image, y));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(format!("no training images in {}", a.data.display())));
    }
    let (det, report) = detector::train_with_progress(&cfg, &pairs, |step, loss| {
        if step % 100 == 0 {
            eprintln!("step {step:>6}  loss {loss:.6}");
        }
    })?;
    det.save(&a.out)?;
    let losses = a.out.with_extension("losses.csv");
    fs::write(&losses, report.to_csv())?;
    m.config("checksum", format!("{:016x}", report.checksum));
    m.output(&a.out);
    m.output(&losses);
    m.write(&a.out.with_extension("manifest.txt"))
}

pub fn segment(a: &SegmentArgs) -> Result<()> {
    let modality = a.modality.parse()?;
    let det = Detector::load(&a.model)?;
    let image = imageio::load_gray(&a.image)?;
    let cfg = PipelineConfig {
        threshold: a.threshold,
        modality,
        graphcut: GraphCutParams {
            lambda: a.lambda,
            beta: a.beta,
            ..GraphCutParams::default()
        },
    };
    if !(cfg.graphcut.lambda >= 0.0 && cfg.graphcut.beta >= 0.0) {
        return Err(Error::InvalidArgument("--lambda and --beta must be nonnegative".into()));
    }
    fs::create_dir_all(&a.out)?;
    let mut m = RunManifest::new("segment");
    if let Some(s) = a.seed {
        m.seed(s);
    }
    m.config("threshold", a.threshold);
    m.config("lambda", a.lambda);
    m.config("beta", a.beta);
    m.config("modality", modality.as_str());
    m.input(&a.model);
    m.input(&a.image);

    let seg = segment_image(&det, &image, &cfg)?;
    let stem = file_stem(&a.image);
    let out = |suffix: &str| a.out.join(format!("{stem}{suffix}"));

    let labels = out(LABELS_SUFFIX);
    imageio::save_labels(&labels, &seg.labels)?;
    let overlay = out("_overlay.png");
    imageio::save_rgb(&overlay, &imageio::label_overlay(&image, &seg.labels))?;
    let lik = out("_likelihood.png");
    imageio::save_gray16(&lik, seg.likelihood.plane())?;
    let det_csv = out("_detections.csv");
    fs::write(&det_csv, detections_csv(&seg.regions))?;
    let mut outputs = vec![labels, overlay, lik, det_csv];
    if let Some(fused) = imageio::fused_overlay(&seg.stack.projected) {
        let p = out("_contributions.png");
        imageio::save_rgb(&p, &fused)?;
        outputs.push(p);
    }
    let report = out("_report.txt");
    let mut text = format!("cells_detected = {}\n", seg.regions.len());
    for c in &seg.cells {
        let area = c.mask.iter().filter(|&&b| b).count();
        text.push_str(&format!(
            "cell {} area = {area} empty_seed = {} seed_conflicts = {}\n",
            c.id, c.empty_seed, c.seed_conflicts
        ));
    }
    fs::write(&report, text)?;
    outputs.push(report);
    for w in &seg.warnings {
        m.warn(w.clone());
    }
    for p in outputs {
        m.output(p);
    }
    m.write(&out("_manifest.txt"))
}

fn label_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    Ok(sorted_entries(dir)?
        .into_iter()
        .filter_map(|p| {
            let name = p.file_name()?.to_string_lossy().into_owned();
            name.ends_with(LABELS_SUFFIX).then_some((name, p))
        })
        .collect())
}

fn label_centroids(l: &InstanceLabeling) -> Vec<(f64, f64)> {
    l.centroids().into_iter().map(|(_, x, y)| (x, y)).collect()
}

fn read_detections(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = |message: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: message.into(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad("expected u,cx,cy,peak,area"));
        }
        let cx = f[1].trim().parse().map_err(|_| bad("bad cx"))?;
        let cy = f[2].trim().parse().map_err(|_| bad("bad cy"))?;
        out.push((cx, cy));
    }
    Ok(out)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let pred = label_files(&a.pred)?;
    let truth = label_files(&a.truth)?;
    let unpaired: Vec<&String> = pred.keys().filter(|k| !truth.contains_key(*k)).chain(truth.keys().filter(|k| !pred.contains_key(*k))).collect();
    if !unpaired.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "unpaired label files: {}",
            unpaired.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        )));
    }
    let mut m = RunManifest::new("eval");
    m.config("radius", a.radius);
    let mut rows: Vec<(String, SegScores)> = Vec::new();
    let mut csv = String::from(evaluation::CSV_HEADER);
    for (name, tp) in &truth {
        let pp = &pred[name];
        let stem = name.trim_end_matches(LABELS_SUFFIX).to_string();
        let t = imageio::load_labels(tp)?;
        let p = imageio::load_labels(pp)?;
        let mut scores = evaluation::mdice(&p, &t)?;
        let truth_pts = match a.truth.join(format!("{stem}.csv")) {
            ann if ann.exists() => likelihood::load_annotations(&ann, t.width(), t.height())?.points,
            _ => label_centroids(&t),
        };
        let pred_pts = match a.pred.join(format!("{stem}_detections.csv")) {
            d if d.exists() => read_detections(&d)?,
            _ => label_centroids(&p),
        };
        let counts = match_points(&pred_pts, &truth_pts, a.radius).counts;
        if counts.tp + counts.fp + counts.fn_ > 0 {
            scores.detection = Some(DetectionScores::from_counts(counts)?);
        }
        m.input(tp);
        m.input(pp);
        csv.push_str(&evaluation::score_rows(&stem, &scores));
        rows.push((stem, scores));
    }
    let all: Vec<SegScores> = rows.iter().map(|(_, s)| s.clone()).collect();
    let total = evaluation::aggregate(&all)?;
    csv.push_str(&evaluation::score_rows("all", &total));
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&a.out, csv)?;
    print!("{}", evaluation::scores_table(&rows, &total));
    m.output(&a.out);
    m.write(&a.out.with_extension("manifest.txt"))
}
