use std::collections::BTreeSet;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use cxr_forge::data::image::write_jpeg;
use cxr_forge::data::{compute_class_weights, derive_seed, load_and_resize, scan_dataset, Dataset, DatasetManifest, Record, ScanReport, Split};
use cxr_forge::eval;
use cxr_forge::model::{default_classes, load_checkpoint, save_checkpoint, ModelGraph};
use cxr_forge::parallel;
use cxr_forge::train::{fit, TrainPlan};
use cxr_forge::Tensor;

use crate::config::{ClassWeights, RunConfig};
use crate::Failure;

const JPEG_QUALITY: u8 = 95;
const EVAL_BATCH: usize = 64;
/// Stream id separating model initialization from the data-order RNG.
const INIT_STREAM: u64 = 0x494e_4954;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::data(format!("{}: {e}", path.display()))
}

fn fail_on_rejected(report: &ScanReport) -> Result<(), Failure> {
    if report.rejected.is_empty() {
        return Ok(());
    }
    let mut msg = format!("{} file(s) could not be decoded:", report.rejected.len());
    for (path, reason) in &report.rejected {
        msg.push_str(&format!("\n  {}: {reason}", path.display()));
    }
    Err(Failure::data(msg))
}

fn print_counts(manifest: &DatasetManifest) {
    let width = manifest.classes.iter().map(String::len).max().unwrap_or(5).max(5);
    println!("{:<width$}  {:>7}  {:>7}", "class", "train", "test");
    let train = manifest.counts(Split::Train);
    let test = manifest.counts(Split::Test);
    for (i, c) in manifest.classes.iter().enumerate() {
        println!("{c:<width$}  {:>7}  {:>7}", train[i], test[i]);
    }
    match compute_class_weights(&manifest.classes, &train) {
        Ok(w) => {
            let parts: Vec<String> = manifest.classes.iter().zip(&w).map(|(c, w)| format!("{c}={w:.6}")).collect();
            println!("class weights (train): {}", parts.join(" "));
        }
        Err(e) => println!("class weights (train): undefined ({e})"),
    }
}

pub fn prep(src: &Path, out: &Path, size: usize, config: Option<&Path>) -> Result<(), Failure> {
    if size == 0 {
        return Err(Failure::config("--size must be positive"));
    }
    let classes = match config {
        Some(path) => RunConfig::load(path)?.classes,
        None => default_classes(),
    };
    let report = scan_dataset(src, &classes)?;
    for dir in &report.unknown_dirs {
        eprintln!("warning: skipping {} (not in the class list)", dir.display());
    }

    let mut seen = BTreeSet::new();
    let mut records = Vec::new();
    let mut collisions = Vec::new();
    for r in &report.manifest.records {
        let stem = Path::new(&r.path).file_stem().unwrap_or_default().to_string_lossy();
        let rel = format!("{}/{}/{stem}.jpg", r.split, classes[r.label]);
        if seen.insert(rel.clone()) {
            records.push((r, rel));
        } else {
            collisions.push(report.manifest.absolute(r));
        }
    }
    let results = parallel::map_indexed(records.len(), |i| {
        let (record, rel) = &records[i];
        let img = load_and_resize(&report.manifest.absolute(record), size)?;
        let dst = out.join(rel);
        if let Some(dir) = dst.parent() {
            std::fs::create_dir_all(dir).map_err(|e| cxr_forge::Error::Io {
                path: dir.to_path_buf(),
                source: e,
            })?;
        }
        write_jpeg(&img, &dst, JPEG_QUALITY)
    });
    let mut failures: Vec<String> = collisions
        .iter()
        .map(|p| format!("{}: output name collides with another file of the same stem", p.display()))
        .collect();
    let mut converted = Vec::new();
    for ((record, rel), result) in records.into_iter().zip(results) {
        match result {
            Ok(()) => converted.push(Record {
                path: rel,
                label: record.label,
                split: record.split,
            }),
            Err(e) => failures.push(e.to_string()),
        }
    }
    converted.sort_by(|a, b| (a.split, a.label, &a.path).cmp(&(b.split, b.label, &b.path)));
    let manifest = DatasetManifest {
        root: out.to_path_buf(),
        classes,
        records: converted,
    };
    std::fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    manifest.write_csv(&out.join("manifest.csv"))?;
    println!("converted {} image(s) to {}x{} JPEG under {}", manifest.records.len(), size, size, out.display());
    print_counts(&manifest);

    fail_on_rejected(&report)?;
    if !failures.is_empty() {
        return Err(Failure::data(format!("{} file(s) failed:\n  {}", failures.len(), failures.join("\n  "))));
    }
    Ok(())
}

fn timestamp() -> String {
    let t = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    format!("{}.{:03}", t.as_secs(), t.subsec_millis())
}

fn load_split(manifest: &DatasetManifest, split: Split, size: usize) -> Result<Option<Dataset>, Failure> {
    if manifest.split(split).next().is_none() {
        return Ok(None);
    }
    Ok(Some(Dataset::from_manifest(manifest, split, size)?))
}

pub fn train(config_path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;

    let report = scan_dataset(&cfg.dataset_root, &cfg.classes)?;
    fail_on_rejected(&report)?;
    for dir in &report.unknown_dirs {
        eprintln!("warning: ignoring {} (not in the class list)", dir.display());
    }
    let manifest = report.manifest;
    let train_data = load_split(&manifest, Split::Train, cfg.image_size)?.ok_or_else(|| {
        Failure::data(format!("no training images under {}", cfg.dataset_root.join("train").display()))
    })?;
    let validation = match cfg.train.validation_split {
        Some(split) => load_split(&manifest, split, cfg.image_size)?,
        None => None,
    };

    let class_weights = match &cfg.train.class_weights {
        ClassWeights::Explicit(w) => Some(w.clone()),
        ClassWeights::Named(n) if n == "none" => None,
        ClassWeights::Named(_) => Some(compute_class_weights(&cfg.classes, &train_data.class_counts())?),
    };
    let mut plan = TrainPlan::new(cfg.train.epochs, cfg.train.batch_size, cfg.train.learning_rate, cfg.seed);
    plan.smoothing = cfg.train.smoothing;
    plan.class_weights = class_weights.clone();
    plan.optimizer = cfg.train.optimizer.clone();
    plan.schedule = Some(plan.resolved_schedule(train_data.len()));
    plan.augment = cfg.train.augment.then(|| cfg.augment.clone());

    let mut resolved = cfg.clone();
    resolved.train.class_weights = class_weights.map_or(ClassWeights::Named("none".into()), ClassWeights::Explicit);
    resolved.train.schedule = plan.schedule.clone();

    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| io_failure(&out, e))?;
    let config_out = out.join("config.toml");
    std::fs::write(&config_out, resolved.to_toml()?).map_err(|e| io_failure(&config_out, e))?;
    let log_path = out.join("train.log");
    let mut log = File::create(&log_path).map_err(|e| io_failure(&log_path, e))?;

    let size = cfg.image_size;
    let mut model: ModelGraph<f32> = ModelGraph::build(
        cfg.layers(),
        [3, size, size],
        cfg.classes.clone(),
        derive_seed(cfg.seed, &[INIT_STREAM]),
    )?;
    let header = format!(
        "training {} parameters on {} image(s){}; {} epoch(s), batch {}, {} worker(s)",
        model.count_parameters(),
        train_data.len(),
        validation.as_ref().map_or(String::new(), |v| format!(", validating on {}", v.len())),
        plan.epochs,
        plan.batch_size,
        parallel::worker_count()
    );
    println!("{header}");
    let _ = writeln!(log, "[{}] {header}", timestamp());

    let mut sink = |r: &cxr_forge::train::EpochRecord| {
        println!("{r}");
        let _ = writeln!(log, "[{}] {r}", timestamp());
    };
    let history = match fit(&mut model, &train_data, validation.as_ref(), &plan, &mut sink) {
        Ok(h) => h,
        Err(e) => {
            let _ = writeln!(log, "[{}] aborted: {e}", timestamp());
            return Err(e.into());
        }
    };

    let ckpt = out.join("model.cxrf");
    save_checkpoint(&model, &ckpt)?;
    history.write_csv(&out.join("history.csv"))?;
    let _ = writeln!(log, "[{}] wrote {}", timestamp(), ckpt.display());
    println!("wrote {}", ckpt.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<ModelGraph<f32>, Failure> {
    load_checkpoint(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn square_size(model: &ModelGraph<f32>) -> Result<usize, Failure> {
    let [_, h, w] = model.input_shape();
    if h != w {
        return Err(Failure::config(format!("model input {h}x{w} is not square")));
    }
    Ok(h)
}

pub fn evaluate(
    checkpoint: &Path,
    dataset: &Path,
    split: Split,
    out: Option<PathBuf>,
    config: Option<&Path>,
) -> Result<(), Failure> {
    let model = load_model(checkpoint)?;
    if let Some(path) = config {
        let cfg = RunConfig::load(path)?;
        if cfg.classes != model.classes() {
            return Err(Failure::config(format!(
                "class list mismatch: config has {:?}, checkpoint has {:?}",
                cfg.classes,
                model.classes()
            )));
        }
    }
    let found = class_dirs(dataset);
    if found.iter().any(|d| !model.classes().contains(d)) {
        return Err(Failure::config(format!(
            "class list mismatch: dataset has class directories {found:?}, checkpoint has {:?}",
            model.classes()
        )));
    }
    let report = scan_dataset(dataset, model.classes())?;
    fail_on_rejected(&report)?;
    let data = load_split(&report.manifest, split, square_size(&model)?)?
        .ok_or_else(|| Failure::data(format!("no {split} images under {}", dataset.display())))?;
    let (metrics, cm) = eval::evaluate(&model, &data, EVAL_BATCH)?;
    let out = out.unwrap_or_else(|| {
        checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join(format!("eval-{split}"))
    });
    let table = eval::render_report(&metrics, &cm, &out)?;
    print!("{table}");
    println!("wrote {} and {}", out.join("confusion.csv").display(), out.join("metrics.csv").display());
    Ok(())
}

/// Sorted, deduplicated class directory names across all splits.
fn class_dirs(root: &Path) -> Vec<String> {
    let mut names: Vec<String> = Split::ALL
        .iter()
        .filter_map(|split| std::fs::read_dir(root.join(split.as_str())).ok())
        .flatten()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names.dedup();
    names
}

pub fn predict(checkpoint: &Path, image: &Path) -> Result<(), Failure> {
    let model = load_model(checkpoint)?;
    let img = load_and_resize(image, square_size(&model)?)?;
    let mut shape = vec![1];
    shape.extend_from_slice(img.shape());
    let batch = Tensor::new(&shape, img.into_data())?;
    let probs = model.predict(&batch)?;
    let row = probs.data();
    let width = model.classes().iter().map(String::len).max().unwrap_or(0);
    for (c, p) in model.classes().iter().zip(row) {
        println!("{c:<width$}  {p:.6}");
    }
    let best = cxr_forge::train::loss::argmax(row);
    println!("predicted: {}", model.classes()[best]);
    Ok(())
}

pub fn inspect(checkpoint: &Path) -> Result<(), Failure> {
    let model = load_model(checkpoint)?;
    let [c, h, w] = model.input_shape();
    println!("input {c}x{h}x{w}, classes {:?}", model.classes());
    let rows = model.summary();
    let name_w = rows.iter().map(|r| r.0.len()).max().unwrap_or(5).max(5);
    let spec_w = rows.iter().map(|r| r.1.len()).max().unwrap_or(4).max(4);
    println!("{:<name_w$}  {:<spec_w$}  {:<14}  {:>12}", "layer", "spec", "output", "parameters");
    for (name, spec, shape, params) in &rows {
        let shape: Vec<String> = shape.iter().map(usize::to_string).collect();
        println!("{name:<name_w$}  {spec:<spec_w$}  {:<14}  {params:>12}", shape.join("x"));
    }
    println!("total parameters: {}", model.count_parameters());
    Ok(())
}
