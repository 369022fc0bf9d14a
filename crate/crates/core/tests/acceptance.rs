//! Acceptance suite: one PASS/FAIL line per criterion; exits non-zero if any
//! criterion fails. Pass criterion numbers as arguments to run a subset.

mod common;

use std::time::{Duration, Instant};

use cxr_forge::data::compute_class_weights;
use cxr_forge::data::synthetic::pattern_dataset;
use cxr_forge::error::Error;
use cxr_forge::eval::{class_probability_ci, evaluate, read_confusion_csv, render_report, ConfusionMatrix, MetricsReport};
use cxr_forge::model::{checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, preset, save_checkpoint, ModelGraph};
use cxr_forge::tensor::ops::Padding;
use cxr_forge::train::loss::{cross_entropy, one_hot, smoothed_cross_entropy};
use cxr_forge::train::{fit, ScheduleSpec, TrainPlan};
use cxr_forge::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn table5() -> ConfusionMatrix {
    ConfusionMatrix::from_rows(
        cxr_forge::model::default_classes(),
        &[vec![98, 0, 2], vec![9, 197, 36], vec![5, 42, 351]],
    )
    .unwrap()
}

fn table5_oracle() -> Outcome {
    let cm = table5();
    let acc = cm.accuracy().unwrap();
    let recall = cm.recall(0).unwrap();
    let precision = cm.precision(0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    render_report(&MetricsReport::from_confusion(&cm), &cm, dir.path()).unwrap();
    let reread = read_confusion_csv(&dir.path().join("confusion.csv")).unwrap();
    let pass = (acc - 0.8730).abs() <= 1e-4
        && acc == 646.0 / 740.0
        && recall == 0.98
        && precision == 0.875
        && reread == cm;
    outcome(
        pass,
        format!("accuracy {acc:.6}, COVID-19 recall {recall}, COVID-19 precision {precision}, csv round trip {}", reread == cm),
    )
}

fn gradient_verification() -> Outcome {
    let start = Instant::now();
    let mut worst_tensor = (0.0f64, String::new());
    let mut worst_element = 0.0f64;
    let mut checked = 0;
    let seeds = 24;
    for seed in 0..seeds {
        let inst = common::instance(seed, Padding::Valid, 1, 6);
        let c = common::gradient_check(&inst, common::H);
        checked += c.checked;
        worst_element = worst_element.max(c.max_rel_error);
        if c.max_tensor_rel_error > worst_tensor.0 {
            worst_tensor = (c.max_tensor_rel_error, format!("seed {seed} {}", c.worst_tensor));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst_tensor.0 < common::TOLERANCE && elapsed < Duration::from_secs(60),
        format!(
            "{seeds} instantiations, {checked} gradient entries, worst per-parameter relative error {:.2e} ({}), worst single entry {:.2e}, {:.1}s",
            worst_tensor.0,
            worst_tensor.1,
            worst_element,
            elapsed.as_secs_f64()
        ),
    )
}

fn loss_oracles() -> Outcome {
    let probs = Tensor::new(&[1, 3], vec![0.8f64, 0.1, 0.1]).unwrap();
    let hot: Tensor<f64> = one_hot(&[0], 3).unwrap();
    let smoothed = smoothed_cross_entropy(&probs, &hot, 0.1, None).unwrap();
    let oracle = -(0.9 * 0.8f64.ln() + 0.05 * 0.1f64.ln() + 0.05 * 0.1f64.ln());
    let example_ok = (smoothed - 0.431087).abs() < 1e-6 && (smoothed - oracle).abs() < 1e-12;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut zero_eps_ok, mut unit_weights_ok, mut smoothing_raises) = (true, true, true);
    for _ in 0..200 {
        let k = rng.random_range(2..6);
        let n = rng.random_range(1..9);
        let mut raw: Vec<f64> = (0..n * k).map(|_| rng.random_range(0.01..1.0)).collect();
        for row in raw.chunks_mut(k) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let probs = Tensor::new(&[n, k], raw.clone()).unwrap();
        let hot: Tensor<f64> = one_hot(&labels, k).unwrap();
        let plain = cross_entropy(&probs, &hot, None).unwrap();
        zero_eps_ok &= smoothed_cross_entropy(&probs, &hot, 0.0, None).unwrap().to_bits() == plain.to_bits();
        unit_weights_ok &= cross_entropy(&probs, &hot, Some(&vec![1.0; k])).unwrap().to_bits() == plain.to_bits();

        // Confident, correct rows: move most of the mass onto the label.
        let mut confident = raw;
        for (row, &c) in confident.chunks_mut(k).zip(&labels) {
            row.iter_mut().for_each(|v| *v *= 0.2);
            row[c] += 0.8;
        }
        let probs = Tensor::new(&[n, k], confident).unwrap();
        let eps = rng.random_range(0.01..0.5);
        for i in 0..n {
            let row = Tensor::new(&[1, k], probs.data()[i * k..(i + 1) * k].to_vec()).unwrap();
            let h: Tensor<f64> = one_hot(&labels[i..=i], k).unwrap();
            smoothing_raises &= smoothed_cross_entropy(&row, &h, eps, None).unwrap() > cross_entropy(&row, &h, None).unwrap();
        }
    }
    outcome(
        example_ok && zero_eps_ok && unit_weights_ok && smoothing_raises,
        format!(
            "example {smoothed:.7} (oracle {oracle:.7}); eps=0 bitwise {zero_eps_ok}; unit weights bitwise {unit_weights_ok}; smoothing raises confident loss {smoothing_raises}"
        ),
    )
}

fn end_to_end() -> Outcome {
    const EPOCHS: usize = 4;
    let train = pattern_dataset([160, 160, 160], 80, 0.1, 11);
    let held_out = pattern_dataset([40, 40, 40], 80, 0.1, 12);
    let mut plan = TrainPlan::new(EPOCHS, 32, 1e-3, 7);
    plan.smoothing = 0.1;
    let steps_per_epoch = train.len().div_ceil(plan.batch_size);
    plan.schedule = Some(ScheduleSpec::for_run(1e-3, steps_per_epoch, EPOCHS));
    let run = || {
        let mut model: ModelGraph<f32> =
            ModelGraph::build(preset("paper-default", 3).unwrap(), [3, 80, 80], train.classes().to_vec(), 5).unwrap();
        let start = Instant::now();
        let history = fit(&mut model, &train, None, &plan, &mut |r| eprintln!("  {r}")).unwrap();
        let elapsed = start.elapsed();
        (model, history, elapsed)
    };
    let (model, history, elapsed) = run();
    let train_acc = history.last("train").and_then(|r| r.accuracy).unwrap_or(0.0);
    let (report, _) = evaluate(&model, &held_out, 64).unwrap();
    let held_acc = report.accuracy.unwrap_or(0.0);
    let (model2, history2, _) = run();
    let deterministic = model == model2 && history == history2;
    outcome(
        train_acc >= 0.95 && held_acc >= 0.90 && elapsed < Duration::from_secs(600) && deterministic,
        format!(
            "paper-default, {} params, {EPOCHS} epochs on {} images: train accuracy {train_acc:.4}, held-out accuracy {held_acc:.4} on {}, {:.0}s on {} worker(s), rerun identical {deterministic}",
            model.count_parameters(),
            train.len(),
            held_out.len(),
            elapsed.as_secs_f64(),
            cxr_forge::parallel::worker_count()
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn class_imbalance() -> Outcome {
    const EPOCHS: usize = 3;
    let minority = 2;
    let (mut diffs, mut plain, mut weighted) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 1..=3u64 {
        let train = pattern_dataset([200, 60, 20], 80, 0.1, 100 + seed);
        let test = pattern_dataset([60, 60, 60], 80, 0.1, 200 + seed);
        let weights = compute_class_weights(train.classes(), &train.class_counts()).unwrap();
        let mut recalls = Vec::new();
        for class_weights in [None, Some(weights)] {
            let mut model: ModelGraph<f32> =
                ModelGraph::build(preset("paper-compact", 3).unwrap(), [3, 80, 80], train.classes().to_vec(), seed).unwrap();
            let mut plan = TrainPlan::new(EPOCHS, 32, 1e-3, seed);
            plan.smoothing = 0.1;
            plan.class_weights = class_weights;
            fit(&mut model, &train, None, &plan, &mut |_| {}).unwrap();
            let (report, _) = evaluate(&model, &test, 64).unwrap();
            recalls.push(report.classes[minority].recall.unwrap());
        }
        plain.push(recalls[0]);
        weighted.push(recalls[1]);
        diffs.push(recalls[1] - recalls[0]);
    }
    let gain = median(diffs.clone());
    outcome(
        gain >= 0.10,
        format!(
            "10:3:1 (200/60/20), paper-compact, {EPOCHS} epochs; minority recall unweighted {plain:.3?} weighted {weighted:.3?}; median per-seed gain {gain:.3} (difference of medians {:.3})",
            median(weighted.clone()) - median(plain.clone())
        ),
    )
}

fn schedule_suite() -> Outcome {
    let mut mismatches = 0;
    let mut total = 0;
    let explicit = ScheduleSpec {
        peak_lr: 0.05,
        warmup_steps: 137,
        decay_start: 613,
        decay_factor: 0.25,
    };
    for spec in [ScheduleSpec::for_run(1e-3, 40, 25), explicit] {
        let oracle = |s: usize| {
            if s < spec.warmup_steps {
                spec.peak_lr * (s + 1) as f64 / spec.warmup_steps as f64
            } else if s < spec.decay_start {
                spec.peak_lr
            } else {
                spec.peak_lr * spec.decay_factor
            }
        };
        let lrs: Vec<f64> = (0..1000).map(|s| spec.lr_at(s)).collect();
        mismatches += lrs.iter().enumerate().filter(|(s, &lr)| lr.to_bits() != oracle(*s).to_bits()).count();
        let ramp = lrs[..spec.warmup_steps].windows(2).all(|w| w[0] < w[1]);
        let distinct: std::collections::BTreeSet<u64> = lrs[spec.warmup_steps..].iter().map(|v| v.to_bits()).collect();
        if !ramp || distinct.len() != 2 || (lrs[spec.warmup_steps - 1] - spec.peak_lr).abs() > 1e-15 * spec.peak_lr {
            mismatches += 1;
        }
        total += lrs.len();
    }
    let d = ScheduleSpec::for_run(1e-3, 40, 25);
    outcome(
        mismatches == 0,
        format!(
            "{total} steps over two schedules, {mismatches} mismatches; defaults for 40 steps/epoch x 25 epochs: warmup {} decay at {} factor {}",
            d.warmup_steps, d.decay_start, d.decay_factor
        ),
    )
}

fn ci_suite() -> Outcome {
    let constant = class_probability_ci(&[0.7; 50], 0.95).unwrap();
    let constant_ok = constant.lower == constant.upper && (constant.mean - 0.7).abs() < 1e-12;

    // Two-point sample with mean 0.8445 and sample sd 0.13265 exactly:
    // 59 values at mean + a·sd and 41 at mean − b·sd, with the n−1 variance.
    let a = (99.0 * 41.0 / 5900.0f64).sqrt();
    let b = 59.0 * a / 41.0;
    let mut covid = vec![0.8445 + a * 0.13265; 59];
    covid.extend(vec![0.8445 - b * 0.13265; 41]);
    let row = class_probability_ci(&covid, 0.95).unwrap();
    let row_ok = (row.mean - 0.8445).abs() < 5e-4 && (row.lower - 0.8185).abs() < 5e-4 && (row.upper - 0.8705).abs() < 5e-4;

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut mean_half = |n: usize| {
        let reps = 400;
        (0..reps)
            .map(|_| {
                let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.0)).collect();
                class_probability_ci(&xs, 0.95).unwrap().half_width()
            })
            .sum::<f64>()
            / reps as f64
    };
    let hw: Vec<f64> = [25, 50, 100, 200, 400].iter().map(|&n| mean_half(n)).collect();
    let ratios: Vec<f64> = hw.windows(2).map(|w| w[0] / w[1]).collect();
    let scaling_ok = ratios.iter().all(|r| (r / 2f64.sqrt() - 1.0).abs() < 0.05);
    outcome(
        constant_ok && row_ok && scaling_ok,
        format!(
            "constant -> ({:.4}, {:.4}, {:.4}); Table 4 COVID-19 row -> ({:.4}, {:.4}, {:.4}); half-width ratios for n 25..400 doubling {:.4?} (want {:.4})",
            constant.mean, constant.lower, constant.upper, row.mean, row.lower, row.upper, ratios, 2f64.sqrt()
        ),
    )
}

fn persistence() -> Outcome {
    let data = pattern_dataset([4, 4, 4], 80, 0.1, 9);
    let mut model: ModelGraph<f32> =
        ModelGraph::build(preset("paper-compact", 3).unwrap(), [3, 80, 80], data.classes().to_vec(), 2).unwrap();
    fit(&mut model, &data, None, &TrainPlan::new(1, 4, 1e-3, 0), &mut |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.cxrf");
    save_checkpoint(&model, &path).unwrap();
    let loaded: ModelGraph<f32> = load_checkpoint(&path).unwrap();
    let batch = data.assemble(&(0..12).collect::<Vec<_>>(), None);
    let a = model.predict(&batch.images).unwrap();
    let b = loaded.predict(&batch.images).unwrap();
    let identical = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()) && loaded == model;

    let bytes = checkpoint_to_bytes(&model).unwrap();
    let truncated = checkpoint_from_bytes::<f32>(&bytes[..bytes.len() - 100]);
    let mut bumped = bytes.clone();
    bumped[4..8].copy_from_slice(&2u32.to_le_bytes());
    let version = checkpoint_from_bytes::<f32>(&bumped);
    let truncation_ok = matches!(truncated, Err(Error::Truncated(_)));
    let version_ok = matches!(version, Err(Error::UnsupportedVersion { found: 2, expected: 1 }));
    let describe = |r: &cxr_forge::Result<ModelGraph<f32>>| match r {
        Ok(_) => "accepted".to_string(),
        Err(e) => e.to_string(),
    };
    outcome(
        identical && truncation_ok && version_ok,
        format!(
            "{} bytes, predictions bit-identical {identical}; truncation -> \"{}\"; version bump -> \"{}\"",
            bytes.len(),
            describe(&truncated),
            describe(&version)
        ),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        (1, "confusion-matrix metric oracle", table5_oracle),
        (2, "gradient verification", gradient_verification),
        (3, "loss formula oracles", loss_oracles),
        (4, "end-to-end training sanity", end_to_end),
        (5, "class-imbalance weighting", class_imbalance),
        (6, "learning-rate schedule", schedule_suite),
        (7, "probability confidence intervals", ci_suite),
        (8, "checkpoint persistence", persistence),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        println!(
            "[{}] {id}. {name}: {} ({:.1}s)",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!result.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
