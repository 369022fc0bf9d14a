#![allow(dead_code)]

use cxr_forge::model::{LayerKind, LayerSpec, ModelGraph};
use cxr_forge::tensor::ops::{conv2d, relu, Padding};
use cxr_forge::train::batch_loss;
use cxr_forge::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-5;

/// Smallest distance any perturbed activation may have from a ReLU or
/// max-pool switching point. Every weight and input has magnitude ≤ 1 and a
/// step of `H` moves a conv pre-activation by at most `H · max|input|`.
const KINK_MARGIN: f64 = 5e-3;

pub fn classes() -> Vec<String> {
    ["a", "b", "c"].iter().map(|s| s.to_string()).collect()
}

/// conv(3→4) → relu → maxpool → [gap, flatten] concat → dense(3) → softmax.
pub fn small_net(padding: Padding, stride: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::new("conv", LayerKind::Conv { filters: 4, kernel: 3, stride, padding }),
        LayerSpec::new("relu", LayerKind::Relu),
        LayerSpec::new("pool", LayerKind::MaxPool { window: 2, stride: 2 }),
        LayerSpec::new("gap", LayerKind::Gap),
        LayerSpec::new("flat", LayerKind::Flatten).from_input("pool"),
        LayerSpec::new("join", LayerKind::Concat { inputs: vec!["gap".into(), "flat".into()] }),
        LayerSpec::new("out", LayerKind::Dense { units: 3 }),
        LayerSpec::new("prob", LayerKind::Softmax),
    ]
}

pub struct Instance {
    pub model: ModelGraph<f64>,
    pub images: Tensor<f64>,
    pub labels: Vec<usize>,
    pub smoothing: f64,
    pub class_weights: Vec<f64>,
    pub padding: Padding,
    pub stride: usize,
}

impl Instance {
    pub fn loss(&self, model: &ModelGraph<f64>) -> f64 {
        batch_loss(model, &self.images, &self.labels, self.smoothing, Some(&self.class_weights)).unwrap()
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

/// True when no ReLU input or max-pool winner sits within `KINK_MARGIN` of
/// a switch, so every finite-difference probe stays on one smooth piece.
fn clear_of_kinks(inst: &Instance) -> bool {
    let p = inst.model.parameters();
    let pre = conv2d(&inst.images, &p[0].value, &p[1].value, inst.stride, inst.padding).unwrap();
    if pre.data().iter().any(|v| v.abs() < KINK_MARGIN) {
        return false;
    }
    let act = relu(&pre);
    let s = act.shape();
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    for plane in act.data().chunks(h * w) {
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                let mut win: Vec<f64> = (0..4).map(|t| plane[(2 * oy + t / 2) * w + 2 * ox + t % 2]).collect();
                win.sort_by(|a, b| b.total_cmp(a));
                if win[0] > 0.0 && win[0] - win[1] < KINK_MARGIN {
                    return false;
                }
            }
        }
    }
    let _ = planes;
    true
}

/// A seeded random network, batch and loss configuration; draws are
/// rejected until [`clear_of_kinks`] holds.
pub fn instance(seed: u64, padding: Padding, stride: usize, size: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let spec = small_net(padding, stride);
        let template: ModelGraph<f64> = ModelGraph::build(spec.clone(), [3, size, size], classes(), 0).unwrap();
        let values = template
            .parameters()
            .iter()
            .map(|p| uniform(&mut rng, p.value.shape(), if p.name.ends_with("bias") { 0.1 } else { 0.5 }))
            .collect();
        let model = ModelGraph::from_parameters(spec, [3, size, size], classes(), values).unwrap();
        let inst = Instance {
            model,
            images: Tensor::from_fn(&[2, 3, size, size], |_| rng.random_range(0.0..1.0)),
            labels: (0..2).map(|_| rng.random_range(0..3)).collect(),
            smoothing: rng.random_range(0.0..0.3),
            class_weights: (0..3).map(|_| rng.random_range(0.5..2.0)).collect(),
            padding,
            stride,
        };
        if clear_of_kinks(&inst) {
            return inst;
        }
    }
}

pub struct Check {
    /// Worst single-element `|a − n| / max(|a|, |n|)`.
    pub max_rel_error: f64,
    pub worst: String,
    /// Worst per-tensor `‖a − n‖ / max(‖a‖, ‖n‖)`.
    pub max_tensor_rel_error: f64,
    pub worst_tensor: String,
    pub checked: usize,
}

/// Compares every analytic parameter gradient with a central difference.
pub fn gradient_check(inst: &Instance, h: f64) -> Check {
    let mut tape = cxr_forge::tensor::GradTape::new();
    let probs = inst.model.forward(&mut tape, inst.images.clone()).unwrap();
    let hot = cxr_forge::train::loss::one_hot(&inst.labels, 3).unwrap();
    let weights = cxr_forge::train::loss::sample_weights(&hot, Some(&inst.class_weights)).unwrap();
    let targets = cxr_forge::train::loss::label_smooth(&hot, inst.smoothing).unwrap();
    let loss = tape.cross_entropy(probs, targets, weights).unwrap();
    let grads = tape.backward(loss, inst.model.parameter_shapes()).unwrap();
    assert!(grads.diagnostics.is_empty(), "{:?}", grads.diagnostics);

    let mut check = Check {
        max_rel_error: 0.0,
        worst: String::new(),
        max_tensor_rel_error: 0.0,
        worst_tensor: String::new(),
        checked: 0,
    };
    let names: Vec<String> = inst.model.parameters().iter().map(|p| p.name.clone()).collect();
    for (pi, name) in names.iter().enumerate() {
        let analytic = grads.get(name).unwrap();
        let (mut diff, mut norm_a, mut norm_n) = (0.0f64, 0.0f64, 0.0f64);
        for j in 0..analytic.len() {
            let probe = |delta: f64| {
                let mut m = inst.model.clone();
                let (_, t) = m.parameters_mut().nth(pi).unwrap();
                t.data_mut()[j] += delta;
                inst.loss(&m)
            };
            let numeric = (probe(h) - probe(-h)) / (2.0 * h);
            let a = analytic.data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > check.max_rel_error {
                check.max_rel_error = rel;
                check.worst = format!("{name}[{j}]: analytic {a:e} numeric {numeric:e}");
            }
            diff += (a - numeric).powi(2);
            norm_a += a * a;
            norm_n += numeric * numeric;
            check.checked += 1;
        }
        let rel = diff.sqrt() / norm_a.sqrt().max(norm_n.sqrt()).max(1e-8);
        if rel > check.max_tensor_rel_error {
            check.max_tensor_rel_error = rel;
            check.worst_tensor = name.clone();
        }
    }
    check
}
