//! Declarative layer graphs, the default four-block network, and checkpoints.

mod checkpoint;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ops::{ConvGeometry, Padding};
use crate::tensor::{GradTape, Scalar, Tensor, Var};

pub use checkpoint::{checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint};
pub use checkpoint::{FORMAT_VERSION, MAGIC};

/// Name that refers to the image batch fed into the graph.
pub const INPUT: &str = "input";

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerKind {
    Conv {
        filters: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: Padding,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    Gap,
    Dense {
        units: usize,
    },
    Relu,
    Softmax,
    Concat {
        inputs: Vec<String>,
    },
    Flatten,
}

impl LayerKind {
    fn label(&self) -> String {
        match self {
            LayerKind::Conv {
                filters,
                kernel,
                stride,
                padding,
            } => format!("conv {kernel}x{kernel}/{stride} {filters} {padding:?}").to_lowercase(),
            LayerKind::MaxPool { window, stride } => format!("maxpool {window}x{window}/{stride}"),
            LayerKind::Gap => "gap".into(),
            LayerKind::Dense { units } => format!("dense {units}"),
            LayerKind::Relu => "relu".into(),
            LayerKind::Softmax => "softmax".into(),
            LayerKind::Concat { inputs } => format!("concat [{}]", inputs.join(", ")),
            LayerKind::Flatten => "flatten".into(),
        }
    }
}

/// One node of the graph. `input` defaults to the previous layer (or the image
/// batch for the first layer); concat names its inputs in `layer` instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    pub layer: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, layer: LayerKind) -> Self {
        Self {
            name: name.into(),
            input: None,
            layer,
        }
    }

    pub fn from_input(mut self, input: impl Into<String>) -> Self {
        self.input = Some(input.into());
        self
    }
}

/// Four blocks of `conv → relu → conv → relu → maxpool` with a GAP tap after
/// every pool, the flattened last feature map concatenated with all taps, and
/// a `dense → relu → dense → softmax` head.
pub fn paper_like(filters: [usize; 4], hidden: usize, classes: usize) -> Vec<LayerSpec> {
    let conv = |f| LayerKind::Conv {
        filters: f,
        kernel: 3,
        stride: 1,
        padding: Padding::Same,
    };
    let mut layers = Vec::new();
    let mut prev = INPUT.to_string();
    let mut taps = Vec::new();
    for (b, &f) in filters.iter().enumerate() {
        let b = b + 1;
        layers.push(LayerSpec::new(format!("conv{b}_1"), conv(f)).from_input(prev.clone()));
        layers.push(LayerSpec::new(format!("relu{b}_1"), LayerKind::Relu));
        layers.push(LayerSpec::new(format!("conv{b}_2"), conv(f)));
        layers.push(LayerSpec::new(format!("relu{b}_2"), LayerKind::Relu));
        let pool = format!("pool{b}");
        layers.push(LayerSpec::new(
            pool.clone(),
            LayerKind::MaxPool {
                window: 2,
                stride: 2,
            },
        ));
        layers.push(LayerSpec::new(format!("gap{b}"), LayerKind::Gap).from_input(pool.clone()));
        taps.push(format!("gap{b}"));
        prev = pool;
    }
    layers.push(LayerSpec::new("flatten", LayerKind::Flatten).from_input(prev));
    let mut inputs = vec!["flatten".to_string()];
    inputs.extend(taps);
    layers.push(LayerSpec::new("concat", LayerKind::Concat { inputs }));
    layers.push(LayerSpec::new("fc1", LayerKind::Dense { units: hidden }));
    layers.push(LayerSpec::new("fc1_relu", LayerKind::Relu));
    layers.push(LayerSpec::new("fc2", LayerKind::Dense { units: classes }));
    layers.push(LayerSpec::new("softmax", LayerKind::Softmax));
    layers
}

/// Named model presets accepted by configs and the CLI.
pub fn preset(name: &str, classes: usize) -> Option<Vec<LayerSpec>> {
    match name {
        "paper-default" => Some(paper_like([32, 64, 128, 256], 512, classes)),
        "paper-compact" => Some(paper_like([8, 16, 32, 64], 64, classes)),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T: Scalar = f32> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Ordered layers, learned parameters, and the propagated output shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph<T: Scalar = f32> {
    layers: Vec<LayerSpec>,
    input_shape: [usize; 3],
    classes: Vec<String>,
    /// Per-sample output shape of each layer.
    shapes: Vec<Vec<usize>>,
    /// Indices into `params` of (weights, bias) for parameterized layers.
    param_index: Vec<Option<usize>>,
    params: Vec<Parameter<T>>,
}

/// Result of shape propagation: output shapes and parameter shapes per layer.
struct Plan {
    shapes: Vec<Vec<usize>>,
    param_shapes: Vec<Option<(Vec<usize>, Vec<usize>)>>,
}

fn plan(layers: &[LayerSpec], input_shape: [usize; 3], classes: usize) -> Result<Plan> {
    let fail = |layer: &str, reason: String| Error::ModelConfig {
        layer: layer.to_string(),
        reason,
    };
    if layers.is_empty() {
        return Err(fail("<none>", "empty config has no softmax head".into()));
    }
    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(layers.len());
    let mut param_shapes = Vec::with_capacity(layers.len());
    for (i, spec) in layers.iter().enumerate() {
        let name = spec.name.as_str();
        if name.is_empty() || name == INPUT || seen.contains_key(name) {
            return Err(fail(name, "layer names must be unique, non-empty and not `input`".into()));
        }
        let resolve = |r: &str| -> Result<Vec<usize>> {
            if r == INPUT {
                return Ok(input_shape.to_vec());
            }
            seen.get(r)
                .map(|&j| shapes[j].clone())
                .ok_or_else(|| fail(name, format!("input `{r}` is not an earlier layer")))
        };
        let input = match (&spec.input, i) {
            (Some(r), _) => resolve(r)?,
            (None, 0) => input_shape.to_vec(),
            (None, _) => shapes[i - 1].clone(),
        };
        let want_rank = |rank: usize, s: &[usize]| -> Result<()> {
            if s.len() != rank {
                return Err(fail(name, format!("expects rank-{rank} input, got {s:?}")));
            }
            Ok(())
        };
        let mut params = None;
        let out = match &spec.layer {
            &LayerKind::Conv {
                filters,
                kernel,
                stride,
                padding,
            } => {
                want_rank(3, &input)?;
                let g = ConvGeometry::new([input[0], input[1], input[2]], filters, kernel, stride, padding)
                    .map_err(|e| fail(name, e.to_string()))?;
                params = Some((vec![filters, input[0], kernel, kernel], vec![filters]));
                vec![filters, g.out_height, g.out_width]
            }
            &LayerKind::MaxPool { window, stride } => {
                want_rank(3, &input)?;
                if window == 0 || stride == 0 || input[1] < window || input[2] < window {
                    return Err(fail(name, format!("window {window} does not fit {input:?}")));
                }
                vec![
                    input[0],
                    (input[1] - window) / stride + 1,
                    (input[2] - window) / stride + 1,
                ]
            }
            LayerKind::Gap => {
                want_rank(3, &input)?;
                vec![input[0]]
            }
            &LayerKind::Dense { units } => {
                want_rank(1, &input)?;
                if units == 0 {
                    return Err(fail(name, "dense needs at least one unit".into()));
                }
                params = Some((vec![input[0], units], vec![units]));
                vec![units]
            }
            LayerKind::Relu => input,
            LayerKind::Softmax => {
                want_rank(1, &input)?;
                input
            }
            LayerKind::Concat { inputs } => {
                if inputs.is_empty() {
                    return Err(fail(name, "concat needs inputs".into()));
                }
                let mut width = 0;
                for r in inputs {
                    let s = resolve(r)?;
                    want_rank(1, &s)?;
                    width += s[0];
                }
                vec![width]
            }
            LayerKind::Flatten => vec![input.iter().product()],
        };
        seen.insert(name, i);
        shapes.push(out);
        param_shapes.push(params);
    }
    let last = layers.last().expect("non-empty");
    if last.layer != LayerKind::Softmax {
        return Err(fail(&last.name, "final layer must be softmax".into()));
    }
    if shapes.last().map(Vec::as_slice) != Some(&[classes][..]) {
        return Err(fail(
            &last.name,
            format!("head emits {:?}, expected [{classes}]", shapes.last().unwrap()),
        ));
    }
    Ok(Plan {
        shapes,
        param_shapes,
    })
}

impl<T: Scalar> ModelGraph<T> {
    /// Validates `layers` and initializes parameters He-uniform from `seed`.
    pub fn build(
        layers: Vec<LayerSpec>,
        input_shape: [usize; 3],
        classes: Vec<String>,
        seed: u64,
    ) -> Result<Self> {
        let plan = plan(&layers, input_shape, classes.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut param_index = Vec::with_capacity(layers.len());
        for (spec, shapes) in layers.iter().zip(&plan.param_shapes) {
            let Some((w_shape, b_shape)) = shapes else {
                param_index.push(None);
                continue;
            };
            // Conv kernels are [F, C, k, k]; dense weights are [in, out].
            let fan_in: usize = match w_shape.len() {
                2 => w_shape[0],
                _ => w_shape[1..].iter().product(),
            };
            let limit = (6.0 / fan_in as f64).sqrt();
            let weights = Tensor::from_fn(w_shape, |_| T::of(rng.random_range(-limit..limit)));
            param_index.push(Some(params.len()));
            params.push(Parameter {
                name: format!("{}.weight", spec.name),
                value: weights,
            });
            params.push(Parameter {
                name: format!("{}.bias", spec.name),
                value: Tensor::zeros(b_shape),
            });
        }
        Ok(Self {
            layers,
            input_shape,
            classes,
            shapes: plan.shapes,
            param_index,
            params,
        })
    }

    /// Reassembles a graph from stored parameters, checking every shape.
    pub fn from_parameters(
        layers: Vec<LayerSpec>,
        input_shape: [usize; 3],
        classes: Vec<String>,
        values: Vec<Tensor<T>>,
    ) -> Result<Self> {
        let mut model = Self::build(layers, input_shape, classes, 0)?;
        if values.len() != model.params.len() {
            return Err(Error::ParameterMismatch(format!(
                "{} parameter tensors for {} expected",
                values.len(),
                model.params.len()
            )));
        }
        for (p, v) in model.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::ParameterMismatch(format!(
                    "{}: stored {:?}, spec needs {:?}",
                    p.name,
                    v.shape(),
                    p.value.shape()
                )));
            }
            p.value = v;
        }
        Ok(model)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    /// Per-sample output shape of layer `i`.
    pub fn output_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn parameters(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params
            .iter_mut()
            .map(|p| (p.name.as_str(), &mut p.value))
    }

    /// `(name, shape)` of every parameter, in storage order.
    pub fn parameter_shapes(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.params.iter().map(|p| (p.name.as_str(), p.value.shape()))
    }

    pub fn count_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Parameter count of layer `i` (weights plus bias).
    pub fn layer_parameter_count(&self, i: usize) -> usize {
        self.param_index[i].map_or(0, |j| self.params[j].value.len() + self.params[j + 1].value.len())
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<()> {
        let s = batch.shape();
        if s.len() != 4 || s[1..] != self.input_shape {
            let mut want = vec![s.first().copied().unwrap_or(0)];
            want.extend(self.input_shape);
            return Err(Error::shape("predict", s, &want));
        }
        Ok(())
    }

    /// Records a forward pass on `tape` and returns the probability output.
    pub fn forward(&self, tape: &mut GradTape<T>, batch: Tensor<T>) -> Result<Var> {
        self.check_batch(&batch)?;
        let input = tape.input(batch);
        let mut outputs: HashMap<&str, Var> = HashMap::new();
        let mut prev = input;
        for (i, spec) in self.layers.iter().enumerate() {
            let x = match spec.input.as_deref() {
                Some(INPUT) => input,
                Some(r) => outputs[r],
                None => prev,
            };
            let params = self.param_index[i].map(|j| {
                let w = tape.param(self.params[j].name.clone(), self.params[j].value.clone());
                let b = tape.param(self.params[j + 1].name.clone(), self.params[j + 1].value.clone());
                (w, b)
            });
            let y = match &spec.layer {
                &LayerKind::Conv {
                    stride, padding, ..
                } => {
                    let (w, b) = params.expect("conv has parameters");
                    tape.conv2d(x, w, b, stride, padding)?
                }
                &LayerKind::MaxPool { window, stride } => tape.maxpool2d(x, window, stride)?,
                LayerKind::Gap => tape.global_avg_pool2d(x)?,
                LayerKind::Dense { .. } => {
                    let (w, b) = params.expect("dense has parameters");
                    tape.dense(x, w, b)?
                }
                LayerKind::Relu => tape.relu(x),
                LayerKind::Softmax => tape.softmax(x)?,
                LayerKind::Concat { inputs } => {
                    let parts: Vec<Var> = inputs
                        .iter()
                        .map(|r| if r == INPUT { input } else { outputs[r.as_str()] })
                        .collect();
                    tape.concat(&parts)?
                }
                LayerKind::Flatten => tape.flatten(x)?,
            };
            outputs.insert(&spec.name, y);
            prev = y;
        }
        Ok(prev)
    }

    /// Class probabilities for a `[N, C, H, W]` batch.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = GradTape::new();
        let out = self.forward(&mut tape, batch.clone())?;
        Ok(tape.value(out).clone())
    }

    /// One row per layer: name, description, per-sample output shape, parameter count.
    pub fn summary(&self) -> Vec<(String, String, Vec<usize>, usize)> {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                (
                    l.name.clone(),
                    l.layer.label(),
                    self.shapes[i].clone(),
                    self.layer_parameter_count(i),
                )
            })
            .collect()
    }
}

/// Default class list.
pub fn default_classes() -> Vec<String> {
    ["COVID-19", "Normal", "Pneumonia"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}
