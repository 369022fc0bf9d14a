use std::collections::BTreeMap;

use super::ops::{self, Padding};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param(String),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: Padding,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Dense {
        input: Var,
        weights: Var,
        bias: Var,
    },
    Relu(Var),
    Softmax(Var),
    Concat {
        parts: Vec<Var>,
        widths: Vec<usize>,
    },
    Flatten(Var),
    Sum(Var),
    Mul(Var, Var),
    CrossEntropy {
        probs: Var,
        targets: Tensor<T>,
        sample_weights: Vec<T>,
    },
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    needs_grad: bool,
}

/// Ordered record of a forward pass, replayed in reverse by [`GradTape::backward`].
///
/// A tape is owned by one forward/backward pass; build a fresh one per step.
pub struct GradTape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar = f32> {
    pub grads: BTreeMap<String, Tensor<T>>,
    /// Parameters that were requested but received no gradient flow.
    pub diagnostics: Vec<String>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.grads.get(name)
    }
}

impl<T: Scalar> Default for GradTape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> GradTape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Input => false,
            Op::Param(_) => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Records a constant. No gradient flows into it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Input, value, &[])
    }

    /// Records a named trainable parameter.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Var {
        self.push(Op::Param(name.into()), value, &[])
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let out = ops::conv2d(
            self.value(input),
            self.value(kernel),
            self.value(bias),
            stride,
            padding,
        )?;
        let op = Op::Conv2d {
            input,
            kernel,
            bias,
            stride,
            padding,
        };
        Ok(self.push(op, out, &[input, kernel, bias]))
    }

    pub fn maxpool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let (out, argmax) = ops::maxpool2d(self.value(input), window, stride)?;
        Ok(self.push(Op::MaxPool { input, argmax }, out, &[input]))
    }

    pub fn global_avg_pool2d(&mut self, input: Var) -> Result<Var> {
        let out = ops::global_avg_pool2d(self.value(input))?;
        Ok(self.push(Op::GlobalAvgPool(input), out, &[input]))
    }

    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let out = ops::dense(self.value(input), self.value(weights), self.value(bias))?;
        let op = Op::Dense {
            input,
            weights,
            bias,
        };
        Ok(self.push(op, out, &[input, weights, bias]))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = ops::relu(self.value(input));
        self.push(Op::Relu(input), out, &[input])
    }

    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let out = ops::softmax(self.value(input))?;
        Ok(self.push(Op::Softmax(input), out, &[input]))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let (out, _) = ops::concat(&values)?;
        let widths = values.iter().map(|t| t.shape()[1]).collect();
        let op = Op::Concat {
            parts: parts.to_vec(),
            widths,
        };
        Ok(self.push(op, out, parts))
    }

    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let out = ops::flatten(self.value(input))?;
        Ok(self.push(Op::Flatten(input), out, &[input]))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, input: Var) -> Var {
        let total = self
            .value(input)
            .data()
            .iter()
            .fold(T::zero(), |s, &v| s + v);
        self.push(Op::Sum(input), Tensor::scalar(total), &[input])
    }

    /// Elementwise product of two equally shaped values.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape("mul", x.shape(), y.shape()));
        }
        let out = Tensor::from_parts(
            x.shape().to_vec(),
            x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect(),
        );
        Ok(self.push(Op::Mul(a, b), out, &[a, b]))
    }

    /// Per-sample weighted cross-entropy against soft `targets`, averaged
    /// over the batch. See [`crate::train::loss`] for the formula.
    pub fn cross_entropy(
        &mut self,
        probs: Var,
        targets: Tensor<T>,
        sample_weights: Vec<T>,
    ) -> Result<Var> {
        let loss = crate::train::loss::weighted_ce_value(
            self.value(probs),
            &targets,
            &sample_weights,
        )?;
        let op = Op::CrossEntropy {
            probs,
            targets,
            sample_weights,
        };
        Ok(self.push(op, Tensor::scalar(loss), &[probs]))
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Returns one gradient for every `(name, shape)` in `params`. Gradients of
    /// parameters recorded under the same name accumulate. A requested
    /// parameter that is absent from the tape, or unreachable from the loss,
    /// gets a zero gradient and a diagnostic entry.
    pub fn backward<'a, I>(&self, loss: Var, params: I) -> Result<Gradients<T>>
    where
        I: IntoIterator<Item = (&'a str, &'a [usize])>,
    {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), T::one()));
        let mut found: BTreeMap<String, Tensor<T>> = BTreeMap::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut send = |v: Var, d: Tensor<T>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(d.data())
                        .for_each(|(a, &b)| *a = *a + b),
                    slot @ None => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Param(name) => match found.get_mut(name) {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .for_each(|(a, &b)| *a = *a + b),
                    None => {
                        found.insert(name.clone(), g);
                    }
                },
                &Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    stride,
                    padding,
                } => {
                    let want_input = self.nodes[input.0].needs_grad;
                    let (dx, dk, db) = ops::conv2d_backward(
                        self.value(input),
                        self.value(kernel),
                        &g,
                        stride,
                        padding,
                        want_input,
                    )?;
                    if let Some(dx) = dx {
                        send(input, dx);
                    }
                    send(kernel, dk);
                    send(bias, db);
                }
                Op::MaxPool { input, argmax } => {
                    let dx = ops::maxpool2d_backward(self.value(*input).shape(), argmax, &g);
                    send(*input, dx);
                }
                &Op::GlobalAvgPool(input) => {
                    let dx = ops::global_avg_pool2d_backward(self.value(input).shape(), &g);
                    send(input, dx);
                }
                &Op::Dense {
                    input,
                    weights,
                    bias,
                } => {
                    let (dx, dw, db) =
                        ops::dense_backward(self.value(input), self.value(weights), &g);
                    send(input, dx);
                    send(weights, dw);
                    send(bias, db);
                }
                &Op::Relu(input) => send(input, ops::relu_backward(self.value(input), &g)),
                &Op::Softmax(input) => send(input, ops::softmax_backward(&node.value, &g)),
                Op::Concat { parts, widths } => {
                    for (&v, d) in parts.iter().zip(ops::split(&g, widths)?) {
                        send(v, d);
                    }
                }
                &Op::Flatten(input) => {
                    let shape = self.value(input).shape().to_vec();
                    send(input, g.reshape(&shape)?);
                }
                &Op::Sum(input) => {
                    let seed = g.data()[0];
                    send(input, Tensor::full(self.value(input).shape(), seed));
                }
                &Op::Mul(a, b) => {
                    let (x, y) = (self.value(a), self.value(b));
                    let prod = |t: &Tensor<T>| {
                        Tensor::from_parts(
                            t.shape().to_vec(),
                            t.data().iter().zip(g.data()).map(|(&p, &q)| p * q).collect(),
                        )
                    };
                    let (da, db) = (prod(y), prod(x));
                    send(a, da);
                    send(b, db);
                }
                Op::CrossEntropy {
                    probs,
                    targets,
                    sample_weights,
                } => {
                    let mut dp = crate::train::loss::weighted_ce_grad(
                        self.value(*probs),
                        targets,
                        sample_weights,
                    );
                    let seed = g.data()[0];
                    dp.data_mut().iter_mut().for_each(|x| *x = *x * seed);
                    send(*probs, dp);
                }
            }
        }

        let mut out = Gradients {
            grads: BTreeMap::new(),
            diagnostics: Vec::new(),
        };
        for (name, shape) in params {
            match found.remove(name) {
                Some(g) if g.shape() == shape => {
                    out.grads.insert(name.to_string(), g);
                }
                Some(g) => return Err(Error::shape("backward", g.shape(), shape)),
                None => {
                    let on_tape = self
                        .nodes
                        .iter()
                        .any(|n| matches!(&n.op, Op::Param(p) if p == name));
                    out.diagnostics.push(if on_tape {
                        format!("parameter `{name}` is not reachable from the loss")
                    } else {
                        format!("parameter `{name}` is not on the tape")
                    });
                    out.grads.insert(name.to_string(), Tensor::zeros(shape));
                }
            }
        }
        Ok(out)
    }
}
