//! Forward and backward kernels for every layer type, as pure functions.
//!
//! Layout is NCHW, row-major. Convolutions lower to im2col + GEMM per sample;
//! samples are processed data-parallel and per-sample weight gradients are
//! reduced in sample order so results never depend on the worker count.

use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::parallel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    #[default]
    Valid,
    /// Zero padding so that `out = ceil(in / stride)`; an odd remainder goes to
    /// the bottom/right edge.
    Same,
}

/// Resolved spatial geometry of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(
        [channels, height, width]: [usize; 3],
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 || filters == 0 {
            return Err(Error::invalid(
                "conv2d",
                "kernel, stride and filters must be positive",
            ));
        }
        let axis = |len: usize| -> Result<(usize, usize)> {
            match padding {
                Padding::Valid => {
                    if len < kernel {
                        return Err(Error::invalid(
                            "conv2d",
                            format!("spatial extent {len} smaller than kernel {kernel}"),
                        ));
                    }
                    Ok(((len - kernel) / stride + 1, 0))
                }
                Padding::Same => {
                    let out = len.div_ceil(stride);
                    let total = ((out - 1) * stride + kernel).saturating_sub(len);
                    Ok((out, total / 2))
                }
            }
        };
        let (out_height, pad_top) = axis(height)?;
        let (out_width, pad_left) = axis(width)?;
        if out_height == 0 || out_width == 0 {
            return Err(Error::invalid("conv2d", "empty output"));
        }
        Ok(Self {
            channels,
            height,
            width,
            filters,
            kernel,
            stride,
            pad_top,
            pad_left,
            out_height,
            out_width,
        })
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn out_plane(&self) -> usize {
        self.out_height * self.out_width
    }

    fn in_sample(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Yields `(row, out_index, in_index)` for every in-bounds tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (k, s) = (self.kernel, self.stride);
        let ow = self.out_width;
        let plane = self.out_plane();
        for c in 0..self.channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    for oy in 0..self.out_height {
                        let iy = (oy * s + ky) as isize - self.pad_top as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let in_row = (c * self.height + iy as usize) * self.width;
                        for ox in 0..ow {
                            let ix = (ox * s + kx) as isize - self.pad_left as isize;
                            if ix < 0 || ix >= self.width as isize {
                                continue;
                            }
                            f(row, row * plane + oy * ow + ox, in_row + ix as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, sample: &[T], cols: &mut [T]) {
        cols.fill(T::zero());
        self.for_each_tap(|_, o, i| cols[o] = sample[i]);
    }

    fn col2im<T: Scalar>(&self, cols: &[T], sample: &mut [T]) {
        self.for_each_tap(|_, o, i| sample[i] = sample[i] + cols[o]);
    }
}

fn expect_rank<T: Scalar>(op: &'static str, t: &Tensor<T>, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::invalid(
            op,
            format!("expected rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

fn nchw<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<[usize; 4]> {
    expect_rank(op, t, 4)?;
    let s = t.shape();
    Ok([s[0], s[1], s[2], s[3]])
}

fn conv_geometry<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<ConvGeometry> {
    let [_, c, h, w] = nchw("conv2d", input)?;
    let [f, kc, kh, kw] = nchw("conv2d", kernel)?;
    if kc != c || kh != kw {
        return Err(Error::shape("conv2d", input.shape(), kernel.shape()));
    }
    if bias.shape() != [f] {
        return Err(Error::shape("conv2d", kernel.shape(), bias.shape()));
    }
    ConvGeometry::new([c, h, w], f, kh, stride, padding)
}

/// Cross-correlation of `input[N,C,H,W]` with `kernel[F,C,k,k]` plus `bias[F]`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = conv_geometry(input, kernel, bias, stride, padding)?;
    let n = input.shape()[0];
    let plane = g.out_plane();
    let mut out = vec![T::zero(); n * g.filters * plane];
    let x = input.data();
    let kd = kernel.data();
    let bd = bias.data();
    parallel::for_each_chunk_mut(&mut out, g.filters * plane, |i, dst| {
        let mut cols = vec![T::zero(); g.patch_len() * plane];
        g.im2col(&x[i * g.in_sample()..(i + 1) * g.in_sample()], &mut cols);
        for (row, &b) in dst.chunks_mut(plane).zip(bd) {
            row.fill(b);
        }
        T::gemm(
            g.filters,
            g.patch_len(),
            plane,
            kd,
            false,
            &cols,
            false,
            dst,
            T::one(),
        );
    });
    Ok(Tensor::from_parts(
        vec![n, g.filters, g.out_height, g.out_width],
        out,
    ))
}

/// `(input, kernel, bias)` gradients; input is `None` when not requested.
pub type ConvGrads<T> = (Option<Tensor<T>>, Tensor<T>, Tensor<T>);

/// Gradients of [`conv2d`] with respect to input, kernel and bias. The input
/// gradient is only computed when `want_input` is set.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: Padding,
    want_input: bool,
) -> Result<ConvGrads<T>> {
    let f = kernel.shape().first().copied().unwrap_or(0);
    let bias = Tensor::zeros(&[f]);
    let g = conv_geometry(input, kernel, &bias, stride, padding)?;
    let n = input.shape()[0];
    let plane = g.out_plane();
    let expected = [n, g.filters, g.out_height, g.out_width];
    if grad_out.shape() != expected {
        return Err(Error::shape("conv2d_backward", grad_out.shape(), &expected));
    }
    let x = input.data();
    let kd = kernel.data();
    let gd = grad_out.data();
    let per_sample = parallel::map_indexed(n, |i| {
        let mut cols = vec![T::zero(); g.patch_len() * plane];
        g.im2col(&x[i * g.in_sample()..(i + 1) * g.in_sample()], &mut cols);
        let dy = &gd[i * g.filters * plane..(i + 1) * g.filters * plane];
        let mut dk = vec![T::zero(); g.filters * g.patch_len()];
        T::gemm(
            g.filters,
            plane,
            g.patch_len(),
            dy,
            false,
            &cols,
            true,
            &mut dk,
            T::zero(),
        );
        if !want_input {
            return (Vec::new(), dk);
        }
        T::gemm(
            g.patch_len(),
            g.filters,
            plane,
            kd,
            true,
            dy,
            false,
            &mut cols,
            T::zero(),
        );
        let mut dx = vec![T::zero(); g.in_sample()];
        g.col2im(&cols, &mut dx);
        (dx, dk)
    });
    let mut dx = Vec::with_capacity(input.len());
    let mut dk = vec![T::zero(); kernel.len()];
    for (sdx, sdk) in per_sample {
        dx.extend_from_slice(&sdx);
        dk.iter_mut().zip(&sdk).for_each(|(a, &b)| *a = *a + b);
    }
    let mut db = vec![T::zero(); g.filters];
    for sample in gd.chunks(g.filters * plane) {
        for (acc, row) in db.iter_mut().zip(sample.chunks(plane)) {
            *acc = row.iter().fold(*acc, |s, &v| s + v);
        }
    }
    Ok((
        want_input.then(|| Tensor::from_parts(input.shape().to_vec(), dx)),
        Tensor::from_parts(kernel.shape().to_vec(), dk),
        Tensor::from_parts(vec![g.filters], db),
    ))
}

/// Max pooling without padding. Also returns, per output element, the flat
/// input index of the first (row-major) maximum in its window.
pub fn maxpool2d<T: Scalar>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = nchw("maxpool2d", input)?;
    if window == 0 || stride == 0 {
        return Err(Error::invalid("maxpool2d", "window and stride must be positive"));
    }
    if h < window || w < window {
        return Err(Error::invalid(
            "maxpool2d",
            format!("window {window} larger than spatial extent {h}x{w}"),
        ));
    }
    let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
    let x = input.data();
    let planes = parallel::map_indexed(n * c, |p| {
        let base = p * h * w;
        let mut vals = Vec::with_capacity(oh * ow);
        let mut idx = Vec::with_capacity(oh * ow);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..window {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for j in row..row + window {
                        if x[j] > x[best] {
                            best = j;
                        }
                    }
                }
                vals.push(x[best]);
                idx.push(best);
            }
        }
        (vals, idx)
    });
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for (v, i) in planes {
        out.extend(v);
        argmax.extend(i);
    }
    Ok((Tensor::from_parts(vec![n, c, oh, ow], out), argmax))
}

/// Routes each output gradient to the input position recorded in `argmax`.
pub fn maxpool2d_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i] = d[i] + g;
    }
    dx
}

/// Spatial mean per channel: `[N,C,H,W] -> [N,C]`.
pub fn global_avg_pool2d<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = nchw("global_avg_pool2d", input)?;
    if h == 0 || w == 0 {
        return Err(Error::invalid("global_avg_pool2d", "empty spatial extent"));
    }
    let inv = T::one() / T::of((h * w) as f64);
    let out = input
        .data()
        .chunks(h * w)
        .map(|plane| plane.iter().fold(T::zero(), |s, &v| s + v) * inv)
        .collect();
    Ok(Tensor::from_parts(vec![n, c], out))
}

pub fn global_avg_pool2d_backward<T: Scalar>(
    input_shape: &[usize],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let plane = input_shape[2] * input_shape[3];
    let inv = T::one() / T::of(plane as f64);
    let mut dx = Vec::with_capacity(grad_out.len() * plane);
    for &g in grad_out.data() {
        dx.extend(std::iter::repeat_n(g * inv, plane));
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

/// Affine map `input[N,D] · weights[D,M] + bias[M]`.
pub fn dense<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    expect_rank("dense", input, 2)?;
    expect_rank("dense", weights, 2)?;
    let (n, d) = (input.shape()[0], input.shape()[1]);
    let (wd, m) = (weights.shape()[0], weights.shape()[1]);
    if wd != d {
        return Err(Error::shape("dense", input.shape(), weights.shape()));
    }
    if bias.shape() != [m] {
        return Err(Error::shape("dense", weights.shape(), bias.shape()));
    }
    let mut out = Vec::with_capacity(n * m);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    T::gemm(
        n,
        d,
        m,
        input.data(),
        false,
        weights.data(),
        false,
        &mut out,
        T::one(),
    );
    Ok(Tensor::from_parts(vec![n, m], out))
}

/// Gradients of [`dense`] with respect to input, weights and bias.
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, d) = (input.shape()[0], input.shape()[1]);
    let m = weights.shape()[1];
    let mut dx = vec![T::zero(); n * d];
    T::gemm(
        n,
        m,
        d,
        grad_out.data(),
        false,
        weights.data(),
        true,
        &mut dx,
        T::zero(),
    );
    let mut dw = vec![T::zero(); d * m];
    T::gemm(
        d,
        n,
        m,
        input.data(),
        true,
        grad_out.data(),
        false,
        &mut dw,
        T::zero(),
    );
    let mut db = vec![T::zero(); m];
    for row in grad_out.data().chunks(m) {
        db.iter_mut().zip(row).for_each(|(a, &g)| *a = *a + g);
    }
    (
        Tensor::from_parts(vec![n, d], dx),
        Tensor::from_parts(vec![d, m], dw),
        Tensor::from_parts(vec![m], db),
    )
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    Tensor::from_parts(
        input.shape().to_vec(),
        input.data().iter().map(|&x| x.max(T::zero())).collect(),
    )
}

/// Passes gradient where the input was strictly positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    Tensor::from_parts(
        input.shape().to_vec(),
        input
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
            .collect(),
    )
}

/// Row-wise softmax of `[N,K]`, shifted by the row maximum.
pub fn softmax<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank("softmax", input, 2)?;
    if !input.all_finite() {
        return Err(Error::NonFinite { op: "softmax" });
    }
    let k = input.shape()[1];
    let mut out = input.data().to_vec();
    for row in out.chunks_mut(k) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        row.iter_mut().for_each(|v| *v = *v / sum);
    }
    Ok(Tensor::from_parts(input.shape().to_vec(), out))
}

/// `dx = y ⊙ (g − ⟨g, y⟩)` per row, given the softmax output `y`.
pub fn softmax_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let k = output.shape()[1];
    let mut dx = Vec::with_capacity(output.len());
    for (y, g) in output.data().chunks(k).zip(grad_out.data().chunks(k)) {
        let dot = y.iter().zip(g).fold(T::zero(), |s, (&a, &b)| s + a * b);
        dx.extend(y.iter().zip(g).map(|(&a, &b)| a * (b - dot)));
    }
    Tensor::from_parts(output.shape().to_vec(), dx)
}

/// Joins `[N, D_i]` parts along the feature axis. Returns the column offset
/// of each part alongside the result.
pub fn concat<T: Scalar>(parts: &[&Tensor<T>]) -> Result<(Tensor<T>, Vec<usize>)> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat", "no parts"))?;
    expect_rank("concat", first, 2)?;
    let n = first.shape()[0];
    let mut offsets = Vec::with_capacity(parts.len());
    let mut width = 0;
    for p in parts {
        expect_rank("concat", p, 2)?;
        if p.shape()[0] != n {
            return Err(Error::shape("concat", first.shape(), p.shape()));
        }
        offsets.push(width);
        width += p.shape()[1];
    }
    let mut out = Vec::with_capacity(n * width);
    for row in 0..n {
        for p in parts {
            let d = p.shape()[1];
            out.extend_from_slice(&p.data()[row * d..(row + 1) * d]);
        }
    }
    Ok((Tensor::from_parts(vec![n, width], out), offsets))
}

/// Inverse of [`concat`]: cuts `[N, ΣD]` back into parts of the given widths.
pub fn split<T: Scalar>(joined: &Tensor<T>, widths: &[usize]) -> Result<Vec<Tensor<T>>> {
    expect_rank("split", joined, 2)?;
    let (n, total) = (joined.shape()[0], joined.shape()[1]);
    if widths.iter().sum::<usize>() != total {
        return Err(Error::shape("split", joined.shape(), widths));
    }
    let mut parts: Vec<Vec<T>> = widths.iter().map(|&d| Vec::with_capacity(n * d)).collect();
    for row in joined.data().chunks(total) {
        let mut at = 0;
        for (part, &d) in parts.iter_mut().zip(widths) {
            part.extend_from_slice(&row[at..at + d]);
            at += d;
        }
    }
    Ok(parts
        .into_iter()
        .zip(widths)
        .map(|(data, &d)| Tensor::from_parts(vec![n, d], data))
        .collect())
}

/// `[N, ...] -> [N, D]`, preserving row-major order.
pub fn flatten<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let n = *input
        .shape()
        .first()
        .ok_or_else(|| Error::invalid("flatten", "rank-0 input"))?;
    let d = input.shape()[1..].iter().product();
    input.clone().reshape(&[n, d])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct quadruple-loop cross-correlation with explicit zero padding.
    fn conv_oracle(
        x: &Tensor<f64>,
        k: &Tensor<f64>,
        b: &Tensor<f64>,
        stride: usize,
        pad: (usize, usize),
        out_hw: (usize, usize),
    ) -> Vec<f64> {
        let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let [f, _, kk, _] = [k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]];
        let mut out = vec![];
        for s in 0..n {
            for fi in 0..f {
                for oy in 0..out_hw.0 {
                    for ox in 0..out_hw.1 {
                        let mut acc = b.data()[fi];
                        for ci in 0..c {
                            for ky in 0..kk {
                                for kx in 0..kk {
                                    let iy = (oy * stride + ky) as isize - pad.0 as isize;
                                    let ix = (ox * stride + kx) as isize - pad.1 as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += x.data()[((s * c + ci) * h + iy as usize) * w + ix as usize]
                                        * k.data()[((fi * c + ci) * kk + ky) * kk + kx];
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_hand_example() {
        let x = t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let k = Tensor::full(&[1, 1, 2, 2], 1.0);
        let y = conv2d(&x, &k, &Tensor::zeros(&[1]), 1, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[12., 16., 24., 28.]);
    }

    #[test]
    fn conv_identity_kernel_and_bias_only() {
        let x = random(&[2, 1, 4, 5], 1);
        let k = Tensor::full(&[1, 1, 1, 1], 1.0);
        let y = conv2d(&x, &k, &Tensor::zeros(&[1]), 1, Padding::Valid).unwrap();
        assert_eq!(y, x);

        let z = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        let k = random(&[3, 2, 3, 3], 2);
        let b = t(&[3], &[0.5, -1.0, 2.0]);
        let y = conv2d(&z, &k, &b, 1, Padding::Same).unwrap();
        for (i, plane) in y.data().chunks(16).enumerate() {
            assert!(plane.iter().all(|&v| v == b.data()[i]));
        }
    }

    #[test]
    fn conv_matches_loop_oracle() {
        let cases = [
            (Padding::Valid, 1, (7, 6)),
            (Padding::Valid, 2, (7, 6)),
            (Padding::Same, 1, (7, 6)),
            (Padding::Same, 2, (7, 6)),
        ];
        for (seed, &(padding, stride, (h, w))) in cases.iter().enumerate() {
            let x = random(&[2, 3, h, w], seed as u64);
            let k = random(&[4, 3, 3, 3], 10 + seed as u64);
            let b = random(&[4], 20 + seed as u64);
            let g = ConvGeometry::new([3, h, w], 4, 3, stride, padding).unwrap();
            let y = conv2d(&x, &k, &b, stride, padding).unwrap();
            let want = conv_oracle(
                &x,
                &k,
                &b,
                stride,
                (g.pad_top, g.pad_left),
                (g.out_height, g.out_width),
            );
            assert_eq!(y.shape(), &[2, 4, g.out_height, g.out_width]);
            for (a, b) in y.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn same_padding_splits_extra_to_bottom_right() {
        let g = ConvGeometry::new([1, 6, 6], 1, 2, 1, Padding::Same).unwrap();
        assert_eq!((g.out_height, g.pad_top), (6, 0));
        let g = ConvGeometry::new([1, 6, 6], 1, 3, 1, Padding::Same).unwrap();
        assert_eq!((g.out_height, g.pad_top), (6, 1));
        let g = ConvGeometry::new([1, 5, 5], 1, 3, 2, Padding::Same).unwrap();
        assert_eq!((g.out_height, g.pad_top), (3, 1));
    }

    #[test]
    fn conv_rejects_channel_mismatch_naming_shapes() {
        let x = Tensor::<f64>::zeros(&[1, 3, 5, 5]);
        let k = Tensor::<f64>::zeros(&[2, 4, 3, 3]);
        let err = conv2d(&x, &k, &Tensor::zeros(&[2]), 1, Padding::Valid).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 3, 5, 5]") && msg.contains("[2, 4, 3, 3]"), "{msg}");
        let small = Tensor::<f64>::zeros(&[1, 4, 2, 2]);
        assert!(conv2d(&small, &k, &Tensor::zeros(&[2]), 1, Padding::Valid).is_err());
    }

    #[test]
    fn conv_is_linear_without_bias() {
        let (a, b) = (0.7, -1.3);
        let x = random(&[2, 2, 6, 6], 3);
        let y = random(&[2, 2, 6, 6], 4);
        let k = random(&[3, 2, 3, 3], 5);
        let zero = Tensor::zeros(&[3]);
        let mix = Tensor::new(
            x.shape(),
            x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect(),
        )
        .unwrap();
        let lhs = conv2d(&mix, &k, &zero, 1, Padding::Same).unwrap();
        let cx = conv2d(&x, &k, &zero, 1, Padding::Same).unwrap();
        let cy = conv2d(&y, &k, &zero, 1, Padding::Same).unwrap();
        for ((l, p), q) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
            assert!((l - (a * p + b * q)).abs() < 1e-5);
        }
    }

    #[test]
    fn maxpool_examples() {
        let x = t(&[1, 1, 2, 2], &[1., 2., 3., 4.]);
        let (y, idx) = maxpool2d(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.]);
        assert_eq!(idx, vec![3]);

        let c = Tensor::full(&[1, 2, 4, 4], 0.25);
        let (y, idx) = maxpool2d(&c, 2, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.25));
        // ties resolve to the first element of each window
        assert_eq!(&idx[..4], &[0, 2, 8, 10]);

        assert!(maxpool2d(&Tensor::<f64>::zeros(&[1, 1, 1, 3]), 2, 2).is_err());
    }

    #[test]
    fn maxpool_matches_window_scan() {
        let x = random(&[1, 1, 6, 6], 9);
        let (y, _) = maxpool2d(&x, 2, 2).unwrap();
        let d = x.data();
        for oy in 0..3 {
            for ox in 0..3 {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(d[(2 * oy + dy) * 6 + 2 * ox + dx]);
                    }
                }
                assert_eq!(y.data()[oy * 3 + ox], m);
            }
        }
    }

    #[test]
    fn gap_examples() {
        let x = t(&[1, 1, 2, 2], &[1., 2., 3., 4.]);
        assert_eq!(global_avg_pool2d(&x).unwrap().data(), &[2.5]);
        let c = Tensor::full(&[2, 3, 5, 5], 0.3f64);
        let y = global_avg_pool2d(&c).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));

        let x = random(&[1, 3, 4, 4], 11);
        let y = global_avg_pool2d(&x).unwrap();
        for ch in 0..3 {
            let mut s = 0.0;
            for i in 0..16 {
                s += x.data()[ch * 16 + i];
            }
            assert!((y.data()[ch] - s / 16.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_examples() {
        let x = t(&[1, 2], &[1., 2.]);
        let eye = t(&[2, 2], &[1., 0., 0., 1.]);
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[2])).unwrap(), x);
        let y = dense(&x, &eye, &t(&[2], &[10., 20.])).unwrap();
        assert_eq!(y.data(), &[11., 22.]);

        let a = random(&[2, 3], 12);
        let w = random(&[3, 4], 13);
        let y = dense(&a, &w, &Tensor::zeros(&[4])).unwrap();
        for i in 0..2 {
            for j in 0..4 {
                let mut s = 0.0;
                for p in 0..3 {
                    s += a.data()[i * 3 + p] * w.data()[p * 4 + j];
                }
                assert!((y.data()[i * 4 + j] - s).abs() < 1e-12);
            }
        }
        assert!(dense(&a, &random(&[4, 4], 1), &Tensor::zeros(&[4])).is_err());
    }

    #[test]
    fn relu_softmax_examples() {
        assert_eq!(relu(&t(&[3], &[-1., 2., 0.])).data(), &[0., 2., 0.]);
        for row in [[0.0, 0.0, 0.0], [1000.0, 1000.0, 1000.0]] {
            let p = softmax(&t(&[1, 3], &row)).unwrap();
            for &v in p.data() {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        assert!(softmax(&t(&[1, 2], &[f64::NAN, 0.0])).is_err());
    }

    #[test]
    fn concat_split_round_trip() {
        let a = random(&[3, 2], 1);
        let b = random(&[3, 5], 2);
        let (j, off) = concat(&[&a, &b]).unwrap();
        assert_eq!(off, vec![0, 2]);
        assert_eq!(&j.data()[..2], &a.data()[..2]);
        let parts = split(&j, &[2, 5]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
        assert!(concat::<f64>(&[]).is_err());
        assert!(concat(&[&a, &random(&[2, 2], 3)]).is_err());
    }

    #[test]
    fn flatten_keeps_order() {
        let x = random(&[2, 3, 2, 2], 4);
        let f = flatten(&x).unwrap();
        assert_eq!(f.shape(), &[2, 12]);
        assert_eq!(f.data(), x.data());
    }
}
