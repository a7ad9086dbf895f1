//! Layer kernels: valid convolution, non-overlapping max pooling, fully
//! connected, ReLU, softmax and cross-entropy, with their backward passes.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn dims3(t: &Tensor, context: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::shape(context, format!("expected [C,H,W], got {s:?}"))),
    }
}

/// Stride-1, unpadded 2-D convolution (cross-correlation).
///
/// `input` is `[C_in,H,W]`, `kernels` `[C_out,C_in,k,k]`, `bias` `[C_out]`;
/// the result is `[C_out,H-k+1,W-k+1]`.
pub fn conv2d_valid(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c_in, h, w) = dims3(input, "conv2d_valid input")?;
    let (c_out, k) = match *kernels.shape() {
        [o, c, k1, k2] if c == c_in && k1 == k2 => (o, k1),
        ref s => {
            return Err(Error::shape(
                "conv2d_valid kernels",
                format!("expected [C_out,{c_in},k,k], got {s:?}"),
            ))
        }
    };
    if bias.shape() != [c_out] {
        return Err(Error::shape(
            "conv2d_valid bias",
            format!("expected [{c_out}], got {:?}", bias.shape()),
        ));
    }
    if h < k || w < k {
        return Err(Error::shape(
            "conv2d_valid",
            format!("kernel {k} larger than input {h}x{w}"),
        ));
    }
    let (oh, ow) = (h - k + 1, w - k + 1);
    let x = input.data();
    let kd = kernels.data();
    let mut out = vec![0.0f32; c_out * oh * ow];
    for o in 0..c_out {
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        plane.fill(bias.data()[o]);
        for c in 0..c_in {
            let src = &x[c * h * w..(c + 1) * h * w];
            for dy in 0..k {
                for dx in 0..k {
                    let wgt = kd[((o * c_in + c) * k + dy) * k + dx];
                    for y in 0..oh {
                        let row = &src[(y + dy) * w + dx..(y + dy) * w + dx + ow];
                        let dst = &mut plane[y * ow..(y + 1) * ow];
                        for (d, s) in dst.iter_mut().zip(row) {
                            *d += wgt * s;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![c_out, oh, ow], out)
}

/// Gradients of a valid convolution given the gradient of its output.
///
/// Accumulates into `grad_kernels` and `grad_bias`; returns the input gradient
/// only when `want_input` is set.
pub fn conv2d_valid_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
    grad_kernels: &mut Tensor,
    grad_bias: &mut Tensor,
    want_input: bool,
) -> Result<Option<Tensor>> {
    let (c_in, h, w) = dims3(input, "conv2d_valid_backward input")?;
    let (c_out, oh, ow) = dims3(grad_out, "conv2d_valid_backward grad")?;
    let k = h + 1 - oh;
    if kernels.shape() != [c_out, c_in, k, k] || ow != w + 1 - k {
        return Err(Error::shape(
            "conv2d_valid_backward",
            format!(
                "kernels {:?} inconsistent with input {:?} and grad {:?}",
                kernels.shape(),
                input.shape(),
                grad_out.shape()
            ),
        ));
    }
    let x = input.data();
    let g = grad_out.data();
    let kd = kernels.data();
    let gk = grad_kernels.data_mut();
    let gb = grad_bias.data_mut();
    let mut gin = want_input.then(|| vec![0.0f32; c_in * h * w]);
    for o in 0..c_out {
        let gplane = &g[o * oh * ow..(o + 1) * oh * ow];
        gb[o] += gplane.iter().sum::<f32>();
        for c in 0..c_in {
            let src = &x[c * h * w..(c + 1) * h * w];
            for dy in 0..k {
                for dx in 0..k {
                    let kidx = ((o * c_in + c) * k + dy) * k + dx;
                    let mut acc = 0.0f32;
                    for y in 0..oh {
                        let row = &src[(y + dy) * w + dx..(y + dy) * w + dx + ow];
                        let grow = &gplane[y * ow..(y + 1) * ow];
                        acc += row.iter().zip(grow).map(|(a, b)| a * b).sum::<f32>();
                    }
                    gk[kidx] += acc;
                    if let Some(gin) = gin.as_mut() {
                        let wgt = kd[kidx];
                        let dst_plane = &mut gin[c * h * w..(c + 1) * h * w];
                        for y in 0..oh {
                            let dst = &mut dst_plane[(y + dy) * w + dx..(y + dy) * w + dx + ow];
                            let grow = &gplane[y * ow..(y + 1) * ow];
                            for (d, s) in dst.iter_mut().zip(grow) {
                                *d += wgt * s;
                            }
                        }
                    }
                }
            }
        }
    }
    gin.map(|d| Tensor::new(vec![c_in, h, w], d)).transpose()
}

/// Non-overlapping `g`×`g` max pooling.
///
/// Returns the pooled tensor and, per output cell, the flat input index of the
/// selected maximum (first in row-major scan on ties).
pub fn maxpool(input: &Tensor, g: usize) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = dims3(input, "maxpool input")?;
    if g == 0 || h % g != 0 || w % g != 0 {
        return Err(Error::shape(
            "maxpool",
            format!("grid {g} does not divide {h}x{w}"),
        ));
    }
    let (oh, ow) = (h / g, w / g);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = ch * h * w + oy * g * w + ox * g;
                for dy in 0..g {
                    for dx in 0..g {
                        let idx = ch * h * w + (oy * g + dy) * w + ox * g + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], out)?, arg))
}

pub fn maxpool_backward(grad_out: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if grad_out.len() != argmax.len() {
        return Err(Error::shape(
            "maxpool_backward",
            format!("{} grads vs {} indices", grad_out.len(), argmax.len()),
        ));
    }
    let mut gin = Tensor::zeros(input_shape);
    let d = gin.data_mut();
    for (&g, &i) in grad_out.data().iter().zip(argmax) {
        d[i] += g;
    }
    Ok(gin)
}

/// `weights · input + bias` with `weights` of shape `[m,n]`; `input` may have
/// any shape with `n` elements.
pub fn fully_connected(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = match *weights.shape() {
        [m, n] => (m, n),
        ref s => return Err(Error::shape("fully_connected weights", format!("{s:?}"))),
    };
    if input.len() != n || bias.shape() != [m] {
        return Err(Error::shape(
            "fully_connected",
            format!(
                "input of {} elements, weights {m}x{n}, bias {:?}",
                input.len(),
                bias.shape()
            ),
        ));
    }
    let x = input.data();
    let out = weights
        .data()
        .chunks_exact(n)
        .zip(bias.data())
        .map(|(row, b)| b + dot(row, x))
        .collect();
    Tensor::new(vec![m], out)
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    // Eight independent partial sums so the loop vectorizes.
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f32 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (xa, xb) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += xa[i] * xb[i];
        }
    }
    acc.iter().sum::<f32>() + tail
}

pub fn fully_connected_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    grad_weights: &mut Tensor,
    grad_bias: &mut Tensor,
    want_input: bool,
) -> Result<Option<Tensor>> {
    let (m, n) = match *weights.shape() {
        [m, n] => (m, n),
        ref s => return Err(Error::shape("fully_connected_backward", format!("{s:?}"))),
    };
    if grad_out.len() != m || input.len() != n {
        return Err(Error::shape(
            "fully_connected_backward",
            format!("grad {} / input {} vs weights {m}x{n}", grad_out.len(), input.len()),
        ));
    }
    let x = input.data();
    let g = grad_out.data();
    for (row, &gj) in grad_weights.data_mut().chunks_exact_mut(n).zip(g) {
        if gj != 0.0 {
            for (r, xi) in row.iter_mut().zip(x) {
                *r += gj * xi;
            }
        }
    }
    for (b, gj) in grad_bias.data_mut().iter_mut().zip(g) {
        *b += gj;
    }
    if !want_input {
        return Ok(None);
    }
    let mut gin = vec![0.0f32; n];
    for (row, &gj) in weights.data().chunks_exact(n).zip(g) {
        if gj != 0.0 {
            for (d, w) in gin.iter_mut().zip(row) {
                *d += gj * w;
            }
        }
    }
    Ok(Some(Tensor::new(input.shape().to_vec(), gin)?))
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Gradient through ReLU, using the layer output as the mask.
pub fn relu_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gi, &o) in g.data_mut().iter_mut().zip(output.data()) {
        if o <= 0.0 {
            *gi = 0.0;
        }
    }
    g
}

/// Max-shifted log-softmax with 64-bit reductions.
pub fn log_softmax_f64(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let lse = logits
        .iter()
        .map(|&v| (v as f64 - max).exp())
        .sum::<f64>()
        .ln();
    logits.iter().map(|&v| v as f64 - max - lse).collect()
}

pub fn log_softmax(logits: &Tensor) -> Tensor {
    let data = log_softmax_f64(logits.data())
        .into_iter()
        .map(|v| v as f32)
        .collect();
    Tensor::from_vec(data)
}

pub fn softmax(logits: &Tensor) -> Tensor {
    let data = log_softmax_f64(logits.data())
        .into_iter()
        .map(|v| v.exp() as f32)
        .collect();
    Tensor::from_vec(data)
}

/// `-log_probs[target]`.
pub fn cross_entropy(log_probs: &Tensor, target: usize) -> Result<f64> {
    let lp = log_probs.data();
    if target >= lp.len() {
        return Err(Error::invalid(format!(
            "target class {target} out of range for {} classes",
            lp.len()
        )));
    }
    Ok((-(lp[target] as f64)).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_output_size_matches_mnist_first_layer() {
        let input = Tensor::zeros(&[1, 28, 28]);
        let kernels = Tensor::zeros(&[20, 1, 5, 5]);
        let bias = Tensor::zeros(&[20]);
        let out = conv2d_valid(&input, &kernels, &bias).unwrap();
        assert_eq!(out.shape(), [20, 24, 24]);
    }

    #[test]
    fn conv_identity_kernel() {
        let data: Vec<f32> = (0..12).map(|i| i as f32 * 0.5 - 2.0).collect();
        let input = t(&[1, 3, 4], &data);
        let out = conv2d_valid(&input, &t(&[1, 1, 1, 1], &[1.0]), &t(&[1], &[0.0])).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let input = Tensor::zeros(&[2, 4, 4]);
        assert!(conv2d_valid(&input, &Tensor::zeros(&[1, 1, 3, 3]), &Tensor::zeros(&[1])).is_err());
        assert!(conv2d_valid(&input, &Tensor::zeros(&[1, 2, 5, 5]), &Tensor::zeros(&[1])).is_err());
        assert!(conv2d_valid(&input, &Tensor::zeros(&[1, 2, 3, 3]), &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn maxpool_sizes_and_argmax() {
        let (out, _) = maxpool(&Tensor::zeros(&[20, 24, 24]), 2).unwrap();
        assert_eq!(out.shape(), [20, 12, 12]);

        let (out, arg) = maxpool(&t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        assert_eq!(out.data(), [4.0]);
        assert_eq!(arg, [3]);
    }

    #[test]
    fn maxpool_constant_and_ties() {
        let input = t(&[1, 4, 4], &[0.7; 16]);
        let (out, arg) = maxpool(&input, 2).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.7));
        // first index in row-major scan of each block
        assert_eq!(arg, [0, 2, 8, 10]);
    }

    #[test]
    fn maxpool_rejects_indivisible() {
        assert!(maxpool(&Tensor::zeros(&[1, 5, 4]), 2).is_err());
    }

    #[test]
    fn fc_identity_and_mismatch() {
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let x = t(&[3], &[0.5, -1.0, 2.0]);
        assert_eq!(fully_connected(&x, &eye, &Tensor::zeros(&[3])).unwrap(), x);
        assert!(fully_connected(&t(&[2], &[1.0, 2.0]), &eye, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn log_softmax_uniform() {
        let out = log_softmax(&Tensor::from_vec(vec![0.3; 10]));
        for &v in out.data() {
            assert!((v as f64 - 0.1f64.ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn cross_entropy_cases() {
        let lp = Tensor::from_vec(vec![0.0, f32::MIN, f32::MIN]);
        assert_eq!(cross_entropy(&lp, 0).unwrap(), 0.0);
        let uni = log_softmax(&Tensor::from_vec(vec![0.0; 10]));
        assert!((cross_entropy(&uni, 4).unwrap() - 10f64.ln()).abs() < 1e-6);
        assert!(cross_entropy(&uni, 10).is_err());
    }
}
