#![allow(dead_code)]

use apac_core::augment::{Image, ValueDomain};
use apac_core::dataio::{LabeledDataset, Provenance};
use apac_core::nn::LayerSpec;
use apac_core::rng::RngStream;

pub fn layers(text: &str) -> Vec<LayerSpec> {
    text.split_whitespace().map(|s| s.parse().unwrap()).collect()
}

pub fn random_vec(n: usize, seed: u64, lo: f64, hi: f64) -> Vec<f32> {
    let mut rng = RngStream::new(seed, 0xfeed);
    (0..n).map(|_| (lo + (hi - lo) * rng.unit_f64()) as f32).collect()
}

pub fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
    Image::new(h, w, c, random_vec(h * w * c, seed, 0.0, 1.0), ValueDomain::UnitInterval).unwrap()
}

/// Synthetic 28×28 digits: class `c` lights a bar whose position depends on
/// `c`, plus noise.
pub fn bars(n: usize, seed: u64) -> LabeledDataset {
    let mut rng = RngStream::new(seed, 0xba5);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 10;
        let mut img = Image::zeros(28, 28, 1);
        for y in 0..28 {
            for x in 0..28 {
                let on = if label < 5 { x / 5 == label } else { y / 5 == label - 5 };
                let v = if on { 0.7 + 0.3 * rng.unit_f64() } else { 0.15 * rng.unit_f64() };
                img.set(0, y, x, v as f32);
            }
        }
        images.push(img);
        labels.push(label);
    }
    LabeledDataset::new(images, labels, 10, Provenance::Train).unwrap()
}

/// Straightforward f64 re-implementation of the forward pass, returning
/// log-probabilities. `params` follow the network layout `[w0, b0, w1, b1, ..]`.
pub fn reference_log_probs(input_shape: [usize; 3], layers: &[LayerSpec], params: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let mut shape = input_shape.to_vec();
    let mut a = x.to_vec();
    let mut slot = 0;
    for layer in layers {
        match *layer {
            LayerSpec::ConvValid { kernel: k, out_maps } => {
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let (oh, ow) = (h - k + 1, w - k + 1);
                let (wt, b) = (&params[slot], &params[slot + 1]);
                let mut out = vec![0.0; out_maps * oh * ow];
                for o in 0..out_maps {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let mut s = b[o];
                            for ci in 0..c {
                                for dy in 0..k {
                                    for dx in 0..k {
                                        s += wt[((o * c + ci) * k + dy) * k + dx] * a[(ci * h + y + dy) * w + xx + dx];
                                    }
                                }
                            }
                            out[(o * oh + y) * ow + xx] = s;
                        }
                    }
                }
                slot += 2;
                a = out;
                shape = vec![out_maps, oh, ow];
            }
            LayerSpec::MaxPool { grid: g } => {
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let (oh, ow) = (h / g, w / g);
                let mut out = vec![f64::NEG_INFINITY; c * oh * ow];
                for ci in 0..c {
                    for y in 0..h {
                        for xx in 0..w {
                            let o = &mut out[(ci * oh + y / g) * ow + xx / g];
                            *o = o.max(a[(ci * h + y) * w + xx]);
                        }
                    }
                }
                a = out;
                shape = vec![c, oh, ow];
            }
            LayerSpec::FullyConnected { out_units } => {
                let (wt, b) = (&params[slot], &params[slot + 1]);
                let n = a.len();
                a = (0..out_units)
                    .map(|o| b[o] + (0..n).map(|i| wt[o * n + i] * a[i]).sum::<f64>())
                    .collect();
                slot += 2;
                shape = vec![out_units];
            }
            LayerSpec::Relu => a.iter_mut().for_each(|v| *v = v.max(0.0)),
            LayerSpec::Softmax => {
                let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + a.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                a.iter_mut().for_each(|v| *v -= lse);
            }
        }
    }
    a
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}
