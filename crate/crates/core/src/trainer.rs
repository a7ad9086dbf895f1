//! On-line augmented mini-batch training.
//!
//! Every iteration draws `batch_size` indices uniformly with replacement from
//! the training pool and a fresh `Θ` for every slot, deforms, computes the
//! batch-mean gradient of the cross-entropy and takes one momentum step. The
//! virtual batch is then dropped.
//!
//! Randomness is keyed by position: slot indices for iteration `t` come from
//! stream `(TRAIN_INDEX, t)` and the `Θ` of slot `j` from
//! `(TRAIN_THETA, t, j)`. Gradients are computed in fixed chunks of
//! [`CHUNK`] slots and summed in slot order, so the result does not depend on
//! the number of worker threads.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::Image;
use crate::dataio::{split_validation, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{Gradients, LayerSpec, Network};
use crate::optim::{sgd_momentum_step, OptimConfig, OptimState};
use crate::rng::{domain, RngStream};
use crate::sampler::{self, DeformParams, DeformSpec};

/// Slots per gradient work unit.
pub const CHUNK: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optim: OptimConfig,
    pub epochs: u64,
    /// `None` trains on the originals only.
    #[serde(default)]
    pub deform: Option<DeformSpec>,
    pub seed: u64,
    /// Draw `Θ` from the PDFs of each slot's class. A spec with a single
    /// shared set is replicated per class.
    #[serde(default)]
    pub class_distinctive: bool,
    /// Fraction of the training set held out (as originals) for validation.
    #[serde(default)]
    pub validation_fraction: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        if let Some(d) = &self.deform {
            d.validate()?;
        }
        if self.class_distinctive && self.deform.is_none() {
            return Err(Error::invalid("class-distinctive training needs a deformation spec"));
        }
        Ok(())
    }

    /// The spec actually sampled from, after class replication.
    pub fn effective_deform(&self, classes: usize) -> Option<DeformSpec> {
        self.deform.as_ref().map(|d| {
            if self.class_distinctive && !d.is_class_distinctive() {
                d.replicate_per_class(classes)
            } else {
                d.clone()
            }
        })
    }
}

/// Iterations per epoch: `ceil(N / batch_size)`.
pub fn iterations_per_epoch(n: usize, batch_size: usize) -> u64 {
    n.div_ceil(batch_size) as u64
}

/// Network initialised from the seed's init stream.
pub fn init_network(input_shape: [usize; 3], layers: Vec<LayerSpec>, seed: u64) -> Result<Network> {
    Network::new(input_shape, layers, &mut RngStream::derive(seed, domain::INIT, &[]))
}

#[derive(Clone, Debug)]
pub struct Minibatch {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
    /// Per-slot deformation parameters; `None` when training without
    /// augmentation.
    pub params: Vec<Option<DeformParams>>,
}

/// Assembles the virtual batch for `iteration`.
pub fn build_minibatch(
    ds: &LabeledDataset,
    deform: Option<&DeformSpec>,
    batch_size: usize,
    seed: u64,
    iteration: u64,
    class_distinctive: bool,
) -> Result<Minibatch> {
    if ds.is_empty() {
        return Err(Error::invalid("cannot build a minibatch from an empty dataset"));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    let mut idx_rng = RngStream::derive(seed, domain::TRAIN_INDEX, &[iteration]);
    let indices: Vec<usize> = (0..batch_size).map(|_| idx_rng.random_range(0..ds.len())).collect();
    let slots: Vec<(Image, Option<DeformParams>)> = indices
        .par_iter()
        .enumerate()
        .map(|(slot, &i)| {
            let img = ds.image(i);
            match deform {
                None => Ok((img.clone(), None)),
                Some(spec) => {
                    let mut rng = RngStream::derive(seed, domain::TRAIN_THETA, &[iteration, slot as u64]);
                    let class = class_distinctive.then(|| ds.label(i));
                    let theta = sampler::sample_theta(spec, &mut rng, class)?;
                    let out = sampler::apply(spec, &theta, class, img)?;
                    Ok((out, Some(theta)))
                }
            }
        })
        .collect::<Result<_>>()?;
    let (images, params) = slots.into_iter().unzip();
    Ok(Minibatch {
        labels: indices.iter().map(|&i| ds.label(i)).collect(),
        images,
        indices,
        params,
    })
}

/// Sum of per-sample gradients and losses over a batch, in slot order.
fn batch_gradient(net: &Network, batch: &Minibatch) -> Result<(Gradients, f64)> {
    let parts: Vec<(Gradients, f64)> = batch
        .images
        .par_chunks(CHUNK)
        .zip(batch.labels.par_chunks(CHUNK))
        .map(|(imgs, labels)| {
            let mut g = net.zero_gradients();
            let mut loss = 0.0;
            for (img, &label) in imgs.iter().zip(labels) {
                let cache = net.forward_cache(&img.to_tensor())?;
                loss += -cache.log_probs()[label];
                net.backward_accumulate(&cache, label, &mut g)?;
            }
            Ok((g, loss))
        })
        .collect::<Result<_>>()?;
    let mut it = parts.into_iter();
    let (mut total, mut loss) = it.next().expect("batch has at least one chunk");
    for (g, l) in it {
        total.add(&g)?;
        loss += l;
    }
    Ok((total, loss))
}

/// Top-1 error of the plain forward pass on `ds`.
pub fn plain_error(net: &Network, ds: &LabeledDataset) -> Result<f64> {
    if ds.is_empty() {
        return Ok(0.0);
    }
    let wrong: usize = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let out = net.forward(&ds.image(i).to_tensor())?;
            Ok(usize::from(out.probabilities.argmax() != ds.label(i)))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(wrong as f64 / ds.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based count of completed epochs.
    pub epoch: u64,
    /// Mean cross-entropy over the epoch's virtual samples.
    pub loss: f64,
    pub val_error: Option<f64>,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,loss,val_error,lr";

    pub fn csv_row(&self) -> String {
        let val = self.val_error.map(|v| format!("{v:.6}")).unwrap_or_default();
        format!("{},{:.9},{},{:.9e}", self.epoch, self.loss, val, self.lr)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub wall_clock_secs: f64,
    pub iterations: u64,
    /// Digest of the saved checkpoint; filled in by whoever persists it.
    pub checkpoint_digest: Option<String>,
}

impl TrainReport {
    /// CSV of the per-epoch records (wall-clock is deliberately excluded).
    pub fn to_csv(&self) -> String {
        let mut s = String::from(EpochRecord::CSV_HEADER);
        s.push('\n');
        for r in &self.epochs {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }
}

pub fn train(ds: &LabeledDataset, net: Network, cfg: &TrainConfig) -> Result<(Network, TrainReport)> {
    train_with(ds, net, cfg, |_| {})
}

/// [`train`] with a callback invoked after every completed epoch.
pub fn train_with(
    ds: &LabeledDataset,
    mut net: Network,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Network, TrainReport)> {
    cfg.validate()?;
    let start = Instant::now();
    if ds.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let [c, h, w] = net.input_shape();
    let first = ds.image(0);
    if [first.channels(), first.height(), first.width()] != [c, h, w] {
        return Err(Error::shape(
            "train",
            format!(
                "network input {:?} vs dataset images {:?}",
                net.input_shape(),
                [first.channels(), first.height(), first.width()]
            ),
        ));
    }
    if ds.class_count() > net.class_count() {
        return Err(Error::shape(
            "train",
            format!("{} dataset classes, network has {}", ds.class_count(), net.class_count()),
        ));
    }

    let (pool, validation) = match cfg.validation_fraction {
        Some(f) => {
            let split = split_validation(ds.len(), f, &mut RngStream::derive(cfg.seed, domain::SPLIT, &[]))?;
            let (t, v) = split.parts(ds);
            (t, Some(v))
        }
        None => (ds.clone(), None),
    };
    let deform = cfg.effective_deform(ds.class_count());
    let batch_size = cfg.optim.batch_size;
    let per_epoch = iterations_per_epoch(pool.len(), batch_size);
    let mask = net.weight_mask();
    let mut state = OptimState::new(net.params(), &cfg.optim);
    let mut records = Vec::with_capacity(cfg.epochs as usize);
    let make = |t: u64| build_minibatch(&pool, deform.as_ref(), batch_size, cfg.seed, t, cfg.class_distinctive);

    let total = per_epoch * cfg.epochs;
    let mut next = if total > 0 { Some(make(0)?) } else { None };
    let mut iteration = 0u64;
    for e in 0..cfg.epochs {
        let lr = state.current_lr();
        let mut epoch_loss = 0.0;
        for _ in 0..per_epoch {
            let batch = next.take().expect("pipeline holds the current batch");
            let (grad, following) = rayon::join(
                || batch_gradient(&net, &batch),
                || (iteration + 1 < total).then(|| make(iteration + 1)).transpose(),
            );
            let (mut grad, loss_sum) = grad?;
            next = following?;
            let loss = loss_sum / batch_size as f64;
            if !loss.is_finite() || grad.params.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { iteration, lr, loss });
            }
            grad.scale(1.0 / batch_size as f32);
            sgd_momentum_step(net.params_mut(), &grad.params, &mask, &mut state, &cfg.optim)?;
            epoch_loss += loss;
            iteration += 1;
        }
        let val_error = match &validation {
            Some(v) => Some(plain_error(&net, v)?),
            None => None,
        };
        let rec = EpochRecord {
            epoch: e + 1,
            loss: epoch_loss / per_epoch as f64,
            val_error,
            lr,
        };
        on_epoch(&rec);
        records.push(rec);
        state.advance_epoch(&cfg.optim);
    }
    Ok((
        net,
        TrainReport {
            epochs: records,
            wall_clock_secs: start.elapsed().as_secs_f64(),
            iterations: iteration,
            checkpoint_digest: None,
        },
    ))
}
