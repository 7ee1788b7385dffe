//! SER training: cross-entropy on emotion labels over random fixed-length
//! crops, with an optional fine-tune initializer and early stopping.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_forward, mel_batch, Mode, SerConfig, SerModel};
use crate::error::{Error, Result};
use crate::features::MelSpectrogram;
use crate::nn::{bind, Adam, AdamConfig, Graph, ParamSet};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SerTrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub crop_frames: usize,
    /// Steps without a new best loss before stopping; 0 disables.
    pub early_stop_patience: usize,
    /// Derived from the run-level seed, not part of the config document.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SerTrainConfig {
    fn default() -> Self {
        SerTrainConfig {
            batch_size: 8,
            steps: 1500,
            learning_rate: 1e-3,
            crop_frames: 96,
            early_stop_patience: 0,
            seed: 17,
        }
    }
}

#[derive(Debug)]
pub struct TrainedSer {
    pub model: SerModel,
    pub losses: Vec<f64>,
}

/// Crop (or edge-pad) a mel tensor to exactly `frames`, offset chosen by the
/// caller.
fn crop_mel(mel: &MelSpectrogram, frames: usize, offset: usize) -> MelSpectrogram {
    let t = mel.n_frames();
    let m = mel.mel_bins();
    let mut out = ndarray::Array3::<f64>::zeros((3, m, frames));
    for p in 0..3 {
        for mm in 0..m {
            for tt in 0..frames {
                let src = (offset + tt).min(t - 1);
                out[[p, mm, tt]] = mel.planes[[p, mm, src]];
            }
        }
    }
    MelSpectrogram { planes: out }
}

fn one_hot(labels: &[usize], k: usize) -> ArrayD<f64> {
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[labels.len(), k]));
    for (i, &l) in labels.iter().enumerate() {
        out[[i, l]] = 1.0;
    }
    out
}

fn apply_bn_updates(params: &mut ParamSet, updates: Vec<crate::nn::StatUpdate>, momentum: f64) {
    for u in updates {
        let mean_name = format!("rs.{}.mean", u.tag);
        let var_name = format!("rs.{}.var", u.tag);
        let m = params.get_mut(&mean_name);
        m.zip_mut_with(&u.mean, |old, &new| *old = (1.0 - momentum) * *old + momentum * new);
        let v = params.get_mut(&var_name);
        v.zip_mut_with(&u.var, |old, &new| *old = (1.0 - momentum) * *old + momentum * new);
    }
}

/// Train (or fine-tune, when `init` is given) the emotion descriptor.
/// Dataset items are (mel, emotion index). Requires at least two classes.
pub fn train_ser(
    dataset: &[(MelSpectrogram, usize)],
    cfg: &SerConfig,
    tcfg: &SerTrainConfig,
    init: Option<SerModel>,
) -> Result<TrainedSer> {
    if dataset.is_empty() {
        return Err(Error::Validation("empty training set".into()));
    }
    let first = dataset[0].1;
    if dataset.iter().all(|(_, l)| *l == first) {
        return Err(Error::Validation(
            "single-class corpus: emotion training needs at least two classes".into(),
        ));
    }
    if let Some(b) = dataset.iter().find(|(_, l)| *l >= cfg.n_emotions) {
        return Err(Error::Validation(format!(
            "label {} out of range for {} emotions",
            b.1, cfg.n_emotions
        )));
    }

    let mut model = match init {
        Some(m) => {
            if m.cfg != *cfg {
                return Err(Error::Config(
                    "fine-tune initializer was built with a different architecture".into(),
                ));
            }
            m
        }
        None => SerModel::new(cfg.clone(), tcfg.seed)?,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed ^ 0x5e7);
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: tcfg.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        },
        &model.params,
    );

    let mut losses = Vec::with_capacity(tcfg.steps);
    let mut best = f64::INFINITY;
    let mut best_step = 0usize;
    for step in 0..tcfg.steps {
        let mut crops = Vec::with_capacity(tcfg.batch_size);
        let mut labels = Vec::with_capacity(tcfg.batch_size);
        for _ in 0..tcfg.batch_size {
            let idx = rng.random_range(0..dataset.len());
            let (mel, label) = &dataset[idx];
            let t = mel.n_frames();
            let offset = if t > tcfg.crop_frames {
                rng.random_range(0..(t - tcfg.crop_frames))
            } else {
                0
            };
            crops.push(crop_mel(mel, tcfg.crop_frames, offset));
            labels.push(*label);
        }
        let refs: Vec<&MelSpectrogram> = crops.iter().collect();
        let batch = mel_batch(&refs)?;

        let mut g = Graph::new();
        let bound = bind(&mut g, &model.params, true);
        let x = g.leaf(batch);
        let out = build_forward(&mut g, &model.cfg, &model.params, &bound, x, Mode::Train);
        let targets = g.leaf(one_hot(&labels, cfg.n_emotions));
        let picked = g.mul(out.log_probs, targets);
        let per_item = g.sum_axis(picked, 1);
        let mean = g.mean_all(per_item);
        let loss = g.neg(mean);
        let loss_val = g.scalar(loss);
        if !loss_val.is_finite() {
            return Err(Error::Internal(format!(
                "non-finite SER loss at step {step}"
            )));
        }
        g.backward(loss);
        let grads = bound.grads(&g);
        adam.apply(&mut model.params, &grads);
        apply_bn_updates(&mut model.params, g.take_stat_updates(), cfg.bn_momentum);
        losses.push(loss_val);

        if loss_val < best {
            best = loss_val;
            best_step = step;
        }
        if tcfg.early_stop_patience > 0 && step - best_step >= tcfg.early_stop_patience {
            break;
        }
    }

    Ok(TrainedSer { model, losses })
}

/// Fraction of utterances whose argmax posterior matches the label.
pub fn accuracy(model: &SerModel, dataset: &[(MelSpectrogram, usize)]) -> Result<f64> {
    let mut hits = 0usize;
    for (mel, label) in dataset {
        let (_, probs) = super::ser_forward(model, mel)?;
        let pred = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if pred == *label {
            hits += 1;
        }
    }
    Ok(hits as f64 / dataset.len() as f64)
}
