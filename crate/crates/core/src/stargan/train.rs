//! The adversarial training loop: per step one update each for the
//! discriminator, the classifier, and the generator, in that order, on the
//! same batch. Deterministic under a fixed seed, resumable from checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses;
use super::nets::{
    BoundClassifier, BoundDiscriminator, BoundGenerator, Mode, ModelBundle,
};
use super::{GanConfig, LossWeights, SegmentBatch};
use crate::checkpoint::{self, Section};
use crate::error::{Error, Result};
use crate::nn::{bind, Adam, AdamConfig, Graph, ParamSet, StatUpdate};

/// Per-speaker z-normalization statistics over the training features.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NormStats {
    pub speaker_ids: Vec<String>,
    /// `[speaker][coefficient]`
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
}

const STD_FLOOR: f64 = 1e-6;

impl NormStats {
    /// Pool every frame of every training utterance per speaker.
    pub fn compute(speaker_ids: &[String], features: &[(usize, &Array2<f64>)]) -> Result<Self> {
        let n = speaker_ids.len();
        if n == 0 {
            return Err(Error::Validation("no speakers".into()));
        }
        let dim = features
            .first()
            .map(|(_, m)| m.shape()[0])
            .ok_or_else(|| Error::Validation("no training features".into()))?;
        let mut sum = vec![vec![0.0; dim]; n];
        let mut sumsq = vec![vec![0.0; dim]; n];
        let mut count = vec![0usize; n];
        for (spk, mceps) in features {
            for col in mceps.columns() {
                for (d, &v) in col.iter().enumerate() {
                    sum[*spk][d] += v;
                    sumsq[*spk][d] += v * v;
                }
            }
            count[*spk] += mceps.shape()[1];
        }
        let mut mean = vec![vec![0.0; dim]; n];
        let mut std = vec![vec![1.0; dim]; n];
        for s in 0..n {
            if count[s] == 0 {
                return Err(Error::Validation(format!(
                    "speaker {} has no training frames",
                    speaker_ids[s]
                )));
            }
            let c = count[s] as f64;
            for d in 0..dim {
                mean[s][d] = sum[s][d] / c;
                let var = (sumsq[s][d] / c - mean[s][d] * mean[s][d]).max(0.0);
                std[s][d] = var.sqrt().max(STD_FLOOR);
            }
        }
        Ok(NormStats {
            speaker_ids: speaker_ids.to_vec(),
            mean,
            std,
        })
    }

    pub fn normalize(&self, speaker: usize, mceps: &Array2<f64>) -> Array2<f64> {
        let mut out = mceps.clone();
        for mut col in out.columns_mut() {
            for (d, v) in col.iter_mut().enumerate() {
                *v = (*v - self.mean[speaker][d]) / self.std[speaker][d];
            }
        }
        out
    }

    pub fn denormalize(&self, speaker: usize, mceps: &Array2<f64>) -> Array2<f64> {
        let mut out = mceps.clone();
        for mut col in out.columns_mut() {
            for (d, v) in col.iter_mut().enumerate() {
                *v = *v * self.std[speaker][d] + self.mean[speaker][d];
            }
        }
        out
    }
}

/// One training utterance, features already normalized.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub utterance_id: String,
    pub speaker: usize,
    pub emotion: usize,
    pub mceps: Array2<f64>,
    pub style: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainData {
    pub items: Vec<TrainItem>,
    pub speaker_ids: Vec<String>,
    pub n_emotions: usize,
    pub norm: NormStats,
}

impl TrainData {
    pub fn n_speakers(&self) -> usize {
        self.speaker_ids.len()
    }

    fn cells(&self) -> Vec<((usize, usize), Vec<usize>)> {
        let mut map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (i, item) in self.items.iter().enumerate() {
            map.entry((item.speaker, item.emotion)).or_default().push(i);
        }
        map.into_iter().collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_speakers() < 2 {
            return Err(Error::Validation(
                "training needs at least two speakers".into(),
            ));
        }
        if self.items.is_empty() {
            return Err(Error::Validation("no training items".into()));
        }
        if self.cells().len() < 2 {
            return Err(Error::Validation(
                "need at least two (speaker, emotion) cells to sample targets".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub iterations: u64,
    pub batch_size: usize,
    pub crop_frames: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub weights: LossWeights,
    /// Derived from the run-level seed, not part of the config document.
    #[serde(skip)]
    pub seed: u64,
    /// Checkpoint cadence in steps; 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            iterations: 2000,
            batch_size: 4,
            crop_frames: 128,
            learning_rate: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            weights: LossWeights::default(),
            seed: 17,
            checkpoint_every: 500,
        }
    }
}

/// One appended log row per step.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub l_d: f64,
    pub l_c: f64,
    pub l_g: f64,
    pub adv_g: f64,
    pub dom_g: f64,
    pub cyc: f64,
    pub id: f64,
}

pub struct Trainer<'a> {
    pub data: &'a TrainData,
    pub bundle: ModelBundle,
    pub opts: TrainOptions,
    pub step: u64,
    adam_g: Adam,
    adam_d: Adam,
    adam_c: Adam,
    rng: ChaCha8Rng,
    cells: Vec<((usize, usize), Vec<usize>)>,
}

fn apply_stats(params: &mut ParamSet, updates: &[StatUpdate], momentum: f64) {
    for u in updates {
        let mean_name = format!("rs.{}.mean", u.tag);
        if !params.contains(&mean_name) {
            continue;
        }
        let var_name = format!("rs.{}.var", u.tag);
        params
            .get_mut(&mean_name)
            .zip_mut_with(&u.mean, |old, &new| {
                *old = (1.0 - momentum) * *old + momentum * new
            });
        params
            .get_mut(&var_name)
            .zip_mut_with(&u.var, |old, &new| {
                *old = (1.0 - momentum) * *old + momentum * new
            });
    }
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a TrainData, cfg: &GanConfig, opts: TrainOptions) -> Result<Self> {
        data.validate()?;
        if cfg.n_speakers != data.n_speakers() {
            return Err(Error::Config(format!(
                "config says {} speakers but the data has {}",
                cfg.n_speakers,
                data.n_speakers()
            )));
        }
        let bundle = ModelBundle::new(cfg, opts.seed)?;
        let adam_cfg = AdamConfig {
            learning_rate: opts.learning_rate,
            beta1: opts.adam_beta1,
            beta2: opts.adam_beta2,
            eps: 1e-8,
        };
        let adam_g = Adam::new(adam_cfg.clone(), &bundle.generator.params);
        let adam_d = Adam::new(adam_cfg.clone(), &bundle.discriminator.params);
        let adam_c = Adam::new(adam_cfg, &bundle.classifier.params);
        let rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7a21);
        let cells = data.cells();
        Ok(Trainer {
            data,
            bundle,
            opts,
            step: 0,
            adam_g,
            adam_d,
            adam_c,
            rng,
            cells,
        })
    }

    /// Sample one batch plus its conversion targets.
    pub fn sample_batch(&mut self) -> (SegmentBatch, ArrayD<f64>, ArrayD<f64>) {
        let b = self.opts.batch_size;
        let l = self.opts.crop_frames;
        let d = self.bundle.cfg.mcep_dim;
        let n = self.bundle.cfg.n_speakers;
        let mut mceps = ArrayD::<f64>::zeros(IxDyn(&[b, d, l]));
        let mut mask = ArrayD::<f64>::zeros(IxDyn(&[b, l]));
        let mut styles = ArrayD::<f64>::zeros(IxDyn(&[b, self.bundle.cfg.style_dim]));
        let mut labels = ArrayD::<f64>::zeros(IxDyn(&[b, n]));
        let mut tgt_styles = ArrayD::<f64>::zeros(IxDyn(&[b, self.bundle.cfg.style_dim]));
        let mut tgt_labels = ArrayD::<f64>::zeros(IxDyn(&[b, n]));
        let mut ids = Vec::with_capacity(b);

        for i in 0..b {
            let idx = self.rng.random_range(0..self.data.items.len());
            let item = &self.data.items[idx];
            let t = item.mceps.shape()[1];
            let offset = if t > l {
                self.rng.random_range(0..=(t - l))
            } else {
                0
            };
            for tt in 0..l {
                let src = offset + tt;
                if src < t {
                    for dd in 0..d {
                        mceps[[i, dd, tt]] = item.mceps[[dd, src]];
                    }
                    mask[[i, tt]] = 1.0;
                } else {
                    for dd in 0..d {
                        mceps[[i, dd, tt]] = item.mceps[[dd, t - 1]];
                    }
                }
            }
            for (j, &v) in item.style.iter().enumerate() {
                styles[[i, j]] = v;
            }
            labels[[i, item.speaker]] = 1.0;

            // uniform over the *other* cells, then uniform within the cell
            let own = self
                .cells
                .iter()
                .position(|(key, _)| *key == (item.speaker, item.emotion))
                .unwrap();
            let pick = {
                let raw = self.rng.random_range(0..self.cells.len() - 1);
                if raw >= own {
                    raw + 1
                } else {
                    raw
                }
            };
            let (tgt_key, tgt_items) = &self.cells[pick];
            let tgt_idx = tgt_items[self.rng.random_range(0..tgt_items.len())];
            let tgt_item = &self.data.items[tgt_idx];
            for (j, &v) in tgt_item.style.iter().enumerate() {
                tgt_styles[[i, j]] = v;
            }
            tgt_labels[[i, tgt_key.0]] = 1.0;
            ids.push(item.utterance_id.clone());
        }
        (
            SegmentBatch {
                mceps,
                styles,
                labels,
                mask,
                source_ids: ids,
            },
            tgt_styles,
            tgt_labels,
        )
    }

    /// D, C, G updates in order on one batch. The fake batch for the D update
    /// is materialized, severing any path back to the generator.
    pub fn train_step_with(
        &mut self,
        batch: &SegmentBatch,
        tgt_styles: &ArrayD<f64>,
        tgt_labels: &ArrayD<f64>,
    ) -> Result<losses::LossBreakdown> {
        batch.validate()?;
        let eps = self.bundle.cfg.epsilon;
        let momentum = self.bundle.cfg.bn_momentum;
        let finite = |v: f64, what: &str, ids: &[String]| -> Result<f64> {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Internal(format!(
                    "non-finite {what} at step {}; offending batch: {:?}",
                    self.step, ids
                )))
            }
        };

        // ---- discriminator ----
        let l_d = {
            let mut g = Graph::new();
            let bg = bind(&mut g, &self.bundle.generator.params, false);
            let bd = bind(&mut g, &self.bundle.discriminator.params, true);
            let x = g.leaf(batch.mceps.clone());
            let sy = g.leaf(tgt_styles.clone());
            let cy = g.leaf(tgt_labels.clone());
            let cx = g.leaf(batch.labels.clone());
            let fake = self
                .bundle
                .generator
                .forward(&mut g, &bg, x, sy, cy, Mode::Train);
            let fake_detached = g.leaf(g.value(fake).clone());
            let critic = BoundDiscriminator {
                net: &self.bundle.discriminator,
                bound: &bd,
                mode: Mode::Train,
            };
            let loss = losses::adv_loss_d(&mut g, &critic, x, cx, fake_detached, cy, eps);
            let v = finite(g.scalar(loss), "discriminator loss", &batch.source_ids)?;
            g.backward(loss);
            let grads = bd.grads(&g);
            self.adam_d
                .apply(&mut self.bundle.discriminator.params, &grads);
            let updates = g.take_stat_updates();
            apply_stats(&mut self.bundle.discriminator.params, &updates, momentum);
            v
        };

        // ---- classifier ----
        let l_c = {
            let mut g = Graph::new();
            let bc = bind(&mut g, &self.bundle.classifier.params, true);
            let x = g.leaf(batch.mceps.clone());
            let cx = g.leaf(batch.labels.clone());
            let critic = BoundClassifier {
                net: &self.bundle.classifier,
                bound: &bc,
                mode: Mode::Train,
            };
            let loss = losses::dom_loss(&mut g, &critic, x, cx);
            let v = finite(g.scalar(loss), "classifier loss", &batch.source_ids)?;
            g.backward(loss);
            let grads = bc.grads(&g);
            self.adam_c.apply(&mut self.bundle.classifier.params, &grads);
            let updates = g.take_stat_updates();
            apply_stats(&mut self.bundle.classifier.params, &updates, momentum);
            v
        };

        // ---- generator ----
        let (l_g, adv_g, dom_g, cyc, id) = {
            let mut g = Graph::new();
            let bg = bind(&mut g, &self.bundle.generator.params, true);
            let bd = bind(&mut g, &self.bundle.discriminator.params, false);
            let bc = bind(&mut g, &self.bundle.classifier.params, false);
            let x = g.leaf(batch.mceps.clone());
            let sx = g.leaf(batch.styles.clone());
            let cx = g.leaf(batch.labels.clone());
            let sy = g.leaf(tgt_styles.clone());
            let cy = g.leaf(tgt_labels.clone());
            let mask = g.leaf(batch.mask.clone());
            let mapper = BoundGenerator {
                net: &self.bundle.generator,
                bound: &bg,
                mode: Mode::Train,
            };
            let d_critic = BoundDiscriminator {
                net: &self.bundle.discriminator,
                bound: &bd,
                mode: Mode::Train,
            };
            let c_critic = BoundClassifier {
                net: &self.bundle.classifier,
                bound: &bc,
                mode: Mode::Train,
            };
            let (total, adv, dom, cyc, id) = losses::generator_objective(
                &mut g,
                &mapper,
                &d_critic,
                &c_critic,
                x,
                sx,
                cx,
                sy,
                cy,
                Some(mask),
                &self.opts.weights,
                eps,
            );
            let v = finite(g.scalar(total), "generator loss", &batch.source_ids)?;
            g.backward(total);
            let grads = bg.grads(&g);
            self.adam_g.apply(&mut self.bundle.generator.params, &grads);
            let updates = g.take_stat_updates();
            apply_stats(&mut self.bundle.generator.params, &updates, momentum);
            (
                v,
                g.scalar(adv),
                g.scalar(dom),
                g.scalar(cyc),
                g.scalar(id),
            )
        };

        self.step += 1;
        Ok(losses::LossBreakdown {
            l_g,
            l_d,
            l_c,
            adv_g,
            dom_g,
            cyc,
            id,
        })
    }

    pub fn train_step(&mut self) -> Result<losses::LossBreakdown> {
        let (batch, tgt_styles, tgt_labels) = self.sample_batch();
        self.train_step_with(&batch, &tgt_styles, &tgt_labels)
    }

    pub fn record(&self, step: u64, b: &losses::LossBreakdown) -> LossRecord {
        LossRecord {
            step,
            l_d: b.l_d,
            l_c: b.l_c,
            l_g: b.l_g,
            adv_g: b.adv_g,
            dom_g: b.dom_g,
            cyc: b.cyc,
            id: b.id,
        }
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let config = serde_json::to_value(&self.bundle.cfg).unwrap();
        let extra = serde_json::json!({
            "seed": self.opts.seed,
            "word_pos": self.rng.get_word_pos().to_string(),
            "norm": serde_json::to_value(&self.data.norm).unwrap(),
        });
        checkpoint::save_sections(
            path,
            "vc",
            &config,
            &[
                Section {
                    name: "gen",
                    params: &self.bundle.generator.params,
                    adam: Some(&self.adam_g),
                },
                Section {
                    name: "dis",
                    params: &self.bundle.discriminator.params,
                    adam: Some(&self.adam_d),
                },
                Section {
                    name: "cls",
                    params: &self.bundle.classifier.params,
                    adam: Some(&self.adam_c),
                },
            ],
            self.step,
            extra,
        )
    }

    /// Restore a trainer mid-run; the loss trajectory continues exactly as
    /// if the run had never stopped.
    pub fn resume(
        path: &Path,
        data: &'a TrainData,
        cfg: &GanConfig,
        opts: TrainOptions,
    ) -> Result<Self> {
        let (meta, stored_cfg, sections) = checkpoint::load_sections(path, "vc")?;
        let current = serde_json::to_value(cfg).unwrap();
        if checkpoint::config_hash(&current) != checkpoint::config_hash(&stored_cfg) {
            return Err(Error::Config(format!(
                "checkpoint {} was trained with a different architecture config",
                path.display()
            )));
        }
        let stored_seed = meta.extra["seed"].as_u64().unwrap_or(0);
        if stored_seed != opts.seed {
            return Err(Error::Config(format!(
                "checkpoint seed {stored_seed} differs from configured seed {}",
                opts.seed
            )));
        }
        let word_pos: u128 = meta.extra["word_pos"]
            .as_str()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(path, "missing rng position".to_string()))?;

        let mut trainer = Trainer::new(data, cfg, opts)?;
        for sec in sections {
            match sec.name.as_str() {
                "gen" => {
                    trainer.bundle.generator.params = sec.params;
                    trainer.adam_g = sec
                        .adam
                        .ok_or_else(|| Error::format(path, "missing gen optimizer".to_string()))?;
                }
                "dis" => {
                    trainer.bundle.discriminator.params = sec.params;
                    trainer.adam_d = sec
                        .adam
                        .ok_or_else(|| Error::format(path, "missing dis optimizer".to_string()))?;
                }
                "cls" => {
                    trainer.bundle.classifier.params = sec.params;
                    trainer.adam_c = sec
                        .adam
                        .ok_or_else(|| Error::format(path, "missing cls optimizer".to_string()))?;
                }
                other => {
                    return Err(Error::format(path, format!("unknown section {other}")));
                }
            }
        }
        trainer.step = meta.step;
        trainer.rng.set_word_pos(word_pos);
        Ok(trainer)
    }

    /// Run until `opts.iterations`, invoking `on_record` per step and writing
    /// periodic checkpoints when configured.
    pub fn run(
        &mut self,
        checkpoint_path: Option<&Path>,
        mut on_record: impl FnMut(&LossRecord),
    ) -> Result<Vec<LossRecord>> {
        let mut records = Vec::new();
        while self.step < self.opts.iterations {
            let b = self.train_step()?;
            let rec = self.record(self.step, &b);
            on_record(&rec);
            records.push(rec);
            if let Some(path) = checkpoint_path {
                if self.opts.checkpoint_every > 0 && self.step % self.opts.checkpoint_every == 0 {
                    self.save_checkpoint(path)?;
                }
            }
        }
        Ok(records)
    }
}

/// Train from scratch (or return the freshly initialized bundle when
/// `iterations` is zero).
pub fn train(
    data: &TrainData,
    cfg: &GanConfig,
    opts: TrainOptions,
    checkpoint_path: Option<&Path>,
) -> Result<(ModelBundle, Vec<LossRecord>)> {
    let mut trainer = Trainer::new(data, cfg, opts)?;
    let records = trainer.run(checkpoint_path, |_| {})?;
    Ok((trainer.bundle, records))
}

/// Convenience wrapper mirroring the operation contract: one full step on a
/// provided batch with externally sampled targets.
pub fn train_step(
    trainer: &mut Trainer<'_>,
    batch: &SegmentBatch,
    tgt_styles: &ArrayD<f64>,
    tgt_labels: &ArrayD<f64>,
) -> Result<losses::LossBreakdown> {
    trainer.train_step_with(batch, tgt_styles, tgt_labels)
}
