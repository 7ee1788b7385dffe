//! Emotional style descriptor: a 3-D CNN -> BLSTM -> attention -> FC emotion
//! classifier. The 64-dim layer feeding the final classifier doubles as the
//! utterance-level style vector.

pub mod train;

use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::MelSpectrogram;
use crate::nn::{bind, layers, Bound, Graph, NodeId, ParamSet};

/// 64-dim utterance-level emotional style vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionStyleFeature {
    pub values: Vec<f64>,
}

pub const STYLE_DIM: usize = 64;

impl EmotionStyleFeature {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != STYLE_DIM {
            return Err(Error::ShapeMismatch {
                context: "EmotionStyleFeature".into(),
                expected: format!("{STYLE_DIM} entries"),
                actual: format!("{}", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Internal("non-finite style feature entry".into()));
        }
        Ok(EmotionStyleFeature { values })
    }
}

/// One of the configured emotion categories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmotionLabel {
    pub index: usize,
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SerConfig {
    /// Output channels of the two gated conv3d blocks.
    pub conv_channels: Vec<usize>,
    /// Frequency pooling factor applied after each conv block.
    pub freq_pool: usize,
    pub lstm_hidden: usize,
    pub attention_dim: usize,
    /// Style width; fixed at 64 by the feature contract.
    pub style_dim: usize,
    pub n_emotions: usize,
    pub mel_bins: usize,
    pub min_frames: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for SerConfig {
    fn default() -> Self {
        SerConfig {
            conv_channels: vec![16, 32],
            freq_pool: 2,
            lstm_hidden: 64,
            attention_dim: 32,
            style_dim: STYLE_DIM,
            n_emotions: 3,
            mel_bins: 40,
            min_frames: 8,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl SerConfig {
    /// Desk-scale configuration for tests and the hermetic pipeline.
    pub fn tiny(n_emotions: usize, mel_bins: usize) -> Self {
        SerConfig {
            conv_channels: vec![4, 8],
            freq_pool: 2,
            lstm_hidden: 16,
            attention_dim: 8,
            n_emotions,
            mel_bins,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.style_dim != STYLE_DIM {
            return Err(Error::Config(format!(
                "style_dim must be {STYLE_DIM}, got {}",
                self.style_dim
            )));
        }
        if self.conv_channels.is_empty() {
            return Err(Error::Config("conv_channels must be non-empty".into()));
        }
        if self.n_emotions < 2 {
            return Err(Error::Config("need at least 2 emotion classes".into()));
        }
        let mut m = self.mel_bins;
        for _ in &self.conv_channels {
            if m % self.freq_pool != 0 {
                return Err(Error::Config(format!(
                    "mel_bins {} not divisible by freq_pool^{} blocks",
                    self.mel_bins,
                    self.conv_channels.len()
                )));
            }
            m /= self.freq_pool;
        }
        Ok(())
    }

    /// LSTM input width after the conv stack collapses (channels, depth, freq).
    fn lstm_input(&self) -> usize {
        let m = self.mel_bins / self.freq_pool.pow(self.conv_channels.len() as u32);
        self.conv_channels.last().unwrap() * 3 * m
    }
}

#[derive(Debug, Clone)]
pub struct SerModel {
    pub cfg: SerConfig,
    pub params: ParamSet,
}

impl SerModel {
    pub fn new(cfg: SerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut cin = 1usize;
        for (i, &cout) in cfg.conv_channels.iter().enumerate() {
            params.register(
                &format!("conv{i}.w"),
                crate::nn::init::conv3d_weight(&mut rng, 2 * cout, cin, 3, 3, 3),
            );
            params.register(&format!("conv{i}.b"), crate::nn::init::zeros(&[2 * cout]));
            params.register(&format!("bn{i}.gamma"), crate::nn::init::ones(&[2 * cout]));
            params.register(&format!("bn{i}.beta"), crate::nn::init::zeros(&[2 * cout]));
            params.register(&format!("rs.bn{i}.mean"), crate::nn::init::zeros(&[2 * cout]));
            params.register(&format!("rs.bn{i}.var"), crate::nn::init::ones(&[2 * cout]));
            cin = cout;
        }
        layers::register_lstm(&mut params, &mut rng, "lstm", cfg.lstm_input(), cfg.lstm_hidden);
        layers::register_attention(&mut params, &mut rng, "attn", 2 * cfg.lstm_hidden, cfg.attention_dim);
        layers::register_linear(&mut params, &mut rng, "style", 2 * cfg.lstm_hidden, cfg.style_dim);
        layers::register_linear(&mut params, &mut rng, "cls", cfg.style_dim, cfg.n_emotions);
        Ok(SerModel { cfg, params })
    }

    pub fn to_config_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.cfg).unwrap()
    }
}

pub struct SerForwardOut {
    pub style: NodeId,
    pub log_probs: NodeId,
    /// Per-step BLSTM outputs, for oracle-style pooling checks.
    pub time_features: Vec<NodeId>,
    pub attention: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Build the SER graph on a `[B, 1, 3, M, T]` input node.
pub fn build_forward(
    g: &mut Graph,
    cfg: &SerConfig,
    params: &ParamSet,
    bound: &Bound,
    x: NodeId,
    mode: Mode,
) -> SerForwardOut {
    let mut h = x;
    for i in 0..cfg.conv_channels.len() {
        let w = bound.node(&format!("conv{i}.w"));
        let b = bound.node(&format!("conv{i}.b"));
        let conv = g.conv3d(h, w, [1, 1, 1]);
        let conv = layers::bias_add(g, conv, b, 1);
        let gamma = bound.node(&format!("bn{i}.gamma"));
        let beta = bound.node(&format!("bn{i}.beta"));
        let bn = match mode {
            Mode::Train => g.batch_norm_train(conv, gamma, beta, 1, cfg.bn_eps, &format!("bn{i}")),
            Mode::Eval => {
                let mean: Vec<f64> = params.get(&format!("rs.bn{i}.mean")).iter().copied().collect();
                let var: Vec<f64> = params.get(&format!("rs.bn{i}.var")).iter().copied().collect();
                g.batch_norm_eval(conv, gamma, beta, 1, cfg.bn_eps, &mean, &var)
            }
        };
        let gated = layers::glu(g, bn, 1);
        h = g.max_pool_axis(gated, 3, cfg.freq_pool);
    }
    // collapse (channels, depth, freq) per time step
    let shape = g.value(h).shape().to_vec(); // [B, C, 3, M', T]
    let (b, c, d, m, t_len) = (shape[0], shape[1], shape[2], shape[3], shape[4]);
    let feat = c * d * m;
    let mut steps = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let s = g.slice(h, 4, t, t + 1); // [B, C, 3, M', 1]
        let s = g.reshape(s, &[b, feat]);
        steps.push(s);
    }
    let hs = layers::lstm_bidirectional(g, bound, "lstm", &steps, cfg.lstm_hidden);
    let (pooled, attention) = layers::additive_attention(g, bound, "attn", &hs);
    let style_lin = layers::linear_by_name(g, bound, "style", pooled);
    let style = g.tanh(style_lin);
    let logits = layers::linear_by_name(g, bound, "cls", style);
    let log_probs = g.log_softmax(logits, 1);
    SerForwardOut {
        style,
        log_probs,
        time_features: hs,
        attention,
    }
}

/// Stack mel tensors (already cropped to equal length) into `[B, 1, 3, M, T]`.
pub fn mel_batch(mels: &[&MelSpectrogram]) -> Result<ArrayD<f64>> {
    let b = mels.len();
    let m = mels[0].mel_bins();
    let t = mels[0].n_frames();
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[b, 1, 3, m, t]));
    for (i, mel) in mels.iter().enumerate() {
        if mel.mel_bins() != m || mel.n_frames() != t {
            return Err(Error::ShapeMismatch {
                context: "mel_batch".into(),
                expected: format!("[3, {m}, {t}]"),
                actual: format!("[3, {}, {}]", mel.mel_bins(), mel.n_frames()),
            });
        }
        for p in 0..3 {
            for mm in 0..m {
                for tt in 0..t {
                    out[[i, 0, p, mm, tt]] = mel.planes[[p, mm, tt]];
                }
            }
        }
    }
    Ok(out)
}

fn check_input(model: &SerModel, mel: &MelSpectrogram) -> Result<()> {
    if mel.planes.shape()[0] != 3 {
        return Err(Error::ShapeMismatch {
            context: "ser input".into(),
            expected: "3 planes".into(),
            actual: format!("{}", mel.planes.shape()[0]),
        });
    }
    if mel.mel_bins() != model.cfg.mel_bins {
        return Err(Error::ShapeMismatch {
            context: "ser input".into(),
            expected: format!("{} mel bins", model.cfg.mel_bins),
            actual: format!("{}", mel.mel_bins()),
        });
    }
    if mel.n_frames() < model.cfg.min_frames {
        return Err(Error::Validation(format!(
            "utterance has {} mel frames; the emotion descriptor needs at least {}",
            mel.n_frames(),
            model.cfg.min_frames
        )));
    }
    Ok(())
}

/// Deterministic single-utterance inference: the style vector and the
/// emotion posterior (probabilities sum to 1).
pub fn ser_forward(
    model: &SerModel,
    mel: &MelSpectrogram,
) -> Result<(EmotionStyleFeature, Vec<f64>)> {
    check_input(model, mel)?;
    let mut g = Graph::new();
    let bound = bind(&mut g, &model.params, false);
    let x = g.leaf(mel_batch(&[mel])?);
    let out = build_forward(&mut g, &model.cfg, &model.params, &bound, x, Mode::Eval);
    let style: Vec<f64> = g.value(out.style).iter().copied().collect();
    let probs: Vec<f64> = g.value(out.log_probs).iter().map(|&l| l.exp()).collect();
    Ok((EmotionStyleFeature::new(style)?, probs))
}

/// The style vector alone (`ser_forward` minus the posterior).
pub fn extract_style(model: &SerModel, mel: &MelSpectrogram) -> Result<EmotionStyleFeature> {
    Ok(ser_forward(model, mel)?.0)
}

/// Element-wise mean style over a non-empty reference list.
pub fn reference_style(
    model: &SerModel,
    mels: &[MelSpectrogram],
) -> Result<EmotionStyleFeature> {
    if mels.is_empty() {
        return Err(Error::Validation(
            "reference style of an empty utterance list is undefined".into(),
        ));
    }
    let mut acc = vec![0.0; STYLE_DIM];
    for mel in mels {
        let style = extract_style(model, mel)?;
        for (a, v) in acc.iter_mut().zip(&style.values) {
            *a += v;
        }
    }
    for a in acc.iter_mut() {
        *a /= mels.len() as f64;
    }
    EmotionStyleFeature::new(acc)
}

/// Mean of already-extracted style vectors (for cache-backed callers).
pub fn mean_style(styles: &[EmotionStyleFeature]) -> Result<EmotionStyleFeature> {
    if styles.is_empty() {
        return Err(Error::Validation(
            "mean of an empty style list is undefined".into(),
        ));
    }
    let mut acc = vec![0.0; STYLE_DIM];
    for s in styles {
        for (a, v) in acc.iter_mut().zip(&s.values) {
            *a += v;
        }
    }
    for a in acc.iter_mut() {
        *a /= styles.len() as f64;
    }
    EmotionStyleFeature::new(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{compute_mel_spectrogram, MelConfig};

    fn test_mel_config() -> MelConfig {
        MelConfig {
            mel_bins: 20,
            ..Default::default()
        }
    }

    fn some_mel(seed: u64) -> MelSpectrogram {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wave: Vec<f64> = (0..8000)
            .map(|i| (i as f64 * 0.1).sin() * 0.3 + rng.random_range(-0.05..0.05))
            .collect();
        compute_mel_spectrogram(&wave, 16000, &test_mel_config()).unwrap()
    }

    fn tiny_model() -> SerModel {
        SerModel::new(SerConfig::tiny(3, 20), 99).unwrap()
    }

    #[test]
    fn probabilities_sum_to_one() {
        let model = tiny_model();
        let (_, probs) = ser_forward(&model, &some_mel(1)).unwrap();
        assert_eq!(probs.len(), 3);
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6, "sum {sum}");
    }

    #[test]
    fn inference_is_deterministic() {
        let model = tiny_model();
        let mel = some_mel(2);
        let (e1, p1) = ser_forward(&model, &mel).unwrap();
        let (e2, p2) = ser_forward(&model, &mel).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(p1, p2);
        assert_eq!(e1.values.len(), STYLE_DIM);
        assert!(e1.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn too_short_input_names_minimum() {
        let model = tiny_model();
        let mut mel = some_mel(3);
        mel.planes = mel
            .planes
            .slice_axis(ndarray::Axis(2), ndarray::Slice::from(0..4))
            .to_owned();
        let err = ser_forward(&model, &mel).unwrap_err();
        assert!(err.to_string().contains("at least 8"), "{err}");
    }

    #[test]
    fn uniform_attention_equals_mean_pooling_oracle() {
        let mut model = tiny_model();
        // zero the attention scorer: softmax of constant scores is uniform
        model.params.get_mut("attn.v").fill(0.0);
        model.params.get_mut("attn.w").fill(0.0);
        model.params.get_mut("attn.b").fill(0.0);
        let mel = some_mel(4);

        let mut g = Graph::new();
        let bound = bind(&mut g, &model.params, false);
        let x = g.leaf(mel_batch(&[&mel]).unwrap());
        let out = build_forward(&mut g, &model.cfg, &model.params, &bound, x, Mode::Eval);

        // brute-force pooling bypass: mean of per-step recurrent outputs,
        // projected by the style layer
        let t_len = out.time_features.len();
        let h_dim = g.value(out.time_features[0]).shape()[1];
        let mut mean_h = vec![0.0; h_dim];
        for &hid in &out.time_features {
            for (j, v) in g.value(hid).iter().enumerate() {
                mean_h[j] += v / t_len as f64;
            }
        }
        let w = model.params.get("style.w");
        let b = model.params.get("style.b");
        let mut expect = vec![0.0; STYLE_DIM];
        for o in 0..STYLE_DIM {
            let mut acc = b[[o]];
            for (i, &h) in mean_h.iter().enumerate() {
                acc += h * w[[i, o]];
            }
            expect[o] = acc.tanh();
        }
        let got: Vec<f64> = g.value(out.style).iter().copied().collect();
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        // attention weights really were uniform
        let alpha = g.value(out.attention);
        for &a in alpha.iter() {
            assert!((a - 1.0 / t_len as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_style_is_elementwise_mean() {
        let model = tiny_model();
        let mels: Vec<MelSpectrogram> = (0..3).map(|i| some_mel(10 + i)).collect();
        let single = reference_style(&model, &mels[..1]).unwrap();
        let direct = extract_style(&model, &mels[0]).unwrap();
        assert_eq!(single, direct);

        let two = reference_style(&model, &mels[..2]).unwrap();
        let (u, v) = (
            extract_style(&model, &mels[0]).unwrap(),
            extract_style(&model, &mels[1]).unwrap(),
        );
        for i in 0..STYLE_DIM {
            assert!((two.values[i] - 0.5 * (u.values[i] + v.values[i])).abs() < 1e-12);
        }

        // brute-force accumulation oracle over the full list
        let all = reference_style(&model, &mels).unwrap();
        let styles: Vec<EmotionStyleFeature> = mels
            .iter()
            .map(|m| extract_style(&model, m).unwrap())
            .collect();
        for i in 0..STYLE_DIM {
            let oracle: f64 =
                styles.iter().map(|s| s.values[i]).sum::<f64>() / styles.len() as f64;
            assert!((all.values[i] - oracle).abs() < 1e-6);
        }

        assert!(reference_style(&model, &[]).is_err());
    }

    #[test]
    fn union_mean_is_weighted_mean_of_part_means() {
        let model = tiny_model();
        let mels: Vec<MelSpectrogram> = (0..5).map(|i| some_mel(20 + i)).collect();
        let l1 = reference_style(&model, &mels[..2]).unwrap();
        let l2 = reference_style(&model, &mels[2..]).unwrap();
        let union = reference_style(&model, &mels).unwrap();
        for i in 0..STYLE_DIM {
            let weighted = (2.0 * l1.values[i] + 3.0 * l2.values[i]) / 5.0;
            assert!((union.values[i] - weighted).abs() < 1e-6);
        }
    }
}
