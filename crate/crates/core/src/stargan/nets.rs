//! The three networks and the traits that let tests swap in stubs.

use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::GanConfig;
use crate::error::{Error, Result};
use crate::nn::graph::conv1d_out_len;
use crate::nn::{bind, init, layers, Bound, Graph, NodeId, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Anything that maps `(x, style, label) -> x'` on the graph. Implemented by
/// the bound generator and by test stubs.
pub trait SpectralMapper {
    fn map(&self, g: &mut Graph, x: NodeId, style: NodeId, label: NodeId) -> NodeId;
}

/// Conditional realness score `D(x, c) -> [B] in (0,1)`.
pub trait RealnessCritic {
    fn prob_real(&self, g: &mut Graph, x: NodeId, label: NodeId) -> NodeId;
}

/// Speaker posterior `log p_C(s | x) -> [B, N]`.
pub trait SpeakerCritic {
    fn log_probs(&self, g: &mut Graph, x: NodeId) -> NodeId;
}

// ---------------------------------------------------------------------
// shared helpers
// ---------------------------------------------------------------------

/// Broadcast `v: [B, K]` along time into `[B, K, L]`.
fn broadcast_time(g: &mut Graph, v: NodeId, l: usize) -> NodeId {
    let shape = g.value(v).shape().to_vec();
    let r = g.reshape(v, &[shape[0], shape[1], 1]);
    g.broadcast_to(r, &[shape[0], shape[1], l])
}

/// Geometric mean over the patch axis of `[B, 1, P]` probabilities.
pub fn product_pool_probs(g: &mut Graph, p: NodeId) -> NodeId {
    let logp = g.ln(p);
    let mean_logp = g.mean_axis(logp, 2); // [B, 1]
    let pooled = g.exp(mean_logp);
    let b = g.value(pooled).shape()[0];
    g.reshape(pooled, &[b])
}

struct ConvBlock<'a> {
    prefix: String,
    bound: &'a Bound,
    params: &'a ParamSet,
    mode: Mode,
    bn_eps: f64,
}

impl<'a> ConvBlock<'a> {
    /// conv -> batch norm -> GLU; conv emits 2x channels that GLU halves.
    fn apply(&self, g: &mut Graph, x: NodeId, stride: usize, pad: usize) -> NodeId {
        let w = self.bound.node(&format!("{}.w", self.prefix));
        let b = self.bound.node(&format!("{}.b", self.prefix));
        let conv = g.conv1d(x, w, stride, pad);
        let conv = layers::bias_add(g, conv, b, 1);
        let gamma = self.bound.node(&format!("{}.bn.gamma", self.prefix));
        let beta = self.bound.node(&format!("{}.bn.beta", self.prefix));
        let bn = match self.mode {
            Mode::Train => {
                g.batch_norm_train(conv, gamma, beta, 1, self.bn_eps, &format!("{}.bn", self.prefix))
            }
            Mode::Eval => {
                let mean: Vec<f64> = self
                    .params
                    .get(&format!("rs.{}.bn.mean", self.prefix))
                    .iter()
                    .copied()
                    .collect();
                let var: Vec<f64> = self
                    .params
                    .get(&format!("rs.{}.bn.var", self.prefix))
                    .iter()
                    .copied()
                    .collect();
                g.batch_norm_eval(conv, gamma, beta, 1, self.bn_eps, &mean, &var)
            }
        };
        layers::glu(g, bn, 1)
    }
}

fn register_block(params: &mut ParamSet, rng: &mut ChaCha8Rng, prefix: &str, cin: usize, cout: usize, k: usize) {
    params.register(&format!("{prefix}.w"), init::conv1d_weight(rng, 2 * cout, cin, k));
    params.register(&format!("{prefix}.b"), init::zeros(&[2 * cout]));
    params.register(&format!("{prefix}.bn.gamma"), init::ones(&[2 * cout]));
    params.register(&format!("{prefix}.bn.beta"), init::zeros(&[2 * cout]));
    params.register(&format!("rs.{prefix}.bn.mean"), init::zeros(&[2 * cout]));
    params.register(&format!("rs.{prefix}.bn.var"), init::ones(&[2 * cout]));
}

// ---------------------------------------------------------------------
// generator
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Generator {
    pub cfg: GanConfig,
    pub params: ParamSet,
}

/// Encoder stride schedule: time halves in blocks 2 and 3.
const ENC_STRIDES: [usize; 5] = [1, 2, 2, 1, 1];

impl Generator {
    pub fn new(cfg: &GanConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let k = cfg.kernel_g;
        let cond = cfg.mcep_dim + cfg.style_dim + cfg.n_speakers;
        // per-frame affine merge = pointwise conv
        params.register("merge.w", init::conv1d_weight(&mut rng, cfg.merge_channels, cond, 1));
        params.register("merge.b", init::zeros(&[cfg.merge_channels]));
        let mut cin = cfg.merge_channels;
        for (i, &cout) in cfg.encoder_channels.iter().enumerate() {
            register_block(&mut params, &mut rng, &format!("enc{i}"), cin, cout, k);
            cin = cout;
        }
        let code = *cfg.encoder_channels.last().unwrap();
        let mut din = code + cfg.style_dim + cfg.n_speakers;
        for (j, &cout) in cfg.decoder_channels.iter().enumerate() {
            register_block(&mut params, &mut rng, &format!("dec{j}"), din, cout, k);
            din = cout;
        }
        // transposed conv restores the x4 time downsampling and emits cepstra
        params.register(
            "out.w",
            init::convt1d_weight(&mut rng, din, cfg.mcep_dim, 8),
        );
        params.register("out.b", init::zeros(&[cfg.mcep_dim]));
        Generator {
            cfg: cfg.clone(),
            params,
        }
    }

    /// Merge conditioning per frame: concat(mceps, style, label) along the
    /// channel axis, then a learned pointwise projection.
    pub fn condition_merge(
        &self,
        g: &mut Graph,
        bound: &Bound,
        x: NodeId,
        style: NodeId,
        label: NodeId,
    ) -> NodeId {
        let l = g.value(x).shape()[2];
        let style_t = broadcast_time(g, style, l);
        let label_t = broadcast_time(g, label, l);
        let merged = g.concat(1, &[x, style_t, label_t]);
        let w = bound.node("merge.w");
        let b = bound.node("merge.b");
        let proj = g.conv1d(merged, w, 1, 0);
        layers::bias_add(g, proj, b, 1)
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        x: NodeId,
        style: NodeId,
        label: NodeId,
        mode: Mode,
    ) -> NodeId {
        let cfg = &self.cfg;
        let k = cfg.kernel_g;
        let pad = (k - 1) / 2;
        let mut h = self.condition_merge(g, bound, x, style, label);
        for (i, _) in cfg.encoder_channels.iter().enumerate() {
            let block = ConvBlock {
                prefix: format!("enc{i}"),
                bound,
                params: &self.params,
                mode,
                bn_eps: cfg.bn_eps,
            };
            h = block.apply(g, h, ENC_STRIDES[i], pad);
        }
        // re-broadcast conditioning onto the downsampled code
        let l_code = g.value(h).shape()[2];
        let style_t = broadcast_time(g, style, l_code);
        let label_t = broadcast_time(g, label, l_code);
        h = g.concat(1, &[h, style_t, label_t]);
        for (j, _) in cfg.decoder_channels.iter().enumerate() {
            let block = ConvBlock {
                prefix: format!("dec{j}"),
                bound,
                params: &self.params,
                mode,
                bn_eps: cfg.bn_eps,
            };
            h = block.apply(g, h, 1, pad);
        }
        let w = bound.node("out.w");
        let b = bound.node("out.b");
        let y = g.conv_transpose1d(h, w, 4, 2);
        layers::bias_add(g, y, b, 1)
    }
}

/// A generator bound into a graph, usable wherever a mapper is expected.
pub struct BoundGenerator<'a> {
    pub net: &'a Generator,
    pub bound: &'a Bound,
    pub mode: Mode,
}

impl SpectralMapper for BoundGenerator<'_> {
    fn map(&self, g: &mut Graph, x: NodeId, style: NodeId, label: NodeId) -> NodeId {
        self.net.forward(g, self.bound, x, style, label, self.mode)
    }
}

// ---------------------------------------------------------------------
// discriminator
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub cfg: GanConfig,
    pub params: ParamSet,
}

const DC_STRIDES: [usize; 4] = [1, 2, 1, 2];

impl Discriminator {
    pub fn new(cfg: &GanConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let k = cfg.kernel_dc;
        let mut cin = cfg.mcep_dim + cfg.n_speakers;
        for (i, &cout) in cfg.discriminator_channels[..4].iter().enumerate() {
            register_block(&mut params, &mut rng, &format!("dis{i}"), cin, cout, k);
            cin = cout;
        }
        params.register("out.w", init::conv1d_weight(&mut rng, 1, cin, k));
        params.register("out.b", init::zeros(&[1]));
        Discriminator {
            cfg: cfg.clone(),
            params,
        }
    }

    /// Per-time-patch realness probabilities `[B, 1, P]`.
    pub fn patch_probs(
        &self,
        g: &mut Graph,
        bound: &Bound,
        x: NodeId,
        label: NodeId,
        mode: Mode,
    ) -> NodeId {
        let cfg = &self.cfg;
        let pad = (cfg.kernel_dc - 1) / 2;
        let l = g.value(x).shape()[2];
        let label_t = broadcast_time(g, label, l);
        let mut h = g.concat(1, &[x, label_t]);
        for i in 0..4 {
            let block = ConvBlock {
                prefix: format!("dis{i}"),
                bound,
                params: &self.params,
                mode,
                bn_eps: cfg.bn_eps,
            };
            h = block.apply(g, h, DC_STRIDES[i], pad);
        }
        let w = bound.node("out.w");
        let b = bound.node("out.b");
        let logits = g.conv1d(h, w, 1, pad);
        let logits = layers::bias_add(g, logits, b, 1); // [B, 1, P]
        let p = g.sigmoid(logits);
        g.clamp(p, cfg.epsilon, 1.0 - cfg.epsilon)
    }

    /// Per-item realness in (0,1): sigmoid per time patch, then product
    /// pooling realized as the geometric mean of patch probabilities.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        x: NodeId,
        label: NodeId,
        mode: Mode,
    ) -> NodeId {
        let p = self.patch_probs(g, bound, x, label, mode);
        product_pool_probs(g, p)
    }
}

pub struct BoundDiscriminator<'a> {
    pub net: &'a Discriminator,
    pub bound: &'a Bound,
    pub mode: Mode,
}

impl RealnessCritic for BoundDiscriminator<'_> {
    fn prob_real(&self, g: &mut Graph, x: NodeId, label: NodeId) -> NodeId {
        self.net.forward(g, self.bound, x, label, self.mode)
    }
}

// ---------------------------------------------------------------------
// classifier
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Classifier {
    pub cfg: GanConfig,
    pub params: ParamSet,
}

impl Classifier {
    pub fn new(cfg: &GanConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let k = cfg.kernel_dc;
        let mut cin = cfg.classifier_slice;
        for (i, &cout) in cfg.classifier_channels.iter().enumerate() {
            register_block(&mut params, &mut rng, &format!("cls{i}"), cin, cout, k);
            cin = cout;
        }
        params.register("out.w", init::conv1d_weight(&mut rng, cfg.n_speakers, cin, k));
        params.register("out.b", init::zeros(&[cfg.n_speakers]));
        Classifier {
            cfg: cfg.clone(),
            params,
        }
    }

    /// Log speaker posterior `[B, N]`: slice the low-quefrency band, conv
    /// stack, per-patch log-softmax, product pooling (mean log), renormalize.
    pub fn log_probs(&self, g: &mut Graph, bound: &Bound, x: NodeId, mode: Mode) -> NodeId {
        let cfg = &self.cfg;
        let pad = (cfg.kernel_dc - 1) / 2;
        let mut h = g.slice(x, 1, 0, cfg.classifier_slice);
        for i in 0..4 {
            let block = ConvBlock {
                prefix: format!("cls{i}"),
                bound,
                params: &self.params,
                mode,
                bn_eps: cfg.bn_eps,
            };
            h = block.apply(g, h, DC_STRIDES[i], pad);
        }
        let w = bound.node("out.w");
        let b = bound.node("out.b");
        let logits = g.conv1d(h, w, 1, pad); // [B, N, P]
        let logits = layers::bias_add(g, logits, b, 1);
        let per_patch = g.log_softmax(logits, 1);
        let mean_log = g.mean_axis(per_patch, 2); // [B, N] geometric-mean logs
        g.log_softmax(mean_log, 1) // renormalized
    }
}

pub struct BoundClassifier<'a> {
    pub net: &'a Classifier,
    pub bound: &'a Bound,
    pub mode: Mode,
}

impl SpeakerCritic for BoundClassifier<'_> {
    fn log_probs(&self, g: &mut Graph, x: NodeId) -> NodeId {
        self.net.log_probs(g, self.bound, x, self.mode)
    }
}

// ---------------------------------------------------------------------
// bundle
// ---------------------------------------------------------------------

/// Per-speaker feature normalization statistics plus the three networks.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub cfg: GanConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub classifier: Classifier,
}

impl ModelBundle {
    pub fn new(cfg: &GanConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(ModelBundle {
            cfg: cfg.clone(),
            generator: Generator::new(cfg, seed ^ 0x67),
            discriminator: Discriminator::new(cfg, seed ^ 0xd1),
            classifier: Classifier::new(cfg, seed ^ 0xc1),
        })
    }

    /// Structural channel sequences, post-GLU, as configured.
    pub fn channel_summary(&self) -> (Vec<usize>, Vec<usize>, Vec<usize>, Vec<usize>) {
        let enc = self
            .cfg
            .encoder_channels
            .iter()
            .enumerate()
            .map(|(i, _)| {
                self.generator.params.get(&format!("enc{i}.w")).shape()[0] / 2
            })
            .collect();
        let dec = self
            .cfg
            .decoder_channels
            .iter()
            .enumerate()
            .map(|(j, _)| {
                self.generator.params.get(&format!("dec{j}.w")).shape()[0] / 2
            })
            .collect();
        let mut dis: Vec<usize> = (0..4)
            .map(|i| self.discriminator.params.get(&format!("dis{i}.w")).shape()[0] / 2)
            .collect();
        dis.push(self.discriminator.params.get("out.w").shape()[0]);
        let cls = (0..4)
            .map(|i| self.classifier.params.get(&format!("cls{i}.w")).shape()[0] / 2)
            .collect();
        (enc, dec, dis, cls)
    }
}

/// Run the generator on plain arrays (validating shapes), outside training.
pub fn generator_forward(
    bundle: &ModelBundle,
    mceps: &ArrayD<f64>,
    styles: &ArrayD<f64>,
    labels: &ArrayD<f64>,
    mode: Mode,
) -> Result<ArrayD<f64>> {
    let cfg = &bundle.cfg;
    if mceps.ndim() != 3 || mceps.shape()[1] != cfg.mcep_dim {
        return Err(Error::ShapeMismatch {
            context: "generator_forward".into(),
            expected: format!("[B, {}, L]", cfg.mcep_dim),
            actual: format!("{:?}", mceps.shape()),
        });
    }
    let l = mceps.shape()[2];
    let m = cfg.length_multiple();
    if l % m != 0 || l == 0 {
        return Err(Error::Validation(format!(
            "segment length {l} is not a multiple of {m} (required by the \
             encoder's time downsampling)"
        )));
    }
    let mut g = Graph::new();
    let bound = bind(&mut g, &bundle.generator.params, false);
    let x = g.leaf(mceps.clone());
    let s = g.leaf(styles.clone());
    let c = g.leaf(labels.clone());
    let y = bundle.generator.forward(&mut g, &bound, x, s, c, mode);
    Ok(g.value(y).clone())
}

/// Discriminator on plain arrays.
pub fn discriminator_forward(
    bundle: &ModelBundle,
    features: &ArrayD<f64>,
    labels: &ArrayD<f64>,
    mode: Mode,
) -> Result<ArrayD<f64>> {
    let mut g = Graph::new();
    let bound = bind(&mut g, &bundle.discriminator.params, false);
    let x = g.leaf(features.clone());
    let c = g.leaf(labels.clone());
    let p = bundle.discriminator.forward(&mut g, &bound, x, c, mode);
    Ok(g.value(p).clone())
}

/// Classifier probabilities on plain arrays (rows sum to 1).
pub fn classifier_forward(
    bundle: &ModelBundle,
    features: &ArrayD<f64>,
    mode: Mode,
) -> Result<ArrayD<f64>> {
    let mut g = Graph::new();
    let bound = bind(&mut g, &bundle.classifier.params, false);
    let x = g.leaf(features.clone());
    let lp = bundle.classifier.log_probs(&mut g, &bound, x, mode);
    Ok(g.value(lp).mapv(f64::exp))
}

/// Expected conv-stack patch count for a crop length (discriminator and
/// classifier share the stride schedule).
pub fn patch_count(l: usize) -> usize {
    let mut len = l;
    for s in DC_STRIDES {
        len = conv1d_out_len(len, 1, s, 0).max(1);
    }
    len
}

// test stubs live here so loss tests and conversion tests share them
pub struct IdentityMapper;

impl SpectralMapper for IdentityMapper {
    fn map(&self, _g: &mut Graph, x: NodeId, _style: NodeId, _label: NodeId) -> NodeId {
        x
    }
}

/// Adds a constant to every cepstral entry.
pub struct AddConstMapper(pub f64);

impl SpectralMapper for AddConstMapper {
    fn map(&self, g: &mut Graph, x: NodeId, _style: NodeId, _label: NodeId) -> NodeId {
        let shape = g.value(x).shape().to_vec();
        let delta = g.leaf(ArrayD::from_elem(IxDyn(&shape), self.0));
        g.add(x, delta)
    }
}

/// Fixed realness probability regardless of input.
pub struct ConstCritic(pub f64);

impl RealnessCritic for ConstCritic {
    fn prob_real(&self, g: &mut Graph, x: NodeId, _label: NodeId) -> NodeId {
        let b = g.value(x).shape()[0];
        g.leaf(ArrayD::from_elem(IxDyn(&[b]), self.0))
    }
}

/// Fixed speaker posterior regardless of input.
pub struct ConstSpeakerCritic(pub Vec<f64>);

impl SpeakerCritic for ConstSpeakerCritic {
    fn log_probs(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let b = g.value(x).shape()[0];
        let n = self.0.len();
        let mut arr = ArrayD::<f64>::zeros(IxDyn(&[b, n]));
        for bi in 0..b {
            for (ni, &p) in self.0.iter().enumerate() {
                arr[[bi, ni]] = p.ln();
            }
        }
        g.leaf(arr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stargan::GanConfig;
    use rand::Rng;

    fn tiny_cfg(n: usize) -> GanConfig {
        GanConfig::tiny(n)
    }

    fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
        let n: usize = shape.iter().product();
        ArrayD::from_shape_vec(
            IxDyn(shape),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn one_hot(rows: &[usize], n: usize) -> ArrayD<f64> {
        let mut arr = ArrayD::<f64>::zeros(IxDyn(&[rows.len(), n]));
        for (i, &r) in rows.iter().enumerate() {
            arr[[i, r]] = 1.0;
        }
        arr
    }

    #[test]
    fn condition_merge_shape_and_sensitivity() {
        let cfg = tiny_cfg(3);
        let gen = Generator::new(&cfg, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = randn(&mut rng, &[4, cfg.mcep_dim, 128]);
        let mut styles = randn(&mut rng, &[4, cfg.style_dim]);
        let labels = one_hot(&[0, 1, 2, 0], 3);

        let run = |styles: &ArrayD<f64>| -> ArrayD<f64> {
            let mut g = Graph::new();
            let bound = bind(&mut g, &gen.params, false);
            let xn = g.leaf(x.clone());
            let sn = g.leaf(styles.clone());
            let cn = g.leaf(labels.clone());
            let m = gen.condition_merge(&mut g, &bound, xn, sn, cn);
            g.value(m).clone()
        };
        let base = run(&styles);
        assert_eq!(base.shape(), &[4, cfg.merge_channels, 128]);

        // two batch items identical except style: outputs differ
        for j in 0..cfg.style_dim {
            styles[[1, j]] = styles[[0, j]] + 0.5;
        }
        let changed = run(&styles);
        assert_ne!(base, changed);

        // zero merge weights and bias: all-zero output
        let mut gen_zero = gen.clone();
        gen_zero.params.get_mut("merge.w").fill(0.0);
        gen_zero.params.get_mut("merge.b").fill(0.0);
        let mut g = Graph::new();
        let bound = bind(&mut g, &gen_zero.params, false);
        let xn = g.leaf(x.clone());
        let sn = g.leaf(styles.clone());
        let cn = g.leaf(labels.clone());
        let m = gen_zero.condition_merge(&mut g, &bound, xn, sn, cn);
        assert!(g.value(m).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generator_preserves_shape_for_valid_lengths() {
        let cfg = tiny_cfg(2);
        let bundle = ModelBundle::new(&cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for l in [4usize, 32, 128, 36] {
            let x = randn(&mut rng, &[2, cfg.mcep_dim, l]);
            let s = randn(&mut rng, &[2, cfg.style_dim]);
            let c = one_hot(&[0, 1], 2);
            let y = generator_forward(&bundle, &x, &s, &c, Mode::Eval).unwrap();
            assert_eq!(y.shape(), &[2, cfg.mcep_dim, l], "length {l}");
        }
    }

    #[test]
    fn generator_rejects_bad_length_naming_multiple() {
        let cfg = tiny_cfg(2);
        let bundle = ModelBundle::new(&cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = randn(&mut rng, &[1, cfg.mcep_dim, 30]);
        let s = randn(&mut rng, &[1, cfg.style_dim]);
        let c = one_hot(&[0], 2);
        let err = generator_forward(&bundle, &x, &s, &c, Mode::Eval).unwrap_err();
        assert!(err.to_string().contains("multiple of 4"), "{err}");
    }

    #[test]
    fn changing_one_items_label_changes_only_that_item() {
        let cfg = tiny_cfg(3);
        let bundle = ModelBundle::new(&cfg, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = randn(&mut rng, &[3, cfg.mcep_dim, 32]);
        let s = randn(&mut rng, &[3, cfg.style_dim]);
        let c1 = one_hot(&[0, 1, 2], 3);
        let c2 = one_hot(&[0, 2, 2], 3); // item 1 retargeted
        // eval mode: batch statistics must not couple items
        let y1 = generator_forward(&bundle, &x, &s, &c1, Mode::Eval).unwrap();
        let y2 = generator_forward(&bundle, &x, &s, &c2, Mode::Eval).unwrap();
        let item = |y: &ArrayD<f64>, i: usize| {
            y.index_axis(ndarray::Axis(0), i).to_owned()
        };
        assert_eq!(item(&y1, 0), item(&y2, 0));
        assert_ne!(item(&y1, 1), item(&y2, 1));
        assert_eq!(item(&y1, 2), item(&y2, 2));
    }

    #[test]
    fn discriminator_outputs_strictly_in_unit_interval() {
        let cfg = tiny_cfg(2);
        let bundle = ModelBundle::new(&cfg, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = randn(&mut rng, &[4, cfg.mcep_dim, 32]).mapv(|v| v * 10.0);
        let c = one_hot(&[0, 1, 0, 1], 2);
        let p = discriminator_forward(&bundle, &x, &c, Mode::Eval).unwrap();
        assert_eq!(p.shape(), &[4]);
        for &v in p.iter() {
            assert!(v > 0.0 && v < 1.0, "probability {v}");
        }
    }

    #[test]
    fn product_pooling_matches_hand_rule() {
        // single patch: pooled equals that patch's probability
        let mut g = Graph::new();
        let single = g.leaf(ArrayD::from_shape_vec(IxDyn(&[1, 1, 1]), vec![0.37]).unwrap());
        let pooled = product_pool_probs(&mut g, single);
        assert!((g.value(pooled)[[0]] - 0.37).abs() < 1e-12);

        // two patches p, q: pooled is sqrt(p*q)
        let p = 0.8;
        let q = 0.2;
        let two = g.leaf(ArrayD::from_shape_vec(IxDyn(&[1, 1, 2]), vec![p, q]).unwrap());
        let pooled = product_pool_probs(&mut g, two);
        assert!((g.value(pooled)[[0]] - (p * q).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn discriminator_pooling_consistent_with_its_patches() {
        let cfg = tiny_cfg(2);
        let bundle = ModelBundle::new(&cfg, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        // L = 8 yields P = 2 patches under the stride schedule
        let x = randn(&mut rng, &[2, cfg.mcep_dim, 8]);
        let c = one_hot(&[0, 1], 2);
        let mut g = Graph::new();
        let bound = bind(&mut g, &bundle.discriminator.params, false);
        let xn = g.leaf(x);
        let cn = g.leaf(c);
        let patches = bundle
            .discriminator
            .patch_probs(&mut g, &bound, xn, cn, Mode::Eval);
        let pooled = bundle
            .discriminator
            .forward(&mut g, &bound, xn, cn, Mode::Eval);
        let pv = g.value(patches).clone();
        assert_eq!(pv.shape()[2], 2);
        for i in 0..2 {
            let hand = (pv[[i, 0, 0]] * pv[[i, 0, 1]]).sqrt();
            assert!((g.value(pooled)[[i]] - hand).abs() < 1e-12);
        }
    }

    #[test]
    fn classifier_rows_are_distributions_and_degenerate_case() {
        let cfg = tiny_cfg(4);
        let bundle = ModelBundle::new(&cfg, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = randn(&mut rng, &[3, cfg.mcep_dim, 32]);
        let p = classifier_forward(&bundle, &x, Mode::Eval).unwrap();
        assert_eq!(p.shape(), &[3, 4]);
        for row in p.rows() {
            let sum: f64 = row.sum();
            assert!((sum - 1.0).abs() < 1e-6, "row sum {sum}");
        }

        let cfg1 = tiny_cfg(1);
        let bundle1 = ModelBundle::new(&cfg1, 9).unwrap();
        let x1 = randn(&mut rng, &[2, cfg1.mcep_dim, 32]);
        let p1 = classifier_forward(&bundle1, &x1, Mode::Eval).unwrap();
        for &v in p1.iter() {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn paper_scale_channel_sequences() {
        let cfg = GanConfig::default();
        let bundle = ModelBundle::new(&cfg, 10).unwrap();
        let (enc, dec, dis, cls) = bundle.channel_summary();
        assert_eq!(enc, vec![64, 128, 256, 128, 10]);
        assert_eq!(dec, vec![64, 128, 64, 32]);
        assert_eq!(dis, vec![32, 32, 32, 32, 1]);
        assert_eq!(cls, vec![8, 16, 32, 16]);
    }

    #[test]
    fn generator_gradients_match_finite_differences() {
        let cfg = GanConfig {
            n_speakers: 2,
            merge_channels: 4,
            encoder_channels: vec![2, 2, 2, 2, 2],
            decoder_channels: vec![2, 2, 2, 2],
            discriminator_channels: vec![2, 2, 2, 2, 1],
            classifier_channels: vec![2, 2, 2, 2],
            classifier_slice: 4,
            ..Default::default()
        };
        let mut gen = Generator::new(&cfg, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = randn(&mut rng, &[1, cfg.mcep_dim, 8]);
        let s = randn(&mut rng, &[1, cfg.style_dim]);
        let c = one_hot(&[0], 2);

        let build = |p: &ParamSet| -> (f64, Vec<ArrayD<f64>>) {
            let mut g = Graph::new();
            let bound = bind(&mut g, p, true);
            let gen_view = Generator {
                cfg: cfg.clone(),
                params: p.clone(),
            };
            let xn = g.leaf(x.clone());
            let sn = g.leaf(s.clone());
            let cn = g.leaf(c.clone());
            let y = gen_view.forward(&mut g, &bound, xn, sn, cn, Mode::Train);
            let sq = g.mul(y, y);
            let loss = g.mean_all(sq);
            g.backward(loss);
            (g.scalar(loss), bound.grads(&g))
        };
        let (_, grads) = build(&gen.params);
        let mut check_rng = ChaCha8Rng::seed_from_u64(9);
        let report = crate::nn::gradcheck::check(
            &mut gen.params,
            &grads,
            |p| build(p).0,
            0.02,
            1e-3,
            &mut check_rng,
        );
        assert!(report.ok(), "failures: {:?}", report.failures);
    }
}
