//! The four training losses and their weighted composition.
//!
//! All expectations are minibatch means; every log is clamped at epsilon, so
//! losses stay finite for any network output. The functions are generic over
//! the network traits so tests can evaluate them against hand-computed stubs.

use ndarray::{ArrayD, IxDyn};

use super::nets::{RealnessCritic, SpeakerCritic, SpectralMapper};
use super::LossWeights;
use crate::nn::{Graph, NodeId};

/// -mean log D(real, c_x) - mean log(1 - D(fake, c_y)). The fake batch is an
/// already-materialized tensor, so no gradient reaches the generator.
pub fn adv_loss_d(
    g: &mut Graph,
    critic: &impl RealnessCritic,
    real: NodeId,
    real_labels: NodeId,
    fake: NodeId,
    fake_labels: NodeId,
    eps: f64,
) -> NodeId {
    let p_real = critic.prob_real(g, real, real_labels);
    let p_real = g.clamp(p_real, eps, 1.0 - eps);
    let log_real = g.ln(p_real);
    let mean_real = g.mean_all(log_real);

    let p_fake = critic.prob_real(g, fake, fake_labels);
    let one = g.leaf(ArrayD::from_elem(IxDyn(&[]), 1.0));
    let one = {
        let b = g.value(p_fake).shape()[0];
        g.broadcast_to(one, &[b])
    };
    let inv = g.sub(one, p_fake);
    let inv = g.clamp(inv, eps, 1.0 - eps);
    let log_fake = g.ln(inv);
    let mean_fake = g.mean_all(log_fake);

    let total = g.add(mean_real, mean_fake);
    g.neg(total)
}

/// -mean log D(fake, c_y); gradients flow into whatever produced `fake`.
pub fn adv_loss_g(
    g: &mut Graph,
    critic: &impl RealnessCritic,
    fake: NodeId,
    fake_labels: NodeId,
    eps: f64,
) -> NodeId {
    let p = critic.prob_real(g, fake, fake_labels);
    let p = g.clamp(p, eps, 1.0 - eps);
    let logp = g.ln(p);
    let mean = g.mean_all(logp);
    g.neg(mean)
}

/// -mean log p_C(label | x): the domain-classification cross-entropy shared
/// by the classifier update (real features, true labels) and the generator
/// update (generated features, target labels).
pub fn dom_loss(
    g: &mut Graph,
    critic: &impl SpeakerCritic,
    x: NodeId,
    labels_one_hot: NodeId,
) -> NodeId {
    let log_probs = critic.log_probs(g, x);
    let picked = g.mul(log_probs, labels_one_hot);
    let per_item = g.sum_axis(picked, 1);
    let mean = g.mean_all(per_item);
    g.neg(mean)
}

/// Masked mean absolute difference over valid frames (every cepstral row).
fn masked_l1(g: &mut Graph, a: NodeId, b: NodeId, mask: Option<NodeId>) -> NodeId {
    let diff = g.sub(a, b);
    let absd = g.abs(diff);
    match mask {
        None => g.mean_all(absd),
        Some(m) => {
            let shape = g.value(absd).shape().to_vec(); // [B, D, L]
            let (bsz, d, l) = (shape[0], shape[1], shape[2]);
            let m3 = g.reshape(m, &[bsz, 1, l]);
            let m3 = g.broadcast_to(m3, &[bsz, d, l]);
            let masked = g.mul(absd, m3);
            let total = g.sum_all(masked);
            let count = g.value(m3).sum().max(1.0);
            g.scale(total, 1.0 / count)
        }
    }
}

/// mean |G(G(x, E_y, c_y), E_x, c_x) - x|: back-translation conditions on
/// the *source* style.
#[allow(clippy::too_many_arguments)]
pub fn cycle_loss(
    g: &mut Graph,
    mapper: &impl SpectralMapper,
    x: NodeId,
    style_src: NodeId,
    label_src: NodeId,
    style_tgt: NodeId,
    label_tgt: NodeId,
    mask: Option<NodeId>,
) -> NodeId {
    let fake = mapper.map(g, x, style_tgt, label_tgt);
    let back = mapper.map(g, fake, style_src, label_src);
    masked_l1(g, back, x, mask)
}

/// mean |G(x, E_x, c_x) - x|: same-speaker, same-style reconstruction.
pub fn identity_loss(
    g: &mut Graph,
    mapper: &impl SpectralMapper,
    x: NodeId,
    style_src: NodeId,
    label_src: NodeId,
    mask: Option<NodeId>,
) -> NodeId {
    let recon = mapper.map(g, x, style_src, label_src);
    masked_l1(g, recon, x, mask)
}

/// Scalar values of one step's losses, with the generator breakdown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_g: f64,
    pub l_d: f64,
    pub l_c: f64,
    pub adv_g: f64,
    pub dom_g: f64,
    pub cyc: f64,
    pub id: f64,
}

impl LossBreakdown {
    /// The composition identity: L_G = adv + dom*w + cyc*w + id*w.
    pub fn composition_residual(&self, w: &LossWeights) -> f64 {
        (self.adv_g + w.lambda_dom * self.dom_g + w.lambda_cyc * self.cyc + w.lambda_id * self.id
            - self.l_g)
            .abs()
    }
}

/// Build the full generator objective on one graph. Returns the total and
/// the component nodes `(l_g, adv_g, dom_g, cyc, id)`.
#[allow(clippy::too_many_arguments)]
pub fn generator_objective(
    g: &mut Graph,
    mapper: &impl SpectralMapper,
    d_critic: &impl RealnessCritic,
    c_critic: &impl SpeakerCritic,
    x: NodeId,
    style_src: NodeId,
    label_src: NodeId,
    style_tgt: NodeId,
    label_tgt: NodeId,
    mask: Option<NodeId>,
    weights: &LossWeights,
    eps: f64,
) -> (NodeId, NodeId, NodeId, NodeId, NodeId) {
    let fake = mapper.map(g, x, style_tgt, label_tgt);
    let adv = adv_loss_g(g, d_critic, fake, label_tgt, eps);
    let dom = dom_loss(g, c_critic, fake, label_tgt);
    let back = mapper.map(g, fake, style_src, label_src);
    let cyc = masked_l1(g, back, x, mask);
    let id = identity_loss(g, mapper, x, style_src, label_src, mask);
    let dom_w = g.scale(dom, weights.lambda_dom);
    let cyc_w = g.scale(cyc, weights.lambda_cyc);
    let id_w = g.scale(id, weights.lambda_id);
    let s1 = g.add(adv, dom_w);
    let s2 = g.add(s1, cyc_w);
    let total = g.add(s2, id_w);
    (total, adv, dom, cyc, id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stargan::nets::{
        AddConstMapper, ConstCritic, ConstSpeakerCritic, IdentityMapper,
    };
    use crate::nn::NodeId;
    use ndarray::{ArrayD, IxDyn};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const EPS: f64 = 1e-7;

    fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
        let n: usize = shape.iter().product();
        ArrayD::from_shape_vec(
            IxDyn(shape),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn batch(g: &mut Graph, rng: &mut ChaCha8Rng, b: usize) -> (usize, usize, usize, usize) {
        let x = g.leaf(randn(rng, &[b, 6, 8]));
        let s = g.leaf(randn(rng, &[b, 4]));
        let c = g.leaf(randn(rng, &[b, 2]));
        let c2 = g.leaf(randn(rng, &[b, 2]));
        (x, s, c, c2)
    }

    #[test]
    fn adv_d_at_uniform_half_is_2ln2() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let (x, _, c, c2) = batch(&mut g, &mut rng, 4);
        let fake = g.leaf(randn(&mut rng, &[4, 6, 8]));
        let loss = adv_loss_d(&mut g, &ConstCritic(0.5), x, c, fake, c2, EPS);
        assert!((g.scalar(loss) - 2.0 * (2.0f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn adv_d_perfect_discriminator_tends_to_zero() {
        // 1.0 on the real branch, 0.0 on the fake branch (call order is
        // real first inside adv_loss_d)
        struct PerfectCritic(std::cell::Cell<bool>);
        impl RealnessCritic for PerfectCritic {
            fn prob_real(&self, g: &mut Graph, x: NodeId, _label: NodeId) -> NodeId {
                let b = g.value(x).shape()[0];
                let v = if self.0.get() { 0.0 } else { 1.0 };
                self.0.set(true);
                g.leaf(ArrayD::from_elem(IxDyn(&[b]), v))
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Graph::new();
        let (x, _, c, c2) = batch(&mut g, &mut rng, 4);
        let fake = g.leaf(randn(&mut rng, &[4, 6, 8]));
        let critic = PerfectCritic(std::cell::Cell::new(false));
        let loss = adv_loss_d(&mut g, &critic, x, c, fake, c2, EPS);
        // both terms clamp to -ln(1 - eps) each
        let expect = -2.0 * (1.0 - EPS).ln();
        assert!((g.scalar(loss) - expect).abs() < 1e-12);
        assert!(g.scalar(loss) < 1e-6);
    }

    #[test]
    fn adv_d_batch_permutation_invariant() {
        // a per-item critic: probability = sigmoid of the item's first entry
        struct FirstEntryCritic;
        impl RealnessCritic for FirstEntryCritic {
            fn prob_real(&self, g: &mut Graph, x: NodeId, _label: NodeId) -> NodeId {
                let b = g.value(x).shape()[0];
                let first = g.slice(x, 1, 0, 1); // [B,1,L]
                let first = g.slice(first, 2, 0, 1); // [B,1,1]
                let first = g.reshape(first, &[b]);
                g.sigmoid(first)
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xv = randn(&mut rng, &[4, 6, 8]);
        let fv = randn(&mut rng, &[4, 6, 8]);
        let cv = randn(&mut rng, &[4, 2]);

        let eval = |xp: &ArrayD<f64>, fp: &ArrayD<f64>| -> f64 {
            let mut g = Graph::new();
            let x = g.leaf(xp.clone());
            let f = g.leaf(fp.clone());
            let c = g.leaf(cv.clone());
            let loss = adv_loss_d(&mut g, &FirstEntryCritic, x, c, f, c, EPS);
            g.scalar(loss)
        };
        let direct = eval(&xv, &fv);
        // reverse the batch
        let xr = {
            let mut v = xv.clone();
            for i in 0..4 {
                v.index_axis_mut(ndarray::Axis(0), i)
                    .assign(&xv.index_axis(ndarray::Axis(0), 3 - i));
            }
            v
        };
        let fr = {
            let mut v = fv.clone();
            for i in 0..4 {
                v.index_axis_mut(ndarray::Axis(0), i)
                    .assign(&fv.index_axis(ndarray::Axis(0), 3 - i));
            }
            v
        };
        let permuted = eval(&xr, &fr);
        assert!((direct - permuted).abs() < 1e-12);
    }

    #[test]
    fn adv_g_hand_values_and_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut g = Graph::new();
        let fake = g.leaf(randn(&mut rng, &[4, 6, 8]));
        let c = g.leaf(randn(&mut rng, &[4, 2]));
        let l_half = adv_loss_g(&mut g, &ConstCritic(0.5), fake, c, EPS);
        assert!((g.scalar(l_half) - (2.0f64).ln()).abs() < 1e-9);
        let l_one = adv_loss_g(&mut g, &ConstCritic(1.0), fake, c, EPS);
        assert!(g.scalar(l_one) < 1e-6);
        let l_09 = adv_loss_g(&mut g, &ConstCritic(0.9), fake, c, EPS);
        let l_01 = adv_loss_g(&mut g, &ConstCritic(0.1), fake, c, EPS);
        assert!(g.scalar(l_09) < g.scalar(l_01));
    }

    #[test]
    fn dom_loss_hand_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = Graph::new();
        let x = g.leaf(randn(&mut rng, &[4, 6, 8]));
        let mut onehot = ArrayD::<f64>::zeros(IxDyn(&[4, 4]));
        for i in 0..4 {
            onehot[[i, i % 4]] = 1.0;
        }
        let labels = g.leaf(onehot);
        // perfect classifier: p = 1 on the true label
        struct OracleCritic;
        impl SpeakerCritic for OracleCritic {
            fn log_probs(&self, g: &mut Graph, x: NodeId) -> NodeId {
                let b = g.value(x).shape()[0];
                let mut arr = ArrayD::<f64>::zeros(IxDyn(&[b, 4]));
                for i in 0..b {
                    for j in 0..4 {
                        arr[[i, j]] = if j == i % 4 { 0.0 } else { -50.0 };
                    }
                }
                g.leaf(arr)
            }
        }
        let perfect = dom_loss(&mut g, &OracleCritic, x, labels);
        assert!(g.scalar(perfect).abs() < 1e-12);

        let uniform = dom_loss(
            &mut g,
            &ConstSpeakerCritic(vec![0.25; 4]),
            x,
            labels,
        );
        assert!((g.scalar(uniform) - (4.0f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn cycle_loss_stub_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut g = Graph::new();
        let (x, s, c, c2) = batch(&mut g, &mut rng, 3);
        let zero = cycle_loss(&mut g, &IdentityMapper, x, s, c, s, c2, None);
        assert_eq!(g.scalar(zero), 0.0);
        let delta = 0.37;
        let two_delta = cycle_loss(&mut g, &AddConstMapper(delta), x, s, c, s, c2, None);
        assert!((g.scalar(two_delta) - 2.0 * delta).abs() < 1e-9);
    }

    #[test]
    fn identity_loss_stub_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut g = Graph::new();
        let (x, s, c, _) = batch(&mut g, &mut rng, 3);
        let zero = identity_loss(&mut g, &IdentityMapper, x, s, c, None);
        assert_eq!(g.scalar(zero), 0.0);
        let delta = 0.21;
        let one_delta = identity_loss(&mut g, &AddConstMapper(delta), x, s, c, None);
        assert!((g.scalar(one_delta) - delta).abs() < 1e-9);
        assert!(g.scalar(one_delta) >= 0.0);
    }

    #[test]
    fn masked_l1_ignores_padded_frames() {
        let mut g = Graph::new();
        let a = g.leaf(ArrayD::from_elem(IxDyn(&[1, 2, 4]), 1.0));
        let b = g.leaf(ArrayD::zeros(IxDyn(&[1, 2, 4])));
        let mut mask = ArrayD::zeros(IxDyn(&[1, 4]));
        mask[[0, 0]] = 1.0;
        mask[[0, 1]] = 1.0;
        let m = g.leaf(mask);
        let loss = masked_l1(&mut g, a, b, Some(m));
        // |1-0| on 2 valid frames x 2 rows / (2 frames x 2 rows) = 1
        assert!((g.scalar(loss) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn composition_matches_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let mut g = Graph::new();
            let (x, s, c, c2) = batch(&mut g, &mut rng, 2);
            let s2 = g.leaf(randn(&mut rng, &[2, 4]));
            let w = LossWeights::default();
            let (total, adv, dom, cyc, id) = generator_objective(
                &mut g,
                &AddConstMapper(0.1),
                &ConstCritic(0.3),
                &ConstSpeakerCritic(vec![0.5, 0.5]),
                x,
                s,
                c,
                s2,
                c2,
                None,
                &w,
                EPS,
            );
            let breakdown = LossBreakdown {
                l_g: g.scalar(total),
                l_d: 0.0,
                l_c: 0.0,
                adv_g: g.scalar(adv),
                dom_g: g.scalar(dom),
                cyc: g.scalar(cyc),
                id: g.scalar(id),
            };
            assert!(breakdown.composition_residual(&w) < 1e-9);
            // with the reference weights (2, 10, 5): total = a + 2b + 10c + 5d
            let manual = g.scalar(adv)
                + 2.0 * g.scalar(dom)
                + 10.0 * g.scalar(cyc)
                + 5.0 * g.scalar(id);
            assert!((g.scalar(total) - manual).abs() < 1e-9);

            // zero weights degenerate to the adversarial term alone
            let wz = LossWeights {
                lambda_dom: 0.0,
                lambda_cyc: 0.0,
                lambda_id: 0.0,
            };
            let (tz, az, ..) = generator_objective(
                &mut g,
                &AddConstMapper(0.1),
                &ConstCritic(0.3),
                &ConstSpeakerCritic(vec![0.5, 0.5]),
                x,
                s,
                c,
                s2,
                c2,
                None,
                &wz,
                EPS,
            );
            assert!((g.scalar(tz) - g.scalar(az)).abs() < 1e-12);
        }
    }
}
