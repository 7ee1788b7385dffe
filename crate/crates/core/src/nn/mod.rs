//! Minimal reverse-mode autodiff and the layer/optimizer toolkit built on it.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod layers;
pub mod params;

pub use adam::{Adam, AdamConfig};
pub use graph::{Graph, NodeId, StatUpdate};
pub use params::{bind, Bound, ParamSet};

#[cfg(test)]
mod tests {
    use ndarray::{ArrayD, IxDyn};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::graph::Graph;
    use super::layers;
    use super::params::{bind, ParamSet};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
    }

    /// Finite-difference check for an arbitrary graph builder: perturbs the
    /// single named entry and compares against the tape gradient.
    fn fd_check<F>(shape: &[usize], build: F, tol: f64)
    where
        F: Fn(&mut Graph, super::NodeId) -> super::NodeId,
    {
        let mut r = rng(7);
        let x0 = randn(&mut r, shape);

        let mut g = Graph::new();
        let x = g.leaf(x0.clone());
        let loss = build(&mut g, x);
        g.backward(loss);
        let analytic = g.grad(x);

        let h = 1e-6;
        for j in 0..x0.len() {
            let mut xp = x0.clone();
            xp.as_slice_mut().unwrap()[j] += h;
            let mut gp = Graph::new();
            let xpn = gp.leaf(xp);
            let lp = build(&mut gp, xpn);
            let mut xm = x0.clone();
            xm.as_slice_mut().unwrap()[j] -= h;
            let mut gm = Graph::new();
            let xmn = gm.leaf(xm);
            let lm = build(&mut gm, xmn);
            let fd = (gp.scalar(lp) - gm.scalar(lm)) / (2.0 * h);
            let an = analytic.as_slice().unwrap()[j];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            assert!(
                ((fd - an) / denom).abs() < tol,
                "fd {fd} vs analytic {an} at {j}"
            );
        }
    }

    #[test]
    fn elementwise_grads_match_finite_differences() {
        fd_check(&[2, 3], |g, x| {
            let s = g.sigmoid(x);
            let t = g.tanh(s);
            let m = g.mul(t, x);
            g.mean_all(m)
        }, 1e-5);
        fd_check(&[4], |g, x| {
            let e = g.exp(x);
            let c = g.clamp(e, 0.2, 5.0);
            let l = g.ln(c);
            let a = g.abs(l);
            g.sum_all(a)
        }, 1e-4);
    }

    #[test]
    fn broadcast_add_mul_grads() {
        // [2,3,4] + [3,1] style broadcasting on both add and mul
        let mut r = rng(3);
        let b0 = randn(&mut r, &[3, 1]);
        fd_check(&[2, 3, 4], |g, x| {
            let b = g.leaf(b0.clone());
            let s = g.add(x, b);
            let m = g.mul(s, x);
            g.mean_all(m)
        }, 1e-5);
        // and gradient w.r.t. the broadcast operand
        let x0 = randn(&mut r, &[2, 3, 4]);
        fd_check(&[3, 1], |g, b| {
            let x = g.leaf(x0.clone());
            let s = g.mul(x, b);
            g.mean_all(s)
        }, 1e-5);
    }

    #[test]
    fn matmul_softmax_grads() {
        let mut r = rng(11);
        let w0 = randn(&mut r, &[3, 5]);
        fd_check(&[4, 3], |g, x| {
            let w = g.leaf(w0.clone());
            let y = g.matmul(x, w);
            let p = g.softmax(y, 1);
            let lp = g.log_softmax(y, 1);
            let prod = g.mul(p, lp);
            g.mean_all(prod)
        }, 1e-5);
    }

    #[test]
    fn reduction_and_shape_grads() {
        fd_check(&[2, 3, 4], |g, x| {
            let s = g.sum_axis(x, 1);
            let t = g.transpose(s, &[1, 0]);
            let r = g.reshape(t, &[8]);
            let sl = g.slice(r, 0, 2, 7);
            g.mean_all(sl)
        }, 1e-5);
        fd_check(&[2, 2], |g, x| {
            let b = g.broadcast_to(x, &[3, 2, 2]);
            let m = g.mul(b, b);
            g.sum_all(m)
        }, 1e-5);
    }

    #[test]
    fn concat_grads() {
        let mut r = rng(5);
        let y0 = randn(&mut r, &[2, 3]);
        fd_check(&[2, 2], |g, x| {
            let y = g.leaf(y0.clone());
            let c = g.concat(1, &[x, y, x]);
            let sq = g.mul(c, c);
            g.mean_all(sq)
        }, 1e-5);
    }

    #[test]
    fn conv1d_grads_x_and_w() {
        let mut r = rng(13);
        let w0 = randn(&mut r, &[4, 3, 3]);
        for (stride, pad) in [(1usize, 1usize), (2, 1), (2, 0)] {
            fd_check(&[2, 3, 8], |g, x| {
                let w = g.leaf(w0.clone());
                let y = g.conv1d(x, w, stride, pad);
                let sq = g.mul(y, y);
                g.mean_all(sq)
            }, 1e-4);
        }
        let x0 = randn(&mut r, &[2, 3, 8]);
        fd_check(&[4, 3, 3], |g, w| {
            let x = g.leaf(x0.clone());
            let y = g.conv1d(x, w, 2, 1);
            let sq = g.mul(y, y);
            g.mean_all(sq)
        }, 1e-4);
    }

    #[test]
    fn conv_transpose1d_grads_and_length() {
        let mut r = rng(17);
        let w0 = randn(&mut r, &[3, 2, 8]);
        // stride 4, kernel 8, pad 2 -> exactly 4x upsampling
        {
            let mut g = Graph::new();
            let x = g.leaf(randn(&mut r, &[1, 3, 5]));
            let w = g.leaf(w0.clone());
            let y = g.conv_transpose1d(x, w, 4, 2);
            assert_eq!(g.value(y).shape(), &[1, 2, 20]);
        }
        fd_check(&[2, 3, 5], |g, x| {
            let w = g.leaf(w0.clone());
            let y = g.conv_transpose1d(x, w, 4, 2);
            let sq = g.mul(y, y);
            g.mean_all(sq)
        }, 1e-4);
        let x0 = randn(&mut r, &[2, 3, 5]);
        fd_check(&[3, 2, 8], |g, w| {
            let x = g.leaf(x0.clone());
            let y = g.conv_transpose1d(x, w, 4, 2);
            let sq = g.mul(y, y);
            g.mean_all(sq)
        }, 1e-4);
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)>; geometry must divide exactly so the
        // conv consumes every input frame
        let mut r = rng(23);
        let x0 = randn(&mut r, &[1, 3, 12]);
        let w0 = randn(&mut r, &[5, 3, 4]); // conv weight [Cout, Cin, K]
        let stride = 2;
        let pad = 1;
        let mut g = Graph::new();
        let x = g.leaf(x0.clone());
        let w = g.leaf(w0.clone());
        let y = g.conv1d(x, w, stride, pad);
        let yshape = g.value(y).shape().to_vec();
        let y0 = randn(&mut r, &yshape);
        let lhs: f64 = (g.value(y) * &y0).sum();

        // convT weight layout [Cin, Cout, K] coincides with the conv weight
        // [Cout, Cin, K] read with its first axis as the transposed input side
        let mut g2 = Graph::new();
        let yleaf = g2.leaf(y0);
        let wtl = g2.leaf(w0.clone());
        let xt = g2.conv_transpose1d(yleaf, wtl, stride, pad);
        assert_eq!(g2.value(xt).shape(), x0.shape());
        let rhs: f64 = (g2.value(xt) * &x0).sum();
        assert!((lhs - rhs).abs() < 1e-9, "adjoint mismatch {lhs} vs {rhs}");
    }

    #[test]
    fn conv3d_grads() {
        let mut r = rng(29);
        let w0 = randn(&mut r, &[2, 1, 3, 3, 3]);
        fd_check(&[1, 1, 3, 5, 6], |g, x| {
            let w = g.leaf(w0.clone());
            let y = g.conv3d(x, w, [1, 1, 1]);
            let sq = g.mul(y, y);
            g.mean_all(sq)
        }, 1e-4);
        let x0 = randn(&mut r, &[1, 1, 3, 5, 6]);
        fd_check(&[2, 1, 3, 3, 3], |g, w| {
            let x = g.leaf(x0.clone());
            let y = g.conv3d(x, w, [1, 1, 1]);
            let sq = g.mul(y, y);
            g.mean_all(sq)
        }, 1e-4);
    }

    #[test]
    fn max_pool_grads() {
        fd_check(&[2, 3, 8], |g, x| {
            let y = g.max_pool_axis(x, 2, 2);
            let sq = g.mul(y, y);
            g.mean_all(sq)
        }, 1e-4);
    }

    #[test]
    fn batch_norm_train_grads() {
        let mut r = rng(31);
        let gamma0 = randn(&mut r, &[3]).mapv(|v| 1.0 + 0.1 * v);
        let beta0 = randn(&mut r, &[3]).mapv(|v| 0.1 * v);
        fd_check(&[2, 3, 4], |g, x| {
            let gamma = g.leaf(gamma0.clone());
            let beta = g.leaf(beta0.clone());
            let y = g.batch_norm_train(x, gamma, beta, 1, 1e-5, "t");
            let s = g.sigmoid(y);
            g.mean_all(s)
        }, 1e-4);
        let x0 = randn(&mut r, &[2, 3, 4]);
        fd_check(&[3], |g, gamma| {
            let x = g.leaf(x0.clone());
            let beta = g.leaf(beta0.clone());
            let y = g.batch_norm_train(x, gamma, beta, 1, 1e-5, "t");
            let s = g.sigmoid(y);
            g.mean_all(s)
        }, 1e-4);
    }

    #[test]
    fn batch_norm_eval_uses_running_stats() {
        let mut g = Graph::new();
        let x = g.leaf(ArrayD::from_shape_vec(IxDyn(&[1, 2, 2]), vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let gamma = g.leaf(ArrayD::from_elem(IxDyn(&[2]), 2.0));
        let beta = g.leaf(ArrayD::from_elem(IxDyn(&[2]), 0.5));
        let y = g.batch_norm_eval(x, gamma, beta, 1, 0.0, &[1.0, 3.0], &[4.0, 4.0]);
        let v = g.value(y);
        // channel 0: (1-1)/2*2+0.5=0.5, (2-1)/2*2+0.5=1.5
        assert!((v[[0, 0, 0]] - 0.5).abs() < 1e-12);
        assert!((v[[0, 0, 1]] - 1.5).abs() < 1e-12);
        // channel 1: (3-3)/2*2+0.5=0.5, (4-3)/2*2+0.5=1.5
        assert!((v[[0, 1, 0]] - 0.5).abs() < 1e-12);
        assert!((v[[0, 1, 1]] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn lstm_and_attention_grads() {
        let mut r = rng(37);
        let mut params = ParamSet::new();
        layers::register_lstm(&mut params, &mut r, "lstm", 3, 4);
        layers::register_attention(&mut params, &mut r, "attn", 8, 5);
        let xs0: Vec<ArrayD<f64>> = (0..4).map(|_| randn(&mut r, &[2, 3])).collect();

        let build = |p: &ParamSet| -> (f64, Vec<ArrayD<f64>>) {
            let mut g = Graph::new();
            let bound = bind(&mut g, p, true);
            let xs: Vec<_> = xs0.iter().map(|x| g.leaf(x.clone())).collect();
            let hs = layers::lstm_bidirectional(&mut g, &bound, "lstm", &xs, 4);
            let (pooled, _) = layers::additive_attention(&mut g, &bound, "attn", &hs);
            let sq = g.mul(pooled, pooled);
            let loss = g.mean_all(sq);
            g.backward(loss);
            (g.scalar(loss), bound.grads(&g))
        };

        let (_, grads) = build(&params);
        let mut check_rng = rng(41);
        let report = super::gradcheck::check(
            &mut params,
            &grads,
            |p| build(p).0,
            0.05,
            1e-3,
            &mut check_rng,
        );
        assert!(
            report.ok(),
            "lstm/attention gradcheck failures: {:?}",
            report.failures
        );
        assert!(report.checked > 10);
    }

    #[test]
    fn glu_halves_channels_and_matches_definition() {
        let mut r = rng(43);
        let x0 = randn(&mut r, &[1, 4, 2]);
        let mut g = Graph::new();
        let x = g.leaf(x0.clone());
        let y = layers::glu(&mut g, x, 1);
        assert_eq!(g.value(y).shape(), &[1, 2, 2]);
        for t in 0..2 {
            for c in 0..2 {
                let a = x0[[0, c, t]];
                let b = x0[[0, c + 2, t]];
                let expect = a * (1.0 / (1.0 + (-b).exp()));
                assert!((g.value(y)[[0, c, t]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adam_moves_towards_minimum() {
        let mut params = ParamSet::new();
        params.register("x", ArrayD::from_elem(IxDyn(&[1]), 5.0));
        let mut adam = super::Adam::new(
            super::AdamConfig {
                learning_rate: 0.1,
                ..Default::default()
            },
            &params,
        );
        for _ in 0..500 {
            // d/dx (x-2)^2 = 2(x-2)
            let x = params.get("x")[[0]];
            let grad = ArrayD::from_elem(IxDyn(&[1]), 2.0 * (x - 2.0));
            adam.apply(&mut params, &[grad]);
        }
        assert!((params.get("x")[[0]] - 2.0).abs() < 1e-3);
    }

    #[test]
    fn frozen_binding_reports_zero_grads_but_passes_through() {
        let mut r = rng(47);
        let mut params = ParamSet::new();
        params.register("w", randn(&mut r, &[3, 3]));
        let mut g = Graph::new();
        let bound = bind(&mut g, &params, false);
        let x = g.leaf(randn(&mut r, &[2, 3]));
        let y = g.matmul(x, bound.node("w"));
        let loss = g.mean_all(y);
        g.backward(loss);
        // gradient still flows through the frozen net to its input...
        let gx = g.grad(x);
        assert!(gx.iter().any(|&v| v != 0.0));
        // ...but the binding exposes zeros for the parameters themselves
        let gw = bound.grads(&g);
        assert!(gw[0].iter().all(|&v| v == 0.0));
    }
}
