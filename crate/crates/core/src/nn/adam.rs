//! ADAM optimizer over a [`ParamSet`].

use ndarray::ArrayD;

use super::params::ParamSet;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub step: u64,
    pub m: Vec<ArrayD<f64>>,
    pub v: Vec<ArrayD<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamSet) -> Self {
        let m = (0..params.len())
            .map(|i| ArrayD::zeros(params.value_at(i).raw_dim()))
            .collect();
        let v = (0..params.len())
            .map(|i| ArrayD::zeros(params.value_at(i).raw_dim()))
            .collect();
        Adam {
            cfg,
            step: 0,
            m,
            v,
        }
    }

    /// One update. `grads` is parallel to the ParamSet entries; running-stat
    /// entries are skipped.
    pub fn apply(&mut self, params: &mut ParamSet, grads: &[ArrayD<f64>]) {
        assert_eq!(grads.len(), params.len(), "grad count mismatch");
        self.step += 1;
        let t = self.step as i32;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bias1 = 1.0 - b1.powi(t);
        let bias2 = 1.0 - b2.powi(t);
        let lr = self.cfg.learning_rate;
        let eps = self.cfg.eps;
        let names: Vec<String> = params.names().to_vec();
        for (i, name) in names.iter().enumerate() {
            if !ParamSet::is_trainable(name) {
                continue;
            }
            let g = &grads[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            m.zip_mut_with(g, |mi, &gi| *mi = b1 * *mi + (1.0 - b1) * gi);
            v.zip_mut_with(g, |vi, &gi| *vi = b2 * *vi + (1.0 - b2) * gi * gi);
            let p = params.value_at_mut(i);
            ndarray::Zip::from(p)
                .and(&*m)
                .and(&*v)
                .for_each(|pi, &mi, &vi| {
                    let mhat = mi / bias1;
                    let vhat = vi / bias2;
                    *pi -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}
