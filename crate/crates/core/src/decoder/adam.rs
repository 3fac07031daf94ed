use serde::{Deserialize, Serialize};

use super::FilmDecoder;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// First and second moments, flattened in layer/parameter order.
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(decoder: &FilmDecoder, lr: f64) -> Self {
        let n = decoder.param_count();
        AdamState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut FilmDecoder, grads: &FilmDecoder) {
        assert_eq!(params.param_count(), self.m.len(), "optimizer state does not match the decoder");
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t));
        let mut k = 0;
        for (pl, gl) in params.layers.iter_mut().zip(&grads.layers) {
            for (p, g) in pl.params_mut().into_iter().zip(gl.params()) {
                for (w, &gi) in p.iter_mut().zip(g) {
                    self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * gi;
                    self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * gi * gi;
                    *w -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + self.eps);
                    k += 1;
                }
            }
        }
    }
}
