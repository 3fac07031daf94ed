//! Task-conditioned FiLM decoder over frozen per-pixel features.
//!
//! Every layer is a 1×1 convolution followed by feature-wise modulation
//! `γ(e)⊙z + β(e)` and, except for the last, a ReLU. With 1×1 kernels the
//! network is a per-pixel MLP, so an image is processed as one `d × P`
//! matrix (columns are pixels) and each layer is a single GEMM.

use nalgebra::{DMatrix, DMatrixView};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geom::{FeatureMap, Grid};
use crate::io::bundle::Bundle;
use crate::io::tensor::Tensor;
use crate::{seed, Error, Result};

mod adam;
mod train;

pub use adam::AdamState;
pub use train::{train, TrainConfig, TrainLog, TrainSample};

/// Output channels per layer.
pub const LAYER_PLAN: [usize; 3] = [256, 64, 1];

/// How the γ/β affine maps start out.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilmInit {
    /// γ(e) = 1, β(e) = 0 for every embedding.
    #[default]
    Identity,
    /// All affine weights 1, all affine biases 0.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilmLayerParams {
    pub c_in: usize,
    pub c_out: usize,
    pub embed_dim: usize,
    /// `c_out × c_in`, row-major.
    pub conv_weight: Vec<f64>,
    pub conv_bias: Vec<f64>,
    /// `c_out × e`, row-major.
    pub gamma_weight: Vec<f64>,
    pub gamma_bias: Vec<f64>,
    pub beta_weight: Vec<f64>,
    pub beta_bias: Vec<f64>,
}

pub(crate) const PARAM_NAMES: [&str; 6] = ["conv_weight", "conv_bias", "gamma_weight", "gamma_bias", "beta_weight", "beta_bias"];

impl FilmLayerParams {
    pub fn zeros(c_in: usize, c_out: usize, embed_dim: usize) -> Self {
        FilmLayerParams {
            c_in,
            c_out,
            embed_dim,
            conv_weight: vec![0.0; c_out * c_in],
            conv_bias: vec![0.0; c_out],
            gamma_weight: vec![0.0; c_out * embed_dim],
            gamma_bias: vec![0.0; c_out],
            beta_weight: vec![0.0; c_out * embed_dim],
            beta_bias: vec![0.0; c_out],
        }
    }

    /// All six parameter vectors, in checkpoint order.
    pub fn params(&self) -> [&Vec<f64>; 6] {
        [&self.conv_weight, &self.conv_bias, &self.gamma_weight, &self.gamma_bias, &self.beta_weight, &self.beta_bias]
    }

    pub fn params_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.conv_weight,
            &mut self.conv_bias,
            &mut self.gamma_weight,
            &mut self.gamma_bias,
            &mut self.beta_weight,
            &mut self.beta_bias,
        ]
    }

    fn shapes(&self) -> [[usize; 2]; 6] {
        let (o, i, e) = (self.c_out, self.c_in, self.embed_dim);
        [[o, i], [o, 1], [o, e], [o, 1], [o, e], [o, 1]]
    }

    /// Weights viewed as a column-major `c_in × c_out` matrix, i.e. `Wᵀ`.
    fn weight_t(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.conv_weight, self.c_in, self.c_out)
    }

    fn modulation(&self, e: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let affine = |w: &[f64], b: &[f64]| -> Vec<f64> {
            (0..self.c_out)
                .map(|o| b[o] + w[o * self.embed_dim..(o + 1) * self.embed_dim].iter().zip(e).map(|(a, b)| a * b).sum::<f64>())
                .collect()
        };
        (affine(&self.gamma_weight, &self.gamma_bias), affine(&self.beta_weight, &self.beta_bias))
    }

    fn add_assign(&mut self, other: &FilmLayerParams) {
        for (a, b) in self.params_mut().into_iter().zip(other.params()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    fn scale(&mut self, s: f64) {
        for a in self.params_mut() {
            a.iter_mut().for_each(|x| *x *= s);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilmDecoder {
    pub layers: Vec<FilmLayerParams>,
    pub input_dim: usize,
    pub embed_dim: usize,
}

/// Gradients share the decoder's layout.
pub type Gradients = FilmDecoder;

impl FilmDecoder {
    /// Decoder with the standard [`LAYER_PLAN`].
    pub fn new(input_dim: usize, embed_dim: usize, init: FilmInit, seed: u64) -> Self {
        Self::with_plan(input_dim, embed_dim, &LAYER_PLAN, init, seed)
    }

    /// He-initialised convolutions (seeded), zero conv biases.
    pub fn with_plan(input_dim: usize, embed_dim: usize, plan: &[usize], init: FilmInit, seed: u64) -> Self {
        let mut rng = seed::rng(seed, "decoder/init");
        let mut c_in = input_dim;
        let mut layers = Vec::with_capacity(plan.len());
        for &c_out in plan {
            let mut l = FilmLayerParams::zeros(c_in, c_out, embed_dim);
            let he = Normal::new(0.0, (2.0 / c_in as f64).sqrt()).expect("positive std");
            l.conv_weight.iter_mut().for_each(|w| *w = he.sample(&mut rng));
            match init {
                FilmInit::Identity => l.gamma_bias.iter_mut().for_each(|g| *g = 1.0),
                FilmInit::Literal => {
                    l.gamma_weight.iter_mut().for_each(|g| *g = 1.0);
                    l.beta_weight.iter_mut().for_each(|b| *b = 1.0);
                }
            }
            layers.push(l);
            c_in = c_out;
        }
        FilmDecoder { layers, input_dim, embed_dim }
    }

    pub fn zeros_like(&self) -> Self {
        FilmDecoder {
            layers: self.layers.iter().map(|l| FilmLayerParams::zeros(l.c_in, l.c_out, l.embed_dim)).collect(),
            input_dim: self.input_dim,
            embed_dim: self.embed_dim,
        }
    }

    pub fn plan(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.c_out).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().flat_map(|l| l.params()).map(|p| p.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let mut c_in = self.input_dim;
        for (i, l) in self.layers.iter().enumerate() {
            if l.c_in != c_in || l.embed_dim != self.embed_dim {
                return Err(Error::shape(format!("layer {i} expects {}→{} with e={}", l.c_in, l.c_out, l.embed_dim)));
            }
            for (p, s) in l.params().iter().zip(l.shapes()) {
                if p.len() != s[0] * s[1] {
                    return Err(Error::shape(format!("layer {i}: parameter has {} values, expected {s:?}", p.len())));
                }
                if p.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(format!("layer {i}: non-finite parameter")));
                }
            }
            c_in = l.c_out;
        }
        if self.layers.last().map(|l| l.c_out) != Some(1) {
            return Err(Error::shape("last layer must have one output channel"));
        }
        Ok(())
    }

    pub(crate) fn add_assign(&mut self, other: &FilmDecoder) {
        self.layers.iter_mut().zip(&other.layers).for_each(|(a, b)| a.add_assign(b));
    }

    pub(crate) fn scale(&mut self, s: f64) {
        self.layers.iter_mut().for_each(|l| l.scale(s));
    }

    pub(crate) fn all_finite(&self) -> bool {
        self.layers.iter().flat_map(|l| l.params()).all(|p| p.iter().all(|v| v.is_finite()))
    }

    pub fn to_bundle(&self, meta: serde_json::Value) -> Result<Bundle> {
        let mut header = serde_json::json!({
            "kind": "film_decoder",
            "input_dim": self.input_dim,
            "embed_dim": self.embed_dim,
            "layer_plan": self.plan(),
        });
        if let (Some(h), serde_json::Value::Object(extra)) = (header.as_object_mut(), meta) {
            h.extend(extra);
        }
        let mut b = Bundle::new(header);
        for (i, l) in self.layers.iter().enumerate() {
            for ((name, p), s) in PARAM_NAMES.iter().zip(l.params()).zip(l.shapes()) {
                b.push(format!("layer{i}.{name}"), Tensor::f64(&s, p.clone())?);
            }
        }
        Ok(b)
    }

    pub fn from_bundle(b: &Bundle) -> Result<Self> {
        let get = |k: &str| {
            b.meta.get(k).and_then(|v| v.as_u64()).map(|v| v as usize).ok_or_else(|| Error::invalid(format!("checkpoint header lacks {k}")))
        };
        let (input_dim, embed_dim) = (get("input_dim")?, get("embed_dim")?);
        let plan: Vec<usize> = serde_json::from_value(b.meta.get("layer_plan").cloned().unwrap_or_default())
            .map_err(|e| Error::invalid(format!("checkpoint layer_plan: {e}")))?;
        let mut layers = Vec::new();
        let mut c_in = input_dim;
        for (i, &c_out) in plan.iter().enumerate() {
            let mut l = FilmLayerParams::zeros(c_in, c_out, embed_dim);
            let shapes = l.shapes();
            for ((name, p), s) in PARAM_NAMES.iter().zip(l.params_mut()).zip(shapes) {
                let t = b.get(&format!("layer{i}.{name}"))?;
                if t.shape() != s {
                    return Err(Error::shape(format!("layer{i}.{name}: {:?} != {s:?}", t.shape())));
                }
                *p = t.to_f64();
            }
            layers.push(l);
            c_in = c_out;
        }
        let d = FilmDecoder { layers, input_dim, embed_dim };
        d.validate()?;
        Ok(d)
    }

    pub fn save(&self, path: &std::path::Path, meta: serde_json::Value) -> Result<()> {
        self.to_bundle(meta)?.write(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bundle(&Bundle::read(path)?)
    }
}

/// Column-per-pixel feature matrix (`d × H·W`) for a feature map.
pub fn feature_matrix(f: &FeatureMap) -> DMatrix<f64> {
    DMatrix::from_iterator(f.dim, f.width * f.height, f.data.iter().map(|&v| v as f64))
}

/// Intermediates of one forward pass, kept for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Input of each layer (`c_in × P`).
    inputs: Vec<DMatrix<f64>>,
    /// Convolution output before modulation (`c_out × P`).
    pre: Vec<DMatrix<f64>>,
    /// Modulated output before the activation.
    modulated: Vec<DMatrix<f64>>,
    gammas: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

impl ForwardPass {
    pub fn probabilities(&self) -> Vec<f64> {
        self.logits.iter().map(|&l| sigmoid(l)).collect()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_inputs(decoder: &FilmDecoder, x: &DMatrix<f64>, embedding: &[f64]) -> Result<()> {
    if x.nrows() != decoder.input_dim {
        return Err(Error::shape(format!("features have {} channels, decoder expects {}", x.nrows(), decoder.input_dim)));
    }
    if embedding.len() != decoder.embed_dim {
        return Err(Error::shape(format!("embedding has {} values, decoder expects {}", embedding.len(), decoder.embed_dim)));
    }
    Ok(())
}

/// Forward pass on a `d × P` pixel matrix.
pub fn forward_matrix(decoder: &FilmDecoder, x: &DMatrix<f64>, embedding: &[f64]) -> Result<ForwardPass> {
    check_inputs(decoder, x, embedding)?;
    let n = decoder.layers.len();
    let mut pass =
        ForwardPass { inputs: Vec::with_capacity(n), pre: Vec::new(), modulated: Vec::new(), gammas: Vec::new(), logits: vec![] };
    let mut cur = x.clone();
    for (li, l) in decoder.layers.iter().enumerate() {
        let mut z = l.weight_t().tr_mul(&cur);
        for (o, mut row) in z.row_iter_mut().enumerate() {
            row.add_scalar_mut(l.conv_bias[o]);
        }
        let (g, b) = l.modulation(embedding);
        let mut m = z.clone();
        for (o, mut row) in m.row_iter_mut().enumerate() {
            row.iter_mut().for_each(|v| *v = g[o] * *v + b[o]);
        }
        let next = if li + 1 < n { m.map(|v| if v < 0.0 { 0.0 } else { v }) } else { m.clone() };
        pass.inputs.push(std::mem::replace(&mut cur, next));
        pass.pre.push(z);
        pass.modulated.push(m);
        pass.gammas.push(g);
    }
    pass.logits = cur.row(0).iter().copied().collect();
    Ok(pass)
}

/// Per-pixel logits for an H×W×d feature map.
pub fn film_forward(decoder: &FilmDecoder, features: &FeatureMap, embedding: &[f64]) -> Result<(Grid<f64>, Grid<f64>)> {
    let pass = forward_matrix(decoder, &feature_matrix(features), embedding)?;
    let probs = pass.probabilities();
    Ok((Grid::from_vec(features.width, features.height, pass.logits)?, Grid::from_vec(features.width, features.height, probs)?))
}

/// Affordance probabilities in [0, 1].
pub fn predict(decoder: &FilmDecoder, features: &FeatureMap, embedding: &[f64]) -> Result<Grid<f64>> {
    film_forward(decoder, features, embedding).map(|(_, p)| p)
}

/// Mean binary cross-entropy, computed from logits as
/// `max(ℓ,0) − ℓ·t + ln(1 + e^{−|ℓ|})`.
pub fn bce_loss(logits: &[f64], target: &[f64]) -> f64 {
    assert_eq!(logits.len(), target.len(), "logits and target sizes differ");
    if logits.is_empty() {
        return 0.0;
    }
    let s: f64 = logits.iter().zip(target).map(|(&l, &t)| l.max(0.0) - l * t + (-l.abs()).exp().ln_1p()).sum();
    s / logits.len() as f64
}

/// Exact gradients of `bce_loss(forward(x, e), target)` with respect to
/// every parameter, given that forward pass.
pub fn backward(decoder: &FilmDecoder, pass: &ForwardPass, embedding: &[f64], target: &[f64]) -> Result<Gradients> {
    let p = pass.logits.len();
    if target.len() != p {
        return Err(Error::shape(format!("target has {} pixels, forward pass has {p}", target.len())));
    }
    let mut grads = decoder.zeros_like();
    // ∂L/∂ℓ for the mean loss
    let mut upstream = DMatrix::from_iterator(1, p, pass.logits.iter().zip(target).map(|(&l, &t)| (sigmoid(l) - t) / p as f64));
    for li in (0..decoder.layers.len()).rev() {
        let l = &decoder.layers[li];
        let g = &mut grads.layers[li];
        // through the activation
        if li + 1 < decoder.layers.len() {
            upstream.zip_apply(&pass.modulated[li], |d, m| {
                if m <= 0.0 {
                    *d = 0.0
                }
            });
        }
        let dm = upstream;
        let mut dz = dm.clone();
        for o in 0..l.c_out {
            let row_dm = dm.row(o);
            let dgamma: f64 = row_dm.dot(&pass.pre[li].row(o));
            let dbeta: f64 = row_dm.sum();
            g.gamma_bias[o] = dgamma;
            g.beta_bias[o] = dbeta;
            for k in 0..l.embed_dim {
                g.gamma_weight[o * l.embed_dim + k] = dgamma * embedding[k];
                g.beta_weight[o * l.embed_dim + k] = dbeta * embedding[k];
            }
            dz.row_mut(o).scale_mut(pass.gammas[li][o]);
            g.conv_bias[o] = dz.row(o).sum();
        }
        // row-major dW is column-major (x · dzᵀ)
        let dw_t = &pass.inputs[li] * dz.transpose();
        g.conv_weight.copy_from_slice(dw_t.as_slice());
        upstream = if li > 0 { l.weight_t() * &dz } else { DMatrix::zeros(0, 0) };
    }
    Ok(grads)
}

/// Loss and gradients for one image.
pub fn loss_and_gradients(decoder: &FilmDecoder, x: &DMatrix<f64>, embedding: &[f64], target: &[f64]) -> Result<(f64, Gradients)> {
    let pass = forward_matrix(decoder, x, embedding)?;
    let loss = bce_loss(&pass.logits, target);
    Ok((loss, backward(decoder, &pass, embedding, target)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_decoder(d: usize, e: usize, plan: &[usize], seed: u64) -> FilmDecoder {
        let mut dec = FilmDecoder::with_plan(d, e, plan, FilmInit::Identity, seed);
        let mut rng = seed::rng(seed, "test/perturb");
        for l in &mut dec.layers {
            for p in l.params_mut() {
                p.iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
            }
        }
        dec
    }

    fn random_features(w: usize, h: usize, d: usize, seed: u64) -> FeatureMap {
        let mut rng = seed::rng(seed, "test/features");
        FeatureMap::from_vec(w, h, d, (0..w * h * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap()
    }

    /// Independent scalar evaluation of one pixel.
    fn scalar_pixel(dec: &FilmDecoder, x: &[f64], e: &[f64]) -> f64 {
        let mut cur = x.to_vec();
        for (li, l) in dec.layers.iter().enumerate() {
            let mut next = vec![0.0; l.c_out];
            for o in 0..l.c_out {
                let mut z = l.conv_bias[o];
                for i in 0..l.c_in {
                    z += l.conv_weight[o * l.c_in + i] * cur[i];
                }
                let mut g = l.gamma_bias[o];
                let mut b = l.beta_bias[o];
                for k in 0..l.embed_dim {
                    g += l.gamma_weight[o * l.embed_dim + k] * e[k];
                    b += l.beta_weight[o * l.embed_dim + k] * e[k];
                }
                let m = g * z + b;
                next[o] = if li + 1 < dec.layers.len() { m.max(0.0) } else { m };
            }
            cur = next;
        }
        cur[0]
    }

    #[test]
    fn zero_network_gives_half() {
        let mut dec = FilmDecoder::new(4, 3, FilmInit::Identity, 0);
        for l in &mut dec.layers {
            l.conv_weight.iter_mut().for_each(|w| *w = 0.0);
        }
        let (logits, probs) = film_forward(&dec, &random_features(3, 2, 4, 1), &[0.3, -1.0, 2.0]).unwrap();
        assert!(logits.data.iter().all(|&l| l == 0.0));
        assert!(probs.data.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let dec = random_decoder(4, 3, &[5, 3, 1], 2);
        let f = random_features(2, 2, 4, 3);
        let e = [0.2, -0.7, 0.4];
        let (logits, _) = film_forward(&dec, &f, &e).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                let x: Vec<f64> = f.pixel(r, c).iter().map(|&v| v as f64).collect();
                assert!((logits.get(r, c) - scalar_pixel(&dec, &x, &e)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_pixels_identical_outputs() {
        let dec = FilmDecoder::new(4, 2, FilmInit::Identity, 5);
        let mut f = random_features(3, 1, 4, 6);
        let first = f.pixel(0, 0).to_vec();
        f.pixel_mut(0, 2).copy_from_slice(&first);
        let (l, _) = film_forward(&dec, &f, &[1.0, 0.5]).unwrap();
        assert_eq!(l.get(0, 0), l.get(0, 2));
    }

    #[test]
    fn dimension_mismatch() {
        let dec = FilmDecoder::new(4, 2, FilmInit::Identity, 0);
        assert!(film_forward(&dec, &random_features(2, 2, 5, 0), &[0.0, 0.0]).is_err());
        assert!(film_forward(&dec, &random_features(2, 2, 4, 0), &[0.0]).is_err());
    }

    #[test]
    fn bce_examples() {
        assert!((bce_loss(&[0.0], &[0.5]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_loss(&[20.0], &[1.0]) - 2.061e-9).abs() < 1e-12);
        let mut rng = seed::rng(1, "bce");
        let l: Vec<f64> = (0..16).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let t: Vec<f64> = (0..16).map(|_| rng.gen_range(0.0..1.0)).collect();
        let naive: f64 = l
            .iter()
            .zip(&t)
            .map(|(&l, &t)| {
                let s = 1.0 / (1.0 + (-l).exp());
                -(t * s.ln() + (1.0 - t) * (1.0 - s).ln())
            })
            .sum::<f64>()
            / 16.0;
        assert!((bce_loss(&l, &t) - naive).abs() < 1e-9);
        assert!(bce_loss(&[1e4, -1e4], &[0.0, 1.0]).is_finite());
    }

    #[test]
    fn single_pixel_closed_form() {
        // one layer, one channel: ℓ = (gw·e + gb)(w·x + b) + bw·e + bb
        let mut dec = FilmDecoder::with_plan(1, 1, &[1], FilmInit::Identity, 0);
        let l = &mut dec.layers[0];
        (l.conv_weight[0], l.conv_bias[0], l.gamma_weight[0], l.gamma_bias[0], l.beta_weight[0], l.beta_bias[0]) =
            (0.7, -0.2, 0.3, 1.1, -0.4, 0.05);
        let (x, e, t) = (1.5, 0.8, 1.0);
        let z = 0.7 * x - 0.2;
        let g = 0.3 * e + 1.1;
        let logit = g * z + (-0.4 * e + 0.05);
        let r = sigmoid(logit) - t;
        let (_, grads) = loss_and_gradients(&dec, &DMatrix::from_element(1, 1, x), &[e], &[t]).unwrap();
        let gl = &grads.layers[0];
        let expect = [r * g * x, r * g, r * z * e, r * z, r * e, r];
        let got = [gl.conv_weight[0], gl.conv_bias[0], gl.gamma_weight[0], gl.gamma_bias[0], gl.beta_weight[0], gl.beta_bias[0]];
        for (a, b) in got.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14, "{got:?} vs {expect:?}");
        }
    }

    #[test]
    fn stationary_target_zero_gradient() {
        let dec = random_decoder(3, 2, &[4, 3, 1], 9);
        let x = feature_matrix(&random_features(2, 2, 3, 10));
        let e = [0.5, -0.5];
        let target = forward_matrix(&dec, &x, &e).unwrap().probabilities();
        let (_, g) = loss_and_gradients(&dec, &x, &e, &target).unwrap();
        for l in &g.layers {
            for p in l.params() {
                assert!(p.iter().all(|v| v.abs() < 1e-10));
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (d, e_dim) = (8, 4);
        let dec = random_decoder(d, e_dim, &[6, 5, 1], 11);
        let x = feature_matrix(&random_features(4, 4, d, 12));
        let mut rng = seed::rng(13, "fd");
        let e: Vec<f64> = (0..e_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t: Vec<f64> = (0..16).map(|_| rng.gen_range(0.0..1.0)).collect();
        let (_, g) = loss_and_gradients(&dec, &x, &e, &t).unwrap();
        let h = 1e-4;
        let loss = |dec: &FilmDecoder| bce_loss(&forward_matrix(dec, &x, &e).unwrap().logits, &t);
        let mut worst: f64 = 0.0;
        for li in 0..dec.layers.len() {
            for pi in 0..6 {
                for k in 0..dec.layers[li].params()[pi].len() {
                    let mut plus = dec.clone();
                    plus.layers[li].params_mut()[pi][k] += h;
                    let mut minus = dec.clone();
                    minus.layers[li].params_mut()[pi][k] -= h;
                    let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                    let an = g.layers[li].params()[pi][k];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                    worst = worst.max(rel);
                    assert!(rel <= 1e-4, "layer {li} {} [{k}]: analytic {an}, numeric {fd}", PARAM_NAMES[pi]);
                }
            }
        }
        assert!(worst <= 1e-4);
    }

    #[test]
    fn identity_film_equals_plain_stack() {
        let dec = FilmDecoder::new(4, 3, FilmInit::Identity, 3);
        let f = random_features(3, 3, 4, 4);
        let (a, _) = film_forward(&dec, &f, &[0.9, -0.1, 0.4]).unwrap();
        let (b, _) = film_forward(&dec, &f, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_embedding_untrained_conv_constant_map() {
        let mut dec = FilmDecoder::new(4, 3, FilmInit::Identity, 3);
        for l in &mut dec.layers {
            l.conv_weight.iter_mut().for_each(|w| *w = 0.0);
            l.conv_bias.iter_mut().for_each(|b| *b = 0.25);
        }
        let p = predict(&dec, &random_features(3, 3, 4, 4), &[0.0; 3]).unwrap();
        assert!(p.data.iter().all(|&v| v == p.data[0]));
    }

    #[test]
    fn permuting_pixels_permutes_output() {
        let dec = random_decoder(3, 2, &[4, 3, 1], 20);
        let f = random_features(4, 2, 3, 21);
        let perm = [5, 2, 7, 0, 1, 6, 4, 3];
        let mut g = f.clone();
        for (dst, &src) in perm.iter().enumerate() {
            g.data[dst * 3..dst * 3 + 3].copy_from_slice(&f.data[src * 3..src * 3 + 3]);
        }
        let e = [0.3, 0.1];
        let (a, _) = film_forward(&dec, &f, &e).unwrap();
        let (b, _) = film_forward(&dec, &g, &e).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            assert_eq!(b.data[dst], a.data[src]);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dec = random_decoder(5, 3, &[7, 4, 1], 30);
        let b = dec.to_bundle(serde_json::json!({ "epoch": 3 })).unwrap();
        assert_eq!(b.meta["epoch"], 3);
        assert_eq!(FilmDecoder::from_bundle(&Bundle::decode(&b.encode().unwrap()).unwrap()).unwrap(), dec);
    }

    #[test]
    fn literal_init_sets_all_ones() {
        let dec = FilmDecoder::new(4, 3, FilmInit::Literal, 0);
        assert!(dec.layers.iter().all(|l| l.gamma_weight.iter().all(|&v| v == 1.0) && l.gamma_bias.iter().all(|&v| v == 0.0)));
        assert_eq!(dec.plan(), LAYER_PLAN.to_vec());
    }
}
