//! Adam with lazy (row-sparse) updates for embedding tables.

use crate::nn::layers::{BlockGrads, NetworkParams};
use crate::scalar::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment accumulators mirroring one block's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub learning_rate: S,
    pub step: u64,
    layer_m: Vec<(Vec<S>, Vec<S>)>,
    layer_v: Vec<(Vec<S>, Vec<S>)>,
    emb_m: Vec<S>,
    emb_v: Vec<S>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &NetworkParams<S>, learning_rate: S) -> Self {
        let zeros = || -> Vec<(Vec<S>, Vec<S>)> {
            params
                .layers()
                .iter()
                .map(|l| (vec![S::zero(); l.weights.len()], vec![S::zero(); l.bias.len()]))
                .collect()
        };
        let emb = params.embedding().map_or(0, |e| e.weights.len());
        AdamState {
            learning_rate,
            step: 0,
            layer_m: zeros(),
            layer_v: zeros(),
            emb_m: vec![S::zero(); emb],
            emb_v: vec![S::zero(); emb],
        }
    }

    /// One descent step. Embedding rows absent from `grads` are left untouched,
    /// moments included.
    pub fn step(&mut self, params: &mut NetworkParams<S>, grads: &BlockGrads<S>) {
        self.step += 1;
        let (b1, b2, eps) = (S::lit(BETA1), S::lit(BETA2), S::lit(EPSILON));
        let t = self.step as i32;
        let c1 = S::one() - b1.powi(t);
        let c2 = S::one() - b2.powi(t);
        let lr = self.learning_rate;
        let update = |p: &mut S, g: S, m: &mut S, v: &mut S| {
            *m = b1 * *m + (S::one() - b1) * g;
            *v = b2 * *v + (S::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (li, layer) in params.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[li];
            let (mw, mb) = &mut self.layer_m[li];
            let (vw, vb) = &mut self.layer_v[li];
            for k in 0..layer.weights.len() {
                update(&mut layer.weights[k], gw[k], &mut mw[k], &mut vw[k]);
            }
            for k in 0..layer.bias.len() {
                update(&mut layer.bias[k], gb[k], &mut mb[k], &mut vb[k]);
            }
        }
        if let Some(emb) = params.embedding.as_mut() {
            let dim = emb.dim;
            for (row, g) in &grads.embedding_rows {
                let base = row * dim;
                let w = emb.row_mut(*row);
                for k in 0..dim {
                    update(&mut w[k], g[k], &mut self.emb_m[base + k], &mut self.emb_v[base + k]);
                }
            }
        }
    }
}
