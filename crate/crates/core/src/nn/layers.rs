//! Hashed embedding tables, dense layers and the trainable block built from them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Softplus,
}

impl Activation {
    pub fn apply<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(S::zero()),
            Activation::Sigmoid => z.sigmoid(),
            Activation::Softplus => z.softplus(),
        }
    }

    /// d(activation)/dz at pre-activation `z`.
    pub fn derivative<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Identity => S::one(),
            Activation::Relu => {
                if z > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Sigmoid => {
                let s = z.sigmoid();
                s * (S::one() - s)
            }
            Activation::Softplus => z.sigmoid(),
        }
    }
}

/// SplitMix64 finaliser; a fixed mixing function so bucket assignment is stable across runs.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One `buckets x dim` table per categorical field, addressed by the hashing trick.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<S> {
    pub(crate) fields: usize,
    pub(crate) buckets: usize,
    pub(crate) dim: usize,
    /// Row-major `[field][bucket][dim]`.
    pub(crate) weights: Vec<S>,
}

impl<S: Scalar> EmbeddingTable<S> {
    pub fn new(fields: usize, buckets: usize, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if fields == 0 || buckets == 0 || dim == 0 {
            return Err(Error::Config("embedding needs fields, buckets and dim > 0".into()));
        }
        // one-hot lookups have fan-in 1
        let weights = (0..fields * buckets * dim)
            .map(|_| S::lit(rng.random_range(-1.0..1.0)))
            .collect();
        Ok(EmbeddingTable {
            fields,
            buckets,
            dim,
            weights,
        })
    }

    pub fn fields(&self) -> usize {
        self.fields
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn output_len(&self) -> usize {
        self.fields * self.dim
    }

    pub fn bucket(&self, field: usize, raw_id: u64) -> usize {
        (mix64(mix64(field as u64) ^ raw_id) % self.buckets as u64) as usize
    }

    /// Global row indices (`field * buckets + bucket`) selected by a feature list.
    pub fn rows(&self, features: &[u64]) -> Vec<usize> {
        features
            .iter()
            .enumerate()
            .map(|(f, &id)| f * self.buckets + self.bucket(f, id))
            .collect()
    }

    pub fn row(&self, row: usize) -> &[S] {
        &self.weights[row * self.dim..(row + 1) * self.dim]
    }

    pub(crate) fn row_mut(&mut self, row: usize) -> &mut [S] {
        &mut self.weights[row * self.dim..(row + 1) * self.dim]
    }

    /// Concatenation of the selected per-field rows.
    pub fn embed(&self, features: &[u64]) -> Vec<S> {
        let mut out = Vec::with_capacity(self.output_len());
        for r in self.rows(features) {
            out.extend_from_slice(self.row(r));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<S> {
    pub(crate) inputs: usize,
    pub(crate) outputs: usize,
    /// Row-major `[output][input]`.
    pub(crate) weights: Vec<S>,
    pub(crate) bias: Vec<S>,
    pub(crate) activation: Activation,
}

impl<S: Scalar> Dense<S> {
    pub fn new(inputs: usize, outputs: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut draw = || S::lit(rng.random_range(-bound..bound));
        let weights = (0..inputs * outputs).map(|_| draw()).collect();
        let bias = (0..outputs).map(|_| draw()).collect();
        Dense {
            inputs,
            outputs,
            weights,
            bias,
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn bias_mut(&mut self) -> &mut [S] {
        &mut self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [S] {
        &mut self.weights
    }

    fn pre_activation(&self, x: &[S]) -> Vec<S> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &xi)| acc + w * xi))
            .collect()
    }
}

/// Shape of a block: optional hashed embedding, extra numeric inputs, dense stack.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    /// `(fields, buckets, dim)`; `None` for blocks fed by another block's output.
    pub embedding: Option<(usize, usize, usize)>,
    /// Plain numeric inputs appended after the embedding (or the whole input when
    /// there is no embedding).
    pub extra_inputs: usize,
    pub hidden: Vec<usize>,
    pub outputs: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl BlockSpec {
    pub fn input_len(&self) -> usize {
        self.embedding.map_or(0, |(f, _, d)| f * d) + self.extra_inputs
    }
}

/// Parameters of one trainable block: embedding tables plus dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<S> {
    pub(crate) embedding: Option<EmbeddingTable<S>>,
    pub(crate) extra_inputs: usize,
    pub(crate) layers: Vec<Dense<S>>,
}

/// Intermediates recorded by a forward pass and consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct Trace<S> {
    rows: Vec<usize>,
    /// Input to each layer.
    inputs: Vec<Vec<S>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<S>>,
    pub output: Vec<S>,
}

impl<S: Scalar> Trace<S> {
    /// Smallest |pre-activation| over ReLU units; gradient checks stay away from zero.
    pub fn relu_margin(&self, params: &NetworkParams<S>) -> S {
        params
            .layers
            .iter()
            .zip(&self.pre)
            .filter(|(l, _)| l.activation == Activation::Relu)
            .flat_map(|(_, z)| z.iter().map(|v| v.abs()))
            .fold(S::infinity(), S::min)
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }
}

/// Gradients of one block. Embedding gradients are sparse: only rows touched by
/// the forward pass appear.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrads<S> {
    pub layers: Vec<(Vec<S>, Vec<S>)>,
    pub embedding_rows: Vec<(usize, Vec<S>)>,
}

impl<S: Scalar> BlockGrads<S> {
    pub fn zeros_like(params: &NetworkParams<S>) -> Self {
        BlockGrads {
            layers: params
                .layers
                .iter()
                .map(|l| (vec![S::zero(); l.weights.len()], vec![S::zero(); l.bias.len()]))
                .collect(),
            embedding_rows: Vec::new(),
        }
    }

    /// `self += k * other`, merging sparse rows.
    pub fn add_scaled(&mut self, other: &BlockGrads<S>, k: S) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(a, &o)| *a += k * o);
            b.iter_mut().zip(ob).for_each(|(a, &o)| *a += k * o);
        }
        for (row, g) in &other.embedding_rows {
            match self.embedding_rows.iter_mut().find(|(r, _)| r == row) {
                Some((_, acc)) => acc.iter_mut().zip(g).for_each(|(a, &o)| *a += k * o),
                None => self
                    .embedding_rows
                    .push((*row, g.iter().map(|&o| k * o).collect())),
            }
        }
    }

    pub fn scale(&mut self, k: S) {
        for (w, b) in &mut self.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v *= k);
        }
        for (_, g) in &mut self.embedding_rows {
            g.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b))
            .chain(self.embedding_rows.iter().flat_map(|(_, g)| g))
            .all(|v| *v == S::zero())
    }
}

impl<S: Scalar> NetworkParams<S> {
    pub fn new(spec: &BlockSpec, rng: &mut impl Rng) -> Result<Self> {
        if spec.outputs == 0 {
            return Err(Error::Config("block needs at least one output".into()));
        }
        if spec.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        let input = spec.input_len();
        if input == 0 {
            return Err(Error::Config("block has no inputs".into()));
        }
        let embedding = spec
            .embedding
            .map(|(f, b, d)| EmbeddingTable::new(f, b, d, rng))
            .transpose()?;
        let mut layers = Vec::with_capacity(spec.hidden.len() + 1);
        let mut fan_in = input;
        for &h in &spec.hidden {
            layers.push(Dense::new(fan_in, h, spec.hidden_activation, rng));
            fan_in = h;
        }
        layers.push(Dense::new(fan_in, spec.outputs, spec.output_activation, rng));
        Ok(NetworkParams {
            embedding,
            extra_inputs: spec.extra_inputs,
            layers,
        })
    }

    /// Assembles a block from explicit parts, checking that shapes chain.
    pub fn from_parts(
        embedding: Option<EmbeddingTable<S>>,
        extra_inputs: usize,
        layers: Vec<Dense<S>>,
    ) -> Result<Self> {
        let mut expected = embedding.as_ref().map_or(0, |e| e.output_len()) + extra_inputs;
        if layers.is_empty() {
            return Err(Error::Config("block needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.inputs != expected || l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Config(format!(
                    "layer {i} expects {} inputs but receives {expected}",
                    l.inputs
                )));
            }
            expected = l.outputs;
        }
        if let Some(e) = &embedding {
            if e.weights.len() != e.fields * e.buckets * e.dim {
                return Err(Error::Config("embedding table size mismatch".into()));
            }
        }
        Ok(NetworkParams {
            embedding,
            extra_inputs,
            layers,
        })
    }

    pub fn embedding(&self) -> Option<&EmbeddingTable<S>> {
        self.embedding.as_ref()
    }

    pub fn layers(&self) -> &[Dense<S>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<S>] {
        &mut self.layers
    }

    pub fn input_len(&self) -> usize {
        self.embedding.as_ref().map_or(0, |e| e.output_len()) + self.extra_inputs
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    /// Forward pass from categorical features plus extra numeric inputs.
    pub fn forward(&self, features: &[u64], extra: &[S]) -> Result<Trace<S>> {
        let (rows, mut input) = match &self.embedding {
            Some(e) => {
                if features.len() != e.fields {
                    return Err(Error::Usage(format!(
                        "expected {} feature fields, got {}",
                        e.fields,
                        features.len()
                    )));
                }
                (e.rows(features), e.embed(features))
            }
            None => (Vec::new(), Vec::new()),
        };
        if extra.len() != self.extra_inputs {
            return Err(Error::Usage(format!(
                "expected {} numeric inputs, got {}",
                self.extra_inputs,
                extra.len()
            )));
        }
        input.extend_from_slice(extra);
        Ok(self.run_layers(rows, input))
    }

    /// Forward pass for a block without an embedding.
    pub fn forward_dense(&self, input: &[S]) -> Result<Trace<S>> {
        self.forward(&[], input)
    }

    fn run_layers(&self, rows: Vec<usize>, input: Vec<S>) -> Trace<S> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input;
        for layer in &self.layers {
            let z = layer.pre_activation(&x);
            let out: Vec<S> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            inputs.push(x);
            pre.push(z);
            x = out;
        }
        Trace {
            rows,
            inputs,
            pre,
            output: x,
        }
    }

    /// Reverse-mode pass. Returns parameter gradients and the gradient with
    /// respect to the numeric (non-embedding) inputs.
    pub fn backward(&self, trace: &Trace<S>, grad_output: &[S]) -> Result<(BlockGrads<S>, Vec<S>)> {
        if grad_output.len() != self.output_len() || trace.pre.len() != self.layers.len() {
            return Err(Error::Usage("backward called with a trace from another block".into()));
        }
        let mut grads = BlockGrads::zeros_like(self);
        let mut upstream = grad_output.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let z = &trace.pre[li];
            let x = &trace.inputs[li];
            let delta: Vec<S> = upstream
                .iter()
                .zip(z)
                .map(|(&g, &zi)| g * layer.activation.derivative(zi))
                .collect();
            let (gw, gb) = &mut grads.layers[li];
            let mut down = vec![S::zero(); layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                gb[o] += d;
                if d == S::zero() {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let grow = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for i in 0..layer.inputs {
                    grow[i] += d * x[i];
                    down[i] += d * row[i];
                }
            }
            upstream = down;
        }
        let emb_len = match &self.embedding {
            Some(e) => {
                for (f, &row) in trace.rows.iter().enumerate() {
                    let g = upstream[f * e.dim..(f + 1) * e.dim].to_vec();
                    grads.embedding_rows.push((row, g));
                }
                e.output_len()
            }
            None => 0,
        };
        Ok((grads, upstream[emb_len..].to_vec()))
    }

    pub fn param_count(&self) -> usize {
        self.embedding.as_ref().map_or(0, |e| e.weights.len())
            + self
                .layers
                .iter()
                .map(|l| l.weights.len() + l.bias.len())
                .sum::<usize>()
    }

    /// Visits every parameter in a fixed order: embedding, then per layer weights and bias.
    pub fn for_each_param(&self, mut f: impl FnMut(S)) {
        if let Some(e) = &self.embedding {
            e.weights.iter().for_each(|&v| f(v));
        }
        for l in &self.layers {
            l.weights.iter().chain(&l.bias).for_each(|&v| f(v));
        }
    }

    /// Mutable access to the parameter at a flat index of [`Self::for_each_param`].
    pub fn param_mut(&mut self, mut index: usize) -> &mut S {
        if let Some(e) = &mut self.embedding {
            if index < e.weights.len() {
                return &mut e.weights[index];
            }
            index -= e.weights.len();
        }
        for l in &mut self.layers {
            if index < l.weights.len() {
                return &mut l.weights[index];
            }
            index -= l.weights.len();
            if index < l.bias.len() {
                return &mut l.bias[index];
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range")
    }

    /// Flattens gradients to `(flat index, value)` pairs matching [`Self::param_mut`].
    pub fn flatten_grads(&self, grads: &BlockGrads<S>) -> Vec<(usize, S)> {
        let mut out = Vec::new();
        let mut offset = 0;
        if let Some(e) = &self.embedding {
            for (row, g) in &grads.embedding_rows {
                for (k, &v) in g.iter().enumerate() {
                    out.push((row * e.dim + k, v));
                }
            }
            offset = e.weights.len();
        }
        for (l, (gw, gb)) in self.layers.iter().zip(&grads.layers) {
            for (k, &v) in gw.iter().enumerate() {
                out.push((offset + k, v));
            }
            offset += l.weights.len();
            for (k, &v) in gb.iter().enumerate() {
                out.push((offset + k, v));
            }
            offset += l.bias.len();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(hidden: Vec<usize>, out_act: Activation) -> BlockSpec {
        BlockSpec {
            embedding: Some((3, 16, 4)),
            extra_inputs: 2,
            hidden,
            outputs: 1,
            hidden_activation: Activation::Relu,
            output_activation: out_act,
        }
    }

    #[test]
    fn embed_shape_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = EmbeddingTable::<f64>::new(5, 32, 8, &mut rng).unwrap();
        let x = [1, 2, 3, 4, 5];
        assert_eq!(t.embed(&x).len(), 40);
        assert_eq!(t.embed(&x), t.embed(&x));
    }

    #[test]
    fn colliding_ids_share_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = EmbeddingTable::<f64>::new(1, 4, 3, &mut rng).unwrap();
        let b0 = t.bucket(0, 0);
        let other = (1..100u64).find(|&id| t.bucket(0, id) == b0).unwrap();
        assert_eq!(t.embed(&[0]), t.embed(&[other]));
    }

    #[test]
    fn zero_weights_identity_head_outputs_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = NetworkParams::<f64>::new(&spec(vec![4], Activation::Identity), &mut rng).unwrap();
        for l in p.layers_mut() {
            l.weights_mut().iter_mut().for_each(|w| *w = 0.0);
        }
        p.layers_mut()[1].bias_mut()[0] = 3.25;
        let out = p.forward(&[1, 2, 3], &[0.5, -1.0]).unwrap().output;
        assert_eq!(out, vec![3.25]);
    }

    #[test]
    fn softplus_head_of_zero_is_ln2() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = NetworkParams::<f64>::new(&spec(vec![], Activation::Softplus), &mut rng).unwrap();
        p.layers_mut()[0].weights_mut().iter_mut().for_each(|w| *w = 0.0);
        p.layers_mut()[0].bias_mut()[0] = 0.0;
        let y = p.forward(&[0, 0, 0], &[1.0, 1.0]).unwrap().output[0];
        assert!((y - std::f64::consts::LN_2).abs() < 1e-15);
    }

    /// Evaluates the same algebra from the raw parameter arrays with explicit loops.
    fn reference_forward(p: &NetworkParams<f64>, features: &[u64], extra: &[f64]) -> Vec<f64> {
        let e = p.embedding().unwrap();
        let mut x = Vec::new();
        for (f, &id) in features.iter().enumerate() {
            let b = e.bucket(f, id);
            let start = (f * e.buckets() + b) * e.dim();
            x.extend_from_slice(&e.weights[start..start + e.dim()]);
        }
        x.extend_from_slice(extra);
        for l in p.layers() {
            let mut y = vec![0.0; l.outputs()];
            for o in 0..l.outputs() {
                let mut acc = l.bias[o];
                for i in 0..l.inputs() {
                    acc += l.weights[o * l.inputs() + i] * x[i];
                }
                y[o] = match l.activation() {
                    Activation::Identity => acc,
                    Activation::Relu => if acc > 0.0 { acc } else { 0.0 },
                    Activation::Sigmoid => 1.0 / (1.0 + (-acc).exp()),
                    Activation::Softplus => (1.0 + acc.exp()).ln(),
                };
            }
            x = y;
        }
        x
    }

    #[test]
    fn forward_matches_reference_evaluator() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = NetworkParams::<f64>::new(&spec(vec![7, 5], Activation::Softplus), &mut rng).unwrap();
            let x = [seed, seed * 3 + 1, 99];
            let extra = [0.3, -0.7];
            let a = p.forward(&x, &extra).unwrap().output;
            let b = reference_forward(&p, &x, &extra);
            assert!((a[0] - b[0]).abs() < 1e-12, "{a:?} {b:?}");
        }
    }

    #[test]
    fn single_linear_layer_squared_loss_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = BlockSpec {
            embedding: None,
            extra_inputs: 3,
            hidden: vec![],
            outputs: 1,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Identity,
        };
        let p = NetworkParams::<f64>::new(&s, &mut rng).unwrap();
        let x = [0.5, -2.0, 1.5];
        let y = 0.7;
        let t = p.forward_dense(&x).unwrap();
        let pred = t.output[0];
        let (g, gx) = p.backward(&t, &[2.0 * (pred - y)]).unwrap();
        let w = &p.layers()[0].weights;
        for i in 0..3 {
            assert!((g.layers[0].0[i] - 2.0 * (pred - y) * x[i]).abs() < 1e-14);
            assert!((gx[i] - 2.0 * (pred - y) * w[i]).abs() < 1e-14);
        }
        assert!((g.layers[0].1[0] - 2.0 * (pred - y)).abs() < 1e-14);
    }

    #[test]
    fn mismatched_shapes_rejected_at_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Dense::<f64>::new(4, 3, Activation::Relu, &mut rng);
        let b = Dense::<f64>::new(5, 1, Activation::Identity, &mut rng);
        assert!(NetworkParams::from_parts(None, 4, vec![a.clone(), b]).is_err());
        let c = Dense::<f64>::new(3, 1, Activation::Identity, &mut rng);
        assert!(NetworkParams::from_parts(None, 4, vec![a, c]).is_ok());
    }

    #[test]
    fn sparse_rows_only_for_touched_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = NetworkParams::<f64>::new(&spec(vec![4], Activation::Softplus), &mut rng).unwrap();
        let t = p.forward(&[1, 2, 3], &[0.1, 0.2]).unwrap();
        let (g, _) = p.backward(&t, &[1.0]).unwrap();
        let rows: Vec<usize> = g.embedding_rows.iter().map(|(r, _)| *r).collect();
        assert_eq!(rows, t.rows().to_vec());
        assert_eq!(rows.len(), 3);
    }
}
