//! The dual-branch predictor with its sample router and label calibrator.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::gradcheck::Parameters;
use crate::nn::loss::{bce_loss, log_mae_loss, mae_loss};
use crate::nn::{Activation, AdamState, BlockGrads, BlockSpec, NetworkParams, Trace};
use crate::scalar::Scalar;

/// How the predictor is split into branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchMode {
    /// One tower for every sample.
    Single,
    /// Two towers on a shared, trainable bottom.
    DualShared,
    /// Two completely separate stacks.
    DualIndependent,
    /// Two towers on a shared bottom that is frozen after pretraining.
    DualFrozenBottom,
}

impl BranchMode {
    pub fn is_dual(self) -> bool {
        self != BranchMode::Single
    }

    pub fn name(self) -> &'static str {
        match self {
            BranchMode::Single => "single",
            BranchMode::DualShared => "dual_shared",
            BranchMode::DualIndependent => "dual_independent",
            BranchMode::DualFrozenBottom => "dual_frozen_bottom",
        }
    }

    pub fn parse(s: &str) -> Option<BranchMode> {
        [
            BranchMode::Single,
            BranchMode::DualShared,
            BranchMode::DualIndependent,
            BranchMode::DualFrozenBottom,
        ]
        .into_iter()
        .find(|m| m.name() == s)
    }
}

/// How a prediction picks between the two towers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Routing {
    /// Three-zone routing on the router probability.
    Hybrid,
    /// Single tower below 0.5, repurchase tower at or above.
    Hard,
    /// Route by the true purchase count.
    Oracle(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Zone {
    Single,
    Hybrid,
    Repurchase,
}

impl Zone {
    pub fn name(self) -> &'static str {
        match self {
            Zone::Single => "single",
            Zone::Hybrid => "hybrid",
            Zone::Repurchase => "repurchase",
        }
    }
}

/// Identifies one trainable block of a [`ReaderModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockId {
    Bottom,
    /// Second bottom of the independent variant, feeding the repurchase tower.
    RepurchaseBottom,
    SingleTower,
    RepurchaseTower,
    Router,
    Calibrator,
}

pub const BLOCK_COUNT: usize = 6;

impl BlockId {
    pub const ALL: [BlockId; BLOCK_COUNT] = [
        BlockId::Bottom,
        BlockId::RepurchaseBottom,
        BlockId::SingleTower,
        BlockId::RepurchaseTower,
        BlockId::Router,
        BlockId::Calibrator,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            BlockId::Bottom => "bottom",
            BlockId::RepurchaseBottom => "repurchase_bottom",
            BlockId::SingleTower => "single_tower",
            BlockId::RepurchaseTower => "repurchase_tower",
            BlockId::Router => "router",
            BlockId::Calibrator => "calibrator",
        }
    }

    pub fn parse(s: &str) -> Option<BlockId> {
        BlockId::ALL.into_iter().find(|b| b.name() == s)
    }
}

/// Sizes and hyperparameters of a [`ReaderModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderConfig {
    pub fields: usize,
    pub buckets: usize,
    pub embedding_dim: usize,
    pub bottom_hidden: Vec<usize>,
    pub tower_hidden: Vec<usize>,
    pub router_hidden: Vec<usize>,
    pub calibrator_hidden: Vec<usize>,
    pub temperature: f64,
    pub tau_low: f64,
    pub tau_high: f64,
    pub lambda_gra: f64,
    pub lambda_plu: f64,
    pub branch_mode: BranchMode,
    pub calibrator_frozen: bool,
    pub init_seed: u64,
}

impl Default for ReaderConfig {
    fn default() -> Self {
        ReaderConfig {
            fields: 8,
            buckets: 4096,
            embedding_dim: 8,
            bottom_hidden: vec![64, 32],
            tower_hidden: vec![32],
            router_hidden: vec![64, 32],
            calibrator_hidden: vec![64, 32],
            temperature: 1.0,
            tau_low: 0.1,
            tau_high: 0.9,
            lambda_gra: 0.1,
            lambda_plu: 0.5,
            branch_mode: BranchMode::DualShared,
            calibrator_frozen: true,
            init_seed: 0,
        }
    }
}

impl ReaderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0 < self.tau_low && self.tau_low < self.tau_high && self.tau_high < 1.0) {
            return bad("routing thresholds need 0 < tau_low < tau_high < 1");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if !(self.lambda_gra >= 0.0 && self.lambda_plu >= 0.0) {
            return bad("loss weights must be nonnegative");
        }
        if self.fields == 0 || self.buckets == 0 || self.embedding_dim == 0 {
            return bad("fields, buckets and embedding_dim must be positive");
        }
        if self.bottom_hidden.is_empty() {
            return bad("the shared bottom needs at least one layer");
        }
        Ok(())
    }

    fn embedded(&self) -> Option<(usize, usize, usize)> {
        Some((self.fields, self.buckets, self.embedding_dim))
    }

    fn bottom_spec(&self) -> BlockSpec {
        let (hidden, last) = self.bottom_hidden.split_at(self.bottom_hidden.len() - 1);
        BlockSpec {
            embedding: self.embedded(),
            extra_inputs: 0,
            hidden: hidden.to_vec(),
            outputs: last[0],
            hidden_activation: Activation::Relu,
            output_activation: Activation::Relu,
        }
    }

    fn tower_spec(&self) -> BlockSpec {
        BlockSpec {
            embedding: None,
            extra_inputs: *self.bottom_hidden.last().expect("validated"),
            hidden: self.tower_hidden.clone(),
            outputs: 1,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Softplus,
        }
    }

    fn router_spec(&self) -> BlockSpec {
        BlockSpec {
            embedding: self.embedded(),
            extra_inputs: 0,
            hidden: self.router_hidden.clone(),
            outputs: 1,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Identity,
        }
    }

    fn calibrator_spec(&self) -> BlockSpec {
        BlockSpec {
            embedding: self.embedded(),
            extra_inputs: 2,
            hidden: self.calibrator_hidden.clone(),
            outputs: 1,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Softplus,
        }
    }
}

/// Output of one routed prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutedPrediction<S> {
    pub y_hat: S,
    pub y_s: S,
    pub y_r: S,
    /// Router probability; for oracle routing the purchase indicator.
    pub r: S,
    pub zone: Zone,
}

/// Three-zone mixing: `(weight of single tower, weight of repurchase tower, zone)`.
pub fn three_zone_weights<S: Scalar>(r: S, tau_low: S, tau_high: S) -> (S, S, Zone) {
    if r <= tau_low {
        (S::one(), S::zero(), Zone::Single)
    } else if r < tau_high {
        (S::one() - r, r, Zone::Hybrid)
    } else {
        (S::zero(), S::one(), Zone::Repurchase)
    }
}

/// Combines the tower outputs with three-zone routing.
pub fn route_three_zone<S: Scalar>(r: S, y_s: S, y_r: S, tau_low: S, tau_high: S) -> RoutedPrediction<S> {
    let (ws, wr, zone) = three_zone_weights(r, tau_low, tau_high);
    let y_hat = match zone {
        Zone::Single => y_s,
        Zone::Repurchase => y_r,
        Zone::Hybrid => ws * y_s + wr * y_r,
    };
    RoutedPrediction { y_hat, y_s, y_r, r, zone }
}

/// Hard routing at 0.5: the repurchase tower wins ties.
pub fn route_hard<S: Scalar>(r: S, y_s: S, y_r: S) -> RoutedPrediction<S> {
    if r < S::lit(0.5) {
        RoutedPrediction { y_hat: y_s, y_s, y_r, r, zone: Zone::Single }
    } else {
        RoutedPrediction { y_hat: y_r, y_s, y_r, r, zone: Zone::Repurchase }
    }
}

/// Gradients for every block of a model; `None` means the block was not on the
/// computation path.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads<S> {
    pub blocks: [Option<BlockGrads<S>>; BLOCK_COUNT],
}

impl<S: Scalar> Default for ModelGrads<S> {
    fn default() -> Self {
        ModelGrads {
            blocks: Default::default(),
        }
    }
}

impl<S: Scalar> ModelGrads<S> {
    pub fn get(&self, id: BlockId) -> Option<&BlockGrads<S>> {
        self.blocks[id.index()].as_ref()
    }

    fn accumulate(&mut self, id: BlockId, g: BlockGrads<S>) {
        match &mut self.blocks[id.index()] {
            Some(acc) => acc.add_scaled(&g, S::one()),
            slot @ None => *slot = Some(g),
        }
    }

    /// `self += k * other`.
    pub fn add_scaled(&mut self, other: &ModelGrads<S>, k: S) {
        for (slot, o) in self.blocks.iter_mut().zip(&other.blocks) {
            if let Some(o) = o {
                match slot {
                    Some(acc) => acc.add_scaled(o, k),
                    None => {
                        let mut g = o.clone();
                        g.scale(k);
                        *slot = Some(g);
                    }
                }
            }
        }
    }

    pub fn scale(&mut self, k: S) {
        self.blocks.iter_mut().flatten().for_each(|g| g.scale(k));
    }
}

/// Recorded forward pass through bottom(s) and towers.
struct TowerPass<S> {
    bottom: Trace<S>,
    repurchase_bottom: Option<Trace<S>>,
    single: Trace<S>,
    repurchase: Option<Trace<S>>,
}

impl<S: Scalar> TowerPass<S> {
    fn y_s(&self) -> S {
        self.single.output[0]
    }

    fn y_r(&self) -> S {
        self.repurchase.as_ref().map_or(self.y_s(), |t| t.output[0])
    }
}

/// The repurchase-aware dual-branch predictor, sample router and label calibrator.
#[derive(Debug, Clone, PartialEq)]
pub struct ReaderModel<S> {
    config: ReaderConfig,
    blocks: [Option<NetworkParams<S>>; BLOCK_COUNT],
}

impl<S: Scalar> ReaderModel<S> {
    /// Builds a freshly initialised model; each block draws from its own stream.
    pub fn new(config: ReaderConfig) -> Result<Self> {
        config.validate()?;
        let mut blocks: [Option<NetworkParams<S>>; BLOCK_COUNT] = Default::default();
        let dual = config.branch_mode.is_dual();
        for id in BlockId::ALL {
            let spec = match id {
                BlockId::Bottom => config.bottom_spec(),
                BlockId::RepurchaseBottom if config.branch_mode == BranchMode::DualIndependent => {
                    config.bottom_spec()
                }
                BlockId::SingleTower => config.tower_spec(),
                BlockId::RepurchaseTower if dual => config.tower_spec(),
                BlockId::Router if dual => config.router_spec(),
                BlockId::Calibrator if dual => config.calibrator_spec(),
                _ => continue,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
            rng.set_stream(id.index() as u64);
            blocks[id.index()] = Some(NetworkParams::new(&spec, &mut rng)?);
        }
        Ok(ReaderModel { config, blocks })
    }

    pub(crate) fn from_blocks(config: ReaderConfig, blocks: [Option<NetworkParams<S>>; BLOCK_COUNT]) -> Result<Self> {
        config.validate()?;
        let model = ReaderModel { config, blocks };
        let needs = |id: BlockId| match id {
            BlockId::Bottom | BlockId::SingleTower => true,
            BlockId::RepurchaseBottom => model.config.branch_mode == BranchMode::DualIndependent,
            _ => model.config.branch_mode.is_dual(),
        };
        for id in BlockId::ALL {
            if needs(id) != model.blocks[id.index()].is_some() {
                return Err(Error::Config(format!("block {} does not match the branch mode", id.name())));
            }
        }
        Ok(model)
    }

    /// Reinterprets the parameters under another branch mode with the same
    /// block layout (shared and frozen-bottom models differ only in training).
    pub fn with_branch_mode(self, mode: BranchMode) -> Result<Self> {
        let config = ReaderConfig {
            branch_mode: mode,
            ..self.config
        };
        Self::from_blocks(config, self.blocks)
    }

    pub fn config(&self) -> &ReaderConfig {
        &self.config
    }

    pub fn branch_mode(&self) -> BranchMode {
        self.config.branch_mode
    }

    pub fn block(&self, id: BlockId) -> Option<&NetworkParams<S>> {
        self.blocks[id.index()].as_ref()
    }

    pub fn block_mut(&mut self, id: BlockId) -> Option<&mut NetworkParams<S>> {
        self.blocks[id.index()].as_mut()
    }

    pub fn blocks(&self) -> impl Iterator<Item = (BlockId, &NetworkParams<S>)> {
        BlockId::ALL
            .into_iter()
            .filter_map(|id| self.blocks[id.index()].as_ref().map(|b| (id, b)))
    }

    fn need(&self, id: BlockId) -> &NetworkParams<S> {
        self.blocks[id.index()]
            .as_ref()
            .expect("block required by the branch mode is present")
    }

    fn tau(&self) -> (S, S) {
        (S::lit(self.config.tau_low), S::lit(self.config.tau_high))
    }

    fn temperature(&self) -> S {
        S::lit(self.config.temperature)
    }

    fn tower_pass(&self, features: &[u64]) -> Result<TowerPass<S>> {
        let bottom = self.need(BlockId::Bottom).forward(features, &[])?;
        let single = self.need(BlockId::SingleTower).forward_dense(&bottom.output)?;
        let (repurchase_bottom, repurchase) = match self.config.branch_mode {
            BranchMode::Single => (None, None),
            BranchMode::DualIndependent => {
                let rb = self.need(BlockId::RepurchaseBottom).forward(features, &[])?;
                let rt = self.need(BlockId::RepurchaseTower).forward_dense(&rb.output)?;
                (Some(rb), Some(rt))
            }
            BranchMode::DualShared | BranchMode::DualFrozenBottom => {
                let rt = self.need(BlockId::RepurchaseTower).forward_dense(&bottom.output)?;
                (None, Some(rt))
            }
        };
        Ok(TowerPass {
            bottom,
            repurchase_bottom,
            single,
            repurchase,
        })
    }

    fn router_trace(&self, features: &[u64]) -> Result<Trace<S>> {
        match self.block(BlockId::Router) {
            Some(router) => router.forward(features, &[]),
            None => Err(Error::Usage("single-branch model has no router".into())),
        }
    }

    /// `sigmoid(f(Emb(x)) / T)`.
    pub fn router_probability(&self, features: &[u64]) -> Result<S> {
        let z = self.router_trace(features)?.output[0];
        Ok((z / self.temperature()).sigmoid())
    }

    /// Tower outputs `(y_s, y_r)`; a single-branch model reports its one tower twice.
    pub fn tower_outputs(&self, features: &[u64]) -> Result<(S, S)> {
        let pass = self.tower_pass(features)?;
        Ok((pass.y_s(), pass.y_r()))
    }

    /// Three-zone routed prediction.
    pub fn route_predict(&self, features: &[u64]) -> Result<RoutedPrediction<S>> {
        self.predict(features, Routing::Hybrid)
    }

    pub fn hard_route_predict(&self, features: &[u64]) -> Result<RoutedPrediction<S>> {
        self.predict(features, Routing::Hard)
    }

    /// Routes by the true purchase count; the router is not consulted.
    pub fn oracle_route_predict(&self, features: &[u64], purchases: usize) -> Result<RoutedPrediction<S>> {
        self.predict(features, Routing::Oracle(purchases))
    }

    pub fn predict(&self, features: &[u64], routing: Routing) -> Result<RoutedPrediction<S>> {
        let pass = self.tower_pass(features)?;
        self.combine(features, &pass, routing).map(|(p, _)| p)
    }

    fn combine(
        &self,
        features: &[u64],
        pass: &TowerPass<S>,
        routing: Routing,
    ) -> Result<(RoutedPrediction<S>, Option<Trace<S>>)> {
        let (y_s, y_r) = (pass.y_s(), pass.y_r());
        if !self.config.branch_mode.is_dual() {
            if let Routing::Oracle(0) = routing {
                return Err(Error::Usage("purchase count must be >= 1".into()));
            }
            let p = RoutedPrediction { y_hat: y_s, y_s, y_r, r: S::zero(), zone: Zone::Single };
            return Ok((p, None));
        }
        match routing {
            Routing::Oracle(0) => Err(Error::Usage("purchase count must be >= 1".into())),
            Routing::Oracle(1) => Ok((RoutedPrediction { y_hat: y_s, y_s, y_r, r: S::zero(), zone: Zone::Single }, None)),
            Routing::Oracle(_) => Ok((RoutedPrediction { y_hat: y_r, y_s, y_r, r: S::one(), zone: Zone::Repurchase }, None)),
            Routing::Hybrid | Routing::Hard => {
                let trace = self.router_trace(features)?;
                let r = (trace.output[0] / self.temperature()).sigmoid();
                let p = if routing == Routing::Hybrid {
                    let (lo, hi) = self.tau();
                    route_three_zone(r, y_s, y_r, lo, hi)
                } else {
                    route_hard(r, y_s, y_r)
                };
                Ok((p, Some(trace)))
            }
        }
    }

    /// Log-MAE of the routed prediction against a constant `target`, with
    /// gradients for every block on the prediction path (router included in the
    /// hybrid zone).
    pub fn regression_grads(
        &self,
        features: &[u64],
        target: S,
        routing: Routing,
    ) -> Result<(S, ModelGrads<S>, RoutedPrediction<S>)> {
        let pass = self.tower_pass(features)?;
        let (pred, router_trace) = self.combine(features, &pass, routing)?;
        let (loss, g) = log_mae_loss(pred.y_hat, target)?;
        let grads = self.prediction_backward(&pass, &pred, router_trace.as_ref(), routing, g)?;
        Ok((loss, grads, pred))
    }

    /// Window-close step objective `lambda_gra * (|log1p(y) - log1p(y*)| - lambda_plu * |log1p(y) - log1p(cached)|)`
    /// under oracle routing. A missing cache drops the unlearning term.
    /// Returns `(gra, plu, grads)` with the unweighted component losses.
    pub fn window_close_grads(
        &self,
        features: &[u64],
        purchases: usize,
        y_star: S,
        cached: Option<S>,
        lambda_gra: S,
        lambda_plu: S,
    ) -> Result<(S, Option<S>, ModelGrads<S>)> {
        let routing = Routing::Oracle(purchases);
        let pass = self.tower_pass(features)?;
        let (pred, _) = self.combine(features, &pass, routing)?;
        let (gra, g_gra) = log_mae_loss(pred.y_hat, y_star)?;
        let (plu, g_plu) = match cached {
            Some(c) => {
                let (l, g) = log_mae_loss(pred.y_hat, c)?;
                (Some(l), g)
            }
            None => (None, S::zero()),
        };
        let g = lambda_gra * (g_gra - lambda_plu * g_plu);
        let grads = self.prediction_backward(&pass, &pred, None, routing, g)?;
        Ok((gra, plu, grads))
    }

    /// Backpropagates `d loss / d y_hat` through the routed prediction.
    fn prediction_backward(
        &self,
        pass: &TowerPass<S>,
        pred: &RoutedPrediction<S>,
        router_trace: Option<&Trace<S>>,
        routing: Routing,
        g: S,
    ) -> Result<ModelGrads<S>> {
        let mut grads = ModelGrads::default();
        let (ws, wr) = if !self.config.branch_mode.is_dual() {
            (S::one(), S::zero())
        } else {
            match pred.zone {
                Zone::Single => (S::one(), S::zero()),
                Zone::Repurchase => (S::zero(), S::one()),
                Zone::Hybrid => (S::one() - pred.r, pred.r),
            }
        };
        let mut bottom_grad: Option<Vec<S>> = None;
        let mut add_bottom = |v: Vec<S>| match &mut bottom_grad {
            Some(acc) => acc.iter_mut().zip(&v).for_each(|(a, b)| *a += *b),
            None => bottom_grad = Some(v),
        };
        if pred.zone != Zone::Repurchase || !self.config.branch_mode.is_dual() {
            let (tg, dx) = self.need(BlockId::SingleTower).backward(&pass.single, &[g * ws])?;
            grads.accumulate(BlockId::SingleTower, tg);
            add_bottom(dx);
        }
        let mut repurchase_bottom_grad = None;
        if self.config.branch_mode.is_dual() && pred.zone != Zone::Single {
            let trace = pass.repurchase.as_ref().expect("dual model has a repurchase tower");
            let (tg, dx) = self.need(BlockId::RepurchaseTower).backward(trace, &[g * wr])?;
            grads.accumulate(BlockId::RepurchaseTower, tg);
            if self.config.branch_mode == BranchMode::DualIndependent {
                repurchase_bottom_grad = Some(dx);
            } else {
                add_bottom(dx);
            }
        }
        if let Some(dx) = bottom_grad {
            let (bg, _) = self.need(BlockId::Bottom).backward(&pass.bottom, &dx)?;
            grads.accumulate(BlockId::Bottom, bg);
        }
        if let (Some(dx), Some(trace)) = (repurchase_bottom_grad, pass.repurchase_bottom.as_ref()) {
            let (bg, _) = self.need(BlockId::RepurchaseBottom).backward(trace, &dx)?;
            grads.accumulate(BlockId::RepurchaseBottom, bg);
        }
        if pred.zone == Zone::Hybrid && routing == Routing::Hybrid {
            if let Some(trace) = router_trace {
                let r = pred.r;
                let dz = g * (pred.y_r - pred.y_s) * r * (S::one() - r) / self.temperature();
                let (rg, _) = self.need(BlockId::Router).backward(trace, &[dz])?;
                grads.accumulate(BlockId::Router, rg);
            }
        }
        Ok(grads)
    }

    /// Cross-entropy of the router against the repurchase indicator.
    pub fn router_grads(&self, features: &[u64], repurchase: bool) -> Result<(S, ModelGrads<S>)> {
        let trace = self.router_trace(features)?;
        let t = self.temperature();
        let r = (trace.output[0] / t).sigmoid();
        let (loss, g_logit) = bce_loss(r, repurchase);
        let (rg, _) = self.need(BlockId::Router).backward(&trace, &[g_logit / t])?;
        let mut grads = ModelGrads::default();
        grads.accumulate(BlockId::Router, rg);
        Ok((loss, grads))
    }

    fn calibrator_inputs(delta_t: S, purchases_so_far: usize) -> Result<[S; 2]> {
        if !(delta_t >= S::zero() && delta_t <= S::one()) {
            return Err(Error::Usage(format!("elapsed fraction {delta_t} outside [0, 1]")));
        }
        if purchases_so_far == 0 {
            return Err(Error::Usage("calibrator needs at least one observed purchase".into()));
        }
        Ok([delta_t, S::lit(purchases_so_far as f64 / 10.0)])
    }

    fn calibrator_block(&self) -> Result<&NetworkParams<S>> {
        self.block(BlockId::Calibrator)
            .ok_or_else(|| Error::Usage("single-branch model has no calibrator".into()))
    }

    /// Predicted log-space gap between the partial and the final label.
    pub fn calibrator_gap(&self, features: &[u64], delta_t: S, purchases_so_far: usize) -> Result<S> {
        let extra = Self::calibrator_inputs(delta_t, purchases_so_far)?;
        Ok(self.calibrator_block()?.forward(features, &extra)?.output[0])
    }

    /// Absolute error of the predicted gap against the true gap.
    pub fn calibrator_grads(
        &self,
        features: &[u64],
        delta_t: S,
        purchases_so_far: usize,
        true_gap: S,
    ) -> Result<(S, ModelGrads<S>)> {
        let extra = Self::calibrator_inputs(delta_t, purchases_so_far)?;
        let block = self.calibrator_block()?;
        let trace = block.forward(features, &extra)?;
        let (loss, g) = mae_loss(trace.output[0], true_gap);
        let (cg, _) = block.backward(&trace, &[g])?;
        let mut grads = ModelGrads::default();
        grads.accumulate(BlockId::Calibrator, cg);
        Ok((loss, grads))
    }

    /// Blocks that may move during online learning.
    pub fn online_trainable(&self, id: BlockId) -> bool {
        match id {
            BlockId::Calibrator => !self.config.calibrator_frozen,
            BlockId::Bottom => self.config.branch_mode != BranchMode::DualFrozenBottom,
            _ => true,
        }
    }

    /// Order-sensitive hash of every parameter bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (id, b) in self.blocks() {
            h.write_usize(id.index());
            b.for_each_param(|v| h.write_u64(v.as_f64().to_bits()));
        }
        h.finish()
    }

    /// Minimum |pre-activation| over ReLU units touched by a prediction.
    pub fn relu_margin(&self, features: &[u64]) -> Result<S> {
        let pass = self.tower_pass(features)?;
        let mut m = pass.bottom.relu_margin(self.need(BlockId::Bottom));
        m = m.min(pass.single.relu_margin(self.need(BlockId::SingleTower)));
        if let Some(t) = &pass.repurchase {
            m = m.min(t.relu_margin(self.need(BlockId::RepurchaseTower)));
        }
        if let Some(t) = &pass.repurchase_bottom {
            m = m.min(t.relu_margin(self.need(BlockId::RepurchaseBottom)));
        }
        if let Some(router) = self.block(BlockId::Router) {
            m = m.min(router.forward(features, &[])?.relu_margin(router));
        }
        Ok(m)
    }

    /// Flattens model gradients to indices of the [`Parameters`] view.
    pub fn flatten_grads(&self, grads: &ModelGrads<S>) -> Vec<(usize, S)> {
        let mut out = Vec::new();
        let mut offset = 0;
        for (id, b) in self.blocks() {
            if let Some(g) = grads.get(id) {
                out.extend(b.flatten_grads(g).into_iter().map(|(i, v)| (offset + i, v)));
            }
            offset += b.param_count();
        }
        out
    }
}

impl<S: Scalar> Parameters<S> for ReaderModel<S> {
    fn param_count(&self) -> usize {
        self.blocks().map(|(_, b)| b.param_count()).sum()
    }

    fn param_mut(&mut self, mut index: usize) -> &mut S {
        for b in self.blocks.iter_mut().flatten() {
            let n = b.param_count();
            if index < n {
                return b.param_mut(index);
            }
            index -= n;
        }
        panic!("parameter index out of range")
    }
}

/// One Adam state per block.
#[derive(Debug, Clone)]
pub struct ReaderOptimizer<S> {
    states: [Option<AdamState<S>>; BLOCK_COUNT],
}

impl<S: Scalar> ReaderOptimizer<S> {
    pub fn new(model: &ReaderModel<S>, learning_rate: S) -> Self {
        let mut states: [Option<AdamState<S>>; BLOCK_COUNT] = Default::default();
        for (id, b) in model.blocks() {
            states[id.index()] = Some(AdamState::new(b, learning_rate));
        }
        ReaderOptimizer { states }
    }

    pub fn state(&self, id: BlockId) -> Option<&AdamState<S>> {
        self.states[id.index()].as_ref()
    }

    /// Steps every block that has gradients and passes `trainable`.
    pub fn apply(&mut self, model: &mut ReaderModel<S>, grads: &ModelGrads<S>, trainable: impl Fn(BlockId) -> bool) {
        for id in BlockId::ALL {
            if !trainable(id) {
                continue;
            }
            if let (Some(g), Some(state), Some(block)) = (
                grads.blocks[id.index()].as_ref(),
                self.states[id.index()].as_mut(),
                model.blocks[id.index()].as_mut(),
            ) {
                state.step(block, g);
            }
        }
    }
}
