//! Central finite-difference verification of analytic gradients.

use crate::nn::layers::NetworkParams;
use crate::scalar::Scalar;

/// Default perturbation for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of the relative error so zero gradients compare absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Anything whose parameters can be addressed by a flat index.
pub trait Parameters<S> {
    fn param_count(&self) -> usize;
    fn param_mut(&mut self, index: usize) -> &mut S;
}

impl<S: Scalar> Parameters<S> for NetworkParams<S> {
    fn param_count(&self) -> usize {
        NetworkParams::param_count(self)
    }

    fn param_mut(&mut self, index: usize) -> &mut S {
        NetworkParams::param_mut(self, index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub worst: Option<Mismatch>,
    pub failures: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// Combines reports of several points or networks.
    pub fn merge(mut self, other: GradCheckReport) -> GradCheckReport {
        self.checked += other.checked;
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
        self.failures.extend(other.failures);
        self
    }

    pub fn empty(tolerance: f64) -> GradCheckReport {
        GradCheckReport {
            checked: 0,
            tolerance,
            max_rel_error: 0.0,
            worst: None,
            failures: Vec::new(),
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `analytic` gradient entries `(flat index, value)` with central
/// differences of `loss`. Parameters absent from `analytic` are assumed to have
/// zero gradient and are not perturbed. Never aborts; mismatches are reported.
pub fn grad_check<S, M, F>(
    model: &mut M,
    analytic: &[(usize, S)],
    loss: F,
    step: f64,
    tolerance: f64,
) -> GradCheckReport
where
    S: Scalar,
    M: Parameters<S>,
    F: Fn(&M) -> S,
{
    let mut report = GradCheckReport::empty(tolerance);
    let h = S::lit(step);
    for &(index, a) in analytic {
        let original = *model.param_mut(index);
        *model.param_mut(index) = original + h;
        let plus = loss(model);
        *model.param_mut(index) = original - h;
        let minus = loss(model);
        *model.param_mut(index) = original;
        let numeric = ((plus - minus) / (h + h)).as_f64();
        let analytic = a.as_f64();
        let rel = relative_error(analytic, numeric);
        let m = Mismatch {
            index,
            analytic,
            numeric,
            rel_error: rel,
        };
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = rel.max(report.max_rel_error);
            report.worst = Some(m.clone());
        }
        if !(rel < tolerance) {
            report.failures.push(m);
        }
        report.checked += 1;
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::{Activation, BlockSpec};
    use crate::nn::loss::log_mae_loss;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block(seed: u64) -> NetworkParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        NetworkParams::new(
            &BlockSpec {
                embedding: Some((3, 8, 4)),
                extra_inputs: 2,
                hidden: vec![6, 5],
                outputs: 1,
                hidden_activation: Activation::Relu,
                output_activation: Activation::Softplus,
            },
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn block_gradients_pass() {
        let x = [3u64, 1, 4];
        let extra = [0.25, -0.5];
        for seed in 0..5 {
            let mut p = block(seed);
            let t = p.forward(&x, &extra).unwrap();
            if t.relu_margin(&p) < 1e-3 {
                continue;
            }
            let (_, g) = log_mae_loss(t.output[0], 9.0).unwrap();
            let (grads, _) = p.backward(&t, &[g]).unwrap();
            let flat = p.flatten_grads(&grads);
            let report = grad_check(
                &mut p,
                &flat,
                |m: &NetworkParams<f64>| log_mae_loss(m.forward(&x, &extra).unwrap().output[0], 9.0).unwrap().0,
                FD_STEP,
                1e-4,
            );
            assert!(report.passed(), "{report:?}");
            assert!(report.checked > 50);
        }
    }

    #[test]
    fn constant_network_has_zero_gradients() {
        let mut p = block(1);
        for l in p.layers_mut() {
            l.weights_mut().iter_mut().for_each(|w| *w = 0.0);
        }
        let x = [0u64, 0, 0];
        let extra = [1.0, 1.0];
        let t = p.forward(&x, &extra).unwrap();
        let (grads, _) = p.backward(&t, &[1.0]).unwrap();
        let flat = p.flatten_grads(&grads);
        let report = grad_check(&mut p, &flat, |m: &NetworkParams<f64>| m.forward(&x, &extra).unwrap().output[0], FD_STEP, 1e-4);
        assert!(report.passed());
        let emb_len = p.embedding().unwrap().weights.len();
        // nothing upstream of the zeroed weights can influence the output
        assert!(flat.iter().filter(|(i, _)| *i < emb_len).all(|(_, g)| *g == 0.0));
        assert!(report.checked > 0);
    }

    #[test]
    fn corrupted_backward_is_reported() {
        let x = [3u64, 1, 4];
        let extra = [0.25, -0.5];
        let mut p = block(2);
        let t = p.forward(&x, &extra).unwrap();
        let (mut grads, _) = p.backward(&t, &[1.0]).unwrap();
        grads.layers[0].0[0] += 0.5;
        let flat = p.flatten_grads(&grads);
        let report = grad_check(&mut p, &flat, |m: &NetworkParams<f64>| m.forward(&x, &extra).unwrap().output[0], FD_STEP, 1e-4);
        assert!(!report.passed());
        assert!(report.max_rel_error > 1e-2);
    }
}
