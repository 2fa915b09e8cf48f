//! Finite-difference verification of every analytic gradient path of the model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{BlockId, BranchMode, ReaderConfig, ReaderModel, Routing};
use crate::error::Result;
use crate::nn::gradcheck::{grad_check, GradCheckReport, FD_STEP};
use crate::nn::{bce_loss, log_mae_loss};

/// Tolerance on the maximum relative error.
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Points closer than this to a kink (ReLU, zone boundary, |ŷ − y| = 0) are redrawn.
const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradSuiteReport {
    /// `(component, merged report)`: router, calibrator, stack, window_close.
    pub components: Vec<(&'static str, GradCheckReport)>,
    /// Accepted points per component and seed.
    pub points: usize,
    pub seeds: Vec<u64>,
}

impl GradSuiteReport {
    pub fn passed(&self) -> bool {
        self.components.iter().all(|(_, r)| r.passed() && r.checked > 0)
    }
}

fn features(rng: &mut ChaCha8Rng, fields: usize) -> Vec<u64> {
    (0..fields).map(|_| rng.random()).collect()
}

fn far_target(rng: &mut ChaCha8Rng, y_hat: f64) -> f64 {
    // at least a factor e^0.2 away in log space so the loss is smooth around the point
    let k: f64 = rng.random_range(0.2..2.0);
    if rng.random::<bool>() {
        (y_hat + 1.0) * k.exp() - 1.0
    } else {
        ((y_hat + 1.0) * (-k).exp() - 1.0).max(0.0)
    }
}

fn smooth_target(y_hat: f64, target: f64) -> bool {
    (y_hat.ln_1p() - target.ln_1p()).abs() > KINK_MARGIN
}

/// Checks router (BCE), calibrator (absolute gap error), the shared-bottom
/// dual stack under hybrid and oracle routing (log-MAE) and the window-close
/// objective at `points` differentiable points for each seed.
pub fn gradient_suite(base: &ReaderConfig, seeds: &[u64], points: usize) -> Result<GradSuiteReport> {
    let mut router = GradCheckReport::empty(GRAD_TOLERANCE);
    let mut calibrator = GradCheckReport::empty(GRAD_TOLERANCE);
    let mut stack = GradCheckReport::empty(GRAD_TOLERANCE);
    let mut close = GradCheckReport::empty(GRAD_TOLERANCE);
    let attempts = points * 50;
    for &seed in seeds {
        let config = ReaderConfig {
            branch_mode: BranchMode::DualShared,
            init_seed: seed,
            ..base.clone()
        };
        let mut m = ReaderModel::<f64>::new(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x9c);
        let (tau_low, tau_high) = (m.config().tau_low, m.config().tau_high);
        let fields = m.config().fields;

        let mut done = 0;
        for _ in 0..attempts {
            if done == points {
                break;
            }
            let x = features(&mut rng, fields);
            let label = rng.random::<bool>();
            let rtr = m.block(BlockId::Router).expect("dual model");
            if rtr.forward(&x, &[])?.relu_margin(rtr) < KINK_MARGIN {
                continue;
            }
            let (_, g) = m.router_grads(&x, label)?;
            let flat = m.flatten_grads(&g);
            let r = grad_check(&mut m, &flat, |mm| bce_loss(mm.router_probability(&x).unwrap(), label).0, FD_STEP, GRAD_TOLERANCE);
            router = router.merge(r);
            done += 1;
        }

        let mut done = 0;
        for _ in 0..attempts {
            if done == points {
                break;
            }
            let x = features(&mut rng, fields);
            let dt: f64 = rng.random();
            let n = rng.random_range(1..8usize);
            let cal = m.block(BlockId::Calibrator).expect("dual model");
            if cal.forward(&x, &[dt, n as f64 / 10.0])?.relu_margin(cal) < KINK_MARGIN {
                continue;
            }
            let gap_hat = m.calibrator_gap(&x, dt, n)?;
            let gap = gap_hat + rng.random_range(0.05..1.0) * if rng.random() { 1.0 } else { -1.0 };
            let (_, g) = m.calibrator_grads(&x, dt, n, gap)?;
            let flat = m.flatten_grads(&g);
            let c = grad_check(
                &mut m,
                &flat,
                |mm| (mm.calibrator_gap(&x, dt, n).unwrap() - gap).abs(),
                FD_STEP,
                GRAD_TOLERANCE,
            );
            calibrator = calibrator.merge(c);
            done += 1;
        }

        let mut done = 0;
        for i in 0..attempts {
            if done == points {
                break;
            }
            let x = features(&mut rng, fields);
            if m.relu_margin(&x)? < KINK_MARGIN {
                continue;
            }
            let routing = match i % 3 {
                0 => Routing::Hybrid,
                1 => Routing::Oracle(1),
                _ => Routing::Oracle(2),
            };
            if routing == Routing::Hybrid {
                let r = m.router_probability(&x)?;
                if (r - tau_low).abs() < KINK_MARGIN || (r - tau_high).abs() < KINK_MARGIN {
                    continue;
                }
            }
            let y_hat = m.predict(&x, routing)?.y_hat;
            let target = far_target(&mut rng, y_hat);
            if !smooth_target(y_hat, target) {
                continue;
            }
            let (_, g, _) = m.regression_grads(&x, target, routing)?;
            let flat = m.flatten_grads(&g);
            let s = grad_check(
                &mut m,
                &flat,
                |mm| log_mae_loss(mm.predict(&x, routing).unwrap().y_hat, target).unwrap().0,
                FD_STEP,
                GRAD_TOLERANCE,
            );
            stack = stack.merge(s);
            done += 1;
        }

        let (lambda_gra, lambda_plu) = (m.config().lambda_gra, m.config().lambda_plu);
        let mut done = 0;
        for _ in 0..attempts {
            if done == points {
                break;
            }
            let x = features(&mut rng, fields);
            if m.relu_margin(&x)? < KINK_MARGIN {
                continue;
            }
            let n = rng.random_range(1..5usize);
            let y_hat = m.oracle_route_predict(&x, n)?.y_hat;
            let y_star = far_target(&mut rng, y_hat);
            let cached = far_target(&mut rng, y_hat);
            if !smooth_target(y_hat, y_star) || !smooth_target(y_hat, cached) {
                continue;
            }
            let (_, _, g) = m.window_close_grads(&x, n, y_star, Some(cached), lambda_gra, lambda_plu)?;
            let flat = m.flatten_grads(&g);
            let w = grad_check(
                &mut m,
                &flat,
                |mm| {
                    let y = mm.oracle_route_predict(&x, n).unwrap().y_hat;
                    lambda_gra * (log_mae_loss(y, y_star).unwrap().0 - lambda_plu * log_mae_loss(y, cached).unwrap().0)
                },
                FD_STEP,
                GRAD_TOLERANCE,
            );
            close = close.merge(w);
            done += 1;
        }
    }
    Ok(GradSuiteReport {
        components: vec![
            ("router", router),
            ("calibrator", calibrator),
            ("stack", stack),
            ("window_close", close),
        ],
        points,
        seeds: seeds.to_vec(),
    })
}
