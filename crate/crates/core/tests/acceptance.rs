//! End-to-end acceptance gate. Runs each criterion in sequence (so the timed
//! ones are not competing with other tests for the CPU) and prints one
//! PASS/FAIL line per criterion.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gmvlab::config::ExperimentConfig;
use gmvlab::datagen::{generate, GeneratorConfig};
use gmvlab::eval::{
    acc_at_20, alpr, cumulative_fraction_curve, hourly_grid, ks_two_sample, pair_counts, regression_auc,
    split_by_repurchase,
};
use gmvlab::experiment::{cmd_ablate, ordering_checks, select_pretrained, GridResult, SeedData};
use gmvlab::reader::{gradient_suite, overall_online_loss, pseudo_label, true_gap, BranchMode, ReaderConfig};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let report = gradient_suite(&ReaderConfig::default(), &[1, 2, 3], 10).expect("gradient suite runs");
    let elapsed = start.elapsed();
    let parts: Vec<String> = report
        .components
        .iter()
        .map(|(n, r)| format!("{n} {:.2e} ({} params)", r.max_rel_error, r.checked))
        .collect();
    outcome(
        report.passed() && elapsed < Duration::from_secs(60),
        format!("{}; {:.1}s", parts.join(", "), elapsed.as_secs_f64()),
    )
}

/// Counts over all label-distinct pairs, doubled so ties stay integral.
fn brute_auc_counts(p: &[f64], y: &[f64]) -> (u64, u64) {
    let (mut num, mut pairs) = (0u64, 0u64);
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            if y[i] == y[j] {
                continue;
            }
            pairs += 1;
            let (hi, lo) = if y[i] > y[j] { (i, j) } else { (j, i) };
            if p[hi] > p[lo] {
                num += 2;
            } else if p[hi] == p[lo] {
                num += 1;
            }
        }
    }
    (num, pairs)
}

fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = rng.random_range(2..=200);
        // coarse grids make ties in both predictions and labels common
        let levels = if case % 2 == 0 { 7 } else { 1000 };
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / 3.0).collect();
        let y: Vec<f64> = (0..n).map(|_| 1.0 + rng.random_range(0..levels) as f64).collect();
        let fast = pair_counts(&p, &y).unwrap();
        let (num, pairs) = brute_auc_counts(&p, &y);
        let brute = (pairs > 0).then(|| num as f64 / (2 * pairs) as f64);
        if (2 * fast.concordant + fast.tied, fast.pairs) != (num, pairs) || regression_auc(&p, &y).unwrap() != brute {
            return outcome(false, format!("AUC mismatch in case {case}"));
        }
        let acc = p.iter().zip(&y).filter(|(p, y)| (*p - *y).abs() / *y <= 0.2).count() as f64 / n as f64;
        let al = p.iter().zip(&y).map(|(p, y)| (p.max(1e-6) / y).log2().abs()).sum::<f64>() / n as f64;
        worst = worst
            .max((acc_at_20(&p, &y).unwrap() - acc).abs())
            .max((alpr(&p, &y).unwrap().value - al).abs());
    }
    let example = regression_auc(&[0.1, 0.4, 0.35, 0.8], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    outcome(
        worst <= 1e-12 && example == Some(5.0 / 6.0),
        format!("100 AUC instances exact, ACC/ALPR max diff {worst:.1e}, worked example {example:?}"),
    )
}

fn calibration_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let y_star: f64 = rng.random_range(0.0..=1e6);
        let y_t = rng.random_range(0.0..=y_star);
        let back = pseudo_label(y_t, true_gap(y_star, y_t).unwrap());
        let rel = if y_star == 0.0 { back.abs() } else { (back - y_star).abs() / y_star };
        worst = worst.max(rel);
    }
    outcome(worst <= 1e-9, format!("max relative error {worst:.2e}"))
}

fn loss_composition() -> Outcome {
    let v = overall_online_loss(1.0, 0.5, 0.2, 0.1, 0.5);
    outcome(v == 1.04, format!("{v:?}"))
}

fn generator_calibration() -> Outcome {
    let cfg = GeneratorConfig::default();
    let samples = generate(&cfg).unwrap();
    let attr = cfg.attribution();
    let repurchase = samples.iter().filter(|s| s.is_repurchase()).count() as f64 / samples.len() as f64;
    let f0 = cumulative_fraction_curve(&samples, &hourly_grid(&attr), &attr).unwrap()[0];
    let (single, rep) = split_by_repurchase(&samples);
    let ks = ks_two_sample(&single, &rep).unwrap();
    outcome(
        (repurchase - 0.5355).abs() <= 0.03 && (f0 - 0.40).abs() <= 0.05 && ks.p_value < 0.01,
        format!("repurchase {repurchase:.4}, f(0) {f0:.4}, KS D {:.4} p {:.2e}", ks.statistic, ks.p_value),
    )
}

fn acceptance_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    // sampled purity checks on every grid cell
    cfg.training.purity_check_every = 50;
    cfg
}

fn orderings(result: &GridResult, elapsed: Duration, summary: &[gmvlab::experiment::SummaryRow]) -> Outcome {
    let checks = ordering_checks(summary);
    let failed = result.rows.iter().filter(|r| r.result.is_err()).count();
    for (c, tag) in checks.iter().zip(['a', 'b', 'c', 'd', 'e']) {
        println!("    6{tag} [{}] {}: {}", if c.passed { "ok" } else { "no" }, c.name, c.detail);
    }
    let passed = checks.iter().all(|c| c.passed) && failed == 0 && elapsed < Duration::from_secs(600);
    outcome(
        passed,
        format!(
            "{}/5 orderings hold, {} cells ({failed} failed), {:.0}s",
            checks.iter().filter(|c| c.passed).count(),
            result.rows.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn router_learnability() -> Outcome {
    let cfg = ExperimentConfig::default();
    let data = SeedData::new(&cfg, 1).unwrap();
    let (model, lr, _) = select_pretrained(&cfg, &data, BranchMode::DualShared).unwrap();
    let r: Vec<f64> = data.pretrain_validation.iter().map(|s| model.router_probability(&s.features).unwrap()).collect();
    let y: Vec<f64> = data.pretrain_validation.iter().map(|s| s.is_repurchase() as u8 as f64).collect();
    let auc = regression_auc(&r, &y).unwrap().unwrap();
    outcome(auc >= 0.75, format!("held-out router AUC {auc:.4} (lr {lr}, n {})", r.len()))
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for name in ["ablation.csv", "summary.csv", "lr_selection.csv", "tables.md"] {
        out.insert(name.to_string(), std::fs::read(dir.join(name)).unwrap());
    }
    for e in std::fs::read_dir(dir.join("logs")).unwrap() {
        let e = e.unwrap();
        out.insert(format!("logs/{}", e.file_name().to_string_lossy()), std::fs::read(e.path()).unwrap());
    }
    out
}

fn determinism(first: &Path, second: &Path) -> Outcome {
    let cfg = acceptance_config();
    cmd_ablate(&cfg, second).unwrap();
    let (a, b) = (read_tree(first), read_tree(second));
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    outcome(
        a.len() == b.len() && differing.is_empty(),
        format!("{} files compared, {} differ", a.len(), differing.len()),
    )
}

/// Counting invariants for every cell of a grid run.
fn stream_invariants(cfg: &ExperimentConfig, result: &GridResult) -> Vec<String> {
    let mut problems = Vec::new();
    let mut by_seed: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    for &seed in &cfg.training.seeds {
        let d = SeedData::new(cfg, seed).unwrap();
        by_seed.insert(seed, (d.online.len(), d.online.iter().map(|s| s.purchases.len()).sum()));
    }
    for row in &result.rows {
        let (n, total) = by_seed[&row.seed];
        match &row.result {
            Err(e) => problems.push(format!("{} seed {}: {e}", row.regime.label(), row.seed)),
            Ok((_, s)) => {
                if s.click_inferences != n || s.window_closes != n || s.purchase_updates != total {
                    problems.push(format!("{} seed {}: {s:?}", row.regime.label(), row.seed));
                }
                if cfg.training.purity_check_every > 0 && s.purity_checks != n.div_ceil(cfg.training.purity_check_every) {
                    problems.push(format!("{} seed {}: {} purity checks", row.regime.label(), row.seed, s.purity_checks));
                }
            }
        }
    }
    problems
}

fn stream_protocol(full_cfg: &ExperimentConfig, full: &GridResult) -> Outcome {
    // every click checked on a smaller grid of all cells
    let mut cfg = ExperimentConfig::default();
    cfg.generator.n_clicks = 3000;
    cfg.model.buckets = 256;
    cfg.training.learning_rates = vec![1e-3];
    cfg.training.seeds = vec![11, 12];
    cfg.training.purity_check_every = 1;
    let dir = tempfile::tempdir().unwrap();
    let (small, _) = cmd_ablate(&cfg, dir.path()).unwrap();
    let mut problems = stream_invariants(full_cfg, full);
    problems.extend(stream_invariants(&cfg, &small));
    outcome(
        problems.is_empty(),
        format!(
            "{} + {} runs checked{}",
            full.rows.len(),
            small.rows.len(),
            problems.first().map_or(String::new(), |p| format!("; first problem: {p}"))
        ),
    )
}

fn main() {
    // `cargo test` passes harness flags such as `--list`; this target has no sub-tests to list
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    let mut report = |id: u8, name: &'static str, o: Outcome| {
        println!("criterion {id} {name}: {} ({})", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };

    report(1, "gradient correctness", gradients());
    report(2, "metric oracle equivalence", metrics());
    report(3, "calibration identity", calibration_identity());
    report(4, "loss composition", loss_composition());
    report(5, "generator calibration", generator_calibration());

    let cfg = acceptance_config();
    let first = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let (grid, summary) = cmd_ablate(&cfg, first.path()).unwrap();
    let elapsed = start.elapsed();
    report(6, "ordering reproduction", orderings(&grid, elapsed, &summary));
    report(7, "router learnability", router_learnability());
    let second = tempfile::tempdir().unwrap();
    report(8, "determinism", determinism(first.path(), second.path()));
    report(9, "stream protocol", stream_protocol(&cfg, &grid));

    let failed: Vec<u8> = results.iter().filter(|r| !r.2.passed).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria pass",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failing criteria: {failed:?}");
        std::process::exit(1);
    }
}
