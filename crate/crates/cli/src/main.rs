use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use gmvlab::config::{parse_cell, ExperimentConfig};
use gmvlab::experiment::{cmd_ablate, cmd_analyze, cmd_generate, cmd_train, ordering_checks};
use gmvlab::reader::gradient_suite;

#[derive(Parser)]
#[command(name = "gmvlab", version, about = "Delayed-feedback GMV prediction laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `section.key = value` config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the generator seed (generate) or the seed list (train, ablate, gradcheck).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Writes a synthetic click dataset as JSONL.
    Generate(Common),
    /// Hourly trend, cumulative GMV fraction, histograms and KS test of a dataset.
    Analyze {
        dataset: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Trains one regime for one seed.
    Train {
        /// Cell label `regime/branch/routing/debias`, e.g. `online_reader/dual_shared/hybrid/c+g+p`.
        #[arg(long)]
        regime: String,
        #[command(flatten)]
        common: Common,
    },
    /// Runs the configured grid of regimes and seeds.
    Ablate(Common),
    /// Verifies analytic gradients against central differences.
    Gradcheck {
        /// Differentiable points per component and seed.
        #[arg(long, default_value_t = 10)]
        points: usize,
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(common) => {
            let mut cfg = load(&common)?;
            if let Some(s) = common.seed {
                cfg.generator.seed = s;
            }
            let path = common.out.clone().unwrap_or_else(|| Path::new(&cfg.output.dir).join("dataset.jsonl"));
            let n = cmd_generate(&cfg, &path)?;
            println!("wrote {n} clicks to {}", path.display());
        }
        Command::Analyze { dataset, common } => {
            let cfg = load(&common)?;
            let out = out_dir(&common, &cfg);
            let s = cmd_analyze(&dataset, &cfg.generator.attribution(), &out)?;
            println!("samples            {}", s.samples);
            println!("repurchase share   {:.4}", s.repurchase_fraction);
            println!("instant GMV share  {:.4}", s.instant_fraction);
            match s.ks {
                Some(k) => println!("KS statistic {:.4}, p-value {:.3e}", k.statistic, k.p_value),
                None => println!("KS test skipped: one population is empty"),
            }
            println!("CSVs written to {}", out.display());
        }
        Command::Train { regime, common } => {
            let cfg = load(&common)?;
            let regime = parse_cell(&regime)?;
            let seed = common.seed.unwrap_or(cfg.training.seeds[0]);
            let out = out_dir(&common, &cfg);
            let t = cmd_train(&cfg, &regime, seed, &out)?;
            let (m, stats) = t.row.result.as_ref().map_err(|e| anyhow::anyhow!("{e}"))?;
            println!("{} seed {seed} lr {}", regime.label(), t.row.learning_rate.unwrap_or(f64::NAN));
            println!("auc {} acc {:.4} alpr {:.4} n {}", m.auc_field(), m.acc, m.alpr, m.n_samples);
            println!("updates {} plu used {} skipped {}", stats.updates, stats.plu_used, stats.plu_skipped);
            let zones: Vec<String> = t.zones.iter().map(|(k, v)| format!("{k} {v}")).collect();
            println!("zones {}", zones.join(", "));
            println!("checkpoint {}", t.checkpoint.display());
        }
        Command::Ablate(common) => {
            let mut cfg = load(&common)?;
            if let Some(s) = common.seed {
                cfg.training.seeds = vec![s];
            }
            let out = out_dir(&common, &cfg);
            let (result, summary) = cmd_ablate(&cfg, &out)?;
            let failed = result.rows.iter().filter(|r| r.result.is_err()).count();
            println!("{} cells, {failed} failed; outputs in {}", result.rows.len(), out.display());
            for c in ordering_checks(&summary) {
                println!("[{}] {}: {}", if c.passed { "ok" } else { "no" }, c.name, c.detail);
            }
        }
        Command::Gradcheck { points, common } => {
            let cfg = load(&common)?;
            let seeds = match common.seed {
                Some(s) => vec![s],
                None => vec![1, 2, 3],
            };
            let r = gradient_suite(&cfg.model, &seeds, points)?;
            for (name, rep) in &r.components {
                println!(
                    "{name:<13} checked {:>7}  max rel error {:.3e}  {}",
                    rep.checked,
                    rep.max_rel_error,
                    if rep.passed() { "ok" } else { "FAILED" }
                );
            }
            if !r.passed() {
                bail!("gradient check failed");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
