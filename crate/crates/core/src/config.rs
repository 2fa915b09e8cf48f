//! Experiment configuration in flat `section.key = value` text form.
//!
//! Lists are comma separated. `#` starts a comment. Keys not set in a file keep
//! their defaults; unknown or repeated keys are rejected.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use crate::datagen::GeneratorConfig;
use crate::error::{Error, Result};
use crate::reader::{BranchMode, ReaderConfig};
use crate::stream::{DebiasFlags, ExperimentSplit, RegimeKind, RoutingMode, TrainingRegime};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSettings {
    pub learning_rates: Vec<f64>,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    /// Share of the pretrain range held out for learning-rate selection.
    pub validation_fraction: f64,
    /// Checksum the model around every k-th click inference; 0 disables.
    pub purity_check_every: usize,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        TrainingSettings {
            learning_rates: vec![1e-2, 1e-3, 1e-4],
            epochs: 1,
            seeds: vec![1, 2, 3, 4, 5],
            validation_fraction: 0.1,
            purity_check_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSettings {
    pub pretrain_start_day: i64,
    pub pretrain_end_day: i64,
    pub online_start_day: i64,
    pub online_end_day: i64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        let s = ExperimentSplit::default();
        SplitSettings {
            pretrain_start_day: s.pretrain_days.0,
            pretrain_end_day: s.pretrain_days.1,
            online_start_day: s.online_days.0,
            online_end_day: s.online_days.1,
        }
    }
}

impl SplitSettings {
    pub fn split(&self) -> ExperimentSplit {
        ExperimentSplit {
            pretrain_days: (self.pretrain_start_day, self.pretrain_end_day),
            online_days: (self.online_start_day, self.online_end_day),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSettings {
    /// Cells as `regime/branch/routing/debias` labels.
    pub cells: Vec<String>,
}

/// The cells needed to compare every baseline and ablation.
pub fn default_cells() -> Vec<String> {
    [
        "pre_only/single/hybrid/none",
        "pre_only/dual_shared/hybrid/none",
        "offline_daily/single/hybrid/none",
        "offline_daily/dual_shared/hybrid/none",
        "online_vanilla/single/hybrid/none",
        "online_vanilla/dual_shared/hybrid/none",
        "oracle_first_purchase/single/hybrid/none",
        "oracle_first_purchase/dual_shared/oracle/none",
        "oracle_first_purchase/dual_frozen_bottom/oracle/none",
        "oracle_first_purchase/dual_independent/oracle/none",
        "online_reader/dual_shared/hybrid/none",
        "online_reader/dual_shared/hybrid/c",
        "online_reader/dual_shared/hybrid/c+g",
        "online_reader/dual_shared/hybrid/c+g+p",
        "online_reader/dual_shared/hard/c+g+p",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings { cells: default_cells() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSettings {
    pub dir: String,
}

impl Default for OutputSettings {
    fn default() -> Self {
        OutputSettings { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    pub model: ReaderConfig,
    pub training: TrainingSettings,
    pub split: SplitSettings,
    pub grid: GridSettings,
    pub output: OutputSettings,
}

/// Parses a `regime/branch/routing/debias` cell label.
pub fn parse_cell(label: &str) -> Result<TrainingRegime> {
    let parts: Vec<&str> = label.trim().split('/').collect();
    let bad = || Error::Config(format!("bad cell label {label:?}; expected regime/branch/routing/debias"));
    let [kind, branch, routing, debias] = parts[..] else {
        return Err(bad());
    };
    TrainingRegime::new(
        RegimeKind::parse(kind).ok_or_else(bad)?,
        BranchMode::parse(branch).ok_or_else(bad)?,
        RoutingMode::parse(routing).ok_or_else(bad)?,
        DebiasFlags::parse(debias).ok_or_else(bad)?,
    )
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.generator.validate()?;
        self.model.validate()?;
        if self.model.fields != self.generator.num_fields() {
            return bad(format!(
                "model.fields = {} but the generator emits {} fields",
                self.model.fields,
                self.generator.num_fields()
            ));
        }
        self.split.split().validate(&self.generator.attribution())?;
        if self.split.online_end_day > self.generator.timeline_days {
            return bad("online range extends past the generated timeline".into());
        }
        let t = &self.training;
        if t.learning_rates.is_empty() || t.learning_rates.iter().any(|lr| !(*lr > 0.0 && lr.is_finite())) {
            return bad("training.learning_rates must be positive".into());
        }
        if t.seeds.is_empty() {
            return bad("training.seeds is empty".into());
        }
        if t.epochs == 0 {
            return bad("training.epochs must be >= 1".into());
        }
        if !(t.validation_fraction > 0.0 && t.validation_fraction < 1.0) {
            return bad("training.validation_fraction must lie in (0, 1)".into());
        }
        if self.grid.cells.is_empty() {
            return bad("grid.cells is empty".into());
        }
        let mut seen = HashSet::new();
        for c in &self.grid.cells {
            let r = parse_cell(c)?;
            if !seen.insert(r) {
                return bad(format!("cell {c} listed twice"));
            }
        }
        Ok(())
    }

    pub fn cells(&self) -> Result<Vec<TrainingRegime>> {
        self.grid.cells.iter().map(|c| parse_cell(c)).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut tree = serde_json::to_value(ExperimentConfig::default())?;
        let mut seen = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| Error::Parse {
                path: "<config>".into(),
                line: lineno + 1,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `section.key = value`".into()))?;
            let key = key.trim();
            let (section, field) = key
                .split_once('.')
                .ok_or_else(|| err(format!("key {key:?} lacks a section")))?;
            if !seen.insert(key.to_string()) {
                return Err(err(format!("key {key} set twice")));
            }
            let slot = tree
                .get_mut(section)
                .and_then(|s| s.get_mut(field))
                .ok_or_else(|| err(format!("unknown key {key}")))?;
            *slot = parse_value(slot, value.trim()).map_err(err)?;
        }
        let cfg: ExperimentConfig = serde_json::from_value(tree)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn render(&self) -> Result<String> {
        let tree = serde_json::to_value(self)?;
        let mut out = String::new();
        for (section, body) in object(&tree) {
            for (key, v) in object(body) {
                out.push_str(&format!("{section}.{key} = {}\n", render_value(v)));
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { line, reason, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                reason,
            },
            other => other,
        })
    }
}

fn object(v: &Value) -> &Map<String, Value> {
    v.as_object().expect("config sections serialize as objects")
}

fn render_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(render_value).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

fn parse_scalar(template: &Value, text: &str) -> Result<Value, String> {
    let bad = || format!("cannot read {text:?} as {}", kind_name(template));
    match template {
        Value::Bool(_) => text.parse::<bool>().map(Value::Bool).map_err(|_| bad()),
        Value::String(_) => Ok(Value::String(text.to_string())),
        Value::Number(n) if n.is_u64() => text.parse::<u64>().map(Value::from).map_err(|_| bad()),
        Value::Number(n) if n.is_i64() => text.parse::<i64>().map(Value::from).map_err(|_| bad()),
        Value::Number(_) => text
            .parse::<f64>()
            .ok()
            .and_then(Number::from_f64)
            .map(Value::Number)
            .ok_or_else(bad),
        _ => Err(bad()),
    }
}

fn parse_value(template: &Value, text: &str) -> Result<Value, String> {
    let float = Value::from(0.5);
    match template {
        Value::Array(items) => {
            if text.is_empty() {
                return Ok(Value::Array(Vec::new()));
            }
            let elem = items.first().ok_or("list key without a typed default")?;
            // integers in a float list are accepted
            let elem = if elem.is_f64() { &float } else { elem };
            text.split(',')
                .map(|t| parse_scalar(elem, t.trim()))
                .collect::<Result<Vec<_>, _>>()
                .map(Value::Array)
        }
        other => parse_scalar(if other.is_f64() { &float } else { other }, text),
    }
}

fn kind_name(v: &Value) -> &'static str {
    match v {
        Value::Bool(_) => "a boolean",
        Value::String(_) => "a string",
        Value::Number(n) if n.is_u64() => "an unsigned integer",
        Value::Number(n) if n.is_i64() => "an integer",
        Value::Number(_) => "a number",
        _ => "a value",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.render().unwrap();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.render().unwrap(), text);
        assert!(text.contains("model.tau_low = 0.1\n"));
        assert!(text.contains("training.learning_rates = 0.01,0.001,0.0001\n"));
    }

    #[test]
    fn partial_file_overrides_defaults() {
        let cfg = ExperimentConfig::parse(
            "# toy\ngenerator.n_clicks = 500\ntraining.seeds = 3, 4\nmodel.branch_mode = single\nmodel.temperature = 2 # int ok\n",
        )
        .unwrap();
        assert_eq!(cfg.generator.n_clicks, 500);
        assert_eq!(cfg.training.seeds, vec![3, 4]);
        assert_eq!(cfg.model.branch_mode, BranchMode::Single);
        assert_eq!(cfg.model.temperature, 2.0);
    }

    #[test]
    fn bad_input_rejected() {
        for text in [
            "generator.bogus = 1",
            "nosection = 1",
            "generator.n_clicks = many",
            "generator.n_clicks = 5\ngenerator.n_clicks = 6",
            "model.tau_low = 0.95",
            "model.branch_mode = triple",
            "grid.cells = pre_only/single",
            "training.seeds =",
            "just text",
        ] {
            assert!(ExperimentConfig::parse(text).is_err(), "{text}");
        }
        match ExperimentConfig::parse("\n\ngenerator.bogus = 1") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn default_cells_parse() {
        let cells = ExperimentConfig::default().cells().unwrap();
        assert_eq!(cells.len(), default_cells().len());
        for (c, label) in cells.iter().zip(default_cells()) {
            assert_eq!(c.label(), label);
        }
    }
}
