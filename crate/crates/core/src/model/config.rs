use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct JointLKConfig {
    /// Stacked layers `N`.
    pub layers: usize,
    /// Hidden size `D`.
    pub dim: usize,
    /// Token embedding size `T`; `None` means `D`.
    pub token_dim: Option<usize>,
    /// Retention ratio `K`.
    pub retention: f64,
    pub dropout: f64,
    pub max_seq_len: usize,
    pub lr_encoder: f64,
    pub lr_graph: f64,
    pub seed: u64,
    pub no_prune: bool,
    /// Also disables pruning, which depends on the fusion attention.
    pub no_fusion: bool,
    /// Baseline: encoder and scoring MLP only, no graph.
    pub no_kg: bool,
    /// Self-attention mixing in the query encoder.
    pub mixing: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub optimizer: String,
    pub max_nodes: usize,
    pub scorer: String,
    /// Question-entity count splitting the evaluation breakdown.
    pub entity_threshold: usize,
}

impl Default for JointLKConfig {
    fn default() -> Self {
        Self {
            layers: 5,
            dim: 200,
            token_dim: None,
            retention: 0.92,
            dropout: 0.2,
            max_seq_len: 100,
            lr_encoder: 1e-3,
            lr_graph: 1e-3,
            seed: 0,
            no_prune: false,
            no_fusion: false,
            no_kg: false,
            mixing: true,
            epochs: 20,
            batch_size: 16,
            patience: 5,
            optimizer: "adam".into(),
            max_nodes: crate::kg::DEFAULT_MAX_NODES,
            scorer: "structural".into(),
            entity_threshold: 7,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "layers",
    "dim",
    "token_dim",
    "retention",
    "dropout",
    "max_seq_len",
    "lr_encoder",
    "lr_graph",
    "seed",
    "no_prune",
    "no_fusion",
    "no_kg",
    "mixing",
    "epochs",
    "batch_size",
    "patience",
    "optimizer",
    "max_nodes",
    "scorer",
    "entity_threshold",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

impl JointLKConfig {
    /// Small model used for fast runs: `N=2, D=32, K=0.9`.
    pub fn desk() -> Self {
        Self {
            layers: 2,
            dim: 32,
            retention: 0.9,
            ..Self::default()
        }
    }

    pub fn token_dim(&self) -> usize {
        self.token_dim.unwrap_or(self.dim)
    }

    pub fn fusion_enabled(&self) -> bool {
        !self.no_fusion && !self.no_kg
    }

    pub fn pruning_enabled(&self) -> bool {
        self.fusion_enabled() && !self.no_prune
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "layers" => self.layers = parse(key, v)?,
            "dim" => self.dim = parse(key, v)?,
            "token_dim" => {
                self.token_dim = if v == "auto" { None } else { Some(parse(key, v)?) }
            }
            "retention" => self.retention = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "max_seq_len" => self.max_seq_len = parse(key, v)?,
            "lr_encoder" => self.lr_encoder = parse(key, v)?,
            "lr_graph" => self.lr_graph = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "no_prune" => self.no_prune = parse(key, v)?,
            "no_fusion" => self.no_fusion = parse(key, v)?,
            "no_kg" => self.no_kg = parse(key, v)?,
            "mixing" => self.mixing = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "optimizer" => self.optimizer = v.to_string(),
            "max_nodes" => self.max_nodes = parse(key, v)?,
            "scorer" => self.scorer = v.to_string(),
            "entity_threshold" => self.entity_threshold = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "layers" => self.layers.to_string(),
            "dim" => self.dim.to_string(),
            "token_dim" => self.token_dim.map_or("auto".into(), |t| t.to_string()),
            "retention" => self.retention.to_string(),
            "dropout" => self.dropout.to_string(),
            "max_seq_len" => self.max_seq_len.to_string(),
            "lr_encoder" => self.lr_encoder.to_string(),
            "lr_graph" => self.lr_graph.to_string(),
            "seed" => self.seed.to_string(),
            "no_prune" => self.no_prune.to_string(),
            "no_fusion" => self.no_fusion.to_string(),
            "no_kg" => self.no_kg.to_string(),
            "mixing" => self.mixing.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "patience" => self.patience.to_string(),
            "optimizer" => self.optimizer.clone(),
            "max_nodes" => self.max_nodes.to_string(),
            "scorer" => self.scorer.clone(),
            "entity_threshold" => self.entity_threshold.to_string(),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.layers == 0 {
            return bad("layers must be at least 1");
        }
        if self.dim == 0 || self.token_dim() == 0 {
            return bad("dim and token_dim must be at least 1");
        }
        if !(self.retention > 0.0 && self.retention <= 1.0) {
            return Err(Error::BadRetention(self.retention));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.max_seq_len == 0 || self.batch_size == 0 || self.epochs == 0 {
            return bad("max_seq_len, batch_size and epochs must be at least 1");
        }
        if !(self.lr_encoder >= 0.0 && self.lr_graph >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        crate::tensor::optim::optimizer_by_name(&self.optimizer, Default::default())?;
        crate::kg::scorer_by_name(&self.scorer)?;
        Ok(())
    }

    /// Flat `key=value` text, one line per key. Blank lines and `#`
    /// comments are ignored; unknown keys are rejected.
    pub fn parse_kv(text: &str, origin: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err("expected key=value".into()))?;
            c.set(k.trim(), v).map_err(|e| err(e.to_string()))?;
        }
        c.validate().map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        Ok(c)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for k in CONFIG_KEYS {
            let _ = writeln!(s, "{k}={}", self.get(k).expect("listed key"));
        }
        s
    }
}
