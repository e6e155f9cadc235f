//! Pipeline configuration: one struct covering paths and every stage knob,
//! with a flat sectioned `key=value` file format that round-trips losslessly.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::augment::AugmentationConfig;
use crate::eval::FilterSet;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("config line {line}: unknown key {key}")]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: bad value for {key}: {value}")]
    BadValue { line: usize, key: String, value: String },
    #[error("config line {line}: duplicate key {key}")]
    DuplicateKey { line: usize, key: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fine-quantizer selection for the concept index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantizerChoice {
    Identity,
    Product,
}

impl std::fmt::Display for QuantizerChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QuantizerChoice::Identity => write!(f, "identity"),
            QuantizerChoice::Product => write!(f, "pq"),
        }
    }
}

impl std::str::FromStr for QuantizerChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" => Ok(QuantizerChoice::Identity),
            "pq" => Ok(QuantizerChoice::Product),
            other => Err(format!("unknown quantizer: {other} (expected identity or pq)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    // [paths]
    pub kb: Option<String>,
    pub corpus: Option<String>,
    pub library: Option<String>,
    pub out: Option<String>,
    // [augment]
    pub k: usize,
    pub top_n: usize,
    pub w_a: f64,
    // [train]
    pub lr: f64,
    pub batch_size: usize,
    pub temperature: f64,
    pub epochs: usize,
    // [encoder]
    pub dim: usize,
    pub max_tokens: usize,
    // [search]
    pub topk: usize,
    /// 0 means probe every centroid.
    pub nprobe: usize,
    pub quantizer: QuantizerChoice,
    // [filters]
    pub filters: FilterSet,
    // [run]
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            kb: None,
            corpus: None,
            library: None,
            out: None,
            k: 10,
            top_n: 50,
            w_a: 0.4,
            lr: 1e-4,
            batch_size: 16,
            temperature: 1.0,
            epochs: 5,
            dim: 64,
            max_tokens: 512,
            topk: 10,
            nprobe: 0,
            quantizer: QuantizerChoice::Product,
            filters: FilterSet::all(),
            seed: 0,
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub kb: Option<String>,
    pub corpus: Option<String>,
    pub library: Option<String>,
    pub out: Option<String>,
    pub k: Option<usize>,
    pub w_a: Option<f64>,
    pub seed: Option<u64>,
    pub filters: Option<FilterSet>,
    pub nprobe: Option<usize>,
    pub topk: Option<usize>,
    pub dim: Option<usize>,
    pub epochs: Option<usize>,
    pub quantizer: Option<QuantizerChoice>,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = PipelineConfig::default();
        let mut section = String::new();
        let mut seen: std::collections::BTreeSet<String> = Default::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(name) = trimmed.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or(ConfigError::Syntax {
                    line,
                    msg: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or(ConfigError::Syntax {
                line,
                msg: format!("expected key=value, got {trimmed:?}"),
            })?;
            let key = key.trim();
            let value = value.trim();
            let full = format!("{section}.{key}");
            if !seen.insert(full.clone()) {
                return Err(ConfigError::DuplicateKey { line, key: full });
            }
            cfg.set(&full, value, line)?;
        }
        Ok(cfg)
    }

    fn set(&mut self, full_key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(
            key: &str,
            value: &str,
            line: usize,
        ) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::BadValue {
                line,
                key: key.to_string(),
                value: value.to_string(),
            })
        }
        match full_key {
            "paths.kb" => self.kb = Some(value.to_string()),
            "paths.corpus" => self.corpus = Some(value.to_string()),
            "paths.library" => self.library = Some(value.to_string()),
            "paths.out" => self.out = Some(value.to_string()),
            "augment.k" => self.k = num(full_key, value, line)?,
            "augment.top_n" => self.top_n = num(full_key, value, line)?,
            "augment.wa" => self.w_a = num(full_key, value, line)?,
            "train.lr" => self.lr = num(full_key, value, line)?,
            "train.batch_size" => self.batch_size = num(full_key, value, line)?,
            "train.temperature" => self.temperature = num(full_key, value, line)?,
            "train.epochs" => self.epochs = num(full_key, value, line)?,
            "encoder.dim" => self.dim = num(full_key, value, line)?,
            "encoder.max_tokens" => self.max_tokens = num(full_key, value, line)?,
            "search.topk" => self.topk = num(full_key, value, line)?,
            "search.nprobe" => self.nprobe = num(full_key, value, line)?,
            "search.quantizer" => self.quantizer = num(full_key, value, line)?,
            "filters.abbrev" => self.filters.abbrev = num(full_key, value, line)?,
            "filters.overlap" => self.filters.overlap = num(full_key, value, line)?,
            "filters.diversity" => self.filters.diversity = num(full_key, value, line)?,
            "run.seed" => self.seed = num(full_key, value, line)?,
            other => {
                return Err(ConfigError::UnknownKey { line, key: other.to_string() });
            }
        }
        Ok(())
    }

    /// Canonical text form; `parse(render(c)) == c` for every config.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[paths]");
        for (key, value) in [
            ("kb", &self.kb),
            ("corpus", &self.corpus),
            ("library", &self.library),
            ("out", &self.out),
        ] {
            if let Some(v) = value {
                let _ = writeln!(s, "{key}={v}");
            }
        }
        let _ = writeln!(s, "\n[augment]");
        let _ = writeln!(s, "k={}", self.k);
        let _ = writeln!(s, "top_n={}", self.top_n);
        let _ = writeln!(s, "wa={}", self.w_a);
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "lr={}", self.lr);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "temperature={}", self.temperature);
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "\n[encoder]");
        let _ = writeln!(s, "dim={}", self.dim);
        let _ = writeln!(s, "max_tokens={}", self.max_tokens);
        let _ = writeln!(s, "\n[search]");
        let _ = writeln!(s, "topk={}", self.topk);
        let _ = writeln!(s, "nprobe={}", self.nprobe);
        let _ = writeln!(s, "quantizer={}", self.quantizer);
        let _ = writeln!(s, "\n[filters]");
        let _ = writeln!(s, "abbrev={}", self.filters.abbrev);
        let _ = writeln!(s, "overlap={}", self.filters.overlap);
        let _ = writeln!(s, "diversity={}", self.filters.diversity);
        let _ = writeln!(s, "\n[run]");
        let _ = writeln!(s, "seed={}", self.seed);
        s
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    /// Applies command-line overrides on top of file values.
    pub fn apply(&mut self, ov: &Overrides) {
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = &ov.$field {
                    self.$field = Some(v.clone());
                }
            };
        }
        take!(kb);
        take!(corpus);
        take!(library);
        take!(out);
        if let Some(v) = ov.k {
            self.k = v;
        }
        if let Some(v) = ov.w_a {
            self.w_a = v;
        }
        if let Some(v) = ov.seed {
            self.seed = v;
        }
        if let Some(v) = ov.filters {
            self.filters = v;
        }
        if let Some(v) = ov.nprobe {
            self.nprobe = v;
        }
        if let Some(v) = ov.topk {
            self.topk = v;
        }
        if let Some(v) = ov.dim {
            self.dim = v;
        }
        if let Some(v) = ov.epochs {
            self.epochs = v;
        }
        if let Some(v) = ov.quantizer {
            self.quantizer = v;
        }
    }

    pub fn fine_quantizer(&self) -> crate::ann::Quantizer {
        match self.quantizer {
            QuantizerChoice::Identity => crate::ann::Quantizer::Identity,
            QuantizerChoice::Product => crate::ann::Quantizer::product_default(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            w_a: self.w_a,
            learning_rate: self.lr,
            batch_size: self.batch_size,
            temperature: self.temperature,
            epochs: self.epochs,
            seed: self.seed,
        }
    }

    pub fn augment_config(&self) -> AugmentationConfig {
        AugmentationConfig {
            k: self.k,
            top_n_candidates: self.top_n,
            w_a: self.w_a,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_round_trips() {
        let cfg = PipelineConfig::default();
        let text = cfg.render();
        assert_eq!(PipelineConfig::parse(&text).unwrap(), cfg);
        // Canonical text is a fixpoint.
        assert_eq!(PipelineConfig::parse(&text).unwrap().render(), text);
    }

    #[test]
    fn parses_sections_comments_and_blanks() {
        let text = "\n# run settings\n[run]\nseed = 99\n\n[augment]\nk=3\nwa=0.25\n[paths]\nkb=/data/kb.jsonl\n";
        let cfg = PipelineConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.k, 3);
        assert_eq!(cfg.w_a, 0.25);
        assert_eq!(cfg.kb.as_deref(), Some("/data/kb.jsonl"));
        // Untouched keys keep defaults.
        assert_eq!(cfg.batch_size, 16);
    }

    #[test]
    fn rejects_unknown_and_malformed_keys() {
        assert!(matches!(
            PipelineConfig::parse("[run]\nspeed=1\n"),
            Err(ConfigError::UnknownKey { line: 2, .. })
        ));
        assert!(matches!(
            PipelineConfig::parse("[train]\nlr\n"),
            Err(ConfigError::Syntax { line: 2, .. })
        ));
        assert!(matches!(
            PipelineConfig::parse("[train]\nlr=fast\n"),
            Err(ConfigError::BadValue { line: 2, .. })
        ));
        assert!(matches!(
            PipelineConfig::parse("[run]\nseed=1\nseed=2\n"),
            Err(ConfigError::DuplicateKey { line: 3, .. })
        ));
        assert!(matches!(
            PipelineConfig::parse("[run\nseed=1\n"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
    }

    #[test]
    fn overrides_win_over_file_values() {
        let mut cfg = PipelineConfig::parse("[run]\nseed=5\n[augment]\nk=3\n").unwrap();
        cfg.apply(&Overrides {
            seed: Some(7),
            kb: Some("kb.jsonl".into()),
            filters: Some(FilterSet::none()),
            ..Default::default()
        });
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.k, 3); // not overridden
        assert_eq!(cfg.kb.as_deref(), Some("kb.jsonl"));
        assert!(!cfg.filters.abbrev);
    }

    #[test]
    fn stage_configs_share_the_seed() {
        let mut cfg = PipelineConfig::default();
        cfg.seed = 123;
        cfg.w_a = 0.2;
        cfg.epochs = 7;
        assert_eq!(cfg.train_config().seed, 123);
        assert_eq!(cfg.augment_config().seed, 123);
        assert_eq!(cfg.train_config().w_a, 0.2);
        assert_eq!(cfg.augment_config().w_a, 0.2);
        assert_eq!(cfg.train_config().epochs, 7);
    }

    proptest! {
        #[test]
        fn arbitrary_configs_round_trip(
            k in 0usize..100,
            top_n in 1usize..200,
            wa in 0.0f64..2.0,
            lr in 1e-12f64..1e6,
            seed in proptest::num::u64::ANY,
            epochs in 0usize..50,
            abbrev in proptest::bool::ANY,
            overlap in proptest::bool::ANY,
            pq in proptest::bool::ANY,
            kb in proptest::option::of("[a-z/._-]{1,20}"),
        ) {
            let mut cfg = PipelineConfig::default();
            cfg.k = k;
            cfg.top_n = top_n;
            cfg.w_a = wa;
            cfg.lr = lr;
            cfg.seed = seed;
            cfg.epochs = epochs;
            cfg.filters.abbrev = abbrev;
            cfg.filters.overlap = overlap;
            cfg.quantizer = if pq { QuantizerChoice::Product } else { QuantizerChoice::Identity };
            cfg.kb = kb;
            let back = PipelineConfig::parse(&cfg.render()).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
