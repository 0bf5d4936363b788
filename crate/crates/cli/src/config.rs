//! Plain-text `key = value` run configuration.

use std::fmt::Write as _;
use std::path::Path;

use narrate::env::EnvConfig;
use narrate::lang::Word2VecConfig;
use narrate::mem::{MemTrainConfig, DEFAULT_THRESHOLD};
use narrate::rl::RlConfig;
use narrate::tsne::TsneConfig;
use narrate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DataSettings {
    pub quota: usize,
    pub max_episodes: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct W2vSettings {
    pub params: Word2VecConfig,
    /// Copies of the paraphrase corpus per training run.
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectSettings {
    pub tsne: TsneConfig,
    pub per_class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSettings {
    pub threshold: f64,
    pub r_shape: f64,
    /// Script file; empty selects the built-in script.
    pub script: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub episodes: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub data: DataSettings,
    pub w2v: W2vSettings,
    pub mem: MemTrainConfig,
    pub project: ProjectSettings,
    pub rl: RlConfig,
    pub shape: ShapeSettings,
    pub eval: EvalSettings,
    pub audit: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: EnvConfig::default(),
            data: DataSettings {
                quota: 1000,
                max_episodes: 20_000,
                seed: 0,
            },
            w2v: W2vSettings {
                params: Word2VecConfig::default(),
                repeats: 10,
            },
            mem: MemTrainConfig::default(),
            project: ProjectSettings {
                tsne: TsneConfig::default(),
                per_class: 500,
            },
            rl: RlConfig::default(),
            shape: ShapeSettings {
                threshold: DEFAULT_THRESHOLD,
                r_shape: 1.0,
                script: String::new(),
            },
            eval: EvalSettings {
                episodes: 100,
                seed: 0,
            },
            audit: EvalSettings {
                episodes: 10_000,
                seed: 0,
            },
        }
    }
}

macro_rules! keys {
    ($($key:literal => $($field:ident).+;)*) => {
        /// Every accepted key, in the order the effective config is written.
        pub const KEYS: &[&str] = &[$($key),*];

        impl RunConfig {
            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $($key => Some(self.$($field).+.to_string()),)*
                    _ => None,
                }
            }

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => {
                        self.$($field).+ = value
                            .parse()
                            .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))?
                    })*
                    _ => return Err(Error::Config(format!("unknown key '{key}'"))),
                }
                Ok(())
            }
        }
    };
}

keys! {
    "env.grid_size" => env.grid_size;
    "env.episode_length" => env.episode_length;
    "env.build_radius" => env.build_radius;
    "env.initial_workers" => env.initial_workers;
    "env.initial_minerals" => env.initial_minerals;
    "env.harvest_rate" => env.harvest_rate;
    "env.cost.worker" => env.costs.worker;
    "env.cost.depot" => env.costs.depot;
    "env.cost.barracks" => env.costs.barracks;
    "env.cost.marine" => env.costs.marine;
    "env.duration.worker" => env.durations.worker;
    "env.duration.depot" => env.durations.depot;
    "env.duration.barracks" => env.durations.barracks;
    "env.duration.marine" => env.durations.marine;
    "env.supply.base" => env.supply.base;
    "env.supply.depot" => env.supply.depot;
    "env.supply.worker" => env.supply.worker;
    "env.supply.marine" => env.supply.marine;
    "data.quota" => data.quota;
    "data.max_episodes" => data.max_episodes;
    "data.seed" => data.seed;
    "w2v.dim" => w2v.params.dim;
    "w2v.window" => w2v.params.window;
    "w2v.negatives" => w2v.params.negatives;
    "w2v.epochs" => w2v.params.epochs;
    "w2v.lr" => w2v.params.lr;
    "w2v.min_lr" => w2v.params.min_lr;
    "w2v.repeats" => w2v.repeats;
    "w2v.seed" => w2v.params.seed;
    "mem.lr" => mem.lr;
    "mem.batch" => mem.batch;
    "mem.epochs" => mem.epochs;
    "mem.lambda" => mem.lambda;
    "mem.threshold" => mem.threshold;
    "mem.early_stop" => mem.early_stop;
    "mem.freeze_words" => mem.freeze_words;
    "mem.seed" => mem.seed;
    "project.per_class" => project.per_class;
    "project.perplexity" => project.tsne.perplexity;
    "project.iterations" => project.tsne.iterations;
    "project.learning_rate" => project.tsne.learning_rate;
    "project.exaggeration" => project.tsne.exaggeration;
    "project.seed" => project.tsne.seed;
    "rl.workers" => rl.workers;
    "rl.n_step" => rl.n_step;
    "rl.gamma" => rl.gamma;
    "rl.entropy" => rl.entropy;
    "rl.value_coef" => rl.value_coef;
    "rl.lr" => rl.lr;
    "rl.budget" => rl.budget;
    "rl.mode" => rl.mode;
    "rl.update" => rl.update;
    "rl.share_mem_encoder" => rl.share_mem_encoder;
    "rl.seed" => rl.seed;
    "shape.threshold" => shape.threshold;
    "shape.r_shape" => shape.r_shape;
    "shape.script" => shape.script;
    "eval.episodes" => eval.episodes;
    "eval.seed" => eval.seed;
    "audit.episodes" => audit.episodes;
    "audit.seed" => audit.seed;
}

impl RunConfig {
    /// Apply `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key '{key}'",
                    n + 1
                )));
            }
            self.set(key, value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// `key=value` override as given on the command line.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("override '{pair}' is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    /// Every key with its effective value; parses back to the same config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.mem.validate()?;
        self.w2v.params.validate()?;
        self.rl_config().validate()?;
        if self.data.quota == 0 || self.w2v.repeats == 0 || self.project.per_class == 0 {
            return Err(Error::Config(
                "data.quota, w2v.repeats and project.per_class must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn rl_config(&self) -> RlConfig {
        RlConfig {
            env: self.env.clone(),
            ..self.rl.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effective_config_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("rl.mode", "mem_shaped").unwrap();
        cfg.set("mem.lambda", "0.00001").unwrap();
        cfg.set("shape.script", "my script.txt").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn defaults_match_documented_values() {
        let cfg = RunConfig::default();
        for (key, value) in [
            ("env.grid_size", "64"),
            ("env.episode_length", "800"),
            ("mem.lambda", "0.0025"),
            ("mem.lr", "0.0005"),
            ("mem.batch", "32"),
            ("rl.workers", "8"),
            ("rl.n_step", "16"),
            ("rl.gamma", "0.99"),
            ("project.perplexity", "30"),
            ("w2v.dim", "128"),
        ] {
            assert_eq!(cfg.get(key).unwrap(), value, "{key}");
        }
    }

    #[test]
    fn errors_cite_line_numbers() {
        let mut cfg = RunConfig::default();
        let err = cfg
            .apply_text("# comment\nenv.grid_size = 16\n\nbogus = 1\n")
            .unwrap_err();
        assert_eq!(err.category(), "config");
        assert!(err.to_string().contains("line 4"), "{err}");
        assert!(err.to_string().contains("bogus"));
        let err = cfg.apply_text("data.quota = many").unwrap_err();
        assert!(
            err.to_string().starts_with("line 1: invalid value"),
            "{err}"
        );
        let err = cfg.apply_text("data.seed = 1\ndata.seed = 2").unwrap_err();
        assert!(err.to_string().contains("line 2: duplicate"), "{err}");
        let err = cfg.apply_text("just words").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn trailing_comments_ignored() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("rl.budget = 5000 # short run").unwrap();
        assert_eq!(cfg.rl.budget, 5000);
    }
}
