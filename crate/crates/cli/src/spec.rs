//! Experiment spec files (TOML).
//!
//! ```toml
//! name = "collapse"
//! output_dir = "runs"          # optional, default "runs"
//! seeds = [0, 1, 2, 3, 4]
//!
//! [env]
//! depth = 4
//! branching = 8
//! num_valid_leaves = 8
//! ref_concentration = 1.5
//! ref_noise = 0.0             # optional, default 0
//! # seed = 7                  # optional; defaults to the run seed
//!
//! [train]                     # every key optional
//! total_steps = 300
//! groups_per_step = 4
//! inner_epochs = 2
//! eval_every = 25
//! eval_samples_k = 64
//!
//! [[methods]]
//! method = "grpo"
//!
//! [[methods]]
//! method = "apo"
//! name = "apo_k4"             # optional label, default is the method name
//! anchor_k = 4                # any MethodConfig key may be overridden
//! ```
//!
//! Unknown keys are rejected.

use std::path::PathBuf;

use anchorlab_core::env::EnvConfig;
use anchorlab_core::objectives::MethodConfig;
use anchorlab_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub depth: usize,
    pub branching: usize,
    pub num_valid_leaves: usize,
    pub ref_concentration: f64,
    #[serde(default)]
    pub ref_noise: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl EnvSpec {
    pub fn env_config(&self, run_seed: u64) -> EnvConfig {
        EnvConfig {
            depth: self.depth,
            branching: self.branching,
            num_valid_leaves: self.num_valid_leaves,
            ref_concentration: self.ref_concentration,
            ref_noise: self.ref_noise,
            seed: self.seed.unwrap_or(run_seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub total_steps: usize,
    pub groups_per_step: usize,
    pub inner_epochs: usize,
    pub eval_every: usize,
    pub eval_samples_k: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        let d = TrainConfig::new(
            MethodConfig::default(),
            EnvConfig {
                depth: 1,
                branching: 2,
                num_valid_leaves: 1,
                ref_concentration: 0.0,
                ref_noise: 0.0,
                seed: 0,
            },
        );
        TrainSpec {
            total_steps: d.total_steps,
            groups_per_step: d.groups_per_step,
            inner_epochs: d.inner_epochs,
            eval_every: d.eval_every,
            eval_samples_k: d.eval_samples_k,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodSpec {
    pub name: Option<String>,
    pub config: MethodConfig,
}

impl MethodSpec {
    /// Directory and table label: the explicit name or the method name.
    pub fn label(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| self.config.method.to_string())
    }

    fn to_table(&self) -> toml::Table {
        let mut table = toml::Table::try_from(&self.config).expect("method config serializes");
        if let Some(name) = &self.name {
            table.insert("name".into(), toml::Value::String(name.clone()));
        }
        table
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub env: EnvSpec,
    pub train: TrainSpec,
    pub methods: Vec<MethodSpec>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    name: Spanned<String>,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    seeds: Spanned<Vec<u64>>,
    env: Spanned<EnvSpec>,
    #[serde(default)]
    train: Option<Spanned<TrainSpec>>,
    methods: Spanned<Vec<Spanned<toml::Table>>>,
}

#[derive(Serialize)]
struct OutSpec<'a> {
    name: &'a str,
    output_dir: &'a PathBuf,
    seeds: &'a [u64],
    env: &'a EnvSpec,
    train: &'a TrainSpec,
    methods: Vec<toml::Table>,
}

impl ExperimentSpec {
    /// Parses and validates a spec. `path` only labels error locations.
    pub fn parse(text: &str, path: &str) -> Result<Self, CliError> {
        let raw: RawSpec = toml::from_str(text).map_err(|e| {
            let offset = e.span().map_or(0, |s| s.start);
            CliError::config_at(path, text, offset, e.message().trim())
        })?;
        let at = |offset: usize, msg: String| CliError::config_at(path, text, offset, msg);

        let name = raw.name.get_ref().clone();
        if name.is_empty() || name.contains(['/', '\\']) {
            return Err(at(
                raw.name.span().start,
                "name must be nonempty and contain no path separators".into(),
            ));
        }
        if raw.seeds.get_ref().is_empty() {
            return Err(at(raw.seeds.span().start, "seeds must be nonempty".into()));
        }
        let env = raw.env.get_ref().clone();
        env.env_config(0)
            .validate()
            .map_err(|e| at(raw.env.span().start, e.to_string()))?;

        let mut methods = Vec::new();
        if raw.methods.get_ref().is_empty() {
            return Err(at(
                raw.methods.span().start,
                "at least one [[methods]] entry is required".into(),
            ));
        }
        for entry in raw.methods.get_ref() {
            let start = entry.span().start;
            let mut table = entry.get_ref().clone();
            let name = match table.remove("name") {
                None => None,
                Some(toml::Value::String(s)) if !s.is_empty() && !s.contains(['/', '\\']) => {
                    Some(s)
                }
                Some(_) => {
                    return Err(at(
                        start,
                        "method name must be a nonempty string without path separators".into(),
                    ))
                }
            };
            if !table.contains_key("method") {
                return Err(at(start, "method entry needs a `method` key".into()));
            }
            let config: MethodConfig = toml::Value::Table(table)
                .try_into()
                .map_err(|e: toml::de::Error| at(start, e.message().trim().to_string()))?;
            config.validate().map_err(|e| at(start, e.to_string()))?;
            let spec = MethodSpec { name, config };
            if methods
                .iter()
                .any(|m: &MethodSpec| m.label() == spec.label())
            {
                return Err(at(
                    start,
                    format!("duplicate method name `{}`", spec.label()),
                ));
            }
            methods.push(spec);
        }

        let spec = ExperimentSpec {
            name,
            output_dir: raw.output_dir,
            seeds: raw.seeds.into_inner(),
            env,
            train: raw
                .train
                .as_ref()
                .map(|t| t.get_ref().clone())
                .unwrap_or_default(),
            methods,
        };
        spec.train_config(0, spec.seeds[0])
            .validate()
            .map_err(|e| {
                at(
                    raw.train.as_ref().map_or(0, |t| t.span().start),
                    e.to_string(),
                )
            })?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        let out = OutSpec {
            name: &self.name,
            output_dir: &self.output_dir,
            seeds: &self.seeds,
            env: &self.env,
            train: &self.train,
            methods: self.methods.iter().map(MethodSpec::to_table).collect(),
        };
        toml::to_string(&out).expect("spec serializes")
    }

    /// Training configuration of one (method, seed) cell.
    pub fn train_config(&self, method_index: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            method: self.methods[method_index].config.clone(),
            envs: vec![self.env.env_config(seed)],
            total_steps: self.train.total_steps,
            groups_per_step: self.train.groups_per_step,
            inner_epochs: self.train.inner_epochs,
            eval_every: self.train.eval_every,
            eval_samples_k: self.train.eval_samples_k,
            seed,
        }
    }
}

/// Seeds from `--seeds` (comma list), else `ANCHORLAB_SEED`, else the spec file.
pub fn resolve_seeds(
    flag: Option<&str>,
    env_var: Option<&str>,
    spec_seeds: &[u64],
) -> Result<Vec<u64>, CliError> {
    let parse = |src: &str, what: &str| -> Result<Vec<u64>, CliError> {
        let seeds = src
            .split(',')
            .map(|s| s.trim().parse::<u64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Config {
                path: what.to_string(),
                line: 1,
                col: 1,
                message: format!("bad seed list `{src}`: {e}"),
            })?;
        Ok(seeds)
    };
    match (flag, env_var) {
        (Some(f), _) => parse(f, "--seeds"),
        (None, Some(v)) if !v.trim().is_empty() => parse(v, "ANCHORLAB_SEED"),
        _ => Ok(spec_seeds.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anchorlab_core::objectives::Method;

    const SPEC: &str = r#"
name = "demo"
seeds = [3, 4]

[env]
depth = 2
branching = 4
num_valid_leaves = 2
ref_concentration = 1.0

[train]
total_steps = 5

[[methods]]
method = "grpo"

[[methods]]
method = "apo"
name = "apo_k2"
anchor_k = 2
"#;

    #[test]
    fn parses_with_defaults() {
        let s = ExperimentSpec::parse(SPEC, "demo.toml").unwrap();
        assert_eq!(s.output_dir, PathBuf::from("runs"));
        assert_eq!(s.train.total_steps, 5);
        assert_eq!(s.train.inner_epochs, 2);
        assert_eq!(s.methods[0].label(), "grpo");
        assert_eq!(s.methods[1].label(), "apo_k2");
        assert_eq!(s.methods[1].config.anchor_k, 2);
        assert_eq!(s.methods[1].config.method, Method::Apo);
        assert_eq!(s.methods[1].config.push_coef, 1.05);
        let c = s.train_config(1, 4);
        assert_eq!(c.envs[0].seed, 4);
        assert_eq!(c.seed, 4);
    }

    #[test]
    fn round_trips() {
        let s = ExperimentSpec::parse(SPEC, "demo.toml").unwrap();
        let text = s.to_toml_string();
        assert_eq!(ExperimentSpec::parse(&text, "out.toml").unwrap(), s);
        let pinned = ExperimentSpec {
            env: EnvSpec {
                seed: Some(9),
                ..s.env.clone()
            },
            ..s
        };
        assert_eq!(
            ExperimentSpec::parse(&pinned.to_toml_string(), "x").unwrap(),
            pinned
        );
    }

    fn config_error(text: &str) -> (usize, String) {
        match ExperimentSpec::parse(text, "bad.toml").unwrap_err() {
            CliError::Config { line, message, .. } => (line, message),
            e => panic!("expected config error, got {e}"),
        }
    }

    #[test]
    fn errors_carry_locations() {
        let (line, msg) = config_error(&SPEC.replace("depth = 2", "depth = 2\ncolour = 1"));
        assert_eq!(line, 7);
        assert!(msg.contains("colour"), "{msg}");

        let (line, _) = config_error(&SPEC.replace("seeds = [3, 4]", "seeds = []"));
        assert_eq!(line, 3);

        let (line, msg) = config_error(&SPEC.replace("anchor_k = 2", "anchor_k = 2\nbogus = true"));
        assert!(line >= 16, "{line}");
        assert!(msg.contains("bogus"), "{msg}");

        let (_, msg) = config_error(&SPEC.replace("name = \"apo_k2\"", "name = \"grpo\""));
        assert!(msg.contains("duplicate"));

        let (_, msg) = config_error(&SPEC.replace("num_valid_leaves = 2", "num_valid_leaves = 17"));
        assert!(msg.contains("num_valid_leaves"));

        let (line, _) = config_error("name = \n");
        assert_eq!(line, 1);
    }

    #[test]
    fn seed_precedence() {
        assert_eq!(
            resolve_seeds(Some("1,2"), Some("9"), &[5]).unwrap(),
            vec![1, 2]
        );
        assert_eq!(resolve_seeds(None, Some("9"), &[5]).unwrap(), vec![9]);
        assert_eq!(resolve_seeds(None, None, &[5]).unwrap(), vec![5]);
        assert!(resolve_seeds(Some("x"), None, &[5]).is_err());
    }
}
