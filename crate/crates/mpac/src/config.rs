//! TOML run configuration.
//!
//! Every key is optional except `env`; omitted values take the pendulum
//! defaults. Preferences are listed as `[[preference]]` tables:
//!
//! ```toml
//! env = "pendulum-disc9"
//! seed = 3
//!
//! [[preference]]
//! kind = "conserve"        # threshold defaults to 0.03, eta to 0.01
//!
//! [[preference]]
//! kind = "reference"
//! demo_path = "demos.txt"  # behavior-cloned once before training
//! ```

use std::path::{Path, PathBuf};

use mpac_core::envs::EnvId;
use mpac_core::harness::{Algorithm, TrainSettings};
use mpac_core::preferences::PreferenceKind;
use serde::{Deserialize, Serialize};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "MPAC_OUTPUT_DIR";

/// Configuration error naming the offending field.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("config syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: message.into() }
}

/// Behavior-cloning settings for the reference policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BcSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    /// Defaults to the policy step size.
    pub step_size: Option<f64>,
    pub seed: u64,
}

impl Default for BcSettings {
    fn default() -> Self {
        BcSettings { epochs: 100, batch_size: 64, dropout: 0.2, step_size: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PreferenceConfig {
    Entropy {
        threshold: f64,
    },
    Conserve {
        threshold: f64,
        eta: f64,
    },
    Reference {
        threshold: f64,
        demo_path: PathBuf,
        bc: BcSettings,
    },
    Gail {
        threshold: f64,
        demo_path: PathBuf,
        /// Hidden widths of the discriminator and its value net.
        hidden: Option<Vec<usize>>,
    },
}

impl PreferenceConfig {
    pub fn kind(&self) -> PreferenceKind {
        match self {
            PreferenceConfig::Entropy { .. } => PreferenceKind::Entropy,
            PreferenceConfig::Conserve { .. } => PreferenceKind::Conserve,
            PreferenceConfig::Reference { .. } => PreferenceKind::Reference,
            PreferenceConfig::Gail { .. } => PreferenceKind::Gail,
        }
    }

    pub fn threshold(&self) -> f64 {
        match self {
            PreferenceConfig::Entropy { threshold }
            | PreferenceConfig::Conserve { threshold, .. }
            | PreferenceConfig::Reference { threshold, .. }
            | PreferenceConfig::Gail { threshold, .. } => *threshold,
        }
    }

    pub fn demo_path(&self) -> Option<&Path> {
        match self {
            PreferenceConfig::Reference { demo_path, .. } | PreferenceConfig::Gail { demo_path, .. } => Some(demo_path),
            _ => None,
        }
    }
}

/// Default threshold `l_k` of each preference kind.
pub fn default_threshold(kind: PreferenceKind) -> f64 {
    match kind {
        PreferenceKind::Entropy => 2.0,
        PreferenceKind::Conserve => 0.03,
        PreferenceKind::Reference | PreferenceKind::Gail => 0.1,
    }
}

pub const DEFAULT_CONSERVE_ETA: f64 = 0.01;

/// A validated run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub settings: TrainSettings,
    pub epochs: u64,
    pub preferences: Vec<PreferenceConfig>,
    pub output_dir: PathBuf,
    /// Save a checkpoint every this many epochs; 0 saves only at the end.
    pub checkpoint_every: u64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    env: Option<String>,
    seed: Option<u64>,
    algorithm: Option<String>,
    epochs: Option<u64>,
    steps_per_epoch: Option<usize>,
    parallel_envs: Option<usize>,
    n_steps: Option<usize>,
    gamma: Option<f64>,
    policy_lr: Option<f64>,
    lambda_lr: Option<f64>,
    beta: Option<f64>,
    value_coef: Option<f64>,
    reward_scale: Option<f64>,
    hidden: Option<Vec<usize>>,
    shared_trunk: Option<bool>,
    discriminator_lr: Option<f64>,
    eval_episodes: Option<usize>,
    greedy_eval: Option<bool>,
    output_dir: Option<PathBuf>,
    checkpoint_every: Option<u64>,
    #[serde(default)]
    preference: Vec<RawPreference>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPreference {
    kind: String,
    threshold: Option<f64>,
    eta: Option<f64>,
    demo_path: Option<PathBuf>,
    hidden: Option<Vec<usize>>,
    bc: Option<BcSettings>,
}

impl RunConfig {
    /// Defaults for `env` with no preferences.
    pub fn defaults(env: EnvId) -> Self {
        RunConfig {
            settings: TrainSettings::defaults(env),
            epochs: 100,
            preferences: Vec::new(),
            output_dir: PathBuf::from("runs/default"),
            checkpoint_every: 10,
        }
    }

    /// Parse TOML text. Relative demo paths are resolved against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        let env_text = raw.env.ok_or_else(|| invalid("env", "missing environment id"))?;
        let env: EnvId = env_text.parse().map_err(|e| invalid("env", format!("{e}")))?;
        let mut cfg = RunConfig::defaults(env);
        let s = &mut cfg.settings;
        macro_rules! take {
            ($($field:ident),*) => {$( if let Some(v) = raw.$field { s.$field = v; } )*};
        }
        take!(
            seed,
            steps_per_epoch,
            parallel_envs,
            n_steps,
            gamma,
            policy_lr,
            lambda_lr,
            beta,
            value_coef,
            reward_scale,
            hidden,
            shared_trunk,
            discriminator_lr,
            eval_episodes,
            greedy_eval
        );
        if let Some(a) = raw.algorithm {
            s.algorithm = a.parse().map_err(|e| invalid("algorithm", format!("{e}")))?;
        }
        if let Some(e) = raw.epochs {
            cfg.epochs = e;
        }
        if let Some(d) = raw.output_dir {
            cfg.output_dir = d;
        }
        if let Some(c) = raw.checkpoint_every {
            cfg.checkpoint_every = c;
        }
        for (i, p) in raw.preference.into_iter().enumerate() {
            cfg.preferences.push(resolve_preference(i, p, base)?);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text, path.parent())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.settings;
        for (field, v) in [
            ("policy_lr", s.policy_lr),
            ("lambda_lr", s.lambda_lr),
            ("discriminator_lr", s.discriminator_lr),
            ("reward_scale", s.reward_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(field, format!("must be positive, got {v}")));
            }
        }
        if !(s.gamma > 0.0 && s.gamma < 1.0) {
            return Err(invalid("gamma", format!("must lie in (0, 1), got {}", s.gamma)));
        }
        for (field, v) in [("beta", s.beta), ("value_coef", s.value_coef)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(field, format!("must be finite and nonnegative, got {v}")));
            }
        }
        for (field, v) in [
            ("steps_per_epoch", s.steps_per_epoch),
            ("parallel_envs", s.parallel_envs),
            ("n_steps", s.n_steps),
            ("eval_episodes", s.eval_episodes),
        ] {
            if v == 0 {
                return Err(invalid(field, "must be at least 1"));
            }
        }
        if s.hidden.contains(&0) {
            return Err(invalid("hidden", "widths must be positive"));
        }
        s.validate().map_err(|e| invalid("settings", e.to_string()))?;
        if self.epochs == 0 {
            return Err(invalid("epochs", "must be at least 1"));
        }
        for (i, p) in self.preferences.iter().enumerate() {
            let kind = p.kind();
            if self.preferences[..i].iter().any(|q| q.kind() == kind) {
                return Err(invalid(format!("preference[{i}].kind"), format!("duplicate {kind} preference")));
            }
            let t = p.threshold();
            if !(t >= 0.0 && t.is_finite()) {
                return Err(invalid(format!("{kind}.threshold"), format!("must be finite and nonnegative, got {t}")));
            }
            match p {
                PreferenceConfig::Conserve { eta, .. } if !(*eta > 0.0 && *eta <= 1.0) => {
                    return Err(invalid("conserve.eta", format!("must lie in (0, 1], got {eta}")));
                }
                PreferenceConfig::Reference { bc, .. } => {
                    if !(0.0..1.0).contains(&bc.dropout) {
                        return Err(invalid("reference.bc.dropout", "must lie in [0, 1)"));
                    }
                    if bc.batch_size == 0 {
                        return Err(invalid("reference.bc.batch_size", "must be at least 1"));
                    }
                    if let Some(lr) = bc.step_size {
                        if !(lr > 0.0 && lr.is_finite()) {
                            return Err(invalid("reference.bc.step_size", "must be positive"));
                        }
                    }
                }
                PreferenceConfig::Gail { hidden: Some(h), .. } if h.contains(&0) => {
                    return Err(invalid("gail.hidden", "widths must be positive"));
                }
                _ => {}
            }
        }
        if self.settings.algorithm == Algorithm::A2c && !self.preferences.is_empty() {
            return Err(invalid("algorithm", "a2c runs take no preferences"));
        }
        Ok(())
    }

    /// Apply the output-directory environment override, if set.
    pub fn apply_env_overrides(&mut self) {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                self.output_dir = PathBuf::from(dir);
            }
        }
    }

    /// Preference kinds in configuration order.
    pub fn kinds(&self) -> Vec<PreferenceKind> {
        self.preferences.iter().map(PreferenceConfig::kind).collect()
    }
}

fn resolve_preference(i: usize, p: RawPreference, base: Option<&Path>) -> Result<PreferenceConfig, ConfigError> {
    let kind: PreferenceKind =
        p.kind.parse().map_err(|_| invalid(format!("preference[{i}].kind"), format!("unknown kind {:?}", p.kind)))?;
    let threshold = p.threshold.unwrap_or_else(|| default_threshold(kind));
    let name = kind.name();
    let unused = |field: &str, present: bool| -> Result<(), ConfigError> {
        if present {
            Err(invalid(format!("{name}.{field}"), format!("not used by the {name} preference")))
        } else {
            Ok(())
        }
    };
    let demo = |path: Option<PathBuf>| -> Result<PathBuf, ConfigError> {
        let path = path.ok_or_else(|| invalid(format!("{name}.demo_path"), "required"))?;
        Ok(match base {
            Some(b) if path.is_relative() => b.join(path),
            _ => path,
        })
    };
    Ok(match kind {
        PreferenceKind::Entropy => {
            unused("eta", p.eta.is_some())?;
            unused("demo_path", p.demo_path.is_some())?;
            unused("hidden", p.hidden.is_some())?;
            unused("bc", p.bc.is_some())?;
            PreferenceConfig::Entropy { threshold }
        }
        PreferenceKind::Conserve => {
            unused("demo_path", p.demo_path.is_some())?;
            unused("hidden", p.hidden.is_some())?;
            unused("bc", p.bc.is_some())?;
            PreferenceConfig::Conserve { threshold, eta: p.eta.unwrap_or(DEFAULT_CONSERVE_ETA) }
        }
        PreferenceKind::Reference => {
            unused("eta", p.eta.is_some())?;
            unused("hidden", p.hidden.is_some())?;
            PreferenceConfig::Reference { threshold, demo_path: demo(p.demo_path)?, bc: p.bc.unwrap_or_default() }
        }
        PreferenceKind::Gail => {
            unused("eta", p.eta.is_some())?;
            unused("bc", p.bc.is_some())?;
            PreferenceConfig::Gail { threshold, demo_path: demo(p.demo_path)?, hidden: p.hidden }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_of(err: ConfigError) -> String {
        match err {
            ConfigError::Invalid { field, .. } => field,
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn empty_config_takes_defaults() {
        let cfg = RunConfig::parse("env = \"pendulum-disc9\"", None).unwrap();
        let s = &cfg.settings;
        assert_eq!(s.policy_lr, 1e-4);
        assert_eq!(s.lambda_lr, 1e-4);
        assert_eq!(s.beta, 0.1);
        assert_eq!(s.parallel_envs, 8);
        assert_eq!(s.steps_per_epoch, 1000);
        assert_eq!(s.eval_episodes, 10);
        assert_eq!(cfg.epochs, 100);
        assert!(cfg.preferences.is_empty());
    }

    #[test]
    fn preference_thresholds_default_per_kind() {
        let text = r#"
            env = "pendulum-disc9"
            [[preference]]
            kind = "entropy"
            [[preference]]
            kind = "conserve"
            [[preference]]
            kind = "reference"
            demo_path = "d.txt"
            [[preference]]
            kind = "gail"
            demo_path = "/abs/d.txt"
        "#;
        let cfg = RunConfig::parse(text, Some(Path::new("/cfg"))).unwrap();
        let t: Vec<f64> = cfg.preferences.iter().map(|p| p.threshold()).collect();
        assert_eq!(t, vec![2.0, 0.03, 0.1, 0.1]);
        assert_eq!(cfg.preferences[1], PreferenceConfig::Conserve { threshold: 0.03, eta: 0.01 });
        assert_eq!(cfg.preferences[2].demo_path(), Some(Path::new("/cfg/d.txt")));
        assert_eq!(cfg.preferences[3].demo_path(), Some(Path::new("/abs/d.txt")));
    }

    #[test]
    fn missing_demo_path_names_the_field() {
        let text = "env = \"pendulum-disc9\"\n[[preference]]\nkind = \"reference\"\n";
        assert_eq!(field_of(RunConfig::parse(text, None).unwrap_err()), "reference.demo_path");
        let text = "env = \"pendulum-disc9\"\n[[preference]]\nkind = \"gail\"\n";
        assert_eq!(field_of(RunConfig::parse(text, None).unwrap_err()), "gail.demo_path");
    }

    #[test]
    fn duplicates_and_unknown_kinds_are_rejected() {
        let dup = "env = \"chain-8\"\n[[preference]]\nkind = \"entropy\"\n[[preference]]\nkind = \"entropy\"\nthreshold = 1.0\n";
        assert_eq!(field_of(RunConfig::parse(dup, None).unwrap_err()), "preference[1].kind");
        let unknown = "env = \"chain-8\"\n[[preference]]\nkind = \"curiosity\"\n";
        assert_eq!(field_of(RunConfig::parse(unknown, None).unwrap_err()), "preference[0].kind");
    }

    #[test]
    fn invariants_are_checked() {
        assert_eq!(field_of(RunConfig::parse("env = \"chain-8\"\ngamma = 1.0", None).unwrap_err()), "gamma");
        assert_eq!(field_of(RunConfig::parse("env = \"chain-8\"\npolicy_lr = 0.0", None).unwrap_err()), "policy_lr");
        let neg = "env = \"chain-8\"\n[[preference]]\nkind = \"entropy\"\nthreshold = -1.0\n";
        assert_eq!(field_of(RunConfig::parse(neg, None).unwrap_err()), "entropy.threshold");
        let misplaced = "env = \"chain-8\"\n[[preference]]\nkind = \"entropy\"\neta = 0.5\n";
        assert_eq!(field_of(RunConfig::parse(misplaced, None).unwrap_err()), "entropy.eta");
        assert_eq!(field_of(RunConfig::parse("seed = 1", None).unwrap_err()), "env");
        assert!(matches!(RunConfig::parse("env = \"chain-8\"\nbogus = 1", None), Err(ConfigError::Syntax(_))));
    }

    #[test]
    fn explicit_values_override_defaults() {
        let cfg = RunConfig::parse(
            "env = \"chain-8\"\nseed = 9\nhidden = [16]\nalgorithm = \"a2c\"\nepochs = 3\noutput_dir = \"x\"",
            None,
        )
        .unwrap();
        assert_eq!(cfg.settings.seed, 9);
        assert_eq!(cfg.settings.hidden, vec![16]);
        assert_eq!(cfg.settings.algorithm, Algorithm::A2c);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.output_dir, PathBuf::from("x"));
    }
}
