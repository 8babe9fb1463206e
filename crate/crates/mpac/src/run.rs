//! Driving a configured run: demonstration loading, reference cloning,
//! epochs, metrics, checkpoints and final parameter files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mpac_core::demos::{behavior_clone, BcConfig, DemonstrationSet};
use mpac_core::diffnet::ParamSet;
use mpac_core::envs::EnvId;
use mpac_core::harness::{EpochReport, PreferencePlan, Trainer};

use crate::checkpoint::Checkpoint;
use crate::config::{BcSettings, PreferenceConfig, RunConfig};
use crate::metrics::MetricsWriter;
use crate::{demofile, paramfile};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const REFERENCE_FILE: &str = "reference.params";

/// Behavior-cloning configuration mirroring the policy architecture.
pub fn bc_config(env: EnvId, hidden: &[usize], bc: &BcSettings, policy_lr: f64) -> BcConfig {
    let mut layer_sizes = vec![env.observation_dim()];
    layer_sizes.extend_from_slice(hidden);
    layer_sizes.push(env.action_count());
    BcConfig {
        layer_sizes,
        epochs: bc.epochs,
        batch_size: bc.batch_size,
        dropout: bc.dropout,
        step_size: bc.step_size.unwrap_or(policy_lr),
        seed: bc.seed,
    }
}

/// Load demonstrations and clone the reference policy; returns the plans in
/// configuration order plus the cloned reference, if any.
pub fn preference_plans(cfg: &RunConfig) -> Result<(Vec<PreferencePlan>, Option<ParamSet>)> {
    let env = cfg.settings.env;
    let mut cache: BTreeMap<PathBuf, DemonstrationSet> = BTreeMap::new();
    let mut demos = |path: &Path| -> Result<DemonstrationSet> {
        if let Some(set) = cache.get(path) {
            return Ok(set.clone());
        }
        let set =
            demofile::load_for(path, env).with_context(|| format!("loading demonstrations {}", path.display()))?;
        cache.insert(path.to_path_buf(), set.clone());
        Ok(set)
    };
    let mut plans = Vec::with_capacity(cfg.preferences.len());
    let mut reference = None;
    for p in &cfg.preferences {
        plans.push(match p {
            PreferenceConfig::Entropy { threshold } => PreferencePlan::Entropy { threshold: *threshold },
            PreferenceConfig::Conserve { threshold, eta } => {
                PreferencePlan::Conserve { threshold: *threshold, eta: *eta }
            }
            PreferenceConfig::Reference { threshold, demo_path, bc } => {
                let set = demos(demo_path)?;
                let policy = behavior_clone(&set, &bc_config(env, &cfg.settings.hidden, bc, cfg.settings.policy_lr))
                    .context("behavior cloning the reference policy")?;
                reference = Some(policy.clone());
                PreferencePlan::Reference { threshold: *threshold, policy }
            }
            PreferenceConfig::Gail { threshold, demo_path, hidden } => PreferencePlan::Gail {
                threshold: *threshold,
                expert: demos(demo_path)?.to_state_actions(),
                hidden: hidden.clone().unwrap_or_else(|| cfg.settings.hidden.clone()),
            },
        });
    }
    Ok((plans, reference))
}

/// Result of a finished run.
pub struct Outcome {
    pub trainer: Trainer,
    pub reports: Vec<EpochReport>,
    pub output_dir: PathBuf,
}

/// A run in progress, writing into its output directory.
pub struct Run {
    config: RunConfig,
    trainer: Trainer,
    metrics: MetricsWriter,
}

impl Run {
    /// Fresh run: clones the reference policy if needed and truncates any
    /// previous metrics in the output directory.
    pub fn start(config: RunConfig) -> Result<Self> {
        config.validate()?;
        fs::create_dir_all(&config.output_dir)
            .with_context(|| format!("creating output directory {}", config.output_dir.display()))?;
        let (plans, reference) = preference_plans(&config)?;
        if let Some(r) = &reference {
            paramfile::save(r, &config.output_dir.join(REFERENCE_FILE))?;
        }
        let trainer = Trainer::new(config.settings.clone(), plans)?;
        let metrics = MetricsWriter::create(&config.output_dir.join(METRICS_FILE), &config.kinds())?;
        Ok(Run { config, trainer, metrics })
    }

    /// Continue from a checkpoint. `epochs` may extend the original target;
    /// `output_dir` redirects the run.
    pub fn resume(checkpoint: &Path, epochs: Option<u64>, output_dir: Option<PathBuf>) -> Result<Self> {
        let ck =
            Checkpoint::load(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
        let mut config = ck.config;
        if let Some(e) = epochs {
            config.epochs = e;
        }
        if let Some(d) = output_dir {
            config.output_dir = d;
        }
        let metrics = MetricsWriter::resume(&config.output_dir.join(METRICS_FILE), &config.kinds(), ck.trainer.epoch())
            .context("reopening metrics for resume")?;
        Ok(Run { config, trainer: ck.trainer, metrics })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn trainer(&self) -> &Trainer {
        &self.trainer
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.config.output_dir.join(CHECKPOINT_FILE)
    }

    pub fn save_checkpoint(&self) -> Result<()> {
        Checkpoint::new(self.config.clone(), self.trainer.clone()).save(&self.checkpoint_path())?;
        Ok(())
    }

    /// Run one epoch. On failure the trainer is rolled back to the state
    /// before the epoch and that state is checkpointed.
    pub fn step(&mut self) -> Result<EpochReport> {
        let last_good = self.trainer.clone();
        match self.trainer.run_epoch() {
            Ok(report) => {
                self.metrics.write(&report)?;
                let every = self.config.checkpoint_every;
                if every > 0 && self.trainer.epoch().is_multiple_of(every) {
                    self.save_checkpoint()?;
                }
                Ok(report)
            }
            Err(e) => {
                let epoch = last_good.epoch();
                self.trainer = last_good;
                self.save_checkpoint().context("saving the last good checkpoint")?;
                bail!("epoch {epoch} aborted: {e}; last good state saved to {}", self.checkpoint_path().display())
            }
        }
    }

    /// Run the remaining epochs, calling `on_epoch` after each, then write
    /// the final checkpoint and parameter files.
    pub fn finish(mut self, mut on_epoch: impl FnMut(&EpochReport)) -> Result<Outcome> {
        let mut reports = Vec::new();
        while self.trainer.epoch() < self.config.epochs {
            let r = self.step()?;
            on_epoch(&r);
            reports.push(r);
        }
        self.save_checkpoint()?;
        save_actor_critic(&self.trainer, &self.config.output_dir)?;
        Ok(Outcome { trainer: self.trainer, reports, output_dir: self.config.output_dir })
    }
}

/// Write `policy.params`, `value.params` and, for a shared trunk,
/// `trunk.params`.
pub fn save_actor_critic(trainer: &Trainer, dir: &Path) -> Result<()> {
    let ac = trainer.actor_critic();
    paramfile::save(ac.policy_net(), &dir.join("policy.params"))?;
    paramfile::save(ac.value_net(), &dir.join("value.params"))?;
    if let Some(t) = ac.trunk() {
        paramfile::save(t, &dir.join("trunk.params"))?;
    }
    Ok(())
}

/// Train `config` from scratch.
pub fn train(config: RunConfig, on_epoch: impl FnMut(&EpochReport)) -> Result<Outcome> {
    Run::start(config)?.finish(on_epoch)
}
