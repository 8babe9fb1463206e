use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mpac::config::{BcSettings, RunConfig};
use mpac::core::demos::{agreement, behavior_clone, record_with, PolicyDemonstrator, SwingUpController};
use mpac::core::envs::{Env, EnvId};
use mpac::core::harness::evaluate;
use mpac::core::policy::PolicySnapshot;
use mpac::run::{bc_config, Run};
use mpac::{demofile, paramfile};

#[derive(Parser)]
#[command(name = "mpac", version, about = "Multi-preference actor-critic trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file, or resume from a checkpoint.
    Train(TrainArgs),
    /// Evaluate saved policy parameters.
    Evaluate(EvaluateArgs),
    /// Record demonstrations from the scripted controller or a saved policy.
    RecordDemos(RecordArgs),
    /// Behavior-clone a policy from a demonstration file.
    Clone(CloneArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, required_unless_present = "resume")]
    config: Option<PathBuf>,
    /// Continue from this checkpoint instead of starting fresh.
    #[arg(long, conflicts_with = "config")]
    resume: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Suppress the per-epoch progress line.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct PolicySource {
    /// Policy head parameter file.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Shared trunk parameter file, for shared-trunk policies.
    #[arg(long, requires = "policy")]
    trunk: Option<PathBuf>,
}

impl PolicySource {
    fn load(&self) -> Result<Option<PolicySnapshot>> {
        let Some(head) = &self.policy else { return Ok(None) };
        let head = paramfile::load(head).with_context(|| format!("loading {}", head.display()))?;
        let trunk = match &self.trunk {
            Some(t) => Some(paramfile::load(t).with_context(|| format!("loading {}", t.display()))?),
            None => None,
        };
        Ok(Some(PolicySnapshot { trunk, head }))
    }
}

#[derive(Args)]
struct EnvChoice {
    /// Take the environment (and defaults) from this config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment id, e.g. pendulum-disc9 or chain-8.
    #[arg(long)]
    env: Option<EnvId>,
}

impl EnvChoice {
    fn resolve(&self) -> Result<(EnvId, Option<RunConfig>)> {
        let cfg = self.config.as_deref().map(RunConfig::load).transpose()?;
        match (self.env, &cfg) {
            (Some(e), _) => Ok((e, cfg)),
            (None, Some(c)) => Ok((c.settings.env, cfg)),
            (None, None) => bail!("pass --env or --config"),
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    env: EnvChoice,
    #[command(flatten)]
    source: PolicySource,
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Take argmax actions instead of sampling.
    #[arg(long)]
    greedy: bool,
}

#[derive(Args)]
struct RecordArgs {
    #[command(flatten)]
    env: EnvChoice,
    #[command(flatten)]
    source: PolicySource,
    /// Use the scripted pendulum swing-up controller.
    #[arg(long, conflicts_with = "policy")]
    scripted: bool,
    #[arg(long)]
    greedy: bool,
    /// Number of (observation, action) pairs.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CloneArgs {
    #[arg(long)]
    demos: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Hidden widths and policy step size come from this config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn train(args: TrainArgs) -> Result<()> {
    let run = match (&args.resume, &args.config) {
        (Some(ck), _) => Run::resume(ck, args.epochs, args.output_dir.clone())?,
        (None, Some(path)) => {
            let mut cfg = RunConfig::load(path)?;
            cfg.apply_env_overrides();
            if let Some(s) = args.seed {
                cfg.settings.seed = s;
            }
            if let Some(e) = args.epochs {
                cfg.epochs = e;
            }
            if let Some(d) = args.output_dir {
                cfg.output_dir = d;
            }
            Run::start(cfg)?
        }
        (None, None) => unreachable!("clap requires one of them"),
    };
    if args.resume.is_some() && args.seed.is_some() {
        eprintln!("note: --seed is ignored when resuming");
    }
    let kinds = run.config().kinds();
    let quiet = args.quiet;
    let dir = run.config().output_dir.clone();
    run.save_checkpoint()?;
    let out = run.finish(|r| {
        if quiet {
            return;
        }
        let prefs: Vec<String> = kinds
            .iter()
            .zip(r.mean_d.iter().zip(&r.lambdas))
            .map(|(k, (d, l))| format!("{k} d={d:.4} lambda={l:.4}"))
            .collect();
        eprintln!(
            "epoch {:>4} steps {:>8} return {:>9.2} [{:.2}, {:.2}] {}",
            r.epoch,
            r.env_steps,
            r.eval.mean,
            r.eval.min,
            r.eval.max,
            prefs.join(" ")
        );
    })?;
    eprintln!("finished {} epochs; outputs in {}", out.trainer.epoch(), dir.display());
    Ok(())
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<()> {
    let (env, _) = args.env.resolve()?;
    let policy = args.source.load()?.context("--policy is required")?;
    let stats = evaluate(&policy, env, args.episodes, args.seed, args.greedy)?;
    println!("episodes {} mean {} min {} max {}", stats.returns.len(), stats.mean, stats.min, stats.max);
    Ok(())
}

fn record_cmd(args: RecordArgs) -> Result<()> {
    let (id, _) = args.env.resolve()?;
    let mut env = Env::new(id, args.seed);
    let set = if args.scripted {
        if id != EnvId::PendulumDisc9 {
            bail!("the scripted controller only drives {}", EnvId::PendulumDisc9);
        }
        record_with(&SwingUpController::default(), &mut env, args.n, args.seed)?
    } else {
        let policy = args.source.load()?.context("pass --scripted or --policy")?;
        record_with(&PolicyDemonstrator { model: &policy, greedy: args.greedy }, &mut env, args.n, args.seed)?
    };
    demofile::save(&set, &args.out)?;
    let mean = set.mean_return().map_or_else(|| "n/a".to_string(), |m| format!("{m:.2}"));
    println!("{} pairs in {} episodes, mean return {mean} -> {}", set.len(), set.episodes().len(), args.out.display());
    Ok(())
}

fn clone_cmd(args: CloneArgs) -> Result<()> {
    let set = demofile::load(&args.demos).with_context(|| format!("loading {}", args.demos.display()))?;
    let cfg = args.config.as_deref().map(RunConfig::load).transpose()?;
    let defaults = cfg.unwrap_or_else(|| RunConfig::defaults(set.env()));
    if defaults.settings.env != set.env() {
        bail!("demonstrations are for {}, config for {}", set.env(), defaults.settings.env);
    }
    let d = BcSettings::default();
    let bc = BcSettings {
        epochs: args.epochs.unwrap_or(d.epochs),
        batch_size: args.batch_size.unwrap_or(d.batch_size),
        dropout: args.dropout.unwrap_or(d.dropout),
        step_size: args.step_size,
        seed: args.seed.unwrap_or(d.seed),
    };
    let hidden = args.hidden.unwrap_or(defaults.settings.hidden);
    let net = behavior_clone(&set, &bc_config(set.env(), &hidden, &bc, defaults.settings.policy_lr))?;
    let pairs: Vec<_> = set.pairs().cloned().collect();
    paramfile::save(&net, &args.out)?;
    println!("training agreement {:.4} -> {}", agreement(&net, &pairs)?, args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::RecordDemos(a) => record_cmd(a),
        Command::Clone(a) => clone_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
