//! Seedable environments: a discretized pendulum swing-up and a chain world.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::invalid_arg;
use crate::{math, rng_from_seed, Error, Result, Rng};

pub const GRAVITY: f64 = 10.0;
pub const MASS: f64 = 1.0;
pub const LENGTH: f64 = 1.0;
pub const DT: f64 = 0.05;
pub const MAX_SPEED: f64 = 8.0;
pub const MAX_TORQUE: f64 = 2.0;
pub const TORQUE_LEVELS: usize = 9;
pub const PENDULUM_HORIZON: u32 = 200;
pub const CHAIN_HORIZON: u32 = 50;

/// Torque applied for each discrete pendulum action, evenly spaced on `[-2, 2]`.
pub fn torque(action: usize) -> f64 {
    -MAX_TORQUE + 2.0 * MAX_TORQUE * action as f64 / (TORQUE_LEVELS - 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvId {
    /// `pendulum-disc9`
    PendulumDisc9,
    /// `chain-N`
    Chain(usize),
}

impl EnvId {
    pub fn observation_dim(self) -> usize {
        match self {
            EnvId::PendulumDisc9 => 3,
            EnvId::Chain(n) => n,
        }
    }

    pub fn action_count(self) -> usize {
        match self {
            EnvId::PendulumDisc9 => TORQUE_LEVELS,
            EnvId::Chain(_) => 2,
        }
    }

    pub fn horizon(self) -> u32 {
        match self {
            EnvId::PendulumDisc9 => PENDULUM_HORIZON,
            EnvId::Chain(_) => CHAIN_HORIZON,
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvId::PendulumDisc9 => f.write_str("pendulum-disc9"),
            EnvId::Chain(n) => write!(f, "chain-{n}"),
        }
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "pendulum-disc9" {
            return Ok(EnvId::PendulumDisc9);
        }
        if let Some(n) = s.strip_prefix("chain-") {
            let n: usize = n.parse().map_err(|_| invalid_arg!("bad chain length in {s:?}"))?;
            if n < 2 {
                return Err(invalid_arg!("chain needs at least 2 cells, got {n}"));
            }
            return Ok(EnvId::Chain(n));
        }
        Err(invalid_arg!("unknown environment id {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EnvState {
    Pendulum { angle: f64, velocity: f64, steps: u32 },
    Chain { position: usize, steps: u32 },
}

impl EnvState {
    pub fn steps(&self) -> u32 {
        match *self {
            EnvState::Pendulum { steps, .. } | EnvState::Chain { steps, .. } => steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub torque: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: Option<StepInfo>,
}

pub fn observe(id: EnvId, state: &EnvState) -> Vec<f64> {
    match (id, *state) {
        (EnvId::PendulumDisc9, EnvState::Pendulum { angle, velocity, .. }) => {
            vec![math::cos(angle), math::sin(angle), velocity]
        }
        (EnvId::Chain(n), EnvState::Chain { position, .. }) => {
            let mut v = vec![0.0; n];
            v[position] = 1.0;
            v
        }
        _ => unreachable!("state variant always matches its environment id"),
    }
}

/// Pure transition function.
pub fn transition(id: EnvId, state: &EnvState, action: usize) -> Result<(EnvState, StepResult)> {
    if action >= id.action_count() {
        return Err(invalid_arg!("action {action} out of range for {id} ({} actions)", id.action_count()));
    }
    let horizon = id.horizon();
    match (id, *state) {
        (EnvId::PendulumDisc9, EnvState::Pendulum { angle, velocity, steps }) => {
            if steps >= horizon {
                return Err(crate::error::invalid_state!("episode already finished; reset first"));
            }
            let u = torque(action);
            let th = math::wrap_angle(angle);
            let reward = -(th * th + 0.1 * velocity * velocity + 0.001 * u * u);
            let accel = 3.0 * GRAVITY / (2.0 * LENGTH) * math::sin(angle) + 3.0 / (MASS * LENGTH * LENGTH) * u;
            let new_velocity = (velocity + accel * DT).clamp(-MAX_SPEED, MAX_SPEED);
            let new_angle = math::wrap_angle(angle + new_velocity * DT);
            let next = EnvState::Pendulum { angle: new_angle, velocity: new_velocity, steps: steps + 1 };
            let result = StepResult {
                observation: observe(id, &next),
                reward,
                done: steps + 1 >= horizon,
                info: Some(StepInfo { torque: Some(u) }),
            };
            Ok((next, result))
        }
        (EnvId::Chain(n), EnvState::Chain { position, steps }) => {
            if steps >= horizon {
                return Err(crate::error::invalid_state!("episode already finished; reset first"));
            }
            let position = if action == 0 { position.saturating_sub(1) } else { (position + 1).min(n - 1) };
            let next = EnvState::Chain { position, steps: steps + 1 };
            let result = StepResult {
                observation: observe(id, &next),
                reward: if position == n - 1 { 1.0 } else { 0.0 },
                done: steps + 1 >= horizon,
                info: None,
            };
            Ok((next, result))
        }
        _ => Err(invalid_arg!("state does not belong to {id}")),
    }
}

/// An environment instance with its own seeded random stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Env {
    id: EnvId,
    state: EnvState,
    rng: Rng,
}

impl Env {
    pub fn new(id: EnvId, seed: u64) -> Self {
        let mut env = Env { id, state: EnvState::Chain { position: 0, steps: 0 }, rng: rng_from_seed(seed) };
        env.reset_episode();
        env
    }

    pub fn id(&self) -> EnvId {
        self.id
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    /// Overwrite the state, e.g. to evaluate a hand-picked configuration.
    pub fn set_state(&mut self, state: EnvState) -> Result<()> {
        let ok = matches!(
            (self.id, state),
            (EnvId::PendulumDisc9, EnvState::Pendulum { .. }) | (EnvId::Chain(_), EnvState::Chain { .. })
        );
        if !ok {
            return Err(invalid_arg!("state does not belong to {}", self.id));
        }
        if let EnvState::Chain { position, .. } = state {
            if position >= self.id.observation_dim() {
                return Err(invalid_arg!("chain position {position} out of range"));
            }
        }
        self.state = state;
        Ok(())
    }

    pub fn observation(&self) -> Vec<f64> {
        observe(self.id, &self.state)
    }

    pub fn is_done(&self) -> bool {
        self.state.steps() >= self.id.horizon()
    }

    /// Reseed the stream and start a new episode.
    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = rng_from_seed(seed);
        self.reset_episode()
    }

    /// Start a new episode drawing from the current stream.
    pub fn reset_episode(&mut self) -> Vec<f64> {
        self.state = match self.id {
            EnvId::PendulumDisc9 => {
                // (-pi, pi]
                let angle = PI - 2.0 * PI * self.rng.gen::<f64>();
                let velocity = 2.0 * self.rng.gen::<f64>() - 1.0;
                EnvState::Pendulum { angle, velocity, steps: 0 }
            }
            EnvId::Chain(_) => EnvState::Chain { position: 0, steps: 0 },
        };
        self.observation()
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult> {
        let (next, result) = transition(self.id, &self.state, action)?;
        self.state = next;
        Ok(result)
    }

    pub fn describe(&self) -> String {
        self.id.to_string()
    }
}
