//! Cart-pole environments and the delayed-reward wrapper.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::registry::Registry;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("step called on a finished episode; call reset first")]
    StepAfterDone,
    #[error("invalid action for `{env}`: {detail}")]
    InvalidAction { env: String, detail: String },
    #[error("invalid environment configuration: {0}")]
    Config(String),
    #[error("unknown environment `{0}`")]
    Unknown(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousDim {
    pub name: String,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Discrete { labels: Vec<String> },
    Continuous { dims: Vec<ContinuousDim> },
}

impl ActionSpace {
    /// Length of the preference vector: action count or dimension count.
    pub fn width(&self) -> usize {
        match self {
            ActionSpace::Discrete { labels } => labels.len(),
            ActionSpace::Continuous { dims } => dims.len(),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub id: String,
    pub state_dim: usize,
    pub state_names: Vec<String>,
    pub action_space: ActionSpace,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;
    fn step(&mut self, action: &Action) -> Result<Step, EnvError>;
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn spec(&self) -> &EnvSpec {
        (**self).spec()
    }
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        (**self).reset(rng)
    }
    fn step(&mut self, action: &Action) -> Result<Step, EnvError> {
        (**self).step(action)
    }
}

// ---------------------------------------------------------------------------
// cart-pole

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleParams {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half the pole length.
    pub half_length: f64,
    pub force_mag: f64,
    pub dt: f64,
    pub angle_limit_deg: f64,
    pub position_limit: f64,
    pub max_steps: usize,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            force_mag: 10.0,
            dt: 0.02,
            angle_limit_deg: 15.0,
            position_limit: 2.4,
            max_steps: 200,
        }
    }
}

impl CartPoleParams {
    pub fn validate(&self) -> Result<(), EnvError> {
        let positive = [
            ("gravity", self.gravity),
            ("cart_mass", self.cart_mass),
            ("pole_mass", self.pole_mass),
            ("half_length", self.half_length),
            ("force_mag", self.force_mag),
            ("dt", self.dt),
            ("angle_limit_deg", self.angle_limit_deg),
            ("position_limit", self.position_limit),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EnvError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_steps == 0 {
            return Err(EnvError::Config("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Angle is in radians; `theta_dot` is the pole's angular velocity.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartPoleState {
    /// `[CartPosition, CartVelocity, PoleAngle, PoleVelocityAtTip]`, where the
    /// tip velocity is `theta_dot` times the full pole length.
    pub fn observation(&self, params: &CartPoleParams) -> Vec<f64> {
        vec![
            self.x,
            self.x_dot,
            self.theta,
            self.theta_dot * 2.0 * params.half_length,
        ]
    }

    /// Mechanical energy of the cart and the pole (a uniform rod pivoting on the cart).
    pub fn energy(&self, p: &CartPoleParams) -> f64 {
        let m = p.pole_mass;
        let l = p.half_length;
        let total = p.cart_mass + m;
        0.5 * total * self.x_dot * self.x_dot
            + m * l * self.x_dot * self.theta_dot * self.theta.cos()
            + 0.5 * (4.0 / 3.0) * m * l * l * self.theta_dot * self.theta_dot
            + m * p.gravity * l * self.theta.cos()
    }
}

/// One explicit-Euler step of the pole-on-cart equations of motion under a
/// horizontal `force`.
pub fn cartpole_dynamics(s: &CartPoleState, force: f64, p: &CartPoleParams) -> CartPoleState {
    let total_mass = p.cart_mass + p.pole_mass;
    let pole_mass_length = p.pole_mass * p.half_length;
    let (sin, cos) = s.theta.sin_cos();
    let temp = (force + pole_mass_length * s.theta_dot * s.theta_dot * sin) / total_mass;
    let theta_acc = (p.gravity * sin - cos * temp)
        / (p.half_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total_mass));
    let x_acc = temp - pole_mass_length * theta_acc * cos / total_mass;
    CartPoleState {
        x: s.x + p.dt * s.x_dot,
        x_dot: s.x_dot + p.dt * x_acc,
        theta: s.theta + p.dt * s.theta_dot,
        theta_dot: s.theta_dot + p.dt * theta_acc,
    }
}

/// True once the pole leaves the angle limit or the cart leaves the track.
pub fn cartpole_out_of_bounds(s: &CartPoleState, p: &CartPoleParams) -> bool {
    s.theta.abs() > p.angle_limit_deg.to_radians() || s.x.abs() > p.position_limit
}

pub fn cartpole_reset(rng: &mut dyn RngCore) -> CartPoleState {
    let mut u = || rng.gen_range(-0.05..=0.05);
    CartPoleState {
        x: u(),
        x_dot: u(),
        theta: u(),
        theta_dot: u(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForceMode {
    /// Actions `p` and `n` push with `±force_mag`.
    Discrete,
    /// A single signed force in `[-force_mag, force_mag]`.
    Continuous,
}

#[derive(Debug, Clone)]
pub struct CartPole {
    params: CartPoleParams,
    mode: ForceMode,
    spec: EnvSpec,
    state: CartPoleState,
    steps: usize,
    done: bool,
}

pub const CARTPOLE_ACTIONS: [&str; 2] = ["p", "n"];

impl CartPole {
    pub fn new(params: CartPoleParams, mode: ForceMode) -> Result<Self, EnvError> {
        params.validate()?;
        let action_space = match mode {
            ForceMode::Discrete => ActionSpace::Discrete {
                labels: CARTPOLE_ACTIONS.iter().map(|s| s.to_string()).collect(),
            },
            ForceMode::Continuous => ActionSpace::Continuous {
                dims: vec![ContinuousDim {
                    name: "Force".into(),
                    low: -params.force_mag,
                    high: params.force_mag,
                }],
            },
        };
        let id = match mode {
            ForceMode::Discrete => "cartpole",
            ForceMode::Continuous => "cartpole-continuous",
        };
        Ok(Self {
            params,
            mode,
            spec: EnvSpec {
                id: id.into(),
                state_dim: 4,
                state_names: ["CartPosition", "CartVelocity", "PoleAngle", "PoleVelocityAtTip"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
                action_space,
            },
            state: CartPoleState::default(),
            steps: 0,
            done: true,
        })
    }

    pub fn discrete() -> Self {
        Self::new(CartPoleParams::default(), ForceMode::Discrete).expect("default params are valid")
    }

    pub fn continuous() -> Self {
        Self::new(CartPoleParams::default(), ForceMode::Continuous).expect("default params are valid")
    }

    pub fn params(&self) -> &CartPoleParams {
        &self.params
    }

    pub fn state(&self) -> CartPoleState {
        self.state
    }

    /// Starts an episode from an explicit state.
    pub fn reset_to(&mut self, state: CartPoleState) -> Vec<f64> {
        self.state = state;
        self.steps = 0;
        self.done = false;
        state.observation(&self.params)
    }

    fn force(&self, action: &Action) -> Result<f64, EnvError> {
        let bad = |detail: String| EnvError::InvalidAction {
            env: self.spec.id.clone(),
            detail,
        };
        match (self.mode, action) {
            (ForceMode::Discrete, Action::Discrete(0)) => Ok(self.params.force_mag),
            (ForceMode::Discrete, Action::Discrete(1)) => Ok(-self.params.force_mag),
            (ForceMode::Discrete, a) => Err(bad(format!("{a:?} is not p (0) or n (1)"))),
            (ForceMode::Continuous, Action::Continuous(v)) if v.len() == 1 => {
                if !v[0].is_finite() {
                    return Err(bad(format!("non-finite force {}", v[0])));
                }
                Ok(v[0].clamp(-self.params.force_mag, self.params.force_mag))
            }
            (ForceMode::Continuous, a) => Err(bad(format!("{a:?} is not a single force"))),
        }
    }
}

impl Environment for CartPole {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        let s = cartpole_reset(rng);
        self.reset_to(s)
    }

    fn step(&mut self, action: &Action) -> Result<Step, EnvError> {
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        let force = self.force(action)?;
        self.state = cartpole_dynamics(&self.state, force, &self.params);
        self.steps += 1;
        self.done = cartpole_out_of_bounds(&self.state, &self.params) || self.steps >= self.params.max_steps;
        Ok(Step {
            state: self.state.observation(&self.params),
            reward: 1.0,
            done: self.done,
        })
    }
}

// ---------------------------------------------------------------------------
// delayed reward

/// Emits the accumulated reward every `d` steps and at episode end, zero
/// otherwise. Per-episode reward totals are unchanged.
#[derive(Debug, Clone)]
pub struct DelayedReward<E> {
    inner: E,
    d: usize,
    pending: f64,
    since_emit: usize,
}

impl<E: Environment> DelayedReward<E> {
    pub fn new(inner: E, d: usize) -> Result<Self, EnvError> {
        if d < 1 {
            return Err(EnvError::Config("delay window d must be at least 1".into()));
        }
        Ok(Self {
            inner,
            d,
            pending: 0.0,
            since_emit: 0,
        })
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn window(&self) -> usize {
        self.d
    }
}

/// Wraps `env` in a [`DelayedReward`]; `d = 1` is the identity wrapper.
pub fn delayed_reward_wrap<E: Environment>(env: E, d: usize) -> Result<DelayedReward<E>, EnvError> {
    DelayedReward::new(env, d)
}

impl<E: Environment> Environment for DelayedReward<E> {
    fn spec(&self) -> &EnvSpec {
        self.inner.spec()
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.pending = 0.0;
        self.since_emit = 0;
        self.inner.reset(rng)
    }

    fn step(&mut self, action: &Action) -> Result<Step, EnvError> {
        let mut step = self.inner.step(action)?;
        self.pending += step.reward;
        self.since_emit += 1;
        if self.since_emit == self.d || step.done {
            step.reward = self.pending;
            self.pending = 0.0;
            self.since_emit = 0;
        } else {
            step.reward = 0.0;
        }
        Ok(step)
    }
}

// ---------------------------------------------------------------------------
// evaluation

/// Runs `episodes` full episodes with `actor` and returns the mean and
/// population standard deviation of the episode returns.
pub fn evaluate<E, A>(actor: &mut A, env: &mut E, episodes: usize, seed: u64) -> Result<(f64, f64), EnvError>
where
    E: Environment + ?Sized,
    A: FnMut(&[f64]) -> Action + ?Sized,
{
    if episodes == 0 {
        return Err(EnvError::Config("evaluate needs at least one episode".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut state = env.reset(&mut rng);
        let mut total = 0.0;
        loop {
            let a = actor(&state);
            let step = env.step(&a)?;
            total += step.reward;
            state = step.state;
            if step.done {
                break;
            }
        }
        returns.push(total);
    }
    Ok(mean_std(&returns))
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

// ---------------------------------------------------------------------------
// registry

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnvOptions {
    pub physics: CartPoleParams,
    /// Window for [`DelayedReward`]; `None` or `Some(1)` means dense reward.
    pub delay: Option<usize>,
}

pub type EnvFactory = fn(&EnvOptions) -> Result<Box<dyn Environment>, EnvError>;

fn wrap(env: CartPole, opts: &EnvOptions) -> Result<Box<dyn Environment>, EnvError> {
    match opts.delay {
        Some(d) if d != 1 => Ok(Box::new(DelayedReward::new(env, d)?)),
        _ => Ok(Box::new(env)),
    }
}

pub fn env_registry() -> Registry<EnvFactory> {
    let mut r: Registry<EnvFactory> = Registry::new("environment");
    r.register("cartpole", |o| wrap(CartPole::new(o.physics, ForceMode::Discrete)?, o));
    r.register("cartpole-continuous", |o| {
        wrap(CartPole::new(o.physics, ForceMode::Continuous)?, o)
    });
    r
}

pub fn make_env(id: &str, opts: &EnvOptions) -> Result<Box<dyn Environment>, EnvError> {
    let registry = env_registry();
    let factory = registry.get(id).map_err(|_| EnvError::Unknown(id.into()))?;
    factory(opts)
}
