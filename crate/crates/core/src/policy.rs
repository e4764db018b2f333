//! Complete policies: the knowledge-guided mixture and its baselines, with
//! sampling and log-probability interfaces for PPO.

use std::f64::consts::PI;

use nncore::{Activation, Matrix, Mlp, ParamId, ParamStore, Tape, Var};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::controller::{argmax, KnowledgeController};
use crate::envs::{Action, ActionSpace, EnvSpec};
use crate::error::{KogunError, Result};
use crate::refine::{refiner_registry, Refiner, RefinerShape};
use crate::registry::Registry;
use crate::ruledsl::RuleBase;

/// Linear decay of the controller's mixing weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixSchedule {
    pub w1_start: f64,
    pub w1_end: f64,
    pub total_updates: usize,
}

impl Default for MixSchedule {
    fn default() -> Self {
        Self {
            w1_start: 0.7,
            w1_end: 0.1,
            total_updates: 1000,
        }
    }
}

impl MixSchedule {
    /// Constant weight `w1`.
    pub fn constant(w1: f64) -> Self {
        Self {
            w1_start: w1,
            w1_end: w1,
            total_updates: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for w in [self.w1_start, self.w1_end] {
            if !(0.0..=1.0).contains(&w) {
                return Err(KogunError::Config(format!("mixing weight {w} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// `(w1, w2)` at update `t`; `w1` stays at `w1_end` after `total_updates`.
    pub fn weights(&self, t: usize) -> (f64, f64) {
        let frac = if self.total_updates == 0 {
            1.0
        } else {
            (t as f64 / self.total_updates as f64).min(1.0)
        };
        let w1 = self.w1_start + (self.w1_end - self.w1_start) * frac;
        (w1, 1.0 - w1)
    }
}

/// Value-preserving node through which no gradient reaches `p`.
pub fn block_refine_gradient(tape: &mut Tape, p: Var) -> Var {
    tape.stop_gradient(p)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    /// Softmax over preferences divided by `temperature`.
    Discrete { temperature: f64 },
    /// Diagonal Gaussian with a learnable, state-independent log std.
    Gaussian { log_std: ParamId, low: Vec<f64>, high: Vec<f64> },
}

enum Body {
    Flat { net: Mlp },
    Guided {
        controller: KnowledgeController,
        refiner: Box<dyn Refiner>,
    },
    Controller { controller: KnowledgeController },
}

/// Distribution nodes for a batch of states.
#[derive(Debug, Clone, Copy)]
pub enum Dist {
    Categorical { log_probs: Var },
    Gaussian { mean: Var, log_std: Var },
}

#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub preference: Option<Var>,
    pub refined: Option<Var>,
    pub dist: Dist,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    /// For continuous heads this is the unclipped sample.
    pub action: Action,
    pub log_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub variant: String,
    pub hidden: usize,
    pub temperature: f64,
    pub log_std_init: f64,
    pub confidences: Option<Vec<f64>>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            variant: "kogun-hyper".into(),
            hidden: 32,
            temperature: 0.1,
            log_std_init: 0.5f64.ln(),
            confidences: None,
        }
    }
}

pub struct Policy {
    variant: String,
    body: Body,
    head: Head,
    state_dim: usize,
}

fn make_head(store: &mut ParamStore, env: &EnvSpec, cfg: &PolicyConfig, temperature: f64) -> Result<Head> {
    Ok(match &env.action_space {
        ActionSpace::Discrete { .. } => {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(KogunError::Config(format!("temperature must be positive, got {temperature}")));
            }
            Head::Discrete { temperature }
        }
        ActionSpace::Continuous { dims } => {
            let log_std = store.add(
                "policy.log_std",
                Matrix::filled(1, dims.len(), cfg.log_std_init),
                true,
            );
            Head::Gaussian {
                log_std,
                low: dims.iter().map(|d| d.low).collect(),
                high: dims.iter().map(|d| d.high).collect(),
            }
        }
    })
}

fn require_rules<'a>(rules: Option<&'a RuleBase>, variant: &str) -> Result<&'a RuleBase> {
    rules.ok_or_else(|| KogunError::Config(format!("variant `{variant}` needs a rule base")))
}

impl Policy {
    /// Plain MLP from state to logits (or Gaussian mean); no temperature.
    pub fn flat(store: &mut ParamStore, env: &EnvSpec, cfg: &PolicyConfig, rng: &mut dyn RngCore) -> Result<Self> {
        let width = env.action_space.width();
        let net = Mlp::new(
            store,
            "policy.flat",
            &[env.state_dim, cfg.hidden, cfg.hidden, width],
            Activation::Tanh,
            rng,
        );
        Ok(Self {
            variant: cfg.variant.clone(),
            body: Body::Flat { net },
            head: make_head(store, env, cfg, 1.0)?,
            state_dim: env.state_dim,
        })
    }

    /// Controller mixed with a refiner named in the refiner registry.
    pub fn guided(
        store: &mut ParamStore,
        env: &EnvSpec,
        rules: &RuleBase,
        refiner: &str,
        cfg: &PolicyConfig,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let controller = KnowledgeController::new(store, rules, env, cfg.confidences.as_deref())?;
        let shape = RefinerShape {
            state_dim: env.state_dim,
            width: controller.width(),
            hidden: cfg.hidden,
        };
        let factory = *refiner_registry().get(refiner)?;
        let refiner = factory(store, shape, rng)?;
        Ok(Self {
            variant: cfg.variant.clone(),
            body: Body::Guided { controller, refiner },
            head: make_head(store, env, cfg, cfg.temperature)?,
            state_dim: env.state_dim,
        })
    }

    /// The controller alone; logits are `p / temperature`.
    pub fn controller_only(store: &mut ParamStore, env: &EnvSpec, rules: &RuleBase, cfg: &PolicyConfig) -> Result<Self> {
        let controller = KnowledgeController::new(store, rules, env, cfg.confidences.as_deref())?;
        Ok(Self {
            variant: cfg.variant.clone(),
            body: Body::Controller { controller },
            head: make_head(store, env, cfg, cfg.temperature)?,
            state_dim: env.state_dim,
        })
    }

    pub fn variant(&self) -> &str {
        &self.variant
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn controller(&self) -> Option<&KnowledgeController> {
        match &self.body {
            Body::Flat { .. } => None,
            Body::Guided { controller, .. } | Body::Controller { controller } => Some(controller),
        }
    }

    pub fn refiner(&self) -> Option<&dyn Refiner> {
        match &self.body {
            Body::Guided { refiner, .. } => Some(refiner.as_ref()),
            _ => None,
        }
    }

    /// Whether the mixing weight affects this policy.
    pub fn uses_mixing(&self) -> bool {
        matches!(self.body, Body::Guided { .. })
    }

    /// Whether PPO has anything to optimize.
    pub fn is_trainable(&self) -> bool {
        !matches!(self.body, Body::Controller { .. })
    }

    /// Builds the distribution for each row of `states`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, states: &Matrix, w1: f64) -> Result<Forward> {
        if states.cols() != self.state_dim {
            return Err(KogunError::Usage(format!(
                "policy expects {} state components, got {}",
                self.state_dim,
                states.cols()
            )));
        }
        let (preference, refined, mixed) = match &self.body {
            Body::Flat { net } => {
                let s = tape.constant(states.clone());
                (None, None, net.forward(tape, store, s)?)
            }
            Body::Controller { controller } => {
                let p = controller.preference(tape, store, states)?;
                (Some(p), None, p)
            }
            Body::Guided { controller, refiner } => {
                let p = controller.preference(tape, store, states)?;
                let s = tape.constant(states.clone());
                let blocked = block_refine_gradient(tape, p);
                let mut q = refiner.refine(tape, store, s, blocked)?;
                if let Head::Gaussian { low, high, .. } = &self.head {
                    let span: Vec<f64> = low.iter().zip(high).map(|(l, h)| h - l).collect();
                    let span = tape.constant(Matrix::row(&span));
                    let low = tape.constant(Matrix::row(low));
                    q = tape.mul(q, span)?;
                    q = tape.add(q, low)?;
                }
                let a = tape.scale(p, w1);
                let b = tape.scale(q, 1.0 - w1);
                (Some(p), Some(q), tape.add(a, b)?)
            }
        };
        if !tape.value(mixed).is_finite() {
            let dump = |v: Option<Var>| v.map(|v| format!("{:?}", tape.value(v))).unwrap_or_else(|| "-".into());
            return Err(KogunError::Numeric(format!(
                "mixed preference {:?} (p = {}, p' = {})",
                tape.value(mixed),
                dump(preference),
                dump(refined)
            )));
        }
        let dist = match &self.head {
            Head::Discrete { temperature } => {
                let logits = tape.scale(mixed, 1.0 / temperature);
                Dist::Categorical {
                    log_probs: tape.log_softmax(logits),
                }
            }
            Head::Gaussian { log_std, .. } => Dist::Gaussian {
                mean: mixed,
                log_std: tape.param(store, *log_std),
            },
        };
        Ok(Forward {
            preference,
            refined,
            dist,
        })
    }

    /// Picks an action for one state.
    pub fn act(&self, store: &ParamStore, state: &[f64], w1: f64, mode: ActMode, rng: &mut dyn RngCore) -> Result<Decision> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, store, &Matrix::row(state), w1)?;
        Ok(match f.dist {
            Dist::Categorical { log_probs } => {
                let lp = tape.value(log_probs).as_slice();
                let a = match mode {
                    ActMode::Greedy => argmax(lp),
                    ActMode::Sample => sample_categorical(lp, rng.gen::<f64>()),
                };
                Decision {
                    action: Action::Discrete(a),
                    log_prob: lp[a],
                }
            }
            Dist::Gaussian { mean, log_std } => {
                let mean = tape.value(mean).as_slice();
                let log_std = tape.value(log_std).as_slice();
                let a: Vec<f64> = match mode {
                    ActMode::Greedy => mean.to_vec(),
                    ActMode::Sample => mean
                        .iter()
                        .zip(log_std)
                        .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
                        .collect(),
                };
                let log_prob = gaussian_log_density(&a, mean, log_std);
                Decision {
                    action: Action::Continuous(a),
                    log_prob,
                }
            }
        })
    }

    /// Per-row `log pi(a|s)` and entropy, both `n x 1`, on the tape.
    pub fn logprob_and_entropy(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        states: &Matrix,
        actions: &[Action],
        w1: f64,
    ) -> Result<(Var, Var)> {
        if actions.len() != states.rows() {
            return Err(KogunError::Usage(format!(
                "{} actions for {} states",
                actions.len(),
                states.rows()
            )));
        }
        let f = self.forward(tape, store, states, w1)?;
        match f.dist {
            Dist::Categorical { log_probs } => {
                let idx = actions
                    .iter()
                    .map(|a| match a {
                        Action::Discrete(i) => Ok(*i),
                        other => Err(KogunError::Usage(format!("{other:?} for a discrete head"))),
                    })
                    .collect::<Result<Vec<usize>>>()?;
                let lp = tape.gather(log_probs, &idx)?;
                let probs = tape.exp(log_probs);
                let plogp = tape.mul(probs, log_probs)?;
                let s = tape.row_sum(plogp);
                Ok((lp, tape.neg(s)))
            }
            Dist::Gaussian { mean, log_std } => {
                let d = tape.shape(mean).1;
                let rows = actions
                    .iter()
                    .map(|a| match a {
                        Action::Continuous(v) if v.len() == d => Ok(v.clone()),
                        other => Err(KogunError::Usage(format!("{other:?} for a {d}-dim Gaussian head"))),
                    })
                    .collect::<Result<Vec<Vec<f64>>>>()?;
                let a = tape.constant(Matrix::from_rows(&rows));
                let diff = tape.sub(a, mean)?;
                let inv_std = tape.neg(log_std);
                let inv_std = tape.exp(inv_std);
                let z = tape.mul(diff, inv_std)?;
                let z2 = tape.square(z);
                let half = tape.scale(z2, 0.5);
                let per_dim = tape.add(half, log_std)?;
                let per_dim = tape.add_scalar(per_dim, 0.5 * (2.0 * PI).ln());
                let nll = tape.row_sum(per_dim);
                let lp = tape.neg(nll);
                let ent = tape.add_scalar(log_std, 0.5 * (1.0 + (2.0 * PI).ln()));
                let ent = tape.row_sum(ent);
                let zeros = tape.constant(Matrix::zeros(states.rows(), 1));
                Ok((lp, tape.add(zeros, ent)?))
            }
        }
    }
}

/// Inverse-CDF draw from a categorical given log-probabilities and `u` in `[0, 1)`.
pub fn sample_categorical(log_probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    log_probs.len() - 1
}

/// Log-density of a diagonal Gaussian.
pub fn gaussian_log_density(x: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((x, m), ls)| {
            let z = (x - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

/// Everything a variant constructor may need.
pub struct PolicyBuild<'a> {
    pub store: &'a mut ParamStore,
    pub env: &'a EnvSpec,
    pub rules: Option<&'a RuleBase>,
    pub config: &'a PolicyConfig,
    pub rng: &'a mut dyn RngCore,
}

pub type PolicyFactory = fn(PolicyBuild<'_>) -> Result<Policy>;

pub fn policy_registry() -> Registry<PolicyFactory> {
    let mut r: Registry<PolicyFactory> = Registry::new("policy variant");
    r.register("flat-ppo", |b| Policy::flat(b.store, b.env, b.config, b.rng));
    r.register("kogun-hyper", |b| {
        let rules = require_rules(b.rules, "kogun-hyper")?;
        Policy::guided(b.store, b.env, rules, "hyper", b.config, b.rng)
    });
    r.register("kogun-concat", |b| {
        let rules = require_rules(b.rules, "kogun-concat")?;
        Policy::guided(b.store, b.env, rules, "concat", b.config, b.rng)
    });
    r.register("kogun-fixed-controller", |b| {
        let rules = require_rules(b.rules, "kogun-fixed-controller")?;
        let p = Policy::guided(b.store, b.env, rules, "hyper", b.config, b.rng)?;
        if let Some(c) = p.controller() {
            c.weights().set_trainable(b.store, false);
        }
        Ok(p)
    });
    r.register("pure-controller", |b| {
        let rules = require_rules(b.rules, "pure-controller")?;
        let p = Policy::controller_only(b.store, b.env, rules, b.config)?;
        if let Some(c) = p.controller() {
            c.weights().set_trainable(b.store, false);
        }
        Ok(p)
    });
    r
}

/// Builds the variant named in `build.config.variant`.
pub fn build_policy(build: PolicyBuild<'_>) -> Result<Policy> {
    let factory = *policy_registry().get(&build.config.variant)?;
    factory(build)
}

/// Whether a variant name requires a rule base.
pub fn variant_needs_rules(variant: &str) -> bool {
    variant != "flat-ppo"
}
