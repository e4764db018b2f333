//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use kogun::envs::{Action, Environment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ramp(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

fn tri(left: f64, peak: f64, right: f64, x: f64) -> f64 {
    if x <= left || x >= right {
        0.0
    } else if x <= peak {
        (x - left) / (peak - left)
    } else {
        (right - x) / (right - peak)
    }
}

/// Membership degrees of the bundled cart-pole vocabulary, computed from the
/// documented breakpoints rather than from the rule file.
pub struct CartPoleMemberships {
    pub angle_ne: f64,
    pub angle_po: f64,
    pub angle_sm: f64,
    pub tip_ne: f64,
    pub tip_po: f64,
    pub tip_sm: f64,
    pub pos_ne: f64,
    pub pos_po: f64,
    pub vel_ne: f64,
    pub vel_po: f64,
}

impl CartPoleMemberships {
    pub fn of(s: &[f64]) -> Self {
        let deg = s[2] * 180.0 / std::f64::consts::PI;
        Self {
            angle_ne: ramp(-deg / 15.0),
            angle_po: ramp(deg / 15.0),
            angle_sm: tri(-6.0, 0.0, 6.0, deg),
            tip_ne: ramp(-s[3] / 2.0),
            tip_po: ramp(s[3] / 2.0),
            tip_sm: tri(-1.0, 0.0, 1.0, s[3]),
            pos_ne: ramp(-s[0] / 2.4),
            pos_po: ramp(s[0] / 2.4),
            vel_ne: ramp(-s[1] / 1.5),
            vel_po: ramp(s[1] / 1.5),
        }
    }
}

/// `(preconditions, action index)` for each of the six rules; action 0 is
/// `p`, action 1 is `n`.
pub fn cartpole_rule_table(m: &CartPoleMemberships) -> [(Vec<f64>, usize); 6] {
    [
        (vec![m.angle_ne, m.tip_ne], 1),
        (vec![m.angle_po, m.tip_po], 0),
        (vec![m.angle_sm, m.tip_ne], 1),
        (vec![m.angle_sm, m.tip_po], 0),
        (vec![m.angle_sm, m.tip_sm, m.pos_ne, m.vel_ne], 0),
        (vec![m.angle_sm, m.tip_sm, m.pos_po, m.vel_po], 1),
    ]
}

/// Rule strengths `beta_k * min_i(beta_i * mu_i)`, by explicit loops.
pub fn oracle_strengths(s: &[f64], betas: &[Vec<f64>]) -> Vec<f64> {
    let m = CartPoleMemberships::of(s);
    cartpole_rule_table(&m)
        .iter()
        .zip(betas)
        .map(|((mus, _), beta)| {
            let k = mus.len();
            let mut lowest = f64::INFINITY;
            for i in 0..k {
                let v = beta[i] * mus[i];
                if v < lowest {
                    lowest = v;
                }
            }
            beta[k] * lowest
        })
        .collect()
}

/// Per-action maximum over the rules concluding that action.
pub fn oracle_preference(s: &[f64], betas: &[Vec<f64>]) -> [f64; 2] {
    let m = CartPoleMemberships::of(s);
    let strengths = oracle_strengths(s, betas);
    let mut p = [0.0f64; 2];
    for ((_, action), w) in cartpole_rule_table(&m).iter().zip(strengths) {
        if w > p[*action] {
            p[*action] = w;
        }
    }
    p
}

pub fn unit_betas() -> Vec<Vec<f64>> {
    [2usize, 2, 2, 2, 4, 4].iter().map(|&k| vec![1.0; k + 1]).collect()
}

/// Cart-pole equations of motion written out from the Lagrangian form,
/// stepped with explicit Euler (positions first from the old velocities).
pub fn oracle_cartpole_step(s: [f64; 4], force: f64) -> [f64; 4] {
    let (g, mc, mp, l, tau) = (9.8, 1.0, 0.1, 0.5, 0.02);
    let [x, xd, th, thd] = s;
    let (st, ct) = (th.sin(), th.cos());
    // Solve the 2x2 system
    //   (mc+mp) xdd + mp l ct thdd = F + mp l thd^2 st
    //   ct xdd + (4/3) l thdd     = g st
    let a11 = mc + mp;
    let a12 = mp * l * ct;
    let a21 = ct;
    let a22 = 4.0 / 3.0 * l;
    let b1 = force + mp * l * thd * thd * st;
    let b2 = g * st;
    let det = a11 * a22 - a12 * a21;
    let xdd = (b1 * a22 - a12 * b2) / det;
    let thdd = (a11 * b2 - a21 * b1) / det;
    [x + tau * xd, xd + tau * xdd, th + tau * thd, thd + tau * thdd]
}

/// `sum_l (gamma lambda)^l delta_{t+l}`, stopping at the first terminal.
pub fn brute_force_gae(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let value_after = |t: usize| {
        if dones[t] {
            0.0
        } else if t + 1 < n {
            values[t + 1]
        } else {
            bootstrap
        }
    };
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            let mut weight = 1.0;
            for j in t..n {
                let delta = rewards[j] + gamma * value_after(j) - values[j];
                total += weight * delta;
                if dones[j] {
                    break;
                }
                weight *= gamma * lambda;
            }
            total
        })
        .collect()
}

/// Mean episode return of uniformly random discrete actions.
pub fn random_policy_return(env: &mut dyn Environment, episodes: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..episodes {
        env.reset(&mut rng);
        loop {
            let a = Action::Discrete(rng.gen_range(0..2));
            let step = env.step(&a).unwrap();
            total += step.reward;
            if step.done {
                break;
            }
        }
    }
    total / episodes as f64
}

/// Uniform state in a box that covers the rule breakpoints and beyond.
pub fn random_cartpole_state(rng: &mut impl Rng) -> Vec<f64> {
    let wide = rng.gen_bool(0.5);
    let (x, v, th, tip) = if wide { (3.0, 3.0, 0.4, 3.0) } else { (0.3, 0.3, 0.05, 0.5) };
    vec![
        rng.gen_range(-x..x),
        rng.gen_range(-v..v),
        rng.gen_range(-th..th),
        rng.gen_range(-tip..tip),
    ]
}

use kogun::envs::CartPole;
use kogun::policy::{build_policy, Policy, PolicyBuild, PolicyConfig};
use kogun::ppo::{Batch, ValueNet};
use nncore::{Matrix, ParamStore};

pub struct Fixture {
    pub store: ParamStore,
    pub policy: Policy,
    pub value_net: ValueNet,
}

/// A freshly initialized policy and value net for discrete or continuous cart-pole.
pub fn fixture(variant: &str, continuous: bool, seed: u64) -> Fixture {
    let env = if continuous { CartPole::continuous() } else { CartPole::discrete() };
    let rules = if continuous { kogun::rules::cartpole_continuous() } else { kogun::rules::cartpole() };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = PolicyConfig {
        variant: variant.into(),
        ..Default::default()
    };
    let policy = build_policy(PolicyBuild {
        store: &mut store,
        env: env.spec(),
        rules: Some(&rules),
        config: &config,
        rng: &mut rng,
    })
    .unwrap();
    let value_net = ValueNet::new(&mut store, 4, 32, &mut rng);
    Fixture {
        store,
        policy,
        value_net,
    }
}

/// Random states, actions, old log-probs, advantages and returns.
pub fn random_batch(rng: &mut impl Rng, n: usize, continuous: bool) -> Batch {
    let states: Vec<Vec<f64>> = (0..n).map(|_| random_cartpole_state(rng)).collect();
    let actions = (0..n)
        .map(|_| {
            if continuous {
                Action::Continuous(vec![rng.gen_range(-10.0..10.0)])
            } else {
                Action::Discrete(rng.gen_range(0..2))
            }
        })
        .collect();
    Batch {
        states: Matrix::from_rows(&states),
        actions,
        old_log_probs: (0..n).map(|_| rng.gen_range(-2.0..-0.1)).collect(),
        advantages: (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        returns: (0..n).map(|_| rng.gen_range(0.0..50.0)).collect(),
    }
}

use kogun::policy::Head;
use kogun::ppo::PpoConfig;
use nncore::{NnError, ParamId, Tape, Var};

/// The refined preference `p'` at the current parameters, `n x width`.
pub fn refined_values(f: &Fixture, store: &ParamStore, states: &Matrix, w1: f64) -> Matrix {
    let mut tape = Tape::new();
    let out = f.policy.forward(&mut tape, store, states, w1).unwrap();
    tape.value(out.refined.expect("guided policy")).clone()
}

/// The PPO loss written out by hand with `p'` replaced by the constant
/// `frozen`. Its exact derivative in the rule weights is what blocked
/// autodiff must produce.
pub fn frozen_refiner_loss(
    f: &Fixture,
    tape: &mut Tape,
    store: &ParamStore,
    batch: &Batch,
    frozen: &Matrix,
    w1: f64,
    cfg: &PpoConfig,
) -> Result<Var, NnError> {
    let n = batch.len();
    let col = |v: &[f64]| Matrix::from_vec(n, 1, v.to_vec());
    let p = f
        .policy
        .controller()
        .unwrap()
        .preference(tape, store, &batch.states)
        .map_err(|e| NnError::Usage(e.to_string()))?;
    let q = tape.constant(frozen.clone());
    let a = tape.scale(p, w1);
    let b = tape.scale(q, 1.0 - w1);
    let mixed = tape.add(a, b)?;
    let (lp, ent) = match f.policy.head() {
        Head::Discrete { temperature } => {
            let idx: Vec<usize> = batch
                .actions
                .iter()
                .map(|a| match a {
                    Action::Discrete(i) => *i,
                    _ => unreachable!(),
                })
                .collect();
            let logits = tape.scale(mixed, 1.0 / temperature);
            let lps = tape.log_softmax(logits);
            let lp = tape.gather(lps, &idx)?;
            let probs = tape.exp(lps);
            let plogp = tape.mul(probs, lps)?;
            let s = tape.row_sum(plogp);
            (lp, tape.neg(s))
        }
        Head::Gaussian { log_std, .. } => {
            let rows: Vec<Vec<f64>> = batch
                .actions
                .iter()
                .map(|a| match a {
                    Action::Continuous(v) => v.clone(),
                    _ => unreachable!(),
                })
                .collect();
            let ls = tape.param(store, *log_std);
            let act = tape.constant(Matrix::from_rows(&rows));
            let diff = tape.sub(act, mixed)?;
            let sigma = tape.exp(ls);
            let z = tape.div(diff, sigma)?;
            let z2 = tape.square(z);
            let half = tape.scale(z2, -0.5);
            let lp = tape.sub(half, ls)?;
            let lp = tape.add_scalar(lp, -0.5 * (2.0 * std::f64::consts::PI).ln());
            let lp = tape.row_sum(lp);
            let h = tape.add_scalar(ls, 0.5 * (1.0 + (2.0 * std::f64::consts::PI).ln()));
            let h = tape.row_sum(h);
            let zeros = tape.constant(Matrix::zeros(n, 1));
            (lp, tape.add(zeros, h)?)
        }
    };
    let old = tape.constant(col(&batch.old_log_probs));
    let adv = tape.constant(col(&batch.advantages));
    let d = tape.sub(lp, old)?;
    let ratio = tape.exp(d);
    let s1 = tape.mul(ratio, adv)?;
    let clipped = tape.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    let s2 = tape.mul(clipped, adv)?;
    let surr = tape.min_n(&[s1, s2])?;
    let surr = tape.mean(surr);
    let policy_term = tape.neg(surr);
    let v = f.value_net.forward(tape, store, &batch.states).map_err(|e| NnError::Usage(e.to_string()))?;
    let ret = tape.constant(col(&batch.returns));
    let err = tape.sub(v, ret)?;
    let err = tape.square(err);
    let vl = tape.mean(err);
    let vl = tape.scale(vl, cfg.value_coef);
    let h = tape.mean(ent);
    let h = tape.scale(h, -cfg.entropy_coef);
    let total = tape.add(policy_term, vl)?;
    tape.add(total, h)
}

/// Ids of the rule-weight parameters of a guided policy.
pub fn rule_weight_ids(f: &Fixture) -> Vec<ParamId> {
    f.policy
        .controller()
        .map(|c| c.weights().params().to_vec())
        .unwrap_or_default()
}
