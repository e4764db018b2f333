//! PPO with generalized advantage estimation.

use std::io::Write;
use std::time::Instant;

use nncore::{Activation, Adam, AdamConfig, Matrix, Mlp, ParamId, ParamStore, Tape, Var};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controller::ControllerSnapshot;
use crate::envs::{mean_std, Action, Environment};
use crate::error::{KogunError, Result};
use crate::policy::{ActMode, MixSchedule, Policy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoConfig {
    pub lr: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub horizon: usize,
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub total_updates: usize,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            gamma: 0.99,
            lambda: 0.95,
            horizon: 128,
            clip_eps: 0.2,
            epochs: 4,
            minibatch: 32,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            total_updates: 1000,
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(KogunError::Config(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail(format!("lambda must be in [0, 1], got {}", self.lambda));
        }
        if self.clip_eps.is_nan() || self.clip_eps <= 0.0 {
            return fail(format!("clip_eps must be positive, got {}", self.clip_eps));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if self.horizon == 0 || self.epochs == 0 || self.minibatch == 0 {
            return fail("horizon, epochs and minibatch must be at least 1".into());
        }
        if self.max_grad_norm.is_nan() || self.max_grad_norm <= 0.0 {
            return fail(format!("max_grad_norm must be positive, got {}", self.max_grad_norm));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub done: bool,
    pub value: f64,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub transitions: Vec<Transition>,
    /// Value of the state after the last transition; 0 when that transition ended an episode.
    pub bootstrap: f64,
    /// Returns of the episodes that finished during this rollout, as the
    /// (possibly delayed) environment reported them.
    pub finished_returns: Vec<f64>,
}

/// Advantages and returns. `dones[t]` cuts the recursion after step `t`;
/// `bootstrap` is the value of the state following the last step.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(KogunError::Usage(format!(
            "gae over {} rewards, {} values, {} dones",
            n,
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { bootstrap };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts and scales to mean 0 and standard deviation 1.
pub fn normalize(values: &mut [f64]) {
    let (mean, std) = mean_std(values);
    if values.is_empty() {
        return;
    }
    let scale = 1.0 / (std + 1e-8);
    values.iter_mut().for_each(|v| *v = (*v - mean) * scale);
}

#[derive(Debug, Clone)]
pub struct ValueNet {
    net: Mlp,
}

impl ValueNet {
    pub fn new(store: &mut ParamStore, state_dim: usize, hidden: usize, rng: &mut dyn RngCore) -> Self {
        Self {
            net: Mlp::new(store, "value", &[state_dim, hidden, hidden, 1], Activation::Tanh, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, states: &Matrix) -> Result<Var> {
        let s = tape.constant(states.clone());
        Ok(self.net.forward(tape, store, s)?)
    }

    pub fn value(&self, store: &ParamStore, state: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let v = self.forward(&mut tape, store, &Matrix::row(state))?;
        Ok(tape.value(v).item())
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.net.params()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Matrix,
    pub actions: Vec<Action>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// `-mean(min(r A, clip(r) A)) + c_v mean((V - R)^2) - c_e mean(H)`.
pub fn ppo_loss(
    tape: &mut Tape,
    store: &ParamStore,
    policy: &Policy,
    value_net: &ValueNet,
    batch: &Batch,
    w1: f64,
    cfg: &PpoConfig,
) -> Result<LossParts> {
    let n = batch.len();
    let col = |v: &[f64]| Matrix::from_vec(n, 1, v.to_vec());
    let (lp, ent) = policy.logprob_and_entropy(tape, store, &batch.states, &batch.actions, w1)?;
    let old = tape.constant(col(&batch.old_log_probs));
    let adv = tape.constant(col(&batch.advantages));
    let diff = tape.sub(lp, old)?;
    let ratio = tape.exp(diff);
    let surr1 = tape.mul(ratio, adv)?;
    let clipped = tape.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    let surr2 = tape.mul(clipped, adv)?;
    let surr = tape.min_n(&[surr1, surr2])?;
    let surr = tape.mean(surr);
    let policy_loss = tape.neg(surr);

    let v = value_net.forward(tape, store, &batch.states)?;
    let ret = tape.constant(col(&batch.returns));
    let err = tape.sub(v, ret)?;
    let err = tape.square(err);
    let value_loss = tape.mean(err);
    let entropy = tape.mean(ent);

    let vterm = tape.scale(value_loss, cfg.value_coef);
    let eterm = tape.scale(entropy, -cfg.entropy_coef);
    let total = tape.add(policy_loss, vterm)?;
    let total = tape.add(total, eterm)?;

    let eps = cfg.clip_eps;
    let clip_fraction = tape
        .value(ratio)
        .as_slice()
        .iter()
        .filter(|r| (**r - 1.0).abs() > eps)
        .count() as f64
        / n.max(1) as f64;
    let value_of = |v: Var| tape.value(v).item();
    Ok(LossParts {
        total,
        policy: value_of(policy_loss),
        value: value_of(value_loss),
        entropy: value_of(entropy),
        clip_fraction,
    })
}

/// Where the rollout left the environment between calls.
#[derive(Debug, Clone, Default)]
pub struct EnvCursor {
    state: Option<Vec<f64>>,
    episode_return: f64,
}

/// Runs exactly `horizon` steps, continuing episodes across calls.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollout(
    env: &mut dyn Environment,
    policy: &Policy,
    value_net: &ValueNet,
    store: &ParamStore,
    horizon: usize,
    w1: f64,
    rng: &mut dyn RngCore,
    cursor: &mut EnvCursor,
) -> Result<Rollout> {
    let mut transitions = Vec::with_capacity(horizon);
    let mut finished_returns = Vec::new();
    for step in 0..horizon {
        let state = match cursor.state.take() {
            Some(s) => s,
            None => {
                cursor.episode_return = 0.0;
                env.reset(rng)
            }
        };
        let decision = policy.act(store, &state, w1, ActMode::Sample, rng)?;
        let value = value_net.value(store, &state)?;
        let out = env
            .step(&decision.action)
            .map_err(|source| KogunError::Rollout { step, source })?;
        cursor.episode_return += out.reward;
        if out.done {
            finished_returns.push(cursor.episode_return);
        } else {
            cursor.state = Some(out.state);
        }
        transitions.push(Transition {
            state,
            action: decision.action,
            reward: out.reward,
            done: out.done,
            value,
            log_prob: decision.log_prob,
        });
    }
    let bootstrap = match &cursor.state {
        Some(s) => value_net.value(store, s)?,
        None => 0.0,
    };
    Ok(Rollout {
        transitions,
        bootstrap,
        finished_returns,
    })
}

/// Mean and population std of `episodes` returns of `policy` at weight `w1`.
pub fn evaluate_policy(
    policy: &Policy,
    store: &ParamStore,
    env: &mut dyn Environment,
    episodes: usize,
    seed: u64,
    w1: f64,
    mode: ActMode,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut state = env.reset(&mut rng);
        let mut total = 0.0;
        loop {
            let d = policy.act(store, &state, w1, mode, &mut rng)?;
            let out = env.step(&d.action)?;
            total += out.reward;
            state = out.state;
            if out.done {
                break;
            }
        }
        returns.push(total);
    }
    Ok(mean_std(&returns))
}

/// Same as [`evaluate_policy`] for a frozen controller acting on its preference.
pub fn evaluate_controller(
    snapshot: &ControllerSnapshot,
    env: &mut dyn Environment,
    episodes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut actor = |s: &[f64]| snapshot.act(s);
    Ok(crate::envs::evaluate(&mut actor, env, episodes, seed)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub update_index: usize,
    pub env_steps: usize,
    pub mean_eval_return: f64,
    pub std_eval_return: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub w1: f64,
    pub wall_clock_s: f64,
}

pub const LOG_COLUMNS: [&str; 9] = [
    "update_index",
    "env_steps",
    "mean_eval_return",
    "std_eval_return",
    "policy_loss",
    "value_loss",
    "entropy",
    "w1",
    "wall_clock_s",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerRow {
    pub update_index: usize,
    pub mean_eval_return: f64,
    pub std_eval_return: f64,
    pub min_beta: f64,
    pub max_beta: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
    pub controller_rows: Vec<ControllerRow>,
    /// Optimizer steps whose gradient norm exceeded the clip threshold.
    pub clipped_steps: usize,
    pub optimizer_steps: usize,
}

impl TrainingLog {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", LOG_COLUMNS.join(","))?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.update_index,
                r.env_steps,
                r.mean_eval_return,
                r.std_eval_return,
                r.policy_loss,
                r.value_loss,
                r.entropy,
                r.w1,
                r.wall_clock_s
            )?;
        }
        Ok(())
    }

    pub fn write_controller_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "update_index,mean_eval_return,std_eval_return,min_beta,max_beta")?;
        for r in &self.controller_rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.update_index, r.mean_eval_return, r.std_eval_return, r.min_beta, r.max_beta
            )?;
        }
        Ok(())
    }

    /// First logged update whose mean evaluation return reaches `threshold`.
    pub fn first_reaching(&self, threshold: f64) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.mean_eval_return >= threshold)
            .map(|r| r.update_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Evaluate after every `every` updates (and before the first).
    pub every: usize,
    /// Frozen-controller evaluation cadence; 0 disables it.
    pub controller_every: usize,
    pub greedy: bool,
    /// Record elapsed seconds; off gives byte-identical logs across reruns.
    pub wall_clock: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 10,
            every: 5,
            controller_every: 10,
            greedy: true,
            wall_clock: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub update_index: usize,
    pub w1: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub grad_clipped: usize,
}

/// Derives an independent stream seed.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One training run: owns parameters, optimizer state and environments.
pub struct Trainer {
    pub store: ParamStore,
    pub policy: Policy,
    pub value_net: ValueNet,
    env: Box<dyn Environment>,
    eval_env: Box<dyn Environment>,
    cfg: PpoConfig,
    schedule: MixSchedule,
    eval: EvalConfig,
    adam: Adam,
    rng: ChaCha8Rng,
    cursor: EnvCursor,
    seed: u64,
    update: usize,
    env_steps: usize,
    started: Instant,
    log: TrainingLog,
    last: Option<UpdateStats>,
    update_param: ParamId,
}

pub const UPDATE_INDEX_PARAM: &str = "trainer.update_index";

impl Trainer {
    /// `eval_env` should report undelayed rewards. The value network is
    /// created here in `store`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mut store: ParamStore,
        policy: Policy,
        env: Box<dyn Environment>,
        eval_env: Box<dyn Environment>,
        cfg: PpoConfig,
        schedule: MixSchedule,
        eval: EvalConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        schedule.validate()?;
        if eval.episodes == 0 || eval.every == 0 {
            return Err(KogunError::Config("evaluation needs at least one episode and a cadence of at least 1".into()));
        }
        let mut init_rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 1));
        let value_net = ValueNet::new(&mut store, env.spec().state_dim, 32, &mut init_rng);
        let update_param = store.add(UPDATE_INDEX_PARAM, Matrix::scalar(0.0), false);
        Ok(Self {
            store,
            policy,
            value_net,
            env,
            eval_env,
            adam: Adam::new(AdamConfig {
                lr: cfg.lr,
                ..AdamConfig::default()
            }),
            cfg,
            schedule,
            eval,
            rng: ChaCha8Rng::seed_from_u64(sub_seed(seed, 2)),
            cursor: EnvCursor::default(),
            seed,
            update: 0,
            env_steps: 0,
            started: Instant::now(),
            log: TrainingLog::default(),
            last: None,
            update_param,
        })
    }

    pub fn update_index(&self) -> usize {
        self.update
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn into_log(self) -> TrainingLog {
        self.log
    }

    pub fn config(&self) -> &PpoConfig {
        &self.cfg
    }

    pub fn w1(&self) -> f64 {
        self.schedule.weights(self.update).0
    }

    fn eval_seed(&self) -> u64 {
        sub_seed(self.seed, 1000 + self.update as u64)
    }

    /// Appends an evaluation row for the current parameters.
    pub fn record_eval(&mut self) -> Result<()> {
        let mode = if self.eval.greedy { ActMode::Greedy } else { ActMode::Sample };
        let w1 = self.w1();
        // A policy that never changes is scored on the same episodes every
        // time, so its curve is a level line.
        let seed = if self.policy.is_trainable() { self.eval_seed() } else { sub_seed(self.seed, 1000) };
        let (mean, std) = evaluate_policy(
            &self.policy,
            &self.store,
            self.eval_env.as_mut(),
            self.eval.episodes,
            seed,
            w1,
            mode,
        )?;
        let nan = f64::NAN;
        let last = self.last;
        self.log.rows.push(LogRow {
            update_index: self.update,
            env_steps: self.env_steps,
            mean_eval_return: mean,
            std_eval_return: std,
            policy_loss: last.map_or(nan, |s| s.policy_loss),
            value_loss: last.map_or(nan, |s| s.value_loss),
            entropy: last.map_or(nan, |s| s.entropy),
            w1,
            wall_clock_s: if self.eval.wall_clock {
                self.started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
        Ok(())
    }

    /// Appends a frozen-controller evaluation row, if the policy has a controller.
    pub fn record_controller_eval(&mut self) -> Result<()> {
        let Some(controller) = self.policy.controller() else {
            return Ok(());
        };
        let snapshot = controller.snapshot(&self.store);
        let (mean, std) = evaluate_controller(
            &snapshot,
            self.eval_env.as_mut(),
            self.eval.episodes,
            // Same episodes every time: the curve moves only when the rule weights do.
            sub_seed(self.seed, 500_000),
        )?;
        let all = snapshot.betas().iter().flatten();
        let min_beta = all.clone().copied().fold(f64::INFINITY, f64::min);
        let max_beta = all.copied().fold(f64::NEG_INFINITY, f64::max);
        self.log.controller_rows.push(ControllerRow {
            update_index: self.update,
            mean_eval_return: mean,
            std_eval_return: std,
            min_beta,
            max_beta,
        });
        Ok(())
    }

    fn record_due(&mut self) -> Result<()> {
        let final_update = self.update == self.cfg.total_updates;
        if self.update.is_multiple_of(self.eval.every) || final_update {
            self.record_eval()?;
        }
        let ce = self.eval.controller_every;
        if ce > 0 && (self.update.is_multiple_of(ce) || final_update) {
            self.record_controller_eval()?;
        }
        Ok(())
    }

    /// One collect / advantage / optimize cycle.
    pub fn update_once(&mut self) -> Result<UpdateStats> {
        let w1 = self.w1();
        let rollout = collect_rollout(
            self.env.as_mut(),
            &self.policy,
            &self.value_net,
            &self.store,
            self.cfg.horizon,
            w1,
            &mut self.rng,
            &mut self.cursor,
        )?;
        let n = rollout.transitions.len();
        let rewards: Vec<f64> = rollout.transitions.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = rollout.transitions.iter().map(|t| t.value).collect();
        let dones: Vec<bool> = rollout.transitions.iter().map(|t| t.done).collect();
        let (mut adv, returns) = gae(&rewards, &values, &dones, rollout.bootstrap, self.cfg.gamma, self.cfg.lambda)?;
        if self.cfg.normalize_advantages {
            normalize(&mut adv);
        }

        let mut indices: Vec<usize> = (0..n).collect();
        let mut sums = [0.0; 4];
        let mut batches = 0usize;
        let mut clipped = 0usize;
        for _ in 0..self.cfg.epochs {
            indices.shuffle(&mut self.rng);
            for chunk in indices.chunks(self.cfg.minibatch) {
                let batch = Batch {
                    states: Matrix::from_rows(&chunk.iter().map(|&i| rollout.transitions[i].state.as_slice()).collect::<Vec<_>>()),
                    actions: chunk.iter().map(|&i| rollout.transitions[i].action.clone()).collect(),
                    old_log_probs: chunk.iter().map(|&i| rollout.transitions[i].log_prob).collect(),
                    advantages: chunk.iter().map(|&i| adv[i]).collect(),
                    returns: chunk.iter().map(|&i| returns[i]).collect(),
                };
                let mut tape = Tape::new();
                let parts = ppo_loss(&mut tape, &self.store, &self.policy, &self.value_net, &batch, w1, &self.cfg)?;
                let total = tape.value(parts.total).item();
                if !total.is_finite() {
                    return Err(KogunError::Numeric(format!(
                        "loss {total} at update {} (policy {}, value {}, entropy {})",
                        self.update, parts.policy, parts.value, parts.entropy
                    )));
                }
                self.store.zero_grads();
                tape.backward_into(parts.total, &mut self.store)?;
                if self.store.clip_grad_norm(self.cfg.max_grad_norm) > self.cfg.max_grad_norm {
                    clipped += 1;
                }
                self.adam.step(&mut self.store);
                sums[0] += parts.policy;
                sums[1] += parts.value;
                sums[2] += parts.entropy;
                sums[3] += parts.clip_fraction;
                batches += 1;
            }
        }
        self.store.zero_grads();
        let b = batches.max(1) as f64;
        let stats = UpdateStats {
            update_index: self.update,
            w1,
            policy_loss: sums[0] / b,
            value_loss: sums[1] / b,
            entropy: sums[2] / b,
            clip_fraction: sums[3] / b,
            grad_clipped: clipped,
        };
        self.log.clipped_steps += clipped;
        self.log.optimizer_steps += batches;
        self.update += 1;
        self.env_steps += n;
        self.store
            .set_value(self.update_param, Matrix::scalar(self.update as f64))
            .expect("scalar");
        self.last = Some(stats);
        Ok(stats)
    }

    /// Runs `updates` more updates, evaluating on the configured cadence.
    /// The pre-training evaluation is logged on the first call; zero updates
    /// on a fresh trainer leave the log empty.
    pub fn run(&mut self, updates: usize) -> Result<()> {
        if updates == 0 {
            return Ok(());
        }
        if self.update == 0 && self.log.rows.is_empty() {
            self.record_due()?;
        }
        for _ in 0..updates {
            self.update_once()?;
            self.record_due()?;
        }
        Ok(())
    }

    /// Logs evaluations at the configured cadence without optimizing, as if
    /// `updates` updates had run. Meant for policies with nothing to train.
    pub fn run_frozen(&mut self, updates: usize) -> Result<()> {
        if updates == 0 {
            return Ok(());
        }
        self.record_due()?;
        for _ in 0..updates {
            self.update += 1;
            self.record_due()?;
        }
        Ok(())
    }

    pub fn write_checkpoint<W: Write>(&self, w: W) -> Result<()> {
        Ok(nncore::checkpoint::write_checkpoint(w, &self.store)?)
    }
}

/// Convenience: run a fresh trainer for its configured number of updates.
pub fn train(trainer: &mut Trainer) -> Result<TrainingLog> {
    let n = trainer.config().total_updates;
    if trainer.policy.is_trainable() {
        trainer.run(n)?;
    } else {
        trainer.run_frozen(n)?;
    }
    Ok(trainer.log().clone())
}
