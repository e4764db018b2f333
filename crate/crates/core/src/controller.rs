//! The knowledge controller: evaluates a rule base with trainable weights and
//! turns rule strengths into an action preference vector.
//!
//! Each rule with `k` preconditions owns a `1 x (k+1)` parameter: one weight
//! per precondition followed by a whole-rule weight. Its strength is
//! `beta[k] * min_i(beta[i] * mu_i(s_i))`.

use nncore::{Matrix, ParamId, ParamStore, Tape, Var};

use crate::envs::{Action, ActionSpace, ContinuousDim, EnvSpec};
use crate::error::{KogunError, Result};
use crate::fuzzy::{FuzzySet, MembershipFunction};
use crate::ruledsl::{resolve, ResolvedRule, RuleBase, Unit};

/// Trainable rule weights, `k+1` per rule.
#[derive(Debug, Clone)]
pub struct RuleWeights {
    params: Vec<ParamId>,
}

impl RuleWeights {
    /// All weights start at 1; a rule's whole-rule weight is replaced by its
    /// confidence when confidences are given.
    pub fn init(store: &mut ParamStore, rb: &RuleBase, confidences: Option<&[f64]>) -> Result<Self> {
        if let Some(c) = confidences {
            if c.len() != rb.rules.len() {
                return Err(KogunError::Usage(format!(
                    "{} confidences for {} rules",
                    c.len(),
                    rb.rules.len()
                )));
            }
            if let Some(bad) = c.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(KogunError::Usage(format!("confidence {bad} is not positive")));
            }
        }
        let params = rb
            .rules
            .iter()
            .enumerate()
            .map(|(l, rule)| {
                let k = rule.k();
                let mut value = Matrix::filled(1, k + 1, 1.0);
                if let Some(c) = confidences {
                    value.set(0, k, c[l]);
                }
                store.add(format!("controller.rule{}.beta", l + 1), value, true)
            })
            .collect();
        Ok(Self { params })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn param(&self, rule: usize) -> ParamId {
        self.params[rule]
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    /// Current weights of one rule, precondition weights first.
    pub fn values<'a>(&self, store: &'a ParamStore, rule: usize) -> &'a [f64] {
        store.value(self.params[rule]).as_slice()
    }

    pub fn set_trainable(&self, store: &mut ParamStore, trainable: bool) {
        for &id in &self.params {
            store.set_trainable(id, trainable);
        }
    }
}

/// `beta[k] * row_min(memberships * beta[..k])` for `memberships: n x k` and
/// `beta: 1 x (k+1)`; returns `n x 1`.
pub fn weighted_strength(tape: &mut Tape, beta: Var, memberships: Var) -> Result<Var> {
    let k = tape.shape(memberships).1;
    let pre = tape.slice_cols(beta, 0, k)?;
    let whole = tape.slice_cols(beta, k, 1)?;
    let scaled = tape.mul(memberships, pre)?;
    let m = tape.row_min(scaled)?;
    Ok(tape.mul(m, whole)?)
}

#[derive(Debug, Clone, PartialEq)]
enum Output {
    Discrete { actions: usize },
    Continuous { dims: Vec<ContinuousDim> },
}

#[derive(Debug, Clone)]
pub struct KnowledgeController {
    rules: Vec<ResolvedRule>,
    output: Output,
    weights: RuleWeights,
    state_dim: usize,
}

impl KnowledgeController {
    /// Validates `rb` against `env` and registers one weight parameter per rule.
    pub fn new(store: &mut ParamStore, rb: &RuleBase, env: &EnvSpec, confidences: Option<&[f64]>) -> Result<Self> {
        let rules = resolve(rb, env)?;
        let weights = RuleWeights::init(store, rb, confidences)?;
        let output = match &env.action_space {
            ActionSpace::Discrete { labels } => Output::Discrete { actions: labels.len() },
            ActionSpace::Continuous { dims } => Output::Continuous { dims: dims.clone() },
        };
        Ok(Self {
            rules,
            output,
            weights,
            state_dim: env.state_dim,
        })
    }

    pub fn weights(&self) -> &RuleWeights {
        &self.weights
    }

    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }

    /// Length of the preference vector.
    pub fn width(&self) -> usize {
        match &self.output {
            Output::Discrete { actions } => *actions,
            Output::Continuous { dims } => dims.len(),
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.output, Output::Continuous { .. })
    }

    fn check_states(&self, states: &Matrix) -> Result<()> {
        if states.cols() != self.state_dim {
            return Err(KogunError::Usage(format!(
                "controller expects {} state components, got {}",
                self.state_dim,
                states.cols()
            )));
        }
        Ok(())
    }

    /// `n x 1` strength node for every rule.
    pub fn rule_strengths(&self, tape: &mut Tape, store: &ParamStore, states: &Matrix) -> Result<Vec<Var>> {
        self.check_states(states)?;
        self.rules
            .iter()
            .enumerate()
            .map(|(l, rule)| {
                let mu = tape.constant(membership_matrix(rule, states));
                let beta = tape.param(store, self.weights.param(l));
                weighted_strength(tape, beta, mu)
            })
            .collect()
    }

    /// Preference vector for each state row, `n x width`.
    pub fn preference(&self, tape: &mut Tape, store: &ParamStore, states: &Matrix) -> Result<Var> {
        let strengths = self.rule_strengths(tape, store, states)?;
        let n = states.rows();
        let mut columns = Vec::with_capacity(self.width());
        for target in 0..self.width() {
            let mine: Vec<usize> = (0..self.rules.len()).filter(|&l| self.rules[l].target == target).collect();
            let col = match &self.output {
                Output::Discrete { .. } => {
                    if mine.is_empty() {
                        tape.constant(Matrix::zeros(n, 1))
                    } else {
                        let vars: Vec<Var> = mine.iter().map(|&l| strengths[l]).collect();
                        tape.max_n(&vars)?
                    }
                }
                Output::Continuous { .. } => self.continuous_column(tape, &strengths, &mine, n)?,
            };
            columns.push(col);
        }
        if columns.is_empty() {
            return Ok(tape.constant(Matrix::zeros(n, 0)));
        }
        Ok(tape.concat(&columns)?)
    }

    /// Inverse-matched value of each rule, averaged with strength weights.
    /// Strengths are clipped to `[0, 1]`, the domain of the inverse; a
    /// dimension whose strengths sum to zero gets the neutral value 0.
    fn continuous_column(&self, tape: &mut Tape, strengths: &[Var], mine: &[usize], n: usize) -> Result<Var> {
        if mine.is_empty() {
            return Ok(tape.constant(Matrix::zeros(n, 1)));
        }
        let mut weights = Vec::with_capacity(mine.len());
        let mut values = Vec::with_capacity(mine.len());
        for &l in mine {
            let w = tape.clamp(strengths[l], 0.0, 1.0);
            values.push(inverse_linear(tape, w, self.rules[l].conclusion_set.as_ref())?);
            weights.push(w);
        }
        if mine.len() == 1 {
            return Ok(values[0]);
        }
        let mut num = tape.mul(weights[0], values[0])?;
        let mut den = weights[0];
        for i in 1..mine.len() {
            let term = tape.mul(weights[i], values[i])?;
            num = tape.add(num, term)?;
            den = tape.add(den, weights[i])?;
        }
        let dead: Vec<f64> = tape
            .value(den)
            .as_slice()
            .iter()
            .map(|&d| if d == 0.0 { 1.0 } else { 0.0 })
            .collect();
        let alive = Matrix::from_vec(n, 1, dead.iter().map(|d| 1.0 - d).collect());
        let dead = tape.constant(Matrix::from_vec(n, 1, dead));
        let alive = tape.constant(alive);
        let safe = tape.add(den, dead)?;
        let avg = tape.div(num, safe)?;
        Ok(tape.mul(avg, alive)?)
    }

    /// A frozen copy of the current weights for tape-free evaluation.
    pub fn snapshot(&self, store: &ParamStore) -> ControllerSnapshot {
        ControllerSnapshot {
            rules: self.rules.clone(),
            output: self.output.clone(),
            betas: (0..self.rules.len())
                .map(|l| self.weights.values(store, l).to_vec())
                .collect(),
            state_dim: self.state_dim,
        }
    }
}

fn membership_matrix(rule: &ResolvedRule, states: &Matrix) -> Matrix {
    let k = rule.preconditions.len();
    let mut m = Matrix::zeros(states.rows(), k);
    for r in 0..states.rows() {
        let s = states.row_slice(r);
        for (i, (index, unit, mf)) in rule.preconditions.iter().enumerate() {
            m.set(r, i, degree(mf, *unit, s[*index]));
        }
    }
    m
}

fn degree(mf: &MembershipFunction, unit: Unit, raw: f64) -> f64 {
    mf.eval_unchecked(unit.convert(raw))
}

fn inverse_linear(tape: &mut Tape, w: Var, set: Option<&FuzzySet>) -> Result<Var> {
    match set.map(|s| s.mf) {
        Some(MembershipFunction::Linear { a, b }) if a != 0.0 => {
            let shifted = tape.add_scalar(w, -b);
            Ok(tape.scale(shifted, 1.0 / a))
        }
        _ => Err(KogunError::Usage(
            "continuous conclusions need a sloped linear set".into(),
        )),
    }
}

/// Tape-free controller with fixed weights. Safe to share across threads.
#[derive(Debug, Clone)]
pub struct ControllerSnapshot {
    rules: Vec<ResolvedRule>,
    output: Output,
    betas: Vec<Vec<f64>>,
    state_dim: usize,
}

impl ControllerSnapshot {
    pub fn betas(&self) -> &[Vec<f64>] {
        &self.betas
    }

    pub fn rule_strength(&self, rule: usize, state: &[f64]) -> f64 {
        let r = &self.rules[rule];
        let beta = &self.betas[rule];
        let k = r.preconditions.len();
        let m = r
            .preconditions
            .iter()
            .enumerate()
            .map(|(i, (index, unit, mf))| beta[i] * degree(mf, *unit, state[*index]))
            .fold(f64::INFINITY, f64::min);
        beta[k] * m
    }

    pub fn preference(&self, state: &[f64]) -> Vec<f64> {
        assert_eq!(state.len(), self.state_dim, "state dimension");
        let strengths: Vec<f64> = (0..self.rules.len()).map(|l| self.rule_strength(l, state)).collect();
        match &self.output {
            Output::Discrete { actions } => (0..*actions)
                .map(|a| {
                    let mut best: Option<f64> = None;
                    for (l, r) in self.rules.iter().enumerate() {
                        if r.target == a {
                            best = Some(best.map_or(strengths[l], |b| b.max(strengths[l])));
                        }
                    }
                    best.unwrap_or(0.0)
                })
                .collect(),
            Output::Continuous { dims } => (0..dims.len())
                .map(|d| {
                    let mut pairs = Vec::new();
                    for (l, r) in self.rules.iter().enumerate() {
                        if r.target == d {
                            let w = strengths[l].clamp(0.0, 1.0);
                            let Some(MembershipFunction::Linear { a, b }) = r.conclusion_set.as_ref().map(|s| s.mf) else {
                                unreachable!("continuous conclusions are validated as linear");
                            };
                            pairs.push((w, (w - b) / a));
                        }
                    }
                    match pairs.len() {
                        0 => 0.0,
                        1 => pairs[0].1,
                        _ => {
                            let den: f64 = pairs.iter().map(|p| p.0).sum();
                            if den == 0.0 {
                                0.0
                            } else {
                                pairs.iter().map(|p| p.0 * p.1).sum::<f64>() / den
                            }
                        }
                    }
                })
                .collect(),
        }
    }

    /// Acts on the preference alone: argmax for discrete actions (lowest
    /// index on ties), the clipped preference for continuous ones.
    pub fn act(&self, state: &[f64]) -> Action {
        let p = self.preference(state);
        match &self.output {
            Output::Discrete { .. } => Action::Discrete(argmax(&p)),
            Output::Continuous { dims } => Action::Continuous(
                p.iter()
                    .zip(dims)
                    .map(|(v, d)| v.clamp(d.low, d.high))
                    .collect(),
            ),
        }
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
