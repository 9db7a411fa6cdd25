//! The n-agent tabular stochastic game model: validation, the two benchmark
//! games, random test instances, and the JSON game-spec file format.
//!
//! Joint actions are indexed row-major over `(a_1, ..., a_n)` with agent 1
//! slowest. Every module in this crate relies on that ordering.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tol;

/// A validated n-agent tabular stochastic game.
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone)]
pub struct Game {
    num_agents: usize,
    num_states: usize,
    num_actions: Vec<usize>,
    num_joint_actions: usize,
    /// joint index -> per-agent action indices
    joint_table: Vec<Vec<usize>>,
    /// `[s, joint_action, s']`
    transition: Array3<f64>,
    /// per agent, `[s, joint_action]`
    rewards: Vec<Array2<f64>>,
    gamma: f64,
    rho: Array1<f64>,
}

impl Game {
    pub fn new(
        num_agents: usize,
        num_actions: Vec<usize>,
        transition: Array3<f64>,
        rewards: Vec<Array2<f64>>,
        gamma: f64,
        rho: Array1<f64>,
    ) -> Result<Self> {
        if num_agents == 0 {
            return Err(Error::Domain("num_agents must be positive".into()));
        }
        if num_actions.len() != num_agents {
            return Err(Error::ShapeMismatch(format!(
                "num_actions has {} entries for {} agents",
                num_actions.len(),
                num_agents
            )));
        }
        if num_actions.contains(&0) {
            return Err(Error::Domain("every agent needs at least one action".into()));
        }
        let num_joint_actions: usize = num_actions.iter().product();
        let num_states = transition.shape()[0];
        if num_states == 0 {
            return Err(Error::Domain("state space is empty".into()));
        }
        if transition.shape() != [num_states, num_joint_actions, num_states] {
            return Err(Error::ShapeMismatch(format!(
                "transition tensor is {:?}, expected [{num_states}, {num_joint_actions}, {num_states}]",
                transition.shape()
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Domain(format!("gamma = {gamma} not in [0, 1)")));
        }
        if rewards.len() != num_agents {
            return Err(Error::ShapeMismatch(format!(
                "{} reward tensors for {} agents",
                rewards.len(),
                num_agents
            )));
        }
        for (i, r) in rewards.iter().enumerate() {
            if r.shape() != [num_states, num_joint_actions] {
                return Err(Error::ShapeMismatch(format!(
                    "reward tensor for agent {i} is {:?}, expected [{num_states}, {num_joint_actions}]",
                    r.shape()
                )));
            }
            if let Some(((s, a), v)) = r.indexed_iter().find(|(_, v)| !v.is_finite()) {
                return Err(Error::Domain(format!(
                    "reward for agent {i} at (state {s}, joint action {a}) is {v}"
                )));
            }
        }
        for s in 0..num_states {
            for a in 0..num_joint_actions {
                let mut sum = 0.0;
                for s2 in 0..num_states {
                    let p = transition[[s, a, s2]];
                    if !p.is_finite() || p < 0.0 {
                        return Err(Error::NegativeProbability {
                            location: format!("transition (state {s}, joint action {a}, next {s2})"),
                            value: p,
                        });
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > tol::TRANSITION_ROW_SUM {
                    return Err(Error::RowNotStochastic {
                        state: s,
                        joint_action: a,
                        sum,
                    });
                }
            }
        }
        if rho.len() != num_states {
            return Err(Error::ShapeMismatch(format!(
                "rho has {} entries for {} states",
                rho.len(),
                num_states
            )));
        }
        let mut rho_sum = 0.0;
        for (s, &p) in rho.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::NegativeProbability {
                    location: format!("rho (state {s})"),
                    value: p,
                });
            }
            rho_sum += p;
        }
        if (rho_sum - 1.0).abs() > tol::DISTRIBUTION_SUM {
            return Err(Error::Domain(format!(
                "rho sums to {rho_sum:.17}, not 1"
            )));
        }

        let joint_table = build_joint_table(&num_actions);
        Ok(Game {
            num_agents,
            num_states,
            num_actions,
            num_joint_actions,
            joint_table,
            transition,
            rewards,
            gamma,
            rho,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> &[usize] {
        &self.num_actions
    }

    pub fn num_joint_actions(&self) -> usize {
        self.num_joint_actions
    }

    /// Per-agent action indices of joint action `j`.
    pub fn joint_action(&self, j: usize) -> &[usize] {
        &self.joint_table[j]
    }

    /// Row-major joint index of per-agent actions (agent 1 slowest).
    pub fn joint_index(&self, actions: &[usize]) -> usize {
        debug_assert_eq!(actions.len(), self.num_agents);
        let mut j = 0;
        for (i, &a) in actions.iter().enumerate() {
            j = j * self.num_actions[i] + a;
        }
        j
    }

    pub fn transition(&self) -> &Array3<f64> {
        &self.transition
    }

    pub fn transition_prob(&self, s: usize, joint: usize, next: usize) -> f64 {
        self.transition[[s, joint, next]]
    }

    pub fn rewards(&self, agent: usize) -> &Array2<f64> {
        &self.rewards[agent]
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho(&self) -> &Array1<f64> {
        &self.rho
    }

    pub fn min_rho(&self) -> f64 {
        self.rho.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Total number of per-agent action-table entries, `sum_i |A_i|`.
    pub fn total_action_count(&self) -> usize {
        self.num_actions.iter().sum()
    }

    /// Smoothness constant of the stacked gradient field for rewards in [0, 1]:
    /// `beta = 2 * sum_i |A_i| / (1 - gamma)^3`.
    pub fn smoothness_beta(&self) -> f64 {
        2.0 * self.total_action_count() as f64 / (1.0 - self.gamma).powi(3)
    }

    /// Whether every reward entry lies in [0, 1]. The smoothness constant is
    /// only valid as stated under this convention; callers report a caveat
    /// otherwise.
    pub fn rewards_in_unit_range(&self) -> bool {
        self.rewards
            .iter()
            .all(|r| r.iter().all(|&v| (0.0..=1.0).contains(&v)))
    }

    pub fn reward_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for r in &self.rewards {
            for &v in r.iter() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }

    /// True when all agents share one reward tensor (entrywise equal).
    pub fn identical_rewards(&self) -> bool {
        self.rewards[1..].iter().all(|r| *r == self.rewards[0])
    }

    /// Number of deterministic joint policies, `prod_i |A_i|^|S|`, saturating.
    pub fn deterministic_policy_count(&self) -> u64 {
        let mut count: u64 = 1;
        for &m in &self.num_actions {
            for _ in 0..self.num_states {
                count = count.saturating_mul(m as u64);
            }
        }
        count
    }
}

fn build_joint_table(num_actions: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = num_actions.iter().product();
    let mut table = Vec::with_capacity(total);
    let n = num_actions.len();
    for mut j in 0..total {
        let mut actions = vec![0usize; n];
        for i in (0..n).rev() {
            actions[i] = j % num_actions[i];
            j /= num_actions[i];
        }
        table.push(actions);
    }
    table
}

fn uniform_rho(num_states: usize) -> Array1<f64> {
    Array1::from_elem(num_states, 1.0 / num_states as f64)
}

fn resolve_rho(num_states: usize, rho: Option<&[f64]>) -> Array1<f64> {
    match rho {
        Some(r) => Array1::from_vec(r.to_vec()),
        None => uniform_rho(num_states),
    }
}

/// Two-agent coordination game on the product state space `{1,2} x {1,2}`.
///
/// Each agent's action drives its own next state component: action 1 reaches
/// component state 1 with probability `1 - epsilon`, action 2 with probability
/// `epsilon`, independently across agents. Both agents receive the same
/// state-only reward: 2 when both components are 1, 1 when both are 2, else 0.
///
/// State `(s_1, s_2)` maps to index `2 * (s_1 - 1) + (s_2 - 1)`.
/// `rho` defaults to uniform over the four states.
pub fn build_coordination_game(epsilon: f64, gamma: f64, rho: Option<&[f64]>) -> Result<Game> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::Domain(format!(
            "coordination game needs epsilon in (0, 1/2), got {epsilon}"
        )));
    }
    let num_states = 4;
    let num_actions = vec![2, 2];
    let num_joint = 4;
    // per-component next-state law: f[a][s'] = P(component = s' + 1 | action = a + 1)
    let f = [[1.0 - epsilon, epsilon], [epsilon, 1.0 - epsilon]];
    let mut transition = Array3::zeros((num_states, num_joint, num_states));
    for s in 0..num_states {
        for j in 0..num_joint {
            let (a1, a2) = (j / 2, j % 2);
            for s2 in 0..num_states {
                let (c1, c2) = (s2 / 2, s2 % 2);
                transition[[s, j, s2]] = f[a1][c1] * f[a2][c2];
            }
        }
    }
    let state_reward = [2.0, 0.0, 0.0, 1.0];
    let mut reward = Array2::zeros((num_states, num_joint));
    for s in 0..num_states {
        for j in 0..num_joint {
            reward[[s, j]] = state_reward[s];
        }
    }
    Game::new(
        2,
        num_actions,
        transition,
        vec![reward.clone(), reward],
        gamma,
        resolve_rho(num_states, rho),
    )
}

/// The fully mixed stationary policy of the coordination game: both agents
/// play action 1 with probability `(1 - 3 epsilon) / (3 (1 - 2 epsilon))` in
/// every state. Requires `epsilon < 1/3` for the probability to be positive.
pub fn coordination_fully_mixed_policy(epsilon: f64) -> Result<crate::policy::Policy> {
    if !(epsilon > 0.0 && epsilon < 1.0 / 3.0) {
        return Err(Error::Domain(format!(
            "fully mixed policy needs epsilon in (0, 1/3), got {epsilon}"
        )));
    }
    let p = (1.0 - 3.0 * epsilon) / (3.0 * (1.0 - 2.0 * epsilon));
    let row = [p, 1.0 - p];
    let rows = Array2::from_shape_fn((4, 2), |(_, a)| row[a]);
    crate::policy::Policy::new(vec![rows.clone(), rows])
}

/// Two-agent repeated dilemma with a one-bit cooperation indicator as state.
///
/// State 1 signals "both cooperated last stage" with accuracy `1 - epsilon`:
/// the next state is 1 with probability `1 - epsilon` after joint action
/// `(1, 1)` and with probability `epsilon` otherwise. Rewards are
/// state-independent: `(-1,-1)`, `(-3,0)`, `(0,-3)`, `(-2,-2)` for joint
/// actions `(1,1)`, `(1,2)`, `(2,1)`, `(2,2)`.
///
/// `rho` defaults to uniform over the two states.
pub fn build_prisoners_dilemma(epsilon: f64, gamma: f64, rho: Option<&[f64]>) -> Result<Game> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!(
            "prisoners dilemma needs epsilon in (0, 1), got {epsilon}"
        )));
    }
    let num_states = 2;
    let num_actions = vec![2, 2];
    let num_joint = 4;
    let mut transition = Array3::zeros((num_states, num_joint, num_states));
    for s in 0..num_states {
        for j in 0..num_joint {
            let p_coop_signal = if j == 0 { 1.0 - epsilon } else { epsilon };
            transition[[s, j, 0]] = p_coop_signal;
            transition[[s, j, 1]] = 1.0 - p_coop_signal;
        }
    }
    // rows: joint actions (1,1), (1,2), (2,1), (2,2)
    let r1 = [-1.0, -3.0, 0.0, -2.0];
    let r2 = [-1.0, 0.0, -3.0, -2.0];
    let reward_1 = Array2::from_shape_fn((num_states, num_joint), |(_, j)| r1[j]);
    let reward_2 = Array2::from_shape_fn((num_states, num_joint), |(_, j)| r2[j]);
    Game::new(
        2,
        num_actions,
        transition,
        vec![reward_1, reward_2],
        gamma,
        resolve_rho(num_states, rho),
    )
}

/// The cooperative equilibrium of the dilemma game: cooperate in state 1,
/// betray in state 2.
pub fn prisoners_cooperative_policy() -> crate::policy::Policy {
    let mut rows = Array2::zeros((2, 2));
    rows[[0, 0]] = 1.0;
    rows[[1, 1]] = 1.0;
    crate::policy::Policy::new(vec![rows.clone(), rows]).expect("deterministic rows are valid")
}

/// The all-betray equilibrium of the dilemma game.
pub fn prisoners_all_betray_policy() -> crate::policy::Policy {
    let mut rows = Array2::zeros((2, 2));
    rows[[0, 1]] = 1.0;
    rows[[1, 1]] = 1.0;
    crate::policy::Policy::new(vec![rows.clone(), rows]).expect("deterministic rows are valid")
}

/// Dimensions and options for a random test game.
#[derive(Debug, Clone)]
pub struct RandomGameConfig {
    pub num_agents: usize,
    pub num_states: usize,
    pub num_actions: Vec<usize>,
    pub gamma: f64,
    /// All agents share one reward tensor when set.
    pub identical_rewards: bool,
}

/// Deterministic random game: transition rows drawn uniform then normalized,
/// rewards uniform in [0, 1], uniform initial distribution.
pub fn random_game(config: &RandomGameConfig, seed: u64) -> Result<Game> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_joint: usize = config.num_actions.iter().product();
    let ns = config.num_states;
    if ns == 0 || config.num_agents == 0 || config.num_actions.contains(&0) {
        return Err(Error::Domain("random game dimensions must be positive".into()));
    }
    let mut transition = Array3::zeros((ns, num_joint, ns));
    for s in 0..ns {
        for j in 0..num_joint {
            let mut row: Vec<f64> = (0..ns).map(|_| rng.gen::<f64>()).collect();
            let mut sum: f64 = row.iter().sum();
            while sum <= f64::MIN_POSITIVE {
                row = (0..ns).map(|_| rng.gen::<f64>()).collect();
                sum = row.iter().sum();
            }
            for (s2, v) in row.iter().enumerate() {
                transition[[s, j, s2]] = v / sum;
            }
            // force the row to sum to 1 exactly at the largest entry
            let total: f64 = (0..ns).map(|s2| transition[[s, j, s2]]).sum();
            let argmax = (0..ns)
                .max_by(|&a, &b| {
                    transition[[s, j, a]]
                        .partial_cmp(&transition[[s, j, b]])
                        .unwrap()
                })
                .unwrap();
            transition[[s, j, argmax]] += 1.0 - total;
        }
    }
    let draw_reward = |rng: &mut ChaCha8Rng| {
        Array2::from_shape_fn((ns, num_joint), |_| rng.gen::<f64>())
    };
    let rewards = if config.identical_rewards {
        let shared = draw_reward(&mut rng);
        vec![shared; config.num_agents]
    } else {
        (0..config.num_agents).map(|_| draw_reward(&mut rng)).collect()
    };
    Game::new(
        config.num_agents,
        config.num_actions.clone(),
        transition,
        rewards,
        config.gamma,
        uniform_rho(ns),
    )
}

/// Declarative description of a game. Either `builder` + `epsilon` names one
/// of the two built-in games, or `transition` + `rewards` give dense tensors
/// (`transition[s][joint][next]`, `rewards[agent][s][joint]`).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GameSpec {
    pub num_agents: usize,
    pub num_states: usize,
    pub num_actions: Vec<usize>,
    pub gamma: f64,
    pub rho: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builder: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewards: Option<Vec<Vec<Vec<f64>>>>,
}

impl GameSpec {
    /// Dense spec capturing an existing game bit-exactly.
    pub fn from_game(game: &Game) -> Self {
        let ns = game.num_states();
        let nj = game.num_joint_actions();
        let transition = (0..ns)
            .map(|s| {
                (0..nj)
                    .map(|j| (0..ns).map(|s2| game.transition_prob(s, j, s2)).collect())
                    .collect()
            })
            .collect();
        let rewards = (0..game.num_agents())
            .map(|i| {
                (0..ns)
                    .map(|s| (0..nj).map(|j| game.rewards(i)[[s, j]]).collect())
                    .collect()
            })
            .collect();
        GameSpec {
            num_agents: game.num_agents(),
            num_states: ns,
            num_actions: game.num_actions().to_vec(),
            gamma: game.gamma(),
            rho: game.rho().to_vec(),
            builder: None,
            epsilon: None,
            transition: Some(transition),
            rewards: Some(rewards),
        }
    }
}

/// Materialize and validate a game from its spec.
pub fn build_game(spec: &GameSpec) -> Result<Game> {
    if let Some(name) = &spec.builder {
        let epsilon = spec.epsilon.ok_or_else(|| {
            Error::Domain(format!("builder \"{name}\" requires an epsilon field"))
        })?;
        let rho = if spec.rho.is_empty() {
            None
        } else {
            Some(spec.rho.as_slice())
        };
        let game = match name.as_str() {
            "coordination" => build_coordination_game(epsilon, spec.gamma, rho)?,
            "prisoners_dilemma" => build_prisoners_dilemma(epsilon, spec.gamma, rho)?,
            other => {
                return Err(Error::Domain(format!("unknown builder \"{other}\"")));
            }
        };
        if game.num_states() != spec.num_states
            || game.num_agents() != spec.num_agents
            || game.num_actions() != spec.num_actions.as_slice()
        {
            return Err(Error::ShapeMismatch(format!(
                "spec dimensions do not match builder \"{name}\""
            )));
        }
        return Ok(game);
    }

    let transition_nested = spec
        .transition
        .as_ref()
        .ok_or_else(|| Error::Domain("spec needs either a builder or dense tensors".into()))?;
    let rewards_nested = spec
        .rewards
        .as_ref()
        .ok_or_else(|| Error::Domain("dense spec is missing rewards".into()))?;
    let ns = spec.num_states;
    let nj: usize = spec.num_actions.iter().product();
    let mut transition = Array3::zeros((ns, nj, ns));
    if transition_nested.len() != ns {
        return Err(Error::ShapeMismatch(format!(
            "transition has {} state rows, expected {ns}",
            transition_nested.len()
        )));
    }
    for (s, per_action) in transition_nested.iter().enumerate() {
        if per_action.len() != nj {
            return Err(Error::ShapeMismatch(format!(
                "transition[{s}] has {} joint-action rows, expected {nj}",
                per_action.len()
            )));
        }
        for (j, row) in per_action.iter().enumerate() {
            if row.len() != ns {
                return Err(Error::ShapeMismatch(format!(
                    "transition[{s}][{j}] has {} entries, expected {ns}",
                    row.len()
                )));
            }
            for (s2, &p) in row.iter().enumerate() {
                transition[[s, j, s2]] = p;
            }
        }
    }
    if rewards_nested.len() != spec.num_agents {
        return Err(Error::ShapeMismatch(format!(
            "rewards has {} agent tensors, expected {}",
            rewards_nested.len(),
            spec.num_agents
        )));
    }
    let mut rewards = Vec::with_capacity(spec.num_agents);
    for (i, per_state) in rewards_nested.iter().enumerate() {
        if per_state.len() != ns {
            return Err(Error::ShapeMismatch(format!(
                "rewards[{i}] has {} state rows, expected {ns}",
                per_state.len()
            )));
        }
        let mut r = Array2::zeros((ns, nj));
        for (s, row) in per_state.iter().enumerate() {
            if row.len() != nj {
                return Err(Error::ShapeMismatch(format!(
                    "rewards[{i}][{s}] has {} entries, expected {nj}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                r[[s, j]] = v;
            }
        }
        rewards.push(r);
    }
    Game::new(
        spec.num_agents,
        spec.num_actions.clone(),
        transition,
        rewards,
        spec.gamma,
        Array1::from_vec(spec.rho.clone()),
    )
}
