//! Direct distributed policies: one probability row per (agent, state).

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::game::Game;
use crate::tol;

/// Per-agent probability tables over that agent's actions, one row per state.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    rows: Vec<Array2<f64>>,
}

impl Policy {
    /// Validates that every row is a probability vector.
    pub fn new(rows: Vec<Array2<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::ShapeMismatch("policy has no agents".into()));
        }
        for (i, table) in rows.iter().enumerate() {
            for (s, row) in table.rows().into_iter().enumerate() {
                let mut sum = 0.0;
                for (a, &v) in row.iter().enumerate() {
                    if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                        return Err(Error::NegativeProbability {
                            location: format!("policy (agent {i}, state {s}, action {a})"),
                            value: v,
                        });
                    }
                    sum += v;
                }
                if (sum - 1.0).abs() > tol::POLICY_ROW_SUM {
                    return Err(Error::Domain(format!(
                        "policy row (agent {i}, state {s}) sums to {sum:.17}"
                    )));
                }
            }
        }
        Ok(Policy { rows })
    }

    /// Uniform policy for a game's dimensions.
    pub fn uniform(game: &Game) -> Self {
        let rows = game
            .num_actions()
            .iter()
            .map(|&m| Array2::from_elem((game.num_states(), m), 1.0 / m as f64))
            .collect();
        Policy { rows }
    }

    /// Deterministic policy from chosen actions, `actions[agent][state]`.
    pub fn deterministic(game: &Game, actions: &[Vec<usize>]) -> Result<Self> {
        if actions.len() != game.num_agents() {
            return Err(Error::ShapeMismatch(format!(
                "{} action lists for {} agents",
                actions.len(),
                game.num_agents()
            )));
        }
        let mut rows = Vec::with_capacity(actions.len());
        for (i, per_state) in actions.iter().enumerate() {
            if per_state.len() != game.num_states() {
                return Err(Error::ShapeMismatch(format!(
                    "agent {i} has {} state entries, expected {}",
                    per_state.len(),
                    game.num_states()
                )));
            }
            let m = game.num_actions()[i];
            let mut table = Array2::zeros((game.num_states(), m));
            for (s, &a) in per_state.iter().enumerate() {
                if a >= m {
                    return Err(Error::Domain(format!(
                        "agent {i} action {a} out of range at state {s}"
                    )));
                }
                table[[s, a]] = 1.0;
            }
            rows.push(table);
        }
        Ok(Policy { rows })
    }

    /// Rows drawn uniformly from each simplex (normalized exponentials).
    pub fn sample_uniform(game: &Game, rng: &mut ChaCha8Rng) -> Self {
        let rows = game
            .num_actions()
            .iter()
            .map(|&m| {
                Array2::from_shape_fn((game.num_states(), m), |_| {
                    -(1.0 - rng.gen::<f64>()).ln()
                })
            })
            .map(|mut table| {
                for mut row in table.rows_mut() {
                    let sum = row.sum();
                    row.mapv_inplace(|v| v / sum);
                }
                table
            })
            .collect();
        Policy { rows }
    }

    /// Random deterministic policy.
    pub fn sample_vertex(game: &Game, rng: &mut ChaCha8Rng) -> Self {
        let actions: Vec<Vec<usize>> = game
            .num_actions()
            .iter()
            .map(|&m| (0..game.num_states()).map(|_| rng.gen_range(0..m)).collect())
            .collect();
        Policy::deterministic(game, &actions).expect("sampled actions are in range")
    }

    pub fn num_agents(&self) -> usize {
        self.rows.len()
    }

    pub fn num_states(&self) -> usize {
        self.rows[0].shape()[0]
    }

    pub fn agent(&self, i: usize) -> &Array2<f64> {
        &self.rows[i]
    }

    pub fn tables(&self) -> &[Array2<f64>] {
        &self.rows
    }

    pub fn prob(&self, agent: usize, state: usize, action: usize) -> f64 {
        self.rows[agent][[state, action]]
    }

    /// Probability of the joint action at a state, `prod_i pi_i(a_i | s)`.
    pub fn joint_prob(&self, state: usize, actions: &[usize]) -> f64 {
        actions
            .iter()
            .enumerate()
            .map(|(i, &a)| self.rows[i][[state, a]])
            .product()
    }

    /// Product over all agents except `excluded`.
    pub fn joint_prob_excluding(&self, state: usize, actions: &[usize], excluded: usize) -> f64 {
        actions
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != excluded)
            .map(|(i, &a)| self.rows[i][[state, a]])
            .product()
    }

    /// True when every row puts mass at least `1 - 1e-9` on one action.
    pub fn is_deterministic(&self) -> bool {
        self.rows.iter().all(|table| {
            table
                .rows()
                .into_iter()
                .all(|row| row.iter().any(|&v| v >= 1.0 - tol::DETERMINISTIC_ENTRY))
        })
    }

    /// Chosen action per (agent, state) when the policy is deterministic.
    pub fn deterministic_actions(&self) -> Option<Vec<Vec<usize>>> {
        let mut actions = Vec::with_capacity(self.rows.len());
        for table in &self.rows {
            let mut per_state = Vec::with_capacity(table.shape()[0]);
            for row in table.rows() {
                let (a, &v) = row
                    .iter()
                    .enumerate()
                    .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                    .unwrap();
                if v < 1.0 - tol::DETERMINISTIC_ENTRY {
                    return None;
                }
                per_state.push(a);
            }
            actions.push(per_state);
        }
        Some(actions)
    }

    /// Smallest entry across all tables.
    pub fn min_entry(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|t| t.iter().cloned())
            .fold(f64::INFINITY, f64::min)
    }

    /// True when the policy shape matches the game's dimensions.
    pub fn matches(&self, game: &Game) -> bool {
        self.rows.len() == game.num_agents()
            && self
                .rows
                .iter()
                .zip(game.num_actions())
                .all(|(t, &m)| t.shape() == [game.num_states(), m])
    }

    /// Euclidean norm of the entrywise difference.
    pub fn euclidean_distance(&self, other: &Policy) -> f64 {
        self.rows
            .iter()
            .zip(&other.rows)
            .flat_map(|(a, b)| a.iter().zip(b.iter()))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    /// Nested-array form `[agent][state][action]`, the policy-file layout.
    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        self.rows
            .iter()
            .map(|t| t.rows().into_iter().map(|r| r.to_vec()).collect())
            .collect()
    }

    pub fn from_nested(nested: &[Vec<Vec<f64>>]) -> Result<Self> {
        let mut rows = Vec::with_capacity(nested.len());
        for (i, table) in nested.iter().enumerate() {
            if table.is_empty() {
                return Err(Error::ShapeMismatch(format!("agent {i} has no states")));
            }
            let m = table[0].len();
            if table.iter().any(|r| r.len() != m) {
                return Err(Error::ShapeMismatch(format!(
                    "agent {i} has ragged action rows"
                )));
            }
            let arr = Array2::from_shape_fn((table.len(), m), |(s, a)| table[s][a]);
            rows.push(arr);
        }
        Policy::new(rows)
    }
}

/// Ensures a (game, policy) pair is shape-compatible.
pub fn require_match(game: &Game, policy: &Policy) -> Result<()> {
    if policy.matches(game) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(
            "policy tables do not match game dimensions".into(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{build_coordination_game, RandomGameConfig};
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn uniform_policy_is_valid_and_mixed() {
        let game = build_coordination_game(0.1, 0.95, None).unwrap();
        let p = Policy::uniform(&game);
        assert!(p.matches(&game));
        assert!(!p.is_deterministic());
        assert_eq!(p.joint_prob(0, &[0, 1]), 0.25);
        assert_eq!(p.joint_prob_excluding(0, &[0, 1], 0), 0.5);
    }

    #[test]
    fn deterministic_round_trip() {
        let game = build_coordination_game(0.1, 0.95, None).unwrap();
        let actions = vec![vec![0, 1, 0, 1], vec![1, 1, 0, 0]];
        let p = Policy::deterministic(&game, &actions).unwrap();
        assert!(p.is_deterministic());
        assert_eq!(p.deterministic_actions().unwrap(), actions);
    }

    #[test]
    fn sampled_rows_are_probability_vectors() {
        let game = crate::game::random_game(
            &RandomGameConfig {
                num_agents: 3,
                num_states: 4,
                num_actions: vec![2, 3, 2],
                gamma: 0.9,
                identical_rewards: false,
            },
            5,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let p = Policy::sample_uniform(&game, &mut rng);
            for i in 0..3 {
                for row in p.agent(i).rows() {
                    assert!((row.sum() - 1.0).abs() < 1e-12);
                    assert!(row.iter().all(|&v| v >= 0.0));
                }
            }
        }
    }

    #[test]
    fn rejects_rows_that_do_not_sum_to_one() {
        let bad = Array2::from_shape_fn((1, 2), |(_, a)| if a == 0 { 0.6 } else { 0.5 });
        assert!(Policy::new(vec![bad]).is_err());
    }

    #[test]
    fn nested_round_trip() {
        let game = build_coordination_game(0.2, 0.9, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let p = Policy::sample_uniform(&game, &mut rng);
        let q = Policy::from_nested(&p.to_nested()).unwrap();
        assert_eq!(p, q);
    }
}
