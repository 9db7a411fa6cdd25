//! Closed-form evaluation of a (game, policy) pair: values, Q tables,
//! averaged Q/advantage, discounted visitation, total rewards, exact policy
//! gradients, and total-potential machinery.
//!
//! Everything reduces to dense LU solves against `I - gamma * P_pi`; one
//! factorization serves all agents' value solves and a factorization of the
//! transpose serves every visitation query.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::Game;
use crate::policy::{require_match, Policy};
use crate::tol;

/// State-to-state transition matrix under a joint policy,
/// `P_pi(s, s') = sum_a pi(a|s) P(s'|s, a)`.
pub fn policy_transition(game: &Game, policy: &Policy) -> Result<Array2<f64>> {
    require_match(game, policy)?;
    let ns = game.num_states();
    let nj = game.num_joint_actions();
    let mut p = Array2::zeros((ns, ns));
    for s in 0..ns {
        for j in 0..nj {
            let w = policy.joint_prob(s, game.joint_action(j));
            if w == 0.0 {
                continue;
            }
            for s2 in 0..ns {
                p[[s, s2]] += w * game.transition_prob(s, j, s2);
            }
        }
    }
    Ok(p)
}

/// Shared factorizations of `I - gamma * P_pi` and its transpose.
struct BellmanSolver {
    system: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    lu_t: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    gamma: f64,
}

impl BellmanSolver {
    fn new(game: &Game, p_pi: &Array2<f64>) -> Self {
        let ns = game.num_states();
        let gamma = game.gamma();
        let system = DMatrix::from_fn(ns, ns, |r, c| {
            let id = if r == c { 1.0 } else { 0.0 };
            id - gamma * p_pi[[r, c]]
        });
        let lu = system.clone().lu();
        let lu_t = system.transpose().lu();
        BellmanSolver {
            system,
            lu,
            lu_t,
            gamma,
        }
    }

    /// Solves `(I - gamma P_pi) v = rhs` and checks the residual.
    fn solve_value(&self, rhs: &[f64]) -> Result<Array1<f64>> {
        let b = DVector::from_column_slice(rhs);
        let v = self
            .lu
            .solve(&b)
            .ok_or_else(|| Error::SolveFailure("I - gamma*P_pi is singular".into()))?;
        let residual = (&self.system * &v - &b).amax();
        if residual > tol::SOLVE_RESIDUAL {
            return Err(Error::SolveFailure(format!(
                "value solve residual {residual:.3e} exceeds {}",
                tol::SOLVE_RESIDUAL
            )));
        }
        Ok(Array1::from_iter(v.iter().cloned()))
    }

    /// Discounted visitation for initial distribution `mu`:
    /// `(1 - gamma) * mu^T (I - gamma P_pi)^{-1}`, solved on the transpose.
    fn solve_visitation(&self, mu: &[f64]) -> Result<Array1<f64>> {
        let scale = 1.0 - self.gamma;
        let b = DVector::from_iterator(mu.len(), mu.iter().map(|&m| scale * m));
        let d = self
            .lu_t
            .solve(&b)
            .ok_or_else(|| Error::SolveFailure("transpose system is singular".into()))?;
        let mut out = Array1::zeros(mu.len());
        let mut sum = 0.0;
        for (s, &v) in d.iter().enumerate() {
            if v < -tol::VISITATION_NEG {
                return Err(Error::SolveFailure(format!(
                    "visitation entry {v:.3e} at state {s} is negative"
                )));
            }
            let v = v.max(0.0);
            out[s] = v;
            sum += v;
        }
        if (sum - 1.0).abs() > tol::VISITATION_SUM {
            return Err(Error::SolveFailure(format!(
                "visitation sums to {sum:.17}"
            )));
        }
        Ok(out)
    }
}

/// Every closed-form quantity for one (game, policy) pair.
#[derive(Debug, Clone)]
pub struct EvalBundle {
    /// `V_i(s)` per agent.
    pub values: Vec<Array1<f64>>,
    /// `Q_i(s, joint_action)` per agent.
    pub q: Vec<Array2<f64>>,
    /// Averaged Q per agent, `[s, a_i]`: other agents marginalized under pi.
    pub avg_q: Vec<Array2<f64>>,
    /// Averaged advantage per agent, `avg_q - V` broadcast over actions.
    pub avg_adv: Vec<Array2<f64>>,
    /// Discounted state visitation for the game's initial distribution.
    pub visitation: Array1<f64>,
    /// `J_i = rho . V_i` per agent.
    pub total_rewards: Vec<f64>,
    /// Exact gradient tables per agent, `[s, a_i]`:
    /// `d(s) * avg_q_i(s, a_i) / (1 - gamma)`.
    pub gradients: Vec<Array2<f64>>,
}

impl EvalBundle {
    pub fn new(game: &Game, policy: &Policy) -> Result<Self> {
        require_match(game, policy)?;
        let ns = game.num_states();
        let nj = game.num_joint_actions();
        let n = game.num_agents();
        let gamma = game.gamma();

        let p_pi = policy_transition(game, policy)?;
        let solver = BellmanSolver::new(game, &p_pi);

        // joint probabilities reused by expected rewards and averaging
        let mut joint = Array2::zeros((ns, nj));
        for s in 0..ns {
            for j in 0..nj {
                joint[[s, j]] = policy.joint_prob(s, game.joint_action(j));
            }
        }

        let mut values = Vec::with_capacity(n);
        let mut q = Vec::with_capacity(n);
        for i in 0..n {
            let r = game.rewards(i);
            let rbar: Vec<f64> = (0..ns)
                .map(|s| (0..nj).map(|j| joint[[s, j]] * r[[s, j]]).sum())
                .collect();
            let v = solver.solve_value(&rbar)?;
            let mut qi = Array2::zeros((ns, nj));
            for s in 0..ns {
                for j in 0..nj {
                    let cont: f64 = (0..ns)
                        .map(|s2| game.transition_prob(s, j, s2) * v[s2])
                        .sum();
                    qi[[s, j]] = r[[s, j]] + gamma * cont;
                }
            }
            values.push(v);
            q.push(qi);
        }

        let mut avg_q = Vec::with_capacity(n);
        let mut avg_adv = Vec::with_capacity(n);
        for i in 0..n {
            let mi = game.num_actions()[i];
            let mut aq = Array2::zeros((ns, mi));
            for s in 0..ns {
                for j in 0..nj {
                    let actions = game.joint_action(j);
                    let w = policy.joint_prob_excluding(s, actions, i);
                    if w == 0.0 {
                        continue;
                    }
                    aq[[s, actions[i]]] += w * q[i][[s, j]];
                }
            }
            let mut aa = aq.clone();
            for s in 0..ns {
                for a in 0..mi {
                    aa[[s, a]] -= values[i][s];
                }
            }
            avg_q.push(aq);
            avg_adv.push(aa);
        }

        let visitation = solver.solve_visitation(game.rho().as_slice().unwrap())?;

        let total_rewards: Vec<f64> = values
            .iter()
            .map(|v| game.rho().iter().zip(v.iter()).map(|(r, x)| r * x).sum())
            .collect();

        let scale = 1.0 / (1.0 - gamma);
        let gradients: Vec<Array2<f64>> = avg_q
            .iter()
            .map(|aq| {
                let mut g = aq.clone();
                for (s, mut row) in g.rows_mut().into_iter().enumerate() {
                    row.mapv_inplace(|v| v * visitation[s] * scale);
                }
                g
            })
            .collect();

        Ok(EvalBundle {
            values,
            q,
            avg_q,
            avg_adv,
            visitation,
            total_rewards,
            gradients,
        })
    }

    /// Full (non-averaged) advantage `A_i(s, a) = Q_i(s, a) - V_i(s)`.
    pub fn advantage(&self, agent: usize) -> Array2<f64> {
        let mut a = self.q[agent].clone();
        for (s, mut row) in a.rows_mut().into_iter().enumerate() {
            let v = self.values[agent][s];
            row.mapv_inplace(|x| x - v);
        }
        a
    }

    /// Nested-array form for report files.
    pub fn to_report(&self) -> EvalReport {
        let table = |t: &Array2<f64>| -> Vec<Vec<f64>> {
            t.rows().into_iter().map(|r| r.to_vec()).collect()
        };
        EvalReport {
            values: self.values.iter().map(|v| v.to_vec()).collect(),
            q: self.q.iter().map(table).collect(),
            avg_q: self.avg_q.iter().map(table).collect(),
            avg_adv: self.avg_adv.iter().map(table).collect(),
            visitation: self.visitation.to_vec(),
            total_rewards: self.total_rewards.clone(),
            gradients: self.gradients.iter().map(table).collect(),
        }
    }
}

/// Serializable snapshot of an evaluation, per agent where applicable.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub values: Vec<Vec<f64>>,
    pub q: Vec<Vec<Vec<f64>>>,
    pub avg_q: Vec<Vec<Vec<f64>>>,
    pub avg_adv: Vec<Vec<Vec<f64>>>,
    pub visitation: Vec<f64>,
    pub total_rewards: Vec<f64>,
    pub gradients: Vec<Vec<Vec<f64>>>,
}

/// `V_i` for all agents.
pub fn value_functions(game: &Game, policy: &Policy) -> Result<Vec<Array1<f64>>> {
    Ok(EvalBundle::new(game, policy)?.values)
}

/// `Q_i(s, a)` for all agents.
pub fn q_functions(game: &Game, policy: &Policy) -> Result<Vec<Array2<f64>>> {
    Ok(EvalBundle::new(game, policy)?.q)
}

/// Averaged Q per agent, other agents marginalized under their current rows.
pub fn averaged_q(game: &Game, policy: &Policy) -> Result<Vec<Array2<f64>>> {
    Ok(EvalBundle::new(game, policy)?.avg_q)
}

/// Averaged advantage per agent.
pub fn averaged_advantage(game: &Game, policy: &Policy) -> Result<Vec<Array2<f64>>> {
    Ok(EvalBundle::new(game, policy)?.avg_adv)
}

/// Discounted state visitation for an arbitrary initial distribution `mu`.
pub fn visitation(game: &Game, policy: &Policy, mu: &[f64]) -> Result<Array1<f64>> {
    require_match(game, policy)?;
    if mu.len() != game.num_states() {
        return Err(Error::ShapeMismatch(format!(
            "mu has {} entries for {} states",
            mu.len(),
            game.num_states()
        )));
    }
    let sum: f64 = mu.iter().sum();
    if (sum - 1.0).abs() > tol::DISTRIBUTION_SUM || mu.iter().any(|&v| v < 0.0) {
        return Err(Error::Domain("mu is not a distribution".into()));
    }
    let p_pi = policy_transition(game, policy)?;
    BellmanSolver::new(game, &p_pi).solve_visitation(mu)
}

/// `J_i = E_{s ~ rho} V_i(s)` per agent.
pub fn total_reward(game: &Game, policy: &Policy) -> Result<Vec<f64>> {
    Ok(EvalBundle::new(game, policy)?.total_rewards)
}

/// Exact per-agent gradient tables, entry `(s, a_i)` equal to
/// `d(s) * avg_q_i(s, a_i) / (1 - gamma)`.
pub fn policy_gradient(game: &Game, policy: &Policy) -> Result<Vec<Array2<f64>>> {
    Ok(EvalBundle::new(game, policy)?.gradients)
}

/// Where a candidate potential came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PotentialProvenance {
    IdenticalReward,
    UserSupplied,
}

/// A candidate potential `phi(s, a)` for the game.
#[derive(Debug, Clone)]
pub struct PotentialSpec {
    phi: Array2<f64>,
    provenance: PotentialProvenance,
}

impl PotentialSpec {
    pub fn new(phi: Array2<f64>) -> Self {
        PotentialSpec {
            phi,
            provenance: PotentialProvenance::UserSupplied,
        }
    }

    /// For identical-reward games the shared reward tensor is a potential.
    /// Returns `None` when agents' rewards differ.
    pub fn from_identical_rewards(game: &Game) -> Option<Self> {
        if game.identical_rewards() {
            Some(PotentialSpec {
                phi: game.rewards(0).clone(),
                provenance: PotentialProvenance::IdenticalReward,
            })
        } else {
            None
        }
    }

    pub fn phi(&self) -> &Array2<f64> {
        &self.phi
    }

    pub fn provenance(&self) -> PotentialProvenance {
        self.provenance
    }

    fn check_shape(&self, game: &Game) -> Result<()> {
        if self.phi.shape() != [game.num_states(), game.num_joint_actions()] {
            return Err(Error::ShapeMismatch(format!(
                "potential is {:?}, expected [{}, {}]",
                self.phi.shape(),
                game.num_states(),
                game.num_joint_actions()
            )));
        }
        Ok(())
    }
}

/// Total potential `Phi(theta)`: the rho-averaged discounted sum of
/// `phi(s_t, a_t)` under the policy. Evaluated by the same value solve with
/// rewards replaced by `phi`.
pub fn total_potential(game: &Game, potential: &PotentialSpec, policy: &Policy) -> Result<f64> {
    Ok(game
        .rho()
        .iter()
        .zip(potential_values(game, potential, policy)?.iter())
        .map(|(r, v)| r * v)
        .sum())
}

/// `V_phi(s)`: the potential's value function under the policy.
pub fn potential_values(
    game: &Game,
    potential: &PotentialSpec,
    policy: &Policy,
) -> Result<Array1<f64>> {
    potential.check_shape(game)?;
    require_match(game, policy)?;
    let ns = game.num_states();
    let nj = game.num_joint_actions();
    let p_pi = policy_transition(game, policy)?;
    let solver = BellmanSolver::new(game, &p_pi);
    let rbar: Vec<f64> = (0..ns)
        .map(|s| {
            (0..nj)
                .map(|j| policy.joint_prob(s, game.joint_action(j)) * potential.phi[[s, j]])
                .sum()
        })
        .collect();
    solver.solve_value(&rbar)
}

/// Exact bounds of `Phi` over all product policies.
///
/// The extrema are attained by deterministic centralized policies, which are
/// products of deterministic per-agent policies, so exact policy iteration on
/// the joint-action MDP (maximizing, then minimizing) gives the range.
pub fn potential_range(game: &Game, potential: &PotentialSpec) -> Result<(f64, f64)> {
    potential.check_shape(game)?;
    let hi = centralized_extremum(game, &potential.phi, true)?;
    let lo = centralized_extremum(game, &potential.phi, false)?;
    Ok((lo, hi))
}

/// Optimal `rho . V` of the centralized joint-action MDP with reward table
/// `reward[s, joint]`, maximizing or minimizing.
fn centralized_extremum(game: &Game, reward: &Array2<f64>, maximize: bool) -> Result<f64> {
    let ns = game.num_states();
    let nj = game.num_joint_actions();
    let gamma = game.gamma();
    let mut actions = vec![0usize; ns];
    let cap = 100_000;
    for _ in 0..cap {
        // evaluate the current deterministic joint policy
        let p_pi = Array2::from_shape_fn((ns, ns), |(s, s2)| {
            game.transition_prob(s, actions[s], s2)
        });
        let solver = BellmanSolver::new(game, &p_pi);
        let rbar: Vec<f64> = (0..ns).map(|s| reward[[s, actions[s]]]).collect();
        let v = solver.solve_value(&rbar)?;
        // switch only on strict improvement above the noise floor so exact
        // ties cannot make the greedy map flicker; lowest index wins ties
        let mut next = vec![0usize; ns];
        for s in 0..ns {
            let backup = |j: usize| -> f64 {
                let cont: f64 = (0..ns)
                    .map(|s2| game.transition_prob(s, j, s2) * v[s2])
                    .sum();
                let q = reward[[s, j]] + gamma * cont;
                if maximize {
                    q
                } else {
                    -q
                }
            };
            let current_q = backup(actions[s]);
            let mut best_q = f64::NEG_INFINITY;
            for j in 0..nj {
                best_q = best_q.max(backup(j));
            }
            let threshold = 1e-11 * (1.0 + best_q.abs());
            if best_q > current_q + threshold {
                next[s] = (0..nj)
                    .find(|&j| backup(j) >= best_q - threshold)
                    .expect("the maximizer qualifies");
            } else {
                next[s] = actions[s];
            }
        }
        if next == actions {
            let total = game.rho().iter().zip(v.iter()).map(|(r, x)| r * x).sum();
            return Ok(total);
        }
        actions = next;
    }
    Err(Error::SolveFailure(
        "policy iteration failed to terminate".into(),
    ))
}

/// Outcome of the randomized potential-identity check.
#[derive(Debug, Clone, Serialize)]
pub struct PotentialCheck {
    pub trials: usize,
    pub max_violation: f64,
    pub verified: bool,
    pub seed: u64,
}

/// Checks the defining identity of a potential on random unilateral
/// deviations: for random `(i, theta, theta_i')`,
/// `J_i(theta_i', theta_{-i}) - J_i(theta) = Phi(theta_i', theta_{-i}) - Phi(theta)`.
pub fn verify_potential(
    game: &Game,
    potential: &PotentialSpec,
    trials: usize,
    seed: u64,
) -> Result<PotentialCheck> {
    potential.check_shape(game)?;
    if trials == 0 {
        return Err(Error::Domain("verify_potential needs at least one trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_violation: f64 = 0.0;
    for _ in 0..trials {
        let theta = Policy::sample_uniform(game, &mut rng);
        let other = Policy::sample_uniform(game, &mut rng);
        let agent = {
            use rand::Rng;
            rng.gen_range(0..game.num_agents())
        };
        let mut tables = theta.tables().to_vec();
        tables[agent] = other.agent(agent).clone();
        let deviated = Policy::new(tables)?;

        let j_before = EvalBundle::new(game, &theta)?.total_rewards[agent];
        let j_after = EvalBundle::new(game, &deviated)?.total_rewards[agent];
        let phi_before = total_potential(game, potential, &theta)?;
        let phi_after = total_potential(game, potential, &deviated)?;
        let violation = ((j_after - j_before) - (phi_after - phi_before)).abs();
        max_violation = max_violation.max(violation);
    }
    Ok(PotentialCheck {
        trials,
        max_violation,
        verified: max_violation <= tol::POTENTIAL_VERIFY,
        seed,
    })
}
