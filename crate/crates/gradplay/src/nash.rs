//! Equilibrium machinery: exact best responses, the equilibrium gap,
//! strict-equilibrium enumeration and certification, margin constants,
//! the distribution-mismatch bound, stationarity testing, and saddle-escape
//! certificates at fully mixed equilibria.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::{total_potential, EvalBundle, PotentialSpec};
use crate::game::Game;
use crate::policy::{require_match, Policy};
use crate::tol;

/// Upper bound on the number of deterministic policies the enumerator will touch.
pub const ENUMERATION_BUDGET: u64 = 1 << 24;

/// The single-agent MDP an agent faces when everyone else's rows are frozen.
#[derive(Debug, Clone)]
pub struct InducedMdp {
    /// `[s, a_i, s']`
    pub transition: Array3<f64>,
    /// `[s, a_i]`
    pub reward: Array2<f64>,
}

/// Marginalizes the joint transition and reward over the other agents' policies.
pub fn induced_mdp(game: &Game, policy: &Policy, agent: usize) -> Result<InducedMdp> {
    require_match(game, policy)?;
    let ns = game.num_states();
    let mi = game.num_actions()[agent];
    let mut transition = Array3::zeros((ns, mi, ns));
    let mut reward = Array2::zeros((ns, mi));
    for s in 0..ns {
        for j in 0..game.num_joint_actions() {
            let actions = game.joint_action(j);
            let w = policy.joint_prob_excluding(s, actions, agent);
            if w == 0.0 {
                continue;
            }
            let a = actions[agent];
            reward[[s, a]] += w * game.rewards(agent)[[s, j]];
            for s2 in 0..ns {
                transition[[s, a, s2]] += w * game.transition_prob(s, j, s2);
            }
        }
    }
    Ok(InducedMdp { transition, reward })
}

/// Switching threshold for greedy improvement: comfortably above linear-solve
/// noise so exact ties cannot make the greedy map flicker, far below any
/// meaningful action gap.
fn improvement_threshold(scale: f64) -> f64 {
    1e-11 * (1.0 + scale.abs())
}

/// Exact optimum of a single-agent tabular MDP by policy iteration with
/// linear-solve evaluation.
///
/// The greedy step keeps the current action unless some action beats it by
/// more than the noise threshold, and then switches to the lowest index among
/// numerical maximizers. Switches strictly improve the value, so no policy
/// repeats and the iteration terminates.
fn solve_mdp(
    transition: &Array3<f64>,
    reward: &Array2<f64>,
    gamma: f64,
    rho: &Array1<f64>,
) -> Result<(Array1<f64>, Vec<usize>, f64)> {
    let ns = transition.shape()[0];
    let na = transition.shape()[1];
    let mut actions = vec![0usize; ns];
    for _ in 0..100_000 {
        let p_pi =
            Array2::from_shape_fn((ns, ns), |(s, s2)| transition[[s, actions[s], s2]]);
        let system = nalgebra::DMatrix::from_fn(ns, ns, |r, c| {
            (if r == c { 1.0 } else { 0.0 }) - gamma * p_pi[[r, c]]
        });
        let rhs = nalgebra::DVector::from_iterator(ns, (0..ns).map(|s| reward[[s, actions[s]]]));
        let v = system
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::SolveFailure("induced system is singular".into()))?;
        let residual = (&system * &v - &rhs).amax();
        if residual > tol::SOLVE_RESIDUAL {
            return Err(Error::SolveFailure(format!(
                "induced solve residual {residual:.3e}"
            )));
        }
        let mut next = vec![0usize; ns];
        for s in 0..ns {
            let backup = |a: usize| -> f64 {
                let cont: f64 = (0..ns).map(|s2| transition[[s, a, s2]] * v[s2]).sum();
                reward[[s, a]] + gamma * cont
            };
            let current_q = backup(actions[s]);
            let mut best_q = f64::NEG_INFINITY;
            for a in 0..na {
                best_q = best_q.max(backup(a));
            }
            let threshold = improvement_threshold(best_q);
            if best_q > current_q + threshold {
                next[s] = (0..na)
                    .find(|&a| backup(a) >= best_q - threshold)
                    .expect("the maximizer qualifies");
            } else {
                next[s] = actions[s];
            }
        }
        if next == actions {
            let values = Array1::from_iter(v.iter().cloned());
            let total = rho.iter().zip(v.iter()).map(|(r, x)| r * x).sum();
            return Ok((values, actions, total));
        }
        actions = next;
    }
    Err(Error::SolveFailure(
        "policy iteration failed to terminate".into(),
    ))
}

/// An agent's exact best response against the others' current rows.
#[derive(Debug, Clone)]
pub struct BestResponse {
    pub agent: usize,
    /// Optimal total reward over the agent's whole feasible set.
    pub value: f64,
    /// A deterministic maximizer, one action per state.
    pub actions: Vec<usize>,
    /// The marginalized MDP the optimum was computed on.
    pub induced: InducedMdp,
}

pub fn best_response(game: &Game, policy: &Policy, agent: usize) -> Result<BestResponse> {
    let induced = induced_mdp(game, policy, agent)?;
    let (_, actions, value) = solve_mdp(
        &induced.transition,
        &induced.reward,
        game.gamma(),
        game.rho(),
    )?;
    Ok(BestResponse {
        agent,
        value,
        actions,
        induced,
    })
}

/// Per-agent unilateral improvement gaps and their maximum.
#[derive(Debug, Clone)]
pub struct NeGap {
    pub per_agent: Vec<f64>,
    pub max: f64,
}

/// `gap_i = max_{theta_i'} J_i(theta_i', theta_{-i}) - J_i(theta)`.
pub fn ne_gap(game: &Game, policy: &Policy) -> Result<NeGap> {
    let totals = EvalBundle::new(game, policy)?.total_rewards;
    ne_gap_given_totals(game, policy, &totals)
}

/// Same as [`ne_gap`] when `J_i(theta)` is already known.
pub fn ne_gap_given_totals(game: &Game, policy: &Policy, totals: &[f64]) -> Result<NeGap> {
    let mut per_agent = Vec::with_capacity(game.num_agents());
    for i in 0..game.num_agents() {
        let br = best_response(game, policy, i)?;
        per_agent.push(br.value - totals[i]);
    }
    let max = per_agent.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(NeGap { per_agent, max })
}

/// Everything needed to certify and exploit a strict equilibrium.
#[derive(Debug, Clone)]
pub struct StrictNECertificate {
    pub policy: Policy,
    /// Optimal action per (agent, state).
    pub actions: Vec<Vec<usize>>,
    /// Averaged advantage tables at the equilibrium, `[s, a_i]` per agent.
    /// Zero at the chosen action, strictly negative elsewhere.
    pub margins: Vec<Array2<f64>>,
    /// Per-agent per-state margin `min_{a != a*} |avg_adv|`.
    pub state_margins: Vec<Array1<f64>>,
    /// Visitation of the equilibrium policy.
    pub visitation: Array1<f64>,
    /// `min_i min_s d(s) * state_margin_i(s) / (1 - gamma)`.
    pub delta_star: f64,
    /// Region-of-attraction radius `delta_star (1-gamma)^3 / (8 n |S| sum_i |A_i|)`.
    pub attraction_radius: f64,
    /// Whether every checked deterministic unilateral deviation kept all
    /// states visited (positive visitation).
    pub deviation_visitation_positive: bool,
    /// Number of deviation policies whose visitation was checked.
    pub deviations_checked: usize,
}

/// Outcome of certifying one deterministic policy.
enum Verdict {
    Strict(Box<StrictNECertificate>),
    /// Worst off-action margin sits in the numerical-zero band; not certifiably strict.
    Borderline,
    NotEquilibrium,
}

/// Strict and borderline candidates found by exhaustive enumeration.
#[derive(Debug, Clone)]
pub struct Enumeration {
    pub strict: Vec<StrictNECertificate>,
    /// Deterministic policies whose margins were non-positive but not strictly
    /// negative at the certification threshold.
    pub borderline: Vec<Policy>,
    pub candidates: u64,
}

fn theorem_radius(game: &Game, delta_star: f64) -> f64 {
    let n = game.num_agents() as f64;
    let ns = game.num_states() as f64;
    let total_actions = game.total_action_count() as f64;
    delta_star * (1.0 - game.gamma()).powi(3) / (8.0 * n * ns * total_actions)
}

fn certify(game: &Game, actions: &[Vec<usize>], check_deviations: bool) -> Result<Verdict> {
    let policy = Policy::deterministic(game, actions)?;
    let bundle = EvalBundle::new(game, &policy)?;
    let mut worst_off_margin = f64::NEG_INFINITY;
    for i in 0..game.num_agents() {
        for s in 0..game.num_states() {
            let chosen = actions[i][s];
            let at_chosen = bundle.avg_adv[i][[s, chosen]];
            if at_chosen.abs() > tol::MARGIN_ZERO {
                return Err(Error::SolveFailure(format!(
                    "advantage at the chosen action is {at_chosen:.3e}, expected 0"
                )));
            }
            for a in 0..game.num_actions()[i] {
                if a != chosen {
                    worst_off_margin = worst_off_margin.max(bundle.avg_adv[i][[s, a]]);
                }
            }
        }
    }
    if worst_off_margin > tol::MARGIN_POSITIVE {
        return Ok(Verdict::NotEquilibrium);
    }
    let visitation_ok = bundle.visitation.iter().all(|&d| d > tol::VISITATION_GUARD);
    if worst_off_margin > -tol::STRICT_MARGIN || !visitation_ok {
        return Ok(Verdict::Borderline);
    }

    let mut state_margins = Vec::with_capacity(game.num_agents());
    for i in 0..game.num_agents() {
        let per_state = Array1::from_shape_fn(game.num_states(), |s| {
            (0..game.num_actions()[i])
                .filter(|&a| a != actions[i][s])
                .map(|a| bundle.avg_adv[i][[s, a]].abs())
                .fold(f64::INFINITY, f64::min)
        });
        state_margins.push(per_state);
    }
    let scale = 1.0 / (1.0 - game.gamma());
    let mut delta_star = f64::INFINITY;
    for per_state in &state_margins {
        for (s, &m) in per_state.iter().enumerate() {
            delta_star = delta_star.min(scale * bundle.visitation[s] * m);
        }
    }

    let (deviation_visitation_positive, deviations_checked) = if check_deviations {
        check_deviation_visitations(game, actions)?
    } else {
        (true, 0)
    };

    let attraction_radius = theorem_radius(game, delta_star);
    Ok(Verdict::Strict(Box::new(StrictNECertificate {
        policy,
        actions: actions.to_vec(),
        margins: bundle.avg_adv,
        state_margins,
        visitation: bundle.visitation,
        delta_star,
        attraction_radius,
        deviation_visitation_positive,
        deviations_checked,
    })))
}

/// Verifies positive visitation for deterministic unilateral deviations,
/// which upgrades the margin conditions from necessary to sufficient.
/// Exhaustive per agent up to 4096 deviations, single-state switches beyond.
fn check_deviation_visitations(game: &Game, actions: &[Vec<usize>]) -> Result<(bool, usize)> {
    let ns = game.num_states();
    let mut checked = 0usize;
    let mut all_positive = true;
    for i in 0..game.num_agents() {
        let mi = game.num_actions()[i];
        let per_agent_total = (mi as u64).saturating_pow(ns as u32);
        if per_agent_total <= 4096 {
            let mut dev = vec![0usize; ns];
            loop {
                if dev != actions[i] {
                    let mut alt = actions.to_vec();
                    alt[i] = dev.clone();
                    let policy = Policy::deterministic(game, &alt)?;
                    let bundle = EvalBundle::new(game, &policy)?;
                    checked += 1;
                    if bundle.visitation.iter().any(|&d| d <= tol::VISITATION_GUARD) {
                        all_positive = false;
                    }
                }
                // odometer over the agent's action table
                let mut pos = 0;
                loop {
                    if pos == ns {
                        break;
                    }
                    dev[pos] += 1;
                    if dev[pos] < mi {
                        break;
                    }
                    dev[pos] = 0;
                    pos += 1;
                }
                if pos == ns {
                    break;
                }
            }
        } else {
            for s in 0..ns {
                for a in 0..mi {
                    if a == actions[i][s] {
                        continue;
                    }
                    let mut alt = actions.to_vec();
                    alt[i][s] = a;
                    let policy = Policy::deterministic(game, &alt)?;
                    let bundle = EvalBundle::new(game, &policy)?;
                    checked += 1;
                    if bundle.visitation.iter().any(|&d| d <= tol::VISITATION_GUARD) {
                        all_positive = false;
                    }
                }
            }
        }
    }
    Ok((all_positive, checked))
}

/// Exhaustively certifies every deterministic joint policy.
///
/// Strict certificates carry strictly negative off-action margins at every
/// state; borderline candidates (worst margin inside the numerical-zero band)
/// are reported separately rather than silently dropped.
pub fn enumerate_strict_nes(game: &Game) -> Result<Enumeration> {
    let total = game.deterministic_policy_count();
    if total > ENUMERATION_BUDGET {
        return Err(Error::BudgetExceeded {
            required: total,
            budget: ENUMERATION_BUDGET,
        });
    }
    let ns = game.num_states();
    let n = game.num_agents();
    let mut actions: Vec<Vec<usize>> = (0..n).map(|_| vec![0usize; ns]).collect();
    let mut strict = Vec::new();
    let mut borderline = Vec::new();
    let mut remaining = total;
    loop {
        match certify(game, &actions, true)? {
            Verdict::Strict(cert) => strict.push(*cert),
            Verdict::Borderline => borderline.push(Policy::deterministic(game, &actions)?),
            Verdict::NotEquilibrium => {}
        }
        remaining -= 1;
        if remaining == 0 {
            break;
        }
        // odometer over all (agent, state) slots, agent 0 / state 0 fastest
        let mut i = 0;
        let mut s = 0;
        loop {
            actions[i][s] += 1;
            if actions[i][s] < game.num_actions()[i] {
                break;
            }
            actions[i][s] = 0;
            s += 1;
            if s == ns {
                s = 0;
                i += 1;
            }
        }
    }
    Ok(Enumeration {
        strict,
        borderline,
        candidates: total,
    })
}

/// Certifies one deterministic policy; `Ok(None)` when it is not a strict
/// equilibrium.
pub fn certify_deterministic(
    game: &Game,
    actions: &[Vec<usize>],
) -> Result<Option<StrictNECertificate>> {
    match certify(game, actions, true)? {
        Verdict::Strict(cert) => Ok(Some(*cert)),
        _ => Ok(None),
    }
}

/// Recomputes the margin constant from a certificate:
/// `min_i min_s d(s) * min_{a != a*} |avg_adv_i(s, a)| / (1 - gamma)`.
pub fn delta_star(game: &Game, cert: &StrictNECertificate) -> f64 {
    let scale = 1.0 / (1.0 - game.gamma());
    let mut out = f64::INFINITY;
    for per_state in &cert.state_margins {
        for (s, &m) in per_state.iter().enumerate() {
            out = out.min(scale * cert.visitation[s] * m);
        }
    }
    out
}

/// Closed-form bound on the distribution mismatch coefficient:
/// `1 / ((1 - gamma) * min_s rho(s))`.
pub fn mismatch_bound(game: &Game) -> Result<f64> {
    let min_rho = game.min_rho();
    if min_rho <= 0.0 {
        return Err(Error::RhoHasZeroMass);
    }
    Ok(1.0 / ((1.0 - game.gamma()) * min_rho))
}

/// One agent's stationarity verdict.
#[derive(Debug, Clone)]
pub struct AgentStationarity {
    /// `max_{theta_i'} (theta_i' - theta_i)^T grad_i`, computed in closed form
    /// at the per-state gradient-argmax vertices.
    pub max_improvement: f64,
    pub stationary: bool,
}

#[derive(Debug, Clone)]
pub struct StationarityReport {
    pub per_agent: Vec<AgentStationarity>,
    pub stationary: bool,
    pub tol: f64,
}

/// First-order stationarity test: the policy is stationary when no feasible
/// move along any agent's own gradient improves by more than `tol`.
pub fn stationarity_test(game: &Game, policy: &Policy, tol: f64) -> Result<StationarityReport> {
    let bundle = EvalBundle::new(game, policy)?;
    stationarity_from_gradients(game, policy, &bundle.gradients, tol)
}

/// Same as [`stationarity_test`] with precomputed gradient tables.
pub fn stationarity_from_gradients(
    game: &Game,
    policy: &Policy,
    gradients: &[Array2<f64>],
    tol: f64,
) -> Result<StationarityReport> {
    require_match(game, policy)?;
    let mut per_agent = Vec::with_capacity(game.num_agents());
    for i in 0..game.num_agents() {
        let g = &gradients[i];
        let mut max_improvement = 0.0;
        for s in 0..game.num_states() {
            let best = (0..game.num_actions()[i])
                .map(|a| g[[s, a]])
                .fold(f64::NEG_INFINITY, f64::max);
            let current: f64 = (0..game.num_actions()[i])
                .map(|a| policy.prob(i, s, a) * g[[s, a]])
                .sum();
            max_improvement += best - current;
        }
        per_agent.push(AgentStationarity {
            max_improvement,
            stationary: max_improvement <= tol,
        });
    }
    let stationary = per_agent.iter().all(|a| a.stationary);
    Ok(StationarityReport {
        per_agent,
        stationary,
        tol,
    })
}

/// A feasible nearby policy with strictly larger total potential, witnessing
/// that a fully mixed stationary point is a saddle of the potential.
#[derive(Debug, Clone)]
pub struct SaddleEscape {
    pub theta: Policy,
    pub phi_reference: f64,
    pub phi_escaped: f64,
    pub gain: f64,
    /// Agents deviated together (empty when the witness came from random search).
    pub index_set: Vec<usize>,
    pub state: Option<usize>,
    pub eta: f64,
    pub via_random_search: bool,
}

/// Searches for a potential-increasing perturbation of a fully mixed
/// stationary policy within Euclidean distance `delta`.
///
/// Structured candidates first: for index sets of growing size, deviate the
/// set's agents to a joint action with positive set-averaged potential
/// advantage at a single state, mixed toward the reference by a small factor.
/// Falls back to seeded random nearby policies, then reports `None`.
pub fn saddle_certificate(
    game: &Game,
    potential: &PotentialSpec,
    theta_star: &Policy,
    delta: f64,
    search_budget: usize,
    seed: u64,
) -> Result<Option<SaddleEscape>> {
    require_match(game, theta_star)?;
    for i in 0..game.num_agents() {
        for s in 0..game.num_states() {
            for a in 0..game.num_actions()[i] {
                let v = theta_star.prob(i, s, a);
                if v < tol::FULLY_MIXED_MIN {
                    return Err(Error::NotFullyMixed {
                        agent: i,
                        state: s,
                        action: a,
                        value: v,
                    });
                }
            }
        }
    }
    if !delta.is_finite() || delta <= 0.0 {
        return Err(Error::Domain(format!("delta must be positive, got {delta}")));
    }

    let phi_reference = total_potential(game, potential, theta_star)?;

    // advantage of the potential under theta_star
    let potential_advantage = {
        let values = crate::eval::potential_values(game, potential, theta_star)?;
        let ns = game.num_states();
        let nj = game.num_joint_actions();
        let mut adv = Array2::zeros((ns, nj));
        for s in 0..ns {
            for j in 0..nj {
                let cont: f64 = (0..ns)
                    .map(|s2| game.transition_prob(s, j, s2) * values[s2])
                    .sum();
                adv[[s, j]] = potential.phi()[[s, j]] + game.gamma() * cont - values[s];
            }
        }
        adv
    };

    // structured search over index sets of increasing cardinality
    let n = game.num_agents();
    for size in 1..=n {
        for set in index_sets(n, size) {
            if let Some(escape) = try_index_set(
                game,
                potential,
                theta_star,
                phi_reference,
                &potential_advantage,
                &set,
                delta,
            )? {
                return Ok(Some(escape));
            }
        }
    }

    // random fallback within the delta ball
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..search_budget {
        let random = Policy::sample_uniform(game, &mut rng);
        let dist = theta_star.euclidean_distance(&random);
        if dist == 0.0 {
            continue;
        }
        let w = (delta / dist).min(1.0) * rng.gen::<f64>();
        let tables: Vec<Array2<f64>> = theta_star
            .tables()
            .iter()
            .zip(random.tables())
            .map(|(a, b)| a * (1.0 - w) + &(b * w))
            .collect();
        let candidate = Policy::new(tables)?;
        let phi = total_potential(game, potential, &candidate)?;
        if phi - phi_reference > tol::SADDLE_GAIN {
            return Ok(Some(SaddleEscape {
                theta: candidate,
                phi_reference,
                phi_escaped: phi,
                gain: phi - phi_reference,
                index_set: Vec::new(),
                state: None,
                eta: w,
                via_random_search: true,
            }));
        }
    }
    Ok(None)
}

fn index_sets(n: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(size);
    fn recurse(n: usize, size: usize, start: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == size {
            out.push(current.clone());
            return;
        }
        for i in start..n {
            current.push(i);
            recurse(n, size, i + 1, current, out);
            current.pop();
        }
    }
    recurse(n, size, 0, &mut current, &mut out);
    out
}

fn try_index_set(
    game: &Game,
    potential: &PotentialSpec,
    theta_star: &Policy,
    phi_reference: f64,
    potential_advantage: &Array2<f64>,
    set: &[usize],
    delta: f64,
) -> Result<Option<SaddleEscape>> {
    let ns = game.num_states();
    let nj = game.num_joint_actions();
    // set-averaged potential advantage: marginalize agents outside the set
    // under their reference rows
    for s in 0..ns {
        // candidate per set-action: accumulate over joint actions
        let mut best: Option<(Vec<usize>, f64)> = None;
        let mut acc: std::collections::HashMap<Vec<usize>, f64> = std::collections::HashMap::new();
        for j in 0..nj {
            let actions = game.joint_action(j);
            let mut w = 1.0;
            for i in 0..game.num_agents() {
                if !set.contains(&i) {
                    w *= theta_star.prob(i, s, actions[i]);
                }
            }
            let key: Vec<usize> = set.iter().map(|&i| actions[i]).collect();
            *acc.entry(key).or_insert(0.0) += w * potential_advantage[[s, j]];
        }
        for (key, value) in acc {
            if value > tol::SADDLE_GAIN && best.as_ref().is_none_or(|(_, b)| value > *b) {
                best = Some((key, value));
            }
        }
        let Some((set_actions, _)) = best else {
            continue;
        };
        // deviate the set's agents toward the vertex at this state only
        let mut target_tables = theta_star.tables().to_vec();
        for (pos, &i) in set.iter().enumerate() {
            for a in 0..game.num_actions()[i] {
                target_tables[i][[s, a]] = if a == set_actions[pos] { 1.0 } else { 0.0 };
            }
        }
        let target = Policy::new(target_tables)?;
        let dist = theta_star.euclidean_distance(&target);
        if dist == 0.0 {
            continue;
        }
        let eta = (delta / dist).min(1.0);
        let tables: Vec<Array2<f64>> = theta_star
            .tables()
            .iter()
            .zip(target.tables())
            .map(|(a, b)| a * (1.0 - eta) + &(b * eta))
            .collect();
        let candidate = Policy::new(tables)?;
        let phi = total_potential(game, potential, &candidate)?;
        if phi - phi_reference > tol::SADDLE_GAIN {
            return Ok(Some(SaddleEscape {
                theta: candidate,
                phi_reference,
                phi_escaped: phi,
                gain: phi - phi_reference,
                index_set: set.to_vec(),
                state: Some(s),
                eta,
                via_random_search: false,
            }));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{
        build_coordination_game, build_prisoners_dilemma, coordination_fully_mixed_policy,
        prisoners_all_betray_policy, prisoners_cooperative_policy, random_game, RandomGameConfig,
    };

    #[test]
    fn best_response_matches_value_iteration() {
        // oracle: value iteration run to a 1e-10 horizon tail
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for seed in 0..100 {
            let game = random_game(
                &RandomGameConfig {
                    num_agents: 2,
                    num_states: 3,
                    num_actions: vec![2, 2],
                    gamma: 0.8,
                    identical_rewards: false,
                },
                300 + seed,
            )
            .unwrap();
            let policy = Policy::sample_uniform(&game, &mut rng);
            let br = best_response(&game, &policy, 0).unwrap();
            let m = &br.induced;
            let ns = 3;
            let na = 2;
            let gamma = 0.8f64;
            let mut v = vec![0.0f64; ns];
            let span = 1.0 / (1.0 - gamma);
            let iters = ((1e-10 / span).ln() / gamma.ln()).ceil() as usize;
            for _ in 0..iters {
                let mut next = vec![0.0; ns];
                for s in 0..ns {
                    next[s] = (0..na)
                        .map(|a| {
                            m.reward[[s, a]]
                                + gamma
                                    * (0..ns)
                                        .map(|s2| m.transition[[s, a, s2]] * v[s2])
                                        .sum::<f64>()
                        })
                        .fold(f64::NEG_INFINITY, f64::max);
                }
                v = next;
            }
            let vi_value: f64 = game.rho().iter().zip(v.iter()).map(|(r, x)| r * x).sum();
            assert!(
                (vi_value - br.value).abs() < 1e-8,
                "seed {seed}: PI {} vs VI {vi_value}",
                br.value
            );
        }
    }

    #[test]
    fn single_agent_best_response_is_the_mdp_optimum() {
        let game = random_game(
            &RandomGameConfig {
                num_agents: 1,
                num_states: 4,
                num_actions: vec![3],
                gamma: 0.9,
                identical_rewards: false,
            },
            41,
        )
        .unwrap();
        let uniform = Policy::uniform(&game);
        let br = best_response(&game, &uniform, 0).unwrap();
        let j = crate::eval::total_reward(&game, &uniform).unwrap()[0];
        assert!(br.value >= j - 1e-9);
        // the optimum dominates every deterministic policy
        for c in 0..81usize {
            let actions = vec![vec![c / 27 % 3, c / 9 % 3, c / 3 % 3, c % 3]];
            let det = Policy::deterministic(&game, &actions).unwrap();
            let jd = crate::eval::total_reward(&game, &det).unwrap()[0];
            assert!(br.value >= jd - 1e-9);
        }
    }

    #[test]
    fn myopic_dilemma_best_response_is_betray() {
        let game = build_prisoners_dilemma(0.1, 0.0, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10 {
            let policy = Policy::sample_uniform(&game, &mut rng);
            for agent in 0..2 {
                let br = best_response(&game, &policy, agent).unwrap();
                assert_eq!(br.actions, vec![1, 1]);
            }
        }
    }

    #[test]
    fn gap_vanishes_at_the_mixed_equilibrium() {
        let game = build_coordination_game(0.1, 0.95, None).unwrap();
        let ne = coordination_fully_mixed_policy(0.1).unwrap();
        let gap = ne_gap(&game, &ne).unwrap();
        assert!(gap.max <= 1e-8, "gap = {}", gap.max);
        assert!(gap.per_agent.iter().all(|&g| g >= -1e-9));
    }

    #[test]
    fn gap_matches_deterministic_deviation_enumeration() {
        // brute-force oracle over all of one agent's deterministic deviations
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for seed in 0..20 {
            let game = random_game(
                &RandomGameConfig {
                    num_agents: 2,
                    num_states: 2,
                    num_actions: vec![2, 2],
                    gamma: 0.85,
                    identical_rewards: false,
                },
                400 + seed,
            )
            .unwrap();
            let policy = Policy::sample_uniform(&game, &mut rng);
            let gap = ne_gap(&game, &policy).unwrap();
            let totals = crate::eval::total_reward(&game, &policy).unwrap();
            for agent in 0..2 {
                let mut best = f64::NEG_INFINITY;
                for c in 0..4usize {
                    let dev = [c / 2, c % 2];
                    let mut tables = policy.tables().to_vec();
                    let mut table = ndarray::Array2::zeros((2, 2));
                    for (s, &a) in dev.iter().enumerate() {
                        table[[s, a]] = 1.0;
                    }
                    tables[agent] = table;
                    let deviated = Policy::new(tables).unwrap();
                    best = best
                        .max(crate::eval::total_reward(&game, &deviated).unwrap()[agent]);
                }
                let oracle_gap = best - totals[agent];
                assert!(
                    (gap.per_agent[agent] - oracle_gap).abs() < 1e-8,
                    "agent {agent}: {} vs {oracle_gap}",
                    gap.per_agent[agent]
                );
                assert!(gap.per_agent[agent] >= -1e-9);
            }
        }
    }

    #[test]
    fn dilemma_equilibria_are_certified() {
        let game = build_prisoners_dilemma(0.1, 0.95, None).unwrap();
        let result = enumerate_strict_nes(&game).unwrap();
        let cooperative = prisoners_cooperative_policy();
        let betray = prisoners_all_betray_policy();
        let found_coop = result
            .strict
            .iter()
            .any(|c| c.policy == cooperative);
        let found_betray = result.strict.iter().any(|c| c.policy == betray);
        assert!(found_coop, "cooperative equilibrium missing");
        assert!(found_betray, "all-betray equilibrium missing");
        for cert in &result.strict {
            assert!(cert.delta_star > 0.0);
            assert!(cert.policy.is_deterministic());
            assert!(cert.deviation_visitation_positive);
            let gap = ne_gap(&game, &cert.policy).unwrap();
            assert!(gap.max <= 1e-8);
            let report = stationarity_test(&game, &cert.policy, 1e-9).unwrap();
            assert!(report.stationary);
        }
    }

    #[test]
    fn enumeration_refuses_oversized_games() {
        // 4^13 deterministic policies per agent pair exceeds the budget
        let game = random_game(
            &RandomGameConfig {
                num_agents: 2,
                num_states: 13,
                num_actions: vec![4, 4],
                gamma: 0.5,
                identical_rewards: false,
            },
            90,
        )
        .unwrap();
        assert!(matches!(
            enumerate_strict_nes(&game),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn constant_reward_game_has_no_strict_equilibria() {
        let mut spec =
            crate::game::GameSpec::from_game(&build_prisoners_dilemma(0.2, 0.9, None).unwrap());
        for agent in spec.rewards.as_mut().unwrap() {
            for row in agent {
                for v in row {
                    *v = 1.0;
                }
            }
        }
        let game = crate::game::build_game(&spec).unwrap();
        let result = enumerate_strict_nes(&game).unwrap();
        assert!(result.strict.is_empty());
        assert_eq!(result.borderline.len(), 16);
    }

    #[test]
    fn enumeration_is_exhaustive_on_small_games() {
        // every deterministic policy not certified must violate a margin
        let game = random_game(
            &RandomGameConfig {
                num_agents: 2,
                num_states: 2,
                num_actions: vec![2, 2],
                gamma: 0.8,
                identical_rewards: true,
            },
            44,
        )
        .unwrap();
        let result = enumerate_strict_nes(&game).unwrap();
        assert_eq!(result.candidates, 16);
        let mut found = 0u64;
        for c in 0..16usize {
            let actions = vec![vec![c / 8 % 2, c / 4 % 2], vec![c / 2 % 2, c % 2]];
            let policy = Policy::deterministic(&game, &actions).unwrap();
            let bundle = EvalBundle::new(&game, &policy).unwrap();
            let mut worst = f64::NEG_INFINITY;
            for i in 0..2 {
                for s in 0..2 {
                    for a in 0..2 {
                        if a != actions[i][s] {
                            worst = worst.max(bundle.avg_adv[i][[s, a]]);
                        }
                    }
                }
            }
            let in_list = result.strict.iter().any(|cert| cert.policy == policy);
            if in_list {
                found += 1;
                assert!(worst <= -tol::STRICT_MARGIN);
            } else {
                assert!(worst > -tol::STRICT_MARGIN);
            }
        }
        assert_eq!(found, result.strict.len() as u64);
    }

    #[test]
    fn delta_star_scales_linearly_with_rewards() {
        let game = build_prisoners_dilemma(0.1, 0.95, None).unwrap();
        let scaled = {
            let mut spec = crate::game::GameSpec::from_game(&game);
            for agent in spec.rewards.as_mut().unwrap() {
                for row in agent {
                    for v in row {
                        *v *= 3.0;
                    }
                }
            }
            crate::game::build_game(&spec).unwrap()
        };
        let actions = prisoners_cooperative_policy().deterministic_actions().unwrap();
        let base = certify_deterministic(&game, &actions).unwrap().unwrap();
        let big = certify_deterministic(&scaled, &actions).unwrap().unwrap();
        assert!((big.delta_star - 3.0 * base.delta_star).abs() < 1e-9 * big.delta_star.abs().max(1.0));
    }

    #[test]
    fn cooperative_margin_constant_matches_closed_form() {
        // under uniform rho the closed chain is doubly stochastic, so the
        // unnormalized occupancy is (10, 10); state-2 margin is exactly 1
        // (reward difference only), state-1 margin exceeds it, so the minimum
        // is 10 for every epsilon here
        for eps in [0.1, 0.05, 0.01] {
            let game = build_prisoners_dilemma(eps, 0.95, None).unwrap();
            let actions = prisoners_cooperative_policy()
                .deterministic_actions()
                .unwrap();
            let cert = certify_deterministic(&game, &actions).unwrap().unwrap();
            assert!(
                (delta_star(&game, &cert) - 10.0).abs() < 1e-8,
                "eps {eps}: {}",
                cert.delta_star
            );
            let c = 0.95 * (1.0 - 2.0 * eps);
            let state1_margin = (2.0 * c - 1.0) / (1.0 - c);
            assert!((cert.state_margins[0][0] - state1_margin).abs() < 1e-8);
            assert!((cert.state_margins[0][1] - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn mismatch_bound_closed_form() {
        let game = build_coordination_game(0.1, 0.95, None).unwrap();
        assert!((mismatch_bound(&game).unwrap() - 80.0).abs() < 1e-9);
        let static_game = build_coordination_game(0.1, 0.0, None).unwrap();
        assert!((mismatch_bound(&static_game).unwrap() - 4.0).abs() < 1e-12);
        let point_mass = build_coordination_game(0.1, 0.95, Some(&[1.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(mismatch_bound(&point_mass).unwrap_err(), Error::RhoHasZeroMass);
    }

    #[test]
    fn mixed_equilibrium_is_stationary() {
        let game = build_coordination_game(0.1, 0.95, None).unwrap();
        let ne = coordination_fully_mixed_policy(0.1).unwrap();
        let report = stationarity_test(&game, &ne, 1e-8).unwrap();
        assert!(report.stationary);
        for agent in &report.per_agent {
            assert!(agent.max_improvement.abs() <= 1e-8);
        }
    }

    #[test]
    fn random_interior_policies_are_not_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let mut nonstationary = 0;
        for seed in 0..20 {
            let game = random_game(
                &RandomGameConfig {
                    num_agents: 2,
                    num_states: 2,
                    num_actions: vec![2, 2],
                    gamma: 0.8,
                    identical_rewards: false,
                },
                500 + seed,
            )
            .unwrap();
            let policy = Policy::sample_uniform(&game, &mut rng);
            let report = stationarity_test(&game, &policy, 1e-9).unwrap();
            let gap = ne_gap(&game, &policy).unwrap();
            if !report.stationary {
                nonstationary += 1;
                // a genuinely non-stationary policy has a real gap
                assert!(gap.max > 1e-9);
            } else {
                assert!(gap.max <= 1e-6);
            }
        }
        assert!(nonstationary >= 19, "only {nonstationary} non-stationary");
    }

    #[test]
    fn saddle_escape_found_at_the_mixed_equilibrium() {
        let game = build_coordination_game(0.1, 0.95, None).unwrap();
        let potential = PotentialSpec::from_identical_rewards(&game).unwrap();
        let ne = coordination_fully_mixed_policy(0.1).unwrap();
        let escape = saddle_certificate(&game, &potential, &ne, 1e-2, 100, 46)
            .unwrap()
            .expect("saddle escape exists");
        assert!(escape.gain > tol::SADDLE_GAIN);
        assert!(ne.euclidean_distance(&escape.theta) <= 1e-2 + 1e-12);
        // re-verify via an independent potential evaluation
        let phi_star = total_potential(&game, &potential, &ne).unwrap();
        let phi_new = total_potential(&game, &potential, &escape.theta).unwrap();
        assert!(phi_new > phi_star);
        assert!(!escape.via_random_search);
    }

    #[test]
    fn constant_potential_has_no_escape() {
        let game = build_coordination_game(0.1, 0.95, None).unwrap();
        let potential = PotentialSpec::new(ndarray::Array2::from_elem((4, 4), 2.5));
        let ne = coordination_fully_mixed_policy(0.1).unwrap();
        let escape = saddle_certificate(&game, &potential, &ne, 1e-2, 50, 47).unwrap();
        assert!(escape.is_none());
    }

    #[test]
    fn saddle_search_rejects_non_mixed_input() {
        let game = build_prisoners_dilemma(0.1, 0.95, None).unwrap();
        let potential = PotentialSpec::new(game.rewards(0).clone());
        let vertex = prisoners_cooperative_policy();
        assert!(matches!(
            saddle_certificate(&game, &potential, &vertex, 1e-2, 10, 48),
            Err(Error::NotFullyMixed { .. })
        ));
    }

    #[test]
    fn strict_equilibria_are_local_potential_maxima() {
        // identical-reward game: potential strictly decreases on a sampled
        // neighborhood of every certificate
        let game = build_coordination_game(0.1, 0.95, None).unwrap();
        let potential = PotentialSpec::from_identical_rewards(&game).unwrap();
        let result = enumerate_strict_nes(&game).unwrap();
        assert!(!result.strict.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(49);
        for cert in result.strict.iter().take(3) {
            let phi_star = total_potential(&game, &potential, &cert.policy).unwrap();
            for _ in 0..20 {
                let random = Policy::sample_uniform(&game, &mut rng);
                let dist = cert.policy.euclidean_distance(&random);
                let w = 1e-3 / dist;
                let tables: Vec<ndarray::Array2<f64>> = cert
                    .policy
                    .tables()
                    .iter()
                    .zip(random.tables())
                    .map(|(a, b)| a * (1.0 - w) + &(b * w))
                    .collect();
                let nearby = Policy::new(tables).unwrap();
                let phi = total_potential(&game, &potential, &nearby).unwrap();
                assert!(
                    phi < phi_star,
                    "potential rose from {phi_star} to {phi} near a strict equilibrium"
                );
            }
        }
    }
}
