//! Randomized executable checks of the closed-form identities and bounds,
//! with reproducible seeds and machine-readable reports.
//!
//! Every check is deterministic given `(trials, seed)` and keeps its worst
//! witness so a failure can be replayed from the serialized game and policies.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::{run, RunConfig};
use crate::error::Result;
use crate::eval::{potential_range, EvalBundle, PotentialSpec};
use crate::game::{random_game, Game, GameSpec, RandomGameConfig};
use crate::nash::mismatch_bound;
use crate::policy::Policy;
use crate::tol;

/// Replayable worst case of a failing or near-failing trial.
#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub game: GameSpec,
    /// Policies involved, `[policy][agent][state][action]`.
    pub policies: Vec<Vec<Vec<Vec<f64>>>>,
    pub agent: Option<usize>,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub trials: usize,
    /// Trials skipped by a guard (e.g. vanishing visitation), not counted as failures.
    pub skipped: usize,
    /// Why trials were skipped, first few occurrences.
    pub notes: Vec<String>,
    pub max_violation: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub pass: bool,
    pub worst: Option<Witness>,
}

const MAX_NOTES: usize = 5;

impl CheckReport {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        name: &str,
        trials: usize,
        skipped: usize,
        notes: Vec<String>,
        max_violation: f64,
        tolerance: f64,
        seed: u64,
        worst: Option<Witness>,
    ) -> Self {
        CheckReport {
            name: name.to_string(),
            trials,
            skipped,
            notes,
            max_violation,
            tolerance,
            seed,
            pass: max_violation <= tolerance,
            worst,
        }
    }
}

fn push_note(notes: &mut Vec<String>, note: String) {
    if notes.len() < MAX_NOTES {
        notes.push(note);
    }
}

/// Random small game for the property suite. Dimension ranges keep every
/// state comfortably reachable (uniform initial distribution).
fn sample_game(rng: &mut ChaCha8Rng, identical_rewards: bool) -> Game {
    let num_agents = rng.gen_range(1..=3);
    let num_states = rng.gen_range(1..=4);
    let num_actions = (0..num_agents).map(|_| rng.gen_range(2..=3)).collect();
    let gamma = rng.gen_range(0.3..0.95);
    let seed = rng.gen::<u64>();
    random_game(
        &RandomGameConfig {
            num_agents,
            num_states,
            num_actions,
            gamma,
            identical_rewards,
        },
        seed,
    )
    .expect("random dimensions are valid")
}

/// Interior policies most of the time, vertex policies at a 20% rate so the
/// boundary is exercised too.
fn sample_policy(game: &Game, rng: &mut ChaCha8Rng) -> Policy {
    if rng.gen::<f64>() < 0.2 {
        Policy::sample_vertex(game, rng)
    } else {
        Policy::sample_uniform(game, rng)
    }
}

fn witness(game: &Game, policies: &[&Policy], agent: Option<usize>, detail: String) -> Witness {
    Witness {
        game: GameSpec::from_game(game),
        policies: policies.iter().map(|p| p.to_nested()).collect(),
        agent,
        detail,
    }
}

/// Checks `J_i(theta') - J_i(theta) = E_{d_theta', pi_theta'}[A_i^theta] / (1 - gamma)`
/// on random unilateral or joint deviations.
pub fn check_performance_difference(trials: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_violation: f64 = 0.0;
    let mut worst = None;
    for _ in 0..trials {
        let game = sample_game(&mut rng, false);
        let theta = sample_policy(&game, &mut rng);
        let theta2 = sample_policy(&game, &mut rng);
        let agent = rng.gen_range(0..game.num_agents());
        let before = EvalBundle::new(&game, &theta)?;
        let after = EvalBundle::new(&game, &theta2)?;
        let adv = before.advantage(agent);
        let mut rhs = 0.0;
        for s in 0..game.num_states() {
            for j in 0..game.num_joint_actions() {
                rhs += after.visitation[s]
                    * theta2.joint_prob(s, game.joint_action(j))
                    * adv[[s, j]];
            }
        }
        rhs /= 1.0 - game.gamma();
        let lhs = after.total_rewards[agent] - before.total_rewards[agent];
        let violation = (lhs - rhs).abs();
        if violation > max_violation {
            max_violation = violation;
            worst = Some(witness(
                &game,
                &[&theta, &theta2],
                Some(agent),
                format!("lhs {lhs:.17} vs rhs {rhs:.17}"),
            ));
        }
    }
    Ok(CheckReport::assemble(
        "performance_difference",
        trials,
        0,
        Vec::new(),
        max_violation,
        tol::IDENTITY,
        seed,
        worst,
    ))
}

/// Checks the domination inequality on random unilateral deviations:
/// the value gain is at most the visitation ratio times the closed-form
/// first-order improvement.
pub fn check_gradient_domination(trials: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_violation: f64 = 0.0;
    let mut skipped = 0usize;
    let mut notes = Vec::new();
    let mut worst = None;
    for trial in 0..trials {
        let game = sample_game(&mut rng, false);
        let theta = sample_policy(&game, &mut rng);
        let agent = rng.gen_range(0..game.num_agents());
        let deviation = sample_policy(&game, &mut rng);
        let mut tables = theta.tables().to_vec();
        tables[agent] = deviation.agent(agent).clone();
        let theta2 = Policy::new(tables)?;

        let base = EvalBundle::new(&game, &theta)?;
        let dev = EvalBundle::new(&game, &theta2)?;
        if let Some((state, _)) = base
            .visitation
            .iter()
            .enumerate()
            .find(|(_, &d)| d < tol::VISITATION_GUARD)
        {
            skipped += 1;
            push_note(
                &mut notes,
                format!("trial {trial}: visitation vanishes at state {state}, ratio skipped"),
            );
            continue;
        }
        let ratio = base
            .visitation
            .iter()
            .zip(dev.visitation.iter())
            .map(|(&d, &d2)| d2 / d)
            .fold(f64::NEG_INFINITY, f64::max);
        // closed-form max of (theta_bar - theta) . grad at per-state argmax vertices
        let g = &base.gradients[agent];
        let mut improvement = 0.0;
        for s in 0..game.num_states() {
            let best = (0..game.num_actions()[agent])
                .map(|a| g[[s, a]])
                .fold(f64::NEG_INFINITY, f64::max);
            let current: f64 = (0..game.num_actions()[agent])
                .map(|a| theta.prob(agent, s, a) * g[[s, a]])
                .sum();
            improvement += best - current;
        }
        let lhs = dev.total_rewards[agent] - base.total_rewards[agent];
        let rhs = ratio * improvement;
        let violation = lhs - rhs;
        if violation > max_violation {
            max_violation = violation;
            worst = Some(witness(
                &game,
                &[&theta, &theta2],
                Some(agent),
                format!("gain {lhs:.17} vs bound {rhs:.17}"),
            ));
        }
    }
    Ok(CheckReport::assemble(
        "gradient_domination",
        trials,
        skipped,
        notes,
        max_violation,
        tol::IDENTITY,
        seed,
        worst,
    ))
}

/// Checks the Lipschitz bound on the stacked gradient field for unit-range
/// rewards: `||g(theta') - g(theta)|| <= beta ||theta' - theta||`.
pub fn check_smoothness(trials: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_violation: f64 = 0.0;
    let mut worst = None;
    for _ in 0..trials {
        let game = sample_game(&mut rng, false);
        debug_assert!(game.rewards_in_unit_range());
        let beta = game.smoothness_beta();
        let theta = sample_policy(&game, &mut rng);
        let theta2 = sample_policy(&game, &mut rng);
        let dist = theta.euclidean_distance(&theta2);
        if dist == 0.0 {
            continue;
        }
        let ga = EvalBundle::new(&game, &theta)?.gradients;
        let gb = EvalBundle::new(&game, &theta2)?.gradients;
        let diff: f64 = ga
            .iter()
            .zip(&gb)
            .flat_map(|(x, y)| x.iter().zip(y.iter()))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let violation = diff / dist - beta;
        if violation > max_violation {
            max_violation = violation;
            worst = Some(witness(
                &game,
                &[&theta, &theta2],
                None,
                format!("ratio {:.17} vs beta {beta:.17}", diff / dist),
            ));
        }
    }
    Ok(CheckReport::assemble(
        "smoothness",
        trials,
        0,
        Vec::new(),
        max_violation,
        tol::INEQUALITY_SLACK,
        seed,
        worst,
    ))
}

/// Configuration of the global convergence bound check.
#[derive(Debug, Clone)]
pub struct GlobalBoundConfig {
    pub games: usize,
    pub epsilon: f64,
    pub gamma: f64,
    pub num_states: usize,
    pub num_actions: Vec<usize>,
    /// Iteration cap; games whose guaranteed horizon exceeds it are reported
    /// as skipped rather than failed.
    pub budget_cap: usize,
}

impl Default for GlobalBoundConfig {
    fn default() -> Self {
        GlobalBoundConfig {
            games: 10,
            epsilon: 0.05,
            gamma: 0.5,
            num_states: 2,
            num_actions: vec![2, 2],
            budget_cap: 50_000_000,
        }
    }
}

/// On random shared-reward games, runs gradient play at `eta = 1/beta` and
/// checks that the equilibrium gap dips to `epsilon` within the guaranteed
/// horizon `T = ceil(64 M^2 (phi_max - phi_min) |S| sum|A| / ((1-gamma)^3 eps^2))`.
pub fn check_global_convergence_bound(config: &GlobalBoundConfig, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_violation: f64 = 0.0;
    let mut skipped = 0usize;
    let mut notes = Vec::new();
    let mut worst = None;
    for game_index in 0..config.games {
        let game = random_game(
            &RandomGameConfig {
                num_agents: config.num_actions.len(),
                num_states: config.num_states,
                num_actions: config.num_actions.clone(),
                gamma: config.gamma,
                identical_rewards: true,
            },
            rng.gen::<u64>(),
        )?;
        let potential = PotentialSpec::from_identical_rewards(&game).expect("shared rewards");
        let (lo, hi) = potential_range(&game, &potential)?;
        let m_bound = mismatch_bound(&game)?;
        let beta = game.smoothness_beta();
        let spread = hi - lo;
        let horizon = (64.0 * m_bound * m_bound * spread * game.num_states() as f64
            * game.total_action_count() as f64
            / ((1.0 - config.gamma).powi(3) * config.epsilon * config.epsilon))
            .ceil() as usize;
        if horizon > config.budget_cap {
            skipped += 1;
            push_note(
                &mut notes,
                format!(
                    "game {game_index}: guaranteed horizon {horizon} exceeds budget {}",
                    config.budget_cap
                ),
            );
            continue;
        }
        let theta0 = Policy::sample_uniform(&game, &mut rng);
        let run_config = RunConfig {
            stop_ne_gap: Some(config.epsilon),
            ne_gap_stride: 1,
            ..RunConfig::new(1.0 / beta, horizon)
        };
        let trajectory = run(&game, &theta0, &run_config, None)?;
        let best_gap = trajectory
            .steps
            .iter()
            .skip(1)
            .filter_map(|s| s.ne_gap)
            .fold(f64::INFINITY, f64::min);
        let violation = best_gap - config.epsilon;
        if violation > max_violation {
            max_violation = violation;
            worst = Some(witness(
                &game,
                &[&theta0],
                None,
                format!("min gap {best_gap:.17} after horizon {horizon}"),
            ));
        }
    }
    Ok(CheckReport::assemble(
        "global_convergence_bound",
        config.games,
        skipped,
        notes,
        max_violation.max(0.0),
        0.0,
        seed,
        worst,
    ))
}
