//! The gradient-play iteration: simultaneous per-agent projected ascent steps,
//! trajectory recording, the row-wise L1 policy metric, and the local
//! convergence probe around strict equilibria.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::{EvalBundle, PotentialSpec};
use crate::game::Game;
use crate::nash::{certify_deterministic, StrictNECertificate};
use crate::policy::{require_match, Policy};
use crate::projection::project_policy;
use crate::tol;

/// One projected ascent step: every agent moves along its own gradient
/// evaluated at the common current policy, then projects row-wise.
pub fn step(game: &Game, policy: &Policy, eta: f64) -> Result<Policy> {
    let bundle = EvalBundle::new(game, policy)?;
    step_from_gradients(policy, &bundle.gradients, eta)
}

fn step_from_gradients(policy: &Policy, gradients: &[Array2<f64>], eta: f64) -> Result<Policy> {
    if !eta.is_finite() || eta <= 0.0 {
        return Err(Error::Domain(format!("eta must be positive, got {eta}")));
    }
    let raw: Vec<Array2<f64>> = policy
        .tables()
        .iter()
        .zip(gradients)
        .map(|(theta, g)| theta + &(g * eta))
        .collect();
    project_policy(&raw)
}

/// Stopping rules and metric schedule for a run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub eta: f64,
    pub max_iters: usize,
    /// Stop once the gradient-mapping norm falls to this.
    pub stop_grad_norm: Option<f64>,
    /// Stop once the equilibrium gap falls to this (checked on the gap stride).
    pub stop_ne_gap: Option<f64>,
    /// Evaluate the equilibrium gap every this many iterations; 0 disables.
    /// Gap evaluation needs one best-response solve per agent, so it is kept
    /// off the per-step path by default.
    pub ne_gap_stride: usize,
    /// Record the policy at every recorded step.
    pub record_iterates: bool,
    /// Record the row-wise L1 distance to this reference policy.
    pub d_metric_reference: Option<Policy>,
}

impl RunConfig {
    pub fn new(eta: f64, max_iters: usize) -> Self {
        RunConfig {
            eta,
            max_iters,
            stop_grad_norm: None,
            stop_ne_gap: None,
            ne_gap_stride: 0,
            record_iterates: false,
            d_metric_reference: None,
        }
    }

    /// Theory preset: `eta = 1 / beta` for the game's smoothness constant.
    pub fn theory_preset(game: &Game, max_iters: usize) -> Self {
        RunConfig::new(1.0 / game.smoothness_beta(), max_iters)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradNorm,
    NeGap,
    MaxIters,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::GradNorm => "grad_norm",
            Termination::NeGap => "ne_gap",
            Termination::MaxIters => "max_iters",
        }
    }
}

/// Metrics recorded at one iterate.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub iter: usize,
    pub total_rewards: Vec<f64>,
    pub phi: Option<f64>,
    pub grad_map_norm: f64,
    pub ne_gap: Option<f64>,
    pub d_metric: Option<f64>,
}

/// A full run: per-iterate metrics, the stop reason, and the final policy.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub termination: Termination,
    pub final_policy: Policy,
    /// Populated when `record_iterates` is set.
    pub iterates: Vec<Policy>,
}

/// Runs gradient play from `theta0`. Deterministic given its inputs; stops at
/// the first satisfied criterion. With `max_iters = 0` the trajectory holds
/// only the initial iterate's metrics.
pub fn run(
    game: &Game,
    theta0: &Policy,
    config: &RunConfig,
    potential: Option<&PotentialSpec>,
) -> Result<Trajectory> {
    require_match(game, theta0)?;
    if !config.eta.is_finite() || config.eta <= 0.0 {
        return Err(Error::Domain(format!(
            "eta must be positive, got {}",
            config.eta
        )));
    }
    let mut policy = theta0.clone();
    let mut steps = Vec::new();
    let mut iterates = Vec::new();
    let termination;
    let mut iter = 0usize;
    loop {
        let bundle = EvalBundle::new(game, &policy)?;
        let next = step_from_gradients(&policy, &bundle.gradients, config.eta)?;
        let grad_map_norm = policy
            .tables()
            .iter()
            .zip(next.tables())
            .flat_map(|(a, b)| a.iter().zip(b.iter()))
            .map(|(x, y)| {
                let g = (y - x) / config.eta;
                g * g
            })
            .sum::<f64>()
            .sqrt();

        let phi = match potential {
            Some(p) => Some(crate::eval::total_potential(game, p, &policy)?),
            None => None,
        };
        let gap_due = config.ne_gap_stride > 0 && iter.is_multiple_of(config.ne_gap_stride);
        let ne_gap = if gap_due {
            Some(crate::nash::ne_gap_given_totals(game, &policy, &bundle.total_rewards)?.max)
        } else {
            None
        };
        let d_metric = match &config.d_metric_reference {
            Some(reference) => Some(d_metric(&policy, reference)?),
            None => None,
        };
        steps.push(StepRecord {
            iter,
            total_rewards: bundle.total_rewards.clone(),
            phi,
            grad_map_norm,
            ne_gap,
            d_metric,
        });
        if config.record_iterates {
            iterates.push(policy.clone());
        }

        if let Some(threshold) = config.stop_grad_norm {
            if grad_map_norm <= threshold {
                termination = Termination::GradNorm;
                break;
            }
        }
        if let (Some(threshold), Some(gap)) = (config.stop_ne_gap, ne_gap) {
            if gap <= threshold {
                termination = Termination::NeGap;
                break;
            }
        }
        if iter == config.max_iters {
            termination = Termination::MaxIters;
            break;
        }
        policy = next;
        iter += 1;
    }
    Ok(Trajectory {
        steps,
        termination,
        final_policy: policy,
        iterates,
    })
}

/// Row-wise policy metric: the largest L1 distance between corresponding
/// per-state rows, maximized over agents and states. Always in `[0, 2]`.
pub fn d_metric(a: &Policy, b: &Policy) -> Result<f64> {
    if a.num_agents() != b.num_agents() {
        return Err(Error::ShapeMismatch(format!(
            "{} agents vs {}",
            a.num_agents(),
            b.num_agents()
        )));
    }
    let mut worst = 0.0f64;
    for (ta, tb) in a.tables().iter().zip(b.tables()) {
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch(format!(
                "policy tables {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        for (ra, rb) in ta.rows().into_iter().zip(tb.rows()) {
            let l1: f64 = ra.iter().zip(rb.iter()).map(|(x, y)| (x - y).abs()).sum();
            worst = worst.max(l1);
        }
    }
    Ok(worst)
}

/// Configuration for the local convergence probe.
#[derive(Debug, Clone)]
pub struct ProbeConfig {
    /// Largest D-distance of sampled initial policies from the equilibrium.
    pub radius: f64,
    pub eta: f64,
    pub trials: usize,
    pub seed: u64,
}

/// One probe trial.
#[derive(Debug, Clone)]
pub struct ProbeTrial {
    pub initial_d: f64,
    /// Steps until the iterate matched the equilibrium, if it did.
    pub converged_at: Option<usize>,
    /// Guaranteed step count, `ceil(2 D_0 / (eta delta_star))`.
    pub step_bound: usize,
    /// Every step satisfied `D_{t+1} <= max(D_t - eta delta_star / 2, 0)`.
    pub decrement_ok: bool,
    pub converged_within_bound: bool,
}

#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub trials: Vec<ProbeTrial>,
    /// Sampling radius at or below the guaranteed region-of-attraction radius.
    pub within_guaranteed_region: bool,
    pub theorem_radius: f64,
    pub delta_star: f64,
    pub failures: usize,
    pub all_pass: bool,
}

/// Starts gradient play inside a D-ball around a certified strict equilibrium
/// and checks the guaranteed per-step decrement and step-count bound.
///
/// With a radius beyond the certified region the report flags the trials as
/// outside the guaranteed region instead of erroring.
pub fn local_convergence_probe(
    game: &Game,
    cert: &StrictNECertificate,
    config: &ProbeConfig,
) -> Result<ProbeReport> {
    // refuse tampered certificates
    let recheck = certify_deterministic(game, &cert.actions)?
        .ok_or_else(|| Error::NotStrictNE("certificate does not re-verify".into()))?;
    if (recheck.delta_star - cert.delta_star).abs() > 1e-9 * cert.delta_star.abs().max(1.0) {
        return Err(Error::NotStrictNE("certificate margins changed".into()));
    }
    let radius_ok = config.radius.is_finite() && config.radius >= 0.0;
    let eta_ok = config.eta.is_finite() && config.eta > 0.0;
    if !radius_ok || !eta_ok || config.trials == 0 {
        return Err(Error::Domain("probe needs radius >= 0, eta > 0, trials >= 1".into()));
    }
    let delta_star = cert.delta_star;
    let theorem_radius = cert.attraction_radius;
    let decrement = config.eta * delta_star / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trials = Vec::with_capacity(config.trials);
    let mut failures = 0usize;
    for _ in 0..config.trials {
        let theta0 = sample_near_vertex(game, cert, config.radius, &mut rng)?;
        let mut d = d_metric(&theta0, &cert.policy)?;
        let initial_d = d;
        let step_bound = if initial_d <= tol::PROBE_CONVERGED {
            0
        } else {
            (2.0 * initial_d / (config.eta * delta_star)).ceil() as usize
        };
        let mut decrement_ok = true;
        let mut converged_at = if initial_d <= tol::PROBE_CONVERGED {
            Some(0)
        } else {
            None
        };
        let mut policy = theta0;
        let horizon = step_bound.max(1) + 4;
        for t in 0..horizon {
            if converged_at.is_some() {
                break;
            }
            policy = step(game, &policy, config.eta)?;
            let d_next = d_metric(&policy, &cert.policy)?;
            if d_next > (d - decrement).max(0.0) + tol::PROBE_SLACK {
                decrement_ok = false;
            }
            d = d_next;
            if d <= tol::PROBE_CONVERGED {
                converged_at = Some(t + 1);
            }
        }
        let converged_within_bound = matches!(converged_at, Some(t) if t <= step_bound);
        if !(decrement_ok && converged_within_bound) {
            failures += 1;
        }
        trials.push(ProbeTrial {
            initial_d,
            converged_at,
            step_bound,
            decrement_ok,
            converged_within_bound,
        });
    }
    Ok(ProbeReport {
        within_guaranteed_region: config.radius <= theorem_radius,
        theorem_radius,
        delta_star,
        all_pass: failures == 0,
        failures,
        trials,
    })
}

/// Random feasible policy with every row within L1 distance `radius` of the
/// certificate's row (so the D-metric to the certificate is at most `radius`).
fn sample_near_vertex(
    game: &Game,
    cert: &StrictNECertificate,
    radius: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Policy> {
    let mut tables = cert.policy.tables().to_vec();
    for (i, table) in tables.iter_mut().enumerate() {
        let m = game.num_actions()[i];
        for s in 0..game.num_states() {
            let chosen = cert.actions[i][s];
            if m == 1 {
                continue;
            }
            // move up to radius/2 of mass off the chosen action
            let shift = rng.gen::<f64>() * (radius / 2.0).min(1.0);
            let mut weights: Vec<f64> = (0..m - 1).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
            let total: f64 = weights.iter().sum();
            for w in &mut weights {
                *w *= shift / total;
            }
            table[[s, chosen]] = 1.0 - shift;
            let mut k = 0;
            for a in 0..m {
                if a == chosen {
                    continue;
                }
                table[[s, a]] = weights[k];
                k += 1;
            }
        }
    }
    Policy::new(tables)
}
