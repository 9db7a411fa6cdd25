//! Command implementations: multi-trial gradient-play runs, the saddle-escape
//! demonstration, the convergence-ratio sweep, equilibrium enumeration, the
//! randomized theory checks, and policy verification.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use gradplay::checks::{
    check_global_convergence_bound, check_gradient_domination, check_performance_difference,
    check_smoothness, CheckReport, GlobalBoundConfig,
};
use gradplay::dynamics::{d_metric, run, RunConfig, Trajectory};
use gradplay::eval::PotentialSpec;
use gradplay::game::coordination_fully_mixed_policy;
use gradplay::nash::{
    certify_deterministic, enumerate_strict_nes, ne_gap, stationarity_test, StrictNECertificate,
};
use gradplay::policy::Policy;
use gradplay::projection::project_policy;
use gradplay::{Game, GameSpec};

use crate::config::{ExperimentConfig, GameConfig, InitScheme};
use crate::output;

/// Final iterates within this row-wise L1 distance of a certificate count as
/// having converged to it; certificates are distinct vertices (distance 2),
/// so labels are mutually exclusive.
pub const DESTINATION_D: f64 = 1e-3;

/// Stable per-trial seed derivation (splitmix64 over the pair).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn default_game(config: &ExperimentConfig, fallback: GameConfig) -> GameConfig {
    config.game.clone().unwrap_or(fallback)
}

/// Sample the configured initial policy for one trial.
fn sample_init(
    scheme: &InitScheme,
    game: &Game,
    game_config: &GameConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Policy, String> {
    match scheme {
        InitScheme::Uniform => Ok(Policy::sample_uniform(game, rng)),
        InitScheme::Game2 => {
            if game.num_states() != 2 || game.num_actions() != [2, 2] {
                return Err("game2 initialization needs a 2-state, 2x2-action game".into());
            }
            let mut tables = Vec::with_capacity(2);
            for _ in 0..2 {
                let u: f64 = rng.gen();
                let mut rows = Array2::zeros((2, 2));
                rows[[0, 0]] = 1.0 - 0.4 * u;
                rows[[0, 1]] = 0.4 * u;
                rows[[1, 1]] = 1.0;
                tables.push(rows);
            }
            Policy::new(tables).map_err(|e| e.to_string())
        }
        InitScheme::NearPolicy {
            delta,
            reference_file,
        } => {
            let reference = load_reference(game, game_config, reference_file.as_deref())?;
            sample_near(game, &reference, *delta, rng)
        }
    }
}

fn load_reference(
    game: &Game,
    game_config: &GameConfig,
    file: Option<&Path>,
) -> Result<Policy, String> {
    match file {
        Some(path) => {
            let policy = output::read_policy_file(path)?;
            if !policy.matches(game) {
                return Err(format!(
                    "reference policy {} does not match the game dimensions",
                    path.display()
                ));
            }
            Ok(policy)
        }
        None => {
            if game_config.is_coordination_builder() {
                coordination_fully_mixed_policy(game_config.epsilon()).map_err(|e| e.to_string())
            } else {
                Err("near_policy initialization needs a reference_file for this game".into())
            }
        }
    }
}

/// Random feasible policy at Euclidean distance `delta` from the reference
/// (tangent noise, then row-wise projection; projection is non-expansive so
/// the distance stays at most `delta`).
fn sample_near(
    game: &Game,
    reference: &Policy,
    delta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Policy, String> {
    if delta == 0.0 {
        return Ok(reference.clone());
    }
    let mut noise: Vec<Array2<f64>> = Vec::with_capacity(game.num_agents());
    let mut norm_sq = 0.0;
    for i in 0..game.num_agents() {
        let m = game.num_actions()[i];
        let mut table = Array2::zeros((game.num_states(), m));
        for s in 0..game.num_states() {
            let mut row: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() - 0.5).collect();
            let mean = row.iter().sum::<f64>() / m as f64;
            for v in &mut row {
                *v -= mean;
            }
            for (a, v) in row.iter().enumerate() {
                table[[s, a]] = *v;
                norm_sq += v * v;
            }
        }
        noise.push(table);
    }
    if norm_sq == 0.0 {
        return Ok(reference.clone());
    }
    let scale = delta / norm_sq.sqrt();
    let raw: Vec<Array2<f64>> = reference
        .tables()
        .iter()
        .zip(&noise)
        .map(|(t, n)| t + &(n * scale))
        .collect();
    project_policy(&raw).map_err(|e| e.to_string())
}

/// Certificate nearest to the final iterate, if any is within the threshold.
pub fn classify_destination(
    policy: &Policy,
    certificates: &[StrictNECertificate],
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, cert) in certificates.iter().enumerate() {
        let d = d_metric(policy, &cert.policy).ok()?;
        if d <= DESTINATION_D && best.as_ref().is_none_or(|(_, bd)| d < *bd) {
            best = Some((k, d));
        }
    }
    best.map(|(k, _)| k)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub seed: u64,
    pub iterations: usize,
    pub termination: String,
    pub final_total_rewards: Vec<f64>,
    pub final_ne_gap: f64,
    /// Total rewards never fell by more than 1e-9 between steps.
    pub monotone: bool,
    /// Index into the certificate list, or absent when unconverged.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub destination: Option<usize>,
    pub trajectory_file: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub command: String,
    pub seed: u64,
    pub eta: f64,
    pub max_iters: usize,
    pub trials: usize,
    pub certificates: usize,
    pub all_monotone: bool,
    pub max_final_ne_gap: f64,
    pub trial_summaries: Vec<TrialSummary>,
}

/// Multi-trial gradient play from random initial policies, one trajectory
/// file per trial plus a summary.
pub fn cmd_run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary, String> {
    let game_config = default_game(config, GameConfig::coordination_default());
    let game = game_config.resolve()?;
    let eta = config.eta.unwrap_or(0.1);
    let max_iters = config.max_iters.unwrap_or(10_000);
    let trials = config.trials.unwrap_or(20);
    let master = config.seed.unwrap_or(0);
    let stride = config.ne_gap_stride.unwrap_or(10);
    let init = config.init.clone().unwrap_or(InitScheme::Uniform);
    let potential = PotentialSpec::from_identical_rewards(&game);
    let certificates = enumerate_strict_nes(&game)
        .map_err(|e| e.to_string())?
        .strict;

    std::fs::create_dir_all(out_dir)
        .map_err(|e| format!("cannot create {}: {e}", out_dir.display()))?;

    let results: Vec<Result<(Trajectory, TrialSummary), String>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let seed = derive_seed(master, trial as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let theta0 = sample_init(&init, &game, &game_config, &mut rng)?;
            let run_config = RunConfig {
                stop_grad_norm: Some(1e-12),
                ne_gap_stride: stride,
                ..RunConfig::new(eta, max_iters)
            };
            let trajectory =
                run(&game, &theta0, &run_config, potential.as_ref()).map_err(|e| e.to_string())?;
            let final_gap = ne_gap(&game, &trajectory.final_policy)
                .map_err(|e| e.to_string())?
                .max;
            let monotone = trajectory.steps.windows(2).all(|w| {
                w[0].total_rewards
                    .iter()
                    .zip(&w[1].total_rewards)
                    .all(|(a, b)| *b >= *a - 1e-9)
            });
            let destination = classify_destination(&trajectory.final_policy, &certificates);
            let file = format!("trial_{trial:03}.csv");
            let summary = TrialSummary {
                trial,
                seed,
                iterations: trajectory.steps.len(),
                termination: trajectory.termination.as_str().to_string(),
                final_total_rewards: trajectory.steps.last().unwrap().total_rewards.clone(),
                final_ne_gap: final_gap,
                monotone,
                destination,
                trajectory_file: file,
            };
            Ok((trajectory, summary))
        })
        .collect();

    let mut trial_summaries = Vec::with_capacity(trials);
    for result in results {
        let (trajectory, summary) = result?;
        let path = out_dir.join(&summary.trajectory_file);
        output::write_trajectory_csv(&path, &game, &trajectory)?;
        trial_summaries.push(summary);
    }
    let summary = RunSummary {
        command: "run".into(),
        seed: master,
        eta,
        max_iters,
        trials,
        certificates: certificates.len(),
        all_monotone: trial_summaries.iter().all(|t| t.monotone),
        max_final_ne_gap: trial_summaries
            .iter()
            .map(|t| t.final_ne_gap)
            .fold(f64::NEG_INFINITY, f64::max),
        trial_summaries,
    };
    output::write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct SaddleDemoReport {
    pub delta: f64,
    pub eta: f64,
    pub seed: u64,
    pub initial_distance: f64,
    /// First iteration at which the distance to the mixed equilibrium
    /// exceeded ten times `delta`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub escaped_at: Option<usize>,
    pub escaped: bool,
    pub iterations: usize,
    pub final_ne_gap: f64,
    pub final_deterministic: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub destination: Option<usize>,
    pub certificates: usize,
    pub trajectory_file: String,
}

/// Starts next to the coordination game's fully mixed equilibrium and records
/// the trajectory walking away from it to a strict equilibrium.
pub fn cmd_saddle_demo(config: &ExperimentConfig, out_dir: &Path) -> Result<SaddleDemoReport, String> {
    let game_config = default_game(config, GameConfig::coordination_default());
    let game = game_config.resolve()?;
    let delta = config.delta.unwrap_or(1e-3);
    if !(0.0..=1e-2).contains(&delta) {
        return Err(format!("delta must lie in [0, 1e-2], got {delta}"));
    }
    let eta = config.eta.unwrap_or(0.1);
    let max_iters = config.max_iters.unwrap_or(50_000);
    let seed = config.seed.unwrap_or(0);
    let init = InitScheme::NearPolicy {
        delta,
        reference_file: None,
    };
    let reference = load_reference(&game, &game_config, None)?;
    let certificates = enumerate_strict_nes(&game)
        .map_err(|e| e.to_string())?
        .strict;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta0 = sample_init(&init, &game, &game_config, &mut rng)?;
    let run_config = RunConfig {
        stop_grad_norm: Some(1e-12),
        d_metric_reference: Some(reference.clone()),
        ..RunConfig::new(eta, max_iters)
    };
    let potential = PotentialSpec::from_identical_rewards(&game);
    let trajectory =
        run(&game, &theta0, &run_config, potential.as_ref()).map_err(|e| e.to_string())?;

    let escaped_at = trajectory
        .steps
        .iter()
        .find(|s| s.d_metric.unwrap_or(0.0) > 10.0 * delta)
        .map(|s| s.iter);
    let final_gap = ne_gap(&game, &trajectory.final_policy)
        .map_err(|e| e.to_string())?
        .max;
    let report = SaddleDemoReport {
        delta,
        eta,
        seed,
        initial_distance: reference.euclidean_distance(&theta0),
        escaped_at,
        escaped: escaped_at.is_some(),
        iterations: trajectory.steps.len(),
        final_ne_gap: final_gap,
        final_deterministic: trajectory.final_policy.is_deterministic(),
        destination: classify_destination(&trajectory.final_policy, &certificates),
        certificates: certificates.len(),
        trajectory_file: "saddle_trajectory.csv".into(),
    };
    std::fs::create_dir_all(out_dir)
        .map_err(|e| format!("cannot create {}: {e}", out_dir.display()))?;
    output::write_trajectory_csv(&out_dir.join("saddle_trajectory.csv"), &game, &trajectory)?;
    output::write_json(&out_dir.join("saddle_report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioPoint {
    pub epsilon: f64,
    pub delta_star: f64,
    pub attraction_radius: f64,
    pub batch_ratios: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub trials_per_batch: usize,
    pub unconverged: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioSweepReport {
    pub gamma: f64,
    pub eta: f64,
    pub seed: u64,
    pub batches: usize,
    pub trials_per_batch: usize,
    pub points: Vec<RatioPoint>,
}

/// Convergence-ratio sweep over the dilemma game's signal accuracy: for each
/// epsilon, counts the fraction of trials whose final iterate reaches the
/// cooperative equilibrium.
pub fn cmd_ratio_sweep(config: &ExperimentConfig, out_dir: &Path) -> Result<RatioSweepReport, String> {
    let base = default_game(config, GameConfig::dilemma_default());
    if base.spec.is_some() || base.spec_file.is_some() {
        return Err("ratio-sweep needs a builder-style game config (it varies epsilon)".into());
    }
    if base.builder.as_deref() != Some("prisoners_dilemma") {
        return Err("ratio-sweep is defined for the prisoners_dilemma builder".into());
    }
    let gamma = base.gamma();
    let epsilons = config
        .epsilons
        .clone()
        .unwrap_or_else(|| vec![0.1, 0.05, 0.01]);
    let eta = config.eta.unwrap_or(0.1);
    let max_iters = config.max_iters.unwrap_or(30_000);
    let trials_per_batch = config.trials.unwrap_or(100);
    let batches = config.batches.unwrap_or(10);
    let master = config.seed.unwrap_or(0);

    let mut points = Vec::with_capacity(epsilons.len());
    for (eps_index, &epsilon) in epsilons.iter().enumerate() {
        let game_config = GameConfig {
            epsilon: Some(epsilon),
            gamma: Some(gamma),
            rho: base.rho.clone(),
            ..GameConfig::dilemma_default()
        };
        let game = game_config.resolve()?;
        let cooperative = gradplay::game::prisoners_cooperative_policy();
        let actions = cooperative
            .deterministic_actions()
            .expect("cooperative policy is deterministic");
        let cert = certify_deterministic(&game, &actions)
            .map_err(|e| e.to_string())?
            .ok_or_else(|| {
                format!("cooperative policy is not a strict equilibrium at epsilon {epsilon}")
            })?;
        let betray = gradplay::game::prisoners_all_betray_policy();
        let eps_seed = derive_seed(master, eps_index as u64);
        let total = batches * trials_per_batch;
        let outcomes: Vec<Result<(bool, bool), String>> = (0..total)
            .into_par_iter()
            .map(|t| {
                let seed = derive_seed(eps_seed, t as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let theta0 = sample_init(&InitScheme::Game2, &game, &game_config, &mut rng)?;
                let run_config = RunConfig {
                    stop_grad_norm: Some(1e-12),
                    ..RunConfig::new(eta, max_iters)
                };
                let trajectory = run(&game, &theta0, &run_config, None).map_err(|e| e.to_string())?;
                let d_coop = d_metric(&trajectory.final_policy, &cert.policy).map_err(|e| e.to_string())?;
                let d_betray =
                    d_metric(&trajectory.final_policy, &betray).map_err(|e| e.to_string())?;
                Ok((d_coop <= DESTINATION_D, d_betray <= DESTINATION_D))
            })
            .collect();
        let mut flags = Vec::with_capacity(total);
        let mut unconverged = 0usize;
        for outcome in outcomes {
            let (coop, betrayed) = outcome?;
            if !coop && !betrayed {
                unconverged += 1;
            }
            flags.push(coop);
        }
        let mut batch_ratios = Vec::with_capacity(batches);
        for batch in 0..batches {
            let hits = flags[batch * trials_per_batch..(batch + 1) * trials_per_batch]
                .iter()
                .filter(|&&b| b)
                .count();
            batch_ratios.push(hits as f64 / trials_per_batch as f64);
        }
        let mean = batch_ratios.iter().sum::<f64>() / batches as f64;
        let var = if batches > 1 {
            batch_ratios
                .iter()
                .map(|r| (r - mean) * (r - mean))
                .sum::<f64>()
                / (batches - 1) as f64
        } else {
            0.0
        };
        points.push(RatioPoint {
            epsilon,
            delta_star: cert.delta_star,
            attraction_radius: cert.attraction_radius,
            batch_ratios,
            mean,
            std: var.sqrt(),
            trials_per_batch,
            unconverged,
        });
    }
    let report = RatioSweepReport {
        gamma,
        eta,
        seed: master,
        batches,
        trials_per_batch,
        points,
    };
    std::fs::create_dir_all(out_dir)
        .map_err(|e| format!("cannot create {}: {e}", out_dir.display()))?;
    output::write_ratio_csv(&out_dir.join("ratio_sweep.csv"), &report)?;
    output::write_json(&out_dir.join("ratio_sweep.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateRow {
    pub index: usize,
    /// Chosen action per (agent, state).
    pub actions: Vec<Vec<usize>>,
    /// Policy rows, `[agent][state][action]`.
    pub policy: Vec<Vec<Vec<f64>>>,
    /// Averaged advantage at the equilibrium, `[agent][state][action]`;
    /// zero at the chosen action, strictly negative elsewhere.
    pub margins: Vec<Vec<Vec<f64>>>,
    pub visitation: Vec<f64>,
    pub delta_star: f64,
    pub attraction_radius: f64,
    pub total_rewards: Vec<f64>,
    pub deviation_visitation_positive: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnumerationReport {
    pub candidates: u64,
    pub strict: Vec<CertificateRow>,
    pub borderline: usize,
}

/// Enumerates and certifies every deterministic policy of the configured game.
pub fn cmd_enumerate(config: &ExperimentConfig, out_dir: &Path) -> Result<EnumerationReport, String> {
    let game_config = default_game(config, GameConfig::coordination_default());
    let game = game_config.resolve()?;
    let result = enumerate_strict_nes(&game).map_err(|e| e.to_string())?;
    let mut rows = Vec::with_capacity(result.strict.len());
    for (index, cert) in result.strict.iter().enumerate() {
        let totals = gradplay::eval::total_reward(&game, &cert.policy).map_err(|e| e.to_string())?;
        rows.push(CertificateRow {
            index,
            actions: cert.actions.clone(),
            policy: cert.policy.to_nested(),
            margins: cert
                .margins
                .iter()
                .map(|t| t.rows().into_iter().map(|r| r.to_vec()).collect())
                .collect(),
            visitation: cert.visitation.to_vec(),
            delta_star: cert.delta_star,
            attraction_radius: cert.attraction_radius,
            total_rewards: totals,
            deviation_visitation_positive: cert.deviation_visitation_positive,
        });
    }
    let report = EnumerationReport {
        candidates: result.candidates,
        strict: rows,
        borderline: result.borderline.len(),
    };
    std::fs::create_dir_all(out_dir)
        .map_err(|e| format!("cannot create {}: {e}", out_dir.display()))?;
    output::write_json(&out_dir.join("certificates.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckSuiteReport {
    pub seed: u64,
    pub trials: usize,
    pub reports: Vec<CheckReport>,
    pub all_pass: bool,
}

/// Runs the randomized identity and bound checks.
pub fn cmd_check(config: &ExperimentConfig, out_dir: &Path) -> Result<CheckSuiteReport, String> {
    let seed = config.seed.unwrap_or(0);
    let trials = config.trials.unwrap_or(500);
    let reports = vec![
        check_performance_difference(trials, derive_seed(seed, 1)).map_err(|e| e.to_string())?,
        check_gradient_domination(trials, derive_seed(seed, 2)).map_err(|e| e.to_string())?,
        check_smoothness(trials, derive_seed(seed, 3)).map_err(|e| e.to_string())?,
        check_global_convergence_bound(&GlobalBoundConfig::default(), derive_seed(seed, 4))
            .map_err(|e| e.to_string())?,
    ];
    let all_pass = reports.iter().all(|r| r.pass);
    std::fs::create_dir_all(out_dir)
        .map_err(|e| format!("cannot create {}: {e}", out_dir.display()))?;
    for report in &reports {
        if !report.pass {
            if let Some(witness) = &report.worst {
                output::write_json(
                    &out_dir.join(format!("witness_{}.json", report.name)),
                    witness,
                )?;
            }
        }
    }
    let suite = CheckSuiteReport {
        seed,
        trials,
        reports,
        all_pass,
    };
    output::write_json(&out_dir.join("check_reports.json"), &suite)?;
    Ok(suite)
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub stationarity_tol: f64,
    pub gap_tol: f64,
    pub max_improvement: f64,
    pub stationary: bool,
    pub per_agent_gaps: Vec<f64>,
    pub ne_gap: f64,
    pub is_equilibrium: bool,
    pub pass: bool,
}

/// Stationarity and equilibrium-gap verdict for a policy file. When an
/// output directory is given, the full evaluation is written next to the
/// verdict.
pub fn cmd_verify_policy(
    config: &ExperimentConfig,
    policy_path: &Path,
    gap_tol: f64,
    out_dir: Option<&Path>,
) -> Result<VerifyReport, String> {
    let game_config = default_game(config, GameConfig::coordination_default());
    let game = game_config.resolve()?;
    let policy = output::read_policy_file(policy_path)?;
    if !policy.matches(&game) {
        return Err(format!(
            "policy {} does not match the configured game",
            policy_path.display()
        ));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
        let bundle = gradplay::EvalBundle::new(&game, &policy).map_err(|e| e.to_string())?;
        output::write_json(&dir.join("evaluation.json"), &bundle.to_report())?;
    }
    let stationarity_tol = 1e-8;
    let stationarity =
        stationarity_test(&game, &policy, stationarity_tol).map_err(|e| e.to_string())?;
    let gap = ne_gap(&game, &policy).map_err(|e| e.to_string())?;
    let max_improvement = stationarity
        .per_agent
        .iter()
        .map(|a| a.max_improvement)
        .fold(f64::NEG_INFINITY, f64::max);
    let is_equilibrium = gap.max <= gap_tol;
    Ok(VerifyReport {
        stationarity_tol,
        gap_tol,
        max_improvement,
        stationary: stationarity.stationary,
        per_agent_gaps: gap.per_agent,
        ne_gap: gap.max,
        is_equilibrium,
        pass: stationarity.stationary && is_equilibrium,
    })
}

/// Dense spec of the configured game, for reports.
pub fn game_spec_of(config: &ExperimentConfig, fallback: GameConfig) -> Result<GameSpec, String> {
    let game = default_game(config, fallback).resolve()?;
    Ok(GameSpec::from_game(&game))
}
