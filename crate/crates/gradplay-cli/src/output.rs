//! File formats: trajectory CSV, ratio-sweep CSV, JSON reports, and the
//! policy-file loader. Floats are written in shortest round-trip form, so
//! rerunning a command with the same inputs reproduces files byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use gradplay::dynamics::Trajectory;
use gradplay::policy::Policy;
use gradplay::Game;

use crate::experiments::RatioSweepReport;

fn write_atomic(path: &Path, contents: &str) -> Result<(), String> {
    std::fs::write(path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn push_float(line: &mut String, value: f64) {
    write!(line, "{value}").expect("writing to a string cannot fail");
}

/// Columns: `iter, J_1..J_n, phi, grad_map_norm, ne_gap, d_metric`.
/// Metrics that were not recorded at a step are left empty.
pub fn write_trajectory_csv(path: &Path, game: &Game, trajectory: &Trajectory) -> Result<(), String> {
    let n = game.num_agents();
    let mut text = String::new();
    text.push_str("iter");
    for i in 1..=n {
        write!(text, ",J_{i}").unwrap();
    }
    text.push_str(",phi,grad_map_norm,ne_gap,d_metric\n");
    for step in &trajectory.steps {
        write!(text, "{}", step.iter).unwrap();
        for value in &step.total_rewards {
            text.push(',');
            push_float(&mut text, *value);
        }
        text.push(',');
        if let Some(phi) = step.phi {
            push_float(&mut text, phi);
        }
        text.push(',');
        push_float(&mut text, step.grad_map_norm);
        text.push(',');
        if let Some(gap) = step.ne_gap {
            push_float(&mut text, gap);
        }
        text.push(',');
        if let Some(d) = step.d_metric {
            push_float(&mut text, d);
        }
        text.push('\n');
    }
    write_atomic(path, &text)
}

/// One row per epsilon: the margin constant and the batch-ratio statistics.
pub fn write_ratio_csv(path: &Path, report: &RatioSweepReport) -> Result<(), String> {
    let mut text = String::from("epsilon,delta_star,ratio_mean,ratio_std,batches,trials_per_batch,unconverged\n");
    for point in &report.points {
        push_float(&mut text, point.epsilon);
        text.push(',');
        push_float(&mut text, point.delta_star);
        text.push(',');
        push_float(&mut text, point.mean);
        text.push(',');
        push_float(&mut text, point.std);
        writeln!(
            text,
            ",{},{},{}",
            report.batches, point.trials_per_batch, point.unconverged
        )
        .unwrap();
    }
    write_atomic(path, &text)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), String> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| format!("cannot serialize {}: {e}", path.display()))?;
    text.push('\n');
    write_atomic(path, &text)
}

/// Policy file: JSON nested array `[agent][state][action]`.
pub fn read_policy_file(path: &Path) -> Result<Policy, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let nested: Vec<Vec<Vec<f64>>> = serde_json::from_str(&text)
        .map_err(|e| format!("cannot parse {}: {e}", path.display()))?;
    Policy::from_nested(&nested).map_err(|e| e.to_string())
}
