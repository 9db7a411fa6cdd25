//! Exact Euclidean projection onto probability simplices and the gradient
//! mapping built on it.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::eval::EvalBundle;
use crate::game::Game;
use crate::policy::{require_match, Policy};

/// Euclidean projection of `y` onto the probability simplex.
///
/// Sort-based: with entries sorted descending, take
/// `rho = max{ j : y_(j) + (1 - sum_{i<=j} y_(i)) / j > 0 }`,
/// `lambda = (1 - sum_{i<=rho} y_(i)) / rho`, and output
/// `max(y_i + lambda, 0)`. Ties are broken by index, which only fixes
/// internal determinism; the output is tie-independent.
pub fn project_simplex(y: &[f64]) -> Result<Vec<f64>> {
    if y.is_empty() {
        return Err(Error::Domain("cannot project an empty vector".into()));
    }
    if let Some(v) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite entry {v} in projection input")));
    }
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[b].partial_cmp(&y[a]).unwrap().then(a.cmp(&b)));

    let mut prefix = 0.0;
    let mut rho = 0;
    let mut lambda = 0.0;
    for (k, &idx) in order.iter().enumerate() {
        prefix += y[idx];
        let candidate = (1.0 - prefix) / (k + 1) as f64;
        if y[idx] + candidate > 0.0 {
            rho = k + 1;
            lambda = candidate;
        }
    }
    debug_assert!(rho >= 1);
    // the upper clamp only strips floating-point overshoot; exact arithmetic
    // cannot produce entries above 1
    Ok(y.iter().map(|&v| (v + lambda).clamp(0.0, 1.0)).collect())
}

/// Row-wise projection of raw per-agent tables onto the product of per-state
/// simplices.
pub fn project_policy(raw: &[Array2<f64>]) -> Result<Policy> {
    let mut rows = Vec::with_capacity(raw.len());
    for table in raw {
        let mut out = Array2::zeros(table.raw_dim());
        for (s, row) in table.rows().into_iter().enumerate() {
            let projected = project_simplex(row.as_slice().expect("contiguous row"))?;
            for (a, v) in projected.into_iter().enumerate() {
                out[[s, a]] = v;
            }
        }
        rows.push(out);
    }
    Policy::new(rows)
}

/// The gradient mapping `G = (Proj(theta + eta * grad) - theta) / eta` and its
/// Euclidean norm. Zero norm certifies first-order stationarity for the
/// ascent direction used.
#[derive(Debug, Clone)]
pub struct GradientMapping {
    pub table: Vec<Array2<f64>>,
    pub norm: f64,
}

pub fn gradient_mapping(game: &Game, policy: &Policy, eta: f64) -> Result<GradientMapping> {
    require_match(game, policy)?;
    if !eta.is_finite() || eta <= 0.0 {
        return Err(Error::Domain(format!("eta must be positive, got {eta}")));
    }
    let bundle = EvalBundle::new(game, policy)?;
    gradient_mapping_from(policy, &bundle.gradients, eta)
}

/// Same as [`gradient_mapping`] but reusing already-computed gradients.
pub fn gradient_mapping_from(
    policy: &Policy,
    gradients: &[Array2<f64>],
    eta: f64,
) -> Result<GradientMapping> {
    let raw: Vec<Array2<f64>> = policy
        .tables()
        .iter()
        .zip(gradients)
        .map(|(theta, g)| theta + &(g * eta))
        .collect();
    let projected = project_policy(&raw)?;
    let mut norm_sq = 0.0;
    let table: Vec<Array2<f64>> = projected
        .tables()
        .iter()
        .zip(policy.tables())
        .map(|(next, theta)| {
            let diff = (next - theta) / eta;
            norm_sq += diff.iter().map(|v| v * v).sum::<f64>();
            diff
        })
        .collect();
    Ok(GradientMapping {
        table,
        norm: norm_sq.sqrt(),
    })
}
