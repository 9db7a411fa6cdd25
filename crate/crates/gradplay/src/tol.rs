//! Every numerical tolerance used by the crate, in one place.
//!
//! Identity and inequality tolerances sit three orders of magnitude above the
//! linear-solve residuals so randomized checks do not flake on accumulated
//! rounding.

/// Transition rows must sum to 1 within this.
pub const TRANSITION_ROW_SUM: f64 = 1e-12;

/// Initial distributions must sum to 1 within this.
pub const DISTRIBUTION_SUM: f64 = 1e-12;

/// Policy rows must sum to 1 within this.
pub const POLICY_ROW_SUM: f64 = 1e-9;

/// A row counts as deterministic when one entry is at least `1 - DETERMINISTIC_ENTRY`.
pub const DETERMINISTIC_ENTRY: f64 = 1e-9;

/// Max allowed infinity-norm residual of any Bellman linear solve.
pub const SOLVE_RESIDUAL: f64 = 1e-9;

/// Visitation distributions must sum to 1 within this.
pub const VISITATION_SUM: f64 = 1e-9;

/// Entries of a visitation distribution below `-VISITATION_NEG` are a solve failure;
/// anything in `[-VISITATION_NEG, 0)` is clamped to zero.
pub const VISITATION_NEG: f64 = 1e-12;

/// Guard for visitation ratios: states with `d(s)` below this are skipped, not divided by.
pub const VISITATION_GUARD: f64 = 1e-12;

/// |sum_{a_i} pi(a_i|s) * avg_adv(s, a_i)| must stay below this.
pub const ADVANTAGE_ZERO_MEAN: f64 = 1e-8;

/// |V(s) - sum_a pi(a|s) Q(s,a)| must stay below this.
pub const VALUE_Q_CONSISTENCY: f64 = 1e-8;

/// Absolute tolerance for exact-identity checks (performance difference, occupancy, ...).
pub const IDENTITY: f64 = 1e-7;

/// Additive slack for one-sided inequality checks (smoothness ratio, domination).
pub const INEQUALITY_SLACK: f64 = 1e-6;

/// Simplex projection output must sum to 1 within this.
pub const PROJECTION_SUM: f64 = 1e-12;

/// Margins at or below `-STRICT_MARGIN` count as strictly negative for certification.
pub const STRICT_MARGIN: f64 = 1e-10;

/// The chosen action's averaged advantage at a candidate equilibrium must be zero within this.
pub const MARGIN_ZERO: f64 = 1e-9;

/// Numerical-zero cutoff separating borderline candidates from outright rejections.
pub const MARGIN_POSITIVE: f64 = 1e-12;

/// Central finite-difference step along simplex-tangent directions.
pub const FINITE_DIFF_STEP: f64 = 1e-6;

/// Relative tolerance for gradient vs. finite-difference agreement.
pub const FINITE_DIFF_REL: f64 = 1e-4;

/// Minimum potential gain accepted by the saddle-escape search.
pub const SADDLE_GAIN: f64 = 1e-10;

/// Minimum entry mass for a policy to count as fully mixed.
pub const FULLY_MIXED_MIN: f64 = 1e-6;

/// Additive slack on the per-step contraction inequality in the local convergence probe.
pub const PROBE_SLACK: f64 = 1e-9;

/// D-metric value below which an iterate counts as having reached the reference exactly.
pub const PROBE_CONVERGED: f64 = 1e-9;

/// Potential-identity violation below which a candidate potential verifies.
pub const POTENTIAL_VERIFY: f64 = 1e-7;
