//! Reaction terms `f` on `[0, 1]` together with their Hölder data.
//!
//! Every admissible `f` vanishes at both endpoints and obeys the growth bound
//!
//! ```text
//! |f(u)| <= k_tilde * (u (1 - u))^gamma,   u in [0, 1].
//! ```
//!
//! The bound is what makes `f / sqrt(u (1 - u))` square integrable against the
//! interface, so every spec carries `(gamma, k_tilde)` and can certify itself
//! with [`NonlinearitySpec::verify_bound`].
//!
//! An optional drift mask switches `f` off on a closed interval of absolute
//! positions. The cut-off equation used by truncated Girsanov weights is the
//! masked drift on `[-10 b, 10 b]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values this far outside `[0, 1]` are clamped instead of rejected.
pub const DOMAIN_TOLERANCE: f64 = 1e-9;

/// Slack used by [`NonlinearitySpec::verify_bound`] when comparing `|f|` to the bound.
const BOUND_SLACK: f64 = 1e-12;

/// The functional form of `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NonlinearityKind {
    /// `f = 0`, the voter model.
    Zero,
    /// `f(u) = u (1 - u)`.
    FisherKpp,
    /// `f(u) = u^m (1 - u)` with `m` in `(0, 1]`.
    Power { m: f64 },
    /// Piecewise linear through sorted knots `(u, f(u))` including `(0, 0)` and `(1, 0)`.
    Tabulated { knots: Vec<(f64, f64)> },
}

/// A validated reaction term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct NonlinearitySpec {
    kind: NonlinearityKind,
    gamma: f64,
    k_tilde: f64,
    drift_mask: Option<(f64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct RawSpec {
    #[serde(flatten)]
    kind: NonlinearityKind,
    gamma: f64,
    k_tilde: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    drift_mask: Option<(f64, f64)>,
}

impl TryFrom<RawSpec> for NonlinearitySpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        let spec = NonlinearitySpec::new(raw.kind, raw.gamma, raw.k_tilde)?;
        match raw.drift_mask {
            Some((a, b)) => spec.with_drift_mask(a, b),
            None => Ok(spec),
        }
    }
}

impl From<NonlinearitySpec> for RawSpec {
    fn from(spec: NonlinearitySpec) -> Self {
        RawSpec {
            kind: spec.kind,
            gamma: spec.gamma,
            k_tilde: spec.k_tilde,
            drift_mask: spec.drift_mask,
        }
    }
}

/// Outcome of [`NonlinearitySpec::verify_bound`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub holds: bool,
    pub worst_ratio: f64,
    pub worst_u: f64,
}

impl NonlinearitySpec {
    /// Builds a spec after checking the parameters of `kind`.
    ///
    /// `gamma` must lie in `(0, 1]`. Values at or below one half are accepted
    /// for simulation; [`Self::has_strong_holder_bound`] reports whether the
    /// stricter `gamma > 1/2` regime applies.
    pub fn new(kind: NonlinearityKind, gamma: f64, k_tilde: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        if !(k_tilde > 0.0 && k_tilde.is_finite()) {
            return Err(Error::Config(format!("k_tilde must be positive, got {k_tilde}")));
        }
        match &kind {
            NonlinearityKind::Power { m } => {
                if !(*m > 0.0 && *m <= 1.0) {
                    return Err(Error::Config(format!("power exponent m must lie in (0, 1], got {m}")));
                }
            }
            NonlinearityKind::Tabulated { knots } => validate_knots(knots)?,
            NonlinearityKind::Zero | NonlinearityKind::FisherKpp => {}
        }
        Ok(Self { kind, gamma, k_tilde, drift_mask: None })
    }

    pub fn zero() -> Self {
        Self::new(NonlinearityKind::Zero, 1.0, 1.0).expect("valid built-in")
    }

    pub fn fisher_kpp() -> Self {
        Self::new(NonlinearityKind::FisherKpp, 1.0, 1.0).expect("valid built-in")
    }

    /// `u^m (1 - u)`, certified with `gamma = m`, `k_tilde = 1`.
    pub fn power(m: f64) -> Result<Self> {
        Self::new(NonlinearityKind::Power { m }, m, 1.0)
    }

    pub fn tabulated(knots: Vec<(f64, f64)>, gamma: f64, k_tilde: f64) -> Result<Self> {
        Self::new(NonlinearityKind::Tabulated { knots }, gamma, k_tilde)
    }

    /// A negative tent with minimum `-1/4` at `u = 1/2`. Its stationary
    /// average is negative, so fronts driven by it recede.
    pub fn negative_tent() -> Self {
        Self::tabulated(vec![(0.0, 0.0), (0.5, -0.25), (1.0, 0.0)], 1.0, 1.0)
            .expect("valid built-in")
    }

    /// Returns a copy with `f` forced to zero on the closed interval `[a, b]`.
    pub fn with_drift_mask(mut self, a: f64, b: f64) -> Result<Self> {
        if !(a <= b) || a.is_nan() || b.is_nan() {
            return Err(Error::Config(format!("drift mask needs a <= b, got ({a}, {b})")));
        }
        self.drift_mask = Some((a, b));
        Ok(self)
    }

    pub fn without_drift_mask(mut self) -> Self {
        self.drift_mask = None;
        self
    }

    pub fn kind(&self) -> &NonlinearityKind {
        &self.kind
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn k_tilde(&self) -> f64 {
        self.k_tilde
    }

    pub fn drift_mask(&self) -> Option<(f64, f64)> {
        self.drift_mask
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, NonlinearityKind::Zero)
    }

    pub fn has_strong_holder_bound(&self) -> bool {
        self.gamma > 0.5
    }

    /// `f(u)` at position `x`, clamping `u` within [`DOMAIN_TOLERANCE`] of `[0, 1]`.
    pub fn eval(&self, u: f64, x: f64) -> Result<f64> {
        if !(u >= -DOMAIN_TOLERANCE && u <= 1.0 + DOMAIN_TOLERANCE) {
            return Err(Error::Domain(format!("f evaluated at u = {u}, outside [0, 1]")));
        }
        if self.masked(x) {
            return Ok(0.0);
        }
        Ok(self.value(u.clamp(0.0, 1.0)))
    }

    /// True when `x` lies in the drift mask.
    #[inline]
    pub fn masked(&self, x: f64) -> bool {
        matches!(self.drift_mask, Some((a, b)) if x >= a && x <= b)
    }

    /// `f(u)` for `u` already in `[0, 1]`, ignoring the mask.
    #[inline]
    pub fn value(&self, u: f64) -> f64 {
        match &self.kind {
            NonlinearityKind::Zero => 0.0,
            NonlinearityKind::FisherKpp => u * (1.0 - u),
            NonlinearityKind::Power { m } => {
                if u <= 0.0 {
                    0.0
                } else {
                    u.powf(*m) * (1.0 - u)
                }
            }
            NonlinearityKind::Tabulated { knots } => interpolate(knots, u),
        }
    }

    /// Checks the growth bound on the grid `u_i = i / (n_grid - 1)`.
    ///
    /// `worst_ratio` is the largest `|f| / (u (1 - u))^gamma` over interior points;
    /// among equal ratios `worst_u` is where `|f|` exceeds the bound the most.
    pub fn verify_bound(&self, n_grid: usize) -> Result<BoundReport> {
        if n_grid < 2 {
            return Err(Error::Config("verify_bound needs n_grid >= 2".into()));
        }
        let mut holds = true;
        let mut worst_ratio = 0.0_f64;
        let mut worst_u = 0.0;
        let mut worst_excess = f64::NEG_INFINITY;
        for i in 0..n_grid {
            let u = i as f64 / (n_grid - 1) as f64;
            let f = self.value(u).abs();
            let g = (u * (1.0 - u)).abs().powf(self.gamma);
            let bound = self.k_tilde * g;
            if f > bound * (1.0 + BOUND_SLACK) {
                holds = false;
            }
            if i > 0 && i < n_grid - 1 && g > 0.0 {
                let ratio = f / g;
                let excess = f - bound;
                let tie = (ratio - worst_ratio).abs() <= BOUND_SLACK * worst_ratio;
                if (ratio > worst_ratio && !tie) || (tie && excess > worst_excess) {
                    worst_ratio = worst_ratio.max(ratio);
                    worst_u = u;
                    worst_excess = excess;
                }
            }
        }
        Ok(BoundReport { holds, worst_ratio, worst_u })
    }

    /// Smallest `K` with `|f(u)| <= K sqrt(u (1 - u))` on a grid of `n_grid` points.
    pub fn sqrt_bound_constant(&self, n_grid: usize) -> f64 {
        let n = n_grid.max(3);
        (1..n - 1)
            .map(|i| {
                let u = i as f64 / (n - 1) as f64;
                self.value(u).abs() / (u * (1.0 - u)).sqrt()
            })
            .fold(0.0, f64::max)
    }
}

fn validate_knots(knots: &[(f64, f64)]) -> Result<()> {
    if knots.len() < 2 {
        return Err(Error::Config("tabulated f needs at least the knots (0,0) and (1,0)".into()));
    }
    if knots[0] != (0.0, 0.0) || knots[knots.len() - 1] != (1.0, 0.0) {
        return Err(Error::Config("tabulated f must start at (0,0) and end at (1,0)".into()));
    }
    for w in knots.windows(2) {
        if !(w[1].0 > w[0].0) {
            return Err(Error::Config("tabulated knots must be strictly increasing in u".into()));
        }
    }
    if knots.iter().any(|&(_, f)| !f.is_finite()) {
        return Err(Error::Config("tabulated knot values must be finite".into()));
    }
    Ok(())
}

fn interpolate(knots: &[(f64, f64)], u: f64) -> f64 {
    let j = knots.partition_point(|&(k, _)| k <= u);
    if j == 0 {
        return knots[0].1;
    }
    if j >= knots.len() {
        return knots[knots.len() - 1].1;
    }
    let (u0, f0) = knots[j - 1];
    let (u1, f1) = knots[j];
    if u == u0 {
        return f0;
    }
    f0 + (f1 - f0) * (u - u0) / (u1 - u0)
}
