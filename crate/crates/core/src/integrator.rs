//! Time stepping of
//!
//! ```text
//! d_t u = 1/2 d_x^2 u + kappa f(u) + s sqrt(u (1 - u)) W'(t, x)
//! ```
//!
//! with `(kappa, s) = (1, sigma)` in the original frame and `(epsilon, 1)` in the
//! rescaled frame, together with the trajectory functionals
//!
//! ```text
//! M_t   = int int sqrt(u(1-u)) dW          A_t   = int int u(1-u) dx ds
//! M^f_t = int int f / sqrt(u(1-u)) dW      A^f_t = int int f^2 / (u(1-u)) dx ds
//! C^f_t = int int f dx ds                  Z_t   = theta M^f_t - theta^2 A^f_t / 2
//! ```
//!
//! where `theta = kappa / s` and the integrands `f / sqrt(u(1-u))` vanish where
//! `u(1-u) < 1e-14`. `C^f` is the cross variation of `M` and `M^f`.
//!
//! # Schemes
//!
//! The default [`NoiseScheme::WrightFisher`] splits each step into three parts:
//!
//! 1. explicit diffusion `p = u_i + c (u_{i-1} - 2 u_i + u_{i+1})`, `c = dt / (2 dx^2)`;
//! 2. drift `p <- clamp(p + dt kappa f(p))`;
//! 3. local resampling `u_i' = Bin(N, p) / N` with `E[1/N] = tau = s^2 dt / dx`.
//!
//! Step 3 has conditional mean `p` and variance `tau p (1 - p)`, the same first
//! two moments as the Gaussian increment `s sqrt(p(1-p)) xi sqrt(dt/dx)`, but it
//! keeps values on `[0, 1]` with no clamping, so the absorbing states stay exact
//! and the interface stays compact. When `1/tau` is not an integer, `N` mixes
//! `floor(1/tau)` and `ceil(1/tau)`. The noise functionals use the realized
//! increment `u_i' - p`, so `M` and `M^f` are driven by exactly the noise that
//! moved the field, and all integrands are evaluated at `p`.
//!
//! [`NoiseScheme::GaussianClamp`] is plain Euler-Maruyama with clamping. It is
//! kept for comparison: clamping adds mass near the absorbing states, the
//! interface spreads by about one cell per step and its mass drifts upward.
//!
//! Binomial draws use inversion from a single uniform; above a mean of
//! [`BINOMIAL_NORMAL_SWITCH`] they switch to a continuity-corrected normal
//! approximation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FrontState, Side};
use crate::noise::{inverse_normal_cdf, NoiseStream, StreamPosition};
use crate::nonlinearity::NonlinearitySpec;

/// Integrands `f / sqrt(u (1 - u))` vanish below this value of `u (1 - u)`.
pub const ENDPOINT_CUTOFF: f64 = 1e-14;

/// Mean count above which binomial draws use the normal approximation.
pub const BINOMIAL_NORMAL_SWITCH: f64 = 200.0;

/// Heat kernel `G_t(x) = exp(-x^2 / 2t) / sqrt(2 pi t)`.
pub fn heat_kernel(t: f64, x: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("heat kernel needs t > 0, got {t}")));
    }
    Ok((-x * x / (2.0 * t)).exp() / (2.0 * std::f64::consts::PI * t).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "frame", rename_all = "snake_case")]
pub enum Frame {
    Original { sigma: f64 },
    Rescaled { epsilon: f64 },
}

impl Frame {
    /// Prefactor `kappa` of the drift.
    pub fn drift_scale(&self) -> f64 {
        match *self {
            Frame::Original { .. } => 1.0,
            Frame::Rescaled { epsilon } => epsilon,
        }
    }

    /// Prefactor `s` of the noise.
    pub fn noise_scale(&self) -> f64 {
        match *self {
            Frame::Original { sigma } => sigma,
            Frame::Rescaled { .. } => 1.0,
        }
    }

    /// `theta = kappa / s`, the multiplier of `M^f` in the Girsanov exponent.
    /// `None` without noise.
    pub fn girsanov_scale(&self) -> Option<f64> {
        let s = self.noise_scale();
        (s > 0.0).then(|| self.drift_scale() / s)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Frame::Original { .. } => "original",
            Frame::Rescaled { .. } => "rescaled",
        }
    }

    /// Noise strength of the original equation this frame represents.
    pub fn sigma(&self) -> f64 {
        match *self {
            Frame::Original { sigma } => sigma,
            Frame::Rescaled { epsilon } => epsilon.powf(-0.25),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Frame::Original { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(Error::Config(format!("sigma must be finite and >= 0, got {sigma}")))
            }
            Frame::Rescaled { epsilon } if !(epsilon >= 0.0 && epsilon.is_finite()) => {
                Err(Error::Config(format!("epsilon must be finite and >= 0, got {epsilon}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScheme {
    #[default]
    WrightFisher,
    GaussianClamp,
}

/// What the moving window keeps centered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    #[default]
    Xi,
    Right,
}

fn default_eps_front() -> f64 {
    crate::field::DEFAULT_EPS_FRONT
}
fn default_window() -> f64 {
    400.0
}
fn default_guard() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    #[serde(flatten)]
    pub frame: Frame,
    pub dt: f64,
    pub dx: f64,
    pub t_max: f64,
    #[serde(default = "default_eps_front")]
    pub eps_front: f64,
    /// Window width in space units.
    #[serde(default = "default_window")]
    pub window: f64,
    /// Width of each guard band as a fraction of the window.
    #[serde(default = "default_guard")]
    pub guard: f64,
    /// Steps between log records; 0 selects a cadence of 0.1 time units.
    #[serde(default)]
    pub log_every: usize,
    #[serde(default)]
    pub scheme: NoiseScheme,
    #[serde(default)]
    pub anchor: Anchor,
    /// Also accumulate `M^f`, `A^f`, `Z` restricted to the lattice cells with `|x| <= 10 b`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff_b: Option<f64>,
    /// Exponents `eta` for which `int int (u(1-u))^eta` is accumulated.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eta_channels: Vec<f64>,
    /// Also accumulate the exact log-likelihood ratio of the discrete scheme.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub exact_likelihood: bool,
}

impl SimParams {
    pub fn new(frame: Frame, dx: f64, dt: f64, t_max: f64) -> Result<Self> {
        let p = Self {
            frame,
            dt,
            dx,
            t_max,
            eps_front: default_eps_front(),
            window: default_window(),
            guard: default_guard(),
            log_every: 0,
            scheme: NoiseScheme::default(),
            anchor: Anchor::default(),
            cutoff_b: None,
            eta_channels: Vec::new(),
            exact_likelihood: false,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.frame.validate()?;
        if !(self.dx > 0.0 && self.dx.is_finite() && self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dx and dt must be positive, got ({}, {})", self.dx, self.dt)));
        }
        if self.dt > self.dx * self.dx / 2.0 {
            return Err(Error::Config(format!(
                "dt = {} violates the stability bound dx^2/2 = {}",
                self.dt,
                self.dx * self.dx / 2.0
            )));
        }
        if self.scheme == NoiseScheme::WrightFisher && self.tau() > 1.0 {
            return Err(Error::Config(format!(
                "per-step noise variance factor s^2 dt/dx = {} exceeds 1; reduce dt",
                self.tau()
            )));
        }
        if !(self.t_max >= 0.0 && self.t_max.is_finite()) {
            return Err(Error::Config(format!("t_max must be finite and >= 0, got {}", self.t_max)));
        }
        if !(self.eps_front >= 0.0 && self.eps_front < 0.5) {
            return Err(Error::Config(format!("eps_front must lie in [0, 1/2), got {}", self.eps_front)));
        }
        if !(self.guard >= 0.0 && self.guard < 0.45) {
            return Err(Error::Config(format!("guard fraction must lie in [0, 0.45), got {}", self.guard)));
        }
        if !(self.window >= crate::field::MIN_WINDOW_CELLS as f64 * self.dx) {
            return Err(Error::Config(format!("window {} is narrower than 100 cells", self.window)));
        }
        if let Some(b) = self.cutoff_b {
            if !(b > 0.0) {
                return Err(Error::Config(format!("cutoff b must be positive, got {b}")));
            }
        }
        if let Some(e) = self.eta_channels.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
            return Err(Error::Domain(format!("eta must lie in (0, 1], got {e}")));
        }
        Ok(())
    }

    /// `s^2 dt / dx`, the variance factor of one resampling step.
    pub fn tau(&self) -> f64 {
        let s = self.frame.noise_scale();
        s * s * self.dt / self.dx
    }

    pub fn log_every_steps(&self) -> usize {
        if self.log_every > 0 {
            self.log_every
        } else {
            ((0.1 / self.dt).round() as usize).max(1)
        }
    }

    pub fn n_cells(&self) -> usize {
        (self.window / self.dx).round() as usize
    }

    pub fn guard_cells(&self) -> usize {
        (self.guard * self.n_cells() as f64).round() as usize
    }

    /// Number of steps needed to advance from `t0` to `t_end`.
    pub fn steps_between(&self, t0: f64, t_end: f64) -> u64 {
        ((t_end - t0) / self.dt).round().max(0.0) as u64
    }
}

/// Drift used by the dynamics and the `f` seen by the functionals.
///
/// In a voter-frame run `drift` is zero and `observed` carries the `f` whose
/// functionals (and Girsanov weight) are wanted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub drift: NonlinearitySpec,
    pub observed: NonlinearitySpec,
}

impl Model {
    pub fn drifted(f: NonlinearitySpec) -> Self {
        Self { drift: f.clone(), observed: f }
    }

    pub fn voter(f: NonlinearitySpec) -> Self {
        Self { drift: NonlinearitySpec::zero(), observed: f }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffAccumulators {
    pub b: f64,
    pub mf_t: f64,
    pub af_t: f64,
    pub z_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaChannel {
    pub eta: f64,
    pub integral: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalAccumulators {
    pub t: f64,
    pub m_t: f64,
    pub a_t: f64,
    pub mf_t: f64,
    pub af_t: f64,
    pub cf_t: f64,
    pub z_t: f64,
    /// `theta` used for `z_t`; `None` when the run has no noise.
    pub theta: Option<f64>,
    /// Exact log-likelihood ratio of the discrete scheme, when tracked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<CutoffAccumulators>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eta: Vec<EtaChannel>,
}

impl FunctionalAccumulators {
    pub fn new(params: &SimParams, t0: f64) -> Self {
        Self {
            t: t0,
            m_t: 0.0,
            a_t: 0.0,
            mf_t: 0.0,
            af_t: 0.0,
            cf_t: 0.0,
            z_t: 0.0,
            theta: params.frame.girsanov_scale(),
            log_lr: params.exact_likelihood.then_some(0.0),
            cutoff: params.cutoff_b.map(|b| CutoffAccumulators { b, mf_t: 0.0, af_t: 0.0, z_t: 0.0 }),
            eta: params.eta_channels.iter().map(|&eta| EtaChannel { eta, integral: 0.0 }).collect(),
        }
    }

    /// Zeroes every functional, keeping the configuration and setting `t`.
    pub fn reset(&mut self, t: f64) {
        self.t = t;
        self.m_t = 0.0;
        self.a_t = 0.0;
        self.mf_t = 0.0;
        self.af_t = 0.0;
        self.cf_t = 0.0;
        self.z_t = 0.0;
        if let Some(l) = self.log_lr.as_mut() {
            *l = 0.0;
        }
        if let Some(c) = self.cutoff.as_mut() {
            c.mf_t = 0.0;
            c.af_t = 0.0;
            c.z_t = 0.0;
        }
        for ch in &mut self.eta {
            ch.integral = 0.0;
        }
    }

    pub fn eta_integral(&self, eta: f64) -> Option<f64> {
        self.eta.iter().find(|c| c.eta == eta).map(|c| c.integral)
    }

    fn refresh_z(&mut self) {
        if let Some(th) = self.theta {
            self.z_t = th * self.mf_t - 0.5 * th * th * self.af_t;
            if let Some(c) = self.cutoff.as_mut() {
                c.z_t = th * c.mf_t - 0.5 * th * th * c.af_t;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub t: f64,
    pub r: f64,
    pub l: f64,
    pub xi: f64,
    pub mass: f64,
    pub m_t: f64,
    pub a_t: f64,
    pub mf_t: f64,
    pub af_t: f64,
    pub z_t: f64,
}

impl ObservationRecord {
    pub fn capture(state: &FrontState, acc: &FunctionalAccumulators, eps_front: f64) -> Result<Self> {
        let e = state.front_edges(eps_front)?;
        Ok(Self {
            t: state.t(),
            r: e.right,
            l: e.left,
            xi: state.xi()?,
            mass: state.mass_w(),
            m_t: acc.m_t,
            a_t: acc.a_t,
            mf_t: acc.mf_t,
            af_t: acc.af_t,
            z_t: acc.z_t,
        })
    }
}

pub const LOG_HEADER: &str = "t,R,L,xi,mass,m_t,a_t,mf_t,af_t,z_t";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObservationLog {
    /// Noise prefactor `s` of the run, needed to turn `M_t` into displacement.
    pub noise_scale: f64,
    pub records: Vec<ObservationRecord>,
}

impl ObservationLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 160 + 64);
        out.push_str(LOG_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.t, r.r, r.l, r.xi, r.mass, r.m_t, r.a_t, r.mf_t, r.af_t, r.z_t
            ));
        }
        out
    }

    pub fn from_csv(text: &str, noise_scale: f64) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(LOG_HEADER) {
            return Err(Error::Config(format!("log must start with the header {LOG_HEADER}")));
        }
        let mut records = Vec::new();
        for (row, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let v: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("log row {row}: {e}")))?;
            if v.len() != 10 {
                return Err(Error::Config(format!("log row {row} has {} fields", v.len())));
            }
            records.push(ObservationRecord {
                t: v[0],
                r: v[1],
                l: v[2],
                xi: v[3],
                mass: v[4],
                m_t: v[5],
                a_t: v[6],
                mf_t: v[7],
                af_t: v[8],
                z_t: v[9],
            });
        }
        Ok(Self { noise_scale, records })
    }
}

/// Everything needed to continue a run bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCheckpoint {
    pub params: SimParams,
    pub model: Model,
    pub state: FrontState,
    pub acc: FunctionalAccumulators,
    pub stream: StreamPosition,
    pub steps_done: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Draws `Bin(n, p)` by inversion of the uniform `u`.
pub fn binomial_inverse(n: u32, p: f64, u: f64) -> u32 {
    if p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    let flip = p > 0.5;
    let q = if flip { 1.0 - p } else { p };
    let k = if n as f64 * q > BINOMIAL_NORMAL_SWITCH {
        let mean = n as f64 * q;
        let sd = (mean * (1.0 - q)).sqrt();
        (mean + sd * inverse_normal_cdf(u)).round().clamp(0.0, n as f64) as u32
    } else {
        let r = q / (1.0 - q);
        let mut pmf = (1.0 - q).powi(n as i32);
        let mut cdf = pmf;
        let mut k = 0u32;
        while cdf < u && k < n {
            pmf *= r * (n - k) as f64 / (k + 1) as f64;
            k += 1;
            cdf += pmf;
        }
        k
    };
    if flip {
        n - k
    } else {
        k
    }
}

/// Law of the resampling size `N` with `E[1/N] = tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSize {
    low: u32,
    p_low: f64,
}

impl SampleSize {
    pub fn new(tau: f64) -> Self {
        let inv = 1.0 / tau;
        let nearest = inv.round();
        if (inv - nearest).abs() <= 1e-9 * inv {
            return Self { low: nearest as u32, p_low: 1.0 };
        }
        let low = inv.floor();
        let p_low = (tau - 1.0 / (low + 1.0)) / (1.0 / low - 1.0 / (low + 1.0));
        Self { low: low as u32, p_low }
    }

    /// Splits one uniform into a size and a fresh uniform.
    #[inline]
    pub fn draw(&self, u: f64) -> (u32, f64) {
        if self.p_low >= 1.0 {
            (self.low, u)
        } else if u < self.p_low {
            (self.low, u / self.p_low)
        } else {
            (self.low + 1, (u - self.p_low) / (1.0 - self.p_low))
        }
    }

    pub fn mean_inverse(&self) -> f64 {
        self.p_low / self.low as f64 + (1.0 - self.p_low) / (self.low + 1) as f64
    }
}

/// One replica: field, functionals, noise stream and schedule.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub state: FrontState,
    pub acc: FunctionalAccumulators,
    pub stream: NoiseStream,
    model: Model,
    params: SimParams,
    sample_size: Option<SampleSize>,
    scratch: Vec<f64>,
    steps_done: u64,
}

#[derive(Default)]
struct StepSums {
    m: f64,
    a: f64,
    mf: f64,
    af: f64,
    cf: f64,
    lr: f64,
    mf_cut: f64,
    af_cut: f64,
}

impl Simulation {
    pub fn new(state: FrontState, model: Model, params: SimParams, stream: NoiseStream) -> Result<Self> {
        params.validate()?;
        if (state.dx() - params.dx).abs() > 1e-12 * params.dx {
            return Err(Error::Config(format!("state dx {} differs from params dx {}", state.dx(), params.dx)));
        }
        if state.len() != params.n_cells() {
            return Err(Error::Config(format!(
                "state has {} cells but the window holds {}",
                state.len(),
                params.n_cells()
            )));
        }
        let acc = FunctionalAccumulators::new(&params, state.t());
        Ok(Self::assemble(state, acc, model, params, stream, 0))
    }

    /// A step state at `r0` sized for `params`.
    pub fn from_step(r0: f64, model: Model, params: SimParams, stream: NoiseStream) -> Result<Self> {
        let state = FrontState::step(r0, params.dx, params.window, 0.0)?;
        Self::new(state, model, params, stream)
    }

    pub fn from_checkpoint(cp: RunCheckpoint) -> Result<Self> {
        cp.params.validate()?;
        Ok(Self::assemble(cp.state, cp.acc, cp.model, cp.params, NoiseStream::at(cp.stream), cp.steps_done))
    }

    fn assemble(
        state: FrontState,
        acc: FunctionalAccumulators,
        model: Model,
        params: SimParams,
        stream: NoiseStream,
        steps_done: u64,
    ) -> Self {
        let sample_size = (params.frame.noise_scale() > 0.0 && params.scheme == NoiseScheme::WrightFisher)
            .then(|| SampleSize::new(params.tau()));
        let scratch = vec![0.0; state.len()];
        Self { state, acc, stream, model, params, sample_size, scratch, steps_done }
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn steps_done(&self) -> u64 {
        self.steps_done
    }

    pub fn checkpoint(&self) -> RunCheckpoint {
        RunCheckpoint {
            params: self.params.clone(),
            model: self.model.clone(),
            state: self.state.clone(),
            acc: self.acc.clone(),
            stream: self.stream.position(),
            steps_done: self.steps_done,
        }
    }

    pub fn observe(&self) -> Result<ObservationRecord> {
        ObservationRecord::capture(&self.state, &self.acc, self.params.eps_front)
    }

    /// Advances one time step, then recenters if an edge reached a guard band.
    pub fn step(&mut self) -> Result<()> {
        let n = self.state.len();
        let g = self.params.guard_cells().max(1);
        let (lo, hi) = self.state.flat_regions();
        let first = lo.saturating_sub(1).max(g);
        let last = hi.min(n - 1 - g);
        if first <= last {
            match self.params.scheme {
                NoiseScheme::WrightFisher => self.kernel_wright_fisher(first, last)?,
                NoiseScheme::GaussianClamp => self.kernel_gaussian(first, last)?,
            }
            let (values, lo_ref, hi_ref) = self.state.raw_parts_mut();
            values[first..=last].copy_from_slice(&self.scratch[first..=last]);
            let new_lo = if lo < first {
                lo
            } else {
                (first..n).find(|&i| values[i] != 1.0).unwrap_or(n)
            };
            let new_hi = if hi > last + 1 {
                hi
            } else {
                (0..=last).rev().find(|&i| values[i] != 0.0).map_or(0, |i| i + 1)
            };
            *lo_ref = new_lo;
            *hi_ref = new_hi.max(new_lo);
        }
        self.steps_done += 1;
        let t = self.state.t() + self.params.dt;
        self.state.set_t(t);
        self.acc.t = t;
        self.acc.refresh_z();
        self.enforce_window()
    }

    fn enforce_window(&mut self) -> Result<()> {
        let n = self.state.len();
        let g = self.params.guard_cells().max(1);
        let (lo, hi) = self.state.flat_regions();
        if (lo > g + 1 && hi + 2 < n - g) || lo == n || hi == 0 {
            return Ok(());
        }
        let eps = self.params.eps_front;
        let inside = |s: &FrontState| -> Result<Option<Side>> {
            let c = s.edge_cells(eps)?;
            Ok(if c.left <= g {
                Some(Side::Left)
            } else if c.right + 1 >= n - g {
                Some(Side::Right)
            } else {
                None
            })
        };
        let with_checkpoint = |sim: &Self, e: Error| match e {
            Error::WindowOverflow { side, t, .. } => {
                Error::WindowOverflow { side, t, checkpoint: Some(Box::new(sim.checkpoint())) }
            }
            other => other,
        };
        match inside(&self.state).map_err(|e| with_checkpoint(self, e))? {
            None => Ok(()),
            Some(_) => {
                let target = match self.params.anchor {
                    Anchor::Xi => self.state.xi(),
                    Anchor::Right => self.state.front_edges(eps).map(|e| e.right),
                }
                .map_err(|e| with_checkpoint(self, e))?;
                self.state.recenter(target, eps).map_err(|e| with_checkpoint(self, e))?;
                match inside(&self.state).map_err(|e| with_checkpoint(self, e))? {
                    None => Ok(()),
                    Some(side) => Err(Error::WindowOverflow {
                        side,
                        t: self.state.t(),
                        checkpoint: Some(Box::new(self.checkpoint())),
                    }),
                }
            }
        }
    }

    fn kernel_wright_fisher(&mut self, first: usize, last: usize) -> Result<()> {
        let p = &self.params;
        let dt = p.dt;
        let dx = p.dx;
        let c = dt / (2.0 * dx * dx);
        let kappa = p.frame.drift_scale();
        let s = p.frame.noise_scale();
        let dtdx = dt * dx;
        let drift = &self.model.drift;
        let observed = &self.model.observed;
        let drift_on = !drift.is_zero() && kappa != 0.0;
        let observed_on = !observed.is_zero();
        let need_x = drift.drift_mask().is_some() || observed.drift_mask().is_some() || p.cutoff_b.is_some();
        let cut = p.cutoff_b.map(|b| 10.0 * b);
        let exact_lr = self.acc.log_lr.is_some();
        let n_eta = self.acc.eta.len();
        let mut eta_sums = [0.0f64; 8];
        if n_eta > eta_sums.len() {
            return Err(Error::Config("at most 8 eta channels are supported".into()));
        }
        let vals = self.state.values();
        let origin = self.state.origin();
        let mut sums = StepSums::default();

        for i in first..=last {
            let uc = vals[i];
            let pv = (uc + c * (vals[i - 1] - 2.0 * uc + vals[i + 1])).clamp(0.0, 1.0);
            let x = if need_x { (origin + i as i64) as f64 * dx } else { 0.0 };
            let mut pd = pv;
            if drift_on && pv > 0.0 && pv < 1.0 && !(need_x && drift.masked(x)) {
                pd = (pv + dt * kappa * drift.value(pv)).clamp(0.0, 1.0);
            }
            let mut next = pd;
            if pd > 0.0 && pd < 1.0 {
                let g = pd * (1.0 - pd);
                sums.a += g;
                let fo = if observed_on && !(need_x && observed.masked(x)) { observed.value(pd) } else { 0.0 };
                let ratio = if g >= ENDPOINT_CUTOFF { fo / g } else { 0.0 };
                sums.cf += fo;
                sums.af += fo * ratio;
                let inside_cut = matches!(cut, Some(c) if x.abs() <= c);
                if inside_cut {
                    sums.af_cut += fo * ratio;
                }
                for (k, ch) in self.acc.eta.iter().enumerate() {
                    eta_sums[k] += if ch.eta == 1.0 { g } else { g.powf(ch.eta) };
                }
                if let Some(size) = self.sample_size {
                    let (count, u) = size.draw(self.stream.uniform());
                    let k = binomial_inverse(count, pd, u);
                    next = k as f64 / count as f64;
                    let noise = (next - pd) * dx / s;
                    sums.m += noise;
                    sums.mf += ratio * noise;
                    if inside_cut {
                        sums.mf_cut += ratio * noise;
                    }
                    if exact_lr && observed_on {
                        let fa = if need_x && observed.masked(x) { 0.0 } else { observed.value(pv) };
                        let alt = (pv + dt * kappa * fa).clamp(0.0, 1.0);
                        sums.lr += log_binomial_ratio(k, count, alt, pd);
                    }
                }
            }
            self.scratch[i] = next;
        }

        let acc = &mut self.acc;
        acc.m_t += sums.m;
        acc.a_t += dtdx * sums.a;
        acc.mf_t += sums.mf;
        acc.af_t += dtdx * sums.af;
        acc.cf_t += dtdx * sums.cf;
        if let Some(l) = acc.log_lr.as_mut() {
            *l += sums.lr;
        }
        if let Some(cu) = acc.cutoff.as_mut() {
            cu.mf_t += sums.mf_cut;
            cu.af_t += dtdx * sums.af_cut;
        }
        for (k, ch) in acc.eta.iter_mut().enumerate() {
            ch.integral += dtdx * eta_sums[k];
        }
        Ok(())
    }

    fn kernel_gaussian(&mut self, first: usize, last: usize) -> Result<()> {
        let p = &self.params;
        let dt = p.dt;
        let dx = p.dx;
        let lap = dt / (2.0 * dx * dx);
        let kappa = p.frame.drift_scale();
        let s = p.frame.noise_scale();
        let amp = s * (dt / dx).sqrt();
        let wmass = (dt * dx).sqrt();
        let dtdx = dt * dx;
        let drift = &self.model.drift;
        let observed = &self.model.observed;
        let cut = p.cutoff_b.map(|b| 10.0 * b);
        let vals = self.state.values();
        let origin = self.state.origin();
        let mut sums = StepSums::default();
        let mut eta_sums = vec![0.0; self.acc.eta.len()];

        for i in first..=last {
            let uc = vals[i];
            let x = (origin + i as i64) as f64 * dx;
            let g = uc * (1.0 - uc);
            let fd = if drift.masked(x) { 0.0 } else { drift.value(uc) };
            let mut next = uc + lap * (vals[i - 1] - 2.0 * uc + vals[i + 1]) + dt * kappa * fd;
            if g > 0.0 {
                let fo = if observed.masked(x) { 0.0 } else { observed.value(uc) };
                let sg = g.sqrt();
                let ratio = if g >= ENDPOINT_CUTOFF { fo / sg } else { 0.0 };
                let inside_cut = matches!(cut, Some(c) if x.abs() <= c);
                sums.a += g;
                sums.cf += fo;
                sums.af += ratio * ratio;
                if inside_cut {
                    sums.af_cut += ratio * ratio;
                }
                for (k, ch) in self.acc.eta.iter().enumerate() {
                    eta_sums[k] += if ch.eta == 1.0 { g } else { g.powf(ch.eta) };
                }
                if s > 0.0 {
                    let xi = self.stream.normal();
                    next += amp * sg * xi;
                    sums.m += sg * xi * wmass;
                    sums.mf += ratio * xi * wmass;
                    if inside_cut {
                        sums.mf_cut += ratio * xi * wmass;
                    }
                }
            }
            if !next.is_finite() {
                return Err(Error::NumericalBlowup {
                    t: self.state.t(),
                    cell: origin + i as i64,
                    value: next,
                    checkpoint: Some(Box::new(self.checkpoint())),
                });
            }
            self.scratch[i] = next.clamp(0.0, 1.0);
        }

        let acc = &mut self.acc;
        acc.m_t += sums.m;
        acc.a_t += dtdx * sums.a;
        acc.mf_t += sums.mf;
        acc.af_t += dtdx * sums.af;
        acc.cf_t += dtdx * sums.cf;
        if let Some(cu) = acc.cutoff.as_mut() {
            cu.mf_t += sums.mf_cut;
            cu.af_t += dtdx * sums.af_cut;
        }
        for (k, ch) in acc.eta.iter_mut().enumerate() {
            ch.integral += dtdx * eta_sums[k];
        }
        Ok(())
    }

    /// Steps until `t_end`, logging on the global step schedule and calling
    /// `observer` after every step.
    pub fn run_until(
        &mut self,
        t_end: f64,
        mut observer: impl FnMut(&FrontState, &FunctionalAccumulators) -> Control,
    ) -> Result<ObservationLog> {
        let steps = self.params.steps_between(self.state.t(), t_end);
        let every = self.params.log_every_steps() as u64;
        let mut log = ObservationLog { noise_scale: self.params.frame.noise_scale(), records: Vec::new() };
        for _ in 0..steps {
            self.step()?;
            if self.steps_done % every == 0 {
                log.records.push(self.observe()?);
            }
            if observer(&self.state, &self.acc) == Control::Stop {
                break;
            }
        }
        Ok(log)
    }

    /// Runs to `params.t_max`.
    pub fn run(&mut self) -> Result<ObservationLog> {
        let t_max = self.params.t_max;
        self.run_until(t_max, |_, _| Control::Continue)
    }
}

/// `log P(k | n, alt) - log P(k | n, base)`.
fn log_binomial_ratio(k: u32, n: u32, alt: f64, base: f64) -> f64 {
    if alt == base {
        return 0.0;
    }
    let kf = k as f64;
    let rest = (n - k) as f64;
    let up = if k > 0 { kf * (alt / base).ln() } else { 0.0 };
    let down = if k < n { rest * ((1.0 - alt) / (1.0 - base)).ln() } else { 0.0 };
    up + down
}

/// Advances `state` and `acc` by one step. Convenience wrapper over [`Simulation`].
pub fn step(
    state: FrontState,
    model: &Model,
    params: &SimParams,
    stream: NoiseStream,
    acc: FunctionalAccumulators,
) -> Result<(FrontState, FunctionalAccumulators, NoiseStream)> {
    params.validate()?;
    let mut sim = Simulation::assemble(state, acc, model.clone(), params.clone(), stream, 0);
    sim.step()?;
    Ok((sim.state, sim.acc, sim.stream))
}

/// Output of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: FrontState,
    pub acc: FunctionalAccumulators,
    pub log: ObservationLog,
    pub stream: StreamPosition,
}

/// Runs from `state` to `params.t_max`.
pub fn run(
    state: FrontState,
    model: &Model,
    params: &SimParams,
    stream: NoiseStream,
    observer: impl FnMut(&FrontState, &FunctionalAccumulators) -> Control,
) -> Result<RunOutput> {
    let mut sim = Simulation::new(state, model.clone(), params.clone(), stream)?;
    let log = sim.run_until(params.t_max, observer)?;
    Ok(RunOutput { stream: sim.stream.position(), state: sim.state, acc: sim.acc, log })
}
