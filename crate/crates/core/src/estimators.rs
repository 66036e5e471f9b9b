//! Estimators built on trajectories.
//!
//! * Speed: least-squares slope of `R(t)`, mean unit-time increment of `R`
//!   (the subadditive form), and the slope of the compensated centroid
//!   `Xi(t) - s M_t`. Since `Xi(u_t) - Xi(u_0) = s M_t + kappa C^f_t` and `R`
//!   stays within a stationary distance of `Xi`, this position moves at the
//!   speed of `R` while carrying neither the martingale nor the shape
//!   fluctuations of the edge.
//! * Stationary constants of the voter interface from one long run:
//!
//!   ```text
//!   c_f = E_st int f(w) dx,    D = E_st int f(w)^2 / (w(1-w)) dx,
//!   mass = E_st int w(1-w) dx, eta-moments E_st int (w(1-w))^eta dx.
//!   ```
//!
//!   Time averages use the per-step integrals accumulated by the integrator,
//!   i.e. the integrands at the pre-resampling state.
//! * Diffusive scaling of `(Xi, M, M^f, A, A^f)` across an ensemble: at time
//!   `a^2`, `Var Xi`, `Cov(M, M^f)`, `E A` and `E A^f` grow like
//!   `a^2 (1, c_f, 1, D)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{Control, Model, ObservationLog, SimParams, Simulation};
use crate::noise::NoiseStream;
use crate::nonlinearity::NonlinearitySpec;
use crate::replicas::run_replicas;
use crate::stats::{batch_means, compensated_sum, covariance, mean, ols, quantile, MeanEstimate};

/// Number of batches behind every batch-means standard error.
pub const N_BATCHES: usize = 20;

/// Minimum number of post-burn-in log records for a speed estimate.
pub const MIN_SPEED_SAMPLES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedMethod {
    LsFit,
    SubadditiveIncrements,
    MartingaleCompensated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedEstimate {
    pub v_hat: f64,
    pub stderr: f64,
    pub method: SpeedMethod,
    pub t_window: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedReport {
    pub ls_fit: SpeedEstimate,
    pub subadditive: SpeedEstimate,
    /// Present when the run had noise.
    pub compensated: Option<SpeedEstimate>,
    pub n_samples: usize,
}

impl SpeedReport {
    pub fn get(&self, method: SpeedMethod) -> Option<SpeedEstimate> {
        match method {
            SpeedMethod::LsFit => Some(self.ls_fit),
            SpeedMethod::SubadditiveIncrements => Some(self.subadditive),
            SpeedMethod::MartingaleCompensated => self.compensated,
        }
    }
}

fn batched_slope(ts: &[f64], ys: &[f64]) -> (f64, f64) {
    let (slope, _) = ols(ts, ys);
    let k = N_BATCHES.min(ts.len() / 3).max(2);
    let size = ts.len() / k;
    let start = ts.len() - size * k;
    let slopes: Vec<f64> = (0..k)
        .map(|b| {
            let r = start + b * size..start + (b + 1) * size;
            ols(&ts[r.clone()], &ys[r]).0
        })
        .collect();
    let stderr = (crate::stats::variance(&slopes) / k as f64).sqrt();
    (slope, stderr)
}

/// Speed estimates from records with `t >= burn_frac * t_max`.
pub fn estimate_speed(log: &ObservationLog, burn_frac: f64) -> Result<SpeedReport> {
    if !(0.0..1.0).contains(&burn_frac) {
        return Err(Error::Estimation(format!("burn fraction must lie in [0, 1), got {burn_frac}")));
    }
    let t_max = log
        .records
        .last()
        .map(|r| r.t)
        .ok_or_else(|| Error::Estimation("empty log".into()))?;
    let t_lo = burn_frac * t_max;
    let post: Vec<_> = log.records.iter().filter(|r| r.t >= t_lo).collect();
    if post.len() < MIN_SPEED_SAMPLES {
        return Err(Error::Estimation(format!(
            "{} post-burn-in samples, need at least {MIN_SPEED_SAMPLES}",
            post.len()
        )));
    }
    let t_window = (post[0].t, t_max);
    let ts: Vec<f64> = post.iter().map(|r| r.t).collect();
    let rs: Vec<f64> = post.iter().map(|r| r.r).collect();

    let (v, se) = batched_slope(&ts, &rs);
    let ls_fit = SpeedEstimate { v_hat: v, stderr: se, method: SpeedMethod::LsFit, t_window };

    let compensated = (log.noise_scale > 0.0).then(|| {
        let ys: Vec<f64> = post.iter().map(|r| r.xi - log.noise_scale * r.m_t).collect();
        let (v, se) = batched_slope(&ts, &ys);
        SpeedEstimate { v_hat: v, stderr: se, method: SpeedMethod::MartingaleCompensated, t_window }
    });

    let spacing = if ts.len() > 1 { (ts[ts.len() - 1] - ts[0]) / (ts.len() - 1) as f64 } else { 1.0 };
    if spacing > 1.0 + 1e-9 {
        return Err(Error::Estimation(format!("log spacing {spacing} is coarser than unit time")));
    }
    let mut unit = Vec::new();
    let mut j = 0;
    let first = ts[0].ceil() as i64;
    let last = ts[ts.len() - 1].floor() as i64;
    for m in first..=last {
        let mf = m as f64;
        while j + 1 < ts.len() && (ts[j + 1] - mf).abs() <= (ts[j] - mf).abs() {
            j += 1;
        }
        if (ts[j] - mf).abs() <= 0.5 * spacing + 1e-9 {
            unit.push(rs[j]);
        }
    }
    let incs: Vec<f64> = unit.windows(2).map(|w| w[1] - w[0]).collect();
    if incs.len() < 2 * 2 {
        return Err(Error::Estimation(format!("only {} unit-time increments", incs.len())));
    }
    let est = batch_means(&incs, N_BATCHES.min(incs.len() / 2))?;
    let subadditive = SpeedEstimate {
        v_hat: est.mean,
        stderr: est.stderr,
        method: SpeedMethod::SubadditiveIncrements,
        t_window,
    };
    Ok(SpeedReport { ls_fit, subadditive, compensated, n_samples: post.len() })
}

/// A time average with its batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    fn from_batches(e: MeanEstimate) -> Self {
        Self { value: e.mean, stderr: e.stderr }
    }

    /// Half width of the two-sided 95% Student-t interval over [`N_BATCHES`] batches.
    pub fn half_width95(&self) -> f64 {
        crate::stats::student_t_quantile(0.975, (N_BATCHES - 1) as f64) * self.stderr
    }

    pub fn covers(&self, target: f64) -> bool {
        (self.value - target).abs() <= self.half_width95()
    }
}

/// How the stationary run decides where burn-in ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum BurnIn {
    /// Fixed burn-in time.
    Fixed { t: f64 },
    /// Ends at the first window boundary `t >= min_t` where the mean mass of
    /// the last window is within `rel_tol` of the window before it, or at
    /// `max_frac * t_max`, whichever comes first.
    Stabilized { window: f64, rel_tol: f64, min_t: f64, max_frac: f64 },
}

impl Default for BurnIn {
    fn default() -> Self {
        BurnIn::Stabilized { window: 50.0, rel_tol: 0.02, min_t: 20.0, max_frac: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryConfig {
    /// Voter-frame parameters; the noise prefactor must be 1.
    pub params: SimParams,
    #[serde(default)]
    pub burn_in: BurnIn,
    /// Time between stationary samples.
    #[serde(default = "default_sample_interval")]
    pub sample_interval: f64,
    #[serde(default)]
    pub etas: Vec<f64>,
    #[serde(default = "default_quantiles")]
    pub quantiles: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub replica_id: u64,
}

fn default_sample_interval() -> f64 {
    1.0
}

fn default_quantiles() -> Vec<f64> {
    vec![0.5, 0.9, 0.99]
}

impl StationaryConfig {
    pub fn new(params: SimParams, seed: u64) -> Self {
        Self {
            params,
            burn_in: BurnIn::default(),
            sample_interval: default_sample_interval(),
            etas: Vec::new(),
            quantiles: default_quantiles(),
            seed,
            replica_id: 0,
        }
    }
}

/// Per-interval time averages of one stationary run, after burn-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarySamples {
    pub interval: f64,
    pub mass: Vec<f64>,
    pub c_f: Vec<f64>,
    pub d: Vec<f64>,
    pub eta: Vec<(f64, Vec<f64>)>,
    pub width: Vec<f64>,
    /// Mass of the field itself at the sample times, after resampling.
    pub state_mass: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaMoment {
    pub eta: f64,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarySummary {
    pub c_f_hat: Estimate,
    pub d_hat: Estimate,
    pub mass_hat: Estimate,
    pub eta_moments: Vec<EtaMoment>,
    pub width_quantiles: Vec<(f64, f64)>,
    pub burn_in: f64,
    /// True when burn-in stopped at its cap instead of meeting the stability rule.
    pub burn_in_capped: bool,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryRun {
    pub summary: StationarySummary,
    pub samples: StationarySamples,
}

/// Time-average of `int (w(1-w))^eta dx` with its standard error.
pub fn eta_moment(samples: &StationarySamples, eta: f64) -> Result<Estimate> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Domain(format!("eta must lie in (0, 1], got {eta}")));
    }
    let series = samples
        .eta
        .iter()
        .find(|(e, _)| *e == eta)
        .map(|(_, s)| s)
        .ok_or_else(|| Error::Estimation(format!("eta = {eta} was not tracked during the run")))?;
    Ok(Estimate::from_batches(batch_means(series, N_BATCHES)?))
}

/// Runs the voter equation and time-averages the integrals of `f`.
///
/// `f` never enters the dynamics.
pub fn estimate_stationary(f: &NonlinearitySpec, cfg: &StationaryConfig) -> Result<StationaryRun> {
    let mut params = cfg.params.clone();
    if params.frame.noise_scale() != 1.0 {
        return Err(Error::Config("the stationary voter run needs unit noise".into()));
    }
    let t_max = params.t_max;
    if !(cfg.sample_interval > 0.0) {
        return Err(Error::Config("sample interval must be positive".into()));
    }
    if let BurnIn::Fixed { t } = cfg.burn_in {
        if t >= t_max {
            return Err(Error::Estimation(format!("burn-in {t} is not shorter than the run {t_max}")));
        }
    }
    let mut etas = cfg.etas.clone();
    if let Some(e) = etas.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
        return Err(Error::Domain(format!("eta must lie in (0, 1], got {e}")));
    }
    etas.dedup();
    params.eta_channels = etas.clone();
    params.log_every = usize::MAX;
    let mut sim = Simulation::from_step(0.0, Model::voter(f.clone()), params, NoiseStream::new(cfg.seed, cfg.replica_id))?;

    let steps_per_sample = ((cfg.sample_interval / sim.params().dt).round() as u64).max(1);
    let interval = steps_per_sample as f64 * sim.params().dt;
    let n_total = (sim.params().steps_between(0.0, t_max) / steps_per_sample) as usize;

    let mut mass = Vec::with_capacity(n_total);
    let mut c_f = Vec::with_capacity(n_total);
    let mut d = Vec::with_capacity(n_total);
    let mut eta_series: Vec<Vec<f64>> = vec![Vec::with_capacity(n_total); etas.len()];
    let mut width = Vec::with_capacity(n_total);
    let mut state_mass = Vec::with_capacity(n_total);
    let eps = sim.params().eps_front;
    for _ in 0..n_total {
        let before = sim.acc.clone();
        for _ in 0..steps_per_sample {
            sim.step()?;
        }
        let a = &sim.acc;
        mass.push((a.a_t - before.a_t) / interval);
        c_f.push((a.cf_t - before.cf_t) / interval);
        d.push((a.af_t - before.af_t) / interval);
        for (k, ch) in a.eta.iter().enumerate() {
            eta_series[k].push((ch.integral - before.eta[k].integral) / interval);
        }
        width.push(sim.state.front_edges(eps)?.width);
        state_mass.push(sim.state.mass_w());
    }

    let (burn_samples, capped) = match cfg.burn_in {
        BurnIn::Fixed { t } => (((t / interval).ceil() as usize).min(n_total), false),
        BurnIn::Stabilized { window, rel_tol, min_t, max_frac } => {
            let w = ((window / interval).round() as usize).max(1);
            let cap = ((max_frac * t_max / interval).floor() as usize).min(n_total);
            let min_k = (min_t / interval).ceil() as usize;
            let mut found = None;
            let mut end = 2 * w;
            while end <= cap {
                if end >= min_k {
                    let prev = mean(&mass[end - 2 * w..end - w]);
                    let last = mean(&mass[end - w..end]);
                    if (last - prev).abs() <= rel_tol * prev.abs() {
                        found = Some(end);
                        break;
                    }
                }
                end += w;
            }
            match found {
                Some(k) => (k, false),
                None => (cap.max(min_k.min(n_total)), true),
            }
        }
    };
    if n_total.saturating_sub(burn_samples) < 2 * N_BATCHES {
        return Err(Error::Estimation(format!(
            "{} samples after burn-in, need at least {}",
            n_total.saturating_sub(burn_samples),
            2 * N_BATCHES
        )));
    }
    let keep = |v: Vec<f64>| v[burn_samples..].to_vec();
    let samples = StationarySamples {
        interval,
        mass: keep(mass),
        c_f: keep(c_f),
        d: keep(d),
        eta: etas.iter().copied().zip(eta_series.into_iter().map(keep)).collect(),
        width: keep(width),
        state_mass: keep(state_mass),
    };
    let eta_moments = samples
        .eta
        .iter()
        .map(|(e, _)| eta_moment(&samples, *e).map(|est| EtaMoment { eta: *e, value: est.value, stderr: est.stderr }))
        .collect::<Result<Vec<_>>>()?;
    let mut sorted_width = samples.width.clone();
    sorted_width.sort_by(f64::total_cmp);
    let summary = StationarySummary {
        c_f_hat: Estimate::from_batches(batch_means(&samples.c_f, N_BATCHES)?),
        d_hat: Estimate::from_batches(batch_means(&samples.d, N_BATCHES)?),
        mass_hat: Estimate::from_batches(batch_means(&samples.mass, N_BATCHES)?),
        eta_moments,
        width_quantiles: cfg.quantiles.iter().map(|&q| (q, quantile(&sorted_width, q))).collect(),
        burn_in: burn_samples as f64 * interval,
        burn_in_capped: capped,
        n_samples: samples.mass.len(),
    };
    Ok(StationaryRun { summary, samples })
}

/// Functionals of one replica at the times `a^2`, measured from the end of burn-in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSample {
    pub xi_increment: f64,
    pub m: f64,
    pub mf: f64,
    pub a: f64,
    pub af: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaFunctionals {
    pub samples: Vec<FunctionalSample>,
}

/// A regression slope with a standard error from per-replica influence values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slope {
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub a: f64,
    pub var_xi: f64,
    pub var_m: f64,
    pub cov: f64,
    pub a_mean: f64,
    pub af_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub var_slope_xi: Slope,
    pub var_slope_m: Slope,
    pub cov_slope: Slope,
    pub a_slope: Slope,
    pub af_slope: Slope,
    pub a_values: Vec<f64>,
    /// Per-`a` ratios, each divided by `a^2`.
    pub points: Vec<ScalingPoint>,
    pub n_replicas: usize,
}

/// Minimum ensemble size for [`scaling_limit_check`].
pub const MIN_SCALING_REPLICAS: usize = 100;

/// Regresses ensemble statistics at times `a^2` on `a^2` through the origin.
pub fn scaling_limit_check(ensemble: &[ReplicaFunctionals], a_values: &[f64]) -> Result<ScalingReport> {
    let n = ensemble.len();
    if n < MIN_SCALING_REPLICAS {
        return Err(Error::Estimation(format!("{n} replicas, need at least {MIN_SCALING_REPLICAS}")));
    }
    if a_values.len() < 3 || a_values.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::Estimation("need at least three positive values of a".into()));
    }
    if ensemble.iter().any(|r| r.samples.len() != a_values.len()) {
        return Err(Error::Estimation("every replica needs one sample per value of a".into()));
    }
    let x2: Vec<f64> = a_values.iter().map(|a| a * a).collect();
    let sxx = compensated_sum(x2.iter().map(|x| x * x));
    let nf = n as f64;
    let corr = nf / (nf - 1.0);

    let column = |k: usize, pick: fn(&FunctionalSample) -> f64| -> Vec<f64> {
        ensemble.iter().map(|r| pick(&r.samples[k])).collect()
    };
    // influence[q][r]: replica r's contribution to slope q
    let mut influence = vec![vec![0.0; n]; 5];
    let mut points = Vec::with_capacity(a_values.len());
    for (k, &a) in a_values.iter().enumerate() {
        let xi = column(k, |s| s.xi_increment);
        let m = column(k, |s| s.m);
        let mf = column(k, |s| s.mf);
        let aa = column(k, |s| s.a);
        let af = column(k, |s| s.af);
        let (mxi, mm, mmf) = (mean(&xi), mean(&m), mean(&mf));
        let w = x2[k] / sxx;
        for r in 0..n {
            influence[0][r] += w * corr * (xi[r] - mxi).powi(2);
            influence[1][r] += w * corr * (m[r] - mm).powi(2);
            influence[2][r] += w * corr * (m[r] - mm) * (mf[r] - mmf);
            influence[3][r] += w * aa[r];
            influence[4][r] += w * af[r];
        }
        let a2 = a * a;
        points.push(ScalingPoint {
            a,
            var_xi: crate::stats::variance(&xi) / a2,
            var_m: crate::stats::variance(&m) / a2,
            cov: covariance(&m, &mf) / a2,
            a_mean: mean(&aa) / a2,
            af_mean: mean(&af) / a2,
        });
    }
    let slope = |v: &Vec<f64>| Slope { value: mean(v), stderr: (crate::stats::variance(v) / nf).sqrt() };
    Ok(ScalingReport {
        var_slope_xi: slope(&influence[0]),
        var_slope_m: slope(&influence[1]),
        cov_slope: slope(&influence[2]),
        a_slope: slope(&influence[3]),
        af_slope: slope(&influence[4]),
        a_values: a_values.to_vec(),
        points,
        n_replicas: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingEnsembleConfig {
    /// Voter-frame parameters; `t_max` is ignored.
    pub params: SimParams,
    pub a_values: Vec<f64>,
    pub replicas: usize,
    /// Time run from step data before the functionals are zeroed.
    pub burn_in: f64,
    pub seed: u64,
}

/// Simulates the voter ensemble behind [`scaling_limit_check`].
pub fn run_scaling_ensemble(f: &NonlinearitySpec, cfg: &ScalingEnsembleConfig) -> Result<Vec<ReplicaFunctionals>> {
    let mut a_sorted = cfg.a_values.clone();
    a_sorted.sort_by(f64::total_cmp);
    if a_sorted != cfg.a_values {
        return Err(Error::Config("a values must be increasing".into()));
    }
    if !(cfg.burn_in >= 0.0) {
        return Err(Error::Config("burn-in must be non-negative".into()));
    }
    let mut params = cfg.params.clone();
    params.log_every = usize::MAX;
    params.validate()?;
    run_replicas(cfg.replicas, |rep| {
        let mut sim =
            Simulation::from_step(0.0, Model::voter(f.clone()), params.clone(), NoiseStream::new(cfg.seed, rep))?;
        sim.run_until(cfg.burn_in, |_, _| Control::Continue)?;
        let t0 = sim.state.t();
        sim.acc.reset(t0);
        let xi0 = sim.state.xi()?;
        let mut samples = Vec::with_capacity(cfg.a_values.len());
        for &a in &cfg.a_values {
            sim.run_until(t0 + a * a, |_, _| Control::Continue)?;
            samples.push(FunctionalSample {
                xi_increment: sim.state.xi()? - xi0,
                m: sim.acc.m_t,
                mf: sim.acc.mf_t,
                a: sim.acc.a_t,
                af: sim.acc.af_t,
            });
        }
        Ok(ReplicaFunctionals { samples })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{Frame, ObservationRecord};

    fn record(t: f64, r: f64) -> ObservationRecord {
        ObservationRecord { t, r, l: r, xi: r, mass: 0.0, m_t: 0.0, a_t: 0.0, mf_t: 0.0, af_t: 0.0, z_t: 0.0 }
    }

    #[test]
    fn linear_log_gives_exact_speed() {
        let log = ObservationLog {
            noise_scale: 0.0,
            records: (1..=1000).map(|k| record(k as f64 * 0.1, 0.2 * k as f64)).collect(),
        };
        let s = estimate_speed(&log, 0.2).unwrap();
        assert!((s.ls_fit.v_hat - 2.0).abs() < 1e-12);
        assert!(s.ls_fit.stderr < 1e-10);
        assert!((s.subadditive.v_hat - 2.0).abs() < 1e-12);
        assert!(s.subadditive.stderr < 1e-10);
        assert!(s.compensated.is_none());
        assert!(s.ls_fit.t_window.0 >= 20.0 - 1e-9);
    }

    #[test]
    fn compensation_removes_martingale_and_edge_noise() {
        let mut noise = NoiseStream::new(5, 0);
        let mut m = 0.0;
        let records = (1..=2000)
            .map(|k| {
                let t = k as f64 * 0.1;
                m += 0.3 * noise.normal();
                let xi = 0.5 * t + 2.0 * m;
                ObservationRecord { r: xi + 3.0 * noise.uniform(), xi, m_t: m, ..record(t, 0.0) }
            })
            .collect();
        let s = estimate_speed(&ObservationLog { noise_scale: 2.0, records }, 0.25).unwrap();
        let c = s.compensated.unwrap();
        assert!((c.v_hat - 0.5).abs() < 1e-12 && c.stderr < 1e-10);
        assert!(s.ls_fit.stderr > 1e-3);
    }

    #[test]
    fn too_few_samples() {
        let log = ObservationLog { noise_scale: 0.0, records: (1..=30).map(|k| record(k as f64, 0.0)).collect() };
        assert!(matches!(estimate_speed(&log, 0.0), Err(Error::Estimation(_))));
    }

    #[test]
    fn eta_domain_and_tracking() {
        let s = StationarySamples {
            interval: 1.0,
            mass: vec![1.0; 40],
            c_f: vec![],
            d: vec![],
            eta: vec![(0.6, vec![2.0; 40])],
            width: vec![],
            state_mass: vec![],
        };
        assert!(matches!(eta_moment(&s, 0.0), Err(Error::Domain(_))));
        assert!(matches!(eta_moment(&s, 1.5), Err(Error::Domain(_))));
        assert!(matches!(eta_moment(&s, 0.8), Err(Error::Estimation(_))));
        assert_eq!(eta_moment(&s, 0.6).unwrap().value, 2.0);
    }

    fn synthetic(n: usize, a_values: &[f64], tie_mf: bool) -> Vec<ReplicaFunctionals> {
        let mut s = NoiseStream::new(77, 0);
        (0..n)
            .map(|_| ReplicaFunctionals {
                samples: a_values
                    .iter()
                    .map(|a| {
                        let m = a * s.normal();
                        let mf = if tie_mf { m } else { a * s.normal() };
                        FunctionalSample { xi_increment: m, m, mf, a: a * a, af: 2.0 * a * a }
                    })
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn scaling_of_brownian_synthetics() {
        let a = [4.0, 6.0, 8.0];
        let r = scaling_limit_check(&synthetic(4000, &a, true), &a).unwrap();
        assert_eq!(r.cov_slope.value, r.var_slope_m.value);
        assert!((r.var_slope_xi.value - 1.0).abs() < 4.0 * r.var_slope_xi.stderr);
        assert!((r.a_slope.value - 1.0).abs() < 1e-12);
        assert!((r.af_slope.value - 2.0).abs() < 1e-12);

        let r = scaling_limit_check(&synthetic(4000, &a, false), &a).unwrap();
        assert!(r.cov_slope.value.abs() < 4.0 * r.cov_slope.stderr);
    }

    #[test]
    fn scaling_preconditions() {
        let a = [4.0, 6.0, 8.0];
        assert!(scaling_limit_check(&synthetic(50, &a, true), &a).is_err());
        assert!(scaling_limit_check(&synthetic(200, &a[..2], true), &a[..2]).is_err());
    }

    #[test]
    fn zero_drift_scaling_has_zero_drift_slopes() {
        let mut p = SimParams::new(Frame::Original { sigma: 1.0 }, 0.1, 0.004, 0.0).unwrap();
        p.window = 60.0;
        let cfg = ScalingEnsembleConfig { params: p, a_values: vec![1.0, 1.5, 2.0], replicas: 100, burn_in: 1.0, seed: 1 };
        let ens = run_scaling_ensemble(&NonlinearitySpec::zero(), &cfg).unwrap();
        let r = scaling_limit_check(&ens, &cfg.a_values).unwrap();
        assert_eq!(r.cov_slope.value, 0.0);
        assert_eq!(r.af_slope.value, 0.0);
        assert!(r.a_slope.value > 0.0);
    }

    #[test]
    fn fixed_burn_in_longer_than_run_is_rejected() {
        let p = SimParams::new(Frame::Original { sigma: 1.0 }, 0.1, 0.004, 10.0).unwrap();
        let mut cfg = StationaryConfig::new(p, 1);
        cfg.burn_in = BurnIn::Fixed { t: 20.0 };
        assert!(matches!(estimate_stationary(&NonlinearitySpec::zero(), &cfg), Err(Error::Estimation(_))));
    }

    #[test]
    fn zero_nonlinearity_has_zero_constants() {
        let mut p = SimParams::new(Frame::Original { sigma: 1.0 }, 0.1, 0.004, 100.0).unwrap();
        p.window = 100.0;
        let mut cfg = StationaryConfig::new(p, 4);
        cfg.burn_in = BurnIn::Fixed { t: 20.0 };
        cfg.etas = vec![0.6, 1.0];
        let run = estimate_stationary(&NonlinearitySpec::zero(), &cfg).unwrap();
        let s = &run.summary;
        assert_eq!((s.c_f_hat.value, s.d_hat.value), (0.0, 0.0));
        assert!(s.mass_hat.value > 0.0);
        assert_eq!(eta_moment(&run.samples, 1.0).unwrap(), s.mass_hat);
        assert!(eta_moment(&run.samples, 0.6).unwrap().value > s.mass_hat.value);
        let q: Vec<f64> = s.width_quantiles.iter().map(|p| p.1).collect();
        assert!(q.windows(2).all(|w| w[0] <= w[1]) && q.iter().all(|v| v.is_finite()));
    }
}
