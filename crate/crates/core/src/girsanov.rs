//! Change of measure between the drifted equation and the voter equation.
//!
//! On `[0, t]` the law of the drifted solution has density `exp(Z_t)` with
//! respect to the voter solution started from the same data, where
//!
//! ```text
//! Z_t = theta M^f_t - theta^2 / 2 A^f_t,    theta = kappa / s.
//! ```
//!
//! The cutoff variant compares against the equation whose drift is switched
//! off on `[-10b, 10b]`, with both functionals restricted to that interval.
//! Since `|f| <= K_f sqrt(u(1-u))`, its `A^f` part is bounded by
//! `20 b K_f^2 t` up to one lattice cell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FrontState;
use crate::integrator::{Frame, FunctionalAccumulators, Model, SimParams, Simulation};
use crate::noise::NoiseStream;
use crate::nonlinearity::NonlinearitySpec;
use crate::replicas::run_replicas;
use crate::stats::compensated_sum;

/// Smallest accepted `ess / n`.
pub const MIN_ESS_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum WeightMode {
    /// `exp(Z_t)` from the continuum functionals.
    Full,
    /// `exp(Z^b_t)` against the equation with drift off on `[-10b, 10b]`.
    Cutoff { b: f64 },
    /// Likelihood ratio of the discrete scheme itself.
    Exact,
}

impl WeightMode {
    pub fn name(&self) -> String {
        match self {
            WeightMode::Full => "full".into(),
            WeightMode::Cutoff { b } => format!("cutoff({b})"),
            WeightMode::Exact => "exact".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedEstimate {
    /// `sum w g / n`.
    pub value: f64,
    pub stderr: f64,
    /// `sum w g / sum w`.
    pub self_normalized: f64,
    /// Delta-method standard error of `self_normalized`.
    pub self_normalized_stderr: f64,
    pub ess: f64,
    pub n: usize,
    pub mode: WeightMode,
}

fn checked_exp(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::Numerical(format!("log weight is {z}")));
    }
    let w = z.exp();
    if !w.is_finite() {
        return Err(Error::Numerical(format!("weight exp({z}) overflows")));
    }
    Ok(w)
}

fn theta_for(acc: &FunctionalAccumulators, frame: &Frame) -> Result<f64> {
    let theta = frame
        .girsanov_scale()
        .ok_or_else(|| Error::Usage("the frame has no noise, so no change of measure exists".into()))?;
    match acc.theta {
        Some(th) if th == theta => Ok(theta),
        Some(th) => Err(Error::Usage(format!("accumulators were built with theta = {th}, the frame gives {theta}"))),
        None => Err(Error::Usage("accumulators come from a run without noise".into())),
    }
}

/// `Z_t` in the convention of `frame`.
pub fn girsanov_log_weight(acc: &FunctionalAccumulators, frame: &Frame) -> Result<f64> {
    let th = theta_for(acc, frame)?;
    let z = th * acc.mf_t - 0.5 * th * th * acc.af_t;
    if !z.is_finite() {
        return Err(Error::Numerical(format!("Z_t is {z}")));
    }
    Ok(z)
}

/// `exp(Z_t)` for accumulators of a voter run.
pub fn girsanov_weight(acc: &FunctionalAccumulators, frame: &Frame) -> Result<f64> {
    checked_exp(girsanov_log_weight(acc, frame)?)
}

/// `Z^b_t` from the interval-restricted accumulators.
pub fn cutoff_log_weight(acc: &FunctionalAccumulators, frame: &Frame, b: f64) -> Result<f64> {
    let th = theta_for(acc, frame)?;
    let cut = acc
        .cutoff
        .as_ref()
        .ok_or_else(|| Error::Usage("interval-restricted accumulators were not tracked".into()))?;
    if cut.b != b {
        return Err(Error::Usage(format!("accumulators were restricted with b = {}, asked for b = {b}", cut.b)));
    }
    let z = th * cut.mf_t - 0.5 * th * th * cut.af_t;
    if !z.is_finite() {
        return Err(Error::Numerical(format!("Z^b_t is {z}")));
    }
    Ok(z)
}

pub fn cutoff_weight(acc: &FunctionalAccumulators, frame: &Frame, b: f64) -> Result<f64> {
    checked_exp(cutoff_log_weight(acc, frame, b)?)
}

/// Lattice form of the bound `20 b K_f^2 t` on the restricted `A^f`: the
/// closed interval holds at most `20 b / dx + 1` cells.
pub fn cutoff_af_cap(b: f64, k_f: f64, t: f64, dx: f64) -> f64 {
    (20.0 * b + dx) * k_f * k_f * t
}

pub fn exact_log_weight(acc: &FunctionalAccumulators) -> Result<f64> {
    let l = acc
        .log_lr
        .ok_or_else(|| Error::Usage("the exact likelihood ratio was not tracked".into()))?;
    if !l.is_finite() {
        return Err(Error::Numerical(format!("log likelihood ratio is {l}")));
    }
    Ok(l)
}

pub fn log_weight(acc: &FunctionalAccumulators, frame: &Frame, mode: WeightMode) -> Result<f64> {
    match mode {
        WeightMode::Full => girsanov_log_weight(acc, frame),
        WeightMode::Cutoff { b } => cutoff_log_weight(acc, frame, b),
        WeightMode::Exact => exact_log_weight(acc),
    }
}

/// Combines per-replica log weights and functional values.
pub fn weighted_estimate(log_weights: &[f64], g: &[f64], mode: WeightMode) -> Result<WeightedEstimate> {
    let n = log_weights.len();
    if n < 2 || g.len() != n {
        return Err(Error::Estimation(format!("need matching samples, got {n} weights and {} values", g.len())));
    }
    let w = log_weights.iter().map(|&z| checked_exp(z)).collect::<Result<Vec<_>>>()?;
    let sw = compensated_sum(w.iter().copied());
    let sw2 = compensated_sum(w.iter().map(|x| x * x));
    let ess = sw * sw / sw2;
    if !(ess >= MIN_ESS_FRACTION * n as f64) {
        return Err(Error::DegenerateWeights(format!(
            "effective sample size {ess:.1} of {n}; use a shorter horizon or the cutoff mode"
        )));
    }
    let nf = n as f64;
    let wg: Vec<f64> = w.iter().zip(g).map(|(a, b)| a * b).collect();
    let value = compensated_sum(wg.iter().copied()) / nf;
    let stderr = (crate::stats::variance(&wg) / nf).sqrt();
    let self_normalized = compensated_sum(wg.iter().copied()) / sw;
    let resid = compensated_sum(w.iter().zip(g).map(|(a, b)| (a * (b - self_normalized)).powi(2)));
    Ok(WeightedEstimate {
        value,
        stderr,
        self_normalized,
        self_normalized_stderr: resid.sqrt() / sw,
        ess,
        n,
        mode,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GirsanovConfig {
    /// Frame, resolution and horizon `t_max`.
    pub params: SimParams,
    pub replicas: usize,
    pub seed: u64,
    pub mode: WeightMode,
    /// Initial step position.
    #[serde(default)]
    pub r0: f64,
}

/// Final state and functionals of one replica.
#[derive(Debug, Clone)]
pub struct ReplicaEnd {
    pub state: FrontState,
    pub acc: FunctionalAccumulators,
}

fn run_ensemble(model: Model, params: SimParams, cfg: &GirsanovConfig, first_id: u64) -> Result<Vec<ReplicaEnd>> {
    params.validate()?;
    run_replicas(cfg.replicas, |k| {
        let stream = NoiseStream::new(cfg.seed, first_id + k);
        let mut sim = Simulation::from_step(cfg.r0, model.clone(), params.clone(), stream)?;
        sim.run()?;
        Ok(ReplicaEnd { state: sim.state, acc: sim.acc })
    })
}

/// Reference runs for `cfg.mode`: the voter equation, or the cutoff equation.
/// Replica ids `0..n`.
pub fn reference_ensemble(f: &NonlinearitySpec, cfg: &GirsanovConfig) -> Result<Vec<ReplicaEnd>> {
    let mut params = cfg.params.clone();
    params.log_every = usize::MAX;
    let model = match cfg.mode {
        WeightMode::Full => Model::voter(f.clone()),
        WeightMode::Exact => {
            params.exact_likelihood = true;
            Model::voter(f.clone())
        }
        WeightMode::Cutoff { b } => {
            params.cutoff_b = Some(b);
            let drift = f.clone().with_drift_mask(-10.0 * b, 10.0 * b)?;
            Model { drift, observed: f.clone().without_drift_mask() }
        }
    };
    run_ensemble(model, params, cfg, 0)
}

/// Runs of the drifted equation itself. Replica ids `n..2n`, independent of
/// [`reference_ensemble`].
pub fn drifted_ensemble(f: &NonlinearitySpec, cfg: &GirsanovConfig) -> Result<Vec<ReplicaEnd>> {
    let mut params = cfg.params.clone();
    params.log_every = usize::MAX;
    run_ensemble(Model::drifted(f.clone()), params, cfg, cfg.replicas as u64)
}

/// Importance-sampling estimate of `E g` under the drifted equation.
pub fn importance_estimate<G>(f: &NonlinearitySpec, g: G, cfg: &GirsanovConfig) -> Result<WeightedEstimate>
where
    G: Fn(&FrontState, &FunctionalAccumulators) -> f64,
{
    let ends = reference_ensemble(f, cfg)?;
    let lw = ends
        .iter()
        .map(|e| log_weight(&e.acc, &cfg.params.frame, cfg.mode))
        .collect::<Result<Vec<_>>>()?;
    let gs: Vec<f64> = ends.iter().map(|e| g(&e.state, &e.acc)).collect();
    weighted_estimate(&lw, &gs, cfg.mode)
}

/// Plain Monte Carlo estimate of `E g` under the drifted equation.
pub fn direct_estimate<G>(f: &NonlinearitySpec, g: G, cfg: &GirsanovConfig) -> Result<WeightedEstimate>
where
    G: Fn(&FrontState, &FunctionalAccumulators) -> f64,
{
    let ends = drifted_ensemble(f, cfg)?;
    let gs: Vec<f64> = ends.iter().map(|e| g(&e.state, &e.acc)).collect();
    weighted_estimate(&vec![0.0; gs.len()], &gs, cfg.mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(frame: Frame, t: f64) -> SimParams {
        let mut p = SimParams::new(frame, 0.1, 0.004, t).unwrap();
        p.window = 40.0;
        p
    }

    fn acc(theta: Option<f64>, mf: f64, af: f64) -> FunctionalAccumulators {
        let p = params(Frame::Original { sigma: 1.0 }, 1.0);
        let mut a = FunctionalAccumulators::new(&p, 0.0);
        a.theta = theta;
        a.mf_t = mf;
        a.af_t = af;
        a
    }

    #[test]
    fn trivial_weights() {
        let f = Frame::Original { sigma: 1.0 };
        assert_eq!(girsanov_weight(&acc(Some(1.0), 0.0, 0.0), &f).unwrap(), 1.0);
        assert!((girsanov_weight(&acc(Some(1.0), 1.0, 2.0), &f).unwrap() - 1.0).abs() < 1e-15);
        let w = girsanov_weight(&acc(Some(0.5), 1.0, 2.0), &Frame::Original { sigma: 2.0 }).unwrap();
        assert!((w - (0.5f64 - 0.25).exp()).abs() < 1e-15);
    }

    #[test]
    fn weight_errors() {
        let f = Frame::Original { sigma: 1.0 };
        assert!(matches!(girsanov_weight(&acc(None, 0.0, 0.0), &f), Err(Error::Usage(_))));
        assert!(matches!(girsanov_weight(&acc(Some(1.0), 0.0, 0.0), &Frame::Original { sigma: 0.0 }), Err(Error::Usage(_))));
        assert!(matches!(girsanov_weight(&acc(Some(1.0), f64::NAN, 0.0), &f), Err(Error::Numerical(_))));
        assert!(matches!(girsanov_weight(&acc(Some(1.0), 1e4, 0.0), &f), Err(Error::Numerical(_))));
        assert!(matches!(cutoff_weight(&acc(Some(1.0), 0.0, 0.0), &f, 1.0), Err(Error::Usage(_))));
        assert!(matches!(exact_log_weight(&acc(Some(1.0), 0.0, 0.0)), Err(Error::Usage(_))));
    }

    #[test]
    fn ess_gate() {
        let mut lw = vec![0.0; 100];
        lw[0] = 10.0;
        let g = vec![1.0; 100];
        assert!(matches!(weighted_estimate(&lw, &g, WeightMode::Full), Err(Error::DegenerateWeights(_))));
        let e = weighted_estimate(&vec![0.0; 100], &g, WeightMode::Full).unwrap();
        assert_eq!((e.value, e.stderr, e.ess, e.self_normalized), (1.0, 0.0, 100.0, 1.0));
    }

    #[test]
    fn zero_nonlinearity_gives_unit_weights() {
        let cfg = GirsanovConfig {
            params: params(Frame::Rescaled { epsilon: 0.1 }, 0.5),
            replicas: 8,
            seed: 3,
            mode: WeightMode::Full,
            r0: 0.0,
        };
        let xi = |s: &FrontState, _: &FunctionalAccumulators| s.xi().unwrap();
        let is = importance_estimate(&NonlinearitySpec::zero(), xi, &cfg).unwrap();
        let ends = reference_ensemble(&NonlinearitySpec::zero(), &cfg).unwrap();
        let plain = crate::stats::mean(&ends.iter().map(|e| e.state.xi().unwrap()).collect::<Vec<_>>());
        assert_eq!(is.ess, 8.0);
        assert!((is.value - plain).abs() < 1e-14);
    }

    #[test]
    fn wide_cutoff_reproduces_the_full_weight() {
        let f = NonlinearitySpec::fisher_kpp();
        let frame = Frame::Rescaled { epsilon: 0.2 };
        let base = GirsanovConfig { params: params(frame, 1.0), replicas: 4, seed: 9, mode: WeightMode::Full, r0: 0.0 };
        let cut = GirsanovConfig { mode: WeightMode::Cutoff { b: 1e4 }, ..base.clone() };
        let full = reference_ensemble(&f, &base).unwrap();
        let wide = reference_ensemble(&f, &cut).unwrap();
        for (a, b) in full.iter().zip(&wide) {
            assert_eq!(girsanov_weight(&a.acc, &frame).unwrap(), cutoff_weight(&b.acc, &frame, 1e4).unwrap());
        }
        assert!(matches!(cutoff_weight(&wide[0].acc, &frame, 2.0), Err(Error::Usage(_))));
    }

    #[test]
    fn cutoff_functionals_respect_the_cap() {
        let f = NonlinearitySpec::fisher_kpp();
        let k_f = f.sqrt_bound_constant(10_001);
        let frame = Frame::Original { sigma: 1.0 };
        for b in [0.05, 0.2] {
            let cfg = GirsanovConfig { params: params(frame, 2.0), replicas: 6, seed: 5, mode: WeightMode::Cutoff { b }, r0: 0.0 };
            for e in reference_ensemble(&f, &cfg).unwrap() {
                let c = e.acc.cutoff.unwrap();
                assert!(c.af_t >= 0.0 && c.af_t <= cutoff_af_cap(b, k_f, 2.0, 0.1));
                assert!(c.z_t <= c.mf_t);
            }
        }
    }
}
