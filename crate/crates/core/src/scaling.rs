//! Space-time rescaling between the original and rescaled frames.
//!
//! With `a = b = sigma^-2`, `v_t(x) = u_{sigma^-4 t}(sigma^-2 x)` turns noise
//! strength `sigma` into unit noise and drift prefactor `epsilon = sigma^-4`.
//! Front positions scale by `sigma^2`, so `V(sigma) = sigma^2 V_v` and
//! `sigma^2 V(sigma) = sigma^4 V_v`.
//!
//! The lattice scheme commutes with the map: `dt / dx^2`, `s^2 dt / dx` and
//! `kappa dt` are all unchanged when `dx` scales by `sigma^-2` and `dt` by
//! `sigma^-4`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{Control, Frame, Model, SimParams, Simulation};
use crate::noise::NoiseStream;
use crate::nonlinearity::NonlinearitySpec;
use crate::replicas::run_replicas;
use crate::stats::{ks_two_sample, KsResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMap {
    pub sigma: f64,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Time,
    Space,
    Speed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ToOriginal,
    ToRescaled,
}

impl FrameMap {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
        }
        let a = sigma.powi(-2);
        Ok(Self { sigma, a, b: a })
    }

    /// `epsilon = sigma^-4`.
    pub fn epsilon(&self) -> f64 {
        self.a * self.a
    }

    /// `a b^(-1/2) sigma`, equal to one.
    pub fn noise_identity(&self) -> f64 {
        self.a * self.sigma / self.b.sqrt()
    }

    /// Factor taking a rescaled-frame value to the original frame.
    fn to_original_factor(&self, q: Quantity) -> f64 {
        match q {
            Quantity::Time => self.a * self.a,
            Quantity::Space => self.b,
            Quantity::Speed => self.sigma * self.sigma,
        }
    }

    pub fn map(&self, q: Quantity, value: f64, dir: Direction) -> f64 {
        let k = self.to_original_factor(q);
        match dir {
            Direction::ToOriginal => value * k,
            Direction::ToRescaled => value / k,
        }
    }

    /// Original-frame parameters equivalent to rescaled-frame `p`.
    pub fn original_params(&self, p: &SimParams) -> Result<SimParams> {
        if !matches!(p.frame, Frame::Rescaled { .. }) {
            return Err(Error::Config("expected rescaled-frame parameters".into()));
        }
        let mut q = p.clone();
        q.frame = Frame::Original { sigma: self.sigma };
        q.dx = self.map(Quantity::Space, p.dx, Direction::ToOriginal);
        q.dt = self.map(Quantity::Time, p.dt, Direction::ToOriginal);
        q.window = self.map(Quantity::Space, p.window, Direction::ToOriginal);
        q.t_max = self.map(Quantity::Time, p.t_max, Direction::ToOriginal);
        q.cutoff_b = p.cutoff_b.map(|b| self.map(Quantity::Space, b, Direction::ToOriginal));
        q.validate()?;
        Ok(q)
    }
}

/// Maps `value` between frames. Errors for `sigma <= 0`.
pub fn map_observable(sigma: f64, quantity: Quantity, value: f64, dir: Direction) -> Result<f64> {
    Ok(FrameMap::new(sigma)?.map(quantity, value, dir))
}

/// Rescaled-frame parameters for noise strength `sigma`.
pub fn rescaled_params(sigma: f64, dx: f64, dt: f64, t_max: f64) -> Result<SimParams> {
    SimParams::new(Frame::Rescaled { epsilon: FrameMap::new(sigma)?.epsilon() }, dx, dt, t_max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTestConfig {
    /// Rescaled-frame parameters; `t_max` is the observation time.
    pub rescaled: SimParams,
    /// Original-frame parameters. Derived from `rescaled` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original: Option<SimParams>,
    pub replicas: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTestReport {
    pub sigma: f64,
    pub t_obs: f64,
    pub ks_statistic: f64,
    pub p_value: f64,
    pub passes: bool,
    /// `R(v_t)` from rescaled runs.
    pub r_rescaled: Vec<f64>,
    /// `sigma^2 R(u_{sigma^-4 t})` from original runs.
    pub r_original_mapped: Vec<f64>,
}

/// Significance level of [`frame_equivalence_test`].
pub const FRAME_TEST_LEVEL: f64 = 0.01;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

fn final_edges(f: &NonlinearitySpec, p: &SimParams, seed: u64, first_id: u64, n: usize) -> Result<Vec<f64>> {
    let mut p = p.clone();
    p.log_every = usize::MAX;
    run_replicas(n, |k| {
        let mut sim = Simulation::from_step(0.0, Model::drifted(f.clone()), p.clone(), NoiseStream::new(seed, first_id + k))?;
        sim.run_until(p.t_max, |_, _| Control::Continue)?;
        Ok(sim.state.front_edges(p.eps_front)?.right)
    })
}

/// Two-sample KS test between `R(v_t)` simulated in the rescaled frame and
/// the same quantity read off original-frame runs through the map.
pub fn frame_equivalence_test(f: &NonlinearitySpec, cfg: &FrameTestConfig) -> Result<FrameTestReport> {
    let Frame::Rescaled { epsilon } = cfg.rescaled.frame else {
        return Err(Error::Config("the reference runs must use the rescaled frame".into()));
    };
    if !(epsilon > 0.0) {
        return Err(Error::Config("epsilon must be positive".into()));
    }
    let map = FrameMap::new(epsilon.powf(-0.25))?;
    let derived = map.original_params(&cfg.rescaled)?;
    let original = match &cfg.original {
        None => derived,
        Some(o) => {
            let Frame::Original { sigma } = o.frame else {
                return Err(Error::Config("the comparison runs must use the original frame".into()));
            };
            let ok = close(sigma, map.sigma)
                && close(o.dx, derived.dx)
                && close(o.dt, derived.dt)
                && close(o.t_max, derived.t_max)
                && close(o.window, derived.window);
            if !ok {
                return Err(Error::Config(format!(
                    "original-frame resolution (dx {}, dt {}, window {}, t {}) does not match the map of the \
                     rescaled one (dx {}, dt {}, window {}, t {})",
                    o.dx, o.dt, o.window, o.t_max, derived.dx, derived.dt, derived.window, derived.t_max
                )));
            }
            o.clone()
        }
    };
    let n = cfg.replicas;
    if n < 2 {
        return Err(Error::Estimation("need at least two replicas per frame".into()));
    }
    let r_rescaled = final_edges(f, &cfg.rescaled, cfg.seed, 0, n)?;
    let r_original_mapped: Vec<f64> = final_edges(f, &original, cfg.seed, n as u64, n)?
        .into_iter()
        .map(|r| map.map(Quantity::Space, r, Direction::ToRescaled))
        .collect();
    let KsResult { statistic, p_value } = ks_two_sample(&r_rescaled, &r_original_mapped);
    Ok(FrameTestReport {
        sigma: map.sigma,
        t_obs: cfg.rescaled.t_max,
        ks_statistic: statistic,
        p_value,
        passes: p_value >= FRAME_TEST_LEVEL,
        r_rescaled,
        r_original_mapped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_sigma_is_the_identity() {
        let m = FrameMap::new(1.0).unwrap();
        for q in [Quantity::Time, Quantity::Space, Quantity::Speed] {
            assert_eq!(m.map(q, 3.7, Direction::ToOriginal), 3.7);
        }
    }

    #[test]
    fn reference_maps() {
        assert_eq!(map_observable(2.0, Quantity::Space, 1.0, Direction::ToOriginal).unwrap(), 0.25);
        for sigma in [1.5, 2.0, 3.0] {
            let m = FrameMap::new(sigma).unwrap();
            let c_f = 1.0;
            let v = m.map(Quantity::Speed, c_f * m.epsilon(), Direction::ToOriginal);
            assert!((sigma * sigma * v - c_f).abs() < 1e-14);
        }
        assert!(matches!(map_observable(0.0, Quantity::Time, 1.0, Direction::ToOriginal), Err(Error::Domain(_))));
        assert!(map_observable(-1.0, Quantity::Time, 1.0, Direction::ToOriginal).is_err());
    }

    #[test]
    fn mismatched_resolution_is_rejected() {
        let mut p = rescaled_params(1.5, 0.1, 0.004, 0.5).unwrap();
        p.window = 40.0;
        let mut o = FrameMap::new(1.5).unwrap().original_params(&p).unwrap();
        o.dx *= 1.01;
        let cfg = FrameTestConfig { rescaled: p, original: Some(o), replicas: 4, seed: 1 };
        assert!(matches!(frame_equivalence_test(&NonlinearitySpec::fisher_kpp(), &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn derived_original_params_keep_the_lattice_ratios() {
        let p = rescaled_params(2.0, 0.1, 0.004, 10.0).unwrap();
        let o = FrameMap::new(2.0).unwrap().original_params(&p).unwrap();
        assert!((o.dt / (o.dx * o.dx) - p.dt / (p.dx * p.dx)).abs() < 1e-12);
        assert!((o.tau() - p.tau()).abs() < 1e-12);
        assert_eq!(o.n_cells(), p.n_cells());
    }

    proptest! {
        #[test]
        fn noise_identity_holds(sigma in 0.01f64..100.0) {
            let m = FrameMap::new(sigma).unwrap();
            prop_assert!((m.noise_identity() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn maps_invert(sigma in 0.05f64..20.0, v in -1e3f64..1e3) {
            let m = FrameMap::new(sigma).unwrap();
            for q in [Quantity::Time, Quantity::Space, Quantity::Speed] {
                let back = m.map(q, m.map(q, v, Direction::ToOriginal), Direction::ToRescaled);
                prop_assert!((back - v).abs() <= 1e-12 * v.abs().max(1e-300));
            }
        }
    }
}
