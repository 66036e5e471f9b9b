use frontlab_core::estimators::{estimate_stationary, eta_moment, BurnIn, StationaryConfig, StationaryRun};
use frontlab_core::{Frame, NonlinearitySpec, SimParams};

fn run(f: &NonlinearitySpec, etas: Vec<f64>, seed: u64) -> StationaryRun {
    let mut p = SimParams::new(Frame::Original { sigma: 1.0 }, 0.1, 0.004, 220.0).unwrap();
    p.window = 150.0;
    let mut cfg = StationaryConfig::new(p, seed);
    cfg.burn_in = BurnIn::Fixed { t: 20.0 };
    cfg.etas = etas;
    cfg.quantiles = vec![0.1, 0.5, 0.9, 0.99];
    estimate_stationary(f, &cfg).unwrap()
}

#[test]
fn kpp_constants_coincide_with_the_mass() {
    let r = run(&NonlinearitySpec::fisher_kpp(), vec![], 1);
    let s = &r.summary;
    assert_eq!(s.c_f_hat, s.mass_hat);
    assert!((s.d_hat.value - s.mass_hat.value).abs() < 1e-9 * s.mass_hat.value);
    assert!(s.d_hat.value >= 0.0 && s.mass_hat.value > 0.5);
    let w: Vec<f64> = s.width_quantiles.iter().map(|q| q.1).collect();
    assert!(w.windows(2).all(|p| p[0] <= p[1]) && w.iter().all(|v| v.is_finite()));
}

#[test]
fn drift_integral_is_dominated_by_the_holder_moment() {
    for f in [NonlinearitySpec::power(0.8).unwrap(), NonlinearitySpec::negative_tent(), NonlinearitySpec::fisher_kpp()] {
        assert!(f.verify_bound(2001).unwrap().holds);
        let r = run(&f, vec![f.gamma(), 1.0], 2);
        let gamma = f.gamma();
        let series = &r.samples.eta.iter().find(|(e, _)| *e == gamma).unwrap().1;
        for (cf, m) in r.samples.c_f.iter().zip(series) {
            assert!(cf.abs() <= f.k_tilde() * m * (1.0 + 1e-12));
        }
        let bound = eta_moment(&r.samples, gamma).unwrap();
        assert!(r.summary.c_f_hat.value.abs() <= f.k_tilde() * bound.value);
        assert_eq!(eta_moment(&r.samples, 1.0).unwrap(), r.summary.mass_hat);
    }
}

#[test]
fn sign_of_the_drift_integral_follows_f() {
    let neg = run(&NonlinearitySpec::negative_tent(), vec![], 3).summary;
    assert!(neg.c_f_hat.value + 3.0 * neg.c_f_hat.stderr < 0.0);
    let pos = run(&NonlinearitySpec::power(0.8).unwrap(), vec![], 3).summary;
    assert!(pos.c_f_hat.value - 3.0 * pos.c_f_hat.stderr > 0.0);
    assert!(pos.c_f_hat.stderr.is_finite() && pos.c_f_hat.stderr > 0.0);
}

#[test]
fn smaller_eta_gives_larger_moments() {
    let r = run(&NonlinearitySpec::zero(), vec![0.6, 0.8, 1.0], 4);
    let v: Vec<f64> = [0.6, 0.8, 1.0].iter().map(|&e| eta_moment(&r.samples, e).unwrap().value).collect();
    assert!(v[0] > v[1] && v[1] > v[2]);
    assert_eq!((r.summary.c_f_hat.value, r.summary.d_hat.value), (0.0, 0.0));
}
