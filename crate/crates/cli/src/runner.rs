//! One function per experiment kind, each producing result records.

use std::path::Path;

use frontlab_core::estimators::{
    estimate_speed, estimate_stationary, run_scaling_ensemble, scaling_limit_check, Estimate, ScalingEnsembleConfig,
    SpeedEstimate, SpeedMethod, SpeedReport, StationaryConfig, N_BATCHES,
};
use frontlab_core::girsanov::{drifted_ensemble, log_weight, reference_ensemble, weighted_estimate, GirsanovConfig};
use frontlab_core::replicas::run_replicas;
use frontlab_core::scaling::{frame_equivalence_test, FrameMap, FrameTestConfig, Quantity};
use frontlab_core::stats::{batch_means, mean, student_t_quantile, variance};
use frontlab_core::{
    Control, Error as CoreError, Frame, FrontState, Model, NoiseStream, ObservationLog, SimParams, Simulation,
};
use serde_json::json;

use crate::checkpoint::ResumeCheckpoint;
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{CliError, CliResult};
use crate::records::{require_dir, write_atomically, write_manifest, write_results, ResultRecord, Stamp, RESULTS_FILE};

/// Records of a finished run and where they were written.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<ResultRecord>,
    pub results_path: std::path::PathBuf,
}

/// Turns a core error into a CLI error, saving any attached checkpoint.
fn classify(cfg: &ExperimentConfig, e: CoreError) -> CliError {
    let message = e.to_string();
    let cp = match e {
        CoreError::WindowOverflow { checkpoint: Some(cp), .. } | CoreError::NumericalBlowup { checkpoint: Some(cp), .. } => *cp,
        other => return other.into(),
    };
    let saved = ResumeCheckpoint::new(cfg, cp, ObservationLog::default()).save(&cfg.output_dir, "failure");
    match saved {
        Ok(checkpoint) => CliError::Blowup { message, checkpoint },
        Err(io) => CliError::Estimation(format!("{message} (checkpoint could not be written: {io})")),
    }
}

trait Lift<T> {
    fn lift(self, cfg: &ExperimentConfig) -> CliResult<T>;
}

impl<T> Lift<T> for frontlab_core::Result<T> {
    fn lift(self, cfg: &ExperimentConfig) -> CliResult<T> {
        self.map_err(|e| classify(cfg, e))
    }
}

/// Runs `cfg`, writing the manifest and `results.jsonl` into its output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> CliResult<RunOutcome> {
    cfg.validate()?;
    require_dir(&cfg.output_dir)?;
    write_manifest(cfg)?;
    let stamp = Stamp::new(cfg);
    let records = match cfg.experiment {
        ExperimentKind::DeterministicKpp => speed_single(cfg, &stamp)?,
        ExperimentKind::SpeedVsSigma => speed_vs_sigma(cfg, &stamp)?,
        ExperimentKind::VoterMass => voter_mass(cfg, &stamp)?,
        ExperimentKind::StationaryCf => stationary(cfg, &stamp)?,
        ExperimentKind::ScalingLimit => scaling(cfg, &stamp)?,
        ExperimentKind::GirsanovCheck => girsanov(cfg, &stamp)?,
        ExperimentKind::FrameCheck => frames(cfg, &stamp)?,
        ExperimentKind::EdgeTail => edge_tail(cfg, &stamp)?,
        ExperimentKind::Simulate => simulate(cfg, &stamp)?,
    };
    let results_path = write_results(&cfg.output_dir, RESULTS_FILE, &records)?;
    Ok(RunOutcome { records, results_path })
}

fn log_name(replica: u64) -> String {
    format!("log_{replica:04}.csv")
}

fn write_log(dir: &Path, replica: u64, log: &ObservationLog) -> CliResult<()> {
    write_atomically(&dir.join(log_name(replica)), log.to_csv().as_bytes())
}

fn model_for(cfg: &ExperimentConfig) -> Model {
    if cfg.options.voter {
        Model::voter(cfg.nonlinearity.clone())
    } else {
        Model::drifted(cfg.nonlinearity.clone())
    }
}

/// Pools per-replica estimates into `(mean, stderr, df)`.
///
/// The stderr is the larger of the batch-means value `sqrt(sum se^2) / n` and
/// the between-replica spread; batch means alone run low when the integrand
/// decorrelates slowly.
fn pool(values: &[f64], stderrs: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let within = (stderrs.iter().map(|s| s * s).sum::<f64>()).sqrt() / n;
    let between = if values.len() > 1 { (variance(values) / n).sqrt() } else { 0.0 };
    if between > within {
        (mean(values), between, n - 1.0)
    } else {
        (mean(values), within, n * N_BATCHES as f64 - 1.0)
    }
}

fn ci95(se: f64, df: f64) -> f64 {
    student_t_quantile(0.975, df) * se
}

fn speed_runs(cfg: &ExperimentConfig, params: &SimParams) -> CliResult<Vec<SpeedReport>> {
    let mut p = params.clone();
    if p.log_every == 0 {
        let interval = match cfg.options.speed_log_interval {
            i if i > 0.0 => i,
            _ if p.t_max >= 200.0 => 1.0,
            _ => 0.1,
        };
        p.log_every = ((interval / p.dt).round() as usize).max(1);
    }
    let model = model_for(cfg);
    let out = &cfg.output_dir;
    run_replicas(cfg.replicas, |k| {
        let mut sim = Simulation::from_step(0.0, model.clone(), p.clone(), NoiseStream::new(cfg.seed, k))?;
        let log = sim.run()?;
        if cfg.options.raw_logs {
            write_log(out, k, &log).map_err(|e| CoreError::Config(e.to_string()))?;
        }
        estimate_speed(&log, cfg.options.burn_frac)
    })
    .lift(cfg)
}

fn speed_records(
    stamp: &Stamp,
    frame: &Frame,
    reports: &[SpeedReport],
    x: Option<f64>,
) -> CliResult<Vec<(SpeedMethod, f64, f64, f64, ResultRecord)>> {
    let mut out = Vec::new();
    for method in [SpeedMethod::LsFit, SpeedMethod::SubadditiveIncrements, SpeedMethod::MartingaleCompensated] {
        let ests: Vec<SpeedEstimate> = reports.iter().filter_map(|r| r.get(method)).collect();
        if ests.len() != reports.len() {
            continue;
        }
        let v: Vec<f64> = ests.iter().map(|e| e.v_hat).collect();
        let s: Vec<f64> = ests.iter().map(|e| e.stderr).collect();
        let (value, se, df) = pool(&v, &s);
        let name = serde_json::to_value(method).expect("method serializes");
        let mut rec = stamp
            .record(frame, &format!("speed_{}", name.as_str().unwrap_or("?")), value, Some(se))?
            .with_quantity(Quantity::Speed)
            .with("method", name)
            .with("ci95", ci95(se, df))
            .with("replicas", reports.len())
            .with("t_window", json!([ests[0].t_window.0, ests[0].t_window.1]));
        if v.len() > 1 {
            rec = rec.with("between_replica_stderr", (variance(&v) / v.len() as f64).sqrt());
        }
        if let Some(x) = x {
            rec = rec.with_x(x, None);
        }
        out.push((method, value, se, df, rec));
    }
    Ok(out)
}

fn speed_single(cfg: &ExperimentConfig, stamp: &Stamp) -> CliResult<Vec<ResultRecord>> {
    let reports = speed_runs(cfg, &cfg.params)?;
    let rows = speed_records(stamp, &cfg.params.frame, &reports, None)?;
    let preferred = rows
        .iter()
        .find(|r| r.0 == cfg.options.speed_method)
        .or_else(|| rows.iter().find(|r| r.0 == SpeedMethod::LsFit))
        .map(|r| r.4.clone());
    let mut records: Vec<ResultRecord> = rows.into_iter().map(|r| r.4).collect();
    if let Some(mut best) = preferred {
        best.estimator = "v_hat".into();
        records.push(best);
    }
    Ok(records)
}

fn speed_vs_sigma(cfg: &ExperimentConfig, stamp: &Stamp) -> CliResult<Vec<ResultRecord>> {
    let mut records = Vec::new();
    for &sigma in &cfg.options.sigmas {
        let map = FrameMap::new(sigma).lift(cfg)?;
        let mut params = cfg.params.clone();
        params.frame = Frame::Rescaled { epsilon: map.epsilon() };
        params.validate().lift(cfg)?;
        let reports = speed_runs(cfg, &params)?;
        let rows = speed_records(stamp, &params.frame, &reports, Some(sigma))?;
        let preferred = rows
            .iter()
            .find(|r| r.0 == cfg.options.speed_method)
            .ok_or_else(|| CliError::Estimation(format!("speed method {:?} unavailable", cfg.options.speed_method)))?;
        // sigma^2 V(sigma) = sigma^4 V_rescaled
        let scale = sigma * sigma * map.map(Quantity::Speed, 1.0, frontlab_core::scaling::Direction::ToOriginal);
        let (value, se, df) = (preferred.1 * scale, preferred.2 * scale, preferred.3);
        let headline = stamp
            .record(&Frame::Original { sigma }, "sigma2_v", value, Some(se))?
            .with_x(sigma, None)
            .with("method", preferred.4.extra["method"].clone())
            .with("ci95", ci95(se, df))
            .with("epsilon", map.epsilon());
        records.extend(rows.into_iter().map(|r| r.4));
        records.push(headline);
    }
    Ok(records)
}

fn voter_mass(cfg: &ExperimentConfig, stamp: &Stamp) -> CliResult<Vec<ResultRecord>> {
    let (lo, hi) = cfg.options.mass_window;
    let p = &cfg.params;
    if p.t_max + 1e-9 < hi {
        return Err(CliError::Estimation(format!("t_max {} ends before the mass window {hi}", p.t_max)));
    }
    let model = Model::voter(cfg.nonlinearity.clone());
    let logs = run_replicas(cfg.replicas, |k| {
        let mut sim = Simulation::from_step(0.0, model.clone(), p.clone(), NoiseStream::new(cfg.seed, k))?;
        sim.run()
    })
    .lift(cfg)?;
    if cfg.options.raw_logs {
        for (k, log) in logs.iter().enumerate() {
            write_log(&cfg.output_dir, k as u64, log)?;
        }
    }
    let tol = 0.5 * p.dt;
    let mut means = Vec::new();
    let mut ses = Vec::new();
    let mut pre = Vec::new();
    for log in &logs {
        let window: Vec<_> = log.records.iter().filter(|r| r.t >= lo - tol && r.t <= hi + tol).collect();
        let mass: Vec<f64> = window.iter().map(|r| r.mass).collect();
        let est = batch_means(&mass, N_BATCHES).lift(cfg)?;
        means.push(est.mean);
        ses.push(est.stderr);
        let (first, last) = (window[0], window[window.len() - 1]);
        pre.push((last.a_t - first.a_t) / (last.t - first.t));
    }
    let frame = &p.frame;
    let (value, se, df) = pool(&means, &ses);
    let mut records = vec![
        stamp
            .record(frame, "mass_avg", value, Some(se))?
            .with("window", json!([lo, hi]))
            .with("ci95", ci95(se, df))
            .with("dx", p.dx),
        stamp.record(frame, "mass_avg_pre_resampling", mean(&pre), None)?.with("window", json!([lo, hi])),
    ];
    let n_units = p.t_max.floor() as usize;
    for unit in 1..=n_units {
        let t = unit as f64;
        let at: Vec<f64> = logs
            .iter()
            .filter_map(|l| l.records.iter().find(|r| (r.t - t).abs() <= tol).map(|r| r.mass))
            .collect();
        if at.len() != logs.len() {
            continue;
        }
        let se = (at.len() > 1).then(|| (variance(&at) / at.len() as f64).sqrt());
        records.push(stamp.record(frame, "mass_at_t", mean(&at), se)?.with_x(t, Some(Quantity::Time)));
    }
    Ok(records)
}

fn pooled(ests: &[Estimate]) -> (f64, f64, f64) {
    let v: Vec<f64> = ests.iter().map(|e| e.value).collect();
    let s: Vec<f64> = ests.iter().map(|e| e.stderr).collect();
    pool(&v, &s)
}

fn stationary(cfg: &ExperimentConfig, stamp: &Stamp) -> CliResult<Vec<ResultRecord>> {
    let o = &cfg.options;
    let runs = run_replicas(cfg.replicas, |k| {
        let mut sc = StationaryConfig::new(cfg.params.clone(), cfg.seed);
        sc.replica_id = k;
        sc.burn_in = o.burn_in;
        sc.sample_interval = o.sample_interval;
        sc.etas = o.etas.clone();
        sc.quantiles = o.quantiles.clone();
        estimate_stationary(&cfg.nonlinearity, &sc)
    })
    .lift(cfg)?;
    let frame = &cfg.params.frame;
    let mut records = Vec::new();
    for (name, pick) in [
        ("c_f_hat", (|s| s.c_f_hat) as fn(&frontlab_core::estimators::StationarySummary) -> Estimate),
        ("d_hat", |s| s.d_hat),
        ("mass_hat", |s| s.mass_hat),
    ] {
        let ests: Vec<Estimate> = runs.iter().map(|r| pick(&r.summary)).collect();
        let (v, se, df) = pooled(&ests);
        records.push(stamp.record(frame, name, v, Some(se))?.with("ci95", ci95(se, df)));
    }
    let state_mass: Vec<Estimate> = runs
        .iter()
        .map(|r| batch_means(&r.samples.state_mass, N_BATCHES).map(|e| Estimate { value: e.mean, stderr: e.stderr }))
        .collect::<frontlab_core::Result<_>>()
        .lift(cfg)?;
    let (v, se, _) = pooled(&state_mass);
    records.push(stamp.record(frame, "state_mass_hat", v, Some(se))?);

    for &eta in &o.etas {
        let ests: Vec<Estimate> = runs
            .iter()
            .map(|r| frontlab_core::estimators::eta_moment(&r.samples, eta))
            .collect::<frontlab_core::Result<_>>()
            .lift(cfg)?;
        let (v, se, df) = pooled(&ests);
        let mut halves = Vec::new();
        for run in &runs {
            let series = &run.samples.eta.iter().find(|(e, _)| *e == eta).expect("tracked").1;
            let mid = series.len() / 2;
            let a = batch_means(&series[..mid], N_BATCHES / 2).lift(cfg)?;
            let b = batch_means(&series[mid..], N_BATCHES / 2).lift(cfg)?;
            halves.push((a, b));
        }
        let h1 = halves.iter().map(|h| h.0.mean).sum::<f64>() / halves.len() as f64;
        let h2 = halves.iter().map(|h| h.1.mean).sum::<f64>() / halves.len() as f64;
        let s1 = halves.iter().map(|h| h.0.stderr.powi(2)).sum::<f64>().sqrt() / halves.len() as f64;
        let s2 = halves.iter().map(|h| h.1.stderr.powi(2)).sum::<f64>().sqrt() / halves.len() as f64;
        records.push(
            stamp
                .record(frame, "eta_moment", v, Some(se))?
                .with_x(eta, None)
                .with("eta", eta)
                .with("ci95", ci95(se, df))
                .with("first_half", h1)
                .with("first_half_stderr", s1)
                .with("second_half", h2)
                .with("second_half_stderr", s2),
        );
    }
    for (i, &q) in o.quantiles.iter().enumerate() {
        let v: Vec<f64> = runs.iter().map(|r| r.summary.width_quantiles[i].1).collect();
        records.push(stamp.record(frame, "width_quantile", mean(&v), None)?.with_x(q, None).with_quantity(Quantity::Space));
    }
    let burn: Vec<f64> = runs.iter().map(|r| r.summary.burn_in).collect();
    let capped = runs.iter().any(|r| r.summary.burn_in_capped);
    records.push(
        stamp
            .record(frame, "burn_in", mean(&burn), None)?
            .with_quantity(Quantity::Time)
            .with("capped", capped)
            .with("n_samples", runs[0].summary.n_samples),
    );
    Ok(records)
}

fn scaling(cfg: &ExperimentConfig, stamp: &Stamp) -> CliResult<Vec<ResultRecord>> {
    let sc = ScalingEnsembleConfig {
        params: cfg.params.clone(),
        a_values: cfg.options.a_values.clone(),
        replicas: cfg.replicas,
        burn_in: cfg.options.scaling_burn_in,
        seed: cfg.seed,
    };
    let ensemble = run_scaling_ensemble(&cfg.nonlinearity, &sc).lift(cfg)?;
    let r = scaling_limit_check(&ensemble, &sc.a_values).lift(cfg)?;
    let frame = &cfg.params.frame;
    let mut records = Vec::new();
    for (name, s) in [
        ("var_slope_xi", r.var_slope_xi),
        ("var_slope_m", r.var_slope_m),
        ("cov_slope", r.cov_slope),
        ("a_slope", r.a_slope),
        ("af_slope", r.af_slope),
    ] {
        records.push(stamp.record(frame, name, s.value, Some(s.stderr))?.with("replicas", r.n_replicas));
    }
    for p in &r.points {
        for (q, v) in [("var_xi", p.var_xi), ("var_m", p.var_m), ("cov", p.cov), ("a_mean", p.a_mean), ("af_mean", p.af_mean)] {
            records.push(stamp.record(frame, "scaling_point", v, None)?.with_x(p.a, None).with("quantity", q));
        }
    }
    Ok(records)
}

fn girsanov(cfg: &ExperimentConfig, stamp: &Stamp) -> CliResult<Vec<ResultRecord>> {
    let o = &cfg.options;
    let frame = cfg.params.frame;
    let r = o.threshold;
    let beyond = |s: &FrontState| -> frontlab_core::Result<f64> {
        Ok(if s.front_edges(cfg.params.eps_front)?.right > r { 1.0 } else { 0.0 })
    };
    let mut records = Vec::new();
    for &t in &o.times {
        let mut params = cfg.params.clone();
        params.t_max = t;
        let gc = GirsanovConfig { params, replicas: cfg.replicas, seed: cfg.seed, mode: o.weight_mode, r0: 0.0 };
        let reference = reference_ensemble(&cfg.nonlinearity, &gc).lift(cfg)?;
        let lw: Vec<f64> = reference.iter().map(|e| log_weight(&e.acc, &frame, o.weight_mode)).collect::<Result<_, _>>().lift(cfg)?;
        let w: Vec<f64> = lw.iter().map(|z| z.exp()).collect();
        let ess = w.iter().sum::<f64>().powi(2) / w.iter().map(|x| x * x).sum::<f64>();
        let mode = o.weight_mode.name();
        records.push(
            stamp
                .record(&frame, "weight_mean", mean(&w), Some((variance(&w) / w.len() as f64).sqrt()))?
                .with_x(t, Some(Quantity::Time))
                .with("ess", ess)
                .with("mode", mode.clone()),
        );
        let g: Vec<f64> = reference.iter().map(|e| beyond(&e.state)).collect::<Result<_, _>>().lift(cfg)?;
        let is = weighted_estimate(&lw, &g, o.weight_mode).lift(cfg)?;
        records.push(
            stamp
                .record(&frame, "is_probability", is.value, Some(is.stderr))?
                .with_x(t, Some(Quantity::Time))
                .with("threshold", r)
                .with("ess", is.ess)
                .with("self_normalized", is.self_normalized)
                .with("self_normalized_stderr", is.self_normalized_stderr)
                .with("mode", mode.clone()),
        );
        let direct = drifted_ensemble(&cfg.nonlinearity, &gc).lift(cfg)?;
        let gd: Vec<f64> = direct.iter().map(|e| beyond(&e.state)).collect::<Result<_, _>>().lift(cfg)?;
        let (dv, ds) = (mean(&gd), (variance(&gd) / gd.len() as f64).sqrt());
        records.push(
            stamp
                .record(&frame, "direct_probability", dv, Some(ds))?
                .with_x(t, Some(Quantity::Time))
                .with("threshold", r),
        );
        let combined = is.stderr.hypot(ds);
        let gap = if combined > 0.0 { (is.value - dv).abs() / combined } else { 0.0 };
        records.push(stamp.record(&frame, "is_direct_gap", gap, None)?.frameless().with_x(t, None));
    }
    Ok(records)
}

fn edge_tail(cfg: &ExperimentConfig, stamp: &Stamp) -> CliResult<Vec<ResultRecord>> {
    let model = model_for(cfg);
    let p = &cfg.params;
    let excursions = run_replicas(cfg.replicas, |k| {
        let mut sim = Simulation::from_step(0.0, model.clone(), p.clone(), NoiseStream::new(cfg.seed, k))?;
        let r0 = sim.state.front_edges(p.eps_front)?.right;
        let mut sup = 0.0f64;
        let mut failure = None;
        sim.run_until(p.t_max, |state, _| match state.front_edges(p.eps_front) {
            Ok(e) => {
                sup = sup.max((e.right - r0).abs());
                Control::Continue
            }
            Err(e) => {
                failure = Some(e);
                Control::Stop
            }
        })?;
        failure.map_or(Ok(sup), Err)
    })
    .lift(cfg)?;
    let n = excursions.len() as f64;
    let frame = &p.frame;
    let mut records = Vec::new();
    for &b in &cfg.options.tail_levels {
        let count = excursions.iter().filter(|&&s| s > b).count();
        let prob = count as f64 / n;
        records.push(
            stamp
                .record(frame, "tail_probability", prob, Some((prob * (1.0 - prob) / n).sqrt()))?
                .with_x(b, Some(Quantity::Space))
                .with("count", count)
                .with("horizon", p.t_max),
        );
    }
    let se = (variance(&excursions) / n).sqrt();
    records.push(
        stamp
            .record(frame, "excursion_mean", mean(&excursions), Some(se))?
            .with_quantity(Quantity::Space)
            .with("horizon", p.t_max),
    );
    Ok(records)
}

fn frames(cfg: &ExperimentConfig, stamp: &Stamp) -> CliResult<Vec<ResultRecord>> {
    let fc = FrameTestConfig { rescaled: cfg.params.clone(), original: None, replicas: cfg.replicas, seed: cfg.seed };
    let rep = frame_equivalence_test(&cfg.nonlinearity, &fc).lift(cfg)?;
    let frame = &cfg.params.frame;
    Ok(vec![
        stamp.record(frame, "ks_statistic", rep.ks_statistic, None)?.with("t_obs", rep.t_obs),
        stamp
            .record(frame, "ks_p_value", rep.p_value, None)?
            .with("passes", rep.passes)
            .with("t_obs", rep.t_obs),
    ])
}

fn profile_points(state: &FrontState, eps: f64) -> frontlab_core::Result<serde_json::Value> {
    let cells = state.edge_cells(eps)?;
    let first = cells.left.saturating_sub(1);
    let last = (cells.right + 1).min(state.len() - 1);
    Ok((first..=last).map(|i| json!([state.cell_x(i), state.values()[i]])).collect())
}

fn final_records(stamp: &Stamp, sim: &Simulation, replica: u64) -> CliResult<Vec<ResultRecord>> {
    let frame = &sim.params().frame;
    let obs = sim.observe()?;
    let mut out = Vec::new();
    for (name, v, q) in [
        ("final_r", obs.r, Some(Quantity::Space)),
        ("final_l", obs.l, Some(Quantity::Space)),
        ("final_xi", obs.xi, Some(Quantity::Space)),
        ("final_mass", obs.mass, None),
        ("final_z", obs.z_t, None),
    ] {
        let mut r = stamp.record(frame, name, v, None)?.with("replica", replica).with("t", obs.t);
        if let Some(q) = q {
            r = r.with_quantity(q);
        }
        out.push(r);
    }
    Ok(out)
}

fn simulate(cfg: &ExperimentConfig, stamp: &Stamp) -> CliResult<Vec<ResultRecord>> {
    let model = model_for(cfg);
    let p = cfg.params.clone();
    let o = &cfg.options;
    let snap_steps: Vec<u64> = o.snapshot_times.iter().map(|&t| p.steps_between(0.0, t)).collect();
    let per_replica = run_replicas(cfg.replicas, |k| {
        let mut sim = Simulation::from_step(0.0, model.clone(), p.clone(), NoiseStream::new(cfg.seed, k))?;
        let mut snaps = Vec::new();
        let mut failure = None;
        let t_end = o.stop_at.map_or(p.t_max, |s| s.min(p.t_max));
        let mut step = 0u64;
        let log = sim.run_until(t_end, |state, _| {
            step += 1;
            if snap_steps.contains(&step) {
                match profile_points(state, p.eps_front) {
                    Ok(points) => snaps.push((state.t(), points)),
                    Err(e) => {
                        failure = Some(e);
                        return Control::Stop;
                    }
                }
            }
            Control::Continue
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        Ok((sim, log, snaps))
    })
    .lift(cfg)?;

    let mut records = Vec::new();
    for (k, (sim, log, snaps)) in per_replica.into_iter().enumerate() {
        let k = k as u64;
        if o.stop_at.is_some_and(|s| s < p.t_max) {
            let path = ResumeCheckpoint::new(cfg, sim.checkpoint(), log).save(&cfg.output_dir, "checkpoint")?;
            records.push(
                stamp
                    .record(&p.frame, "paused_at", sim.state.t(), None)?
                    .with("replica", k)
                    .with("checkpoint", path.file_name().and_then(|n| n.to_str()).unwrap_or_default()),
            );
            continue;
        }
        write_log(&cfg.output_dir, k, &log)?;
        for (t, points) in snaps {
            records.push(stamp.record(&p.frame, "profile", t, None)?.with("replica", k).with("points", points));
        }
        records.extend(final_records(stamp, &sim, k)?);
    }
    Ok(records)
}

/// Continues a paused replica to the configured horizon.
///
/// Writes the full log as `log_NNNN.csv` and the final-state records as
/// `resume_NNNN.jsonl` into the configuration's output directory. With
/// `window`, the state is first padded to that width.
pub fn resume(path: &Path, window: Option<f64>) -> CliResult<RunOutcome> {
    let cp = ResumeCheckpoint::load(path)?;
    let cfg = &cp.config;
    require_dir(&cfg.output_dir)?;
    let mut run = cp.run.clone();
    if let Some(w) = window {
        let n_old = run.state.len();
        let n_new = (w / run.params.dx).round() as usize;
        if n_new < n_old {
            return Err(CliError::Config(format!("window {w} is narrower than the checkpoint's {}", run.params.window)));
        }
        let extra = (n_new - n_old) / 2;
        run.state.widen(extra);
        run.params.window = run.state.len() as f64 * run.params.dx;
    }
    let mut sim = Simulation::from_checkpoint(run).lift(cfg)?;
    let tail = sim.run_until(cfg.params.t_max, |_, _| Control::Continue).lift(cfg)?;
    let mut log = cp.log.clone();
    log.records.extend(tail.records);
    write_log(&cfg.output_dir, cp.replica, &log)?;
    let records = final_records(&Stamp::new(cfg), &sim, cp.replica)?;
    let results_path = write_results(&cfg.output_dir, &format!("resume_{:04}.jsonl", cp.replica), &records)?;
    Ok(RunOutcome { records, results_path })
}

/// Runs `job` on a dedicated pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, job: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    match threads {
        None => job(),
        Some(0) => Err(CliError::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?
            .install(job),
    }
}
