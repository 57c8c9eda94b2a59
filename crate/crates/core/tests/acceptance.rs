//! Acceptance suite: one PASS/FAIL line per criterion; exits non-zero if any fail.
//!
//! Criteria 6 to 8 read the MovieLens "latest-small" ratings file from
//! `$SREC_ML_LATEST` or `data/ml-latest-small/ratings.csv` at the workspace root.

use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use srec::em::{em_fit, smooth_entity, EmConfig, EmFit};
use srec::eval::{distinct_times, mean_stars_before, split_time, DAYS_PER_YEAR};
use srec::filter::propagate;
use srec::linalg::Matrix;
use srec::model::{auto_insert_births, Event, LatentState, ModelParams, Side, Time};
use srec::probit::{default_thresholds, TruncatedGaussian};
use srec::synthetic::{generate, SimConfig, SimOutput};
use srec::{correlation_decay, load_movielens, prequential_eval, EvalProtocol, FilterConfig, FilterState, RatingScale};

mod common;
use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn small_instance_oracle() -> Outcome {
    let start = Instant::now();
    let err = grid_case_max_error();
    let secs = start.elapsed().as_secs_f64();
    outcome(err < 5e-2 && secs < 10.0, format!("max |filter - grid| = {err:.4} (< 0.05), {secs:.2} s (< 10 s)"))
}

fn smoother_oracle() -> Outcome {
    let r = chain_reference();
    let start = Instant::now();
    let s = match smooth_entity(&r.record, r.q, 0.0) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("smoother failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let err = [
        s.means[0][0] - r.means[0],
        s.means[1][0] - r.means[1],
        s.covs[0].get(0, 0) - r.cov[0],
        s.cross_covs[0].get(0, 0) - r.cov[1],
        s.covs[1].get(0, 0) - r.cov[2],
    ]
    .iter()
    .fold(0.0f64, |m, e| m.max(e.abs()));
    outcome(err < 1e-10 && secs < 1.0, format!("max error {err:.2e} (< 1e-10), {:.1} us", secs * 1e6))
}

fn recovery_config() -> SimConfig {
    SimConfig {
        params: ModelParams::new(0.5, 1e-2, 5e-3, 2).unwrap(),
        scale: five_level(),
        initial_users: 100,
        initial_items: 100,
        user_birth_rate: 100.0 / 365.0,
        item_birth_rate: 100.0 / 365.0,
        rating_rate: 0.9,
        horizon: 365.0,
        seed: 1,
    }
}

fn recovery_fit(sim: &SimOutput, scale: &RatingScale<f64>) -> (srec::Result<EmFit<f64>>, f64) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool");
    let init = ModelParams::new(1.0, 1e-3, 1e-3, 2).unwrap();
    let start = Instant::now();
    let fit = pool.install(|| em_fit(&sim.log.events, scale, init, &EmConfig::default()));
    (fit, start.elapsed().as_secs_f64())
}

fn parameter_recovery(cfg: &SimConfig, sim: &SimOutput, fit: &EmFit<f64>, secs: f64) -> Outcome {
    let truth = [cfg.params.sigma2_e, cfg.params.sigma2_u, cfg.params.sigma2_v];
    let got = [fit.params.sigma2_e, fit.params.sigma2_u, fit.params.sigma2_v];
    let within = truth.iter().zip(&got).all(|(&t, &g)| g >= t / 2.0 && g <= t * 2.0);
    outcome(
        within && secs < 300.0,
        format!(
            "{} ratings, {} users, {} items; sigma2_E {:.4} (truth 0.5), sigma2_U {:.5} (truth 0.01), sigma2_V {:.5} (truth 0.005); {secs:.1} s single-threaded (< 300 s)",
            sim.log.n_ratings(),
            sim.log.users.len(),
            sim.log.items.len(),
            got[0],
            got[1],
            got[2]
        ),
    )
}

fn em_convergence(fit: &EmFit<f64>) -> Outcome {
    let finite = fit.trace.iter().all(|r| {
        [r.sigma2_e, r.sigma2_u, r.sigma2_v].iter().all(|v| v.is_finite() && *v > 0.0 && *v < 1e3)
    });
    let settled_at = fit.trace.iter().find(|r| r.max_rel_change < 1e-3).map(|r| r.iter);
    let last = fit.trace.last().map_or(f64::NAN, |r| r.max_rel_change);
    let detail = match settled_at {
        Some(k) => format!("max relative change < 1e-3 at iteration {k}"),
        None => format!("max relative change still {last:.2e} after {} iterations (needs < 1e-3 within 30)", fit.trace.len()),
    };
    outcome(finite && settled_at.is_some_and(|k| k <= 30), format!("{detail}; no divergence: {finite}"))
}

fn invariant_suite() -> Outcome {
    let mut failures = Vec::new();
    let scale = five_level();
    let cfg = SimConfig { horizon: 60.0, initial_users: 30, initial_items: 30, seed: 3, ..recovery_config() };
    let sim = generate(&cfg).unwrap();
    let params = ModelParams::new(0.6, 1e-2, 5e-3, 2).unwrap();
    let replay = || {
        let mut fs = FilterState::new(params, scale.clone()).unwrap();
        fs.run_stream(&sim.log.events).unwrap();
        fs
    };
    let bits = |s: &LatentState<f64>| -> Vec<u64> { s.mean.iter().chain(s.cov.as_slice()).map(|x| x.to_bits()).collect() };

    let (a, b) = (replay(), replay());
    for side in [Side::User, Side::Item] {
        for (id, s) in a.population(side).iter() {
            if bits(s) != bits(b.population(side).get(id).unwrap()) {
                failures.push(format!("replay differs for {side:?} {id}"));
            }
            if s.cov.max_asymmetry() != 0.0 || !s.cov.is_psd(0.0) {
                failures.push(format!("covariance of {side:?} {id} not symmetric PSD"));
            }
        }
    }

    let mut c = a.clone();
    let later = c.now().days() + 1.0;
    c.process_batch(&[Event::rating(later, 0, 0, 4)]).unwrap();
    for side in [Side::User, Side::Item] {
        for (id, s) in a.population(side).iter() {
            if id != 0 && bits(s) != bits(c.population(side).get(id).unwrap()) {
                failures.push(format!("rating of (0, 0) touched {side:?} {id}"));
            }
        }
    }

    let s0: LatentState<f64> = LatentState::new(vec![0.2, -0.4], Matrix::scaled_identity(2, 0.3), Time::new(1.0).unwrap()).unwrap();
    let hop = propagate(&propagate(&s0, Time::new(4.0).unwrap(), 0.02).unwrap(), Time::new(11.0).unwrap(), 0.02).unwrap();
    let jump = propagate(&s0, Time::new(11.0).unwrap(), 0.02).unwrap();
    if (hop.cov.get(0, 0) - jump.cov.get(0, 0)).abs() > 1e-14 || (jump.cov.get(0, 0) - 0.5).abs() > 1e-14 {
        failures.push("propagation does not compose linearly".into());
    }

    let inf = f64::INFINITY;
    for &(mu, sigma) in &[(0.0, 1.0), (2.5, 0.6), (-4.0, 1.2), (8.0, 1.0)] {
        for (lo, hi) in [(-inf, -1.5), (-0.5, 0.5), (1.5, inf)] {
            let (m, s2) = TruncatedGaussian::new(mu, sigma, lo, hi).unwrap().moments().unwrap();
            let (qm, qs) = quadrature_moments(mu, sigma, lo, hi);
            if !(m >= lo && m <= hi) || (m - qm).abs() > 1e-8 || (s2 - qs).abs() > 1e-8 * qs.abs().max(1.0) {
                failures.push(format!("truncated moments off at mu={mu} sigma={sigma} [{lo}, {hi}]"));
            }
        }
    }

    let detail = if failures.is_empty() {
        format!("replay, symmetry/PSD, locality, propagation and truncated-moment checks green over {} ratings", sim.log.n_ratings())
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn dataset_path() -> PathBuf {
    std::env::var_os("SREC_ML_LATEST")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-latest-small/ratings.csv"))
}

struct Trained {
    events: Vec<Event>,
    scale: RatingScale<f64>,
    fit: EmFit<f64>,
}

fn movielens_criteria() -> [Outcome; 3] {
    let path = dataset_path();
    let missing = || outcome(false, format!("ratings file not found at {}; set SREC_ML_LATEST", path.display()));
    let Ok(file) = File::open(&path) else {
        return [missing(), missing(), missing()];
    };
    let broken = |e: srec::Error| {
        let msg = format!("could not run on {}: {e}", path.display());
        [outcome(false, msg.clone()), outcome(false, msg.clone()), outcome(false, msg)]
    };

    let start = Instant::now();
    let ml = match load_movielens(file) {
        Ok(ml) => ml,
        Err(e) => return broken(e),
    };
    let events = auto_insert_births(&ml.log.events);
    let (reproduction, trained) = match reproduce(&ml, events) {
        Ok(r) => r,
        Err(e) => return broken(e),
    };
    let secs = start.elapsed().as_secs_f64();
    let (rmse, baseline) = reproduction;
    let gain = baseline - rmse;
    let c6 = outcome(
        (0.63..=0.75).contains(&rmse) && gain >= 0.10 && secs < 900.0,
        format!("RMSE {rmse:.4} (in [0.63, 0.75]), baseline {baseline:.4}, gain {gain:.4} (>= 0.10), {secs:.0} s (< 900 s)"),
    );
    let c7 = half_times(&trained).unwrap_or_else(|e| outcome(false, e.to_string()));
    let c8 = throughput(&trained).unwrap_or_else(|e| outcome(false, e.to_string()));
    [c6, c7, c8]
}

fn reproduce(ml: &srec::eval::MovieLens, events: Vec<Event>) -> srec::Result<((f64, f64), Trained)> {
    let protocol = EvalProtocol::default();
    let split = split_time(&events, protocol.split_fraction)?;
    let probe = ml.rating_map(0.0);
    let center = mean_stars_before(&events, split, &probe)?;
    let map = ml.rating_map(center);
    let scale: RatingScale<f64> = map.scale();
    let base = &events[..events.partition_point(|e| e.time < split)];
    let config = EmConfig { rating_map: Some(map), ..EmConfig::default() };
    let fit = em_fit(base, &scale, ModelParams::default(), &config)?;
    let report = prequential_eval(&events, fit.params, &map, &protocol, FilterConfig::default(), center)?;
    Ok(((report.rmse_mean, report.baseline_rmse_mean), Trained { events, scale, fit }))
}

fn half_times(t: &Trained) -> srec::Result<Outcome> {
    let mut fs = FilterState::new(t.fit.params, t.scale.clone())?;
    fs.run_stream(&t.events)?;
    let at = fs.now();
    let user = correlation_decay(&fs, Side::User, &[0.0], at)?.half_time / DAYS_PER_YEAR;
    let item = correlation_decay(&fs, Side::Item, &[0.0], at)?.half_time / DAYS_PER_YEAR;
    Ok(outcome(
        user < item && (1.0..=10.0).contains(&user),
        format!("user half-time {user:.2} y (in [1, 10]), item half-time {item:.2} y (user < item)"),
    ))
}

fn throughput(t: &Trained) -> srec::Result<Outcome> {
    let params = ModelParams { dim: 16, ..t.fit.params };
    let mut fs = FilterState::new(params, t.scale.clone())?;
    let stats = fs.run_stream(&t.events)?;
    let expected = distinct_times(&t.events);
    let rate = stats.ratings as f64 / stats.wall_time.as_secs_f64();
    Ok(outcome(
        stats.batches == expected && rate >= 1e4,
        format!("{} batches for {expected} distinct times, {rate:.0} ratings/s at d = 16 (>= 10000)", stats.batches),
    ))
}

fn main() -> ExitCode {
    // Honour `cargo test -- <filter>` by running everything only when unfiltered.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if args.iter().any(|a| !"acceptance".contains(a.as_str())) {
        return ExitCode::SUCCESS;
    }

    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    let mut emit = |n: u8, name: &'static str, o: Outcome| {
        println!("criterion {n} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };

    emit(1, "small-instance grid oracle", small_instance_oracle());
    emit(2, "smoother joint-Gaussian oracle", smoother_oracle());

    let cfg = recovery_config();
    let sim = generate(&cfg).expect("recovery simulation");
    let scale = default_thresholds(5, -1.5, 1.0).unwrap();
    match recovery_fit(&sim, &scale) {
        (Ok(fit), secs) => {
            emit(3, "parameter recovery", parameter_recovery(&cfg, &sim, &fit, secs));
            emit(4, "invariant suite", invariant_suite());
            emit(5, "EM convergence", em_convergence(&fit));
        }
        (Err(e), _) => {
            emit(3, "parameter recovery", outcome(false, format!("em_fit failed: {e}")));
            emit(4, "invariant suite", invariant_suite());
            emit(5, "EM convergence", outcome(false, format!("em_fit failed: {e}")));
        }
    }

    let [c6, c7, c8] = movielens_criteria();
    emit(6, "MovieLens prequential RMSE", c6);
    emit(7, "half-time analytics", c7);
    emit(8, "stream throughput", c8);

    let failed: Vec<u8> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {} of {} criteria pass", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failing criteria {failed:?}");
        ExitCode::FAILURE
    }
}
