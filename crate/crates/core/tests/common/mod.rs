//! Reference computations shared by the oracle and acceptance targets.
#![allow(dead_code)]

use srec::em::TrajectoryRecord;
use srec::linalg::Matrix;
use srec::model::{Event, ItemId, LatentState, ModelParams, Side, Time, UserId};
use srec::probit::{default_thresholds, normal_cdf, RatingScale};
use srec::FilterState;

pub fn t(days: f64) -> Time {
    Time::new(days).unwrap()
}

pub fn five_level() -> RatingScale<f64> {
    default_thresholds(5, -1.5, 1.0).unwrap()
}

/// Lentz continued fraction for erfc, valid for x > 0 away from zero.
pub fn erfc_cf(x: f64) -> f64 {
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for n in 1..2000 {
        let a = n as f64 / 2.0;
        d = x + a * d;
        d = if d.abs() < tiny { tiny } else { d };
        c = x + a / c;
        c = if c.abs() < tiny { tiny } else { c };
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (std::f64::consts::PI.sqrt() * f)
}

/// Composite Simpson over [a, b] with n (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + k as f64 * h);
    }
    s * h / 3.0
}

/// First and second moments of N(mu, sigma²) restricted to [lo, hi].
pub fn quadrature_moments(mu: f64, sigma: f64, lo: f64, hi: f64) -> (f64, f64) {
    // Standardized coordinates; infinite ends are cut 12 sd out.
    let za = (lo - mu) / sigma;
    let zb = (hi - mu) / sigma;
    let a = if za.is_finite() { za } else { (-12.0_f64).min(zb - 12.0) };
    let b = if zb.is_finite() { zb } else { 12.0_f64.max(za + 12.0) };
    let phi = |z: f64| (-0.5 * z * z).exp();
    let n = 20_000;
    let z0 = simpson(phi, a, b, n);
    let z1 = simpson(|z| z * phi(z), a, b, n) / z0;
    let z2 = simpson(|z| z * z * phi(z), a, b, n) / z0;
    (mu + sigma * z1, mu * mu + 2.0 * mu * sigma * z1 + sigma * sigma * z2)
}

/// Exact posterior means of (u, v) for d = 1 on a 400×400 grid spanning ±6 prior sd.
pub fn grid_posterior(
    prior_u: (f64, f64),
    prior_v: (f64, f64),
    levels: &[u16],
    sigma_e: f64,
    scale: &RatingScale<f64>,
) -> (f64, f64) {
    let n = 400;
    let (mu_u, sd_u) = prior_u;
    let (mu_v, sd_v) = prior_v;
    let axis = |m: f64, s: f64| -> Vec<f64> { (0..n).map(|k| m - 6.0 * s + 12.0 * s * (k as f64 + 0.5) / n as f64).collect() };
    let us = axis(mu_u, sd_u);
    let vs = axis(mu_v, sd_v);
    let mut logw = Vec::with_capacity(n * n);
    for &u in &us {
        for &v in &vs {
            let mut lp = -0.5 * ((u - mu_u) / sd_u).powi(2) - 0.5 * ((v - mu_v) / sd_v).powi(2);
            for &l in levels {
                let (lo, hi) = scale.bounds(l).unwrap();
                let p = normal_cdf((hi - u * v) / sigma_e) - normal_cdf((lo - u * v) / sigma_e);
                lp += p.max(1e-300).ln();
            }
            logw.push(lp);
        }
    }
    let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut eu, mut ev) = (0.0, 0.0, 0.0);
    for (i, &u) in us.iter().enumerate() {
        for (j, &v) in vs.iter().enumerate() {
            let w = (logw[i * n + j] - top).exp();
            z += w;
            eu += w * u;
            ev += w * v;
        }
    }
    (eu / z, ev / z)
}

/// Posterior means after one batch of same-time ratings of a single pair.
pub fn filter_posterior(
    prior_u: (f64, f64),
    prior_v: (f64, f64),
    levels: &[u16],
    sigma_e: f64,
    scale: &RatingScale<f64>,
) -> (f64, f64) {
    let params = ModelParams::new(sigma_e * sigma_e, 1e-2, 1e-2, 1).unwrap();
    let mut fs = FilterState::new(params, scale.clone()).unwrap();
    let at = t(10.0);
    let state = |(m, s): (f64, f64)| LatentState::new(vec![m], Matrix::scaled_identity(1, s * s), at).unwrap();
    fs.insert_state(Side::User, 0, state(prior_u), at).unwrap();
    fs.insert_state(Side::Item, 0, state(prior_v), at).unwrap();
    let batch: Vec<Event> = levels.iter().map(|&l| Event::rating(10.0, 0, 0, l)).collect();
    fs.process_batch(&batch).unwrap();
    (fs.user(UserId(0)).unwrap().mean[0], fs.item(ItemId(0)).unwrap().mean[0])
}

pub type GridCase = ((f64, f64), (f64, f64), &'static [u16], f64);

/// Priors chosen away from the sign-flip symmetry so the exact means are informative.
pub const GRID_CASES: [GridCase; 6] = [
    ((1.0, 0.5), (1.0, 0.5), &[5], 1.0),
    ((1.0, 0.5), (0.8, 0.4), &[4, 4], 1.0),
    ((0.8, 0.4), (1.2, 0.5), &[2, 3, 2], 1.0),
    ((1.5, 0.3), (-1.0, 0.3), &[1], 0.7),
    ((0.5, 0.5), (1.0, 0.4), &[5, 4, 5], 1.0),
    ((-1.0, 0.5), (1.0, 0.5), &[3, 2], 0.8),
];

/// Largest gap between filter and grid means over the fixed cases.
pub fn grid_case_max_error() -> f64 {
    let scale = five_level();
    GRID_CASES
        .iter()
        .map(|&(pu, pv, levels, sigma_e)| {
            let (gu, gv) = grid_posterior(pu, pv, levels, sigma_e, &scale);
            let (fu, fv) = filter_posterior(pu, pv, levels, sigma_e, &scale);
            (gu - fu).abs().max((gv - fv).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-record scalar chain with given filtered posteriors.
pub fn chain(m: [f64; 2], p: [f64; 2], times: [f64; 2]) -> TrajectoryRecord<f64> {
    TrajectoryRecord {
        side: Side::User,
        id: 0,
        times: vec![t(times[0]), t(times[1])],
        birth_prior: LatentState::standard(1, t(times[0])),
        means: vec![vec![m[0]], vec![m[1]]],
        covs: vec![vec![p[0]], vec![p[1]]],
        rated: vec![true, true],
    }
}

/// A scalar two-observation chain solved both ways.
pub struct ChainReference {
    pub record: TrajectoryRecord<f64>,
    pub q: f64,
    pub means: [f64; 2],
    /// Joint covariance entries (11, 12, 22).
    pub cov: [f64; 3],
}

/// u1 ~ N(m0, p0), y1 = u1 + e1, u2 = u1 + w, y2 = u2 + e2.
pub fn chain_reference() -> ChainReference {
    let (m0, p0) = (0.3, 1.0);
    let (r1, r2) = (0.4, 0.25);
    let (y1, y2) = (1.1, -0.2);
    let q = 0.05;
    let (t1, t2) = (2.0, 6.0);
    let qt = q * (t2 - t1);

    // Forward Kalman filter.
    let k1 = p0 / (p0 + r1);
    let f1 = m0 + k1 * (y1 - m0);
    let pf1 = (1.0 - k1) * p0;
    let pp2 = pf1 + qt;
    let k2 = pp2 / (pp2 + r2);
    let f2 = f1 + k2 * (y2 - f1);
    let pf2 = (1.0 - k2) * pp2;

    // Joint precision of (u1, u2) given both observations.
    let a11 = 1.0 / p0 + 1.0 / r1 + 1.0 / qt;
    let a12 = -1.0 / qt;
    let a22 = 1.0 / qt + 1.0 / r2;
    let b1 = m0 / p0 + y1 / r1;
    let b2 = y2 / r2;
    let det = a11 * a22 - a12 * a12;
    let (c11, c12, c22) = (a22 / det, -a12 / det, a11 / det);
    ChainReference {
        record: chain([f1, f2], [pf1, pf2], [t1, t2]),
        q,
        means: [c11 * b1 + c12 * b2, c12 * b1 + c22 * b2],
        cov: [c11, c12, c22],
    }
}
