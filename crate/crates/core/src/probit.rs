//! Ordered-probit discretization and truncated-Gaussian moments.
//!
//! A rating level `k` is observed when the latent likeness falls in
//! `(π_k, π_{k+1}]`, with `π_1 = −∞` and `π_{K+1} = +∞`. Inference needs the
//! first two moments of a Gaussian truncated to one such interval; in the far
//! tails the ratio `(φ(e) − φ(f)) / (Φ(f) − Φ(e))` is evaluated through the
//! Mills ratio so it stays finite after `Φ` itself underflows.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Beyond this standardized distance the Mills ratio switches to its
/// continued-fraction expansion.
const TAIL_SWITCH: f64 = 6.0;

pub fn normal_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal cdf via `erfc`, accurate in relative terms in both tails.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper-tail probability `1 − Φ(x)`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// Mills ratio `(1 − Φ(x)) / φ(x)` for `x ≥ 0`.
pub fn mills_ratio(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x.is_infinite() {
        return 0.0;
    }
    if x <= TAIL_SWITCH {
        return normal_sf(x) / normal_pdf(x);
    }
    // R(x) = 1/(x + 1/(x + 2/(x + 3/(x + ...)))), modified Lentz.
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for n in 1..500 {
        let a = n as f64;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// First and second moments of a standard normal truncated to `(e, f)`.
pub fn standard_truncated_moments(e: f64, f: f64) -> Result<(f64, f64)> {
    let degenerate = || Error::DegenerateMass { mu: 0.0, lo: e, hi: f };
    if e.is_nan() || f.is_nan() || e >= f {
        return Err(degenerate());
    }
    if e == f64::NEG_INFINITY && f == f64::INFINITY {
        return Ok((0.0, 1.0));
    }
    if e >= 0.0 {
        return upper_tail_moments(e, f).ok_or_else(degenerate);
    }
    if f <= 0.0 {
        let (m1, m2) = upper_tail_moments(-f, -e).ok_or_else(degenerate)?;
        return Ok((-m1, m2));
    }
    // Interval straddles zero: the mass is at least of order (f − e)·φ(max).
    let mass = normal_cdf(f) - normal_cdf(e);
    if !(mass >= 1e-300) {
        return Err(degenerate());
    }
    let (pe, pf) = (normal_pdf(e), normal_pdf(f));
    let xe = if e.is_finite() { e * pe } else { 0.0 };
    let xf = if f.is_finite() { f * pf } else { 0.0 };
    Ok(((pe - pf) / mass, 1.0 + (xe - xf) / mass))
}

/// `0 ≤ e < f ≤ ∞`, everything divided through by `φ(e)`.
fn upper_tail_moments(e: f64, f: f64) -> Option<(f64, f64)> {
    let re = mills_ratio(e);
    let (r, rf, fr) = if f.is_infinite() {
        (0.0, 0.0, 0.0)
    } else {
        let r = (-0.5 * (f - e) * (f + e)).exp();
        (r, mills_ratio(f), f * r)
    };
    let denom = re - r * rf;
    if !(denom > 0.0) || !denom.is_finite() {
        return None;
    }
    let m1 = (1.0 - r) / denom;
    let m2 = 1.0 + (e - fr) / denom;
    Some((m1, m2))
}

/// Ordered thresholds `π_1 = −∞ < π_2 < … < π_K < π_{K+1} = +∞`.
#[derive(Clone, Debug, PartialEq)]
pub struct RatingScale<T> {
    thresholds: Vec<T>,
}

impl<T: Scalar> RatingScale<T> {
    /// From the `K − 1` finite interior thresholds.
    pub fn from_interior(interior: &[T]) -> Result<Self> {
        if interior.is_empty() {
            return Err(Error::invalid("a rating scale needs at least two levels"));
        }
        if !interior.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("interior thresholds must be finite"));
        }
        if interior.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("thresholds must be strictly increasing"));
        }
        let mut thresholds = Vec::with_capacity(interior.len() + 2);
        thresholds.push(T::neg_infinity());
        thresholds.extend_from_slice(interior);
        thresholds.push(T::infinity());
        Ok(RatingScale { thresholds })
    }

    pub fn levels(&self) -> usize {
        self.thresholds.len() - 1
    }

    /// All `K + 1` thresholds including the infinite ends.
    pub fn thresholds(&self) -> &[T] {
        &self.thresholds
    }

    pub fn interior(&self) -> &[T] {
        &self.thresholds[1..self.thresholds.len() - 1]
    }

    /// Interval `(π_k, π_{k+1}]` of level `k` (1-based).
    pub fn bounds(&self, level: u16) -> Result<(T, T)> {
        let k = level as usize;
        if k == 0 || k > self.levels() {
            return Err(Error::invalid(format!("level {level} outside 1..={}", self.levels())));
        }
        Ok((self.thresholds[k - 1], self.thresholds[k]))
    }

    /// The unique `k` with `x ∈ (π_k, π_{k+1}]`.
    pub fn discretize(&self, x: T) -> u16 {
        let below = self.interior().partition_point(|&p| p < x);
        (below + 1) as u16
    }

    pub fn cast<U: Scalar>(&self) -> RatingScale<U> {
        RatingScale { thresholds: self.thresholds.iter().map(|t| U::of(t.f64())).collect() }
    }
}

pub fn discretize<T: Scalar>(x: T, scale: &RatingScale<T>) -> u16 {
    scale.discretize(x)
}

/// Evenly spaced interior thresholds `anchor + (k − 2)·step`, `k = 2..=K`.
pub fn default_thresholds<T: Scalar>(levels: usize, anchor: T, step: T) -> Result<RatingScale<T>> {
    if levels < 2 {
        return Err(Error::invalid(format!("need at least 2 levels, got {levels}")));
    }
    if !(step > T::zero()) || !step.is_finite() || !anchor.is_finite() {
        return Err(Error::invalid("threshold step must be positive and the anchor finite"));
    }
    let interior: Vec<T> = (0..levels - 1).map(|i| anchor + T::of(i as f64) * step).collect();
    RatingScale::from_interior(&interior)
}

/// Affine correspondence between levels, star values and likeness.
///
/// Level `k` is worth `star_offset + star_step·k` stars. Thresholds sit
/// halfway between adjacent star values, shifted down by `center` (the
/// training mean) so the middle of the scale lines up with a zero-mean prior.
/// A likeness `x` reads back as `x + center` stars.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingMap {
    pub levels: usize,
    pub star_offset: f64,
    pub star_step: f64,
    pub center: f64,
}

impl RatingMap {
    pub fn new(levels: usize, star_offset: f64, star_step: f64, center: f64) -> Result<Self> {
        if levels < 2 || !(star_step > 0.0) || !star_offset.is_finite() || !center.is_finite() {
            return Err(Error::invalid("rating map needs ≥ 2 levels, a positive step and finite offsets"));
        }
        Ok(RatingMap { levels, star_offset, star_step, center })
    }

    /// Integer stars `1..=K`.
    pub fn integer(levels: usize, center: f64) -> Result<Self> {
        RatingMap::new(levels, 0.0, 1.0, center)
    }

    /// Map consistent with an evenly spaced scale, with level 1 worth one star.
    pub fn from_scale<T: Scalar>(scale: &RatingScale<T>) -> Self {
        let interior = scale.interior();
        let levels = scale.levels();
        let anchor = interior[0].f64();
        let step = if interior.len() > 1 {
            (interior[interior.len() - 1].f64() - anchor) / (interior.len() - 1) as f64
        } else {
            1.0
        };
        // anchor = star(1) + step/2 − center with star(k) = offset + step·k.
        let star_offset = 1.0 - step;
        let center = star_offset + 1.5 * step - anchor;
        RatingMap { levels, star_offset, star_step: step, center }
    }

    pub fn scale<T: Scalar>(&self) -> RatingScale<T> {
        let anchor = self.star_offset + 1.5 * self.star_step - self.center;
        default_thresholds(self.levels, T::of(anchor), T::of(self.star_step)).expect("validated at construction")
    }

    pub fn star_of_level(&self, level: u16) -> f64 {
        self.star_offset + self.star_step * level as f64
    }

    /// Nearest level to a star value, clamped to the scale.
    pub fn level_of_star(&self, stars: f64) -> u16 {
        let k = ((stars - self.star_offset) / self.star_step).round();
        k.clamp(1.0, self.levels as f64) as u16
    }

    /// Continuous star prediction, clamped to the scale's range.
    pub fn star_of_likeness(&self, x: f64) -> f64 {
        (x + self.center).clamp(self.star_of_level(1), self.star_of_level(self.levels as u16))
    }
}

/// Gaussian `N(mu, sigma²)` restricted to `(lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncatedGaussian<T> {
    pub mu: T,
    pub sigma: T,
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> TruncatedGaussian<T> {
    pub fn new(mu: T, sigma: T, lo: T, hi: T) -> Result<Self> {
        if !(sigma > T::zero()) || !mu.is_finite() {
            return Err(Error::invalid("truncated Gaussian needs finite mean and positive sigma"));
        }
        if !(lo < hi) {
            return Err(Error::invalid("truncation interval must satisfy lo < hi"));
        }
        Ok(TruncatedGaussian { mu, sigma, lo, hi })
    }

    /// `(E[X], E[X²])`.
    pub fn moments(&self) -> Result<(T, T)> {
        let (mu, sigma) = (self.mu.f64(), self.sigma.f64());
        let e = (self.lo.f64() - mu) / sigma;
        let f = (self.hi.f64() - mu) / sigma;
        let (z1, z2) = standard_truncated_moments(e, f).map_err(|_| Error::DegenerateMass {
            mu,
            lo: self.lo.f64(),
            hi: self.hi.f64(),
        })?;
        let m1 = mu + sigma * z1;
        let m2 = mu * mu + 2.0 * mu * sigma * z1 + sigma * sigma * z2;
        Ok((T::of(m1), T::of(m2)))
    }

    pub fn mean(&self) -> Result<T> {
        self.moments().map(|(m, _)| m)
    }

    pub fn second_moment(&self) -> Result<T> {
        self.moments().map(|(_, m2)| m2)
    }

    /// The truncation boundary nearest to `mu`; fallback when the mass underflows.
    pub fn nearest_bound(&self) -> T {
        if self.mu <= self.lo {
            self.lo
        } else if self.mu >= self.hi {
            self.hi
        } else {
            self.mu
        }
    }
}

pub fn tg_mean<T: Scalar>(tg: &TruncatedGaussian<T>) -> Result<T> {
    tg.mean()
}

pub fn tg_second_moment<T: Scalar>(tg: &TruncatedGaussian<T>) -> Result<T> {
    tg.second_moment()
}
