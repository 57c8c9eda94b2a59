//! Online posterior tracking over an event stream.
//!
//! Every user and item carries a Gaussian posterior as of its last event.
//! Between events a state only diffuses (covariance grows linearly in
//! elapsed time, the mean is unchanged), so nothing is touched until an event
//! names the entity. At an event time the users, items and latent likenesses
//! involved are refit jointly by coordinate ascent on the factorized
//! posterior, holding the propagated pre-batch moments as the prior.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::model::{batches, Event, EventKind, ItemId, LatentState, ModelParams, Side, Time, UserId};
use crate::probit::{RatingScale, TruncatedGaussian};
use crate::scalar::Scalar;

/// Stopping rule and numerical safeguards for the per-batch fixed point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterConfig {
    /// Stop once no posterior mean coordinate moves more than this in a pass.
    pub tol: f64,
    pub max_passes: usize,
    /// Added to the diagonal once when a factorization fails.
    pub jitter: f64,
    pub start: StartPoint,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { tol: 1e-6, max_passes: 50, jitter: 1e-9, start: StartPoint::PriorDraw { seed: 0 } }
    }
}

/// Where coordinate ascent starts for an entity that has never been rated.
///
/// With zero prior means on both sides, zero posterior means are a fixed
/// point of the updates and the filter would never leave it. `PriorDraw`
/// starts such entities from a draw of their prior (diagonal only), seeded
/// per entity so replays are reproducible. The prior itself is unchanged.
/// Entities with rating history always start from their propagated mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StartPoint {
    PriorMean,
    PriorDraw { seed: u64 },
}

impl StartPoint {
    fn draw<T: Scalar>(self, side: Side, id: u32, prior: &LatentState<T>) -> Vec<T> {
        let StartPoint::PriorDraw { seed } = self else { return prior.mean.clone() };
        let tag = ((side == Side::Item) as u64) << 32 | id as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ tag);
        prior
            .mean
            .iter()
            .enumerate()
            .map(|(k, &m)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                m + prior.cov.get(k, k).sqrt() * T::of(z)
            })
            .collect()
    }
}

impl std::fmt::Display for StartPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StartPoint::PriorMean => write!(f, "mean"),
            StartPoint::PriorDraw { seed } => write!(f, "draw:{seed}"),
        }
    }
}

impl std::str::FromStr for StartPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mean" => Ok(StartPoint::PriorMean),
            other => other
                .strip_prefix("draw:")
                .and_then(|n| n.parse().ok())
                .map(|seed| StartPoint::PriorDraw { seed })
                .ok_or_else(|| Error::invalid(format!("start point must be `mean` or `draw:<seed>`, got {other:?}"))),
        }
    }
}

/// Advance a state to `to` under Brownian motion with variance `sigma2` per day.
pub fn propagate<T: Scalar>(state: &LatentState<T>, to: Time, sigma2: T) -> Result<LatentState<T>> {
    let elapsed = to.since(state.last_event_time);
    if elapsed < 0.0 {
        return Err(Error::TimeRegression { from: state.last_event_time.days(), to: to.days() });
    }
    let mut out = state.clone();
    if elapsed > 0.0 {
        out.cov.add_diag(sigma2 * T::of(elapsed));
    }
    out.last_event_time = to;
    Ok(out)
}

/// All states of one side plus the running sum of their means.
#[derive(Clone, Debug, PartialEq)]
pub struct Population<T> {
    states: Vec<Option<LatentState<T>>>,
    birth_times: Vec<Time>,
    /// Born but not yet rated.
    fresh: Vec<bool>,
    mean_sum: Vec<T>,
    count: usize,
}

impl<T: Scalar> Population<T> {
    fn new(dim: usize) -> Self {
        Population {
            states: Vec::new(),
            birth_times: Vec::new(),
            fresh: Vec::new(),
            mean_sum: vec![T::zero(); dim],
            count: 0,
        }
    }

    pub fn get(&self, id: u32) -> Option<&LatentState<T>> {
        self.states.get(id as usize).and_then(Option::as_ref)
    }

    pub fn birth_time(&self, id: u32) -> Option<Time> {
        self.get(id).map(|_| self.birth_times[id as usize])
    }

    pub fn contains(&self, id: u32) -> bool {
        self.get(id).is_some()
    }

    /// True for an entity that has been born but never rated.
    pub fn is_fresh(&self, id: u32) -> bool {
        self.contains(id) && self.fresh[id as usize]
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn mean_sum(&self) -> &[T] {
        &self.mean_sum
    }

    /// `(id, state)` in id order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, &LatentState<T>)> {
        self.states.iter().enumerate().filter_map(|(i, s)| s.as_ref().map(|s| (i as u32, s)))
    }

    /// Prior for a newborn given a snapshot of the population sum and count.
    fn birth_prior(sum: &[T], count: usize, sigma2_birth: T, t: Time) -> LatentState<T> {
        let dim = sum.len();
        if count == 0 || t.days() == 0.0 {
            return LatentState::standard(dim, t);
        }
        let n = T::of(count as f64);
        LatentState {
            mean: sum.iter().map(|&s| s / n).collect(),
            cov: Matrix::scaled_identity(dim, sigma2_birth),
            last_event_time: t,
        }
    }

    fn insert(&mut self, id: u32, state: LatentState<T>, birth: Time, fresh: bool) {
        let i = id as usize;
        if self.states.len() <= i {
            self.states.resize(i + 1, None);
            self.birth_times.resize(i + 1, Time::ZERO);
            self.fresh.resize(i + 1, false);
        }
        self.fresh[i] = fresh;
        for (s, &m) in self.mean_sum.iter_mut().zip(&state.mean) {
            *s += m;
        }
        self.states[i] = Some(state);
        self.birth_times[i] = birth;
        self.count += 1;
    }

    fn replace(&mut self, id: u32, state: LatentState<T>) {
        let slot = &mut self.states[id as usize];
        let old = slot.as_ref().expect("replace targets a born entity");
        for ((s, &new), &prev) in self.mean_sum.iter_mut().zip(&state.mean).zip(&old.mean) {
            *s += new - prev;
        }
        *slot = Some(state);
        self.fresh[id as usize] = false;
    }

    /// Largest coordinate gap between the running sum and a fresh recompute.
    pub fn audit_sum(&self) -> T {
        let mut fresh = vec![T::zero(); self.mean_sum.len()];
        for (_, s) in self.iter() {
            for (f, &m) in fresh.iter_mut().zip(&s.mean) {
                *f += m;
            }
        }
        fresh.iter().zip(&self.mean_sum).fold(T::zero(), |w, (&a, &b)| w.max((a - b).abs()))
    }
}

/// A rating's converged likeness statistics within its batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FittedRating<T> {
    pub user: UserId,
    pub item: ItemId,
    pub level: u16,
    pub time: Time,
    /// Untruncated Gaussian mean `E[U]ᵀE[V]`.
    pub mu: T,
    /// Truncated-Gaussian mean of the likeness.
    pub x_mean: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchOutcome<T> {
    pub time: Time,
    pub passes: usize,
    pub converged: bool,
    pub births: usize,
    pub fitted: Vec<FittedRating<T>>,
}

/// Hooks for recording what a batch did. All methods default to no-ops.
pub trait BatchObserver<T> {
    fn on_birth(&mut self, _side: Side, _id: u32, _state: &LatentState<T>) {}
    fn on_update(&mut self, _side: Side, _id: u32, _prior: &LatentState<T>, _posterior: &LatentState<T>) {}
    fn on_rating(&mut self, _fitted: &FittedRating<T>) {}
    fn on_batch_end(&mut self, _state: &FilterState<T>) {}
}

impl<T> BatchObserver<T> for () {}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StreamStats {
    pub batches: usize,
    pub births: usize,
    pub ratings: usize,
    /// Births plus one likeness update per rating per fixed-point pass.
    pub updates: usize,
    pub passes: usize,
    pub max_passes_in_batch: usize,
    pub unconverged_batches: usize,
    pub wall_time: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterState<T> {
    params: ModelParams<T>,
    scale: RatingScale<T>,
    config: FilterConfig,
    users: Population<T>,
    items: Population<T>,
    now: Time,
}

/// Moments of one entity while a batch is being refit.
struct Working<T> {
    id: u32,
    prior: LatentState<T>,
    prior_precision: Matrix<T>,
    prior_info: Vec<T>,
    mean: Vec<T>,
    cov: Matrix<T>,
    second: Matrix<T>,
    ratings: Vec<usize>,
}

struct PendingRating<T> {
    user: usize,
    item: usize,
    level: u16,
    lo: T,
    hi: T,
    mu: T,
    x: T,
}

impl<T: Scalar> FilterState<T> {
    pub fn new(params: ModelParams<T>, scale: RatingScale<T>) -> Result<Self> {
        Self::with_config(params, scale, FilterConfig::default())
    }

    pub fn with_config(params: ModelParams<T>, scale: RatingScale<T>, config: FilterConfig) -> Result<Self> {
        params.validate()?;
        if config.max_passes == 0 || !(config.tol > 0.0) {
            return Err(Error::invalid("filter needs max_passes ≥ 1 and a positive tolerance"));
        }
        let dim = params.dim;
        Ok(FilterState {
            params,
            scale,
            config,
            users: Population::new(dim),
            items: Population::new(dim),
            now: Time::ZERO,
        })
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn scale(&self) -> &RatingScale<T> {
        &self.scale
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn now(&self) -> Time {
        self.now
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn users(&self) -> &Population<T> {
        &self.users
    }

    pub fn items(&self) -> &Population<T> {
        &self.items
    }

    pub fn population(&self, side: Side) -> &Population<T> {
        match side {
            Side::User => &self.users,
            Side::Item => &self.items,
        }
    }

    fn population_mut(&mut self, side: Side) -> &mut Population<T> {
        match side {
            Side::User => &mut self.users,
            Side::Item => &mut self.items,
        }
    }

    pub fn user(&self, id: UserId) -> Option<&LatentState<T>> {
        self.users.get(id.0)
    }

    pub fn item(&self, id: ItemId) -> Option<&LatentState<T>> {
        self.items.get(id.0)
    }

    pub fn birth_user(&mut self, id: UserId, t: Time) -> Result<&LatentState<T>> {
        self.birth(Side::User, id.0, t)
    }

    pub fn birth_item(&mut self, id: ItemId, t: Time) -> Result<&LatentState<T>> {
        self.birth(Side::Item, id.0, t)
    }

    fn birth(&mut self, side: Side, id: u32, t: Time) -> Result<&LatentState<T>> {
        if t < self.now {
            return Err(Error::TimeRegression { from: self.now.days(), to: t.days() });
        }
        let pop = self.population(side);
        let prior = Population::birth_prior(pop.mean_sum(), pop.len(), self.params.sigma2_birth(side), t);
        self.insert_born(side, id, prior, t, true)?;
        self.now = t;
        Ok(self.population(side).get(id).expect("just inserted"))
    }

    fn insert_born(&mut self, side: Side, id: u32, state: LatentState<T>, t: Time, fresh: bool) -> Result<()> {
        if self.population(side).contains(id) {
            return Err(Error::DuplicateEntity { kind: side.as_str(), id: id.to_string() });
        }
        self.population_mut(side).insert(id, state, t, fresh);
        Ok(())
    }

    /// Places an entity with an explicit state, bypassing the birth prior.
    /// The entity counts as already rated, so refits start from its mean.
    pub fn insert_state(&mut self, side: Side, id: u32, state: LatentState<T>, birth: Time) -> Result<()> {
        self.restore_state(side, id, state, birth, false)
    }

    pub(crate) fn restore_state(
        &mut self,
        side: Side,
        id: u32,
        state: LatentState<T>,
        birth: Time,
        fresh: bool,
    ) -> Result<()> {
        if state.dim() != self.dim() {
            return Err(Error::invalid("state dimension does not match the model"));
        }
        if state.last_event_time > self.now {
            self.now = state.last_event_time;
        }
        self.insert_born(side, id, state, birth, fresh)
    }

    pub(crate) fn set_now(&mut self, t: Time) {
        self.now = t;
    }

    pub(crate) fn set_mean_sums(&mut self, users: Vec<T>, items: Vec<T>) {
        self.users.mean_sum = users;
        self.items.mean_sum = items;
    }

    /// `E[U_i]ᵀE[V_j]` from the stored means; constant between the entities' events.
    pub fn predict_likeness(&self, user: UserId, item: ItemId, t: Time) -> Result<T> {
        let u = self.checked(Side::User, user.0, t)?;
        let v = self.checked(Side::Item, item.0, t)?;
        Ok(dot(&u.mean, &v.mean))
    }

    pub fn predict_rating(&self, user: UserId, item: ItemId, t: Time) -> Result<u16> {
        Ok(self.scale.discretize(self.predict_likeness(user, item, t)?))
    }

    fn checked(&self, side: Side, id: u32, t: Time) -> Result<&LatentState<T>> {
        let pop = self.population(side);
        match (pop.get(id), pop.birth_time(id)) {
            (Some(s), Some(b)) if b <= t => Ok(s),
            (Some(_), Some(b)) => Err(Error::invalid(format!(
                "{} {id} is born at {b}, after the query time {t}",
                side.as_str()
            ))),
            _ => Err(Error::UnknownEntity { kind: side.as_str(), id: id.to_string() }),
        }
    }

    /// Posterior of an entity at time `t ≥` its last event, diffused forward.
    pub fn state_at(&self, side: Side, id: u32, t: Time) -> Result<LatentState<T>> {
        let s = self
            .population(side)
            .get(id)
            .ok_or_else(|| Error::UnknownEntity { kind: side.as_str(), id: id.to_string() })?;
        propagate(s, t, self.params.sigma2(side))
    }

    pub fn process_batch(&mut self, batch: &[Event]) -> Result<BatchOutcome<T>> {
        self.process_batch_observed(batch, &mut ())
    }

    /// Applies every event sharing one timestamp.
    ///
    /// Births are initialized first from the population as it stood before
    /// the batch, so same-instant newborns do not enter each other's priors.
    pub fn process_batch_observed(
        &mut self,
        batch: &[Event],
        observer: &mut impl BatchObserver<T>,
    ) -> Result<BatchOutcome<T>> {
        let Some(first) = batch.first() else {
            return Ok(BatchOutcome { time: self.now, passes: 0, converged: true, births: 0, fitted: Vec::new() });
        };
        let t = first.time;
        if t < self.now {
            return Err(Error::TimeRegression { from: self.now.days(), to: t.days() });
        }
        if batch.iter().any(|e| e.time != t) {
            return Err(Error::invalid("a batch must share one timestamp"));
        }
        self.check_batch_entities(batch)?;

        let user_snapshot = (self.users.mean_sum.clone(), self.users.len());
        let item_snapshot = (self.items.mean_sum.clone(), self.items.len());
        let mut births = 0;
        for e in batch {
            let (side, id, snapshot) = match e.kind {
                EventKind::UserBirth(u) => (Side::User, u.0, &user_snapshot),
                EventKind::ItemBirth(i) => (Side::Item, i.0, &item_snapshot),
                EventKind::Rating { .. } => continue,
            };
            let prior = Population::birth_prior(&snapshot.0, snapshot.1, self.params.sigma2_birth(side), t);
            self.insert_born(side, id, prior, t, true)?;
            observer.on_birth(side, id, self.population(side).get(id).expect("just inserted"));
            births += 1;
        }

        let outcome = self.refit_ratings(batch, t, births, observer)?;
        self.now = t;
        observer.on_batch_end(self);
        Ok(outcome)
    }

    fn check_batch_entities(&self, batch: &[Event]) -> Result<()> {
        let born_here = |side: Side, id: u32| {
            batch.iter().any(|e| match (side, e.kind) {
                (Side::User, EventKind::UserBirth(u)) => u.0 == id,
                (Side::Item, EventKind::ItemBirth(i)) => i.0 == id,
                _ => false,
            })
        };
        for e in batch {
            match e.kind {
                EventKind::UserBirth(u) if self.users.contains(u.0) => {
                    return Err(Error::DuplicateEntity { kind: "user", id: u.0.to_string() })
                }
                EventKind::ItemBirth(i) if self.items.contains(i.0) => {
                    return Err(Error::DuplicateEntity { kind: "item", id: i.0.to_string() })
                }
                EventKind::Rating { user, item, level } => {
                    if !self.users.contains(user.0) && !born_here(Side::User, user.0) {
                        return Err(Error::UnknownEntity { kind: "user", id: user.0.to_string() });
                    }
                    if !self.items.contains(item.0) && !born_here(Side::Item, item.0) {
                        return Err(Error::UnknownEntity { kind: "item", id: item.0.to_string() });
                    }
                    self.scale.bounds(level)?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn working(&self, side: Side, id: u32, t: Time) -> Result<Working<T>> {
        let stored = self.population(side).get(id).expect("checked before refit");
        let prior = propagate(stored, t, self.params.sigma2(side))?;
        let jitter = T::of(self.config.jitter);
        let chol = prior.cov.cholesky_jittered(jitter)?;
        let mut prior_precision = chol.inverse();
        prior_precision.symmetrize();
        let prior_info = chol.solve(&prior.mean);
        let mean = if self.population(side).is_fresh(id) {
            self.config.start.draw(side, id, &prior)
        } else {
            prior.mean.clone()
        };
        let mut second = prior.cov.clone();
        second.add_outer(&mean, T::one());
        Ok(Working {
            id,
            mean,
            cov: prior.cov.clone(),
            second,
            prior,
            prior_precision,
            prior_info,
            ratings: Vec::new(),
        })
    }

    fn refit_ratings(
        &mut self,
        batch: &[Event],
        t: Time,
        births: usize,
        observer: &mut impl BatchObserver<T>,
    ) -> Result<BatchOutcome<T>> {
        let mut users: Vec<Working<T>> = Vec::new();
        let mut items: Vec<Working<T>> = Vec::new();
        let mut user_slot: HashMap<u32, usize> = HashMap::new();
        let mut item_slot: HashMap<u32, usize> = HashMap::new();
        let mut pending: Vec<PendingRating<T>> = Vec::new();

        for e in batch {
            let EventKind::Rating { user, item, level } = e.kind else { continue };
            let u = match user_slot.get(&user.0) {
                Some(&s) => s,
                None => {
                    users.push(self.working(Side::User, user.0, t)?);
                    user_slot.insert(user.0, users.len() - 1);
                    users.len() - 1
                }
            };
            let v = match item_slot.get(&item.0) {
                Some(&s) => s,
                None => {
                    items.push(self.working(Side::Item, item.0, t)?);
                    item_slot.insert(item.0, items.len() - 1);
                    items.len() - 1
                }
            };
            let r = pending.len();
            users[u].ratings.push(r);
            items[v].ratings.push(r);
            let (lo, hi) = self.scale.bounds(level)?;
            pending.push(PendingRating { user: u, item: v, level, lo, hi, mu: T::zero(), x: T::zero() });
        }

        if pending.is_empty() {
            return Ok(BatchOutcome { time: t, passes: 0, converged: true, births, fitted: Vec::new() });
        }

        let sigma_e = self.params.sigma2_e.sqrt();
        let inv_noise = T::one() / self.params.sigma2_e;
        let jitter = T::of(self.config.jitter);
        let tol = T::of(self.config.tol);

        for r in &mut pending {
            r.mu = dot(&users[r.user].mean, &items[r.item].mean);
            r.x = likeness_mean(r.mu, sigma_e, r.lo, r.hi);
        }

        let mut passes = 0;
        let mut converged = false;
        while passes < self.config.max_passes {
            passes += 1;
            let mut change = T::zero();
            for w in &mut users {
                change = change.max(refit_entity(w, &items, &pending, |r| r.item, inv_noise, jitter)?);
            }
            for w in &mut items {
                change = change.max(refit_entity(w, &users, &pending, |r| r.user, inv_noise, jitter)?);
            }
            for r in &mut pending {
                r.mu = dot(&users[r.user].mean, &items[r.item].mean);
                r.x = likeness_mean(r.mu, sigma_e, r.lo, r.hi);
            }
            if change < tol {
                converged = true;
                break;
            }
        }
        if !converged {
            log::debug!("batch at t={t} did not converge within {passes} passes");
        }

        for (side, group) in [(Side::User, users), (Side::Item, items)] {
            for w in group {
                let posterior = LatentState { mean: w.mean, cov: w.cov, last_event_time: t };
                observer.on_update(side, w.id, &w.prior, &posterior);
                self.population_mut(side).replace(w.id, posterior);
            }
        }

        let fitted: Vec<FittedRating<T>> = batch
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::Rating { user, item, .. } => Some((user, item)),
                _ => None,
            })
            .zip(&pending)
            .map(|((user, item), r)| FittedRating { user, item, level: r.level, time: t, mu: r.mu, x_mean: r.x })
            .collect();
        for f in &fitted {
            observer.on_rating(f);
        }
        Ok(BatchOutcome { time: t, passes, converged, births, fitted })
    }

    pub fn run_stream(&mut self, events: &[Event]) -> Result<StreamStats> {
        self.run_stream_observed(events, &mut ())
    }

    pub fn run_stream_observed(&mut self, events: &[Event], observer: &mut impl BatchObserver<T>) -> Result<StreamStats> {
        let start = Instant::now();
        let mut stats = StreamStats::default();
        for batch in batches(events) {
            let out = self.process_batch_observed(batch, observer)?;
            stats.batches += 1;
            stats.births += out.births;
            stats.ratings += out.fitted.len();
            stats.passes += out.passes;
            stats.updates += out.births + out.passes * out.fitted.len();
            stats.max_passes_in_batch = stats.max_passes_in_batch.max(out.passes);
            if !out.converged {
                stats.unconverged_batches += 1;
            }
        }
        stats.wall_time = start.elapsed();
        Ok(stats)
    }

    /// Maximum deviation of either running mean sum from a recompute.
    pub fn audit(&self) -> T {
        self.users.audit_sum().max(self.items.audit_sum())
    }
}

/// Truncated-Gaussian likeness mean, clamped to the nearest bound on underflow.
fn likeness_mean<T: Scalar>(mu: T, sigma: T, lo: T, hi: T) -> T {
    let tg = TruncatedGaussian { mu, sigma, lo, hi };
    tg.mean().unwrap_or_else(|_| tg.nearest_bound())
}

/// Refits one entity against the other side's current moments; returns the
/// largest change of a mean coordinate.
fn refit_entity<T: Scalar>(
    w: &mut Working<T>,
    others: &[Working<T>],
    pending: &[PendingRating<T>],
    other_of: impl Fn(&PendingRating<T>) -> usize,
    inv_noise: T,
    jitter: T,
) -> Result<T> {
    let mut precision = w.prior_precision.clone();
    let mut info = w.prior_info.clone();
    for &r in &w.ratings {
        let rating = &pending[r];
        let o = &others[other_of(rating)];
        for (p, &s) in precision.as_mut_slice().iter_mut().zip(o.second.as_slice()) {
            *p += s * inv_noise;
        }
        let weight = rating.x * inv_noise;
        for (h, &m) in info.iter_mut().zip(&o.mean) {
            *h += m * weight;
        }
    }
    let chol = precision.cholesky_jittered(jitter)?;
    let mean = chol.solve(&info);
    let mut cov = chol.inverse();
    cov.symmetrize();
    let change = mean.iter().zip(&w.mean).fold(T::zero(), |c, (&a, &b)| c.max((a - b).abs()));
    w.second = cov.clone();
    w.second.add_outer(&mean, T::one());
    w.mean = mean;
    w.cov = cov;
    Ok(change)
}
