//! Domain types shared by every stage: time, entity ids, the event log,
//! model parameters and Gaussian latent states.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// A point in continuous time, measured in days.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Time(f64);

impl Time {
    pub const ZERO: Time = Time(0.0);

    pub fn new(days: f64) -> Result<Self> {
        if days.is_finite() && days >= 0.0 {
            Ok(Time(days))
        } else {
            Err(Error::invalid(format!("time must be finite and non-negative, got {days}")))
        }
    }

    pub fn from_epoch_seconds(secs: i64) -> Result<Self> {
        Time::new(secs as f64 / SECONDS_PER_DAY)
    }

    #[inline]
    pub fn days(self) -> f64 {
        self.0
    }

    /// Elapsed days from `earlier` to `self`; negative if `earlier` is later.
    #[inline]
    pub fn since(self, earlier: Time) -> f64 {
        self.0 - earlier.0
    }

    pub fn max(self, other: Time) -> Time {
        if other > self {
            other
        } else {
            self
        }
    }

    pub fn plus_days(self, days: f64) -> Time {
        Time(self.0 + days)
    }
}

impl fmt::Display for Time {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UserId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ItemId(pub u32);

impl UserId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl ItemId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Maps opaque external identifiers to dense indices in first-seen order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Interner {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), i);
        i
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, i: u32) -> &str {
        &self.names[i as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EventKind {
    UserBirth(UserId),
    ItemBirth(ItemId),
    Rating { user: UserId, item: ItemId, level: u16 },
}

impl EventKind {
    pub fn is_birth(&self) -> bool {
        !matches!(self, EventKind::Rating { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub time: Time,
    pub kind: EventKind,
}

impl Event {
    pub fn user_birth(t: f64, u: u32) -> Self {
        Event { time: Time(t), kind: EventKind::UserBirth(UserId(u)) }
    }

    pub fn item_birth(t: f64, i: u32) -> Self {
        Event { time: Time(t), kind: EventKind::ItemBirth(ItemId(i)) }
    }

    pub fn rating(t: f64, u: u32, i: u32, level: u16) -> Self {
        Event { time: Time(t), kind: EventKind::Rating { user: UserId(u), item: ItemId(i), level } }
    }
}

/// An event stream together with the id tables its dense indices refer to.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventLog {
    pub users: Interner,
    pub items: Interner,
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a log whose ids are the decimal strings of the dense indices.
    pub fn from_events(events: Vec<Event>) -> Self {
        let mut log = EventLog::new();
        let (mut nu, mut ni) = (0u32, 0u32);
        for e in &events {
            match e.kind {
                EventKind::UserBirth(u) => nu = nu.max(u.0 + 1),
                EventKind::ItemBirth(i) => ni = ni.max(i.0 + 1),
                EventKind::Rating { user, item, .. } => {
                    nu = nu.max(user.0 + 1);
                    ni = ni.max(item.0 + 1);
                }
            }
        }
        for u in 0..nu {
            log.users.intern(&u.to_string());
        }
        for i in 0..ni {
            log.items.intern(&i.to_string());
        }
        log.events = events;
        log
    }

    pub fn user_id(&mut self, name: &str) -> UserId {
        UserId(self.users.intern(name))
    }

    pub fn item_id(&mut self, name: &str) -> ItemId {
        ItemId(self.items.intern(name))
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn n_ratings(&self) -> usize {
        self.events.iter().filter(|e| !e.kind.is_birth()).count()
    }

    pub fn time_span(&self) -> Option<(Time, Time)> {
        Some((self.events.first()?.time, self.events.last()?.time))
    }

    /// Events with time strictly before `t` (the log must be sorted).
    pub fn prefix_before(&self, t: Time) -> &[Event] {
        let end = self.events.partition_point(|e| e.time < t);
        &self.events[..end]
    }

    /// Consecutive runs of events sharing one timestamp.
    pub fn batches(&self) -> Batches<'_> {
        Batches { rest: &self.events }
    }

    pub fn validate(&self, levels: Option<usize>) -> ValidationReport {
        validate_log(&self.events, levels)
    }

    pub fn with_births(mut self) -> Self {
        self.events = auto_insert_births(&self.events);
        self
    }
}

pub struct Batches<'a> {
    rest: &'a [Event],
}

impl<'a> Iterator for Batches<'a> {
    type Item = &'a [Event];

    fn next(&mut self) -> Option<Self::Item> {
        let first = self.rest.first()?;
        let len = self.rest.iter().take_while(|e| e.time == first.time).count();
        let (batch, rest) = self.rest.split_at(len);
        self.rest = rest;
        Some(batch)
    }
}

/// Splits a time-sorted slice into equal-timestamp batches.
pub fn batches(events: &[Event]) -> Batches<'_> {
    Batches { rest: events }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Violation {
    /// Rating at `index` names a user with no birth at or before its time.
    MissingUserBirth { index: usize, user: UserId },
    MissingItemBirth { index: usize, item: ItemId },
    /// Event at `index` is earlier than its predecessor.
    TimeRegression { index: usize },
    LevelOutOfRange { index: usize, level: u16 },
    DuplicateBirth { index: usize },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub n_events: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn missing_births(&self) -> usize {
        self.violations
            .iter()
            .filter(|v| matches!(v, Violation::MissingUserBirth { .. } | Violation::MissingItemBirth { .. }))
            .count()
    }

    pub fn ordering_violations(&self) -> usize {
        self.violations.iter().filter(|v| matches!(v, Violation::TimeRegression { .. })).count()
    }

    pub fn level_violations(&self) -> usize {
        self.violations.iter().filter(|v| matches!(v, Violation::LevelOutOfRange { .. })).count()
    }
}

/// Checks birth-before-rating, time ordering and level range. Never fails.
pub fn validate_log(events: &[Event], levels: Option<usize>) -> ValidationReport {
    let mut user_birth: HashMap<UserId, Time> = HashMap::new();
    let mut item_birth: HashMap<ItemId, Time> = HashMap::new();
    let mut violations = Vec::new();

    for (index, e) in events.iter().enumerate() {
        match e.kind {
            EventKind::UserBirth(u) => {
                if user_birth.insert(u, e.time).is_some() {
                    violations.push(Violation::DuplicateBirth { index });
                }
            }
            EventKind::ItemBirth(i) => {
                if item_birth.insert(i, e.time).is_some() {
                    violations.push(Violation::DuplicateBirth { index });
                }
            }
            EventKind::Rating { .. } => {}
        }
    }

    let mut prev: Option<Time> = None;
    for (index, e) in events.iter().enumerate() {
        if let Some(p) = prev {
            if e.time < p {
                violations.push(Violation::TimeRegression { index });
            }
        }
        prev = Some(e.time);

        if let EventKind::Rating { user, item, level } = e.kind {
            if user_birth.get(&user).is_none_or(|&b| b > e.time) {
                violations.push(Violation::MissingUserBirth { index, user });
            }
            if item_birth.get(&item).is_none_or(|&b| b > e.time) {
                violations.push(Violation::MissingItemBirth { index, item });
            }
            if let Some(k) = levels {
                if level == 0 || level as usize > k {
                    violations.push(Violation::LevelOutOfRange { index, level });
                }
            }
        }
    }

    ValidationReport { n_events: events.len(), violations }
}

/// Inserts a birth at the first appearance of every entity lacking one.
///
/// The output is stably sorted by time with births ahead of same-time ratings.
pub fn auto_insert_births(events: &[Event]) -> Vec<Event> {
    let mut born_users: HashSet<UserId> = HashSet::new();
    let mut born_items: HashSet<ItemId> = HashSet::new();
    for e in events {
        match e.kind {
            EventKind::UserBirth(u) => {
                born_users.insert(u);
            }
            EventKind::ItemBirth(i) => {
                born_items.insert(i);
            }
            EventKind::Rating { .. } => {}
        }
    }

    let mut out = Vec::with_capacity(events.len());
    for e in events {
        if let EventKind::Rating { user, item, .. } = e.kind {
            if born_users.insert(user) {
                out.push(Event { time: e.time, kind: EventKind::UserBirth(user) });
            }
            if born_items.insert(item) {
                out.push(Event { time: e.time, kind: EventKind::ItemBirth(item) });
            }
        }
        out.push(*e);
    }
    sort_events(&mut out);
    out
}

/// Stable sort by time, births ahead of ratings at equal times.
pub fn sort_events(events: &mut [Event]) {
    events.sort_by(|a, b| {
        a.time
            .partial_cmp(&b.time)
            .expect("event times are finite")
            .then_with(|| b.kind.is_birth().cmp(&a.kind.is_birth()))
    });
}

/// Learned variances plus fixed hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    /// Rating noise variance.
    pub sigma2_e: T,
    /// User Brownian-motion variance per day.
    pub sigma2_u: T,
    /// Item Brownian-motion variance per day.
    pub sigma2_v: T,
    /// Prior variance of a newborn user around the population mean.
    pub sigma2_u0: T,
    pub sigma2_v0: T,
    pub dim: usize,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(sigma2_e: T, sigma2_u: T, sigma2_v: T, dim: usize) -> Result<Self> {
        let p = ModelParams { sigma2_e, sigma2_u, sigma2_v, sigma2_u0: T::one(), sigma2_v0: T::one(), dim };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("sigma2_E", self.sigma2_e),
            ("sigma2_U", self.sigma2_u),
            ("sigma2_V", self.sigma2_v),
            ("sigma2_U0", self.sigma2_u0),
            ("sigma2_V0", self.sigma2_v0),
        ];
        for (name, v) in named {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.dim == 0 {
            return Err(Error::invalid("latent dimension must be at least 1"));
        }
        Ok(())
    }

    pub fn sigma2(&self, side: Side) -> T {
        match side {
            Side::User => self.sigma2_u,
            Side::Item => self.sigma2_v,
        }
    }

    pub fn sigma2_birth(&self, side: Side) -> T {
        match side {
            Side::User => self.sigma2_u0,
            Side::Item => self.sigma2_v0,
        }
    }
}

impl<T: Scalar> Default for ModelParams<T> {
    fn default() -> Self {
        ModelParams {
            sigma2_e: T::one(),
            sigma2_u: T::of(1e-3),
            sigma2_v: T::of(1e-3),
            sigma2_u0: T::one(),
            sigma2_v0: T::one(),
            dim: 16,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    User,
    Item,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::User => "user",
            Side::Item => "item",
        }
    }
}

/// Gaussian posterior of one topic vector as of its last event.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState<T> {
    pub mean: Vec<T>,
    pub cov: Matrix<T>,
    pub last_event_time: Time,
}

impl<T: Scalar> LatentState<T> {
    pub fn new(mean: Vec<T>, cov: Matrix<T>, last_event_time: Time) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::invalid("mean and covariance dimensions differ"));
        }
        Ok(LatentState { mean, cov, last_event_time })
    }

    /// `N(0, I)` at time `t`.
    pub fn standard(dim: usize, t: Time) -> Self {
        LatentState { mean: vec![T::zero(); dim], cov: Matrix::identity(dim), last_event_time: t }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `E[x xᵀ] = Cov + mean meanᵀ`.
    pub fn second_moment(&self) -> Matrix<T> {
        let mut m = self.cov.clone();
        m.add_outer(&self.mean, T::one());
        m
    }

    /// Symmetry (max |C − Cᵀ| < 1e−10) and PSD (eigenvalues ≥ −1e−9) checks.
    pub fn check_invariants(&self) -> Result<()> {
        if self.cov.max_asymmetry().f64() >= 1e-10 {
            return Err(Error::invalid("covariance is not symmetric"));
        }
        if !self.cov.is_psd(T::of(1e-9)) {
            return Err(Error::invalid("covariance is not positive semidefinite"));
        }
        if !self.mean.iter().all(|x| x.is_finite()) || !self.cov.is_finite() {
            return Err(Error::NonFinite("latent state"));
        }
        Ok(())
    }
}
