//! Offline variational EM for the noise and diffusion variances.
//!
//! The E-step replays the log through the online filter while recording each
//! entity's posterior at its own event times, then runs a Rauch-Tung-Striebel
//! backward pass per entity. Users and items stay independent under the
//! factorized posterior, so each trajectory is smoothed on its own. The
//! M-step is closed form.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::filter::{propagate, BatchObserver, FilterConfig, FilterState, FittedRating};
use crate::linalg::{dot, norm_sq, Matrix};
use crate::model::{Event, ItemId, LatentState, ModelParams, Side, Time, UserId};
use crate::probit::{RatingMap, RatingScale, TruncatedGaussian};
use crate::scalar::Scalar;

/// Filtered posteriors of one entity at each of its event times.
///
/// Only posteriors are kept: the prior at record `k > 0` is the posterior at
/// `k − 1` diffused over the gap, and the prior at record 0 is the birth prior.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord<T> {
    pub side: Side,
    pub id: u32,
    pub times: Vec<Time>,
    pub birth_prior: LatentState<T>,
    pub means: Vec<Vec<T>>,
    /// Packed lower triangles.
    pub covs: Vec<Vec<T>>,
    /// Whether a rating was absorbed at this record.
    pub rated: Vec<bool>,
}

impl<T: Scalar> TrajectoryRecord<T> {
    fn new(side: Side, id: u32, birth: &LatentState<T>) -> Self {
        TrajectoryRecord {
            side,
            id,
            times: vec![birth.last_event_time],
            birth_prior: birth.clone(),
            means: vec![birth.mean.clone()],
            covs: vec![birth.cov.lower()],
            rated: vec![false],
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.birth_prior.dim()
    }

    pub fn posterior(&self, k: usize) -> LatentState<T> {
        LatentState {
            mean: self.means[k].clone(),
            cov: Matrix::from_lower(self.dim(), &self.covs[k]).expect("packed by this module"),
            last_event_time: self.times[k],
        }
    }

    /// Pre-update moments at record `k`.
    pub fn prior(&self, k: usize, sigma2: T) -> LatentState<T> {
        if k == 0 {
            return self.birth_prior.clone();
        }
        propagate(&self.posterior(k - 1), self.times[k], sigma2).expect("record times increase")
    }

    fn record_update(&mut self, posterior: &LatentState<T>) {
        let t = posterior.last_event_time;
        if *self.times.last().expect("non-empty") == t {
            let k = self.len() - 1;
            self.means[k] = posterior.mean.clone();
            self.covs[k] = posterior.cov.lower();
            self.rated[k] = true;
        } else {
            self.times.push(t);
            self.means.push(posterior.mean.clone());
            self.covs.push(posterior.cov.lower());
            self.rated.push(true);
        }
    }
}

/// A rating with pointers to the trajectory records it was absorbed into.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatingRecord<T> {
    pub fitted: FittedRating<T>,
    pub user_record: usize,
    pub item_record: usize,
}

#[derive(Clone, Debug)]
pub struct ForwardPass<T> {
    pub users: Vec<Option<TrajectoryRecord<T>>>,
    pub items: Vec<Option<TrajectoryRecord<T>>>,
    pub ratings: Vec<RatingRecord<T>>,
    pub state: FilterState<T>,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn trajectory(&self, side: Side, id: u32) -> Option<&TrajectoryRecord<T>> {
        let list = match side {
            Side::User => &self.users,
            Side::Item => &self.items,
        };
        list.get(id as usize).and_then(Option::as_ref)
    }
}

struct Recorder<T> {
    users: Vec<Option<TrajectoryRecord<T>>>,
    items: Vec<Option<TrajectoryRecord<T>>>,
    ratings: Vec<RatingRecord<T>>,
}

impl<T: Scalar> Recorder<T> {
    fn list(&mut self, side: Side) -> &mut Vec<Option<TrajectoryRecord<T>>> {
        match side {
            Side::User => &mut self.users,
            Side::Item => &mut self.items,
        }
    }
}

impl<T: Scalar> BatchObserver<T> for Recorder<T> {
    fn on_birth(&mut self, side: Side, id: u32, state: &LatentState<T>) {
        let list = self.list(side);
        let i = id as usize;
        if list.len() <= i {
            list.resize(i + 1, None);
        }
        list[i] = Some(TrajectoryRecord::new(side, id, state));
    }

    fn on_update(&mut self, side: Side, id: u32, _prior: &LatentState<T>, posterior: &LatentState<T>) {
        if let Some(Some(traj)) = self.list(side).get_mut(id as usize) {
            traj.record_update(posterior);
        }
    }

    fn on_rating(&mut self, fitted: &FittedRating<T>) {
        let last = |list: &Vec<Option<TrajectoryRecord<T>>>, i: usize| {
            list[i].as_ref().map(|t| t.len() - 1).expect("rated entities are recorded")
        };
        let user_record = last(&self.users, fitted.user.index());
        let item_record = last(&self.items, fitted.item.index());
        self.ratings.push(RatingRecord { fitted: *fitted, user_record, item_record });
    }
}

/// Filters the whole log, recording every entity's trajectory.
pub fn forward_pass<T: Scalar>(
    events: &[Event],
    params: &ModelParams<T>,
    scale: &RatingScale<T>,
    config: FilterConfig,
) -> Result<ForwardPass<T>> {
    let mut state = FilterState::with_config(*params, scale.clone(), config)?;
    let mut rec = Recorder { users: Vec::new(), items: Vec::new(), ratings: Vec::new() };
    state.run_stream_observed(events, &mut rec)?;
    Ok(ForwardPass { users: rec.users, items: rec.items, ratings: rec.ratings, state })
}

/// Smoothed marginals of one trajectory and its adjacent-pair statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothedTrajectory<T> {
    pub means: Vec<Vec<T>>,
    pub covs: Vec<Matrix<T>>,
    /// `Cov(U^{t_{k+1}}, U^{t_k})` for each adjacent pair `k`.
    pub cross_covs: Vec<Matrix<T>>,
    /// `E‖U^{t_{k+1}} − U^{t_k}‖²` for each adjacent pair.
    pub pair_sq: Vec<T>,
    pub gaps: Vec<f64>,
}

/// Backward recursion over one entity's event times.
pub fn smooth_entity<T: Scalar>(traj: &TrajectoryRecord<T>, sigma2: T, jitter: T) -> Result<SmoothedTrajectory<T>> {
    let n = traj.len();
    if n == 0 {
        return Err(Error::Empty("trajectory"));
    }
    let filtered: Vec<LatentState<T>> = (0..n).map(|k| traj.posterior(k)).collect();
    let mut means = vec![Vec::new(); n];
    let mut covs = vec![Matrix::zeros(traj.dim()); n];
    let mut cross_covs = vec![Matrix::zeros(traj.dim()); n.saturating_sub(1)];
    let mut pair_sq = vec![T::zero(); n.saturating_sub(1)];
    let mut gaps = vec![0.0; n.saturating_sub(1)];

    means[n - 1] = filtered[n - 1].mean.clone();
    covs[n - 1] = filtered[n - 1].cov.clone();

    for k in (0..n - 1).rev() {
        let gap = traj.times[k + 1].since(traj.times[k]);
        let post = &filtered[k];
        let mut predicted = post.cov.clone();
        predicted.add_diag(sigma2 * T::of(gap));
        let gain = post.cov.matmul(&predicted.cholesky_jittered(jitter)?.inverse());

        // Predicted mean at k + 1 equals the filtered mean at k.
        let innovation: Vec<T> = means[k + 1].iter().zip(&post.mean).map(|(&a, &b)| a - b).collect();
        let mean: Vec<T> = post.mean.iter().zip(gain.mul_vec(&innovation)).map(|(&m, g)| m + g).collect();

        let gain_t = gain.transpose();
        let mut cov = post.cov.clone();
        cov.add_assign(&gain.matmul(&covs[k + 1].sub(&predicted)).matmul(&gain_t));
        cov.symmetrize();
        let cross = covs[k + 1].matmul(&gain_t);

        let delta: Vec<T> = means[k + 1].iter().zip(&mean).map(|(&a, &b)| a - b).collect();
        let sq = norm_sq(&delta) + covs[k + 1].trace() + cov.trace() - T::of(2.0) * cross.trace();

        means[k] = mean;
        covs[k] = cov;
        cross_covs[k] = cross;
        pair_sq[k] = sq.max(T::zero());
        gaps[k] = gap;
    }
    Ok(SmoothedTrajectory { means, covs, cross_covs, pair_sq, gaps })
}

/// Expectations one rating contributes to the noise-variance update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatingMoments<T> {
    pub x_mean: T,
    pub x_second: T,
    /// `E[U]ᵀE[V]`
    pub mu: T,
    /// `tr(E[UUᵀ] E[VVᵀ]) = E[(UᵀV)²]` under independence.
    pub uv_second: T,
}

impl<T: Scalar> RatingMoments<T> {
    pub fn from_moments(x_mean: T, x_second: T, u_mean: &[T], u_second: &Matrix<T>, v_mean: &[T], v_second: &Matrix<T>) -> Self {
        RatingMoments { x_mean, x_second, mu: dot(u_mean, v_mean), uv_second: u_second.trace_product(v_second) }
    }

    /// `E[(X − UᵀV)²]`
    pub fn residual_second(&self) -> T {
        self.x_second - T::of(2.0) * self.x_mean * self.mu + self.uv_second
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairMoment<T> {
    pub sq: T,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmoothedStats<T> {
    pub dim: usize,
    pub ratings: Vec<RatingMoments<T>>,
    pub user_pairs: Vec<PairMoment<T>>,
    pub item_pairs: Vec<PairMoment<T>>,
    /// Smoothed `E[U]ᵀE[V]` per rating, for training error.
    pub smoothed_likeness: Vec<T>,
}

/// Which adjacent event-time pairs feed the diffusion-variance update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum PairCounting {
    /// Every adjacent pair, including birth as a left endpoint.
    #[default]
    AllPairs,
    /// Skip the pair that starts at a birth-only record.
    ExcludeBirthOrigin,
}

pub fn estimate_sigma_e<T: Scalar>(stats: &SmoothedStats<T>) -> Result<T> {
    if stats.ratings.is_empty() {
        return Err(Error::Empty("rating set"));
    }
    let total: T = stats.ratings.iter().map(RatingMoments::residual_second).sum();
    finite_positive(total / T::of(stats.ratings.len() as f64), "sigma2_E")
}

pub fn estimate_sigma_u<T: Scalar>(stats: &SmoothedStats<T>) -> Result<T> {
    diffusion_estimate(&stats.user_pairs, stats.dim, "sigma2_U")
}

pub fn estimate_sigma_v<T: Scalar>(stats: &SmoothedStats<T>) -> Result<T> {
    diffusion_estimate(&stats.item_pairs, stats.dim, "sigma2_V")
}

/// `(1 / (d·C)) Σ E‖Δ‖² / τ` over `C` adjacent pairs.
fn diffusion_estimate<T: Scalar>(pairs: &[PairMoment<T>], dim: usize, name: &'static str) -> Result<T> {
    if pairs.is_empty() {
        return Err(Error::Empty("adjacent event-time pairs"));
    }
    let total: T = pairs.iter().map(|p| p.sq / T::of(p.gap)).sum();
    finite_positive(total / T::of((pairs.len() * dim) as f64), name)
}

fn finite_positive<T: Scalar>(v: T, name: &'static str) -> Result<T> {
    if v.is_finite() && v > T::zero() {
        Ok(v)
    } else {
        Err(Error::NonFinite(name))
    }
}

/// Smooths every trajectory and gathers the M-step expectations.
pub fn smoothed_stats<T: Scalar>(
    pass: &ForwardPass<T>,
    params: &ModelParams<T>,
    scale: &RatingScale<T>,
    counting: PairCounting,
    jitter: T,
) -> Result<SmoothedStats<T>> {
    let smooth_side = |list: &[Option<TrajectoryRecord<T>>], sigma2: T| -> Result<Vec<Option<SmoothedTrajectory<T>>>> {
        list.par_iter()
            .map(|t| t.as_ref().map(|t| smooth_entity(t, sigma2, jitter)).transpose())
            .collect()
    };
    let users = smooth_side(&pass.users, params.sigma2_u)?;
    let items = smooth_side(&pass.items, params.sigma2_v)?;

    let pairs = |trajs: &[Option<TrajectoryRecord<T>>], smoothed: &[Option<SmoothedTrajectory<T>>]| {
        let mut out = Vec::new();
        for (traj, sm) in trajs.iter().zip(smoothed) {
            let (Some(traj), Some(sm)) = (traj, sm) else { continue };
            for k in 0..sm.pair_sq.len() {
                if k == 0 && counting == PairCounting::ExcludeBirthOrigin && !traj.rated[0] {
                    continue;
                }
                out.push(PairMoment { sq: sm.pair_sq[k], gap: sm.gaps[k] });
            }
        }
        out
    };
    let user_pairs = pairs(&pass.users, &users);
    let item_pairs = pairs(&pass.items, &items);

    let sigma_e = params.sigma2_e.sqrt();
    let mut ratings = Vec::with_capacity(pass.ratings.len());
    let mut smoothed_likeness = Vec::with_capacity(pass.ratings.len());
    for r in &pass.ratings {
        let su = users[r.fitted.user.index()].as_ref().expect("rated user smoothed");
        let sv = items[r.fitted.item.index()].as_ref().expect("rated item smoothed");
        let (um, uc) = (&su.means[r.user_record], &su.covs[r.user_record]);
        let (vm, vc) = (&sv.means[r.item_record], &sv.covs[r.item_record]);
        let mu = dot(um, vm);
        let (lo, hi) = scale.bounds(r.fitted.level)?;
        let tg = TruncatedGaussian { mu, sigma: sigma_e, lo, hi };
        let (x1, x2) = tg.moments().unwrap_or_else(|_| {
            let b = tg.nearest_bound();
            (b, b * b)
        });
        let mut uu = uc.clone();
        uu.add_outer(um, T::one());
        let mut vv = vc.clone();
        vv.add_outer(vm, T::one());
        ratings.push(RatingMoments::from_moments(x1, x2, um, &uu, vm, &vv));
        smoothed_likeness.push(mu);
    }
    Ok(SmoothedStats { dim: params.dim, ratings, user_pairs, item_pairs, smoothed_likeness })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop once every parameter's relative change is below this.
    pub tol: f64,
    pub filter: FilterConfig,
    pub counting: PairCounting,
    /// Maps likeness to star values for the training RMSE column.
    pub rating_map: Option<RatingMap>,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iters: 30,
            tol: 1e-3,
            filter: FilterConfig::default(),
            counting: PairCounting::AllPairs,
            rating_map: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub sigma2_e: f64,
    pub sigma2_u: f64,
    pub sigma2_v: f64,
    pub train_rmse: f64,
    pub max_rel_change: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmFit<T> {
    pub params: ModelParams<T>,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
}

/// Alternates forward filtering, smoothing and the closed-form M-step.
pub fn em_fit<T: Scalar>(
    events: &[Event],
    scale: &RatingScale<T>,
    init: ModelParams<T>,
    config: &EmConfig,
) -> Result<EmFit<T>> {
    init.validate()?;
    if config.max_iters == 0 {
        return Err(Error::invalid("EM needs at least one iteration"));
    }
    let map = config.rating_map.unwrap_or_else(|| RatingMap::from_scale(scale));
    let jitter = T::of(config.filter.jitter);
    let mut params = init;
    let mut trace = Vec::new();
    let mut converged = false;

    for iter in 1..=config.max_iters {
        let pass = forward_pass(events, &params, scale, config.filter)?;
        let stats = smoothed_stats(&pass, &params, scale, config.counting, jitter)?;
        let train_rmse = training_rmse(&pass, &stats, &map);

        let next = ModelParams {
            sigma2_e: estimate_sigma_e(&stats)?,
            sigma2_u: estimate_sigma_u(&stats)?,
            sigma2_v: estimate_sigma_v(&stats)?,
            ..params
        };
        let rel = |a: T, b: T| ((a - b) / b).abs().f64();
        let change = rel(next.sigma2_e, params.sigma2_e)
            .max(rel(next.sigma2_u, params.sigma2_u))
            .max(rel(next.sigma2_v, params.sigma2_v));
        log::info!(
            "em iter {iter}: sigma2_E={} sigma2_U={} sigma2_V={} train_rmse={train_rmse:.4} change={change:.2e}",
            next.sigma2_e,
            next.sigma2_u,
            next.sigma2_v
        );
        trace.push(TraceRow {
            iter,
            sigma2_e: next.sigma2_e.f64(),
            sigma2_u: next.sigma2_u.f64(),
            sigma2_v: next.sigma2_v.f64(),
            train_rmse,
            max_rel_change: change,
        });
        params = next;
        if change < config.tol {
            converged = true;
            break;
        }
    }
    Ok(EmFit { params, trace, converged })
}

fn training_rmse<T: Scalar>(pass: &ForwardPass<T>, stats: &SmoothedStats<T>, map: &RatingMap) -> f64 {
    if pass.ratings.is_empty() {
        return 0.0;
    }
    let sse: f64 = pass
        .ratings
        .iter()
        .zip(&stats.smoothed_likeness)
        .map(|(r, &x)| {
            let e = map.star_of_likeness(x.f64()) - map.star_of_level(r.fitted.level);
            e * e
        })
        .sum();
    (sse / pass.ratings.len() as f64).sqrt()
}

/// Convenience for tests and fixtures: the filtered posterior recorded for
/// `user` at its last event.
pub fn last_user_posterior<T: Scalar>(pass: &ForwardPass<T>, user: UserId) -> Option<LatentState<T>> {
    let t = pass.trajectory(Side::User, user.0)?;
    Some(t.posterior(t.len() - 1))
}

pub fn last_item_posterior<T: Scalar>(pass: &ForwardPass<T>, item: ItemId) -> Option<LatentState<T>> {
    let t = pass.trajectory(Side::Item, item.0)?;
    Some(t.posterior(t.len() - 1))
}
