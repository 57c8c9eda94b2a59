//! Dataset ingestion, prequential evaluation, correlation decay and
//! figure-data exports.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::filter::{FilterConfig, FilterState};
use crate::model::{auto_insert_births, batches, sort_events, Event, EventKind, EventLog, ItemId, ModelParams, Side, Time, UserId};
use crate::probit::RatingMap;
use crate::scalar::Scalar;

pub const DAYS_PER_YEAR: f64 = 365.25;

/// A MovieLens ratings file turned into an event log.
#[derive(Clone, Debug)]
pub struct MovieLens {
    pub log: EventLog,
    /// True when any rating is a half star; levels are then `1..=10`.
    pub half_stars: bool,
    /// Mean star value over all ratings.
    pub global_mean: f64,
    /// Skipped rows as `(line, reason)`.
    pub malformed: Vec<(usize, String)>,
}

impl MovieLens {
    pub fn levels(&self) -> usize {
        if self.half_stars {
            10
        } else {
            5
        }
    }

    /// Level-to-star map with likeness centered on `center` stars.
    pub fn rating_map(&self, center: f64) -> RatingMap {
        let step = if self.half_stars { 0.5 } else { 1.0 };
        RatingMap::new(self.levels(), 0.0, step, center).expect("static map is valid")
    }
}

/// Largest tolerated share of malformed rows.
pub const MAX_MALFORMED: f64 = 0.01;

/// Reads `userId,movieId,rating,timestamp` (extra columns ignored).
///
/// Times become days since the epoch; ratings are stably sorted by time and
/// every entity is born at its first rating.
pub fn load_movielens<R: Read>(r: R) -> Result<MovieLens> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = rdr.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse { line: 1, msg: format!("missing column {name}") })
    };
    let (cu, ci, cr, ct) = (col("userId")?, col("movieId")?, col("rating")?, col("timestamp")?);

    struct Row {
        user: String,
        item: String,
        stars: f64,
        secs: i64,
    }
    let mut rows = Vec::new();
    let mut malformed = Vec::new();
    let mut total = 0usize;
    for rec in rdr.records() {
        total += 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                malformed.push((line, e.to_string()));
                continue;
            }
        };
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let parsed = (|| -> std::result::Result<Row, String> {
            let field = |c: usize| rec.get(c).filter(|s| !s.is_empty()).ok_or("missing field");
            let stars: f64 = field(cr)?.parse().map_err(|_| "rating is not a number")?;
            if !(0.5..=5.0).contains(&stars) || (stars * 2.0).fract() != 0.0 {
                return Err(format!("rating {stars} is not a half-star value in [0.5, 5]"));
            }
            let secs: i64 = field(ct)?.parse().map_err(|_| "timestamp is not an integer")?;
            if secs < 0 {
                return Err("negative timestamp".into());
            }
            Ok(Row { user: field(cu)?.to_string(), item: field(ci)?.to_string(), stars, secs })
        })();
        match parsed {
            Ok(row) => rows.push(row),
            Err(msg) => malformed.push((line, msg)),
        }
    }
    if total == 0 || rows.is_empty() {
        return Err(Error::Empty("ratings file"));
    }
    if malformed.len() as f64 > MAX_MALFORMED * total as f64 {
        let (line, msg) = &malformed[0];
        return Err(Error::Parse {
            line: *line,
            msg: format!("{msg} ({} of {total} rows malformed, limit is 1%)", malformed.len()),
        });
    }
    for (line, msg) in &malformed {
        log::warn!("skipping line {line}: {msg}");
    }

    let half_stars = rows.iter().any(|r| r.stars.fract() != 0.0);
    let global_mean = rows.iter().map(|r| r.stars).sum::<f64>() / rows.len() as f64;
    let mut log = EventLog::new();
    let mut events = Vec::with_capacity(rows.len());
    for r in &rows {
        let user = log.user_id(&r.user);
        let item = log.item_id(&r.item);
        // Integer data never reaches 0.5, so the 5-level reading is exact.
        let level = if half_stars { (r.stars * 2.0) as u16 } else { r.stars as u16 };
        events.push(Event { time: Time::from_epoch_seconds(r.secs)?, kind: EventKind::Rating { user, item, level } });
    }
    sort_events(&mut events);
    log.events = auto_insert_births(&events);
    Ok(MovieLens { log, half_stars, global_mean, malformed })
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::invalid(format!("length mismatch: {} predictions, {} truths", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::Empty("rmse input"));
    }
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogSummary {
    pub users: usize,
    pub items: usize,
    pub ratings: usize,
    pub start_days: f64,
    pub end_days: f64,
}

pub fn summarize(log: &EventLog) -> LogSummary {
    let (start, end) = log.time_span().unwrap_or((Time::ZERO, Time::ZERO));
    LogSummary {
        users: log.users.len(),
        items: log.items.len(),
        ratings: log.n_ratings(),
        start_days: start.days(),
        end_days: end.days(),
    }
}

/// Time of the first rating past `fraction` of all ratings; everything
/// earlier is the base-training set.
pub fn split_time(events: &[Event], fraction: f64) -> Result<Time> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid("split fraction must lie in (0, 1)"));
    }
    let times: Vec<Time> =
        events.iter().filter(|e| matches!(e.kind, EventKind::Rating { .. })).map(|e| e.time).collect();
    if times.len() < 2 {
        return Err(Error::Empty("ratings to split"));
    }
    Ok(times[((times.len() as f64 * fraction) as usize).min(times.len() - 1)])
}

/// Mean star value of the ratings before `t`.
pub fn mean_stars_before(events: &[Event], t: Time, map: &RatingMap) -> Result<f64> {
    let stars: Vec<f64> = events
        .iter()
        .take_while(|e| e.time < t)
        .filter_map(|e| match e.kind {
            EventKind::Rating { level, .. } => Some(map.star_of_level(level)),
            _ => None,
        })
        .collect();
    if stars.is_empty() {
        return Err(Error::Empty("base-training ratings"));
    }
    Ok(stars.iter().sum::<f64>() / stars.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalProtocol {
    /// Length of each test window in days.
    pub horizon: f64,
    /// Share of ratings in the base-training prefix.
    pub split_fraction: f64,
    pub repeats: usize,
    pub seed: u64,
    /// Explicit reference times; sampled from the candidate half when `None`.
    pub reference_times: Option<Vec<Time>>,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol { horizon: 7.0, split_fraction: 0.5, repeats: 10, seed: 0, reference_times: None }
    }
}

/// Draws `repeats` reference times uniformly from `[start, end − horizon]`,
/// rejecting draws whose windows would overlap an earlier one. Sorted.
pub fn sample_reference_times(start: Time, end: Time, horizon: f64, repeats: usize, seed: u64) -> Result<Vec<Time>> {
    let hi = end.days() - horizon;
    if !(horizon > 0.0) || hi < start.days() {
        return Err(Error::invalid("candidate period is shorter than one test window"));
    }
    if (repeats as f64 - 1.0) * horizon > hi - start.days() {
        return Err(Error::invalid(format!("{repeats} disjoint {horizon}-day windows do not fit the candidate period")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<f64> = Vec::with_capacity(repeats);
    let mut attempts = 0usize;
    while picked.len() < repeats {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::invalid("could not place disjoint test windows; lower the repeat count"));
        }
        let r = rng.random_range(start.days()..=hi);
        if picked.iter().all(|&p| (p - r).abs() >= horizon) {
            picked.push(r);
        }
    }
    picked.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    picked.into_iter().map(Time::new).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RepeatResult {
    pub reference_days: f64,
    pub n_test: usize,
    pub rmse: f64,
    /// Same window scored with the base-training mean for every rating.
    pub baseline_rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub baseline_rmse_mean: f64,
    pub repeats: Vec<RepeatResult>,
    pub skipped: Vec<f64>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Streams the log once in time order; at each reference time, scores the
/// ratings of the following window whose user and item already exist.
///
/// Predictions are continuous likeness read back as stars through `map`.
/// `baseline` is the constant used for the comparison column.
pub fn prequential_eval<T: Scalar>(
    events: &[Event],
    params: ModelParams<T>,
    map: &RatingMap,
    protocol: &EvalProtocol,
    filter: FilterConfig,
    baseline: f64,
) -> Result<EvalReport> {
    let refs = match &protocol.reference_times {
        Some(r) => {
            let mut r = r.clone();
            r.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            if r.windows(2).any(|w| w[1].since(w[0]) < protocol.horizon) {
                return Err(Error::invalid("test windows overlap"));
            }
            r
        }
        None => {
            let split = split_time(events, protocol.split_fraction)?;
            let end = events.last().expect("split found ratings").time;
            sample_reference_times(split, end, protocol.horizon, protocol.repeats, protocol.seed)?
        }
    };

    let mut fs = FilterState::with_config(params, map.scale(), filter)?;
    let mut done = 0usize;
    let mut results = Vec::new();
    let mut skipped = Vec::new();
    for &reference in &refs {
        let upto = events.partition_point(|e| e.time < reference);
        fs.run_stream(&events[done..upto])?;
        done = upto;
        let window_end = reference.plus_days(protocol.horizon);
        let (mut pred, mut truth) = (Vec::new(), Vec::new());
        for e in events[upto..].iter().take_while(|e| e.time < window_end) {
            let EventKind::Rating { user, item, level } = e.kind else { continue };
            if !fs.users().contains(user.0) || !fs.items().contains(item.0) {
                continue;
            }
            let x = fs.predict_likeness(user, item, e.time)?;
            pred.push(map.star_of_likeness(x.f64()));
            truth.push(map.star_of_level(level));
        }
        if pred.is_empty() {
            log::warn!("no test ratings in the window starting at day {}; skipping", reference.days());
            skipped.push(reference.days());
            continue;
        }
        let constant = vec![baseline; truth.len()];
        let r = RepeatResult {
            reference_days: reference.days(),
            n_test: pred.len(),
            rmse: rmse(&pred, &truth)?,
            baseline_rmse: rmse(&constant, &truth)?,
        };
        log::info!("reference day {:.2}: {} test ratings, rmse {:.4}", r.reference_days, r.n_test, r.rmse);
        results.push(r);
    }
    if results.is_empty() {
        return Err(Error::Empty("test windows"));
    }
    let (rmse_mean, rmse_std) = mean_std(&results.iter().map(|r| r.rmse).collect::<Vec<_>>());
    let (baseline_rmse_mean, _) = mean_std(&results.iter().map(|r| r.baseline_rmse).collect::<Vec<_>>());
    Ok(EvalReport { rmse_mean, rmse_std, baseline_rmse_mean, repeats: results, skipped })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationCurve {
    pub side: &'static str,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Lag in days at which the averaged curve crosses 0.5.
    pub half_time: f64,
}

impl CorrelationCurve {
    pub fn half_time_years(&self) -> f64 {
        self.half_time / DAYS_PER_YEAR
    }
}

/// Averaged squared correlation `c / (c + d·δ·σ²)` between an entity's
/// latent at `at` and `δ` days later, where `c` is the trace of its
/// covariance propagated to `at`.
pub fn correlation_decay<T: Scalar>(fs: &FilterState<T>, side: Side, grid: &[f64], at: Time) -> Result<CorrelationCurve> {
    let sigma2 = fs.params().sigma2(side).f64();
    if !(sigma2 > 0.0) {
        return Err(Error::invalid("correlation decay needs a positive diffusion variance"));
    }
    if grid.iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::invalid("lags must be non-negative"));
    }
    let mut traces = Vec::new();
    for (id, _) in fs.population(side).iter() {
        let s = fs.state_at(side, id, at.max(fs.population(side).get(id).expect("iterated").last_event_time))?;
        traces.push(s.cov.trace().f64());
    }
    if traces.is_empty() {
        return Err(Error::Empty("entities for correlation decay"));
    }
    let rate = fs.dim() as f64 * sigma2;
    let curve = |delta: f64| traces.iter().map(|&c| c / (c + rate * delta)).sum::<f64>() / traces.len() as f64;
    let values: Vec<f64> = grid.iter().map(|&d| curve(d)).collect();

    // The averaged curve falls monotonically from 1 to 0; bracket then bisect.
    let mut hi = traces.iter().cloned().fold(0.0, f64::max) / rate;
    while curve(hi) > 0.5 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if curve(mid) > 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    Ok(CorrelationCurve { side: side.as_str(), grid: grid.to_vec(), values, half_time: 0.5 * (lo + hi) })
}

/// Writes `delta_days,value` rows.
pub fn write_curve<W: Write>(w: W, curve: &CorrelationCurve) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["delta_days", "value"])?;
    for (d, v) in curve.grid.iter().zip(&curve.values) {
        out.write_record([d.to_string(), v.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// What to sample while replaying a stream.
#[derive(Clone, Debug, Default)]
pub struct TrajectoryRecorder {
    /// Sampling instants; each sees every event at or before it.
    pub instants: Vec<Time>,
    pub users: Vec<UserId>,
    pub items: Vec<ItemId>,
    pub pairs: Vec<(UserId, ItemId)>,
    /// Also emit the per-dimension population mean of each side.
    pub averages: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub time: f64,
    pub kind: &'static str,
    pub label: String,
    pub dim: usize,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Recording {
    pub rows: Vec<TrajectoryRow>,
    pub instants: usize,
}

impl TrajectoryRecorder {
    /// Replays `log` into `fs`, sampling at every instant. Entities not yet
    /// born at an instant are left out of that instant.
    pub fn run<T: Scalar>(&self, fs: &mut FilterState<T>, log: &EventLog) -> Result<Recording> {
        if self.instants.is_empty() {
            return Err(Error::Empty("sampling instants"));
        }
        let mut instants = self.instants.clone();
        instants.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let mut rows = Vec::new();
        let mut batch_iter = batches(&log.events).peekable();
        for &at in &instants {
            while let Some(b) = batch_iter.next_if(|b| b[0].time <= at) {
                fs.process_batch(b)?;
            }
            self.sample(fs, log, at, &mut rows)?;
        }
        Ok(Recording { rows, instants: instants.len() })
    }

    fn sample<T: Scalar>(&self, fs: &FilterState<T>, log: &EventLog, at: Time, rows: &mut Vec<TrajectoryRow>) -> Result<()> {
        let t = at.days();
        let mut push = |kind: &'static str, label: String, values: &[T]| {
            for (dim, v) in values.iter().enumerate() {
                rows.push(TrajectoryRow { time: t, kind, label: label.clone(), dim, value: v.f64() });
            }
        };
        for u in &self.users {
            if let Some(s) = fs.user(*u) {
                push("user", log.users.name(u.0).to_string(), &s.mean);
            }
        }
        for i in &self.items {
            if let Some(s) = fs.item(*i) {
                push("item", log.items.name(i.0).to_string(), &s.mean);
            }
        }
        if self.averages {
            for (side, kind) in [(Side::User, "user_avg"), (Side::Item, "item_avg")] {
                let pop = fs.population(side);
                if !pop.is_empty() {
                    let n = T::of(pop.len() as f64);
                    let avg: Vec<T> = pop.mean_sum().iter().map(|&s| s / n).collect();
                    push(kind, "all".into(), &avg);
                }
            }
        }
        for &(u, i) in &self.pairs {
            if fs.user(u).is_some() && fs.item(i).is_some() {
                let x = fs.predict_likeness(u, i, at.max(fs.now()))?;
                push("pair", format!("{}:{}", log.users.name(u.0), log.items.name(i.0)), &[x]);
            }
        }
        Ok(())
    }
}

/// Tidy CSV `time,kind,entity_or_pair,dim,value`.
pub fn export_trajectories<W: Write>(w: W, rec: &Recording) -> Result<()> {
    if rec.instants == 0 {
        return Err(Error::Empty("recording; run a recorder first"));
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["time", "kind", "entity_or_pair", "dim", "value"])?;
    for r in &rec.rows {
        out.write_record([r.time.to_string(), r.kind.to_string(), r.label.clone(), r.dim.to_string(), r.value.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Evenly spaced instants from `start` to `end` inclusive.
pub fn even_instants(start: Time, end: Time, count: usize) -> Result<Vec<Time>> {
    if count == 0 || end < start {
        return Err(Error::invalid("need at least one instant and end ≥ start"));
    }
    if count == 1 {
        return Ok(vec![end]);
    }
    let step = end.since(start) / (count - 1) as f64;
    (0..count).map(|k| Time::new(start.days() + step * k as f64)).collect()
}

/// Number of distinct timestamps, i.e. the batches a replay must process.
pub fn distinct_times(events: &[Event]) -> usize {
    batches(events).count()
}

/// Per-user rating counts, handy for picking active users to trace.
pub fn rating_counts(events: &[Event]) -> HashMap<UserId, usize> {
    let mut out = HashMap::new();
    for e in events {
        if let EventKind::Rating { user, .. } = e.kind {
            *out.entry(user).or_insert(0) += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::model::LatentState;

    #[test]
    fn movielens_row_conversion() {
        let text = "userId,movieId,rating,timestamp\n1,31,2.5,1260759144\n";
        let ml = load_movielens(text.as_bytes()).unwrap();
        assert!(ml.half_stars);
        assert_eq!(ml.levels(), 10);
        let e = ml.log.events.iter().find(|e| !e.kind.is_birth()).unwrap();
        assert_eq!(e.kind, EventKind::Rating { user: UserId(0), item: ItemId(0), level: 5 });
        assert!((e.time.days() - 1260759144.0 / 86400.0).abs() < 1e-9);
        assert_eq!(ml.log.users.name(0), "1");
        assert_eq!(ml.log.items.name(0), "31");
        assert_eq!(ml.log.events.len(), 3);
    }

    #[test]
    fn integer_ratings_use_five_levels() {
        let text = "userId,movieId,rating,timestamp\n1,2,4,100\n1,3,1,200\n";
        let ml = load_movielens(text.as_bytes()).unwrap();
        assert!(!ml.half_stars);
        let levels: Vec<u16> = ml
            .log
            .events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::Rating { level, .. } => Some(level),
                _ => None,
            })
            .collect();
        assert_eq!(levels, [4, 1]);
        assert_eq!(ml.global_mean, 2.5);
        assert_eq!(ml.rating_map(0.0).star_of_level(4), 4.0);
    }

    #[test]
    fn unsorted_rows_sorted_and_rerating_kept() {
        let text = "userId,movieId,rating,timestamp\n1,2,4,900\n1,2,3,100\n2,2,5,500\n";
        let ml = load_movielens(text.as_bytes()).unwrap();
        assert!(ml.log.validate(Some(5)).is_valid());
        let ratings: Vec<(f64, u16)> = ml
            .log
            .events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::Rating { level, .. } => Some((e.time.days() * 86400.0, level)),
                _ => None,
            })
            .collect();
        assert_eq!(ratings.len(), 3);
        assert_eq!(ratings.iter().map(|r| r.1).collect::<Vec<_>>(), [3, 5, 4]);
    }

    #[test]
    fn malformed_rows_reported_or_fatal() {
        let mut text = String::from("userId,movieId,rating,timestamp\n");
        for k in 0..200 {
            text.push_str(&format!("1,{k},3,{}\n", 1000 + k));
        }
        text.push_str("1,x,seven,5\n");
        let ml = load_movielens(text.as_bytes()).unwrap();
        assert_eq!(ml.malformed.len(), 1);
        assert_eq!(ml.malformed[0].0, 202);

        let bad = "userId,movieId,rating,timestamp\n1,2,3,4\n1,2,9,5\n";
        match load_movielens(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected a parse error, got {other:?}"),
        }
        assert!(load_movielens("userId,movieId,rating,timestamp\n".as_bytes()).is_err());
        assert!(load_movielens("user,movie\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - (12.5f64).sqrt()).abs() < 1e-15);
        assert_eq!(rmse(&[2.0], &[5.0]).unwrap(), 3.0);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn reference_windows_disjoint_and_seeded() {
        let (a, b) = (Time::new(100.0).unwrap(), Time::new(400.0).unwrap());
        let r1 = sample_reference_times(a, b, 7.0, 10, 3).unwrap();
        assert_eq!(r1, sample_reference_times(a, b, 7.0, 10, 3).unwrap());
        assert_eq!(r1.len(), 10);
        for w in r1.windows(2) {
            assert!(w[1].since(w[0]) >= 7.0);
        }
        assert!(r1.iter().all(|r| *r >= a && r.days() <= 393.0));
        assert!(sample_reference_times(a, Time::new(150.0).unwrap(), 7.0, 10, 0).is_err());
    }

    fn state_with_trace(fs: &mut FilterState<f64>, id: u32, trace: f64) {
        let dim = fs.dim();
        let s = LatentState::new(vec![0.0; dim], Matrix::scaled_identity(dim, trace / dim as f64), Time::ZERO).unwrap();
        fs.insert_state(Side::User, id, s, Time::ZERO).unwrap();
    }

    #[test]
    fn single_entity_half_time_closed_form() {
        let params = ModelParams::new(1.0, 0.02, 0.01, 2).unwrap();
        let mut fs = FilterState::new(params, crate::probit::default_thresholds(5, -1.5, 1.0).unwrap()).unwrap();
        state_with_trace(&mut fs, 0, 0.3);
        let c = correlation_decay(&fs, Side::User, &[0.0, 1.0, 10.0], Time::ZERO).unwrap();
        assert_eq!(c.values[0], 1.0);
        assert!(c.values.windows(2).all(|w| w[1] < w[0]));
        assert!((c.half_time - 0.3 / (2.0 * 0.02)).abs() < 1e-9);
    }

    #[test]
    fn averaged_half_time_is_the_crossing() {
        let params = ModelParams::new(1.0, 0.02, 0.01, 2).unwrap();
        let mut fs = FilterState::new(params, crate::probit::default_thresholds(5, -1.5, 1.0).unwrap()).unwrap();
        state_with_trace(&mut fs, 0, 0.1);
        state_with_trace(&mut fs, 1, 0.9);
        let c = correlation_decay(&fs, Side::User, &[], Time::ZERO).unwrap();
        let at = correlation_decay(&fs, Side::User, &[c.half_time], Time::ZERO).unwrap();
        assert!((at.values[0] - 0.5).abs() < 1e-10);
        assert!(correlation_decay(&fs, Side::Item, &[0.0], Time::ZERO).is_err());
    }

    #[test]
    fn recorder_constant_series_without_events() {
        let log = EventLog::from_events(vec![Event::user_birth(0.0, 0), Event::item_birth(0.0, 0)]);
        let params = ModelParams::new(1.0, 0.02, 0.01, 2).unwrap();
        let mut fs = FilterState::new(params, crate::probit::default_thresholds(5, -1.5, 1.0).unwrap()).unwrap();
        let rec = TrajectoryRecorder {
            instants: even_instants(Time::ZERO, Time::new(10.0).unwrap(), 4).unwrap(),
            users: vec![UserId(0)],
            items: vec![],
            pairs: vec![(UserId(0), ItemId(0))],
            averages: false,
        }
        .run(&mut fs, &log)
        .unwrap();
        let pair_rows: Vec<_> = rec.rows.iter().filter(|r| r.kind == "pair").collect();
        assert_eq!(pair_rows.len(), 4);
        let user0: Vec<f64> = rec.rows.iter().filter(|r| r.kind == "user" && r.dim == 0).map(|r| r.value).collect();
        assert!(user0.windows(2).all(|w| w[0] == w[1]));
        let mut buf = Vec::new();
        export_trajectories(&mut buf, &rec).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("time,kind,entity_or_pair,dim,value\n"));
        assert!(export_trajectories(Vec::new(), &Recording::default()).is_err());
    }
}
