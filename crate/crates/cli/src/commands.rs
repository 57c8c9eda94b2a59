use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::json;
use srec::eval::{
    distinct_times, even_instants, mean_stars_before, split_time, summarize, write_curve, TrajectoryRecorder,
};
use srec::io::{lookup_item, lookup_user, read_events, read_params, read_snapshot, write_events, write_params,
    write_snapshot, write_trace, write_truth};
use srec::model::{Event, EventKind};
use srec::{
    correlation_decay, em_fit, generate, load_movielens, prequential_eval, EmConfig, EventLog, EvalProtocol,
    FilterConfig, FilterState, ModelParams, RatingMap, Side, SimConfig, StartPoint, Time,
};

use crate::settings::Settings;
use crate::{
    Analysis, Cli, Command, CorrDecayArgs, EvalArgs, IngestArgs, ScaleArgs, SideArg, SimulateArgs, StreamArgs,
    TrainArgs, TrajectoryArgs,
};

#[derive(Debug)]
pub enum CliError {
    Core(srec::Error),
    Io { path: PathBuf, source: std::io::Error },
    Config(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(srec::Error::Parse { .. } | srec::Error::Csv(_)) => "parse",
            CliError::Core(srec::Error::InvalidArgument(_)) => "invalid_argument",
            CliError::Core(_) => "model",
            CliError::Io { .. } => "io",
            CliError::Config(_) => "config",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Config(m) => write!(f, "{m}"),
        }
    }
}

impl From<srec::Error> for CliError {
    fn from(e: srec::Error) -> Self {
        CliError::Core(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn flush(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

fn print(value: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&value).expect("json values serialize"));
}

fn read_log(path: &Path) -> Result<EventLog> {
    let log = read_events(open(path)?)?;
    if log.events.is_empty() {
        return Err(CliError::Config(format!("{} holds no events", path.display())));
    }
    Ok(log)
}

fn load_params(path: Option<&Path>) -> Result<ModelParams<f64>> {
    match path {
        Some(p) if p.exists() => Ok(read_params(open(p)?)?),
        Some(p) => {
            log::warn!("params file {} not found; using defaults", p.display());
            Ok(ModelParams::default())
        }
        None => {
            log::warn!("no params file given; using defaults");
            Ok(ModelParams::default())
        }
    }
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name} must be positive, got {v}")))
    }
}

struct Scale {
    map: RatingMap,
    split_fraction: f64,
}

fn resolve_scale(events: &[Event], args: &ScaleArgs, s: &Settings) -> Result<Scale> {
    let max_level = events
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::Rating { level, .. } => Some(level as usize),
            _ => None,
        })
        .max()
        .unwrap_or(5);
    let levels = s.get(args.levels, "levels", if max_level > 5 { 10 } else { 5 })?;
    if max_level > levels {
        return Err(CliError::Config(format!("log has level {max_level} but the scale has {levels} levels")));
    }
    let step = positive("star_step", s.get(args.star_step, "star_step", if levels == 10 { 0.5 } else { 1.0 })?)?;
    let split_fraction = s.get(args.split_fraction, "split_fraction", 0.5)?;
    let center = match s.opt(args.center, "center")? {
        Some(c) => c,
        None => {
            let probe = RatingMap::new(levels, 0.0, step, 0.0)?;
            mean_stars_before(events, split_time(events, split_fraction)?, &probe)?
        }
    };
    Ok(Scale { map: RatingMap::new(levels, 0.0, step, center)?, split_fraction })
}

fn filter_config(seed: u64) -> FilterConfig {
    FilterConfig { start: StartPoint::PriorDraw { seed }, ..FilterConfig::default() }
}

pub fn run(cli: Cli) -> Result<()> {
    let section = match &cli.command {
        Command::Ingest(_) => "ingest",
        Command::Train(_) => "train",
        Command::Stream(_) => "stream",
        Command::Eval(_) => "eval",
        Command::Simulate(_) => "simulate",
        Command::Analyze { .. } => "analyze",
    };
    let s = Settings::load(cli.config.as_deref(), section)?;
    if let Some(n) = s.opt(cli.threads, "threads")? {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let seed = s.get(cli.seed, "seed", 0u64)?;
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Train(a) => train(a, &s, seed),
        Command::Stream(a) => stream(a, &s, seed),
        Command::Eval(a) => eval(a, &s, seed),
        Command::Simulate(a) => simulate(a, &s, seed),
        Command::Analyze { what: Analysis::CorrDecay(a) } => corr_decay(a, &s, seed),
        Command::Analyze { what: Analysis::Trajectories(a) } => trajectories(a, &s, seed),
    }
}

fn ingest(a: IngestArgs) -> Result<()> {
    let ml = load_movielens(open(&a.input)?)?;
    let mut w = create(&a.output)?;
    write_events(&mut w, &ml.log)?;
    flush(w, &a.output)?;
    let sum = summarize(&ml.log);
    print(json!({
        "users": sum.users,
        "items": sum.items,
        "ratings": sum.ratings,
        "start_days": sum.start_days,
        "end_days": sum.end_days,
        "levels": ml.levels(),
        "global_mean": ml.global_mean,
        "malformed_rows": ml.malformed.len(),
    }));
    Ok(())
}

fn train(a: TrainArgs, s: &Settings, seed: u64) -> Result<()> {
    let log = read_log(&a.events)?;
    let mut init = load_params(a.params.as_deref())?;
    if let Some(d) = s.opt(a.dim, "dim")? {
        init.dim = d;
    }
    let scale = resolve_scale(&log.events, &a.scale, s)?;
    let events = if a.base_only {
        log.prefix_before(split_time(&log.events, scale.split_fraction)?)
    } else {
        &log.events[..]
    };
    let config = EmConfig {
        max_iters: s.get(a.max_iters, "max_iters", 30)?,
        tol: positive("tol", s.get(a.tol, "tol", 1e-3)?)?,
        filter: filter_config(seed),
        rating_map: Some(scale.map),
        ..EmConfig::default()
    };
    let fit = em_fit(events, &scale.map.scale(), init, &config)?;
    let mut w = create(&a.params_out)?;
    write_params(&mut w, &fit.params)?;
    flush(w, &a.params_out)?;
    if let Some(path) = &a.trace_out {
        let mut w = create(path)?;
        write_trace(&mut w, &fit.trace)?;
        flush(w, path)?;
    }
    print(json!({
        "iterations": fit.trace.len(),
        "converged": fit.converged,
        "sigma2_E": fit.params.sigma2_e,
        "sigma2_U": fit.params.sigma2_u,
        "sigma2_V": fit.params.sigma2_v,
        "d": fit.params.dim,
        "train_rmse": fit.trace.last().map(|r| r.train_rmse),
        "center": scale.map.center,
    }));
    Ok(())
}

fn stream(a: StreamArgs, s: &Settings, seed: u64) -> Result<()> {
    let log = read_log(&a.events)?;
    let params = load_params(Some(&a.params))?;
    let scale = resolve_scale(&log.events, &a.scale, s)?;
    let mut fs = FilterState::with_config(params, scale.map.scale(), filter_config(seed))?;
    let stats = fs.run_stream(&log.events)?;
    let mut w = create(&a.snapshot_out)?;
    write_snapshot(&mut w, &fs)?;
    flush(w, &a.snapshot_out)?;
    let secs = stats.wall_time.as_secs_f64();
    print(json!({
        "batches": stats.batches,
        "distinct_times": distinct_times(&log.events),
        "births": stats.births,
        "ratings": stats.ratings,
        "passes": stats.passes,
        "unconverged_batches": stats.unconverged_batches,
        "seconds": secs,
        "ratings_per_second": stats.ratings as f64 / secs.max(1e-9),
    }));
    Ok(())
}

fn eval(a: EvalArgs, s: &Settings, seed: u64) -> Result<()> {
    let log = read_log(&a.events)?;
    let params = load_params(Some(&a.params))?;
    let scale = resolve_scale(&log.events, &a.scale, s)?;
    let protocol = EvalProtocol {
        horizon: positive("horizon", s.get(a.horizon, "horizon", 7.0)?)?,
        split_fraction: scale.split_fraction,
        repeats: s.get(a.repeats, "repeats", 10)?,
        seed,
        reference_times: None,
    };
    let probe = RatingMap { center: 0.0, ..scale.map };
    let baseline = mean_stars_before(&log.events, split_time(&log.events, scale.split_fraction)?, &probe)?;
    let report = prequential_eval(&log.events, params, &scale.map, &protocol, filter_config(seed), baseline)?;
    let value = serde_json::to_value(&report).map_err(srec::Error::from)?;
    match &a.metrics_out {
        Some(path) => {
            let mut w = create(path)?;
            serde_json::to_writer_pretty(&mut w, &value).map_err(srec::Error::from)?;
            writeln!(w).map_err(|e| CliError::io(path, e))?;
            flush(w, path)?;
            print(json!({ "rmse_mean": report.rmse_mean, "rmse_std": report.rmse_std,
                "baseline_rmse_mean": report.baseline_rmse_mean }));
        }
        None => print(value),
    }
    Ok(())
}

fn simulate(a: SimulateArgs, s: &Settings, seed: u64) -> Result<()> {
    let params = ModelParams::new(
        s.get(a.sigma2_e, "sigma2_E", 0.5)?,
        s.get(a.sigma2_u, "sigma2_U", 1e-2)?,
        s.get(a.sigma2_v, "sigma2_V", 5e-3)?,
        s.get(a.dim, "d", 2)?,
    )?;
    let levels = s.get(a.scale.levels, "levels", 5)?;
    let step = positive("star_step", s.get(a.scale.star_step, "star_step", 1.0)?)?;
    let center = s.get(a.scale.center, "center", step * (levels + 1) as f64 / 2.0)?;
    let map = RatingMap::new(levels, 0.0, step, center)?;
    let cfg = SimConfig {
        params,
        scale: map.scale(),
        initial_users: s.get(a.initial_users, "initial_users", 100)?,
        initial_items: s.get(a.initial_items, "initial_items", 100)?,
        user_birth_rate: s.get(a.user_birth_rate, "user_birth_rate", 100.0 / 365.0)?,
        item_birth_rate: s.get(a.item_birth_rate, "item_birth_rate", 100.0 / 365.0)?,
        rating_rate: s.get(a.rating_rate, "rating_rate", 0.9)?,
        horizon: s.get(a.horizon, "horizon", 365.0)?,
        seed,
    };
    let out = generate(&cfg)?;
    let mut w = create(&a.out)?;
    write_events(&mut w, &out.log)?;
    flush(w, &a.out)?;
    if let Some(path) = &a.truth_out {
        let mut w = create(path)?;
        write_truth(&mut w, &out.truth)?;
        flush(w, path)?;
    }
    let sum = summarize(&out.log);
    print(json!({ "users": sum.users, "items": sum.items, "ratings": sum.ratings, "center": center }));
    Ok(())
}

fn side(a: SideArg) -> Side {
    match a {
        SideArg::User => Side::User,
        SideArg::Item => Side::Item,
    }
}

fn corr_decay(a: CorrDecayArgs, s: &Settings, seed: u64) -> Result<()> {
    let fs: FilterState<f64> = match (&a.snapshot, &a.events, &a.params) {
        (Some(snap), _, _) => read_snapshot(open(snap)?)?,
        (None, Some(events), Some(params)) => {
            let log = read_log(events)?;
            let scale = resolve_scale(&log.events, &a.scale, s)?;
            let mut fs = FilterState::with_config(load_params(Some(params))?, scale.map.scale(), filter_config(seed))?;
            let upto = match a.at {
                Some(t) => log.prefix_before(Time::new(t)?.plus_days(1e-9)),
                None => &log.events[..],
            };
            fs.run_stream(upto)?;
            fs
        }
        _ => return Err(CliError::Config("give --snapshot, or both --events and --params".into())),
    };
    if a.points < 2 {
        return Err(CliError::Config("--points must be at least 2".into()));
    }
    let max_days = positive("max_days", a.max_days)?;
    let grid: Vec<f64> = (0..a.points).map(|k| max_days * k as f64 / (a.points - 1) as f64).collect();
    let at = match a.at {
        Some(t) => Time::new(t)?,
        None => fs.now(),
    };
    let curve = correlation_decay(&fs, side(a.side), &grid, at)?;
    let mut w = create(&a.out)?;
    write_curve(&mut w, &curve)?;
    flush(w, &a.out)?;
    print(json!({
        "side": curve.side,
        "reference_days": at.days(),
        "half_time_days": curve.half_time,
        "half_time_years": curve.half_time_years(),
    }));
    Ok(())
}

fn trajectories(a: TrajectoryArgs, s: &Settings, seed: u64) -> Result<()> {
    let log = read_log(&a.events)?;
    let scale = resolve_scale(&log.events, &a.scale, s)?;
    let mut fs = FilterState::with_config(load_params(Some(&a.params))?, scale.map.scale(), filter_config(seed))?;
    let (start, end) = log.time_span().expect("log is non-empty");
    let pairs = a
        .pairs
        .iter()
        .map(|p| {
            let (u, i) = p.split_once(':').ok_or_else(|| CliError::Config(format!("pair {p:?} is not user:item")))?;
            Ok((lookup_user(&log, u)?, lookup_item(&log, i)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let recorder = TrajectoryRecorder {
        instants: even_instants(start, end, a.instants)?,
        users: a.users.iter().map(|u| lookup_user(&log, u)).collect::<srec::Result<_>>()?,
        items: a.items.iter().map(|i| lookup_item(&log, i)).collect::<srec::Result<_>>()?,
        pairs,
        averages: a.averages,
    };
    let rec = recorder.run(&mut fs, &log)?;
    let mut w = create(&a.out)?;
    srec::eval::export_trajectories(&mut w, &rec)?;
    flush(w, &a.out)?;
    print(json!({ "rows": rec.rows.len(), "instants": rec.instants }));
    Ok(())
}
