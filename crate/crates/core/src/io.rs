//! Text formats: canonical event log, filter snapshots, parameter files,
//! EM traces, simulator truth and the key-value config dialect.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::em::TraceRow;
use crate::error::{Error, Result};
use crate::filter::{FilterConfig, FilterState};
use crate::linalg::Matrix;
use crate::model::{sort_events, Event, EventKind, EventLog, ItemId, LatentState, ModelParams, Side, Time, UserId};
use crate::probit::RatingScale;
use crate::scalar::Scalar;
use crate::synthetic::TruthPoint;

pub const EVENT_HEADER: [&str; 5] = ["time", "kind", "user", "item", "level"];

fn fmt_exact(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_field<V: FromStr>(raw: &str, line: usize, what: &str) -> Result<V> {
    raw.trim().parse().map_err(|_| Error::Parse { line, msg: format!("bad {what}: {raw:?}") })
}

fn line_of(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

/// Writes `time,kind,user,item,level` rows using the log's entity names.
pub fn write_events<W: Write>(w: W, log: &EventLog) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(EVENT_HEADER)?;
    for e in &log.events {
        let t = fmt_exact(e.time.days());
        match e.kind {
            EventKind::UserBirth(u) => out.write_record([t.as_str(), "ubirth", log.users.name(u.0), "", ""])?,
            EventKind::ItemBirth(i) => out.write_record([t.as_str(), "ibirth", "", log.items.name(i.0), ""])?,
            EventKind::Rating { user, item, level } => out.write_record([
                t.as_str(),
                "rate",
                log.users.name(user.0),
                log.items.name(item.0),
                &level.to_string(),
            ])?,
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads the canonical event CSV. Ids are assigned in order of first
/// appearance and the result is stably sorted.
pub fn read_events<R: Read>(r: R) -> Result<EventLog> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(EVENT_HEADER) {
        return Err(Error::Parse { line: 1, msg: format!("expected header {}", EVENT_HEADER.join(",")) });
    }
    let mut log = EventLog::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let time = Time::new(parse_field::<f64>(&rec[0], line, "time")?)
            .map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let need = |i: usize, what: &str| -> Result<&str> {
            let v = &rec[i];
            if v.is_empty() {
                return Err(Error::Parse { line, msg: format!("missing {what}") });
            }
            Ok(v)
        };
        let kind = match &rec[1] {
            "ubirth" => EventKind::UserBirth(log.user_id(need(2, "user")?)),
            "ibirth" => EventKind::ItemBirth(log.item_id(need(3, "item")?)),
            "rate" => {
                let user = log.user_id(need(2, "user")?);
                let item = log.item_id(need(3, "item")?);
                let level: u16 = parse_field(need(4, "level")?, line, "level")?;
                if level == 0 {
                    return Err(Error::Parse { line, msg: "levels start at 1".into() });
                }
                EventKind::Rating { user, item, level }
            }
            other => return Err(Error::Parse { line, msg: format!("unknown kind {other:?}") }),
        };
        log.events.push(Event { time, kind });
    }
    sort_events(&mut log.events);
    Ok(log)
}

/// Dumps the full filter state. Floats carry 17 significant digits so
/// `read_snapshot` restores every value bit for bit.
pub fn write_snapshot<T: Scalar, W: Write>(w: W, fs: &FilterState<T>) -> Result<()> {
    let mut out = csv::WriterBuilder::new().flexible(true).from_writer(w);
    let f = |x: T| fmt_exact(x.f64());
    let p = fs.params();
    out.write_record(["d", &p.dim.to_string()])?;
    out.write_record([
        "params",
        &f(p.sigma2_e),
        &f(p.sigma2_u),
        &f(p.sigma2_v),
        &f(p.sigma2_u0),
        &f(p.sigma2_v0),
    ])?;
    let c = fs.config();
    out.write_record([
        "config",
        &fmt_exact(c.tol),
        &c.max_passes.to_string(),
        &fmt_exact(c.jitter),
        &c.start.to_string(),
    ])?;
    let mut row = vec!["thresholds".to_string()];
    row.extend(fs.scale().interior().iter().map(|&x| f(x)));
    out.write_record(&row)?;
    out.write_record(["now", &fmt_exact(fs.now().days())])?;
    for side in [Side::User, Side::Item] {
        let mut row = vec![format!("{}_mean_sum", side.as_str())];
        row.extend(fs.population(side).mean_sum().iter().map(|&x| f(x)));
        out.write_record(&row)?;
    }
    for side in [Side::User, Side::Item] {
        let pop = fs.population(side);
        for (id, s) in pop.iter() {
            let birth = pop.birth_time(id).expect("iterated entity exists");
            let mut row = vec![
                side.as_str().to_string(),
                id.to_string(),
                fmt_exact(birth.days()),
                fmt_exact(s.last_event_time.days()),
                (pop.is_fresh(id) as u8).to_string(),
            ];
            row.extend(s.mean.iter().map(|&x| f(x)));
            row.extend(s.cov.lower().into_iter().map(f));
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_snapshot<T: Scalar, R: Read>(r: R) -> Result<FilterState<T>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(r);
    let mut header: BTreeMap<String, (usize, Vec<String>)> = BTreeMap::new();
    let mut entities = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let tag = rec.get(0).unwrap_or_default().to_string();
        let rest: Vec<String> = rec.iter().skip(1).map(str::to_string).collect();
        if tag == "user" || tag == "item" {
            entities.push((line, tag, rest));
        } else {
            header.insert(tag, (line, rest));
        }
    }
    let get = |key: &str| -> Result<&(usize, Vec<String>)> {
        header.get(key).ok_or_else(|| Error::Parse { line: 0, msg: format!("snapshot lacks a {key} row") })
    };
    let floats = |key: &str| -> Result<Vec<f64>> {
        let (line, vals) = get(key)?;
        vals.iter().map(|v| parse_field(v, *line, key)).collect()
    };
    let scalars = |key: &str| -> Result<Vec<T>> { Ok(floats(key)?.into_iter().map(T::of).collect()) };

    let (dline, dvals) = get("d")?;
    let dim: usize = parse_field(dvals.first().map_or("", String::as_str), *dline, "d")?;
    let pv = scalars("params")?;
    if pv.len() != 5 {
        return Err(Error::Parse { line: get("params")?.0, msg: "params row needs five values".into() });
    }
    let params = ModelParams {
        sigma2_e: pv[0],
        sigma2_u: pv[1],
        sigma2_v: pv[2],
        sigma2_u0: pv[3],
        sigma2_v0: pv[4],
        dim,
    };
    let (cline, cvals) = get("config")?;
    if cvals.len() != 4 {
        return Err(Error::Parse { line: *cline, msg: "config row needs four values".into() });
    }
    let config = FilterConfig {
        tol: parse_field(&cvals[0], *cline, "tol")?,
        max_passes: parse_field(&cvals[1], *cline, "max_passes")?,
        jitter: parse_field(&cvals[2], *cline, "jitter")?,
        start: cvals[3].parse().map_err(|e: Error| Error::Parse { line: *cline, msg: e.to_string() })?,
    };
    let scale = RatingScale::from_interior(&scalars("thresholds")?)?;
    let now = Time::new(floats("now")?.first().copied().unwrap_or(f64::NAN))?;
    let sums = [scalars("user_mean_sum")?, scalars("item_mean_sum")?];
    if sums.iter().any(|s| s.len() != dim) {
        return Err(Error::invalid("mean sum length does not match d"));
    }

    let mut fs = FilterState::with_config(params, scale, config)?;
    let packed = dim * (dim + 1) / 2;
    for (line, tag, rest) in entities {
        if rest.len() != 4 + dim + packed {
            return Err(Error::Parse { line, msg: format!("entity row needs {} fields", 5 + dim + packed) });
        }
        let side = if tag == "user" { Side::User } else { Side::Item };
        let id: u32 = parse_field(&rest[0], line, "id")?;
        let birth = Time::new(parse_field(&rest[1], line, "birth")?)?;
        let last = Time::new(parse_field(&rest[2], line, "last_event_time")?)?;
        let fresh = match rest[3].as_str() {
            "0" => false,
            "1" => true,
            other => return Err(Error::Parse { line, msg: format!("bad fresh flag {other:?}") }),
        };
        let nums: Vec<T> =
            rest[4..].iter().map(|v| parse_field::<f64>(v, line, "value").map(T::of)).collect::<Result<_>>()?;
        let cov = Matrix::from_lower(dim, &nums[dim..])?;
        let state = LatentState::new(nums[..dim].to_vec(), cov, last)?;
        fs.restore_state(side, id, state, birth, fresh)?;
    }
    let [us, is] = sums;
    fs.set_mean_sums(us, is);
    fs.set_now(now);
    Ok(fs)
}

/// Parses `key = value` lines. `#` starts a comment, quotes around values are
/// dropped and keys under a `[section]` header become `section.key`.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: n + 1, msg: format!("expected key=value, got {line:?}") })?;
        let key = if section.is_empty() { k.trim().to_string() } else { format!("{section}.{}", k.trim()) };
        let v = v.trim().trim_matches('"').to_string();
        if out.insert(key.clone(), v).is_some() {
            return Err(Error::Parse { line: n + 1, msg: format!("duplicate key {key:?}") });
        }
    }
    Ok(out)
}

pub fn write_params<T: Scalar, W: Write>(mut w: W, p: &ModelParams<T>) -> Result<()> {
    writeln!(w, "sigma2_E={}", fmt_exact(p.sigma2_e.f64()))?;
    writeln!(w, "sigma2_U={}", fmt_exact(p.sigma2_u.f64()))?;
    writeln!(w, "sigma2_V={}", fmt_exact(p.sigma2_v.f64()))?;
    writeln!(w, "d={}", p.dim)?;
    writeln!(w, "sigma2_U0={}", fmt_exact(p.sigma2_u0.f64()))?;
    writeln!(w, "sigma2_V0={}", fmt_exact(p.sigma2_v0.f64()))?;
    Ok(())
}

/// Overlays the keys of a params file on `base`. Unknown keys are errors.
pub fn params_from_kv<T: Scalar>(kv: &BTreeMap<String, String>, base: ModelParams<T>) -> Result<ModelParams<T>> {
    let mut p = base;
    for (k, v) in kv {
        let num = || -> Result<T> {
            v.parse::<f64>().map(T::of).map_err(|_| Error::invalid(format!("{k} is not a number: {v:?}")))
        };
        match k.as_str() {
            "sigma2_E" => p.sigma2_e = num()?,
            "sigma2_U" => p.sigma2_u = num()?,
            "sigma2_V" => p.sigma2_v = num()?,
            "sigma2_U0" => p.sigma2_u0 = num()?,
            "sigma2_V0" => p.sigma2_v0 = num()?,
            "d" => p.dim = v.parse().map_err(|_| Error::invalid(format!("d is not an integer: {v:?}")))?,
            _ => return Err(Error::invalid(format!("unknown parameter {k:?}"))),
        }
    }
    p.validate()?;
    Ok(p)
}

pub fn read_params<T: Scalar, R: Read>(mut r: R) -> Result<ModelParams<T>> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    params_from_kv(&parse_kv(&text)?, ModelParams::default())
}

pub fn write_trace<W: Write>(w: W, rows: &[TraceRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["iter", "sigma2_E", "sigma2_U", "sigma2_V", "train_rmse"])?;
    for r in rows {
        out.write_record([
            r.iter.to_string(),
            fmt_exact(r.sigma2_e),
            fmt_exact(r.sigma2_u),
            fmt_exact(r.sigma2_v),
            fmt_exact(r.train_rmse),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `entity,kind,time,mean0..mean{d-1}` for every recorded truth point.
pub fn write_truth<W: Write>(w: W, truth: &[TruthPoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let dim = truth.first().map_or(0, |p| p.latent.len());
    let mut header = vec!["entity".to_string(), "kind".into(), "time".into()];
    header.extend((0..dim).map(|k| format!("mean{k}")));
    out.write_record(&header)?;
    for p in truth {
        let mut row = vec![p.id.to_string(), p.side.as_str().to_string(), fmt_exact(p.time.days())];
        row.extend(p.latent.iter().map(|&x| fmt_exact(x)));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Resolves entity names from an event log, for commands taking names.
pub fn lookup_user(log: &EventLog, name: &str) -> Result<UserId> {
    log.users.get(name).map(UserId).ok_or_else(|| Error::UnknownEntity { kind: "user", id: name.into() })
}

pub fn lookup_item(log: &EventLog, name: &str) -> Result<ItemId> {
    log.items.get(name).map(ItemId).ok_or_else(|| Error::UnknownEntity { kind: "item", id: name.into() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probit::default_thresholds;

    fn small_log() -> EventLog {
        EventLog::from_events(vec![
            Event::user_birth(0.0, 0),
            Event::item_birth(0.0, 0),
            Event::item_birth(0.5, 1),
            Event::rating(1.0, 0, 0, 4),
            Event::rating(1.0, 0, 1, 2),
            Event::rating(2.25, 0, 1, 5),
        ])
    }

    #[test]
    fn events_round_trip() {
        let log = small_log();
        let mut buf = Vec::new();
        write_events(&mut buf, &log).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("time,kind,user,item,level\n"));
        assert!(text.contains(",ibirth,,1,\n"));
        assert_eq!(read_events(&buf[..]).unwrap(), log);
    }

    #[test]
    fn bad_event_rows_name_the_line() {
        let text = "time,kind,user,item,level\n0,ubirth,a,,\n1,rate,a,x,zero\n";
        match read_events(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(read_events("t,k\n".as_bytes()).is_err());
        assert!(read_events("time,kind,user,item,level\n0,move,a,,\n".as_bytes()).is_err());
    }

    #[test]
    fn unsorted_events_are_sorted() {
        let text = "time,kind,user,item,level\n2,rate,a,x,1\n0,ubirth,a,,\n0,ibirth,,x,\n";
        let log = read_events(text.as_bytes()).unwrap();
        let times: Vec<f64> = log.events.iter().map(|e| e.time.days()).collect();
        assert_eq!(times, [0.0, 0.0, 2.0]);
    }

    fn trained_state() -> FilterState<f64> {
        let params = ModelParams::new(0.7, 0.013, 0.0041, 3).unwrap();
        let scale = default_thresholds(5, -1.5, 1.0).unwrap();
        let mut fs = FilterState::new(params, scale).unwrap();
        fs.run_stream(&small_log().events).unwrap();
        fs
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let fs = trained_state();
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &fs).unwrap();
        let back: FilterState<f64> = read_snapshot(&buf[..]).unwrap();
        assert_eq!(back, fs);
        let mut again = Vec::new();
        write_snapshot(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn snapshot_round_trip_f32() {
        let params = ModelParams::new(0.7f32, 0.013, 0.0041, 2).unwrap();
        let mut fs = FilterState::new(params, default_thresholds(5, -1.5f32, 1.0).unwrap()).unwrap();
        fs.run_stream(&small_log().events).unwrap();
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &fs).unwrap();
        assert_eq!(read_snapshot::<f32, _>(&buf[..]).unwrap(), fs);
    }

    #[test]
    fn truncated_snapshot_is_rejected() {
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &trained_state()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let no_now: String = text.lines().filter(|l| !l.starts_with("now")).map(|l| format!("{l}\n")).collect();
        assert!(read_snapshot::<f64, _>(no_now.as_bytes()).is_err());
        let short: String = text.lines().map(|l| if l.starts_with("user,") { "user,0,0\n".to_string() } else { format!("{l}\n") }).collect();
        assert!(read_snapshot::<f64, _>(short.as_bytes()).is_err());
    }

    #[test]
    fn params_round_trip_and_defaults() {
        let p = ModelParams::new(0.5, 0.01, 0.005, 4).unwrap();
        let mut buf = Vec::new();
        write_params(&mut buf, &p).unwrap();
        assert_eq!(read_params::<f64, _>(&buf[..]).unwrap(), p);
        let partial: ModelParams<f64> = read_params("# only noise\nsigma2_E = 0.25\n".as_bytes()).unwrap();
        assert_eq!(partial.sigma2_e, 0.25);
        assert_eq!(partial.dim, ModelParams::<f64>::default().dim);
        assert!(read_params::<f64, _>("sigma2_X=1\n".as_bytes()).is_err());
        assert!(read_params::<f64, _>("sigma2_E=-1\n".as_bytes()).is_err());
    }

    #[test]
    fn kv_sections_comments_and_errors() {
        let kv = parse_kv("a = 1 # c\n[eval]\nseed = \"7\"\n\n").unwrap();
        assert_eq!(kv["a"], "1");
        assert_eq!(kv["eval.seed"], "7");
        assert!(matches!(parse_kv("a=1\nnonsense\n"), Err(Error::Parse { line: 2, .. })));
        assert!(parse_kv("a=1\na=2\n").is_err());
    }

    #[test]
    fn trace_and_truth_headers() {
        let row = TraceRow { iter: 1, sigma2_e: 0.5, sigma2_u: 0.01, sigma2_v: 0.02, train_rmse: 0.9, max_rel_change: 1.0 };
        let mut buf = Vec::new();
        write_trace(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "iter,sigma2_E,sigma2_U,sigma2_V,train_rmse");
        assert_eq!(text.lines().count(), 2);

        let pt = TruthPoint { side: Side::Item, id: 3, time: Time::new(1.5).unwrap(), latent: vec![0.25, -1.0] };
        let mut buf = Vec::new();
        write_truth(&mut buf, &[pt]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "entity,kind,time,mean0,mean1");
        assert!(text.lines().nth(1).unwrap().starts_with("3,item,"));
    }
}
