//! Files in and out: scenario and layout JSON, replay logs and result exports.
//!
//! Replay logs are CSV with header `kind,period,id_a,id_b,value`:
//!
//! ```text
//! kind,period,id_a,id_b,value
//! toa,0,0,0,0.000000016678
//! twr,0,0,1,4.2
//! ```
//!
//! `toa` rows carry tag, anchor and an arrival time in seconds; `twr` rows a
//! tag pair and a distance in meters. Floats are written with Rust's shortest
//! round-trip formatting, so a dump read back is bit-identical.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{ConfigOutcome, Layout, Mode, PairRange, PeriodMeasurements, RawPeriod, RunResult};
use crate::geometry::{distance, Point2};
use crate::metrics::{cdf, cep, cep_about, compare_algorithms, median, quantile, CdfSeries};
use crate::scenario::{validate_scenario, Scenario, Violation};

pub const REPLAY_HEADER: [&str; 5] = ["kind", "period", "id_a", "id_b", "value"];

/// CEP threshold used by the summary's "fraction above" figures, meters.
pub const CEP_THRESHOLD: f64 = 0.45;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: file is empty", path.display())]
    Empty { path: PathBuf },
    #[error("{}:{line}:{column}: at `{field}`: {message}", path.display())]
    Json {
        path: PathBuf,
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("{}: {}", path.display(), join_violations(violations))]
    Invalid {
        path: PathBuf,
        violations: Vec<Violation>,
    },
    #[error("{}:{line}: {error}", path.display())]
    Replay {
        path: PathBuf,
        line: u64,
        error: ReplayError,
    },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("expected header `kind,period,id_a,id_b,value`, found `{0}`")]
    Header(String),
    #[error("malformed row: {0}")]
    Malformed(String),
    #[error("unknown record kind `{0}`")]
    UnknownKind(String),
    #[error("unknown tag id {0}")]
    UnknownTag(usize),
    #[error("unknown anchor id {0}")]
    UnknownAnchor(usize),
    #[error("tag {0} ranged to itself")]
    SelfPair(usize),
    #[error("duplicate twr pair ({a}, {b}) in period {period}")]
    DuplicatePair { period: usize, a: usize, b: usize },
    #[error("duplicate toa for tag {tag} at anchor {anchor} in period {period}")]
    DuplicateToa {
        period: usize,
        tag: usize,
        anchor: usize,
    },
    #[error("period {period} after period {previous}")]
    NonMonotone { period: usize, previous: usize },
    #[error("value is not finite")]
    NonFinite,
}

fn read_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Read {
        path: path.to_path_buf(),
        source,
    }
}

fn write_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Write {
        path: path.to_path_buf(),
        source,
    }
}

/// Strict JSON decode with the offending field path in the error.
fn from_json<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<T, IoError> {
    if text.trim().is_empty() {
        return Err(IoError::Empty {
            path: origin.to_path_buf(),
        });
    }
    let json_err = |field: String, inner: serde_json::Error| {
        let msg = inner.to_string();
        let message = match msg.rsplit_once(" at line ") {
            Some((head, _)) => head.to_string(),
            None => msg,
        };
        IoError::Json {
            path: origin.to_path_buf(),
            line: inner.line(),
            column: inner.column(),
            field,
            message,
        }
    };
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        json_err(field, e.into_inner())
    })?;
    de.end().map_err(|e| json_err(".".into(), e))?;
    Ok(value)
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, IoError> {
    let text = fs::read_to_string(path).map_err(read_err(path))?;
    parse_scenario_str(&text, path)
}

/// Parse and validate scenario JSON; `origin` only labels diagnostics.
pub fn parse_scenario_str(text: &str, origin: &Path) -> Result<Scenario, IoError> {
    let s: Scenario = from_json(text, origin)?;
    validate_scenario(s).map_err(|violations| IoError::Invalid {
        path: origin.to_path_buf(),
        violations,
    })
}

pub fn parse_layout(path: &Path) -> Result<Layout, IoError> {
    let text = fs::read_to_string(path).map_err(read_err(path))?;
    parse_layout_str(&text, path)
}

/// Parse a layout and check it with the scenario rules (tags placed at the
/// room center for the purpose of the check).
pub fn parse_layout_str(text: &str, origin: &Path) -> Result<Layout, IoError> {
    let layout: Layout = from_json(text, origin)?;
    let probe = Scenario {
        room: layout.room,
        anchors: layout.anchors.clone(),
        tag_truths: vec![layout.room.center(); layout.n_tags],
        sigma_toa: layout.sigma_toa,
        sigma_twr: layout.sigma_twr,
        grid_step: layout.grid_step,
        filter: layout.filter.clone(),
        ..Scenario::reference()
    };
    match validate_scenario(probe) {
        Ok(_) => Ok(layout),
        Err(v) => Err(IoError::Invalid {
            path: origin.to_path_buf(),
            violations: v
                .into_iter()
                .map(|mut v| {
                    if v.field.starts_with("tag_truths") {
                        v.field = "n_tags".into();
                    }
                    v
                })
                .collect(),
        }),
    }
}

/// Hex SHA-256 of the canonical JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(bytes))
}

// ---------------------------------------------------------------------------
// Replay logs

fn parse_field<T: std::str::FromStr>(s: &str, name: &str) -> Result<T, ReplayError> {
    s.trim()
        .parse()
        .map_err(|_| ReplayError::Malformed(format!("bad {name} `{s}`")))
}

/// Read a replay log into raw periods, one per distinct period index.
pub fn read_replay<R: Read>(reader: R, layout: &Layout, origin: &Path) -> Result<Vec<RawPeriod>, IoError> {
    let fail = |line: u64, error: ReplayError| IoError::Replay {
        path: origin.to_path_buf(),
        line,
        error,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| fail(1, ReplayError::Malformed(e.to_string())))?;
    if header.iter().collect::<Vec<_>>() != REPLAY_HEADER {
        return Err(fail(1, ReplayError::Header(header.iter().collect::<Vec<_>>().join(","))));
    }

    let n_tags = layout.n_tags;
    let n_anchors = layout.anchors.len();
    let mut out: Vec<RawPeriod> = Vec::new();
    let mut pairs_seen: BTreeSet<(usize, usize)> = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            fail(line, ReplayError::Malformed(e.to_string()))
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let row = (|| -> Result<(), ReplayError> {
            let period: usize = parse_field(&rec[1], "period")?;
            let a: usize = parse_field(&rec[2], "id_a")?;
            let b: usize = parse_field(&rec[3], "id_b")?;
            let value: f64 = parse_field(&rec[4], "value")?;
            if !value.is_finite() {
                return Err(ReplayError::NonFinite);
            }
            match out.last() {
                Some(last) if period < last.period => {
                    return Err(ReplayError::NonMonotone {
                        period,
                        previous: last.period,
                    })
                }
                Some(last) if period == last.period => {}
                _ => {
                    out.push(RawPeriod {
                        period,
                        toas: vec![Vec::new(); n_tags],
                        ranges: Vec::new(),
                    });
                    pairs_seen.clear();
                }
            }
            let cur = out.last_mut().expect("period pushed above");
            match &rec[0] {
                "toa" => {
                    if a >= n_tags {
                        return Err(ReplayError::UnknownTag(a));
                    }
                    if b >= n_anchors {
                        return Err(ReplayError::UnknownAnchor(b));
                    }
                    let toas = &mut cur.toas[a];
                    if toas.is_empty() {
                        *toas = vec![None; n_anchors];
                    }
                    if toas[b].is_some() {
                        return Err(ReplayError::DuplicateToa {
                            period,
                            tag: a,
                            anchor: b,
                        });
                    }
                    toas[b] = Some(value);
                }
                "twr" => {
                    for t in [a, b] {
                        if t >= n_tags {
                            return Err(ReplayError::UnknownTag(t));
                        }
                    }
                    if a == b {
                        return Err(ReplayError::SelfPair(a));
                    }
                    let key = (a.min(b), a.max(b));
                    if !pairs_seen.insert(key) {
                        return Err(ReplayError::DuplicatePair {
                            period,
                            a: key.0,
                            b: key.1,
                        });
                    }
                    cur.ranges.push(PairRange { a, b, value });
                }
                other => return Err(ReplayError::UnknownKind(other.to_string())),
            }
            Ok(())
        })();
        row.map_err(|e| fail(line, e))?;
    }
    Ok(out)
}

/// Read a replay log and form TDOAs against the layout's reference anchor.
pub fn ingest_replay(path: &Path, layout: &Layout) -> Result<Vec<PeriodMeasurements>, IoError> {
    let f = fs::File::open(path).map_err(read_err(path))?;
    let raw = read_replay(std::io::BufReader::new(f), layout, path)?;
    Ok(raw
        .iter()
        .map(|r| PeriodMeasurements::from_raw(r, &layout.anchors))
        .collect())
}

/// Serialize raw periods in the replay format.
pub fn write_replay<W: Write>(w: W, raw: &[RawPeriod]) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(REPLAY_HEADER)?;
    for p in raw {
        let period = p.period.to_string();
        for (tag, toas) in p.toas.iter().enumerate() {
            for (anchor, toa) in toas.iter().enumerate() {
                if let Some(v) = toa {
                    wtr.write_record([
                        "toa",
                        &period,
                        &tag.to_string(),
                        &anchor.to_string(),
                        &v.to_string(),
                    ])?;
                }
            }
        }
        for r in &p.ranges {
            wtr.write_record(["twr", &period, &r.a.to_string(), &r.b.to_string(), &r.value.to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

fn csv_to_io(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |e| IoError::Write {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

/// Write `measurements.csv` and `layout.json` into `dir`: exactly what
/// `replay` needs to rerun the estimator.
pub fn dump_measurements(dir: &Path, layout: &Layout, raw: &[RawPeriod]) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(write_err(dir))?;
    let path = dir.join("measurements.csv");
    let f = fs::File::create(&path).map_err(write_err(&path))?;
    write_replay(std::io::BufWriter::new(f), raw).map_err(csv_to_io(&path))?;
    write_json(&dir.join("layout.json"), layout)
}

// ---------------------------------------------------------------------------
// Exports

/// Run metadata echoed into `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMeta {
    pub command: String,
    pub seed: u64,
    pub scenario_hash: String,
    pub burn_in: usize,
}

#[derive(Debug, Clone)]
pub enum ExportContent {
    /// One or two estimator runs over a single measurement stream.
    Runs(Vec<RunResult>),
    /// Paired runs over random tag placements.
    MonteCarlo(Vec<ConfigOutcome>),
}

#[derive(Debug, Clone)]
pub struct ExportBundle {
    pub meta: RunMeta,
    /// Scenario or layout the run used, echoed verbatim.
    pub config: serde_json::Value,
    pub content: ExportContent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CepSummary {
    pub radius: f64,
    pub center: Point2,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TagSummary {
    pub tag: usize,
    pub n_estimates: usize,
    pub truth: Option<Point2>,
    pub cep68: Option<CepSummary>,
    pub cep68_truth: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSummary {
    pub tags: Vec<TagSummary>,
    /// Median of the per-tag CEP68 radii.
    pub median_cep68: Option<f64>,
    pub dropped_updates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Distribution {
    pub n: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q90: f64,
    pub max: f64,
    pub fraction_above_threshold: f64,
}

impl Distribution {
    pub fn of(values: &[f64]) -> Option<Self> {
        let q = |p| quantile(values, p).ok();
        Some(Self {
            n: values.len(),
            min: q(0.0)?,
            q25: q(0.25)?,
            median: median(values).ok()?,
            q75: q(0.75)?,
            q90: q(0.9)?,
            max: q(1.0)?,
            fraction_above_threshold: values.iter().filter(|&&v| v > CEP_THRESHOLD).count() as f64
                / values.len() as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    pub n_configs: usize,
    pub failed_configs: Vec<(usize, String)>,
    pub threshold: f64,
    pub cep68: BTreeMap<Mode, Distribution>,
    pub cep68_truth: BTreeMap<Mode, Distribution>,
    pub fraction_tdoa_above_coop_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct Summary<'a, B: Serialize> {
    #[serde(flatten)]
    meta: &'a RunMeta,
    config: &'a serde_json::Value,
    #[serde(flatten)]
    body: B,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct RunsBody {
    modes: BTreeMap<Mode, ModeSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct MonteCarloBody {
    monte_carlo: MonteCarloSummary,
}

pub fn summarize_run(run: &RunResult, burn_in: usize) -> ModeSummary {
    let tags: Vec<TagSummary> = run
        .tags
        .iter()
        .map(|t| {
            let pts = run.settled(t.tag, burn_in);
            let c = cep(&pts, 0.68).ok();
            TagSummary {
                tag: t.tag,
                n_estimates: t.estimates.len(),
                truth: t.truth,
                cep68: c.as_ref().map(|c| CepSummary {
                    radius: c.radius,
                    center: c.center,
                    n_samples: c.n_samples,
                }),
                cep68_truth: t
                    .truth
                    .and_then(|tr| cep_about(&pts, tr, 0.68).ok())
                    .map(|c| c.radius),
                accuracy: t
                    .truth
                    .and_then(|tr| crate::metrics::accuracy(&pts, tr).ok()),
            }
        })
        .collect();
    let radii: Vec<f64> = tags.iter().filter_map(|t| t.cep68.as_ref().map(|c| c.radius)).collect();
    ModeSummary {
        median_cep68: median(&radii).ok(),
        tags,
        dropped_updates: run.dropped.len(),
    }
}

/// Radial deviation of every settled estimate from its tag's centroid.
fn deviation_cdf(run: &RunResult, burn_in: usize) -> CdfSeries {
    let mut d = Vec::new();
    for t in &run.tags {
        let pts = run.settled(t.tag, burn_in);
        if let Ok(c) = cep(&pts, 0.68) {
            d.extend(pts.iter().map(|p| distance(*p, c.center)));
        }
    }
    cdf(&d).unwrap_or(CdfSeries {
        values: Vec::new(),
        fractions: Vec::new(),
    })
}

/// Per-configuration, per-tag CEP68 for one mode: (centroid, truth-centred).
pub fn monte_carlo_ceps(outcomes: &[ConfigOutcome], mode: Mode, burn_in: usize) -> (Vec<f64>, Vec<f64>) {
    let mut c = Vec::new();
    let mut t = Vec::new();
    for o in outcomes {
        let Ok((tdoa, coop)) = &o.result else { continue };
        let run = if mode == Mode::Coop { coop } else { tdoa };
        for tag in 0..run.tags.len() {
            let pts = run.settled(tag, burn_in);
            if let Ok(v) = cep(&pts, 0.68) {
                c.push(v.radius);
            }
            if let Some(tr) = run.tags[tag].truth {
                if let Ok(v) = cep_about(&pts, tr, 0.68) {
                    t.push(v.radius);
                }
            }
        }
    }
    (c, t)
}

pub fn summarize_monte_carlo(outcomes: &[ConfigOutcome], burn_in: usize) -> MonteCarloSummary {
    let mut cep68 = BTreeMap::new();
    let mut cep68_truth = BTreeMap::new();
    let mut per_mode = BTreeMap::new();
    for mode in [Mode::Tdoa, Mode::Coop] {
        let (c, t) = monte_carlo_ceps(outcomes, mode, burn_in);
        if let Some(d) = Distribution::of(&c) {
            cep68.insert(mode, d);
        }
        if let Some(d) = Distribution::of(&t) {
            cep68_truth.insert(mode, d);
        }
        per_mode.insert(mode, c);
    }
    let cmp = compare_algorithms(&per_mode[&Mode::Tdoa], &per_mode[&Mode::Coop]).ok();
    MonteCarloSummary {
        n_configs: outcomes.len(),
        failed_configs: outcomes
            .iter()
            .filter_map(|o| o.result.as_ref().err().map(|e| (o.index, e.clone())))
            .collect(),
        threshold: CEP_THRESHOLD,
        cep68,
        cep68_truth,
        fraction_tdoa_above_coop_max: cmp.map(|c| c.fraction_tdoa_above_coop_max),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).expect("summary serializes");
    text.push('\n');
    fs::write(path, text).map_err(write_err(path))
}

fn write_rows<const N: usize>(path: &Path, header: [&str; N], rows: &[[String; N]]) -> Result<(), IoError> {
    let f = fs::File::create(path).map_err(write_err(path))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(f));
    w.write_record(header).map_err(csv_to_io(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_to_io(path))?;
    }
    w.flush().map_err(write_err(path))
}

pub fn write_cdf(path: &Path, series: &CdfSeries) -> Result<(), IoError> {
    let rows: Vec<[String; 2]> = series
        .values
        .iter()
        .zip(&series.fractions)
        .map(|(v, f)| [v.to_string(), f.to_string()])
        .collect();
    write_rows(path, ["value", "fraction"], &rows)
}

pub fn write_estimates(path: &Path, series: &crate::engine::TagSeries) -> Result<(), IoError> {
    let rows: Vec<[String; 3]> = series
        .estimates
        .iter()
        .map(|e| [e.period.to_string(), e.x.to_string(), e.y.to_string()])
        .collect();
    write_rows(path, ["period", "x", "y"], &rows)
}

/// Write the export bundle into `out_dir` (created if missing).
///
/// Runs produce `estimates_<tag>.csv` (in a per-mode subdirectory when more
/// than one mode ran), `cdf_<mode>.csv` of radial deviations about each
/// tag's centroid, and `summary.json`. Monte-Carlo bundles produce
/// `cdf_<mode>.csv` over per-tag CEP68 values, `cep_table.csv` and
/// `summary.json`.
pub fn export_results(bundle: &ExportBundle, out_dir: &Path) -> Result<(), IoError> {
    fs::create_dir_all(out_dir).map_err(write_err(out_dir))?;
    let burn_in = bundle.meta.burn_in;
    match &bundle.content {
        ExportContent::Runs(runs) => {
            let nested = runs.len() > 1;
            let mut modes = BTreeMap::new();
            for run in runs {
                let dir = if nested {
                    out_dir.join(run.mode.as_str())
                } else {
                    out_dir.to_path_buf()
                };
                fs::create_dir_all(&dir).map_err(write_err(&dir))?;
                for t in &run.tags {
                    write_estimates(&dir.join(format!("estimates_{}.csv", t.tag)), t)?;
                }
                write_cdf(
                    &out_dir.join(format!("cdf_{}.csv", run.mode.as_str())),
                    &deviation_cdf(run, burn_in),
                )?;
                modes.insert(run.mode, summarize_run(run, burn_in));
            }
            write_json(
                &out_dir.join("summary.json"),
                &Summary {
                    meta: &bundle.meta,
                    config: &bundle.config,
                    body: RunsBody { modes },
                },
            )
        }
        ExportContent::MonteCarlo(outcomes) => {
            for mode in [Mode::Tdoa, Mode::Coop] {
                let (c, _) = monte_carlo_ceps(outcomes, mode, burn_in);
                let series = cdf(&c).unwrap_or(CdfSeries {
                    values: Vec::new(),
                    fractions: Vec::new(),
                });
                write_cdf(&out_dir.join(format!("cdf_{}.csv", mode.as_str())), &series)?;
            }
            write_cep_table(&out_dir.join("cep_table.csv"), outcomes, burn_in)?;
            write_json(
                &out_dir.join("summary.json"),
                &Summary {
                    meta: &bundle.meta,
                    config: &bundle.config,
                    body: MonteCarloBody {
                        monte_carlo: summarize_monte_carlo(outcomes, burn_in),
                    },
                },
            )
        }
    }
}

fn write_cep_table(path: &Path, outcomes: &[ConfigOutcome], burn_in: usize) -> Result<(), IoError> {
    let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut rows = Vec::new();
    for o in outcomes {
        let Ok((tdoa, coop)) = &o.result else { continue };
        for (tag, truth) in o.scenario.tag_truths.iter().enumerate() {
            let radius = |r: &RunResult| cep(&r.settled(tag, burn_in), 0.68).ok().map(|c| c.radius);
            let about = |r: &RunResult| {
                cep_about(&r.settled(tag, burn_in), *truth, 0.68)
                    .ok()
                    .map(|c| c.radius)
            };
            rows.push([
                o.index.to_string(),
                tag.to_string(),
                truth.x.to_string(),
                truth.y.to_string(),
                fmt(radius(tdoa)),
                fmt(radius(coop)),
                fmt(about(tdoa)),
                fmt(about(coop)),
            ]);
        }
    }
    write_rows(
        path,
        [
            "config",
            "tag",
            "x",
            "y",
            "cep68_tdoa",
            "cep68_coop",
            "cep68_truth_tdoa",
            "cep68_truth_coop",
        ],
        &rows,
    )
}

/// Read a `value,fraction` CSV written by [`write_cdf`].
pub fn read_cdf(path: &Path) -> Result<CdfSeries, IoError> {
    let f = fs::File::open(path).map_err(read_err(path))?;
    let mut rdr = csv::Reader::from_reader(f);
    let mut values = Vec::new();
    let mut fractions = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| IoError::Read {
            path: path.to_path_buf(),
            source: std::io::Error::other(e),
        })?;
        let bad = |line| IoError::Replay {
            path: path.to_path_buf(),
            line,
            error: ReplayError::Malformed(format!("{rec:?}")),
        };
        let line = rec.position().map_or(0, |p| p.line());
        values.push(rec[0].parse().map_err(|_| bad(line))?);
        fractions.push(rec[1].parse().map_err(|_| bad(line))?);
    }
    Ok(CdfSeries { values, fractions })
}

/// Read `period,x,y` rows written by [`write_estimates`].
pub fn read_estimates(path: &Path) -> Result<Vec<crate::engine::Estimate>, IoError> {
    let f = fs::File::open(path).map_err(read_err(path))?;
    let mut rdr = csv::Reader::from_reader(f);
    rdr.deserialize()
        .map(|r| {
            r.map_err(|e| IoError::Read {
                path: path.to_path_buf(),
                source: std::io::Error::other(e),
            })
        })
        .collect()
}
