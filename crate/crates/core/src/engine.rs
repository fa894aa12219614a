//! Orchestration of positioning periods.
//!
//! A run has two halves that never share state: measurement synthesis
//! ([`synthesize_period`], driven by the scenario's RNG stream) and
//! estimation ([`Estimator`], deterministic given the measurements). Both
//! modes of a paired run therefore consume identical noise draws, and a
//! dumped measurement log replays to identical estimates.
//!
//! Within a period all tags read their peers' positions from a snapshot
//! taken before any tag is updated, so processing order does not matter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ekf::{init_filter, predict, update, Covariance, EkfError, FilterConfig, TagState};
use crate::geometry::{
    distance, sample_tag_configuration, AnchorSet, GeometryError, Point2, Room, COINCIDENCE_EPS,
    SPEED_OF_LIGHT,
};
use crate::measurement::{
    build_noise_covariance, form_tdoa, synth_toas, MeasurementBundle, MeasurementNoiseSpec,
    RangeEntry, TdoaEntry,
};
use crate::scenario::{FilterSettings, Scenario};
use crate::transmission::{recover_propagation_times, simulate_round, TransmissionError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("tag {tag} could not be initialized: {source}")]
    Init { tag: usize, source: EkfError },
    #[error("tag {0} produced no measurements to initialize from")]
    NeverInitialized(usize),
    #[error(transparent)]
    Transmission(#[from] TransmissionError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// TDOA only.
    Tdoa,
    /// TDOA fused with inter-tag ranges.
    Coop,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Tdoa => "tdoa",
            Mode::Coop => "coop",
        }
    }

    pub fn cooperative(self) -> bool {
        self == Mode::Coop
    }
}

/// One inter-tag distance shared by both endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairRange {
    pub a: usize,
    pub b: usize,
    pub value: f64,
}

impl PairRange {
    pub fn other(&self, tag: usize) -> Option<usize> {
        if self.a == tag {
            Some(self.b)
        } else if self.b == tag {
            Some(self.a)
        } else {
            None
        }
    }
}

/// Raw observations of one period: per-tag, per-anchor arrival times and
/// the recovered inter-tag ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPeriod {
    pub period: usize,
    /// `toas[tag][anchor]`, seconds. A tag that did not transmit has no entries.
    pub toas: Vec<Vec<Option<f64>>>,
    pub ranges: Vec<PairRange>,
}

/// Observations with TDOAs already formed against the reference anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodMeasurements {
    pub period: usize,
    /// `tdoa[tag]`; empty when the tag was not heard by the reference anchor.
    pub tdoa: Vec<Vec<TdoaEntry>>,
    pub ranges: Vec<PairRange>,
}

impl PeriodMeasurements {
    pub fn from_raw(raw: &RawPeriod, anchors: &AnchorSet) -> Self {
        Self {
            period: raw.period,
            tdoa: raw
                .toas
                .iter()
                .map(|t| form_tdoa(t, anchors.reference_index))
                .collect(),
            ranges: raw.ranges.clone(),
        }
    }
}

/// Everything the estimator needs to know about the deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layout {
    pub room: Room,
    pub anchors: AnchorSet,
    pub n_tags: usize,
    /// TOA noise std assumed by the filter, seconds.
    pub sigma_toa: f64,
    /// Range noise std assumed by the filter, meters.
    pub sigma_twr: f64,
    #[serde(default = "default_grid")]
    pub grid_step: f64,
    #[serde(default)]
    pub filter: FilterSettings,
}

fn default_grid() -> f64 {
    crate::scenario::DEFAULT_GRID_STEP
}

impl Layout {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            room: s.room,
            anchors: s.anchors.clone(),
            n_tags: s.n_tags(),
            sigma_toa: s.sigma_toa,
            sigma_twr: s.sigma_twr,
            grid_step: s.grid_step,
            filter: s.filter.clone(),
        }
    }

    pub fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            dt: self.filter.dt,
            q_accel: self.filter.q_accel,
            init_sigma_pos: self.filter.init_sigma_pos,
            init_sigma_vel: self.filter.init_sigma_vel,
        }
    }

    pub fn noise_spec(&self) -> MeasurementNoiseSpec {
        MeasurementNoiseSpec {
            sigma_toa: self.sigma_toa,
            sigma_twr: self.filter.range_sigma_override.unwrap_or(self.sigma_twr),
            tdoa_correlated: self.filter.tdoa_correlated,
        }
    }
}

/// Draw one period of observations.
///
/// RNG order: ranging-round jitter, one range-noise draw per recovered pair
/// (pairs in index order), then one TOA draw per anchor for each live tag in
/// index order. Nothing here depends on the estimation mode.
pub fn synthesize_period<R: Rng + ?Sized>(
    s: &Scenario,
    rng: &mut R,
    period: usize,
) -> Result<RawPeriod, EngineError> {
    let n = s.n_tags();
    let live = (0..n).filter(|t| !s.failed_tags.contains(t)).count();
    let mut ranges = Vec::new();
    if live >= 2 {
        let rec = simulate_round(
            &s.tag_truths,
            &s.delays(),
            &s.ppm(),
            &s.failed_tags,
            rng,
            s.timing_jitter,
        )?;
        let tol = (3.0 * s.sigma_twr / SPEED_OF_LIGHT).max(1e-12);
        let times = recover_propagation_times(&rec, tol);
        let noise = (s.sigma_twr > 0.0)
            .then(|| rand_distr::Normal::new(0.0, s.sigma_twr).expect("finite sigma"));
        for (a, b, tp) in times.available() {
            let mut value = tp * SPEED_OF_LIGHT;
            if let Some(d) = &noise {
                value += rand_distr::Distribution::sample(d, rng);
            }
            ranges.push(PairRange { a, b, value });
        }
    }
    let toas = (0..n)
        .map(|t| {
            if s.failed_tags.contains(&t) {
                Vec::new()
            } else {
                synth_toas(s.tag_truths[t], &s.anchors, s.sigma_toa, rng)
                    .into_iter()
                    .map(Some)
                    .collect()
            }
        })
        .collect();
    Ok(RawPeriod {
        period,
        toas,
        ranges,
    })
}

/// Scenario's measurement stream, seeded from `scenario.seed`.
pub fn simulate_measurements(s: &Scenario) -> Result<Vec<RawPeriod>, EngineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    (0..s.periods)
        .map(|k| synthesize_period(s, &mut rng, k))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagFilter {
    pub state: TagState,
    pub covariance: Covariance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagPeriod {
    pub tag: usize,
    pub state: TagState,
    pub covariance: Covariance,
    pub bundle: MeasurementBundle,
    pub nis: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroppedTag {
    pub tag: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodResult {
    pub period: usize,
    /// Tags updated this period, in tag order.
    pub updated: Vec<TagPeriod>,
    /// Tags with observations whose update failed.
    pub dropped: Vec<DroppedTag>,
}

/// Variance of a peer's position estimate along the line from the peer to `at`.
fn line_of_sight_variance(p: &Covariance, peer: Point2, at: Point2) -> f64 {
    let d = distance(at, peer);
    if d < COINCIDENCE_EPS {
        return 0.0;
    }
    let (ux, uy) = ((at.x - peer.x) / d, (at.y - peer.y) / d);
    let p = &p.0;
    ux * ux * p[(0, 0)] + 2.0 * ux * uy * p[(0, 1)] + uy * uy * p[(1, 1)]
}

/// Per-tag EKFs plus the cooperative bundle assembly.
#[derive(Debug, Clone)]
pub struct Estimator {
    layout: Layout,
    config: FilterConfig,
    noise: MeasurementNoiseSpec,
    cooperative: bool,
    filters: Vec<Option<TagFilter>>,
}

impl Estimator {
    pub fn new(layout: Layout, mode: Mode) -> Self {
        let config = layout.filter_config();
        let noise = layout.noise_spec();
        let filters = vec![None; layout.n_tags];
        Self {
            layout,
            config,
            noise,
            cooperative: mode.cooperative(),
            filters,
        }
    }

    pub fn filters(&self) -> &[Option<TagFilter>] {
        &self.filters
    }

    fn snapshot(&self) -> Vec<Option<Point2>> {
        self.filters
            .iter()
            .map(|f| f.as_ref().map(|f| f.state.position()))
            .collect()
    }


    /// Measurement bundle for `tag`, with peer positions from `snapshot`.
    pub fn bundle_for(
        &self,
        tag: usize,
        m: &PeriodMeasurements,
        snapshot: &[Option<Point2>],
    ) -> MeasurementBundle {
        let tdoa = m.tdoa.get(tag).cloned().unwrap_or_default();
        let mut ranges = Vec::new();
        if self.cooperative {
            for r in &m.ranges {
                let Some(peer) = r.other(tag) else { continue };
                if let Some(Some(pos)) = snapshot.get(peer) {
                    ranges.push(RangeEntry {
                        peer,
                        value: r.value,
                        peer_position: *pos,
                    });
                }
            }
            ranges.sort_by_key(|r| r.peer);
        }
        MeasurementBundle { tdoa, ranges }
    }

    /// Process one period with tags visited in index order.
    pub fn step(&mut self, m: &PeriodMeasurements) -> Result<PeriodResult, EngineError> {
        let order: Vec<usize> = (0..self.layout.n_tags).collect();
        self.step_in_order(m, &order)
    }

    /// Process one period visiting tags in `order`. The result does not
    /// depend on the order.
    pub fn step_in_order(
        &mut self,
        m: &PeriodMeasurements,
        order: &[usize],
    ) -> Result<PeriodResult, EngineError> {
        let snapshot = self.snapshot();
        let peer_cov: Vec<Option<Covariance>> = if self.layout.filter.peer_uncertainty {
            self.filters.iter().map(|f| f.as_ref().map(|f| f.covariance)).collect()
        } else {
            Vec::new()
        };
        let mut updated = Vec::new();
        let mut dropped = Vec::new();
        for &tag in order {
            if m.tdoa.get(tag).is_none_or(|t| t.is_empty()) {
                continue;
            }
            let mut bundle = self.bundle_for(tag, m, &snapshot);
            let (state, cov) = match &self.filters[tag] {
                Some(f) => (f.state, f.covariance),
                None => match init_filter(
                    &bundle,
                    &self.layout.anchors,
                    &self.layout.room,
                    self.layout.grid_step,
                    &self.config,
                ) {
                    Ok(init) => init,
                    Err(EkfError::TooFewTdoa(_)) => continue,
                    Err(source) => return Err(EngineError::Init { tag, source }),
                },
            };
            let (prior, prior_cov) = predict(&state, &cov, &self.config);
            bundle.drop_degenerate(prior.position(), &self.layout.anchors);
            if bundle.is_empty() {
                dropped.push(DroppedTag {
                    tag,
                    reason: "no usable measurements".into(),
                });
                continue;
            }
            let mut r = build_noise_covariance(&self.noise, bundle.tdoa.len(), bundle.ranges.len());
            if !peer_cov.is_empty() {
                let off = bundle.tdoa.len();
                for (k, rg) in bundle.ranges.iter().enumerate() {
                    if let Some(p) = &peer_cov[rg.peer] {
                        r[(off + k, off + k)] +=
                            line_of_sight_variance(p, rg.peer_position, prior.position());
                    }
                }
            }
            match update(&prior, &prior_cov, &bundle, &r, &self.layout.anchors) {
                Ok(out) if out.state.is_finite() => {
                    self.filters[tag] = Some(TagFilter {
                        state: out.state,
                        covariance: out.covariance,
                    });
                    updated.push(TagPeriod {
                        tag,
                        state: out.state,
                        covariance: out.covariance,
                        bundle,
                        nis: out.nis,
                    });
                }
                Ok(_) => dropped.push(DroppedTag {
                    tag,
                    reason: "non-finite state".into(),
                }),
                Err(e) => {
                    log::debug!("period {}: tag {tag} dropped: {e}", m.period);
                    dropped.push(DroppedTag {
                        tag,
                        reason: e.to_string(),
                    });
                }
            }
        }
        updated.sort_by_key(|t| t.tag);
        dropped.sort_by_key(|t| t.tag);
        Ok(PeriodResult {
            period: m.period,
            updated,
            dropped,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub period: usize,
    pub x: f64,
    pub y: f64,
}

impl Estimate {
    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagSeries {
    pub tag: usize,
    pub truth: Option<Point2>,
    pub estimates: Vec<Estimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub mode: Mode,
    pub seed: u64,
    pub tags: Vec<TagSeries>,
    /// `(period, tag)` of every dropped update.
    pub dropped: Vec<(usize, usize)>,
}

impl RunResult {
    /// Estimates from `burn_in` onwards.
    pub fn settled(&self, tag: usize, burn_in: usize) -> Vec<Point2> {
        self.tags[tag]
            .estimates
            .iter()
            .filter(|e| e.period >= burn_in)
            .map(Estimate::position)
            .collect()
    }
}

/// Run the estimator over a measurement stream.
///
/// Fails if a tag that has observations can never be initialized.
pub fn run_estimator(
    layout: &Layout,
    periods: &[PeriodMeasurements],
    mode: Mode,
    truths: Option<&[Point2]>,
    seed: u64,
) -> Result<RunResult, EngineError> {
    let mut est = Estimator::new(layout.clone(), mode);
    let mut tags: Vec<TagSeries> = (0..layout.n_tags)
        .map(|t| TagSeries {
            tag: t,
            truth: truths.and_then(|v| v.get(t).copied()),
            estimates: Vec::new(),
        })
        .collect();
    let mut dropped = Vec::new();
    let mut heard = vec![false; layout.n_tags];
    for m in periods {
        for (t, d) in m.tdoa.iter().enumerate() {
            if !d.is_empty() && t < heard.len() {
                heard[t] = true;
            }
        }
        let res = est.step(m)?;
        for u in &res.updated {
            tags[u.tag].estimates.push(Estimate {
                period: m.period,
                x: u.state.x,
                y: u.state.y,
            });
        }
        dropped.extend(res.dropped.iter().map(|d| (m.period, d.tag)));
    }
    for (t, f) in est.filters().iter().enumerate() {
        if heard[t] && f.is_none() {
            return Err(EngineError::NeverInitialized(t));
        }
    }
    Ok(RunResult {
        mode,
        seed,
        tags,
        dropped,
    })
}

/// Simulate and estimate a scenario in the mode its `cooperative` flag selects.
pub fn run_scenario(s: &Scenario) -> Result<RunResult, EngineError> {
    run_scenario_in(s, if s.cooperative { Mode::Coop } else { Mode::Tdoa })
}

pub fn run_scenario_in(s: &Scenario, mode: Mode) -> Result<RunResult, EngineError> {
    let raw = simulate_measurements(s)?;
    run_on_raw(s, &raw, mode)
}

/// Estimate both modes over a single shared measurement stream.
pub fn run_paired(s: &Scenario) -> Result<(RunResult, RunResult), EngineError> {
    let raw = simulate_measurements(s)?;
    Ok((run_on_raw(s, &raw, Mode::Tdoa)?, run_on_raw(s, &raw, Mode::Coop)?))
}

pub fn run_on_raw(s: &Scenario, raw: &[RawPeriod], mode: Mode) -> Result<RunResult, EngineError> {
    let layout = Layout::from_scenario(s);
    let periods: Vec<PeriodMeasurements> = raw
        .iter()
        .map(|r| PeriodMeasurements::from_raw(r, &layout.anchors))
        .collect();
    run_estimator(&layout, &periods, mode, Some(&s.tag_truths), s.seed)
}

/// RNG for Monte-Carlo configuration `index`: ChaCha8 keyed by the master
/// seed, on stream `index`. Streams are independent, so results do not
/// depend on how configurations are scheduled across threads.
pub fn config_rng(master_seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Debug, Clone)]
pub struct ConfigOutcome {
    pub index: usize,
    /// Base scenario with this configuration's tags and measurement seed.
    pub scenario: Scenario,
    pub result: Result<(RunResult, RunResult), String>,
}

/// Scenario for Monte-Carlo configuration `index`: tags sampled from the
/// grid, then a measurement seed, both from [`config_rng`].
pub fn config_scenario(base: &Scenario, master_seed: u64, index: usize) -> Result<Scenario, EngineError> {
    let mut rng = config_rng(master_seed, index);
    let tags = sample_tag_configuration(&base.room, base.grid_step, base.n_tags(), &mut rng)?;
    let mut s = base.with_tags(tags);
    s.seed = rng.gen();
    Ok(s)
}

/// Paired TDOA-only / cooperative runs over `n_configs` random placements.
pub fn run_monte_carlo(base: &Scenario, n_configs: usize, master_seed: u64) -> Vec<ConfigOutcome> {
    (0..n_configs)
        .into_par_iter()
        .map(|index| {
            let outcome = config_scenario(base, master_seed, index).and_then(|s| {
                let pair = run_paired(&s)?;
                Ok((s, pair))
            });
            match outcome {
                Ok((scenario, pair)) => ConfigOutcome {
                    index,
                    scenario,
                    result: Ok(pair),
                },
                Err(e) => ConfigOutcome {
                    index,
                    scenario: base.clone(),
                    result: Err(e.to_string()),
                },
            }
        })
        .collect()
}
