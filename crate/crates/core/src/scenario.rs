//! Declarative experiment descriptions.
//!
//! A [`Scenario`] is what the CLI reads from `--scenario`. Optional fields
//! fall back to the defaults below; unknown fields are rejected.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};

use crate::geometry::{distance, AnchorSet, Point2, Room, COINCIDENCE_EPS};

pub const DEFAULT_REPLY_DELAY: f64 = 1e-3;
pub const DEFAULT_PERIODS: usize = 300;
pub const DEFAULT_GRID_STEP: f64 = 0.5;

/// Estimator tuning shared by simulation and replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSettings {
    /// Positioning period, seconds.
    #[serde(deserialize_with = "flex_f64")]
    pub dt: f64,
    /// White-acceleration spectral density, m^2/s^3.
    #[serde(deserialize_with = "flex_f64")]
    pub q_accel: f64,
    #[serde(deserialize_with = "flex_f64")]
    pub init_sigma_pos: f64,
    #[serde(deserialize_with = "flex_f64")]
    pub init_sigma_vel: f64,
    /// Carry the shared reference-anchor term in the TDOA covariance.
    pub tdoa_correlated: bool,
    /// Range noise assumed by the filter's R. `None` uses the scenario's `sigma_twr`.
    #[serde(deserialize_with = "flex_opt_f64")]
    pub range_sigma_override: Option<f64>,
    /// Leading periods excluded from precision statistics.
    pub burn_in: usize,
    /// Add each peer's position variance along the line of sight to its
    /// range row in R. Off: peer estimates are treated as exact points.
    pub peer_uncertainty: bool,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self {
            dt: 0.1,
            q_accel: 0.01,
            init_sigma_pos: 2.0,
            init_sigma_vel: 1.0,
            tdoa_correlated: true,
            range_sigma_override: None,
            burn_in: 50,
            peer_uncertainty: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub room: Room,
    pub anchors: AnchorSet,
    pub tag_truths: Vec<Point2>,
    /// TOA noise std, seconds.
    #[serde(deserialize_with = "flex_f64")]
    pub sigma_toa: f64,
    /// Inter-tag range noise std, meters.
    #[serde(deserialize_with = "flex_f64")]
    pub sigma_twr: f64,
    #[serde(default = "default_periods")]
    pub periods: usize,
    #[serde(default = "default_grid_step", deserialize_with = "flex_f64")]
    pub grid_step: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub cooperative: bool,
    /// Per-tag reply delay, seconds. Empty means the default for every tag.
    #[serde(default)]
    pub reply_delays: Vec<f64>,
    /// Per-tag fractional clock error. Empty means zero for every tag.
    #[serde(default)]
    pub clock_ppm: Vec<f64>,
    #[serde(default)]
    pub failed_tags: BTreeSet<usize>,
    /// Std of jitter added to every locally measured ranging interval, seconds.
    #[serde(default, deserialize_with = "flex_f64")]
    pub timing_jitter: f64,
    #[serde(default)]
    pub filter: FilterSettings,
}

fn default_periods() -> usize {
    DEFAULT_PERIODS
}

fn default_grid_step() -> f64 {
    DEFAULT_GRID_STEP
}

fn default_true() -> bool {
    true
}

/// Accepts a JSON number or a string holding one (`"1e-9"`).
fn flex_f64<'de, D: Deserializer<'de>>(de: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Num {
        F(f64),
        S(String),
    }
    match Num::deserialize(de)? {
        Num::F(v) => Ok(v),
        Num::S(s) => s
            .trim()
            .parse::<f64>()
            .map_err(|_| serde::de::Error::custom(format!("invalid number {s:?}"))),
    }
}

fn flex_opt_f64<'de, D: Deserializer<'de>>(de: D) -> Result<Option<f64>, D::Error> {
    #[derive(Deserialize)]
    struct Wrap(#[serde(deserialize_with = "flex_f64")] f64);
    Ok(Option::<Wrap>::deserialize(de)?.map(|w| w.0))
}

/// One violated scenario invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn violation(field: impl Into<String>, message: impl Into<String>) -> Violation {
    Violation {
        field: field.into(),
        message: message.into(),
    }
}

impl Scenario {
    /// The 10 x 10 m room with five wall anchors and three tags, 1 ns TOA
    /// noise and 6 cm ranging noise.
    pub fn reference() -> Self {
        Self {
            room: Room::new(0.0, 0.0, 10.0, 10.0),
            anchors: AnchorSet::reference_layout(),
            tag_truths: vec![
                Point2::new(3.0, 4.0),
                Point2::new(6.5, 7.0),
                Point2::new(2.5, 8.5),
            ],
            sigma_toa: 1e-9,
            sigma_twr: 0.06,
            periods: DEFAULT_PERIODS,
            grid_step: DEFAULT_GRID_STEP,
            seed: 0,
            cooperative: true,
            reply_delays: Vec::new(),
            clock_ppm: Vec::new(),
            failed_tags: BTreeSet::new(),
            timing_jitter: 0.0,
            filter: FilterSettings::default(),
        }
    }

    pub fn n_tags(&self) -> usize {
        self.tag_truths.len()
    }

    /// Reply delays with defaults filled in, one per tag.
    pub fn delays(&self) -> Vec<f64> {
        if self.reply_delays.is_empty() {
            vec![DEFAULT_REPLY_DELAY; self.n_tags()]
        } else {
            self.reply_delays.clone()
        }
    }

    pub fn ppm(&self) -> Vec<f64> {
        if self.clock_ppm.is_empty() {
            vec![0.0; self.n_tags()]
        } else {
            self.clock_ppm.clone()
        }
    }

    /// Range noise the filter assumes in R.
    pub fn model_sigma_twr(&self) -> f64 {
        self.filter.range_sigma_override.unwrap_or(self.sigma_twr)
    }

    pub fn with_tags(&self, tags: Vec<Point2>) -> Self {
        Self {
            tag_truths: tags,
            ..self.clone()
        }
    }
}

/// Check every scenario invariant, returning all violations at once.
pub fn validate_scenario(s: Scenario) -> Result<Scenario, Vec<Violation>> {
    let mut v = Vec::new();

    if !s.room.is_valid() {
        v.push(violation("room", "room must be a finite rectangle with positive extent"));
    }

    let anchors = &s.anchors.positions;
    if anchors.len() < 3 {
        v.push(violation(
            "anchors.positions",
            format!("insufficient anchors: {} given, at least 3 required", anchors.len()),
        ));
    }
    if s.anchors.reference_index >= anchors.len() {
        v.push(violation(
            "anchors.reference_index",
            format!("reference index {} out of range", s.anchors.reference_index),
        ));
    }
    for (i, a) in anchors.iter().enumerate() {
        if !a.is_finite() {
            v.push(violation(format!("anchors.positions[{i}]"), "non-finite coordinate"));
        }
        for (j, b) in anchors.iter().enumerate().skip(i + 1) {
            if distance(*a, *b) < COINCIDENCE_EPS {
                v.push(violation(
                    format!("anchors.positions[{j}]"),
                    format!("duplicate anchor position (same as anchor {i})"),
                ));
            }
        }
    }

    if s.tag_truths.is_empty() {
        v.push(violation("tag_truths", "at least one tag required"));
    }
    for (i, t) in s.tag_truths.iter().enumerate() {
        if !t.is_finite() {
            v.push(violation(format!("tag_truths[{i}]"), "non-finite coordinate"));
        } else if s.room.is_valid() && !s.room.contains(*t) {
            v.push(violation(format!("tag_truths[{i}]"), "tag out of bounds"));
        }
    }

    if !(s.sigma_toa >= 0.0 && s.sigma_toa.is_finite()) {
        v.push(violation("sigma_toa", "must be finite and >= 0"));
    }
    if !(s.sigma_twr >= 0.0 && s.sigma_twr.is_finite()) {
        v.push(violation("sigma_twr", "must be finite and >= 0"));
    }
    if !(s.timing_jitter >= 0.0 && s.timing_jitter.is_finite()) {
        v.push(violation("timing_jitter", "must be finite and >= 0"));
    }
    if s.periods < 1 {
        v.push(violation("periods", "must be >= 1"));
    }
    if !(s.grid_step > 0.0 && s.grid_step.is_finite()) {
        v.push(violation("grid_step", "must be > 0"));
    }

    let n = s.n_tags();
    if !s.reply_delays.is_empty() && s.reply_delays.len() != n {
        v.push(violation(
            "reply_delays",
            format!("expected {n} entries, got {}", s.reply_delays.len()),
        ));
    }
    for (i, d) in s.reply_delays.iter().enumerate() {
        if !(*d > 0.0 && d.is_finite()) {
            v.push(violation(format!("reply_delays[{i}]"), "reply delay must be > 0"));
        }
    }
    if !s.clock_ppm.is_empty() && s.clock_ppm.len() != n {
        v.push(violation(
            "clock_ppm",
            format!("expected {n} entries, got {}", s.clock_ppm.len()),
        ));
    }
    for (i, p) in s.clock_ppm.iter().enumerate() {
        if !(p.is_finite() && *p > -1.0) {
            v.push(violation(format!("clock_ppm[{i}]"), "clock error must be finite and > -1"));
        }
    }
    for &f in &s.failed_tags {
        if f >= n {
            v.push(violation("failed_tags", format!("tag index {f} out of range")));
        }
    }

    let fs = &s.filter;
    if !(fs.dt > 0.0 && fs.dt.is_finite()) {
        v.push(violation("filter.dt", "must be > 0"));
    }
    if !(fs.q_accel >= 0.0 && fs.q_accel.is_finite()) {
        v.push(violation("filter.q_accel", "must be >= 0"));
    }
    if !(fs.init_sigma_pos > 0.0 && fs.init_sigma_pos.is_finite()) {
        v.push(violation("filter.init_sigma_pos", "must be > 0"));
    }
    if !(fs.init_sigma_vel > 0.0 && fs.init_sigma_vel.is_finite()) {
        v.push(violation("filter.init_sigma_vel", "must be > 0"));
    }
    if let Some(r) = fs.range_sigma_override {
        if !(r >= 0.0 && r.is_finite()) {
            v.push(violation("filter.range_sigma_override", "must be finite and >= 0"));
        }
    }

    if v.is_empty() {
        Ok(s)
    } else {
        Err(v)
    }
}
