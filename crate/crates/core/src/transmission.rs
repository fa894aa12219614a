//! Chained single-packet ranging between tags.
//!
//! In one round every live tag transmits exactly one packet. The first live
//! tag starts the round; each following tag replies a fixed delay after it
//! receives the packet of the nearest live tag before it in the chain (its
//! *trigger*). With three tags and no failures this is the classic scheme:
//!
//! ```text
//! tag 1  TX p1 ───────────────── RX p2 ─────────── RX p3
//! tag 2        RX p1 ─Δt2─ TX p2 ─────── RX p3
//! tag 3        RX p1 ────── RX p2 ─Δt3─ TX p3
//! ```
//!
//! Measured intervals, with `T_k` the transmit time of tag `k`:
//!
//! * `t_ij` (tag `i`): own TX to RX of packet `j`, `T_j + tp_ij - T_i`.
//! * `w_ij` (tag `j`): RX of packet `i` to RX of its trigger packet `p`,
//!   `T_p + tp_pj - T_i - tp_ij`. Only needed when `p != i`.
//!
//! Since `T_j = T_p + tp_pj + Δt_j`, every pair inverts the same way:
//! `tp_ij = (t_ij - Δt_j - w_ij) / 2`, with `w_ij = 0` when `i` triggered `j`.
//! For three tags `w_13` is the interval usually called `t3w`
//! (`tp12 + Δt2 + tp23 - tp13`), and the three inversions are
//! `tp12 = (t12 - Δt2)/2`, `tp23 = (t23 - Δt3)/2`, `tp13 = (t13 - Δt3 - t3w)/2`.
//!
//! A failed tag never transmits, so the next live tag falls back to the last
//! packet it did hear as its trigger. Pair times through the missing tag simply
//! disappear from the record.
//!
//! Clocks: a tag with fractional frequency error `e` reports every interval
//! scaled by `1 + e` and executes its nominal reply delay in `Δt / (1 + e)`
//! of true time.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{distance, Point2, SPEED_OF_LIGHT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransmissionError {
    #[error("ranging round aborted: {live} live tag(s), at least 2 required")]
    RoundAborted { live: usize },
    #[error("expected {expected} per-tag values for {what}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("reply delay of tag {0} must be positive")]
    NonPositiveDelay(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    /// Own TX of `first` to RX of the packet from `second`; measured by `first`.
    RoundTrip,
    /// RX of packet `first` to RX of the trigger packet; measured by `second`.
    Wait,
}

/// One interval a tag has to time during a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedInterval {
    pub kind: IntervalKind,
    pub first: usize,
    pub second: usize,
}

impl PlannedInterval {
    pub fn measured_by(&self) -> usize {
        match self.kind {
            IntervalKind::RoundTrip => self.first,
            IntervalKind::Wait => self.second,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannedPacket {
    pub tag: usize,
    /// Tag whose packet triggers this transmission; `None` for the initiator.
    pub trigger: Option<usize>,
    /// Nominal reply delay after the trigger packet, seconds.
    pub delay: f64,
}

/// Transmission order and the intervals each tag measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainPlan {
    pub packets: Vec<PlannedPacket>,
    pub intervals: Vec<PlannedInterval>,
}

impl ChainPlan {
    fn for_live(live: &[usize], delays: &[f64]) -> Self {
        let packets: Vec<PlannedPacket> = live
            .iter()
            .enumerate()
            .map(|(k, &tag)| PlannedPacket {
                tag,
                trigger: (k > 0).then(|| live[k - 1]),
                delay: if k > 0 { delays[tag] } else { 0.0 },
            })
            .collect();
        let mut intervals = Vec::new();
        for (a, &i) in live.iter().enumerate() {
            for (b, &j) in live.iter().enumerate().skip(a + 1) {
                intervals.push(PlannedInterval {
                    kind: IntervalKind::RoundTrip,
                    first: i,
                    second: j,
                });
                if live[b - 1] != i {
                    intervals.push(PlannedInterval {
                        kind: IntervalKind::Wait,
                        first: i,
                        second: j,
                    });
                }
            }
        }
        Self { packets, intervals }
    }

    pub fn trigger_of(&self, tag: usize) -> Option<usize> {
        self.packets.iter().find(|p| p.tag == tag).and_then(|p| p.trigger)
    }
}

/// Plan for `n_tags` live tags in index order.
///
/// With three tags this is the original three-packet scheme; larger chains
/// use the same trigger rule plus one wait interval per non-adjacent pair.
pub fn chain_schedule(n_tags: usize, delays: &[f64]) -> ChainPlan {
    let live: Vec<usize> = (0..n_tags).collect();
    ChainPlan::for_live(&live, delays)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredInterval {
    pub kind: IntervalKind,
    pub first: usize,
    pub second: usize,
    /// Seconds, in the measuring tag's clock.
    pub value: f64,
}

/// Raw interval measurements of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    /// Nominal reply delay per tag, seconds.
    pub delays: Vec<f64>,
    /// Tags that transmitted, in transmission order.
    pub responders: Vec<usize>,
    /// `(tag, trigger)` for every responder except the initiator.
    pub triggers: Vec<(usize, usize)>,
    pub intervals: Vec<MeasuredInterval>,
}

impl TimingRecord {
    pub fn interval(&self, kind: IntervalKind, first: usize, second: usize) -> Option<f64> {
        self.intervals
            .iter()
            .find(|m| m.kind == kind && m.first == first && m.second == second)
            .map(|m| m.value)
    }

    pub fn trigger_of(&self, tag: usize) -> Option<usize> {
        self.triggers.iter().find(|(t, _)| *t == tag).map(|(_, p)| *p)
    }

    // Named accessors for the three-tag round (tags 1, 2, 3 are indices 0, 1, 2).
    pub fn t12(&self) -> Option<f64> {
        self.interval(IntervalKind::RoundTrip, 0, 1)
    }
    pub fn t23(&self) -> Option<f64> {
        self.interval(IntervalKind::RoundTrip, 1, 2)
    }
    pub fn t13(&self) -> Option<f64> {
        self.interval(IntervalKind::RoundTrip, 0, 2)
    }
    pub fn t3w(&self) -> Option<f64> {
        self.interval(IntervalKind::Wait, 0, 2)
    }
}

/// Forward-simulate one round.
///
/// `failed` tags never transmit. Each measured interval is scaled by the
/// measuring tag's clock error and perturbed by zero-mean Gaussian jitter.
pub fn simulate_round<R: Rng + ?Sized>(
    tag_positions: &[Point2],
    delays: &[f64],
    clock_ppm: &[f64],
    failed: &BTreeSet<usize>,
    rng: &mut R,
    timing_jitter_std: f64,
) -> Result<TimingRecord, TransmissionError> {
    let n = tag_positions.len();
    if delays.len() != n {
        return Err(TransmissionError::LengthMismatch {
            what: "reply delays",
            expected: n,
            got: delays.len(),
        });
    }
    if clock_ppm.len() != n {
        return Err(TransmissionError::LengthMismatch {
            what: "clock errors",
            expected: n,
            got: clock_ppm.len(),
        });
    }
    let live: Vec<usize> = (0..n).filter(|t| !failed.contains(t)).collect();
    if live.len() < 2 {
        return Err(TransmissionError::RoundAborted { live: live.len() });
    }
    for &t in &live[1..] {
        if delays[t].is_nan() || delays[t] <= 0.0 {
            return Err(TransmissionError::NonPositiveDelay(t));
        }
    }

    let plan = ChainPlan::for_live(&live, delays);
    let tp = |i: usize, j: usize| distance(tag_positions[i], tag_positions[j]) / SPEED_OF_LIGHT;

    // True transmit times.
    let mut tx = vec![f64::NAN; n];
    for p in &plan.packets {
        tx[p.tag] = match p.trigger {
            None => 0.0,
            Some(src) => tx[src] + tp(src, p.tag) + p.delay / (1.0 + clock_ppm[p.tag]),
        };
    }

    let jitter = (timing_jitter_std > 0.0)
        .then(|| Normal::new(0.0, timing_jitter_std).expect("finite jitter std"));
    let mut intervals = Vec::with_capacity(plan.intervals.len());
    for iv in &plan.intervals {
        let (i, j) = (iv.first, iv.second);
        let truth = match iv.kind {
            IntervalKind::RoundTrip => tx[j] + tp(i, j) - tx[i],
            IntervalKind::Wait => {
                let p = plan.trigger_of(j).expect("wait interval implies a trigger");
                (tx[p] + tp(p, j)) - (tx[i] + tp(i, j))
            }
        };
        let mut value = truth * (1.0 + clock_ppm[iv.measured_by()]);
        if let Some(d) = &jitter {
            value += d.sample(rng);
        }
        intervals.push(MeasuredInterval {
            kind: iv.kind,
            first: i,
            second: j,
            value,
        });
    }

    Ok(TimingRecord {
        delays: delays.to_vec(),
        responders: live,
        triggers: plan
            .packets
            .iter()
            .filter_map(|p| p.trigger.map(|t| (p.tag, t)))
            .collect(),
        intervals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "seconds", rename_all = "snake_case")]
pub enum PairTime {
    Available(f64),
    /// Inputs for the inversion were not measured this round.
    Unavailable,
    /// Recovered time was negative beyond tolerance.
    Invalid(f64),
}

/// Recovered one-way propagation times, one entry per unordered pair of responders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationTimes {
    pub pairs: Vec<(usize, usize, PairTime)>,
}

impl PropagationTimes {
    pub fn get(&self, a: usize, b: usize) -> PairTime {
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        self.pairs
            .iter()
            .find(|(x, y, _)| *x == i && *y == j)
            .map(|(_, _, t)| *t)
            .unwrap_or(PairTime::Unavailable)
    }

    /// Available time for the pair, if any.
    pub fn tp(&self, a: usize, b: usize) -> Option<f64> {
        match self.get(a, b) {
            PairTime::Available(t) => Some(t),
            _ => None,
        }
    }

    pub fn tp12(&self) -> Option<f64> {
        self.tp(0, 1)
    }
    pub fn tp23(&self) -> Option<f64> {
        self.tp(1, 2)
    }
    pub fn tp13(&self) -> Option<f64> {
        self.tp(0, 2)
    }

    pub fn available(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.pairs.iter().filter_map(|&(i, j, t)| match t {
            PairTime::Available(v) => Some((i, j, v)),
            _ => None,
        })
    }
}

/// Invert a round record into pairwise propagation times.
///
/// Times below `-negative_tolerance` seconds are reported as
/// [`PairTime::Invalid`] rather than clamped.
pub fn recover_propagation_times(rec: &TimingRecord, negative_tolerance: f64) -> PropagationTimes {
    let mut order = rec.responders.clone();
    order.sort_unstable();
    let mut pairs = Vec::new();
    for (a, &i) in order.iter().enumerate() {
        for &j in &order[a + 1..] {
            pairs.push((i, j, recover_pair(rec, i, j, negative_tolerance)));
        }
    }
    PropagationTimes { pairs }
}

fn recover_pair(rec: &TimingRecord, i: usize, j: usize, tol: f64) -> PairTime {
    let Some(round_trip) = rec.interval(IntervalKind::RoundTrip, i, j) else {
        return PairTime::Unavailable;
    };
    let Some(delay) = rec.delays.get(j).copied() else {
        return PairTime::Unavailable;
    };
    let wait = if rec.trigger_of(j) == Some(i) {
        0.0
    } else {
        match rec.interval(IntervalKind::Wait, i, j) {
            Some(w) => w,
            None => return PairTime::Unavailable,
        }
    };
    let t = (round_trip - delay - wait) / 2.0;
    if t < -tol {
        PairTime::Invalid(t)
    } else {
        PairTime::Available(t)
    }
}
