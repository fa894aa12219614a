//! Measurement synthesis and the hybrid TDOA + range measurement model.
//!
//! All measurement-space quantities are meters: TDOAs are stored as range
//! differences (`c * Δt`) so they stack with inter-tag ranges in one vector.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ekf::TagState;
use crate::geometry::{distance, AnchorSet, Point2, COINCIDENCE_EPS, SPEED_OF_LIGHT};

/// Variance used in place of a zero noise variance so R stays invertible.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasurementError {
    #[error("state coincides with anchor {0}")]
    CoincidentAnchor(usize),
    #[error("state coincides with peer tag {0}")]
    CoincidentPeer(usize),
    #[error("anchor index {0} is out of range")]
    UnknownAnchor(usize),
    #[error("TDOA entry references the reference anchor {0}")]
    ReferenceInTdoa(usize),
    #[error("duplicate entry for {0}")]
    Duplicate(String),
    #[error("non-finite measurement value")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdoaEntry {
    pub anchor: usize,
    /// `c * (TOA_anchor - TOA_ref)`, meters.
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeEntry {
    pub peer: usize,
    pub value: f64,
    pub peer_position: Point2,
}

/// One tag's measurement vector for one period: TDOAs first, then ranges.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasurementBundle {
    pub tdoa: Vec<TdoaEntry>,
    pub ranges: Vec<RangeEntry>,
}

impl MeasurementBundle {
    pub fn len(&self) -> usize {
        self.tdoa.len() + self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn active_anchors(&self) -> Vec<usize> {
        self.tdoa.iter().map(|e| e.anchor).collect()
    }

    pub fn peer_positions(&self) -> Vec<(usize, Point2)> {
        self.ranges.iter().map(|r| (r.peer, r.peer_position)).collect()
    }

    pub fn z(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.tdoa
                .iter()
                .map(|e| e.value)
                .chain(self.ranges.iter().map(|r| r.value)),
        )
    }

    /// Check the bundle's structural invariants against an anchor layout.
    pub fn check(&self, anchors: &AnchorSet) -> Result<(), MeasurementError> {
        let mut seen = Vec::with_capacity(self.tdoa.len());
        for e in &self.tdoa {
            if e.anchor >= anchors.len() {
                return Err(MeasurementError::UnknownAnchor(e.anchor));
            }
            if e.anchor == anchors.reference_index {
                return Err(MeasurementError::ReferenceInTdoa(e.anchor));
            }
            if seen.contains(&e.anchor) {
                return Err(MeasurementError::Duplicate(format!("anchor {}", e.anchor)));
            }
            if !e.value.is_finite() {
                return Err(MeasurementError::NonFinite);
            }
            seen.push(e.anchor);
        }
        let mut peers = Vec::with_capacity(self.ranges.len());
        for r in &self.ranges {
            if peers.contains(&r.peer) {
                return Err(MeasurementError::Duplicate(format!("peer {}", r.peer)));
            }
            if !r.value.is_finite() || !r.peer_position.is_finite() {
                return Err(MeasurementError::NonFinite);
            }
            peers.push(r.peer);
        }
        Ok(())
    }

    /// Drop rows whose geometry is degenerate at `position` (within 1 mm of
    /// an anchor or peer). Returns the number of rows removed.
    pub fn drop_degenerate(&mut self, position: Point2, anchors: &AnchorSet) -> usize {
        let before = self.len();
        let reference = anchors.reference();
        if distance(position, reference) < COINCIDENCE_EPS {
            self.tdoa.clear();
        } else {
            self.tdoa
                .retain(|e| distance(position, anchors.positions[e.anchor]) >= COINCIDENCE_EPS);
        }
        self.ranges
            .retain(|r| distance(position, r.peer_position) >= COINCIDENCE_EPS);
        before - self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementNoiseSpec {
    /// Seconds.
    pub sigma_toa: f64,
    /// Meters.
    pub sigma_twr: f64,
    pub tdoa_correlated: bool,
}

fn normal(std: f64) -> Option<Normal<f64>> {
    (std > 0.0).then(|| Normal::new(0.0, std).expect("finite std"))
}

/// Per-anchor arrival times (seconds) of a packet sent at time zero.
pub fn synth_toas<R: Rng + ?Sized>(
    tag_truth: Point2,
    anchors: &AnchorSet,
    sigma_toa: f64,
    rng: &mut R,
) -> Vec<f64> {
    let noise = normal(sigma_toa);
    anchors
        .positions
        .iter()
        .map(|a| {
            let t = distance(tag_truth, *a) / SPEED_OF_LIGHT;
            match &noise {
                Some(n) => t + n.sample(rng),
                None => t,
            }
        })
        .collect()
}

/// Range differences against the reference anchor. `toas` is indexed by anchor;
/// `None` entries are anchors that did not hear the packet.
pub fn form_tdoa(toas: &[Option<f64>], reference_index: usize) -> Vec<TdoaEntry> {
    let Some(Some(t_ref)) = toas.get(reference_index).copied() else {
        return Vec::new();
    };
    toas.iter()
        .enumerate()
        .filter(|&(i, _)| i != reference_index)
        .filter_map(|(i, t)| {
            t.map(|t| TdoaEntry {
                anchor: i,
                value: SPEED_OF_LIGHT * (t - t_ref),
            })
        })
        .collect()
}

/// Noisy distances from `tag_truth` to each peer.
pub fn synth_ranges<R: Rng + ?Sized>(
    tag_truth: Point2,
    peer_truths: &[Point2],
    sigma_twr: f64,
    rng: &mut R,
) -> Vec<f64> {
    let noise = normal(sigma_twr);
    peer_truths
        .iter()
        .map(|p| {
            let d = distance(tag_truth, *p);
            match &noise {
                Some(n) => d + n.sample(rng),
                None => d,
            }
        })
        .collect()
}

fn check_geometry(
    p: Point2,
    anchors: &AnchorSet,
    active: &[usize],
    peers: &[(usize, Point2)],
) -> Result<(), MeasurementError> {
    let r = anchors.reference_index;
    for &i in active.iter().chain(std::iter::once(&r)) {
        let a = anchors
            .positions
            .get(i)
            .ok_or(MeasurementError::UnknownAnchor(i))?;
        if distance(p, *a) < COINCIDENCE_EPS {
            return Err(MeasurementError::CoincidentAnchor(i));
        }
    }
    for &(id, q) in peers {
        if distance(p, q) < COINCIDENCE_EPS {
            return Err(MeasurementError::CoincidentPeer(id));
        }
    }
    Ok(())
}

/// Predicted measurement vector: one range difference per active anchor,
/// then one distance per peer, in the given order.
pub fn h_eval(
    state: &TagState,
    anchors: &AnchorSet,
    active_anchor_idxs: &[usize],
    peer_estimates: &[(usize, Point2)],
) -> Result<DVector<f64>, MeasurementError> {
    let p = state.position();
    check_geometry(p, anchors, active_anchor_idxs, peer_estimates)?;
    let d_ref = distance(p, anchors.reference());
    let rows = active_anchor_idxs
        .iter()
        .map(|&i| distance(p, anchors.positions[i]) - d_ref)
        .chain(peer_estimates.iter().map(|&(_, q)| distance(p, q)));
    Ok(DVector::from_iterator(
        active_anchor_idxs.len() + peer_estimates.len(),
        rows,
    ))
}

/// Jacobian of [`h_eval`] with respect to `[x y vx vy]`.
pub fn h_jacobian(
    state: &TagState,
    anchors: &AnchorSet,
    active_anchor_idxs: &[usize],
    peer_estimates: &[(usize, Point2)],
) -> Result<DMatrix<f64>, MeasurementError> {
    let p = state.position();
    check_geometry(p, anchors, active_anchor_idxs, peer_estimates)?;
    let unit = |q: Point2| {
        let d = distance(p, q);
        ((p.x - q.x) / d, (p.y - q.y) / d)
    };
    let (rx, ry) = unit(anchors.reference());
    let m = active_anchor_idxs.len() + peer_estimates.len();
    let mut h = DMatrix::zeros(m, 4);
    for (row, &i) in active_anchor_idxs.iter().enumerate() {
        let (ux, uy) = unit(anchors.positions[i]);
        h[(row, 0)] = ux - rx;
        h[(row, 1)] = uy - ry;
    }
    let off = active_anchor_idxs.len();
    for (k, &(_, q)) in peer_estimates.iter().enumerate() {
        let (ux, uy) = unit(q);
        h[(off + k, 0)] = ux;
        h[(off + k, 1)] = uy;
    }
    Ok(h)
}

/// Measurement noise covariance for `n_tdoa` range differences followed by
/// `n_ranges` inter-tag ranges.
///
/// TDOAs share the reference anchor's TOA error, so with `tdoa_correlated`
/// the TDOA block is `(cσ)^2 (I + 11ᵀ)`; otherwise it is `2(cσ)^2 I`.
pub fn build_noise_covariance(
    spec: &MeasurementNoiseSpec,
    n_tdoa: usize,
    n_ranges: usize,
) -> DMatrix<f64> {
    let toa_var = (SPEED_OF_LIGHT * spec.sigma_toa).powi(2);
    let mut tdoa_diag = 2.0 * toa_var;
    let mut tdoa_off = if spec.tdoa_correlated { toa_var } else { 0.0 };
    if n_tdoa > 0 && tdoa_diag < VARIANCE_FLOOR {
        log::warn!("zero TOA noise; substituting variance floor {VARIANCE_FLOOR}");
        tdoa_diag = VARIANCE_FLOOR;
        tdoa_off = 0.0;
    }
    let mut range_var = spec.sigma_twr.powi(2);
    if n_ranges > 0 && range_var < VARIANCE_FLOOR {
        log::warn!("zero ranging noise; substituting variance floor {VARIANCE_FLOOR}");
        range_var = VARIANCE_FLOOR;
    }
    let n = n_tdoa + n_ranges;
    DMatrix::from_fn(n, n, |i, j| {
        if i < n_tdoa && j < n_tdoa {
            if i == j {
                tdoa_diag
            } else {
                tdoa_off
            }
        } else if i == j {
            range_var
        } else {
            0.0
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::true_range_difference;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn square() -> AnchorSet {
        AnchorSet::new(
            vec![
                Point2::new(0.0, 0.0),
                Point2::new(10.0, 0.0),
                Point2::new(10.0, 10.0),
                Point2::new(0.0, 10.0),
            ],
            0,
        )
    }

    fn state(x: f64, y: f64) -> TagState {
        TagState::new(x, y, 0.0, 0.0)
    }

    fn sample_std(v: &[f64]) -> f64 {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    }

    #[test]
    fn noiseless_toas_are_flight_times() {
        let anchors = AnchorSet::reference_layout();
        let tag = Point2::new(3.0, 7.0);
        let toas = synth_toas(tag, &anchors, 0.0, &mut ChaCha8Rng::seed_from_u64(1));
        for (t, a) in toas.iter().zip(&anchors.positions) {
            assert_eq!(*t, distance(tag, *a) / SPEED_OF_LIGHT);
        }
    }

    #[test]
    fn centered_tag_has_equal_toas() {
        let toas = synth_toas(
            Point2::new(5.0, 5.0),
            &square(),
            0.0,
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        assert!(toas.iter().all(|t| *t == toas[0]));
    }

    #[test]
    fn toa_noise_moment() {
        let anchors = AnchorSet::new(vec![Point2::new(0.0, 0.0)], 0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = 5.0 / SPEED_OF_LIGHT;
        let errs: Vec<f64> = (0..100_000)
            .map(|_| synth_toas(Point2::new(3.0, 4.0), &anchors, 1e-9, &mut rng)[0] - truth)
            .collect();
        let s = sample_std(&errs);
        assert!((s / 1e-9 - 1.0).abs() < 0.03, "std {s}");
    }

    #[test]
    fn tdoa_examples() {
        let eq = form_tdoa(&[Some(1e-8); 5], 0);
        assert_eq!(eq.len(), 4);
        assert!(eq.iter().all(|e| e.value == 0.0));
        let one = form_tdoa(&[Some(0.0), Some(1e-9)], 0);
        assert!((one[0].value - 0.299_792_458).abs() < 1e-15);
        assert!(form_tdoa(&[None, Some(1.0), Some(2.0)], 0).is_empty());
        let partial = form_tdoa(&[Some(0.0), None, Some(1e-9)], 0);
        assert_eq!(partial.len(), 1);
        assert_eq!(partial[0].anchor, 2);
    }

    #[test]
    fn tdoa_variance_has_common_reference_term() {
        let anchors = AnchorSet::new(
            vec![Point2::new(0.0, 0.0), Point2::new(10.0, 0.0), Point2::new(0.0, 10.0)],
            0,
        );
        let tag = Point2::new(4.0, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let truth1 = true_range_difference(tag, anchors.positions[1], anchors.positions[0]).unwrap();
        let truth2 = true_range_difference(tag, anchors.positions[2], anchors.positions[0]).unwrap();
        let n = 100_000;
        let (mut e1, mut e2) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let toas: Vec<Option<f64>> = synth_toas(tag, &anchors, 1e-9, &mut rng)
                .into_iter()
                .map(Some)
                .collect();
            let t = form_tdoa(&toas, 0);
            e1.push(t[0].value - truth1);
            e2.push(t[1].value - truth2);
        }
        let cs = SPEED_OF_LIGHT * 1e-9;
        let var = sample_std(&e1).powi(2);
        assert!((var / (2.0 * cs * cs) - 1.0).abs() < 0.03);
        let cov = e1.iter().zip(&e2).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        assert!((cov / (cs * cs) - 1.0).abs() < 0.05, "cov {cov}");
    }

    #[test]
    fn range_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tag = Point2::new(1.0, 1.0);
        let r = synth_ranges(tag, &[Point2::new(4.0, 5.0), tag], 0.0, &mut rng);
        assert_eq!(r, vec![5.0, 0.0]);
        let errs: Vec<f64> = (0..100_000)
            .map(|_| synth_ranges(tag, &[Point2::new(4.0, 5.0)], 0.06, &mut rng)[0] - 5.0)
            .collect();
        assert!((sample_std(&errs) / 0.06 - 1.0).abs() < 0.03);
    }

    #[test]
    fn h_eval_examples() {
        let anchors = square();
        // (5, 2) is on the bisector of anchors 0 and 1.
        let h = h_eval(&state(5.0, 2.0), &anchors, &[1, 2, 3], &[]).unwrap();
        assert_eq!(h.len(), 3);
        assert!(h[0].abs() < 1e-15);

        let s = state(2.7, 6.1);
        let peers = [(4, Point2::new(8.0, 1.0)), (7, Point2::new(1.0, 1.5))];
        let h = h_eval(&s, &anchors, &[3, 1], &peers).unwrap();
        let p = s.position();
        let d0 = distance(p, anchors.positions[0]);
        assert_eq!(h[0], distance(p, anchors.positions[3]) - d0);
        assert_eq!(h[1], distance(p, anchors.positions[1]) - d0);
        assert_eq!(h[2], distance(p, peers[0].1));
        assert_eq!(h[3], distance(p, peers[1].1));

        assert_eq!(
            h_eval(&state(10.0, 10.0), &anchors, &[1, 2], &[]),
            Err(MeasurementError::CoincidentAnchor(2))
        );
        assert_eq!(
            h_eval(&state(1.0, 1.5), &anchors, &[1], &peers),
            Err(MeasurementError::CoincidentPeer(7))
        );
    }

    #[test]
    fn jacobian_rows() {
        let anchors = square();
        let s = state(3.0, 4.0);
        let h = h_jacobian(&s, &anchors, &[0, 1], &[(1, Point2::new(6.0, 8.0))]).unwrap();
        // Reference paired with itself: zero row.
        assert_eq!(h.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0; 4]);
        assert!((h[(2, 0)] + 0.6).abs() < 1e-15);
        assert!((h[(2, 1)] + 0.8).abs() < 1e-15);
        assert!(h.column(2).iter().chain(h.column(3).iter()).all(|v| *v == 0.0));
    }

    #[test]
    fn covariance_examples() {
        let spec = MeasurementNoiseSpec {
            sigma_toa: 1e-9,
            sigma_twr: 0.06,
            tdoa_correlated: true,
        };
        let r = build_noise_covariance(&spec, 2, 1);
        let cs2 = 0.299_792_458f64.powi(2); // 0.0898755...
        assert!((r[(0, 0)] - 2.0 * cs2).abs() < 1e-15);
        assert!((r[(0, 0)] - 0.179_751).abs() < 1e-6);
        assert!((r[(0, 1)] - 0.089_876).abs() < 1e-6);
        assert_eq!(r[(1, 0)], r[(0, 1)]);
        assert!((r[(2, 2)] - 0.0036).abs() < 1e-15);
        assert_eq!(r[(0, 2)], 0.0);

        let u = build_noise_covariance(
            &MeasurementNoiseSpec {
                tdoa_correlated: false,
                ..spec
            },
            3,
            0,
        );
        assert_eq!(u[(0, 1)], 0.0);
        assert_eq!(u[(1, 2)], 0.0);

        let z = build_noise_covariance(
            &MeasurementNoiseSpec {
                sigma_toa: 0.0,
                sigma_twr: 0.0,
                tdoa_correlated: true,
            },
            2,
            2,
        );
        assert!(z.clone().symmetric_eigen().eigenvalues.min() > 0.0);
        assert_eq!(z[(0, 0)], VARIANCE_FLOOR);
    }

    #[test]
    fn degenerate_rows_are_dropped() {
        let anchors = square();
        let mut b = MeasurementBundle {
            tdoa: vec![
                TdoaEntry { anchor: 1, value: 1.0 },
                TdoaEntry { anchor: 2, value: 2.0 },
            ],
            ranges: vec![RangeEntry {
                peer: 3,
                value: 0.0,
                peer_position: Point2::new(10.0, 10.0),
            }],
        };
        assert_eq!(b.drop_degenerate(Point2::new(10.0, 10.0005), &anchors), 2);
        assert_eq!(b.active_anchors(), vec![1]);
    }

    #[test]
    fn bundle_check_rejects_bad_entries() {
        let anchors = square();
        let mut b = MeasurementBundle {
            tdoa: vec![TdoaEntry { anchor: 0, value: 1.0 }],
            ranges: vec![],
        };
        assert_eq!(b.check(&anchors), Err(MeasurementError::ReferenceInTdoa(0)));
        b.tdoa = vec![TdoaEntry { anchor: 1, value: 1.0 }, TdoaEntry { anchor: 1, value: 1.0 }];
        assert!(matches!(b.check(&anchors), Err(MeasurementError::Duplicate(_))));
    }

    fn anchor_set() -> impl Strategy<Value = AnchorSet> {
        prop::collection::vec((-5.0..15.0f64, -5.0..15.0f64), 3..7).prop_map(|v| {
            AnchorSet::new(v.into_iter().map(|(x, y)| Point2::new(x, y)).collect(), 0)
        })
    }

    fn peers() -> impl Strategy<Value = Vec<(usize, Point2)>> {
        prop::collection::vec((-5.0..15.0f64, -5.0..15.0f64), 0..4).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (x, y))| (i, Point2::new(x, y)))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn jacobian_matches_finite_differences(
            anchors in anchor_set(),
            peers in peers(),
            x in 0.0..10.0f64,
            y in 0.0..10.0f64,
            vx in -1.0..1.0f64,
            vy in -1.0..1.0f64,
        ) {
            let s = TagState::new(x, y, vx, vy);
            let p = s.position();
            let all_points = anchors.positions.iter().chain(peers.iter().map(|(_, q)| q));
            prop_assume!(all_points.clone().all(|q| distance(p, *q) > 0.05));
            let active: Vec<usize> = anchors.non_reference().collect();
            let h = h_jacobian(&s, &anchors, &active, &peers).unwrap();
            let step = 1e-6;
            for col in 0..4 {
                let mut plus = s.vector();
                let mut minus = s.vector();
                plus[col] += step;
                minus[col] -= step;
                let fp = h_eval(&TagState::from_vector(&plus), &anchors, &active, &peers).unwrap();
                let fm = h_eval(&TagState::from_vector(&minus), &anchors, &active, &peers).unwrap();
                for row in 0..h.nrows() {
                    let fd = (fp[row] - fm[row]) / (2.0 * step);
                    let scale = h[(row, col)].abs().max(1.0);
                    prop_assert!((fd - h[(row, col)]).abs() / scale < 1e-5);
                }
            }
        }

        #[test]
        fn noise_covariance_is_spd(
            sigma_toa in 0.0..5e-9f64,
            sigma_twr in 0.0..0.5f64,
            n_tdoa in 0usize..7,
            n_ranges in 0usize..5,
            correlated in any::<bool>(),
        ) {
            prop_assume!(n_tdoa + n_ranges > 0);
            let r = build_noise_covariance(
                &MeasurementNoiseSpec { sigma_toa, sigma_twr, tdoa_correlated: correlated },
                n_tdoa,
                n_ranges,
            );
            prop_assert_eq!(&r, &r.transpose());
            prop_assert!(r.symmetric_eigen().eigenvalues.min() > 0.0);
        }

        #[test]
        fn noiseless_tdoa_is_range_difference(x in 0.5..9.5f64, y in 0.5..9.5f64) {
            let anchors = AnchorSet::reference_layout();
            let p = Point2::new(x, y);
            let toas: Vec<Option<f64>> = synth_toas(p, &anchors, 0.0, &mut ChaCha8Rng::seed_from_u64(0))
                .into_iter()
                .map(Some)
                .collect();
            for e in form_tdoa(&toas, 0) {
                let truth = true_range_difference(p, anchors.positions[e.anchor], anchors.reference()).unwrap();
                prop_assert!((e.value - truth).abs() < 1e-9);
            }
        }

        #[test]
        fn ordering_follows_active_permutation(
            perm in Just(vec![1usize, 2, 3, 4]).prop_shuffle(),
            x in 0.5..9.5f64,
            y in 0.5..9.5f64,
        ) {
            let anchors = AnchorSet::reference_layout();
            let s = TagState::new(x, y, 0.0, 0.0);
            let toas: Vec<Option<f64>> = synth_toas(s.position(), &anchors, 0.0, &mut ChaCha8Rng::seed_from_u64(0))
                .into_iter()
                .map(Some)
                .collect();
            let tdoa = form_tdoa(&toas, 0);
            let bundle = MeasurementBundle {
                tdoa: perm.iter().map(|&a| *tdoa.iter().find(|e| e.anchor == a).unwrap()).collect(),
                ranges: vec![],
            };
            let h = h_eval(&s, &anchors, &bundle.active_anchors(), &[]).unwrap();
            let z = bundle.z();
            for k in 0..perm.len() {
                prop_assert!((h[k] - z[k]).abs() < 1e-9);
            }
        }
    }
}
