//! Planar geometry: points, the room rectangle and the anchor layout.
//!
//! Everything here is in meters. Tags are assumed to share one height, so the
//! whole crate works in 2D.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in vacuum, m/s. Converts timing quantities to range units.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Distances below this are treated as coincident points (1 mm).
pub const COINCIDENCE_EPS: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point ({x}, {y}) is not finite")]
    NonFinite { x: f64, y: f64 },
    #[error("position coincides with anchor {0}")]
    CoincidentAnchor(usize),
    #[error("position coincides with peer {0}")]
    CoincidentPeer(usize),
    #[error("grid has {available} points, {requested} tags requested")]
    GridTooSmall { available: usize, requested: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance_to(&self, other: &Point2) -> f64 {
        distance(*self, *other)
    }
}

/// Euclidean distance.
pub fn distance(a: Point2, b: Point2) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Range difference `|p - anchor_i| - |p - anchor_ref|` in meters.
///
/// This is what an ideal TDOA between anchor `i` and the reference anchor
/// measures once multiplied by the speed of light.
pub fn true_range_difference(
    p: Point2,
    anchor_i: Point2,
    anchor_ref: Point2,
) -> Result<f64, GeometryError> {
    if !p.is_finite() {
        return Err(GeometryError::NonFinite { x: p.x, y: p.y });
    }
    let di = distance(p, anchor_i);
    let dr = distance(p, anchor_ref);
    if di < COINCIDENCE_EPS {
        return Err(GeometryError::CoincidentAnchor(0));
    }
    if dr < COINCIDENCE_EPS {
        return Err(GeometryError::CoincidentAnchor(1));
    }
    Ok(di - dr)
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Room {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Room {
    pub const fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_max > self.x_min
            && self.y_max > self.y_min
    }

    pub fn center(&self) -> Point2 {
        Point2::new(
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// Grid points `(x_min + i*step, y_min + j*step)` inside the room,
    /// boundary included. Ordered with `i` (x) as the outer index.
    pub fn grid(&self, step: f64) -> Vec<Point2> {
        // A small slack absorbs rounding when the side is an exact multiple of step.
        let slack = 1e-9 * step;
        let nx = ((self.x_max - self.x_min + slack) / step).floor() as usize + 1;
        let ny = ((self.y_max - self.y_min + slack) / step).floor() as usize + 1;
        let mut out = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                out.push(Point2::new(
                    self.x_min + i as f64 * step,
                    self.y_min + j as f64 * step,
                ));
            }
        }
        out
    }
}

/// Ordered anchor positions plus the index of the common TDOA reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorSet {
    pub positions: Vec<Point2>,
    #[serde(default)]
    pub reference_index: usize,
}

impl AnchorSet {
    pub fn new(positions: Vec<Point2>, reference_index: usize) -> Self {
        Self {
            positions,
            reference_index,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn reference(&self) -> Point2 {
        self.positions[self.reference_index]
    }

    /// Indices of all non-reference anchors, in order.
    pub fn non_reference(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.positions.len()).filter(move |&i| i != self.reference_index)
    }

    /// Layout used for the 10 x 10 m reference room: four corners and the
    /// middle of the south wall, referenced to the origin corner.
    pub fn reference_layout() -> Self {
        Self::new(
            vec![
                Point2::new(0.0, 0.0),
                Point2::new(10.0, 0.0),
                Point2::new(10.0, 10.0),
                Point2::new(0.0, 10.0),
                Point2::new(5.0, 0.0),
            ],
            0,
        )
    }
}

/// Draw `n_tags` distinct grid points uniformly without replacement.
pub fn sample_tag_configuration<R: rand::Rng + ?Sized>(
    room: &Room,
    grid_step: f64,
    n_tags: usize,
    rng: &mut R,
) -> Result<Vec<Point2>, GeometryError> {
    let grid = room.grid(grid_step);
    if grid.len() < n_tags {
        return Err(GeometryError::GridTooSmall {
            available: grid.len(),
            requested: n_tags,
        });
    }
    Ok(rand::seq::index::sample(rng, grid.len(), n_tags)
        .into_iter()
        .map(|i| grid[i])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn distance_examples() {
        assert_eq!(distance(Point2::new(0.0, 0.0), Point2::new(0.0, 0.0)), 0.0);
        assert_eq!(distance(Point2::new(0.0, 0.0), Point2::new(3.0, 4.0)), 5.0);
        // sqrt(2.8^2 + 3.6^2) = sqrt(20.8)
        let d = distance(Point2::new(1.2, -0.5), Point2::new(4.0, 3.1));
        assert!((d - 4.560_701_700_396_552).abs() < 1e-12);
    }

    #[test]
    fn range_difference_examples() {
        let a = Point2::new(0.0, 0.0);
        let r = Point2::new(10.0, 0.0);
        assert!(true_range_difference(Point2::new(5.0, 5.0), a, r).unwrap().abs() < 1e-15);
        // Far along the line beyond anchor_i: approaches -|a - r| from above.
        let v = true_range_difference(Point2::new(-1e6, 0.0), a, r).unwrap();
        assert!((v + 10.0).abs() < 1e-6);
        assert!(v > -10.0 - 1e-9);
        // Beyond the reference the limit is +|a - r|.
        let w = true_range_difference(Point2::new(1e6, 0.0), a, r).unwrap();
        assert!((w - 10.0).abs() < 1e-6);
        assert!(matches!(
            true_range_difference(a, a, r),
            Err(GeometryError::CoincidentAnchor(_))
        ));
    }

    #[test]
    fn grid_sampling_on_half_meter_grid() {
        let room = Room::new(0.0, 0.0, 10.0, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tags = sample_tag_configuration(&room, 0.5, 3, &mut rng).unwrap();
        assert_eq!(tags.len(), 3);
        for t in &tags {
            assert!(room.contains(*t));
            assert_eq!((t.x * 2.0).fract(), 0.0);
            assert_eq!((t.y * 2.0).fract(), 0.0);
        }
        assert_ne!(tags[0], tags[1]);
        assert_ne!(tags[1], tags[2]);
        assert_ne!(tags[0], tags[2]);
    }

    #[test]
    fn exhaustive_small_grid() {
        let room = Room::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(room.grid(0.5).len(), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tags = sample_tag_configuration(&room, 0.5, 9, &mut rng).unwrap();
        tags.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        assert_eq!(tags, room.grid(0.5));
        assert!(matches!(
            sample_tag_configuration(&room, 0.5, 10, &mut rng),
            Err(GeometryError::GridTooSmall { available: 9, requested: 10 })
        ));
    }

    #[test]
    fn sampling_is_deterministic() {
        let room = Room::new(0.0, 0.0, 10.0, 10.0);
        let a = sample_tag_configuration(&room, 0.5, 3, &mut ChaCha8Rng::seed_from_u64(42));
        let b = sample_tag_configuration(&room, 0.5, 3, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
    }

    fn point() -> impl Strategy<Value = Point2> {
        (-50.0..50.0f64, -50.0..50.0f64).prop_map(|(x, y)| Point2::new(x, y))
    }

    proptest! {
        #[test]
        fn triangle_inequality(a in point(), b in point(), c in point()) {
            prop_assert!(distance(a, c) <= distance(a, b) + distance(b, c) + 1e-9);
            prop_assert_eq!(distance(a, b), distance(b, a));
        }

        #[test]
        fn same_anchor_twice_is_zero(p in point(), a in point()) {
            prop_assume!(distance(p, a) > 0.01);
            prop_assert_eq!(true_range_difference(p, a, a).unwrap(), 0.0);
        }

        #[test]
        fn range_difference_bounded_off_axis(p in point(), a in point(), r in point()) {
            prop_assume!(distance(p, a) > 0.01 && distance(p, r) > 0.01 && distance(a, r) > 0.1);
            // distance from p to the line through a and r
            let (dx, dy) = (r.x - a.x, r.y - a.y);
            let off = ((p.x - a.x) * dy - (p.y - a.y) * dx).abs() / dx.hypot(dy);
            prop_assume!(off > 0.01);
            let v = true_range_difference(p, a, r).unwrap();
            prop_assert!(v.abs() < distance(a, r));
        }

        #[test]
        fn samples_distinct_on_grid(seed in any::<u64>(), n in 1usize..20) {
            let room = Room::new(-2.0, 1.0, 4.0, 5.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tags = sample_tag_configuration(&room, 0.5, n, &mut rng).unwrap();
            for (i, t) in tags.iter().enumerate() {
                prop_assert!(room.contains(*t));
                prop_assert_eq!(((t.x - room.x_min) * 2.0).fract(), 0.0);
                prop_assert_eq!(((t.y - room.y_min) * 2.0).fract(), 0.0);
                for u in &tags[i + 1..] {
                    prop_assert_ne!(t, u);
                }
            }
        }
    }
}
