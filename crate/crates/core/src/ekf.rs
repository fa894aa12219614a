//! Extended Kalman filter over a constant-velocity planar state `[x y vx vy]`.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{distance, AnchorSet, Point2, Room};
use crate::measurement::{h_eval, h_jacobian, MeasurementBundle, MeasurementError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EkfError {
    #[error("empty measurement bundle")]
    EmptyBundle,
    #[error("need at least 2 TDOA entries to initialize, got {0}")]
    TooFewTdoa(usize),
    #[error("R is {got}x{got}, bundle has {expected} rows")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("innovation covariance is not positive definite")]
    SingularInnovation,
    #[error("no usable grid point for initialization")]
    NoInitialFix,
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TagState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

impl TagState {
    pub const fn new(x: f64, y: f64, vx: f64, vy: f64) -> Self {
        Self { x, y, vx, vy }
    }

    pub fn at_rest(p: Point2) -> Self {
        Self::new(p.x, p.y, 0.0, 0.0)
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn vector(&self) -> Vector4<f64> {
        Vector4::new(self.x, self.y, self.vx, self.vy)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.vector().iter().all(|v| v.is_finite())
    }
}

/// State covariance. Kept symmetric after every step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance(pub Matrix4<f64>);

impl Covariance {
    pub fn diagonal(sigma_pos: f64, sigma_vel: f64) -> Self {
        let (p, v) = (sigma_pos * sigma_pos, sigma_vel * sigma_vel);
        Self(Matrix4::from_diagonal(&Vector4::new(p, p, v, v)))
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn symmetrized(m: Matrix4<f64>) -> Self {
        Self((m + m.transpose()) * 0.5)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.0.symmetric_eigen().eigenvalues.min()
    }

    /// Largest `|P_ij - P_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.0.amax().max(f64::MIN_POSITIVE);
        (self.0 - self.0.transpose()).amax() / scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub dt: f64,
    pub q_accel: f64,
    pub init_sigma_pos: f64,
    pub init_sigma_vel: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            q_accel: 0.01,
            init_sigma_pos: 2.0,
            init_sigma_vel: 1.0,
        }
    }
}

pub fn build_transition(dt: f64) -> Matrix4<f64> {
    let mut a = Matrix4::identity();
    a[(0, 2)] = dt;
    a[(1, 3)] = dt;
    a
}

/// Discrete white-noise-acceleration process noise.
pub fn build_process_noise(dt: f64, q_accel: f64) -> Matrix4<f64> {
    let pp = dt.powi(4) / 4.0 * q_accel;
    let pv = dt.powi(3) / 2.0 * q_accel;
    let vv = dt * dt * q_accel;
    Matrix4::new(
        pp, 0.0, pv, 0.0, //
        0.0, pp, 0.0, pv, //
        pv, 0.0, vv, 0.0, //
        0.0, pv, 0.0, vv,
    )
}

pub fn predict(state: &TagState, p: &Covariance, config: &FilterConfig) -> (TagState, Covariance) {
    let a = build_transition(config.dt);
    let q = build_process_noise(config.dt, config.q_accel);
    let x = a * state.vector();
    let p = a * p.0 * a.transpose() + q;
    (TagState::from_vector(&x), Covariance::symmetrized(p))
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutput {
    pub state: TagState,
    pub covariance: Covariance,
    /// `z - h(x⁻)`.
    pub innovation: DVector<f64>,
    /// Normalized innovation squared, `yᵀ S⁻¹ y`.
    pub nis: f64,
}

/// Measurement update with gain `K = P Hᵀ (H P Hᵀ + R)⁻¹`.
///
/// The covariance is updated in Joseph form, which equals `(I - K H) P` for
/// the optimal gain, and re-symmetrized.
pub fn update(
    state: &TagState,
    p: &Covariance,
    z: &MeasurementBundle,
    r: &DMatrix<f64>,
    anchors: &AnchorSet,
) -> Result<UpdateOutput, EkfError> {
    if z.is_empty() {
        return Err(EkfError::EmptyBundle);
    }
    if r.nrows() != z.len() || r.ncols() != z.len() {
        return Err(EkfError::DimensionMismatch {
            expected: z.len(),
            got: r.nrows(),
        });
    }
    let active = z.active_anchors();
    let peers = z.peer_positions();
    let predicted = h_eval(state, anchors, &active, &peers)?;
    let h = h_jacobian(state, anchors, &active, &peers)?;
    let innovation = z.z() - predicted;

    let p4 = DMatrix::from_column_slice(4, 4, p.0.as_slice());
    let hp = &h * &p4;
    let s = &hp * h.transpose() + r;
    let chol = s.cholesky().ok_or(EkfError::SingularInnovation)?;
    // S is symmetric, so Kᵀ = S⁻¹ H P.
    let k = chol.solve(&hp).transpose();
    let nis = innovation.dot(&chol.solve(&innovation));
    if !nis.is_finite() {
        return Err(EkfError::SingularInnovation);
    }

    let dx = &k * &innovation;
    let x = state.vector() + Vector4::new(dx[0], dx[1], dx[2], dx[3]);
    let i_kh = DMatrix::<f64>::identity(4, 4) - &k * &h;
    let p_post = &i_kh * &p4 * i_kh.transpose() + &k * r * k.transpose();
    let p_post = Matrix4::from_column_slice(p_post.as_slice());

    Ok(UpdateOutput {
        state: TagState::from_vector(&x),
        covariance: Covariance::symmetrized(p_post),
        innovation,
        nis,
    })
}

/// Initial fix from a grid search over the room minimizing the TDOA residual
/// sum of squares. Ties go to the first grid point in [`Room::grid`] order.
pub fn init_filter(
    first_bundle: &MeasurementBundle,
    anchors: &AnchorSet,
    room: &Room,
    grid_step: f64,
    config: &FilterConfig,
) -> Result<(TagState, Covariance), EkfError> {
    if first_bundle.is_empty() {
        return Err(EkfError::EmptyBundle);
    }
    if first_bundle.tdoa.len() < 2 {
        return Err(EkfError::TooFewTdoa(first_bundle.tdoa.len()));
    }
    let reference = anchors.reference();
    let mut best: Option<(f64, Point2)> = None;
    for g in room.grid(grid_step) {
        let d_ref = distance(g, reference);
        let sse: f64 = first_bundle
            .tdoa
            .iter()
            .map(|e| {
                let pred = distance(g, anchors.positions[e.anchor]) - d_ref;
                (e.value - pred).powi(2)
            })
            .sum();
        if !sse.is_finite() {
            continue;
        }
        if best.is_none_or(|(b, _)| sse < b) {
            best = Some((sse, g));
        }
    }
    let (_, p) = best.ok_or(EkfError::NoInitialFix)?;
    Ok((
        TagState::at_rest(p),
        Covariance::diagonal(config.init_sigma_pos, config.init_sigma_vel),
    ))
}
