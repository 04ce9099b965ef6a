//! Constant-velocity Kalman filtering of object centroids in the world x-y
//! plane, and Gaussian re-association of lost tracks.
//!
//! State is `[x, y, vx, vy]`; measurements are centroid `(x, y)`. Height is
//! not modelled.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::clustering::TrackId;
use crate::error::{Error, Result};
use crate::geometry::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionParams {
    /// Diagonal of the process noise per second; `Q = diag(rate) * T_s`.
    pub process_noise_rate: [f64; 4],
    /// Diagonal of the measurement noise `R`, m^2.
    pub measurement_noise: [f64; 2],
    /// Diagonal of the covariance a new track starts with.
    pub initial_covariance: [f64; 4],
    /// Re-association gate as a Mahalanobis distance. The equivalent density
    /// threshold is derived from the live covariance.
    pub reassociation_gate: f64,
    /// How long a lost track stays eligible for re-association, s.
    pub occlusion_keepalive: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            process_noise_rate: [1e-3, 1e-3, 0.5, 0.5],
            measurement_noise: [0.05 * 0.05, 0.05 * 0.05],
            initial_covariance: [0.1, 0.1, 2.0, 2.0],
            reassociation_gate: 3.5,
            occlusion_keepalive: 2.0,
        }
    }
}

impl MotionParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = self
            .process_noise_rate
            .iter()
            .chain(&self.measurement_noise)
            .all(|v| *v >= 0.0 && v.is_finite());
        let init = self.initial_covariance.iter().all(|v| *v > 0.0);
        if !nonneg || !init || self.reassociation_gate <= 0.0 || self.occlusion_keepalive < 0.0 {
            return Err(Error::Config("invalid motion parameters".into()));
        }
        Ok(())
    }

    fn q(&self, dt: f64) -> Matrix4<f64> {
        Matrix4::from_diagonal(&Vector4::from(self.process_noise_rate)) * dt
    }

    fn r(&self) -> Matrix2<f64> {
        Matrix2::from_diagonal(&Vector2::from(self.measurement_noise))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanTrack {
    pub state: Vector4<f64>,
    pub covariance: Matrix4<f64>,
    pub last_update: f64,
    pub owner: TrackId,
}

fn transition(dt: f64) -> Matrix4<f64> {
    let mut a = Matrix4::identity();
    a[(0, 2)] = dt;
    a[(1, 3)] = dt;
    a
}

fn observation() -> Matrix2x4<f64> {
    let mut h = Matrix2x4::zeros();
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    h
}

impl KalmanTrack {
    /// Starts a track at `position` with zero velocity.
    pub fn new(owner: TrackId, position: &Point3, timestamp: f64, params: &MotionParams) -> Self {
        Self {
            state: Vector4::new(position.x, position.y, 0.0, 0.0),
            covariance: Matrix4::from_diagonal(&Vector4::from(params.initial_covariance)),
            last_update: timestamp,
            owner,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.state[0], self.state[1]]
    }

    pub fn velocity(&self) -> [f64; 2] {
        [self.state[2], self.state[3]]
    }

    pub fn position_covariance(&self) -> Matrix2<f64> {
        self.covariance.fixed_view::<2, 2>(0, 0).into_owned()
    }

    pub fn is_positive_definite(&self) -> bool {
        is_spd(&self.covariance)
    }
}

fn is_spd(m: &Matrix4<f64>) -> bool {
    m.iter().all(|v| v.is_finite()) && (m - m.transpose()).amax() <= 1e-9 * m.amax().max(1.0) && m.cholesky().is_some()
}

/// One predict step over `dt` seconds followed, if `measurement` is present,
/// by a measurement update. The covariance is re-symmetrized after the update.
/// A covariance that stops being positive definite yields
/// [`Error::FilterDivergence`]; the caller should reset the track.
pub fn kf_step(
    track: &KalmanTrack,
    measurement: Option<[f64; 2]>,
    dt: f64,
    params: &MotionParams,
) -> Result<KalmanTrack> {
    if !(dt > 0.0) {
        return Err(Error::FilterDivergence(format!("non-positive time step {dt}")));
    }
    let a = transition(dt);
    let mut state = a * track.state;
    let mut cov = a * track.covariance * a.transpose() + params.q(dt);

    if let Some(z) = measurement {
        let h = observation();
        let s = h * cov * h.transpose() + params.r();
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| Error::FilterDivergence("singular innovation covariance".into()))?;
        let k = cov * h.transpose() * s_inv;
        let innovation = Vector2::new(z[0], z[1]) - h * state;
        state += k * innovation;
        // Joseph form keeps the update positive semi-definite under round-off.
        let i_kh = Matrix4::identity() - k * h;
        cov = i_kh * cov * i_kh.transpose() + k * params.r() * k.transpose();
    }
    cov = (cov + cov.transpose()) * 0.5;

    let next = KalmanTrack {
        state,
        covariance: cov,
        last_update: track.last_update + dt,
        owner: track.owner,
    };
    if !next.state.iter().all(|v| v.is_finite()) || !is_spd(&next.covariance) {
        return Err(Error::FilterDivergence(format!(
            "covariance of track {} is no longer positive definite",
            track.owner
        )));
    }
    Ok(next)
}

/// Moves a track forward to `now` without a measurement. A track already at
/// or past `now` is returned unchanged.
pub fn predict_to(track: &KalmanTrack, now: f64, params: &MotionParams) -> Result<KalmanTrack> {
    let dt = now - track.last_update;
    if dt > 0.0 {
        kf_step(track, None, dt, params)
    } else {
        Ok(track.clone())
    }
}

/// Squared Mahalanobis distance of `candidate` (x-y only) from the track's
/// position under its position covariance.
pub fn mahalanobis_squared(track: &KalmanTrack, candidate: &Point3) -> Result<f64> {
    let cov = track.position_covariance();
    let inv = checked_inverse(&cov)?;
    let d = Vector2::new(candidate.x - track.state[0], candidate.y - track.state[1]);
    Ok((d.transpose() * inv * d)[0])
}

fn checked_inverse(cov: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    let det = cov.determinant();
    if !(det > 0.0) || !det.is_finite() {
        return Err(Error::DegenerateCovariance(format!(
            "position covariance determinant {det}"
        )));
    }
    cov.try_inverse()
        .ok_or_else(|| Error::DegenerateCovariance("position covariance is singular".into()))
}

/// Bivariate normal density of `candidate` under the track's position
/// estimate. The track is first predicted forward to `now`.
pub fn reassociation_probability(
    lost: &KalmanTrack,
    candidate: &Point3,
    now: f64,
    params: &MotionParams,
) -> Result<f64> {
    let predicted = predict_to(lost, now, params)?;
    let m2 = mahalanobis_squared(&predicted, candidate)?;
    let det = predicted.position_covariance().determinant();
    Ok((-0.5 * m2).exp() / (2.0 * PI * det.sqrt()))
}

/// Density at Mahalanobis distance `gate` under `track`'s position covariance.
pub fn density_threshold(track: &KalmanTrack, gate: f64) -> Result<f64> {
    let det = track.position_covariance().determinant();
    if !(det > 0.0) {
        return Err(Error::DegenerateCovariance(format!(
            "position covariance determinant {det}"
        )));
    }
    Ok((-0.5 * gate * gate).exp() / (2.0 * PI * det.sqrt()))
}

/// A new track to be folded into a lost one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub new_track: TrackId,
    pub lost_track: TrackId,
    pub density: f64,
}

/// Decides which newly appeared tracks continue a lost one.
///
/// Each new track picks the lost track (alive for at most
/// `occlusion_keepalive`) with the highest density; the pick stands only if
/// the density reaches the gate-equivalent threshold. A lost track claimed by
/// several new tracks merges with the densest one only.
pub fn handle_lost_tracks(
    lost_tracks: &[&KalmanTrack],
    new_tracks: &[(TrackId, Point3)],
    params: &MotionParams,
    now: f64,
) -> Vec<Merge> {
    let mut predicted = Vec::new();
    for lost in lost_tracks {
        if now - lost.last_update > params.occlusion_keepalive + 1e-9 {
            continue;
        }
        let Ok(p) = predict_to(lost, now, params) else {
            continue;
        };
        let Ok(threshold) = density_threshold(&p, params.reassociation_gate) else {
            continue;
        };
        predicted.push((p, threshold));
    }

    let mut claims: Vec<Merge> = Vec::new();
    for (new_id, centroid) in new_tracks {
        let mut best: Option<Merge> = None;
        for (p, threshold) in &predicted {
            let Ok(density) = reassociation_probability(p, centroid, now, params) else {
                continue;
            };
            if density < *threshold {
                continue;
            }
            if best.is_none_or(|b| density > b.density) {
                best = Some(Merge {
                    new_track: *new_id,
                    lost_track: p.owner,
                    density,
                });
            }
        }
        claims.extend(best);
    }
    claims.sort_by(|a, b| b.density.total_cmp(&a.density).then(a.new_track.cmp(&b.new_track)));
    let mut taken = std::collections::HashSet::new();
    claims.retain(|m| taken.insert(m.lost_track));
    claims.sort_by_key(|m| m.new_track);
    claims
}
