//! Scene description: static primitives, moving actors, robot path, camera
//! and sensor noise. Scenes are stored as JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Point3, Pose};
use crate::io::PoseRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotWaypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum StaticPrimitive {
    /// Box with centre, full edge lengths and a rotation about the vertical.
    Box {
        center: [f64; 3],
        size: [f64; 3],
        #[serde(default)]
        yaw: f64,
    },
    /// Vertical cylinder standing at height `base`.
    Cylinder {
        center: [f64; 2],
        radius: f64,
        height: f64,
        #[serde(default)]
        base: f64,
    },
}

fn default_actor_height() -> f64 {
    1.7
}

fn default_actor_radius() -> f64 {
    0.25
}

fn default_true() -> bool {
    true
}

/// A vertical cylinder following a waypoint path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Actor {
    pub name: String,
    pub path: Vec<Waypoint>,
    #[serde(default = "default_actor_height")]
    pub height: f64,
    #[serde(default = "default_actor_radius")]
    pub radius: f64,
    #[serde(default = "default_true")]
    pub is_person: bool,
}

fn default_min_visible() -> usize {
    100
}

/// Synthetic person detections derived from the rendered actor pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionModel {
    pub enabled: bool,
    /// Standard deviation of the noise added to box corners and size, px.
    pub jitter_px: f64,
    /// Probability of dropping a detection.
    pub miss_rate: f64,
    /// Visible pixel count below which a person is not detected.
    #[serde(default = "default_min_visible")]
    pub min_visible_pixels: usize,
}

impl Default for DetectionModel {
    fn default() -> Self {
        Self {
            enabled: true,
            jitter_px: 0.0,
            miss_rate: 0.0,
            min_visible_pixels: default_min_visible(),
        }
    }
}

fn default_mount() -> PoseRecord {
    PoseRecord {
        t: [0.0, 0.0, 0.6],
        q: [0.5, -0.5, 0.5, -0.5],
    }
}

fn default_max_range() -> f64 {
    12.0
}

/// Everything needed to render a sequence.
///
/// World frame: z up, floor at z = 0. The robot body frame has x forward and
/// z up; `mount` is the camera-to-body transform (camera x right, y down,
/// z forward). The default mount places the camera 0.6 m above the floor
/// looking along the body x axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub name: String,
    pub camera: CameraModel,
    #[serde(default = "default_mount")]
    pub mount: PoseRecord,
    pub robot_path: Vec<RobotWaypoint>,
    #[serde(default)]
    pub statics: Vec<StaticPrimitive>,
    #[serde(default)]
    pub actors: Vec<Actor>,
    /// Depth noise along each ray, m.
    #[serde(default)]
    pub noise_sigma: f64,
    /// Fraction of rays returning nothing.
    #[serde(default)]
    pub dropout: f64,
    pub frame_rate: f64,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub floor: bool,
    /// Rays longer than this return nothing, m.
    #[serde(default = "default_max_range")]
    pub max_range: f64,
    #[serde(default)]
    pub detections: DetectionModel,
}

fn check_times(times: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let mut last = f64::NEG_INFINITY;
    let mut any = false;
    for t in times {
        if !(t > last) || !t.is_finite() {
            return Err(Error::Scene(format!(
                "{what}: waypoint times must be strictly increasing"
            )));
        }
        last = t;
        any = true;
    }
    if any {
        Ok(())
    } else {
        Err(Error::Scene(format!("{what}: path has no waypoints")))
    }
}

impl SceneSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let scene: SceneSpec = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        self.mount.to_pose()?;
        check_times(self.robot_path.iter().map(|w| w.t), "robot_path")?;
        for a in &self.actors {
            check_times(a.path.iter().map(|w| w.t), &format!("actor {}", a.name))?;
            if !(a.radius > 0.0 && a.height > 0.0) {
                return Err(Error::Scene(format!(
                    "actor {}: radius and height must be positive",
                    a.name
                )));
            }
        }
        for s in &self.statics {
            let ok = match s {
                StaticPrimitive::Box { size, .. } => size.iter().all(|v| *v > 0.0),
                StaticPrimitive::Cylinder { radius, height, .. } => *radius > 0.0 && *height > 0.0,
            };
            if !ok {
                return Err(Error::Scene("static primitive with non-positive size".into()));
            }
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Scene("noise_sigma must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Scene("dropout must lie in [0, 1)".into()));
        }
        if !(self.frame_rate > 0.0) || !(self.duration >= 0.0) || !(self.max_range > 0.0) {
            return Err(Error::Scene(
                "frame_rate, duration and max_range must be positive".into(),
            ));
        }
        let d = &self.detections;
        if !(d.jitter_px >= 0.0) || !(0.0..=1.0).contains(&d.miss_rate) {
            return Err(Error::Scene("invalid detection model".into()));
        }
        Ok(())
    }

    /// Number of frames: one every `1 / frame_rate` seconds from t = 0 while
    /// `t < duration`.
    pub fn frame_count(&self) -> usize {
        (self.duration * self.frame_rate - 1e-9).ceil().max(0.0) as usize
    }

    pub fn frame_time(&self, index: usize) -> f64 {
        index as f64 / self.frame_rate
    }

    pub fn robot_pose(&self, t: f64) -> Pose {
        let [x, y, yaw] = interpolate(&self.robot_path, t, |w| (w.t, [w.x, w.y, w.yaw]));
        Pose::from_yaw(x, y, 0.0, yaw)
    }

    pub fn camera_pose(&self, t: f64) -> Pose {
        let mount = self.mount.to_pose().expect("validated mount");
        self.robot_pose(t).compose(&mount)
    }

    /// Axis position of actor `i` at time `t`. Actors stand still before
    /// their first and after their last waypoint.
    pub fn actor_position(&self, i: usize, t: f64) -> [f64; 2] {
        let [x, y] = interpolate(&self.actors[i].path, t, |w| (w.t, [w.x, w.y]));
        [x, y]
    }

    pub fn actor_velocity(&self, i: usize, t: f64) -> [f64; 2] {
        let path = &self.actors[i].path;
        if path.len() < 2 || t < path[0].t || t >= path[path.len() - 1].t {
            return [0.0, 0.0];
        }
        let k = path.partition_point(|w| w.t <= t) - 1;
        let (a, b) = (&path[k], &path[k + 1]);
        let dt = b.t - a.t;
        [(b.x - a.x) / dt, (b.y - a.y) / dt]
    }

    pub fn camera_position(&self, t: f64) -> Point3 {
        self.camera_pose(t).position()
    }
}

fn interpolate<W, const N: usize>(path: &[W], t: f64, get: impl Fn(&W) -> (f64, [f64; N])) -> [f64; N] {
    let first = get(&path[0]);
    if t <= first.0 || path.len() == 1 {
        return first.1;
    }
    let last = get(&path[path.len() - 1]);
    if t >= last.0 {
        return last.1;
    }
    let k = path.partition_point(|w| get(w).0 <= t) - 1;
    let (t0, a) = get(&path[k]);
    let (t1, b) = get(&path[k + 1]);
    let s = (t - t0) / (t1 - t0);
    let mut out = [0.0; N];
    for i in 0..N {
        out[i] = a[i] + s * (b[i] - a[i]);
    }
    out
}
