//! Deterministic synthetic depth-camera scenes with exact ground truth.
//!
//! One ray is cast per pixel centre from the interpolated camera pose. The
//! closest hit among floor, static primitives and actors yields a point,
//! perturbed along the ray by Gaussian noise and dropped with probability
//! `dropout`. Random streams are keyed by `(seed, t, row)`, so a frame does not
//! depend on the frames rendered before it.
//!
//! Object ids: 0 is the floor, `1..=S` the static primitives in scene order
//! and `ACTOR_ID_BASE + i` the actors.

pub mod raycast;
pub mod scene;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::BBox2D;
use crate::geometry::{Point3, Pose};
use crate::io::{
    self, DatasetMeta, IndexRecord, PoseRecord, SensorFrame, DATASET_META_FILE, GROUND_TRUTH_FILE, INDEX_FILE,
    STATIC_REFERENCE_FILE,
};
use raycast::{intersect_box, intersect_cylinder, intersect_floor};
pub use scene::{Actor, DetectionModel, RobotWaypoint, SceneSpec, StaticPrimitive, Waypoint};

pub const FLOOR_ID: u32 = 0;
pub const ACTOR_ID_BASE: u32 = 1000;
/// Copy of the scene written into every generated dataset.
pub const SCENE_FILE: &str = "scene.json";

pub fn is_actor(object: u32) -> bool {
    object >= ACTOR_ID_BASE
}

/// Closest surface along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub object: u32,
    /// Ray parameter of the hit; with a camera ray of unit z this is the depth.
    pub s: f64,
}

/// First surface hit by `origin + s * dir` at time `t`.
pub fn first_hit(scene: &SceneSpec, t: f64, origin: &Point3, dir: &Point3) -> Option<Hit> {
    let actors: Vec<[f64; 2]> = (0..scene.actors.len()).map(|i| scene.actor_position(i, t)).collect();
    first_hit_with(scene, &actors, origin, dir)
}

fn first_hit_with(scene: &SceneSpec, actors: &[[f64; 2]], origin: &Point3, dir: &Point3) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    let mut take = |object: u32, s: Option<f64>| {
        if let Some(s) = s {
            if best.is_none_or(|b| s < b.s) {
                best = Some(Hit { object, s });
            }
        }
    };
    if scene.floor {
        take(FLOOR_ID, intersect_floor(origin, dir));
    }
    for (k, prim) in scene.statics.iter().enumerate() {
        let s = match prim {
            StaticPrimitive::Box { center, size, yaw } => {
                let half = [size[0] / 2.0, size[1] / 2.0, size[2] / 2.0];
                intersect_box(origin, dir, center, &half, *yaw)
            }
            StaticPrimitive::Cylinder {
                center,
                radius,
                height,
                base,
            } => intersect_cylinder(origin, dir, *center, *radius, *base, *height),
        };
        take(k as u32 + 1, s);
    }
    for (i, a) in scene.actors.iter().enumerate() {
        take(
            ACTOR_ID_BASE + i as u32,
            intersect_cylinder(origin, dir, actors[i], a.radius, 0.0, a.height),
        );
    }
    best
}

/// Ground truth of one actor in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorTruth {
    pub id: u32,
    pub name: String,
    pub is_person: bool,
    /// Axis position, world x-y.
    pub center: [f64; 2],
    pub velocity: [f64; 2],
    /// Mean of the noise-free visible surface points, world frame.
    pub centroid: Option<[f64; 3]>,
    /// Pixels whose ray hits this actor first (before dropout).
    pub visible_pixels: usize,
    /// Bounding rectangle of the visible pixels.
    pub bbox: Option<BBox2D>,
}

/// One line of `ground_truth.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFrame {
    pub frame: usize,
    pub timestamp: f64,
    pub actors: Vec<ActorTruth>,
}

#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub frame: SensorFrame,
    /// Object id of every point of `frame.cloud`.
    pub labels: Vec<u32>,
    pub truth: GroundTruthFrame,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(seed: u64, t: f64, lane: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(seed ^ splitmix(t.to_bits())) ^ lane))
}

const DETECTION_LANE: u64 = u64::MAX;

struct PixelHit {
    u: u32,
    v: u32,
    object: u32,
    /// Noise-free camera-frame point.
    exact: Point3,
    /// Noisy camera-frame point, `None` when dropped.
    measured: Option<Point3>,
}

/// Renders the frame at time `t`; `index` is stored in the returned records.
pub fn render_frame(scene: &SceneSpec, t: f64, index: usize) -> RenderedFrame {
    let cam = &scene.camera;
    let pose = scene.camera_pose(t);
    let origin = pose.position();
    let actors: Vec<[f64; 2]> = (0..scene.actors.len()).map(|i| scene.actor_position(i, t)).collect();
    let noise = Normal::new(0.0, scene.noise_sigma.max(0.0)).expect("finite sigma");

    let rows: Vec<Vec<PixelHit>> = (0..cam.height)
        .into_par_iter()
        .map(|v| {
            let mut rng = stream(scene.seed, t, v as u64);
            let mut out = Vec::with_capacity(cam.width as usize);
            for u in 0..cam.width {
                let d_cam = cam.ray_direction(u as f64 + 0.5, v as f64 + 0.5);
                // draw unconditionally so the stream does not depend on geometry
                let keep = rng.random::<f64>() >= scene.dropout;
                let n = noise.sample(&mut rng);
                let d_world = pose.rotate(&d_cam);
                let Some(hit) = first_hit_with(scene, &actors, &origin, &d_world) else {
                    continue;
                };
                let exact = d_cam * hit.s;
                if exact.norm() > scene.max_range {
                    continue;
                }
                let measured = keep.then(|| exact + d_cam * (n / d_cam.norm()));
                out.push(PixelHit {
                    u,
                    v,
                    object: hit.object,
                    exact,
                    measured,
                });
            }
            out
        })
        .collect();

    let n_actors = scene.actors.len();
    let mut sums = vec![Point3::ORIGIN; n_actors];
    let mut counts = vec![0usize; n_actors];
    let mut extents = vec![(u32::MAX, u32::MAX, 0u32, 0u32); n_actors];
    let mut cloud = Vec::new();
    let mut labels = Vec::new();
    for h in rows.iter().flatten() {
        if is_actor(h.object) {
            let i = (h.object - ACTOR_ID_BASE) as usize;
            sums[i] = sums[i] + pose.transform_point(&h.exact);
            counts[i] += 1;
            let e = &mut extents[i];
            *e = (e.0.min(h.u), e.1.min(h.v), e.2.max(h.u), e.3.max(h.v));
        }
        if let Some(p) = h.measured {
            cloud.push(p);
            labels.push(h.object);
        }
    }

    let mut truth_actors = Vec::with_capacity(n_actors);
    for (i, a) in scene.actors.iter().enumerate() {
        let visible = counts[i];
        let (u0, v0, u1, v1) = extents[i];
        let bbox =
            (visible > 0).then(|| BBox2D::new(u0 as f64, v0 as f64, (u1 - u0 + 1) as f64, (v1 - v0 + 1) as f64, 1.0));
        let centroid = (visible > 0).then(|| {
            let c = sums[i] / visible as f64;
            [c.x, c.y, c.z]
        });
        truth_actors.push(ActorTruth {
            id: ACTOR_ID_BASE + i as u32,
            name: a.name.clone(),
            is_person: a.is_person,
            center: actors[i],
            velocity: scene.actor_velocity(i, t),
            centroid,
            visible_pixels: visible,
            bbox,
        });
    }

    let detections = synth_detections(scene, t, &truth_actors);
    RenderedFrame {
        frame: SensorFrame {
            index,
            timestamp: t,
            pose,
            cloud,
            detections,
        },
        labels,
        truth: GroundTruthFrame {
            frame: index,
            timestamp: t,
            actors: truth_actors,
        },
    }
}

fn synth_detections(scene: &SceneSpec, t: f64, actors: &[ActorTruth]) -> Vec<BBox2D> {
    let model = &scene.detections;
    if !model.enabled {
        return Vec::new();
    }
    let mut rng = stream(scene.seed, t, DETECTION_LANE);
    let jitter = Normal::new(0.0, model.jitter_px).expect("finite jitter");
    let mut out = Vec::new();
    for a in actors {
        let (Some(b), true) = (a.bbox, a.is_person) else {
            continue;
        };
        let miss = rng.random::<f64>() < model.miss_rate;
        let j: [f64; 4] = std::array::from_fn(|_| jitter.sample(&mut rng));
        if miss || a.visible_pixels < model.min_visible_pixels {
            continue;
        }
        let noisy = BBox2D::new(
            b.x + j[0],
            b.y + j[1],
            (b.w + j[2]).max(1.0),
            (b.h + j[3]).max(1.0),
            1.0,
        );
        if let Some(c) = noisy.clamped(&scene.camera) {
            out.push(c);
        }
    }
    out
}

/// Points sampled on every static surface at roughly `spacing`, world frame.
pub fn static_reference_cloud(scene: &SceneSpec, spacing: f64) -> Vec<Point3> {
    let steps = |len: f64| ((len / spacing).ceil() as usize).max(1);
    let mut out = Vec::new();
    for prim in &scene.statics {
        match prim {
            StaticPrimitive::Box { center, size, yaw } => {
                let (s, c) = yaw.sin_cos();
                let to_world = |p: [f64; 3]| {
                    Point3::new(
                        center[0] + c * p[0] - s * p[1],
                        center[1] + s * p[0] + c * p[1],
                        center[2] + p[2],
                    )
                };
                for axis in 0..3 {
                    let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
                    let (na, nb) = (steps(size[a]), steps(size[b]));
                    for side in [-0.5, 0.5] {
                        for i in 0..=na {
                            for j in 0..=nb {
                                let mut p = [0.0; 3];
                                p[axis] = side * size[axis];
                                p[a] = (i as f64 / na as f64 - 0.5) * size[a];
                                p[b] = (j as f64 / nb as f64 - 0.5) * size[b];
                                out.push(to_world(p));
                            }
                        }
                    }
                }
            }
            StaticPrimitive::Cylinder {
                center,
                radius,
                height,
                base,
            } => {
                let na = steps(2.0 * std::f64::consts::PI * radius);
                let nh = steps(*height);
                for i in 0..na {
                    let th = i as f64 / na as f64 * std::f64::consts::TAU;
                    for j in 0..=nh {
                        out.push(Point3::new(
                            center[0] + radius * th.cos(),
                            center[1] + radius * th.sin(),
                            base + j as f64 / nh as f64 * height,
                        ));
                    }
                    let nr = steps(*radius);
                    for k in 0..nr {
                        let r = k as f64 / nr as f64 * radius;
                        out.push(Point3::new(
                            center[0] + r * th.cos(),
                            center[1] + r * th.sin(),
                            base + height,
                        ));
                    }
                }
            }
        }
    }
    out
}

/// Summary returned by [`generate_dataset`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSummary {
    pub frames: usize,
    pub points: usize,
}

/// Renders every frame of `scene` into `out_dir`: clouds and per-point labels,
/// `index.jsonl`, `ground_truth.jsonl`, `dataset.json`, the static reference
/// cloud and a copy of the scene.
pub fn generate_dataset(scene: &SceneSpec, out_dir: &Path) -> Result<DatasetSummary> {
    scene.validate()?;
    for sub in ["", "clouds", "labels"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let n = scene.frame_count();
    let mut index = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    let mut points = 0;
    for k in 0..n {
        let t = scene.frame_time(k);
        let r = render_frame(scene, t, k);
        let cloud_file = format!("clouds/{k:06}.dpc");
        io::write_cloud(&out_dir.join(&cloud_file), &r.frame.cloud)?;
        io::write_labels(&out_dir.join(format!("labels/{k:06}.dpl")), &r.labels)?;
        points += r.frame.cloud.len();
        index.push(IndexRecord {
            timestamp: t,
            pose: PoseRecord::from(&r.frame.pose),
            cloud_file,
            detections: r.frame.detections,
        });
        truth.push(r.truth);
    }
    io::write_jsonl(&out_dir.join(INDEX_FILE), &index)?;
    io::write_jsonl(&out_dir.join(GROUND_TRUTH_FILE), &truth)?;
    io::write_json(
        &out_dir.join(DATASET_META_FILE),
        &DatasetMeta {
            scene: scene.name.clone(),
            camera: scene.camera,
            frame_rate: scene.frame_rate,
            frame_count: n,
        },
    )?;
    io::write_cloud(
        &out_dir.join(STATIC_REFERENCE_FILE),
        &static_reference_cloud(scene, 0.05),
    )?;
    io::write_json(&out_dir.join(SCENE_FILE), scene)?;
    Ok(DatasetSummary { frames: n, points })
}

/// Camera pose of the robot at `t`; re-exported for callers that only hold a scene.
pub fn camera_pose(scene: &SceneSpec, t: f64) -> Pose {
    scene.camera_pose(t)
}
