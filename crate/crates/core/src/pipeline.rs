//! Frame-by-frame pipeline: filtering, clustering and tracking, voting
//! classification, detector fusion, motion estimation and the layered grid.

use std::collections::BTreeMap;
use std::time::Instant;

use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::classification::{
    build_depth_map, cast_votes, classify_cluster, Exclusion, VoteCounters, VoteValue, VotingContext,
};
use crate::clustering::{associate_centroids, dbscan, refine_with_boxes, ClassState, ClusterTrack, TrackId};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::filtering::{filter_cloud, voxel_key};
use crate::frame::{FrameBuffer, Timestamped};
use crate::fusion::{associate_box_to_cluster, update_person_confidence, BBox2D, BoxTracker};
use crate::geometry::{CameraModel, Point3, Pose};
use crate::grid::{ClassifiedPoints, LayeredGrid};
use crate::io::{Dataset, SensorFrame};
use crate::motion::{handle_lost_tracks, kf_step, KalmanTrack};
use crate::spatial::GridIndex;

/// Cell size of the spatial index over stored dense clouds, m.
const DENSE_INDEX_CELL: f64 = 0.1;
/// Hard cap on buffered frames.
const BUFFER_CAPACITY: usize = 256;

/// One hypothesis track observed in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub frame: usize,
    pub timestamp: f64,
    pub track_id: TrackId,
    pub class: ClassState,
    /// Cluster centroid, world frame.
    pub centroid: [f64; 3],
    /// Kalman velocity estimate, m/s.
    pub velocity: [f64; 2],
}

/// Wall-clock time per stage, ms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub frame: usize,
    pub filtering: f64,
    pub clustering: f64,
    pub classification: f64,
    pub fusion: f64,
    pub motion: f64,
    pub grid: f64,
    pub total: f64,
}

impl StageTiming {
    pub const CSV_HEADER: &'static str =
        "frame,filtering_ms,clustering_ms,classification_ms,fusion_ms,motion_ms,grid_ms,total_ms";

    /// Every stage except detector fusion.
    pub fn core_ms(&self) -> f64 {
        self.filtering + self.clustering + self.classification + self.motion + self.grid
    }

    pub fn stage_sum(&self) -> f64 {
        self.core_ms() + self.fusion
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
            self.frame,
            self.filtering,
            self.clustering,
            self.classification,
            self.fusion,
            self.motion,
            self.grid,
            self.total
        )
    }
}

/// A point that cast a vote, recorded when diagnostics are enabled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoteRecord {
    pub point: Point3,
    pub track: TrackId,
    /// Timestamp of the frame voted against.
    pub reference_time: f64,
    pub self_occluded: bool,
    pub dynamic: bool,
}

#[derive(Debug, Clone, Default)]
pub struct FrameOutput {
    pub frame: usize,
    pub timestamp: f64,
    pub tracks: Vec<TrackRecord>,
    pub timing: StageTiming,
    pub counters: VoteCounters,
    /// Track pairs `(new, lost)` joined by motion re-association.
    pub merges: Vec<(TrackId, TrackId)>,
    pub votes: Vec<VoteRecord>,
}

/// What the pipeline keeps of a processed frame for later voting.
#[derive(Debug)]
struct StoredFrame {
    timestamp: f64,
    pose: Pose,
    world_to_camera: Pose,
    dense_camera: Vec<Point3>,
    dense_index: GridIndex,
    filtered: Vec<Point3>,
    filtered_tracks: Vec<Option<TrackId>>,
}

impl Timestamped for StoredFrame {
    fn timestamp(&self) -> f64 {
        self.timestamp
    }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

pub struct Pipeline {
    config: PipelineConfig,
    camera: CameraModel,
    buffer: FrameBuffer<StoredFrame>,
    tracks: BTreeMap<TrackId, ClusterTrack>,
    kalman: BTreeMap<TrackId, KalmanTrack>,
    boxes: BoxTracker,
    grid: Option<LayeredGrid>,
    next_id: TrackId,
    last_timestamp: Option<f64>,
    static_voxels: FxHashSet<(i64, i64, i64)>,
    static_cloud: Vec<Point3>,
    diagnostics: bool,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, camera: CameraModel) -> Result<Self> {
        config.validate()?;
        camera.validate()?;
        Ok(Self {
            buffer: FrameBuffer::new(config.voting.delta, BUFFER_CAPACITY),
            config,
            camera,
            tracks: BTreeMap::new(),
            kalman: BTreeMap::new(),
            boxes: BoxTracker::new(),
            grid: None,
            next_id: 0,
            last_timestamp: None,
            static_voxels: FxHashSet::default(),
            static_cloud: Vec::new(),
            diagnostics: false,
        })
    }

    /// Records every voting point in [`FrameOutput::votes`].
    pub fn set_diagnostics(&mut self, on: bool) {
        self.diagnostics = on;
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn grid(&self) -> Option<&LayeredGrid> {
        self.grid.as_ref()
    }

    pub fn tracks(&self) -> &BTreeMap<TrackId, ClusterTrack> {
        &self.tracks
    }

    pub fn kalman_tracks(&self) -> &BTreeMap<TrackId, KalmanTrack> {
        &self.kalman
    }

    /// Points of clusters classified static, one per voxel of the filter leaf size.
    pub fn static_cloud(&self) -> &[Point3] {
        &self.static_cloud
    }

    fn new_track(&mut self, now: f64, centroid: Point3) -> TrackId {
        let id = self.next_id;
        self.next_id += 1;
        self.tracks.insert(id, ClusterTrack::new(id, now, centroid));
        self.kalman
            .insert(id, KalmanTrack::new(id, &centroid, now, &self.config.motion));
        id
    }

    pub fn process(&mut self, frame: &SensorFrame) -> Result<FrameOutput> {
        let now = frame.timestamp;
        if let Some(last) = self.last_timestamp {
            if !(now > last) {
                return Err(Error::MissingFrame {
                    index: frame.index,
                    detail: format!("timestamp {now} does not advance past {last}"),
                });
            }
        }
        let previous_time = self.last_timestamp;
        let cfg = self.config.clone();
        let start = Instant::now();
        let mut timing = StageTiming {
            frame: frame.index,
            ..Default::default()
        };

        // filtering
        let t = Instant::now();
        let clouds = filter_cloud(&frame.cloud, &frame.pose, &cfg.filter);
        let cloud = &clouds.filtered;
        timing.filtering = ms(t);

        // clustering and frame-to-frame association
        let t = Instant::now();
        let mut clusters = dbscan(cloud, cfg.clustering.eps, cfg.clustering.min_pts);
        let mut box_matches: Vec<(usize, TrackId)> = Vec::new();
        let mut detections: Vec<BBox2D> = Vec::new();
        if cfg.use_detector {
            box_matches = self.boxes.track_boxes(&frame.detections, now, &cfg.fusion);
            detections = box_matches.iter().map(|(d, _)| frame.detections[*d]).collect();
            clusters = refine_with_boxes(
                &clusters,
                cloud,
                &detections,
                &self.camera,
                &frame.pose,
                &cfg.clustering,
            );
        }
        let active: Vec<&ClusterTrack> = self
            .tracks
            .values()
            .filter(|tr| previous_time.is_some_and(|p| tr.last_seen == p))
            .collect();
        let assoc = associate_centroids(&clusters, &active, cfg.clustering.max_association_distance);
        let mut owner: Vec<TrackId> = vec![0; clusters.len()];
        for &(c, id) in &assoc.matches {
            owner[c] = id;
            self.tracks
                .get_mut(&id)
                .expect("active track")
                .extend(now, clusters[c].centroid);
        }
        let mut fresh: Vec<(TrackId, Point3)> = Vec::new();
        for &c in &assoc.new_clusters {
            let id = self.new_track(now, clusters[c].centroid);
            owner[c] = id;
            fresh.push((id, clusters[c].centroid));
        }
        timing.clustering = ms(t);

        // motion re-association of lost tracks
        let t = Instant::now();
        let lost: Vec<&KalmanTrack> = self
            .tracks
            .values()
            .filter(|tr| tr.last_seen < now && tr.class_state != ClassState::Static)
            .filter_map(|tr| self.kalman.get(&tr.id))
            .collect();
        let merges = handle_lost_tracks(&lost, &fresh, &cfg.motion, now);
        let mut merged = Vec::new();
        for m in &merges {
            let Some(c) = owner.iter().position(|o| *o == m.new_track) else {
                continue;
            };
            owner[c] = m.lost_track;
            self.tracks.remove(&m.new_track);
            self.kalman.remove(&m.new_track);
            self.tracks
                .get_mut(&m.lost_track)
                .expect("lost track")
                .extend(now, clusters[c].centroid);
            merged.push((m.new_track, m.lost_track));
            log::debug!(
                "frame {}: track {} re-associated to {}",
                frame.index,
                m.new_track,
                m.lost_track
            );
        }
        timing.motion = ms(t);

        let mut point_track: Vec<Option<TrackId>> = vec![None; cloud.len()];
        let cluster_points: Vec<Vec<Point3>> = clusters
            .iter()
            .zip(&owner)
            .map(|(c, id)| {
                for &i in &c.points {
                    point_track[i] = Some(*id);
                }
                c.points.iter().map(|&i| cloud[i]).collect()
            })
            .collect();

        // classification
        let t = Instant::now();
        let mut counters = VoteCounters::default();
        let mut votes = Vec::new();
        if let Some(reference) = reference_frame(&self.buffer, cfg.voting.delta, now, previous_time) {
            let depth_map = build_depth_map(
                &reference.dense_camera,
                &reference.pose,
                &reference.filtered,
                &reference.filtered_tracks,
                &self.camera,
                frame.index,
                cfg.filter.depth_limit,
                &cfg.voting,
            );
            let ctx = VotingContext {
                depth_map: &depth_map,
                dense_world: &reference.dense_index,
                world_to_camera: reference.world_to_camera,
                camera: &self.camera,
            };
            for (points, id) in cluster_points.iter().zip(&owner) {
                let (v, ex, c) = cast_votes(points, *id, &ctx, &cfg.voting);
                counters += c;
                if self.diagnostics {
                    for ((p, v), e) in points.iter().zip(&v).zip(&ex) {
                        if let (Exclusion::Votes { self_occluded }, true) = (e, v.value != VoteValue::Excluded) {
                            votes.push(VoteRecord {
                                point: *p,
                                track: *id,
                                reference_time: reference.timestamp,
                                self_occluded: *self_occluded,
                                dynamic: v.value == VoteValue::Dynamic,
                            });
                        }
                    }
                }
                let track = self.tracks.get_mut(id).expect("owned track");
                classify_cluster(&v, track, now, &cfg.voting);
            }
        }
        timing.classification = ms(t);

        // detector fusion
        let t = Instant::now();
        if cfg.use_detector {
            let mut links = Vec::new();
            for (k, (_, box_id)) in box_matches.iter().enumerate() {
                if let Some(c) = associate_box_to_cluster(&detections[k], &clusters, cloud, &self.camera, &frame.pose) {
                    links.push((*box_id, owner[c]));
                }
            }
            update_person_confidence(&mut self.tracks, &mut self.boxes.tracks, &links, &cfg.fusion, now);
        }
        timing.fusion = ms(t);

        // Kalman updates and track expiry
        let t = Instant::now();
        for (c, id) in owner.iter().enumerate() {
            let kf = self.kalman.get(id).expect("track has a filter");
            if kf.last_update >= now {
                continue;
            }
            let z = [clusters[c].centroid.x, clusters[c].centroid.y];
            let next = kf_step(kf, Some(z), now - kf.last_update, &cfg.motion).unwrap_or_else(|e| {
                log::warn!("track {id}: {e}; filter reset");
                KalmanTrack::new(*id, &clusters[c].centroid, now, &cfg.motion)
            });
            self.kalman.insert(*id, next);
        }
        let timeout = cfg.clustering.track_timeout;
        let expired: Vec<TrackId> = self
            .tracks
            .values()
            .filter(|tr| now - tr.last_seen > timeout + 1e-9)
            .map(|tr| tr.id)
            .collect();
        for id in expired {
            self.tracks.remove(&id);
            self.kalman.remove(&id);
        }
        timing.motion += ms(t);

        // occupancy grid
        let t = Instant::now();
        let classes: Vec<ClassState> = owner.iter().map(|id| self.tracks[id].class_state).collect();
        let classified: Vec<ClassifiedPoints<'_>> = cluster_points
            .iter()
            .zip(&classes)
            .map(|(p, c)| ClassifiedPoints { class: *c, points: p })
            .collect();
        let endpoints: Vec<[f64; 2]> = cloud.iter().map(|p| [p.x, p.y]).collect();
        let eye = frame.pose.position();
        let moving: Vec<&KalmanTrack> = owner
            .iter()
            .zip(&classes)
            .filter(|(_, c)| c.is_dynamic_like())
            .map(|(id, _)| &self.kalman[id])
            .collect();
        let grid = self
            .grid
            .get_or_insert_with(|| LayeredGrid::new(cfg.grid, [eye.x, eye.y]));
        grid.update_layers(&classified, [eye.x, eye.y], &endpoints, &moving, now);
        timing.grid = ms(t);

        // bookkeeping for later frames
        let t = Instant::now();
        for (points, class) in cluster_points.iter().zip(&classes) {
            if *class == ClassState::Static {
                for p in points {
                    if self.static_voxels.insert(voxel_key(p, cfg.filter.voxel_leaf)) {
                        self.static_cloud.push(*p);
                    }
                }
            }
        }
        let stored = StoredFrame {
            timestamp: now,
            world_to_camera: frame.pose.inverse(),
            pose: frame.pose,
            dense_index: GridIndex::new(&clouds.dense_world, DENSE_INDEX_CELL),
            dense_camera: clouds.dense_camera,
            filtered: clouds.filtered,
            filtered_tracks: point_track,
        };
        if self.buffer.push(stored).is_err() {
            unreachable!("timestamps checked on entry");
        }
        self.last_timestamp = Some(now);
        timing.classification += ms(t);
        timing.total = ms(start);

        let tracks = clusters
            .iter()
            .zip(&owner)
            .zip(&classes)
            .map(|((c, id), class)| TrackRecord {
                frame: frame.index,
                timestamp: now,
                track_id: *id,
                class: *class,
                centroid: [c.centroid.x, c.centroid.y, c.centroid.z],
                velocity: self.kalman[id].velocity(),
            })
            .collect::<Vec<_>>();
        let mut tracks = tracks;
        tracks.sort_by_key(|r| r.track_id);

        Ok(FrameOutput {
            frame: frame.index,
            timestamp: now,
            tracks,
            timing,
            counters,
            merges: merged,
            votes,
        })
    }
}

/// The stored frame closest to `now - delta`, accepted only within half a
/// frame interval of that target.
fn reference_frame(
    buffer: &FrameBuffer<StoredFrame>,
    delta: f64,
    now: f64,
    previous: Option<f64>,
) -> Option<&StoredFrame> {
    let interval = now - previous?;
    let target = now - delta;
    let r = buffer.lookup(target)?;
    ((r.timestamp - target).abs() <= interval / 2.0 + 1e-9).then_some(r)
}

/// Result of processing a whole dataset.
#[derive(Debug, Clone, Default)]
pub struct RunResult {
    pub tracks: Vec<TrackRecord>,
    pub timings: Vec<StageTiming>,
    pub merges: Vec<(usize, TrackId, TrackId)>,
    pub counters: VoteCounters,
    pub static_cloud: Vec<Point3>,
}

/// Runs the pipeline over every frame of `dataset`. `on_frame` sees the
/// pipeline state after each frame (used for grid export).
pub fn run_dataset(
    dataset: &Dataset,
    config: &PipelineConfig,
    mut on_frame: impl FnMut(&Pipeline, &FrameOutput) -> Result<()>,
) -> Result<RunResult> {
    let mut pipeline = Pipeline::new(config.clone(), dataset.meta.camera)?;
    let mut out = RunResult::default();
    for i in 0..dataset.len() {
        let frame = dataset.load_frame(i)?;
        let f = pipeline.process(&frame)?;
        on_frame(&pipeline, &f)?;
        out.counters += f.counters;
        out.merges.extend(f.merges.iter().map(|(n, l)| (f.frame, *n, *l)));
        out.timings.push(f.timing);
        out.tracks.extend(f.tracks);
    }
    out.static_cloud = pipeline.static_cloud;
    Ok(out)
}

/// Median of `values`; `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
