//! Image-plane detection boxes: IoU tracking, 2D-to-3D association and the
//! association-frequency rule that promotes cluster tracks to `person`.
//!
//! Detections arrive as plain boxes (see [`DetectionSource`]); no detector
//! network runs in-process.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::clustering::{ClassState, Cluster, ClusterTrack, TrackId};
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Pixel, Point3, Pose};

/// Axis-aligned image box, top-left corner plus size, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BBox2D {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
}

impl BBox2D {
    pub fn new(x: f64, y: f64, w: f64, h: f64, confidence: f64) -> Self {
        Self { x, y, w, h, confidence }
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    /// Half-open containment: `[x, x + w) x [y, y + h)`.
    #[inline]
    pub fn contains(&self, px: &Pixel) -> bool {
        px.u >= self.x && px.u < self.x + self.w && px.v >= self.y && px.v < self.y + self.h
    }

    /// Clamps the box to the image. Returns `None` if nothing remains.
    pub fn clamped(&self, cam: &CameraModel) -> Option<BBox2D> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = (self.x + self.w).min(cam.width as f64);
        let y1 = (self.y + self.h).min(cam.height as f64);
        (x1 > x0 && y1 > y0).then(|| BBox2D::new(x0, y0, x1 - x0, y1 - y0, self.confidence))
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0
            && self.h > 0.0
            && (0.0..=1.0).contains(&self.confidence)
            && [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite())
    }
}

/// Intersection over union, in `[0, 1]`.
pub fn iou(a: &BBox2D, b: &BBox2D) -> f64 {
    let ix = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let iy = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionParams {
    pub iou_threshold: f64,
    /// Association frequency at which a cluster track becomes `person`, 1/s.
    pub confidence_freq_threshold: f64,
    /// Sliding window over which the association frequency is measured, s.
    pub freq_window: f64,
    pub min_detection_confidence: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            iou_threshold: 0.3,
            confidence_freq_threshold: 1.5,
            freq_window: 2.0,
            min_detection_confidence: 0.5,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.iou_threshold > 0.0
            && self.iou_threshold < 1.0
            && self.confidence_freq_threshold > 0.0
            && self.freq_window > 0.0
            && (0.0..=1.0).contains(&self.min_detection_confidence);
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid fusion parameters".into()))
        }
    }
}

/// Source of per-frame person detections. The pipeline reads boxes recorded in
/// the dataset; a live detector can implement this trait instead.
pub trait DetectionSource {
    fn detections(&mut self, frame_index: usize, timestamp: f64) -> Vec<BBox2D>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxTrack {
    pub id: TrackId,
    pub box_history: VecDeque<(f64, BBox2D)>,
    pub associated_cluster_track: Option<TrackId>,
    pub association_events: VecDeque<f64>,
    pub last_seen: f64,
}

impl BoxTrack {
    fn new(id: TrackId, t: f64, b: BBox2D) -> Self {
        let mut box_history = VecDeque::new();
        box_history.push_back((t, b));
        Self {
            id,
            box_history,
            associated_cluster_track: None,
            association_events: VecDeque::new(),
            last_seen: t,
        }
    }

    pub fn last_box(&self) -> &BBox2D {
        &self.box_history.back().expect("box track has history").1
    }

    /// Records that this frame's box was linked to `cluster_track`. A change of
    /// cluster track resets the event history.
    pub fn record_association(&mut self, cluster_track: TrackId, now: f64) {
        if self.associated_cluster_track != Some(cluster_track) {
            self.association_events.clear();
            self.associated_cluster_track = Some(cluster_track);
        }
        self.association_events.push_back(now);
    }

    fn prune(&mut self, now: f64, window: f64) {
        while self
            .association_events
            .front()
            .is_some_and(|t| now - *t > window + 1e-9)
        {
            self.association_events.pop_front();
        }
    }
}

/// Tracking-by-detection over image-plane boxes.
#[derive(Debug, Clone, Default)]
pub struct BoxTracker {
    pub tracks: Vec<BoxTrack>,
    next_id: TrackId,
}

impl BoxTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Matches `detections` to existing tracks by greedy highest IoU and returns
    /// `(detection index, box track id)` for every accepted detection.
    /// Detections below the confidence gate are ignored; tracks unseen for
    /// longer than `freq_window` are dropped.
    pub fn track_boxes(&mut self, detections: &[BBox2D], now: f64, params: &FusionParams) -> Vec<(usize, TrackId)> {
        let accepted: Vec<usize> = (0..detections.len())
            .filter(|&i| detections[i].is_valid() && detections[i].confidence >= params.min_detection_confidence)
            .collect();

        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for &d in &accepted {
            for (t, track) in self.tracks.iter().enumerate() {
                let v = iou(&detections[d], track.last_box());
                if v >= params.iou_threshold {
                    pairs.push((v, d, t));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut det_used = vec![false; detections.len()];
        let mut track_used = vec![false; self.tracks.len()];
        let mut out = Vec::new();
        for (_, d, t) in pairs {
            if det_used[d] || track_used[t] {
                continue;
            }
            det_used[d] = true;
            track_used[t] = true;
            let track = &mut self.tracks[t];
            track.box_history.push_back((now, detections[d]));
            if track.box_history.len() > 64 {
                track.box_history.pop_front();
            }
            track.last_seen = now;
            out.push((d, track.id));
        }
        for &d in &accepted {
            if !det_used[d] {
                let id = self.next_id;
                self.next_id += 1;
                self.tracks.push(BoxTrack::new(id, now, detections[d]));
                out.push((d, id));
            }
        }
        self.tracks.retain(|t| now - t.last_seen <= params.freq_window + 1e-9);
        out.sort_unstable();
        out
    }

    pub fn get_mut(&mut self, id: TrackId) -> Option<&mut BoxTrack> {
        self.tracks.iter_mut().find(|t| t.id == id)
    }
}

/// Links a detection to the cluster with the most points projecting inside
/// it. Ties go to the cluster whose centroid is closer to the camera.
/// Returns the cluster's index in `clusters`.
pub fn associate_box_to_cluster(
    bbox: &BBox2D,
    clusters: &[Cluster],
    cloud: &[Point3],
    cam: &CameraModel,
    pose: &Pose,
) -> Option<usize> {
    let world_to_cam = pose.inverse();
    let mut best: Option<(usize, usize, f64)> = None;
    for (c, cluster) in clusters.iter().enumerate() {
        let count = cluster
            .points
            .iter()
            .filter(|&&i| {
                cam.project(&world_to_cam.transform_point(&cloud[i]))
                    .is_some_and(|px| bbox.contains(&px))
            })
            .count();
        if count == 0 {
            continue;
        }
        let depth = world_to_cam.transform_point(&cluster.centroid).z;
        let better = match best {
            None => true,
            Some((_, bc, bd)) => count > bc || (count == bc && depth < bd),
        };
        if better {
            best = Some((c, count, depth));
        }
    }
    best.map(|(c, _, _)| c)
}

/// Association frequency `f_a` of a cluster track: association events of the
/// box tracks currently linked to it, over the window length.
pub fn association_frequency(cluster_track: TrackId, box_tracks: &[BoxTrack], now: f64, window: f64) -> f64 {
    let events: usize = box_tracks
        .iter()
        .filter(|b| b.associated_cluster_track == Some(cluster_track))
        .map(|b| {
            b.association_events
                .iter()
                .filter(|t| now - **t <= window + 1e-9)
                .count()
        })
        .sum();
    events as f64 / window
}

/// Records this frame's `(box track, cluster track)` associations and promotes
/// every cluster track whose association frequency reaches the threshold to
/// `person`, regardless of its motion-based class.
pub fn update_person_confidence(
    cluster_tracks: &mut BTreeMap<TrackId, ClusterTrack>,
    box_tracks: &mut [BoxTrack],
    associations: &[(TrackId, TrackId)],
    params: &FusionParams,
    now: f64,
) {
    for &(box_id, cluster_id) in associations {
        if let Some(bt) = box_tracks.iter_mut().find(|b| b.id == box_id) {
            bt.record_association(cluster_id, now);
        }
    }
    for bt in box_tracks.iter_mut() {
        bt.prune(now, params.freq_window);
    }
    for (id, track) in cluster_tracks.iter_mut() {
        let f = association_frequency(*id, box_tracks, now, params.freq_window);
        if f >= params.confidence_freq_threshold {
            track.class_state = ClassState::Person;
        }
    }
}
