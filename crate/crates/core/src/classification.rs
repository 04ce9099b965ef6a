//! Static/dynamic classification by nearest-neighbour voting against the
//! dense cloud of the frame `delta` seconds earlier.
//!
//! Every filtered point of a cluster measures the distance `d` to its nearest
//! neighbour in the earlier dense cloud and votes dynamic iff
//! `d / delta >= velocity_threshold`. Points are excluded from voting when
//! they were outside the earlier field of view or hidden behind a different
//! object at that time. A point hidden behind its own track (an object moving
//! away from the camera) still votes.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{ClassState, ClusterTrack, TrackId, Verdict};
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Pixel, Point3, Pose};
use crate::spatial::GridIndex;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VotingParams {
    /// Time between compared frames, s.
    pub delta: f64,
    /// Speed at or above which a point votes dynamic, m/s.
    pub velocity_threshold: f64,
    /// Dynamic-vote count that makes a frame verdict dynamic.
    pub abs_dynamic_threshold: usize,
    /// Dynamic-vote fraction that makes a frame verdict dynamic.
    pub rel_dynamic_threshold: f64,
    /// Verdicts within this horizon must agree, otherwise the class is uncertain, s.
    pub consistency_horizon: f64,
    /// Points of the earlier dense cloud projected into the depth map.
    pub depthmap_samples: usize,
    /// An earlier sample occludes a point only if closer by more than this, m.
    pub occlusion_margin: f64,
    /// Image-plane search radius for occluding samples, px.
    pub pixel_nn_radius: f64,
    /// A depth-map sample inherits the track of the nearest earlier filtered
    /// point only within this distance; farther samples have no owner, m.
    pub sample_owner_radius: f64,
    /// Seed of the per-frame depth-map sampler.
    pub seed: u64,
}

impl Default for VotingParams {
    fn default() -> Self {
        Self {
            delta: 0.4,
            velocity_threshold: 0.45,
            abs_dynamic_threshold: 100,
            rel_dynamic_threshold: 0.8,
            consistency_horizon: 0.4,
            depthmap_samples: 100_000,
            occlusion_margin: 0.15,
            pixel_nn_radius: 5.0,
            sample_owner_radius: 0.3,
            seed: 0,
        }
    }
}

impl VotingParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.delta > 0.0
            && self.velocity_threshold > 0.0
            && self.rel_dynamic_threshold > 0.0
            && self.rel_dynamic_threshold <= 1.0
            && self.consistency_horizon >= 0.0
            && self.occlusion_margin >= 0.0
            && self.pixel_nn_radius >= 0.0
            && self.sample_owner_radius > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid voting parameters".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteValue {
    Static,
    Dynamic,
    Excluded,
}

/// A point's vote. `nn_distance` is defined iff the point was not excluded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vote {
    pub value: VoteValue,
    pub nn_distance: Option<f64>,
}

impl Vote {
    pub const EXCLUDED: Vote = Vote {
        value: VoteValue::Excluded,
        nn_distance: None,
    };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthSample {
    pub pixel: Pixel,
    /// Camera-frame depth at the earlier frame, m.
    pub depth: f64,
    /// Earlier camera-frame point.
    pub point: Point3,
}

/// Sparse per-pixel depth image of an earlier frame. Each pixel holds the
/// closest projected sample, if any.
#[derive(Debug, Clone)]
pub struct ApproxDepthMap {
    width: usize,
    height: usize,
    cells: Vec<u32>,
    samples: Vec<DepthSample>,
    depth_limit: f64,
    used: usize,
    pose: Pose,
    owner_index: GridIndex,
    owner_tracks: Vec<Option<TrackId>>,
    owner_radius: f64,
    owners: Vec<OnceLock<Option<TrackId>>>,
}

const EMPTY: u32 = u32::MAX;

impl ApproxDepthMap {
    /// Pixel-wise front-most samples.
    pub fn samples(&self) -> &[DepthSample] {
        &self.samples
    }

    /// Number of cloud points projected when building the map.
    pub fn sampled_points(&self) -> usize {
        self.used
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn depth_limit(&self) -> f64 {
        self.depth_limit
    }

    pub fn at(&self, u: usize, v: usize) -> Option<&DepthSample> {
        if u >= self.width || v >= self.height {
            return None;
        }
        match self.cells[v * self.width + u] {
            EMPTY => None,
            i => Some(&self.samples[i as usize]),
        }
    }

    /// Track of the earlier filtered point nearest to sample `i`, if that
    /// point lies within the owner radius. Resolved on first use.
    pub fn track_of(&self, i: usize) -> Option<TrackId> {
        *self.owners[i].get_or_init(|| {
            let world = self.pose.transform_point(&self.samples[i].point);
            self.owner_index
                .nearest(&world)
                .filter(|(_, d)| *d <= self.owner_radius)
                .and_then(|(j, _)| self.owner_tracks.get(j).copied().flatten())
        })
    }

    /// Calls `f` with the index of every stored sample within `radius` px of `px`.
    pub fn for_each_near<F: FnMut(usize, &DepthSample)>(&self, px: &Pixel, radius: f64, mut f: F) {
        let r = radius.ceil() as i64 + 1;
        let (cu, cv) = px.index();
        let r2 = radius * radius;
        for v in (cv - r).max(0)..=(cv + r).min(self.height as i64 - 1) {
            for u in (cu - r).max(0)..=(cu + r).min(self.width as i64 - 1) {
                let i = self.cells[v as usize * self.width + u as usize];
                if i == EMPTY {
                    continue;
                }
                let s = &self.samples[i as usize];
                let du = s.pixel.u - px.u;
                let dv = s.pixel.v - px.v;
                if du * du + dv * dv <= r2 {
                    f(i as usize, s);
                }
            }
        }
    }
}

/// Projects a seeded random subset of `samples` points of the earlier dense
/// cloud (camera frame) into a per-pixel depth map, keeping the closest
/// sample per pixel. Each kept sample is labelled with the track of its
/// nearest earlier filtered point (world frame) if that point lies within
/// `params.sample_owner_radius`.
///
/// `depth_limit` is the crop depth of the earlier cloud: beyond it the
/// earlier frame holds no data, so points there are treated as out of view.
#[allow(clippy::too_many_arguments)]
pub fn build_depth_map(
    dense_camera: &[Point3],
    pose: &Pose,
    filtered_world: &[Point3],
    filtered_tracks: &[Option<TrackId>],
    cam: &CameraModel,
    frame_index: usize,
    depth_limit: f64,
    params: &VotingParams,
) -> ApproxDepthMap {
    let width = cam.width as usize;
    let height = cam.height as usize;
    let mut cells = vec![EMPTY; width * height];

    let n = dense_camera.len();
    let chosen: Vec<usize> = if params.depthmap_samples >= n {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(sampler_seed(params.seed, frame_index));
        let mut v = rand::seq::index::sample(&mut rng, n, params.depthmap_samples).into_vec();
        v.sort_unstable();
        v
    };

    let mut front: Vec<(usize, Pixel)> = Vec::new();
    for &i in &chosen {
        let p = &dense_camera[i];
        let Some(px) = cam.project(p) else { continue };
        let (u, v) = px.index();
        let cell = &mut cells[v as usize * width + u as usize];
        if *cell == EMPTY {
            *cell = front.len() as u32;
            front.push((i, px));
        } else {
            let slot = &mut front[*cell as usize];
            if p.z < dense_camera[slot.0].z {
                *slot = (i, px);
            }
        }
    }

    let samples: Vec<DepthSample> = front
        .iter()
        .map(|&(i, pixel)| {
            let point = dense_camera[i];
            DepthSample {
                pixel,
                depth: point.z,
                point,
            }
        })
        .collect();
    let owners = (0..samples.len()).map(|_| OnceLock::new()).collect();

    ApproxDepthMap {
        width,
        height,
        cells,
        samples,
        depth_limit,
        used: chosen.len(),
        pose: *pose,
        owner_index: GridIndex::new(filtered_world, params.sample_owner_radius / 3.0),
        owner_tracks: filtered_tracks.to_vec(),
        owner_radius: params.sample_owner_radius,
        owners,
    }
}

fn sampler_seed(seed: u64, frame_index: usize) -> u64 {
    seed ^ (frame_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exclusion {
    /// The point votes. `self_occluded` marks points hidden only behind their
    /// own track in the earlier frame.
    Votes {
        self_occluded: bool,
    },
    ExcludedFov,
    ExcludedOcclusion,
}

/// Decides whether `q` (world frame, member of `track_of_q`) may vote.
///
/// `q` is excluded when it projects outside the earlier image or beyond the
/// earlier crop depth, or when any earlier sample within `pixel_nn_radius`
/// that belongs to a different (or no) track lies in front of it by more than
/// `occlusion_margin`.
pub fn check_exclusion(
    q: &Point3,
    track_of_q: TrackId,
    depth_map: &ApproxDepthMap,
    prev_world_to_camera: &Pose,
    cam: &CameraModel,
    params: &VotingParams,
) -> Exclusion {
    let qc = prev_world_to_camera.transform_point(q);
    let Some(px) = cam.project(&qc) else {
        return Exclusion::ExcludedFov;
    };
    if qc.z > depth_map.depth_limit - params.occlusion_margin {
        return Exclusion::ExcludedFov;
    }
    let limit = qc.z - params.occlusion_margin;
    let mut self_occluded = false;
    let mut foreign = false;
    depth_map.for_each_near(&px, params.pixel_nn_radius, |i, s| {
        if s.depth < limit && !foreign {
            if depth_map.track_of(i) == Some(track_of_q) {
                self_occluded = true;
            } else {
                foreign = true;
            }
        }
    });
    if foreign {
        Exclusion::ExcludedOcclusion
    } else {
        Exclusion::Votes { self_occluded }
    }
}

/// Votes by nearest-neighbour distance to the earlier dense cloud (world
/// frame). An empty earlier cloud yields an excluded vote.
pub fn vote_point(q: &Point3, previous_dense_world: &GridIndex, params: &VotingParams) -> Vote {
    match previous_dense_world.nearest(q) {
        None => Vote::EXCLUDED,
        Some((_, d)) => Vote {
            value: if d / params.delta >= params.velocity_threshold {
                VoteValue::Dynamic
            } else {
                VoteValue::Static
            },
            nn_distance: Some(d),
        },
    }
}

/// Counters of one frame's voting, summed over clusters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteCounters {
    pub votes: usize,
    pub dynamic_votes: usize,
    pub excluded_fov: usize,
    pub excluded_occlusion: usize,
    pub self_occluded_votes: usize,
}

impl std::ops::AddAssign for VoteCounters {
    fn add_assign(&mut self, o: Self) {
        self.votes += o.votes;
        self.dynamic_votes += o.dynamic_votes;
        self.excluded_fov += o.excluded_fov;
        self.excluded_occlusion += o.excluded_occlusion;
        self.self_occluded_votes += o.self_occluded_votes;
    }
}

/// Read-only state of the earlier frame shared by all voting points.
pub struct VotingContext<'a> {
    pub depth_map: &'a ApproxDepthMap,
    pub dense_world: &'a GridIndex,
    pub world_to_camera: Pose,
    pub camera: &'a CameraModel,
}

/// Runs exclusion and voting for every point of one cluster.
pub fn cast_votes(
    points: &[Point3],
    track: TrackId,
    ctx: &VotingContext<'_>,
    params: &VotingParams,
) -> (Vec<Vote>, Vec<Exclusion>, VoteCounters) {
    let per_point: Vec<(Vote, Exclusion)> = points
        .par_iter()
        .map(|q| {
            let ex = check_exclusion(q, track, ctx.depth_map, &ctx.world_to_camera, ctx.camera, params);
            match ex {
                Exclusion::Votes { .. } => (vote_point(q, ctx.dense_world, params), ex),
                _ => (Vote::EXCLUDED, ex),
            }
        })
        .collect();
    let mut c = VoteCounters::default();
    for (v, ex) in &per_point {
        match ex {
            Exclusion::ExcludedFov => c.excluded_fov += 1,
            Exclusion::ExcludedOcclusion => c.excluded_occlusion += 1,
            Exclusion::Votes { self_occluded } => {
                if v.value != VoteValue::Excluded {
                    c.votes += 1;
                    c.dynamic_votes += (v.value == VoteValue::Dynamic) as usize;
                    c.self_occluded_votes += *self_occluded as usize;
                }
            }
        }
    }
    let (votes, exclusions) = per_point.into_iter().unzip();
    (votes, exclusions, c)
}

/// Frame verdict from a cluster's votes; `None` when no point voted.
pub fn frame_verdict(votes: &[Vote], params: &VotingParams) -> Option<Verdict> {
    let voting = votes.iter().filter(|v| v.value != VoteValue::Excluded).count();
    if voting == 0 {
        return None;
    }
    let dynamic = votes.iter().filter(|v| v.value == VoteValue::Dynamic).count();
    let is_dynamic =
        dynamic >= params.abs_dynamic_threshold || dynamic as f64 / voting as f64 >= params.rel_dynamic_threshold;
    Some(if is_dynamic { Verdict::Dynamic } else { Verdict::Static })
}

/// Appends this frame's verdict to the track's history and updates its class.
///
/// Verdicts older than the consistency horizon are dropped; disagreeing
/// verdicts within it make the class uncertain. A frame without voting points
/// leaves history and class unchanged. `person` is never overridden.
pub fn classify_cluster(votes: &[Vote], track: &mut ClusterTrack, now: f64, params: &VotingParams) -> ClassState {
    let Some(verdict) = frame_verdict(votes, params) else {
        return track.class_state;
    };
    track.vote_history.push_back((now, verdict));
    while track
        .vote_history
        .front()
        .is_some_and(|(t, _)| now - t > params.consistency_horizon + 1e-9)
    {
        track.vote_history.pop_front();
    }
    if track.class_state == ClassState::Person {
        return ClassState::Person;
    }
    let consistent = track.vote_history.iter().all(|(_, v)| *v == verdict);
    track.class_state = match (consistent, verdict) {
        (false, _) => ClassState::Uncertain,
        (true, Verdict::Dynamic) => ClassState::Dynamic,
        (true, Verdict::Static) => ClassState::Static,
    };
    track.class_state
}
