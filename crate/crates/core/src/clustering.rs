//! Density clustering of the filtered cloud, detector-box refinement and
//! frame-to-frame centroid association into cluster tracks.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{associate_box_to_cluster, BBox2D};
use crate::geometry::{CameraModel, Point3, Pose};
use crate::spatial::GridIndex;

pub type TrackId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringParams {
    /// DBSCAN neighbourhood radius, m.
    pub eps: f64,
    /// DBSCAN core-point threshold; the neighbourhood count includes the point itself.
    pub min_pts: usize,
    /// Largest centroid displacement accepted between consecutive frames, m.
    pub max_association_distance: f64,
    /// How long an unmatched track is kept for re-association, s.
    pub track_timeout: f64,
    /// A cluster with a single detection box is split when its in-box point
    /// fraction falls below this value.
    pub box_containment_threshold: f64,
}

impl Default for ClusteringParams {
    fn default() -> Self {
        Self {
            eps: 0.15,
            min_pts: 8,
            max_association_distance: 0.8,
            track_timeout: 2.0,
            box_containment_threshold: 0.6,
        }
    }
}

impl ClusteringParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.eps > 0.0
            && self.min_pts >= 1
            && self.max_association_distance > 0.0
            && self.track_timeout > 0.0
            && self.box_containment_threshold > 0.0
            && self.box_containment_threshold <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid clustering parameters".into()))
        }
    }
}

/// A group of points of one frame's filtered cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: usize,
    /// Indices into the frame's filtered cloud.
    pub points: Vec<usize>,
    /// Mean of the member points, world frame.
    pub centroid: Point3,
    pub bbox_link: Option<TrackId>,
}

impl Cluster {
    pub fn from_points(id: usize, points: Vec<usize>, cloud: &[Point3]) -> Self {
        let centroid = Point3::centroid(points.iter().map(|&i| &cloud[i])).unwrap_or_default();
        Self {
            id,
            points,
            centroid,
            bbox_link: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassState {
    Unknown,
    Static,
    Dynamic,
    Uncertain,
    Person,
}

impl ClassState {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClassState::Unknown => "unknown",
            ClassState::Static => "static",
            ClassState::Dynamic => "dynamic",
            ClassState::Uncertain => "uncertain",
            ClassState::Person => "person",
        }
    }

    /// Classes reported as moving objects.
    pub fn is_dynamic_like(&self) -> bool {
        matches!(self, ClassState::Dynamic | ClassState::Person)
    }
}

/// Per-frame outcome of cluster-level voting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Static,
    Dynamic,
}

const MAX_HISTORY: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTrack {
    pub id: TrackId,
    pub centroid_history: VecDeque<(f64, Point3)>,
    pub class_state: ClassState,
    pub last_seen: f64,
    pub vote_history: VecDeque<(f64, Verdict)>,
}

impl ClusterTrack {
    pub fn new(id: TrackId, timestamp: f64, centroid: Point3) -> Self {
        let mut centroid_history = VecDeque::new();
        centroid_history.push_back((timestamp, centroid));
        Self {
            id,
            centroid_history,
            class_state: ClassState::Unknown,
            last_seen: timestamp,
            vote_history: VecDeque::new(),
        }
    }

    pub fn tail(&self) -> Point3 {
        self.centroid_history.back().map(|(_, c)| *c).unwrap_or_default()
    }

    /// Appends a centroid. Timestamps that do not advance are ignored.
    pub fn extend(&mut self, timestamp: f64, centroid: Point3) {
        if self.centroid_history.back().is_some_and(|(t, _)| *t >= timestamp) {
            return;
        }
        self.centroid_history.push_back((timestamp, centroid));
        if self.centroid_history.len() > MAX_HISTORY {
            self.centroid_history.pop_front();
        }
        self.last_seen = timestamp;
    }
}

/// Core flags and cluster labels produced by [`dbscan_labels`].
#[derive(Debug, Clone, PartialEq)]
pub struct DbscanLabels {
    pub core: Vec<bool>,
    pub cluster: Vec<Option<usize>>,
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins so labels do not depend on visiting order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// DBSCAN labelling. A point is core when at least `min_pts` points, itself
/// included, lie within `eps`. Clusters are the connected components of core
/// points plus their border points; a border point reachable from several
/// clusters joins the lowest cluster id. Cluster ids are ordered by the
/// lowest point index they contain, so the result does not depend on seed order.
pub fn dbscan_labels(cloud: &[Point3], eps: f64, min_pts: usize) -> DbscanLabels {
    use rayon::prelude::*;

    let n = cloud.len();
    if n == 0 {
        return DbscanLabels {
            core: Vec::new(),
            cluster: Vec::new(),
        };
    }
    let index = GridIndex::new(cloud, eps);
    let core: Vec<bool> = cloud
        .par_iter()
        .map(|p| index.count_within(p, eps, min_pts) >= min_pts)
        .collect();

    let mut sets = DisjointSet::new(n);
    let mut neighbors = Vec::new();
    for i in 0..n {
        if !core[i] {
            continue;
        }
        neighbors.clear();
        index.within(&cloud[i], eps, &mut neighbors);
        for &j in &neighbors {
            if j > i && core[j] {
                sets.union(i, j);
            }
        }
    }

    // number components in order of their smallest member (the root, by construction)
    let mut root_label = vec![usize::MAX; n];
    let mut next = 0;
    let mut cluster = vec![None; n];
    for i in 0..n {
        if core[i] {
            let r = sets.find(i);
            if root_label[r] == usize::MAX {
                root_label[r] = next;
                next += 1;
            }
            cluster[i] = Some(root_label[r]);
        }
    }
    for i in 0..n {
        if core[i] {
            continue;
        }
        neighbors.clear();
        index.within(&cloud[i], eps, &mut neighbors);
        cluster[i] = neighbors.iter().filter(|&&j| core[j]).filter_map(|&j| cluster[j]).min();
    }
    DbscanLabels { core, cluster }
}

/// Clusters `cloud` with DBSCAN. Clusters left with fewer than `min_pts`
/// points after border assignment are dropped.
pub fn dbscan(cloud: &[Point3], eps: f64, min_pts: usize) -> Vec<Cluster> {
    let labels = dbscan_labels(cloud, eps, min_pts);
    let count = labels.cluster.iter().flatten().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); count];
    for (i, l) in labels.cluster.iter().enumerate() {
        if let Some(l) = l {
            members[*l].push(i);
        }
    }
    members
        .into_iter()
        .filter(|m| m.len() >= min_pts)
        .enumerate()
        .map(|(id, pts)| Cluster::from_points(id, pts, cloud))
        .collect()
}

/// Splits clusters using detector boxes.
///
/// A cluster associated with two or more boxes is split by box membership;
/// points inside none or several of its boxes go to the fragment with the
/// closest centroid. A cluster associated with exactly one box whose in-box
/// fraction is below `box_containment_threshold` is split into in-box and
/// out-of-box parts. Fragments smaller than `min_pts` are discarded.
pub fn refine_with_boxes(
    clusters: &[Cluster],
    cloud: &[Point3],
    detections: &[BBox2D],
    cam: &CameraModel,
    pose: &Pose,
    params: &ClusteringParams,
) -> Vec<Cluster> {
    if detections.is_empty() || clusters.is_empty() {
        return clusters.to_vec();
    }
    let world_to_cam = pose.inverse();
    let pixels: Vec<Option<crate::geometry::Pixel>> = cloud
        .iter()
        .map(|p| cam.project(&world_to_cam.transform_point(p)))
        .collect();

    let mut boxes_of: Vec<Vec<usize>> = vec![Vec::new(); clusters.len()];
    for (b, bbox) in detections.iter().enumerate() {
        if let Some(c) = associate_box_to_cluster(bbox, clusters, cloud, cam, pose) {
            boxes_of[c].push(b);
        }
    }

    let inside = |pt: usize, b: usize| pixels[pt].is_some_and(|px| detections[b].contains(&px));
    let mut fragments: Vec<Vec<usize>> = Vec::new();
    for (c, cluster) in clusters.iter().enumerate() {
        let boxes = &boxes_of[c];
        match boxes.len() {
            0 => fragments.push(cluster.points.clone()),
            1 => {
                let (inb, outb): (Vec<usize>, Vec<usize>) =
                    cluster.points.iter().partition(|&&pt| inside(pt, boxes[0]));
                let fraction = inb.len() as f64 / cluster.len() as f64;
                if fraction < params.box_containment_threshold {
                    fragments.push(inb);
                    fragments.push(outb);
                } else {
                    fragments.push(cluster.points.clone());
                }
            }
            _ => {
                let mut parts: Vec<Vec<usize>> = vec![Vec::new(); boxes.len()];
                let mut undecided = Vec::new();
                for &pt in &cluster.points {
                    let mut hit = boxes.iter().enumerate().filter(|(_, &b)| inside(pt, b));
                    match (hit.next(), hit.next()) {
                        (Some((k, _)), None) => parts[k].push(pt),
                        _ => undecided.push(pt),
                    }
                }
                let centroids: Vec<Option<Point3>> = parts
                    .iter()
                    .map(|p| Point3::centroid(p.iter().map(|&i| &cloud[i])))
                    .collect();
                for pt in undecided {
                    let best = centroids
                        .iter()
                        .enumerate()
                        .filter_map(|(k, c)| c.map(|c| (k, c.distance_squared(&cloud[pt]))))
                        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                    if let Some((k, _)) = best {
                        parts[k].push(pt);
                    }
                }
                if parts.iter().filter(|p| !p.is_empty()).count() < 2 {
                    // no box owns points exclusively: nothing to split along
                    fragments.push(cluster.points.clone());
                } else {
                    fragments.extend(parts);
                }
            }
        }
    }
    fragments
        .into_iter()
        .filter(|f| f.len() >= params.min_pts)
        .enumerate()
        .map(|(id, mut pts)| {
            pts.sort_unstable();
            Cluster::from_points(id, pts, cloud)
        })
        .collect()
}

/// Result of [`associate_centroids`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Association {
    /// `(cluster index, track id)` pairs.
    pub matches: Vec<(usize, TrackId)>,
    /// Clusters that extend no track ("newly appeared objects").
    pub new_clusters: Vec<usize>,
    /// Tracks that received no cluster ("lost objects").
    pub lost_tracks: Vec<TrackId>,
}

/// Greedy global-closest matching of cluster centroids to track tails.
///
/// The closest remaining `(cluster, track)` pair within `max_dist` is matched
/// and both are removed, until no admissible pair is left.
pub fn associate_centroids(current: &[Cluster], previous_tracks: &[&ClusterTrack], max_dist: f64) -> Association {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (c, cluster) in current.iter().enumerate() {
        for (t, track) in previous_tracks.iter().enumerate() {
            let d = cluster.centroid.distance(&track.tail());
            if d <= max_dist {
                pairs.push((d, c, t));
            }
        }
    }
    pairs.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(previous_tracks[a.2].id.cmp(&previous_tracks[b.2].id))
    });
    let mut cluster_used = vec![false; current.len()];
    let mut track_used = vec![false; previous_tracks.len()];
    let mut matches = Vec::new();
    for (_, c, t) in pairs {
        if !cluster_used[c] && !track_used[t] {
            cluster_used[c] = true;
            track_used[t] = true;
            matches.push((c, previous_tracks[t].id));
        }
    }
    matches.sort_unstable();
    Association {
        matches,
        new_clusters: (0..current.len()).filter(|&c| !cluster_used[c]).collect(),
        lost_tracks: previous_tracks
            .iter()
            .zip(&track_used)
            .filter(|(_, used)| !**used)
            .map(|(t, _)| t.id)
            .collect(),
    }
}
