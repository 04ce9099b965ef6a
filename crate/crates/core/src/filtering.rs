//! Point cloud filtering: crop, voxel down-sampling, radius outlier removal.
//!
//! The order is fixed: crop by depth and height, then voxelize, then drop
//! points with too few neighbours. The first step yields the dense cloud used
//! as the voting reference, the last one the filtered cloud used for
//! clustering.

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{transform_cloud, Point3, Pose};
use crate::spatial::GridIndex;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    /// Maximum trusted camera depth, m.
    pub depth_limit: f64,
    /// Points below this world height are treated as ground, m.
    pub ground_height: f64,
    /// Points above this world height are treated as ceiling, m.
    pub ceiling_height: f64,
    /// Voxel leaf size, m.
    pub voxel_leaf: f64,
    /// Minimum neighbour count for a point to survive outlier removal.
    pub min_neighbors: usize,
    /// Neighbour search radius for outlier removal, m.
    pub neighbor_radius: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            depth_limit: 5.0,
            ground_height: 0.15,
            ceiling_height: 1.8,
            voxel_leaf: 0.05,
            min_neighbors: 30,
            neighbor_radius: 0.5,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.depth_limit,
            self.ground_height,
            self.ceiling_height,
            self.voxel_leaf,
            self.neighbor_radius,
        ]
        .iter()
        .all(|v| *v > 0.0 && v.is_finite());
        if !positive || self.min_neighbors == 0 {
            return Err(Error::Config("filter parameters must be strictly positive".into()));
        }
        if self.ground_height >= self.ceiling_height {
            return Err(Error::Config(
                "filter.ground_height must be below filter.ceiling_height".into(),
            ));
        }
        Ok(())
    }
}

/// Removes points deeper than the depth limit (camera frame) and points outside
/// the `[ground_height, ceiling_height]` band (world frame). Survivors keep
/// their input order and stay in the camera frame.
pub fn crop_cloud(cloud: &[Point3], params: &FilterParams, pose: &Pose) -> Vec<Point3> {
    cloud
        .iter()
        .filter(|p| {
            if p.z > params.depth_limit {
                return false;
            }
            let h = pose.transform_point(p).z;
            h >= params.ground_height && h <= params.ceiling_height
        })
        .copied()
        .collect()
}

#[inline]
pub fn voxel_key(p: &Point3, leaf: f64) -> (i64, i64, i64) {
    (
        (p.x / leaf).floor() as i64,
        (p.y / leaf).floor() as i64,
        (p.z / leaf).floor() as i64,
    )
}

/// Replaces the points of each occupied voxel by their centroid. Output is
/// sorted by voxel index.
pub fn voxel_downsample(cloud: &[Point3], leaf: f64) -> Vec<Point3> {
    assert!(leaf > 0.0, "voxel leaf must be positive");
    let mut voxels: FxHashMap<(i64, i64, i64), (Point3, u32)> = FxHashMap::default();
    for p in cloud {
        let e = voxels.entry(voxel_key(p, leaf)).or_insert((Point3::ORIGIN, 0));
        e.0 = e.0 + *p;
        e.1 += 1;
    }
    let mut cells: Vec<_> = voxels.into_iter().collect();
    cells.sort_unstable_by_key(|(k, _)| *k);
    cells.into_iter().map(|(_, (sum, n))| sum / n as f64).collect()
}

/// Keeps a point iff at least `min_neighbors` other points lie within `radius`
/// of it. The query point itself is not counted.
pub fn radius_outlier_removal(cloud: &[Point3], min_neighbors: usize, radius: f64) -> Vec<Point3> {
    let keep = radius_outlier_mask(cloud, min_neighbors, radius);
    cloud.iter().zip(keep).filter_map(|(p, k)| k.then_some(*p)).collect()
}

pub fn radius_outlier_mask(cloud: &[Point3], min_neighbors: usize, radius: f64) -> Vec<bool> {
    if cloud.is_empty() {
        return Vec::new();
    }
    let index = GridIndex::new(cloud, radius);
    // count_within includes the point itself
    let needed = min_neighbors + 1;
    cloud
        .par_iter()
        .map(|p| index.count_within(p, radius, needed) >= needed)
        .collect()
}

/// Output of the full filter chain for one frame.
#[derive(Debug, Clone, Default)]
pub struct FilteredClouds {
    /// Cropped cloud, camera frame.
    pub dense_camera: Vec<Point3>,
    /// Cropped cloud, world frame.
    pub dense_world: Vec<Point3>,
    /// Voxelized, outlier-free cloud, world frame.
    pub filtered: Vec<Point3>,
}

pub fn filter_cloud(raw_camera: &[Point3], pose: &Pose, params: &FilterParams) -> FilteredClouds {
    let dense_camera = crop_cloud(raw_camera, params, pose);
    let dense_world = transform_cloud(&dense_camera, pose);
    let voxels = voxel_downsample(&dense_world, params.voxel_leaf);
    let filtered = radius_outlier_removal(&voxels, params.min_neighbors, params.neighbor_radius);
    FilteredClouds {
        dense_camera,
        dense_world,
        filtered,
    }
}
