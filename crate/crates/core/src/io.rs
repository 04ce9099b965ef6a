//! On-disk dataset format.
//!
//! A dataset directory holds:
//!
//! - `dataset.json`: camera intrinsics, frame rate, frame count, scene name;
//! - `index.jsonl`: one line per frame with `timestamp` (s), `pose`
//!   (`{"t": [x, y, z], "q": [w, x, y, z]}`, camera-to-world, Hamilton),
//!   `cloud_file` (relative path) and `detections` (`[{x, y, w, h, confidence}]`);
//! - `clouds/*.dpc`: point clouds, camera frame;
//! - `ground_truth.jsonl`, `labels/*.dpl`, `static_reference.dpc` when written
//!   by the simulator.
//!
//! Cloud files are little-endian: magic `DPC1`, point count `u32`, then
//! `count` records of `(x, y, z)` as `f32`. Label files use magic `DPL1`, a
//! `u32` count and one `u32` object id per point.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::BBox2D;
use crate::geometry::{CameraModel, Point3, Pose};

pub const CLOUD_MAGIC: &[u8; 4] = b"DPC1";
pub const LABEL_MAGIC: &[u8; 4] = b"DPL1";

pub const DATASET_META_FILE: &str = "dataset.json";
pub const INDEX_FILE: &str = "index.jsonl";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.jsonl";
pub const STATIC_REFERENCE_FILE: &str = "static_reference.dpc";

pub fn encode_cloud(cloud: &[Point3]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + cloud.len() * 12);
    buf.extend_from_slice(CLOUD_MAGIC);
    buf.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    for p in cloud {
        buf.extend_from_slice(&(p.x as f32).to_le_bytes());
        buf.extend_from_slice(&(p.y as f32).to_le_bytes());
        buf.extend_from_slice(&(p.z as f32).to_le_bytes());
    }
    buf
}

pub fn decode_cloud(bytes: &[u8], path: &Path) -> Result<Vec<Point3>> {
    let bad = |detail: String| Error::Format {
        what: "cloud file",
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < 8 || &bytes[0..4] != CLOUD_MAGIC {
        return Err(bad("missing DPC1 header".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != n * 12 {
        return Err(bad(format!(
            "header says {n} points but body holds {} bytes",
            body.len()
        )));
    }
    let f = |o: usize| f32::from_le_bytes(body[o..o + 4].try_into().unwrap()) as f64;
    let mut cloud = Vec::with_capacity(n);
    for i in 0..n {
        let p = Point3::new(f(i * 12), f(i * 12 + 4), f(i * 12 + 8));
        if !p.is_finite() {
            return Err(bad(format!("point {i} is not finite")));
        }
        cloud.push(p);
    }
    Ok(cloud)
}

pub fn write_cloud(path: &Path, cloud: &[Point3]) -> Result<()> {
    fs::write(path, encode_cloud(cloud)).map_err(|e| Error::io(path, e))
}

pub fn read_cloud(path: &Path) -> Result<Vec<Point3>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cloud(&bytes, path)
}

pub fn write_labels(path: &Path, labels: &[u32]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + labels.len() * 4);
    buf.extend_from_slice(LABEL_MAGIC);
    buf.extend_from_slice(&(labels.len() as u32).to_le_bytes());
    for l in labels {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<u32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |detail: &str| Error::Format {
        what: "label file",
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if bytes.len() < 8 || &bytes[0..4] != LABEL_MAGIC {
        return Err(bad("missing DPL1 header"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + 4 * n {
        return Err(bad("length does not match header"));
    }
    Ok(bytes[8..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub t: [f64; 3],
    pub q: [f64; 4],
}

impl PoseRecord {
    pub fn to_pose(&self) -> Result<Pose> {
        Pose::from_parts(self.t, self.q)
    }
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        Self {
            t: p.translation_array(),
            q: p.quaternion_array(),
        }
    }
}

/// One line of `index.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexRecord {
    pub timestamp: f64,
    pub pose: PoseRecord,
    pub cloud_file: String,
    #[serde(default)]
    pub detections: Vec<BBox2D>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub scene: String,
    pub camera: CameraModel,
    pub frame_rate: f64,
    pub frame_count: usize,
}

/// A frame as it comes off the sensor: the raw camera-frame cloud plus pose.
#[derive(Debug, Clone)]
pub struct SensorFrame {
    pub index: usize,
    pub timestamp: f64,
    pub pose: Pose,
    pub cloud: Vec<Point3>,
    pub detections: Vec<BBox2D>,
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::json(path, e))?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Format {
            what: "json lines record",
            path: path.to_path_buf(),
            detail: format!("line {}: {e}", i + 1),
        })?;
        records.push(rec);
    }
    Ok(records)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::json(path, e))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

/// Read access to a dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub meta: DatasetMeta,
    pub index: Vec<IndexRecord>,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let meta: DatasetMeta = read_json(&root.join(DATASET_META_FILE))?;
        meta.camera.validate()?;
        let index: Vec<IndexRecord> = read_jsonl(&root.join(INDEX_FILE))?;
        for (i, pair) in index.windows(2).enumerate() {
            if pair[1].timestamp <= pair[0].timestamp {
                return Err(Error::Format {
                    what: "index",
                    path: root.join(INDEX_FILE),
                    detail: format!("timestamps not strictly increasing at frame {}", i + 1),
                });
            }
        }
        Ok(Self { root, meta, index })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn load_frame(&self, i: usize) -> Result<SensorFrame> {
        let rec = self.index.get(i).ok_or_else(|| Error::MissingFrame {
            index: i,
            detail: "not present in index".into(),
        })?;
        let path = self.root.join(&rec.cloud_file);
        let cloud = read_cloud(&path).map_err(|e| Error::MissingFrame {
            index: i,
            detail: e.to_string(),
        })?;
        Ok(SensorFrame {
            index: i,
            timestamp: rec.timestamp,
            pose: rec.pose.to_pose()?,
            cloud,
            detections: rec.detections.clone(),
        })
    }
}
