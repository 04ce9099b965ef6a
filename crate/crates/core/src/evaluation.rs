//! CLEAR-MOT tracking metrics, static-classification precision and
//! nearest-neighbour cloud accuracy/completeness histograms.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::pipeline::TrackRecord;
use crate::simulator::GroundTruthFrame;
use crate::spatial::GridIndex;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotParams {
    /// Largest distance of a valid ground-truth/hypothesis match, m.
    pub match_threshold: f64,
    /// Ground-truth objects covering fewer pixels are not expected to be tracked.
    pub min_visible_pixels: usize,
}

impl Default for MotParams {
    fn default() -> Self {
        Self {
            match_threshold: 0.4,
            min_visible_pixels: 150,
        }
    }
}

impl MotParams {
    pub fn validate(&self) -> Result<()> {
        if self.match_threshold > 0.0 {
            Ok(())
        } else {
            Err(Error::Config("mot.match_threshold must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub id: u64,
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(id: u64, x: f64, y: f64) -> Self {
        Self { id, x, y }
    }

    fn distance(&self, o: &Position) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }
}

/// Ground truth and hypotheses of one frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MotFrame {
    pub frame: usize,
    pub timestamp: f64,
    pub gt: Vec<Position>,
    pub hyp: Vec<Position>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameMatches {
    pub frame: usize,
    /// `(gt id, hypothesis id, distance)`.
    pub matches: Vec<(u64, u64, f64)>,
    pub misses: Vec<u64>,
    pub false_positives: Vec<u64>,
    /// Ground-truth ids whose hypothesis changed.
    pub mismatches: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MotReport {
    /// Mean distance of matched pairs; `None` without matches.
    pub motp: Option<f64>,
    /// `1 - (misses + false positives + mismatches) / ground truth`; `None`
    /// without ground truth.
    pub mota: Option<f64>,
    pub fn_rate: Option<f64>,
    pub fp_rate: Option<f64>,
    pub mismatch_rate: Option<f64>,
    pub gt_count: usize,
    pub matches: usize,
    pub misses: usize,
    pub false_positives: usize,
    pub mismatches: usize,
    pub total_distance: f64,
    pub frames: Vec<FrameMatches>,
}

/// CLEAR-MOT over a frame sequence.
///
/// Per frame, correspondences of the previous frame that are still within
/// the threshold are kept; the remaining pairs are matched greedily by
/// increasing distance. A mismatch is counted when a ground-truth object is
/// matched to a hypothesis different from the last one it was matched to.
pub fn clear_mot(frames: &[MotFrame], params: &MotParams) -> MotReport {
    let limit = params.match_threshold;
    let mut previous: BTreeMap<u64, u64> = BTreeMap::new();
    let mut last_known: BTreeMap<u64, u64> = BTreeMap::new();
    let mut report = MotReport::default();

    for f in frames {
        let mut gt_used = vec![false; f.gt.len()];
        let mut hyp_used = vec![false; f.hyp.len()];
        let mut out = FrameMatches {
            frame: f.frame,
            ..Default::default()
        };
        let mut current = BTreeMap::new();

        for (g, gt) in f.gt.iter().enumerate() {
            let Some(&h_id) = previous.get(&gt.id) else { continue };
            if let Some(h) = f
                .hyp
                .iter()
                .position(|h| h.id == h_id && !hyp_used[f.hyp.iter().position(|x| x.id == h_id).unwrap()])
            {
                let d = gt.distance(&f.hyp[h]);
                if d <= limit {
                    gt_used[g] = true;
                    hyp_used[h] = true;
                    out.matches.push((gt.id, h_id, d));
                    current.insert(gt.id, h_id);
                }
            }
        }

        let mut pairs = Vec::new();
        for (g, gt) in f.gt.iter().enumerate() {
            if gt_used[g] {
                continue;
            }
            for (h, hyp) in f.hyp.iter().enumerate() {
                if hyp_used[h] {
                    continue;
                }
                let d = gt.distance(hyp);
                if d <= limit {
                    pairs.push((d, g, h));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        for (d, g, h) in pairs {
            if gt_used[g] || hyp_used[h] {
                continue;
            }
            gt_used[g] = true;
            hyp_used[h] = true;
            let (gid, hid) = (f.gt[g].id, f.hyp[h].id);
            if last_known.get(&gid).is_some_and(|prev| *prev != hid) {
                out.mismatches.push(gid);
            }
            out.matches.push((gid, hid, d));
            current.insert(gid, hid);
        }

        for (gid, hid) in &current {
            last_known.insert(*gid, *hid);
        }
        out.misses =
            f.gt.iter()
                .zip(&gt_used)
                .filter(|(_, u)| !**u)
                .map(|(g, _)| g.id)
                .collect();
        out.false_positives = f
            .hyp
            .iter()
            .zip(&hyp_used)
            .filter(|(_, u)| !**u)
            .map(|(h, _)| h.id)
            .collect();
        out.matches.sort_by_key(|m| m.0);

        report.gt_count += f.gt.len();
        report.matches += out.matches.len();
        report.misses += out.misses.len();
        report.false_positives += out.false_positives.len();
        report.mismatches += out.mismatches.len();
        report.total_distance += out.matches.iter().map(|m| m.2).sum::<f64>();
        previous = current;
        report.frames.push(out);
    }

    if report.matches > 0 {
        report.motp = Some(report.total_distance / report.matches as f64);
    }
    if report.gt_count > 0 {
        let g = report.gt_count as f64;
        report.fn_rate = Some(report.misses as f64 / g);
        report.fp_rate = Some(report.false_positives as f64 / g);
        report.mismatch_rate = Some(report.mismatches as f64 / g);
        report.mota = Some(1.0 - (report.misses + report.false_positives + report.mismatches) as f64 / g);
    }
    report
}

/// Lines up simulator ground truth and pipeline tracks frame by frame.
///
/// Ground truth holds every actor with at least `min_visible_pixels` visible
/// pixels, positioned at its visible-surface centroid. Hypotheses are the
/// tracks of class dynamic or person. Track records must refer to frames
/// present in the ground truth with equal timestamps.
pub fn build_mot_frames(
    truth: &[GroundTruthFrame],
    tracks: &[TrackRecord],
    params: &MotParams,
) -> Result<Vec<MotFrame>> {
    let mut frames: Vec<MotFrame> = truth
        .iter()
        .map(|g| MotFrame {
            frame: g.frame,
            timestamp: g.timestamp,
            gt: g
                .actors
                .iter()
                .filter(|a| a.visible_pixels >= params.min_visible_pixels)
                .filter_map(|a| a.centroid.map(|c| Position::new(a.id as u64, c[0], c[1])))
                .collect(),
            hyp: Vec::new(),
        })
        .collect();
    let by_frame: BTreeMap<usize, usize> = frames.iter().enumerate().map(|(i, f)| (f.frame, i)).collect();
    for t in tracks {
        let Some(&i) = by_frame.get(&t.frame) else {
            return Err(Error::Timeline(format!(
                "track record for frame {} has no ground truth",
                t.frame
            )));
        };
        if (frames[i].timestamp - t.timestamp).abs() > 1e-6 {
            return Err(Error::Timeline(format!(
                "frame {}: track timestamp {} differs from ground truth {}",
                t.frame, t.timestamp, frames[i].timestamp
            )));
        }
        if t.class.is_dynamic_like() {
            frames[i]
                .hyp
                .push(Position::new(t.track_id, t.centroid[0], t.centroid[1]));
        }
    }
    Ok(frames)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticPrecisionParams {
    /// Accuracy limit of the camera cloud, m.
    pub accuracy_limit: f64,
    /// Static points closer than this to the reference count as correct, m.
    pub error_threshold: f64,
}

impl Default for StaticPrecisionParams {
    fn default() -> Self {
        Self {
            accuracy_limit: 0.8,
            error_threshold: 0.4,
        }
    }
}

impl StaticPrecisionParams {
    pub fn validate(&self) -> Result<()> {
        if self.error_threshold > 0.0 && self.error_threshold <= self.accuracy_limit {
            Ok(())
        } else {
            Err(Error::Config(
                "static precision needs 0 < error_threshold <= accuracy_limit".into(),
            ))
        }
    }
}

fn nn_distances(from: &[Point3], to: &[Point3]) -> Vec<f64> {
    let index = GridIndex::new(to, 0.1);
    from.par_iter()
        .map(|p| index.nearest(p).map(|(_, d)| d).unwrap_or(f64::INFINITY))
        .collect()
}

/// Fraction of `static_cloud` points closer than `error_threshold` to
/// `reference`. `None` if either cloud is empty.
pub fn static_precision(static_cloud: &[Point3], reference: &[Point3], error_threshold: f64) -> Option<f64> {
    if static_cloud.is_empty() || reference.is_empty() {
        return None;
    }
    let d = nn_distances(static_cloud, reference);
    Some(d.iter().filter(|d| **d < error_threshold).count() as f64 / d.len() as f64)
}

/// Normalized histogram of nearest-neighbour distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// Fraction of samples per bin; bin `k` covers `[k w, (k + 1) w)`.
    pub fractions: Vec<f64>,
    pub count: usize,
    pub mean: f64,
    pub max: f64,
}

impl Histogram {
    pub fn from_samples(samples: &[f64], bin_width: f64) -> Self {
        let max = samples.iter().copied().fold(0.0, f64::max);
        let bins = ((max / bin_width).floor() as usize) + 1;
        let mut counts = vec![0usize; bins];
        for s in samples {
            counts[((s / bin_width).floor() as usize).min(bins - 1)] += 1;
        }
        let n = samples.len().max(1) as f64;
        Self {
            bin_width,
            fractions: counts.iter().map(|c| *c as f64 / n).collect(),
            count: samples.len(),
            mean: samples.iter().sum::<f64>() / n,
            max,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("bin_start,bin_end,fraction\n");
        for (k, f) in self.fractions.iter().enumerate() {
            let lo = k as f64 * self.bin_width;
            s.push_str(&format!("{lo:.4},{:.4},{f}\n", lo + self.bin_width));
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudComparison {
    /// Distances measured from the camera cloud to the reference.
    pub accuracy: Histogram,
    /// Distances measured from the reference to the camera cloud.
    pub completeness: Histogram,
}

impl CloudComparison {
    /// True if every camera point lies within `limit` of the reference.
    pub fn within_accuracy_limit(&self, limit: f64) -> bool {
        self.accuracy.max < limit
    }
}

pub const HISTOGRAM_BIN: f64 = 0.02;

/// Accuracy and completeness histograms with 0.02 m bins. `None` if either
/// cloud is empty.
pub fn cloud_accuracy_completeness(camera: &[Point3], reference: &[Point3]) -> Option<CloudComparison> {
    if camera.is_empty() || reference.is_empty() {
        return None;
    }
    Some(CloudComparison {
        accuracy: Histogram::from_samples(&nn_distances(camera, reference), HISTOGRAM_BIN),
        completeness: Histogram::from_samples(&nn_distances(reference, camera), HISTOGRAM_BIN),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(k: usize, gt: &[(u64, f64)], hyp: &[(u64, f64)]) -> MotFrame {
        MotFrame {
            frame: k,
            timestamp: k as f64 * 0.1,
            gt: gt.iter().map(|(id, x)| Position::new(*id, *x, 0.0)).collect(),
            hyp: hyp.iter().map(|(id, x)| Position::new(*id, *x, 0.0)).collect(),
        }
    }

    fn check_identity(r: &MotReport) {
        let g = r.gt_count as f64;
        let expected = 1.0 - (r.misses + r.false_positives + r.mismatches) as f64 / g;
        assert!((r.mota.unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn perfect_tracking() {
        let frames: Vec<MotFrame> = (0..5).map(|k| frame(k, &[(1, k as f64)], &[(7, k as f64)])).collect();
        let r = clear_mot(&frames, &MotParams::default());
        assert_eq!(r.mota, Some(1.0));
        assert_eq!(r.motp, Some(0.0));
    }

    #[test]
    fn miss_scenario() {
        // 5 frames, one object, hypothesis absent in frame 2
        let frames: Vec<MotFrame> = (0..5)
            .map(|k| {
                let hyp: &[(u64, f64)] = if k == 2 { &[] } else { &[(7, k as f64 + 0.1)] };
                frame(k, &[(1, k as f64)], hyp)
            })
            .collect();
        let r = clear_mot(&frames, &MotParams::default());
        assert_eq!(
            (r.gt_count, r.matches, r.misses, r.false_positives, r.mismatches),
            (5, 4, 1, 0, 0)
        );
        assert!((r.mota.unwrap() - 0.8).abs() < 1e-12);
        assert!((r.motp.unwrap() - 0.1).abs() < 1e-12);
        check_identity(&r);
    }

    #[test]
    fn ghost_scenario() {
        // a ghost hypothesis far from the object in frames 1 and 3
        let frames: Vec<MotFrame> = (0..5)
            .map(|k| {
                let mut hyp = vec![(7, k as f64)];
                if k == 1 || k == 3 {
                    hyp.push((9, k as f64 + 5.0));
                }
                frame(k, &[(1, k as f64)], &hyp)
            })
            .collect();
        let r = clear_mot(&frames, &MotParams::default());
        assert_eq!(
            (r.gt_count, r.matches, r.misses, r.false_positives, r.mismatches),
            (5, 5, 0, 2, 0)
        );
        assert!((r.mota.unwrap() - 0.6).abs() < 1e-12);
        check_identity(&r);
    }

    #[test]
    fn id_switch_scenario() {
        // hypothesis id changes from 7 to 8 at frame 3; the switch costs one mismatch
        let frames: Vec<MotFrame> = (0..5)
            .map(|k| {
                let id = if k < 3 { 7 } else { 8 };
                frame(k, &[(1, k as f64)], &[(id, k as f64)])
            })
            .collect();
        let r = clear_mot(&frames, &MotParams::default());
        assert_eq!(
            (r.gt_count, r.matches, r.misses, r.false_positives, r.mismatches),
            (5, 5, 0, 0, 1)
        );
        assert_eq!(r.frames[3].mismatches, vec![1]);
        assert!((r.mota.unwrap() - 0.8).abs() < 1e-12);
        check_identity(&r);
    }

    #[test]
    fn ten_positions_one_miss_one_mismatch() {
        let mut frames = Vec::new();
        for k in 0..10 {
            let hyp: Vec<(u64, f64)> = match k {
                4 => vec![],
                0..=3 => vec![(7, k as f64)],
                _ => vec![(8, k as f64)],
            };
            frames.push(frame(k, &[(1, k as f64)], &hyp));
        }
        let r = clear_mot(&frames, &MotParams::default());
        assert_eq!((r.misses, r.mismatches, r.false_positives), (1, 1, 0));
        assert!((r.mota.unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn carried_match_beats_closer_newcomer() {
        // gt 1 stays with hypothesis 7 even though 8 is closer, while 7 is within threshold
        let frames = vec![
            frame(0, &[(1, 0.0)], &[(7, 0.0)]),
            frame(1, &[(1, 1.0)], &[(7, 1.3), (8, 1.05)]),
        ];
        let r = clear_mot(&frames, &MotParams::default());
        assert_eq!(r.frames[1].matches[0].1, 7);
        assert_eq!(r.mismatches, 0);
        assert_eq!(r.false_positives, 1);
    }

    #[test]
    fn rates_decompose_mota() {
        // fn 8.3 %, fp 3.0 %, mm 3.3 % of 1000 positions
        let r = MotReport {
            gt_count: 1000,
            misses: 83,
            false_positives: 30,
            mismatches: 33,
            ..Default::default()
        };
        let mota = 1.0 - (r.misses + r.false_positives + r.mismatches) as f64 / r.gt_count as f64;
        assert!((mota - 0.854).abs() < 1e-12);
    }

    #[test]
    fn empty_truth_has_no_mota() {
        let r = clear_mot(&[frame(0, &[], &[(7, 0.0)])], &MotParams::default());
        assert_eq!(r.mota, None);
        assert_eq!(r.false_positives, 1);
    }

    #[test]
    fn motp_bounded_by_threshold() {
        let frames: Vec<MotFrame> = (0..20)
            .map(|k| frame(k, &[(1, 0.0), (2, 10.0)], &[(7, (k as f64 * 0.037) % 0.6), (8, 10.39)]))
            .collect();
        let p = MotParams::default();
        let r = clear_mot(&frames, &p);
        assert!(r.motp.unwrap() <= p.match_threshold);
    }

    #[test]
    fn time_reversal_keeps_fn_fp() {
        let frames: Vec<MotFrame> = (0..6)
            .map(|k| {
                let hyp: Vec<(u64, f64)> = if k % 3 == 0 {
                    vec![(7, 9.0)]
                } else {
                    vec![(7, k as f64 + 0.2)]
                };
                frame(k, &[(1, k as f64)], &hyp)
            })
            .collect();
        let mut rev = frames.clone();
        rev.reverse();
        let a = clear_mot(&frames, &MotParams::default());
        let b = clear_mot(&rev, &MotParams::default());
        assert_eq!((a.misses, a.false_positives), (b.misses, b.false_positives));
    }

    #[test]
    fn static_precision_examples() {
        let reference: Vec<Point3> = (0..9).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        assert_eq!(static_precision(&reference, &reference, 0.4), Some(1.0));
        let mut ms = vec![Point3::new(3.0, 0.0, 0.0); 9];
        ms.push(Point3::new(3.0, 0.5, 0.0));
        assert!((static_precision(&ms, &reference, 0.4).unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(static_precision(&[], &reference, 0.4), None);
    }

    #[test]
    fn histograms() {
        let cloud: Vec<Point3> = (0..100).map(|i| Point3::new(i as f64 * 0.5, 0.0, 0.0)).collect();
        let same = cloud_accuracy_completeness(&cloud, &cloud).unwrap();
        assert_eq!(same.accuracy.fractions[0], 1.0);
        assert_eq!(same.completeness.fractions[0], 1.0);
        let shifted: Vec<Point3> = cloud.iter().map(|p| *p + Point3::new(0.0, 0.1, 0.0)).collect();
        let c = cloud_accuracy_completeness(&shifted, &cloud).unwrap();
        let peak = c
            .accuracy
            .fractions
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(peak, 5);
        assert!(c.within_accuracy_limit(0.8));
        assert!(!c.within_accuracy_limit(0.05));
    }
}
