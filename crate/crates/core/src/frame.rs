//! Per-frame containers and the time-indexed buffer of recent frames.

use std::collections::VecDeque;

use crate::fusion::BBox2D;
use crate::geometry::{Point3, Pose};

/// One processed sensor frame.
///
/// `dense_cloud` is the cropped cloud in the camera frame (kept in camera
/// coordinates for re-projection); `filtered_cloud` is the down-sampled,
/// outlier-free cloud in the world frame (kept in world coordinates for
/// association).
#[derive(Debug, Clone, Default)]
pub struct Frame {
    pub index: usize,
    pub timestamp: f64,
    pub pose: Pose,
    pub dense_cloud: Vec<Point3>,
    pub filtered_cloud: Vec<Point3>,
    pub detections: Vec<BBox2D>,
}

pub trait Timestamped {
    fn timestamp(&self) -> f64;
}

impl Timestamped for Frame {
    fn timestamp(&self) -> f64 {
        self.timestamp
    }
}

/// Ring buffer retaining every entry from the last `delta + dt` seconds, where
/// `dt` is the largest inter-frame interval observed so far.
#[derive(Debug, Clone)]
pub struct FrameBuffer<T> {
    delta: f64,
    max_interval: f64,
    capacity: usize,
    entries: VecDeque<T>,
}

impl<T: Timestamped> FrameBuffer<T> {
    /// `capacity` is a hard cap on the number of entries kept regardless of age.
    pub fn new(delta: f64, capacity: usize) -> Self {
        Self {
            delta,
            max_interval: 0.0,
            capacity: capacity.max(1),
            entries: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn retention(&self) -> f64 {
        self.delta + self.max_interval
    }

    /// Appends an entry. Timestamps must be strictly increasing; an entry that
    /// is not newer than the last one is rejected and returned.
    pub fn push(&mut self, entry: T) -> Result<(), T> {
        let ts = entry.timestamp();
        if let Some(last) = self.entries.back() {
            let dt = ts - last.timestamp();
            if dt <= 0.0 || dt.is_nan() {
                return Err(entry);
            }
            self.max_interval = self.max_interval.max(dt);
        }
        self.entries.push_back(entry);
        let keep = self.retention() + 1e-9;
        while let Some(front) = self.entries.front() {
            let too_old = ts - front.timestamp() > keep;
            if too_old || self.entries.len() > self.capacity {
                self.entries.pop_front();
            } else {
                break;
            }
        }
        Ok(())
    }

    /// Entry whose timestamp is closest to `target`; ties go to the older entry.
    pub fn lookup(&self, target: f64) -> Option<&T> {
        self.entries.iter().min_by(|a, b| {
            let da = (a.timestamp() - target).abs();
            let db = (b.timestamp() - target).abs();
            da.total_cmp(&db)
        })
    }

    pub fn latest(&self) -> Option<&T> {
        self.entries.back()
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.entries.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Stamp(f64);
    impl Timestamped for Stamp {
        fn timestamp(&self) -> f64 {
            self.0
        }
    }

    #[test]
    fn rejects_non_increasing_timestamps() {
        let mut buf = FrameBuffer::new(0.4, 100);
        assert!(buf.push(Stamp(1.0)).is_ok());
        assert!(buf.push(Stamp(1.0)).is_err());
        assert!(buf.push(Stamp(0.5)).is_err());
    }

    #[test]
    fn retains_delta_plus_interval() {
        let mut buf = FrameBuffer::new(0.4, 100);
        for i in 0..50 {
            buf.push(Stamp(i as f64 * 0.1)).ok().unwrap();
        }
        // 0.4 s + 0.1 s window at 10 Hz: frames at t-0.5 ..= t
        assert_eq!(buf.len(), 6);
        let oldest = buf.iter().next().unwrap().0;
        assert!((4.9 - oldest - 0.5).abs() < 1e-9);
    }

    #[test]
    fn lookup_error_at_most_half_interval() {
        let rate = 8.5;
        let dt = 1.0 / rate;
        let mut buf = FrameBuffer::new(0.4, 100);
        for i in 0..200 {
            let t = i as f64 * dt;
            buf.push(Stamp(t)).ok().unwrap();
            if t >= 0.4 + dt {
                let found = buf.lookup(t - 0.4).unwrap().0;
                assert!((found - (t - 0.4)).abs() <= dt / 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn capacity_is_a_hard_cap() {
        let mut buf = FrameBuffer::new(10.0, 3);
        for i in 0..10 {
            buf.push(Stamp(i as f64)).ok().unwrap();
        }
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.latest().unwrap().0, 9.0);
    }
}
