//! Uniform-grid spatial index for radius and nearest-neighbour queries.
//!
//! Points are bucketed into cubic cells keyed by `floor(p / cell_size)`.
//! A radius query with `r <= cell_size` touches at most 27 cells. Nearest
//! neighbour search expands Chebyshev rings of cells until the best distance
//! found is provably minimal, so results are exact.
//!
//! Cells live in a dense table over the occupied bounding box when that box
//! is small, otherwise in a hash map.

use rustc_hash::FxHashMap;

use crate::geometry::Point3;

const KEY_BITS: u32 = 21;
const KEY_OFFSET: i64 = 1 << (KEY_BITS - 1);
const KEY_MASK: u64 = (1 << KEY_BITS) - 1;

#[inline]
fn pack(c: [i64; 3]) -> u64 {
    let x = ((c[0] + KEY_OFFSET) as u64) & KEY_MASK;
    let y = ((c[1] + KEY_OFFSET) as u64) & KEY_MASK;
    let z = ((c[2] + KEY_OFFSET) as u64) & KEY_MASK;
    (x << (2 * KEY_BITS)) | (y << KEY_BITS) | z
}

/// Dense tables are used up to this many cells per indexed point.
const DENSE_CELLS_PER_POINT: usize = 16;
const DENSE_MIN_CELLS: usize = 1 << 16;

#[derive(Debug, Clone)]
enum CellTable {
    Dense { dims: [usize; 3], runs: Vec<(u32, u32)> },
    Sparse(FxHashMap<u64, (u32, u32)>),
}

#[derive(Debug, Clone)]
pub struct GridIndex {
    cell: f64,
    inv_cell: f64,
    /// Points reordered so each cell is a contiguous run.
    points: Vec<Point3>,
    /// Original index of each reordered point.
    original: Vec<u32>,
    cells: CellTable,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl GridIndex {
    /// Builds an index over `points`. `cell_size` must be positive.
    pub fn new(points: &[Point3], cell_size: f64) -> Self {
        assert!(cell_size > 0.0, "cell size must be positive");
        let inv_cell = 1.0 / cell_size;
        let mut keyed: Vec<(u64, [i64; 3], u32)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let c = cell_of(p, inv_cell);
                (pack(c), c, i as u32)
            })
            .collect();
        keyed.sort_unstable_by_key(|k| (k.0, k.2));

        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        let mut runs: Vec<([i64; 3], u64, u32, u32)> = Vec::new();
        let mut reordered = Vec::with_capacity(points.len());
        let mut original = Vec::with_capacity(points.len());
        let mut start = 0usize;
        for (i, (key, c, idx)) in keyed.iter().enumerate() {
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
            reordered.push(points[*idx as usize]);
            original.push(*idx);
            let last = i + 1 == keyed.len() || keyed[i + 1].0 != *key;
            if last {
                runs.push((*c, *key, start as u32, (i + 1) as u32));
                start = i + 1;
            }
        }
        let cells = if points.is_empty() {
            CellTable::Sparse(FxHashMap::default())
        } else {
            let dims = [0, 1, 2].map(|a| (hi[a] - lo[a] + 1) as usize);
            let total = dims[0].checked_mul(dims[1]).and_then(|v| v.checked_mul(dims[2]));
            match total {
                Some(n) if n <= DENSE_MIN_CELLS.max(DENSE_CELLS_PER_POINT * points.len()) => {
                    let mut table = vec![(0u32, 0u32); n];
                    for (c, _, s, e) in &runs {
                        let i = ((c[0] - lo[0]) as usize * dims[1] + (c[1] - lo[1]) as usize) * dims[2]
                            + (c[2] - lo[2]) as usize;
                        table[i] = (*s, *e);
                    }
                    CellTable::Dense { dims, runs: table }
                }
                _ => CellTable::Sparse(runs.iter().map(|(_, k, s, e)| (*k, (*s, *e))).collect()),
            }
        };
        Self {
            cell: cell_size,
            inv_cell,
            points: reordered,
            original,
            cells,
            lo,
            hi,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    /// Point range of cell `c`; callers keep `c` within `lo..=hi`.
    #[inline]
    fn cell_slice(&self, c: [i64; 3]) -> Option<(usize, usize)> {
        match &self.cells {
            CellTable::Dense { dims, runs } => {
                let i = ((c[0] - self.lo[0]) as usize * dims[1] + (c[1] - self.lo[1]) as usize) * dims[2]
                    + (c[2] - self.lo[2]) as usize;
                let (s, e) = runs[i];
                (e > s).then_some((s as usize, e as usize))
            }
            CellTable::Sparse(map) => map.get(&pack(c)).map(|&(s, e)| (s as usize, e as usize)),
        }
    }

    /// Calls `f(original_index, squared_distance)` for every point within `radius` of `q`.
    pub fn for_each_within<F: FnMut(usize, f64)>(&self, q: &Point3, radius: f64, mut f: F) {
        if self.points.is_empty() {
            return;
        }
        let r2 = radius * radius;
        let lo = cell_of(&Point3::new(q.x - radius, q.y - radius, q.z - radius), self.inv_cell);
        let hi = cell_of(&Point3::new(q.x + radius, q.y + radius, q.z + radius), self.inv_cell);
        for cx in lo[0].max(self.lo[0])..=hi[0].min(self.hi[0]) {
            for cy in lo[1].max(self.lo[1])..=hi[1].min(self.hi[1]) {
                for cz in lo[2].max(self.lo[2])..=hi[2].min(self.hi[2]) {
                    if let Some((s, e)) = self.cell_slice([cx, cy, cz]) {
                        for i in s..e {
                            let d2 = self.points[i].distance_squared(q);
                            if d2 <= r2 {
                                f(self.original[i] as usize, d2);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Original indices of all points within `radius` of `q` (inclusive), appended to `out`.
    pub fn within(&self, q: &Point3, radius: f64, out: &mut Vec<usize>) {
        self.for_each_within(q, radius, |i, _| out.push(i));
    }

    /// Number of points within `radius` of `q`, stopping early once `limit` is
    /// reached. The query's own cell is scanned first.
    pub fn count_within(&self, q: &Point3, radius: f64, limit: usize) -> usize {
        if self.points.is_empty() || limit == 0 {
            return 0;
        }
        let r2 = radius * radius;
        let own = cell_of(q, self.inv_cell);
        let inside = (0..3).all(|a| own[a] >= self.lo[a] && own[a] <= self.hi[a]);
        let mut count = 0;
        let scan = |c: [i64; 3], count: &mut usize| -> bool {
            if let Some((s, e)) = self.cell_slice(c) {
                for p in &self.points[s..e] {
                    if p.distance_squared(q) <= r2 {
                        *count += 1;
                        if *count >= limit {
                            return true;
                        }
                    }
                }
            }
            false
        };
        if inside && scan(own, &mut count) {
            return count;
        }
        let lo = cell_of(&Point3::new(q.x - radius, q.y - radius, q.z - radius), self.inv_cell);
        let hi = cell_of(&Point3::new(q.x + radius, q.y + radius, q.z + radius), self.inv_cell);
        for cx in lo[0].max(self.lo[0])..=hi[0].min(self.hi[0]) {
            for cy in lo[1].max(self.lo[1])..=hi[1].min(self.hi[1]) {
                for cz in lo[2].max(self.lo[2])..=hi[2].min(self.hi[2]) {
                    if inside && [cx, cy, cz] == own {
                        continue;
                    }
                    if scan([cx, cy, cz], &mut count) {
                        return count;
                    }
                }
            }
        }
        count
    }

    /// Exact nearest neighbour of `q`: `(original_index, distance)`.
    ///
    /// Ties are broken by the smaller original index.
    pub fn nearest(&self, q: &Point3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let qc = cell_of(q, self.inv_cell);
        // Rings closer than the occupied bounding box are empty; start at its Chebyshev distance.
        let mut k0 = 0i64;
        let mut k_max = 0i64;
        for ((c, lo), hi) in qc.iter().zip(self.lo).zip(self.hi) {
            k0 = k0.max(lo - c).max(c - hi);
            k_max = k_max.max((c - lo).abs()).max((hi - c).abs());
        }

        let mut best: Option<(u32, f64)> = None;
        let mut k = k0.max(0);
        loop {
            self.scan_ring(q, qc, k, &mut best);
            if let Some((_, d2)) = best {
                // Any point in ring k + 1 or beyond is at least k * cell away.
                let bound = k as f64 * self.cell;
                if d2 <= bound * bound {
                    break;
                }
            }
            if k >= k_max {
                break;
            }
            k += 1;
        }
        best.map(|(i, d2)| (i as usize, d2.sqrt()))
    }

    fn scan_ring(&self, q: &Point3, qc: [i64; 3], k: i64, best: &mut Option<(u32, f64)>) {
        let xr = (qc[0] - k).max(self.lo[0])..=(qc[0] + k).min(self.hi[0]);
        for cx in xr {
            let x_edge = (cx - qc[0]).abs() == k;
            for cy in (qc[1] - k).max(self.lo[1])..=(qc[1] + k).min(self.hi[1]) {
                let y_edge = (cy - qc[1]).abs() == k;
                if x_edge || y_edge {
                    for cz in (qc[2] - k).max(self.lo[2])..=(qc[2] + k).min(self.hi[2]) {
                        self.scan_cell(q, [cx, cy, cz], best);
                    }
                } else {
                    for cz in [qc[2] - k, qc[2] + k] {
                        if cz >= self.lo[2] && cz <= self.hi[2] {
                            self.scan_cell(q, [cx, cy, cz], best);
                        }
                        if k == 0 {
                            break;
                        }
                    }
                }
            }
        }
    }

    #[inline]
    fn scan_cell(&self, q: &Point3, c: [i64; 3], best: &mut Option<(u32, f64)>) {
        if let Some((s, e)) = self.cell_slice(c) {
            for i in s..e {
                let d2 = self.points[i].distance_squared(q);
                let idx = self.original[i];
                let better = match *best {
                    None => true,
                    Some((bi, bd)) => d2 < bd || (d2 == bd && idx < bi),
                };
                if better {
                    *best = Some((idx, d2));
                }
            }
        }
    }
}

#[inline]
fn cell_of(p: &Point3, inv_cell: f64) -> [i64; 3] {
    [
        (p.x * inv_cell).floor() as i64,
        (p.y * inv_cell).floor() as i64,
        (p.z * inv_cell).floor() as i64,
    ]
}

/// Brute-force nearest neighbour. Reference implementation for tests and tiny clouds.
pub fn nearest_brute_force(points: &[Point3], q: &Point3) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d2 = p.distance_squared(q);
        if best.is_none_or(|(_, bd)| d2 < bd) {
            best = Some((i, d2));
        }
    }
    best.map(|(i, d2)| (i, d2.sqrt()))
}
