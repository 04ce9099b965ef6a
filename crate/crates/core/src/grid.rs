//! Layered 2D occupancy grid: static, dynamic and uncertain cost layers over
//! a robot-centred raster, aggregated into one planning costmap.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::ClassState;
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::motion::KalmanTrack;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Cell edge length, m.
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    /// World x-y of the lower-left corner of cell `(0, 0)`.
    pub origin: [f64; 2],
}

impl GridSpec {
    /// Grid of `size` x `size` metres centred on `(x, y)`, aligned to the
    /// resolution.
    pub fn centered(x: f64, y: f64, size: f64, resolution: f64) -> Self {
        let n = (size / resolution).round().max(1.0) as usize;
        let mut spec = Self {
            resolution,
            width: n,
            height: n,
            origin: [0.0, 0.0],
        };
        spec.origin = spec.aligned_origin(x, y);
        spec
    }

    fn aligned_origin(&self, x: f64, y: f64) -> [f64; 2] {
        let ox = ((x / self.resolution).floor() - (self.width / 2) as f64) * self.resolution;
        let oy = ((y / self.resolution).floor() - (self.height / 2) as f64) * self.resolution;
        [ox, oy]
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution > 0.0 && self.width > 0 && self.height > 0 {
            Ok(())
        } else {
            Err(Error::Config("grid resolution and size must be positive".into()))
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Signed cell coordinates of a world x-y position (may lie outside).
    #[inline]
    pub fn cell_coords(&self, x: f64, y: f64) -> (i64, i64) {
        (
            ((x - self.origin[0]) / self.resolution).floor() as i64,
            ((y - self.origin[1]) / self.resolution).floor() as i64,
        )
    }

    #[inline]
    pub fn index(&self, cx: i64, cy: i64) -> Option<usize> {
        (cx >= 0 && cy >= 0 && (cx as usize) < self.width && (cy as usize) < self.height)
            .then(|| cy as usize * self.width + cx as usize)
    }

    #[inline]
    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        let (cx, cy) = self.cell_coords(x, y);
        self.index(cx, cy)
    }

    pub fn cell_center(&self, cx: usize, cy: usize) -> [f64; 2] {
        [
            self.origin[0] + (cx as f64 + 0.5) * self.resolution,
            self.origin[1] + (cy as f64 + 0.5) * self.resolution,
        ]
    }
}

/// One cost raster. Costs lie in `[0, 1]`, 1 being lethal.
#[derive(Debug, Clone, PartialEq)]
pub struct CostLayer {
    pub spec: GridSpec,
    pub cost: Vec<f32>,
    /// Time each cell was last marked; only kept by the uncertain layer.
    pub last_touched: Option<Vec<f64>>,
}

impl CostLayer {
    pub fn new(spec: GridSpec) -> Self {
        Self {
            spec,
            cost: vec![0.0; spec.len()],
            last_touched: None,
        }
    }

    pub fn with_timestamps(spec: GridSpec) -> Self {
        Self {
            last_touched: Some(vec![f64::NEG_INFINITY; spec.len()]),
            ..Self::new(spec)
        }
    }

    pub fn at(&self, x: f64, y: f64) -> Option<f32> {
        self.spec.cell_of(x, y).map(|i| self.cost[i])
    }

    pub fn clear(&mut self) {
        self.cost.fill(0.0);
    }

    /// Raises a cell to `value`. Returns `false` if `(x, y)` lies outside.
    pub fn mark(&mut self, x: f64, y: f64, value: f32, now: f64) -> bool {
        let Some(i) = self.spec.cell_of(x, y) else {
            return false;
        };
        self.cost[i] = self.cost[i].max(value);
        if let Some(t) = &mut self.last_touched {
            t[i] = now;
        }
        true
    }

    pub fn occupied_cells(&self) -> usize {
        self.cost.iter().filter(|c| **c > 0.0).count()
    }

    /// Moves the raster to `spec`, keeping the values of cells present in
    /// both. Both specs must share resolution and size, and their origins must
    /// differ by whole cells.
    fn shift_to(&mut self, spec: GridSpec) {
        let dx = ((spec.origin[0] - self.spec.origin[0]) / spec.resolution).round() as i64;
        let dy = ((spec.origin[1] - self.spec.origin[1]) / spec.resolution).round() as i64;
        let old = std::mem::replace(&mut self.cost, vec![0.0; spec.len()]);
        let old_t = self
            .last_touched
            .as_mut()
            .map(|t| std::mem::replace(t, vec![f64::NEG_INFINITY; spec.len()]));
        for ny in 0..spec.height as i64 {
            let oy = ny + dy;
            if oy < 0 || oy >= self.spec.height as i64 {
                continue;
            }
            for nx in 0..spec.width as i64 {
                let ox = nx + dx;
                if ox < 0 || ox >= self.spec.width as i64 {
                    continue;
                }
                let n = ny as usize * spec.width + nx as usize;
                let o = oy as usize * self.spec.width + ox as usize;
                self.cost[n] = old[o];
                if let (Some(t), Some(ot)) = (&mut self.last_touched, &old_t) {
                    t[n] = ot[o];
                }
            }
        }
        self.spec = spec;
    }

    /// Writes the layer as a binary PGM (`P5`, max value 255, cell value
    /// `round(cost * 255)`). Rows are written from the highest y index down so
    /// that the image shows +y upwards.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut buf = format!("P5\n{} {}\n255\n", self.spec.width, self.spec.height).into_bytes();
        for cy in (0..self.spec.height).rev() {
            let row = &self.cost[cy * self.spec.width..(cy + 1) * self.spec.width];
            buf.extend(row.iter().map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// Sidecar metadata written next to exported rasters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridExportMeta {
    pub resolution: f64,
    pub origin: [f64; 2],
    pub width: usize,
    pub height: usize,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridParams {
    /// Cell edge length, m.
    pub resolution: f64,
    /// Edge length of the square, robot-centred region, m.
    pub size: f64,
    /// Multiplicative static-cost decay per ray passing through a cell.
    pub clear_decay: f64,
    /// Lifetime of uncertain-layer costs, s.
    pub uncertain_lifetime: f64,
    /// Inflation radius around static and uncertain costs, m.
    pub static_inflation: f64,
    /// Inflation radius around dynamic costs, m.
    pub dynamic_inflation: f64,
    /// Look-ahead time of the dynamic cost sweep, s.
    pub sweep_horizon: f64,
    /// Cost at the far end of the sweep.
    pub sweep_floor: f64,
    /// Half-width of the swept footprint, m.
    pub sweep_radius: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            resolution: 0.05,
            size: 20.0,
            clear_decay: 0.8,
            uncertain_lifetime: 1.0,
            static_inflation: 0.3,
            dynamic_inflation: 0.6,
            sweep_horizon: 1.0,
            sweep_floor: 0.3,
            sweep_radius: 0.25,
        }
    }
}

impl GridParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.resolution > 0.0
            && self.size >= self.resolution
            && (0.0..1.0).contains(&self.clear_decay)
            && self.uncertain_lifetime >= 0.0
            && self.static_inflation >= 0.0
            && self.dynamic_inflation >= 0.0
            && self.sweep_horizon >= 0.0
            && (0.0..=1.0).contains(&self.sweep_floor)
            && self.sweep_radius >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid grid parameters".into()))
        }
    }
}

/// Decays the static cost of every cell strictly between the sensor cell and
/// each endpoint cell. Endpoint cells and cells beyond are left alone.
pub fn raytrace_clear(layer: &mut CostLayer, origin: [f64; 2], endpoints: &[[f64; 2]], decay: f64) {
    let spec = layer.spec;
    let (x0, y0) = spec.cell_coords(origin[0], origin[1]);
    let decay = decay as f32;
    for e in endpoints {
        let (x1, y1) = spec.cell_coords(e[0], e[1]);
        // Bresenham traversal, stopping before the endpoint
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        let (mut x, mut y) = (x0, y0);
        while (x, y) != (x1, y1) {
            if let Some(i) = spec.index(x, y) {
                layer.cost[i] *= decay;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }
}

fn disc_offsets(radius_cells: f64) -> Vec<(i64, i64)> {
    let r = radius_cells.floor() as i64;
    let r2 = radius_cells * radius_cells;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if (dx * dx + dy * dy) as f64 <= r2 {
                out.push((dx, dy));
            }
        }
    }
    out
}

fn stamp(layer: &mut CostLayer, cx: i64, cy: i64, offsets: &[(i64, i64)], value: f32) {
    for (dx, dy) in offsets {
        if let Some(i) = layer.spec.index(cx + dx, cy + dy) {
            layer.cost[i] = layer.cost[i].max(value);
        }
    }
}

/// Stamps, for every track, a swept footprint from its position to
/// `position + velocity * horizon`, with cost falling linearly from 1 to
/// `floor` along the sweep. Stationary tracks add nothing.
pub fn expand_dynamic_costs(layer: &mut CostLayer, tracks: &[&KalmanTrack], horizon: f64, radius: f64, floor: f64) {
    let res = layer.spec.resolution;
    let offsets = disc_offsets(radius / res);
    for t in tracks {
        let [x, y] = t.position();
        let [vx, vy] = t.velocity();
        let (ex, ey) = (vx * horizon, vy * horizon);
        let len = ex.hypot(ey);
        if len < 1e-9 {
            continue;
        }
        let steps = (2.0 * len / res).ceil().max(1.0) as usize;
        for k in 0..=steps {
            let s = k as f64 / steps as f64;
            let (cx, cy) = layer.spec.cell_coords(x + s * ex, y + s * ey);
            let value = (1.0 - (1.0 - floor) * s) as f32;
            stamp(layer, cx, cy, &offsets, value);
        }
    }
}

fn inflate(layer: &CostLayer, radius: f64, out: &mut [f32]) {
    let offsets = disc_offsets(radius / layer.spec.resolution);
    let w = layer.spec.width;
    for (i, &c) in layer.cost.iter().enumerate() {
        if c <= 0.0 {
            continue;
        }
        let (cx, cy) = ((i % w) as i64, (i / w) as i64);
        for (dx, dy) in &offsets {
            if let Some(j) = layer.spec.index(cx + dx, cy + dy) {
                out[j] = out[j].max(c);
            }
        }
    }
}

/// Per-cell maximum of the three layers, without inflation.
pub fn aggregate_raw(
    static_layer: &CostLayer,
    dynamic_layer: &CostLayer,
    uncertain_layer: &CostLayer,
) -> Result<CostLayer> {
    check_specs(static_layer, dynamic_layer, uncertain_layer)?;
    let mut out = CostLayer::new(static_layer.spec);
    for (i, c) in out.cost.iter_mut().enumerate() {
        *c = static_layer.cost[i]
            .max(dynamic_layer.cost[i])
            .max(uncertain_layer.cost[i]);
    }
    Ok(out)
}

/// Per-cell maximum of the layers after inflating static and uncertain costs
/// by `static_inflation` and dynamic costs by the larger `dynamic_inflation`.
pub fn aggregate(
    static_layer: &CostLayer,
    dynamic_layer: &CostLayer,
    uncertain_layer: &CostLayer,
    params: &GridParams,
) -> Result<CostLayer> {
    check_specs(static_layer, dynamic_layer, uncertain_layer)?;
    let mut out = CostLayer::new(static_layer.spec);
    inflate(static_layer, params.static_inflation, &mut out.cost);
    inflate(uncertain_layer, params.static_inflation, &mut out.cost);
    inflate(dynamic_layer, params.dynamic_inflation, &mut out.cost);
    Ok(out)
}

fn check_specs(a: &CostLayer, b: &CostLayer, c: &CostLayer) -> Result<()> {
    if a.spec == b.spec && a.spec == c.spec {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// Points of one classified cluster, world frame.
pub struct ClassifiedPoints<'a> {
    pub class: ClassState,
    pub points: &'a [Point3],
}

/// The three cost layers and their aggregate.
#[derive(Debug, Clone)]
pub struct LayeredGrid {
    pub params: GridParams,
    pub static_layer: CostLayer,
    pub dynamic_layer: CostLayer,
    pub uncertain_layer: CostLayer,
}

impl LayeredGrid {
    pub fn new(params: GridParams, center: [f64; 2]) -> Self {
        let spec = GridSpec::centered(center[0], center[1], params.size, params.resolution);
        Self {
            params,
            static_layer: CostLayer::new(spec),
            dynamic_layer: CostLayer::new(spec),
            uncertain_layer: CostLayer::with_timestamps(spec),
        }
    }

    pub fn spec(&self) -> GridSpec {
        self.static_layer.spec
    }

    /// Scrolls the grid so that it stays centred on `(x, y)`.
    pub fn recenter(&mut self, x: f64, y: f64) {
        let mut spec = self.spec();
        let origin = spec.aligned_origin(x, y);
        if origin == spec.origin {
            return;
        }
        spec.origin = origin;
        self.static_layer.shift_to(spec);
        self.dynamic_layer.shift_to(spec);
        self.uncertain_layer.shift_to(spec);
    }

    /// One frame of grid maintenance: scroll, clear free space along the
    /// sensor rays, rebuild the dynamic layer, mark each cluster in the layer
    /// of its class, expire old uncertain costs and sweep dynamic costs along
    /// the tracks' velocities. Returns the number of points that fell outside
    /// the grid.
    pub fn update_layers(
        &mut self,
        clusters: &[ClassifiedPoints<'_>],
        sensor_origin: [f64; 2],
        endpoints: &[[f64; 2]],
        moving: &[&KalmanTrack],
        now: f64,
    ) -> usize {
        self.recenter(sensor_origin[0], sensor_origin[1]);
        raytrace_clear(
            &mut self.static_layer,
            sensor_origin,
            endpoints,
            self.params.clear_decay,
        );
        self.dynamic_layer.clear();

        let mut dropped = 0;
        for c in clusters {
            let layer = match c.class {
                ClassState::Static => &mut self.static_layer,
                ClassState::Dynamic | ClassState::Person => &mut self.dynamic_layer,
                ClassState::Uncertain | ClassState::Unknown => &mut self.uncertain_layer,
            };
            for p in c.points {
                if !layer.mark(p.x, p.y, 1.0, now) {
                    dropped += 1;
                }
            }
        }
        if dropped > 0 {
            log::trace!("{dropped} points outside the grid");
        }

        let lifetime = self.params.uncertain_lifetime;
        let layer = &mut self.uncertain_layer;
        if let Some(stamps) = &layer.last_touched {
            for (c, t) in layer.cost.iter_mut().zip(stamps) {
                if now - t > lifetime {
                    *c = 0.0;
                }
            }
        }

        expand_dynamic_costs(
            &mut self.dynamic_layer,
            moving,
            self.params.sweep_horizon,
            self.params.sweep_radius,
            self.params.sweep_floor,
        );
        dropped
    }

    pub fn aggregate(&self) -> CostLayer {
        aggregate(
            &self.static_layer,
            &self.dynamic_layer,
            &self.uncertain_layer,
            &self.params,
        )
        .expect("layers of one grid share a spec")
    }

    /// Writes `<stem>_{static,dynamic,uncertain,aggregate}.pgm` and
    /// `<stem>.json` into `dir`.
    pub fn export(&self, dir: &Path, stem: &str, timestamp: f64) -> Result<()> {
        let layers = [
            ("static", &self.static_layer),
            ("dynamic", &self.dynamic_layer),
            ("uncertain", &self.uncertain_layer),
        ];
        for (name, layer) in layers {
            layer.write_pgm(&dir.join(format!("{stem}_{name}.pgm")))?;
        }
        self.aggregate().write_pgm(&dir.join(format!("{stem}_aggregate.pgm")))?;
        let spec = self.spec();
        crate::io::write_json(
            &dir.join(format!("{stem}.json")),
            &GridExportMeta {
                resolution: spec.resolution,
                origin: spec.origin,
                width: spec.width,
                height: spec.height,
                timestamp,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::MotionParams;
    use proptest::prelude::*;

    fn spec() -> GridSpec {
        GridSpec::centered(0.0, 0.0, 10.0, 0.05)
    }

    fn moving_track(p: [f64; 2], v: [f64; 2]) -> KalmanTrack {
        let mut t = KalmanTrack::new(1, &Point3::new(p[0], p[1], 0.0), 0.0, &MotionParams::default());
        t.state[2] = v[0];
        t.state[3] = v[1];
        t
    }

    #[test]
    fn ray_clears_up_to_obstacle() {
        let mut layer = CostLayer::new(spec());
        layer.cost.fill(1.0);
        raytrace_clear(&mut layer, [0.01, 0.01], &[[3.01, 0.01]], 0.0);
        for k in 10..58 {
            let x = 0.01 + k as f64 * 0.05;
            assert_eq!(layer.at(x, 0.01), Some(0.0), "x = {x}");
        }
        assert_eq!(layer.at(3.01, 0.01), Some(1.0));
        assert_eq!(layer.at(3.06, 0.01), Some(1.0));
    }

    #[test]
    fn ghost_decays_within_ten_frames() {
        let mut layer = CostLayer::new(spec());
        layer.mark(1.0, 0.0, 1.0, 0.0);
        for _ in 0..10 {
            raytrace_clear(&mut layer, [0.0, 0.0], &[[4.0, 0.0]], 0.8);
        }
        assert!(layer.at(1.0, 0.0).unwrap() < 0.11);
        let before = layer.clone();
        raytrace_clear(&mut layer, [0.0, 0.0], &[], 0.8);
        assert_eq!(layer, before);
    }

    #[test]
    fn sweep_endpoints() {
        let mut layer = CostLayer::new(spec());
        let t = moving_track([0.0, 0.0], [1.0, 0.0]);
        expand_dynamic_costs(&mut layer, &[&t], 1.0, 0.0, 0.3);
        assert_eq!(layer.at(0.01, 0.01), Some(1.0));
        assert!(layer.at(0.99, 0.01).unwrap() > 0.29);
        assert_eq!(layer.at(1.2, 0.01), Some(0.0));

        let mut layer = CostLayer::new(spec());
        let t = moving_track([0.0, 0.0], [0.6, 0.8]);
        expand_dynamic_costs(&mut layer, &[&t], 0.5, 0.0, 0.3);
        assert!(layer.at(0.3, 0.4).unwrap() > 0.0 || layer.at(0.29, 0.39).unwrap() > 0.0);

        let mut layer = CostLayer::new(spec());
        let still = moving_track([1.0, 1.0], [0.0, 0.0]);
        expand_dynamic_costs(&mut layer, &[&still], 1.0, 0.25, 0.3);
        assert_eq!(layer.occupied_cells(), 0);
    }

    #[test]
    fn aggregate_is_max() {
        let s = spec();
        let mut a = CostLayer::new(s);
        let mut b = CostLayer::new(s);
        let c = CostLayer::new(s);
        a.mark(1.0, 1.0, 0.3, 0.0);
        b.mark(1.0, 1.0, 0.7, 0.0);
        let agg = aggregate_raw(&a, &b, &c).unwrap();
        assert_eq!(agg.at(1.0, 1.0), Some(0.7));
        assert_eq!(agg.at(2.0, 2.0), Some(0.0));
        let other = CostLayer::new(GridSpec::centered(5.0, 0.0, 10.0, 0.05));
        assert!(matches!(aggregate_raw(&a, &b, &other), Err(Error::GridMismatch)));
    }

    #[test]
    fn dynamic_inflation_wider_than_static() {
        let s = spec();
        let params = GridParams::default();
        let mut st = CostLayer::new(s);
        let mut dy = CostLayer::new(s);
        st.mark(-2.0, 0.0, 1.0, 0.0);
        dy.mark(2.0, 0.0, 1.0, 0.0);
        let agg = aggregate(&st, &dy, &CostLayer::new(s), &params).unwrap();
        assert_eq!(agg.at(-2.0, 0.45), Some(0.0));
        assert_eq!(agg.at(-2.0, 0.25), Some(1.0));
        assert_eq!(agg.at(2.0, 0.45), Some(1.0));
        assert_eq!(agg.at(2.0, 0.7), Some(0.0));
    }

    #[test]
    fn class_selects_layer_and_uncertain_expires() {
        let mut grid = LayeredGrid::new(GridParams::default(), [0.0, 0.0]);
        let stat = [Point3::new(2.0, 0.0, 0.5)];
        let pers = [Point3::new(0.0, 2.0, 0.5)];
        let unc = [Point3::new(-2.0, 0.0, 0.5)];
        let clusters = [
            ClassifiedPoints {
                class: ClassState::Static,
                points: &stat,
            },
            ClassifiedPoints {
                class: ClassState::Person,
                points: &pers,
            },
            ClassifiedPoints {
                class: ClassState::Uncertain,
                points: &unc,
            },
        ];
        grid.update_layers(&clusters, [0.0, 0.0], &[], &[], 0.0);
        assert_eq!(grid.static_layer.at(2.0, 0.0), Some(1.0));
        assert_eq!(grid.dynamic_layer.at(0.0, 2.0), Some(1.0));
        assert_eq!(grid.static_layer.at(0.0, 2.0), Some(0.0));
        assert_eq!(grid.uncertain_layer.at(-2.0, 0.0), Some(1.0));
        for k in 1..=10 {
            grid.update_layers(&[], [0.0, 0.0], &[], &[], k as f64 * 0.1);
        }
        assert_eq!(grid.uncertain_layer.at(-2.0, 0.0), Some(1.0));
        grid.update_layers(&[], [0.0, 0.0], &[], &[], 1.1);
        assert_eq!(grid.uncertain_layer.at(-2.0, 0.0), Some(0.0));
        assert_eq!(grid.dynamic_layer.occupied_cells(), 0);
        assert_eq!(grid.static_layer.at(2.0, 0.0), Some(1.0));
    }

    #[test]
    fn recenter_keeps_world_positions() {
        let mut grid = LayeredGrid::new(GridParams::default(), [0.0, 0.0]);
        grid.static_layer.mark(3.0, -1.0, 1.0, 0.0);
        grid.recenter(2.37, 1.12);
        assert_eq!(grid.static_layer.at(3.0, -1.0), Some(1.0));
        assert_eq!(grid.static_layer.occupied_cells(), 1);
        let spec = grid.spec();
        let c = spec.cell_of(2.37, 1.12).unwrap();
        assert_eq!(c, (spec.height / 2) * spec.width + spec.width / 2);
    }

    #[test]
    fn pgm_export() {
        let dir = tempfile::tempdir().unwrap();
        let mut grid = LayeredGrid::new(
            GridParams {
                size: 1.0,
                ..Default::default()
            },
            [0.0, 0.0],
        );
        grid.static_layer.mark(0.0, 0.0, 1.0, 0.0);
        grid.export(dir.path(), "frame_0000", 1.5).unwrap();
        let bytes = fs::read(dir.path().join("frame_0000_static.pgm")).unwrap();
        assert!(bytes.starts_with(b"P5\n20 20\n255\n"));
        assert_eq!(bytes.len(), 13 + 400);
        assert_eq!(bytes.iter().skip(13).filter(|b| **b == 255).count(), 1);
        let meta: GridExportMeta = crate::io::read_json(&dir.path().join("frame_0000.json")).unwrap();
        assert_eq!(meta.width, 20);
        assert_eq!(meta.timestamp, 1.5);
    }

    proptest! {
        #[test]
        fn aggregate_dominates_layers(cells in prop::collection::vec((0usize..3, -4.0f64..4.0, -4.0f64..4.0, 0.0f32..1.0), 0..40)) {
            let s = spec();
            let mut layers = [CostLayer::new(s), CostLayer::new(s), CostLayer::new(s)];
            for (l, x, y, c) in &cells {
                layers[*l].mark(*x, *y, *c, 0.0);
            }
            let agg = aggregate(&layers[0], &layers[1], &layers[2], &GridParams::default()).unwrap();
            for l in &layers {
                prop_assert!(agg.cost.iter().zip(&l.cost).all(|(a, c)| a >= c));
            }
        }

        #[test]
        fn endpoint_and_beyond_untouched(ex in -4.0f64..4.0, ey in -4.0f64..4.0) {
            let s = spec();
            let mut layer = CostLayer::new(s);
            layer.cost.fill(1.0);
            raytrace_clear(&mut layer, [0.0, 0.0], &[[ex, ey]], 0.5);
            prop_assert_eq!(layer.at(ex, ey), Some(1.0));
            // a point further out along the same ray
            let (bx, by) = (ex * 1.2, ey * 1.2);
            if s.cell_of(bx, by) != s.cell_of(ex, ey) {
                prop_assert_eq!(layer.at(bx, by), Some(1.0));
            }
        }

        #[test]
        fn sweep_length_matches_speed(vx in -2.0f64..2.0, vy in -2.0f64..2.0, horizon in 0.1f64..2.0) {
            let s = spec();
            let mut layer = CostLayer::new(s);
            let t = moving_track([0.02, 0.02], [vx, vy]);
            expand_dynamic_costs(&mut layer, &[&t], horizon, 0.0, 0.3);
            let speed = vx.hypot(vy);
            prop_assume!(speed > 0.1);
            // extent of marked cells along the dominant axis
            let w = s.width;
            let marked: Vec<(i64, i64)> = layer.cost.iter().enumerate()
                .filter(|(_, c)| **c > 0.0)
                .map(|(i, _)| ((i % w) as i64, (i / w) as i64))
                .collect();
            let (lo_x, hi_x) = marked.iter().fold((i64::MAX, i64::MIN), |a, m| (a.0.min(m.0), a.1.max(m.0)));
            let (lo_y, hi_y) = marked.iter().fold((i64::MAX, i64::MIN), |a, m| (a.0.min(m.1), a.1.max(m.1)));
            let cells_x = (hi_x - lo_x) as f64;
            let cells_y = (hi_y - lo_y) as f64;
            let measured = cells_x.hypot(cells_y);
            let expected = speed * horizon / s.resolution;
            prop_assert!((measured - expected).abs() <= 1.0 * std::f64::consts::SQRT_2 + 1e-9,
                "measured {} expected {}", measured, expected);
        }
    }
}
