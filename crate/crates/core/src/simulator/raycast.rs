//! Ray intersection with the scene primitives. Rays are `origin + s * dir`
//! with `s > 0`; `dir` need not be normalized.

use crate::geometry::Point3;

const EPS: f64 = 1e-12;

/// Entry parameter of the ray into a box of half extents `half`, centred at
/// `center` and rotated by `yaw` about the vertical axis. Rays starting inside
/// the box do not hit it.
pub fn intersect_box(origin: &Point3, dir: &Point3, center: &[f64; 3], half: &[f64; 3], yaw: f64) -> Option<f64> {
    let (s, c) = yaw.sin_cos();
    let rel = *origin - Point3::new(center[0], center[1], center[2]);
    // rotate by -yaw into the box frame
    let o = [c * rel.x + s * rel.y, -s * rel.x + c * rel.y, rel.z];
    let d = [c * dir.x + s * dir.y, -s * dir.x + c * dir.y, dir.z];
    let mut t_min = f64::NEG_INFINITY;
    let mut t_max = f64::INFINITY;
    for a in 0..3 {
        if d[a].abs() < EPS {
            if o[a] < -half[a] || o[a] > half[a] {
                return None;
            }
            continue;
        }
        let t1 = (-half[a] - o[a]) / d[a];
        let t2 = (half[a] - o[a]) / d[a];
        t_min = t_min.max(t1.min(t2));
        t_max = t_max.min(t1.max(t2));
    }
    (t_max >= t_min && t_min > 0.0).then_some(t_min)
}

/// First hit with a vertical, capped cylinder with axis through `(cx, cy)`,
/// spanning heights `[base, base + height]`.
pub fn intersect_cylinder(
    origin: &Point3,
    dir: &Point3,
    axis: [f64; 2],
    radius: f64,
    base: f64,
    height: f64,
) -> Option<f64> {
    let top = base + height;
    let ox = origin.x - axis[0];
    let oy = origin.y - axis[1];
    let r2 = radius * radius;
    let mut best: Option<f64> = None;
    let mut consider = |s: f64| {
        if s > 0.0 && best.is_none_or(|b| s < b) {
            best = Some(s);
        }
    };

    let a = dir.x * dir.x + dir.y * dir.y;
    if a > EPS {
        let b = 2.0 * (ox * dir.x + oy * dir.y);
        let c = ox * ox + oy * oy - r2;
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for s in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                let z = origin.z + s * dir.z;
                if z >= base && z <= top {
                    consider(s);
                }
            }
        }
    }
    if dir.z.abs() > EPS {
        for plane in [base, top] {
            let s = (plane - origin.z) / dir.z;
            let x = ox + s * dir.x;
            let y = oy + s * dir.y;
            if x * x + y * y <= r2 {
                consider(s);
            }
        }
    }
    best
}

/// Hit with the horizontal floor plane `z = 0`, seen from above.
pub fn intersect_floor(origin: &Point3, dir: &Point3) -> Option<f64> {
    if dir.z < -EPS && origin.z > 0.0 {
        Some(-origin.z / dir.z)
    } else {
        None
    }
}
