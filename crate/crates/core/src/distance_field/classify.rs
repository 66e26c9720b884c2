//! True-boundary / interior-boundary labelling of region distance fields.

use super::grid::{GridSdf, GridSpec, LabelGrid};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Point set bucketed on the grid cells for nearest-point queries.
struct Buckets {
    spec: GridSpec,
    cells: Vec<Vec<Vec3>>,
    count: usize,
}

impl Buckets {
    fn new(spec: GridSpec) -> Self {
        Self {
            spec,
            cells: vec![Vec::new(); spec.len()],
            count: 0,
        }
    }

    fn cell_of(&self, p: &Vec3) -> [i64; 3] {
        let mut c = [0i64; 3];
        for a in 0..3 {
            let u = ((p[a] - self.spec.origin[a]) / self.spec.spacing).floor() as i64;
            c[a] = u.clamp(0, self.spec.dims[a] as i64 - 1);
        }
        c
    }

    fn insert(&mut self, p: Vec3) {
        let c = self.cell_of(&p);
        let idx = self.spec.index(c[0] as usize, c[1] as usize, c[2] as usize);
        self.cells[idx].push(p);
        self.count += 1;
    }

    /// Distance to the nearest stored point, searching cubic shells outward.
    fn nearest(&self, p: &Vec3) -> f64 {
        if self.count == 0 {
            return f64::INFINITY;
        }
        let c = self.cell_of(p);
        let h = self.spec.spacing;
        let max_r = *self.spec.dims.iter().max().unwrap() as i64;
        let mut best = f64::INFINITY;
        for r in 0..=max_r {
            // every point in shells beyond r is at least (r - 1)·h away
            if best.is_finite() && (r as f64 - 1.0) * h > best {
                break;
            }
            for dz in -r..=r {
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        let q = [c[0] + dx, c[1] + dy, c[2] + dz];
                        if (0..3).any(|a| q[a] < 0 || q[a] >= self.spec.dims[a] as i64) {
                            continue;
                        }
                        let idx = self.spec.index(q[0] as usize, q[1] as usize, q[2] as usize);
                        for x in &self.cells[idx] {
                            best = best.min((x - p).norm());
                        }
                    }
                }
            }
        }
        best
    }
}

/// Labels every node +1 or -1 according to whether the closest point on the
/// region boundary lies on the true body surface.
///
/// Region boundary faces between 6-neighbors are tagged *true* when the
/// neighbor outside the region is also outside the body, and *interior* when
/// it is inside the body. Each node is projected to its closest region
/// boundary point `x - φ∇φ` and takes the tag of the nearest face there.
/// Nodes outside the body are always +1; equal distances resolve to +1.
pub fn classify_boundary(region_mask: &[bool], body_mask: &[bool], region_sdf: &GridSdf) -> Result<LabelGrid> {
    let spec = region_sdf.spec;
    let n = spec.len();
    if region_mask.len() != n || body_mask.len() != n {
        return Err(Error::Dimension {
            what: "classification masks",
            expected: n,
            got: region_mask.len().min(body_mask.len()),
        });
    }
    let mut true_faces = Buckets::new(spec);
    let mut interior_faces = Buckets::new(spec);
    for a in 0..n {
        let ca = spec.coords(a);
        for axis in 0..3 {
            if ca[axis] + 1 >= spec.dims[axis] {
                continue;
            }
            let mut cb = ca;
            cb[axis] += 1;
            let b = spec.index(cb[0], cb[1], cb[2]);
            if region_mask[a] == region_mask[b] {
                continue;
            }
            let outer = if region_mask[a] { b } else { a };
            let center = (spec.node_position(a) + spec.node_position(b)) * 0.5;
            if body_mask[outer] {
                interior_faces.insert(center);
            } else {
                true_faces.insert(center);
            }
        }
    }

    let labels = (0..n)
        .map(|i| {
            if !body_mask[i] || interior_faces.count == 0 {
                return 1;
            }
            let x = spec.node_position(i);
            let phi = region_sdf.values[i] as f64;
            let (g, _) = region_sdf.gradient(&x);
            let gn = g.norm();
            let xc = if gn > 1e-9 { x - g * (phi / gn) } else { x };
            let d_true = true_faces.nearest(&xc);
            let d_int = interior_faces.nearest(&xc);
            if d_int < d_true {
                -1
            } else {
                1
            }
        })
        .collect();
    Ok(LabelGrid { spec, labels })
}
