//! Exact signed distances on the nodes of cells cut by a closed mesh.

use rayon::prelude::*;

use super::grid::GridSpec;
use crate::error::{Error, Result};
use crate::geometry::{closest_point_on_triangle, jitter, ray_x_crossing, triangle_box_overlap, RayHit, TriMesh, Vec3};

/// A partially filled grid: `known[i]` marks nodes carrying a value.
#[derive(Debug, Clone)]
pub struct SdfBand {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub known: Vec<bool>,
}

impl SdfBand {
    pub fn empty(spec: GridSpec) -> Self {
        Self {
            spec,
            values: vec![f64::NAN; spec.len()],
            known: vec![false; spec.len()],
        }
    }

    pub fn set(&mut self, idx: usize, v: f64) {
        self.values[idx] = v;
        self.known[idx] = true;
    }

    pub fn known_count(&self) -> usize {
        self.known.iter().filter(|&&k| k).count()
    }
}

/// Cells (indexed by their min-corner node) intersected by each triangle.
struct CutCells {
    cells: Vec<Vec<u32>>,
    cdims: [usize; 3],
}

impl CutCells {
    fn build(mesh: &TriMesh, spec: &GridSpec) -> Self {
        let cdims = [spec.dims[0] - 1, spec.dims[1] - 1, spec.dims[2] - 1];
        let mut cells: Vec<Vec<u32>> = vec![Vec::new(); cdims[0] * cdims[1] * cdims[2]];
        let h = spec.spacing;
        let half = Vec3::repeat(0.5 * h);
        for t in 0..mesh.triangles.len() {
            let tri = mesh.corners(t);
            let lo = tri[0].inf(&tri[1]).inf(&tri[2]);
            let hi = tri[0].sup(&tri[1]).sup(&tri[2]);
            let mut r = [(0usize, 0usize); 3];
            let mut outside = false;
            for a in 0..3 {
                let l = ((lo[a] - spec.origin[a]) / h).floor() as i64 - 1;
                let u = ((hi[a] - spec.origin[a]) / h).floor() as i64 + 1;
                let l = l.max(0);
                let u = u.min(cdims[a] as i64 - 1);
                if l > u {
                    outside = true;
                }
                r[a] = (l as usize, u.max(0) as usize);
            }
            if outside {
                continue;
            }
            for k in r[2].0..=r[2].1 {
                for j in r[1].0..=r[1].1 {
                    for i in r[0].0..=r[0].1 {
                        let center = spec.position(i, j, k) + half;
                        if triangle_box_overlap(&center, &half, &tri) {
                            cells[i + cdims[0] * (j + cdims[1] * k)].push(t as u32);
                        }
                    }
                }
            }
        }
        Self { cells, cdims }
    }

    #[inline]
    fn cell(&self, i: usize, j: usize, k: usize) -> &[u32] {
        &self.cells[i + self.cdims[0] * (j + self.cdims[1] * k)]
    }
}

/// Winding numbers for the given nodes of one x-row, from signed crossings of
/// rays cast along +x. Degenerate rows are re-cast from a jittered origin.
fn row_windings(mesh: &TriMesh, candidates: &[u32], spec: &GridSpec, j: usize, k: usize, xs: &[f64]) -> Vec<i32> {
    let base = spec.position(0, j, k);
    let scale = spec.box_side().max(1e-12);
    let mut origin = Vec3::new(spec.origin.x - spec.spacing, base.y, base.z);
    for attempt in 0..16 {
        let mut crossings: Vec<(f64, i32)> = Vec::new();
        let mut degenerate = false;
        for &t in candidates {
            match ray_x_crossing(&origin, &mesh.corners(t as usize)) {
                RayHit::Miss => {}
                RayHit::Cross { t, sign } => crossings.push((origin.x + t, sign)),
                RayHit::Degenerate => {
                    degenerate = true;
                    break;
                }
            }
        }
        if !degenerate {
            crossings.sort_by(|a, b| a.0.total_cmp(&b.0));
            // winding at x = sum of signs of crossings beyond x
            let total: i32 = crossings.iter().map(|c| c.1).sum();
            let mut out = Vec::with_capacity(xs.len());
            let mut c = 0;
            let mut passed = 0;
            for &x in xs {
                while c < crossings.len() && crossings[c].0 <= x {
                    passed += crossings[c].1;
                    c += 1;
                }
                out.push(total - passed);
            }
            return out;
        }
        origin = Vec3::new(origin.x, base.y, base.z) + jitter(attempt) * scale * 1e-7;
    }
    vec![0; xs.len()]
}

/// Buckets triangles by the yz cells their projection overlaps, so rows only
/// test nearby triangles.
fn yz_buckets(mesh: &TriMesh, spec: &GridSpec) -> (Vec<Vec<u32>>, [usize; 2]) {
    let d = [spec.dims[1], spec.dims[2]];
    let mut buckets = vec![Vec::new(); d[0] * d[1]];
    let h = spec.spacing;
    for t in 0..mesh.triangles.len() {
        let tri = mesh.corners(t);
        let lo = tri[0].inf(&tri[1]).inf(&tri[2]);
        let hi = tri[0].sup(&tri[1]).sup(&tri[2]);
        let j0 = (((lo.y - spec.origin.y) / h).floor() as i64 - 1).max(0);
        let j1 = (((hi.y - spec.origin.y) / h).ceil() as i64 + 1).min(d[0] as i64 - 1);
        let k0 = (((lo.z - spec.origin.z) / h).floor() as i64 - 1).max(0);
        let k1 = (((hi.z - spec.origin.z) / h).ceil() as i64 + 1).min(d[1] as i64 - 1);
        for k in k0..=k1 {
            for j in j0..=j1 {
                buckets[j as usize + d[0] * k as usize].push(t as u32);
            }
        }
    }
    (buckets, d)
}

/// Sign for every node of the lattice (true = inside), by winding number.
pub fn inside_mask(mesh: &TriMesh, spec: &GridSpec) -> Vec<bool> {
    let (buckets, d) = yz_buckets(mesh, spec);
    let xs: Vec<f64> = (0..spec.dims[0]).map(|i| spec.position(i, 0, 0).x).collect();
    let rows: Vec<Vec<i32>> = (0..d[0] * d[1])
        .into_par_iter()
        .map(|r| {
            let (j, k) = (r % d[0], r / d[0]);
            let b = &buckets[r];
            if b.is_empty() {
                vec![0; xs.len()]
            } else {
                row_windings(mesh, b, spec, j, k, &xs)
            }
        })
        .collect();
    let mut mask = vec![false; spec.len()];
    for (r, w) in rows.iter().enumerate() {
        let (j, k) = (r % d[0], r / d[0]);
        for (i, &wi) in w.iter().enumerate() {
            mask[spec.index(i, j, k)] = wi != 0;
        }
    }
    mask
}

/// Closest surface point of a band node.
#[derive(Debug, Clone, Copy)]
pub struct BandHit {
    pub node: usize,
    pub distance: f64,
    pub triangle: u32,
    pub barycentric: [f64; 3],
}

/// Nearest triangle for every node of every cut cell, searching the cut
/// triangles of the surrounding cells.
pub fn band_closest(mesh: &TriMesh, spec: &GridSpec) -> Result<Vec<BandHit>> {
    mesh.validate_closed()?;
    let cut = CutCells::build(mesh, spec);
    let mut is_band = vec![false; spec.len()];
    let cd = cut.cdims;
    for k in 0..cd[2] {
        for j in 0..cd[1] {
            for i in 0..cd[0] {
                if !cut.cell(i, j, k).is_empty() {
                    for c in 0..8 {
                        is_band[spec.index(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1))] = true;
                    }
                }
            }
        }
    }
    let band_nodes: Vec<usize> = (0..spec.len()).filter(|&n| is_band[n]).collect();
    if band_nodes.is_empty() {
        return Err(Error::EmptyBand);
    }
    Ok(band_nodes
        .par_iter()
        .map(|&n| {
            let [i, j, k] = spec.coords(n);
            let p = spec.node_position(n);
            let mut hit = BandHit {
                node: n,
                distance: f64::INFINITY,
                triangle: 0,
                barycentric: [1.0, 0.0, 0.0],
            };
            let lo = |c: usize| c.saturating_sub(2);
            for ck in lo(k)..=(k + 1).min(cd[2] - 1) {
                for cj in lo(j)..=(j + 1).min(cd[1] - 1) {
                    for ci in lo(i)..=(i + 1).min(cd[0] - 1) {
                        for &t in cut.cell(ci, cj, ck) {
                            let [a, b, c] = mesh.corners(t as usize);
                            let (q, bary) = closest_point_on_triangle(&p, &a, &b, &c);
                            let d = (q - p).norm();
                            // lowest triangle index wins ties, whatever the visiting order
                            if d < hit.distance || (d == hit.distance && t < hit.triangle) {
                                hit.distance = d;
                                hit.triangle = t;
                                hit.barycentric = bary;
                            }
                        }
                    }
                }
            }
            hit
        })
        .collect())
}

/// Exact signed distance at every node of every cut cell; all other nodes are
/// left unknown. Sign comes from the ray winding number.
pub fn exact_band(mesh: &TriMesh, spec: &GridSpec) -> Result<SdfBand> {
    let hits = band_closest(mesh, spec)?;
    let inside = inside_mask(mesh, spec);
    let mut band = SdfBand::empty(*spec);
    for h in &hits {
        let d = h.distance;
        band.set(h.node, if inside[h.node] && d > 0.0 { -d } else { d });
    }
    Ok(band)
}
