//! Overlapping joint regions on the body voxelization: skin weights are
//! diffused into the volume, thresholded into seeds, grown to cover the body
//! and dilated until neighboring regions overlap enough for the min-blend.

use std::collections::VecDeque;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::distance_field::{
    band_closest, fast_march, marching_cubes, read_u32, GridSdf, GridSpec, SdfBand, PARTITION_MAGIC,
};
use crate::error::{Error, Result};
use crate::geometry::{TriMesh, Vec3};
use crate::rig::{SkinWeights, SkinnedMesh};

pub const MAX_REGIONS: usize = 32;

/// Dense per-node skinning weights, one channel per transform.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    pub spec: GridSpec,
    pub channels: usize,
    /// Node-major: `values[node * channels + c]`.
    pub values: Vec<f64>,
    pub body: Vec<bool>,
}

impl WeightField {
    pub fn node(&self, n: usize) -> &[f64] {
        &self.values[n * self.channels..(n + 1) * self.channels]
    }

    /// Trilinear interpolation of all channels, clamped to the lattice.
    pub fn sample(&self, x: &Vec3) -> Vec<f64> {
        let s = &self.spec;
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let u = ((x[a] - s.origin[a]) / s.spacing).clamp(0.0, (s.dims[a] - 1) as f64);
            let b = (u.floor() as usize).min(s.dims[a] - 2);
            base[a] = b;
            frac[a] = u - b as f64;
        }
        let mut out = vec![0.0; self.channels];
        for c in 0..8 {
            let o = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
            let w: f64 = (0..3).map(|a| if o[a] == 1 { frac[a] } else { 1.0 - frac[a] }).product();
            if w == 0.0 {
                continue;
            }
            let n = s.index(base[0] + o[0], base[1] + o[1], base[2] + o[2]);
            for (acc, v) in out.iter_mut().zip(self.node(n)) {
                *acc += w * v;
            }
        }
        out
    }

    /// Sparse skin weights for arbitrary points, negligible entries dropped
    /// and the rest renormalized.
    pub fn skin_points(&self, points: &[Vec3]) -> SkinWeights {
        points
            .iter()
            .map(|p| {
                let w = self.sample(p);
                let mut row: Vec<(u32, f64)> = w
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v > 1e-9)
                    .map(|(c, &v)| (c as u32, v))
                    .collect();
                let sum: f64 = row.iter().map(|e| e.1).sum();
                for e in &mut row {
                    e.1 /= sum;
                }
                row
            })
            .collect()
    }
}

/// Solves the grid Laplace equation on `free` nodes, holding every other node
/// that is not `inactive` fixed. Missing or inactive neighbors drop out of the
/// stencil (zero-flux). Successive over-relaxation runs until the largest
/// residual falls below `tol`; returns the sweep count.
pub fn harmonic_extension(
    spec: &GridSpec,
    free: &[bool],
    inactive: &[bool],
    channels: usize,
    values: &mut [f64],
    tol: f64,
) -> Result<usize> {
    let n = spec.len();
    if free.len() != n || inactive.len() != n || values.len() != n * channels {
        return Err(Error::Dimension {
            what: "harmonic extension arrays",
            expected: n,
            got: free.len(),
        });
    }
    // every free component must touch fixed data
    let mut reached = vec![false; n];
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| !free[i] && !inactive[i]).collect();
    for &i in &queue {
        reached[i] = true;
    }
    while let Some(i) = queue.pop_front() {
        for nb in spec.neighbors(i) {
            if free[nb] && !reached[nb] {
                reached[nb] = true;
                queue.push_back(nb);
            }
        }
    }
    let orphans = (0..n).filter(|&i| free[i] && !reached[i]).count();
    if orphans > 0 {
        return Err(Error::Disconnected(orphans));
    }

    let nodes: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
    if nodes.is_empty() {
        return Ok(0);
    }
    let longest = *spec.dims.iter().max().unwrap() as f64;
    let omega = 2.0 / (1.0 + (std::f64::consts::PI / longest).sin());
    let mut avg = vec![0.0; channels];
    let max_sweeps = 200_000;
    for sweep in 1..=max_sweeps {
        let mut worst = 0.0f64;
        for &i in &nodes {
            avg.iter_mut().for_each(|a| *a = 0.0);
            let mut count = 0;
            for nb in spec.neighbors(i) {
                if !inactive[nb] {
                    count += 1;
                    for c in 0..channels {
                        avg[c] += values[nb * channels + c];
                    }
                }
            }
            if count == 0 {
                continue;
            }
            for c in 0..channels {
                let r = avg[c] / count as f64 - values[i * channels + c];
                worst = worst.max(r.abs());
                values[i * channels + c] += omega * r;
            }
        }
        if worst < tol {
            return Ok(sweep);
        }
    }
    Err(Error::validation(format!("Laplace solve did not converge in {max_sweeps} sweeps")))
}

/// Extends surface skin weights into the body volume.
///
/// Nodes of cells cut by the surface take the weights at their closest
/// surface point; interior nodes get the discrete harmonic extension of those
/// values. Remaining exterior nodes copy the nearest assigned node so the field
/// can be sampled anywhere.
pub fn diffuse_weights(skin: &SkinnedMesh, body_mask: &[bool], spec: &GridSpec, channels: usize) -> Result<WeightField> {
    let n = spec.len();
    if body_mask.len() != n {
        return Err(Error::Dimension {
            what: "body mask",
            expected: n,
            got: body_mask.len(),
        });
    }
    if channels == 0 || channels > MAX_REGIONS {
        return Err(Error::validation(format!("weight channel count {channels} outside 1..={MAX_REGIONS}")));
    }
    if let Some(t) = skin.max_transform_index() {
        if t as usize >= channels {
            return Err(Error::validation(format!("skin references transform {t} but only {channels} exist")));
        }
    }
    let mesh = &skin.mesh;
    let mut values = vec![0.0; n * channels];
    let mut assigned = vec![false; n];
    for hit in band_closest(mesh, spec)? {
        let tri = mesh.triangles[hit.triangle as usize];
        for (k, &v) in tri.iter().enumerate() {
            for &(t, w) in &skin.weights[v as usize] {
                values[hit.node * channels + t as usize] += hit.barycentric[k] * w;
            }
        }
        assigned[hit.node] = true;
    }
    let free: Vec<bool> = (0..n).map(|i| body_mask[i] && !assigned[i]).collect();
    let inactive: Vec<bool> = (0..n).map(|i| !body_mask[i] && !assigned[i]).collect();
    harmonic_extension(spec, &free, &inactive, channels, &mut values, 1e-7)?;
    for i in 0..n {
        if free[i] {
            assigned[i] = true;
        }
    }

    // layered flood fill of the exterior, lowest-index source per layer
    let mut frontier: Vec<usize> = (0..n).filter(|&i| assigned[i]).collect();
    while !frontier.is_empty() {
        let mut next: Vec<(usize, usize)> = Vec::new();
        for &i in &frontier {
            for nb in spec.neighbors(i) {
                if !assigned[nb] {
                    next.push((nb, i));
                }
            }
        }
        next.sort_unstable();
        next.dedup_by_key(|e| e.0);
        for &(nb, src) in &next {
            assigned[nb] = true;
            for c in 0..channels {
                values[nb * channels + c] = values[src * channels + c];
            }
        }
        frontier = next.into_iter().map(|e| e.0).collect();
    }

    for i in 0..n {
        let sum: f64 = values[i * channels..(i + 1) * channels].iter().sum();
        if (sum - 1.0).abs() > 1e-4 {
            return Err(Error::validation(format!("diffused weights at node {i} sum to {sum}")));
        }
    }
    Ok(WeightField {
        spec: *spec,
        channels,
        values,
        body: body_mask.to_vec(),
    })
}

/// Per-node region bitmasks (bit `i` set = member of region `i`).
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPartition {
    pub spec: GridSpec,
    pub count: usize,
    pub masks: Vec<u32>,
}

impl RegionPartition {
    pub fn contains(&self, node: usize, region: usize) -> bool {
        self.masks[node] >> region & 1 == 1
    }

    pub fn regions(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.count).filter(move |&r| self.contains(node, r))
    }

    pub fn region_mask(&self, region: usize) -> Vec<bool> {
        (0..self.masks.len()).map(|n| self.contains(n, region)).collect()
    }

    pub fn region_size(&self, region: usize) -> usize {
        (0..self.masks.len()).filter(|&n| self.contains(n, region)).count()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.spec.write_header(&mut w, PARTITION_MAGIC)?;
        for m in &self.masks {
            w.write_all(&m.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// The region count is not stored; it is recovered from the highest set bit.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let spec = GridSpec::read_header(&mut r, PARTITION_MAGIC, path)?;
        let masks = (0..spec.len())
            .map(|_| read_u32(&mut r))
            .collect::<std::io::Result<Vec<u32>>>()
            .map_err(|e| Error::format(path, e.to_string()))?;
        let all = masks.iter().fold(0u32, |a, &m| a | m);
        let count = (32 - all.leading_zeros()) as usize;
        Ok(Self { spec, count, masks })
    }
}

/// Bitmask of channels at or above `threshold`, for body nodes only.
pub fn seed_regions(weights: &WeightField, threshold: f64) -> Vec<u32> {
    (0..weights.spec.len())
        .map(|n| {
            if !weights.body[n] {
                return 0;
            }
            weights
                .node(n)
                .iter()
                .enumerate()
                .filter(|(_, &w)| w >= threshold)
                .fold(0u32, |m, (c, _)| m | 1 << c)
        })
        .collect()
}

/// Multi-source breadth-first growth of the seeds over body nodes. Each
/// unassigned node joins the lowest region index among its neighbors assigned
/// in earlier layers.
pub fn grow_regions(seeds: &[u32], body_mask: &[bool], spec: &GridSpec, count: usize) -> Result<RegionPartition> {
    let n = spec.len();
    if seeds.len() != n || body_mask.len() != n {
        return Err(Error::Dimension {
            what: "seed grid",
            expected: n,
            got: seeds.len().min(body_mask.len()),
        });
    }
    let mut masks: Vec<u32> = (0..n).map(|i| if body_mask[i] { seeds[i] } else { 0 }).collect();
    let mut frontier: Vec<usize> = (0..n).filter(|&i| masks[i] != 0).collect();
    while !frontier.is_empty() {
        let mut next: Vec<(usize, u32)> = Vec::new();
        for &i in &frontier {
            let lowest = masks[i].trailing_zeros();
            for nb in spec.neighbors(i) {
                if body_mask[nb] && masks[nb] == 0 {
                    next.push((nb, lowest));
                }
            }
        }
        next.sort_unstable();
        next.dedup_by_key(|e| e.0);
        for &(nb, r) in &next {
            masks[nb] = 1 << r;
        }
        frontier = next.into_iter().map(|e| e.0).collect();
    }
    let missing = (0..n).filter(|&i| body_mask[i] && masks[i] == 0).count();
    if missing > 0 {
        return Err(Error::Unreachable(missing));
    }
    Ok(RegionPartition { spec: *spec, count, masks })
}

/// Grows every region by `margin` 6-neighbor steps inside the body.
pub fn dilate_regions(partition: &RegionPartition, body_mask: &[bool], margin: usize) -> RegionPartition {
    let spec = &partition.spec;
    let mut masks = partition.masks.clone();
    for _ in 0..margin {
        let prev = masks.clone();
        for i in 0..spec.len() {
            if !body_mask[i] {
                continue;
            }
            for nb in spec.neighbors(i) {
                masks[i] |= prev[nb];
            }
        }
    }
    RegionPartition {
        spec: *spec,
        count: partition.count,
        masks,
    }
}

/// Dilates with increasing margins, starting at `start`, until `accept`
/// returns true. Returns the accepted partition and its margin.
pub fn auto_dilate(
    grown: &RegionPartition,
    body_mask: &[bool],
    start: usize,
    max: usize,
    mut accept: impl FnMut(&RegionPartition, usize) -> Result<bool>,
) -> Result<(RegionPartition, usize)> {
    for margin in start..=max {
        let p = dilate_regions(grown, body_mask, margin);
        if accept(&p, margin)? {
            return Ok((p, margin));
        }
    }
    Err(Error::validation(format!(
        "regions still leave nodes with no valid region after dilating by {max} cells"
    )))
}

/// Closed surface of one region at rest: the body surface where the region
/// reaches it, and a smoothed voxel cut elsewhere.
///
/// The region mask is extended two cells into the exterior so that its own
/// distance field never trims the body surface; intersecting with the body
/// field then restores the true boundary.
pub fn region_surface(partition: &RegionPartition, region: usize, body: &GridSdf) -> Result<TriMesh> {
    let spec = &partition.spec;
    if body.spec != *spec {
        return Err(Error::validation("body field and partition use different grids"));
    }
    let mut mask = partition.region_mask(region);
    if !mask.iter().any(|&m| m) {
        return Err(Error::validation(format!("region {region} is empty")));
    }
    let outside: Vec<bool> = body.values.iter().map(|&v| v >= 0.0).collect();
    for _ in 0..2 {
        let prev = mask.clone();
        for i in 0..spec.len() {
            if outside[i] && !prev[i] && spec.neighbors(i).any(|nb| prev[nb]) {
                mask[i] = true;
            }
        }
    }
    let rho = mask_distance(&mask, spec)?;
    let combined: Vec<f32> = body.values.iter().zip(&rho.values).map(|(&b, &r)| b.max(r)).collect();
    Ok(marching_cubes(&GridSdf::new(*spec, combined)?, 0.0))
}

/// Signed distance to the boundary of a voxel set, with the boundary placed
/// halfway between differing 6-neighbors.
pub fn mask_distance(mask: &[bool], spec: &GridSpec) -> Result<GridSdf> {
    let half = 0.5 * spec.spacing;
    let mut band = SdfBand::empty(*spec);
    for i in 0..spec.len() {
        if spec.neighbors(i).any(|nb| mask[nb] != mask[i]) {
            band.set(i, if mask[i] { -half } else { half });
        }
    }
    fast_march(&band)
}
