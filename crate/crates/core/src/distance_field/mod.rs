//! Ground-truth distance fields: mesh → grid SDF (exact cut-cell band swept
//! outward by Fast Marching), sampling, boundary provenance labels and
//! iso-surface extraction.

mod band;
mod classify;
mod fmm;
mod grid;
mod mcubes;

pub use band::{band_closest, exact_band, inside_mask, BandHit, SdfBand};
pub use classify::classify_boundary;
pub use fmm::fast_march;
pub use grid::{GridSdf, GridSpec, LabelGrid, GRID_MAGIC, LABEL_MAGIC, PARTITION_MAGIC};
pub(crate) use grid::{read_f32, read_u32};
pub use mcubes::marching_cubes;

use crate::error::Result;
use crate::geometry::TriMesh;

/// Full mesh → grid pipeline.
pub fn grid_sdf_from_mesh(mesh: &TriMesh, spec: &GridSpec) -> Result<GridSdf> {
    fast_march(&exact_band(mesh, spec)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{box_mesh, icosphere, signed_distance_brute, Vec3};
    use rand::{Rng, SeedableRng};

    #[test]
    fn sphere_fast_march_within_two_cells() {
        let c = Vec3::new(0.01, -0.02, 0.015);
        let r = 0.55;
        let spec = GridSpec::new(Vec3::repeat(-1.0), 2.0 / 31.0, [32, 32, 32]).unwrap();
        let g = grid_sdf_from_mesh(&icosphere(c, r, 4), &spec).unwrap();
        let h = spec.spacing;
        let worst = (0..spec.len())
            .map(|i| (g.values[i] as f64 - ((spec.node_position(i) - c).norm() - r)).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 2.0 * h, "max error {worst} vs h {h}");
    }

    #[test]
    fn pipeline_matches_brute_force_on_small_grid() {
        let mesh = box_mesh(Vec3::new(-0.4, -0.3, -0.2), Vec3::new(0.35, 0.3, 0.25));
        let spec = GridSpec::new(Vec3::repeat(-0.6), 1.2 / 15.0, [16, 16, 16]).unwrap();
        let g = grid_sdf_from_mesh(&mesh, &spec).unwrap();
        let h = spec.spacing;
        for i in 0..spec.len() {
            let bf = signed_distance_brute(&mesh, &spec.node_position(i));
            assert!((g.values[i] as f64 - bf).abs() <= 2.0 * h, "node {i}");
        }
    }

    #[test]
    fn fast_march_grows_away_from_band() {
        let mesh = icosphere(Vec3::zeros(), 0.5, 2);
        let spec = GridSpec::new(Vec3::repeat(-1.0), 0.1, [21, 21, 21]).unwrap();
        let band = exact_band(&mesh, &spec).unwrap();
        let g = fast_march(&band).unwrap();
        for i in (0..spec.len()).filter(|&i| !band.known[i]) {
            let v = (g.values[i] as f64).abs();
            let min_nb = spec
                .neighbors(i)
                .map(|n| (g.values[n] as f64).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(v > min_nb, "node {i}");
        }
    }

    #[test]
    fn eikonal_property_on_ground_truth() {
        let mesh = icosphere(Vec3::new(0.1, 0.0, 0.0), 0.6, 3);
        let spec = GridSpec::new(Vec3::repeat(-1.0), 2.0 / 39.0, [40, 40, 40]).unwrap();
        let g = grid_sdf_from_mesh(&mesh, &spec).unwrap();
        let h = spec.spacing;
        let lg = g.box_side();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        for _ in 0..4000 {
            let idx = rng.gen_range(0..spec.len());
            let [i, j, k] = spec.coords(idx);
            if [i, j, k].iter().any(|&c| c == 0 || c == 39) {
                continue;
            }
            let v = (g.values[idx] as f64).abs();
            if !(v > 2.0 * h && v < 0.2 * lg) {
                continue;
            }
            // skip the medial point of the sphere
            if (spec.node_position(idx) - Vec3::new(0.1, 0.0, 0.0)).norm() < 2.0 * h {
                continue;
            }
            let gx = (g.at(i + 1, j, k) - g.at(i - 1, j, k)) / (2.0 * h);
            let gy = (g.at(i, j + 1, k) - g.at(i, j - 1, k)) / (2.0 * h);
            let gz = (g.at(i, j, k + 1) - g.at(i, j, k - 1)) / (2.0 * h);
            let n = (gx * gx + gy * gy + gz * gz).sqrt();
            assert!((0.85..=1.15).contains(&n), "|grad| = {n} at node {idx}");
            checked += 1;
        }
        assert!(checked > 200);
    }
}
