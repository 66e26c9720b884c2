//! Iso-surface extraction on the grid.
//!
//! Each cube is split into six tetrahedra around its main diagonal (the
//! Freudenthal split). Neighboring cubes split shared faces along the same
//! diagonal, so the triangulation is watertight without ambiguity tables.
//! Vertices are deduplicated per grid edge and placed by linear
//! interpolation; triangles face toward increasing values.

use std::collections::HashMap;

use super::grid::GridSdf;
use crate::geometry::{TriMesh, Vec3};

/// The six tetrahedra of a cube, as corner indices (bit 0 = +x, 1 = +y, 2 = +z).
const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

pub fn marching_cubes(grid: &GridSdf, iso: f64) -> TriMesh {
    let spec = &grid.spec;
    let mut mesh = TriMesh::default();
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();
    let [nx, ny, nz] = spec.dims;

    let mut vertex = |a: usize, b: usize, mesh: &mut TriMesh| -> u32 {
        let key = (a.min(b), a.max(b));
        *edge_vertex.entry(key).or_insert_with(|| {
            let va = grid.values[a] as f64;
            let vb = grid.values[b] as f64;
            let t = ((iso - va) / (vb - va)).clamp(0.0, 1.0);
            let p = spec.node_position(a) * (1.0 - t) + spec.node_position(b) * t;
            mesh.vertices.push(p);
            mesh.vertices.len() as u32 - 1
        })
    };

    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let corner = |c: usize| spec.index(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
                let nodes: [usize; 8] = std::array::from_fn(corner);
                let inside: [bool; 8] = std::array::from_fn(|c| (grid.values[nodes[c]] as f64) < iso);
                if inside.iter().all(|&b| b) || inside.iter().all(|&b| !b) {
                    continue;
                }
                for tet in TETS {
                    let ids = tet.map(|c| nodes[c]);
                    let ins: Vec<usize> = (0..4).filter(|&q| inside[tet[q]]).collect();
                    let outs: Vec<usize> = (0..4).filter(|&q| !inside[tet[q]]).collect();
                    let mut tris: Vec<[u32; 3]> = Vec::new();
                    match ins.len() {
                        1 | 3 => {
                            let (lone, others) = if ins.len() == 1 { (ins[0], &outs) } else { (outs[0], &ins) };
                            let v: Vec<u32> = others.iter().map(|&o| vertex(ids[lone], ids[o], &mut mesh)).collect();
                            tris.push([v[0], v[1], v[2]]);
                        }
                        2 => {
                            let (a, b) = (ins[0], ins[1]);
                            let (c, d) = (outs[0], outs[1]);
                            let ac = vertex(ids[a], ids[c], &mut mesh);
                            let ad = vertex(ids[a], ids[d], &mut mesh);
                            let bc = vertex(ids[b], ids[c], &mut mesh);
                            let bd = vertex(ids[b], ids[d], &mut mesh);
                            tris.push([ac, ad, bd]);
                            tris.push([ac, bd, bc]);
                        }
                        _ => {}
                    }
                    // orient each triangle from the inside corners toward the outside ones
                    let centroid = |qs: &[usize]| -> Vec3 {
                        qs.iter().map(|&q| spec.node_position(ids[q])).sum::<Vec3>() / qs.len() as f64
                    };
                    let dir = centroid(&outs) - centroid(&ins);
                    for mut t in tris {
                        let p = t.map(|v| mesh.vertices[v as usize]);
                        if (p[1] - p[0]).cross(&(p[2] - p[0])).dot(&dir) < 0.0 {
                            t.swap(1, 2);
                        }
                        mesh.triangles.push(t);
                    }
                }
            }
        }
    }
    mesh
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance_field::GridSpec;

    fn spec() -> GridSpec {
        GridSpec::new(Vec3::repeat(-1.0), 2.0 / 24.0, [25, 25, 25]).unwrap()
    }

    #[test]
    fn sphere_levelset_is_closed_and_on_sphere() {
        let c = Vec3::new(0.05, -0.03, 0.02);
        let r = 0.6;
        let g = GridSdf::from_fn(spec(), |p| (p - c).norm() - r);
        let m = marching_cubes(&g, 0.0);
        assert!(!m.is_empty());
        m.validate_closed().unwrap();
        assert!(m.signed_volume() > 0.0);
        let h = g.spec.spacing;
        for v in &m.vertices {
            assert!(((v - c).norm() - r).abs() <= h);
        }
        let vol = 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
        assert!((m.signed_volume() - vol).abs() / vol < 0.03);
    }

    #[test]
    fn constant_field_gives_empty_mesh() {
        let g = GridSdf::from_fn(spec(), |_| 0.5);
        assert!(marching_cubes(&g, 0.0).is_empty());
        assert!(marching_cubes(&g, 10.0).is_empty());
    }

    #[test]
    fn plane_vertices_lie_on_plane() {
        let n = Vec3::new(0.3, -0.5, 0.8).normalize();
        let g = GridSdf::from_fn(spec(), |p| p.dot(&n) - 0.1);
        let m = marching_cubes(&g, 0.0);
        assert!(!m.is_empty());
        for v in &m.vertices {
            assert!((v.dot(&n) - 0.1).abs() <= 1e-6);
        }
    }
}
