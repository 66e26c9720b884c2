//! Triangle meshes and the exact geometric predicates the distance pipeline
//! is built on: closest point on a triangle, triangle/box overlap, and ray
//! crossings for inside tests.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Self {
        Self {
            vertices,
            triangles,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    #[inline]
    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (lo.inf(v), hi.sup(v))
        }))
    }

    /// Checks that indices are in range and every undirected edge is shared by
    /// exactly two triangles traversing it in opposite directions.
    pub fn validate_closed(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        let mut directed: HashMap<(u32, u32), u32> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for &i in tri {
                if i >= n {
                    return Err(Error::Range {
                        what: "triangle vertex",
                        index: i as usize,
                        len: n as usize,
                    });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::validation(format!("triangle {t} is degenerate")));
            }
            for k in 0..3 {
                let e = (tri[k], tri[(k + 1) % 3]);
                *directed.entry(e).or_insert(0) += 1;
            }
        }
        for (&(a, b), &count) in &directed {
            if count != 1 {
                return Err(Error::validation(format!(
                    "edge ({a},{b}) traversed {count} times in the same direction (non-manifold or inconsistent orientation)"
                )));
            }
            if !directed.contains_key(&(b, a)) {
                return Err(Error::validation(format!("mesh is open at edge ({a},{b})")));
            }
        }
        Ok(())
    }

    /// Signed enclosed volume (positive for outward-facing triangles).
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn transformed(&self, f: impl Fn(&Vec3) -> Vec3) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(f).collect(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn read_obj(path: impl AsRef<Path>) -> Result<TriMesh> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse_obj(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Parses vertices and faces; polygons are fan-triangulated, other
    /// statements are ignored.
    pub fn parse_obj(text: &str) -> Result<TriMesh> {
        let mut mesh = TriMesh::default();
        for (lineno, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it
                        .take(3)
                        .map(|s| s.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
                    if c.len() != 3 {
                        return Err(Error::Parse(format!("line {}: short vertex", lineno + 1)));
                    }
                    mesh.vertices.push(Vec3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let nv = mesh.vertices.len() as i64;
                    let idx: Vec<u32> = it
                        .map(|tok| {
                            let head = tok.split('/').next().unwrap_or("");
                            let i: i64 = head
                                .parse()
                                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
                            let i = if i < 0 { nv + i } else { i - 1 };
                            if i < 0 || i >= nv {
                                return Err(Error::Parse(format!(
                                    "line {}: face index out of range",
                                    lineno + 1
                                )));
                            }
                            Ok(i as u32)
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() < 3 {
                        return Err(Error::Parse(format!("line {}: face with < 3 vertices", lineno + 1)));
                    }
                    for k in 1..idx.len() - 1 {
                        mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        Ok(mesh)
    }

    pub fn to_obj_string(&self) -> String {
        let mut s = String::with_capacity(self.vertices.len() * 40 + self.triangles.len() * 24);
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }

    pub fn write_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_obj_string())?;
        Ok(())
    }
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision
/// Detection, 5.1.5). Returns the point and its barycentric weights.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

pub fn point_triangle_distance(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    (closest_point_on_triangle(p, a, b, c).0 - p).norm()
}

/// Separating-axis overlap test between a triangle and an axis-aligned box
/// (Akenine-Möller). Touching counts as overlapping.
pub fn triangle_box_overlap(center: &Vec3, half: &Vec3, tri: &[Vec3; 3]) -> bool {
    let v0 = tri[0] - center;
    let v1 = tri[1] - center;
    let v2 = tri[2] - center;
    let edges = [v1 - v0, v2 - v1, v0 - v2];

    for k in 0..3 {
        let lo = v0[k].min(v1[k]).min(v2[k]);
        let hi = v0[k].max(v1[k]).max(v2[k]);
        if lo > half[k] || hi < -half[k] {
            return false;
        }
    }

    let normal = edges[0].cross(&edges[1]);
    let r = half.x * normal.x.abs() + half.y * normal.y.abs() + half.z * normal.z.abs();
    let s = normal.dot(&v0);
    if s.abs() > r {
        return false;
    }

    for e in &edges {
        for k in 0..3 {
            let mut axis = Vec3::zeros();
            axis[k] = 1.0;
            let a = axis.cross(e);
            if a.norm_squared() < 1e-300 {
                continue;
            }
            let p0 = a.dot(&v0);
            let p1 = a.dot(&v1);
            let p2 = a.dot(&v2);
            let r = half.x * a.x.abs() + half.y * a.y.abs() + half.z * a.z.abs();
            if p0.min(p1).min(p2) > r || p0.max(p1).max(p2) < -r {
                return false;
            }
        }
    }
    true
}

/// Outcome of intersecting the ray `origin + t·dir, t > 0` with a triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RayHit {
    Miss,
    /// Signed crossing: +1 when leaving through an outward face, -1 entering.
    Cross { t: f64, sign: i32 },
    /// The ray grazes an edge or vertex; caller must re-cast.
    Degenerate,
}

/// Ray/triangle crossing for rays along +x, evaluated in the yz projection
/// with exact orientation signs so that shared edges are never double counted
/// without being flagged.
pub fn ray_x_crossing(origin: &Vec3, tri: &[Vec3; 3]) -> RayHit {
    let (py, pz) = (origin.y, origin.z);
    let mut w = [0.0f64; 3];
    for k in 0..3 {
        let a = tri[(k + 1) % 3];
        let b = tri[(k + 2) % 3];
        // twice the signed area of (p, a, b) in the yz plane
        w[k] = (a.y - py) * (b.z - pz) - (a.z - pz) * (b.y - py);
    }
    let sum = w[0] + w[1] + w[2];
    if sum == 0.0 {
        // edge-on or collapsed: contributes nothing to the winding number
        return RayHit::Miss;
    }
    let pos = w.iter().all(|&x| x > 0.0);
    let neg = w.iter().all(|&x| x < 0.0);
    if !(pos || neg) {
        let zero = w.iter().any(|&x| x == 0.0);
        let mixed = w.iter().any(|&x| x > 0.0) && w.iter().any(|&x| x < 0.0);
        if zero && !mixed {
            return RayHit::Degenerate;
        }
        return RayHit::Miss;
    }
    let x = (w[0] * tri[0].x + w[1] * tri[1].x + w[2] * tri[2].x) / sum;
    let t = x - origin.x;
    if t == 0.0 {
        return RayHit::Degenerate;
    }
    if t < 0.0 {
        return RayHit::Miss;
    }
    // normal.x sign decides whether the ray exits (normal along +x) or enters
    let n = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
    RayHit::Cross {
        t,
        sign: if n.x > 0.0 { 1 } else { -1 },
    }
}

/// Winding number of `mesh` around `p`, measured by signed crossings of a ray
/// along +x. Degenerate hits trigger a re-cast from a jittered origin.
pub fn winding_number(mesh: &TriMesh, p: &Vec3) -> i32 {
    let scale = mesh
        .bounds()
        .map(|(lo, hi)| (hi - lo).amax().max(1e-12))
        .unwrap_or(1.0);
    let mut origin = *p;
    for attempt in 0..16 {
        let mut winding = 0;
        let mut degenerate = false;
        for t in 0..mesh.triangles.len() {
            match ray_x_crossing(&origin, &mesh.corners(t)) {
                RayHit::Miss => {}
                RayHit::Cross { sign, .. } => winding += sign,
                RayHit::Degenerate => {
                    degenerate = true;
                    break;
                }
            }
        }
        if !degenerate {
            return winding;
        }
        origin = *p + jitter(attempt) * scale * 1e-7;
    }
    0
}

/// Deterministic small yz-plane offsets used for re-casting degenerate rays.
pub(crate) fn jitter(attempt: usize) -> Vec3 {
    let golden = 0.618_033_988_749_894_9_f64;
    let k = attempt as f64 + 1.0;
    Vec3::new(0.0, (k * golden).fract() - 0.5, (k * golden * golden).fract() - 0.5) * 2.0
}

pub fn unsigned_distance_brute(mesh: &TriMesh, p: &Vec3) -> f64 {
    (0..mesh.triangles.len())
        .map(|t| {
            let [a, b, c] = mesh.corners(t);
            point_triangle_distance(p, &a, &b, &c)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Brute-force signed distance: exact distance to every triangle, sign from
/// the winding number.
pub fn signed_distance_brute(mesh: &TriMesh, p: &Vec3) -> f64 {
    let d = unsigned_distance_brute(mesh, p);
    if winding_number(mesh, p) != 0 {
        -d
    } else {
        d
    }
}

/// Axis-aligned box with outward-facing triangles.
pub fn box_mesh(lo: Vec3, hi: Vec3) -> TriMesh {
    let v = (0..8)
        .map(|i| {
            Vec3::new(
                if i & 1 != 0 { hi.x } else { lo.x },
                if i & 2 != 0 { hi.y } else { lo.y },
                if i & 4 != 0 { hi.z } else { lo.z },
            )
        })
        .collect();
    let quads = [
        [0, 4, 6, 2], // -x
        [1, 3, 7, 5], // +x
        [0, 1, 5, 4], // -y
        [2, 6, 7, 3], // +y
        [0, 2, 3, 1], // -z
        [4, 5, 7, 6], // +z
    ];
    let mut tris = Vec::with_capacity(12);
    for q in quads {
        tris.push([q[0], q[1], q[2]]);
        tris.push([q[0], q[2], q[3]]);
    }
    TriMesh::new(v, tris)
}

/// Icosphere built by repeated midpoint subdivision of an icosahedron.
pub fn icosphere(center: Vec3, radius: f64, subdivisions: u32) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut tris: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                verts.len() as u32 - 1
            })
        };
        let mut next = Vec::with_capacity(tris.len() * 4);
        for [a, b, c] in tris {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    let verts = verts.into_iter().map(|v| center + v * radius).collect();
    TriMesh::new(verts, tris)
}

/// Capsule (cylinder with hemispherical caps) along +x, starting with the
/// left pole at `x0 - radius` and ending with the right pole at
/// `x1 + radius`. The axis passes through `(·, axis_y, axis_z)`.
pub fn capsule_x(
    x0: f64,
    x1: f64,
    radius: f64,
    axis_y: f64,
    axis_z: f64,
    segments: usize,
    cap_rings: usize,
    body_rings: usize,
) -> TriMesh {
    assert!(segments >= 3 && cap_rings >= 1 && body_rings >= 1 && x1 >= x0);
    // profile rings (x, rho) strictly between the poles
    let mut profile = Vec::new();
    for k in 1..=cap_rings {
        let a = std::f64::consts::FRAC_PI_2 * (1.0 - k as f64 / cap_rings as f64);
        profile.push((x0 - radius * a.sin(), radius * a.cos()));
    }
    for k in 1..body_rings {
        let s = k as f64 / body_rings as f64;
        profile.push((x0 + (x1 - x0) * s, radius));
    }
    for k in 0..cap_rings {
        let a = std::f64::consts::FRAC_PI_2 * (k as f64 / cap_rings as f64);
        profile.push((x1 + radius * a.sin(), radius * a.cos()));
    }
    let mut verts = vec![Vec3::new(x0 - radius, axis_y, axis_z)];
    for &(x, rho) in &profile {
        for s in 0..segments {
            let phi = std::f64::consts::TAU * s as f64 / segments as f64;
            verts.push(Vec3::new(x, axis_y + rho * phi.cos(), axis_z + rho * phi.sin()));
        }
    }
    verts.push(Vec3::new(x1 + radius, axis_y, axis_z));
    let last = verts.len() as u32 - 1;
    let ring = |r: usize, s: usize| (1 + r * segments + s % segments) as u32;
    let mut tris = Vec::new();
    for s in 0..segments {
        tris.push([0, ring(0, s + 1), ring(0, s)]);
    }
    for r in 0..profile.len() - 1 {
        for s in 0..segments {
            let (a, b) = (ring(r, s), ring(r, s + 1));
            let (c, d) = (ring(r + 1, s), ring(r + 1, s + 1));
            tris.push([a, b, d]);
            tris.push([a, d, c]);
        }
    }
    let lr = profile.len() - 1;
    for s in 0..segments {
        tris.push([last, ring(lr, s), ring(lr, s + 1)]);
    }
    TriMesh::new(verts, tris)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn primitives_are_closed_and_outward() {
        for mesh in [
            box_mesh(Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0)),
            icosphere(Vec3::new(0.1, 0.2, 0.3), 0.7, 2),
            capsule_x(0.0, 2.0, 0.3, 0.0, 0.0, 12, 4, 6),
        ] {
            mesh.validate_closed().unwrap();
            assert!(mesh.signed_volume() > 0.0);
        }
        let b = box_mesh(Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0));
        assert_relative_eq!(b.signed_volume(), 6.0, epsilon = 1e-12);
    }

    #[test]
    fn open_mesh_is_rejected() {
        let mut m = box_mesh(Vec3::zeros(), Vec3::repeat(1.0));
        m.triangles.pop();
        assert!(matches!(m.validate_closed(), Err(Error::Validation(_))));
    }

    #[test]
    fn closest_point_regions() {
        let a = Vec3::new(0.0, 0.0, 0.0);
        let b = Vec3::new(1.0, 0.0, 0.0);
        let c = Vec3::new(0.0, 1.0, 0.0);
        // face interior
        let p = Vec3::new(0.25, 0.25, 2.0);
        assert_relative_eq!(point_triangle_distance(&p, &a, &b, &c), 2.0, epsilon = 1e-12);
        // vertex region
        let p = Vec3::new(-1.0, -1.0, 0.0);
        assert_relative_eq!(point_triangle_distance(&p, &a, &b, &c), 2f64.sqrt(), epsilon = 1e-12);
        // hypotenuse edge region
        let p = Vec3::new(1.0, 1.0, 0.0);
        assert_relative_eq!(point_triangle_distance(&p, &a, &b, &c), 0.5f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn winding_inside_outside_including_degenerate_rays() {
        let m = box_mesh(Vec3::zeros(), Vec3::repeat(1.0));
        assert_eq!(winding_number(&m, &Vec3::new(0.5, 0.5, 0.5)).abs(), 1);
        assert_eq!(winding_number(&m, &Vec3::new(1.5, 0.5, 0.5)), 0);
        // the ray through the box passes the diagonal edge of each face quad
        assert_eq!(winding_number(&m, &Vec3::new(0.25, 0.25, 0.25)).abs(), 1);
        assert_eq!(winding_number(&m, &Vec3::new(-0.5, 0.5, 0.5)), 0);
    }

    #[test]
    fn triangle_box_overlap_cases() {
        let tri = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ];
        let half = Vec3::repeat(0.1);
        assert!(triangle_box_overlap(&Vec3::new(0.2, 0.2, 0.05), &half, &tri));
        assert!(!triangle_box_overlap(&Vec3::new(0.2, 0.2, 0.3), &half, &tri));
        assert!(!triangle_box_overlap(&Vec3::new(0.8, 0.8, 0.0), &half, &tri));
    }

    #[test]
    fn obj_round_trip() {
        let m = icosphere(Vec3::zeros(), 1.0, 1);
        let back = TriMesh::parse_obj(&m.to_obj_string()).unwrap();
        assert_eq!(back.triangles, m.triangles);
        for (a, b) in back.vertices.iter().zip(&m.vertices) {
            assert_eq!(a, b);
        }
    }
}
