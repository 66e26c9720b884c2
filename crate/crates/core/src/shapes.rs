//! Analytic articulated test characters.

use crate::error::Result;
use crate::geometry::{capsule_x, Vec3};
use crate::rig::{Joint, Rig, SkinWeights, SkinnedMesh};

/// Two capsule bones along +x joined by a z-axis hinge.
///
/// The tube runs from `x = 0` to `x = 2·length` with hemispherical caps. Joint 0
/// is a fixed root at the origin; joint 1 bends the second bone about a pivot on
/// the bottom of the tube at `(length, -radius, 0)`, so negative angles fold the
/// forearm downward without the bottom skin crossing itself. Skin weights
/// blend smoothly over `length ± blend`.
#[derive(Debug, Clone, PartialEq)]
pub struct HingedCapsule {
    pub radius: f64,
    pub length: f64,
    pub blend: f64,
    pub segments: usize,
    /// Hinge range in degrees: `[min, inc, max]`.
    pub range: [f64; 3],
}

impl Default for HingedCapsule {
    fn default() -> Self {
        Self {
            radius: 0.25,
            length: 1.0,
            blend: 0.35,
            segments: 32,
            range: [-120.0, 10.0, 0.0],
        }
    }
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

impl HingedCapsule {
    pub fn pivot(&self) -> Vec3 {
        Vec3::new(self.length, -self.radius, 0.0)
    }

    pub fn rig(&self) -> Result<Rig> {
        let p = self.pivot();
        Rig::new(vec![
            Joint {
                id: 0,
                parent: None,
                center: [0.0, 0.0, 0.0],
                axes: vec![[0.0, 0.0, 1.0]],
                range: vec![[0.0, 10.0, 0.0]],
            },
            Joint {
                id: 1,
                parent: Some(0),
                center: [p.x, p.y, p.z],
                axes: vec![[0.0, 0.0, 1.0]],
                range: vec![self.range],
            },
        ])
    }

    /// Weight of the second bone at a rest position.
    pub fn hinge_weight(&self, x: &Vec3) -> f64 {
        smoothstep((x.x - (self.length - self.blend)) / (2.0 * self.blend))
    }

    pub fn skinned_mesh(&self) -> Result<SkinnedMesh> {
        let r = self.radius;
        let body_rings = ((2.0 * self.length) / (0.25 * r)).ceil() as usize;
        let mesh = capsule_x(0.0, 2.0 * self.length, r, 0.0, 0.0, self.segments, 8, body_rings);
        let weights: SkinWeights = mesh
            .vertices
            .iter()
            .map(|v| {
                let w = self.hinge_weight(v);
                let mut row = Vec::new();
                if w < 1.0 {
                    row.push((0, 1.0 - w));
                }
                if w > 0.0 {
                    row.push((1, w));
                }
                row
            })
            .collect();
        SkinnedMesh::new(mesh, weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::winding_number;
    use crate::rig::{lbs_deform, pose_transforms, JointState};

    #[test]
    fn capsule_is_valid_and_weights_are_symmetric() {
        let c = HingedCapsule::default();
        let skin = c.skinned_mesh().unwrap();
        let rig = c.rig().unwrap();
        assert_eq!(skin.max_transform_index(), Some(1));
        assert_eq!(rig.total_dof(), 2);
        assert!((c.hinge_weight(&Vec3::new(c.length, 0.0, 0.0)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bent_capsule_stays_a_simple_surface() {
        // winding numbers stay in {0, 1} when the skin does not fold over itself
        let c = HingedCapsule::default();
        let rig = c.rig().unwrap();
        let skin = c.skinned_mesh().unwrap();
        for deg in [-120.0, -90.0, -45.0] {
            let state = JointState::from_degrees(&rig, &[0.0, deg]).unwrap();
            let tf = pose_transforms(&rig, &state).unwrap();
            let mut posed = skin.mesh.clone();
            posed.vertices = lbs_deform(&skin, &tf).unwrap();
            assert!(posed.signed_volume() > 0.0);
            for i in 0..20 {
                for j in 0..20 {
                    let p = Vec3::new(-0.4 + 0.13 * i as f64, -1.9 + 0.12 * j as f64, 0.013);
                    let w = winding_number(&posed, &p);
                    assert!(w == 0 || w == 1, "winding {w} at {p:?}, {deg} deg");
                }
            }
        }
    }
}
