//! A cloth sheet dropped on a sphere given by an analytic grid. Writes every
//! tenth frame as OBJ and the timing table.
//!
//! cargo run --release --example cloth_sphere -- [frames] [out-dir]

use std::path::PathBuf;

use shallow_sdf::blend::{AvatarSdf, JointField};
use shallow_sdf::cloth::{ClothConfig, Keyframe, Scene};
use shallow_sdf::distance_field::{GridSdf, GridSpec, LabelGrid};
use shallow_sdf::geometry::Vec3;
use shallow_sdf::pipeline::simulate;
use shallow_sdf::rig::{Joint, JointState, Rig};

fn main() -> shallow_sdf::Result<()> {
    let mut args = std::env::args().skip(1);
    let frames: usize = args.next().map_or(120, |a| a.parse().expect("frames"));
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "cloth_out".into()));
    let rig = Rig::new(vec![Joint {
        id: 0,
        parent: None,
        center: [0.0; 3],
        axes: vec![[0.0, 1.0, 0.0]],
        range: vec![[0.0, 10.0, 0.0]],
    }])?;
    let spec = GridSpec::new(Vec3::repeat(-1.5), 3.0 / 63.0, [64, 64, 64])?;
    let sdf = GridSdf::from_fn(spec, |x| x.norm() - 0.5);
    let labels = LabelGrid {
        spec,
        labels: vec![1; spec.len()],
    };
    let field = JointField::grid_at_pose(&rig, &JointState::zeros(&rig), 0, sdf, labels)?;
    let avatar = AvatarSdf::new(rig, vec![field])?;
    let scene = Scene {
        cloth: ClothConfig {
            nx: 48,
            nz: 48,
            size: [2.0, 2.0],
            center: [0.0, 0.7, 0.0],
            ..Default::default()
        },
        collision: Default::default(),
        frame_dt: 1.0 / 60.0,
        substeps: 10,
        frames,
        keyframes: vec![Keyframe {
            frame: 0,
            degrees: vec![0.0],
        }],
        obj_every: 10,
    };
    let r = simulate(&avatar, &scene, &dir)?;
    println!(
        "{} frames, {} particles: max penetration {:.2e}, {} queries, {:.1}% of the time in collision handling",
        r.frames, r.particles, r.max_penetration, r.queries, r.sdf_percent
    );
    println!("wrote {}", dir.display());
    Ok(())
}
