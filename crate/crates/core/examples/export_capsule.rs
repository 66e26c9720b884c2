//! Writes the hinged two-capsule character as a project directory: rig,
//! rest mesh, skin weights, a project file and a cloth scene.
//!
//! cargo run --release --example export_capsule -- assets/capsule

use std::path::PathBuf;

use shallow_sdf::cloth::{Keyframe, Scene};
use shallow_sdf::pipeline::ProjectConfig;
use shallow_sdf::rig::weights_to_string;
use shallow_sdf::shapes::HingedCapsule;

fn main() -> shallow_sdf::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "assets/capsule".into()));
    std::fs::create_dir_all(&dir)?;
    let shape = HingedCapsule::default();
    let skin = shape.skinned_mesh()?;
    std::fs::write(dir.join("rig.toml"), shape.rig()?.to_toml())?;
    skin.mesh.write_obj(dir.join("body.obj"))?;
    std::fs::write(dir.join("body.weights"), weights_to_string(&skin.weights))?;
    std::fs::write(
        dir.join("project.toml"),
        ProjectConfig::new("rig.toml", "body.obj", "body.weights").to_toml(),
    )?;
    std::fs::write(dir.join("scene.toml"), demo_scene().to_toml())?;
    println!("wrote {}", dir.display());
    Ok(())
}

/// 200 frames: the cloth drops on the straight arm, which then folds down
/// and comes back part of the way.
fn demo_scene() -> Scene {
    let key = |frame, hinge: f64| Keyframe {
        frame,
        degrees: vec![0.0, hinge],
    };
    Scene {
        cloth: Default::default(),
        collision: Default::default(),
        frame_dt: 1.0 / 60.0,
        substeps: 10,
        frames: 200,
        keyframes: vec![key(0, 0.0), key(40, 0.0), key(120, -100.0), key(200, -40.0)],
        obj_every: 10,
    }
}
