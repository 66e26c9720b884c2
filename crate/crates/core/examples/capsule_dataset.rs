//! Training samples for the capsule hinge: counts per pose, label balance
//! and the canonical bounding box.
//!
//! cargo run --release --example capsule_dataset -- [resolution] [seed] [out.bin]

use shallow_sdf::dataset::{build_dataset, Character, PartitionConfig, PoseRange, SelectionConfig};
use shallow_sdf::shapes::HingedCapsule;

fn main() -> shallow_sdf::Result<()> {
    let mut args = std::env::args().skip(1);
    let resolution: usize = args.next().map_or(32, |a| a.parse().expect("resolution"));
    let seed: u64 = args.next().map_or(0, |a| a.parse().expect("seed"));
    let shape = HingedCapsule::default();
    let cfg = PartitionConfig {
        resolution,
        ..Default::default()
    };
    let ch = Character::build(shape.rig()?, shape.skinned_mesh()?, &cfg)?;
    let range = PoseRange::of_joint(&ch.rig.joints[1])?;
    let spec = ch.joint_grid(1, &range, resolution)?;
    let data = build_dataset(&ch, 1, &range, &spec, &SelectionConfig::default(), seed)?;
    let positive = data.samples.iter().filter(|s| s.label > 0.0).count();
    let inside = data.samples.iter().filter(|s| s.s < 0.0).count();
    println!(
        "{} samples over {} poses, L_G {:.4}, h {:.4}",
        data.len(),
        range.count(),
        data.box_side,
        spec.spacing
    );
    println!("{inside} inside the region, {positive} labelled true boundary");
    let mut lo = [f32::INFINITY; 3];
    let mut hi = [f32::NEG_INFINITY; 3];
    for s in &data.samples {
        for a in 0..3 {
            lo[a] = lo[a].min(s.x[a]);
            hi[a] = hi[a].max(s.x[a]);
        }
    }
    println!("canonical bounds {lo:?} .. {hi:?}");
    if let Some(path) = args.next() {
        data.write(&path)?;
        println!("wrote {path}");
    }
    Ok(())
}
