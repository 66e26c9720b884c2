//! Partitions the hinged capsule into overlapping joint regions and writes
//! each region surface, at rest and bent, as OBJ.
//!
//! cargo run --release --example partition_capsule -- [resolution] [out-dir]

use std::path::PathBuf;

use shallow_sdf::dataset::{joint_pose, Character, PartitionConfig};
use shallow_sdf::shapes::HingedCapsule;

fn main() -> shallow_sdf::Result<()> {
    let mut args = std::env::args().skip(1);
    let resolution: usize = args.next().map_or(32, |a| a.parse().expect("resolution"));
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "partition_out".into()));
    std::fs::create_dir_all(&dir)?;
    let shape = HingedCapsule::default();
    let cfg = PartitionConfig {
        resolution,
        ..Default::default()
    };
    let ch = Character::build(shape.rig()?, shape.skinned_mesh()?, &cfg)?;
    println!("dilation margin {} cells", ch.margin);
    let bent = joint_pose(&ch.rig, 1, &[(-90f64).to_radians()])?;
    for r in 0..ch.regions.len() {
        println!("region {r}: {} nodes", ch.partition.region_size(r));
        ch.regions[r].mesh.write_obj(dir.join(format!("region{r}_rest.obj")))?;
        ch.posed_region(r, &bent)?.write_obj(dir.join(format!("region{r}_bent.obj")))?;
    }
    ch.posed_body(&bent)?.write_obj(dir.join("body_bent.obj"))?;
    println!("wrote {}", dir.display());
    Ok(())
}
