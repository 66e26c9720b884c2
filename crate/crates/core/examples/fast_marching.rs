//! Signed distance of a sphere mesh on a grid against the analytic field.
//!
//! cargo run --release --example fast_marching -- [resolution] [out.sdf]

use shallow_sdf::distance_field::{grid_sdf_from_mesh, GridSpec};
use shallow_sdf::geometry::{icosphere, Vec3};

fn main() -> shallow_sdf::Result<()> {
    let mut args = std::env::args().skip(1);
    let res: usize = args.next().map_or(48, |a| a.parse().expect("resolution"));
    let (c, r) = (Vec3::new(0.01, -0.02, 0.015), 0.6);
    let spec = GridSpec::new(Vec3::repeat(-1.0), 2.0 / (res - 1) as f64, [res; 3])?;
    let start = std::time::Instant::now();
    let grid = grid_sdf_from_mesh(&icosphere(c, r, 5), &spec)?;
    let elapsed = start.elapsed();
    let (mut worst, mut sum) = (0.0f64, 0.0);
    for i in 0..spec.len() {
        let e = (grid.values[i] as f64 - ((spec.node_position(i) - c).norm() - r)).abs();
        worst = worst.max(e);
        sum += e;
    }
    println!("{res}^3 in {elapsed:?}: mean error {:.3} h, max {:.3} h", sum / spec.len() as f64 / spec.spacing, worst / spec.spacing);
    if let Some(path) = args.next() {
        grid.write(&path)?;
        println!("wrote {path}");
    }
    Ok(())
}
