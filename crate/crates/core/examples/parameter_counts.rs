//! Inference and training parameter counts for a few topologies.
//!
//! cargo run --example parameter_counts -- [dof]

use shallow_sdf::ssdf::Topology;

fn main() -> shallow_sdf::Result<()> {
    let dof: usize = std::env::args().nth(1).map_or(2, |a| a.parse().expect("dof"));
    println!("N_L  N_H  inference  training (D = {dof})");
    for (nl, nh) in [(3, 8), (4, 8), (5, 4), (5, 8), (5, 16), (5, 32), (7, 32)] {
        let t = Topology::new(nl, nh, dof)?;
        println!("{nl:>3}  {nh:>3}  {:>9}  {:>8}", t.inference_params(), t.training_params());
    }
    Ok(())
}
