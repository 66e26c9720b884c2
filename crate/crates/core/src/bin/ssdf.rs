use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shallow_sdf::cloth::Scene;
use shallow_sdf::pipeline::{MeshSource, Project};
use shallow_sdf::ssdf::NetKind;
use shallow_sdf::Result;

#[derive(Parser)]
#[command(name = "ssdf", version, about = "Shallow neural SDFs for articulated characters")]
struct Cli {
    /// Project file.
    #[arg(long, short, global = true, default_value = "project.toml")]
    config: PathBuf,
    /// Top-level seed (overrides the project).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Grid resolution per axis (overrides the project).
    #[arg(long, global = true)]
    resolution: Option<usize>,
    /// Training epochs (overrides the project).
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Restrict to one joint; all joints when omitted.
    #[arg(long, global = true)]
    joint: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Partition the rest body into overlapping joint regions.
    Partition,
    /// Write ground-truth region fields and labels for every training pose.
    Gensdf,
    /// Build training datasets.
    Dataset,
    /// Train networks and write the avatar manifest.
    Train {
        /// sdf, bool or both.
        #[arg(long, default_value = "both")]
        kind: String,
    },
    /// Compare the blended field to the ground truth at one pose.
    Eval {
        /// Joint angles in degrees, concatenated over the rig.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        pose: Vec<f64>,
        /// Use ground-truth grids instead of networks.
        #[arg(long)]
        oracle: bool,
    },
    /// Extract zero level sets at one pose.
    Mesh {
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        pose: Vec<f64>,
        /// learned, gt or both.
        #[arg(long, default_value = "both")]
        source: String,
    },
    /// Run a cloth scene against the trained avatar.
    Sim {
        #[arg(long)]
        scene: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut project = Project::open(&cli.config)?;
    if let Some(s) = cli.seed {
        project.config.seed = s;
    }
    if let Some(r) = cli.resolution {
        project.config.resolution = r;
    }
    if let Some(e) = cli.epochs {
        project.config.training.epochs = e;
    }
    project.config.validate()?;
    let joints = || -> Result<Vec<usize>> { project.joints(&project.rig()?, cli.joint) };
    match cli.command {
        Command::Partition => {
            let r = project.cmd_partition()?;
            println!("margin {} region sizes {:?}", r.margin, r.region_sizes);
        }
        Command::Gensdf => {
            for j in joints()? {
                let n = project.cmd_gensdf(j)?;
                println!("joint {j}: {n} poses");
            }
        }
        Command::Dataset => {
            for j in joints()? {
                let r = project.cmd_dataset(j)?;
                println!(
                    "joint {j}: {} samples over {} poses, L_G {:.4}, h {:.4}",
                    r.samples, r.poses, r.box_side, r.spacing
                );
            }
        }
        Command::Train { kind } => {
            let kinds = match kind.as_str() {
                "both" => vec![NetKind::Sdf, NetKind::Bool],
                k => vec![k.parse()?],
            };
            let epochs = project.config.training.epochs;
            let every = (epochs / 10).max(1);
            for j in joints()? {
                for &k in &kinds {
                    let (_, h) = project.cmd_train(j, k, |e, t, v| {
                        if e % every == 0 {
                            println!("joint {j} {} epoch {e}: train {t:.3e} validation {v:.3e}", k.name());
                        }
                    })?;
                    println!(
                        "joint {j} {}: final train {:.3e} validation {:.3e}",
                        k.name(),
                        h.final_train(),
                        h.final_validation()
                    );
                }
            }
        }
        Command::Eval { pose, oracle } => {
            print!("{}", project.cmd_eval(&pose, oracle)?.to_toml());
        }
        Command::Mesh { pose, source } => {
            let source: MeshSource = source.parse()?;
            for (path, mesh) in project.cmd_mesh(&pose, source)? {
                println!("{}: {} triangles", path.display(), mesh.triangles.len());
            }
        }
        Command::Sim { scene } => {
            let r = project.cmd_sim(&Scene::load(&scene)?)?;
            println!(
                "{} frames, {} particles, max penetration {:.3e} ({:.2e} L_G), {} queries, {:.1}% in collision handling",
                r.frames,
                r.particles,
                r.max_penetration,
                r.max_penetration / r.box_side,
                r.queries,
                r.sdf_percent
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
