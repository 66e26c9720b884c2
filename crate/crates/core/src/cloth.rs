//! Mass-spring cloth colliding with a posed avatar.
//!
//! Integration is semi-implicit Euler: spring forces and gravity update the
//! velocities, velocities are damped, then positions advance. Collisions are
//! resolved afterwards by querying the avatar for every particle and pushing
//! particles with `φ < offset` out along the forward-difference gradient.

use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blend::{AvatarSdf, PosedAvatarSdf};
use crate::error::{Error, Result};
use crate::geometry::{TriMesh, Vec3};
use crate::rig::JointState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpringKind {
    Structural,
    Shear,
    Bend,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spring {
    pub a: u32,
    pub b: u32,
    pub rest: f64,
    pub stiffness: f64,
    pub kind: SpringKind,
}

/// Cloth sheet parameters. The sheet is a regular `nx × nz` particle grid
/// spanning `size` in x and z, centered on `center`, lying flat at
/// `center.y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClothConfig {
    pub nx: usize,
    pub nz: usize,
    pub size: [f64; 2],
    pub center: [f64; 3],
    /// Mass per particle.
    pub mass: f64,
    pub structural: f64,
    pub shear: f64,
    pub bend: f64,
    /// Velocity damping rate (1/s).
    pub damping: f64,
    pub gravity: [f64; 3],
}

impl Default for ClothConfig {
    fn default() -> Self {
        Self {
            nx: 64,
            nz: 64,
            size: [3.0, 3.0],
            center: [1.0, 0.6, 0.0],
            mass: 1e-3,
            structural: 60.0,
            shear: 20.0,
            bend: 5.0,
            damping: 0.5,
            gravity: [0.0, -9.81, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClothState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub rest_mesh: TriMesh,
    pub springs: Vec<Spring>,
    pub mass: f64,
    pub damping: f64,
    pub gravity: Vec3,
}

impl ClothState {
    pub fn new(cfg: &ClothConfig) -> Result<Self> {
        let (nx, nz) = (cfg.nx, cfg.nz);
        if nx == 0 || nz == 0 {
            return Err(Error::validation("cloth needs at least one particle per side"));
        }
        if !(cfg.mass > 0.0) || cfg.damping < 0.0 || cfg.size.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::validation("cloth mass and size must be positive, damping non-negative"));
        }
        let c = Vec3::from(cfg.center);
        let step = |n: usize, s: f64| if n > 1 { s / (n - 1) as f64 } else { 0.0 };
        let (dx, dz) = (step(nx, cfg.size[0]), step(nz, cfg.size[1]));
        let origin = c - Vec3::new(0.5 * dx * (nx - 1) as f64, 0.0, 0.5 * dz * (nz - 1) as f64);
        let id = |i: usize, k: usize| (k * nx + i) as u32;
        let positions: Vec<Vec3> = (0..nz)
            .flat_map(|k| (0..nx).map(move |i| origin + Vec3::new(i as f64 * dx, 0.0, k as f64 * dz)))
            .collect();
        let mut triangles = Vec::new();
        for k in 0..nz.saturating_sub(1) {
            for i in 0..nx - 1 {
                let (a, b, c2, d) = (id(i, k), id(i + 1, k), id(i, k + 1), id(i + 1, k + 1));
                triangles.push([a, c2, b]);
                triangles.push([b, c2, d]);
            }
        }
        let mut springs = Vec::new();
        let mut add = |a: u32, b: u32, stiffness: f64, kind: SpringKind| {
            let rest = (positions[a as usize] - positions[b as usize]).norm();
            springs.push(Spring {
                a,
                b,
                rest,
                stiffness,
                kind,
            });
        };
        for k in 0..nz {
            for i in 0..nx {
                if i + 1 < nx {
                    add(id(i, k), id(i + 1, k), cfg.structural, SpringKind::Structural);
                }
                if k + 1 < nz {
                    add(id(i, k), id(i, k + 1), cfg.structural, SpringKind::Structural);
                }
                if i + 1 < nx && k + 1 < nz {
                    add(id(i, k), id(i + 1, k + 1), cfg.shear, SpringKind::Shear);
                    add(id(i + 1, k), id(i, k + 1), cfg.shear, SpringKind::Shear);
                }
                if i + 2 < nx {
                    add(id(i, k), id(i + 2, k), cfg.bend, SpringKind::Bend);
                }
                if k + 2 < nz {
                    add(id(i, k), id(i, k + 2), cfg.bend, SpringKind::Bend);
                }
            }
        }
        let velocities = vec![Vec3::zeros(); positions.len()];
        Ok(Self {
            rest_mesh: TriMesh::new(positions.clone(), triangles),
            positions,
            velocities,
            springs,
            mass: cfg.mass,
            damping: cfg.damping,
            gravity: Vec3::from(cfg.gravity),
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Current sheet as a mesh.
    pub fn mesh(&self) -> TriMesh {
        TriMesh::new(self.positions.clone(), self.rest_mesh.triangles.clone())
    }

    fn forces(&self) -> Vec<Vec3> {
        let mut f = vec![self.gravity * self.mass; self.len()];
        for s in &self.springs {
            let (a, b) = (s.a as usize, s.b as usize);
            let d = self.positions[b] - self.positions[a];
            let len = d.norm();
            if len > 0.0 {
                let fa = d * (s.stiffness * (len - s.rest) / len);
                f[a] += fa;
                f[b] -= fa;
            }
        }
        f
    }

    /// Unconstrained semi-implicit Euler update.
    pub fn integrate(&mut self, dt: f64) {
        let f = self.forces();
        let keep = (1.0 - self.damping * dt).max(0.0);
        for ((x, v), f) in self.positions.iter_mut().zip(&mut self.velocities).zip(&f) {
            *v = (*v + f * (dt / self.mass)) * keep;
            *x += *v * dt;
        }
    }
}

/// Collision response settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollisionConfig {
    /// Target clearance as a fraction of the avatar's `L_G`.
    pub offset_factor: f64,
    /// Projections per particle per step.
    pub max_projections: usize,
}

impl Default for CollisionConfig {
    fn default() -> Self {
        Self {
            offset_factor: 2e-3,
            max_projections: 3,
        }
    }
}

/// Work done by one collision pass. The avatar is queried
/// `particles + 3·inside + rechecked + 3·reprojected` times.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CollisionStats {
    pub particles: usize,
    pub inside: usize,
    /// Re-queries of projected particles in later rounds.
    pub rechecked: usize,
    /// Projections after the first.
    pub reprojected: usize,
}

impl CollisionStats {
    pub fn queries(&self) -> usize {
        self.particles + 3 * self.inside + self.rechecked + 3 * self.reprojected
    }
}

/// Move `x` (with value `phi`) along the gradient to where a distance field
/// would read `offset`; returns the unit normal used.
fn push_out(posed: &PosedAvatarSdf, x: &mut Vec3, phi: f64, offset: f64) -> Vec3 {
    let g = posed.gradient_from(x, phi);
    let n = g.norm();
    if n > 1e-12 {
        // the closest-point step x - φ∇φ, taken along the unit normal so a
        // poorly scaled gradient cannot blow it up
        let unit = g / n;
        *x += unit * (offset - phi);
        unit
    } else {
        Vec3::zeros()
    }
}

/// Pushes every particle with `φ < offset` out to `φ = offset`. The first
/// round covers all such particles; later rounds re-query the moved
/// particles and re-project those still inside the body (`φ < 0`). The
/// inward normal component of corrected velocities is removed.
pub fn resolve_collisions(
    positions: &mut [Vec3],
    velocities: &mut [Vec3],
    posed: &PosedAvatarSdf,
    offset: f64,
    max_projections: usize,
) -> CollisionStats {
    let mut stats = CollisionStats {
        particles: positions.len(),
        ..Default::default()
    };
    let phi = posed.query_batch(positions);
    let mut active: Vec<usize> = (0..positions.len()).filter(|&k| phi[k] < offset).collect();
    stats.inside = active.len();
    if active.is_empty() || max_projections == 0 {
        return stats;
    }
    let mut normals = vec![Vec3::zeros(); positions.len()];
    let mut current: Vec<f64> = active.iter().map(|&k| phi[k]).collect();
    for round in 0..max_projections {
        if round > 0 {
            let xs: Vec<Vec3> = active.iter().map(|&k| positions[k]).collect();
            let v = posed.query_batch(&xs);
            stats.rechecked += active.len();
            let (keep, vals): (Vec<usize>, Vec<f64>) =
                active.iter().zip(v).filter(|(_, v)| *v < 0.0).map(|(&k, v)| (k, v)).unzip();
            active = keep;
            current = vals;
            if active.is_empty() {
                break;
            }
            stats.reprojected += active.len();
        }
        let moved: Vec<(usize, Vec3, Vec3)> = active
            .par_iter()
            .zip(&current)
            .map(|(&k, &p)| {
                let mut x = positions[k];
                let n = push_out(posed, &mut x, p, offset);
                (k, x, n)
            })
            .collect();
        for (k, x, n) in moved {
            positions[k] = x;
            if n != Vec3::zeros() {
                normals[k] = n;
            }
        }
    }
    for (k, n) in normals.iter().enumerate() {
        let vn = velocities[k].dot(n);
        if vn < 0.0 {
            velocities[k] -= n * vn;
        }
    }
    stats
}

/// One integration step followed by collision resolution.
pub fn step(state: &mut ClothState, posed: &PosedAvatarSdf, dt: f64, offset: f64, max_projections: usize, index: usize) -> Result<CollisionStats> {
    if !(dt > 0.0) {
        return Err(Error::validation("time step must be positive"));
    }
    state.integrate(dt);
    let stats = resolve_collisions(&mut state.positions, &mut state.velocities, posed, offset, max_projections);
    if state.positions.iter().chain(&state.velocities).any(|v| !v.iter().all(|c| c.is_finite())) {
        return Err(Error::NonFinite(index));
    }
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub frame: usize,
    /// Joint angles in degrees, concatenated over the rig.
    pub degrees: Vec<f64>,
}

/// Scene description for [`run_scene`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    #[serde(default)]
    pub cloth: ClothConfig,
    #[serde(default)]
    pub collision: CollisionConfig,
    /// Frame duration in seconds.
    pub frame_dt: f64,
    pub substeps: usize,
    pub frames: usize,
    /// Keyframed joint states, linearly interpolated at every substep.
    pub keyframes: Vec<Keyframe>,
    /// Write an OBJ every this many frames (0 disables).
    #[serde(default)]
    pub obj_every: usize,
}

impl Scene {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scene = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&std::fs::read_to_string(path)?).map_err(|e| match e {
            Error::Parse(m) | Error::Validation(m) => Error::format(path, m),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_dt > 0.0) || self.substeps == 0 {
            return Err(Error::validation("frame_dt and substeps must be positive"));
        }
        if self.keyframes.is_empty() {
            return Err(Error::validation("scene needs at least one keyframe"));
        }
        if self.keyframes.windows(2).any(|w| w[1].frame <= w[0].frame) {
            return Err(Error::validation("keyframes must have increasing frames"));
        }
        Ok(())
    }

    /// Joint state at fractional frame `t`.
    pub fn state_at(&self, avatar: &AvatarSdf, t: f64) -> Result<JointState> {
        let k = &self.keyframes;
        let state = |i: usize| JointState::from_degrees(&avatar.rig, &k[i].degrees);
        if t <= k[0].frame as f64 {
            return state(0);
        }
        for i in 1..k.len() {
            let (a, b) = (k[i - 1].frame as f64, k[i].frame as f64);
            if t <= b {
                return Ok(state(i - 1)?.lerp(&state(i)?, (t - a) / (b - a)));
            }
        }
        state(k.len() - 1)
    }
}

/// Per-frame measurements.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FrameStats {
    pub frame: usize,
    /// Whole frame: posing, integration and collisions.
    pub sim_time: Duration,
    /// Avatar queries and collision response.
    pub sdf_time: Duration,
    pub inside: usize,
    pub queries: usize,
    /// Largest `-φ` over the particles at the end of the frame.
    pub penetration: f64,
}

impl FrameStats {
    pub fn sdf_percent(&self) -> f64 {
        100.0 * self.sdf_time.as_secs_f64() / self.sim_time.as_secs_f64().max(1e-12)
    }
}

pub fn timing_csv(frames: &[FrameStats]) -> String {
    let mut s = String::from("frame,t_sim_ms,t_sdf_ms,sdf_percent,inside,queries,penetration\n");
    for f in frames {
        s.push_str(&format!(
            "{},{:.4},{:.4},{:.2},{},{},{:e}\n",
            f.frame,
            f.sim_time.as_secs_f64() * 1e3,
            f.sdf_time.as_secs_f64() * 1e3,
            f.sdf_percent(),
            f.inside,
            f.queries,
            f.penetration
        ));
    }
    s
}

/// Runs a scene; `on_frame` sees the cloth after every frame.
pub fn run_scene(
    avatar: &AvatarSdf,
    scene: &Scene,
    mut on_frame: impl FnMut(&FrameStats, &ClothState) -> Result<()>,
) -> Result<Vec<FrameStats>> {
    scene.validate()?;
    let mut cloth = ClothState::new(&scene.cloth)?;
    let offset = scene.collision.offset_factor * avatar.box_side();
    let dt = scene.frame_dt / scene.substeps as f64;
    let mut out = Vec::with_capacity(scene.frames);
    for frame in 0..scene.frames {
        let start = Instant::now();
        let mut stats = FrameStats {
            frame,
            ..Default::default()
        };
        let mut last = None;
        for sub in 0..scene.substeps {
            let t = frame as f64 + (sub + 1) as f64 / scene.substeps as f64;
            let posed = avatar.pose_update(&scene.state_at(avatar, t)?)?;
            cloth.integrate(dt);
            let t0 = Instant::now();
            let c = resolve_collisions(
                &mut cloth.positions,
                &mut cloth.velocities,
                &posed,
                offset,
                scene.collision.max_projections,
            );
            stats.sdf_time += t0.elapsed();
            stats.inside += c.inside;
            stats.queries += c.queries();
            if cloth.positions.iter().chain(&cloth.velocities).any(|v| !v.iter().all(|c| c.is_finite())) {
                return Err(Error::NonFinite(frame * scene.substeps + sub));
            }
            last = Some(posed);
        }
        stats.sim_time = start.elapsed();
        if let Some(posed) = last {
            stats.penetration = posed
                .query_batch(&cloth.positions)
                .into_iter()
                .fold(f64::NEG_INFINITY, |m, v| m.max(-v));
        }
        on_frame(&stats, &cloth)?;
        out.push(stats);
    }
    Ok(out)
}
