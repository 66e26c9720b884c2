use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub const GRID_MAGIC: [u8; 4] = *b"SDFG";
pub const LABEL_MAGIC: [u8; 4] = *b"SDFL";
pub const PARTITION_MAGIC: [u8; 4] = *b"SDFP";

/// Uniform node lattice. `origin` is the position of node (0,0,0); node
/// (i,j,k) sits at `origin + h·(i,j,k)`. Linear index is x-fastest.
///
/// Origin and spacing are kept f32-representable so that files reload to
/// identical values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: Vec3,
    pub spacing: f64,
    pub dims: [usize; 3],
}

fn snap(x: f64) -> f64 {
    x as f32 as f64
}

impl GridSpec {
    pub fn new(origin: Vec3, spacing: f64, dims: [usize; 3]) -> Result<Self> {
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::validation(format!("grid spacing must be positive, got {spacing}")));
        }
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::validation(format!("grid needs >= 2 nodes per axis, got {dims:?}")));
        }
        Ok(Self {
            origin: origin.map(snap),
            spacing: snap(spacing),
            dims,
        })
    }

    /// Cube-shaped grid with `res` nodes per axis covering `[lo, hi]` after
    /// padding each side by `pad` times the box extent along that axis.
    pub fn cubified(lo: Vec3, hi: Vec3, res: usize, pad: f64) -> Result<Self> {
        let ext = hi - lo;
        let lo = lo - ext * pad;
        let hi = hi + ext * pad;
        let side = (hi - lo).amax();
        if !(side > 0.0) {
            return Err(Error::validation("degenerate bounding box"));
        }
        let center = (lo + hi) * 0.5;
        let h = side / (res as f64 - 1.0);
        // round the spacing up so the snapped cube still covers the box
        let h = (h as f32).next_up() as f64;
        Self::new(center - Vec3::repeat(0.5 * h * (res as f64 - 1.0)), h, [res, res, res])
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let r = idx / self.dims[0];
        [i, r % self.dims[1], r / self.dims[1]]
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.spacing
    }

    #[inline]
    pub fn node_position(&self, idx: usize) -> Vec3 {
        let [i, j, k] = self.coords(idx);
        self.position(i, j, k)
    }

    /// Far corner of the lattice.
    pub fn max_corner(&self) -> Vec3 {
        self.position(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1)
    }

    /// L_G: the longest side of the lattice box.
    pub fn box_side(&self) -> f64 {
        self.spacing * (*self.dims.iter().max().unwrap() as f64 - 1.0)
    }

    /// 6-neighbors of a node, as linear indices.
    pub fn neighbors(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let c = self.coords(idx);
        (0..6).filter_map(move |n| {
            let axis = n / 2;
            let up = n % 2 == 1;
            let mut c2 = c;
            if up {
                if c[axis] + 1 >= self.dims[axis] {
                    return None;
                }
                c2[axis] += 1;
            } else {
                if c[axis] == 0 {
                    return None;
                }
                c2[axis] -= 1;
            }
            Some(self.index(c2[0], c2[1], c2[2]))
        })
    }

    pub(crate) fn write_header(&self, w: &mut impl Write, magic: [u8; 4]) -> std::io::Result<()> {
        w.write_all(&magic)?;
        for d in self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for c in self.origin.iter() {
            w.write_all(&(*c as f32).to_le_bytes())?;
        }
        w.write_all(&(self.spacing as f32).to_le_bytes())
    }

    pub(crate) fn read_header(r: &mut impl Read, magic: [u8; 4], path: &Path) -> Result<Self> {
        let mut m = [0u8; 4];
        r.read_exact(&mut m)?;
        if m != magic {
            return Err(Error::format(path, format!("bad magic {m:?}, expected {magic:?}")));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = read_u32(r)? as usize;
        }
        let mut origin = Vec3::zeros();
        for k in 0..3 {
            origin[k] = read_f32(r)? as f64;
        }
        let spacing = read_f32(r)? as f64;
        Self::new(origin, spacing, dims).map_err(|e| Error::format(path, e.to_string()))
    }
}

pub(crate) fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f32(r: &mut impl Read) -> std::io::Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

/// Dense signed distance samples (negative inside).
#[derive(Debug, Clone, PartialEq)]
pub struct GridSdf {
    pub spec: GridSpec,
    pub values: Vec<f32>,
}

impl GridSdf {
    pub fn new(spec: GridSpec, values: Vec<f32>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::Dimension {
                what: "grid values",
                expected: spec.len(),
                got: values.len(),
            });
        }
        Ok(Self { spec, values })
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(&Vec3) -> f64) -> Self {
        let values = (0..spec.len()).map(|i| f(&spec.node_position(i)) as f32).collect();
        Self { spec, values }
    }

    pub fn box_side(&self) -> f64 {
        self.spec.box_side()
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.spec.index(i, j, k)] as f64
    }

    pub fn inside_mask(&self) -> Vec<bool> {
        self.values.iter().map(|&v| v < 0.0).collect()
    }

    /// Trilinear interpolation; points outside the lattice are clamped to it
    /// and reported through the flag.
    pub fn sample(&self, x: &Vec3) -> (f64, bool) {
        let s = &self.spec;
        let mut out = false;
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let u = (x[a] - s.origin[a]) / s.spacing;
            let max = (s.dims[a] - 1) as f64;
            let uc = if u < 0.0 {
                out = true;
                0.0
            } else if u > max {
                out = true;
                max
            } else if u.is_nan() {
                out = true;
                0.0
            } else {
                u
            };
            let b = (uc.floor() as usize).min(s.dims[a] - 2);
            base[a] = b;
            frac[a] = uc - b as f64;
        }
        let [i, j, k] = base;
        let [fx, fy, fz] = frac;
        let c00 = self.at(i, j, k) * (1.0 - fx) + self.at(i + 1, j, k) * fx;
        let c10 = self.at(i, j + 1, k) * (1.0 - fx) + self.at(i + 1, j + 1, k) * fx;
        let c01 = self.at(i, j, k + 1) * (1.0 - fx) + self.at(i + 1, j, k + 1) * fx;
        let c11 = self.at(i, j + 1, k + 1) * (1.0 - fx) + self.at(i + 1, j + 1, k + 1) * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        (c0 * (1.0 - fz) + c1 * fz, out)
    }

    /// Central differences of trilinear samples with step h.
    pub fn gradient(&self, x: &Vec3) -> (Vec3, bool) {
        let h = self.spec.spacing;
        let mut g = Vec3::zeros();
        let mut out = false;
        for a in 0..3 {
            let mut e = Vec3::zeros();
            e[a] = h;
            let (p, o1) = self.sample(&(x + e));
            let (m, o2) = self.sample(&(x - e));
            out |= o1 | o2;
            g[a] = (p - m) / (2.0 * h);
        }
        (g, out)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        self.spec.write_header(w, GRID_MAGIC)?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let spec = GridSpec::read_header(&mut r, GRID_MAGIC, path)?;
        let values = (0..spec.len())
            .map(|_| read_f32(&mut r))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::format(path, e.to_string()))?;
        Self::new(spec, values)
    }
}

/// Per-node boundary provenance: +1 when the closest region-boundary point is
/// on the true body surface, -1 when it lies on an interior cut.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    pub spec: GridSpec,
    pub labels: Vec<i8>,
}

impl LabelGrid {
    /// Nearest-node lookup (clamped).
    pub fn label_at(&self, x: &Vec3) -> i8 {
        let s = &self.spec;
        let mut c = [0usize; 3];
        for a in 0..3 {
            let u = ((x[a] - s.origin[a]) / s.spacing).round();
            c[a] = u.clamp(0.0, (s.dims[a] - 1) as f64) as usize;
        }
        self.labels[s.index(c[0], c[1], c[2])]
    }

    /// Trilinearly blended label value in [-1, 1] (clamped to the lattice).
    pub fn sample(&self, x: &Vec3) -> f64 {
        let g = GridSdf {
            spec: self.spec,
            values: self.labels.iter().map(|&l| l as f32).collect(),
        };
        g.sample(x).0
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.spec.write_header(&mut w, LABEL_MAGIC)?;
        let bytes: Vec<u8> = self.labels.iter().map(|&l| l as u8).collect();
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let spec = GridSpec::read_header(&mut r, LABEL_MAGIC, path)?;
        let mut bytes = vec![0u8; spec.len()];
        r.read_exact(&mut bytes)?;
        let labels: Vec<i8> = bytes.into_iter().map(|b| b as i8).collect();
        if labels.iter().any(|&l| l != 1 && l != -1) {
            return Err(Error::format(path, "labels must be +1 or -1"));
        }
        Ok(Self { spec, labels })
    }
}
