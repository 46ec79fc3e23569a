//! Seeded synthetic domains and the dataset interchange file.
//!
//! # File layout
//!
//! All integers and floats are little endian.
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0 | 8 | magic `UBR2SDS\0` |
//! | 8 | 4 | format version (`u32`, currently 1) |
//! | 12 | 1 | kind: 0 = blobs, 1 = moons |
//! | 13 | 1 | domain: 0 = source, 1 = target |
//! | 14 | 1 | labels present: 0 or 1 |
//! | 15 | 1 | source domain index (0 for targets) |
//! | 16 | 4 | class count `N` (`u32`) |
//! | 20 | 4 | feature dimension `d` (`u32`) |
//! | 24 | 8 | row count (`u64`) |
//! | 32 | 8 | samples per class (`u64`) |
//! | 40 | 8 | rotation in degrees (`f64`) |
//! | 48 | 8 | scale (`f64`) |
//! | 56 | 8 | noise standard deviation (`f64`) |
//! | 64 | 8 | generator seed (`u64`) |
//! | 72 | … | rows: `d` × `f64` features, then `u32` label (`u32::MAX` when absent) |

use std::io::{Read, Write};

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::seeded_rng;

const MAGIC: &[u8; 8] = b"UBR2SDS\0";
const VERSION: u32 = 1;
const NO_LABEL: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeneratorKind {
    Blobs,
    Moons,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainRole {
    Source(u8),
    Target,
}

/// Everything needed to regenerate a dataset bit-for-bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub kind: GeneratorKind,
    pub role: DomainRole,
    pub classes: usize,
    pub per_class: usize,
    pub rotation: f64,
    pub scale: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Descriptor {
    pub fn generate(&self) -> Result<DomainDataset> {
        let mut ds = match self.kind {
            GeneratorKind::Blobs => make_blobs(
                self.classes,
                self.per_class,
                self.rotation,
                self.scale,
                self.noise,
                self.seed,
            )?,
            GeneratorKind::Moons => {
                if self.classes != 2 {
                    return Err(Error::Config("moons always have 2 classes".into()));
                }
                let mut ds = make_moons(self.per_class, self.rotation, self.noise, self.seed)?;
                ds.descriptor.scale = self.scale;
                transform(&mut ds.inputs, 0.0, self.scale);
                ds
            }
        };
        ds.descriptor.role = self.role;
        Ok(ds)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub descriptor: Descriptor,
}

impl DomainDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.descriptor.classes
    }

    /// Splits a target domain into training inputs and labels that are
    /// reserved for evaluation.
    pub fn into_unlabeled(self) -> (Array2<f64>, Vec<usize>) {
        (self.inputs, self.labels)
    }

    pub fn write_to<W: Write>(&self, mut w: W, with_labels: bool) -> Result<()> {
        let d = &self.descriptor;
        let mut header = Vec::with_capacity(72);
        header.extend_from_slice(MAGIC);
        header.extend_from_slice(&VERSION.to_le_bytes());
        header.push(match d.kind {
            GeneratorKind::Blobs => 0,
            GeneratorKind::Moons => 1,
        });
        let (role, src_idx) = match d.role {
            DomainRole::Source(i) => (0u8, i),
            DomainRole::Target => (1u8, 0),
        };
        header.push(role);
        header.push(u8::from(with_labels));
        header.push(src_idx);
        header.extend_from_slice(&(d.classes as u32).to_le_bytes());
        header.extend_from_slice(&(self.inputs.ncols() as u32).to_le_bytes());
        header.extend_from_slice(&(self.inputs.nrows() as u64).to_le_bytes());
        header.extend_from_slice(&(d.per_class as u64).to_le_bytes());
        header.extend_from_slice(&d.rotation.to_le_bytes());
        header.extend_from_slice(&d.scale.to_le_bytes());
        header.extend_from_slice(&d.noise.to_le_bytes());
        header.extend_from_slice(&d.seed.to_le_bytes());
        w.write_all(&header)?;
        for (row, &label) in self.inputs.rows().into_iter().zip(&self.labels) {
            for v in row {
                w.write_all(&v.to_le_bytes())?;
            }
            let l = if with_labels { label as u32 } else { NO_LABEL };
            w.write_all(&l.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self, with_labels: bool) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf, with_labels).expect("writing to memory");
        buf
    }

    /// Reads a dataset file. Unlabeled files yield an empty label vector.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 72];
        r.read_exact(&mut header)?;
        if &header[..8] != MAGIC {
            return Err(Error::Format("not a ubr2s dataset file".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(header[o..o + 8].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(header[o..o + 8].try_into().unwrap());
        if u32_at(8) != VERSION {
            return Err(Error::Format(format!("unsupported dataset version {}", u32_at(8))));
        }
        let kind = match header[12] {
            0 => GeneratorKind::Blobs,
            1 => GeneratorKind::Moons,
            k => return Err(Error::Format(format!("unknown generator kind {k}"))),
        };
        let role = match header[13] {
            0 => DomainRole::Source(header[15]),
            1 => DomainRole::Target,
            k => return Err(Error::Format(format!("unknown domain role {k}"))),
        };
        let has_labels = header[14] == 1;
        let classes = u32_at(16) as usize;
        let dim = u32_at(20) as usize;
        let rows = u64_at(24) as usize;
        let descriptor = Descriptor {
            kind,
            role,
            classes,
            per_class: u64_at(32) as usize,
            rotation: f64_at(40),
            scale: f64_at(48),
            noise: f64_at(56),
            seed: u64_at(64),
        };
        let mut inputs = Array2::zeros((rows, dim));
        let mut labels = Vec::with_capacity(if has_labels { rows } else { 0 });
        let mut buf8 = [0u8; 8];
        let mut buf4 = [0u8; 4];
        for i in 0..rows {
            for j in 0..dim {
                r.read_exact(&mut buf8)?;
                inputs[[i, j]] = f64::from_le_bytes(buf8);
            }
            r.read_exact(&mut buf4)?;
            let l = u32::from_le_bytes(buf4);
            if has_labels {
                if l as usize >= classes {
                    return Err(Error::Format(format!("label {l} out of range at row {i}")));
                }
                labels.push(l as usize);
            }
        }
        Ok(DomainDataset {
            inputs,
            labels,
            descriptor,
        })
    }
}

fn validate(per_class: usize, rotation: f64, scale: f64, noise: f64) -> Result<()> {
    if per_class == 0 {
        return Err(Error::Config("per_class must be >= 1".into()));
    }
    if !rotation.is_finite() {
        return Err(Error::Config("rotation must be finite".into()));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Config(format!("scale {scale} must be positive")));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::Config(format!("noise {noise} must be nonnegative")));
    }
    Ok(())
}

/// Rotates (degrees, counter-clockwise about the origin) then scales.
/// Whole turns and a unit scale leave the points untouched.
fn transform(points: &mut Array2<f64>, rotation: f64, scale: f64) {
    let turn = rotation.rem_euclid(360.0);
    if turn != 0.0 {
        let r = turn.to_radians();
        let (s, c) = (libm::sin(r), libm::cos(r));
        for mut row in points.rows_mut() {
            let (x, y) = (row[0], row[1]);
            row[0] = c * x - s * y;
            row[1] = s * x + c * y;
        }
    }
    if scale != 1.0 {
        points.mapv_inplace(|v| v * scale);
    }
}

/// `classes` isotropic Gaussian blobs with means evenly spaced on the unit
/// circle (class `c` at angle `2πc/N`), then rotated and scaled.
pub fn make_blobs(
    classes: usize,
    per_class: usize,
    rotation: f64,
    scale: f64,
    noise: f64,
    seed: u64,
) -> Result<DomainDataset> {
    if classes < 2 {
        return Err(Error::Config("blobs need at least 2 classes".into()));
    }
    validate(per_class, rotation, scale, noise)?;
    let mut rng = seeded_rng(seed);
    let rows = classes * per_class;
    let mut inputs = Array2::zeros((rows, 2));
    let mut labels = Vec::with_capacity(rows);
    for i in 0..rows {
        let c = i % classes;
        let angle = std::f64::consts::TAU * c as f64 / classes as f64;
        let nx: f64 = rng.sample(StandardNormal);
        let ny: f64 = rng.sample(StandardNormal);
        inputs[[i, 0]] = libm::cos(angle) + noise * nx;
        inputs[[i, 1]] = libm::sin(angle) + noise * ny;
        labels.push(c);
    }
    transform(&mut inputs, rotation, scale);
    Ok(DomainDataset {
        inputs,
        labels,
        descriptor: Descriptor {
            kind: GeneratorKind::Blobs,
            role: DomainRole::Source(0),
            classes,
            per_class,
            rotation,
            scale,
            noise,
            seed,
        },
    })
}

/// Two interleaved half circles, centered on the origin before rotation.
pub fn make_moons(per_class: usize, rotation: f64, noise: f64, seed: u64) -> Result<DomainDataset> {
    validate(per_class, rotation, 1.0, noise)?;
    let mut rng = seeded_rng(seed);
    let rows = 2 * per_class;
    let mut inputs = Array2::zeros((rows, 2));
    let mut labels = Vec::with_capacity(rows);
    let span = (per_class.max(2) - 1) as f64;
    for i in 0..rows {
        let c = i % 2;
        let t = std::f64::consts::PI * (i / 2) as f64 / span;
        let (x, y) = if c == 0 {
            (libm::cos(t), libm::sin(t))
        } else {
            (1.0 - libm::cos(t), 0.5 - libm::sin(t))
        };
        let nx: f64 = rng.sample(StandardNormal);
        let ny: f64 = rng.sample(StandardNormal);
        inputs[[i, 0]] = x - 0.5 + noise * nx;
        inputs[[i, 1]] = y - 0.25 + noise * ny;
        labels.push(c);
    }
    transform(&mut inputs, rotation, 1.0);
    Ok(DomainDataset {
        inputs,
        labels,
        descriptor: Descriptor {
            kind: GeneratorKind::Moons,
            role: DomainRole::Source(0),
            classes: 2,
            per_class,
            rotation,
            scale: 1.0,
            noise,
            seed,
        },
    })
}
