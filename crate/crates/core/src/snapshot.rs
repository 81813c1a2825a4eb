//! Raw snapshot tables and their columnar `CPT1` file format.
//!
//! Layout, little-endian: magic `CPT1`, version `u32 = 1`, count `u64`,
//! snapshot time `f64`, 16 reserved zero bytes (40-byte header), followed by
//! the columns `id u64`, `pos 3*f64`, `mass f32`, `density f32`, `size f32`
//! and a zero `u32` padding column, for a 48-byte per-particle stride.

use std::collections::HashSet;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::bytes::{magic_str, Reader};
use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};

pub const TABLE_MAGIC: &[u8; 4] = b"CPT1";
pub const TABLE_VERSION: u32 = 1;
pub const TABLE_HEADER_BYTES: usize = 40;
pub const TABLE_STRIDE_BYTES: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub id: u64,
    pub pos: Vec3,
    pub mass: f32,
    pub density: f32,
    pub size: f32,
}

/// One snapshot, stored column-wise.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParticleTable {
    pub snapshot_time: f64,
    pub id: Vec<u64>,
    pub pos: Vec<Vec3>,
    pub mass: Vec<f32>,
    pub density: Vec<f32>,
    pub size: Vec<f32>,
}

impl ParticleTable {
    pub fn with_capacity(snapshot_time: f64, n: usize) -> Self {
        ParticleTable {
            snapshot_time,
            id: Vec::with_capacity(n),
            pos: Vec::with_capacity(n),
            mass: Vec::with_capacity(n),
            density: Vec::with_capacity(n),
            size: Vec::with_capacity(n),
        }
    }

    pub fn from_particles(snapshot_time: f64, particles: &[Particle]) -> Self {
        let mut t = ParticleTable::with_capacity(snapshot_time, particles.len());
        for p in particles {
            t.push(*p);
        }
        t
    }

    pub fn len(&self) -> usize {
        self.id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id.is_empty()
    }

    pub fn push(&mut self, p: Particle) {
        self.id.push(p.id);
        self.pos.push(p.pos);
        self.mass.push(p.mass);
        self.density.push(p.density);
        self.size.push(p.size);
    }

    pub fn get(&self, i: usize) -> Particle {
        Particle {
            id: self.id[i],
            pos: self.pos[i],
            mass: self.mass[i],
            density: self.density[i],
            size: self.size[i],
        }
    }

    pub fn bounds(&self) -> Option<Aabb> {
        Aabb::from_points(self.pos.iter().copied())
    }

    /// Column lengths agree and ids are unique.
    pub fn check_consistent(&self) -> Result<()> {
        let n = self.id.len();
        if [self.pos.len(), self.mass.len(), self.density.len(), self.size.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::Invalid("particle table columns differ in length".into()));
        }
        let mut seen = HashSet::with_capacity(n);
        for &id in &self.id {
            if !seen.insert(id) {
                return Err(Error::DuplicateId(id));
            }
        }
        Ok(())
    }

    /// [`check_consistent`](Self::check_consistent) plus positivity and
    /// finiteness of every attribute.
    pub fn validate(&self) -> Result<()> {
        self.check_consistent()?;
        for i in 0..self.len() {
            let p = self.get(i);
            let ok = p.pos.is_finite()
                && p.mass.is_finite()
                && p.mass > 0.0
                && p.density.is_finite()
                && p.density > 0.0
                && p.size.is_finite()
                && p.size > 0.0;
            if !ok {
                return Err(Error::Invalid(format!("particle {} has invalid attributes: {p:?}", p.id)));
            }
        }
        Ok(())
    }

    pub fn encoded_len(&self) -> usize {
        TABLE_HEADER_BYTES + TABLE_STRIDE_BYTES * self.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len();
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(TABLE_MAGIC);
        out.extend_from_slice(&TABLE_VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&self.snapshot_time.to_le_bytes());
        out.extend_from_slice(&[0u8; 16]);
        for id in &self.id {
            out.extend_from_slice(&id.to_le_bytes());
        }
        for p in &self.pos {
            for c in p.to_array() {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        for col in [&self.mass, &self.density, &self.size] {
            for v in col {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.resize(out.len() + 4 * n, 0);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, "particle table");
        let magic = r.array::<4>()?;
        if &magic != TABLE_MAGIC {
            return Err(Error::BadMagic {
                expected: magic_str(TABLE_MAGIC),
                found: magic_str(&magic),
            });
        }
        let version = r.u32()?;
        if version != TABLE_VERSION {
            return Err(Error::BadVersion {
                expected: TABLE_VERSION,
                found: version,
            });
        }
        let count = r.u64()?;
        let snapshot_time = r.f64()?;
        r.take(16)?;
        let n = usize::try_from(count)
            .ok()
            .filter(|n| n.checked_mul(TABLE_STRIDE_BYTES).is_some())
            .ok_or_else(|| Error::Invalid(format!("particle count {count} too large")))?;
        r.require(n * TABLE_STRIDE_BYTES)?;

        let mut t = ParticleTable::with_capacity(snapshot_time, n);
        for _ in 0..n {
            t.id.push(r.u64()?);
        }
        for _ in 0..n {
            t.pos.push(Vec3::new(r.f64()?, r.f64()?, r.f64()?));
        }
        for col in [&mut t.mass, &mut t.density, &mut t.size] {
            for _ in 0..n {
                col.push(r.f32()?);
            }
        }
        r.take(4 * n)?;
        t.check_consistent()?;
        Ok(t)
    }
}

/// Writes `table` and returns the number of bytes written.
pub fn write_table<W: Write>(table: &ParticleTable, mut out: W) -> Result<usize> {
    let bytes = table.to_bytes();
    out.write_all(&bytes)?;
    Ok(bytes.len())
}

pub fn read_table<R: Read>(mut src: R) -> Result<ParticleTable> {
    let mut buf = Vec::new();
    src.read_to_end(&mut buf)?;
    ParticleTable::from_bytes(&buf)
}

pub fn write_table_file(table: &ParticleTable, path: &Path) -> Result<usize> {
    let bytes = table.to_bytes();
    fs::write(path, &bytes).map_err(|e| Error::from(e).in_file(path))?;
    Ok(bytes.len())
}

pub fn read_table_file(path: &Path) -> Result<ParticleTable> {
    let buf = fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    ParticleTable::from_bytes(&buf).map_err(|e| e.in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one() -> ParticleTable {
        ParticleTable::from_particles(
            2.5,
            &[Particle {
                id: 42,
                pos: Vec3::new(1.0, -2.0, 3.5),
                mass: 1.5,
                density: 0.25,
                size: 0.125,
            }],
        )
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = ParticleTable {
            snapshot_time: 1.0,
            ..Default::default()
        };
        let mut buf = Vec::new();
        assert_eq!(write_table(&t, &mut buf).unwrap(), 40);
        assert_eq!(read_table(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn single_particle_round_trip() {
        let t = one();
        let bytes = t.to_bytes();
        assert_eq!(bytes.len(), 40 + 48);
        assert_eq!(&bytes[84..88], &[0, 0, 0, 0]);
        assert_eq!(ParticleTable::from_bytes(&bytes).unwrap(), t);
    }

    #[test]
    fn corrupt_magic_names_expected() {
        let mut bytes = one().to_bytes();
        bytes[0] = b'X';
        let err = ParticleTable::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::BadMagic { .. }));
        assert!(err.to_string().contains("CPT1"), "{err}");
    }

    #[test]
    fn truncation_and_version() {
        let bytes = one().to_bytes();
        assert!(matches!(
            ParticleTable::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated { .. })
        ));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(
            ParticleTable::from_bytes(&v2),
            Err(Error::BadVersion { found: 2, .. })
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut t = one();
        t.push(t.get(0));
        assert!(matches!(
            ParticleTable::from_bytes(&t.to_bytes()),
            Err(Error::DuplicateId(42))
        ));
    }
}
