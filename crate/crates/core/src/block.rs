//! Block records: one octree node's representative points for one interval.
//!
//! Layout, little-endian:
//!
//! | field | bytes |
//! |---|---|
//! | magic `CLB1` | 4 |
//! | version `u32 = 1` | 4 |
//! | path code `u64` | 8 |
//! | interval `u32` | 4 |
//! | count `u32` | 4 |
//! | `box_start` min xyz, max xyz `f64` | 48 |
//! | `box_end` min xyz, max xyz `f64` | 48 |
//! | reserved, zero | 8 |
//!
//! followed by the columns `qpos_start u16*3`, `qpos_end u16*3`,
//! `size_start f32`, `size_end f32`, `weight_start f32`, `weight_end f32`,
//! `id u64` (36 bytes per point), zero padding to an 8-byte boundary, and a
//! CRC-32 (IEEE) of every preceding byte.

use crate::bytes::{magic_str, Reader};
use crate::error::{Error, Result};
use crate::geom::{dequantize, Aabb, NodePath, QPos, Vec3};

pub const BLOCK_MAGIC: &[u8; 4] = b"CLB1";
pub const BLOCK_VERSION: u32 = 1;
pub const BLOCK_HEADER_BYTES: usize = 128;
pub const BLOCK_POINT_BYTES: usize = 36;

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub path: NodePath,
    pub interval: u32,
    pub box_start: Aabb,
    pub box_end: Aabb,
    pub qpos_start: Vec<QPos>,
    pub qpos_end: Vec<QPos>,
    pub size_start: Vec<f32>,
    pub size_end: Vec<f32>,
    pub weight_start: Vec<f32>,
    pub weight_end: Vec<f32>,
    pub id: Vec<u64>,
}

impl Block {
    pub fn empty(path: NodePath, interval: u32, bounds: Aabb) -> Self {
        Block {
            path,
            interval,
            box_start: bounds,
            box_end: bounds,
            qpos_start: Vec::new(),
            qpos_end: Vec::new(),
            size_start: Vec::new(),
            size_end: Vec::new(),
            weight_start: Vec::new(),
            weight_end: Vec::new(),
            id: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id.is_empty()
    }

    pub fn start_position(&self, i: usize) -> Vec3 {
        dequantize(self.qpos_start[i], &self.box_start)
    }

    pub fn end_position(&self, i: usize) -> Vec3 {
        dequantize(self.qpos_end[i], &self.box_end)
    }

    fn columns_consistent(&self) -> bool {
        let m = self.id.len();
        [
            self.qpos_start.len(),
            self.qpos_end.len(),
            self.size_start.len(),
            self.size_end.len(),
            self.weight_start.len(),
            self.weight_end.len(),
        ]
        .iter()
        .all(|&l| l == m)
    }
}

/// Encoded size of a block holding `count` points.
pub fn encoded_block_len(count: usize) -> usize {
    (BLOCK_HEADER_BYTES + BLOCK_POINT_BYTES * count).next_multiple_of(8) + 4
}

fn put_aabb(out: &mut Vec<u8>, b: &Aabb) {
    for v in b.min.to_array().into_iter().chain(b.max.to_array()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn get_aabb(r: &mut Reader<'_>) -> Result<Aabb> {
    let min = Vec3::new(r.f64()?, r.f64()?, r.f64()?);
    let max = Vec3::new(r.f64()?, r.f64()?, r.f64()?);
    Ok(Aabb::new(min, max))
}

pub fn write_block(block: &Block) -> Vec<u8> {
    assert!(block.columns_consistent(), "block columns differ in length");
    let m = block.len();
    let mut out = Vec::with_capacity(encoded_block_len(m));
    out.extend_from_slice(BLOCK_MAGIC);
    out.extend_from_slice(&BLOCK_VERSION.to_le_bytes());
    out.extend_from_slice(&block.path.code().to_le_bytes());
    out.extend_from_slice(&block.interval.to_le_bytes());
    out.extend_from_slice(&(m as u32).to_le_bytes());
    put_aabb(&mut out, &block.box_start);
    put_aabb(&mut out, &block.box_end);
    out.extend_from_slice(&[0u8; 8]);
    debug_assert_eq!(out.len(), BLOCK_HEADER_BYTES);
    for q in block.qpos_start.iter().chain(&block.qpos_end) {
        out.extend_from_slice(&q.qx.to_le_bytes());
        out.extend_from_slice(&q.qy.to_le_bytes());
        out.extend_from_slice(&q.qz.to_le_bytes());
    }
    for col in [
        &block.size_start,
        &block.size_end,
        &block.weight_start,
        &block.weight_end,
    ] {
        for v in col {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for id in &block.id {
        out.extend_from_slice(&id.to_le_bytes());
    }
    out.resize(out.len().next_multiple_of(8), 0);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Decodes one block record, verifying magic, version, CRC and (when given)
/// that the point count does not exceed `max_count`.
pub fn read_block(bytes: &[u8], max_count: Option<usize>) -> Result<Block> {
    let mut r = Reader::new(bytes, "block");
    let magic = r.array::<4>()?;
    if &magic != BLOCK_MAGIC {
        return Err(Error::BadMagic {
            expected: magic_str(BLOCK_MAGIC),
            found: magic_str(&magic),
        });
    }
    let version = r.u32()?;
    if version != BLOCK_VERSION {
        return Err(Error::BadVersion {
            expected: BLOCK_VERSION,
            found: version,
        });
    }
    let path = NodePath::from_code(r.u64()?)?;
    let interval = r.u32()?;
    let m = r.u32()? as usize;
    if let Some(cap) = max_count {
        if m > cap {
            return Err(Error::OverCapacity {
                count: m,
                capacity: cap,
            });
        }
    }
    let box_start = get_aabb(&mut r)?;
    let box_end = get_aabb(&mut r)?;
    r.take(8)?;

    let total = encoded_block_len(m);
    r.require(total - BLOCK_HEADER_BYTES)?;
    let stored = u32::from_le_bytes(bytes[total - 4..total].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..total - 4]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let qpos = |r: &mut Reader<'_>| -> Result<Vec<QPos>> {
        (0..m)
            .map(|_| Ok(QPos::new(r.u16()?, r.u16()?, r.u16()?)))
            .collect()
    };
    let qpos_start = qpos(&mut r)?;
    let qpos_end = qpos(&mut r)?;
    let f32s = |r: &mut Reader<'_>| -> Result<Vec<f32>> { (0..m).map(|_| r.f32()).collect() };
    let size_start = f32s(&mut r)?;
    let size_end = f32s(&mut r)?;
    let weight_start = f32s(&mut r)?;
    let weight_end = f32s(&mut r)?;
    let id = (0..m).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    Ok(Block {
        path,
        interval,
        box_start,
        box_end,
        qpos_start,
        qpos_end,
        size_start,
        size_end,
        weight_start,
        weight_end,
        id,
    })
}
