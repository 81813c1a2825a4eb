//! Geometric and addressing primitives: points, boxes, octree node paths,
//! Morton keys and the 16-bit position quantizer.
//!
//! Octant digits use `4*ix + 2*iy + iz`, where each of `ix`, `iy`, `iz` is 1
//! when the point lies in the upper half of the parent along that axis.
//! Child boxes are half-open: a point exactly on the mid plane belongs to
//! the upper child.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deepest level a [`NodePath`] can address (1 + 3*20 = 61 bits).
pub const MAX_DEPTH: u32 = 20;

/// Largest quantized coordinate value.
pub const QMAX: f64 = 65535.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub const fn splat(v: f64) -> Self {
        Vec3::new(v, v, v)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn get(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            2 => self.z,
            _ => panic!("axis {axis} out of range"),
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn length(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.length())
    }

    pub fn min(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn lerp(self, o: Vec3, t: f64) -> Vec3 {
        self * (1.0 - t) + o * t
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl std::ops::Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl std::ops::Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Axis-aligned box, `min <= max` componentwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub const fn new(min: Vec3, max: Vec3) -> Self {
        Aabb { min, max }
    }

    pub fn unit() -> Self {
        Aabb::new(Vec3::ZERO, Vec3::splat(1.0))
    }

    /// Tight box over `points`, or `None` if empty.
    pub fn from_points<I: IntoIterator<Item = Vec3>>(points: I) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = Aabb::new(first, first);
        for p in it {
            b.min = b.min.min(p);
            b.max = b.max.max(p);
        }
        Some(b)
    }

    pub fn is_valid(&self) -> bool {
        self.min.is_finite()
            && self.max.is_finite()
            && (self.max - self.min).is_finite()
            && self.min.x <= self.max.x
            && self.min.y <= self.max.y
            && self.min.z <= self.max.z
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn longest_edge(&self) -> f64 {
        let e = self.extent();
        e.x.max(e.y).max(e.z)
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().length()
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    pub fn contains_box(&self, o: &Aabb) -> bool {
        self.contains(o.min) && self.contains(o.max)
    }

    pub fn clamp(&self, p: Vec3) -> Vec3 {
        p.max(self.min).min(self.max)
    }

    /// Smallest cube sharing this box's minimum corner that contains it.
    pub fn cubed(&self) -> Aabb {
        let side = self.longest_edge();
        Aabb::new(self.min, self.min + Vec3::splat(side))
    }

    /// Euclidean distance from `p` to the nearest point of the box (0 inside).
    pub fn distance_to(&self, p: Vec3) -> f64 {
        (self.clamp(p) - p).length()
    }

    /// Interiors (half-open) overlap test; boxes that only touch do not overlap.
    pub fn overlaps_open(&self, o: &Aabb) -> bool {
        self.min.x < o.max.x
            && o.min.x < self.max.x
            && self.min.y < o.max.y
            && o.min.y < self.max.y
            && self.min.z < o.max.z
            && o.min.z < self.max.z
    }
}

/// Box of one octant of `parent`.
///
/// `octant` must be in `0..8`.
pub fn child_aabb(parent: &Aabb, octant: u8) -> Aabb {
    debug_assert!(octant < 8);
    let mid = parent.center();
    let pick = |bit: u8, lo: f64, mid: f64, hi: f64| {
        if octant & bit != 0 {
            (mid, hi)
        } else {
            (lo, mid)
        }
    };
    let (x0, x1) = pick(4, parent.min.x, mid.x, parent.max.x);
    let (y0, y1) = pick(2, parent.min.y, mid.y, parent.max.y);
    let (z0, z1) = pick(1, parent.min.z, mid.z, parent.max.z);
    Aabb::new(Vec3::new(x0, y0, z0), Vec3::new(x1, y1, z1))
}

/// Octant of `parent` that owns `p` under the half-open rule.
pub fn octant_of(p: Vec3, parent: &Aabb) -> u8 {
    let mid = parent.center();
    (u8::from(p.x >= mid.x) << 2) | (u8::from(p.y >= mid.y) << 1) | u8::from(p.z >= mid.z)
}

/// Locational code of an octree node: a leading 1 bit followed by three bits
/// per level, most significant level first. The root is `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodePath(u64);

impl NodePath {
    pub const ROOT: NodePath = NodePath(1);

    /// Validates that `code` is a well-formed locational code.
    pub fn from_code(code: u64) -> Result<Self> {
        if code == 0 {
            return Err(Error::DepthRange("locational code 0 has no leading bit".into()));
        }
        let bits = 64 - code.leading_zeros();
        if !(bits - 1).is_multiple_of(3) {
            return Err(Error::DepthRange(format!(
                "code {code} has {bits} bits, not 1 + 3*depth"
            )));
        }
        let depth = (bits - 1) / 3;
        if depth > MAX_DEPTH {
            return Err(Error::DepthRange(format!("depth {depth} > {MAX_DEPTH}")));
        }
        Ok(NodePath(code))
    }

    pub fn code(self) -> u64 {
        self.0
    }

    pub fn depth(self) -> u32 {
        (63 - self.0.leading_zeros()) / 3
    }

    pub fn child(self, octant: u8) -> Result<Self> {
        if octant > 7 {
            return Err(Error::DepthRange(format!("octant {octant} > 7")));
        }
        if self.depth() >= MAX_DEPTH {
            return Err(Error::DepthRange(format!(
                "child of depth-{} node exceeds {MAX_DEPTH}",
                self.depth()
            )));
        }
        Ok(NodePath((self.0 << 3) | u64::from(octant)))
    }

    pub fn parent(self) -> Result<Self> {
        if self.0 == 1 {
            return Err(Error::DepthRange("root has no parent".into()));
        }
        Ok(NodePath(self.0 >> 3))
    }

    /// Octant of this node within its parent; `None` for the root.
    pub fn octant(self) -> Option<u8> {
        (self.0 != 1).then_some((self.0 & 7) as u8)
    }

    /// Octant digits from the root down.
    pub fn digits(self) -> impl Iterator<Item = u8> {
        let depth = self.depth();
        let code = self.0;
        (0..depth).rev().map(move |level| ((code >> (3 * level)) & 7) as u8)
    }

    pub fn is_ancestor_of(self, other: NodePath) -> bool {
        let (d, od) = (self.depth(), other.depth());
        od > d && (other.0 >> (3 * (od - d))) == self.0
    }

    /// Box of this node given the root box.
    pub fn aabb(self, root: &Aabb) -> Aabb {
        self.digits().fold(*root, |b, o| child_aabb(&b, o))
    }
}

impl fmt::Display for NodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn path_child(path: NodePath, octant: u8) -> Result<NodePath> {
    path.child(octant)
}

pub fn path_parent(path: NodePath) -> Result<NodePath> {
    path.parent()
}

pub fn path_depth(path: NodePath) -> u32 {
    path.depth()
}

/// Quantized position relative to a box; each axis spans `0..=65535`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct QPos {
    pub qx: u16,
    pub qy: u16,
    pub qz: u16,
}

impl QPos {
    pub const fn new(qx: u16, qy: u16, qz: u16) -> Self {
        QPos { qx, qy, qz }
    }
}

fn quantize_axis(p: f64, min: f64, extent: f64) -> u16 {
    if extent == 0.0 {
        return 0;
    }
    // f64::round is half away from zero.
    let q = ((p - min) / extent * QMAX).round();
    q.clamp(0.0, QMAX) as u16
}

/// Quantizes `p` against `bounds`, clamping into the box first.
///
/// Returns the code and whether clamping moved the point.
pub fn quantize(p: Vec3, bounds: &Aabb) -> Result<(QPos, bool)> {
    if !p.is_finite() {
        return Err(Error::Codec(format!("non-finite position {p:?}")));
    }
    if !bounds.is_valid() {
        return Err(Error::Codec(format!("invalid box {bounds:?}")));
    }
    let c = bounds.clamp(p);
    let e = bounds.extent();
    let q = QPos::new(
        quantize_axis(c.x, bounds.min.x, e.x),
        quantize_axis(c.y, bounds.min.y, e.y),
        quantize_axis(c.z, bounds.min.z, e.z),
    );
    Ok((q, c != p))
}

pub fn dequantize(q: QPos, bounds: &Aabb) -> Vec3 {
    let e = bounds.extent();
    Vec3::new(
        bounds.min.x + f64::from(q.qx) / QMAX * e.x,
        bounds.min.y + f64::from(q.qy) / QMAX * e.y,
        bounds.min.z + f64::from(q.qz) / QMAX * e.z,
    )
}

/// Per-axis worst-case reconstruction error of [`quantize`] over `bounds`.
pub fn quantization_bound(bounds: &Aabb) -> Vec3 {
    bounds.extent() * (1.0 / (2.0 * QMAX))
}

/// Locational code of the depth-`depth` cell of `root` containing `p`
/// (clamped into `root`). Sorting points by this key makes every node's
/// points one contiguous run.
pub fn morton_key(p: Vec3, root: &Aabb, depth: u32) -> Result<u64> {
    if depth > MAX_DEPTH {
        return Err(Error::DepthRange(format!("depth {depth} > {MAX_DEPTH}")));
    }
    let p = root.clamp(p);
    let mut code = 1u64;
    let mut cell = *root;
    for _ in 0..depth {
        let o = octant_of(p, &cell);
        code = (code << 3) | u64::from(o);
        cell = child_aabb(&cell, o);
    }
    Ok(code)
}
