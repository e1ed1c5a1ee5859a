//! Dyadic cells, boxes and partitions of the unit cube.
//!
//! A cell is addressed by the sequence of child indices chosen at each split
//! of the root. Every split halves all axes at once, so a cell of a
//! `dim`-dimensional cube has `2^dim` children, and bit `a` of a child index
//! says whether that child sits in the upper half along axis `a`.
//!
//! Cells are half-open `[lo, hi)` on every axis except that the upper face of
//! the unit cube is closed, so the point `1.0` belongs to the last cell.

use std::cmp::Ordering;
use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deepest level any cell may reach. Coordinates are resolved with 64-bit
/// integers, so this leaves plenty of headroom.
pub const MAX_DEPTH: usize = 30;

/// Largest dimension for which child indices fit in a `u32`.
pub const MAX_DIM: usize = 24;

/// Upper bound on the number of partitions [`enumerate_partitions`] will build.
pub const ENUMERATION_GUARD: usize = 1_000_000;

/// Axis layout of the product space `state x control x next-state`.
///
/// Axes are ordered `x_0..x_{d1-1}, a_0..a_{d2-1}, y_0..y_{d1-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub d1: usize,
    pub d2: usize,
}

impl Layout {
    pub fn new(d1: usize, d2: usize) -> Result<Self> {
        if d1 == 0 || d2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "state and control dimensions must be positive, got d1={d1}, d2={d2}"
            )));
        }
        if 2 * d1 + d2 > MAX_DIM {
            return Err(Error::InvalidParameter(format!(
                "product dimension {} exceeds {MAX_DIM}",
                2 * d1 + d2
            )));
        }
        Ok(Layout { d1, d2 })
    }

    /// Dimension of the product space.
    pub fn dim(&self) -> usize {
        2 * self.d1 + self.d2
    }

    /// Dimension of the state-control space.
    pub fn footprint_dim(&self) -> usize {
        self.d1 + self.d2
    }

    pub fn footprint_mask(&self) -> u32 {
        (1u32 << self.footprint_dim()) - 1
    }

    /// Projection of a product cell onto the state-control space.
    pub fn footprint(&self, cell: &CellId) -> CellId {
        let mask = self.footprint_mask();
        CellId::from_path(cell.path.iter().map(|c| c & mask).collect())
    }

    /// Volume of the next-state block of a product cell.
    pub fn next_state_volume(&self, cell: &CellId) -> f64 {
        dyadic_volume(cell.depth(), self.d1)
    }

    /// Assemble a product point from its three parts.
    pub fn join(&self, x: &[f64], a: &[f64], y: &[f64]) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.dim());
        p.extend_from_slice(x);
        p.extend_from_slice(a);
        p.extend_from_slice(y);
        p
    }
}

/// `2^{-depth * dim}` computed exactly.
pub fn dyadic_volume(depth: usize, dim: usize) -> f64 {
    let e = (depth * dim) as i32;
    2f64.powi(-e)
}

/// A dyadic cell, identified by its path of child indices from the root.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct CellId {
    path: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct CellRepr {
    path: Vec<u32>,
    depth: usize,
}

impl Serialize for CellId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CellRepr {
            path: self.path.clone(),
            depth: self.depth(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CellId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = CellRepr::deserialize(d)?;
        if r.depth != r.path.len() {
            return Err(serde::de::Error::custom(format!(
                "cell depth {} does not match path length {}",
                r.depth,
                r.path.len()
            )));
        }
        Ok(CellId { path: r.path })
    }
}

impl CellId {
    pub fn root() -> Self {
        CellId { path: Vec::new() }
    }

    pub fn from_path(path: Vec<u32>) -> Self {
        CellId { path }
    }

    /// Build a cell, checking depth and child indices against `dim`.
    pub fn checked(path: Vec<u32>, dim: usize) -> Result<Self> {
        if path.len() > MAX_DEPTH {
            return Err(Error::MaxDepthExceeded {
                requested: path.len(),
                limit: MAX_DEPTH,
            });
        }
        let fanout = 1u64 << dim;
        if let Some(c) = path.iter().find(|&&c| c as u64 >= fanout) {
            return Err(Error::InvalidCell(format!(
                "child index {c} out of range for dimension {dim}"
            )));
        }
        Ok(CellId { path })
    }

    pub fn path(&self) -> &[u32] {
        &self.path
    }

    pub fn depth(&self) -> usize {
        self.path.len()
    }

    pub fn child(&self, idx: u32) -> CellId {
        let mut path = self.path.clone();
        path.push(idx);
        CellId { path }
    }

    pub fn parent(&self) -> Option<CellId> {
        if self.path.is_empty() {
            None
        } else {
            Some(CellId {
                path: self.path[..self.path.len() - 1].to_vec(),
            })
        }
    }

    /// The ancestor at `depth`, or the cell itself if it is that shallow.
    pub fn truncate(&self, depth: usize) -> CellId {
        CellId {
            path: self.path[..depth.min(self.path.len())].to_vec(),
        }
    }

    /// True if `self` contains `other` (a cell contains itself).
    pub fn contains(&self, other: &CellId) -> bool {
        other.path.len() >= self.path.len() && other.path[..self.path.len()] == self.path[..]
    }

    pub fn strictly_contains(&self, other: &CellId) -> bool {
        other.path.len() > self.path.len() && self.contains(other)
    }

    /// Two dyadic cells intersect exactly when one contains the other.
    pub fn intersects(&self, other: &CellId) -> bool {
        self.contains(other) || other.contains(self)
    }

    /// Integer corner coordinate of the cell along `axis`, in units of
    /// `2^{-depth}`.
    pub fn corner(&self, axis: usize) -> u64 {
        self.path
            .iter()
            .fold(0u64, |acc, &c| (acc << 1) | ((c >> axis) & 1) as u64)
    }

    pub fn volume(&self, dim: usize) -> f64 {
        dyadic_volume(self.depth(), dim)
    }

    pub fn to_box(&self, dim: usize) -> AxisBox {
        let side = 2f64.powi(-(self.depth() as i32));
        let lo: Vec<f64> = (0..dim).map(|a| self.corner(a) as f64 * side).collect();
        let hi = lo.iter().map(|l| l + side).collect();
        AxisBox { lo, hi }
    }

    /// The depth-`depth` cell holding `point`.
    pub fn locate(point: &[f64], depth: usize) -> Result<CellId> {
        if depth > MAX_DEPTH {
            return Err(Error::MaxDepthExceeded {
                requested: depth,
                limit: MAX_DEPTH,
            });
        }
        let scale = (1u64 << depth) as f64;
        let top = (1u64 << depth) - 1;
        let mut ks = Vec::with_capacity(point.len());
        for (a, &z) in point.iter().enumerate() {
            if !(0.0..=1.0).contains(&z) {
                return Err(Error::PointOutsideDomain(format!("coordinate {a} = {z}")));
            }
            ks.push(((z * scale).floor() as u64).min(top));
        }
        let path = (0..depth)
            .map(|t| {
                let shift = depth - 1 - t;
                ks.iter().enumerate().fold(0u32, |acc, (a, &k)| {
                    acc | ((((k >> shift) & 1) as u32) << a)
                })
            })
            .collect();
        Ok(CellId { path })
    }
}

/// An axis-aligned box `[lo, hi)` inside the unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::InvalidBox(format!(
                "lo has {} axes, hi has {}",
                lo.len(),
                hi.len()
            )));
        }
        for (a, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite()) || l > h || *l < 0.0 || *h > 1.0 {
                return Err(Error::InvalidBox(format!(
                    "axis {a}: [{l}, {h}) is not inside [0, 1]"
                )));
            }
        }
        Ok(AxisBox { lo, hi })
    }

    pub fn unit(dim: usize) -> Self {
        AxisBox {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    /// Membership using the half-open convention, closed at the cube's upper face.
    pub fn contains_point(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&z, (&l, &h))| z >= l && (z < h || (h == 1.0 && z == 1.0)))
    }

    /// Volume of the intersection with another box.
    pub fn overlap(&self, other: &AxisBox) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(other.lo.iter().zip(&other.hi))
            .map(|((l1, h1), (l2, h2))| (h1.min(*h2) - l1.max(*l2)).max(0.0))
            .product()
    }

    /// Fraction of this box covered by `other`.
    pub fn fraction_inside(&self, other: &AxisBox) -> f64 {
        let v = self.volume();
        if v == 0.0 {
            0.0
        } else {
            self.overlap(other) / v
        }
    }
}

/// A finite set of pairwise disjoint dyadic cells covering the unit cube.
///
/// Leaves are kept sorted, which makes equality structural and lets point
/// location use binary search.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PartitionRepr", into = "PartitionRepr")]
pub struct DyadicPartition {
    dim: usize,
    leaves: Vec<CellId>,
}

#[derive(Serialize, Deserialize)]
struct PartitionRepr {
    dim: usize,
    leaves: Vec<CellId>,
}

impl TryFrom<PartitionRepr> for DyadicPartition {
    type Error = Error;

    fn try_from(r: PartitionRepr) -> Result<Self> {
        DyadicPartition::new(r.dim, r.leaves)
    }
}

impl From<DyadicPartition> for PartitionRepr {
    fn from(m: DyadicPartition) -> Self {
        PartitionRepr {
            dim: m.dim,
            leaves: m.leaves,
        }
    }
}

impl DyadicPartition {
    /// Validate and build a partition of the `dim`-dimensional cube.
    pub fn new(dim: usize, mut leaves: Vec<CellId>) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidParameter(format!(
                "dimension {dim} out of range"
            )));
        }
        for l in &leaves {
            CellId::checked(l.path.clone(), dim)?;
        }
        leaves.sort();
        leaves.dedup();
        let leafset: HashSet<&CellId> = leaves.iter().collect();
        let mut internal: HashSet<CellId> = HashSet::new();
        for l in &leaves {
            for d in 0..l.depth() {
                internal.insert(l.truncate(d));
            }
        }
        if let Some(c) = internal.iter().find(|c| leafset.contains(c)) {
            return Err(Error::InvalidCell(format!(
                "cell {:?} overlaps a finer leaf",
                c.path
            )));
        }
        if leaves.is_empty() {
            return Err(Error::InvalidCell(
                "a partition needs at least one leaf".into(),
            ));
        }
        let fanout = 1u32 << dim;
        for c in &internal {
            for i in 0..fanout {
                let ch = c.child(i);
                if !leafset.contains(&ch) && !internal.contains(&ch) {
                    return Err(Error::InvalidCell(format!(
                        "cells do not cover child {:?}",
                        ch.path
                    )));
                }
            }
        }
        Ok(DyadicPartition { dim, leaves })
    }

    pub fn trivial(dim: usize) -> Self {
        DyadicPartition {
            dim,
            leaves: vec![CellId::root()],
        }
    }

    /// All cells at a fixed depth.
    pub fn uniform(dim: usize, depth: usize) -> Result<Self> {
        if depth > MAX_DEPTH {
            return Err(Error::MaxDepthExceeded {
                requested: depth,
                limit: MAX_DEPTH,
            });
        }
        let count = 2f64.powi((dim * depth) as i32);
        if count > ENUMERATION_GUARD as f64 {
            return Err(Error::EnumerationTooLarge {
                count,
                guard: ENUMERATION_GUARD,
            });
        }
        let mut leaves = vec![CellId::root()];
        for _ in 0..depth {
            leaves = leaves.iter().flat_map(|c| split(c, dim)).collect();
        }
        leaves.sort();
        Ok(DyadicPartition { dim, leaves })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn leaves(&self) -> &[CellId] {
        &self.leaves
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn max_depth(&self) -> usize {
        self.leaves.iter().map(|c| c.depth()).max().unwrap_or(0)
    }

    /// Index of the leaf containing `cell`, if some leaf is an ancestor of it
    /// (or the cell itself).
    pub fn leaf_containing(&self, cell: &CellId) -> Option<usize> {
        for d in 0..=cell.depth() {
            let probe = &cell.path[..d];
            if let Ok(i) = self.leaves.binary_search_by(|l| l.path[..].cmp(probe)) {
                return Some(i);
            }
        }
        None
    }

    /// Index of the leaf holding a point of the unit cube.
    pub fn locate_point(&self, point: &[f64]) -> Result<usize> {
        if point.len() != self.dim {
            return Err(Error::DimensionMismatch {
                record: 0,
                detail: format!(
                    "point has {} coordinates, partition has {}",
                    point.len(),
                    self.dim
                ),
            });
        }
        let cell = CellId::locate(point, self.max_depth())?;
        self.leaf_containing(&cell)
            .ok_or_else(|| Error::InvalidCell("partition does not cover point".into()))
    }

    /// Replace every leaf deeper than `depth` by its ancestor at `depth`.
    pub fn coarsen(&self, depth: usize) -> DyadicPartition {
        let mut leaves: Vec<CellId> = self.leaves.iter().map(|c| c.truncate(depth)).collect();
        leaves.sort();
        leaves.dedup();
        DyadicPartition {
            dim: self.dim,
            leaves,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.leaves).expect("cells always serialize")
    }

    pub fn from_json(s: &str, dim: usize) -> Result<Self> {
        let leaves: Vec<CellId> = serde_json::from_str(s)?;
        DyadicPartition::new(dim, leaves)
    }
}

/// The `2^dim` children of a cell, in child-index order.
pub fn split(cell: &CellId, dim: usize) -> Vec<CellId> {
    (0..(1u32 << dim)).map(|i| cell.child(i)).collect()
}

/// The pieces of `m ∨ {K}` that lie inside `cell`: either the cell itself
/// when a leaf of `m` contains it, or the leaves of `m` inside it.
pub fn restrict(m: &DyadicPartition, cell: &CellId) -> Vec<CellId> {
    if m.leaf_containing(cell).is_some() {
        return vec![cell.clone()];
    }
    let start = m
        .leaves
        .partition_point(|l| l.path[..].cmp(&cell.path[..]) == Ordering::Less);
    m.leaves[start..]
        .iter()
        .take_while(|l| cell.contains(l))
        .cloned()
        .collect()
}

/// Coarsest common refinement: every non-empty intersection of a leaf of `m1`
/// with a leaf of `m2`, which for dyadic cells is the deeper of the two.
pub fn overlay(m1: &DyadicPartition, m2: &DyadicPartition) -> Result<DyadicPartition> {
    if m1.dim != m2.dim {
        return Err(Error::DimensionMismatch {
            record: 0,
            detail: format!("overlay of dimension {} with {}", m1.dim, m2.dim),
        });
    }
    let prefixes = |m: &DyadicPartition| {
        let mut s = HashSet::new();
        for l in &m.leaves {
            for d in 0..l.depth() {
                s.insert(l.path[..d].to_vec());
            }
        }
        s
    };
    let p1 = prefixes(m1);
    let p2 = prefixes(m2);
    let mut leaves: Vec<CellId> = m1
        .leaves
        .iter()
        .filter(|l| !p2.contains(&l.path))
        .chain(m2.leaves.iter().filter(|l| !p1.contains(&l.path)))
        .cloned()
        .collect();
    leaves.sort();
    leaves.dedup();
    Ok(DyadicPartition {
        dim: m1.dim,
        leaves,
    })
}

/// Number of partitions whose cells all have depth at most `l`, as a float
/// so that overflow shows up as infinity.
pub fn partition_count(l: usize, dim: usize) -> f64 {
    let fan = 2f64.powi(dim as i32);
    (0..l).fold(1.0, |p, _| 1.0 + p.powf(fan))
}

/// Every partition of the `dim`-cube with cells of depth at most `l`.
pub fn enumerate_partitions(l: usize, dim: usize) -> Result<Vec<DyadicPartition>> {
    if l > MAX_DEPTH {
        return Err(Error::MaxDepthExceeded {
            requested: l,
            limit: MAX_DEPTH,
        });
    }
    let count = partition_count(l, dim);
    if !(count <= ENUMERATION_GUARD as f64) {
        return Err(Error::EnumerationTooLarge {
            count,
            guard: ENUMERATION_GUARD,
        });
    }
    let rel = enumerate_relative(l, dim);
    Ok(rel
        .into_iter()
        .map(|mut leaves| {
            leaves.sort();
            DyadicPartition { dim, leaves }
        })
        .collect())
}

fn enumerate_relative(l: usize, dim: usize) -> Vec<Vec<CellId>> {
    let mut out = vec![vec![CellId::root()]];
    if l == 0 {
        return out;
    }
    let sub = enumerate_relative(l - 1, dim);
    let fan = 1usize << dim;
    let mut choice = vec![0usize; fan];
    loop {
        let mut leaves = Vec::new();
        for (i, &k) in choice.iter().enumerate() {
            for c in &sub[k] {
                let mut path = vec![i as u32];
                path.extend_from_slice(&c.path);
                leaves.push(CellId { path });
            }
        }
        out.push(leaves);
        let mut pos = 0;
        loop {
            if pos == fan {
                return out;
            }
            choice[pos] += 1;
            if choice[pos] < sub.len() {
                break;
            }
            choice[pos] = 0;
            pos += 1;
        }
    }
}

/// Random partition of depth at most `l`: each cell splits independently
/// with probability `split_prob * decay^depth`.
pub fn random_partition<R: Rng>(
    rng: &mut R,
    dim: usize,
    l: usize,
    split_prob: f64,
    decay: f64,
) -> DyadicPartition {
    let mut leaves = Vec::new();
    let mut stack = vec![CellId::root()];
    while let Some(c) = stack.pop() {
        let p = split_prob * decay.powi(c.depth() as i32);
        if c.depth() < l && rng.gen::<f64>() < p {
            stack.extend(split(&c, dim));
        } else {
            leaves.push(c);
        }
    }
    leaves.sort();
    DyadicPartition { dim, leaves }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_of_root_in_two_dims() {
        let kids = split(&CellId::root(), 2);
        assert_eq!(kids.len(), 4);
        let boxes: Vec<AxisBox> = kids.iter().map(|k| k.to_box(2)).collect();
        assert_eq!(boxes[0].lo, vec![0.0, 0.0]);
        assert_eq!(boxes[3].lo, vec![0.5, 0.5]);
        for b in &boxes {
            assert_eq!(b.volume(), 0.25);
        }
    }

    #[test]
    fn upper_face_belongs_to_last_cell() {
        let c = CellId::locate(&[1.0, 0.5], 1).unwrap();
        assert_eq!(c.path(), &[0b11]);
        let c = CellId::locate(&[0.4999, 0.0], 2).unwrap();
        assert_eq!(c.corner(0), 1);
        assert_eq!(c.corner(1), 0);
    }

    #[test]
    fn partition_counts() {
        assert_eq!(partition_count(0, 3), 1.0);
        assert_eq!(partition_count(1, 3), 2.0);
        assert_eq!(partition_count(2, 3), 257.0);
        assert_eq!(enumerate_partitions(2, 3).unwrap().len(), 257);
        assert_eq!(enumerate_partitions(2, 1).unwrap().len(), 5);
    }

    #[test]
    fn enumeration_guard_trips() {
        match enumerate_partitions(3, 3) {
            Err(Error::EnumerationTooLarge { .. }) => {}
            other => panic!("expected guard, got {other:?}"),
        }
    }

    #[test]
    fn depth_limit() {
        assert!(matches!(
            CellId::checked(vec![0; MAX_DEPTH + 1], 3),
            Err(Error::MaxDepthExceeded { .. })
        ));
    }

    #[test]
    fn overlay_with_trivial_is_identity() {
        let m = DyadicPartition::uniform(3, 2).unwrap();
        let t = DyadicPartition::trivial(3);
        assert_eq!(overlay(&m, &t).unwrap(), m);
        assert_eq!(overlay(&t, &t).unwrap(), t);
    }

    #[test]
    fn restrict_returns_cell_or_inner_leaves() {
        let m = DyadicPartition::uniform(2, 2).unwrap();
        let k = CellId::from_path(vec![1]);
        let r = restrict(&m, &k);
        assert_eq!(r.len(), 4);
        assert!(r.iter().all(|c| k.contains(c)));
        let coarse = DyadicPartition::trivial(2);
        assert_eq!(restrict(&coarse, &k), vec![k]);
    }

    #[test]
    fn invalid_partitions_rejected() {
        let gap = vec![CellId::from_path(vec![0]), CellId::from_path(vec![1])];
        assert!(DyadicPartition::new(1, gap.clone()).is_ok());
        assert!(DyadicPartition::new(2, gap).is_err());
        let overlap = vec![CellId::root(), CellId::from_path(vec![0])];
        assert!(DyadicPartition::new(1, overlap).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let m = DyadicPartition::uniform(3, 1).unwrap();
        let s = m.to_json();
        assert!(s.contains("\"depth\":1"));
        assert_eq!(DyadicPartition::from_json(&s, 3).unwrap(), m);
        assert!(DyadicPartition::from_json(r#"[{"path":[0],"depth":2}]"#, 3).is_err());
    }

    #[test]
    fn footprint_masks_next_state_bits() {
        let lay = Layout::new(1, 1).unwrap();
        let c = CellId::from_path(vec![0b111, 0b101]);
        assert_eq!(lay.footprint(&c).path(), &[0b11, 0b01]);
        assert_eq!(lay.next_state_volume(&c), 0.25);
    }
}
