//! Sparse counts of observed transitions over dyadic cells.
//!
//! Two tries are kept side by side: one over product cells counting triples
//! `(X_i, a_i, X_{i+1})`, and one over state-control cells counting pairs
//! `(X_i, a_i)`. Only cells holding at least one observation are stored.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::geometry::{dyadic_volume, CellId, Layout, MAX_DEPTH};
use crate::trajectory::Trajectory;

const MAGIC: &[u8; 4] = b"DCMT";
const DUMP_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
struct Node {
    count: u64,
    /// For product nodes, the index of the matching footprint node.
    fp: usize,
    children: Vec<(u32, usize)>,
}

impl Node {
    fn child(&self, idx: u32) -> Option<usize> {
        self.children.iter().find(|c| c.0 == idx).map(|c| c.1)
    }
}

/// Statistics of one product cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellStats {
    /// Triples inside the cell.
    pub n: u64,
    /// Pairs inside the cell's footprint.
    pub m: u64,
    /// Volume of the cell's next-state block.
    pub volume: f64,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseCountTree {
    layout: Layout,
    depth: usize,
    n: usize,
    retained: usize,
    nodes: Vec<Node>,
    fp_nodes: Vec<Node>,
}

impl SparseCountTree {
    /// Count the retained transitions of `traj` down to `depth`.
    pub fn build(traj: &Trajectory, depth: usize) -> Result<Self> {
        if depth > MAX_DEPTH {
            return Err(Error::MaxDepthExceeded {
                requested: depth,
                limit: MAX_DEPTH,
            });
        }
        let layout = traj.layout();
        let mut t = SparseCountTree {
            layout,
            depth,
            n: traj.n(),
            retained: 0,
            nodes: vec![Node {
                count: 0,
                fp: 0,
                children: vec![],
            }],
            fp_nodes: vec![Node {
                count: 0,
                fp: 0,
                children: vec![],
            }],
        };
        for i in traj.retained_indices() {
            let cell = CellId::locate(&traj.triple(i), depth)?;
            t.insert(cell.path());
        }
        Ok(t)
    }

    fn insert(&mut self, path: &[u32]) {
        let mask = self.layout.footprint_mask();
        self.retained += 1;
        let (mut p, mut f) = (0usize, 0usize);
        self.nodes[0].count += 1;
        self.fp_nodes[0].count += 1;
        for &c in path {
            let fc = c & mask;
            f = match self.fp_nodes[f].child(fc) {
                Some(k) => k,
                None => {
                    self.fp_nodes.push(Node {
                        count: 0,
                        fp: 0,
                        children: vec![],
                    });
                    let k = self.fp_nodes.len() - 1;
                    self.fp_nodes[f].children.push((fc, k));
                    k
                }
            };
            self.fp_nodes[f].count += 1;
            p = match self.nodes[p].child(c) {
                Some(k) => k,
                None => {
                    self.nodes.push(Node {
                        count: 0,
                        fp: f,
                        children: vec![],
                    });
                    let k = self.nodes.len() - 1;
                    self.nodes[p].children.push((c, k));
                    k
                }
            };
            self.nodes[p].count += 1;
        }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Number of transitions in the trajectory, retained or not.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of transitions that were counted.
    pub fn retained(&self) -> usize {
        self.retained
    }

    pub fn stored_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn walk(nodes: &[Node], path: impl Iterator<Item = u32>) -> Option<usize> {
        let mut k = 0;
        for c in path {
            k = nodes[k].child(c)?;
        }
        Some(k)
    }

    fn check_depth(&self, cell: &CellId) -> Result<()> {
        if cell.depth() > self.depth {
            Err(Error::UnindexedDepth {
                requested: cell.depth(),
                built: self.depth,
            })
        } else {
            Ok(())
        }
    }

    /// Count of triples and pairs attached to a product cell.
    pub fn query(&self, cell: &CellId) -> Result<CellStats> {
        self.check_depth(cell)?;
        let volume = dyadic_volume(cell.depth(), self.layout.d1);
        let n =
            Self::walk(&self.nodes, cell.path().iter().copied()).map_or(0, |k| self.nodes[k].count);
        let m = self.footprint_count(&self.layout.footprint(cell))?;
        Ok(CellStats {
            n,
            m,
            volume,
            depth: cell.depth(),
        })
    }

    /// Number of pairs inside a state-control cell.
    pub fn footprint_count(&self, fp: &CellId) -> Result<u64> {
        self.check_depth(fp)?;
        Ok(Self::walk(&self.fp_nodes, fp.path().iter().copied())
            .map_or(0, |k| self.fp_nodes[k].count))
    }

    /// Arena index of a stored product cell.
    pub fn node(&self, cell: &CellId) -> Option<usize> {
        if cell.depth() > self.depth {
            return None;
        }
        Self::walk(&self.nodes, cell.path().iter().copied())
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn node_n(&self, k: usize) -> u64 {
        self.nodes[k].count
    }

    pub fn node_m(&self, k: usize) -> u64 {
        self.fp_nodes[self.nodes[k].fp].count
    }

    /// Stored children of a node as `(child index, arena index)`.
    pub fn node_children(&self, k: usize) -> &[(u32, usize)] {
        &self.nodes[k].children
    }

    /// Pair count of the footprint of child `idx` of node `k`.
    pub fn child_m(&self, k: usize, idx: u32) -> u64 {
        let f = self.nodes[k].fp;
        self.fp_nodes[f]
            .child(idx & self.layout.footprint_mask())
            .map_or(0, |c| self.fp_nodes[c].count)
    }

    /// Serialize to the versioned binary dump.
    pub fn write_dump<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [
            DUMP_VERSION,
            self.layout.d1 as u32,
            self.layout.d2 as u32,
            self.depth as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&(self.retained as u64).to_le_bytes())?;
        for (nodes, with_m) in [(&self.fp_nodes, false), (&self.nodes, true)] {
            let mut entries = Vec::new();
            let mut stack = vec![(0usize, Vec::<u32>::new())];
            while let Some((k, path)) = stack.pop() {
                for &(c, ch) in nodes[k].children.iter().rev() {
                    let mut p = path.clone();
                    p.push(c);
                    stack.push((ch, p));
                }
                entries.push((k, path));
            }
            w.write_all(&(entries.len() as u64).to_le_bytes())?;
            for (k, path) in entries {
                w.write_all(&[path.len() as u8])?;
                for c in &path {
                    w.write_all(&c.to_le_bytes())?;
                }
                w.write_all(&nodes[k].count.to_le_bytes())?;
                if with_m {
                    w.write_all(&self.fp_nodes[nodes[k].fp].count.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    /// Rebuild a tree from [`SparseCountTree::write_dump`] output.
    pub fn read_dump<R: Read>(r: &mut R) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptDump(m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let mut u32s = [0u32; 4];
        for v in u32s.iter_mut() {
            *v = read_u32(r)?;
        }
        if u32s[0] != DUMP_VERSION {
            return Err(Error::CorruptDump(format!(
                "unsupported version {}",
                u32s[0]
            )));
        }
        let layout = Layout::new(u32s[1] as usize, u32s[2] as usize)?;
        let depth = u32s[3] as usize;
        if depth > MAX_DEPTH {
            return Err(corrupt("depth out of range"));
        }
        let n = read_u64(r)? as usize;
        let retained = read_u64(r)? as usize;
        let mut t = SparseCountTree {
            layout,
            depth,
            n,
            retained,
            nodes: vec![],
            fp_nodes: vec![],
        };
        for product in [false, true] {
            let count = read_u64(r)? as usize;
            let mut nodes: Vec<Node> = Vec::new();
            for _ in 0..count {
                let mut len = [0u8; 1];
                r.read_exact(&mut len)?;
                let path: Vec<u32> = (0..len[0]).map(|_| read_u32(r)).collect::<Result<_>>()?;
                let c = read_u64(r)?;
                let m = if product { Some(read_u64(r)?) } else { None };
                let fp = if product {
                    Self::walk(
                        &t.fp_nodes,
                        path.iter().map(|c| c & layout.footprint_mask()),
                    )
                    .ok_or_else(|| corrupt("product node without footprint"))?
                } else {
                    0
                };
                if let Some(m) = m {
                    if t.fp_nodes[fp].count != m {
                        return Err(corrupt("footprint count disagrees"));
                    }
                }
                if path.is_empty() {
                    if !nodes.is_empty() {
                        return Err(corrupt("duplicate root"));
                    }
                    nodes.push(Node {
                        count: c,
                        fp,
                        children: vec![],
                    });
                    continue;
                }
                let parent = Self::walk(&nodes, path[..path.len() - 1].iter().copied())
                    .ok_or_else(|| corrupt("child before parent"))?;
                nodes.push(Node {
                    count: c,
                    fp,
                    children: vec![],
                });
                let k = nodes.len() - 1;
                nodes[parent].children.push((*path.last().unwrap(), k));
            }
            if nodes.is_empty() {
                return Err(corrupt("missing root"));
            }
            if product {
                t.nodes = nodes;
            } else {
                t.fp_nodes = nodes;
            }
        }
        Ok(t)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
