//! Partition selection by the penalized contrast `γ`.
//!
//! For a leaf `K` of a candidate partition the inner supremum over all
//! competitors only depends on how the competitor looks inside `K`: either a
//! single piece carrying the histogram value of some cell containing `K`, or
//! a dyadic refinement of `K` whose pieces carry their own histogram values.
//! Both cases are scored cell by cell, which turns the supremum into a
//! recursion over the count tree and the outer minimum into a bottom-up
//! dynamic program.
//!
//! Cells without observed triples are scored in closed form: their best
//! competitor is always a single piece with value zero, and the children of a
//! cell share its footprint mass, so empty siblings are handled in one step.

use web_time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{
    dyadic_volume, enumerate_partitions, restrict, split, CellId, DyadicPartition, Layout,
};
use crate::histogram::{fit, histogram_value, PiecewiseKernel};
use crate::losses::{empirical_hellinger_sq, pen_unit, psi, t_statistic, DEFAULT_PENALTY_L};
use crate::numeric::Neumaier;
use crate::stats::SparseCountTree;
use crate::trajectory::Trajectory;

/// Weight of the Hellinger term inside the contrast.
pub const ALPHA: f64 = 0.75 * (1.0 - std::f64::consts::FRAC_1_SQRT_2);

/// Score factor for a cell with no triples, value `c` and competitor zero:
/// `α/2 − 1/√2 + 1`.
const EMPTY_FACTOR: f64 = ALPHA / 2.0 - std::f64::consts::FRAC_1_SQRT_2 + 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub enum TieBreak {
    /// Prefer the partition with fewer cells when contrasts tie.
    FewestLeaves,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct SelectorConfig {
    /// Maximal depth `l` of candidate cells.
    pub depth: usize,
    /// Penalty constant `L`.
    pub penalty_l: f64,
    pub tie_break: TieBreak,
}

impl SelectorConfig {
    pub fn new(depth: usize, penalty_l: f64) -> Self {
        SelectorConfig {
            depth,
            penalty_l,
            tie_break: TieBreak::FewestLeaves,
        }
    }

    /// Depth actually searched: never deeper than the number of transitions.
    pub fn effective_depth(&self, n: usize) -> usize {
        self.depth.min(n)
    }
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig::new(4, DEFAULT_PENALTY_L)
    }
}

/// Per-node record of the dynamic program.
#[derive(Debug, Clone, Serialize)]
pub struct NodeRecord {
    pub cell: CellId,
    pub n: u64,
    pub m: u64,
    /// Inner supremum of the cell at its own histogram value.
    pub sup: f64,
    /// Best penalized contrast of the subtree.
    pub best: f64,
    pub leaf: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RuntimeStats {
    pub nodes_visited: usize,
    pub elapsed_micros: u128,
}

#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub partition: DyadicPartition,
    pub kernel: PiecewiseKernel,
    pub gamma: f64,
    pub pen_unit: f64,
    pub effective_depth: usize,
    pub nodes: Vec<NodeRecord>,
    pub stats: RuntimeStats,
}

struct Ctx<'a> {
    tree: &'a SparseCountTree,
    layout: Layout,
    n: f64,
    pu: f64,
    depth: usize,
    fan: u32,
    visited: std::cell::Cell<usize>,
}

impl<'a> Ctx<'a> {
    fn new(tree: &'a SparseCountTree, cfg: &SelectorConfig) -> Result<Self> {
        if tree.n() == 0 {
            return Err(Error::InvalidParameter(
                "no transitions to select from".into(),
            ));
        }
        if !(cfg.penalty_l > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "penalty constant must be positive, got {}",
                cfg.penalty_l
            )));
        }
        if cfg.penalty_l < DEFAULT_PENALTY_L {
            log::warn!(
                "penalty constant {} is below {DEFAULT_PENALTY_L}; risk guarantees may not hold",
                cfg.penalty_l
            );
        }
        let depth = cfg.effective_depth(tree.n());
        if tree.depth() < depth {
            return Err(Error::UnindexedDepth {
                requested: depth,
                built: tree.depth(),
            });
        }
        let layout = tree.layout();
        Ok(Ctx {
            tree,
            layout,
            n: tree.n() as f64,
            pu: pen_unit(tree.n(), cfg.penalty_l),
            depth,
            fan: 1u32 << layout.dim(),
            visited: std::cell::Cell::new(0),
        })
    }

    fn vol(&self, depth: usize) -> f64 {
        dyadic_volume(depth, self.layout.d1)
    }

    /// Contrast of a single piece with `count` triples, footprint mass
    /// `mvol = M · Vol`, own value `c` and competitor value `v`.
    fn score(&self, mvol: f64, count: u64, c: f64, v: f64) -> f64 {
        let (sc, sv) = (c.sqrt(), v.sqrt());
        ALPHA * mvol * (sc - sv) * (sc - sv) / (2.0 * self.n)
            + count as f64 * psi(c, v) / self.n
            + mvol / self.n * (((c + v) / 2.0).sqrt() * (sv - sc) + c - v)
            - self.pu
    }

    fn node_mvol(&self, k: usize, depth: usize) -> f64 {
        self.tree.node_m(k) as f64 * self.vol(depth)
    }

    fn node_hist(&self, k: usize, depth: usize) -> f64 {
        histogram_value(self.tree.node_n(k), self.tree.node_m(k), self.vol(depth))
    }

    /// Best contrast of refining the stored node `k` into its children,
    /// each child then free to refine further.
    fn split_sup(&self, k: usize, depth: usize, c: f64) -> f64 {
        let mut acc = Neumaier::default();
        let mut stored_mvol = 0.0;
        let kids = self.tree.node_children(k);
        for &(_, ch) in kids {
            stored_mvol += self.node_mvol(ch, depth + 1);
            acc.add(self.sub_sup(ch, depth + 1, c));
        }
        let empty = (self.fan as usize - kids.len()) as f64;
        let empty_mvol = self.node_mvol(k, depth) - stored_mvol;
        acc.add(empty_mvol * c * EMPTY_FACTOR / self.n - empty * self.pu);
        acc.sum()
    }

    /// Supremum over refinements of a stored node strictly inside the cell
    /// being scored.
    fn sub_sup(&self, k: usize, depth: usize, c: f64) -> f64 {
        self.visited.set(self.visited.get() + 1);
        let leaf = self.score(
            self.node_mvol(k, depth),
            self.tree.node_n(k),
            c,
            self.node_hist(k, depth),
        );
        if depth < self.depth {
            leaf.max(self.split_sup(k, depth, c))
        } else {
            leaf
        }
    }

    /// Arena indices of the stored ancestors of `cell` (root first) and the
    /// node of `cell` itself if stored.
    fn stored_chain(&self, cell: &CellId) -> (Vec<(usize, usize)>, Option<usize>) {
        let mut chain = vec![(self.tree.root(), 0)];
        for d in 1..=cell.depth() {
            match self.tree.node(&cell.truncate(d)) {
                Some(k) => chain.push((k, d)),
                None => return (chain, None),
            }
        }
        let own = chain.pop().map(|p| p.0);
        (chain, own)
    }

    /// Inner supremum for a cell `K` of depth at most the effective depth,
    /// at value `c`.
    fn inner_sup(&self, cell: &CellId, c: f64) -> Result<f64> {
        let depth = cell.depth();
        if depth > self.depth {
            return Err(Error::InvalidCell(format!(
                "cell depth {depth} exceeds selection depth {}",
                self.depth
            )));
        }
        let (ancestors, own) = self.stored_chain(cell);
        let mut hists: Vec<f64> = ancestors
            .iter()
            .map(|&(k, d)| self.node_hist(k, d))
            .collect();
        match own {
            Some(k) => {
                hists.push(self.node_hist(k, depth));
                Ok(self.top_sup(k, depth, c, &hists))
            }
            None => {
                let mvol = self.tree.footprint_count(&self.layout.footprint(cell))? as f64
                    * self.vol(depth);
                hists.push(0.0);
                Ok(hists
                    .iter()
                    .map(|&v| self.score(mvol, 0, c, v))
                    .fold(f64::NEG_INFINITY, f64::max))
            }
        }
    }

    /// Inner supremum of a stored node, given the histogram values of the
    /// node and all its ancestors.
    fn top_sup(&self, k: usize, depth: usize, c: f64, hists: &[f64]) -> f64 {
        self.visited.set(self.visited.get() + 1);
        let (mvol, count) = (self.node_mvol(k, depth), self.tree.node_n(k));
        let mut best = hists
            .iter()
            .map(|&v| self.score(mvol, count, c, v))
            .fold(f64::NEG_INFINITY, f64::max);
        if depth < self.depth {
            best = best.max(self.split_sup(k, depth, c));
        }
        best
    }

    /// Optimal `γ` restricted to the subtree of stored node `k`.
    fn solve(
        &self,
        k: usize,
        cell: &CellId,
        hists: &mut Vec<f64>,
        out: &mut Vec<NodeRecord>,
    ) -> f64 {
        let depth = cell.depth();
        let c = self.node_hist(k, depth);
        hists.push(c);
        let sup = self.top_sup(k, depth, c, hists);
        let leaf = sup + 2.0 * self.pu;
        let mut best = leaf;
        let mut is_leaf = true;
        if depth < self.depth {
            let kids = self.tree.node_children(k).to_vec();
            let mut acc = Neumaier::default();
            for &(idx, ch) in &kids {
                acc.add(self.solve(ch, &cell.child(idx), hists, out));
            }
            acc.add((self.fan as usize - kids.len()) as f64 * self.pu);
            let split = acc.sum();
            if split < leaf {
                best = split;
                is_leaf = false;
            }
        }
        hists.pop();
        out.push(NodeRecord {
            cell: cell.clone(),
            n: self.tree.node_n(k),
            m: self.tree.node_m(k),
            sup,
            best,
            leaf: is_leaf,
        });
        best
    }
}

/// Contrast of a single cell against competitor value `v`.
pub fn leaf_score(
    cell: &CellId,
    c: f64,
    v: f64,
    tree: &SparseCountTree,
    cfg: &SelectorConfig,
) -> Result<f64> {
    let ctx = Ctx::new(tree, cfg)?;
    let s = tree.query(cell)?;
    Ok(ctx.score(s.m as f64 * s.volume, s.n, c, v))
}

/// Supremum over all competitors of the contrast restricted to `cell`,
/// where the candidate takes value `c` on it.
pub fn inner_sup(
    cell: &CellId,
    c: f64,
    tree: &SparseCountTree,
    cfg: &SelectorConfig,
) -> Result<f64> {
    Ctx::new(tree, cfg)?.inner_sup(cell, c)
}

/// `γ(m)` for a partition with cells no deeper than the effective depth.
pub fn gamma(m: &DyadicPartition, tree: &SparseCountTree, cfg: &SelectorConfig) -> Result<f64> {
    let ctx = Ctx::new(tree, cfg)?;
    let mut acc = Neumaier::default();
    for cell in m.leaves() {
        let s = tree.query(cell)?;
        let c = histogram_value(s.n, s.m, s.volume);
        acc.add(ctx.inner_sup(cell, c)?);
    }
    acc.add(2.0 * ctx.pu * m.len() as f64);
    Ok(acc.sum())
}

/// Select the partition minimizing `γ`, breaking ties toward fewer cells.
pub fn select_partition(tree: &SparseCountTree, cfg: &SelectorConfig) -> Result<SelectionResult> {
    let start = Instant::now();
    let ctx = Ctx::new(tree, cfg)?;
    let mut nodes = Vec::new();
    let gamma = ctx.solve(tree.root(), &CellId::root(), &mut Vec::new(), &mut nodes);
    let chosen: std::collections::HashMap<&CellId, bool> =
        nodes.iter().map(|r| (&r.cell, r.leaf)).collect();
    let mut leaves = Vec::new();
    let mut stack = vec![CellId::root()];
    let dim = ctx.layout.dim();
    while let Some(c) = stack.pop() {
        match chosen.get(&c) {
            Some(false) => stack.extend(split(&c, dim)),
            _ => leaves.push(c),
        }
    }
    let partition = DyadicPartition::new(dim, leaves)?;
    let mut kernel = fit(tree, &partition)?;
    kernel.metadata.penalty_l = Some(cfg.penalty_l);
    kernel.metadata.depth_bound = ctx.depth;
    let stats = RuntimeStats {
        nodes_visited: ctx.visited.get(),
        elapsed_micros: start.elapsed().as_micros(),
    };
    Ok(SelectionResult {
        partition,
        kernel,
        gamma,
        pen_unit: ctx.pu,
        effective_depth: ctx.depth,
        nodes,
        stats,
    })
}

/// The partition that follows the path to `cell`: `cell` itself plus every
/// sibling of it and of its ancestors.
pub fn chain_partition(cell: &CellId, dim: usize) -> DyadicPartition {
    let mut leaves = vec![cell.clone()];
    for d in 0..cell.depth() {
        let parent = cell.truncate(d);
        let on_path = cell.path()[d];
        leaves.extend(
            split(&parent, dim)
                .into_iter()
                .filter(|c| c.path()[d] != on_path),
        );
    }
    DyadicPartition::new(dim, leaves).expect("chain cells tile the cube")
}

/// Result of exhaustive selection over every partition of depth at most the
/// effective depth.
#[derive(Debug, Clone)]
pub struct BruteForce {
    pub partitions: Vec<DyadicPartition>,
    pub gammas: Vec<f64>,
    pub best: usize,
}

/// Exhaustive selection: every inner supremum is taken over every
/// enumerated competitor, with the losses evaluated on explicit kernels.
pub fn brute_force_select(
    traj: &Trajectory,
    tree: &SparseCountTree,
    cfg: &SelectorConfig,
) -> Result<BruteForce> {
    let ctx = Ctx::new(tree, cfg)?;
    let layout = ctx.layout;
    let dim = layout.dim();
    let partitions = enumerate_partitions(ctx.depth, dim)?;
    let fits: Vec<PiecewiseKernel> = partitions
        .iter()
        .map(|m| fit(tree, m))
        .collect::<Result<_>>()?;
    let mut cells = vec![CellId::root()];
    let mut frontier = vec![CellId::root()];
    for _ in 0..ctx.depth {
        frontier = frontier.iter().flat_map(|c| split(c, dim)).collect();
        cells.extend(frontier.iter().cloned());
    }
    let mut sup = std::collections::HashMap::new();
    for cell in &cells {
        let chain = chain_partition(cell, dim);
        let s = tree.query(cell)?;
        let c = histogram_value(s.n, s.m, s.volume);
        let own_values = chain
            .leaves()
            .iter()
            .map(|l| if l == cell { c } else { 0.0 })
            .collect();
        let own = PiecewiseKernel::from_values(layout, chain.clone(), own_values)?;
        let mut best = f64::NEG_INFINITY;
        for (m2, f2) in partitions.iter().zip(&fits) {
            let joint = crate::geometry::overlay(m2, &chain)?;
            let values = joint
                .leaves()
                .iter()
                .map(|l| {
                    if cell.contains(l) {
                        f2.value_on(l).unwrap()
                    } else {
                        0.0
                    }
                })
                .collect();
            let other = PiecewiseKernel::from_values(layout, joint, values)?;
            let pieces = restrict(m2, cell).len() as f64;
            let v = ALPHA * empirical_hellinger_sq(&own, &other, tree)?
                + t_statistic(&own, &other, traj, tree)?
                - ctx.pu * pieces;
            best = best.max(v);
        }
        sup.insert(cell.clone(), best);
    }
    let gammas: Vec<f64> = partitions
        .iter()
        .map(|m| {
            let mut acc: Neumaier = m.leaves().iter().map(|c| sup[c]).collect();
            acc.add(2.0 * ctx.pu * m.len() as f64);
            acc.sum()
        })
        .collect();
    let mut best = 0;
    for i in 1..gammas.len() {
        let (g, b) = (gammas[i], gammas[best]);
        if g < b || (g == b && partitions[i].len() < partitions[best].len()) {
            best = i;
        }
    }
    Ok(BruteForce {
        partitions,
        gammas,
        best,
    })
}
