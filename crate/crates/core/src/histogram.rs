//! Piecewise-constant kernels on dyadic partitions and the histogram fit.

use std::path::Path;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::density::{BlockIntegrals, TransitionDensity};
use crate::error::{Error, Result};
use crate::geometry::{AxisBox, CellId, DyadicPartition, Layout};
use crate::stats::SparseCountTree;
use crate::trajectory::{DomainMap, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMetadata {
    pub d1: usize,
    pub d2: usize,
    /// Number of transitions the kernel was fitted on.
    pub n: usize,
    pub retained: usize,
    pub depth_bound: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty_l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainMap>,
    /// Per leaf `[N, M]`: triples in the leaf, pairs in its footprint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaf_counts: Option<Vec<[u64; 2]>>,
}

/// A density that is constant on every leaf of a dyadic partition of the
/// product space.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseKernel {
    layout: Layout,
    partition: DyadicPartition,
    values: Vec<f64>,
    pub metadata: KernelMetadata,
}

#[derive(Serialize, Deserialize)]
struct KernelRepr {
    partition: Vec<CellId>,
    values: Vec<f64>,
    metadata: KernelMetadata,
}

impl PiecewiseKernel {
    pub fn new(
        layout: Layout,
        partition: DyadicPartition,
        values: Vec<f64>,
        metadata: KernelMetadata,
    ) -> Result<Self> {
        if partition.dim() != layout.dim() {
            return Err(Error::KernelMismatch(format!(
                "partition dimension {} does not match layout dimension {}",
                partition.dim(),
                layout.dim()
            )));
        }
        if values.len() != partition.len() {
            return Err(Error::KernelMismatch(format!(
                "{} values for {} leaves",
                values.len(),
                partition.len()
            )));
        }
        if let Some((leaf, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0) || !v.is_finite())
        {
            return Err(Error::NegativeDensity { leaf, value });
        }
        Ok(PiecewiseKernel {
            layout,
            partition,
            values,
            metadata,
        })
    }

    /// A kernel built from values without fit metadata.
    pub fn from_values(
        layout: Layout,
        partition: DyadicPartition,
        values: Vec<f64>,
    ) -> Result<Self> {
        let metadata = KernelMetadata {
            d1: layout.d1,
            d2: layout.d2,
            n: 0,
            retained: 0,
            depth_bound: partition.max_depth(),
            penalty_l: None,
            seed: None,
            domain: None,
            leaf_counts: None,
        };
        Self::new(layout, partition, values, metadata)
    }

    pub fn partition(&self) -> &DyadicPartition {
        &self.partition
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value on the leaf containing `cell`, if `cell` is at least as fine as
    /// the partition there.
    pub fn value_on(&self, cell: &CellId) -> Option<f64> {
        self.partition.leaf_containing(cell).map(|i| self.values[i])
    }

    pub fn evaluate(&self, x: &[f64], a: &[f64], y: &[f64]) -> Result<f64> {
        let p = self.layout.join(x, a, y);
        Ok(self.values[self.partition.locate_point(&p)?])
    }

    /// Leaves whose footprint holds `(x, a)`, as indices.
    pub fn leaves_over(&self, x: &[f64], a: &[f64]) -> Vec<usize> {
        let mut pair = x.to_vec();
        pair.extend_from_slice(a);
        let fdim = self.layout.footprint_dim();
        self.partition
            .leaves()
            .iter()
            .enumerate()
            .filter(|(_, c)| self.layout.footprint(c).to_box(fdim).contains_point(&pair))
            .map(|(i, _)| i)
            .collect()
    }

    /// Next-state block of leaf `i`, as a box in `[0,1]^{d1}`.
    pub fn next_state_block(&self, i: usize) -> AxisBox {
        let b = self.partition.leaves()[i].to_box(self.layout.dim());
        let off = self.layout.footprint_dim();
        AxisBox {
            lo: b.lo[off..].to_vec(),
            hi: b.hi[off..].to_vec(),
        }
    }

    /// `∫ f(x, a, y) dy` over the whole next-state cube.
    pub fn next_state_mass(&self, x: &[f64], a: &[f64]) -> f64 {
        let mut acc = crate::numeric::Neumaier::default();
        for i in self.leaves_over(x, a) {
            acc.add(self.values[i] * self.layout.next_state_volume(&self.partition.leaves()[i]));
        }
        acc.sum()
    }

    /// The same integral in exact rational arithmetic, available for fitted
    /// kernels that carry their leaf counts.
    pub fn next_state_mass_exact(&self, x: &[f64], a: &[f64]) -> Option<Ratio<i128>> {
        let counts = self.metadata.leaf_counts.as_ref()?;
        let mut total = Ratio::from_integer(0i128);
        for i in self.leaves_over(x, a) {
            let [n, m] = counts[i];
            if m > 0 {
                total += Ratio::new(n as i128, m as i128);
            }
        }
        Some(total)
    }

    pub fn to_json(&self) -> String {
        let r = KernelRepr {
            partition: self.partition.leaves().to_vec(),
            values: self.values.clone(),
            metadata: self.metadata.clone(),
        };
        serde_json::to_string(&r).expect("kernel serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: KernelRepr = serde_json::from_str(s)?;
        let layout = Layout::new(r.metadata.d1, r.metadata.d2)?;
        let partition = DyadicPartition::new(layout.dim(), r.partition)?;
        if let Some(c) = &r.metadata.leaf_counts {
            if c.len() != partition.len() {
                return Err(Error::KernelMismatch(
                    "leaf counts do not match the partition".into(),
                ));
            }
        }
        Self::new(layout, partition, r.values, r.metadata)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl TransitionDensity for PiecewiseKernel {
    fn layout(&self) -> Layout {
        self.layout
    }

    fn density(&self, x: &[f64], a: &[f64], y: &[f64]) -> f64 {
        self.evaluate(x, a, y).unwrap_or(0.0)
    }

    fn block_integrals(
        &self,
        x: &[f64],
        a: &[f64],
        block: &AxisBox,
        _resolution: usize,
    ) -> BlockIntegrals {
        let mut out = BlockIntegrals::default();
        for i in self.leaves_over(x, a) {
            let w = self.next_state_block(i).overlap(block);
            out.mass += w * self.values[i];
            out.root += w * self.values[i].sqrt();
        }
        out
    }
}

/// Histogram value `N / (M · Vol)` of one cell, zero when nothing was seen.
pub fn histogram_value(n: u64, m: u64, volume: f64) -> f64 {
    if n == 0 || m == 0 {
        0.0
    } else {
        n as f64 / (m as f64 * volume)
    }
}

/// Fit the histogram kernel on partition `m`.
pub fn fit(tree: &SparseCountTree, m: &DyadicPartition) -> Result<PiecewiseKernel> {
    let layout = tree.layout();
    let mut values = Vec::with_capacity(m.len());
    let mut counts = Vec::with_capacity(m.len());
    for leaf in m.leaves() {
        let s = tree.query(leaf)?;
        values.push(histogram_value(s.n, s.m, s.volume));
        counts.push([s.n, s.m]);
    }
    let metadata = KernelMetadata {
        d1: layout.d1,
        d2: layout.d2,
        n: tree.n(),
        retained: tree.retained(),
        depth_bound: tree.depth(),
        penalty_l: None,
        seed: None,
        domain: None,
        leaf_counts: Some(counts),
    };
    PiecewiseKernel::new(layout, m.clone(), values, metadata)
}

/// Projection of a known density onto the kernels constant on the leaves of
/// `m`, weighted by the empirical state-control measure of `traj`.
pub fn conditional_projection<D: TransitionDensity + ?Sized>(
    truth: &D,
    m: &DyadicPartition,
    traj: &Trajectory,
    resolution: usize,
) -> Result<PiecewiseKernel> {
    let layout = traj.layout();
    if m.dim() != layout.dim() {
        return Err(Error::KernelMismatch(
            "partition does not match trajectory dimensions".into(),
        ));
    }
    let blank = PiecewiseKernel::from_values(layout, m.clone(), vec![0.0; m.len()])?;
    let mut mass = vec![0.0; m.len()];
    let mut weight = vec![0.0; m.len()];
    for i in traj.retained_indices() {
        let (x, a) = (traj.state(i), traj.control(i));
        for k in blank.leaves_over(x, a) {
            let block = blank.next_state_block(k);
            mass[k] += truth.block_integrals(x, a, &block, resolution).mass;
            weight[k] += block.volume();
        }
    }
    let values = mass
        .iter()
        .zip(&weight)
        .map(|(s, w)| if *w > 0.0 { s / w } else { 0.0 })
        .collect();
    PiecewiseKernel::from_values(layout, m.clone(), values)
}
