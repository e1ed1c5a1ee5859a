//! Losses and test statistics between transition densities.
//!
//! The empirical losses integrate against `λ_n`, the empirical measure of the
//! observed pairs `(X_i, a_i)` times Lebesgue measure on the next state,
//! normalized by the total number of transitions `n`. The deterministic
//! losses integrate against an [`OccupationMeasure`] instead.

use std::io::Write;

use serde::Serialize;

use crate::density::TransitionDensity;
use crate::error::{Error, Result};
use crate::geometry::{overlay, AxisBox, CellId, DyadicPartition, Layout};
use crate::histogram::PiecewiseKernel;
use crate::numeric::Neumaier;
use crate::occupation::OccupationMeasure;
use crate::stats::SparseCountTree;
use crate::trajectory::Trajectory;

/// Penalty constant used unless configured otherwise.
pub const DEFAULT_PENALTY_L: f64 = 64.0;

/// `ψ(c1, c2) = (√c2 − √c1) / (√2 · √(c1 + c2))`, with `ψ(0, 0) = 0`.
pub fn psi(c1: f64, c2: f64) -> f64 {
    let s = c1 + c2;
    if s <= 0.0 {
        return 0.0;
    }
    (c2.sqrt() - c1.sqrt()) / (std::f64::consts::SQRT_2 * s.sqrt())
}

/// Penalty per cell: `L (1.5 + ln n) / n`.
pub fn pen_unit(n: usize, l: f64) -> f64 {
    let n = n as f64;
    l * (1.5 + n.ln()) / n
}

/// Penalty of a partition with `cells` cells.
pub fn penalty(cells: usize, n: usize, l: f64) -> f64 {
    pen_unit(n, l) * cells as f64
}

fn check_pair(f1: &PiecewiseKernel, f2: &PiecewiseKernel) -> Result<Layout> {
    let (l1, l2) = (f1.layout(), f2.layout());
    if l1 != l2 {
        return Err(Error::KernelMismatch(format!(
            "layouts {l1:?} and {l2:?} differ"
        )));
    }
    Ok(l1)
}

/// Per overlay cell: `(M · Vol, v1, v2)`.
fn overlay_terms(
    f1: &PiecewiseKernel,
    f2: &PiecewiseKernel,
    tree: &SparseCountTree,
) -> Result<Vec<(f64, f64, f64)>> {
    let layout = check_pair(f1, f2)?;
    let joint = overlay(f1.partition(), f2.partition())?;
    joint
        .leaves()
        .iter()
        .map(|c| {
            let m = tree.footprint_count(&layout.footprint(c))?;
            let v1 = f1.value_on(c).expect("overlay refines f1");
            let v2 = f2.value_on(c).expect("overlay refines f2");
            Ok((m as f64 * layout.next_state_volume(c), v1, v2))
        })
        .collect()
}

/// Empirical squared Hellinger distance between two kernels.
pub fn empirical_hellinger_sq(
    f1: &PiecewiseKernel,
    f2: &PiecewiseKernel,
    tree: &SparseCountTree,
) -> Result<f64> {
    let n = tree.n() as f64;
    let mut acc = Neumaier::default();
    for (w, v1, v2) in overlay_terms(f1, f2, tree)? {
        let d = v1.sqrt() - v2.sqrt();
        acc.add(w * d * d);
    }
    Ok(acc.sum() / (2.0 * n))
}

/// The statistic `T(f1, f2)` comparing two kernels on the observed sample.
pub fn t_statistic(
    f1: &PiecewiseKernel,
    f2: &PiecewiseKernel,
    traj: &Trajectory,
    tree: &SparseCountTree,
) -> Result<f64> {
    let layout = check_pair(f1, f2)?;
    if traj.layout() != layout {
        return Err(Error::KernelMismatch(
            "trajectory dimensions differ from the kernels".into(),
        ));
    }
    let n = tree.n() as f64;
    let mut acc = Neumaier::default();
    for i in traj.retained_indices() {
        let p = traj.triple(i);
        let a = f1.values()[f1.partition().locate_point(&p)?];
        let b = f2.values()[f2.partition().locate_point(&p)?];
        acc.add(psi(a, b) / n);
    }
    for (w, v1, v2) in overlay_terms(f1, f2, tree)? {
        acc.add(w / n * (((v1 + v2) / 2.0).sqrt() * (v2.sqrt() - v1.sqrt()) + (v1 - v2)));
    }
    Ok(acc.sum())
}

/// Squared Hellinger distance between two kernels averaged over an
/// occupation measure. Exact, since both sides are constant on cells.
pub fn deterministic_hellinger_sq(
    f1: &PiecewiseKernel,
    f2: &PiecewiseKernel,
    occ: &OccupationMeasure,
) -> Result<f64> {
    let layout = check_pair(f1, f2)?;
    check_occ(layout, occ)?;
    let joint = overlay(f1.partition(), f2.partition())?;
    let fdim = layout.footprint_dim();
    let mut acc = Neumaier::default();
    for c in joint.leaves() {
        let w = occ.mass_of_box(&layout.footprint(c).to_box(fdim)) * layout.next_state_volume(c);
        let d = f1.value_on(c).unwrap().sqrt() - f2.value_on(c).unwrap().sqrt();
        acc.add(w * d * d);
    }
    Ok(acc.sum() / 2.0)
}

fn check_occ(layout: Layout, occ: &OccupationMeasure) -> Result<()> {
    if occ.dim() != layout.footprint_dim() {
        return Err(Error::KernelMismatch(format!(
            "occupation measure has {} axes, expected {}",
            occ.dim(),
            layout.footprint_dim()
        )));
    }
    Ok(())
}

/// `∫ (√s − √f)² dy` for fixed `(x, a)`, split along the leaves of `f`.
fn pointwise_sq<D: TransitionDensity + ?Sized>(
    truth: &D,
    f: &PiecewiseKernel,
    x: &[f64],
    a: &[f64],
    resolution: usize,
) -> f64 {
    let mut acc = Neumaier::default();
    for k in f.leaves_over(x, a) {
        let block = f.next_state_block(k);
        let v = f.values()[k];
        let bi = truth.block_integrals(x, a, &block, resolution);
        acc.add(bi.mass - 2.0 * v.sqrt() * bi.root + v * block.volume());
    }
    acc.sum()
}

/// Coarsest partition of the state-control cube on which every leaf
/// footprint of `f` is a union of cells.
fn footprint_refinement(f: &PiecewiseKernel) -> Vec<CellId> {
    let layout = f.layout();
    let mut inner = std::collections::HashSet::new();
    for c in f.partition().leaves() {
        let fp = layout.footprint(c);
        for d in 0..fp.depth() {
            inner.insert(fp.truncate(d));
        }
    }
    let mut out = Vec::new();
    let mut stack = vec![CellId::root()];
    while let Some(c) = stack.pop() {
        if inner.contains(&c) {
            stack.extend(crate::geometry::split(&c, layout.footprint_dim()));
        } else {
            out.push(c);
        }
    }
    out
}

/// Squared Hellinger distance between a known density and a kernel,
/// averaged over an occupation measure.
///
/// The state-control integral uses the midpoint rule with `resolution`
/// points per axis on every piece where both the measure's grid and the
/// kernel's footprints are constant; it is exact when the truth does not
/// vary with `(x, a)` inside those pieces.
pub fn hellinger_sq_to_truth<D: TransitionDensity + ?Sized>(
    truth: &D,
    f: &PiecewiseKernel,
    occ: &OccupationMeasure,
    resolution: usize,
) -> Result<f64> {
    let layout = f.layout();
    check_occ(layout, occ)?;
    let fdim = layout.footprint_dim();
    let fps = footprint_refinement(f);
    let r = resolution.max(1);
    let mut acc = Neumaier::default();
    for (g, &mass) in occ.masses.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        let gbox = occ.cell_box(g);
        let dens = mass / gbox.volume();
        for fp in &fps {
            let fb = fp.to_box(fdim);
            let lo: Vec<f64> = gbox.lo.iter().zip(&fb.lo).map(|(a, b)| a.max(*b)).collect();
            let hi: Vec<f64> = gbox.hi.iter().zip(&fb.hi).map(|(a, b)| a.min(*b)).collect();
            if lo.iter().zip(&hi).any(|(l, h)| h <= l) {
                continue;
            }
            let piece = AxisBox { lo, hi };
            let total = r.pow(fdim as u32);
            let w = piece.volume() / total as f64;
            let mut p = vec![0.0; fdim];
            for k in 0..total {
                let mut rest = k;
                for (ax, pa) in p.iter_mut().enumerate() {
                    let j = rest % r;
                    rest /= r;
                    *pa =
                        piece.lo[ax] + (j as f64 + 0.5) / r as f64 * (piece.hi[ax] - piece.lo[ax]);
                }
                let sq = pointwise_sq(truth, f, &p[..layout.d1], &p[layout.d1..], resolution);
                acc.add(dens * w * sq);
            }
        }
    }
    Ok(acc.sum() / 2.0)
}

/// Empirical squared Hellinger distance between a known density and a kernel.
pub fn empirical_hellinger_to_truth<D: TransitionDensity + ?Sized>(
    truth: &D,
    f: &PiecewiseKernel,
    traj: &Trajectory,
    resolution: usize,
) -> f64 {
    let mut acc = Neumaier::default();
    for i in traj.retained_indices() {
        acc.add(pointwise_sq(
            truth,
            f,
            traj.state(i),
            traj.control(i),
            resolution,
        ));
    }
    acc.sum() / (2.0 * traj.n() as f64)
}

/// Smallest empirical squared Hellinger distance from `truth` to any kernel
/// constant on the leaves of `m`.
///
/// On each leaf the best constant is the squared `λ_n`-average of `√s`, which
/// gives the closed form used here.
pub fn best_approx_hellinger<D: TransitionDensity + ?Sized>(
    truth: &D,
    m: &DyadicPartition,
    traj: &Trajectory,
    resolution: usize,
) -> Result<f64> {
    let layout = traj.layout();
    let blank = PiecewiseKernel::from_values(layout, m.clone(), vec![0.0; m.len()])?;
    let mut mass = Neumaier::default();
    let mut root = vec![Neumaier::default(); m.len()];
    let mut weight = vec![0.0; m.len()];
    for i in traj.retained_indices() {
        let (x, a) = (traj.state(i), traj.control(i));
        for k in blank.leaves_over(x, a) {
            let block = blank.next_state_block(k);
            let bi = truth.block_integrals(x, a, &block, resolution);
            mass.add(bi.mass);
            root[k].add(bi.root);
            weight[k] += block.volume();
        }
    }
    let mut acc = mass;
    for (r, w) in root.iter().zip(&weight) {
        if *w > 0.0 {
            let r = r.sum();
            acc.add(-r * r / w);
        }
    }
    Ok(acc.sum() / (2.0 * traj.n() as f64))
}

/// One line of a loss report.
#[derive(Debug, Clone, Serialize)]
pub struct LossRow {
    pub loss_name: String,
    pub value: f64,
    pub n: usize,
    pub l: usize,
    #[serde(rename = "L")]
    pub penalty_l: f64,
    pub seed: Option<u64>,
}

pub fn write_loss_csv<W: Write>(rows: &[LossRow], w: W) -> Result<()> {
    let mut cw = csv::Writer::from_writer(w);
    for r in rows {
        cw.serialize(r)?;
    }
    cw.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel(values: Vec<f64>, depth: usize) -> PiecewiseKernel {
        let lay = Layout::new(1, 1).unwrap();
        PiecewiseKernel::from_values(lay, DyadicPartition::uniform(3, depth).unwrap(), values)
            .unwrap()
    }

    fn sample() -> (Trajectory, SparseCountTree) {
        let t = Trajectory::from_unit(
            1,
            1,
            vec![0.1, 0.6, 0.3, 0.9, 0.2, 0.7],
            vec![0.2, 0.7, 0.8, 0.1, 0.5, 0.4],
        )
        .unwrap();
        let tree = SparseCountTree::build(&t, 3).unwrap();
        (t, tree)
    }

    #[test]
    fn psi_values() {
        assert_eq!(psi(0.0, 0.0), 0.0);
        assert!((psi(4.0, 1.0) + 1.0 / 10f64.sqrt()).abs() < 1e-15);
        assert!((psi(4.0, 1.0) - -0.31623).abs() < 1e-5);
        assert_eq!(psi(2.5, 2.5), 0.0);
    }

    #[test]
    fn penalty_value() {
        assert!((penalty(4, 100, 64.0) - 15.62923).abs() < 1e-5);
    }

    #[test]
    fn t_of_zero_against_one() {
        let (t, tree) = sample();
        let z = t_statistic(&kernel(vec![0.0], 0), &kernel(vec![1.0], 0), &t, &tree).unwrap();
        assert!((z - 0.41421).abs() < 1e-5);
        assert!((z - (std::f64::consts::SQRT_2 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn hellinger_between_constants() {
        let (_, tree) = sample();
        let h =
            empirical_hellinger_sq(&kernel(vec![1.0], 0), &kernel(vec![4.0], 0), &tree).unwrap();
        assert!((h - 0.5).abs() < 1e-15);
    }

    #[test]
    fn deterministic_against_uniform_measure() {
        let occ = OccupationMeasure::uniform(vec![2, 2]);
        let a = kernel(vec![1.0; 8], 1);
        let mut v = vec![1.0; 8];
        v[0] = 0.0;
        v[4] = 2.0;
        let b = kernel(v, 1);
        let h = deterministic_hellinger_sq(&a, &b, &occ).unwrap();
        let want = 0.5 * 0.25 * 0.5 * (1.0 + (1.0 - 2f64.sqrt()).powi(2));
        assert!((h - want).abs() < 1e-15);
        assert!((hellinger_sq_to_truth(&a, &b, &occ, 2).unwrap() - want).abs() < 1e-15);
    }
}
