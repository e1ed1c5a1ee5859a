//! Measures on the state-control cube that are uniform inside the cells of a
//! regular grid. Exact marginals of finite chains, their time averages and
//! the long-run occupation measure all take this form.

use serde::{Deserialize, Serialize};

use crate::geometry::AxisBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationMeasure {
    /// Number of equal-width bins on each state axis, then each control axis.
    pub bins: Vec<usize>,
    /// Mass of every grid cell, axis 0 varying fastest.
    pub masses: Vec<f64>,
    pub label: String,
    /// Time horizon of the averages behind an estimated measure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
}

impl OccupationMeasure {
    pub fn new(bins: Vec<usize>, masses: Vec<f64>, label: impl Into<String>) -> Self {
        assert_eq!(
            bins.iter().product::<usize>(),
            masses.len(),
            "mass vector does not match grid"
        );
        OccupationMeasure {
            bins,
            masses,
            label: label.into(),
            horizon: None,
        }
    }

    /// Lebesgue measure on the cube, seen on a given grid.
    pub fn uniform(bins: Vec<usize>) -> Self {
        let k: usize = bins.iter().product();
        Self::new(bins, vec![1.0 / k as f64; k], "uniform")
    }

    pub fn dim(&self) -> usize {
        self.bins.len()
    }

    pub fn total(&self) -> f64 {
        crate::numeric::compensated_sum(self.masses.iter().copied())
    }

    pub fn cell_coords(&self, mut idx: usize) -> Vec<usize> {
        self.bins
            .iter()
            .map(|&b| {
                let c = idx % b;
                idx /= b;
                c
            })
            .collect()
    }

    pub fn cell_box(&self, idx: usize) -> AxisBox {
        let c = self.cell_coords(idx);
        let lo = c
            .iter()
            .zip(&self.bins)
            .map(|(&k, &b)| k as f64 / b as f64)
            .collect();
        let hi = c
            .iter()
            .zip(&self.bins)
            .map(|(&k, &b)| (k + 1) as f64 / b as f64)
            .collect();
        AxisBox { lo, hi }
    }

    /// Mass of an arbitrary box, using uniformity inside each cell.
    pub fn mass_of_box(&self, b: &AxisBox) -> f64 {
        let mut acc = crate::numeric::Neumaier::default();
        for (i, &m) in self.masses.iter().enumerate() {
            if m != 0.0 {
                let f = self.cell_box(i).fraction_inside(b);
                if f > 0.0 {
                    acc.add(m * f);
                }
            }
        }
        acc.sum()
    }

    /// Density with respect to Lebesgue measure at a point.
    pub fn density_at(&self, p: &[f64]) -> f64 {
        let mut idx = 0;
        let mut stride = 1;
        for (a, &b) in self.bins.iter().enumerate() {
            let k = ((p[a] * b as f64).floor() as usize).min(b - 1);
            idx += k * stride;
            stride *= b;
        }
        self.masses[idx] * self.masses.len() as f64
    }

    /// Total variation distance to a measure on the same grid.
    pub fn tv_distance(&self, other: &OccupationMeasure) -> f64 {
        assert_eq!(self.bins, other.bins, "total variation needs a common grid");
        0.5 * self
            .masses
            .iter()
            .zip(&other.masses)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}
