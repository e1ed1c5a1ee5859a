//! Transition densities that can be evaluated and integrated over next-state
//! blocks, so that estimated kernels can be compared with a known truth.

use crate::geometry::{AxisBox, Layout};

/// Integrals of `s(x, a, ·)` and `√s(x, a, ·)` over a next-state block.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BlockIntegrals {
    pub mass: f64,
    pub root: f64,
}

/// A transition density `s(x, a, y)` on the unit cube.
pub trait TransitionDensity: Sync {
    fn layout(&self) -> Layout;

    fn density(&self, x: &[f64], a: &[f64], y: &[f64]) -> f64;

    /// Integrals over `block` for fixed `(x, a)`. The default uses the
    /// midpoint rule with `resolution` points per axis; implementations
    /// override it when a closed form is available.
    fn block_integrals(
        &self,
        x: &[f64],
        a: &[f64],
        block: &AxisBox,
        resolution: usize,
    ) -> BlockIntegrals {
        midpoint_integrals(|y| self.density(x, a, y), block, resolution)
    }
}

/// Midpoint-rule integrals of `f` and `√f` over a box.
pub fn midpoint_integrals<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    block: &AxisBox,
    resolution: usize,
) -> BlockIntegrals {
    let r = resolution.max(1);
    let dim = block.dim();
    let total = r.pow(dim as u32);
    let w = block.volume() / total as f64;
    let mut y = vec![0.0; dim];
    let mut out = BlockIntegrals::default();
    for k in 0..total {
        let mut rest = k;
        for (a, ya) in y.iter_mut().enumerate() {
            let j = rest % r;
            rest /= r;
            *ya = block.lo[a] + (j as f64 + 0.5) / r as f64 * (block.hi[a] - block.lo[a]);
        }
        let v = f(&y).max(0.0);
        out.mass += w * v;
        out.root += w * v.sqrt();
    }
    out
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_unit(points: usize) -> Vec<(f64, f64)> {
    let n = points.max(1);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p1 = x;
                p0 = 1.0;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push(((1.0 - x) / 2.0, w / 2.0));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let q = gauss_legendre_unit(5);
        let s: f64 = q.iter().map(|(x, w)| w * x.powi(9)).sum();
        assert!((s - 0.1).abs() < 1e-14);
        let total: f64 = q.iter().map(|p| p.1).sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn midpoint_is_exact_for_constants() {
        let b = AxisBox::new(vec![0.25, 0.0], vec![0.5, 0.5]).unwrap();
        let r = midpoint_integrals(|_| 4.0, &b, 3);
        assert!((r.mass - 0.5).abs() < 1e-15);
        assert!((r.root - 0.25).abs() < 1e-15);
    }
}
