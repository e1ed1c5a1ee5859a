//! Simulators for controlled Markov chains with known transition densities.
//!
//! Finite chains live on uniform grids of a one-dimensional state space and a
//! one-dimensional control space. Inside a cell every point is equally
//! likely, so a finite chain is a genuine density on the continuum while its
//! cell-level law stays exactly computable.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::density::{gauss_legendre_unit, BlockIntegrals, TransitionDensity};
use crate::error::{Error, Result};
use crate::geometry::{AxisBox, Layout};
use crate::occupation::OccupationMeasure;
use crate::trajectory::Trajectory;

/// Allowed deviation of a kernel row integral from one.
pub const ROW_TOLERANCE: f64 = 1e-12;

/// Generator for replication `stream` of an experiment keyed by `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// How controls are drawn. Distributions are over control cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlRule {
    Uniform,
    /// `probs[x * n_controls + l]`: law of the control given the current
    /// state cell.
    Markov {
        probs: Vec<f64>,
    },
    /// `early` at times `from <= t < until`, `default` otherwise.
    Phased {
        default: Vec<f64>,
        early: Vec<f64>,
        from: usize,
        until: usize,
    },
    /// Two control cells. Cell 1 at time 0 and whenever `floor(log2 t)` is
    /// even, cell 0 otherwise.
    DyadicBlocks,
    /// `first` at time 0; afterwards `given_first[c0 * n_controls + l]`,
    /// where `c0` is the cell of the first control.
    Anchored {
        first: Vec<f64>,
        given_first: Vec<f64>,
    },
}

/// Constants known for a chain by construction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpecTags {
    /// Lower density bound of a fully connected kernel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_p: Option<f64>,
    /// Lower density bound of the control law given any history.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minorization: Option<f64>,
}

/// A chain whose kernel is constant on cells of uniform grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteCMCSpec {
    pub label: String,
    pub n_states: usize,
    pub n_controls: usize,
    /// `density[(x * n_controls + l) * n_states + y]`, in units of one over
    /// the next-state cell volume.
    pub density: Vec<f64>,
    pub control: ControlRule,
    /// Law of the first state cell.
    pub initial: Vec<f64>,
    #[serde(default)]
    pub tags: SpecTags,
}

fn check_law(p: &[f64], len: usize, what: &str) -> Result<()> {
    if p.len() != len {
        return Err(Error::InvalidParameter(format!(
            "{what} has {} entries, expected {len}",
            p.len()
        )));
    }
    if p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!("{what} sums to {s}")));
    }
    Ok(())
}

fn check_rows(p: &[f64], rows: usize, width: usize, what: &str) -> Result<()> {
    if p.len() != rows * width {
        return Err(Error::InvalidParameter(format!(
            "{what} has {} entries, expected {}",
            p.len(),
            rows * width
        )));
    }
    for r in 0..rows {
        check_law(
            &p[r * width..(r + 1) * width],
            width,
            &format!("{what} row {r}"),
        )?;
    }
    Ok(())
}

fn cell_of(v: f64, k: usize) -> usize {
    ((v * k as f64).floor().max(0.0) as usize).min(k - 1)
}

fn draw<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

fn inside_cell<R: Rng + ?Sized>(cell: usize, k: usize, rng: &mut R) -> f64 {
    (cell as f64 + rng.gen::<f64>()) / k as f64
}

/// Value of the dyadic block schedule: `+1` or `-1`.
pub fn dyadic_block_sign(t: usize) -> i8 {
    if t == 0 || (usize::BITS - 1 - t.leading_zeros()).is_multiple_of(2) {
        1
    } else {
        -1
    }
}

impl FiniteCMCSpec {
    pub fn validate(&self) -> Result<()> {
        let (ns, nc) = (self.n_states, self.n_controls);
        if ns == 0 || nc == 0 {
            return Err(Error::InvalidParameter(
                "a chain needs at least one state and one control cell".into(),
            ));
        }
        if self.density.len() != ns * nc * ns {
            return Err(Error::InvalidParameter(format!(
                "kernel has {} entries, expected {}",
                self.density.len(),
                ns * nc * ns
            )));
        }
        for row in 0..ns * nc {
            let r = &self.density[row * ns..(row + 1) * ns];
            if r.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "kernel row {row} has a negative entry"
                )));
            }
            let mass = crate::numeric::compensated_sum(r.iter().map(|d| d / ns as f64));
            if (mass - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::InvalidParameter(format!(
                    "kernel row {row} integrates to {mass}"
                )));
            }
            if let Some(e) = self.tags.eps0 {
                if r.iter().any(|d| *d < e - 1e-12 || *d > 1.0 / e + 1e-12) {
                    return Err(Error::InvalidParameter(format!(
                        "kernel row {row} leaves [{e}, {}]",
                        1.0 / e
                    )));
                }
            }
        }
        check_law(&self.initial, ns, "initial law")?;
        match &self.control {
            ControlRule::Uniform => {}
            ControlRule::Markov { probs } => check_rows(probs, ns, nc, "control law")?,
            ControlRule::Phased {
                default,
                early,
                from,
                until,
            } => {
                check_law(default, nc, "default control law")?;
                check_law(early, nc, "early control law")?;
                if from > until {
                    return Err(Error::InvalidParameter(
                        "early phase ends before it starts".into(),
                    ));
                }
            }
            ControlRule::DyadicBlocks => {
                if nc != 2 {
                    return Err(Error::InvalidParameter(
                        "the block schedule needs two control cells".into(),
                    ));
                }
            }
            ControlRule::Anchored { first, given_first } => {
                check_law(first, nc, "first control law")?;
                check_rows(given_first, nc, nc, "anchored control law")?;
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout { d1: 1, d2: 1 }
    }

    pub fn density_cell(&self, x: usize, l: usize, y: usize) -> f64 {
        self.density[(x * self.n_controls + l) * self.n_states + y]
    }

    /// Probability of moving to next-state cell `y`.
    pub fn prob(&self, x: usize, l: usize, y: usize) -> f64 {
        self.density_cell(x, l, y) / self.n_states as f64
    }

    /// Controls depend on the current state and the time only.
    pub fn is_markov(&self) -> bool {
        !matches!(self.control, ControlRule::Anchored { .. })
    }

    /// Number of history classes carried alongside the state-control pair.
    pub fn histories(&self) -> usize {
        match self.control {
            ControlRule::Anchored { .. } => self.n_controls,
            _ => 1,
        }
    }

    /// Size of the augmented chain `(history, x, l)`.
    pub fn augmented_len(&self) -> usize {
        self.histories() * self.n_states * self.n_controls
    }

    pub fn aug_index(&self, h: usize, x: usize, l: usize) -> usize {
        (h * self.n_states + x) * self.n_controls + l
    }

    pub fn aug_parts(&self, z: usize) -> (usize, usize, usize) {
        let l = z % self.n_controls;
        let rest = z / self.n_controls;
        (rest / self.n_states, rest % self.n_states, l)
    }

    /// First time from which the step operator no longer changes.
    pub fn homogeneous_from(&self) -> Option<usize> {
        match &self.control {
            ControlRule::Uniform | ControlRule::Markov { .. } => Some(0),
            ControlRule::Phased { from, until, .. } => Some(if from == until { 0 } else { *until }),
            ControlRule::DyadicBlocks => None,
            ControlRule::Anchored { .. } => Some(0),
        }
    }

    /// Law of the control cell at time `t` given history class `h` and
    /// state cell `x`.
    pub fn control_law(&self, t: usize, h: usize, x: usize) -> Vec<f64> {
        let nc = self.n_controls;
        match &self.control {
            ControlRule::Uniform => vec![1.0 / nc as f64; nc],
            ControlRule::Markov { probs } => probs[x * nc..(x + 1) * nc].to_vec(),
            ControlRule::Phased {
                default,
                early,
                from,
                until,
            } => {
                if t >= *from && t < *until {
                    early.clone()
                } else {
                    default.clone()
                }
            }
            ControlRule::DyadicBlocks => {
                if dyadic_block_sign(t) > 0 {
                    vec![0.0, 1.0]
                } else {
                    vec![1.0, 0.0]
                }
            }
            ControlRule::Anchored { first, given_first } => {
                if t == 0 {
                    first.clone()
                } else {
                    given_first[h * nc..(h + 1) * nc].to_vec()
                }
            }
        }
    }

    /// Law of the augmented pair at time 0.
    pub fn initial_augmented(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.augmented_len()];
        for x in 0..self.n_states {
            let law = self.control_law(0, 0, x);
            for (l, q) in law.iter().enumerate() {
                let h = if self.histories() > 1 { l } else { 0 };
                p[self.aug_index(h, x, l)] += self.initial[x] * q;
            }
        }
        p
    }

    /// Push the augmented law at time `t` one step forward.
    pub fn step(&self, p: &[f64], t: usize) -> Vec<f64> {
        let (ns, nc) = (self.n_states, self.n_controls);
        let mut out = vec![0.0; p.len()];
        for h in 0..self.histories() {
            let mut w = vec![0.0; ns];
            for x in 0..ns {
                for l in 0..nc {
                    let m = p[self.aug_index(h, x, l)];
                    if m == 0.0 {
                        continue;
                    }
                    for (y, wy) in w.iter_mut().enumerate() {
                        *wy += m * self.prob(x, l, y);
                    }
                }
            }
            for (y, wy) in w.iter().enumerate() {
                if *wy == 0.0 {
                    continue;
                }
                for (l, q) in self.control_law(t + 1, h, y).iter().enumerate() {
                    out[self.aug_index(h, y, l)] += wy * q;
                }
            }
        }
        out
    }

    /// Dense step operator from time `t` to `t + 1` on the augmented chain,
    /// row-major.
    pub fn step_matrix(&self, t: usize) -> Vec<f64> {
        let z = self.augmented_len();
        let mut q = vec![0.0; z * z];
        for from in 0..z {
            let (h, x, l) = self.aug_parts(from);
            for y in 0..self.n_states {
                let py = self.prob(x, l, y);
                if py == 0.0 {
                    continue;
                }
                for (l2, c) in self.control_law(t + 1, h, y).iter().enumerate() {
                    q[from * z + self.aug_index(h, y, l2)] += py * c;
                }
            }
        }
        q
    }

    /// Exact augmented laws at times `0..=n`.
    pub fn marginals(&self, n: usize) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(n + 1);
        out.push(self.initial_augmented());
        for t in 0..n {
            let next = self.step(&out[t], t);
            out.push(next);
        }
        out
    }

    /// Law of the state-control cell, state cell varying fastest.
    pub fn pair_law(&self, aug: &[f64]) -> Vec<f64> {
        let ns = self.n_states;
        let mut out = vec![0.0; ns * self.n_controls];
        for (z, m) in aug.iter().enumerate() {
            let (_, x, l) = self.aug_parts(z);
            out[x + ns * l] += m;
        }
        out
    }

    /// Average of the pair laws at times `1..=n`.
    pub fn occupation_from(&self, marginals: &[Vec<f64>], n: usize) -> OccupationMeasure {
        let mut acc = vec![crate::numeric::Neumaier::default(); self.n_states * self.n_controls];
        for p in &marginals[1..=n] {
            for (a, v) in acc.iter_mut().zip(self.pair_law(p)) {
                a.add(v);
            }
        }
        let masses = acc.iter().map(|a| a.sum() / n as f64).collect();
        let mut occ = OccupationMeasure::new(
            vec![self.n_states, self.n_controls],
            masses,
            format!("{} nu_n", self.label),
        );
        occ.horizon = Some(n);
        occ
    }

    /// Fraction of every augmented cell lying inside the state-control box.
    pub fn cell_fractions(&self, s: &AxisBox) -> Vec<f64> {
        let (ns, nc) = (self.n_states as f64, self.n_controls as f64);
        (0..self.augmented_len())
            .map(|z| {
                let (_, x, l) = self.aug_parts(z);
                let cell = AxisBox {
                    lo: vec![x as f64 / ns, l as f64 / nc],
                    hi: vec![(x + 1) as f64 / ns, (l + 1) as f64 / nc],
                };
                cell.fraction_inside(s)
            })
            .collect()
    }

    pub fn sample_trajectory<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Trajectory> {
        let (ns, nc) = (self.n_states, self.n_controls);
        let mut states = Vec::with_capacity(n + 1);
        let mut controls = Vec::with_capacity(n + 1);
        let mut x = draw(&self.initial, rng);
        let mut h = 0;
        for t in 0..=n {
            let l = draw(&self.control_law(t, h, x), rng);
            if t == 0 && self.histories() > 1 {
                h = l;
            }
            states.push(inside_cell(x, ns, rng));
            controls.push(inside_cell(l, nc, rng));
            if t < n {
                let row = &self.density[(x * nc + l) * ns..(x * nc + l + 1) * ns];
                let probs: Vec<f64> = row.iter().map(|d| d / ns as f64).collect();
                x = draw(&probs, rng);
            }
        }
        Trajectory::from_unit(1, 1, states, controls)
    }
}

impl TransitionDensity for FiniteCMCSpec {
    fn layout(&self) -> Layout {
        Layout { d1: 1, d2: 1 }
    }

    fn density(&self, x: &[f64], a: &[f64], y: &[f64]) -> f64 {
        let ns = self.n_states;
        self.density_cell(
            cell_of(x[0], ns),
            cell_of(a[0], self.n_controls),
            cell_of(y[0], ns),
        )
    }

    fn block_integrals(
        &self,
        x: &[f64],
        a: &[f64],
        block: &AxisBox,
        _resolution: usize,
    ) -> BlockIntegrals {
        let ns = self.n_states;
        let (xc, lc) = (cell_of(x[0], ns), cell_of(a[0], self.n_controls));
        let mut out = BlockIntegrals::default();
        for y in 0..ns {
            let lo = (y as f64 / ns as f64).max(block.lo[0]);
            let hi = ((y + 1) as f64 / ns as f64).min(block.hi[0]);
            if hi > lo {
                let d = self.density_cell(xc, lc, y);
                out.mass += (hi - lo) * d;
                out.root += (hi - lo) * d.sqrt();
            }
        }
        out
    }
}

/// Two states, one control, the state always jumps to the other cell.
pub fn flip_kernel() -> FiniteCMCSpec {
    FiniteCMCSpec {
        label: "flip".into(),
        n_states: 2,
        n_controls: 1,
        density: vec![0.0, 2.0, 2.0, 0.0],
        control: ControlRule::Uniform,
        initial: vec![1.0, 0.0],
        tags: SpecTags::default(),
    }
}

/// Lebesgue kernel with independent uniform controls.
pub fn uniform_kernel(n_states: usize, n_controls: usize) -> FiniteCMCSpec {
    FiniteCMCSpec {
        label: "uniform".into(),
        n_states,
        n_controls,
        density: vec![1.0; n_states * n_controls * n_states],
        control: ControlRule::Uniform,
        initial: vec![1.0 / n_states as f64; n_states],
        tags: SpecTags {
            eps0: Some(1.0),
            c_delta: Some(1.0),
            c_p: None,
            minorization: None,
        },
    }
}

fn random_law<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let g = Gamma::new(1.0, 1.0).expect("unit gamma");
    let w: Vec<f64> = (0..k).map(|_| g.sample(rng) + 1e-3).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// A random fully connected kernel with densities in `[eps0, 1 / eps0]`
/// and random Markov controls.
pub fn fully_connected<R: Rng + ?Sized>(
    eps0: f64,
    n_states: usize,
    n_controls: usize,
    rng: &mut R,
) -> Result<FiniteCMCSpec> {
    if !(eps0 > 0.0 && eps0 <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "eps0 = {eps0} must lie in (0, 1]"
        )));
    }
    if n_states == 0 || n_controls == 0 {
        return Err(Error::InvalidParameter(
            "grid sizes must be positive".into(),
        ));
    }
    let (lo, hi) = (eps0, 1.0 / eps0);
    let mut density = Vec::with_capacity(n_states * n_controls * n_states);
    for _ in 0..n_states * n_controls {
        let raw = random_law(n_states, rng);
        let dev: Vec<f64> = raw.iter().map(|p| p * n_states as f64 - 1.0).collect();
        // largest shrink factor keeping every entry of 1 + t * dev in range
        let mut t_max: f64 = 1.0;
        for d in &dev {
            if *d > 0.0 {
                t_max = t_max.min((hi - 1.0) / d);
            } else if *d < 0.0 {
                t_max = t_max.min((1.0 - lo) / -d);
            }
        }
        let t = t_max * rng.gen_range(0.5..1.0);
        let row: Vec<f64> = dev.iter().map(|d| (1.0 + t * d).clamp(lo, hi)).collect();
        let mass: f64 = crate::numeric::compensated_sum(row.iter().copied()) / n_states as f64;
        density.extend(row.iter().map(|v| v / mass));
    }
    let mut probs = Vec::with_capacity(n_states * n_controls);
    for _ in 0..n_states {
        probs.extend(random_law(n_controls, rng));
    }
    let spec = FiniteCMCSpec {
        label: format!("fully-connected eps0={eps0}"),
        n_states,
        n_controls,
        density,
        control: ControlRule::Markov { probs },
        initial: random_law(n_states, rng),
        tags: SpecTags {
            eps0: Some(eps0),
            c_delta: Some(1.0 / eps0),
            c_p: Some(if eps0 < 1.0 {
                -(1.0 - eps0).ln()
            } else {
                f64::INFINITY
            }),
            minorization: None,
        },
    };
    spec.validate()?;
    Ok(spec)
}

/// Deterministic chain on two states: the next state equals the current
/// control, and controls follow [`dyadic_block_sign`]. State and control
/// `-1` map to the lower cell, `+1` to the upper one.
pub fn inid_counterexample() -> FiniteCMCSpec {
    let mut density = vec![0.0; 8];
    for x in 0..2 {
        for l in 0..2 {
            density[(x * 2 + l) * 2 + l] = 2.0;
        }
    }
    FiniteCMCSpec {
        label: "inid".into(),
        n_states: 2,
        n_controls: 2,
        density,
        control: ControlRule::DyadicBlocks,
        initial: vec![0.0, 1.0],
        tags: SpecTags::default(),
    }
}

/// Number of `i` in `1..=n` with `(X_i, a_i) = (1, 1)` on the counterexample.
pub fn inid_count_11(n: usize) -> usize {
    (1..=n)
        .filter(|&i| dyadic_block_sign(i - 1) > 0 && dyadic_block_sign(i) > 0)
        .count()
}

/// Reference closed form of `ν_n((1, 1))` for the counterexample.
pub fn inid_nu_closed_form(n: usize) -> f64 {
    let k = (usize::BITS - 1 - n.leading_zeros()) as i32;
    let r = (n - (1usize << k)) as f64;
    let n = n as f64;
    let up = (k + 1) / 2;
    (4f64.powi(up) - 1.0) / (6.0 * n) + (1.0 + (-1f64).powi(k)) * (r + 1.0) / (4.0 * n)
}

/// Parameters of the lower-bound family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssouadParams {
    pub d1: usize,
    pub d2: usize,
    pub iota: f64,
    pub eps: f64,
    /// One bit per first-block state cell and control cell, control-major.
    pub xi: Vec<u8>,
}

impl AssouadParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.d1 < 12 || !self.d1.is_multiple_of(6) {
            return bad(format!(
                "d1 = {} must be even, divisible by 3 and at least 12",
                self.d1
            ));
        }
        if self.d2 == 0 {
            return bad("d2 must be positive".into());
        }
        if !(self.iota > 1.0 / 32.0 && self.iota < 31.0 / 64.0) {
            return bad(format!("iota = {} outside (1/32, 31/64)", self.iota));
        }
        if !(self.eps > 0.0 && self.eps < 1.0 / 32.0) {
            return bad(format!("eps = {} outside (0, 1/32)", self.eps));
        }
        if self.xi.len() != self.d1 * self.d2 / 3 || self.xi.iter().any(|b| *b > 1) {
            return bad(format!("xi needs {} bits", self.d1 * self.d2 / 3));
        }
        Ok(())
    }

    fn bit(&self, l: usize, i: usize) -> f64 {
        self.xi[l * (self.d1 / 3) + i] as f64
    }

    /// Transition probabilities of the state from cell `x` under control `l`.
    pub fn row(&self, x: usize, l: usize) -> Vec<f64> {
        let (d1, iota, eps) = (self.d1 as f64, self.iota, self.eps);
        let first = self.d1 / 3;
        let mut row = vec![0.0; self.d1];
        if x < first {
            for p in row.iter_mut().take(first) {
                *p = 3.0 * iota / d1;
            }
            for p in row.iter_mut().skip(first) {
                *p = 3.0 * iota / (2.0 * (d1 - 3.0));
            }
            let xi = self.bit(l, x);
            row[first + 2 * x] = (1.0 + xi * eps - 2.0 * iota) / 2.0;
            row[first + 2 * x + 1] = (1.0 - xi * eps - 2.0 * iota) / 2.0;
        } else {
            for p in row.iter_mut().take(first) {
                *p = 3.0 * iota / d1;
            }
            for p in row.iter_mut().skip(first) {
                *p = 3.0 * (1.0 - iota) / (2.0 * d1);
            }
        }
        row
    }

    /// Stationary law of the state cell, in closed form.
    pub fn stationary(&self) -> Vec<f64> {
        let (d1, iota, eps) = (self.d1 as f64, self.iota, self.eps);
        let first = self.d1 / 3;
        let mut pi = vec![3.0 * iota / d1; self.d1];
        for i in 0..first {
            let xi_bar = (0..self.d2).map(|l| self.bit(l, i)).sum::<f64>() / self.d2 as f64;
            let tail = (1.0 - iota) * (1.0 - iota) / 2.0;
            pi[first + 2 * i] = 3.0 / d1 * (iota * (1.0 + xi_bar * eps - iota) / 2.0 + tail);
            pi[first + 2 * i + 1] = 3.0 / d1 * (iota * (1.0 - xi_bar * eps - iota) / 2.0 + tail);
        }
        pi
    }

    /// Reference stationary value for the first block, read as a density.
    pub fn reference_first_block_density(&self) -> f64 {
        self.iota
    }
}

/// The lower-bound chain with uniform independent controls, started from
/// its stationary law.
pub fn assouad_chain(params: &AssouadParams) -> Result<FiniteCMCSpec> {
    params.validate()?;
    let (d1, d2) = (params.d1, params.d2);
    let mut density = Vec::with_capacity(d1 * d2 * d1);
    for x in 0..d1 {
        for l in 0..d2 {
            density.extend(params.row(x, l).iter().map(|p| p * d1 as f64));
        }
    }
    let spec = FiniteCMCSpec {
        label: format!("assouad d1={d1} d2={d2} iota={}", params.iota),
        n_states: d1,
        n_controls: d2,
        density,
        control: ControlRule::Uniform,
        initial: params.stationary(),
        tags: SpecTags::default(),
    };
    spec.validate()?;
    Ok(spec)
}

/// Number of steps below which a first-block cell of the lower-bound chain
/// is likely to remain unvisited.
pub fn assouad_covering_threshold(params: &AssouadParams) -> f64 {
    let k = (params.d1 * params.d2) as f64;
    k / (6.0 * params.iota) * (k / 3.0).ln()
}

/// Uniform i.i.d. states; the first control is uniform and later controls
/// favour the upper half when the first one was there.
pub fn minorized_nonmixing() -> FiniteCMCSpec {
    FiniteCMCSpec {
        label: "minorized".into(),
        n_states: 2,
        n_controls: 2,
        density: vec![1.0; 8],
        control: ControlRule::Anchored {
            first: vec![0.5, 0.5],
            given_first: vec![0.5, 0.5, 0.125, 0.875],
        },
        initial: vec![0.5, 0.5],
        tags: SpecTags {
            eps0: Some(1.0),
            c_delta: None,
            c_p: None,
            minorization: Some(0.25),
        },
    }
}

/// Kernel sending the state to the half that holds the control; controls
/// pick the lower half with probability `1 / i0` during `1 <= t < i0` and
/// with probability one half otherwise.
pub fn comparison_chain(i0: usize) -> Result<FiniteCMCSpec> {
    if i0 == 0 {
        return Err(Error::InvalidParameter("i0 must be at least 1".into()));
    }
    let mut density = vec![0.0; 8];
    for x in 0..2 {
        for l in 0..2 {
            density[(x * 2 + l) * 2 + l] = 2.0;
        }
    }
    let w = 1.0 / i0 as f64;
    let spec = FiniteCMCSpec {
        label: format!("comparison i0={i0}"),
        n_states: 2,
        n_controls: 2,
        density,
        control: ControlRule::Phased {
            default: vec![0.5, 0.5],
            early: vec![w, 1.0 - w],
            from: 1,
            until: i0,
        },
        initial: vec![0.5, 0.5],
        tags: SpecTags::default(),
    };
    spec.validate()?;
    Ok(spec)
}

/// Closed form of `ν_n` for [`comparison_chain`]: the law of `(X_i, a_i)`
/// is the product of the control laws at times `i - 1` and `i`.
pub fn comparison_nu_n(i0: usize, n: usize) -> OccupationMeasure {
    let w = 1.0 / i0 as f64;
    let law = |t: usize| {
        if t >= 1 && t < i0 {
            [w, 1.0 - w]
        } else {
            [0.5, 0.5]
        }
    };
    let mut masses = [0.0; 4];
    for i in 1..=n {
        let (p, q) = (law(i - 1), law(i));
        for x in 0..2 {
            for l in 0..2 {
                masses[x + 2 * l] += p[x] * q[l] / n as f64;
            }
        }
    }
    OccupationMeasure::new(vec![2, 2], masses.to_vec(), "comparison nu_n")
}

/// Truth for oracle checks: a one-control kernel with a step at `y = 1/3`.
pub fn step_truth() -> FiniteCMCSpec {
    let row = [1.5, 0.75, 0.75];
    FiniteCMCSpec {
        label: "step".into(),
        n_states: 3,
        n_controls: 1,
        density: row.iter().cycle().take(9).copied().collect(),
        control: ControlRule::Uniform,
        initial: vec![1.0 / 3.0; 3],
        tags: SpecTags::default(),
    }
}

/// Truth for oracle checks with most of its next-state mass in a single
/// cell of width `1/64`.
pub fn tiny_cell_truth() -> FiniteCMCSpec {
    let k = 64;
    let mut row = vec![0.1 * k as f64 / (k - 1) as f64; k];
    row[0] = 0.9 * k as f64;
    let mut initial = vec![0.1 / (k - 1) as f64; k];
    initial[0] = 0.9;
    FiniteCMCSpec {
        label: "tiny-cell".into(),
        n_states: k,
        n_controls: 1,
        density: row.iter().cycle().take(k * k).copied().collect(),
        control: ControlRule::Uniform,
        initial,
        tags: SpecTags::default(),
    }
}

/// `s(x, a, y) = c(x, a) (1 + amplitude · sin(2π · frequency · (Σx + Σa + Σy)))`
/// with uniform controls. Integer frequencies make the Lebesgue measure
/// stationary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderFamily {
    pub d1: usize,
    pub d2: usize,
    pub amplitude: f64,
    pub frequency: f64,
}

fn phase_integral(lo: f64, hi: f64, theta: f64) -> Complex64 {
    if theta == 0.0 {
        Complex64::new(hi - lo, 0.0)
    } else {
        let i = Complex64::new(0.0, 1.0);
        ((i * theta * hi).exp() - (i * theta * lo).exp()) / (i * theta)
    }
}

impl HolderFamily {
    pub fn new(d1: usize, d2: usize, amplitude: f64, frequency: f64) -> Result<Self> {
        let h = HolderFamily {
            d1,
            d2,
            amplitude,
            frequency,
        };
        if d1 == 0 || d2 == 0 || !amplitude.is_finite() || !frequency.is_finite() || amplitude < 0.0
        {
            return Err(Error::InvalidParameter("bad sinusoid parameters".into()));
        }
        Layout::new(d1, d2)?;
        let (lo, hi) = h.density_range();
        if lo < 0.5 - 1e-12 || hi > 1.5 + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "density range [{lo}, {hi}] leaves [0.5, 1.5]"
            )));
        }
        Ok(h)
    }

    fn theta(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.frequency
    }

    /// `|∫ e^{iθy} dy|^{d1}` over the next-state cube.
    fn g_norm(&self) -> f64 {
        phase_integral(0.0, 1.0, self.theta())
            .norm()
            .powi(self.d1 as i32)
    }

    /// Normalizer as a function of `u = Σx + Σa`.
    pub fn normalizer(&self, u: f64) -> f64 {
        let i = Complex64::new(0.0, 1.0);
        let g = phase_integral(0.0, 1.0, self.theta()).powi(self.d1 as i32);
        1.0 / (1.0 + self.amplitude * ((i * self.theta() * u).exp() * g).im)
    }

    /// Bounds on the density over the whole cube.
    pub fn density_range(&self) -> (f64, f64) {
        let ag = self.amplitude * self.g_norm();
        let (c_lo, c_hi) = (1.0 / (1.0 + ag), 1.0 / (1.0 - ag));
        (c_lo * (1.0 - self.amplitude), c_hi * (1.0 + self.amplitude))
    }

    pub fn value(&self, x: &[f64], a: &[f64], y: &[f64]) -> f64 {
        let u: f64 = x.iter().sum::<f64>() + a.iter().sum::<f64>();
        let v: f64 = y.iter().sum();
        self.normalizer(u) * (1.0 + self.amplitude * (self.theta() * (u + v)).sin())
    }

    /// Closed-form integral of the density over a next-state box.
    pub fn block_mass(&self, x: &[f64], a: &[f64], block: &AxisBox) -> f64 {
        let u: f64 = x.iter().sum::<f64>() + a.iter().sum::<f64>();
        let th = self.theta();
        let mut prod = Complex64::new(1.0, 0.0);
        for (lo, hi) in block.lo.iter().zip(&block.hi) {
            prod *= phase_integral(*lo, *hi, th);
        }
        let i = Complex64::new(0.0, 1.0);
        let osc = ((i * th * u).exp() * prod).im;
        self.normalizer(u) * (block.volume() + self.amplitude * osc)
    }

    /// Lipschitz constant of `√s` for the Euclidean norm on the cube.
    pub fn sqrt_lipschitz(&self) -> f64 {
        let (a, th) = (self.amplitude, self.theta().abs());
        let ag = a * self.g_norm();
        let c_hi = 1.0 / (1.0 - ag);
        let (s_lo, _) = self.density_range();
        let by = c_hi * a * th;
        let bx = c_hi * c_hi * a * th * self.g_norm() * (1.0 + a) + by;
        let grad = ((self.d1 + self.d2) as f64 * bx * bx + self.d1 as f64 * by * by).sqrt();
        grad / (2.0 * s_lo.sqrt())
    }

    /// Draw the next state one coordinate at a time by inverting the
    /// conditional distribution functions.
    pub fn sample_next<R: Rng + ?Sized>(&self, x: &[f64], a: &[f64], rng: &mut R) -> Vec<f64> {
        let th = self.theta();
        let i = Complex64::new(0.0, 1.0);
        let g = phase_integral(0.0, 1.0, th);
        let mut w: f64 = x.iter().sum::<f64>() + a.iter().sum::<f64>();
        let mut y = Vec::with_capacity(self.d1);
        for k in 0..self.d1 {
            let rest = g.powi((self.d1 - k - 1) as i32);
            let big_g = (i * th * w).exp() * rest;
            let cdf = |t: f64| t + self.amplitude * (big_g * phase_integral(0.0, t, th)).im;
            let total = cdf(1.0);
            let target = rng.gen::<f64>() * total;
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if cdf(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let v = 0.5 * (lo + hi);
            y.push(v);
            w += v;
        }
        y
    }

    pub fn sample_trajectory<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Trajectory> {
        let mut states = Vec::with_capacity((n + 1) * self.d1);
        let mut controls = Vec::with_capacity((n + 1) * self.d2);
        let mut x: Vec<f64> = (0..self.d1).map(|_| rng.gen()).collect();
        for t in 0..=n {
            let a: Vec<f64> = (0..self.d2).map(|_| rng.gen()).collect();
            states.extend_from_slice(&x);
            controls.extend_from_slice(&a);
            if t < n {
                x = self.sample_next(&x, &a, rng);
            }
        }
        Trajectory::from_unit(self.d1, self.d2, states, controls)
    }
}

impl TransitionDensity for HolderFamily {
    fn layout(&self) -> Layout {
        Layout {
            d1: self.d1,
            d2: self.d2,
        }
    }

    fn density(&self, x: &[f64], a: &[f64], y: &[f64]) -> f64 {
        self.value(x, a, y)
    }

    fn block_integrals(
        &self,
        x: &[f64],
        a: &[f64],
        block: &AxisBox,
        resolution: usize,
    ) -> BlockIntegrals {
        let nodes = gauss_legendre_unit(resolution.clamp(2, 64));
        let dim = block.dim();
        let total = nodes.len().pow(dim as u32);
        let mut root = 0.0;
        let mut y = vec![0.0; dim];
        for k in 0..total {
            let mut rest = k;
            let mut w = block.volume();
            for (ax, ya) in y.iter_mut().enumerate() {
                let (t, wt) = nodes[rest % nodes.len()];
                rest /= nodes.len();
                *ya = block.lo[ax] + t * (block.hi[ax] - block.lo[ax]);
                w *= wt;
            }
            root += w * self.value(x, a, &y).max(0.0).sqrt();
        }
        BlockIntegrals {
            mass: self.block_mass(x, a, block),
            root,
        }
    }
}

/// Known transition density behind a simulated trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    Finite(FiniteCMCSpec),
    Holder(HolderFamily),
}

impl GroundTruth {
    pub fn as_finite(&self) -> Option<&FiniteCMCSpec> {
        match self {
            GroundTruth::Finite(s) => Some(s),
            GroundTruth::Holder(_) => None,
        }
    }

    pub fn sample_trajectory<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Trajectory> {
        match self {
            GroundTruth::Finite(s) => s.sample_trajectory(n, rng),
            GroundTruth::Holder(h) => h.sample_trajectory(n, rng),
        }
    }

    /// Occupation measure of the state-control pair over `n` steps, exact
    /// for finite chains and Lebesgue for the sinusoid family.
    pub fn occupation(&self, n: usize) -> OccupationMeasure {
        match self {
            GroundTruth::Finite(s) => s.occupation_from(&s.marginals(n), n),
            GroundTruth::Holder(h) => OccupationMeasure::uniform(vec![1; h.d1 + h.d2]),
        }
    }
}

impl TransitionDensity for GroundTruth {
    fn layout(&self) -> Layout {
        match self {
            GroundTruth::Finite(s) => TransitionDensity::layout(s),
            GroundTruth::Holder(h) => TransitionDensity::layout(h),
        }
    }

    fn density(&self, x: &[f64], a: &[f64], y: &[f64]) -> f64 {
        match self {
            GroundTruth::Finite(s) => s.density(x, a, y),
            GroundTruth::Holder(h) => h.value(x, a, y),
        }
    }

    fn block_integrals(
        &self,
        x: &[f64],
        a: &[f64],
        block: &AxisBox,
        resolution: usize,
    ) -> BlockIntegrals {
        match self {
            GroundTruth::Finite(s) => s.block_integrals(x, a, block, resolution),
            GroundTruth::Holder(h) => h.block_integrals(x, a, block, resolution),
        }
    }
}

/// A trajectory with its truth and, for finite chains, the exact augmented
/// laws at every time.
#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub trajectory: Trajectory,
    pub truth: GroundTruth,
    pub marginals: Option<Vec<Vec<f64>>>,
    pub seed: u64,
}

pub fn simulate_finite_cmc(spec: &FiniteCMCSpec, n: usize, seed: u64) -> Result<SimulationOutput> {
    spec.validate()?;
    let mut rng = rng_for(seed, 0);
    let trajectory = spec.sample_trajectory(n, &mut rng)?;
    Ok(SimulationOutput {
        trajectory,
        truth: GroundTruth::Finite(spec.clone()),
        marginals: Some(spec.marginals(n)),
        seed,
    })
}

fn default_states() -> usize {
    4
}

fn default_controls() -> usize {
    2
}

/// Named chain families, as they appear in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    FullyConnected {
        eps0: f64,
        #[serde(default = "default_states")]
        n_states: usize,
        #[serde(default = "default_controls")]
        n_controls: usize,
        /// Seed of the random kernel, separate from the trajectory seed.
        #[serde(default)]
        kernel_seed: u64,
    },
    Inid,
    Assouad {
        d1: usize,
        d2: usize,
        iota: f64,
        eps: f64,
        /// Defaults to all ones.
        #[serde(default)]
        xi: Option<Vec<u8>>,
    },
    Minorized,
    Comparison {
        i0: usize,
    },
    Holder {
        #[serde(default = "one")]
        d1: usize,
        #[serde(default = "one")]
        d2: usize,
        amplitude: f64,
        frequency: f64,
    },
    Step,
    TinyCell,
    Uniform {
        #[serde(default = "default_states")]
        n_states: usize,
        #[serde(default = "default_controls")]
        n_controls: usize,
    },
    Flip,
    Finite {
        spec: FiniteCMCSpec,
    },
}

fn one() -> usize {
    1
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::FullyConnected { .. } => "fully-connected",
            Family::Inid => "inid",
            Family::Assouad { .. } => "assouad",
            Family::Minorized => "minorized",
            Family::Comparison { .. } => "comparison",
            Family::Holder { .. } => "holder",
            Family::Step => "step",
            Family::TinyCell => "tiny-cell",
            Family::Uniform { .. } => "uniform",
            Family::Flip => "flip",
            Family::Finite { .. } => "finite",
        }
    }

    pub fn build(&self) -> Result<GroundTruth> {
        let spec = match self {
            Family::FullyConnected {
                eps0,
                n_states,
                n_controls,
                kernel_seed,
            } => fully_connected(
                *eps0,
                *n_states,
                *n_controls,
                &mut rng_for(*kernel_seed, u64::MAX),
            )?,
            Family::Inid => inid_counterexample(),
            Family::Assouad {
                d1,
                d2,
                iota,
                eps,
                xi,
            } => {
                let xi = xi.clone().unwrap_or_else(|| vec![1; d1 * d2 / 3]);
                assouad_chain(&AssouadParams {
                    d1: *d1,
                    d2: *d2,
                    iota: *iota,
                    eps: *eps,
                    xi,
                })?
            }
            Family::Minorized => minorized_nonmixing(),
            Family::Comparison { i0 } => comparison_chain(*i0)?,
            Family::Holder {
                d1,
                d2,
                amplitude,
                frequency,
            } => {
                return Ok(GroundTruth::Holder(HolderFamily::new(
                    *d1, *d2, *amplitude, *frequency,
                )?))
            }
            Family::Step => step_truth(),
            Family::TinyCell => tiny_cell_truth(),
            Family::Uniform {
                n_states,
                n_controls,
            } => uniform_kernel(*n_states, *n_controls),
            Family::Flip => flip_kernel(),
            Family::Finite { spec } => spec.clone(),
        };
        spec.validate()?;
        Ok(GroundTruth::Finite(spec))
    }

    /// Simulate replication `stream` of length `n` keyed by `seed`.
    pub fn simulate(&self, n: usize, seed: u64, stream: u64) -> Result<SimulationOutput> {
        let truth = self.build()?;
        let mut rng = rng_for(seed, stream);
        let trajectory = truth.sample_trajectory(n, &mut rng)?;
        let marginals = truth.as_finite().map(|s| s.marginals(n));
        Ok(SimulationOutput {
            trajectory,
            truth,
            marginals,
            seed,
        })
    }
}
