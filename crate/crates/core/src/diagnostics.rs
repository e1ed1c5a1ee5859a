//! Recurrence and mixing diagnostics: return times, occupation measures,
//! weak-mixing coefficients, `ρ★`, remainder terms and the related
//! sample-size conditions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::AxisBox;
use crate::numeric::{mean_se, Neumaier};
use crate::occupation::OccupationMeasure;
use crate::simulators::FiniteCMCSpec;
use crate::trajectory::Trajectory;

/// Visits of a trajectory to a state-control box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnTimeRecord {
    pub set: AxisBox,
    /// Indices `i` in `1..=n` with `(X_i, a_i)` in the set.
    pub visits: Vec<usize>,
    /// The first gap is the first visit index, later ones are differences
    /// of consecutive visits.
    pub gaps: Vec<usize>,
    pub n_s: usize,
    pub n: usize,
}

pub fn return_times(traj: &Trajectory, s: &AxisBox) -> Result<ReturnTimeRecord> {
    let fdim = traj.layout().footprint_dim();
    if s.dim() != fdim {
        return Err(Error::InvalidBox(format!(
            "set has dimension {}, pairs have {fdim}",
            s.dim()
        )));
    }
    if s.volume() <= 0.0 {
        return Err(Error::InvalidBox("the target set is degenerate".into()));
    }
    let n = traj.n();
    let visits: Vec<usize> = (1..=n)
        .filter(|&i| s.contains_point(&traj.pair(i)))
        .collect();
    let mut gaps = Vec::with_capacity(visits.len());
    let mut last = 0;
    for &v in &visits {
        gaps.push(v - last);
        last = v;
    }
    Ok(ReturnTimeRecord {
        set: s.clone(),
        n_s: visits.len(),
        visits,
        gaps,
        n,
    })
}

/// Mean gap at one visit rank across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankStat {
    pub rank: usize,
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalT {
    pub value: f64,
    pub se: f64,
    /// Visit rank (1-based) where the maximum is attained.
    pub rank: usize,
    pub ranks: Vec<RankStat>,
    /// The maximum rests on a single observation, so its interval is
    /// unbounded.
    pub infinite_ci: bool,
}

/// Largest across-replication mean gap over the visit ranks observed in
/// at least half of the replications.
pub fn empirical_t(records: &[ReturnTimeRecord]) -> Result<EmpiricalT> {
    let reps = records.len();
    let max_rank = records.iter().map(|r| r.gaps.len()).max().unwrap_or(0);
    if max_rank == 0 {
        return Err(Error::SetNeverVisited(
            "no replication visits the set".into(),
        ));
    }
    let needed = reps.div_ceil(2).max(1);
    let mut ranks = Vec::new();
    for k in 0..max_rank {
        let g: Vec<f64> = records
            .iter()
            .filter_map(|r| r.gaps.get(k).map(|v| *v as f64))
            .collect();
        if g.len() < needed {
            break;
        }
        let (mean, se) = mean_se(&g);
        ranks.push(RankStat {
            rank: k + 1,
            mean,
            se,
            count: g.len(),
        });
    }
    let best = ranks
        .iter()
        .max_by(|a, b| a.mean.total_cmp(&b.mean))
        .cloned()
        .ok_or_else(|| {
            Error::SetNeverVisited("no visit rank is shared by enough replications".into())
        })?;
    Ok(EmpiricalT {
        value: best.mean,
        se: best.se,
        rank: best.rank,
        infinite_ci: best.count < 2,
        ranks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KacCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
    pub margin: f64,
}

/// Compare an occupation frequency with `1/T - 1/n`.
pub fn kac_check(nu_n: f64, t_value: f64, n: usize) -> KacCheck {
    let rhs = 1.0 / t_value - 1.0 / n as f64;
    let margin = nu_n - rhs;
    KacCheck {
        lhs: nu_n,
        rhs,
        satisfied: margin >= -1e-12,
        margin,
    }
}

/// Exact `ν_n(S)` from the augmented laws of a finite chain.
pub fn exact_nu_n(spec: &FiniteCMCSpec, marginals: &[Vec<f64>], s: &AxisBox, n: usize) -> f64 {
    let q = spec.cell_fractions(s);
    let mut acc = Neumaier::default();
    for p in &marginals[1..=n] {
        for (m, f) in p.iter().zip(&q) {
            if *f > 0.0 {
                acc.add(m * f);
            }
        }
    }
    acc.sum() / n as f64
}

/// Apply `g ↦ 1 + Q diag(1 - q) g` with the convention `0 · ∞ = 0`.
fn backward_step(q_mat: &[f64], q: &[f64], next: &[f64]) -> Vec<f64> {
    let z = q.len();
    (0..z)
        .map(|a| {
            let mut acc = 1.0;
            for b in 0..z {
                let w = q_mat[a * z + b] * (1.0 - q[b]);
                if w > 0.0 {
                    acc += w * next[b];
                }
            }
            acc
        })
        .collect()
}

/// Expected time to the next visit under a fixed step operator.
fn stationary_hitting(q_mat: &[f64], q: &[f64]) -> Vec<f64> {
    let z = q.len();
    // states from which the set is reachable
    let mut reach = vec![false; z];
    loop {
        let mut changed = false;
        for a in 0..z {
            if !reach[a] && (0..z).any(|b| q_mat[a * z + b] > 0.0 && (q[b] > 0.0 || reach[b])) {
                reach[a] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    // states with a positive chance to avoid the set forever
    let mut lost: Vec<bool> = reach.iter().map(|r| !r).collect();
    loop {
        let mut changed = false;
        for a in 0..z {
            if !lost[a] && (0..z).any(|b| lost[b] && q_mat[a * z + b] * (1.0 - q[b]) > 0.0) {
                lost[a] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let keep: Vec<usize> = (0..z).filter(|a| !lost[*a]).collect();
    let mut g = vec![f64::INFINITY; z];
    if keep.is_empty() {
        return g;
    }
    let k = keep.len();
    let mut m = DMatrix::<f64>::identity(k, k);
    for (i, &a) in keep.iter().enumerate() {
        for (j, &b) in keep.iter().enumerate() {
            m[(i, j)] -= q_mat[a * z + b] * (1.0 - q[b]);
        }
    }
    let sol = m
        .lu()
        .solve(&DVector::from_element(k, 1.0))
        .unwrap_or_else(|| DVector::from_element(k, f64::INFINITY));
    for (i, &a) in keep.iter().enumerate() {
        g[a] = sol[i];
    }
    g
}

/// Exact worst-case expected return time of a finite chain to `s`, over the
/// first hitting time and every visit that can occur at times `1..=n`.
/// Infinite when the set can be avoided forever.
pub fn exact_return_time(
    spec: &FiniteCMCSpec,
    marginals: &[Vec<f64>],
    s: &AxisBox,
    n: usize,
) -> f64 {
    let q = spec.cell_fractions(s);
    if q.iter().all(|v| *v == 0.0) {
        return f64::INFINITY;
    }
    let z = q.len();
    // g[t] for t = 0..=n
    let mut g: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    match spec.homogeneous_from() {
        Some(h0) => {
            let tail = stationary_hitting(&spec.step_matrix(h0), &q);
            let mut next = tail.clone();
            for t in (0..=n).rev() {
                g[t] = if t >= h0 { tail.clone() } else { Vec::new() };
            }
            for t in (0..h0).rev() {
                let cur = backward_step(&spec.step_matrix(t), &q, &next);
                if t <= n {
                    g[t] = cur.clone();
                }
                next = cur;
            }
        }
        None => {
            let horizon = 8 * n + 64;
            let mut next = vec![f64::INFINITY; z];
            for t in (0..horizon).rev() {
                let cur = backward_step(&spec.step_matrix(t), &q, &next);
                if t <= n {
                    g[t] = cur.clone();
                }
                next = cur;
            }
        }
    }
    let first: f64 = marginals[0]
        .iter()
        .zip(&g[0])
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, v)| p * v)
        .sum();
    let mut worst = first;
    for t in 1..=n {
        for a in 0..z {
            if marginals[t][a] > 0.0 && q[a] > 0.0 {
                worst = worst.max(g[t][a]);
            }
        }
    }
    worst
}

/// Kac check with exact marginals and the exact return time.
pub fn exact_kac(spec: &FiniteCMCSpec, marginals: &[Vec<f64>], s: &AxisBox, n: usize) -> KacCheck {
    kac_check(
        exact_nu_n(spec, marginals, s, n),
        exact_return_time(spec, marginals, s, n),
        n,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingBound {
    pub theta_bar: f64,
    pub analytic_bound: f64,
    /// The kernel is bounded below by `kappa` on the whole state space, so
    /// the analytic bound applies.
    pub applicable: bool,
}

/// Largest total-variation distance between rows of the product of step
/// operators from time `i` to time `j`, with the bound
/// `(1 - vol · kappa)^(j - i - 1)`.
///
/// `vol` is the volume of the set on which the kernel is bounded below;
/// applicability is checked for the whole state space.
pub fn weak_mixing_bound(
    spec: &FiniteCMCSpec,
    i: usize,
    j: usize,
    vol: f64,
    kappa: f64,
) -> Result<MixingBound> {
    if !spec.is_markov() {
        return Err(Error::NonMarkovControls);
    }
    if j <= i {
        return Err(Error::InvalidParameter(format!(
            "need j > i, got i = {i}, j = {j}"
        )));
    }
    let z = spec.augmented_len();
    let mut prod = DMatrix::<f64>::identity(z, z);
    for t in i..j {
        let q = DMatrix::from_row_slice(z, z, &spec.step_matrix(t));
        prod *= q;
    }
    let mut theta: f64 = 0.0;
    for a in 0..z {
        for b in a + 1..z {
            let tv = 0.5
                * (0..z)
                    .map(|c| (prod[(a, c)] - prod[(b, c)]).abs())
                    .sum::<f64>();
            theta = theta.max(tv);
        }
    }
    let min_density = spec.density.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(MixingBound {
        theta_bar: theta,
        analytic_bound: (1.0 - vol * kappa).powi((j - i - 1) as i32),
        applicable: kappa > 0.0 && min_density >= kappa,
    })
}

/// Mixing rate constant of a kernel bounded below by `kappa` on a set of
/// volume `vol`.
pub fn c_p_fully_connected(vol: f64, kappa: f64) -> f64 {
    -(1.0 - vol * kappa).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoStar {
    pub value: f64,
    /// `sup_i P((X_i, a_i) ∈ S)` alone.
    pub first_term: f64,
    /// Times `0..=horizon` were searched.
    pub horizon: usize,
}

/// `ρ★(S)` of a finite chain from exact laws up to `horizon`.
pub fn rho_star_exact(
    spec: &FiniteCMCSpec,
    marginals: &[Vec<f64>],
    s: &AxisBox,
    horizon: usize,
) -> RhoStar {
    let q = spec.cell_fractions(s);
    let hz = horizon.min(marginals.len() - 1);
    let inside = |v: &[f64]| -> f64 { v.iter().zip(&q).map(|(a, b)| a * b).sum() };
    let mut first: f64 = 0.0;
    let mut joint: f64 = 0.0;
    for i in 0..=hz {
        first = first.max(inside(&marginals[i]));
        let mut v: Vec<f64> = marginals[i].iter().zip(&q).map(|(a, b)| a * b).collect();
        for t in i..hz {
            v = spec.step(&v, t);
            joint = joint.max(inside(&v));
        }
    }
    RhoStar {
        value: first.max(joint.sqrt()),
        first_term: first,
        horizon: hz,
    }
}

/// `ρ★(S)` estimated from independent replications up to `horizon`.
pub fn rho_star_empirical(trajs: &[Trajectory], s: &AxisBox, horizon: usize) -> RhoStar {
    let hz = trajs.iter().map(|t| t.n()).min().unwrap_or(0).min(horizon);
    let r = trajs.len() as f64;
    let hits: Vec<Vec<bool>> = trajs
        .iter()
        .map(|t| (0..=hz).map(|i| s.contains_point(&t.pair(i))).collect())
        .collect();
    let mut first: f64 = 0.0;
    let mut joint: f64 = 0.0;
    for i in 0..=hz {
        first = first.max(hits.iter().filter(|h| h[i]).count() as f64 / r);
        for j in i + 1..=hz {
            joint = joint.max(hits.iter().filter(|h| h[i] && h[j]).count() as f64 / r);
        }
    }
    RhoStar {
        value: first.max(joint.sqrt()),
        first_term: first,
        horizon: hz,
    }
}

/// Re-express a cell-uniform measure on a dyadic grid of the given depth.
pub fn regrid(occ: &OccupationMeasure, depth: usize) -> OccupationMeasure {
    let b = 1usize << depth;
    let bins = vec![b; occ.dim()];
    let proto = OccupationMeasure::new(
        bins.clone(),
        vec![0.0; b.pow(occ.dim() as u32)],
        occ.label.clone(),
    );
    let masses = (0..proto.masses.len())
        .map(|i| occ.mass_of_box(&proto.cell_box(i)))
        .collect();
    let mut out = OccupationMeasure::new(bins, masses, occ.label.clone());
    out.horizon = occ.horizon;
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationReport {
    pub nu_n: OccupationMeasure,
    /// Tail average standing in for the limit.
    pub nu: OccupationMeasure,
    /// The tail average covers times `horizon + 1..=2 · horizon`.
    pub horizon: usize,
    /// Distance between the tail averages over `(H, 2H]` and `(2H, 4H]`.
    pub tail_drift: f64,
    pub converged: bool,
    pub r_n: f64,
}

fn average_pair_laws(
    spec: &FiniteCMCSpec,
    laws: &[Vec<f64>],
    label: &str,
    horizon: usize,
) -> OccupationMeasure {
    let mut acc = vec![Neumaier::default(); spec.n_states * spec.n_controls];
    for p in laws {
        for (a, v) in acc.iter_mut().zip(spec.pair_law(p)) {
            a.add(v);
        }
    }
    let masses = acc.iter().map(|a| a.sum() / laws.len() as f64).collect();
    let mut occ = OccupationMeasure::new(vec![spec.n_states, spec.n_controls], masses, label);
    occ.horizon = Some(horizon);
    occ
}

/// Exact `ν_n`, a tail-averaged `ν` and their distance `r_n` for a finite
/// chain, optionally on a dyadic grid of depth `grid`.
pub fn occupation_exact(
    spec: &FiniteCMCSpec,
    n: usize,
    tail: usize,
    grid: Option<usize>,
) -> OccupationReport {
    let h = tail.max(n);
    let laws = spec.marginals(4 * h);
    let mut nu_n = average_pair_laws(spec, &laws[1..=n], "nu_n", n);
    let mut nu = average_pair_laws(spec, &laws[h + 1..=2 * h], "nu", h);
    let mut late = average_pair_laws(spec, &laws[2 * h + 1..=4 * h], "nu late", 2 * h);
    if let Some(d) = grid {
        nu_n = regrid(&nu_n, d);
        nu = regrid(&nu, d);
        late = regrid(&late, d);
    }
    let drift = nu.tv_distance(&late);
    let r_n = nu_n.tv_distance(&nu);
    OccupationReport {
        nu_n,
        nu,
        horizon: h,
        tail_drift: drift,
        converged: drift < 1e-9,
        r_n,
    }
}

/// Empirical pair histograms on a dyadic grid, averaged over replications:
/// `ν̂_n` over times `1..=n` and `ν̂` over the times after `tail_from`.
pub fn occupation_empirical(
    trajs: &[Trajectory],
    depth: usize,
    tail_from: usize,
) -> Result<OccupationReport> {
    let first = trajs
        .first()
        .ok_or_else(|| Error::InvalidParameter("no replications".into()))?;
    let fdim = first.layout().footprint_dim();
    let b = 1usize << depth;
    let bins = vec![b; fdim];
    let k = b.pow(fdim as u32);
    let n = trajs.iter().map(|t| t.n()).min().unwrap_or(0);
    if tail_from >= n {
        return Err(Error::InvalidParameter(
            "the tail starts after the trajectories end".into(),
        ));
    }
    let index = |p: &[f64]| -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for v in p {
            idx += ((v * b as f64).floor() as usize).min(b - 1) * stride;
            stride *= b;
        }
        idx
    };
    let mut head = vec![0.0; k];
    let mut tail = vec![0.0; k];
    let mut late = vec![0.0; k];
    let mid = tail_from + (n - tail_from) / 2;
    for t in trajs {
        for i in 1..=n {
            let c = index(&t.pair(i));
            head[c] += 1.0;
            if i > tail_from {
                tail[c] += 1.0;
                if i > mid {
                    late[c] += 1.0;
                }
            }
        }
    }
    let norm = |v: Vec<f64>| -> Vec<f64> {
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s.max(1.0)).collect()
    };
    let mut nu_n = OccupationMeasure::new(bins.clone(), norm(head), "nu_n");
    nu_n.horizon = Some(n);
    let mut nu = OccupationMeasure::new(bins.clone(), norm(tail), "nu");
    nu.horizon = Some(tail_from);
    let late = OccupationMeasure::new(bins, norm(late), "nu late");
    let drift = nu.tv_distance(&late);
    let r_n = nu_n.tv_distance(&nu);
    let tol = 3.0 * (k as f64 / (trajs.len() * (n - tail_from).max(1)) as f64).sqrt();
    Ok(OccupationReport {
        nu_n,
        nu,
        horizon: tail_from,
        tail_drift: drift,
        converged: drift < tol,
        r_n,
    })
}

/// Two subsequences of a sequence and whether their limits look distinct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonConvergence {
    pub limit_a: f64,
    pub limit_b: f64,
    pub spread_a: f64,
    pub spread_b: f64,
    pub fires: bool,
}

/// Compare the last terms of two subsequences. The detector fires when the
/// gap between them exceeds the recent movement of either sequence plus
/// `tol`.
pub fn detect_non_convergence(a: &[f64], b: &[f64], tol: f64) -> NonConvergence {
    let last = |v: &[f64]| v.last().copied().unwrap_or(f64::NAN);
    let spread = |v: &[f64]| {
        if v.len() >= 2 {
            (v[v.len() - 1] - v[v.len() - 2]).abs()
        } else {
            f64::INFINITY
        }
    };
    let (la, lb, sa, sb) = (last(a), last(b), spread(a), spread(b));
    NonConvergence {
        limit_a: la,
        limit_b: lb,
        spread_a: sa,
        spread_b: sb,
        fires: (la - lb).abs() > tol + sa + sb,
    }
}

/// Which remainder expression to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    /// Bound for the loss averaged over the limiting occupation measure.
    LimitMeasure,
    /// Bound for the loss averaged over the finite-horizon measure.
    FiniteHorizon,
    /// Stationary Markov chains with occupation density bounded below.
    Stationary,
}

/// Per-cell quantities entering the remainder.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SetTerms {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderInputs {
    pub flavor: Flavor,
    pub l: usize,
    pub n: usize,
    pub d1: usize,
    pub d2: usize,
    pub c_p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_n: Option<f64>,
    /// Lower bound of the occupation density.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k0: Option<f64>,
    /// Constant in the upper sample-size condition; 1 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub big_c: Option<f64>,
    #[serde(default)]
    pub sets: Vec<SetTerms>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemainderReport {
    pub value: f64,
    /// Index of the cell attaining the maximum, when cells were supplied.
    pub worst_set: Option<usize>,
    /// `n / (log n)^3 ≥ C · C_p⁻¹ T★² (C_Δ ρ★ + 1/T★) log T̃★`.
    pub upper_condition: Option<bool>,
    /// `n ≤ C_p⁻¹ T★² (C_Δ ρ★ + 1/T★)`.
    pub lower_condition: Option<bool>,
}

fn need<T: Copy>(v: Option<T>, flavor: Flavor, field: &str) -> Result<T> {
    v.ok_or_else(|| Error::MissingField {
        flavor: serde_json::to_string(&flavor)
            .unwrap_or_default()
            .trim_matches('"')
            .to_string(),
        field: field.into(),
    })
}

impl RemainderInputs {
    fn validate(&self) -> Result<()> {
        let mut vals = vec![self.c_p];
        vals.extend(self.c_delta);
        vals.extend(self.r_n);
        vals.extend(self.k0);
        vals.extend(self.big_c);
        for s in &self.sets {
            vals.extend(s.nu);
            vals.extend(s.rho_star);
            vals.extend(s.t);
        }
        if vals.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "remainder inputs must be nonnegative".into(),
            ));
        }
        if self.n < 2 {
            return Err(Error::InvalidParameter("the remainder needs n >= 2".into()));
        }
        Ok(())
    }

    fn log_cells(&self) -> f64 {
        (self.l * (self.d1 + self.d2)) as f64 * std::f64::consts::LN_2
    }
}

/// Evaluate the remainder of the chosen flavor together with the two
/// sample-size conditions, when `T` and `ρ★` are available.
pub fn remainder_term(inp: &RemainderInputs) -> Result<RemainderReport> {
    inp.validate()?;
    let f = inp.flavor;
    let n = inp.n as f64;
    let ln = n.ln();
    let cells = inp.log_cells().exp();
    let (value, worst) = match f {
        Flavor::LimitMeasure => {
            let c_delta = need(inp.c_delta, f, "c_delta")?;
            let r_n = need(inp.r_n, f, "r_n")?;
            if inp.sets.is_empty() {
                return Err(need::<f64>(None, f, "sets").unwrap_err());
            }
            let mut best = (f64::NEG_INFINITY, 0);
            for (k, s) in inp.sets.iter().enumerate() {
                let nu = need(s.nu, f, "nu")?;
                let rho = need(s.rho_star, f, "rho_star")?;
                let num = inp.c_p * n * nu * nu - 2.0 * n * inp.c_p * r_n;
                let den = 4.0 * c_delta * rho + 4.0 / n + 2.0 * nu * ln * ln + 2.0 * r_n * ln * ln;
                let e = -num / den;
                if e > best.0 {
                    best = (e, k);
                }
            }
            (cells * best.0.exp() + r_n, Some(best.1))
        }
        Flavor::FiniteHorizon => {
            let c_delta = need(inp.c_delta, f, "c_delta")?;
            if inp.sets.is_empty() {
                return Err(need::<f64>(None, f, "sets").unwrap_err());
            }
            let mut best = (f64::NEG_INFINITY, 0);
            for (k, s) in inp.sets.iter().enumerate() {
                let t = need(s.t, f, "t")?;
                let rho = need(s.rho_star, f, "rho_star")?;
                let e = -(inp.c_p * n / (4.0 * t * t))
                    / (4.0 * c_delta * rho + 4.0 / n + ln * ln / (2.0 * t));
                if e > best.0 {
                    best = (e, k);
                }
            }
            let s = inp.sets[best.1];
            let (t, rho) = (s.t.unwrap(), s.rho_star.unwrap());
            let e = -(inp.c_p * n / (4.0 * t * t))
                / (4.0 * c_delta * rho + (4.0 + ln * ln) / (2.0 * t));
            (cells * e.exp(), Some(best.1))
        }
        Flavor::Stationary => {
            let c_delta = need(inp.c_delta, f, "c_delta")?;
            let k0 = need(inp.k0, f, "k0")?;
            let e = -inp.c_p * k0 * n / (c_delta * cells * 8.0 * ln * ln);
            (cells * e.exp(), None)
        }
    };
    let (mut upper, mut lower) = (None, None);
    if let (Some(w), Some(c_delta)) = (worst, inp.c_delta) {
        let s = inp.sets[w];
        if let (Some(t), Some(rho)) = (s.t, s.rho_star) {
            let t_max = inp.sets.iter().filter_map(|s| s.t).fold(t, f64::max);
            let core = t * t * (c_delta * rho + 1.0 / t) / inp.c_p;
            upper = Some(n / ln.powi(3) >= inp.big_c.unwrap_or(1.0) * core * t_max.ln());
            lower = Some(n <= core);
        }
    }
    Ok(RemainderReport {
        value,
        worst_set: worst,
        upper_condition: upper,
        lower_condition: lower,
    })
}

/// Probability estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub p: f64,
    pub se: f64,
}

impl Proportion {
    pub fn from_counts(hits: usize, total: usize) -> Self {
        let p = hits as f64 / total as f64;
        Proportion {
            p,
            se: (p * (1.0 - p) / total as f64).sqrt(),
        }
    }
}

/// Fraction of replications in which at least one of the sets is never
/// visited at times `1..=n`.
pub fn uncovered_probability(trajs: &[Trajectory], sets: &[AxisBox]) -> Proportion {
    let hits = trajs
        .iter()
        .filter(|t| {
            sets.iter()
                .any(|s| !(1..=t.n()).any(|i| s.contains_point(&t.pair(i))))
        })
        .count();
    Proportion::from_counts(hits, trajs.len())
}

/// Dependence between the first control and later ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlDependence {
    /// `P(a_p ≥ 1/2, a_0 ≥ 1/2)`.
    pub joint: Proportion,
    /// `P(a_p ≥ 1/2)`.
    pub marginal: Proportion,
    /// `P(a_0 ≥ 1/2) · P(a_p ≥ 1/2)`.
    pub product: f64,
    /// Covariance of the two single-control events.
    pub single_gap: f64,
    /// `|P(A ∩ B) - P(A) P(B)|`, with `A = {a_0 ≥ 1/2}` and `B` the event that
    /// at least a `threshold` share of `a_p, ..., a_{p+k-1}` lies in the upper
    /// half. A lower bound on the strong-mixing coefficient.
    pub history_gap: f64,
}

/// Estimate [`ControlDependence`] from independent replications with one
/// control coordinate.
pub fn control_dependence(
    trajs: &[Trajectory],
    p: usize,
    k: usize,
    threshold: f64,
) -> Result<ControlDependence> {
    if trajs.iter().any(|t| t.n() < p + k - 1) {
        return Err(Error::InvalidParameter(
            "replications are too short for the lag window".into(),
        ));
    }
    let up = |t: &Trajectory, i: usize| t.control(i)[0] >= 0.5;
    let r = trajs.len();
    let (mut a, mut joint, mut marg, mut b, mut ab) = (0, 0, 0, 0, 0);
    for t in trajs {
        let ea = up(t, 0);
        let ep = up(t, p);
        let share = (p..p + k).filter(|&i| up(t, i)).count() as f64 / k as f64;
        let eb = share >= threshold;
        a += ea as usize;
        marg += ep as usize;
        joint += (ea && ep) as usize;
        b += eb as usize;
        ab += (ea && eb) as usize;
    }
    let rf = r as f64;
    let (pa, pm, pb) = (a as f64 / rf, marg as f64 / rf, b as f64 / rf);
    let joint = Proportion::from_counts(joint, r);
    Ok(ControlDependence {
        joint,
        marginal: Proportion::from_counts(marg, r),
        product: pa * pm,
        single_gap: joint.p - pa * pm,
        history_gap: (ab as f64 / rf - pa * pb).abs(),
    })
}

/// Return-time bounds for a chain minorized with constant `eps1` on
/// controls, kernel bounded below by `eps0`, for a set of volume `vol`:
/// the geometric bound `1/p` and the literal expression `p/(1-p) + 1`.
pub fn minorized_return_bounds(eps0: f64, eps1: f64, vol: f64) -> (f64, f64) {
    let p = eps0 * eps1 * vol;
    (1.0 / p, p / (1.0 - p) + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulators::*;

    fn unit_box(lo: [f64; 2], hi: [f64; 2]) -> AxisBox {
        AxisBox::new(lo.to_vec(), hi.to_vec()).unwrap()
    }

    #[test]
    fn hand_traced_gaps() {
        let xs = vec![0.1, 0.6, 0.1, 0.1, 0.6, 0.6, 0.1, 0.6, 0.1, 0.1, 0.6];
        let t = Trajectory::from_unit(1, 1, xs, vec![0.2; 11]).unwrap();
        let r = return_times(&t, &unit_box([0.5, 0.0], [1.0, 1.0])).unwrap();
        assert_eq!(r.visits, vec![1, 4, 5, 7, 10]);
        assert_eq!(r.gaps, vec![1, 3, 1, 2, 3]);
        let none = return_times(&t, &unit_box([0.5, 0.5], [1.0, 1.0])).unwrap();
        assert_eq!(none.n_s, 0);
        assert!(empirical_t(&[none]).is_err());
    }

    #[test]
    fn flip_kac_and_t() {
        let spec = flip_kernel();
        let n = 100;
        let m = spec.marginals(n);
        let s = unit_box([0.0, 0.0], [0.5, 1.0]);
        assert_eq!(exact_return_time(&spec, &m, &s, n), 2.0);
        let k = exact_kac(&spec, &m, &s, n);
        assert_eq!((k.lhs, k.rhs, k.satisfied), (0.5, 0.49, true));
        let t = simulate_finite_cmc(&spec, n, 1).unwrap().trajectory;
        let rec = return_times(&t, &s).unwrap();
        assert!(rec.gaps.iter().all(|g| *g == 2));
        let et = empirical_t(&[rec]).unwrap();
        assert_eq!(et.value, 2.0);
        assert!(et.infinite_ci);
    }

    #[test]
    fn geometric_return_time() {
        let spec = uniform_kernel(2, 2);
        let s = unit_box([0.0, 0.0], [0.5, 0.5]);
        let m = spec.marginals(10);
        assert!((exact_return_time(&spec, &m, &s, 10) - 4.0).abs() < 1e-12);
        let recs: Vec<_> = (0..2000)
            .map(|r| {
                return_times(
                    &Family::Uniform {
                        n_states: 2,
                        n_controls: 2,
                    }
                    .simulate(12, 5, r)
                    .unwrap()
                    .trajectory,
                    &s,
                )
                .unwrap()
            })
            .collect();
        let t = empirical_t(&recs).unwrap();
        assert!((t.value - 4.0).abs() < 3.0 * t.se + 0.25, "{t:?}");
    }

    #[test]
    fn unreachable_set_gives_infinite_t() {
        let spec = step_truth();
        let m = spec.marginals(10);
        let s = unit_box([0.0, 0.0], [1.0, 1.0]);
        assert_eq!(exact_return_time(&spec, &m, &s, 10), 1.0);
        let k = kac_check(0.0, f64::INFINITY, 10);
        assert!(k.satisfied && k.rhs < 0.0);
    }

    #[test]
    fn mixing_on_fully_connected() {
        let spec = fully_connected(0.5, 4, 2, &mut rng_for(2, 0)).unwrap();
        let mut prev = f64::INFINITY;
        for j in 1..=6 {
            let b = weak_mixing_bound(&spec, 0, j, 1.0, 0.5).unwrap();
            assert!(b.applicable && b.theta_bar <= b.analytic_bound + 1e-12);
            assert!(b.theta_bar <= prev + 1e-12);
            prev = b.theta_bar;
        }
        let flip = weak_mixing_bound(&flip_kernel(), 0, 3, 1.0, 0.5).unwrap();
        assert!(!flip.applicable && (flip.theta_bar - 1.0).abs() < 1e-12);
        assert!(matches!(
            weak_mixing_bound(&minorized_nonmixing(), 0, 2, 1.0, 0.5),
            Err(Error::NonMarkovControls)
        ));
    }

    #[test]
    fn rho_star_of_independent_pairs() {
        let spec = uniform_kernel(2, 2);
        let m = spec.marginals(20);
        let r = rho_star_exact(&spec, &m, &unit_box([0.0, 0.0], [0.5, 0.5]), 20);
        assert!((r.value - 0.25).abs() < 1e-14);
        assert!(r.value >= r.first_term);
    }

    #[test]
    fn stationary_chain_has_zero_r_n() {
        let spec = uniform_kernel(3, 2);
        let rep = occupation_exact(&spec, 50, 50, None);
        assert!(rep.r_n < 1e-12 && rep.converged);
    }

    #[test]
    fn comparison_r_n_scales() {
        for i0 in [4, 8] {
            let ratios: Vec<f64> = [100, 400, 1600]
                .iter()
                .map(|&n| {
                    occupation_exact(&comparison_chain(i0).unwrap(), n, n, None).r_n * n as f64
                        / i0 as f64
                })
                .collect();
            for r in &ratios {
                assert!(*r > 0.1 && *r < 2.0, "{ratios:?}");
            }
        }
        assert_eq!(
            occupation_exact(&comparison_chain(1).unwrap(), 100, 100, None).r_n,
            0.0
        );
    }

    #[test]
    fn inid_does_not_converge() {
        let rep = occupation_exact(&inid_counterexample(), 64, 64, None);
        assert!(!rep.converged);
        let a: Vec<f64> = (2..=9)
            .map(|j| inid_count_11(1 << (2 * j)) as f64 / (1 << (2 * j)) as f64)
            .collect();
        let b: Vec<f64> = (2..=9)
            .map(|j| {
                let n = 3 << (2 * j - 1);
                inid_count_11(n) as f64 / n as f64
            })
            .collect();
        let d = detect_non_convergence(&a, &b, 0.01);
        assert!(d.fires, "{d:?}");
    }

    fn finite_horizon(n: usize, t: f64) -> RemainderInputs {
        RemainderInputs {
            flavor: Flavor::FiniteHorizon,
            l: 1,
            n,
            d1: 1,
            d2: 1,
            c_p: 1.0,
            c_delta: Some(1.0),
            r_n: None,
            k0: None,
            big_c: None,
            sets: vec![SetTerms {
                nu: None,
                rho_star: Some(0.1),
                t: Some(t),
            }],
        }
    }

    #[test]
    fn finite_horizon_value() {
        let v = remainder_term(&finite_horizon(10_000, 4.0)).unwrap().value;
        let n: f64 = 1e4;
        let lg = n.ln();
        let inner = (n / 64.0) / (0.4 + (4.0 + lg * lg) / 8.0);
        assert!((v - 4.0 * (-inner).exp()).abs() <= 1e-15 * v.abs().max(1e-300));
    }

    #[test]
    fn limit_measure_without_drift() {
        let inp = RemainderInputs {
            flavor: Flavor::LimitMeasure,
            r_n: Some(0.0),
            sets: vec![SetTerms {
                nu: Some(0.25),
                rho_star: Some(0.25),
                t: None,
            }],
            ..finite_horizon(1000, 1.0)
        };
        let v = remainder_term(&inp).unwrap().value;
        let n: f64 = 1000.0;
        let e = -(n * 0.0625) / (1.0 + 4.0 / n + 0.5 * n.ln().powi(2));
        assert!((v - 4.0 * e.exp()).abs() < 1e-15);
        let missing = RemainderInputs { r_n: None, ..inp };
        assert!(matches!(
            remainder_term(&missing),
            Err(Error::MissingField { .. })
        ));
    }

    #[test]
    fn stationary_formula() {
        let inp = RemainderInputs {
            flavor: Flavor::Stationary,
            k0: Some(0.5),
            c_p: 0.7,
            ..finite_horizon(5000, 2.0)
        };
        let v = remainder_term(&inp).unwrap().value;
        let n: f64 = 5000.0;
        let e = (-0.7 * 0.5 * n / (1.0 * 4.0 * 8.0 * n.ln().powi(2))).exp();
        assert!((v - 4.0 * e).abs() < 1e-15);
    }
}
