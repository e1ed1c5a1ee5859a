//! Monte-Carlo experiments: risk tables, the projection-risk check and the
//! convergence-rate regression.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::occupation_exact;
use crate::error::{Error, Result};
use crate::geometry::DyadicPartition;
use crate::histogram::fit;
use crate::losses::{
    best_approx_hellinger, empirical_hellinger_to_truth, hellinger_sq_to_truth, penalty,
    DEFAULT_PENALTY_L,
};
use crate::numeric::{fit_line, mean_se};
use crate::occupation::OccupationMeasure;
use crate::selector::{select_partition, SelectorConfig};
use crate::simulators::{Family, GroundTruth};
use crate::stats::SparseCountTree;

/// Normal quantile used for every reported interval.
pub const Z95: f64 = 1.96;

fn default_l() -> f64 {
    DEFAULT_PENALTY_L
}

fn default_resolution() -> usize {
    8
}

fn default_tail() -> usize {
    4096
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentKind {
    Risk,
    /// Fixed partitions, given as leaf lists.
    Oracle {
        partitions: Vec<DyadicPartition>,
    },
    /// Regression of the mean risk on `log n / n`, with target exponent
    /// `sigma / (d + sigma)`.
    Rate {
        sigma: f64,
        d: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub family: Family,
    pub experiment: ExperimentKind,
    pub n_grid: Vec<usize>,
    pub depth: usize,
    #[serde(default = "default_l")]
    pub penalty_l: f64,
    pub replications: usize,
    pub seed: u64,
    /// Quadrature points per axis for losses against the truth.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// Horizon of the tail average standing in for the limit measure.
    #[serde(default = "default_tail")]
    pub tail_horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidParameter(
                "replication count must be at least 1".into(),
            ));
        }
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "n grid must be nonempty and strictly ascending".into(),
            ));
        }
        if self.n_grid[0] < 3 {
            return Err(Error::InvalidParameter("every n must be at least 3".into()));
        }
        if !(self.penalty_l > 0.0) {
            return Err(Error::InvalidParameter("L must be positive".into()));
        }
        if let ExperimentKind::Oracle { partitions } = &self.experiment {
            if partitions.is_empty() {
                return Err(Error::InvalidParameter(
                    "the oracle check needs at least one partition".into(),
                ));
            }
        }
        self.family.build()?;
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }
}

/// Stream of replication `rep` at sample size `n`.
pub fn stream_id(n: usize, rep: usize) -> u64 {
    ((n as u64) << 24) | rep as u64
}

/// One line of a risk table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub n: usize,
    pub replication: usize,
    pub seed: u64,
    pub empirical_hellinger_sq: f64,
    pub hellinger_sq_nu: f64,
    pub hellinger_sq_nu_n: f64,
    pub m_hat_size: usize,
    pub gamma_hat: f64,
    pub oracle_term: f64,
    pub runtime_ms: f64,
    /// Empty unless a stage failed, in which case the numbers are NaN.
    pub error: String,
}

/// Column names of [`RiskRow`] in CSV order.
pub const RISK_HEADER: [&str; 11] = [
    "n",
    "replication",
    "seed",
    "empirical_hellinger_sq",
    "hellinger_sq_nu",
    "hellinger_sq_nu_n",
    "m_hat_size",
    "gamma_hat",
    "oracle_term",
    "runtime_ms",
    "error",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskTable {
    pub rows: Vec<RiskRow>,
}

/// Mean of a column with its interval half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub half_width: f64,
}

impl MeanCi {
    pub fn of(xs: &[f64]) -> Self {
        let (mean, se) = mean_se(xs);
        MeanCi {
            mean,
            half_width: Z95 * se,
        }
    }
}

impl RiskTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut cw = csv::Writer::from_writer(w);
        for r in &self.rows {
            cw.serialize(r)?;
        }
        if self.rows.is_empty() {
            cw.write_record(RISK_HEADER)?;
        }
        cw.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let rows = rd
            .deserialize()
            .collect::<std::result::Result<Vec<RiskRow>, _>>()?;
        Ok(RiskTable { rows })
    }

    /// Mean empirical risk per `n`, in grid order.
    pub fn summary(&self) -> Vec<(usize, MeanCi)> {
        let mut ns: Vec<usize> = self.rows.iter().map(|r| r.n).collect();
        ns.dedup();
        ns.iter()
            .map(|&n| {
                let v: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.n == n && r.error.is_empty())
                    .map(|r| r.empirical_hellinger_sq)
                    .collect();
                (n, MeanCi::of(&v))
            })
            .collect()
    }
}

/// The candidates of the oracle term: every uniform partition up to the
/// searched depth and every coarsening of the selected partition.
pub fn oracle_candidates(m_hat: &DyadicPartition, depth: usize) -> Result<Vec<DyadicPartition>> {
    let dim = m_hat.dim();
    let mut out = Vec::new();
    for d in 0..=depth {
        out.push(DyadicPartition::uniform(dim, d)?);
    }
    for d in 0..=m_hat.max_depth() {
        let c = m_hat.coarsen(d);
        if !out.contains(&c) {
            out.push(c);
        }
    }
    Ok(out)
}

/// `min` over `candidates` of `H²(s, V_m) + pen(m)`.
pub fn oracle_term(
    truth: &GroundTruth,
    candidates: &[DyadicPartition],
    traj: &crate::trajectory::Trajectory,
    penalty_l: f64,
    resolution: usize,
) -> Result<f64> {
    let n = traj.n();
    let mut best = f64::INFINITY;
    for m in candidates {
        let v = best_approx_hellinger(truth, m, traj, resolution)? + penalty(m.len(), n, penalty_l);
        best = best.min(v);
    }
    Ok(best)
}

struct Reference {
    nu: OccupationMeasure,
    nu_n: Vec<OccupationMeasure>,
}

fn reference_measures(cfg: &ExperimentConfig, truth: &GroundTruth) -> Reference {
    match truth {
        GroundTruth::Finite(spec) => {
            let tail = cfg.tail_horizon.max(*cfg.n_grid.last().unwrap());
            let nu = occupation_exact(spec, 1, tail, None).nu;
            let nu_n = cfg
                .n_grid
                .iter()
                .map(|&n| spec.occupation_from(&spec.marginals(n), n))
                .collect();
            Reference { nu, nu_n }
        }
        GroundTruth::Holder(_) => {
            let u = truth.occupation(1);
            Reference {
                nu: u.clone(),
                nu_n: vec![u; cfg.n_grid.len()],
            }
        }
    }
}

fn risk_row(
    cfg: &ExperimentConfig,
    truth: &GroundTruth,
    refs: &Reference,
    k: usize,
    rep: usize,
) -> Result<RiskRow> {
    let n = cfg.n_grid[k];
    let start = Instant::now();
    let mut rng = crate::simulators::rng_for(cfg.seed, stream_id(n, rep));
    let traj = truth.sample_trajectory(n, &mut rng)?;
    let sel_cfg = SelectorConfig::new(cfg.depth, cfg.penalty_l);
    let tree = SparseCountTree::build(&traj, sel_cfg.effective_depth(n))?;
    let sel = select_partition(&tree, &sel_cfg)?;
    let res = cfg.resolution;
    let emp = empirical_hellinger_to_truth(truth, &sel.kernel, &traj, res);
    let h_nu = hellinger_sq_to_truth(truth, &sel.kernel, &refs.nu, res)?;
    let h_nu_n = hellinger_sq_to_truth(truth, &sel.kernel, &refs.nu_n[k], res)?;
    let candidates = oracle_candidates(&sel.partition, sel.effective_depth)?;
    let oracle = oracle_term(truth, &candidates, &traj, cfg.penalty_l, res)?;
    Ok(RiskRow {
        n,
        replication: rep,
        seed: cfg.seed,
        empirical_hellinger_sq: emp,
        hellinger_sq_nu: h_nu,
        hellinger_sq_nu_n: h_nu_n,
        m_hat_size: sel.partition.len(),
        gamma_hat: sel.gamma,
        oracle_term: oracle,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
        error: String::new(),
    })
}

/// Simulate, select and score every `(n, replication)` of the grid.
pub fn run_risk_experiment(cfg: &ExperimentConfig) -> Result<RiskTable> {
    cfg.validate()?;
    let truth = cfg.family.build()?;
    let refs = reference_measures(cfg, &truth);
    let mut rows = Vec::new();
    for (k, &n) in cfg.n_grid.iter().enumerate() {
        let part: Vec<RiskRow> = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| {
                risk_row(cfg, &truth, &refs, k, rep).unwrap_or_else(|e| RiskRow {
                    n,
                    replication: rep,
                    seed: cfg.seed,
                    empirical_hellinger_sq: f64::NAN,
                    hellinger_sq_nu: f64::NAN,
                    hellinger_sq_nu_n: f64::NAN,
                    m_hat_size: 0,
                    gamma_hat: f64::NAN,
                    oracle_term: f64::NAN,
                    runtime_ms: f64::NAN,
                    error: e.to_string(),
                })
            })
            .collect();
        rows.extend(part);
    }
    Ok(RiskTable { rows })
}

/// Both sides of the projection-risk inequality for one partition and size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleLine {
    pub n: usize,
    pub cells: usize,
    /// `E[H²(s, ŝ_m)]`.
    pub lhs: MeanCi,
    /// `E[H²(s, V_m)]`.
    pub bias: MeanCi,
    pub penalty: f64,
    /// Mean of `H²(s, ŝ_m) − 2 H²(s, V_m)` over replications.
    pub difference: MeanCi,
    /// `difference ≤ penalty + 2 · half-width`.
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub family: String,
    pub lines: Vec<OracleLine>,
    pub pass: bool,
}

/// Check `E[H²(s, ŝ_m)] ≤ 2 E[H²(s, V_m)] + (1.5 + ln n)|m|/n` for every
/// listed partition and every `n` of the grid.
pub fn run_oracle_check(cfg: &ExperimentConfig) -> Result<OracleReport> {
    cfg.validate()?;
    let ExperimentKind::Oracle { partitions } = &cfg.experiment else {
        return Err(Error::InvalidParameter(
            "the oracle check needs an explicit partition list".into(),
        ));
    };
    let truth = cfg.family.build()?;
    let mut lines = Vec::new();
    for (pi, m) in partitions.iter().enumerate() {
        for &n in &cfg.n_grid {
            let samples: Vec<(f64, f64)> = (0..cfg.replications)
                .into_par_iter()
                .map(|rep| -> Result<(f64, f64)> {
                    let stream = stream_id(n, rep) ^ ((pi as u64) << 48);
                    let mut rng = crate::simulators::rng_for(cfg.seed, stream);
                    let traj = truth.sample_trajectory(n, &mut rng)?;
                    let tree = SparseCountTree::build(&traj, m.max_depth())?;
                    let s_m = fit(&tree, m)?;
                    let lhs = empirical_hellinger_to_truth(&truth, &s_m, &traj, cfg.resolution);
                    let bias = best_approx_hellinger(&truth, m, &traj, cfg.resolution)?;
                    Ok((lhs, bias))
                })
                .collect::<Result<_>>()?;
            let lhs: Vec<f64> = samples.iter().map(|s| s.0).collect();
            let bias: Vec<f64> = samples.iter().map(|s| s.1).collect();
            let diff: Vec<f64> = samples.iter().map(|s| s.0 - 2.0 * s.1).collect();
            let pen = (1.5 + (n as f64).ln()) * m.len() as f64 / n as f64;
            let difference = MeanCi::of(&diff);
            let hw = if difference.half_width.is_finite() {
                difference.half_width
            } else {
                0.0
            };
            lines.push(OracleLine {
                n,
                cells: m.len(),
                lhs: MeanCi::of(&lhs),
                bias: MeanCi::of(&bias),
                penalty: pen,
                pass: difference.mean <= pen + 2.0 * hw,
                difference,
            });
        }
    }
    let pass = lines.iter().all(|l| l.pass);
    Ok(OracleReport {
        family: cfg.family.name().into(),
        lines,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: usize,
    pub risk: MeanCi,
    pub mean_cells: f64,
    /// `(log n / n)^exponent`.
    pub target: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub exponent: f64,
    pub slope: f64,
    pub slope_se: f64,
    pub slope_ci: (f64, f64),
    pub points: Vec<RatePoint>,
    /// Largest ratio over the first one.
    pub ratio_spread: f64,
    /// Slope of `log(mean risk − mean penalty)` when that difference stays
    /// positive, meant for parametric truths.
    pub pen_adjusted_slope: Option<f64>,
}

/// Mean risk `h²(s, ŝ)` under the limiting occupation measure, per `n`,
/// and its log-log regression on `log n / n`.
pub fn run_rate_experiment(cfg: &ExperimentConfig) -> Result<RateReport> {
    cfg.validate()?;
    let ExperimentKind::Rate { sigma, d } = cfg.experiment else {
        return Err(Error::InvalidParameter(
            "the rate experiment needs sigma and d".into(),
        ));
    };
    if cfg.n_grid.len() < 5 {
        return Err(Error::InvalidParameter(
            "the rate regression needs at least five sizes".into(),
        ));
    }
    let exponent = sigma / (d + sigma);
    let truth = cfg.family.build()?;
    let refs = reference_measures(cfg, &truth);
    let sel_cfg = SelectorConfig::new(cfg.depth, cfg.penalty_l);
    let mut points = Vec::new();
    let mut pens = Vec::new();
    for &n in &cfg.n_grid {
        let out: Vec<(f64, f64)> = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| -> Result<(f64, f64)> {
                let mut rng = crate::simulators::rng_for(cfg.seed, stream_id(n, rep));
                let traj = truth.sample_trajectory(n, &mut rng)?;
                let tree = SparseCountTree::build(&traj, sel_cfg.effective_depth(n))?;
                let sel = select_partition(&tree, &sel_cfg)?;
                let h = hellinger_sq_to_truth(&truth, &sel.kernel, &refs.nu, cfg.resolution)?;
                Ok((h, sel.partition.len() as f64))
            })
            .collect::<Result<_>>()?;
        let risks: Vec<f64> = out.iter().map(|o| o.0).collect();
        let cells = out.iter().map(|o| o.1).sum::<f64>() / out.len() as f64;
        let lg = (n as f64).ln() / n as f64;
        let risk = MeanCi::of(&risks);
        let target = lg.powf(exponent);
        pens.push((1.5 + (n as f64).ln()) * cells / n as f64);
        points.push(RatePoint {
            n,
            risk,
            mean_cells: cells,
            target,
            ratio: risk.mean / target,
        });
    }
    let xs: Vec<f64> = points
        .iter()
        .map(|p| ((p.n as f64).ln() / p.n as f64).ln())
        .collect();
    let ys: Vec<f64> = points.iter().map(|p| p.risk.mean.ln()).collect();
    let (slope, _, se) = fit_line(&xs, &ys);
    let adjusted: Option<Vec<f64>> = points
        .iter()
        .zip(&pens)
        .map(|(p, q)| (p.risk.mean - q > 0.0).then(|| (p.risk.mean - q).ln()))
        .collect();
    let pen_adjusted_slope = adjusted.map(|ya| fit_line(&xs, &ya).0);
    let first = points[0].ratio;
    let ratio_spread = points.iter().map(|p| p.ratio / first).fold(0.0, f64::max);
    Ok(RateReport {
        exponent,
        slope,
        slope_se: se,
        slope_ci: (slope - Z95 * se, slope + Z95 * se),
        points,
        ratio_spread,
        pen_adjusted_slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn risk_cfg(reps: usize) -> ExperimentConfig {
        ExperimentConfig {
            family: Family::Step,
            experiment: ExperimentKind::Risk,
            n_grid: vec![64, 128],
            depth: 2,
            penalty_l: 1.0,
            replications: reps,
            seed: 11,
            resolution: 4,
            tail_horizon: 64,
            output: None,
        }
    }

    #[test]
    fn zero_replications_rejected() {
        assert!(run_risk_experiment(&risk_cfg(0)).is_err());
    }

    #[test]
    fn risk_table_is_deterministic() {
        let a = run_risk_experiment(&risk_cfg(4)).unwrap();
        let b = run_risk_experiment(&risk_cfg(4)).unwrap();
        assert_eq!(a.rows.len(), 8);
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!(x.empirical_hellinger_sq, y.empirical_hellinger_sq);
            assert_eq!(x.oracle_term, y.oracle_term);
            assert!(x.error.is_empty(), "{}", x.error);
        }
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), RISK_HEADER.join(","));
        let back = RiskTable::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back.rows.len(), 8);
    }

    #[test]
    fn oracle_on_root_with_uniform_truth() {
        let cfg = ExperimentConfig {
            family: Family::Uniform {
                n_states: 2,
                n_controls: 2,
            },
            experiment: ExperimentKind::Oracle {
                partitions: vec![DyadicPartition::trivial(3)],
            },
            replications: 20,
            ..risk_cfg(20)
        };
        let r = run_oracle_check(&cfg).unwrap();
        assert!(r.pass);
        for l in &r.lines {
            assert!(l.bias.mean.abs() < 1e-12);
        }
    }
}
