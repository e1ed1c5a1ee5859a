//! Command line front end: simulate chains, fit and assess kernels, run
//! diagnostics and experiments.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use dyadic_cmc::diagnostics::{
    exact_kac, occupation_exact, remainder_term, rho_star_exact, weak_mixing_bound, RemainderInputs,
};
use dyadic_cmc::geometry::{AxisBox, CellId};
use dyadic_cmc::harness::{
    run_oracle_check, run_rate_experiment, run_risk_experiment, ExperimentConfig, ExperimentKind,
};
use dyadic_cmc::histogram::PiecewiseKernel;
use dyadic_cmc::losses::{
    empirical_hellinger_sq, empirical_hellinger_to_truth, write_loss_csv, LossRow,
};
use dyadic_cmc::selector::{select_partition, SelectorConfig};
use dyadic_cmc::simulators::{Family, FiniteCMCSpec, GroundTruth};
use dyadic_cmc::stats::SparseCountTree;
use dyadic_cmc::trajectory::{load_trajectory, rescale, Format, RawTrajectory};

#[derive(Parser)]
#[command(
    name = "dyadic-cmc",
    version,
    about = "Penalized dyadic histograms for controlled Markov chains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a trajectory from a named chain family.
    Simulate {
        #[arg(long)]
        family: String,
        /// Family parameter as key=value, repeatable (values are JSON).
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
        /// Finite chain in JSON, used with `--family finite`.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select a partition and write the fitted kernel as JSON.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 4)]
        depth: usize,
        #[arg(long = "penalty", default_value_t = dyadic_cmc::losses::DEFAULT_PENALTY_L)]
        penalty_l: f64,
        /// Per-axis bounds `lo:hi`, comma separated, states then controls.
        #[arg(long)]
        bounds: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Losses of a fitted kernel on a trajectory.
    Assess {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Second kernel to compare against.
        #[arg(long)]
        against: Option<PathBuf>,
        /// Known truth: a family name.
        #[arg(long)]
        family: Option<String>,
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        resolution: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recurrence and mixing diagnostics of a finite chain.
    Diagnose {
        #[arg(long, value_enum)]
        what: What,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        family: Option<String>,
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
        /// Remainder inputs in JSON, for `--what remainder`.
        #[arg(long)]
        inputs: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Depth of the dyadic target sets.
        #[arg(long, default_value_t = 1)]
        depth: usize,
        /// Largest lag for mixing coefficients.
        #[arg(long, default_value_t = 6)]
        lags: usize,
        #[arg(long, default_value_t = 1.0)]
        kappa_volume: f64,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment described by a JSON configuration.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum What {
    Kac,
    Mixing,
    RhoStar,
    Remainder,
    Occupation,
}

fn parse_family(name: &str, params: &[String], spec: Option<&Path>) -> anyhow::Result<Family> {
    let mut obj = Map::new();
    obj.insert("family".into(), Value::String(name.into()));
    for p in params {
        let (k, v) = p
            .split_once('=')
            .with_context(|| format!("parameter `{p}` is not KEY=VALUE"))?;
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.into()));
        obj.insert(k.replace('-', "_"), value);
    }
    if let Some(path) = spec {
        let s: FiniteCMCSpec = serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(dyadic_cmc::Error::from)?;
        obj.insert("spec".into(), serde_json::to_value(s)?);
    }
    let fam: Family = serde_json::from_value(Value::Object(obj))
        .map_err(|e| dyadic_cmc::Error::InvalidParameter(format!("family `{name}`: {e}")))?;
    Ok(fam)
}

fn parse_bounds(s: &str) -> anyhow::Result<Vec<(f64, f64)>> {
    s.split(',')
        .map(|part| {
            let (lo, hi) = part
                .split_once(':')
                .with_context(|| format!("bound `{part}` is not lo:hi"))?;
            Ok((lo.trim().parse()?, hi.trim().parse()?))
        })
        .collect()
}

fn writer(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(dyadic_cmc::Error::from)?,
    ))
}

fn load_raw(path: &Path) -> anyhow::Result<RawTrajectory> {
    Ok(load_trajectory(path, Format::from_path(path))?)
}

fn finite_truth(
    spec: Option<&Path>,
    family: Option<&str>,
    params: &[String],
) -> anyhow::Result<FiniteCMCSpec> {
    let fam = match (spec, family) {
        (Some(_), _) => parse_family("finite", params, spec)?,
        (None, Some(name)) => parse_family(name, params, None)?,
        (None, None) => bail!(dyadic_cmc::Error::InvalidParameter(
            "either --spec or --family is required".into()
        )),
    };
    match fam.build()? {
        GroundTruth::Finite(s) => Ok(s),
        GroundTruth::Holder(_) => {
            bail!(dyadic_cmc::Error::InvalidParameter(
                "diagnostics need a finite chain".into()
            ))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate {
            family,
            params,
            spec,
            n,
            seed,
            out,
        } => {
            let fam = parse_family(&family, &params, spec.as_deref())?;
            let sim = fam.simulate(n, seed, 0)?;
            sim.trajectory.write(&out, Format::from_path(&out), None)?;
            log::info!("wrote {} records to {}", n + 1, out.display());
        }
        Command::Fit {
            input,
            depth,
            penalty_l,
            bounds,
            seed,
            out,
        } => {
            let raw = load_raw(&input)?;
            let b = bounds.as_deref().map(parse_bounds).transpose()?;
            let (traj, map) = rescale(&raw, b.as_deref())?;
            let cfg = SelectorConfig::new(depth, penalty_l);
            let tree = SparseCountTree::build(&traj, cfg.effective_depth(traj.n()))?;
            let sel = select_partition(&tree, &cfg)?;
            let mut kernel = sel.kernel;
            kernel.metadata.seed = seed;
            kernel.metadata.domain = Some(map);
            kernel.save(&out)?;
            log::info!(
                "selected {} cells, gamma {}",
                sel.partition.len(),
                sel.gamma
            );
        }
        Command::Assess {
            model,
            input,
            against,
            family,
            params,
            spec,
            resolution,
            out,
        } => {
            let kernel = PiecewiseKernel::load(&model)?;
            let raw = load_raw(&input)?;
            let (traj, _) = match &kernel.metadata.domain {
                Some(d) => {
                    let b: Vec<(f64, f64)> =
                        d.lo.iter().zip(&d.hi).map(|(l, h)| (*l, *h)).collect();
                    rescale(&raw, Some(&b))?
                }
                None => rescale(&raw, None)?,
            };
            let depth = kernel.partition().max_depth();
            let mut rows = Vec::new();
            let base = |name: &str, value: f64| LossRow {
                loss_name: name.into(),
                value,
                n: traj.n(),
                l: depth,
                penalty_l: kernel.metadata.penalty_l.unwrap_or(f64::NAN),
                seed: kernel.metadata.seed,
            };
            if let Some(path) = against {
                let other = PiecewiseKernel::load(&path)?;
                let d = depth.max(other.partition().max_depth());
                let tree = SparseCountTree::build(&traj, d)?;
                rows.push(base(
                    "empirical_hellinger_sq_models",
                    empirical_hellinger_sq(&kernel, &other, &tree)?,
                ));
            }
            if family.is_some() || spec.is_some() {
                let fam = match &spec {
                    Some(_) => parse_family("finite", &params, spec.as_deref())?,
                    None => parse_family(family.as_deref().unwrap(), &params, None)?,
                };
                let truth = fam.build()?;
                rows.push(base(
                    "empirical_hellinger_sq_truth",
                    empirical_hellinger_to_truth(&truth, &kernel, &traj, resolution),
                ));
            }
            if rows.is_empty() {
                bail!(dyadic_cmc::Error::InvalidParameter(
                    "give --against, --family or --spec".into()
                ));
            }
            write_loss_csv(&rows, writer(&out)?)?;
        }
        Command::Diagnose {
            what,
            spec,
            family,
            params,
            inputs,
            n,
            depth,
            lags,
            kappa_volume,
            kappa,
            out,
        } => {
            let mut w = writer(&out)?;
            if let What::Remainder = what {
                let path = inputs.context("--inputs is required for the remainder")?;
                let inp: RemainderInputs = serde_json::from_str(
                    &std::fs::read_to_string(&path).map_err(dyadic_cmc::Error::from)?,
                )
                .map_err(dyadic_cmc::Error::from)?;
                let r = remainder_term(&inp)?;
                writeln!(
                    w,
                    "flavor,n,value,worst_set,upper_condition,lower_condition"
                )?;
                let opt = |b: Option<bool>| b.map(|v| v.to_string()).unwrap_or_default();
                writeln!(
                    w,
                    "{:?},{},{},{},{},{}",
                    inp.flavor,
                    inp.n,
                    r.value,
                    r.worst_set.map(|v| v.to_string()).unwrap_or_default(),
                    opt(r.upper_condition),
                    opt(r.lower_condition)
                )?;
                return Ok(());
            }
            let chain = finite_truth(spec.as_deref(), family.as_deref(), &params)?;
            let cells = dyadic_cells(depth);
            match what {
                What::Kac => {
                    let m = chain.marginals(n);
                    writeln!(w, "cell,nu_n,rhs,satisfied,margin")?;
                    for (c, b) in &cells {
                        let k = exact_kac(&chain, &m, b, n);
                        writeln!(w, "{c},{},{},{},{}", k.lhs, k.rhs, k.satisfied, k.margin)?;
                    }
                }
                What::RhoStar => {
                    let m = chain.marginals(n);
                    writeln!(w, "cell,rho_star,first_term,horizon")?;
                    for (c, b) in &cells {
                        let r = rho_star_exact(&chain, &m, b, n);
                        writeln!(w, "{c},{},{},{}", r.value, r.first_term, r.horizon)?;
                    }
                }
                What::Mixing => {
                    let kappa = kappa.or(chain.tags.eps0).unwrap_or(0.0);
                    writeln!(w, "i,j,theta_bar,analytic_bound,applicable")?;
                    for j in 1..=lags {
                        let b = weak_mixing_bound(&chain, 0, j, kappa_volume, kappa)?;
                        writeln!(
                            w,
                            "0,{j},{},{},{}",
                            b.theta_bar, b.analytic_bound, b.applicable
                        )?;
                    }
                }
                What::Occupation => {
                    let rep = occupation_exact(&chain, n, n, Some(depth));
                    writeln!(w, "cell,nu_n,nu")?;
                    for (i, (a, b)) in rep.nu_n.masses.iter().zip(&rep.nu.masses).enumerate() {
                        writeln!(w, "{i},{a},{b}")?;
                    }
                    log::info!(
                        "r_n = {}, tail horizon {}, converged {}",
                        rep.r_n,
                        rep.horizon,
                        rep.converged
                    );
                    eprintln!(
                        "r_n={} horizon={} converged={}",
                        rep.r_n, rep.horizon, rep.converged
                    );
                }
                What::Remainder => unreachable!(),
            }
            w.flush()?;
        }
        Command::Experiment { config, seed, out } => {
            let text = std::fs::read_to_string(&config).map_err(dyadic_cmc::Error::from)?;
            let mut cfg: ExperimentConfig =
                serde_json::from_str(&text).map_err(dyadic_cmc::Error::from)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let out = out
                .or(cfg.output.clone())
                .context("no output path in the flags or the configuration")?;
            match &cfg.experiment {
                ExperimentKind::Risk => {
                    let table = run_risk_experiment(&cfg)?;
                    table.write_csv(writer(&out)?)?;
                }
                ExperimentKind::Oracle { .. } => {
                    let rep = run_oracle_check(&cfg)?;
                    serde_json::to_writer_pretty(writer(&out)?, &rep)?;
                }
                ExperimentKind::Rate { .. } => {
                    let rep = run_rate_experiment(&cfg)?;
                    serde_json::to_writer_pretty(writer(&out)?, &json!(rep))?;
                }
            }
        }
    }
    Ok(())
}

/// Dyadic cells of the state-control square at one depth, labelled by path.
fn dyadic_cells(depth: usize) -> Vec<(String, AxisBox)> {
    let mut cells = vec![CellId::root()];
    for _ in 0..depth {
        cells = cells
            .iter()
            .flat_map(|c| (0..4).map(move |k| c.child(k)))
            .collect();
    }
    cells
        .into_iter()
        .map(|c| {
            let label = c
                .path()
                .iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join("");
            (
                if label.is_empty() {
                    "root".into()
                } else {
                    label
                },
                c.to_box(2),
            )
        })
        .collect()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = String::new();
            for cause in e.chain() {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&c);
                }
            }
            eprintln!("error: {msg}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<dyadic_cmc::Error>())
                .map(|e| e.exit_code())
                .unwrap_or(1);
            ExitCode::from(code as u8)
        }
    }
}
