//! Browser bindings: fit a kernel on a simulated chain, sweep the penalty
//! constant, and plot mixing coefficients.
//!
//! Every export returns a JSON string so the page needs no glue beyond
//! `JSON.parse`.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use dyadic_cmc::density::TransitionDensity;
use dyadic_cmc::diagnostics::weak_mixing_bound;
use dyadic_cmc::geometry::AxisBox;
use dyadic_cmc::histogram::PiecewiseKernel;
use dyadic_cmc::losses::hellinger_sq_to_truth;
use dyadic_cmc::selector::{select_partition, SelectorConfig};
use dyadic_cmc::simulators::{fully_connected, rng_for, Family, GroundTruth};
use dyadic_cmc::stats::SparseCountTree;

fn family(name: &str) -> Result<Family, String> {
    let v = match name {
        "step" | "tiny-cell" | "flip" | "inid" | "minorized" => json!({ "family": name }),
        "comparison" => json!({ "family": "comparison", "i0": 1 }),
        "holder" => json!({ "family": "holder", "amplitude": 0.45, "frequency": 1.0 }),
        "fully-connected" => json!({ "family": "fully-connected", "eps0": 0.4 }),
        other => return Err(format!("unknown family `{other}`")),
    };
    serde_json::from_value(v).map_err(|e| e.to_string())
}

fn fit_family(
    name: &str,
    n: usize,
    seed: u64,
    depth: usize,
    penalty_l: f64,
) -> Result<(GroundTruth, PiecewiseKernel, f64), String> {
    let fam = family(name)?;
    let sim = fam.simulate(n, seed, 0).map_err(|e| e.to_string())?;
    let cfg = SelectorConfig::new(depth, penalty_l);
    let tree = SparseCountTree::build(&sim.trajectory, cfg.effective_depth(n))
        .map_err(|e| e.to_string())?;
    let sel = select_partition(&tree, &cfg).map_err(|e| e.to_string())?;
    let occ = sim.truth.occupation(n);
    let h2 = hellinger_sq_to_truth(&sim.truth, &sel.kernel, &occ, 16).map_err(|e| e.to_string())?;
    Ok((sim.truth, sel.kernel, h2))
}

/// Conditional mass of each next-state bin, on a `grid` × `grid` board of
/// (state, control) starting points.
fn slice<D: TransitionDensity + ?Sized>(d: &D, grid: usize, bands: usize) -> Vec<Vec<Vec<f64>>> {
    let mid = |i: usize, k: usize| (i as f64 + 0.5) / k as f64;
    (0..grid)
        .map(|ix| {
            (0..grid)
                .map(|ia| {
                    (0..bands)
                        .map(|b| {
                            let block = AxisBox::new(
                                vec![b as f64 / bands as f64],
                                vec![(b + 1) as f64 / bands as f64],
                            )
                            .unwrap();
                            d.block_integrals(&[mid(ix, grid)], &[mid(ia, grid)], &block, 8)
                                .mass
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn wrap(r: Result<Value, String>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

/// Simulate `n` transitions, select a partition, and return the fitted and
/// true next-state masses on a coarse board.
#[wasm_bindgen]
pub fn fit_heatmap(name: &str, n: usize, seed: u32, depth: usize, penalty_l: f64) -> String {
    wrap((|| {
        let (truth, kernel, h2) = fit_family(name, n, seed.into(), depth, penalty_l)?;
        Ok(json!({
            "cells": kernel.partition().len(),
            "hellinger_sq": h2,
            "fitted": slice(&kernel, 8, 4),
            "truth": slice(&truth, 8, 4),
        }))
    })())
}

/// Size of the selected partition and its loss for each penalty constant.
#[wasm_bindgen]
pub fn penalty_sweep(name: &str, n: usize, seed: u32, depth: usize, ls: &[f64]) -> String {
    wrap((|| {
        let rows = ls
            .iter()
            .map(|&l| {
                let (_, kernel, h2) = fit_family(name, n, seed.into(), depth, l)?;
                Ok(json!({ "L": l, "cells": kernel.partition().len(), "hellinger_sq": h2 }))
            })
            .collect::<Result<Vec<_>, String>>()?;
        Ok(Value::Array(rows))
    })())
}

/// Exact mixing coefficients of a random fully connected chain against the
/// geometric bound.
#[wasm_bindgen]
pub fn mixing_curve(eps0: f64, kernel_seed: u32, lags: usize) -> String {
    wrap((|| {
        let mut rng = rng_for(kernel_seed.into(), 0);
        let spec = fully_connected(eps0, 4, 2, &mut rng).map_err(|e| e.to_string())?;
        let rows = (1..=lags)
            .map(|j| {
                let b = weak_mixing_bound(&spec, 0, j, 1.0, eps0).map_err(|e| e.to_string())?;
                Ok(json!({ "lag": j, "theta_bar": b.theta_bar, "bound": b.analytic_bound }))
            })
            .collect::<Result<Vec<_>, String>>()?;
        Ok(Value::Array(rows))
    })())
}
