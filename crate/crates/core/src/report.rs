//! Parameter sweeps and table-shaped summaries.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::AlgorithmParams;
use crate::domain::ServiceInstance;
use crate::error::{FlexError, Result};
use crate::optimizer::{run, Evaluator, RunResult};
use crate::phase1::ReliabilityVector;
use crate::phase2::evaluate;
use crate::stochastic::{sample_scenarios, Distribution};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Capacity,
    DetourLimit,
    DemandMultiplier,
}

/// Volume law scaled by `m`: location and spread both grow linearly.
pub fn scale_distribution(d: &Distribution, m: f64) -> Distribution {
    match d {
        Distribution::TruncatedNormal { mu, var, lo, hi } => {
            Distribution::TruncatedNormal { mu: mu * m, var: var * m * m, lo: lo * m, hi: hi.map(|h| h * m) }
        }
        Distribution::Lognormal { shape, scale } => Distribution::Lognormal { shape: *shape, scale: scale * m },
        Distribution::Empirical { values, weights } => {
            Distribution::Empirical { values: values.iter().map(|v| v * m).collect(), weights: weights.clone() }
        }
    }
}

/// Copy of `inst` with one sweep axis set to `value`.
pub fn apply_axis(inst: &ServiceInstance, axis: SweepAxis, value: f64, cost_factor: Option<f64>) -> Result<ServiceInstance> {
    let mut out = inst.clone();
    match axis {
        SweepAxis::Capacity => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(FlexError::InvalidInstance(format!("capacity {value} is not a positive integer")));
            }
            out.fleet.capacity = value as u32;
        }
        SweepAxis::DetourLimit => {
            for z in &mut out.zones {
                z.max_detour = value;
            }
        }
        SweepAxis::DemandMultiplier => {
            for c in &mut out.categories {
                c.volume = scale_distribution(&c.volume, value);
            }
        }
    }
    if let Some(f) = cost_factor {
        out.fleet.cost_factor = f;
    }
    out.validate()?;
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub cost_factor: f64,
    pub total_cost: f64,
    pub fixed_cost: f64,
    pub expected_adhoc: f64,
    pub mean_rho_volume: f64,
    pub mean_rho_detour: f64,
    pub vehicles: usize,
    pub occupancy: f64,
    pub total_detour: f64,
    pub detour_per_zone_visit: f64,
    pub wall_time: f64,
    pub iterations: usize,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Optimizer run on `scenarios` draws, then a fresh evaluation on `eval_scenarios` draws.
pub fn run_and_evaluate(
    inst: &ServiceInstance,
    params: &AlgorithmParams,
    seed: u64,
    eval_scenarios: usize,
) -> Result<(RunResult, crate::phase2::CostReport)> {
    let scen = sample_scenarios(inst, params.scenarios, seed)?;
    let mut ev = Evaluator::new(inst, &scen);
    let rho0 = ReliabilityVector::uniform(inst, params.initial_rho, params.initial_rho);
    let res = run(&mut ev, &rho0, params)?;
    let report = if eval_scenarios == params.scenarios {
        res.report.clone()
    } else {
        let fresh = sample_scenarios(inst, eval_scenarios, seed)?;
        evaluate(inst, &res.plan, &fresh, &ev.p2)?.0
    };
    Ok((res, report))
}

/// Only categories and the zones they touch count toward the mean reliabilities.
fn active_means(inst: &ServiceInstance, rho: &ReliabilityVector) -> (f64, f64) {
    let (_, zones) = crate::optimizer::active_components(inst);
    let det: Vec<f64> = zones.iter().map(|&z| rho.detour[z]).collect();
    (mean(&rho.volume), mean(&det))
}

pub fn sweep(
    inst: &ServiceInstance,
    params: &AlgorithmParams,
    axis: SweepAxis,
    values: &[f64],
    cost_factors: &[f64],
    seed: u64,
    eval_scenarios: usize,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(FlexError::InvalidInstance("sweep needs at least one value".into()));
    }
    if !cost_factors.is_empty() && cost_factors.len() != values.len() {
        return Err(FlexError::DimensionMismatch { expected: values.len(), got: cost_factors.len() });
    }
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let start = Instant::now();
            let scaled = apply_axis(inst, axis, v, cost_factors.get(i).copied())?;
            let (res, rep) = run_and_evaluate(&scaled, params, seed, eval_scenarios)?;
            let (rv, rd) = active_means(&scaled, &res.rho);
            Ok(SweepRow {
                value: v,
                cost_factor: scaled.fleet.cost_factor,
                total_cost: rep.total_cost,
                fixed_cost: rep.fixed_cost,
                expected_adhoc: rep.expected_adhoc,
                mean_rho_volume: rv,
                mean_rho_detour: rd,
                vehicles: rep.vehicles,
                occupancy: rep.occupancy,
                total_detour: rep.total_detour,
                detour_per_zone_visit: rep.detour_per_zone_visit,
                wall_time: start.elapsed().as_secs_f64(),
                iterations: res.iterations,
            })
        })
        .collect()
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow], timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        let mut r = r.clone();
        if !timing {
            r.wall_time = 0.0;
        }
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling_preserves_the_coefficient_of_variation() {
        let d = scale_distribution(&Distribution::tn(10.0, 4.0), 2.0);
        assert_eq!(d, Distribution::TruncatedNormal { mu: 20.0, var: 16.0, lo: 0.0, hi: None });
    }
}
