//! Second stage: assign realized requests to deployed vehicles, the rest go ad hoc.

mod search;

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::detour::detour_of_set;
use crate::domain::{segment_zones, ServiceInstance};
use crate::error::{FlexError, Result};
use crate::milp::{self, Limits, Model, Sense, Status, VarId};
use crate::phase1::Plan;
use crate::stochastic::Scenario;

/// Weight of the tie-breaking term that prefers low vehicle indices for early requests.
pub const TIE_WEIGHT: f64 = 1e-7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum P2Solver {
    /// Exact depth-first search.
    #[default]
    Search,
    /// Branch and bound on the linearized model.
    Milp,
}

#[derive(Clone, Debug)]
pub struct P2Options {
    pub solver: P2Solver,
    pub limits: Limits,
    pub node_limit: u64,
}

impl Default for P2Options {
    fn default() -> Self {
        P2Options { solver: P2Solver::Search, limits: Limits::default(), node_limit: 300_000 }
    }
}

/// Outcome of one scenario.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Assignment {
    pub scenario: usize,
    /// Vehicle serving each request, `None` for ad hoc.
    pub vehicle_of: Vec<Option<usize>>,
    pub adhoc_cost: f64,
    /// `zone_detour[v][z]`.
    pub zone_detour: Vec<Vec<f64>>,
    pub proven_optimal: bool,
    pub nodes: u64,
}

impl Assignment {
    /// The served indicator per request (the W vector).
    pub fn served(&self) -> Vec<bool> {
        self.vehicle_of.iter().map(Option::is_some).collect()
    }

    pub fn served_count(&self) -> usize {
        self.vehicle_of.iter().filter(|v| v.is_some()).count()
    }

    pub fn requests_on(&self, v: usize) -> Vec<usize> {
        (0..self.vehicle_of.len()).filter(|&d| self.vehicle_of[d] == Some(v)).collect()
    }
}

fn routes_of(plan: &Plan) -> Vec<usize> {
    plan.vehicles.iter().map(|v| v.route).collect()
}

fn finish(
    inst: &ServiceInstance,
    scen: &Scenario,
    routes: &[usize],
    vehicle_of: Vec<Option<usize>>,
    proven_optimal: bool,
    nodes: u64,
) -> Assignment {
    let adhoc_cost = scen.requests.iter().zip(&vehicle_of).filter(|(_, v)| v.is_none()).fold(0.0, |s, (r, _)| s + r.adhoc_cost);
    let zone_detour = (0..routes.len())
        .map(|v| {
            let members: Vec<usize> = (0..vehicle_of.len()).filter(|&d| vehicle_of[d] == Some(v)).collect();
            (0..inst.zones.len()).map(|z| detour_of_set(&scen.matrices[z], &members)).collect()
        })
        .collect();
    Assignment { scenario: scen.id, vehicle_of, adhoc_cost, zone_detour, proven_optimal, nodes }
}

/// Linearized assignment model with its variable handles.
pub struct P2Model {
    pub model: Model,
    /// `(request, vehicle, w)` for every compatible pair.
    pub w: Vec<(usize, usize, VarId)>,
}

/// Builds the assignment MILP: pair products replace the quadratic detour terms.
pub fn build_p2(inst: &ServiceInstance, scen: &Scenario, routes: &[usize]) -> Result<P2Model> {
    let mut model = Model::new();
    let nr = scen.requests.len();
    let nv = routes.len();
    let mut w = Vec::new();
    let mut wv: Vec<Vec<Option<VarId>>> = vec![vec![None; nv]; nr];
    let total: f64 = scen.requests.iter().map(|r| r.adhoc_cost).sum();
    model.obj_constant = total;
    for d in 0..nr {
        for v in 0..nv {
            if inst.routes[routes[v]].traverses(scen.requests[d].od) {
                let x = model.add_binary(&format!("w_{d}_{v}"));
                let tie = TIE_WEIGHT * (nv - v) as f64 / (nv as f64 * (d + 1) as f64);
                model.add_objective_terms(&[(x, -scen.requests[d].adhoc_cost - tie)]);
                wv[d][v] = Some(x);
                w.push((d, v, x));
            }
        }
        let terms: Vec<(VarId, f64)> = wv[d].iter().flatten().map(|&x| (x, 1.0)).collect();
        if terms.len() > 1 {
            model.add_constraint(&format!("one_{d}"), &terms, Sense::Le, 1.0);
        }
    }
    let cap = inst.fleet.capacity as f64;
    let lim = &inst.detour_limits;
    for v in 0..nv {
        let route = &inst.routes[routes[v]];
        let cands: Vec<usize> = (0..nr).filter(|&d| wv[d][v].is_some()).collect();
        if cands.is_empty() {
            continue;
        }
        for row in 0..route.m() - 1 {
            let terms: Vec<(VarId, f64)> = cands
                .iter()
                .filter(|&&d| {
                    let (a, b) = route.segment(scen.requests[d].od).unwrap();
                    a <= row && row < b
                })
                .map(|&d| (wv[d][v].unwrap(), scen.requests[d].passengers as f64))
                .collect();
            if !terms.is_empty() {
                model.add_constraint(&format!("cap_{v}_{row}"), &terms, Sense::Le, cap);
            }
        }
        // zone detour expressions
        let mut zones = route.zones.clone();
        zones.sort_unstable();
        zones.dedup();
        let mut expr: Vec<(usize, Vec<(VarId, f64)>)> = Vec::new();
        for &z in &zones {
            let t = &scen.matrices[z];
            let touching: Vec<usize> = cands.iter().copied().filter(|&d| scen.requests[d].touches(z)).collect();
            let mut terms = Vec::new();
            for (k, &d) in touching.iter().enumerate() {
                terms.push((wv[d][v].unwrap(), t.diag(d)));
                for &b in &touching[..k] {
                    let tdb = t.get(d, b);
                    if tdb != 0.0 {
                        let p = milp::linearize_product(&mut model, wv[b][v].unwrap(), wv[d][v].unwrap())?;
                        terms.push((p, 2.0 * tdb));
                    }
                }
            }
            if lim.per_zone && !terms.is_empty() {
                model.add_constraint(&format!("det_{v}_{z}"), &terms, Sense::Le, inst.zones[z].max_detour);
            }
            expr.push((z, terms));
        }
        if let Some(tmax) = lim.per_trip {
            let terms: Vec<(VarId, f64)> = expr.iter().flat_map(|(_, t)| t.iter().copied()).collect();
            if !terms.is_empty() {
                model.add_constraint(&format!("trip_{v}"), &terms, Sense::Le, tmax);
            }
        }
        for (i, &(od, tmax)) in lim.per_od.iter().enumerate() {
            if let Some(seg) = segment_zones(route, od) {
                let terms: Vec<(VarId, f64)> =
                    expr.iter().filter(|(z, _)| seg.contains(z)).flat_map(|(_, t)| t.iter().copied()).collect();
                if !terms.is_empty() {
                    model.add_constraint(&format!("od_{v}_{i}"), &terms, Sense::Le, tmax);
                }
            }
        }
    }
    Ok(P2Model { model, w })
}

/// Optimal assignment of one scenario's requests to the plan's vehicles.
pub fn solve_p2(inst: &ServiceInstance, plan: &Plan, scen: &Scenario, opts: &P2Options) -> Result<Assignment> {
    solve_p2_routes(inst, &routes_of(plan), scen, opts)
}

/// As [`solve_p2`] with the fleet given as one route index per vehicle.
pub fn solve_p2_routes(inst: &ServiceInstance, routes: &[usize], scen: &Scenario, opts: &P2Options) -> Result<Assignment> {
    match opts.solver {
        P2Solver::Search => {
            let r = search::search(inst, scen, routes, opts.node_limit);
            if !r.complete {
                log::warn!("scenario {}: search hit the node limit, result may be suboptimal", scen.id);
            }
            Ok(finish(inst, scen, routes, r.vehicle_of, r.complete, r.nodes))
        }
        P2Solver::Milp => {
            let pm = build_p2(inst, scen, routes)?;
            if pm.w.is_empty() {
                // no compatible pair: everything goes ad hoc
                return Ok(finish(inst, scen, routes, vec![None; scen.requests.len()], true, 0));
            }
            let sol = milp::solve(&pm.model, &opts.limits)?;
            if !sol.has_incumbent() {
                return Err(FlexError::Solver(format!("scenario {}: no assignment found", scen.id)));
            }
            let mut vehicle_of = vec![None; scen.requests.len()];
            for &(d, v, x) in &pm.w {
                if sol.value(x) > 0.5 {
                    vehicle_of[d] = Some(v);
                }
            }
            let a = finish(inst, scen, routes, vehicle_of, sol.status == Status::Optimal, sol.nodes as u64);
            let tie_total = (sol.objective - a.adhoc_cost).abs();
            let min_cost = scen.requests.iter().map(|r| r.adhoc_cost).fold(f64::INFINITY, f64::min);
            if tie_total > 1e-3 * min_cost.max(1e-9) {
                return Err(FlexError::Solver(format!(
                    "scenario {}: tie-break term {tie_total} is not negligible",
                    scen.id
                )));
            }
            Ok(a)
        }
    }
}

/// Expected-cost summary of a plan over a scenario set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub fixed_cost: f64,
    pub expected_adhoc: f64,
    pub total_cost: f64,
    pub vehicles: usize,
    pub scenario_costs: Vec<f64>,
    /// Served requests over all requests.
    pub service_rate: f64,
    /// Passenger-segments carried over seat-segments offered.
    pub occupancy: f64,
    /// Mean over scenarios of the summed zonal detour of all vehicles.
    pub total_detour: f64,
    /// Mean zonal detour over vehicle-zone pairs that serve at least one request.
    pub detour_per_zone_visit: f64,
    pub max_vehicle_detour: f64,
    pub proven_optimal: bool,
}

/// Scenario-by-scenario evaluation, parallel over scenarios.
pub fn evaluate(
    inst: &ServiceInstance,
    plan: &Plan,
    scenarios: &[Scenario],
    opts: &P2Options,
) -> Result<(CostReport, Vec<Assignment>)> {
    evaluate_routes(inst, &routes_of(plan), plan.fixed_cost, scenarios, opts)
}

pub fn evaluate_routes(
    inst: &ServiceInstance,
    routes: &[usize],
    fixed_cost: f64,
    scenarios: &[Scenario],
    opts: &P2Options,
) -> Result<(CostReport, Vec<Assignment>)> {
    let assignments: Vec<Assignment> =
        scenarios.par_iter().map(|s| solve_p2_routes(inst, routes, s, opts)).collect::<Result<_>>()?;
    let cap = inst.fleet.capacity as f64;
    let seat_segments: f64 = routes.iter().map(|&p| cap * (inst.routes[p].m() - 1) as f64).sum();
    let (mut served, mut total, mut carried, mut offered) = (0usize, 0usize, 0.0, 0.0);
    let (mut det_sum, mut visit_sum, mut visits, mut max_v) = (0.0, 0.0, 0usize, 0.0f64);
    let mut expected = 0.0;
    let mut costs = Vec::with_capacity(scenarios.len());
    for (s, a) in scenarios.iter().zip(&assignments) {
        expected += s.probability * a.adhoc_cost;
        costs.push(a.adhoc_cost);
        served += a.served_count();
        total += s.requests.len();
        offered += seat_segments;
        for (d, v) in a.vehicle_of.iter().enumerate() {
            if let Some(v) = v {
                let req = &s.requests[d];
                let (i, j) = inst.routes[routes[*v]].segment(req.od).unwrap();
                carried += (req.passengers as usize * (j - i)) as f64;
            }
        }
        let mut scen_det = 0.0;
        for (v, zd) in a.zone_detour.iter().enumerate() {
            let members = a.requests_on(v);
            let veh: f64 = zd.iter().sum();
            scen_det += veh;
            max_v = max_v.max(veh);
            for (z, &val) in zd.iter().enumerate() {
                if members.iter().any(|&d| s.requests[d].touches(z)) {
                    visit_sum += val;
                    visits += 1;
                }
            }
        }
        det_sum += s.probability * scen_det;
    }
    let prob: f64 = scenarios.iter().map(|s| s.probability).sum();
    let expected_adhoc = if prob > 0.0 { expected / prob } else { 0.0 };
    let report = CostReport {
        fixed_cost,
        expected_adhoc,
        total_cost: fixed_cost + expected_adhoc,
        vehicles: routes.len(),
        scenario_costs: costs,
        service_rate: if total > 0 { served as f64 / total as f64 } else { 1.0 },
        occupancy: if offered > 0.0 { carried / offered } else { 0.0 },
        total_detour: if prob > 0.0 { det_sum / prob } else { 0.0 },
        detour_per_zone_visit: if visits > 0 { visit_sum / visits as f64 } else { 0.0 },
        max_vehicle_detour: max_v,
        proven_optimal: assignments.iter().all(|a| a.proven_optimal),
    };
    Ok((report, assignments))
}

/// One CSV row per scenario: id, requests, served, ad hoc cost.
pub fn write_scenario_csv(path: &Path, scenarios: &[Scenario], assignments: &[Assignment]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["scenario", "probability", "requests", "served", "adhoc_cost"])?;
    for (s, a) in scenarios.iter().zip(assignments) {
        w.write_record(&[
            s.id.to_string(),
            s.probability.to_string(),
            s.requests.len().to_string(),
            a.served_count().to_string(),
            a.adhoc_cost.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One CSV row per request: who serves it, or the ad hoc cost it incurs.
pub fn write_assignment_csv(
    path: &Path,
    inst: &ServiceInstance,
    plan: &Plan,
    scenarios: &[Scenario],
    assignments: &[Assignment],
) -> Result<()> {
    let routes = routes_of(plan);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["scenario", "request", "category", "passengers", "vehicle", "route", "adhoc_cost"])?;
    for (s, a) in scenarios.iter().zip(assignments) {
        for (d, v) in a.vehicle_of.iter().enumerate() {
            let req = &s.requests[d];
            let (vehicle, route, cost) = match v {
                Some(v) => (v.to_string(), inst.routes[routes[*v]].id.clone(), "0".to_string()),
                None => ("adhoc".to_string(), String::new(), req.adhoc_cost.to_string()),
            };
            w.write_record(&[
                s.id.to_string(),
                req.id.to_string(),
                inst.categories[req.category].id.clone(),
                req.passengers.to_string(),
                vehicle,
                route,
                cost,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn worked_example_assignment() {
        let mut inst = fixtures::worked_example();
        let scen = fixtures::worked_example_scenario();
        for solver in [P2Solver::Search, P2Solver::Milp] {
            let opts = P2Options { solver, ..Default::default() };
            let a = solve_p2_routes(&inst, &[0], &scen, &opts).unwrap();
            assert_eq!(a.adhoc_cost, 0.0, "{solver:?}");
        }
        inst.zones[0].max_detour = 4.0;
        for solver in [P2Solver::Search, P2Solver::Milp] {
            let opts = P2Options { solver, ..Default::default() };
            let a = solve_p2_routes(&inst, &[0], &scen, &opts).unwrap();
            assert!((a.adhoc_cost - 3.0).abs() < 1e-9, "{solver:?} {a:?}");
            assert_eq!(a.served(), vec![true, true, false, true]);
            assert_eq!(a.vehicle_of[0], Some(0));
            assert!((a.zone_detour[0][0] - 2.6).abs() < 1e-9);
        }
    }
}
