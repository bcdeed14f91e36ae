//! Reliability-gradient outer loop: perturbation sensitivities, step rules, incumbent tracking.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::config::AlgorithmParams;
use crate::detour::phase1_detour;
use crate::domain::ServiceInstance;
use crate::error::{FlexError, Result};
use crate::phase1::{detour_ok, resolve_reliability, solve_p1_targets, vehicle_plan, P1Options, Plan, ReliabilityVector, Targets};
use crate::phase2::{evaluate, CostReport, P2Options};
use crate::stochastic::{reliability_for_demand, reliability_for_detour, Scenario};

/// Guard against division by zero in the detour increment.
pub const SMALL: f64 = 1e-9;
/// Largest reliability the projection emits.
pub const RHO_MAX: f64 = 1.0 - 1e-9;

/// Expected costs keyed by deployment (sorted route list), shared across probes.
#[derive(Default)]
pub struct SolutionCache {
    map: HashMap<Vec<usize>, CostReport>,
    /// Number of fresh phase-2 evaluations performed.
    pub evaluations: usize,
}

impl SolutionCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, plan: &Plan) -> Option<&CostReport> {
        self.map.get(&plan.deployment())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn evaluate(
        &mut self,
        inst: &ServiceInstance,
        plan: &Plan,
        scenarios: &[Scenario],
        opts: &P2Options,
    ) -> Result<CostReport> {
        let key = plan.deployment();
        if let Some(r) = self.map.get(&key) {
            return Ok(r.clone());
        }
        let (report, _) = evaluate(inst, plan, scenarios, opts)?;
        self.evaluations += 1;
        self.map.insert(key, report.clone());
        Ok(report)
    }
}

fn segment_rows_load(inst: &ServiceInstance, plan_vehicle: &crate::phase1::VehiclePlan) -> Vec<u32> {
    let route = &inst.routes[plan_vehicle.route];
    let mut load = vec![0u32; route.m() - 1];
    for (e, &y) in plan_vehicle.counts.iter().enumerate() {
        if y == 0 {
            continue;
        }
        let c = &inst.categories[e];
        if let Some((a, b)) = route.segment(c.od) {
            for r in a..b {
                load[r] += y * c.passengers;
            }
        }
    }
    load
}

/// Detour-limited count of extra requests one zone of one vehicle can absorb.
fn zone_room(inst: &ServiceInstance, targets: &Targets, z: usize, y: u32, t_now: f64) -> f64 {
    let zone = &inst.zones[z];
    let tau = targets.tau_ii[z];
    if y == 0 {
        // first visit pays the boundary legs, not a segment
        let mut k = 0u32;
        while k < 10_000 && phase1_detour(k + 1, &zone.boundary, tau) <= zone.max_detour + 1e-9 {
            k += 1;
        }
        return k as f64;
    }
    if tau <= 0.0 {
        return f64::INFINITY;
    }
    (zone.max_detour - t_now) / tau
}

/// ε_e^I: extra requests of category `e` the current vehicles absorb without a new plan.
pub fn max_demand_increment(inst: &ServiceInstance, plan: &Plan, e: usize) -> u32 {
    let cat = &inst.categories[e];
    let cap = inst.fleet.capacity;
    let mut total = 0u32;
    for v in &plan.vehicles {
        let route = &inst.routes[v.route];
        let Some((a, b)) = route.segment(cat.od) else { continue };
        let load = segment_rows_load(inst, v);
        let seat = (a..b).map(|r| cap.saturating_sub(load[r])).min().unwrap_or(0) as f64 / cat.passengers as f64;
        let (o, d) = (cat.od.origin, cat.od.dest);
        let det_o = zone_room(inst, &plan.targets, o, v.zone_requests[o], v.zone_detour[o]);
        let det_d = zone_room(inst, &plan.targets, d, v.zone_requests[d], v.zone_detour[d]);
        let bound = seat.min(det_o).min(det_d);
        let mut k = if bound.is_finite() { bound.max(0.0).floor() as u32 } else { cap };
        // other detour modes are not covered by the closed form; trim to feasibility
        while k > 0 {
            let mut counts = v.counts.clone();
            counts[e] += k;
            if detour_ok(inst, &vehicle_plan(inst, &plan.targets.tau_ii, v.route, &counts)) {
                break;
            }
            k -= 1;
        }
        total += k;
    }
    total
}

/// ε_z^II: increase of τ_z^II that keeps every vehicle within its zone-z limit.
pub fn max_detour_increment(inst: &ServiceInstance, plan: &Plan, z: usize) -> f64 {
    let tbar = inst.zones[z].max_detour;
    let mut eps = plan
        .vehicles
        .iter()
        .map(|v| (tbar - v.zone_detour[z]) / (v.zone_requests[z] as f64 + SMALL))
        .fold(f64::INFINITY, f64::min)
        .max(0.0);
    if !eps.is_finite() {
        return eps;
    }
    // trip and OD limits are not in the closed form; halve until they hold
    for _ in 0..60 {
        let mut tau = plan.targets.tau_ii.clone();
        tau[z] += eps;
        if plan.vehicles.iter().all(|v| detour_ok(inst, &vehicle_plan(inst, &tau, v.route, &v.counts))) {
            break;
        }
        eps /= 2.0;
    }
    eps
}

/// Reliability components that can influence a plan: all categories, and zones that are
/// an origin or destination of some category.
pub fn active_components(inst: &ServiceInstance) -> (Vec<usize>, Vec<usize>) {
    let cats = (0..inst.categories.len()).collect();
    let zones = (0..inst.zones.len())
        .filter(|&z| inst.categories.iter().any(|c| c.od.origin == z || c.od.dest == z))
        .collect();
    (cats, zones)
}

#[derive(Clone, Debug, Serialize)]
pub struct Probe {
    pub component: usize,
    pub bumps: usize,
    pub rho_from: f64,
    pub rho_to: Option<f64>,
    pub cost_to: Option<f64>,
    pub gradient: f64,
}

/// Everything the outer loop needs to evaluate a reliability vector.
pub struct Evaluator<'a> {
    pub inst: &'a ServiceInstance,
    pub scenarios: &'a [Scenario],
    pub p1: P1Options,
    pub p2: P2Options,
    pub cache: SolutionCache,
    pub p1_solves: usize,
}

impl<'a> Evaluator<'a> {
    pub fn new(inst: &'a ServiceInstance, scenarios: &'a [Scenario]) -> Self {
        Evaluator { inst, scenarios, p1: P1Options::default(), p2: P2Options::default(), cache: SolutionCache::new(), p1_solves: 0 }
    }

    pub fn plan_targets(&mut self, targets: &Targets) -> Result<Plan> {
        self.p1_solves += 1;
        solve_p1_targets(self.inst, targets, &self.p1)
    }

    pub fn plan(&mut self, rho: &ReliabilityVector) -> Result<Plan> {
        let t = resolve_reliability(self.inst, rho)?;
        self.plan_targets(&t)
    }

    pub fn cost(&mut self, plan: &Plan) -> Result<CostReport> {
        self.cache.evaluate(self.inst, plan, self.scenarios, &self.p2)
    }

    /// Finite-difference sensitivity of C along every reliability component.
    pub fn sensitivity(&mut self, rho: &ReliabilityVector, plan: &Plan, cost: f64, max_bumps: usize) -> Result<(Vec<f64>, Vec<Probe>)> {
        let ne = self.inst.categories.len();
        let mut grad = vec![0.0; rho.len()];
        let mut probes = Vec::new();
        let (_, zones) = active_components(self.inst);
        for e in 0..ne {
            let probe = self.probe_volume(rho, plan, cost, e, max_bumps)?;
            grad[e] = probe.gradient;
            probes.push(probe);
        }
        for z in zones {
            let probe = self.probe_detour(rho, plan, cost, z, max_bumps)?;
            grad[ne + z] = probe.gradient;
            probes.push(probe);
        }
        Ok((grad, probes))
    }

    fn finish_probe(&mut self, component: usize, bumps: usize, from: f64, to: f64, cur: &Plan, cost: f64) -> Result<Probe> {
        let c = self.cost(cur)?.total_cost;
        Ok(Probe { component, bumps, rho_from: from, rho_to: Some(to), cost_to: Some(c), gradient: (c - cost) / (to - from) })
    }

    fn probe_volume(&mut self, rho: &ReliabilityVector, plan: &Plan, cost: f64, e: usize, max_bumps: usize) -> Result<Probe> {
        let dist = self.inst.categories[e].volume.clone();
        let from = rho.volume[e];
        let mut cur = plan.clone();
        let mut targets = plan.targets.clone();
        let flat = Probe { component: e, bumps: 0, rho_from: from, rho_to: None, cost_to: None, gradient: 0.0 };
        for bump in 1..=max_bumps {
            let eps = max_demand_increment(self.inst, &cur, e);
            targets.delta[e] += eps + 1;
            let Some(to) = reliability_for_demand(&dist, targets.delta[e]) else {
                log::info!("category {e}: demand support exhausted, gradient 0");
                return Ok(Probe { bumps: bump, ..flat });
            };
            let next = match self.plan_targets(&targets) {
                Ok(p) => p,
                Err(FlexError::InfeasibleAtReliability) => {
                    log::info!("category {e}: bumped demand is infeasible, gradient 0");
                    return Ok(Probe { bumps: bump, rho_to: Some(to), ..flat });
                }
                Err(err) => return Err(err),
            };
            if (next.fixed_cost - plan.fixed_cost).abs() > 1e-9 {
                return self.finish_probe(e, bump, from, to, &next, cost);
            }
            cur = next;
        }
        log::info!("category {e}: phase-1 cost unchanged after {max_bumps} bumps, gradient 0");
        Ok(Probe { bumps: max_bumps, ..flat })
    }

    fn probe_detour(&mut self, rho: &ReliabilityVector, plan: &Plan, cost: f64, z: usize, max_bumps: usize) -> Result<Probe> {
        let ne = self.inst.categories.len();
        let dist = self.inst.zones[z].detour_dist.clone();
        let from = rho.detour[z];
        let mut cur = plan.clone();
        let mut targets = plan.targets.clone();
        let flat = Probe { component: ne + z, bumps: 0, rho_from: from, rho_to: None, cost_to: None, gradient: 0.0 };
        for bump in 1..=max_bumps {
            let eps = max_detour_increment(self.inst, &cur, z);
            if !eps.is_finite() {
                return Ok(Probe { bumps: bump, ..flat });
            }
            targets.tau_ii[z] += eps + 1e-6;
            let to = match reliability_for_detour(&dist, targets.tau_ii[z]) {
                Some(r) if r > from => r,
                Some(_) => continue,
                None => {
                    log::info!("zone {z}: detour support exhausted, gradient 0");
                    return Ok(Probe { bumps: bump, ..flat });
                }
            };
            let next = match self.plan_targets(&targets) {
                Ok(p) => p,
                Err(FlexError::InfeasibleAtReliability) => {
                    log::info!("zone {z}: bumped detour is infeasible, gradient 0");
                    return Ok(Probe { bumps: bump, rho_to: Some(to), ..flat });
                }
                Err(err) => return Err(err),
            };
            if (next.fixed_cost - plan.fixed_cost).abs() > 1e-9 {
                return self.finish_probe(ne + z, bump, from, to, &next, cost);
            }
            cur = next;
        }
        log::info!("zone {z}: phase-1 cost unchanged after {max_bumps} bumps, gradient 0");
        Ok(Probe { bumps: max_bumps, ..flat })
    }
}

/// Adam moments and step counters.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: i32,
}

/// Projects every component onto [0, 1).
pub fn project(rho: &mut [f64]) {
    for r in rho {
        *r = if r.is_nan() { 0.0 } else { r.clamp(0.0, RHO_MAX) };
    }
}

/// Step along −∇C: the cost-scaled rule, or Adam when `adam` is set.
pub fn step(
    rho: &[f64],
    grad: &[f64],
    cost: f64,
    best: f64,
    params: &AlgorithmParams,
    adam: Option<&mut AdamState>,
) -> Vec<f64> {
    let mut next: Vec<f64> = match adam {
        None => {
            let norm2: f64 = grad.iter().map(|g| g * g).sum();
            if norm2 == 0.0 {
                return rho.to_vec();
            }
            let pi = params.lambda * (cost - params.gamma * best) / norm2;
            rho.iter().zip(grad).map(|(r, g)| r - pi * g).collect()
        }
        Some(st) => {
            if st.m.len() != grad.len() {
                st.m = vec![0.0; grad.len()];
                st.v = vec![0.0; grad.len()];
                st.t = 0;
            }
            st.t += 1;
            let (b1, b2) = (params.beta1, params.beta2);
            let mut out = Vec::with_capacity(rho.len());
            for i in 0..grad.len() {
                st.m[i] = b1 * st.m[i] + (1.0 - b1) * grad[i];
                st.v[i] = b2 * st.v[i] + (1.0 - b2) * grad[i] * grad[i];
                let mh = st.m[i] / (1.0 - b1.powi(st.t));
                let vh = st.v[i] / (1.0 - b2.powi(st.t));
                out.push(rho[i] - params.alpha * mh / (vh.sqrt() + params.epsilon));
            }
            out
        }
    };
    project(&mut next);
    next
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceRow {
    pub k: usize,
    pub rho: Vec<f64>,
    pub fixed_cost: f64,
    pub expected_adhoc: f64,
    pub total_cost: f64,
    pub adam: bool,
    pub wall_time: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunResult {
    pub rho: ReliabilityVector,
    pub plan: Plan,
    pub report: CostReport,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
    pub p2_evaluations: usize,
    pub p1_solves: usize,
}

/// Largest feasible scaling of `rho` by repeated backoff.
fn feasible_plan(ev: &mut Evaluator, rho: &mut ReliabilityVector, backoff: f64) -> Result<Plan> {
    for _ in 0..200 {
        match ev.plan(rho) {
            Ok(p) => return Ok(p),
            Err(FlexError::InfeasibleAtReliability) => {
                for r in rho.volume.iter_mut().chain(rho.detour.iter_mut()) {
                    *r *= backoff;
                }
            }
            Err(e) => return Err(e),
        }
    }
    Err(FlexError::InfeasibleAtReliability)
}

/// Runs the outer loop from `rho0`.
pub fn run(ev: &mut Evaluator, rho0: &ReliabilityVector, params: &AlgorithmParams) -> Result<RunResult> {
    let start = Instant::now();
    let ne = ev.inst.categories.len();
    let mut rho = rho0.clone();
    let mut adam: Option<AdamState> = None;
    let mut best: Option<(f64, ReliabilityVector, Plan, CostReport)> = None;
    let mut prev: Option<(f64, Vec<usize>)> = None;
    let mut stall = 0usize;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut k = 0;
    while k < params.max_iterations {
        k += 1;
        let plan = feasible_plan(ev, &mut rho, params.backoff)?;
        let report = ev.cost(&plan)?;
        let c = report.total_cost;
        let improved = best.as_ref().is_none_or(|b| c < b.0 - 1e-12);
        if improved {
            best = Some((c, rho.clone(), plan.clone(), report.clone()));
        }
        trace.push(TraceRow {
            k,
            rho: rho.to_vec(),
            fixed_cost: report.fixed_cost,
            expected_adhoc: report.expected_adhoc,
            total_cost: c,
            adam: adam.is_some(),
            wall_time: start.elapsed().as_secs_f64(),
        });
        let deployment = plan.deployment();
        // an unchanged deployment gives an identical C on common scenarios; that is a stall,
        // not convergence
        if let Some((p, d)) = &prev {
            if *d != deployment && (c - p).abs() <= params.stop_threshold * p.abs() {
                converged = true;
                break;
            }
        }
        prev = Some((c, deployment));
        stall = if improved { 0 } else { stall + 1 };
        if stall >= 3 && adam.is_none() {
            adam = Some(AdamState::default());
        }
        let (grad, _) = ev.sensitivity(&rho, &plan, c, params.max_bumps)?;
        if grad.iter().all(|g| *g == 0.0) {
            converged = true;
            break;
        }
        let best_c = best.as_ref().map_or(c, |b| b.0);
        let next = step(&rho.to_vec(), &grad, c, best_c, params, adam.as_mut());
        rho = ReliabilityVector::from_slice(&next, ne);
    }
    let (_, rho, plan, report) = best.expect("at least one iteration");
    Ok(RunResult {
        rho,
        plan,
        report,
        iterations: k,
        converged,
        trace,
        p2_evaluations: ev.cache.evaluations,
        p1_solves: ev.p1_solves,
    })
}

/// Iteration trace as CSV.
pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    let width = trace.first().map_or(0, |t| t.rho.len());
    let mut head = vec!["k".to_string()];
    head.extend((0..width).map(|i| format!("rho_{i}")));
    head.extend(["fixed_cost", "expected_adhoc", "total_cost", "adam", "wall_time"].map(String::from));
    writeln!(f, "{}", head.join(","))?;
    for t in trace {
        let mut row = vec![t.k.to_string()];
        row.extend(t.rho.iter().map(|r| r.to_string()));
        row.extend([
            t.fixed_cost.to_string(),
            t.expected_adhoc.to_string(),
            t.total_cost.to_string(),
            u8::from(t.adam).to_string(),
            format!("{:.3}", t.wall_time),
        ]);
        writeln!(f, "{}", row.join(","))?;
    }
    Ok(())
}
