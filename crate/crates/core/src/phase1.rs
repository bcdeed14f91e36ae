//! Phase 1: fleet routing and category assignment at given reliabilities.

use std::collections::BTreeMap;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::detour::{max_requests_within, phase1_detour, tangent_cuts};
use crate::domain::{decompose_instance, segment_zones, ServiceInstance};
use crate::error::{FlexError, Result};
use crate::milp::{self, linearize_bilinear_indicator, Limits, Model, Sense, Status, VarId};
use crate::stochastic::{demand_quantile, detour_quantile};

/// ρ = (ρ^I per category, ρ^II per zone).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityVector {
    pub volume: Vec<f64>,
    pub detour: Vec<f64>,
}

impl ReliabilityVector {
    pub fn uniform(instance: &ServiceInstance, volume: f64, detour: f64) -> Self {
        ReliabilityVector {
            volume: vec![volume; instance.categories.len()],
            detour: vec![detour; instance.zones.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.volume.len() + self.detour.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattened view: volume components first, then detour components.
    pub fn to_vec(&self) -> Vec<f64> {
        self.volume.iter().chain(&self.detour).copied().collect()
    }

    pub fn from_slice(values: &[f64], n_categories: usize) -> Self {
        ReliabilityVector { volume: values[..n_categories].to_vec(), detour: values[n_categories..].to_vec() }
    }

    pub fn validate(&self, instance: &ServiceInstance) -> Result<()> {
        if self.volume.len() != instance.categories.len() {
            return Err(FlexError::DimensionMismatch { expected: instance.categories.len(), got: self.volume.len() });
        }
        if self.detour.len() != instance.zones.len() {
            return Err(FlexError::DimensionMismatch { expected: instance.zones.len(), got: self.detour.len() });
        }
        match self.to_vec().into_iter().find(|r| !(0.0..1.0).contains(r)) {
            Some(r) => Err(FlexError::InvalidReliability(r)),
            None => Ok(()),
        }
    }
}

/// δ per category and τ^II per zone implied by ρ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    pub delta: Vec<u32>,
    pub tau_ii: Vec<f64>,
}

pub fn resolve_reliability(instance: &ServiceInstance, rho: &ReliabilityVector) -> Result<Targets> {
    rho.validate(instance)?;
    let delta = instance
        .categories
        .iter()
        .zip(&rho.volume)
        .map(|(c, &r)| demand_quantile(&c.volume, r))
        .collect::<Result<_>>()?;
    let tau_ii = instance
        .zones
        .iter()
        .zip(&rho.detour)
        .map(|(z, &r)| detour_quantile(&z.detour_dist, r))
        .collect::<Result<_>>()?;
    Ok(Targets { delta, tau_ii })
}

/// One routed vehicle of a plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehiclePlan {
    pub route: usize,
    pub route_id: String,
    /// y_ev per category.
    pub counts: Vec<u32>,
    /// ỹ_vz per zone.
    pub zone_requests: Vec<u32>,
    /// t_vz per zone from the phase-1 detour approximation.
    pub zone_detour: Vec<f64>,
    /// ζ_v over the instance OD set.
    pub od_load: Vec<u32>,
}

/// Phase-1 result. Vehicles not listed stay unrouted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub fleet_size: usize,
    pub vehicles: Vec<VehiclePlan>,
    pub fixed_cost: f64,
    pub targets: Targets,
    pub proven_optimal: bool,
}

impl Plan {
    pub fn empty(instance: &ServiceInstance, targets: Targets) -> Self {
        Plan { fleet_size: instance.fleet.size, vehicles: Vec::new(), fixed_cost: 0.0, targets, proven_optimal: true }
    }

    /// Vehicles per route, χ_p.
    pub fn route_counts(&self, n_routes: usize) -> Vec<usize> {
        let mut c = vec![0; n_routes];
        for v in &self.vehicles {
            c[v.route] += 1;
        }
        c
    }

    /// Canonical deployment: sorted route multiset.
    pub fn deployment(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.vehicles.iter().map(|v| v.route).collect();
        r.sort_unstable();
        r
    }

    /// Builds derived per-vehicle fields from routes and category counts.
    pub fn from_assignment(
        instance: &ServiceInstance,
        targets: Targets,
        assignment: &[(usize, Vec<u32>)],
        proven_optimal: bool,
    ) -> Self {
        let vehicles: Vec<VehiclePlan> =
            assignment.iter().map(|(p, counts)| vehicle_plan(instance, &targets.tau_ii, *p, counts)).collect();
        let fixed_cost = vehicles.iter().map(|v| instance.route_cost(v.route)).sum();
        Plan { fleet_size: instance.fleet.size, vehicles, fixed_cost, targets, proven_optimal }
    }
}

pub fn vehicle_plan(instance: &ServiceInstance, tau_ii: &[f64], route: usize, counts: &[u32]) -> VehiclePlan {
    let nz = instance.zones.len();
    let mut zone_requests = vec![0u32; nz];
    let mut od_load = vec![0u32; instance.od_set.len()];
    for (e, &y) in counts.iter().enumerate() {
        if y == 0 {
            continue;
        }
        let c = &instance.categories[e];
        zone_requests[c.od.origin] += y;
        zone_requests[c.od.dest] += y;
        if let Some(k) = instance.od_index(c.od) {
            od_load[k] += y * c.passengers;
        }
    }
    let zone_detour = (0..nz)
        .map(|z| phase1_detour(zone_requests[z], &instance.zones[z].boundary, tau_ii[z]))
        .collect();
    VehiclePlan {
        route,
        route_id: instance.routes[route].id.clone(),
        counts: counts.to_vec(),
        zone_requests,
        zone_detour,
        od_load,
    }
}

/// How the zone detour constraint enters the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetourEncoding {
    /// Chord cuts on τ̃ with an activation binary per (vehicle, zone).
    Cuts,
    /// Per-zone limits only: t(ỹ) is convex with t(1) ≤ t̄, so t(ỹ) ≤ t̄ ⇔ ỹ ≤ Ymax.
    /// Falls back to `Cuts` when per-trip or per-OD limits are active.
    Auto,
}

#[derive(Clone, Debug)]
pub struct P1Options {
    pub limits: Limits,
    pub encoding: DetourEncoding,
    pub decompose: bool,
}

impl Default for P1Options {
    fn default() -> Self {
        P1Options { limits: Limits::default(), encoding: DetourEncoding::Auto, decompose: true }
    }
}

/// Variable handles of a built P1 model.
#[derive(Clone, Debug)]
pub struct P1Model {
    pub model: Model,
    /// (route, x variable, y variable per category or None)
    pub slots: Vec<(usize, VarId, Vec<Option<VarId>>)>,
}

fn uses_only_zone_limits(instance: &ServiceInstance) -> bool {
    instance.detour_limits.per_trip.is_none() && instance.detour_limits.per_od.is_empty()
}

/// Largest number of requests of category `e` alone that one vehicle on `p` can carry.
pub fn single_category_max(instance: &ServiceInstance, p: usize, e: usize, tau_ii: &[f64]) -> u32 {
    let cat = &instance.categories[e];
    if !instance.routes[p].traverses(cat.od) {
        return 0;
    }
    let cap = instance.fleet.capacity;
    let mut best = 0;
    for y in 1..=cap / cat.passengers.max(1) {
        let mut counts = vec![0; instance.categories.len()];
        counts[e] = y;
        let v = vehicle_plan(instance, tau_ii, p, &counts);
        if detour_ok(instance, &v) {
            best = y;
        } else {
            break;
        }
    }
    best
}

/// Detour predicates of every configured mode on one vehicle.
pub fn detour_ok(instance: &ServiceInstance, v: &VehiclePlan) -> bool {
    let tol = 1e-9;
    let lim = &instance.detour_limits;
    let route = &instance.routes[v.route];
    if lim.per_zone
        && (0..instance.zones.len()).any(|z| v.zone_detour[z] > instance.zones[z].max_detour + tol)
    {
        return false;
    }
    let mut zones: Vec<usize> = route.zones.clone();
    zones.sort_unstable();
    zones.dedup();
    if let Some(t) = lim.per_trip {
        if zones.iter().map(|&z| v.zone_detour[z]).sum::<f64>() > t + tol {
            return false;
        }
    }
    for &(od, t) in &lim.per_od {
        if let Some(seg) = segment_zones(route, od) {
            if seg.iter().map(|&z| v.zone_detour[z]).sum::<f64>() > t + tol {
                return false;
            }
        }
    }
    true
}

/// Greedy single-category plan cost, when it fits the fleet.
fn greedy_upper_bound(instance: &ServiceInstance, cats: &[usize], routes: &[usize], targets: &Targets) -> Option<f64> {
    let mut cost = 0.0;
    let mut used = 0usize;
    for &e in cats {
        let d = targets.delta[e];
        if d == 0 {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for &p in routes {
            let ymax = single_category_max(instance, p, e, &targets.tau_ii);
            if ymax == 0 {
                continue;
            }
            let n = d.div_ceil(ymax) as usize;
            let c = n as f64 * instance.route_cost(p);
            if best.is_none_or(|(bc, _)| c < bc) {
                best = Some((c, n));
            }
        }
        let (c, n) = best?;
        cost += c;
        used += n;
    }
    (used <= instance.fleet.size).then_some(cost)
}

/// Builds the P1 MILP over the given categories and routes.
pub fn build_p1_subset(
    instance: &ServiceInstance,
    cats: &[usize],
    routes: &[usize],
    targets: &Targets,
    encoding: DetourEncoding,
) -> Result<P1Model> {
    let ne = instance.categories.len();
    let cap = instance.fleet.capacity;
    let capf = cap as f64;
    let cats: Vec<usize> = cats.iter().copied().filter(|&e| targets.delta[e] > 0).collect();
    let mut model = Model::new();
    let mut slots = Vec::new();
    if cats.is_empty() {
        return Ok(P1Model { model, slots });
    }
    let collapse = encoding == DetourEncoding::Auto && uses_only_zone_limits(instance);
    let ub_cost = greedy_upper_bound(instance, &cats, routes, targets);
    let max_n = cats.iter().map(|&e| instance.categories[e].passengers).max().unwrap_or(1) as f64;
    let max_delta = cats.iter().map(|&e| targets.delta[e]).max().unwrap_or(0) as f64;
    let m1 = cats.len() as f64 * max_n * max_delta + 1.0;
    let ymax: Vec<u32> = (0..instance.zones.len())
        .map(|z| {
            let zone = &instance.zones[z];
            max_requests_within(&zone.boundary, targets.tau_ii[z], zone.max_detour, cap)
        })
        .collect();

    let mut all_x = Vec::new();
    let mut demand_terms: BTreeMap<usize, Vec<(VarId, f64)>> = BTreeMap::new();
    for &p in routes {
        let route = &instance.routes[p];
        let servable: Vec<usize> = cats.iter().copied().filter(|&e| route.traverses(instance.categories[e].od)).collect();
        if servable.is_empty() {
            continue;
        }
        let cost = instance.route_cost(p);
        let total: u64 = servable.iter().map(|&e| targets.delta[e] as u64).sum();
        let mut k_max = (instance.fleet.size as u64).min(total);
        if let Some(ub) = ub_cost {
            k_max = k_max.min((ub / cost + 1e-9).floor() as u64);
        }
        let mut prev: Option<(VarId, Vec<(VarId, f64)>)> = None;
        for k in 0..k_max as usize {
            let x = model.add_binary(format!("x_{}_{k}", route.id));
            model.add_objective_terms(&[(x, cost)]);
            all_x.push((x, 1.0));
            let mut ys = vec![None; ne];
            for &e in &servable {
                let ub = targets.delta[e].min(cap / instance.categories[e].passengers) as f64;
                let y = model.add_integer(format!("y_{}_{}_{k}", instance.categories[e].id, route.id), Some(ub));
                ys[e] = Some(y);
                demand_terms.entry(e).or_default().push((y, 1.0));
            }
            let y_terms: Vec<(VarId, f64)> = servable.iter().map(|&e| (ys[e].unwrap(), 1.0)).collect();
            // load leaving each non-terminal zone; strong form and the big-M form
            let mut rows = Vec::new();
            for i in 0..route.m() - 1 {
                let terms: Vec<(VarId, f64)> = servable
                    .iter()
                    .filter(|&&e| {
                        let (a, b) = route.segment(instance.categories[e].od).unwrap();
                        a <= i && i < b
                    })
                    .map(|&e| (ys[e].unwrap(), instance.categories[e].passengers as f64))
                    .collect();
                if terms.is_empty() {
                    continue;
                }
                let mut strong = terms.clone();
                strong.push((x, -capf));
                model.add_constraint(format!("load_{}_{k}_{i}", route.id), &strong, Sense::Le, 0.0);
                rows.push((format!("cap_{}_{k}_{i}", route.id), terms));
            }
            let activity: f64 = servable
                .iter()
                .map(|&e| (targets.delta[e] * instance.categories[e].passengers) as f64)
                .sum();
            let bound = (activity / capf).ceil().max(1.0) + 1.0;
            linearize_bilinear_indicator(&mut model, x, &rows, capf, bound)?;
            let mut z_terms: Vec<(VarId, f64)> =
                servable.iter().map(|&e| (ys[e].unwrap(), instance.categories[e].passengers as f64)).collect();
            z_terms.push((x, -m1));
            model.add_constraint(format!("routed_{}_{k}", route.id), &z_terms, Sense::Le, 0.0);

            add_detour_rows(&mut model, instance, targets, p, k, x, &ys, &servable, collapse, &ymax)?;

            if let Some((px, pterms)) = &prev {
                model.add_constraint(format!("sym_x_{}_{k}", route.id), &[(*px, 1.0), (x, -1.0)], Sense::Ge, 0.0);
                let mut t = pterms.clone();
                t.extend(y_terms.iter().map(|&(v, c)| (v, -c)));
                model.add_constraint(format!("sym_y_{}_{k}", route.id), &t, Sense::Ge, 0.0);
            }
            prev = Some((x, y_terms));
            slots.push((p, x, ys));
        }
    }
    model.add_constraint("fleet", &all_x, Sense::Le, instance.fleet.size as f64);
    for &e in &cats {
        let terms = demand_terms.remove(&e).unwrap_or_default();
        model.add_constraint(format!("demand_{}", instance.categories[e].id), &terms, Sense::Eq, targets.delta[e] as f64);
    }
    Ok(P1Model { model, slots })
}

#[allow(clippy::too_many_arguments)]
fn add_detour_rows(
    model: &mut Model,
    instance: &ServiceInstance,
    targets: &Targets,
    p: usize,
    k: usize,
    x: VarId,
    ys: &[Option<VarId>],
    servable: &[usize],
    collapse: bool,
    ymax: &[u32],
) -> Result<()> {
    let route = &instance.routes[p];
    let cap = instance.fleet.capacity;
    let mut zones = route.zones.clone();
    zones.sort_unstable();
    zones.dedup();
    let touching = |z: usize| -> Vec<(VarId, f64)> {
        servable
            .iter()
            .filter_map(|&e| {
                let od = instance.categories[e].od;
                let mult = (od.origin == z) as u32 + (od.dest == z) as u32;
                (mult > 0).then(|| (ys[e].unwrap(), mult as f64))
            })
            .collect()
    };
    if collapse {
        if instance.detour_limits.per_zone {
            for &z in &zones {
                let t = touching(z);
                if !t.is_empty() && ymax[z] < 2 * cap {
                    model.add_constraint(format!("ymax_{}_{k}_{z}", route.id), &t, Sense::Le, ymax[z] as f64);
                }
            }
        }
        return Ok(());
    }
    let mut t_vars: BTreeMap<usize, VarId> = BTreeMap::new();
    for &z in &zones {
        let terms = touching(z);
        if terms.is_empty() {
            continue;
        }
        let zone = &instance.zones[z];
        let tau = targets.tau_ii[z];
        let t = model.add_continuous(format!("t_{}_{k}_{}", route.id, zone.id), 0.0, f64::INFINITY);
        let a = model.add_binary(format!("a_{}_{k}_{}", route.id, zone.id));
        // ỹ ≤ 2cap·a, a ≤ x
        let mut act = terms.clone();
        act.push((a, -2.0 * cap as f64));
        model.add_constraint(format!("act_{}_{k}_{}", route.id, zone.id), &act, Sense::Le, 0.0);
        model.add_constraint(format!("act_x_{}_{k}_{}", route.id, zone.id), &[(a, 1.0), (x, -1.0)], Sense::Le, 0.0);
        // t ≥ 2·cut_i(ỹ) + τ(ỹ − 1) − M(1 − a)
        let big = (2.0 * zone.boundary.value(0.0) - tau).max(0.0) + 1.0;
        for (i, cut) in tangent_cuts(&zone.boundary, cap)?.iter().enumerate() {
            let mut row: Vec<(VarId, f64)> = vec![(t, 1.0)];
            row.extend(terms.iter().map(|&(v, m)| (v, -(2.0 * cut.slope + tau) * m)));
            row.push((a, -big));
            model.add_constraint(
                format!("cut_{}_{k}_{}_{i}", route.id, zone.id),
                &row,
                Sense::Ge,
                2.0 * cut.intercept - tau - big,
            );
        }
        if instance.detour_limits.per_zone {
            model.add_constraint(format!("tmax_{}_{k}_{}", route.id, zone.id), &[(t, 1.0)], Sense::Le, zone.max_detour);
        }
        t_vars.insert(z, t);
    }
    if let Some(limit) = instance.detour_limits.per_trip {
        let terms: Vec<(VarId, f64)> = t_vars.values().map(|&t| (t, 1.0)).collect();
        if !terms.is_empty() {
            model.add_constraint(format!("trip_{}_{k}", route.id), &terms, Sense::Le, limit);
        }
    }
    for (j, &(od, limit)) in instance.detour_limits.per_od.iter().enumerate() {
        if let Some(seg) = segment_zones(route, od) {
            let terms: Vec<(VarId, f64)> = seg.iter().filter_map(|z| t_vars.get(z)).map(|&t| (t, 1.0)).collect();
            if !terms.is_empty() {
                model.add_constraint(format!("od_{}_{k}_{j}", route.id), &terms, Sense::Le, limit);
            }
        }
    }
    Ok(())
}

/// The full P1 model over every category and route.
pub fn build_p1(instance: &ServiceInstance, targets: &Targets, encoding: DetourEncoding) -> Result<P1Model> {
    let cats: Vec<usize> = (0..instance.categories.len()).collect();
    let routes: Vec<usize> = (0..instance.routes.len()).collect();
    build_p1_subset(instance, &cats, &routes, targets, encoding)
}

fn solve_block(
    instance: &ServiceInstance,
    cats: &[usize],
    routes: &[usize],
    targets: &Targets,
    opts: &P1Options,
) -> Result<(Vec<(usize, Vec<u32>)>, bool)> {
    if cats.iter().all(|&e| targets.delta[e] == 0) {
        return Ok((Vec::new(), true));
    }
    for &e in cats {
        if targets.delta[e] > 0 && routes.iter().all(|&p| single_category_max(instance, p, e, &targets.tau_ii) == 0) {
            return Err(FlexError::InfeasibleAtReliability);
        }
    }
    let built = build_p1_subset(instance, cats, routes, targets, opts.encoding)?;
    let sol = milp::solve(&built.model, &opts.limits)?;
    debug!("p1 block: {} vars, {} rows, {} nodes", built.model.num_vars(), built.model.num_constraints(), sol.nodes);
    match sol.status {
        Status::Optimal | Status::Limit if sol.has_incumbent() => {}
        Status::Limit => return Err(FlexError::Solver("phase-1 limit reached without a feasible plan".into())),
        _ => return Err(FlexError::InfeasibleAtReliability),
    }
    let mut out = Vec::new();
    for (p, x, ys) in &built.slots {
        if sol.value(*x) > 0.5 {
            let counts = ys.iter().map(|y| y.map_or(0, |v| sol.value(v).round() as u32)).collect();
            out.push((*p, counts));
        }
    }
    Ok((out, sol.status == Status::Optimal))
}

/// Solves P1 for resolved targets.
pub fn solve_p1_targets(instance: &ServiceInstance, targets: &Targets, opts: &P1Options) -> Result<Plan> {
    if targets.delta.iter().all(|&d| d == 0) {
        return Ok(Plan::empty(instance, targets.clone()));
    }
    let all_cats: Vec<usize> = (0..instance.categories.len()).collect();
    let all_routes: Vec<usize> = (0..instance.routes.len()).collect();
    let mut assignment = Vec::new();
    let mut proven = true;
    let mut merged = false;
    if opts.decompose {
        let comps = decompose_instance(instance);
        if comps.len() > 1 {
            for c in &comps {
                let (a, pr) = solve_block(instance, &c.categories, &c.routes, targets, opts)?;
                assignment.extend(a);
                proven &= pr;
            }
            merged = assignment.len() <= instance.fleet.size;
        }
    }
    if !merged {
        let (a, pr) = solve_block(instance, &all_cats, &all_routes, targets, opts)?;
        assignment = a;
        proven = pr;
    }
    assignment.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    Ok(Plan::from_assignment(instance, targets.clone(), &assignment, proven))
}

pub fn solve_p1(instance: &ServiceInstance, rho: &ReliabilityVector) -> Result<Plan> {
    let targets = resolve_reliability(instance, rho)?;
    solve_p1_targets(instance, &targets, &P1Options::default())
}
