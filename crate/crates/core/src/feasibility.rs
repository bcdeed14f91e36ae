//! Plain re-checks of plans and assignments against the original constraints.
//!
//! Nothing here reuses the model builders: loads go through the converting matrix and
//! detours through the raw quadratic form.

use std::fmt;

use crate::detour::zonal_detour;
use crate::domain::{build_converting_matrix, od_load, segment_zones, ServiceInstance};
use crate::phase1::{Plan, Targets};
use crate::stochastic::Scenario;

/// Off-route weight of the converting matrix used by the checker.
pub const CHECK_M1: f64 = 1e6;
const TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub vehicle: Option<usize>,
    pub what: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.vehicle {
            Some(v) => write!(f, "vehicle {v}: {}", self.what),
            None => write!(f, "{}", self.what),
        }
    }
}

fn push(out: &mut Vec<Violation>, vehicle: Option<usize>, what: String) {
    out.push(Violation { vehicle, what });
}

/// Detour predicates of every configured mode given per-zone detours of one vehicle.
fn check_detours(inst: &ServiceInstance, route: usize, zd: &[f64], v: usize, out: &mut Vec<Violation>) {
    let lim = &inst.detour_limits;
    let r = &inst.routes[route];
    let mut zones = r.zones.clone();
    zones.sort_unstable();
    zones.dedup();
    if lim.per_zone {
        for &z in &zones {
            if zd[z] > inst.zones[z].max_detour + TOL {
                push(out, Some(v), format!("detour {:.4} in zone {} exceeds {}", zd[z], inst.zones[z].id, inst.zones[z].max_detour));
            }
        }
    }
    for (z, &d) in zd.iter().enumerate() {
        if d > TOL && !r.visits(z) {
            push(out, Some(v), format!("detour in zone {} off its route", inst.zones[z].id));
        }
    }
    if let Some(t) = lim.per_trip {
        let s: f64 = zones.iter().map(|&z| zd[z]).sum();
        if s > t + TOL {
            push(out, Some(v), format!("trip detour {s:.4} exceeds {t}"));
        }
    }
    for &(od, t) in &lim.per_od {
        if let Some(seg) = segment_zones(r, od) {
            let s: f64 = seg.iter().map(|&z| zd[z]).sum();
            if s > t + TOL {
                push(out, Some(v), format!("detour {s:.4} along {} exceeds {t}", inst.od_label(od)));
            }
        }
    }
}

/// Checks a phase-1 plan: fleet, demand coverage, capacity per converting row, planned detours.
pub fn check_plan(inst: &ServiceInstance, targets: &Targets, plan: &Plan) -> Vec<Violation> {
    let mut out = Vec::new();
    let ne = inst.categories.len();
    if plan.vehicles.len() > inst.fleet.size {
        push(&mut out, None, format!("{} vehicles exceed fleet {}", plan.vehicles.len(), inst.fleet.size));
    }
    let cost: f64 = plan.vehicles.iter().map(|v| inst.route_cost(v.route)).sum();
    if (cost - plan.fixed_cost).abs() > TOL {
        push(&mut out, None, format!("fixed cost {} differs from route costs {cost}", plan.fixed_cost));
    }
    let mut covered = vec![0u32; ne];
    for (v, veh) in plan.vehicles.iter().enumerate() {
        if veh.counts.len() != ne {
            push(&mut out, Some(v), "count vector has the wrong length".into());
            continue;
        }
        let route = &inst.routes[veh.route];
        let b = match build_converting_matrix(route, &inst.od_set, CHECK_M1) {
            Ok(b) => b,
            Err(e) => {
                push(&mut out, Some(v), e.to_string());
                continue;
            }
        };
        let mut zeta = vec![0.0; inst.od_set.len()];
        let mut zone_y = vec![0u32; inst.zones.len()];
        for (e, &y) in veh.counts.iter().enumerate() {
            covered[e] += y;
            if y == 0 {
                continue;
            }
            let c = &inst.categories[e];
            match inst.od_set.iter().position(|&od| od == c.od) {
                Some(k) => zeta[k] += (y * c.passengers) as f64,
                None => push(&mut out, Some(v), format!("category {} has no OD column", c.id)),
            }
            zone_y[c.od.origin] += y;
            zone_y[c.od.dest] += y;
        }
        for (row, load) in b.apply(&zeta).into_iter().enumerate() {
            if load > inst.fleet.capacity as f64 + TOL {
                push(&mut out, Some(v), format!("load {load} leaving zone row {row} exceeds capacity"));
            }
        }
        let zd: Vec<f64> = (0..inst.zones.len())
            .map(|z| {
                let y = zone_y[z];
                if y == 0 {
                    0.0
                } else {
                    2.0 * inst.zones[z].boundary.value(y as f64) + (y - 1) as f64 * targets.tau_ii[z]
                }
            })
            .collect();
        check_detours(inst, veh.route, &zd, v, &mut out);
    }
    for e in 0..ne {
        if covered[e] != targets.delta[e] {
            push(&mut out, None, format!("category {} covered {} times, target {}", inst.categories[e].id, covered[e], targets.delta[e]));
        }
    }
    out
}

/// Checks a full first- and second-stage solution for one scenario.
///
/// `routes[v]` is the route of vehicle v and `vehicle_of[d]` the vehicle serving request d.
pub fn check_scenario(
    inst: &ServiceInstance,
    routes: &[usize],
    scen: &Scenario,
    vehicle_of: &[Option<usize>],
) -> Vec<Violation> {
    let mut out = Vec::new();
    if routes.len() > inst.fleet.size {
        push(&mut out, None, format!("{} vehicles exceed fleet {}", routes.len(), inst.fleet.size));
    }
    if vehicle_of.len() != scen.requests.len() {
        push(&mut out, None, "assignment length differs from the request count".into());
        return out;
    }
    for (d, v) in vehicle_of.iter().enumerate() {
        if let Some(v) = v {
            if *v >= routes.len() {
                push(&mut out, None, format!("request {d} on missing vehicle {v}"));
            }
        }
    }
    for (v, &p) in routes.iter().enumerate() {
        let w: Vec<bool> = vehicle_of.iter().map(|x| *x == Some(v)).collect();
        let zeta: Vec<f64> = od_load(&w, &scen.requests, &inst.od_set).into_iter().map(f64::from).collect();
        let on: usize = w.iter().filter(|&&b| b).count();
        let counted: u32 = od_load(&w, &scen.requests, &inst.od_set).iter().sum();
        let expected: u32 = scen.requests.iter().zip(&w).filter(|(_, &b)| b).map(|(r, _)| r.passengers).sum();
        if counted != expected {
            push(&mut out, Some(v), format!("{on} requests carry OD pairs outside the OD set"));
        }
        let b = match build_converting_matrix(&inst.routes[p], &inst.od_set, CHECK_M1) {
            Ok(b) => b,
            Err(e) => {
                push(&mut out, Some(v), e.to_string());
                continue;
            }
        };
        for (row, load) in b.apply(&zeta).into_iter().enumerate() {
            if load > inst.fleet.capacity as f64 + TOL {
                push(&mut out, Some(v), format!("load {load} at row {row} exceeds capacity"));
            }
        }
        let mut zd = vec![0.0; inst.zones.len()];
        for (z, slot) in zd.iter_mut().enumerate() {
            match zonal_detour(&scen.matrices[z], &w) {
                Ok(x) => *slot = x,
                Err(e) => push(&mut out, Some(v), e.to_string()),
            }
        }
        check_detours(inst, p, &zd, v, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn worked_example_assignments() {
        let mut inst = fixtures::worked_example();
        let scen = fixtures::worked_example_scenario();
        assert!(check_scenario(&inst, &[0], &scen, &[Some(0); 4]).is_empty());
        inst.zones[0].max_detour = 4.0;
        let bad = check_scenario(&inst, &[0], &scen, &[Some(0); 4]);
        assert_eq!(bad.len(), 1, "{bad:?}");
        assert!(check_scenario(&inst, &[0], &scen, &[Some(0), Some(0), None, Some(0)]).is_empty());
        inst.fleet.capacity = 6;
        let over = check_scenario(&inst, &[0], &scen, &[Some(0), Some(0), Some(0), None]);
        assert!(over.iter().any(|v| v.what.contains("exceeds capacity")));
    }
}
