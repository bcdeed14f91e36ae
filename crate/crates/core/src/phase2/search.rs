//! Exact depth-first assignment search with capacity and detour bounds.
//!
//! Requests are decided in order of detour per unit ad hoc cost; each tries vehicles in index
//! order, then ad hoc. Among equal-cost optima the first one reached is kept.

use crate::domain::ServiceInstance;
use crate::stochastic::Scenario;

const NONE: usize = usize::MAX;
const TOL: f64 = 1e-9;

pub(crate) struct SearchResult {
    pub vehicle_of: Vec<Option<usize>>,
    pub nodes: u64,
    pub complete: bool,
}

struct VehicleState {
    route: usize,
    loads: Vec<u32>,
    zone_detour: Vec<f64>,
    members: Vec<usize>,
    /// Zonal detour is monotone in the served set for every zone of the route.
    monotone: bool,
    /// Per route zone: candidate local requests touching it and, per candidate, prefix sums of
    /// its reduction magnitudes against the others in decreasing order.
    zone_pools: Vec<(usize, Vec<usize>, Vec<Vec<f64>>)>,
}

struct Search<'a> {
    inst: &'a ServiceInstance,
    scen: &'a Scenario,
    requests: Vec<usize>,
    cand: Vec<Vec<usize>>,
    vehicles: Vec<VehicleState>,
    /// per local vehicle: local request indices sorted by value density
    by_density: Vec<Vec<usize>>,
    weight: Vec<Vec<u32>>,
    /// Per zone: touching local requests, their worst-case reduction totals, visiting vehicles.
    pooled: Vec<(usize, Vec<usize>, Vec<f64>, Vec<usize>)>,
    assign: Vec<usize>,
    best_assign: Vec<usize>,
    best_cost: f64,
    nodes: u64,
    node_limit: u64,
    aborted: bool,
}

impl<'a> Search<'a> {
    fn cost(&self, j: usize) -> f64 {
        self.scen.requests[self.requests[j]].adhoc_cost
    }

    fn capacity_ok(&self, v: usize, j: usize) -> bool {
        let req = &self.scen.requests[self.requests[j]];
        let st = &self.vehicles[v];
        let (a, b) = self.inst.routes[st.route].segment(req.od).expect("candidate traverses");
        let cap = self.inst.fleet.capacity;
        (a..b).all(|r| st.loads[r] + req.passengers <= cap)
    }

    /// Zone detours after adding request `j` to vehicle `v` (only touched zones change).
    fn detour_after(&self, v: usize, j: usize) -> [(usize, f64); 2] {
        let d = self.requests[j];
        let req = &self.scen.requests[d];
        let st = &self.vehicles[v];
        let mut out = [(req.od.origin, 0.0), (req.od.dest, 0.0)];
        for slot in out.iter_mut() {
            let z = slot.0;
            let t = &self.scen.matrices[z];
            let mut delta = t.diag(d);
            for &b in &st.members {
                delta += 2.0 * t.get(d, b);
            }
            slot.1 = st.zone_detour[z] + delta;
        }
        out
    }

    fn limits_ok(&self, route: usize, zone_detour: &[f64]) -> bool {
        let lim = &self.inst.detour_limits;
        let r = &self.inst.routes[route];
        if lim.per_zone && r.zones.iter().any(|&z| zone_detour[z] > self.inst.zones[z].max_detour + TOL) {
            return false;
        }
        if let Some(t) = lim.per_trip {
            let mut zs = r.zones.clone();
            zs.sort_unstable();
            zs.dedup();
            if zs.iter().map(|&z| zone_detour[z]).sum::<f64>() > t + TOL {
                return false;
            }
        }
        for &(od, t) in &lim.per_od {
            if let Some(seg) = crate::domain::segment_zones(r, od) {
                if seg.iter().map(|&z| zone_detour[z]).sum::<f64>() > t + TOL {
                    return false;
                }
            }
        }
        true
    }

    fn detour_ok(&self, v: usize, j: usize) -> bool {
        let st = &self.vehicles[v];
        let after = self.detour_after(v, j);
        let lim = &self.inst.detour_limits;
        if lim.per_zone && after.iter().any(|&(z, val)| val > self.inst.zones[z].max_detour + TOL) {
            return false;
        }
        if lim.per_trip.is_none() && lim.per_od.is_empty() {
            return true;
        }
        let mut zd = st.zone_detour.clone();
        for (z, val) in after {
            zd[z] = val;
        }
        self.limits_ok(st.route, &zd)
    }

    /// Can `j` still join `v` in some completion of the current state?
    fn acceptable(&self, v: usize, j: usize) -> bool {
        self.capacity_ok(v, j) && (!self.vehicles[v].monotone || self.detour_ok(v, j))
    }

    fn add(&mut self, v: usize, j: usize) {
        let after = self.detour_after(v, j);
        let req = &self.scen.requests[self.requests[j]];
        let st = &mut self.vehicles[v];
        let (a, b) = self.inst.routes[st.route].segment(req.od).unwrap();
        for r in a..b {
            st.loads[r] += req.passengers;
        }
        for (z, val) in after {
            st.zone_detour[z] = val;
        }
        st.members.push(self.requests[j]);
    }

    fn remove(&mut self, v: usize, j: usize) {
        let d = self.requests[j];
        let req = &self.scen.requests[d];
        let st = &mut self.vehicles[v];
        st.members.pop();
        let (a, b) = self.inst.routes[st.route].segment(req.od).unwrap();
        for r in a..b {
            st.loads[r] -= req.passengers;
        }
        for z in [req.od.origin, req.od.dest] {
            let t = &self.scen.matrices[z];
            let mut delta = t.diag(d);
            for &b in &st.members {
                delta += 2.0 * t.get(d, b);
            }
            st.zone_detour[z] -= delta;
        }
    }

    /// Upper bound on the ad hoc cost still avoidable from request `k` on.
    fn avoidable_bound(&self, k: usize) -> f64 {
        let n = self.requests.len();
        let nv = self.vehicles.len();
        let mut ok = vec![false; nv * n];
        let mut accept = vec![false; n];
        let mut any_total = 0.0;
        for j in k..n {
            for &v in &self.cand[j] {
                if self.acceptable(v, j) {
                    ok[v * n + j] = true;
                    accept[j] = true;
                }
            }
            if accept[j] {
                any_total += self.cost(j);
            }
        }
        let any_total = any_total.min(self.pooled_bound(k, &accept, &ok));
        let mut per_vehicle = 0.0;
        for v in 0..self.vehicles.len() {
            let st = &self.vehicles[v];
            let cap = self.inst.fleet.capacity;
            let mut room: f64 = st.loads.iter().map(|&l| (cap - l) as f64).sum();
            let mut val = 0.0;
            for &j in &self.by_density[v] {
                if j < k || !ok[v * n + j] {
                    continue;
                }
                let w = self.weight[v][j] as f64;
                if w <= room {
                    room -= w;
                    val += self.cost(j);
                } else {
                    val += self.cost(j) * room / w;
                    break;
                }
            }
            per_vehicle += val.min(self.count_bound(v, k, &ok[v * n..(v + 1) * n]));
            if per_vehicle >= any_total {
                return any_total;
            }
        }
        per_vehicle.min(any_total)
    }

    /// Bound from the summed detour slack of all vehicles in each zone, every vehicle
    /// competing for the same cheap requests.
    fn pooled_bound(&self, k: usize, accept: &[bool], ok: &[bool]) -> f64 {
        let n = self.requests.len();
        if self.pooled.is_empty() {
            return f64::INFINITY;
        }
        let open: Vec<usize> = (k..self.requests.len()).filter(|&j| accept[j]).collect();
        let (mut n_sum, mut n_min) = (0usize, usize::MAX);
        for (z, pool, red, visiting) in &self.pooled {
            let t = &self.scen.matrices[*z];
            let tbar = self.inst.zones[*z].max_detour;
            let slack: f64 =
                visiting.iter().map(|&v| (tbar - self.vehicles[v].zone_detour[*z]).max(0.0)).sum::<f64>() + TOL;
            let mut m: Vec<f64> = pool
                .iter()
                .zip(red)
                .filter(|(j, _)| **j >= k && accept[**j])
                .map(|(&j, &r)| {
                    let d = self.requests[j];
                    let base = self.cand[j]
                        .iter()
                        .filter(|&&v| ok[v * n + j])
                        .map(|&v| t.diag(d) + 2.0 * self.vehicles[v].members.iter().map(|&b| t.get(d, b)).sum::<f64>())
                        .fold(f64::INFINITY, f64::min);
                    base - r
                })
                .collect();
            let touching = m.len();
            m.sort_by(|a, b| a.total_cmp(b));
            let mut acc = 0.0;
            let nz = m
                .iter()
                .take_while(|&&x| {
                    acc += x;
                    acc <= slack
                })
                .count();
            n_sum += nz;
            n_min = n_min.min(nz + open.len() - touching);
        }
        let kmax = (n_sum / 2).min(n_min).min(open.len());
        let mut costs: Vec<f64> = open.iter().map(|&j| self.cost(j)).collect();
        costs.sort_by(|a, b| b.total_cmp(a));
        costs[..kmax].iter().sum()
    }

    /// Value of the most valuable requests vehicle `v` can still add under the zonal detour
    /// limits, counting requests only.
    fn count_bound(&self, v: usize, k: usize, ok: &[bool]) -> f64 {
        let st = &self.vehicles[v];
        let open: Vec<usize> = self.by_density[v].iter().copied().filter(|&j| j >= k && ok[j]).collect();
        if open.is_empty() {
            return 0.0;
        }
        let mut kmax_sum = 0usize;
        let mut kmax_min = usize::MAX;
        if self.inst.detour_limits.per_zone {
            for (z, pool, prefix) in &st.zone_pools {
                let t = &self.scen.matrices[*z];
                let slack = self.inst.zones[*z].max_detour - st.zone_detour[*z] + TOL;
                let cand: Vec<(usize, f64)> = pool
                    .iter()
                    .enumerate()
                    .filter(|(_, &j)| j >= k && ok[j])
                    .map(|(i, &j)| {
                        let d = self.requests[j];
                        let base = t.diag(d) + 2.0 * st.members.iter().map(|&b| t.get(d, b)).sum::<f64>();
                        (i, base)
                    })
                    .collect();
                let mut kz = cand.len();
                for n in 1..=cand.len() {
                    let mut m: Vec<f64> = cand.iter().map(|&(i, base)| base - prefix[i][n - 1]).collect();
                    m.select_nth_unstable_by(n - 1, |a, b| a.total_cmp(b));
                    if m[..n].iter().sum::<f64>() > slack {
                        kz = n - 1;
                        break;
                    }
                }
                let outside = open.len() - cand.len();
                kmax_min = kmax_min.min(kz + outside);
                kmax_sum += kz;
            }
        } else {
            return f64::INFINITY;
        }
        let kmax = (kmax_sum / 2).min(kmax_min).min(open.len());
        let mut costs: Vec<f64> = open.iter().map(|&j| self.cost(j)).collect();
        costs.sort_by(|a, b| b.total_cmp(a));
        costs[..kmax].iter().sum()
    }

    fn leaf_ok(&self) -> bool {
        self.vehicles.iter().all(|st| st.monotone || self.limits_ok(st.route, &st.zone_detour))
    }

    fn dfs(&mut self, k: usize, cost: f64, remaining: f64) {
        if self.aborted {
            return;
        }
        self.nodes += 1;
        if self.nodes > self.node_limit {
            self.aborted = true;
            return;
        }
        let n = self.requests.len();
        if k == n {
            if cost < self.best_cost - TOL && self.leaf_ok() {
                self.best_cost = cost;
                self.best_assign.clone_from(&self.assign);
            }
            return;
        }
        if cost + remaining - self.avoidable_bound(k) >= self.best_cost - TOL {
            return;
        }
        let c = self.cost(k);
        for idx in 0..self.cand[k].len() {
            let v = self.cand[k][idx];
            if self.vehicles[v].members.is_empty() {
                let route = self.vehicles[v].route;
                let earlier_empty = self.cand[k][..idx]
                    .iter()
                    .any(|&u| self.vehicles[u].route == route && self.vehicles[u].members.is_empty());
                if earlier_empty {
                    continue;
                }
            }
            if !self.capacity_ok(v, k) {
                continue;
            }
            if self.vehicles[v].monotone && !self.detour_ok(v, k) {
                continue;
            }
            self.add(v, k);
            self.assign[k] = v;
            self.dfs(k + 1, cost, remaining - c);
            self.assign[k] = NONE;
            self.remove(v, k);
        }
        self.dfs(k + 1, cost + c, remaining - c);
    }
}

/// Largest number of requests from `group` that fit together in one vehicle load.
fn max_fitting(scen: &Scenario, group: impl Iterator<Item = usize>, cap: u32) -> usize {
    let mut n: Vec<u32> = group.map(|d| scen.requests[d].passengers).collect();
    n.sort_unstable();
    let mut used = 0;
    n.iter().take_while(|&&x| {
        used += x;
        used <= cap
    })
    .count()
}

/// Does adding a request to a vehicle never lower its detour in zone `z`?
///
/// Pickups at `z` share one load and so do drop-offs, which bounds how many requests
/// touching `z` can ride together; each must outweigh its largest possible reductions.
fn zone_monotone(scen: &Scenario, z: usize, pool: &[usize], cap: u32) -> bool {
    let touching: Vec<usize> = pool.iter().copied().filter(|&d| scen.requests[d].touches(z)).collect();
    let kmax = max_fitting(scen, touching.iter().copied().filter(|&d| scen.requests[d].od.origin == z), cap)
        + max_fitting(scen, touching.iter().copied().filter(|&d| scen.requests[d].od.dest == z), cap);
    if kmax <= 1 {
        return true;
    }
    let t = &scen.matrices[z];
    touching.iter().all(|&b| {
        let mut red: Vec<f64> = touching.iter().filter(|&&d| d != b).map(|&d| (-t.get(b, d)).max(0.0)).collect();
        red.sort_by(|x, y| y.total_cmp(x));
        t.diag(b) >= 2.0 * red.iter().take(kmax - 1).sum::<f64>() - TOL
    })
}

/// Solves one connected block of requests and vehicles.
pub(crate) fn solve_block(
    inst: &ServiceInstance,
    scen: &Scenario,
    routes: &[usize],
    mut requests: Vec<usize>,
    vehicles: Vec<usize>,
    node_limit: u64,
) -> (Vec<(usize, Option<usize>)>, u64, bool) {
    let key = |d: usize| {
        let r = &scen.requests[d];
        (r.origin_detour + r.dest_detour) / r.adhoc_cost.max(1e-12)
    };
    requests.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
    let n = requests.len();
    let nz = inst.zones.len();
    let cand: Vec<Vec<usize>> = requests
        .iter()
        .map(|&d| {
            (0..vehicles.len()).filter(|&lv| inst.routes[routes[vehicles[lv]]].traverses(scen.requests[d].od)).collect()
        })
        .collect();
    let mut states = Vec::new();
    let mut by_density = Vec::new();
    let mut weight = Vec::new();
    for (lv, &gv) in vehicles.iter().enumerate() {
        let route = routes[gv];
        let r = &inst.routes[route];
        let pool: Vec<usize> = (0..n).filter(|&j| cand[j].contains(&lv)).map(|j| requests[j]).collect();
        let mut zs = r.zones.clone();
        zs.sort_unstable();
        zs.dedup();
        let monotone = zs.iter().all(|&z| zone_monotone(scen, z, &pool, inst.fleet.capacity));
        let w: Vec<u32> = (0..n)
            .map(|j| {
                let req = &scen.requests[requests[j]];
                r.segment(req.od).map_or(u32::MAX, |(a, b)| req.passengers * (b - a) as u32)
            })
            .collect();
        let mut order: Vec<usize> = (0..n).filter(|&j| cand[j].contains(&lv)).collect();
        order.sort_by(|&x, &y| {
            let dx = scen.requests[requests[x]].adhoc_cost / w[x] as f64;
            let dy = scen.requests[requests[y]].adhoc_cost / w[y] as f64;
            dy.total_cmp(&dx).then(x.cmp(&y))
        });
        let zone_pools = zs
            .iter()
            .map(|&z| {
                let t = &scen.matrices[z];
                let pool: Vec<usize> =
                    (0..n).filter(|&j| cand[j].contains(&lv) && scen.requests[requests[j]].touches(z)).collect();
                let prefix = pool
                    .iter()
                    .map(|&j| {
                        let d = requests[j];
                        let mut red: Vec<f64> =
                            pool.iter().filter(|&&i| i != j).map(|&i| (-t.get(d, requests[i])).max(0.0)).collect();
                        red.sort_by(|a, b| b.total_cmp(a));
                        let mut acc = vec![0.0];
                        for x in red {
                            acc.push(acc.last().unwrap() + x);
                        }
                        acc
                    })
                    .collect();
                (z, pool, prefix)
            })
            .collect();
        states.push(VehicleState {
            route,
            loads: vec![0; r.m() - 1],
            zone_detour: vec![0.0; nz],
            members: Vec::new(),
            monotone,
            zone_pools,
        });
        by_density.push(order);
        weight.push(w);
    }
    let mut pooled = Vec::new();
    if inst.detour_limits.per_zone {
        for z in 0..nz {
            let visiting: Vec<usize> = (0..vehicles.len()).filter(|&lv| inst.routes[routes[vehicles[lv]]].visits(z)).collect();
            let pool: Vec<usize> = (0..n).filter(|&j| scen.requests[requests[j]].touches(z) && !cand[j].is_empty()).collect();
            if visiting.is_empty() || pool.is_empty() {
                continue;
            }
            let ids: Vec<usize> = pool.iter().map(|&j| requests[j]).collect();
            let kmax = max_fitting(scen, ids.iter().copied().filter(|&d| scen.requests[d].od.origin == z), inst.fleet.capacity)
                + max_fitting(scen, ids.iter().copied().filter(|&d| scen.requests[d].od.dest == z), inst.fleet.capacity);
            let t = &scen.matrices[z];
            let red = ids
                .iter()
                .map(|&d| {
                    let mut r: Vec<f64> = ids.iter().filter(|&&b| b != d).map(|&b| (-t.get(d, b)).max(0.0)).collect();
                    r.sort_by(|a, b| b.total_cmp(a));
                    r.iter().take(kmax.saturating_sub(1)).sum()
                })
                .collect();
            pooled.push((z, pool, red, visiting));
        }
    }
    let total: f64 = requests.iter().map(|&d| scen.requests[d].adhoc_cost).sum();
    let mut s = Search {
        pooled,
        inst,
        scen,
        requests,
        cand,
        vehicles: states,
        by_density,
        weight,
        assign: vec![NONE; n],
        best_assign: vec![NONE; n],
        best_cost: total + 1.0,
        nodes: 0,
        node_limit,
        aborted: false,
    };
    s.dfs(0, 0.0, total);
    let out = s
        .requests
        .iter()
        .zip(&s.best_assign)
        .map(|(&d, &lv)| (d, (lv != NONE).then(|| vehicles[lv])))
        .collect();
    (out, s.nodes, !s.aborted)
}

/// Connected blocks of the request–vehicle serving graph.
pub(crate) fn blocks(inst: &ServiceInstance, scen: &Scenario, routes: &[usize]) -> Vec<(Vec<usize>, Vec<usize>)> {
    let nr = scen.requests.len();
    let nv = routes.len();
    let mut parent: Vec<usize> = (0..nr + nv).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut has_edge = vec![false; nr];
    for d in 0..nr {
        for v in 0..nv {
            if inst.routes[routes[v]].traverses(scen.requests[d].od) {
                has_edge[d] = true;
                let (a, b) = (find(&mut parent, d), find(&mut parent, nr + v));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut out: Vec<(usize, Vec<usize>, Vec<usize>)> = Vec::new();
    for d in (0..nr).filter(|&d| has_edge[d]) {
        let r = find(&mut parent, d);
        match out.iter_mut().find(|b| b.0 == r) {
            Some(b) => b.1.push(d),
            None => out.push((r, vec![d], Vec::new())),
        }
    }
    for v in 0..nv {
        let r = find(&mut parent, nr + v);
        if let Some(b) = out.iter_mut().find(|b| b.0 == r) {
            b.2.push(v);
        }
    }
    out.into_iter().map(|(_, r, v)| (r, v)).collect()
}

pub(crate) fn search(inst: &ServiceInstance, scen: &Scenario, routes: &[usize], node_limit: u64) -> SearchResult {
    let mut vehicle_of = vec![None; scen.requests.len()];
    let mut nodes = 0;
    let mut complete = true;
    for (reqs, vehs) in blocks(inst, scen, routes) {
        let (assign, n, ok) = solve_block(inst, scen, routes, reqs, vehs, node_limit);
        nodes += n;
        complete &= ok;
        for (d, v) in assign {
            vehicle_of[d] = v;
        }
    }
    SearchResult { vehicle_of, nodes, complete }
}
