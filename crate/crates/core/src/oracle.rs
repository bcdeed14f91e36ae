//! Reference solvers: exact two-stage enumeration over deployments and reliability grids.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::domain::ServiceInstance;
use crate::error::{FlexError, Result};
use crate::feasibility::{check_plan, check_scenario};
use crate::optimizer::{active_components, SolutionCache};
use crate::phase1::{resolve_reliability, solve_p1_targets, P1Options, Plan, ReliabilityVector, Targets};
use crate::phase2::{evaluate, evaluate_routes, CostReport, P2Options};
use crate::stochastic::{detour_quantile, reliability_for_demand, Scenario};

/// Default cap on the number of canonical deployments.
pub const ENUMERATION_CAP: u128 = 100_000;
/// Default cap on grid dimensions.
pub const MAX_GRID_DIMS: usize = 3;

/// Vehicle counts per route, sorted by route index, zero counts omitted.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Deployment(pub Vec<(usize, usize)>);

impl Deployment {
    pub fn from_routes(routes: &[usize]) -> Self {
        let mut map = std::collections::BTreeMap::new();
        for &r in routes {
            *map.entry(r).or_insert(0usize) += 1;
        }
        Deployment(map.into_iter().collect())
    }

    /// One route index per vehicle, ascending.
    pub fn routes(&self) -> Vec<usize> {
        self.0.iter().flat_map(|&(r, n)| std::iter::repeat(r).take(n)).collect()
    }

    pub fn vehicles(&self) -> usize {
        self.0.iter().map(|p| p.1).sum()
    }

    pub fn fixed_cost(&self, inst: &ServiceInstance) -> f64 {
        self.0.iter().map(|&(r, n)| n as f64 * inst.route_cost(r)).sum()
    }
}

fn binom(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// Number of route multisets of size at most `fleet` over `routes` routes.
pub fn deployment_count(routes: usize, fleet: usize) -> u128 {
    binom((routes + fleet) as u128, fleet as u128)
}

/// All multisets of size ≤ `fleet`, as sorted route lists.
pub fn enumerate_deployments(routes: usize, fleet: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..fleet {
        let mut next = Vec::new();
        for d in &frontier {
            let start = d.last().copied().unwrap_or(0);
            for r in start..routes {
                let mut e: Vec<usize> = d.clone();
                e.push(r);
                next.push(e);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct P0Solution {
    pub deployment: Deployment,
    pub report: CostReport,
    /// Deployments whose phase-2 recourse was solved.
    pub evaluated: usize,
    /// False if some phase-2 solve stopped at its node limit.
    pub proven_optimal: bool,
}

/// Exact two-stage optimum by enumeration of canonical deployments.
///
/// Deployments whose fixed cost alone reaches the incumbent are skipped, since ad hoc cost is
/// non-negative.
pub fn solve_p0_exact(inst: &ServiceInstance, scenarios: &[Scenario], opts: &P2Options, cap: u128) -> Result<P0Solution> {
    let nr = inst.routes.len();
    let count = deployment_count(nr, inst.fleet.size);
    if count > cap {
        return Err(FlexError::EnumerationTooLarge(count, cap));
    }
    let mut all = enumerate_deployments(nr, inst.fleet.size);
    let cost = |d: &Vec<usize>| d.iter().map(|&r| inst.route_cost(r)).sum::<f64>();
    all.sort_by(|a, b| cost(a).total_cmp(&cost(b)).then_with(|| a.cmp(b)));
    let mut best: Option<(Vec<usize>, CostReport)> = None;
    let mut evaluated = 0;
    let mut proven = true;
    for d in all {
        let fc = cost(&d);
        if let Some((_, b)) = &best {
            if fc >= b.total_cost - 1e-9 {
                break;
            }
        }
        let (report, _) = evaluate_routes(inst, &d, fc, scenarios, opts)?;
        evaluated += 1;
        proven &= report.proven_optimal;
        let better = best.as_ref().is_none_or(|(_, b)| report.total_cost < b.total_cost - 1e-9);
        if better {
            best = Some((d, report));
        }
    }
    let (d, report) = best.expect("the empty deployment is always evaluated");
    Ok(P0Solution { deployment: Deployment::from_routes(&d), report, evaluated, proven_optimal: proven })
}

#[derive(Clone, Debug, Serialize)]
pub struct GridRow {
    pub rho: Vec<f64>,
    pub feasible: bool,
    pub vehicles: usize,
    pub deployment: Vec<usize>,
    pub fixed_cost: f64,
    pub expected_adhoc: f64,
    pub total_cost: f64,
}

/// Evaluates reliability vectors with shared phase-1 and phase-2 caches.
pub struct GridEvaluator<'a> {
    pub inst: &'a ServiceInstance,
    pub scenarios: &'a [Scenario],
    pub p1: P1Options,
    pub p2: P2Options,
    pub cache: SolutionCache,
    plans: HashMap<(Vec<u32>, Vec<u64>), Option<Plan>>,
}

impl<'a> GridEvaluator<'a> {
    pub fn new(inst: &'a ServiceInstance, scenarios: &'a [Scenario]) -> Self {
        GridEvaluator { inst, scenarios, p1: P1Options::default(), p2: P2Options::default(), cache: SolutionCache::new(), plans: HashMap::new() }
    }

    pub fn plan(&mut self, targets: &Targets) -> Result<Option<Plan>> {
        let key = (targets.delta.clone(), targets.tau_ii.iter().map(|t| t.to_bits()).collect());
        if let Some(p) = self.plans.get(&key) {
            return Ok(p.clone());
        }
        let p = match solve_p1_targets(self.inst, targets, &self.p1) {
            Ok(p) => Some(p),
            Err(FlexError::InfeasibleAtReliability) => None,
            Err(e) => return Err(e),
        };
        self.plans.insert(key, p.clone());
        Ok(p)
    }

    pub fn row(&mut self, rho: &ReliabilityVector) -> Result<GridRow> {
        let targets = resolve_reliability(self.inst, rho)?;
        let Some(plan) = self.plan(&targets)? else {
            return Ok(GridRow {
                rho: rho.to_vec(),
                feasible: false,
                vehicles: 0,
                deployment: Vec::new(),
                fixed_cost: f64::NAN,
                expected_adhoc: f64::NAN,
                total_cost: f64::INFINITY,
            });
        };
        let r = self.cache.evaluate(self.inst, &plan, self.scenarios, &self.p2)?;
        Ok(GridRow {
            rho: rho.to_vec(),
            feasible: true,
            vehicles: plan.vehicles.len(),
            deployment: plan.deployment(),
            fixed_cost: r.fixed_cost,
            expected_adhoc: r.expected_adhoc,
            total_cost: r.total_cost,
        })
    }
}

/// Grid levels 0, step, 2·step, … below 1.
pub fn grid_levels(step: f64) -> Vec<f64> {
    let n = (1.0 / step - 1e-9).floor() as usize;
    (0..=n).map(|i| (i as f64 * step * 1e9).round() / 1e9).filter(|&v| v < 1.0).collect()
}

/// Full-factorial grid over the active reliability components.
///
/// Zones no category touches keep `base_detour`; they cannot affect a plan.
pub fn rho_grid(ev: &mut GridEvaluator, step: f64, base_detour: f64, max_dims: usize) -> Result<Vec<GridRow>> {
    let inst = ev.inst;
    let (cats, zones) = active_components(inst);
    let dims = cats.len() + zones.len();
    if dims > max_dims {
        return Err(FlexError::GridDimension(dims, max_dims));
    }
    let levels = grid_levels(step);
    let ne = inst.categories.len();
    let mut rows = Vec::new();
    let mut idx = vec![0usize; dims];
    loop {
        let mut rho = ReliabilityVector::uniform(inst, 0.0, base_detour);
        for (k, &e) in cats.iter().enumerate() {
            rho.volume[e] = levels[idx[k]];
        }
        for (k, &z) in zones.iter().enumerate() {
            rho.detour[z] = levels[idx[cats.len() + k]];
        }
        rows.push(ev.row(&rho)?);
        let _ = ne;
        // odometer increment, last component fastest
        let mut k = dims;
        loop {
            if k == 0 {
                return Ok(rows);
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < levels.len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Scan of a common volume reliability with every detour reliability held at `detour`.
pub fn volume_scan(ev: &mut GridEvaluator, values: &[f64], detour: f64) -> Result<Vec<GridRow>> {
    values
        .iter()
        .map(|&r| {
            let rho = ReliabilityVector::uniform(ev.inst, r, detour);
            ev.row(&rho)
        })
        .collect()
}

/// Rows attaining the grid minimum within `tol`.
pub fn argmin_rows(rows: &[GridRow], tol: f64) -> Vec<&GridRow> {
    let best = rows.iter().map(|r| r.total_cost).fold(f64::INFINITY, f64::min);
    rows.iter().filter(|r| r.total_cost <= best + tol).collect()
}

/// Sign changes in the discrete differences of a series, ignoring flat steps.
pub fn sign_changes(values: &[f64]) -> usize {
    let signs: Vec<i8> = values
        .windows(2)
        .filter_map(|w| {
            let d = w[1] - w[0];
            if d.abs() < 1e-9 || !d.is_finite() {
                None
            } else {
                Some(d.signum() as i8)
            }
        })
        .collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Strict local minima of a piecewise-constant series: plateaus lower than both neighbours.
pub fn local_minima(values: &[f64]) -> usize {
    let mut plateaus: Vec<f64> = Vec::new();
    for &v in values {
        if plateaus.last().is_none_or(|&p| (p - v).abs() > 1e-9) {
            plateaus.push(v);
        }
    }
    (0..plateaus.len())
        .filter(|&i| {
            let left = i == 0 || plateaus[i - 1] > plateaus[i];
            let right = i + 1 == plateaus.len() || plateaus[i + 1] > plateaus[i];
            left && right && plateaus.len() > 1
        })
        .count()
}

pub fn write_grid_csv(path: &Path, inst: &ServiceInstance, rows: &[GridRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut head: Vec<String> = inst.categories.iter().map(|c| format!("rho_I_{}", c.id)).collect();
    head.extend(inst.zones.iter().map(|z| format!("rho_II_{}", z.id)));
    head.extend(["feasible", "vehicles", "deployment", "fixed_cost", "expected_adhoc", "total_cost"].map(String::from));
    w.write_record(&head)?;
    for r in rows {
        let mut rec: Vec<String> = r.rho.iter().map(|x| x.to_string()).collect();
        let dep: Vec<String> = r.deployment.iter().map(|&p| inst.routes[p].id.clone()).collect();
        rec.extend([
            r.feasible.to_string(),
            r.vehicles.to_string(),
            dep.join(" "),
            r.fixed_cost.to_string(),
            r.expected_adhoc.to_string(),
            r.total_cost.to_string(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct EquivalenceReport {
    /// Reasons the instance falls outside the propositions' assumptions.
    pub assumption_violations: Vec<String>,
    /// Checker findings on sampled phase-1/phase-2 solutions.
    pub feasibility_violations: Vec<String>,
    pub solutions_checked: usize,
    pub p0_deployment: Option<Deployment>,
    pub p0_total: Option<f64>,
    pub constructed_rho: Option<ReliabilityVector>,
    pub constructed_fixed_cost: Option<f64>,
    pub deployment_fixed_cost: Option<f64>,
}

impl EquivalenceReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.assumption_violations.is_empty()
            && self.feasibility_violations.is_empty()
            && match (self.constructed_fixed_cost, self.deployment_fixed_cost) {
                (Some(a), Some(b)) => (a - b).abs() <= tol,
                _ => false,
            }
    }
}

/// Per-OD assumptions: one traversing route that starts and ends at the OD, route costs
/// additive over segments, and a single-passenger category per demanded OD.
pub fn assumption_violations(inst: &ServiceInstance) -> Vec<String> {
    let mut out = Vec::new();
    for &od in &inst.od_set {
        let direct: Vec<usize> = (0..inst.routes.len())
            .filter(|&p| {
                let z = &inst.routes[p].zones;
                z.first() == Some(&od.origin) && z.last() == Some(&od.dest)
            })
            .collect();
        if direct.len() != 1 {
            out.push(format!("OD {} has {} direct routes", inst.od_label(od), direct.len()));
        }
        let demanded = inst.categories.iter().any(|c| c.od == od);
        if demanded && !inst.categories.iter().any(|c| c.od == od && c.passengers == 1) {
            out.push(format!("OD {} has no single-passenger category", inst.od_label(od)));
        }
    }
    for (p, r) in inst.routes.iter().enumerate() {
        let z = &r.zones;
        let od = crate::domain::OdPair::new(z[0], z[z.len() - 1]);
        if !inst.od_set.contains(&od) {
            out.push(format!("route {} serves no OD of the OD set", r.id));
            continue;
        }
        let parts: Option<f64> = z
            .windows(2)
            .map(|w| inst.direct_cost(crate::domain::OdPair::new(w[0], w[1])))
            .sum();
        if let Some(s) = parts {
            if (s - inst.route_cost(p)).abs() > 1e-6 {
                out.push(format!("route {} cost {} is not the sum of its legs {s}", r.id, inst.route_cost(p)));
            }
        }
    }
    out
}

/// Reliabilities that reproduce a deployment: single-passenger volume equal to the seats of
/// the direct vehicles, other volumes at zero and every segment detour at zero.
pub fn construct_rho(inst: &ServiceInstance, deployment: &Deployment) -> std::result::Result<ReliabilityVector, String> {
    let cap = inst.fleet.capacity;
    let mut rho = ReliabilityVector::uniform(inst, 0.0, 0.0);
    for (z, zone) in inst.zones.iter().enumerate() {
        let tau0 = detour_quantile(&zone.detour_dist, 0.0).map_err(|e| e.to_string())?;
        if tau0 > 1e-12 {
            return Err(format!("zone {} detour law has no mass at zero (quantile {tau0})", inst.zones[z].id));
        }
    }
    for &(p, m) in &deployment.0 {
        let z = &inst.routes[p].zones;
        let od = crate::domain::OdPair::new(z[0], z[z.len() - 1]);
        let Some(e) = inst.categories.iter().position(|c| c.od == od && c.passengers == 1) else {
            return Err(format!("route {} has no single-passenger category", inst.routes[p].id));
        };
        let delta = m as u32 * cap;
        rho.volume[e] = reliability_for_demand(&inst.categories[e].volume, delta)
            .ok_or_else(|| format!("volume {delta} of category {} beyond its support", inst.categories[e].id))?;
    }
    Ok(rho)
}

/// Checks both directions of the formulation equivalence on one instance.
///
/// `sample_rho` are reliability vectors whose phase-1/phase-2 solutions go through the checker.
pub fn check_equivalence(
    inst: &ServiceInstance,
    scenarios: &[Scenario],
    sample_rho: &[ReliabilityVector],
    opts: &P2Options,
) -> Result<EquivalenceReport> {
    let mut rep = EquivalenceReport { assumption_violations: assumption_violations(inst), ..Default::default() };
    let checks: Vec<Vec<String>> = sample_rho
        .par_iter()
        .map(|rho| -> Result<Vec<String>> {
            let targets = resolve_reliability(inst, rho)?;
            let plan = match solve_p1_targets(inst, &targets, &P1Options::default()) {
                Ok(p) => p,
                Err(FlexError::InfeasibleAtReliability) => return Ok(Vec::new()),
                Err(e) => return Err(e),
            };
            let mut v: Vec<String> = check_plan(inst, &targets, &plan).iter().map(|x| format!("plan: {x}")).collect();
            let (_, assigns) = evaluate(inst, &plan, scenarios, opts)?;
            let routes: Vec<usize> = plan.vehicles.iter().map(|v| v.route).collect();
            for (s, a) in scenarios.iter().zip(&assigns) {
                v.extend(check_scenario(inst, &routes, s, &a.vehicle_of).iter().map(|x| format!("scenario {}: {x}", s.id)));
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    rep.solutions_checked = checks.len();
    rep.feasibility_violations = checks.into_iter().flatten().collect();
    let p0 = solve_p0_exact(inst, scenarios, opts, ENUMERATION_CAP)?;
    rep.deployment_fixed_cost = Some(p0.deployment.fixed_cost(inst));
    rep.p0_total = Some(p0.report.total_cost);
    match construct_rho(inst, &p0.deployment) {
        Ok(rho) => {
            let targets = resolve_reliability(inst, &rho)?;
            match solve_p1_targets(inst, &targets, &P1Options::default()) {
                Ok(plan) => rep.constructed_fixed_cost = Some(plan.fixed_cost),
                Err(FlexError::InfeasibleAtReliability) => {
                    rep.assumption_violations.push("constructed reliabilities are infeasible".into())
                }
                Err(e) => return Err(e),
            }
            rep.constructed_rho = Some(rho);
        }
        Err(why) => rep.assumption_violations.push(why),
    }
    rep.p0_deployment = Some(p0.deployment);
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deployments_are_counted_exactly() {
        for (r, f) in [(1, 2), (3, 2), (4, 3), (2, 0)] {
            assert_eq!(enumerate_deployments(r, f).len() as u128, deployment_count(r, f));
        }
    }

    #[test]
    fn grid_levels_exclude_one() {
        assert_eq!(grid_levels(1.0), vec![0.0]);
        assert_eq!(grid_levels(0.25), vec![0.0, 0.25, 0.5, 0.75]);
        assert_eq!(grid_levels(0.05).len(), 20);
    }

    #[test]
    fn minima_of_plateaus() {
        assert_eq!(local_minima(&[3.0, 2.0, 2.0, 4.0, 1.0, 5.0]), 2);
        assert_eq!(sign_changes(&[3.0, 2.0, 2.0, 4.0, 1.0, 5.0]), 3);
        assert_eq!(local_minima(&[1.0, 1.0]), 0);
    }

    #[test]
    fn deployment_round_trip() {
        let d = Deployment::from_routes(&[2, 0, 2]);
        assert_eq!(d.0, vec![(0, 1), (2, 2)]);
        assert_eq!(d.routes(), vec![0, 2, 2]);
    }
}
