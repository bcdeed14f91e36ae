//! Problem-instance data model and the pure structures derived from it.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::detour::{BoundaryDetourCurve, ReductionRule};
use crate::error::{FlexError, Result};
use crate::stochastic::Distribution;

/// Big-M used for off-route OD columns of a converting matrix.
pub const DEFAULT_M1: f64 = 1e6;
/// Big-M used by the deactivated capacity constraint of a route a vehicle is not assigned to.
pub const DEFAULT_M2: f64 = 1e9;

/// Ordered zone pair, by zone index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OdPair {
    pub origin: usize,
    pub dest: usize,
}

impl OdPair {
    pub fn new(origin: usize, dest: usize) -> Self {
        OdPair { origin, dest }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
    pub fn centroid(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }
    pub fn diagonal(&self) -> f64 {
        (self.x_max - self.x_min).hypot(self.y_max - self.y_min)
    }
    pub fn is_degenerate(&self) -> bool {
        !(self.x_max > self.x_min && self.y_max > self.y_min)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Zone {
    pub id: String,
    /// t̄_z in minutes.
    pub max_detour: f64,
    pub boundary: BoundaryDetourCurve,
    /// Λ_z: detour time between two service points.
    pub detour_dist: Distribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rect: Option<Rect>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Link {
    pub a: usize,
    pub b: usize,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub id: String,
    pub zones: Vec<usize>,
    /// c_p^1 before the fleet cost factor.
    pub cost: f64,
}

impl Route {
    pub fn m(&self) -> usize {
        self.zones.len()
    }

    /// Positions (i, j), i < j, of the first R and the first S after it.
    pub fn segment(&self, od: OdPair) -> Option<(usize, usize)> {
        let i = self.zones.iter().position(|&z| z == od.origin)?;
        let j = self.zones[i + 1..].iter().position(|&z| z == od.dest)? + i + 1;
        Some((i, j))
    }

    pub fn traverses(&self, od: OdPair) -> bool {
        self.segment(od).is_some()
    }

    pub fn visits(&self, zone: usize) -> bool {
        self.zones.contains(&zone)
    }

    pub fn validate(&self) -> Result<()> {
        if self.zones.len() < 2 {
            return Err(FlexError::InvalidRoute(self.id.clone(), "fewer than two zones".into()));
        }
        if self.zones.windows(2).any(|w| w[0] == w[1]) {
            return Err(FlexError::InvalidRoute(self.id.clone(), "repeated consecutive zone".into()));
        }
        if !(self.cost > 0.0) || !self.cost.is_finite() {
            return Err(FlexError::InvalidRoute(self.id.clone(), "operating cost must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DemandCategory {
    pub id: String,
    pub od: OdPair,
    /// n_e.
    pub passengers: u32,
    /// Δ_e.
    pub volume: Distribution,
    /// Per-request ad hoc cost override.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adhoc_cost: Option<f64>,
}

/// One realized booking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceRequest {
    pub id: usize,
    pub category: usize,
    pub od: OdPair,
    pub passengers: u32,
    pub origin_detour: f64,
    pub dest_detour: f64,
    pub adhoc_cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_xy: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dest_xy: Option<(f64, f64)>,
}

impl ServiceRequest {
    /// Detour of this request in `zone`, zero if the request does not touch it.
    pub fn detour_in(&self, zone: usize) -> f64 {
        if self.od.origin == zone {
            self.origin_detour
        } else if self.od.dest == zone {
            self.dest_detour
        } else {
            0.0
        }
    }

    pub fn touches(&self, zone: usize) -> bool {
        self.od.origin == zone || self.od.dest == zone
    }

    pub fn location_in(&self, zone: usize) -> Option<(f64, f64)> {
        if self.od.origin == zone {
            self.origin_xy
        } else if self.od.dest == zone {
            self.dest_xy
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fleet {
    pub size: usize,
    pub capacity: u32,
    #[serde(default = "one")]
    pub cost_factor: f64,
}

fn one() -> f64 {
    1.0
}

/// Which detour limits apply; the modes combine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetourLimits {
    /// Per-zone limit t̄_z on every visited zone.
    #[serde(default = "yes")]
    pub per_zone: bool,
    /// Per-trip limit t̄ over all zones of the route.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_trip: Option<f64>,
    /// Per-OD limits t̄_RS over the zones from R through S.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_od: Vec<(OdPair, f64)>,
}

fn yes() -> bool {
    true
}

impl Default for DetourLimits {
    fn default() -> Self {
        DetourLimits { per_zone: true, per_trip: None, per_od: Vec::new() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteMode {
    Explicit,
    Auto,
}

/// Spatial request model used when requests carry coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialModel {
    /// Minutes per meter of centroid distance.
    pub detour_per_meter: f64,
    /// Reference point of every zone.
    pub centroids: Vec<(f64, f64)>,
    /// Historical (origin, destination) locations per category, drawn without replacement.
    pub od_points: Vec<Vec<((f64, f64), (f64, f64))>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ServiceInstance {
    pub name: String,
    pub zones: Vec<Zone>,
    pub links: Vec<Link>,
    pub routes: Vec<Route>,
    pub categories: Vec<DemandCategory>,
    pub od_set: Vec<OdPair>,
    pub fleet: Fleet,
    pub adhoc_ratio: f64,
    pub detour_limits: DetourLimits,
    pub reduction_rule: ReductionRule,
    pub route_mode: RouteMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial: Option<SpatialModel>,
}

impl ServiceInstance {
    pub fn zone_index(&self, id: &str) -> Option<usize> {
        self.zones.iter().position(|z| z.id == id)
    }

    pub fn od_label(&self, od: OdPair) -> String {
        let a = &self.zones[od.origin].id;
        let b = &self.zones[od.dest].id;
        if a.chars().count() == 1 && b.chars().count() == 1 {
            format!("{a}{b}")
        } else {
            format!("{a}-{b}")
        }
    }

    pub fn od_index(&self, od: OdPair) -> Option<usize> {
        self.od_set.iter().position(|&o| o == od)
    }

    /// Operating cost of a route including the fleet cost factor.
    pub fn route_cost(&self, route: usize) -> f64 {
        self.routes[route].cost * self.fleet.cost_factor
    }

    /// Routes able to carry category `e`.
    pub fn serving_routes(&self, e: usize) -> Vec<usize> {
        let od = self.categories[e].od;
        (0..self.routes.len()).filter(|&p| self.routes[p].traverses(od)).collect()
    }

    /// Cost of the direct connection for an OD: link shortest path when links exist,
    /// otherwise the cheapest route running exactly from R to S, otherwise the cheapest traversing route.
    pub fn direct_cost(&self, od: OdPair) -> Option<f64> {
        if !self.links.is_empty() {
            if let Ok(r) = shortest_path(self.zones.len(), &self.links, od, &self.zone_ids()) {
                return Some(r.1);
            }
        }
        let exact = self
            .routes
            .iter()
            .filter(|r| r.zones.first() == Some(&od.origin) && r.zones.last() == Some(&od.dest))
            .map(|r| r.cost)
            .fold(f64::INFINITY, f64::min);
        if exact.is_finite() {
            return Some(exact);
        }
        let any = self
            .routes
            .iter()
            .filter(|r| r.traverses(od))
            .map(|r| r.cost)
            .fold(f64::INFINITY, f64::min);
        any.is_finite().then_some(any)
    }

    /// c_d^2 for a request of category `e`.
    pub fn adhoc_cost(&self, e: usize) -> f64 {
        let c = &self.categories[e];
        c.adhoc_cost
            .unwrap_or_else(|| self.adhoc_ratio * self.direct_cost(c.od).unwrap_or(0.0))
    }

    pub fn zone_ids(&self) -> Vec<String> {
        self.zones.iter().map(|z| z.id.clone()).collect()
    }

    /// Per-OD detour limit if configured.
    pub fn od_limit(&self, od: OdPair) -> Option<f64> {
        self.detour_limits.per_od.iter().find(|(o, _)| *o == od).map(|(_, t)| *t)
    }

    pub fn validate(&self) -> Result<()> {
        let nz = self.zones.len();
        if nz == 0 {
            return Err(FlexError::InvalidInstance("no zones".into()));
        }
        let cap = self.fleet.capacity;
        for z in &self.zones {
            if !(z.max_detour > 0.0) {
                return Err(FlexError::InvalidInstance(format!("zone {} has non-positive max_detour", z.id)));
            }
            z.boundary.validate(cap)?;
            if 2.0 * z.boundary.value(1.0) > z.max_detour + 1e-12 {
                return Err(FlexError::InvalidInstance(format!(
                    "zone {}: twice the boundary detour at one request exceeds the limit",
                    z.id
                )));
            }
            z.detour_dist.validate()?;
        }
        for r in &self.routes {
            r.validate()?;
            if r.zones.iter().any(|&z| z >= nz) {
                return Err(FlexError::InvalidRoute(r.id.clone(), "unknown zone".into()));
            }
        }
        for l in &self.links {
            if l.a >= nz || l.b >= nz || !(l.cost > 0.0) {
                return Err(FlexError::InvalidInstance("invalid link".into()));
            }
        }
        for od in &self.od_set {
            if od.origin >= nz || od.dest >= nz || od.origin == od.dest {
                return Err(FlexError::InvalidInstance("invalid OD pair".into()));
            }
            let demanded = self.categories.iter().any(|c| c.od == *od);
            if demanded && !self.routes.iter().any(|r| r.traverses(*od)) {
                return Err(FlexError::InvalidInstance(format!(
                    "OD {} has no traversing route",
                    self.od_label(*od)
                )));
            }
        }
        if self.fleet.size == 0 {
            return Err(FlexError::InvalidInstance("fleet size must be at least one".into()));
        }
        if !(self.fleet.cost_factor > 0.0) {
            return Err(FlexError::InvalidInstance("cost factor must be positive".into()));
        }
        if !(self.adhoc_ratio >= 0.0) {
            return Err(FlexError::InvalidInstance("ad hoc ratio must be non-negative".into()));
        }
        for c in &self.categories {
            if c.od.origin == c.od.dest {
                return Err(FlexError::InvalidInstance(format!("category {} is intra-zone", c.id)));
            }
            if c.passengers == 0 {
                return Err(FlexError::InvalidInstance(format!("category {} has no passengers", c.id)));
            }
            if c.passengers > cap {
                return Err(FlexError::InvalidInstance(format!(
                    "category {} exceeds vehicle capacity",
                    c.id
                )));
            }
            if !self.od_set.contains(&c.od) {
                return Err(FlexError::InvalidInstance(format!("category {} OD not in the OD set", c.id)));
            }
            c.volume.validate()?;
        }
        if let Some(t) = self.detour_limits.per_trip {
            if !(t > 0.0) {
                return Err(FlexError::InvalidInstance("per-trip limit must be positive".into()));
            }
        }
        if let Some(s) = &self.spatial {
            if s.centroids.len() != nz || s.od_points.len() != self.categories.len() {
                return Err(FlexError::InvalidInstance("spatial model must cover every zone and category".into()));
            }
        }
        Ok(())
    }

    /// Copy restricted to a subset of categories and routes; the OD set is cut to
    /// the ODs of the kept categories plus those traversed by kept routes.
    pub fn restrict(&self, categories: &[usize], routes: &[usize]) -> ServiceInstance {
        let cats: Vec<DemandCategory> = categories.iter().map(|&e| self.categories[e].clone()).collect();
        let rts: Vec<Route> = routes.iter().map(|&p| self.routes[p].clone()).collect();
        let od_set = self
            .od_set
            .iter()
            .copied()
            .filter(|od| cats.iter().any(|c| c.od == *od))
            .collect();
        let mut sub = self.clone();
        // ad hoc costs are pinned before the route set shrinks
        let resolved: Vec<DemandCategory> = categories
            .iter()
            .zip(cats)
            .map(|(&e, mut c)| {
                c.adhoc_cost = Some(self.adhoc_cost(e));
                c
            })
            .collect();
        sub.categories = resolved;
        if let Some(sp) = &mut sub.spatial {
            sp.od_points = categories.iter().map(|&e| sp.od_points[e].clone()).collect();
        }
        sub.routes = rts;
        sub.od_set = od_set;
        sub
    }
}

/// B_p: rows are the non-terminal zones of the route, columns follow `od_set`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvertingMatrix {
    pub row_zones: Vec<usize>,
    pub od_set: Vec<OdPair>,
    pub entries: Vec<Vec<f64>>,
    pub m1: f64,
}

impl ConvertingMatrix {
    /// Onboard load leaving each non-terminal zone for a per-OD passenger tally.
    pub fn apply(&self, zeta: &[f64]) -> Vec<f64> {
        self.entries
            .iter()
            .map(|row| row.iter().zip(zeta).map(|(b, z)| b * z).sum())
            .collect()
    }
}

pub fn build_converting_matrix(route: &Route, od_set: &[OdPair], m1: f64) -> Result<ConvertingMatrix> {
    if route.zones.len() < 2 {
        return Err(FlexError::InvalidRoute(route.id.clone(), "fewer than two zones".into()));
    }
    if od_set.is_empty() {
        return Err(FlexError::InvalidInstance("empty OD set".into()));
    }
    let rows = route.zones.len() - 1;
    let mut entries = vec![vec![0.0; od_set.len()]; rows];
    for (c, &od) in od_set.iter().enumerate() {
        match route.segment(od) {
            None => entries.iter_mut().for_each(|row| row[c] = m1),
            Some((i, j)) => (i..j).for_each(|r| entries[r][c] = 1.0),
        }
    }
    Ok(ConvertingMatrix { row_zones: route.zones[..rows].to_vec(), od_set: od_set.to_vec(), entries, m1 })
}

/// ζ_v: passengers per OD of `od_set` carried by the flagged requests.
pub fn od_load(w: &[bool], requests: &[ServiceRequest], od_set: &[OdPair]) -> Vec<u32> {
    let mut zeta = vec![0u32; od_set.len()];
    for (req, _) in requests.iter().zip(w).filter(|(_, &f)| f) {
        if let Some(k) = od_set.iter().position(|&o| o == req.od) {
            zeta[k] += req.passengers;
        }
    }
    zeta
}

#[derive(PartialEq)]
struct Label {
    cost: f64,
    path: Vec<String>,
    node: usize,
}

impl Eq for Label {}

impl Ord for Label {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed for a min-heap
        other
            .cost
            .partial_cmp(&self.cost)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.path.cmp(&self.path))
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn better(a: (f64, &[String]), b: (f64, &[String])) -> bool {
    const TOL: f64 = 1e-9;
    a.0 < b.0 - TOL || ((a.0 - b.0).abs() <= TOL && a.1 < b.1)
}

/// Least-cost path over undirected links, ties broken by the zone-id sequence.
fn shortest_path(n: usize, links: &[Link], od: OdPair, ids: &[String]) -> Result<(Vec<usize>, f64)> {
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for l in links {
        adj[l.a].push((l.b, l.cost));
        adj[l.b].push((l.a, l.cost));
    }
    let mut best: Vec<Option<(f64, Vec<String>, Vec<usize>)>> = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    best[od.origin] = Some((0.0, vec![ids[od.origin].clone()], vec![od.origin]));
    heap.push(Label { cost: 0.0, path: vec![ids[od.origin].clone()], node: od.origin });
    while let Some(Label { cost, path, node }) = heap.pop() {
        if done[node] {
            continue;
        }
        let cur = best[node].clone().expect("label exists");
        if (cur.0 - cost).abs() > 1e-9 || cur.1 != path {
            continue;
        }
        done[node] = true;
        for &(next, c) in &adj[node] {
            if done[next] {
                continue;
            }
            let nc = cost + c;
            let mut np = path.clone();
            np.push(ids[next].clone());
            let replace = match &best[next] {
                None => true,
                Some((bc, bp, _)) => better((nc, &np), (*bc, bp)),
            };
            if replace {
                let mut zones = cur.2.clone();
                zones.push(next);
                best[next] = Some((nc, np.clone(), zones));
                heap.push(Label { cost: nc, path: np, node: next });
            }
        }
    }
    match best[od.dest].take() {
        Some((c, _, zones)) if od.dest != od.origin => Ok((zones, c)),
        _ => Err(FlexError::UnreachableOd(ids[od.origin].clone(), ids[od.dest].clone())),
    }
}

fn route_name(zones: &[usize], ids: &[String]) -> String {
    if zones.iter().all(|&z| ids[z].chars().count() == 1) {
        zones.iter().map(|&z| ids[z].as_str()).collect()
    } else {
        zones.iter().map(|&z| ids[z].as_str()).collect::<Vec<_>>().join("-")
    }
}

/// One least-cost route per OD pair, in `od_set` order.
pub fn shortest_direct_routes(zone_ids: &[String], links: &[Link], od_set: &[OdPair]) -> Result<Vec<Route>> {
    od_set
        .iter()
        .map(|&od| {
            let (zones, cost) = shortest_path(zone_ids.len(), links, od, zone_ids)?;
            Ok(Route { id: route_name(&zones, zone_ids), zones, cost })
        })
        .collect()
}

/// A connected block of categories and the routes able to serve them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Component {
    pub categories: Vec<usize>,
    pub routes: Vec<usize>,
}

/// Connected components of the category–route serving graph, ordered by smallest category index.
pub fn decompose_instance(instance: &ServiceInstance) -> Vec<Component> {
    let ne = instance.categories.len();
    let np = instance.routes.len();
    let mut parent: Vec<usize> = (0..ne + np).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut c = x;
        while p[c] != r {
            let n = p[c];
            p[c] = r;
            c = n;
        }
        r
    }
    let mut linked = vec![false; np];
    for e in 0..ne {
        for p in instance.serving_routes(e) {
            linked[p] = true;
            let a = find(&mut parent, e);
            let b = find(&mut parent, ne + p);
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut roots: Vec<usize> = Vec::new();
    let mut comps: Vec<Component> = Vec::new();
    for e in 0..ne {
        let r = find(&mut parent, e);
        match roots.iter().position(|&x| x == r) {
            Some(i) => comps[i].categories.push(e),
            None => {
                roots.push(r);
                comps.push(Component { categories: vec![e], routes: Vec::new() });
            }
        }
    }
    for p in (0..np).filter(|&p| linked[p]) {
        let r = find(&mut parent, ne + p);
        if let Some(i) = roots.iter().position(|&x| x == r) {
            comps[i].routes.push(p);
        }
    }
    comps
}

/// Zones of a route from R through S inclusive.
pub fn segment_zones(route: &Route, od: OdPair) -> Option<BTreeSet<usize>> {
    route.segment(od).map(|(i, j)| route.zones[i..=j].iter().copied().collect())
}
