//! Instance JSON (schema version 1): zones and routes are referenced by string id.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detour::{BoundaryDetourCurve, ReductionRule};
use crate::domain::{
    shortest_direct_routes, DemandCategory, DetourLimits, Fleet, Link, OdPair, Rect, Route, RouteMode,
    ServiceInstance, SpatialModel, Zone,
};
use crate::error::{FlexError, Result};
use crate::stochastic::Distribution;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ZoneConfig {
    pub id: String,
    pub max_detour: f64,
    pub boundary: BoundaryDetourCurve,
    pub detour_dist: Distribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rect: Option<Rect>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinkConfig {
    pub a: String,
    pub b: String,
    pub cost: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RouteConfig {
    pub id: String,
    pub zones: Vec<String>,
    pub cost: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RoutesConfig {
    /// The literal string "auto": one shortest route per OD over the links.
    Auto(String),
    Explicit(Vec<RouteConfig>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CategoryConfig {
    pub id: String,
    pub origin: String,
    pub dest: String,
    #[serde(default = "one_u32")]
    pub passengers: u32,
    pub volume: Distribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adhoc_cost: Option<f64>,
}

fn one_u32() -> u32 {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OdLimitConfig {
    pub origin: String,
    pub dest: String,
    pub limit: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetourLimitsConfig {
    #[serde(default = "yes")]
    pub per_zone: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_trip: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_od: Vec<OdLimitConfig>,
}

fn yes() -> bool {
    true
}

impl Default for DetourLimitsConfig {
    fn default() -> Self {
        DetourLimitsConfig { per_zone: true, per_trip: None, per_od: Vec::new() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpatialConfig {
    pub detour_per_meter: f64,
    /// Zone id → reference point.
    pub centroids: BTreeMap<String, (f64, f64)>,
    /// Category id → historical (origin, destination) points.
    #[serde(default)]
    pub od_points: BTreeMap<String, Vec<((f64, f64), (f64, f64))>>,
}

/// Optimizer and evaluation parameters carried alongside an instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlgorithmParams {
    pub scenarios: usize,
    pub max_iterations: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub stop_threshold: f64,
    pub backoff: f64,
    pub max_bumps: usize,
    pub initial_rho: f64,
}

impl Default for AlgorithmParams {
    fn default() -> Self {
        AlgorithmParams {
            scenarios: 150,
            max_iterations: 50,
            lambda: 0.005,
            gamma: 0.05,
            alpha: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            stop_threshold: 0.01,
            backoff: 0.9,
            max_bumps: 10,
            initial_rho: 0.5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstanceConfig {
    pub schema_version: u32,
    pub name: String,
    pub zones: Vec<ZoneConfig>,
    #[serde(default)]
    pub links: Vec<LinkConfig>,
    pub routes: RoutesConfig,
    pub categories: Vec<CategoryConfig>,
    /// OD column order; defaults to category ODs in declaration order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub od_set: Option<Vec<(String, String)>>,
    pub fleet: Fleet,
    pub adhoc_ratio: f64,
    #[serde(default)]
    pub detour_limits: DetourLimitsConfig,
    #[serde(default)]
    pub reduction_rule: ReductionRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial: Option<SpatialConfig>,
    #[serde(default)]
    pub algorithm: AlgorithmParams,
}

impl InstanceConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: InstanceConfig = serde_json::from_str(text)?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(FlexError::InvalidInstance(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_instance(&self) -> Result<ServiceInstance> {
        let zone_ids: Vec<String> = self.zones.iter().map(|z| z.id.clone()).collect();
        let zi = |id: &str| -> Result<usize> {
            zone_ids
                .iter()
                .position(|z| z == id)
                .ok_or_else(|| FlexError::InvalidInstance(format!("unknown zone `{id}`")))
        };
        let zones: Vec<Zone> = self
            .zones
            .iter()
            .map(|z| Zone {
                id: z.id.clone(),
                max_detour: z.max_detour,
                boundary: z.boundary.clone(),
                detour_dist: z.detour_dist.clone(),
                rect: z.rect,
            })
            .collect();
        let links = self
            .links
            .iter()
            .map(|l| Ok(Link { a: zi(&l.a)?, b: zi(&l.b)?, cost: l.cost }))
            .collect::<Result<Vec<_>>>()?;
        let categories = self
            .categories
            .iter()
            .map(|c| {
                Ok(DemandCategory {
                    id: c.id.clone(),
                    od: OdPair::new(zi(&c.origin)?, zi(&c.dest)?),
                    passengers: c.passengers,
                    volume: c.volume.clone(),
                    adhoc_cost: c.adhoc_cost,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let od_set: Vec<OdPair> = match &self.od_set {
            Some(list) => list.iter().map(|(a, b)| Ok(OdPair::new(zi(a)?, zi(b)?))).collect::<Result<_>>()?,
            None => {
                let mut v: Vec<OdPair> = Vec::new();
                for c in &categories {
                    if !v.contains(&c.od) {
                        v.push(c.od);
                    }
                }
                v
            }
        };
        let (routes, route_mode) = match &self.routes {
            RoutesConfig::Auto(s) if s == "auto" => (shortest_direct_routes(&zone_ids, &links, &od_set)?, RouteMode::Auto),
            RoutesConfig::Auto(s) => {
                return Err(FlexError::InvalidInstance(format!("routes must be a list or \"auto\", got `{s}`")))
            }
            RoutesConfig::Explicit(list) => (
                list.iter()
                    .map(|r| {
                        Ok(Route {
                            id: r.id.clone(),
                            zones: r.zones.iter().map(|z| zi(z)).collect::<Result<_>>()?,
                            cost: r.cost,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
                RouteMode::Explicit,
            ),
        };
        let detour_limits = DetourLimits {
            per_zone: self.detour_limits.per_zone,
            per_trip: self.detour_limits.per_trip,
            per_od: self
                .detour_limits
                .per_od
                .iter()
                .map(|l| Ok((OdPair::new(zi(&l.origin)?, zi(&l.dest)?), l.limit)))
                .collect::<Result<_>>()?,
        };
        let spatial = match &self.spatial {
            None => None,
            Some(s) => {
                let centroids = zone_ids
                    .iter()
                    .map(|z| {
                        s.centroids
                            .get(z)
                            .copied()
                            .ok_or_else(|| FlexError::InvalidInstance(format!("no centroid for zone `{z}`")))
                    })
                    .collect::<Result<_>>()?;
                let od_points = self
                    .categories
                    .iter()
                    .map(|c| s.od_points.get(&c.id).cloned().unwrap_or_default())
                    .collect();
                Some(SpatialModel { detour_per_meter: s.detour_per_meter, centroids, od_points })
            }
        };
        let inst = ServiceInstance {
            name: self.name.clone(),
            zones,
            links,
            routes,
            categories,
            od_set,
            fleet: self.fleet.clone(),
            adhoc_ratio: self.adhoc_ratio,
            detour_limits,
            reduction_rule: self.reduction_rule.clone(),
            route_mode,
            spatial,
        };
        inst.validate()?;
        Ok(inst)
    }
}

/// Loads and validates an instance file.
pub fn load_instance(path: &Path) -> Result<(ServiceInstance, AlgorithmParams)> {
    let cfg = InstanceConfig::load(path)?;
    Ok((cfg.to_instance()?, cfg.algorithm))
}
