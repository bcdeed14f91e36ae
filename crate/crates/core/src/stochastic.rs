//! Distributions, reliability-to-quantile inversion and scenario sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::detour::{build_detour_matrix, DetourMatrix, RequestDetour};
use crate::domain::{ServiceInstance, ServiceRequest};
use crate::error::{FlexError, Result};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Volume or detour-time law. The truncated normal's second parameter is the variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    #[serde(rename = "tn")]
    TruncatedNormal {
        mu: f64,
        var: f64,
        #[serde(default)]
        lo: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hi: Option<f64>,
    },
    /// Median `scale`, log-standard-deviation `shape`.
    Lognormal { shape: f64, scale: f64 },
    Empirical { values: Vec<f64>, weights: Vec<f64> },
}

impl Distribution {
    pub fn tn(mu: f64, var: f64) -> Self {
        Distribution::TruncatedNormal { mu, var, lo: 0.0, hi: None }
    }

    pub fn point(v: f64) -> Self {
        Distribution::Empirical { values: vec![v], weights: vec![1.0] }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Distribution::TruncatedNormal { mu, var, lo, hi } => {
                if !(mu.is_finite() && *var > 0.0 && lo.is_finite() && *lo >= 0.0) {
                    return Err(FlexError::InvalidDistribution("truncated normal needs var > 0 and lo ≥ 0".into()));
                }
                if let Some(h) = hi {
                    if !(h > lo) {
                        return Err(FlexError::InvalidDistribution("truncation bounds need lo < hi".into()));
                    }
                }
                Ok(())
            }
            Distribution::Lognormal { shape, scale } => {
                if *shape > 0.0 && *scale > 0.0 {
                    Ok(())
                } else {
                    Err(FlexError::InvalidDistribution("lognormal needs positive shape and scale".into()))
                }
            }
            Distribution::Empirical { values, weights } => {
                if values.is_empty() || values.len() != weights.len() {
                    return Err(FlexError::InvalidDistribution("empirical values/weights mismatch".into()));
                }
                if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || weights.iter().any(|w| !(*w >= 0.0)) {
                    return Err(FlexError::InvalidDistribution("empirical support must be non-negative".into()));
                }
                let s: f64 = weights.iter().sum();
                if (s - 1.0).abs() > 1e-6 {
                    return Err(FlexError::InvalidDistribution(format!("empirical weights sum to {s}")));
                }
                Ok(())
            }
        }
    }

    fn tn_params(mu: f64, var: f64, lo: f64, hi: Option<f64>) -> (f64, f64, f64) {
        let s = var.sqrt();
        let a = (lo - mu) / s;
        let b = hi.map_or(f64::INFINITY, |h| (h - mu) / s);
        (s, a, b)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Distribution::TruncatedNormal { mu, var, lo, hi } => {
                if x <= *lo {
                    return 0.0;
                }
                if hi.is_some_and(|h| x >= h) {
                    return 1.0;
                }
                let (s, a, b) = Self::tn_params(*mu, *var, *lo, *hi);
                let n = std_normal();
                let xi = (x - mu) / s;
                let v = if a > 0.0 {
                    (n.sf(a) - n.sf(xi)) / (n.sf(a) - n.sf(b))
                } else {
                    (n.cdf(xi) - n.cdf(a)) / (n.cdf(b) - n.cdf(a))
                };
                v.clamp(0.0, 1.0)
            }
            Distribution::Lognormal { shape, scale } => {
                if x <= 0.0 {
                    0.0
                } else {
                    std_normal().cdf((x / scale).ln() / shape)
                }
            }
            Distribution::Empirical { values, weights } => {
                values.iter().zip(weights).filter(|(v, _)| **v <= x).map(|(_, w)| w).sum::<f64>().min(1.0)
            }
        }
    }

    /// Lower quantile: the smallest x with cdf(x) ≥ p.
    pub fn quantile(&self, p: f64) -> f64 {
        match self {
            Distribution::TruncatedNormal { mu, var, lo, hi } => {
                if p <= 0.0 {
                    return *lo;
                }
                let (s, a, b) = Self::tn_params(*mu, *var, *lo, *hi);
                let n = std_normal();
                let xi = if a > 0.0 {
                    let q = n.sf(a) - p * (n.sf(a) - n.sf(b));
                    -n.inverse_cdf(q)
                } else {
                    n.inverse_cdf(n.cdf(a) + p * (n.cdf(b) - n.cdf(a)))
                };
                let x = mu + s * xi;
                x.max(*lo).min(hi.unwrap_or(f64::INFINITY))
            }
            Distribution::Lognormal { shape, scale } => {
                if p <= 0.0 {
                    0.0
                } else {
                    scale * (shape * std_normal().inverse_cdf(p)).exp()
                }
            }
            Distribution::Empirical { values, weights } => {
                let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(weights.iter().copied()).collect();
                pairs.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite"));
                let mut acc = 0.0;
                for (v, w) in &pairs {
                    acc += w;
                    if acc >= p - 1e-15 && (*w > 0.0 || p <= 0.0) {
                        return *v;
                    }
                }
                pairs.last().map(|p| p.0).unwrap_or(0.0)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Distribution::TruncatedNormal { mu, var, lo, hi } => {
                let (s, a, b) = Self::tn_params(*mu, *var, *lo, *hi);
                let n = std_normal();
                let pb = if b.is_finite() { n.pdf(b) } else { 0.0 };
                let z = if a > 0.0 { n.sf(a) - n.sf(b) } else { n.cdf(b) - n.cdf(a) };
                mu + s * (n.pdf(a) - pb) / z
            }
            Distribution::Lognormal { shape, scale } => scale * (shape * shape / 2.0).exp(),
            Distribution::Empirical { values, weights } => values.iter().zip(weights).map(|(v, w)| v * w).sum(),
        }
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        match self {
            Distribution::Empirical { .. } => self.quantile(u.max(f64::MIN_POSITIVE)),
            _ => self.quantile(u.clamp(1e-16, 1.0 - 1e-16)),
        }
    }

    /// Pr(Δ ≤ η) for the integer volume obtained by round-half-even of a draw.
    pub fn count_cdf(&self, eta: u32) -> f64 {
        match self {
            Distribution::Empirical { values, weights } => values
                .iter()
                .zip(weights)
                .filter(|(v, _)| round_count(**v) <= eta)
                .map(|(_, w)| w)
                .sum::<f64>()
                .min(1.0),
            _ => self.cdf(eta as f64 + 0.5),
        }
    }
}

/// Round-half-even, clamped at zero.
pub fn round_count(x: f64) -> u32 {
    x.round_ties_even().max(0.0) as u32
}

fn check_rho(rho: f64) -> Result<()> {
    if (0.0..1.0).contains(&rho) {
        Ok(())
    } else {
        Err(FlexError::InvalidReliability(rho))
    }
}

/// δ_e: the smallest η ≥ 0 with Pr(Δ ≤ η) ≥ ρ.
pub fn demand_quantile(dist: &Distribution, rho: f64) -> Result<u32> {
    check_rho(rho)?;
    if rho == 0.0 {
        return Ok(0);
    }
    let guess = (dist.quantile(rho) - 0.5).ceil().max(0.0);
    let mut eta = if guess.is_finite() { guess.min(1e9) as u32 } else { 0 };
    while eta > 0 && dist.count_cdf(eta - 1) >= rho {
        eta -= 1;
    }
    while dist.count_cdf(eta) < rho {
        eta += 1;
    }
    Ok(eta)
}

/// Smallest reliability whose demand quantile reaches at least `delta`, or `None` past the support.
pub fn reliability_for_demand(dist: &Distribution, delta: u32) -> Option<f64> {
    if delta == 0 {
        return Some(0.0);
    }
    let base = dist.count_cdf(delta - 1);
    let rho = base + 1e-12_f64.max(base * 1e-15);
    (rho < 1.0).then_some(rho)
}

/// τ_z^II: the continuous ρ-quantile of Λ_z.
pub fn detour_quantile(dist: &Distribution, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    Ok(dist.quantile(rho).max(0.0))
}

/// Reliability whose detour quantile equals `tau`, or `None` past the support.
pub fn reliability_for_detour(dist: &Distribution, tau: f64) -> Option<f64> {
    let rho = dist.cdf(tau);
    (rho < 1.0).then_some(rho)
}

/// One realized request set with its per-zone detour matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: usize,
    pub probability: f64,
    pub requests: Vec<ServiceRequest>,
    pub matrices: Vec<DetourMatrix>,
}

/// Builds the detour matrices of every zone for an explicit request list.
pub fn scenario_from_requests(
    instance: &ServiceInstance,
    id: usize,
    probability: f64,
    requests: Vec<ServiceRequest>,
) -> Result<Scenario> {
    let cap = instance.fleet.capacity;
    let matrices = (0..instance.zones.len())
        .map(|z| {
            let entries: Vec<Option<RequestDetour>> = requests
                .iter()
                .map(|r| r.touches(z).then(|| RequestDetour { detour: r.detour_in(z), location: r.location_in(z) }))
                .collect();
            build_detour_matrix(&entries, z, cap, &instance.reduction_rule)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Scenario { id, probability, requests, matrices })
}

fn draw_requests(instance: &ServiceInstance, rng: &mut ChaCha8Rng) -> Vec<ServiceRequest> {
    let mut out = Vec::new();
    for (e, cat) in instance.categories.iter().enumerate() {
        let count = round_count(cat.volume.sample(rng));
        let adhoc = instance.adhoc_cost(e);
        let mut pool: Vec<usize> = Vec::new();
        if let Some(sp) = &instance.spatial {
            pool = (0..sp.od_points.get(e).map_or(0, |p| p.len())).collect();
        }
        for _ in 0..count {
            let mut req = ServiceRequest {
                id: out.len(),
                category: e,
                od: cat.od,
                passengers: cat.passengers,
                origin_detour: 0.0,
                dest_detour: 0.0,
                adhoc_cost: adhoc,
                origin_xy: None,
                dest_xy: None,
            };
            match &instance.spatial {
                Some(sp) if !sp.od_points.get(e).map_or(true, |p| p.is_empty()) => {
                    let all = &sp.od_points[e];
                    let k = if pool.is_empty() {
                        rng.gen_range(0..all.len())
                    } else {
                        pool.swap_remove(rng.gen_range(0..pool.len()))
                    };
                    let (o, d) = all[k];
                    let (co, cd) = (sp.centroids[cat.od.origin], sp.centroids[cat.od.dest]);
                    req.origin_detour = (o.0 - co.0).hypot(o.1 - co.1) * sp.detour_per_meter;
                    req.dest_detour = (d.0 - cd.0).hypot(d.1 - cd.1) * sp.detour_per_meter;
                    req.origin_xy = Some(o);
                    req.dest_xy = Some(d);
                }
                _ => {
                    req.origin_detour = instance.zones[cat.od.origin].detour_dist.sample(rng).max(0.0);
                    req.dest_detour = instance.zones[cat.od.dest].detour_dist.sample(rng).max(0.0);
                }
            }
            out.push(req);
        }
    }
    out
}

/// Scenario `id` of the stream family keyed by `seed`; independent of every other id.
pub fn sample_scenario(instance: &ServiceInstance, id: usize, n: usize, seed: u64) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    let requests = draw_requests(instance, &mut rng);
    scenario_from_requests(instance, id, 1.0 / n as f64, requests)
}

/// `n` equiprobable scenarios; identical output whether generated in parallel or in sequence.
pub fn sample_scenarios(instance: &ServiceInstance, n: usize, seed: u64) -> Result<Vec<Scenario>> {
    if n == 0 {
        return Err(FlexError::InvalidInstance("scenario count must be positive".into()));
    }
    (0..n).into_par_iter().map(|k| sample_scenario(instance, k, n, seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demand_median_of_section_example() {
        assert_eq!(demand_quantile(&Distribution::tn(16.0, 6.0), 0.5).unwrap(), 16);
    }

    #[test]
    fn zero_reliability_gives_zero() {
        assert_eq!(demand_quantile(&Distribution::tn(16.0, 6.0), 0.0).unwrap(), 0);
        let e = Distribution::Empirical { values: vec![3.0, 5.0], weights: vec![0.5, 0.5] };
        assert_eq!(demand_quantile(&e, 0.0).unwrap(), 0);
    }

    #[test]
    fn empirical_step_inversion() {
        let e = Distribution::Empirical { values: vec![3.0, 5.0], weights: vec![0.5, 0.5] };
        assert_eq!(demand_quantile(&e, 0.6).unwrap(), 5);
        assert_eq!(demand_quantile(&e, 0.5).unwrap(), 3);
    }

    #[test]
    fn reliability_one_rejected() {
        assert!(matches!(demand_quantile(&Distribution::tn(1.0, 1.0), 1.0), Err(FlexError::InvalidReliability(_))));
        assert!(detour_quantile(&Distribution::tn(1.0, 1.0), -0.1).is_err());
    }

    #[test]
    fn lognormal_median_is_scale() {
        let d = Distribution::Lognormal { shape: 0.8, scale: 4.0 };
        assert!((detour_quantile(&d, 0.5).unwrap() - 4.0).abs() < 1e-12);
        assert!((d.mean() - 4.0 * 0.32f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn quantile_of_own_cdf() {
        let d = Distribution::tn(1.0, 1.0);
        let rho = d.cdf(1.0);
        assert!((detour_quantile(&d, rho).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn deep_truncation_uses_upper_tail() {
        let d = Distribution::TruncatedNormal { mu: 0.0, var: 1.0, lo: 9.0, hi: None };
        let q = d.quantile(0.5);
        assert!(q > 9.0 && q < 9.2, "{q}");
        assert!((d.cdf(q) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn reliability_inversion_reaches_target() {
        let d = Distribution::tn(16.0, 6.0);
        for target in 1..25 {
            let rho = reliability_for_demand(&d, target).unwrap();
            assert_eq!(demand_quantile(&d, rho).unwrap(), target);
        }
    }
}
