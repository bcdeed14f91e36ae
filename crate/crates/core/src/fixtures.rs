//! Bundled instances used by tests, the acceptance suite and `flexbus check`.

use crate::config::{AlgorithmParams, InstanceConfig};
use crate::detour::DetourMatrix;
use crate::domain::{OdPair, ServiceInstance, ServiceRequest};
use crate::error::Result;
use crate::stochastic::Scenario;

pub const WORKED_EXAMPLE: &str = include_str!("../fixtures/worked_example.json");
pub const THREE_ZONE: &str = include_str!("../fixtures/three_zone.json");
pub const FIVE_ZONE: &str = include_str!("../fixtures/five_zone.json");
pub const FIVE_ZONE_LOGNORMAL: &str = include_str!("../fixtures/five_zone_lognormal.json");
pub const SIX_ZONE: &str = include_str!("../fixtures/six_zone.json");

pub fn load(text: &str) -> Result<(ServiceInstance, AlgorithmParams)> {
    let cfg = InstanceConfig::from_json(text)?;
    Ok((cfg.to_instance()?, cfg.algorithm))
}

pub fn worked_example() -> ServiceInstance {
    load(WORKED_EXAMPLE).expect("bundled fixture").0
}

pub fn three_zone() -> ServiceInstance {
    load(THREE_ZONE).expect("bundled fixture").0
}

pub fn five_zone() -> ServiceInstance {
    load(FIVE_ZONE).expect("bundled fixture").0
}

pub fn five_zone_lognormal() -> ServiceInstance {
    load(FIVE_ZONE_LOGNORMAL).expect("bundled fixture").0
}

pub fn six_zone() -> ServiceInstance {
    load(SIX_ZONE).expect("bundled fixture").0
}

/// The four-request realization of the worked example with its explicit detour matrices.
pub fn worked_example_scenario() -> Scenario {
    let req = |id: usize, category: usize, o: usize, d: usize, n: u32, to: f64, td: f64, c: f64| ServiceRequest {
        id,
        category,
        od: OdPair::new(o, d),
        passengers: n,
        origin_detour: to,
        dest_detour: td,
        adhoc_cost: c,
        origin_xy: None,
        dest_xy: None,
    };
    let requests = vec![
        req(0, 0, 0, 2, 2, 1.0, 2.0, 6.0),
        req(1, 1, 0, 2, 3, 2.0, 1.0, 6.0),
        req(2, 2, 0, 1, 2, 3.0, 2.0, 3.0),
        req(3, 3, 1, 2, 1, 2.0, 2.0, 2.0),
    ];
    let t_a = vec![
        vec![1.0, -0.2, -0.2, 0.0],
        vec![-0.2, 2.0, -0.5, 0.0],
        vec![-0.2, -0.5, 3.0, 0.0],
        vec![0.0, 0.0, 0.0, 0.0],
    ];
    let t_b = vec![
        vec![0.0, 0.0, 0.0, 0.0],
        vec![0.0, 0.0, 0.0, 0.0],
        vec![0.0, 0.0, 2.0, -0.5],
        vec![0.0, 0.0, -0.5, 2.0],
    ];
    let t_c = vec![
        vec![2.0, -0.2, 0.0, -0.5],
        vec![-0.2, 1.0, 0.0, -0.25],
        vec![0.0, 0.0, 0.0, 0.0],
        vec![-0.5, -0.25, 0.0, 2.0],
    ];
    let matrices = [t_a, t_b, t_c]
        .iter()
        .enumerate()
        .map(|(z, rows)| DetourMatrix::from_rows(z, rows).expect("square"))
        .collect();
    Scenario { id: 0, probability: 1.0, requests, matrices }
}

/// Random desk-scale instance with zones on a line, one shortest route per OD and additive
/// route costs. Every demanded OD has a single-passenger category and may have a
/// two-passenger one.
pub fn micro_instance(seed: u64) -> ServiceInstance {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let nz = rng.gen_range(2..=3usize);
    let ids: Vec<String> = (0..nz).map(|z| ((b'A' + z as u8) as char).to_string()).collect();
    let zones: Vec<_> = ids
        .iter()
        .map(|id| {
            serde_json::json!({
                "id": id,
                "max_detour": 60.0,
                "boundary": {"form": "linear", "a": 0.5, "b": 0.01},
                "detour_dist": {"kind": "tn", "mu": rng.gen_range(0.5..1.5), "var": 1.0, "lo": 0.0},
            })
        })
        .collect();
    let links: Vec<_> = (0..nz - 1)
        .map(|z| serde_json::json!({"a": ids[z], "b": ids[z + 1], "cost": rng.gen_range(2..=6) as f64}))
        .collect();
    let mut ods: Vec<(usize, usize)> = (0..nz).flat_map(|a| (0..nz).filter(move |&b| b != a).map(move |b| (a, b))).collect();
    ods.shuffle(&mut rng);
    ods.truncate(rng.gen_range(1..=ods.len().min(3)));
    let mut cats = Vec::new();
    for &(o, d) in &ods {
        let mu: f64 = rng.gen_range(1.0..5.0);
        cats.push(serde_json::json!({
            "id": format!("{}{}1", ids[o], ids[d]), "origin": ids[o], "dest": ids[d], "passengers": 1,
            "volume": {"kind": "tn", "mu": mu, "var": rng.gen_range(0.5..3.0), "lo": 0.0},
        }));
        if rng.gen_bool(0.5) {
            cats.push(serde_json::json!({
                "id": format!("{}{}2", ids[o], ids[d]), "origin": ids[o], "dest": ids[d], "passengers": 2,
                "volume": {"kind": "tn", "mu": rng.gen_range(0.5..2.0), "var": 1.0, "lo": 0.0},
            }));
        }
    }
    let cfg = serde_json::json!({
        "schema_version": 1,
        "name": format!("micro-{seed}"),
        "zones": zones,
        "links": links,
        "routes": "auto",
        "categories": cats,
        "fleet": {"size": rng.gen_range(1..=4usize), "capacity": rng.gen_range(2..=4u32)},
        "adhoc_ratio": 0.9,
    });
    load(&cfg.to_string()).expect("generated instance is valid").0
}
