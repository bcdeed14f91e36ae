#![allow(dead_code)]

use flexbus::domain::ServiceInstance;
use flexbus::feasibility::check_scenario;
use flexbus::fixtures;
use flexbus::stochastic::{scenario_from_requests, Scenario};

/// Minimum ad hoc cost over every request-to-vehicle map, feasibility judged by the checker.
pub fn brute_force_p2(inst: &ServiceInstance, routes: &[usize], scen: &Scenario) -> f64 {
    let n = scen.requests.len();
    let k = routes.len() + 1;
    let mut best = f64::INFINITY;
    let mut code = vec![0usize; n];
    loop {
        let vehicle_of: Vec<Option<usize>> = code.iter().map(|&c| (c > 0).then(|| c - 1)).collect();
        let cost: f64 = scen.requests.iter().zip(&vehicle_of).filter(|(_, v)| v.is_none()).map(|(r, _)| r.adhoc_cost).sum();
        if cost < best && check_scenario(inst, routes, scen, &vehicle_of).is_empty() {
            best = cost;
        }
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            code[i] += 1;
            if code[i] < k {
                break;
            }
            code[i] = 0;
            i += 1;
        }
    }
}

/// First `max` requests of a scenario with rebuilt detour matrices.
pub fn truncate(inst: &ServiceInstance, scen: &Scenario, max: usize) -> Scenario {
    let mut reqs: Vec<_> = scen.requests.iter().take(max).cloned().collect();
    for (i, r) in reqs.iter_mut().enumerate() {
        r.id = i;
    }
    scenario_from_requests(inst, scen.id, scen.probability, reqs).unwrap()
}

/// Micro-instance with a tight detour limit so the quadratic form binds.
pub fn tight_instance(seed: u64, limit: f64) -> ServiceInstance {
    let mut inst = fixtures::micro_instance(seed);
    for z in &mut inst.zones {
        z.max_detour = limit;
    }
    inst
}

/// Two disconnected zone pairs with their own demand; P1 separates into two blocks.
pub fn separable_instance(seed: u64) -> ServiceInstance {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let zone = |id: &str| {
        serde_json::json!({"id": id, "max_detour": 8.0, "boundary": {"form": "linear", "a": 0.6, "b": 0.03},
            "detour_dist": {"kind": "tn", "mu": 1.0, "var": 1.0, "lo": 0.0}})
    };
    let mut cats = Vec::new();
    for (o, d) in [("A", "B"), ("C", "D"), ("B", "A"), ("D", "C")] {
        if rng.gen_bool(0.7) || cats.is_empty() {
            cats.push(serde_json::json!({"id": format!("{o}{d}"), "origin": o, "dest": d,
                "volume": {"kind": "tn", "mu": rng.gen_range(4.0..20.0), "var": 4.0, "lo": 0.0}}));
        }
    }
    let cfg = serde_json::json!({
        "schema_version": 1, "name": "separable",
        "zones": [zone("A"), zone("B"), zone("C"), zone("D")],
        "links": [{"a": "A", "b": "B", "cost": rng.gen_range(3..9) as f64}, {"a": "C", "b": "D", "cost": rng.gen_range(3..9) as f64}],
        "routes": "auto",
        "categories": cats,
        "fleet": {"size": 30, "capacity": rng.gen_range(4..=8u32)},
        "adhoc_ratio": 0.9,
    });
    fixtures::load(&cfg.to_string()).unwrap().0
}
