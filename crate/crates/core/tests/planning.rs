mod common;

use flexbus::feasibility::check_plan;
use flexbus::fixtures;
use flexbus::optimizer::{max_demand_increment, max_detour_increment};
use flexbus::oracle::{self, GridEvaluator};
use flexbus::phase1::{resolve_reliability, solve_p1_targets, DetourEncoding, P1Options, ReliabilityVector};
use flexbus::phase2::{evaluate_routes, P2Options};
use flexbus::stochastic::sample_scenarios;
use proptest::prelude::*;

use common::{brute_force_p2, separable_instance, tight_instance};

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn plans_pass_the_checker(seed in 0u64..10_000, limit in 2.0f64..10.0, rv in 0.0f64..0.95, rd in 0.0f64..0.95) {
        let inst = tight_instance(seed, limit);
        let rho = ReliabilityVector::uniform(&inst, rv, rd);
        let t = resolve_reliability(&inst, &rho).unwrap();
        if let Ok(plan) = solve_p1_targets(&inst, &t, &P1Options::default()) {
            let bad = check_plan(&inst, &t, &plan);
            prop_assert!(bad.is_empty(), "{:?}", bad);
        }
    }

    #[test]
    fn detour_encodings_agree(seed in 0u64..10_000, limit in 2.0f64..10.0, rv in 0.0f64..0.95, rd in 0.0f64..0.95) {
        let inst = tight_instance(seed, limit);
        let t = resolve_reliability(&inst, &ReliabilityVector::uniform(&inst, rv, rd)).unwrap();
        let auto = solve_p1_targets(&inst, &t, &P1Options::default()).map(|p| p.fixed_cost).ok();
        let cuts = solve_p1_targets(&inst, &t, &P1Options { encoding: DetourEncoding::Cuts, ..Default::default() }).map(|p| p.fixed_cost).ok();
        prop_assert_eq!(auto, cuts);
    }

    #[test]
    fn demand_increment_keeps_the_objective(seed in 0u64..10_000, limit in 2.0f64..10.0, rv in 0.0f64..0.95, rd in 0.0f64..0.95) {
        let inst = tight_instance(seed, limit);
        let t = resolve_reliability(&inst, &ReliabilityVector::uniform(&inst, rv, rd)).unwrap();
        let Ok(plan) = solve_p1_targets(&inst, &t, &P1Options::default()) else { return Ok(()) };
        for e in 0..inst.categories.len() {
            let eps = max_demand_increment(&inst, &plan, e);
            for k in 0..=eps {
                let mut bumped = t.clone();
                bumped.delta[e] += k;
                let re = solve_p1_targets(&inst, &bumped, &P1Options::default()).unwrap();
                prop_assert!((re.fixed_cost - plan.fixed_cost).abs() < 1e-6, "category {} bump {}", e, k);
            }
        }
    }

    #[test]
    fn detour_increment_keeps_the_objective(seed in 0u64..10_000, limit in 2.0f64..10.0, rv in 0.0f64..0.95, rd in 0.0f64..0.95) {
        let inst = tight_instance(seed, limit);
        let t = resolve_reliability(&inst, &ReliabilityVector::uniform(&inst, rv, rd)).unwrap();
        let Ok(plan) = solve_p1_targets(&inst, &t, &P1Options::default()) else { return Ok(()) };
        for z in 0..inst.zones.len() {
            let eps = max_detour_increment(&inst, &plan, z);
            if !eps.is_finite() {
                continue;
            }
            for step in [0.0, eps / 2.0, eps] {
                let mut bumped = t.clone();
                bumped.tau_ii[z] += step;
                let re = solve_p1_targets(&inst, &bumped, &P1Options::default()).unwrap();
                prop_assert!((re.fixed_cost - plan.fixed_cost).abs() < 1e-6, "zone {} step {}", z, step);
            }
        }
    }

    #[test]
    fn decomposition_matches_the_monolith(seed in 0u64..10_000, r in 0.05f64..0.95) {
        let inst = separable_instance(seed);
        let t = resolve_reliability(&inst, &ReliabilityVector::uniform(&inst, r, r)).unwrap();
        let split = solve_p1_targets(&inst, &t, &P1Options::default()).map(|p| p.fixed_cost).ok();
        let whole = solve_p1_targets(&inst, &t, &P1Options { decompose: false, ..Default::default() }).map(|p| p.fixed_cost).ok();
        prop_assert_eq!(split, whole);
    }
}

proptest! {
    #![proptest_config(config(16))]

    #[test]
    fn exact_p0_matches_joint_enumeration(seed in 0u64..10_000, limit in 1.0f64..8.0, ns in 1usize..=3) {
        let mut inst = tight_instance(seed, limit);
        inst.fleet.size = inst.fleet.size.min(2);
        let scen: Vec<_> = sample_scenarios(&inst, ns, seed).unwrap().iter().map(|s| common::truncate(&inst, s, 5)).collect();
        let p0 = oracle::solve_p0_exact(&inst, &scen, &P2Options::default(), oracle::ENUMERATION_CAP).unwrap();
        let mut best = f64::INFINITY;
        for d in oracle::enumerate_deployments(inst.routes.len(), inst.fleet.size) {
            let fixed: f64 = d.iter().map(|&r| inst.route_cost(r)).sum();
            let q: f64 = scen.iter().map(|s| s.probability * brute_force_p2(&inst, &d, s)).sum();
            best = best.min(fixed + q);
        }
        prop_assert!((p0.report.total_cost - best).abs() < 1e-6, "{} vs {}", p0.report.total_cost, best);
    }

    #[test]
    fn exact_p0_ignores_scenario_order(seed in 0u64..10_000, limit in 1.0f64..8.0) {
        let inst = tight_instance(seed, limit);
        let scen = sample_scenarios(&inst, 3, seed).unwrap();
        let mut rev = scen.clone();
        rev.reverse();
        let a = oracle::solve_p0_exact(&inst, &scen, &P2Options::default(), oracle::ENUMERATION_CAP).unwrap();
        let b = oracle::solve_p0_exact(&inst, &rev, &P2Options::default(), oracle::ENUMERATION_CAP).unwrap();
        prop_assert!((a.report.total_cost - b.report.total_cost).abs() < 1e-9);
    }

    #[test]
    fn grid_never_beats_the_exact_optimum(seed in 0u64..10_000) {
        let inst = fixtures::micro_instance(seed);
        let scen = sample_scenarios(&inst, 2, seed).unwrap();
        let p0 = oracle::solve_p0_exact(&inst, &scen, &P2Options::default(), oracle::ENUMERATION_CAP).unwrap();
        let mut ev = GridEvaluator::new(&inst, &scen);
        let dims = inst.categories.len() + oracle::assumption_violations(&inst).len() + 8;
        let rows = match oracle::rho_grid(&mut ev, 0.25, 0.5, dims) {
            Ok(r) => r,
            Err(flexbus::FlexError::GridDimension(..)) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        let grid_min = rows.iter().map(|r| r.total_cost).fold(f64::INFINITY, f64::min);
        prop_assert!(grid_min >= p0.report.total_cost - 1e-9);
    }
}

#[test]
fn enumeration_guard_rejects_large_fleets() {
    let inst = fixtures::five_zone();
    let scen = sample_scenarios(&inst, 1, 0).unwrap();
    match oracle::solve_p0_exact(&inst, &scen, &P2Options::default(), oracle::ENUMERATION_CAP) {
        Err(flexbus::FlexError::EnumerationTooLarge(n, cap)) => assert!(n > cap),
        other => panic!("expected the guard, got {other:?}"),
    }
}

#[test]
fn grid_guard_and_single_cell() {
    let inst = fixtures::three_zone();
    let scen = sample_scenarios(&inst, 2, 0).unwrap();
    let mut ev = GridEvaluator::new(&inst, &scen);
    assert!(matches!(oracle::rho_grid(&mut ev, 0.5, 0.5, 2), Err(flexbus::FlexError::GridDimension(3, 2))));
    let rows = oracle::rho_grid(&mut ev, 1.0, 0.5, 3).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].fixed_cost, 0.0);
}

#[test]
fn zero_demand_gives_zero_cost() {
    let mut inst = fixtures::micro_instance(3);
    for c in &mut inst.categories {
        c.volume = flexbus::stochastic::Distribution::point(0.0);
    }
    let scen = sample_scenarios(&inst, 2, 0).unwrap();
    let p0 = oracle::solve_p0_exact(&inst, &scen, &P2Options::default(), oracle::ENUMERATION_CAP).unwrap();
    assert_eq!(p0.report.total_cost, 0.0);
    assert_eq!(p0.deployment.vehicles(), 0);
    let (r, _) = evaluate_routes(&inst, &[], 0.0, &scen, &P2Options::default()).unwrap();
    assert_eq!(r.total_cost, 0.0);
}
