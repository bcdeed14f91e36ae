//! Best-bound branch and bound over the simplex relaxation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use super::model::{Limits, Model, Solution, Status, VarKind};
use super::simplex::{Basis, LpData, LpSolver, LpStatus};
use crate::error::{FlexError, Result};

struct Node {
    bound: f64,
    depth: usize,
    id: usize,
    /// (variable, lb, ub) overrides along the path from the root.
    fixes: Vec<(usize, f64, f64)>,
    basis: Option<Basis>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // max-heap: smallest bound first, then deeper, then older
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.id.cmp(&self.id))
    }
}

/// Step between distinct integral objective values, when the objective only
/// involves integer variables with commensurable coefficients.
fn objective_granularity(model: &Model) -> Option<f64> {
    if model.objective.is_empty() {
        return None;
    }
    if model.objective.iter().any(|(v, _)| !model.var(*v).is_integral()) {
        return None;
    }
    let mut scale = 1.0;
    while scale <= 1e6 {
        let ints: Option<Vec<i64>> = model
            .objective
            .iter()
            .map(|(_, c)| {
                let s = c * scale;
                ((s - s.round()).abs() < 1e-9 * s.abs().max(1.0)).then_some(s.round() as i64)
            })
            .collect();
        if let Some(ints) = ints {
            let g = ints.iter().fold(0i64, |a, &b| gcd(a, b.abs()));
            if g > 0 {
                return Some(g as f64 / scale);
            }
        }
        scale *= 10.0;
    }
    None
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Solves a mixed-integer model to optimality or until a limit is hit.
pub fn solve(model: &Model, limits: &Limits) -> Result<Solution> {
    model.validate()?;
    let start = Instant::now();
    let data = LpData::from_model(model);
    let n = data.n;
    let max_iter = 200_000 + 50 * (n + data.m);
    let mut lp = LpSolver::new(&data);
    let root_lb = data.lb.clone();
    let root_ub = data.ub.clone();
    let integral: Vec<usize> = (0..n).filter(|&j| model.vars[j].kind != VarKind::Continuous).collect();
    let step = objective_granularity(model);
    let prune_slack = |inc: f64| match step {
        Some(g) => inc - g + 1e-6,
        None => inc - limits.gap.max(1e-9),
    };

    let mut heap = BinaryHeap::new();
    heap.push(Node { bound: f64::NEG_INFINITY, depth: 0, id: 0, fixes: Vec::new(), basis: None });
    let mut next_id = 1;
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut nodes = 0usize;
    let mut limited = false;
    let mut best_open = f64::INFINITY;
    let itol = limits.integrality_tol;

    while let Some(node) = heap.pop() {
        if let Some((inc, _)) = &incumbent {
            if node.bound > prune_slack(*inc) {
                continue;
            }
        }
        if limits.max_nodes.is_some_and(|k| nodes >= k) || limits.time_limit.is_some_and(|t| start.elapsed() >= t) {
            best_open = node.bound;
            limited = true;
            break;
        }
        nodes += 1;
        lp.lb.clone_from(&root_lb);
        lp.ub.clone_from(&root_ub);
        for &(j, l, u) in &node.fixes {
            lp.lb[j] = l;
            lp.ub[j] = u;
        }
        if let Some(b) = &node.basis {
            lp.load_basis(b);
        }
        match lp.solve(max_iter) {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => {
                if node.depth == 0 {
                    return Ok(Solution {
                        status: Status::Unbounded,
                        objective: f64::NEG_INFINITY,
                        values: Vec::new(),
                        nodes,
                        wall_time: start.elapsed(),
                        bound: f64::NEG_INFINITY,
                    });
                }
                continue;
            }
            LpStatus::Failed => return Err(FlexError::Solver(format!("simplex failed at node {}", node.id))),
        }
        let obj = lp.objective() + model.obj_constant;
        if let Some((inc, _)) = &incumbent {
            if obj > prune_slack(*inc) {
                continue;
            }
        }
        let x: Vec<f64> = lp.x[..n].to_vec();
        let mut branch: Option<(usize, f64)> = None;
        for &j in &integral {
            let f = x[j] - x[j].floor();
            let dist = f.min(1.0 - f);
            if dist > itol && branch.is_none_or(|(_, b)| dist > b + 1e-12) {
                branch = Some((j, dist));
            }
        }
        let Some((bj, _)) = branch else {
            let mut sol = x.clone();
            for &j in &integral {
                sol[j] = sol[j].round();
            }
            let val = model.objective_value(&sol);
            if model.is_feasible(&sol, limits.feasibility_tol) && incumbent.as_ref().is_none_or(|(inc, _)| val < *inc) {
                incumbent = Some((val, sol));
            }
            continue;
        };
        // rounding heuristic
        let mut rounded = x.clone();
        for &j in &integral {
            rounded[j] = rounded[j].round();
        }
        if model.is_feasible(&rounded, limits.feasibility_tol) {
            let val = model.objective_value(&rounded);
            if incumbent.as_ref().is_none_or(|(inc, _)| val < *inc) {
                incumbent = Some((val, rounded));
            }
        }
        let basis = lp.basis();
        let v = x[bj];
        let (cur_lb, cur_ub) = (lp.lb[bj], lp.ub[bj]);
        for (l, u) in [(cur_lb, v.floor()), (v.ceil(), cur_ub)] {
            if l > u {
                continue;
            }
            let mut fixes = node.fixes.clone();
            fixes.retain(|f| f.0 != bj);
            fixes.push((bj, l, u));
            heap.push(Node { bound: obj, depth: node.depth + 1, id: next_id, fixes, basis: Some(basis.clone()) });
            next_id += 1;
        }
    }

    let wall_time = start.elapsed();
    Ok(match incumbent {
        Some((obj, values)) => Solution {
            status: if limited { Status::Limit } else { Status::Optimal },
            objective: obj,
            values,
            nodes,
            wall_time,
            bound: if limited { best_open.min(obj) } else { obj },
        },
        None => Solution {
            status: if limited { Status::Limit } else { Status::Infeasible },
            objective: f64::INFINITY,
            values: Vec::new(),
            nodes,
            wall_time,
            bound: if limited { best_open } else { f64::INFINITY },
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::model::Sense;

    #[test]
    fn knapsack() {
        // max 5a + 4b + 3c st 2a + 3b + c ≤ 5, 4a + b + 2c ≤ 11, 3a + 4b + 2c ≤ 8
        let mut m = Model::new();
        let v: Vec<_> = (0..3).map(|i| m.add_binary(format!("x{i}"))).collect();
        m.add_constraint("r1", &[(v[0], 2.0), (v[1], 3.0), (v[2], 1.0)], Sense::Le, 5.0);
        m.add_constraint("r2", &[(v[0], 4.0), (v[1], 1.0), (v[2], 2.0)], Sense::Le, 11.0);
        m.add_constraint("r3", &[(v[0], 3.0), (v[1], 4.0), (v[2], 2.0)], Sense::Le, 8.0);
        m.set_objective(&[(v[0], -5.0), (v[1], -4.0), (v[2], -3.0)], 0.0);
        let s = solve(&m, &Limits::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!((s.objective + 9.0).abs() < 1e-9, "{}", s.objective);
    }

    #[test]
    fn general_integers() {
        // min -x - y st -2x + 2y ≥ 1, -8x + 10y ≤ 13 → optimum x=1, y=2
        let mut m = Model::new();
        let x = m.add_integer("x", None);
        let y = m.add_integer("y", None);
        m.add_constraint("a", &[(x, -2.0), (y, 2.0)], Sense::Ge, 1.0);
        m.add_constraint("b", &[(x, -8.0), (y, 10.0)], Sense::Le, 13.0);
        m.set_objective(&[(x, -1.0), (y, -1.0)], 0.0);
        let s = solve(&m, &Limits::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert_eq!((s.value(x), s.value(y)), (1.0, 2.0));
    }

    #[test]
    fn infeasible_integer() {
        let mut m = Model::new();
        let x = m.add_integer("x", Some(5.0));
        m.add_constraint("a", &[(x, 2.0)], Sense::Eq, 3.0);
        assert_eq!(solve(&m, &Limits::default()).unwrap().status, Status::Infeasible);
    }

    #[test]
    fn node_limit_reports_limit() {
        let mut m = Model::new();
        let v: Vec<_> = (0..12).map(|i| m.add_binary(format!("x{i}"))).collect();
        let terms: Vec<_> = v.iter().map(|&x| (x, 2.0)).collect();
        m.add_constraint("odd", &terms, Sense::Eq, 11.0);
        let s = solve(&m, &Limits { max_nodes: Some(3), ..Limits::default() }).unwrap();
        assert_eq!(s.status, Status::Limit);
    }
}
