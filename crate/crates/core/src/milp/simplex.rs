//! Bounded revised simplex on the computational form A·x − s = 0, with row bounds
//! carried by the logical variables s. The basis inverse is kept explicitly.

use super::model::{Model, Sense};

const PRIMAL_TOL: f64 = 1e-7;
const DUAL_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 80;
const NONE: usize = usize::MAX;

/// Column-oriented copy of a model's LP relaxation.
#[derive(Clone, Debug)]
pub(crate) struct LpData {
    pub n: usize,
    pub m: usize,
    pub cols: Vec<Vec<(usize, f64)>>,
    pub cost: Vec<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
}

impl LpData {
    pub fn from_model(model: &Model) -> Self {
        let n = model.vars.len();
        let m = model.constraints.len();
        let mut cols = vec![Vec::new(); n];
        let mut lb: Vec<f64> = model.vars.iter().map(|v| v.lb).collect();
        let mut ub: Vec<f64> = model.vars.iter().map(|v| v.ub).collect();
        for (i, c) in model.constraints.iter().enumerate() {
            for &(v, a) in &c.terms {
                cols[v.0].push((i, a));
            }
            let (l, u) = match c.sense {
                Sense::Le => (f64::NEG_INFINITY, c.rhs),
                Sense::Ge => (c.rhs, f64::INFINITY),
                Sense::Eq => (c.rhs, c.rhs),
            };
            lb.push(l);
            ub.push(u);
        }
        let mut cost = vec![0.0; n + m];
        for &(v, c) in &model.objective {
            cost[v.0] += c;
        }
        LpData { n, m, cols, cost, lb, ub }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    Failed,
}

/// Basis snapshot used to warm-start a node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Basis {
    head: Vec<usize>,
    at_upper: Vec<bool>,
}

pub(crate) struct LpSolver<'a> {
    d: &'a LpData,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    head: Vec<usize>,
    pos: Vec<usize>,
    at_upper: Vec<bool>,
    binv: Vec<f64>,
    pub x: Vec<f64>,
    cost: Vec<f64>,
    since_refactor: usize,
    pub iterations: usize,
}

impl<'a> LpSolver<'a> {
    pub fn new(d: &'a LpData) -> Self {
        let mut s = LpSolver {
            d,
            lb: d.lb.clone(),
            ub: d.ub.clone(),
            head: Vec::new(),
            pos: Vec::new(),
            at_upper: vec![false; d.n + d.m],
            binv: Vec::new(),
            x: vec![0.0; d.n + d.m],
            cost: d.cost.clone(),
            since_refactor: 0,
            iterations: 0,
        };
        s.slack_basis();
        s
    }

    fn slack_basis(&mut self) {
        let (n, m) = (self.d.n, self.d.m);
        self.head = (n..n + m).collect();
        self.pos = vec![NONE; n + m];
        for i in 0..m {
            self.pos[n + i] = i;
        }
        self.at_upper = vec![false; n + m];
        self.binv = vec![0.0; m * m];
        for i in 0..m {
            self.binv[i * m + i] = -1.0;
        }
        self.since_refactor = 0;
    }

    pub fn basis(&self) -> Basis {
        Basis { head: self.head.clone(), at_upper: self.at_upper.clone() }
    }

    pub fn load_basis(&mut self, b: &Basis) {
        if b.head == self.head {
            self.at_upper.clone_from(&b.at_upper);
            return;
        }
        self.head.clone_from(&b.head);
        self.at_upper.clone_from(&b.at_upper);
        self.pos = vec![NONE; self.d.n + self.d.m];
        for (p, &j) in self.head.iter().enumerate() {
            self.pos[j] = p;
        }
        if !self.refactor() {
            self.slack_basis();
        }
    }

    pub fn objective(&self) -> f64 {
        (0..self.d.n).map(|j| self.d.cost[j] * self.x[j]).sum()
    }

    /// Rebuilds B⁻¹ through the structural block only; false when the basis is singular.
    fn refactor(&mut self) -> bool {
        let (n, m) = (self.d.n, self.d.m);
        let mut covered = vec![false; m];
        let mut structural: Vec<(usize, usize)> = Vec::new();
        for (p, &j) in self.head.iter().enumerate() {
            if j >= n {
                covered[j - n] = true;
            } else {
                structural.push((p, j));
            }
        }
        let rows: Vec<usize> = (0..m).filter(|&i| !covered[i]).collect();
        let k = structural.len();
        if rows.len() != k {
            return false;
        }
        let mut row_slot = vec![NONE; m];
        for (t, &r) in rows.iter().enumerate() {
            row_slot[r] = t;
        }
        // dense k×k block and its inverse by Gauss–Jordan with partial pivoting
        let mut a = vec![0.0; k * k];
        for (c, &(_, j)) in structural.iter().enumerate() {
            for &(r, v) in &self.d.cols[j] {
                if row_slot[r] != NONE {
                    a[row_slot[r] * k + c] = v;
                }
            }
        }
        let mut inv = vec![0.0; k * k];
        for i in 0..k {
            inv[i * k + i] = 1.0;
        }
        for col in 0..k {
            let mut piv = col;
            let mut best = a[col * k + col].abs();
            for r in col + 1..k {
                let v = a[r * k + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best < 1e-11 {
                return false;
            }
            if piv != col {
                for c in 0..k {
                    a.swap(piv * k + c, col * k + c);
                    inv.swap(piv * k + c, col * k + c);
                }
            }
            let p = a[col * k + col];
            for c in 0..k {
                a[col * k + c] /= p;
                inv[col * k + c] /= p;
            }
            for r in 0..k {
                if r == col {
                    continue;
                }
                let f = a[r * k + col];
                if f != 0.0 {
                    for c in 0..k {
                        a[r * k + c] -= f * a[col * k + c];
                        inv[r * k + c] -= f * inv[col * k + c];
                    }
                }
            }
        }
        // x_S = inv · b_R ; x_L(l) = Σ_S a_lj x_j − b_l
        let mut binv = vec![0.0; m * m];
        for &(p, j) in &self.head.iter().enumerate().filter(|(_, &j)| j >= n).map(|(p, &j)| (p, j)).collect::<Vec<_>>() {
            binv[p * m + (j - n)] = -1.0;
        }
        for (t, &r) in rows.iter().enumerate() {
            // column r of B⁻¹
            let mut xs = vec![0.0; k];
            for c in 0..k {
                xs[c] = inv[c * k + t];
            }
            for (c, &(p, j)) in structural.iter().enumerate() {
                binv[p * m + r] = xs[c];
                if xs[c] != 0.0 {
                    for &(row, v) in &self.d.cols[j] {
                        if covered[row] {
                            let lp = self.pos_of_logical(row);
                            binv[lp * m + r] += v * xs[c];
                        }
                    }
                }
            }
        }
        self.binv = binv;
        self.since_refactor = 0;
        true
    }

    fn pos_of_logical(&self, row: usize) -> usize {
        self.pos[self.d.n + row]
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        let (l, u) = (self.lb[j], self.ub[j]);
        if self.at_upper[j] {
            if u.is_finite() {
                u
            } else if l.is_finite() {
                l
            } else {
                0.0
            }
        } else if l.is_finite() {
            l
        } else if u.is_finite() {
            u
        } else {
            0.0
        }
    }

    fn compute_xb(&mut self) {
        let (n, m) = (self.d.n, self.d.m);
        let mut rhs = vec![0.0; m];
        for j in 0..n + m {
            if self.pos[j] != NONE {
                continue;
            }
            let v = self.nonbasic_value(j);
            self.x[j] = v;
            if v == 0.0 {
                continue;
            }
            if j < n {
                for &(r, a) in &self.d.cols[j] {
                    rhs[r] -= a * v;
                }
            } else {
                rhs[j - n] += v;
            }
        }
        for p in 0..m {
            let row = &self.binv[p * m..(p + 1) * m];
            let mut s = 0.0;
            for (b, r) in row.iter().zip(&rhs) {
                s += b * r;
            }
            self.x[self.head[p]] = s;
        }
    }

    fn duals(&self) -> Vec<f64> {
        let m = self.d.m;
        let mut y = vec![0.0; m];
        for p in 0..m {
            let c = self.cost[self.head[p]];
            if c != 0.0 {
                let row = &self.binv[p * m..(p + 1) * m];
                for (yi, b) in y.iter_mut().zip(row) {
                    *yi += c * b;
                }
            }
        }
        y
    }

    fn reduced(&self, j: usize, y: &[f64]) -> f64 {
        let n = self.d.n;
        if j < n {
            self.cost[j] - self.d.cols[j].iter().map(|&(r, a)| y[r] * a).sum::<f64>()
        } else {
            self.cost[j] + y[j - n]
        }
    }

    fn row_alpha(&self, row: &[f64], j: usize) -> f64 {
        let n = self.d.n;
        if j < n {
            self.d.cols[j].iter().map(|&(r, a)| row[r] * a).sum()
        } else {
            -row[j - n]
        }
    }

    fn ftran(&self, j: usize) -> Vec<f64> {
        let (n, m) = (self.d.n, self.d.m);
        let mut w = vec![0.0; m];
        if j < n {
            for &(r, a) in &self.d.cols[j] {
                for p in 0..m {
                    w[p] += self.binv[p * m + r] * a;
                }
            }
        } else {
            for p in 0..m {
                w[p] = -self.binv[p * m + (j - n)];
            }
        }
        w
    }

    fn pivot(&mut self, r: usize, q: usize, w: &[f64]) {
        let m = self.d.m;
        let piv = w[r];
        for c in 0..m {
            self.binv[r * m + c] /= piv;
        }
        let (before, rest) = self.binv.split_at_mut(r * m);
        let (prow, after) = rest.split_at_mut(m);
        for (p, chunk) in before.chunks_mut(m).enumerate() {
            let f = w[p];
            if f != 0.0 {
                for (x, pr) in chunk.iter_mut().zip(prow.iter()) {
                    *x -= f * pr;
                }
            }
        }
        for (k, chunk) in after.chunks_mut(m).enumerate() {
            let f = w[r + 1 + k];
            if f != 0.0 {
                for (x, pr) in chunk.iter_mut().zip(prow.iter()) {
                    *x -= f * pr;
                }
            }
        }
        let leaving = self.head[r];
        self.pos[leaving] = NONE;
        self.head[r] = q;
        self.pos[q] = r;
        self.since_refactor += 1;
        if self.since_refactor >= REFACTOR_EVERY && !self.refactor() {
            // keep the product-form inverse; the next reload falls back to a slack basis
            self.since_refactor = 0;
        }
    }

    fn is_fixed(&self, j: usize) -> bool {
        self.lb[j] == self.ub[j]
    }

    fn normalize_nonbasic(&mut self) {
        for j in 0..self.d.n + self.d.m {
            if self.pos[j] != NONE {
                continue;
            }
            if self.at_upper[j] && !self.ub[j].is_finite() {
                self.at_upper[j] = false;
            }
            if !self.at_upper[j] && !self.lb[j].is_finite() && self.ub[j].is_finite() {
                self.at_upper[j] = true;
            }
        }
    }

    fn dual_simplex(&mut self, max_iter: usize) -> LpStatus {
        let (n, m) = (self.d.n, self.d.m);
        // Bland's rule after a run of dual-degenerate pivots, to break cycles
        let mut degenerate = 0usize;
        loop {
            let bland = degenerate > 50;
            if self.iterations >= max_iter {
                return LpStatus::Failed;
            }
            self.compute_xb();
            let mut leave: Option<(usize, f64)> = None;
            for p in 0..m {
                let j = self.head[p];
                let v = self.x[j];
                let viol = if v < self.lb[j] - PRIMAL_TOL {
                    self.lb[j] - v
                } else if v > self.ub[j] + PRIMAL_TOL {
                    v - self.ub[j]
                } else {
                    0.0
                };
                let better = if bland {
                    leave.is_none_or(|(lp, _)| j < self.head[lp])
                } else {
                    leave.is_none_or(|(_, b)| viol > b)
                };
                if viol > 0.0 && better {
                    leave = Some((p, viol));
                }
            }
            let Some((r, _)) = leave else { return LpStatus::Optimal };
            self.iterations += 1;
            let jr = self.head[r];
            let to_lower = self.x[jr] < self.lb[jr];
            let y = self.duals();
            let row: Vec<f64> = self.binv[r * m..(r + 1) * m].to_vec();
            let mut cands: Vec<(usize, f64, f64)> = Vec::new();
            for j in 0..n + m {
                if self.pos[j] != NONE || self.is_fixed(j) {
                    continue;
                }
                let alpha = self.row_alpha(&row, j);
                if alpha.abs() < PIVOT_TOL {
                    continue;
                }
                let free = !self.lb[j].is_finite() && !self.ub[j].is_finite();
                let can_inc = free || !self.at_upper[j];
                let can_dec = free || self.at_upper[j];
                let ok = if to_lower {
                    (can_inc && alpha < 0.0) || (can_dec && alpha > 0.0)
                } else {
                    (can_inc && alpha > 0.0) || (can_dec && alpha < 0.0)
                };
                if !ok {
                    continue;
                }
                let dj = self.reduced(j, &y);
                let slack = if free {
                    dj.abs()
                } else if self.at_upper[j] {
                    (-dj).max(0.0)
                } else {
                    dj.max(0.0)
                };
                cands.push((j, slack, alpha.abs()));
            }
            if cands.is_empty() {
                return LpStatus::Infeasible;
            }
            let theta = cands.iter().map(|&(_, s, a)| (s + DUAL_TOL) / a).fold(f64::INFINITY, f64::min);
            let mut best: Option<(usize, f64)> = None;
            for &(j, s, a) in &cands {
                let better = if bland { best.is_none() } else { best.is_none_or(|(_, ba)| a > ba) };
                if s / a <= theta && better {
                    best = Some((j, a));
                }
            }
            let step = best.map_or(0.0, |(j, a)| cands.iter().find(|c| c.0 == j).map_or(0.0, |c| c.1 / a));
            degenerate = if step < 1e-12 { degenerate + 1 } else { 0 };
            let (q, _) = best.expect("candidate");
            let w = self.ftran(q);
            if w[r].abs() < PIVOT_TOL {
                if !self.refactor() {
                    return LpStatus::Failed;
                }
                continue;
            }
            self.at_upper[jr] = !to_lower;
            self.pivot(r, q, &w);
        }
    }

    fn primal_simplex(&mut self, max_iter: usize) -> LpStatus {
        let (n, m) = (self.d.n, self.d.m);
        let mut degenerate = 0usize;
        loop {
            if self.iterations >= max_iter {
                return LpStatus::Failed;
            }
            self.compute_xb();
            let y = self.duals();
            let bland = degenerate > 50;
            let mut enter: Option<(usize, f64, bool)> = None;
            for j in 0..n + m {
                if self.pos[j] != NONE || self.is_fixed(j) {
                    continue;
                }
                let dj = self.reduced(j, &y);
                let free = !self.lb[j].is_finite() && !self.ub[j].is_finite();
                let inc = if free {
                    if dj.abs() <= DUAL_TOL {
                        continue;
                    }
                    dj < 0.0
                } else if self.at_upper[j] {
                    if dj <= DUAL_TOL {
                        continue;
                    }
                    false
                } else {
                    if dj >= -DUAL_TOL {
                        continue;
                    }
                    true
                };
                if bland {
                    enter = Some((j, dj.abs(), inc));
                    break;
                }
                if enter.is_none_or(|(_, s, _)| dj.abs() > s) {
                    enter = Some((j, dj.abs(), inc));
                }
            }
            let Some((q, _, inc)) = enter else { return LpStatus::Optimal };
            self.iterations += 1;
            let dir = if inc { 1.0 } else { -1.0 };
            let w = self.ftran(q);
            let mut t_best = self.ub[q] - self.lb[q];
            let mut leave: Option<(usize, bool, f64)> = None;
            for p in 0..m {
                let coef = -dir * w[p];
                if coef.abs() < PIVOT_TOL {
                    continue;
                }
                let j = self.head[p];
                let room = if coef < 0.0 {
                    if !self.lb[j].is_finite() {
                        continue;
                    }
                    ((self.x[j] - self.lb[j]) / -coef).max(0.0)
                } else {
                    if !self.ub[j].is_finite() {
                        continue;
                    }
                    ((self.ub[j] - self.x[j]) / coef).max(0.0)
                };
                let better = match leave {
                    None => room < t_best || (room == t_best && t_best.is_finite()),
                    Some((lp, _, la)) => {
                        room < t_best - 1e-12
                            || (room <= t_best + 1e-12
                                && if bland { j < self.head[lp] } else { coef.abs() > la })
                    }
                };
                if better {
                    t_best = t_best.min(room);
                    leave = Some((p, coef < 0.0, coef.abs()));
                }
            }
            if !t_best.is_finite() {
                return LpStatus::Unbounded;
            }
            degenerate = if t_best < 1e-12 { degenerate + 1 } else { 0 };
            match leave {
                None => self.at_upper[q] = !self.at_upper[q],
                Some((r, to_lower, _)) => {
                    if w[r].abs() < PIVOT_TOL {
                        if !self.refactor() {
                            return LpStatus::Failed;
                        }
                        continue;
                    }
                    let jr = self.head[r];
                    self.at_upper[jr] = !to_lower;
                    self.pivot(r, q, &w);
                }
            }
        }
    }

    fn primal_feasible(&self) -> bool {
        (0..self.d.n + self.d.m).all(|j| self.x[j] >= self.lb[j] - 1e-6 && self.x[j] <= self.ub[j] + 1e-6)
    }

    /// Solves from the current basis: dual simplex to primal feasibility, then primal cleanup.
    pub fn solve(&mut self, max_iter: usize) -> LpStatus {
        // the budget is per call; `iterations` keeps the running total
        let max_iter = self.iterations + max_iter;
        for attempt in 0..2 {
            self.normalize_nonbasic();
            self.cost.clone_from(&self.d.cost);
            self.compute_xb();
            let y = self.duals();
            let mut shifted = false;
            for j in 0..self.d.n + self.d.m {
                if self.pos[j] != NONE || self.is_fixed(j) {
                    continue;
                }
                let dj = self.reduced(j, &y);
                let free = !self.lb[j].is_finite() && !self.ub[j].is_finite();
                if free {
                    if dj.abs() > DUAL_TOL {
                        self.cost[j] -= dj;
                        shifted = true;
                    }
                } else if !self.at_upper[j] && dj < -DUAL_TOL {
                    if self.ub[j].is_finite() {
                        self.at_upper[j] = true;
                    } else {
                        self.cost[j] -= dj;
                        shifted = true;
                    }
                } else if self.at_upper[j] && dj > DUAL_TOL {
                    if self.lb[j].is_finite() {
                        self.at_upper[j] = false;
                    } else {
                        self.cost[j] -= dj;
                        shifted = true;
                    }
                }
            }
            let st = self.dual_simplex(max_iter);
            if st != LpStatus::Optimal {
                if st == LpStatus::Failed && attempt == 0 {
                    self.slack_basis();
                    continue;
                }
                return st;
            }
            if shifted {
                self.cost.clone_from(&self.d.cost);
            }
            let st = self.primal_simplex(max_iter);
            if st != LpStatus::Optimal {
                if st == LpStatus::Failed && attempt == 0 {
                    self.slack_basis();
                    continue;
                }
                return st;
            }
            if self.refactor() {
                self.compute_xb();
            }
            if self.primal_feasible() {
                return LpStatus::Optimal;
            }
            if attempt == 0 {
                self.slack_basis();
            }
        }
        LpStatus::Failed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::model::{Model, Sense};

    fn solve(model: &Model) -> (LpStatus, f64, Vec<f64>) {
        let d = LpData::from_model(model);
        let mut s = LpSolver::new(&d);
        let st = s.solve(10_000);
        (st, s.objective(), s.x[..d.n].to_vec())
    }

    #[test]
    fn small_lp() {
        // max 3x + 2y st x + y ≤ 4, x + 3y ≤ 6, x ≤ 3
        let mut m = Model::new();
        let x = m.add_continuous("x", 0.0, 3.0);
        let y = m.add_continuous("y", 0.0, f64::INFINITY);
        m.add_constraint("c1", &[(x, 1.0), (y, 1.0)], Sense::Le, 4.0);
        m.add_constraint("c2", &[(x, 1.0), (y, 3.0)], Sense::Le, 6.0);
        m.set_objective(&[(x, -3.0), (y, -2.0)], 0.0);
        let (st, obj, v) = solve(&m);
        assert_eq!(st, LpStatus::Optimal);
        assert!((obj + 11.0).abs() < 1e-9, "{obj}");
        assert!((v[0] - 3.0).abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_ge_rows() {
        let mut m = Model::new();
        let x = m.add_continuous("x", 0.0, f64::INFINITY);
        let y = m.add_continuous("y", 0.0, f64::INFINITY);
        m.add_constraint("e", &[(x, 1.0), (y, 1.0)], Sense::Eq, 5.0);
        m.add_constraint("g", &[(x, 1.0), (y, -1.0)], Sense::Ge, 1.0);
        m.set_objective(&[(x, 2.0), (y, 1.0)], 0.0);
        let (st, obj, v) = solve(&m);
        assert_eq!(st, LpStatus::Optimal);
        assert!((obj - 8.0).abs() < 1e-9 && (v[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut m = Model::new();
        let x = m.add_continuous("x", 0.0, f64::INFINITY);
        m.add_constraint("a", &[(x, 1.0)], Sense::Ge, 3.0);
        m.add_constraint("b", &[(x, 1.0)], Sense::Le, 2.0);
        assert_eq!(solve(&m).0, LpStatus::Infeasible);
        let mut u = Model::new();
        let x = u.add_continuous("x", 0.0, f64::INFINITY);
        let y = u.add_continuous("y", 0.0, f64::INFINITY);
        u.add_constraint("a", &[(x, 1.0), (y, -1.0)], Sense::Le, 1.0);
        u.set_objective(&[(x, -1.0)], 0.0);
        assert_eq!(solve(&u).0, LpStatus::Unbounded);
    }
}
