use std::fmt;
use std::time::Duration;

use crate::error::{FlexError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConstrId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    Binary,
    Integer,
    Continuous,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lb: f64,
    pub ub: f64,
}

impl Variable {
    pub fn is_integral(&self) -> bool {
        !matches!(self.kind, VarKind::Continuous)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(v, c)| c * x[v.0]).sum()
    }

    /// Amount by which `x` violates the row, zero when satisfied.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let a = self.activity(x);
        match self.sense {
            Sense::Le => (a - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - a).max(0.0),
            Sense::Eq => (a - self.rhs).abs(),
        }
    }
}

/// Linear objective (minimized) over bounded variables and linear rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Model {
    pub vars: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub objective: Vec<(VarId, f64)>,
    pub obj_constant: f64,
}

fn merge_terms(terms: &[(VarId, f64)]) -> Vec<(VarId, f64)> {
    let mut t: Vec<(VarId, f64)> = terms.to_vec();
    t.sort_by_key(|(v, _)| *v);
    let mut out: Vec<(VarId, f64)> = Vec::with_capacity(t.len());
    for (v, c) in t {
        match out.last_mut() {
            Some((lv, lc)) if *lv == v => *lc += c,
            _ => out.push((v, c)),
        }
    }
    out.retain(|(_, c)| *c != 0.0);
    out
}

impl Model {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, kind: VarKind, lb: f64, ub: f64) -> VarId {
        let (lb, ub) = match kind {
            VarKind::Binary => (lb.max(0.0), ub.min(1.0)),
            _ => (lb, ub),
        };
        self.vars.push(Variable { name: name.into(), kind, lb, ub });
        VarId(self.vars.len() - 1)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, VarKind::Binary, 0.0, 1.0)
    }

    pub fn add_integer(&mut self, name: impl Into<String>, ub: Option<f64>) -> VarId {
        self.add_var(name, VarKind::Integer, 0.0, ub.unwrap_or(f64::INFINITY))
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lb: f64, ub: f64) -> VarId {
        self.add_var(name, VarKind::Continuous, lb, ub)
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        terms: &[(VarId, f64)],
        sense: Sense,
        rhs: f64,
    ) -> ConstrId {
        self.constraints.push(Constraint { name: name.into(), terms: merge_terms(terms), sense, rhs });
        ConstrId(self.constraints.len() - 1)
    }

    pub fn set_objective(&mut self, terms: &[(VarId, f64)], constant: f64) {
        self.objective = merge_terms(terms);
        self.obj_constant = constant;
    }

    pub fn add_objective_terms(&mut self, terms: &[(VarId, f64)]) {
        let mut all = self.objective.clone();
        all.extend_from_slice(terms);
        self.objective = merge_terms(&all);
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn var(&self, v: VarId) -> &Variable {
        &self.vars[v.0]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vars.len();
        for v in &self.vars {
            if !v.lb.is_finite() || v.ub < v.lb || v.ub.is_nan() {
                return Err(FlexError::InvalidModel(format!("variable {} has invalid bounds", v.name)));
            }
        }
        let check = |terms: &[(VarId, f64)], what: &str| -> Result<()> {
            for (v, c) in terms {
                if v.0 >= n {
                    return Err(FlexError::InvalidModel(format!("{what} references undeclared variable {}", v.0)));
                }
                if !c.is_finite() {
                    return Err(FlexError::InvalidModel(format!("{what} has a non-finite coefficient")));
                }
            }
            Ok(())
        };
        for c in &self.constraints {
            check(&c.terms, &c.name)?;
            if !c.rhs.is_finite() {
                return Err(FlexError::InvalidModel(format!("{} has a non-finite right-hand side", c.name)));
            }
        }
        check(&self.objective, "objective")?;
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.obj_constant + self.objective.iter().map(|(v, c)| c * x[v.0]).sum::<f64>()
    }

    /// First violated bound, integrality or row at tolerance `tol`.
    pub fn first_violation(&self, x: &[f64], tol: f64) -> Option<String> {
        for (v, &val) in self.vars.iter().zip(x) {
            if val < v.lb - tol || val > v.ub + tol {
                return Some(format!("bound of {}: {val}", v.name));
            }
            if v.is_integral() && (val - val.round()).abs() > tol {
                return Some(format!("integrality of {}: {val}", v.name));
            }
        }
        self.constraints
            .iter()
            .find(|c| c.violation(x) > tol)
            .map(|c| format!("row {}: violation {}", c.name, c.violation(x)))
    }

    pub fn is_feasible(&self, x: &[f64], tol: f64) -> bool {
        self.first_violation(x, tol).is_none()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    /// A node or time limit stopped the search; `values` holds the incumbent if any.
    Limit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub status: Status,
    pub objective: f64,
    pub values: Vec<f64>,
    pub nodes: usize,
    pub wall_time: Duration,
    /// Best proven lower bound.
    pub bound: f64,
}

impl Solution {
    pub fn value(&self, v: VarId) -> f64 {
        self.values[v.0]
    }

    pub fn has_incumbent(&self) -> bool {
        !self.values.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Limits {
    pub max_nodes: Option<usize>,
    pub time_limit: Option<Duration>,
    pub feasibility_tol: f64,
    pub integrality_tol: f64,
    /// Absolute optimality gap accepted before a node is pruned.
    pub gap: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_nodes: None, time_limit: None, feasibility_tol: 1e-6, integrality_tol: 1e-6, gap: 0.0 }
    }
}
