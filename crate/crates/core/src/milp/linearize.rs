//! Exact linear reformulations of binary products and switched constraint rows.

use super::model::{ConstrId, Model, Sense, VarId, VarKind};
use crate::error::{FlexError, Result};

fn require_binary(model: &Model, v: VarId) -> Result<()> {
    let var = model.var(v);
    if var.kind == VarKind::Binary || (var.kind == VarKind::Integer && var.lb >= 0.0 && var.ub <= 1.0) {
        Ok(())
    } else {
        Err(FlexError::NotBinary(var.name.clone()))
    }
}

/// Adds z ∈ [0, 1] with z ≤ x, z ≤ y, z ≥ x + y − 1.
pub fn linearize_product(model: &mut Model, x: VarId, y: VarId) -> Result<VarId> {
    require_binary(model, x)?;
    require_binary(model, y)?;
    let name = format!("{}*{}", model.var(x).name, model.var(y).name);
    let z = model.add_continuous(name.clone(), 0.0, 1.0);
    model.add_constraint(format!("{name}_le_x"), &[(z, 1.0), (x, -1.0)], Sense::Le, 0.0);
    model.add_constraint(format!("{name}_le_y"), &[(z, 1.0), (y, -1.0)], Sense::Le, 0.0);
    model.add_constraint(format!("{name}_ge"), &[(z, 1.0), (x, -1.0), (y, -1.0)], Sense::Ge, -1.0);
    Ok(z)
}

/// Encodes `row · v ≤ cap` for every row when x = 1, and `row · v ≤ bound·cap` when x = 0:
/// `row · v ≤ bound·cap + (1 − bound)·cap·x`.
pub fn linearize_bilinear_indicator(
    model: &mut Model,
    x: VarId,
    rows: &[(String, Vec<(VarId, f64)>)],
    cap: f64,
    bound: f64,
) -> Result<Vec<ConstrId>> {
    require_binary(model, x)?;
    if bound < 1.0 {
        return Err(FlexError::BoundTooSmall { bound, activity: cap });
    }
    let mut ids = Vec::with_capacity(rows.len());
    for (name, terms) in rows {
        let mut t = terms.clone();
        t.push((x, (bound - 1.0) * cap));
        ids.push(model.add_constraint(name.clone(), &t, Sense::Le, bound * cap));
    }
    Ok(ids)
}

/// Post-solve check that no switched row came within 1e-6 of its deactivated limit,
/// which would mean the bound may have cut off feasible points.
pub fn audit_indicator(
    values: &[f64],
    x: VarId,
    rows: &[(String, Vec<(VarId, f64)>)],
    cap: f64,
    bound: f64,
) -> Result<()> {
    if values[x.0] > 0.5 {
        return Ok(());
    }
    for (_, terms) in rows {
        let activity: f64 = terms.iter().map(|(v, a)| a * values[v.0]).sum();
        if activity >= bound * cap - 1e-6 {
            return Err(FlexError::BoundTooSmall { bound: bound * cap, activity });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{solve, Limits, Status};

    #[test]
    fn product_exact_at_all_points() {
        for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
            for sign in [1.0, -1.0] {
                let mut m = Model::new();
                let x = m.add_binary("x");
                let y = m.add_binary("y");
                let z = linearize_product(&mut m, x, y).unwrap();
                m.add_constraint("fx", &[(x, 1.0)], Sense::Eq, a);
                m.add_constraint("fy", &[(y, 1.0)], Sense::Eq, b);
                m.set_objective(&[(z, sign)], 0.0);
                let s = solve(&m, &Limits::default()).unwrap();
                assert_eq!(s.status, Status::Optimal);
                assert!((s.value(z) - a * b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn product_rejects_integer() {
        let mut m = Model::new();
        let x = m.add_integer("x", Some(3.0));
        let y = m.add_binary("y");
        assert!(matches!(linearize_product(&mut m, x, y), Err(FlexError::NotBinary(_))));
    }

    fn load_model(xval: f64, load: f64) -> Status {
        let mut m = Model::new();
        let x = m.add_binary("x");
        let q = m.add_continuous("q", 0.0, f64::INFINITY);
        m.add_constraint("fix_x", &[(x, 1.0)], Sense::Eq, xval);
        m.add_constraint("fix_q", &[(q, 1.0)], Sense::Eq, load);
        linearize_bilinear_indicator(&mut m, x, &[("cap".into(), vec![(q, 1.0)])], 12.0, 100.0).unwrap();
        solve(&m, &Limits::default()).unwrap().status
    }

    #[test]
    fn indicator_active_and_inactive() {
        assert_eq!(load_model(1.0, 13.0), Status::Infeasible);
        assert_eq!(load_model(1.0, 12.0), Status::Optimal);
        assert_eq!(load_model(0.0, 500.0), Status::Optimal);
    }

    #[test]
    fn audit_flags_tight_bound() {
        let rows = vec![("r".to_string(), vec![(VarId(1), 1.0)])];
        assert!(audit_indicator(&[0.0, 24.0], VarId(0), &rows, 12.0, 2.0).is_err());
        assert!(audit_indicator(&[0.0, 5.0], VarId(0), &rows, 12.0, 2.0).is_ok());
        assert!(audit_indicator(&[1.0, 24.0], VarId(0), &rows, 12.0, 2.0).is_ok());
    }
}
