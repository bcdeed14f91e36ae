//! Mixed-integer linear programming: model, solver, linearizations, LP text format.

mod bnb;
pub mod linearize;
pub mod lp_format;
pub mod model;
mod simplex;

pub use bnb::solve;
pub use linearize::{audit_indicator, linearize_bilinear_indicator, linearize_product};
pub use lp_format::{export_lp, parse_lp, to_lp_string};
pub use model::{ConstrId, Constraint, Limits, Model, Sense, Solution, Status, VarId, VarKind, Variable};
