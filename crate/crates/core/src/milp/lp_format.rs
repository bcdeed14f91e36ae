//! CPLEX LP text format: export and a parser for the subset the exporter writes.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use super::model::{Model, Sense, VarId, VarKind};
use crate::error::{FlexError, Result};

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

/// Maps arbitrary names onto LP-legal identifiers; collisions get a numeric suffix.
pub fn sanitize_names<'a>(names: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut used = BTreeSet::new();
    let mut out = Vec::new();
    for raw in names {
        let mut s: String = raw.chars().map(|c| if is_name_char(c) { c } else { '_' }).collect();
        if s.is_empty() || s.starts_with(|c: char| c.is_ascii_digit() || c == '.') || s.parse::<f64>().is_ok()
            || s.eq_ignore_ascii_case("free") || s.eq_ignore_ascii_case("infinity")
        {
            s.insert(0, '_');
        }
        let mut candidate = s.clone();
        let mut k = 1;
        while used.contains(&candidate) {
            candidate = format!("{s}_{k}");
            k += 1;
        }
        used.insert(candidate.clone());
        out.push(candidate);
    }
    out
}

fn write_terms(buf: &mut String, terms: &[(VarId, f64)], names: &[String]) {
    if terms.is_empty() {
        buf.push_str(" 0");
    }
    for (v, c) in terms {
        let sign = if *c < 0.0 { '-' } else { '+' };
        let _ = write!(buf, " {sign} {} {}", c.abs(), names[v.0]);
    }
}

pub fn to_lp_string(model: &Model) -> String {
    let names = sanitize_names(model.vars.iter().map(|v| v.name.as_str()));
    let cnames = sanitize_names(model.constraints.iter().map(|c| c.name.as_str()));
    let mut buf = String::from("Minimize\n obj:");
    write_terms(&mut buf, &model.objective, &names);
    if model.obj_constant != 0.0 {
        let sign = if model.obj_constant < 0.0 { '-' } else { '+' };
        let _ = write!(buf, " {sign} {}", model.obj_constant.abs());
    }
    buf.push_str("\nSubject To\n");
    for (c, name) in model.constraints.iter().zip(&cnames) {
        let _ = write!(buf, " {name}:");
        write_terms(&mut buf, &c.terms, &names);
        let _ = writeln!(buf, " {} {}", c.sense, c.rhs);
    }
    buf.push_str("Bounds\n");
    for (v, name) in model.vars.iter().zip(&names) {
        if v.ub.is_finite() {
            let _ = writeln!(buf, " {} <= {name} <= {}", v.lb, v.ub);
        } else {
            let _ = writeln!(buf, " {name} >= {}", v.lb);
        }
    }
    for (kind, header) in [(VarKind::Integer, "General"), (VarKind::Binary, "Binary")] {
        let list: Vec<&str> =
            model.vars.iter().zip(&names).filter(|(v, _)| v.kind == kind).map(|(_, n)| n.as_str()).collect();
        if !list.is_empty() {
            let _ = writeln!(buf, "{header}\n {}", list.join(" "));
        }
    }
    buf.push_str("End\n");
    buf
}

pub fn export_lp(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, to_lp_string(model))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Name(String),
    Plus,
    Minus,
    Colon,
    Sense(Sense),
}

fn tokenize(line: &str, lineno: usize) -> Result<Vec<Tok>> {
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    let mut out = Vec::new();
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '\\' {
            break;
        } else if c == '+' {
            out.push(Tok::Plus);
            i += 1;
        } else if c == '-' {
            out.push(Tok::Minus);
            i += 1;
        } else if c == ':' {
            out.push(Tok::Colon);
            i += 1;
        } else if c == '<' || c == '>' || c == '=' {
            let mut op = String::from(c);
            if i + 1 < chars.len() && matches!(chars[i + 1], '<' | '>' | '=') {
                op.push(chars[i + 1]);
                i += 1;
            }
            i += 1;
            let sense = match op.as_str() {
                "<" | "<=" | "=<" => Sense::Le,
                ">" | ">=" | "=>" => Sense::Ge,
                "=" => Sense::Eq,
                _ => return Err(FlexError::Parse { line: lineno, msg: format!("bad operator {op}") }),
            };
            out.push(Tok::Sense(sense));
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() {
                let ch = chars[i];
                let exp_sign = (ch == '+' || ch == '-') && matches!(chars[i - 1], 'e' | 'E');
                if ch.is_ascii_digit() || ch == '.' || ch == 'e' || ch == 'E' || exp_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v = s.parse().map_err(|_| FlexError::Parse { line: lineno, msg: format!("bad number {s}") })?;
            out.push(Tok::Num(v));
        } else {
            let start = i;
            while i < chars.len() && !chars[i].is_whitespace() && !matches!(chars[i], '+' | '-' | ':' | '<' | '>' | '=' | '\\') {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") {
                out.push(Tok::Num(f64::INFINITY));
            } else {
                out.push(Tok::Name(s));
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Objective,
    Constraints,
    Bounds,
    General,
    Binary,
    End,
}

fn section_of(line: &str) -> Option<Section> {
    let l = line.trim().to_ascii_lowercase();
    Some(match l.as_str() {
        "minimize" | "minimum" | "min" => Section::Objective,
        "subject to" | "such that" | "st" | "s.t." => Section::Constraints,
        "bounds" | "bound" => Section::Bounds,
        "general" | "generals" | "gen" => Section::General,
        "binary" | "binaries" | "bin" => Section::Binary,
        "end" => Section::End,
        _ => return None,
    })
}

struct Builder {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Builder {
    fn var(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), self.names.len() - 1);
        self.names.len() - 1
    }
}

/// Parses `[label:] linear-expression [sense number]` into terms, constant, sense, rhs.
#[allow(clippy::type_complexity)]
fn parse_expr(
    toks: &[Tok],
    b: &mut Builder,
    lineno: usize,
) -> Result<(Option<String>, Vec<(usize, f64)>, f64, Option<(Sense, f64)>)> {
    let mut i = 0;
    let mut label = None;
    if toks.len() >= 2 {
        if let (Tok::Name(n), Tok::Colon) = (&toks[0], &toks[1]) {
            label = Some(n.clone());
            i = 2;
        }
    }
    let err = |msg: &str| FlexError::Parse { line: lineno, msg: msg.to_string() };
    let mut terms = Vec::new();
    let mut constant = 0.0;
    let mut sign = 1.0;
    let mut coef: Option<f64> = None;
    while i < toks.len() {
        match &toks[i] {
            Tok::Plus => {}
            Tok::Minus => sign = -sign,
            Tok::Num(v) => {
                if let Some(c) = coef {
                    constant += sign * c;
                    sign = 1.0;
                }
                coef = Some(*v);
            }
            Tok::Name(n) => {
                terms.push((b.var(n), sign * coef.take().unwrap_or(1.0)));
                sign = 1.0;
            }
            Tok::Colon => return Err(err("unexpected ':'")),
            Tok::Sense(s) => {
                if let Some(c) = coef.take() {
                    constant += sign * c;
                }
                let rest = &toks[i + 1..];
                let rhs = match rest {
                    [Tok::Num(v)] => *v,
                    [Tok::Minus, Tok::Num(v)] => -*v,
                    [Tok::Plus, Tok::Num(v)] => *v,
                    _ => return Err(err("right-hand side must be a single number")),
                };
                return Ok((label, terms, constant, Some((*s, rhs))));
            }
        }
        i += 1;
    }
    if let Some(c) = coef {
        constant += sign * c;
    }
    Ok((label, terms, constant, None))
}

fn signed_value(toks: &[Tok]) -> Option<f64> {
    match toks {
        [Tok::Num(v)] => Some(*v),
        [Tok::Minus, Tok::Num(v)] => Some(-*v),
        [Tok::Plus, Tok::Num(v)] => Some(*v),
        _ => None,
    }
}

pub fn parse_lp(text: &str) -> Result<Model> {
    let mut b = Builder { names: Vec::new(), index: HashMap::new() };
    let mut section = Section::None;
    let mut objective: Vec<(usize, f64)> = Vec::new();
    let mut obj_constant = 0.0;
    let mut rows: Vec<(String, Vec<(usize, f64)>, Sense, f64)> = Vec::new();
    let mut pending: Vec<Tok> = Vec::new();
    let mut pending_line = 0;
    let mut bounds: HashMap<usize, (f64, f64)> = HashMap::new();
    let mut bound_order: Vec<usize> = Vec::new();
    let mut kinds: HashMap<usize, VarKind> = HashMap::new();

    for (k, raw) in text.lines().enumerate() {
        let lineno = k + 1;
        if let Some(s) = section_of(raw) {
            section = s;
            continue;
        }
        let toks = tokenize(raw, lineno)?;
        if toks.is_empty() {
            continue;
        }
        let err = |msg: String| FlexError::Parse { line: lineno, msg };
        match section {
            Section::None | Section::End => return Err(err("content outside a section".into())),
            Section::Objective => {
                let (_, terms, c, sense) = parse_expr(&toks, &mut b, lineno)?;
                if sense.is_some() {
                    return Err(err("objective cannot have a sense".into()));
                }
                objective.extend(terms);
                obj_constant += c;
            }
            Section::Constraints => {
                if pending.is_empty() {
                    pending_line = lineno;
                }
                pending.extend(toks);
                if pending.iter().any(|t| matches!(t, Tok::Sense(_))) {
                    let (label, terms, c, sense) = parse_expr(&pending, &mut b, pending_line)?;
                    let (s, rhs) = sense.expect("sense present");
                    let name = label.unwrap_or_else(|| format!("R{}", rows.len() + 1));
                    rows.push((name, terms, s, rhs - c));
                    pending.clear();
                }
            }
            Section::Bounds => {
                let pos: Vec<usize> = toks.iter().enumerate().filter(|(_, t)| matches!(t, Tok::Name(_))).map(|(i, _)| i).collect();
                let [p] = pos[..] else { return Err(err("bound line needs exactly one variable".into())) };
                let Tok::Name(n) = &toks[p] else { unreachable!() };
                let v = b.var(n);
                if !bound_order.contains(&v) {
                    bound_order.push(v);
                }
                let entry = bounds.entry(v).or_insert((0.0, f64::INFINITY));
                let before = &toks[..p];
                let after = &toks[p + 1..];
                if after.len() == 1 && before.is_empty() {
                    return Err(err("incomplete bound".into()));
                }
                if let Some((Tok::Sense(s), num)) = before.split_last().map(|(l, r)| (l.clone(), r)) {
                    let val = signed_value(num).ok_or_else(|| err("bad bound value".into()))?;
                    match s {
                        Sense::Le => entry.0 = val,
                        Sense::Ge => entry.1 = val,
                        Sense::Eq => *entry = (val, val),
                    }
                }
                if let Some((Tok::Sense(s), num)) = after.split_first().map(|(f, r)| (f.clone(), r)) {
                    let val = signed_value(num).ok_or_else(|| err("bad bound value".into()))?;
                    match s {
                        Sense::Le => entry.1 = val,
                        Sense::Ge => entry.0 = val,
                        Sense::Eq => *entry = (val, val),
                    }
                }
            }
            Section::General | Section::Binary => {
                for t in toks {
                    let Tok::Name(n) = t else { return Err(err("expected variable names".into())) };
                    let v = b.var(&n);
                    kinds.insert(v, if section == Section::Binary { VarKind::Binary } else { VarKind::Integer });
                }
            }
        }
    }
    if !pending.is_empty() {
        return Err(FlexError::Parse { line: pending_line, msg: "constraint without a sense".into() });
    }
    // variables listed in Bounds keep that order; the rest follow in first-use order
    let mut order = bound_order.clone();
    for v in 0..b.names.len() {
        if !order.contains(&v) {
            order.push(v);
        }
    }
    let mut remap = vec![0; b.names.len()];
    let mut model = Model::new();
    for &v in &order {
        let kind = kinds.get(&v).copied().unwrap_or(VarKind::Continuous);
        let default = if kind == VarKind::Binary { (0.0, 1.0) } else { (0.0, f64::INFINITY) };
        let (lb, ub) = bounds.get(&v).copied().unwrap_or(default);
        remap[v] = model.add_var(b.names[v].clone(), kind, lb, ub).0;
    }
    let map = |t: &[(usize, f64)]| -> Vec<(VarId, f64)> { t.iter().map(|&(v, c)| (VarId(remap[v]), c)).collect() };
    model.set_objective(&map(&objective), obj_constant);
    for (name, terms, s, rhs) in rows {
        model.add_constraint(name, &map(&terms), s, rhs);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_matrix() {
        let mut m = Model::new();
        let x = m.add_binary("x");
        let y = m.add_integer("y", Some(7.0));
        let z = m.add_continuous("z", 1.5, f64::INFINITY);
        m.add_constraint("c1", &[(x, 2.0), (y, -3.5)], Sense::Le, 4.0);
        m.add_constraint("c2", &[(y, 1.0), (z, 1e-7)], Sense::Ge, -2.0);
        m.add_constraint("c3", &[(x, 1.0), (z, 1.0)], Sense::Eq, 3.0);
        m.set_objective(&[(x, 1.0), (z, -0.25)], 5.0);
        let back = parse_lp(&to_lp_string(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn reserved_characters_sanitized() {
        let names = sanitize_names(["w[1,2]", "w(1,2)", "3x", "e", "inf", "a b"]);
        assert_eq!(names, vec!["w_1_2_", "w_1_2__1", "_3x", "e", "_inf", "a_b"]);
        assert_eq!(names, sanitize_names(["w[1,2]", "w(1,2)", "3x", "e", "inf", "a b"]));
    }

    #[test]
    fn parse_error_has_line() {
        let text = "Minimize\n obj: x\nSubject To\n c: x <= y\nEnd\n";
        match parse_lp(text) {
            Err(FlexError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }
}
