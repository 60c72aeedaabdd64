//! Plain-text dump of a [`MiqpProblem`] for cross-checking elsewhere.
//!
//! ```text
//! miqp <variables> <constraints>
//! var <id> <name> <binary|continuous> <lower> <upper>
//! row <id> <role> <sense> <rhs> <var>:<coef> ...
//! obj const <value>
//! obj lin <var> <coef>
//! obj quad <var> <var> <coef>
//! ```
//!
//! The objective is `const + Σ lin + Σ quad v_i v_j`. Infinite bounds are
//! written as `-inf` and `inf`.

use std::io::{self, Write};

use super::MiqpProblem;

pub fn write_plain_text<W: Write>(p: &MiqpProblem, out: &mut W) -> io::Result<()> {
    writeln!(out, "miqp {} {}", p.variables.len(), p.constraints.len())?;
    for (id, v) in p.variables.iter().enumerate() {
        let kind = if v.binary { "binary" } else { "continuous" };
        writeln!(
            out,
            "var {id} {} {kind} {} {}",
            v.kind,
            num(v.lower),
            num(v.upper)
        )?;
    }
    for (id, c) in p.constraints.iter().enumerate() {
        write!(
            out,
            "row {id} {} {} {}",
            c.role,
            c.sense.symbol(),
            num(c.rhs)
        )?;
        for &(v, k) in &c.terms {
            write!(out, " {v}:{}", num(k))?;
        }
        writeln!(out)?;
    }
    writeln!(out, "obj const {}", num(p.objective.constant))?;
    for &(v, k) in &p.objective.linear {
        writeln!(out, "obj lin {v} {}", num(k))?;
    }
    for &(a, b, k) in &p.objective.quadratic {
        writeln!(out, "obj quad {a} {b} {}", num(k))?;
    }
    Ok(())
}

fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:?}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{encode_xor, VarKind};

    #[test]
    fn round_trips_numbers_and_layout() {
        let mut p = MiqpProblem::default();
        let a = p.add_variable(VarKind::Switch(0), true, 0.0, 1.0);
        let b = p.add_variable(VarKind::Switch(1), true, 0.0, 1.0);
        p.add_variable(VarKind::Error(1), false, f64::NEG_INFINITY, f64::INFINITY);
        encode_xor(&mut p, b, a, 1);
        p.objective.constant = 0.1;
        p.objective.quadratic.push((a, b, 1.5));
        let mut buf = Vec::new();
        write_plain_text(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "miqp 4 4");
        assert_eq!(lines[3], "var 2 e[1] continuous -inf inf");
        assert_eq!(lines[5], "row 0 xor[1] >= 0.0 3:1.0 1:-1.0 0:1.0");
        assert!(text.contains("obj const 0.1\n"));
        assert!(text.ends_with("obj quad 0 1 1.5\n"));
    }
}
