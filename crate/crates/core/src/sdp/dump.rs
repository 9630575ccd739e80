//! Plain-text problem dump for cross-checking with external solvers.
//!
//! ```text
//! dmabf-sdp 1
//! blocks <B> <n_1> ... <n_B>
//! objective <b>
//! <n_b rows of "re im re im ...">
//! constraint <rhs> <T>
//! term <b>
//! <n_b rows>
//! ...
//! end
//! ```
//!
//! Each objective block appears once, in order. Numbers use Rust's shortest
//! round-trip formatting, so parsing a dump reproduces the problem exactly.

use std::fmt::Write as _;

use num_complex::Complex64;

use super::{SdpConstraint, SdpProblem};
use crate::error::{Error, Result};
use crate::numerics::ComplexMatrix;

const MAGIC: &str = "dmabf-sdp 1";

fn write_matrix(out: &mut String, m: &ComplexMatrix) {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|j| format!("{:?} {:?}", m[(i, j)].re, m[(i, j)].im))
            .collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

pub fn write_problem(problem: &SdpProblem) -> String {
    let mut out = String::new();
    let dims: Vec<String> = problem.block_dims.iter().map(|d| d.to_string()).collect();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "blocks {} {}", dims.len(), dims.join(" "));
    for (b, c) in problem.objective.iter().enumerate() {
        let _ = writeln!(out, "objective {b}");
        write_matrix(&mut out, c);
    }
    for con in &problem.constraints {
        let _ = writeln!(out, "constraint {:?} {}", con.rhs, con.terms.len());
        for (b, f) in &con.terms {
            let _ = writeln!(out, "term {b}");
            write_matrix(&mut out, f);
        }
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        loop {
            let (i, l) = self
                .inner
                .next()
                .ok_or_else(|| Error::Invalid("unexpected end of dump".into()))?;
            self.line = i + 1;
            let l = l.trim();
            if !l.is_empty() && !l.starts_with('#') {
                return Ok(l);
            }
        }
    }

    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::Invalid(format!("line {}: {msg}", self.line))
    }

    fn keyword(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let l = self.next()?;
        let mut parts = l.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.err(format!("expected '{key}'")));
        }
        Ok(parts.collect())
    }

    fn matrix(&mut self, n: usize) -> Result<ComplexMatrix> {
        let mut m = ComplexMatrix::zeros(n, n);
        for i in 0..n {
            let l = self.next()?;
            let vals: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| self.err(e))?;
            if vals.len() != 2 * n {
                return Err(self.err(format!("expected {} numbers, got {}", 2 * n, vals.len())));
            }
            for j in 0..n {
                m[(i, j)] = Complex64::new(vals[2 * j], vals[2 * j + 1]);
            }
        }
        Ok(m)
    }
}

fn parse_usize(lines: &Lines, s: Option<&&str>) -> Result<usize> {
    s.ok_or_else(|| lines.err("missing integer"))?
        .parse()
        .map_err(|e| lines.err(e))
}

pub fn parse_problem(text: &str) -> Result<SdpProblem> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    if lines.next()? != MAGIC {
        return Err(lines.err(format!("expected header '{MAGIC}'")));
    }
    let head = lines.keyword("blocks")?;
    let count = parse_usize(&lines, head.first())?;
    if head.len() != count + 1 {
        return Err(lines.err("block count does not match listed sizes"));
    }
    let dims: Vec<usize> = (1..=count)
        .map(|i| parse_usize(&lines, head.get(i)))
        .collect::<Result<_>>()?;
    let mut objective = Vec::with_capacity(count);
    for (b, &n) in dims.iter().enumerate() {
        let idx = lines.keyword("objective")?;
        if parse_usize(&lines, idx.first())? != b {
            return Err(lines.err("objective blocks out of order"));
        }
        objective.push(lines.matrix(n)?);
    }
    let mut constraints = Vec::new();
    loop {
        let l = lines.next()?;
        if l == "end" {
            break;
        }
        let parts: Vec<&str> = l.split_whitespace().collect();
        if parts.first() != Some(&"constraint") || parts.len() != 3 {
            return Err(lines.err("expected 'constraint <rhs> <terms>' or 'end'"));
        }
        let rhs: f64 = parts[1].parse().map_err(|e| lines.err(e))?;
        let nterms = parse_usize(&lines, parts.get(2))?;
        let mut terms = Vec::with_capacity(nterms);
        for _ in 0..nterms {
            let t = lines.keyword("term")?;
            let b = parse_usize(&lines, t.first())?;
            let n = *dims.get(b).ok_or_else(|| lines.err(format!("no block {b}")))?;
            terms.push((b, lines.matrix(n)?));
        }
        constraints.push(SdpConstraint { terms, rhs });
    }
    let problem = SdpProblem {
        block_dims: dims,
        objective,
        constraints,
    };
    problem.validate()?;
    Ok(problem)
}
