//! Plain-text serialization of quadratic problem instances.
//!
//! ```text
//! setup constraint_coupled
//! agents 2
//! agent 0
//! Q 2 2
//! 1,0
//! 0,1
//! r 2
//! 0.5,-1
//! ...
//! ```
//!
//! A matrix block is `name rows cols` followed by `rows` CSV lines; a vector
//! block is `name len` followed by one CSV line. Numbers use the shortest
//! representation that parses back to the same `f64`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::blocks::Setup;
use crate::error::{Error, Result};
use crate::problem::{
    AggregativeCost, AggregativeGame, AggregativeProblem, ConsensusProblem,
    ConstraintCoupledProblem, Contribution, CouplingConstraint, HasAggregation, HasCoupling,
    LinearContribution, LocalCost, QuadraticAggregativeCost, QuadraticCost,
};

fn csv_row<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    values.map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn write_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "{name} {} {}", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        let _ = writeln!(out, "{}", csv_row(m.row(r).iter()));
    }
}

fn write_vector(out: &mut String, name: &str, v: &DVector<f64>) {
    let _ = writeln!(out, "{name} {}", v.len());
    let _ = writeln!(out, "{}", csv_row(v.iter()));
}

fn unsupported() -> Error {
    Error::Unsupported("only quadratic costs with linear contributions can be serialized".into())
}

fn write_quadratic(out: &mut String, cost: &dyn LocalCost) -> Result<()> {
    let q = cost.as_quadratic().ok_or_else(unsupported)?;
    write_matrix(out, "Q", &q.q);
    write_vector(out, "r", &q.r);
    Ok(())
}

fn write_aggregative(
    out: &mut String,
    cost: &dyn AggregativeCost,
    phi: &dyn Contribution,
) -> Result<()> {
    let c = cost.as_quadratic().ok_or_else(unsupported)?;
    let l = phi.as_linear().ok_or_else(unsupported)?;
    write_matrix(out, "P", &c.pxx);
    write_matrix(out, "C", &c.cxs);
    write_matrix(out, "S", &c.pss);
    write_vector(out, "p", &c.lin_x);
    write_vector(out, "q", &c.lin_s);
    write_matrix(out, "M", &l.matrix);
    write_vector(out, "c", &l.offset);
    Ok(())
}

fn write_coupling(out: &mut String, coupling: &CouplingConstraint, agent: usize) {
    write_matrix(out, "A", &coupling.a[agent]);
    write_vector(out, "b", &coupling.b[agent]);
}

/// Serializes a setup whose costs are quadratic (and contributions linear).
pub fn write_instance(setup: &Setup) -> Result<String> {
    let mut out = String::new();
    let (name, n) = match setup {
        Setup::Consensus(p) => ("consensus", p.n_agents()),
        Setup::ConstraintCoupled(p) => ("constraint_coupled", p.n_agents()),
        Setup::Aggregative(p) => ("aggregative", p.n_agents()),
        Setup::Game(p) => ("game", p.n_agents()),
    };
    let _ = writeln!(out, "setup {name}");
    let _ = writeln!(out, "agents {n}");
    for i in 0..n {
        let _ = writeln!(out, "agent {i}");
        match setup {
            Setup::Consensus(p) => write_quadratic(&mut out, p.costs()[i].as_ref())?,
            Setup::ConstraintCoupled(p) => {
                write_quadratic(&mut out, p.costs()[i].as_ref())?;
                write_coupling(&mut out, p.coupling(), i);
            }
            Setup::Aggregative(p) => {
                write_aggregative(&mut out, p.costs()[i].as_ref(), p.contributions()[i].as_ref())?
            }
            Setup::Game(p) => {
                write_aggregative(&mut out, p.costs()[i].as_ref(), p.contributions()[i].as_ref())?;
                write_coupling(&mut out, p.coupling(), i);
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            line: self.pos + 1,
            msg: msg.into(),
        }
    }

    fn next_line(&mut self) -> Result<&'a str> {
        while self.pos < self.lines.len() {
            let line = self.lines[self.pos].trim();
            self.pos += 1;
            if !line.is_empty() && !line.starts_with('#') {
                return Ok(line);
            }
        }
        Err(self.err("unexpected end of input"))
    }

    fn peek(&mut self) -> Option<&'a str> {
        while self.pos < self.lines.len() {
            let line = self.lines[self.pos].trim();
            if !line.is_empty() && !line.starts_with('#') {
                return Some(line);
            }
            self.pos += 1;
        }
        None
    }

    fn keyword(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next_line()?;
        line.strip_prefix(key)
            .filter(|rest| rest.starts_with(' '))
            .map(str::trim)
            .ok_or_else(|| {
                self.pos -= 1;
                let e = self.err(format!("expected `{key}`"));
                self.pos += 1;
                e
            })
    }

    fn floats(&mut self, expected: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| self.err(e.to_string()))?;
        if vals.len() != expected {
            return Err(self.err(format!("expected {expected} values, got {}", vals.len())));
        }
        Ok(vals)
    }

    /// Reads the named blocks of one agent until the next `agent` line.
    fn agent_blocks(&mut self) -> Result<HashMap<String, DMatrix<f64>>> {
        let mut blocks = HashMap::new();
        while let Some(line) = self.peek() {
            if line.starts_with("agent ") {
                break;
            }
            self.pos += 1;
            let parts: Vec<&str> = line.split_whitespace().collect();
            let dims: Vec<usize> = parts[1..]
                .iter()
                .map(|s| s.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| self.err("bad block dimensions"))?;
            let m = match dims.as_slice() {
                [len] => {
                    let vals = if *len == 0 { Vec::new() } else { self.floats(*len)? };
                    DMatrix::from_vec(*len, 1, vals)
                }
                [rows, cols] => {
                    let mut data = Vec::with_capacity(rows * cols);
                    for _ in 0..*rows {
                        data.extend(self.floats(*cols)?);
                    }
                    DMatrix::from_row_slice(*rows, *cols, &data)
                }
                _ => return Err(self.err("block header must be `name len` or `name rows cols`")),
            };
            blocks.insert(parts[0].to_string(), m);
        }
        Ok(blocks)
    }
}

fn take(blocks: &mut HashMap<String, DMatrix<f64>>, name: &str, agent: usize) -> Result<DMatrix<f64>> {
    blocks.remove(name).ok_or_else(|| Error::Parse {
        line: 0,
        msg: format!("agent {agent} is missing block `{name}`"),
    })
}

fn vector(m: DMatrix<f64>) -> DVector<f64> {
    let n = m.len();
    DVector::from_iterator(n, m.iter().copied())
}

/// Parses an instance written by [`write_instance`].
pub fn read_instance(text: &str) -> Result<Setup> {
    let mut r = Reader {
        lines: text.lines().collect(),
        pos: 0,
    };
    let setup = r.keyword("setup")?.to_string();
    if !["consensus", "constraint_coupled", "aggregative", "game"].contains(&setup.as_str()) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unknown setup `{setup}`"),
        });
    }
    let n: usize = r.keyword("agents")?.parse().map_err(|_| r.err("bad agent count"))?;
    let mut agents = Vec::with_capacity(n);
    for i in 0..n {
        let idx: usize = r.keyword("agent")?.parse().map_err(|_| r.err("bad agent index"))?;
        if idx != i {
            return Err(r.err(format!("expected agent {i}, found {idx}")));
        }
        agents.push(r.agent_blocks()?);
    }
    let mut quad = Vec::new();
    let mut agg: Vec<Box<dyn AggregativeCost>> = Vec::new();
    let mut phis: Vec<Box<dyn Contribution>> = Vec::new();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (i, blocks) in agents.iter_mut().enumerate() {
        match setup.as_str() {
            "consensus" | "constraint_coupled" => {
                quad.push(Box::new(QuadraticCost::new(
                    take(blocks, "Q", i)?,
                    vector(take(blocks, "r", i)?),
                )?) as Box<dyn LocalCost>);
            }
            "aggregative" | "game" => {
                agg.push(Box::new(QuadraticAggregativeCost::new(
                    take(blocks, "P", i)?,
                    take(blocks, "C", i)?,
                    take(blocks, "S", i)?,
                    vector(take(blocks, "p", i)?),
                    vector(take(blocks, "q", i)?),
                )?));
                phis.push(Box::new(LinearContribution::new(
                    take(blocks, "M", i)?,
                    vector(take(blocks, "c", i)?),
                )?));
            }
            _ => unreachable!("setup name checked above"),
        }
        if matches!(setup.as_str(), "constraint_coupled" | "game") {
            a.push(take(blocks, "A", i)?);
            b.push(vector(take(blocks, "b", i)?));
        }
    }
    Ok(match setup.as_str() {
        "consensus" => {
            let dim = quad.first().map_or(0, |c| c.dim());
            Setup::Consensus(Arc::new(ConsensusProblem::new(dim, quad)?))
        }
        "constraint_coupled" => Setup::ConstraintCoupled(Arc::new(ConstraintCoupledProblem::new(
            quad,
            CouplingConstraint::new(a, b)?,
        )?)),
        "aggregative" => Setup::Aggregative(Arc::new(AggregativeProblem::new(agg, phis)?)),
        _ => Setup::Game(Arc::new(AggregativeGame::new(
            agg,
            phis,
            CouplingConstraint::new(a, b)?,
        )?)),
    })
}
