//! A small conic-program model and its solve contract.
//!
//! Programs are built from named variable blocks and affine expressions over
//! them, then handed to the Clarabel interior-point solver. Whatever the
//! solver reports, the residuals in [`ConicSolution`] are recomputed here from
//! the returned point.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{min_eigenvalue, SymMatrix};

pub const DEFAULT_FEAS_TOL: f64 = 1e-8;
pub const DEFAULT_GAP_TOL: f64 = 1e-7;

/// Coefficients closer than this are considered equal when checking that a
/// PSD block is symmetric.
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
    /// Symmetric `n x n`, parameterized by its lower triangle.
    Symmetric(usize),
}

impl Shape {
    fn len(self) -> usize {
        match self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
            Shape::Symmetric(n) => n * (n + 1) / 2,
        }
    }
}

#[derive(Debug, Clone)]
struct Block {
    name: String,
    shape: Shape,
    offset: usize,
}

/// Handle to a variable block of one particular program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    block: usize,
    shape: Shape,
    offset: usize,
}

impl Var {
    fn index(&self, i: usize, j: usize) -> usize {
        let local = match self.shape {
            Shape::Scalar => {
                assert!(i == 0 && j == 0, "scalar variable has a single entry");
                0
            }
            Shape::Vector(n) => {
                assert!(i < n && j == 0, "vector index {i} out of range {n}");
                i
            }
            Shape::Matrix(r, c) => {
                assert!(i < r && j < c, "matrix index ({i}, {j}) out of range {r}x{c}");
                i * c + j
            }
            Shape::Symmetric(n) => {
                assert!(i < n && j < n, "symmetric index ({i}, {j}) out of range {n}");
                let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
                hi * (hi + 1) / 2 + lo
            }
        };
        self.offset + local
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// The scalar variable itself.
    pub fn expr(&self) -> LinExpr {
        LinExpr::term(self.index(0, 0), 1.0)
    }

    /// Entry `i` of a vector variable.
    pub fn at(&self, i: usize) -> LinExpr {
        LinExpr::term(self.index(i, 0), 1.0)
    }

    /// Entry `(i, j)` of a matrix or symmetric variable.
    pub fn at2(&self, i: usize, j: usize) -> LinExpr {
        LinExpr::term(self.index(i, j), 1.0)
    }
}

/// Affine expression `sum_k coef_k x_k + constant` over the flattened
/// scalar variables of a program.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    terms: BTreeMap<usize, f64>,
    constant: f64,
}

impl LinExpr {
    pub fn zero() -> Self {
        LinExpr::default()
    }

    pub fn constant(c: f64) -> Self {
        LinExpr {
            terms: BTreeMap::new(),
            constant: c,
        }
    }

    fn term(index: usize, coef: f64) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(index, coef);
        LinExpr { terms, constant: 0.0 }
    }

    pub fn add(mut self, other: &LinExpr) -> Self {
        for (&k, &c) in &other.terms {
            *self.terms.entry(k).or_insert(0.0) += c;
        }
        self.constant += other.constant;
        self
    }

    pub fn sub(self, other: &LinExpr) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Self {
        LinExpr {
            terms: self.terms.iter().map(|(&k, &c)| (k, c * s)).collect(),
            constant: self.constant * s,
        }
    }

    pub fn plus_constant(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    /// `sum_k w_k e_k`
    pub fn weighted_sum<'a>(items: impl IntoIterator<Item = (f64, &'a LinExpr)>) -> Self {
        items
            .into_iter()
            .fold(LinExpr::zero(), |acc, (w, e)| if w == 0.0 { acc } else { acc.add(&e.scale(w)) })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(&k, &c)| c * x[k]).sum::<f64>() + self.constant
    }

    fn max_index(&self) -> Option<usize> {
        self.terms.keys().next_back().copied()
    }

    fn approx_eq(&self, other: &LinExpr) -> bool {
        let scale = self
            .terms
            .values()
            .chain(other.terms.values())
            .fold(self.constant.abs().max(other.constant.abs()), |m, c| m.max(c.abs()))
            .max(1.0);
        let tol = SYMMETRY_TOL * scale;
        let diff = self.clone().sub(other);
        diff.constant.abs() <= tol && diff.terms.values().all(|c| c.abs() <= tol)
    }
}

#[derive(Debug, Clone)]
pub enum Constraint {
    /// `e == 0`
    Equal(LinExpr),
    /// `e >= 0`
    NonNeg(LinExpr),
    /// `head >= |tail|_2`
    SecondOrderCone { head: LinExpr, tail: Vec<LinExpr> },
    /// Square matrix of affine expressions, symmetric, constrained PSD.
    Psd(Vec<Vec<LinExpr>>),
}

impl Constraint {
    fn kind(&self) -> &'static str {
        match self {
            Constraint::Equal(_) => "eq",
            Constraint::NonNeg(_) => "nonneg",
            Constraint::SecondOrderCone { .. } => "soc",
            Constraint::Psd(_) => "psd",
        }
    }

    /// Affine rows in cone order (PSD: full matrix, row-major).
    fn rows(&self) -> Vec<&LinExpr> {
        match self {
            Constraint::Equal(e) | Constraint::NonNeg(e) => vec![e],
            Constraint::SecondOrderCone { head, tail } => std::iter::once(head).chain(tail.iter()).collect(),
            Constraint::Psd(m) => m.iter().flatten().collect(),
        }
    }

    /// Violation at `x`: distance-like, zero when satisfied.
    fn violation(&self, x: &[f64]) -> f64 {
        match self {
            Constraint::Equal(e) => e.eval(x).abs(),
            Constraint::NonNeg(e) => (-e.eval(x)).max(0.0),
            Constraint::SecondOrderCone { head, tail } => {
                let norm = tail.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
                (norm - head.eval(x)).max(0.0)
            }
            Constraint::Psd(m) => {
                let n = m.len();
                let vals = DMatrix::from_fn(n, n, |i, j| m[i][j].eval(x));
                (-min_eigenvalue(&SymMatrix::symmetrize(&vals))).max(0.0)
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    blocks: Vec<Block>,
    n_vars: usize,
    objective: LinExpr,
    constraints: Vec<Constraint>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: &str, shape: Shape) -> Var {
        let var = Var {
            block: self.blocks.len(),
            shape,
            offset: self.n_vars,
        };
        self.blocks.push(Block {
            name: name.to_string(),
            shape,
            offset: self.n_vars,
        });
        self.n_vars += shape.len();
        var
    }

    pub fn scalar(&mut self, name: &str) -> Var {
        self.add_var(name, Shape::Scalar)
    }

    pub fn vector(&mut self, name: &str, n: usize) -> Var {
        self.add_var(name, Shape::Vector(n))
    }

    pub fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Var {
        self.add_var(name, Shape::Matrix(rows, cols))
    }

    pub fn symmetric(&mut self, name: &str, n: usize) -> Var {
        self.add_var(name, Shape::Symmetric(n))
    }

    pub fn num_scalars(&self) -> usize {
        self.n_vars
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// The program maximizes `objective`.
    pub fn maximize(&mut self, objective: LinExpr) {
        self.objective = objective;
    }

    pub fn add_eq(&mut self, e: LinExpr) {
        self.constraints.push(Constraint::Equal(e));
    }

    pub fn add_nonneg(&mut self, e: LinExpr) {
        self.constraints.push(Constraint::NonNeg(e));
    }

    /// `lhs <= rhs`
    pub fn add_leq(&mut self, lhs: LinExpr, rhs: &LinExpr) {
        self.add_nonneg(rhs.clone().sub(&lhs));
    }

    /// `head >= |tail|_2`
    pub fn add_soc(&mut self, head: LinExpr, tail: Vec<LinExpr>) {
        self.constraints.push(Constraint::SecondOrderCone { head, tail });
    }

    pub fn add_psd(&mut self, m: Vec<Vec<LinExpr>>) {
        self.constraints.push(Constraint::Psd(m));
    }

    /// Shape and reference checks, run before any solve.
    pub fn validate(&self) -> Result<()> {
        let check_expr = |e: &LinExpr, what: &str| -> Result<()> {
            if let Some(k) = e.max_index() {
                if k >= self.n_vars {
                    return Err(Error::Construction(format!(
                        "{what} references variable {k} but only {} are declared",
                        self.n_vars
                    )));
                }
            }
            if e.terms.values().any(|c| !c.is_finite()) || !e.constant.is_finite() {
                return Err(Error::Construction(format!("{what} has a non-finite coefficient")));
            }
            Ok(())
        };
        check_expr(&self.objective, "objective")?;
        for (k, c) in self.constraints.iter().enumerate() {
            for e in c.rows() {
                check_expr(e, &format!("constraint {k}"))?;
            }
            match c {
                Constraint::SecondOrderCone { tail, .. } if tail.is_empty() => {
                    return Err(Error::Construction(format!("constraint {k}: empty cone tail")));
                }
                Constraint::Psd(m) => {
                    let n = m.len();
                    if n == 0 || m.iter().any(|row| row.len() != n) {
                        return Err(Error::Construction(format!("constraint {k}: PSD block is not square")));
                    }
                    for i in 0..n {
                        for j in 0..i {
                            if !m[i][j].approx_eq(&m[j][i]) {
                                return Err(Error::Construction(format!(
                                    "constraint {k}: PSD block entries ({i}, {j}) and ({j}, {i}) differ"
                                )));
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Largest violation over all constraints at the point `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.constraints.iter().map(|c| c.violation(x)).fold(0.0, f64::max)
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective.eval(x)
    }

    /// Solves the program; see the module docs for the residual contract.
    pub fn solve(&self, feas_tol: f64, gap_tol: f64) -> Result<ConicSolution> {
        self.validate()?;
        let n = self.n_vars;
        let mut rows_i = Vec::new();
        let mut cols_j = Vec::new();
        let mut vals = Vec::new();
        let mut b = Vec::new();
        let mut cones = Vec::new();

        // Each cone row is s = b - A x with s = e(x) = g^T x + k, i.e. A = -g, b = k.
        let mut push_row = |e: &LinExpr, weight: f64, b: &mut Vec<f64>| {
            let row = b.len();
            for (&k, &c) in &e.terms {
                if c != 0.0 {
                    rows_i.push(row);
                    cols_j.push(k);
                    vals.push(-c * weight);
                }
            }
            b.push(e.constant * weight);
        };

        // Group runs of scalar constraints of the same kind into one cone.
        let mut pending: Option<(&'static str, usize)> = None;
        let flush = |pending: &mut Option<(&'static str, usize)>, cones: &mut Vec<SupportedConeT<f64>>| {
            if let Some((kind, count)) = pending.take() {
                cones.push(match kind {
                    "eq" => SupportedConeT::ZeroConeT(count),
                    _ => SupportedConeT::NonnegativeConeT(count),
                });
            }
        };
        for c in &self.constraints {
            match c {
                Constraint::Equal(e) | Constraint::NonNeg(e) => {
                    let kind = c.kind();
                    match &mut pending {
                        Some((k, count)) if *k == kind => *count += 1,
                        _ => {
                            flush(&mut pending, &mut cones);
                            pending = Some((kind, 1));
                        }
                    }
                    push_row(e, 1.0, &mut b);
                }
                Constraint::SecondOrderCone { head, tail } => {
                    flush(&mut pending, &mut cones);
                    push_row(head, 1.0, &mut b);
                    for e in tail {
                        push_row(e, 1.0, &mut b);
                    }
                    cones.push(SupportedConeT::SecondOrderConeT(tail.len() + 1));
                }
                Constraint::Psd(m) => {
                    flush(&mut pending, &mut cones);
                    let order = m.len();
                    // upper triangle, column-major, off-diagonals scaled by sqrt(2)
                    for j in 0..order {
                        for i in 0..=j {
                            let w = if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
                            push_row(&m[i][j], w, &mut b);
                        }
                    }
                    cones.push(SupportedConeT::PSDTriangleConeT(order));
                }
            }
        }
        flush(&mut pending, &mut cones);

        let m_rows = b.len();
        let a = CscMatrix::new_from_triplets(m_rows, n, rows_i, cols_j, vals);
        let p = CscMatrix::<f64>::zeros((n, n));
        let mut q = vec![0.0; n];
        for (&k, &c) in &self.objective.terms {
            q[k] = -c;
        }
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(500)
            .tol_feas(0.1 * feas_tol)
            .tol_gap_abs(0.1 * gap_tol)
            .tol_gap_rel(0.1 * gap_tol)
            .presolve_enable(false)
            .chordal_decomposition_enable(false)
            .build()
            .map_err(|e| Error::Construction(format!("solver settings: {e:?}")))?;
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
            .map_err(|e| Error::Construction(format!("solver setup: {e:?}")))?;
        solver.solve();
        let sol = &solver.solution;

        let x = sol.x.clone();
        let finite = x.iter().all(|v| v.is_finite());
        let max_primal_residual = if finite { self.max_violation(&x) } else { f64::INFINITY };
        let objective_value = if finite { self.objective.eval(&x) } else { f64::NAN };
        // Clarabel minimizes -objective; its objective values exclude the constant.
        let rel_gap = (sol.obj_val - sol.obj_val_dual).abs() / sol.obj_val.abs().max(1.0);

        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => {
                if max_primal_residual <= feas_tol && rel_gap <= gap_tol {
                    SolveStatus::Optimal
                } else {
                    SolveStatus::Inaccurate
                }
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
            SolverStatus::MaxIterations | SolverStatus::MaxTime | SolverStatus::InsufficientProgress => {
                if finite {
                    SolveStatus::Inaccurate
                } else {
                    SolveStatus::Failed
                }
            }
            _ => SolveStatus::Failed,
        };

        Ok(ConicSolution {
            status,
            values: x,
            blocks: self.blocks.iter().map(|b| (b.name.clone(), b.shape, b.offset)).collect(),
            objective_value,
            max_primal_residual,
            rel_gap,
            iterations: sol.iterations,
        })
    }

    /// Plain-text sparse triplet dump; the format is described in
    /// `docs/conic-dump.md`.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# advgame conic program v1")?;
        writeln!(w, "vars {}", self.n_vars)?;
        for b in &self.blocks {
            let (kind, r, c) = match b.shape {
                Shape::Scalar => ("scalar", 1, 1),
                Shape::Vector(n) => ("vector", n, 1),
                Shape::Matrix(r, c) => ("matrix", r, c),
                Shape::Symmetric(n) => ("symmetric", n, n),
            };
            writeln!(w, "block {} {} {} {} {}", b.name, kind, r, c, b.offset)?;
        }
        writeln!(w, "objective max")?;
        for (&k, &c) in &self.objective.terms {
            writeln!(w, "c {k} {c:e}")?;
        }
        writeln!(w, "c0 {:e}", self.objective.constant)?;
        for (idx, con) in self.constraints.iter().enumerate() {
            let rows = con.rows();
            match con {
                Constraint::Psd(m) => writeln!(w, "constraint {idx} psd {} {}", rows.len(), m.len())?,
                _ => writeln!(w, "constraint {idx} {} {}", con.kind(), rows.len())?,
            }
            for (r, e) in rows.iter().enumerate() {
                for (&k, &c) in &e.terms {
                    writeln!(w, "a {r} {k} {c:e}")?;
                }
                if e.constant != 0.0 {
                    writeln!(w, "b {r} {:e}", e.constant)?;
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for ConicProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut buf = Vec::new();
        self.write_triplets(&mut buf).map_err(|_| fmt::Error)?;
        f.write_str(&String::from_utf8_lossy(&buf))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    Inaccurate,
    Failed,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: SolveStatus,
    values: Vec<f64>,
    blocks: Vec<(String, Shape, usize)>,
    pub objective_value: f64,
    /// Recomputed from the returned point.
    pub max_primal_residual: f64,
    pub rel_gap: f64,
    pub iterations: u32,
}

impl ConicSolution {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v.index(0, 0)]
    }

    pub fn vector(&self, v: Var) -> DVector<f64> {
        let n = match v.shape {
            Shape::Vector(n) => n,
            Shape::Scalar => 1,
            other => panic!("not a vector variable: {other:?}"),
        };
        DVector::from_fn(n, |i, _| self.values[v.index(i, 0)])
    }

    /// Full matrix value of a matrix or symmetric variable.
    pub fn matrix(&self, v: Var) -> DMatrix<f64> {
        let (r, c) = match v.shape {
            Shape::Matrix(r, c) => (r, c),
            Shape::Symmetric(n) => (n, n),
            other => panic!("not a matrix variable: {other:?}"),
        };
        DMatrix::from_fn(r, c, |i, j| self.values[v.index(i, j)])
    }

    pub fn block_names(&self) -> impl Iterator<Item = &str> {
        self.blocks.iter().map(|(n, _, _)| n.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(v: f64) -> LinExpr {
        LinExpr::constant(v)
    }

    #[test]
    fn linear_bound() {
        let mut p = ConicProgram::new();
        let x = p.scalar("x");
        p.maximize(x.expr());
        p.add_leq(x.expr(), &c(3.0));
        let s = p.solve(DEFAULT_FEAS_TOL, DEFAULT_GAP_TOL).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.scalar(x) - 3.0).abs() <= 1e-9);
        assert!((s.objective_value - 3.0).abs() <= 1e-9);
    }

    #[test]
    fn two_by_two_psd() {
        let mut p = ConicProgram::new();
        let t = p.scalar("t");
        p.maximize(t.expr());
        p.add_psd(vec![vec![c(1.0), t.expr()], vec![t.expr(), c(1.0)]]);
        let s = p.solve(DEFAULT_FEAS_TOL, DEFAULT_GAP_TOL).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.scalar(t) - 1.0).abs() <= 1e-7);
    }

    #[test]
    fn psd_triangle_ordering() {
        // maximize x s.t. [[1, 0, x], [0, 4, y], [x, y, 2]] >= 0 with y = 1:
        // Schur complement on the (1,1) block: 2 - x^2 - 1/4 >= 0
        let mut p = ConicProgram::new();
        let x = p.scalar("x");
        let y = p.scalar("y");
        p.maximize(x.expr());
        p.add_eq(y.expr().plus_constant(-1.0));
        p.add_psd(vec![
            vec![c(1.0), c(0.0), x.expr()],
            vec![c(0.0), c(4.0), y.expr()],
            vec![x.expr(), y.expr(), c(2.0)],
        ]);
        let s = p.solve(DEFAULT_FEAS_TOL, DEFAULT_GAP_TOL).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.scalar(x) - 1.75f64.sqrt()).abs() <= 1e-6, "{}", s.scalar(x));
    }

    #[test]
    fn soc_unit_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let cvec: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut p = ConicProgram::new();
            let x = p.vector("x", 4);
            p.maximize((0..4).fold(LinExpr::zero(), |acc, i| acc.add(&x.at(i).scale(cvec[i]))));
            p.add_soc(c(1.0), (0..4).map(|i| x.at(i)).collect());
            let s = p.solve(DEFAULT_FEAS_TOL, DEFAULT_GAP_TOL).unwrap();
            let norm = cvec.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert_eq!(s.status, SolveStatus::Optimal);
            assert!((s.objective_value - norm).abs() <= 1e-7, "{} vs {norm}", s.objective_value);
            assert!(p.max_violation(s.values()) <= 10.0 * DEFAULT_FEAS_TOL);
        }
    }

    #[test]
    fn symmetric_variable_stays_symmetric() {
        // maximize trace-weighted entries of Z subject to Z <= I in the PSD order
        let mut p = ConicProgram::new();
        let z = p.symmetric("Z", 2);
        p.maximize(z.at2(0, 0).add(&z.at2(1, 1)).add(&z.at2(0, 1).scale(0.5)));
        let m: Vec<Vec<LinExpr>> = (0..2)
            .map(|i| (0..2).map(|j| c(if i == j { 1.0 } else { 0.0 }).sub(&z.at2(i, j))).collect())
            .collect();
        p.add_psd(m);
        p.add_psd(vec![vec![z.at2(0, 0), z.at2(0, 1)], vec![z.at2(1, 0), z.at2(1, 1)]]);
        let s = p.solve(DEFAULT_FEAS_TOL, DEFAULT_GAP_TOL).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        let zv = s.matrix(z);
        assert_eq!(zv[(0, 1)], zv[(1, 0)]);
        assert_eq!(p.num_scalars(), 3);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut p = ConicProgram::new();
        let x = p.scalar("x");
        p.maximize(x.expr());
        p.add_leq(x.expr(), &c(1.0));
        p.add_nonneg(x.expr().plus_constant(-2.0));
        assert_eq!(p.solve(DEFAULT_FEAS_TOL, DEFAULT_GAP_TOL).unwrap().status, SolveStatus::Infeasible);

        let mut q = ConicProgram::new();
        let y = q.scalar("y");
        q.maximize(y.expr());
        q.add_nonneg(y.expr());
        assert_eq!(q.solve(DEFAULT_FEAS_TOL, DEFAULT_GAP_TOL).unwrap().status, SolveStatus::Unbounded);
    }

    #[test]
    fn construction_errors() {
        let mut p = ConicProgram::new();
        let x = p.scalar("x");
        p.add_psd(vec![vec![c(1.0), x.expr()], vec![c(0.0), c(1.0)]]);
        assert!(matches!(p.solve(DEFAULT_FEAS_TOL, DEFAULT_GAP_TOL), Err(Error::Construction(_))));

        let mut q = ConicProgram::new();
        q.scalar("x");
        q.add_psd(vec![vec![c(1.0), c(0.0)], vec![c(0.0)]]);
        assert!(matches!(q.validate(), Err(Error::Construction(_))));

        // a handle from a larger program refers to undeclared variables
        let mut big = ConicProgram::new();
        big.vector("v", 5);
        let foreign = big.scalar("t");
        let mut small = ConicProgram::new();
        small.scalar("s");
        small.add_nonneg(foreign.expr());
        assert!(matches!(small.validate(), Err(Error::Construction(_))));
    }

    #[test]
    fn repeated_solves_are_identical() {
        let build = || {
            let mut p = ConicProgram::new();
            let x = p.vector("x", 3);
            let t = p.scalar("t");
            p.maximize(x.at(0).add(&x.at(1).scale(2.0)).sub(&t.expr()));
            p.add_soc(t.expr(), (0..3).map(|i| x.at(i)).collect());
            p.add_leq(t.expr(), &c(2.0));
            p.add_psd(vec![vec![c(1.0), x.at(2)], vec![x.at(2), c(1.0)]]);
            p
        };
        let a = build().solve(DEFAULT_FEAS_TOL, DEFAULT_GAP_TOL).unwrap();
        let b = build().solve(DEFAULT_FEAS_TOL, DEFAULT_GAP_TOL).unwrap();
        assert_eq!(a.status, b.status);
        assert!((a.objective_value - b.objective_value).abs() <= 1e-12);
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn triplet_dump_lists_blocks_and_rows() {
        let mut p = ConicProgram::new();
        let x = p.vector("x", 2);
        let t = p.scalar("t");
        p.maximize(x.at(0).add(&t.expr()));
        p.add_soc(c(1.0), vec![x.at(0), x.at(1)]);
        p.add_psd(vec![vec![t.expr(), c(0.5)], vec![c(0.5), c(1.0)]]);
        let text = p.to_string();
        assert!(text.starts_with("# advgame conic program v1\nvars 3\n"));
        assert!(text.contains("block x vector 2 1 0"));
        assert!(text.contains("block t scalar 1 1 2"));
        assert!(text.contains("constraint 0 soc 3"));
        assert!(text.contains("constraint 1 psd 4 2"));
    }
}
