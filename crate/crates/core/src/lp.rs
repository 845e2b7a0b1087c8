//! Dense bounded-variable revised simplex.
//!
//! Solves `min cᵀx  s.t.  Ax = b,  0 ≤ x ≤ u` (with `u = ∞` by default, which
//! is plain standard form). Phase one minimises the sum of artificial
//! variables; in phase two the artificials are fixed to zero. The basis
//! inverse is kept explicitly, updated by elementary row operations and
//! refactored with an LU decomposition at a fixed period. Pricing is
//! Dantzig's rule, switching to Bland's rule after a run of degenerate
//! pivots until progress resumes.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub c: Vec<f64>,
    pub b: Vec<f64>,
    /// Upper bounds, `f64::INFINITY` where absent.
    pub upper: Vec<f64>,
    pub var_names: Vec<String>,
    pub con_names: Vec<String>,
    n_rows: usize,
    /// Column-major sparse storage of `A`.
    cols: Vec<Vec<(usize, f64)>>,
}

impl LinearProgram {
    /// Standard-form LP from a dense constraint matrix.
    pub fn new(c: Vec<f64>, a: &DMatrix<f64>, b: Vec<f64>) -> Result<Self> {
        if a.ncols() != c.len() || a.nrows() != b.len() {
            return Err(Error::Dimension(format!(
                "A is {}x{}, c has {} entries, b has {}",
                a.nrows(),
                a.ncols(),
                c.len(),
                b.len()
            )));
        }
        let cols = (0..a.ncols())
            .map(|j| {
                (0..a.nrows())
                    .filter(|&i| a[(i, j)] != 0.0)
                    .map(|i| (i, a[(i, j)]))
                    .collect()
            })
            .collect();
        LinearProgram::from_columns(a.nrows(), cols, c, b)
    }

    /// LP from sparse columns `(row, value)`.
    pub fn from_columns(
        n_rows: usize,
        cols: Vec<Vec<(usize, f64)>>,
        c: Vec<f64>,
        b: Vec<f64>,
    ) -> Result<Self> {
        if cols.len() != c.len() || b.len() != n_rows {
            return Err(Error::Dimension(format!(
                "{} columns, {} costs, {} rows, {} right-hand sides",
                cols.len(),
                c.len(),
                n_rows,
                b.len()
            )));
        }
        for (j, col) in cols.iter().enumerate() {
            for &(i, v) in col {
                if i >= n_rows {
                    return Err(Error::Dimension(format!("column {j} references row {i}")));
                }
                if !v.is_finite() {
                    return Err(Error::Invalid(format!("A has a non-finite entry in column {j}")));
                }
            }
        }
        if b.iter().chain(&c).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("b and c must be finite".into()));
        }
        let n = c.len();
        Ok(LinearProgram {
            upper: vec![f64::INFINITY; n],
            var_names: (0..n).map(|j| format!("x{j}")).collect(),
            con_names: (0..n_rows).map(|i| format!("c{i}")).collect(),
            c,
            b,
            n_rows,
            cols,
        })
    }

    pub fn with_upper(mut self, upper: Vec<f64>) -> Result<Self> {
        if upper.len() != self.c.len() {
            return Err(Error::Dimension(format!(
                "{} upper bounds for {} variables",
                upper.len(),
                self.c.len()
            )));
        }
        if upper.iter().any(|u| u.is_nan() || *u < 0.0) {
            return Err(Error::Invalid("upper bounds must be non-negative".into()));
        }
        self.upper = upper;
        Ok(self)
    }

    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.n_rows
    }

    pub fn column(&self, j: usize) -> &[(usize, f64)] {
        &self.cols[j]
    }

    pub fn constraint_matrix(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n_rows, self.c.len());
        for (j, col) in self.cols.iter().enumerate() {
            for &(i, v) in col {
                a[(i, j)] += v;
            }
        }
        a
    }

    /// `Ax - b`.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = self.b.iter().map(|v| -v).collect();
        for (j, col) in self.cols.iter().enumerate() {
            if x[j] != 0.0 {
                for &(i, v) in col {
                    r[i] += v * x[j];
                }
            }
        }
        r
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.c.iter().zip(x).map(|(c, x)| c * x).sum()
    }

    /// Renders the problem in CPLEX LP text format.
    pub fn to_lp_format(&self) -> String {
        let mut s = String::from("Minimize\n obj:");
        for (j, &c) in self.c.iter().enumerate() {
            if c != 0.0 {
                write!(s, " {:+} {}", c, self.var_names[j]).unwrap();
            }
        }
        s.push_str("\nSubject To\n");
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n_rows];
        for (j, col) in self.cols.iter().enumerate() {
            for &(i, v) in col {
                rows[i].push((j, v));
            }
        }
        for (i, row) in rows.iter().enumerate() {
            write!(s, " {}:", self.con_names[i]).unwrap();
            if row.is_empty() {
                write!(s, " 0 {}", self.var_names.first().map_or("x0", |v| v)).unwrap();
            }
            for &(j, v) in row {
                write!(s, " {:+} {}", v, self.var_names[j]).unwrap();
            }
            writeln!(s, " = {}", self.b[i]).unwrap();
        }
        s.push_str("Bounds\n");
        for (j, &u) in self.upper.iter().enumerate() {
            if u.is_finite() {
                writeln!(s, " 0 <= {} <= {}", self.var_names[j], u).unwrap();
            } else {
                writeln!(s, " {} >= 0", self.var_names[j]).unwrap();
            }
        }
        s.push_str("End\n");
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Row multipliers `y` of the final basis (`c_Bᵀ B⁻¹`), in the units of
    /// the original constraints.
    pub duals: Vec<f64>,
    /// Sum of artificials at the end of phase one.
    pub phase_one_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iters: usize,
    pub pivot_tol: f64,
    pub optimality_tol: f64,
    pub feasibility_tol: f64,
    pub refactor_every: usize,
    pub bland_after: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 100_000,
            pivot_tol: 1e-9,
            optimality_tol: 1e-9,
            feasibility_tol: 1e-9,
            refactor_every: 100,
            bland_after: 50,
        }
    }
}

pub fn solve(lp: &LinearProgram, max_iters: usize) -> Result<LpSolution> {
    solve_with(
        lp,
        &SolverOptions {
            max_iters,
            ..SolverOptions::default()
        },
    )
}

pub fn solve_with(lp: &LinearProgram, opts: &SolverOptions) -> Result<LpSolution> {
    if lp.upper.len() != lp.c.len() {
        return Err(Error::Dimension("upper bounds do not match the variables".into()));
    }
    let mut s = Simplex::new(lp, opts);
    let b_norm = lp.b.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    // Phase one.
    for j in 0..s.n_total {
        s.cost[j] = if j >= s.n { 1.0 } else { 0.0 };
    }
    let st = s.run()?;
    let infeas: f64 = (0..s.m)
        .filter(|&k| s.basis[k] >= s.n)
        .map(|k| s.xb[k].max(0.0))
        .sum();
    let phase_one_residual = infeas;
    if st == Phase::IterLimit {
        return Ok(s.finish(LpStatus::IterLimit, phase_one_residual));
    }
    if infeas > opts.feasibility_tol.max(1e-9) * (1.0 + b_norm) * s.m.max(1) as f64 {
        return Ok(s.finish(LpStatus::Infeasible, phase_one_residual));
    }

    // Phase two: artificials are pinned at zero.
    for j in s.n..s.n_total {
        s.upper[j] = 0.0;
        if let Status::AtLower = s.status[j] {
            s.xn[j] = 0.0;
        }
    }
    for j in 0..s.n_total {
        s.cost[j] = if j < s.n { lp.c[j] } else { 0.0 };
    }
    let st = s.run()?;
    let status = match st {
        Phase::Optimal => LpStatus::Optimal,
        Phase::Unbounded => LpStatus::Unbounded,
        Phase::IterLimit => LpStatus::IterLimit,
    };
    Ok(s.finish(status, phase_one_residual))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Status {
    Basic(usize),
    AtLower,
    AtUpper,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Optimal,
    Unbounded,
    IterLimit,
}

struct Simplex<'a> {
    lp: &'a LinearProgram,
    opts: SolverOptions,
    m: usize,
    n: usize,
    n_total: usize,
    /// Per-row multiplier applied to A and b (scaling and sign).
    row_scale: Vec<f64>,
    b: Vec<f64>,
    cost: Vec<f64>,
    upper: Vec<f64>,
    basis: Vec<usize>,
    status: Vec<Status>,
    binv: DMatrix<f64>,
    xb: Vec<f64>,
    /// Values of nonbasic variables (either bound).
    xn: Vec<f64>,
    iterations: usize,
    since_refactor: usize,
    degenerate_run: usize,
    y: Vec<f64>,
    w: Vec<f64>,
}

impl<'a> Simplex<'a> {
    fn new(lp: &'a LinearProgram, opts: &SolverOptions) -> Self {
        let m = lp.n_rows;
        let n = lp.c.len();
        let mut row_max = vec![0.0f64; m];
        for col in &lp.cols {
            for &(i, v) in col {
                row_max[i] = row_max[i].max(v.abs());
            }
        }
        let row_scale: Vec<f64> = (0..m)
            .map(|i| {
                let s = if row_max[i] > 0.0 { 1.0 / row_max[i] } else { 1.0 };
                if lp.b[i] < 0.0 {
                    -s
                } else {
                    s
                }
            })
            .collect();
        let b: Vec<f64> = (0..m).map(|i| lp.b[i] * row_scale[i]).collect();
        let n_total = n + m;
        let mut upper = lp.upper.clone();
        upper.extend(std::iter::repeat_n(f64::INFINITY, m));
        let mut status = vec![Status::AtLower; n_total];
        let basis: Vec<usize> = (n..n_total).collect();
        for (k, &j) in basis.iter().enumerate() {
            status[j] = Status::Basic(k);
        }
        Simplex {
            lp,
            opts: *opts,
            m,
            n,
            n_total,
            row_scale,
            xb: b.clone(),
            b,
            cost: vec![0.0; n_total],
            upper,
            basis,
            status,
            binv: DMatrix::identity(m, m),
            xn: vec![0.0; n_total],
            iterations: 0,
            since_refactor: 0,
            degenerate_run: 0,
            y: vec![0.0; m],
            w: vec![0.0; m],
        }
    }

    /// Scaled column entries of variable `j`.
    #[inline]
    fn for_col(&self, j: usize, mut f: impl FnMut(usize, f64)) {
        if j < self.n {
            for &(i, v) in &self.lp.cols[j] {
                f(i, v * self.row_scale[i]);
            }
        } else {
            f(j - self.n, 1.0);
        }
    }

    fn compute_duals(&mut self) {
        let m = self.m;
        for i in 0..m {
            let mut acc = 0.0;
            for k in 0..m {
                let cb = self.cost[self.basis[k]];
                if cb != 0.0 {
                    acc += cb * self.binv[(k, i)];
                }
            }
            self.y[i] = acc;
        }
    }

    fn reduced_cost(&self, j: usize) -> f64 {
        let mut d = self.cost[j];
        self.for_col(j, |i, v| d -= v * self.y[i]);
        d
    }

    fn compute_w(&mut self, j: usize) {
        let m = self.m;
        self.w.iter_mut().for_each(|v| *v = 0.0);
        let mut w = std::mem::take(&mut self.w);
        self.for_col(j, |i, v| {
            for k in 0..m {
                w[k] += self.binv[(k, i)] * v;
            }
        });
        self.w = w;
    }

    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let mut bmat = DMatrix::zeros(m, m);
        for (k, &j) in self.basis.iter().enumerate() {
            self.for_col(j, |i, v| bmat[(i, k)] = v);
        }
        let inv = bmat
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Solver("basis became singular".into()))?;
        self.binv = inv;
        // x_B = B⁻¹ (b - Σ_{nonbasic} A_j x_j)
        let mut rhs = self.b.clone();
        for j in 0..self.n_total {
            if !matches!(self.status[j], Status::Basic(_)) && self.xn[j] != 0.0 {
                let xj = self.xn[j];
                self.for_col(j, |i, v| rhs[i] -= v * xj);
            }
        }
        for k in 0..m {
            let mut acc = 0.0;
            for i in 0..m {
                acc += self.binv[(k, i)] * rhs[i];
            }
            self.xb[k] = acc;
        }
        self.since_refactor = 0;
        Ok(())
    }

    fn run(&mut self) -> Result<Phase> {
        let tol_d = self.opts.optimality_tol;
        let tol_p = self.opts.pivot_tol;
        loop {
            if self.iterations >= self.opts.max_iters {
                return Ok(Phase::IterLimit);
            }
            if self.since_refactor >= self.opts.refactor_every {
                self.refactor()?;
            }
            self.compute_duals();
            let bland = self.degenerate_run >= self.opts.bland_after;

            // Pricing.
            let mut enter: Option<(usize, f64)> = None;
            for j in 0..self.n_total {
                let st = self.status[j];
                if matches!(st, Status::Basic(_)) || self.upper[j] <= 0.0 {
                    continue;
                }
                let d = self.reduced_cost(j);
                let attractive = match st {
                    Status::AtLower => d < -tol_d,
                    Status::AtUpper => d > tol_d,
                    Status::Basic(_) => false,
                };
                if !attractive {
                    continue;
                }
                if bland {
                    enter = Some((j, d));
                    break;
                }
                if enter.is_none_or(|(_, best)| d.abs() > best.abs()) {
                    enter = Some((j, d));
                }
            }
            let Some((j, _)) = enter else {
                self.refactor()?;
                return Ok(Phase::Optimal);
            };
            self.iterations += 1;

            self.compute_w(j);
            let s = if self.status[j] == Status::AtUpper { -1.0 } else { 1.0 };

            // Ratio test.
            let mut theta = self.upper[j];
            let mut leave: Option<(usize, bool)> = None; // (row, hits upper)
            let mut best_piv = 0.0;
            for k in 0..self.m {
                let delta = -s * self.w[k];
                let bj = self.basis[k];
                let (t, to_upper) = if delta < -tol_p {
                    ((self.xb[k] / -delta).max(0.0), false)
                } else if delta > tol_p && self.upper[bj].is_finite() {
                    (((self.upper[bj] - self.xb[k]) / delta).max(0.0), true)
                } else {
                    continue;
                };
                let better = match leave {
                    None => t < theta - 1e-12,
                    Some((lk, _)) => {
                        t < theta - 1e-12
                            || (t <= theta + 1e-12
                                && if bland {
                                    bj < self.basis[lk]
                                } else {
                                    delta.abs() > best_piv
                                })
                    }
                };
                if better {
                    theta = t;
                    leave = Some((k, to_upper));
                    best_piv = delta.abs();
                }
            }
            if !theta.is_finite() {
                return Ok(Phase::Unbounded);
            }
            if theta < 1e-12 {
                self.degenerate_run += 1;
            } else {
                self.degenerate_run = 0;
            }

            for k in 0..self.m {
                self.xb[k] += theta * (-s * self.w[k]);
            }
            match leave {
                None => {
                    // Bound flip.
                    if s > 0.0 {
                        self.status[j] = Status::AtUpper;
                        self.xn[j] = self.upper[j];
                    } else {
                        self.status[j] = Status::AtLower;
                        self.xn[j] = 0.0;
                    }
                }
                Some((r, to_upper)) => {
                    let out = self.basis[r];
                    let entering_value = self.xn[j] + s * theta;
                    if to_upper {
                        self.status[out] = Status::AtUpper;
                        self.xn[out] = self.upper[out];
                    } else {
                        self.status[out] = Status::AtLower;
                        self.xn[out] = 0.0;
                    }
                    self.basis[r] = j;
                    self.status[j] = Status::Basic(r);
                    self.xn[j] = 0.0;
                    self.xb[r] = entering_value;
                    self.pivot(r);
                    self.since_refactor += 1;
                }
            }
        }
    }

    /// Updates B⁻¹ after column `w` replaced basis row `r`.
    fn pivot(&mut self, r: usize) {
        let m = self.m;
        let piv = self.w[r];
        for i in 0..m {
            self.binv[(r, i)] /= piv;
        }
        for k in 0..m {
            if k == r {
                continue;
            }
            let f = self.w[k];
            if f == 0.0 {
                continue;
            }
            for i in 0..m {
                let v = self.binv[(r, i)];
                self.binv[(k, i)] -= f * v;
            }
        }
    }

    fn finish(mut self, status: LpStatus, phase_one_residual: f64) -> LpSolution {
        let mut x = vec![0.0; self.n];
        for j in 0..self.n {
            x[j] = match self.status[j] {
                Status::Basic(k) => self.xb[k],
                _ => self.xn[j],
            };
            if x[j] < 0.0 && x[j] > -1e-9 {
                x[j] = 0.0;
            }
            if x[j] > self.upper[j] && x[j] < self.upper[j] + 1e-9 {
                x[j] = self.upper[j];
            }
        }
        self.compute_duals();
        let duals = (0..self.m).map(|i| self.y[i] * self.row_scale[i]).collect();
        LpSolution {
            status,
            objective: self.lp.objective(&x),
            x,
            iterations: self.iterations,
            duals,
            phase_one_residual,
        }
    }
}
