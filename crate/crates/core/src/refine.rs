//! Minimal changes to a longitudinal model so that its Markov chain has a
//! prescribed stationary distribution.
//!
//! With the target `π*` fixed, `π*ᵀ G(F) = π*ᵀ` is linear in `F`. The
//! lane-change mass of each row is kept as a self-loop and left untouched;
//! only the 31 acceleration entries move.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::action::{accel_value, LC_LEFT, LC_RIGHT, N_ACCEL};
use crate::error::{Error, Result};
use crate::lp::{solve_with, LinearProgram, LpStatus, SolverOptions};
use crate::markov::{assemble, crash_state, push_successors, stationary};
use crate::metrics::hellinger;
use crate::model::{BehaviorModel, RowOrigin, Situation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Entrywise `Σ |F − F*|`, solved as one LP.
    #[default]
    L1,
    /// `Σ (F − F*)²`.
    SquaredFrobenius,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    Hard,
    /// Stationarity moves into the objective as `λ ‖π*ᵀG(F) − π*ᵀ‖₁`.
    Soft { lambda: f64 },
}

impl Default for Constraint {
    fn default() -> Self {
        Constraint::Hard
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOptions {
    pub objective: Objective,
    pub constraint: Constraint,
    /// Markov decision interval, s.
    pub dt: f64,
    /// Largest number of matched states accepted.
    pub max_states: usize,
    pub lp: SolverOptions,
    /// Stationarity tolerance of the squared-Frobenius solver (L1 norm).
    pub tolerance: f64,
    pub max_newton_iters: usize,
    pub subgradient_iters: usize,
    pub stationary_tol: f64,
    pub stationary_iters: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            objective: Objective::L1,
            constraint: Constraint::Hard,
            dt: 1.0,
            max_states: 1500,
            lp: SolverOptions::default(),
            tolerance: 1e-9,
            max_newton_iters: 200,
            subgradient_iters: 20_000,
            stationary_tol: 1e-12,
            stationary_iters: 1_000_000,
        }
    }
}

/// What to refine and toward which target.
#[derive(Debug, Clone, Copy)]
pub struct RefinementProblem<'a> {
    pub f_star: &'a BehaviorModel,
    /// Target over all grid states; inevitable-crash states of a
    /// car-following grid must carry zero mass.
    pub pi_star: &'a [f64],
    /// Optional per-state mask of acceleration entries allowed to be
    /// nonzero (index `k - 1` for action `k`). Masked entries keep their
    /// value from `F*`.
    pub support: Option<&'a [[bool; N_ACCEL]]>,
    pub options: RefineOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub situation: Situation,
    pub objective_mode: Objective,
    pub constraint_mode: Constraint,
    /// Objective value: `Σ|F − F*|` or `Σ(F − F*)²`, plus the penalty in
    /// soft mode.
    pub objective: f64,
    /// `Σ |F − F*|` over the longitudinal block.
    pub change_l1: f64,
    /// `‖π*ᵀG(F) − π*ᵀ‖₁` of the refined model.
    pub stationarity_residual: f64,
    /// Same quantity for `F*`.
    pub initial_residual: f64,
    /// Hellinger distance from `π*` to the stationary distribution of `F`.
    pub stationary_hellinger: f64,
    /// Same for `F*`.
    pub initial_hellinger: f64,
    pub iterations: usize,
    pub states: usize,
    pub variables: usize,
    pub constraints: usize,
}

/// The linear map of the problem in matched-state coordinates.
struct Layout {
    /// Matched grid states and the inverse map.
    states: Vec<u64>,
    slot: Vec<usize>,
    /// Variables: `(matched state position, action k)`.
    vars: Vec<(usize, usize)>,
    /// Per variable: `(matched successor position, π*_i · w)`.
    flows: Vec<Vec<(usize, f64)>>,
    /// `F*` value of each variable.
    x_star: Vec<f64>,
    /// Target mass per matched state.
    pi: Vec<f64>,
    /// `π*_j − (π*ᵀ P_fixed)_j` where `P_fixed` holds the lane-change
    /// self-loops and the masked entries.
    rhs: Vec<f64>,
    /// Longitudinal mass to distribute per matched state.
    row_mass: Vec<f64>,
}

const NONE: usize = usize::MAX;

fn build_layout(p: &RefinementProblem) -> Result<Layout> {
    let model = p.f_star;
    let grid = &model.grid;
    let n = grid.n_states() as usize;
    if p.pi_star.len() != n {
        return Err(Error::Dimension(format!("target has {} entries for {n} states", p.pi_star.len())));
    }
    let s: f64 = p.pi_star.iter().sum();
    if (s - 1.0).abs() > 1e-9 || p.pi_star.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::Invalid(format!("target is not a distribution (sum {s})")));
    }
    if let Some(mask) = p.support {
        if mask.len() != n {
            return Err(Error::Dimension(format!("support mask has {} rows for {n} states", mask.len())));
        }
    }
    let cf = match model.situation {
        Situation::FreeDriving => false,
        Situation::CarFollowing => true,
        other => return Err(Error::Invalid(format!("{} models are not refined", other.name()))),
    };
    let mut slot = vec![NONE; n];
    let mut states = Vec::new();
    for st in 0..n {
        if cf && crash_state(grid, st as u64) {
            if p.pi_star[st] > 0.0 {
                return Err(Error::Invalid(format!("target puts mass on inevitable-crash state {st}")));
            }
            continue;
        }
        slot[st] = states.len();
        states.push(st as u64);
    }
    if states.len() > p.options.max_states {
        return Err(Error::Invalid(format!(
            "{} states to match exceeds the limit of {}; refine a coarser or smaller grid",
            states.len(),
            p.options.max_states
        )));
    }
    let mut missing = Vec::new();
    for &st in &states {
        if model.covered_row(st).is_none() {
            missing.push(st);
        }
        if p.pi_star[st as usize] <= 0.0 {
            return Err(Error::Invalid(format!("target must be positive on state {st}")));
        }
    }
    if !missing.is_empty() {
        return Err(Error::Uncovered {
            count: missing.len(),
            first: missing.into_iter().take(10).collect(),
        });
    }

    let m = states.len();
    let pi: Vec<f64> = states.iter().map(|&s| p.pi_star[s as usize]).collect();
    let mut fixed = vec![0.0; m];
    let mut vars = Vec::new();
    let mut flows = Vec::new();
    let mut x_star = Vec::new();
    let mut row_mass = vec![0.0; m];
    let mut buf = Vec::new();
    for (pos, &st) in states.iter().enumerate() {
        let row = model.covered_row(st).expect("checked above");
        let lc = row.pmf[LC_LEFT] + row.pmf[LC_RIGHT];
        fixed[pos] += pi[pos] * lc;
        let mass: f64 = row.pmf[1..=N_ACCEL].iter().sum();
        row_mass[pos] = mass;
        for k in 1..=N_ACCEL {
            buf.clear();
            push_successors(grid, model.situation, st, accel_value(k), p.options.dt, pi[pos], &mut buf)?;
            let free = p.support.is_none_or(|mask| mask[st as usize][k - 1]);
            if free {
                vars.push((pos, k));
                x_star.push(row.pmf[k]);
                flows.push(
                    buf.iter()
                        .map(|&(j, w)| (slot[j], w))
                        .filter(|&(j, _)| j != NONE)
                        .collect(),
                );
            } else {
                row_mass[pos] -= row.pmf[k];
                for &(j, w) in &buf {
                    if slot[j] != NONE {
                        fixed[slot[j]] += w * row.pmf[k];
                    }
                }
            }
        }
    }
    let rhs = (0..m).map(|j| pi[j] - fixed[j]).collect();
    Ok(Layout {
        states,
        slot,
        vars,
        flows,
        x_star,
        pi,
        rhs,
        row_mass,
    })
}

impl Layout {
    /// `(π*ᵀ G(F))_j − π*_j` on matched states for variable values `x`.
    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = self.rhs.iter().map(|v| -v).collect();
        for (flow, &xv) in self.flows.iter().zip(x) {
            if xv != 0.0 {
                for &(j, w) in flow {
                    r[j] += w * xv;
                }
            }
        }
        r
    }

    /// Equality constraints on `x`: scaled stationarity rows then row sums.
    fn equality_columns(&self) -> (Vec<Vec<(usize, f64)>>, Vec<f64>) {
        let m = self.states.len();
        let cols = self
            .flows
            .iter()
            .zip(&self.vars)
            .map(|(flow, &(pos, _))| {
                let mut col: Vec<(usize, f64)> = flow.iter().map(|&(j, w)| (j, w / self.pi[j])).collect();
                col.push((m + pos, 1.0));
                col
            })
            .collect();
        let mut b: Vec<f64> = (0..m).map(|j| self.rhs[j] / self.pi[j]).collect();
        b.extend(&self.row_mass);
        (cols, b)
    }

    fn write_back(&self, model: &BehaviorModel, x: &[f64]) -> BehaviorModel {
        let mut out = model.clone();
        for (&(pos, k), &v) in self.vars.iter().zip(x) {
            let st = self.states[pos];
            out.rows.get_mut(&st).expect("matched state has a row").pmf[k] = v.max(0.0);
        }
        for &st in &self.states {
            let row = out.rows.get_mut(&st).unwrap();
            let lc = row.pmf[LC_LEFT] + row.pmf[LC_RIGHT];
            let mass: f64 = row.pmf[1..=N_ACCEL].iter().sum();
            let want = 1.0 - lc;
            if mass > 0.0 {
                row.pmf[1..=N_ACCEL].iter_mut().for_each(|p| *p *= want / mass);
            }
            row.origin = RowOrigin::Refined;
        }
        out
    }
}

fn l1_lp(layout: &Layout, constraint: Constraint) -> Result<LinearProgram> {
    let (eq, b) = layout.equality_columns();
    let m = layout.states.len();
    let nv = layout.vars.len();
    let mut cols = Vec::with_capacity(2 * nv + 2 * m);
    let mut c = Vec::with_capacity(cols.capacity());
    let mut upper = Vec::with_capacity(cols.capacity());
    // F = F* + p − n with 0 ≤ n ≤ F*.
    for col in &eq {
        cols.push(col.clone());
        c.push(1.0);
        upper.push(f64::INFINITY);
    }
    for (col, &xs) in eq.iter().zip(&layout.x_star) {
        cols.push(col.iter().map(|&(i, v)| (i, -v)).collect());
        c.push(1.0);
        upper.push(xs);
    }
    let mut rhs = b;
    // The p − n formulation moves F* to the right-hand side.
    for (col, &xs) in eq.iter().zip(&layout.x_star) {
        for &(i, v) in col {
            rhs[i] -= v * xs;
        }
    }
    if let Constraint::Soft { lambda } = constraint {
        for j in 0..m {
            for sign in [1.0, -1.0] {
                cols.push(vec![(j, sign)]);
                c.push(lambda * layout.pi[j]);
                upper.push(f64::INFINITY);
            }
        }
    }
    let mut lp = LinearProgram::from_columns(2 * m, cols, c, rhs)?.with_upper(upper)?;
    for (j, &(pos, k)) in layout.vars.iter().enumerate() {
        let st = layout.states[pos];
        lp.var_names[j] = format!("p_s{st}_a{k}");
        lp.var_names[nv + j] = format!("n_s{st}_a{k}");
    }
    for j in 0..m {
        lp.con_names[j] = format!("stat_s{}", layout.states[j]);
        lp.con_names[m + j] = format!("norm_s{}", layout.states[j]);
    }
    if matches!(constraint, Constraint::Soft { .. }) {
        for j in 0..m {
            lp.var_names[2 * nv + 2 * j] = format!("up_s{}", layout.states[j]);
            lp.var_names[2 * nv + 2 * j + 1] = format!("dn_s{}", layout.states[j]);
        }
    }
    Ok(lp)
}

/// The LP solved in L1 mode, for export and inspection.
pub fn refinement_lp(problem: &RefinementProblem) -> Result<LinearProgram> {
    l1_lp(&build_layout(problem)?, problem.options.constraint)
}

fn solve_l1(layout: &Layout, opts: &RefineOptions) -> Result<(Vec<f64>, f64, usize)> {
    let lp = l1_lp(layout, opts.constraint)?;
    let sol = solve_with(&lp, &opts.lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Err(Error::Infeasible {
                residual: sol.phase_one_residual,
            })
        }
        other => return Err(Error::Solver(format!("refinement LP ended with {other:?}"))),
    }
    let nv = layout.vars.len();
    let x = (0..nv)
        .map(|j| (layout.x_star[j] + sol.x[j] - sol.x[nv + j]).max(0.0))
        .collect();
    Ok((x, sol.objective, sol.iterations))
}

/// Projection of `x*` onto `{x ≥ 0, Ax = b}` by a semismooth Newton method
/// on the dual: `x(y) = max(0, x* + Aᵀy)`.
fn project_newton(
    cols: &[Vec<(usize, f64)>],
    b: &[f64],
    x_star: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, usize)> {
    let m = b.len();
    let mut y = DVector::<f64>::zeros(m);
    let primal = |y: &DVector<f64>| -> Vec<f64> {
        cols.iter()
            .zip(x_star)
            .map(|(col, &xs)| (xs + col.iter().map(|&(i, v)| v * y[i]).sum::<f64>()).max(0.0))
            .collect()
    };
    let theta = |y: &DVector<f64>, x: &[f64]| -> f64 {
        0.5 * x.iter().map(|v| v * v).sum::<f64>() - b.iter().zip(y.iter()).map(|(a, c)| a * c).sum::<f64>()
    };
    let grad = |x: &[f64]| -> DVector<f64> {
        let mut g = DVector::from_iterator(m, b.iter().map(|v| -v));
        for (col, &xv) in cols.iter().zip(x) {
            if xv > 0.0 {
                for &(i, v) in col {
                    g[i] += v * xv;
                }
            }
        }
        g
    };
    let mut x = primal(&y);
    for it in 0..max_iters {
        let g = grad(&x);
        if g.amax() <= tol {
            return Ok((x, it));
        }
        let mut j = DMatrix::<f64>::zeros(m, m);
        for (col, &xv) in cols.iter().zip(&x) {
            if xv > 0.0 {
                for &(a, va) in col {
                    for &(c, vc) in col {
                        j[(a, c)] += va * vc;
                    }
                }
            }
        }
        let scale = (0..m).map(|i| j[(i, i)]).fold(0.0f64, f64::max).max(1.0);
        for i in 0..m {
            j[(i, i)] += 1e-10 * scale;
        }
        let d = match j.clone().cholesky() {
            Some(ch) => ch.solve(&(-&g)),
            None => j
                .lu()
                .solve(&(-&g))
                .ok_or_else(|| Error::Solver("singular Newton system".into()))?,
        };
        let th0 = theta(&y, &x);
        let slope = g.dot(&d);
        let mut t = 1.0;
        loop {
            let y1 = &y + t * &d;
            let x1 = primal(&y1);
            if theta(&y1, &x1) <= th0 + 1e-4 * t * slope || t < 1e-12 {
                y = y1;
                x = x1;
                break;
            }
            t *= 0.5;
        }
    }
    let g = grad(&x);
    if g.amax() <= tol.sqrt() {
        return Ok((x, max_iters));
    }
    Err(Error::Solver(format!("projection did not converge (residual {:.3e})", g.amax())))
}

/// Projected subgradient on `Σ(F − F*)² + λ‖r(F)‖₁` over the row simplices.
fn soft_frobenius(layout: &Layout, lambda: f64, iters: usize) -> (Vec<f64>, usize) {
    let nv = layout.vars.len();
    let m = layout.states.len();
    let mut by_row: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (v, &(pos, _)) in layout.vars.iter().enumerate() {
        by_row[pos].push(v);
    }
    let objective = |x: &[f64]| -> f64 {
        let q: f64 = x.iter().zip(&layout.x_star).map(|(a, b)| (a - b).powi(2)).sum();
        q + lambda * layout.residual(x).iter().map(|r| r.abs()).sum::<f64>()
    };
    let mut x = layout.x_star.clone();
    let mut best = x.clone();
    let mut best_f = objective(&x);
    let mut g = vec![0.0; nv];
    for t in 0..iters {
        let r = layout.residual(&x);
        for v in 0..nv {
            let mut s = 2.0 * (x[v] - layout.x_star[v]);
            for &(j, w) in &layout.flows[v] {
                s += lambda * w * r[j].signum();
            }
            g[v] = s;
        }
        let step = 0.5 / (1.0 + lambda) / ((t + 1) as f64).sqrt();
        for v in 0..nv {
            x[v] -= step * g[v];
        }
        for (pos, idx) in by_row.iter().enumerate() {
            project_simplex(&mut x, idx, layout.row_mass[pos]);
        }
        let f = objective(&x);
        if f < best_f {
            best_f = f;
            best.copy_from_slice(&x);
        }
    }
    (best, iters)
}

/// Euclidean projection of `x[idx]` onto `{z ≥ 0, Σz = mass}`.
fn project_simplex(x: &mut [f64], idx: &[usize], mass: f64) {
    if idx.is_empty() {
        return;
    }
    let mut u: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut tau = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        acc += uk;
        let t = (acc - mass) / (k + 1) as f64;
        if uk - t > 0.0 {
            tau = t;
        }
    }
    for &i in idx {
        x[i] = (x[i] - tau).max(0.0);
    }
}

fn stationary_hellinger(model: &BehaviorModel, pi_star: &[f64], opts: &RefineOptions) -> Result<(f64, f64)> {
    let p = assemble(model, opts.dt)?;
    let mut res = vec![0.0; pi_star.len()];
    p.left_mul(pi_star, &mut res);
    let residual: f64 = res.iter().zip(pi_star).map(|(a, b)| (a - b).abs()).sum();
    let st = stationary(&p, opts.stationary_tol, opts.stationary_iters);
    let mut pi = st.pi;
    let t: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= t);
    Ok((residual, hellinger(&pi, pi_star)?))
}

/// Refines a free-driving or car-following model toward `π*`.
pub fn refine(problem: &RefinementProblem) -> Result<(BehaviorModel, RefineReport)> {
    let opts = problem.options;
    if let Constraint::Soft { lambda } = opts.constraint {
        if !(lambda > 0.0) {
            return Err(Error::Invalid("soft mode needs λ > 0".into()));
        }
    }
    let layout = build_layout(problem)?;
    let (x, iterations, variables, constraints) = match (opts.objective, opts.constraint) {
        (Objective::L1, c) => {
            let (x, _, it) = solve_l1(&layout, &opts)?;
            let extra = if matches!(c, Constraint::Soft { .. }) { 2 * layout.states.len() } else { 0 };
            (x, it, 2 * layout.vars.len() + extra, 2 * layout.states.len())
        }
        (Objective::SquaredFrobenius, Constraint::Hard) => {
            // The LP's phase one certifies feasibility before projecting.
            solve_l1(&layout, &opts)?;
            let (cols, b) = layout.equality_columns();
            let (x, it) = project_newton(&cols, &b, &layout.x_star, opts.tolerance, opts.max_newton_iters)?;
            (x, it, layout.vars.len(), b.len())
        }
        (Objective::SquaredFrobenius, Constraint::Soft { lambda }) => {
            let (x, it) = soft_frobenius(&layout, lambda, opts.subgradient_iters);
            (x, it, layout.vars.len(), layout.states.len())
        }
    };
    let refined = layout.write_back(problem.f_star, &x);
    let change_l1 = layout
        .vars
        .iter()
        .map(|&(pos, k)| {
            let st = layout.states[pos];
            (refined.rows[&st].pmf[k] - problem.f_star.rows[&st].pmf[k]).abs()
        })
        .sum::<f64>();
    let change_sq = layout
        .vars
        .iter()
        .map(|&(pos, k)| {
            let st = layout.states[pos];
            (refined.rows[&st].pmf[k] - problem.f_star.rows[&st].pmf[k]).powi(2)
        })
        .sum::<f64>();
    let (residual, h) = stationary_hellinger(&refined, problem.pi_star, &opts)?;
    let (initial_residual, h0) = stationary_hellinger(problem.f_star, problem.pi_star, &opts)?;
    let base = match opts.objective {
        Objective::L1 => change_l1,
        Objective::SquaredFrobenius => change_sq,
    };
    let objective = match opts.constraint {
        Constraint::Hard => base,
        Constraint::Soft { lambda } => base + lambda * residual,
    };
    let mut refined = refined;
    refined.provenance.insert("refined".into(), true.into());
    refined
        .provenance
        .insert("objective_mode".into(), serde_json::to_value(opts.objective).unwrap());
    refined
        .provenance
        .insert("constraint_mode".into(), serde_json::to_value(opts.constraint).unwrap());
    refined.provenance.insert("stationarity_residual".into(), residual.into());
    refined.provenance.insert("solver_iterations".into(), iterations.into());
    refined.provenance.insert("markov_dt".into(), opts.dt.into());
    let report = RefineReport {
        situation: problem.f_star.situation,
        objective_mode: opts.objective,
        constraint_mode: opts.constraint,
        objective,
        change_l1,
        stationarity_residual: residual,
        initial_residual,
        stationary_hellinger: h,
        initial_hellinger: h0,
        iterations,
        states: layout.states.len(),
        variables,
        constraints,
    };
    debug_assert_eq!(layout.slot.len(), problem.pi_star.len());
    Ok((refined, report))
}

pub fn refine_free_driving(problem: &RefinementProblem) -> Result<(BehaviorModel, RefineReport)> {
    if problem.f_star.situation != Situation::FreeDriving {
        return Err(Error::Invalid("expected a free-driving model".into()));
    }
    refine(problem)
}

pub fn refine_car_following(problem: &RefinementProblem) -> Result<(BehaviorModel, RefineReport)> {
    if problem.f_star.situation != Situation::CarFollowing {
        return Err(Error::Invalid("expected a car-following model".into()));
    }
    refine(problem)
}
