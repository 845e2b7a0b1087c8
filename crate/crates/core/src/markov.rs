//! Transition kernels induced by behavior models, and their stationary
//! distributions.

use std::io::Write;

use nalgebra::DMatrix;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};

use crate::action::{accel_value, LC_LEFT, LC_RIGHT, N_ACCEL};
use crate::empirical::is_inevitable_crash;
use crate::error::{Error, Result};
use crate::grid::StateGrid;
use crate::model::{BehaviorModel, Situation};

/// Row-stochastic matrix in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    /// Decision interval the kernel was assembled with, in seconds.
    pub dt: f64,
}

impl TransitionMatrix {
    /// Builds from per-row `(column, weight)` lists; duplicate columns are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>, dt: f64) -> Result<Self> {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|e| e.0);
            for (j, v) in row {
                if j >= n {
                    return Err(Error::Dimension(format!("row {i} points at column {j} of {n}")));
                }
                if !(v >= 0.0) {
                    return Err(Error::Invalid(format!("negative transition weight at ({i}, {j})")));
                }
                if v == 0.0 {
                    continue;
                }
                if cols.len() > row_ptr[i] && *cols.last().unwrap() == j {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(TransitionMatrix {
            n,
            row_ptr,
            cols,
            vals,
            dt,
        })
    }

    pub fn from_dense(p: &DMatrix<f64>, dt: f64) -> Result<Self> {
        if p.nrows() != p.ncols() {
            return Err(Error::Dimension("transition matrix must be square".into()));
        }
        let rows = (0..p.nrows())
            .map(|i| (0..p.ncols()).map(|j| (j, p[(i, j)])).collect())
            .collect();
        TransitionMatrix::from_rows(rows, dt)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|e| e.1).sum()).collect()
    }

    /// `πᵀ P`.
    pub fn left_mul(&self, pi: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, &p) in pi.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[self.cols[k]] += p * self.vals[k];
            }
        }
    }

    /// Writes `row,col,value` triplets.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Format(format!("write failed: {e}"));
        writeln!(w, "row,col,value").map_err(io)?;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                writeln!(w, "{i},{j},{v}").map_err(io)?;
            }
        }
        Ok(())
    }
}

/// Continuous successor of one car-following state under a held acceleration
/// with the lead at constant speed. The ego speed is clamped to the speed
/// axis and the range update uses the acceleration actually realised.
pub fn car_following_successor(v: f64, r: f64, rr: f64, a: f64, dt: f64, v_min: f64, v_max: f64) -> (f64, f64, f64) {
    let v1 = (v + a * dt).clamp(v_min, v_max);
    let a_eff = (v1 - v) / dt;
    let r1 = r + rr * dt - 0.5 * a_eff * dt * dt;
    let rr1 = rr - a_eff * dt;
    (v1, r1, rr1)
}

/// Appends the proportional allocation of taking acceleration `a` from
/// `state` for `dt` seconds, scaled by `p`.
///
/// Supports free-driving (speed) and car-following (speed, range, range
/// rate) grids.
pub fn push_successors(
    grid: &StateGrid,
    situation: Situation,
    state: u64,
    a: f64,
    dt: f64,
    p: f64,
    out: &mut Vec<(usize, f64)>,
) -> Result<()> {
    match situation {
        Situation::FreeDriving => {
            let ax = &grid.axes[0];
            let v = ax.center(state as usize);
            let v1 = (v + a * dt).clamp(ax.min, ax.max);
            let (lo, hi, w) = ax.allocate(v1);
            out.push((lo, p * (1.0 - w)));
            if w > 0.0 {
                out.push((hi, p * w));
            }
        }
        Situation::CarFollowing => {
            let mut idx = [0usize; 3];
            grid.decode_into(state, &mut idx);
            let (av, ar, arr) = (&grid.axes[0], &grid.axes[1], &grid.axes[2]);
            let (v1, r1, rr1) = car_following_successor(
                av.center(idx[0]),
                ar.center(idx[1]),
                arr.center(idx[2]),
                a,
                dt,
                av.min,
                av.max,
            );
            let parts = [av.allocate(v1), ar.allocate(r1), arr.allocate(rr1)];
            let (n1, n2) = (ar.bins(), arr.bins());
            for (iv, wv) in [(parts[0].0, 1.0 - parts[0].2), (parts[0].1, parts[0].2)] {
                if wv == 0.0 {
                    continue;
                }
                for (ir, wr) in [(parts[1].0, 1.0 - parts[1].2), (parts[1].1, parts[1].2)] {
                    if wr == 0.0 {
                        continue;
                    }
                    for (irr, wrr) in [(parts[2].0, 1.0 - parts[2].2), (parts[2].1, parts[2].2)] {
                        if wrr == 0.0 {
                            continue;
                        }
                        out.push(((iv * n1 + ir) * n2 + irr, p * wv * wr * wrr));
                    }
                }
            }
        }
        other => {
            return Err(Error::Invalid(format!(
                "no transition kernel for the {} situation",
                other.name()
            )))
        }
    }
    Ok(())
}

/// Whether a car-following grid state is an inevitable crash, evaluated at
/// the bin center.
pub fn crash_state(grid: &StateGrid, state: u64) -> bool {
    let c = grid.centers(state);
    is_inevitable_crash(c[1], c[2])
}

/// Kernel of a free-driving or car-following model.
pub fn assemble(model: &BehaviorModel, dt: f64) -> Result<TransitionMatrix> {
    if !(dt > 0.0) {
        return Err(Error::Invalid(format!("decision interval must be positive, got {dt}")));
    }
    let grid = &model.grid;
    let n = grid.n_states();
    if n > 50_000_000 {
        return Err(Error::Invalid(format!("{n} states is too many to assemble")));
    }
    let cf = model.situation == Situation::CarFollowing;
    let mut rows = Vec::with_capacity(n as usize);
    let mut missing = Vec::new();
    let mut missing_count = 0usize;
    for s in 0..n {
        if cf && crash_state(grid, s) {
            rows.push(vec![(s as usize, 1.0)]);
            continue;
        }
        let Some(row) = model.covered_row(s) else {
            missing_count += 1;
            if missing.len() < 10 {
                missing.push(s);
            }
            rows.push(Vec::new());
            continue;
        };
        let mut out = Vec::with_capacity(2 * N_ACCEL + 1);
        let lc = row.pmf[LC_LEFT] + row.pmf[LC_RIGHT];
        if lc > 0.0 {
            out.push((s as usize, lc));
        }
        for k in 1..=N_ACCEL {
            let p = row.pmf[k];
            if p > 0.0 {
                push_successors(grid, model.situation, s, accel_value(k), dt, p, &mut out)?;
            }
        }
        rows.push(out);
    }
    if missing_count > 0 {
        return Err(Error::Uncovered {
            count: missing_count,
            first: missing,
        });
    }
    TransitionMatrix::from_rows(rows, dt)
}

/// Speed-chain kernel of a free-driving model.
pub fn assemble_free_driving(model: &BehaviorModel, dt: f64) -> Result<TransitionMatrix> {
    if model.situation != Situation::FreeDriving {
        return Err(Error::Invalid("expected a free-driving model".into()));
    }
    assemble(model, dt)
}

/// Steady-state car-following kernel; inevitable-crash states are absorbing.
pub fn assemble_car_following(model: &BehaviorModel, dt: f64) -> Result<TransitionMatrix> {
    if model.situation != Situation::CarFollowing {
        return Err(Error::Invalid("expected a car-following model".into()));
    }
    assemble(model, dt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDistribution {
    pub pi: Vec<f64>,
    /// `‖πᵀP − πᵀ‖₁` of the returned vector.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration from the uniform distribution.
///
/// Stops once the L1 residual drops to `tol`. Otherwise the iterate with the
/// smallest residual is returned with `converged = false`.
pub fn stationary(p: &TransitionMatrix, tol: f64, max_iters: usize) -> StationaryDistribution {
    let n = p.size();
    if n == 0 {
        return StationaryDistribution {
            pi: Vec::new(),
            residual: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut best = pi.clone();
    let mut best_res = f64::INFINITY;
    for it in 0..=max_iters {
        p.left_mul(&pi, &mut next);
        let res: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        if res < best_res {
            best_res = res;
            best.copy_from_slice(&pi);
        }
        if res <= tol {
            return StationaryDistribution {
                pi,
                residual: res,
                iterations: it,
                converged: true,
            };
        }
        let total: f64 = next.iter().sum();
        for (a, b) in pi.iter_mut().zip(&next) {
            *a = b / total;
        }
    }
    StationaryDistribution {
        pi: best,
        residual: best_res,
        iterations: max_iters,
        converged: false,
    }
}

/// Direct solve of `πᵀP = πᵀ, Σπ = 1` by LU; meant for small irreducible chains.
pub fn stationary_direct(p: &TransitionMatrix) -> Result<Vec<f64>> {
    let n = p.size();
    let mut m = p.to_dense().transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        m[(n - 1, j)] = 1.0;
    }
    let mut rhs = nalgebra::DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Solver("singular balance system; chain is reducible".into()))?;
    Ok(sol.iter().copied().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnosis {
    pub irreducible: bool,
    pub aperiodic: bool,
    /// Strongly connected components of the support graph, each sorted.
    pub components: Vec<Vec<usize>>,
    /// Period of each component; 0 for a singleton without a self-loop.
    pub periods: Vec<u64>,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Communicating classes and periods of the chain's support graph.
pub fn diagnose(p: &TransitionMatrix) -> ChainDiagnosis {
    let n = p.size();
    let mut g: DiGraph<(), ()> = DiGraph::with_capacity(n, p.nnz());
    for _ in 0..n {
        g.add_node(());
    }
    for i in 0..n {
        for (j, v) in p.row(i) {
            if v > 0.0 {
                g.add_edge(NodeIndex::new(i), NodeIndex::new(j), ());
            }
        }
    }
    let mut components: Vec<Vec<usize>> = petgraph::algo::tarjan_scc(&g)
        .into_iter()
        .map(|c| {
            let mut c: Vec<usize> = c.into_iter().map(|x| x.index()).collect();
            c.sort_unstable();
            c
        })
        .collect();
    components.sort_by_key(|c| c[0]);

    let mut comp_of = vec![0usize; n];
    for (k, c) in components.iter().enumerate() {
        for &i in c {
            comp_of[i] = k;
        }
    }
    let mut periods = Vec::with_capacity(components.len());
    let mut level = vec![u64::MAX; n];
    for (k, c) in components.iter().enumerate() {
        let root = c[0];
        level[root] = 0;
        let mut queue = std::collections::VecDeque::from([root]);
        let mut period = 0u64;
        while let Some(u) = queue.pop_front() {
            for (v, w) in p.row(u) {
                if w <= 0.0 || comp_of[v] != k {
                    continue;
                }
                if level[v] == u64::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                } else {
                    let diff = (level[u] + 1).abs_diff(level[v]);
                    period = gcd(period, diff);
                }
            }
        }
        periods.push(period);
    }
    ChainDiagnosis {
        irreducible: components.len() == 1,
        aperiodic: periods.iter().all(|&d| d == 1),
        components,
        periods,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::model::{ModelRow, RowOrigin};
    use crate::N_ACTIONS;

    fn dense(rows: &[&[f64]]) -> TransitionMatrix {
        let m = DMatrix::from_fn(rows.len(), rows.len(), |i, j| rows[i][j]);
        TransitionMatrix::from_dense(&m, 1.0).unwrap()
    }

    #[test]
    fn two_state_chain() {
        let p = dense(&[&[0.9, 0.1], &[0.5, 0.5]]);
        let s = stationary(&p, 1e-14, 10_000);
        assert!(s.converged);
        assert!((s.pi[0] - 5.0 / 6.0).abs() < 1e-10);
        assert!((s.pi[1] - 1.0 / 6.0).abs() < 1e-10);
    }

    #[test]
    fn identity_keeps_uniform() {
        let p = dense(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let s = stationary(&p, 1e-12, 10);
        assert_eq!(s.residual, 0.0);
        assert!(s.pi.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let d = diagnose(&p);
        assert!(!d.irreducible);
        assert_eq!(d.components.len(), 3);
    }

    #[test]
    fn cycle_has_period_three() {
        let p = dense(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]]);
        let d = diagnose(&p);
        assert!(d.irreducible);
        assert!(!d.aperiodic);
        assert_eq!(d.periods, vec![3]);
        let s = stationary(&p, 1e-12, 50);
        assert!(s.converged, "uniform start is already stationary");
    }

    #[test]
    fn positive_matrix_is_regular() {
        let d = diagnose(&dense(&[&[0.2, 0.8], &[0.6, 0.4]]));
        assert!(d.irreducible && d.aperiodic);
    }

    #[test]
    fn zero_accel_gives_identity() {
        let spec = GridSpec::default();
        let grid = spec.grid(Situation::FreeDriving).unwrap();
        let mut m = BehaviorModel::new(Situation::FreeDriving, grid, 1);
        for s in 0..m.grid.n_states() {
            let mut pmf = [0.0; N_ACTIONS];
            pmf[21] = 1.0;
            m.rows.insert(s, ModelRow { pmf, coverage: 1, origin: RowOrigin::Empirical });
        }
        let p = assemble_free_driving(&m, 1.0).unwrap();
        assert_eq!(p.nnz(), 100);
        for i in 0..100 {
            assert!((p.get(i, i) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uncovered_rows_error() {
        let spec = GridSpec::default();
        let grid = spec.grid(Situation::FreeDriving).unwrap();
        let m = BehaviorModel::new(Situation::FreeDriving, grid, 1);
        assert!(matches!(
            assemble_free_driving(&m, 1.0),
            Err(Error::Uncovered { count: 100, .. })
        ));
    }
}
