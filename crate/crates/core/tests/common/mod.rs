//! Independent oracles shared by the integration tests and the acceptance
//! suite. Nothing here calls into the solver code under test: linear algebra
//! is plain Gaussian elimination on `Vec<Vec<f64>>`.

#![allow(dead_code)]

use nde_core::action::N_ACCEL;
use nde_core::grid::{Axis, GridKind, StateGrid};
use rand::Rng;
use nde_core::{BehaviorModel, ModelRow, RowOrigin, Situation, N_ACTIONS};

pub fn accel_of(k: usize) -> f64 {
    -4.0 + 0.2 * (k as f64 - 1.0)
}

/// Solves `A x = b` for square `A` with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

/// Stationary distribution of a dense row-stochastic matrix by solving the
/// balance equations with one of them replaced by normalisation.
pub fn stationary_oracle(p: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = p.len();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            a[j][i] = p[i][j] - if i == j { 1.0 } else { 0.0 };
        }
    }
    a[n - 1] = vec![1.0; n];
    let mut b = vec![0.0; n];
    b[n - 1] = 1.0;
    gauss_solve(a, b)
}

/// Brute-force LP oracle: best objective over all basic feasible solutions
/// of `min cᵀx, Ax = b, x ≥ 0`. `None` when there are none.
pub fn vertex_enumeration(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Option<f64> {
    let m = a.len();
    let n = c.len();
    let mut best: Option<f64> = None;
    let mut idx: Vec<usize> = (0..m).collect();
    loop {
        let basis: Vec<Vec<f64>> = (0..m).map(|i| idx.iter().map(|&j| a[i][j]).collect()).collect();
        if let Some(xb) = gauss_solve(basis, b.to_vec()) {
            if xb.iter().all(|v| *v >= -1e-9) {
                let obj: f64 = idx.iter().zip(&xb).map(|(&j, v)| c[j] * v).sum();
                best = Some(best.map_or(obj, |b: f64| b.min(obj)));
            }
        }
        // Next m-combination of 0..n.
        let mut i = m;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < n - m + i {
                idx[i] += 1;
                for k in i + 1..m {
                    idx[k] = idx[k - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Reduced row echelon form of `[A | b]`. Returns the particular solution
/// with free variables at zero and, per free variable, its column in the
/// null-space parametrisation `x = x0 + Σ z_f e_f`.
pub struct AffineSet {
    pub x0: Vec<f64>,
    pub free: Vec<usize>,
    /// `dir[f][v]`: change of variable `v` per unit of free variable `f`.
    pub dir: Vec<Vec<f64>>,
}

pub fn affine_solution_set(a: &[Vec<f64>], b: &[f64]) -> Option<AffineSet> {
    let m = a.len();
    let n = a[0].len();
    let mut t: Vec<Vec<f64>> = a.iter().zip(b).map(|(r, &bi)| {
        let mut r = r.clone();
        r.push(bi);
        r
    }).collect();
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..n {
        if row == m {
            break;
        }
        let piv = (row..m).max_by(|&i, &j| t[i][col].abs().total_cmp(&t[j][col].abs())).unwrap();
        if t[piv][col].abs() < 1e-10 {
            continue;
        }
        t.swap(row, piv);
        let d = t[row][col];
        t[row].iter_mut().for_each(|v| *v /= d);
        for r in 0..m {
            if r != row {
                let f = t[r][col];
                if f != 0.0 {
                    for c in 0..=n {
                        t[r][c] -= f * t[row][c];
                    }
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    if t[row..].iter().any(|r| r[n].abs() > 1e-9) {
        return None;
    }
    let free: Vec<usize> = (0..n).filter(|c| !pivots.contains(c)).collect();
    let mut x0 = vec![0.0; n];
    for (r, &p) in pivots.iter().enumerate() {
        x0[p] = t[r][n];
    }
    let dir = free
        .iter()
        .map(|&f| {
            let mut d = vec![0.0; n];
            d[f] = 1.0;
            for (r, &p) in pivots.iter().enumerate() {
                d[p] = -t[r][f];
            }
            d
        })
        .collect();
    Some(AffineSet { x0, free, dir })
}

/// Minimises `f` over `{x0 + Σ z_f dir_f : x ≥ 0, z ∈ [0, 1]^d}` by a grid
/// search that repeatedly zooms into the neighbourhood of the best point.
pub fn zoom_grid_search(set: &AffineSet, f: &dyn Fn(&[f64]) -> f64) -> Option<(f64, Vec<f64>)> {
    let d = set.free.len();
    assert!(d <= 4, "grid search over {d} dimensions is too expensive");
    let n = set.x0.len();
    let points = match d {
        0 | 1 => 2001,
        2 => 201,
        3 => 51,
        _ => 21,
    };
    let mut lo = vec![0.0; d];
    let mut hi = vec![1.0; d];
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut x = vec![0.0; n];
    let mut z = vec![0.0; d];
    for _level in 0..60 {
        let total = (points as u64).pow(d as u32);
        let mut level_best: Option<(f64, Vec<f64>)> = None;
        for code in 0..total {
            let mut c = code;
            for k in 0..d {
                let i = c % points as u64;
                c /= points as u64;
                z[k] = lo[k] + (hi[k] - lo[k]) * i as f64 / (points - 1) as f64;
            }
            x.copy_from_slice(&set.x0);
            for k in 0..d {
                for v in 0..n {
                    x[v] += z[k] * set.dir[k][v];
                }
            }
            if x.iter().any(|v| *v < -1e-12) {
                continue;
            }
            let val = f(&x);
            if level_best.as_ref().is_none_or(|b| val < b.0) {
                level_best = Some((val, z.clone()));
            }
        }
        let (val, zb) = level_best?;
        if best.as_ref().is_none_or(|b| val <= b.0) {
            best = Some((val, zb.clone()));
        }
        let zc = best.as_ref().unwrap().1.clone();
        let mut width = 0.0f64;
        for k in 0..d {
            let step = (hi[k] - lo[k]) / (points - 1) as f64;
            lo[k] = (zc[k] - 4.0 * step).max(0.0);
            hi[k] = (zc[k] + 4.0 * step).min(1.0);
            width = width.max(hi[k] - lo[k]);
        }
        if d == 0 || width < 1e-9 {
            break;
        }
    }
    best
}

/// A refinement toy: the model, its target, the mask of free accelerations
/// and the oracle's own linear system over the free entries.
pub struct RefineToy {
    pub model: BehaviorModel,
    pub pi_star: Vec<f64>,
    pub support: Vec<[bool; N_ACCEL]>,
    /// Free entries `(state, action)` in the order of the oracle variables.
    pub vars: Vec<(usize, usize)>,
    pub x_star: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl RefineToy {
    pub fn l1_objective(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.x_star).map(|(a, b)| (a - b).abs()).sum()
    }

    /// L1 optimum over the feasible set, found by grid search.
    pub fn oracle_l1(&self) -> Option<f64> {
        let set = affine_solution_set(&self.a, &self.b)?;
        zoom_grid_search(&set, &|x| self.l1_objective(x)).map(|(v, _)| v)
    }

    pub fn oracle_dims(&self) -> Option<usize> {
        affine_solution_set(&self.a, &self.b).map(|s| s.free.len())
    }

    /// `‖π*ᵀG(F) − π*ᵀ‖₁` from the oracle's own kernel.
    pub fn residual(&self, model: &BehaviorModel) -> f64 {
        let n = self.pi_star.len();
        let mut flow = vec![0.0; n];
        for (&st, row) in &model.rows {
            for k in 1..=N_ACCEL {
                if row.pmf[k] > 0.0 {
                    for (j, w) in successors(&model.grid, model.situation, st as usize, accel_of(k)) {
                        flow[j] += self.pi_star[st as usize] * row.pmf[k] * w;
                    }
                }
            }
        }
        flow.iter().zip(&self.pi_star).map(|(a, b)| (a - b).abs()).sum()
    }
}

fn split(centers: &[f64], value: f64) -> Vec<(usize, f64)> {
    let n = centers.len();
    if value <= centers[0] {
        return vec![(0, 1.0)];
    }
    if value >= centers[n - 1] {
        return vec![(n - 1, 1.0)];
    }
    let i = centers.iter().rposition(|c| *c <= value).unwrap();
    let w = (value - centers[i]) / (centers[i + 1] - centers[i]);
    vec![(i, 1.0 - w), (i + 1, w)]
}

fn axis_centers(ax: &Axis) -> Vec<f64> {
    let n = ((ax.max - ax.min) / ax.resolution).round() as usize;
    (0..n).map(|i| ax.min + (i as f64 + 0.5) * ax.resolution).collect()
}

/// One-second successor allocation written from the kinematics directly.
pub fn successors(grid: &StateGrid, situation: Situation, state: usize, a: f64) -> Vec<(usize, f64)> {
    match situation {
        Situation::FreeDriving => {
            let c = axis_centers(&grid.axes[0]);
            let v1 = (c[state] + a).clamp(grid.axes[0].min, grid.axes[0].max);
            split(&c, v1)
        }
        Situation::CarFollowing => {
            let cv = axis_centers(&grid.axes[0]);
            let cr = axis_centers(&grid.axes[1]);
            let crr = axis_centers(&grid.axes[2]);
            let (nr, nrr) = (cr.len(), crr.len());
            let (iv, ir, irr) = (state / (nr * nrr), (state / nrr) % nr, state % nrr);
            let v = cv[iv];
            let v1 = (v + a).clamp(grid.axes[0].min, grid.axes[0].max);
            let ae = v1 - v;
            let r1 = cr[ir] + crr[irr] - 0.5 * ae;
            let rr1 = crr[irr] - ae;
            let mut out = Vec::new();
            for (jv, wv) in split(&cv, v1) {
                for (jr, wr) in split(&cr, r1) {
                    for (jrr, wrr) in split(&crr, rr1) {
                        out.push(((jv * nr + jr) * nrr + jrr, wv * wr * wrr));
                    }
                }
            }
            out
        }
        _ => unreachable!(),
    }
}

fn row_from(probs: &[(usize, f64)]) -> ModelRow {
    let mut pmf = [0.0; N_ACTIONS];
    for &(k, p) in probs {
        pmf[k] = p;
    }
    ModelRow {
        pmf,
        coverage: 1000,
        origin: RowOrigin::Empirical,
    }
}

fn build_system(
    model: &BehaviorModel,
    pi_star: &[f64],
    support: &[[bool; N_ACCEL]],
) -> (Vec<(usize, usize)>, Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let n = pi_star.len();
    let mut vars = Vec::new();
    for st in 0..n {
        for k in 1..=N_ACCEL {
            if support[st][k - 1] {
                vars.push((st, k));
            }
        }
    }
    let nv = vars.len();
    let mut a = vec![vec![0.0; nv]; 2 * n];
    let mut b = vec![0.0; 2 * n];
    b[..n].copy_from_slice(pi_star);
    for st in 0..n {
        b[n + st] = 1.0;
        for k in 1..=N_ACCEL {
            if !support[st][k - 1] {
                let p = model.rows[&(st as u64)].pmf[k];
                b[n + st] -= p;
                for (j, w) in successors(&model.grid, model.situation, st, accel_of(k)) {
                    b[j] -= pi_star[st] * p * w;
                }
            }
        }
    }
    for (v, &(st, k)) in vars.iter().enumerate() {
        for (j, w) in successors(&model.grid, model.situation, st, accel_of(k)) {
            a[j][v] += pi_star[st] * w;
        }
        a[n + st][v] = 1.0;
    }
    let x_star = vars.iter().map(|&(st, k)| model.rows[&(st as u64)].pmf[k]).collect();
    (vars, x_star, a, b)
}

/// Three speed states at 0.2 m/s; each row uses only −0.2, 0 and +0.2 m/s².
pub fn ff_toy() -> RefineToy {
    let grid = StateGrid::new(GridKind::FreeDriving, vec![Axis::new("v", 20.0, 20.6, 0.2).unwrap()]).unwrap();
    let mut model = BehaviorModel::new(Situation::FreeDriving, grid, 50);
    let rows = [
        [(20, 0.3), (21, 0.4), (22, 0.3)],
        [(20, 0.2), (21, 0.5), (22, 0.3)],
        [(20, 0.3), (21, 0.5), (22, 0.2)],
    ];
    for (st, r) in rows.iter().enumerate() {
        model.rows.insert(st as u64, row_from(r));
    }
    let pi_star = vec![0.2, 0.5, 0.3];
    let mut mask = [false; N_ACCEL];
    for k in 20..=22 {
        mask[k - 1] = true;
    }
    let support = vec![mask; 3];
    let (vars, x_star, a, b) = build_system(&model, &pi_star, &support);
    RefineToy {
        model,
        pi_star,
        support,
        vars,
        x_star,
        a,
        b,
    }
}

/// Two speeds, two ranges, three range rates; rows mix ±0.2 m/s² and two of
/// them may also hold speed. The target is the stationary distribution of a
/// reference model and `F*` is that model perturbed.
pub fn cf_toy() -> RefineToy {
    let grid = StateGrid::new(
        GridKind::CarFollowing,
        vec![
            Axis::new("v", 20.0, 22.0, 1.0).unwrap(),
            Axis::new("r", 0.0, 20.0, 10.0).unwrap(),
            Axis::new("rr", -1.5, 1.5, 1.0).unwrap(),
        ],
    )
    .unwrap();
    let n = 12;
    let (down, hold, up) = (20, 21, 22);
    let three = [0usize, 7];
    let mut reference = BehaviorModel::new(Situation::CarFollowing, grid.clone(), 50);
    for st in 0..n {
        let p = 0.3 + 0.4 * ((st * 7 % 5) as f64 / 4.0);
        let row = if three.contains(&st) {
            row_from(&[(down, 0.8 * p), (hold, 0.2), (up, 0.8 * (1.0 - p))])
        } else {
            row_from(&[(down, p), (up, 1.0 - p)])
        };
        reference.rows.insert(st as u64, row);
    }
    let mut dense = vec![vec![0.0; n]; n];
    for st in 0..n {
        let row = &reference.rows[&(st as u64)];
        for k in [down, hold, up] {
            for (j, w) in successors(&grid, Situation::CarFollowing, st, accel_of(k)) {
                dense[st][j] += row.pmf[k] * w;
            }
        }
    }
    let pi_star = stationary_oracle(&dense).expect("reference chain is irreducible");
    assert!(pi_star.iter().all(|p| *p > 1e-6), "reference chain has transient states");
    let mut model = reference.clone();
    for (st, row) in model.rows.iter_mut() {
        let d = if st % 2 == 0 { 0.15 } else { -0.15 };
        let total = row.pmf[down] + row.pmf[up];
        let p = (row.pmf[down] + d).clamp(0.05 * total, 0.95 * total);
        row.pmf[down] = p;
        row.pmf[up] = total - p;
    }
    let support: Vec<[bool; N_ACCEL]> = (0..n)
        .map(|st| {
            let mut mask = [false; N_ACCEL];
            mask[down - 1] = true;
            mask[up - 1] = true;
            mask[hold - 1] = three.contains(&st);
            mask
        })
        .collect();
    let (vars, x_star, a, b) = build_system(&model, &pi_star, &support);
    RefineToy {
        model,
        pi_star,
        support,
        vars,
        x_star,
        a,
        b,
    }
}

/// Random irreducible, aperiodic chain: self-loops, a ring and a few random
/// extra edges per row.
pub fn random_chain(n: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut p = vec![vec![0.0; n]; n];
    for (i, row) in p.iter_mut().enumerate() {
        row[i] += rng.random_range(0.1..1.0);
        row[(i + 1) % n] += rng.random_range(0.1..1.0);
        for _ in 0..3 {
            let j = rng.random_range(0..n);
            row[j] += rng.random_range(0.0..1.0);
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    p
}

/// Hellinger distance through the Bhattacharyya coefficient.
pub fn hellinger_bc(p: &[f64], q: &[f64]) -> f64 {
    let bc: f64 = p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum();
    (1.0 - bc).max(0.0).sqrt()
}

/// Fraction of `trials` Bernoulli(p) experiments of size `n` whose interval
/// from `ci` contains `p`.
pub fn ci_coverage(p: f64, n: u64, trials: usize, seed: u64, ci: impl Fn(u64, u64) -> (f64, f64)) -> f64 {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut hit = 0;
    for _ in 0..trials {
        let m = (0..n).filter(|_| rng.random::<f64>() < p).count() as u64;
        let (lo, hi) = ci(m, n);
        if lo <= p && p <= hi {
            hit += 1;
        }
    }
    hit as f64 / trials as f64
}

/// Feasible and bounded: `b = A x₀` for a random `x₀ ≥ 0`, and the last
/// row caps the sum of the structural variables through a slack.
pub fn random_feasible(rng: &mut rand_chacha::ChaCha8Rng) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let m = rng.random_range(1..=5);
    let n = rng.random_range(m..=7).max(m);
    let x0: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..3.0) }).collect();
    let mut a = Vec::new();
    for _ in 0..m - 1 {
        a.push((0..n).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>());
    }
    a.push(vec![1.0; n]);
    let mut b: Vec<f64> = a.iter().map(|r| r.iter().zip(&x0).map(|(a, x)| a * x).sum()).collect();
    // Slack on the cap row.
    for (i, r) in a.iter_mut().enumerate() {
        r.push(if i == m - 1 { 1.0 } else { 0.0 });
    }
    b[m - 1] += rng.random_range(0.0..2.0);
    let c = (0..=n).map(|_| rng.random_range(-1.0..1.0)).collect();
    (c, a, b)
}

/// `Aᵀy ≥ 0` and `bᵀy < 0` certify that `Ax = b, x ≥ 0` has no solution.
pub fn farkas_infeasible(rng: &mut rand_chacha::ChaCha8Rng) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let m = rng.random_range(2..=5);
    let n = rng.random_range(2..=8);
    let y: Vec<f64> = (0..m).map(|i| if i == m - 1 { 1.0 } else { rng.random_range(-1.0..1.0) }).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut a: Vec<Vec<f64>> = (0..m - 1).map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let last: Vec<f64> = (0..n).map(|j| w[j] - (0..m - 1).map(|i| y[i] * a[i][j]).sum::<f64>()).collect();
    a.push(last);
    let mut b: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
    let partial: f64 = (0..m - 1).map(|i| y[i] * b[i]).sum();
    b[m - 1] = -1.0 - partial;
    let c = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    (c, a, b, y)
}
