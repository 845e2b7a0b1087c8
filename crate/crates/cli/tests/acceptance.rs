//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p nde-cli --test acceptance`. Set
//! `NDE_ACCEPTANCE_HOURS` to change the amount of synthetic data (at least 10)
//! and `NDE_ACCEPTANCE_STRICT` to exit non-zero on any FAIL.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nde_core::action::{LC_LEFT, LC_RIGHT, N_ACCEL};
use nde_core::config::Config;
use nde_core::empirical::{build_models, fill_uncovered};
use nde_core::lp::{solve, LinearProgram, LpStatus};
use nde_core::markov::{assemble_free_driving, stationary, stationary_direct, TransitionMatrix};
use nde_core::metrics::{accident_rate, accident_rate_counts, accident_types, hellinger, lane_change_rate, CiMethod};
use nde_core::ndd::pipeline::free_driving_target;
use nde_core::ndd::{generate_synthetic_ndd, DataSummary, GenerationReport, TruthModel};
use nde_core::refine::{refine, refine_free_driving, RefineOptions, RefinementProblem};
use nde_core::sim::idm::idm_free;
use nde_core::sim::view::context_state;
use nde_core::sim::{
    init_world, run_episode, run_episodes, stochastic_idm_pmf, CollisionMode, ConstantLcPolicy, EpisodeConfig,
    EpisodeMode, InitDistribution, InitSampler, NdePolicy,
};
use nde_core::{BehaviorModel, Direction, ModelSet, Situation, N_ACTIONS};

struct Data {
    cfg: Config,
    hours: f64,
    report: GenerationReport,
    summary: DataSummary,
    built: ModelSet,
    refined: ModelSet,
    init: InitDistribution,
    secs: f64,
}

struct Suite {
    passed: usize,
    failed: usize,
}

impl Suite {
    fn run(&mut self, id: u32, name: &str, f: impl FnOnce() -> Result<String, String>) {
        let t = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match out {
            Ok(detail) => {
                self.passed += 1;
                println!("PASS [{id:>2}] {name} ({secs:.1} s): {detail}");
            }
            Err(detail) => {
                self.failed += 1;
                println!("FAIL [{id:>2}] {name} ({secs:.1} s): {detail}");
            }
        }
    }
}

fn ensure(ok: bool, msg: String) -> Result<String, String> {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn dense(a: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), a[0].len(), |i, j| a[i][j])
}

fn matrix(p: &[Vec<f64>]) -> TransitionMatrix {
    TransitionMatrix::from_rows(
        p.iter().map(|r| r.iter().copied().enumerate().filter(|e| e.1 > 0.0).collect()).collect(),
        1.0,
    )
    .unwrap()
}

fn bernoulli_h(p: f64, q: f64) -> f64 {
    hellinger(&[p, 1.0 - p], &[q, 1.0 - q]).unwrap()
}

fn prepare() -> Data {
    let cfg = Config::default();
    let hours: f64 = std::env::var("NDE_ACCEPTANCE_HOURS")
        .ok()
        .and_then(|h| h.parse().ok())
        .unwrap_or(30.0);
    assert!(hours >= 10.0, "at least 10 h of data");
    let t = Instant::now();
    let sampler = InitSampler::new(InitDistribution::synthetic()).unwrap();
    let mut summary = DataSummary::new(&cfg.grid, cfg.ndd).unwrap();
    let report = generate_synthetic_ndd(
        &cfg.world,
        &cfg.init,
        &sampler,
        &cfg.synthetic,
        &cfg.grid,
        hours,
        cfg.run.seed,
        |batch| summary.process(batch),
    )
    .unwrap();
    let (built, _) =
        build_models(summary.counts.clone(), &cfg.grid, cfg.models.smoothing_window, cfg.models.min_samples).unwrap();

    // Same steps as `nde refine` on the free-driving model.
    let mut refined = built.clone();
    let idm = cfg.sim.idm;
    let sigma = cfg.sim.fallback_sigma;
    let ff = refined.get_mut(Situation::FreeDriving);
    let grid = ff.grid.clone();
    fill_uncovered(ff, |s| stochastic_idm_pmf(idm_free(grid.centers(s)[0], &idm), sigma));
    let f_star = ff.clone();
    let pi_star = free_driving_target(&summary.ff_visits, grid.n_states() as usize, cfg.models.ff_target_floor);
    let problem = RefinementProblem {
        f_star: &f_star,
        pi_star: &pi_star,
        support: None,
        options: cfg.refine_options(),
    };
    let (f, _) = refine_free_driving(&problem).unwrap();
    *refined.get_mut(Situation::FreeDriving) = f;
    let init = summary.init_distribution().unwrap();
    Data {
        cfg,
        hours,
        report,
        summary,
        built,
        refined,
        init,
        secs: t.elapsed().as_secs_f64(),
    }
}

fn model_recovery(d: &Data) -> Result<String, String> {
    let truth = TruthModel::new(d.cfg.synthetic.truth.clone(), &d.cfg.grid, 1.0).unwrap();
    let mut checked = BTreeMap::new();
    let mut worst = (0.0f64, String::new());
    // Sparser bins are reported but do not gate.
    let mut sparse: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for m in d.built.iter() {
        for (&state, row) in &m.rows {
            if row.coverage < 1_000 {
                continue;
            }
            let want = truth.row(m.situation, state);
            let h = if m.situation.is_lane_change() {
                // Only the lane-change entry of a context row is defined by
                // the truth; the rest depends on the longitudinal situation.
                let k = if m.grid.centers(state)[0] < 0.5 { LC_LEFT } else { LC_RIGHT };
                bernoulli_h(row.pmf[k], want[k])
            } else {
                hellinger(&row.pmf, &want).unwrap()
            };
            if row.coverage < 10_000 {
                let e = sparse.entry(m.situation.name()).or_default();
                e.0 += 1;
                e.1 = e.1.max(h);
                continue;
            }
            *checked.entry(m.situation.name()).or_insert(0usize) += 1;
            if h > worst.0 {
                worst = (h, format!("{} state {state} ({} samples)", m.situation.name(), row.coverage));
            }
        }
    }
    let n: usize = checked.values().sum();
    let msg = format!(
        "{:.0} h ({} rows, {:.0} s), {n} bins with >= 1e4 samples {checked:?}, worst H = {:.4} at {}; \
         bins with 1e3..1e4 samples (count, worst H): {sparse:.4?}",
        d.hours, d.report.rows, d.secs, worst.0, worst.1
    );
    ensure(n > 0 && worst.0 <= 0.05 && d.secs <= 300.0, msg)
}

/// Speed-bin histogram of a single vehicle driven by the free-driving model
/// at a 1 s step. Accelerations are multiples of 0.2 m/s², so the speed stays
/// on bin centers and the walk is the assembled chain itself.
fn rollout(model: &BehaviorModel, steps: usize, start: usize, seed: u64) -> Vec<f64> {
    let n = model.grid.n_states() as usize;
    let cdf: Vec<[f64; N_ACTIONS]> = (0..n)
        .map(|s| {
            let mut c = [0.0; N_ACTIONS];
            let mut acc = 0.0;
            for (k, p) in model.rows[&(s as u64)].pmf.iter().enumerate() {
                acc += p;
                c[k] = acc;
            }
            c
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; n];
    let mut s = start;
    for _ in 0..steps {
        counts[s] += 1;
        let u: f64 = rng.random::<f64>() * cdf[s][N_ACTIONS - 1];
        let k = cdf[s].iter().position(|c| u < *c).unwrap_or(N_ACTIONS - 1);
        if (1..=N_ACCEL).contains(&k) {
            let next = s as i64 + (k as i64 - 21);
            s = next.clamp(0, n as i64 - 1) as usize;
        }
    }
    counts.iter().map(|c| *c as f64 / steps as f64).collect()
}

fn error_accumulation(d: &Data) -> Result<String, String> {
    let t = Instant::now();
    let mut f_star = d.built.get(Situation::FreeDriving).clone();
    let grid = f_star.grid.clone();
    let idm = d.cfg.sim.idm;
    fill_uncovered(&mut f_star, |s| stochastic_idm_pmf(idm_free(grid.centers(s)[0], &idm), d.cfg.sim.fallback_sigma));
    let n = grid.n_states() as usize;
    let pi_star = free_driving_target(&d.summary.ff_visits, n, d.cfg.models.ff_target_floor);
    let stationary_h = |m: &BehaviorModel| {
        let p = assemble_free_driving(m, 1.0).unwrap();
        hellinger(&stationary(&p, 1e-13, 1_000_000).pi, &pi_star).unwrap()
    };
    // Bias: every row brakes one or more action steps harder.
    let h_data = stationary_h(&f_star);
    // Bias: move every row's acceleration mass by whole action steps, in the
    // direction that pulls the chain further from the target.
    let shifted = |steps: i64| {
        let mut m = f_star.clone();
        for row in m.rows.values_mut() {
            let old = row.pmf;
            for k in 1..=N_ACCEL {
                row.pmf[k] = 0.0;
            }
            for k in 1..=N_ACCEL {
                row.pmf[(k as i64 + steps).clamp(1, N_ACCEL as i64) as usize] += old[k];
            }
        }
        m
    };
    let (mut shift, mut biased, mut h0) = (0i64, f_star.clone(), 0.0);
    for step in 1..=5i64 {
        let (up, down) = (shifted(step), shifted(-step));
        let (hu, hd) = (stationary_h(&up), stationary_h(&down));
        (shift, biased, h0) = if hu >= hd { (step, up, hu) } else { (-step, down, hd) };
        if h0 >= f64::max(0.10, h_data) {
            break;
        }
    }
    let problem = RefinementProblem {
        f_star: &biased,
        pi_star: &pi_star,
        support: None,
        options: d.cfg.refine_options(),
    };
    let (refined, report) = refine_free_driving(&problem).map_err(|e| e.to_string())?;
    let start = pi_star.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    let h_biased = hellinger(&rollout(&biased, 1_000_000, start, 3), &pi_star).unwrap();
    let h_refined = hellinger(&rollout(&refined, 1_000_000, start, 4), &pi_star).unwrap();
    let msg = format!(
        "empirical model H(stationary, pi*) = {h_data:.3}; biased by {shift:+} action step(s): {h0:.3}; refined residual {:.2e}; \
         rollout H: F* {h_biased:.4}, refined {h_refined:.4}",
        report.stationarity_residual
    );
    ensure(
        report.stationarity_residual <= 1e-6 && h_refined <= 0.05 && h_refined < h_biased && t.elapsed().as_secs() <= 600,
        msg,
    )
}

fn refinement_oracles() -> Result<String, String> {
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, toy) in [("free driving 3", common::ff_toy()), ("car following 2x2x3", common::cf_toy())] {
        let oracle = toy.oracle_l1().ok_or("grid search failed")?;
        let problem = RefinementProblem {
            f_star: &toy.model,
            pi_star: &toy.pi_star,
            support: Some(&toy.support),
            options: RefineOptions::default(),
        };
        let (_, report) = refine(&problem).map_err(|e| e.to_string())?;
        let gap = (report.objective - oracle).abs();
        ok &= gap <= 1e-4 && report.stationarity_residual <= 1e-6;
        lines.push(format!("{name}: LP {:.6} vs grid {:.6}", report.objective, oracle));
    }
    ensure(ok, lines.join("; "))
}

fn lp_validation() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let cases = 200;
    for case in 0..cases {
        let (c, a, b) = common::random_feasible(&mut rng);
        let lp = LinearProgram::new(c.clone(), &dense(&a), b.clone()).unwrap();
        let sol = solve(&lp, 10_000).map_err(|e| e.to_string())?;
        let oracle = common::vertex_enumeration(&c, &a, &b).ok_or("oracle found no vertex")?;
        if sol.status != LpStatus::Optimal {
            return Err(format!("case {case}: {:?}", sol.status));
        }
        worst = worst.max((sol.objective - oracle).abs());
    }
    let mut infeasible = 0;
    for _ in 0..50 {
        let (c, a, b, _) = common::farkas_infeasible(&mut rng);
        let lp = LinearProgram::new(c, &dense(&a), b).unwrap();
        if solve(&lp, 10_000).map_err(|e| e.to_string())?.status == LpStatus::Infeasible {
            infeasible += 1;
        }
    }
    ensure(
        worst <= 1e-7 && infeasible == 50,
        format!("{cases} random LPs, worst gap {worst:.2e}; {infeasible}/50 infeasible detected"),
    )
}

fn stationary_correctness() -> Result<String, String> {
    let two = stationary(&matrix(&[vec![0.9, 0.1], vec![0.5, 0.5]]), 1e-15, 100_000);
    let e2 = (two.pi[0] - 5.0 / 6.0).abs().max((two.pi[1] - 1.0 / 6.0).abs());
    let mut worst = 0.0f64;
    for (k, n) in [2usize, 7, 20, 60, 120, 200].into_iter().enumerate() {
        let p = common::random_chain(n, 900 + k as u64);
        let m = matrix(&p);
        let power = stationary(&m, 1e-14, 1_000_000);
        let direct = stationary_direct(&m).map_err(|e| e.to_string())?;
        let oracle = common::stationary_oracle(&p).ok_or("singular")?;
        for i in 0..n {
            worst = worst.max((power.pi[i] - direct[i]).abs()).max((power.pi[i] - oracle[i]).abs());
        }
    }
    ensure(
        e2 <= 1e-10 && worst <= 1e-8,
        format!("two-state error {e2:.1e}; chains up to 200 states, worst |power - direct| {worst:.1e}"),
    )
}

fn monte_carlo() -> Result<String, String> {
    let r = accident_rate_counts(276, 5_000_000, 0.9, CiMethod::Normal).map_err(|e| e.to_string())?;
    let mut cov = Vec::new();
    for method in [CiMethod::Normal, CiMethod::ClopperPearson] {
        cov.push(common::ci_coverage(0.01, 10_000, 1000, 77, |m, n| {
            let r = accident_rate_counts(m, n, 0.9, method).unwrap();
            (r.ci_low, r.ci_high)
        }));
    }
    ensure(
        r.estimate == 5.52e-5 && cov.iter().all(|c| *c >= 0.88),
        format!("276 / 5e6 = {:e}; coverage normal {:.3}, Clopper-Pearson {:.3}", r.estimate, cov[0], cov[1]),
    )
}

fn accident_reproduction(d: &Data) -> Result<String, String> {
    let t = Instant::now();
    let cfg = &d.cfg;
    let sampler = InitSampler::new(d.init.clone()).unwrap();
    let episodes = 0..10_000u64;
    let workers = 8;
    let nde = NdePolicy::new(d.refined.clone(), cfg.nde_settings());
    let a = run_episodes(&cfg.av_episode(), &sampler, &nde, Some(cfg.av_agent()), cfg.run.seed, episodes.clone(), workers)
        .map_err(|e| e.to_string())?;
    let idm = cfg.idm_policy();
    let b = run_episodes(&cfg.av_episode(), &sampler, &idm, Some(cfg.av_agent()), cfg.run.seed, episodes, workers)
        .map_err(|e| e.to_string())?;
    let ra = accident_rate(&a.iter().map(|e| e.accident).collect::<Vec<_>>(), 0.9, CiMethod::Normal).unwrap();
    let rb = accident_rate(&b.iter().map(|e| e.accident).collect::<Vec<_>>(), 0.9, CiMethod::Normal).unwrap();
    let secs = t.elapsed().as_secs_f64();
    ensure(
        ra.m > 0 && rb.m == 0 && secs <= 900.0,
        format!(
            "NDE: {} / {} accidents (rate {:.1e}, {:?}); IDM: {} / {}",
            ra.m,
            ra.n,
            ra.estimate,
            accident_types(&a),
            rb.m,
            rb.n
        ),
    )
}

/// Lane-change mass of side decisions by source, over NDE episodes.
fn lc_sources(policy: &NdePolicy, models: &ModelSet, cfg: &Config, init: &InitDistribution) -> (f64, f64, f64) {
    let sampler = InitSampler::new(init.clone()).unwrap();
    let (mut from_model, mut model_sides, mut fallback_mass) = (0.0, 0.0, 0.0);
    for ep in 0..3 {
        let mut rng = nde_core::sim::episode::episode_rng(cfg.run.seed, ep);
        let (mut w, _) = init_world(&cfg.world, &cfg.init, &sampler, &mut rng).unwrap();
        for t in 0..9000 {
            if t % 10 == 0 && t >= 6000 {
                for i in 0..w.vehicles.len() {
                    if w.vehicles[i].maneuver.is_some() || w.vehicles[i].crashed {
                        continue;
                    }
                    let view = w.view(i);
                    let mut out = [0.0; N_ACTIONS];
                    policy.compose(&view, &mut out);
                    for d in [Direction::Left, Direction::Right] {
                        let Some(ctx) = view.lc_context(d) else { continue };
                        let m = models.get(ctx.situation);
                        if context_state(&m.grid, &ctx).and_then(|s| m.covered_row(s)).is_some() {
                            from_model += out[d.lc_index()];
                            model_sides += 1.0;
                        } else {
                            fallback_mass += out[d.lc_index()];
                        }
                    }
                }
            }
            w.decide(policy, None, &mut rng);
            w.advance(CollisionMode::Freeze);
        }
    }
    (from_model, model_sides, fallback_mass)
}

fn lane_change_statistic(d: &Data) -> Result<String, String> {
    let cfg = &d.cfg;
    let truth = TruthModel::new(cfg.synthetic.truth.clone(), &cfg.grid, 1.0).unwrap();
    let sampler = InitSampler::new(d.init.clone()).unwrap();

    // Constant per-second probability on the ground-truth traffic.
    let rho = 0.005;
    let constant = ConstantLcPolicy {
        inner: truth.clone(),
        rate_per_s: rho,
    };
    let window = EpisodeConfig {
        mode: EpisodeMode::Nde {
            warmup_s: 0.0,
            collect_s: 300.0,
        },
        ..cfg.nde_episode()
    };
    let dt = cfg.world.dt;
    let (mut metres, mut lcs, mut active_s) = (0.0, 0u64, 0.0);
    let mut next = 0u64;
    while active_s / 3600.0 < 1000.0 {
        let eps = run_episodes::<nde_core::sim::IdmMobilAgent>(&window, &sampler, &constant, None, 17, next..next + 20, 1)
            .map_err(|e| e.to_string())?;
        next += 20;
        for e in &eps {
            metres += e.distance_driven;
            lcs += e.lane_changes;
            active_s += e.vehicle_steps as f64 * dt;
        }
    }
    let speed = metres / active_s;
    let analytic = speed / (1000.0 * rho);
    let simulated = metres / 1000.0 / lcs as f64;
    let rel = (simulated / analytic - 1.0).abs();

    // Default settings: ground-truth traffic and the NDE trained on it.
    let truth_eps = run_episodes::<nde_core::sim::IdmMobilAgent>(&cfg.nde_episode(), &sampler, &truth, None, 5, 0..10, 1)
        .map_err(|e| e.to_string())?;
    let truth_rate = lane_change_rate(&truth_eps).km_per_lane_change;
    let nde = NdePolicy::new(d.refined.clone(), cfg.nde_settings());
    let nde_eps = run_episodes::<nde_core::sim::IdmMobilAgent>(&cfg.nde_episode(), &sampler, &nde, None, 5, 0..10, 1)
        .map_err(|e| e.to_string())?;
    let nde_rate = lane_change_rate(&nde_eps).km_per_lane_change;
    let band = 1.0..=20.0;
    let (model_mass, model_sides, fallback_mass) = lc_sources(&nde, &d.refined, cfg, &d.init);
    let msg = format!(
        "rho = {rho}/s over {:.0} vehicle-hours: {simulated:.3} km/LC vs analytic {analytic:.3} ({:.1}% off); \
         default settings: synthetic data {truth_rate:.2} km/LC, NDE {nde_rate:.2} km/LC \
         (MOBIL fallback carries {:.1}% of the NDE lane-change mass; covered contexts average {:.4} per decision)",
        active_s / 3600.0,
        100.0 * rel,
        100.0 * fallback_mass / (fallback_mass + model_mass),
        model_mass / model_sides.max(1.0),
    );
    ensure(rel <= 0.10 && band.contains(&truth_rate) && band.contains(&nde_rate), msg)
}

fn performance(d: &Data) -> Result<String, String> {
    let cfg = &d.cfg;
    let sampler = InitSampler::new(d.init.clone()).unwrap();
    let nde = NdePolicy::new(d.refined.clone(), cfg.nde_settings());
    let (mut steps, mut secs, mut vehicles) = (0u64, 0.0, 0);
    for ep in 0..3 {
        let t = Instant::now();
        let r = run_episode(&cfg.nde_episode(), &sampler, &nde, None, 9, ep).map_err(|e| e.to_string())?;
        secs += t.elapsed().as_secs_f64();
        steps += r.vehicle_steps;
        vehicles = r.vehicles;
    }
    let rate = steps as f64 / secs;
    ensure(
        rate >= 1e5,
        format!("{rate:.3e} vehicle-steps/s single-threaded ({vehicles} vehicles, {steps} steps)"),
    )
}

fn nde(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_nde"))
        .args(args)
        .env_remove("NDE_CONFIG")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let tiny = tmp.path().join("tiny.toml");
    std::fs::write(
        &tiny,
        "[grid]\nspeed_resolution = 5.0\nrange_resolution = 23.0\nrange_rate_min = -2.0\nrange_rate_max = 2.0\nrange_rate_resolution = 2.0\n",
    )
    .unwrap();
    let tiny = tiny.to_str().unwrap().to_string();
    let runs: Vec<(&str, Vec<String>)> = vec![
        ("gen-data", vec!["--seed", "3", "gen-data", "--hours", "0.05", "-o", "{}/t.csv"]),
        ("build-models", vec!["build-models", "-i", "{}/t.csv", "-o", "{}/m"]),
        ("build-models --synthetic-hours", vec!["--seed", "3", "build-models", "--synthetic-hours", "0.05", "-o", "{}/s"]),
        ("refine", vec!["refine", "-m", "{}/m", "-o", "{}/r"]),
        ("build-models (coarse grid)", vec!["--config", &tiny, "build-models", "--synthetic-hours", "0.05", "-o", "{}/tm"]),
        (
            "refine car-following soft",
            vec!["--config", &tiny, "refine", "-m", "{}/tm", "-o", "{}/tr", "--situation", "car-following", "--constraint", "soft"],
        ),
        ("simulate nde", vec!["simulate", "-m", "{}/r", "--mode", "nde", "--episodes", "2", "--workers", "2", "-o", "{}/n"]),
        ("simulate av", vec!["simulate", "-m", "{}/r", "--mode", "av", "--episodes", "200", "--workers", "2", "-o", "{}/a"]),
        (
            "simulate idm",
            vec!["simulate", "--environment", "idm", "--mode", "av", "--episodes", "100", "--workers", "2", "-o", "{}/i"],
        ),
    ]
    .into_iter()
    .map(|(n, a)| (n, a.into_iter().map(String::from).collect()))
    .collect();
    // The same command lines twice into the same directory.
    let root = tmp.path().join("run");
    let mut trees = Vec::new();
    let mut stdout = [Vec::new(), Vec::new()];
    for out in stdout.iter_mut() {
        if root.exists() {
            std::fs::remove_dir_all(&root).unwrap();
        }
        std::fs::create_dir_all(&root).unwrap();
        for (_, args) in &runs {
            let args: Vec<String> = args.iter().map(|a| a.replace("{}", root.to_str().unwrap())).collect();
            let refs: Vec<&str> = args.iter().map(String::as_str).collect();
            out.push(nde(&refs)?);
        }
        trees.push(tree(&root));
    }
    let (a, b) = (&trees[0], &trees[1]);
    let differing: Vec<&String> = a.keys().filter(|k| b.get(*k) != a.get(*k)).collect();
    let commands: Vec<&str> = runs.iter().map(|r| r.0).collect();
    ensure(
        a.len() == b.len() && differing.is_empty() && stdout[0] == stdout[1],
        format!(
            "{} files identical across two runs of [{}]; differing: {differing:?}",
            a.len() - differing.len(),
            commands.join(", ")
        ),
    )
}

fn main() {
    let mut suite = Suite { passed: 0, failed: 0 };
    suite.run(3, "refinement matches grid search on toy problems", refinement_oracles);
    suite.run(4, "revised simplex matches vertex enumeration", lp_validation);
    suite.run(5, "stationary distributions", stationary_correctness);
    suite.run(6, "Monte Carlo estimator and interval coverage", monte_carlo);
    suite.run(10, "byte-reproducible subcommands", determinism);

    let t = Instant::now();
    let data = catch_unwind(prepare);
    println!("# synthetic data and models prepared in {:.0} s", t.elapsed().as_secs_f64());
    match &data {
        Ok(d) => {
            suite.run(1, "closed-loop model recovery", || model_recovery(d));
            suite.run(2, "refinement removes error accumulation", || error_accumulation(d));
            suite.run(7, "NDE accidents versus IDM environment", || accident_reproduction(d));
            suite.run(8, "lane-change statistic", || lane_change_statistic(d));
            suite.run(9, "NDE stepping throughput", || performance(d));
        }
        Err(_) => {
            for (id, name) in [
                (1, "closed-loop model recovery"),
                (2, "refinement removes error accumulation"),
                (7, "NDE accidents versus IDM environment"),
                (8, "lane-change statistic"),
                (9, "NDE stepping throughput"),
            ] {
                suite.run(id, name, || Err("data preparation failed".into()));
            }
        }
    }
    println!("acceptance: {} passed, {} failed", suite.passed, suite.failed);
    // Red criteria are reported, not fatal, unless asked for.
    if suite.failed > 0 && std::env::var_os("NDE_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
