use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde_json::{json, Value};

use nde_core::config::{Config, Environment};
use nde_core::empirical::{build_models, fill_uncovered};
use nde_core::metrics::{accident_rate, accident_types, collect_histograms, hellinger_hist, lane_change_rate};
use nde_core::ndd::pipeline::{car_following_target, free_driving_target, read_visits, write_visits, DataSummary};
use nde_core::ndd::record::{read_metadata, RecordReader, RecordWriter};
use nde_core::ndd::synthetic::generate_synthetic_ndd;
use nde_core::refine::{refine_car_following, refine_free_driving, RefinementProblem};
use nde_core::sim::episode::{run_episodes, EpisodeResult};
use nde_core::sim::idm::{idm_accel, idm_free, stochastic_idm_pmf};
use nde_core::sim::init::{InitDistribution, InitSampler};
use nde_core::sim::policy::{IdmMobilAgent, NdePolicy, Policy};
use nde_core::{Error, ModelSet, Situation};

use crate::output::{copy_into, create, read_histogram, write_histogram, write_json, Meta};
use crate::{BuildModels, Cli, Command, GenData, Mode, Refine, RefineSituation, Simulate};

/// Bad combinations of otherwise valid arguments.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<Error>() {
        Some(Error::Infeasible { .. }) => 3,
        _ => 1,
    }
}

struct Ctx {
    cfg: Config,
    hash: String,
    seed: u64,
}

impl Ctx {
    fn meta(&self, command: &'static str) -> Meta {
        Meta {
            command,
            config_hash: self.hash.clone(),
            seed: self.seed,
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => Config::default(),
    };
    let hash = cfg.hash()?;
    let mut ctx = Ctx {
        seed: cli.seed.unwrap_or(cfg.run.seed),
        cfg,
        hash,
    };
    match cli.command {
        Command::GenData(a) => gen_data(&ctx, a),
        Command::BuildModels(a) => {
            if cli.seed.is_none() {
                if let Some(s) = a.input.as_deref().and_then(input_seed) {
                    ctx.seed = s;
                }
            }
            build(&ctx, a)
        }
        Command::Refine(a) => refine_cmd(&mut ctx, a),
        Command::Simulate(a) => simulate(&mut ctx, a),
    }
}

fn input_seed(path: &Path) -> Option<u64> {
    let f = File::open(path).ok()?;
    read_metadata(BufReader::new(f)).ok()??.get("seed")?.as_u64()
}

fn gen_data(ctx: &Ctx, a: GenData) -> Result<()> {
    let c = &ctx.cfg;
    let sampler = InitSampler::new(InitDistribution::synthetic())?;
    let meta = ctx.meta("gen-data").with(json!({ "hours": a.hours }));
    let mut w = RecordWriter::new(create(&a.out)?, Some(&meta))?;
    let report = generate_synthetic_ndd(&c.world, &c.init, &sampler, &c.synthetic, &c.grid, a.hours, ctx.seed, |batch| {
        batch.iter().try_for_each(|r| w.write(r))
    })
    .with_context(|| format!("writing {}", a.out.display()))?;
    w.finish()?.flush().with_context(|| format!("writing {}", a.out.display()))?;
    let summary = json!({
        "output": a.out,
        "rows": report.rows,
        "steps": report.steps,
        "chunk_vehicles": report.vehicles,
        "chunk_steps": report.chunk_steps,
        "lane_changes": report.lane_changes,
        "overlaps": report.overlaps,
        "config_hash": ctx.hash,
        "seed": ctx.seed,
    });
    emit(&summary);
    Ok(())
}

fn has_data_rows(path: &Path) -> Result<bool> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines = BufReader::new(f).lines();
    let mut seen_header = false;
    while let Some(line) = lines.next().transpose().with_context(|| format!("reading {}", path.display()))? {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if seen_header {
            return Ok(true);
        }
        seen_header = true;
    }
    Ok(false)
}

const VISIT_FILES: [(Situation, &str); 2] = [
    (Situation::FreeDriving, "free_driving_visits.csv"),
    (Situation::CarFollowing, "car_following_visits.csv"),
];

fn build(ctx: &Ctx, a: BuildModels) -> Result<()> {
    let c = &ctx.cfg;
    let mut summary = DataSummary::new(&c.grid, c.ndd)?;
    let source: Value = match (&a.input, a.synthetic_hours) {
        (Some(input), _) => {
            if !has_data_rows(input)? {
                bail!("no segments: {} holds no trajectory records", input.display());
            }
            let f = File::open(input).with_context(|| format!("opening {}", input.display()))?;
            let reader = RecordReader::new(BufReader::new(f)).with_context(|| format!("reading {}", input.display()))?;
            summary
                .process_stream(reader, 200_000)
                .with_context(|| format!("reading {}", input.display()))?;
            json!(input)
        }
        (None, Some(hours)) => {
            let sampler = InitSampler::new(InitDistribution::synthetic())?;
            generate_synthetic_ndd(&c.world, &c.init, &sampler, &c.synthetic, &c.grid, hours, ctx.seed, |batch| {
                summary.process(batch)
            })?;
            json!({ "synthetic_hours": hours })
        }
        (None, None) => return Err(UsageError("give --input or --synthetic-hours".into()).into()),
    };
    if summary.stats.segments == 0 {
        bail!("no segments: every track in {source} was discarded");
    }
    let (mut models, report) = build_models(summary.counts.clone(), &c.grid, c.models.smoothing_window, c.models.min_samples)?;
    let meta = ctx.meta("build-models");
    for s in Situation::ALL {
        let m = models.get_mut(s);
        m.provenance.insert("config_hash".into(), ctx.hash.clone().into());
        m.provenance.insert("seed".into(), ctx.seed.into());
    }
    models.save_dir(&a.out)?;

    let mut per = serde_json::Map::new();
    for m in models.iter() {
        per.insert(
            m.situation.name().into(),
            json!({
                "states": m.grid.n_states(),
                "rows": m.rows.len(),
                "covered": m.covered_count(),
                "samples": summary.counts.total(m.situation),
                "min_samples": m.min_samples,
            }),
        );
    }
    let coverage = meta.with(json!({
        "input": source,
        "models": per,
        "pipeline": summary.stats,
        "crash_states_flagged": report.crash_states_flagged,
        "crash_samples_dropped": report.crash_samples_dropped,
    }));
    write_json(&a.out.join("coverage.json"), &coverage)?;

    for (s, name) in VISIT_FILES {
        let visits = match s {
            Situation::FreeDriving => &summary.ff_visits,
            _ => &summary.cf_visits,
        };
        let path = a.out.join("targets").join(name);
        let mut w = create(&path)?;
        write_visits(&mut w, visits, &meta.with(json!({ "situation": s.name() })))?;
        w.flush()?;
    }
    let hist = a.out.join("histograms");
    write_histogram(&hist.join("velocity.csv"), &summary.velocity, &meta.with(json!({ "source": "data" })))?;
    write_histogram(&hist.join("range.csv"), &summary.range, &meta.with(json!({ "source": "data" })))?;
    let init = summary.init_distribution()?;
    write_json(&a.out.join("init.json"), &meta.with(json!({ "init": init })))?;
    emit(&coverage);
    Ok(())
}

/// Fallback rows for states without enough data.
fn fill_with_fallback(ctx: &Ctx, models: &mut ModelSet, s: Situation) -> usize {
    let sim = ctx.cfg.sim;
    let m = models.get_mut(s);
    let grid = m.grid.clone();
    fill_uncovered(m, |st| {
        let c = grid.centers(st);
        let mean = match s {
            Situation::FreeDriving => idm_free(c[0], &sim.idm),
            _ => idm_accel(c[0], Some((c[1], c[2])), &sim.idm),
        };
        stochastic_idm_pmf(mean, sim.fallback_sigma)
    })
}

fn read_visit_table(path: &Path) -> Result<BTreeMap<u64, u64>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_visits(f).with_context(|| format!("reading {}", path.display()))
}

fn refine_cmd(ctx: &mut Ctx, a: Refine) -> Result<()> {
    if let Some(o) = a.objective {
        ctx.cfg.refine.objective = o.into();
    }
    if let Some(k) = a.constraint {
        ctx.cfg.refine.constraint = k.into();
    }
    if let Some(l) = a.lambda {
        ctx.cfg.refine.lambda = l;
    }
    ctx.cfg
        .validate()
        .map_err(|e| anyhow!(UsageError(e.to_string())))?;
    let situation = match a.situation {
        RefineSituation::FreeDriving => Situation::FreeDriving,
        RefineSituation::CarFollowing => Situation::CarFollowing,
    };
    let mut models = ModelSet::load_dir(&a.models).with_context(|| format!("loading models from {}", a.models.display()))?;
    let filled = fill_with_fallback(ctx, &mut models, situation);
    let targets = a.targets.clone().unwrap_or_else(|| a.models.join("targets"));
    let file = VISIT_FILES.iter().find(|(s, _)| *s == situation).unwrap().1;
    let visits = read_visit_table(&targets.join(file))?;
    let f_star = models.get(situation).clone();
    let pi_star = match situation {
        Situation::FreeDriving => free_driving_target(&visits, f_star.grid.n_states() as usize, ctx.cfg.models.ff_target_floor),
        _ => car_following_target(&visits, &f_star.grid),
    };
    let problem = RefinementProblem {
        f_star: &f_star,
        pi_star: &pi_star,
        support: None,
        options: ctx.cfg.refine_options(),
    };
    let meta = ctx.meta("refine");
    let result = match situation {
        Situation::FreeDriving => refine_free_driving(&problem),
        _ => refine_car_following(&problem),
    };
    let report_path = a.out.join("refine_report.json");
    let (mut refined, report) = match result {
        Ok(r) => r,
        Err(e @ Error::Infeasible { .. }) => {
            let Error::Infeasible { residual } = e else { unreachable!() };
            write_json(
                &report_path,
                &meta.with(json!({
                    "status": "infeasible",
                    "situation": situation.name(),
                    "phase_one_residual": residual,
                    "advice": "rerun with --constraint soft",
                })),
            )?;
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    refined.provenance.insert("config_hash".into(), ctx.hash.clone().into());
    refined.provenance.insert("seed".into(), ctx.seed.into());
    refined.provenance.insert("fallback_rows".into(), filled.into());
    *models.get_mut(situation) = refined;
    models.save_dir(&a.out)?;
    for extra in ["init.json", "coverage.json", "histograms/velocity.csv", "histograms/range.csv"] {
        let src = a.models.join(extra);
        if src.exists() {
            copy_into(&src, &a.out.join(extra))?;
        }
    }
    for (_, name) in VISIT_FILES {
        let src = targets.join(name);
        if src.exists() {
            copy_into(&src, &a.out.join("targets").join(name))?;
        }
    }
    let out = meta.with(json!({
        "status": "optimal",
        "fallback_rows": filled,
        "report": report,
    }));
    write_json(&report_path, &out)?;
    emit(&out);
    Ok(())
}

fn load_init(path: &Path) -> Result<InitDistribution> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let v: Value = serde_json::from_reader(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
    let init = v.get("init").cloned().unwrap_or(v);
    serde_json::from_value(init).with_context(|| format!("reading {}", path.display()))
}

fn simulate(ctx: &mut Ctx, a: Simulate) -> Result<()> {
    if let Some(e) = a.environment {
        ctx.cfg.sim.environment = e.into();
    }
    let workers = a.workers.map_or(ctx.cfg.run.workers, |w| w as usize);
    let env = ctx.cfg.sim.environment;
    let models_dir = a.models.clone();
    let policy: Box<dyn Policy> = match env {
        Environment::Nde => {
            let dir = models_dir
                .as_ref()
                .ok_or_else(|| UsageError("--models is required for the data-driven environment".into()))?;
            let models = ModelSet::load_dir(dir).with_context(|| format!("loading models from {}", dir.display()))?;
            Box::new(NdePolicy::new(models, ctx.cfg.nde_settings()))
        }
        Environment::Idm => Box::new(ctx.cfg.idm_policy()),
    };
    let init_path: Option<PathBuf> = a
        .init
        .clone()
        .or_else(|| models_dir.as_ref().map(|d| d.join("init.json")).filter(|p| p.exists()));
    let init = match &init_path {
        Some(p) => load_init(p)?,
        None => InitDistribution::synthetic(),
    };
    let sampler = InitSampler::new(init)?;
    let meta = ctx.meta("simulate").with(json!({
        "mode": match a.mode { Mode::Nde => "nde", Mode::Av => "av" },
        "environment": env,
        "episodes": a.episodes,
        "workers": workers,
        "init": init_path,
        "models": models_dir,
    }));
    match a.mode {
        Mode::Nde => {
            let cfg = ctx.cfg.nde_episode();
            let eps = run_episodes(&cfg, &sampler, policy.as_ref(), None::<IdmMobilAgent>, ctx.seed, 0..a.episodes, workers)?;
            simulate_nde(&meta, &a, &eps)
        }
        Mode::Av => {
            let cfg = ctx.cfg.av_episode();
            let agent = ctx.cfg.av_agent();
            let eps = run_episodes(&cfg, &sampler, policy.as_ref(), Some(agent), ctx.seed, 0..a.episodes, workers)?;
            simulate_av(ctx, &meta, &a, &eps)
        }
    }
}

fn simulate_nde(meta: &Value, a: &Simulate, eps: &[EpisodeResult]) -> Result<()> {
    let pooled = collect_histograms(eps)?;
    let with = |source: &str| {
        let mut m = meta.clone();
        m["source"] = source.into();
        m
    };
    write_histogram(&a.out.join("velocity.csv"), &pooled.velocity, &with("simulation"))?;
    write_histogram(&a.out.join("range.csv"), &pooled.range, &with("simulation"))?;
    let reference = a
        .reference
        .clone()
        .or_else(|| a.models.as_ref().map(|d| d.join("histograms")))
        .filter(|d| d.join("velocity.csv").exists() && d.join("range.csv").exists());
    let hellinger = match &reference {
        Some(dir) => {
            let v = read_histogram(&dir.join("velocity.csv"))?;
            let r = read_histogram(&dir.join("range.csv"))?;
            json!({
                "reference": dir,
                "velocity": hellinger_hist(&pooled.velocity, &v)?,
                "range": hellinger_hist(&pooled.range, &r)?,
            })
        }
        None => Value::Null,
    };
    let mut out = meta.clone();
    let o = out.as_object_mut().unwrap();
    o.insert("hellinger".into(), hellinger);
    o.insert("lane_change_rate".into(), serde_json::to_value(lane_change_rate(eps))?);
    o.insert(
        "background_collisions".into(),
        eps.iter().map(|e| e.background_collisions).sum::<u64>().into(),
    );
    o.insert("vehicle_steps".into(), eps.iter().map(|e| e.vehicle_steps).sum::<u64>().into());
    o.insert("velocity_samples".into(), pooled.velocity.total().into());
    o.insert("range_samples".into(), pooled.range.total().into());
    write_json(&a.out.join("metrics.json"), &out)?;
    emit(&out);
    Ok(())
}

fn simulate_av(ctx: &Ctx, meta: &Value, a: &Simulate, eps: &[EpisodeResult]) -> Result<()> {
    let path = a.out.join("outcomes.csv");
    let mut w = create(&path)?;
    writeln!(w, "# {meta}")?;
    let mut csv = csv_writer(&mut w);
    csv.write_record(["episode", "accident", "accident_type", "distance_m"])?;
    for e in eps {
        let kind = e
            .accident_type
            .map(|k| serde_json::to_value(k).unwrap().as_str().unwrap_or_default().to_string())
            .unwrap_or_default();
        csv.write_record([
            e.episode.to_string(),
            u8::from(e.accident).to_string(),
            kind,
            e.distance_driven.to_string(),
        ])?;
    }
    csv.flush()?;
    drop(csv);
    w.flush()?;
    let outcomes: Vec<bool> = eps.iter().map(|e| e.accident).collect();
    let rate = accident_rate(&outcomes, ctx.cfg.metrics.confidence, ctx.cfg.metrics.ci_method)?;
    let mut out = meta.clone();
    let o = out.as_object_mut().unwrap();
    o.insert("accident_rate".into(), serde_json::to_value(rate)?);
    o.insert("accident_types".into(), serde_json::to_value(accident_types(eps))?);
    o.insert("distance_m".into(), eps.iter().map(|e| e.distance_driven).sum::<f64>().into());
    o.insert(
        "background_collisions".into(),
        eps.iter().map(|e| e.background_collisions).sum::<u64>().into(),
    );
    write_json(&a.out.join("metrics.json"), &out)?;
    emit(&out);
    Ok(())
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::Writer::from_writer(w)
}

/// Prints a summary to stdout; a closed pipe is not an error.
fn emit(v: &Value) {
    let mut out = std::io::stdout().lock();
    let _ = serde_json::to_writer_pretty(&mut out, v).and_then(|_| writeln!(out).map_err(serde_json::Error::io));
}
