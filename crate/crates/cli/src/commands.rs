use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use cmc_core::cmc::{threshold_bytes_for_delay, Direction};
use cmc_core::criteria::{evaluate_conditions, improvement_region_fraction, RegionMode};
use cmc_core::dist::HistogramLaw;
use cmc_core::propagate::{propagate_path_with, PathModel, Propagation};
use cmc_core::sim::{apply_filter, measure_rms, run_scenario, FilterKind, SimOutput};
use cmc_core::tune::{evaluate, sweep_r, Evaluation, Marking};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::config::{self, Config};
use crate::error::{CliError, CliResult};
use crate::inputs::{self, wait_file_name, AnalysisArgs, InputArgs, Loaded, Plan, IDLE_THRESHOLD_NS};
use crate::output::{Manifest, OutDir};

fn manifest(command: &str, config: Option<(&Path, &Config)>, source: Option<&str>, seeds: Vec<u64>, started: Instant, files: &[String]) -> Manifest {
    Manifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.map(|(p, _)| p.display().to_string()),
        config_echo: config.map(|(_, c)| c.echo()),
        source: source.map(str::to_string),
        seeds,
        threads: rayon::current_num_threads(),
        wall_clock_s: started.elapsed().as_secs_f64(),
        files: files.to_vec(),
    }
}

fn finish(mut out: OutDir, m: Manifest) -> CliResult<()> {
    out.write_json("manifest.json", &m)?;
    log::info!("wrote {} files to {}", out.files().len(), out.root().display());
    Ok(())
}

fn parse_filter(s: &str) -> Result<FilterKind, String> {
    match s.replace('-', "_").as_str() {
        "min_rtt" => Ok(FilterKind::MinRtt),
        "median_rtt" => Ok(FilterKind::MedianRtt),
        "moving_average" => Ok(FilterKind::MovingAverage),
        _ => Err(format!("unknown filter `{s}` (min-rtt, median-rtt, moving-average)")),
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replications: Option<u32>,
    #[arg(long)]
    pub duration_ns: Option<u64>,
    /// Also report the error after an offset filter.
    #[arg(long, value_parser = parse_filter)]
    pub filter: Option<FilterKind>,
    /// Filter window, in rounds.
    #[arg(long, default_value_t = 8)]
    pub window: usize,
}

#[derive(Serialize)]
struct QueueRow<'a> {
    hop: usize,
    direction: &'a str,
    arrivals: u64,
    cross_arrivals: u64,
    rho_obs: f64,
    mean_wait_ns: f64,
    drops: u64,
}

#[derive(Serialize)]
struct FilterSummary {
    kind: FilterKind,
    window: usize,
    rms_raw_ns: Option<f64>,
    rms_comp_ns: Option<f64>,
}

#[derive(Serialize)]
struct RepSummary {
    seed: u64,
    rounds: usize,
    lost_rounds: u64,
    rms_raw_ns: Option<f64>,
    rms_comp_ns: Option<f64>,
    filter: Option<FilterSummary>,
}

#[derive(Serialize)]
struct SimSummary<'a> {
    command: &'a str,
    hops: usize,
    levels: u32,
    capacity: u64,
    delta_star_ns: f64,
    threshold_bytes: u64,
    rounds: usize,
    rms_raw_ns: Option<f64>,
    rms_comp_ns: Option<f64>,
    replications: Vec<RepSummary>,
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let started = Instant::now();
    let mut cfg = config::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.scenario.seed = s;
    }
    if let Some(r) = args.replications {
        cfg.scenario.replications = r;
    }
    if let Some(d) = args.duration_ns {
        cfg.scenario.duration_ns = d;
    }
    let spec = cfg.scenario_spec()?;
    let runs: Vec<SimOutput> = (0..spec.replications)
        .into_par_iter()
        .map(|k| {
            let mut one = spec.clone();
            one.seed = spec.replication_seed(k);
            one.replications = 1;
            run_scenario(&one).map(|mut v| v.remove(0))
        })
        .collect::<Result<_, _>>()?;

    let mut out = OutDir::create(&args.out)?;
    let mut reps = Vec::with_capacity(runs.len());
    for (k, run) in runs.iter().enumerate() {
        let prefix = if runs.len() == 1 { String::new() } else { format!("rep_{k}/") };
        write_run(&mut out, &prefix, run, spec.hops.len())?;
        let filter = match args.filter {
            Some(kind) => Some(FilterSummary {
                kind,
                window: args.window,
                rms_raw_ns: measure_rms(&apply_filter(kind, args.window, &run.rounds, false)?).ok(),
                rms_comp_ns: measure_rms(&apply_filter(kind, args.window, &run.rounds, true)?).ok(),
            }),
            None => None,
        };
        let rep = RepSummary {
            seed: run.seed,
            rounds: run.rounds.len(),
            lost_rounds: run.lost_rounds,
            rms_raw_ns: measure_rms(&run.eps_raw()).ok(),
            rms_comp_ns: measure_rms(&run.eps_comp()).ok(),
            filter,
        };
        if runs.len() > 1 {
            out.write_json(&format!("{prefix}summary.json"), &rep)?;
        }
        reps.push(rep);
    }
    let pooled = |f: fn(&SimOutput) -> Vec<f64>| measure_rms(&runs.iter().flat_map(f).collect::<Vec<_>>()).ok();
    let summary = SimSummary {
        command: "simulate",
        hops: spec.hops.len(),
        levels: spec.marking.levels,
        capacity: spec.marking.capacity(Direction::Forward)?,
        delta_star_ns: spec.marking.delta_star_ns(),
        threshold_bytes: spec.marking.threshold_bytes,
        rounds: runs.iter().map(|r| r.rounds.len()).sum(),
        rms_raw_ns: pooled(SimOutput::eps_raw),
        rms_comp_ns: pooled(SimOutput::eps_comp),
        replications: reps,
    };
    out.write_json("summary.json", &summary)?;
    if let (Some(raw), Some(comp)) = (summary.rms_raw_ns, summary.rms_comp_ns) {
        println!("{} rounds: rms error {raw:.1} ns raw, {comp:.1} ns corrected", summary.rounds);
    }
    let seeds = runs.iter().map(|r| r.seed).collect();
    let m = manifest("simulate", Some((&args.config, &cfg)), None, seeds, started, out.files());
    finish(out, m)
}

fn write_run(out: &mut OutDir, prefix: &str, run: &SimOutput, hops: usize) -> CliResult<()> {
    let mut rounds = out.csv(&format!("{prefix}rounds.csv"))?;
    let mut header: Vec<String> = ["round", "t1", "t2", "t3", "t4", "n_fwd", "n_rev", "eps_raw", "eps_comp"]
        .map(String::from)
        .to_vec();
    header.extend((0..hops).map(|h| format!("wait_fwd_hop{h}")));
    header.extend((0..hops).map(|h| format!("wait_rev_hop{h}")));
    rounds.header(&header)?;
    for r in &run.rounds {
        let s = &r.sync;
        let mut rec = vec![
            r.index.to_string(),
            s.t1.to_string(),
            s.t2.to_string(),
            s.t3.to_string(),
            s.t4.to_string(),
            s.fwd_counter.0.to_string(),
            s.rev_counter.0.to_string(),
            r.eps_raw_ns.to_string(),
            r.eps_comp_ns.to_string(),
        ];
        rec.extend(r.fwd_waits_ns.iter().chain(&r.rev_waits_ns).map(i64::to_string));
        rounds.record(&rec)?;
    }
    rounds.finish()?;

    out.write_rows(
        &format!("{prefix}queue_stats.csv"),
        run.queue_stats.iter().map(|q| QueueRow {
            hop: q.hop,
            direction: q.direction.as_str(),
            arrivals: q.arrivals,
            cross_arrivals: q.cross_arrivals,
            rho_obs: q.utilization,
            mean_wait_ns: q.mean_wait_ns,
            drops: q.drops,
        }),
    )?;

    for w in &run.waits {
        let mut f = out.csv(&format!("{prefix}{}", wait_file_name(w.hop, w.direction)))?;
        f.header(["queuing_delay_ns"])?;
        for x in &w.samples {
            f.record([x.to_string()])?;
        }
        f.finish()?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct SweepRow {
    #[serde(rename = "R")]
    levels: u32,
    delta_star_ns: f64,
    mse_ns2: f64,
    improvement: Option<f64>,
}

impl From<&Evaluation> for SweepRow {
    fn from(e: &Evaluation) -> Self {
        SweepRow {
            levels: e.levels,
            delta_star_ns: e.delta_star_ns,
            mse_ns2: e.mse_comp,
            improvement: e.improvement,
        }
    }
}

#[derive(Serialize)]
struct ConditionRow {
    scenario: String,
    link: usize,
    levels: u32,
    delta_star_ns: f64,
    c1_holds: bool,
    c1_fwd: bool,
    c1_rev: bool,
    c2_holds: bool,
    c3_holds: bool,
    a1_regime: bool,
    ir_lower_bound_ns: f64,
    c3_upper_bound_ns: f64,
    ir_fraction: f64,
    ir_fraction_actual: f64,
}

fn condition_rows(loaded: &Loaded, scenario: &str, points: &[(u32, f64)]) -> CliResult<Vec<ConditionRow>> {
    let mut rows = Vec::new();
    for link in 0..loaded.hops() {
        let (f, r) = loaded.link(link);
        for &(levels, delta) in points {
            let c = evaluate_conditions(f, r, delta, levels)?;
            let actual = improvement_region_fraction(f, levels, RegionMode::Actual)?
                .min(improvement_region_fraction(r, levels, RegionMode::Actual)?);
            rows.push(ConditionRow {
                scenario: scenario.to_string(),
                link,
                levels,
                delta_star_ns: delta,
                c1_holds: c.c1_holds,
                c1_fwd: c.c1_fwd,
                c1_rev: c.c1_rev,
                c2_holds: c.c2_holds,
                c3_holds: c.c3_holds,
                a1_regime: c.a1_regime,
                ir_lower_bound_ns: c.ir_lower_bound,
                c3_upper_bound_ns: c.c3_upper_bound,
                ir_fraction: c.ir_fraction,
                ir_fraction_actual: actual,
            });
        }
    }
    Ok(rows)
}

/// Best evaluation per level count: the fixed threshold if one was given,
/// otherwise the search optimum.
fn best_per_level(loaded: &Loaded, plan: &Plan) -> CliResult<Vec<Evaluation>> {
    match plan.delta_star_ns {
        Some(d) => plan
            .levels
            .iter()
            .map(|&r| {
                let marking = Marking {
                    levels: r,
                    capacity: plan.capacity,
                };
                Ok(evaluate(&loaded.paths, marking, d, &plan.opts)?)
            })
            .collect(),
        None => Ok(sweep_r(&loaded.paths, plan.capacity, &plan.levels, &plan.search, &plan.opts)?.best),
    }
}

fn overall_best(rows: &[Evaluation]) -> Evaluation {
    *rows
        .iter()
        .reduce(|b, e| if e.mse_comp < b.mse_comp { e } else { b })
        .expect("at least one level")
}

fn propagate(loaded: &Loaded, plan: &Plan, e: &Evaluation) -> CliResult<(Propagation, Propagation)> {
    let run = |hops: &[cmc_core::dist::DelayLaw]| -> CliResult<Propagation> {
        let path = PathModel::new(hops.to_vec(), e.delta_star_ns, e.levels, e.capacity)?;
        Ok(propagate_path_with(&path, &plan.opts)?)
    };
    Ok((run(&loaded.paths.fwd)?, run(&loaded.paths.rev)?))
}

fn write_law(out: &mut OutDir, name: &str, law: &HistogramLaw) -> CliResult<()> {
    let mut f = out.csv(name)?;
    f.header(["bin_start_ns", "mass"])?;
    for (x, m) in law.points() {
        f.record([x.to_string(), m.to_string()])?;
    }
    if law.overflow_mass() > 0.0 {
        let x = law.masses().len() as f64 * law.bin_width();
        f.record([x.to_string(), law.overflow_mass().to_string()])?;
    }
    f.finish()
}

fn write_counters(out: &mut OutDir, name: &str, dist: &[f64]) -> CliResult<()> {
    let mut f = out.csv(name)?;
    f.header(["n", "prob"])?;
    for (n, p) in dist.iter().enumerate() {
        f.record([n.to_string(), p.to_string()])?;
    }
    f.finish()
}

#[derive(Serialize)]
struct AnalyzeSummary<'a> {
    command: &'a str,
    source: &'a str,
    hops: usize,
    degenerate: bool,
    levels: u32,
    capacity: u64,
    delta_star_ns: f64,
    threshold_bytes: u64,
    mse_raw: f64,
    mse_comp: f64,
    /// Zero when there is nothing to correct; see `degenerate`.
    improvement: f64,
    mean_counter_fwd: f64,
    mean_counter_rev: f64,
    c1_holds: bool,
    per_level: Vec<Evaluation>,
}

pub fn analyze(args: &AnalyzeArgs) -> CliResult<()> {
    let started = Instant::now();
    let loaded = inputs::load(&args.input, args.analysis.pure_exponential)?;
    let plan = inputs::plan(&args.analysis, &loaded)?;
    let best = best_per_level(&loaded, &plan)?;
    let chosen = overall_best(&best);
    let (pf, pr) = propagate(&loaded, &plan, &chosen)?;

    let mut out = OutDir::create(&args.out)?;
    write_law(&mut out, "error_law_fwd.csv", &pf.error_law)?;
    write_law(&mut out, "error_law_rev.csv", &pr.error_law)?;
    write_counters(&mut out, "counter_dist_fwd.csv", &pf.counter_dist)?;
    write_counters(&mut out, "counter_dist_rev.csv", &pr.counter_dist)?;
    out.write_rows("sweep.csv", best.iter().map(SweepRow::from))?;
    let points: Vec<(u32, f64)> = best.iter().map(|e| (e.levels, e.delta_star_ns)).collect();
    let conditions = condition_rows(&loaded, &loaded.label(args.input.config.as_deref()), &points)?;
    let c1_holds = conditions
        .iter()
        .filter(|c| c.levels == chosen.levels)
        .all(|c| c.c1_holds);
    out.write_rows("conditions_report.csv", &conditions)?;

    let summary = AnalyzeSummary {
        command: "analyze",
        source: loaded.source.as_str(),
        hops: loaded.hops(),
        degenerate: loaded.degenerate(),
        levels: chosen.levels,
        capacity: chosen.capacity,
        delta_star_ns: chosen.delta_star_ns,
        threshold_bytes: threshold_bytes_for_delay(chosen.delta_star_ns, plan.line_rate_bps),
        mse_raw: chosen.mse_raw,
        mse_comp: chosen.mse_comp,
        improvement: chosen.improvement.unwrap_or(0.0),
        mean_counter_fwd: pf.mean_counter(),
        mean_counter_rev: pr.mean_counter(),
        c1_holds,
        per_level: best,
    };
    out.write_json("summary.json", &summary)?;
    if chosen.improvement.is_some() {
        println!(
            "R={} N={} delta*={:.1} ns: mse {:.4e} -> {:.4e} ns^2, improvement {:.4}",
            summary.levels, summary.capacity, summary.delta_star_ns, summary.mse_raw, summary.mse_comp, summary.improvement
        );
    } else {
        println!("no queuing on either path; nothing to correct");
    }
    let cfg = args.input.config.as_deref().zip(loaded.config.as_ref());
    let m = manifest("analyze", cfg, Some(loaded.source.as_str()), vec![], started, out.files());
    finish(out, m)
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    /// Thresholds to test, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub thresholds_ns: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Writes the report whatever the verdicts are.
pub fn check(args: &CheckArgs) -> CliResult<()> {
    let started = Instant::now();
    let loaded = inputs::load(&args.input, args.analysis.pure_exponential)?;
    let plan = inputs::plan(&args.analysis, &loaded)?;
    let section = loaded.config.as_ref().map(|c| c.analysis.thresholds_ns.clone()).unwrap_or_default();
    let thresholds = if !args.thresholds_ns.is_empty() {
        args.thresholds_ns.clone()
    } else if !section.is_empty() {
        section
    } else if let Some(d) = plan.delta_star_ns {
        vec![d]
    } else {
        let m = loaded.max_mean();
        if m > 0.0 { vec![m, 2.0 * m, 3.0 * m] } else { vec![IDLE_THRESHOLD_NS] }
    };
    let points: Vec<(u32, f64)> = plan
        .levels
        .iter()
        .flat_map(|&r| thresholds.iter().map(move |&d| (r, d)))
        .collect();
    let rows = condition_rows(&loaded, &loaded.label(args.input.config.as_deref()), &points)?;
    let held = rows.iter().filter(|r| r.c1_holds).count();
    println!("C1 holds in {held} of {} (link, R, threshold) cases", rows.len());
    for r in rows.iter().filter(|r| r.a1_regime) {
        log::info!("link {}: equal means, C2/C3 not needed", r.link);
    }
    let mut out = OutDir::create(&args.out)?;
    out.write_rows("conditions_report.csv", &rows)?;
    let cfg = args.input.config.as_deref().zip(loaded.config.as_ref());
    let m = manifest("check", cfg, Some(loaded.source.as_str()), vec![], started, out.files());
    finish(out, m)
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct OptimizeSummary<'a> {
    command: &'a str,
    source: &'a str,
    hops: usize,
    levels: u32,
    capacity: u64,
    delta_star_ns: f64,
    threshold_bytes: u64,
    mse_raw: f64,
    mse_comp: f64,
    improvement: Option<f64>,
    monotone_in_levels: bool,
}

/// Full grid per level count, the best per level, and a suggested `K`.
pub fn optimize(args: &OptimizeArgs) -> CliResult<()> {
    let started = Instant::now();
    let loaded = inputs::load(&args.input, args.analysis.pure_exponential)?;
    let plan = inputs::plan(&args.analysis, &loaded)?;
    let (rows, best, monotone) = match plan.delta_star_ns {
        Some(_) => {
            let best = best_per_level(&loaded, &plan)?;
            (best.clone(), best, true)
        }
        None => {
            let s = sweep_r(&loaded.paths, plan.capacity, &plan.levels, &plan.search, &plan.opts)?;
            (s.rows, s.best, s.monotone)
        }
    };
    let chosen = overall_best(&best);
    let threshold_bytes = threshold_bytes_for_delay(chosen.delta_star_ns, plan.line_rate_bps);
    let mut out = OutDir::create(&args.out)?;
    out.write_rows("scan.csv", rows.iter().map(SweepRow::from))?;
    out.write_rows("sweep.csv", best.iter().map(SweepRow::from))?;
    for e in &best {
        println!(
            "R={:<3} delta*={:>12.1} ns  mse={:.4e} ns^2  improvement={}",
            e.levels,
            e.delta_star_ns,
            e.mse_comp,
            e.improvement.map_or("n/a".into(), |i| format!("{i:.4}"))
        );
    }
    println!(
        "suggested K = {threshold_bytes} bytes (R={}, N={}, delta*={:.1} ns)",
        chosen.levels, chosen.capacity, chosen.delta_star_ns
    );
    out.write_json(
        "summary.json",
        &OptimizeSummary {
            command: "optimize",
            source: loaded.source.as_str(),
            hops: loaded.hops(),
            levels: chosen.levels,
            capacity: chosen.capacity,
            delta_star_ns: chosen.delta_star_ns,
            threshold_bytes,
            mse_raw: chosen.mse_raw,
            mse_comp: chosen.mse_comp,
            improvement: chosen.improvement,
            monotone_in_levels: monotone,
        },
    )?;
    let cfg = args.input.config.as_deref().zip(loaded.config.as_ref());
    let m = manifest("optimize", cfg, Some(loaded.source.as_str()), vec![], started, out.files());
    finish(out, m)
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Output directories, or their summary.json files.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

const REPORT_FIELDS: [&str; 11] = [
    "command",
    "hops",
    "levels",
    "capacity",
    "delta_star_ns",
    "threshold_bytes",
    "mse_raw",
    "mse_comp",
    "improvement",
    "rms_raw_ns",
    "rms_comp_ns",
];

/// One row per summary; fields a command does not produce stay empty.
pub fn report(args: &ReportArgs) -> CliResult<()> {
    let mut rows = Vec::with_capacity(args.inputs.len());
    for p in &args.inputs {
        let file = if p.is_dir() { p.join("summary.json") } else { p.clone() };
        let text = std::fs::read_to_string(&file).map_err(|e| CliError::config(&file, format!("cannot read: {e}")))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| CliError::config(&file, e.to_string()))?;
        let mut rec = vec![p.display().to_string()];
        rec.extend(REPORT_FIELDS.iter().map(|k| match v.get(k) {
            None | Some(Value::Null) => String::new(),
            Some(Value::String(s)) => s.clone(),
            Some(x) => x.to_string(),
        }));
        rows.push(rec);
    }
    let sink: Box<dyn std::io::Write> = match &args.out {
        Some(path) => Box::new(std::fs::File::create(path).map_err(|e| CliError::output(path, e))?),
        None => Box::new(std::io::stdout()),
    };
    let label = args.out.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
    let mut w = csv::Writer::from_writer(sink);
    let err = |e: csv::Error| CliError::output(&label, e);
    w.write_record(std::iter::once("source").chain(REPORT_FIELDS)).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::output(&label, e))
}
