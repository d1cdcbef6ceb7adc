//! Where hop laws come from, and how analysis parameters are resolved.

use std::path::{Path, PathBuf};

use clap::Args;
use cmc_core::cmc::Direction;
use cmc_core::criteria::threshold_range;
use cmc_core::dist::{read_samples, DelayLaw};
use cmc_core::propagate::PropagationOptions;
use cmc_core::tune::{PathPair, Search};

use crate::config::{self, Config};
use crate::error::{CliError, CliResult};

#[derive(Args, Clone, Debug, Default)]
pub struct InputArgs {
    /// Scenario file. Supplies model laws when no delay files are given,
    /// plus analysis defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Forward per-hop delay files, client to server.
    #[arg(long, num_args = 1..)]
    pub fwd: Vec<PathBuf>,
    /// Reverse per-hop delay files, server to client.
    #[arg(long, num_args = 1..)]
    pub rev: Vec<PathBuf>,
    /// Output directory of `simulate`; its wait files become the hop laws.
    #[arg(long)]
    pub sim_dir: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Default)]
pub struct AnalysisArgs {
    /// Levels per hop: `4`, `1,2,4`, `1-8` or `1..8`.
    #[arg(long, visible_alias = "R")]
    pub levels: Option<String>,
    /// Counter capacity `N`.
    #[arg(long, visible_alias = "N")]
    pub capacity: Option<u64>,
    /// Evaluate this threshold instead of searching.
    #[arg(long, conflicts_with = "optimize")]
    pub delta_star_ns: Option<f64>,
    /// Search for the threshold even if the config fixes one.
    #[arg(long)]
    pub optimize: bool,
    #[arg(long)]
    pub search_lo_ns: Option<f64>,
    #[arg(long)]
    pub search_hi_ns: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Grid cells per threshold in the error recursion.
    #[arg(long)]
    pub bins_per_threshold: Option<usize>,
    /// Model laws without the idle atom.
    #[arg(long)]
    pub pure_exponential: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Files,
    SimDir,
    Model,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Files => "files",
            Source::SimDir => "sim_dir",
            Source::Model => "model",
        }
    }
}

pub struct Loaded {
    pub paths: PathPair,
    pub config: Option<Config>,
    pub source: Source,
}

impl Loaded {
    /// Label for report rows: the config file stem, else the input kind.
    pub fn label(&self, config_path: Option<&Path>) -> String {
        config_path
            .and_then(Path::file_stem)
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.source.as_str().to_string())
    }

    pub fn hops(&self) -> usize {
        self.paths.fwd.len()
    }

    pub fn degenerate(&self) -> bool {
        self.laws().all(DelayLaw::is_degenerate)
    }

    fn laws(&self) -> impl Iterator<Item = &DelayLaw> {
        self.paths.fwd.iter().chain(&self.paths.rev)
    }

    /// Largest per-hop mean wait.
    pub fn max_mean(&self) -> f64 {
        self.laws().map(DelayLaw::mean).fold(0.0, f64::max)
    }

    /// Forward and reverse law of link `i`, counted from the client.
    pub fn link(&self, i: usize) -> (&DelayLaw, &DelayLaw) {
        (&self.paths.fwd[i], &self.paths.rev[self.hops() - 1 - i])
    }
}

pub fn load(args: &InputArgs, pure_exponential: bool) -> CliResult<Loaded> {
    let mut config = args.config.as_deref().map(config::load).transpose()?;
    if let Some(cfg) = config.as_mut() {
        cfg.analysis.pure_exponential |= pure_exponential;
    }
    if !args.fwd.is_empty() || !args.rev.is_empty() {
        if args.sim_dir.is_some() {
            return Err(CliError::Usage("give either delay files or --sim-dir, not both".into()));
        }
        if args.fwd.len() != args.rev.len() {
            return Err(CliError::Usage(format!(
                "forward path has {} hop files, reverse has {}",
                args.fwd.len(),
                args.rev.len()
            )));
        }
        let fwd = args.fwd.iter().map(|p| law_from(std::slice::from_ref(p))).collect::<CliResult<_>>()?;
        let rev = args.rev.iter().map(|p| law_from(std::slice::from_ref(p))).collect::<CliResult<_>>()?;
        return Ok(Loaded {
            paths: PathPair::new(fwd, rev)?,
            config,
            source: Source::Files,
        });
    }
    if let Some(dir) = &args.sim_dir {
        return Ok(Loaded {
            paths: from_sim_dir(dir)?,
            config,
            source: Source::SimDir,
        });
    }
    let Some(cfg) = config else {
        return Err(CliError::Usage("no input: give --fwd/--rev, --sim-dir or --config".into()));
    };
    Ok(Loaded {
        paths: cfg.model_paths()?,
        config: Some(cfg),
        source: Source::Model,
    })
}

fn law_from(files: &[PathBuf]) -> CliResult<DelayLaw> {
    let mut samples = Vec::new();
    for f in files {
        samples.extend(read_samples(f)?);
    }
    Ok(DelayLaw::empirical(samples)?)
}

pub fn wait_file_name(hop: usize, direction: Direction) -> String {
    let dir = match direction {
        Direction::Forward => "fwd",
        Direction::Reverse => "rev",
    };
    format!("waits_hop{hop}_{dir}.csv")
}

/// Pools `rep_k/` subdirectories when present.
fn from_sim_dir(dir: &Path) -> CliResult<PathPair> {
    if !dir.is_dir() {
        return Err(CliError::config(dir, "not a directory"));
    }
    let mut roots = Vec::new();
    for k in 0.. {
        let rep = dir.join(format!("rep_{k}"));
        if !rep.is_dir() {
            break;
        }
        roots.push(rep);
    }
    if roots.is_empty() {
        roots.push(dir.to_path_buf());
    }
    let mut hops = 0;
    while roots[0].join(wait_file_name(hops, Direction::Forward)).is_file() {
        hops += 1;
    }
    if hops == 0 {
        return Err(CliError::config(dir, format!("no {} found", wait_file_name(0, Direction::Forward))));
    }
    let files = |h: usize, d: Direction| -> Vec<PathBuf> { roots.iter().map(|r| r.join(wait_file_name(h, d))).collect() };
    let fwd = (0..hops)
        .map(|h| law_from(&files(h, Direction::Forward)))
        .collect::<CliResult<_>>()?;
    let rev = (0..hops)
        .rev()
        .map(|h| law_from(&files(h, Direction::Reverse)))
        .collect::<CliResult<_>>()?;
    Ok(PathPair::new(fwd, rev)?)
}

/// `4`, `1,2,4`, `1-8` or `1..8`.
pub fn parse_levels(spec: &str) -> CliResult<Vec<u32>> {
    let bad = || CliError::Usage(format!("cannot read level list `{spec}`"));
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once("..").or_else(|| part.split_once('-')) {
            Some((a, b)) => {
                let a: u32 = a.trim().parse().map_err(|_| bad())?;
                let b: u32 = b.trim().parse().map_err(|_| bad())?;
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() || out.contains(&0) {
        return Err(bad());
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Fallback threshold when every hop is idle.
pub const IDLE_THRESHOLD_NS: f64 = 1000.0;

pub struct Plan {
    pub levels: Vec<u32>,
    pub capacity: u64,
    pub delta_star_ns: Option<f64>,
    pub search: Search,
    pub opts: PropagationOptions,
    pub line_rate_bps: f64,
}

/// Command line first, then `[analysis]`, then defaults.
///
/// The default search is `[λ*, 3λ*]` for model laws, with `λ*` the largest hop
/// mean, and `[λ*/10, range]` for measured laws.
pub fn plan(args: &AnalysisArgs, loaded: &Loaded) -> CliResult<Plan> {
    let cfg = loaded.config.as_ref();
    let section = cfg.map(|c| c.analysis.clone()).unwrap_or_default();
    let levels = match &args.levels {
        Some(s) => parse_levels(s)?,
        None if !section.levels.is_empty() => section.levels.clone(),
        None => vec![cfg.map_or(1, |c| c.marking.levels)],
    };
    let top = u64::from(*levels.last().expect("non-empty"));
    let capacity = match (args.capacity.or(section.capacity), cfg) {
        (Some(n), _) => n,
        (None, Some(c)) => c
            .marking
            .capacity(Direction::Forward)?
            .min(c.marking.capacity(Direction::Reverse)?),
        (None, None) => top,
    };
    if capacity < top {
        return Err(CliError::Usage(format!("capacity {capacity} is below the largest level count {top}")));
    }
    let m = loaded.max_mean();
    let (lo, hi) = if m <= 0.0 {
        (IDLE_THRESHOLD_NS, IDLE_THRESHOLD_NS)
    } else if loaded.source == Source::Model {
        (m, 3.0 * m)
    } else {
        let range = loaded
            .paths
            .fwd
            .iter()
            .chain(&loaded.paths.rev)
            .map(threshold_range)
            .fold(0.0, f64::max);
        (0.1 * m, range.max(0.1 * m))
    };
    let lo = args.search_lo_ns.or(section.search_lo_ns).unwrap_or(lo);
    let hi = args.search_hi_ns.or(section.search_hi_ns).unwrap_or(hi.max(lo));
    let steps = args.steps.or(section.search_steps).unwrap_or(Search::DEFAULT_STEPS);
    let search = Search::new(lo, hi, steps)?;
    let mut opts = PropagationOptions::default();
    if let Some(k) = args.bins_per_threshold.or(section.bins_per_threshold) {
        opts.bins_per_threshold = k;
    }
    Ok(Plan {
        levels,
        capacity,
        delta_star_ns: if args.optimize {
            None
        } else {
            args.delta_star_ns.or(section.delta_star_ns)
        },
        search,
        opts,
        line_rate_bps: cfg.map_or(1e9, |c| c.marking.line_rate_bps),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_lists() {
        assert_eq!(parse_levels("4").unwrap(), vec![4]);
        assert_eq!(parse_levels("4, 1,2").unwrap(), vec![1, 2, 4]);
        assert_eq!(parse_levels("1-3,8").unwrap(), vec![1, 2, 3, 8]);
        assert_eq!(parse_levels("1..4").unwrap(), vec![1, 2, 3, 4]);
        for bad in ["", "0", "3-1", "x", "1-", "2..", "0..2"] {
            assert!(parse_levels(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn idle_inputs_get_a_fixed_threshold() {
        let loaded = Loaded {
            paths: PathPair::symmetric(vec![DelayLaw::zero()]).unwrap(),
            config: None,
            source: Source::Files,
        };
        let p = plan(&AnalysisArgs::default(), &loaded).unwrap();
        assert_eq!((p.search.lo_ns, p.search.hi_ns), (IDLE_THRESHOLD_NS, IDLE_THRESHOLD_NS));
        assert_eq!((p.levels.clone(), p.capacity), (vec![1], 1));
    }

    #[test]
    fn capacity_below_levels_is_a_usage_error() {
        let loaded = Loaded {
            paths: PathPair::symmetric(vec![DelayLaw::exponential_mean(1e4).unwrap()]).unwrap(),
            config: None,
            source: Source::Model,
        };
        let args = AnalysisArgs {
            levels: Some("1-4".into()),
            capacity: Some(2),
            ..Default::default()
        };
        assert!(matches!(plan(&args, &loaded), Err(CliError::Usage(_))));
    }
}
