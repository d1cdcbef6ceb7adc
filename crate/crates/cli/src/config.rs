//! Scenario file: `[scenario]`, `[marking]`, `[flows.<name>]` and `[analysis]`.

use std::collections::BTreeMap;
use std::path::Path;

use cmc_core::cmc::{Direction, MarkingConfig};
use cmc_core::dist::DelayLaw;
use cmc_core::sim::{FlowSpec, HopSpec, ScenarioSpec};
use cmc_core::tune::{mm1_from_flow, PathPair};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub scenario: ScenarioSection,
    pub marking: MarkingConfig,
    #[serde(default)]
    pub flows: BTreeMap<String, FlowEntry>,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

/// Scenario keys; cross traffic comes from the flow sections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub hops: usize,
    pub line_rate_bps: f64,
    pub framing: bool,
    pub sync_interval_ns: u64,
    pub duration_ns: u64,
    pub warmup_ns: u64,
    pub base_delay_ns: u64,
    pub seed: u64,
    pub replications: u32,
    pub buffer_bits: u64,
    pub sync_bytes: u64,
    pub turnaround_ns: u64,
    pub true_offset_ns: i64,
    pub wait_sample_cap: usize,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let s = ScenarioSpec::new(1, MarkingConfig::classic(1, 1e9), 60_000_000_000);
        Self {
            hops: 1,
            line_rate_bps: s.line_rate_bps,
            framing: s.framing,
            sync_interval_ns: s.sync_interval_ns,
            duration_ns: s.duration_ns,
            warmup_ns: s.warmup_ns,
            base_delay_ns: s.base_delay_ns,
            seed: s.seed,
            replications: s.replications,
            buffer_bits: s.buffer_bits,
            sync_bytes: s.sync_bytes,
            turnaround_ns: s.turnaround_ns,
            true_offset_ns: s.true_offset_ns,
            wait_sample_cap: s.wait_sample_cap,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowEntry {
    pub hop: usize,
    pub direction: Direction,
    pub mean_packet_bytes: f64,
    pub mean_interarrival_us: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duty_cycle: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle_period_ns: Option<u64>,
}

impl FlowEntry {
    fn spec(&self) -> FlowSpec {
        let mut f = FlowSpec::poisson(self.mean_packet_bytes, self.mean_interarrival_us);
        if let Some(d) = self.duty_cycle {
            f.duty_cycle = d;
        }
        if let Some(p) = self.cycle_period_ns {
            f.cycle_period_ns = p;
        }
        f
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capacity: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_star_ns: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub search_lo_ns: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub search_hi_ns: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub search_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins_per_threshold: Option<usize>,
    /// Thresholds evaluated by `check`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub thresholds_ns: Vec<f64>,
    /// Drop the idle atom from model laws.
    pub pure_exponential: bool,
}

pub fn load(path: &Path) -> CliResult<Config> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(path, format!("cannot read: {e}")))?;
    parse(&text, path)
}

pub fn parse(text: &str, origin: &Path) -> CliResult<Config> {
    let cfg: Config = toml::from_str(text).map_err(|e| CliError::config(origin, e.to_string()))?;
    cfg.scenario_spec()
        .map_err(|e| CliError::config(origin, e.to_string()))?;
    Ok(cfg)
}

impl Config {
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn scenario_spec(&self) -> CliResult<ScenarioSpec> {
        let s = &self.scenario;
        let mut spec = ScenarioSpec::new(s.hops, self.marking.clone(), s.duration_ns);
        spec.line_rate_bps = s.line_rate_bps;
        spec.framing = s.framing;
        spec.sync_interval_ns = s.sync_interval_ns;
        spec.warmup_ns = s.warmup_ns;
        spec.base_delay_ns = s.base_delay_ns;
        spec.seed = s.seed;
        spec.replications = s.replications;
        spec.buffer_bits = s.buffer_bits;
        spec.sync_bytes = s.sync_bytes;
        spec.turnaround_ns = s.turnaround_ns;
        spec.true_offset_ns = s.true_offset_ns;
        spec.wait_sample_cap = s.wait_sample_cap;
        spec.hops = vec![HopSpec::default(); s.hops];
        for (name, flow) in &self.flows {
            let hop = spec.hops.get_mut(flow.hop).ok_or_else(|| {
                CliError::Usage(format!("flow `{name}` names hop {} but the scenario has {}", flow.hop, s.hops))
            })?;
            match flow.direction {
                Direction::Forward => hop.fwd.push(flow.spec()),
                Direction::Reverse => hop.rev.push(flow.spec()),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Per-hop M/M/1 laws built from the flow sections.
    ///
    /// Flows sharing a queue merge into one Poisson source. An on/off source
    /// with duty cycle `d` mixes the loaded law with an idle queue.
    pub fn model_paths(&self) -> CliResult<PathPair> {
        let spec = self.scenario_spec()?;
        let law = |flows: &[FlowSpec]| -> CliResult<DelayLaw> {
            if flows.is_empty() {
                return Ok(DelayLaw::zero());
            }
            let rates: Vec<f64> = flows.iter().map(|f| 1.0 / f.mean_interarrival_us).collect();
            let rate: f64 = rates.iter().sum();
            let bytes = flows.iter().zip(&rates).map(|(f, r)| f.mean_packet_bytes * r).sum::<f64>() / rate;
            let duty = flows.iter().zip(&rates).map(|(f, r)| f.duty_cycle * r).sum::<f64>() / rate;
            let m = mm1_from_flow(bytes, 1.0 / rate, spec.line_rate_bps)?;
            let busy = if self.analysis.pure_exponential { 1.0 } else { m.utilization };
            Ok(DelayLaw::exponential(1.0 - duty * busy, m.rate_per_ns)?)
        };
        let fwd = spec
            .hops
            .iter()
            .map(|h| law(&h.fwd))
            .collect::<CliResult<Vec<_>>>()?;
        let rev = spec
            .hops
            .iter()
            .rev()
            .map(|h| law(&h.rev))
            .collect::<CliResult<Vec<_>>>()?;
        Ok(PathPair::new(fwd, rev)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[scenario]
hops = 2
duration_ns = 100000000
sync_interval_ns = 1000000

[marking]
threshold_bytes = 8000
levels = 1
header_bits = 1
line_rate_bps = 1e9
encoding = "bit_shift"

[flows.a]
hop = 1
direction = "fwd"
mean_packet_bytes = 850
mean_interarrival_us = 8
duty_cycle = 0.5
"#;

    #[test]
    fn minimal_config_resolves() {
        let cfg = parse(MINIMAL, Path::new("t.toml")).unwrap();
        let spec = cfg.scenario_spec().unwrap();
        assert_eq!(spec.hops.len(), 2);
        assert!(spec.hops[0].fwd.is_empty());
        assert_eq!(spec.hops[1].fwd[0].duty_cycle, 0.5);
        assert_eq!(spec.base_delay_ns, ScenarioSection::default().base_delay_ns);
    }

    #[test]
    fn echo_round_trips() {
        let cfg = parse(MINIMAL, Path::new("t.toml")).unwrap();
        let again = parse(&cfg.echo(), Path::new("echo.toml")).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(again.echo(), cfg.echo());
    }

    #[test]
    fn unknown_keys_and_bad_hops_are_rejected() {
        let typo = MINIMAL.replace("hops = 2", "hops = 2\nhopz = 3");
        assert!(matches!(parse(&typo, Path::new("t.toml")), Err(CliError::Config { .. })));
        let far = MINIMAL.replace("hop = 1", "hop = 5");
        assert!(parse(&far, Path::new("t.toml")).is_err());
    }

    #[test]
    fn model_mixes_duty_cycle() {
        let cfg = parse(MINIMAL, Path::new("t.toml")).unwrap();
        let paths = cfg.model_paths().unwrap();
        assert!(paths.fwd[0].is_degenerate());
        let m = mm1_from_flow(850.0, 8.0, 1e9).unwrap();
        assert!((paths.fwd[1].mean() - 0.5 * m.mean_wait_ns).abs() < 1e-6);
        assert!(paths.rev.iter().all(DelayLaw::is_degenerate));
    }
}
