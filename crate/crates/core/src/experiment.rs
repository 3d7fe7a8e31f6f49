//! Experiment configuration and the scenario runners behind the CLI.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::channel::trace::{read_trace, write_trace};
use crate::channel::{ChannelModel, PopulationModel, ReceiverConfig, TagFading};
use crate::decoder::RN16_BITS;
use crate::encoding::{EncodingScheme, LineCode};
use crate::error::{Error, Result};
use crate::qprotocol::{
    monte_carlo, CommandCatalog, Fidelity, MonteCarloResult, ProtocolConfig, ReaderMode, SuccessTable,
    TimingConfig,
};
use crate::rng::{derive_seed, stream};
use crate::sic::{sic_decode, AlphaMode, SicOutcome, Termination};
use crate::slot::{
    decode_record, draw_tags, simulate_slot, synthesize, AlphaKind, DecodeMode, DecoderSettings, SlotConfig,
    SlotOutcome, TagReply,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    SlotProbability,
    QProtocol,
    SingleTrace,
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "slot_probability" | "slot-prob" => Ok(Scenario::SlotProbability),
            "q_protocol" | "q-compare" => Ok(Scenario::QProtocol),
            "single_trace" | "trace" => Ok(Scenario::SingleTrace),
            _ => Err(format!("unknown scenario `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FidelityKind {
    FullPhy,
    Table,
}

/// Resolved settings of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub fs: f64,
    pub bandwidth: f64,
    pub blf: f64,
    /// `fm0`, `miller2`, `miller4` or `miller8`.
    pub scheme: String,
    pub trext: bool,
    /// `None` disables receiver noise.
    pub noise_dbm: Option<f64>,
    pub distance_m: f64,
    pub tx_power_dbm: f64,
    /// Log-normal shadowing of the reader-tag link; 0 disables it.
    pub shadowing_db: f64,
    pub reader_leak_scale: f64,
    pub alpha: AlphaKind,
    pub refine: bool,
    pub bandlimited_subtraction: bool,
    pub grid_density: f64,
    pub max_iterations: usize,
    /// Collision sizes for the slot experiment.
    pub p_values: Vec<usize>,
    pub experiments: usize,
    pub runs: usize,
    /// Population sizes for the inventory comparison.
    pub n_tags: Vec<usize>,
    pub inventory_runs: usize,
    pub q_init: u32,
    pub fidelity: FidelityKind,
    /// `success_table[P - 1][k]`, required by table fidelity.
    pub success_table: Option<Vec<Vec<f64>>>,
    pub query_rep_bits: usize,
    pub idle_slot_s: Option<f64>,
    pub trace_tags: usize,
    pub trace_input: Option<PathBuf>,
    pub trace_output: Option<PathBuf>,
    /// Not echoed, so identical runs give identical files anywhere.
    #[serde(skip)]
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let slot = SlotConfig::default();
        Self {
            scenario: Scenario::SlotProbability,
            seed: 1,
            fs: slot.receiver.fs,
            bandwidth: slot.receiver.bandwidth,
            blf: slot.population.nominal_blf,
            scheme: "fm0".into(),
            trext: true,
            noise_dbm: slot.receiver.noise_power_dbm,
            distance_m: slot.population.distance_m,
            tx_power_dbm: slot.channel.tx_power_dbm,
            shadowing_db: match slot.channel.tag_fading {
                TagFading::LogNormal { sigma_db } => sigma_db,
                _ => 0.0,
            },
            reader_leak_scale: slot.channel.reader_leak_scale,
            alpha: slot.decoder.alpha,
            refine: slot.decoder.refine,
            bandlimited_subtraction: slot.decoder.bandlimited_subtraction,
            grid_density: slot.decoder.grid_density,
            max_iterations: slot.decoder.max_iterations,
            p_values: vec![1, 2, 3, 4, 5],
            experiments: 100,
            runs: 100,
            n_tags: vec![5, 10, 20, 40],
            inventory_runs: 200,
            q_init: 4,
            fidelity: FidelityKind::FullPhy,
            success_table: None,
            query_rep_bits: CommandCatalog::default().query_rep_bits,
            idle_slot_s: None,
            trace_tags: 2,
            trace_input: None,
            trace_output: None,
            output: None,
        }
    }
}

fn number<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::parse(key, format!("`{value}` is not a valid number ({e})")))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::parse(key, format!("`{value}` is not a boolean"))),
    }
}

/// A JSON list or a comma-separated list.
fn list<T: FromStr + serde::de::DeserializeOwned>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if value.starts_with('[') {
        serde_json::from_str(value).map_err(|e| Error::parse(key, format!("bad JSON list: {e}")))
    } else {
        value.split(',').map(|v| number(key, v.trim())).collect()
    }
}

fn optional_number(key: &str, value: &str) -> Result<Option<f64>> {
    match value {
        "none" | "off" => Ok(None),
        _ => number(key, value).map(Some),
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl ExperimentConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "scenario" => self.scenario = v.parse().map_err(|e: String| Error::parse(key, e))?,
            "seed" => self.seed = number(key, v)?,
            "fs" => self.fs = number(key, v)?,
            "bandwidth" => self.bandwidth = number(key, v)?,
            "blf" => self.blf = number(key, v)?,
            "scheme" => self.scheme = v.to_ascii_lowercase(),
            "trext" => self.trext = boolean(key, v)?,
            "noise_dbm" => self.noise_dbm = optional_number(key, v)?,
            "distance_m" => self.distance_m = number(key, v)?,
            "tx_power_dbm" => self.tx_power_dbm = number(key, v)?,
            "shadowing_db" => self.shadowing_db = number(key, v)?,
            "reader_leak_scale" => self.reader_leak_scale = number(key, v)?,
            "alpha" => {
                self.alpha = match v {
                    "perfect" => AlphaKind::Perfect,
                    "peak" => AlphaKind::Peak,
                    "least_squares" => AlphaKind::LeastSquares,
                    _ => return Err(Error::parse(key, format!("unknown amplitude estimator `{v}`"))),
                }
            }
            "refine" => self.refine = boolean(key, v)?,
            "bandlimited_subtraction" => self.bandlimited_subtraction = boolean(key, v)?,
            "grid_density" => self.grid_density = number(key, v)?,
            "max_iterations" => self.max_iterations = number(key, v)?,
            "p_values" | "P" => self.p_values = list(key, v)?,
            "experiments" => self.experiments = number(key, v)?,
            "runs" => self.runs = number(key, v)?,
            "n_tags" => self.n_tags = list(key, v)?,
            "inventory_runs" => self.inventory_runs = number(key, v)?,
            "q_init" => self.q_init = number(key, v)?,
            "fidelity" => {
                self.fidelity = match v {
                    "full_phy" => FidelityKind::FullPhy,
                    "table" => FidelityKind::Table,
                    _ => return Err(Error::parse(key, format!("unknown fidelity `{v}`"))),
                }
            }
            "success_table" => {
                self.success_table = Some(
                    serde_json::from_str(v).map_err(|e| Error::parse(key, format!("bad JSON table: {e}")))?,
                )
            }
            "query_rep_bits" => self.query_rep_bits = number(key, v)?,
            "idle_slot_s" => self.idle_slot_s = optional_number(key, v)?,
            "trace_tags" => self.trace_tags = number(key, v)?,
            "trace_input" => self.trace_input = optional_path(v),
            "trace_output" => self.trace_output = optional_path(v),
            "output" => self.output = optional_path(v),
            _ => return Err(Error::parse(key, "unknown key")),
        }
        Ok(())
    }

    pub fn encoding(&self) -> Result<EncodingScheme> {
        let scheme = match self.scheme.as_str() {
            "fm0" => EncodingScheme::new(LineCode::Fm0, 1, self.trext),
            s => match s.strip_prefix("miller").and_then(|m| m.parse().ok()) {
                Some(m) => EncodingScheme::new(LineCode::Miller, m, self.trext),
                None => Err(Error::parse("scheme", format!("unknown scheme `{s}`"))),
            },
        };
        scheme.map_err(|e| match e {
            Error::Parse { .. } => e,
            other => Error::parse("scheme", other.to_string()),
        })
    }

    pub fn slot_config(&self) -> Result<SlotConfig> {
        let population = PopulationModel {
            distance_m: self.distance_m,
            ..PopulationModel::with_blf(self.blf)
        };
        let channel = ChannelModel {
            tx_power_dbm: self.tx_power_dbm,
            reader_leak_scale: self.reader_leak_scale,
            tag_fading: if self.shadowing_db > 0.0 {
                TagFading::LogNormal {
                    sigma_db: self.shadowing_db,
                }
            } else {
                TagFading::None
            },
            ..ChannelModel::default()
        };
        let receiver = ReceiverConfig {
            bandwidth: self.bandwidth,
            fs: self.fs,
            noise_power_dbm: self.noise_dbm,
        };
        let decoder = DecoderSettings {
            grid_density: self.grid_density,
            refine: self.refine,
            alpha: self.alpha,
            bandlimited_subtraction: self.bandlimited_subtraction,
            max_iterations: self.max_iterations,
        };
        let cfg = SlotConfig {
            scheme: self.encoding()?,
            population,
            channel,
            receiver,
            decoder,
            n_bits: RN16_BITS,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn protocol_config(&self) -> Result<ProtocolConfig> {
        let mut timing = TimingConfig::for_blf(self.blf);
        if let Some(idle) = self.idle_slot_s {
            timing.idle_slot = idle;
        }
        let catalog = CommandCatalog {
            query_rep_bits: self.query_rep_bits,
            ..CommandCatalog::default()
        };
        let cfg = ProtocolConfig {
            q_init: self.q_init,
            timing,
            catalog,
            scheme: self.encoding()?,
            ..ProtocolConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks parameter ranges and the fields the scenario needs.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("fs", self.fs),
            ("bandwidth", self.bandwidth),
            ("blf", self.blf),
            ("distance_m", self.distance_m),
            ("grid_density", self.grid_density),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{key} must be positive, got {v}")));
            }
        }
        if !(self.shadowing_db >= 0.0) {
            return Err(Error::Config("shadowing_db must be non-negative".into()));
        }
        self.slot_config()?;
        match self.scenario {
            Scenario::SlotProbability => {
                if self.p_values.is_empty() || self.p_values.contains(&0) {
                    return Err(Error::Config("p_values must list collision sizes of at least 1".into()));
                }
                if self.experiments == 0 || self.runs == 0 {
                    return Err(Error::Config("experiments and runs must be at least 1".into()));
                }
            }
            Scenario::QProtocol => {
                if self.n_tags.is_empty() {
                    return Err(Error::Config("n_tags must list at least one population size".into()));
                }
                if self.inventory_runs == 0 {
                    return Err(Error::Config("inventory_runs must be at least 1".into()));
                }
                if self.fidelity == FidelityKind::Table && self.success_table.is_none() {
                    return Err(Error::Config("table fidelity requires success_table".into()));
                }
                self.protocol_config()?;
            }
            Scenario::SingleTrace => {
                if self.trace_input.is_none() && self.trace_tags == 0 {
                    return Err(Error::Config("trace_tags must be at least 1".into()));
                }
            }
        }
        Ok(())
    }

    /// One-line JSON comment echoing the configuration and seed.
    pub fn header_comment(&self) -> Result<String> {
        Ok(format!("# {}\n", serde_json::to_string(&json!({ "seed": self.seed, "config": self }))?))
    }
}

/// Parses `key = value` lines (blank lines and `#` comments allowed), then
/// applies `overrides` in order.
pub fn parse_config(text: &str, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut seen = std::collections::HashSet::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(format!("line {}", n + 1), format!("expected key = value, got `{line}`")))?;
        let key = key.trim();
        if !seen.insert(key.to_string()) {
            return Err(Error::parse(key, "given more than once"));
        }
        cfg.set(key, value)?;
    }
    for (key, value) in overrides {
        cfg.set(key, value)?;
    }
    Ok(cfg)
}

pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)?,
        None => String::new(),
    };
    parse_config(&text, overrides)
}

/// Per-experiment fractions of runs decoding exactly `k` tags.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotProbabilityResult {
    pub p_values: Vec<usize>,
    pub experiments: usize,
    pub runs: usize,
    /// `fractions[i][e][k]` for `p_values[i]`.
    pub fractions: Vec<Vec<Vec<f64>>>,
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl SlotProbabilityResult {
    fn index(&self, p: usize) -> Option<usize> {
        self.p_values.iter().position(|&q| q == p)
    }

    /// Mean and standard deviation across experiments of the fraction of
    /// runs decoding exactly `k` of `p` tags.
    pub fn exactly(&self, p: usize, k: usize) -> Option<(f64, f64)> {
        let i = self.index(p)?;
        (k <= p).then(|| mean_std(self.fractions[i].iter().map(move |f| f[k])))
    }

    /// Same for at least one decoded tag.
    pub fn at_least_one(&self, p: usize) -> Option<(f64, f64)> {
        let i = self.index(p)?;
        Some(mean_std(self.fractions[i].iter().map(|f| 1.0 - f[0])))
    }

    /// Table for the inventory simulation; needs `p_values` to be `1..=P`.
    pub fn success_table(&self) -> Result<SuccessTable> {
        let mut rows = Vec::new();
        for p in 1..=self.p_values.len() {
            let row = (0..=p)
                .map(|k| self.exactly(p, k).map(|(m, _)| m))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::Config("success table needs p_values 1, 2, ..., P".into()))?;
            rows.push(row);
        }
        SuccessTable::new(rows)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "P,k,mean_fraction,std_fraction")?;
        for &p in &self.p_values {
            for k in 0..=p {
                let (m, s) = self.exactly(p, k).expect("k within range");
                writeln!(w, "{p},{k},{m:.6},{s:.6}")?;
            }
        }
        Ok(())
    }
}

/// Runs `experiments × runs` multi-tag slots for every collision size.
/// Run `r` of experiment `e` at size `P` has its own random stream.
pub fn run_slot_probability(cfg: &ExperimentConfig) -> Result<SlotProbabilityResult> {
    let slot = cfg.slot_config()?;
    let mut fractions = Vec::new();
    for &p in &cfg.p_values {
        if p == 0 {
            return Err(Error::Config("collision size must be at least 1".into()));
        }
        let base = derive_seed(cfg.seed, p as u64);
        let counts = (0..cfg.experiments * cfg.runs)
            .into_par_iter()
            .map(|i| {
                let (e, r) = (i / cfg.runs, i % cfg.runs);
                let mut rng = stream(derive_seed(base, e as u64), r as u64);
                simulate_slot(&slot, p, DecodeMode::Multi, &mut rng).map(|o| o.resolved.len())
            })
            .collect::<Result<Vec<_>>>()?;
        let per_experiment = counts
            .chunks(cfg.runs)
            .map(|c| {
                let mut f = vec![0.0; p + 1];
                for &k in c {
                    f[k] += 1.0 / cfg.runs as f64;
                }
                f
            })
            .collect();
        fractions.push(per_experiment);
    }
    Ok(SlotProbabilityResult {
        p_values: cfg.p_values.clone(),
        experiments: cfg.experiments,
        runs: cfg.runs,
        fractions,
    })
}

/// Inventory Monte Carlo for single- and multi-tag readers.
pub fn run_q_comparison(cfg: &ExperimentConfig) -> Result<MonteCarloResult> {
    if cfg.n_tags.is_empty() {
        return Err(Error::Config("n_tags must list at least one population size".into()));
    }
    let protocol = cfg.protocol_config()?;
    let fidelity = match cfg.fidelity {
        FidelityKind::FullPhy => Fidelity::FullPhy(Box::new(cfg.slot_config()?)),
        FidelityKind::Table => {
            let rows = cfg
                .success_table
                .clone()
                .ok_or_else(|| Error::Config("table fidelity requires success_table".into()))?;
            Fidelity::Table(SuccessTable::new(rows)?)
        }
    };
    let modes = [DecodeMode::Single, DecodeMode::Multi].map(|decode| ReaderMode {
        decode,
        fidelity: fidelity.clone(),
    });
    monte_carlo(&cfg.n_tags, cfg.inventory_runs, &modes, &protocol, cfg.seed)
}

/// A decoded single record, synthesized or replayed from a dump.
#[derive(Debug, Clone)]
pub struct TraceResult {
    /// Ground truth; empty for replayed records.
    pub tags: Vec<TagReply>,
    pub slot: Option<SlotOutcome>,
    pub sic: SicOutcome,
}

/// Synthesizes one slot (optionally dumping it) or replays a dump, then
/// runs SIC. Replays have no ground truth, so they stop on the residual
/// energy and cannot use the perfect amplitude.
pub fn run_trace(cfg: &ExperimentConfig) -> Result<TraceResult> {
    let slot = cfg.slot_config()?;
    if let Some(input) = &cfg.trace_input {
        let (z, _) = read_trace(input)?;
        if z.fs != slot.receiver.fs {
            return Err(Error::Config(format!(
                "trace sampled at {} Hz, configuration expects {} Hz",
                z.fs, slot.receiver.fs
            )));
        }
        let mut sic = slot.sic_config(DecodeMode::Multi, Vec::new());
        sic.termination = Termination::EnergyThreshold { k_sigma: 1.5 };
        if matches!(sic.alpha, AlphaMode::Perfect(_)) {
            sic.alpha = AlphaMode::LeastSquares;
        }
        let out = sic_decode(&z, &sic, slot.scheme, slot.receiver.envelope_noise_variance())?;
        return Ok(TraceResult {
            tags: Vec::new(),
            slot: None,
            sic: out,
        });
    }
    let mut rng = stream(cfg.seed, 0);
    let tags = draw_tags(&slot, cfg.trace_tags, &mut rng);
    let record = synthesize(&slot, tags, &mut rng)?;
    if let Some(path) = &cfg.trace_output {
        write_trace(path, &record.envelope, json!({ "seed": cfg.seed, "config": cfg, "tags": tag_summary(&record.tags) }))?;
    }
    let (outcome, sic) = decode_record(&slot, &record, DecodeMode::Multi)?;
    Ok(TraceResult {
        tags: record.tags,
        slot: Some(outcome),
        sic,
    })
}

fn tag_summary(tags: &[TagReply]) -> serde_json::Value {
    tags.iter()
        .map(|t| json!({ "period": t.params.period, "delay": t.params.delay, "bits": t.message.to_string() }))
        .collect()
}

/// Runs the configured scenario and renders its CSV, headed by the
/// configuration echo.
pub fn run_scenario(cfg: &ExperimentConfig) -> Result<String> {
    cfg.validate()?;
    let mut out = cfg.header_comment()?.into_bytes();
    match cfg.scenario {
        Scenario::SlotProbability => run_slot_probability(cfg)?.write_csv(&mut out)?,
        Scenario::QProtocol => run_q_comparison(cfg)?.write_csv(&mut out)?,
        Scenario::SingleTrace => {
            let r = run_trace(cfg)?;
            let mut line = String::from("# ");
            write!(line, "{}", json!({ "tags": tag_summary(&r.tags), "resolved": r.slot.map(|s| s.resolved) }))
                .expect("writing to a String");
            writeln!(out, "{line}")?;
            r.sic.write_diagnostics_csv(&mut out)?;
        }
    }
    Ok(String::from_utf8(out).expect("CSV output is UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(scenario: Scenario) -> ExperimentConfig {
        ExperimentConfig {
            scenario,
            experiments: 3,
            runs: 4,
            p_values: vec![1, 2],
            n_tags: vec![3, 6],
            inventory_runs: 3,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn empty_config_gives_defaults() {
        let cfg = parse_config("", &[]).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.blf, 50e3);
        assert!(cfg.trext);
        assert_eq!(cfg.scheme, "fm0");
        assert_eq!(cfg.distance_m, 1.0);
        assert_eq!(cfg.noise_dbm, Some(-50.0));
        assert_eq!(cfg.bandwidth, 1.5e6);
        assert_eq!(cfg.q_init, 4);
        assert_eq!(cfg.slot_config().unwrap(), SlotConfig::default());
    }

    #[test]
    fn overrides_win_over_file() {
        let text = "# comment\nnoise_dbm = -40\n\nseed=9\nn_tags = [5, 10]\np_values = 1,3\n";
        let cfg = parse_config(text, &[("noise_dbm".into(), "-60".into())]).unwrap();
        assert_eq!(cfg.noise_dbm, Some(-60.0));
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.n_tags, vec![5, 10]);
        assert_eq!(cfg.p_values, vec![1, 3]);
    }

    #[test]
    fn parse_errors_name_the_key() {
        let e = parse_config("fs = fast", &[]).unwrap_err();
        assert!(matches!(&e, Error::Parse { key, .. } if key == "fs"), "{e}");
        let e = parse_config("colour = red", &[]).unwrap_err();
        assert!(e.to_string().contains("colour"));
        let e = parse_config("runs = 3\nruns = 4", &[]).unwrap_err();
        assert!(e.to_string().contains("runs"));
        let e = parse_config("just words", &[]).unwrap_err();
        assert!(e.to_string().contains("line 1"));
        let e = parse_config("n_tags = [1, x]", &[]).unwrap_err();
        assert!(e.to_string().contains("n_tags"));
        let e = parse_config("scheme = miller3", &[]).unwrap().encoding().unwrap_err();
        assert!(e.to_string().contains("scheme"));
    }

    #[test]
    fn scenario_requirements() {
        let mut cfg = small(Scenario::QProtocol);
        cfg.n_tags.clear();
        assert!(cfg.validate().is_err());
        assert!(run_q_comparison(&cfg).is_err());
        let mut cfg = small(Scenario::QProtocol);
        cfg.fidelity = FidelityKind::Table;
        assert!(cfg.validate().is_err());
        let mut cfg = small(Scenario::SlotProbability);
        cfg.p_values = vec![0];
        assert!(cfg.validate().is_err());
        let mut cfg = small(Scenario::SlotProbability);
        cfg.fs = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn miller_schemes_parse() {
        let cfg = parse_config("scheme = miller4\ntrext = false", &[]).unwrap();
        assert_eq!(cfg.encoding().unwrap(), EncodingScheme::miller(4, false).unwrap());
    }

    #[test]
    fn slot_probability_is_reproducible() {
        let cfg = small(Scenario::SlotProbability);
        let a = run_scenario(&cfg).unwrap();
        let b = run_scenario(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("# {"));
        let r = run_slot_probability(&cfg).unwrap();
        for (i, &p) in r.p_values.iter().enumerate() {
            for f in &r.fractions[i] {
                assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert_eq!(f.len(), p + 1);
            }
        }
        let table = r.success_table().unwrap();
        assert_eq!(table.probabilities.len(), 2);
    }

    #[test]
    fn header_echoes_config() {
        let cfg = small(Scenario::QProtocol);
        let h = cfg.header_comment().unwrap();
        let v: serde_json::Value = serde_json::from_str(h.trim_start_matches("# ").trim()).unwrap();
        assert_eq!(v["seed"], 1);
        assert_eq!(v["config"]["scenario"], "q_protocol");
        assert_eq!(v["config"]["n_tags"], json!([3, 6]));
    }

    #[test]
    fn table_fidelity_runs() {
        let mut cfg = small(Scenario::QProtocol);
        cfg.fidelity = FidelityKind::Table;
        cfg.set("success_table", "[[0.0, 1.0], [0.2, 0.5, 0.3]]").unwrap();
        let csv = run_scenario(&cfg).unwrap();
        assert_eq!(csv.lines().count(), 1 + 1 + 4);
    }

    #[test]
    fn trace_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("slot.bin");
        let mut cfg = small(Scenario::SingleTrace);
        cfg.trace_tags = 1;
        cfg.trace_output = Some(path.clone());
        let first = run_trace(&cfg).unwrap();
        assert_eq!(first.slot.as_ref().unwrap().resolved, vec![0]);
        cfg.trace_output = None;
        cfg.trace_input = Some(path);
        let replay = run_trace(&cfg).unwrap();
        assert!(replay.tags.is_empty());
        assert_eq!(replay.sic.decoded[0].reply.bits, first.tags[0].message);
    }
}
