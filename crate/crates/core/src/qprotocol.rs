//! Framed-slotted-ALOHA inventory (Q-protocol) with command accounting.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::EncodingScheme;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use crate::slot::{simulate_slot, DecodeMode, SlotConfig};

/// Reader and tag timing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingConfig {
    /// Reference interval (length of data-0).
    pub tari: f64,
    pub delim: f64,
    pub rtcal: f64,
    pub trcal: f64,
    pub blf: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub data1_len: f64,
    /// Time charged to a slot in which no tag replies, after the command.
    pub idle_slot: f64,
}

/// Divide ratios allowed for `TRcal·BLF`.
const DIVIDE_RATIOS: [f64; 2] = [8.0, 64.0 / 3.0];

impl TimingConfig {
    pub fn for_blf(blf: f64) -> Self {
        let tari = 12.5e-6;
        let data1_len = 1.5 * tari;
        let t1 = 10.0 / blf;
        let t3 = 3.0 / blf;
        Self {
            tari,
            delim: 12.5e-6,
            rtcal: tari + data1_len,
            trcal: 8.0 / blf,
            blf,
            t1,
            t2: 10.0 / blf,
            t3,
            data1_len,
            idle_slot: t1 + t3,
        }
    }

    pub fn data0_len(&self) -> f64 {
        self.tari
    }

    /// Expected PIE symbol length for equiprobable bits.
    pub fn mean_bit(&self) -> f64 {
        (self.data0_len() + self.data1_len) / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("tari", self.tari),
            ("delim", self.delim),
            ("rtcal", self.rtcal),
            ("trcal", self.trcal),
            ("blf", self.blf),
            ("t1", self.t1),
            ("t2", self.t2),
            ("t3", self.t3),
            ("data1_len", self.data1_len),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.idle_slot.is_finite() && self.idle_slot >= 0.0) {
            return Err(Error::Config("idle slot time must be non-negative".into()));
        }
        if (self.rtcal - self.tari - self.data1_len).abs() > 1e-9 * self.rtcal {
            return Err(Error::Config(format!(
                "rtcal {} s must equal data0 + data1 = {} s",
                self.rtcal,
                self.tari + self.data1_len
            )));
        }
        let dr = self.trcal * self.blf;
        if !DIVIDE_RATIOS.iter().any(|r| (dr - r).abs() < 1e-6 * r) {
            return Err(Error::Config(format!(
                "trcal·blf = {dr} is not a legal divide ratio (8 or 64/3)"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Command {
    Query,
    QueryRep,
    Ack,
    Rn16,
    Epc,
}

impl Command {
    pub const ALL: [Command; 5] = [Command::Query, Command::QueryRep, Command::Ack, Command::Rn16, Command::Epc];

    pub fn is_reader(self) -> bool {
        matches!(self, Command::Query | Command::QueryRep | Command::Ack)
    }
}

/// Payload bit counts of the commands exchanged during inventory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandCatalog {
    pub query_bits: usize,
    pub query_rep_bits: usize,
    pub ack_bits: usize,
    pub rn16_bits: usize,
    pub epc_bits: usize,
}

impl Default for CommandCatalog {
    fn default() -> Self {
        Self {
            query_bits: 22,
            query_rep_bits: 5,
            ack_bits: 18,
            rn16_bits: 16,
            epc_bits: 128,
        }
    }
}

impl CommandCatalog {
    pub fn payload_bits(&self, cmd: Command) -> usize {
        match cmd {
            Command::Query => self.query_bits,
            Command::QueryRep => self.query_rep_bits,
            Command::Ack => self.ack_bits,
            Command::Rn16 => self.rn16_bits,
            Command::Epc => self.epc_bits,
        }
    }
}

/// Air time of one command. Query carries the full reader preamble
/// (delimiter, data-0, RTcal, TRcal); QueryRep and Ack carry frame-sync
/// (delimiter, data-0, RTcal). Tag replies consist of preamble, payload and
/// postamble symbols of `M/BLF` each.
pub fn command_duration(
    cmd: Command,
    catalog: &CommandCatalog,
    timing: &TimingConfig,
    scheme: EncodingScheme,
) -> f64 {
    let bits = catalog.payload_bits(cmd) as f64;
    let frame_sync = timing.delim + timing.data0_len() + timing.rtcal;
    match cmd {
        Command::Query => frame_sync + timing.trcal + bits * timing.mean_bit(),
        Command::QueryRep | Command::Ack => frame_sync + bits * timing.mean_bit(),
        Command::Rn16 | Command::Epc => {
            scheme.reply_duration(1.0 / timing.blf, catalog.payload_bits(cmd))
        }
    }
}

/// Distribution of the number of tags decoded in a slot, per collision size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessTable {
    /// `probabilities[P - 1][k]` is the probability of decoding `k` of `P`
    /// colliding tags.
    pub probabilities: Vec<Vec<f64>>,
}

impl SuccessTable {
    pub fn new(probabilities: Vec<Vec<f64>>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::Config("success table must cover at least P = 1".into()));
        }
        for (i, row) in probabilities.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.len() != i + 2 || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Config(format!(
                    "success table row for P = {} must hold {} probabilities summing to 1",
                    i + 1,
                    i + 2
                )));
            }
        }
        Ok(Self { probabilities })
    }

    /// Draws the number of decoded tags; collisions larger than the table
    /// use its last row.
    pub fn sample<R: Rng + ?Sized>(&self, p: usize, rng: &mut R) -> usize {
        let row = &self.probabilities[p.min(self.probabilities.len()) - 1];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, &q) in row.iter().enumerate() {
            acc += q;
            if u < acc {
                return k.min(p);
            }
        }
        (row.len() - 1).min(p)
    }
}

/// How occupied slots are resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum Fidelity {
    /// Run the estimator, decoder and SIC on a synthesized record.
    FullPhy(Box<SlotConfig>),
    /// Sample the number of decoded tags from a table.
    Table(SuccessTable),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReaderMode {
    pub decode: DecodeMode,
    pub fidelity: Fidelity,
}

/// Command counts and duration of one inventory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InventoryStats {
    pub query: usize,
    pub query_rep: usize,
    pub ack: usize,
    /// Slots with at least one reply; a collision counts once.
    pub rn16: usize,
    pub epc: usize,
    pub idle: usize,
    pub collision: usize,
    pub rounds: usize,
    /// `Q` of every round, in order.
    pub frame_q: Vec<u32>,
    pub total_duration: f64,
}

/// Protocol settings shared by all runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub q_init: u32,
    pub timing: TimingConfig,
    pub catalog: CommandCatalog,
    pub scheme: EncodingScheme,
    /// Upper bound on rounds before a run is declared stuck.
    pub max_rounds: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            q_init: 4,
            timing: TimingConfig::for_blf(50e3),
            catalog: CommandCatalog::default(),
            scheme: EncodingScheme::fm0(true),
            max_rounds: 10_000,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        self.timing.validate()?;
        if self.q_init > 15 {
            return Err(Error::Config(format!("Q must be at most 15, got {}", self.q_init)));
        }
        Ok(())
    }

    fn duration(&self, cmd: Command) -> f64 {
        command_duration(cmd, &self.catalog, &self.timing, self.scheme)
    }
}

/// `Q` for the next round: `round(log2(remaining))`, at least 0.
pub fn next_q(remaining: usize) -> u32 {
    (remaining.max(1) as f64).log2().round().max(0.0) as u32
}

/// Runs inventory rounds until a whole frame passes without a reply.
///
/// Tags pick a slot uniformly in every frame. In an occupied slot the reader
/// receives one (possibly collided) RN16, decodes it according to `mode`,
/// and acknowledges the decoded tags one after another. An Ack whose RN16 was
/// decoded wrongly gets no EPC; the reader then leaves the slot. Tags that
/// were not acknowledged take part in the next round.
pub fn run_inventory<R: Rng + ?Sized>(
    n_tags: usize,
    mode: &ReaderMode,
    protocol: &ProtocolConfig,
    rng: &mut R,
) -> Result<InventoryStats> {
    protocol.validate()?;
    let t = &protocol.timing;
    let mut stats = InventoryStats::default();
    let mut remaining = n_tags;
    let mut q = protocol.q_init;
    loop {
        if stats.rounds == protocol.max_rounds {
            return Err(Error::Config(format!(
                "inventory did not finish within {} rounds",
                protocol.max_rounds
            )));
        }
        stats.rounds += 1;
        stats.frame_q.push(q);
        let slots = 1usize << q;
        let mut occupancy = vec![0usize; slots];
        for _ in 0..remaining {
            occupancy[rng.random_range(0..slots)] += 1;
        }
        let mut replies = false;
        for (s, &p) in occupancy.iter().enumerate() {
            if s == 0 {
                stats.query += 1;
                stats.total_duration += protocol.duration(Command::Query);
            } else {
                stats.query_rep += 1;
                stats.total_duration += protocol.duration(Command::QueryRep);
            }
            if p == 0 {
                stats.idle += 1;
                stats.total_duration += t.idle_slot;
                continue;
            }
            replies = true;
            stats.rn16 += 1;
            if p > 1 {
                stats.collision += 1;
            }
            stats.total_duration += t.t1 + protocol.duration(Command::Rn16) + t.t2;
            let (resolved, failed) = resolve_slot(p, mode, rng)?;
            for _ in 0..resolved {
                stats.ack += 1;
                stats.epc += 1;
                stats.total_duration +=
                    protocol.duration(Command::Ack) + t.t1 + protocol.duration(Command::Epc) + t.t2;
            }
            if failed {
                stats.ack += 1;
                stats.total_duration += protocol.duration(Command::Ack) + t.t1 + t.t3;
            }
            remaining -= resolved;
        }
        if !replies {
            return Ok(stats);
        }
        q = next_q(remaining);
    }
}

/// Number of tags resolved in a slot with `p` replies and whether an Ack went
/// unanswered.
fn resolve_slot<R: Rng + ?Sized>(p: usize, mode: &ReaderMode, rng: &mut R) -> Result<(usize, bool)> {
    match &mode.fidelity {
        Fidelity::FullPhy(cfg) => {
            let out = simulate_slot(cfg, p, mode.decode, rng)?;
            Ok((out.resolved.len(), out.failed_attempt()))
        }
        Fidelity::Table(table) => {
            let k = table.sample(p, rng);
            Ok(match mode.decode {
                DecodeMode::Single => ((k >= 1) as usize, k == 0),
                DecodeMode::Multi => (k, k < p),
            })
        }
    }
}

/// Per-(population, mode) aggregate over Monte Carlo runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub n_tags: usize,
    pub mode: DecodeMode,
    pub runs: usize,
    pub mean_duration_s: f64,
    pub std_duration_s: f64,
    pub query: f64,
    pub query_rep: f64,
    pub ack: f64,
    pub rn16: f64,
    pub epc: f64,
    pub idle: f64,
    pub collision: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloResult {
    pub rows: Vec<SummaryRow>,
    /// `runs[i][j][r]`: population `i`, mode `j`, run `r`.
    pub runs: Vec<Vec<Vec<InventoryStats>>>,
}

pub const SUMMARY_HEADER: &str =
    "n_tags,mode,runs,mean_duration_s,std_duration_s,query,queryrep,ack,rn16,epc,idle,collision";

impl MonteCarloResult {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{SUMMARY_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{:.9e},{:.9e},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
                r.n_tags,
                r.mode,
                r.runs,
                r.mean_duration_s,
                r.std_duration_s,
                r.query,
                r.query_rep,
                r.ack,
                r.rn16,
                r.epc,
                r.idle,
                r.collision
            )?;
        }
        Ok(())
    }

    pub fn row(&self, n_tags: usize, mode: DecodeMode) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.n_tags == n_tags && r.mode == mode)
    }
}

fn summarize(n_tags: usize, mode: DecodeMode, runs: &[InventoryStats]) -> SummaryRow {
    let n = runs.len() as f64;
    let mean = |f: fn(&InventoryStats) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let mean_duration_s = mean(|s| s.total_duration);
    let var = if runs.len() > 1 {
        runs.iter().map(|s| (s.total_duration - mean_duration_s).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    SummaryRow {
        n_tags,
        mode,
        runs: runs.len(),
        mean_duration_s,
        std_duration_s: var.sqrt(),
        query: mean(|s| s.query as f64),
        query_rep: mean(|s| s.query_rep as f64),
        ack: mean(|s| s.ack as f64),
        rn16: mean(|s| s.rn16 as f64),
        epc: mean(|s| s.epc as f64),
        idle: mean(|s| s.idle as f64),
        collision: mean(|s| s.collision as f64),
    }
}

/// Runs `runs` inventories for every population size and reader mode.
///
/// Run `r` of population `n` uses the same random stream in every mode, so
/// modes are compared on common random numbers.
pub fn monte_carlo(
    n_tags_list: &[usize],
    runs: usize,
    modes: &[ReaderMode],
    protocol: &ProtocolConfig,
    seed: u64,
) -> Result<MonteCarloResult> {
    if runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for &n in n_tags_list {
        let population_seed = derive_seed(seed, n as u64);
        let mut per_mode = Vec::new();
        for mode in modes {
            let stats = (0..runs)
                .into_par_iter()
                .map(|r| run_inventory(n, mode, protocol, &mut stream(population_seed, r as u64)))
                .collect::<Result<Vec<_>>>()?;
            rows.push(summarize(n, mode.decode, &stats));
            per_mode.push(stats);
        }
        all.push(per_mode);
    }
    Ok(MonteCarloResult { rows, runs: all })
}
