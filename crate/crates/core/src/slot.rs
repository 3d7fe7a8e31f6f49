//! One reply slot end to end: draw tags and channel, synthesize the
//! envelope, run the decoder and score the result.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    lowpass_envelope, superpose, ChannelModel, ChannelRealization, PopulationModel, ReceiverConfig,
    draw_tag_params,
};
use crate::decoder::RN16_BITS;
use crate::encoding::{generate_control_signal, EncodingScheme, Message, TagParams};
use crate::error::Result;
use crate::estimator::SearchGrid;
use crate::sic::{
    sic_decode_with, AlphaMode, Refinement, SicConfig, SicOutcome, Subtraction, TagTruth, Termination,
};
use crate::signal::SampledSignal;

/// How a reader treats a reply slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    /// Decode the strongest reply only.
    Single,
    /// Successive interference cancellation.
    Multi,
}

impl std::fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DecodeMode::Single => "single",
            DecodeMode::Multi => "multi",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaKind {
    Peak,
    LeastSquares,
    Perfect,
}

/// Receiver-side decoder knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderSettings {
    /// Search-grid steps are divided by this factor.
    pub grid_density: f64,
    /// Extra search at sample resolution around the coarse peak.
    pub refine: bool,
    pub alpha: AlphaKind,
    /// Low-pass filter reconstructions before subtracting them.
    pub bandlimited_subtraction: bool,
    pub max_iterations: usize,
}

impl Default for DecoderSettings {
    fn default() -> Self {
        Self {
            grid_density: 1.0,
            refine: true,
            alpha: AlphaKind::Perfect,
            bandlimited_subtraction: true,
            max_iterations: 8,
        }
    }
}

/// Everything needed to simulate a slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotConfig {
    pub scheme: EncodingScheme,
    pub population: PopulationModel,
    pub channel: ChannelModel,
    pub receiver: ReceiverConfig,
    pub decoder: DecoderSettings,
    pub n_bits: usize,
}

impl Default for SlotConfig {
    fn default() -> Self {
        Self {
            scheme: EncodingScheme::fm0(true),
            population: PopulationModel::default(),
            channel: ChannelModel::default(),
            receiver: ReceiverConfig::default(),
            decoder: DecoderSettings::default(),
            n_bits: RN16_BITS,
        }
    }
}

/// One tag taking part in a slot.
#[derive(Debug, Clone, PartialEq)]
pub struct TagReply {
    pub params: TagParams,
    pub message: Message,
}

impl SlotConfig {
    pub fn validate(&self) -> Result<()> {
        self.population.validate()?;
        self.channel.validate()?;
        self.receiver.validate()?;
        let (lo, _) = self.population.period_range();
        crate::encoding::check_oversampling(lo, self.receiver.fs)?;
        if !(self.decoder.grid_density > 0.0) {
            return Err(crate::Error::Config("grid density must be positive".into()));
        }
        Ok(())
    }

    /// Record length covering the latest, slowest reply plus a guard of
    /// four subcarrier periods.
    pub fn record_len(&self) -> usize {
        let (_, a_max) = self.population.period_range();
        let t = self.population.delay_window
            + self.scheme.reply_duration(a_max, self.n_bits)
            + 4.0 * a_max;
        (t * self.receiver.fs).ceil() as usize
    }

    pub fn grid(&self) -> SearchGrid {
        SearchGrid::with_density(&self.population, self.scheme, self.decoder.grid_density)
    }

    /// SIC configuration for a slot with the given ground truth.
    pub fn sic_config(&self, mode: DecodeMode, truth: Vec<TagTruth>) -> SicConfig {
        let grid = self.grid();
        let tags = truth.len();
        let mut cfg = SicConfig::new(grid.clone(), Termination::Oracle { tags });
        cfg.n_bits = self.n_bits;
        cfg.max_iterations = match mode {
            DecodeMode::Single => 1,
            DecodeMode::Multi => self.decoder.max_iterations.max(1),
        };
        cfg.alpha = match self.decoder.alpha {
            AlphaKind::Peak => AlphaMode::Peak,
            AlphaKind::LeastSquares => AlphaMode::LeastSquares,
            AlphaKind::Perfect => AlphaMode::Perfect(truth),
        };
        if self.decoder.bandlimited_subtraction {
            cfg.subtraction = Subtraction::Bandlimited {
                bandwidth: self.receiver.bandwidth,
            };
        }
        if self.decoder.refine {
            cfg.refinement = Some(Refinement {
                a_step: grid.a_step() / 8.0,
                b_step: 1.0 / self.receiver.fs,
                half_width: ((grid.b_step() * self.receiver.fs).ceil() as usize).max(8),
            });
        }
        cfg
    }
}

/// A synthesized slot record with its ground truth.
#[derive(Debug, Clone)]
pub struct SlotRecord {
    pub tags: Vec<TagReply>,
    pub channel: ChannelRealization,
    pub envelope: SampledSignal<f64>,
}

impl SlotRecord {
    pub fn truth(&self) -> Vec<TagTruth> {
        self.tags
            .iter()
            .enumerate()
            .map(|(p, t)| TagTruth {
                params: t.params,
                envelope_step: self.channel.envelope_step(p),
            })
            .collect()
    }
}

pub fn draw_tags<R: Rng + ?Sized>(cfg: &SlotConfig, n_tags: usize, rng: &mut R) -> Vec<TagReply> {
    (0..n_tags)
        .map(|_| TagReply {
            params: draw_tag_params(rng, &cfg.population),
            message: Message::random(rng, cfg.n_bits),
        })
        .collect()
}

/// Draws a channel for `tags` and renders the received envelope.
pub fn synthesize<R: Rng + ?Sized>(cfg: &SlotConfig, tags: Vec<TagReply>, rng: &mut R) -> Result<SlotRecord> {
    let controls = tags
        .iter()
        .map(|t| generate_control_signal(t.params, cfg.scheme, &t.message, cfg.receiver.fs))
        .collect::<Result<Vec<_>>>()?;
    let channel = cfg.channel.draw(&cfg.population, tags.len(), rng);
    let zprime = superpose(&controls, &channel, &cfg.receiver, cfg.record_len(), rng)?;
    let envelope = lowpass_envelope(&zprime, &cfg.receiver)?;
    Ok(SlotRecord { tags, channel, envelope })
}

/// Result of decoding one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub n_tags: usize,
    /// Indices of the tags whose RN16 was recovered, in decoding order. The
    /// list stops at the first wrong decode.
    pub resolved: Vec<usize>,
    /// Number of decoded replies, including a trailing wrong one.
    pub attempts: usize,
}

impl SlotOutcome {
    pub fn failed_attempt(&self) -> bool {
        self.attempts > self.resolved.len()
    }
}

/// Decodes a synthesized record. A detection counts only if its bits match a
/// tag not yet resolved; decoding stops at the first detection that does not.
pub fn decode_record(cfg: &SlotConfig, record: &SlotRecord, mode: DecodeMode) -> Result<(SlotOutcome, SicOutcome)> {
    let sic = cfg.sic_config(mode, record.truth());
    let mut resolved = Vec::new();
    let outcome = sic_decode_with(
        &record.envelope,
        &sic,
        cfg.scheme,
        cfg.receiver.envelope_noise_variance(),
        |d| {
            let hit = record
                .tags
                .iter()
                .enumerate()
                .position(|(i, t)| t.message == d.reply.bits && !resolved.contains(&i));
            match hit {
                Some(i) => {
                    resolved.push(i);
                    true
                }
                None => false,
            }
        },
    )?;
    Ok((
        SlotOutcome {
            n_tags: record.tags.len(),
            attempts: outcome.decoded.len(),
            resolved,
        },
        outcome,
    ))
}

/// Draws `n_tags` replies and decodes the slot.
pub fn simulate_slot<R: Rng + ?Sized>(cfg: &SlotConfig, n_tags: usize, mode: DecodeMode, rng: &mut R) -> Result<SlotOutcome> {
    let tags = draw_tags(cfg, n_tags, rng);
    simulate_tags(cfg, tags, mode, rng)
}

/// Decodes a slot in which the given replies collide.
pub fn simulate_tags<R: Rng + ?Sized>(cfg: &SlotConfig, tags: Vec<TagReply>, mode: DecodeMode, rng: &mut R) -> Result<SlotOutcome> {
    if tags.is_empty() {
        return Ok(SlotOutcome {
            n_tags: 0,
            resolved: Vec::new(),
            attempts: 0,
        });
    }
    let record = synthesize(cfg, tags, rng)?;
    Ok(decode_record(cfg, &record, mode)?.0)
}
