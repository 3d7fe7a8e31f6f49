//! Successive interference cancellation: estimate the strongest reply,
//! decode it, subtract its reconstruction and repeat on the residual.

use std::io::Write;

use crate::channel::lowpass_real;
use crate::decoder::{build_cost_matrix, viterbi_decode, DecodedReply, RN16_BITS};
use crate::encoding::{preamble_select, render_states, state_half_cycle_sign, EncodingScheme, StateSelectMatrix, TagParams};
use crate::error::{Error, Result};
use crate::estimator::{compute_scalogram, estimate_alpha, estimate_beta, estimate_peak, PeakEstimate, SearchGrid};
use crate::signal::SampledSignal;

/// When the loop stops looking for further replies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    /// The number of replies in the record is known.
    Oracle { tags: usize },
    /// Stop once the residual variance is at most `k_sigma` times the noise
    /// variance.
    EnergyThreshold { k_sigma: f64 },
}

/// Envelope amplitude of one tag, used by [`AlphaMode::Perfect`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagTruth {
    pub params: TagParams,
    /// Signed step of the envelope when the tag switches on.
    pub envelope_step: f64,
}

/// How the amplitude of a decoded reply is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum AlphaMode {
    /// From the peak correlation of the preamble.
    Peak,
    /// Least-squares fit of the whole reconstructed reply to the residual.
    LeastSquares,
    /// Ground-truth amplitude of the tag closest to the estimated `(a, b)`.
    Perfect(Vec<TagTruth>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Subtraction {
    /// Subtract the square-wave reconstruction directly.
    SquareWave,
    /// Low-pass filter the reconstruction to the receiver bandwidth first.
    Bandlimited { bandwidth: f64 },
}

/// Second, finer search around the coarse scalogram peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub a_step: f64,
    pub b_step: f64,
    /// Points on each side of the coarse peak.
    pub half_width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SicConfig {
    pub max_iterations: usize,
    pub termination: Termination,
    pub grid: SearchGrid,
    pub alpha: AlphaMode,
    pub subtraction: Subtraction,
    pub refinement: Option<Refinement>,
    pub n_bits: usize,
}

impl SicConfig {
    pub fn new(grid: SearchGrid, termination: Termination) -> Self {
        Self {
            max_iterations: 8,
            termination,
            grid,
            alpha: AlphaMode::Peak,
            subtraction: Subtraction::SquareWave,
            refinement: None,
            n_bits: RN16_BITS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if let Termination::EnergyThreshold { k_sigma } = self.termination {
            if !(k_sigma > 0.0) {
                return Err(Error::Config(format!("k_sigma must be positive, got {k_sigma}")));
            }
        }
        if self.n_bits == 0 {
            return Err(Error::Config("replies must carry at least one bit".into()));
        }
        Ok(())
    }
}

/// One decoded reply with the estimates that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub reply: DecodedReply,
    pub peak: PeakEstimate,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Exhausted,
    BelowThreshold,
    RepeatedPeak,
    MaxIterations,
    /// The caller rejected the last detection.
    Rejected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SicOutcome {
    pub decoded: Vec<Detection>,
    /// `(a, b)` pairs already processed.
    pub history: Vec<(f64, f64)>,
    /// Residual energy before the first and after every subtraction.
    pub residual_energy_trace: Vec<f64>,
    pub stop: StopReason,
}

impl SicOutcome {
    pub fn write_diagnostics_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iteration,a,b,T,alpha,beta,residual_energy,phase_flipped,bits")?;
        for (i, d) in self.decoded.iter().enumerate() {
            writeln!(
                w,
                "{i},{:e},{:e},{:e},{:e},{:e},{:e},{},{}",
                d.peak.a,
                d.peak.b,
                d.peak.t_value,
                d.alpha,
                d.beta,
                self.residual_energy_trace[i + 1],
                d.peak.phase_flipped as u8,
                d.reply.bits
            )?;
        }
        Ok(())
    }
}

/// Energy of the mean-removed record, `Σ (z − z̄)²/fs`.
pub fn residual_energy(z: &SampledSignal<f64>) -> f64 {
    z.variance() * z.len() as f64 / z.fs
}

/// Model of one tag's envelope contribution:
/// `α·(ψ¹_{a,b} + Σ_n s_{k_n}(· − slot_n) + γ)` with unit-energy symbols,
/// i.e. `α·u·(1 ± 1)` on every half cycle, `u = 1/sqrt(a·M)`.
pub fn reconstruct_contribution(
    s_hat: &StateSelectMatrix,
    a: f64,
    b: f64,
    alpha: f64,
    scheme: EncodingScheme,
    fs: f64,
) -> Result<SampledSignal<f64>> {
    TagParams::new(a, b)?;
    let mut states = preamble_select(scheme).columns().to_vec();
    states.extend_from_slice(s_hat.columns());
    let level = alpha / (a * scheme.m() as f64).sqrt();
    Ok(render_states(scheme, &states, a, b, fs, 0, |s, h| {
        level * (1.0 + state_half_cycle_sign(scheme, s, h))
    }))
}

fn least_squares_alpha(residual: &SampledSignal<f64>, shape: &SampledSignal<f64>) -> f64 {
    let offset = shape.start_index() - residual.start_index();
    let pairs: Vec<(f64, f64)> = shape
        .samples
        .iter()
        .enumerate()
        .filter_map(|(i, &g)| {
            let j = offset + i as i64;
            (j >= 0 && (j as usize) < residual.len()).then(|| (residual.samples[j as usize], g))
        })
        .collect();
    if pairs.is_empty() {
        return 0.0;
    }
    let n = pairs.len() as f64;
    let (mr, mg) = pairs.iter().fold((0.0, 0.0), |(r, g), p| (r + p.0, g + p.1));
    let (mr, mg) = (mr / n, mg / n);
    let (num, den) = pairs.iter().fold((0.0, 0.0), |(num, den), &(r, g)| {
        (num + (r - mr) * (g - mg), den + (g - mg) * (g - mg))
    });
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn perfect_alpha(truth: &[TagTruth], peak: &PeakEstimate, scheme: EncodingScheme) -> f64 {
    let nearest = truth.iter().min_by(|x, y| {
        let d = |t: &TagTruth| ((t.params.period - peak.a).abs() + (t.params.delay - peak.b).abs()) / peak.a;
        d(x).total_cmp(&d(y))
    });
    match nearest {
        // envelope step equals the on-level 2·α·u
        Some(t) => t.envelope_step * (peak.a * scheme.m() as f64).sqrt() / 2.0,
        None => 0.0,
    }
}

fn locate(residual: &SampledSignal<f64>, cfg: &SicConfig, scheme: EncodingScheme) -> Result<PeakEstimate> {
    let coarse = estimate_peak(&compute_scalogram(residual, &cfg.grid, scheme)?);
    let Some(r) = cfg.refinement else {
        return Ok(coarse);
    };
    let (a_lo, a_hi) = (cfg.grid.a_values()[0], *cfg.grid.a_values().last().unwrap());
    let (b_lo, b_hi) = (cfg.grid.b_values()[0], *cfg.grid.b_values().last().unwrap());
    let local = SearchGrid::local(coarse.a, coarse.b, r.a_step, r.b_step, r.half_width)?;
    let a: Vec<f64> = local.a_values().iter().copied().filter(|a| (a_lo..=a_hi).contains(a)).collect();
    let b: Vec<f64> = local.b_values().iter().copied().filter(|b| (b_lo..=b_hi).contains(b)).collect();
    let grid = SearchGrid::new(a, b)?;
    let fine = estimate_peak(&compute_scalogram(residual, &grid, scheme)?);
    Ok(if fine.t_value.abs() >= coarse.t_value.abs() { fine } else { coarse })
}

/// Runs the cancellation loop on envelope `z`.
///
/// `noise_variance` is the envelope noise variance used by the threshold
/// termination rule.
pub fn sic_decode(
    z: &SampledSignal<f64>,
    cfg: &SicConfig,
    scheme: EncodingScheme,
    noise_variance: f64,
) -> Result<SicOutcome> {
    sic_decode_with(z, cfg, scheme, noise_variance, |_| true)
}

/// [`sic_decode`] with a verdict on every detection; the loop stops after
/// the first detection for which `accept` returns false (for example when
/// the tag does not answer the Ack).
pub fn sic_decode_with(
    z: &SampledSignal<f64>,
    cfg: &SicConfig,
    scheme: EncodingScheme,
    noise_variance: f64,
    mut accept: impl FnMut(&Detection) -> bool,
) -> Result<SicOutcome> {
    cfg.validate()?;
    let mut residual = z.clone();
    let mut out = SicOutcome {
        decoded: Vec::new(),
        history: Vec::new(),
        residual_energy_trace: vec![residual_energy(&residual)],
        stop: StopReason::MaxIterations,
    };
    for _ in 0..cfg.max_iterations {
        match cfg.termination {
            Termination::Oracle { tags } if out.decoded.len() >= tags => {
                out.stop = StopReason::Exhausted;
                return Ok(out);
            }
            Termination::EnergyThreshold { k_sigma } if residual.variance() <= k_sigma * noise_variance => {
                out.stop = StopReason::BelowThreshold;
                return Ok(out);
            }
            _ => {}
        }
        let beta = estimate_beta(&residual)?;
        let peak = locate(&residual, cfg, scheme)?;
        if out.history.contains(&(peak.a, peak.b)) {
            out.stop = StopReason::RepeatedPeak;
            return Ok(out);
        }
        let cost = build_cost_matrix(&residual, peak.a, peak.b, beta, scheme, cfg.n_bits)?;
        let reply = viterbi_decode(&cost, scheme, peak.phase_flipped);
        let alpha = match &cfg.alpha {
            AlphaMode::Peak => estimate_alpha(peak.t_value, peak.a, scheme),
            AlphaMode::LeastSquares => {
                let shape = reconstruct_contribution(&reply.s_hat, peak.a, peak.b, 1.0, scheme, z.fs)?;
                least_squares_alpha(&residual, &shape)
            }
            AlphaMode::Perfect(truth) => perfect_alpha(truth, &peak, scheme),
        };
        let q = reconstruct_contribution(&reply.s_hat, peak.a, peak.b, alpha, scheme, z.fs)?;
        match cfg.subtraction {
            Subtraction::SquareWave => residual.subtract(&q),
            Subtraction::Bandlimited { bandwidth } => {
                let mut full = SampledSignal::new(vec![0.0; residual.len()], residual.fs, residual.t0)?;
                full.accumulate(&q, 1.0);
                residual.subtract(&lowpass_real(&full, bandwidth));
            }
        }
        out.history.push((peak.a, peak.b));
        out.residual_energy_trace.push(residual_energy(&residual));
        let detection = Detection { reply, peak, alpha, beta };
        let keep = accept(&detection);
        out.decoded.push(detection);
        if !keep {
            out.stop = StopReason::Rejected;
            return Ok(out);
        }
    }
    Ok(out)
}
