//! Backscatter channel and reader front end.
//!
//! The pre-envelope record is
//! `z'(t) = Σ_p H_RTR,p·A·T_b·c_p(t − τ_p) + H_RR·A + L_ant + O(t)`;
//! the reader low-pass filters it with an ideal (brick-wall) filter of
//! bandwidth `W` and keeps the magnitude.
//!
//! Powers are referenced to 1 Ω: a carrier of power `P` watts has complex
//! amplitude `sqrt(2P)`, and complex noise of power `P` has `E|O|² = 2P`.

pub mod trace;

use std::cell::RefCell;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::encoding::TagParams;
use crate::error::{Error, Result};
use crate::signal::{accumulate_at, SampledSignal};

/// Largest relative deviation of a tag's link frequency from the nominal BLF.
pub const FREQUENCY_TOLERANCE: f64 = 0.22;

/// Largest spread of tag reply delays.
pub const MAX_DELAY_WINDOW: f64 = 24e-6;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Complex-baseband amplitude of a carrier of the given power.
pub fn amplitude_from_dbm(dbm: f64) -> f64 {
    (2.0 * dbm_to_watts(dbm)).sqrt()
}

/// Free-space (Friis) one-way amplitude gain with unity antenna gains.
pub fn friis_amplitude(distance_m: f64, carrier_freq: f64) -> f64 {
    SPEED_OF_LIGHT / (4.0 * PI * distance_m * carrier_freq)
}

/// Statistics of the tag population replying in a slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationModel {
    /// Nominal backscatter link frequency in Hz.
    pub nominal_blf: f64,
    /// Standard deviation of the link frequency in Hz.
    pub freq_sigma: f64,
    /// Reply delays are uniform on `[0, delay_window]`.
    pub delay_window: f64,
    pub distance_m: f64,
    pub carrier_freq: f64,
}

impl Default for PopulationModel {
    fn default() -> Self {
        let nominal_blf = 50e3;
        Self {
            nominal_blf,
            // ±22 % is the 3σ point
            freq_sigma: FREQUENCY_TOLERANCE * nominal_blf / 3.0,
            delay_window: MAX_DELAY_WINDOW,
            distance_m: 1.0,
            carrier_freq: 915e6,
        }
    }
}

impl PopulationModel {
    pub fn with_blf(nominal_blf: f64) -> Self {
        Self {
            nominal_blf,
            freq_sigma: FREQUENCY_TOLERANCE * nominal_blf / 3.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("nominal_blf", self.nominal_blf)?;
        positive("distance_m", self.distance_m)?;
        positive("carrier_freq", self.carrier_freq)?;
        if !(self.freq_sigma >= 0.0 && 3.0 * self.freq_sigma <= FREQUENCY_TOLERANCE * self.nominal_blf * (1.0 + 1e-12)) {
            return Err(Error::Config(format!(
                "freq_sigma {} Hz puts the 3σ point beyond ±22 % of {} Hz",
                self.freq_sigma, self.nominal_blf
            )));
        }
        if !(self.delay_window >= 0.0 && self.delay_window <= MAX_DELAY_WINDOW) {
            return Err(Error::Config(format!(
                "delay_window must lie in [0, {MAX_DELAY_WINDOW}] s, got {}",
                self.delay_window
            )));
        }
        Ok(())
    }

    pub fn nominal_period(&self) -> f64 {
        1.0 / self.nominal_blf
    }

    /// Shortest and longest legal subcarrier period.
    pub fn period_range(&self) -> (f64, f64) {
        (
            1.0 / ((1.0 + FREQUENCY_TOLERANCE) * self.nominal_blf),
            1.0 / ((1.0 - FREQUENCY_TOLERANCE) * self.nominal_blf),
        )
    }

    pub fn admits(&self, params: &TagParams) -> bool {
        let (lo, hi) = self.period_range();
        let eps = 1e-12 * hi;
        params.period >= lo - eps
            && params.period <= hi + eps
            && params.delay >= 0.0
            && params.delay <= self.delay_window + 1e-15
    }
}

/// Draws one tag's link period and delay: Gaussian link frequency truncated
/// to the legal window, uniform delay.
pub fn draw_tag_params<R: Rng + ?Sized>(rng: &mut R, model: &PopulationModel) -> TagParams {
    let f0 = model.nominal_blf;
    let f = loop {
        let z: f64 = rng.sample(StandardNormal);
        let f = f0 + model.freq_sigma * z;
        if (f - f0).abs() <= FREQUENCY_TOLERANCE * f0 {
            break f;
        }
    };
    let delay = if model.delay_window > 0.0 {
        rng.random_range(0.0..=model.delay_window)
    } else {
        0.0
    };
    TagParams {
        period: 1.0 / f,
        delay,
    }
}

/// Statistics of the one-way tag channel magnitude. The phase is always
/// uniform and the median power is the free-space loss.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TagFading {
    /// Free-space magnitude for every tag.
    #[default]
    None,
    /// Log-normal shadowing of the power with standard deviation `sigma_db`.
    LogNormal { sigma_db: f64 },
    /// Rician fading with K-factor `k` (`k = 0` is Rayleigh); mean power is
    /// the free-space loss.
    Rician { k: f64 },
}

/// Knobs of the link budget. None of these are fixed by the physical model;
/// they set the operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    /// Reader transmit power.
    pub tx_power_dbm: f64,
    /// Fraction of incident power a tag backscatters, `T_b`.
    pub backscatter_fraction: f64,
    /// Direct antenna leakage `L_ant` (line of sight, deterministic).
    pub antenna_leak: Complex64,
    /// RMS magnitude of the Rayleigh reader-to-reader coefficient `H_RR`.
    pub reader_leak_scale: f64,
    /// Variation of the one-way tag channel `H_RT` around free space.
    #[serde(default)]
    pub tag_fading: TagFading,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            tx_power_dbm: 36.0,
            backscatter_fraction: 0.5,
            antenna_leak: Complex64::new(0.0, 0.0),
            reader_leak_scale: 1e-5,
            tag_fading: TagFading::LogNormal { sigma_db: 3.0 },
        }
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.backscatter_fraction > 0.0 && self.backscatter_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "backscatter fraction must lie in (0, 1], got {}",
                self.backscatter_fraction
            )));
        }
        if !(self.reader_leak_scale >= 0.0 && self.reader_leak_scale.is_finite()) {
            return Err(Error::Config("reader leak scale must be non-negative".into()));
        }
        match self.tag_fading {
            TagFading::Rician { k } if !(k >= 0.0 && k.is_finite()) => {
                return Err(Error::Config(format!("K-factor must be non-negative, got {k}")));
            }
            TagFading::LogNormal { sigma_db } if !(sigma_db >= 0.0 && sigma_db.is_finite()) => {
                return Err(Error::Config(format!("shadowing spread must be non-negative, got {sigma_db}")));
            }
            _ => {}
        }
        if !self.tx_power_dbm.is_finite() {
            return Err(Error::Config("tx power must be finite".into()));
        }
        Ok(())
    }

    /// Draws per-tag round-trip coefficients (Friis magnitude, uniform phase,
    /// squared for reciprocity) and a Rayleigh reader-to-reader coefficient.
    pub fn draw<R: Rng + ?Sized>(
        &self,
        population: &PopulationModel,
        n_tags: usize,
        rng: &mut R,
    ) -> ChannelRealization {
        let gain = friis_amplitude(population.distance_m, population.carrier_freq);
        let round_trip: Vec<Complex64> = (0..n_tags)
            .map(|_| {
                let los = Complex64::from_polar(gain, rng.random_range(0.0..2.0 * PI));
                let h_rt = match self.tag_fading {
                    TagFading::None => los,
                    TagFading::LogNormal { sigma_db } => {
                        let db = sigma_db * rng.sample::<f64, _>(StandardNormal);
                        los * 10f64.powf(db / 20.0)
                    }
                    TagFading::Rician { k } => {
                        let s = gain / (2.0 * (k + 1.0)).sqrt();
                        let scatter = Complex64::new(
                            s * rng.sample::<f64, _>(StandardNormal),
                            s * rng.sample::<f64, _>(StandardNormal),
                        );
                        los * (k / (k + 1.0)).sqrt() + scatter
                    }
                };
                h_rt * h_rt
            })
            .collect();
        let s = self.reader_leak_scale / 2f64.sqrt();
        let h_rr = Complex64::new(
            s * rng.sample::<f64, _>(StandardNormal),
            s * rng.sample::<f64, _>(StandardNormal),
        );
        ChannelRealization {
            round_trip,
            reader_leak: h_rr,
            antenna_leak: self.antenna_leak,
            carrier_amplitude: amplitude_from_dbm(self.tx_power_dbm),
            backscatter_fraction: self.backscatter_fraction,
        }
    }
}

/// Coefficients of one slot (flat fading over the reply).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    /// `H_RTR,p` per tag.
    pub round_trip: Vec<Complex64>,
    /// `H_RR`.
    pub reader_leak: Complex64,
    /// `L_ant`.
    pub antenna_leak: Complex64,
    /// `A`.
    pub carrier_amplitude: f64,
    /// `T_b`.
    pub backscatter_fraction: f64,
}

impl ChannelRealization {
    /// Constant part of the record, `H_RR·A + L_ant`.
    pub fn leak(&self) -> Complex64 {
        self.reader_leak * self.carrier_amplitude + self.antenna_leak
    }

    /// Complex amplitude of tag `p` while it reflects.
    pub fn tag_amplitude(&self, p: usize) -> Complex64 {
        self.round_trip[p] * self.carrier_amplitude * self.backscatter_fraction
    }

    /// Envelope change when tag `p` alone switches from absorb to reflect,
    /// `|L + y_p| − |L|`. Negative when the tag appears phase flipped.
    pub fn envelope_step(&self, p: usize) -> f64 {
        let l = self.leak();
        (l + self.tag_amplitude(p)).norm() - l.norm()
    }
}

/// Reader receive chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceiverConfig {
    /// Positive bandwidth `W` of the ideal low-pass filter in Hz.
    pub bandwidth: f64,
    /// Sample rate in Hz.
    pub fs: f64,
    /// AWGN power at the reader antenna over the sampled band; `None` for a
    /// noiseless receiver.
    pub noise_power_dbm: Option<f64>,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self {
            bandwidth: 1.5e6,
            fs: 8e6,
            noise_power_dbm: Some(-50.0),
        }
    }
}

impl ReceiverConfig {
    pub fn noiseless(self) -> Self {
        Self {
            noise_power_dbm: None,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::Config(format!("bandwidth must be positive, got {}", self.bandwidth)));
        }
        if !(self.fs > 2.0 * self.bandwidth && self.fs.is_finite()) {
            return Err(Error::Config(format!(
                "sample rate {} Hz must exceed twice the bandwidth {} Hz",
                self.fs, self.bandwidth
            )));
        }
        Ok(())
    }

    pub fn noise_power_watts(&self) -> f64 {
        self.noise_power_dbm.map_or(0.0, dbm_to_watts)
    }

    /// Variance of the envelope noise after the low-pass filter when the
    /// envelope is dominated by a constant carrier component (the in-phase
    /// noise component survives).
    pub fn envelope_noise_variance(&self) -> f64 {
        self.noise_power_watts() * 2.0 * self.bandwidth / self.fs
    }
}

/// Sums the delayed, channel-scaled control signals, the leak and AWGN into a
/// complex record of `len` samples starting at time zero.
///
/// `controls[p]` must already start at the tag's delay (see
/// [`generate_control_signal`](crate::encoding::generate_control_signal)).
pub fn superpose<R: Rng + ?Sized>(
    controls: &[SampledSignal<f64>],
    ch: &ChannelRealization,
    rx: &ReceiverConfig,
    len: usize,
    rng: &mut R,
) -> Result<SampledSignal<Complex64>> {
    if controls.len() != ch.round_trip.len() {
        return Err(Error::Config(format!(
            "{} control signals but {} channel coefficients",
            controls.len(),
            ch.round_trip.len()
        )));
    }
    if let Some(c) = controls.iter().find(|c| c.fs != rx.fs) {
        return Err(Error::Config(format!(
            "control signal sampled at {} Hz, receiver at {} Hz",
            c.fs, rx.fs
        )));
    }
    let mut samples = vec![ch.leak(); len];
    for (p, c) in controls.iter().enumerate() {
        let amp = ch.tag_amplitude(p);
        accumulate_at(&mut samples, &c.samples, c.start_index(), |x| amp * x);
    }
    if rx.noise_power_dbm.is_some() {
        let sigma = rx.noise_power_watts().sqrt();
        for s in &mut samples {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *s += Complex64::new(sigma * re, sigma * im);
        }
    }
    SampledSignal::new(samples, rx.fs, 0.0)
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Ideal low-pass filter over a padded record. The padding interpolates
/// linearly from the last sample back to the first so that the periodic
/// extension has no jump.
pub fn brickwall_lowpass(samples: &[Complex64], fs: f64, bandwidth: f64) -> Vec<Complex64> {
    let len = samples.len();
    if len == 0 {
        return Vec::new();
    }
    let n = (len + len / 4 + 64).next_power_of_two();
    let pad = n - len;
    let (first, last) = (samples[0], samples[len - 1]);
    let mut buf: Vec<Complex64> = Vec::with_capacity(n);
    buf.extend_from_slice(samples);
    for i in 0..pad {
        let w = (i + 1) as f64 / (pad + 1) as f64;
        buf.push(last * (1.0 - w) + first * w);
    }
    PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        planner.plan_fft_forward(n).process(&mut buf);
        let df = fs / n as f64;
        for (k, x) in buf.iter_mut().enumerate() {
            let f = if k <= n / 2 { k as f64 * df } else { (n - k) as f64 * df };
            if f > bandwidth {
                *x = Complex64::new(0.0, 0.0);
            }
        }
        planner.plan_fft_inverse(n).process(&mut buf);
    });
    let scale = 1.0 / n as f64;
    buf.truncate(len);
    for x in &mut buf {
        *x *= scale;
    }
    buf
}

/// Received low-pass envelope `z(t) = |h_l * z'|`.
pub fn lowpass_envelope(zprime: &SampledSignal<Complex64>, rx: &ReceiverConfig) -> Result<SampledSignal<f64>> {
    rx.validate()?;
    let filtered = brickwall_lowpass(&zprime.samples, zprime.fs, rx.bandwidth);
    SampledSignal::new(filtered.iter().map(|z| z.norm()).collect(), zprime.fs, zprime.t0)
}

/// Ideal low-pass filter of a real signal.
pub fn lowpass_real(x: &SampledSignal<f64>, bandwidth: f64) -> SampledSignal<f64> {
    let c: Vec<Complex64> = x.samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    SampledSignal {
        samples: brickwall_lowpass(&c, x.fs, bandwidth).iter().map(|z| z.re).collect(),
        fs: x.fs,
        t0: x.t0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{generate_control_signal, EncodingScheme, Message};
    use crate::rng::stream;

    fn unit_channel(tags: Vec<Complex64>, leak: Complex64) -> ChannelRealization {
        ChannelRealization {
            round_trip: tags,
            reader_leak: Complex64::new(0.0, 0.0),
            antenna_leak: leak,
            carrier_amplitude: 1.0,
            backscatter_fraction: 1.0,
        }
    }

    #[test]
    fn degenerate_population_gives_nominal_period() {
        let model = PopulationModel {
            freq_sigma: 0.0,
            ..PopulationModel::default()
        };
        let mut rng = stream(1, 0);
        for _ in 0..10 {
            let p = draw_tag_params(&mut rng, &model);
            assert!((p.period - 2e-5).abs() < 1e-18);
            assert!(model.admits(&p));
        }
    }

    #[test]
    fn three_sigma_matches_tolerance() {
        let model = PopulationModel::default();
        assert!((3.0 * model.freq_sigma - 0.22 * model.nominal_blf).abs() < 1e-9);
        let mut rng = stream(9, 0);
        let inside = (0..100_000)
            .filter(|_| {
                let z: f64 = rng.sample(StandardNormal);
                (model.freq_sigma * z).abs() <= 0.22 * model.nominal_blf
            })
            .count();
        assert!((inside as f64 / 1e5 - 0.9973).abs() < 1e-3);
    }

    #[test]
    fn population_mean_converges() {
        let model = PopulationModel::default();
        let mut rng = stream(2, 0);
        let n = 100_000;
        let mut sum_f = 0.0;
        let mut sum_d = 0.0;
        for _ in 0..n {
            let p = draw_tag_params(&mut rng, &model);
            assert!(model.admits(&p));
            sum_f += p.link_frequency();
            sum_d += p.delay;
        }
        assert!((sum_f / n as f64 / 50e3 - 1.0).abs() < 0.005);
        assert!((sum_d / n as f64 / 12e-6 - 1.0).abs() < 0.02);
    }

    #[test]
    fn population_validation() {
        let mut m = PopulationModel::default();
        assert!(m.validate().is_ok());
        m.freq_sigma = 0.1 * m.nominal_blf;
        assert!(m.validate().is_err());
        let m = PopulationModel {
            delay_window: 1e-3,
            ..PopulationModel::default()
        };
        assert!(m.validate().is_err());
    }

    #[test]
    fn empty_superposition_is_leak() {
        let leak = Complex64::new(0.3, -0.4);
        let ch = unit_channel(vec![], leak);
        let rx = ReceiverConfig::default().noiseless();
        let z = superpose(&[], &ch, &rx, 100, &mut stream(0, 0)).unwrap();
        assert!(z.samples.iter().all(|&s| s == leak));
        let env = lowpass_envelope(&z, &rx).unwrap();
        assert!(env.samples.iter().all(|&s| (s - 0.5).abs() < 1e-12));
    }

    #[test]
    fn single_tag_is_on_off_scaled() {
        let scheme = EncodingScheme::fm0(true);
        let p = TagParams::new(2e-5, 3e-6).unwrap();
        let c = generate_control_signal(p, scheme, &Message::from_u16(0xBEEF), 8e6).unwrap();
        let h = Complex64::new(1e-3, 2e-3);
        let ch = ChannelRealization {
            round_trip: vec![h],
            reader_leak: Complex64::new(0.0, 0.0),
            antenna_leak: Complex64::new(0.0, 0.0),
            carrier_amplitude: 1.5,
            backscatter_fraction: 0.5,
        };
        let rx = ReceiverConfig::default().noiseless();
        let z = superpose(&[c], &ch, &rx, 7000, &mut stream(0, 0)).unwrap();
        let on = h * 1.5 * 0.5;
        assert!(z.samples.iter().all(|&s| s == Complex64::new(0.0, 0.0) || s == on));
        assert!(z.samples.iter().any(|&s| s == on));
    }

    #[test]
    fn superposition_is_linear() {
        let scheme = EncodingScheme::fm0(false);
        let c1 = generate_control_signal(TagParams::new(2e-5, 0.0).unwrap(), scheme, &Message::from_u16(1), 8e6).unwrap();
        let c2 = generate_control_signal(TagParams::new(2.3e-5, 5e-6).unwrap(), scheme, &Message::from_u16(9), 8e6).unwrap();
        let leak = Complex64::new(0.1, 0.2);
        let (h1, h2) = (Complex64::new(0.01, 0.0), Complex64::new(0.0, -0.02));
        let rx = ReceiverConfig::default().noiseless();
        let mut r = stream(0, 0);
        let both = superpose(&[c1.clone(), c2.clone()], &unit_channel(vec![h1, h2], leak), &rx, 5000, &mut r).unwrap();
        let one = superpose(&[c1], &unit_channel(vec![h1], leak), &rx, 5000, &mut r).unwrap();
        let two = superpose(&[c2], &unit_channel(vec![h2], leak), &rx, 5000, &mut r).unwrap();
        for i in 0..5000 {
            let d = both.samples[i] - (one.samples[i] + two.samples[i] - leak);
            assert!(d.norm() < 1e-15);
        }
    }

    #[test]
    fn mismatched_rate_is_rejected() {
        let c = SampledSignal::new(vec![1.0; 10], 4e6, 0.0).unwrap();
        let ch = unit_channel(vec![Complex64::new(1.0, 0.0)], Complex64::new(0.0, 0.0));
        let rx = ReceiverConfig::default();
        assert!(matches!(superpose(&[c], &ch, &rx, 10, &mut stream(0, 0)), Err(Error::Config(_))));
    }

    #[test]
    fn noise_power_is_calibrated() {
        let ch = unit_channel(vec![], Complex64::new(0.0, 0.0));
        let rx = ReceiverConfig::default();
        let z = superpose(&[], &ch, &rx, 1_000_000, &mut stream(3, 0)).unwrap();
        let p = z.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / z.len() as f64 / 2.0;
        assert!((p / dbm_to_watts(-50.0) - 1.0).abs() < 0.05);
    }

    #[test]
    fn noisy_records_are_reproducible() {
        let ch = unit_channel(vec![], Complex64::new(1.0, 0.0));
        let rx = ReceiverConfig::default();
        let a = superpose(&[], &ch, &rx, 1000, &mut stream(5, 1)).unwrap();
        let b = superpose(&[], &ch, &rx, 1000, &mut stream(5, 1)).unwrap();
        assert_eq!(a, b);
        let ea = lowpass_envelope(&a, &rx).unwrap();
        let eb = lowpass_envelope(&b, &rx).unwrap();
        assert_eq!(ea, eb);
    }

    #[test]
    fn channel_draw_respects_reciprocity() {
        let model = ChannelModel {
            tx_power_dbm: 30.0,
            reader_leak_scale: 1e-3,
            tag_fading: TagFading::None,
            ..ChannelModel::default()
        };
        let pop = PopulationModel::default();
        let ch = model.draw(&pop, 4, &mut stream(4, 0));
        let g = friis_amplitude(1.0, 915e6);
        for h in &ch.round_trip {
            assert!((h.norm() - g * g).abs() < 1e-15);
            // a square root of H_RTR has the Friis magnitude
            assert!((h.sqrt().norm() - g).abs() < 1e-15);
        }
        assert!((ch.carrier_amplitude - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn tone_at_twice_bandwidth_is_rejected() {
        let rx = ReceiverConfig::default().noiseless();
        let n = 8192;
        let f = 2.0 * rx.bandwidth;
        let x: Vec<Complex64> = (0..n)
            .map(|i| Complex64::from_polar(1.0, 2.0 * PI * f * i as f64 / rx.fs))
            .collect();
        let y = brickwall_lowpass(&x, rx.fs, rx.bandwidth);
        let mid = &y[n / 4..3 * n / 4];
        let p = mid.iter().map(|z| z.norm_sqr()).sum::<f64>() / mid.len() as f64;
        assert!(10.0 * p.log10() <= -40.0, "{p}");
    }

    #[test]
    fn envelope_is_nonnegative_and_two_level() {
        let scheme = EncodingScheme::fm0(true);
        let p = TagParams::new(2e-5, 0.0).unwrap();
        let c = generate_control_signal(p, scheme, &Message::from_u16(0x1234), 8e6).unwrap();
        let leak = Complex64::new(0.5, 0.0);
        let h = Complex64::new(0.0, 0.2);
        let ch = unit_channel(vec![h], leak);
        let rx = ReceiverConfig::default().noiseless();
        let z = lowpass_envelope(&superpose(&[c.clone()], &ch, &rx, c.len(), &mut stream(0, 0)).unwrap(), &rx).unwrap();
        assert!(z.samples.iter().all(|&x| x >= 0.0));
        let (lo, hi) = (leak.norm(), (leak + h).norm());
        // away from transitions the envelope settles on the two levels
        for (i, &ci) in c.samples.iter().enumerate().skip(200).take(4000) {
            let w = &c.samples[i.saturating_sub(40)..(i + 40).min(c.len())];
            if w.iter().all(|&v| v == ci) {
                let want = if ci == 1.0 { hi } else { lo };
                assert!((z.samples[i] - want).abs() < 0.02 * hi, "{i}");
            }
        }
    }

    #[test]
    fn tag_fading_statistics() {
        let pop = PopulationModel::default();
        let g2 = friis_amplitude(1.0, 915e6).powi(2);
        let n = 4000;
        let shadowed = ChannelModel {
            tag_fading: TagFading::LogNormal { sigma_db: 3.0 },
            ..ChannelModel::default()
        };
        let ch = shadowed.draw(&pop, n, &mut stream(8, 0));
        // |H_RTR| in dB is Gaussian with twice the one-way spread
        let db: Vec<f64> = ch.round_trip.iter().map(|h| 20.0 * (h.norm() / g2).log10()).collect();
        let mean = db.iter().sum::<f64>() / n as f64;
        let sd = (db.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!(mean.abs() < 0.3, "{mean}");
        assert!((sd - 6.0).abs() < 0.3, "{sd}");

        let rician = ChannelModel {
            tag_fading: TagFading::Rician { k: 2.0 },
            ..ChannelModel::default()
        };
        let ch = rician.draw(&pop, n, &mut stream(8, 1));
        // E|h_RT|^2 equals the free-space power
        let p = ch.round_trip.iter().map(|h| h.norm() / g2).sum::<f64>() / n as f64;
        assert!((p - 1.0).abs() < 0.06, "{p}");

        let bad = ChannelModel {
            tag_fading: TagFading::LogNormal { sigma_db: -1.0 },
            ..ChannelModel::default()
        };
        assert!(bad.validate().is_err());
        let bad = ChannelModel {
            tag_fading: TagFading::Rician { k: f64::NAN },
            ..ChannelModel::default()
        };
        assert!(bad.validate().is_err());
    }
}
