//! Link period and delay estimation by preamble correlation.
//!
//! The mother function `ψ(t)` is the preamble rendered with unit-energy
//! symbols at unit subcarrier period. A daughter `ψ_{a,b}(t) = w(a)·ψ((t−b)/a)`
//! is correlated against the received envelope on a grid of `(a, b)` pairs;
//! the squared correlation (scalogram) peaks at the strongest tag.

use std::io::Write;

use rayon::prelude::*;

use crate::channel::PopulationModel;
use crate::encoding::{
    half_cycle_edges, preamble_select, state_half_cycle_sign, state_waveform, EncodingScheme,
};
use crate::error::{Error, Result};
use crate::signal::{prefix_sums, SampledSignal};

/// Daughter-function scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// `w(a) = 1/a`: the correlation of a tag of fixed amplitude does not
    /// depend on its link period.
    Match,
    /// `w(a) = 1/sqrt(a)`: every symbol has unit energy.
    UnitEnergy,
}

impl WeightMode {
    pub fn weight(self, a: f64) -> f64 {
        match self {
            WeightMode::Match => 1.0 / a,
            WeightMode::UnitEnergy => 1.0 / a.sqrt(),
        }
    }
}

/// Mother function `ψ(t)` at unitless time `t`; zero outside `[0, M·N_pr)`.
pub fn mother_eval(scheme: EncodingScheme, t: f64) -> f64 {
    let m = scheme.m() as f64;
    let pr = preamble_select(scheme);
    if !(t >= 0.0 && t < m * pr.len() as f64) {
        return 0.0;
    }
    let n = ((t / m).floor() as usize).min(pr.len() - 1);
    state_waveform(scheme, pr.columns()[n], 1.0, t - n as f64 * m).expect("unit period is valid")
}

/// Daughter function `w(a)·ψ((t−b)/a)`.
pub fn daughter_eval(scheme: EncodingScheme, a: f64, b: f64, mode: WeightMode, t: f64) -> Result<f64> {
    if !(a.is_finite() && a > 0.0) {
        return Err(Error::Parameter(format!("scale a must be positive, got {a}")));
    }
    Ok(mode.weight(a) * mother_eval(scheme, (t - b) / a))
}

/// Signs of the mother function on its `2·M·N_pr` half subcarrier cycles.
pub(crate) fn mother_half_cycle_signs(scheme: EncodingScheme) -> Vec<f64> {
    let hps = scheme.half_cycles_per_symbol();
    preamble_select(scheme)
        .columns()
        .iter()
        .flat_map(|&s| (0..hps).map(move |h| state_half_cycle_sign(scheme, s, h)))
        .collect()
}

/// Candidate link periods `𝓐` and delays `𝓑`.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchGrid {
    a_values: Vec<f64>,
    b_values: Vec<f64>,
}

fn linspace(lo: f64, hi: f64, max_step: f64) -> Vec<f64> {
    if hi <= lo {
        return vec![lo];
    }
    let n = ((hi - lo) / max_step - 1e-9).ceil().max(1.0) as usize;
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

impl SearchGrid {
    pub fn new(a_values: Vec<f64>, b_values: Vec<f64>) -> Result<Self> {
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        if a_values.is_empty() || b_values.is_empty() {
            return Err(Error::Parameter("search grid must be nonempty".into()));
        }
        if !increasing(&a_values) || !increasing(&b_values) {
            return Err(Error::Parameter("grid values must be strictly increasing".into()));
        }
        if !(a_values[0] > 0.0) || !(b_values[0] >= 0.0) {
            return Err(Error::Parameter("periods must be positive and delays non-negative".into()));
        }
        if a_values.iter().chain(&b_values).any(|x| !x.is_finite()) {
            return Err(Error::Parameter("grid values must be finite".into()));
        }
        Ok(Self { a_values, b_values })
    }

    /// Grid covering the legal period window and the delay window with
    /// `Δa ≤ a_min/(8·M·N_pr)` and `Δb = 1/(8·BLF)`.
    pub fn for_population(population: &PopulationModel, scheme: EncodingScheme) -> Self {
        Self::with_density(population, scheme, 1.0)
    }

    /// Like [`for_population`](Self::for_population) with both steps divided
    /// by `density`.
    pub fn with_density(population: &PopulationModel, scheme: EncodingScheme, density: f64) -> Self {
        let (lo, hi) = population.period_range();
        let a_step = lo / (8.0 * (scheme.m() * scheme.preamble_len()) as f64) / density;
        let b_step = 1.0 / (8.0 * population.nominal_blf) / density;
        Self {
            a_values: linspace(lo, hi, a_step),
            b_values: linspace(0.0, population.delay_window, b_step),
        }
    }

    /// Local grid of `2·n + 1` points per axis centred on `(a, b)`; delays
    /// are clipped at zero.
    pub fn local(a: f64, b: f64, a_step: f64, b_step: f64, n: usize) -> Result<Self> {
        let axis = |c: f64, step: f64, floor: f64| -> Vec<f64> {
            (-(n as i64)..=n as i64)
                .map(|i| c + i as f64 * step)
                .filter(|&x| x >= floor)
                .collect()
        };
        Self::new(axis(a, a_step, f64::MIN_POSITIVE), axis(b, b_step, 0.0))
    }

    pub fn a_values(&self) -> &[f64] {
        &self.a_values
    }

    pub fn b_values(&self) -> &[f64] {
        &self.b_values
    }

    pub fn a_step(&self) -> f64 {
        step(&self.a_values)
    }

    pub fn b_step(&self) -> f64 {
        step(&self.b_values)
    }

    pub fn len(&self) -> usize {
        self.a_values.len() * self.b_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn step(v: &[f64]) -> f64 {
    if v.len() < 2 {
        0.0
    } else {
        (v[v.len() - 1] - v[0]) / (v.len() - 1) as f64
    }
}

/// Signed correlation `T(a, b)` and energy `E = T²` over a grid.
/// Values are stored row-major by `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scalogram {
    pub a_values: Vec<f64>,
    pub b_values: Vec<f64>,
    pub t: Vec<f64>,
    pub e: Vec<f64>,
}

impl Scalogram {
    pub fn t_at(&self, ia: usize, ib: usize) -> f64 {
        self.t[ia * self.b_values.len() + ib]
    }

    pub fn e_at(&self, ia: usize, ib: usize) -> f64 {
        self.e[ia * self.b_values.len() + ib]
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "a,b,T,E")?;
        for (ia, a) in self.a_values.iter().enumerate() {
            for (ib, b) in self.b_values.iter().enumerate() {
                writeln!(w, "{a:e},{b:e},{:e},{:e}", self.t_at(ia, ib), self.e_at(ia, ib))?;
            }
        }
        Ok(())
    }
}

/// Location and sign of the scalogram maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakEstimate {
    pub a: f64,
    pub b: f64,
    pub t_value: f64,
    pub phase_flipped: bool,
}

/// Correlates `z` against preamble daughters.
///
/// `T(a, b) = Σ (z[n] − z̄)·ψ_{a,b}(t_n)/fs` with match weighting. Removing the
/// record mean first makes `T` exactly invariant to additive constants even
/// though the sampled template is only approximately zero-mean.
pub fn compute_scalogram(z: &SampledSignal<f64>, grid: &SearchGrid, scheme: EncodingScheme) -> Result<Scalogram> {
    let prefix = prefix_sums(&z.samples, z.mean());
    let t = scalogram_values(&prefix, z.fs, z.start_index(), grid, scheme)?;
    let e = t.iter().map(|x| x * x).collect();
    Ok(Scalogram {
        a_values: grid.a_values.clone(),
        b_values: grid.b_values.clone(),
        t,
        e,
    })
}

pub(crate) fn scalogram_values(
    prefix: &[f64],
    fs: f64,
    origin: i64,
    grid: &SearchGrid,
    scheme: EncodingScheme,
) -> Result<Vec<f64>> {
    let len = prefix.len() as i64 - 1;
    let signs = mother_half_cycle_signs(scheme);
    let amp = 1.0 / (scheme.m() as f64).sqrt();
    let nb = grid.b_values.len();
    let b_first = grid.b_values[0];
    let b_last = grid.b_values[nb - 1];
    for &a in [grid.a_values[0], grid.a_values[grid.a_values.len() - 1]].iter() {
        let first = half_cycle_edges(a, b_first, 0, 0, fs, origin)[0];
        let last = half_cycle_edges(a, b_last, signs.len(), 0, fs, origin)[0];
        if first < 0 || last > len {
            return Err(Error::Input(format!(
                "record too short: {len} samples starting at index {origin} do not cover the \
                 preamble search window"
            )));
        }
    }
    let rows: Vec<Vec<f64>> = grid
        .a_values
        .par_iter()
        .map(|&a| {
            let w = WeightMode::Match.weight(a) * amp / fs;
            grid.b_values
                .iter()
                .map(|&b| {
                    let edges = half_cycle_edges(a, b, 0, signs.len(), fs, origin);
                    let acc: f64 = signs
                        .iter()
                        .zip(edges.windows(2))
                        .map(|(s, e)| s * (prefix[e[1] as usize] - prefix[e[0] as usize]))
                        .sum();
                    w * acc
                })
                .collect()
        })
        .collect();
    Ok(rows.concat())
}

/// Maximum of `E`; ties go to the smallest `b`, then the smallest `a`.
pub fn estimate_peak(scal: &Scalogram) -> PeakEstimate {
    let na = scal.a_values.len();
    let nb = scal.b_values.len();
    assert!(na > 0 && nb > 0, "scalogram must be nonempty");
    let (mut best_a, mut best_b) = (0, 0);
    let mut best = f64::NEG_INFINITY;
    for ib in 0..nb {
        for ia in 0..na {
            let e = scal.e_at(ia, ib);
            if e > best {
                best = e;
                best_a = ia;
                best_b = ib;
            }
        }
    }
    let t_value = scal.t_at(best_a, best_b);
    PeakEstimate {
        a: scal.a_values[best_a],
        b: scal.b_values[best_b],
        t_value,
        phase_flipped: t_value < 0.0,
    }
}

/// Least-squares amplitude of the unit-energy reconstruction given the
/// peak correlation: `α = sqrt(a)·T/N_pr`. For FM0 this equals
/// `sqrt(a)·T/(sqrt(M)·N_pr)`.
pub fn estimate_alpha(t_peak: f64, a: f64, scheme: EncodingScheme) -> f64 {
    a.sqrt() * t_peak / scheme.preamble_len() as f64
}

/// Leak (DC) level of a record, taken as its mean.
pub fn estimate_beta(z: &SampledSignal<f64>) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::Input("cannot estimate the leak of an empty record".into()));
    }
    Ok(z.mean())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{generate_control_signal, Message, TagParams};
    use crate::rng::stream;
    use rand::Rng;

    const FS: f64 = 8e6;

    fn fm0() -> EncodingScheme {
        EncodingScheme::fm0(true)
    }

    fn integrate(f: impl Fn(f64) -> f64, t0: f64, t1: f64, n: usize) -> f64 {
        let h = (t1 - t0) / n as f64;
        (0..n).map(|i| f(t0 + (i as f64 + 0.5) * h)).sum::<f64>() * h
    }

    /// Places a control signal into a zero record of `len` samples.
    fn record(sig: &SampledSignal<f64>, len: usize, gain: f64, offset: f64) -> SampledSignal<f64> {
        let mut z = SampledSignal::new(vec![offset; len], FS, 0.0).unwrap();
        z.accumulate(sig, gain);
        z
    }

    fn direct_scalogram(z: &SampledSignal<f64>, grid: &SearchGrid, scheme: EncodingScheme) -> Vec<f64> {
        let mean = z.mean();
        let mut out = Vec::new();
        for &a in grid.a_values() {
            for &b in grid.b_values() {
                let t: f64 = z
                    .samples
                    .iter()
                    .enumerate()
                    .map(|(n, x)| {
                        let t = z.t0 + n as f64 / z.fs;
                        (x - mean) * daughter_eval(scheme, a, b, WeightMode::Match, t).unwrap()
                    })
                    .sum();
                out.push(t / z.fs);
            }
        }
        out
    }

    #[test]
    fn mother_moments() {
        for scheme in EncodingScheme::all() {
            let support = (scheme.m() * scheme.preamble_len()) as f64;
            let n = 2 * scheme.half_cycles_per_symbol() * scheme.preamble_len();
            let dc = integrate(|t| mother_eval(scheme, t), 0.0, support, n);
            let energy = integrate(|t| mother_eval(scheme, t).powi(2), 0.0, support, n);
            assert!(dc.abs() <= 1e-9, "{scheme}: {dc}");
            assert!((energy - scheme.preamble_len() as f64).abs() <= 1e-9, "{scheme}: {energy}");
            assert_eq!(mother_eval(scheme, -1e-9), 0.0);
            assert_eq!(mother_eval(scheme, support), 0.0);
        }
    }

    #[test]
    fn mother_starts_with_positive_pulse() {
        // first preamble column is s1 = +phi1, constant over the symbol
        let s = EncodingScheme::fm0(false);
        assert_eq!(mother_eval(s, 0.25), 1.0);
        assert_eq!(mother_eval(s, 0.75), 1.0);
        // then s2 = -phi0
        assert_eq!(mother_eval(s, 1.25), -1.0);
        assert_eq!(mother_eval(s, 1.75), 1.0);
    }

    #[test]
    fn daughter_scaling() {
        let s = EncodingScheme::fm0(false);
        for t in [0.1, 0.6, 2.3, 5.9] {
            for mode in [WeightMode::Match, WeightMode::UnitEnergy] {
                assert_eq!(daughter_eval(s, 1.0, 0.0, mode, t).unwrap(), mother_eval(s, t));
            }
            let d = daughter_eval(s, 2.0, 0.0, WeightMode::Match, 2.0 * t).unwrap();
            assert_eq!(d, 0.5 * mother_eval(s, t));
        }
        let a = 2e-5;
        let e = integrate(
            |t| daughter_eval(fm0(), a, 3e-6, WeightMode::UnitEnergy, t).unwrap().powi(2),
            3e-6,
            3e-6 + a * 18.0,
            3600,
        );
        assert!((e - 18.0).abs() < 1e-6);
        assert!(daughter_eval(s, 0.0, 0.0, WeightMode::Match, 0.1).is_err());
    }

    #[test]
    fn grid_covers_windows() {
        let pop = PopulationModel::default();
        let scheme = fm0();
        let grid = SearchGrid::for_population(&pop, scheme);
        let (lo, hi) = pop.period_range();
        assert_eq!(grid.a_values()[0], lo);
        assert!((grid.a_values().last().unwrap() - hi).abs() < 1e-18);
        assert!(grid.a_step() <= lo / (8.0 * 18.0) + 1e-18);
        assert!(grid.b_step() <= 2.5e-6);
        assert!((grid.b_values().last().unwrap() - 24e-6).abs() < 1e-15);
        assert!(SearchGrid::new(vec![1.0, 1.0], vec![0.0]).is_err());
        assert!(SearchGrid::new(vec![], vec![0.0]).is_err());
    }

    #[test]
    fn fast_scalogram_matches_direct_sum() {
        let mut rng = stream(11, 0);
        let scheme = EncodingScheme::fm0(false);
        let params = TagParams::new(1.9317e-5, 3.3131e-6).unwrap();
        let msg = Message::random(&mut rng, 16);
        let sig = generate_control_signal(params, scheme, &msg, FS).unwrap();
        let mut z = record(&sig, 6000, 0.7, 0.2);
        for x in &mut z.samples {
            *x += 0.05 * rng.random::<f64>();
        }
        let grid = SearchGrid::new(
            vec![1.7113e-5, 1.9317e-5, 2.2071e-5],
            vec![0.0123e-6, 1.1017e-6, 3.3131e-6, 7.0711e-6],
        )
        .unwrap();
        let fast = compute_scalogram(&z, &grid, scheme).unwrap();
        let slow = direct_scalogram(&z, &grid, scheme);
        for (f, s) in fast.t.iter().zip(&slow) {
            assert!((f - s).abs() <= 1e-9 * s.abs().max(1e-3), "{f} vs {s}");
        }
        for (t, e) in fast.t.iter().zip(&fast.e) {
            assert_eq!(*e, t * t);
        }
    }

    #[test]
    fn constant_records_give_zero_correlation() {
        let grid = SearchGrid::for_population(&PopulationModel::default(), fm0());
        let z = SampledSignal::new(vec![3.7; 10_000], FS, 0.0).unwrap();
        let s = compute_scalogram(&z, &grid, fm0()).unwrap();
        assert!(s.t.iter().all(|t| t.abs() < 1e-12));
    }

    #[test]
    fn correlation_ignores_offsets() {
        let mut rng = stream(12, 0);
        let params = TagParams::new(2e-5, 5e-6).unwrap();
        let sig = generate_control_signal(params, fm0(), &Message::random(&mut rng, 16), FS).unwrap();
        let grid = SearchGrid::for_population(&PopulationModel::default(), fm0());
        let base = compute_scalogram(&record(&sig, 9000, 1e-3, 0.0), &grid, fm0()).unwrap();
        let shifted = compute_scalogram(&record(&sig, 9000, 1e-3, 42.0), &grid, fm0()).unwrap();
        let scale = base.t.iter().fold(0.0f64, |m, t| m.max(t.abs()));
        for (x, y) in base.t.iter().zip(&shifted.t) {
            assert!((x - y).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn short_record_is_rejected() {
        let grid = SearchGrid::for_population(&PopulationModel::default(), fm0());
        let z = SampledSignal::new(vec![0.0; 1000], FS, 0.0).unwrap();
        assert!(matches!(compute_scalogram(&z, &grid, fm0()), Err(Error::Input(_))));
    }

    #[test]
    fn on_grid_peak_and_phase() {
        let mut rng = stream(13, 0);
        let pop = PopulationModel::default();
        let grid = SearchGrid::for_population(&pop, fm0());
        for _ in 0..10 {
            let ia = rng.random_range(0..grid.a_values().len());
            let ib = rng.random_range(0..grid.b_values().len());
            let params = TagParams::new(grid.a_values()[ia], grid.b_values()[ib]).unwrap();
            let sig = generate_control_signal(params, fm0(), &Message::random(&mut rng, 16), FS).unwrap();
            for gain in [2e-4, -2e-4] {
                let z = record(&sig, 9000, gain, 1e-3);
                let peak = estimate_peak(&compute_scalogram(&z, &grid, fm0()).unwrap());
                assert_eq!(peak.a, params.period);
                assert_eq!(peak.b, params.delay);
                assert_eq!(peak.phase_flipped, gain < 0.0);
            }
        }
    }

    #[test]
    fn peak_energy_falls_with_noise() {
        use crate::slot::{draw_tags, synthesize, SlotConfig};
        let mut last = f64::INFINITY;
        for noise in [-60.0, -40.0, -30.0, -20.0] {
            let mut cfg = SlotConfig::default();
            cfg.receiver.noise_power_dbm = Some(noise);
            let grid = cfg.grid();
            // same tag and channel for every noise level
            let mut peaks: Vec<f64> = (0..10)
                .map(|seed| {
                    let mut rng = stream(14, seed);
                    let tags = draw_tags(&cfg, 1, &mut rng);
                    let rec = synthesize(&cfg, tags, &mut rng).unwrap();
                    estimate_peak(&compute_scalogram(&rec.envelope, &grid, cfg.scheme).unwrap()).t_value.powi(2)
                })
                .collect();
            peaks.sort_by(f64::total_cmp);
            let median = 0.5 * (peaks[4] + peaks[5]);
            assert!(median < last, "{noise} dBm: {median} >= {last}");
            last = median;
        }
    }

    #[test]
    fn peak_ties_prefer_small_delay() {
        let scal = Scalogram {
            a_values: vec![1.0, 2.0],
            b_values: vec![0.0, 1.0],
            t: vec![0.0, -3.0, 3.0, 1.0],
            e: vec![0.0, 9.0, 9.0, 1.0],
        };
        let p = estimate_peak(&scal);
        assert_eq!((p.a, p.b, p.t_value), (2.0, 0.0, 3.0));
        assert!(!p.phase_flipped);
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(estimate_alpha(6.0, 1.0, EncodingScheme::fm0(false)), 1.0);
        let a = estimate_alpha(0.003, 2e-5, fm0());
        assert!((a - 7.454e-7).abs() < 1e-10);
    }

    #[test]
    fn beta_is_record_mean() {
        let z = SampledSignal::new(vec![2.5; 100], FS, 0.0).unwrap();
        assert_eq!(estimate_beta(&z).unwrap(), 2.5);
        assert!(estimate_beta(&SampledSignal::new(vec![], FS, 0.0).unwrap()).is_err());
    }

    #[test]
    fn scalogram_csv_has_one_row_per_point() {
        let grid = SearchGrid::new(vec![2e-5, 2.1e-5], vec![0.0, 1e-6, 2e-6]).unwrap();
        let z = SampledSignal::new(vec![1.0; 8000], FS, 0.0).unwrap();
        let mut buf = Vec::new();
        compute_scalogram(&z, &grid, fm0()).unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("a,b,T,E\n"));
    }
}
