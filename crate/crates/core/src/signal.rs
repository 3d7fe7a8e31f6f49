use num_complex::Complex64;

use crate::error::{Error, Result};

/// A uniformly sampled waveform.
///
/// Sample `n` represents the interval `[t0 + n/fs, t0 + (n+1)/fs)`. Real
/// envelopes use `f64`, pre-envelope records use [`Complex64`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal<T = f64> {
    pub samples: Vec<T>,
    pub fs: f64,
    pub t0: f64,
}

impl<T> SampledSignal<T> {
    pub fn new(samples: Vec<T>, fs: f64, t0: f64) -> Result<Self> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::Parameter(format!("sample rate must be positive, got {fs}")));
        }
        Ok(Self { samples, fs, t0 })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    /// Index of the first sample, counted from time zero.
    pub fn start_index(&self) -> i64 {
        (self.t0 * self.fs).round() as i64
    }
}

impl SampledSignal<f64> {
    pub fn zeros(len: usize, fs: f64) -> Result<Self> {
        Self::new(vec![0.0; len], fs, 0.0)
    }

    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn variance(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let m = self.mean();
        self.samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / self.samples.len() as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    /// Adds `other` (which may start later) into `self`, scaled by `gain`.
    /// Samples of `other` that fall outside `self` are dropped.
    pub fn accumulate(&mut self, other: &SampledSignal<f64>, gain: f64) {
        let offset = other.start_index() - self.start_index();
        accumulate_at(&mut self.samples, &other.samples, offset, |x| x * gain);
    }

    pub fn subtract(&mut self, other: &SampledSignal<f64>) {
        self.accumulate(other, -1.0);
    }
}

impl SampledSignal<Complex64> {
    pub fn magnitude(&self) -> SampledSignal<f64> {
        SampledSignal {
            samples: self.samples.iter().map(|z| z.norm()).collect(),
            fs: self.fs,
            t0: self.t0,
        }
    }
}

pub(crate) fn accumulate_at<S: Copy, T: std::ops::AddAssign>(
    dst: &mut [T],
    src: &[S],
    offset: i64,
    map: impl Fn(S) -> T,
) {
    for (i, &x) in src.iter().enumerate() {
        let j = offset + i as i64;
        if j < 0 {
            continue;
        }
        match dst.get_mut(j as usize) {
            Some(d) => *d += map(x),
            None => break,
        }
    }
}

/// Index of the first sample at or after time `t`.
///
/// A waveform transition at time `t` takes effect at sample `ceil(t*fs)`; the
/// small tolerance absorbs floating-point noise when `t*fs` is integral.
pub fn edge_index(t: f64, fs: f64) -> i64 {
    (t * fs - 1e-7).ceil() as i64
}

/// Prefix sums of `samples - offset`, `out[i] = sum(samples[..i] - offset)`.
pub(crate) fn prefix_sums(samples: &[f64], offset: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples.len() + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for &x in samples {
        acc += x - offset;
        out.push(acc);
    }
    out
}
