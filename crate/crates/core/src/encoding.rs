//! FM0 and Miller line coding of tag replies.
//!
//! Every waveform here is piecewise constant on half subcarrier cycles, so a
//! symbol of scheme `M` is described by `2M` signs. The closed-form basis
//! functions ([`basis_waveform`], [`signal_waveform`]) are evaluated pointwise;
//! the sampled generators use the half-cycle sign patterns and
//! [`edge_index`](crate::signal::edge_index) so that a tag waveform and a
//! receiver template built for the same `(a, b)` share sample edges exactly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{edge_index, SampledSignal};

/// Minimum number of samples per half subcarrier cycle accepted by the
/// sampled generators.
pub const MIN_SAMPLES_PER_HALF_CYCLE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineCode {
    Fm0,
    Miller,
}

/// Line code, subcarrier cycles per symbol and preamble selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "SchemeFields", into = "SchemeFields")]
pub struct EncodingScheme {
    code: LineCode,
    m: usize,
    trext: bool,
}

#[derive(Serialize, Deserialize)]
struct SchemeFields {
    code: LineCode,
    m: usize,
    trext: bool,
}

impl TryFrom<SchemeFields> for EncodingScheme {
    type Error = Error;

    fn try_from(f: SchemeFields) -> Result<Self> {
        Self::new(f.code, f.m, f.trext)
    }
}

impl From<EncodingScheme> for SchemeFields {
    fn from(s: EncodingScheme) -> Self {
        Self {
            code: s.code,
            m: s.m,
            trext: s.trext,
        }
    }
}

impl EncodingScheme {
    pub fn new(code: LineCode, m: usize, trext: bool) -> Result<Self> {
        match (code, m) {
            (LineCode::Fm0, 1) | (LineCode::Miller, 2 | 4 | 8) => Ok(Self { code, m, trext }),
            _ => Err(Error::Parameter(format!(
                "{code:?} does not support M = {m} (FM0 needs 1, Miller 2, 4 or 8)"
            ))),
        }
    }

    pub fn fm0(trext: bool) -> Self {
        Self { code: LineCode::Fm0, m: 1, trext }
    }

    pub fn miller(m: usize, trext: bool) -> Result<Self> {
        Self::new(LineCode::Miller, m, trext)
    }

    /// FM0 and every Miller order, each with both preambles.
    pub fn all() -> Vec<Self> {
        let mut out = Vec::new();
        for trext in [false, true] {
            out.push(Self::fm0(trext));
            for m in [2, 4, 8] {
                out.push(Self { code: LineCode::Miller, m, trext });
            }
        }
        out
    }

    pub fn code(&self) -> LineCode {
        self.code
    }

    /// Subcarrier cycles per symbol.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn trext(&self) -> bool {
        self.trext
    }

    /// Number of preamble symbols `N_pr`.
    pub fn preamble_len(&self) -> usize {
        match (self.code, self.trext) {
            (LineCode::Fm0, false) => 6,
            (LineCode::Fm0, true) => 18,
            (LineCode::Miller, false) => 10,
            (LineCode::Miller, true) => 26,
        }
    }

    pub fn half_cycles_per_symbol(&self) -> usize {
        2 * self.m
    }

    /// Duration of one symbol for subcarrier period `period`.
    pub fn symbol_duration(&self, period: f64) -> f64 {
        period * self.m as f64
    }

    pub fn preamble_duration(&self, period: f64) -> f64 {
        self.symbol_duration(period) * self.preamble_len() as f64
    }

    /// Preamble, `n_bits` data symbols and the postamble.
    pub fn reply_duration(&self, period: f64, n_bits: usize) -> f64 {
        self.symbol_duration(period) * (self.preamble_len() + n_bits + 1) as f64
    }
}

impl std::fmt::Display for EncodingScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.code {
            LineCode::Fm0 => write!(f, "FM0")?,
            LineCode::Miller => write!(f, "Miller-{}", self.m)?,
        }
        write!(f, "/TRext={}", self.trext as u8)
    }
}

/// One of the four signal waveforms `s_0..s_3`; column `e_{k+1}` of a state
/// select matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum State {
    S0 = 0,
    S1 = 1,
    S2 = 2,
    S3 = 3,
}

/// Signal-space matrix `V`; column `k` holds the basis coefficients of `s_k`.
pub const SIGNAL_SPACE: [[i8; 4]; 2] = [[1, 0, -1, 0], [0, 1, 0, -1]];

impl State {
    pub const ALL: [State; 4] = [State::S0, State::S1, State::S2, State::S3];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(k: usize) -> Option<State> {
        Self::ALL.get(k).copied()
    }

    /// Coordinate vector `e_{k+1}`.
    pub fn coordinate(self) -> [u8; 4] {
        let mut e = [0; 4];
        e[self.index()] = 1;
        e
    }

    /// Which basis function the waveform uses.
    pub fn basis(self) -> usize {
        self.index() % 2
    }

    /// Sign of the basis coefficient in `V`.
    pub fn sign(self) -> f64 {
        f64::from(SIGNAL_SPACE[self.basis()][self.index()])
    }

    /// The waveform seen after a complete (π) channel phase shift.
    pub fn flipped(self) -> State {
        Self::ALL[(self.index() + 2) % 4]
    }
}

/// Binary message backscattered by a tag (the RN16 in a slot reply).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Message {
    bits: Vec<u8>,
}

impl Message {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Parameter(format!("message bits must be 0 or 1, got {b}")));
        }
        Ok(Self { bits })
    }

    /// Most significant bit first.
    pub fn from_u16(value: u16) -> Self {
        Self {
            bits: (0..16).rev().map(|i| ((value >> i) & 1) as u8).collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Self {
        Self {
            bits: (0..len).map(|_| rng.random_range(0..=1u8)).collect(),
        }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

impl std::fmt::Display for Message {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in &self.bits {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

/// Sequence of states, one per symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSelectMatrix {
    columns: Vec<State>,
}

impl StateSelectMatrix {
    pub fn from_states(columns: Vec<State>) -> Self {
        Self { columns }
    }

    pub fn columns(&self) -> &[State] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Dense 4 x N view, `rows[k][n] = 1` iff column `n` is `e_{k+1}`.
    pub fn to_rows(&self) -> [Vec<u8>; 4] {
        let mut rows: [Vec<u8>; 4] = Default::default();
        for s in &self.columns {
            for (k, row) in rows.iter_mut().enumerate() {
                row.push(u8::from(s.index() == k));
            }
        }
        rows
    }

    pub fn flipped(&self) -> Self {
        Self {
            columns: self.columns.iter().map(|s| s.flipped()).collect(),
        }
    }
}

/// Symbol-conditioned transition matrices. Entry `[k][k']` is 1 when the
/// encoder may move from `s_{k'}` to `s_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transitions {
    pub h0: [[u8; 4]; 4],
    pub h1: [[u8; 4]; 4],
}

const FM0_H0: [[u8; 4]; 4] = [[1, 0, 0, 1], [0, 0, 0, 0], [0, 1, 1, 0], [0, 0, 0, 0]];
const MILLER_H0: [[u8; 4]; 4] = [[0, 0, 1, 1], [0, 0, 0, 0], [1, 1, 0, 0], [0, 0, 0, 0]];
const H1: [[u8; 4]; 4] = [[0, 0, 0, 0], [1, 0, 0, 1], [0, 0, 0, 0], [0, 1, 1, 0]];

impl Transitions {
    /// `H = H_0 + H_1`, the transitions allowed when the symbol is unknown.
    pub fn h(&self) -> [[u8; 4]; 4] {
        let mut h = [[0; 4]; 4];
        for k in 0..4 {
            for j in 0..4 {
                h[k][j] = self.h0[k][j] + self.h1[k][j];
            }
        }
        h
    }

    pub fn matrix(&self, bit: u8) -> &[[u8; 4]; 4] {
        if bit == 0 {
            &self.h0
        } else {
            &self.h1
        }
    }

    pub fn allows(&self, from: State, to: State) -> bool {
        self.h0[to.index()][from.index()] + self.h1[to.index()][from.index()] > 0
    }

    /// The symbol that drives `from -> to`, if the transition is legal.
    pub fn symbol(&self, from: State, to: State) -> Option<u8> {
        if self.h0[to.index()][from.index()] == 1 {
            Some(0)
        } else if self.h1[to.index()][from.index()] == 1 {
            Some(1)
        } else {
            None
        }
    }

    /// `H_bit * e_from`.
    pub fn next(&self, from: State, bit: u8) -> State {
        let h = self.matrix(bit);
        State::ALL
            .into_iter()
            .find(|to| h[to.index()][from.index()] == 1)
            .expect("every column of H_0 and H_1 has one entry")
    }
}

pub fn transition_matrices(scheme: EncodingScheme) -> Transitions {
    match scheme.code {
        LineCode::Fm0 => Transitions { h0: FM0_H0, h1: H1 },
        LineCode::Miller => Transitions { h0: MILLER_H0, h1: H1 },
    }
}

/// State of the last preamble symbol, which seeds the data encoding.
pub fn initial_state(scheme: EncodingScheme) -> State {
    match scheme.code {
        LineCode::Fm0 => State::S1,
        LineCode::Miller => State::S3,
    }
}

/// Data states followed by the postamble (symbol 1) state.
pub fn build_state_select(message: &Message, scheme: EncodingScheme) -> Result<StateSelectMatrix> {
    if message.is_empty() {
        return Err(Error::Parameter("message must contain at least one bit".into()));
    }
    let h = transition_matrices(scheme);
    let mut state = initial_state(scheme);
    let mut columns = Vec::with_capacity(message.len() + 1);
    for &bit in message.bits() {
        state = h.next(state, bit);
        columns.push(state);
    }
    columns.push(h.next(state, 1));
    Ok(StateSelectMatrix { columns })
}

pub fn preamble_select(scheme: EncodingScheme) -> StateSelectMatrix {
    use State::*;
    let (pilot, base): (usize, &[State]) = match scheme.code {
        LineCode::Fm0 => (12, &[S1, S2, S3, S0, S3, S1]),
        LineCode::Miller => (16, &[S0, S0, S0, S0, S0, S1, S2, S3, S1, S3]),
    };
    let mut columns = Vec::with_capacity(pilot + base.len());
    if scheme.trext {
        columns.extend(std::iter::repeat_n(S0, pilot));
    }
    columns.extend_from_slice(base);
    StateSelectMatrix { columns }
}

/// Sign (±1) of basis function `basis` on half subcarrier cycle `j` of a
/// symbol, `j < 2M`.
pub fn basis_half_cycle_sign(scheme: EncodingScheme, basis: usize, j: usize) -> f64 {
    let half = if j % 2 == 0 { 1.0 } else { -1.0 };
    match (scheme.code, basis) {
        (LineCode::Fm0, 0) => half,
        (LineCode::Fm0, _) => 1.0,
        (LineCode::Miller, 0) => half,
        (LineCode::Miller, _) => {
            if j / 2 < scheme.m / 2 {
                half
            } else {
                -half
            }
        }
    }
}

/// Sign (±1) of waveform `state` on half subcarrier cycle `j`.
pub fn state_half_cycle_sign(scheme: EncodingScheme, state: State, j: usize) -> f64 {
    state.sign() * basis_half_cycle_sign(scheme, state.basis(), j)
}

fn rect(x: f64) -> f64 {
    if (-0.5..0.5).contains(&x) {
        1.0
    } else {
        0.0
    }
}

fn check_period(period: f64) -> Result<()> {
    if period.is_finite() && period > 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("period must be positive, got {period}")))
    }
}

/// Unit-energy basis function `phi_k` of support `M*T`, evaluated at `t`.
pub fn basis_waveform(scheme: EncodingScheme, k: usize, period: f64, t: f64) -> Result<f64> {
    check_period(period)?;
    if k > 1 {
        return Err(Error::Parameter(format!("basis index must be 0 or 1, got {k}")));
    }
    let tt = period;
    let cycle = |j: f64| rect((t - (j + 0.25) * tt) / (tt / 2.0)) - rect((t - (j + 0.75) * tt) / (tt / 2.0));
    let value = match (scheme.code, k) {
        (LineCode::Fm0, 0) => cycle(0.0) / tt.sqrt(),
        (LineCode::Fm0, _) => rect((t - tt / 2.0) / tt) / tt.sqrt(),
        (LineCode::Miller, _) => {
            let m = scheme.m;
            let sum: f64 = (0..m)
                .map(|j| {
                    let s = if k == 1 && j >= m / 2 { -1.0 } else { 1.0 };
                    s * cycle(j as f64)
                })
                .sum();
            sum / (m as f64 * tt).sqrt()
        }
    };
    Ok(value)
}

/// Unit-energy state waveform `±phi_j`, the columns of `V` applied to the basis.
pub fn state_waveform(scheme: EncodingScheme, state: State, period: f64, t: f64) -> Result<f64> {
    Ok(state.sign() * basis_waveform(scheme, state.basis(), period, t)?)
}

/// Signal waveform `s_k(t) = sum_j v_{j,k} phi_j(t)` with `V_E = sqrt(MT)/2 V`,
/// i.e. levels ±1/2 before the control offset is added.
pub fn signal_waveform(scheme: EncodingScheme, k: usize, period: f64, t: f64) -> Result<f64> {
    check_period(period)?;
    let state = State::from_index(k)
        .ok_or_else(|| Error::Parameter(format!("state index must be 0..=3, got {k}")))?;
    let scale = (scheme.m as f64 * period).sqrt() / 2.0;
    Ok(scale * state_waveform(scheme, state, period, t)?)
}

/// Link period `a = 1/f_l` and reply delay `b` of one tag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TagParams {
    /// Subcarrier period in seconds.
    pub period: f64,
    /// Reply delay in seconds.
    pub delay: f64,
}

impl TagParams {
    pub fn new(period: f64, delay: f64) -> Result<Self> {
        check_period(period)?;
        if !(delay.is_finite() && delay >= 0.0) {
            return Err(Error::Parameter(format!("delay must be non-negative, got {delay}")));
        }
        Ok(Self { period, delay })
    }

    pub fn link_frequency(&self) -> f64 {
        1.0 / self.period
    }
}

/// All states transmitted in a reply: preamble, data and postamble.
pub fn reply_states(scheme: EncodingScheme, message: &Message) -> Result<Vec<State>> {
    let mut states = preamble_select(scheme).columns;
    states.extend(build_state_select(message, scheme)?.columns);
    Ok(states)
}

pub(crate) fn check_oversampling(period: f64, fs: f64) -> Result<()> {
    if fs * period / 2.0 < MIN_SAMPLES_PER_HALF_CYCLE {
        return Err(Error::Config(format!(
            "sample rate {fs} Hz gives fewer than {MIN_SAMPLES_PER_HALF_CYCLE} samples per half \
             subcarrier cycle at period {period} s"
        )));
    }
    Ok(())
}

/// Time of half-cycle edge `j` for a waveform of period `a` starting at `b`.
pub(crate) fn half_cycle_time(period: f64, delay: f64, j: usize) -> f64 {
    delay + j as f64 * (period / 2.0)
}

/// Sample indices of half-cycle edges `first..=first + count`, relative to
/// sample `origin`.
pub(crate) fn half_cycle_edges(
    period: f64,
    delay: f64,
    first: usize,
    count: usize,
    fs: f64,
    origin: i64,
) -> Vec<i64> {
    (first..=first + count)
        .map(|j| edge_index(half_cycle_time(period, delay, j), fs) - origin)
        .collect()
}

/// Renders a state sequence with per-half-cycle levels into a sampled signal
/// starting at `delay`. `level(state, j)` gives the value on half cycle `j`
/// (within the symbol) of `state`.
pub(crate) fn render_states(
    scheme: EncodingScheme,
    states: &[State],
    period: f64,
    delay: f64,
    fs: f64,
    first_half_cycle: usize,
    level: impl Fn(State, usize) -> f64,
) -> SampledSignal<f64> {
    let hps = scheme.half_cycles_per_symbol();
    let start_time = half_cycle_time(period, delay, first_half_cycle);
    let start = edge_index(start_time, fs);
    let end = edge_index(
        half_cycle_time(period, delay, first_half_cycle + states.len() * hps),
        fs,
    );
    let mut samples = vec![0.0; (end - start).max(0) as usize];
    let mut j = first_half_cycle;
    for &state in states {
        for h in 0..hps {
            let e0 = edge_index(half_cycle_time(period, delay, j), fs) - start;
            let e1 = edge_index(half_cycle_time(period, delay, j + 1), fs) - start;
            let v = level(state, h);
            for s in &mut samples[e0 as usize..e1 as usize] {
                *s = v;
            }
            j += 1;
        }
    }
    SampledSignal {
        samples,
        fs,
        t0: start as f64 / fs,
    }
}

/// On-off control signal of a complete reply (preamble, data, postamble).
///
/// The returned signal starts at the sample where the reply begins
/// (`t0 ≈ params.delay`) and holds values in `{0, 1}`.
pub fn generate_control_signal(
    params: TagParams,
    scheme: EncodingScheme,
    message: &Message,
    fs: f64,
) -> Result<SampledSignal<f64>> {
    TagParams::new(params.period, params.delay)?;
    check_oversampling(params.period, fs)?;
    let states = reply_states(scheme, message)?;
    Ok(render_states(scheme, &states, params.period, params.delay, fs, 0, |s, h| {
        0.5 + 0.5 * state_half_cycle_sign(scheme, s, h)
    }))
}
