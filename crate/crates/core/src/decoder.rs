//! Maximum-likelihood sequence detection of one tag reply.

use crate::encoding::{
    half_cycle_edges, initial_state, state_half_cycle_sign, transition_matrices, EncodingScheme,
    Message, State, StateSelectMatrix,
};
use crate::error::{Error, Result};
use crate::signal::{prefix_sums, SampledSignal};

/// Bits in an RN16 reply.
pub const RN16_BITS: usize = 16;

/// Match scores `Z[k][n]` of waveform `s_k` against symbol slot `n`; the last
/// column is the postamble.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    columns: Vec<[f64; 4]>,
}

impl CostMatrix {
    pub fn from_columns(columns: Vec<[f64; 4]>) -> Result<Self> {
        if columns.len() < 2 {
            return Err(Error::Parameter(
                "cost matrix needs at least one data column and the postamble".into(),
            ));
        }
        if columns.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Parameter("cost matrix entries must be finite".into()));
        }
        Ok(Self { columns })
    }

    pub fn columns(&self) -> &[[f64; 4]] {
        &self.columns
    }

    pub fn get(&self, k: usize, n: usize) -> f64 {
        self.columns[n][k]
    }

    /// Number of data symbols `N_M`.
    pub fn n_bits(&self) -> usize {
        self.columns.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedReply {
    /// Decoded states in the tag's own frame, postamble included.
    pub s_hat: StateSelectMatrix,
    pub bits: Message,
    pub path_metric: f64,
    pub phase_flipped: bool,
}

/// Correlates `residual − β` with the unit-energy state waveforms in every
/// data slot after the preamble of a tag at `(a, b)`.
pub fn build_cost_matrix(
    residual: &SampledSignal<f64>,
    a: f64,
    b: f64,
    beta: f64,
    scheme: EncodingScheme,
    n_bits: usize,
) -> Result<CostMatrix> {
    if !(a.is_finite() && a > 0.0) {
        return Err(Error::Parameter(format!("period must be positive, got {a}")));
    }
    let prefix = prefix_sums(&residual.samples, beta);
    let hps = scheme.half_cycles_per_symbol();
    let first = scheme.preamble_len() * hps;
    let edges = half_cycle_edges(a, b, first, (n_bits + 1) * hps, residual.fs, residual.start_index());
    if edges[0] < 0 || edges[edges.len() - 1] > residual.len() as i64 {
        return Err(Error::Input(format!(
            "record too short: reply at a = {a:e} s, b = {b:e} s extends beyond {} samples",
            residual.len()
        )));
    }
    let u = 1.0 / (a * scheme.m() as f64).sqrt() / residual.fs;
    let signs: Vec<[f64; 4]> = (0..hps)
        .map(|h| State::ALL.map(|s| state_half_cycle_sign(scheme, s, h)))
        .collect();
    let columns = (0..=n_bits)
        .map(|n| {
            let mut col = [0.0; 4];
            for (h, sign) in signs.iter().enumerate() {
                let e = &edges[n * hps + h..n * hps + h + 2];
                let seg = prefix[e[1] as usize] - prefix[e[0] as usize];
                for k in 0..4 {
                    col[k] += sign[k] * seg;
                }
            }
            col.map(|x| x * u)
        })
        .collect();
    CostMatrix::from_columns(columns)
}

/// Viterbi search for the valid state path maximising `Σ_n Z[state_n][n]`.
///
/// The path starts from the scheme's initial state (its phase-flipped
/// counterpart when `phase_flipped`), follows `H` through the data columns
/// and enters the postamble through `H_1` only. Among equal metrics the
/// predecessor with the lower state index wins.
pub fn viterbi_decode(z: &CostMatrix, scheme: EncodingScheme, phase_flipped: bool) -> DecodedReply {
    let tr = transition_matrices(scheme);
    let init = initial_state(scheme);
    let seed = if phase_flipped { init.flipped() } else { init };
    let n_cols = z.columns.len();
    let mut metric = [f64::NEG_INFINITY; 4];
    let mut back: Vec<[usize; 4]> = Vec::with_capacity(n_cols);
    for to in State::ALL {
        if tr.allows(seed, to) {
            metric[to.index()] = z.columns[0][to.index()];
        }
    }
    back.push([seed.index(); 4]);
    for n in 1..n_cols {
        let last = n == n_cols - 1;
        let mut next = [f64::NEG_INFINITY; 4];
        let mut ptr = [0usize; 4];
        for to in State::ALL {
            let mut best = f64::NEG_INFINITY;
            let mut arg = usize::MAX;
            for from in State::ALL {
                let ok = if last {
                    tr.symbol(from, to) == Some(1)
                } else {
                    tr.allows(from, to)
                };
                if ok && metric[from.index()] > best {
                    best = metric[from.index()];
                    arg = from.index();
                }
            }
            if arg != usize::MAX {
                next[to.index()] = z.columns[n][to.index()] + best;
                ptr[to.index()] = arg;
            }
        }
        metric = next;
        back.push(ptr);
    }
    let mut end = 0;
    for k in 1..4 {
        if metric[k] > metric[end] {
            end = k;
        }
    }
    let path_metric = metric[end];
    let mut path = vec![0usize; n_cols];
    path[n_cols - 1] = end;
    for n in (1..n_cols).rev() {
        path[n - 1] = back[n][path[n]];
    }
    let received: Vec<State> = path.iter().map(|&k| State::ALL[k]).collect();
    let mut bits = Vec::with_capacity(n_cols - 1);
    let mut prev = seed;
    for &s in &received[..n_cols - 1] {
        bits.push(tr.symbol(prev, s).expect("Viterbi path follows H"));
        prev = s;
    }
    let columns = if phase_flipped {
        received.iter().map(|s| s.flipped()).collect()
    } else {
        received
    };
    DecodedReply {
        s_hat: StateSelectMatrix::from_states(columns),
        bits: Message::new(bits).expect("bits come from the transition table"),
        path_metric,
        phase_flipped,
    }
}
