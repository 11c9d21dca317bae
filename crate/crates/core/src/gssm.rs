//! Generalized state-space machines: an update rule, a readout, and the
//! conditional-overwrite machine plus unit-sphere token codes used by the
//! executable constructions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};

/// An abstract finite-state or vector-state sequence machine: initial state,
/// update rule, readout. Running the machine twice on the same sequence
/// yields identical trajectories.
pub trait Gssm {
    type State: Clone + PartialEq;
    type Output;

    fn vocab_size(&self) -> usize;
    fn initial(&self) -> Self::State;
    fn update(&self, state: &Self::State, token: usize) -> Self::State;
    fn readout(&self, state: &Self::State) -> Self::Output;
}

/// State trajectory and per-step readouts of one run.
pub type GssmTrace<M> = (Vec<<M as Gssm>::State>, Vec<<M as Gssm>::Output>);

/// Runs the machine over `tokens`, returning the state trajectory and the
/// per-step readouts. Trajectory length equals input length.
pub fn run_gssm<M: Gssm>(machine: &M, tokens: &[usize]) -> Result<GssmTrace<M>> {
    let mut states = Vec::with_capacity(tokens.len());
    let mut outputs = Vec::with_capacity(tokens.len());
    let mut state = machine.initial();
    for &tok in tokens {
        if tok >= machine.vocab_size() {
            return Err(Error::InvalidInput(format!("token {tok} outside vocabulary")));
        }
        state = machine.update(&state, tok);
        outputs.push(machine.readout(&state));
        states.push(state.clone());
    }
    Ok((states, outputs))
}

/// A finite machine given by explicit transition and readout tables.
/// States are indices into the transition table.
#[derive(Debug, Clone)]
pub struct TableMachine {
    pub vocab: usize,
    pub initial: usize,
    /// `transition[state][token] -> state`
    pub transition: Vec<Vec<usize>>,
    /// `readout[state] -> output token`
    pub output: Vec<usize>,
}

impl Gssm for TableMachine {
    type State = usize;
    type Output = usize;

    fn vocab_size(&self) -> usize {
        self.vocab
    }
    fn initial(&self) -> usize {
        self.initial
    }
    fn update(&self, state: &usize, token: usize) -> usize {
        self.transition[*state][token]
    }
    fn readout(&self, state: &usize) -> usize {
        self.output[*state]
    }
}

/// `count` distinct unit-norm codes with no entry smaller than `MIN_ENTRY` in
/// magnitude and pairwise distance above `MIN_DIST`. Sampled standard normal
/// with rejection, deterministic under the seed.
pub fn unit_sphere_codes(count: usize, dim: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    const MIN_ENTRY: f64 = 1e-6;
    const MIN_DIST: f64 = 1e-6;
    const MAX_RETRIES: usize = 10_000;
    if dim == 0 {
        return Err(Error::InvalidConfig("code dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut codes: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut attempts = 0;
    while codes.len() < count {
        attempts += 1;
        if attempts > MAX_RETRIES + count {
            return Err(Error::Resource(format!(
                "could not sample {count} distinct codes in dim {dim}"
            )));
        }
        let mut v = Matrix::randn(1, dim, &mut rng).data;
        let n = norm(&v);
        if n == 0.0 {
            continue;
        }
        for x in &mut v {
            *x /= n;
        }
        if v.iter().any(|x| x.abs() <= MIN_ENTRY) {
            continue;
        }
        let distinct = codes.iter().all(|c| {
            let d2: f64 = c.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
            d2.sqrt() > MIN_DIST
        });
        if distinct {
            codes.push(v);
        }
    }
    Ok(codes)
}

/// Slot layout for the conditional-overwrite machine: w context-code slots of
/// dimension b, one value-code slot of dimension b, one is_v scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotLayout {
    pub levels: usize,
    pub code_dim: usize,
}

impl SlotLayout {
    pub fn state_dim(&self) -> usize {
        (self.levels + 1) * self.code_dim + 1
    }

    pub fn slot_range(&self, slot: usize) -> std::ops::Range<usize> {
        debug_assert!(slot <= self.levels); // levels..=levels is the value slot
        slot * self.code_dim..(slot + 1) * self.code_dim
    }

    pub fn value_range(&self) -> std::ops::Range<usize> {
        self.slot_range(self.levels)
    }

    pub fn flag_index(&self) -> usize {
        self.state_dim() - 1
    }

    /// Embedding carrying `code` in `slot` with the given flag; all other
    /// slots zero. `slot == levels` is the value slot.
    pub fn embed(&self, slot: usize, code: &[f64], flag: f64) -> Vec<f64> {
        debug_assert_eq!(code.len(), self.code_dim);
        let mut e = vec![0.0; self.state_dim()];
        e[self.slot_range(slot)].copy_from_slice(code);
        e[self.flag_index()] = flag;
        e
    }

    /// Checks the layout contract for an embedding: each code slot all-zero or
    /// all-nonzero, at most one occupied, flag in {-1, +1}.
    pub fn check_embedding(&self, e: &[f64]) -> Result<()> {
        if e.len() != self.state_dim() {
            return Err(Error::InvalidInput("embedding dimension mismatch".into()));
        }
        let mut occupied = 0;
        for slot in 0..=self.levels {
            let s = &e[self.slot_range(slot)];
            let nonzero = s.iter().filter(|x| **x != 0.0).count();
            if nonzero == self.code_dim {
                occupied += 1;
            } else if nonzero != 0 {
                return Err(Error::InvalidInput(format!("slot {slot} partially occupied")));
            }
        }
        if occupied > 1 {
            return Err(Error::InvalidInput("more than one occupied slot".into()));
        }
        let flag = e[self.flag_index()];
        if flag != 1.0 && flag != -1.0 {
            return Err(Error::InvalidInput("is_v flag must be -1 or +1".into()));
        }
        Ok(())
    }
}

/// Conditional overwrite: coordinates where the embedding is zero keep the
/// previous state, nonzero coordinates take the embedding's value. Applied
/// coordinatewise including the is_v flag.
pub fn overwrite_update(layout: &SlotLayout, state: &[f64], embedding: &[f64]) -> Result<Vec<f64>> {
    layout.check_embedding(embedding)?;
    if state.len() != embedding.len() {
        return Err(Error::InvalidInput("state dimension mismatch".into()));
    }
    Ok(state
        .iter()
        .zip(embedding)
        .map(|(&s, &e)| if e != 0.0 { e } else { s })
        .collect())
}

/// The overwrite machine over a fixed embedding table (one embedding per
/// token id). The readout is the state itself.
#[derive(Debug, Clone)]
pub struct OverwriteMachine {
    pub layout: SlotLayout,
    pub embeddings: Vec<Vec<f64>>,
}

impl Gssm for OverwriteMachine {
    type State = Vec<f64>;
    type Output = Vec<f64>;

    fn vocab_size(&self) -> usize {
        self.embeddings.len()
    }
    fn initial(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.layout.state_dim()];
        s[self.layout.flag_index()] = -1.0;
        s
    }
    fn update(&self, state: &Vec<f64>, token: usize) -> Vec<f64> {
        overwrite_update(&self.layout, state, &self.embeddings[token])
            .expect("embedding table rows satisfy the layout")
    }
    fn readout(&self, state: &Vec<f64>) -> Vec<f64> {
        state.clone()
    }
}

/// Default code dimension for `max_vocab` distinguishable codes with slack
/// for the rejection sampler.
pub fn default_code_dim(max_vocab: usize) -> usize {
    (max_vocab.max(2) as f64).log2().ceil() as usize + 2
}
