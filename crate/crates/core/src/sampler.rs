//! Single-site heat-bath (Gibbs) sampling.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{IsingError, Result};
use crate::model::{IsingModel, SpinConfiguration};
use crate::scalar::Scalar;
use crate::stats::{DataStatistics, MomentAccumulator};

/// A persistent Gibbs chain. One sweep updates sites `0..|V|` in order with
/// `p(s_i = +1 | rest) = σ(2(h_i + Σ_j J_ij s_j))`.
#[derive(Debug, Clone)]
pub struct GibbsChain {
    spins: Vec<i8>,
    rng: ChaCha8Rng,
}

impl GibbsChain {
    /// Chain started from a uniformly random configuration drawn from `seed`.
    pub fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spins = (0..n).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
        GibbsChain { spins, rng }
    }

    #[inline]
    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn sweep<T: Scalar>(&mut self, model: &IsingModel<T>) {
        for i in 0..self.spins.len() {
            let field = model.local_field(i, &self.spins).to_f64_lossy();
            let p_up = 1.0 / (1.0 + (-2.0 * field).exp());
            self.spins[i] = if self.rng.gen::<f64>() < p_up { 1 } else { -1 };
        }
    }
}

/// Recorded configurations `s^(d)`, `d = 1..D`, stored row-major as ±1 bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSet {
    vertex_count: usize,
    spins: Vec<i8>,
}

impl SampleSet {
    pub fn new(vertex_count: usize) -> Self {
        SampleSet { vertex_count, spins: Vec::new() }
    }

    pub fn from_rows(vertex_count: usize, rows: impl IntoIterator<Item = SpinConfiguration>) -> Result<Self> {
        let mut set = SampleSet::new(vertex_count);
        for r in rows {
            set.push(r.as_slice())?;
        }
        Ok(set)
    }

    pub fn push(&mut self, row: &[i8]) -> Result<()> {
        if row.len() != self.vertex_count {
            return Err(IsingError::InvalidInput(format!(
                "sample has {} spins, expected {}",
                row.len(),
                self.vertex_count
            )));
        }
        if row.iter().any(|&s| s != 1 && s != -1) {
            return Err(IsingError::InvalidInput("sample entries must be ±1".into()));
        }
        self.spins.extend_from_slice(row);
        Ok(())
    }

    #[inline]
    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    #[inline]
    pub fn count(&self) -> usize {
        self.spins.len().checked_div(self.vertex_count).unwrap_or(0)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[i8]> {
        self.spins.chunks_exact(self.vertex_count.max(1))
    }

    /// One line per sample, comma-separated `1`/`-1`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(|s| s.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut set: Option<SampleSet> = None;
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row: std::result::Result<Vec<i8>, _> = line.split(',').map(|t| t.trim().parse::<i8>()).collect();
            let row = row.map_err(|e| IsingError::Parse { line: lineno + 1, message: e.to_string() })?;
            let set = set.get_or_insert_with(|| SampleSet::new(row.len()));
            set.push(&row).map_err(|e| IsingError::Parse { line: lineno + 1, message: e.to_string() })?;
        }
        set.ok_or_else(|| IsingError::InvalidInput("empty sample file".into()))
    }

    /// Raw bytes: one signed byte per spin, rows concatenated.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.spins.iter().map(|&s| s as u8).collect()
    }

    pub fn accumulate(&self) -> MomentAccumulator {
        let mut acc = MomentAccumulator::new(self.vertex_count);
        for row in self.rows() {
            acc.push(row);
        }
        acc
    }
}

/// Runs one chain: `burn_in` discarded sweeps, then `sweeps` sweeps of which
/// every `thin`-th is recorded. Deterministic given `seed`.
pub fn gibbs_sample<T: Scalar>(model: &IsingModel<T>, sweeps: usize, burn_in: usize, thin: usize, seed: u64) -> Result<SampleSet> {
    if sweeps == 0 || thin == 0 {
        return Err(IsingError::InvalidInput("sweeps and thin must be at least 1".into()));
    }
    let n = model.vertex_count();
    let mut chain = GibbsChain::new(n, seed);
    for _ in 0..burn_in {
        chain.sweep(model);
    }
    let mut set = SampleSet { vertex_count: n, spins: Vec::with_capacity(n * (sweeps / thin)) };
    for k in 1..=sweeps {
        chain.sweep(model);
        if k % thin == 0 {
            set.spins.extend_from_slice(chain.spins());
        }
    }
    Ok(set)
}

/// Like [`gibbs_sample`] but only keeps running moment sums.
pub fn gibbs_moments<T: Scalar>(model: &IsingModel<T>, sweeps: usize, burn_in: usize, thin: usize, seed: u64) -> Result<MomentAccumulator> {
    if sweeps == 0 || thin == 0 {
        return Err(IsingError::InvalidInput("sweeps and thin must be at least 1".into()));
    }
    let mut chain = GibbsChain::new(model.vertex_count(), seed);
    for _ in 0..burn_in {
        chain.sweep(model);
    }
    let mut acc = MomentAccumulator::new(model.vertex_count());
    for k in 1..=sweeps {
        chain.sweep(model);
        if k % thin == 0 {
            acc.push(chain.spins());
        }
    }
    Ok(acc)
}

/// `m̂_i = (1/D) Σ_d s_i^(d)`, `C_ij = (1/D) Σ_d s_i^(d) s_j^(d) − m̂_i m̂_j`.
pub fn statistics<T: Scalar>(samples: &SampleSet) -> Result<DataStatistics<T>> {
    samples.accumulate().statistics()
}
