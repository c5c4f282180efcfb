//! Brute-force enumeration over all `2^|V|` spin states.
//!
//! States are split into chunks by their top bits; each chunk walks its low
//! bits in Gray-code order so the energy updates in `O(deg)` per state. Each
//! chunk is reduced relative to its own maximum exponent, and chunk results
//! are folded sequentially in chunk-index order. The reduction order depends
//! only on `|V|`, so results are bit-reproducible regardless of thread count.

use rayon::prelude::*;

use crate::error::{IsingError, Result};
use crate::linalg::Matrix;
use crate::model::IsingModel;
use crate::scalar::Scalar;
use crate::stats::DataStatistics;

/// Hard cap on the number of spins the oracle will enumerate.
pub const MAX_EXACT_SPINS: usize = 24;

/// Exact log-partition function and moments of a Boltzmann distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactMoments<T> {
    pub log_partition: T,
    pub means: Vec<T>,
    /// `⟨s_i s_j⟩` per graph edge.
    pub pair_moments: Vec<T>,
    /// All-pairs `⟨s_i s_j⟩` with unit diagonal.
    pub correlations: Matrix<T>,
    /// `⟨s_i s_j⟩ − ⟨s_i⟩⟨s_j⟩`.
    pub covariance: Matrix<T>,
}

impl<T: Scalar> ExactMoments<T> {
    /// Statistics with no sample count, as if `D → ∞`.
    pub fn to_statistics(&self) -> DataStatistics<T> {
        DataStatistics::new(self.means.clone(), self.covariance.clone(), None)
            .expect("exact moments form valid statistics")
    }
}

fn check_size<T: Scalar>(model: &IsingModel<T>) -> Result<()> {
    let n = model.vertex_count();
    if n > MAX_EXACT_SPINS {
        return Err(IsingError::TooLarge { vertices: n, cap: MAX_EXACT_SPINS });
    }
    Ok(())
}

fn chunk_bits(n: usize) -> usize {
    if n > 12 {
        6
    } else {
        0
    }
}

/// Partial sums of one chunk, scaled by `exp(−max_exponent)`.
struct ChunkSums<T> {
    max_exponent: T,
    weight: T,
    first: Vec<T>,
    second: Vec<T>,
}

/// Walks every state whose top `hi_bits` bits equal `hi`, calling `visit(spins, −E)`.
fn walk_chunk<T: Scalar>(model: &IsingModel<T>, hi_bits: usize, hi: u64, mut visit: impl FnMut(&[i8], T)) {
    let n = model.vertex_count();
    let lo_bits = n - hi_bits;
    let mut spins: Vec<i8> = (0..n)
        .map(|k| if k >= lo_bits && (hi >> (k - lo_bits)) & 1 == 1 { 1 } else { -1 })
        .collect();
    let mut neg_energy: T = model
        .graph()
        .edges()
        .iter()
        .zip(model.couplings())
        .map(|(&(i, j), &jij)| if spins[i] == spins[j] { jij } else { -jij })
        .sum::<T>()
        + model
            .biases()
            .iter()
            .zip(&spins)
            .map(|(&h, &s)| if s > 0 { h } else { -h })
            .sum::<T>();
    visit(&spins, neg_energy);
    let two = T::of(2.0);
    for step in 1u64..(1u64 << lo_bits) {
        let b = step.trailing_zeros() as usize;
        let field = model.local_field(b, &spins);
        // Flipping s_b changes −E by −2 s_b (h_b + Σ J_bj s_j).
        if spins[b] > 0 {
            neg_energy -= two * field;
        } else {
            neg_energy += two * field;
        }
        spins[b] = -spins[b];
        visit(&spins, neg_energy);
    }
}

fn reduce_chunk<T: Scalar>(model: &IsingModel<T>, hi_bits: usize, hi: u64, moments: bool) -> ChunkSums<T> {
    let n = model.vertex_count();
    let mut max_exponent = T::neg_infinity();
    walk_chunk(model, hi_bits, hi, |_, e| {
        if e > max_exponent {
            max_exponent = e;
        }
    });
    let pair_len = if moments { n * n.saturating_sub(1) / 2 } else { 0 };
    let mut sums = ChunkSums {
        max_exponent,
        weight: T::zero(),
        first: vec![T::zero(); if moments { n } else { 0 }],
        second: vec![T::zero(); pair_len],
    };
    walk_chunk(model, hi_bits, hi, |spins, e| {
        let w = (e - max_exponent).exp();
        sums.weight += w;
        if moments {
            let mut k = 0;
            for i in 0..n {
                let wi = if spins[i] > 0 { w } else { -w };
                sums.first[i] += wi;
                for &sj in &spins[i + 1..] {
                    if sj > 0 {
                        sums.second[k] += wi;
                    } else {
                        sums.second[k] -= wi;
                    }
                    k += 1;
                }
            }
        }
    });
    sums
}

fn enumerate<T: Scalar>(model: &IsingModel<T>, moments: bool) -> ChunkSums<T> {
    let n = model.vertex_count();
    let hi_bits = chunk_bits(n);
    let chunks: Vec<ChunkSums<T>> = (0..(1u64 << hi_bits))
        .into_par_iter()
        .map(|hi| reduce_chunk(model, hi_bits, hi, moments))
        .collect();
    let global_max = chunks.iter().map(|c| c.max_exponent).fold(T::neg_infinity(), T::max);
    let mut total = ChunkSums {
        max_exponent: global_max,
        weight: T::zero(),
        first: vec![T::zero(); chunks[0].first.len()],
        second: vec![T::zero(); chunks[0].second.len()],
    };
    for c in &chunks {
        let scale = (c.max_exponent - global_max).exp();
        total.weight += c.weight * scale;
        for (a, &b) in total.first.iter_mut().zip(&c.first) {
            *a += b * scale;
        }
        for (a, &b) in total.second.iter_mut().zip(&c.second) {
            *a += b * scale;
        }
    }
    total
}

/// `ln Z = ln Σ_s exp(−E(s))`, accumulated in log-sum-exp form.
pub fn log_partition<T: Scalar>(model: &IsingModel<T>) -> Result<T> {
    check_size(model)?;
    let sums = enumerate(model, false);
    Ok(sums.max_exponent + sums.weight.ln())
}

/// Exact Boltzmann moments; covariance is assembled for all pairs.
pub fn exact_moments<T: Scalar>(model: &IsingModel<T>) -> Result<ExactMoments<T>> {
    check_size(model)?;
    let n = model.vertex_count();
    let sums = enumerate(model, true);
    let z = sums.weight;
    let means: Vec<T> = sums.first.iter().map(|&s| s / z).collect();
    let mut correlations = Matrix::identity(n);
    let mut k = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = sums.second[k] / z;
            correlations[(i, j)] = v;
            correlations[(j, i)] = v;
            k += 1;
        }
    }
    let covariance = Matrix::from_fn(n, |i, j| correlations[(i, j)] - means[i] * means[j]);
    let pair_moments = model.graph().edges().iter().map(|&(i, j)| correlations[(i, j)]).collect();
    Ok(ExactMoments { log_partition: sums.max_exponent + z.ln(), means, pair_moments, correlations, covariance })
}

/// Step used for the second differences that fill the covariance in
/// [`finite_difference_moments`]; balances truncation against cancellation in `f64`.
pub const SECOND_DIFFERENCE_STEP: f64 = 2e-4;

/// Moments recovered from central differences of [`log_partition`]:
/// `⟨s_i⟩ = ∂Φ/∂h_i`, `⟨s_i s_j⟩ = ∂Φ/∂J_ij` (edges) and
/// `C_ij = ∂²Φ/∂h_i∂h_j` (all pairs, second differences with
/// [`SECOND_DIFFERENCE_STEP`]). Validation harness only.
pub fn finite_difference_moments<T: Scalar>(model: &IsingModel<T>, step: T) -> Result<ExactMoments<T>> {
    check_size(model)?;
    let n = model.vertex_count();
    let two = T::of(2.0);
    let phi_at = |dh: &[(usize, T)]| -> Result<T> {
        let mut h = model.biases().to_vec();
        for &(i, d) in dh {
            h[i] += d;
        }
        log_partition(&model.with_biases(h)?)
    };
    let mut means = Vec::with_capacity(n);
    for i in 0..n {
        means.push((phi_at(&[(i, step)])? - phi_at(&[(i, -step)])?) / (two * step));
    }
    let mut pair_moments = Vec::with_capacity(model.graph().edge_count());
    for e in 0..model.graph().edge_count() {
        let mut plus = model.couplings().to_vec();
        let mut minus = plus.clone();
        plus[e] += step;
        minus[e] -= step;
        let d = log_partition(&model.with_couplings(plus)?)? - log_partition(&model.with_couplings(minus)?)?;
        pair_moments.push(d / (two * step));
    }
    let s2 = T::of(SECOND_DIFFERENCE_STEP);
    let phi0 = log_partition(model)?;
    let mut covariance = Matrix::zeros(n);
    for i in 0..n {
        let c = (phi_at(&[(i, s2)])? - two * phi0 + phi_at(&[(i, -s2)])?) / (s2 * s2);
        covariance[(i, i)] = c;
        for j in (i + 1)..n {
            let c = (phi_at(&[(i, s2), (j, s2)])? - phi_at(&[(i, s2), (j, -s2)])?
                - phi_at(&[(i, -s2), (j, s2)])?
                + phi_at(&[(i, -s2), (j, -s2)])?)
                / (T::of(4.0) * s2 * s2);
            covariance[(i, j)] = c;
            covariance[(j, i)] = c;
        }
    }
    let mut correlations = Matrix::from_fn(n, |i, j| covariance[(i, j)] + means[i] * means[j]);
    for i in 0..n {
        correlations[(i, i)] = T::one();
    }
    Ok(ExactMoments { log_partition: phi0, means, pair_moments, correlations, covariance })
}
