//! Boltzmann learning: gradient ascent on the log-likelihood by moment matching.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{IsingError, Result};
use crate::exact::{exact_moments, MAX_EXACT_SPINS};
use crate::graph::Graph;
use crate::model::IsingModel;
use crate::sampler::GibbsChain;
use crate::scalar::Scalar;
use crate::stats::{DataStatistics, MomentAccumulator};

/// `|m̂|` is clipped to this before `artanh` at initialization.
pub const INIT_MEAN_CLIP: f64 = 1.0 - 1e-9;

/// Batches used for the Monte Carlo noise-floor estimate.
pub const NOISE_BATCHES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Exact,
    Mcmc,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Exact => "exact",
            Estimator::Mcmc => "mcmc",
        })
    }
}

impl FromStr for Estimator {
    type Err = IsingError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Estimator::Exact),
            "mcmc" => Ok(Estimator::Mcmc),
            other => Err(IsingError::InvalidInput(format!("unknown estimator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub learning_rate: f64,
    pub n_updates: usize,
    /// Gibbs sweeps per gradient estimate (MCMC only).
    pub mc_steps_per_gradient: usize,
    pub estimator: Estimator,
    pub rng_seed: u64,
    /// Stop once the max gradient component is at most this.
    #[serde(default)]
    pub tol: Option<f64>,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            learning_rate: 0.1,
            n_updates: 10_000,
            mc_steps_per_gradient: 100,
            estimator: Estimator::Exact,
            rng_seed: 0,
            tol: None,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(IsingError::InvalidInput("learning rate must be positive".into()));
        }
        if self.n_updates == 0 || self.mc_steps_per_gradient == 0 {
            return Err(IsingError::InvalidInput("update and sweep counts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnTrace<T> {
    /// `max(|∂l/∂h|, |∂l/∂J|)` at the parameters before each update.
    pub max_gradient: Vec<T>,
    /// `l(θ) = Σ J_ij ⟨s_i s_j⟩_D + Σ h_i m̂_i − Φ(θ)` before each update; empty in MCMC mode.
    pub log_likelihood: Vec<T>,
    pub model: IsingModel<T>,
    /// Largest batch-means standard error of a gradient component at the final model (MCMC only).
    pub noise_floor: Option<T>,
}

impl<T: Scalar> LearnTrace<T> {
    pub fn iterations(&self) -> usize {
        self.max_gradient.len()
    }

    pub fn final_max_gradient(&self) -> Option<T> {
        self.max_gradient.last().copied()
    }
}

struct Moments<T> {
    means: Vec<T>,
    pairs: Vec<T>,
}

fn moments_from_accumulator<T: Scalar>(acc: &MomentAccumulator, graph: &Graph) -> Moments<T> {
    let second = acc.second_moments::<T>();
    Moments { means: acc.means(), pairs: graph.edges().iter().map(|&(i, j)| second[(i, j)]).collect() }
}

fn chain_moments<T: Scalar>(chain: &mut GibbsChain, model: &IsingModel<T>, sweeps: usize) -> MomentAccumulator {
    let mut acc = MomentAccumulator::new(model.vertex_count());
    for _ in 0..sweeps {
        chain.sweep(model);
        acc.push(chain.spins());
    }
    acc
}

/// Runs `n_updates` steps of `h ← h + α(m̂ − ⟨s⟩)`, `J ← J + α(⟨ss⟩_D − ⟨ss⟩)` from
/// `J = 0`, `h = artanh(m̂)`. MCMC mode keeps one persistent chain.
pub fn gradient_ascent<T: Scalar>(stats: &DataStatistics<T>, graph: &Graph, config: &LearnConfig) -> Result<LearnTrace<T>> {
    config.validate()?;
    let n = graph.vertex_count();
    if stats.dim() != n {
        return Err(IsingError::InvalidInput(format!("statistics cover {} spins but the graph has {n}", stats.dim())));
    }
    if config.estimator == Estimator::Exact && n > MAX_EXACT_SPINS {
        return Err(IsingError::TooLarge { vertices: n, cap: MAX_EXACT_SPINS });
    }
    let target_means = stats.means().to_vec();
    let target_pairs: Vec<T> = graph.edges().iter().map(|&(i, j)| stats.second_moment(i, j)).collect();
    let clip = T::of(INIT_MEAN_CLIP);
    let h0 = target_means.iter().map(|m| m.max(-clip).min(clip).atanh()).collect();
    let mut model = IsingModel::new(graph.clone(), vec![T::zero(); graph.edge_count()], h0)?;
    let alpha = T::of(config.learning_rate);
    let mut chain = GibbsChain::new(n, config.rng_seed);

    let mut max_gradient = Vec::with_capacity(config.n_updates);
    let mut log_likelihood = Vec::new();
    for iter in 0..config.n_updates {
        let current = match config.estimator {
            Estimator::Exact => {
                let ex = exact_moments(&model)?;
                let l = model.couplings().iter().zip(&target_pairs).map(|(&j, &p)| j * p).sum::<T>()
                    + model.biases().iter().zip(&target_means).map(|(&h, &m)| h * m).sum::<T>()
                    - ex.log_partition;
                log_likelihood.push(l);
                Moments { means: ex.means, pairs: ex.pair_moments }
            }
            Estimator::Mcmc => moments_from_accumulator(&chain_moments(&mut chain, &model, config.mc_steps_per_gradient), graph),
        };
        let grad_h: Vec<T> = target_means.iter().zip(&current.means).map(|(&a, &b)| a - b).collect();
        let grad_j: Vec<T> = target_pairs.iter().zip(&current.pairs).map(|(&a, &b)| a - b).collect();
        let gmax = grad_h.iter().chain(&grad_j).map(|g| g.abs()).fold(T::zero(), T::max);
        max_gradient.push(gmax);
        if config.tol.is_some_and(|tol| gmax.to_f64_lossy() <= tol) {
            break;
        }
        for (h, g) in model.biases_mut().iter_mut().zip(&grad_h) {
            *h += alpha * *g;
        }
        for (j, g) in model.couplings_mut().iter_mut().zip(&grad_j) {
            *j += alpha * *g;
        }
        if !model.biases().iter().chain(model.couplings()).all(|x| x.is_finite()) {
            return Err(IsingError::Divergence { iteration: iter, reason: "non-finite parameter after update".into() });
        }
    }

    let noise_floor = match config.estimator {
        Estimator::Exact => None,
        Estimator::Mcmc => Some(noise_floor(&mut chain, &model, config.mc_steps_per_gradient)),
    };
    Ok(LearnTrace { max_gradient, log_likelihood, model, noise_floor })
}

/// Standard deviation of single-gradient estimates across [`NOISE_BATCHES`]
/// consecutive batches of `sweeps` sweeps, maximized over components.
fn noise_floor<T: Scalar>(chain: &mut GibbsChain, model: &IsingModel<T>, sweeps: usize) -> T {
    let graph = model.graph();
    let batches: Vec<Moments<T>> = (0..NOISE_BATCHES).map(|_| moments_from_accumulator(&chain_moments(chain, model, sweeps), graph)).collect();
    let k = T::of_usize(NOISE_BATCHES);
    let spread = |values: Vec<T>| {
        let mean = values.iter().copied().sum::<T>() / k;
        (values.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / (k - T::one())).sqrt()
    };
    let mut worst = T::zero();
    for i in 0..model.vertex_count() {
        worst = worst.max(spread(batches.iter().map(|b| b.means[i]).collect()));
    }
    for e in 0..graph.edge_count() {
        worst = worst.max(spread(batches.iter().map(|b| b.pairs[e]).collect()));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    #[test]
    fn independent_spins_stay_decoupled() {
        let m = vec![0.3, -0.5, 0.1];
        let cov = Matrix::from_fn(3, |i, j| if i == j { 1.0 - m[i] * m[i] } else { 0.0 });
        let st = DataStatistics::new(m.clone(), cov, None).unwrap();
        let cfg = LearnConfig { n_updates: 50, ..LearnConfig::default() };
        let tr = gradient_ascent(&st, &Graph::chain(3), &cfg).unwrap();
        for (h, mi) in tr.model.biases().iter().zip(&m) {
            assert!((h - f64::atanh(*mi)).abs() < 1e-12);
        }
        assert!(tr.model.couplings().iter().all(|j| j.abs() < 1e-12));
        assert_eq!(tr.iterations(), 50);
    }

    #[test]
    fn config_validation() {
        let st = DataStatistics::new(vec![0.0], Matrix::identity(1), None).unwrap();
        let g = Graph::chain(1);
        assert!(gradient_ascent(&st, &g, &LearnConfig { learning_rate: 0.0, ..LearnConfig::default() }).is_err());
        assert!(gradient_ascent(&st, &g, &LearnConfig { n_updates: 0, ..LearnConfig::default() }).is_err());
        assert!(gradient_ascent(&st, &Graph::chain(2), &LearnConfig::default()).is_err());
    }

    #[test]
    fn early_stop_on_tolerance() {
        let st = DataStatistics::new(vec![0.2], Matrix::from_rows(vec![vec![0.96]]).unwrap(), None).unwrap();
        let cfg = LearnConfig { tol: Some(1e-9), ..LearnConfig::default() };
        let tr = gradient_ascent(&st, &Graph::chain(1), &cfg).unwrap();
        assert_eq!(tr.iterations(), 1);
    }

    #[test]
    fn divergence_is_reported() {
        let st = DataStatistics::new(vec![0.0, 0.0], Matrix::from_rows(vec![vec![1.0, 0.6], vec![0.6, 1.0]]).unwrap(), None).unwrap();
        let cfg = LearnConfig { learning_rate: f64::MAX, n_updates: 10, ..LearnConfig::default() };
        assert!(matches!(gradient_ascent(&st, &Graph::chain(2), &cfg), Err(IsingError::Divergence { .. })));
    }
}
