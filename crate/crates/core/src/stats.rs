//! Empirical spin statistics: means `m̂_i` and covariance `C_ij`.

use serde::{Deserialize, Serialize};

use crate::error::{IsingError, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Means and covariance handed to the inverse formulas and the learner.
///
/// JSON form: `{"means": [...], "covariance": [[...],...], "D": count | null}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
#[serde(try_from = "StatisticsFile<T>", into = "StatisticsFile<T>")]
pub struct DataStatistics<T> {
    means: Vec<T>,
    covariance: Matrix<T>,
    sample_count: Option<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
struct StatisticsFile<T> {
    means: Vec<T>,
    covariance: Matrix<T>,
    #[serde(rename = "D")]
    sample_count: Option<u64>,
}

impl<T: Scalar> DataStatistics<T> {
    /// Validates dimensions, `m̂ ∈ [−1, 1]`, finiteness and exact symmetry of `C`.
    pub fn new(means: Vec<T>, covariance: Matrix<T>, sample_count: Option<u64>) -> Result<Self> {
        if covariance.dim() != means.len() {
            return Err(IsingError::InvalidInput(format!(
                "covariance is {}x{} but there are {} means",
                covariance.dim(),
                covariance.dim(),
                means.len()
            )));
        }
        if means.is_empty() {
            return Err(IsingError::InvalidInput("statistics need at least one spin".into()));
        }
        if let Some((i, m)) = means.iter().enumerate().find(|(_, m)| !(m.abs() <= T::one())) {
            return Err(IsingError::InvalidInput(format!("mean {i} = {m} outside [-1, 1]")));
        }
        if !covariance.is_finite() {
            return Err(IsingError::InvalidInput("covariance must be finite".into()));
        }
        if !covariance.is_symmetric() {
            return Err(IsingError::InvalidInput("covariance must be symmetric".into()));
        }
        if sample_count == Some(0) {
            return Err(IsingError::InvalidInput("sample count must be positive".into()));
        }
        Ok(DataStatistics { means, covariance, sample_count })
    }

    /// Builds statistics from `⟨s_i⟩` and all-pairs `⟨s_i s_j⟩`, symmetrizing the input.
    pub fn from_moments(means: Vec<T>, second: &Matrix<T>, sample_count: Option<u64>) -> Result<Self> {
        let n = means.len();
        let half = T::of(0.5);
        let cov = Matrix::from_fn(n, |i, j| {
            let sij = if i == j { second[(i, i)] } else { half * (second[(i, j)] + second[(j, i)]) };
            sij - means[i] * means[j]
        });
        DataStatistics::new(means, cov, sample_count)
    }

    #[inline]
    pub fn means(&self) -> &[T] {
        &self.means
    }

    #[inline]
    pub fn covariance(&self) -> &Matrix<T> {
        &self.covariance
    }

    #[inline]
    pub fn sample_count(&self) -> Option<u64> {
        self.sample_count
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.means.len()
    }

    /// `⟨s_i s_j⟩_D = C_ij + m̂_i m̂_j`.
    #[inline]
    pub fn second_moment(&self, i: usize, j: usize) -> T {
        self.covariance[(i, j)] + self.means[i] * self.means[j]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("statistics serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl<T: Scalar> TryFrom<StatisticsFile<T>> for DataStatistics<T> {
    type Error = IsingError;
    fn try_from(f: StatisticsFile<T>) -> Result<Self> {
        DataStatistics::new(f.means, f.covariance, f.sample_count)
    }
}

impl<T: Scalar> From<DataStatistics<T>> for StatisticsFile<T> {
    fn from(s: DataStatistics<T>) -> Self {
        StatisticsFile { means: s.means, covariance: s.covariance, sample_count: s.sample_count }
    }
}

/// Integer running sums of `s_i` and `s_i s_j` over ±1 configurations.
///
/// Sums are exact, so accumulation order never changes the result and
/// [`MomentAccumulator::merge`] is associative and commutative.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MomentAccumulator {
    n: usize,
    count: u64,
    first: Vec<i64>,
    /// Upper triangle `i < j`, row-major.
    second: Vec<i64>,
}

impl MomentAccumulator {
    pub fn new(n: usize) -> Self {
        MomentAccumulator { n, count: 0, first: vec![0; n], second: vec![0; n * n.saturating_sub(1) / 2] }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push(&mut self, spins: &[i8]) {
        debug_assert_eq!(spins.len(), self.n);
        self.count += 1;
        let mut k = 0;
        for i in 0..self.n {
            let si = i64::from(spins[i]);
            self.first[i] += si;
            for &sj in &spins[i + 1..] {
                self.second[k] += si * i64::from(sj);
                k += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        assert_eq!(self.n, other.n, "accumulator dimension mismatch");
        self.count += other.count;
        for (a, b) in self.first.iter_mut().zip(&other.first) {
            *a += b;
        }
        for (a, b) in self.second.iter_mut().zip(&other.second) {
            *a += b;
        }
    }

    pub fn clear(&mut self) {
        self.count = 0;
        self.first.iter_mut().for_each(|x| *x = 0);
        self.second.iter_mut().for_each(|x| *x = 0);
    }

    pub fn means<T: Scalar>(&self) -> Vec<T> {
        let d = self.count as f64;
        self.first.iter().map(|&s| T::of(s as f64 / d)).collect()
    }

    /// All-pairs `⟨s_i s_j⟩` with unit diagonal.
    pub fn second_moments<T: Scalar>(&self) -> Matrix<T> {
        let d = self.count as f64;
        let mut m = Matrix::identity(self.n);
        let mut k = 0;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let v = T::of(self.second[k] as f64 / d);
                m[(i, j)] = v;
                m[(j, i)] = v;
                k += 1;
            }
        }
        m
    }

    /// Population statistics (divide by `D`). Fails on zero samples.
    pub fn statistics<T: Scalar>(&self) -> Result<DataStatistics<T>> {
        if self.count == 0 {
            return Err(IsingError::InvalidInput("cannot compute statistics of an empty sample set".into()));
        }
        let means: Vec<T> = self.means();
        let second = self.second_moments::<T>();
        let cov = Matrix::from_fn(self.n, |i, j| second[(i, j)] - means[i] * means[j]);
        DataStatistics::new(means, cov, Some(self.count))
    }
}
