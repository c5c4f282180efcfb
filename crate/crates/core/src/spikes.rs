//! Spike trains to binary spin series.
//!
//! Text format: a header `# neurons N t_start t_end`, then one `index time`
//! pair per line. Further `#` lines and blank lines are ignored.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{IsingError, Result};
use crate::model::{derive_seed, IsingModel};
use crate::sampler::{gibbs_sample, statistics, SampleSet};
use crate::scalar::Scalar;
use crate::stats::DataStatistics;

/// Default bin width in seconds.
pub const DEFAULT_BIN_WIDTH: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTrains {
    t_start: f64,
    t_end: f64,
    /// Sorted spike times per neuron.
    times: Vec<Vec<f64>>,
}

impl SpikeTrains {
    /// Validates the interval and every time; sorts each train.
    pub fn new(t_start: f64, t_end: f64, mut times: Vec<Vec<f64>>) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite() && t_start < t_end) {
            return Err(IsingError::InvalidInput(format!("invalid recording interval [{t_start}, {t_end}]")));
        }
        if times.is_empty() {
            return Err(IsingError::InvalidInput("at least one neuron is required".into()));
        }
        for (i, train) in times.iter_mut().enumerate() {
            if let Some(t) = train.iter().find(|t| !(**t >= t_start && **t <= t_end)) {
                return Err(IsingError::InvalidInput(format!("neuron {i} spike at {t} outside [{t_start}, {t_end}]")));
            }
            train.sort_by(f64::total_cmp);
        }
        Ok(SpikeTrains { t_start, t_end, times })
    }

    #[inline]
    pub fn neuron_count(&self) -> usize {
        self.times.len()
    }

    #[inline]
    pub fn interval(&self) -> (f64, f64) {
        (self.t_start, self.t_end)
    }

    pub fn times(&self, neuron: usize) -> &[f64] {
        &self.times[neuron]
    }

    pub fn spike_count(&self) -> usize {
        self.times.iter().map(Vec::len).sum()
    }

    pub fn parse<R: BufRead>(r: R) -> Result<Self> {
        let mut header: Option<(usize, f64, f64)> = None;
        let mut times: Vec<Vec<f64>> = Vec::new();
        for (k, line) in r.lines().enumerate() {
            let lineno = k + 1;
            let line = line?;
            let t = line.trim();
            let err = |message: String| IsingError::Parse { line: lineno, message };
            if header.is_none() {
                let fields: Vec<&str> = t.split_whitespace().collect();
                match fields.as_slice() {
                    ["#", "neurons", n, a, b] => {
                        let n: usize = n.parse().map_err(|_| err(format!("bad neuron count {n:?}")))?;
                        let a: f64 = a.parse().map_err(|_| err(format!("bad t_start {a:?}")))?;
                        let b: f64 = b.parse().map_err(|_| err(format!("bad t_end {b:?}")))?;
                        if n == 0 || !(a.is_finite() && b.is_finite() && a < b) {
                            return Err(err("header needs N >= 1 and t_start < t_end".into()));
                        }
                        header = Some((n, a, b));
                        times = vec![Vec::new(); n];
                        continue;
                    }
                    _ if t.is_empty() => continue,
                    _ => return Err(err("expected header '# neurons N t_start t_end'".into())),
                }
            }
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (n, a, b) = header.expect("header parsed");
            let mut it = t.split_whitespace();
            let (Some(idx), Some(time), None) = (it.next(), it.next(), it.next()) else {
                return Err(err(format!("expected 'index time', got {t:?}")));
            };
            let idx: usize = idx.parse().map_err(|_| err(format!("bad neuron index {idx:?}")))?;
            let time: f64 = time.parse().map_err(|_| err(format!("bad spike time {time:?}")))?;
            if idx >= n {
                return Err(err(format!("neuron index {idx} out of range 0..{n}")));
            }
            if !(time >= a && time <= b) {
                return Err(err(format!("spike time {time} outside [{a}, {b}]")));
            }
            times[idx].push(time);
        }
        let (_, a, b) = header.ok_or_else(|| IsingError::Parse { line: 1, message: "missing header".into() })?;
        SpikeTrains::new(a, b, times)
    }

    /// Spikes ordered by time, then neuron index. Times print in shortest round-trip form.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# neurons {} {} {}", self.neuron_count(), self.t_start, self.t_end)?;
        let mut all: Vec<(f64, usize)> =
            self.times.iter().enumerate().flat_map(|(i, ts)| ts.iter().map(move |&t| (t, i))).collect();
        all.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        for (t, i) in all {
            writeln!(w, "{i} {t}")?;
        }
        Ok(())
    }
}

/// A `T × N` matrix of ±1 spins with its bin width.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinSeries {
    pub bin_width: f64,
    samples: SampleSet,
}

impl SpinSeries {
    #[inline]
    pub fn bins(&self) -> usize {
        self.samples.count()
    }

    #[inline]
    pub fn neuron_count(&self) -> usize {
        self.samples.vertex_count()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[i8]> {
        self.samples.rows()
    }

    /// The series as samples, one bin per sample.
    pub fn as_samples(&self) -> &SampleSet {
        &self.samples
    }
}

/// Number of whole bins: the largest `T` with `t_start + Tτ ≤ t_end`.
pub fn bin_count(t_start: f64, t_end: f64, tau: f64) -> usize {
    let mut k = ((t_end - t_start) / tau).floor().max(0.0) as usize;
    while k > 0 && t_start + k as f64 * tau > t_end {
        k -= 1;
    }
    while t_start + (k + 1) as f64 * tau <= t_end {
        k += 1;
    }
    k
}

/// Index `k` with `t_start + kτ ≤ t < t_start + (k+1)τ`, using the same edges as [`bin_count`].
fn bin_index(t: f64, t_start: f64, tau: f64) -> usize {
    let mut k = ((t - t_start) / tau).floor().max(0.0) as usize;
    while k > 0 && t_start + k as f64 * tau > t {
        k -= 1;
    }
    while t_start + (k + 1) as f64 * tau <= t {
        k += 1;
    }
    k
}

/// `s_i^(t) = +1` iff neuron `i` spikes in `[t_start + tτ, t_start + (t+1)τ)`.
/// The trailing partial bin is dropped.
pub fn bin_spikes(trains: &SpikeTrains, tau: f64) -> Result<SpinSeries> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(IsingError::InvalidInput(format!("bin width must be positive, got {tau}")));
    }
    let (t0, t1) = trains.interval();
    let bins = bin_count(t0, t1, tau);
    let n = trains.neuron_count();
    let mut grid = vec![-1i8; bins * n];
    for i in 0..n {
        for &t in trains.times(i) {
            let k = bin_index(t, t0, tau);
            if k < bins {
                grid[k * n + i] = 1;
            }
        }
    }
    let mut samples = SampleSet::new(n);
    for row in grid.chunks_exact(n) {
        samples.push(row)?;
    }
    Ok(SpinSeries { bin_width: tau, samples })
}

/// Means and covariance of the bins, identical to sample statistics with `D = T`.
pub fn spike_statistics<T: Scalar>(series: &SpinSeries) -> Result<DataStatistics<T>> {
    statistics(series.as_samples())
}

/// Synthetic recording: one Gibbs sample of `model` per bin, a `+1` spin
/// becoming one spike placed uniformly in the middle 80% of its bin.
pub fn synthetic_spike_trains<T: Scalar>(model: &IsingModel<T>, bins: usize, tau: f64, burn_in: usize, seed: u64) -> Result<SpikeTrains> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(IsingError::InvalidInput(format!("bin width must be positive, got {tau}")));
    }
    let samples = gibbs_sample(model, bins, burn_in, 1, derive_seed(seed, 0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let mut times = vec![Vec::new(); model.vertex_count()];
    for (k, row) in samples.rows().enumerate() {
        for (i, &s) in row.iter().enumerate() {
            if s == 1 {
                let u: f64 = rng.gen_range(0.1..0.9);
                times[i].push((k as f64 + u) * tau);
            }
        }
    }
    SpikeTrains::new(0.0, bins as f64 * tau, times)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_spike_list_is_valid() {
        let s = SpikeTrains::parse("# neurons 2 0 1\n".as_bytes()).unwrap();
        assert_eq!(s.neuron_count(), 2);
        assert_eq!(s.spike_count(), 0);
        let series = bin_spikes(&s, 0.25).unwrap();
        assert_eq!(series.bins(), 4);
        assert!(series.rows().flatten().all(|&x| x == -1));
    }

    #[test]
    fn out_of_interval_time_names_line() {
        let text = "# neurons 2 0 1\n0 0.5\n1 1.5\n";
        match SpikeTrains::parse(text.as_bytes()) {
            Err(IsingError::Parse { line: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(SpikeTrains::parse("0 0.1\n".as_bytes()), Err(IsingError::Parse { line: 1, .. })));
        assert!(matches!(SpikeTrains::parse("# neurons 2 0 1\n2 0.1\n".as_bytes()), Err(IsingError::Parse { line: 2, .. })));
        assert!(matches!(SpikeTrains::parse("# neurons 2 0 1\n0 x\n".as_bytes()), Err(IsingError::Parse { line: 2, .. })));
    }

    #[test]
    fn unsorted_input_sorted_on_load() {
        let s = SpikeTrains::parse("# neurons 1 0 1\n0 0.7\n0 0.2\n".as_bytes()).unwrap();
        assert_eq!(s.times(0), &[0.2, 0.7]);
    }

    #[test]
    fn write_read_round_trip() {
        let s = SpikeTrains::new(0.0, 2.0, vec![vec![0.1, 1.923_456_789_012_3], vec![], vec![0.5, 0.5]]).unwrap();
        let mut buf = Vec::new();
        s.write(&mut buf).unwrap();
        assert_eq!(SpikeTrains::parse(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn two_spikes_in_first_bin() {
        let s = SpikeTrains::new(0.0, 0.002, vec![vec![0.0005, 0.0007]]).unwrap();
        let series = bin_spikes(&s, 0.001).unwrap();
        let rows: Vec<&[i8]> = series.rows().collect();
        assert_eq!(rows, vec![&[1][..], &[-1][..]]);
    }

    #[test]
    fn boundary_spike_goes_to_later_bin() {
        let s = SpikeTrains::new(0.0, 0.002, vec![vec![0.001]]).unwrap();
        let series = bin_spikes(&s, 0.001).unwrap();
        let rows: Vec<&[i8]> = series.rows().collect();
        assert_eq!(rows, vec![&[-1][..], &[1][..]]);
    }

    #[test]
    fn trailing_partial_bin_dropped() {
        assert_eq!(bin_count(0.0, 0.0025, 0.001), 2);
        assert_eq!(bin_count(0.0, 0.75, 0.25), 3);
        // 3 * 0.1 rounds above 0.3, so the third bin is partial.
        assert_eq!(bin_count(0.0, 0.3, 0.1), 2);
        let s = SpikeTrains::new(0.0, 0.0025, vec![vec![0.0022]]).unwrap();
        let series = bin_spikes(&s, 0.001).unwrap();
        assert!(series.rows().flatten().all(|&x| x == -1));
        assert!(bin_spikes(&s, 0.0).is_err());
    }

    #[test]
    fn coincident_neurons() {
        let s = SpikeTrains::new(0.0, 1.0, vec![vec![0.05, 0.31, 0.77], vec![0.06, 0.32, 0.78]]).unwrap();
        let st: DataStatistics<f64> = spike_statistics(&bin_spikes(&s, 0.1).unwrap()).unwrap();
        assert_eq!(st.covariance()[(0, 1)], 1.0 - st.means()[0] * st.means()[0]);
        let silent = SpikeTrains::new(0.0, 1.0, vec![vec![], vec![]]).unwrap();
        let st: DataStatistics<f64> = spike_statistics(&bin_spikes(&silent, 0.1).unwrap()).unwrap();
        assert_eq!(st.means(), &[-1.0, -1.0]);
        assert!(st.covariance().to_rows().iter().flatten().all(|&c| c == 0.0));
    }

    #[test]
    fn synthetic_trains_bin_back_to_samples() {
        let model = IsingModel::new(crate::graph::Graph::complete(3), vec![0.3, 0.2, 0.4], vec![-0.5; 3]).unwrap();
        let trains = synthetic_spike_trains(&model, 500, 0.001, 10, 5).unwrap();
        let series = bin_spikes(&trains, 0.001).unwrap();
        assert_eq!(series.bins(), 500);
        let direct = gibbs_sample(&model, 500, 10, 1, derive_seed(5, 0)).unwrap();
        assert_eq!(series.as_samples(), &direct);
    }
}
