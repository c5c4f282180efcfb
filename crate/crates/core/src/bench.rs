//! Reconstruction sweeps: generate, sample, invert, score.

use serde::{Deserialize, Serialize};

use crate::error::{IsingError, Result};
use crate::exact::{exact_moments, MAX_EXACT_SPINS};
use crate::graph::{EdgeAppearance, Graph, GraphSpec};
use crate::inverse::{invert_all, InferredCouplings, Method};
use crate::model::{derive_seed, generate_model, splitmix64, IsingModel, Regime};
use crate::sampler::gibbs_moments;
use crate::scalar::Scalar;
use crate::stats::DataStatistics;

/// `Δ_J = √(Σ (J − J^true)² / Σ (J^true)²)` over edges.
///
/// Failed (NaN) estimates contribute `(J^true)²`.
pub fn delta_j<T: Scalar>(estimate: &InferredCouplings<T>, truth: &[T]) -> Result<T> {
    if estimate.couplings.len() != truth.len() {
        return Err(IsingError::InvalidInput(format!(
            "estimate has {} edges but the truth has {}",
            estimate.couplings.len(),
            truth.len()
        )));
    }
    let denom: T = truth.iter().map(|&t| t * t).sum();
    if !(denom > T::zero()) {
        return Err(IsingError::UndefinedMetric("all true couplings are zero".into()));
    }
    let num: T = estimate
        .couplings
        .iter()
        .zip(truth)
        .map(|(&j, &t)| {
            let d = if j.is_nan() { t } else { j - t };
            d * d
        })
        .sum();
    Ok((num / denom).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerSettings {
    /// Recorded samples `D`.
    pub samples: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        SamplerSettings { samples: 100_000, burn_in: 1_000, thin: 1 }
    }
}

fn default_trials() -> usize {
    10
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub graph: GraphSpec,
    pub regime: Regime,
    pub omega_grid: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub sampler: SamplerSettings,
    /// Use enumeration instead of Gibbs sampling (`|V| ≤ 24`).
    #[serde(default)]
    pub exact_stats: bool,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub seed: u64,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(IsingError::InvalidInput("trials must be at least 1".into()));
        }
        if self.omega_grid.is_empty() {
            return Err(IsingError::InvalidInput("omega grid is empty".into()));
        }
        if let Some(w) = self.omega_grid.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(IsingError::InvalidInput(format!("omega {w} must be finite and nonnegative")));
        }
        if self.methods.is_empty() {
            return Err(IsingError::InvalidInput("no methods configured".into()));
        }
        if !self.exact_stats && (self.sampler.samples == 0 || self.sampler.thin == 0) {
            return Err(IsingError::InvalidInput("sampler samples and thin must be at least 1".into()));
        }
        Ok(())
    }
}

/// Seed of cell `(ω-index, trial)`; independent of scheduling.
pub fn cell_seed(seed: u64, omega_index: usize, trial: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ omega_index as u64) ^ trial as u64)
}

/// Score of one method in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: Method,
    pub omega: f64,
    pub omega_index: usize,
    pub trial: usize,
    /// `None` when the cell failed; see `error`.
    pub delta_j: Option<f64>,
    /// Edges outside the formula's domain, scored as `J = 0`.
    pub failures: usize,
    pub error: Option<String>,
    pub model_seed: u64,
    /// `None` with exact statistics.
    pub sampler_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub omega: f64,
    /// Trials with a defined `Δ_J`.
    pub count: usize,
    pub trials: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation over trials divided by `√count`.
    pub std_error: Option<f64>,
    pub total_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub config: SweepConfig,
    pub version: String,
    pub vertices: usize,
    pub edges: usize,
    pub boundary: String,
    pub statistics: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub metadata: ReportMetadata,
    pub cells: Vec<CellResult>,
    pub aggregates: Vec<Aggregate>,
}

impl ReconstructionReport {
    pub fn aggregate(&self, method: Method, omega: f64) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.method == method && a.omega == omega)
    }

    /// Long format `method,omega,trial,delta_j,failures`; failed cells print `NaN`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,omega,trial,delta_j,failures\n");
        for c in &self.cells {
            let d = c.delta_j.map_or_else(|| "NaN".to_string(), |d| d.to_string());
            out.push_str(&format!("{},{},{},{},{}\n", c.method, c.omega, c.trial, d, c.failures));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Model and statistics of one cell, before inversion.
#[derive(Debug, Clone)]
pub struct CellInput {
    pub model: IsingModel<f64>,
    pub statistics: DataStatistics<f64>,
    pub model_seed: u64,
    pub sampler_seed: Option<u64>,
}

/// Regenerates the model and statistics of cell `(omega_index, trial)`.
pub fn cell_input(config: &SweepConfig, graph: &Graph, omega_index: usize, trial: usize) -> Result<CellInput> {
    let omega = config.omega_grid[omega_index];
    let model_seed = cell_seed(config.seed, omega_index, trial);
    let model = generate_model::<f64>(graph.clone(), config.regime, omega, model_seed)?;
    let (statistics, sampler_seed) = if config.exact_stats {
        (exact_moments(&model)?.to_statistics(), None)
    } else {
        let s = derive_seed(model_seed, 2);
        let sp = &config.sampler;
        let acc = gibbs_moments(&model, sp.samples * sp.thin, sp.burn_in, sp.thin, s)?;
        (acc.statistics()?, Some(s))
    };
    Ok(CellInput { model, statistics, model_seed, sampler_seed })
}

/// Runs every configured method on one cell and scores it.
pub fn run_cell(config: &SweepConfig, graph: &Graph, rho: &EdgeAppearance<f64>, omega_index: usize, trial: usize) -> Vec<CellResult> {
    let omega = config.omega_grid[omega_index];
    let base = |method: Method| CellResult {
        method,
        omega,
        omega_index,
        trial,
        delta_j: None,
        failures: 0,
        error: None,
        model_seed: cell_seed(config.seed, omega_index, trial),
        sampler_seed: None,
    };
    let input = match cell_input(config, graph, omega_index, trial) {
        Ok(i) => i,
        Err(e) => {
            return config.methods.iter().map(|&m| CellResult { error: Some(e.to_string()), ..base(m) }).collect();
        }
    };
    let results = match invert_all(&input.statistics, graph, rho, &config.methods) {
        Ok(r) => r,
        Err(e) => {
            return config.methods.iter().map(|&m| CellResult { error: Some(e.to_string()), ..base(m) }).collect();
        }
    };
    results
        .into_iter()
        .map(|(method, r)| {
            let mut cell = CellResult { sampler_seed: input.sampler_seed, ..base(method) };
            match r.and_then(|est| {
                cell.failures = est.failures.len();
                delta_j(&est, input.model.couplings())
            }) {
                Ok(d) => cell.delta_j = Some(d),
                Err(e) => cell.error = Some(e.to_string()),
            }
            cell
        })
        .collect()
}

fn aggregate(config: &SweepConfig, cells: &[CellResult]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for &omega in &config.omega_grid {
        for &method in &config.methods {
            let group: Vec<&CellResult> = cells.iter().filter(|c| c.method == method && c.omega == omega).collect();
            let vals: Vec<f64> = group.iter().filter_map(|c| c.delta_j).collect();
            let count = vals.len();
            let mean = (count > 0).then(|| vals.iter().sum::<f64>() / count as f64);
            let std_error = mean.filter(|_| count > 1).map(|m| {
                let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (count - 1) as f64;
                (var / count as f64).sqrt()
            });
            out.push(Aggregate {
                method,
                omega,
                count,
                trials: group.len(),
                mean,
                std_error,
                total_failures: group.iter().map(|c| c.failures).sum(),
            });
        }
    }
    out
}

/// Runs all `(ω, trial)` cells on `jobs` threads (0 means the rayon default).
///
/// The report depends only on the config: cells are seeded by index and
/// collected in grid order.
pub fn run_sweep(config: &SweepConfig, jobs: usize) -> Result<ReconstructionReport> {
    use rayon::prelude::*;

    config.validate()?;
    let graph = config.graph.build();
    if config.exact_stats && graph.vertex_count() > MAX_EXACT_SPINS {
        return Err(IsingError::TooLarge { vertices: graph.vertex_count(), cap: MAX_EXACT_SPINS });
    }
    let rho = EdgeAppearance::uniform(&graph)?;
    let grid: Vec<(usize, usize)> =
        (0..config.omega_grid.len()).flat_map(|w| (0..config.trials).map(move |t| (w, t))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| IsingError::InvalidInput(format!("thread pool: {e}")))?;
    let per_cell: Vec<Vec<CellResult>> =
        pool.install(|| grid.par_iter().map(|&(w, t)| run_cell(config, &graph, &rho, w, t)).collect());
    let cells: Vec<CellResult> = per_cell.into_iter().flatten().collect();
    let aggregates = aggregate(config, &cells);
    Ok(ReconstructionReport {
        metadata: ReportMetadata {
            config: config.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            vertices: graph.vertex_count(),
            edges: graph.edge_count(),
            boundary: "open".into(),
            statistics: if config.exact_stats { "exact".into() } else { "gibbs".into() },
        },
        cells,
        aggregates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(j: Vec<f64>) -> InferredCouplings<f64> {
        let g = Graph::chain(j.len() + 1);
        InferredCouplings {
            method: Method::Ip,
            vertices: g.vertex_count(),
            edges: g.edges().to_vec(),
            couplings: j,
            failures: vec![],
            condition_number: None,
            warnings: vec![],
            off_graph_max_abs: None,
        }
    }

    #[test]
    fn delta_j_trivial_cases() {
        let truth = vec![0.5, -0.3, 1.0];
        assert_eq!(delta_j(&est(truth.clone()), &truth).unwrap(), 0.0);
        assert_eq!(delta_j(&est(vec![0.0; 3]), &truth).unwrap(), 1.0);
        assert_eq!(delta_j(&est(truth.iter().map(|x| 2.0 * x).collect()), &truth).unwrap(), 1.0);
        assert_eq!(delta_j(&est(vec![f64::NAN; 3]), &truth).unwrap(), 1.0);
        assert!(matches!(delta_j(&est(vec![0.0; 3]), &[0.0; 3]), Err(IsingError::UndefinedMetric(_))));
    }

    fn small_config() -> SweepConfig {
        SweepConfig {
            graph: "grid2d:3x3".parse().unwrap(),
            regime: Regime::Attractive,
            omega_grid: vec![0.0, 0.5],
            trials: 3,
            sampler: SamplerSettings { samples: 2000, burn_in: 100, thin: 1 },
            exact_stats: false,
            methods: Method::ALL.to_vec(),
            seed: 42,
        }
    }

    #[test]
    fn zero_omega_cells_record_undefined_metric() {
        let r = run_sweep(&small_config(), 2).unwrap();
        assert_eq!(r.cells.len(), 2 * 3 * 4);
        for c in r.cells.iter().filter(|c| c.omega == 0.0) {
            assert!(c.delta_j.is_none() && c.error.as_deref().unwrap().contains("undefined"));
        }
        assert!(r.cells.iter().filter(|c| c.omega == 0.5).all(|c| c.delta_j.is_some()));
        let a = r.aggregate(Method::Trw, 0.5).unwrap();
        assert_eq!((a.count, a.trials), (3, 3));
    }

    #[test]
    fn deterministic_across_job_counts() {
        let cfg = small_config();
        let a = run_sweep(&cfg, 1).unwrap();
        let b = run_sweep(&cfg, 4).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn bethe_exact_on_trees_through_harness() {
        let cfg = SweepConfig {
            graph: GraphSpec::Tree(9, 4),
            exact_stats: true,
            omega_grid: vec![0.3, 1.0, 1.2],
            regime: Regime::Mixed,
            ..small_config()
        };
        let r = run_sweep(&cfg, 0).unwrap();
        for c in r.cells.iter().filter(|c| c.method == Method::Bethe) {
            assert!(c.delta_j.unwrap() < 1e-8);
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = small_config();
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<SweepConfig>(&s).unwrap(), cfg);
        let minimal = r#"{"graph":"complete:5","regime":"mixed","omega_grid":[1.0],"seed":3}"#;
        let m: SweepConfig = serde_json::from_str(minimal).unwrap();
        assert_eq!(m.trials, 10);
        assert_eq!(m.methods.len(), 4);
        assert!(SweepConfig { trials: 0, ..cfg }.validate().is_err());
    }

    #[test]
    fn csv_shape() {
        let r = run_sweep(&SweepConfig { omega_grid: vec![0.5], trials: 1, ..small_config() }, 1).unwrap();
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "method,omega,trial,delta_j,failures");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("ip,0.5,0,"));
    }
}
