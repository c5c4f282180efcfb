//! Ising model parameters, spin configurations and the seeded parameter generators.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IsingError, Result};
use crate::graph::{Edge, Graph};
use crate::scalar::Scalar;

/// Graph plus per-edge couplings `J` and per-vertex biases `h`.
///
/// Energy: `E(s) = −Σ_⟨ij⟩ J_ij s_i s_j − Σ_i h_i s_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingModel<T> {
    graph: Graph,
    couplings: Vec<T>,
    biases: Vec<T>,
}

impl<T: Scalar> IsingModel<T> {
    pub fn new(graph: Graph, couplings: Vec<T>, biases: Vec<T>) -> Result<Self> {
        if couplings.len() != graph.edge_count() {
            return Err(IsingError::InvalidInput(format!(
                "{} couplings for {} edges",
                couplings.len(),
                graph.edge_count()
            )));
        }
        if biases.len() != graph.vertex_count() {
            return Err(IsingError::InvalidInput(format!(
                "{} biases for {} vertices",
                biases.len(),
                graph.vertex_count()
            )));
        }
        if couplings.iter().chain(&biases).any(|x| !x.is_finite()) {
            return Err(IsingError::InvalidInput("model parameters must be finite".into()));
        }
        Ok(IsingModel { graph, couplings, biases })
    }

    /// All-zero parameters on `graph`.
    pub fn zeros(graph: Graph) -> Self {
        let (e, v) = (graph.edge_count(), graph.vertex_count());
        IsingModel { graph, couplings: vec![T::zero(); e], biases: vec![T::zero(); v] }
    }

    #[inline]
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    #[inline]
    pub fn couplings(&self) -> &[T] {
        &self.couplings
    }

    #[inline]
    pub fn biases(&self) -> &[T] {
        &self.biases
    }

    #[inline]
    pub fn vertex_count(&self) -> usize {
        self.graph.vertex_count()
    }

    pub fn with_couplings(&self, couplings: Vec<T>) -> Result<Self> {
        IsingModel::new(self.graph.clone(), couplings, self.biases.clone())
    }

    pub fn with_biases(&self, biases: Vec<T>) -> Result<Self> {
        IsingModel::new(self.graph.clone(), self.couplings.clone(), biases)
    }

    pub(crate) fn couplings_mut(&mut self) -> &mut [T] {
        &mut self.couplings
    }

    pub(crate) fn biases_mut(&mut self) -> &mut [T] {
        &mut self.biases
    }

    /// `h_i + Σ_j J_ij s_j`.
    #[inline]
    pub fn local_field(&self, i: usize, spins: &[i8]) -> T {
        let mut field = self.biases[i];
        for &(j, e) in self.graph.neighbors(i) {
            if spins[j] > 0 {
                field += self.couplings[e];
            } else {
                field -= self.couplings[e];
            }
        }
        field
    }

    pub fn energy(&self, spins: &SpinConfiguration) -> T {
        let s = spins.as_slice();
        let pair: T = self
            .graph
            .edges()
            .iter()
            .zip(&self.couplings)
            .map(|(&(i, j), &jij)| jij * T::of(f64::from(s[i] * s[j])))
            .sum();
        let field: T = self.biases.iter().zip(s).map(|(&h, &si)| h * T::of(f64::from(si))).sum();
        -(pair + field)
    }

    /// Dense symmetric coupling matrix with zeros off the graph.
    pub fn coupling_matrix(&self) -> crate::linalg::Matrix<T> {
        let mut m = crate::linalg::Matrix::zeros(self.vertex_count());
        for (&(i, j), &jij) in self.graph.edges().iter().zip(&self.couplings) {
            m[(i, j)] = jij;
            m[(j, i)] = jij;
        }
        m
    }

    pub fn to_file(&self) -> ModelFile<T> {
        ModelFile {
            vertices: self.vertex_count(),
            edges: self.graph.edges().to_vec(),
            couplings: self.couplings.clone(),
            biases: self.biases.clone(),
        }
    }

    pub fn from_file(file: ModelFile<T>) -> Result<Self> {
        let graph = Graph::new(file.vertices, file.edges.iter().copied())?;
        // Re-align couplings when the file lists edges in non-canonical order.
        let mut couplings = vec![T::zero(); graph.edge_count()];
        if file.couplings.len() != file.edges.len() {
            return Err(IsingError::InvalidInput(format!(
                "{} couplings for {} edges",
                file.couplings.len(),
                file.edges.len()
            )));
        }
        for (&(a, b), &jij) in file.edges.iter().zip(&file.couplings) {
            let e = graph.edge_index(a, b).expect("edge present after canonicalization");
            couplings[e] = jij;
        }
        IsingModel::new(graph, couplings, file.biases)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(s)?)
    }
}

/// Interchange format: `{"vertices": N, "edges": [[i,j],...], "J": [...], "h": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct ModelFile<T> {
    pub vertices: usize,
    pub edges: Vec<Edge>,
    #[serde(rename = "J")]
    pub couplings: Vec<T>,
    #[serde(rename = "h")]
    pub biases: Vec<T>,
}

/// Vector of spins, each exactly `−1` or `+1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinConfiguration(Vec<i8>);

impl SpinConfiguration {
    pub fn new(spins: Vec<i8>) -> Result<Self> {
        if let Some(p) = spins.iter().position(|&s| s != 1 && s != -1) {
            return Err(IsingError::InvalidInput(format!("spin {p} is {} (expected ±1)", spins[p])));
        }
        Ok(SpinConfiguration(spins))
    }

    pub fn all_down(n: usize) -> Self {
        SpinConfiguration(vec![-1; n])
    }

    /// Bit `k` of `bits` set means spin `k` is `+1`.
    pub fn from_bits(bits: u64, n: usize) -> Self {
        SpinConfiguration((0..n).map(|k| if bits >> k & 1 == 1 { 1 } else { -1 }).collect())
    }

    #[inline]
    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Coupling sign regime of the reconstruction experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// `J_ij ~ u[0, ω]`
    Attractive,
    /// `J_ij ~ u[−ω, ω]`
    Mixed,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Attractive => "attractive",
            Regime::Mixed => "mixed",
        })
    }
}

impl FromStr for Regime {
    type Err = IsingError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attractive" => Ok(Regime::Attractive),
            "mixed" => Ok(Regime::Mixed),
            _ => Err(IsingError::InvalidInput(format!("unknown regime '{s}'"))),
        }
    }
}

/// Half-width of the bias distribution `h_i ~ u[−0.05, 0.05]`.
pub const BIAS_HALF_WIDTH: f64 = 0.05;

/// Per-edge couplings drawn uniformly according to `regime`; a pure function of its inputs.
pub fn generate_couplings<T: Scalar>(graph: &Graph, regime: Regime, omega: f64, seed: u64) -> Result<Vec<T>> {
    if !(omega >= 0.0) || !omega.is_finite() {
        return Err(IsingError::InvalidInput(format!("omega must be finite and nonnegative, got {omega}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..graph.edge_count())
        .map(|_| {
            let u: f64 = rng.gen();
            T::of(match regime {
                Regime::Attractive => omega * u,
                Regime::Mixed => omega * (2.0 * u - 1.0),
            })
        })
        .collect())
}

/// Per-vertex biases `h_i ~ u[−0.05, 0.05]`.
pub fn generate_biases<T: Scalar>(graph: &Graph, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..graph.vertex_count())
        .map(|_| {
            let u: f64 = rng.gen();
            T::of(BIAS_HALF_WIDTH * (2.0 * u - 1.0))
        })
        .collect()
}

/// Draws a full model. Couplings use `derive_seed(seed, 0)`, biases `derive_seed(seed, 1)`.
pub fn generate_model<T: Scalar>(graph: Graph, regime: Regime, omega: f64, seed: u64) -> Result<IsingModel<T>> {
    let couplings = generate_couplings(&graph, regime, omega, derive_seed(seed, 0))?;
    let biases = generate_biases(&graph, derive_seed(seed, 1));
    IsingModel::new(graph, couplings, biases)
}

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent sub-stream seed for `stream` under a parent seed.
#[inline]
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ stream.wrapping_mul(0xD605_0C5B_5DB8_5A39))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_omega_gives_zero_couplings() {
        let g = Graph::grid2d(4, 4);
        let j: Vec<f64> = generate_couplings(&g, Regime::Attractive, 0.0, 5).unwrap();
        assert!(j.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn attractive_support() {
        let g = Graph::complete(30);
        let j: Vec<f64> = generate_couplings(&g, Regime::Attractive, 1.0, 11).unwrap();
        assert!(j.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn mixed_is_reproducible_and_centered() {
        let g = Graph::complete(142); // 10011 edges
        let a: Vec<f64> = generate_couplings(&g, Regime::Mixed, 0.5, 99).unwrap();
        let b: Vec<f64> = generate_couplings(&g, Regime::Mixed, 0.5, 99).unwrap();
        assert_eq!(a, b);
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let sigma = 0.5 / 3f64.sqrt();
        assert!(mean.abs() < 3.0 * sigma / n.sqrt(), "mean {mean}");
        assert!(a.iter().all(|&x| (-0.5..=0.5).contains(&x)));
    }

    #[test]
    fn negative_omega_rejected() {
        assert!(generate_couplings::<f64>(&Graph::chain(3), Regime::Mixed, -1.0, 0).is_err());
    }

    #[test]
    fn biases_support_determinism_and_mean() {
        let g = Graph::new(10_000, []).unwrap();
        let h: Vec<f64> = generate_biases(&g, 3);
        assert!(h.iter().all(|&x| (-0.05..=0.05).contains(&x)));
        assert_eq!(h, generate_biases::<f64>(&g, 3));
        let n = h.len() as f64;
        let mean = h.iter().sum::<f64>() / n;
        assert!(mean.abs() < 3.0 * (0.05 / 3f64.sqrt()) / n.sqrt());
    }

    #[test]
    fn model_validation() {
        let g = Graph::chain(3);
        assert!(IsingModel::new(g.clone(), vec![0.1], vec![0.0; 3]).is_err());
        assert!(IsingModel::new(g.clone(), vec![0.1, 0.2], vec![0.0; 2]).is_err());
        assert!(IsingModel::new(g.clone(), vec![0.1, f64::NAN], vec![0.0; 3]).is_err());
        assert!(IsingModel::new(g, vec![0.1, 0.2], vec![0.0; 3]).is_ok());
    }

    #[test]
    fn energy_and_local_field() {
        let m = IsingModel::<f64>::new(Graph::chain(3), vec![0.5, -0.25], vec![0.1, 0.0, -0.2]).unwrap();
        let s = SpinConfiguration::new(vec![1, 1, -1]).unwrap();
        // −(0.5·1 + (−0.25)(−1)) − (0.1 + 0 + 0.2)
        assert!((m.energy(&s) - (-(0.5 + 0.25) - 0.3)).abs() < 1e-15);
        assert!((m.local_field(1, s.as_slice()) - (0.5 + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn spin_validation() {
        assert!(SpinConfiguration::new(vec![1, 0, -1]).is_err());
        assert_eq!(SpinConfiguration::from_bits(0b101, 3).as_slice(), &[1, -1, 1]);
    }

    #[test]
    fn json_round_trip_and_realignment() {
        let m = generate_model::<f64>(Graph::grid2d(3, 2), Regime::Mixed, 0.7, 1).unwrap();
        let back = IsingModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);

        let json = r#"{"vertices":3,"edges":[[2,1],[0,1]],"J":[0.2,0.1],"h":[0,0,0]}"#;
        let m = IsingModel::<f64>::from_json(json).unwrap();
        assert_eq!(m.graph().edges(), &[(0, 1), (1, 2)]);
        assert_eq!(m.couplings(), &[0.1, 0.2]);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(7, 0), derive_seed(7, 1));
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }
}
