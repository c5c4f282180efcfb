//! Graph topologies and edge-appearance probabilities.
//!
//! Edges are stored canonically: every pair is `(i, j)` with `i < j` and the
//! list is sorted, so coupling vectors aligned to it serialize deterministically.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IsingError, Result};
use crate::scalar::Scalar;

/// Undirected vertex pair with `0 <= i < j < |V|`.
pub type Edge = (usize, usize);

/// Simple undirected graph with canonical edge ordering and cached adjacency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    vertex_count: usize,
    edges: Vec<Edge>,
    /// `adjacency[v]` lists `(neighbor, edge_index)` sorted by neighbor.
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl Graph {
    /// Builds a graph from an arbitrary edge list, canonicalizing each pair.
    ///
    /// Rejects self-loops, out-of-range endpoints and duplicate pairs.
    pub fn new(vertex_count: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        if vertex_count == 0 {
            return Err(IsingError::Graph("graph needs at least one vertex".into()));
        }
        let mut canon: Vec<Edge> = Vec::new();
        for (a, b) in edges {
            if a == b {
                return Err(IsingError::Graph(format!("self-loop at vertex {a}")));
            }
            if a >= vertex_count || b >= vertex_count {
                return Err(IsingError::Graph(format!(
                    "edge ({a},{b}) out of range for {vertex_count} vertices"
                )));
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        if let Some(w) = canon.windows(2).find(|w| w[0] == w[1]) {
            return Err(IsingError::Graph(format!("duplicate edge ({},{})", w[0].0, w[0].1)));
        }
        Ok(Self::from_canonical(vertex_count, canon))
    }

    fn from_canonical(vertex_count: usize, edges: Vec<Edge>) -> Self {
        let mut adjacency = vec![Vec::new(); vertex_count];
        for (e, &(i, j)) in edges.iter().enumerate() {
            adjacency[i].push((j, e));
            adjacency[j].push((i, e));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Graph { vertex_count, edges, adjacency }
    }

    /// Open-boundary nearest-neighbour lattice; vertex `(x, y)` has index `y * width + x`.
    pub fn grid2d(width: usize, height: usize) -> Self {
        assert!(width >= 1 && height >= 1, "grid dimensions must be positive");
        let idx = |x: usize, y: usize| y * width + x;
        let mut edges = Vec::with_capacity(width * (height - 1) + height * (width - 1));
        for y in 0..height {
            for x in 0..width {
                if x + 1 < width {
                    edges.push((idx(x, y), idx(x + 1, y)));
                }
                if y + 1 < height {
                    edges.push((idx(x, y), idx(x, y + 1)));
                }
            }
        }
        edges.sort_unstable();
        Self::from_canonical(width * height, edges)
    }

    /// Open-boundary cubic lattice; vertex `(x, y, z)` has index `(z * ny + y) * nx + x`.
    pub fn grid3d(nx: usize, ny: usize, nz: usize) -> Self {
        assert!(nx >= 1 && ny >= 1 && nz >= 1, "grid dimensions must be positive");
        let idx = |x: usize, y: usize, z: usize| (z * ny + y) * nx + x;
        let mut edges = Vec::new();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if x + 1 < nx {
                        edges.push((idx(x, y, z), idx(x + 1, y, z)));
                    }
                    if y + 1 < ny {
                        edges.push((idx(x, y, z), idx(x, y + 1, z)));
                    }
                    if z + 1 < nz {
                        edges.push((idx(x, y, z), idx(x, y, z + 1)));
                    }
                }
            }
        }
        edges.sort_unstable();
        Self::from_canonical(nx * ny * nz, edges)
    }

    pub fn complete(n: usize) -> Self {
        assert!(n >= 1, "complete graph needs at least one vertex");
        let edges = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
        Self::from_canonical(n, edges)
    }

    /// Path `0 - 1 - ... - (n-1)`.
    pub fn chain(n: usize) -> Self {
        assert!(n >= 1, "chain needs at least one vertex");
        Self::from_canonical(n, (1..n).map(|i| (i - 1, i)).collect())
    }

    pub fn cycle(n: usize) -> Self {
        assert!(n >= 3, "cycle needs at least three vertices");
        Graph::new(n, (0..n).map(|i| (i, (i + 1) % n))).expect("cycle is simple")
    }

    /// Random recursive tree: vertex `k` attaches to a uniformly chosen earlier vertex.
    pub fn random_tree(n: usize, seed: u64) -> Self {
        assert!(n >= 1, "tree needs at least one vertex");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edges = (1..n).map(|k| (rng.gen_range(0..k), k));
        Graph::new(n, edges).expect("recursive tree is simple")
    }

    #[inline]
    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    #[inline]
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    #[inline]
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// `(neighbor, edge_index)` pairs incident to `v`.
    #[inline]
    pub fn neighbors(&self, v: usize) -> &[(usize, usize)] {
        &self.adjacency[v]
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        let key = (i.min(j), i.max(j));
        self.edges.binary_search(&key).ok()
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.vertex_count];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(v) = queue.pop_front() {
            for &(w, _) in &self.adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    reached += 1;
                    queue.push_back(w);
                }
            }
        }
        reached == self.vertex_count
    }

    pub fn is_tree(&self) -> bool {
        self.edges.len() + 1 == self.vertex_count && self.is_connected()
    }
}

/// Textual graph description used by configs and the CLI:
/// `grid2d:WxH`, `grid3d:XxYxZ`, `complete:N`, `chain:N`, `cycle:N`, `tree:N:SEED`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum GraphSpec {
    Grid2d(usize, usize),
    Grid3d(usize, usize, usize),
    Complete(usize),
    Chain(usize),
    Cycle(usize),
    Tree(usize, u64),
}

impl GraphSpec {
    pub fn build(&self) -> Graph {
        match *self {
            GraphSpec::Grid2d(w, h) => Graph::grid2d(w, h),
            GraphSpec::Grid3d(x, y, z) => Graph::grid3d(x, y, z),
            GraphSpec::Complete(n) => Graph::complete(n),
            GraphSpec::Chain(n) => Graph::chain(n),
            GraphSpec::Cycle(n) => Graph::cycle(n),
            GraphSpec::Tree(n, seed) => Graph::random_tree(n, seed),
        }
    }
}

impl fmt::Display for GraphSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphSpec::Grid2d(w, h) => write!(f, "grid2d:{w}x{h}"),
            GraphSpec::Grid3d(x, y, z) => write!(f, "grid3d:{x}x{y}x{z}"),
            GraphSpec::Complete(n) => write!(f, "complete:{n}"),
            GraphSpec::Chain(n) => write!(f, "chain:{n}"),
            GraphSpec::Cycle(n) => write!(f, "cycle:{n}"),
            GraphSpec::Tree(n, s) => write!(f, "tree:{n}:{s}"),
        }
    }
}

impl FromStr for GraphSpec {
    type Err = IsingError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || IsingError::InvalidInput(format!("unrecognized graph spec '{s}'"));
        let positive = |t: &str| -> Result<usize> {
            match t.trim().parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v),
                _ => Err(bad()),
            }
        };
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let dims: Vec<&str> = rest.split('x').collect();
        match (kind.trim(), dims.as_slice()) {
            ("grid2d", [w, h]) => Ok(GraphSpec::Grid2d(positive(w)?, positive(h)?)),
            ("grid3d", [x, y, z]) => Ok(GraphSpec::Grid3d(positive(x)?, positive(y)?, positive(z)?)),
            ("complete", [n]) => Ok(GraphSpec::Complete(positive(n)?)),
            ("chain", [n]) => Ok(GraphSpec::Chain(positive(n)?)),
            ("cycle", [n]) => {
                let n = positive(n)?;
                if n < 3 {
                    return Err(bad());
                }
                Ok(GraphSpec::Cycle(n))
            }
            ("tree", [_]) => {
                let (n, seed) = rest.split_once(':').ok_or_else(bad)?;
                Ok(GraphSpec::Tree(positive(n)?, seed.trim().parse().map_err(|_| bad())?))
            }
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for GraphSpec {
    type Error = IsingError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GraphSpec> for String {
    fn from(g: GraphSpec) -> Self {
        g.to_string()
    }
}

/// Edge appearance probabilities `ρ_ij`, aligned with a graph's edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct EdgeAppearance<T> {
    rho: Vec<T>,
}

impl<T: Scalar> EdgeAppearance<T> {
    /// Validates a user-supplied vector: `0 < ρ ≤ 1` per edge and `Σρ = |V| − 1`.
    ///
    /// The sum rule is a necessary condition for `ρ` to come from a distribution
    /// over spanning trees; it is checked to `1e-12` (or a few ulps per edge for
    /// lower precision scalars).
    pub fn new(graph: &Graph, rho: Vec<T>) -> Result<Self> {
        let ea = Self::with_range_check(graph, rho)?;
        let target = T::of_usize(graph.vertex_count() - 1);
        let sum: T = ea.rho.iter().copied().sum();
        let tol = T::of(1e-12).max(T::epsilon() * T::of_usize(4 * graph.edge_count().max(1)) * target.max(T::one()));
        if (sum - target).abs() > tol {
            return Err(IsingError::InvalidInput(format!(
                "edge appearance probabilities sum to {sum}, expected |V|-1 = {target}"
            )));
        }
        Ok(ea)
    }

    /// `ρ_ij = (|V| − 1)/|E|` on every edge.
    pub fn uniform(graph: &Graph) -> Result<Self> {
        if graph.edge_count() == 0 {
            return Err(IsingError::Graph("uniform edge appearance needs at least one edge".into()));
        }
        if !graph.is_connected() {
            return Err(IsingError::Graph("graph is disconnected: no spanning tree exists".into()));
        }
        let value = T::of_usize(graph.vertex_count() - 1) / T::of_usize(graph.edge_count());
        Ok(EdgeAppearance { rho: vec![value; graph.edge_count()] })
    }

    /// `ρ ≡ 1`: the Bethe specialization. Only a valid edge appearance vector on trees.
    pub fn bethe(graph: &Graph) -> Self {
        EdgeAppearance { rho: vec![T::one(); graph.edge_count()] }
    }

    fn with_range_check(graph: &Graph, rho: Vec<T>) -> Result<Self> {
        if rho.len() != graph.edge_count() {
            return Err(IsingError::InvalidInput(format!(
                "{} edge appearance values for {} edges",
                rho.len(),
                graph.edge_count()
            )));
        }
        if let Some((e, r)) = rho.iter().enumerate().find(|(_, &r)| !(r > T::zero() && r <= T::one())) {
            return Err(IsingError::InvalidInput(format!("rho[{e}] = {r} outside (0, 1]")));
        }
        Ok(EdgeAppearance { rho })
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.rho
    }

    #[inline]
    pub fn get(&self, edge: usize) -> T {
        self.rho[edge]
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    /// `1 − Σ_{j ∈ N(v)} ρ_vj`, the weight of vertex `v`'s single-site entropy.
    pub fn vertex_weight(&self, graph: &Graph, v: usize) -> T {
        T::one() - graph.neighbors(v).iter().map(|&(_, e)| self.rho[e]).sum::<T>()
    }
}
