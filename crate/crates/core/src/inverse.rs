//! Closed-form inverse Ising estimators: independent pair (IP), Bethe,
//! Sessak-Monasson (SM) and tree-reweighted (TRW).
//!
//! All four map data statistics to one coupling per graph edge. Edges that
//! fall outside a formula's domain are reported in
//! [`InferredCouplings::failures`] with a NaN coupling; the remaining edges
//! are still returned.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{IsingError, Result};
use crate::graph::{Edge, EdgeAppearance, Graph};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::stats::DataStatistics;
use crate::trw::f_aux;

/// Condition numbers above this produce a warning.
pub const CONDITION_WARNING: f64 = 1e12;

/// `|(C̃⁻¹)_ij|` below this returns the analytic limit `J = 0`.
pub const SCALED_INVERSE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ip,
    Bethe,
    Sm,
    Trw,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ip, Method::Bethe, Method::Sm, Method::Trw];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ip => "ip",
            Method::Bethe => "bethe",
            Method::Sm => "sm",
            Method::Trw => "trw",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = IsingError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ip" => Ok(Method::Ip),
            "bethe" | "ba" => Ok(Method::Bethe),
            "sm" => Ok(Method::Sm),
            "trw" => Ok(Method::Trw),
            other => Err(IsingError::InvalidInput(format!("unknown method {other:?}"))),
        }
    }
}

/// Shared per-edge quantities for the Bethe/TRW formulas.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseWorkspace<T> {
    pub inv_covariance: Matrix<T>,
    /// `‖C‖₁ ‖C⁻¹‖₁`.
    pub condition_number: T,
    /// `(C⁻¹)_ij / ρ_ij` per edge.
    pub scaled_inv: Vec<T>,
    /// `1 + 4(1 − m̂_i²)(1 − m̂_j²)(C̃⁻¹)²_ij` per edge.
    pub discriminant: Vec<T>,
}

impl<T: Scalar> InverseWorkspace<T> {
    pub fn new(stats: &DataStatistics<T>, graph: &Graph, rho: &EdgeAppearance<T>) -> Result<Self> {
        check_dims(stats, graph)?;
        if rho.len() != graph.edge_count() {
            return Err(IsingError::InvalidInput("edge appearance does not match the graph".into()));
        }
        let (inv_covariance, condition_number) = symmetric_inverse(stats.covariance())?;
        Ok(Self::with_inverse(stats, graph, rho, inv_covariance, condition_number))
    }

    fn with_inverse(stats: &DataStatistics<T>, graph: &Graph, rho: &EdgeAppearance<T>, inv: Matrix<T>, cond: T) -> Self {
        let m = stats.means();
        let mut scaled_inv = Vec::with_capacity(graph.edge_count());
        let mut discriminant = Vec::with_capacity(graph.edge_count());
        for (e, &(i, j)) in graph.edges().iter().enumerate() {
            let x = inv[(i, j)] / rho.get(e);
            scaled_inv.push(x);
            discriminant.push(T::one() + T::of(4.0) * (T::one() - m[i] * m[i]) * (T::one() - m[j] * m[j]) * x * x);
        }
        InverseWorkspace { inv_covariance: inv, condition_number: cond, scaled_inv, discriminant }
    }
}

/// `C⁻¹` with its symmetric part taken, so `(C⁻¹)_ij` and `(C⁻¹)_ji` agree bitwise.
fn symmetric_inverse<T: Scalar>(c: &Matrix<T>) -> Result<(Matrix<T>, T)> {
    let (inv, cond) = c.inverse_with_condition()?;
    let half = T::of(0.5);
    let sym = Matrix::from_fn(inv.dim(), |i, j| if i == j { inv[(i, i)] } else { half * (inv[(i, j)] + inv[(j, i)]) });
    Ok((sym, cond))
}

fn check_dims<T: Scalar>(stats: &DataStatistics<T>, graph: &Graph) -> Result<()> {
    if stats.dim() != graph.vertex_count() {
        return Err(IsingError::InvalidInput(format!(
            "statistics cover {} spins but the graph has {} vertices",
            stats.dim(),
            graph.vertex_count()
        )));
    }
    Ok(())
}

/// An edge whose formula could not be evaluated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeFailure {
    pub edge: usize,
    pub pair: Edge,
    pub reason: String,
}

/// One coupling per graph edge plus diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct InferredCouplings<T> {
    pub method: Method,
    pub vertices: usize,
    pub edges: Vec<Edge>,
    /// NaN on failed edges. Serialized as `null` there.
    #[serde(rename = "J", with = "nan_as_null")]
    pub couplings: Vec<T>,
    pub failures: Vec<EdgeFailure>,
    pub condition_number: Option<f64>,
    pub warnings: Vec<String>,
    /// `max |(C⁻¹)_ij|` over non-edges; `None` when `C⁻¹` was not formed or the graph is complete.
    pub off_graph_max_abs: Option<f64>,
}

mod nan_as_null {
    use super::Scalar;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<T: Scalar, S: Serializer>(v: &[T], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Option<T>> = v.iter().map(|x| if x.is_nan() { None } else { Some(*x) }).collect();
        opt.serialize(s)
    }

    pub fn deserialize<'de, T: Scalar, D: Deserializer<'de>>(d: D) -> Result<Vec<T>, D::Error> {
        let opt: Vec<Option<T>> = Vec::deserialize(d)?;
        Ok(opt.into_iter().map(|x| x.unwrap_or_else(T::nan)).collect())
    }
}

impl<T: Scalar> InferredCouplings<T> {
    fn assemble(method: Method, graph: &Graph, results: Vec<std::result::Result<T, String>>) -> Self {
        let mut couplings = Vec::with_capacity(results.len());
        let mut failures = Vec::new();
        for (e, r) in results.into_iter().enumerate() {
            match r {
                Ok(j) => couplings.push(j),
                Err(reason) => {
                    couplings.push(T::nan());
                    failures.push(EdgeFailure { edge: e, pair: graph.edges()[e], reason });
                }
            }
        }
        InferredCouplings {
            method,
            vertices: graph.vertex_count(),
            edges: graph.edges().to_vec(),
            couplings,
            failures,
            condition_number: None,
            warnings: Vec::new(),
            off_graph_max_abs: None,
        }
    }

    fn attach_inverse(&mut self, graph: &Graph, inv: &Matrix<T>, cond: T) {
        let cond = cond.to_f64_lossy();
        self.condition_number = Some(cond);
        if !(cond <= CONDITION_WARNING) {
            let msg = format!("covariance condition number {cond:.3e} exceeds {CONDITION_WARNING:.0e}");
            log::warn!("{}: {msg}", self.method);
            self.warnings.push(msg);
        }
        let n = graph.vertex_count();
        let mut off = None::<f64>;
        for i in 0..n {
            for j in (i + 1)..n {
                if graph.edge_index(i, j).is_none() {
                    let v = inv[(i, j)].abs().to_f64_lossy();
                    off = Some(off.map_or(v, |o: f64| o.max(v)));
                }
            }
        }
        self.off_graph_max_abs = off;
    }

    /// Symmetric `|V|×|V|` matrix with zeros off the graph and on the diagonal.
    pub fn to_matrix(&self) -> Matrix<T> {
        let mut m = Matrix::zeros(self.vertices);
        for (&(i, j), &v) in self.edges.iter().zip(&self.couplings) {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m
    }

    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

fn ip_pair<T: Scalar>(mi: T, mj: T, c: T) -> std::result::Result<T, String> {
    let one = T::one();
    let args = [
        (one + mi) * (one + mj) + c,
        (one - mi) * (one - mj) + c,
        (one + mi) * (one - mj) - c,
        (one - mi) * (one + mj) - c,
    ];
    if let Some(k) = args.iter().position(|a| !(*a > T::zero())) {
        return Err(format!("independent-pair log argument {k} is nonpositive ({})", args[k]));
    }
    Ok(T::of(0.25) * ((args[0] * args[1]) / (args[2] * args[3])).ln())
}

/// `J^IP_ij = ¼ ln[((1+m̂_i)(1+m̂_j)+C_ij)((1−m̂_i)(1−m̂_j)+C_ij) / (((1+m̂_i)(1−m̂_j)−C_ij)((1−m̂_i)(1+m̂_j)−C_ij))]`.
pub fn invert_ip<T: Scalar>(stats: &DataStatistics<T>, graph: &Graph) -> Result<InferredCouplings<T>> {
    check_dims(stats, graph)?;
    let m = stats.means();
    let c = stats.covariance();
    let results = graph.edges().iter().map(|&(i, j)| ip_pair(m[i], m[j], c[(i, j)])).collect();
    Ok(InferredCouplings::assemble(Method::Ip, graph, results))
}

/// TRW argument `A_ij`, rationalized:
/// `A = 2x(m̂_i m̂_j √D̃ − (m̂_i m̂_j)² x + x) / (x(√D̃ + √R)) − m̂_i m̂_j`
/// with `R = (√D̃ − 2 m̂_i m̂_j x)² − 4x²`; the `x` cancels.
fn trw_argument<T: Scalar>(mi: T, mj: T, x: T, disc: T) -> std::result::Result<T, String> {
    let mm = mi * mj;
    let sd = disc.sqrt();
    let r = (sd - T::of(2.0) * mm * x).powi(2) - T::of(4.0) * x * x;
    if !(r >= T::zero()) {
        return Err(format!("negative inner radicand {r}"));
    }
    Ok(T::of(2.0) * (mm * sd - mm * mm * x + x) / (sd + r.sqrt()) - mm)
}

fn trw_edge<T: Scalar>(mi: T, mj: T, x: T, disc: T, rho: T) -> std::result::Result<T, String> {
    if x.abs() < T::of(SCALED_INVERSE_FLOOR) {
        return Ok(T::zero());
    }
    let a = trw_argument(mi, mj, x, disc)?;
    if !(a.abs() < T::one()) {
        return Err(format!("arctanh argument {a} outside (-1, 1)"));
    }
    Ok(-rho * a.atanh())
}

fn trw_from_workspace<T: Scalar>(method: Method, stats: &DataStatistics<T>, graph: &Graph, rho: &EdgeAppearance<T>, ws: &InverseWorkspace<T>) -> InferredCouplings<T> {
    let m = stats.means();
    let results = graph
        .edges()
        .iter()
        .enumerate()
        .map(|(e, &(i, j))| trw_edge(m[i], m[j], ws.scaled_inv[e], ws.discriminant[e], rho.get(e)))
        .collect();
    let mut out = InferredCouplings::assemble(method, graph, results);
    out.attach_inverse(graph, &ws.inv_covariance, ws.condition_number);
    out
}

/// `J^TRW_ij = −ρ_ij artanh(A_ij)` built from `C̃⁻¹ = C⁻¹/ρ` and `D̃`.
pub fn invert_trw<T: Scalar>(stats: &DataStatistics<T>, graph: &Graph, rho: &EdgeAppearance<T>) -> Result<InferredCouplings<T>> {
    let ws = InverseWorkspace::new(stats, graph, rho)?;
    Ok(trw_from_workspace(Method::Trw, stats, graph, rho, &ws))
}

/// TRW with `ρ ≡ 1`.
pub fn invert_bethe<T: Scalar>(stats: &DataStatistics<T>, graph: &Graph) -> Result<InferredCouplings<T>> {
    let rho = EdgeAppearance::bethe(graph);
    let ws = InverseWorkspace::new(stats, graph, &rho)?;
    Ok(trw_from_workspace(Method::Bethe, stats, graph, &rho, &ws))
}

fn sm_from_inverse<T: Scalar>(stats: &DataStatistics<T>, graph: &Graph, inv: &Matrix<T>, cond: T) -> InferredCouplings<T> {
    let m = stats.means();
    let c = stats.covariance();
    let results = graph
        .edges()
        .iter()
        .map(|&(i, j)| {
            let cij = c[(i, j)];
            let ip = ip_pair(m[i], m[j], cij)?;
            let denom = (T::one() - m[i] * m[i]) * (T::one() - m[j] * m[j]) - cij * cij;
            if denom == T::zero() || !denom.is_finite() {
                return Err(format!("zero denominator (1-m_i^2)(1-m_j^2) - C_ij^2 = {denom}"));
            }
            Ok(-inv[(i, j)] + ip - cij / denom)
        })
        .collect();
    let mut out = InferredCouplings::assemble(Method::Sm, graph, results);
    out.attach_inverse(graph, inv, cond);
    out
}

/// `J^SM_ij = −(C⁻¹)_ij + J^IP_ij − C_ij / ((1−m̂_i²)(1−m̂_j²) − C_ij²)`.
pub fn invert_sm<T: Scalar>(stats: &DataStatistics<T>, graph: &Graph) -> Result<InferredCouplings<T>> {
    check_dims(stats, graph)?;
    let (inv, cond) = symmetric_inverse(stats.covariance())?;
    Ok(sm_from_inverse(stats, graph, &inv, cond))
}

/// Runs `methods` sharing one inversion of `C`. Whole-matrix failures are
/// reported per method instead of aborting the others.
pub fn invert_all<T: Scalar>(
    stats: &DataStatistics<T>,
    graph: &Graph,
    rho: &EdgeAppearance<T>,
    methods: &[Method],
) -> Result<Vec<(Method, Result<InferredCouplings<T>>)>> {
    check_dims(stats, graph)?;
    let inverse = symmetric_inverse(stats.covariance());
    let bethe_rho = EdgeAppearance::bethe(graph);
    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let r = match method {
            Method::Ip => invert_ip(stats, graph),
            _ => match &inverse {
                Err(e) => Err(e.clone()),
                Ok((inv, cond)) => Ok(match method {
                    Method::Sm => sm_from_inverse(stats, graph, inv, *cond),
                    Method::Bethe => {
                        let ws = InverseWorkspace::with_inverse(stats, graph, &bethe_rho, inv.clone(), *cond);
                        trw_from_workspace(Method::Bethe, stats, graph, &bethe_rho, &ws)
                    }
                    Method::Trw => {
                        if rho.len() != graph.edge_count() {
                            return Err(IsingError::InvalidInput("edge appearance does not match the graph".into()));
                        }
                        let ws = InverseWorkspace::with_inverse(stats, graph, rho, inv.clone(), *cond);
                        trw_from_workspace(Method::Trw, stats, graph, rho, &ws)
                    }
                    Method::Ip => unreachable!(),
                }),
            },
        };
        out.push((method, r));
    }
    Ok(out)
}

/// Diagnostic bias estimate from the self-consistency equation at the data means:
/// `h_i = artanh m̂_i − Σ_j ρ_ij artanh(t̃_ij f(m̂_j, m̂_i, t̃_ij))`.
///
/// Failed (NaN) couplings are treated as zero.
pub fn recover_biases<T: Scalar>(stats: &DataStatistics<T>, couplings: &InferredCouplings<T>, graph: &Graph, rho: &EdgeAppearance<T>) -> Result<Vec<T>> {
    check_dims(stats, graph)?;
    if couplings.edges.as_slice() != graph.edges() || rho.len() != graph.edge_count() {
        return Err(IsingError::InvalidInput("couplings or edge appearance do not match the graph".into()));
    }
    let m = stats.means();
    if let Some(i) = m.iter().position(|x| !(x.abs() < T::one())) {
        return Err(IsingError::Domain(format!("mean {i} is ±1; bias is unbounded")));
    }
    let mut h: Vec<T> = m.iter().map(|x| x.atanh()).collect();
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        let jv = couplings.couplings[e];
        if jv.is_nan() || jv == T::zero() {
            continue;
        }
        let t = (jv / rho.get(e)).tanh();
        let into_i = (t * f_aux(m[j], m[i], t)?).atanh();
        let into_j = (t * f_aux(m[i], m[j], t)?).atanh();
        h[i] -= rho.get(e) * into_i;
        h[j] -= rho.get(e) * into_j;
    }
    Ok(h)
}
