//! Tree-reweighted free energy and its stationary point.
//!
//! Pseudomarginals are parameterized by site means `m_i` and edge covariances
//! `c_ij`:
//!
//! ```text
//! q_i(s_i)       = (1 + m_i s_i) / 2
//! q_ij(s_i, s_j) = ((1 + m_i s_i)(1 + m_j s_j) + c_ij s_i s_j) / 4
//! ```
//!
//! For fixed means the edge covariance that makes the free energy stationary
//! has a closed form ([`stationary_edge_covariance`]). Eliminating it leaves
//! the mean-field-like fixed point
//!
//! ```text
//! m_i = tanh[h_i + Σ_j ρ_ij artanh(t̃_ij f(m_j, m_i, t̃_ij))],  t̃_ij = tanh(J_ij / ρ_ij)
//! ```
//!
//! solved in cavity-message form by [`solve_self_consistency`]. Because the free
//! energy is convex for valid `ρ`, the stationary point is its minimum and
//! `−F` there is an upper bound on the exact log-partition function.

use serde::{Deserialize, Serialize};

use crate::error::{IsingError, Result};
use crate::graph::{EdgeAppearance, Graph};
use crate::linalg::Matrix;
use crate::model::IsingModel;
use crate::scalar::Scalar;

/// Damped fixed-point settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct SolverOptions<T> {
    /// Stop once `‖m − RHS(m)‖∞ ≤ tol`.
    pub tol: T,
    pub max_iter: usize,
    /// `λ` in the damped update `u ← (1 − λ) u + λ U(u)`.
    pub damping: T,
    /// Largest message count for which Newton steps are tried.
    #[serde(default = "default_newton_max_unknowns")]
    pub newton_max_unknowns: usize,
}

fn default_newton_max_unknowns() -> usize {
    1024
}

impl<T: Scalar> Default for SolverOptions<T> {
    fn default() -> Self {
        SolverOptions { tol: T::of(1e-10), max_iter: 10_000, damping: T::of(0.5), newton_max_unknowns: default_newton_max_unknowns() }
    }
}

impl<T: Scalar> SolverOptions<T> {
    pub fn with_tol(mut self, tol: T) -> Self {
        self.tol = tol;
        self
    }

    /// Damped updates only.
    pub fn without_newton(mut self) -> Self {
        self.newton_max_unknowns = 0;
        self
    }
}

/// Site means and edge covariances; edge entries align with the graph's edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Pseudomarginals<T> {
    pub means: Vec<T>,
    pub edge_covariances: Vec<T>,
}

/// `((1 + σ_i m_i)(1 + σ_j m_j) + σ_i σ_j c) / 4`.
#[inline]
pub fn pair_probability<T: Scalar>(mi: T, mj: T, c: T, si: T, sj: T) -> T {
    ((T::one() + si * mi) * (T::one() + sj * mj) + si * sj * c) * T::of(0.25)
}

fn feasibility_slack<T: Scalar>() -> T {
    T::epsilon() * T::of(16.0)
}

impl<T: Scalar> Pseudomarginals<T> {
    /// Checks `|m_i| < 1` and that every pair table entry is nonnegative.
    pub fn validate(&self, graph: &Graph) -> Result<()> {
        if self.means.len() != graph.vertex_count() || self.edge_covariances.len() != graph.edge_count() {
            return Err(IsingError::InvalidInput("pseudomarginal dimensions do not match the graph".into()));
        }
        if let Some((i, m)) = self.means.iter().enumerate().find(|(_, m)| !(m.abs() < T::one())) {
            return Err(IsingError::Domain(format!("mean {i} = {m} outside (-1, 1)")));
        }
        let slack = -feasibility_slack::<T>();
        for (e, (&(i, j), &c)) in graph.edges().iter().zip(&self.edge_covariances).enumerate() {
            for (si, sj) in SIGNS {
                let q = pair_probability(self.means[i], self.means[j], c, T::of(si), T::of(sj));
                if !(q >= slack) {
                    return Err(IsingError::Domain(format!(
                        "pair table of edge {e} ({i},{j}) has negative entry {q} at ({si},{sj})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `m_i m_j + c_ij` per edge.
    pub fn pair_moments(&self, graph: &Graph) -> Vec<T> {
        graph
            .edges()
            .iter()
            .zip(&self.edge_covariances)
            .map(|(&(i, j), &c)| self.means[i] * self.means[j] + c)
            .collect()
    }
}

const SIGNS: [(f64, f64); 4] = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];

/// Energy and entropy terms of the tree-reweighted free energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct FreeEnergyBreakdown<T> {
    pub energy: T,
    pub entropy: T,
    /// `energy − entropy`.
    pub total: T,
}

#[inline]
fn xlnx<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x * x.ln()
    } else {
        T::zero()
    }
}

/// Exact evaluation of `F = ℰ − ℋ` with `ℋ = Σ ρ_ij H_ij + Σ_i (1 − Σ_j ρ_ij) H_i`.
pub fn trw_free_energy<T: Scalar>(q: &Pseudomarginals<T>, model: &IsingModel<T>, rho: &EdgeAppearance<T>) -> Result<FreeEnergyBreakdown<T>> {
    let graph = model.graph();
    q.validate(graph)?;
    if rho.len() != graph.edge_count() {
        return Err(IsingError::InvalidInput("edge appearance does not match the graph".into()));
    }
    let pair_moments = q.pair_moments(graph);
    let energy = -(model.couplings().iter().zip(&pair_moments).map(|(&j, &p)| j * p).sum::<T>()
        + model.biases().iter().zip(&q.means).map(|(&h, &m)| h * m).sum::<T>());

    let half = T::of(0.5);
    let site_entropy = |m: T| -(xlnx(half * (T::one() + m)) + xlnx(half * (T::one() - m)));
    let mut entropy = T::zero();
    for (e, (&(i, j), &c)) in graph.edges().iter().zip(&q.edge_covariances).enumerate() {
        let h_pair = -SIGNS
            .iter()
            .map(|&(si, sj)| xlnx(pair_probability(q.means[i], q.means[j], c, T::of(si), T::of(sj)).max(T::zero())))
            .sum::<T>();
        entropy += rho.get(e) * h_pair;
    }
    for (v, &m) in q.means.iter().enumerate() {
        entropy += rho.vertex_weight(graph, v) * site_entropy(m);
    }
    Ok(FreeEnergyBreakdown { energy, entropy, total: energy - entropy })
}

/// `f(m₁, m₂, t)` in rationalized form `2(m₁ − m₂t) / (1 − t² + √disc)` with
/// `disc = (1 − t²)² − 4t(m₁ − m₂t)(m₂ − m₁t)`.
///
/// Algebraically equal to `(1 − t² − √disc) / (2t(m₂ − m₁t))` but finite at `m₂ = m₁t`.
pub fn f_aux<T: Scalar>(m1: T, m2: T, t: T) -> Result<T> {
    if !(t.abs() < T::one()) || !(m1.abs() < T::one()) || !(m2.abs() < T::one()) {
        return Err(IsingError::Domain(format!("f_aux arguments out of range: m1={m1}, m2={m2}, t={t}")));
    }
    f_with_complement(m1, m2, t, (T::one() - t) * (T::one() + t))
}

/// `f_aux` with `1 − t²` supplied by the caller (accurate as `sech²` when `|t| → 1`).
fn f_with_complement<T: Scalar>(m1: T, m2: T, t: T, one_minus_t2: T) -> Result<T> {
    let a = m1 - m2 * t;
    let b = m2 - m1 * t;
    let disc = one_minus_t2 * one_minus_t2 - T::of(4.0) * t * a * b;
    if disc < T::zero() {
        if disc > -T::epsilon() * T::of(8.0) * one_minus_t2 * one_minus_t2 {
            return Ok(T::of(2.0) * a / one_minus_t2);
        }
        return Err(IsingError::Domain(format!("negative discriminant {disc} in f(m1={m1}, m2={m2}, t={t})")));
    }
    Ok(T::of(2.0) * a / (one_minus_t2 + disc.sqrt()))
}

/// Per-edge `t̃_ij = tanh(J_ij/ρ_ij)` and the directed values `f(m_j, m_i, t̃_ij)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMessage<T> {
    pub t_tilde: Vec<T>,
    /// `1 − t̃²`, computed as `sech²(J/ρ)`.
    pub t_complement: Vec<T>,
    /// `[f(m_j, m_i, t̃), f(m_i, m_j, t̃)]` for edge `(i, j)`: the values entering
    /// the updates of `i` and of `j` respectively.
    pub f_values: Vec<[T; 2]>,
}

impl<T: Scalar> EdgeMessage<T> {
    pub fn couplings_only(model: &IsingModel<T>, rho: &EdgeAppearance<T>) -> Self {
        let (t_tilde, t_complement) = model
            .couplings()
            .iter()
            .zip(rho.values())
            .map(|(&j, &r)| {
                let k = j / r;
                let sech = T::one() / k.cosh();
                (k.tanh(), sech * sech)
            })
            .unzip();
        EdgeMessage { t_tilde, t_complement, f_values: Vec::new() }
    }

    pub fn compute(model: &IsingModel<T>, rho: &EdgeAppearance<T>, means: &[T]) -> Result<Self> {
        let mut msg = Self::couplings_only(model, rho);
        msg.update(model.graph(), means)?;
        Ok(msg)
    }

    fn update(&mut self, graph: &Graph, means: &[T]) -> Result<()> {
        self.f_values.clear();
        for (e, &(i, j)) in graph.edges().iter().enumerate() {
            let (t, tc) = (self.t_tilde[e], self.t_complement[e]);
            let into_i = f_with_complement(means[j], means[i], t, tc)?;
            let into_j = f_with_complement(means[i], means[j], t, tc)?;
            for (v, prod) in [(i, t * into_i), (j, t * into_j)] {
                if !(prod.abs() < T::one()) {
                    return Err(IsingError::Domain(format!(
                        "artanh argument {prod} outside (-1, 1) on edge {e} toward vertex {v}"
                    )));
                }
            }
            self.f_values.push([into_i, into_j]);
        }
        Ok(())
    }
}

/// Right-hand side `tanh[h_i + Σ_j ρ_ij artanh(t̃_ij f(m_j, m_i, t̃_ij))]` in mean variables.
pub fn self_consistency_rhs<T: Scalar>(model: &IsingModel<T>, rho: &EdgeAppearance<T>, means: &[T]) -> Result<Vec<T>> {
    let graph = model.graph();
    let mut msg = EdgeMessage::compute(model, rho, means)?;
    let mut field = model.biases().to_vec();
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        let t = msg.t_tilde[e];
        let [fi, fj] = msg.f_values[e];
        field[i] += rho.get(e) * (t * fi).atanh();
        field[j] += rho.get(e) * (t * fj).atanh();
    }
    msg.f_values.clear();
    Ok(field.into_iter().map(|x| x.tanh()).collect())
}

/// `‖m − RHS(m)‖∞` of the mean-variable equation.
///
/// At strong coupling this is limited by rounding in `m`: the slope of
/// `RHS_i` in `m_i` grows like `e^{2|J|/ρ}`.
pub fn self_consistency_residual<T: Scalar>(model: &IsingModel<T>, rho: &EdgeAppearance<T>, means: &[T]) -> Result<T> {
    let rhs = self_consistency_rhs(model, rho, means)?;
    Ok(means.iter().zip(&rhs).map(|(&a, &b)| (a - b).abs()).fold(T::zero(), T::max))
}

/// Result of the fixed-point solve.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint<T> {
    pub means: Vec<T>,
    /// Directed cavity messages `u_{i→j}`: index `2e` is `i → j`, `2e + 1` is `j → i` for edge `e = (i, j)`.
    pub messages: Vec<T>,
    pub iterations: usize,
    /// Final `‖U(u) − u‖∞`.
    pub residual: T,
    /// `‖U(u) − u‖∞` before each update.
    pub residual_history: Vec<T>,
}

/// `ln cosh x` without overflow.
#[inline]
fn ln_cosh<T: Scalar>(x: T) -> T {
    let a = x.abs();
    a + (T::of(-2.0) * a).exp().ln_1p() - T::of(std::f64::consts::LN_2)
}

/// Cavity-message form of the self-consistency equation.
///
/// With total fields `H_v = h_v + Σ_w ρ_wv u_{w→v}` and cavity fields
/// `H_v − u_{t→v}`, the update is `U_{s→t} = artanh(tanh(K) tanh(H_s − u_{t→s}))`,
/// `K = J_st/ρ_st`, evaluated as `½[ln cosh(K + x) − ln cosh(K − x)]`.
/// A fixed point gives `m_v = tanh H_v` satisfying the mean-variable
/// equation, with `u_{j→i} = artanh(t̃_ij f(m_j, m_i, t̃_ij))`.
struct MessageSystem<'a, T> {
    model: &'a IsingModel<T>,
    rho: &'a EdgeAppearance<T>,
    k: Vec<T>,
}

impl<'a, T: Scalar> MessageSystem<'a, T> {
    fn new(model: &'a IsingModel<T>, rho: &'a EdgeAppearance<T>) -> Self {
        let k = model.couplings().iter().zip(rho.values()).map(|(&j, &r)| j / r).collect();
        MessageSystem { model, rho, k }
    }

    fn fields(&self, u: &[T]) -> Vec<T> {
        let mut h = self.model.biases().to_vec();
        for (e, &(i, j)) in self.model.graph().edges().iter().enumerate() {
            let r = self.rho.get(e);
            h[j] += r * u[2 * e];
            h[i] += r * u[2 * e + 1];
        }
        h
    }

    /// `(source, target, reverse directed index)` of directed message `d`.
    #[inline]
    fn ends(&self, d: usize) -> (usize, usize, usize) {
        let (i, j) = self.model.graph().edges()[d / 2];
        if d.is_multiple_of(2) {
            (i, j, d + 1)
        } else {
            (j, i, d - 1)
        }
    }

    fn update(&self, u: &[T], fields: &[T]) -> Vec<T> {
        let half = T::of(0.5);
        (0..u.len())
            .map(|d| {
                let (s, _, rev) = self.ends(d);
                let k = self.k[d / 2];
                let x = fields[s] - u[rev];
                half * (ln_cosh(k + x) - ln_cosh(k - x))
            })
            .collect()
    }

    /// `I − ∂U/∂u`.
    fn newton_matrix(&self, u: &[T], fields: &[T]) -> Matrix<T> {
        let graph = self.model.graph();
        let half = T::of(0.5);
        let mut a = Matrix::identity(u.len());
        for d in 0..u.len() {
            let (s, t, rev) = self.ends(d);
            let k = self.k[d / 2];
            let x = fields[s] - u[rev];
            let g = half * ((k + x).tanh() + (k - x).tanh());
            for &(w, e) in graph.neighbors(s) {
                // Message w → s.
                let incoming = if graph.edges()[e].0 == w { 2 * e } else { 2 * e + 1 };
                let coef = if w == t { self.rho.get(e) - T::one() } else { self.rho.get(e) };
                a[(d, incoming)] -= g * coef;
            }
        }
        a
    }
}

fn sup_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).fold(T::zero(), T::max)
}

/// Solves the self-consistency equation from `init` means.
///
/// Works on the directed cavity messages, where the problem stays well
/// scaled at strong coupling. Each iteration tries a Newton step (systems of
/// at most [`SolverOptions::newton_max_unknowns`] messages) and keeps it if
/// the residual drops; otherwise it applies the damped update
/// `u ← (1 − λ) u + λ U(u)`. Stops when `‖U(u) − u‖∞ ≤ tol`.
pub fn solve_self_consistency<T: Scalar>(
    model: &IsingModel<T>,
    rho: &EdgeAppearance<T>,
    init: &[T],
    options: &SolverOptions<T>,
) -> Result<FixedPoint<T>> {
    let n = model.vertex_count();
    if init.len() != n {
        return Err(IsingError::InvalidInput(format!("{} initial means for {n} vertices", init.len())));
    }
    if !(options.tol > T::zero()) {
        return Err(IsingError::InvalidInput("tolerance must be positive".into()));
    }
    if !(options.damping > T::zero() && options.damping <= T::one()) {
        return Err(IsingError::InvalidInput("damping must lie in (0, 1]".into()));
    }
    if rho.len() != model.graph().edge_count() {
        return Err(IsingError::InvalidInput("edge appearance does not match the graph".into()));
    }
    if let Some(i) = init.iter().position(|m| !(m.abs() < T::one())) {
        return Err(IsingError::InvalidInput(format!("initial mean {i} outside (-1, 1)")));
    }
    let sys = MessageSystem::new(model, rho);
    let init_msg = EdgeMessage::compute(model, rho, init)?;
    let mut u: Vec<T> = Vec::with_capacity(2 * model.graph().edge_count());
    for (e, [fi, fj]) in init_msg.f_values.iter().enumerate() {
        let t = init_msg.t_tilde[e];
        u.push((t * *fj).atanh());
        u.push((t * *fi).atanh());
    }
    let use_newton = u.len() <= options.newton_max_unknowns;
    let lambda = options.damping;
    let mut history = Vec::new();
    let mut fields = sys.fields(&u);
    let mut next = sys.update(&u, &fields);
    let mut residual = sup_distance(&u, &next);
    for iter in 0..options.max_iter {
        if !residual.is_finite() {
            return Err(IsingError::Domain(format!("non-finite message residual at iteration {iter}")));
        }
        history.push(residual);
        if residual <= options.tol {
            log::debug!("message fixed point after {iter} iterations, residual {:e}", residual.to_f64_lossy());
            let means = fields.iter().map(|h| h.tanh()).collect();
            return Ok(FixedPoint { means, messages: u, iterations: iter, residual, residual_history: history });
        }
        let mut accepted = false;
        if use_newton {
            let rhs: Vec<T> = next.iter().zip(&u).map(|(&a, &b)| a - b).collect();
            if let Ok(step) = sys.newton_matrix(&u, &fields).solve(&rhs) {
                let mut scale = T::one();
                for _ in 0..4 {
                    let trial: Vec<T> = u.iter().zip(&step).map(|(&a, &s)| a + scale * s).collect();
                    let trial_fields = sys.fields(&trial);
                    let trial_next = sys.update(&trial, &trial_fields);
                    let trial_res = sup_distance(&trial, &trial_next);
                    if trial_res < residual {
                        (u, fields, next, residual) = (trial, trial_fields, trial_next, trial_res);
                        accepted = true;
                        break;
                    }
                    scale *= T::of(0.5);
                }
            }
        }
        if !accepted {
            for (a, b) in u.iter_mut().zip(&next) {
                *a = (T::one() - lambda) * *a + lambda * *b;
            }
            fields = sys.fields(&u);
            next = sys.update(&u, &fields);
            residual = sup_distance(&u, &next);
        }
    }
    Err(IsingError::Convergence { iterations: options.max_iter, residual: residual.to_f64_lossy() })
}

/// Edge covariance `c*` making `∂F/∂c_ij = 0` for fixed means:
/// `J/ρ = ¼ ln[q(+,+) q(−,−) / (q(+,−) q(−,+))]`.
///
/// Written in one table entry `x` this is a quadratic. Each entry is tried
/// in turn as the unknown, solved with the cancellation-free root, and the
/// candidate giving the smallest entry wins. Near-deterministic pairs keep
/// their tiny entries accurate this way.
pub fn stationary_edge_covariance<T: Scalar>(mi: T, mj: T, coupling: T, rho: T) -> Result<T> {
    if !(mi.abs() < T::one()) || !(mj.abs() < T::one()) {
        return Err(IsingError::Domain(format!("means ({mi}, {mj}) outside (-1, 1)")));
    }
    if !(rho > T::zero()) {
        return Err(IsingError::Domain(format!("edge appearance {rho} must be positive")));
    }
    if coupling == T::zero() {
        return Ok(T::zero());
    }
    let k = coupling / rho;
    let mut best: Option<[T; 4]> = None;
    let mut best_x = T::infinity();
    for &(si, sj) in SIGNS.iter() {
        // Flip so the unknown entry sits at (−, +).
        let (fi, fj) = (-T::of(si), T::of(sj));
        if let Some((x, table)) = anti_aligned_entry(fi * mi, fj * mj, fi * fj * k) {
            if x < best_x {
                best_x = x;
                // Canonical table order (+,+), (+,−), (−,+), (−,−) mapped back through the flips.
                let mut q = [T::zero(); 4];
                for (idx, &(a, b)) in SIGNS.iter().enumerate() {
                    let ci = if T::of(a) * fi > T::zero() { 0 } else { 1 };
                    let cj = if T::of(b) * fj > T::zero() { 0 } else { 1 };
                    q[idx] = table[2 * ci + cj];
                }
                best = Some(q);
            }
        }
    }
    let q = best.ok_or_else(|| {
        IsingError::Domain(format!("no feasible edge covariance for m=({mi}, {mj}), J={coupling}, rho={rho}"))
    })?;
    let slack = -feasibility_slack::<T>();
    if q.iter().any(|&p| !(p >= slack)) {
        return Err(IsingError::Domain(format!(
            "no feasible edge covariance for m=({mi}, {mj}), J={coupling}, rho={rho}"
        )));
    }
    // Σ σσ' q(σ,σ') = 1 − 2[q(+,−) + q(−,+)] avoids summing the large entries.
    Ok(T::one() - T::of(2.0) * (q[1] + q[2]) - mi * mj)
}

/// Solves for `x = q(−,+)` with `q(+,−) = x + d`, `q(+,+) = P − x`,
/// `q(−,−) = Q − x` and `(P − x)(Q − x) = e^{4K} x (x + d)`.
/// Returns the entry and the table in order (+,+), (+,−), (−,+), (−,−).
fn anti_aligned_entry<T: Scalar>(a: T, b: T, k: T) -> Option<(T, [T; 4])> {
    let half = T::of(0.5);
    let p = (T::one() + b) * half;
    let q = (T::one() - a) * half;
    let d = (a - b) * half;
    let four_k = T::of(4.0) * k;
    // Quadratic A x² + B x − C = 0, scaled so every coefficient stays finite.
    let (qa, qb, qc) = if k >= T::zero() {
        let eps = (-four_k).exp();
        (-(-four_k).exp_m1(), d + (p + q) * eps, p * q * eps)
    } else {
        let e = four_k.exp();
        (four_k.exp_m1(), e * d + p + q, p * q)
    };
    let disc = (qb * qb + T::of(4.0) * qa * qc).max(T::zero());
    let x = if qb > T::zero() {
        T::of(2.0) * qc / (qb + disc.sqrt())
    } else if qa > T::zero() {
        (disc.sqrt() - qb) / (T::of(2.0) * qa)
    } else {
        return None;
    };
    if !x.is_finite() {
        return None;
    }
    Some((x, [p - x, x + d, x, q - x]))
}

/// Stationary pseudomarginals with their free energy.
#[derive(Debug, Clone, PartialEq)]
pub struct TrwSolution<T> {
    pub pseudomarginals: Pseudomarginals<T>,
    pub free_energy: FreeEnergyBreakdown<T>,
    pub fixed_point: FixedPoint<T>,
}

impl<T: Scalar> TrwSolution<T> {
    /// `Φ^TRW = −min_q F`.
    pub fn log_partition(&self) -> T {
        -self.free_energy.total
    }
}

/// Solves the fixed point from `init`, fills `c*`, evaluates `F`.
pub fn trw_solve_from<T: Scalar>(model: &IsingModel<T>, rho: &EdgeAppearance<T>, init: &[T], options: &SolverOptions<T>) -> Result<TrwSolution<T>> {
    let fixed_point = solve_self_consistency(model, rho, init, options)?;
    let m = &fixed_point.means;
    let edge_covariances = model
        .graph()
        .edges()
        .iter()
        .enumerate()
        .map(|(e, &(i, j))| stationary_edge_covariance(m[i], m[j], model.couplings()[e], rho.get(e)))
        .collect::<Result<Vec<T>>>()?;
    let pseudomarginals = Pseudomarginals { means: m.clone(), edge_covariances };
    let free_energy = trw_free_energy(&pseudomarginals, model, rho)?;
    Ok(TrwSolution { pseudomarginals, free_energy, fixed_point })
}

/// Solves from `m = tanh(h)`.
pub fn trw_solve<T: Scalar>(model: &IsingModel<T>, rho: &EdgeAppearance<T>, options: &SolverOptions<T>) -> Result<TrwSolution<T>> {
    let init: Vec<T> = model.biases().iter().map(|h| h.tanh()).collect();
    trw_solve_from(model, rho, &init, options)
}

/// Upper bound `Φ^TRW(θ; ρ) ≥ Φ(θ)`.
pub fn trw_log_partition<T: Scalar>(model: &IsingModel<T>, rho: &EdgeAppearance<T>, options: &SolverOptions<T>) -> Result<T> {
    Ok(trw_solve(model, rho, options)?.log_partition())
}

/// Pseudo-moments `(m*, m*_i m*_j + c*_ij)`: the derivatives of `Φ^TRW` in `h` and `J`.
pub fn trw_pseudo_moments<T: Scalar>(model: &IsingModel<T>, rho: &EdgeAppearance<T>, options: &SolverOptions<T>) -> Result<(Vec<T>, Vec<T>)> {
    let sol = trw_solve(model, rho, options)?;
    let pairs = sol.pseudomarginals.pair_moments(model.graph());
    Ok((sol.pseudomarginals.means, pairs))
}

/// Linear-response susceptibility `∂m*_i/∂h_j` by central differences of the fixed point.
///
/// Each perturbed solve starts from the unperturbed solution. The returned
/// matrix is symmetrized.
pub fn linear_response_covariance<T: Scalar>(
    model: &IsingModel<T>,
    rho: &EdgeAppearance<T>,
    options: &SolverOptions<T>,
    step: T,
) -> Result<(Vec<T>, Matrix<T>)> {
    let base = trw_solve(model, rho, options)?.fixed_point.means;
    let n = model.vertex_count();
    let mut chi = Matrix::zeros(n);
    for j in 0..n {
        let solve_at = |delta: T| -> Result<Vec<T>> {
            let mut h = model.biases().to_vec();
            h[j] += delta;
            Ok(solve_self_consistency(&model.with_biases(h)?, rho, &base, options)?.means)
        };
        let plus = solve_at(step)?;
        let minus = solve_at(-step)?;
        for i in 0..n {
            chi[(i, j)] = (plus[i] - minus[i]) / (T::of(2.0) * step);
        }
    }
    let half = T::of(0.5);
    let sym = Matrix::from_fn(n, |i, j| if i == j { chi[(i, i)] } else { half * (chi[(i, j)] + chi[(j, i)]) });
    Ok((base, sym))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{exact_moments, log_partition};
    use crate::graph::Graph;
    use crate::model::{generate_model, Regime};

    /// Unrationalized `f`, with its `0/0` at `m₂ = m₁t`.
    fn f_direct(m1: f64, m2: f64, t: f64) -> f64 {
        let disc = (1.0 - t * t).powi(2) - 4.0 * t * (m1 - m2 * t) * (m2 - m1 * t);
        (1.0 - t * t - disc.sqrt()) / (2.0 * t * (m2 - m1 * t))
    }

    #[test]
    fn f_aux_basic_values() {
        for t in [-0.9, -0.3, 0.0, 0.4, 0.95] {
            assert_eq!(f_aux(0.0, 0.0, t).unwrap(), 0.0);
        }
        for m in [-0.7f64, 0.0, 0.2, 0.9] {
            assert!((f_aux(m, m, 0.0).unwrap() - m).abs() < 1e-15);
        }
        let a = f_aux(0.3, 0.5, 0.4).unwrap();
        assert!((a - f_direct(0.3, 0.5, 0.4)).abs() < 1e-12);
        assert!(f_aux(0.3, 0.5, 1.0).is_err());
        assert!(f_aux(1.0, 0.5, 0.3).is_err());
    }

    #[test]
    fn f_aux_matches_direct_form_on_grid() {
        let pts = [-0.95, -0.6, -0.2, 0.0, 0.1, 0.45, 0.8, 0.97];
        let ts = [-0.9f64, -0.5, -0.1, 0.05, 0.3, 0.7, 0.93];
        for &m1 in &pts {
            for &m2 in &pts {
                for &t in &ts {
                    let denom = 2.0 * t * (m2 - m1 * t);
                    if denom.abs() > 1e-8 {
                        let r = f_aux(m1, m2, t).unwrap();
                        assert!((r - f_direct(m1, m2, t)).abs() < 1e-12, "m1={m1} m2={m2} t={t}");
                    }
                }
            }
        }
    }

    #[test]
    fn zero_field_fixed_point_is_zero() {
        let m = generate_model::<f64>(Graph::complete(6), Regime::Mixed, 1.0, 3).unwrap();
        let m = m.with_biases(vec![0.0; 6]).unwrap();
        let rho = EdgeAppearance::uniform(m.graph()).unwrap();
        let fp = solve_self_consistency(&m, &rho, &[0.0; 6], &SolverOptions::default()).unwrap();
        assert!(fp.means.iter().all(|&x| x == 0.0));
        assert_eq!(fp.iterations, 0);
    }

    #[test]
    fn single_spin_fixed_point() {
        let m = IsingModel::new(Graph::chain(1), vec![], vec![0.3]).unwrap();
        let rho = EdgeAppearance::bethe(m.graph());
        let fp = solve_self_consistency(&m, &rho, &[0.0], &SolverOptions::default()).unwrap();
        assert!((fp.means[0] - 0.3f64.tanh()).abs() < 1e-10);
    }

    #[test]
    fn tree_fixed_point_is_exact() {
        for seed in 0..5 {
            let g = Graph::random_tree(8, seed);
            let m = generate_model::<f64>(g, Regime::Mixed, 1.2, seed + 100).unwrap();
            let h: Vec<f64> = (0..8).map(|i| 0.3 * ((i as f64) * 0.7 + seed as f64).sin()).collect();
            let m = m.with_biases(h).unwrap();
            let rho = EdgeAppearance::uniform(m.graph()).unwrap();
            let sol = trw_solve(&m, &rho, &SolverOptions::default()).unwrap();
            let exact = exact_moments(&m).unwrap();
            for i in 0..8 {
                assert!((sol.pseudomarginals.means[i] - exact.means[i]).abs() < 1e-6);
            }
            for (p, q) in sol.pseudomarginals.pair_moments(m.graph()).iter().zip(&exact.pair_moments) {
                assert!((p - q).abs() < 1e-6);
            }
            assert!((sol.log_partition() - exact.log_partition).abs() < 1e-6);
        }
    }

    #[test]
    fn stationary_covariance_cases() {
        assert_eq!(stationary_edge_covariance(0.3, -0.2, 0.0, 0.5).unwrap(), 0.0 * 1.0);
        for j in [-1.3, -0.2, 0.6, 2.0] {
            let c = stationary_edge_covariance(0.0, 0.0, j, 1.0).unwrap();
            assert!((c - f64::tanh(j)).abs() < 1e-15);
        }
    }

    #[test]
    fn stationary_covariance_zeroes_derivative() {
        let cases = [(0.3, -0.4, 0.7, 0.6), (0.8, 0.75, 0.4, 0.6), (-0.2, 0.5, -0.9, 1.0), (0.1, 0.1, 0.05, 0.125)];
        for (mi, mj, j, r) in cases {
            let c = stationary_edge_covariance(mi, mj, j, r).unwrap();
            // Only the edge entropy and the pair energy depend on c.
            let f = |c: f64| {
                let h_pair: f64 = SIGNS.iter().map(|&(si, sj)| -xlnx(pair_probability(mi, mj, c, si, sj))).sum();
                -j * (mi * mj + c) - r * h_pair
            };
            let h = 1e-6;
            let d = (f(c + h) - f(c - h)) / (2.0 * h);
            assert!(d.abs() < 1e-8, "dF/dc = {d} for {mi},{mj},{j},{r}");
        }
    }

    #[test]
    fn free_energy_of_free_model() {
        let g = Graph::grid2d(3, 2);
        let m = IsingModel::<f64>::zeros(g.clone());
        let rho = EdgeAppearance::uniform(&g).unwrap();
        let q = Pseudomarginals { means: vec![0.0; 6], edge_covariances: vec![0.0; 7] };
        let fe = trw_free_energy(&q, &m, &rho).unwrap();
        assert_eq!(fe.energy, 0.0);
        assert!((fe.entropy - 6.0 * 2f64.ln()).abs() < 1e-14);
        assert!((fe.total + log_partition(&m).unwrap()).abs() < 1e-14);
        assert_eq!(fe.total, fe.energy - fe.entropy);
    }

    #[test]
    fn free_energy_single_spin() {
        let m = IsingModel::new(Graph::chain(1), vec![], vec![1.0]).unwrap();
        let rho = EdgeAppearance::bethe(m.graph());
        let q = Pseudomarginals { means: vec![0.5], edge_covariances: vec![] };
        let fe = trw_free_energy(&q, &m, &rho).unwrap();
        assert_eq!(fe.energy, -0.5);
        let h = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        assert!((fe.entropy - h).abs() < 1e-15);
    }

    #[test]
    fn infeasible_pseudomarginals_rejected() {
        let g = Graph::chain(2);
        let m = IsingModel::<f64>::zeros(g.clone());
        let rho = EdgeAppearance::bethe(&g);
        let q = Pseudomarginals { means: vec![0.5, 0.5], edge_covariances: vec![0.9] };
        assert!(matches!(trw_free_energy(&q, &m, &rho), Err(IsingError::Domain(_))));
        let q = Pseudomarginals { means: vec![1.0, 0.5], edge_covariances: vec![0.0] };
        assert!(trw_free_energy(&q, &m, &rho).is_err());
    }

    #[test]
    fn free_model_bound_is_tight() {
        let g = Graph::complete(5);
        let m = IsingModel::<f64>::zeros(g.clone());
        let rho = EdgeAppearance::uniform(&g).unwrap();
        let phi = trw_log_partition(&m, &rho, &SolverOptions::default()).unwrap();
        assert!((phi - 5.0 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn loopy_bound_has_positive_gap() {
        let m = generate_model::<f64>(Graph::complete(8), Regime::Mixed, 0.5, 21).unwrap();
        let rho = EdgeAppearance::uniform(m.graph()).unwrap();
        let phi_trw = trw_log_partition(&m, &rho, &SolverOptions::default()).unwrap();
        let phi = log_partition(&m).unwrap();
        assert!(phi_trw > phi, "{phi_trw} vs {phi}");
    }

    #[test]
    fn stationary_point_has_zero_mean_gradient() {
        let m = generate_model::<f64>(Graph::grid2d(3, 3), Regime::Attractive, 1.0, 4).unwrap();
        let rho = EdgeAppearance::uniform(m.graph()).unwrap();
        let sol = trw_solve(&m, &rho, &SolverOptions::default().with_tol(1e-13)).unwrap();
        let q0 = sol.pseudomarginals.clone();
        for v in 0..9 {
            let f = |d: f64| {
                let mut q = q0.clone();
                q.means[v] += d;
                trw_free_energy(&q, &m, &rho).unwrap().total
            };
            let h = 1e-6;
            assert!(((f(h) - f(-h)) / (2.0 * h)).abs() < 1e-7);
        }
    }

    #[test]
    fn pseudo_moments_are_envelope_derivatives() {
        let m = generate_model::<f64>(Graph::cycle(6), Regime::Mixed, 1.0, 12).unwrap();
        let rho = EdgeAppearance::uniform(m.graph()).unwrap();
        let opts = SolverOptions::default().with_tol(1e-13);
        let (means, pairs) = trw_pseudo_moments(&m, &rho, &opts).unwrap();
        let step = 1e-5;
        for e in 0..m.graph().edge_count() {
            let phi = |d: f64| {
                let mut j = m.couplings().to_vec();
                j[e] += d;
                trw_log_partition(&m.with_couplings(j).unwrap(), &rho, &opts).unwrap()
            };
            assert!(((phi(step) - phi(-step)) / (2.0 * step) - pairs[e]).abs() < 1e-6);
        }
        for v in 0..6 {
            let phi = |d: f64| {
                let mut h = m.biases().to_vec();
                h[v] += d;
                trw_log_partition(&m.with_biases(h).unwrap(), &rho, &opts).unwrap()
            };
            assert!(((phi(step) - phi(-step)) / (2.0 * step) - means[v]).abs() < 1e-6);
        }
    }

    #[test]
    fn free_model_pair_moments_factorize() {
        let g = Graph::cycle(4);
        let m = IsingModel::<f64>::new(g.clone(), vec![0.0; 4], vec![0.2, -0.1, 0.3, 0.0]).unwrap();
        let rho = EdgeAppearance::uniform(&g).unwrap();
        let (means, pairs) = trw_pseudo_moments(&m, &rho, &SolverOptions::default()).unwrap();
        for (e, &(i, j)) in g.edges().iter().enumerate() {
            let expected = m.biases()[i].tanh() * m.biases()[j].tanh();
            assert!((pairs[e] - expected).abs() < 1e-10);
            assert!((means[i] - m.biases()[i].tanh()).abs() < 1e-10);
        }
    }

    #[test]
    fn convergence_error_carries_residual() {
        let m = generate_model::<f64>(Graph::grid2d(3, 3), Regime::Attractive, 1.0, 4).unwrap();
        let rho = EdgeAppearance::uniform(m.graph()).unwrap();
        let opts = SolverOptions { tol: 1e-14, max_iter: 2, ..SolverOptions::default() };
        match solve_self_consistency(&m, &rho, &[0.0; 9], &opts) {
            Err(IsingError::Convergence { iterations: 2, residual }) => assert!(residual > 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn jensen_decomposition_on_triangle() {
        // Spanning trees of the 3-cycle drop one edge each; edges are (0,1), (0,2), (1,2).
        let g = Graph::cycle(3);
        let m = IsingModel::new(g.clone(), vec![0.8, -0.5, 1.1], vec![0.1, -0.2, 0.05]).unwrap();
        let phi = log_partition(&m).unwrap();
        let tree_phi = |tree: &[usize], rho_e: &[f64]| {
            let j: Vec<f64> = (0..3).map(|e| if tree.contains(&e) { m.couplings()[e] / rho_e[e] } else { 0.0 }).collect();
            log_partition(&m.with_couplings(j).unwrap()).unwrap()
        };
        // Uniform over all three trees: rho = 2/3 everywhere.
        let rho3 = [2.0 / 3.0; 3];
        let trees3: [&[usize]; 3] = [&[0, 1], &[0, 2], &[1, 2]];
        let jensen3: f64 = trees3.iter().map(|t| tree_phi(t, &rho3) / 3.0).sum();
        assert!(jensen3 >= phi);
        let trw3 = trw_log_partition(&m, &EdgeAppearance::new(&g, rho3.to_vec()).unwrap(), &SolverOptions::default()).unwrap();
        assert!(trw3 >= phi - 1e-12 && trw3 <= jensen3 + 1e-12, "{phi} <= {trw3} <= {jensen3}");
        // Two trees {01,12} and {02,12} with weight 1/2: rho = (1/2, 1/2, 1).
        let rho2 = [0.5, 0.5, 1.0];
        let trees2: [&[usize]; 2] = [&[0, 2], &[1, 2]];
        let jensen2: f64 = trees2.iter().map(|t| tree_phi(t, &rho2) / 2.0).sum();
        assert!(jensen2 >= phi);
        let trw2 = trw_log_partition(&m, &EdgeAppearance::new(&g, rho2.to_vec()).unwrap(), &SolverOptions::default()).unwrap();
        assert!(trw2 >= phi - 1e-12 && trw2 <= jensen2 + 1e-12, "{phi} <= {trw2} <= {jensen2}");
    }

    #[test]
    fn residual_decreases_after_burn_in() {
        let m = generate_model::<f64>(Graph::complete(8), Regime::Attractive, 1.0, 2).unwrap();
        let rho = EdgeAppearance::uniform(m.graph()).unwrap();
        let fp = solve_self_consistency(&m, &rho, &[0.0; 8], &SolverOptions::default()).unwrap();
        let tail = &fp.residual_history[fp.residual_history.len().min(10)..];
        assert!(tail.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)), "{:?}", fp.residual_history);
    }

    #[test]
    fn damped_and_newton_paths_agree() {
        let m = generate_model::<f64>(Graph::grid2d(3, 3), Regime::Mixed, 0.6, 31).unwrap();
        let rho = EdgeAppearance::uniform(m.graph()).unwrap();
        let opts = SolverOptions::default();
        let newton = trw_solve(&m, &rho, &opts).unwrap();
        let damped = trw_solve(&m, &rho, &opts.without_newton()).unwrap();
        assert!(newton.fixed_point.iterations < damped.fixed_point.iterations);
        for (a, b) in newton.pseudomarginals.means.iter().zip(&damped.pseudomarginals.means) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!((newton.log_partition() - damped.log_partition()).abs() < 1e-9);
    }

    #[test]
    fn solution_satisfies_mean_equation() {
        let m = generate_model::<f64>(Graph::complete(7), Regime::Attractive, 0.8, 13).unwrap();
        let rho = EdgeAppearance::uniform(m.graph()).unwrap();
        let sol = trw_solve(&m, &rho, &SolverOptions::default()).unwrap();
        assert!(self_consistency_residual(&m, &rho, &sol.pseudomarginals.means).unwrap() < 1e-9);
        assert!(sol.fixed_point.residual <= 1e-10);
    }

    #[test]
    fn messages_match_cavity_form() {
        let m = generate_model::<f64>(Graph::cycle(5), Regime::Mixed, 1.0, 8).unwrap();
        let rho = EdgeAppearance::uniform(m.graph()).unwrap();
        let fp = solve_self_consistency(&m, &rho, &[0.0; 5], &SolverOptions::default().with_tol(1e-13)).unwrap();
        let msg = EdgeMessage::compute(&m, &rho, &fp.means).unwrap();
        for e in 0..5 {
            let t = msg.t_tilde[e];
            let [fi, fj] = msg.f_values[e];
            assert!((fp.messages[2 * e] - (t * fj).atanh()).abs() < 1e-9);
            assert!((fp.messages[2 * e + 1] - (t * fi).atanh()).abs() < 1e-9);
        }
    }

    #[test]
    fn stable_covariance_matches_quadratic_root() {
        // τu² − 2u + B = 0 with u = m_i m_j + c, smallest root.
        for &(mi, mj, j, rho) in &[(0.1, -0.3, 0.4, 1.0), (0.5, 0.2, -0.7, 0.5), (-0.6, -0.4, 1.2, 2.0), (0.0, 0.0, 0.3, 0.8)] {
            let tau = f64::tanh(2.0 * j / rho);
            let b = tau * (1.0 - mi * mi - mj * mj) + 2.0 * mi * mj;
            let u = b / (1.0 + (1.0 - tau * b).sqrt());
            let c = stationary_edge_covariance(mi, mj, j, rho).unwrap();
            assert!((c - (u - mi * mj)).abs() < 1e-13, "{c} vs {}", u - mi * mj);
        }
    }

    #[test]
    fn strong_coupling_bound_still_solves() {
        let m = generate_model::<f64>(Graph::complete(10), Regime::Attractive, 2.0, 3).unwrap();
        let rho = EdgeAppearance::uniform(m.graph()).unwrap();
        let phi_trw = trw_log_partition(&m, &rho, &SolverOptions::default()).unwrap();
        assert!(phi_trw >= log_partition(&m).unwrap());
    }

    #[test]
    fn single_precision_solve() {
        let m = generate_model::<f32>(Graph::grid2d(3, 2), Regime::Mixed, 0.5, 1).unwrap();
        let rho = EdgeAppearance::uniform(m.graph()).unwrap();
        let opts = SolverOptions::<f32>::default().with_tol(1e-6);
        let phi = trw_log_partition(&m, &rho, &opts).unwrap();
        let exact = log_partition(&m).unwrap();
        assert!(phi >= exact - 1e-4);
    }
}
