//! Numerical evaluation of `P(x_ℓ(t) ≤ x)` as a truncated series over `k`
//! of `k`-fold contour integrals on the circle `|ξ| = R`.
//!
//! Each integral is discretized with the tensor-product trapezoid rule on
//! `M` equispaced nodes per circle. Three structural facts keep this cheap:
//!
//! * the `x`-dependence enters only through `(ξ_1⋯ξ_k)^x = R^{kx} ω^{x s}`,
//!   where `s` is the sum of the node indices mod `M`; contributions are
//!   binned by `s` and every `x` is recovered at the end;
//! * the summation factor is a chain product built from the outermost
//!   variable `ξ_k` inwards, so each level reuses the state of the level
//!   above it;
//! * the nodes of the `M/2` rule are the even-indexed nodes of the `M`
//!   rule, so the coarse estimate used for the stopping test comes out of
//!   the same pass.

use std::f64::consts::PI;
use std::ops::RangeInclusive;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AsepError, Result};
use crate::kernel::{GeneralRhoProfile, RhoProfile, SiteProfile};
use crate::scalar::{combined_prefactor, rational_to_f64, HopRates, ModelParams, SiteSet};

type C = Complex64;

/// Default number of nodes per circle for the leading term.
pub const DEFAULT_QUAD_POINTS: usize = 48;
/// Floor of the per-term node count.
pub const MIN_TERM_POINTS: usize = 24;
/// Default cap on the number of node tuples `M^k` spent on one term.
pub const DEFAULT_TUPLE_BUDGET: u64 = 400_000_000;
const MIN_BUDGET_POINTS: usize = 8;
/// Largest period handled by the periodic chain kernel.
pub const MAX_PERIOD: usize = 64;

/// Circle `|ξ| = R` discretized with `M` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourSpec {
    pub radius: f64,
    pub points: usize,
}

impl ContourSpec {
    /// Checks `R > 1`, `R > τ`, `qR² - R - p > 0` and `M >= 8`.
    pub fn new(radius: f64, points: usize, rates: &HopRates) -> Result<Self> {
        let p = rates.p_f64();
        let q = rates.q_f64();
        if !radius.is_finite() || radius <= 1.0 {
            return Err(AsepError::InvalidParameter(format!(
                "contour radius {radius} must exceed 1"
            )));
        }
        if q > 0.0 && radius <= p / q {
            return Err(AsepError::InvalidParameter(format!(
                "contour radius {radius} must exceed tau = {}",
                p / q
            )));
        }
        if q * radius * radius - radius - p <= 0.0 {
            return Err(AsepError::InvalidParameter(format!(
                "contour radius {radius} leaves zeros of p + q xi_i xi_j - xi_i on or outside the contour"
            )));
        }
        if points < 8 {
            return Err(AsepError::InvalidParameter(format!(
                "need at least 8 nodes, got {points}"
            )));
        }
        Ok(ContourSpec { radius, points })
    }
}

/// Nodes `ξ_j = R e^{2πij/M}` with weights `ξ_j / M`, so that
/// `Σ_j w_j g(ξ_j) ≈ (1/2πi) ∮ g(ξ) dξ`.
pub fn contour_nodes(spec: &ContourSpec) -> Vec<(C, C)> {
    let m = spec.points;
    (0..m)
        .map(|j| {
            let xi = C::from_polar(spec.radius, 2.0 * PI * j as f64 / m as f64);
            (xi, xi / m as f64)
        })
        .collect()
}

/// `R = 1.1 · max(1, τ, (1 + √(1 + 4pq)) / 2q)`.
///
/// On `|ξ| = R` this keeps `|p + qξ_iξ_j - ξ_i| >= qR² - R - p > 0` and
/// `|ξ_i⋯ξ_k|^m > |∏_n φ(i,n)|`.
pub fn choose_radius(params: &ModelParams) -> f64 {
    let p = params.rates().p_f64();
    let q = params.rates().q_f64();
    let tau = p / q;
    let root = (1.0 + (1.0 + 4.0 * p * q).sqrt()) / (2.0 * q);
    1.1 * 1f64.max(tau).max(root)
}

/// Initial data for an evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    Periodic(RhoProfile),
    General(GeneralRhoProfile),
    Deterministic(SiteSet),
}

impl InitialData {
    fn validate_particle(&self, l: usize) -> Result<()> {
        let available = match self {
            InitialData::Periodic(_) => None,
            InitialData::General(rho) => Some(
                rho.values()
                    .iter()
                    .filter(|v| !crate::scalar::Scalar::is_zero(*v))
                    .count(),
            ),
            InitialData::Deterministic(y) => Some(y.len()),
        };
        match available {
            Some(n) if n < l => Err(AsepError::InvalidParameter(format!(
                "particle index {l} exceeds the {n} sites that can be occupied"
            ))),
            _ => Ok(()),
        }
    }

    /// Number of sites that can be occupied, if finite.
    fn capacity(&self) -> Option<usize> {
        match self {
            InitialData::Periodic(_) => None,
            InitialData::General(rho) => Some(
                rho.values()
                    .iter()
                    .filter(|v| !crate::scalar::Scalar::is_zero(*v))
                    .count(),
            ),
            InitialData::Deterministic(y) => Some(y.len()),
        }
    }
}

/// One evaluation of the distribution function.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRequest {
    pub l: usize,
    pub x: i64,
    pub t: f64,
    pub initial: InitialData,
    pub params: ModelParams,
    /// Series cap; `None` means `l + 4`.
    pub k_max: Option<usize>,
    pub tolerance: f64,
    /// Node count `M₀` for the leading term.
    pub quad_points: usize,
    /// Overrides [`choose_radius`].
    pub radius: Option<f64>,
    pub tuple_budget: u64,
}

impl EvalRequest {
    pub fn new(l: usize, x: i64, t: f64, initial: InitialData, params: ModelParams) -> Self {
        EvalRequest {
            l,
            x,
            t,
            initial,
            params,
            k_max: None,
            tolerance: 1e-6,
            quad_points: DEFAULT_QUAD_POINTS,
            radius: None,
            tuple_budget: DEFAULT_TUPLE_BUDGET,
        }
    }

    pub fn k_max_for(&self, l: usize) -> usize {
        self.k_max.unwrap_or(l + 4)
    }

    fn validate(&self, ls: &[usize]) -> Result<()> {
        if !(self.t >= 0.0 && self.t.is_finite()) {
            return Err(AsepError::InvalidParameter(format!(
                "time must be finite and >= 0, got {}",
                self.t
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(AsepError::InvalidParameter(
                "tolerance must be positive".into(),
            ));
        }
        if self.quad_points < 8 || self.quad_points % 2 != 0 {
            return Err(AsepError::InvalidParameter(format!(
                "quad_points must be even and >= 8, got {}",
                self.quad_points
            )));
        }
        if ls.is_empty() {
            return Err(AsepError::InvalidParameter(
                "no particle index requested".into(),
            ));
        }
        for &l in ls {
            if l < 1 {
                return Err(AsepError::InvalidParameter(
                    "particle index must be >= 1".into(),
                ));
            }
            if self.k_max_for(l) < l {
                return Err(AsepError::InvalidParameter(format!(
                    "k_max = {} is below the particle index {l}",
                    self.k_max_for(l)
                )));
            }
            self.initial.validate_particle(l)?;
        }
        if let InitialData::Periodic(rho) = &self.initial {
            if rho.period() > MAX_PERIOD {
                return Err(AsepError::Resource(format!(
                    "period {} exceeds {MAX_PERIOD}",
                    rho.period()
                )));
            }
        }
        Ok(())
    }

    pub fn contour(&self) -> Result<ContourSpec> {
        let radius = self.radius.unwrap_or_else(|| choose_radius(&self.params));
        ContourSpec::new(radius, self.quad_points, self.params.rates())
    }
}

/// Contribution of one `k` to the series at a fixed `(l, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesTerm {
    pub k: usize,
    pub re: f64,
    pub im: f64,
    /// Nodes per circle used for this term.
    pub points: usize,
    /// `|Q_M - Q_{M/2}|` for this term, prefactor included.
    pub quad_delta: f64,
}

/// Value of `P(x_l(t) <= x)` with convergence diagnostics. The value is
/// never clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfResult {
    pub l: usize,
    pub x: i64,
    pub value: f64,
    pub imag_residual: f64,
    pub terms: Vec<SeriesTerm>,
    pub tail_estimate: f64,
    pub quad_error_estimate: f64,
    pub series_converged: bool,
    pub quadrature_converged: bool,
    pub radius: f64,
}

impl CdfResult {
    pub fn converged(&self) -> bool {
        self.series_converged && self.quadrature_converged
    }
}

/// Precomputed node data shared by every level of one `k`-fold integral.
struct Grid {
    points: usize,
    radius: f64,
    nodes: Vec<C>,
    /// `ω^s`, `s = 0..M`.
    omega: Vec<C>,
    /// weight · e^{ε(ξ)t} / (1 - ξ)
    single: Vec<C>,
    /// `f(ξ_b, ξ_a)` at `a * M + b`: column `a` of the pair table, contiguous.
    pair_t: Vec<C>,
}

impl Grid {
    fn new(spec: &ContourSpec, t: f64, rates: &HopRates) -> Result<Self> {
        let m = spec.points;
        let p = rates.p_f64();
        let q = rates.q_f64();
        let nodes_weights = contour_nodes(spec);
        let nodes: Vec<C> = nodes_weights.iter().map(|(z, _)| *z).collect();
        let omega = (0..m)
            .map(|s| C::from_polar(1.0, 2.0 * PI * s as f64 / m as f64))
            .collect();
        let single = nodes_weights
            .iter()
            .map(|&(z, w)| {
                let eps = p / z + q * z - 1.0;
                w * (eps * t).exp() / (1.0 - z)
            })
            .collect();
        let mut pair_t = Vec::with_capacity(m * m);
        for a in &nodes {
            for b in &nodes {
                // f(ξ_b, ξ_a), ξ_b the lower-index variable
                let denom = p + q * b * a - b;
                if denom.norm() <= 1e-300 {
                    return Err(AsepError::Pole(format!(
                        "f-denominator vanishes on the contour at ({b}, {a})"
                    )));
                }
                pair_t.push((a - b) / denom);
            }
        }
        Ok(Grid {
            points: m,
            radius: spec.radius,
            nodes,
            omega,
            single,
            pair_t,
        })
    }
}

/// Summation factor written as a chain of level maps
/// `state_i = L_i(ξ_i, Π_i) state_{i+1}`, value = `state_1[0]`.
trait ChainFactor: Sync {
    fn init_state(&self) -> Vec<C>;
    /// `pi` is the node index of `Π_i = ξ_i⋯ξ_k`, i.e. `Π_i = R^{k-i+1} ω^{pi}`.
    fn level(&self, i: usize, node: usize, pi: usize, next: &[C], out: &mut [C]);
    fn top(&self, node: usize, pi: usize, next: &[C]) -> C;
}

/// `A_1 ⋯ A_k` for an `m`-periodic profile.
struct PeriodicChain {
    m: usize,
    points: usize,
    /// `ρ_ν ∏ φ(i, n)` over the μ/ν-dependent range, at `[(i-1) m + μ] m + ν`.
    coef: Vec<f64>,
    /// `Π_i^m` at `(i-1) M + s`.
    pi_m: Vec<C>,
    /// `1 / (Π_i^m - ∏_{n=1}^m φ(i,n))` at `(i-1) M + s`.
    inv_denom: Vec<C>,
    /// `ξ_a^{-ν}` at `a m + ν`.
    xi_inv: Vec<C>,
}

impl PeriodicChain {
    fn new(k: usize, grid: &Grid, rho: &RhoProfile, params: &ModelParams) -> Result<Self> {
        let m = rho.period();
        let big_m = grid.points;
        let tau = rational_to_f64(params.tau_exact());
        let rho_f: Vec<f64> = rho.values().iter().map(rational_to_f64).collect();
        let rho_at = |n: i64| rho_f[n.rem_euclid(m as i64) as usize];
        let mut coef = vec![0.0; k * m * m];
        let mut pi_m = vec![C::new(0.0, 0.0); k * big_m];
        let mut inv_denom = vec![C::new(0.0, 0.0); k * big_m];
        for i in 1..=k {
            let tau_pow = tau.powi((k - i + 1) as i32);
            let phi = |n: i64| 1.0 - rho_at(n) + rho_at(n) * tau_pow;
            let phi_prod = |from: i64, to: i64| (from..=to).map(phi).product::<f64>();
            let period = phi_prod(1, m as i64);
            for mu in 0..m as i64 {
                for nu in 0..m as i64 {
                    let interior = if mu < nu {
                        phi_prod(mu + 1, nu - 1)
                    } else {
                        phi_prod(mu + 1, nu + m as i64 - 1)
                    };
                    coef[((i - 1) * m + mu as usize) * m + nu as usize] = rho_at(nu) * interior;
                }
            }
            let scale = grid.radius.powi((m * (k - i + 1)) as i32);
            for s in 0..big_m {
                let pm = grid.omega[(m * s) % big_m] * scale;
                let denom = pm - period;
                if denom.norm() <= 1e-300 {
                    return Err(AsepError::Pole(format!(
                        "resonant transfer matrix A_{i} on the contour"
                    )));
                }
                pi_m[(i - 1) * big_m + s] = pm;
                inv_denom[(i - 1) * big_m + s] = denom.inv();
            }
        }
        let mut xi_inv = Vec::with_capacity(big_m * m);
        for z in &grid.nodes {
            let zi = z.inv();
            let mut acc = C::new(1.0, 0.0);
            for _ in 0..m {
                xi_inv.push(acc);
                acc *= zi;
            }
        }
        Ok(PeriodicChain {
            m,
            points: big_m,
            coef,
            pi_m,
            inv_denom,
            xi_inv,
        })
    }
}

impl ChainFactor for PeriodicChain {
    fn init_state(&self) -> Vec<C> {
        vec![C::new(1.0, 0.0); self.m]
    }

    fn level(&self, i: usize, node: usize, pi: usize, next: &[C], out: &mut [C]) {
        let m = self.m;
        let mut scaled = [C::new(0.0, 0.0); MAX_PERIOD];
        let xi_inv = &self.xi_inv[node * m..(node + 1) * m];
        for nu in 0..m {
            scaled[nu] = xi_inv[nu] * next[nu];
        }
        let at = (i - 1) * self.points + pi;
        let (pm, inv) = (self.pi_m[at], self.inv_denom[at]);
        for mu in 0..m {
            let row = &self.coef[((i - 1) * m + mu) * m..((i - 1) * m + mu + 1) * m];
            let mut low = C::new(0.0, 0.0);
            let mut high = C::new(0.0, 0.0);
            for nu in 0..=mu {
                low += scaled[nu] * row[nu];
            }
            for nu in (mu + 1)..m {
                high += scaled[nu] * row[nu];
            }
            out[mu] = (low + pm * high) * inv;
        }
    }

    #[inline]
    fn top(&self, node: usize, pi: usize, next: &[C]) -> C {
        let m = self.m;
        let xi_inv = &self.xi_inv[node * m..(node + 1) * m];
        let row = &self.coef[..m];
        let mut high = C::new(0.0, 0.0);
        for nu in 1..m {
            high += xi_inv[nu] * next[nu] * row[nu];
        }
        (next[0] * row[0] + self.pi_m[pi] * high) * self.inv_denom[pi]
    }
}

/// `B_1 ⋯ B_k` for a profile supported on `[1, N]`, via the recurrence
/// `g(μ) = ξ^{-(μ+1)} ρ_{μ+1} next(μ+1) + φ(i, μ+1) g(μ+1)`.
struct GeneralChain {
    horizon: usize,
    rho: Vec<f64>,
    /// `φ(i, n)` at `(i-1)(N+1) + n`.
    phi: Vec<f64>,
    /// `ξ_a^{-ν}` at `a (N+1) + ν`.
    xi_inv: Vec<C>,
}

impl GeneralChain {
    fn new(k: usize, grid: &Grid, rho: &GeneralRhoProfile, params: &ModelParams) -> Self {
        let n = rho.horizon();
        let tau = rational_to_f64(params.tau_exact());
        let mut rho_f = vec![0.0; n + 1];
        for site in 1..=n {
            rho_f[site] = rational_to_f64(&rho.rho(site as i64));
        }
        let mut phi = vec![1.0; k * (n + 1)];
        for i in 1..=k {
            let tau_pow = tau.powi((k - i + 1) as i32);
            for site in 1..=n {
                phi[(i - 1) * (n + 1) + site] = 1.0 - rho_f[site] + rho_f[site] * tau_pow;
            }
        }
        GeneralChain {
            horizon: n,
            rho: rho_f,
            phi,
            xi_inv: inverse_powers(grid, n),
        }
    }
}

fn inverse_powers(grid: &Grid, max: usize) -> Vec<C> {
    let mut table = Vec::with_capacity(grid.points * (max + 1));
    for z in &grid.nodes {
        let zi = z.inv();
        let mut acc = C::new(1.0, 0.0);
        for _ in 0..=max {
            table.push(acc);
            acc *= zi;
        }
    }
    table
}

impl ChainFactor for GeneralChain {
    fn init_state(&self) -> Vec<C> {
        vec![C::new(1.0, 0.0); self.horizon + 1]
    }

    fn level(&self, i: usize, node: usize, _pi: usize, next: &[C], out: &mut [C]) {
        let n = self.horizon;
        let xi_inv = &self.xi_inv[node * (n + 1)..(node + 1) * (n + 1)];
        let phi = &self.phi[(i - 1) * (n + 1)..i * (n + 1)];
        out[n] = C::new(0.0, 0.0);
        for mu in (0..n).rev() {
            out[mu] =
                xi_inv[mu + 1] * (self.rho[mu + 1] * next[mu + 1]) + out[mu + 1] * phi[mu + 1];
        }
    }

    fn top(&self, node: usize, _pi: usize, next: &[C]) -> C {
        let n = self.horizon;
        let xi_inv = &self.xi_inv[node * (n + 1)..(node + 1) * (n + 1)];
        let phi = &self.phi[..n + 1];
        let mut acc = C::new(0.0, 0.0);
        for mu in (0..n).rev() {
            acc = xi_inv[mu + 1] * (self.rho[mu + 1] * next[mu + 1]) + acc * phi[mu + 1];
        }
        acc
    }
}

/// Direct sum over `S ⊆ Y`, `|S| = k`, of `τ^{σ(S,Y) - k(k+1)/2} ∏ ξ_i^{-s_i}`,
/// organised over chains `s_1 < ⋯ < s_k` in `Y` using
/// `σ(S,Y) = Σ_i rank_Y(s_i)`. The state is the suffix sum over chain starts.
struct DeterministicChain {
    sites: usize,
    tau_pow: Vec<f64>,
    /// `ξ_a^{-y_b}` at `a L + b`.
    xi_inv: Vec<C>,
}

impl DeterministicChain {
    fn new(grid: &Grid, y: &SiteSet, params: &ModelParams) -> Self {
        let tau = rational_to_f64(params.tau_exact());
        let l = y.len();
        let tau_pow = (0..=l).map(|e| tau.powi(e as i32)).collect();
        let mut xi_inv = Vec::with_capacity(grid.points * l);
        for z in &grid.nodes {
            for site in y.iter() {
                xi_inv.push(z.powi(-site as i32));
            }
        }
        DeterministicChain {
            sites: l,
            tau_pow,
            xi_inv,
        }
    }
}

impl ChainFactor for DeterministicChain {
    fn init_state(&self) -> Vec<C> {
        vec![C::new(1.0, 0.0); self.sites + 1]
    }

    fn level(&self, i: usize, node: usize, _pi: usize, next: &[C], out: &mut [C]) {
        let l = self.sites;
        let xi_inv = &self.xi_inv[node * l..(node + 1) * l];
        out[l] = C::new(0.0, 0.0);
        for b in (0..l).rev() {
            // site y_b has rank b + 1; a chain needs b >= i - 1
            let here = if b + 1 >= i {
                xi_inv[b] * (self.tau_pow[b + 1 - i] * next[b + 1])
            } else {
                C::new(0.0, 0.0)
            };
            out[b] = here + out[b + 1];
        }
    }

    fn top(&self, node: usize, _pi: usize, next: &[C]) -> C {
        let l = self.sites;
        let xi_inv = &self.xi_inv[node * l..(node + 1) * l];
        let mut acc = C::new(0.0, 0.0);
        for b in 0..l {
            acc += xi_inv[b] * (self.tau_pow[b] * next[b + 1]);
        }
        acc
    }
}

/// Binned trapezoid sums of one `k`-fold integral on the `M` grid and on
/// its even-indexed `M/2` subgrid. Entry `s` collects the tuples whose node
/// indices sum to `s` mod `M`.
struct Bins {
    full: Vec<C>,
    half: Vec<C>,
}

struct Walker<'a, K: ChainFactor> {
    chain: &'a K,
    grid: &'a Grid,
    k: usize,
    states: Vec<Vec<C>>,
    /// `weights[i][b] = single[b] ∏_{j>i} f(ξ_b, ξ_{idx_j})` for the indices
    /// fixed above level `i`; `weights[1]` also carries the outer weight.
    weights: Vec<Vec<C>>,
    bins: Bins,
}

impl<'a, K: ChainFactor> Walker<'a, K> {
    fn new(chain: &'a K, grid: &'a Grid, k: usize) -> Self {
        let init = chain.init_state();
        let len = init.len();
        let mut states = vec![vec![C::new(0.0, 0.0); len]; k + 2];
        states[k + 1] = init;
        let m = grid.points;
        let mut weights = vec![vec![C::new(0.0, 0.0); m]; k + 1];
        weights[k] = grid.single.clone();
        Walker {
            chain,
            grid,
            k,
            states,
            weights,
            bins: Bins {
                full: vec![C::new(0.0, 0.0); m],
                half: vec![C::new(0.0, 0.0); m],
            },
        }
    }

    /// Enter level `i >= 2` at node `a`; `s_above` is the index sum of the
    /// levels above and `weight` their accumulated weight.
    fn enter(&mut self, i: usize, a: usize, s_above: usize, weight: C, even: bool) {
        let grid = self.grid;
        let m = grid.points;
        let w = weight * self.weights[i][a];
        let s = if s_above + a >= m {
            s_above + a - m
        } else {
            s_above + a
        };
        {
            let (lo, hi) = self.states.split_at_mut(i + 1);
            self.chain.level(i, a, s, &hi[0], &mut lo[i]);
        }
        let column = &grid.pair_t[a * m..(a + 1) * m];
        let (lo, hi) = self.weights.split_at_mut(i);
        let (below, here) = (&mut lo[i - 1], &hi[0]);
        let even = even && a % 2 == 0;
        if i == 2 {
            for b in 0..m {
                below[b] = w * here[b] * column[b];
            }
            self.innermost(s, even);
        } else {
            for b in 0..m {
                below[b] = here[b] * column[b];
            }
            for b in 0..m {
                self.enter(i - 1, b, s, w, even);
            }
        }
    }

    fn innermost(&mut self, s_above: usize, even: bool) {
        let m = self.grid.points;
        let next = &self.states[2];
        let weights = &self.weights[1];
        let mut s = s_above;
        for a in 0..m {
            let v = weights[a] * self.chain.top(a, s, next);
            self.bins.full[s] += v;
            if even && a % 2 == 0 {
                self.bins.half[s] += v;
            }
            s += 1;
            if s == m {
                s = 0;
            }
        }
    }

    fn run_outer(&mut self, a: usize) {
        if self.k == 1 {
            self.innermost(0, true);
        } else {
            self.enter(self.k, a, 0, C::new(1.0, 0.0), true);
        }
    }
}

fn integrate_bins<K: ChainFactor>(chain: &K, grid: &Grid, k: usize) -> Bins {
    let m = grid.points;
    if k == 1 {
        let mut walker = Walker::new(chain, grid, 1);
        walker.run_outer(0);
        return walker.bins;
    }
    let parts: Vec<Bins> = (0..m)
        .into_par_iter()
        .map(|a| {
            let mut walker = Walker::new(chain, grid, k);
            walker.run_outer(a);
            walker.bins
        })
        .collect();
    let mut total = Bins {
        full: vec![C::new(0.0, 0.0); m],
        half: vec![C::new(0.0, 0.0); m],
    };
    for part in parts {
        for s in 0..m {
            total.full[s] += part.full[s];
            total.half[s] += part.half[s];
        }
    }
    total
}

/// `J_k(x)` on the `M` grid and on the `M/2` subgrid, for every requested `x`.
struct TermIntegral {
    points: usize,
    full: Vec<C>,
    half: Vec<C>,
}

fn integrate_term(
    initial: &InitialData,
    params: &ModelParams,
    t: f64,
    k: usize,
    spec: &ContourSpec,
    xs: &[i64],
) -> Result<TermIntegral> {
    let grid = Grid::new(spec, t, params.rates())?;
    let bins = match initial {
        InitialData::Periodic(rho) => {
            let chain = PeriodicChain::new(k, &grid, rho, params)?;
            integrate_bins(&chain, &grid, k)
        }
        InitialData::General(rho) => {
            let chain = GeneralChain::new(k, &grid, rho, params);
            integrate_bins(&chain, &grid, k)
        }
        InitialData::Deterministic(y) => {
            let chain = DeterministicChain::new(&grid, y, params);
            integrate_bins(&chain, &grid, k)
        }
    };
    let m = grid.points;
    let half_scale = 2f64.powi(k as i32);
    let mut full = Vec::with_capacity(xs.len());
    let mut half = Vec::with_capacity(xs.len());
    for &x in xs {
        let scale = grid.radius.powf((k as i64 * x) as f64);
        let mut f = C::new(0.0, 0.0);
        let mut h = C::new(0.0, 0.0);
        for s in 0..m {
            let w = grid.omega[(x * s as i64).rem_euclid(m as i64) as usize];
            f += bins.full[s] * w;
            h += bins.half[s] * w;
        }
        full.push(f * scale);
        half.push(h * scale * half_scale);
    }
    Ok(TermIntegral {
        points: m,
        full,
        half,
    })
}

/// `combined_prefactor(l, k)` times the `k`-fold quadrature at `spec`, at `request.x`.
pub fn series_term(request: &EvalRequest, k: usize, spec: &ContourSpec) -> Result<C> {
    request.validate(&[request.l])?;
    if k < request.l {
        return Err(AsepError::Domain(format!(
            "series term needs k >= l, got k={k}, l={}",
            request.l
        )));
    }
    let pref: f64 = prefactor_f64(request.l, k, &request.params)?;
    if pref == 0.0 {
        return Ok(C::new(0.0, 0.0));
    }
    if let Some(cap) = request.initial.capacity() {
        if k > cap {
            return Ok(C::new(0.0, 0.0));
        }
    }
    let term = integrate_term(
        &request.initial,
        &request.params,
        request.t,
        k,
        spec,
        &[request.x],
    )?;
    Ok(term.full[0] * pref)
}

fn prefactor_f64(l: usize, k: usize, params: &ModelParams) -> Result<f64> {
    let exact: crate::scalar::Rational = combined_prefactor(l as i64, k as i64, params)?;
    Ok(rational_to_f64(&exact))
}

/// Default node count for term `k`: `max(24, M₀ / 2^{k - l})`, kept even.
pub fn default_term_points(quad_points: usize, k: usize, l: usize) -> usize {
    let shift = (k - l).min(31) as u32;
    let m = (quad_points >> shift).max(MIN_TERM_POINTS);
    m + m % 2
}

fn tuple_count(points: usize, k: usize) -> u64 {
    (points as u64).checked_pow(k as u32).unwrap_or(u64::MAX)
}

/// Largest even point count `<= points` whose `k`-fold grid fits the budget.
fn budget_points(points: usize, k: usize, budget: u64) -> Option<usize> {
    let mut m = points;
    while m > MIN_BUDGET_POINTS && tuple_count(m, k) > budget {
        m -= 2;
    }
    (tuple_count(m, k) <= budget).then_some(m)
}

/// `P(x_l(t) <= x)` at the request's `(l, x)`.
pub fn evaluate_cdf(request: &EvalRequest) -> Result<CdfResult> {
    let mut results = evaluate_cdf_grid(request, &[request.l], request.x..=request.x)?;
    Ok(results.remove(0))
}

/// Evaluates every `(l, x)` pair of the grid, sharing the `k`-fold integrals
/// (which do not depend on `l`) and the node sums (which do not depend on `x`).
/// Results are ordered by `l`, then `x`. `request.l` and `request.x` are ignored.
pub fn evaluate_cdf_grid(
    request: &EvalRequest,
    ls: &[usize],
    xs: RangeInclusive<i64>,
) -> Result<Vec<CdfResult>> {
    request.validate(ls)?;
    let xs: Vec<i64> = xs.collect();
    if xs.is_empty() {
        return Err(AsepError::InvalidParameter("empty x range".into()));
    }
    let spec = request.contour()?;
    let l_min = *ls.iter().min().expect("non-empty");
    let k_top = ls
        .iter()
        .map(|&l| request.k_max_for(l))
        .max()
        .expect("non-empty");
    let n_terms = ls
        .iter()
        .map(|&l| request.k_max_for(l) - l + 1)
        .max()
        .expect("non-empty");
    let term_tol = request.tolerance / n_terms as f64;

    // weights[k] = max over l of |combined_prefactor(l, k)| among the l using term k
    let mut integrals: Vec<Option<TermIntegral>> = Vec::with_capacity(k_top + 1);
    let mut prefactors = vec![vec![0.0; k_top + 1]; ls.len()];
    for (row, &l) in ls.iter().enumerate() {
        for k in l..=request.k_max_for(l) {
            prefactors[row][k] = prefactor_f64(l, k, &request.params)?;
        }
    }
    for k in 0..=k_top {
        let weight = prefactors
            .iter()
            .map(|row| row[k].abs())
            .fold(0.0, f64::max);
        let beyond_capacity = request.initial.capacity().is_some_and(|cap| k > cap);
        if k < l_min || weight == 0.0 || beyond_capacity {
            integrals.push(None);
            continue;
        }
        let points0 = default_term_points(request.quad_points, k, l_min);
        let mut points = budget_points(points0, k, request.tuple_budget).ok_or_else(|| {
            AsepError::Resource(format!(
                "term k={k} needs more than {} node tuples even at {MIN_BUDGET_POINTS} points",
                request.tuple_budget
            ))
        })?;
        let term = loop {
            let term_spec = ContourSpec {
                radius: spec.radius,
                points,
            };
            let term = integrate_term(
                &request.initial,
                &request.params,
                request.t,
                k,
                &term_spec,
                &xs,
            )?;
            let delta = term
                .full
                .iter()
                .zip(&term.half)
                .map(|(f, h)| (f - h).norm())
                .fold(0.0, f64::max);
            let next_cost = tuple_count(2 * points, k);
            if weight * delta <= term_tol || next_cost > request.tuple_budget {
                break term;
            }
            points *= 2;
        };
        integrals.push(Some(term));
    }

    let mut results = Vec::with_capacity(ls.len() * xs.len());
    for (row, &l) in ls.iter().enumerate() {
        let k_max = request.k_max_for(l);
        for (xi, &x) in xs.iter().enumerate() {
            let mut sum = C::new(0.0, 0.0);
            let mut quad_err = 0.0;
            let mut terms = Vec::with_capacity(k_max - l + 1);
            for k in l..=k_max {
                let pref = prefactors[row][k];
                let (value, delta, points) = match &integrals[k] {
                    Some(term) => (
                        term.full[xi] * pref,
                        (term.full[xi] - term.half[xi]).norm() * pref.abs(),
                        term.points,
                    ),
                    None => (C::new(0.0, 0.0), 0.0, 0),
                };
                sum += value;
                quad_err += delta;
                terms.push(SeriesTerm {
                    k,
                    re: value.re,
                    im: value.im,
                    points,
                    quad_delta: delta,
                });
            }
            let tail = terms
                .last()
                .map(|t| C::new(t.re, t.im).norm())
                .unwrap_or(0.0);
            results.push(CdfResult {
                l,
                x,
                value: sum.re,
                imag_residual: sum.im.abs(),
                series_converged: tail < request.tolerance * sum.re.abs().max(1.0),
                quadrature_converged: quad_err < request.tolerance,
                tail_estimate: tail,
                quad_error_estimate: quad_err,
                terms,
                radius: spec.radius,
            });
        }
    }
    Ok(results)
}

/// `P(x_l(t) = x)` as a difference of two distribution-function values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmfResult {
    pub l: usize,
    pub x: i64,
    pub value: f64,
    pub upper: CdfResult,
    pub lower: CdfResult,
}

impl PmfResult {
    pub fn converged(&self) -> bool {
        self.upper.converged() && self.lower.converged()
    }
}

pub fn evaluate_pmf(request: &EvalRequest) -> Result<PmfResult> {
    let mut grid = evaluate_pmf_grid(request, &[request.l], request.x..=request.x)?;
    Ok(grid.remove(0))
}

/// Probability masses over a grid, from one distribution-function pass on
/// `x_min - 1 ..= x_max`. The differences are reported raw and may be
/// slightly negative.
pub fn evaluate_pmf_grid(
    request: &EvalRequest,
    ls: &[usize],
    xs: RangeInclusive<i64>,
) -> Result<Vec<PmfResult>> {
    let (lo, hi) = (*xs.start(), *xs.end());
    if lo > hi {
        return Err(AsepError::InvalidParameter("empty x range".into()));
    }
    let cdf = evaluate_cdf_grid(request, ls, (lo - 1)..=hi)?;
    let width = (hi - lo + 2) as usize;
    let mut out = Vec::with_capacity(ls.len() * (width - 1));
    for row in cdf.chunks(width) {
        for pair in row.windows(2) {
            out.push(PmfResult {
                l: pair[1].l,
                x: pair[1].x,
                value: pair[1].value - pair[0].value,
                upper: pair[1].clone(),
                lower: pair[0].clone(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{general_factor_truncated, integrand_i, periodic_factor, XiVector};
    use crate::scalar::parse_rational;
    use itertools::Itertools;

    fn params(p: &str, q: &str) -> ModelParams {
        ModelParams::parse(p, q).unwrap()
    }

    #[test]
    fn contour_monomials() {
        let spec = ContourSpec {
            radius: 2.0,
            points: 8,
        };
        let nodes = contour_nodes(&spec);
        let moment = |n: i32| nodes.iter().map(|(z, w)| w * z.powi(n)).sum::<C>();
        assert!((moment(-1) - 1.0).norm() < 1e-14);
        assert!((moment(7) - 256.0).norm() < 1e-11);
        let spec16 = ContourSpec {
            radius: 1.7,
            points: 16,
        };
        let nodes16 = contour_nodes(&spec16);
        let m3: C = nodes16.iter().map(|(z, w)| w * z.powi(3)).sum();
        assert!(m3.norm() < 1e-14);
    }

    #[test]
    fn radius_examples() {
        assert!((choose_radius(&params("0", "1")) - 1.1).abs() < 1e-15);
        let tau2 = params("2/3", "1/3");
        let root = (1.0 + (1.0f64 + 8.0 / 9.0).sqrt()) * 1.5;
        assert!((choose_radius(&tau2) - 1.1 * root.max(2.0)).abs() < 1e-12);
        // p = q = 1/2 is excluded from ModelParams; check the quadratic directly
        let sym = HopRates::new(
            parse_rational("1/2").unwrap(),
            parse_rational("1/2").unwrap(),
        )
        .unwrap();
        let r = 1.1 * (1.0 + 2f64.sqrt());
        assert!(ContourSpec::new(r, 8, &sym).is_ok());
        assert!(ContourSpec::new(1.0 + 2f64.sqrt(), 8, &sym).is_err());
    }

    #[test]
    fn contour_spec_validation() {
        let p = params("1/3", "2/3");
        let rates = p.rates();
        assert!(ContourSpec::new(choose_radius(&p), 8, rates).is_ok());
        assert!(ContourSpec::new(0.9, 16, rates).is_err());
        assert!(ContourSpec::new(1.5, 16, rates).is_err());
        assert!(ContourSpec::new(choose_radius(&p), 6, rates).is_err());
    }

    /// Plain tensor-product trapezoid sum of `I · factor` through the generic kernel.
    fn generic_term(
        k: usize,
        x: i64,
        t: f64,
        spec: &ContourSpec,
        params: &ModelParams,
        factor: impl Fn(&XiVector<C>) -> C,
    ) -> C {
        let nodes = contour_nodes(spec);
        let mut total = C::new(0.0, 0.0);
        for tuple in (0..k).map(|_| 0..spec.points).multi_cartesian_product() {
            let xi = XiVector::new(tuple.iter().map(|&j| nodes[j].0).collect());
            let w: C = tuple.iter().map(|&j| nodes[j].1).product();
            let value = integrand_i(x, &xi, t, params.rates()).unwrap();
            total += w * value * factor(&xi);
        }
        total
    }

    #[test]
    fn nested_periodic_matches_generic_kernel() {
        let params = params("3/10", "7/10");
        let rho = RhoProfile::parse(&["1/4", "1/2", "1/3"]).unwrap();
        let spec = ContourSpec::new(choose_radius(&params), 8, params.rates()).unwrap();
        let initial = InitialData::Periodic(rho.clone());
        for k in 1..=3 {
            let xs = [-2, 0, 3];
            let fast = integrate_term(&initial, &params, 0.7, k, &spec, &xs).unwrap();
            for (n, &x) in xs.iter().enumerate() {
                let slow = generic_term(k, x, 0.7, &spec, &params, |xi| {
                    periodic_factor(xi, &rho, &params).unwrap()
                });
                let err = (fast.full[n] - slow).norm();
                assert!(
                    err <= 1e-12 * slow.norm().max(1e-3),
                    "k={k} x={x}: {} vs {}",
                    fast.full[n],
                    slow
                );
            }
        }
    }

    #[test]
    fn nested_general_and_deterministic_match_generic_kernel() {
        let params = params("1/5", "4/5");
        let rho = GeneralRhoProfile::parse(&["1/2", "0", "1", "1/3", "0", "1"]).unwrap();
        let y = SiteSet::new(vec![1, 3, 4, 7]).unwrap();
        let y_profile = GeneralRhoProfile::indicator(&y).unwrap();
        let spec = ContourSpec::new(choose_radius(&params), 8, params.rates()).unwrap();
        for k in 1..=3 {
            let fast = integrate_term(
                &InitialData::General(rho.clone()),
                &params,
                0.4,
                k,
                &spec,
                &[1],
            )
            .unwrap();
            let slow = generic_term(k, 1, 0.4, &spec, &params, |xi| {
                general_factor_truncated(xi, &rho, &params).unwrap()
            });
            assert!((fast.full[0] - slow).norm() <= 1e-12 * slow.norm().max(1e-3));

            let fast = integrate_term(
                &InitialData::Deterministic(y.clone()),
                &params,
                0.4,
                k,
                &spec,
                &[1],
            )
            .unwrap();
            let slow = generic_term(k, 1, 0.4, &spec, &params, |xi| {
                general_factor_truncated(xi, &y_profile, &params).unwrap()
            });
            assert!((fast.full[0] - slow).norm() <= 1e-12 * slow.norm().max(1e-3));
        }
    }

    #[test]
    fn half_grid_is_the_even_subgrid() {
        let params = params("3/10", "7/10");
        let initial = InitialData::Periodic(RhoProfile::parse(&["1/2", "1/4"]).unwrap());
        let r = choose_radius(&params);
        for k in 1..=2 {
            let fine = integrate_term(
                &initial,
                &params,
                1.0,
                k,
                &ContourSpec {
                    radius: r,
                    points: 16,
                },
                &[0, 2],
            )
            .unwrap();
            let coarse = integrate_term(
                &initial,
                &params,
                1.0,
                k,
                &ContourSpec {
                    radius: r,
                    points: 8,
                },
                &[0, 2],
            )
            .unwrap();
            for n in 0..2 {
                assert!(
                    (fine.half[n] - coarse.full[n]).norm() < 1e-13 * coarse.full[n].norm().max(1.0)
                );
            }
        }
    }

    #[test]
    fn higher_terms_vanish_at_tau_zero() {
        let params = params("0", "1");
        let rho = RhoProfile::parse(&["1/2"]).unwrap();
        let request = EvalRequest::new(1, 0, 1.0, InitialData::Periodic(rho), params.clone());
        let spec = request.contour().unwrap();
        assert_eq!(series_term(&request, 2, &spec).unwrap(), C::new(0.0, 0.0));
        assert!(series_term(&request, 1, &spec).unwrap().norm() > 0.0);
    }

    #[test]
    fn request_validation() {
        let params = params("1/3", "2/3");
        let rho = RhoProfile::parse(&["1/2"]).unwrap();
        let mut request = EvalRequest::new(
            0,
            0,
            1.0,
            InitialData::Periodic(rho.clone()),
            params.clone(),
        );
        assert!(evaluate_cdf(&request).is_err());
        request.l = 2;
        request.k_max = Some(1);
        assert!(evaluate_cdf(&request).is_err());
        request.k_max = None;
        request.tolerance = 0.0;
        assert!(evaluate_cdf(&request).is_err());
        request.tolerance = 1e-6;
        request.quad_points = 30 + 1;
        assert!(evaluate_cdf(&request).is_err());
        let y = SiteSet::new(vec![2, 4]).unwrap();
        let request = EvalRequest::new(3, 0, 1.0, InitialData::Deterministic(y), params);
        assert!(evaluate_cdf(&request).is_err());
    }

    #[test]
    fn default_points_halve_with_k() {
        assert_eq!(default_term_points(48, 1, 1), 48);
        assert_eq!(default_term_points(48, 2, 1), 24);
        assert_eq!(default_term_points(48, 5, 1), 24);
        assert_eq!(default_term_points(128, 3, 2), 64);
        assert_eq!(budget_points(24, 7, DEFAULT_TUPLE_BUDGET), Some(16));
        assert_eq!(budget_points(48, 2, DEFAULT_TUPLE_BUDGET), Some(48));
        assert_eq!(budget_points(24, 12, DEFAULT_TUPLE_BUDGET), None);
    }
}
