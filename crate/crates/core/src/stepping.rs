//! Implicit Euler time integration of the coupled bulk–surface system with
//! Newton iteration on the (optionally Yosida-regularized) graphs.
//!
//! The unknown of each Newton solve is the chemical potential `μ⁺`; the
//! order parameter is eliminated through the mass row,
//! `u⁺ = u − dt·M⁻¹𝓛μ⁺`, so the generalized mean is conserved to rounding.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{CoupledField, StripMesh};
use crate::graphs::{Bound, GraphKind, MonotoneGraph, Perturbation, PotentialPair};
use crate::linalg::{BandLu, BandMatrix, CsrMatrix};
use crate::operators::{CoupledOperator, NormKind};
use crate::scalar::Scalar;

const FRACTION_TO_BOUNDARY: f64 = 0.99;
const MAX_BACKTRACKS: usize = 40;
const CONTRACTION_TARGET: f64 = 0.25;
const MAX_CHORD_ITERS: usize = 4;
const ROUNDING_FACTOR: f64 = 16.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    /// Backward Euler in every term.
    FullyImplicit,
    /// Monotone part implicit, Lipschitz perturbation explicit.
    ConvexSplitting,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::FullyImplicit => "fully_implicit",
            Scheme::ConvexSplitting => "convex_splitting",
        }
    }
}

/// Scalar time modulation of a separable source term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeProfile<T> {
    Constant,
    /// `1 + rate·t`.
    Linear { rate: T },
    /// `cos(omega·t + phase)`.
    Harmonic { omega: T, phase: T },
}

impl<T: Scalar> TimeProfile<T> {
    pub fn value(&self, t: T) -> T {
        match *self {
            TimeProfile::Constant => T::one(),
            TimeProfile::Linear { rate } => T::one() + rate * t,
            TimeProfile::Harmonic { omega, phase } => (omega * t + phase).cos(),
        }
    }
}

#[derive(Clone, Debug)]
pub enum SourceTerm<T> {
    Zero,
    Separable {
        field: CoupledField<T>,
        profile: TimeProfile<T>,
    },
    /// Piecewise-linear interpolation between sampled fields, held constant
    /// outside the sampled interval.
    Samples {
        times: Vec<T>,
        fields: Vec<CoupledField<T>>,
    },
}

impl<T: Scalar> SourceTerm<T> {
    fn accumulate(&self, t: T, out: &mut CoupledField<T>) {
        let mut add = |f: &CoupledField<T>, s: T| {
            out.bulk.iter_mut().zip(&f.bulk).for_each(|(o, &v)| *o = *o + s * v);
            out.boundary.iter_mut().zip(&f.boundary).for_each(|(o, &v)| *o = *o + s * v);
        };
        match self {
            SourceTerm::Zero => {}
            SourceTerm::Separable { field, profile } => add(field, profile.value(t)),
            SourceTerm::Samples { times, fields } => {
                let last = times.len() - 1;
                if t <= times[0] {
                    add(&fields[0], T::one());
                } else if t >= times[last] {
                    add(&fields[last], T::one());
                } else {
                    let k = times.partition_point(|&s| s <= t) - 1;
                    let w = (t - times[k]) / (times[k + 1] - times[k]);
                    add(&fields[k], T::one() - w);
                    add(&fields[k + 1], w);
                }
            }
        }
    }

    fn is_autonomous(&self) -> bool {
        match self {
            SourceTerm::Zero => true,
            SourceTerm::Separable { profile, .. } => matches!(profile, TimeProfile::Constant),
            SourceTerm::Samples { fields, .. } => fields.len() == 1,
        }
    }

    fn validate(&self, mesh: &StripMesh<T>) -> Result<()> {
        match self {
            SourceTerm::Zero => Ok(()),
            SourceTerm::Separable { field, .. } => field.check_size(mesh),
            SourceTerm::Samples { times, fields } => {
                if times.is_empty() || times.len() != fields.len() {
                    return Err(Error::InvalidConfig(
                        "source samples need one field per time and at least one time".into(),
                    ));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidConfig("source sample times must increase".into()));
                }
                fields.iter().try_for_each(|f| f.check_size(mesh))
            }
        }
    }
}

/// Source `f = g + h`; only the sum enters the solver.
#[derive(Clone, Debug)]
pub struct Source<T> {
    pub g: SourceTerm<T>,
    pub h: SourceTerm<T>,
}

impl<T: Scalar> Default for Source<T> {
    fn default() -> Self {
        Source::zero()
    }
}

impl<T: Scalar> Source<T> {
    pub fn zero() -> Self {
        Source {
            g: SourceTerm::Zero,
            h: SourceTerm::Zero,
        }
    }

    pub fn stationary(field: CoupledField<T>) -> Self {
        Source {
            g: SourceTerm::Separable {
                field,
                profile: TimeProfile::Constant,
            },
            h: SourceTerm::Zero,
        }
    }

    pub fn eval(&self, mesh: &StripMesh<T>, t: T) -> CoupledField<T> {
        let mut out = CoupledField::zeros(mesh);
        self.g.accumulate(t, &mut out);
        self.h.accumulate(t, &mut out);
        out
    }

    pub fn is_autonomous(&self) -> bool {
        self.g.is_autonomous() && self.h.is_autonomous()
    }

    pub fn is_zero(&self) -> bool {
        matches!((&self.g, &self.h), (SourceTerm::Zero, SourceTerm::Zero))
    }
}

#[derive(Clone, Debug)]
pub struct SolverConfig<T> {
    pub mesh: StripMesh<T>,
    pub pair: PotentialPair<T>,
    pub delta: T,
    pub lambda: T,
    pub dt: T,
    pub t_final: T,
    pub scheme: Scheme,
    pub newton_tol: T,
    pub newton_max_iter: usize,
    pub source: Source<T>,
    /// Keep a Jacobian factorization across iterations and steps while
    /// Newton contracts fast enough.
    pub reuse_jacobian: bool,
}

impl<T: Scalar> SolverConfig<T> {
    /// Defaults: `T = 0.1`, `dt = 1e-4`, convex splitting, `λ = 0` unless a
    /// graph is multivalued (then `1e-3`).
    pub fn new(mesh: StripMesh<T>, pair: PotentialPair<T>) -> Self {
        let lambda = if pair.has_multivalued_graph() {
            T::lit(1e-3)
        } else {
            T::zero()
        };
        SolverConfig {
            mesh,
            pair,
            delta: T::zero(),
            lambda,
            dt: T::lit(1e-4),
            t_final: T::lit(0.1),
            scheme: Scheme::ConvexSplitting,
            newton_tol: T::lit(1e-10),
            newton_max_iter: 50,
            source: Source::zero(),
            reuse_jacobian: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: T| v > T::zero() && v.is_finite();
        if !(self.delta >= T::zero() && self.delta.is_finite()) {
            return Err(Error::InvalidConfig(format!("delta must be >= 0, got {}", self.delta)));
        }
        if !(self.lambda >= T::zero() && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.lambda == T::zero() && self.pair.has_multivalued_graph() {
            return Err(Error::InvalidConfig(
                "a multivalued graph requires lambda > 0".into(),
            ));
        }
        if !positive(self.dt) || !positive(self.t_final) {
            return Err(Error::InvalidConfig("dt and t_final must be positive".into()));
        }
        if self.dt > self.t_final * (T::one() + T::lit(1e-12)) {
            return Err(Error::InvalidConfig("dt must not exceed t_final".into()));
        }
        if !positive(self.newton_tol) || self.newton_max_iter == 0 {
            return Err(Error::InvalidConfig("Newton tolerance and iteration cap must be positive".into()));
        }
        self.source.g.validate(&self.mesh)?;
        self.source.h.validate(&self.mesh)
    }

    /// Number of time steps, `round(T / dt)`.
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round().to_usize().unwrap_or(1).max(1)
    }
}

/// Discrete solution at one time node. `xi` holds the nodal values of the
/// (regularized) graphs: `β_λ(u)` in the bulk, `β_{Γ,λ}(u_Γ)` on the boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct SimState<T> {
    pub t: T,
    pub u: CoupledField<T>,
    pub mu: CoupledField<T>,
    pub xi: CoupledField<T>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats<T> {
    pub newton_iters: usize,
    pub factorizations: usize,
    /// Max-norm of the mass-scaled residual at acceptance.
    pub residual: T,
    /// Accepted at the rounding level of the residual evaluation rather
    /// than at `newton_tol`.
    pub rounding_limited: bool,
}

/// Per-node quantities tracked along a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostics<T> {
    pub step: usize,
    pub t: T,
    pub mass: T,
    pub energy: T,
    /// `‖μ‖_{V₀}`.
    pub grad_mu: T,
    pub u_v_norm: T,
    pub xi_h_norm: T,
    pub newton_iters: usize,
    pub residual: T,
}

#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    /// States at every time node, starting with the initial state.
    pub states: Vec<SimState<T>>,
    pub diagnostics: Vec<Diagnostics<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn last(&self) -> &SimState<T> {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn max_mass_drift(&self) -> T {
        let m0 = self.diagnostics[0].mass;
        self.diagnostics.iter().fold(T::zero(), |a, d| a.max((d.mass - m0).abs()))
    }
}

/// Per-step data fixed during one Newton solve.
struct StepContext<T> {
    prev_u: Vec<T>,
    /// Quadrature-weighted source at the new time.
    f_dual: Vec<T>,
    /// Explicit perturbation values (convex splitting only).
    pi_explicit: Option<(Vec<T>, Vec<T>)>,
}

/// A time stepper bound to one configuration.
#[derive(Debug)]
pub struct Solver<T> {
    config: SolverConfig<T>,
    op: Arc<CoupledOperator<T>>,
    k_delta: CsrMatrix<T>,
    inv_mass: Vec<T>,
    boundary_nodes: Vec<usize>,
    jacobian: Option<BandLu<T>>,
    stale: bool,
}

impl<T: Scalar> Solver<T> {
    pub fn new(config: SolverConfig<T>) -> Result<Self> {
        let op = Arc::new(CoupledOperator::new(&config.mesh));
        Self::with_operator(config, op)
    }

    /// Shares an assembled operator between solvers on the same mesh.
    pub fn with_operator(config: SolverConfig<T>, op: Arc<CoupledOperator<T>>) -> Result<Self> {
        config.validate()?;
        if op.mesh() != &config.mesh {
            return Err(Error::InvalidConfig("operator mesh differs from configuration mesh".into()));
        }
        let n = config.mesh.bulk_len();
        let mut triplets = Vec::new();
        for i in 0..n {
            triplets.extend(op.bulk_stiffness().row(i).map(|(j, v)| (i, j, v)));
            triplets.extend(op.boundary_stiffness().row(i).map(|(j, v)| (i, j, config.delta * v)));
        }
        let k_delta = CsrMatrix::from_triplets(n, triplets);
        let inv_mass = op.mass().iter().map(|&m| T::one() / m).collect();
        let boundary_nodes = config.mesh.boundary_nodes().to_vec();
        Ok(Solver {
            config,
            op,
            k_delta,
            inv_mass,
            boundary_nodes,
            jacobian: None,
            stale: true,
        })
    }

    pub fn config(&self) -> &SolverConfig<T> {
        &self.config
    }

    pub fn operator(&self) -> &Arc<CoupledOperator<T>> {
        &self.op
    }

    fn mesh(&self) -> &StripMesh<T> {
        &self.config.mesh
    }

    fn regularized(&self, graph: &MonotoneGraph<T>, r: T) -> Result<(T, T)> {
        graph.regularized(self.config.lambda, r)
    }

    fn graph_values(&self, graph: &MonotoneGraph<T>, u: &[T]) -> Result<Vec<T>> {
        u.iter().map(|&r| Ok(self.regularized(graph, r)?.0)).collect()
    }

    /// `ξ` for a trace-compatible nodal `u`.
    pub fn xi_of(&self, u: &CoupledField<T>) -> Result<CoupledField<T>> {
        Ok(CoupledField {
            bulk: self.graph_values(&self.config.pair.bulk, &u.bulk)?,
            boundary: self.graph_values(&self.config.pair.boundary, &u.boundary)?,
        })
    }

    fn context(&self, prev_u: &[T], t_next: T) -> Result<StepContext<T>> {
        let f = self.config.source.eval(self.mesh(), t_next);
        let f_dual = self.op.to_dual(&f)?.0;
        let pi_explicit = match self.config.scheme {
            Scheme::FullyImplicit => None,
            Scheme::ConvexSplitting => {
                let pair = &self.config.pair;
                Some((
                    prev_u.iter().map(|&r| pair.pi_bulk.value(r)).collect(),
                    self.boundary_nodes.iter().map(|&k| pair.pi_boundary.value(prev_u[k])).collect(),
                ))
            }
        };
        Ok(StepContext {
            prev_u: prev_u.to_vec(),
            f_dual,
            pi_explicit,
        })
    }

    /// Nodal chemical-potential functional
    /// `K_δ u + M_Ω(β_λ+π)(u) + M_Γ(β_{Γ,λ}+π_Γ)(u) − f`, and optionally the
    /// diagonal of its derivative with respect to `u`.
    fn potential_functional(
        &self,
        u: &[T],
        ctx: &StepContext<T>,
        want_slopes: bool,
    ) -> Result<(Vec<T>, Vec<T>)> {
        let pair = &self.config.pair;
        let mut out = self.k_delta.mul_vec(u);
        let mut slopes = if want_slopes { vec![T::zero(); u.len()] } else { Vec::new() };
        let bulk_mass = self.op.bulk_mass();
        let side = |graph: &MonotoneGraph<T>, pi: &Perturbation<T>, r: T, explicit: Option<T>| -> Result<(T, T)> {
            let (b, db) = self.regularized(graph, r)?;
            Ok(match explicit {
                Some(p) => (b + p, db),
                None => (b + pi.value(r), db + pi.derivative(r)),
            })
        };
        for k in 0..u.len() {
            let explicit = ctx.pi_explicit.as_ref().map(|(b, _)| b[k]);
            let (v, s) = side(&pair.bulk, &pair.pi_bulk, u[k], explicit)?;
            out[k] = out[k] + bulk_mass[k] * v - ctx.f_dual[k];
            if want_slopes {
                slopes[k] = bulk_mass[k] * s;
            }
        }
        for (b, (&k, &w)) in self
            .boundary_nodes
            .iter()
            .zip(self.mesh().boundary_weights())
            .enumerate()
        {
            let explicit = ctx.pi_explicit.as_ref().map(|(_, g)| g[b]);
            let (v, s) = side(&pair.boundary, &pair.pi_boundary, u[k], explicit)?;
            out[k] = out[k] + w * v;
            if want_slopes {
                slopes[k] = slopes[k] + w * s;
            }
        }
        Ok((out, slopes))
    }

    /// `u = u_prev − dt·M⁻¹𝓛μ`.
    fn u_from_mu(&self, prev_u: &[T], mu: &[T]) -> Vec<T> {
        let lmu = self.op.laplacian().mul_vec(mu);
        prev_u
            .iter()
            .zip(&lmu)
            .zip(&self.inv_mass)
            .map(|((&u, &l), &im)| u - self.config.dt * im * l)
            .collect()
    }

    /// Reduced residual `Mμ − (chemical-potential functional)(u(μ))`.
    fn reduced_residual(&self, u: &[T], mu: &[T], ctx: &StepContext<T>) -> Result<Vec<T>> {
        let (phi, _) = self.potential_functional(u, ctx, false)?;
        Ok(self
            .op
            .mass()
            .iter()
            .zip(mu)
            .zip(&phi)
            .map(|((&m, &x), &p)| m * x - p)
            .collect())
    }

    fn scaled_norm(&self, r: &[T]) -> T {
        r.iter().zip(&self.inv_mass).fold(T::zero(), |a, (&v, &im)| a.max((v * im).abs()))
    }

    /// Componentwise test `|g_k| ≤ m_k·tol + ρ_k`, where `ρ_k` bounds the
    /// rounding error of evaluating row `k` at `(u, μ)`; `u` inherits the
    /// rounding of `dt·M⁻¹𝓛μ`.
    fn is_converged(&self, u: &[T], mu: &[T], g: &[T]) -> bool {
        let tol = self.config.newton_tol;
        if self.scaled_norm(g) <= tol {
            return true;
        }
        let dt = self.config.dt;
        let lmu = self.op.laplacian().abs_mul_vec(mu);
        let w: Vec<T> = u
            .iter()
            .zip(&lmu)
            .zip(&self.inv_mass)
            .map(|((&a, &l), &im)| a.abs() + dt * im * l)
            .collect();
        let kw = self.k_delta.abs_mul_vec(&w);
        let ku = self.k_delta.mul_vec(u);
        let c = T::lit(ROUNDING_FACTOR) * T::epsilon();
        (0..g.len()).all(|k| {
            let m = self.op.mass()[k];
            let rest = (m * mu[k] - g[k] - ku[k]).abs();
            g[k].abs() <= m * tol + c * (kw[k] + (m * mu[k]).abs() + rest)
        })
    }

    /// `J = M + dt·(K_δ + D)·M⁻¹·𝓛` in band storage.
    fn factor_jacobian(&mut self, u: &[T], ctx: &StepContext<T>) -> Result<()> {
        let (_, slopes) = self.potential_functional(u, ctx, true)?;
        let n = u.len();
        let bw = 2 * self.op.laplacian().bandwidth();
        let mut band = BandMatrix::zeros(n, bw, bw);
        let dt = self.config.dt;
        let lap = self.op.laplacian();
        for i in 0..n {
            band.add(i, i, self.op.mass()[i]);
            let diag = std::iter::once((i, slopes[i]));
            for (k, a) in self.k_delta.row(i).chain(diag) {
                if a == T::zero() {
                    continue;
                }
                let s = dt * a * self.inv_mass[k];
                for (j, l) in lap.row(k) {
                    band.add(i, j, s * l);
                }
            }
        }
        self.jacobian = Some(band.factor()?);
        self.stale = false;
        Ok(())
    }

    /// Largest step in `[0, 1]` keeping `u + α·du` a fixed fraction away
    /// from the endpoints of unregularized graph domains.
    fn max_feasible_step(&self, u: &[T], du: &[T]) -> T {
        if self.config.lambda > T::zero() {
            return T::one();
        }
        let tau = T::lit(FRACTION_TO_BOUNDARY);
        let mut alpha = T::one();
        let mut limit = |graph: &MonotoneGraph<T>, k: usize| {
            let dom = graph.domain();
            if du[k] > T::zero() {
                if let Some(b) = finite(dom.upper) {
                    alpha = alpha.min(tau * (b - u[k]) / du[k]);
                }
            } else if du[k] < T::zero() {
                if let Some(a) = finite(dom.lower) {
                    alpha = alpha.min(tau * (a - u[k]) / du[k]);
                }
            }
        };
        for k in 0..u.len() {
            limit(&self.config.pair.bulk, k);
        }
        for &k in &self.boundary_nodes {
            limit(&self.config.pair.boundary, k);
        }
        alpha.max(T::zero())
    }

    /// Initial state: `μ₀` from the chemical-potential relation at `u₀`.
    pub fn initial_state(&self, u0: &CoupledField<T>) -> Result<SimState<T>> {
        u0.check_size(self.mesh())?;
        if !u0.is_trace_compatible(self.mesh()) {
            return Err(Error::NotTraceCompatible);
        }
        let mut ctx = self.context(&u0.bulk, T::zero())?;
        ctx.pi_explicit = None;
        let (phi, _) = self.potential_functional(&u0.bulk, &ctx, false)?;
        let mu: Vec<T> = phi.iter().zip(&self.inv_mass).map(|(&p, &im)| p * im).collect();
        Ok(SimState {
            t: T::zero(),
            u: u0.clone(),
            mu: CoupledField::from_nodal(self.mesh(), mu)?,
            xi: self.xi_of(u0)?,
        })
    }

    /// One implicit Euler step.
    pub fn step(&mut self, state: &SimState<T>) -> Result<(SimState<T>, StepStats<T>)> {
        let t = state.t + self.config.dt;
        let ctx = self.context(&state.u.bulk, t)?;
        let tol = self.config.newton_tol;
        let mut stats = StepStats::default();
        let mut mu = state.mu.bulk.clone();
        let mut u = self.u_from_mu(&ctx.prev_u, &mu);
        let mut g = match self.reduced_residual(&u, &mu, &ctx) {
            Ok(g) => g,
            Err(_) => {
                mu = vec![T::zero(); mu.len()];
                u = ctx.prev_u.clone();
                self.reduced_residual(&u, &mu, &ctx)?
            }
        };
        let mut res = self.scaled_norm(&g);
        let mut last_ratio = T::zero();
        let mut chord_iters = 0;
        while !self.is_converged(&u, &mu, &g) {
            if stats.newton_iters >= self.config.newton_max_iter || !res.is_finite() {
                self.stale = true;
                return Err(Error::NewtonDivergence {
                    iterations: stats.newton_iters,
                    residual: res.as_f64(),
                });
            }
            let fresh = self.stale
                || self.jacobian.is_none()
                || !self.config.reuse_jacobian
                || chord_iters >= MAX_CHORD_ITERS;
            if fresh {
                self.factor_jacobian(&u, &ctx)?;
                stats.factorizations += 1;
                chord_iters = 0;
            }
            chord_iters += 1;
            stats.newton_iters += 1;
            match self.line_search(&mu, &u, &g, res, &ctx) {
                Some((m, uu, gg, r)) => {
                    last_ratio = r / res;
                    if last_ratio > T::lit(CONTRACTION_TARGET) {
                        self.stale = true;
                    }
                    log::trace!(
                        "newton it {} residual {:e} ratio {:e} quadratic ratio {:e}",
                        stats.newton_iters,
                        r,
                        last_ratio,
                        r / (res * res)
                    );
                    mu = m;
                    u = uu;
                    g = gg;
                    res = r;
                }
                None if !fresh => self.stale = true,
                None => {
                    self.stale = true;
                    let kind = self.config.pair.bulk.kind();
                    return Err(if kind == GraphKind::Logarithmic && self.config.lambda == T::zero() {
                        Error::DomainEscape { graph: kind.name() }
                    } else {
                        Error::NewtonDivergence {
                            iterations: stats.newton_iters,
                            residual: res.as_f64(),
                        }
                    });
                }
            }
        }
        log::debug!(
            "t={} newton {} factorizations {} residual {:e} last ratio {:e}",
            t,
            stats.newton_iters,
            stats.factorizations,
            res,
            last_ratio
        );
        stats.residual = res;
        stats.rounding_limited = res > tol;
        let u = CoupledField::from_nodal(self.mesh(), u)?;
        let xi = self.xi_of(&u)?;
        let next = SimState {
            t,
            u,
            mu: CoupledField::from_nodal(self.mesh(), mu)?,
            xi,
        };
        Ok((next, stats))
    }

    /// Damped Newton update from the current factorization; `None` when no
    /// step length reduces the residual.
    #[allow(clippy::type_complexity)]
    fn line_search(
        &self,
        mu: &[T],
        u: &[T],
        g: &[T],
        res: T,
        ctx: &StepContext<T>,
    ) -> Option<(Vec<T>, Vec<T>, Vec<T>, T)> {
        let d = self.jacobian.as_ref()?.solve(g);
        let du: Vec<T> = self
            .op
            .laplacian()
            .mul_vec(&d)
            .iter()
            .zip(&self.inv_mass)
            .map(|(&l, &im)| self.config.dt * im * l)
            .collect();
        let mut alpha = self.max_feasible_step(u, &du);
        for _ in 0..MAX_BACKTRACKS {
            let mu_try: Vec<T> = mu.iter().zip(&d).map(|(&m, &x)| m - alpha * x).collect();
            let u_try: Vec<T> = u.iter().zip(&du).map(|(&a, &b)| a + alpha * b).collect();
            if let Ok(g_try) = self.reduced_residual(&u_try, &mu_try, ctx) {
                let r = self.scaled_norm(&g_try);
                if r < res || self.is_converged(&u_try, &mu_try, &g_try) {
                    return Some((mu_try, u_try, g_try, r));
                }
            }
            alpha = alpha * T::lit(0.5);
        }
        None
    }

    /// Stacked implicit-Euler residual `[R1; R2]` of `next` relative to `prev`.
    pub fn residual(&self, next: &SimState<T>, prev: &SimState<T>) -> Result<Vec<T>> {
        let mesh = self.mesh();
        for f in [&next.u, &next.mu, &prev.u] {
            f.check_size(mesh)?;
        }
        let ctx = self.context(&prev.u.bulk, next.t)?;
        let dt = next.t - prev.t;
        let lmu = self.op.laplacian().mul_vec(&next.mu.bulk);
        let r1 = self
            .op
            .mass()
            .iter()
            .zip(next.u.bulk.iter().zip(&prev.u.bulk))
            .zip(&lmu)
            .map(|((&m, (&a, &b)), &l)| m * (a - b) / dt + l);
        let r2 = self.reduced_residual(&next.u.bulk, &next.mu.bulk, &ctx)?;
        Ok(r1.chain(r2).collect())
    }

    /// Nodal residual of the boundary relation
    /// `μ_Γ = ∂_ν u − δΔ_Γ u_Γ + ξ_Γ + π_Γ − f_Γ`, with `∂_ν u` recovered from
    /// the bulk relation at the boundary node via the discrete Green identity.
    /// Perturbations are evaluated where the scheme evaluates them.
    pub fn boundary_relation_residual(&self, next: &SimState<T>, prev_u: &CoupledField<T>) -> Result<T> {
        let ctx = self.context(&prev_u.bulk, next.t)?;
        let f = self.config.source.eval(self.mesh(), next.t);
        let pair = &self.config.pair;
        let u = &next.u.bulk;
        let mu = &next.mu.bulk;
        let ku = self.op.bulk_stiffness().mul_vec(u);
        let kg = self.op.boundary_stiffness().mul_vec(u);
        let bulk_mass = self.op.bulk_mass();
        let mut worst = T::zero();
        for (b, (&k, &w)) in self
            .boundary_nodes
            .iter()
            .zip(self.mesh().boundary_weights())
            .enumerate()
        {
            let (pi_b, pi_g) = match &ctx.pi_explicit {
                Some((pb, pg)) => (pb[k], pg[b]),
                None => (pair.pi_bulk.value(u[k]), pair.pi_boundary.value(u[k])),
            };
            let xi = self.regularized(&pair.bulk, u[k])?.0;
            let xi_g = self.regularized(&pair.boundary, u[k])?.0;
            let minus_lap = mu[k] - xi - pi_b + f.bulk[k];
            let normal = (ku[k] - bulk_mass[k] * minus_lap) / w;
            let surface = self.config.delta * kg[k] / w;
            let r = mu[k] - (normal + surface + xi_g + pi_g - f.boundary[b]);
            worst = worst.max(r.abs());
        }
        Ok(worst)
    }

    pub fn diagnostics(&self, step: usize, state: &SimState<T>, stats: &StepStats<T>) -> Result<Diagnostics<T>> {
        let f = self.config.source.eval(self.mesh(), state.t);
        Ok(Diagnostics {
            step,
            t: state.t,
            mass: self.op.mean(&state.u)?,
            energy: self.op.energy(&state.u, &self.config.pair, self.config.delta, &f, self.config.lambda)?,
            grad_mu: self.op.norm(&state.mu, NormKind::V0)?,
            u_v_norm: self.op.norm(&state.u, NormKind::V)?,
            xi_h_norm: self.op.norm(&state.xi, NormKind::H)?,
            newton_iters: stats.newton_iters,
            residual: stats.residual,
        })
    }

    /// Runs to `t_final`, handing every state (initial state first) to `visit`.
    pub fn run_with<F>(&mut self, u0: &CoupledField<T>, mut visit: F) -> Result<()>
    where
        F: FnMut(&SimState<T>, &Diagnostics<T>) -> Result<()>,
    {
        let mut state = self.initial_state(u0)?;
        visit(&state, &self.diagnostics(0, &state, &StepStats::default())?)?;
        for n in 1..=self.config.steps() {
            let (next, stats) = self.step(&state)?;
            visit(&next, &self.diagnostics(n, &next, &stats)?)?;
            state = next;
        }
        Ok(())
    }

    pub fn run(&mut self, u0: &CoupledField<T>) -> Result<Trajectory<T>> {
        let mut states = Vec::new();
        let mut diagnostics = Vec::new();
        self.run_with(u0, |s, d| {
            states.push(s.clone());
            diagnostics.push(*d);
            Ok(())
        })?;
        Ok(Trajectory { states, diagnostics })
    }
}

fn finite<T: Copy>(b: Bound<T>) -> Option<T> {
    match b {
        Bound::Open(v) | Bound::Closed(v) => Some(v),
        Bound::Unbounded => None,
    }
}

/// Stacked residual of `next` against `prev` under `config`.
pub fn residual<T: Scalar>(next: &SimState<T>, prev: &SimState<T>, config: &SolverConfig<T>) -> Result<Vec<T>> {
    Solver::new(config.clone())?.residual(next, prev)
}

/// One step from `state` under `config`.
pub fn step<T: Scalar>(state: &SimState<T>, config: &SolverConfig<T>) -> Result<SimState<T>> {
    Ok(Solver::new(config.clone())?.step(state)?.0)
}

/// Full trajectory from `u0` under `config`.
pub fn run<T: Scalar>(config: &SolverConfig<T>, u0: &CoupledField<T>) -> Result<Trajectory<T>> {
    Solver::new(config.clone())?.run(u0)
}
