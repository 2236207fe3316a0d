//! Maximal monotone graphs on the real line, their resolvents and Yosida
//! regularizations, convex primitives, and the compatibility checks between a
//! bulk graph and a boundary graph.
//!
//! A graph is never materialized as a set. Consumers work with the minimal
//! section, the resolvent `(I + λβ)⁻¹` and the Yosida approximation
//! `β_λ = (I - (I + λβ)⁻¹) / λ`, which are single valued for every `λ > 0`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Half-width of the sampling window used for unbounded domains.
pub const SAMPLE_RADIUS: f64 = 10.0;

const MAX_SCALAR_ITER: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bound<T> {
    Unbounded,
    Open(T),
    Closed(T),
}

/// An interval of the real line, used for effective domains `D(β)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval<T> {
    pub lower: Bound<T>,
    pub upper: Bound<T>,
}

impl<T: Scalar> Interval<T> {
    pub fn real_line() -> Self {
        Interval {
            lower: Bound::Unbounded,
            upper: Bound::Unbounded,
        }
    }

    pub fn open(a: T, b: T) -> Self {
        Interval {
            lower: Bound::Open(a),
            upper: Bound::Open(b),
        }
    }

    pub fn closed(a: T, b: T) -> Self {
        Interval {
            lower: Bound::Closed(a),
            upper: Bound::Closed(b),
        }
    }

    pub fn contains(&self, r: T) -> bool {
        let above = match self.lower {
            Bound::Unbounded => true,
            Bound::Open(a) => r > a,
            Bound::Closed(a) => r >= a,
        };
        let below = match self.upper {
            Bound::Unbounded => true,
            Bound::Open(b) => r < b,
            Bound::Closed(b) => r <= b,
        };
        above && below && !r.is_nan()
    }

    pub fn interior_contains(&self, r: T) -> bool {
        let above = match self.lower {
            Bound::Unbounded => true,
            Bound::Open(a) | Bound::Closed(a) => r > a,
        };
        let below = match self.upper {
            Bound::Unbounded => true,
            Bound::Open(b) | Bound::Closed(b) => r < b,
        };
        above && below && !r.is_nan()
    }

    pub fn closure_contains(&self, r: T) -> bool {
        let above = match self.lower {
            Bound::Unbounded => true,
            Bound::Open(a) | Bound::Closed(a) => r >= a,
        };
        let below = match self.upper {
            Bound::Unbounded => true,
            Bound::Open(b) | Bound::Closed(b) => r <= b,
        };
        above && below && !r.is_nan()
    }

    /// Set inclusion `self ⊆ other`.
    pub fn is_subset_of(&self, other: &Interval<T>) -> bool {
        let lower_ok = match (self.lower, other.lower) {
            (_, Bound::Unbounded) => true,
            (Bound::Unbounded, _) => false,
            (Bound::Closed(a), Bound::Closed(b)) => a >= b,
            (Bound::Closed(a), Bound::Open(b)) => a > b,
            (Bound::Open(a), Bound::Closed(b)) | (Bound::Open(a), Bound::Open(b)) => a >= b,
        };
        let upper_ok = match (self.upper, other.upper) {
            (_, Bound::Unbounded) => true,
            (Bound::Unbounded, _) => false,
            (Bound::Closed(a), Bound::Closed(b)) => a <= b,
            (Bound::Closed(a), Bound::Open(b)) => a < b,
            (Bound::Open(a), Bound::Closed(b)) | (Bound::Open(a), Bound::Open(b)) => a <= b,
        };
        lower_ok && upper_ok
    }

    /// `count` equispaced points strictly inside the (possibly truncated)
    /// interval, plus any closed endpoints.
    pub fn sample(&self, count: usize) -> Vec<T> {
        let radius = T::lit(SAMPLE_RADIUS);
        let (lo, lo_closed) = match self.lower {
            Bound::Unbounded => (-radius, true),
            Bound::Open(a) => (a, false),
            Bound::Closed(a) => (a, true),
        };
        let (hi, hi_closed) = match self.upper {
            Bound::Unbounded => (radius, true),
            Bound::Open(b) => (b, false),
            Bound::Closed(b) => (b, true),
        };
        let mut out = Vec::with_capacity(count + 2);
        if lo_closed {
            out.push(lo);
        }
        let denom = T::count(count + 1);
        for i in 0..count {
            out.push(lo + (hi - lo) * T::count(i + 1) / denom);
        }
        if hi_closed && hi > lo {
            out.push(hi);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GraphKind {
    Cubic,
    Logarithmic,
    Obstacle,
    Linear,
    Zero,
    Custom,
}

impl GraphKind {
    pub fn name(self) -> &'static str {
        match self {
            GraphKind::Cubic => "cubic",
            GraphKind::Logarithmic => "logarithmic",
            GraphKind::Obstacle => "obstacle",
            GraphKind::Linear => "linear",
            GraphKind::Zero => "zero",
            GraphKind::Custom => "custom",
        }
    }
}

/// A user-supplied single-valued, continuous, nondecreasing graph with `β(0) = 0`.
pub trait CustomGraph<T>: Send + Sync {
    fn domain(&self) -> Interval<T>;
    fn value(&self, r: T) -> T;
    /// Convex primitive, zero at the origin.
    fn primitive(&self, r: T) -> T;
}

/// Maximal monotone graph `β = ∂β̂` with `0 ∈ β(0)` and `β̂(0) = 0`.
#[derive(Clone)]
pub enum MonotoneGraph<T> {
    /// `β(r) = r³`.
    Cubic,
    /// `β(r) = ln((1 + r) / (1 - r))` on `(-1, 1)`.
    Logarithmic,
    /// Subdifferential of the indicator of `[-1, 1]`.
    Obstacle,
    /// `β(r) = slope · r`, `slope ≥ 0`.
    Linear { slope: T },
    Zero,
    Custom(Arc<dyn CustomGraph<T>>),
}

impl<T: fmt::Debug> fmt::Debug for MonotoneGraph<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MonotoneGraph::Cubic => f.write_str("Cubic"),
            MonotoneGraph::Logarithmic => f.write_str("Logarithmic"),
            MonotoneGraph::Obstacle => f.write_str("Obstacle"),
            MonotoneGraph::Linear { slope } => write!(f, "Linear {{ slope: {slope:?} }}"),
            MonotoneGraph::Zero => f.write_str("Zero"),
            MonotoneGraph::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl<T: Scalar> MonotoneGraph<T> {
    pub fn kind(&self) -> GraphKind {
        match self {
            MonotoneGraph::Cubic => GraphKind::Cubic,
            MonotoneGraph::Logarithmic => GraphKind::Logarithmic,
            MonotoneGraph::Obstacle => GraphKind::Obstacle,
            MonotoneGraph::Linear { .. } => GraphKind::Linear,
            MonotoneGraph::Zero => GraphKind::Zero,
            MonotoneGraph::Custom(_) => GraphKind::Custom,
        }
    }

    pub fn linear(slope: T) -> Self {
        assert!(slope >= T::zero(), "linear graph needs a nonnegative slope");
        MonotoneGraph::Linear { slope }
    }

    /// Effective domain `D(β)`.
    pub fn domain(&self) -> Interval<T> {
        match self {
            MonotoneGraph::Logarithmic => Interval::open(-T::one(), T::one()),
            MonotoneGraph::Obstacle => Interval::closed(-T::one(), T::one()),
            MonotoneGraph::Custom(g) => g.domain(),
            _ => Interval::real_line(),
        }
    }

    /// True when `β(r)` contains more than one point for some `r`.
    pub fn is_multivalued(&self) -> bool {
        matches!(self, MonotoneGraph::Obstacle)
    }

    fn domain_error(&self, r: T) -> Error {
        Error::DomainViolation {
            graph: self.kind().name(),
            value: r.as_f64(),
        }
    }

    /// Minimal section `β°(r)`: the element of `β(r)` of least modulus.
    pub fn min_section(&self, r: T) -> Result<T> {
        if !self.domain().contains(r) {
            return Err(self.domain_error(r));
        }
        Ok(match self {
            MonotoneGraph::Cubic => r * r * r,
            MonotoneGraph::Logarithmic => ((T::one() + r) / (T::one() - r)).ln(),
            MonotoneGraph::Obstacle | MonotoneGraph::Zero => T::zero(),
            MonotoneGraph::Linear { slope } => *slope * r,
            MonotoneGraph::Custom(g) => g.value(r),
        })
    }

    /// Derivative of a single-valued graph at `r`; zero in the interior of
    /// the obstacle constraint.
    fn slope_at(&self, r: T) -> Result<T> {
        if !self.domain().contains(r) {
            return Err(self.domain_error(r));
        }
        Ok(match self {
            MonotoneGraph::Cubic => T::lit(3.0) * r * r,
            MonotoneGraph::Logarithmic => T::lit(2.0) / (T::one() - r * r),
            MonotoneGraph::Obstacle | MonotoneGraph::Zero => T::zero(),
            MonotoneGraph::Linear { slope } => *slope,
            MonotoneGraph::Custom(g) => {
                let h = T::lit(1e-6);
                let dom = g.domain();
                let (a, b) = (r - h, r + h);
                if dom.contains(a) && dom.contains(b) {
                    (g.value(b) - g.value(a)) / (h + h)
                } else if dom.contains(b) {
                    (g.value(b) - g.value(r)) / h
                } else {
                    (g.value(r) - g.value(a)) / h
                }
            }
        })
    }

    /// Convex primitive `β̂(r)`, `+∞` outside the closure of the domain.
    pub fn primitive(&self, r: T) -> T {
        let one = T::one();
        match self {
            MonotoneGraph::Cubic => r * r * r * r / T::lit(4.0),
            MonotoneGraph::Logarithmic => {
                if r.abs() > one || r.is_nan() {
                    return T::infinity();
                }
                let xlogx = |x: T| if x > T::zero() { x * x.ln() } else { T::zero() };
                xlogx(one + r) + xlogx(one - r)
            }
            MonotoneGraph::Obstacle => {
                if r.abs() <= one {
                    T::zero()
                } else {
                    T::infinity()
                }
            }
            MonotoneGraph::Linear { slope } => *slope * r * r / T::lit(2.0),
            MonotoneGraph::Zero => T::zero(),
            MonotoneGraph::Custom(g) => {
                if g.domain().closure_contains(r) {
                    g.primitive(r)
                } else {
                    T::infinity()
                }
            }
        }
    }

    /// Resolvent `(I + λβ)⁻¹ r`.
    pub fn resolvent(&self, lambda: T, r: T) -> Result<T> {
        assert!(lambda > T::zero(), "resolvent needs lambda > 0");
        match self {
            MonotoneGraph::Cubic => resolve_scalar(
                |x| (x + lambda * x * x * x - r, T::one() + T::lit(3.0) * lambda * x * x),
                r / (T::one() + T::lit(3.0) * lambda * r * r),
                r.min(T::zero()),
                r.max(T::zero()),
                r,
            ),
            MonotoneGraph::Logarithmic => {
                let y = log_yosida(lambda, r)?;
                Ok((y / T::lit(2.0)).tanh())
            }
            MonotoneGraph::Obstacle => Ok(r.max(-T::one()).min(T::one())),
            MonotoneGraph::Linear { slope } => Ok(r / (T::one() + lambda * *slope)),
            MonotoneGraph::Zero => Ok(r),
            MonotoneGraph::Custom(g) => {
                let dom = g.domain();
                let mut lo = r.min(T::zero());
                let mut hi = r.max(T::zero());
                // pull the bracket inside the domain; the root lies strictly inside
                let shrink = |x: T, toward: T| {
                    let mut x = x;
                    let mut step = T::lit(0.5);
                    while !dom.contains(x) {
                        x = toward + (x - toward) * (T::one() - step);
                        step = step * T::lit(0.5);
                        if step < T::epsilon() {
                            break;
                        }
                    }
                    x
                };
                lo = shrink(lo, T::zero());
                hi = shrink(hi, T::zero());
                let graph = self.clone();
                resolve_scalar(
                    move |x| {
                        let v = g.value(x);
                        let d = graph.slope_at(x).unwrap_or(T::zero());
                        (x + lambda * v - r, T::one() + lambda * d)
                    },
                    (lo + hi) / T::lit(2.0),
                    lo,
                    hi,
                    r,
                )
            }
        }
    }

    /// Yosida approximation `β_λ(r) = (r - (I + λβ)⁻¹ r) / λ`.
    pub fn yosida(&self, lambda: T, r: T) -> Result<T> {
        match self {
            // solved directly in the image variable, which stays finite
            // where the resolvent is indistinguishable from ±1
            MonotoneGraph::Logarithmic => log_yosida(lambda, r),
            _ => Ok((r - self.resolvent(lambda, r)?) / lambda),
        }
    }

    /// Value and derivative of the single-valued surrogate used by the
    /// solver: `β_λ` for `λ > 0`, the graph itself for `λ = 0`.
    pub fn regularized(&self, lambda: T, r: T) -> Result<(T, T)> {
        if lambda <= T::zero() {
            return Ok((self.min_section(r)?, self.slope_at(r)?));
        }
        let one = T::one();
        match self {
            MonotoneGraph::Cubic => {
                let x = self.resolvent(lambda, r)?;
                let d = T::lit(3.0) * x * x;
                Ok(((r - x) / lambda, d / (one + lambda * d)))
            }
            MonotoneGraph::Logarithmic => {
                let y = log_yosida(lambda, r)?;
                let sech2 = one / (y / T::lit(2.0)).cosh().powi(2);
                Ok((y, one / (lambda + sech2 / T::lit(2.0))))
            }
            MonotoneGraph::Obstacle => {
                let v = self.yosida(lambda, r)?;
                let d = if r.abs() > one { one / lambda } else { T::zero() };
                Ok((v, d))
            }
            MonotoneGraph::Linear { slope } => {
                let den = one + lambda * *slope;
                Ok((*slope * r / den, *slope / den))
            }
            MonotoneGraph::Zero => Ok((T::zero(), T::zero())),
            MonotoneGraph::Custom(_) => {
                let h = T::lit(1e-6);
                let v = self.yosida(lambda, r)?;
                let d = (self.yosida(lambda, r + h)? - self.yosida(lambda, r - h)?) / (h + h);
                Ok((v, d))
            }
        }
    }

    /// Primitive of the solver surrogate: the Moreau envelope
    /// `β̂(J_λ r) + λ/2 · β_λ(r)²` for `λ > 0`, `β̂` itself for `λ = 0`.
    pub fn regularized_primitive(&self, lambda: T, r: T) -> Result<T> {
        if lambda <= T::zero() {
            return Ok(self.primitive(r));
        }
        let x = self.resolvent(lambda, r)?;
        let v = self.yosida(lambda, r)?;
        Ok(self.primitive(x) + lambda * v * v / T::lit(2.0))
    }
}

/// Solves `tanh(y/2) + λy = r` for `y = β_λ(r)` of the logarithmic graph.
fn log_yosida<T: Scalar>(lambda: T, r: T) -> Result<T> {
    assert!(lambda > T::zero(), "yosida needs lambda > 0");
    let half = T::lit(0.5);
    let (lo, hi) = if r >= T::zero() {
        (T::zero(), r / lambda)
    } else {
        (r / lambda, T::zero())
    };
    let guess = r / (lambda + half);
    let guess = guess.max(lo).min(hi);
    resolve_scalar(
        |y| {
            let t = (y * half).tanh();
            (t + lambda * y - r, half * (T::one() - t * t) + lambda)
        },
        guess,
        lo,
        hi,
        r,
    )
}

/// Safeguarded Newton/bisection for an increasing scalar function whose root
/// is bracketed by `[lo, hi]`.
fn resolve_scalar<T, F>(f: F, guess: T, mut lo: T, mut hi: T, scale: T) -> Result<T>
where
    T: Scalar,
    F: Fn(T) -> (T, T),
{
    let tol = T::lit(1e-12).max(T::epsilon() * T::lit(16.0)) * (T::one() + scale.abs());
    let mut x = guess;
    let mut last = T::infinity();
    for _ in 0..MAX_SCALAR_ITER {
        let (g, dg) = f(x);
        last = g.abs();
        if last <= tol {
            // one polishing Newton step
            let polished = x - g / dg;
            let ok = dg > T::zero() && polished.is_finite() && f(polished).0.abs() <= last;
            return Ok(if ok { polished } else { x });
        }
        if g > T::zero() {
            hi = x;
        } else {
            lo = x;
        }
        let newton = x - g / dg;
        x = if dg > T::zero() && newton > lo && newton < hi {
            newton
        } else {
            (lo + hi) * T::lit(0.5)
        };
        if hi - lo <= T::epsilon() * (T::one() + x.abs()) {
            // bracket collapsed to machine resolution
            return Ok(x);
        }
    }
    Err(Error::Nonconvergence {
        what: "scalar resolvent",
        iterations: MAX_SCALAR_ITER,
        residual: last.as_f64(),
    })
}

/// Lipschitz perturbation `π(r) = slope · r` (the anti-monotone part of `F'`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Perturbation<T> {
    pub slope: T,
}

impl<T: Scalar> Perturbation<T> {
    pub fn linear(slope: T) -> Self {
        Perturbation { slope }
    }

    pub fn zero() -> Self {
        Perturbation { slope: T::zero() }
    }

    #[inline]
    pub fn value(&self, r: T) -> T {
        self.slope * r
    }

    #[inline]
    pub fn derivative(&self, _r: T) -> T {
        self.slope
    }

    /// `π̂(r) = ∫₀ʳ π`.
    #[inline]
    pub fn primitive(&self, r: T) -> T {
        self.slope * r * r / T::lit(2.0)
    }

    pub fn lipschitz(&self) -> T {
        self.slope.abs()
    }

    /// True when `π̂` is concave, so that the convex-splitting scheme can treat
    /// it explicitly without losing energy decay.
    pub fn is_antimonotone(&self) -> bool {
        self.slope <= T::zero()
    }
}

/// Bulk and boundary nonlinearities: `F' = β + π` in the bulk and
/// `F_Γ' = β_Γ + π_Γ` on the boundary, with domination constant `M`.
#[derive(Clone, Debug)]
pub struct PotentialPair<T> {
    pub bulk: MonotoneGraph<T>,
    pub boundary: MonotoneGraph<T>,
    pub pi_bulk: Perturbation<T>,
    pub pi_boundary: Perturbation<T>,
    pub domination: T,
}

impl<T: Scalar> PotentialPair<T> {
    pub fn new(
        bulk: MonotoneGraph<T>,
        boundary: MonotoneGraph<T>,
        pi_bulk: Perturbation<T>,
        pi_boundary: Perturbation<T>,
        domination: T,
    ) -> Self {
        PotentialPair {
            bulk,
            boundary,
            pi_bulk,
            pi_boundary,
            domination,
        }
    }

    /// `F(r) = (r² - 1)² / 4` on both sides: `β = r³`, `π = -r`.
    pub fn regular() -> Self {
        let pi = Perturbation::linear(-T::one());
        Self::new(MonotoneGraph::Cubic, MonotoneGraph::Cubic, pi, pi, T::one())
    }

    /// Logarithmic potential on both sides with `π(r) = -2 c1 r`.
    pub fn logarithmic(c1: T) -> Self {
        let pi = Perturbation::linear(-T::lit(2.0) * c1);
        Self::new(
            MonotoneGraph::Logarithmic,
            MonotoneGraph::Logarithmic,
            pi,
            pi,
            T::one(),
        )
    }

    /// Double obstacle potential on both sides with `π(r) = -2 c2 r`.
    pub fn obstacle(c2: T) -> Self {
        let pi = Perturbation::linear(-T::lit(2.0) * c2);
        Self::new(
            MonotoneGraph::Obstacle,
            MonotoneGraph::Obstacle,
            pi,
            pi,
            T::one(),
        )
    }

    pub fn has_multivalued_graph(&self) -> bool {
        self.bulk.is_multivalued() || self.boundary.is_multivalued()
    }
}

/// One sampled point of a domination check: `lhs ≤ rhs` is required.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DominationSample<T> {
    pub r: T,
    pub lhs: T,
    pub rhs: T,
}

impl<T: Scalar> DominationSample<T> {
    pub fn slack(&self) -> T {
        self.rhs - self.lhs
    }
}

#[derive(Clone, Debug)]
pub struct PairReport<T> {
    /// `D(β_Γ) ⊆ D(β)`.
    pub domain_inclusion: bool,
    /// `|β°| ≤ M (1 + |β_Γ°|)` at every sample of `D(β_Γ)`.
    pub domination: bool,
    /// Sample with the least slack in the domination inequality.
    pub worst: Option<DominationSample<T>>,
    /// Equal domains and `|β_Γ°|/M - M ≤ |β°| ≤ M (|β_Γ°| + 1)` everywhere sampled.
    pub same_growth: bool,
    /// Sample with the least slack in the lower same-growth inequality.
    pub same_growth_worst: Option<DominationSample<T>>,
    pub samples: usize,
}

impl<T: Scalar> PairReport<T> {
    pub fn passed(&self) -> bool {
        self.domain_inclusion && self.domination
    }
}

/// Checks the domain inclusion and growth domination between the bulk and
/// boundary graphs on `sample_count` interior samples of `D(β_Γ)`.
pub fn validate_pair<T: Scalar>(pair: &PotentialPair<T>, sample_count: usize) -> PairReport<T> {
    assert!(sample_count >= 2, "validate_pair needs at least two samples");
    let m = pair.domination;
    let dom_bulk = pair.bulk.domain();
    let dom_bnd = pair.boundary.domain();
    let domain_inclusion = dom_bnd.is_subset_of(&dom_bulk);
    let mut domination = domain_inclusion;
    let mut worst: Option<DominationSample<T>> = None;
    let mut same_growth = dom_bnd == dom_bulk;
    let mut sg_worst: Option<DominationSample<T>> = None;
    let samples = dom_bnd.sample(sample_count);
    for &r in &samples {
        let b_bnd = match pair.boundary.min_section(r) {
            Ok(v) => v.abs(),
            Err(_) => continue,
        };
        let b_bulk = match pair.bulk.min_section(r) {
            Ok(v) => v.abs(),
            Err(_) => {
                domination = false;
                same_growth = false;
                continue;
            }
        };
        let upper = DominationSample {
            r,
            lhs: b_bulk,
            rhs: m * (T::one() + b_bnd),
        };
        if upper.slack() < T::zero() {
            domination = false;
            same_growth = false;
        }
        if worst.map_or(true, |w| upper.slack() < w.slack()) {
            worst = Some(upper);
        }
        let lower = DominationSample {
            r,
            lhs: b_bnd / m - m,
            rhs: b_bulk,
        };
        if lower.slack() < T::zero() {
            same_growth = false;
        }
        if sg_worst.map_or(true, |w| lower.slack() < w.slack()) {
            sg_worst = Some(lower);
        }
    }
    PairReport {
        domain_inclusion,
        domination,
        worst,
        same_growth,
        same_growth_worst: sg_worst,
        samples: samples.len(),
    }
}
