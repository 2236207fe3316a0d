//! Initial-condition generators and the elliptic regularization of initial
//! data for `δ > 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{trace, CoupledField, StripMesh};
use crate::graphs::{Bound, MonotoneGraph, PotentialPair};
use crate::linalg::BandMatrix;
use crate::operators::CoupledOperator;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProfileKind {
    Constant,
    /// `tanh(cos(2πx/Lx)/width)`: two smooth interfaces across the strip.
    TanhStripe,
    /// `cos(2πkx/Lx)·cos(πy/Ly)` with `k = modes`.
    Cosine,
    /// Seeded random combination of low Fourier modes.
    RandomSmooth,
}

impl ProfileKind {
    pub fn name(self) -> &'static str {
        match self {
            ProfileKind::Constant => "constant",
            ProfileKind::TanhStripe => "tanh_stripe",
            ProfileKind::Cosine => "cosine",
            ProfileKind::RandomSmooth => "random_smooth",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfileSpec<T> {
    pub kind: ProfileKind,
    /// Generalized mean of the generated field before clamping.
    pub mean: T,
    pub amplitude: T,
    pub width: T,
    pub modes: usize,
    pub seed: u64,
    /// Distance kept from finite endpoints of graph domains.
    pub margin: T,
}

impl<T: Scalar> ProfileSpec<T> {
    pub fn constant(c: T) -> Self {
        ProfileSpec {
            kind: ProfileKind::Constant,
            mean: c,
            amplitude: T::zero(),
            width: T::lit(0.1),
            modes: 1,
            seed: 0,
            margin: T::lit(0.05),
        }
    }

    pub fn tanh_stripe(mean: T, amplitude: T, width: T) -> Self {
        ProfileSpec {
            kind: ProfileKind::TanhStripe,
            amplitude,
            width,
            ..Self::constant(mean)
        }
    }

    pub fn cosine(mean: T, amplitude: T, modes: usize) -> Self {
        ProfileSpec {
            kind: ProfileKind::Cosine,
            amplitude,
            modes,
            ..Self::constant(mean)
        }
    }

    pub fn random_smooth(mean: T, amplitude: T, modes: usize, seed: u64) -> Self {
        ProfileSpec {
            kind: ProfileKind::RandomSmooth,
            amplitude,
            modes,
            seed,
            ..Self::constant(mean)
        }
    }
}

/// Samples `spec` on `mesh`, clamps into the graph domains of `pair` (shrunk
/// by the margin) and checks that every nodal value has a finite graph value.
pub fn generate<T: Scalar>(
    mesh: &StripMesh<T>,
    spec: &ProfileSpec<T>,
    pair: &PotentialPair<T>,
) -> Result<CoupledField<T>> {
    if !(spec.width > T::zero()) || spec.modes == 0 || !(spec.margin >= T::zero()) {
        return Err(Error::InadmissibleProfile(
            "width and modes must be positive, margin nonnegative".into(),
        ));
    }
    let two_pi = T::PI() + T::PI();
    let (lx, ly) = (mesh.lx(), mesh.ly());
    let shape = match spec.kind {
        ProfileKind::Constant => CoupledField::zeros(mesh),
        ProfileKind::TanhStripe => {
            CoupledField::from_fn(mesh, |x, _| ((two_pi * x / lx).cos() / spec.width).tanh())
        }
        ProfileKind::Cosine => {
            let k = T::count(spec.modes);
            CoupledField::from_fn(mesh, |x, y| (two_pi * k * x / lx).cos() * (T::PI() * y / ly).cos())
        }
        ProfileKind::RandomSmooth => random_modes(mesh, spec.modes, spec.seed),
    };
    let mut field = if spec.kind == ProfileKind::Constant {
        CoupledField::constant(mesh, spec.mean)
    } else {
        let peak = shape.max_abs();
        let scaled = if peak > T::zero() {
            shape.scale(spec.amplitude / peak)
        } else {
            shape
        };
        let m = crate::operators::mean(mesh, &scaled)?;
        scaled.map(|v| v - m + spec.mean)
    };
    let (lo, hi) = clamp_bounds(pair, spec.margin);
    field = field.map(|v| v.max(lo).min(hi));
    check_admissible(&field, pair)?;
    Ok(field)
}

fn random_modes<T: Scalar>(mesh: &StripMesh<T>, modes: usize, seed: u64) -> CoupledField<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut terms = Vec::new();
    for kx in 0..=modes {
        for ky in 0..=modes {
            if kx == 0 && ky == 0 {
                continue;
            }
            let decay = 1.0 / (1.0 + (kx * kx + ky * ky) as f64);
            let a: f64 = rng.gen_range(-1.0..1.0) * decay;
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            terms.push((T::count(kx), T::count(ky), T::lit(a), T::lit(phase)));
        }
    }
    let two_pi = T::PI() + T::PI();
    let (lx, ly) = (mesh.lx(), mesh.ly());
    CoupledField::from_fn(mesh, |x, y| {
        terms.iter().fold(T::zero(), |acc, &(kx, ky, a, p)| {
            acc + a * (two_pi * kx * x / lx + p).cos() * (T::PI() * ky * y / ly).cos()
        })
    })
}

fn clamp_bounds<T: Scalar>(pair: &PotentialPair<T>, margin: T) -> (T, T) {
    let mut lo = T::neg_infinity();
    let mut hi = T::infinity();
    for g in [&pair.bulk, &pair.boundary] {
        let d = g.domain();
        if let Bound::Open(a) | Bound::Closed(a) = d.lower {
            lo = lo.max(a + margin);
        }
        if let Bound::Open(b) | Bound::Closed(b) = d.upper {
            hi = hi.min(b - margin);
        }
    }
    (lo, hi)
}

fn check_admissible<T: Scalar>(field: &CoupledField<T>, pair: &PotentialPair<T>) -> Result<()> {
    let check = |g: &MonotoneGraph<T>, values: &[T]| -> Result<()> {
        for &v in values {
            if !v.is_finite() || !g.domain().contains(v) || !g.primitive(v).is_finite() {
                return Err(Error::InadmissibleProfile(format!(
                    "value {v} outside the domain of the {} graph",
                    g.kind().name()
                )));
            }
        }
        Ok(())
    };
    check(&pair.bulk, &field.bulk)?;
    check(&pair.boundary, &field.boundary)
}

/// Solves `u − δΔu = u₀` in the bulk with `−∂_ν u = β_{Γ,λ}(u)` on the
/// boundary, discretized as
/// `M_Ω u + δK_Ω u + δ M_Γ β_{Γ,λ}(u) = M_Ω u₀`.
/// Only the bulk part of `u0` is used; the result is trace-compatible.
pub fn prepare_initial_data<T: Scalar>(
    mesh: &StripMesh<T>,
    u0: &CoupledField<T>,
    delta: T,
    boundary_graph: &MonotoneGraph<T>,
    lambda: T,
) -> Result<CoupledField<T>> {
    let op = CoupledOperator::new(mesh);
    prepare_with_operator(&op, u0, delta, boundary_graph, lambda)
}

pub(crate) fn prepare_with_operator<T: Scalar>(
    op: &CoupledOperator<T>,
    u0: &CoupledField<T>,
    delta: T,
    boundary_graph: &MonotoneGraph<T>,
    lambda: T,
) -> Result<CoupledField<T>> {
    let mesh = op.mesh();
    u0.check_size(mesh)?;
    if !(delta > T::zero()) {
        return Err(Error::InvalidConfig(format!("delta must be positive, got {delta}")));
    }
    if lambda == T::zero() && boundary_graph.is_multivalued() {
        return Err(Error::InvalidConfig("a multivalued graph requires lambda > 0".into()));
    }
    let n = mesh.bulk_len();
    let bulk_mass = op.bulk_mass();
    let boundary_mass = op.boundary_mass();
    let rhs: Vec<T> = bulk_mass.iter().zip(&u0.bulk).map(|(&m, &v)| m * v).collect();
    let stiffness = op.bulk_stiffness();
    let residual = |u: &[T]| -> Result<(Vec<T>, Vec<T>)> {
        let ku = stiffness.mul_vec(u);
        let mut r = Vec::with_capacity(n);
        let mut slopes = vec![T::zero(); n];
        for k in 0..n {
            let mut v = bulk_mass[k] * u[k] + delta * ku[k] - rhs[k];
            if boundary_mass[k] > T::zero() {
                let (b, db) = boundary_graph.regularized(lambda, u[k])?;
                v = v + delta * boundary_mass[k] * b;
                slopes[k] = delta * boundary_mass[k] * db;
            }
            r.push(v);
        }
        Ok((r, slopes))
    };
    let scale = |r: &[T]| {
        r.iter()
            .zip(bulk_mass)
            .zip(boundary_mass)
            .fold(T::zero(), |a, ((&v, &m), &g)| a.max((v / (m + g)).abs()))
    };
    let tol = T::lit(1e-12).max(T::epsilon() * T::lit(1e3));
    let dom = boundary_graph.domain();
    let mut u: Vec<T> = (0..n)
        .map(|k| {
            let v = u0.bulk[k];
            if boundary_mass[k] > T::zero() && !dom.interior_contains(v) {
                T::zero()
            } else {
                v
            }
        })
        .collect();
    let (mut r, mut slopes) = residual(&u)?;
    let mut res = scale(&r);
    let bw = stiffness.bandwidth();
    let max_iter = 100;
    for _ in 0..max_iter {
        if res <= tol {
            let bulk = u;
            let boundary = trace(mesh, &bulk)?;
            log_energy_bound(op, u0, &bulk, &boundary, boundary_graph, lambda);
            return Ok(CoupledField { bulk, boundary });
        }
        let mut band = BandMatrix::zeros(n, bw, bw);
        for i in 0..n {
            band.add(i, i, bulk_mass[i] + slopes[i]);
            for (j, v) in stiffness.row(i) {
                band.add(i, j, delta * v);
            }
        }
        let d = band.factor()?.solve(&r);
        let mut alpha = T::one();
        if lambda == T::zero() {
            for k in 0..n {
                if boundary_mass[k] == T::zero() || d[k] == T::zero() {
                    continue;
                }
                let target = if d[k] < T::zero() { dom.upper } else { dom.lower };
                if let Bound::Open(b) | Bound::Closed(b) = target {
                    alpha = alpha.min(T::lit(0.99) * (u[k] - b) / d[k]);
                }
            }
        }
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<T> = u.iter().zip(&d).map(|(&a, &b)| a - alpha * b).collect();
            if let Ok((rt, st)) = residual(&trial) {
                let rn = scale(&rt);
                if rn < res || rn <= tol {
                    u = trial;
                    r = rt;
                    slopes = st;
                    res = rn;
                    accepted = true;
                    break;
                }
            }
            alpha = alpha * T::lit(0.5);
        }
        if !accepted {
            break;
        }
    }
    Err(Error::NewtonDivergence {
        iterations: max_iter,
        residual: res.as_f64(),
    })
}

/// Logs both sides of the energy comparison with `u₀`:
/// `‖∇u‖² ≤ ‖∇u₀‖² + 2∫_Γ β̂_Γ(u₀)`.
fn log_energy_bound<T: Scalar>(
    op: &CoupledOperator<T>,
    u0: &CoupledField<T>,
    bulk: &[T],
    _boundary: &[T],
    graph: &MonotoneGraph<T>,
    lambda: T,
) {
    if !log::log_enabled!(log::Level::Debug) {
        return;
    }
    let lhs = op.bulk_stiffness().quadratic_form(bulk);
    let slack: T = op
        .mesh()
        .boundary_nodes()
        .iter()
        .zip(op.mesh().boundary_weights())
        .map(|(&k, &w)| w * graph.regularized_primitive(lambda, u0.bulk[k]).unwrap_or(T::infinity()))
        .sum();
    let rhs = op.bulk_stiffness().quadratic_form(&u0.bulk) + slack + slack;
    log::debug!("prepared data gradient {lhs:e} bound {rhs:e}");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::NormKind;

    /// Ghost-point finite differences for `u − δu″ = 1`, `u′(0) = u(0)`,
    /// `−u′(L) = u(L)`, solved with the Thomas algorithm.
    fn ghost_point_oracle(ny: usize, ly: f64, delta: f64) -> Vec<f64> {
        let h = ly / (ny - 1) as f64;
        let c = delta / (h * h);
        let mut a = vec![-c; ny];
        let mut b = vec![1.0 + 2.0 * c; ny];
        let mut cc = vec![-c; ny];
        let mut d = vec![1.0; ny];
        // ghost u₋₁ = u₁ − 2h·u₀ and u_{N} = u_{N−2} − 2h·u_{N−1}
        b[0] += 2.0 * c * h;
        cc[0] = -2.0 * c;
        b[ny - 1] += 2.0 * c * h;
        a[ny - 1] = -2.0 * c;
        for i in 1..ny {
            let w = a[i] / b[i - 1];
            b[i] -= w * cc[i - 1];
            d[i] -= w * d[i - 1];
        }
        let mut x = vec![0.0; ny];
        x[ny - 1] = d[ny - 1] / b[ny - 1];
        for i in (0..ny - 1).rev() {
            x[i] = (d[i] - cc[i] * x[i + 1]) / b[i];
        }
        x
    }

    fn analytic(y: f64, ly: f64, delta: f64) -> f64 {
        let s = 1.0 / delta.sqrt();
        let c = ly / 2.0;
        let a = -1.0 / ((c * s).cosh() + s * (c * s).sinh());
        1.0 + a * ((y - c) * s).cosh()
    }

    #[test]
    fn zero_data_gives_zero() {
        let mesh = StripMesh::<f64>::new(8, 9, 1.0, 1.0).unwrap();
        let z = CoupledField::zeros(&mesh);
        for g in [MonotoneGraph::Cubic, MonotoneGraph::Logarithmic, MonotoneGraph::linear(1.0)] {
            let u = prepare_initial_data(&mesh, &z, 0.1, &g, 0.0).unwrap();
            assert_eq!(u.max_abs(), 0.0);
        }
        let u = prepare_initial_data(&mesh, &z, 0.1, &MonotoneGraph::Obstacle, 1e-3).unwrap();
        assert_eq!(u.max_abs(), 0.0);
    }

    #[test]
    fn linear_boundary_graph_matches_one_dimensional_oracle() {
        let (ny, ly, delta) = (41, 1.0, 0.05);
        let mesh = StripMesh::<f64>::new(6, ny, 1.0, ly).unwrap();
        let u0 = CoupledField::constant(&mesh, 1.0);
        let u = prepare_initial_data(&mesh, &u0, delta, &MonotoneGraph::linear(1.0), 0.0).unwrap();
        let oracle = ghost_point_oracle(ny, ly, delta);
        for j in 0..ny {
            for i in 0..6 {
                assert!((u.bulk[mesh.node(i, j)] - oracle[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn one_dimensional_solution_is_second_order() {
        let (ly, delta) = (1.0, 0.05);
        let err = |ny: usize| {
            let mesh = StripMesh::<f64>::new(4, ny, 1.0, ly).unwrap();
            let u0 = CoupledField::constant(&mesh, 1.0);
            let u = prepare_initial_data(&mesh, &u0, delta, &MonotoneGraph::linear(1.0), 0.0).unwrap();
            (0..ny).map(|j| (u.bulk[mesh.node(0, j)] - analytic(mesh.y(j), ly, delta)).abs()).fold(0.0, f64::max)
        };
        let ratio = err(33) / err(65);
        assert!((ratio - 4.0).abs() < 0.3, "{ratio}");
    }

    #[test]
    fn approaches_data_as_delta_vanishes() {
        let mesh = StripMesh::<f64>::new(32, 33, 1.0, 1.0).unwrap();
        let op = CoupledOperator::new(&mesh);
        let pair = PotentialPair::regular();
        let u0 = generate(&mesh, &ProfileSpec::cosine(0.1, 0.7, 2), &pair).unwrap();
        let base_primitive: f64 = primitive_mass(&op, &u0);
        let mut prev = f64::INFINITY;
        for delta in [1e-1, 1e-2, 1e-3] {
            let u = prepare_with_operator(&op, &u0, delta, &MonotoneGraph::Cubic, 0.0).unwrap();
            let err = op.norm(&u.sub(&u0), NormKind::H).unwrap();
            assert!(err < prev, "{delta}: {err} >= {prev}");
            prev = err;
            // energy comparison with the data
            let lhs = op.bulk_stiffness().quadratic_form(&u.bulk);
            let slack: f64 = mesh
                .boundary_nodes()
                .iter()
                .zip(mesh.boundary_weights())
                .map(|(&k, &w)| w * u0.bulk[k].powi(4) / 4.0)
                .sum();
            assert!(lhs <= op.bulk_stiffness().quadratic_form(&u0.bulk) + 2.0 * slack);
            assert!(primitive_mass(&op, &u) <= base_primitive + 1e-2);
        }
    }

    fn primitive_mass(op: &CoupledOperator<f64>, u: &CoupledField<f64>) -> f64 {
        op.bulk_mass().iter().zip(&u.bulk).map(|(&m, &v)| m * v.powi(4) / 4.0).sum()
    }

    #[test]
    fn logarithmic_and_obstacle_boundaries() {
        let mesh = StripMesh::<f64>::new(16, 17, 1.0, 1.0).unwrap();
        let u0 = CoupledField::from_fn(&mesh, |x, _| 0.97 * (std::f64::consts::TAU * x).cos());
        let u = prepare_initial_data(&mesh, &u0, 0.1, &MonotoneGraph::Logarithmic, 0.0).unwrap();
        assert!(u.bulk.iter().all(|v| v.abs() < 1.0));
        let u = prepare_initial_data(&mesh, &u0, 0.1, &MonotoneGraph::Obstacle, 1e-3).unwrap();
        assert!(u.boundary.iter().all(|v| v.abs() < 1.0 + 1e-2));
        assert!(prepare_initial_data(&mesh, &u0, 0.1, &MonotoneGraph::Obstacle, 0.0).is_err());
        assert!(prepare_initial_data(&mesh, &u0, 0.0, &MonotoneGraph::Cubic, 0.0).is_err());
    }

    #[test]
    fn generated_profiles() {
        let mesh = StripMesh::<f64>::new(16, 9, 1.0, 1.0).unwrap();
        let c = generate(&mesh, &ProfileSpec::constant(0.3), &PotentialPair::regular()).unwrap();
        assert!(c.bulk.iter().chain(&c.boundary).all(|&v| v == 0.3));

        let obstacle = PotentialPair::obstacle(1.0);
        let s = generate(&mesh, &ProfileSpec::tanh_stripe(0.0, 1.0, 0.1), &obstacle).unwrap();
        assert!(s.bulk.iter().all(|v| v.abs() <= 0.95));
        assert!(s.is_trace_compatible(&mesh));

        let spec = ProfileSpec::random_smooth(0.2, 0.5, 3, 77);
        let a = generate(&mesh, &spec, &PotentialPair::regular()).unwrap();
        let b = generate(&mesh, &spec, &PotentialPair::regular()).unwrap();
        assert_eq!(a, b);
        let m = crate::operators::mean(&mesh, &a).unwrap();
        assert!((m - 0.2).abs() < 1e-14);
        assert!((a.max_abs() - 0.2).abs() <= 0.5 + 1e-12);
        let other = generate(&mesh, &ProfileSpec { seed: 78, ..spec }, &PotentialPair::regular()).unwrap();
        assert_ne!(a, other);

        let cos = generate(&mesh, &ProfileSpec::cosine(0.0, 0.5, 1), &PotentialPair::logarithmic(2.0)).unwrap();
        assert!(cos.is_trace_compatible(&mesh));

        let bad = ProfileSpec { margin: 0.0, ..ProfileSpec::constant(1.0) };
        assert!(matches!(
            generate(&mesh, &bad, &PotentialPair::logarithmic(2.0)),
            Err(Error::InadmissibleProfile(_))
        ));
    }
}
