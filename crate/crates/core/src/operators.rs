//! Discrete function-space toolbox on the strip: the generalized mean, the
//! coupled operator `𝓛` with its inverse on mean-zero functionals, the norms
//! of `H`, `V`, `Z`, `V₀` and the dual norm `‖·‖_*`, the energy functional,
//! and the Poincaré constant.
//!
//! Functionals (elements of `V*`) are stored as quadrature-weighted nodal
//! values, so the duality pairing with a trace-compatible field is a plain
//! dot product over bulk nodes.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{CoupledField, StripMesh};
use crate::graphs::PotentialPair;
use crate::linalg::{cg_deflated, BandLu, BandMatrix, CsrMatrix};
use crate::scalar::{dot, Scalar};

/// Relative residual targeted by [`CoupledOperator::solve_l_inv`].
pub const L_INV_TOL: f64 = 1e-12;

const CG_MAX_ITER: usize = 20_000;
const EIGEN_TOL: f64 = 1e-8;
const EIGEN_MAX_ITER: usize = 5_000;

/// Nodal functional on trace-compatible fields.
#[derive(Clone, Debug, PartialEq)]
pub struct DualVector<T>(pub Vec<T>);

impl<T: Scalar> DualVector<T> {
    /// `m(w) = ⟨w, 1⟩ / (|Ω| + |Γ|)`.
    pub fn mean(&self, mesh: &StripMesh<T>) -> T {
        self.0.iter().copied().sum::<T>() / (mesh.bulk_measure() + mesh.boundary_measure())
    }

    /// `⟨w, z⟩` for a trace-compatible `z`.
    pub fn pair(&self, z: &CoupledField<T>) -> T {
        dot(&self.0, &z.bulk)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormKind {
    /// `L²(Ω) × L²(Γ)`.
    H,
    /// `H`-norm plus bulk and surface gradient seminorms.
    V,
    /// Bulk `H¹` norm plus boundary `H^{1/2}` norm.
    Z,
    /// `(‖𝓛⁻¹(z - m(z))‖²_{V₀} + m(z)²)^{1/2}`.
    Vstar,
    /// Bulk and surface gradient seminorms only.
    V0,
}

/// Smallest constant of the discrete Poincaré inequality on mean-zero fields.
#[derive(Clone, Debug)]
pub struct PoincareEstimate<T> {
    pub constant: T,
    /// Smallest nonzero generalized eigenvalue of `(𝓛, mass)`.
    pub eigenvalue: T,
    pub eigenvector: CoupledField<T>,
    pub iterations: usize,
}

/// Assembled coupled operator `𝓛 = K_Ω + K_Γ` and the associated lumped masses.
#[derive(Debug)]
pub struct CoupledOperator<T> {
    mesh: StripMesh<T>,
    bulk_stiffness: CsrMatrix<T>,
    boundary_stiffness: CsrMatrix<T>,
    laplacian: CsrMatrix<T>,
    bulk_mass: Vec<T>,
    boundary_mass: Vec<T>,
    mass: Vec<T>,
    dft: DftTable<T>,
    pinned: OnceLock<std::result::Result<BandLu<T>, usize>>,
}

impl<T: Scalar> CoupledOperator<T> {
    pub fn new(mesh: &StripMesh<T>) -> Self {
        let (nx, ny) = (mesh.nx(), mesh.ny());
        let (hx, hy) = (mesh.hx(), mesh.hy());
        let n = mesh.bulk_len();
        let half = T::lit(0.5);
        let mut bulk = Vec::with_capacity(12 * n);
        let mut boundary = Vec::with_capacity(8 * nx);
        let edge = |t: &mut Vec<(usize, usize, T)>, a: usize, b: usize, c: T| {
            t.push((a, a, c));
            t.push((b, b, c));
            t.push((a, b, -c));
            t.push((b, a, -c));
        };
        for j in 0..ny {
            let wy = if mesh.is_boundary_row(j) { hy * half } else { hy };
            for i in 0..nx {
                let a = mesh.node(i, j);
                let b = mesh.node((i + 1) % nx, j);
                edge(&mut bulk, a, b, wy / hx);
                if mesh.is_boundary_row(j) {
                    edge(&mut boundary, a, b, T::one() / hx);
                }
                if j + 1 < ny {
                    edge(&mut bulk, a, mesh.node(i, j + 1), hx / hy);
                }
            }
        }
        let laplacian = CsrMatrix::from_triplets(n, bulk.iter().chain(&boundary).copied().collect());
        let bulk_stiffness = CsrMatrix::from_triplets(n, bulk);
        let boundary_stiffness = CsrMatrix::from_triplets(n, boundary);
        let bulk_mass = mesh.bulk_weights().to_vec();
        let boundary_mass: Vec<T> = (0..n).map(|k| mesh.boundary_weight_at(k)).collect();
        let mass = mesh.nodal_mass();
        CoupledOperator {
            mesh: mesh.clone(),
            bulk_stiffness,
            boundary_stiffness,
            laplacian,
            bulk_mass,
            boundary_mass,
            mass,
            dft: DftTable::new(nx),
            pinned: OnceLock::new(),
        }
    }

    pub fn mesh(&self) -> &StripMesh<T> {
        &self.mesh
    }

    /// Bulk Dirichlet form `∫_Ω ∇v·∇z`.
    pub fn bulk_stiffness(&self) -> &CsrMatrix<T> {
        &self.bulk_stiffness
    }

    /// Surface Dirichlet form `∫_Γ ∇_Γ v_Γ·∇_Γ z_Γ`, indexed by bulk node.
    pub fn boundary_stiffness(&self) -> &CsrMatrix<T> {
        &self.boundary_stiffness
    }

    /// `𝓛 = K_Ω + K_Γ`.
    pub fn laplacian(&self) -> &CsrMatrix<T> {
        &self.laplacian
    }

    /// Lumped bulk mass per node.
    pub fn bulk_mass(&self) -> &[T] {
        &self.bulk_mass
    }

    /// Lumped boundary mass per node (zero away from `Γ`).
    pub fn boundary_mass(&self) -> &[T] {
        &self.boundary_mass
    }

    /// Lumped mass of the `H` inner product on trace-compatible fields.
    pub fn mass(&self) -> &[T] {
        &self.mass
    }

    fn total_measure(&self) -> T {
        self.mesh.bulk_measure() + self.mesh.boundary_measure()
    }

    fn require_trace(&self, field: &CoupledField<T>) -> Result<()> {
        field.check_size(&self.mesh)?;
        if !field.is_trace_compatible(&self.mesh) {
            return Err(Error::NotTraceCompatible);
        }
        Ok(())
    }

    /// Generalized mean `m(z) = (∫_Ω z + ∫_Γ z_Γ) / (|Ω| + |Γ|)`.
    pub fn mean(&self, field: &CoupledField<T>) -> Result<T> {
        mean(&self.mesh, field)
    }

    /// Mean of a trace-compatible field given by its bulk nodal values.
    pub fn nodal_mean(&self, values: &[T]) -> T {
        dot(&self.mass, values) / self.total_measure()
    }

    /// Riesz representation of an `H` element as a functional on `V`.
    pub fn to_dual(&self, field: &CoupledField<T>) -> Result<DualVector<T>> {
        field.check_size(&self.mesh)?;
        let mut w: Vec<T> = self.bulk_mass.iter().zip(&field.bulk).map(|(&m, &v)| m * v).collect();
        for ((&k, &g), &b) in self
            .mesh
            .boundary_nodes()
            .iter()
            .zip(self.mesh.boundary_weights())
            .zip(&field.boundary)
        {
            w[k] = w[k] + g * b;
        }
        Ok(DualVector(w))
    }

    /// `𝓛 v` for a trace-compatible `v`.
    pub fn apply_l(&self, field: &CoupledField<T>) -> Result<DualVector<T>> {
        self.require_trace(field)?;
        Ok(DualVector(self.laplacian.mul_vec(&field.bulk)))
    }

    /// Mean-zero trace-compatible `v` with `𝓛 v = rhs`, by conjugate gradients.
    pub fn solve_l_inv(&self, rhs: &DualVector<T>) -> Result<CoupledField<T>> {
        let values = self.solve_l_inv_values(&rhs.0, true)?;
        CoupledField::from_nodal(&self.mesh, values)
    }

    /// As [`Self::solve_l_inv`] but through a cached banded factorization of
    /// `𝓛` with one node pinned.
    pub fn solve_l_inv_direct(&self, rhs: &DualVector<T>) -> Result<CoupledField<T>> {
        let values = self.solve_l_inv_values(&rhs.0, false)?;
        CoupledField::from_nodal(&self.mesh, values)
    }

    fn check_mean_zero(&self, rhs: &[T]) -> Result<()> {
        if rhs.len() != self.mesh.bulk_len() {
            return Err(Error::SizeMismatch {
                expected: self.mesh.bulk_len(),
                found: rhs.len(),
            });
        }
        let mean = rhs.iter().copied().sum::<T>() / self.total_measure();
        let scale = rhs.iter().fold(T::zero(), |a, &v| a + v.abs()) / self.total_measure();
        let tol = T::lit(1e-10).max(T::epsilon() * T::lit(64.0)) * (T::one() + scale);
        if mean.abs() > tol {
            return Err(Error::NonzeroMean { mean: mean.as_f64() });
        }
        Ok(())
    }

    pub(crate) fn solve_l_inv_values(&self, rhs: &[T], iterative: bool) -> Result<Vec<T>> {
        self.check_mean_zero(rhs)?;
        let mut x = if iterative {
            let tol = T::lit(L_INV_TOL).max(T::epsilon() * T::lit(100.0));
            cg_deflated(&self.laplacian, rhs, tol, CG_MAX_ITER)?.0
        } else {
            let lu = self.pinned_factor()?;
            let mut b = rhs.to_vec();
            b[0] = T::zero();
            lu.solve_in_place(&mut b);
            b
        };
        let m = self.nodal_mean(&x);
        x.iter_mut().for_each(|v| *v = *v - m);
        Ok(x)
    }

    fn pinned_factor(&self) -> Result<&BandLu<T>> {
        let cached = self.pinned.get_or_init(|| {
            let n = self.mesh.bulk_len();
            let bw = self.laplacian.bandwidth();
            let mut band = BandMatrix::zeros(n, bw, bw);
            band.add(0, 0, T::one());
            for i in 1..n {
                for (j, v) in self.laplacian.row(i) {
                    if j != 0 {
                        band.add(i, j, v);
                    }
                }
            }
            band.factor().map_err(|e| match e {
                Error::Singular(c) => c,
                _ => usize::MAX,
            })
        });
        cached.as_ref().map_err(|&c| Error::Singular(c))
    }

    /// Norm of `field` of the requested kind.
    pub fn norm(&self, field: &CoupledField<T>, kind: NormKind) -> Result<T> {
        Ok(self.norm_squared(field, kind)?.max(T::zero()).sqrt())
    }

    pub fn norm_squared(&self, field: &CoupledField<T>, kind: NormKind) -> Result<T> {
        match kind {
            NormKind::H => {
                field.check_size(&self.mesh)?;
                Ok(self.h_norm_sq(field))
            }
            NormKind::V => {
                self.require_trace(field)?;
                Ok(self.h_norm_sq(field) + self.laplacian.quadratic_form(&field.bulk))
            }
            NormKind::V0 => {
                self.require_trace(field)?;
                Ok(self.laplacian.quadratic_form(&field.bulk))
            }
            NormKind::Z => {
                self.require_trace(field)?;
                let bulk_h1 = dot(&self.bulk_mass, &field.bulk.iter().map(|&v| v * v).collect::<Vec<_>>())
                    + self.bulk_stiffness.quadratic_form(&field.bulk);
                Ok(bulk_h1 + self.boundary_h_half_sq(field))
            }
            NormKind::Vstar => self.vstar_norm_sq(field, false),
        }
    }

    fn h_norm_sq(&self, field: &CoupledField<T>) -> T {
        let b: T = self.bulk_mass.iter().zip(&field.bulk).map(|(&m, &v)| m * v * v).sum();
        let g: T = self
            .mesh
            .boundary_weights()
            .iter()
            .zip(&field.boundary)
            .map(|(&m, &v)| m * v * v)
            .sum();
        b + g
    }

    /// `Σ_k (1 + κ_k²)^{1/2} |ẑ_k|²` over both boundary curves.
    pub fn boundary_h_half_sq(&self, field: &CoupledField<T>) -> T {
        let (bottom, top) = field.boundary_curves(&self.mesh);
        let lx = self.mesh.lx();
        self.dft.h_half_sq(bottom, lx) + self.dft.h_half_sq(top, lx)
    }

    /// Squared dual norm. `direct` selects the cached factorization instead
    /// of conjugate gradients for the inner solve.
    pub fn vstar_norm_sq(&self, field: &CoupledField<T>, direct: bool) -> Result<T> {
        let w = self.to_dual(field)?;
        let m = w.mean(&self.mesh);
        let centered: Vec<T> = w.0.iter().zip(&self.mass).map(|(&wi, &mi)| wi - m * mi).collect();
        let v = self.solve_l_inv_values(&centered, !direct)?;
        Ok(dot(&centered, &v) + m * m)
    }

    /// Discrete energy
    /// `½∫|∇u|² + δ/2 ∫|∇_Γ u_Γ|² + ∫(β̂+π̂)(u) + ∫(β̂_Γ+π̂_Γ)(u_Γ) - (f, u)_H`,
    /// with `β̂, β̂_Γ` replaced by their Moreau envelopes when `lambda > 0`.
    /// Returns `+∞` when a nodal value leaves the closure of a domain.
    pub fn energy(
        &self,
        field: &CoupledField<T>,
        pair: &PotentialPair<T>,
        delta: T,
        f: &CoupledField<T>,
        lambda: T,
    ) -> Result<T> {
        self.require_trace(field)?;
        f.check_size(&self.mesh)?;
        let u = &field.bulk;
        let half = T::lit(0.5);
        let mut e = half * self.bulk_stiffness.quadratic_form(u)
            + half * delta * self.boundary_stiffness.quadratic_form(u);
        for ((&m, &v), &fv) in self.bulk_mass.iter().zip(u).zip(&f.bulk) {
            let p = primitive_or_inf(pair, true, lambda, v);
            e = e + m * (p + pair.pi_bulk.primitive(v) - fv * v);
        }
        for ((&m, &v), &fv) in self
            .mesh
            .boundary_weights()
            .iter()
            .zip(&field.boundary)
            .zip(&f.boundary)
        {
            let p = primitive_or_inf(pair, false, lambda, v);
            e = e + m * (p + pair.pi_boundary.primitive(v) - fv * v);
        }
        Ok(if e.is_nan() { T::infinity() } else { e })
    }

    /// Smallest `C` with `‖z‖_V ≤ C ‖z‖_{V₀}` on mean-zero trace-compatible
    /// fields, from the smallest nonzero eigenvalue `λ₁` of `𝓛 v = λ M v`:
    /// `C = (1 + 1/λ₁)^{1/2}`. Inverse iteration with the constant mode
    /// deflated.
    pub fn discrete_poincare_constant(&self) -> Result<PoincareEstimate<T>> {
        let n = self.mesh.bulk_len();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut v: Vec<T> = (0..n).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect();
        let normalize = |v: &mut Vec<T>| {
            let m = self.nodal_mean(v);
            v.iter_mut().for_each(|x| *x = *x - m);
            let s = dot(&self.mass, &v.iter().map(|&x| x * x).collect::<Vec<_>>()).sqrt();
            v.iter_mut().for_each(|x| *x = *x / s);
        };
        normalize(&mut v);
        let tol = T::lit(EIGEN_TOL).max(T::epsilon().sqrt() * T::lit(4.0));
        for it in 1..=EIGEN_MAX_ITER {
            let mv: Vec<T> = v.iter().zip(&self.mass).map(|(&a, &m)| a * m).collect();
            let mut next = self.solve_l_inv_values(&mv, false)?;
            normalize(&mut next);
            v = next;
            let lv = self.laplacian.mul_vec(&v);
            let rho = dot(&v, &lv);
            // residual of 𝓛v = ρMv in the M⁻¹ norm, relative to ρ
            let res = lv
                .iter()
                .zip(&v)
                .zip(&self.mass)
                .map(|((&l, &x), &m)| {
                    let r = l - rho * m * x;
                    r * r / m
                })
                .sum::<T>()
                .sqrt()
                / rho;
            if res <= tol {
                return Ok(PoincareEstimate {
                    constant: (T::one() + T::one() / rho).sqrt(),
                    eigenvalue: rho,
                    eigenvector: CoupledField::from_nodal(&self.mesh, v)?,
                    iterations: it,
                });
            }
        }
        Err(Error::Nonconvergence {
            what: "inverse iteration",
            iterations: EIGEN_MAX_ITER,
            residual: f64::NAN,
        })
    }
}

fn primitive_or_inf<T: Scalar>(pair: &PotentialPair<T>, bulk: bool, lambda: T, v: T) -> T {
    let g = if bulk { &pair.bulk } else { &pair.boundary };
    g.regularized_primitive(lambda, v).unwrap_or(T::infinity())
}

/// Generalized mean of a bulk/boundary pair.
pub fn mean<T: Scalar>(mesh: &StripMesh<T>, field: &CoupledField<T>) -> Result<T> {
    let (b, g) = crate::geometry::integrate(mesh, field)?;
    Ok((b + g) / (mesh.bulk_measure() + mesh.boundary_measure()))
}

/// Precomputed twiddle factors for the periodic boundary curves.
#[derive(Debug)]
struct DftTable<T> {
    n: usize,
    cos: Vec<T>,
    sin: Vec<T>,
}

impl<T: Scalar> DftTable<T> {
    fn new(n: usize) -> Self {
        let two_pi = T::PI() + T::PI();
        let angle = |k: usize| two_pi * T::count(k) / T::count(n);
        DftTable {
            n,
            cos: (0..n).map(|k| angle(k).cos()).collect(),
            sin: (0..n).map(|k| angle(k).sin()).collect(),
        }
    }

    /// `Σ_k (1 + κ_k²)^{1/2} |ẑ_k|²` with `ẑ` normalized so that
    /// `Σ_k |ẑ_k|² = ∫ z²` and `κ_k = 2πk/L`.
    fn h_half_sq(&self, z: &[T], length: T) -> T {
        let n = self.n;
        let two_pi = T::PI() + T::PI();
        let scale = length / T::count(n * n);
        let mut total = T::zero();
        for k in 0..n {
            let (mut re, mut im) = (T::zero(), T::zero());
            for (i, &v) in z.iter().enumerate() {
                let idx = (i * k) % n;
                re = re + v * self.cos[idx];
                im = im - v * self.sin[idx];
            }
            let signed = if k <= n / 2 { T::count(k) } else { -T::count(n - k) };
            let kappa = two_pi * signed / length;
            total = total + (T::one() + kappa * kappa).sqrt() * (re * re + im * im) * scale;
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn random_field(mesh: &StripMesh<f64>, seed: u64) -> CoupledField<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bulk = (0..mesh.bulk_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        CoupledField::from_nodal(mesh, bulk).unwrap()
    }

    fn mean_zero(op: &CoupledOperator<f64>, z: CoupledField<f64>) -> CoupledField<f64> {
        let m = op.mean(&z).unwrap();
        z.map(|v| v - m)
    }

    #[test]
    fn mean_examples() {
        let mesh = StripMesh::<f64>::new(8, 5, 1.0, 1.0).unwrap();
        assert!((mean(&mesh, &CoupledField::constant(&mesh, 2.5)).unwrap() - 2.5).abs() < 1e-15);
        let mut f = CoupledField::constant(&mesh, 2.0);
        f.boundary.iter_mut().for_each(|v| *v = -1.0);
        assert!(mean(&mesh, &f).unwrap().abs() < 1e-15);

        // oracle: explicit trapezoid sums
        let mesh = StripMesh::<f64>::new(10, 7, 1.3, 0.8).unwrap();
        let z = random_field(&mesh, 1);
        let (hx, hy) = (1.3 / 10.0, 0.8 / 6.0);
        let mut bulk = 0.0;
        for j in 0..7 {
            let w = if j == 0 || j == 6 { 0.5 * hy } else { hy };
            for i in 0..10 {
                bulk += hx * w * z.bulk[j * 10 + i];
            }
        }
        let bnd: f64 = z.boundary.iter().sum::<f64>() * hx;
        let oracle = (bulk + bnd) / (1.3 * 0.8 + 2.6);
        assert!((mean(&mesh, &z).unwrap() - oracle).abs() < 1e-13);
    }

    #[test]
    fn l_annihilates_constants_and_is_symmetric() {
        let mesh = StripMesh::<f64>::new(12, 9, 1.0, 1.5).unwrap();
        let op = CoupledOperator::new(&mesh);
        let w = op.apply_l(&CoupledField::constant(&mesh, 1.0)).unwrap();
        assert!(w.0.iter().all(|v| v.abs() < 1e-12));
        let v = random_field(&mesh, 2);
        let z = random_field(&mesh, 3);
        let a = op.apply_l(&v).unwrap().pair(&z);
        let b = op.apply_l(&z).unwrap().pair(&v);
        assert!((a - b).abs() < 1e-12);
        assert!(op.apply_l(&v).unwrap().pair(&v) > 0.0);
        let mut broken = v.clone();
        broken.boundary[0] += 1.0;
        assert!(matches!(op.apply_l(&broken), Err(Error::NotTraceCompatible)));
    }

    #[test]
    fn l_kernel_is_one_dimensional() {
        // on a tiny mesh, count zero eigenvalues of the dense matrix via
        // Gaussian elimination rank
        let mesh = StripMesh::<f64>::new(4, 4, 1.0, 1.0).unwrap();
        let op = CoupledOperator::new(&mesh);
        let n = mesh.bulk_len();
        let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| op.laplacian().get(i, j)).collect()).collect();
        let mut rank = 0;
        for c in 0..n {
            let Some(p) = (rank..n).filter(|&r| a[r][c].abs() > 1e-10).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())) else {
                continue;
            };
            a.swap(rank, p);
            for r in 0..n {
                if r != rank {
                    let f = a[r][c] / a[rank][c];
                    for k in 0..n {
                        a[r][k] -= f * a[rank][k];
                    }
                }
            }
            rank += 1;
        }
        assert_eq!(rank, n - 1);
    }

    #[test]
    fn fourier_mode_matches_stencil_symbol() {
        let (nx, lx) = (16, 2.0);
        let mesh = StripMesh::<f64>::new(nx, 9, lx, 1.0).unwrap();
        let op = CoupledOperator::new(&mesh);
        let mode = CoupledField::from_fn(&mesh, |x, _| (2.0 * PI * x / lx).cos());
        let hx = lx / nx as f64;
        let symbol = 2.0 * (1.0 - (2.0 * PI * hx / lx).cos()) / (hx * hx);
        let h2 = op.norm_squared(&mode, NormKind::H).unwrap();
        let form = op.apply_l(&mode).unwrap().pair(&mode);
        assert!((form - symbol * h2).abs() < 1e-12 * form);

        let back = op.solve_l_inv(&op.apply_l(&mode).unwrap()).unwrap();
        let err = back.sub(&mode).max_abs();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn inverse_roundtrip_and_mean_zero() {
        let mesh = StripMesh::<f64>::new(16, 13, 1.0, 1.0).unwrap();
        let op = CoupledOperator::new(&mesh);
        assert_eq!(op.solve_l_inv(&DualVector(vec![0.0; mesh.bulk_len()])).unwrap().max_abs(), 0.0);
        for seed in 0..5 {
            let z = mean_zero(&op, random_field(&mesh, seed));
            let w = op.apply_l(&z).unwrap();
            let back = op.solve_l_inv(&w).unwrap();
            assert!(back.sub(&z).max_abs() < 1e-9);
            assert!(op.mean(&back).unwrap().abs() < 1e-10);
            let direct = op.solve_l_inv_direct(&w).unwrap();
            assert!(direct.sub(&z).max_abs() < 1e-9);
        }
        let bad = DualVector(vec![1.0; mesh.bulk_len()]);
        assert!(matches!(op.solve_l_inv(&bad), Err(Error::NonzeroMean { .. })));
    }

    #[test]
    fn norm_examples() {
        let mesh = StripMesh::<f64>::new(16, 9, 1.0, 1.0).unwrap();
        let op = CoupledOperator::new(&mesh);
        let c = CoupledField::constant(&mesh, -1.7);
        assert!((op.norm(&c, NormKind::Vstar).unwrap() - 1.7).abs() < 1e-12);
        let zero = CoupledField::zeros(&mesh);
        for kind in [NormKind::H, NormKind::V, NormKind::Z, NormKind::Vstar, NormKind::V0] {
            assert_eq!(op.norm(&zero, kind).unwrap(), 0.0);
        }
        let z = mean_zero(&op, random_field(&mesh, 9));
        let vs = op.norm_squared(&z, NormKind::Vstar).unwrap();
        let pairing = op.to_dual(&z).unwrap().pair(&op.solve_l_inv(&op.to_dual(&z).unwrap()).unwrap());
        assert!((vs - pairing).abs() < 1e-9 * vs.max(1.0));
        let direct = op.vstar_norm_sq(&z, true).unwrap();
        assert!((vs - direct).abs() < 1e-10 * vs);
        // a constant has H, V and Z norms fixed by the measures
        let h = op.norm_squared(&c, NormKind::H).unwrap();
        assert!((h - 1.7f64.powi(2) * 3.0).abs() < 1e-12);
        assert!((op.norm_squared(&c, NormKind::V).unwrap() - h).abs() < 1e-12);
        assert!((op.norm_squared(&c, NormKind::Z).unwrap() - h).abs() < 1e-12);
    }

    #[test]
    fn h_half_norm_of_single_mode() {
        let (nx, lx) = (32, 1.0);
        let mesh = StripMesh::<f64>::new(nx, 5, lx, 1.0).unwrap();
        let op = CoupledOperator::new(&mesh);
        let k = 3.0;
        let mode = CoupledField::from_fn(&mesh, |x, _| (2.0 * PI * k * x / lx).sin());
        let kappa = 2.0 * PI * k / lx;
        // ∫ sin² over one curve is lx/2, two curves
        let expect = (1.0 + kappa * kappa).sqrt() * lx;
        let got = op.boundary_h_half_sq(&mode);
        assert!((got - expect).abs() < 1e-10 * expect);
    }

    #[test]
    fn energy_examples() {
        let mesh = StripMesh::<f64>::new(8, 5, 1.0, 1.0).unwrap();
        let op = CoupledOperator::new(&mesh);
        let zero = CoupledField::zeros(&mesh);
        for pair in [PotentialPair::regular(), PotentialPair::logarithmic(2.0), PotentialPair::obstacle(1.0)] {
            assert_eq!(op.energy(&zero, &pair, 0.1, &zero, 0.0).unwrap(), 0.0);
        }
        let mut bump = CoupledField::zeros(&mesh);
        bump.bulk[mesh.node(2, 2)] = 1.5;
        let e = op.energy(&bump, &PotentialPair::obstacle(1.0), 0.0, &zero, 0.0).unwrap();
        assert_eq!(e, f64::INFINITY);

        let c = 0.7;
        let u = CoupledField::constant(&mesh, c);
        let e = op.energy(&u, &PotentialPair::regular(), 0.3, &zero, 0.0).unwrap();
        let density = c.powi(4) / 4.0 - c * c / 2.0;
        assert!((e - (1.0 * density + 2.0 * density)).abs() < 1e-14);
    }

    #[test]
    fn poincare_constant() {
        let mesh = StripMesh::<f64>::new(16, 17, 1.0, 1.0).unwrap();
        let op = CoupledOperator::new(&mesh);
        let est = op.discrete_poincare_constant().unwrap();
        assert!(est.constant >= 1.0);
        assert!(op.mean(&est.eigenvector).unwrap().abs() < 1e-10);
        let c = est.constant;
        for seed in 0..200 {
            let z = mean_zero(&op, random_field(&mesh, 100 + seed));
            let v = op.norm(&z, NormKind::V).unwrap();
            let v0 = op.norm(&z, NormKind::V0).unwrap();
            assert!(v <= c * v0 * (1.0 + 1e-12));
        }
        // the eigenvector attains the bound
        let v = op.norm(&est.eigenvector, NormKind::V).unwrap();
        let v0 = op.norm(&est.eigenvector, NormKind::V0).unwrap();
        assert!((v / v0 - c).abs() < 1e-8);
    }

    #[test]
    fn norm_equivalence_constants_are_finite() {
        let mesh = StripMesh::<f64>::new(12, 9, 1.0, 1.0).unwrap();
        let op = CoupledOperator::new(&mesh);
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for seed in 0..100 {
            let z = random_field(&mesh, 500 + seed).map(|v| v + 0.3);
            let m = op.mean(&z).unwrap();
            let centered = z.map(|v| v - m);
            let alt = (op.norm_squared(&centered, NormKind::V0).unwrap() + m * m).sqrt();
            let ratio = op.norm(&z, NormKind::V).unwrap() / alt;
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        let c = op.discrete_poincare_constant().unwrap().constant;
        assert!(lo > 0.0);
        // ‖z‖_V ≤ C‖z - m‖_{V₀} + ‖m‖_V ≤ max(C, √3)·√2·alt
        assert!(hi <= c.max(3f64.sqrt()) * 2f64.sqrt() + 1e-12, "{hi}");
    }
}
