//! Periodic strip `Ω = [0, Lx) × [0, Ly]`, periodic in `x`, whose boundary `Γ`
//! consists of the two periodic curves `y = 0` and `y = Ly`.
//!
//! Bulk nodes are numbered row-major, `k = j·Nx + i`. Boundary nodes are the
//! bottom row (`j = 0`) followed by the top row (`j = Ny - 1`); each of them is
//! also a bulk node, so taking a trace is an index restriction.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct StripMesh<T> {
    nx: usize,
    ny: usize,
    lx: T,
    ly: T,
    hx: T,
    hy: T,
    bulk_weights: Vec<T>,
    boundary_weights: Vec<T>,
    boundary_nodes: Vec<usize>,
}

impl<T: Scalar> StripMesh<T> {
    /// Builds an `nx × ny` grid. Quadrature is uniform in the periodic
    /// direction and trapezoidal in `y`.
    pub fn new(nx: usize, ny: usize, lx: T, ly: T) -> Result<Self> {
        if nx < 4 || ny < 4 {
            return Err(Error::InvalidDimension(format!(
                "need nx, ny >= 4, got {nx} x {ny}"
            )));
        }
        if !(lx > T::zero() && ly > T::zero()) || !lx.is_finite() || !ly.is_finite() {
            return Err(Error::InvalidDimension(format!(
                "need positive finite lengths, got {lx} x {ly}"
            )));
        }
        let hx = lx / T::count(nx);
        let hy = ly / T::count(ny - 1);
        let half = T::lit(0.5);
        let mut bulk_weights = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            let wy = if j == 0 || j == ny - 1 { hy * half } else { hy };
            bulk_weights.extend(std::iter::repeat(hx * wy).take(nx));
        }
        let boundary_nodes: Vec<usize> = (0..nx).chain((0..nx).map(|i| (ny - 1) * nx + i)).collect();
        Ok(StripMesh {
            nx,
            ny,
            lx,
            ly,
            hx,
            hy,
            bulk_weights,
            boundary_weights: vec![hx; 2 * nx],
            boundary_nodes,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn lx(&self) -> T {
        self.lx
    }
    pub fn ly(&self) -> T {
        self.ly
    }
    pub fn hx(&self) -> T {
        self.hx
    }
    pub fn hy(&self) -> T {
        self.hy
    }

    pub fn bulk_len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn boundary_len(&self) -> usize {
        2 * self.nx
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn x(&self, i: usize) -> T {
        T::count(i) * self.hx
    }

    pub fn y(&self, j: usize) -> T {
        T::count(j) * self.hy
    }

    /// Bulk quadrature weights, summing to `|Ω|`.
    pub fn bulk_weights(&self) -> &[T] {
        &self.bulk_weights
    }

    /// Boundary quadrature weights, summing to `|Γ|`.
    pub fn boundary_weights(&self) -> &[T] {
        &self.boundary_weights
    }

    /// Bulk index of each boundary node.
    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary_nodes
    }

    pub fn is_boundary_row(&self, j: usize) -> bool {
        j == 0 || j == self.ny - 1
    }

    /// `|Ω| = Lx·Ly`.
    pub fn bulk_measure(&self) -> T {
        self.lx * self.ly
    }

    /// `|Γ| = 2·Lx`.
    pub fn boundary_measure(&self) -> T {
        T::lit(2.0) * self.lx
    }

    /// Boundary weight carried by bulk node `k` (zero for interior nodes).
    pub fn boundary_weight_at(&self, k: usize) -> T {
        let j = k / self.nx;
        if self.is_boundary_row(j) {
            self.hx
        } else {
            T::zero()
        }
    }

    /// Lumped mass of the `H = L²(Ω) × L²(Γ)` inner product restricted to
    /// trace-compatible fields, indexed by bulk node.
    pub fn nodal_mass(&self) -> Vec<T> {
        (0..self.bulk_len())
            .map(|k| self.bulk_weights[k] + self.boundary_weight_at(k))
            .collect()
    }
}

/// A bulk/boundary pair `(z, z_Γ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledField<T> {
    pub bulk: Vec<T>,
    pub boundary: Vec<T>,
}

impl<T: Scalar> CoupledField<T> {
    pub fn zeros(mesh: &StripMesh<T>) -> Self {
        Self::constant(mesh, T::zero())
    }

    pub fn constant(mesh: &StripMesh<T>, c: T) -> Self {
        CoupledField {
            bulk: vec![c; mesh.bulk_len()],
            boundary: vec![c; mesh.boundary_len()],
        }
    }

    /// Trace-compatible field built from bulk nodal values.
    pub fn from_nodal(mesh: &StripMesh<T>, bulk: Vec<T>) -> Result<Self> {
        let boundary = trace(mesh, &bulk)?;
        Ok(CoupledField { bulk, boundary })
    }

    /// Trace-compatible field sampled from `f(x, y)`.
    pub fn from_fn(mesh: &StripMesh<T>, f: impl Fn(T, T) -> T) -> Self {
        let mut bulk = Vec::with_capacity(mesh.bulk_len());
        for j in 0..mesh.ny() {
            for i in 0..mesh.nx() {
                bulk.push(f(mesh.x(i), mesh.y(j)));
            }
        }
        let boundary = mesh.boundary_nodes().iter().map(|&k| bulk[k]).collect();
        CoupledField { bulk, boundary }
    }

    pub fn check_size(&self, mesh: &StripMesh<T>) -> Result<()> {
        if self.bulk.len() != mesh.bulk_len() {
            return Err(Error::SizeMismatch {
                expected: mesh.bulk_len(),
                found: self.bulk.len(),
            });
        }
        if self.boundary.len() != mesh.boundary_len() {
            return Err(Error::SizeMismatch {
                expected: mesh.boundary_len(),
                found: self.boundary.len(),
            });
        }
        Ok(())
    }

    /// Exact equality of boundary values with the bulk values at boundary nodes.
    pub fn is_trace_compatible(&self, mesh: &StripMesh<T>) -> bool {
        self.check_size(mesh).is_ok()
            && mesh
                .boundary_nodes()
                .iter()
                .zip(&self.boundary)
                .all(|(&k, &b)| self.bulk[k] == b)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        CoupledField {
            bulk: self.bulk.iter().map(|&v| f(v)).collect(),
            boundary: self.boundary.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        CoupledField {
            bulk: self.bulk.iter().zip(&other.bulk).map(|(&a, &b)| f(a, b)).collect(),
            boundary: self
                .boundary
                .iter()
                .zip(&other.boundary)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn max_abs(&self) -> T {
        crate::scalar::max_abs(&self.bulk).max(crate::scalar::max_abs(&self.boundary))
    }

    /// Returns the boundary part as a bottom curve and a top curve.
    pub fn boundary_curves(&self, mesh: &StripMesh<T>) -> (&[T], &[T]) {
        self.boundary.split_at(mesh.nx())
    }
}

/// Restriction of a bulk nodal array to the boundary nodes.
pub fn trace<T: Scalar>(mesh: &StripMesh<T>, bulk: &[T]) -> Result<Vec<T>> {
    if bulk.len() != mesh.bulk_len() {
        return Err(Error::SizeMismatch {
            expected: mesh.bulk_len(),
            found: bulk.len(),
        });
    }
    Ok(mesh.boundary_nodes().iter().map(|&k| bulk[k]).collect())
}

/// Quadrature values of `∫_Ω z` and `∫_Γ z_Γ`.
pub fn integrate<T: Scalar>(mesh: &StripMesh<T>, field: &CoupledField<T>) -> Result<(T, T)> {
    field.check_size(mesh)?;
    let bulk = crate::scalar::dot(mesh.bulk_weights(), &field.bulk);
    let boundary = crate::scalar::dot(mesh.boundary_weights(), &field.boundary);
    Ok((bulk, boundary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Composite trapezoid rule in y on each column, rectangle rule in the
    /// periodic direction.
    fn trapezoid_oracle(nx: usize, ny: usize, lx: f64, ly: f64, f: &[f64]) -> f64 {
        let hx = lx / nx as f64;
        let hy = ly / (ny - 1) as f64;
        let mut total = 0.0;
        for i in 0..nx {
            let mut col = 0.0;
            for j in 0..ny - 1 {
                col += 0.5 * hy * (f[j * nx + i] + f[(j + 1) * nx + i]);
            }
            total += hx * col;
        }
        total
    }

    #[test]
    fn counts_and_measures() {
        let mesh = StripMesh::<f64>::new(8, 5, 1.0, 1.0).unwrap();
        assert_eq!(mesh.bulk_len(), 40);
        assert_eq!(mesh.boundary_len(), 16);
        let wb: f64 = mesh.bulk_weights().iter().sum();
        let wg: f64 = mesh.boundary_weights().iter().sum();
        assert!((wb - 1.0).abs() < 1e-15);
        assert!((wg - 2.0).abs() < 1e-15);
        let m: f64 = mesh.nodal_mass().iter().sum();
        assert!((m - 3.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(matches!(StripMesh::<f64>::new(3, 5, 1.0, 1.0), Err(Error::InvalidDimension(_))));
        assert!(StripMesh::<f64>::new(8, 5, 0.0, 1.0).is_err());
        assert!(StripMesh::<f64>::new(8, 5, 1.0, -1.0).is_err());
    }

    #[test]
    fn trace_examples() {
        let mesh = StripMesh::<f64>::new(8, 5, 1.0, 2.0).unwrap();
        let c = vec![3.5; mesh.bulk_len()];
        assert!(trace(&mesh, &c).unwrap().iter().all(|&v| v == 3.5));

        let field = CoupledField::from_fn(&mesh, |_, y| y);
        let tr = trace(&mesh, &field.bulk).unwrap();
        assert!(tr[..8].iter().all(|&v| v == 0.0));
        assert!(tr[8..].iter().all(|&v| (v - 2.0).abs() < 1e-15));
        assert!(field.is_trace_compatible(&mesh));
        assert_eq!(tr, field.boundary);

        assert!(matches!(trace(&mesh, &[1.0; 3]), Err(Error::SizeMismatch { .. })));
        let mut broken = field.clone();
        broken.boundary[3] += 1.0;
        assert!(!broken.is_trace_compatible(&mesh));
    }

    #[test]
    fn integrate_examples() {
        let mesh = StripMesh::<f64>::new(8, 5, 1.0, 1.0).unwrap();
        let (b, g) = integrate(&mesh, &CoupledField::constant(&mesh, 1.0)).unwrap();
        assert!((b - 1.0).abs() < 1e-15 && (g - 2.0).abs() < 1e-15);

        let mode = CoupledField::from_fn(&mesh, |x, _| (2.0 * PI * x).sin());
        let (b, g) = integrate(&mesh, &mode).unwrap();
        assert!(b.abs() < 1e-15 && g.abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (nx, ny, lx, ly) = (13, 9, 2.5, 0.7);
        let mesh = StripMesh::<f64>::new(nx, ny, lx, ly).unwrap();
        let bulk: Vec<f64> = (0..nx * ny).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let boundary: Vec<f64> = (0..2 * nx).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let oracle_g: f64 = boundary.iter().sum::<f64>() * lx / nx as f64;
        let oracle_b = trapezoid_oracle(nx, ny, lx, ly, &bulk);
        let (b, g) = integrate(&mesh, &CoupledField { bulk, boundary }).unwrap();
        assert!((b - oracle_b).abs() < 1e-13);
        assert!((g - oracle_g).abs() < 1e-13);
    }

    #[test]
    fn y_quadrature_is_second_order() {
        let err = |ny: usize| {
            let mesh = StripMesh::<f64>::new(8, ny, 1.0, 1.0).unwrap();
            let f = CoupledField::from_fn(&mesh, |_, y| y * y);
            (integrate(&mesh, &f).unwrap().0 - 1.0 / 3.0).abs()
        };
        let (e1, e2, e3) = (err(9), err(17), err(33));
        assert!((e1 / e2 - 4.0).abs() < 0.1, "{}", e1 / e2);
        assert!((e2 / e3 - 4.0).abs() < 0.1);
    }
}
