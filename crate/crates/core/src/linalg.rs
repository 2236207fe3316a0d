//! Sparse and banded linear algebra: a compressed-row matrix, an LU
//! factorization with partial pivoting for banded matrices, and conjugate
//! gradients on the constant-deflated subspace.

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

/// Compressed sparse row matrix.
#[derive(Clone, Debug)]
pub struct CsrMatrix<T> {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Assembles an `n × n` matrix from triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                let top = vals.len() - 1;
                vals[top] = vals[top] + v;
                continue;
            }
            row_ptr[r + 1] += 1;
            cols.push(c);
            vals.push(v);
            last = Some((r, c));
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.row(i).find(|&(c, _)| c == j).map_or(T::zero(), |(_, v)| v)
    }

    pub fn mul_vec_into(&self, x: &[T], y: &mut [T]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            *yi = self.row(i).map(|(c, v)| v * x[c]).sum();
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `|A|·|x|`, entrywise absolute values.
    pub fn abs_mul_vec(&self, x: &[T]) -> Vec<T> {
        (0..self.dim())
            .map(|i| self.row(i).fold(T::zero(), |acc, (j, v)| acc + v.abs() * x[j].abs()))
            .collect()
    }

    /// `xᵀ A x`.
    pub fn quadratic_form(&self, x: &[T]) -> T {
        (0..self.n)
            .map(|i| x[i] * self.row(i).map(|(c, v)| v * x[c]).sum::<T>())
            .sum()
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(c, _)| i.abs_diff(c)))
            .max()
            .unwrap_or(0)
    }
}

/// Square band matrix stored column-wise with room for pivoting fill-in,
/// followed by its in-place LU factorization.
#[derive(Clone, Debug)]
pub struct BandMatrix<T> {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    data: Vec<T>,
}

impl<T: Scalar> BandMatrix<T> {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ld = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            ld,
            data: vec![T::zero(); ld * n],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        // row i of column j lives at offset kl + ku + i - j
        j * self.ld + self.kl + self.ku + i - j
    }

    /// Adds `v` to entry `(i, j)`, which must lie inside the band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        debug_assert!(i <= j + self.kl && j <= i + self.ku, "({i},{j}) outside band");
        let k = self.idx(i, j);
        self.data[k] = self.data[k] + v;
    }

    /// Factorizes in place with partial pivoting (unblocked `gbtf2`).
    pub fn factor(mut self) -> Result<BandLu<T>> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut pivots = vec![0usize; n];
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let base = self.idx(j, j);
            let mut jp = 0;
            let mut best = self.data[base].abs();
            for r in 1..=km {
                let v = self.data[base + r].abs();
                if v > best {
                    best = v;
                    jp = r;
                }
            }
            pivots[j] = j + jp;
            if best == T::zero() {
                return Err(Error::Singular(j));
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let a = self.idx(j, c);
                    let b = self.idx(j + jp, c);
                    self.data.swap(a, b);
                }
            }
            if km > 0 {
                let inv = T::one() / self.data[base];
                for r in 1..=km {
                    self.data[base + r] = self.data[base + r] * inv;
                }
                for c in j + 1..=ju {
                    let cb = self.idx(j, c);
                    let t = self.data[cb];
                    if t == T::zero() {
                        continue;
                    }
                    // column c rows j+1..=j+km sit contiguously after (j, c)
                    let (head, tail) = self.data.split_at_mut(cb + 1);
                    let lcol = &head[base + 1..=base + km];
                    for (dst, &l) in tail[..km].iter_mut().zip(lcol) {
                        *dst = *dst - t * l;
                    }
                }
            }
        }
        Ok(BandLu {
            band: self,
            pivots,
        })
    }
}

#[derive(Clone, Debug)]
pub struct BandLu<T> {
    band: BandMatrix<T>,
    pivots: Vec<usize>,
}

impl<T: Scalar> BandLu<T> {
    pub fn dim(&self) -> usize {
        self.band.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [T]) {
        let a = &self.band;
        let (n, kl, kv) = (a.n, a.kl, a.kl + a.ku);
        for j in 0..n {
            let p = self.pivots[j];
            if p != j {
                b.swap(j, p);
            }
            let km = kl.min(n - 1 - j);
            let bj = b[j];
            if km > 0 && bj != T::zero() {
                let base = a.idx(j, j);
                for r in 1..=km {
                    b[j + r] = b[j + r] - a.data[base + r] * bj;
                }
            }
        }
        for j in (0..n).rev() {
            let base = a.idx(j, j);
            b[j] = b[j] / a.data[base];
            let bj = b[j];
            if bj == T::zero() {
                continue;
            }
            let top = j.saturating_sub(kv);
            for i in top..j {
                b[i] = b[i] - a.data[base - (j - i)] * bj;
            }
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Outcome of an iterative solve.
#[derive(Clone, Copy, Debug)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive
/// semidefinite `A` whose kernel is spanned by the constant vector. The
/// right-hand side must be orthogonal to the constants; iterates are kept
/// orthogonal to the constants as well.
pub fn cg_deflated<T: Scalar>(
    a: &CsrMatrix<T>,
    rhs: &[T],
    rel_tol: T,
    max_iter: usize,
) -> Result<(Vec<T>, CgStats)> {
    let n = a.dim();
    let diag: Vec<T> = (0..n)
        .map(|i| {
            let d = a.get(i, i);
            if d > T::zero() {
                T::one() / d
            } else {
                T::one()
            }
        })
        .collect();
    let project = |v: &mut [T]| {
        let mean = v.iter().copied().sum::<T>() / T::count(n);
        v.iter_mut().for_each(|x| *x = *x - mean);
    };
    let mut rhs = rhs.to_vec();
    project(&mut rhs);
    let rhs = rhs;
    let norm_b = dot(&rhs, &rhs).sqrt();
    let mut x = vec![T::zero(); n];
    if norm_b == T::zero() {
        return Ok((
            x,
            CgStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let mut r = rhs.clone();
    let mut z: Vec<T> = r.iter().zip(&diag).map(|(&ri, &di)| ri * di).collect();
    project(&mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![T::zero(); n];
    let mut rel = T::one();
    for it in 0..max_iter {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= T::zero() {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] = x[i] + alpha * p[i];
            r[i] = r[i] - alpha * ap[i];
        }
        rel = dot(&r, &r).sqrt() / norm_b;
        if rel <= rel_tol {
            project(&mut x);
            // confirm with a true residual to guard against drift in r
            let ax = a.mul_vec(&x);
            let true_rel = ax
                .iter()
                .zip(&rhs)
                .map(|(&u, &v)| (u - v) * (u - v))
                .sum::<T>()
                .sqrt()
                / norm_b;
            if true_rel <= rel_tol * T::lit(10.0) {
                return Ok((
                    x,
                    CgStats {
                        iterations: it + 1,
                        relative_residual: true_rel.as_f64(),
                    },
                ));
            }
            r = rhs.iter().zip(&ax).map(|(&b, &v)| b - v).collect();
            project(&mut r);
        }
        for i in 0..n {
            z[i] = r[i] * diag[i];
        }
        project(&mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Nonconvergence {
        what: "conjugate gradient",
        iterations: max_iter,
        residual: rel.as_f64(),
    })
}
