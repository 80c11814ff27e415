//! Small dense complex matrices.
//!
//! Everything the simulators touch is a 2-, 4-, 6-, 8- or 12-dimensional
//! complex matrix, so this module hand-rolls exactly the operations needed —
//! products, adjoints, Kronecker products, Hermitian eigendecomposition and
//! matrix exponentials — instead of pulling in a general linear-algebra
//! stack. Row-major storage.

use num_complex::Complex64;

use crate::error::{Result, SpinError};

pub const C_ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const C_ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const C_I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        ComplexMatrix {
            dim,
            data: vec![C_ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = C_ONE;
        }
        m
    }

    /// Build from a row-major slice of `dim*dim` entries.
    pub fn from_slice(dim: usize, entries: &[Complex64]) -> Self {
        assert_eq!(entries.len(), dim * dim, "entry count must be dim^2");
        ComplexMatrix {
            dim,
            data: entries.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mul(&self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        let n = self.dim;
        let mut out = ComplexMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == C_ZERO {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * rhs.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.dim, "dimension mismatch");
        let n = self.dim;
        let mut out = vec![C_ZERO; n];
        for i in 0..n {
            let mut acc = C_ZERO;
            for j in 0..n {
                acc += self.data[i * n + j] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    pub fn add(&self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
        out
    }

    pub fn sub(&self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
        out
    }

    pub fn scale(&self, c: Complex64) -> ComplexMatrix {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a *= c;
        }
        out
    }

    pub fn dagger(&self) -> ComplexMatrix {
        let n = self.dim;
        let mut out = ComplexMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.data[j * n + i] = self.data[i * n + j].conj();
            }
        }
        out
    }

    pub fn trace(&self) -> Complex64 {
        let n = self.dim;
        (0..n).map(|i| self.data[i * n + i]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn kron(&self, rhs: &ComplexMatrix) -> ComplexMatrix {
        let (n, m) = (self.dim, rhs.dim);
        let mut out = ComplexMatrix::zeros(n * m);
        for i in 0..n {
            for j in 0..n {
                let a = self.data[i * n + j];
                if a == C_ZERO {
                    continue;
                }
                for k in 0..m {
                    for l in 0..m {
                        out[(i * m + k, j * m + l)] = a * rhs.data[k * m + l];
                    }
                }
            }
        }
        out
    }

    /// Copy `block` into this matrix with its top-left corner at (row, col).
    pub fn set_block(&mut self, row: usize, col: usize, block: &ComplexMatrix) {
        let b = block.dim;
        assert!(row + b <= self.dim && col + b <= self.dim, "block out of range");
        for i in 0..b {
            for j in 0..b {
                self[(row + i, col + j)] = block[(i, j)];
            }
        }
    }

    /// Extract the `size`×`size` block whose top-left corner is at (row, col).
    pub fn block(&self, row: usize, col: usize, size: usize) -> ComplexMatrix {
        assert!(row + size <= self.dim && col + size <= self.dim, "block out of range");
        let mut out = ComplexMatrix::zeros(size);
        for i in 0..size {
            for j in 0..size {
                out[(i, j)] = self[(row + i, col + j)];
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Largest |entry(self) − entry(other)|.
    pub fn max_abs_diff(&self, other: &ComplexMatrix) -> f64 {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let n = self.dim;
        for i in 0..n {
            for j in i..n {
                if (self.data[i * n + j] - self.data[j * n + i].conj()).norm() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// exp(self) by scaling-and-squaring with a Taylor series. Valid for any
    /// square matrix; used for the non-Hermitian block-triangular generators
    /// of the derivative chains, whose norms per slice are ≪ 1.
    pub fn expm(&self) -> ComplexMatrix {
        let norm = self.frobenius_norm();
        let mut s = 0u32;
        let mut scaled = self.clone();
        if norm > 0.25 {
            s = (norm / 0.25).log2().ceil() as u32;
            let factor = Complex64::new(1.0 / (2f64.powi(s as i32)), 0.0);
            scaled = self.scale(factor);
        }
        let n = self.dim;
        let mut result = ComplexMatrix::identity(n);
        let mut term = ComplexMatrix::identity(n);
        for k in 1..60 {
            term = term.mul(&scaled).scale(Complex64::new(1.0 / k as f64, 0.0));
            result = result.add(&term);
            if term.frobenius_norm() < 1e-19 * result.frobenius_norm() {
                break;
            }
        }
        for _ in 0..s {
            result = result.mul(&result);
        }
        result
    }

    /// exp(self) together with the Fréchet derivative of the exponential at
    /// `self` in direction `e`, i.e. d/ds exp(self + s·e) at s = 0. Uses the
    /// Taylor recurrence P_k = P_{k−1}·A/k, F_k = (F_{k−1}·A + P_{k−1}·E)/k
    /// under the same scaling as `expm`, with squaring doublings
    /// L ← X·L + L·X, X ← X². Equivalent to exponentiating the doubled block
    /// matrix [[A, E], [0, A]] at roughly a third of the arithmetic.
    pub fn expm_frechet(&self, e: &ComplexMatrix) -> (ComplexMatrix, ComplexMatrix) {
        assert_eq!(self.dim, e.dim, "direction must match matrix dimension");
        let norm = self.frobenius_norm();
        let mut s = 0u32;
        let mut a = self.clone();
        let mut dir = e.clone();
        if norm > 0.25 {
            s = (norm / 0.25).log2().ceil() as u32;
            let factor = Complex64::new(1.0 / 2f64.powi(s as i32), 0.0);
            a = a.scale(factor);
            dir = dir.scale(factor);
        }
        let n = self.dim;
        let mut x = ComplexMatrix::identity(n);
        let mut l = ComplexMatrix::zeros(n);
        let mut p = ComplexMatrix::identity(n);
        let mut f = ComplexMatrix::zeros(n);
        for k in 1..60 {
            let inv = Complex64::new(1.0 / k as f64, 0.0);
            f = f.mul(&a).add(&p.mul(&dir)).scale(inv);
            p = p.mul(&a).scale(inv);
            x = x.add(&p);
            l = l.add(&f);
            if p.frobenius_norm() < 1e-19 * x.frobenius_norm()
                && f.frobenius_norm() < 1e-19 * (l.frobenius_norm() + 1e-300)
            {
                break;
            }
        }
        for _ in 0..s {
            l = x.mul(&l).add(&l.mul(&x));
            x = x.mul(&x);
        }
        (x, l)
    }

    /// Eigendecomposition of a Hermitian matrix by cyclic complex Jacobi
    /// sweeps. Returns (eigenvalues ascending, eigenvector columns).
    pub fn eigh(&self) -> Result<(Vec<f64>, ComplexMatrix)> {
        let n = self.dim;
        debug_assert!(self.is_hermitian(1e-9 * (1.0 + self.max_abs())));
        let mut a = self.clone();
        let mut v = ComplexMatrix::identity(n);
        let scale = self.frobenius_norm().max(1e-300);
        let tol = 1e-14 * scale;

        for _sweep in 0..60 {
            let mut off = 0.0f64;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a[(p, q)].norm_sqr();
                }
            }
            if off.sqrt() <= tol {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    let mag = apq.norm();
                    if mag <= 1e-300 {
                        continue;
                    }
                    let phase = apq / mag;
                    let app = a[(p, p)].re;
                    let aqq = a[(q, q)].re;
                    let tau = (aqq - app) / (2.0 * mag);
                    let t = if tau >= 0.0 {
                        1.0 / (tau + (1.0 + tau * tau).sqrt())
                    } else {
                        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    // Columns p, q of A and V are mixed by the plane rotation
                    // J: J.pp = c, J.pq = s·phase, J.qp = −s·conj(phase),
                    // J.qq = c; apply A ← J† A J, V ← V J.
                    let (cs, sph) = (Complex64::new(c, 0.0), Complex64::new(s, 0.0) * phase);
                    for i in 0..n {
                        let aip = a[(i, p)];
                        let aiq = a[(i, q)];
                        a[(i, p)] = aip * cs - aiq * sph.conj();
                        a[(i, q)] = aip * sph + aiq * cs;
                    }
                    for j in 0..n {
                        let apj = a[(p, j)];
                        let aqj = a[(q, j)];
                        a[(p, j)] = apj * cs - aqj * sph;
                        a[(q, j)] = apj * sph.conj() + aqj * cs;
                    }
                    for i in 0..n {
                        let vip = v[(i, p)];
                        let viq = v[(i, q)];
                        v[(i, p)] = vip * cs - viq * sph.conj();
                        v[(i, q)] = vip * sph + viq * cs;
                    }
                }
            }
        }
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)].norm_sqr();
            }
        }
        if off.sqrt() > 1e-10 * scale {
            return Err(SpinError::numerical(format!(
                "Jacobi eigendecomposition did not converge (off-diagonal {off:e})"
            )));
        }

        let mut pairs: Vec<(f64, usize)> = (0..n).map(|i| (a[(i, i)].re, i)).collect();
        pairs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        let eigvals: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let mut vec_sorted = ComplexMatrix::zeros(n);
        for (new_col, &(_, old_col)) in pairs.iter().enumerate() {
            for i in 0..n {
                vec_sorted[(i, new_col)] = v[(i, old_col)];
            }
        }
        Ok((eigvals, vec_sorted))
    }

    /// exp(−i·H·t) for Hermitian H = `self`. The 2-dimensional case uses the
    /// closed form for H = c·1 + v⃗·σ⃗; larger dimensions go through the
    /// Jacobi eigendecomposition. Both produce a unitary to machine
    /// precision, which matters for long pulse-train products.
    pub fn expm_i_hermitian(&self, t: f64) -> ComplexMatrix {
        if self.dim == 2 {
            return expm2_i(self, t);
        }
        let (vals, vecs) = self
            .eigh()
            .expect("Hermitian exponential: eigendecomposition failed");
        let n = self.dim;
        let mut out = ComplexMatrix::zeros(n);
        // V · diag(exp(−iλt)) · V†
        for i in 0..n {
            for j in 0..n {
                let mut acc = C_ZERO;
                for k in 0..n {
                    let phase = Complex64::from_polar(1.0, -vals[k] * t);
                    acc += vecs[(i, k)] * phase * vecs[(j, k)].conj();
                }
                out[(i, j)] = acc;
            }
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.dim + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        let n = self.dim;
        &mut self.data[i * n + j]
    }
}

/// Closed-form exp(−i·H·t) for a 2×2 Hermitian H = c·1 + v⃗·σ⃗:
/// e^{−ict} (cos(|v|t)·1 − i sin(|v|t)·v̂·σ⃗).
fn expm2_i(h: &ComplexMatrix, t: f64) -> ComplexMatrix {
    let c = 0.5 * (h[(0, 0)].re + h[(1, 1)].re);
    let vz = 0.5 * (h[(0, 0)].re - h[(1, 1)].re);
    let vx = h[(0, 1)].re;
    let vy = -h[(0, 1)].im;
    let vn = (vx * vx + vy * vy + vz * vz).sqrt();
    let phase = Complex64::from_polar(1.0, -c * t);
    let (cos_vt, sinc) = if vn * t.abs() < 1e-30 {
        (1.0, t) // sin(vn t)/vn → t
    } else {
        ((vn * t).cos(), (vn * t).sin() / vn)
    };
    let mut u = ComplexMatrix::zeros(2);
    let cc = Complex64::new(cos_vt, 0.0);
    u[(0, 0)] = phase * (cc - C_I * Complex64::new(vz * sinc, 0.0));
    u[(0, 1)] = phase * (-C_I) * Complex64::new(vx * sinc, -vy * sinc);
    u[(1, 0)] = phase * (-C_I) * Complex64::new(vx * sinc, vy * sinc);
    u[(1, 1)] = phase * (cc + C_I * Complex64::new(vz * sinc, 0.0));
    u
}
