//! Dense linear-algebra primitives shared by all modules.
//!
//! Everything is 64-bit, row-major, and allocation-happy; the matrices in
//! this crate are small (a few hundred rows at most), so clarity wins over
//! cache tricks. SVD and LU are delegated to nalgebra behind the
//! [`Matrix`] interface; the general eigensolver is implemented here
//! (balancing, Hessenberg reduction, double-shift QR with exceptional
//! shifts) after nalgebra's Schur iteration proved unable to converge on
//! routine stability matrices.

use crate::error::{Error, Result};
use nalgebra::{Complex, DMatrix};

/// Dense row-major matrix of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "Matrix::new",
                details: format!("{rows}x{cols} needs {} entries, got {}", rows * cols, data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::Shape {
                op: "Matrix::from_rows",
                details: "ragged rows".into(),
            });
        }
        Ok(Self {
            rows: nrows,
            cols: ncols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    /// Column vector from a slice.
    pub fn column(v: &[f64]) -> Self {
        Self { rows: v.len(), cols: 1, data: v.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let orow = k * other.cols;
                let row = i * other.cols;
                for j in 0..other.cols {
                    out.data[row + j] += a * other.data[orow + j];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec: {}x{} * {}", self.rows, self.cols, v.len());
        (0..self.rows)
            .map(|i| {
                let row = &self.data[i * self.cols..(i + 1) * self.cols];
                row.iter().zip(v).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// `selfᵀ v` without materializing the transpose.
    pub fn matvec_transposed(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len());
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += vi * a;
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    /// Outer product `u vᵀ`.
    pub fn outer(u: &[f64], v: &[f64]) -> Matrix {
        Matrix::from_fn(u.len(), v.len(), |r, c| u[r] * v[c])
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, a| m.max(a.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }

    /// Copies `block` into `self` with its upper-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Matrix) {
        assert!(r0 + block.rows <= self.rows && c0 + block.cols <= self.cols);
        for r in 0..block.rows {
            for c in 0..block.cols {
                self.set(r0 + r, c0 + c, block.get(r, c));
            }
        }
    }

    /// Adds `shift` to every diagonal entry (square matrices).
    pub fn add_diagonal(&self, shift: f64) -> Matrix {
        assert_eq!(self.rows, self.cols);
        let mut m = self.clone();
        for i in 0..self.rows {
            m.data[i * self.cols + i] += shift;
        }
        m
    }

    fn to_na(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    fn from_na(m: &DMatrix<f64>) -> Matrix {
        Matrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
    }
}

/// Full eigenvalue set of a square real matrix.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<Complex<f64>>,
}

impl Spectrum {
    pub fn max_real(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, z| m.max(z.re))
    }

    pub fn min_real(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, z| m.min(z.re))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Relative error `‖a − b‖ / ‖b‖`, falling back to the absolute error when
/// the reference is (near) zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(b);
    if scale < 1e-300 {
        diff
    } else {
        diff / scale
    }
}

/// Solves `A X = B` for square `A` via LU with partial pivoting.
///
/// Reports a singularity error (naming `op`) when a pivot collapses
/// relative to the largest one.
pub fn solve_linear(a: &Matrix, b: &Matrix, op: &'static str) -> Result<Matrix> {
    if a.rows != a.cols {
        return Err(Error::Shape {
            op,
            details: format!("solve needs a square system, got {}x{}", a.rows, a.cols),
        });
    }
    if a.rows != b.rows {
        return Err(Error::Shape {
            op,
            details: format!("system is {}x{} but rhs has {} rows", a.rows, a.cols, b.rows),
        });
    }
    let lu = a.to_na().lu();
    let diag: Vec<f64> = (0..a.rows).map(|i| lu.u()[(i, i)].abs()).collect();
    let max_pivot = diag.iter().fold(0.0f64, |m, d| m.max(*d));
    let min_pivot = diag.iter().fold(f64::INFINITY, |m, d| m.min(*d));
    if max_pivot == 0.0 || min_pivot < 1e-13 * max_pivot {
        return Err(Error::Singular {
            op,
            details: format!("pivot ratio {:.3e}", min_pivot / max_pivot.max(f64::MIN_POSITIVE)),
        });
    }
    match lu.solve(&b.to_na()) {
        Some(x) => Ok(Matrix::from_na(&x)),
        None => Err(Error::Singular { op, details: "LU solve failed".into() }),
    }
}

/// Damped right pseudoinverse `Aᵀ(AAᵀ + γI)⁻¹`.
///
/// For `gamma = 0` this is the Moore–Penrose pseudoinverse, computed by SVD
/// with singular values below `1e-12 · σ_max` treated as zero. For
/// `gamma > 0` the damped form is computed by a direct solve of
/// `(AAᵀ + γI)`.
pub fn damped_pinv(a: &Matrix, gamma: f64) -> Result<Matrix> {
    if gamma < 0.0 {
        return Err(Error::DegenerateInput {
            op: "damped_pinv",
            details: format!("negative damping {gamma}"),
        });
    }
    if gamma == 0.0 {
        let svd = a.to_na().svd(true, true);
        let u = svd.u.as_ref().expect("svd computed with u");
        let vt = svd.v_t.as_ref().expect("svd computed with v_t");
        let sigma_max = svd.singular_values.iter().fold(0.0f64, |m, s| m.max(*s));
        let cutoff = 1e-12 * sigma_max;
        // pinv = V Σ⁺ Uᵀ
        let k = svd.singular_values.len();
        let mut out = Matrix::zeros(a.cols, a.rows);
        for (idx, &s) in svd.singular_values.iter().enumerate().take(k) {
            if s <= cutoff {
                continue;
            }
            let inv = 1.0 / s;
            for r in 0..a.cols {
                let vr = vt[(idx, r)];
                for c in 0..a.rows {
                    out.data[r * a.rows + c] += vr * inv * u[(c, idx)];
                }
            }
        }
        Ok(out)
    } else {
        let gram = a.matmul(&a.transpose()).add_diagonal(gamma);
        let solved = solve_linear(&gram, a, "damped_pinv")?;
        Ok(solved.transpose())
    }
}

/// Projects the columns of `Q` onto the row space of `J`:
/// `Jᵀ(JJᵀ)⁻¹ J Q`.
pub fn project_onto_rowspace(q: &Matrix, j: &Matrix) -> Result<Matrix> {
    if q.rows != j.cols {
        return Err(Error::Shape {
            op: "project_onto_rowspace",
            details: format!("J is {}x{} but Q has {} rows", j.rows, j.cols, q.rows),
        });
    }
    let gram = j.matmul(&j.transpose());
    let jq = j.matmul(q);
    let solved = solve_linear(&gram, &jq, "project_onto_rowspace")?;
    Ok(j.transpose().matmul(&solved))
}

/// Balances a matrix in place by exact power-of-two similarity scalings
/// (Parlett-Reinsch), equalizing row and column norms. Eigenvalues are
/// preserved bit for bit; the QR iteration afterwards converges reliably
/// even for badly scaled inputs.
fn balance_in_place(a: &mut [f64], n: usize) {
    let radix = 2.0f64;
    loop {
        let mut done = true;
        for i in 0..n {
            let mut c: f64 = (0..n).filter(|&j| j != i).map(|j| a[j * n + i].abs()).sum();
            let mut r: f64 = (0..n).filter(|&j| j != i).map(|j| a[i * n + j].abs()).sum();
            if c == 0.0 || r == 0.0 || !c.is_finite() || !r.is_finite() {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            while c < r / radix {
                c *= radix;
                r /= radix;
                f *= radix;
            }
            while c >= r * radix {
                c /= radix;
                r *= radix;
                f /= radix;
            }
            if c + r < 0.95 * s {
                done = false;
                for j in 0..n {
                    a[i * n + j] /= f;
                }
                for j in 0..n {
                    a[j * n + i] *= f;
                }
            }
        }
        if done {
            break;
        }
    }
}

/// Reduces a general matrix to upper Hessenberg form in place via
/// stabilized elementary similarity transformations, then clears the
/// fill-in region below the first subdiagonal.
fn hessenberg_in_place(a: &mut [f64], n: usize) {
    for m in 1..n.saturating_sub(1) {
        // Largest-magnitude pivot in column m-1 below the diagonal.
        let mut x = 0.0f64;
        let mut pivot = m;
        for j in m..n {
            if a[j * n + m - 1].abs() > x.abs() {
                x = a[j * n + m - 1];
                pivot = j;
            }
        }
        if pivot != m {
            for j in m - 1..n {
                a.swap(pivot * n + j, m * n + j);
            }
            for j in 0..n {
                a.swap(j * n + pivot, j * n + m);
            }
        }
        if x != 0.0 {
            for i in m + 1..n {
                let mut y = a[i * n + m - 1];
                if y != 0.0 {
                    y /= x;
                    a[i * n + m - 1] = 0.0;
                    for j in m..n {
                        a[i * n + j] -= y * a[m * n + j];
                    }
                    for j in 0..n {
                        a[j * n + m] += y * a[j * n + i];
                    }
                }
            }
        }
    }
    for i in 2..n {
        for j in 0..i - 1 {
            a[i * n + j] = 0.0;
        }
    }
}

/// Eigenvalues of an upper Hessenberg matrix by the implicit double-shift
/// QR iteration with exceptional shifts (the classic `hqr` scheme).
fn hessenberg_eigenvalues(a: &mut [f64], n: usize) -> Result<Vec<Complex<f64>>> {
    let eps = f64::EPSILON;
    let idx = |i: usize, j: usize| i * n + j;
    let mut values = Vec::with_capacity(n);

    let mut anorm = 0.0f64;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[idx(i, j)].abs();
        }
    }
    if anorm == 0.0 {
        return Ok(vec![Complex::new(0.0, 0.0); n]);
    }

    let smlnum = f64::MIN_POSITIVE * (n as f64 / eps);
    let mut nn = n - 1; // active block ends here
    let mut t = 0.0f64; // accumulated exceptional shifts
    let mut shift_state = 0x9e37_79b9u64; // varies the exceptional shifts
    'deflate: loop {
        let mut its = 0usize;
        loop {
            // Find the active block start: a subdiagonal negligible
            // relative to its neighbours (with a tiny absolute floor)
            // splits the matrix.
            let mut l = nn;
            while l >= 1 {
                let sub = a[idx(l, l - 1)].abs();
                let mut s = a[idx(l - 1, l - 1)].abs() + a[idx(l, l)].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if sub <= (eps * s).max(smlnum) {
                    a[idx(l, l - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }

            let x = a[idx(nn, nn)];
            if l == nn {
                // One real root.
                values.push(Complex::new(x + t, 0.0));
                if nn == 0 {
                    break 'deflate;
                }
                nn -= 1;
                break;
            }
            let y = a[idx(nn - 1, nn - 1)];
            let w = a[idx(nn, nn - 1)] * a[idx(nn - 1, nn)];
            if l + 1 == nn {
                // A 2x2 block: real pair or complex conjugate pair.
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let z = q.abs().sqrt();
                let x_sh = x + t;
                if q >= 0.0 {
                    let z = p + z.copysign(p);
                    values.push(Complex::new(x_sh + z, 0.0));
                    let second = if z != 0.0 { x_sh - w / z } else { x_sh + z };
                    values.push(Complex::new(second, 0.0));
                } else {
                    values.push(Complex::new(x_sh + p, z));
                    values.push(Complex::new(x_sh + p, -z));
                }
                if nn == 1 {
                    break 'deflate;
                }
                nn -= 2;
                break;
            }

            // No deflation yet: one implicit double-shift QR sweep.
            if its == 300 {
                return Err(Error::Singular {
                    op: "eigenvalues",
                    details: "QR iteration exceeded its budget".into(),
                });
            }
            let (mut x, mut y, mut w) = (x, y, w);
            if its > 0 && its.is_multiple_of(10) {
                // Exceptional shift to break cycling. The magnitude is
                // varied deterministically between applications so that
                // equal-modulus eigenvalue rings cannot lock the fixed
                // shift into a limit cycle.
                shift_state = shift_state.wrapping_mul(6364136223846793005).wrapping_add(1);
                let jitter = 0.5 + (shift_state >> 40) as f64 / (1u64 << 24) as f64; // [0.5, 1.5)
                t += x;
                for i in 0..=nn {
                    a[idx(i, i)] -= x;
                }
                let s = a[idx(nn, nn - 1)].abs() + a[idx(nn - 1, nn - 2)].abs();
                x = 0.75 * s * jitter;
                y = x;
                w = -0.4375 * s * s * jitter;
            }
            its += 1;

            // Look for two consecutive small subdiagonals to start the sweep.
            let mut m = nn - 2;
            let (mut p, mut q, mut r);
            loop {
                let z = a[idx(m, m)];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[idx(m + 1, m)] + a[idx(m, m + 1)];
                q = a[idx(m + 1, m + 1)] - z - rr - ss;
                r = a[idx(m + 2, m + 1)];
                let scale = p.abs() + q.abs() + r.abs();
                if scale != 0.0 {
                    p /= scale;
                    q /= scale;
                    r /= scale;
                }
                if m == l {
                    break;
                }
                let u = a[idx(m, m - 1)].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[idx(m - 1, m - 1)].abs() + z.abs() + a[idx(m + 1, m + 1)].abs());
                if u <= eps * v {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=nn {
                a[idx(i, i - 2)] = 0.0;
            }
            for i in m + 3..=nn {
                a[idx(i, i - 3)] = 0.0;
            }

            // Chase the bulge down the block.
            for k in m..nn {
                if k != m {
                    p = a[idx(k, k - 1)];
                    q = a[idx(k + 1, k - 1)];
                    r = if k + 1 != nn { a[idx(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = (p * p + q * q + r * r).sqrt().copysign(p);
                if s == 0.0 {
                    continue;
                }
                if k == m {
                    if l != m {
                        a[idx(k, k - 1)] = -a[idx(k, k - 1)];
                    }
                } else {
                    a[idx(k, k - 1)] = -s * x;
                }
                p += s;
                x = p / s;
                y = q / s;
                let z = r / s;
                q /= p;
                r /= p;
                for j in k..=nn {
                    let mut pj = a[idx(k, j)] + q * a[idx(k + 1, j)];
                    if k + 1 != nn {
                        pj += r * a[idx(k + 2, j)];
                        a[idx(k + 2, j)] -= pj * z;
                    }
                    a[idx(k + 1, j)] -= pj * y;
                    a[idx(k, j)] -= pj * x;
                }
                let upper = nn.min(k + 3);
                for i in l..=upper {
                    let mut pi = x * a[idx(i, k)] + y * a[idx(i, k + 1)];
                    if k + 1 != nn {
                        pi += z * a[idx(i, k + 2)];
                        a[idx(i, k + 2)] -= pi * r;
                    }
                    a[idx(i, k + 1)] -= pi * q;
                    a[idx(i, k)] -= pi;
                }
            }
        }
    }
    Ok(values)
}

/// Full spectrum of a square real matrix (general, non-symmetric solver).
pub fn eigenvalues(a: &Matrix) -> Result<Spectrum> {
    if a.rows != a.cols {
        return Err(Error::Shape {
            op: "eigenvalues",
            details: format!("square matrix required, got {}x{}", a.rows, a.cols),
        });
    }
    let n = a.rows;
    if n == 0 {
        return Ok(Spectrum { values: Vec::new() });
    }
    if !a.is_finite() {
        return Err(Error::DegenerateInput {
            op: "eigenvalues",
            details: "non-finite entries".into(),
        });
    }
    let mut work = a.data.clone();
    balance_in_place(&mut work, n);
    hessenberg_in_place(&mut work, n);
    let values = hessenberg_eigenvalues(&mut work, n)?;
    Ok(Spectrum { values })
}

/// Angle between two flat vectors, in degrees within [0, 180].
pub fn angle_degrees(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "angle_degrees",
            details: format!("lengths {} vs {}", a.len(), b.len()),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateInput {
            op: "angle_degrees",
            details: "zero vector".into(),
        });
    }
    let cos = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    Ok(cos.acos().to_degrees())
}
