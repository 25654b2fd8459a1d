//! Dense complex linear algebra used by every other module.
//!
//! All rank and zero decisions go through [`TolerancePolicy`]. Factorizations
//! are backed by `nalgebra`; this module fixes ordering and phase conventions
//! on top of it so that certificates are reproducible bit for bit:
//!
//! * eigenvalues are returned in ascending order, singular values descending;
//! * the first non-negligible component of every eigenvector (and of every
//!   left singular vector) is made real and positive.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
/// Dense complex matrix. Entries are finite by construction wherever a
/// matrix enters the crate from outside (see `state_core::load_state`).
pub type ComplexMatrix = DMatrix<C64>;
pub type ComplexVector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Thresholds for every numerical rank or zero decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TolerancePolicy {
    /// Singular values below `rank_rtol * sigma_max` count as zero.
    pub rank_rtol: f64,
    /// Absolute threshold for residual checks.
    pub zero_atol: f64,
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        TolerancePolicy {
            rank_rtol: 1e-8,
            zero_atol: 1e-10,
        }
    }
}

impl TolerancePolicy {
    pub fn new(rank_rtol: f64, zero_atol: f64) -> Result<Self> {
        let pol = TolerancePolicy {
            rank_rtol,
            zero_atol,
        };
        pol.validate()?;
        Ok(pol)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rank_rtol", self.rank_rtol), ("zero_atol", self.zero_atol)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Tolerance(format!("{name} = {v} must lie in (0, 1)")));
            }
        }
        Ok(())
    }

    /// Absolute tolerance scaled to the magnitude of the object under test.
    pub fn scaled_atol(&self, scale: f64) -> f64 {
        self.zero_atol * scale.max(1.0)
    }
}

/// Frobenius norm.
pub fn frob(m: &ComplexMatrix) -> f64 {
    m.norm()
}

pub fn identity(n: usize) -> ComplexMatrix {
    ComplexMatrix::identity(n, n)
}

pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a.kronecker(b)
}

pub fn from_real_diagonal(d: &[f64]) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(d.len(), d.len());
    for (i, &x) in d.iter().enumerate() {
        m[(i, i)] = C64::new(x, 0.0);
    }
    m
}

/// Frobenius norm of `m - m†`, halved.
pub fn hermiticity_defect(m: &ComplexMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    (m - m.adjoint()).norm() * 0.5
}

/// `(m + m†) / 2`.
pub fn hermitian_part(m: &ComplexMatrix) -> ComplexMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

pub fn check_finite(m: &ComplexMatrix) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let z = m[(i, j)];
            if !(z.re.is_finite() && z.im.is_finite()) {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

fn check_hermitian(m: &ComplexMatrix, pol: &TolerancePolicy) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Contract(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let dev = hermiticity_defect(m);
    if dev > pol.scaled_atol(frob(m)) {
        return Err(Error::NotHermitian { deviation: dev });
    }
    Ok(())
}

/// Rotate `v` so that its first non-negligible component is real positive.
pub fn fix_phase(v: &mut ComplexVector) {
    let peak = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return;
    }
    if let Some(z) = v.iter().find(|z| z.norm() > 1e-8 * peak).copied() {
        let phase = z.conj() / z.norm();
        v.iter_mut().for_each(|x| *x *= phase);
    }
}

/// Ascending eigenvalues with a unitary matrix of eigenvectors (columns).
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: ComplexMatrix,
}

impl HermitianEigen {
    pub fn vector(&self, k: usize) -> ComplexVector {
        self.vectors.column(k).into_owned()
    }

    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// `V diag(λ) V†`.
    pub fn reconstruct(&self) -> ComplexMatrix {
        let d = from_real_diagonal(&self.values);
        &self.vectors * d * self.vectors.adjoint()
    }
}

pub fn hermitian_eig(m: &ComplexMatrix, pol: &TolerancePolicy) -> Result<HermitianEigen> {
    check_hermitian(m, pol)?;
    Ok(hermitian_eig_unchecked(m))
}

/// Eigendecomposition of the Hermitian part of `m`, skipping the contract check.
pub(crate) fn hermitian_eig_unchecked(m: &ComplexMatrix) -> HermitianEigen {
    let n = m.nrows();
    if n == 0 {
        return HermitianEigen {
            values: vec![],
            vectors: ComplexMatrix::zeros(0, 0),
        };
    }
    let eig = nalgebra::SymmetricEigen::new(hermitian_part(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut vectors = ComplexMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (k, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src]);
        let mut v = eig.eigenvectors.column(src).into_owned();
        fix_phase(&mut v);
        vectors.set_column(k, &v);
    }
    HermitianEigen { values, vectors }
}

/// Thin singular value decomposition `m = U diag(σ) V†`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: ComplexMatrix,
    pub sigma: Vec<f64>,
    pub v: ComplexMatrix,
}

impl Svd {
    pub fn reconstruct(&self) -> ComplexMatrix {
        &self.u * from_real_diagonal(&self.sigma) * self.v.adjoint()
    }
}

pub fn svd(m: &ComplexMatrix) -> Svd {
    let (r, c) = m.shape();
    if r.min(c) == 0 {
        return Svd {
            u: ComplexMatrix::zeros(r, 0),
            sigma: vec![],
            v: ComplexMatrix::zeros(c, 0),
        };
    }
    if r < c {
        let t = jacobi_svd(&m.adjoint());
        return Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        };
    }
    jacobi_svd(m)
}

/// One-sided Jacobi SVD for `rows ≥ cols`. Accurate on rank-deficient
/// input, where the bidiagonal QR route loses digits.
fn jacobi_svd(m: &ComplexMatrix) -> Svd {
    let (r, c) = m.shape();
    let mut a = m.clone();
    let mut v = identity(c);
    let eps = f64::EPSILON;
    // pairs below this are numerically null on both sides
    let floor = 1e-30 * a.norm_squared();
    for _sweep in 0..80 {
        let mut rotated = false;
        for i in 0..c {
            for j in i + 1..c {
                let alpha = a.column(i).norm_squared();
                let beta = a.column(j).norm_squared();
                let gamma = a.column(i).dotc(&a.column(j));
                let g = gamma.norm();
                if g <= floor || g <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                // rotate column j by the phase of γ, then a real rotation
                let ph = (gamma / g).conj();
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for k in 0..r {
                    let x = a[(k, i)];
                    let y = a[(k, j)] * ph;
                    a[(k, i)] = x * cs - y * sn;
                    a[(k, j)] = x * sn + y * cs;
                }
                for k in 0..c {
                    let x = v[(k, i)];
                    let y = v[(k, j)] * ph;
                    v[(k, i)] = x * cs - y * sn;
                    v[(k, j)] = x * sn + y * cs;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..c).map(|k| a.column(k).norm()).collect();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let top = norms[order[0]];
    let mut u_cols: Vec<ComplexVector> = Vec::with_capacity(c);
    let mut v_out = ComplexMatrix::zeros(c, c);
    let mut sigma = Vec::with_capacity(c);
    for (dst, &src) in order.iter().enumerate() {
        let s = norms[src];
        sigma.push(s);
        v_out.set_column(dst, &v.column(src));
        if s > top * 1e-13 && u_cols.len() == dst {
            u_cols.push(a.column(src) / C64::new(s, 0.0));
        }
    }
    // complete U for zero singular values
    let known = u_cols.len();
    let mut u = if known == 0 {
        ComplexMatrix::zeros(r, 0)
    } else {
        ComplexMatrix::from_columns(&u_cols)
    };
    if known < c {
        u = complete_frame(&u, c);
    }
    for j in 0..c {
        let peak = u.column(j).iter().map(|z| z.norm()).fold(0.0, f64::max);
        let Some(z) = u.column(j).iter().find(|z| z.norm() > 1e-8 * peak).copied() else {
            continue;
        };
        // the same phase on both sides keeps u σ v† unchanged
        let phase = z.conj() / z.norm();
        u.column_mut(j).iter_mut().for_each(|x| *x *= phase);
        v_out.column_mut(j).iter_mut().for_each(|x| *x *= phase);
    }
    Svd { u, sigma, v: v_out }
}

/// Number of values (given in descending order) above the policy threshold.
pub fn rank_from_descending(values: &[f64], pol: &TolerancePolicy) -> usize {
    let top = match values.first() {
        Some(&t) => t,
        None => return 0,
    };
    if top <= pol.zero_atol {
        return 0;
    }
    values.iter().filter(|&&s| s > pol.rank_rtol * top).count()
}

pub fn numeric_rank(m: &ComplexMatrix, pol: &TolerancePolicy) -> usize {
    rank_from_descending(&svd(m).sigma, pol)
}

/// Orthonormal basis (columns) of the null space of `m`.
pub fn null_space(m: &ComplexMatrix, pol: &TolerancePolicy) -> ComplexMatrix {
    let (r, c) = m.shape();
    if c == 0 {
        return ComplexMatrix::zeros(0, 0);
    }
    // pad to at least c rows so the thin SVD returns a full V
    let padded = if r < c {
        let mut p = ComplexMatrix::zeros(c, c);
        p.view_mut((0, 0), (r, c)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let dec = svd(&padded);
    let rank = rank_from_descending(&dec.sigma, pol);
    dec.v.columns(rank, c - rank).into_owned()
}

/// Determinant by partially pivoted elimination.
pub fn det(m: &ComplexMatrix) -> Result<C64> {
    if !m.is_square() {
        return Err(Error::Contract(format!(
            "determinant of a non-square {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    let n = m.nrows();
    let mut a = m.clone();
    let mut acc = ONE;
    for k in 0..n {
        let (p, pmax) = (k..n)
            .map(|i| (i, a[(i, k)].norm()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pmax == 0.0 {
            return Ok(ZERO);
        }
        if p != k {
            a.swap_rows(p, k);
            acc = -acc;
        }
        let pivot = a[(k, k)];
        acc *= pivot;
        for i in k + 1..n {
            let f = a[(i, k)] / pivot;
            if f != ZERO {
                for j in k..n {
                    let t = a[(k, j)];
                    a[(i, j)] -= f * t;
                }
            }
        }
    }
    Ok(acc)
}

/// Solve `a x = b` for square invertible `a`.
pub fn solve(a: &ComplexMatrix, b: &ComplexMatrix, pol: &TolerancePolicy) -> Result<ComplexMatrix> {
    if !a.is_square() || a.nrows() != b.nrows() {
        return Err(Error::Contract("solve: incompatible shapes".into()));
    }
    let dec = svd(a);
    let rank = rank_from_descending(&dec.sigma, pol);
    if rank < a.nrows() {
        return Err(Error::Singular {
            what: "coefficient matrix".into(),
            value: dec.sigma.last().copied().unwrap_or(0.0),
        });
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular {
            what: "coefficient matrix".into(),
            value: 0.0,
        })
}

pub fn inverse(a: &ComplexMatrix, pol: &TolerancePolicy) -> Result<ComplexMatrix> {
    solve(a, &identity(a.nrows()), pol)
}

/// Hermitian positive definite `p` with `p m p† = I`.
pub fn inverse_sqrt(m: &ComplexMatrix, pol: &TolerancePolicy) -> Result<ComplexMatrix> {
    let eig = hermitian_eig(m, pol)?;
    let lo = eig.min();
    if lo <= pol.zero_atol {
        return Err(Error::Singular {
            what: "positive definite operand".into(),
            value: lo,
        });
    }
    let d: Vec<f64> = eig.values.iter().map(|&l| 1.0 / l.sqrt()).collect();
    let p = &eig.vectors * from_real_diagonal(&d) * eig.vectors.adjoint();
    Ok(hermitian_part(&p))
}

/// Hermitian positive square root of a PSD matrix (negative noise clipped).
pub fn psd_sqrt(m: &ComplexMatrix, pol: &TolerancePolicy) -> Result<ComplexMatrix> {
    let eig = hermitian_eig(m, pol)?;
    let d: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0).sqrt()).collect();
    Ok(hermitian_part(
        &(&eig.vectors * from_real_diagonal(&d) * eig.vectors.adjoint()),
    ))
}

/// Gram-Schmidt on the columns of `m`; drops columns whose residual norm
/// falls below `drop_tol` times their original norm.
pub fn orthonormal_columns(m: &ComplexMatrix, drop_tol: f64) -> ComplexMatrix {
    let mut basis: Vec<ComplexVector> = Vec::new();
    for j in 0..m.ncols() {
        let orig = m.column(j).into_owned();
        let n0 = orig.norm();
        if n0 == 0.0 {
            continue;
        }
        let mut v = orig;
        // two passes for stability
        for _ in 0..2 {
            for q in &basis {
                let c = q.dotc(&v);
                v -= q * c;
            }
        }
        let n1 = v.norm();
        if n1 > drop_tol * n0 {
            basis.push(v / C64::new(n1, 0.0));
        }
    }
    if basis.is_empty() {
        return ComplexMatrix::zeros(m.nrows(), 0);
    }
    ComplexMatrix::from_columns(&basis)
}

/// Complete the orthonormal columns of `frame` to `target` columns using
/// coordinate vectors, lowest index first.
pub fn complete_frame(frame: &ComplexMatrix, target: usize) -> ComplexMatrix {
    let n = frame.nrows();
    let mut cols: Vec<ComplexVector> = frame.column_iter().map(|c| c.into_owned()).collect();
    let mut k = 0;
    while cols.len() < target.min(n) && k < n {
        let mut e = ComplexVector::zeros(n);
        e[k] = ONE;
        for _ in 0..2 {
            for q in &cols {
                let c = q.dotc(&e);
                e -= q * c;
            }
        }
        let nn = e.norm();
        if nn > 1e-6 {
            cols.push(e / C64::new(nn, 0.0));
        }
        k += 1;
    }
    if cols.is_empty() {
        return ComplexMatrix::zeros(n, 0);
    }
    ComplexMatrix::from_columns(&cols)
}

/// Frobenius mass of the off-diagonal part.
pub fn off_diagonal_norm(m: &ComplexMatrix) -> f64 {
    let mut acc = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i != j {
                acc += m[(i, j)].norm_sqr();
            }
        }
    }
    acc.sqrt()
}

/// Serde adapter storing a complex matrix as `{rows, cols, data: [[re, im], ...]}`
/// with row-major data.
pub mod serde_matrix {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        rows: usize,
        cols: usize,
        data: Vec<[f64; 2]>,
    }

    pub fn to_pairs(m: &ComplexMatrix) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.push([m[(i, j)].re, m[(i, j)].im]);
            }
        }
        out
    }

    pub fn from_pairs(rows: usize, cols: usize, data: &[[f64; 2]]) -> Option<ComplexMatrix> {
        if data.len() != rows * cols {
            return None;
        }
        Some(ComplexMatrix::from_fn(rows, cols, |i, j| {
            let [re, im] = data[i * cols + j];
            C64::new(re, im)
        }))
    }

    pub fn serialize<S: Serializer>(m: &ComplexMatrix, s: S) -> std::result::Result<S::Ok, S::Error> {
        Repr {
            rows: m.nrows(),
            cols: m.ncols(),
            data: to_pairs(m),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<ComplexMatrix, D::Error> {
        let r = Repr::deserialize(d)?;
        from_pairs(r.rows, r.cols, &r.data)
            .ok_or_else(|| serde::de::Error::custom("matrix data length does not match rows*cols"))
    }
}

/// Serde adapter for complex vectors as `[[re, im], ...]`.
pub mod serde_vector {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &ComplexVector, s: S) -> std::result::Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = v.iter().map(|z| [z.re, z.im]).collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<ComplexVector, D::Error> {
        let pairs: Vec<[f64; 2]> = Vec::deserialize(d)?;
        Ok(ComplexVector::from_iterator(
            pairs.len(),
            pairs.iter().map(|p| C64::new(p[0], p[1])),
        ))
    }
}
