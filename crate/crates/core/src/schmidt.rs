//! Operator Schmidt decompositions `ρ = Σ σ_j A_j ⊗ B_j`.
//!
//! The generic route is an SVD of the realigned matrix. The Hermitian route
//! expands ρ over orthonormal Hermitian operator bases on both sides, which
//! yields a real coefficient matrix; its real SVD gives factors that are
//! Hermitian by construction.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{
    self, frob, numeric_rank, rank_from_descending, serde_matrix, svd, ComplexMatrix, ComplexVector,
    TolerancePolicy, C64,
};
use crate::state_core::{reshape_vector, BipartiteState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchmidtTerm {
    pub coeff: f64,
    #[serde(with = "serde_matrix")]
    pub a: ComplexMatrix,
    #[serde(with = "serde_matrix")]
    pub b: ComplexMatrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchmidtDecomposition {
    pub terms: Vec<SchmidtTerm>,
    pub sides_hermitian: bool,
    /// True when both sides are orthonormal families (not the case after
    /// [`complete_with`], where the leading side matrices are prescribed).
    pub orthonormal: bool,
    /// Every singular value of the realignment, kept or not, descending.
    pub singular_values: Vec<f64>,
}

impl SchmidtDecomposition {
    pub fn rank(&self) -> usize {
        self.terms.len()
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        let (m, n) = match self.terms.first() {
            Some(t) => (t.a.nrows(), t.b.nrows()),
            None => return ComplexMatrix::zeros(0, 0),
        };
        self.terms.iter().fold(ComplexMatrix::zeros(m * n, m * n), |acc, t| {
            acc + numkernel::kron(&t.a, &t.b) * C64::new(t.coeff, 0.0)
        })
    }

    /// `(σ_k / σ_1, σ_{k+1} / σ_1)` for Schmidt rank `k`: how far the last
    /// kept and the first dropped value sit from the truncation threshold.
    pub fn margin(&self) -> (f64, f64) {
        let top = self.singular_values.first().copied().unwrap_or(0.0);
        if top == 0.0 {
            return (0.0, 0.0);
        }
        let k = self.terms.len();
        let kept = if k == 0 { 0.0 } else { self.singular_values[k - 1] / top };
        let dropped = self.singular_values.get(k).copied().unwrap_or(0.0) / top;
        (kept, dropped)
    }

    /// Exchange the roles of the two sides.
    pub fn swapped(&self) -> Self {
        SchmidtDecomposition {
            terms: self
                .terms
                .iter()
                .map(|t| SchmidtTerm {
                    coeff: t.coeff,
                    a: t.b.clone(),
                    b: t.a.clone(),
                })
                .collect(),
            ..self.clone()
        }
    }
}

/// Span of the side matrices of a Schmidt decomposition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorSubspace {
    pub side: Side,
    #[serde(with = "serde_matrix_list")]
    pub basis: Vec<ComplexMatrix>,
    pub dim: usize,
}

impl OperatorSubspace {
    /// Hilbert-Schmidt coordinates `Tr(E_j† x)` in the orthonormal basis.
    pub fn coordinates(&self, x: &ComplexMatrix) -> ComplexVector {
        ComplexVector::from_iterator(self.dim, self.basis.iter().map(|e| hs_inner(e, x)))
    }

    /// Distance from `x` to the subspace.
    pub fn residual(&self, x: &ComplexMatrix) -> f64 {
        let c = self.coordinates(x);
        let proj = self
            .basis
            .iter()
            .zip(c.iter())
            .fold(ComplexMatrix::zeros(x.nrows(), x.ncols()), |acc, (e, &z)| acc + e * z);
        frob(&(x - proj))
    }
}

pub(crate) mod serde_matrix_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "serde_matrix")] ComplexMatrix);

    pub fn serialize<S: Serializer>(v: &[ComplexMatrix], s: S) -> std::result::Result<S::Ok, S::Error> {
        let w: Vec<Wrap> = v.iter().cloned().map(Wrap).collect();
        w.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<ComplexMatrix>, D::Error> {
        let w: Vec<Wrap> = Vec::deserialize(d)?;
        Ok(w.into_iter().map(|x| x.0).collect())
    }
}

/// `Tr(x† y)`.
pub fn hs_inner(x: &ComplexMatrix, y: &ComplexMatrix) -> C64 {
    x.iter().zip(y.iter()).map(|(a, b)| a.conj() * b).sum()
}

/// `R[(a, a'), (b, b')] = ρ[(a, b), (a', b')]`, an `M² × N²` matrix whose
/// singular values are the operator Schmidt coefficients.
pub fn realign(state: &BipartiteState) -> ComplexMatrix {
    let (m, n) = state.dims();
    realign_raw(state.matrix(), m, n)
}

pub fn realign_raw(mat: &ComplexMatrix, m: usize, n: usize) -> ComplexMatrix {
    let mut r = ComplexMatrix::zeros(m * m, n * n);
    for a in 0..m {
        for ap in 0..m {
            for b in 0..n {
                for bp in 0..n {
                    r[(a * m + ap, b * n + bp)] = mat[(a * n + b, ap * n + bp)];
                }
            }
        }
    }
    r
}

/// Orthonormal Hermitian basis of `n × n` matrices: the normalized identity
/// followed by generalized Gell-Mann matrices scaled to unit norm.
pub fn hermitian_basis(n: usize) -> Vec<ComplexMatrix> {
    let mut out = Vec::with_capacity(n * n);
    out.push(numkernel::identity(n) / C64::new((n as f64).sqrt(), 0.0));
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for j in 0..n {
        for k in j + 1..n {
            let mut sym = ComplexMatrix::zeros(n, n);
            sym[(j, k)] = C64::new(s, 0.0);
            sym[(k, j)] = C64::new(s, 0.0);
            out.push(sym);
            let mut anti = ComplexMatrix::zeros(n, n);
            anti[(j, k)] = C64::new(0.0, -s);
            anti[(k, j)] = C64::new(0.0, s);
            out.push(anti);
        }
    }
    for l in 1..n {
        let norm = ((l * (l + 1)) as f64).sqrt();
        let mut d = ComplexMatrix::zeros(n, n);
        for i in 0..l {
            d[(i, i)] = C64::new(1.0 / norm, 0.0);
        }
        d[(l, l)] = C64::new(-(l as f64) / norm, 0.0);
        out.push(d);
    }
    out
}

fn vec_to_matrix(col: &[C64], m: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(m, m, |i, j| col[i * m + j])
}

/// Order within clusters of (numerically) equal singular values by the
/// rounded entries of the left vector, so degenerate outputs are stable.
fn cluster_order(sigma: &[f64], keys: &[Vec<(i64, i64)>], pol: &TolerancePolicy) -> Vec<usize> {
    let top = sigma.first().copied().unwrap_or(0.0);
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && (sigma[start] - sigma[end]).abs() <= pol.rank_rtol * top {
            end += 1;
        }
        order[start..end].sort_by(|&x, &y| keys[y].cmp(&keys[x]).then(x.cmp(&y)));
        start = end;
    }
    order
}

fn round_key(v: impl Iterator<Item = C64>) -> Vec<(i64, i64)> {
    v.map(|z| ((z.re * 1e9).round() as i64, (z.im * 1e9).round() as i64))
        .collect()
}

/// Operator Schmidt decomposition of a state.
pub fn operator_schmidt(state: &BipartiteState, hermitian: bool) -> Result<SchmidtDecomposition> {
    let (m, n) = state.dims();
    operator_schmidt_raw(state.matrix(), m, n, hermitian, state.policy())
}

/// Operator Schmidt decomposition of an arbitrary `MN × MN` matrix.
pub fn operator_schmidt_raw(
    mat: &ComplexMatrix,
    m: usize,
    n: usize,
    hermitian: bool,
    pol: &TolerancePolicy,
) -> Result<SchmidtDecomposition> {
    let r = realign_raw(mat, m, n);
    if !hermitian {
        let dec = svd(&r);
        let k = rank_from_descending(&dec.sigma, pol);
        let keys: Vec<_> = (0..k).map(|j| round_key(dec.u.column(j).iter().copied())).collect();
        let order = cluster_order(&dec.sigma[..k], &keys, pol);
        let terms = order
            .into_iter()
            .map(|j| {
                let ucol: Vec<C64> = dec.u.column(j).iter().copied().collect();
                let vcol: Vec<C64> = dec.v.column(j).iter().map(|z| z.conj()).collect();
                SchmidtTerm {
                    coeff: dec.sigma[j],
                    a: vec_to_matrix(&ucol, m),
                    b: vec_to_matrix(&vcol, n),
                }
            })
            .collect();
        return Ok(SchmidtDecomposition {
            terms,
            sides_hermitian: false,
            orthonormal: true,
            singular_values: dec.sigma,
        });
    }

    let dev = numkernel::hermiticity_defect(mat);
    if dev > pol.scaled_atol(frob(mat)) {
        return Err(Error::NotHermitian { deviation: dev });
    }
    let ga = hermitian_basis(m);
    let gb = hermitian_basis(n);
    // P_A[k, (a, a')] = G_k[a', a], so T = P_A R P_B^T has entries Tr(ρ (G_k ⊗ H_l))
    let pa = ComplexMatrix::from_fn(m * m, m * m, |k, idx| ga[k][(idx % m, idx / m)]);
    let pb = ComplexMatrix::from_fn(n * n, n * n, |l, idx| gb[l][(idx % n, idx / n)]);
    let t = &pa * r * pb.transpose();
    let treal = DMatrix::<f64>::from_fn(m * m, n * n, |i, j| t[(i, j)].re);
    let dec = nalgebra::SVD::new(treal, true, true);
    let u = dec.u.expect("requested");
    let vt = dec.v_t.expect("requested");
    let sigma: Vec<f64> = dec.singular_values.iter().copied().collect();
    let k = rank_from_descending(&sigma, pol);
    let mut terms = Vec::with_capacity(k);
    let mut keys = Vec::with_capacity(k);
    for j in 0..k {
        let mut a = ComplexMatrix::zeros(m, m);
        for (idx, g) in ga.iter().enumerate() {
            a += g * C64::new(u[(idx, j)], 0.0);
        }
        let mut b = ComplexMatrix::zeros(n, n);
        for (idx, h) in gb.iter().enumerate() {
            b += h * C64::new(vt[(j, idx)], 0.0);
        }
        // sign convention: first non-negligible entry of vec(A) positive
        let flip = a
            .iter()
            .find(|z| z.norm() > 1e-8)
            .map(|z| if z.re.abs() >= z.im.abs() { z.re < 0.0 } else { z.im < 0.0 })
            .unwrap_or(false);
        if flip {
            a = -a;
            b = -b;
        }
        keys.push(round_key(a.transpose().iter().copied()));
        terms.push(SchmidtTerm {
            coeff: sigma[j],
            a: numkernel::hermitian_part(&a),
            b: numkernel::hermitian_part(&b),
        });
    }
    let order = cluster_order(&sigma[..k], &keys, pol);
    let terms = order.into_iter().map(|j| terms[j].clone()).collect();
    Ok(SchmidtDecomposition {
        terms,
        sides_hermitian: true,
        orthonormal: true,
        singular_values: sigma,
    })
}

pub fn schmidt_rank(state: &BipartiteState) -> usize {
    numeric_rank(&realign(state), state.policy())
}

/// Rank of the `M × N` reshaping of `v`.
pub fn vector_schmidt_rank(v: &ComplexVector, dims: (usize, usize), pol: &TolerancePolicy) -> Result<usize> {
    let (m, n) = dims;
    if v.len() != m * n {
        return Err(Error::Dimension(format!("vector of length {} is not in C^{m} ⊗ C^{n}", v.len())));
    }
    if v.norm() == 0.0 {
        return Err(Error::Contract("Schmidt rank of the zero vector".into()));
    }
    Ok(numeric_rank(&reshape_vector(v, m, n), pol))
}

/// Orthonormal Hermitian basis of the space A (or B) of ρ.
pub fn space_of(state: &BipartiteState, side: Side) -> Result<OperatorSubspace> {
    let dec = operator_schmidt(state, true)?;
    let basis: Vec<ComplexMatrix> = dec
        .terms
        .into_iter()
        .map(|t| match side {
            Side::A => t.a,
            Side::B => t.b,
        })
        .collect();
    Ok(OperatorSubspace {
        side,
        dim: basis.len(),
        basis,
    })
}

/// Schmidt decomposition whose first side matrices are exactly `f`.
///
/// Each `f_j` must lie in the space of the requested side and the family
/// must be linearly independent. When every `f_j` is Hermitian the other
/// factors are Hermitian too.
pub fn complete_with(state: &BipartiteState, side: Side, f: &[ComplexMatrix]) -> Result<SchmidtDecomposition> {
    if side == Side::B {
        return complete_with(&state.swap(), Side::A, f).map(|d| d.swapped());
    }
    let pol = state.policy();
    let m = state.dim_a();
    if f.iter().any(|x| x.nrows() != m || x.ncols() != m) {
        return Err(Error::Dimension(format!("prescribed matrices must be {m}x{m}")));
    }
    let hermitian = f.iter().all(|x| numkernel::hermiticity_defect(x) <= pol.scaled_atol(frob(x)));
    let dec = operator_schmidt(state, true)?;
    let k = dec.rank();
    let space: Vec<&ComplexMatrix> = dec.terms.iter().map(|t| &t.a).collect();
    let ys: Vec<ComplexMatrix> = dec.terms.iter().map(|t| &t.b * C64::new(t.coeff, 0.0)).collect();

    let s = f.len();
    if s > k {
        return Err(Error::Contract(format!(
            "{s} prescribed matrices exceed the Schmidt rank {k}"
        )));
    }
    let mut coords = ComplexMatrix::zeros(k, k);
    for (col, x) in f.iter().enumerate() {
        let mut proj = ComplexMatrix::zeros(m, m);
        for (j, e) in space.iter().enumerate() {
            let mut c = hs_inner(e, x);
            if hermitian {
                c = C64::new(c.re, 0.0);
            }
            coords[(j, col)] = c;
            proj += *e * c;
        }
        let resid = frob(&(x - proj));
        if resid > pol.scaled_atol(frob(x)) {
            return Err(Error::Contract(format!(
                "prescribed matrix {col} lies outside the space (residual {resid:.3e})"
            )));
        }
    }
    let given = coords.columns(0, s).into_owned();
    if numeric_rank(&given, pol) < s {
        return Err(Error::Contract("prescribed matrices are linearly dependent".into()));
    }
    // orthonormal completion in coordinate space (real when Hermitian)
    let mut extra: Vec<ComplexVector> = Vec::new();
    let g = numkernel::orthonormal_columns(&given, 1e-12);
    let mut current: Vec<ComplexVector> = g.column_iter().map(|c| c.into_owned()).collect();
    for j in 0..k {
        if current.len() == k {
            break;
        }
        let mut e = ComplexVector::zeros(k);
        e[j] = C64::new(1.0, 0.0);
        for _ in 0..2 {
            for q in &current {
                let c = q.dotc(&e);
                e -= q * c;
            }
        }
        let nn = e.norm();
        if nn > 1e-6 {
            let e = e / C64::new(nn, 0.0);
            current.push(e.clone());
            extra.push(e);
        }
    }
    for (idx, e) in extra.iter().enumerate() {
        coords.set_column(s + idx, e);
    }
    let cinv = numkernel::inverse(&coords, pol)?;
    let mut terms = Vec::with_capacity(k);
    for l in 0..k {
        let a = if l < s {
            f[l].clone()
        } else {
            space
                .iter()
                .enumerate()
                .fold(ComplexMatrix::zeros(m, m), |acc, (j, e)| acc + *e * coords[(j, l)])
        };
        let mut b = ys
            .iter()
            .enumerate()
            .fold(ComplexMatrix::zeros(state.dim_b(), state.dim_b()), |acc, (j, y)| {
                acc + y * cinv[(l, j)]
            });
        if hermitian {
            b = numkernel::hermitian_part(&b);
        }
        terms.push(SchmidtTerm { coeff: 1.0, a, b });
    }
    Ok(SchmidtDecomposition {
        terms,
        sides_hermitian: hermitian,
        orthonormal: false,
        singular_values: dec.singular_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{gen_schmidt_rank, random_density, random_hermitian, random_invertible, random_unitary, rng_for};
    use crate::numkernel::ZERO;
    use crate::state_core::{bell_state, LocalMap};
    use crate::numkernel::{from_real_diagonal, kron, ONE};

    fn pol() -> TolerancePolicy {
        TolerancePolicy::default()
    }

    fn pauli() -> [ComplexMatrix; 4] {
        let i = C64::new(0.0, 1.0);
        [
            numkernel::identity(2),
            ComplexMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]),
            ComplexMatrix::from_row_slice(2, 2, &[ZERO, -i, i, ZERO]),
            from_real_diagonal(&[1.0, -1.0]),
        ]
    }

    #[test]
    fn hermitian_basis_is_orthonormal() {
        for n in 1..5 {
            let b = hermitian_basis(n);
            assert_eq!(b.len(), n * n);
            for (i, x) in b.iter().enumerate() {
                assert!(numkernel::hermiticity_defect(x) == 0.0);
                for (j, y) in b.iter().enumerate() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((hs_inner(x, y) - C64::new(expect, 0.0)).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn product_state_realigns_to_rank_one() {
        let mut rng = rng_for(1, 1);
        let sa = random_density(2, 2, &mut rng);
        let sb = random_density(3, 3, &mut rng);
        let st = BipartiteState::product(&sa, &sb, pol()).unwrap();
        let s = svd(&realign(&st)).sigma;
        assert!((s[0] - sa.norm() * sb.norm()).abs() < 1e-14);
        assert!(s[1] < 1e-14);
        assert_eq!(schmidt_rank(&st), 1);
        let dec = operator_schmidt(&st, true).unwrap();
        assert_eq!(dec.rank(), 1);
        // A_1 ∝ σ_A
        let a = &dec.terms[0].a;
        let ratio = hs_inner(a, &sa).norm() / (a.norm() * sa.norm());
        assert!((ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bell_realignment_brute_force() {
        // Brute force: the Bell projector is (1/4) Σ_k s_k P_k ⊗ P_k with signs (1, 1, -1, 1),
        // so the realignment has four singular values equal to 2 * 1/4 = 1/2.
        let st = bell_state(pol());
        let p = pauli();
        let signs = [1.0, 1.0, -1.0, 1.0];
        let mut rebuilt = ComplexMatrix::zeros(4, 4);
        for k in 0..4 {
            rebuilt += kron(&p[k], &p[k]) * C64::new(signs[k] / 4.0, 0.0);
        }
        assert!((&rebuilt - st.matrix()).norm() < 1e-15);
        let s = svd(&realign(&st)).sigma;
        for x in &s {
            assert!((x - 0.5).abs() < 1e-14);
        }
        assert_eq!(schmidt_rank(&st), 4);
        let dec = operator_schmidt(&st, true).unwrap();
        assert_eq!(dec.rank(), 4);
        for t in &dec.terms {
            assert!((t.coeff - 0.5).abs() < 1e-14);
            assert!(numkernel::hermiticity_defect(&t.a) < 1e-15);
            assert!(numkernel::hermiticity_defect(&t.b) < 1e-15);
            // each A factor is a combination of Paulis (always true) with unit norm
            assert!((t.a.norm() - 1.0).abs() < 1e-14);
        }
        assert!((dec.reconstruct() - st.matrix()).norm() < 1e-14);
    }

    #[test]
    fn zero_padding_keeps_singular_values() {
        let mut rng = rng_for(2, 1);
        let small = random_density(4, 4, &mut rng);
        let mut big = ComplexMatrix::zeros(9, 9);
        for i in 0..4 {
            for j in 0..4 {
                big[((i / 2) * 3 + i % 2, (j / 2) * 3 + j % 2)] = small[(i, j)];
            }
        }
        let s1 = svd(&realign_raw(&small, 2, 2)).sigma;
        let s2 = svd(&realign_raw(&big, 3, 3)).sigma;
        for (a, b) in s1.iter().zip(s2.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(s2[4..].iter().all(|&x| x < 1e-14));
    }

    #[test]
    fn diagonal_state_schmidt_rank_matches_weight_matrix() {
        let mut rng = rng_for(3, 1);
        for _ in 0..10 {
            // p_ab of rank 2 as a 3x4 matrix
            let u = crate::gen::complex_gaussian(3, 2, &mut rng).map(|z| C64::new(z.re.abs(), 0.0));
            let v = crate::gen::complex_gaussian(2, 4, &mut rng).map(|z| C64::new(z.re.abs(), 0.0));
            let p = &u * &v;
            let mut d = vec![0.0; 12];
            for a in 0..3 {
                for b in 0..4 {
                    d[a * 4 + b] = p[(a, b)].re;
                }
            }
            let st = BipartiteState::new(3, 4, from_real_diagonal(&d), pol()).unwrap();
            let expect = numeric_rank(&p, &pol());
            assert_eq!(schmidt_rank(&st), expect);
            assert_eq!(operator_schmidt(&st, true).unwrap().rank(), expect);
            assert_eq!(operator_schmidt(&st, false).unwrap().rank(), expect);
        }
    }

    #[test]
    fn two_term_state_has_rank_two() {
        let mut rng = rng_for(4, 1);
        let st = gen_schmidt_rank(3, 3, 2, 4, false, pol()).unwrap().state;
        assert_eq!(schmidt_rank(&st), 2);
        // explicit A1⊗B1 + A2⊗B2 with independent sides
        let a1 = random_density(2, 2, &mut rng);
        let a2 = random_hermitian(2, &mut rng) * C64::new(0.05, 0.0);
        let b1 = random_density(2, 2, &mut rng);
        let b2 = random_hermitian(2, &mut rng) * C64::new(0.05, 0.0);
        let st = BipartiteState::new(2, 2, kron(&a1, &b1) + kron(&a2, &b2), pol()).unwrap();
        assert_eq!(schmidt_rank(&st), 2);
    }

    #[test]
    fn vector_schmidt_rank_cases() {
        let mut v = ComplexVector::zeros(4);
        v[0] = ONE;
        assert_eq!(vector_schmidt_rank(&v, (2, 2), &pol()).unwrap(), 1);
        v[3] = ONE;
        assert_eq!(vector_schmidt_rank(&v, (2, 2), &pol()).unwrap(), 2);
        let mut rng = rng_for(5, 1);
        let r = crate::gen::complex_gaussian(9, 1, &mut rng).column(0).into_owned();
        assert_eq!(vector_schmidt_rank(&r, (3, 3), &pol()).unwrap(), 3);
        assert!(vector_schmidt_rank(&ComplexVector::zeros(4), (2, 2), &pol()).is_err());
    }

    #[test]
    fn space_contains_reduction() {
        let mut rng = rng_for(6, 1);
        for t in 0..10 {
            let st = BipartiteState::new(3, 2, random_density(6, 1 + t % 6, &mut rng), pol()).unwrap();
            let sa = space_of(&st, Side::A).unwrap();
            let sb = space_of(&st, Side::B).unwrap();
            assert_eq!(sa.dim, schmidt_rank(&st));
            assert_eq!(sb.dim, sa.dim);
            assert!(sa.residual(st.reduce_a()) < 1e-12);
            assert!(sb.residual(st.reduce_b()) < 1e-12);
        }
        let prod = BipartiteState::product(&random_density(2, 2, &mut rng), &random_density(2, 1, &mut rng), pol()).unwrap();
        let sp = space_of(&prod, Side::A).unwrap();
        assert_eq!(sp.dim, 1);
    }

    #[test]
    fn sr3_space_dimension() {
        let st = gen_schmidt_rank(3, 3, 3, 8, false, pol()).unwrap().state;
        assert_eq!(space_of(&st, Side::A).unwrap().dim, 3);
    }

    #[test]
    fn complete_with_reduction_on_rank_two() {
        let st = gen_schmidt_rank(3, 4, 2, 2, false, pol()).unwrap().state;
        let ra = st.reduce_a().clone();
        let dec = complete_with(&st, Side::A, std::slice::from_ref(&ra)).unwrap();
        assert_eq!(dec.rank(), 2);
        assert!((&dec.terms[0].a - &ra).norm() == 0.0);
        assert!(dec.sides_hermitian);
        for t in &dec.terms {
            assert!(numkernel::hermiticity_defect(&t.b) < 1e-14);
        }
        // second A factor orthogonal to ρ_A
        assert!(hs_inner(&dec.terms[1].a, &ra).norm() < 1e-12);
        assert!((dec.reconstruct() - st.matrix()).norm() < 1e-12);

        let decb = complete_with(&st, Side::B, std::slice::from_ref(st.reduce_b())).unwrap();
        assert!((&decb.terms[0].b - st.reduce_b()).norm() == 0.0);
        assert!((decb.reconstruct() - st.matrix()).norm() < 1e-12);
    }

    #[test]
    fn complete_with_full_basis_and_errors() {
        let st = gen_schmidt_rank(2, 3, 3, 5, false, pol()).unwrap().state;
        let sp = space_of(&st, Side::A).unwrap();
        let dec = complete_with(&st, Side::A, &sp.basis).unwrap();
        assert!((dec.reconstruct() - st.matrix()).norm() < 1e-12);

        let mut rng = rng_for(7, 1);
        let st2 = gen_schmidt_rank(3, 3, 2, 6, false, pol()).unwrap().state;
        let outside = random_hermitian(3, &mut rng);
        assert!(complete_with(&st2, Side::A, &[outside]).is_err());
        let ra = st2.reduce_a().clone();
        assert!(complete_with(&st2, Side::A, &[ra.clone(), ra * C64::new(2.0, 0.0)]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(30))]

            #[test]
            fn routes_agree(seed in 0u64..10_000, m in 1usize..4, n in 1usize..4, r in 1usize..10) {
                let mut rng = rng_for(seed, 21);
                let r = r.min(m * n);
                let st = BipartiteState::new(m, n, random_density(m * n, r, &mut rng), pol()).unwrap();
                let h = operator_schmidt(&st, true).unwrap();
                let g = operator_schmidt(&st, false).unwrap();
                prop_assert_eq!(h.rank(), g.rank());
                prop_assert_eq!(h.rank(), schmidt_rank(&st));
                for (x, y) in h.terms.iter().zip(g.terms.iter()) {
                    prop_assert!((x.coeff - y.coeff).abs() <= 1e-8 * h.terms[0].coeff);
                }
                for dec in [&h, &g] {
                    prop_assert!((dec.reconstruct() - st.matrix()).norm() <= 1e-10 * st.norm().max(1.0));
                    for (i, x) in dec.terms.iter().enumerate() {
                        for (j, y) in dec.terms.iter().enumerate() {
                            let e = if i == j { 1.0 } else { 0.0 };
                            prop_assert!((hs_inner(&x.a, &y.a) - C64::new(e, 0.0)).norm() < 1e-10);
                            prop_assert!((hs_inner(&x.b, &y.b) - C64::new(e, 0.0)).norm() < 1e-10);
                        }
                    }
                }
            }

            #[test]
            fn rank_invariant_under_local_unitaries(seed in 0u64..10_000) {
                let mut rng = rng_for(seed, 22);
                let st = BipartiteState::new(3, 2, random_density(6, 2, &mut rng), pol()).unwrap();
                let k = schmidt_rank(&st);
                let map = LocalMap::new(random_unitary(3, &mut rng), random_unitary(2, &mut rng), &pol()).unwrap();
                prop_assert_eq!(schmidt_rank(&st.apply_local(&map, false).unwrap()), k);
                let inv = LocalMap::new(random_invertible(3, &mut rng), random_invertible(2, &mut rng), &pol()).unwrap();
                prop_assert_eq!(schmidt_rank(&st.apply_local(&inv, false).unwrap()), k);
            }

            #[test]
            fn vector_rank_bounds(seed in 0u64..10_000, m in 1usize..5, n in 1usize..5) {
                let mut rng = rng_for(seed, 23);
                let v = crate::gen::complex_gaussian(m * n, 1, &mut rng).column(0).into_owned();
                let k = vector_schmidt_rank(&v, (m, n), &pol()).unwrap();
                prop_assert!(k <= m.min(n));
                let a = crate::gen::complex_gaussian(m, 1, &mut rng).column(0).into_owned();
                let b = crate::gen::complex_gaussian(n, 1, &mut rng).column(0).into_owned();
                let p = crate::state_core::product_vector(&a, &b);
                prop_assert_eq!(vector_schmidt_rank(&p, (m, n), &pol()).unwrap(), 1);
            }
        }
    }
}
