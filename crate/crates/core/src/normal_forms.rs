//! Local-equivalence normal forms.
//!
//! * Schmidt rank two: a congruence `S ⊗ W` making the state diagonal.
//! * Schmidt rank three: the real-symmetric congruences behind the
//!   undistillability of such states.
//! * PPT states of rank `N`: a block form whose blocks are commuting normal
//!   matrices, read off as `N` product terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gen::{complex_gaussian_vector, rng_for};
use crate::numkernel::{
    self, frob, hermitian_part, inverse, inverse_sqrt, kron, off_diagonal_norm, serde_vector, svd,
    ComplexMatrix, ComplexVector, C64, ONE,
};
use crate::schmidt::{complete_with, schmidt_rank, space_of, Side};
use crate::state_core::{partial_transpose_raw, BipartiteState, LocalMap};
use crate::witness::is_npt;

fn congruence(state: &BipartiteState, map: &LocalMap) -> ComplexMatrix {
    let k = kron(&map.s, &map.w);
    &k * state.matrix() * k.adjoint()
}

/// Unitary `U` with `U† X U` diagonal for Hermitian `X`.
fn diagonalizer(x: &ComplexMatrix) -> ComplexMatrix {
    numkernel::hermitian_eig_unchecked(&hermitian_part(x)).vectors
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CCNormalForm {
    pub map: LocalMap,
    /// Diagonal of `(S ⊗ W) ρ (S ⊗ W)†` in A-major order.
    pub diagonal: Vec<f64>,
    pub off_diag_residual: f64,
}

/// One weighted term `w |a⟩⟨a| ⊗ |b⟩⟨b|` with unit vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProductTerm {
    pub weight: f64,
    #[serde(with = "serde_vector")]
    pub a: ComplexVector,
    #[serde(with = "serde_vector")]
    pub b: ComplexVector,
}

impl ProductTerm {
    pub fn matrix(&self) -> ComplexMatrix {
        let v = kron(
            &ComplexMatrix::from_columns(&[self.a.clone()]),
            &ComplexMatrix::from_columns(&[self.b.clone()]),
        );
        &v * v.adjoint() * C64::new(self.weight, 0.0)
    }
}

pub fn reconstruct_terms(terms: &[ProductTerm], m: usize, n: usize) -> ComplexMatrix {
    terms
        .iter()
        .fold(ComplexMatrix::zeros(m * n, m * n), |acc, t| acc + t.matrix())
}

impl CCNormalForm {
    /// `ρ = Σ d_ab (S⁻¹|a⟩ ⊗ W⁻¹|b⟩)(…)†`, skipping zero entries.
    pub fn product_decomposition(&self) -> Result<Vec<ProductTerm>> {
        let pol = numkernel::TolerancePolicy::default();
        let si = inverse(&self.map.s, &pol)?;
        let wi = inverse(&self.map.w, &pol)?;
        let (m, n) = (si.nrows(), wi.nrows());
        let mut out = Vec::new();
        for a in 0..m {
            for b in 0..n {
                let d = self.diagonal[a * n + b];
                if d == 0.0 {
                    continue;
                }
                let va = si.column(a).into_owned();
                let vb = wi.column(b).into_owned();
                let (na, nb) = (va.norm(), vb.norm());
                out.push(ProductTerm {
                    weight: d * na * na * nb * nb,
                    a: va / C64::new(na, 0.0),
                    b: vb / C64::new(nb, 0.0),
                });
            }
        }
        Ok(out)
    }

    /// Recompute the congruence: off-diagonal mass at most
    /// `rank_rtol·‖ρ‖`, diagonal matching and nonnegative.
    pub fn verify(&self, state: &BipartiteState) -> Result<()> {
        let pol = state.policy();
        let (m, n) = state.dims();
        if self.map.s.nrows() != m || self.map.w.nrows() != n {
            return Err(Error::Dimension("normal form does not match the state".into()));
        }
        let d = congruence(state, &self.map);
        let scale = state.norm();
        let off = off_diagonal_norm(&d);
        if off > pol.rank_rtol * scale {
            return Err(Error::Contract(format!("congruence leaves off-diagonal mass {off:.3e}")));
        }
        for (k, &x) in self.diagonal.iter().enumerate() {
            if (d[(k, k)].re - x).abs() > pol.rank_rtol * scale || x < -pol.zero_atol * scale {
                return Err(Error::Contract(format!("diagonal entry {k} does not reproduce")));
            }
        }
        Ok(())
    }
}

/// Diagonalizing congruence of a Schmidt-rank-2 state with full local ranks.
pub fn cc_normal_form(state: &BipartiteState) -> Result<CCNormalForm> {
    let pol = *state.policy();
    let sr = schmidt_rank(state);
    if sr != 2 {
        return Err(Error::SchmidtRank { expected: 2, found: sr });
    }
    let (m, n) = state.dims();
    let ra = state.reduce_a().clone();
    let dec = complete_with(state, Side::A, &[ra.clone()])?;
    let s0 = inverse_sqrt(&ra, &pol)?;
    let u = diagonalizer(&(&s0 * &dec.terms[1].a * &s0));
    let s = u.adjoint() * s0;
    let step = BipartiteState::assemble(
        m,
        n,
        congruence(state, &LocalMap::new(s.clone(), numkernel::identity(n), &pol)?),
        pol,
    );

    let rb = step.reduce_b().clone();
    let dec = complete_with(&step, Side::B, &[rb.clone()])?;
    let t0 = inverse_sqrt(&rb, &pol)?;
    let v = diagonalizer(&(&t0 * &dec.terms[1].b * &t0));
    let w = v.adjoint() * t0;

    let mut map = LocalMap::new(s, w, &pol)?;
    let d = congruence(state, &map);
    let c = (state.trace() / d.trace().re).sqrt();
    map.s *= C64::new(c, 0.0);
    let d = congruence(state, &map);
    let off = off_diagonal_norm(&d);
    if off > 1e-6 * state.norm() {
        return Err(Error::Contract(format!(
            "classical-classical congruence failed (off-diagonal mass {off:.3e})"
        )));
    }
    Ok(CCNormalForm {
        map,
        diagonal: (0..m * n).map(|k| d[(k, k)].re).collect(),
        off_diag_residual: off,
    })
}

/// Outcome of the rank-one search in the Schmidt-rank-3 A-space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sr3Form {
    pub map: LocalMap,
    /// Transformed A factors: identity, `|0⟩⟨0|`, real symmetric tridiagonal.
    #[serde(with = "crate::schmidt::serde_matrix_list")]
    pub factors: Vec<ComplexMatrix>,
    /// `‖ρ' - ρ'^{T_A}‖`: zero when every A factor is real symmetric.
    pub symmetry_residual: f64,
    pub min_eigenvalue: f64,
    pub ppt: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Sr3Search {
    Found(Box<Sr3Form>),
    /// No rank-one element: the smallest spread of the `M-1` degenerate
    /// eigenvalues found, relative to the spectral scale.
    Missed { achieved: f64 },
}

/// Spread of the tightest `m-1` eigenvalue cluster of `x`, relative to its
/// spectral range, and the isolated eigenvector.
fn cluster_spread(x: &ComplexMatrix) -> (f64, ComplexVector, f64) {
    let e = numkernel::hermitian_eig_unchecked(x);
    let m = e.values.len();
    let range = (e.values[m - 1] - e.values[0]).max(f64::MIN_POSITIVE);
    // isolate the top or the bottom eigenvalue
    let low = (e.values[m - 2] - e.values[0]) / range;
    let high = (e.values[m - 1] - e.values[1]) / range;
    if low <= high {
        (low, e.vector(m - 1), e.values[0])
    } else {
        (high, e.vector(0), e.values[m - 1])
    }
}

/// Householder reduction `T = Q X Q†` to tridiagonal form by reflections
/// on indices `1..`, so `Q e_0 = e_0`.
fn tridiagonalize(x: &ComplexMatrix) -> (ComplexMatrix, ComplexMatrix) {
    let m = x.nrows();
    let mut t = x.clone();
    let mut q = numkernel::identity(m);
    for k in 0..m.saturating_sub(2) {
        let col: ComplexVector = t.view((k + 1, k), (m - k - 1, 1)).column(0).into_owned();
        let alpha = col.norm();
        if col.rows(1, col.len() - 1).norm() <= 1e-15 * alpha.max(f64::MIN_POSITIVE) {
            continue;
        }
        let phase = if col[0].norm() > 0.0 { col[0] / col[0].norm() } else { ONE };
        let mut v = col.clone();
        v[0] += phase * alpha;
        let v = &v / C64::new(v.norm(), 0.0);
        let mut h = numkernel::identity(m);
        let block = numkernel::identity(m - k - 1) - (&v * v.adjoint()) * C64::new(2.0, 0.0);
        h.view_mut((k + 1, k + 1), (m - k - 1, m - k - 1)).copy_from(&block);
        t = &h * &t * h.adjoint();
        q = &h * q;
    }
    (hermitian_part(&t), q)
}

/// Diagonal unitary `D` (with `D_00 = 1`) making the off-diagonal of a
/// Hermitian tridiagonal `t` real and nonnegative.
fn realify_tridiagonal(t: &ComplexMatrix) -> ComplexMatrix {
    let m = t.nrows();
    let mut d = ComplexMatrix::identity(m, m);
    let mut ph = ONE;
    for k in 1..m {
        let z = t[(k, k - 1)];
        // (D T D†)_{k,k-1} = d_k z conj(d_{k-1})
        let u = if z.norm() > 0.0 { z.conj() / z.norm() } else { ONE };
        ph *= u;
        d[(k, k)] = ph;
    }
    d
}

/// Search the A-space of a Schmidt-rank-3 state for a rank-one Hermitian
/// element and, on success, the congruence making every A factor real
/// symmetric. `grid` is the number of angles sampled before refinement.
pub fn sr3_tridiagonal_form(state: &BipartiteState, grid: usize) -> Result<Sr3Search> {
    let pol = *state.policy();
    let sr = schmidt_rank(state);
    if sr != 3 {
        return Err(Error::SchmidtRank { expected: 3, found: sr });
    }
    let (st, va, vb) = state.compress_to_support();
    let (m, n) = st.dims();
    if m < 3 {
        return Err(Error::Contract("the tridiagonal form needs local rank at least three on A".into()));
    }
    let s0 = inverse_sqrt(st.reduce_a(), &pol)?;
    // traceless part of the normalized A-space
    let space = space_of(&st, Side::A)?;
    let id = numkernel::identity(m);
    let mut traceless: Vec<ComplexMatrix> = Vec::new();
    for e in &space.basis {
        let mut x = &s0 * e * &s0;
        let tr = x.trace() / C64::new(m as f64, 0.0);
        x -= &id * tr;
        for q in &traceless {
            let c = numkernel::hermitian_part(q).iter().zip(x.iter()).map(|(a, b)| a.conj() * b).sum::<C64>();
            x -= q * c;
        }
        let nx = frob(&x);
        if nx > 1e-8 {
            traceless.push(hermitian_part(&(x / C64::new(nx, 0.0))));
        }
    }
    if traceless.len() != 2 {
        return Err(Error::Contract(format!(
            "normalized A-space has {} traceless directions, expected 2",
            traceless.len()
        )));
    }
    let along = |th: f64| &traceless[0] * C64::new(th.cos(), 0.0) + &traceless[1] * C64::new(th.sin(), 0.0);
    let f = |th: f64| cluster_spread(&along(th)).0;

    let grid = grid.max(8);
    let step = std::f64::consts::PI / grid as f64;
    let mut best = (f64::INFINITY, 0.0);
    let values: Vec<f64> = (0..grid).map(|k| f(k as f64 * step)).collect();
    for k in 0..grid {
        let prev = values[(k + grid - 1) % grid];
        let next = values[(k + 1) % grid];
        if values[k] <= prev && values[k] <= next {
            // golden-section refinement on the bracket
            let (mut a, mut b) = ((k as f64 - 1.0) * step, (k as f64 + 1.0) * step);
            let g = (5f64.sqrt() - 1.0) / 2.0;
            let mut c = b - g * (b - a);
            let mut d = a + g * (b - a);
            for _ in 0..80 {
                if f(c) < f(d) {
                    b = d;
                } else {
                    a = c;
                }
                c = b - g * (b - a);
                d = a + g * (b - a);
            }
            let th = 0.5 * (a + b);
            let v = f(th);
            if v < best.0 {
                best = (v, th);
            }
        }
    }
    if best.0 > pol.rank_rtol {
        return Ok(Sr3Search::Missed { achieved: best.0 });
    }
    let (_, v, _) = cluster_spread(&along(best.1));
    // U1 v = e_0 turns the rank-one element into a multiple of |0⟩⟨0|
    let u1 = numkernel::complete_frame(&ComplexMatrix::from_columns(&[v]), m).adjoint();
    let a3 = &u1 * along(best.1 + std::f64::consts::FRAC_PI_2) * u1.adjoint();
    let (t, q) = tridiagonalize(&a3);
    let d = realify_tridiagonal(&t);
    let s_small = &d * &q * &u1 * &s0;
    let rho = congruence(&st, &LocalMap::new(s_small.clone(), numkernel::identity(n), &pol)?);
    let symmetry_residual = frob(&(&rho - partial_transpose_raw(&rho, m, n)));
    let rep = is_npt(&BipartiteState::assemble(m, n, rho, pol));
    let mut e00 = ComplexMatrix::zeros(m, m);
    e00[(0, 0)] = ONE;
    Ok(Sr3Search::Found(Box::new(Sr3Form {
        map: LocalMap::new(embed_map(&s_small, &va), embed_map(&numkernel::identity(n), &vb), &pol)?,
        factors: vec![id, e00, hermitian_part(&(&d * &t * d.adjoint()))],
        symmetry_residual,
        min_eigenvalue: rep.min_eigenvalue,
        ppt: !rep.npt,
    })))
}

/// Extend a map on `range(V)` by the identity on the complement.
fn embed_map(s: &ComplexMatrix, v: &ComplexMatrix) -> ComplexMatrix {
    let d = v.nrows();
    v * s * v.adjoint() + numkernel::identity(d) - v * v.adjoint()
}

/// Congruence of a 2×N Schmidt-rank-3 state making its A factors real.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Realification {
    pub map: LocalMap,
    /// Largest imaginary entry among the transformed, normalized A factors.
    pub residual: f64,
    pub min_eigenvalue: f64,
    pub ppt: bool,
}

/// Real-symmetric congruence for a state whose A side is two-dimensional.
pub fn sr3_two_by_n_realify(state: &BipartiteState) -> Result<Realification> {
    let pol = *state.policy();
    let (m, n) = state.dims();
    if m != 2 {
        return Err(Error::Contract(format!("side A has dimension {m}, expected 2")));
    }
    let sr = schmidt_rank(state);
    if sr != 3 {
        return Err(Error::SchmidtRank { expected: 3, found: sr });
    }
    let s0 = inverse_sqrt(state.reduce_a(), &pol)?;
    let space = space_of(state, Side::A)?;
    let id = numkernel::identity(2);
    let traceless: Vec<ComplexMatrix> = space
        .basis
        .iter()
        .map(|e| {
            let x = &s0 * e * &s0;
            let tr = x.trace() * C64::new(0.5, 0.0);
            hermitian_part(&(x - &id * tr))
        })
        .collect();
    let lead = traceless
        .iter()
        .max_by(|a, b| frob(a).total_cmp(&frob(b)))
        .expect("three factors");
    let u = diagonalizer(lead).adjoint();
    // the other factors have an off-diagonal entry r e^{iφ}; rotate it real
    let mut phi = 0.0;
    let mut best = 0.0;
    for x in &traceless {
        let y = &u * x * u.adjoint();
        let z = y[(0, 1)];
        if z.norm() > best {
            best = z.norm();
            phi = z.arg();
        }
    }
    let mut d = numkernel::identity(2);
    d[(1, 1)] = C64::from_polar(1.0, phi);
    let s = &d * &u * &s0;
    let mut residual: f64 = 0.0;
    for e in &space.basis {
        let y = &s * e * s.adjoint();
        let scale = frob(&y).max(f64::MIN_POSITIVE);
        residual = residual.max(y.iter().map(|z| z.im.abs()).fold(0.0, f64::max) / scale);
    }
    let map = LocalMap::new(s, numkernel::identity(n), &pol)?;
    if residual > pol.rank_rtol {
        return Err(Error::Contract(format!(
            "realification residual {residual:.3e} above tolerance"
        )));
    }
    let rep = is_npt(&BipartiteState::assemble(2, n, congruence(state, &map), pol));
    Ok(Realification {
        map,
        residual,
        min_eigenvalue: rep.min_eigenvalue,
        ppt: !rep.npt,
    })
}

/// Canonical form of a PPT state of rank `N`: blocks `[N_0, …, N_{M-2}, I]`
/// of commuting normal matrices and the resulting product terms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PPTCanonicalForm {
    /// Local map in compressed coordinates taking the factor to canonical blocks.
    pub map: LocalMap,
    #[serde(with = "crate::schmidt::serde_matrix_list")]
    pub blocks: Vec<ComplexMatrix>,
    pub product_terms: Vec<ProductTerm>,
    /// `max_i ‖N_i N_i† - N_i† N_i‖ / max(1, ‖N_i‖²)`.
    pub normality_defect: f64,
    /// `max_{i<j} ‖[N_i, N_j]‖ / max(1, ‖N_i‖‖N_j‖)`.
    pub commutator_defect: f64,
    /// Off-diagonal mass of the blocks in the common eigenbasis, relative.
    pub diagonalization_defect: f64,
    /// `‖Σ terms - ρ‖ / ‖ρ‖`.
    pub reconstruction_residual: f64,
    /// Condition number of the block normalized to the identity.
    pub condition: f64,
}

fn condition_number(x: &ComplexMatrix) -> f64 {
    let s = svd(x);
    let lo = s.sigma.last().copied().unwrap_or(0.0);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        s.sigma[0] / lo
    }
}

/// Product-form decomposition of a PPT state whose rank equals its B-side
/// local rank `N ≥ M`.
pub fn ppt_rank_n_canonical(state: &BipartiteState) -> Result<PPTCanonicalForm> {
    let pol = *state.policy();
    let rep = is_npt(state);
    if rep.npt {
        return Err(Error::NotPpt);
    }
    let (st, va, vb) = state.compress_to_support();
    let (m, n) = st.dims();
    let rank = st.rank();
    if rank != n {
        return Err(Error::Contract(format!("rank {rank} differs from the B local rank {n}")));
    }
    if m > n {
        return Err(Error::Contract(format!("A local rank {m} exceeds B local rank {n}")));
    }
    let blocks = st.factor_blocks().blocks;

    // candidate combinations t: each block, then seeded random mixtures
    let mut candidates: Vec<ComplexVector> = (0..m)
        .map(|i| {
            let mut e = ComplexVector::zeros(m);
            e[i] = ONE;
            e
        })
        .collect();
    let mut rng = rng_for(0x7070_7472, 0);
    for _ in 0..8 {
        let g = complex_gaussian_vector(m, &mut rng);
        candidates.push(&g / C64::new(g.norm(), 0.0));
    }
    let combine = |t: &ComplexVector| {
        t.iter()
            .zip(&blocks)
            .fold(ComplexMatrix::zeros(n, n), |acc, (c, b)| acc + b * *c)
    };
    let (t, cond) = candidates
        .into_iter()
        .map(|t| {
            let c = condition_number(&combine(&t));
            (t, c)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one candidate");
    if !cond.is_finite() || cond > 1.0 / pol.rank_rtol {
        return Err(Error::Singular {
            what: "every block combination".into(),
            value: 1.0 / cond,
        });
    }
    // S unitary with last row conj(t): new last block Σ t_k C_k
    let q = numkernel::complete_frame(&ComplexMatrix::from_columns(&[t.clone()]), m);
    let qa = q.adjoint();
    let mut s = ComplexMatrix::zeros(m, m);
    for i in 0..m - 1 {
        s.set_row(i, &qa.row(i + 1));
    }
    s.set_row(m - 1, &qa.row(0));
    let new_blocks: Vec<ComplexMatrix> = (0..m)
        .map(|i| {
            (0..m).fold(ComplexMatrix::zeros(n, n), |acc, k| acc + &blocks[k] * s[(i, k)].conj())
        })
        .collect();
    let tinv = inverse(&new_blocks[m - 1], &pol)?;
    let w = tinv.adjoint();
    let normal: Vec<ComplexMatrix> = new_blocks.iter().map(|c| c * &tinv).collect();

    let mut normality_defect: f64 = 0.0;
    let mut commutator_defect: f64 = 0.0;
    for (i, x) in normal.iter().enumerate() {
        let nx = frob(x);
        normality_defect =
            normality_defect.max(frob(&(x * x.adjoint() - x.adjoint() * x)) / nx.powi(2).max(1.0));
        for y in normal.iter().skip(i + 1) {
            commutator_defect = commutator_defect.max(frob(&(x * y - y * x)) / (nx * frob(y)).max(1.0));
        }
    }
    let gate = pol.rank_rtol * cond;
    if normality_defect > gate || commutator_defect > gate {
        return Err(Error::Contract(format!(
            "blocks are not commuting normal matrices (normality {normality_defect:.3e}, commutator {commutator_defect:.3e})"
        )));
    }

    // common eigenbasis from a generic Hermitian combination
    let mut h = ComplexMatrix::zeros(n, n);
    let mut rng = rng_for(0x7070_7472, 1);
    for x in &normal[..m - 1] {
        let c = complex_gaussian_vector(2, &mut rng);
        h += (x + x.adjoint()) * C64::new(c[0].re, 0.0) + (x - x.adjoint()) * C64::new(0.0, c[1].re);
    }
    let u = diagonalizer(&h);
    let mut diagonalization_defect: f64 = 0.0;
    let diag: Vec<ComplexMatrix> = normal
        .iter()
        .map(|x| {
            let y = u.adjoint() * x * &u;
            diagonalization_defect = diagonalization_defect.max(off_diagonal_norm(&y) / frob(x).max(1.0));
            y
        })
        .collect();

    // row k of the canonical factor is conj(a_k ⊗ U e_k) with a_k[i] = conj(d_ik)
    let si = inverse(&s, &pol)?;
    let wi = inverse(&w, &pol)?;
    let mut terms = Vec::with_capacity(n);
    for k in 0..n {
        let a = ComplexVector::from_fn(m, |i, _| diag[i][(k, k)].conj());
        let b = u.column(k).into_owned();
        let a = &va * (&si * a);
        let b = &vb * (&wi * b);
        let (na, nb) = (a.norm(), b.norm());
        if na == 0.0 || nb == 0.0 {
            continue;
        }
        let mut a = a / C64::new(na, 0.0);
        let mut b = b / C64::new(nb, 0.0);
        numkernel::fix_phase(&mut a);
        numkernel::fix_phase(&mut b);
        terms.push(ProductTerm {
            weight: (na * nb).powi(2),
            a,
            b,
        });
    }
    let (fm, fn_) = state.dims();
    let recon = reconstruct_terms(&terms, fm, fn_);
    let reconstruction_residual = frob(&(recon - state.matrix())) / state.norm();
    Ok(PPTCanonicalForm {
        map: LocalMap::new(s, w, &pol)?,
        blocks: normal,
        product_terms: terms,
        normality_defect,
        commutator_defect,
        diagonalization_defect,
        reconstruction_residual,
        condition: cond,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{gen_ppt_rank_n, gen_schmidt_rank, random_density, random_invertible};
    use crate::numkernel::{from_real_diagonal, TolerancePolicy};
    use crate::state_core::{bell_state, product_vector, projector};

    fn pol() -> TolerancePolicy {
        TolerancePolicy::default()
    }

    #[test]
    fn cc_on_diagonal_state() {
        let st = BipartiteState::new(2, 2, from_real_diagonal(&[0.5, 0.0, 0.0, 0.5]), pol()).unwrap();
        let f = cc_normal_form(&st).unwrap();
        assert!(f.off_diag_residual < 1e-14);
        f.verify(&st).unwrap();
        let mut d = f.diagonal.clone();
        d.sort_by(f64::total_cmp);
        assert!((d[2] - 0.5).abs() < 1e-12 && (d[3] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cc_on_generated_states() {
        for (m, n) in [(2, 2), (3, 3), (3, 4)] {
            for seed in 0..5 {
                let st = gen_schmidt_rank(m, n, 2, seed, false, pol()).unwrap().state;
                let f = cc_normal_form(&st).unwrap();
                assert!(f.off_diag_residual <= 1e-8 * st.norm());
                assert!(f.diagonal.iter().all(|&x| x >= -1e-10));
                let terms = f.product_decomposition().unwrap();
                let recon = reconstruct_terms(&terms, m, n);
                assert!(frob(&(recon - st.matrix())) <= 1e-8 * st.norm());
                // round trip through the inverse map
                let back = f.map.inverse(&pol()).unwrap();
                let d = BipartiteState::assemble(m, n, congruence(&st, &f.map), pol());
                assert!(frob(&(congruence(&d, &back) - st.matrix())) <= 1e-9 * st.norm());
            }
        }
    }

    #[test]
    fn cc_rejects_other_ranks() {
        assert!(matches!(
            cc_normal_form(&bell_state(pol())),
            Err(Error::SchmidtRank { expected: 2, .. })
        ));
    }

    fn sr3_with_rank_one_factor(seed: u64) -> BipartiteState {
        // I ⊗ B1 + ε (|v⟩⟨v| - I/3) ⊗ B2 + ε X ⊗ B3 after a random local map
        let mut rng = rng_for(seed, 31);
        let b1 = random_density(3, 3, &mut rng) + from_real_diagonal(&[0.3; 3]);
        let mut v = complex_gaussian_vector(3, &mut rng);
        v /= C64::new(v.norm(), 0.0);
        let a2 = projector(&v) - from_real_diagonal(&[1.0 / 3.0; 3]);
        let a3 = crate::gen::random_hermitian(3, &mut rng);
        let b2 = crate::gen::random_hermitian(3, &mut rng);
        let b3 = crate::gen::random_hermitian(3, &mut rng);
        let eps = 0.05;
        let mat = kron(&numkernel::identity(3), &b1)
            + kron(&a2, &b2) * C64::new(eps, 0.0)
            + kron(&a3, &b3) * C64::new(eps, 0.0);
        let st = BipartiteState::new(3, 3, mat, pol()).unwrap();
        let map = LocalMap::new(random_invertible(3, &mut rng), random_invertible(3, &mut rng), &pol()).unwrap();
        st.apply_local(&map, true).unwrap()
    }

    #[test]
    fn sr3_form_found_when_rank_one_element_exists() {
        for seed in 0..3 {
            let st = sr3_with_rank_one_factor(seed);
            assert_eq!(schmidt_rank(&st), 3);
            match sr3_tridiagonal_form(&st, 1024).unwrap() {
                Sr3Search::Found(f) => {
                    assert!(f.ppt);
                    assert!(f.symmetry_residual <= 1e-8 * st.norm());
                    let t = &f.factors[2];
                    for i in 0..3 {
                        for j in 0..3 {
                            assert!(t[(i, j)].im.abs() < 1e-10);
                            if i.abs_diff(j) > 1 {
                                assert!(t[(i, j)].norm() < 1e-10);
                            }
                        }
                    }
                    assert!(!is_npt(&st).npt);
                }
                Sr3Search::Missed { achieved } => panic!("missed with {achieved:e}"),
            }
        }
    }

    #[test]
    fn sr3_form_misses_on_npt_states() {
        for seed in 0..3 {
            let g = gen_schmidt_rank(3, 3, 3, seed, true, pol()).unwrap();
            assert!(is_npt(&g.state).npt);
            assert!(matches!(sr3_tridiagonal_form(&g.state, 256).unwrap(), Sr3Search::Missed { .. }));
        }
        assert!(sr3_tridiagonal_form(&bell_state(pol()), 64).is_err());
    }

    #[test]
    fn realify_real_factors() {
        let mut mat = ComplexMatrix::zeros(6, 6);
        let factors = [
            from_real_diagonal(&[1.0, 1.0]),
            from_real_diagonal(&[1.0, -1.0]),
            ComplexMatrix::from_row_slice(2, 2, &[C64::new(0.0, 0.0), ONE, ONE, C64::new(0.0, 0.0)]),
        ];
        let bs = [
            from_real_diagonal(&[1.0, 1.0, 1.0]),
            from_real_diagonal(&[0.2, -0.1, 0.0]),
            {
                let mut x = ComplexMatrix::zeros(3, 3);
                x[(0, 1)] = C64::new(0.0, 0.1);
                x[(1, 0)] = C64::new(0.0, -0.1);
                x
            },
        ];
        for (a, b) in factors.iter().zip(&bs) {
            mat += kron(a, b);
        }
        let st = BipartiteState::new(2, 3, mat, pol()).unwrap();
        assert_eq!(schmidt_rank(&st), 3);
        let r = sr3_two_by_n_realify(&st).unwrap();
        assert!(r.ppt);
        assert!(r.residual < 1e-12);
    }

    #[test]
    fn realify_pauli_factors() {
        // I ⊗ B0 + σx ⊗ B1 + σy ⊗ B2 with small B1, B2
        let mut rng = rng_for(4, 4);
        let sx = ComplexMatrix::from_row_slice(2, 2, &[C64::new(0.0, 0.0), ONE, ONE, C64::new(0.0, 0.0)]);
        let sy = ComplexMatrix::from_row_slice(
            2,
            2,
            &[C64::new(0.0, 0.0), C64::new(0.0, -1.0), C64::new(0.0, 1.0), C64::new(0.0, 0.0)],
        );
        let b0 = numkernel::identity(3);
        let b1 = crate::gen::random_hermitian(3, &mut rng) * C64::new(0.2, 0.0);
        let b2 = crate::gen::random_hermitian(3, &mut rng) * C64::new(0.2, 0.0);
        let mat = kron(&numkernel::identity(2), &b0) + kron(&sx, &b1) + kron(&sy, &b2);
        let st = BipartiteState::new(2, 3, mat, pol()).unwrap();
        let r = sr3_two_by_n_realify(&st).unwrap();
        assert!(r.residual < 1e-10);
        assert!(r.ppt);
        for x in [&sx, &sy] {
            let y = &r.map.s * x * r.map.s.adjoint();
            assert!(y.iter().all(|z| z.im.abs() < 1e-10));
        }
    }

    #[test]
    fn realify_random_two_by_three() {
        for seed in 0..5 {
            let st = gen_schmidt_rank(2, 3, 3, seed, false, pol()).unwrap().state;
            let r = sr3_two_by_n_realify(&st).unwrap();
            assert!(r.ppt, "seed {seed}: {}", r.min_eigenvalue);
        }
    }

    #[test]
    fn ppt_canonical_on_diagonal_separable() {
        // Σ p_j |a_j⟩⟨a_j| ⊗ |j⟩⟨j|
        let mut rng = rng_for(5, 5);
        let n = 3;
        let mut mat = ComplexMatrix::zeros(2 * n, 2 * n);
        let mut inputs = Vec::new();
        for j in 0..n {
            let mut a = complex_gaussian_vector(2, &mut rng);
            a /= C64::new(a.norm(), 0.0);
            let mut e = ComplexVector::zeros(n);
            e[j] = ONE;
            let p = 0.2 + 0.1 * j as f64;
            mat += projector(&product_vector(&a, &e)) * C64::new(p, 0.0);
            inputs.push((p, a));
        }
        let st = BipartiteState::new(2, n, mat, pol()).unwrap();
        let f = ppt_rank_n_canonical(&st).unwrap();
        assert!(f.reconstruction_residual < 1e-10);
        assert_eq!(f.product_terms.len(), n);
        for (p, a) in inputs {
            let hit = f.product_terms.iter().any(|t| {
                (t.weight - p).abs() < 1e-9 && t.a.dotc(&a).norm() > 1.0 - 1e-9
            });
            assert!(hit);
        }
    }

    #[test]
    fn ppt_canonical_on_generated_states() {
        for (m, n) in [(2, 3), (3, 3), (3, 5)] {
            for seed in 0..3 {
                let st = gen_ppt_rank_n(m, n, seed, pol()).unwrap().state;
                let f = ppt_rank_n_canonical(&st).unwrap();
                assert!(f.reconstruction_residual <= 1e-8, "{m}x{n} seed {seed}: {}", f.reconstruction_residual);
                assert!(f.normality_defect <= 1e-9 && f.commutator_defect <= 1e-9);
                assert_eq!(f.product_terms.len(), n);
            }
        }
    }

    #[test]
    fn ppt_canonical_rejects_npt() {
        assert!(matches!(ppt_rank_n_canonical(&bell_state(pol())), Err(Error::NotPpt)));
    }

    #[test]
    fn tridiagonal_reduction_fixes_first_vector() {
        let mut rng = rng_for(6, 6);
        let x = crate::gen::random_hermitian(5, &mut rng);
        let (t, q) = tridiagonalize(&x);
        assert!(frob(&(&q * &x * q.adjoint() - &t)) < 1e-12);
        assert!((q[(0, 0)] - ONE).norm() < 1e-14);
        let d = realify_tridiagonal(&t);
        let r = &d * &t * d.adjoint();
        for i in 0..5usize {
            for j in 0..5 {
                if i.abs_diff(j) > 1 {
                    assert!(r[(i, j)].norm() < 1e-12);
                }
                assert!(r[(i, j)].im.abs() < 1e-12);
            }
        }
    }
}
