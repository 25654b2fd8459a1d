//! Direct-sum structure and product vectors.
//!
//! A state is B-reducible when it splits as `ρ = Σ_t ρ_t` with the local
//! B-supports of the summands linearly independent. Orthogonal splits are
//! found from the commutant of the blocks `M_ij`; general ones from the
//! same test after the congruence `W = ρ_B^{-1/2}`, which makes any
//! independent B-supports orthogonal.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gen::{complex_gaussian_vector, rng_for};
use crate::numkernel::{
    self, frob, hermitian_part, inverse, inverse_sqrt, kron, null_space, svd, ComplexMatrix, ComplexVector,
    TolerancePolicy, C64, ONE,
};
use crate::schmidt::vector_schmidt_rank;
use crate::state_core::{product_vector, reshape_vector, BipartiteState};
use crate::witness::Budget;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecompositionSide {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    /// No split found.
    None,
    /// Orthogonal B-supports.
    Orthogonal,
    /// Linearly independent but non-orthogonal B-supports.
    NonOrthogonal,
}

#[derive(Debug, Clone)]
pub struct DecompositionChild {
    /// Summand in compressed coordinates, `M' × n_t`.
    pub state: BipartiteState,
    /// Orthonormal `N' × n_t` frame in normalized coordinates.
    pub frame: ComplexMatrix,
}

/// Result of a direct-sum test.
#[derive(Debug, Clone)]
pub struct DecompositionTree {
    pub side: DecompositionSide,
    pub pass: SplitKind,
    /// Commutant dimension in the pass that decided the split.
    pub commutant_dim: usize,
    pub support_a: ComplexMatrix,
    pub support_b: ComplexMatrix,
    /// `ρ_B^{-1/2}` in compressed coordinates, or the identity.
    pub normalizer: ComplexMatrix,
    pub children: Vec<DecompositionChild>,
}

impl DecompositionTree {
    pub fn is_reducible(&self) -> bool {
        self.children.len() > 1
    }

    /// B-side isometry of child `t` in the decomposed state's coordinates.
    fn b_map(&self, t: usize) -> Result<ComplexMatrix> {
        let winv = inverse(&self.normalizer, &TolerancePolicy::default())?;
        Ok(&self.support_b * winv * &self.children[t].frame)
    }

    /// Summand `t` as a matrix on the full space of the decomposed state.
    pub fn embed(&self, t: usize) -> Result<ComplexMatrix> {
        let k = kron(&self.support_a, &self.b_map(t)?);
        let out = &k * self.children[t].state.matrix() * k.adjoint();
        Ok(match self.side {
            DecompositionSide::B => out,
            DecompositionSide::A => {
                let (m, n) = (self.support_a.nrows(), self.support_b.nrows());
                BipartiteState::assemble(m, n, out, *self.children[t].state.policy())
                    .swap()
                    .matrix()
                    .clone()
            }
        })
    }

    /// Vector on the full space whose partial-transpose functional equals
    /// that of `psi` on child `t` and vanishes on every other child.
    pub fn lift_vector(&self, t: usize, psi: &ComplexVector) -> ComplexVector {
        let xb = &self.support_b * &self.normalizer * &self.children[t].frame;
        let v = kron(&self.support_a.map(|z| z.conj()), &xb) * psi;
        match self.side {
            DecompositionSide::B => v,
            DecompositionSide::A => unswap_vector(&v, self.support_b.nrows(), self.support_a.nrows()),
        }
    }
}

/// Vector of a swapped state mapped back to the original order. The swap
/// turns `ρ^Γ` into the transpose of the swapped partial transpose, hence
/// the conjugation. `m, n` are the original dims.
pub fn unswap_vector(psi_s: &ComplexVector, m: usize, n: usize) -> ComplexVector {
    ComplexVector::from_fn(m * n, |k, _| psi_s[(k % n) * m + k / n].conj())
}

/// Commutant of `{M_ij}` as a basis of `N × N` matrices.
fn commutant(st: &BipartiteState) -> Vec<ComplexMatrix> {
    let (m, n) = st.dims();
    let nn = n * n;
    let id = numkernel::identity(n);
    let mut rows = ComplexMatrix::zeros(m * m * nn, nn);
    for i in 0..m {
        for j in 0..m {
            let b = st.block(i, j);
            // vec(DB - BD) = (B^T ⊗ I - I ⊗ B) vec(D), column-major vec
            let op = kron(&b.transpose(), &id) - kron(&id, &b);
            rows.view_mut(((i * m + j) * nn, 0), (nn, nn)).copy_from(&op);
        }
    }
    let ns = null_space(&rows, st.policy());
    ns.column_iter()
        .map(|c| ComplexMatrix::from_column_slice(n, n, c.as_slice()))
        .collect()
}

/// Spectral frames of a generic Hermitian element of the commutant.
fn split_frames(st: &BipartiteState, comm: &[ComplexMatrix]) -> Vec<ComplexMatrix> {
    let n = st.dim_b();
    if comm.len() <= 1 {
        return vec![numkernel::identity(n)];
    }
    let mut rng = rng_for(0x6272_6564, 0);
    let coeffs = complex_gaussian_vector(comm.len(), &mut rng);
    let mut x = ComplexMatrix::zeros(n, n);
    for (c, d) in coeffs.iter().zip(comm) {
        x += d * C64::new(c.re, 0.0);
    }
    let x = hermitian_part(&x);
    let x = &x / C64::new(frob(&x).max(f64::MIN_POSITIVE), 0.0);
    let eig = numkernel::hermitian_eig_unchecked(&x);
    let mut frames = Vec::new();
    let mut start = 0;
    for k in 1..=n {
        if k == n || eig.values[k] - eig.values[k - 1] > 1e-6 {
            frames.push(eig.vectors.columns(start, k - start).into_owned());
            start = k;
        }
    }
    frames
}

fn cross_terms_vanish(st: &BipartiteState, frames: &[ComplexMatrix]) -> bool {
    let m = st.dim_a();
    let tol = st.policy().scaled_atol(st.norm()) * 1e2;
    let id = numkernel::identity(m);
    for s in 0..frames.len() {
        for t in s + 1..frames.len() {
            let ps = kron(&id, &frames[s]);
            let pt = kron(&id, &frames[t]);
            if frob(&(ps.adjoint() * st.matrix() * &pt)) > tol {
                return false;
            }
        }
    }
    true
}

/// Split the B side of `state` into a direct sum, coarsest first.
pub fn b_decompose(state: &BipartiteState) -> Result<DecompositionTree> {
    let (st, va, vb) = state.compress_to_support();
    let pol = *st.policy();
    let n = st.dim_b();

    let mut pass = SplitKind::Orthogonal;
    let mut normalizer = numkernel::identity(n);
    let mut work = st.clone();
    let mut comm = commutant(&work);
    let mut frames = split_frames(&work, &comm);
    if frames.len() < 2 || !cross_terms_vanish(&work, &frames) {
        pass = SplitKind::NonOrthogonal;
        normalizer = inverse_sqrt(st.reduce_b(), &pol)?;
        let map = kron(&numkernel::identity(st.dim_a()), &normalizer);
        work = BipartiteState::assemble(st.dim_a(), n, &map * st.matrix() * map.adjoint(), pol);
        comm = commutant(&work);
        frames = split_frames(&work, &comm);
        if frames.len() < 2 || !cross_terms_vanish(&work, &frames) {
            frames = vec![numkernel::identity(n)];
            pass = SplitKind::None;
        }
    }
    if pass == SplitKind::None {
        normalizer = numkernel::identity(n);
        work = st.clone();
    }

    let winv = inverse(&normalizer, &pol)?;
    let key = |f: &ComplexMatrix| -> usize {
        let x = &vb * &winv * f;
        let scale = frob(&x);
        (0..x.nrows())
            .find(|&r| x.row(r).norm() > 1e-6 * scale)
            .unwrap_or(usize::MAX)
    };
    frames.sort_by_key(|f| key(f));
    let children = frames
        .into_iter()
        .map(|f| {
            let p = kron(&numkernel::identity(work.dim_a()), &f);
            let sub = p.adjoint() * work.matrix() * &p;
            DecompositionChild {
                state: BipartiteState::assemble(work.dim_a(), f.ncols(), sub, pol),
                frame: f,
            }
        })
        .collect();
    Ok(DecompositionTree {
        side: DecompositionSide::B,
        pass,
        commutant_dim: comm.len(),
        support_a: va,
        support_b: vb,
        normalizer,
        children,
    })
}

/// As [`b_decompose`] with the roles of A and B exchanged. Children are
/// stated in swapped order (their first factor is B).
pub fn a_decompose(state: &BipartiteState) -> Result<DecompositionTree> {
    let mut t = b_decompose(&state.swap())?;
    t.side = DecompositionSide::A;
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrreducibilityCertificate {
    pub commutant_dim: usize,
    /// Dimension of the compressed B support.
    pub dim_b: usize,
    pub pass: SplitKind,
}

/// Whether `state` admits no B-direct-sum split.
pub fn is_b_irreducible(state: &BipartiteState) -> Result<(bool, IrreducibilityCertificate)> {
    let tree = b_decompose(state)?;
    let cert = IrreducibilityCertificate {
        commutant_dim: tree.commutant_dim,
        dim_b: tree.normalizer.nrows(),
        pass: tree.pass,
    };
    Ok((!tree.is_reducible(), cert))
}

/// Unit vectors with `a ⊗ b` in a subspace, up to `residual`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProductVectorHit {
    #[serde(with = "numkernel::serde_vector")]
    pub a: ComplexVector,
    #[serde(with = "numkernel::serde_vector")]
    pub b: ComplexVector,
    pub residual: f64,
}

impl ProductVectorHit {
    pub fn vector(&self) -> ComplexVector {
        product_vector(&self.a, &self.b)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProductSearch {
    pub hit: Option<ProductVectorHit>,
    /// Set when dimension counting guarantees a product vector but none was found.
    pub alarm: Option<String>,
    pub best_residual: f64,
    pub starts: usize,
}

fn residual_of(proj_c: &ComplexMatrix, v: &ComplexVector) -> f64 {
    (proj_c * v).norm()
}

/// Complement projector `1 - Π` of an orthonormal frame.
fn complement_projector(frame: &ComplexMatrix) -> ComplexMatrix {
    numkernel::identity(frame.nrows()) - frame * frame.adjoint()
}

fn top_eig(m: &ComplexMatrix) -> (f64, ComplexVector) {
    let e = numkernel::hermitian_eig_unchecked(&hermitian_part(m));
    let k = e.values.len() - 1;
    (e.values[k], e.vector(k))
}

fn normalize(v: &ComplexVector) -> ComplexVector {
    v / C64::new(v.norm().max(f64::MIN_POSITIVE), 0.0)
}

/// Alternating maximization of `‖Π(a⊗b)‖` followed by Gauss-Newton on
/// `(1-Π)(a⊗b) = 0`.
fn product_run(
    proj: &ComplexMatrix,
    proj_c: &ComplexMatrix,
    m: usize,
    n: usize,
    b0: ComplexVector,
    max_iters: usize,
) -> ProductVectorHit {
    let ia = numkernel::identity(m);
    let ib = numkernel::identity(n);
    let mut b = normalize(&b0);
    let mut a = ComplexVector::zeros(m);
    let mut value = f64::NEG_INFINITY;
    for _ in 0..max_iters {
        let kb = kron(&ia, &ComplexMatrix::from_columns(&[b.clone()]));
        let (va, x) = top_eig(&(kb.adjoint() * proj * &kb));
        a = x;
        let ka = kron(&ComplexMatrix::from_columns(&[a.clone()]), &ib);
        let (vb, y) = top_eig(&(ka.adjoint() * proj * &ka));
        b = y;
        assert!(vb >= va - 1e-12, "product search decreased: {va} -> {vb}");
        let prev = value;
        value = vb;
        if value - prev <= 1e-14 {
            break;
        }
    }
    let mut res = residual_of(proj_c, &product_vector(&a, &b));
    if res < 1e-2 {
        for _ in 0..30 {
            let r = proj_c * product_vector(&a, &b);
            let mut j = ComplexMatrix::zeros(m * n, m + n);
            for i in 0..m {
                let mut e = ComplexVector::zeros(m);
                e[i] = ONE;
                j.set_column(i, &(proj_c * product_vector(&e, &b)));
            }
            for k in 0..n {
                let mut e = ComplexVector::zeros(n);
                e[k] = ONE;
                j.set_column(m + k, &(proj_c * product_vector(&a, &e)));
            }
            let s = svd(&j);
            let cutoff = s.sigma.first().copied().unwrap_or(0.0) * 1e-10;
            let mut step = ComplexVector::zeros(m + n);
            for (k, &sv) in s.sigma.iter().enumerate() {
                if sv > cutoff {
                    let c = s.u.column(k).dotc(&r) / C64::new(sv, 0.0);
                    step -= s.v.column(k) * c;
                }
            }
            let na = normalize(&(&a + step.rows(0, m)));
            let nb = normalize(&(&b + step.rows(m, n)));
            let nr = residual_of(proj_c, &product_vector(&na, &nb));
            if nr >= res {
                break;
            }
            a = na;
            b = nb;
            res = nr;
            if res < 1e-15 {
                break;
            }
        }
    }
    let mut a = a;
    numkernel::fix_phase(&mut a);
    let mut b = b;
    numkernel::fix_phase(&mut b);
    ProductVectorHit { a, b, residual: res }
}

/// Search the span of `frame` (orthonormal columns) for a product vector.
pub fn product_vector_in(frame: &ComplexMatrix, dims: (usize, usize), budget: &Budget) -> Result<ProductSearch> {
    product_search(frame, dims, budget, true)
}

fn product_search(
    frame: &ComplexMatrix,
    dims: (usize, usize),
    budget: &Budget,
    coordinate_starts: bool,
) -> Result<ProductSearch> {
    budget.validate()?;
    let (m, n) = dims;
    if frame.nrows() != m * n {
        return Err(Error::Dimension(format!(
            "frame has {} rows, expected {}",
            frame.nrows(),
            m * n
        )));
    }
    let pol = TolerancePolicy::default();
    let d = frame.ncols();
    if d == 0 {
        return Ok(ProductSearch {
            hit: None,
            alarm: None,
            best_residual: 1.0,
            starts: 0,
        });
    }
    let proj = frame * frame.adjoint();
    let proj_c = complement_projector(frame);

    let coords = if coordinate_starts { n } else { 0 };
    let mut starts: Vec<ComplexVector> = (0..coords)
        .map(|k| {
            let mut e = ComplexVector::zeros(n);
            e[k] = ONE;
            e
        })
        .collect();
    for r in 0..budget.restarts {
        let mut rng = rng_for(budget.seed, 0x5056_0000 + r as u64);
        starts.push(complex_gaussian_vector(n, &mut rng));
    }

    let mut best: Option<ProductVectorHit> = None;
    let mut run = 0;
    for chunk in starts.chunks(16) {
        let hits: Vec<ProductVectorHit> = chunk
            .par_iter()
            .map(|b0| product_run(&proj, &proj_c, m, n, b0.clone(), budget.max_iters))
            .collect();
        for h in hits {
            run += 1;
            if best.as_ref().is_none_or(|b| h.residual < b.residual) {
                best = Some(h);
            }
        }
        if best.as_ref().is_some_and(|b| b.residual <= pol.zero_atol) {
            break;
        }
    }
    let best = best.expect("at least one start");
    let best_residual = best.residual;
    let found = best_residual <= pol.zero_atol;
    let guaranteed = m > 0 && n > 0 && d > (m - 1) * (n - 1);
    let alarm = (guaranteed && !found).then(|| {
        format!(
            "a {d}-dimensional subspace of C^{m}⊗C^{n} must contain a product vector, best residual {best_residual:.3e}"
        )
    });
    Ok(ProductSearch {
        hit: found.then_some(best),
        alarm,
        best_residual,
        starts: run,
    })
}

/// Search the span of `frame` for a vector of Schmidt rank below `k`.
/// Returns the vector and its distance from the subspace.
pub fn low_sr_vector_in(
    frame: &ComplexMatrix,
    dims: (usize, usize),
    k: usize,
    budget: &Budget,
) -> Result<Option<(ComplexVector, f64)>> {
    if k < 2 {
        return Err(Error::Contract("Schmidt-rank bound must be at least two".into()));
    }
    if k == 2 {
        return Ok(product_vector_in(frame, dims, budget)?.hit.map(|h| {
            let r = h.residual;
            (h.vector(), r)
        }));
    }
    budget.validate()?;
    let (m, n) = dims;
    let r = (k - 1).min(m).min(n);
    let proj = frame * frame.adjoint();
    let proj_c = complement_projector(frame);
    let ia = numkernel::identity(m);
    let ib = numkernel::identity(n);
    let pol = TolerancePolicy::default();
    for s in 0..budget.restarts {
        let mut rng = rng_for(budget.seed, 0x4c53_0000 + s as u64);
        let g = crate::gen::complex_gaussian(m, r, &mut rng);
        let mut ua = numkernel::orthonormal_columns(&g, 1e-8);
        let mut psi = ComplexVector::zeros(m * n);
        let mut value = f64::NEG_INFINITY;
        for _ in 0..budget.max_iters {
            let p = kron(&ua, &ib);
            let (_, x) = top_eig(&(p.adjoint() * &proj * &p));
            psi = &p * x;
            let ub = svd(&reshape_vector(&psi, m, n)).v.columns(0, r).map(|z| z.conj());
            let p = kron(&ia, &ub);
            let (v, x) = top_eig(&(p.adjoint() * &proj * &p));
            psi = &p * x;
            ua = svd(&reshape_vector(&psi, m, n)).u.columns(0, r).into_owned();
            if v - value <= 1e-14 {
                break;
            }
            value = v;
        }
        // alternating projections: the eigen step alone cannot resolve the
        // residual below sqrt(eps)
        let truncate = |x: &ComplexVector| {
            let sv = svd(&reshape_vector(x, m, n));
            let mut y = ComplexMatrix::zeros(m, n);
            for l in 0..r {
                y += sv.u.column(l) * sv.v.column(l).adjoint() * C64::new(sv.sigma[l], 0.0);
            }
            normalize(&crate::state_core::flatten_matrix(&y))
        };
        let mut res = residual_of(&proj_c, &psi);
        for _ in 0..budget.max_iters {
            if res <= pol.zero_atol || res > 1e-2 {
                break;
            }
            psi = truncate(&(&proj * &psi));
            res = residual_of(&proj_c, &psi);
        }
        if res <= pol.zero_atol && vector_schmidt_rank(&psi, dims, &pol)? < k {
            return Ok(Some((psi, res)));
        }
    }
    Ok(None)
}

/// Product vector in the range of `state`, if the search finds one.
pub fn range_product_vector(state: &BipartiteState, budget: &Budget) -> Result<Option<ProductVectorHit>> {
    Ok(product_vector_in(&state.range_basis(), state.dims(), budget)?.hit)
}

/// Up to `count` pairwise distinct product vectors in the kernel of `state`.
pub fn kernel_product_vectors(state: &BipartiteState, budget: &Budget, count: usize) -> Result<Vec<ProductVectorHit>> {
    let ker = state.kernel_basis();
    if ker.is_empty() || count == 0 {
        return Ok(Vec::new());
    }
    let frame = ComplexMatrix::from_columns(&ker);
    let mut out: Vec<ProductVectorHit> = Vec::new();
    let distinct = |out: &[ProductVectorHit], v: &ComplexVector| out.iter().all(|o| o.vector().dotc(v).norm() < 0.99);
    // first inside the part of the kernel orthogonal to earlier hits
    while out.len() < count {
        let mut rest = frame.clone();
        for h in &out {
            let v = h.vector();
            let c = rest.adjoint() * &v;
            rest -= &v * c.adjoint();
        }
        let rest = numkernel::orthonormal_columns(&rest, 1e-8);
        if rest.ncols() == 0 {
            break;
        }
        match product_search(&rest, state.dims(), budget, true)?.hit {
            Some(h) if distinct(&out, &h.vector()) => out.push(h),
            _ => break,
        }
    }
    for attempt in 1..=4 * count as u64 {
        if out.len() >= count {
            break;
        }
        let b = Budget {
            seed: budget.seed.wrapping_add(attempt.wrapping_mul(0x9e37_79b9)),
            ..*budget
        };
        if let Some(h) = product_search(&frame, state.dims(), &b, false)?.hit {
            if distinct(&out, &h.vector()) {
                out.push(h);
            }
        }
    }
    Ok(out)
}
