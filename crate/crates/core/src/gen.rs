//! Seeded generators for the state families used across the crate.
//!
//! Every generator is a pure function of its parameters and seed. Each
//! returns a [`Generated`] carrying ground-truth labels; [`verify_labels`]
//! recomputes them with the analysis modules before anything is persisted.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{
    self, frob, hermitian_eig, kron, ComplexMatrix, ComplexVector, TolerancePolicy, C64, ONE, ZERO,
};
use crate::schmidt::{hs_inner, schmidt_rank};
use crate::state_core::{product_vector, projector, write_state, BipartiteState, BlockFactor, LocalMap};
use crate::structure;
use crate::witness::{self, Budget};

/// ChaCha8 stream `stream` of `seed`; distinct streams never overlap.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Matrix of i.i.d. standard complex Gaussians (unit variance).
pub fn complex_gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> ComplexMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    ComplexMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(s * re, s * im)
    })
}

pub fn complex_gaussian_vector(n: usize, rng: &mut impl Rng) -> ComplexVector {
    complex_gaussian(n, 1, rng).column(0).into_owned()
}

/// Unit-trace `G†G` with `G` a `rank × dim` Gaussian matrix.
pub fn random_density(dim: usize, rank: usize, rng: &mut impl Rng) -> ComplexMatrix {
    let g = complex_gaussian(rank, dim, rng);
    let rho = g.adjoint() * g;
    let t = rho.trace().re;
    rho / C64::new(t, 0.0)
}

/// Hermitian matrix of unit Frobenius norm.
pub fn random_hermitian(n: usize, rng: &mut impl Rng) -> ComplexMatrix {
    let g = complex_gaussian(n, n, rng);
    let h = numkernel::hermitian_part(&g);
    let nn = frob(&h);
    h / C64::new(nn, 0.0)
}

/// Haar-distributed unitary from the QR decomposition of a Gaussian matrix.
pub fn random_unitary(n: usize, rng: &mut impl Rng) -> ComplexMatrix {
    let g = complex_gaussian(n, n, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / C64::new(d.norm(), 0.0) } else { ONE };
        let mut col = q.column_mut(j);
        col *= ph;
    }
    q
}

/// `U diag(e^{t_k}) V` with `t_k` uniform in `[-1/2, 1/2]`: condition number at most `e`.
pub fn random_invertible(n: usize, rng: &mut impl Rng) -> ComplexMatrix {
    let u = random_unitary(n, rng);
    let v = random_unitary(n, rng);
    let d: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5f64).exp()).collect();
    u * numkernel::from_real_diagonal(&d) * v
}

/// Ground truth attached to a generated fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    pub family: String,
    pub params: String,
    pub seed: u64,
    pub rank: usize,
    pub local_ranks: (usize, usize),
    pub schmidt_rank: usize,
    pub npt: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_reducible: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range_product_vector: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_line: Option<bool>,
}

/// Rejection-sampling statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub attempts: usize,
    pub rejected_rank: usize,
    pub rejected_npt: usize,
    pub rejected_structure: usize,
}

impl AcceptanceStats {
    pub fn rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            1.0 / self.attempts as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub state: BipartiteState,
    pub factor: Option<BlockFactor>,
    pub labels: Labels,
    pub stats: AcceptanceStats,
    pub template: Option<BlockTemplate>,
}

fn basic_labels(state: &BipartiteState, family: &str, params: String, seed: u64) -> Labels {
    Labels {
        family: family.to_string(),
        params,
        seed,
        rank: state.rank(),
        local_ranks: state.local_ranks(),
        schmidt_rank: schmidt_rank(state),
        npt: witness::is_npt(state).npt,
        b_reducible: None,
        range_product_vector: None,
        kernel_line: None,
    }
}

/// `G†G / Tr` with a Gaussian `rank × MN` matrix `G`.
pub fn gen_random(m: usize, n: usize, rank: usize, seed: u64, pol: TolerancePolicy) -> Result<Generated> {
    if m == 0 || n == 0 || rank == 0 || rank > m * n {
        return Err(Error::Contract(format!("rank {rank} infeasible for {m}x{n}")));
    }
    let expect = ((rank * n).min(m), (rank * m).min(n));
    let mut rng = rng_for(seed, 1);
    let mut stats = AcceptanceStats::default();
    for _ in 0..100 {
        stats.attempts += 1;
        let st = BipartiteState::new(m, n, random_density(m * n, rank, &mut rng), pol)?;
        if st.rank() != rank || st.local_ranks() != expect {
            stats.rejected_rank += 1;
            continue;
        }
        let labels = basic_labels(&st, "random", format!("M{m}-N{n}-r{rank}"), seed);
        return Ok(Generated {
            state: st,
            factor: None,
            labels,
            stats,
            template: None,
        });
    }
    Err(Error::Generation {
        attempts: stats.attempts,
        reason: format!("rank {rank} with local ranks {expect:?} not reached"),
    })
}

fn orthonormal_hermitian(seed_mats: Vec<ComplexMatrix>, fixed: &[ComplexMatrix]) -> Vec<ComplexMatrix> {
    let mut basis: Vec<ComplexMatrix> = fixed
        .iter()
        .map(|f| f / C64::new(frob(f), 0.0))
        .collect();
    let mut out = Vec::new();
    for mut x in seed_mats {
        for _ in 0..2 {
            for e in &basis {
                let c = hs_inner(e, &x).re;
                x -= e * C64::new(c, 0.0);
            }
        }
        let nn = frob(&x);
        if nn > 1e-6 {
            let x = x / C64::new(nn, 0.0);
            basis.push(x.clone());
            out.push(x);
        }
    }
    out
}

/// Operator Schmidt rank `sr` by rejection sampling.
///
/// Draws `I ⊗ B_1 + ε Σ_{j≥2} c_j A_j ⊗ B_j` with orthonormal traceless
/// Hermitian `A_j`, `B_1` positive definite, and `ε` a random fraction of the
/// largest value keeping the operator PSD, then applies a random invertible
/// local map. With `npt_wanted` only NPT samples are accepted; the fraction
/// is then drawn close to the PSD boundary.
pub fn gen_schmidt_rank(
    m: usize,
    n: usize,
    sr: usize,
    seed: u64,
    npt_wanted: bool,
    pol: TolerancePolicy,
) -> Result<Generated> {
    if sr == 0 || sr > (m * m).min(n * n) {
        return Err(Error::Contract(format!("Schmidt rank {sr} infeasible for {m}x{n}")));
    }
    let budget = if npt_wanted { 4000 } else { 200 };
    let mut rng = rng_for(seed, 2);
    let mut stats = AcceptanceStats::default();
    for _ in 0..budget {
        stats.attempts += 1;
        let b1 = {
            let d = random_density(n, n, &mut rng);
            d + numkernel::identity(n) * C64::new(0.2 / n as f64, 0.0)
        };
        let a_seeds = (1..sr).map(|_| random_hermitian(m, &mut rng)).collect();
        let a_rest = orthonormal_hermitian(a_seeds, &[numkernel::identity(m)]);
        let b_seeds = (1..sr).map(|_| random_hermitian(n, &mut rng)).collect();
        let b_rest = orthonormal_hermitian(b_seeds, std::slice::from_ref(&b1));
        if a_rest.len() + 1 != sr || b_rest.len() + 1 != sr {
            stats.rejected_rank += 1;
            continue;
        }
        let x = kron(&numkernel::identity(m), &b1);
        let mut mat = x.clone();
        if sr > 1 {
            let mut y = ComplexMatrix::zeros(m * n, m * n);
            for (a, b) in a_rest.iter().zip(b_rest.iter()) {
                let c: f64 = rng.random_range(0.5..1.0);
                y += kron(a, b) * C64::new(c, 0.0);
            }
            let xi = kron(&numkernel::identity(m), &numkernel::inverse_sqrt(&b1, &pol)?);
            let z = &xi * &y * &xi;
            let mu = hermitian_eig(&numkernel::hermitian_part(&z), &pol)?.min();
            let eps_max = if mu < 0.0 { -1.0 / mu } else { 1.0 };
            let frac: f64 = if npt_wanted {
                rng.random_range(0.9..0.999)
            } else {
                rng.random_range(0.5..0.95)
            };
            mat += y * C64::new(frac * eps_max, 0.0);
        }
        let base = BipartiteState::new(m, n, mat, pol)?;
        let map = LocalMap::new(random_invertible(m, &mut rng), random_invertible(n, &mut rng), &pol)?;
        let st = base.apply_local(&map, true)?;
        if schmidt_rank(&st) != sr || st.local_ranks() != (m, n) {
            stats.rejected_rank += 1;
            continue;
        }
        let npt = witness::is_npt(&st).npt;
        if sr <= 2 && npt {
            return Err(Error::Contract(format!(
                "Schmidt-rank-{sr} sample came out NPT (seed {seed})"
            )));
        }
        if npt_wanted && !npt {
            stats.rejected_npt += 1;
            continue;
        }
        let mut params = format!("M{m}-N{n}-sr{sr}");
        if npt_wanted {
            params.push_str("-npt");
        }
        let labels = basic_labels(&st, "schmidt-rank", params, seed);
        return Ok(Generated {
            state: st,
            factor: None,
            labels,
            stats,
            template: None,
        });
    }
    Err(Error::Generation {
        attempts: stats.attempts,
        reason: format!(
            "no accepted Schmidt-rank-{sr} sample ({} rank rejections, {} PPT rejections)",
            stats.rejected_rank, stats.rejected_npt
        ),
    })
}

/// `ρ1 ⊕_B ρ2` on orthogonal B-supports: ρ1 on the first `N1` B-indices,
/// ρ2 on the remaining `N2`. The summands are not rescaled.
pub fn gen_b_reducible(rho1: &BipartiteState, rho2: &BipartiteState) -> Result<BipartiteState> {
    if rho1.dim_a() != rho2.dim_a() {
        return Err(Error::Dimension(format!(
            "A dimensions differ: {} vs {}",
            rho1.dim_a(),
            rho2.dim_a()
        )));
    }
    let m = rho1.dim_a();
    let (n1, n2) = (rho1.dim_b(), rho2.dim_b());
    let n = n1 + n2;
    let mut mat = ComplexMatrix::zeros(m * n, m * n);
    for a in 0..m {
        for ap in 0..m {
            for b in 0..n1 {
                for bp in 0..n1 {
                    mat[(a * n + b, ap * n + bp)] += rho1.matrix()[(a * n1 + b, ap * n1 + bp)];
                }
            }
            for b in 0..n2 {
                for bp in 0..n2 {
                    mat[(a * n + n1 + b, ap * n + n1 + bp)] += rho2.matrix()[(a * n2 + b, ap * n2 + bp)];
                }
            }
        }
    }
    BipartiteState::new(m, n, mat, *rho1.policy())
}

/// Normalized `ρ1 ⊕_B ρ2` of two random full-rank states on `N1` and `N2`
/// B-dimensions, labelled B-reducible.
pub fn gen_b_reducible_pair(m: usize, n1: usize, n2: usize, seed: u64, pol: TolerancePolicy) -> Result<Generated> {
    let r1 = gen_random(m, n1, m * n1, seed, pol)?;
    let r2 = gen_random(m, n2, m * n2, seed.wrapping_add(1), pol)?;
    let st = gen_b_reducible(&r1.state, &r2.state)?.normalized();
    let mut labels = basic_labels(&st, "b-reducible", format!("M{m}-N{n1}+{n2}"), seed);
    labels.b_reducible = Some(true);
    Ok(Generated {
        state: st,
        factor: None,
        labels,
        stats: AcceptanceStats {
            attempts: r1.stats.attempts + r2.stats.attempts,
            ..AcceptanceStats::default()
        },
        template: None,
    })
}

/// Free parameters of the rank-`N+1` block template.
///
/// Blocks are `(N+1) × N`, rows split as `R | N-R | 1` and columns as
/// `R | N-R`:
///
/// ```text
/// C_0 = [I_R 0; 0 0; 0 0]
/// C_1 = [E 0; 0 C131; w 0]            E = E_1 ⊕ … ⊕ E_k, each E_i lower triangular
/// C_2 = [F 0; C221 C231; C222 C232]   F = F_1 ⊕ … ⊕ F_k
/// C_j = [Λ_j 0; 0 0; 0 0], j > 2      Λ_j = λ_j1 I_l1 ⊕ … ⊕ λ_jk I_lk
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockTemplate {
    pub r: usize,
    pub partition: Vec<usize>,
    /// `lambda[j - 3][i]` for `j = 3..M`.
    pub lambda: Vec<Vec<f64>>,
    #[serde(with = "crate::schmidt::serde_matrix_list")]
    pub e: Vec<ComplexMatrix>,
    #[serde(with = "crate::schmidt::serde_matrix_list")]
    pub f: Vec<ComplexMatrix>,
    #[serde(with = "crate::schmidt::serde_matrix_list")]
    pub w: Vec<ComplexMatrix>,
    #[serde(with = "numkernel::serde_matrix")]
    pub c131: ComplexMatrix,
    #[serde(with = "numkernel::serde_matrix")]
    pub c221: ComplexMatrix,
    #[serde(with = "numkernel::serde_matrix")]
    pub c231: ComplexMatrix,
    #[serde(with = "numkernel::serde_matrix")]
    pub c222: ComplexMatrix,
    #[serde(with = "numkernel::serde_matrix")]
    pub c232: ComplexMatrix,
    /// Zero column 0 of every `C_i`, `i > 0`, so `ℂ^{M-1} ⊗ |0⟩` sits in the kernel.
    pub zero_column: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TemplateOptions {
    pub r: Option<usize>,
    pub partition: Option<Vec<usize>>,
    pub zero_column: bool,
    /// Apply a random invertible local map after assembly.
    pub twist: bool,
}

impl BlockTemplate {
    /// First entries `μ_i` of the coupling rows `w_i`.
    pub fn mu(&self) -> Vec<C64> {
        self.w.iter().map(|w| w[(0, 0)]).collect()
    }

    /// First entries `ν_i` of the diagonal blocks `E_i`.
    pub fn nu(&self) -> Vec<C64> {
        self.e.iter().map(|e| e[(0, 0)]).collect()
    }

    pub fn k(&self) -> usize {
        self.partition.len()
    }

    pub fn sample(m: usize, n: usize, opts: &TemplateOptions, rng: &mut impl Rng) -> Result<Self> {
        if m < 3 || n < 3 {
            return Err(Error::Dimension(format!("templates need M, N ≥ 3, got {m}x{n}")));
        }
        let r = opts.r.unwrap_or(n - 1);
        let k_min = (m.saturating_sub(2)).max(2);
        let partition = match &opts.partition {
            Some(p) => p.clone(),
            None => {
                let k = if r >= 2 * k_min { k_min } else { k_min.min(r) };
                let base = r / k;
                (0..k).map(|i| base + usize::from(i < r % k)).collect()
            }
        };
        let k = partition.len();
        let mut lambda = Vec::new();
        for _ in 3..m {
            // distinct small nonzero integers
            let mut pool: Vec<f64> = (1..=(k as i64 + 3)).map(|x| x as f64).collect();
            let mut row = Vec::with_capacity(k);
            for _ in 0..k {
                let idx = rng.random_range(0..pool.len());
                let v = pool.swap_remove(idx);
                row.push(if rng.random_bool(0.5) { v } else { -v });
            }
            lambda.push(row);
        }
        let lower = |l: usize, rng: &mut ChaCha8Rng| {
            let mut x = complex_gaussian(l, l, rng);
            for i in 0..l {
                for j in i + 1..l {
                    x[(i, j)] = ZERO;
                }
                let sign = if x[(i, i)].re >= 0.0 { 1.0 } else { -1.0 };
                x[(i, i)] += C64::new(sign, 0.0);
            }
            x
        };
        let mut local = ChaCha8Rng::from_rng(rng);
        let e = partition.iter().map(|&l| lower(l, &mut local)).collect();
        let f = partition.iter().map(|&l| complex_gaussian(l, l, &mut local)).collect();
        let w = partition
            .iter()
            .map(|&l| {
                let mut x = complex_gaussian(1, l, &mut local);
                x[(0, 0)] += C64::new(1.0, 0.0);
                x
            })
            .collect();
        let nr = n - r;
        let t = BlockTemplate {
            r,
            partition,
            lambda,
            e,
            f,
            w,
            c131: random_invertible(nr, &mut local),
            c221: complex_gaussian(nr, r, &mut local),
            c231: complex_gaussian(nr, nr, &mut local),
            c222: complex_gaussian(1, r, &mut local),
            c232: complex_gaussian(1, nr, &mut local),
            zero_column: opts.zero_column,
        };
        t.validate(m, n)?;
        Ok(t)
    }

    pub fn validate(&self, m: usize, n: usize) -> Result<()> {
        let k = self.partition.len();
        let bad = |s: String| Err(Error::Contract(format!("template: {s}")));
        if self.r == 0 || self.r >= n {
            return bad(format!("R = {} must lie in 1..{n}", self.r));
        }
        if self.partition.iter().sum::<usize>() != self.r || self.partition.contains(&0) {
            return bad(format!("partition {:?} does not sum to R = {}", self.partition, self.r));
        }
        if k < 2 {
            return bad("k must exceed 1".into());
        }
        if self.lambda.len() != m.saturating_sub(3) || self.lambda.iter().any(|row| row.len() != k) {
            return bad("λ matrix has the wrong shape".into());
        }
        for r in 0..k {
            for s in r + 1..k {
                if m > 3 && self.lambda.iter().all(|row| row[r] == row[s]) {
                    return bad(format!("λ columns {r} and {s} coincide"));
                }
            }
        }
        // C_0 and the Λ_j must stay linearly independent: Λ_j live in a k-dim space containing I
        if m > k + 2 {
            return bad(format!("M = {m} needs k ≥ {}", m - 2));
        }
        for (i, &l) in self.partition.iter().enumerate() {
            if self.e[i].shape() != (l, l) || self.f[i].shape() != (l, l) || self.w[i].shape() != (1, l) {
                return bad(format!("block {i} has the wrong size"));
            }
            for a in 0..l {
                for b in a + 1..l {
                    if self.e[i][(a, b)] != ZERO {
                        return bad(format!("E_{i} is not lower triangular"));
                    }
                }
            }
        }
        if self.w.iter().all(|w| w.iter().all(|z| *z == ZERO)) {
            return bad("every coupling row is zero".into());
        }
        Ok(())
    }

    /// Assemble the `M` blocks.
    pub fn factor(&self, m: usize, n: usize) -> Result<BlockFactor> {
        self.validate(m, n)?;
        let r = self.r;
        let nr = n - r;
        let rows = n + 1;
        let mut blocks = vec![ComplexMatrix::zeros(rows, n); m];
        for i in 0..r {
            blocks[0][(i, i)] = ONE;
        }
        let mut off = 0;
        for (idx, &l) in self.partition.iter().enumerate() {
            blocks[1].view_mut((off, off), (l, l)).copy_from(&self.e[idx]);
            blocks[1].view_mut((n, off), (1, l)).copy_from(&self.w[idx]);
            blocks[2].view_mut((off, off), (l, l)).copy_from(&self.f[idx]);
            for (j, row) in self.lambda.iter().enumerate() {
                for t in 0..l {
                    blocks[j + 3][(off + t, off + t)] = C64::new(row[idx], 0.0);
                }
            }
            off += l;
        }
        blocks[1].view_mut((r, r), (nr, nr)).copy_from(&self.c131);
        blocks[2].view_mut((r, 0), (nr, r)).copy_from(&self.c221);
        blocks[2].view_mut((r, r), (nr, nr)).copy_from(&self.c231);
        blocks[2].view_mut((n, 0), (1, r)).copy_from(&self.c222);
        blocks[2].view_mut((n, r), (1, nr)).copy_from(&self.c232);
        if self.zero_column {
            for b in blocks.iter_mut().skip(1) {
                b.column_mut(0).fill(ZERO);
            }
        }
        Ok(BlockFactor { r: rows, blocks })
    }
}

/// State `C†C` assembled from a template, normalized, with its factor.
pub fn gen_from_template(t: &BlockTemplate, m: usize, n: usize, pol: TolerancePolicy) -> Result<(BipartiteState, BlockFactor)> {
    let f = t.factor(m, n)?;
    let mat = f.reconstruct();
    let tr = mat.trace().re;
    let scale = C64::new(1.0 / tr.sqrt(), 0.0);
    let f = BlockFactor {
        r: f.r,
        blocks: f.blocks.iter().map(|b| b * scale).collect(),
    };
    let st = BipartiteState::new(m, n, f.reconstruct(), pol)?;
    Ok((st, f))
}

/// Rank-`N+1` template state that is NPT, of full local ranks, and
/// B-irreducible. Templates are resampled until all three hold.
pub fn gen_b_irreducible_template(
    m: usize,
    n: usize,
    seed: u64,
    opts: &TemplateOptions,
    pol: TolerancePolicy,
) -> Result<Generated> {
    let mut rng = rng_for(seed, 3);
    let mut stats = AcceptanceStats::default();
    for _ in 0..50 {
        stats.attempts += 1;
        let t = BlockTemplate::sample(m, n, opts, &mut rng)?;
        let (mut st, mut f) = gen_from_template(&t, m, n, pol)?;
        if opts.twist {
            let s = random_invertible(m, &mut rng);
            let w = random_invertible(n, &mut rng);
            let map = LocalMap::new(s.clone(), w.clone(), &pol)?;
            st = st.apply_local(&map, true)?;
            // C'_i = Σ_k conj(S_ik) C_k W†, rescaled with the state
            let blocks: Vec<ComplexMatrix> = (0..m)
                .map(|i| {
                    (0..m).fold(ComplexMatrix::zeros(n + 1, n), |acc, k| acc + &f.blocks[k] * s[(i, k)].conj())
                        * w.adjoint()
                })
                .collect();
            let tmp = BlockFactor { r: n + 1, blocks };
            let sc = C64::new((st.trace() / tmp.reconstruct().trace().re).sqrt(), 0.0);
            f = BlockFactor {
                r: n + 1,
                blocks: tmp.blocks.iter().map(|b| b * sc).collect(),
            };
        }
        if st.rank() != n + 1 || st.local_ranks() != (m, n) {
            stats.rejected_rank += 1;
            continue;
        }
        if !witness::is_npt(&st).npt {
            stats.rejected_npt += 1;
            continue;
        }
        let (irreducible, _) = structure::is_b_irreducible(&st)?;
        if !irreducible {
            stats.rejected_structure += 1;
            continue;
        }
        let mut params = format!("M{m}-N{n}-R{}", t.r);
        if t.zero_column {
            params.push_str("-zc");
        }
        if opts.twist {
            params.push_str("-tw");
        }
        let mut labels = basic_labels(&st, "b-irreducible-template", params, seed);
        labels.b_reducible = Some(false);
        labels.kernel_line = Some(t.zero_column);
        let budget = Budget {
            seed,
            ..Budget::default()
        };
        labels.range_product_vector = Some(structure::range_product_vector(&st, &budget)?.is_some());
        return Ok(Generated {
            state: st,
            factor: Some(f),
            labels,
            stats,
            template: Some(t),
        });
    }
    Err(Error::Generation {
        attempts: stats.attempts,
        reason: format!(
            "template rejections: {} rank, {} PPT, {} reducible",
            stats.rejected_rank, stats.rejected_npt, stats.rejected_structure
        ),
    })
}

/// Mixture of `n` random product states with random positive weights.
pub fn gen_ppt_rank_n(m: usize, n: usize, seed: u64, pol: TolerancePolicy) -> Result<Generated> {
    if m > n {
        return Err(Error::Contract(format!("need m ≤ n, got {m} > {n}; swap the sides")));
    }
    let mut rng = rng_for(seed, 4);
    let mut stats = AcceptanceStats::default();
    for _ in 0..100 {
        stats.attempts += 1;
        let mut mat = ComplexMatrix::zeros(m * n, m * n);
        for _ in 0..n {
            let a = complex_gaussian_vector(m, &mut rng).normalize();
            let b = complex_gaussian_vector(n, &mut rng).normalize();
            let p: f64 = rng.random_range(0.2..1.0);
            mat += projector(&product_vector(&a, &b)) * C64::new(p, 0.0);
        }
        let tr = mat.trace();
        let st = BipartiteState::new(m, n, mat / tr, pol)?;
        if st.rank() != n || st.local_ranks() != (m, n) {
            stats.rejected_rank += 1;
            continue;
        }
        if witness::is_npt(&st).npt {
            return Err(Error::Contract("separable mixture tested NPT".into()));
        }
        let labels = basic_labels(&st, "ppt-rank-n", format!("m{m}-n{n}"), seed);
        return Ok(Generated {
            state: st,
            factor: None,
            labels,
            stats,
            template: None,
        });
    }
    Err(Error::Generation {
        attempts: stats.attempts,
        reason: "rank or local ranks not reached".into(),
    })
}

/// Recompute every label with the analysis modules.
pub fn verify_labels(g: &Generated) -> Result<()> {
    let st = &g.state;
    let l = &g.labels;
    let mismatch = |what: &str, want: String, got: String| {
        Err(Error::Contract(format!(
            "label {what} of {}/{}-{}: recorded {want}, recomputed {got}",
            l.family, l.params, l.seed
        )))
    };
    if st.rank() != l.rank {
        return mismatch("rank", l.rank.to_string(), st.rank().to_string());
    }
    if st.local_ranks() != l.local_ranks {
        return mismatch("local_ranks", format!("{:?}", l.local_ranks), format!("{:?}", st.local_ranks()));
    }
    let sr = schmidt_rank(st);
    if sr != l.schmidt_rank {
        return mismatch("schmidt_rank", l.schmidt_rank.to_string(), sr.to_string());
    }
    let npt = witness::is_npt(st).npt;
    if npt != l.npt {
        return mismatch("npt", l.npt.to_string(), npt.to_string());
    }
    if let Some(red) = l.b_reducible {
        let (irr, _) = structure::is_b_irreducible(st)?;
        if irr == red {
            return mismatch("b_reducible", red.to_string(), (!irr).to_string());
        }
    }
    if let Some(kl) = l.kernel_line {
        let found = witness::kernel_line_criterion(st, g.labels.seed).is_some();
        if kl && !found {
            return mismatch("kernel_line", kl.to_string(), found.to_string());
        }
    }
    if let Some(f) = &g.factor {
        let resid = frob(&(f.reconstruct() - st.matrix()));
        if resid > st.policy().scaled_atol(st.norm()) {
            return Err(Error::Contract(format!("stored factor misses the state by {resid:.3e}")));
        }
    }
    Ok(())
}

/// Relative path `<family>/<params>-<seed>.qsf.json`.
pub fn fixture_path(labels: &Labels) -> PathBuf {
    PathBuf::from(&labels.family).join(format!("{}-{}.qsf.json", labels.params, labels.seed))
}

/// Verify and write a fixture plus its entry in `<out>/labels.json`.
pub fn persist(g: &Generated, out: &Path) -> Result<PathBuf> {
    verify_labels(g)?;
    let rel = fixture_path(&g.labels);
    let full = out.join(&rel);
    if let Some(parent) = full.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&full, write_state(&g.state, g.factor.as_ref()))?;
    let labels_path = out.join("labels.json");
    let mut all: BTreeMap<String, Labels> = match std::fs::read(&labels_path) {
        Ok(bytes) => serde_json::from_slice(&bytes)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
        Err(e) => return Err(e.into()),
    };
    all.insert(rel.to_string_lossy().replace('\\', "/"), g.labels.clone());
    let mut text = serde_json::to_string_pretty(&all)?;
    text.push('\n');
    std::fs::write(&labels_path, text)?;
    Ok(full)
}

/// Real Gaussian helper used by tests that need real-valued data.
#[allow(dead_code)]
pub(crate) fn real_gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state_core::load_state;

    fn pol() -> TolerancePolicy {
        TolerancePolicy::default()
    }

    #[test]
    fn rng_streams_are_reproducible_and_distinct() {
        let a: u64 = rng_for(5, 1).random();
        let b: u64 = rng_for(5, 1).random();
        let c: u64 = rng_for(5, 2).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn unitary_and_invertible_helpers() {
        let mut rng = rng_for(1, 9);
        let u = random_unitary(5, &mut rng);
        assert!((u.adjoint() * &u - numkernel::identity(5)).norm() < 1e-12);
        let s = random_invertible(4, &mut rng);
        let sv = numkernel::svd(&s).sigma;
        assert!(sv[0] / sv[3] <= std::f64::consts::E + 1e-9);
    }

    #[test]
    fn random_family() {
        let g = gen_random(2, 2, 1, 3, pol()).unwrap();
        assert_eq!(g.state.rank(), 1);
        let g = gen_random(3, 4, 5, 3, pol()).unwrap();
        assert_eq!(g.state.rank(), 5);
        assert_eq!(g.state.local_ranks(), (3, 4));
        assert!((g.state.trace() - 1.0).abs() < 1e-12);
        assert!(gen_random(2, 2, 5, 3, pol()).is_err());
        verify_labels(&g).unwrap();
    }

    #[test]
    fn generators_are_deterministic() {
        let a = gen_schmidt_rank(3, 3, 2, 11, false, pol()).unwrap();
        let b = gen_schmidt_rank(3, 3, 2, 11, false, pol()).unwrap();
        assert_eq!(write_state(&a.state, None), write_state(&b.state, None));
        let a = gen_random(2, 3, 4, 11, pol()).unwrap();
        let b = gen_random(2, 3, 4, 11, pol()).unwrap();
        assert_eq!(write_state(&a.state, None), write_state(&b.state, None));
    }

    #[test]
    fn schmidt_rank_family() {
        let g = gen_schmidt_rank(3, 3, 1, 1, false, pol()).unwrap();
        assert_eq!(schmidt_rank(&g.state), 1);
        for seed in 0..20 {
            let g = gen_schmidt_rank(3, 4, 2, seed, false, pol()).unwrap();
            assert_eq!(g.labels.schmidt_rank, 2);
            assert!(!g.labels.npt);
        }
        let g = gen_schmidt_rank(2, 3, 3, 1, false, pol()).unwrap();
        assert_eq!(schmidt_rank(&g.state), 3);
        assert!(gen_schmidt_rank(2, 2, 5, 1, false, pol()).is_err());
    }

    #[test]
    fn npt_schmidt_rank_three_reports_statistics() {
        match gen_schmidt_rank(3, 3, 3, 1, true, pol()) {
            Ok(g) => {
                assert!(g.labels.npt);
                assert_eq!(g.labels.schmidt_rank, 3);
                assert!(g.stats.attempts >= 1);
            }
            Err(Error::Generation { attempts, .. }) => assert!(attempts > 0),
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn b_reducible_embedding() {
        let bell = crate::state_core::bell_state(pol());
        let g = gen_b_reducible(&bell, &bell).unwrap();
        assert_eq!(g.dims(), (2, 4));
        assert!((g.trace() - 2.0).abs() < 1e-12);
        assert!(gen_b_reducible(&bell, &gen_random(3, 2, 2, 1, pol()).unwrap().state).is_err());
    }

    #[test]
    fn template_blocks_have_the_documented_shape() {
        let mut rng = rng_for(3, 3);
        let t = BlockTemplate::sample(4, 5, &TemplateOptions::default(), &mut rng).unwrap();
        assert_eq!(t.r, 4);
        assert_eq!(t.partition, vec![2, 2]);
        let f = t.factor(4, 5).unwrap();
        assert_eq!(f.r, 6);
        // C_0 = [I_R 0; 0 0]
        for i in 0..6 {
            for j in 0..5 {
                let want = if i == j && i < 4 { ONE } else { ZERO };
                assert_eq!(f.blocks[0][(i, j)], want);
            }
        }
        // C_3 diagonal scalar blocks
        for i in 0..6 {
            for j in 0..5 {
                if i != j || i >= 4 {
                    assert_eq!(f.blocks[3][(i, j)], ZERO);
                }
            }
        }
        assert_eq!(f.blocks[3][(0, 0)], f.blocks[3][(1, 1)]);
        assert_ne!(f.blocks[3][(0, 0)], f.blocks[3][(2, 2)]);
        // C_1 upper-right R×(N-R) block zero and E lower triangular
        assert_eq!(f.blocks[1][(0, 1)], ZERO);
        assert_eq!(f.blocks[1][(0, 4)], ZERO);
        assert_eq!(t.mu().len(), 2);
        assert_eq!(t.nu()[0], t.e[0][(0, 0)]);
    }

    #[test]
    fn template_validation_rejects_bad_templates() {
        let mut rng = rng_for(4, 3);
        let t = BlockTemplate::sample(4, 5, &TemplateOptions::default(), &mut rng).unwrap();
        let mut bad = t.clone();
        bad.partition = vec![4];
        assert!(bad.validate(4, 5).is_err());
        let mut bad = t.clone();
        bad.lambda[0] = vec![1.0, 1.0];
        assert!(bad.validate(4, 5).is_err());
        let mut bad = t.clone();
        bad.e[0][(0, 1)] = ONE;
        assert!(bad.validate(4, 5).is_err());
        let mut bad = t;
        for w in bad.w.iter_mut() {
            w.fill(ZERO);
        }
        assert!(bad.validate(4, 5).is_err());
    }

    #[test]
    fn template_state_labels() {
        let g = gen_b_irreducible_template(4, 4, 1, &TemplateOptions::default(), pol()).unwrap();
        assert_eq!(g.state.rank(), 5);
        assert_eq!(g.state.local_ranks(), (4, 4));
        assert!(g.labels.npt);
        assert_eq!(g.labels.b_reducible, Some(false));
        verify_labels(&g).unwrap();
    }

    #[test]
    fn ppt_rank_n_family() {
        let g = gen_ppt_rank_n(2, 2, 1, pol()).unwrap();
        assert_eq!(g.state.rank(), 2);
        assert!(!g.labels.npt);
        let g = gen_ppt_rank_n(2, 3, 1, pol()).unwrap();
        assert_eq!(g.state.local_ranks(), (2, 3));
        assert!(gen_ppt_rank_n(3, 2, 1, pol()).is_err());
    }

    #[test]
    fn persist_writes_fixture_and_labels() {
        let dir = std::env::temp_dir().join(format!("distill-gen-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        let g = gen_random(2, 3, 2, 7, pol()).unwrap();
        let path = persist(&g, &dir).unwrap();
        assert!(path.ends_with("random/M2-N3-r2-7.qsf.json"));
        let loaded = load_state(&std::fs::read(&path).unwrap(), false, pol()).unwrap();
        assert!((loaded.state.matrix() - g.state.matrix()).norm() < 1e-15);
        let labels: BTreeMap<String, Labels> =
            serde_json::from_slice(&std::fs::read(dir.join("labels.json")).unwrap()).unwrap();
        assert_eq!(labels["random/M2-N3-r2-7.qsf.json"], g.labels);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
