//! Seeded property suites over the generator families. Each suite checks a
//! structural statement on many random instances and reports every
//! violation; the CLI `verify` command and the acceptance tests share them.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gen::{
    complex_gaussian, gen_b_irreducible_template, gen_b_reducible, gen_ppt_rank_n, gen_random, gen_schmidt_rank,
    random_invertible, rng_for, TemplateOptions,
};
use crate::normal_forms::{cc_normal_form, ppt_rank_n_canonical, reconstruct_terms};
use crate::numkernel::{self, frob, TolerancePolicy, C64};
use crate::schmidt::schmidt_rank;
use crate::state_core::{BipartiteState, LocalMap};
use crate::structure::{b_decompose, product_vector_in};
use crate::witness::{decide, distill_2xn, is_npt, negdet_search, search_witness, Budget, SubmatrixCertificate, VerdictKind};

pub const SUITES: &[&str] = &[
    "sr2-cc",
    "sr3-undistillable",
    "two-by-n",
    "low-rank",
    "negdet",
    "ppt-rank-n",
    "direct-sum",
    "rank-n-plus-one",
    "product-vectors",
    "invariance",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub trials: usize,
    pub seed: u64,
    pub checked: usize,
    pub failures: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    /// Worst observed value of each monitored quantity.
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip)]
    pub elapsed_secs: f64,
}

impl SuiteReport {
    fn new(suite: &str, trials: usize, seed: u64) -> Self {
        SuiteReport {
            suite: suite.to_string(),
            trials,
            seed,
            checked: 0,
            failures: Vec::new(),
            notes: Vec::new(),
            metrics: BTreeMap::new(),
            elapsed_secs: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }

    fn worst(&mut self, key: &str, value: f64) {
        let e = self.metrics.entry(key.to_string()).or_insert(f64::NEG_INFINITY);
        if value > *e {
            *e = value;
        }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checked += 1;
        if !ok {
            self.failures.push(what());
        }
    }
}

pub fn run_suite(name: &str, trials: usize, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let pol = TolerancePolicy::default();
    let mut rep = SuiteReport::new(name, trials, seed);
    match name {
        "sr2-cc" => sr2_cc(&mut rep, trials, seed, pol)?,
        "sr3-undistillable" => sr3_undistillable(&mut rep, trials, seed, pol)?,
        "two-by-n" => two_by_n(&mut rep, trials, seed, pol)?,
        "low-rank" => low_rank(&mut rep, trials, seed, pol)?,
        "negdet" => negdet(&mut rep, trials, seed, pol)?,
        "ppt-rank-n" => ppt_rank_n(&mut rep, trials, seed, pol)?,
        "direct-sum" => direct_sum(&mut rep, trials, seed, pol)?,
        "rank-n-plus-one" => rank_n_plus_one(&mut rep, trials, seed, pol)?,
        "product-vectors" => product_vectors(&mut rep, trials, seed)?,
        "invariance" => invariance(&mut rep, trials, seed, pol)?,
        other => {
            return Err(Error::Contract(format!(
                "unknown suite {other:?}; known suites: {}",
                SUITES.join(", ")
            )))
        }
    }
    rep.elapsed_secs = start.elapsed().as_secs_f64();
    Ok(rep)
}

fn budget(seed: u64) -> Budget {
    Budget {
        seed,
        ..Budget::default()
    }
}

fn sr2_cc(rep: &mut SuiteReport, trials: usize, seed: u64, pol: TolerancePolicy) -> Result<()> {
    for (m, n) in [(2, 2), (3, 3), (3, 4), (5, 5)] {
        for t in 0..trials {
            let s = seed.wrapping_add(t as u64);
            let st = gen_schmidt_rank(m, n, 2, s, false, pol)?.state;
            let scale = st.norm();
            let form = match cc_normal_form(&st) {
                Ok(f) => f,
                Err(e) => {
                    rep.check(false, || format!("{m}x{n} seed {s}: {e}"));
                    continue;
                }
            };
            let off = form.off_diag_residual / scale;
            rep.worst("off_diagonal_relative", off);
            rep.check(off <= 1e-8, || format!("{m}x{n} seed {s}: off-diagonal {off:.3e}"));
            let lam = is_npt(&st).min_eigenvalue;
            rep.worst("neg_min_eigenvalue", -lam);
            rep.check(lam >= -1e-10, || format!("{m}x{n} seed {s}: λ_min(Γ) = {lam:.3e}"));
            let terms = form.product_decomposition()?;
            let err = frob(&(reconstruct_terms(&terms, m, n) - st.matrix()));
            rep.worst("reconstruction", err);
            rep.check(err <= 1e-8, || format!("{m}x{n} seed {s}: product decomposition off by {err:.3e}"));
        }
    }
    Ok(())
}

/// Accepted fixtures: Schmidt rank three, NPT, both local ranks above two.
fn sr3_fixtures(trials: usize, seed: u64, pol: TolerancePolicy, rep: &mut SuiteReport) -> Vec<BipartiteState> {
    let dims = [(3, 3), (3, 4), (4, 4)];
    let mut out = Vec::new();
    let mut attempts = 0;
    for t in 0..trials {
        let (m, n) = dims[t % dims.len()];
        attempts += 1;
        match gen_schmidt_rank(m, n, 3, seed.wrapping_add(t as u64), true, pol) {
            Ok(g) => {
                let (la, lb) = g.state.local_ranks();
                if la > 2 && lb > 2 && g.labels.npt {
                    out.push(g.state);
                }
            }
            Err(Error::Generation { .. }) => {}
            Err(e) => rep.notes.push(format!("generator error: {e}")),
        }
    }
    if out.len() < 20 {
        rep.notes.push(format!(
            "accepted {} of {attempts} Schmidt-rank-3 NPT fixtures, below the target of 20",
            out.len()
        ));
    }
    out
}

fn sr3_undistillable(rep: &mut SuiteReport, trials: usize, seed: u64, pol: TolerancePolicy) -> Result<()> {
    let fixtures = sr3_fixtures(trials, seed, pol, rep);
    rep.worst("fixtures", fixtures.len() as f64);
    for (k, st) in fixtures.iter().enumerate() {
        let m = st.dim_a();
        let mut rng = rng_for(seed, 0x7333 + k as u64);
        for c in 0..200 {
            let p = complex_gaussian(2, m, &mut rng);
            let proj = st.project_a(&p)?;
            // scale-free check: the projection is renormalized first
            let proj = proj.normalized();
            let lam = is_npt(&proj).min_eigenvalue;
            rep.worst("neg_min_eigenvalue_projected", -lam);
            rep.check(lam >= -1e-9, || format!("fixture {k} projection {c}: λ_min(Γ) = {lam:.3e}"));
        }
        let b = Budget {
            restarts: 256,
            ..budget(seed.wrapping_add(k as u64))
        };
        let out = search_witness(st, 1, &b)?;
        rep.worst("best_search_value", out.best_value);
        rep.check(out.witness.is_none(), || {
            format!("fixture {k}: search found a witness with value {:.3e}", out.best_value)
        });
    }
    Ok(())
}

/// Random NPT state from `gen_random`, resampling the seed.
fn npt_random(m: usize, n: usize, rank: usize, seed: u64, pol: TolerancePolicy) -> Result<BipartiteState> {
    for k in 0..1000u64 {
        let st = gen_random(m, n, rank, seed.wrapping_mul(1000).wrapping_add(k), pol)?.state;
        if is_npt(&st).npt {
            return Ok(st);
        }
    }
    Err(Error::Generation {
        attempts: 1000,
        reason: format!("no NPT {m}x{n} state of rank {rank}"),
    })
}

fn two_by_n(rep: &mut SuiteReport, trials: usize, seed: u64, pol: TolerancePolicy) -> Result<()> {
    let mut rng = rng_for(seed, 0x2b4e);
    for t in 0..trials {
        let n = rng.random_range(2..=5);
        let rank = rng.random_range(1..=2 * n);
        let st = npt_random(2, n, rank, seed.wrapping_add(t as u64), pol)?;
        let lam = is_npt(&st).min_eigenvalue;
        match distill_2xn(&st) {
            Ok(w) => {
                let gap = (w.value - lam).abs();
                rep.worst("value_gap", gap);
                rep.check(gap <= 1e-9, || format!("trial {t} (2x{n}): value {} vs λ_min {lam}", w.value));
                rep.check(w.verify(&st).is_ok(), || format!("trial {t}: witness does not re-verify"));
            }
            Err(e) => rep.check(false, || format!("trial {t} (2x{n}): {e}")),
        }
    }
    Ok(())
}

fn low_rank(rep: &mut SuiteReport, trials: usize, seed: u64, pol: TolerancePolicy) -> Result<()> {
    let mut rng = rng_for(seed, 0x4c52);
    let found = |st: &BipartiteState, s: u64| -> Result<bool> {
        let out = search_witness(st, 1, &budget(s))?;
        Ok(match out.witness {
            Some(w) => w.verify(st).is_ok(),
            None => false,
        })
    };
    for t in 0..trials {
        let (m, n) = loop {
            let m = rng.random_range(2..=5);
            let n = rng.random_range(2..=5);
            if m.max(n) >= 3 {
                break (m, n);
            }
        };
        let rank = rng.random_range(1..m.max(n));
        let s = seed.wrapping_add(t as u64);
        let st = gen_random(m, n, rank, s, pol)?.state;
        let npt = is_npt(&st).npt;
        rep.check(npt, || format!("trial {t}: {m}x{n} rank {rank} state is PPT"));
        if npt {
            rep.check(found(&st, s)?, || format!("trial {t}: no witness for {m}x{n} rank {rank}"));
        }
    }
    for t in 0..trials.div_ceil(2) {
        let m = rng.random_range(2..=5);
        let n = rng.random_range(2..=5);
        let s = seed.wrapping_add(10_000 + t as u64);
        let st = npt_random(m, n, m.max(n), s, pol)?;
        rep.check(found(&st, s)?, || format!("rank-max trial {t}: no witness for {m}x{n}"));
    }
    Ok(())
}

fn check_certificate(rep: &mut SuiteReport, st: &BipartiteState, cert: &SubmatrixCertificate, label: &str) {
    let lam = st
        .project_a(&cert.projector)
        .map(|p| is_npt(&p).min_eigenvalue)
        .unwrap_or(f64::INFINITY);
    rep.worst("projected_min_eigenvalue", lam);
    rep.check(lam <= -1e-10, || format!("{label}: projected state has λ_min {lam:.3e}"));
    rep.check(cert.verify(st).is_ok(), || format!("{label}: certificate does not re-verify"));
}

fn negdet(rep: &mut SuiteReport, trials: usize, seed: u64, pol: TolerancePolicy) -> Result<()> {
    let mut hits = 0;
    for t in 0..trials {
        let s = seed.wrapping_add(t as u64);
        let st = npt_random(3, 3, 2 + t % 6, s, pol)?;
        if let Some(cert) = negdet_search(&st, 4) {
            hits += 1;
            check_certificate(rep, &st, &cert, &format!("random trial {t}"));
        }
        let (m, n) = if t % 2 == 0 { (4, 4) } else { (4, 5) };
        let tpl = gen_b_irreducible_template(m, n, s, &TemplateOptions::default(), pol)?.state;
        if let Some(cert) = negdet_search(&tpl, 4) {
            hits += 1;
            check_certificate(rep, &tpl, &cert, &format!("template trial {t}"));
        }
        let ppt = match t % 3 {
            0 => gen_schmidt_rank(3, 3, 2, s, false, pol)?.state,
            1 => gen_ppt_rank_n(2, 4, s, pol)?.state,
            _ => gen_ppt_rank_n(3, 3, s, pol)?.state,
        };
        rep.check(negdet_search(&ppt, 4).is_none(), || format!("PPT trial {t}: certificate returned"));
    }
    rep.worst("certificates", hits as f64);
    Ok(())
}

fn ppt_rank_n(rep: &mut SuiteReport, trials: usize, seed: u64, pol: TolerancePolicy) -> Result<()> {
    let mut rng = rng_for(seed, 0x5052);
    for t in 0..trials {
        let n = rng.random_range(2..=5);
        let m = rng.random_range(2..=n);
        let s = seed.wrapping_add(t as u64);
        let st = gen_ppt_rank_n(m, n, s, pol)?.state;
        match ppt_rank_n_canonical(&st) {
            Ok(f) => {
                let recon = frob(&(reconstruct_terms(&f.product_terms, m, n) - st.matrix()));
                rep.worst("reconstruction", recon);
                rep.worst("normality_defect", f.normality_defect);
                rep.worst("commutator_defect", f.commutator_defect);
                rep.check(recon <= 1e-8, || format!("trial {t} ({m}x{n}): reconstruction {recon:.3e}"));
                rep.check(f.normality_defect <= 1e-9, || {
                    format!("trial {t} ({m}x{n}): normality defect {:.3e}", f.normality_defect)
                });
                rep.check(f.commutator_defect <= 1e-9, || {
                    format!("trial {t} ({m}x{n}): commutator defect {:.3e}", f.commutator_defect)
                });
            }
            Err(e) => rep.check(false, || format!("trial {t} ({m}x{n}): {e}")),
        }
    }
    Ok(())
}

fn direct_sum(rep: &mut SuiteReport, trials: usize, seed: u64, pol: TolerancePolicy) -> Result<()> {
    let mut rng = rng_for(seed, 0x4453);
    for t in 0..trials {
        let s = seed.wrapping_add(t as u64);
        let m = rng.random_range(2..=3);
        let n1 = rng.random_range(2..=3);
        let n2 = rng.random_range(2..=3);
        // an NPT child and a PPT child
        let npt_child = npt_random(m, n1, rng.random_range(2..=m * n1), s, pol)?;
        let ppt_child = gen_schmidt_rank(m, n2, 2, s, false, pol)?.state;
        let (first, second) = if t % 2 == 0 {
            (npt_child.clone(), ppt_child.clone())
        } else {
            (ppt_child.clone(), npt_child.clone())
        };
        let sum = gen_b_reducible(&first, &second)?;
        let (st, inputs) = if t % 4 >= 2 {
            let map = LocalMap::new(
                random_invertible(m, &mut rng),
                random_invertible(n1 + n2, &mut rng),
                &pol,
            )?;
            let k = numkernel::kron(&map.s, &map.w);
            let parts: Vec<_> = [&first, &second]
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let embedded = embed_summand(c, i, first.dim_b(), second.dim_b());
                    &k * embedded * k.adjoint()
                })
                .collect();
            (sum.apply_local(&map, false)?, parts)
        } else {
            let parts = vec![
                embed_summand(&first, 0, first.dim_b(), second.dim_b()),
                embed_summand(&second, 1, first.dim_b(), second.dim_b()),
            ];
            (sum, parts)
        };
        let tree = b_decompose(&st)?;
        let c = tree.children.len();
        if !(2..=8).contains(&c) {
            rep.check(false, || format!("trial {t}: {c} children"));
            continue;
        }
        // a summand may split further, so children are grouped by summand
        let embedded = (0..c).map(|k| tree.embed(k)).collect::<Result<Vec<_>>>()?;
        let scale = st.norm();
        let mut worst = f64::INFINITY;
        for mask in 1..(1u32 << c) - 1 {
            let mut sums = [&inputs[0] * C64::new(0.0, 0.0), &inputs[1] * C64::new(0.0, 0.0)];
            for (k, e) in embedded.iter().enumerate() {
                sums[((mask >> k) & 1) as usize] += e;
            }
            let err = (frob(&(&sums[0] - &inputs[0])) / scale).max(frob(&(&sums[1] - &inputs[1])) / scale);
            worst = worst.min(err);
        }
        rep.worst("child_mismatch", worst);
        rep.check(worst <= 1e-8, || format!("trial {t}: children differ from inputs by {worst:.3e}"));
        let b = budget(s);
        let whole = decide(&st, &b)?;
        let part = decide(&npt_child, &b)?;
        rep.check(whole.kind == part.kind, || {
            format!("trial {t}: composite {:?} vs NPT child {:?}", whole.kind, part.kind)
        });
        if let Some(w) = whole.witness() {
            rep.check(w.verify(&st).is_ok(), || format!("trial {t}: composite witness does not re-verify"));
        }
    }
    Ok(())
}

/// Summand `idx` of a B-direct sum placed in the composite space.
fn embed_summand(st: &BipartiteState, idx: usize, n1: usize, n2: usize) -> numkernel::ComplexMatrix {
    let (m, n) = st.dims();
    let total = n1 + n2;
    let off = if idx == 0 { 0 } else { n1 };
    let mut out = numkernel::ComplexMatrix::zeros(m * total, m * total);
    for a in 0..m {
        for b in 0..n {
            for a2 in 0..m {
                for b2 in 0..n {
                    out[(a * total + off + b, a2 * total + off + b2)] = st.matrix()[(a * n + b, a2 * n + b2)];
                }
            }
        }
    }
    out
}

fn rank_n_plus_one(rep: &mut SuiteReport, trials: usize, seed: u64, pol: TolerancePolicy) -> Result<()> {
    let mut provenance: BTreeMap<String, usize> = BTreeMap::new();
    for t in 0..trials {
        let (m, n) = if t % 2 == 0 { (4, 4) } else { (4, 5) };
        let s = seed.wrapping_add(t as u64);
        let opts = TemplateOptions {
            twist: t % 3 == 1,
            zero_column: t % 5 == 2,
            ..TemplateOptions::default()
        };
        let g = gen_b_irreducible_template(m, n, s, &opts, pol)?;
        let v = decide(&g.state, &budget(s))?;
        *provenance.entry(format!("{:?}", v.provenance)).or_default() += 1;
        let ok = v.kind == VerdictKind::OneDistillable && v.verify(&g.state).is_ok();
        rep.check(ok, || {
            format!(
                "trial {t} ({m}x{n}): {:?} via {:?}{}",
                v.kind,
                v.provenance,
                v.alarm.as_deref().map(|a| format!(" [alarm: {a}]")).unwrap_or_default()
            )
        });
    }
    for (k, c) in provenance {
        rep.notes.push(format!("{k}: {c}"));
    }
    Ok(())
}

fn product_vectors(rep: &mut SuiteReport, trials: usize, seed: u64) -> Result<()> {
    for (m, n) in [(3, 3), (3, 4)] {
        let d = (m - 1) * (n - 1) + 1;
        for t in 0..trials {
            let s = seed.wrapping_add(t as u64);
            let mut rng = rng_for(s, 0x5056 + (m * 10 + n) as u64);
            let frame = numkernel::orthonormal_columns(&complex_gaussian(m * n, d, &mut rng), 1e-8);
            let out = product_vector_in(&frame, (m, n), &budget(s))?;
            rep.worst("best_residual", out.best_residual);
            rep.check(out.hit.as_ref().is_some_and(|h| h.residual <= 1e-9), || {
                format!("{m}x{n} trial {t}: best residual {:.3e}", out.best_residual)
            });
        }
    }
    Ok(())
}

fn invariance(rep: &mut SuiteReport, trials: usize, seed: u64, pol: TolerancePolicy) -> Result<()> {
    for t in 0..trials {
        let s = seed.wrapping_add(t as u64);
        let st = match t % 7 {
            0 => gen_random(3, 3, 4, s, pol)?.state,
            1 => gen_schmidt_rank(3, 3, 2, s, false, pol)?.state,
            2 => npt_random(2, 4, 5, s, pol)?,
            3 => gen_ppt_rank_n(2, 3, s, pol)?.state,
            4 => gen_b_irreducible_template(4, 4, s, &TemplateOptions::default(), pol)?.state,
            5 => {
                let a = npt_random(2, 2, 3, s, pol)?;
                let b = gen_schmidt_rank(2, 2, 2, s, false, pol)?.state;
                gen_b_reducible(&a, &b)?.normalized()
            }
            _ => match gen_schmidt_rank(3, 3, 3, s, true, pol) {
                Ok(g) => g.state,
                Err(_) => gen_random(3, 4, 2, s, pol)?.state,
            },
        };
        let (m, n) = st.dims();
        let mut rng = rng_for(s, 0x4c4d);
        let map = LocalMap::new(random_invertible(m, &mut rng), random_invertible(n, &mut rng), &pol)?;
        let moved = st.apply_local(&map, true)?;
        let b = budget(s);
        let (v0, v1) = (decide(&st, &b)?, decide(&moved, &b)?);
        let same = v0.kind == v1.kind
            && schmidt_rank(&st) == schmidt_rank(&moved)
            && st.rank() == moved.rank()
            && is_npt(&st).npt == is_npt(&moved).npt;
        rep.check(same, || {
            format!(
                "trial {t}: kind {:?}/{:?}, sr {}/{}, rank {}/{}, npt {}/{}",
                v0.kind,
                v1.kind,
                schmidt_rank(&st),
                schmidt_rank(&moved),
                st.rank(),
                moved.rank(),
                is_npt(&st).npt,
                is_npt(&moved).npt
            )
        });
    }
    Ok(())
}
