use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use distill_core::gen::{self, Generated, TemplateOptions};
use distill_core::normal_forms::{cc_normal_form, ppt_rank_n_canonical, sr3_tridiagonal_form, sr3_two_by_n_realify};
use distill_core::numkernel::{serde_matrix, ComplexMatrix};
use distill_core::schmidt::{operator_schmidt, schmidt_rank};
use distill_core::state_core::{load_state, write_state};
use distill_core::structure::{a_decompose, b_decompose, DecompositionTree};
use distill_core::suites::{run_suite, SUITES};
use distill_core::witness::{decide, is_npt, search_witness, Budget};
use distill_core::{BipartiteState, Error, TolerancePolicy};

const SCHEMA: &str = "report-1";

const EXIT_INPUT: u8 = 2;
const EXIT_CONTRACT: u8 = 3;
const EXIT_SUITE: u8 = 4;

#[derive(Parser)]
#[command(name = "distill", version, about = "Entanglement distillability analysis of bipartite density matrices")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct GlobalOpts {
    /// Pretty-print the JSON report.
    #[arg(long, global = true)]
    human: bool,
    /// Include wall-clock timings (makes the report non-reproducible).
    #[arg(long, global = true)]
    timings: bool,
    /// Worker threads for restart searches; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value_t = 64)]
    restarts: usize,
    #[arg(long = "max-iters", global = true, default_value_t = 500)]
    max_iters: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Full analysis: ranks, PPT test and a distillability verdict.
    Analyze { path: PathBuf },
    /// Restarted search for a distillation witness.
    Witness {
        path: PathBuf,
        #[arg(long, default_value_t = 1)]
        copies: usize,
    },
    /// Operator Schmidt decomposition.
    Schmidt { path: PathBuf },
    /// Direct-sum decomposition on one side.
    Decompose {
        path: PathBuf,
        #[arg(long, value_enum, default_value_t = SideArg::B)]
        side: SideArg,
    },
    /// Local-equivalence normal forms.
    NormalForm {
        path: PathBuf,
        #[arg(long, value_enum)]
        form: FormArg,
        /// Angle grid for the Schmidt-rank-3 search.
        #[arg(long, default_value_t = 64)]
        grid: usize,
    },
    /// Generate a labelled fixture.
    Generate {
        #[arg(value_enum)]
        family: Family,
        #[arg(long = "M", default_value_t = 3)]
        m: usize,
        #[arg(long = "N", default_value_t = 3)]
        n: usize,
        /// Matrix rank for `random`.
        #[arg(long)]
        rank: Option<usize>,
        /// Schmidt rank for `schmidt-rank`.
        #[arg(long, default_value_t = 2)]
        sr: usize,
        /// Only accept NPT samples (`schmidt-rank`).
        #[arg(long)]
        npt: bool,
        /// Corpus directory; without it the state is printed as qsf-1.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a property suite.
    Verify {
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    A,
    B,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormArg {
    Cc,
    Sr3,
    PptRankN,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Random,
    SchmidtRank,
    BReducible,
    BIrreducibleTemplate,
    PptRankN,
}

enum Failure {
    Input(String),
    Contract(String),
    Suite(Value),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Contract(e.to_string())
        }
    }
}

fn tolerance_from_env() -> Result<TolerancePolicy, Failure> {
    let mut pol = TolerancePolicy::default();
    if let Ok(v) = std::env::var("QSF_TOLERANCE") {
        let r: f64 = v
            .trim()
            .parse()
            .map_err(|_| Failure::Input(format!("QSF_TOLERANCE={v:?} is not a number")))?;
        pol = TolerancePolicy::new(r, pol.zero_atol).map_err(|e| Failure::Input(e.to_string()))?;
    }
    Ok(pol)
}

fn load(path: &Path, pol: TolerancePolicy) -> Result<BipartiteState, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    Ok(load_state(&bytes, true, pol)?.state)
}

#[derive(Serialize)]
struct Embedded {
    dims: (usize, usize),
    #[serde(with = "serde_matrix")]
    matrix: ComplexMatrix,
}

fn tree_json(tree: &DecompositionTree, dims: (usize, usize)) -> Result<Value, Failure> {
    let mut children = Vec::new();
    for t in 0..tree.children.len() {
        let c = &tree.children[t];
        children.push(json!({
            "child": Embedded { dims: c.state.dims(), matrix: c.state.matrix().clone() },
            "embedded": Embedded { dims, matrix: tree.embed(t)? },
        }));
    }
    Ok(json!({
        "side": tree.side,
        "pass": tree.pass,
        "reducible": tree.is_reducible(),
        "commutant_dim": tree.commutant_dim,
        "children": children,
    }))
}

fn generated_json(g: &Generated, out: Option<&Path>) -> Result<Value, Failure> {
    let mut v = json!({
        "labels": g.labels,
        "acceptance": g.stats,
        "acceptance_rate": g.stats.rate(),
    });
    match out {
        Some(dir) => {
            let path = gen::persist(g, dir)?;
            v["path"] = json!(path.to_string_lossy());
        }
        None => {
            let text = write_state(&g.state, g.factor.as_ref());
            let doc: Value = serde_json::from_str(&text).map_err(|e| Failure::Contract(e.to_string()))?;
            v["state"] = doc;
        }
    }
    Ok(v)
}

fn run(cli: &Cli) -> Result<(Value, Value), Failure> {
    let g = &cli.global;
    let pol = tolerance_from_env()?;
    let budget = Budget {
        restarts: g.restarts,
        max_iters: g.max_iters,
        seed: g.seed,
        ..Budget::default()
    };
    budget.validate().map_err(|e| Failure::Input(e.to_string()))?;
    let input = |p: &Path| json!({ "path": p.to_string_lossy() });
    Ok(match &cli.command {
        Command::Analyze { path } => {
            let st = load(path, pol)?;
            let npt = is_npt(&st);
            let verdict = decide(&st, &budget)?;
            let result = json!({
                "dims": st.dims(),
                "rank": st.rank(),
                "local_ranks": st.local_ranks(),
                "schmidt_rank": schmidt_rank(&st),
                "ppt": !npt.npt,
                "min_pt_eigenvalue": npt.min_eigenvalue,
                "verdict": verdict,
            });
            (input(path), result)
        }
        Command::Witness { path, copies } => {
            let st = load(path, pol)?;
            let out = search_witness(&st, *copies, &budget)?;
            (input(path), serde_json::to_value(out).map_err(|e| Failure::Contract(e.to_string()))?)
        }
        Command::Schmidt { path } => {
            let st = load(path, pol)?;
            let dec = operator_schmidt(&st, true)?;
            let result = json!({
                "schmidt_rank": dec.rank(),
                "margin": dec.margin(),
                "decomposition": dec,
            });
            (input(path), result)
        }
        Command::Decompose { path, side } => {
            let st = load(path, pol)?;
            let tree = match side {
                SideArg::A => a_decompose(&st)?,
                SideArg::B => b_decompose(&st)?,
            };
            (input(path), tree_json(&tree, st.dims())?)
        }
        Command::NormalForm { path, form, grid } => {
            let st = load(path, pol)?;
            let result = match form {
                FormArg::Cc => json!({ "form": "cc", "result": cc_normal_form(&st)? }),
                FormArg::Sr3 if st.dim_a() == 2 => json!({ "form": "sr3", "result": sr3_two_by_n_realify(&st)? }),
                FormArg::Sr3 => json!({ "form": "sr3", "result": sr3_tridiagonal_form(&st, *grid)? }),
                FormArg::PptRankN => json!({ "form": "ppt-rank-n", "result": ppt_rank_n_canonical(&st)? }),
            };
            (input(path), result)
        }
        Command::Generate { family, m, n, rank, sr, npt, out } => {
            let (m, n, seed) = (*m, *n, g.seed);
            let generated = match family {
                Family::Random => gen::gen_random(m, n, rank.unwrap_or(m * n), seed, pol)?,
                Family::SchmidtRank => gen::gen_schmidt_rank(m, n, *sr, seed, *npt, pol)?,
                Family::BIrreducibleTemplate => {
                    gen::gen_b_irreducible_template(m, n, seed, &TemplateOptions::default(), pol)?
                }
                Family::PptRankN => gen::gen_ppt_rank_n(m, n, seed, pol)?,
                Family::BReducible => {
                    if n < 2 {
                        return Err(Failure::Input("b-reducible needs N >= 2".into()));
                    }
                    gen::gen_b_reducible_pair(m, n / 2, n - n / 2, seed, pol)?
                }
            };
            let input = json!({ "family": family_name(*family), "M": m, "N": n, "seed": seed });
            (input, generated_json(&generated, out.as_deref())?)
        }
        Command::Verify { suite, trials } => {
            if !SUITES.contains(&suite.as_str()) {
                return Err(Failure::Input(format!(
                    "unknown suite {suite:?}; known suites: {}",
                    SUITES.join(", ")
                )));
            }
            let rep = run_suite(suite, *trials, g.seed)?;
            let passed = rep.passed();
            let mut result = serde_json::to_value(&rep).map_err(|e| Failure::Contract(e.to_string()))?;
            result["passed"] = json!(passed);
            let input = json!({ "suite": suite, "trials": trials, "seed": g.seed });
            if !passed {
                return Err(Failure::Suite(json!({ "input": input, "result": result })));
            }
            (input, result)
        }
    })
}

fn family_name(f: Family) -> &'static str {
    match f {
        Family::Random => "random",
        Family::SchmidtRank => "schmidt-rank",
        Family::BReducible => "b-reducible",
        Family::BIrreducibleTemplate => "b-irreducible-template",
        Family::PptRankN => "ppt-rank-n",
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Analyze { .. } => "analyze",
        Command::Witness { .. } => "witness",
        Command::Schmidt { .. } => "schmidt",
        Command::Decompose { .. } => "decompose",
        Command::NormalForm { .. } => "normal-form",
        Command::Generate { .. } => "generate",
        Command::Verify { .. } => "verify",
    }
}

fn emit(v: &Value, human: bool) {
    let text = if human {
        serde_json::to_string_pretty(v)
    } else {
        serde_json::to_string(v)
    };
    let mut out = std::io::stdout().lock();
    // a closed pipe downstream is not an analysis failure
    let _ = writeln!(out, "{}", text.expect("report serializes"));
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.global.threads > 0 {
        // only fails when a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.global.threads)
            .build_global();
    }
    let start = Instant::now();
    let outcome = run(&cli);
    let elapsed = start.elapsed().as_secs_f64();
    let pol = tolerance_from_env().unwrap_or_default();
    let header = |status: &str| {
        let mut v = json!({
            "schema": SCHEMA,
            "tool": { "name": "distill", "version": env!("CARGO_PKG_VERSION") },
            "command": command_name(&cli.command),
            "status": status,
            "tolerance": { "rank_rtol": pol.rank_rtol, "zero_atol": pol.zero_atol },
            "budget": { "seed": cli.global.seed, "restarts": cli.global.restarts, "max_iters": cli.global.max_iters },
        });
        if cli.global.timings {
            v["timings"] = json!({ "total_secs": elapsed });
        }
        v
    };
    match outcome {
        Ok((input, result)) => {
            let mut v = header("ok");
            v["input"] = input;
            v["result"] = result;
            emit(&v, cli.global.human);
            ExitCode::SUCCESS
        }
        Err(Failure::Suite(body)) => {
            let mut v = header("suite-failure");
            v["input"] = body["input"].clone();
            v["result"] = body["result"].clone();
            emit(&v, cli.global.human);
            ExitCode::from(EXIT_SUITE)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INPUT)
        }
        Err(Failure::Contract(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONTRACT)
        }
    }
}
