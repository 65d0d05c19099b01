//! `lasermm`: exponent bounds for the Coppersmith-Winograd tensor family.
//!
//! Exit status is 0 on success, 1 when a computation or check fails and 2 on
//! a usage error.

mod config;
mod tables;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lasermm::identity::{verify_cw_identity, Tamper};
use lasermm::oracle::{brute_vcw, validate_coherence_lemma, verify_witness, OracleLimits};
use lasermm::partition::build_cw;
use lasermm::values::{
    clear_cache, omega_bound_laser, omega_limit_merging, schonhage_example, BoundReport, Mode, ValueContext,
    CACHE_FILE_NAME, SCHEMA_VERSION,
};
use serde_json::json;

use config::{ConfigFile, SolverOverrides};
use tables::{GridSpec, TableMethod};

/// Invalid arguments or configuration; reported with exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const DEFAULT_LOWER_DEPTH: u32 = 3;
const DEFAULT_MERGING_DEPTH: u32 = 4;

#[derive(Parser)]
#[command(name = "lasermm", version, about = "Laser-method and merging bounds on the matrix multiplication exponent")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
struct Common {
    /// Flat `key = value` file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory of the value cache (also read from LASERMM_CACHE_DIR).
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Starting points for the penalized lower-bound maximization.
    #[arg(long, global = true)]
    restarts: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    gap_tolerance: Option<f64>,
    #[arg(long, global = true)]
    bisection_width: Option<f64>,
    #[arg(long, global = true)]
    max_iterations: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TableFormat {
    Table,
    Csv,
    Json,
}

impl std::str::FromStr for TableFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        <TableFormat as ValueEnum>::from_str(s.trim(), true)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TamperArg {
    None,
    FlipSign,
    PerturbScalar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum BoundMethod {
    LaserLower,
    LaserUpper,
    MergingUb,
}

#[derive(Subcommand)]
enum Command {
    /// Expand the border-rank identity for tcw(q) exactly and check it.
    VerifyIdentity {
        #[arg(long)]
        q: u32,
        /// Perturb the identity as a negative control.
        #[arg(long, value_enum, default_value = "none")]
        tamper: TamperArg,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Solve one exponent bound on r canonical squarings of tcw(q).
    Bound {
        #[arg(long)]
        q: u32,
        #[arg(long, default_value_t = 0)]
        r: u32,
        #[arg(long, value_enum)]
        method: BoundMethod,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Compute the grid of laser and merging bounds.
    ReproduceTables(TablesArgs),
    /// Exhaustive finite-power checks.
    Oracle {
        #[command(subcommand)]
        command: OracleCommand,
    },
    /// Inspect or clear the value cache.
    Cache {
        #[command(subcommand)]
        command: CacheCommand,
    },
    /// Solve 16^(w/3) + 9^(w/3) = 17.
    Schonhage {
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

#[derive(Args, Debug)]
struct TablesArgs {
    #[arg(long)]
    q_min: Option<u32>,
    #[arg(long)]
    q_max: Option<u32>,
    #[arg(long)]
    r_min: Option<u32>,
    /// Largest power exponent; below `--r-min` gives an empty grid.
    #[arg(long)]
    r_max: Option<u32>,
    /// Comma-separated rows: laser-lower, merging-ub.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<TableMethod>>,
    #[arg(long)]
    format: Option<TableFormat>,
    /// Write to this file instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Deepest r computed for laser-lower; deeper cells are skipped.
    #[arg(long)]
    lower_depth: Option<u32>,
    /// Deepest r computed for merging-ub; deeper cells are skipped.
    #[arg(long)]
    merging_depth: Option<u32>,
    /// Record wall-clock seconds (off by default so output is reproducible).
    #[arg(long)]
    timings: bool,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Exact partition-restricted value of the N-th power of tcw(q).
    Vcw {
        #[arg(long)]
        q: u32,
        #[arg(long, default_value_t = 1)]
        n: u32,
        #[arg(long)]
        rho: f64,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Check that consistent merge sets of zero-sequences are coherent.
    Coherence {
        #[arg(long)]
        q: u32,
        #[arg(long, default_value_t = 1)]
        n: u32,
        #[arg(long, default_value_t = 3)]
        max_size: usize,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

#[derive(Subcommand)]
enum CacheCommand {
    Show,
    Clear,
}

struct Env {
    file: ConfigFile,
    common: Common,
}

impl Env {
    fn context(&self) -> Result<ValueContext> {
        let opts = SolverOverrides {
            restarts: self.common.restarts,
            seed: self.common.seed,
            gap_tolerance: self.common.gap_tolerance,
            bisection_width: self.common.bisection_width,
            max_iterations: self.common.max_iterations,
        }
        .resolve(&self.file)?;
        match config::cache_dir(&self.file, self.common.cache_dir.clone())? {
            Some(dir) => Ok(ValueContext::with_cache_dir(opts, &dir)?),
            None => Ok(ValueContext::new(opts)),
        }
    }

    fn depth(&self, key: &str, flag: Option<u32>, default: u32) -> Result<u32> {
        Ok(self.file.pick(key, flag)?.unwrap_or(default))
    }
}

fn require_q(q: u32) -> Result<()> {
    if q == 0 {
        bail!(UsageError("q must be at least 1".into()));
    }
    Ok(())
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn print_bound(rep: &BoundReport, format: Format) -> Result<()> {
    match format {
        Format::Json => print_json(rep)?,
        Format::Text => {
            let q = rep.q.map(|q| format!("q={q} ")).unwrap_or_default();
            let r = rep.r.map(|r| format!("r={r} ")).unwrap_or_default();
            println!("{q}{r}method={} rho={:.7} target={}", rep.method, rep.rho, rep.target);
            if let Some(note) = rep.diagnostics.get("clamped") {
                println!("note: {}", note.as_str().unwrap_or_default());
            }
        }
    }
    Ok(())
}

fn cmd_verify_identity(q: u32, tamper: TamperArg, format: Format) -> Result<ExitCode> {
    require_q(q)?;
    let tamper = match tamper {
        TamperArg::None => Tamper::None,
        TamperArg::FlipSign => Tamper::FlipSign,
        TamperArg::PerturbScalar => Tamper::PerturbScalar,
    };
    let rep = verify_cw_identity(q, tamper);
    match format {
        Format::Json => print_json(&rep)?,
        Format::Text if rep.passed => {
            println!("tcw({q}): border-rank identity verified with {} rank-one terms", rep.rank_one_terms)
        }
        Format::Text => println!(
            "tcw({q}): identity FAILED at epsilon degree {}: {}",
            rep.first_mismatch_degree.map(|d| d.to_string()).unwrap_or_else(|| "?".into()),
            rep.detail
        ),
    }
    Ok(if rep.passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_bound(env: &Env, q: u32, r: u32, method: BoundMethod, format: Format) -> Result<ExitCode> {
    require_q(q)?;
    let (key, default) = match method {
        BoundMethod::LaserLower => ("lower_depth", DEFAULT_LOWER_DEPTH),
        _ => ("merging_depth", DEFAULT_MERGING_DEPTH),
    };
    let depth = env.depth(key, None, default)?;
    if r > depth {
        bail!(UsageError(format!("r = {r} exceeds the configured depth {depth} for this method")));
    }
    let ctx = env.context()?;
    let rep = match method {
        BoundMethod::LaserLower => omega_bound_laser(&ctx, q, r, Mode::Lower)?,
        BoundMethod::LaserUpper => omega_bound_laser(&ctx, q, r, Mode::Upper)?,
        BoundMethod::MergingUb => omega_limit_merging(&ctx, q, r)?,
    };
    print_bound(&rep, format)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_reproduce_tables(env: &Env, a: &TablesArgs) -> Result<ExitCode> {
    let f = &env.file;
    let q_min = f.pick("q_min", a.q_min)?.unwrap_or(1);
    let q_max = f.pick("q_max", a.q_max)?.unwrap_or(8);
    let r_min = f.pick("r_min", a.r_min)?.unwrap_or(0);
    let r_max = f.pick("r_max", a.r_max)?.unwrap_or(2);
    if q_min == 0 || q_min > q_max {
        bail!(UsageError(format!("q range {q_min}..={q_max} must be non-empty and start at 1 or more")));
    }
    let methods = match &a.methods {
        Some(m) => m.clone(),
        None => match f.pick::<String>("methods", None)? {
            Some(s) => s
                .split(',')
                .map(|x| x.parse::<TableMethod>().map_err(|e| UsageError(format!("config key methods: {e}")).into()))
                .collect::<Result<Vec<_>>>()?,
            None => vec![TableMethod::LaserLower, TableMethod::MergingUb],
        },
    };
    if methods.is_empty() {
        bail!(UsageError("at least one method is required".into()));
    }
    let jobs = f.pick("jobs", a.jobs)?.unwrap_or(1);
    if jobs == 0 {
        bail!(UsageError("jobs must be at least 1".into()));
    }
    let format = f.pick("format", a.format)?.unwrap_or(TableFormat::Table);
    let timings = a.timings || f.pick::<bool>("timings", None)?.unwrap_or(false);
    let spec = GridSpec {
        qs: (q_min..=q_max).collect(),
        rs: (r_min..=r_max).collect(),
        methods,
        lower_depth: env.depth("lower_depth", a.lower_depth, DEFAULT_LOWER_DEPTH)?,
        merging_depth: env.depth("merging_depth", a.merging_depth, DEFAULT_MERGING_DEPTH)?,
        timings,
    };
    let ctx = env.context()?;
    let cells = tables::run_grid(&ctx, &spec, jobs)?;
    let text = match format {
        TableFormat::Table => tables::render_table(&cells, &spec),
        TableFormat::Csv => tables::render_csv(&cells)?,
        TableFormat::Json => tables::render_json(&cells)?,
    };
    match f.pick::<PathBuf>("out", a.out.clone())? {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    let failed = cells.iter().filter(|c| c.status == tables::Status::Error).count();
    if failed > 0 {
        for c in cells.iter().filter(|c| c.status == tables::Status::Error) {
            eprintln!("error: q={} r={} {}: {}", c.q, c.r, c.method, c.error.as_deref().unwrap_or(""));
        }
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_oracle(env: &Env, command: &OracleCommand) -> Result<ExitCode> {
    let limits = OracleLimits::default();
    match *command {
        OracleCommand::Vcw { q, n, rho, format } => {
            require_q(q)?;
            if !(2.0..=3.0).contains(&rho) {
                bail!(UsageError("rho must lie in [2, 3]".into()));
            }
            let ctx = env.context()?;
            let t = build_cw(q)?;
            let res = brute_vcw(&ctx, &t, rho, n, &limits)?;
            let verified = verify_witness(&t, &res)?;
            match format {
                Format::Json => {
                    let mut v = serde_json::to_value(&res)?;
                    v["schema_version"] = json!(SCHEMA_VERSION);
                    v["kind"] = json!("oracle-vcw");
                    v["q"] = json!(q);
                    v["witness_verified"] = json!(verified);
                    print_json(&v)?;
                }
                Format::Text => {
                    let show = |s: &[Vec<u32>]| {
                        s.iter().map(|t| t.iter().map(|i| i.to_string()).collect::<String>()).collect::<Vec<_>>().join(",")
                    };
                    println!("tcw({q}) N={n} rho={rho}: value={:.12}", res.value);
                    println!("A={{{}}} B={{{}}} C={{{}}}", show(&res.a), show(&res.b), show(&res.c));
                    let surv: Vec<String> = res.survivors.iter().map(|s| s.compact()).collect();
                    println!("survivors: {}", surv.join(" "));
                    println!("witness strongly disjoint: {}", if verified { "yes" } else { "NO" });
                }
            }
            Ok(if verified { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        OracleCommand::Coherence { q, n, max_size, format } => {
            require_q(q)?;
            let rep = validate_coherence_lemma(&build_cw(q)?, n, max_size, &limits)?;
            match format {
                Format::Json => {
                    let mut v = serde_json::to_value(&rep)?;
                    v["schema_version"] = json!(SCHEMA_VERSION);
                    v["kind"] = json!("oracle-coherence");
                    print_json(&v)?;
                }
                Format::Text => {
                    println!(
                        "tcw({q}) N={n} sets up to {max_size}: {} zero-sequences, {} sets checked, {} consistent ({} with two or more members), {} violations",
                        rep.zero_sequences,
                        rep.sets_checked,
                        rep.consistent_sets,
                        rep.nontrivial_consistent_sets,
                        rep.violations.len()
                    );
                    for v in &rep.violations {
                        let s: Vec<String> = v.iter().map(|t| t.compact()).collect();
                        println!("violation: {{{}}}", s.join(", "));
                    }
                }
            }
            Ok(if rep.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}

fn cmd_cache(env: &Env, command: &CacheCommand) -> Result<ExitCode> {
    let Some(dir) = config::cache_dir(&env.file, env.common.cache_dir.clone())? else {
        println!("no cache directory configured (use --cache-dir or {})", config::CACHE_DIR_ENV);
        return Ok(ExitCode::SUCCESS);
    };
    match command {
        CacheCommand::Show => {
            let path = dir.join(CACHE_FILE_NAME);
            if path.exists() {
                let ctx = ValueContext::with_cache_dir(Default::default(), &dir)?;
                let bytes = std::fs::metadata(&path)?.len();
                println!("{}: {} entries, {bytes} bytes", path.display(), ctx.memo_len());
            } else {
                println!("{}: empty", path.display());
            }
        }
        CacheCommand::Clear => {
            if clear_cache(&dir)? {
                println!("removed {}", dir.join(CACHE_FILE_NAME).display());
            } else {
                println!("nothing to remove in {}", dir.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let file = match &cli.common.config {
        Some(p) => ConfigFile::load(p).map_err(|e| UsageError(format!("{e:#}")))?,
        None => ConfigFile::default(),
    };
    let env = Env { file, common: cli.common };
    match &cli.command {
        Command::VerifyIdentity { q, tamper, format } => cmd_verify_identity(*q, *tamper, *format),
        Command::Bound { q, r, method, format } => cmd_bound(&env, *q, *r, *method, *format),
        Command::ReproduceTables(a) => cmd_reproduce_tables(&env, a),
        Command::Oracle { command } => cmd_oracle(&env, command),
        Command::Cache { command } => cmd_cache(&env, command),
        Command::Schonhage { format } => {
            print_bound(&schonhage_example()?, *format)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
