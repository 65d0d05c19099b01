//! The (q, r, method) grid of exponent bounds and its renderings.

use std::fmt::Write as _;
use std::time::Instant;

use anyhow::Result;
use clap::ValueEnum;
use lasermm::values::{omega_bound_laser, omega_limit_merging, target, BoundReport, Method, Mode, ValueContext};
use rayon::prelude::*;
use serde::Serialize;

/// The two rows of the table for each q.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableMethod {
    /// Laser method with the compatibility penalty (L.M.).
    LaserLower,
    /// Upper bound on the laser method with merging (L.M.M.).
    MergingUb,
}

impl TableMethod {
    pub fn tag(self) -> &'static str {
        match self {
            TableMethod::LaserLower => Method::LaserLower.tag(),
            TableMethod::MergingUb => Method::MergingUbGeneral.tag(),
        }
    }

    pub fn row_label(self) -> &'static str {
        match self {
            TableMethod::LaserLower => "L.M.",
            TableMethod::MergingUb => "L.M.M.",
        }
    }
}

impl std::str::FromStr for TableMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        <TableMethod as ValueEnum>::from_str(s.trim(), true)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    Skipped,
    Error,
}

impl Status {
    fn as_str(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Skipped => "skipped",
            Status::Error => "error",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Cell {
    pub q: u32,
    pub r: u32,
    pub method: &'static str,
    pub status: Status,
    pub rho: Option<f64>,
    /// `(q + 2)^{2^r}` as an exact decimal integer.
    pub target: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<BoundReport>,
}

/// Grid extent and per-method depth limits.
#[derive(Clone, Debug)]
pub struct GridSpec {
    pub qs: Vec<u32>,
    pub rs: Vec<u32>,
    pub methods: Vec<TableMethod>,
    pub lower_depth: u32,
    pub merging_depth: u32,
    pub timings: bool,
}

impl GridSpec {
    fn depth(&self, m: TableMethod) -> u32 {
        match m {
            TableMethod::LaserLower => self.lower_depth,
            TableMethod::MergingUb => self.merging_depth,
        }
    }
}

fn compute(ctx: &ValueContext, q: u32, r: u32, m: TableMethod) -> lasermm::Result<BoundReport> {
    match m {
        TableMethod::LaserLower => omega_bound_laser(ctx, q, r, Mode::Lower),
        TableMethod::MergingUb => omega_limit_merging(ctx, q, r),
    }
}

/// Evaluates every cell on a pool of `jobs` workers. The output order is the
/// row-major order of `(q, method, r)` regardless of scheduling.
pub fn run_grid(ctx: &ValueContext, spec: &GridSpec, jobs: usize) -> Result<Vec<Cell>> {
    let mut keys = Vec::new();
    for &q in &spec.qs {
        for &m in &spec.methods {
            for &r in &spec.rs {
                keys.push((q, m, r));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let cells = pool.install(|| {
        keys.par_iter()
            .map(|&(q, m, r)| {
                let tgt = target(q, r).map(|t| t.to_string()).unwrap_or_else(|_| "overflow".into());
                let mut cell = Cell {
                    q,
                    r,
                    method: m.tag(),
                    status: Status::Skipped,
                    rho: None,
                    target: tgt,
                    seconds: None,
                    error: None,
                    report: None,
                };
                if r > spec.depth(m) {
                    return cell;
                }
                let start = Instant::now();
                match compute(ctx, q, r, m) {
                    Ok(mut rep) => {
                        cell.status = Status::Ok;
                        cell.rho = Some(rep.rho);
                        if !spec.timings {
                            rep.seconds = 0.0;
                        }
                        cell.report = Some(rep);
                    }
                    Err(e) => {
                        cell.status = Status::Error;
                        cell.error = Some(e.to_string());
                    }
                }
                if spec.timings {
                    cell.seconds = Some(start.elapsed().as_secs_f64());
                }
                cell
            })
            .collect()
    });
    Ok(cells)
}

fn rho_text(rho: Option<f64>) -> String {
    rho.map(|r| format!("{r:.7}")).unwrap_or_default()
}

pub fn render_csv(cells: &[Cell]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["q", "r", "method", "rho", "target", "status", "seconds"])?;
    for c in cells {
        w.write_record([
            c.q.to_string(),
            c.r.to_string(),
            c.method.to_string(),
            rho_text(c.rho),
            c.target.clone(),
            c.status.as_str().to_string(),
            c.seconds.map(|s| format!("{s:.3}")).unwrap_or_default(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// One line per (q, method) with a column per r, as in the published tables.
pub fn render_table(cells: &[Cell], spec: &GridSpec) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<6}{:<8}", "q", "method");
    for r in &spec.rs {
        let _ = write!(out, "{:>12}", format!("r={r}"));
    }
    out.push('\n');
    for &q in &spec.qs {
        for &m in &spec.methods {
            let _ = write!(out, "{:<6}{:<8}", q, m.row_label());
            for &r in &spec.rs {
                let c = cells.iter().find(|c| c.q == q && c.r == r && c.method == m.tag());
                let text = match c {
                    Some(c) if c.status == Status::Ok => rho_text(c.rho),
                    Some(c) => c.status.as_str().to_string(),
                    None => String::new(),
                };
                let _ = write!(out, "{text:>12}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn render_json(cells: &[Cell]) -> Result<String> {
    Ok(serde_json::to_string_pretty(cells)? + "\n")
}
